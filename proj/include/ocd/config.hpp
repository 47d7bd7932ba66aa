#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ocd/contrastive.hpp"
#include "ocd/distill.hpp"
#include "ocd/evaluation.hpp"
#include "ocd/synth.hpp"

namespace ocd {

struct GridPoint {
    double learning_rate = 0.0;
    double temperature = 0.0;
    double lambda = 0.0;
    double summary_prob = 0.0;
};

/// Sectioned key-value run configuration (INI syntax). Every key has a
/// default; unknown sections or keys are rejected with ConfigError.
class RunConfig {
public:
    RunConfig();

    /// Merges an INI file over the current values.
    void load_file(const std::string& path);
    /// Sets "section.key"; throws ConfigError for unknown keys.
    void set(const std::string& key, const std::string& value);
    /// Parses "section.key=value".
    void set_assignment(const std::string& assignment);
    const std::string& get(const std::string& key) const;
    bool known(const std::string& key) const;

    /// Canonical INI text with every key resolved, in a fixed order.
    std::string to_ini() const;
    /// Digest of every key except run.output_dir and run.threads.
    std::uint64_t hash() const;
    std::string hash_hex() const;

    std::uint64_t seed() const;
    std::string output_dir() const;
    unsigned threads() const;
    Task task() const;

    SynthConfig synth() const;
    /// Input shape comes from the data, the rest from [encoder].
    EncoderConfig encoder(std::size_t channels, std::size_t horizon) const;
    AugmentConfig augment() const;
    PretrainConfig pretrain() const;
    DistillConfig distill() const;
    ProbeConfig probe() const;
    std::size_t eval_resamples() const;
    double eval_level() const;
    std::vector<std::size_t> neighbor_ks() const;
    std::size_t neighbor_random_pairs() const;
    std::size_t weight_bins() const;
    std::uint64_t cache_budget() const;
    std::vector<GridPoint> grid() const;

private:
    double real(const std::string& key) const;
    long long integer(const std::string& key) const;
    std::size_t count(const std::string& key) const;
    std::vector<double> reals(const std::string& key) const;

    std::vector<std::string> order_;
    std::map<std::string, std::string> values_;
};

} // namespace ocd
