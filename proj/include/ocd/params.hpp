#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ocd/tensor.hpp"

namespace ocd::nn {

/// Serialized parameter table plus training metadata.
///
/// File layout (little-endian):
///   "OCDCKPT1" | u32 version | u64 step | u64 seed | u64 config hash |
///   u32 n_meta x (string key, string value) |
///   u32 n_params x (string name, u32 rank, rank x u64 dim, numel x f64)
/// Strings are u32 length followed by bytes.
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> params;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    std::map<std::string, std::string> meta;

    const Tensor* find(const std::string& name) const;
    const Tensor& at(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Ordered, named set of trainable parameters.
class ParamSet {
public:
    Var add(const std::string& name, Tensor init);
    /// Fan-in scaled uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Var add_uniform(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng);

    bool contains(const std::string& name) const;
    const Var& get(const std::string& name) const;
    std::vector<std::pair<std::string, Var>>& entries() noexcept { return entries_; }
    const std::vector<std::pair<std::string, Var>>& entries() const noexcept { return entries_; }
    std::vector<Var> vars() const;
    std::size_t count() const; // total scalar parameters

    void zero_grad();
    /// Deep copy of every value (gradients are not copied).
    ParamSet clone() const;

    Checkpoint to_checkpoint() const;
    /// Copies values for every checkpoint tensor whose name starts with
    /// `prefix` and exists here; returns the number copied. Shapes must agree.
    std::size_t load(const Checkpoint& ckpt, const std::string& prefix = "");
    static ParamSet from_checkpoint(const Checkpoint& ckpt);

private:
    std::vector<std::pair<std::string, Var>> entries_;
    std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
    void step(ParamSet& params);
    std::uint64_t steps() const noexcept { return t_; }

private:
    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

} // namespace ocd::nn
