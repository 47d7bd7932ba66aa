#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "ocd/config.hpp"

namespace ocd {

inline constexpr const char* kVersion = "0.1.0";

struct LoadedCohort {
    CohortBundle bundle;
    OntologyTree tree;
};

/// Runs individual stages under one output directory. Every written file
/// carries the config hash: checkpoints in their header, text files in a
/// leading `# config_hash=` line, binary caches in a `.meta` sidecar.
class Pipeline {
public:
    /// Creates the output directory and writes `resolved_config.ini`.
    explicit Pipeline(RunConfig cfg);

    const RunConfig& config() const noexcept { return cfg_; }
    const std::filesystem::path& out() const noexcept { return out_; }

    /// Bundle directory from the argument or [data] bundle; throws MissingInput.
    std::filesystem::path bundle_dir(const std::optional<std::filesystem::path>& given = std::nullopt) const;
    LoadedCohort load(const std::filesystem::path& bundle_dir) const;

    std::filesystem::path synth();
    std::filesystem::path weights(const std::filesystem::path& bundle);
    std::filesystem::path pretrain(const std::filesystem::path& bundle);
    std::filesystem::path teach(const std::filesystem::path& bundle, const std::optional<std::filesystem::path>& init);
    std::filesystem::path distill(const std::filesystem::path& bundle, const std::filesystem::path& teacher,
                                  const std::optional<std::filesystem::path>& init);
    std::filesystem::path finetune(const std::filesystem::path& bundle, const std::optional<std::filesystem::path>& init);
    /// Test-split report for a teacher or student checkpoint: eval_<name>.{txt,csv}.
    std::filesystem::path evaluate(const std::filesystem::path& bundle, const std::filesystem::path& model,
                                   const std::string& name);
    /// Linear probe on frozen embeddings (random encoder when `init` is empty).
    std::filesystem::path probe(const std::filesystem::path& bundle, const std::optional<std::filesystem::path>& init);
    std::filesystem::path neighbors(const std::filesystem::path& bundle, const std::filesystem::path& model);
    /// One subdirectory per configuration plus grid/index.csv. With `dry_run`
    /// only the index of configurations is written. `limit` = 0 runs all.
    std::filesystem::path grid(const std::filesystem::path& bundle, const std::optional<std::filesystem::path>& init,
                               bool dry_run, std::size_t limit = 0);

    /// synth -> pretrain -> teach -> distill -> eval of teacher and student.
    void run_all();

private:
    void write_text(const std::filesystem::path& path, const std::string& body) const;
    void save(const std::filesystem::path& path, nn::Checkpoint ckpt) const;

    RunConfig cfg_;
    std::filesystem::path out_;
};

} // namespace ocd
