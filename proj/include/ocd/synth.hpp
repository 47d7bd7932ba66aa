#pragma once

#include <cstdint>
#include <optional>

#include "ocd/data.hpp"
#include "ocd/ontology.hpp"

namespace ocd {

struct SynthConfig {
    std::size_t n_patients = 500;
    std::size_t n_clusters = 4;
    std::size_t tree_depth = 4;
    std::size_t tree_branching = 4;
    std::size_t codes_per_patient = 4;
    double vitals_signal_strength = 1.0;
    double notes_signal_strength = 3.0;
    double label_noise = 0.1;
    double code_noise = 0.2;    // chance a code is drawn from the whole tree
    double missing_rate = 0.3;
    std::size_t horizon_hours = 24;
    std::size_t channels = 12;
    std::size_t note_dim = 32;
    SplitFractions fractions{};
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthCohort {
    CohortBundle bundle;
    OntologyTree tree;
    std::vector<std::size_t> cluster; // latent cluster per patient
};

/// Tasks written: "mortality" (binary) and "los" (10 classes).
/// Uses `tree` when given, otherwise a balanced tree of the configured shape.
SynthCohort synthesize(const SynthConfig& cfg, const OntologyTree* tree = nullptr);

} // namespace ocd
