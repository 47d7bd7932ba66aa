#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ocd/data.hpp"
#include "ocd/encoders.hpp"
#include "ocd/similarity.hpp"
#include "ocd/weight_cache.hpp"

namespace ocd {

struct AugmentConfig {
    double jitter_sigma = 0.1;
    double time_mask_ratio = 0.1;
    double feature_mask_ratio = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Gaussian jitter on observed values, then time masking (all features,
/// indicators included, at round(ratio*T) timesteps), then feature masking
/// (round(ratio*c) value channels at every timestep). Selections are without
/// replacement. Ratios may be 1 here; configs reject it.
VitalsSeries augment(const VitalsSeries& x, const AugmentConfig& cfg, std::mt19937_64& rng);

/// Ontology-weighted NT-Xent averaged over all 2B anchors.
///
/// Rows 0..B-1 of `embeddings` hold the first view of each patient and rows
/// B..2B-1 the second; row i and row i+B form the positive pair. Every view of
/// another patient j is a negative weighted by the patient-level w(i, j).
/// Throws NormViolation unless rows are unit-norm within 1e-9 and
/// AsymmetricWeights unless W is symmetric.
nn::Var ow_ntxent(const nn::Var& embeddings, const WeightMatrix& weights, double temperature);

struct PretrainConfig {
    double temperature = 1.0;
    std::size_t batch_size = 256;
    std::size_t epochs = 50;
    double learning_rate = 1e-4;
    WeightSpec weight_spec = WeightSpec::power(5.0);
    SimilarityKind similarity = SimilarityKind::ontology;
    std::size_t projection_dim = 0; // 0 = model_dim
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const;
};

struct LossRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double loss = 0.0;
};

struct PretrainResult {
    nn::Checkpoint final_checkpoint;
    nn::Checkpoint best_checkpoint; // lowest mean epoch loss
    std::vector<LossRecord> trace;  // loss before each update
    double best_epoch_loss = 0.0;
};

/// Stage-1 loop over pre-normalised series. `weights` must index the same
/// patients in the same order as `series`. The final incomplete batch of
/// each epoch is dropped; a cohort smaller than the batch size trains on
/// full-cohort batches.
PretrainResult pretrain(std::span<const VitalsSeries> series, const CohortWeightCache& weights,
                        const ChannelStats& stats, const EncoderConfig& enc, const PretrainConfig& cfg,
                        const AugmentConfig& aug);

/// Convenience entry point: trains on the bundle's training split with
/// weights computed from its diagnoses.
PretrainResult pretrain(const CohortBundle& bundle, const OntologyTree& tree, const EncoderConfig& enc,
                        const PretrainConfig& cfg, const AugmentConfig& aug);

/// Reads the normalisation statistics stored alongside a checkpoint.
ChannelStats checkpoint_stats(const nn::Checkpoint& ckpt);
void store_stats(nn::Checkpoint& ckpt, const ChannelStats& stats);

/// Training-split channel statistics and normalised series for every patient.
ChannelStats training_stats(const CohortBundle& bundle);
std::vector<VitalsSeries> normalized_series(const CohortBundle& bundle, const ChannelStats& stats);

} // namespace ocd
