#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ocd/data.hpp"
#include "ocd/encoders.hpp"
#include "ocd/metrics.hpp"
#include "ocd/similarity.hpp"

namespace ocd {

struct ClassReport {
    double auroc = 0.0;
    double auprc = 0.0;
};

struct MetricReport {
    std::string task;
    std::size_t n = 0;
    double auroc = 0.0, auroc_low = 0.0, auroc_high = 0.0;
    double auprc = 0.0, auprc_low = 0.0, auprc_high = 0.0;
    std::size_t n_resamples = 0;
    double level = 0.95;
    std::size_t redraws = 0;
    std::vector<ClassReport> per_class; // multiclass tasks only
};

/// Point metrics plus bootstrap intervals. `logits` is [n, outputs]; binary
/// tasks score by the logit, multiclass tasks by the softmax.
MetricReport evaluate_logits(const nn::Tensor& logits, std::span<const int> labels, const Task& task,
                             std::size_t n_resamples = 1000, double level = 0.95, std::uint64_t seed = 0);

/// Human-readable table and delimited text. The delimited form has the header
/// `metric,class,value,ci_low,ci_high` and one row per value.
std::string format_report_table(const MetricReport& r);
std::string format_report_csv(const MetricReport& r);

/// Frozen pooled encoder outputs [n, d] in batches.
nn::Tensor embed(const EncoderConfig& enc, const nn::ParamSet& params, std::span<const VitalsSeries> series,
                 std::size_t batch = 256);

struct ProbeConfig {
    double l2 = 1e-2;
    double learning_rate = 0.5;
    std::size_t iterations = 500;
    std::uint64_t seed = 0;
    std::size_t n_resamples = 1000;
};

struct ProbeResult {
    MetricReport report;
    std::vector<std::size_t> train_indices; // rows of the training matrix used
};

/// Stratified subsample keeping max(1, round(fraction * n_c)) examples of
/// every class c. Throws InsufficientLabels when a class has no examples.
std::vector<std::size_t> stratified_subsample(std::span<const int> labels, int classes, double fraction,
                                              std::uint64_t seed);

/// Logistic regression (softmax for multiclass) by full-batch gradient
/// descent with an L2 penalty, on standardised frozen embeddings.
ProbeResult linear_probe(const nn::Tensor& train_emb, std::span<const int> train_labels, const nn::Tensor& test_emb,
                         std::span<const int> test_labels, const Task& task, double label_fraction,
                         const ProbeConfig& cfg);

struct NeighborAnalysis {
    std::size_t k = 0;
    std::size_t n_knn = 0;
    std::size_t n_random = 0;
    double knn_mean = 0.0;
    double random_mean = 0.0;
    double u = 0.0;
    double z = 0.0;
    double p_value = 1.0;
    double effect_size_r = 0.0;
};

/// Patient similarity of cosine nearest-neighbour pairs against uniformly
/// sampled distinct pairs. Both populations hold unordered pairs without
/// repeats. `n_random_pairs` = 0 matches the neighbour population size.
/// Throws KTooLarge unless k < n.
NeighborAnalysis neighbor_analysis(const nn::Tensor& embeddings, std::span<const DiagnosisSet> sets,
                                   const OntologyTree& tree, std::size_t k, std::size_t n_random_pairs = 0,
                                   std::uint64_t seed = 0);

std::string format_neighbors_csv(std::span<const NeighborAnalysis> rows);

} // namespace ocd
