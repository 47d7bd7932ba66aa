#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace ocd {

/// Rank-based AUROC with average ranks for ties. Labels are 0/1.
/// Throws SingleClass unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Average precision: scores are visited in descending order with tied
/// scores forming one threshold, and each threshold contributes
/// (new positives / P) * precision. Throws NoPositives.
double auprc(std::span<const double> scores, std::span<const int> labels);

struct MacroMetrics {
    std::vector<double> auroc; // per class
    std::vector<double> auprc;
    double macro_auroc = 0.0;
    double macro_auprc = 0.0;
};

/// One-vs-rest metrics for an n x k row-major score matrix. Throws
/// MissingClass if some class in [0, k) never occurs, LabelOutOfRange for
/// labels outside it.
MacroMetrics macro_ovr(std::span<const double> scores, std::size_t k, std::span<const int> labels);

struct Interval {
    double low = 0.0;
    double high = 0.0;
    std::size_t redraws = 0; // resamples rejected for lacking a class
};

/// Metric over (scores, labels) where scores holds `cols` values per example.
using MetricFn = std::function<double(std::span<const double>, std::span<const int>)>;

/// Percentile bootstrap over examples. Resample r draws from its own stream
/// keyed by (seed, r), so results are reproducible. Resamples on which the
/// metric reports a missing class are redrawn.
Interval bootstrap_ci(const MetricFn& metric, std::span<const double> scores, std::size_t cols,
                      std::span<const int> labels, std::size_t n_resamples = 1000, double level = 0.95,
                      std::uint64_t seed = 0);

struct MannWhitney {
    double u = 0.0;   // for the first sample: #(x > y) + #(x = y) / 2
    double z = 0.0;   // normal approximation with continuity and tie corrections
    double p = 1.0;   // two-sided
    bool exact = false;
};

/// Exact null distribution when n1 * n2 <= 400, normal approximation
/// otherwise. Throws EmptySample.
MannWhitney mann_whitney_u(std::span<const double> x, std::span<const double> y);

} // namespace ocd
