#include "ocd/metrics.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ocd/error.hpp"
#include "ocd/util.hpp"

namespace ocd {

namespace {

// Average 1-based ranks of `v`, plus the tie-group sizes.
std::vector<double> average_ranks(std::span<const double> v, std::vector<std::size_t>* ties = nullptr) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * double(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        if (ties) ties->push_back(j - i + 1);
        i = j + 1;
    }
    return ranks;
}

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) fail(ErrorCode::ShapeMismatch, "scores and labels differ in length");
    for (auto s : scores)
        if (!std::isfinite(s)) fail(ErrorCode::NonFiniteInput, "non-finite score");
    for (auto y : labels)
        if (y != 0 && y != 1) fail(ErrorCode::LabelOutOfRange, "binary labels must be 0 or 1");
}

} // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels);
    const auto ranks = average_ranks(scores);
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == 1) {
            pos_rank_sum += ranks[i];
            ++n_pos;
        }
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) fail(ErrorCode::SingleClass, "AUROC needs both classes");
    const double u = pos_rank_sum - double(n_pos) * double(n_pos + 1) / 2.0;
    return u / (double(n_pos) * double(n_neg));
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels);
    const auto total_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    if (total_pos == 0) fail(ErrorCode::NoPositives, "AUPRC needs at least one positive");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double ap = 0.0;
    std::size_t tp = 0, seen = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t group_pos = 0, j = i;
        for (; j < order.size() && scores[order[j]] == scores[order[i]]; ++j) group_pos += labels[order[j]] == 1;
        tp += group_pos;
        seen += j - i;
        if (group_pos) ap += double(group_pos) / double(total_pos) * (double(tp) / double(seen));
        i = j;
    }
    return ap;
}

MacroMetrics macro_ovr(std::span<const double> scores, std::size_t k, std::span<const int> labels) {
    if (k < 2) fail(ErrorCode::ShapeMismatch, "one-vs-rest needs at least two classes");
    const std::size_t n = labels.size();
    if (scores.size() != n * k) fail(ErrorCode::ShapeMismatch, "score matrix is not n x k");
    std::vector<std::size_t> counts(k);
    for (auto y : labels) {
        if (y < 0 || std::size_t(y) >= k) fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(y));
        ++counts[std::size_t(y)];
    }
    for (std::size_t c = 0; c < k; ++c)
        if (counts[c] == 0) fail(ErrorCode::MissingClass, "class " + std::to_string(c) + " never occurs");

    MacroMetrics m;
    std::vector<double> column(n);
    std::vector<int> binary(n);
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            column[i] = scores[i * k + c];
            binary[i] = labels[i] == int(c);
        }
        m.auroc.push_back(auroc(column, binary));
        m.auprc.push_back(auprc(column, binary));
    }
    m.macro_auroc = std::accumulate(m.auroc.begin(), m.auroc.end(), 0.0) / double(k);
    m.macro_auprc = std::accumulate(m.auprc.begin(), m.auprc.end(), 0.0) / double(k);
    return m;
}

Interval bootstrap_ci(const MetricFn& metric, std::span<const double> scores, std::size_t cols,
                      std::span<const int> labels, std::size_t n_resamples, double level, std::uint64_t seed) {
    const std::size_t n = labels.size();
    if (n == 0) fail(ErrorCode::EmptySample, "bootstrap over an empty dataset");
    if (cols == 0 || scores.size() != n * cols) fail(ErrorCode::ShapeMismatch, "score matrix is not n x cols");
    if (n_resamples == 0 || !(level > 0.0 && level < 1.0)) fail(ErrorCode::ConfigError, "bad bootstrap settings");

    Interval out;
    std::vector<double> values;
    values.reserve(n_resamples);
    std::vector<double> s(n * cols);
    std::vector<int> y(n);
    const std::size_t max_redraws = 100 * n_resamples;
    for (std::size_t r = 0; r < n_resamples; ++r) {
        auto rng = make_stream({seed, r});
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (;;) {
            for (std::size_t i = 0; i < n; ++i) {
                const auto src = pick(rng);
                std::copy_n(scores.begin() + std::ptrdiff_t(src * cols), cols, s.begin() + std::ptrdiff_t(i * cols));
                y[i] = labels[src];
            }
            try {
                values.push_back(metric(s, y));
                break;
            } catch (const Error& e) {
                const auto c = e.code();
                if (c != ErrorCode::SingleClass && c != ErrorCode::NoPositives && c != ErrorCode::MissingClass) throw;
                if (++out.redraws > max_redraws) fail(ErrorCode::InsufficientLabels, "bootstrap keeps drawing a single class");
            }
        }
    }
    if (out.redraws) spdlog::info("bootstrap redrew {} degenerate resamples", out.redraws);
    std::sort(values.begin(), values.end());
    auto quantile = [&](double q) {
        const double pos = q * double(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (pos - double(lo)) * (values[hi] - values[lo]);
    };
    const double tail = (1.0 - level) / 2.0;
    out.low = quantile(tail);
    out.high = quantile(1.0 - tail);
    return out;
}

MannWhitney mann_whitney_u(std::span<const double> x, std::span<const double> y) {
    const std::size_t n1 = x.size(), n2 = y.size(), n = n1 + n2;
    if (n1 == 0 || n2 == 0) fail(ErrorCode::EmptySample, "Mann-Whitney needs two non-empty samples");
    std::vector<double> all(x.begin(), x.end());
    all.insert(all.end(), y.begin(), y.end());
    for (auto v : all)
        if (!std::isfinite(v)) fail(ErrorCode::NonFiniteInput, "non-finite observation");
    std::vector<std::size_t> ties;
    const auto ranks = average_ranks(all, &ties);
    const double r1 = std::accumulate(ranks.begin(), ranks.begin() + std::ptrdiff_t(n1), 0.0);

    MannWhitney out;
    const double prod = double(n1) * double(n2);
    out.u = r1 - double(n1) * double(n1 + 1) / 2.0;
    const double mu = prod / 2.0;
    double tie_term = 0.0;
    for (auto t : ties) tie_term += double(t) * double(t) * double(t) - double(t);
    const double var = prod / 12.0 * (double(n + 1) - (n > 1 ? tie_term / (double(n) * double(n - 1)) : 0.0));
    if (var > 0.0) {
        const double dev = std::max(std::abs(out.u - mu) - 0.5, 0.0);
        out.z = std::copysign(dev / std::sqrt(var), out.u - mu);
    }

    if (prod <= 400.0) {
        // Doubled ranks are integers even with ties; count subsets of size n1 by doubled rank sum.
        std::vector<std::size_t> r2(n);
        std::size_t total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            r2[i] = static_cast<std::size_t>(std::llround(2.0 * ranks[i]));
            total += r2[i];
        }
        // The smaller sample's rank sum carries the same two-sided p-value.
        const std::size_t m = std::min(n1, n2);
        std::size_t observed = 0;
        for (std::size_t i = n1 <= n2 ? 0 : n1; i < (n1 <= n2 ? n1 : n); ++i) observed += r2[i];
        std::vector<std::vector<double>> ways(m + 1, std::vector<double>(total + 1, 0.0));
        ways[0][0] = 1.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = std::min(i + 1, m); k >= 1; --k)
                for (std::size_t s = total; s >= r2[i]; --s) {
                    ways[k][s] += ways[k - 1][s - r2[i]];
                    if (s == r2[i]) break;
                }
        double below = 0.0, above = 0.0, all_ways = 0.0;
        for (std::size_t s = 0; s <= total; ++s) {
            const double w = ways[m][s];
            all_ways += w;
            if (s <= observed) below += w;
            if (s >= observed) above += w;
        }
        out.p = std::min(1.0, 2.0 * std::min(below, above) / all_ways);
        out.exact = true;
    } else {
        out.p = var > 0.0 ? std::erfc(std::abs(out.z) / std::sqrt(2.0)) : 1.0;
    }
    return out;
}

} // namespace ocd
