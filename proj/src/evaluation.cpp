#include "ocd/evaluation.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "ocd/error.hpp"
#include "ocd/util.hpp"

namespace ocd {

using nn::Tensor;
using nn::Var;

namespace {

std::vector<double> softmax_rows(const Tensor& logits) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<double> p(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) m = std::max(m, logits.at(i, c));
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) z += std::exp(logits.at(i, c) - m);
        for (std::size_t c = 0; c < k; ++c) p[i * k + c] = std::exp(logits.at(i, c) - m) / z;
    }
    return p;
}

} // namespace

MetricReport evaluate_logits(const Tensor& logits, std::span<const int> labels, const Task& task,
                             std::size_t n_resamples, double level, std::uint64_t seed) {
    const std::size_t outputs = std::size_t(task.outputs());
    if (logits.rank() != 2 || logits.dim(0) != labels.size() || logits.dim(1) != outputs)
        fail(ErrorCode::ShapeMismatch, "logits do not match labels for task " + task.to_string());
    MetricReport r;
    r.task = task.to_string();
    r.n = labels.size();
    r.n_resamples = n_resamples;
    r.level = level;

    if (task.binary()) {
        std::span<const double> s = logits.values();
        r.auroc = auroc(s, labels);
        r.auprc = auprc(s, labels);
        const auto a = bootstrap_ci([](auto x, auto y) { return auroc(x, y); }, s, 1, labels, n_resamples, level, seed);
        const auto p = bootstrap_ci([](auto x, auto y) { return auprc(x, y); }, s, 1, labels, n_resamples, level, seed);
        r.auroc_low = a.low, r.auroc_high = a.high;
        r.auprc_low = p.low, r.auprc_high = p.high;
        r.redraws = a.redraws + p.redraws;
        return r;
    }
    const auto probs = softmax_rows(logits);
    const auto m = macro_ovr(probs, outputs, labels);
    r.auroc = m.macro_auroc;
    r.auprc = m.macro_auprc;
    for (std::size_t c = 0; c < outputs; ++c) r.per_class.push_back({m.auroc[c], m.auprc[c]});
    const auto a = bootstrap_ci([outputs](auto x, auto y) { return macro_ovr(x, outputs, y).macro_auroc; }, probs,
                                outputs, labels, n_resamples, level, seed);
    const auto p = bootstrap_ci([outputs](auto x, auto y) { return macro_ovr(x, outputs, y).macro_auprc; }, probs,
                                outputs, labels, n_resamples, level, seed);
    r.auroc_low = a.low, r.auroc_high = a.high;
    r.auprc_low = p.low, r.auprc_high = p.high;
    r.redraws = a.redraws + p.redraws;
    return r;
}

std::string format_report_table(const MetricReport& r) {
    std::string out = fmt::format("task {}  n={}  bootstrap resamples={}\n", r.task, r.n, r.n_resamples);
    out += fmt::format("{:<8} {:>8} {:>17}\n", "metric", "value", fmt::format("{:g}% interval", 100.0 * r.level));
    out += fmt::format("{:<8} {:>8.4f}  [{:.4f}, {:.4f}]\n", "AUROC", r.auroc, r.auroc_low, r.auroc_high);
    out += fmt::format("{:<8} {:>8.4f}  [{:.4f}, {:.4f}]\n", "AUPRC", r.auprc, r.auprc_low, r.auprc_high);
    for (std::size_t c = 0; c < r.per_class.size(); ++c)
        out += fmt::format("  class {:<3} AUROC {:.4f}  AUPRC {:.4f}\n", c, r.per_class[c].auroc, r.per_class[c].auprc);
    return out;
}

std::string format_report_csv(const MetricReport& r) {
    std::string out = "metric,class,value,ci_low,ci_high\n";
    out += fmt::format("auroc,macro,{},{},{}\n", format_real(r.auroc), format_real(r.auroc_low), format_real(r.auroc_high));
    out += fmt::format("auprc,macro,{},{},{}\n", format_real(r.auprc), format_real(r.auprc_low), format_real(r.auprc_high));
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        out += fmt::format("auroc,{},{},,\n", c, format_real(r.per_class[c].auroc));
        out += fmt::format("auprc,{},{},,\n", c, format_real(r.per_class[c].auprc));
    }
    return out;
}

Tensor embed(const EncoderConfig& enc, const nn::ParamSet& params, std::span<const VitalsSeries> series,
             std::size_t batch) {
    batch = std::max<std::size_t>(batch, 1);
    std::vector<double> out;
    out.reserve(series.size() * enc.model_dim);
    for (std::size_t start = 0; start < series.size(); start += batch) {
        const auto end = std::min(start + batch, series.size());
        const Var x = Var::constant(input_batch(series.subspan(start, end - start)));
        const Var h = encode_vitals(enc, params, x);
        out.insert(out.end(), h.value().values().begin(), h.value().values().end());
    }
    return Tensor({series.size(), enc.model_dim}, std::move(out));
}

std::vector<std::size_t> stratified_subsample(std::span<const int> labels, int classes, double fraction,
                                              std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) fail(ErrorCode::ConfigError, "label fraction must lie in (0,1]");
    std::vector<std::vector<std::size_t>> by_class(std::size_t(std::max(classes, 0)));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes) fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(labels[i]));
        by_class[std::size_t(labels[i])].push_back(i);
    }
    std::vector<std::size_t> chosen;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        if (members.empty()) fail(ErrorCode::InsufficientLabels, "no labelled examples of class " + std::to_string(c));
        auto rng = make_stream({seed, c});
        std::shuffle(members.begin(), members.end(), rng);
        const auto keep = std::max<std::size_t>(1, std::size_t(std::llround(fraction * double(members.size()))));
        chosen.insert(chosen.end(), members.begin(), members.begin() + std::ptrdiff_t(std::min(keep, members.size())));
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

ProbeResult linear_probe(const Tensor& train_emb, std::span<const int> train_labels, const Tensor& test_emb,
                         std::span<const int> test_labels, const Task& task, double label_fraction,
                         const ProbeConfig& cfg) {
    if (train_emb.rank() != 2 || test_emb.rank() != 2 || train_emb.dim(0) != train_labels.size() ||
        test_emb.dim(0) != test_labels.size() || train_emb.dim(1) != test_emb.dim(1))
        fail(ErrorCode::ShapeMismatch, "probe embeddings do not match labels");
    ProbeResult result;
    result.train_indices = stratified_subsample(train_labels, task.classes, label_fraction, cfg.seed);
    const auto& rows = result.train_indices;
    const std::size_t n = rows.size(), d = train_emb.dim(1), k = std::size_t(task.outputs());

    std::vector<double> mu(d, 0.0), sd(d, 0.0);
    for (auto i : rows)
        for (std::size_t j = 0; j < d; ++j) mu[j] += train_emb.at(i, j) / double(n);
    for (auto i : rows)
        for (std::size_t j = 0; j < d; ++j) sd[j] += std::pow(train_emb.at(i, j) - mu[j], 2) / double(n);
    for (auto& s : sd) s = s > 1e-12 ? std::sqrt(s) : 1.0;
    std::vector<double> x(n * d);
    std::vector<int> y(n);
    for (std::size_t r = 0; r < n; ++r) {
        y[r] = train_labels[rows[r]];
        for (std::size_t j = 0; j < d; ++j) x[r * d + j] = (train_emb.at(rows[r], j) - mu[j]) / sd[j];
    }

    std::vector<double> w(d * k, 0.0), b(k, 0.0), gw(d * k), gb(k), z(k);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < k; ++c) {
                z[c] = b[c];
                for (std::size_t j = 0; j < d; ++j) z[c] += x[r * d + j] * w[j * k + c];
            }
            // dL/dz: sigmoid(z) - y, or softmax(z) - onehot(y).
            if (k == 1) {
                z[0] = 1.0 / (1.0 + std::exp(-z[0])) - double(y[r]);
            } else {
                const double m = *std::max_element(z.begin(), z.end());
                double s = 0.0;
                for (auto& v : z) s += (v = std::exp(v - m));
                for (std::size_t c = 0; c < k; ++c) z[c] = z[c] / s - (int(c) == y[r] ? 1.0 : 0.0);
            }
            for (std::size_t c = 0; c < k; ++c) {
                gb[c] += z[c] / double(n);
                for (std::size_t j = 0; j < d; ++j) gw[j * k + c] += x[r * d + j] * z[c] / double(n);
            }
        }
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.learning_rate * (gw[i] + cfg.l2 * w[i]);
        for (std::size_t c = 0; c < k; ++c) b[c] -= cfg.learning_rate * gb[c];
    }

    Tensor logits({test_emb.dim(0), k});
    for (std::size_t r = 0; r < test_emb.dim(0); ++r)
        for (std::size_t c = 0; c < k; ++c) {
            double v = b[c];
            for (std::size_t j = 0; j < d; ++j) v += (test_emb.at(r, j) - mu[j]) / sd[j] * w[j * k + c];
            logits.at(r, c) = v;
        }
    result.report = evaluate_logits(logits, test_labels, task, cfg.n_resamples, 0.95, cfg.seed);
    return result;
}

NeighborAnalysis neighbor_analysis(const Tensor& embeddings, std::span<const DiagnosisSet> sets,
                                   const OntologyTree& tree, std::size_t k, std::size_t n_random_pairs,
                                   std::uint64_t seed) {
    if (embeddings.rank() != 2 || embeddings.dim(0) != sets.size())
        fail(ErrorCode::ShapeMismatch, "embeddings do not match diagnosis sets");
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < sets.size(); ++i)
        if (!sets[i].codes.empty()) keep.push_back(i);
    if (keep.size() < sets.size())
        spdlog::warn("neighbor analysis skips {} patients without known codes", sets.size() - keep.size());
    const std::size_t n = keep.size(), d = embeddings.dim(1);
    if (k == 0) fail(ErrorCode::ConfigError, "K must be positive");
    if (k >= n) fail(ErrorCode::KTooLarge, "K=" + std::to_string(k) + " with " + std::to_string(n) + " patients");

    std::vector<double> unit(n * d, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
        double norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) norm += embeddings.at(keep[a], j) * embeddings.at(keep[a], j);
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (std::size_t j = 0; j < d; ++j) unit[a * d + j] = embeddings.at(keep[a], j) / norm;
    }

    std::set<std::pair<std::size_t, std::size_t>> knn_pairs;
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t a = 0; a < n; ++a) {
        cand.clear();
        for (std::size_t b = 0; b < n; ++b) {
            if (b == a) continue;
            double c = 0.0;
            for (std::size_t j = 0; j < d; ++j) c += unit[a * d + j] * unit[b * d + j];
            cand.emplace_back(-c, b);
        }
        std::partial_sort(cand.begin(), cand.begin() + std::ptrdiff_t(k), cand.end());
        for (std::size_t r = 0; r < k; ++r) knn_pairs.emplace(std::min(a, cand[r].second), std::max(a, cand[r].second));
    }

    const std::size_t all_pairs = n * (n - 1) / 2;
    const std::size_t want = std::min(n_random_pairs ? n_random_pairs : knn_pairs.size(), all_pairs);
    std::set<std::pair<std::size_t, std::size_t>> random_pairs;
    auto rng = make_stream({seed, 0x52414e44});
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (random_pairs.size() < want) {
        const auto a = pick(rng), b = pick(rng);
        if (a != b) random_pairs.emplace(std::min(a, b), std::max(a, b));
    }

    auto sims = [&](const std::set<std::pair<std::size_t, std::size_t>>& pairs) {
        std::vector<double> v;
        v.reserve(pairs.size());
        for (const auto& [a, b] : pairs) v.push_back(patient_similarity(tree, sets[keep[a]], sets[keep[b]]));
        return v;
    };
    const auto knn = sims(knn_pairs);
    const auto rnd = sims(random_pairs);

    NeighborAnalysis out;
    out.k = k;
    out.n_knn = knn.size();
    out.n_random = rnd.size();
    out.knn_mean = std::accumulate(knn.begin(), knn.end(), 0.0) / double(knn.size());
    out.random_mean = std::accumulate(rnd.begin(), rnd.end(), 0.0) / double(rnd.size());
    const auto mw = mann_whitney_u(knn, rnd);
    out.u = mw.u;
    out.z = mw.z;
    out.p_value = mw.p;
    out.effect_size_r = std::abs(mw.z) / std::sqrt(double(knn.size() + rnd.size()));
    return out;
}

std::string format_neighbors_csv(std::span<const NeighborAnalysis> rows) {
    std::string out = "k,n_knn,n_random,knn_mean,random_mean,u,z,p_value,effect_size_r\n";
    for (const auto& r : rows)
        out += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.k, r.n_knn, r.n_random, format_real(r.knn_mean),
                           format_real(r.random_mean), format_real(r.u), format_real(r.z), format_real(r.p_value),
                           format_real(r.effect_size_r));
    return out;
}

} // namespace ocd
