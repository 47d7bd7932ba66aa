#include "ocd/similarity.hpp"

#include <algorithm>
#include <cmath>

#include "ocd/error.hpp"
#include "ocd/util.hpp"

namespace ocd {

DiagnosisSet make_diagnosis_set(const OntologyTree& tree, std::string patient_id, std::span<const std::string> codes,
                                UnknownCodeStats* stats) {
    DiagnosisSet set{std::move(patient_id), {}};
    std::size_t dropped = 0;
    for (const auto& c : codes) {
        if (auto n = tree.find(c))
            set.codes.push_back(*n);
        else
            ++dropped;
    }
    std::sort(set.codes.begin(), set.codes.end());
    set.codes.erase(std::unique(set.codes.begin(), set.codes.end()), set.codes.end());
    if (stats) {
        stats->dropped_codes += dropped;
        if (set.codes.empty() && !codes.empty()) ++stats->emptied_patients;
    }
    return set;
}

namespace {

void require_non_empty(const DiagnosisSet& s) {
    if (s.codes.empty()) fail(ErrorCode::EmptySet, "patient '" + s.patient_id + "' has no known codes");
}

// Code-pair similarities for one patient pair; both directions are read off
// the same m x n table.
std::vector<double> code_table(const OntologyTree& tree, const DiagnosisSet& a, const DiagnosisSet& b) {
    std::vector<double> table(a.codes.size() * b.codes.size());
    for (std::size_t i = 0; i < a.codes.size(); ++i)
        for (std::size_t j = 0; j < b.codes.size(); ++j)
            table[i * b.codes.size() + j] = tree.code_similarity({a.codes[i], b.codes[j]});
    return table;
}

double row_best_mean(const std::vector<double>& t, std::size_t m, std::size_t n) {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) total += *std::max_element(t.begin() + i * n, t.begin() + (i + 1) * n);
    return total / double(m);
}

double col_best_mean(const std::vector<double>& t, std::size_t m, std::size_t n) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double best = 0.0;
        for (std::size_t i = 0; i < m; ++i) best = std::max(best, t[i * n + j]);
        total += best;
    }
    return total / double(n);
}

} // namespace

double directional_avg(const OntologyTree& tree, const DiagnosisSet& from, const DiagnosisSet& to) {
    require_non_empty(from);
    require_non_empty(to);
    return row_best_mean(code_table(tree, from, to), from.codes.size(), to.codes.size());
}

double patient_similarity(const OntologyTree& tree, const DiagnosisSet& a, const DiagnosisSet& b) {
    require_non_empty(a);
    require_non_empty(b);
    const auto m = a.codes.size(), n = b.codes.size();
    const auto table = code_table(tree, a, b);
    return 0.5 * (row_best_mean(table, m, n) + col_best_mean(table, m, n));
}

double flat_similarity(const DiagnosisSet& a, const DiagnosisSet& b) {
    require_non_empty(a);
    require_non_empty(b);
    std::vector<NodeId> common;
    std::set_intersection(a.codes.begin(), a.codes.end(), b.codes.begin(), b.codes.end(), std::back_inserter(common));
    const double inter = double(common.size());
    return inter / (double(a.codes.size() + b.codes.size()) - inter);
}

WeightSpec WeightSpec::parse(const std::string& text) {
    auto parts = split(text, ':');
    const auto& name = parts[0];
    auto param = [&](const char* what) {
        if (parts.size() != 2) fail(ErrorCode::ConfigError, std::string("weight spec '") + text + "' needs " + what);
        return parse_real(parts[1], what);
    };
    WeightSpec s;
    if (name == "power")
        s = power(param("gamma"));
    else if (name == "exponential")
        s = exponential(param("gamma"));
    else if (name == "threshold")
        s = threshold(param("delta"));
    else if (name == "uniform" && parts.size() == 1)
        s = uniform();
    else
        fail(ErrorCode::ConfigError, "unknown weight spec '" + text + "'");
    s.validate();
    return s;
}

std::string WeightSpec::to_string() const {
    switch (family) {
    case WeightFamily::power: return "power:" + format_real(gamma);
    case WeightFamily::exponential: return "exponential:" + format_real(gamma);
    case WeightFamily::threshold: return "threshold:" + format_real(delta);
    case WeightFamily::uniform: return "uniform";
    }
    return "uniform";
}

void WeightSpec::validate() const {
    if ((family == WeightFamily::power || family == WeightFamily::exponential) && !(gamma > 0.0 && std::isfinite(gamma)))
        fail(ErrorCode::ConfigError, "gamma must be positive");
    if (family == WeightFamily::threshold && !(delta >= 0.0 && delta <= 1.0))
        fail(ErrorCode::ConfigError, "delta must lie in [0,1]");
}

double weight(const WeightSpec& spec, double s) {
    if (!(s >= 0.0 && s <= 1.0)) fail(ErrorCode::OutOfRangeSimilarity, "similarity " + format_real(s));
    switch (spec.family) {
    case WeightFamily::power: return std::pow(1.0 - s, spec.gamma);
    case WeightFamily::exponential: return std::exp(-spec.gamma * s);
    case WeightFamily::threshold: return s < spec.delta ? 1.0 : 0.0;
    case WeightFamily::uniform: return 1.0;
    }
    return 1.0;
}

SimilarityKind parse_similarity_kind(const std::string& text) {
    if (text == "ontology") return SimilarityKind::ontology;
    if (text == "flat") return SimilarityKind::flat;
    fail(ErrorCode::ConfigError, "unknown similarity kind '" + text + "'");
}

const char* to_string(SimilarityKind kind) { return kind == SimilarityKind::ontology ? "ontology" : "flat"; }

double pair_similarity(const OntologyTree& tree, const DiagnosisSet& a, const DiagnosisSet& b, SimilarityKind kind) {
    if (a.codes.empty() || b.codes.empty()) return -1.0;
    return kind == SimilarityKind::ontology ? patient_similarity(tree, a, b) : flat_similarity(a, b);
}

float pair_weight(const OntologyTree& tree, const DiagnosisSet& a, const DiagnosisSet& b, const WeightSpec& spec,
                  SimilarityKind kind) {
    if (spec.family == WeightFamily::uniform) return 1.0f;
    const double s = pair_similarity(tree, a, b, kind);
    if (s < 0.0) return 1.0f;
    return static_cast<float>(weight(spec, s));
}

WeightMatrix::WeightMatrix(std::vector<std::string> order, std::vector<float> values)
    : order_(std::move(order)), values_(std::move(values)) {
    if (values_.size() != order_.size() * order_.size())
        fail(ErrorCode::ShapeMismatch, "weight matrix values do not match its order");
}

WeightMatrix WeightMatrix::filled(std::vector<std::string> order, float v) {
    const auto n = order.size();
    WeightMatrix m(std::move(order), std::vector<float>(n * n, v));
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
    return m;
}

bool WeightMatrix::symmetric() const {
    for (std::size_t i = 0; i < size(); ++i)
        for (std::size_t j = i + 1; j < size(); ++j)
            if ((*this)(i, j) != (*this)(j, i)) return false;
    return true;
}

WeightMatrix batch_weight_matrix(const OntologyTree& tree, std::span<const DiagnosisSet> sets, const WeightSpec& spec,
                                 SimilarityKind kind) {
    spec.validate();
    std::vector<std::string> order;
    order.reserve(sets.size());
    for (const auto& s : sets) order.push_back(s.patient_id);
    auto m = WeightMatrix::filled(std::move(order), 1.0f);
    for (std::size_t i = 0; i < sets.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            const float w = pair_weight(tree, sets[i], sets[j], spec, kind);
            m(i, j) = w;
            m(j, i) = w;
        }
    }
    return m;
}

WeightHistogram weight_histogram(const WeightMatrix& matrix, std::size_t bins) {
    if (bins == 0) fail(ErrorCode::ZeroBins, "histogram needs at least one bin");
    WeightHistogram h;
    h.counts.assign(bins, 0);
    std::size_t below = 0;
    for (std::size_t i = 0; i < matrix.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            const double w = matrix(i, j);
            auto bin = static_cast<std::size_t>(w * double(bins));
            h.counts[std::min(bin, bins - 1)] += 1;
            if (w < 1.0) ++below;
            ++h.pairs;
        }
    }
    h.fraction_below_one = h.pairs == 0 ? 0.0 : double(below) / double(h.pairs);
    return h;
}

} // namespace ocd
