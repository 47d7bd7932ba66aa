#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ocd/ontology.hpp"

namespace ocd {

/// A patient's deduplicated, sorted diagnosis codes. An empty set means every
/// recorded code was unknown to the ontology; such patients are weighted
/// uniformly against everyone.
struct DiagnosisSet {
    std::string patient_id;
    std::vector<NodeId> codes;
};

struct UnknownCodeStats {
    std::size_t dropped_codes = 0;
    std::size_t emptied_patients = 0;
};

/// Resolves code strings against the tree, dropping unknown codes and counting
/// them in `stats`.
DiagnosisSet make_diagnosis_set(const OntologyTree& tree, std::string patient_id,
                                std::span<const std::string> codes, UnknownCodeStats* stats = nullptr);

/// Mean over `from` of each code's best similarity to any code in `to`.
double directional_avg(const OntologyTree& tree, const DiagnosisSet& from, const DiagnosisSet& to);

/// Symmetric best-match similarity, the mean of both directional averages.
double patient_similarity(const OntologyTree& tree, const DiagnosisSet& a, const DiagnosisSet& b);

/// Exact-code overlap |A ∩ B| / |A ∪ B|, the hierarchy-blind baseline.
double flat_similarity(const DiagnosisSet& a, const DiagnosisSet& b);

enum class WeightFamily { power, exponential, threshold, uniform };

struct WeightSpec {
    WeightFamily family = WeightFamily::power;
    double gamma = 5.0;
    double delta = 0.5;

    static WeightSpec power(double gamma) { return {WeightFamily::power, gamma, 0.5}; }
    static WeightSpec exponential(double gamma) { return {WeightFamily::exponential, gamma, 0.5}; }
    static WeightSpec threshold(double delta) { return {WeightFamily::threshold, 5.0, delta}; }
    static WeightSpec uniform() { return {WeightFamily::uniform, 5.0, 0.5}; }

    /// "power:5", "exponential:2", "threshold:0.3", "uniform".
    static WeightSpec parse(const std::string& text);
    std::string to_string() const;
    void validate() const;
};

/// Φ(s): maps a similarity in [0,1] to a negative-pair weight in [0,1].
double weight(const WeightSpec& spec, double s);

enum class SimilarityKind { ontology, flat };
SimilarityKind parse_similarity_kind(const std::string& text);
const char* to_string(SimilarityKind kind);

/// Similarity used for weighting, or nullopt-equivalent -1 when either set is
/// empty (the pair then receives weight 1).
double pair_similarity(const OntologyTree& tree, const DiagnosisSet& a, const DiagnosisSet& b, SimilarityKind kind);
float pair_weight(const OntologyTree& tree, const DiagnosisSet& a, const DiagnosisSet& b, const WeightSpec& spec,
                  SimilarityKind kind);

/// Dense symmetric weight matrix at 32-bit precision with unit diagonal. The
/// diagonal is never read by the contrastive loss.
class WeightMatrix {
public:
    WeightMatrix() = default;
    WeightMatrix(std::vector<std::string> order, std::vector<float> values);
    static WeightMatrix filled(std::vector<std::string> order, float v);

    std::size_t size() const noexcept { return order_.size(); }
    float operator()(std::size_t i, std::size_t j) const { return values_[i * order_.size() + j]; }
    float& operator()(std::size_t i, std::size_t j) { return values_[i * order_.size() + j]; }
    const std::vector<std::string>& order() const noexcept { return order_; }
    const std::vector<float>& values() const noexcept { return values_; }
    bool symmetric() const;

private:
    std::vector<std::string> order_;
    std::vector<float> values_;
};

WeightMatrix batch_weight_matrix(const OntologyTree& tree, std::span<const DiagnosisSet> sets, const WeightSpec& spec,
                                 SimilarityKind kind = SimilarityKind::ontology);

struct WeightHistogram {
    std::vector<std::size_t> counts; // uniform bins over [0,1], 1.0 lands in the last bin
    std::size_t pairs = 0;           // unordered off-diagonal pairs
    double fraction_below_one = 0.0;
};

WeightHistogram weight_histogram(const WeightMatrix& matrix, std::size_t bins);

} // namespace ocd
