#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ocd/similarity.hpp"

namespace ocd {

struct CacheKey {
    std::uint64_t ontology_hash = 0;
    std::uint64_t cohort_hash = 0;
    std::uint64_t spec_hash = 0;

    bool operator==(const CacheKey&) const = default;
};

std::uint64_t cohort_hash(const OntologyTree& tree, std::span<const DiagnosisSet> cohort);
std::uint64_t spec_hash(const WeightSpec& spec, SimilarityKind kind);

/// Pairwise weights for a whole cohort, stored as a row-major packed lower
/// triangle of 32-bit reals: entry (i, j) with i > j lives at i(i-1)/2 + j.
///
/// File layout (little-endian):
///   "OCDWCACH" | u32 version | u64 ontology hash | u64 cohort hash |
///   u64 spec hash | u64 n | n x (u32 len, id bytes) |
///   n(n-1)/2 x f32 | u64 payload checksum
class CohortWeightCache {
public:
    static constexpr std::uint64_t default_budget = std::uint64_t{1} << 28;

    /// Throws BudgetExceeded when n(n-1)/2 exceeds `max_entries`. Rows are
    /// partitioned across `threads` workers; results do not depend on the count.
    static CohortWeightCache build(const OntologyTree& tree, std::span<const DiagnosisSet> cohort,
                                   const WeightSpec& spec, SimilarityKind kind = SimilarityKind::ontology,
                                   std::uint64_t max_entries = default_budget, unsigned threads = 1);

    /// Throws CacheCorrupt on a bad header, truncation or checksum mismatch.
    static CohortWeightCache load(const std::string& path);
    void save(const std::string& path) const;

    const CacheKey& key() const noexcept { return key_; }
    std::size_t size() const noexcept { return ids_.size(); }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    std::size_t entries() const noexcept { return packed_.size(); }

    float at(std::size_t i, std::size_t j) const;

    /// Batch matrix for the given cohort positions, O(B²).
    WeightMatrix gather(std::span<const std::size_t> indices) const;
    WeightMatrix full() const;

private:
    CacheKey key_;
    std::vector<std::string> ids_;
    std::vector<float> packed_;
};

} // namespace ocd
