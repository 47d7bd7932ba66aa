#include "ocd/weight_cache.hpp"

#include <cstring>
#include <fstream>
#include <thread>

#include "ocd/error.hpp"
#include "ocd/util.hpp"

namespace ocd {

namespace {

constexpr char kMagic[8] = {'O', 'C', 'D', 'W', 'C', 'A', 'C', 'H'};
constexpr std::uint32_t kVersion = 1;

std::size_t tri_index(std::size_t i, std::size_t j) { return i * (i - 1) / 2 + j; }

std::uint64_t payload_checksum(const std::vector<float>& packed) {
    ContentHasher h;
    h.bytes(packed.data(), packed.size() * sizeof(float));
    return h.digest64();
}

} // namespace

std::uint64_t cohort_hash(const OntologyTree& tree, std::span<const DiagnosisSet> cohort) {
    ContentHasher h;
    h.str("cohort-v1").pod<std::uint64_t>(cohort.size());
    for (const auto& s : cohort) {
        h.str(s.patient_id).pod<std::uint64_t>(s.codes.size());
        for (NodeId c : s.codes) h.str(tree.id(c));
    }
    return h.digest64();
}

std::uint64_t spec_hash(const WeightSpec& spec, SimilarityKind kind) {
    return sha256_u64(spec.to_string() + "|" + to_string(kind));
}

CohortWeightCache CohortWeightCache::build(const OntologyTree& tree, std::span<const DiagnosisSet> cohort,
                                           const WeightSpec& spec, SimilarityKind kind, std::uint64_t max_entries,
                                           unsigned threads) {
    spec.validate();
    const std::uint64_t n = cohort.size();
    const std::uint64_t entries = n < 2 ? 0 : n * (n - 1) / 2;
    if (entries > max_entries)
        fail(ErrorCode::BudgetExceeded, std::to_string(entries) + " pair entries exceed budget " + std::to_string(max_entries));

    CohortWeightCache cache;
    cache.key_ = {tree.content_hash(), cohort_hash(tree, cohort), spec_hash(spec, kind)};
    cache.ids_.reserve(n);
    for (const auto& s : cohort) cache.ids_.push_back(s.patient_id);
    cache.packed_.assign(entries, 1.0f);

    // Row i owns entries [tri(i,0), tri(i,0)+i); each worker takes an
    // interleaved set of rows so the triangular load stays balanced.
    threads = std::max(1u, threads);
    auto work = [&](unsigned w) {
        for (std::size_t i = 1 + w; i < n; i += threads)
            for (std::size_t j = 0; j < i; ++j)
                cache.packed_[tri_index(i, j)] = pair_weight(tree, cohort[i], cohort[j], spec, kind);
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w);
    }
    return cache;
}

float CohortWeightCache::at(std::size_t i, std::size_t j) const {
    if (i >= size() || j >= size()) fail(ErrorCode::ShapeMismatch, "cache index out of range");
    if (i == j) return 1.0f;
    if (i < j) std::swap(i, j);
    return packed_[tri_index(i, j)];
}

WeightMatrix CohortWeightCache::gather(std::span<const std::size_t> indices) const {
    std::vector<std::string> order;
    order.reserve(indices.size());
    for (auto i : indices) {
        if (i >= size()) fail(ErrorCode::ShapeMismatch, "cache index out of range");
        order.push_back(ids_[i]);
    }
    auto m = WeightMatrix::filled(std::move(order), 1.0f);
    for (std::size_t a = 0; a < indices.size(); ++a) {
        for (std::size_t b = 0; b < a; ++b) {
            const float w = at(indices[a], indices[b]);
            m(a, b) = w;
            m(b, a) = w;
        }
    }
    return m;
}

WeightMatrix CohortWeightCache::full() const {
    std::vector<std::size_t> all(size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return gather(all);
}

void CohortWeightCache::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::MissingInput, "cannot write cache " + path);
    out.write(kMagic, sizeof kMagic);
    bin::write(out, kVersion);
    bin::write(out, key_.ontology_hash);
    bin::write(out, key_.cohort_hash);
    bin::write(out, key_.spec_hash);
    bin::write<std::uint64_t>(out, ids_.size());
    for (const auto& id : ids_) bin::write_string(out, id);
    out.write(reinterpret_cast<const char*>(packed_.data()), static_cast<std::streamsize>(packed_.size() * sizeof(float)));
    bin::write(out, payload_checksum(packed_));
    if (!out) fail(ErrorCode::MissingInput, "failed writing cache " + path);
}

CohortWeightCache CohortWeightCache::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::MissingInput, "cannot open cache " + path);
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        fail(ErrorCode::CacheCorrupt, "bad magic in " + path);
    if (bin::read<std::uint32_t>(in, ErrorCode::CacheCorrupt) != kVersion)
        fail(ErrorCode::CacheCorrupt, "unsupported cache version");
    CohortWeightCache cache;
    cache.key_.ontology_hash = bin::read<std::uint64_t>(in, ErrorCode::CacheCorrupt);
    cache.key_.cohort_hash = bin::read<std::uint64_t>(in, ErrorCode::CacheCorrupt);
    cache.key_.spec_hash = bin::read<std::uint64_t>(in, ErrorCode::CacheCorrupt);
    const auto n = bin::read<std::uint64_t>(in, ErrorCode::CacheCorrupt);
    if (n > (std::uint64_t{1} << 32)) fail(ErrorCode::CacheCorrupt, "implausible cohort size");
    cache.ids_.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) cache.ids_.push_back(bin::read_string(in, ErrorCode::CacheCorrupt));
    const std::uint64_t entries = n < 2 ? 0 : n * (n - 1) / 2;
    cache.packed_.resize(entries);
    if (entries > 0 &&
        !in.read(reinterpret_cast<char*>(cache.packed_.data()), static_cast<std::streamsize>(entries * sizeof(float))))
        fail(ErrorCode::CacheCorrupt, "truncated weight payload");
    if (bin::read<std::uint64_t>(in, ErrorCode::CacheCorrupt) != payload_checksum(cache.packed_))
        fail(ErrorCode::CacheCorrupt, "checksum mismatch");
    for (float w : cache.packed_)
        if (!(w >= 0.0f && w <= 1.0f)) fail(ErrorCode::CacheCorrupt, "weight outside [0,1]");
    return cache;
}

} // namespace ocd
