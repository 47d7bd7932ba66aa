#pragma once

#include <algorithm>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ocd/error.hpp"
#include "ocd/ontology.hpp"
#include "ocd/similarity.hpp"

namespace ocd::test {

// root -> X -> {a, b}, b -> c, root -> Y
inline OntologyTree six_node_tree() {
    std::istringstream in("root,,Root\nX,root,Group X\nY,root,Group Y\na,X,Code a\nb,X,Code b\nc,b,Code c\n");
    return load_ontology(in);
}

/// Random tree where each new node hangs under a uniformly chosen earlier node.
inline OntologyTree random_tree(std::size_t n, std::mt19937_64& rng) {
    std::vector<OntologyRecord> rec;
    rec.push_back({"n0", "", "root"});
    for (std::size_t i = 1; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        rec.push_back({"n" + std::to_string(i), "n" + std::to_string(pick(rng)), ""});
    }
    return OntologyTree::from_records(std::move(rec));
}

/// Root-excluded path sets by walking parents.
inline std::set<NodeId> path_set(const OntologyTree& t, NodeId n) {
    std::set<NodeId> out;
    while (n != t.root()) {
        out.insert(n);
        n = *t.parent(n);
    }
    return out;
}

/// Integer counts (shared, union) so the ratio can be compared exactly.
inline std::pair<std::size_t, std::size_t> path_counts(const OntologyTree& t, NodeId a, NodeId b) {
    const auto pa = path_set(t, a), pb = path_set(t, b);
    std::vector<NodeId> inter, uni;
    std::set_intersection(pa.begin(), pa.end(), pb.begin(), pb.end(), std::back_inserter(inter));
    std::set_union(pa.begin(), pa.end(), pb.begin(), pb.end(), std::back_inserter(uni));
    return {inter.size(), uni.size()};
}

inline double brute_code_similarity(const OntologyTree& t, NodeId a, NodeId b) {
    if (a == b) return 1.0;
    const auto [s, u] = path_counts(t, a, b);
    return u == 0 ? 1.0 : double(s) / double(u);
}

inline double brute_patient_similarity(const OntologyTree& t, const DiagnosisSet& A, const DiagnosisSet& B) {
    auto dir = [&](const DiagnosisSet& f, const DiagnosisSet& to) {
        double acc = 0.0;
        for (NodeId x : f.codes) {
            double best = 0.0;
            for (NodeId y : to.codes) best = std::max(best, brute_code_similarity(t, x, y));
            acc += best;
        }
        return acc / double(f.codes.size());
    };
    return 0.5 * (dir(A, B) + dir(B, A));
}

inline DiagnosisSet set_of(const OntologyTree& t, const std::string& id, std::vector<std::string> codes) {
    return make_diagnosis_set(t, id, codes);
}

} // namespace ocd::test

#define CHECK_ERROR_CODE(expr, expected)                                   \
    do {                                                                   \
        bool thrown_ = false;                                              \
        try {                                                              \
            (void)(expr);                                                  \
        } catch (const ::ocd::Error& e_) {                                 \
            thrown_ = true;                                                \
            CHECK_MESSAGE(e_.code() == (expected), e_.what());             \
        }                                                                  \
        CHECK_MESSAGE(thrown_, "expected " << ::ocd::to_string(expected)); \
    } while (0)
