#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ocd {

using NodeId = std::uint32_t;

struct CodePair {
    NodeId a;
    NodeId b;
};

struct OntologyRecord {
    std::string id;
    std::string parent; // empty for the root
    std::string label;
};

/// Rooted diagnosis hierarchy. Node ids from files are interned to dense
/// integers in record order; the tree is immutable after construction and all
/// queries are safe to call concurrently.
class OntologyTree {
public:
    /// Validates the records and builds depth and binary-lifting tables.
    /// Throws DuplicateNode, MissingParent, CycleDetected, MultipleRoots or
    /// EmptyOntology.
    static OntologyTree from_records(std::vector<OntologyRecord> records);

    std::size_t size() const noexcept { return ids_.size(); }
    NodeId root() const noexcept { return root_; }
    std::uint32_t depth(NodeId n) const { return depth_.at(n); }
    std::uint32_t max_depth() const noexcept { return max_depth_; }
    std::optional<NodeId> parent(NodeId n) const;
    const std::vector<NodeId>& children(NodeId n) const { return children_.at(n); }
    const std::string& id(NodeId n) const { return ids_.at(n); }
    const std::string& label(NodeId n) const { return labels_.at(n); }
    bool is_leaf(NodeId n) const { return children_.at(n).empty(); }

    std::optional<NodeId> find(std::string_view id) const;
    /// Throws UnknownCode.
    NodeId at(std::string_view id) const;

    /// Deepest node on both root paths. O(log depth).
    NodeId lca(CodePair pair) const;

    /// Root-excluded path-set Jaccard: depth(lca) / (depth(a) + depth(b) - depth(lca)).
    double code_similarity(CodePair pair) const;

    /// Node ids on the path from the root to n, root first.
    std::vector<NodeId> path(NodeId n) const;

    std::vector<OntologyRecord> records() const;
    std::uint64_t content_hash() const;

private:
    OntologyTree() = default;
    void check(NodeId n) const;

    std::vector<std::string> ids_;
    std::vector<std::string> labels_;
    std::vector<NodeId> parent_; // root points at itself
    std::vector<std::uint32_t> depth_;
    std::vector<std::vector<NodeId>> children_;
    std::vector<std::vector<NodeId>> up_; // up_[k][n] = 2^k-th ancestor, clamped at the root
    std::unordered_map<std::string, NodeId> index_;
    NodeId root_ = 0;
    std::uint32_t max_depth_ = 0;
};

/// Edge-list text: `child_id,parent_id,label` per line, `#` comments and
/// blank lines ignored, empty parent_id marks the root. The label is the
/// remainder of the line and may itself contain commas.
OntologyTree load_ontology(std::istream& in);
OntologyTree load_ontology_file(const std::string& path);
void write_ontology(std::ostream& out, const OntologyTree& tree);

/// Complete tree with the given depth and branching factor; node ids encode
/// their path ("R", "R.0", "R.0.3", ...).
OntologyTree make_balanced_tree(std::uint32_t depth, std::uint32_t branching);

} // namespace ocd
