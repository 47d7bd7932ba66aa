#include "ocd/ontology.hpp"

#include <fstream>

#include "ocd/error.hpp"
#include "ocd/util.hpp"

namespace ocd {

OntologyTree OntologyTree::from_records(std::vector<OntologyRecord> records) {
    if (records.empty()) fail(ErrorCode::EmptyOntology, "no records");

    OntologyTree t;
    const auto n = records.size();
    t.ids_.reserve(n);
    t.labels_.reserve(n);
    for (auto& r : records) {
        if (r.id.empty()) fail(ErrorCode::FormatError, "empty node id");
        auto [it, inserted] = t.index_.emplace(r.id, static_cast<NodeId>(t.ids_.size()));
        if (!inserted) fail(ErrorCode::DuplicateNode, "node '" + r.id + "' appears more than once");
        t.ids_.push_back(r.id);
        t.labels_.push_back(std::move(r.label));
    }

    std::optional<NodeId> root;
    t.parent_.assign(n, 0);
    t.children_.assign(n, {});
    for (NodeId i = 0; i < n; ++i) {
        const auto& p = records[i].parent;
        if (p.empty()) {
            if (root) fail(ErrorCode::MultipleRoots, "'" + t.ids_[*root] + "' and '" + t.ids_[i] + "'");
            root = i;
            t.parent_[i] = i;
            continue;
        }
        auto it = t.index_.find(p);
        if (it == t.index_.end()) fail(ErrorCode::MissingParent, "parent '" + p + "' of '" + t.ids_[i] + "'");
        if (it->second == i) fail(ErrorCode::CycleDetected, "'" + t.ids_[i] + "' is its own parent");
        t.parent_[i] = it->second;
        t.children_[it->second].push_back(i);
    }
    if (!root) fail(ErrorCode::CycleDetected, "no parentless record; parent chains never terminate");
    t.root_ = *root;

    // Every node has an existing parent, so any node unreachable from the root
    // sits on a cycle.
    constexpr auto unset = static_cast<std::uint32_t>(-1);
    t.depth_.assign(n, unset);
    t.depth_[t.root_] = 0;
    std::vector<NodeId> stack{t.root_};
    std::size_t reached = 0;
    while (!stack.empty()) {
        NodeId v = stack.back();
        stack.pop_back();
        ++reached;
        for (NodeId c : t.children_[v]) {
            t.depth_[c] = t.depth_[v] + 1;
            t.max_depth_ = std::max(t.max_depth_, t.depth_[c]);
            stack.push_back(c);
        }
    }
    if (reached != n) {
        for (NodeId i = 0; i < n; ++i)
            if (t.depth_[i] == unset) fail(ErrorCode::CycleDetected, "'" + t.ids_[i] + "' does not reach the root");
    }

    std::size_t levels = 1;
    while ((std::size_t{1} << levels) <= t.max_depth_) ++levels;
    t.up_.assign(levels, std::vector<NodeId>(n));
    t.up_[0] = t.parent_;
    for (std::size_t k = 1; k < levels; ++k)
        for (NodeId v = 0; v < n; ++v) t.up_[k][v] = t.up_[k - 1][t.up_[k - 1][v]];
    return t;
}

void OntologyTree::check(NodeId n) const {
    if (n >= ids_.size()) fail(ErrorCode::UnknownCode, "node index " + std::to_string(n));
}

std::optional<NodeId> OntologyTree::parent(NodeId n) const {
    check(n);
    if (n == root_) return std::nullopt;
    return parent_[n];
}

std::optional<NodeId> OntologyTree::find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

NodeId OntologyTree::at(std::string_view id) const {
    auto n = find(id);
    if (!n) fail(ErrorCode::UnknownCode, "'" + std::string(id) + "'");
    return *n;
}

NodeId OntologyTree::lca(CodePair pair) const {
    check(pair.a);
    check(pair.b);
    NodeId a = pair.a, b = pair.b;
    if (depth_[a] < depth_[b]) std::swap(a, b);
    std::uint32_t diff = depth_[a] - depth_[b];
    for (std::size_t k = 0; diff != 0; ++k, diff >>= 1)
        if (diff & 1u) a = up_[k][a];
    if (a == b) return a;
    for (std::size_t k = up_.size(); k-- > 0;) {
        if (up_[k][a] != up_[k][b]) {
            a = up_[k][a];
            b = up_[k][b];
        }
    }
    return parent_[a];
}

double OntologyTree::code_similarity(CodePair pair) const {
    if (pair.a == pair.b) {
        check(pair.a);
        return 1.0;
    }
    const NodeId l = lca(pair);
    const double shared = depth_[l];
    if (shared == 0.0) return 0.0;
    return shared / (double(depth_[pair.a]) + double(depth_[pair.b]) - shared);
}

std::vector<NodeId> OntologyTree::path(NodeId n) const {
    check(n);
    std::vector<NodeId> p(depth_[n] + 1);
    for (std::size_t i = p.size(); i-- > 0;) {
        p[i] = n;
        n = parent_[n];
    }
    return p;
}

std::vector<OntologyRecord> OntologyTree::records() const {
    std::vector<OntologyRecord> out;
    out.reserve(size());
    for (NodeId i = 0; i < size(); ++i)
        out.push_back({ids_[i], i == root_ ? std::string() : ids_[parent_[i]], labels_[i]});
    return out;
}

std::uint64_t OntologyTree::content_hash() const {
    ContentHasher h;
    h.str("ontology-v1");
    for (const auto& r : records()) h.str(r.id).str(r.parent);
    return h.digest64();
}

OntologyTree load_ontology(std::istream& in) {
    std::vector<OntologyRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto view = trim(line);
        if (view.empty() || view.front() == '#') continue;
        auto c1 = view.find(',');
        auto c2 = c1 == std::string_view::npos ? c1 : view.find(',', c1 + 1);
        if (c2 == std::string_view::npos)
            fail(ErrorCode::FormatError, "ontology line " + std::to_string(lineno) + ": expected child_id,parent_id,label");
        records.push_back({std::string(trim(view.substr(0, c1))), std::string(trim(view.substr(c1 + 1, c2 - c1 - 1))),
                           std::string(view.substr(c2 + 1))});
    }
    return OntologyTree::from_records(std::move(records));
}

OntologyTree load_ontology_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::MissingInput, "cannot open ontology " + path);
    return load_ontology(in);
}

void write_ontology(std::ostream& out, const OntologyTree& tree) {
    out << "# child_id,parent_id,label\n";
    for (const auto& r : tree.records()) out << r.id << ',' << r.parent << ',' << r.label << '\n';
}

OntologyTree make_balanced_tree(std::uint32_t depth, std::uint32_t branching) {
    std::vector<OntologyRecord> records{{"R", "", "root"}};
    std::vector<std::string> frontier{"R"};
    for (std::uint32_t d = 1; d <= depth; ++d) {
        std::vector<std::string> next;
        next.reserve(frontier.size() * branching);
        for (const auto& p : frontier) {
            for (std::uint32_t b = 0; b < branching; ++b) {
                auto id = p + "." + std::to_string(b);
                records.push_back({id, p, "level " + std::to_string(d)});
                next.push_back(std::move(id));
            }
        }
        frontier = std::move(next);
    }
    return OntologyTree::from_records(std::move(records));
}

} // namespace ocd
