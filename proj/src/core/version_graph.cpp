#include "cvd/core/version_graph.hpp"

#include <algorithm>
#include <deque>
#include <sstream>

#include "cvd/core/error.hpp"

namespace cvd {

namespace {

std::string vid_str(VersionId vid) {
  std::ostringstream os;
  os << vid;
  return os.str();
}

std::vector<RecordId> sorted_copy(std::span<const RecordId> rlist) {
  std::vector<RecordId> out(rlist.begin(), rlist.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::uint64_t sorted_intersection(const std::vector<RecordId>& a, const std::vector<RecordId>& b) {
  std::uint64_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

}  // namespace

std::uint64_t intersection_size(std::span<const RecordId> a, std::span<const RecordId> b) {
  return sorted_intersection(sorted_copy(a), sorted_copy(b));
}

std::size_t VersionGraph::index_of(VersionId vid) const {
  auto it = index_.find(vid);
  if (it == index_.end()) fail(ErrorCode::kNotFound, "unknown version " + vid_str(vid));
  return it->second;
}

bool VersionGraph::is_tree() const {
  std::size_t roots = 0;
  for (const auto& n : nodes_) {
    if (n.parents.size() > 1) return false;
    if (n.parents.empty()) ++roots;
  }
  return roots <= 1;
}

std::optional<std::uint64_t> VersionGraph::weight(VersionId parent, VersionId child) const {
  auto c = index_.find(child);
  auto p = index_.find(parent);
  if (c == index_.end() || p == index_.end()) return std::nullopt;
  for (const auto& e : nodes_[c->second].parents) {
    if (e.parent == p->second) return e.weight;
  }
  return std::nullopt;
}

std::vector<std::size_t> VersionGraph::topological_order() const {
  std::vector<std::size_t> indeg(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) indeg[i] = nodes_[i].parents.size();
  std::deque<std::size_t> ready;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (indeg[i] == 0) ready.push_back(i);
  }
  std::vector<std::size_t> order;
  order.reserve(nodes_.size());
  while (!ready.empty()) {
    const std::size_t u = ready.front();
    ready.pop_front();
    order.push_back(u);
    for (std::size_t c : nodes_[u].children) {
      if (--indeg[c] == 0) ready.push_back(c);
    }
  }
  if (order.size() != nodes_.size()) {
    fail(ErrorCode::kCorruption, "version graph contains a cycle");
  }
  return order;
}

void VersionGraph::finalize() {
  index_.clear();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    nodes_[i].children.clear();
    index_.emplace(nodes_[i].vid, i);
  }
  n_edges_ = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    n_edges_ += nodes_[i].record_count;
    for (const auto& e : nodes_[i].parents) nodes_[e.parent].children.push_back(i);
  }
  for (auto& n : nodes_) std::sort(n.children.begin(), n.children.end());
  for (std::size_t u : topological_order()) {
    std::uint32_t level = 1;
    for (const auto& e : nodes_[u].parents) level = std::max(level, nodes_[e.parent].level + 1);
    nodes_[u].level = level;
  }
}

VersionGraph VersionGraph::from_counts(const std::map<VersionId, std::uint64_t>& record_counts,
                                       std::span<const EdgeSpec> edges,
                                       std::optional<std::uint64_t> n_records) {
  VersionGraph g;
  std::unordered_map<VersionId, std::size_t> idx;
  for (const auto& [vid, count] : record_counts) {
    idx.emplace(vid, g.nodes_.size());
    g.nodes_.push_back(Node{vid, count, 1, {}, {}});
  }
  for (const auto& e : edges) {
    auto p = idx.find(e.parent);
    auto c = idx.find(e.child);
    if (p == idx.end() || c == idx.end()) {
      fail(ErrorCode::kMissingVersion, "edge references unknown version");
    }
    const auto& pn = g.nodes_[p->second];
    const auto& cn = g.nodes_[c->second];
    if (e.weight > std::min(pn.record_count, cn.record_count)) {
      fail(ErrorCode::kParameter, "edge weight exceeds endpoint record count");
    }
    g.nodes_[c->second].parents.push_back(InEdge{p->second, e.weight});
  }
  for (auto& n : g.nodes_) {
    std::sort(n.parents.begin(), n.parents.end(),
              [](const InEdge& a, const InEdge& b) { return a.parent < b.parent; });
  }
  g.finalize();
  if (n_records) {
    g.n_records_ = *n_records;
  } else {
    if (!g.is_tree()) fail(ErrorCode::kParameter, "record total required for a DAG");
    std::uint64_t shared = 0;
    for (const auto& n : g.nodes_) {
      for (const auto& e : n.parents) shared += e.weight;
    }
    g.n_records_ = g.n_edges_ - shared;
  }
  return g;
}

VersionGraph build_version_graph(const std::map<VersionId, std::vector<VersionId>>& parents,
                                 const VersioningTable& versioning) {
  VersionGraph g;
  std::unordered_map<VersionId, std::size_t> idx;
  std::vector<std::vector<RecordId>> sorted;
  sorted.reserve(parents.size());
  for (const auto& [vid, ps] : parents) {
    auto entry = versioning.find(vid);
    if (entry == versioning.end()) {
      fail(ErrorCode::kMissingVersion, "no versioning entry for " + vid_str(vid));
    }
    idx.emplace(vid, g.nodes_.size());
    sorted.push_back(sorted_copy(entry->second.rlist));
    g.nodes_.push_back(VersionGraph::Node{vid, entry->second.rlist.size(), 1, {}, {}});
  }
  for (const auto& [vid, ps] : parents) {
    const std::size_t c = idx.at(vid);
    for (VersionId p : ps) {
      auto it = idx.find(p);
      if (it == idx.end()) {
        fail(ErrorCode::kMissingVersion,
             "parent " + vid_str(p) + " of " + vid_str(vid) + " is not committed");
      }
      g.nodes_[c].parents.push_back(
          VersionGraph::InEdge{it->second, sorted_intersection(sorted[it->second], sorted[c])});
    }
  }
  g.finalize();

  std::vector<RecordId> all;
  all.reserve(g.n_edges_);
  for (const auto& s : sorted) all.insert(all.end(), s.begin(), s.end());
  std::sort(all.begin(), all.end());
  g.n_records_ = static_cast<std::uint64_t>(std::unique(all.begin(), all.end()) - all.begin());
  return g;
}

VersionGraph build_version_graph(std::span<const VersionMeta> metadata,
                                 const VersioningTable& versioning) {
  std::map<VersionId, std::vector<VersionId>> parents;
  for (const auto& m : metadata) parents[m.vid] = m.parents;
  return build_version_graph(parents, versioning);
}

TreeTransform dag_to_tree(const VersionGraph& graph) {
  TreeTransform out;
  VersionGraph& tree = out.tree;
  tree.nodes_ = graph.nodes_;
  std::uint64_t retained = 0;
  for (auto& n : tree.nodes_) {
    if (n.parents.empty()) continue;
    // Parents are ordered by index == vid order, so the first maximum wins ties.
    auto best = n.parents.begin();
    for (auto it = n.parents.begin(); it != n.parents.end(); ++it) {
      if (it->weight > best->weight) best = it;
    }
    const VersionGraph::InEdge keep = *best;
    n.parents.assign(1, keep);
    retained += keep.weight;
  }
  tree.finalize();
  // Every record not inherited along the retained edge is new in the tree.
  const std::uint64_t tree_records = tree.n_edges_ - retained;
  out.n_duplicated = tree_records > graph.n_records_ ? tree_records - graph.n_records_ : 0;
  tree.n_records_ = graph.n_records_ + out.n_duplicated;
  tree.n_duplicated_ = out.n_duplicated;
  return out;
}

BipartiteStats bipartite_stats(const VersionGraph& graph) {
  if (graph.empty()) fail(ErrorCode::kEmptyScope, "empty version graph");
  return BipartiteStats{graph.size(), graph.n_records(), graph.n_bipartite_edges(),
                        graph.n_duplicated()};
}

BipartiteStats bipartite_stats(const VersioningTable& versioning, std::span<const VersionId> scope) {
  if (scope.empty()) fail(ErrorCode::kEmptyScope, "empty partition scope");
  BipartiteStats s;
  std::vector<RecordId> all;
  for (VersionId vid : scope) {
    auto it = versioning.find(vid);
    if (it == versioning.end()) fail(ErrorCode::kNotFound, "unknown version " + vid_str(vid));
    s.n_versions += 1;
    s.n_edges += it->second.rlist.size();
    all.insert(all.end(), it->second.rlist.begin(), it->second.rlist.end());
  }
  std::sort(all.begin(), all.end());
  s.n_records = static_cast<std::uint64_t>(std::unique(all.begin(), all.end()) - all.begin());
  return s;
}

}  // namespace cvd
