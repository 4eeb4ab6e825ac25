#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "cvd/core/types.hpp"

namespace cvd {

/// Derivation DAG over versions. Nodes are stored densely in ascending vid
/// order; edges carry the number of records shared by parent and child.
class VersionGraph {
 public:
  struct InEdge {
    std::size_t parent;  // node index
    std::uint64_t weight;
  };

  struct Node {
    VersionId vid;
    std::uint64_t record_count = 0;
    std::uint32_t level = 1;
    std::vector<InEdge> parents;
    std::vector<std::size_t> children;
  };

  /// Edge-list input for graphs built without rlists (synthetic instances).
  struct EdgeSpec {
    VersionId parent;
    VersionId child;
    std::uint64_t weight;
  };

  VersionGraph() = default;

  /// Builds a graph from per-version record counts and weighted edges.
  /// `n_records` is |R|; it is derived by the tree identity when omitted.
  static VersionGraph from_counts(const std::map<VersionId, std::uint64_t>& record_counts,
                                  std::span<const EdgeSpec> edges,
                                  std::optional<std::uint64_t> n_records = std::nullopt);

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  const Node& node(std::size_t i) const { return nodes_[i]; }
  const std::vector<Node>& nodes() const { return nodes_; }

  std::size_t index_of(VersionId vid) const;
  bool contains(VersionId vid) const { return index_.count(vid) != 0; }

  /// |R|: distinct records (for a transformed tree this includes duplicates).
  std::uint64_t n_records() const { return n_records_; }
  /// |E| = sum of per-version record counts.
  std::uint64_t n_bipartite_edges() const { return n_edges_; }
  std::uint64_t n_duplicated() const { return n_duplicated_; }

  bool is_tree() const;
  /// Weight of the edge parent -> child, or nullopt if absent.
  std::optional<std::uint64_t> weight(VersionId parent, VersionId child) const;

  /// Node indices in an order where every parent precedes its children.
  std::vector<std::size_t> topological_order() const;

 private:
  friend VersionGraph build_version_graph(const std::map<VersionId, std::vector<VersionId>>&,
                                          const VersioningTable&);
  friend struct TreeTransform dag_to_tree(const VersionGraph&);

  void finalize();  // levels, children, index; throws on cycles

  std::vector<Node> nodes_;
  std::unordered_map<VersionId, std::size_t> index_;
  std::uint64_t n_records_ = 0;
  std::uint64_t n_edges_ = 0;
  std::uint64_t n_duplicated_ = 0;
};

/// Builds the version graph from parent lists, weighting edges by the exact
/// rlist intersection.
VersionGraph build_version_graph(const std::map<VersionId, std::vector<VersionId>>& parents,
                                 const VersioningTable& versioning);
VersionGraph build_version_graph(std::span<const VersionMeta> metadata,
                                 const VersioningTable& versioning);

struct TreeTransform {
  VersionGraph tree;
  std::uint64_t n_duplicated = 0;
};

/// Keeps only the heaviest incoming edge of every merge node (lower parent
/// vid on ties). Records reachable only through dropped edges count as
/// conceptual duplicates, so the tree's |R| becomes |R| + |R^|.
TreeTransform dag_to_tree(const VersionGraph& graph);

struct BipartiteStats {
  std::uint64_t n_versions = 0;
  std::uint64_t n_records = 0;
  std::uint64_t n_edges = 0;
  std::uint64_t n_duplicated = 0;

  friend bool operator==(const BipartiteStats&, const BipartiteStats&) = default;
};

BipartiteStats bipartite_stats(const VersionGraph& graph);
/// Exact statistics of a set of versions, computed from rlists.
BipartiteStats bipartite_stats(const VersioningTable& versioning, std::span<const VersionId> scope);

/// |A ∩ B| for two rlists (inputs need not be sorted).
std::uint64_t intersection_size(std::span<const RecordId> a, std::span<const RecordId> b);

}  // namespace cvd
