#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "cvd/core/types.hpp"
#include "cvd/core/version_graph.hpp"
#include "json.hpp"

namespace cvd::partition {

struct Partition {
  PartitionId id = 0;
  std::vector<VersionId> versions;  // ascending
  std::uint64_t record_count = 0;   // |R_k|
  std::uint64_t edge_count = 0;     // |E_k|

  friend bool operator==(const Partition&, const Partition&) = default;
};

/// Disjoint grouping of versions; each partition stores every record of its
/// versions.
struct PartitioningScheme {
  std::vector<Partition> partitions;
  std::map<VersionId, PartitionId> assignment;
  double delta = 0.0;
  std::uint32_t levels = 0;
  // Tree edges (parent, child) cut while producing the scheme, if any.
  std::vector<std::pair<VersionId, VersionId>> cut_edges;

  std::uint64_t storage() const;
  double checkout_avg() const;
  std::size_t n_versions() const { return assignment.size(); }
  const Partition& partition(PartitionId id) const;
  const Partition& partition_of(VersionId vid) const;
};

struct CostReport {
  std::uint64_t storage = 0;    // S
  double checkout_avg = 0.0;    // C_avg
  double checkout_weighted = 0.0;  // C_w
};

using Frequencies = std::map<VersionId, std::uint64_t>;

/// Evaluates S, C_avg and C_w from the scheme's partition counts. Versions
/// missing from `frequencies` have frequency 1.
CostReport estimate_costs(const PartitioningScheme& scheme, const Frequencies& frequencies = {});

/// Checks the partition invariants against `graph`: disjoint cover of every
/// version and sum of |E_k| equal to |E|. Throws kInvariantViolation.
void validate_scheme(const PartitioningScheme& scheme, const VersionGraph& graph);

/// Builds a scheme from a version -> partition mapping with exact record
/// counts taken from the rlists. Partition ids are preserved.
PartitioningScheme scheme_from_assignment(const std::map<VersionId, PartitionId>& assignment,
                                          const VersioningTable& versioning);

/// Recomputes |R_k| and |E_k| of every partition from the rlists.
PartitioningScheme recount(PartitioningScheme scheme, const VersioningTable& versioning);

PartitioningScheme single_partition_scheme(const VersioningTable& versioning);
PartitioningScheme per_version_scheme(const VersioningTable& versioning);

nlohmann::json to_json(const PartitioningScheme& scheme);
nlohmann::json to_json(const CostReport& report);
PartitioningScheme scheme_from_json(const nlohmann::json& j);

}  // namespace cvd::partition
