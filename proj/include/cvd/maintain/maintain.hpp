#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "cvd/core/version_graph.hpp"
#include "cvd/partition/scheme.hpp"
#include "cvd/store/store.hpp"

namespace cvd::maintain {

/// Storage threshold, either absolute or a multiple of the current |R|.
struct Budget {
  enum class Kind { kAbsolute, kMultiple };
  Kind kind = Kind::kMultiple;
  double value = 2.0;

  double resolve(std::uint64_t n_records) const;
  /// Accepts "2x" / "1.5x" (multiple) or a plain number (absolute records).
  static Budget parse(const std::string& text);
  std::string to_string() const;
};

struct MaintenancePolicy {
  Budget gamma;
  double mu = 1.5;
  double delta_star = 1.0;
  std::uint32_t check_every = 1;
  std::uint32_t commits_since_check = 0;

  void validate() const;
};

nlohmann::json to_json(const MaintenancePolicy& p);
MaintenancePolicy policy_from_json(const nlohmann::json& j);
std::optional<MaintenancePolicy> load_policy(const store::Store& store);

struct PlacementDecision {
  bool create_new = false;
  PartitionId partition = 0;  // meaningful when create_new is false
  VersionId anchor_parent;    // parent with the largest shared-record count
  std::uint64_t anchor_weight = 0;
};

/// Online rule: a new partition iff w(anchor) <= delta*|R| and S < gamma;
/// otherwise join the anchor parent's partition. Without a policy the new
/// version always joins its anchor.
PlacementDecision assign_on_commit(std::span<const VersionId> parents,
                                   std::span<const std::uint64_t> weights,
                                   std::span<const PartitionId> parent_partitions,
                                   std::uint64_t n_records, std::uint64_t storage,
                                   const std::optional<MaintenancePolicy>& policy);

/// Version graph of a store built from the cached parent weights.
VersionGraph store_graph(const store::Store& store);
/// Scheme implied by the store's current segments.
partition::PartitioningScheme current_scheme(const store::Store& store);

struct CheckResult {
  bool migrate = false;
  double current_checkout = 0.0;
  double best_checkout = 0.0;
  double gamma = 0.0;
  double delta = 0.0;
  partition::PartitioningScheme target;  // exact counts from rlists
};

CheckResult maintenance_check(const partition::PartitioningScheme& current, const VersionGraph& graph,
                              const VersioningTable& versioning, const MaintenancePolicy& policy);

struct PlanPair {
  PartitionId target = 0;
  std::optional<PartitionId> source;  // nullopt: built from scratch
  std::vector<VersionId> versions;
  std::vector<RecordId> inserts;
  std::vector<RecordId> deletes;
  std::uint64_t target_records = 0;
};

struct MigrationPlan {
  std::vector<PlanPair> pairs;
  std::vector<PartitionId> dropped;
  std::uint64_t estimated_write_cost = 0;
  std::uint64_t naive_write_cost = 0;  // rebuilding every target partition
};

/// Segment contents keyed by partition id.
using SegmentMap = std::map<PartitionId, std::vector<RecordId>>;

/// Greedy pairing of target partitions with old segments by ascending
/// approximate modification cost; a target whose exact cost exceeds its own
/// size is built from scratch.
MigrationPlan plan_migration(const partition::PartitioningScheme& old_scheme,
                             const SegmentMap& old_segments,
                             const partition::PartitioningScheme& new_scheme,
                             const VersioningTable& versioning, PartitionId next_free_id);
MigrationPlan plan_migration(const store::Store& store, const partition::PartitioningScheme& target);

/// Returns the number of segment rows written (inserts plus tombstones).
std::uint64_t execute_migration(store::Store& store, const MigrationPlan& plan,
                                std::optional<MaintenancePolicy> policy = std::nullopt);

struct MaintenanceReport {
  bool checked = false;
  bool migrated = false;
  CheckResult check;
  std::uint64_t written = 0;
  std::uint64_t naive_written = 0;
};

/// Runs the check against the store's policy and migrates when it fires.
MaintenanceReport run_maintenance(store::Store& store);

/// Installs a policy: delta* comes from a budget search on the current graph.
MaintenancePolicy set_policy(store::Store& store, MaintenancePolicy policy);

/// Rebuilds the store's segments into `target` (used by optimize).
MaintenanceReport migrate_to(store::Store& store, const partition::PartitioningScheme& target,
                             std::optional<MaintenancePolicy> policy = std::nullopt);

}  // namespace cvd::maintain
