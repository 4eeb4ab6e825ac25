#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvd/core/types.hpp"
#include "cvd/engine/engine.hpp"
#include "cvd/store/csv.hpp"
#include "cvd/store/store.hpp"

namespace cvd::bench {

enum class WorkloadKind { kSci, kCur };

struct WorkloadConfig {
  WorkloadKind kind = WorkloadKind::kSci;
  std::uint32_t branches = 100;
  std::uint64_t target_records = 50'000;
  std::uint32_t changes_per_commit = 50;  // inserts plus updates per commit
  std::uint32_t versions_per_branch = 10;
  std::uint32_t attributes = 100;  // including the "id" key column
  double update_fraction = 0.7;
  double delete_fraction = 0.01;  // of changes_per_commit
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const WorkloadConfig& config);
WorkloadConfig workload_from_json(const nlohmann::json& j);

struct WorkloadVersion {
  std::vector<std::size_t> parents;   // earlier version indices, precedence order
  std::vector<std::uint64_t> tuples;  // tuple ids in row order
};

/// A replayable commit history. Tuple ids stand for records: a tuple never
/// changes, an update replaces it by a new tuple with the same key.
struct Workload {
  WorkloadConfig config;
  std::vector<WorkloadVersion> versions;  // versions[0] is the root
  std::vector<std::int64_t> keys;         // key of each tuple id

  std::size_t merge_count() const;
  std::uint64_t n_tuples() const { return keys.size(); }
  std::vector<store::ColumnSpec> schema() const;
  std::vector<Value> tuple_values(std::uint64_t tuple) const;
};

Workload generate_workload(const WorkloadConfig& config);

/// Direct construction of what the store should hold after a replay:
/// version i gets vid i+1 and tuple t becomes record t+1.
struct InMemoryWorkload {
  VersioningTable versioning;
  std::map<VersionId, std::vector<VersionId>> parents;
};

InMemoryWorkload materialize_in_memory(const Workload& workload);

/// Replays a workload through the engine one commit at a time.
class Replayer {
 public:
  Replayer(const Workload& workload, const std::filesystem::path& dir, store::StoreOptions options = {});

  bool done() const { return next_ >= workload_->versions.size(); }
  /// Index of the next version to commit.
  std::size_t position() const { return next_; }
  engine::CommitResult step(engine::CommitOptions options = {});
  store::Store& store() { return *store_; }
  store::Store release() { return std::move(*store_); }

 private:
  const Workload* workload_;
  std::optional<store::Store> store_;
  std::vector<RecordId> rid_of_;  // tuple id -> rid once committed
  std::size_t next_ = 1;
};

store::Store apply_to_engine(const Workload& workload, const std::filesystem::path& dir,
                             store::StoreOptions options = {});

enum class DataModel { kCombinedTable, kSplitByVlist, kSplitByRlist, kDelta, kTablePerVersion };

inline constexpr std::array<DataModel, 5> kAllModels = {
    DataModel::kCombinedTable, DataModel::kSplitByVlist, DataModel::kSplitByRlist, DataModel::kDelta,
    DataModel::kTablePerVersion};

std::string to_string(DataModel m);

struct ModelCost {
  std::uint64_t storage_cells = 0;
  std::uint64_t commit_touch = 0;
  std::uint64_t checkout_touch = 0;

  friend bool operator==(const ModelCost&, const ModelCost&) = default;
};

struct ModelCostReport {
  std::map<DataModel, ModelCost> models;

  const ModelCost& at(DataModel m) const { return models.at(m); }
};

/// Checkout of `version`, then commit of the edited table as its child.
/// Deleted records are dropped from the checked-out table and inserted ones
/// are brand new.
struct CommitScenario {
  std::optional<VersionId> version;  // defaults to the largest vid
  std::uint64_t inserted = 0;
  std::uint64_t deleted = 0;
};

/// Abstract costs of the scenario under each data model. `width` is the
/// number of data attributes and `key_width` the primary key width used for
/// delete markers.
ModelCostReport compare_models(const VersioningTable& versioning,
                               const std::map<VersionId, std::vector<VersionId>>& parents,
                               std::uint32_t width, std::uint32_t key_width = 1,
                               const CommitScenario& scenario = {});

struct ExperimentConfig {
  WorkloadConfig workload;
  std::vector<double> gammas = {1.5, 2.0};  // multiples of |R|
  std::vector<std::string> algorithms = {"lyresplit", "agglo", "kmeans", "none"};
  std::uint32_t samples = 100;
  std::uint64_t seed = 1;
  std::optional<double> timeout_seconds;
  std::optional<std::filesystem::path> store_dir;  // default: a temporary directory
};

ExperimentConfig experiment_from_json(const nlohmann::json& j);

struct ExperimentRow {
  std::string algorithm;
  double knob = 0.0;  // delta for lyresplit, capacity for agglo, K for kmeans
  double gamma = 0.0;
  std::uint64_t storage = 0;
  double checkout_avg = 0.0;
  double partition_seconds = 0.0;
  double checkout_reads = 0.0;  // mean records read per sampled checkout
  bool timed_out = false;
  bool within_budget = true;  // false: no knob met gamma; the smallest layout is reported
};

std::vector<ExperimentRow> run_partition_experiment(const ExperimentConfig& config);

void write_experiment_csv(std::ostream& out, const std::vector<ExperimentRow>& rows);

}  // namespace cvd::bench
