#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "cvd/core/types.hpp"
#include "cvd/store/csv.hpp"

namespace cvd::store {

struct StagingEntry {
  std::string name;
  std::vector<VersionId> parent_vids;  // precedence order
  std::int64_t created_at = 0;
  std::string path;  // relative to the CVD directory, or absolute for user CSV files

  friend bool operator==(const StagingEntry&, const StagingEntry&) = default;
};

struct DataSegment {
  PartitionId partition_id = 0;
  std::vector<Record> records;
  std::uint64_t read_cost = 0;  // records read to load the segment
};

/// Thrown by the crash injector; the store object must not be used after it.
struct SimulatedCrash : std::runtime_error {
  SimulatedCrash() : std::runtime_error("simulated crash") {}
};

/// Counts durable write steps and aborts at a chosen one. A torn crash
/// writes half of the pending buffer before aborting.
class CrashInjector {
 public:
  explicit CrashInjector(std::uint64_t crash_at, bool torn = true)
      : crash_at_(crash_at), torn_(torn) {}

  /// Returns true when the current step is the one to crash at.
  bool hit() { return ++seen_ == crash_at_; }
  bool torn() const { return torn_; }
  std::uint64_t seen() const { return seen_; }

 private:
  std::uint64_t crash_at_;
  bool torn_;
  std::uint64_t seen_ = 0;
};

/// A batch of changes published atomically by one manifest switch.
struct Mutation {
  struct SegmentWrite {
    PartitionId partition = 0;
    bool fresh = false;  // start a new, empty segment file for this id
    std::vector<RecordId> inserts;
    std::vector<RecordId> deletes;
  };

  std::vector<Attribute> new_attributes;
  std::vector<Record> new_records;  // must carry rids from allocate_rids
  std::vector<SegmentWrite> segments;
  std::vector<PartitionId> dropped_partitions;
  std::map<VersionId, VersionEntry> versioning;  // upserts
  std::vector<VersionMeta> metadata;             // upserts
  std::vector<StagingEntry> staging_added;
  std::vector<std::string> staging_removed;
  std::optional<nlohmann::json> policy;

  bool empty() const;
};

/// Everything a reopen must reproduce; used for round-trip checks.
struct LogicalState {
  std::vector<Attribute> attributes;
  std::vector<std::string> primary_key;
  std::map<VersionId, VersionMeta> metadata;
  VersioningTable versioning;
  std::map<PartitionId, std::set<RecordId>> segments;
  std::map<RecordId, Record> records;
  std::map<std::string, StagingEntry> staging;
  std::uint64_t next_rid = 1;
  nlohmann::json policy;

  friend bool operator==(const LogicalState&, const LogicalState&) = default;
};

struct StoreOptions {
  bool sync = true;  // fsync files and the directory on every publish
};

/// On-disk CVD: append-only segment and table files whose committed lengths
/// are fixed by a numbered manifest. One writer at a time (LOCK file).
class Store {
 public:
  /// Creates a CVD holding a single root version v1 with `rows`.
  static Store init(const std::filesystem::path& dir, const std::vector<ColumnSpec>& schema,
                    const std::vector<std::string>& primary_key,
                    const std::vector<std::vector<Value>>& rows, const std::string& message,
                    StoreOptions options = {});
  static Store open(const std::filesystem::path& dir, StoreOptions options = {});

  Store(Store&&) noexcept;
  Store& operator=(Store&&) noexcept;
  ~Store();

  const std::filesystem::path& dir() const { return dir_; }
  std::string name() const { return dir_.filename().string(); }
  std::uint64_t generation() const { return generation_; }

  const std::vector<Attribute>& attributes() const { return attributes_; }
  const Attribute& attribute(AttrId id) const;
  /// Column pool: distinct attribute names in order of first appearance.
  const std::vector<std::string>& columns() const { return columns_; }
  std::optional<std::size_t> column_index(const std::string& name) const;
  const std::vector<std::string>& primary_key() const { return primary_key_; }

  const std::map<VersionId, VersionMeta>& metadata() const { return metadata_; }
  const VersionMeta& meta(VersionId vid) const;
  const VersioningTable& versioning() const { return versioning_; }
  const VersionEntry& entry(VersionId vid) const;
  VersionId next_vid() const;

  const Record& record(RecordId rid) const;
  bool has_record(RecordId rid) const { return pool_.count(rid) != 0; }

  std::vector<PartitionId> partitions() const;
  bool has_partition(PartitionId pid) const { return segments_.count(pid) != 0; }
  std::uint64_t segment_size(PartitionId pid) const;
  bool segment_contains(PartitionId pid, RecordId rid) const;
  /// Live rids of a segment in storage order.
  const std::vector<RecordId>& segment_rids(PartitionId pid) const;
  DataSegment load_partition(PartitionId pid) const;
  /// Sum of segment sizes (storage cost S).
  std::uint64_t storage() const;
  /// |R|: records referenced by the pool.
  std::uint64_t record_count() const { return pool_.size(); }
  PartitionId next_partition_id() const;

  const std::map<std::string, StagingEntry>& staging() const { return staging_; }
  std::filesystem::path staging_dir() const { return dir_ / "staging"; }

  const nlohmann::json& policy() const { return policy_; }

  /// Reserves `n` fresh rids and returns the first.
  RecordId allocate_rids(std::uint64_t n);

  /// Publishes a mutation atomically. Validation failures leave the store
  /// untouched.
  void apply(const Mutation& m);

  /// Convenience wrapper for the common commit shape.
  void append_commit(const std::vector<Record>& records_new, VersionId vid, PartitionId partition,
                     std::vector<RecordId> rlist, const VersionMeta& meta);

  LogicalState snapshot() const;

  /// Fault injection hook for tests; not owned.
  void set_crash_injector(CrashInjector* injector) { crash_ = injector; }

 private:
  struct Segment {
    std::vector<RecordId> order;
    std::unordered_set<RecordId> live;
    std::uint64_t bytes = 0;  // committed file length
    std::uint64_t rows = 0;   // committed row count (records and tombstones)
  };

  Store(std::filesystem::path dir, StoreOptions options);

  void load();
  void load_manifest(const nlohmann::json& manifest);
  void collect_garbage(const Mutation& m) const;
  void rebuild_columns();
  std::filesystem::path segment_path(PartitionId pid) const;
  void validate(const Mutation& m) const;

  std::filesystem::path dir_;
  StoreOptions options_;
  CrashInjector* crash_ = nullptr;

  std::uint64_t generation_ = 0;
  std::uint64_t next_rid_ = 1;
  std::uint64_t reserved_rid_ = 1;  // in-memory reservations beyond next_rid_
  std::map<std::string, std::uint64_t> file_bytes_;
  std::vector<Attribute> attributes_;
  std::vector<std::string> columns_;
  std::unordered_map<std::string, std::size_t> column_index_;
  std::vector<std::string> primary_key_;
  std::map<VersionId, VersionMeta> metadata_;
  VersioningTable versioning_;
  std::unordered_map<RecordId, Record> pool_;
  std::map<PartitionId, Segment> segments_;
  std::map<std::string, StagingEntry> staging_;
  nlohmann::json policy_;
};

/// JSON forms of metadata rows (shared by the store files and the CLI).
nlohmann::json to_json(const VersionMeta& meta);
VersionMeta version_meta_from_json(const nlohmann::json& j);

bool is_cvd_directory(const std::filesystem::path& dir);

}  // namespace cvd::store
