#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvd/core/types.hpp"
#include "cvd/maintain/maintain.hpp"
#include "cvd/store/csv.hpp"
#include "cvd/store/store.hpp"

namespace cvd::engine {

struct Row {
  std::optional<RecordId> rid;  // set for unmodified copies out of the CVD
  std::vector<Value> values;    // aligned with the table schema

  friend bool operator==(const Row&, const Row&) = default;
};

struct MaterializedTable {
  std::string name;
  std::vector<store::ColumnSpec> schema;
  std::vector<Row> rows;
  store::StagingEntry provenance;
  std::uint64_t records_read = 0;  // segment rows scanned to build the table
};

struct DiffResult {
  std::vector<RecordId> only_in_a;
  std::vector<RecordId> only_in_b;

  friend bool operator==(const DiffResult&, const DiffResult&) = default;
};

/// Precedence-merged view of `vids` without touching the store.
MaterializedTable materialize(const store::Store& store, std::span<const VersionId> vids);

struct CheckoutTarget {
  std::string table;                         // staging table name
  std::optional<std::filesystem::path> csv;  // export to a user CSV instead
};

/// Materializes `vids`, registers the staging entry and bumps the checkout
/// frequency of every listed version.
MaterializedTable checkout(store::Store& store, std::span<const VersionId> vids,
                           const CheckoutTarget& target);

/// Reads a staged table back. For CSV checkouts `name` is the file path and
/// `schema` is mandatory.
MaterializedTable load_staged(const store::Store& store, const std::string& name,
                              const std::optional<std::vector<store::ColumnSpec>>& schema = std::nullopt);

/// Name under which a CSV checkout is registered in the staging area.
std::string staging_name_for_csv(const std::filesystem::path& csv);

struct CommitResult {
  VersionId vid;
  std::uint64_t new_records = 0;
  PartitionId partition = 0;
  bool new_partition = false;
  maintain::MaintenanceReport maintenance;
};

struct CommitOptions {
  bool require_staging = true;  // commits of staged tables remove the entry
  bool run_maintenance = true;  // honour the store's policy interval
  // Look up rows without a rid hint among the parent records. Generators
  // that know their new rows are new can skip the index build.
  bool match_unhinted_rows = true;
};

/// Commits a table derived from its provenance versions.
CommitResult commit(store::Store& store, const MaterializedTable& table, const std::string& message,
                    const CommitOptions& options = {});

DiffResult diff(const store::Store& store, VersionId a, VersionId b);

enum class CompareOp { kEq, kNe, kLt, kLe, kGt, kGe };

struct Condition {
  std::string column;
  CompareOp op = CompareOp::kEq;
  std::string literal;
};

/// Parses "attr op value[,attr op value...]".
std::vector<Condition> parse_predicate(const std::string& text);

/// Rows of `vid` satisfying every condition, in rlist order.
MaterializedTable scan_version(const store::Store& store, VersionId vid,
                               std::span<const Condition> predicate);

std::vector<std::string> list_cvds(const std::filesystem::path& root);
/// Removes a CVD; returns the number of staging entries purged with it.
std::size_t drop_cvd(const std::filesystem::path& root, const std::string& name);

}  // namespace cvd::engine
