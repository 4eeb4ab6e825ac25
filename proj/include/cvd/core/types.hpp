#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

namespace cvd {

// Thin wrapper that keeps ids of different kinds from mixing.
template <typename Tag, typename Rep>
struct StrongId {
  Rep value{};

  constexpr StrongId() = default;
  constexpr explicit StrongId(Rep v) : value(v) {}

  friend constexpr auto operator<=>(const StrongId&, const StrongId&) = default;
};

struct RecordIdTag {};
struct VersionIdTag {};

using RecordId = StrongId<RecordIdTag, std::uint64_t>;
using VersionId = StrongId<VersionIdTag, std::uint32_t>;
using AttrId = std::uint32_t;
using PartitionId = std::uint32_t;

std::ostream& operator<<(std::ostream& os, RecordId rid);
std::ostream& operator<<(std::ostream& os, VersionId vid);

/// Attribute types, ordered from most specific to most general.
enum class DataType : std::uint8_t { kInteger = 0, kDecimal = 1, kText = 2 };

std::string to_string(DataType t);
DataType parse_data_type(const std::string& text);
inline DataType generalize(DataType a, DataType b) { return a < b ? b : a; }

using Value = std::variant<std::monostate, std::int64_t, double, std::string>;

inline bool is_null(const Value& v) { return std::holds_alternative<std::monostate>(v); }

/// Converts a value to a (not narrower) type. Nulls stay null.
Value convert_value(const Value& v, DataType target);
/// Parses a textual field; empty text yields null.
Value parse_value(const std::string& text, DataType type);
/// Canonical text form used for CSV output and textual generalization.
std::string format_value(const Value& v);
/// Total order over values of the same column: null < numbers < text.
std::partial_ordering compare_values(const Value& a, const Value& b);

struct Attribute {
  AttrId id = 0;
  std::string name;
  DataType dtype = DataType::kInteger;

  friend bool operator==(const Attribute&, const Attribute&) = default;
};

/// Immutable tuple. `values` is aligned with the store's column pool; columns
/// created after the record was written are absent (treated as null).
struct Record {
  RecordId rid;
  std::vector<Value> values;

  const Value& at(std::size_t column) const;
  friend bool operator==(const Record&, const Record&) = default;
};

struct VersionMeta {
  VersionId vid;
  std::vector<VersionId> parents;
  std::vector<VersionId> children;
  std::int64_t create_time = 0;
  std::int64_t commit_time = 0;
  std::string message;
  std::vector<AttrId> attributes;
  std::uint64_t checkout_frequency = 1;
  // Shared-record count with each entry of `parents`, cached at commit.
  std::vector<std::uint64_t> parent_weights;

  friend bool operator==(const VersionMeta&, const VersionMeta&) = default;
};

struct VersionEntry {
  PartitionId partition = 0;
  std::vector<RecordId> rlist;

  friend bool operator==(const VersionEntry&, const VersionEntry&) = default;
};

/// Split-by-rlist versioning table: vid -> (partition, rlist).
using VersioningTable = std::map<VersionId, VersionEntry>;

}  // namespace cvd

template <typename Tag, typename Rep>
struct std::hash<cvd::StrongId<Tag, Rep>> {
  std::size_t operator()(const cvd::StrongId<Tag, Rep>& id) const noexcept {
    return std::hash<Rep>{}(id.value);
  }
};
