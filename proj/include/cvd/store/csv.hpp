#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cvd/core/types.hpp"

namespace cvd::store {

/// One CSV field; nullopt marks an unquoted empty field (SQL NULL).
using CsvField = std::optional<std::string>;
using CsvRow = std::vector<CsvField>;

/// RFC-4180 style reader: quoted fields, doubled quotes, CRLF or LF line
/// ends, embedded newlines inside quotes. Errors carry the 1-based line.
std::vector<CsvRow> read_csv(std::istream& in);
void write_csv_row(std::ostream& out, const CsvRow& row);

struct ColumnSpec {
  std::string name;
  DataType dtype = DataType::kInteger;

  friend bool operator==(const ColumnSpec&, const ColumnSpec&) = default;
};

/// Schema files hold one `name:type` entry per line; `#` starts a comment.
std::vector<ColumnSpec> read_schema_file(const std::filesystem::path& path);
void write_schema_file(const std::filesystem::path& path, const std::vector<ColumnSpec>& schema);

struct CsvTable {
  std::vector<ColumnSpec> schema;
  std::vector<std::vector<Value>> rows;
};

/// Loads a CSV whose header names match `schema` (in any order); values are
/// typed per the schema. Columns absent from the header are null.
CsvTable read_csv_table(const std::filesystem::path& path, const std::vector<ColumnSpec>& schema);
void write_csv_table(const std::filesystem::path& path, const CsvTable& table);

}  // namespace cvd::store
