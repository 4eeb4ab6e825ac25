#include "cvd/store/csv.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "cvd/core/error.hpp"

namespace cvd::store {

std::vector<CsvRow> read_csv(std::istream& in) {
  std::vector<CsvRow> rows;
  CsvRow row;
  std::string field;
  bool quoted = false;      // field started with a quote
  bool in_quotes = false;   // currently inside quotes
  bool field_started = false;
  std::size_t line = 1;
  std::size_t row_line = 1;

  auto end_field = [&] {
    if (!quoted && field.empty()) {
      row.emplace_back(std::nullopt);
    } else {
      row.emplace_back(field);
    }
    field.clear();
    quoted = false;
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };

  char c;
  while (in.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started) {
          throw Error(ErrorCode::kParse, "line " + std::to_string(line) + ": stray quote in field");
        }
        quoted = true;
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (in.peek() == '\n') break;
        [[fallthrough]];
      case '\n':
        end_row();
        ++line;
        row_line = line;
        break;
      default:
        if (quoted) {
          throw Error(ErrorCode::kParse,
                      "line " + std::to_string(line) + ": text after closing quote");
        }
        field_started = true;
        field.push_back(c);
    }
  }
  if (in_quotes) {
    throw Error(ErrorCode::kParse, "line " + std::to_string(row_line) + ": unterminated quote");
  }
  if (field_started || !row.empty() || quoted) end_row();
  return rows;
}

void write_csv_row(std::ostream& out, const CsvRow& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out << ',';
    if (!row[i]) continue;
    const std::string& f = *row[i];
    const bool quote = f.empty() || f.find_first_of(",\"\r\n") != std::string::npos;
    if (!quote) {
      out << f;
      continue;
    }
    out << '"';
    for (char c : f) {
      if (c == '"') out << '"';
      out << c;
    }
    out << '"';
  }
  out << '\n';
}

std::vector<ColumnSpec> read_schema_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kNotFound, "cannot open schema file " + path.string());
  std::vector<ColumnSpec> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      fail(ErrorCode::kParse, path.string() + ":" + std::to_string(n) + ": expected name:type");
    }
    ColumnSpec spec{trim(line.substr(0, colon)), DataType::kInteger};
    try {
      spec.dtype = parse_data_type(trim(line.substr(colon + 1)));
    } catch (const Error& e) {
      fail(ErrorCode::kParse, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
    for (const auto& s : out) {
      if (s.name == spec.name) fail(ErrorCode::kSchema, "duplicate column '" + spec.name + "'");
    }
    out.push_back(std::move(spec));
  }
  return out;
}

void write_schema_file(const std::filesystem::path& path, const std::vector<ColumnSpec>& schema) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& s : schema) out << s.name << ':' << to_string(s.dtype) << '\n';
}

CsvTable read_csv_table(const std::filesystem::path& path, const std::vector<ColumnSpec>& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kNotFound, "cannot open " + path.string());
  std::vector<CsvRow> raw = read_csv(in);
  CsvTable table;
  table.schema = schema;
  if (raw.empty()) return table;

  std::unordered_map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < schema.size(); ++i) by_name.emplace(schema[i].name, i);
  std::vector<std::size_t> target;  // header position -> schema column
  for (const auto& h : raw.front()) {
    const std::string name = h.value_or("");
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      fail(ErrorCode::kSchema, path.string() + ": column '" + name + "' not in schema");
    }
    target.push_back(it->second);
  }
  for (std::size_t r = 1; r < raw.size(); ++r) {
    const auto& fields = raw[r];
    if (fields.size() == 1 && !fields[0]) continue;  // blank line
    if (fields.size() != target.size()) {
      fail(ErrorCode::kParse, path.string() + ": line " + std::to_string(r + 1) + ": expected " +
                                  std::to_string(target.size()) + " fields, found " +
                                  std::to_string(fields.size()));
    }
    std::vector<Value> row(schema.size());
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (!fields[c]) continue;
      try {
        row[target[c]] = parse_value(*fields[c], schema[target[c]].dtype);
      } catch (const Error& e) {
        fail(ErrorCode::kParse,
             path.string() + ": line " + std::to_string(r + 1) + ": " + e.what());
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_csv_table(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  CsvRow header;
  for (const auto& s : table.schema) header.emplace_back(s.name);
  write_csv_row(out, header);
  for (const auto& row : table.rows) {
    CsvRow fields;
    for (const auto& v : row) {
      if (is_null(v)) {
        fields.emplace_back(std::nullopt);
      } else {
        fields.emplace_back(format_value(v));
      }
    }
    write_csv_row(out, fields);
  }
}

}  // namespace cvd::store
