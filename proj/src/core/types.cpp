#include "cvd/core/types.hpp"

#include <charconv>
#include <cmath>
#include <limits>

#include "cvd/core/error.hpp"

namespace cvd {

std::ostream& operator<<(std::ostream& os, RecordId rid) { return os << 'r' << rid.value; }
std::ostream& operator<<(std::ostream& os, VersionId vid) { return os << 'v' << vid.value; }

std::string to_string(DataType t) {
  switch (t) {
    case DataType::kInteger: return "integer";
    case DataType::kDecimal: return "decimal";
    case DataType::kText: return "text";
  }
  return "text";
}

DataType parse_data_type(const std::string& text) {
  if (text == "integer" || text == "int") return DataType::kInteger;
  if (text == "decimal" || text == "double" || text == "float") return DataType::kDecimal;
  if (text == "text" || text == "string") return DataType::kText;
  fail(ErrorCode::kSchema, "unknown data type '" + text + "'");
}

namespace {

std::string format_double(double d) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), d);
  std::string s(buf, end);
  // Keep decimals visually distinct from integers.
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

}  // namespace

std::string format_value(const Value& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return {};
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(x);
        } else if constexpr (std::is_same_v<T, double>) {
          return format_double(x);
        } else {
          return x;
        }
      },
      v);
}

Value convert_value(const Value& v, DataType target) {
  if (is_null(v)) return v;
  switch (target) {
    case DataType::kInteger:
      if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
      fail(ErrorCode::kSchema, "cannot narrow value '" + format_value(v) + "' to integer");
    case DataType::kDecimal:
      if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
      if (const auto* d = std::get_if<double>(&v)) return *d;
      fail(ErrorCode::kSchema, "cannot narrow value '" + format_value(v) + "' to decimal");
    case DataType::kText:
      return format_value(v);
  }
  return v;
}

Value parse_value(const std::string& text, DataType type) {
  if (text.empty() && type != DataType::kText) return std::monostate{};
  switch (type) {
    case DataType::kInteger: {
      std::int64_t out = 0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
      if (ec != std::errc() || ptr != text.data() + text.size()) {
        fail(ErrorCode::kParse, "not an integer: '" + text + "'");
      }
      return out;
    }
    case DataType::kDecimal: {
      double out = 0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
      if (ec != std::errc() || ptr != text.data() + text.size()) {
        fail(ErrorCode::kParse, "not a decimal: '" + text + "'");
      }
      return out;
    }
    case DataType::kText:
      return text;
  }
  return std::monostate{};
}

std::partial_ordering compare_values(const Value& a, const Value& b) {
  if (a.index() == b.index()) {
    return std::visit(
        [&](const auto& x) -> std::partial_ordering {
          using T = std::decay_t<decltype(x)>;
          const auto& y = std::get<T>(b);
          if constexpr (std::is_same_v<T, std::monostate>) {
            return std::partial_ordering::equivalent;
          } else {
            return x <=> y;
          }
        },
        a);
  }
  if (is_null(a)) return std::partial_ordering::less;
  if (is_null(b)) return std::partial_ordering::greater;
  const bool a_num = !std::holds_alternative<std::string>(a);
  const bool b_num = !std::holds_alternative<std::string>(b);
  if (a_num && b_num) {
    auto as_double = [](const Value& v) {
      if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
      return std::get<double>(v);
    };
    return as_double(a) <=> as_double(b);
  }
  if (a_num) return format_value(a) <=> std::get<std::string>(b);
  return std::get<std::string>(a) <=> format_value(b);
}

const Value& Record::at(std::size_t column) const {
  static const Value kNull{};
  return column < values.size() ? values[column] : kNull;
}

}  // namespace cvd
