#include "cvd/engine/engine.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cctype>
#include <chrono>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "cvd/core/error.hpp"

namespace cvd::engine {
namespace fs = std::filesystem;
using store::ColumnSpec;
using store::Store;

namespace {

constexpr const char* kRidColumn = "_rid";

std::int64_t now_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string vname(VersionId v) { return "v" + std::to_string(v.value); }

// Type-tagged serialization so that 1, 1.0 and "1" never collide.
void append_key(std::string& key, const Value& v) {
  if (is_null(v)) {
    key += "N";
  } else if (std::holds_alternative<std::int64_t>(v)) {
    key += "I" + format_value(v);
  } else if (std::holds_alternative<double>(v)) {
    key += "D" + format_value(v);
  } else {
    const auto& s = std::get<std::string>(v);
    key += "T" + std::to_string(s.size()) + ":" + s;
  }
  key += '\x1f';
}

std::vector<Attribute> version_attributes(const Store& store, VersionId vid) {
  std::vector<Attribute> out;
  for (AttrId id : store.meta(vid).attributes) out.push_back(store.attribute(id));
  return out;
}

// Columns of the table mapped onto the store's column pool.
struct Projection {
  std::vector<std::optional<std::size_t>> pool;  // per table column
  std::vector<DataType> dtype;

  std::vector<Value> apply(const Record& r, const std::vector<bool>* visible = nullptr) const {
    std::vector<Value> out(pool.size());
    for (std::size_t c = 0; c < pool.size(); ++c) {
      if (!pool[c]) continue;
      if (visible && !(*visible)[*pool[c]]) continue;
      out[c] = convert_value(r.at(*pool[c]), dtype[c]);
    }
    return out;
  }

  // Raw projection for reuse matching; a hidden value that cannot be
  // represented in the table's type never matches.
  std::optional<std::vector<Value>> try_apply(const Record& r) const {
    std::vector<Value> out(pool.size());
    for (std::size_t c = 0; c < pool.size(); ++c) {
      if (!pool[c]) continue;
      const Value& v = r.at(*pool[c]);
      if (is_null(v)) continue;
      const auto have = static_cast<DataType>(v.index() - 1);
      if (have > dtype[c]) return std::nullopt;
      out[c] = convert_value(v, dtype[c]);
    }
    return out;
  }
};

Projection project(const Store& store, const std::vector<ColumnSpec>& schema) {
  Projection p;
  for (const auto& c : schema) {
    p.pool.push_back(store.column_index(c.name));
    p.dtype.push_back(c.dtype);
  }
  return p;
}

std::vector<bool> visible_columns(const Store& store, VersionId vid) {
  std::vector<bool> visible(store.columns().size(), false);
  for (const auto& a : version_attributes(store, vid)) visible[*store.column_index(a.name)] = true;
  return visible;
}

std::vector<std::size_t> key_columns(const Store& store, const std::vector<ColumnSpec>& schema) {
  std::vector<std::size_t> cols;
  for (const auto& k : store.primary_key()) {
    auto it = std::find_if(schema.begin(), schema.end(), [&](const ColumnSpec& c) { return c.name == k; });
    if (it == schema.end()) fail(ErrorCode::kSchema, "primary key column '" + k + "' is missing");
    cols.push_back(static_cast<std::size_t>(it - schema.begin()));
  }
  return cols;
}

// Primary-key identity of a row; without a primary key the whole tuple.
std::string row_key(const std::vector<Value>& values, const std::vector<std::size_t>& key_cols) {
  std::string key;
  if (key_cols.empty()) {
    for (const auto& v : values) append_key(key, v);
  } else {
    for (std::size_t c : key_cols) append_key(key, values[c]);
  }
  return key;
}

std::string tuple_key(const std::vector<Value>& values) {
  std::string key;
  for (const auto& v : values) append_key(key, v);
  return key;
}

void check_table_name(const std::string& name) {
  const bool ok = !name.empty() && name.size() <= 128 && name[0] != '.' &&
                  std::all_of(name.begin(), name.end(), [](char c) {
                    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
                  });
  if (!ok) fail(ErrorCode::kParameter, "invalid table name '" + name + "'");
}

std::vector<VersionId> distinct_in_order(std::span<const VersionId> vids) {
  std::vector<VersionId> out;
  for (VersionId v : vids) {
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  return out;
}

}  // namespace

MaterializedTable materialize(const Store& store, std::span<const VersionId> input) {
  if (input.empty()) fail(ErrorCode::kParameter, "no versions given");
  const std::vector<VersionId> vids = distinct_in_order(input);
  MaterializedTable t;
  for (VersionId v : vids) {
    for (const auto& a : version_attributes(store, v)) {
      auto it = std::find_if(t.schema.begin(), t.schema.end(),
                             [&](const ColumnSpec& c) { return c.name == a.name; });
      if (it == t.schema.end()) {
        t.schema.push_back({a.name, a.dtype});
      } else {
        it->dtype = generalize(it->dtype, a.dtype);
      }
    }
  }
  const std::vector<std::size_t> keys = key_columns(store, t.schema);
  const Projection proj = project(store, t.schema);

  // A checkout reads every segment holding one of the versions, then keeps
  // the rows named by the rlists.
  std::map<PartitionId, std::unordered_set<RecordId>> wanted;
  for (VersionId v : vids) {
    const auto& e = store.entry(v);
    wanted[e.partition].insert(e.rlist.begin(), e.rlist.end());
  }
  std::unordered_map<RecordId, const Record*> loaded;
  for (const auto& [pid, rids] : wanted) {
    for (RecordId rid : store.segment_rids(pid)) {
      ++t.records_read;
      if (rids.count(rid)) loaded.emplace(rid, &store.record(rid));
    }
  }

  std::unordered_set<std::string> seen;
  for (VersionId v : vids) {
    const std::vector<bool> visible = visible_columns(store, v);
    for (RecordId rid : store.entry(v).rlist) {
      auto it = loaded.find(rid);
      if (it == loaded.end()) {
        fail(ErrorCode::kCorruption, "r" + std::to_string(rid.value) + " of " + vname(v) + " is not in its segment");
      }
      std::vector<Value> values = proj.apply(*it->second, &visible);
      if (!seen.insert(row_key(values, keys)).second) continue;
      t.rows.push_back(Row{rid, std::move(values)});
    }
  }
  t.provenance.parent_vids = vids;
  return t;
}

std::string staging_name_for_csv(const fs::path& csv) {
  return fs::weakly_canonical(fs::absolute(csv)).string();
}

MaterializedTable checkout(Store& store, std::span<const VersionId> vids, const CheckoutTarget& target) {
  std::string name;
  std::string path;
  if (target.csv) {
    name = path = staging_name_for_csv(*target.csv);
  } else {
    check_table_name(target.table);
    name = target.table;
    path = "staging/" + name + ".csv";
  }
  if (store.staging().count(name)) {
    fail(ErrorCode::kStagingConflict, "table '" + name + "' is already checked out");
  }
  MaterializedTable t = materialize(store, vids);
  t.name = name;
  t.provenance.name = name;
  t.provenance.created_at = now_seconds();
  t.provenance.path = path;

  if (target.csv) {
    store::write_csv_table(*target.csv, store::CsvTable{t.schema, [&] {
                                                          std::vector<std::vector<Value>> rows;
                                                          rows.reserve(t.rows.size());
                                                          for (const auto& r : t.rows) rows.push_back(r.values);
                                                          return rows;
                                                        }()});
  } else {
    const fs::path file = store.dir() / path;
    fs::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot write " + file.string());
    store::CsvRow header{std::string(kRidColumn)};
    for (const auto& c : t.schema) header.emplace_back(c.name);
    store::write_csv_row(out, header);
    for (const auto& r : t.rows) {
      store::CsvRow fields{std::to_string(r.rid->value)};
      for (const auto& v : r.values) {
        fields.push_back(is_null(v) ? store::CsvField{} : store::CsvField{format_value(v)});
      }
      store::write_csv_row(out, fields);
    }
    out.close();
    if (!out) fail(ErrorCode::kIo, "cannot write " + file.string());
    store::write_schema_file(fs::path(file).replace_extension(".schema"), t.schema);
  }

  store::Mutation m;
  m.staging_added.push_back(t.provenance);
  for (VersionId v : t.provenance.parent_vids) {
    VersionMeta meta = store.meta(v);
    ++meta.checkout_frequency;
    m.metadata.push_back(std::move(meta));
  }
  store.apply(m);
  return t;
}

MaterializedTable load_staged(const Store& store, const std::string& name,
                              const std::optional<std::vector<ColumnSpec>>& schema_in) {
  auto it = store.staging().find(name);
  if (it == store.staging().end()) {
    fail(ErrorCode::kOrphanTable, "table '" + name + "' has no checkout provenance");
  }
  const store::StagingEntry& entry = it->second;
  const fs::path file = fs::path(entry.path).is_absolute() ? fs::path(entry.path) : store.dir() / entry.path;
  std::vector<ColumnSpec> schema;
  if (schema_in) {
    schema = *schema_in;
  } else if (fs::path(entry.path).is_relative()) {
    schema = store::read_schema_file(fs::path(file).replace_extension(".schema"));
  } else {
    fail(ErrorCode::kParameter, "schema file required");
  }

  std::ifstream in(file, std::ios::binary);
  if (!in) fail(ErrorCode::kNotFound, "cannot open " + file.string());
  const std::vector<store::CsvRow> raw = store::read_csv(in);
  MaterializedTable t;
  t.name = name;
  t.schema = schema;
  t.provenance = entry;
  if (raw.empty()) return t;

  std::optional<std::size_t> rid_col;
  std::vector<std::optional<std::size_t>> target;
  for (std::size_t i = 0; i < raw[0].size(); ++i) {
    const std::string h = raw[0][i].value_or("");
    if (h == kRidColumn) {
      rid_col = i;
      target.emplace_back();
      continue;
    }
    auto s = std::find_if(schema.begin(), schema.end(), [&](const ColumnSpec& c) { return c.name == h; });
    if (s == schema.end()) fail(ErrorCode::kSchema, "column '" + h + "' is not in the schema");
    target.emplace_back(static_cast<std::size_t>(s - schema.begin()));
  }
  for (std::size_t r = 1; r < raw.size(); ++r) {
    const auto& fields = raw[r];
    if (fields.size() == 1 && !fields[0] && raw[0].size() != 1) continue;
    if (fields.size() != raw[0].size()) {
      fail(ErrorCode::kParse, file.string() + ": line " + std::to_string(r + 1) + ": expected " +
                                  std::to_string(raw[0].size()) + " fields");
    }
    Row row;
    row.values.resize(schema.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!fields[i]) continue;
      if (rid_col && i == *rid_col) {
        std::uint64_t v = 0;
        const auto& s = *fields[i];
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec == std::errc{} && p == s.data() + s.size()) row.rid = RecordId(v);
        continue;
      }
      try {
        row.values[*target[i]] = parse_value(*fields[i], schema[*target[i]].dtype);
      } catch (const Error& e) {
        fail(ErrorCode::kParse, file.string() + ": line " + std::to_string(r + 1) + ": " + e.what());
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

CommitResult commit(Store& store, const MaterializedTable& table, const std::string& message,
                    const CommitOptions& options) {
  const std::vector<VersionId> parents = distinct_in_order(table.provenance.parent_vids);
  if (parents.empty()) fail(ErrorCode::kOrphanTable, "table has no provenance versions");
  if (options.require_staging && !store.staging().count(table.name)) {
    fail(ErrorCode::kOrphanTable, "table '" + table.name + "' has no checkout provenance");
  }
  for (VersionId p : parents) {
    if (!store.metadata().count(p)) fail(ErrorCode::kOrphanTable, "provenance names unknown " + vname(p));
  }

  // Fold the table schema into the attribute pool.
  std::vector<Attribute> parent_attrs;
  for (VersionId p : parents) {
    for (const auto& a : version_attributes(store, p)) {
      auto it = std::find_if(parent_attrs.begin(), parent_attrs.end(),
                             [&](const Attribute& x) { return x.name == a.name; });
      if (it == parent_attrs.end()) {
        parent_attrs.push_back(a);
      } else if (it->dtype < a.dtype) {
        *it = a;
      }
    }
  }
  AttrId next_attr = 1;
  for (const auto& a : store.attributes()) next_attr = std::max(next_attr, a.id + 1);
  std::vector<Attribute> new_attrs;
  std::vector<AttrId> version_attrs;
  std::vector<std::string> new_columns;
  std::set<std::string> names;
  for (const auto& col : table.schema) {
    if (!names.insert(col.name).second) fail(ErrorCode::kSchema, "duplicate column '" + col.name + "'");
    if (col.name == kRidColumn) fail(ErrorCode::kSchema, "column name '_rid' is reserved");
    auto pa = std::find_if(parent_attrs.begin(), parent_attrs.end(),
                           [&](const Attribute& x) { return x.name == col.name; });
    if (pa != parent_attrs.end()) {
      if (col.dtype < pa->dtype) {
        fail(ErrorCode::kSchema, "column '" + col.name + "' cannot narrow from " + to_string(pa->dtype) +
                                     " to " + to_string(col.dtype));
      }
      if (col.dtype == pa->dtype) {
        version_attrs.push_back(pa->id);
        continue;
      }
    }
    const auto same = [&](const Attribute& x) { return x.name == col.name && x.dtype == col.dtype; };
    auto existing = std::find_if(store.attributes().begin(), store.attributes().end(), same);
    if (existing != store.attributes().end()) {
      version_attrs.push_back(existing->id);
      continue;
    }
    Attribute a{next_attr++, col.name, col.dtype};
    if (!store.column_index(col.name) &&
        std::find(new_columns.begin(), new_columns.end(), col.name) == new_columns.end()) {
      new_columns.push_back(col.name);
    }
    version_attrs.push_back(a.id);
    new_attrs.push_back(std::move(a));
  }

  const std::vector<std::size_t> keys = key_columns(store, table.schema);
  const Projection proj = project(store, table.schema);
  const std::size_t pool_width = store.columns().size() + new_columns.size();
  std::vector<std::size_t> pool_index(table.schema.size());
  for (std::size_t c = 0; c < table.schema.size(); ++c) {
    if (proj.pool[c]) {
      pool_index[c] = *proj.pool[c];
    } else {
      const auto pos = std::find(new_columns.begin(), new_columns.end(), table.schema[c].name);
      pool_index[c] = store.columns().size() + static_cast<std::size_t>(pos - new_columns.begin());
    }
  }

  std::vector<std::vector<Value>> rows;
  rows.reserve(table.rows.size());
  std::unordered_set<std::string> seen_keys;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const Row& row = table.rows[r];
    if (row.values.size() != table.schema.size()) {
      fail(ErrorCode::kSchema, "row " + std::to_string(r + 1) + " does not match the schema width");
    }
    std::vector<Value> values(row.values.size());
    for (std::size_t c = 0; c < values.size(); ++c) values[c] = convert_value(row.values[c], table.schema[c].dtype);
    for (std::size_t c : keys) {
      if (is_null(values[c])) fail(ErrorCode::kConstraint, "row " + std::to_string(r + 1) + ": null primary key");
    }
    if (!seen_keys.insert(row_key(values, keys)).second) {
      fail(ErrorCode::kConstraint, "row " + std::to_string(r + 1) + ": duplicate primary key");
    }
    rows.push_back(std::move(values));
  }

  // Reuse parent records whose full stored tuple equals the row.
  std::unordered_set<RecordId> parent_rids;
  for (VersionId p : parents) {
    const auto& rl = store.entry(p).rlist;
    parent_rids.insert(rl.begin(), rl.end());
  }
  std::unordered_map<std::string, RecordId> by_tuple;
  bool index_built = false;
  auto build_index = [&] {
    for (VersionId p : parents) {
      for (RecordId rid : store.entry(p).rlist) {
        if (auto values = proj.try_apply(store.record(rid))) by_tuple.try_emplace(tuple_key(*values), rid);
      }
    }
    index_built = true;
  };
  auto column_values_match = [&](const Record& rec, const std::vector<Value>& values) {
    auto projected = proj.try_apply(rec);
    return projected && *projected == values;
  };

  std::vector<RecordId> rlist;
  rlist.reserve(rows.size());
  std::vector<Record> fresh;
  std::unordered_set<RecordId> used;
  std::size_t n_fresh = 0;
  std::vector<std::optional<RecordId>> reuse(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& hint = table.rows[r].rid;
    if (hint && parent_rids.count(*hint) && !used.count(*hint) &&
        column_values_match(store.record(*hint), rows[r])) {
      reuse[r] = *hint;
    } else if (hint || options.match_unhinted_rows) {
      if (!index_built) build_index();
      auto it = by_tuple.find(tuple_key(rows[r]));
      if (it != by_tuple.end() && !used.count(it->second)) reuse[r] = it->second;
    }
    if (reuse[r]) {
      used.insert(*reuse[r]);
    } else {
      ++n_fresh;
    }
  }
  RecordId next = store.allocate_rids(n_fresh);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (reuse[r]) {
      rlist.push_back(*reuse[r]);
      continue;
    }
    Record rec{next, std::vector<Value>(pool_width)};
    next = RecordId(next.value + 1);
    for (std::size_t c = 0; c < rows[r].size(); ++c) rec.values[pool_index[c]] = rows[r][c];
    while (!rec.values.empty() && is_null(rec.values.back())) rec.values.pop_back();
    rlist.push_back(rec.rid);
    fresh.push_back(std::move(rec));
  }

  std::vector<std::uint64_t> weights;
  std::vector<PartitionId> parent_parts;
  for (VersionId p : parents) {
    weights.push_back(intersection_size(store.entry(p).rlist, rlist));
    parent_parts.push_back(store.entry(p).partition);
  }
  auto policy = maintain::load_policy(store);
  const auto decision = maintain::assign_on_commit(parents, weights, parent_parts,
                                                   store.record_count() + fresh.size(), store.storage(),
                                                   policy);

  CommitResult result;
  result.vid = store.next_vid();
  result.new_records = fresh.size();
  result.new_partition = decision.create_new;
  result.partition = decision.create_new ? store.next_partition_id() : decision.partition;

  store::Mutation m;
  m.new_attributes = std::move(new_attrs);
  m.new_records = std::move(fresh);
  store::Mutation::SegmentWrite w{result.partition, decision.create_new, {}, {}};
  for (RecordId rid : rlist) {
    if (decision.create_new || !store.segment_contains(result.partition, rid)) w.inserts.push_back(rid);
  }
  if (!w.inserts.empty() || w.fresh) m.segments.push_back(std::move(w));
  m.versioning.emplace(result.vid, VersionEntry{result.partition, rlist});

  VersionMeta meta;
  meta.vid = result.vid;
  meta.parents = parents;
  meta.create_time = table.provenance.created_at ? table.provenance.created_at : now_seconds();
  meta.commit_time = now_seconds();
  meta.message = message;
  meta.attributes = std::move(version_attrs);
  meta.parent_weights = weights;
  m.metadata.push_back(std::move(meta));
  for (VersionId p : parents) {
    VersionMeta pm = store.meta(p);
    pm.children.push_back(result.vid);
    m.metadata.push_back(std::move(pm));
  }
  if (options.require_staging) m.staging_removed.push_back(table.name);
  bool check_due = false;
  if (policy) {
    ++policy->commits_since_check;
    check_due = policy->commits_since_check >= policy->check_every;
    m.policy = maintain::to_json(*policy);
  }
  store.apply(m);

  if (options.run_maintenance && check_due) result.maintenance = maintain::run_maintenance(store);
  return result;
}

DiffResult diff(const Store& store, VersionId a, VersionId b) {
  std::vector<RecordId> ra = store.entry(a).rlist;
  std::vector<RecordId> rb = store.entry(b).rlist;
  std::sort(ra.begin(), ra.end());
  std::sort(rb.begin(), rb.end());
  DiffResult d;
  std::set_difference(ra.begin(), ra.end(), rb.begin(), rb.end(), std::back_inserter(d.only_in_a));
  std::set_difference(rb.begin(), rb.end(), ra.begin(), ra.end(), std::back_inserter(d.only_in_b));
  return d;
}

std::vector<Condition> parse_predicate(const std::string& text) {
  std::vector<Condition> out;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  std::vector<std::string> parts;
  std::string cur;
  bool quoted = false;
  for (char c : text) {
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) fail(ErrorCode::kParse, "unterminated quote in predicate");
  parts.push_back(cur);
  if (parts.size() == 1 && trim(parts[0]).empty()) return out;

  static const std::pair<const char*, CompareOp> kOps[] = {
      {"!=", CompareOp::kNe}, {"<=", CompareOp::kLe}, {">=", CompareOp::kGe},
      {"=", CompareOp::kEq},  {"<", CompareOp::kLt},  {">", CompareOp::kGt}};
  for (const auto& part : parts) {
    const auto pos = part.find_first_of("!<>=");
    if (pos == std::string::npos) fail(ErrorCode::kParse, "condition '" + trim(part) + "' has no operator");
    Condition c;
    c.column = trim(part.substr(0, pos));
    bool matched = false;
    for (const auto& [tok, op] : kOps) {
      if (part.compare(pos, std::strlen(tok), tok) == 0) {
        c.op = op;
        c.literal = trim(part.substr(pos + std::strlen(tok)));
        matched = true;
        break;
      }
    }
    if (!matched || c.column.empty()) fail(ErrorCode::kParse, "malformed condition '" + trim(part) + "'");
    if (c.literal.size() >= 2 && c.literal.front() == '"' && c.literal.back() == '"') {
      c.literal = c.literal.substr(1, c.literal.size() - 2);
    }
    out.push_back(std::move(c));
  }
  return out;
}

MaterializedTable scan_version(const Store& store, VersionId vid, std::span<const Condition> predicate) {
  MaterializedTable t;
  for (const auto& a : version_attributes(store, vid)) t.schema.push_back({a.name, a.dtype});
  struct Bound {
    std::size_t column;
    CompareOp op;
    Value literal;
  };
  std::vector<Bound> bound;
  for (const auto& c : predicate) {
    auto it = std::find_if(t.schema.begin(), t.schema.end(), [&](const ColumnSpec& s) { return s.name == c.column; });
    if (it == t.schema.end()) {
      fail(ErrorCode::kSchema, "attribute '" + c.column + "' is not in " + vname(vid));
    }
    bound.push_back({static_cast<std::size_t>(it - t.schema.begin()), c.op, parse_value(c.literal, it->dtype)});
  }
  const Projection proj = project(store, t.schema);
  const std::vector<bool> visible = visible_columns(store, vid);
  for (RecordId rid : store.entry(vid).rlist) {
    std::vector<Value> values = proj.apply(store.record(rid), &visible);
    bool keep = true;
    for (const auto& b : bound) {
      const Value& v = values[b.column];
      if (is_null(v) || is_null(b.literal)) {
        keep = false;
        break;
      }
      const auto ord = compare_values(v, b.literal);
      switch (b.op) {
        case CompareOp::kEq: keep = ord == 0; break;
        case CompareOp::kNe: keep = ord != 0; break;
        case CompareOp::kLt: keep = ord < 0; break;
        case CompareOp::kLe: keep = ord <= 0; break;
        case CompareOp::kGt: keep = ord > 0; break;
        case CompareOp::kGe: keep = ord >= 0; break;
      }
      if (!keep) break;
    }
    if (keep) t.rows.push_back(Row{rid, std::move(values)});
  }
  t.provenance.parent_vids = {vid};
  return t;
}

std::vector<std::string> list_cvds(const fs::path& root) {
  std::vector<std::string> out;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) return out;
  for (const auto& de : fs::directory_iterator(root, ec)) {
    if (store::is_cvd_directory(de.path())) out.push_back(de.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t drop_cvd(const fs::path& root, const std::string& name) {
  const fs::path dir = root / name;
  if (name.empty() || name.find('/') != std::string::npos || !store::is_cvd_directory(dir)) {
    fail(ErrorCode::kNotFound, "no CVD named '" + name + "'");
  }
  // A damaged CVD can still be dropped; its staging count is then unknown.
  std::size_t staged = 0;
  try {
    staged = Store::open(dir).staging().size();
  } catch (const Error& e) {
    if (!e.is_corruption()) throw;
  }
  const fs::path lock = dir / "LOCK";
  const int fd = ::open(lock.c_str(), O_RDWR | O_CREAT, 0644);
  if (fd < 0) fail(ErrorCode::kIo, "cannot open " + lock.string());
  if (::flock(fd, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd);
    fail(ErrorCode::kLocked, "CVD '" + name + "' is in use by another writer");
  }
  std::error_code ec;
  fs::remove_all(dir, ec);
  ::close(fd);
  if (ec) fail(ErrorCode::kIo, "cannot remove " + dir.string() + ": " + ec.message());
  return staged;
}

}  // namespace cvd::engine
