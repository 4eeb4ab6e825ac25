#include "cvd/cli/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>

#include "cvd/bench/bench.hpp"
#include "cvd/core/error.hpp"
#include "cvd/core/version_graph.hpp"
#include "cvd/engine/engine.hpp"
#include "cvd/maintain/maintain.hpp"
#include "cvd/partition/lyresplit.hpp"
#include "cvd/partition/scheme.hpp"
#include "cvd/store/csv.hpp"
#include "cvd/store/store.hpp"

namespace cvd::cli {
namespace fs = std::filesystem;

namespace {

fs::path store_root() {
  const char* env = std::getenv("CVDSTORE_ROOT");
  return env && *env ? fs::path(env) : fs::path("cvdstore");
}

fs::path cvd_dir(const std::string& name) {
  if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..") {
    fail(ErrorCode::kParameter, "invalid CVD name '" + name + "'");
  }
  return store_root() / name;
}

store::Store open_cvd(const std::string& name) {
  const fs::path dir = cvd_dir(name);
  if (!store::is_cvd_directory(dir)) fail(ErrorCode::kNotFound, "no CVD named '" + name + "'");
  return store::Store::open(dir);
}

std::string vname(VersionId v) { return "v" + std::to_string(v.value); }

VersionId parse_vid(const std::string& text) {
  std::string digits = text;
  if (!digits.empty() && (digits[0] == 'v' || digits[0] == 'V')) digits.erase(0, 1);
  if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos || digits.size() > 9) {
    fail(ErrorCode::kParameter, "invalid version id '" + text + "'");
  }
  return VersionId(static_cast<std::uint32_t>(std::stoul(digits)));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void print_table(std::ostream& out, const engine::MaterializedTable& t) {
  store::CsvRow header;
  for (const auto& c : t.schema) header.emplace_back(c.name);
  store::write_csv_row(out, header);
  for (const auto& row : t.rows) {
    store::CsvRow fields;
    for (const auto& v : row.values) {
      if (is_null(v)) {
        fields.emplace_back(std::nullopt);
      } else {
        fields.emplace_back(format_value(v));
      }
    }
    store::write_csv_row(out, fields);
  }
}

std::string record_text(const store::Store& s, const VersionMeta& meta, RecordId rid) {
  const Record& rec = s.record(rid);
  std::string text;
  for (AttrId id : meta.attributes) {
    const auto col = s.column_index(s.attribute(id).name);
    if (!text.empty()) text += ',';
    text += col ? format_value(rec.at(*col)) : std::string{};
  }
  return text;
}

struct Args {
  // init
  std::string cvd;
  std::string csv_file;
  std::string schema_file;
  std::string pk;
  std::string message;
  bool message_given = false;
  // checkout / commit
  std::vector<std::string> versions;
  std::string table;
  // diff
  std::vector<std::string> pair;
  // optimize
  std::string gamma = "2x";
  double mu = 1.5;
  std::optional<double> delta;
  std::uint32_t check_every = 1;
  // run
  std::string version;
  std::string where;
  // bench
  std::string config;
  std::string out_file;
};

int cmd_init(const Args& a, std::ostream& out) {
  const fs::path dir = cvd_dir(a.cvd);
  if (fs::exists(dir)) fail(ErrorCode::kParameter, "CVD '" + a.cvd + "' already exists");
  const auto schema = store::read_schema_file(a.schema_file);
  const auto table = store::read_csv_table(a.csv_file, schema);
  fs::create_directories(store_root());
  store::Store s = store::Store::init(dir, schema, split_list(a.pk), table.rows,
                                      a.message_given ? a.message : "initial version");
  out << "initialized " << a.cvd << " with " << vname(VersionId(1)) << " (" << s.entry(VersionId(1)).rlist.size()
      << " records)\n";
  return 0;
}

int cmd_checkout(const Args& a, std::ostream& out) {
  if (a.table.empty() == a.csv_file.empty()) fail(ErrorCode::kParameter, "give exactly one of -t or -f");
  store::Store s = open_cvd(a.cvd);
  std::vector<VersionId> vids;
  for (const auto& v : a.versions) vids.push_back(parse_vid(v));
  engine::CheckoutTarget target;
  if (!a.table.empty()) {
    target.table = a.table;
  } else {
    target.csv = fs::path(a.csv_file);
  }
  const auto t = engine::checkout(s, vids, target);
  out << "checked out";
  for (VersionId v : vids) out << ' ' << vname(v);
  out << " to " << (a.table.empty() ? a.csv_file : a.table) << " (" << t.rows.size() << " rows)\n";
  return 0;
}

// Finds the CVD that holds the staging entry when none is named.
std::string owner_of(const std::string& staged) {
  std::vector<std::string> owners;
  for (const auto& name : engine::list_cvds(store_root())) {
    if (store::Store::open(store_root() / name).staging().count(staged)) owners.push_back(name);
  }
  if (owners.empty()) fail(ErrorCode::kOrphanTable, "'" + staged + "' was not checked out from any CVD");
  if (owners.size() > 1) fail(ErrorCode::kParameter, "'" + staged + "' is staged in several CVDs; name one");
  return owners.front();
}

int cmd_commit(const Args& a, std::ostream& out, std::ostream& err) {
  if (a.table.empty() == a.csv_file.empty()) fail(ErrorCode::kParameter, "give exactly one of -t or -f");
  if (!a.csv_file.empty() && a.schema_file.empty()) fail(ErrorCode::kParameter, "schema file required");
  const std::string staged = a.table.empty() ? engine::staging_name_for_csv(a.csv_file) : a.table;
  store::Store s = open_cvd(a.cvd.empty() ? owner_of(staged) : a.cvd);
  std::optional<std::vector<store::ColumnSpec>> schema;
  if (!a.schema_file.empty()) schema = store::read_schema_file(a.schema_file);
  const auto table = engine::load_staged(s, staged, schema);
  if (a.message.empty()) err << "warning: empty commit message\n";
  const auto r = engine::commit(s, table, a.message);
  out << "committed " << vname(r.vid) << " (" << r.new_records << " new records, partition " << r.partition
      << (r.new_partition ? ", new" : "") << ")\n";
  if (r.maintenance.migrated) {
    out << "migrated partitions: wrote " << r.maintenance.written << " rows (rebuild would write "
        << r.maintenance.naive_written << ")\n";
  }
  return 0;
}

int cmd_diff(const Args& a, std::ostream& out) {
  if (a.pair.size() != 2) fail(ErrorCode::kParameter, "diff needs two versions");
  store::Store s = open_cvd(a.cvd);
  const VersionId va = parse_vid(a.pair[0]);
  const VersionId vb = parse_vid(a.pair[1]);
  const auto d = engine::diff(s, va, vb);
  out << "only in " << vname(va) << ": " << d.only_in_a.size() << "\n";
  for (RecordId rid : d.only_in_a) out << "- " << rid.value << '\t' << record_text(s, s.meta(va), rid) << '\n';
  out << "only in " << vname(vb) << ": " << d.only_in_b.size() << "\n";
  for (RecordId rid : d.only_in_b) out << "+ " << rid.value << '\t' << record_text(s, s.meta(vb), rid) << '\n';
  return 0;
}

int cmd_ls(const Args& a, std::ostream& out) {
  if (a.cvd.empty()) {
    for (const auto& name : engine::list_cvds(store_root())) out << name << '\n';
    return 0;
  }
  store::Store s = open_cvd(a.cvd);
  for (const auto& [vid, meta] : s.metadata()) {
    std::string parents;
    for (VersionId p : meta.parents) parents += (parents.empty() ? "" : ",") + vname(p);
    out << vname(vid) << '\t' << (parents.empty() ? "-" : parents) << '\t' << "partition=" << s.entry(vid).partition
        << '\t' << "records=" << s.entry(vid).rlist.size() << '\t' << meta.message << '\n';
  }
  for (const auto& [name, entry] : s.staging()) {
    out << "staged\t" << name << '\t';
    for (std::size_t i = 0; i < entry.parent_vids.size(); ++i) out << (i ? "," : "") << vname(entry.parent_vids[i]);
    out << '\n';
  }
  return 0;
}

int cmd_drop(const Args& a, std::ostream& out, std::ostream& err) {
  cvd_dir(a.cvd);
  const std::size_t purged = engine::drop_cvd(store_root(), a.cvd);
  if (purged) err << "warning: discarded " << purged << " staged table(s)\n";
  out << "dropped " << a.cvd << '\n';
  return 0;
}

int cmd_optimize(const Args& a, std::ostream& out) {
  store::Store s = open_cvd(a.cvd);
  maintain::MaintenancePolicy policy;
  policy.gamma = maintain::Budget::parse(a.gamma);
  policy.mu = a.mu;
  policy.check_every = a.check_every;
  if (a.delta && !(*a.delta > 0.0 && *a.delta <= 1.0)) fail(ErrorCode::kParameter, "delta must lie in (0, 1]");

  const VersionGraph graph = maintain::store_graph(s);
  const VersionGraph tree = graph.is_tree() ? graph : dag_to_tree(graph).tree;
  const double gamma = policy.gamma.resolve(graph.n_records());
  partition::PartitioningScheme scheme;
  if (a.delta) {
    scheme = partition::lyresplit(tree, *a.delta);
    policy.delta_star = *a.delta;
  } else {
    auto res = partition::binary_search_delta(tree, gamma);
    scheme = std::move(res.scheme);
    policy.delta_star = res.delta;
  }
  policy.validate();
  scheme = partition::recount(std::move(scheme), s.versioning());
  const auto report = maintain::migrate_to(s, scheme, policy);
  const auto cost = partition::estimate_costs(scheme);
  nlohmann::json j{{"gamma", gamma},
                   {"delta", policy.delta_star},
                   {"partitions", scheme.partitions.size()},
                   {"storage", cost.storage},
                   {"checkout_avg", cost.checkout_avg},
                   {"written", report.written},
                   {"naive_written", report.naive_written}};
  out << j.dump() << '\n';
  return 0;
}

int cmd_run(const Args& a, std::ostream& out) {
  store::Store s = open_cvd(a.cvd);
  const auto predicate = a.where.empty() ? std::vector<engine::Condition>{} : engine::parse_predicate(a.where);
  print_table(out, engine::scan_version(s, parse_vid(a.version), predicate));
  return 0;
}

int cmd_bench(const Args& a, std::ostream& out) {
  std::ifstream in(a.config);
  if (!in) fail(ErrorCode::kNotFound, "cannot open " + a.config);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, a.config + ": " + e.what());
  }
  const auto rows = bench::run_partition_experiment(bench::experiment_from_json(j));
  if (a.out_file.empty()) {
    bench::write_experiment_csv(out, rows);
    return 0;
  }
  std::ofstream f(a.out_file);
  if (!f) fail(ErrorCode::kIo, "cannot write " + a.out_file);
  bench::write_experiment_csv(f, rows);
  out << "wrote " << rows.size() << " rows to " << a.out_file << '\n';
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Version control for tabular datasets", "cvd"};
  app.require_subcommand(1);
  Args a;

  auto* init = app.add_subcommand("init", "create a CVD from a CSV file");
  init->add_option("cvd", a.cvd, "CVD name")->required();
  init->add_option("-f,--file", a.csv_file, "initial CSV data")->required();
  init->add_option("-s,--schema", a.schema_file, "schema file (name:type per line)")->required();
  init->add_option("--pk", a.pk, "comma-separated primary key columns");
  auto* init_msg = init->add_option("-m,--message", a.message, "message for v1");

  auto* checkout = app.add_subcommand("checkout", "materialize versions into a table or CSV file");
  checkout->add_option("cvd", a.cvd, "CVD name")->required();
  checkout->add_option("-v,--version", a.versions, "versions in precedence order")->required()->expected(1, -1);
  checkout->add_option("-t,--table", a.table, "staging table name");
  checkout->add_option("-f,--file", a.csv_file, "CSV file to write");

  auto* commit = app.add_subcommand("commit", "commit a checked-out table as a new version");
  commit->add_option("cvd", a.cvd, "CVD name (found from the staging area when omitted)");
  commit->add_option("-t,--table", a.table, "staging table name");
  commit->add_option("-f,--file", a.csv_file, "CSV file checked out earlier");
  commit->add_option("-s,--schema", a.schema_file, "schema file for the CSV");
  auto* commit_msg = commit->add_option("-m,--message", a.message, "commit message");

  auto* diff = app.add_subcommand("diff", "records that differ between two versions");
  diff->add_option("cvd", a.cvd, "CVD name")->required();
  diff->add_option("versions", a.pair, "two versions")->expected(2)->required();

  auto* ls = app.add_subcommand("ls", "list CVDs, or the versions of one CVD");
  ls->add_option("cvd", a.cvd, "CVD name");

  auto* drop = app.add_subcommand("drop", "delete a CVD");
  drop->add_option("cvd", a.cvd, "CVD name")->required();

  auto* optimize = app.add_subcommand("optimize", "repartition under a storage budget and set the policy");
  optimize->add_option("cvd", a.cvd, "CVD name")->required();
  optimize->add_option("--gamma", a.gamma, "storage budget: records, or a multiple such as 2x");
  optimize->add_option("--mu", a.mu, "tolerance factor for online maintenance");
  optimize->add_option("--delta", a.delta, "fixed split parameter instead of the budget search");
  optimize->add_option("--check-every", a.check_every, "commits between maintenance checks")
      ->check(CLI::PositiveNumber);

  auto* run = app.add_subcommand("run", "filter the records of one version");
  run->add_option("cvd", a.cvd, "CVD name")->required();
  run->add_option("--version", a.version, "version to scan")->required();
  run->add_option("--where", a.where, "conditions such as \"a>5,b=x\"");

  auto* bench = app.add_subcommand("bench", "run a partitioning experiment");
  bench->add_option("--config", a.config, "experiment JSON")->required();
  bench->add_option("--out", a.out_file, "CSV output (stdout when omitted)");

  std::vector<const char*> argv{"cvd"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    if (msg.empty()) msg = "invalid arguments";
    err << "error: " << msg << '\n';
    return 1;
  }
  a.message_given = init_msg->count() > 0 || commit_msg->count() > 0;

  try {
    if (init->parsed()) return cmd_init(a, out);
    if (checkout->parsed()) return cmd_checkout(a, out);
    if (commit->parsed()) return cmd_commit(a, out, err);
    if (diff->parsed()) return cmd_diff(a, out);
    if (ls->parsed()) return cmd_ls(a, out);
    if (drop->parsed()) return cmd_drop(a, out, err);
    if (optimize->parsed()) return cmd_optimize(a, out);
    if (run->parsed()) return cmd_run(a, out);
    if (bench->parsed()) return cmd_bench(a, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.is_corruption() ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace cvd::cli
