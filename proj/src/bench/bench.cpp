#include "cvd/bench/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <unordered_set>

#include "cvd/baselines/baselines.hpp"
#include "cvd/core/error.hpp"
#include "cvd/core/version_graph.hpp"
#include "cvd/maintain/maintain.hpp"
#include "cvd/partition/lyresplit.hpp"
#include "cvd/partition/scheme.hpp"

namespace cvd::bench {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string kind_name(WorkloadKind k) { return k == WorkloadKind::kSci ? "sci" : "cur"; }

WorkloadKind parse_kind(const std::string& s) {
  if (s == "sci" || s == "SCI") return WorkloadKind::kSci;
  if (s == "cur" || s == "CUR") return WorkloadKind::kCur;
  fail(ErrorCode::kParameter, "unknown workload kind '" + s + "'");
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& what) {
  if (!j.is_object()) fail(ErrorCode::kParameter, what + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      fail(ErrorCode::kParameter, "unknown " + what + " key '" + key + "'");
    }
  }
}

}  // namespace

void WorkloadConfig::validate() const {
  if (branches < 1) fail(ErrorCode::kParameter, "branches must be at least 1");
  if (changes_per_commit < 1) fail(ErrorCode::kParameter, "changes per commit must be at least 1");
  if (versions_per_branch < 1) fail(ErrorCode::kParameter, "versions per branch must be at least 1");
  if (attributes < 1) fail(ErrorCode::kParameter, "at least the key attribute is required");
  if (!(update_fraction >= 0.0 && update_fraction <= 1.0)) fail(ErrorCode::kParameter, "update fraction must lie in [0, 1]");
  if (!(delete_fraction >= 0.0 && delete_fraction <= 1.0)) fail(ErrorCode::kParameter, "delete fraction must lie in [0, 1]");
}

json to_json(const WorkloadConfig& c) {
  return json{{"kind", kind_name(c.kind)},
              {"branches", c.branches},
              {"target_records", c.target_records},
              {"changes_per_commit", c.changes_per_commit},
              {"versions_per_branch", c.versions_per_branch},
              {"attributes", c.attributes},
              {"update_fraction", c.update_fraction},
              {"delete_fraction", c.delete_fraction},
              {"seed", c.seed}};
}

WorkloadConfig workload_from_json(const json& j) {
  reject_unknown(j,
                 {"kind", "branches", "target_records", "changes_per_commit", "versions_per_branch",
                  "attributes", "update_fraction", "delete_fraction", "seed"},
                 "workload");
  WorkloadConfig c;
  try {
    if (j.contains("kind")) c.kind = parse_kind(j.at("kind").get<std::string>());
    c.branches = j.value("branches", c.branches);
    c.target_records = j.value("target_records", c.target_records);
    c.changes_per_commit = j.value("changes_per_commit", c.changes_per_commit);
    c.versions_per_branch = j.value("versions_per_branch", c.versions_per_branch);
    c.attributes = j.value("attributes", c.attributes);
    c.update_fraction = j.value("update_fraction", c.update_fraction);
    c.delete_fraction = j.value("delete_fraction", c.delete_fraction);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    fail(ErrorCode::kParameter, std::string("bad workload config: ") + e.what());
  }
  c.validate();
  return c;
}

std::size_t Workload::merge_count() const {
  return static_cast<std::size_t>(
      std::count_if(versions.begin(), versions.end(), [](const WorkloadVersion& v) { return v.parents.size() > 1; }));
}

std::vector<store::ColumnSpec> Workload::schema() const {
  std::vector<store::ColumnSpec> s{{"id", DataType::kInteger}};
  for (std::uint32_t j = 1; j < config.attributes; ++j) s.push_back({"a" + std::to_string(j), DataType::kInteger});
  return s;
}

std::vector<Value> Workload::tuple_values(std::uint64_t tuple) const {
  std::vector<Value> v;
  v.reserve(config.attributes);
  v.emplace_back(keys.at(tuple));
  for (std::uint32_t j = 1; j < config.attributes; ++j) {
    v.emplace_back(static_cast<std::int64_t>(mix(config.seed ^ mix(tuple * 1315423911ULL + j)) % 1000));
  }
  return v;
}

Workload generate_workload(const WorkloadConfig& config) {
  config.validate();
  Workload w;
  w.config = config;
  std::mt19937_64 rng(config.seed);

  const std::uint64_t changes = config.changes_per_commit;
  const auto n_updates = static_cast<std::uint64_t>(std::lround(config.update_fraction * static_cast<double>(changes)));
  const std::uint64_t n_inserts = changes - std::min(changes, n_updates);
  const auto n_deletes = static_cast<std::uint64_t>(std::lround(config.delete_fraction * static_cast<double>(changes)));
  const std::uint64_t n_commits = std::uint64_t{config.branches} * config.versions_per_branch;
  const std::uint64_t grown = n_commits * changes;
  const std::uint64_t root_size = std::max(changes, config.target_records > grown ? config.target_records - grown : 0);

  std::int64_t next_key = 0;
  auto new_tuple = [&](std::int64_t key) {
    w.keys.push_back(key);
    return static_cast<std::uint64_t>(w.keys.size() - 1);
  };
  WorkloadVersion root;
  for (std::uint64_t i = 0; i < root_size; ++i) root.tuples.push_back(new_tuple(next_key++));
  w.versions.push_back(std::move(root));

  auto derive = [&](std::size_t parent) {
    WorkloadVersion v;
    v.parents = {parent};
    v.tuples = w.versions[parent].tuples;
    for (std::uint64_t d = 0; d < n_deletes && v.tuples.size() > 1; ++d) {
      std::uniform_int_distribution<std::size_t> pos(0, v.tuples.size() - 1);
      v.tuples.erase(v.tuples.begin() + static_cast<std::ptrdiff_t>(pos(rng)));
    }
    std::vector<std::size_t> positions;
    std::vector<std::size_t> all(v.tuples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::sample(all.begin(), all.end(), std::back_inserter(positions), n_updates, rng);
    for (std::size_t p : positions) v.tuples[p] = new_tuple(w.keys[v.tuples[p]]);
    for (std::uint64_t i = 0; i < n_inserts; ++i) v.tuples.push_back(new_tuple(next_key++));
    w.versions.push_back(std::move(v));
    return w.versions.size() - 1;
  };
  auto chain = [&](std::size_t from) {
    std::size_t head = from;
    for (std::uint32_t i = 0; i < config.versions_per_branch; ++i) head = derive(head);
    return head;
  };

  if (config.kind == WorkloadKind::kSci) {
    chain(0);
    for (std::uint32_t b = 1; b < config.branches; ++b) {
      std::uniform_int_distribution<std::size_t> fork(0, w.versions.size() - 1);
      chain(fork(rng));
    }
    return w;
  }

  // CUR: every branch merges back into the head of the branch it forked from.
  std::vector<std::vector<std::size_t>> on_branch(config.branches);
  std::vector<std::size_t> heads(config.branches);
  on_branch[0].push_back(0);
  heads[0] = chain(0);
  for (std::size_t i = 1; i < w.versions.size(); ++i) on_branch[0].push_back(i);
  for (std::uint32_t b = 1; b < config.branches; ++b) {
    std::uniform_int_distribution<std::uint32_t> pick_branch(0, b - 1);
    const std::uint32_t pb = pick_branch(rng);
    std::uniform_int_distribution<std::size_t> fork(0, on_branch[pb].size() - 1);
    const std::size_t start = w.versions.size();
    heads[b] = chain(on_branch[pb][fork(rng)]);
    for (std::size_t i = start; i < w.versions.size(); ++i) on_branch[b].push_back(i);

    WorkloadVersion merge;
    merge.parents = {heads[b], heads[pb]};
    merge.tuples = w.versions[heads[b]].tuples;
    std::unordered_set<std::int64_t> keys;
    for (std::uint64_t t : merge.tuples) keys.insert(w.keys[t]);
    for (std::uint64_t t : w.versions[heads[pb]].tuples) {
      if (!keys.count(w.keys[t])) merge.tuples.push_back(t);
    }
    w.versions.push_back(std::move(merge));
    heads[pb] = w.versions.size() - 1;
    on_branch[pb].push_back(heads[pb]);
  }
  return w;
}

InMemoryWorkload materialize_in_memory(const Workload& workload) {
  InMemoryWorkload out;
  for (std::size_t i = 0; i < workload.versions.size(); ++i) {
    const auto& v = workload.versions[i];
    const VersionId vid(static_cast<std::uint32_t>(i + 1));
    VersionEntry e;
    e.rlist.reserve(v.tuples.size());
    for (std::uint64_t t : v.tuples) e.rlist.emplace_back(t + 1);
    out.versioning.emplace(vid, std::move(e));
    auto& ps = out.parents[vid];
    for (std::size_t p : v.parents) ps.emplace_back(static_cast<std::uint32_t>(p + 1));
  }
  return out;
}

Replayer::Replayer(const Workload& workload, const fs::path& dir, store::StoreOptions options)
    : workload_(&workload), rid_of_(workload.n_tuples()) {
  const auto& root = workload.versions.at(0);
  std::vector<std::vector<Value>> rows;
  rows.reserve(root.tuples.size());
  for (std::uint64_t t : root.tuples) rows.push_back(workload.tuple_values(t));
  store_.emplace(store::Store::init(dir, workload.schema(), {"id"}, rows, "root", options));
  const auto& rl = store_->entry(VersionId(1)).rlist;
  for (std::size_t r = 0; r < rl.size(); ++r) rid_of_[root.tuples[r]] = rl[r];
}

engine::CommitResult Replayer::step(engine::CommitOptions options) {
  if (done()) fail(ErrorCode::kParameter, "workload fully replayed");
  const std::size_t index = next_;
  const auto& v = workload_->versions[index];
  engine::MaterializedTable table;
  table.name = "replay";
  table.schema = workload_->schema();
  for (std::size_t p : v.parents) table.provenance.parent_vids.emplace_back(static_cast<std::uint32_t>(p + 1));
  table.rows.reserve(v.tuples.size());
  for (std::uint64_t t : v.tuples) {
    engine::Row row;
    if (rid_of_[t].value != 0) row.rid = rid_of_[t];
    row.values = workload_->tuple_values(t);
    table.rows.push_back(std::move(row));
  }
  options.require_staging = false;
  options.match_unhinted_rows = false;
  auto result = engine::commit(*store_, table, "commit " + std::to_string(index), options);
  if (result.vid != VersionId(static_cast<std::uint32_t>(index + 1))) {
    fail(ErrorCode::kConsistency, "replay expects an otherwise untouched store");
  }
  const auto& rl = store_->entry(result.vid).rlist;
  for (std::size_t r = 0; r < rl.size(); ++r) {
    if (rid_of_[v.tuples[r]].value == 0) rid_of_[v.tuples[r]] = rl[r];
  }
  ++next_;
  return result;
}

store::Store apply_to_engine(const Workload& workload, const fs::path& dir, store::StoreOptions options) {
  Replayer replay(workload, dir, options);
  while (!replay.done()) replay.step();
  return replay.release();
}

std::string to_string(DataModel m) {
  switch (m) {
    case DataModel::kCombinedTable: return "combined-table";
    case DataModel::kSplitByVlist: return "split-by-vlist";
    case DataModel::kSplitByRlist: return "split-by-rlist";
    case DataModel::kDelta: return "delta";
    case DataModel::kTablePerVersion: return "table-per-version";
  }
  return "unknown";
}

ModelCostReport compare_models(const VersioningTable& versioning,
                               const std::map<VersionId, std::vector<VersionId>>& parents,
                               std::uint32_t width, std::uint32_t key_width, const CommitScenario& scenario) {
  if (versioning.empty()) fail(ErrorCode::kEmptyScope, "no versions to compare");
  std::unordered_set<RecordId> all;
  std::uint64_t edges = 0;
  std::map<VersionId, std::vector<RecordId>> sorted;
  for (const auto& [vid, e] : versioning) {
    all.insert(e.rlist.begin(), e.rlist.end());
    edges += e.rlist.size();
    auto r = e.rlist;
    std::sort(r.begin(), r.end());
    sorted.emplace(vid, std::move(r));
  }
  const std::uint64_t n_records = all.size();
  const std::uint64_t n_versions = versioning.size();
  const VersionId target = scenario.version.value_or(versioning.rbegin()->first);
  if (!versioning.count(target)) fail(ErrorCode::kNotFound, "scenario version is not in the table");
  const std::uint64_t checked_out = versioning.at(target).rlist.size();
  if (scenario.deleted > checked_out) fail(ErrorCode::kParameter, "cannot delete more records than checked out");
  const std::uint64_t committed = checked_out - scenario.deleted + scenario.inserted;

  auto first_parent = [&](VersionId v) -> std::optional<VersionId> {
    auto it = parents.find(v);
    if (it == parents.end() || it->second.empty()) return std::nullopt;
    return it->second.front();
  };
  // Per-version delta against the first parent: (added, deleted).
  auto delta_of = [&](VersionId v) -> std::pair<std::uint64_t, std::uint64_t> {
    const auto p = first_parent(v);
    const auto& rv = sorted.at(v);
    if (!p) return {rv.size(), 0};
    const auto& rp = sorted.at(*p);
    const std::uint64_t common = intersection_size(rv, rp);
    return {rv.size() - common, rp.size() - common};
  };

  std::uint64_t delta_storage = 0;
  for (const auto& [vid, _] : versioning) {
    const auto [added, deleted] = delta_of(vid);
    delta_storage += first_parent(vid) ? added * width + deleted * key_width : added * width;
  }
  std::uint64_t delta_checkout = 0;
  for (std::optional<VersionId> v = target; v; v = first_parent(*v)) {
    const auto [added, deleted] = delta_of(*v);
    delta_checkout += added + deleted;
  }

  ModelCostReport report;
  report.models[DataModel::kCombinedTable] = {n_records * width + edges, committed, n_records};
  report.models[DataModel::kSplitByVlist] = {n_records * (width + 1) + n_records + edges,
                                             committed + scenario.inserted, 2 * n_records};
  report.models[DataModel::kSplitByRlist] = {n_records * (width + 1) + n_versions + edges, 1 + scenario.inserted,
                                             n_records + 1};
  report.models[DataModel::kDelta] = {delta_storage, scenario.inserted + scenario.deleted, delta_checkout};
  report.models[DataModel::kTablePerVersion] = {edges * width, committed, checked_out};
  return report;
}

ExperimentConfig experiment_from_json(const json& j) {
  reject_unknown(j, {"workload", "gammas", "algorithms", "samples", "seed", "timeout_seconds", "store_dir"},
                 "experiment");
  ExperimentConfig c;
  try {
    if (j.contains("workload")) c.workload = workload_from_json(j.at("workload"));
    if (j.contains("gammas")) c.gammas = j.at("gammas").get<std::vector<double>>();
    if (j.contains("algorithms")) c.algorithms = j.at("algorithms").get<std::vector<std::string>>();
    c.samples = j.value("samples", c.samples);
    c.seed = j.value("seed", c.seed);
    if (j.contains("timeout_seconds")) c.timeout_seconds = j.at("timeout_seconds").get<double>();
    if (j.contains("store_dir")) c.store_dir = fs::path(j.at("store_dir").get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorCode::kParameter, std::string("bad experiment config: ") + e.what());
  }
  for (const auto& a : c.algorithms) {
    if (a != "lyresplit" && a != "agglo" && a != "kmeans" && a != "none") {
      fail(ErrorCode::kParameter, "unknown algorithm '" + a + "'");
    }
  }
  for (double g : c.gammas) {
    if (!(g >= 1.0)) fail(ErrorCode::kParameter, "gamma multiples must be at least 1");
  }
  if (c.samples < 1) fail(ErrorCode::kParameter, "samples must be at least 1");
  return c;
}

std::vector<ExperimentRow> run_partition_experiment(const ExperimentConfig& config) {
  using Clock = std::chrono::steady_clock;
  const Workload workload = generate_workload(config.workload);

  fs::path dir;
  bool temporary = false;
  if (config.store_dir) {
    dir = *config.store_dir;
  } else {
    std::random_device rd;
    dir = fs::temp_directory_path() / ("cvd-bench-" + std::to_string(rd()) + std::to_string(rd()));
    temporary = true;
  }
  if (fs::exists(dir)) {
    if (!store::is_cvd_directory(dir)) fail(ErrorCode::kParameter, dir.string() + " exists and is not a CVD");
    fs::remove_all(dir);
  }

  std::vector<ExperimentRow> rows;
  try {
    store::Store store = apply_to_engine(workload, dir, store::StoreOptions{false});
    const VersioningTable versioning = store.versioning();
    const VersionGraph graph = maintain::store_graph(store);
    const VersionGraph tree = graph.is_tree() ? graph : dag_to_tree(graph).tree;
    const std::uint64_t n_records = bipartite_stats(graph).n_records;
    std::vector<VersionId> vids;
    for (const auto& [vid, _] : versioning) vids.push_back(vid);

    for (double multiple : config.gammas) {
      const double gamma = multiple * static_cast<double>(n_records);
      for (const auto& algorithm : config.algorithms) {
        ExperimentRow row;
        row.algorithm = algorithm;
        row.gamma = gamma;
        const auto start = Clock::now();
        std::optional<partition::PartitioningScheme> scheme;
        if (algorithm == "lyresplit") {
          auto res = partition::binary_search_delta(tree, gamma);
          scheme = partition::recount(std::move(res.scheme), versioning);
          row.knob = res.delta;
        } else if (algorithm == "none") {
          scheme = partition::single_partition_scheme(versioning);
        } else {
          baselines::BaselineConfig bc;
          bc.algorithm = algorithm == "agglo" ? baselines::Algorithm::kAgglo : baselines::Algorithm::kKMeans;
          bc.seed = config.seed;
          bc.timeout_seconds = config.timeout_seconds;
          try {
            auto res = baselines::search_budget(versioning, gamma, bc);
            row.knob = res.knob;
            row.timed_out = res.timed_out;
            if (!res.scheme.partitions.empty()) scheme = std::move(res.scheme);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::kInfeasibleBudget) throw;
            // Report the baseline's smallest layout so the overshoot is visible.
            row.within_budget = false;
            if (bc.algorithm == baselines::Algorithm::kAgglo) {
              bc.capacity = n_records;
              row.knob = static_cast<double>(n_records);
              scheme = baselines::agglo(versioning, bc);
            } else {
              bc.k = 1;
              row.knob = 1;
              scheme = baselines::kmeans(versioning, bc);
            }
          }
        }
        row.partition_seconds = std::chrono::duration<double>(Clock::now() - start).count();
        if (scheme) {
          maintain::migrate_to(store, *scheme);
          row.storage = store.storage();
          row.checkout_avg = partition::estimate_costs(*scheme).checkout_avg;
          std::mt19937_64 rng(config.seed);
          std::uniform_int_distribution<std::size_t> pick(0, vids.size() - 1);
          std::uint64_t reads = 0;
          for (std::uint32_t s = 0; s < config.samples; ++s) {
            const VersionId v = vids[pick(rng)];
            reads += engine::materialize(store, std::span<const VersionId>(&v, 1)).records_read;
          }
          row.checkout_reads = static_cast<double>(reads) / config.samples;
        }
        rows.push_back(std::move(row));
      }
    }
  } catch (...) {
    if (temporary) fs::remove_all(dir);
    throw;
  }
  if (temporary) fs::remove_all(dir);

  std::sort(rows.begin(), rows.end(), [](const ExperimentRow& a, const ExperimentRow& b) {
    return std::tie(a.algorithm, a.gamma, a.knob) < std::tie(b.algorithm, b.gamma, b.knob);
  });
  return rows;
}

void write_experiment_csv(std::ostream& out, const std::vector<ExperimentRow>& rows) {
  out << "algorithm,knob,gamma,storage,checkout_avg,partition_seconds,checkout_reads,timed_out,within_budget\n";
  for (const auto& r : rows) {
    out << r.algorithm << ',' << r.knob << ',' << r.gamma << ',' << r.storage << ',' << r.checkout_avg << ','
        << r.partition_seconds << ',' << r.checkout_reads << ',' << (r.timed_out ? 1 : 0) << ','
        << (r.within_budget ? 1 : 0) << '\n';
  }
}

}  // namespace cvd::bench
