#include "cvd/maintain/maintain.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "cvd/core/error.hpp"
#include "cvd/partition/lyresplit.hpp"

namespace cvd::maintain {
using nlohmann::json;
using partition::PartitioningScheme;

double Budget::resolve(std::uint64_t n_records) const {
  return kind == Kind::kMultiple ? value * static_cast<double>(n_records) : value;
}

Budget Budget::parse(const std::string& text) {
  std::string s = text;
  Budget b;
  b.kind = Kind::kAbsolute;
  if (!s.empty() && (s.back() == 'x' || s.back() == 'X')) {
    b.kind = Kind::kMultiple;
    s.pop_back();
  }
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v) || v <= 0.0) {
    fail(ErrorCode::kParameter, "bad storage budget '" + text + "' (use e.g. 2x or 150000)");
  }
  if (b.kind == Kind::kMultiple && v < 1.0) {
    fail(ErrorCode::kInfeasibleBudget, "a budget below 1x |R| is infeasible");
  }
  b.value = v;
  return b;
}

std::string Budget::to_string() const {
  std::string s = format_value(Value(value));
  if (kind == Kind::kMultiple) return s + "x";
  return s;
}

void MaintenancePolicy::validate() const {
  if (!(mu > 1.0)) fail(ErrorCode::kParameter, "tolerance factor must exceed 1");
  if (!(delta_star > 0.0 && delta_star <= 1.0)) fail(ErrorCode::kParameter, "delta must lie in (0, 1]");
  if (check_every == 0) fail(ErrorCode::kParameter, "check interval must be at least 1");
  if (!(gamma.value > 0.0)) fail(ErrorCode::kParameter, "storage budget must be positive");
}

json to_json(const MaintenancePolicy& p) {
  return {{"gamma", p.gamma.to_string()},
          {"mu", p.mu},
          {"delta_star", p.delta_star},
          {"check_every", p.check_every},
          {"commits_since_check", p.commits_since_check}};
}

MaintenancePolicy policy_from_json(const json& j) {
  MaintenancePolicy p;
  p.gamma = Budget::parse(j.at("gamma").get<std::string>());
  p.mu = j.at("mu").get<double>();
  p.delta_star = j.at("delta_star").get<double>();
  p.check_every = j.at("check_every").get<std::uint32_t>();
  p.commits_since_check = j.value("commits_since_check", 0u);
  return p;
}

std::optional<MaintenancePolicy> load_policy(const store::Store& store) {
  const json& j = store.policy();
  if (j.is_null()) return std::nullopt;
  return policy_from_json(j);
}

PlacementDecision assign_on_commit(std::span<const VersionId> parents,
                                   std::span<const std::uint64_t> weights,
                                   std::span<const PartitionId> parent_partitions,
                                   std::uint64_t n_records, std::uint64_t storage,
                                   const std::optional<MaintenancePolicy>& policy) {
  PlacementDecision d;
  if (parents.empty()) {
    d.create_new = true;
    return d;
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < parents.size(); ++i) {
    if (weights[i] > weights[best] || (weights[i] == weights[best] && parents[i] < parents[best])) {
      best = i;
    }
  }
  d.anchor_parent = parents[best];
  d.anchor_weight = weights[best];
  d.partition = parent_partitions[best];
  if (policy) {
    const double limit = policy->delta_star * static_cast<double>(n_records);
    const double gamma = policy->gamma.resolve(n_records);
    d.create_new = static_cast<double>(d.anchor_weight) <= limit && static_cast<double>(storage) < gamma;
  }
  return d;
}

VersionGraph store_graph(const store::Store& store) {
  std::map<VersionId, std::uint64_t> counts;
  std::vector<VersionGraph::EdgeSpec> edges;
  const auto& versioning = store.versioning();
  for (const auto& [vid, e] : versioning) counts[vid] = e.rlist.size();
  for (const auto& [vid, m] : store.metadata()) {
    for (std::size_t i = 0; i < m.parents.size(); ++i) {
      std::uint64_t w = 0;
      if (i < m.parent_weights.size()) {
        w = m.parent_weights[i];
      } else {
        w = intersection_size(store.entry(m.parents[i]).rlist, store.entry(vid).rlist);
      }
      edges.push_back({m.parents[i], vid, w});
    }
  }
  std::unordered_set<RecordId> distinct;
  for (const auto& [vid, e] : versioning) distinct.insert(e.rlist.begin(), e.rlist.end());
  return VersionGraph::from_counts(counts, edges, distinct.size());
}

PartitioningScheme current_scheme(const store::Store& store) {
  PartitioningScheme s;
  std::map<PartitionId, partition::Partition> parts;
  for (const auto& [vid, e] : store.versioning()) {
    auto& p = parts[e.partition];
    p.id = e.partition;
    p.versions.push_back(vid);
    p.edge_count += e.rlist.size();
    s.assignment[vid] = e.partition;
  }
  for (auto& [pid, p] : parts) {
    p.record_count = store.segment_size(pid);
    s.partitions.push_back(std::move(p));
  }
  return s;
}

CheckResult maintenance_check(const PartitioningScheme& current, const VersionGraph& graph,
                              const VersioningTable& versioning, const MaintenancePolicy& policy) {
  CheckResult r;
  r.gamma = policy.gamma.resolve(graph.n_records());
  const VersionGraph tree = graph.is_tree() ? graph : dag_to_tree(graph).tree;
  auto search = partition::binary_search_delta(tree, r.gamma);
  r.delta = search.delta;
  r.target = partition::recount(std::move(search.scheme), versioning);
  r.current_checkout = current.checkout_avg();
  r.best_checkout = r.target.checkout_avg();
  r.migrate = r.current_checkout > policy.mu * r.best_checkout;
  return r;
}

namespace {

std::vector<RecordId> union_of(const VersioningTable& versioning, std::span<const VersionId> vids) {
  std::unordered_set<RecordId> set;
  for (VersionId v : vids) {
    const auto& rl = versioning.at(v).rlist;
    set.insert(rl.begin(), rl.end());
  }
  std::vector<RecordId> out(set.begin(), set.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

MigrationPlan plan_migration(const PartitioningScheme& old_scheme, const SegmentMap& old_segments,
                             const PartitioningScheme& new_scheme, const VersioningTable& versioning,
                             PartitionId next_free_id) {
  if (new_scheme.assignment.size() != versioning.size()) {
    fail(ErrorCode::kConsistency, "target scheme does not cover the stored versions");
  }
  for (const auto& [vid, e] : versioning) {
    if (!new_scheme.assignment.count(vid)) {
      fail(ErrorCode::kConsistency, "target scheme misses v" + std::to_string(vid.value));
    }
  }
  for (const auto& [vid, pid] : old_scheme.assignment) {
    if (!new_scheme.assignment.count(vid)) {
      fail(ErrorCode::kConsistency, "target scheme drops v" + std::to_string(vid.value));
    }
    if (!old_segments.count(pid)) fail(ErrorCode::kConsistency, "old partition without segment");
  }

  const std::size_t n_new = new_scheme.partitions.size();
  std::vector<std::vector<RecordId>> targets(n_new);
  std::unordered_map<PartitionId, std::size_t> new_index;
  for (std::size_t i = 0; i < n_new; ++i) {
    targets[i] = union_of(versioning, new_scheme.partitions[i].versions);
    new_index[new_scheme.partitions[i].id] = i;
  }

  // Approximate common records per (new, old) pair from shared versions.
  std::map<std::pair<std::size_t, PartitionId>, std::vector<VersionId>> shared;
  for (const auto& [vid, pid] : old_scheme.assignment) {
    shared[{new_index.at(new_scheme.assignment.at(vid)), pid}].push_back(vid);
  }
  struct Candidate {
    std::int64_t cost;
    std::size_t target;
    PartitionId source;
  };
  std::vector<Candidate> candidates;
  for (const auto& [key, vids] : shared) {
    const auto common = static_cast<std::int64_t>(union_of(versioning, vids).size());
    const auto cost = static_cast<std::int64_t>(targets[key.first].size()) +
                      static_cast<std::int64_t>(old_segments.at(key.second).size()) - 2 * common;
    candidates.push_back({cost, key.first, key.second});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.cost, a.target, a.source) < std::tie(b.cost, b.target, b.source);
  });

  std::vector<std::optional<PartitionId>> source(n_new);
  std::set<PartitionId> used;
  for (const auto& c : candidates) {
    if (source[c.target] || used.count(c.source)) continue;
    source[c.target] = c.source;
    used.insert(c.source);
  }

  MigrationPlan plan;
  std::set<PartitionId> kept;
  for (std::size_t i = 0; i < n_new; ++i) {
    PlanPair pair;
    pair.versions = new_scheme.partitions[i].versions;
    pair.target_records = targets[i].size();
    if (source[i]) {
      std::vector<RecordId> seg = old_segments.at(*source[i]);
      std::sort(seg.begin(), seg.end());
      std::set_difference(targets[i].begin(), targets[i].end(), seg.begin(), seg.end(),
                          std::back_inserter(pair.inserts));
      std::set_difference(seg.begin(), seg.end(), targets[i].begin(), targets[i].end(),
                          std::back_inserter(pair.deletes));
      if (pair.inserts.size() + pair.deletes.size() > targets[i].size()) {
        pair.inserts.clear();
        pair.deletes.clear();
      } else {
        pair.source = source[i];
        pair.target = *source[i];
        kept.insert(*source[i]);
      }
    }
    if (!pair.source) {
      pair.target = next_free_id++;
      pair.inserts = targets[i];
    }
    plan.estimated_write_cost += pair.inserts.size() + pair.deletes.size();
    plan.naive_write_cost += targets[i].size();
    plan.pairs.push_back(std::move(pair));
  }
  for (const auto& [pid, seg] : old_segments) {
    if (!kept.count(pid)) plan.dropped.push_back(pid);
  }
  return plan;
}

MigrationPlan plan_migration(const store::Store& store, const PartitioningScheme& target) {
  SegmentMap segments;
  for (PartitionId pid : store.partitions()) segments[pid] = store.segment_rids(pid);
  return plan_migration(current_scheme(store), segments, target, store.versioning(),
                        store.next_partition_id());
}

std::uint64_t execute_migration(store::Store& store, const MigrationPlan& plan,
                                std::optional<MaintenancePolicy> policy) {
  store::Mutation m;
  std::uint64_t written = 0;
  for (const auto& pair : plan.pairs) {
    if (!pair.source && !store.has_partition(pair.target)) {
      m.segments.push_back({pair.target, true, pair.inserts, {}});
    } else if (!pair.source) {
      fail(ErrorCode::kConsistency, "fresh partition id already in the store");
    } else if (!pair.inserts.empty() || !pair.deletes.empty()) {
      m.segments.push_back({pair.target, false, pair.inserts, pair.deletes});
    }
    written += pair.inserts.size() + pair.deletes.size();
    for (VersionId v : pair.versions) {
      const auto& e = store.entry(v);
      if (e.partition != pair.target) m.versioning.emplace(v, VersionEntry{pair.target, e.rlist});
    }
  }
  m.dropped_partitions = plan.dropped;
  if (policy) m.policy = to_json(*policy);
  store.apply(m);
  return written;
}

MaintenanceReport run_maintenance(store::Store& store) {
  MaintenanceReport report;
  auto policy = load_policy(store);
  if (!policy) return report;
  report.checked = true;
  report.check = maintenance_check(current_scheme(store), store_graph(store), store.versioning(), *policy);
  policy->delta_star = report.check.delta;
  policy->commits_since_check = 0;
  if (report.check.migrate) {
    const MigrationPlan plan = plan_migration(store, report.check.target);
    report.migrated = true;
    report.naive_written = plan.naive_write_cost;
    report.written = execute_migration(store, plan, policy);
  } else {
    store::Mutation m;
    m.policy = to_json(*policy);
    store.apply(m);
  }
  return report;
}

MaintenancePolicy set_policy(store::Store& store, MaintenancePolicy policy) {
  if (!(policy.mu > 1.0)) fail(ErrorCode::kParameter, "tolerance factor must exceed 1");
  const VersionGraph graph = store_graph(store);
  const VersionGraph tree = graph.is_tree() ? graph : dag_to_tree(graph).tree;
  policy.delta_star = partition::binary_search_delta(tree, policy.gamma.resolve(graph.n_records())).delta;
  policy.commits_since_check = 0;
  policy.validate();
  store::Mutation m;
  m.policy = to_json(policy);
  store.apply(m);
  return policy;
}

MaintenanceReport migrate_to(store::Store& store, const PartitioningScheme& target,
                             std::optional<MaintenancePolicy> policy) {
  MaintenanceReport report;
  const MigrationPlan plan = plan_migration(store, target);
  report.migrated = true;
  report.naive_written = plan.naive_write_cost;
  report.written = execute_migration(store, plan, std::move(policy));
  return report;
}

}  // namespace cvd::maintain
