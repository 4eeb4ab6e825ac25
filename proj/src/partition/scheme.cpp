#include "cvd/partition/scheme.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "cvd/core/error.hpp"

namespace cvd::partition {

std::uint64_t PartitioningScheme::storage() const {
  std::uint64_t s = 0;
  for (const auto& p : partitions) s += p.record_count;
  return s;
}

double PartitioningScheme::checkout_avg() const {
  if (assignment.empty()) return 0.0;
  long double total = 0;
  for (const auto& p : partitions) {
    total += static_cast<long double>(p.versions.size()) * static_cast<long double>(p.record_count);
  }
  return static_cast<double>(total / static_cast<long double>(assignment.size()));
}

const Partition& PartitioningScheme::partition(PartitionId id) const {
  for (const auto& p : partitions) {
    if (p.id == id) return p;
  }
  fail(ErrorCode::kNotFound, "unknown partition " + std::to_string(id));
}

const Partition& PartitioningScheme::partition_of(VersionId vid) const {
  auto it = assignment.find(vid);
  if (it == assignment.end()) {
    fail(ErrorCode::kNotFound, "version v" + std::to_string(vid.value) + " is not assigned");
  }
  return partition(it->second);
}

CostReport estimate_costs(const PartitioningScheme& scheme, const Frequencies& frequencies) {
  CostReport r;
  r.storage = scheme.storage();
  r.checkout_avg = scheme.checkout_avg();
  long double weighted = 0;
  long double total_f = 0;
  for (const auto& p : scheme.partitions) {
    for (VersionId vid : p.versions) {
      auto it = frequencies.find(vid);
      const long double f = it == frequencies.end() ? 1.0L : static_cast<long double>(it->second);
      weighted += f * static_cast<long double>(p.record_count);
      total_f += f;
    }
  }
  r.checkout_weighted = total_f > 0 ? static_cast<double>(weighted / total_f) : 0.0;
  return r;
}

void validate_scheme(const PartitioningScheme& scheme, const VersionGraph& graph) {
  std::set<VersionId> seen;
  std::uint64_t edges = 0;
  std::set<PartitionId> ids;
  for (const auto& p : scheme.partitions) {
    if (!ids.insert(p.id).second) {
      fail(ErrorCode::kInvariantViolation, "duplicate partition id " + std::to_string(p.id));
    }
    if (p.versions.empty()) fail(ErrorCode::kInvariantViolation, "empty partition");
    for (VersionId v : p.versions) {
      if (!seen.insert(v).second) {
        fail(ErrorCode::kInvariantViolation, "version assigned to two partitions");
      }
      if (!graph.contains(v)) fail(ErrorCode::kInvariantViolation, "scheme names unknown version");
      auto a = scheme.assignment.find(v);
      if (a == scheme.assignment.end() || a->second != p.id) {
        fail(ErrorCode::kInvariantViolation, "assignment map disagrees with partitions");
      }
    }
    edges += p.edge_count;
  }
  if (seen.size() != graph.size() || scheme.assignment.size() != graph.size()) {
    fail(ErrorCode::kInvariantViolation, "scheme does not cover every version");
  }
  if (edges != graph.n_bipartite_edges()) {
    fail(ErrorCode::kInvariantViolation, "partition edge counts do not sum to |E|");
  }
}

PartitioningScheme scheme_from_assignment(const std::map<VersionId, PartitionId>& assignment,
                                          const VersioningTable& versioning) {
  PartitioningScheme scheme;
  scheme.assignment = assignment;
  std::map<PartitionId, Partition> parts;
  for (const auto& [vid, pid] : assignment) {
    auto& p = parts[pid];
    p.id = pid;
    p.versions.push_back(vid);
  }
  for (auto& [pid, p] : parts) scheme.partitions.push_back(std::move(p));
  return recount(std::move(scheme), versioning);
}

PartitioningScheme recount(PartitioningScheme scheme, const VersioningTable& versioning) {
  for (auto& p : scheme.partitions) {
    std::sort(p.versions.begin(), p.versions.end());
    const auto stats = bipartite_stats(versioning, p.versions);
    p.record_count = stats.n_records;
    p.edge_count = stats.n_edges;
  }
  return scheme;
}

PartitioningScheme single_partition_scheme(const VersioningTable& versioning) {
  std::map<VersionId, PartitionId> a;
  for (const auto& [vid, e] : versioning) a[vid] = 0;
  return scheme_from_assignment(a, versioning);
}

PartitioningScheme per_version_scheme(const VersioningTable& versioning) {
  std::map<VersionId, PartitionId> a;
  PartitionId next = 0;
  for (const auto& [vid, e] : versioning) a[vid] = next++;
  auto s = scheme_from_assignment(a, versioning);
  s.delta = 1.0;
  return s;
}

nlohmann::json to_json(const PartitioningScheme& scheme) {
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& p : scheme.partitions) {
    nlohmann::json vids = nlohmann::json::array();
    for (VersionId v : p.versions) vids.push_back(v.value);
    parts.push_back({{"id", p.id},
                     {"versions", vids},
                     {"records", p.record_count},
                     {"edges", p.edge_count}});
  }
  nlohmann::json cuts = nlohmann::json::array();
  for (const auto& [a, b] : scheme.cut_edges) cuts.push_back({a.value, b.value});
  return {{"partitions", parts},
          {"delta", scheme.delta},
          {"levels", scheme.levels},
          {"cut_edges", cuts},
          {"storage", scheme.storage()},
          {"checkout_avg", scheme.checkout_avg()}};
}

nlohmann::json to_json(const CostReport& report) {
  return {{"storage", report.storage},
          {"checkout_avg", report.checkout_avg},
          {"checkout_weighted", report.checkout_weighted}};
}

PartitioningScheme scheme_from_json(const nlohmann::json& j) {
  PartitioningScheme s;
  for (const auto& jp : j.at("partitions")) {
    Partition p;
    p.id = jp.at("id").get<PartitionId>();
    for (const auto& v : jp.at("versions")) p.versions.emplace_back(v.get<std::uint32_t>());
    p.record_count = jp.at("records").get<std::uint64_t>();
    p.edge_count = jp.at("edges").get<std::uint64_t>();
    for (VersionId v : p.versions) s.assignment[v] = p.id;
    s.partitions.push_back(std::move(p));
  }
  s.delta = j.value("delta", 0.0);
  s.levels = j.value("levels", 0u);
  if (j.contains("cut_edges")) {
    for (const auto& c : j.at("cut_edges")) {
      s.cut_edges.emplace_back(VersionId(c.at(0).get<std::uint32_t>()),
                               VersionId(c.at(1).get<std::uint32_t>()));
    }
  }
  return s;
}

}  // namespace cvd::partition
