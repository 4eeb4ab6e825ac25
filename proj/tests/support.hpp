#pragma once

// Shared fixtures for the unit tests and the acceptance suite. The cost
// oracles here work on explicit record sets and never call into the
// partitioner's own counting.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unistd.h>
#include <vector>

#include "cvd/core/types.hpp"
#include "cvd/core/version_graph.hpp"
#include "cvd/partition/scheme.hpp"

namespace cvd::testing {

class TempDir {
 public:
  TempDir() {
    std::string pattern = (std::filesystem::temp_directory_path() / "cvd-test-XXXXXX").string();
    if (!::mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// A random derivation history: every child keeps a random subset of its
/// parent's records and adds fresh ones.
struct History {
  VersioningTable versioning;
  std::map<VersionId, std::vector<VersionId>> parents;
};

inline History random_tree(std::mt19937_64& rng, std::size_t n_versions, std::size_t root_records = 0) {
  History h;
  std::uint64_t next_rid = 1;
  std::uniform_int_distribution<std::size_t> root_size(5, 40);
  const std::size_t first = root_records ? root_records : root_size(rng);
  VersionEntry root;
  for (std::size_t i = 0; i < first; ++i) root.rlist.emplace_back(next_rid++);
  h.versioning[VersionId(1)] = root;
  h.parents[VersionId(1)] = {};
  std::uniform_real_distribution<double> keep_p(0.5, 1.0);
  std::uniform_int_distribution<int> added(0, 12);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t i = 2; i <= n_versions; ++i) {
    std::uniform_int_distribution<std::size_t> pick(1, i - 1);
    const VersionId parent(static_cast<std::uint32_t>(pick(rng)));
    const double keep = keep_p(rng);
    VersionEntry e;
    for (RecordId r : h.versioning.at(parent).rlist) {
      if (coin(rng) < keep) e.rlist.push_back(r);
    }
    const int fresh = added(rng) + (e.rlist.empty() ? 1 : 0);
    for (int k = 0; k < fresh; ++k) e.rlist.emplace_back(next_rid++);
    const VersionId vid(static_cast<std::uint32_t>(i));
    h.versioning[vid] = std::move(e);
    h.parents[vid] = {parent};
  }
  return h;
}

inline VersionGraph graph_of(const History& h) { return build_version_graph(h.parents, h.versioning); }

struct ExactCost {
  std::uint64_t storage = 0;
  double checkout_avg = 0.0;
  std::uint64_t records = 0;  // |R|
  std::uint64_t edges = 0;    // |E|
};

/// S and C_avg of a version grouping, by explicit set unions.
inline ExactCost exact_cost(const std::map<VersionId, PartitionId>& assignment, const VersioningTable& versioning) {
  std::map<PartitionId, std::set<RecordId>> parts;
  std::map<PartitionId, std::size_t> sizes;
  std::set<RecordId> all;
  ExactCost c;
  for (const auto& [vid, pid] : assignment) {
    const auto& rl = versioning.at(vid).rlist;
    parts[pid].insert(rl.begin(), rl.end());
    all.insert(rl.begin(), rl.end());
    ++sizes[pid];
    c.edges += rl.size();
  }
  double total = 0;
  for (const auto& [pid, recs] : parts) {
    c.storage += recs.size();
    total += static_cast<double>(recs.size()) * static_cast<double>(sizes[pid]);
  }
  c.records = all.size();
  c.checkout_avg = assignment.empty() ? 0.0 : total / static_cast<double>(assignment.size());
  return c;
}

inline ExactCost exact_cost(const partition::PartitioningScheme& s, const VersioningTable& versioning) {
  return exact_cost(s.assignment, versioning);
}

/// Minimum C_avg over every set partition of the versions with S <= gamma,
/// by restricted-growth enumeration.
inline double enumerate_optimum(const VersioningTable& versioning, double gamma) {
  std::vector<VersionId> vids;
  for (const auto& [vid, _] : versioning) vids.push_back(vid);
  const std::size_t n = vids.size();
  std::vector<std::size_t> label(n, 0);
  double best = -1.0;
  while (true) {
    std::map<VersionId, PartitionId> assignment;
    for (std::size_t i = 0; i < n; ++i) assignment[vids[i]] = static_cast<PartitionId>(label[i]);
    const ExactCost c = exact_cost(assignment, versioning);
    if (static_cast<double>(c.storage) <= gamma && (best < 0 || c.checkout_avg < best)) best = c.checkout_avg;
    // Next restricted-growth string.
    std::size_t i = n;
    while (i > 1) {
      --i;
      const std::size_t max_prev = *std::max_element(label.begin(), label.begin() + static_cast<std::ptrdiff_t>(i));
      if (label[i] <= max_prev) {
        ++label[i];
        for (std::size_t j = i + 1; j < n; ++j) label[j] = 0;
        break;
      }
      if (i == 1) return best;
    }
    if (n <= 1) return best;
  }
}

inline std::vector<RecordId> sorted(std::vector<RecordId> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace cvd::testing
