#include "cvd/partition/oracle.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <unordered_map>

#include "cvd/core/error.hpp"

namespace cvd::partition {

namespace {

struct Search {
  std::size_t n = 0;
  std::vector<std::uint64_t> union_size;  // per subset mask
  double gamma = 0;
  std::uint64_t best_cost = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::uint32_t> best_blocks;
  std::vector<std::uint32_t> blocks;

  void run(std::uint32_t remaining, std::uint64_t storage, std::uint64_t cost) {
    if (remaining == 0) {
      if (cost < best_cost) {
        best_cost = cost;
        best_blocks = blocks;
      }
      return;
    }
    const std::uint32_t lowest = remaining & (~remaining + 1);
    const std::uint32_t rest = remaining & ~lowest;
    // Every block containing the lowest unassigned version.
    for (std::uint32_t sub = rest;; sub = (sub - 1) & rest) {
      const std::uint32_t block = sub | lowest;
      const std::uint64_t s = storage + union_size[block];
      if (static_cast<double>(s) <= gamma) {
        const std::uint64_t c = cost + std::popcount(block) * union_size[block];
        if (c < best_cost) {
          blocks.push_back(block);
          run(remaining & ~block, s, c);
          blocks.pop_back();
        }
      }
      if (sub == 0) break;
    }
  }
};

}  // namespace

OptimalResult brute_force_optimal(const VersionGraph& graph, const VersioningTable& versioning,
                                  double gamma) {
  const std::size_t n = graph.size();
  if (n == 0) fail(ErrorCode::kEmptyScope, "empty version graph");
  if (n > kBruteForceMaxVersions) {
    fail(ErrorCode::kScale, "exhaustive search is limited to " +
                                std::to_string(kBruteForceMaxVersions) + " versions");
  }
  // Dense record numbering and per-version bitsets.
  std::unordered_map<RecordId, std::size_t> dense;
  std::vector<std::vector<std::size_t>> members(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& entry = versioning.at(graph.node(i).vid);
    for (RecordId r : entry.rlist) {
      auto [it, inserted] = dense.emplace(r, dense.size());
      members[i].push_back(it->second);
    }
  }
  const std::size_t words = (dense.size() + 63) / 64;
  const std::uint32_t full = (1u << n) - 1;
  std::vector<std::vector<std::uint64_t>> bits(std::size_t{1} << n,
                                               std::vector<std::uint64_t>(words, 0));
  Search search;
  search.n = n;
  search.gamma = gamma;
  search.union_size.assign(std::size_t{1} << n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto& b = bits[std::size_t{1} << i];
    for (std::size_t r : members[i]) b[r / 64] |= std::uint64_t{1} << (r % 64);
  }
  for (std::uint32_t mask = 1; mask <= full; ++mask) {
    const std::uint32_t low = mask & (~mask + 1);
    if (mask != low) {
      const auto& a = bits[mask & ~low];
      const auto& b = bits[low];
      auto& out = bits[mask];
      for (std::size_t w = 0; w < words; ++w) out[w] = a[w] | b[w];
    }
    std::uint64_t count = 0;
    for (std::uint64_t w : bits[mask]) count += static_cast<std::uint64_t>(std::popcount(w));
    search.union_size[mask] = count;
  }

  search.run(full, 0, 0);
  if (search.best_blocks.empty()) {
    fail(ErrorCode::kInfeasibleBudget, "no partitioning fits the storage budget");
  }
  std::map<VersionId, PartitionId> assignment;
  PartitionId pid = 0;
  for (std::uint32_t block : search.best_blocks) {
    for (std::size_t i = 0; i < n; ++i) {
      if (block & (1u << i)) assignment[graph.node(i).vid] = pid;
    }
    ++pid;
  }
  OptimalResult out;
  out.scheme = scheme_from_assignment(assignment, versioning);
  out.checkout_avg = static_cast<double>(search.best_cost) / static_cast<double>(n);
  return out;
}

}  // namespace cvd::partition
