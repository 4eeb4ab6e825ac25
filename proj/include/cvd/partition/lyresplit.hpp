#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "cvd/core/version_graph.hpp"
#include "cvd/partition/scheme.hpp"

namespace cvd::partition {

enum class EdgePicker {
  // Minimise the version-count difference of the two sides, then the record
  // imbalance, then prefer the smallest child vid.
  kVersionBalance,
  // Cut the lightest candidate edge (smallest child vid on ties).
  kSmallestWeight,
};

/// Schema-aware splitting: per-edge common-attribute counts keyed by child
/// vid, plus the total attribute count |A|.
struct AttributeCounts {
  std::map<VersionId, std::uint64_t> common_with_parent;
  std::uint64_t total_attributes = 0;
};

struct LyreSplitOptions {
  EdgePicker picker = EdgePicker::kVersionBalance;
  std::optional<AttributeCounts> attributes;
};

/// View of one candidate cut inside the partition being split.
struct CutCandidate {
  VersionId parent;
  VersionId child;
  std::uint64_t weight = 0;
  std::uint64_t child_side_versions = 0;
  std::uint64_t other_side_versions = 0;
  std::uint64_t child_side_records = 0;
  std::uint64_t other_side_records = 0;
};

/// Returns the index of the chosen candidate. An empty candidate set means
/// the split condition held without a qualifying edge and is reported as
/// kInvariantViolation.
std::size_t pick_edge_cut(std::span<const CutCandidate> candidates, EdgePicker picker);

/// True when a partition with |R|, |V|, |E| must be split for `delta`,
/// i.e. |R||V| exceeds |E|/delta.
bool needs_split(std::uint64_t records, std::uint64_t versions, std::uint64_t edges, double delta);

/// Recursive splitting of a version tree. Partition record counts come from
/// the tree form (|R| with conceptual duplicates).
PartitioningScheme lyresplit(const VersionGraph& tree, double delta,
                             const LyreSplitOptions& options = {});

struct DeltaSearchResult {
  double delta = 0.0;
  PartitioningScheme scheme;
  std::uint32_t iterations = 0;  // lyresplit invocations
  bool in_band = false;          // 0.99*gamma <= S <= gamma reached
};

/// Bisects delta over [|E|/(|R||V|), 1] until 0.99*gamma <= S <= gamma.
/// When the band is unreachable the feasible scheme with the largest S
/// (lowest C_avg on ties) is returned.
DeltaSearchResult binary_search_delta(const VersionGraph& tree, double gamma,
                                      const LyreSplitOptions& options = {});

/// Candidate edges (parent, child) under a(e)*w(e) <= delta*|A|*|R|.
std::vector<std::pair<VersionId, VersionId>> schema_aware_candidates(
    const VersionGraph& tree, const AttributeCounts& attributes, double delta);

struct WeightedTarget {
  std::optional<double> delta;
  std::optional<double> gamma;
};

/// Frequency-weighted partitioning: each version is replicated f_i times
/// as a chain, the expanded tree is split, and each version is placed in
/// the smallest partition that received one of its copies.
PartitioningScheme weighted_partition(const VersionGraph& tree, const VersioningTable& versioning,
                                      const Frequencies& frequencies, WeightedTarget target,
                                      const LyreSplitOptions& options = {});

/// Normalises frequencies: divide by their gcd, then rescale so that the sum
/// stays at or below `cap`.
Frequencies normalize_frequencies(const Frequencies& frequencies, std::uint64_t cap = 1'000'000);

}  // namespace cvd::partition
