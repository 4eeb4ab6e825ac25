#pragma once

#include "cvd/core/version_graph.hpp"
#include "cvd/partition/scheme.hpp"

namespace cvd::partition {

struct OptimalResult {
  PartitioningScheme scheme;
  double checkout_avg = 0.0;
};

inline constexpr std::size_t kBruteForceMaxVersions = 10;

/// Exhaustive search over every set partition of the versions for the
/// minimum-C_avg scheme with S <= gamma. Record sets come from the rlists.
OptimalResult brute_force_optimal(const VersionGraph& graph, const VersioningTable& versioning,
                                  double gamma);

}  // namespace cvd::partition
