#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>

#include "cvd/core/types.hpp"
#include "cvd/partition/scheme.hpp"

namespace cvd::baselines {

enum class Algorithm { kAgglo, kKMeans };

std::string to_string(Algorithm a);

struct BaselineConfig {
  Algorithm algorithm = Algorithm::kAgglo;
  // Partition record capacity; the default never binds.
  std::uint64_t capacity = std::numeric_limits<std::uint64_t>::max();
  std::uint32_t k = 1;
  std::uint32_t iterations = 10;
  std::uint32_t shingle_count = 16;
  std::uint32_t window = 100;
  std::uint64_t seed = 1;
  std::optional<double> timeout_seconds;
};

/// Shingle-ordered agglomerative merging under a capacity.
partition::PartitioningScheme agglo(const VersioningTable& versioning, const BaselineConfig& config);

/// K-means over record sets: seeds, max-overlap assignment, then local moves
/// that shrink total storage while respecting the capacity.
partition::PartitioningScheme kmeans(const VersioningTable& versioning, const BaselineConfig& config);

struct BudgetSearchResult {
  partition::PartitioningScheme scheme;
  double knob = 0.0;  // capacity for agglo, K for kmeans
  std::uint32_t iterations = 0;
  bool in_band = false;
  bool timed_out = false;
};

/// Bisects the algorithm's knob until 0.99*gamma <= S <= gamma, returning the
/// best feasible scheme seen when the band is not reached.
BudgetSearchResult search_budget(const VersioningTable& versioning, double gamma,
                                 const BaselineConfig& config);

}  // namespace cvd::baselines
