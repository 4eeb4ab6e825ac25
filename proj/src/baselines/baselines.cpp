#include "cvd/baselines/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include "cvd/core/error.hpp"

namespace cvd::baselines {
using partition::PartitioningScheme;

namespace {

using Clock = std::chrono::steady_clock;

struct Timeout {};

class Deadline {
 public:
  explicit Deadline(std::optional<double> seconds) {
    if (seconds) end_ = Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(*seconds));
  }
  bool expired() const { return end_ && Clock::now() > *end_; }
  void check() const {
    if (expired()) throw Timeout{};
  }

 private:
  std::optional<Clock::time_point> end_;
};

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Input {
  std::vector<VersionId> vids;
  std::vector<std::vector<RecordId>> records;  // sorted per version
  std::uint64_t max_version = 0;
  std::uint64_t n_records = 0;
};

Input prepare(const VersioningTable& versioning) {
  if (versioning.empty()) fail(ErrorCode::kEmptyScope, "no versions to partition");
  Input in;
  std::unordered_set<RecordId> all;
  for (const auto& [vid, e] : versioning) {
    in.vids.push_back(vid);
    auto r = e.rlist;
    std::sort(r.begin(), r.end());
    in.max_version = std::max<std::uint64_t>(in.max_version, r.size());
    all.insert(r.begin(), r.end());
    in.records.push_back(std::move(r));
  }
  in.n_records = all.size();
  return in;
}

PartitioningScheme to_scheme(const Input& in, const std::vector<std::size_t>& cluster,
                             const VersioningTable& versioning) {
  // Dense ids in order of each cluster's smallest vid.
  std::unordered_map<std::size_t, PartitionId> renumber;
  std::map<VersionId, PartitionId> assignment;
  for (std::size_t i = 0; i < in.vids.size(); ++i) {
    auto [it, added] = renumber.emplace(cluster[i], static_cast<PartitionId>(renumber.size()));
    assignment[in.vids[i]] = it->second;
  }
  return partition::scheme_from_assignment(assignment, versioning);
}

std::uint64_t union_size(const std::vector<RecordId>& a, const std::vector<RecordId>& b) {
  std::uint64_t n = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++i;
      ++j;
    }
    ++n;
  }
  return n + (a.size() - i) + (b.size() - j);
}

PartitioningScheme run_agglo(const VersioningTable& versioning, const BaselineConfig& cfg,
                             const Deadline& deadline) {
  const Input in = prepare(versioning);
  if (cfg.capacity < in.max_version) {
    fail(ErrorCode::kParameter, "capacity is below the largest version");
  }
  const std::size_t k = std::max<std::uint32_t>(cfg.shingle_count, 1);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::uint64_t> salts(k);
  for (auto& s : salts) s = rng();

  struct Group {
    std::vector<std::size_t> members;
    std::vector<RecordId> records;
    std::vector<std::uint64_t> sig;
  };
  std::vector<Group> groups(in.vids.size());
  for (std::size_t i = 0; i < in.vids.size(); ++i) {
    groups[i].members = {i};
    groups[i].records = in.records[i];
    groups[i].sig.assign(k, ~0ULL);
    for (RecordId r : in.records[i]) {
      for (std::size_t h = 0; h < k; ++h) groups[i].sig[h] = std::min(groups[i].sig[h], splitmix(r.value ^ salts[h]));
    }
  }
  auto common = [&](const Group& a, const Group& b) {
    std::uint32_t c = 0;
    for (std::size_t h = 0; h < k; ++h) c += a.sig[h] == b.sig[h];
    return c;
  };

  std::vector<std::size_t> alive(groups.size());
  for (std::size_t i = 0; i < alive.size(); ++i) alive[i] = i;
  const std::size_t window = std::max<std::uint32_t>(cfg.window, 1);

  while (alive.size() > 1) {
    deadline.check();
    std::sort(alive.begin(), alive.end(), [&](std::size_t a, std::size_t b) {
      if (groups[a].sig != groups[b].sig) return groups[a].sig < groups[b].sig;
      return groups[a].members.front() < groups[b].members.front();
    });
    // Threshold: median common-shingle count over sampled partition pairs.
    std::vector<std::uint32_t> sample;
    std::uniform_int_distribution<std::size_t> pick(0, alive.size() - 1);
    for (int s = 0; s < 100; ++s) {
      const std::size_t a = pick(rng);
      std::size_t b = pick(rng);
      while (b == a) b = pick(rng);
      sample.push_back(common(groups[alive[a]], groups[alive[b]]));
    }
    std::nth_element(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(sample.size() / 2), sample.end());
    const std::uint32_t tau = sample[sample.size() / 2];

    std::vector<bool> consumed(alive.size(), false);
    bool merged = false;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      if (consumed[i]) continue;
      Group& g = groups[alive[i]];
      std::vector<std::pair<std::uint32_t, std::size_t>> cands;
      for (std::size_t j = i + 1; j < alive.size() && j <= i + window; ++j) {
        if (consumed[j]) continue;
        const std::uint32_t c = common(g, groups[alive[j]]);
        if (c > tau) cands.emplace_back(c, j);
      }
      std::stable_sort(cands.begin(), cands.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      for (const auto& [c, j] : cands) {
        Group& h = groups[alive[j]];
        if (union_size(g.records, h.records) > cfg.capacity) continue;
        std::vector<RecordId> merged_records;
        merged_records.reserve(g.records.size() + h.records.size());
        std::set_union(g.records.begin(), g.records.end(), h.records.begin(), h.records.end(),
                       std::back_inserter(merged_records));
        g.records = std::move(merged_records);
        for (std::size_t s = 0; s < k; ++s) g.sig[s] = std::min(g.sig[s], h.sig[s]);
        g.members.insert(g.members.end(), h.members.begin(), h.members.end());
        consumed[j] = true;
        merged = true;
        break;
      }
    }
    if (!merged) break;
    std::vector<std::size_t> next;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      if (!consumed[i]) next.push_back(alive[i]);
    }
    alive = std::move(next);
  }

  std::vector<std::size_t> cluster(in.vids.size());
  for (std::size_t g : alive) {
    for (std::size_t m : groups[g].members) cluster[m] = g;
  }
  return to_scheme(in, cluster, versioning);
}

PartitioningScheme run_kmeans(const VersioningTable& versioning, const BaselineConfig& cfg,
                              const Deadline& deadline) {
  const Input in = prepare(versioning);
  const std::size_t n = in.vids.size();
  if (cfg.k < 1 || cfg.k > n) fail(ErrorCode::kParameter, "K must lie in [1, |V|]");
  const std::size_t k = cfg.k;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);

  // Overlap of every version with every seed's record set.
  std::unordered_map<RecordId, std::vector<std::uint32_t>> seed_index;
  for (std::size_t c = 0; c < k; ++c) {
    for (RecordId r : in.records[perm[c]]) seed_index[r].push_back(static_cast<std::uint32_t>(c));
  }
  std::vector<std::size_t> cluster(n);
  std::vector<std::uint64_t> closeness(n);  // common records with the chosen centroid
  std::vector<std::uint64_t> counts(k);
  for (std::size_t v = 0; v < n; ++v) {
    std::fill(counts.begin(), counts.end(), 0);
    for (RecordId r : in.records[v]) {
      auto it = seed_index.find(r);
      if (it == seed_index.end()) continue;
      for (std::uint32_t c : it->second) ++counts[c];
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (counts[c] > counts[best]) best = c;
    }
    cluster[v] = best;
    closeness[v] = counts[best];
  }
  // Empty clusters take the version farthest from its centroid.
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t v = 0; v < n; ++v) ++sizes[cluster[v]];
  for (std::size_t c = 0; c < k; ++c) {
    if (sizes[c] != 0) continue;
    std::size_t far = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (sizes[cluster[v]] < 2) continue;
      if (far == n || closeness[v] < closeness[far]) far = v;
    }
    --sizes[cluster[far]];
    cluster[far] = c;
    closeness[far] = in.records[far].size();
    ++sizes[c];
  }

  // Per-record membership counts for each cluster.
  std::unordered_map<RecordId, std::vector<std::pair<std::uint32_t, std::uint32_t>>> index;
  std::vector<std::uint64_t> records(k, 0);
  auto add = [&](std::size_t v, std::size_t c) {
    for (RecordId r : in.records[v]) {
      auto& slots = index[r];
      auto it = std::find_if(slots.begin(), slots.end(), [&](const auto& s) { return s.first == c; });
      if (it == slots.end()) {
        slots.emplace_back(static_cast<std::uint32_t>(c), 1);
        ++records[c];
      } else {
        ++it->second;
      }
    }
  };
  auto remove = [&](std::size_t v, std::size_t c) {
    for (RecordId r : in.records[v]) {
      auto& slots = index[r];
      auto it = std::find_if(slots.begin(), slots.end(), [&](const auto& s) { return s.first == c; });
      if (--it->second == 0) {
        slots.erase(it);
        --records[c];
      }
    }
  };
  for (std::size_t v = 0; v < n; ++v) add(v, cluster[v]);

  std::vector<std::uint64_t> overlap(k, 0);
  std::vector<std::size_t> touched;
  for (std::uint32_t round = 0; round < cfg.iterations; ++round) {
    deadline.check();
    bool moved = false;
    for (std::size_t v = 0; v < n; ++v) {
      const std::size_t a = cluster[v];
      if (sizes[a] < 2) continue;
      std::uint64_t gain = 0;  // records that leave cluster a with v
      touched.clear();
      for (RecordId r : in.records[v]) {
        for (const auto& [c, cnt] : index[r]) {
          if (c == a) {
            gain += cnt == 1;
            continue;
          }
          if (overlap[c]++ == 0) touched.push_back(c);
        }
      }
      const auto size_v = static_cast<std::int64_t>(in.records[v].size());
      std::int64_t best_delta = 0;
      std::size_t best = k;
      std::sort(touched.begin(), touched.end());
      for (std::size_t c : touched) {
        const std::int64_t add_cost = size_v - static_cast<std::int64_t>(overlap[c]);
        const std::int64_t delta = add_cost - static_cast<std::int64_t>(gain);
        if (delta < best_delta && records[c] + static_cast<std::uint64_t>(add_cost) <= cfg.capacity) {
          best_delta = delta;
          best = c;
        }
      }
      for (std::size_t c : touched) overlap[c] = 0;
      if (best == k) continue;
      remove(v, a);
      add(v, best);
      --sizes[a];
      ++sizes[best];
      cluster[v] = best;
      moved = true;
    }
    if (!moved) break;
  }
  return to_scheme(in, cluster, versioning);
}

}  // namespace

std::string to_string(Algorithm a) { return a == Algorithm::kAgglo ? "agglo" : "kmeans"; }

PartitioningScheme agglo(const VersioningTable& versioning, const BaselineConfig& config) {
  return run_agglo(versioning, config, Deadline(std::nullopt));
}

PartitioningScheme kmeans(const VersioningTable& versioning, const BaselineConfig& config) {
  return run_kmeans(versioning, config, Deadline(std::nullopt));
}

BudgetSearchResult search_budget(const VersioningTable& versioning, double gamma, const BaselineConfig& config) {
  const Input in = prepare(versioning);
  if (gamma < static_cast<double>(in.n_records)) {
    fail(ErrorCode::kInfeasibleBudget, "storage budget is below |R|");
  }
  const Deadline deadline(config.timeout_seconds);
  BudgetSearchResult out;
  bool have = false;
  const double floor = 0.99 * gamma;

  auto evaluate = [&](std::uint64_t knob) -> std::optional<PartitioningScheme> {
    BaselineConfig c = config;
    if (config.algorithm == Algorithm::kAgglo) {
      c.capacity = knob;
    } else {
      c.k = static_cast<std::uint32_t>(knob);
    }
    ++out.iterations;
    try {
      return config.algorithm == Algorithm::kAgglo ? run_agglo(versioning, c, deadline)
                                                   : run_kmeans(versioning, c, deadline);
    } catch (const Timeout&) {
      out.timed_out = true;
      return std::nullopt;
    }
  };
  // Returns true once the band is reached.
  auto consider = [&](PartitioningScheme s, std::uint64_t knob) {
    const auto storage = static_cast<double>(s.storage());
    if (storage > gamma) return false;
    const bool better = !have || s.storage() > out.scheme.storage() ||
                        (s.storage() == out.scheme.storage() && s.checkout_avg() < out.scheme.checkout_avg());
    if (better) {
      out.scheme = std::move(s);
      out.knob = static_cast<double>(knob);
      have = true;
    }
    out.in_band = have && static_cast<double>(out.scheme.storage()) >= floor;
    return out.in_band;
  };

  // The knob moves storage in opposite directions for the two algorithms:
  // a larger capacity merges more, a larger K splits more.
  const bool agglo_knob = config.algorithm == Algorithm::kAgglo;
  std::uint64_t lo = agglo_knob ? in.max_version : 1;
  std::uint64_t hi = agglo_knob ? std::max(in.n_records, in.max_version) : in.vids.size();
  const std::uint64_t max_storage_knob = agglo_knob ? lo : hi;
  const std::uint64_t min_storage_knob = agglo_knob ? hi : lo;

  for (std::uint64_t knob : {max_storage_knob, min_storage_knob}) {
    auto s = evaluate(knob);
    if (!s) return out;
    const bool feasible = static_cast<double>(s->storage()) <= gamma;
    if (consider(std::move(*s), knob)) return out;
    if (knob == max_storage_knob && feasible) return out;  // best possible storage use
  }
  // Bisect strictly between the two extremes.
  std::uint64_t a = lo + 1;
  std::uint64_t b = hi > 0 ? hi - 1 : 0;
  while (a <= b && b >= lo + 1) {
    if (deadline.expired()) {
      out.timed_out = true;
      break;
    }
    const std::uint64_t mid = a + (b - a) / 2;
    auto s = evaluate(mid);
    if (!s) break;
    const bool feasible = static_cast<double>(s->storage()) <= gamma;
    if (consider(std::move(*s), mid)) break;
    // Feasible: move toward more storage; infeasible: toward less.
    if (feasible == agglo_knob) {
      if (mid == 0) break;
      b = mid - 1;
    } else {
      a = mid + 1;
    }
  }
  if (!have && !out.timed_out) fail(ErrorCode::kInfeasibleBudget, "no feasible scheme within the budget");
  return out;
}

}  // namespace cvd::baselines
