#include "cvd/partition/lyresplit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cvd/core/error.hpp"

namespace cvd::partition {

namespace {

constexpr long double kRelTol = 1e-12L;
constexpr std::uint32_t kNoParent = std::numeric_limits<std::uint32_t>::max();

// Flattened tree used by the splitter. Index order equals graph node order.
struct FlatTree {
  std::vector<std::uint32_t> parent;
  std::vector<std::uint64_t> weight;  // weight of the edge to the parent
  std::vector<std::uint64_t> records;
  std::vector<std::uint64_t> common_attrs;
  std::vector<VersionId> vid;
  std::vector<std::uint32_t> preorder;
  std::uint32_t root = 0;
};

FlatTree flatten(const VersionGraph& tree, const LyreSplitOptions& options) {
  if (tree.empty()) fail(ErrorCode::kEmptyScope, "cannot partition an empty version graph");
  if (!tree.is_tree()) {
    fail(ErrorCode::kParameter, "lyresplit requires a version tree; apply dag_to_tree first");
  }
  const std::size_t n = tree.size();
  FlatTree t;
  t.parent.assign(n, kNoParent);
  t.weight.assign(n, 0);
  t.records.resize(n);
  t.vid.resize(n);
  t.common_attrs.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = tree.node(i);
    t.vid[i] = node.vid;
    t.records[i] = node.record_count;
    if (!node.parents.empty()) {
      t.parent[i] = static_cast<std::uint32_t>(node.parents.front().parent);
      t.weight[i] = node.parents.front().weight;
    } else {
      t.root = static_cast<std::uint32_t>(i);
    }
    if (options.attributes) {
      auto it = options.attributes->common_with_parent.find(node.vid);
      t.common_attrs[i] = it == options.attributes->common_with_parent.end()
                              ? options.attributes->total_attributes
                              : it->second;
    }
  }
  t.preorder.reserve(n);
  std::vector<std::uint32_t> stack{t.root};
  while (!stack.empty()) {
    const std::uint32_t u = stack.back();
    stack.pop_back();
    t.preorder.push_back(u);
    const auto& children = tree.node(u).children;
    for (auto it = children.rbegin(); it != children.rend(); ++it) {
      stack.push_back(static_cast<std::uint32_t>(*it));
    }
  }
  return t;
}

struct Work {
  std::vector<std::uint32_t> members;  // preorder of a connected subtree
  std::uint32_t depth = 0;
};

bool is_candidate(const FlatTree& t, std::uint32_t node, std::uint64_t partition_records,
                  double delta, const LyreSplitOptions& options) {
  const long double w = static_cast<long double>(t.weight[node]);
  const long double r = static_cast<long double>(partition_records);
  if (options.attributes) {
    const long double a = static_cast<long double>(t.common_attrs[node]);
    const long double total_a = static_cast<long double>(options.attributes->total_attributes);
    return a * w <= delta * total_a * r * (1 + kRelTol);
  }
  return w <= delta * r * (1 + kRelTol);
}

}  // namespace

bool needs_split(std::uint64_t records, std::uint64_t versions, std::uint64_t edges, double delta) {
  const long double lhs = static_cast<long double>(records) * static_cast<long double>(versions) *
                          static_cast<long double>(delta);
  return lhs > static_cast<long double>(edges) * (1 + kRelTol);
}

std::size_t pick_edge_cut(std::span<const CutCandidate> candidates, EdgePicker picker) {
  if (candidates.empty()) {
    fail(ErrorCode::kInvariantViolation, "split condition holds but no edge qualifies");
  }
  auto diff = [](std::uint64_t a, std::uint64_t b) { return a > b ? a - b : b - a; };
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const auto& b = candidates[best];
    bool better = false;
    if (picker == EdgePicker::kSmallestWeight) {
      better = c.weight < b.weight || (c.weight == b.weight && c.child < b.child);
    } else {
      const auto cv = diff(c.child_side_versions, c.other_side_versions);
      const auto bv = diff(b.child_side_versions, b.other_side_versions);
      const auto cr = diff(c.child_side_records, c.other_side_records);
      const auto br = diff(b.child_side_records, b.other_side_records);
      better = cv < bv || (cv == bv && (cr < br || (cr == br && c.child < b.child)));
    }
    if (better) best = i;
  }
  return best;
}

PartitioningScheme lyresplit(const VersionGraph& tree, double delta, const LyreSplitOptions& options) {
  if (!(delta > 0.0 && delta <= 1.0)) fail(ErrorCode::kParameter, "delta must lie in (0, 1]");
  const FlatTree t = flatten(tree, options);
  const std::size_t n = t.parent.size();

  std::vector<std::uint32_t> pos(n);
  std::vector<std::uint64_t> sub_v(n), sub_e(n), sub_w(n);
  std::vector<CutCandidate> candidates;

  PartitioningScheme scheme;
  scheme.delta = delta;
  std::vector<Work> leaves;
  std::vector<Work> stack;
  stack.push_back(Work{t.preorder, 0});

  while (!stack.empty()) {
    Work work = std::move(stack.back());
    stack.pop_back();
    const auto& m = work.members;
    const std::size_t v_count = m.size();

    std::uint64_t e_count = 0;
    std::uint64_t shared = 0;
    for (std::size_t i = 0; i < v_count; ++i) {
      e_count += t.records[m[i]];
      if (i > 0) shared += t.weight[m[i]];
    }
    const std::uint64_t r_count = e_count - shared;

    if (!needs_split(r_count, v_count, e_count, delta)) {
      scheme.levels = std::max(scheme.levels, work.depth);
      leaves.push_back(std::move(work));
      continue;
    }

    // Subtree aggregates within the partition, by reverse preorder.
    for (std::size_t i = 0; i < v_count; ++i) {
      pos[m[i]] = static_cast<std::uint32_t>(i);
      sub_v[i] = 1;
      sub_e[i] = t.records[m[i]];
      sub_w[i] = 0;
    }
    for (std::size_t i = v_count; i-- > 1;) {
      const std::uint32_t p = pos[t.parent[m[i]]];
      sub_v[p] += sub_v[i];
      sub_e[p] += sub_e[i];
      sub_w[p] += sub_w[i] + t.weight[m[i]];
    }

    candidates.clear();
    std::vector<std::size_t> candidate_pos;
    for (std::size_t i = 1; i < v_count; ++i) {
      if (!is_candidate(t, m[i], r_count, delta, options)) continue;
      const std::uint64_t side_r = sub_e[i] - sub_w[i];
      const std::uint64_t w = t.weight[m[i]];
      candidates.push_back(CutCandidate{t.vid[t.parent[m[i]]], t.vid[m[i]], w, sub_v[i],
                                        v_count - sub_v[i], side_r, r_count - side_r + w});
      candidate_pos.push_back(i);
    }
    const std::size_t chosen = pick_edge_cut(candidates, options.picker);
    const std::size_t cut = candidate_pos[chosen];
    scheme.cut_edges.emplace_back(candidates[chosen].parent, candidates[chosen].child);

    Work child_side{{m.begin() + static_cast<std::ptrdiff_t>(cut),
                     m.begin() + static_cast<std::ptrdiff_t>(cut + sub_v[cut])},
                    work.depth + 1};
    Work rest{{}, work.depth + 1};
    rest.members.reserve(v_count - sub_v[cut]);
    rest.members.insert(rest.members.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(cut));
    rest.members.insert(rest.members.end(), m.begin() + static_cast<std::ptrdiff_t>(cut + sub_v[cut]),
                        m.end());
    stack.push_back(std::move(child_side));
    stack.push_back(std::move(rest));
  }

  std::vector<Partition> parts;
  parts.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    Partition p;
    std::uint64_t shared = 0;
    for (std::size_t i = 0; i < leaf.members.size(); ++i) {
      const std::uint32_t u = leaf.members[i];
      p.versions.push_back(t.vid[u]);
      p.edge_count += t.records[u];
      if (i > 0) shared += t.weight[u];
    }
    p.record_count = p.edge_count - shared;
    std::sort(p.versions.begin(), p.versions.end());
    parts.push_back(std::move(p));
  }
  std::sort(parts.begin(), parts.end(),
            [](const Partition& a, const Partition& b) { return a.versions.front() < b.versions.front(); });
  for (std::size_t k = 0; k < parts.size(); ++k) {
    parts[k].id = static_cast<PartitionId>(k);
    for (VersionId v : parts[k].versions) scheme.assignment[v] = parts[k].id;
  }
  scheme.partitions = std::move(parts);
  std::sort(scheme.cut_edges.begin(), scheme.cut_edges.end());
  return scheme;
}

DeltaSearchResult binary_search_delta(const VersionGraph& tree, double gamma,
                                      const LyreSplitOptions& options) {
  if (tree.empty()) fail(ErrorCode::kEmptyScope, "cannot partition an empty version graph");
  const auto r = static_cast<long double>(tree.n_records());
  const auto v = static_cast<long double>(tree.size());
  const auto e = static_cast<long double>(tree.n_bipartite_edges());
  if (static_cast<long double>(gamma) < r) {
    fail(ErrorCode::kInfeasibleBudget, "storage budget below |R|");
  }
  DeltaSearchResult out;
  const double band_low = 0.99 * gamma;

  double lo = r > 0 ? static_cast<double>(e / (r * v)) : 1.0;
  lo = std::clamp(lo, std::numeric_limits<double>::min(), 1.0);
  double hi = 1.0;

  auto run = [&](double d) {
    ++out.iterations;
    return lyresplit(tree, d, options);
  };
  auto consider = [&](double d, PartitioningScheme s) {
    const bool better = s.storage() > out.scheme.storage() ||
                        (s.storage() == out.scheme.storage() && s.checkout_avg() < out.scheme.checkout_avg());
    if (better) {
      out.delta = d;
      out.scheme = std::move(s);
    }
  };

  PartitioningScheme top = run(hi);
  if (static_cast<double>(top.storage()) <= gamma) {
    out.delta = hi;
    out.scheme = std::move(top);
    out.in_band = static_cast<double>(out.scheme.storage()) >= band_low;
    return out;
  }
  PartitioningScheme bottom = run(lo);
  out.delta = lo;
  out.scheme = std::move(bottom);
  if (static_cast<double>(out.scheme.storage()) >= band_low) {
    out.in_band = true;
    return out;
  }
  while (hi - lo > 1e-9) {
    const double mid = 0.5 * (lo + hi);
    PartitioningScheme s = run(mid);
    const double storage = static_cast<double>(s.storage());
    if (storage <= gamma) {
      const bool band = storage >= band_low;
      consider(mid, std::move(s));
      if (band) {
        out.in_band = true;
        return out;
      }
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return out;
}

std::vector<std::pair<VersionId, VersionId>> schema_aware_candidates(
    const VersionGraph& tree, const AttributeCounts& attributes, double delta) {
  LyreSplitOptions options;
  options.attributes = attributes;
  const FlatTree t = flatten(tree, options);
  std::vector<std::pair<VersionId, VersionId>> out;
  for (std::uint32_t u = 0; u < t.parent.size(); ++u) {
    if (t.parent[u] == kNoParent) continue;
    if (is_candidate(t, u, tree.n_records(), delta, options)) {
      out.emplace_back(t.vid[t.parent[u]], t.vid[u]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Frequencies normalize_frequencies(const Frequencies& frequencies, std::uint64_t cap) {
  std::uint64_t g = 0;
  for (const auto& [vid, f] : frequencies) {
    if (f == 0) fail(ErrorCode::kParameter, "checkout frequencies must be positive");
    g = std::gcd(g, f);
  }
  Frequencies out;
  long double sum = 0;
  for (const auto& [vid, f] : frequencies) {
    out[vid] = f / g;
    sum += static_cast<long double>(f / g);
  }
  if (sum > static_cast<long double>(cap)) {
    const long double scale = static_cast<long double>(cap) / sum;
    for (auto& [vid, f] : out) {
      f = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::floor(static_cast<long double>(f) * scale)));
    }
  }
  return out;
}

PartitioningScheme weighted_partition(const VersionGraph& tree, const VersioningTable& versioning,
                                      const Frequencies& frequencies, WeightedTarget target,
                                      const LyreSplitOptions& options) {
  if (!tree.is_tree()) fail(ErrorCode::kParameter, "weighted_partition requires a version tree");
  if (target.delta.has_value() == target.gamma.has_value()) {
    fail(ErrorCode::kParameter, "exactly one of delta or gamma must be given");
  }
  Frequencies full;
  for (const auto& node : tree.nodes()) {
    auto it = frequencies.find(node.vid);
    full[node.vid] = it == frequencies.end() ? 1 : it->second;
  }
  const Frequencies f = normalize_frequencies(full);

  // Expanded tree: version i becomes the chain first[i] .. first[i]+f_i-1.
  const std::size_t n = tree.size();
  std::vector<std::uint32_t> first(n);
  std::map<VersionId, std::uint64_t> counts;
  std::vector<VersionGraph::EdgeSpec> edges;
  std::vector<std::size_t> owner;  // expanded id - 1 -> original node index
  std::uint32_t next = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = tree.node(i);
    first[i] = next;
    const std::uint64_t copies = f.at(node.vid);
    for (std::uint64_t j = 0; j < copies; ++j) {
      const VersionId id(next++);
      counts[id] = node.record_count;
      owner.push_back(i);
      if (j > 0) edges.push_back({VersionId(id.value - 1), id, node.record_count});
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = tree.node(i);
    for (const auto& e : node.parents) {
      const std::uint32_t last_of_parent =
          first[e.parent] + static_cast<std::uint32_t>(f.at(tree.node(e.parent).vid)) - 1;
      edges.push_back({VersionId(last_of_parent), VersionId(first[i]), e.weight});
    }
  }
  LyreSplitOptions expanded_options = options;
  if (options.attributes) {
    AttributeCounts a;
    a.total_attributes = options.attributes->total_attributes;
    for (std::size_t i = 0; i < n; ++i) {
      auto it = options.attributes->common_with_parent.find(tree.node(i).vid);
      if (it != options.attributes->common_with_parent.end()) {
        a.common_with_parent[VersionId(first[i])] = it->second;
      }
    }
    expanded_options.attributes = std::move(a);
  }
  const VersionGraph expanded = VersionGraph::from_counts(counts, edges, tree.n_records());
  PartitioningScheme split;
  if (target.delta) {
    split = lyresplit(expanded, *target.delta, expanded_options);
  } else {
    split = binary_search_delta(expanded, *target.gamma, expanded_options).scheme;
  }

  // Place each version in the smallest partition holding one of its copies.
  std::map<VersionId, PartitionId> assignment;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t copies = f.at(tree.node(i).vid);
    PartitionId best = split.assignment.at(VersionId(first[i]));
    for (std::uint64_t j = 1; j < copies; ++j) {
      const PartitionId pid = split.assignment.at(VersionId(first[i] + static_cast<std::uint32_t>(j)));
      const auto& cand = split.partition(pid);
      const auto& cur = split.partition(best);
      if (cand.record_count < cur.record_count ||
          (cand.record_count == cur.record_count && pid < best)) {
        best = pid;
      }
    }
    assignment[tree.node(i).vid] = best;
  }
  // Renumber densely in order of first version.
  std::map<PartitionId, PartitionId> renumber;
  for (const auto& [vid, pid] : assignment) {
    if (!renumber.count(pid)) {
      const auto next_id = static_cast<PartitionId>(renumber.size());
      renumber[pid] = next_id;
    }
  }
  for (auto& [vid, pid] : assignment) pid = renumber.at(pid);

  PartitioningScheme out = scheme_from_assignment(assignment, versioning);
  out.delta = split.delta;
  out.levels = split.levels;
  return out;
}

}  // namespace cvd::partition
