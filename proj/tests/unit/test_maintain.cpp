#include <doctest.h>

#include <random>

#include "../support.hpp"
#include "cvd/core/error.hpp"
#include "cvd/maintain/maintain.hpp"
#include "cvd/partition/lyresplit.hpp"

using namespace cvd;
using namespace cvd::maintain;
using partition::PartitioningScheme;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

std::vector<RecordId> rids(std::initializer_list<std::uint64_t> ids) {
  std::vector<RecordId> out;
  for (auto i : ids) out.emplace_back(i);
  return out;
}

}  // namespace

TEST_CASE("budgets") {
  CHECK(Budget::parse("2x").kind == Budget::Kind::kMultiple);
  CHECK(Budget::parse("1.5x").resolve(1000) == doctest::Approx(1500));
  CHECK(Budget::parse("1200").resolve(1000) == doctest::Approx(1200));
  CHECK(Budget::parse(Budget::parse("1.5x").to_string()).value == doctest::Approx(1.5));
  CHECK(code_of([] { Budget::parse("abc"); }) == ErrorCode::kParameter);
  CHECK(code_of([] { Budget::parse("0.5x"); }) == ErrorCode::kInfeasibleBudget);
}

TEST_CASE("policy validation and json") {
  MaintenancePolicy p;
  p.validate();
  MaintenancePolicy bad = p;
  bad.mu = 1.0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kParameter);
  bad = p;
  bad.delta_star = 0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kParameter);
  bad = p;
  bad.check_every = 0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kParameter);

  p.mu = 1.25;
  p.check_every = 7;
  p.commits_since_check = 3;
  const MaintenancePolicy q = policy_from_json(to_json(p));
  CHECK(q.mu == p.mu);
  CHECK(q.check_every == 7);
  CHECK(q.commits_since_check == 3);
  CHECK(q.gamma.value == p.gamma.value);
}

TEST_CASE("online placement rule") {
  const VersionId parents[] = {VersionId(3), VersionId(5)};
  const std::uint64_t weights[] = {40, 70};
  const PartitionId parts[] = {1, 2};
  MaintenancePolicy p;
  p.gamma = Budget{Budget::Kind::kAbsolute, 2000};
  p.delta_star = 0.1;

  // Without a policy the version joins its heaviest parent.
  auto d = assign_on_commit(parents, weights, parts, 1000, 1000, std::nullopt);
  CHECK_FALSE(d.create_new);
  CHECK(d.partition == 2);
  CHECK(d.anchor_parent == VersionId(5));
  CHECK(d.anchor_weight == 70);

  // 70 <= 0.1 * 1000 and budget left: new partition.
  d = assign_on_commit(parents, weights, parts, 1000, 1500, p);
  CHECK(d.create_new);
  // No budget left.
  d = assign_on_commit(parents, weights, parts, 1000, 2000, p);
  CHECK_FALSE(d.create_new);
  // Too much overlap with the anchor.
  p.delta_star = 0.05;
  d = assign_on_commit(parents, weights, parts, 1000, 1500, p);
  CHECK_FALSE(d.create_new);
}

TEST_CASE("migration plans reuse the closest old segment") {
  VersioningTable vt;
  vt[VersionId(1)] = VersionEntry{0, rids({1, 2, 3, 4})};
  vt[VersionId(2)] = VersionEntry{0, rids({1, 2, 3, 5})};
  vt[VersionId(3)] = VersionEntry{0, rids({6, 7, 8})};
  const PartitioningScheme old_scheme = partition::scheme_from_assignment(
      {{VersionId(1), 0}, {VersionId(2), 0}, {VersionId(3), 0}}, vt);
  const SegmentMap segs{{0, rids({1, 2, 3, 4, 5, 6, 7, 8})}};
  const PartitioningScheme target = partition::scheme_from_assignment(
      {{VersionId(1), 7}, {VersionId(2), 7}, {VersionId(3), 8}}, vt);
  const MigrationPlan plan = plan_migration(old_scheme, segs, target, vt, 10);
  REQUIRE(plan.pairs.size() == 2);
  std::uint64_t reused = 0, fresh = 0;
  for (const auto& pair : plan.pairs) {
    if (pair.source) {
      ++reused;
      CHECK(*pair.source == 0);
      CHECK(pair.inserts.empty());
      CHECK(cvd::testing::sorted(pair.deletes) == rids({6, 7, 8}));
      CHECK(pair.target_records == 5);
    } else {
      ++fresh;
      CHECK(cvd::testing::sorted(pair.inserts) == rids({6, 7, 8}));
    }
  }
  CHECK(reused == 1);
  CHECK(fresh == 1);
  CHECK(plan.estimated_write_cost == 6);
  CHECK(plan.naive_write_cost == 8);

  PartitioningScheme partial = target;
  partial.assignment.erase(VersionId(3));
  CHECK(code_of([&] { plan_migration(old_scheme, segs, partial, vt, 10); }) == ErrorCode::kConsistency);
}

TEST_CASE("migrate_to rewrites the store into the target scheme") {
  cvd::testing::TempDir dir;
  const std::vector<store::ColumnSpec> schema{{"id", DataType::kInteger}};
  std::vector<std::vector<Value>> rows;
  for (int i = 1; i <= 6; ++i) rows.push_back({Value(std::int64_t{i})});
  store::Store s = store::Store::init(dir / "c", schema, {"id"}, rows, "v1", store::StoreOptions{false});
  // v2 keeps the first three records.
  store::Mutation m;
  auto rl = s.entry(VersionId(1)).rlist;
  rl.resize(3);
  m.versioning[VersionId(2)] = VersionEntry{0, rl};
  VersionMeta meta;
  meta.vid = VersionId(2);
  meta.parents = {VersionId(1)};
  meta.parent_weights = {3};
  meta.attributes = s.meta(VersionId(1)).attributes;
  m.metadata.push_back(meta);
  s.apply(m);

  const auto current = current_scheme(s);
  CHECK(current.partitions.size() == 1);
  const auto target = partition::per_version_scheme(s.versioning());
  const MaintenanceReport r = migrate_to(s, target);
  CHECK(r.migrated);
  CHECK(s.storage() == 9);
  const auto now = current_scheme(s);
  CHECK(now.partitions.size() == 2);
  CHECK(s.segment_size(s.entry(VersionId(2)).partition) == 3);
  CHECK(store::Store::open(dir / "c").snapshot() == s.snapshot());

  const VersionGraph g = store_graph(s);
  CHECK(g.n_records() == 6);
  CHECK(g.weight(VersionId(1), VersionId(2)) == 3u);
}

TEST_CASE("maintenance check fires only past the tolerance") {
  std::mt19937_64 rng(4);
  const auto h = cvd::testing::random_tree(rng, 30);
  const VersionGraph g = cvd::testing::graph_of(h);
  MaintenancePolicy p;
  p.gamma = Budget{Budget::Kind::kMultiple, 2.0};
  p.mu = 1.5;
  const auto single = partition::single_partition_scheme(h.versioning);
  const auto res = maintenance_check(single, g, h.versioning, p);
  CHECK(res.gamma == doctest::Approx(2.0 * static_cast<double>(g.n_records())));
  CHECK(res.current_checkout == doctest::Approx(static_cast<double>(g.n_records())));
  CHECK(res.migrate == (res.current_checkout > p.mu * res.best_checkout));
  CHECK(static_cast<double>(res.target.storage()) <= res.gamma);

  // A scheme equal to the check's own target never fires.
  const auto again = maintenance_check(res.target, g, h.versioning, p);
  CHECK_FALSE(again.migrate);
}
