#include <doctest.h>

#include <random>
#include <set>

#include "../support.hpp"
#include "cvd/core/error.hpp"
#include "cvd/core/types.hpp"
#include "cvd/core/version_graph.hpp"

using namespace cvd;

namespace {

VersionEntry entry(std::initializer_list<std::uint64_t> ids) {
  VersionEntry e;
  for (auto i : ids) e.rlist.emplace_back(i);
  return e;
}

}  // namespace

TEST_CASE("values convert only toward more general types") {
  CHECK(std::get<double>(convert_value(Value(std::int64_t{3}), DataType::kDecimal)) == 3.0);
  CHECK(std::get<std::string>(convert_value(Value(2.5), DataType::kText)) == "2.5");
  CHECK(std::get<std::string>(convert_value(Value(4.0), DataType::kText)) == "4.0");
  CHECK(is_null(convert_value(Value{}, DataType::kInteger)));
  CHECK_THROWS_AS(convert_value(Value(2.5), DataType::kInteger), Error);
  CHECK_THROWS_AS(convert_value(Value(std::string("x")), DataType::kDecimal), Error);
  CHECK(generalize(DataType::kInteger, DataType::kText) == DataType::kText);
}

TEST_CASE("parsing fields") {
  CHECK(std::get<std::int64_t>(parse_value("-12", DataType::kInteger)) == -12);
  CHECK(is_null(parse_value("", DataType::kDecimal)));
  CHECK(std::get<std::string>(parse_value("", DataType::kText)).empty());
  CHECK_THROWS_AS(parse_value("1.5", DataType::kInteger), Error);
  CHECK_THROWS_AS(parse_value("abc", DataType::kDecimal), Error);
  CHECK_THROWS_AS(parse_data_type("blob"), Error);
  CHECK(parse_data_type("int") == DataType::kInteger);
}

TEST_CASE("value ordering puts nulls first and compares numbers across types") {
  CHECK(compare_values(Value{}, Value(std::int64_t{0})) == std::partial_ordering::less);
  CHECK(compare_values(Value(std::int64_t{2}), Value(1.5)) == std::partial_ordering::greater);
  CHECK(compare_values(Value(std::string("b")), Value(std::string("a"))) == std::partial_ordering::greater);
  CHECK(compare_values(Value(std::int64_t{2}), Value(std::int64_t{2})) == std::partial_ordering::equivalent);
}

TEST_CASE("version graph weights are rlist intersections") {
  VersioningTable vt;
  vt[VersionId(1)] = entry({1, 2, 3});
  vt[VersionId(2)] = entry({2, 3, 4});
  vt[VersionId(3)] = entry({3, 5});
  std::map<VersionId, std::vector<VersionId>> parents{
      {VersionId(1), {}}, {VersionId(2), {VersionId(1)}}, {VersionId(3), {VersionId(1)}}};
  const VersionGraph g = build_version_graph(parents, vt);
  CHECK(g.size() == 3);
  CHECK(g.is_tree());
  CHECK(g.weight(VersionId(1), VersionId(2)) == 2u);
  CHECK(g.weight(VersionId(1), VersionId(3)) == 1u);
  CHECK_FALSE(g.weight(VersionId(2), VersionId(3)).has_value());
  CHECK(g.n_records() == 5);
  CHECK(g.n_bipartite_edges() == 8);
}

TEST_CASE("graph construction rejects unknown parents and cycles") {
  VersioningTable vt;
  vt[VersionId(1)] = entry({1});
  vt[VersionId(2)] = entry({1});
  std::map<VersionId, std::vector<VersionId>> missing{{VersionId(1), {}}, {VersionId(2), {VersionId(7)}}};
  CHECK_THROWS_AS(build_version_graph(missing, vt), Error);
  std::map<VersionId, std::vector<VersionId>> cycle{{VersionId(1), {VersionId(2)}}, {VersionId(2), {VersionId(1)}}};
  CHECK_THROWS_AS(build_version_graph(cycle, vt), Error);
}

TEST_CASE("dag to tree keeps the heaviest merge edge and counts duplicates") {
  VersioningTable vt;
  vt[VersionId(1)] = entry({1, 2, 3});
  vt[VersionId(2)] = entry({2, 3, 4});
  vt[VersionId(3)] = entry({3, 5, 6, 7});
  vt[VersionId(4)] = entry({2, 3, 4, 5, 6, 7});
  std::map<VersionId, std::vector<VersionId>> parents{{VersionId(1), {}},
                                                      {VersionId(2), {VersionId(1)}},
                                                      {VersionId(3), {VersionId(1)}},
                                                      {VersionId(4), {VersionId(2), VersionId(3)}}};
  const VersionGraph g = build_version_graph(parents, vt);
  CHECK_FALSE(g.is_tree());
  const TreeTransform t = dag_to_tree(g);
  CHECK(t.tree.is_tree());
  // v4 keeps its edge to v3 (4 shared records); r2 and r4 arrive only via v2.
  CHECK(t.tree.weight(VersionId(3), VersionId(4)) == 4u);
  CHECK_FALSE(t.tree.weight(VersionId(2), VersionId(4)).has_value());
  CHECK(t.n_duplicated == 2);
  CHECK(t.tree.n_records() == 7 + 2);
  CHECK(t.tree.n_bipartite_edges() == 16);
}

TEST_CASE("tree identity gives |R| for random trees") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto h = cvd::testing::random_tree(rng, 30);
    const VersionGraph g = cvd::testing::graph_of(h);
    std::set<RecordId> all;
    for (const auto& [_, e] : h.versioning) all.insert(e.rlist.begin(), e.rlist.end());
    CHECK(g.n_records() == all.size());
    std::map<VersionId, std::uint64_t> counts;
    std::vector<VersionGraph::EdgeSpec> edges;
    for (const auto& node : g.nodes()) {
      counts[node.vid] = node.record_count;
      for (const auto& p : node.parents) edges.push_back({g.node(p.parent).vid, node.vid, p.weight});
    }
    CHECK(VersionGraph::from_counts(counts, edges).n_records() == all.size());
  }
}

TEST_CASE("bipartite statistics over a scope") {
  VersioningTable vt;
  vt[VersionId(1)] = entry({1, 2});
  vt[VersionId(2)] = entry({2, 3, 4});
  vt[VersionId(3)] = entry({9});
  const std::vector<VersionId> scope{VersionId(1), VersionId(2)};
  const BipartiteStats s = bipartite_stats(vt, scope);
  CHECK(s.n_versions == 2);
  CHECK(s.n_records == 4);
  CHECK(s.n_edges == 5);
  const std::vector<RecordId> a{RecordId(3), RecordId(1), RecordId(2)};
  const std::vector<RecordId> b{RecordId(2), RecordId(3), RecordId(8)};
  CHECK(intersection_size(a, b) == 2);
}
