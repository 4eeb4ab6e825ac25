#include <doctest.h>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <fstream>

#include "../support.hpp"
#include "cvd/core/error.hpp"
#include "cvd/store/csv.hpp"
#include "cvd/store/store.hpp"

using namespace cvd;
using namespace cvd::store;
namespace fs = std::filesystem;

namespace {

const std::vector<ColumnSpec> kSchema{{"id", DataType::kInteger}, {"name", DataType::kText}, {"w", DataType::kDecimal}};

std::vector<std::vector<Value>> base_rows() {
  return {{Value(std::int64_t{1}), Value(std::string("a")), Value(0.5)},
          {Value(std::int64_t{2}), Value(std::string("b")), Value{}},
          {Value(std::int64_t{3}), Value(std::string("c,d \"q\"")), Value(-2.0)}};
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

// Commit of v2 = v1 minus its last record plus one new record.
Mutation child_commit(Store& s) {
  Mutation m;
  const RecordId rid = s.allocate_rids(1);
  m.new_records.push_back(Record{rid, {Value(std::int64_t{4}), Value(std::string("d")), Value(1.0)}});
  auto rl = s.entry(VersionId(1)).rlist;
  rl.pop_back();
  rl.push_back(rid);
  m.segments.push_back({0, false, {rid}, {}});
  m.versioning[VersionId(2)] = VersionEntry{0, rl};
  VersionMeta meta;
  meta.vid = VersionId(2);
  meta.parents = {VersionId(1)};
  meta.parent_weights = {2};
  meta.attributes = s.meta(VersionId(1)).attributes;
  m.metadata.push_back(meta);
  VersionMeta parent = s.meta(VersionId(1));
  parent.children.push_back(VersionId(2));
  m.metadata.push_back(parent);
  return m;
}

}  // namespace

TEST_CASE("csv reading handles quotes, nulls and errors") {
  std::istringstream in("a,b,c\n1,\"x,y\",\n2,\"he said \"\"hi\"\"\",\"\"\n");
  const auto rows = read_csv(in);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1][1] == std::optional<std::string>("x,y"));
  CHECK_FALSE(rows[1][2].has_value());
  CHECK(rows[2][1] == std::optional<std::string>("he said \"hi\""));
  CHECK(rows[2][2] == std::optional<std::string>(""));
  std::istringstream bad("a\n\"open\n");
  CHECK(code_of([&] { read_csv(bad); }) == ErrorCode::kParse);

  std::ostringstream out;
  write_csv_row(out, {std::string("x,y"), std::nullopt, std::string("")});
  CHECK(out.str() == "\"x,y\",,\"\"\n");
}

TEST_CASE("schema files") {
  cvd::testing::TempDir dir;
  write_schema_file(dir / "s.schema", kSchema);
  CHECK(read_schema_file(dir / "s.schema") == kSchema);
  std::ofstream(dir / "dup.schema") << "# comment\na:integer\na:text\n";
  CHECK(code_of([&] { read_schema_file(dir / "dup.schema"); }) == ErrorCode::kSchema);
  std::ofstream(dir / "bad.schema") << "a:blob\n";
  CHECK(code_of([&] { read_schema_file(dir / "bad.schema"); }) == ErrorCode::kParse);
}

TEST_CASE("init validates and reopen reproduces the state") {
  cvd::testing::TempDir dir;
  CHECK(code_of([&] { Store::init(dir / "x", kSchema, {"nope"}, base_rows(), "m"); }) == ErrorCode::kSchema);
  auto dup = base_rows();
  dup[1][0] = Value(std::int64_t{1});
  CHECK(code_of([&] { Store::init(dir / "y", kSchema, {"id"}, dup, "m"); }) == ErrorCode::kConstraint);
  auto null_key = base_rows();
  null_key[0][0] = Value{};
  CHECK(code_of([&] { Store::init(dir / "z", kSchema, {"id"}, null_key, "m"); }) == ErrorCode::kConstraint);

  Store s = Store::init(dir / "cvd", kSchema, {"id"}, base_rows(), "first");
  CHECK(is_cvd_directory(dir / "cvd"));
  CHECK_FALSE(is_cvd_directory(dir.path()));
  CHECK(s.versioning().size() == 1);
  CHECK(s.storage() == 3);
  CHECK(s.meta(VersionId(1)).message == "first");
  const LogicalState before = s.snapshot();
  CHECK(Store::open(dir / "cvd").snapshot() == before);
  CHECK(code_of([&] { Store::init(dir / "cvd", kSchema, {"id"}, base_rows(), "again"); }) ==
        ErrorCode::kConstraint);
}

TEST_CASE("mutations publish atomically and survive reopen") {
  cvd::testing::TempDir dir;
  Store s = Store::init(dir / "cvd", kSchema, {"id"}, base_rows(), "first");
  s.apply(child_commit(s));
  CHECK(s.versioning().size() == 2);
  CHECK(s.storage() == 4);
  const Store reopened = Store::open(dir / "cvd");
  CHECK(reopened.snapshot() == s.snapshot());
  CHECK(reopened.meta(VersionId(1)).children == std::vector<VersionId>{VersionId(2)});
  const auto& rec = reopened.record(reopened.entry(VersionId(1)).rlist[2]);
  CHECK(std::get<std::string>(rec.values[1]) == "c,d \"q\"");
  CHECK(is_null(reopened.record(reopened.entry(VersionId(1)).rlist[1]).at(2)));
}

TEST_CASE("invalid mutations leave the store untouched") {
  cvd::testing::TempDir dir;
  Store s = Store::init(dir / "cvd", kSchema, {"id"}, base_rows(), "first");
  const LogicalState before = s.snapshot();

  Mutation missing = child_commit(s);
  missing.segments.clear();  // v2's new record would not be in its partition
  CHECK(code_of([&] { s.apply(missing); }) == ErrorCode::kInvariantViolation);

  Mutation double_insert;
  double_insert.segments.push_back({0, false, {s.entry(VersionId(1)).rlist[0]}, {}});
  CHECK(code_of([&] { s.apply(double_insert); }) == ErrorCode::kInvariantViolation);

  Mutation bad_delete;
  bad_delete.segments.push_back({0, false, {}, {RecordId(999)}});
  CHECK(code_of([&] { s.apply(bad_delete); }) == ErrorCode::kInvariantViolation);

  Mutation reuse;
  reuse.segments.push_back({0, true, {}, {}});
  CHECK(code_of([&] { s.apply(reuse); }) == ErrorCode::kInvariantViolation);

  Mutation collide;
  collide.new_records.push_back(Record{s.entry(VersionId(1)).rlist[0], {}});
  CHECK(code_of([&] { s.apply(collide); }) == ErrorCode::kCorruption);

  Mutation orphan_drop;
  orphan_drop.dropped_partitions.push_back(0);
  CHECK_THROWS_AS(s.apply(orphan_drop), Error);

  Mutation unstage;
  unstage.staging_removed.push_back("ghost");
  CHECK(code_of([&] { s.apply(unstage); }) == ErrorCode::kNotFound);

  CHECK(s.snapshot() == before);
  CHECK(Store::open(dir / "cvd").snapshot() == before);
}

TEST_CASE("staging entries conflict by name") {
  cvd::testing::TempDir dir;
  Store s = Store::init(dir / "cvd", kSchema, {"id"}, base_rows(), "first");
  Mutation add;
  add.staging_added.push_back(StagingEntry{"t", {VersionId(1)}, 5, "staging/t.csv"});
  s.apply(add);
  CHECK(Store::open(dir / "cvd").staging().at("t").parent_vids == std::vector<VersionId>{VersionId(1)});
  CHECK(code_of([&] { s.apply(add); }) == ErrorCode::kStagingConflict);
  Mutation remove;
  remove.staging_removed.push_back("t");
  s.apply(remove);
  CHECK(s.staging().empty());
}

TEST_CASE("torn tails beyond the committed length are ignored and truncated") {
  cvd::testing::TempDir dir;
  {
    Store s = Store::init(dir / "cvd", kSchema, {"id"}, base_rows(), "first");
  }
  std::ofstream(dir / "cvd" / "metadata.json", std::ios::app) << "{\"vid\":";
  std::ofstream(dir / "cvd" / "part_0.seg", std::ios::app | std::ios::binary) << "garbage";
  Store s = Store::open(dir / "cvd");
  CHECK(s.versioning().size() == 1);
  s.apply(child_commit(s));
  CHECK(Store::open(dir / "cvd").snapshot() == s.snapshot());
}

TEST_CASE("truncated files are reported as corruption") {
  cvd::testing::TempDir dir;
  {
    Store s = Store::init(dir / "cvd", kSchema, {"id"}, base_rows(), "first");
  }
  fs::resize_file(dir / "cvd" / "part_0.seg", fs::file_size(dir / "cvd" / "part_0.seg") - 3);
  try {
    Store::open(dir / "cvd");
    FAIL("expected corruption");
  } catch (const Error& e) {
    CHECK(e.is_corruption());
  }
}

TEST_CASE("writers exclude each other") {
  cvd::testing::TempDir dir;
  Store a = Store::init(dir / "cvd", kSchema, {"id"}, base_rows(), "first");
  Store b = Store::open(dir / "cvd");
  const int fd = ::open((dir / "cvd" / "LOCK").c_str(), O_RDWR);
  REQUIRE(fd >= 0);
  REQUIRE(::flock(fd, LOCK_EX) == 0);
  CHECK(code_of([&] { a.apply(child_commit(a)); }) == ErrorCode::kLocked);
  ::flock(fd, LOCK_UN);
  ::close(fd);
  a.apply(child_commit(a));
  // b still sees the old generation and must reopen first.
  Mutation m;
  m.policy = nlohmann::json{{"x", 1}};
  CHECK(code_of([&] { b.apply(m); }) == ErrorCode::kLocked);
  Store c = Store::open(dir / "cvd");
  CHECK(c.versioning().size() == 2);
}

TEST_CASE("superseded manifests and dropped segments are collected") {
  cvd::testing::TempDir dir;
  Store s = Store::init(dir / "cvd", kSchema, {"id"}, base_rows(), "first");
  Mutation split;
  split.segments.push_back({1, true, s.entry(VersionId(1)).rlist, {}});
  split.versioning[VersionId(1)] = VersionEntry{1, s.entry(VersionId(1)).rlist};
  split.dropped_partitions.push_back(0);
  s.apply(split);
  CHECK(s.partitions() == std::vector<PartitionId>{1});
  Mutation noop;
  noop.policy = nlohmann::json{{"k", 1}};
  s.apply(noop);  // collection runs at the start of the next write
  std::size_t manifests = 0;
  for (const auto& e : fs::directory_iterator(dir / "cvd")) {
    manifests += e.path().filename().string().rfind("MANIFEST-", 0) == 0;
  }
  CHECK(manifests <= 2);
  CHECK_FALSE(fs::exists(dir / "cvd" / "part_0.seg"));
  CHECK(Store::open(dir / "cvd").snapshot() == s.snapshot());
}

TEST_CASE("crash injection: every step leaves the pre or post state") {
  cvd::testing::TempDir dir;
  {
    Store s = Store::init(dir / "base", kSchema, {"id"}, base_rows(), "first", StoreOptions{false});
  }
  fs::copy(dir / "base", dir / "ref", fs::copy_options::recursive);
  LogicalState pre, post;
  std::uint64_t steps = 0;
  {
    Store s = Store::open(dir / "ref", StoreOptions{false});
    pre = s.snapshot();
    CrashInjector counter(~0ULL);
    s.set_crash_injector(&counter);
    s.apply(child_commit(s));
    steps = counter.seen();
    post = Store::open(dir / "ref").snapshot();
  }
  REQUIRE(steps > 2);
  for (bool torn : {true, false}) {
    for (std::uint64_t k = 1; k <= steps; ++k) {
      fs::remove_all(dir / "run");
      fs::copy(dir / "base", dir / "run", fs::copy_options::recursive);
      {
        Store s = Store::open(dir / "run", StoreOptions{false});
        CrashInjector inj(k, torn);
        s.set_crash_injector(&inj);
        CHECK_THROWS_AS(s.apply(child_commit(s)), SimulatedCrash);
      }
      const LogicalState now = Store::open(dir / "run").snapshot();
      CHECK((now == pre || now == post));
    }
  }
}
