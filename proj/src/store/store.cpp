#include "cvd/store/store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cvd/core/error.hpp"

namespace cvd::store {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kAttributesFile = "attributes.json";
constexpr const char* kMetadataFile = "metadata.json";
constexpr const char* kVersionsFile = "versions.tsv";
constexpr const char* kStagingFile = "staging.json";
constexpr const char* kManifestPrefix = "MANIFEST-";
constexpr const char* kManifestTemp = "MANIFEST.tmp";
constexpr const char* kLockFile = "LOCK";
constexpr int kFormatVersion = 1;

constexpr std::uint8_t kRowRecord = 1;
constexpr std::uint8_t kRowTombstone = 2;
constexpr std::uint8_t kTagInteger = 1;
constexpr std::uint8_t kTagDecimal = 2;
constexpr std::uint8_t kTagText = 3;

[[noreturn]] void io_fail(const std::string& what, const fs::path& path) {
  fail(ErrorCode::kIo, what + " " + path.string() + ": " + std::strerror(errno));
}

std::string manifest_name(std::uint64_t gen) {
  std::string digits = std::to_string(gen);
  return kManifestPrefix + std::string(digits.size() < 8 ? 8 - digits.size() : 0, '0') + digits;
}

std::optional<std::uint64_t> manifest_generation(const std::string& filename) {
  const std::string prefix = kManifestPrefix;
  if (filename.rfind(prefix, 0) != 0) return std::nullopt;
  std::uint64_t gen = 0;
  const char* b = filename.data() + prefix.size();
  const char* e = filename.data() + filename.size();
  auto [p, ec] = std::from_chars(b, e, gen);
  if (ec != std::errc{} || p != e || b == e) return std::nullopt;
  return gen;
}

std::optional<std::uint64_t> latest_manifest(const fs::path& dir) {
  std::optional<std::uint64_t> best;
  std::error_code ec;
  for (const auto& de : fs::directory_iterator(dir, ec)) {
    if (auto g = manifest_generation(de.path().filename().string())) {
      if (!best || *g > *best) best = g;
    }
  }
  return best;
}

// Reads the first `bytes` bytes of a file; a shorter file is corruption.
std::string read_prefix(const fs::path& path, std::uint64_t bytes) {
  std::string out;
  if (bytes == 0) return out;
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kCorruption, "missing store file " + path.string());
  out.resize(bytes);
  in.read(out.data(), static_cast<std::streamsize>(bytes));
  if (static_cast<std::uint64_t>(in.gcount()) != bytes) {
    fail(ErrorCode::kCorruption, "store file shorter than committed length: " + path.string());
  }
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      fail(ErrorCode::kCorruption, "unterminated line in store file");
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string_view data, std::string context) : data_(data), context_(std::move(context)) {}

  bool done() const { return pos_ == data_.size(); }
  std::size_t pos() const { return pos_; }

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail(ErrorCode::kCorruption, "truncated row in " + context_);
  }
  std::string_view data_;
  std::string context_;
  std::size_t pos_ = 0;
};

void encode_record(std::string& out, const Record& r) {
  std::string body;
  body.push_back(static_cast<char>(kRowRecord));
  put_u64(body, r.rid.value);
  const std::size_t ncols = r.values.size();
  if (ncols > 0xffff) fail(ErrorCode::kScale, "too many columns for one row");
  put_u16(body, static_cast<std::uint16_t>(ncols));
  std::string bitmap((ncols + 7) / 8, '\0');
  std::string values;
  for (std::size_t c = 0; c < ncols; ++c) {
    const Value& v = r.values[c];
    if (is_null(v)) continue;
    bitmap[c / 8] = static_cast<char>(static_cast<unsigned char>(bitmap[c / 8]) | (1u << (c % 8)));
    if (auto i = std::get_if<std::int64_t>(&v)) {
      values.push_back(static_cast<char>(kTagInteger));
      put_u64(values, static_cast<std::uint64_t>(*i));
    } else if (auto d = std::get_if<double>(&v)) {
      values.push_back(static_cast<char>(kTagDecimal));
      put_u64(values, std::bit_cast<std::uint64_t>(*d));
    } else {
      const auto& s = std::get<std::string>(v);
      values.push_back(static_cast<char>(kTagText));
      put_u32(values, static_cast<std::uint32_t>(s.size()));
      values += s;
    }
  }
  body += bitmap;
  body += values;
  put_u32(out, static_cast<std::uint32_t>(body.size()));
  out += body;
}

void encode_tombstone(std::string& out, RecordId rid) {
  put_u32(out, 9);
  out.push_back(static_cast<char>(kRowTombstone));
  put_u64(out, rid.value);
}

json attribute_to_json(const Attribute& a) {
  return {{"id", a.id}, {"name", a.name}, {"type", to_string(a.dtype)}};
}

json staging_add_json(const StagingEntry& s) {
  json parents = json::array();
  for (VersionId v : s.parent_vids) parents.push_back(v.value);
  return {{"op", "add"},
          {"name", s.name},
          {"parents", parents},
          {"created_at", s.created_at},
          {"path", s.path}};
}

// POSIX file used for one durable append.
class File {
 public:
  File(const fs::path& path, int flags) : path_(path) {
    fd_ = ::open(path.c_str(), flags, 0644);
    if (fd_ < 0) io_fail("cannot open", path);
  }
  File(const File&) = delete;
  File& operator=(const File&) = delete;
  ~File() {
    if (fd_ >= 0) ::close(fd_);
  }
  int fd() const { return fd_; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  int fd_ = -1;
};

class Writer {
 public:
  Writer(CrashInjector* crash, bool sync) : crash_(crash), sync_(sync) {}

  // Writes `data` at `offset` after truncating the file there.
  void append_at(const fs::path& path, std::uint64_t offset, const std::string& data) {
    File f(path, O_RDWR | O_CREAT);
    if (::ftruncate(f.fd(), static_cast<off_t>(offset)) != 0) io_fail("cannot truncate", path);
    write_all(f, offset, data);
    sync(f);
  }

  void replace(const fs::path& tmp, const fs::path& target, const std::string& data) {
    {
      File f(tmp, O_RDWR | O_CREAT | O_TRUNC);
      write_all(f, 0, data);
      sync(f);
    }
    step();
    if (::rename(tmp.c_str(), target.c_str()) != 0) io_fail("cannot rename", tmp);
    sync_dir(target.parent_path());
    step();
  }

 private:
  void step() {
    if (crash_ && crash_->hit()) throw SimulatedCrash();
  }

  void write_all(File& f, std::uint64_t offset, const std::string& data) {
    std::size_t n = data.size();
    bool crash = false;
    if (crash_ && crash_->hit()) {
      crash = true;
      n = crash_->torn() ? data.size() / 2 : 0;
    }
    std::size_t done = 0;
    while (done < n) {
      const ssize_t w = ::pwrite(f.fd(), data.data() + done, n - done,
                                 static_cast<off_t>(offset + done));
      if (w < 0) {
        if (errno == EINTR) continue;
        io_fail("cannot write", f.path());
      }
      done += static_cast<std::size_t>(w);
    }
    if (crash) throw SimulatedCrash();
  }

  void sync(File& f) {
    if (sync_ && ::fsync(f.fd()) != 0) io_fail("cannot sync", f.path());
  }

  void sync_dir(const fs::path& dir) {
    if (!sync_) return;
    File d(dir, O_RDONLY | O_DIRECTORY);
    ::fsync(d.fd());
  }

  CrashInjector* crash_;
  bool sync_;
};

// Exclusive advisory lock on the CVD's LOCK file.
class WriterLock {
 public:
  explicit WriterLock(const fs::path& dir) : file_(dir / kLockFile, O_RDWR | O_CREAT) {
    if (::flock(file_.fd(), LOCK_EX | LOCK_NB) != 0) {
      fail(ErrorCode::kLocked, "another writer holds " + (dir / kLockFile).string());
    }
  }
  ~WriterLock() { ::flock(file_.fd(), LOCK_UN); }

 private:
  File file_;
};

}  // namespace

json to_json(const VersionMeta& m) {
  json parents = json::array();
  for (VersionId v : m.parents) parents.push_back(v.value);
  json children = json::array();
  for (VersionId v : m.children) children.push_back(v.value);
  return {{"vid", m.vid.value},
          {"parents", parents},
          {"children", children},
          {"create_time", m.create_time},
          {"commit_time", m.commit_time},
          {"message", m.message},
          {"attributes", m.attributes},
          {"checkout_frequency", m.checkout_frequency},
          {"parent_weights", m.parent_weights}};
}

VersionMeta version_meta_from_json(const json& j) {
  VersionMeta m;
  m.vid = VersionId(j.at("vid").get<std::uint32_t>());
  for (const auto& p : j.at("parents")) m.parents.emplace_back(p.get<std::uint32_t>());
  for (const auto& c : j.at("children")) m.children.emplace_back(c.get<std::uint32_t>());
  m.create_time = j.at("create_time").get<std::int64_t>();
  m.commit_time = j.at("commit_time").get<std::int64_t>();
  m.message = j.at("message").get<std::string>();
  m.attributes = j.at("attributes").get<std::vector<AttrId>>();
  m.checkout_frequency = j.at("checkout_frequency").get<std::uint64_t>();
  m.parent_weights = j.at("parent_weights").get<std::vector<std::uint64_t>>();
  return m;
}

bool is_cvd_directory(const fs::path& dir) {
  std::error_code ec;
  return fs::is_directory(dir, ec) && latest_manifest(dir).has_value();
}

bool Mutation::empty() const {
  return new_attributes.empty() && new_records.empty() && segments.empty() &&
         dropped_partitions.empty() && versioning.empty() && metadata.empty() &&
         staging_added.empty() && staging_removed.empty() && !policy;
}

Store::Store(fs::path dir, StoreOptions options) : dir_(std::move(dir)), options_(options) {}
Store::Store(Store&&) noexcept = default;
Store& Store::operator=(Store&&) noexcept = default;
Store::~Store() = default;

Store Store::init(const fs::path& dir, const std::vector<ColumnSpec>& schema,
                  const std::vector<std::string>& primary_key,
                  const std::vector<std::vector<Value>>& rows, const std::string& message,
                  StoreOptions options) {
  std::error_code ec;
  if (fs::exists(dir, ec) && !(fs::is_directory(dir, ec) && fs::is_empty(dir, ec))) {
    fail(ErrorCode::kConstraint, "cannot init: " + dir.string() + " already exists");
  }
  for (std::size_t i = 0; i < schema.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (schema[i].name == schema[j].name) {
        fail(ErrorCode::kSchema, "duplicate column '" + schema[i].name + "'");
      }
    }
  }
  std::vector<std::size_t> pk_cols;
  for (const auto& k : primary_key) {
    auto it = std::find_if(schema.begin(), schema.end(), [&](const ColumnSpec& c) { return c.name == k; });
    if (it == schema.end()) fail(ErrorCode::kSchema, "primary key column '" + k + "' not in schema");
    pk_cols.push_back(static_cast<std::size_t>(it - schema.begin()));
  }
  if (!pk_cols.empty()) {
    std::set<std::vector<std::string>> seen;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::vector<std::string> key;
      for (std::size_t c : pk_cols) {
        const Value& v = c < rows[r].size() ? rows[r][c] : Value{};
        if (is_null(v)) {
          fail(ErrorCode::kConstraint, "row " + std::to_string(r + 1) + ": null primary key");
        }
        key.push_back(format_value(v));
      }
      if (!seen.insert(std::move(key)).second) {
        fail(ErrorCode::kConstraint, "row " + std::to_string(r + 1) + ": duplicate primary key");
      }
    }
  }

  fs::create_directories(dir / "staging", ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());

  Store s(dir, options);
  s.primary_key_ = primary_key;

  Mutation m;
  VersionMeta meta;
  meta.vid = VersionId(1);
  meta.create_time = meta.commit_time =
      std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
          .count();
  meta.message = message;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    Attribute a{static_cast<AttrId>(i + 1), schema[i].name, schema[i].dtype};
    m.new_attributes.push_back(a);
    meta.attributes.push_back(a.id);
  }
  const RecordId first = s.allocate_rids(rows.size());
  Mutation::SegmentWrite seg{0, true, {}, {}};
  VersionEntry entry{0, {}};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Record rec{RecordId(first.value + r), {}};
    rec.values.resize(schema.size());
    for (std::size_t c = 0; c < schema.size() && c < rows[r].size(); ++c) {
      rec.values[c] = convert_value(rows[r][c], schema[c].dtype);
    }
    seg.inserts.push_back(rec.rid);
    entry.rlist.push_back(rec.rid);
    m.new_records.push_back(std::move(rec));
  }
  m.segments.push_back(std::move(seg));
  m.versioning.emplace(meta.vid, std::move(entry));
  m.metadata.push_back(std::move(meta));
  s.apply(m);
  return s;
}

Store Store::open(const fs::path& dir, StoreOptions options) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) fail(ErrorCode::kNotFound, "no CVD at " + dir.string());
  Store s(dir, options);
  s.load();
  return s;
}

void Store::load() {
  // A writer may retire the manifest between listing and reading; retry.
  for (int attempt = 0;; ++attempt) {
    auto gen = latest_manifest(dir_);
    if (!gen) fail(ErrorCode::kNotFound, "no CVD at " + dir_.string());
    std::ifstream in(dir_ / manifest_name(*gen), std::ios::binary);
    if (!in) {
      if (attempt < 3) continue;
      fail(ErrorCode::kCorruption, "cannot read manifest in " + dir_.string());
    }
    json manifest;
    try {
      in >> manifest;
    } catch (const json::exception& e) {
      fail(ErrorCode::kCorruption, "malformed manifest: " + std::string(e.what()));
    }
    try {
      load_manifest(manifest);
    } catch (const json::exception& e) {
      fail(ErrorCode::kCorruption, "malformed store file: " + std::string(e.what()));
    }
    return;
  }
}

void Store::load_manifest(const json& manifest) {
  if (manifest.at("format") != "cvd-store" || manifest.at("format_version") != kFormatVersion) {
    fail(ErrorCode::kCorruption, "unsupported store format");
  }
  generation_ = manifest.at("generation").get<std::uint64_t>();
  next_rid_ = reserved_rid_ = manifest.at("next_rid").get<std::uint64_t>();
  primary_key_ = manifest.at("primary_key").get<std::vector<std::string>>();
  policy_ = manifest.value("policy", json());
  file_bytes_ = manifest.at("files").get<std::map<std::string, std::uint64_t>>();

  attributes_.clear();
  const std::string attr_text = read_prefix(dir_ / kAttributesFile, file_bytes_[kAttributesFile]);
  for (auto line : split_lines(attr_text)) {
    const json j = json::parse(line);
    attributes_.push_back(Attribute{j.at("id").get<AttrId>(), j.at("name").get<std::string>(),
                                    parse_data_type(j.at("type").get<std::string>())});
  }
  rebuild_columns();

  metadata_.clear();
  const std::string meta_text = read_prefix(dir_ / kMetadataFile, file_bytes_[kMetadataFile]);
  for (auto line : split_lines(meta_text)) {
    VersionMeta m = version_meta_from_json(json::parse(line));
    metadata_[m.vid] = std::move(m);
  }

  versioning_.clear();
  const std::string versions_text = read_prefix(dir_ / kVersionsFile, file_bytes_[kVersionsFile]);
  for (auto line : split_lines(versions_text)) {
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) fail(ErrorCode::kCorruption, "malformed versions.tsv row");
    auto num = [&](std::string_view s) {
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || p != s.data() + s.size()) {
        fail(ErrorCode::kCorruption, "malformed number in versions.tsv");
      }
      return v;
    };
    const VersionId vid(static_cast<std::uint32_t>(num(line.substr(0, t1))));
    VersionEntry e;
    e.partition = static_cast<PartitionId>(num(line.substr(t1 + 1, t2 - t1 - 1)));
    std::string_view rest = line.substr(t2 + 1);
    while (!rest.empty()) {
      auto sp = rest.find(' ');
      e.rlist.emplace_back(num(rest.substr(0, sp)));
      rest = sp == std::string_view::npos ? std::string_view{} : rest.substr(sp + 1);
    }
    versioning_[vid] = std::move(e);
  }

  staging_.clear();
  const std::string staging_text = read_prefix(dir_ / kStagingFile, file_bytes_[kStagingFile]);
  for (auto line : split_lines(staging_text)) {
    const json j = json::parse(line);
    const std::string name = j.at("name").get<std::string>();
    if (j.at("op") == "remove") {
      staging_.erase(name);
      continue;
    }
    StagingEntry s{name, {}, j.at("created_at").get<std::int64_t>(), j.at("path").get<std::string>()};
    for (const auto& p : j.at("parents")) s.parent_vids.emplace_back(p.get<std::uint32_t>());
    staging_[name] = std::move(s);
  }

  pool_.clear();
  segments_.clear();
  for (const auto& js : manifest.at("segments")) {
    const PartitionId pid = js.at("partition").get<PartitionId>();
    Segment seg;
    seg.bytes = js.at("bytes").get<std::uint64_t>();
    seg.rows = js.at("rows").get<std::uint64_t>();
    const std::string data = read_prefix(segment_path(pid), seg.bytes);
    const auto nl = data.find('\n');
    if (nl == std::string::npos || data.rfind("CVDSEG 1 ", 0) != 0) {
      fail(ErrorCode::kCorruption, "bad segment header in " + segment_path(pid).string());
    }
    Reader rd(std::string_view(data).substr(nl + 1), segment_path(pid).string());
    std::uint64_t rows = 0;
    bool compact = false;
    while (!rd.done()) {
      const std::uint64_t len = rd.uint(4);
      const std::size_t start = rd.pos();
      const auto kind = static_cast<std::uint8_t>(rd.uint(1));
      const RecordId rid(rd.uint(8));
      if (kind == kRowTombstone) {
        if (!seg.live.erase(rid)) fail(ErrorCode::kCorruption, "tombstone for absent record");
        compact = true;
      } else if (kind == kRowRecord) {
        Record r{rid, {}};
        const std::size_t ncols = rd.uint(2);
        const std::string_view bitmap = rd.bytes((ncols + 7) / 8);
        r.values.resize(ncols);
        for (std::size_t c = 0; c < ncols; ++c) {
          if (!(static_cast<unsigned char>(bitmap[c / 8]) & (1u << (c % 8)))) continue;
          switch (rd.uint(1)) {
            case kTagInteger:
              r.values[c] = static_cast<std::int64_t>(rd.uint(8));
              break;
            case kTagDecimal:
              r.values[c] = std::bit_cast<double>(rd.uint(8));
              break;
            case kTagText: {
              const std::size_t n = rd.uint(4);
              r.values[c] = std::string(rd.bytes(n));
              break;
            }
            default:
              fail(ErrorCode::kCorruption, "unknown value tag in segment");
          }
        }
        if (!seg.live.insert(rid).second) fail(ErrorCode::kCorruption, "record stored twice in segment");
        seg.order.push_back(rid);
        pool_.try_emplace(rid, std::move(r));
      } else {
        fail(ErrorCode::kCorruption, "unknown row kind in segment");
      }
      if (rd.pos() - start != len) fail(ErrorCode::kCorruption, "row length mismatch in segment");
      ++rows;
    }
    if (rows != seg.rows) fail(ErrorCode::kCorruption, "segment row count mismatch");
    if (compact) {
      std::unordered_set<RecordId> placed;
      std::vector<RecordId> order;
      // Keep the last placement of a rid that was deleted and re-inserted.
      for (auto it = seg.order.rbegin(); it != seg.order.rend(); ++it) {
        if (seg.live.count(*it) && placed.insert(*it).second) order.push_back(*it);
      }
      std::reverse(order.begin(), order.end());
      seg.order = std::move(order);
    }
    segments_.emplace(pid, std::move(seg));
  }

  for (const auto& [vid, e] : versioning_) {
    auto it = segments_.find(e.partition);
    if (it == segments_.end()) fail(ErrorCode::kCorruption, "version in unknown partition");
    for (RecordId rid : e.rlist) {
      if (!it->second.live.count(rid)) {
        fail(ErrorCode::kCorruption, "rlist of v" + std::to_string(vid.value) +
                                         " references a record missing from its segment");
      }
    }
  }
}

void Store::rebuild_columns() {
  columns_.clear();
  column_index_.clear();
  for (const auto& a : attributes_) {
    if (column_index_.emplace(a.name, columns_.size()).second) columns_.push_back(a.name);
  }
}

fs::path Store::segment_path(PartitionId pid) const {
  return dir_ / ("part_" + std::to_string(pid) + ".seg");
}

const Attribute& Store::attribute(AttrId id) const {
  for (const auto& a : attributes_) {
    if (a.id == id) return a;
  }
  fail(ErrorCode::kNotFound, "unknown attribute id " + std::to_string(id));
}

std::optional<std::size_t> Store::column_index(const std::string& name) const {
  auto it = column_index_.find(name);
  if (it == column_index_.end()) return std::nullopt;
  return it->second;
}

const VersionMeta& Store::meta(VersionId vid) const {
  auto it = metadata_.find(vid);
  if (it == metadata_.end()) fail(ErrorCode::kNotFound, "unknown version v" + std::to_string(vid.value));
  return it->second;
}

const VersionEntry& Store::entry(VersionId vid) const {
  auto it = versioning_.find(vid);
  if (it == versioning_.end()) fail(ErrorCode::kNotFound, "unknown version v" + std::to_string(vid.value));
  return it->second;
}

VersionId Store::next_vid() const {
  return metadata_.empty() ? VersionId(1) : VersionId(metadata_.rbegin()->first.value + 1);
}

const Record& Store::record(RecordId rid) const {
  auto it = pool_.find(rid);
  if (it == pool_.end()) fail(ErrorCode::kNotFound, "unknown record r" + std::to_string(rid.value));
  return it->second;
}

std::vector<PartitionId> Store::partitions() const {
  std::vector<PartitionId> out;
  for (const auto& [pid, s] : segments_) out.push_back(pid);
  return out;
}

std::uint64_t Store::segment_size(PartitionId pid) const {
  auto it = segments_.find(pid);
  if (it == segments_.end()) fail(ErrorCode::kNotFound, "unknown partition " + std::to_string(pid));
  return it->second.live.size();
}

bool Store::segment_contains(PartitionId pid, RecordId rid) const {
  auto it = segments_.find(pid);
  return it != segments_.end() && it->second.live.count(rid) != 0;
}

const std::vector<RecordId>& Store::segment_rids(PartitionId pid) const {
  auto it = segments_.find(pid);
  if (it == segments_.end()) fail(ErrorCode::kNotFound, "unknown partition " + std::to_string(pid));
  return it->second.order;
}

DataSegment Store::load_partition(PartitionId pid) const {
  auto it = segments_.find(pid);
  if (it == segments_.end()) fail(ErrorCode::kNotFound, "unknown partition " + std::to_string(pid));
  DataSegment d;
  d.partition_id = pid;
  d.records.reserve(it->second.order.size());
  for (RecordId rid : it->second.order) d.records.push_back(pool_.at(rid));
  d.read_cost = d.records.size();
  return d;
}

std::uint64_t Store::storage() const {
  std::uint64_t s = 0;
  for (const auto& [pid, seg] : segments_) s += seg.live.size();
  return s;
}

PartitionId Store::next_partition_id() const {
  return segments_.empty() ? 0 : segments_.rbegin()->first + 1;
}

RecordId Store::allocate_rids(std::uint64_t n) {
  const RecordId first(reserved_rid_);
  reserved_rid_ += n;
  return first;
}

void Store::validate(const Mutation& m) const {
  std::unordered_map<RecordId, const Record*> fresh;
  std::size_t n_columns = columns_.size();
  {
    std::set<std::string> names(columns_.begin(), columns_.end());
    for (const auto& a : m.new_attributes) {
      for (const auto& old : attributes_) {
        if (old.id == a.id) fail(ErrorCode::kInvariantViolation, "attribute id reused");
      }
      if (names.insert(a.name).second) ++n_columns;
    }
  }
  for (const auto& r : m.new_records) {
    if (r.rid.value < next_rid_ || r.rid.value >= reserved_rid_ || pool_.count(r.rid) ||
        !fresh.emplace(r.rid, &r).second) {
      fail(ErrorCode::kCorruption, "record id collision on r" + std::to_string(r.rid.value));
    }
    if (r.values.size() > n_columns) fail(ErrorCode::kInvariantViolation, "record wider than schema");
  }

  std::set<PartitionId> dropped(m.dropped_partitions.begin(), m.dropped_partitions.end());
  for (PartitionId pid : dropped) {
    if (!segments_.count(pid)) fail(ErrorCode::kNotFound, "cannot drop unknown partition");
  }
  // Post-mutation membership deltas per partition.
  std::map<PartitionId, std::pair<std::unordered_set<RecordId>, std::unordered_set<RecordId>>> delta;
  for (const auto& w : m.segments) {
    if (dropped.count(w.partition)) fail(ErrorCode::kInvariantViolation, "write to dropped partition");
    auto existing = segments_.find(w.partition);
    if (w.fresh && existing != segments_.end()) {
      fail(ErrorCode::kInvariantViolation, "fresh segment id already in use");
    }
    if (!w.fresh && existing == segments_.end()) {
      fail(ErrorCode::kNotFound, "unknown partition " + std::to_string(w.partition));
    }
    if (delta.count(w.partition)) fail(ErrorCode::kInvariantViolation, "partition written twice");
    auto& [ins, del] = delta[w.partition];
    for (RecordId rid : w.deletes) {
      if (w.fresh || !existing->second.live.count(rid) || !del.insert(rid).second) {
        fail(ErrorCode::kInvariantViolation, "delete of a record not in the segment");
      }
    }
    for (RecordId rid : w.inserts) {
      if (!fresh.count(rid) && !pool_.count(rid)) {
        fail(ErrorCode::kInvariantViolation, "insert of unknown record r" + std::to_string(rid.value));
      }
      const bool present = !w.fresh && existing->second.live.count(rid) && !del.count(rid);
      if (present || !ins.insert(rid).second) {
        fail(ErrorCode::kInvariantViolation, "record inserted twice into one segment");
      }
    }
  }

  auto member_after = [&](PartitionId pid, RecordId rid) {
    auto d = delta.find(pid);
    if (d != delta.end()) {
      if (d->second.first.count(rid)) return true;
      if (d->second.second.count(rid)) return false;
    }
    auto s = segments_.find(pid);
    return s != segments_.end() && s->second.live.count(rid) != 0;
  };
  auto partition_after = [&](PartitionId pid) {
    if (dropped.count(pid)) return false;
    return segments_.count(pid) != 0 || delta.count(pid) != 0;
  };

  for (const auto& [vid, e] : m.versioning) {
    if (!partition_after(e.partition)) {
      fail(ErrorCode::kInvariantViolation, "version placed in a missing partition");
    }
    std::unordered_set<RecordId> seen;
    for (RecordId rid : e.rlist) {
      if (!seen.insert(rid).second) fail(ErrorCode::kInvariantViolation, "duplicate rid in rlist");
      if (!member_after(e.partition, rid)) {
        fail(ErrorCode::kInvariantViolation, "rlist of v" + std::to_string(vid.value) +
                                                 " references r" + std::to_string(rid.value) +
                                                 " outside its segment");
      }
    }
  }
  // Versions that were not rewritten must still be fully stored; only
  // deletes and drops can break that.
  const bool removes = !dropped.empty() || std::any_of(m.segments.begin(), m.segments.end(),
                                                       [](const auto& w) { return !w.deletes.empty(); });
  if (removes) {
    for (const auto& [vid, e] : versioning_) {
      if (m.versioning.count(vid)) continue;
      if (!dropped.count(e.partition) && !delta.count(e.partition)) continue;
      if (!dropped.count(e.partition) && delta.at(e.partition).second.empty()) continue;
      if (!partition_after(e.partition)) {
        fail(ErrorCode::kInvariantViolation, "dropping a partition that still holds versions");
      }
      for (RecordId rid : e.rlist) {
        if (!member_after(e.partition, rid)) {
          fail(ErrorCode::kInvariantViolation, "delete removes a record still referenced");
        }
      }
    }
  }

  for (const auto& meta : m.metadata) {
    if (!versioning_.count(meta.vid) && !m.versioning.count(meta.vid)) {
      fail(ErrorCode::kInvariantViolation, "metadata for a version without a versioning entry");
    }
  }
  for (const auto& [vid, e] : m.versioning) {
    if (metadata_.count(vid)) continue;
    const bool has_meta = std::any_of(m.metadata.begin(), m.metadata.end(),
                                      [&](const VersionMeta& x) { return x.vid == vid; });
    if (!has_meta) fail(ErrorCode::kInvariantViolation, "new version without metadata");
  }

  std::set<std::string> removed(m.staging_removed.begin(), m.staging_removed.end());
  for (const auto& name : removed) {
    if (!staging_.count(name)) fail(ErrorCode::kNotFound, "no staging entry '" + name + "'");
  }
  for (const auto& s : m.staging_added) {
    if (staging_.count(s.name) && !removed.count(s.name)) {
      fail(ErrorCode::kStagingConflict, "staging table '" + s.name + "' already exists");
    }
  }
}

void Store::apply(const Mutation& m) {
  if (m.empty()) return;
  WriterLock lock(dir_);
  if (generation_ > 0 && !fs::exists(dir_ / manifest_name(generation_))) {
    fail(ErrorCode::kLocked, "store was changed by another writer; reopen it");
  }
  validate(m);
  if (generation_ > 0) collect_garbage(m);

  Writer writer(crash_, options_.sync);
  std::unordered_map<RecordId, const Record*> fresh;
  for (const auto& r : m.new_records) fresh.emplace(r.rid, &r);
  auto lookup = [&](RecordId rid) -> const Record& {
    auto it = fresh.find(rid);
    return it != fresh.end() ? *it->second : pool_.at(rid);
  };

  // Segment files first; none of this is visible until the manifest switch.
  std::map<PartitionId, std::pair<std::uint64_t, std::uint64_t>> seg_sizes;  // bytes, rows
  for (const auto& [pid, seg] : segments_) seg_sizes[pid] = {seg.bytes, seg.rows};
  for (PartitionId pid : m.dropped_partitions) seg_sizes.erase(pid);
  std::vector<Attribute> all_attrs = attributes_;
  all_attrs.insert(all_attrs.end(), m.new_attributes.begin(), m.new_attributes.end());
  for (const auto& w : m.segments) {
    std::string buf;
    std::uint64_t offset = 0;
    std::uint64_t rows = 0;
    if (w.fresh) {
      buf = "CVDSEG 1 partition=" + std::to_string(w.partition) + " attrs=";
      for (std::size_t i = 0; i < all_attrs.size(); ++i) {
        if (i) buf += ',';
        buf += std::to_string(all_attrs[i].id);
      }
      buf += '\n';
    } else {
      offset = seg_sizes.at(w.partition).first;
      rows = seg_sizes.at(w.partition).second;
    }
    for (RecordId rid : w.deletes) encode_tombstone(buf, rid);
    for (RecordId rid : w.inserts) encode_record(buf, lookup(rid));
    rows += w.deletes.size() + w.inserts.size();
    if (!buf.empty()) writer.append_at(segment_path(w.partition), offset, buf);
    seg_sizes[w.partition] = {offset + buf.size(), rows};
  }

  auto files = file_bytes_;
  auto append_text = [&](const char* name, const std::string& text) {
    if (text.empty()) return;
    writer.append_at(dir_ / name, files[name], text);
    files[name] += text.size();
  };
  {
    std::string text;
    for (const auto& a : m.new_attributes) text += attribute_to_json(a).dump() + '\n';
    append_text(kAttributesFile, text);
  }
  {
    std::string text;
    for (const auto& [vid, e] : m.versioning) {
      text += std::to_string(vid.value) + '\t' + std::to_string(e.partition) + '\t';
      for (std::size_t i = 0; i < e.rlist.size(); ++i) {
        if (i) text += ' ';
        text += std::to_string(e.rlist[i].value);
      }
      text += '\n';
    }
    append_text(kVersionsFile, text);
  }
  {
    std::string text;
    for (const auto& meta : m.metadata) text += to_json(meta).dump() + '\n';
    append_text(kMetadataFile, text);
  }
  {
    std::string text;
    for (const auto& name : m.staging_removed) {
      text += json{{"op", "remove"}, {"name", name}}.dump() + '\n';
    }
    for (const auto& s : m.staging_added) text += staging_add_json(s).dump() + '\n';
    append_text(kStagingFile, text);
  }
  for (const char* name : {kAttributesFile, kMetadataFile, kVersionsFile, kStagingFile}) {
    files.try_emplace(name, 0);
  }

  std::uint64_t next_rid = next_rid_;
  for (const auto& r : m.new_records) next_rid = std::max(next_rid, r.rid.value + 1);
  const json policy = m.policy ? *m.policy : policy_;
  json segs = json::array();
  for (const auto& [pid, sz] : seg_sizes) {
    segs.push_back({{"partition", pid}, {"bytes", sz.first}, {"rows", sz.second}});
  }
  const std::uint64_t gen = generation_ + 1;
  const json manifest{{"format", "cvd-store"},
                      {"format_version", kFormatVersion},
                      {"generation", gen},
                      {"next_rid", next_rid},
                      {"primary_key", primary_key_},
                      {"files", files},
                      {"segments", segs},
                      {"policy", policy}};
  writer.replace(dir_ / kManifestTemp, dir_ / manifest_name(gen), manifest.dump(2) + '\n');

  // Published: mirror the change in memory.
  const std::uint64_t old_gen = generation_;
  generation_ = gen;
  next_rid_ = next_rid;
  reserved_rid_ = std::max(reserved_rid_, next_rid_);
  file_bytes_ = std::move(files);
  policy_ = policy;
  if (!m.new_attributes.empty()) {
    attributes_ = std::move(all_attrs);
    rebuild_columns();
  }
  for (const auto& r : m.new_records) pool_.emplace(r.rid, r);
  for (PartitionId pid : m.dropped_partitions) segments_.erase(pid);
  for (const auto& w : m.segments) {
    Segment& seg = segments_[w.partition];
    if (!w.deletes.empty()) {
      for (RecordId rid : w.deletes) seg.live.erase(rid);
      std::erase_if(seg.order, [&](RecordId rid) { return !seg.live.count(rid); });
    }
    for (RecordId rid : w.inserts) {
      seg.live.insert(rid);
      seg.order.push_back(rid);
    }
    seg.bytes = seg_sizes.at(w.partition).first;
    seg.rows = seg_sizes.at(w.partition).second;
  }
  for (const auto& [vid, e] : m.versioning) versioning_[vid] = e;
  for (const auto& meta : m.metadata) metadata_[meta.vid] = meta;
  std::vector<std::string> retired_paths;
  for (const auto& name : m.staging_removed) {
    retired_paths.push_back(staging_.at(name).path);
    staging_.erase(name);
  }
  for (const auto& s : m.staging_added) {
    staging_[s.name] = s;
    std::erase(retired_paths, s.path);
  }

  // Best-effort cleanup of what the old manifest referenced.
  std::error_code ec;
  if (old_gen > 0) fs::remove(dir_ / manifest_name(old_gen), ec);
  for (PartitionId pid : m.dropped_partitions) {
    if (!segments_.count(pid)) fs::remove(segment_path(pid), ec);
  }
  for (const auto& p : retired_paths) {
    // Tables checked out to user files are left alone.
    if (fs::path(p).is_relative()) {
      fs::remove(dir_ / p, ec);
      fs::remove(fs::path(dir_ / p).replace_extension(".schema"), ec);
    }
  }
}

void Store::collect_garbage(const Mutation& m) const {
  // Runs under the writer lock: anything not reachable from the current
  // manifest is debris from an interrupted writer.
  std::error_code ec;
  std::set<std::string> keep{kAttributesFile, kMetadataFile, kVersionsFile, kStagingFile, kLockFile,
                             "staging", manifest_name(generation_)};
  for (const auto& [pid, seg] : segments_) keep.insert(segment_path(pid).filename().string());
  for (const auto& de : fs::directory_iterator(dir_, ec)) {
    const std::string name = de.path().filename().string();
    const bool ours = name.rfind("part_", 0) == 0 || manifest_generation(name) || name == kManifestTemp;
    if (ours && !keep.count(name)) fs::remove(de.path(), ec);
  }
  std::set<fs::path> staged;
  auto keep_staged = [&](const StagingEntry& s) {
    staged.insert(dir_ / s.path);
    staged.insert(fs::path(dir_ / s.path).replace_extension(".schema"));
  };
  for (const auto& [name, s] : staging_) keep_staged(s);
  for (const auto& s : m.staging_added) keep_staged(s);
  for (const auto& de : fs::directory_iterator(staging_dir(), ec)) {
    if (!staged.count(de.path())) fs::remove(de.path(), ec);
  }
}

void Store::append_commit(const std::vector<Record>& records_new, VersionId vid, PartitionId partition,
                          std::vector<RecordId> rlist, const VersionMeta& meta) {
  Mutation m;
  m.new_records = records_new;
  Mutation::SegmentWrite w{partition, !has_partition(partition), {}, {}};
  for (RecordId rid : rlist) {
    if (!segment_contains(partition, rid)) w.inserts.push_back(rid);
  }
  if (!w.inserts.empty() || w.fresh) m.segments.push_back(std::move(w));
  m.versioning.emplace(vid, VersionEntry{partition, std::move(rlist)});
  m.metadata.push_back(meta);
  apply(m);
}

LogicalState Store::snapshot() const {
  LogicalState s;
  s.attributes = attributes_;
  s.primary_key = primary_key_;
  s.metadata = metadata_;
  s.versioning = versioning_;
  for (const auto& [pid, seg] : segments_) {
    auto& set = s.segments[pid];
    set.insert(seg.live.begin(), seg.live.end());
    for (RecordId rid : seg.live) s.records.emplace(rid, pool_.at(rid));
  }
  s.staging = staging_;
  s.next_rid = next_rid_;
  s.policy = policy_;
  return s;
}

}  // namespace cvd::store
