#include "pcdesc/io.hpp"

#include "pcdesc/config.hpp"
#include "pcdesc/error.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace pcdesc::io {

namespace {

class Writer {
 public:
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) b_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const std::string& s) { b_.insert(b_.end(), s.begin(), s.end()); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  Bytes& bytes() { return b_; }

 private:
  Bytes b_;
};

class Reader {
 public:
  Reader(const Bytes& b, std::size_t end, const char* what) : b_(b), end_(end), what_(what) {}

  [[noreturn]] void error(const std::string& msg, std::size_t at) const {
    fail(ErrorCode::Parse, std::string(what_) + ": " + msg + " at byte " + std::to_string(at));
  }
  void need(std::size_t n, const char* field) const {
    if (end_ - pos_ < n) error(std::string("truncated ") + field, pos_);
  }
  std::uint16_t u16(const char* field) {
    need(2, field);
    std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  double f64(const char* field) { return std::bit_cast<double>(u64(field)); }
  std::string raw(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string str(const char* field) {
    const std::size_t at = pos_;
    const std::uint32_t n = u32(field);
    if (n > end_ - pos_) error(std::string("length of ") + field + " exceeds the payload", at);
    return raw(n, field);
  }
  void magic(const char* expected) {
    const std::size_t at = pos_;
    if (raw(4, "magic") != expected) error(std::string("bad magic, expected ") + expected, at);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  const Bytes& b_;
  std::size_t end_;
  const char* what_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const Bytes& b, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, b.data(), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  for (auto& ch : e) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return e;
}

}  // namespace

Bytes encode_dhpc(const PointCloud& cloud) {
  Writer w;
  w.raw("DHPC");
  w.u16(kCloudVersion);
  w.u32(static_cast<std::uint32_t>(cloud.size()));
  for (const auto& p : cloud.points)
    for (int d = 0; d < 3; ++d) w.f32(static_cast<float>(p(d)));
  return std::move(w.bytes());
}

PointCloud decode_dhpc(const Bytes& bytes) {
  Reader r(bytes, bytes.size(), "dhpc");
  r.magic("DHPC");
  const std::size_t vat = r.pos();
  if (r.u16("version") != kCloudVersion) r.error("unsupported version", vat);
  const std::size_t cat = r.pos();
  const std::uint32_t count = r.u32("point count");
  if (count == 0) r.error("point count must be >= 1", cat);
  const std::size_t payload = static_cast<std::size_t>(count) * 12;
  if (r.remaining() != payload)
    r.error("declared " + std::to_string(count) + " points but payload holds " + std::to_string(r.remaining()) +
                " bytes",
            r.pos());
  PointCloud c;
  c.points.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    for (int d = 0; d < 3; ++d) c.points[i](d) = r.f32("coordinate");
    if (!c.points[i].allFinite()) r.error("non-finite coordinate", at);
  }
  return c;
}

std::string encode_xyz(const PointCloud& cloud) {
  std::string out;
  char buf[128];
  for (const auto& p : cloud.points) {
    for (int d = 0; d < 3; ++d) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, p(d));
      out.append(buf, end);
      out.push_back(d < 2 ? ' ' : '\n');
    }
  }
  return out;
}

PointCloud decode_xyz(const std::string& text) {
  PointCloud c;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    const std::size_t line_start = pos;
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string where = "xyz line " + std::to_string(lineno) + " (byte " + std::to_string(line_start) + ")";
    if (tok.size() != 3) fail(ErrorCode::Parse, where + ": expected 3 coordinates, found " + std::to_string(tok.size()));
    Point3 p;
    for (int d = 0; d < 3; ++d) {
      const auto& t = tok[static_cast<std::size_t>(d)];
      auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), p(d));
      if (ec != std::errc() || end != t.data() + t.size() || !std::isfinite(p(d)))
        fail(ErrorCode::Parse, where + ": invalid coordinate '" + t + "'");
    }
    c.points.push_back(p);
  }
  if (c.empty()) fail(ErrorCode::Parse, "xyz: no points");
  return c;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
  Bytes b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return b;
}

std::string read_text(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return std::string(b.begin(), b.end());
}

void write_file(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::Io, "write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, Bytes(text.begin(), text.end()));
}

PointCloud load_cloud(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  try {
    if (ext == ".dhpc") return decode_dhpc(read_file(path));
    if (ext == ".xyz") return decode_xyz(read_text(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Parse) fail(ErrorCode::Parse, path.string() + ": " + e.what());
    throw;
  }
  fail(ErrorCode::Io, "unsupported point cloud extension '" + ext + "' for " + path.string());
}

void save_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  const std::string ext = lower_ext(path);
  if (ext == ".dhpc") return write_file(path, encode_dhpc(cloud));
  if (ext == ".xyz") return write_text(path, encode_xyz(cloud));
  fail(ErrorCode::Io, "unsupported point cloud extension '" + ext + "' for " + path.string());
}

Bytes encode_model(const nn::ModelParams<float>& m) {
  Writer w;
  w.raw("DHMD");
  w.u16(kModelVersion);
  w.str(format_arch(m.arch));
  nn::ModelParams<float> copy = m;
  std::vector<std::pair<std::string, const nn::Mat<float>*>> blocks;
  nn::for_each_param(copy, [&](const std::string& name, nn::Mat<float>& p) { blocks.emplace_back(name, &p); });
  w.u32(static_cast<std::uint32_t>(blocks.size()));
  for (const auto& [name, p] : blocks) {
    w.str(name);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(p->rows()));
    w.u32(static_cast<std::uint32_t>(p->cols()));
    for (Eigen::Index i = 0; i < p->size(); ++i) w.f32(p->data()[i]);
  }
  w.u32(crc32_of(w.bytes(), w.bytes().size()));
  return std::move(w.bytes());
}

nn::ModelParams<float> decode_model(const Bytes& bytes) {
  if (bytes.size() < 4 + 2 + 4) fail(ErrorCode::Parse, "model: file too short at byte " + std::to_string(bytes.size()));
  const std::size_t body = bytes.size() - 4;
  Reader r(bytes, body, "model");
  {
    Reader tail(bytes, bytes.size(), "model");
    tail.raw(body, "body");
    const std::uint32_t stored = tail.u32("crc");
    if (stored != crc32_of(bytes, body)) r.error("CRC-32 mismatch", body);
  }
  r.magic("DHMD");
  const std::size_t vat = r.pos();
  if (r.u16("version") != kModelVersion) r.error("unsupported version", vat);
  const std::size_t aat = r.pos();
  const std::string arch_text = r.str("architecture text");
  PipelineConfig pc;
  try {
    pc = parse_config(arch_text);
  } catch (const Error& e) {
    r.error(std::string("invalid architecture: ") + e.what(), aat);
  }
  nn::ModelParams<float> m = nn::init_model<float>(pc.arch, 0);
  std::map<std::string, nn::Mat<float>*> slots;
  nn::for_each_param(m, [&](const std::string& name, nn::Mat<float>& p) { slots.emplace(name, &p); });
  std::map<std::string, bool> seen;

  const std::uint32_t count = r.u32("block count");
  for (std::uint32_t b = 0; b < count; ++b) {
    const std::size_t at = r.pos();
    const std::string name = r.str("block name");
    auto it = slots.find(name);
    if (it == slots.end()) r.error("unknown parameter block '" + name + "'", at);
    if (seen[name]) r.error("duplicate parameter block '" + name + "'", at);
    seen[name] = true;
    const std::size_t rat = r.pos();
    const std::uint32_t rank = r.u32("rank");
    if (rank != 2) r.error("block '" + name + "' must have rank 2", rat);
    const std::size_t dat = r.pos();
    const std::uint32_t rows = r.u32("dims"), cols = r.u32("dims");
    nn::Mat<float>& dst = *it->second;
    if (rows != dst.rows() || cols != dst.cols())
      r.error("block '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                  std::to_string(dst.rows()) + "x" + std::to_string(dst.cols()),
              dat);
    r.need(static_cast<std::size_t>(rows) * cols * 4, "block values");
    for (Eigen::Index i = 0; i < dst.size(); ++i) dst.data()[i] = r.f32("value");
  }
  if (r.remaining() != 0) r.error("trailing bytes before the CRC", r.pos());
  for (const auto& [name, p] : slots)
    if (!seen[name]) r.error("missing parameter block '" + name + "'", r.pos());
  return m;
}

nn::ModelParams<float> load_model(const std::filesystem::path& path) {
  try {
    return decode_model(read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Parse) fail(ErrorCode::Parse, path.string() + ": " + e.what());
    throw;
  }
}

void save_model(const std::filesystem::path& path, const nn::ModelParams<float>& m) {
  write_file(path, encode_model(m));
}

Bytes encode_database(const retrieval::DescriptorDatabase& db) {
  Writer w;
  w.raw("DHDB");
  w.u16(kDatabaseVersion);
  w.u32(static_cast<std::uint32_t>(db.dim()));
  w.u32(static_cast<std::uint32_t>(db.size()));
  for (const auto& e : db.entries()) {
    w.str(e.id);
    for (int d = 0; d < 3; ++d) w.f64(e.position(d));
    for (Eigen::Index i = 0; i < e.descriptor.size(); ++i) w.f32(static_cast<float>(e.descriptor(i)));
  }
  return std::move(w.bytes());
}

retrieval::DescriptorDatabase decode_database(const Bytes& bytes) {
  Reader r(bytes, bytes.size(), "database");
  r.magic("DHDB");
  const std::size_t vat = r.pos();
  if (r.u16("version") != kDatabaseVersion) r.error("unsupported version", vat);
  const std::uint32_t dim = r.u32("dimension");
  const std::uint32_t count = r.u32("entry count");
  retrieval::DescriptorDatabase db(static_cast<int>(dim));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    std::string id = r.str("entry id");
    Eigen::Vector3d pos;
    for (int d = 0; d < 3; ++d) pos(d) = r.f64("position");
    Eigen::VectorXd desc(dim);
    for (std::uint32_t j = 0; j < dim; ++j) desc(j) = r.f32("descriptor");
    try {
      db.add(std::move(id), pos, desc);
    } catch (const Error& e) {
      r.error(e.what(), at);
    }
  }
  if (r.remaining() != 0) r.error("trailing bytes", r.pos());
  return db;
}

std::string encode_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out = "id,file,x,y\n";
  char buf[64];
  for (const auto& e : entries) {
    out += e.id + "," + e.file + ",";
    auto [ex, e1] = std::to_chars(buf, buf + sizeof buf, e.x);
    out.append(buf, ex);
    out += ",";
    auto [ey, e2] = std::to_chars(buf, buf + sizeof buf, e.y);
    out.append(buf, ey);
    out += "\n";
  }
  return out;
}

std::vector<ManifestEntry> decode_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::vector<ManifestEntry> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != "id,file,x,y") fail(ErrorCode::Parse, "manifest line 1: expected header id,file,x,y");
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    const std::string where = "manifest line " + std::to_string(lineno);
    if (cells.size() != 4) fail(ErrorCode::Parse, where + ": expected 4 columns");
    ManifestEntry e{cells[0], cells[1], 0.0, 0.0};
    for (int k = 0; k < 2; ++k) {
      const std::string& c = cells[2 + static_cast<std::size_t>(k)];
      double& v = k == 0 ? e.x : e.y;
      auto [end, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || end != c.data() + c.size()) fail(ErrorCode::Parse, where + ": invalid position '" + c + "'");
    }
    out.push_back(std::move(e));
  }
  if (lineno == 0) fail(ErrorCode::Parse, "manifest: empty file");
  return out;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  try {
    return decode_manifest(read_text(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Parse) fail(ErrorCode::Parse, path.string() + ": " + e.what());
    throw;
  }
}

}  // namespace pcdesc::io
