#include "support.hpp"

#include "pcdesc/config.hpp"
#include "pcdesc/io.hpp"

#include <doctest.h>
#include <zlib.h>

#include <filesystem>

using namespace pcdesc;
using namespace pcdesc::testing;

namespace {

nn::ArchConfig small_arch() {
  nn::ArchConfig a;
  a.conv_width = 4;
  a.flex1_width = 8;
  a.descriptor_dim = 8;
  a.det_w1 = 4;
  a.det_w2 = 4;
  a.det_w3 = 2;
  a.proj1_width = 8;
  a.proj2_width = 8;
  a.att_w1 = 4;
  a.att_w2 = 2;
  a.clusters = 3;
  a.global_dim = 5;
  return a;
}

void fix_crc(io::Bytes& b) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, b.data(), static_cast<uInt>(b.size() - 4));
  for (int i = 0; i < 4; ++i) b[b.size() - 4 + i] = static_cast<std::uint8_t>((crc >> (8 * i)) & 0xff);
}

std::size_t find_bytes(const io::Bytes& b, const std::string& s) {
  for (std::size_t i = 0; i + s.size() <= b.size(); ++i)
    if (std::equal(s.begin(), s.end(), b.begin() + static_cast<std::ptrdiff_t>(i))) return i;
  return std::string::npos;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

// Coordinates already representable in single precision.
PointCloud float_cloud(std::size_t n, std::uint64_t seed) {
  PointCloud c = random_cloud(n, seed);
  for (auto& p : c.points)
    for (int d = 0; d < 3; ++d) p(d) = static_cast<double>(static_cast<float>(p(d)));
  return c;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / ("pcdesc_io_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("exit codes") {
  CHECK(exit_code(ErrorCode::Configuration) == 2);
  CHECK(exit_code(ErrorCode::Parse) == 3);
  CHECK(exit_code(ErrorCode::NumericError) == 4);
  CHECK(exit_code(ErrorCode::InsufficientMatches) == 5);
}

TEST_CASE("dhpc format") {
  const PointCloud c = float_cloud(57, 1);
  const io::Bytes b = io::encode_dhpc(c);
  SUBCASE("layout") {
    REQUIRE(b.size() == 4 + 2 + 4 + 57 * 12);
    CHECK(std::string(b.begin(), b.begin() + 4) == "DHPC");
    CHECK(b[4] == 1);
    CHECK(b[5] == 0);
    CHECK(b[6] == 57);
    const float x0 = static_cast<float>(c[0].x());
    std::uint32_t bits = std::bit_cast<std::uint32_t>(x0);
    for (int i = 0; i < 4; ++i) CHECK(b[10 + i] == ((bits >> (8 * i)) & 0xff));
  }
  SUBCASE("round trip is bitwise") {
    const PointCloud d = io::decode_dhpc(b);
    REQUIRE(d.size() == c.size());
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(d[i] == c[i]);
    CHECK(io::encode_dhpc(d) == b);
  }
  SUBCASE("count mismatch reports a byte offset") {
    io::Bytes t = b;
    t.resize(t.size() - 5);
    const std::string msg = message_of([&] { io::decode_dhpc(t); });
    CHECK(msg.find("byte") != std::string::npos);
    CHECK(error_code_of([&] { io::decode_dhpc(t); }) == ErrorCode::Parse);
    io::Bytes extra = b;
    extra.push_back(0);
    CHECK(error_code_of([&] { io::decode_dhpc(extra); }) == ErrorCode::Parse);
  }
  SUBCASE("bad magic and version") {
    io::Bytes t = b;
    t[0] = 'X';
    CHECK(message_of([&] { io::decode_dhpc(t); }).find("byte 0") != std::string::npos);
    t = b;
    t[4] = 9;
    CHECK(error_code_of([&] { io::decode_dhpc(t); }) == ErrorCode::Parse);
  }
}

TEST_CASE("xyz format") {
  const PointCloud c = random_cloud(20, 2);
  const PointCloud d = io::decode_xyz(io::encode_xyz(c));
  REQUIRE(d.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) CHECK(d[i] == c[i]);
  CHECK(io::decode_xyz("# comment\n1 2 3\n\n4 5 6\n").size() == 2);
  CHECK(error_code_of([] { io::decode_xyz("1 2\n"); }) == ErrorCode::Parse);
  CHECK(error_code_of([] { io::decode_xyz("1 2 z\n"); }) == ErrorCode::Parse);
}

TEST_CASE("cloud files and IO errors") {
  TempDir tmp;
  const PointCloud c = float_cloud(10, 3);
  io::save_cloud(tmp.path / "a.dhpc", c);
  io::save_cloud(tmp.path / "a.xyz", c);
  CHECK(io::load_cloud(tmp.path / "a.dhpc")[3] == c[3]);
  CHECK(io::load_cloud(tmp.path / "a.xyz")[3] == c[3]);
  CHECK(error_code_of([&] { io::load_cloud(tmp.path / "missing.dhpc"); }) == ErrorCode::Io);
  CHECK(message_of([&] { io::load_cloud(tmp.path / "missing.dhpc"); }).find("missing.dhpc") != std::string::npos);
  CHECK(error_code_of([&] { io::save_cloud(tmp.path / "a.ply", c); }) != static_cast<ErrorCode>(-1));
}

TEST_CASE("model format") {
  const auto m = nn::init_model<float>(small_arch(), 7);
  const io::Bytes b = io::encode_model(m);
  SUBCASE("round trip is bitwise") {
    const auto d = io::decode_model(b);
    CHECK(d.arch == m.arch);
    CHECK(nn::parameter_hash(d) == nn::parameter_hash(m));
    CHECK(io::encode_model(d) == b);
  }
  SUBCASE("corruption fails the checksum") {
    io::Bytes t = b;
    t[t.size() / 2] ^= 0x40;
    CHECK(error_code_of([&] { io::decode_model(t); }) == ErrorCode::Parse);
  }
  SUBCASE("duplicate, unknown and missing blocks are rejected") {
    io::Bytes dup = b;
    const auto at = find_bytes(dup, "detector.l0.bias");
    REQUIRE(at != std::string::npos);
    dup[at + 10] = '1';
    fix_crc(dup);
    CHECK(error_code_of([&] { io::decode_model(dup); }) == ErrorCode::Parse);
    io::Bytes unk = b;
    unk[at + 10] = '9';
    fix_crc(unk);
    CHECK(error_code_of([&] { io::decode_model(unk); }) == ErrorCode::Parse);
  }
  SUBCASE("pooling heads serialize without NetVLAD blocks") {
    nn::ArchConfig a = small_arch();
    a.aggregator = nn::Aggregator::MaxPool;
    const auto pm = nn::init_model<float>(a, 2);
    const auto d = io::decode_model(io::encode_model(pm));
    CHECK(d.head.mode == nn::Aggregator::MaxPool);
    CHECK(d.head.pool_fc.weight == pm.head.pool_fc.weight);
  }
}

TEST_CASE("database and manifest formats") {
  retrieval::DescriptorDatabase db(4);
  for (int i = 0; i < 3; ++i) {
    Eigen::VectorXd v = random_mat<double>(1, 4, i).row(0).transpose();
    v /= v.norm();
    for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
    db.add("p" + std::to_string(i), Eigen::Vector3d(i, 2.5 * i, 0), v, 1e-5);
  }
  const auto d = io::decode_database(io::encode_database(db));
  REQUIRE(d.size() == 3);
  CHECK(d[2].id == "p2");
  CHECK(d[2].position == db[2].position);
  CHECK(d[1].descriptor == db[1].descriptor);

  const std::vector<io::ManifestEntry> entries{{"a", "a.dhpc", 1.5, -2.0}, {"b", "b.dhpc", 100.25, 3.0}};
  const auto text = io::encode_manifest(entries);
  CHECK(text.rfind("id,file,x,y\n", 0) == 0);
  const auto back = io::decode_manifest(text);
  REQUIRE(back.size() == 2);
  CHECK(back[1].file == "b.dhpc");
  CHECK(back[1].x == 100.25);
  CHECK(error_code_of([] { io::decode_manifest("id,file,x,y\na,b,1\n"); }) == ErrorCode::Parse);
  CHECK(error_code_of([] { io::decode_manifest("name,x\n"); }) == ErrorCode::Parse);
}

TEST_CASE("config files") {
  SUBCASE("defaults round trip through text") {
    const PipelineConfig c;
    const PipelineConfig d = parse_config(format_config(c));
    CHECK(format_config(d) == format_config(c));
    CHECK(d.arch == c.arch);
  }
  SUBCASE("overrides keep other values") {
    const auto c = parse_config("[train]\nsteps = 7 # comment\n[eval]\nmatch_mode = nn\nkeypoints=64\n");
    CHECK(c.train.steps == 7);
    CHECK(c.eval.match_mode == reg::MatchMode::Nearest);
    CHECK(c.eval.keypoints == 64);
    CHECK(c.train.lr == 1e-4);
    const auto r = parse_config(format_config(c));
    CHECK(r.train.steps == 7);
    CHECK(r.eval.keypoints == 64);
  }
  SUBCASE("unknown sections and keys are configuration errors") {
    CHECK(error_code_of([] { parse_config("[nope]\n"); }) == ErrorCode::Configuration);
    CHECK(error_code_of([] { parse_config("[train]\nstepz = 3\n"); }) == ErrorCode::Configuration);
  }
  SUBCASE("malformed lines are parse errors with the line number") {
    CHECK(error_code_of([] { parse_config("[train]\n\nsteps 3\n"); }) == ErrorCode::Parse);
    CHECK(message_of([] { parse_config("[train]\n\nsteps 3\n"); }).find("line 3") != std::string::npos);
    CHECK(error_code_of([] { parse_config("[train]\nsteps = many\n"); }) == ErrorCode::Parse);
    CHECK(error_code_of([] { parse_config("steps = 3\n"); }) == ErrorCode::Parse);
  }
  SUBCASE("values are validated") {
    CHECK(error_code_of([] { parse_config("[loss]\nkappa = 2\n"); }) == ErrorCode::Configuration);
    CHECK(error_code_of([] { parse_config("[arch]\nclusters = 0\n"); }) == ErrorCode::Configuration);
    CHECK(error_code_of([] { parse_config("[eval]\nkeypoints = 0\n"); }) == ErrorCode::Configuration);
  }
  SUBCASE("files") {
    TempDir tmp;
    io::write_text(tmp.path / "c.ini", "[global]\nlr = 2e-05\n");
    CHECK(load_config(tmp.path / "c.ini").global.lr == 2e-5);
    CHECK(error_code_of([&] { load_config(tmp.path / "none.ini"); }) == ErrorCode::Io);
  }
}

TEST_CASE("evaluation defaults") {
  const EvalConfig e;
  CHECK(e.keypoints == 256);
  CHECK(e.nms_radius == 0.5);
  CHECK(e.repeat_radius == 0.5);
  CHECK(e.max_rte == 2.0);
  CHECK(e.max_rre == 5.0);
  CHECK(e.max_iterations == 10000);
  CHECK(e.positive_radius == 25.0);
  CHECK(e.recall_max_n == 25);
  CHECK(e.match_mode == reg::MatchMode::Mutual);
  CHECK(e.sigma == 0.02);
}
