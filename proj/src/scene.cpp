#include "pcdesc/scene.hpp"

#include "pcdesc/error.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace pcdesc {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

namespace {

class SurfaceSampler {
 public:
  SurfaceSampler(std::mt19937_64& rng, double density, std::vector<Point3>& out)
      : rng_(rng), density_(density), out_(out) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  /// Parallelogram origin + s·u + t·v, s,t in [0,1].
  void patch(const Point3& origin, const Point3& u, const Point3& v) {
    const double area = u.cross(v).norm();
    const auto n = static_cast<std::size_t>(std::ceil(area * density_));
    for (std::size_t i = 0; i < n; ++i) out_.push_back(origin + uniform(0, 1) * u + uniform(0, 1) * v);
  }

  void box(const Point3& center, const Point3& size, double yaw) {
    const Eigen::Matrix3d R = Eigen::AngleAxisd(yaw, Point3::UnitZ()).toRotationMatrix();
    const Point3 ex = R * Point3(size.x(), 0, 0), ey = R * Point3(0, size.y(), 0), ez(0, 0, size.z());
    const Point3 o = center - 0.5 * ex - 0.5 * ey;
    patch(o, ex, ez);
    patch(o + ey, ex, ez);
    patch(o, ey, ez);
    patch(o + ex, ey, ez);
    patch(o + ez, ex, ey);  // roof, no floor
  }

  void pole(const Point3& base, double radius, double height) {
    const double area = 2 * std::numbers::pi * radius * height;
    const auto n = static_cast<std::size_t>(std::ceil(area * density_));
    for (std::size_t i = 0; i < n; ++i) {
      const double a = uniform(0, 2 * std::numbers::pi);
      out_.push_back(base + Point3(radius * std::cos(a), radius * std::sin(a), uniform(0, height)));
    }
  }

  void blob(const Point3& center, const Point3& spread, std::size_t n) {
    std::normal_distribution<double> g(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i)
      out_.push_back(center + Point3(spread.x() * g(rng_), spread.y() * g(rng_), std::abs(spread.z() * g(rng_))));
  }

 private:
  std::mt19937_64& rng_;
  double density_;
  std::vector<Point3>& out_;
};

}  // namespace

PointCloud make_synthetic_scene(std::size_t points, std::uint64_t seed, const SceneConfig& cfg) {
  require(points >= 1, ErrorCode::InvalidArgument, "make_synthetic_scene: points must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Point3> raw;
  SurfaceSampler s(rng, cfg.surface_density, raw);
  const double h = cfg.extent / 2;

  for (int attempt = 0; attempt < 16; ++attempt) {
    const int walls = s.uniform_int(cfg.min_walls, cfg.max_walls);
    for (int i = 0; i < walls; ++i) {
      const double len = s.uniform(3.0, 10.0), height = s.uniform(1.5, 4.0), yaw = s.uniform(0, std::numbers::pi);
      const Point3 dir(std::cos(yaw) * len, std::sin(yaw) * len, 0);
      const Point3 start(s.uniform(-h, h) - dir.x() / 2, s.uniform(-h, h) - dir.y() / 2, s.uniform(0.0, 0.5));
      s.patch(start, dir, Point3(0, 0, height));
      // occasional L-shaped corner
      if (s.uniform(0, 1) < 0.4) {
        const double len2 = s.uniform(1.5, 5.0);
        const Point3 dir2(-std::sin(yaw) * len2, std::cos(yaw) * len2, 0);
        s.patch(start + dir, dir2, Point3(0, 0, height));
      }
    }
    const int boxes = s.uniform_int(cfg.min_boxes, cfg.max_boxes);
    for (int i = 0; i < boxes; ++i) {
      const Point3 size(s.uniform(1.0, 4.5), s.uniform(1.0, 3.0), s.uniform(0.8, 3.0));
      s.box(Point3(s.uniform(-h, h), s.uniform(-h, h), s.uniform(0.0, 0.3)), size, s.uniform(0, std::numbers::pi));
    }
    const int poles = s.uniform_int(cfg.min_poles, cfg.max_poles);
    for (int i = 0; i < poles; ++i)
      s.pole(Point3(s.uniform(-h, h), s.uniform(-h, h), 0.0), s.uniform(0.08, 0.3), s.uniform(2.0, 6.0));
    const int clutter = s.uniform_int(cfg.min_clutter, cfg.max_clutter);
    for (int i = 0; i < clutter; ++i) {
      const Point3 spread(s.uniform(0.3, 1.2), s.uniform(0.3, 1.2), s.uniform(0.3, 1.5));
      s.blob(Point3(s.uniform(-h, h), s.uniform(-h, h), 0.0), spread,
             static_cast<std::size_t>(s.uniform(60, 240) * cfg.surface_density / 60.0));
    }
    PointCloud filtered = voxel_downsample(PointCloud(raw), cfg.voxel);
    if (filtered.size() >= points) return random_sample(filtered, points, derive_seed(seed, 0x5eed)).cloud;
  }
  fail(ErrorCode::InvalidArgument, "make_synthetic_scene: could not reach the requested point count");
}

std::vector<PlaceSample> make_synthetic_places(std::size_t count, std::size_t points, std::uint64_t seed,
                                               double spacing, double jitter, const SceneConfig& cfg) {
  std::vector<PlaceSample> out;
  out.reserve(count);
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(count))));
  std::mt19937_64 rng(derive_seed(seed, 0x905));
  std::uniform_real_distribution<double> jit(-jitter, jitter);
  for (std::size_t i = 0; i < count; ++i) {
    PlaceSample p;
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04zu", i);
    p.id = buf;
    p.cloud = make_synthetic_scene(points, derive_seed(seed, i + 1), cfg);
    p.position = Eigen::Vector2d(static_cast<double>(i % cols) * spacing + jit(rng),
                                 static_cast<double>(i / cols) * spacing + jit(rng));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace pcdesc
