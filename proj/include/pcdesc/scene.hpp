#pragma once

#include "pcdesc/geometry.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pcdesc {

struct SceneConfig {
  double extent = 20.0;          // scene footprint is extent × extent meters
  double surface_density = 60.0; // raw samples per square meter before voxelization
  double voxel = 0.2;
  int min_walls = 3, max_walls = 6;
  int min_boxes = 2, max_boxes = 5;
  int min_poles = 2, max_poles = 6;
  int min_clutter = 3, max_clutter = 8;
};

/// Random walls, boxes, poles and clutter blobs (no ground plane), voxel
/// filtered to `voxel` and randomly sampled to `points` points. Deterministic
/// per seed.
PointCloud make_synthetic_scene(std::size_t points, std::uint64_t seed, const SceneConfig& cfg = {});

struct PlaceSample {
  std::string id;
  PointCloud cloud;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
};

/// `count` scenes with planted 2D positions on a grid of `spacing` meters
/// (jittered by at most `jitter`), so distinct scenes are far apart.
std::vector<PlaceSample> make_synthetic_places(std::size_t count, std::size_t points, std::uint64_t seed,
                                               double spacing = 100.0, double jitter = 5.0,
                                               const SceneConfig& cfg = {});

/// SplitMix64 mix of a base seed with stream identifiers.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace pcdesc
