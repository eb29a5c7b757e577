#include "oracles.hpp"

#include "pcdesc/registration.hpp"

#include <doctest.h>

using namespace pcdesc;
using namespace pcdesc::reg;
using namespace pcdesc::testing;
using nn::Mat;

TEST_CASE("match mode names") {
  CHECK(match_mode_from_string("nn") == MatchMode::Nearest);
  CHECK(match_mode_from_string("mutual") == MatchMode::Mutual);
  CHECK(std::string(to_string(MatchMode::Mutual)) == "mutual");
  CHECK(error_code_of([] { match_mode_from_string("ratio"); }) == ErrorCode::Configuration);
}

TEST_CASE("descriptor matching") {
  SUBCASE("self matching is the identity at distance zero") {
    const Mat<double> a = random_unit_rows<double>(10, 8, 1);
    for (auto mode : {MatchMode::Nearest, MatchMode::Mutual}) {
      const auto m = match_descriptors<double>(a, a, mode);
      REQUIRE(m.size() == 10);
      for (std::size_t i = 0; i < 10; ++i) {
        CHECK(m[i].a == i);
        CHECK(m[i].b == i);
        CHECK(m[i].distance == 0.0);
      }
    }
  }
  SUBCASE("oracle on 100 random 10x4 vs 12x4 instances, both modes") {
    for (std::uint64_t s = 0; s < 100; ++s) {
      const Mat<double> a = random_mat<double>(10, 4, s), b = random_mat<double>(12, 4, s + 1000);
      for (bool mutual : {false, true}) {
        const auto got = match_descriptors<double>(a, b, mutual ? MatchMode::Mutual : MatchMode::Nearest);
        const auto want = match_oracle(a, b, mutual);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
          CHECK(got[i].a == want[i].a);
          CHECK(got[i].b == want[i].b);
          CHECK(std::abs(got[i].distance - want[i].distance) < 1e-6);
        }
      }
    }
  }
  SUBCASE("mutual matching is symmetric") {
    for (std::uint64_t s = 0; s < 30; ++s) {
      const Mat<float> a = random_mat<float>(15, 6, s), b = random_mat<float>(11, 6, s + 50);
      auto ab = match_descriptors<float>(a, b, MatchMode::Mutual);
      auto ba = match_descriptors<float>(b, a, MatchMode::Mutual);
      for (auto& m : ba) std::swap(m.a, m.b);
      std::sort(ba.begin(), ba.end(), [](const Match& x, const Match& y) { return x.a < y.a; });
      REQUIRE(ab.size() == ba.size());
      for (std::size_t i = 0; i < ab.size(); ++i) {
        CHECK(ab[i].a == ba[i].a);
        CHECK(ab[i].b == ba[i].b);
      }
    }
  }
  SUBCASE("invalid input") {
    CHECK(error_code_of([] { match_descriptors<double>(Mat<double>(0, 3), Mat<double>::Ones(2, 3), MatchMode::Nearest); }) ==
          ErrorCode::InvalidArgument);
    CHECK(error_code_of([] { match_descriptors<double>(Mat<double>::Ones(2, 4), Mat<double>::Ones(2, 3), MatchMode::Nearest); }) ==
          ErrorCode::InvalidArgument);
  }
}

TEST_CASE("rigid solve") {
  const PointCloud A = random_cloud(10, 3, 5.0);
  SUBCASE("identity") {
    const auto T = rigid_solve(A.points, A.points);
    CHECK((T.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(T.translation.norm() < 1e-12);
  }
  SUBCASE("noiseless planted transforms are exact") {
    for (std::uint64_t s = 0; s < 100; ++s) {
      const RigidTransform truth = random_transform(s, 20.0);
      const PointCloud Ai = random_cloud(10, 500 + s, 5.0);
      const auto T = rigid_solve(Ai.points, apply_transform(Ai, truth).points);
      const auto e = rte_rre(T, truth);
      CHECK(e.rte < 1e-9);
      CHECK(e.rre < 1e-7);
      CHECK(T.is_valid());
    }
  }
  SUBCASE("noisy fit has residual RMS within two sigma") {
    std::normal_distribution<double> noise(0.0, 0.01);
    for (std::uint64_t s = 0; s < 20; ++s) {
      std::mt19937_64 rng(s);
      const RigidTransform truth = random_transform(s + 7);
      const PointCloud Ai = random_cloud(100, 600 + s, 5.0);
      PointCloud Bi = apply_transform(Ai, truth);
      for (auto& p : Bi.points) p += Point3(noise(rng), noise(rng), noise(rng));
      const auto T = rigid_solve(Ai.points, Bi.points);
      double ss = 0.0;
      for (std::size_t i = 0; i < Ai.size(); ++i) ss += (T.apply(Ai[i]) - Bi[i]).squaredNorm();
      CHECK(std::sqrt(ss / 100.0) <= 2.0 * 0.01 * std::sqrt(3.0));
    }
  }
  SUBCASE("near-planar data never yields a reflection") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      std::mt19937_64 rng(s);
      std::normal_distribution<double> n(0.0, 1.0);
      std::vector<Point3> a, b;
      for (int i = 0; i < 8; ++i) {
        a.emplace_back(n(rng), n(rng), 1e-9 * n(rng));
        b.emplace_back(n(rng), n(rng), 1e-9 * n(rng));
      }
      const auto T = rigid_solve(a, b);
      CHECK(T.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  SUBCASE("weights select the subset that fits") {
    const RigidTransform truth = random_transform(9);
    PointCloud Bw = apply_transform(A, truth);
    Bw[9] += Point3(5, 5, 5);
    std::vector<double> w(10, 1.0);
    w[9] = 0.0;
    CHECK(rte_rre(rigid_solve(A.points, Bw.points, w), truth).rte < 1e-9);
  }
  SUBCASE("degenerate samples") {
    const std::vector<Point3> line{{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {3, 3, 3}};
    CHECK(error_code_of([&] { rigid_solve(line, line); }) == ErrorCode::DegenerateSample);
    const std::vector<Point3> two{{0, 0, 0}, {1, 0, 0}};
    CHECK(error_code_of([&] { rigid_solve(two, two); }) == ErrorCode::DegenerateSample);
  }
}

TEST_CASE("triangle area") {
  CHECK(triangle_area({0, 0, 0}, {1, 0, 0}, {0, 1, 0}) == 0.5);
  CHECK(triangle_area({0, 0, 0}, {1, 1, 1}, {2, 2, 2}) == 0.0);
}

TEST_CASE("pose error") {
  SUBCASE("estimate equals truth") {
    const RigidTransform T = random_transform(1);
    const auto e = rte_rre(T, T);
    CHECK(e.rte < 1e-12);
    CHECK(e.rre < 1e-6);
  }
  SUBCASE("pure yaw error") {
    const auto e = rte_rre(RigidTransform::from_yaw_deg(10.0), RigidTransform::identity());
    CHECK(e.rte == 0.0);
    CHECK(e.rre == doctest::Approx(10.0).epsilon(1e-12));
  }
  SUBCASE("quaternion oracle on random pairs") {
    for (std::uint64_t s = 0; s < 200; ++s) {
      const RigidTransform a = random_transform(s), b = random_transform(s + 1000);
      const auto e = rte_rre(a, b);
      CHECK(std::abs(e.rre - quaternion_angle_deg(a.rotation, b.rotation)) < 1e-9);
      CHECK(std::abs(e.rte - (b.inverse() * a).translation.norm()) < 1e-9);
    }
  }
  SUBCASE("invariant to a common motion on the same side") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const RigidTransform a = random_transform(s), b = random_transform(s + 1), g = random_transform(s + 2);
      CHECK(std::abs(rte_rre(g * a, g * b).rre - rte_rre(a, b).rre) < 1e-7);
    }
  }
}

TEST_CASE("success thresholds") {
  CHECK(registration_success(0.23, 0.95));
  CHECK_FALSE(registration_success(2.0, 1.0));
  CHECK_FALSE(registration_success(1.9, 5.1));
  CHECK_FALSE(registration_success(1.0, 5.0));
  CHECK(registration_success(1.99, 4.99));
}

TEST_CASE("ransac") {
  SUBCASE("defaults") {
    const RansacConfig c;
    CHECK(c.max_iterations == 10000);
    CHECK(c.inlier_threshold == 0.5);
    CHECK(c.confidence == 0.99);
    CHECK(c.min_sample_area == 1e-6);
  }
  SUBCASE("perfect matches converge quickly with every match an inlier") {
    const auto s = planted(1, 0.0);
    const auto r = ransac_register(s.matches, s.A, s.B, RansacConfig{});
    CHECK(r.converged);
    CHECK(r.inliers == 100);
    CHECK(r.iterations <= 5);
    CHECK(rte_rre(r.transform, s.truth).rte < 1e-9);
  }
  SUBCASE("30% planted outliers on 100 seeded trials") {
    int ok = 0;
    for (std::uint64_t t = 0; t < 100; ++t) {
      const auto s = planted(100 + t, 0.3);
      RansacConfig cfg;
      cfg.seed = t + 1;
      const auto r = ransac_register(s.matches, s.A, s.B, cfg);
      const auto e = rte_rre(r.transform, s.truth);
      ok += e.rte < 0.05 && e.rre < 0.5;
      CHECK(r.iterations <= cfg.max_iterations);
    }
    CHECK(ok >= 95);
  }
  SUBCASE("iteration cap is honored") {
    const auto s = planted(7, 0.97);
    RansacConfig cfg;
    cfg.max_iterations = 50;
    const auto r = ransac_register(s.matches, s.A, s.B, cfg);
    CHECK(r.iterations == 50);
    CHECK_FALSE(r.converged);
  }
  SUBCASE("adaptive bound") {
    CHECK(required_iterations(1.0, 0.99) <= 1.0);
    CHECK(required_iterations(0.5, 0.99) == doctest::Approx(std::log(0.01) / std::log(1.0 - 0.125)));
  }
  SUBCASE("seeded runs are identical and every thread count agrees") {
    const auto s = planted(9, 0.5);
    RansacConfig cfg;
    cfg.seed = 5;
    const auto r1 = ransac_register(s.matches, s.A, s.B, cfg);
    const auto r2 = ransac_register(s.matches, s.A, s.B, cfg);
    CHECK(r1.transform.rotation == r2.transform.rotation);
    CHECK(r1.iterations == r2.iterations);
    for (int threads : {2, 3, 8}) {
      cfg.threads = threads;
      cfg.chunk = 7;
      const auto rt = ransac_register(s.matches, s.A, s.B, cfg);
      CHECK(rt.transform.rotation == r1.transform.rotation);
      CHECK(rt.transform.translation == r1.transform.translation);
      CHECK(rt.iterations == r1.iterations);
      CHECK(rt.inlier_mask == r1.inlier_mask);
    }
  }
  SUBCASE("insufficient and degenerate inputs") {
    const auto s = planted(2, 0.0);
    MatchSet two(s.matches.begin(), s.matches.begin() + 2);
    CHECK(error_code_of([&] { ransac_register(two, s.A, s.B, RansacConfig{}); }) == ErrorCode::InsufficientMatches);
    PointCloud line;
    for (int i = 0; i < 10; ++i) line.points.emplace_back(i, 0, 0);
    MatchSet m;
    for (std::size_t i = 0; i < 10; ++i) m.push_back({i, i, 0.0});
    CHECK(error_code_of([&] { ransac_register(m, line, line, RansacConfig{}); }) == ErrorCode::DegenerateSample);
  }
}
