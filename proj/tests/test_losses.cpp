#include "oracles.hpp"

#include "pcdesc/losses.hpp"

#include <doctest.h>

using namespace pcdesc;
using namespace pcdesc::loss;
using namespace pcdesc::testing;
using nn::Mat;

namespace {

CorrespondenceMatrix make_M(std::initializer_list<std::initializer_list<int>> rows) {
  CorrespondenceMatrix M;
  M.m.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (int v : r) M.m(i, j++) = static_cast<std::uint8_t>(v);
    ++i;
  }
  return M;
}

CorrespondenceMatrix random_M(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double p = 0.2) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  CorrespondenceMatrix M;
  M.m.resize(r, c);
  for (Eigen::Index i = 0; i < M.m.size(); ++i) M.m.data()[i] = b(rng);
  M.m(0, 0) = 1;
  M.m(r - 1, c - 1) = 0;
  return M;
}

}  // namespace

TEST_CASE("loss defaults") {
  const LossConfig c;
  CHECK(c.mu == 0.5);
  CHECK(c.kappa == 0.6);
  CHECK(c.asr_k == 5);
  CHECK(c.alpha == 0.5);
  CHECK(c.beta == 0.2);
  CHECK(c.gamma == 0.2);
  CHECK(c.eta_bal == 1.0);
  CHECK(c.lambda == 1.0);
}

TEST_CASE("loss config validation") {
  LossConfig c;
  c.mu = 0.0;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::Configuration);
  c = {};
  c.kappa = 1.5;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::Configuration);
  c = {};
  c.asr_k = 0;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::Configuration);
  c = {};
  c.beta = -0.1;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::Configuration);
}

TEST_CASE("feature distance matrix") {
  const Mat<double> a = random_unit_rows<double>(6, 4, 1), b = random_unit_rows<double>(5, 4, 2);
  const Mat<double> D = feature_distance<double>(a, b);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 5; ++j) {
      CHECK(D(i, j) == doctest::Approx((a.row(i) - b.row(j)).norm()).epsilon(1e-12));
      CHECK(D(i, j) >= 0.0);
      CHECK(D(i, j) <= 2.0 + 1e-6);
    }
}

TEST_CASE("description loss") {
  LossConfig cfg;
  SUBCASE("worked 2x2 case") {
    Mat<double> D(2, 2);
    D << 0.1, 0.3, 0.6, 0.2;
    const double l = desc_loss<double>(D, make_M({{1, 0}, {0, 1}}), cfg);
    CHECK(std::abs(l - 0.25) < 1e-12);
  }
  SUBCASE("zero exactly when positives vanish and negatives clear the margin") {
    Mat<double> D(2, 3);
    D << 0.0, 0.5, 0.9, 0.7, 0.0, 0.5;
    const auto M = make_M({{1, 0, 0}, {0, 1, 0}});
    CHECK(desc_loss<double>(D, M, cfg) == 0.0);
    Mat<double> D2 = D;
    D2(0, 0) = 1e-3;
    CHECK(desc_loss<double>(D2, M, cfg) > 0.0);
    D2 = D;
    D2(1, 2) = 0.49;
    CHECK(desc_loss<double>(D2, M, cfg) > 0.0);
  }
  SUBCASE("random oracle, rectangular, non-negative") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const Mat<double> D = random_mat<double>(7, 9, s).cwiseAbs();
      const auto M = random_M(7, 9, s + 100);
      cfg.eta_bal = 0.5 + 0.1 * static_cast<double>(s % 5);
      const double l = desc_loss<double>(D, M, cfg);
      CHECK(l >= 0.0);
      CHECK(l == doctest::Approx(desc_oracle(D, M, cfg.mu, cfg.eta_bal)).epsilon(1e-12));
    }
  }
  SUBCASE("inactive hinge has zero gradient") {
    Mat<double> D(2, 2);
    D << 0.1, 0.8, 0.3, 0.2;
    Mat<double> dD;
    desc_loss<double>(D, make_M({{1, 0}, {0, 1}}), cfg, &dD);
    CHECK(dD(0, 1) == 0.0);
    CHECK(dD(1, 0) == doctest::Approx(-0.5));
    CHECK(dD(0, 0) == doctest::Approx(0.5));
  }
  SUBCASE("degenerate batches") {
    const Mat<double> D = Mat<double>::Constant(2, 2, 0.3);
    CHECK(error_code_of([&] { desc_loss<double>(D, make_M({{1, 1}, {1, 1}}), cfg); }) == ErrorCode::DegenerateBatch);
    CHECK(error_code_of([&] { desc_loss<double>(D, make_M({{0, 0}, {0, 0}}), cfg); }) == ErrorCode::DegenerateBatch);
  }
}

TEST_CASE("average successful rate") {
  SUBCASE("first correct at rank 3 with k = 5") {
    const std::vector<double> d{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    const std::vector<std::size_t> correct{2};
    CHECK(avg_success_rate<double>(d, correct, 5) == 0.6);
  }
  SUBCASE("rank one and no hit") {
    const std::vector<double> d{0.4, 0.1, 0.3, 0.9, 0.5, 0.6};
    CHECK(avg_success_rate<double>(d, std::vector<std::size_t>{1}, 5) == 1.0);
    CHECK(avg_success_rate<double>(d, std::vector<std::size_t>{3}, 5) == 0.0);
    CHECK(avg_success_rate<double>(d, std::vector<std::size_t>{}, 5) == 0.0);
  }
  SUBCASE("ties resolve to the lower index") {
    const std::vector<double> d{0.5, 0.5, 0.5};
    CHECK(avg_success_rate<double>(d, std::vector<std::size_t>{0}, 2) == 1.0);
    CHECK(avg_success_rate<double>(d, std::vector<std::size_t>{1}, 2) == 0.5);
  }
  SUBCASE("random rankings vs sort oracle; a hit stays a hit") {
    std::mt19937_64 rng(9);
    for (int t = 0; t < 200; ++t) {
      std::vector<double> d(20);
      for (auto& v : d) v = static_cast<double>(rng() % 10) / 10.0;
      std::vector<std::size_t> correct;
      for (std::size_t j = 0; j < 20; ++j)
        if (rng() % 7 == 0) correct.push_back(j);
      for (int k = 1; k <= 8; ++k) {
        CHECK(avg_success_rate<double>(d, correct, k) == doctest::Approx(asr_oracle(d, correct, k)).epsilon(1e-15));
        // c_j is monotone, so k·ar(k) never decreases with k
        if (k > 1)
          CHECK(k * avg_success_rate<double>(d, correct, k) >= (k - 1) * avg_success_rate<double>(d, correct, k - 1));
      }
    }
  }
  SUBCASE("row and column variants agree with scalar calls") {
    const Mat<double> D = random_mat<double>(6, 8, 3).cwiseAbs();
    const auto M = random_M(6, 8, 4, 0.3);
    const auto rows = avg_success_rate_rows<double>(D, M, 5);
    const auto cols = avg_success_rate_cols<double>(D, M, 5);
    for (int i = 0; i < 6; ++i) {
      std::vector<double> d(D.row(i).data(), D.row(i).data() + 8);
      std::vector<std::size_t> c;
      for (std::size_t j = 0; j < 8; ++j)
        if (M(i, static_cast<Eigen::Index>(j))) c.push_back(j);
      CHECK(rows[static_cast<std::size_t>(i)] == asr_oracle(d, c, 5));
    }
    for (int j = 0; j < 8; ++j) {
      std::vector<double> d;
      std::vector<std::size_t> c;
      for (int i = 0; i < 6; ++i) {
        d.push_back(D(i, j));
        if (M(i, j)) c.push_back(static_cast<std::size_t>(i));
      }
      CHECK(cols[static_cast<std::size_t>(j)] == asr_oracle(d, c, 5));
    }
  }
}

TEST_CASE("detector loss") {
  LossConfig cfg;
  SUBCASE("closed-form gradient") {
    const Mat<double> s = (random_mat<double>(40, 1, 1).array().tanh() * 0.5 + 0.5).matrix();
    std::vector<double> ar(40);
    std::mt19937_64 rng(2);
    for (auto& v : ar) v = static_cast<double>(rng() % 6) / 5.0;
    const auto t = det_loss_terms<double>(s, ar, cfg);
    Mat<double> dS;
    const double l = det_loss<double>(s, ar, cfg, &dS);
    double mean = 0.0;
    for (int i = 0; i < 40; ++i) {
      CHECK(std::abs(t.grad(i, 0) - (cfg.kappa - ar[static_cast<std::size_t>(i)])) < 1e-10);
      CHECK(std::abs(dS(i, 0) - (cfg.kappa - ar[static_cast<std::size_t>(i)]) / 40.0) < 1e-10);
      CHECK(t.loss(i, 0) == doctest::Approx(1.0 - cfg.kappa * (1.0 - s(i, 0)) - s(i, 0) * ar[static_cast<std::size_t>(i)]));
      mean += t.loss(i, 0) / 40.0;
    }
    CHECK(l == doctest::Approx(mean).epsilon(1e-14));
  }
  SUBCASE("ar = kappa makes the loss independent of saliency") {
    for (double sv : {0.0, 0.13, 0.5, 0.99, 1.0}) {
      const Mat<double> s = Mat<double>::Constant(3, 1, sv);
      const std::vector<double> ar(3, 0.6);
      const auto t = det_loss_terms<double>(s, ar, cfg);
      for (int i = 0; i < 3; ++i) CHECK(std::abs(t.loss(i, 0) - 0.4) < 1e-12);
    }
  }
  SUBCASE("perfect keypoints cost nothing") {
    const std::vector<double> ar(4, 1.0);
    CHECK(det_loss<double>(Mat<double>::Ones(4, 1), ar, cfg) == 0.0);
  }
  SUBCASE("shape mismatch") {
    const std::vector<double> ar(3, 1.0);
    CHECK(error_code_of([&] { det_loss<double>(Mat<double>::Ones(4, 1), ar, cfg); }) == ErrorCode::InvalidArgument);
  }
}

TEST_CASE("combined local loss") {
  CHECK(combined_local_loss(0.25, 0.4, 0.0) == 0.25);
  CHECK(std::abs(combined_local_loss(0.25, 0.4, 1.0) - 0.65) < 1e-15);
  CHECK(error_code_of([] { combined_local_loss(0.1, 0.1, -1.0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("lazy quadruplet loss") {
  LossConfig cfg;
  SUBCASE("hand evaluation") {
    const std::vector<double> pos{0.1}, neg{0.3, 0.9}, star{0.25, 0.8};
    CHECK(std::abs(lazy_quadruplet_from_distances(pos, neg, star, cfg) - 0.35) < 1e-12);
  }
  SUBCASE("inactive hinges") {
    const std::vector<double> pos{0.0, 0.4}, neg{0.5, 1.2}, star{0.2, 0.9};
    CHECK(lazy_quadruplet_from_distances(pos, neg, star, cfg) == 0.0);
  }
  SUBCASE("empty sets") {
    const std::vector<double> some{0.3}, none;
    CHECK(error_code_of([&] { lazy_quadruplet_from_distances(none, some, some, cfg); }) == ErrorCode::DegenerateBatch);
    CHECK(error_code_of([&] { lazy_quadruplet_from_distances(some, none, some, cfg); }) == ErrorCode::DegenerateBatch);
  }
  SUBCASE("descriptor form matches distances and ignores duplicated hardest negatives") {
    for (std::uint64_t s = 0; s < 30; ++s) {
      const Mat<double> a = random_unit_rows<double>(1, 8, s);
      std::vector<Mat<double>> pos{random_unit_rows<double>(1, 8, s + 1), random_unit_rows<double>(1, 8, s + 2)};
      std::vector<Mat<double>> neg;
      for (int j = 0; j < 4; ++j) neg.push_back(random_unit_rows<double>(1, 8, s + 10 + j));
      const Mat<double> star = random_unit_rows<double>(1, 8, s + 20);
      std::vector<double> dp, dn, ds;
      for (const auto& p : pos) dp.push_back((a - p).norm());
      for (const auto& n : neg) {
        dn.push_back((a - n).norm());
        ds.push_back((star - n).norm());
      }
      const double l = lazy_quadruplet_loss<double>(a, pos, neg, star, cfg);
      CHECK(l == doctest::Approx(lazy_quadruplet_from_distances(dp, dn, ds, cfg)).epsilon(1e-12));
      CHECK(l >= 0.0);
      const auto hardest = std::min_element(dn.begin(), dn.end()) - dn.begin();
      auto neg2 = neg;
      neg2.push_back(neg[static_cast<std::size_t>(hardest)]);
      CHECK(lazy_quadruplet_loss<double>(a, pos, neg2, star, cfg) == doctest::Approx(l).epsilon(1e-14));
    }
  }
}

TEST_CASE("weak-supervision triplet loss") {
  SUBCASE("exact positive copies and far negatives") {
    Mat<double> a(2, 2), neg(2, 2);
    a << 0, 0, 1, 0;
    neg << 5, 5, -5, 5;
    CHECK(weak_triplet_loss<double>(a, a, neg, 0.2) == 0.0);
  }
  SUBCASE("two-anchor hand case") {
    Mat<double> a(2, 2), pos(2, 2), neg(1, 2);
    a << 0, 0, 1, 0;
    pos << 0, 0.3, 1, 0.1;
    neg << 0.5, 0;
    // anchor 0: 0.3 - 0.5 + 0.2 = 0; anchor 1: 0.1 - 0.5 + 0.2 = -0.2 -> 0;
    CHECK(weak_triplet_loss<double>(a, pos, neg, 0.2) == doctest::Approx(0.0).epsilon(1e-15));
    // with γ = 0.5: (0.3 - 0.5 + 0.5) + (0.1 - 0.5 + 0.5) = 0.4
    CHECK(weak_triplet_loss<double>(a, pos, neg, 0.5) == doctest::Approx(0.4).epsilon(1e-12));
  }
  SUBCASE("random oracle") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Mat<double> a = random_mat<double>(4, 3, s), p = random_mat<double>(5, 3, s + 1), n = random_mat<double>(6, 3, s + 2);
      double want = 0.0;
      for (int i = 0; i < 4; ++i) {
        double mp = 1e9, mn = 1e9;
        for (int j = 0; j < 5; ++j) mp = std::min(mp, (a.row(i) - p.row(j)).norm());
        for (int j = 0; j < 6; ++j) mn = std::min(mn, (a.row(i) - n.row(j)).norm());
        want += std::max(mp - mn + 0.2, 0.0);
      }
      CHECK(weak_triplet_loss<double>(a, p, n, 0.2) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}
