#include "oracles.hpp"

#include "pcdesc/retrieval.hpp"

#include <doctest.h>

using namespace pcdesc;
using namespace pcdesc::retrieval;
using namespace pcdesc::testing;

namespace {

Eigen::VectorXd unit(Eigen::Index d, std::uint64_t seed) {
  Eigen::VectorXd v = random_mat<double>(1, d, seed).row(0).transpose();
  return v / v.norm();
}

DescriptorDatabase random_db(std::size_t n, Eigen::Index d, std::uint64_t seed) {
  DescriptorDatabase db(static_cast<int>(d));
  for (std::size_t i = 0; i < n; ++i)
    db.add("e" + std::to_string(i), Eigen::Vector3d(static_cast<double>(i) * 100.0, 0, 0), unit(d, seed + i));
  return db;
}

}  // namespace

TEST_CASE("database validation") {
  DescriptorDatabase db(4);
  CHECK(error_code_of([&] { db.add("x", Eigen::Vector3d::Zero(), Eigen::VectorXd::Ones(4)); }) ==
        ErrorCode::InvalidArgument);
  CHECK(error_code_of([&] { db.add("x", Eigen::Vector3d::Zero(), unit(5, 1)); }) == ErrorCode::InvalidArgument);
  db.add("ok", Eigen::Vector3d::Zero(), unit(4, 1));
  CHECK(db.size() == 1);
}

TEST_CASE("top-k queries") {
  const auto db = random_db(200, 16, 1);
  SUBCASE("stored descriptor ranks first at distance zero") {
    const auto r = query_topk(db, db[37].descriptor, 3);
    CHECK(r[0].index == 37);
    CHECK(r[0].distance == 0.0);
  }
  SUBCASE("k = size is a full ranking") {
    const auto r = query_topk(db, unit(16, 999), 200);
    REQUIRE(r.size() == 200);
    for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i - 1].distance <= r[i].distance);
  }
  SUBCASE("linear-scan oracle on 100 random queries") {
    for (std::uint64_t s = 0; s < 100; ++s) {
      const Eigen::VectorXd q = unit(16, 5000 + s);
      const std::size_t k = 1 + s % 30;
      const auto got = query_topk(db, q, k), want = scan_oracle(db, q, k);
      for (std::size_t i = 0; i < k; ++i) {
        CHECK(got[i].index == want[i].index);
        CHECK(std::abs(got[i].distance - want[i].distance) < 1e-6);
      }
    }
  }
  SUBCASE("ties by insertion order") {
    DescriptorDatabase d2(2);
    Eigen::VectorXd e(2);
    e << 1, 0;
    for (int i = 0; i < 4; ++i) d2.add(std::to_string(i), Eigen::Vector3d::Zero(), e);
    const auto r = query_topk(d2, e, 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(r[i].index == i);
  }
  SUBCASE("ranking is invariant to a common orthogonal transform") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(random_mat<double>(16, 16, s).cast<double>())
                                    .householderQ();
      DescriptorDatabase rot(16);
      for (const auto& e : db.entries()) rot.add(e.id, e.position, Q * e.descriptor);
      const Eigen::VectorXd q = unit(16, 7000 + s);
      const auto a = query_topk(db, q, 20), b = query_topk(rot, Q * q, 20);
      for (std::size_t i = 0; i < 20; ++i) CHECK(a[i].index == b[i].index);
    }
  }
  SUBCASE("errors") {
    CHECK(error_code_of([] { query_topk(DescriptorDatabase(4), unit(4, 1), 1); }) == ErrorCode::InvalidArgument);
    CHECK(error_code_of([&] { query_topk(db, unit(16, 1), 201); }) == ErrorCode::InvalidArgument);
    CHECK(error_code_of([&] { query_topk(db, unit(16, 1), 0); }) == ErrorCode::InvalidArgument);
  }
}

TEST_CASE("recall") {
  const auto db = random_db(20, 8, 10);
  SUBCASE("verbatim queries are recalled at one") {
    std::vector<Query> qs;
    for (const auto& e : db.entries()) qs.push_back({e.descriptor, e.position});
    CHECK(recall_at_n(qs, db, 1) == 100.0);
    const auto curve = recall_curve(qs, db, 1);
    REQUIRE(curve.size() == 1);
    CHECK(curve[0] == recall_at_n(qs, db, 1));
  }
  SUBCASE("toy set with planted positives matches a hand count") {
    // Queries 0..12 carry their own place's descriptor and 13..19 the next
    // place's, so 13 of 20 are recalled at top 1.
    std::vector<Query> qs;
    for (std::size_t i = 0; i < 20; ++i) {
      const std::size_t src = i < 13 ? i : (i + 1) % 20;
      qs.push_back({db[src].descriptor, db[i].position});
    }
    CHECK(recall_at_n(qs, db, 1) == 65.0);
    CHECK(recall_at_n(qs, db, 20) == 100.0);
  }
  SUBCASE("curve equals per-n recomputation and never decreases") {
    std::vector<Query> qs;
    for (std::size_t i = 0; i < 20; ++i) qs.push_back({unit(8, 300 + i), db[i].position});
    const auto curve = recall_curve(qs, db, 20);
    REQUIRE(curve.size() == 20);
    for (std::size_t n = 1; n <= 20; ++n) {
      CHECK(curve[n - 1] == doctest::Approx(recall_at_n(qs, db, n)));
      if (n > 1) CHECK(curve[n - 1] >= curve[n - 2]);
    }
    CHECK(curve.back() == 100.0);
  }
  SUBCASE("queries without any positive in the map are never recalled") {
    std::vector<Query> qs{{db[0].descriptor, Eigen::Vector3d(0, 5000, 0)}};
    CHECK(recall_at_n(qs, db, 20) == 0.0);
  }
  SUBCASE("positive radius") {
    std::vector<Query> qs{{db[1].descriptor, Eigen::Vector3d(130, 0, 0)}};
    CHECK(recall_at_n(qs, db, 1, 25.0) == 0.0);
    CHECK(recall_at_n(qs, db, 1, 31.0) == 100.0);
  }
  SUBCASE("one percent cutoff") {
    CHECK(one_percent_cutoff(20) == 1);
    CHECK(one_percent_cutoff(200) == 2);
    CHECK(one_percent_cutoff(3030) == 30);
  }
}
