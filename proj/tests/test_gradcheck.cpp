#include "pcdesc/gradcheck.hpp"

#include <doctest.h>

#include <set>

using namespace pcdesc;

TEST_CASE("every block matches central differences") {
  const auto reports = gradcheck::run_all();
  REQUIRE(!reports.empty());
  for (const auto& r : reports) {
    INFO(r.block << "." << r.parameter << " err=" << r.max_rel_error);
    CHECK(r.entries > 0);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.passed);
  }
  CHECK(gradcheck::all_passed(reports));

  std::set<std::string> blocks;
  for (const auto& r : reports) blocks.insert(r.block);
  for (const char* b : {"conv1x1", "flexconv", "se", "detector", "attention", "netvlad", "desc_loss", "det_loss",
                        "lazy_quadruplet", "weak_triplet"}) {
    INFO(b);
    CHECK(blocks.count(b) == 1);
  }
}

TEST_CASE("reports are deterministic per seed") {
  const auto a = gradcheck::run_all({1e-5, 1e-4, 3}), b = gradcheck::run_all({1e-5, 1e-4, 3});
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].block == b[i].block);
    CHECK(a[i].parameter == b[i].parameter);
    CHECK(a[i].max_rel_error == b[i].max_rel_error);
  }
  CHECK(gradcheck::all_passed(gradcheck::run_all({1e-5, 1e-4, 11})));
}

TEST_CASE("a tight tolerance is reported as failure") {
  const auto r = gradcheck::run_all({1e-5, 1e-14, 1});
  CHECK_FALSE(gradcheck::all_passed(r));
}
