#include <doctest.h>
#include <omp.h>

#include <cmath>

#include "taopd/bootstrap.hpp"
#include "taopd/errors.hpp"
#include "taopd/rng.hpp"

using namespace taopd;
using diag::ClusteredValue;

TEST_CASE("cluster_bootstrap: identical values collapse the interval") {
  std::vector<ClusteredValue> values;
  for (int c = 0; c < 5; ++c)
    for (int i = 0; i < 10; ++i) values.push_back({"p" + std::to_string(c), 2.5});
  auto res = diag::cluster_bootstrap(values, 200, 7);
  CHECK(res.mean == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(res.ci_low == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(res.ci_high == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("cluster_bootstrap: two opposite clusters only produce {0, 1/2, 1}") {
  std::vector<ClusteredValue> values;
  for (int i = 0; i < 8; ++i) values.push_back({"a", 0.0});
  for (int i = 0; i < 8; ++i) values.push_back({"b", 1.0});

  // with 2 clusters each resample draws 2 of {a,b}: means 0, 1/2, or 1
  auto res = diag::cluster_bootstrap(values, 512, 21);
  int histogram[3] = {0, 0, 0};
  for (double m : res.resample_means) {
    if (m == 0.0) ++histogram[0];
    else if (m == 0.5) ++histogram[1];
    else if (m == 1.0) ++histogram[2];
    else FAIL("resample mean " << m << " outside the enumerable set");
  }
  // aa/ab/ba/bb pattern frequencies approach 1/4, 1/2, 1/4
  CHECK(histogram[0] > 512 / 8);
  CHECK(histogram[1] > 512 / 4);
  CHECK(histogram[2] > 512 / 8);
  CHECK(res.mean == doctest::Approx(0.5));

  // B=4 stays inside the enumerated outcomes and is seed-deterministic
  auto small = diag::cluster_bootstrap(values, 4, 3);
  auto small2 = diag::cluster_bootstrap(values, 4, 3);
  CHECK(small.resample_means == small2.resample_means);
  for (double m : small.resample_means)
    CHECK((m == 0.0 || m == 0.5 || m == 1.0));
}

TEST_CASE("cluster_bootstrap: single cluster is an error") {
  std::vector<ClusteredValue> values{{"only", 1.0}, {"only", 2.0}};
  CHECK_THROWS_AS(diag::cluster_bootstrap(values, 10, 0), ValidationError);
  CHECK_THROWS_AS(diag::cluster_bootstrap({}, 10, 0), ValidationError);
}

TEST_CASE("cluster_bootstrap: parallel equals serial") {
  Rng rng(55);
  std::vector<ClusteredValue> values;
  for (int c = 0; c < 30; ++c)
    for (int i = 0; i < 20; ++i)
      values.push_back({"p" + std::to_string(c), rng.next_normal()});
  omp_set_num_threads(3);
  auto par = diag::cluster_bootstrap(values, 500, 99);
  auto ser = diag::cluster_bootstrap_serial(values, 500, 99);
  CHECK(par.mean == ser.mean);
  CHECK(par.ci_low == ser.ci_low);
  CHECK(par.ci_high == ser.ci_high);
  CHECK(par.resample_means == ser.resample_means);
}

TEST_CASE("cluster_bootstrap: interval width shrinks with more clusters") {
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    double width[2];
    int idx = 0;
    for (int n_clusters : {10, 100}) {
      Rng rng(seed);
      std::vector<ClusteredValue> values;
      for (int c = 0; c < n_clusters; ++c)
        for (int i = 0; i < 10; ++i)
          values.push_back({"p" + std::to_string(c), rng.next_normal()});
      auto res = diag::cluster_bootstrap(values, 400, seed);
      width[idx++] = res.ci_high - res.ci_low;
    }
    CHECK(width[1] < width[0]);
  }
}

TEST_CASE("cluster_bootstrap: coverage of a clustered normal mean") {
  // nominal 95% percentile interval; expect healthy but not exact coverage
  const double true_mean = 0.7;
  int covered = 0;
  const int reps = 100;
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng(1000 + rep);
    std::vector<ClusteredValue> values;
    for (int c = 0; c < 25; ++c) {
      const double effect = 0.3 * rng.next_normal();
      for (int i = 0; i < 12; ++i)
        values.push_back({"p" + std::to_string(c), true_mean + effect + 0.5 * rng.next_normal()});
    }
    auto res = diag::cluster_bootstrap(values, 300, 42 + rep);
    if (res.ci_low <= true_mean && true_mean <= res.ci_high) ++covered;
  }
  CHECK(covered >= 85);
}
