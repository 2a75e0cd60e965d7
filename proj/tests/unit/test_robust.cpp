#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "viewalign/errors.hpp"
#include "viewalign/robust.hpp"

using namespace viewalign;
using viewalign::testing::make_problem;
using viewalign::testing::rotation_error_deg;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an exception");
  return ErrorCode::kInvalidArgument;
}

// Midpoint-rule average of the per-level inlier likelihood over `levels`
// thresholds in (0, max]; written independently of the closed form.
double marginal_weight_oracle(double r, double max_threshold, int levels) {
  const double k2 = -2.0 * std::log(0.01);
  const double h = max_threshold / levels;
  double sum = 0.0;
  for (int i = 0; i < levels; ++i) {
    const double s = (i + 0.5) * h;
    if (r > s) continue;
    const double sigma2 = s * s / k2;
    sum += std::exp(-r * r / (2.0 * sigma2));
  }
  return sum / levels;
}

}  // namespace

TEST_CASE("magsac weight end points") {
  CHECK(magsac_weight(0.0, 50.0, 10) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(magsac_weight(50.0, 50.0, 10) == 0.0);
  CHECK(magsac_weight(75.0, 50.0, 10) == 0.0);
  CHECK(magsac_weight(kUnprojectable, 50.0, 10) == 0.0);
}

TEST_CASE("magsac weight matches fine numerical marginalization") {
  CHECK(std::abs(magsac_weight(25.0, 50.0, 10) - marginal_weight_oracle(25.0, 50.0, 100000)) < 1e-6);
  for (double r = 0.0; r <= 60.0; r += 0.37) {
    CHECK(std::abs(magsac_weight(r, 50.0, 10) - marginal_weight_oracle(r, 50.0, 100000)) < 1e-6);
  }
}

TEST_CASE("magsac weight is non-increasing in the residual") {
  double prev = 2.0;
  for (double r = 0.0; r <= 55.0; r += 0.01) {
    const double w = magsac_weight(r, 50.0, 10);
    CHECK(w <= prev + 1e-15);
    CHECK(w >= 0.0);
    prev = w;
  }
}

TEST_CASE("adaptive iteration count") {
  CHECK(adaptive_iteration_count(1.0, 0.99, 4, 50, 10000) == 50);
  CHECK(adaptive_iteration_count(0.5, 0.99, 4, 50, 10000) ==
        static_cast<int>(std::ceil(std::log(0.01) / std::log(1 - 0.0625))));
  CHECK(adaptive_iteration_count(0.01, 0.99, 4, 50, 10000) == 10000);
  CHECK(adaptive_iteration_count(0.0, 0.99, 4, 50, 10000) == 10000);
}

TEST_CASE("config validation") {
  RansacConfig r;
  r.inlier_threshold = 0;
  CHECK_THROWS_AS(r.validate(), Error);
  r = {};
  r.confidence = 1.0;
  CHECK_THROWS_AS(r.validate(), Error);
  r = {};
  r.sample_size = 3;
  CHECK_THROWS_AS(r.validate(), Error);
  MagsacConfig m;
  m.partitions = 1;
  CHECK_THROWS_AS(m.validate(), Error);
  m = {};
  m.max_threshold = -1;
  CHECK_THROWS_AS(m.validate(), Error);
}

TEST_CASE("ransac on clean data keeps every point") {
  const auto k = testing::vga_intrinsics();
  std::mt19937_64 rng(1);
  const auto p = make_problem(rng, k, 40);
  RansacConfig cfg;
  cfg.inlier_threshold = 10.0;
  const RobustResult r = ransac_pnp(p.corrs, k, cfg);
  CHECK(r.inlier_count() == 40);
  CHECK(rotation_error_deg(r.solution.pose, p.truth) < 0.01);
  CHECK(testing::translation_error(r.solution.pose, p.truth) < 1e-4);
}

TEST_CASE("ransac excludes planted outliers") {
  const auto k = testing::vga_intrinsics();
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = make_problem(rng, k, 100, 1.0, 30);
    RansacConfig cfg;
    cfg.inlier_threshold = 10.0;
    cfg.seed = trial;
    const RobustResult r = ransac_pnp(p.corrs, k, cfg);
    for (int i = 0; i < 100; ++i) {
      if (p.planted_outlier[i]) CHECK_FALSE(r.inlier_mask[i]);
    }
    CHECK(rotation_error_deg(r.solution.pose, p.truth) < 0.5);
  }
}

TEST_CASE("ransac returns at least the best sampled inlier count") {
  const auto k = testing::vga_intrinsics();
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = make_problem(rng, k, 60, 2.0, 20);
    for (double tau : {5.0, 10.0, 50.0, 200.0}) {
      RansacConfig cfg;
      cfg.inlier_threshold = tau;
      cfg.seed = 100 + trial;
      int best_sampled = 0;
      int scored = 0;
      cfg.observer = [&](const HypothesisRecord& h) {
        best_sampled = std::max(best_sampled, h.inliers);
        ++scored;
      };
      const RobustResult r = ransac_pnp(p.corrs, k, cfg);
      int count = 0;
      for (const auto& c : p.corrs) count += reprojection_error(k, r.solution.pose, c) <= tau;
      CHECK(count == r.inlier_count());
      CHECK(count >= best_sampled);
      CHECK(scored <= r.iterations_run);
      CHECK(r.hypothesis_count >= r.iterations_run);
    }
  }
}

TEST_CASE("ransac is deterministic for a fixed seed") {
  const auto k = testing::vga_intrinsics();
  std::mt19937_64 rng(4);
  const auto p = make_problem(rng, k, 50, 1.0, 15);
  RansacConfig cfg;
  cfg.seed = 77;
  const RobustResult a = ransac_pnp(p.corrs, k, cfg);
  const RobustResult b = ransac_pnp(p.corrs, k, cfg);
  CHECK(a.inlier_mask == b.inlier_mask);
  CHECK(a.solution.pose.rotation == b.solution.pose.rotation);
  CHECK(a.solution.pose.translation == b.solution.pose.translation);
  CHECK(a.iterations_run == b.iterations_run);
}

TEST_CASE("ransac failure modes") {
  const auto k = testing::vga_intrinsics();
  std::mt19937_64 rng(5);
  auto p = make_problem(rng, k, 12);
  std::uniform_real_distribution<double> u(0.0, 640.0);
  for (auto& c : p.corrs) c.reference_pixel = {u(rng), u(rng) * 0.75};
  RansacConfig cfg;
  cfg.inlier_threshold = 1e-9;
  cfg.max_iters = 200;
  CHECK(code_of([&] { ransac_pnp(p.corrs, k, cfg); }) == ErrorCode::kNoSolution);
  std::vector<Correspondence> three(p.corrs.begin(), p.corrs.begin() + 3);
  CHECK(code_of([&] { ransac_pnp(three, k, RansacConfig{}); }) == ErrorCode::kTooFewCorrespondences);
}

TEST_CASE("threshold insensitivity on clean data") {
  const auto k = testing::vga_intrinsics();
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = make_problem(rng, k, 40, 1.0);
    std::vector<double> errs;
    for (double tau : {10.0, 50.0, 200.0}) {
      RansacConfig cfg;
      cfg.inlier_threshold = tau;
      cfg.seed = trial;
      errs.push_back(rotation_error_deg(ransac_pnp(p.corrs, k, cfg).solution.pose, p.truth));
    }
    const double lo = *std::min_element(errs.begin(), errs.end());
    const double hi = *std::max_element(errs.begin(), errs.end());
    CHECK(hi <= 2.0 * lo + 1e-12);
  }
}

TEST_CASE("magsac on clean data matches EPnP") {
  const auto k = testing::vga_intrinsics();
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = make_problem(rng, k, 30);
    MagsacConfig cfg;
    cfg.seed = trial;
    const RobustResult r = magsac_pnp(p.corrs, k, cfg);
    const PnPSolution oracle = solve_epnp(p.corrs, k);
    CHECK(rotation_error_deg(r.solution.pose, oracle.pose) < 0.05);
    CHECK(r.inlier_count() == 30);
    for (double w : r.weights) CHECK(w == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("magsac rejects gross outliers and is deterministic") {
  const auto k = testing::vga_intrinsics();
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = make_problem(rng, k, 100, 1.0, 30);
    MagsacConfig cfg;
    cfg.seed = trial;
    double best_hyp = 0.0;
    cfg.observer = [&](const HypothesisRecord& h) { best_hyp = std::max(best_hyp, h.score); };
    const RobustResult a = magsac_pnp(p.corrs, k, cfg);
    for (int i = 0; i < 100; ++i) {
      if (p.planted_outlier[i]) CHECK(a.weights[i] == 0.0);
    }
    CHECK(rotation_error_deg(a.solution.pose, p.truth) < 0.5);
    CHECK(best_hyp >= 4.0);
    cfg.observer = nullptr;
    const RobustResult b = magsac_pnp(p.corrs, k, cfg);
    CHECK(a.weights == b.weights);
    CHECK(a.solution.pose.rotation == b.solution.pose.rotation);
  }
}

TEST_CASE("magsac reports no solution without support") {
  const auto k = testing::vga_intrinsics();
  std::mt19937_64 rng(9);
  auto p = make_problem(rng, k, 12);
  std::uniform_real_distribution<double> u(0.0, 640.0);
  for (auto& c : p.corrs) c.reference_pixel = {u(rng), u(rng) * 0.75};
  MagsacConfig cfg;
  cfg.max_threshold = 1e-6;
  cfg.max_iters = 200;
  CHECK(code_of([&] { magsac_pnp(p.corrs, k, cfg); }) == ErrorCode::kNoSolution);
}

TEST_CASE("plain pnp uses every correspondence") {
  const auto k = testing::vga_intrinsics();
  std::mt19937_64 rng(10);
  const auto p = make_problem(rng, k, 20, 0.5);
  const RobustResult r = plain_pnp(p.corrs, k);
  CHECK(r.inlier_count() == 20);
  CHECK(rotation_error_deg(r.solution.pose, p.truth) < 0.5);
}
