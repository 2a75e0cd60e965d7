#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "viewalign/geometry.hpp"
#include "viewalign/pnp.hpp"

namespace viewalign {

// One scored minimal-sample hypothesis, reported to an optional observer.
struct HypothesisRecord {
  int draw_index = 0;
  CameraPose pose;
  int inliers = 0;     // residual <= threshold (RANSAC) or weight > 0 (MAGSAC++)
  double score = 0.0;  // inlier count (RANSAC) or summed weight (MAGSAC++)
};
using HypothesisObserver = std::function<void(const HypothesisRecord&)>;

struct RansacConfig {
  double inlier_threshold = 10.0;  // pixels
  double confidence = 0.99;
  int max_iters = 10000;
  int min_iters = 50;
  int sample_size = 4;
  std::uint64_t seed = 0;
  HypothesisObserver observer;

  void validate() const;
};

struct MagsacConfig {
  double max_threshold = 50.0;  // pixels
  int partitions = 10;
  int iters_irls = 10;
  double confidence = 0.99;
  int max_iters = 10000;
  int min_iters = 50;
  int sample_size = 4;
  std::uint64_t seed = 0;
  HypothesisObserver observer;

  void validate() const;
};

struct RobustResult {
  PnPSolution solution;
  std::vector<bool> inlier_mask;  // RANSAC: threshold test; MAGSAC++: weight > 0
  std::vector<double> weights;    // RANSAC: 0/1 indicator; MAGSAC++: marginal weights
  int iterations_run = 0;         // hypotheses scored
  int hypothesis_count = 0;       // minimal samples drawn, including degenerate ones
  int inlier_count() const;
};

// Required number of hypotheses for the given inlier ratio, clamped to
// [min_iters, max_iters].
int adaptive_iteration_count(double inlier_ratio, double confidence, int sample_size,
                             int min_iters, int max_iters);

// True if the sampled scene points are (numerically) collinear.
bool is_degenerate_sample(std::span<const Correspondence> corrs, std::span<const int> sample);

// Fixed-threshold RANSAC around EPnP; the winning hypothesis is refined on
// its inliers. Throws NoSolution if no hypothesis reaches four inliers.
RobustResult ransac_pnp(std::span<const Correspondence> corrs, const CameraIntrinsics& intr,
                        const RansacConfig& cfg);

// Threshold-marginalized inlier weight of a single residual. For a threshold
// level s the residual is treated as a 2-DoF chi variable with sigma = s / k
// (k the 0.99 quantile), and its inlier likelihood is the chi tail
// exp(-r^2 / (2 sigma^2)) when r <= s and 0 otherwise. The weight is the
// average of that likelihood over levels uniform in (0, max_threshold]; each
// of the `partitions` level bands is integrated in closed form.
double magsac_weight(double residual, double max_threshold, int partitions);

std::vector<double> magsac_weights(const CameraPose& pose, std::span<const Correspondence> corrs,
                                   const CameraIntrinsics& intr, const MagsacConfig& cfg);

// MAGSAC++: hypotheses scored by total marginal weight, the best refined by
// iteratively re-weighted least squares. Throws NoSolution when every
// hypothesis has total weight below four.
RobustResult magsac_pnp(std::span<const Correspondence> corrs, const CameraIntrinsics& intr,
                        const MagsacConfig& cfg);

// Non-robust baseline: EPnP on everything, refined with unit weights.
RobustResult plain_pnp(std::span<const Correspondence> corrs, const CameraIntrinsics& intr);

}  // namespace viewalign
