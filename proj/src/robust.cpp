#include "viewalign/robust.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "viewalign/errors.hpp"

namespace viewalign {

namespace {

// 0.99 quantile of the 2-DoF chi distribution: sqrt(-2 ln 0.01).
const double kChi2Quantile = std::sqrt(-2.0 * std::log(0.01));

constexpr double kPi = 3.14159265358979323846;

std::vector<int> draw_sample(std::mt19937_64& rng, std::vector<int>& pool, int size) {
  // Partial Fisher-Yates over a persistent pool; the pool order carries over
  // between draws, which is fine since every prefix is a uniform sample.
  const int n = static_cast<int>(pool.size());
  for (int i = 0; i < size; ++i) {
    const int j = std::uniform_int_distribution<int>(i, n - 1)(rng);
    std::swap(pool[i], pool[j]);
  }
  return {pool.begin(), pool.begin() + size};
}

std::vector<Correspondence> gather(std::span<const Correspondence> corrs,
                                   std::span<const int> idx) {
  std::vector<Correspondence> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(corrs[i]);
  return out;
}

double pose_change(const CameraPose& a, const CameraPose& b) {
  return rotation_angle(a.rotation.transpose() * b.rotation) + (a.translation - b.translation).norm();
}

// Antiderivative of exp(-a / s^2) with respect to s.
double level_antiderivative(double s, double a) {
  return s * std::exp(-a / (s * s)) - std::sqrt(kPi * a) * std::erfc(std::sqrt(a) / s);
}

}  // namespace

void RansacConfig::validate() const {
  if (!(inlier_threshold > 0.0)) throw Error(ErrorCode::kInvalidArgument, "threshold must be > 0");
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "confidence must lie in (0, 1)");
  }
  if (sample_size < 4) throw Error(ErrorCode::kInvalidArgument, "sample_size must be >= 4");
  if (max_iters < 1 || min_iters < 0) throw Error(ErrorCode::kInvalidArgument, "bad iteration caps");
}

void MagsacConfig::validate() const {
  if (!(max_threshold > 0.0)) throw Error(ErrorCode::kInvalidArgument, "max_threshold must be > 0");
  if (partitions < 2) throw Error(ErrorCode::kInvalidArgument, "partitions must be >= 2");
  if (iters_irls < 1) throw Error(ErrorCode::kInvalidArgument, "iters_irls must be >= 1");
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "confidence must lie in (0, 1)");
  }
  if (sample_size < 4) throw Error(ErrorCode::kInvalidArgument, "sample_size must be >= 4");
  if (max_iters < 1 || min_iters < 0) throw Error(ErrorCode::kInvalidArgument, "bad iteration caps");
}

int RobustResult::inlier_count() const {
  return static_cast<int>(std::count(inlier_mask.begin(), inlier_mask.end(), true));
}

int adaptive_iteration_count(double inlier_ratio, double confidence, int sample_size,
                             int min_iters, int max_iters) {
  const double lo = std::min(min_iters, max_iters);
  if (!(inlier_ratio > 0.0)) return max_iters;
  const double good = std::pow(std::min(inlier_ratio, 1.0), sample_size);
  if (good >= 1.0) return static_cast<int>(lo);
  const double needed = std::log(1.0 - confidence) / std::log(1.0 - good);
  if (!std::isfinite(needed)) return max_iters;
  return static_cast<int>(std::clamp(std::ceil(needed), lo, static_cast<double>(max_iters)));
}

bool is_degenerate_sample(std::span<const Correspondence> corrs, std::span<const int> sample) {
  // Collinear iff every cross product against the first direction vanishes.
  const Eigen::Vector3d p0 = corrs[sample[0]].scene_point.vec();
  Eigen::Vector3d dir = Eigen::Vector3d::Zero();
  double scale = 0.0;
  for (std::size_t i = 1; i < sample.size(); ++i) {
    const Eigen::Vector3d d = corrs[sample[i]].scene_point.vec() - p0;
    if (d.norm() > dir.norm()) dir = d;
    scale = std::max(scale, d.norm());
  }
  if (!(scale > 0.0)) return true;
  dir.normalize();
  double off_axis = 0.0;
  for (std::size_t i = 1; i < sample.size(); ++i) {
    const Eigen::Vector3d d = corrs[sample[i]].scene_point.vec() - p0;
    off_axis = std::max(off_axis, dir.cross(d).norm());
  }
  return off_axis < 1e-6 * scale;
}

RobustResult ransac_pnp(std::span<const Correspondence> corrs, const CameraIntrinsics& intr,
                        const RansacConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(corrs.size());
  if (n < cfg.sample_size) {
    throw Error(ErrorCode::kTooFewCorrespondences,
                std::to_string(n) + " correspondences, sample size " + std::to_string(cfg.sample_size));
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);

  RobustResult result;
  int best_count = -1;
  CameraPose best_pose;
  std::vector<bool> best_mask;
  int needed = cfg.max_iters;
  const long long draw_cap = 10LL * cfg.max_iters;
  long long draws = 0;

  while (result.iterations_run < needed && draws < draw_cap) {
    ++draws;
    const std::vector<int> sample = draw_sample(rng, pool, cfg.sample_size);
    if (is_degenerate_sample(corrs, sample)) continue;
    ++result.iterations_run;
    PnPSolution hyp;
    try {
      hyp = solve_epnp(gather(corrs, sample), intr);
    } catch (const Error&) {
      continue;
    }
    std::vector<bool> mask(n);
    int count = 0;
    for (int j = 0; j < n; ++j) {
      mask[j] = reprojection_error(intr, hyp.pose, corrs[j]) <= cfg.inlier_threshold;
      count += mask[j];
    }
    if (cfg.observer) cfg.observer({static_cast<int>(draws - 1), hyp.pose, count, double(count)});
    if (count > best_count) {
      best_count = count;
      best_pose = hyp.pose;
      best_mask = std::move(mask);
      needed = adaptive_iteration_count(static_cast<double>(count) / n, cfg.confidence,
                                        cfg.sample_size, cfg.min_iters, cfg.max_iters);
    }
  }
  result.hypothesis_count = static_cast<int>(draws);
  if (best_count < 4) {
    throw Error(ErrorCode::kNoSolution,
                "best hypothesis has " + std::to_string(std::max(best_count, 0)) + " inliers");
  }

  std::vector<double> weights(n);
  for (int j = 0; j < n; ++j) weights[j] = best_mask[j] ? 1.0 : 0.0;
  PnPSolution refined = refine_weighted(best_pose, corrs, weights, intr);

  std::vector<bool> refined_mask(n);
  int refined_count = 0;
  for (int j = 0; j < n; ++j) {
    refined_mask[j] = refined.per_point_error[j] <= cfg.inlier_threshold;
    refined_count += refined_mask[j];
  }
  if (refined_count >= best_count) {
    result.solution = std::move(refined);
    result.inlier_mask = std::move(refined_mask);
  } else {
    // Refinement traded inliers for a lower cost; keep the best hypothesis
    // so the returned pose never has fewer inliers than a sampled one.
    result.solution = evaluate_pose(best_pose, corrs, intr);
    result.solution.converged = refined.converged;
    result.inlier_mask = std::move(best_mask);
  }
  result.weights.resize(n);
  for (int j = 0; j < n; ++j) result.weights[j] = result.inlier_mask[j] ? 1.0 : 0.0;
  return result;
}

double magsac_weight(double residual, double max_threshold, int partitions) {
  if (!(residual < max_threshold)) return 0.0;  // also catches kUnprojectable
  const double r = std::max(residual, 0.0);
  const double a = 0.5 * kChi2Quantile * kChi2Quantile * r * r;
  const double band = max_threshold / partitions;
  double total = 0.0;
  for (int j = 0; j < partitions; ++j) {
    const double hi = (j + 1) * band;
    if (hi <= r) continue;
    const double lo = std::max(j * band, r);
    if (a == 0.0) {
      total += hi - lo;
    } else {
      total += level_antiderivative(hi, a) - level_antiderivative(lo, a);
    }
  }
  return std::clamp(total / max_threshold, 0.0, 1.0);
}

std::vector<double> magsac_weights(const CameraPose& pose, std::span<const Correspondence> corrs,
                                   const CameraIntrinsics& intr, const MagsacConfig& cfg) {
  std::vector<double> w;
  w.reserve(corrs.size());
  for (const auto& c : corrs) {
    w.push_back(magsac_weight(reprojection_error(intr, pose, c), cfg.max_threshold, cfg.partitions));
  }
  return w;
}

RobustResult magsac_pnp(std::span<const Correspondence> corrs, const CameraIntrinsics& intr,
                        const MagsacConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(corrs.size());
  if (n < cfg.sample_size) {
    throw Error(ErrorCode::kTooFewCorrespondences,
                std::to_string(n) + " correspondences, sample size " + std::to_string(cfg.sample_size));
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);

  RobustResult result;
  double best_score = -1.0;
  CameraPose best_pose;
  int needed = cfg.max_iters;
  const long long draw_cap = 10LL * cfg.max_iters;
  long long draws = 0;

  while (result.iterations_run < needed && draws < draw_cap) {
    ++draws;
    const std::vector<int> sample = draw_sample(rng, pool, cfg.sample_size);
    if (is_degenerate_sample(corrs, sample)) continue;
    ++result.iterations_run;
    PnPSolution hyp;
    try {
      hyp = solve_epnp(gather(corrs, sample), intr);
    } catch (const Error&) {
      continue;
    }
    const std::vector<double> w = magsac_weights(hyp.pose, corrs, intr, cfg);
    const double score = std::accumulate(w.begin(), w.end(), 0.0);
    if (cfg.observer) {
      const auto support = std::count_if(w.begin(), w.end(), [](double x) { return x > 0.0; });
      cfg.observer({static_cast<int>(draws - 1), hyp.pose, static_cast<int>(support), score});
    }
    if (score > best_score) {
      best_score = score;
      best_pose = hyp.pose;
      needed = adaptive_iteration_count(score / n, cfg.confidence, cfg.sample_size, cfg.min_iters,
                                        cfg.max_iters);
    }
  }
  result.hypothesis_count = static_cast<int>(draws);
  if (best_score < 4.0) {
    throw Error(ErrorCode::kNoSolution,
                "best hypothesis support " + std::to_string(std::max(best_score, 0.0)));
  }

  CameraPose pose = best_pose;
  bool converged = true;
  for (int round = 0; round < cfg.iters_irls; ++round) {
    const std::vector<double> w = magsac_weights(pose, corrs, intr, cfg);
    if (std::count_if(w.begin(), w.end(), [](double x) { return x > 0.0; }) < 4) break;
    const PnPSolution refined = refine_weighted(pose, corrs, w, intr);
    converged = refined.converged;
    const double change = pose_change(pose, refined.pose);
    pose = refined.pose;
    if (change < 1e-8) break;
  }

  result.solution = evaluate_pose(pose, corrs, intr);
  result.solution.converged = converged;
  result.weights = magsac_weights(pose, corrs, intr, cfg);
  result.inlier_mask.resize(n);
  for (int j = 0; j < n; ++j) result.inlier_mask[j] = result.weights[j] > 0.0;
  double cost = 0.0;
  for (int j = 0; j < n; ++j) {
    if (result.weights[j] > 0.0) {
      cost += result.weights[j] * result.solution.per_point_error[j] * result.solution.per_point_error[j];
    }
  }
  result.solution.weighted_cost = cost;
  return result;
}

RobustResult plain_pnp(std::span<const Correspondence> corrs, const CameraIntrinsics& intr) {
  const PnPSolution init = solve_epnp(corrs, intr);
  const std::vector<double> ones(corrs.size(), 1.0);
  RobustResult result;
  result.solution = refine_weighted(init.pose, corrs, ones, intr);
  result.inlier_mask.assign(corrs.size(), true);
  result.weights = ones;
  result.iterations_run = 1;
  result.hypothesis_count = 1;
  return result;
}

}  // namespace viewalign
