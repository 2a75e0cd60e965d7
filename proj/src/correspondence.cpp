#include "viewalign/correspondence.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "viewalign/errors.hpp"

namespace viewalign {

void SelectionConfig::validate() const {
  if (k < 4) throw Error(ErrorCode::kInvalidArgument, "k must be at least 4");
  if (kmeans_max_iters < 1) throw Error(ErrorCode::kInvalidArgument, "kmeans_max_iters < 1");
}

std::vector<MatchPair> mutual_nearest_matches(const DescriptorGrid& a, const DescriptorGrid& b) {
  if (a.dim != b.dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::to_string(a.dim) + " vs " + std::to_string(b.dim));
  }
  const int na = a.cell_count();
  const int nb = b.cell_count();
  std::vector<MatchPair> out;
  if (na == 0 || nb == 0) return out;

  constexpr float kNone = -std::numeric_limits<float>::infinity();
  std::vector<int> best_b(na, -1);
  std::vector<float> best_b_sim(na, kNone);
  std::vector<int> best_a(nb, -1);
  std::vector<float> best_a_sim(nb, kNone);

  // Blocked over rows of A so the full similarity matrix is never resident.
  constexpr int kBlock = 256;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sim;
  for (int start = 0; start < na; start += kBlock) {
    const int len = std::min(kBlock, na - start);
    sim.noalias() = a.descriptors.middleRows(start, len) * b.descriptors.transpose();
    for (int r = 0; r < len; ++r) {
      const int i = start + r;
      const float* row = sim.row(r).data();
      for (int j = 0; j < nb; ++j) {
        const float s = row[j];
        if (s > best_b_sim[i]) {
          best_b_sim[i] = s;
          best_b[i] = j;
        }
        if (s > best_a_sim[j]) {
          best_a_sim[j] = s;
          best_a[j] = i;
        }
      }
    }
  }

  for (int i = 0; i < na; ++i) {
    const int j = best_b[i];
    if (j < 0 || best_a[j] != i) continue;
    MatchPair p;
    p.cell_a = i;
    p.cell_b = j;
    p.pixel_a = a.cell_center(i);
    p.pixel_b = b.cell_center(j);
    p.similarity = std::clamp(static_cast<double>(best_b_sim[i]), -1.0, 1.0);
    p.joint_saliency = 0.5 * (static_cast<double>(a.saliency[i]) + b.saliency[j]);
    p.descriptor_a.assign(a.descriptors.row(i).data(), a.descriptors.row(i).data() + a.dim);
    p.descriptor_b.assign(b.descriptors.row(j).data(), b.descriptors.row(j).data() + b.dim);
    out.push_back(std::move(p));
  }
  return out;
}

Clustering kmeans(const Eigen::MatrixXd& points, int k, int max_iters, std::uint64_t seed) {
  const int n = static_cast<int>(points.rows());
  Clustering result;
  result.labels.assign(n, 0);
  if (n == 0 || k < 1) return result;

  std::mt19937_64 rng(seed);
  std::vector<Eigen::VectorXd> centers;
  centers.reserve(k);
  centers.emplace_back(points.row(std::uniform_int_distribution<int>(0, n - 1)(rng)).transpose());

  std::vector<double> d2(n);
  for (int i = 0; i < n; ++i) d2[i] = (points.row(i).transpose() - centers[0]).squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    if (!(total > 0.0)) break;  // remaining points coincide with existing centers
    double target = std::uniform_real_distribution<double>(0.0, total)(rng);
    int pick = n - 1;
    for (int i = 0; i < n; ++i) {
      target -= d2[i];
      if (target < 0.0 && d2[i] > 0.0) {
        pick = i;
        break;
      }
    }
    if (d2[pick] <= 0.0) {
      // Rounding at the tail: fall back to the last point with positive mass.
      for (int i = n - 1; i >= 0; --i) {
        if (d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.emplace_back(points.row(pick).transpose());
    for (int i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (points.row(i).transpose() - centers.back()).squaredNorm());
    }
  }
  const int kc = static_cast<int>(centers.size());
  result.cluster_count = kc;

  std::vector<int>& labels = result.labels;
  std::fill(labels.begin(), labels.end(), -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < kc; ++c) {
        const double d = (points.row(i).transpose() - centers[c]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (labels[i] != best) {
        labels[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<Eigen::VectorXd> sums(kc, Eigen::VectorXd::Zero(points.cols()));
    std::vector<int> counts(kc, 0);
    for (int i = 0; i < n; ++i) {
      sums[labels[i]] += points.row(i).transpose();
      ++counts[labels[i]];
    }
    for (int c = 0; c < kc; ++c) {
      if (counts[c] > 0) centers[c] = sums[c] / counts[c];
    }
  }
  return result;
}

std::vector<MatchPair> select_correspondences(const std::vector<MatchPair>& pairs,
                                              const SelectionConfig& cfg) {
  if (pairs.empty()) throw Error(ErrorCode::kEmptyInput, "no pairs to select from");
  cfg.validate();

  std::vector<MatchPair> out;
  if (static_cast<int>(pairs.size()) <= cfg.k) {
    out = pairs;
  } else {
    const auto dim_a = pairs.front().descriptor_a.size();
    const auto dim_b = pairs.front().descriptor_b.size();
    Eigen::MatrixXd points(static_cast<Eigen::Index>(pairs.size()),
                           static_cast<Eigen::Index>(dim_a + dim_b));
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (pairs[i].descriptor_a.size() != dim_a || pairs[i].descriptor_b.size() != dim_b) {
        throw Error(ErrorCode::kDimensionMismatch, "pair descriptors differ in length");
      }
      for (std::size_t j = 0; j < dim_a; ++j) points(i, j) = pairs[i].descriptor_a[j];
      for (std::size_t j = 0; j < dim_b; ++j) points(i, dim_a + j) = pairs[i].descriptor_b[j];
    }
    const Clustering clusters = kmeans(points, cfg.k, cfg.kmeans_max_iters, cfg.kmeans_seed);

    std::vector<int> winner(clusters.cluster_count, -1);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      int& w = winner[clusters.labels[i]];
      if (w < 0) {
        w = static_cast<int>(i);
        continue;
      }
      const MatchPair& cur = pairs[w];
      const MatchPair& cand = pairs[i];
      if (cand.joint_saliency > cur.joint_saliency ||
          (cand.joint_saliency == cur.joint_saliency && cand.cell_a < cur.cell_a)) {
        w = static_cast<int>(i);
      }
    }
    for (int w : winner) {
      if (w >= 0) out.push_back(pairs[w]);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const MatchPair& x, const MatchPair& y) { return x.cell_a < y.cell_a; });
  return out;
}

std::vector<Correspondence> attach_depth(const std::vector<MatchPair>& pairs,
                                         const DepthMap& depth, const CameraIntrinsics& intr) {
  if (depth.width != intr.width || depth.height != intr.height) {
    throw Error(ErrorCode::kDimensionMismatch, "depth map does not match the camera resolution");
  }
  std::vector<Correspondence> out;
  out.reserve(pairs.size());
  for (const MatchPair& p : pairs) {
    const double d = depth.sample_nearest(p.pixel_a);
    if (!is_valid_depth(d)) continue;
    Correspondence c;
    c.reference_pixel = p.pixel_b;
    c.current_pixel = p.pixel_a;
    c.scene_point = back_project(intr, p.pixel_a, d);
    c.reference_descriptor = p.descriptor_b;
    c.current_descriptor = p.descriptor_a;
    c.saliency = std::clamp(p.joint_saliency, 0.0, 1.0);
    out.push_back(std::move(c));
  }
  if (out.size() < 4) {
    throw Error(ErrorCode::kInsufficientCorrespondences,
                std::to_string(out.size()) + " correspondences with valid depth");
  }
  return out;
}

}  // namespace viewalign
