#pragma once

#include <cstdint>
#include <vector>

#include "viewalign/descriptor_grid.hpp"
#include "viewalign/geometry.hpp"

namespace viewalign {

// A mutual-nearest-neighbour (best-buddies) pair between grid A and grid B.
// Inside the alignment loop A is the current view and B the reference.
struct MatchPair {
  int cell_a = 0;
  int cell_b = 0;
  PixelPoint pixel_a;
  PixelPoint pixel_b;
  double similarity = 0.0;
  double joint_saliency = 0.0;
  std::vector<float> descriptor_a;
  std::vector<float> descriptor_b;
};

struct SelectionConfig {
  int k = 30;
  int kmeans_max_iters = 100;
  std::uint64_t kmeans_seed = 0;

  void validate() const;
};

// Pairs (i, j) where j is i's most similar cell in b and i is j's most
// similar cell in a (cosine on unit descriptors, ties to the lower index).
// Sorted by cell_a.
std::vector<MatchPair> mutual_nearest_matches(const DescriptorGrid& a, const DescriptorGrid& b);

// Result of k-means over the concatenated pair descriptors.
struct Clustering {
  std::vector<int> labels;  // one per input row
  int cluster_count = 0;    // centers actually seeded (<= k)
};

// k-means++ seeding followed by Lloyd iterations. Empty clusters are left
// empty. Rows of `points` are samples.
Clustering kmeans(const Eigen::MatrixXd& points, int k, int max_iters, std::uint64_t seed);

// Picks the most salient pair of each non-empty k-means cluster; returns all
// pairs unchanged when there are no more than k of them. Output sorted by
// cell_a.
std::vector<MatchPair> select_correspondences(const std::vector<MatchPair>& pairs,
                                              const SelectionConfig& cfg);

// Back-projects each pair's current-view pixel (pixel_a) using the depth map.
// Pairs over missing depth are dropped; fewer than four survivors throws
// InsufficientCorrespondences.
std::vector<Correspondence> attach_depth(const std::vector<MatchPair>& pairs,
                                         const DepthMap& depth, const CameraIntrinsics& intr);

}  // namespace viewalign
