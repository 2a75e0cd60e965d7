#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "viewalign/correspondence.hpp"
#include "viewalign/errors.hpp"

using namespace viewalign;

namespace {

// rows x cols grid over an image of exactly that many 8-pixel patches.
DescriptorGrid grid_from(int rows, int cols, const std::vector<std::vector<float>>& descs,
                         std::vector<float> saliency = {}) {
  const int dim = static_cast<int>(descs.front().size());
  DescriptorGrid g = DescriptorGrid::allocate(cols * 8, rows * 8, 8, 8, dim);
  REQUIRE(g.cell_count() == static_cast<int>(descs.size()));
  for (int i = 0; i < g.cell_count(); ++i) {
    for (int j = 0; j < dim; ++j) g.descriptors(i, j) = descs[i][j];
    g.descriptors.row(i).normalize();
    g.saliency[i] = saliency.empty() ? 0.5f : saliency[i];
  }
  return g;
}

DescriptorGrid random_grid(std::mt19937_64& rng, int rows, int cols, int dim) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<std::vector<float>> d(rows * cols, std::vector<float>(dim));
  for (auto& v : d) {
    for (auto& x : v) x = n(rng);
  }
  return grid_from(rows, cols, d);
}

// Exhaustive mutual-nearest oracle in double precision.
std::set<std::pair<int, int>> brute_force_mutual(const DescriptorGrid& a, const DescriptorGrid& b) {
  const int na = a.cell_count();
  const int nb = b.cell_count();
  std::vector<std::vector<double>> s(na, std::vector<double>(nb));
  for (int i = 0; i < na; ++i) {
    for (int j = 0; j < nb; ++j) {
      double dot = 0;
      for (int d = 0; d < a.dim; ++d) dot += double(a.descriptors(i, d)) * b.descriptors(j, d);
      s[i][j] = dot;
    }
  }
  std::set<std::pair<int, int>> out;
  for (int i = 0; i < na; ++i) {
    int bj = 0;
    for (int j = 1; j < nb; ++j) {
      if (s[i][j] > s[i][bj]) bj = j;
    }
    int bi = 0;
    for (int k = 1; k < na; ++k) {
      if (s[k][bj] > s[bi][bj]) bi = k;
    }
    if (bi == i) out.insert({i, bj});
  }
  return out;
}

MatchPair make_pair_with(int cell, std::vector<float> da, std::vector<float> db, double sal) {
  MatchPair p;
  p.cell_a = cell;
  p.cell_b = cell;
  p.descriptor_a = std::move(da);
  p.descriptor_b = std::move(db);
  p.joint_saliency = sal;
  return p;
}

}  // namespace

TEST_CASE("mutual nearest: identical one-hot grids match to themselves") {
  const auto g = grid_from(2, 2, {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}});
  const auto pairs = mutual_nearest_matches(g, g);
  REQUIRE(pairs.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(pairs[i].cell_a == i);
    CHECK(pairs[i].cell_b == i);
    CHECK(pairs[i].similarity == doctest::Approx(1.0));
  }
}

TEST_CASE("mutual nearest: crossed pairs") {
  const float c = std::sqrt(0.18f);
  const auto a = grid_from(1, 2, {{1, 0, 0, 0}, {0, 1, 0, 0}});
  const auto b = grid_from(1, 2, {{0.1f, 0.9f, 0, c}, {0.9f, 0.1f, c, 0}});
  const auto pairs = mutual_nearest_matches(a, b);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].cell_a == 0);
  CHECK(pairs[0].cell_b == 1);
  CHECK(pairs[1].cell_a == 1);
  CHECK(pairs[1].cell_b == 0);
  CHECK(pairs[0].similarity == doctest::Approx(0.9).epsilon(1e-6));
  const auto oracle = brute_force_mutual(a, b);
  CHECK(oracle == std::set<std::pair<int, int>>{{0, 1}, {1, 0}});
}

TEST_CASE("mutual nearest: a one-sided preference is excluded") {
  // a0's only candidate is b0, but b0 prefers a1.
  const auto a = grid_from(1, 2, {{1, 0, 0}, {0.9f, std::sqrt(1 - 0.81f), 0}});
  const auto b = grid_from(1, 1, {{0.95f, 0.31f, 0.05f}});
  const auto oracle = brute_force_mutual(a, b);
  REQUIRE(oracle == std::set<std::pair<int, int>>{{1, 0}});
  const auto pairs = mutual_nearest_matches(a, b);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].cell_a == 1);
  CHECK(pairs[0].cell_b == 0);
}

TEST_CASE("mutual nearest: dimension mismatch") {
  const auto a = grid_from(1, 1, {{1, 0}});
  const auto b = grid_from(1, 1, {{1, 0, 0}});
  CHECK_THROWS_AS(mutual_nearest_matches(a, b), Error);
}

TEST_CASE("mutual nearest matches the exhaustive oracle and is symmetric") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> side(1, 16);
  for (int trial = 0; trial < 40; ++trial) {
    const int dim = 3 + trial % 6;
    const auto a = random_grid(rng, side(rng), side(rng), dim);
    const auto b = random_grid(rng, side(rng), side(rng), dim);
    const auto pairs = mutual_nearest_matches(a, b);
    std::set<std::pair<int, int>> got;
    for (const auto& p : pairs) {
      got.insert({p.cell_a, p.cell_b});
      // Similarity is the maximum of both its row and its column.
      double row_max = -2, col_max = -2;
      for (int j = 0; j < b.cell_count(); ++j) {
        row_max = std::max(row_max, double(a.descriptors.row(p.cell_a).dot(b.descriptors.row(j))));
      }
      for (int i = 0; i < a.cell_count(); ++i) {
        col_max = std::max(col_max, double(a.descriptors.row(i).dot(b.descriptors.row(p.cell_b))));
      }
      CHECK(p.similarity == doctest::Approx(row_max).epsilon(1e-5));
      CHECK(p.similarity == doctest::Approx(col_max).epsilon(1e-5));
    }
    CHECK(got == brute_force_mutual(a, b));
    for (std::size_t i = 1; i < pairs.size(); ++i) CHECK(pairs[i - 1].cell_a < pairs[i].cell_a);

    std::set<std::pair<int, int>> swapped;
    for (const auto& p : mutual_nearest_matches(b, a)) swapped.insert({p.cell_b, p.cell_a});
    CHECK(swapped == got);
  }
}

TEST_CASE("select: no more pairs than k returns them all") {
  std::vector<MatchPair> pairs;
  for (int i = 0; i < 5; ++i) {
    std::vector<float> d(5, 0.0f);
    d[i] = 1.0f;
    pairs.push_back(make_pair_with(i, d, d, 0.1 * i));
  }
  SelectionConfig cfg;
  cfg.k = 5;
  CHECK(select_correspondences(pairs, cfg).size() == 5);
  cfg.k = 9;
  CHECK(select_correspondences(pairs, cfg).size() == 5);
  CHECK_THROWS_AS(select_correspondences({}, cfg), Error);
  cfg.k = 3;
  CHECK_THROWS_AS(select_correspondences(pairs, cfg), Error);
}

TEST_CASE("select: one most-salient pair from each well-separated group") {
  // Four tight groups (k must be at least 4); winners found by exhaustive scan.
  std::vector<MatchPair> pairs;
  std::mt19937_64 rng(9);
  std::normal_distribution<float> jitter(0.0f, 0.01f);
  std::map<int, int> best_in_group;
  for (int i = 0; i < 20; ++i) {
    const int group = i % 4;
    std::vector<float> d(4, 0.0f);
    d[group] = 1.0f;
    for (auto& x : d) x += jitter(rng);
    const double s = std::uniform_real_distribution<double>(0, 1)(rng);
    pairs.push_back(make_pair_with(i, d, d, s));
    if (!best_in_group.count(group) || s > pairs[best_in_group[group]].joint_saliency) {
      best_in_group[group] = i;
    }
  }
  for (std::uint64_t seed : {0u, 3u, 99u}) {
    SelectionConfig cfg;
    cfg.k = 4;
    cfg.kmeans_seed = seed;
    const auto sel = select_correspondences(pairs, cfg);
    REQUIRE(sel.size() == 4);
    std::set<int> got, want;
    for (const auto& p : sel) got.insert(p.cell_a);
    for (const auto& [g, i] : best_in_group) want.insert(i);
    CHECK(got == want);
  }
}

TEST_CASE("select: saliency ties go to the lower cell index") {
  std::vector<MatchPair> pairs;
  for (int i = 0; i < 10; ++i) {
    std::vector<float> d(4, 0.0f);
    d[i % 4] = 1.0f;
    pairs.push_back(make_pair_with(20 - i, d, d, 0.5));
  }
  SelectionConfig cfg;
  cfg.k = 4;
  const auto sel = select_correspondences(pairs, cfg);
  REQUIRE(sel.size() == 4);
  // Group g holds cells 20-g, 16-g, (12-g); the lowest index wins.
  std::set<int> got;
  for (const auto& p : sel) got.insert(p.cell_a);
  CHECK(got == std::set<int>{11, 12, 13, 14});
}

TEST_CASE("select: deterministic, one pair per cluster, size bounded by k") {
  std::mt19937_64 rng(77);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<MatchPair> pairs;
  for (int i = 0; i < 120; ++i) {
    std::vector<float> da(8), db(8);
    for (auto& x : da) x = n(rng);
    for (auto& x : db) x = n(rng);
    pairs.push_back(make_pair_with(i, da, db, std::uniform_real_distribution<double>(0, 1)(rng)));
  }
  for (int k : {4, 10, 20, 30, 40}) {
    SelectionConfig cfg;
    cfg.k = k;
    cfg.kmeans_seed = 1234;
    const auto s1 = select_correspondences(pairs, cfg);
    const auto s2 = select_correspondences(pairs, cfg);
    REQUIRE(s1.size() == s2.size());
    for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i].cell_a == s2[i].cell_a);
    CHECK(static_cast<int>(s1.size()) <= k);

    // Recompute the clustering and check one winner per non-empty cluster.
    Eigen::MatrixXd pts(120, 16);
    for (int i = 0; i < 120; ++i) {
      for (int j = 0; j < 8; ++j) {
        pts(i, j) = pairs[i].descriptor_a[j];
        pts(i, 8 + j) = pairs[i].descriptor_b[j];
      }
    }
    const Clustering cl = kmeans(pts, k, cfg.kmeans_max_iters, cfg.kmeans_seed);
    std::set<int> nonempty(cl.labels.begin(), cl.labels.end());
    CHECK(s1.size() == nonempty.size());
    std::set<int> used;
    for (const auto& p : s1) {
      const int label = cl.labels[p.cell_a];
      CHECK(used.insert(label).second);
      for (int i = 0; i < 120; ++i) {
        if (cl.labels[i] == label) CHECK(pairs[i].joint_saliency <= p.joint_saliency);
      }
    }
  }
}

TEST_CASE("kmeans with duplicate points seeds fewer centers") {
  Eigen::MatrixXd pts = Eigen::MatrixXd::Zero(6, 2);
  pts.row(3) << 1, 1;
  pts.row(4) << 1, 1;
  pts.row(5) << 1, 1;
  const Clustering c = kmeans(pts, 5, 10, 0);
  CHECK(c.cluster_count == 2);
  CHECK(c.labels[0] == c.labels[1]);
  CHECK(c.labels[0] != c.labels[3]);
}

TEST_CASE("attach_depth") {
  CameraIntrinsics k;
  k.fx = k.fy = 100;
  k.cx = k.cy = 50;
  k.width = k.height = 100;
  DepthMap depth = DepthMap::zeros(100, 100);
  std::vector<MatchPair> pairs;
  for (int i = 0; i < 6; ++i) {
    MatchPair p;
    p.cell_a = i;
    p.pixel_a = {10.0 + 12 * i, 20.0 + 7 * i};
    p.pixel_b = {15.0 + 10 * i, 25.0};
    p.joint_saliency = 0.5;
    depth.at(static_cast<int>(p.pixel_a.u), static_cast<int>(p.pixel_a.v)) = 1.0f + 0.25f * i;
    pairs.push_back(p);
  }
  const auto all = attach_depth(pairs, depth, k);
  REQUIRE(all.size() == 6);
  for (int i = 0; i < 6; ++i) {
    const double d = 1.0 + 0.25 * i;
    // Inverse pinhole written out.
    CHECK(all[i].scene_point.x == doctest::Approx((pairs[i].pixel_a.u - 50) * d / 100));
    CHECK(all[i].scene_point.y == doctest::Approx((pairs[i].pixel_a.v - 50) * d / 100));
    CHECK(all[i].scene_point.z == doctest::Approx(d));
    CHECK(all[i].reference_pixel.u == pairs[i].pixel_b.u);
  }

  depth.at(static_cast<int>(pairs[2].pixel_a.u), static_cast<int>(pairs[2].pixel_a.v)) = 0.0f;
  const auto dropped = attach_depth(pairs, depth, k);
  CHECK(dropped.size() == 5);
  for (const auto& c : dropped) CHECK(c.current_pixel.u != pairs[2].pixel_a.u);

  CHECK_THROWS_AS(attach_depth(pairs, DepthMap::zeros(100, 100), k), Error);
  CHECK_THROWS_AS(attach_depth(pairs, DepthMap::zeros(90, 100), k), Error);
}
