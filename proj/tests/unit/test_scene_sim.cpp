#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "viewalign/correspondence.hpp"
#include "viewalign/errors.hpp"
#include "viewalign/scene_sim.hpp"

using namespace viewalign;

namespace {

constexpr double kDeg = M_PI / 180.0;

double angle_deg(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  return std::acos(std::clamp(static_cast<double>(a.dot(b)), -1.0, 1.0)) / kDeg;
}

bool same_grid(const DescriptorGrid& a, const DescriptorGrid& b) {
  return a.rows == b.rows && a.cols == b.cols && a.dim == b.dim && a.descriptors == b.descriptors &&
         a.saliency == b.saliency;
}

}  // namespace

TEST_CASE("scenes are deterministic per seed") {
  const auto a = sim::make_scene(42, 20, 3);
  const auto b = sim::make_scene(42, 20, 3);
  REQUIRE(a.landmarks.size() == 23);
  for (std::size_t i = 0; i < a.landmarks.size(); ++i) {
    CHECK(a.landmarks[i].position.vec() == b.landmarks[i].position.vec());
    CHECK(a.landmarks[i].descriptor == b.landmarks[i].descriptor);
    CHECK(a.landmarks[i].saliency == b.landmarks[i].saliency);
  }
  const auto c = sim::make_scene(43, 20, 3);
  CHECK(c.landmarks[0].position.vec() != a.landmarks[0].position.vec());
  CHECK_THROWS_AS(sim::make_scene(1, 7, 0), Error);
  CHECK_THROWS_AS(sim::make_scene(1, 8, 9), Error);
}

TEST_CASE("landmarks sit in the depth band inside the goal view") {
  const CameraIntrinsics k = sim::default_intrinsics();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (const auto& lm : sim::make_scene(seed, 30, 4).landmarks) {
      const Eigen::Vector3d p = lm.position.vec();
      CHECK(p.z() >= 1.0);
      CHECK(p.z() <= 3.0);
      const double u = k.fx * p.x() / p.z() + k.cx;
      const double v = k.fy * p.y() / p.z() + k.cy;
      CHECK(u >= 0.0);
      CHECK(u < k.width);
      CHECK(v >= 0.0);
      CHECK(v < k.height);
      CHECK(lm.saliency >= 0.4);
      CHECK(lm.saliency <= 1.0);
      CHECK(lm.descriptor.norm() == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("distinct descriptors without distractors") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = sim::make_scene(seed, 40, 0);
    for (std::size_t i = 0; i < s.landmarks.size(); ++i) {
      for (std::size_t j = i + 1; j < s.landmarks.size(); ++j) {
        CHECK(angle_deg(s.landmarks[i].descriptor, s.landmarks[j].descriptor) > 5.0);
      }
    }
  }
}

TEST_CASE("each distractor forms exactly one near-duplicate pair") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = sim::make_scene(seed, 20, 3);
    int close = 0;
    for (std::size_t i = 0; i < s.landmarks.size(); ++i) {
      for (std::size_t j = i + 1; j < s.landmarks.size(); ++j) {
        if (angle_deg(s.landmarks[i].descriptor, s.landmarks[j].descriptor) < 2.0) {
          ++close;
          CHECK((s.landmarks[j].duplicate_of == static_cast<int>(i) ||
                 s.landmarks[i].duplicate_of == static_cast<int>(j)));
          CHECK((s.landmarks[i].position.vec() - s.landmarks[j].position.vec()).norm() >= 0.3);
        }
      }
    }
    CHECK(close == 3);
  }
}

TEST_CASE("renders are deterministic and well formed") {
  const CameraIntrinsics k = sim::default_intrinsics();
  const auto s = sim::make_scene(3, 30, 2);
  const CameraPose pose = sim::perturbed_pose(s.goal_pose_world, 5 * kDeg, 0.1, 1);
  sim::CorruptionConfig c;
  c.pixel_noise_sigma = 1.0;
  c.outlier_rate = 0.2;
  c.descriptor_noise_deg = 1.0;
  c.seed = 9;
  const auto a = sim::render(s, pose, k, c);
  const auto b = sim::render(s, pose, k, c);
  CHECK(same_grid(a.grid, b.grid));
  CHECK(a.depth.meters == b.depth.meters);
  CHECK_NOTHROW(a.grid.validate());
  CHECK(a.grid.rows == 59);
  CHECK(a.grid.cols == 79);
  CHECK(a.grid.dim == sim::kDescriptorDim);
  c.seed = 10;
  CHECK_FALSE(same_grid(a.grid, sim::render(s, pose, k, c).grid));
}

TEST_CASE("landmark cells carry descriptor, saliency and depth") {
  const CameraIntrinsics k = sim::default_intrinsics();
  const auto s = sim::make_scene(5, 30, 0);
  const auto v = sim::render(s, s.goal_pose_world, k, {});
  std::set<int> cells;
  for (const auto& vis : v.visible) {
    cells.insert(vis.cell);
    const auto& lm = s.landmarks[vis.landmark];
    CHECK(Eigen::VectorXf(v.grid.descriptors.row(vis.cell).transpose()) == lm.descriptor);
    CHECK(v.grid.saliency[vis.cell] == doctest::Approx(lm.saliency).epsilon(1e-6));
    CHECK(v.depth.sample_nearest(v.grid.cell_center(vis.cell)) ==
          doctest::Approx(lm.position.z).epsilon(1e-6));
    // Cell centre is the quantized projection.
    CHECK(std::abs(v.grid.cell_center(vis.cell).u - vis.projection.u) <= 2.0);
    CHECK(std::abs(v.grid.cell_center(vis.cell).v - vis.projection.v) <= 2.0);
  }
  for (int c = 0; c < v.grid.cell_count(); ++c) {
    if (cells.count(c)) continue;
    CHECK(v.grid.saliency[c] < 0.1f);
    CHECK(v.depth.sample_nearest(v.grid.cell_center(c)) == 0.0);
    for (const auto& lm : s.landmarks) {
      REQUIRE(angle_deg(v.grid.descriptors.row(c).transpose(), lm.descriptor) > 30.0);
    }
  }
}

TEST_CASE("outlier corruption displaces the requested share of landmark cells") {
  const CameraIntrinsics k = sim::default_intrinsics();
  const auto s = sim::make_scene(8, 20, 0);
  const auto clean = sim::render(s, s.goal_pose_world, k, {});
  REQUIRE(clean.visible.size() == 20);
  sim::CorruptionConfig c;
  c.outlier_rate = 0.3;
  const auto v = sim::render(s, s.goal_pose_world, k, c);
  int displaced = 0;
  for (std::size_t i = 0; i < v.visible.size(); ++i) {
    if (v.visible[i].displaced) {
      ++displaced;
      CHECK(v.visible[i].cell != clean.visible[i].cell);
    } else {
      CHECK(v.visible[i].cell == clean.visible[i].cell);
    }
  }
  CHECK(displaced == 6);
  c.outlier_rate = 1.0;
  CHECK_THROWS_AS(sim::render(s, s.goal_pose_world, k, c), Error);
}

TEST_CASE("clean renders match exactly the landmark pairs seen by both views") {
  const CameraIntrinsics k = sim::default_intrinsics();
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = sim::make_scene(seed, 30, 0);
    const CameraPose pose = sim::perturbed_pose(s.goal_pose_world, 3 * kDeg, 0.05, seed);
    const auto cur = sim::render(s, pose, k, {});
    const auto ref = sim::render(s, s.goal_pose_world, k, {}, sim::ViewRole::kReference, false);
    std::map<int, int> cur_cell, ref_cell;
    for (const auto& v : cur.visible) cur_cell[v.landmark] = v.cell;
    for (const auto& v : ref.visible) ref_cell[v.landmark] = v.cell;
    if (cur_cell.size() != ref_cell.size()) continue;
    std::set<std::pair<int, int>> expected;
    for (const auto& [lm, cell] : cur_cell) {
      REQUIRE(ref_cell.count(lm));
      expected.insert({cell, ref_cell[lm]});
    }
    std::set<std::pair<int, int>> got;
    for (const auto& m : mutual_nearest_matches(cur.grid, ref.grid)) got.insert({m.cell_a, m.cell_b});
    CHECK(got == expected);
    ++checked;
  }
  CHECK(checked >= 10);
}

TEST_CASE("padded reference renders line up with the capture frame") {
  const CameraIntrinsics k = sim::default_intrinsics();
  const auto s = sim::make_scene(12, 30, 0);
  const ReferenceView ref = sim::render_reference(s, k, {240, 240});
  const auto full = sim::render(s, s.goal_pose_world, k, {}, sim::ViewRole::kReference, false);
  std::map<int, PixelPoint> where;
  for (const auto& v : full.visible) where[v.landmark] = v.projection;
  int found = 0;
  for (int c = 0; c < ref.grid.cell_count(); ++c) {
    if (ref.grid.saliency[c] < 0.3f) continue;
    for (std::size_t i = 0; i < s.landmarks.size(); ++i) {
      if (ref.grid.descriptors.row(c).transpose() != s.landmarks[i].descriptor) continue;
      const PixelPoint p = ref.spec.to_capture(ref.grid.cell_center(c));
      CHECK(std::abs(p.u - where[i].u) <= 2.0);
      CHECK(std::abs(p.v - where[i].v) <= 2.0);
      ++found;
    }
  }
  CHECK(found > 5);
}

TEST_CASE("ground-truth pixel error") {
  const CameraIntrinsics k = sim::default_intrinsics();
  const auto s = sim::make_scene(4, 30, 2);
  CHECK(sim::true_pixel_error(s, s.goal_pose_world, k) == 0.0);
  CameraPose shifted = s.goal_pose_world;
  shifted.translation.z() = -0.1;
  CHECK(sim::true_pixel_error(s, shifted, k) > 0.0);
  CameraPose behind = CameraPose::from_axis_angle({0, M_PI, 0}, {0, 0, 0});
  CHECK(sim::true_pixel_error(s, behind, k) == doctest::Approx(std::hypot(320.0, 240.0)));
}

TEST_CASE("perturbed poses have the requested magnitudes") {
  const CameraPose goal = CameraPose::identity();
  const CameraPose p = sim::perturbed_pose(goal, 7 * kDeg, 0.25, 3);
  CHECK(rotation_angle(p.rotation) == doctest::Approx(7 * kDeg));
  CHECK(p.translation.norm() == doctest::Approx(0.25));
}

TEST_CASE("simulated camera executes moves scaled by its gain") {
  const CameraIntrinsics k = sim::default_intrinsics();
  const auto s = sim::make_scene(2, 20, 0);
  sim::SimulatedCamera cam(s, k, s.goal_pose_world, {}, 0.5);
  cam.move(CameraPose::from_axis_angle({0, 0.2, 0}, {0.2, 0, 0}));
  CHECK(cam.pose_world().translation.x() == doctest::Approx(0.1));
  CHECK(rotation_angle(cam.pose_world().rotation) == doctest::Approx(0.1));
  try {
    cam.move(CameraPose::from_axis_angle({0, 0, 0}, {10, 0, 0}));
    FAIL("expected CameraUnavailable");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCameraUnavailable);
  }
  const CapturedView v = cam.capture();
  CHECK(v.pose_world.translation.x() == doctest::Approx(0.1));
  CHECK(cam.capture_count() == 1);
}

TEST_CASE("simulated grids round-trip through the binary formats") {
  const CameraIntrinsics k = sim::default_intrinsics();
  const auto s = sim::make_scene(6, 20, 0);
  const auto v = sim::render(s, s.goal_pose_world, k, {});
  std::stringstream g, d;
  write_grid(g, v.grid);
  write_depth(d, v.depth);
  CHECK(same_grid(read_grid(g), v.grid));
  CHECK(read_depth(d).meters == v.depth.meters);
}
