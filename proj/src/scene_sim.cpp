#include "viewalign/scene_sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "viewalign/errors.hpp"

namespace viewalign::sim {

namespace {

constexpr double kDeg = M_PI / 180.0;

std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

Eigen::VectorXf random_in_channel(std::mt19937_64& rng, int offset, int dims) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Eigen::VectorXf v = Eigen::VectorXf::Zero(kDescriptorDim);
  for (int i = 0; i < dims; ++i) v[offset + i] = n(rng);
  return v.normalized();
}

// Unit vector at `angle` radians from `base`, turned toward a random
// direction inside the landmark subspace.
Eigen::VectorXf rotate_toward_random(const Eigen::VectorXf& base, double angle,
                                     std::mt19937_64& rng) {
  Eigen::VectorXf q = random_in_channel(rng, 0, kLandmarkDims);
  q -= q.dot(base) * base;
  q.normalize();
  return (static_cast<float>(std::cos(angle)) * base + static_cast<float>(std::sin(angle)) * q)
      .normalized();
}

double angle_between(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  return std::acos(std::clamp(static_cast<double>(a.dot(b)), -1.0, 1.0));
}

Eigen::Vector3d to_camera(const CameraPose& pose_world, const ScenePoint& p) {
  return pose_world.rotation.transpose() * (p.vec() - pose_world.translation);
}

PixelPoint pinhole(const CameraIntrinsics& k, const Eigen::Vector3d& x) {
  return {k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy};
}

bool inside(const CameraIntrinsics& k, const PixelPoint& p) {
  return p.u >= 0.0 && p.v >= 0.0 && p.u < k.width && p.v < k.height;
}

Eigen::Vector3d point_in_view(const CameraIntrinsics& k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double u = k.width * (0.15 + 0.7 * u01(rng));
  const double v = k.height * (0.15 + 0.7 * u01(rng));
  const double z = 1.0 + 2.0 * u01(rng);
  return {(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z};
}

}  // namespace

void CorruptionConfig::validate() const {
  if (!(pixel_noise_sigma >= 0.0) || !std::isfinite(pixel_noise_sigma)) {
    throw Error(ErrorCode::kInvalidArgument, "pixel_noise_sigma must be >= 0");
  }
  if (!(outlier_rate >= 0.0 && outlier_rate < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "outlier_rate must be in [0, 1)");
  }
  if (!(descriptor_noise_deg >= 0.0) || !std::isfinite(descriptor_noise_deg)) {
    throw Error(ErrorCode::kInvalidArgument, "descriptor_noise_deg must be >= 0");
  }
}

CameraIntrinsics default_intrinsics() {
  CameraIntrinsics k;
  k.fx = 260.0;
  k.fy = 260.0;
  k.cx = 160.0;
  k.cy = 120.0;
  k.width = 320;
  k.height = 240;
  return k;
}

SyntheticScene make_scene(std::uint64_t seed, int n_landmarks, int distractor_count,
                          const CameraIntrinsics& intr) {
  if (n_landmarks < 8) throw Error(ErrorCode::kInvalidArgument, "a scene needs at least 8 landmarks");
  if (distractor_count < 0 || distractor_count > n_landmarks) {
    throw Error(ErrorCode::kInvalidArgument, "distractor_count must be in [0, n_landmarks]");
  }
  intr.validate();
  auto rng = make_rng({seed, 0x5ce4e});
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  SyntheticScene scene;
  scene.seed = seed;
  while (static_cast<int>(scene.landmarks.size()) < n_landmarks) {
    Landmark lm;
    lm.descriptor = random_in_channel(rng, 0, kLandmarkDims);
    const bool distinct = std::all_of(scene.landmarks.begin(), scene.landmarks.end(),
                                      [&](const Landmark& o) {
                                        return angle_between(o.descriptor, lm.descriptor) > 5.0 * kDeg;
                                      });
    if (!distinct) continue;
    lm.position = ScenePoint::from(point_in_view(intr, rng));
    lm.saliency = 0.4 + 0.6 * u01(rng);
    scene.landmarks.push_back(std::move(lm));
  }

  std::vector<int> sources(n_landmarks);
  std::iota(sources.begin(), sources.end(), 0);
  std::shuffle(sources.begin(), sources.end(), rng);
  for (int i = 0; i < distractor_count; ++i) {
    const Landmark& src = scene.landmarks[sources[i]];
    Landmark d;
    d.duplicate_of = sources[i];
    d.descriptor = rotate_toward_random(src.descriptor, (0.5 + u01(rng)) * kDeg, rng);
    Eigen::Vector3d p;
    do {
      p = point_in_view(intr, rng);
    } while ((p - src.position.vec()).norm() < 0.3);
    d.position = ScenePoint::from(p);
    d.saliency = 0.4 + 0.6 * u01(rng);
    scene.landmarks.push_back(std::move(d));
  }
  return scene;
}

SimView render(const SyntheticScene& scene, const CameraPose& pose_world,
               const CameraIntrinsics& intr, const CorruptionConfig& corruption, ViewRole role,
               bool include_distractors, GridLayout layout) {
  corruption.validate();
  intr.validate();
  if (!pose_world.is_valid(1e-6)) throw Error(ErrorCode::kInvalidArgument, "invalid camera pose");

  auto rng = make_rng({scene.seed, corruption.seed, static_cast<std::uint64_t>(role)});
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  SimView view;
  view.pose_world = pose_world;
  view.grid = DescriptorGrid::allocate(intr.width, intr.height, layout.patch_size, layout.stride,
                                       kDescriptorDim);
  view.depth = DepthMap::zeros(intr.width, intr.height);
  DescriptorGrid& g = view.grid;
  const int cells = g.cell_count();
  if (cells == 0) return view;

  // Nearest landmark per cell wins.
  std::map<int, VisibleLandmark> by_cell;
  for (int i = 0; i < static_cast<int>(scene.landmarks.size()); ++i) {
    const double nu = noise(rng) * corruption.pixel_noise_sigma;
    const double nv = noise(rng) * corruption.pixel_noise_sigma;
    if (!include_distractors && scene.is_distractor(i)) continue;
    const Eigen::Vector3d xc = to_camera(pose_world, scene.landmarks[i].position);
    if (xc.z() <= 0.05) continue;
    const PixelPoint proj = pinhole(intr, xc);
    const PixelPoint seen{proj.u + nu, proj.v + nv};
    if (!inside(intr, seen)) continue;
    const int col = std::clamp(
        static_cast<int>(std::lround((seen.u - layout.patch_size / 2) / layout.stride)), 0, g.cols - 1);
    const int row = std::clamp(
        static_cast<int>(std::lround((seen.v - layout.patch_size / 2) / layout.stride)), 0, g.rows - 1);
    const int cell = g.cell_index(row, col);
    auto it = by_cell.find(cell);
    if (it == by_cell.end() || xc.z() < it->second.depth) by_cell[cell] = {i, cell, proj, xc.z(), false};
  }
  for (const auto& [cell, v] : by_cell) view.visible.push_back(v);
  std::sort(view.visible.begin(), view.visible.end(),
            [](const VisibleLandmark& a, const VisibleLandmark& b) { return a.landmark < b.landmark; });

  const int n_out = static_cast<int>(std::lround(corruption.outlier_rate * view.visible.size()));
  if (n_out > 0) {
    std::vector<char> used(cells, 0);
    for (const auto& v : view.visible) used[v.cell] = 1;
    std::vector<int> order(view.visible.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<int> any_cell(0, cells - 1);
    for (int j = 0; j < n_out && j < cells - static_cast<int>(view.visible.size()); ++j) {
      VisibleLandmark& v = view.visible[order[j]];
      int cell;
      do {
        cell = any_cell(rng);
      } while (used[cell]);
      used[v.cell] = 0;
      used[cell] = 1;
      v.cell = cell;
      v.depth = 1.0 + 2.0 * u01(rng);
      v.displaced = true;
    }
  }

  std::vector<char> is_landmark(cells, 0);
  const int half = layout.stride / 2;
  for (const VisibleLandmark& v : view.visible) {
    const Landmark& lm = scene.landmarks[v.landmark];
    Eigen::VectorXf d = lm.descriptor;
    if (corruption.descriptor_noise_deg > 0.0) {
      d = rotate_toward_random(d, std::abs(noise(rng)) * corruption.descriptor_noise_deg * kDeg, rng);
    }
    g.descriptors.row(v.cell) = d.transpose();
    g.saliency[v.cell] = static_cast<float>(lm.saliency);
    is_landmark[v.cell] = 1;
    const PixelPoint c = g.cell_center(v.cell);
    const int x0 = static_cast<int>(std::lround(c.u)) - half;
    const int y0 = static_cast<int>(std::lround(c.v)) - half;
    for (int y = std::max(0, y0); y < std::min(intr.height, y0 + layout.stride); ++y) {
      for (int x = std::max(0, x0); x < std::min(intr.width, x0 + layout.stride); ++x) {
        view.depth.at(x, y) = static_cast<float>(v.depth);
      }
    }
  }

  // Background cells: 60 degrees from an anchor landmark, rest in the role's channel.
  const int offset = kLandmarkDims + (role == ViewRole::kCurrent ? 0 : kBackgroundDims);
  std::uniform_int_distribution<int> anchor_pick(
      0, static_cast<int>(view.visible.empty() ? scene.landmarks.size() : view.visible.size()) - 1);
  std::uniform_real_distribution<float> low_saliency(0.0f, 0.09f);
  const float a = 0.5f;
  const float b = std::sqrt(0.75f);
  for (int c = 0; c < cells; ++c) {
    if (is_landmark[c]) continue;
    const int pick = anchor_pick(rng);
    const int anchor = view.visible.empty() ? pick : view.visible[pick].landmark;
    const Eigen::VectorXf p = random_in_channel(rng, offset, kBackgroundDims);
    g.descriptors.row(c) = (a * scene.landmarks[anchor].descriptor + b * p).normalized().transpose();
    g.saliency[c] = low_saliency(rng);
  }
  return view;
}

ReferenceView render_reference(const SyntheticScene& scene, const CameraIntrinsics& capture,
                               ImageDims reference_dims, GridLayout layout) {
  const ReferenceSpec spec = fit_reference(reference_dims, {capture.width, capture.height});
  const double sx = static_cast<double>(spec.scaled_width) / spec.ref_width;
  const double sy = static_cast<double>(spec.scaled_height) / spec.ref_height;
  CameraIntrinsics k;
  k.fx = capture.fx / sx;
  k.fy = capture.fy / sy;
  k.cx = (capture.cx - spec.pad_left) / sx;
  k.cy = (capture.cy - spec.pad_top) / sy;
  k.width = reference_dims.width;
  k.height = reference_dims.height;
  SimView view = render(scene, scene.goal_pose_world, k, CorruptionConfig{}, ViewRole::kReference,
                        false, layout);
  ReferenceView ref;
  ref.grid = std::move(view.grid);
  ref.spec = spec;
  return ref;
}

ReferenceView render_reference(const SyntheticScene& scene, const CameraIntrinsics& capture) {
  return render_reference(scene, capture, {capture.width, capture.height});
}

double true_pixel_error(const SyntheticScene& scene, const CameraPose& pose_world,
                        const CameraIntrinsics& intr) {
  const double diagonal = std::hypot(intr.width, intr.height);
  double sum = 0.0;
  int n = 0;
  for (int i = 0; i < static_cast<int>(scene.landmarks.size()); ++i) {
    if (scene.is_distractor(i)) continue;
    const Eigen::Vector3d g = to_camera(scene.goal_pose_world, scene.landmarks[i].position);
    if (g.z() <= 0.0) continue;
    const PixelPoint goal_px = pinhole(intr, g);
    if (!inside(intr, goal_px)) continue;
    const Eigen::Vector3d c = to_camera(pose_world, scene.landmarks[i].position);
    sum += c.z() <= 0.0 ? diagonal : (pinhole(intr, c).vec() - goal_px.vec()).norm();
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::kEmptyInput, "no landmark visible from the goal pose");
  return sum / n;
}

CameraPose perturbed_pose(const CameraPose& goal, double angle_rad, double distance,
                          std::uint64_t seed) {
  auto rng = make_rng({seed, 0x9e3d});
  std::normal_distribution<double> n(0.0, 1.0);
  const Eigen::Vector3d axis = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
  const Eigen::Vector3d dir = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
  return compose(goal, CameraPose::from_axis_angle(axis * angle_rad, dir * distance));
}

SimulatedCamera::SimulatedCamera(const SyntheticScene& scene, const CameraIntrinsics& intr,
                                 const CameraPose& start_world, CorruptionConfig corruption,
                                 double gain)
    : scene_(scene), intr_(intr), pose_(start_world), corruption_(corruption), gain_(gain) {
  corruption_.validate();
}

CapturedView SimulatedCamera::capture() {
  CorruptionConfig c = corruption_;
  c.seed += static_cast<std::uint64_t>(captures_++);
  SimView v = render(scene_, pose_, intr_, c);
  return {std::move(v.grid), std::move(v.depth), pose_};
}

void SimulatedCamera::move(const CameraPose& delta) {
  const Eigen::AngleAxisd aa(delta.rotation);
  CameraPose executed;
  executed.rotation = Eigen::AngleAxisd(aa.angle() * gain_, aa.axis()).toRotationMatrix();
  executed.translation = gain_ * delta.translation;
  const CameraPose next = compose(pose_, executed);
  if (!scene_.workspace.contains(next.translation)) {
    throw Error(ErrorCode::kCameraUnavailable, "requested pose is outside the workspace");
  }
  pose_ = next;
}

}  // namespace viewalign::sim
