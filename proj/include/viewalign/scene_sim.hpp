#pragma once

#include <cstdint>
#include <vector>

#include "viewalign/alignment.hpp"
#include "viewalign/descriptor_grid.hpp"
#include "viewalign/geometry.hpp"

namespace viewalign::sim {

// Descriptor layout: landmark subspace, then one background channel per role
// so that background cells of the two views never match each other.
inline constexpr int kLandmarkDims = 24;
inline constexpr int kBackgroundDims = 12;
inline constexpr int kDescriptorDim = kLandmarkDims + 2 * kBackgroundDims;

struct Landmark {
  ScenePoint position;  // world frame
  Eigen::VectorXf descriptor;
  double saliency = 0.0;
  int duplicate_of = -1;  // distractors: index of the landmark they repeat
};

struct SyntheticScene {
  std::uint64_t seed = 0;
  std::vector<Landmark> landmarks;
  WorkspaceLimits workspace;
  CameraPose goal_pose_world;  // the pose that generated the reference

  bool is_distractor(int i) const { return landmarks[i].duplicate_of >= 0; }
};

struct CorruptionConfig {
  double pixel_noise_sigma = 0.0;
  double outlier_rate = 0.0;
  // Angular jitter applied to every landmark descriptor at render time.
  double descriptor_noise_deg = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class ViewRole { kCurrent, kReference };

struct GridLayout {
  int patch_size = 8;
  int stride = 4;
};

struct VisibleLandmark {
  int landmark = 0;
  int cell = 0;
  PixelPoint projection;  // before noise and displacement
  double depth = 0.0;
  bool displaced = false;
};

struct SimView {
  DescriptorGrid grid;
  DepthMap depth;
  CameraPose pose_world;
  std::vector<VisibleLandmark> visible;
};

// 320x240 capture with a 260 px focal length.
CameraIntrinsics default_intrinsics();

// `n_landmarks` distinct landmarks plus `distractor_count` repeats, all in a
// 1-3 m depth band inside the goal camera's view.
SyntheticScene make_scene(std::uint64_t seed, int n_landmarks, int distractor_count,
                          const CameraIntrinsics& intr = default_intrinsics());

// Renders the scene from a camera at `pose_world` (world_from_camera).
SimView render(const SyntheticScene& scene, const CameraPose& pose_world,
               const CameraIntrinsics& intr, const CorruptionConfig& corruption,
               ViewRole role = ViewRole::kCurrent, bool include_distractors = true,
               GridLayout layout = {});

// Reference image of the given size taken from the goal pose, omitting
// distractors. Its pixels line up with the capture frame after fit_reference.
ReferenceView render_reference(const SyntheticScene& scene, const CameraIntrinsics& capture,
                               ImageDims reference_dims, GridLayout layout = {});
ReferenceView render_reference(const SyntheticScene& scene, const CameraIntrinsics& capture);

// Mean distance between where the goal camera and a camera at `pose_world`
// see the non-distractor landmarks visible from the goal. Points behind the
// camera count as the image diagonal.
double true_pixel_error(const SyntheticScene& scene, const CameraPose& pose_world,
                        const CameraIntrinsics& intr);

// Random pose around the goal with the given rotation and translation magnitudes.
CameraPose perturbed_pose(const CameraPose& goal, double angle_rad, double distance,
                          std::uint64_t seed);

// RgbdCamera backed by the simulator. `gain` scales executed motions, so
// values far from 1 make a camera that never settles.
class SimulatedCamera : public RgbdCamera {
 public:
  SimulatedCamera(const SyntheticScene& scene, const CameraIntrinsics& intr,
                  const CameraPose& start_world, CorruptionConfig corruption, double gain = 1.0);

  CapturedView capture() override;
  void move(const CameraPose& delta) override;

  const CameraPose& pose_world() const { return pose_; }
  int capture_count() const { return captures_; }

 private:
  const SyntheticScene& scene_;
  CameraIntrinsics intr_;
  CameraPose pose_;
  CorruptionConfig corruption_;
  double gain_;
  int captures_ = 0;
};

}  // namespace viewalign::sim
