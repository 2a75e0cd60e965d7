#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "viewalign/correspondence.hpp"
#include "viewalign/descriptor_grid.hpp"
#include "viewalign/geometry.hpp"
#include "viewalign/robust.hpp"

namespace viewalign {

struct ImageDims {
  int width = 0;
  int height = 0;
};

// Placement of a reference image inside the capture frame: scaled as large
// as possible at its own aspect ratio, then padded (centered) to the capture
// size.
struct ReferenceSpec {
  int ref_width = 0;
  int ref_height = 0;
  double scale = 1.0;
  int scaled_width = 0;
  int scaled_height = 0;
  int pad_left = 0;
  int pad_right = 0;
  int pad_top = 0;
  int pad_bottom = 0;

  // Maps a reference-image pixel into the padded capture frame.
  PixelPoint to_capture(const PixelPoint& ref_px) const;
  bool inside_scaled(const PixelPoint& capture_px) const;
};

struct CropRect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};

ReferenceSpec fit_reference(ImageDims reference, ImageDims capture);
CropRect crop_captured(ImageDims capture, const ReferenceSpec& spec);

// Axis-aligned box for the camera position in the world (robot base) frame
// plus the largest rotation a single step may command.
struct WorkspaceLimits {
  Eigen::Vector3d min_corner = Eigen::Vector3d::Constant(-1.0);
  Eigen::Vector3d max_corner = Eigen::Vector3d::Constant(1.0);
  double max_rotation_step = 0.35;  // radians

  void validate() const;
  bool contains(const Eigen::Vector3d& position) const;
};

struct AlignmentState {
  int step_index = 0;
  std::vector<double> mean_distance_history;
  double best_so_far = std::numeric_limits<double>::infinity();
  CameraPose camera_pose_world;  // world_from_camera

  void record(double mean_distance);
};

// True once the last two recorded distances both fail to beat the best
// distance recorded before them, or once step_index reaches max_steps.
bool should_terminate(const AlignmentState& state, int max_steps);

enum class EstimatorKind { kRansac, kMagsac, kNone };

// Robust estimator selection; `threshold` is tau for RANSAC and the maximum
// threshold for MAGSAC++.
struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::kMagsac;
  double threshold = 50.0;

  // "ransac:<tau>", "magsac:<max>", "magsac" or "none".
  static EstimatorSpec parse(const std::string& text);
  std::string to_string() const;
};

struct AlignmentConfig {
  EstimatorSpec estimator;
  SelectionConfig selection;
  WorkspaceLimits workspace;
  int max_steps = 8;
  // When false the loop runs exactly max_steps steps (experiment protocol).
  bool stop_on_stall = true;
  std::uint64_t seed = 0;  // robust-estimator seed, offset by the step index
  int max_iters = 10000;
  int magsac_partitions = 10;
  int magsac_irls_iters = 10;

  void validate() const;
};

enum class StepAction { kMove, kHold };
enum class HoldReason { kNone, kPnPFailure, kOutsideWorkspace, kTooFewCorrespondences };

const char* to_string(StepAction action);
const char* to_string(HoldReason reason);

struct StepOutcome {
  StepAction action = StepAction::kHold;
  HoldReason reason = HoldReason::kNone;
  CameraPose delta;  // new camera pose expressed in the current camera frame
  int match_count = 0;
  int correspondence_count = 0;
  int inlier_count = 0;
  // Mean pixel distance over the selected correspondences; +inf when no
  // correspondence survived.
  double mean_pixel_distance = std::numeric_limits<double>::infinity();
};

struct CapturedView {
  DescriptorGrid grid;
  DepthMap depth;
  CameraPose pose_world;
};

// One RGB-D observation of the reference plus how it sits in the capture frame.
struct ReferenceView {
  DescriptorGrid grid;
  ReferenceSpec spec;

  static ReferenceView fitted(DescriptorGrid grid, const CameraIntrinsics& capture);
};

// Abstract controllable RGB-D camera. Implementations throw
// Error(kCameraUnavailable) when the device cannot serve a request.
class RgbdCamera {
 public:
  virtual ~RgbdCamera() = default;
  virtual CapturedView capture() = 0;
  virtual void move(const CameraPose& delta) = 0;
};

// Runs the robust solver configured in `cfg`.
RobustResult estimate_pose(std::span<const Correspondence> corrs, const CameraIntrinsics& intr,
                           const AlignmentConfig& cfg, std::uint64_t seed);

StepOutcome alignment_step(const CapturedView& view, const ReferenceView& reference,
                           const CameraIntrinsics& intr, const AlignmentConfig& cfg,
                           int step_index = 0);

struct StepRecord {
  int step = 0;
  StepOutcome outcome;
  CameraPose pose_before;  // world_from_camera
  CameraPose pose_after;
};

struct AlignmentReport {
  std::vector<StepRecord> steps;
  std::vector<double> mean_distance_history;
  CameraPose final_pose_world;
  ReferenceSpec reference;
  CropRect crop;
  std::string config_summary;
};

AlignmentReport run_alignment(RgbdCamera& camera, const ReferenceView& reference,
                              const CameraIntrinsics& intr, const AlignmentConfig& cfg);

// "key=value" records, one line per step, framed by a header and footer line.
void write_report_records(std::ostream& out, const AlignmentReport& report);
// step,mean_px_dist,inliers,action,reason plus a trailing "# config:" line.
void write_report_csv(std::ostream& out, const AlignmentReport& report);

std::string describe(const AlignmentConfig& cfg);

}  // namespace viewalign
