#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <limits>
#include <vector>

namespace viewalign {

// Pinhole calibration. The 3x4 projection is K * [I | 0]; only the 3x3 part
// is stored.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  // Throws InvalidArgument when the invariants (positive focal lengths,
  // principal point inside the sensor) do not hold.
  void validate() const;
  Eigen::Matrix3d matrix() const;
};

// Rigid transform mapping points of a source frame into a target frame:
// p_target = rotation * p_source + translation.
struct CameraPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static CameraPose identity() { return {}; }
  static CameraPose from_axis_angle(const Eigen::Vector3d& axis_angle,
                                    const Eigen::Vector3d& translation);

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  bool is_valid(double tol = 1e-9) const;
};

// Pixel coordinates, origin at the top-left corner, u rightward, v downward.
struct PixelPoint {
  double u = 0.0;
  double v = 0.0;

  Eigen::Vector2d vec() const { return {u, v}; }
};

// Metric point in a camera frame (Z forward, X right, Y down).
struct ScenePoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Eigen::Vector3d vec() const { return {x, y, z}; }
  static ScenePoint from(const Eigen::Vector3d& p) { return {p.x(), p.y(), p.z()}; }
};

// A reference-image pixel paired with a 3D point of the current view.
struct Correspondence {
  PixelPoint reference_pixel;  // padded capture frame
  ScenePoint scene_point;      // current camera frame
  PixelPoint current_pixel;    // where the point was observed in the current view
  std::vector<float> reference_descriptor;
  std::vector<float> current_descriptor;
  double saliency = 0.0;
};

// Returned by reprojection_error when the point cannot be projected.
inline constexpr double kUnprojectable = std::numeric_limits<double>::infinity();

inline bool is_unprojectable(double error) { return error == kUnprojectable; }

PixelPoint project(const CameraIntrinsics& intr, const CameraPose& pose, const ScenePoint& p);

ScenePoint back_project(const CameraIntrinsics& intr, const PixelPoint& px, double depth);

// Missing-depth sentinel test shared by back-projection and depth sampling.
inline bool is_valid_depth(double depth) { return std::isfinite(depth) && depth > 0.0; }

double reprojection_error(const CameraIntrinsics& intr, const CameraPose& pose,
                          const Correspondence& c);

// compose(a, b) applies b first, then a.
CameraPose compose(const CameraPose& a, const CameraPose& b);
CameraPose invert(const CameraPose& a);

// Nearest rotation in the Frobenius sense.
Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m);

// Angle of a rotation matrix in radians, in [0, pi].
double rotation_angle(const Eigen::Matrix3d& r);

// Left-composes the increment exp([omega]) on the pose:
// R <- exp(omega) R, t <- exp(omega) t + v, where increment = (omega, v).
CameraPose apply_increment(const CameraPose& pose, const Eigen::Matrix<double, 6, 1>& increment);

Eigen::Matrix3d skew(const Eigen::Vector3d& w);

}  // namespace viewalign
