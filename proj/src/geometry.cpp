#include "viewalign/geometry.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <string>

#include "viewalign/errors.hpp"

namespace viewalign {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "focal lengths must be positive");
  }
  if (width < 1 || height < 1) {
    throw Error(ErrorCode::kInvalidArgument, "sensor resolution must be positive");
  }
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw Error(ErrorCode::kInvalidArgument, "principal point outside the sensor");
  }
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

CameraPose CameraPose::from_axis_angle(const Eigen::Vector3d& axis_angle,
                                       const Eigen::Vector3d& translation) {
  CameraPose pose;
  const double angle = axis_angle.norm();
  if (angle > 0.0) {
    pose.rotation = Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
  }
  pose.translation = translation;
  return pose;
}

bool CameraPose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  return (gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(rotation.determinant() - 1.0) <= tol;
}

PixelPoint project(const CameraIntrinsics& intr, const CameraPose& pose, const ScenePoint& p) {
  const Eigen::Vector3d q = pose.apply(p.vec());
  if (!(q.z() > 0.0)) {
    throw Error(ErrorCode::kBehindCamera, "transformed depth " + std::to_string(q.z()));
  }
  return {intr.fx * q.x() / q.z() + intr.cx, intr.fy * q.y() / q.z() + intr.cy};
}

ScenePoint back_project(const CameraIntrinsics& intr, const PixelPoint& px, double depth) {
  if (!is_valid_depth(depth)) {
    throw Error(ErrorCode::kInvalidDepth, "depth " + std::to_string(depth));
  }
  return {(px.u - intr.cx) * depth / intr.fx, (px.v - intr.cy) * depth / intr.fy, depth};
}

double reprojection_error(const CameraIntrinsics& intr, const CameraPose& pose,
                          const Correspondence& c) {
  const Eigen::Vector3d q = pose.apply(c.scene_point.vec());
  if (!(q.z() > 0.0)) return kUnprojectable;
  const double du = c.reference_pixel.u - (intr.fx * q.x() / q.z() + intr.cx);
  const double dv = c.reference_pixel.v - (intr.fy * q.y() / q.z() + intr.cy);
  return std::hypot(du, dv);
}

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

CameraPose compose(const CameraPose& a, const CameraPose& b) {
  CameraPose out;
  out.rotation = nearest_rotation(a.rotation * b.rotation);
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

CameraPose invert(const CameraPose& a) {
  CameraPose out;
  out.rotation = a.rotation.transpose();
  out.translation = -(out.rotation * a.translation);
  return out;
}

double rotation_angle(const Eigen::Matrix3d& r) {
  // atan2 form stays accurate near 0 and pi, unlike acos of the trace.
  const Eigen::Vector3d axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (r.trace() - 1.0));
}

Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d s;
  s << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return s;
}

CameraPose apply_increment(const CameraPose& pose, const Eigen::Matrix<double, 6, 1>& increment) {
  const CameraPose step = CameraPose::from_axis_angle(increment.head<3>(), increment.tail<3>());
  return compose(step, pose);
}

}  // namespace viewalign
