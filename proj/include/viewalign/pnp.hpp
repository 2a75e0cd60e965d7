#pragma once

#include <Eigen/Core>

#include <span>
#include <vector>

#include "viewalign/geometry.hpp"

namespace viewalign {

struct PnPSolution {
  CameraPose pose;
  std::vector<double> per_point_error;  // kUnprojectable for points behind the camera
  double mean_error = 0.0;              // over the finite entries
  double weighted_cost = 0.0;           // sum w_i * e_i^2 (refinement only)
  int iterations = 0;
  bool converged = true;  // refinement reached the step-norm tolerance
};

// Fills per_point_error and mean_error for `pose`.
PnPSolution evaluate_pose(const CameraPose& pose, std::span<const Correspondence> corrs,
                          const CameraIntrinsics& intr);

// Closed-form EPnP. Non-planar point sets use four control points (centroid
// plus principal directions); near-planar sets also try the three control
// point variant and the candidate with the lowest reprojection error wins.
PnPSolution solve_epnp(std::span<const Correspondence> corrs, const CameraIntrinsics& intr);

struct RefineOptions {
  int max_iterations = 50;
  double step_tolerance = 1e-10;
  double initial_damping = 1e-3;
};

// Levenberg-Marquardt on sum_i w_i * e_i^2 over a left-composed 6-vector
// pose increment (axis-angle, translation). Points behind the camera carry
// zero weight for the iteration in which they are behind.
PnPSolution refine_weighted(const CameraPose& init, std::span<const Correspondence> corrs,
                            std::span<const double> weights, const CameraIntrinsics& intr,
                            const RefineOptions& options = {});

// Residual (projection - reference pixel) and its derivative with respect to
// the increment used by refine_weighted, evaluated at zero increment.
Eigen::Vector2d reprojection_residual(const CameraIntrinsics& intr, const CameraPose& pose,
                                      const Correspondence& c);
Eigen::Matrix<double, 2, 6> reprojection_jacobian(const CameraIntrinsics& intr,
                                                  const CameraPose& pose, const Correspondence& c);

}  // namespace viewalign
