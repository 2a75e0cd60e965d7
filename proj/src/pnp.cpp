#include "viewalign/pnp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "viewalign/errors.hpp"

namespace viewalign {

namespace {

// Ratios of principal standard deviations used to classify the point set.
constexpr double kCollinearRatio = 1e-6;   // second / first
constexpr double kPlanarRatio = 1e-6;      // third / first: only the planar variant
constexpr double kNearPlanarRatio = 0.05;  // third / first: try both variants

constexpr int kBetaIterations = 10;

int beta_index(int a, int b) {
  if (a > b) std::swap(a, b);
  return b * (b + 1) / 2 + a;
}

struct PrincipalFrame {
  Eigen::Vector3d centroid;
  Eigen::Matrix3d axes;    // columns sorted by decreasing spread
  Eigen::Vector3d spread;  // standard deviation along each axis
};

PrincipalFrame principal_frame(const std::vector<Eigen::Vector3d>& pw) {
  PrincipalFrame f;
  f.centroid.setZero();
  for (const auto& p : pw) f.centroid += p;
  f.centroid /= static_cast<double>(pw.size());
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& p : pw) scatter += (p - f.centroid) * (p - f.centroid).transpose();
  scatter /= static_cast<double>(pw.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
  for (int j = 0; j < 3; ++j) {
    f.axes.col(j) = eig.eigenvectors().col(2 - j);
    f.spread[j] = std::sqrt(std::max(eig.eigenvalues()[2 - j], 0.0));
  }
  return f;
}

// Candidates are ranked by the number of points they put behind the camera,
// then by the summed squared reprojection error of the remaining points.
struct Candidate {
  CameraPose pose;
  int behind = std::numeric_limits<int>::max();
  double cost = std::numeric_limits<double>::infinity();

  bool valid() const { return std::isfinite(cost); }
  bool better_than(const Candidate& o) const {
    return behind < o.behind || (behind == o.behind && cost < o.cost);
  }
};

void score(Candidate& cand, std::span<const Correspondence> corrs, const CameraIntrinsics& intr) {
  cand.behind = 0;
  cand.cost = 0.0;
  for (const auto& c : corrs) {
    const double e = reprojection_error(intr, cand.pose, c);
    if (is_unprojectable(e)) {
      ++cand.behind;
    } else {
      cand.cost += e * e;
    }
  }
}

CameraPose absolute_orientation(const std::vector<Eigen::Vector3d>& pw,
                                const std::vector<Eigen::Vector3d>& pc) {
  Eigen::Vector3d mw = Eigen::Vector3d::Zero();
  Eigen::Vector3d mc = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < pw.size(); ++i) {
    mw += pw[i];
    mc += pc[i];
  }
  mw /= static_cast<double>(pw.size());
  mc /= static_cast<double>(pc.size());
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < pw.size(); ++i) h += (pc[i] - mc) * (pw[i] - mw).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  CameraPose pose;
  pose.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  pose.translation = mc - pose.rotation * mw;
  return pose;
}

// EPnP with `C` control points (4 general, 3 planar).
class EpnpSolver {
 public:
  EpnpSolver(std::span<const Correspondence> corrs, const CameraIntrinsics& intr,
             const PrincipalFrame& frame, int control_count)
      : corrs_(corrs), intr_(intr), c_(control_count), n_(static_cast<int>(corrs.size())) {
    for (const auto& c : corrs) world_.push_back(c.scene_point.vec());
    control_.push_back(frame.centroid);
    for (int j = 0; j < c_ - 1; ++j) control_.push_back(frame.centroid + frame.spread[j] * frame.axes.col(j));

    alphas_.resize(n_, c_);
    for (int i = 0; i < n_; ++i) {
      const Eigen::Vector3d d = world_[i] - frame.centroid;
      double rest = 1.0;
      for (int j = 1; j < c_; ++j) {
        alphas_(i, j) = frame.axes.col(j - 1).dot(d) / frame.spread[j - 1];
        rest -= alphas_(i, j);
      }
      alphas_(i, 0) = rest;
    }
  }

  Candidate solve() {
    const int dims = 3 * c_;
    Eigen::MatrixXd mtm = Eigen::MatrixXd::Zero(dims, dims);
    Eigen::VectorXd row_u(dims);
    Eigen::VectorXd row_v(dims);
    for (int i = 0; i < n_; ++i) {
      const double x = (corrs_[i].reference_pixel.u - intr_.cx) / intr_.fx;
      const double y = (corrs_[i].reference_pixel.v - intr_.cy) / intr_.fy;
      for (int j = 0; j < c_; ++j) {
        const double a = alphas_(i, j);
        row_u.segment<3>(3 * j) << a, 0.0, -a * x;
        row_v.segment<3>(3 * j) << 0.0, a, -a * y;
      }
      mtm.selfadjointView<Eigen::Lower>().rankUpdate(row_u);
      mtm.selfadjointView<Eigen::Lower>().rankUpdate(row_v);
    }
    mtm = mtm.selfadjointView<Eigen::Lower>();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(mtm);
    null_ = eig.eigenvectors().leftCols(c_);

    build_distance_system();

    Candidate best;
    const auto consider = [&](Eigen::VectorXd betas) {
      gauss_newton(betas);
      Candidate cand = pose_from_betas(betas);
      if (cand.valid() && cand.better_than(best)) best = cand;
    };
    consider(approx_first_column());
    consider(approx_two());
    if (c_ == 4) consider(approx_three());
    return best;
  }

 private:
  void build_distance_system() {
    for (int a = 0; a < c_; ++a) {
      for (int b = a + 1; b < c_; ++b) pairs_.emplace_back(a, b);
    }
    const int nb = c_ * (c_ + 1) / 2;
    l_.resize(static_cast<Eigen::Index>(pairs_.size()), nb);
    rho_.resize(static_cast<Eigen::Index>(pairs_.size()));
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      const auto [ca, cb] = pairs_[p];
      std::vector<Eigen::Vector3d> dv(c_);
      for (int k = 0; k < c_; ++k) {
        dv[k] = null_.col(k).segment<3>(3 * ca) - null_.col(k).segment<3>(3 * cb);
      }
      for (int b = 0; b < c_; ++b) {
        for (int a = 0; a <= b; ++a) {
          l_(p, beta_index(a, b)) = (a == b ? 1.0 : 2.0) * dv[a].dot(dv[b]);
        }
      }
      rho_[p] = (control_[ca] - control_[cb]).squaredNorm();
    }
  }

  Eigen::VectorXd solve_columns(const std::vector<int>& cols) const {
    Eigen::MatrixXd a(l_.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) a.col(j) = l_.col(cols[j]);
    return a.completeOrthogonalDecomposition().solve(rho_);
  }

  // Unknowns B11, B12, ..., B1N.
  Eigen::VectorXd approx_first_column() const {
    std::vector<int> cols;
    for (int b = 0; b < c_; ++b) cols.push_back(beta_index(0, b));
    const Eigen::VectorXd x = solve_columns(cols);
    Eigen::VectorXd betas = Eigen::VectorXd::Zero(c_);
    const double sign = x[0] < 0.0 ? -1.0 : 1.0;
    betas[0] = std::sqrt(std::abs(x[0]));
    if (betas[0] > 0.0) {
      for (int b = 1; b < c_; ++b) betas[b] = sign * x[b] / betas[0];
    }
    return betas;
  }

  // Unknowns B11, B12, B22.
  Eigen::VectorXd approx_two() const {
    const Eigen::VectorXd x = solve_columns({beta_index(0, 0), beta_index(0, 1), beta_index(1, 1)});
    Eigen::VectorXd betas = Eigen::VectorXd::Zero(c_);
    if (x[0] < 0.0) {
      betas[0] = std::sqrt(-x[0]);
      betas[1] = x[2] < 0.0 ? std::sqrt(-x[2]) : 0.0;
    } else {
      betas[0] = std::sqrt(x[0]);
      betas[1] = x[2] > 0.0 ? std::sqrt(x[2]) : 0.0;
    }
    if (x[1] < 0.0) betas[0] = -betas[0];
    return betas;
  }

  // Unknowns B11, B12, B22, B13, B23.
  Eigen::VectorXd approx_three() const {
    const Eigen::VectorXd x = solve_columns({0, 1, 2, 3, 4});
    Eigen::VectorXd betas = Eigen::VectorXd::Zero(c_);
    if (x[0] < 0.0) {
      betas[0] = std::sqrt(-x[0]);
      betas[1] = x[2] < 0.0 ? std::sqrt(-x[2]) : 0.0;
    } else {
      betas[0] = std::sqrt(x[0]);
      betas[1] = x[2] > 0.0 ? std::sqrt(x[2]) : 0.0;
    }
    if (x[1] < 0.0) betas[0] = -betas[0];
    betas[2] = betas[0] != 0.0 ? x[3] / betas[0] : 0.0;
    return betas;
  }

  // Minimizes the control-point distance residuals over the betas.
  void gauss_newton(Eigen::VectorXd& betas) const {
    const auto rows = l_.rows();
    Eigen::MatrixXd jac(rows, c_);
    Eigen::VectorXd res(rows);
    for (int iter = 0; iter < kBetaIterations; ++iter) {
      for (Eigen::Index p = 0; p < rows; ++p) {
        double model = 0.0;
        for (int b = 0; b < c_; ++b) {
          for (int a = 0; a <= b; ++a) model += l_(p, beta_index(a, b)) * betas[a] * betas[b];
        }
        res[p] = rho_[p] - model;
        for (int k = 0; k < c_; ++k) {
          double d = 0.0;
          for (int o = 0; o < c_; ++o) {
            d += (o == k ? 2.0 : 1.0) * l_(p, beta_index(k, o)) * betas[o];
          }
          jac(p, k) = d;
        }
      }
      const Eigen::VectorXd step = jac.completeOrthogonalDecomposition().solve(res);
      if (!step.allFinite()) break;
      betas += step;
      if (step.norm() < 1e-14 * std::max(1.0, betas.norm())) break;
    }
  }

  Candidate pose_from_betas(const Eigen::VectorXd& betas) const {
    Eigen::VectorXd ccs = Eigen::VectorXd::Zero(3 * c_);
    for (int k = 0; k < c_; ++k) ccs += betas[k] * null_.col(k);
    std::vector<Eigen::Vector3d> pc(n_, Eigen::Vector3d::Zero());
    double depth_sum = 0.0;
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < c_; ++j) pc[i] += alphas_(i, j) * ccs.segment<3>(3 * j);
      depth_sum += pc[i].z();
    }
    if (depth_sum < 0.0) {
      for (auto& p : pc) p = -p;
    }
    Candidate cand;
    if (!ccs.allFinite()) return cand;
    cand.pose = absolute_orientation(world_, pc);
    if (!cand.pose.rotation.allFinite() || !cand.pose.translation.allFinite()) return cand;
    score(cand, corrs_, intr_);
    return cand;
  }

  std::span<const Correspondence> corrs_;
  const CameraIntrinsics& intr_;
  int c_;
  int n_;
  std::vector<Eigen::Vector3d> world_;
  std::vector<Eigen::Vector3d> control_;
  Eigen::MatrixXd alphas_;
  Eigen::MatrixXd null_;
  std::vector<std::pair<int, int>> pairs_;
  Eigen::MatrixXd l_;
  Eigen::VectorXd rho_;
};

}  // namespace

PnPSolution evaluate_pose(const CameraPose& pose, std::span<const Correspondence> corrs,
                          const CameraIntrinsics& intr) {
  PnPSolution sol;
  sol.pose = pose;
  sol.per_point_error.reserve(corrs.size());
  double sum = 0.0;
  int finite = 0;
  for (const auto& c : corrs) {
    const double e = reprojection_error(intr, pose, c);
    sol.per_point_error.push_back(e);
    if (!is_unprojectable(e)) {
      sum += e;
      ++finite;
    }
  }
  sol.mean_error = finite > 0 ? sum / finite : kUnprojectable;
  return sol;
}

PnPSolution solve_epnp(std::span<const Correspondence> corrs, const CameraIntrinsics& intr) {
  if (corrs.size() < 4) {
    throw Error(ErrorCode::kTooFewCorrespondences,
                std::to_string(corrs.size()) + " correspondences, EPnP needs 4");
  }
  std::vector<Eigen::Vector3d> pw;
  pw.reserve(corrs.size());
  for (const auto& c : corrs) pw.push_back(c.scene_point.vec());
  const PrincipalFrame frame = principal_frame(pw);
  if (!(frame.spread[0] > 0.0) || frame.spread[1] < kCollinearRatio * frame.spread[0]) {
    throw Error(ErrorCode::kDegenerateConfiguration, "scene points are collinear");
  }
  const double flatness = frame.spread[2] / frame.spread[0];

  Candidate best;
  if (flatness >= kPlanarRatio) {
    best = EpnpSolver(corrs, intr, frame, 4).solve();
  }
  if (flatness < kNearPlanarRatio) {
    Candidate planar = EpnpSolver(corrs, intr, frame, 3).solve();
    if (planar.valid() && planar.better_than(best)) best = planar;
  }
  if (!best.valid()) {
    throw Error(ErrorCode::kDegenerateConfiguration, "no finite EPnP candidate");
  }
  return evaluate_pose(best.pose, corrs, intr);
}

Eigen::Vector2d reprojection_residual(const CameraIntrinsics& intr, const CameraPose& pose,
                                      const Correspondence& c) {
  const Eigen::Vector3d q = pose.apply(c.scene_point.vec());
  return {intr.fx * q.x() / q.z() + intr.cx - c.reference_pixel.u,
          intr.fy * q.y() / q.z() + intr.cy - c.reference_pixel.v};
}

Eigen::Matrix<double, 2, 6> reprojection_jacobian(const CameraIntrinsics& intr,
                                                  const CameraPose& pose, const Correspondence& c) {
  const Eigen::Vector3d q = pose.apply(c.scene_point.vec());
  const double iz = 1.0 / q.z();
  Eigen::Matrix<double, 2, 3> dproj;
  dproj << intr.fx * iz, 0.0, -intr.fx * q.x() * iz * iz, 0.0, intr.fy * iz,
      -intr.fy * q.y() * iz * iz;
  Eigen::Matrix<double, 3, 6> dq;
  dq.leftCols<3>() = -skew(q);
  dq.rightCols<3>().setIdentity();
  return dproj * dq;
}

namespace {

// Weighted cost over `active` points; returns +inf if an active point falls
// behind the camera.
double weighted_cost(const CameraPose& pose, std::span<const Correspondence> corrs,
                     std::span<const double> weights, const std::vector<char>& active,
                     const CameraIntrinsics& intr) {
  double cost = 0.0;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    if (!active[i]) continue;
    if (!(pose.apply(corrs[i].scene_point.vec()).z() > 0.0)) {
      return std::numeric_limits<double>::infinity();
    }
    cost += weights[i] * reprojection_residual(intr, pose, corrs[i]).squaredNorm();
  }
  return cost;
}

std::vector<char> active_set(const CameraPose& pose, std::span<const Correspondence> corrs,
                             std::span<const double> weights) {
  std::vector<char> active(corrs.size(), 0);
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    active[i] = weights[i] > 0.0 && pose.apply(corrs[i].scene_point.vec()).z() > 0.0;
  }
  return active;
}

}  // namespace

PnPSolution refine_weighted(const CameraPose& init, std::span<const Correspondence> corrs,
                            std::span<const double> weights, const CameraIntrinsics& intr,
                            const RefineOptions& options) {
  if (weights.size() != corrs.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "one weight per correspondence required");
  }
  int positive = 0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(ErrorCode::kInvalidArgument, "weights must be finite and non-negative");
    }
    positive += w > 0.0;
  }
  if (positive < 4) {
    throw Error(ErrorCode::kInsufficientSupport,
                std::to_string(positive) + " positive weights, need 4");
  }
  if (!init.is_valid(1e-6)) throw Error(ErrorCode::kInvalidArgument, "invalid initial pose");

  CameraPose pose = init;
  double lambda = options.initial_damping;
  int iter = 0;
  bool converged = false;
  std::vector<char> active = active_set(pose, corrs, weights);
  double cost = weighted_cost(pose, corrs, weights, active, intr);

  for (; iter < options.max_iterations; ++iter) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (std::size_t i = 0; i < corrs.size(); ++i) {
      if (!active[i]) continue;
      const auto j = reprojection_jacobian(intr, pose, corrs[i]);
      const Eigen::Vector2d r = reprojection_residual(intr, pose, corrs[i]);
      h.noalias() += weights[i] * j.transpose() * j;
      g.noalias() += weights[i] * j.transpose() * r;
    }

    bool accepted = false;
    Eigen::Matrix<double, 6, 1> step;
    while (lambda < 1e16) {
      Eigen::Matrix<double, 6, 6> damped = h;
      damped.diagonal() += lambda * (h.diagonal().array() + 1e-12).matrix();
      step = damped.ldlt().solve(-g);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      if (step.norm() < options.step_tolerance) break;
      const CameraPose candidate = apply_increment(pose, step);
      const double candidate_cost = weighted_cost(candidate, corrs, weights, active, intr);
      if (candidate_cost < cost) {
        pose = candidate;
        cost = candidate_cost;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted || step.norm() < options.step_tolerance) {
      converged = true;
      ++iter;
      break;
    }
    // Points that moved behind the camera drop out for the next iteration;
    // the cost is re-based on the new active set.
    const std::vector<char> next_active = active_set(pose, corrs, weights);
    if (next_active != active) {
      active = next_active;
      cost = weighted_cost(pose, corrs, weights, active, intr);
    }
  }

  PnPSolution sol = evaluate_pose(pose, corrs, intr);
  sol.weighted_cost = cost;
  sol.iterations = iter;
  sol.converged = converged;
  return sol;
}

}  // namespace viewalign
