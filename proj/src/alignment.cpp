#include "viewalign/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "viewalign/errors.hpp"

namespace viewalign {

namespace {

std::string fixed(double v, int digits = 6) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

PixelPoint ReferenceSpec::to_capture(const PixelPoint& ref_px) const {
  const double sx = static_cast<double>(scaled_width) / ref_width;
  const double sy = static_cast<double>(scaled_height) / ref_height;
  return {ref_px.u * sx + pad_left, ref_px.v * sy + pad_top};
}

bool ReferenceSpec::inside_scaled(const PixelPoint& p) const {
  return p.u >= pad_left && p.u < pad_left + scaled_width && p.v >= pad_top &&
         p.v < pad_top + scaled_height;
}

ReferenceSpec fit_reference(ImageDims reference, ImageDims capture) {
  if (reference.width < 1 || reference.height < 1 || capture.width < 1 || capture.height < 1) {
    throw Error(ErrorCode::kInvalidArgument, "image dimensions must be at least 1");
  }
  ReferenceSpec s;
  s.ref_width = reference.width;
  s.ref_height = reference.height;
  s.scale = std::min(static_cast<double>(capture.width) / reference.width,
                     static_cast<double>(capture.height) / reference.height);
  const auto scaled = [&](int ref, int cap) {
    return std::clamp(static_cast<int>(std::lround(ref * s.scale)), 1, cap);
  };
  s.scaled_width = scaled(reference.width, capture.width);
  s.scaled_height = scaled(reference.height, capture.height);
  const int pad_w = capture.width - s.scaled_width;
  const int pad_h = capture.height - s.scaled_height;
  s.pad_left = pad_w / 2;
  s.pad_right = pad_w - s.pad_left;
  s.pad_top = pad_h / 2;
  s.pad_bottom = pad_h - s.pad_top;
  return s;
}

CropRect crop_captured(ImageDims capture, const ReferenceSpec& spec) {
  if (spec.pad_left + spec.scaled_width + spec.pad_right != capture.width ||
      spec.pad_top + spec.scaled_height + spec.pad_bottom != capture.height) {
    throw Error(ErrorCode::kInvalidArgument, "reference spec does not match the capture size");
  }
  return {spec.pad_left, spec.pad_top, spec.scaled_width, spec.scaled_height};
}

void WorkspaceLimits::validate() const {
  if (!(min_corner.array() < max_corner.array()).all()) {
    throw Error(ErrorCode::kInvalidArgument, "workspace min corner must be below max corner");
  }
  if (!(max_rotation_step > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "max_rotation_step must be positive");
  }
}

bool WorkspaceLimits::contains(const Eigen::Vector3d& p) const {
  return (p.array() >= min_corner.array()).all() && (p.array() <= max_corner.array()).all();
}

void AlignmentState::record(double mean_distance) {
  mean_distance_history.push_back(mean_distance);
  best_so_far = std::min(best_so_far, mean_distance);
}

bool should_terminate(const AlignmentState& state, int max_steps) {
  const auto& h = state.mean_distance_history;
  if (h.empty()) throw Error(ErrorCode::kInvalidArgument, "empty distance history");
  if (state.step_index >= max_steps) return true;
  if (h.size() < 3) return false;
  const double best_before = *std::min_element(h.begin(), h.end() - 2);
  return h[h.size() - 2] >= best_before && h.back() >= best_before;
}

EstimatorSpec EstimatorSpec::parse(const std::string& text) {
  EstimatorSpec spec;
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  if (name == "none") {
    if (colon != std::string::npos) throw Error(ErrorCode::kInvalidArgument, "'none' takes no value");
    spec.kind = EstimatorKind::kNone;
    spec.threshold = 0.0;
    return spec;
  }
  if (name == "ransac") {
    spec.kind = EstimatorKind::kRansac;
    spec.threshold = 10.0;
  } else if (name == "magsac") {
    spec.kind = EstimatorKind::kMagsac;
    spec.threshold = 50.0;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown estimator '" + text + "'");
  }
  if (colon != std::string::npos) {
    const std::string value = text.substr(colon + 1);
    std::size_t used = 0;
    try {
      spec.threshold = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != value.size() || !(spec.threshold > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "bad estimator threshold in '" + text + "'");
    }
  }
  return spec;
}

std::string EstimatorSpec::to_string() const {
  char buf[64];
  switch (kind) {
    case EstimatorKind::kNone: return "none";
    case EstimatorKind::kRansac: std::snprintf(buf, sizeof buf, "ransac:%g", threshold); return buf;
    case EstimatorKind::kMagsac: std::snprintf(buf, sizeof buf, "magsac:%g", threshold); return buf;
  }
  return "unknown";
}

void AlignmentConfig::validate() const {
  selection.validate();
  workspace.validate();
  if (max_steps < 1) throw Error(ErrorCode::kInvalidArgument, "max_steps must be >= 1");
  if (estimator.kind != EstimatorKind::kNone && !(estimator.threshold > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "estimator threshold must be positive");
  }
}

const char* to_string(StepAction action) {
  return action == StepAction::kMove ? "move" : "hold";
}

const char* to_string(HoldReason reason) {
  switch (reason) {
    case HoldReason::kNone: return "";
    case HoldReason::kPnPFailure: return "PnPFailure";
    case HoldReason::kOutsideWorkspace: return "OutsideWorkspace";
    case HoldReason::kTooFewCorrespondences: return "TooFewCorrespondences";
  }
  return "";
}

ReferenceView ReferenceView::fitted(DescriptorGrid grid, const CameraIntrinsics& capture) {
  ReferenceView view;
  view.spec = fit_reference({grid.image_width, grid.image_height}, {capture.width, capture.height});
  view.grid = std::move(grid);
  return view;
}

RobustResult estimate_pose(std::span<const Correspondence> corrs, const CameraIntrinsics& intr,
                           const AlignmentConfig& cfg, std::uint64_t seed) {
  switch (cfg.estimator.kind) {
    case EstimatorKind::kRansac: {
      RansacConfig rc;
      rc.inlier_threshold = cfg.estimator.threshold;
      rc.max_iters = cfg.max_iters;
      rc.seed = seed;
      return ransac_pnp(corrs, intr, rc);
    }
    case EstimatorKind::kMagsac: {
      MagsacConfig mc;
      mc.max_threshold = cfg.estimator.threshold;
      mc.partitions = cfg.magsac_partitions;
      mc.iters_irls = cfg.magsac_irls_iters;
      mc.max_iters = cfg.max_iters;
      mc.seed = seed;
      return magsac_pnp(corrs, intr, mc);
    }
    case EstimatorKind::kNone:
      return plain_pnp(corrs, intr);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown estimator");
}

StepOutcome alignment_step(const CapturedView& view, const ReferenceView& reference,
                           const CameraIntrinsics& intr, const AlignmentConfig& cfg,
                           int step_index) {
  StepOutcome out;
  std::vector<MatchPair> pairs = mutual_nearest_matches(view.grid, reference.grid);
  for (MatchPair& p : pairs) p.pixel_b = reference.spec.to_capture(p.pixel_b);
  out.match_count = static_cast<int>(pairs.size());
  if (pairs.size() < 4) {
    out.reason = HoldReason::kTooFewCorrespondences;
    return out;
  }

  SelectionConfig sel = cfg.selection;
  sel.kmeans_seed += static_cast<std::uint64_t>(step_index);
  const std::vector<MatchPair> selected = select_correspondences(pairs, sel);

  std::vector<Correspondence> corrs;
  try {
    corrs = attach_depth(selected, view.depth, intr);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kInsufficientCorrespondences) throw;
    out.reason = HoldReason::kTooFewCorrespondences;
    return out;
  }
  out.correspondence_count = static_cast<int>(corrs.size());
  double sum = 0.0;
  for (const auto& c : corrs) sum += (c.current_pixel.vec() - c.reference_pixel.vec()).norm();
  out.mean_pixel_distance = sum / static_cast<double>(corrs.size());

  RobustResult robust;
  try {
    robust = estimate_pose(corrs, intr, cfg, cfg.seed + static_cast<std::uint64_t>(step_index));
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::kNoSolution:
      case ErrorCode::kDegenerateConfiguration:
      case ErrorCode::kInsufficientSupport:
      case ErrorCode::kTooFewCorrespondences:
        out.reason = HoldReason::kPnPFailure;
        return out;
      default:
        throw;
    }
  }
  out.inlier_count = robust.inlier_count();

  // PnP yields reference_from_current; the camera moves by its inverse.
  CameraPose delta = invert(robust.solution.pose);
  const double angle = rotation_angle(delta.rotation);
  if (angle > cfg.workspace.max_rotation_step) {
    const Eigen::AngleAxisd aa(delta.rotation);
    delta.rotation = Eigen::AngleAxisd(cfg.workspace.max_rotation_step, aa.axis()).toRotationMatrix();
  }
  const CameraPose target = compose(view.pose_world, delta);
  if (!cfg.workspace.contains(target.translation)) {
    out.reason = HoldReason::kOutsideWorkspace;
    return out;
  }
  out.action = StepAction::kMove;
  out.delta = delta;
  return out;
}

AlignmentReport run_alignment(RgbdCamera& camera, const ReferenceView& reference,
                              const CameraIntrinsics& intr, const AlignmentConfig& cfg) {
  cfg.validate();
  intr.validate();
  AlignmentReport report;
  report.reference = reference.spec;
  report.config_summary = describe(cfg);

  AlignmentState state;
  for (;;) {
    const CapturedView view = camera.capture();
    state.camera_pose_world = view.pose_world;
    const StepOutcome outcome = alignment_step(view, reference, intr, cfg, state.step_index);

    StepRecord rec;
    rec.step = state.step_index + 1;
    rec.outcome = outcome;
    rec.pose_before = state.camera_pose_world;
    if (outcome.action == StepAction::kMove) {
      camera.move(outcome.delta);
      state.camera_pose_world = compose(state.camera_pose_world, outcome.delta);
    }
    rec.pose_after = state.camera_pose_world;
    report.steps.push_back(rec);

    state.record(outcome.mean_pixel_distance);
    ++state.step_index;
    if (cfg.stop_on_stall ? should_terminate(state, cfg.max_steps) : state.step_index >= cfg.max_steps) {
      break;
    }
  }
  report.mean_distance_history = state.mean_distance_history;
  report.final_pose_world = state.camera_pose_world;
  report.crop = crop_captured({intr.width, intr.height}, reference.spec);
  return report;
}

std::string describe(const AlignmentConfig& cfg) {
  std::ostringstream os;
  os << "estimator=" << cfg.estimator.to_string() << " k=" << cfg.selection.k
     << " kmeans_iters=" << cfg.selection.kmeans_max_iters
     << " kmeans_seed=" << cfg.selection.kmeans_seed << " max_steps=" << cfg.max_steps
     << " stop_on_stall=" << (cfg.stop_on_stall ? "true" : "false")
     << " seed=" << cfg.seed << " max_iters=" << cfg.max_iters
     << " partitions=" << cfg.magsac_partitions << " irls=" << cfg.magsac_irls_iters
     << " max_rotation_step=" << fixed(cfg.workspace.max_rotation_step) << " workspace=["
     << fixed(cfg.workspace.min_corner.x(), 3) << "," << fixed(cfg.workspace.min_corner.y(), 3)
     << "," << fixed(cfg.workspace.min_corner.z(), 3) << "]-["
     << fixed(cfg.workspace.max_corner.x(), 3) << "," << fixed(cfg.workspace.max_corner.y(), 3)
     << "," << fixed(cfg.workspace.max_corner.z(), 3) << "]";
  return os.str();
}

void write_report_records(std::ostream& out, const AlignmentReport& report) {
  out << "report steps=" << report.steps.size() << " ref=" << report.reference.ref_width << "x"
      << report.reference.ref_height << " crop=" << report.crop.x << "," << report.crop.y << ","
      << report.crop.width << "x" << report.crop.height << "\n";
  for (const StepRecord& r : report.steps) {
    const Eigen::Vector3d t = r.pose_after.translation;
    out << "step=" << r.step << " action=" << to_string(r.outcome.action)
        << " reason=" << (r.outcome.reason == HoldReason::kNone ? "-" : to_string(r.outcome.reason))
        << " matches=" << r.outcome.match_count
        << " correspondences=" << r.outcome.correspondence_count
        << " inliers=" << r.outcome.inlier_count
        << " mean_px_dist=" << fixed(r.outcome.mean_pixel_distance)
        << " position=" << fixed(t.x()) << "," << fixed(t.y()) << "," << fixed(t.z()) << "\n";
  }
  out << "end config=\"" << report.config_summary << "\"\n";
}

void write_report_csv(std::ostream& out, const AlignmentReport& report) {
  out << "step,mean_px_dist,inliers,action,reason\n";
  for (const StepRecord& r : report.steps) {
    out << r.step << "," << fixed(r.outcome.mean_pixel_distance) << "," << r.outcome.inlier_count
        << "," << to_string(r.outcome.action) << "," << to_string(r.outcome.reason) << "\n";
  }
  out << "# config: " << report.config_summary << "\n";
}

}  // namespace viewalign
