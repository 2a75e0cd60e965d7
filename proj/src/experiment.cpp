#include "viewalign/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <json.hpp>
#include <ostream>
#include <thread>

#include "viewalign/errors.hpp"

namespace viewalign::sim {

namespace {

constexpr double kDeg = M_PI / 180.0;

SceneProfile profile(std::string name, std::uint64_t seed, int landmarks, int distractors,
                     double noise, double outliers, double descriptor_noise, double angle,
                     double distance, ImageDims ref = {}) {
  SceneProfile p;
  p.name = std::move(name);
  p.seed = seed;
  p.n_landmarks = landmarks;
  p.distractors = distractors;
  p.corruption.pixel_noise_sigma = noise;
  p.corruption.outlier_rate = outliers;
  p.corruption.descriptor_noise_deg = descriptor_noise;
  p.corruption.seed = seed;
  p.start_angle_deg = angle;
  p.start_distance = distance;
  p.reference_dims = ref;
  return p;
}

std::string num(double v, int digits = 6) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

const std::vector<SceneProfile>& builtin_profiles() {
  static const std::vector<SceneProfile> profiles = {
      profile("mug_book", 101, 40, 0, 1.0, 0.2, 0.0, 10.0, 0.30),
      profile("mug_book_distract", 102, 40, 4, 1.0, 0.2, 1.5, 10.0, 0.30),
      profile("plate_utensils", 103, 48, 0, 1.5, 0.3, 0.0, 8.0, 0.25, {240, 240}),
      profile("plate_utensils_distract", 104, 48, 6, 1.5, 0.3, 1.5, 8.0, 0.25, {240, 240}),
      profile("human_phone", 105, 32, 0, 2.0, 0.35, 0.0, 12.0, 0.30, {200, 300}),
      profile("confident_human", 106, 32, 2, 1.0, 0.25, 1.0, 10.0, 0.35, {200, 300}),
  };
  return profiles;
}

SceneProfile resolve_profile(const std::string& name_or_seed) {
  for (const SceneProfile& p : builtin_profiles()) {
    if (p.name == name_or_seed) return p;
  }
  if (!name_or_seed.empty() &&
      std::all_of(name_or_seed.begin(), name_or_seed.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    std::uint64_t seed = 0;
    try {
      seed = std::stoull(name_or_seed);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "scene seed out of range: " + name_or_seed);
    }
    return profile(name_or_seed, seed, 40, 0, 1.0, 0.2, 0.0, 10.0, 0.30);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown scene '" + name_or_seed + "'");
}

int SimRunResult::solver_failures() const {
  int n = 0;
  for (const SimStep& s : steps) {
    if (s.outcome.reason == HoldReason::kPnPFailure) {
      ++n;
    } else if (s.outcome.action == StepAction::kMove && s.true_error_before > kConvergedPixels &&
               s.true_error_after >= s.true_error_before) {
      ++n;
    }
  }
  return n;
}

SimRunResult run_sim_alignment(const SimRunConfig& cfg) {
  const CameraIntrinsics intr = default_intrinsics();
  const SceneProfile& sp = cfg.scene;
  const SyntheticScene scene = make_scene(sp.seed, sp.n_landmarks, sp.distractors, intr);
  const ImageDims ref_dims = sp.reference_dims.width > 0 && sp.reference_dims.height > 0
                                 ? sp.reference_dims
                                 : ImageDims{intr.width, intr.height};
  const ReferenceView reference = render_reference(scene, intr, ref_dims);
  const CameraPose start =
      perturbed_pose(scene.goal_pose_world, sp.start_angle_deg * kDeg, sp.start_distance, sp.seed);

  CorruptionConfig corruption = sp.corruption;
  corruption.seed = sp.corruption.seed * 1000003ULL + cfg.repeat * 7919ULL;
  AlignmentConfig acfg = cfg.alignment;
  acfg.seed += cfg.repeat * 104729ULL;
  acfg.selection.kmeans_seed += cfg.repeat * 104729ULL;

  SimulatedCamera camera(scene, intr, start, corruption, cfg.gain);
  SimRunResult out;
  out.report = run_alignment(camera, reference, intr, acfg);
  out.initial_error = true_pixel_error(scene, start, intr);

  const auto& recs = out.report.steps;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const CameraPose& before = recs[i].pose_before;
    const CameraPose& after = i + 1 < recs.size() ? recs[i + 1].pose_before : camera.pose_world();
    SimStep s;
    s.step = recs[i].step;
    s.outcome = recs[i].outcome;
    s.true_error_before = true_pixel_error(scene, before, intr);
    s.true_error_after = true_pixel_error(scene, after, intr);
    s.rotation_error_deg =
        rotation_angle(scene.goal_pose_world.rotation.transpose() * after.rotation) / kDeg;
    s.translation_error_m = (after.translation - scene.goal_pose_world.translation).norm();
    out.steps.push_back(s);
  }
  out.final_error = out.steps.empty() ? out.initial_error : out.steps.back().true_error_after;
  return out;
}

void SweepSpec::validate() const {
  if (scenes.empty()) throw Error(ErrorCode::kInvalidArgument, "sweep needs at least one scene");
  if (estimators.empty()) throw Error(ErrorCode::kInvalidArgument, "sweep needs at least one estimator");
  if (k_values.empty()) throw Error(ErrorCode::kInvalidArgument, "sweep needs at least one k value");
  if (repeats < 1) throw Error(ErrorCode::kInvalidArgument, "repeats must be >= 1");
  if (steps < 1) throw Error(ErrorCode::kInvalidArgument, "steps must be >= 1");
  for (int k : k_values) {
    if (k < 4) throw Error(ErrorCode::kInvalidArgument, "k must be >= 4");
  }
  if (pixel_noise && !(*pixel_noise >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "noise must be >= 0");
  if (outlier_rate && !(*outlier_rate >= 0.0 && *outlier_rate < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "outlier_rate must be in [0, 1)");
  }
}

SweepSpec SweepSpec::from_json(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("sweep spec: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "sweep spec must be a JSON object");
  SweepSpec spec;
  try {
    for (const auto& s : j.value("scenes", json::array())) {
      spec.scenes.push_back(s.is_string() ? s.get<std::string>() : std::to_string(s.get<std::uint64_t>()));
    }
    for (const auto& e : j.value("estimators", json::array())) {
      spec.estimators.push_back(EstimatorSpec::parse(e.get<std::string>()));
    }
    if (j.contains("k")) {
      spec.k_values.clear();
      if (j["k"].is_array()) {
        for (const auto& k : j["k"]) spec.k_values.push_back(k.get<int>());
      } else {
        spec.k_values.push_back(j["k"].get<int>());
      }
    }
    spec.steps = j.value("steps", spec.steps);
    spec.repeats = j.value("repeats", spec.repeats);
    spec.seed = j.value("seed", spec.seed);
    spec.stop_on_stall = j.value("stop_on_stall", spec.stop_on_stall);
    if (j.contains("noise")) spec.pixel_noise = j["noise"].get<double>();
    if (j.contains("outlier_rate")) spec.outlier_rate = j["outlier_rate"].get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("sweep spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

std::string SweepSpec::to_json() const {
  nlohmann::ordered_json j;
  j["scenes"] = scenes;
  std::vector<std::string> est;
  for (const auto& e : estimators) est.push_back(e.to_string());
  j["estimators"] = est;
  j["k"] = k_values;
  j["steps"] = steps;
  j["repeats"] = repeats;
  j["seed"] = seed;
  j["stop_on_stall"] = stop_on_stall;
  if (pixel_noise) j["noise"] = *pixel_noise;
  if (outlier_rate) j["outlier_rate"] = *outlier_rate;
  return j.dump();
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, int threads) {
  spec.validate();
  std::vector<SweepRow> rows;
  for (std::size_t s = 0; s < spec.scenes.size(); ++s) {
    for (std::size_t e = 0; e < spec.estimators.size(); ++e) {
      for (std::size_t k = 0; k < spec.k_values.size(); ++k) {
        for (int r = 0; r < spec.repeats; ++r) {
          SweepRow row;
          row.scene_index = s;
          row.estimator_index = e;
          row.k_index = k;
          row.repeat = r;
          row.scene = spec.scenes[s];
          row.estimator = spec.estimators[e].to_string();
          row.k = spec.k_values[k];
          rows.push_back(std::move(row));
        }
      }
    }
  }

  auto run_row = [&](SweepRow& row) {
    try {
      SimRunConfig cfg;
      cfg.scene = resolve_profile(row.scene);
      if (spec.pixel_noise) cfg.scene.corruption.pixel_noise_sigma = *spec.pixel_noise;
      if (spec.outlier_rate) cfg.scene.corruption.outlier_rate = *spec.outlier_rate;
      cfg.alignment.estimator = spec.estimators[row.estimator_index];
      cfg.alignment.selection.k = row.k;
      cfg.alignment.max_steps = spec.steps;
      cfg.alignment.stop_on_stall = spec.stop_on_stall;
      cfg.alignment.seed = spec.seed;
      cfg.alignment.selection.kmeans_seed = spec.seed;
      cfg.repeat = static_cast<std::uint64_t>(row.repeat);
      row.result = run_sim_alignment(cfg);
    } catch (const std::exception& e) {
      row.status = e.what();
    }
  };

  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(rows.size())));
  if (workers == 1) {
    for (SweepRow& row : rows) run_row(row);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < rows.size(); i = next++) run_row(rows[i]);
      });
    }
    for (auto& t : pool) t.join();
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const SweepSpec& spec, const std::vector<SweepRow>& rows) {
  out << "scene,estimator,k,repeat,step,true_px,rot_err_deg,trans_err_m,mean_px_dist,inliers,action,"
         "reason,status\n";
  for (const SweepRow& row : rows) {
    const std::string prefix = csv_field(row.scene) + "," + row.estimator + "," +
                               std::to_string(row.k) + "," + std::to_string(row.repeat) + ",";
    if (row.status != "ok") {
      out << prefix << ",,,,,,,," << csv_field(row.status) << "\n";
      continue;
    }
    for (const SimStep& s : row.result.steps) {
      out << prefix << s.step << "," << num(s.true_error_after) << "," << num(s.rotation_error_deg)
          << "," << num(s.translation_error_m) << "," << num(s.outcome.mean_pixel_distance) << ","
          << s.outcome.inlier_count << "," << to_string(s.outcome.action) << ","
          << to_string(s.outcome.reason) << ",ok\n";
    }
  }
  out << "# config: " << spec.to_json() << "\n";
}

void write_sweep_aggregate_csv(std::ostream& out, const SweepSpec& spec,
                               const std::vector<SweepRow>& rows) {
  out << "scene,estimator,k,step,runs,mean_true_px,std_true_px,failed_runs\n";
  std::size_t i = 0;
  while (i < rows.size()) {
    std::size_t j = i;
    while (j < rows.size() && rows[j].scene_index == rows[i].scene_index &&
           rows[j].estimator_index == rows[i].estimator_index && rows[j].k_index == rows[i].k_index) {
      ++j;
    }
    int failed = 0;
    for (std::size_t r = i; r < j; ++r) failed += rows[r].status != "ok";
    // Runs that stopped early keep their last error for the remaining steps.
    for (int step = 1; step <= spec.steps; ++step) {
      std::vector<double> v;
      for (std::size_t r = i; r < j; ++r) {
        const SweepRow& row = rows[r];
        if (row.status != "ok") continue;
        const auto& st = row.result.steps;
        v.push_back(st.empty() ? row.result.initial_error
                               : st[std::min<std::size_t>(step, st.size()) - 1].true_error_after);
      }
      double mean = 0.0, var = 0.0;
      for (double x : v) mean += x;
      if (!v.empty()) mean /= static_cast<double>(v.size());
      for (double x : v) var += (x - mean) * (x - mean);
      if (v.size() > 1) var /= static_cast<double>(v.size() - 1);
      out << csv_field(rows[i].scene) << "," << rows[i].estimator << "," << rows[i].k << "," << step
          << "," << v.size() << "," << (v.empty() ? "" : num(mean)) << ","
          << (v.empty() ? "" : num(std::sqrt(var))) << "," << failed << "\n";
    }
    i = j;
  }
  out << "# config: " << spec.to_json() << "\n";
}

void write_run_csv(std::ostream& out, const SimRunConfig& cfg, const SimRunResult& result) {
  out << "step,mean_px,rot_err_deg,trans_err_m,inliers,action,reason,match_px\n";
  for (const SimStep& s : result.steps) {
    out << s.step << "," << num(s.true_error_after) << "," << num(s.rotation_error_deg) << ","
        << num(s.translation_error_m) << "," << s.outcome.inlier_count << ","
        << to_string(s.outcome.action) << "," << to_string(s.outcome.reason) << ","
        << num(s.outcome.mean_pixel_distance) << "\n";
  }
  out << "# config: scene=" << cfg.scene.name << " scene_seed=" << cfg.scene.seed
      << " landmarks=" << cfg.scene.n_landmarks << " distractors=" << cfg.scene.distractors
      << " noise=" << num(cfg.scene.corruption.pixel_noise_sigma, 3)
      << " outlier_rate=" << num(cfg.scene.corruption.outlier_rate, 3)
      << " repeat=" << cfg.repeat << " initial_px=" << num(result.initial_error) << " "
      << describe(cfg.alignment) << "\n";
}

}  // namespace viewalign::sim
