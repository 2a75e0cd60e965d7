#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "viewalign/alignment.hpp"
#include "viewalign/scene_sim.hpp"

namespace viewalign::sim {

// A named simulated scene with its corruption and start-pose settings.
struct SceneProfile {
  std::string name;
  std::uint64_t seed = 0;
  int n_landmarks = 40;
  int distractors = 0;
  CorruptionConfig corruption;
  double start_angle_deg = 10.0;
  double start_distance = 0.3;
  ImageDims reference_dims;  // {0, 0} means the capture size
};

// Built-in profiles: mug_book, mug_book_distract, plate_utensils,
// plate_utensils_distract, human_phone, confident_human.
const std::vector<SceneProfile>& builtin_profiles();
// A built-in name, or a decimal seed for a generic cluttered scene.
SceneProfile resolve_profile(const std::string& name_or_seed);

struct SimRunConfig {
  SceneProfile scene;
  AlignmentConfig alignment;
  std::uint64_t repeat = 0;  // varies capture noise and solver seeds
  double gain = 1.0;
};

struct SimStep {
  int step = 0;
  StepOutcome outcome;
  double true_error_before = 0.0;  // pixels
  double true_error_after = 0.0;
  double rotation_error_deg = 0.0;  // camera vs goal after the step
  double translation_error_m = 0.0;
};

// True pixel error below which a run counts as converged.
inline constexpr double kConvergedPixels = 2.0;

struct SimRunResult {
  double initial_error = 0.0;
  double final_error = 0.0;
  std::vector<SimStep> steps;
  AlignmentReport report;

  bool diverged() const { return final_error > initial_error; }
  // Steps where the solver found no pose, or moved the camera without
  // reducing the true error while it was still outside the converged region.
  int solver_failures() const;
};

SimRunResult run_sim_alignment(const SimRunConfig& cfg);

struct SweepSpec {
  std::vector<std::string> scenes;
  std::vector<EstimatorSpec> estimators;
  std::vector<int> k_values{30};
  int steps = 8;
  int repeats = 3;
  // Fixed-length runs as in the experiment protocol unless set.
  bool stop_on_stall = false;
  std::uint64_t seed = 0;
  std::optional<double> pixel_noise;
  std::optional<double> outlier_rate;

  void validate() const;
  static SweepSpec from_json(const std::string& text);
  std::string to_json() const;
};

struct SweepRow {
  std::size_t scene_index = 0;
  std::size_t estimator_index = 0;
  std::size_t k_index = 0;
  int repeat = 0;
  std::string scene;
  std::string estimator;
  int k = 0;
  std::string status = "ok";  // "ok" or the error message
  SimRunResult result;
};

// Full cross product; rows come back sorted by (scene, estimator, k, repeat)
// in spec order regardless of `threads`.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, int threads = 1);

// One line per run and step.
void write_sweep_csv(std::ostream& out, const SweepSpec& spec, const std::vector<SweepRow>& rows);
// Mean and standard deviation of the true pixel error per configuration and step.
void write_sweep_aggregate_csv(std::ostream& out, const SweepSpec& spec,
                               const std::vector<SweepRow>& rows);
// Per-step CSV of a single run.
void write_run_csv(std::ostream& out, const SimRunConfig& cfg, const SimRunResult& result);

}  // namespace viewalign::sim
