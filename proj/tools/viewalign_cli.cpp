#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "viewalign/errors.hpp"
#include "viewalign/experiment.hpp"
#include "viewalign/retrieval.hpp"

using namespace viewalign;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 1;
constexpr int kServiceError = 2;

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kRankerUnavailable:
    case ErrorCode::kRankerProtocolError:
    case ErrorCode::kCameraUnavailable:
      return kServiceError;
    default:
      return kInputError;
  }
}

// Writes through `fn` to the named file, or to stdout for "-".
template <typename Fn>
void write_output(const std::string& path, Fn&& fn) {
  if (path == "-") {
    fn(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kInvalidFile, "cannot write " + path);
  fn(out);
  if (!out) throw Error(ErrorCode::kInvalidFile, "failed writing " + path);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

struct IndexArgs {
  std::string manifest;
  std::string index_out;
};

int cmd_index(const IndexArgs& a) {
  const auto entries = retrieval::load_manifest(a.manifest);
  const retrieval::HashingEmbedder embedder;
  const auto index = retrieval::index_gallery(entries, embedder);
  index.save(std::filesystem::path(a.index_out));
  std::cout << index.size() << " entries indexed\n";
  return kOk;
}

struct SuggestArgs {
  std::string index;
  std::string query;
  std::string objects;
  int people = -1;
  int m = 16;
  int m_star = 3;
  std::string ranker = "mock";
  bool non_interactive = false;
  double timeout = 30.0;
};

int cmd_suggest(const SuggestArgs& a) {
  const auto index = retrieval::EmbeddingIndex::load(std::filesystem::path(a.index));
  retrieval::UserPrompt prompt;
  prompt.query = a.query;
  prompt.detected_objects = split_list(a.objects);
  if (a.people >= 0) prompt.people_count = a.people;
  retrieval::RetrievalConfig cfg;
  cfg.m = a.m;
  cfg.m_star = a.m_star;
  cfg.validate();

  const retrieval::HashingEmbedder embedder;
  std::unique_ptr<retrieval::Ranker> ranker;
  if (a.ranker == "http") {
    ranker = std::make_unique<retrieval::HttpRanker>(retrieval::HttpRanker::from_environment(a.timeout));
  } else {
    ranker = std::make_unique<retrieval::MockRanker>();
  }
  const auto result = retrieval::suggest(prompt, index, embedder, *ranker, cfg);
  const auto& ids = result.suggestion.ids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& e = index.entry(ids[i]);
    std::cout << (i + 1) << ". " << e.id << "  " << e.image_path << "\n   " << index.caption(e.id) << "\n";
  }
  std::cout << "Explanation: " << result.suggestion.explanation << "\n";

  std::size_t choice = 1;
  if (!a.non_interactive && ids.size() > 1) {
    for (;;) {
      std::cout << "Select a reference [1-" << ids.size() << "]: " << std::flush;
      std::string line;
      if (!std::getline(std::cin, line)) {
        std::cerr << "no selection made\n";
        return kInputError;
      }
      try {
        std::size_t used = 0;
        const long v = std::stol(line, &used);
        if (line.find_first_not_of(" \t\r", used) == std::string::npos && v >= 1 &&
            v <= static_cast<long>(ids.size())) {
          choice = static_cast<std::size_t>(v);
          break;
        }
      } catch (const std::exception&) {
      }
      std::cout << "Please enter a number between 1 and " << ids.size() << ".\n";
    }
  }
  const auto& picked = index.entry(ids[choice - 1]);
  std::cout << "Selected: " << picked.id << " " << picked.image_path << "\n";
  return kOk;
}

struct AlignArgs {
  std::string scene;
  std::string estimator = "magsac:50";
  int k = 30;
  int steps = 8;
  double noise = 0.0;
  double outlier_rate = 0.0;
  std::string csv;
  bool fixed_steps = false;
  std::uint64_t seed = 0;
};

int cmd_align_sim(const AlignArgs& a) {
  sim::SimRunConfig cfg;
  cfg.scene = sim::resolve_profile(a.scene);
  cfg.scene.distractors = 0;
  cfg.scene.corruption = {};
  cfg.scene.corruption.pixel_noise_sigma = a.noise;
  cfg.scene.corruption.outlier_rate = a.outlier_rate;
  cfg.scene.corruption.seed = cfg.scene.seed;
  cfg.alignment.estimator = EstimatorSpec::parse(a.estimator);
  cfg.alignment.selection.k = a.k;
  cfg.alignment.max_steps = a.steps;
  cfg.alignment.stop_on_stall = !a.fixed_steps;
  cfg.alignment.seed = a.seed;
  cfg.alignment.selection.kmeans_seed = a.seed;
  cfg.alignment.validate();
  cfg.scene.corruption.validate();

  const auto result = sim::run_sim_alignment(cfg);
  std::printf("initial mean_px %.3f\n", result.initial_error);
  for (const auto& s : result.steps) {
    std::printf("step %d: %s%s%s mean_px %.3f rot_err_deg %.3f trans_err_m %.4f inliers %d\n", s.step,
                to_string(s.outcome.action), s.outcome.reason == HoldReason::kNone ? "" : " ",
                to_string(s.outcome.reason), s.true_error_after, s.rotation_error_deg,
                s.translation_error_m, s.outcome.inlier_count);
  }
  std::printf("final mean_px %.3f after %zu steps\n", result.final_error, result.steps.size());
  if (!a.csv.empty()) write_output(a.csv, [&](std::ostream& o) { sim::write_run_csv(o, cfg, result); });
  return kOk;
}

struct SweepArgs {
  std::string spec;
  std::string csv;
  std::string aggregate_csv;
  int threads = 1;
};

int cmd_sweep(const SweepArgs& a) {
  std::ifstream in(a.spec);
  if (!in) throw Error(ErrorCode::kInvalidFile, "cannot open " + a.spec);
  std::stringstream text;
  text << in.rdbuf();
  const auto spec = sim::SweepSpec::from_json(text.str());
  if (a.threads < 1) throw Error(ErrorCode::kInvalidArgument, "--threads must be >= 1");
  const auto rows = sim::run_sweep(spec, a.threads);
  std::size_t ok = 0;
  for (const auto& r : rows) ok += r.status == "ok";
  std::cout << rows.size() << " runs, " << ok << " succeeded\n";
  for (const auto& r : rows) {
    if (r.status != "ok") std::cerr << r.scene << " " << r.estimator << " k=" << r.k << " repeat " << r.repeat << ": " << r.status << "\n";
  }
  if (!a.csv.empty()) write_output(a.csv, [&](std::ostream& o) { sim::write_sweep_csv(o, spec, rows); });
  if (!a.aggregate_csv.empty()) {
    write_output(a.aggregate_csv, [&](std::ostream& o) { sim::write_sweep_aggregate_csv(o, spec, rows); });
  }
  return ok > 0 ? kOk : kInputError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"viewalign: reference suggestion and camera view alignment"};
  app.require_subcommand(1);

  IndexArgs ia;
  auto* index = app.add_subcommand("index", "Build an embedding index from a gallery manifest");
  index->add_option("manifest_path", ia.manifest, "JSON Lines gallery manifest")->required();
  index->add_option("index_out", ia.index_out, "Index file to write")->required();

  SuggestArgs sa;
  auto* suggest = app.add_subcommand("suggest", "Suggest reference images for a query");
  suggest->add_option("index_path", sa.index, "Index file")->required();
  suggest->add_option("query", sa.query, "User query")->required();
  suggest->add_option("objects", sa.objects, "Comma-separated objects detected in the current view");
  suggest->add_option("people", sa.people, "People in the current view")->check(CLI::NonNegativeNumber);
  suggest->add_option("--m", sa.m, "Coarse shortlist size")->check(CLI::PositiveNumber);
  suggest->add_option("--m-star", sa.m_star, "Number of suggestions")->check(CLI::PositiveNumber);
  suggest->add_option("--ranker", sa.ranker, "Re-ranker")->check(CLI::IsMember({"mock", "http"}));
  suggest->add_flag("--non-interactive", sa.non_interactive, "Print suggestions and select the top one");
  suggest->add_option("--timeout", sa.timeout, "HTTP ranker timeout in seconds")->check(CLI::PositiveNumber);

  AlignArgs aa;
  auto* align = app.add_subcommand("align-sim", "Run view alignment in the simulator");
  align->add_option("scene_seed", aa.scene, "Scene seed or profile name")->required();
  align->add_option("--estimator", aa.estimator, "ransac:<tau>, magsac[:<max>] or none");
  align->add_option("--k", aa.k, "Correspondences kept per step");
  align->add_option("--steps", aa.steps, "Maximum steps");
  align->add_option("--noise", aa.noise, "Pixel noise sigma");
  align->add_option("--outlier-rate", aa.outlier_rate, "Share of displaced landmark cells");
  align->add_option("--seed", aa.seed, "Solver seed");
  align->add_flag("--fixed-steps", aa.fixed_steps, "Run all steps without the stall rule");
  align->add_option("--csv", aa.csv, "Per-step CSV output ('-' for stdout)");

  SweepArgs wa;
  auto* sweep = app.add_subcommand("sweep", "Run an estimator / keypoint sweep");
  sweep->add_option("spec_path", wa.spec, "Sweep spec (JSON)")->required();
  sweep->add_option("--csv", wa.csv, "Per-run, per-step CSV output ('-' for stdout)");
  sweep->add_option("--aggregate-csv", wa.aggregate_csv, "Mean and std per configuration and step");
  sweep->add_option("--threads", wa.threads, "Worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInputError;
  }

  try {
    if (*index) return cmd_index(ia);
    if (*suggest) return cmd_suggest(sa);
    if (*align) return cmd_align_sim(aa);
    if (*sweep) return cmd_sweep(wa);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}
