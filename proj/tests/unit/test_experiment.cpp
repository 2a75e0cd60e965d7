#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "viewalign/errors.hpp"
#include "viewalign/experiment.hpp"

using namespace viewalign;

namespace {

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

sim::SweepSpec small_spec() {
  return sim::SweepSpec::from_json(
      R"({"scenes": ["mug_book", 17], "estimators": ["ransac:10", "magsac"], "k": [20, 30],
          "steps": 2, "repeats": 2})");
}

}  // namespace

TEST_CASE("scene profiles") {
  CHECK(sim::builtin_profiles().size() == 6);
  CHECK(sim::resolve_profile("human_phone").name == "human_phone");
  CHECK(sim::resolve_profile("123").seed == 123);
  CHECK_THROWS_AS(sim::resolve_profile("kitchen"), Error);
  CHECK_THROWS_AS(sim::resolve_profile(""), Error);
  CHECK_THROWS_AS(sim::resolve_profile("99999999999999999999999"), Error);
}

TEST_CASE("sweep spec parsing and validation") {
  const sim::SweepSpec s = small_spec();
  CHECK(s.scenes == std::vector<std::string>{"mug_book", "17"});
  CHECK(s.estimators.size() == 2);
  CHECK(s.k_values == std::vector<int>{20, 30});
  CHECK(s.steps == 2);
  CHECK(s.repeats == 2);
  CHECK_FALSE(s.stop_on_stall);

  const sim::SweepSpec d = sim::SweepSpec::from_json(R"({"scenes": [1], "estimators": ["none"]})");
  CHECK(d.steps == 8);
  CHECK(d.repeats == 3);
  CHECK(d.k_values == std::vector<int>{30});

  CHECK(sim::SweepSpec::from_json(s.to_json()).to_json() == s.to_json());

  for (const char* bad : {"{}", "[]", "not json", R"({"scenes": [], "estimators": ["none"]})",
                          R"({"scenes": [1], "estimators": []})",
                          R"({"scenes": [1], "estimators": ["none"], "repeats": 0})",
                          R"({"scenes": [1], "estimators": ["none"], "k": 3})",
                          R"({"scenes": [1], "estimators": ["bogus"]})",
                          R"({"scenes": [1], "estimators": ["none"], "outlier_rate": 1.5})"}) {
    CHECK_THROWS_AS(sim::SweepSpec::from_json(bad), Error);
  }
}

TEST_CASE("an unknown scene fails only its own rows") {
  sim::SweepSpec spec;
  spec.scenes = {"atlantis", "mug_book"};
  spec.estimators = {EstimatorSpec::parse("ransac:10")};
  spec.k_values = {20};
  spec.steps = 1;
  spec.repeats = 1;
  const auto rows = sim::run_sweep(spec, 2);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].status.find("unknown scene") != std::string::npos);
  CHECK(rows[0].result.steps.empty());
  CHECK(rows[1].status == "ok");
  CHECK(rows[1].result.steps.size() == 1);

  std::ostringstream csv;
  sim::write_sweep_csv(csv, spec, rows);
  CHECK(csv.str().find("atlantis,ransac:10,20,0,,,,,,,,,") != std::string::npos);
}

TEST_CASE("sweep rows follow the configuration order and are reproducible") {
  const sim::SweepSpec spec = small_spec();
  const auto rows = sim::run_sweep(spec, 1);
  REQUIRE(rows.size() == 2 * 2 * 2 * 2);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto key = [](const sim::SweepRow& r) {
      return std::make_tuple(r.scene_index, r.estimator_index, r.k_index, r.repeat);
    };
    CHECK(key(rows[i - 1]) < key(rows[i]));
  }
  for (const auto& r : rows) {
    CHECK(r.status == "ok");
    CHECK(r.result.steps.size() == 2);
  }

  std::ostringstream a, b, agg;
  sim::write_sweep_csv(a, spec, rows);
  sim::write_sweep_csv(b, spec, sim::run_sweep(spec, 3));
  CHECK(a.str() == b.str());

  const auto lines = lines_of(a.str());
  CHECK(lines.front().rfind("scene,estimator,k,repeat,step,true_px", 0) == 0);
  CHECK(lines.size() == 1 + 16 * 2 + 1);
  CHECK(lines.back() == "# config: " + spec.to_json());

  sim::write_sweep_aggregate_csv(agg, spec, rows);
  const auto alines = lines_of(agg.str());
  CHECK(alines.size() == 1 + 8 * 2 + 1);
  CHECK(alines[1].rfind("mug_book,ransac:10,20,1,2,", 0) == 0);
}

TEST_CASE("aggregate statistics match a direct computation") {
  const sim::SweepSpec spec = sim::SweepSpec::from_json(
      R"({"scenes": [5], "estimators": ["magsac"], "steps": 2, "repeats": 3})");
  const auto rows = sim::run_sweep(spec);
  double mean = 0.0;
  for (const auto& r : rows) mean += r.result.steps[1].true_error_after;
  mean /= 3.0;
  double var = 0.0;
  for (const auto& r : rows) var += std::pow(r.result.steps[1].true_error_after - mean, 2);
  var /= 2.0;
  std::ostringstream out;
  sim::write_sweep_aggregate_csv(out, spec, rows);
  const auto lines = lines_of(out.str());
  char expect[128];
  std::snprintf(expect, sizeof expect, "5,magsac:50,30,2,3,%.6f,%.6f,0", mean, std::sqrt(var));
  CHECK(lines[2] == expect);
}

TEST_CASE("solver failure counting") {
  sim::SimRunResult r;
  auto step = [](StepAction a, HoldReason why, double before, double after) {
    sim::SimStep s;
    s.outcome.action = a;
    s.outcome.reason = why;
    s.true_error_before = before;
    s.true_error_after = after;
    return s;
  };
  r.steps.push_back(step(StepAction::kMove, HoldReason::kNone, 30.0, 10.0));
  r.steps.push_back(step(StepAction::kMove, HoldReason::kNone, 10.0, 12.0));   // worse
  r.steps.push_back(step(StepAction::kHold, HoldReason::kPnPFailure, 12.0, 12.0));
  r.steps.push_back(step(StepAction::kHold, HoldReason::kOutsideWorkspace, 12.0, 12.0));
  r.steps.push_back(step(StepAction::kMove, HoldReason::kNone, 12.0, 1.0));
  r.steps.push_back(step(StepAction::kMove, HoldReason::kNone, 1.0, 1.5));     // converged jitter
  CHECK(r.solver_failures() == 2);
  r.initial_error = 30.0;
  r.final_error = 1.5;
  CHECK_FALSE(r.diverged());
}

TEST_CASE("single run csv") {
  sim::SimRunConfig cfg;
  cfg.scene = sim::resolve_profile("mug_book");
  cfg.alignment.max_steps = 3;
  const auto res = sim::run_sim_alignment(cfg);
  CHECK(res.steps.size() <= 3);
  CHECK(res.steps.front().true_error_before == doctest::Approx(res.initial_error));
  std::ostringstream out;
  sim::write_run_csv(out, cfg, res);
  const auto lines = lines_of(out.str());
  CHECK(lines.front() == "step,mean_px,rot_err_deg,trans_err_m,inliers,action,reason,match_px");
  CHECK(lines.size() == res.steps.size() + 2);
  CHECK(lines.back().rfind("# config: scene=mug_book", 0) == 0);
}
