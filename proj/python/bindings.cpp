#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "viewalign/alignment.hpp"
#include "viewalign/errors.hpp"
#include "viewalign/experiment.hpp"
#include "viewalign/pnp.hpp"
#include "viewalign/retrieval.hpp"
#include "viewalign/robust.hpp"

namespace py = pybind11;
using namespace viewalign;

namespace {

using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

std::vector<Correspondence> to_correspondences(const Points3& points, const Points2& pixels) {
  if (points.rows() != pixels.rows()) {
    throw Error(ErrorCode::kInvalidArgument, "points and pixels must have the same number of rows");
  }
  std::vector<Correspondence> out(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    auto& c = out[static_cast<std::size_t>(i)];
    c.scene_point = ScenePoint::from(points.row(i).transpose());
    c.reference_pixel = {pixels(i, 0), pixels(i, 1)};
    c.saliency = 1.0;
  }
  return out;
}

py::dict step_dict(const sim::SimStep& s) {
  py::dict d;
  d["step"] = s.step;
  d["action"] = to_string(s.outcome.action);
  d["reason"] = to_string(s.outcome.reason);
  d["inliers"] = s.outcome.inlier_count;
  d["mean_pixel_distance"] = s.outcome.mean_pixel_distance;
  d["true_error_before"] = s.true_error_before;
  d["true_error_after"] = s.true_error_after;
  d["rotation_error_deg"] = s.rotation_error_deg;
  d["translation_error_m"] = s.translation_error_m;
  return d;
}

retrieval::UserPrompt make_prompt(const std::string& query, const std::vector<std::string>& objects,
                                  std::optional<int> people) {
  retrieval::UserPrompt p{query, objects, people};
  p.validate();
  return p;
}

}  // namespace

PYBIND11_MODULE(_viewalign, m) {
  m.doc() = "Reference suggestion and camera view alignment";

  py::register_exception<Error>(m, "ViewAlignError", PyExc_RuntimeError);

  py::class_<CameraIntrinsics>(m, "CameraIntrinsics")
      .def(py::init([](double fx, double fy, double cx, double cy, int width, int height) {
             CameraIntrinsics k{fx, fy, cx, cy, width, height};
             k.validate();
             return k;
           }),
           py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("width"), py::arg("height"))
      .def_readwrite("fx", &CameraIntrinsics::fx)
      .def_readwrite("fy", &CameraIntrinsics::fy)
      .def_readwrite("cx", &CameraIntrinsics::cx)
      .def_readwrite("cy", &CameraIntrinsics::cy)
      .def_readwrite("width", &CameraIntrinsics::width)
      .def_readwrite("height", &CameraIntrinsics::height)
      .def("matrix", &CameraIntrinsics::matrix);

  py::class_<CameraPose>(m, "CameraPose")
      .def(py::init<>())
      .def(py::init([](const Eigen::Matrix3d& r, const Eigen::Vector3d& t) { return CameraPose{r, t}; }),
           py::arg("rotation"), py::arg("translation"))
      .def_static("from_axis_angle", &CameraPose::from_axis_angle, py::arg("axis_angle"), py::arg("translation"))
      .def_readwrite("rotation", &CameraPose::rotation)
      .def_readwrite("translation", &CameraPose::translation)
      .def("apply", &CameraPose::apply)
      .def("inverse", [](const CameraPose& p) { return invert(p); })
      .def("__matmul__", [](const CameraPose& a, const CameraPose& b) { return compose(a, b); });

  m.def("project", [](const CameraIntrinsics& k, const CameraPose& pose, const Eigen::Vector3d& x) {
    const PixelPoint px = project(k, pose, ScenePoint::from(x));
    return std::make_pair(px.u, px.v);
  }, py::arg("intrinsics"), py::arg("pose"), py::arg("point"));

  m.def("solve_epnp", [](const Points3& points, const Points2& pixels, const CameraIntrinsics& k) {
    return solve_epnp(to_correspondences(points, pixels), k).pose;
  }, py::arg("points"), py::arg("pixels"), py::arg("intrinsics"),
        "Closed-form pose mapping the points' frame into the camera that observed `pixels`.");

  m.def("estimate_pose",
        [](const Points3& points, const Points2& pixels, const CameraIntrinsics& k, const std::string& estimator,
           std::uint64_t seed) {
          AlignmentConfig cfg;
          cfg.estimator = EstimatorSpec::parse(estimator);
          const auto corrs = to_correspondences(points, pixels);
          const RobustResult r = estimate_pose(corrs, k, cfg, seed);
          py::dict d;
          d["pose"] = r.solution.pose;
          d["inliers"] = r.inlier_mask;
          d["weights"] = r.weights;
          d["mean_error"] = r.solution.mean_error;
          d["iterations"] = r.iterations_run;
          return d;
        },
        py::arg("points"), py::arg("pixels"), py::arg("intrinsics"), py::arg("estimator") = "magsac:50",
        py::arg("seed") = 0);

  m.def("magsac_weight", &magsac_weight, py::arg("residual"), py::arg("max_threshold") = 50.0,
        py::arg("partitions") = 10);

  m.def("fit_reference", [](std::pair<int, int> reference, std::pair<int, int> capture) {
    const ReferenceSpec s = fit_reference({reference.first, reference.second}, {capture.first, capture.second});
    py::dict d;
    d["scale"] = s.scale;
    d["scaled_width"] = s.scaled_width;
    d["scaled_height"] = s.scaled_height;
    d["pad_left"] = s.pad_left;
    d["pad_right"] = s.pad_right;
    d["pad_top"] = s.pad_top;
    d["pad_bottom"] = s.pad_bottom;
    return d;
  }, py::arg("reference"), py::arg("capture"), "Sizes are (width, height).");

  m.def("crop_captured", [](std::pair<int, int> reference, std::pair<int, int> capture) {
    const ImageDims cap{capture.first, capture.second};
    const CropRect r = crop_captured(cap, fit_reference({reference.first, reference.second}, cap));
    return std::make_tuple(r.x, r.y, r.width, r.height);
  }, py::arg("reference"), py::arg("capture"), "Returns (x, y, width, height) of the region to keep.");

  m.def("should_terminate", [](const std::vector<double>& history, int max_steps) {
    AlignmentState s;
    for (double h : history) s.record(h);
    s.step_index = static_cast<int>(history.size());
    return should_terminate(s, max_steps);
  }, py::arg("history"), py::arg("max_steps") = 8);

  m.def("scene_profiles", [] {
    std::vector<std::string> names;
    for (const auto& p : sim::builtin_profiles()) names.push_back(p.name);
    return names;
  });

  m.def("simulate_alignment",
        [](const std::string& scene, const std::string& estimator, int k, int steps, std::optional<double> noise,
           std::optional<double> outlier_rate, bool stop_on_stall, std::uint64_t repeat, std::uint64_t seed) {
          sim::SimRunConfig cfg;
          cfg.scene = sim::resolve_profile(scene);
          if (noise) cfg.scene.corruption.pixel_noise_sigma = *noise;
          if (outlier_rate) cfg.scene.corruption.outlier_rate = *outlier_rate;
          cfg.scene.corruption.validate();
          cfg.alignment.estimator = EstimatorSpec::parse(estimator);
          cfg.alignment.selection.k = k;
          cfg.alignment.max_steps = steps;
          cfg.alignment.stop_on_stall = stop_on_stall;
          cfg.alignment.seed = seed;
          cfg.alignment.selection.kmeans_seed = seed;
          cfg.alignment.validate();
          cfg.repeat = repeat;
          sim::SimRunResult r;
          {
            py::gil_scoped_release release;
            r = sim::run_sim_alignment(cfg);
          }
          py::dict d;
          d["initial_error"] = r.initial_error;
          d["final_error"] = r.final_error;
          d["diverged"] = r.diverged();
          d["solver_failures"] = r.solver_failures();
          py::list steps_out;
          for (const auto& s : r.steps) steps_out.append(step_dict(s));
          d["steps"] = steps_out;
          std::ostringstream csv;
          sim::write_run_csv(csv, cfg, r);
          d["csv"] = csv.str();
          return d;
        },
        py::arg("scene"), py::arg("estimator") = "magsac:50", py::arg("k") = 30, py::arg("steps") = 8,
        py::arg("noise") = py::none(), py::arg("outlier_rate") = py::none(), py::arg("stop_on_stall") = true,
        py::arg("repeat") = 0, py::arg("seed") = 0,
        "Runs the alignment loop in the simulator; scene is a profile name or a numeric seed.");

  m.def("run_sweep", [](const std::string& spec_json, int threads) {
    const sim::SweepSpec spec = sim::SweepSpec::from_json(spec_json);
    std::vector<sim::SweepRow> rows;
    {
      py::gil_scoped_release release;
      rows = sim::run_sweep(spec, threads);
    }
    std::ostringstream per_run, aggregate;
    sim::write_sweep_csv(per_run, spec, rows);
    sim::write_sweep_aggregate_csv(aggregate, spec, rows);
    return std::make_pair(per_run.str(), aggregate.str());
  }, py::arg("spec_json"), py::arg("threads") = 1, "Returns (per-run CSV, aggregate CSV).");

  py::class_<retrieval::GalleryEntry>(m, "GalleryEntry")
      .def(py::init([](std::string id, std::string description, std::vector<std::string> objects,
                       std::string metadata, int people_count, std::string image_path) {
             return retrieval::GalleryEntry{std::move(id), std::move(description), std::move(objects),
                                            std::move(metadata), people_count, std::move(image_path)};
           }),
           py::arg("id"), py::arg("description") = "", py::arg("objects") = std::vector<std::string>{},
           py::arg("metadata") = "", py::arg("people_count") = 0, py::arg("image_path") = "")
      .def_readwrite("id", &retrieval::GalleryEntry::id)
      .def_readwrite("description", &retrieval::GalleryEntry::description)
      .def_readwrite("objects", &retrieval::GalleryEntry::objects)
      .def_readwrite("metadata", &retrieval::GalleryEntry::metadata)
      .def_readwrite("people_count", &retrieval::GalleryEntry::people_count)
      .def_readwrite("image_path", &retrieval::GalleryEntry::image_path)
      .def("caption", [](const retrieval::GalleryEntry& e) { return retrieval::build_caption(e); });

  m.def("load_manifest", [](const std::string& path) { return retrieval::load_manifest(path); }, py::arg("path"));

  m.def("embed_text", [](const std::string& text, int dimension) {
    return retrieval::HashingEmbedder(dimension).embed(text);
  }, py::arg("text"), py::arg("dimension") = 256);

  py::class_<retrieval::EmbeddingIndex>(m, "GalleryIndex")
      .def(py::init([](std::vector<retrieval::GalleryEntry> entries) {
             return retrieval::index_gallery(std::move(entries), retrieval::HashingEmbedder());
           }),
           py::arg("entries"))
      .def_static("from_manifest", [](const std::string& path) {
        return retrieval::index_gallery(retrieval::load_manifest(path), retrieval::HashingEmbedder());
      }, py::arg("path"))
      .def_static("load", [](const std::string& path) {
        return retrieval::EmbeddingIndex::load(std::filesystem::path(path));
      }, py::arg("path"))
      .def("save", [](const retrieval::EmbeddingIndex& idx, const std::string& path) {
        idx.save(std::filesystem::path(path));
      }, py::arg("path"))
      .def("__len__", &retrieval::EmbeddingIndex::size)
      .def("caption", &retrieval::EmbeddingIndex::caption, py::arg("id"))
      .def("retrieve",
           [](const retrieval::EmbeddingIndex& idx, const std::string& query, const std::vector<std::string>& objects,
              std::optional<int> people, int m) {
             retrieval::RetrievalConfig cfg;
             cfg.m = m;
             cfg.m_star = 1;
             cfg.validate();
             std::vector<std::pair<std::string, double>> out;
             for (const auto& s : retrieval::coarse_retrieve(make_prompt(query, objects, people), idx,
                                                             retrieval::HashingEmbedder(), cfg)) {
               out.emplace_back(s.id, s.similarity);
             }
             return out;
           },
           py::arg("query"), py::arg("objects") = std::vector<std::string>{}, py::arg("people") = py::none(),
           py::arg("m") = 16, "Cosine top-m as (id, similarity) pairs.")
      .def("suggest",
           [](const retrieval::EmbeddingIndex& idx, const std::string& query, const std::vector<std::string>& objects,
              std::optional<int> people, int m, int m_star, const std::string& ranker) {
             retrieval::RetrievalConfig cfg;
             cfg.m = m;
             cfg.m_star = m_star;
             cfg.validate();
             const auto prompt = make_prompt(query, objects, people);
             const retrieval::HashingEmbedder embedder;
             retrieval::SuggestResult r;
             if (ranker == "http") {
               const auto http = retrieval::HttpRanker::from_environment();
               py::gil_scoped_release release;
               r = retrieval::suggest(prompt, idx, embedder, http, cfg);
             } else if (ranker == "mock") {
               r = retrieval::suggest(prompt, idx, embedder, retrieval::MockRanker(), cfg);
             } else {
               throw Error(ErrorCode::kInvalidArgument, "ranker must be 'mock' or 'http'");
             }
             py::dict d;
             d["ids"] = r.suggestion.ids;
             d["explanation"] = r.suggestion.explanation;
             d["attempts"] = r.suggestion.attempts;
             std::vector<std::pair<std::string, double>> shortlist;
             for (const auto& s : r.shortlist) shortlist.emplace_back(s.id, s.similarity);
             d["shortlist"] = shortlist;
             return d;
           },
           py::arg("query"), py::arg("objects") = std::vector<std::string>{}, py::arg("people") = py::none(),
           py::arg("m") = 16, py::arg("m_star") = 3, py::arg("ranker") = "mock");
}
