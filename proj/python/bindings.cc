#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "unitmll/analytics.h"
#include "unitmll/cli.h"
#include "unitmll/error.h"
#include "unitmll/ngram_backend.h"
#include "unitmll/promptgen.h"
#include "unitmll/quantizer.h"
#include "unitmll/scoring.h"
#include "unitmll/speaker_verif.h"

#include <sstream>

namespace py = pybind11;
using namespace unitmll;

namespace {

using FloatRows = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleRows = py::array_t<double, py::array::c_style | py::array::forcecast>;

FeatureMatrix ToFeatures(const FloatRows& a) {
  if (a.ndim() != 2) throw Error(ErrorKind::kDimensionMismatch, "expected a 2-d array");
  auto rows = static_cast<std::size_t>(a.shape(0));
  auto cols = static_cast<std::size_t>(a.shape(1));
  std::vector<float> values(a.data(), a.data() + rows * cols);
  return FeatureMatrix(rows, cols, std::move(values));
}

Codebook ToCodebook(const DoubleRows& centroids) {
  if (centroids.ndim() != 2) throw Error(ErrorKind::kDimensionMismatch, "expected a 2-d array");
  Codebook cb;
  cb.num_clusters = static_cast<std::size_t>(centroids.shape(0));
  cb.dim = static_cast<std::size_t>(centroids.shape(1));
  cb.centroids.assign(centroids.data(), centroids.data() + cb.num_clusters * cb.dim);
  return cb;
}

py::object ToPython(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of unitmll";

  static py::exception<Error> error_type(m, "UnitmllError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::tuple args = py::make_tuple(std::string(ToString(e.kind())), e.what());
      PyErr_SetObject(error_type.ptr(), args.ptr());
    }
  });

  m.def("dedup", [](std::vector<std::int32_t> tokens) { return Dedup({std::move(tokens), false, ""}).tokens; },
        py::arg("tokens"));

  m.def(
      "kmeans",
      [](const FloatRows& frames, std::size_t k, std::uint64_t seed, std::size_t max_iters, double tol) {
        KMeansOptions opts;
        opts.num_clusters = k;
        opts.seed = seed;
        opts.max_iters = max_iters;
        opts.tol = tol;
        Codebook cb;
        {
          FeatureMatrix f = ToFeatures(frames);
          py::gil_scoped_release release;
          cb = KMeansTrain(f, opts);
        }
        py::array_t<double> centroids({cb.num_clusters, cb.dim});
        std::copy(cb.centroids.begin(), cb.centroids.end(), centroids.mutable_data());
        py::dict out;
        out["centroids"] = centroids;
        out["inertia_trace"] = cb.inertia_trace;
        out["final_inertia"] = cb.final_inertia;
        out["iterations_run"] = cb.iterations_run;
        return out;
      },
      py::arg("frames"), py::arg("k") = kDefaultNumClusters, py::arg("seed") = 0, py::arg("max_iters") = 100,
      py::arg("tol") = 1e-4);

  m.def(
      "assign",
      [](const DoubleRows& centroids, const FloatRows& frames) {
        return Assign(ToCodebook(centroids), ToFeatures(frames)).tokens;
      },
      py::arg("centroids"), py::arg("frames"));

  m.def("render_tokens", [](const std::vector<std::int32_t>& tokens) { return RenderTokens(tokens); },
        py::arg("tokens"));

  m.def(
      "render_prompt",
      [](int template_id, const std::vector<std::optional<std::string>>& past,
         const std::vector<std::optional<std::string>>& future) {
        return RenderPrompt(FindTemplate(BuiltinTemplates(), template_id), past, future);
      },
      py::arg("template_id"), py::arg("past"), py::arg("future"));

  py::class_<NgramModel>(m, "NgramModel")
      .def_static(
          "train",
          [](const std::vector<std::string>& texts, std::size_t order, double alpha, double adaptation) {
            return NgramModel::Train(texts, {order, alpha, adaptation});
          },
          py::arg("texts"), py::arg("order") = 3, py::arg("alpha") = 0.1, py::arg("adaptation") = 0.0)
      .def_static("load", [](const std::string& path) { return NgramModel::Load(path); }, py::arg("path"))
      .def("save", [](const NgramModel& self, const std::string& path) { self.Save(path); }, py::arg("path"))
      .def_property_readonly("version", &NgramModel::version)
      .def_property_readonly("order", &NgramModel::order)
      .def(
          "score",
          [](const NgramModel& self, const std::string& prompt, const std::string& target) {
            std::vector<std::pair<std::string, double>> out;
            for (auto& t : self.Score(prompt, target)) out.emplace_back(std::move(t.token_text), t.logprob);
            return out;
          },
          py::arg("prompt"), py::arg("target"));

  m.def(
      "corpus_mll",
      [](const std::vector<double>& sum_logprobs, const std::vector<std::size_t>& n_tokens) {
        if (sum_logprobs.size() != n_tokens.size()) {
          throw Error(ErrorKind::kDimensionMismatch, "sum_logprobs and n_tokens differ in length");
        }
        std::vector<ScoreRecord> records;
        for (std::size_t i = 0; i < n_tokens.size(); ++i) {
          records.push_back({std::to_string(i), sum_logprobs[i], n_tokens[i], n_tokens[i], 0});
        }
        return CorpusMll(records);
      },
      py::arg("sum_logprobs"), py::arg("n_tokens"));

  m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) { return Pearson(x, y); },
        py::arg("x"), py::arg("y"));

  m.def(
      "rank_models",
      [](const std::map<std::string, double>& mll, const std::map<std::string, double>& metric,
         bool lower_is_better) { return ToPython(ToJson(RankModels(mll, metric, lower_is_better))); },
      py::arg("mll"), py::arg("metric"), py::arg("lower_is_better") = true);

  m.def(
      "compute_eer",
      [](const std::vector<double>& scores, const std::vector<bool>& is_target) {
        if (scores.size() != is_target.size()) {
          throw Error(ErrorKind::kDimensionMismatch, "scores and labels differ in length");
        }
        std::vector<std::pair<double, bool>> pairs;
        for (std::size_t i = 0; i < scores.size(); ++i) pairs.emplace_back(scores[i], is_target[i]);
        auto r = ComputeEer(pairs);
        return py::make_tuple(r.eer, r.threshold);
      },
      py::arg("scores"), py::arg("is_target"));

  m.def(
      "pca_fit",
      [](const DoubleRows& data, std::size_t q) {
        if (data.ndim() != 2) throw Error(ErrorKind::kDimensionMismatch, "expected a 2-d array");
        const auto rows = static_cast<Eigen::Index>(data.shape(0));
        const auto cols = static_cast<Eigen::Index>(data.shape(1));
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
          for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data.data()[r * cols + c];
        auto p = PcaFit(m, q);
        std::vector<double> mean(p.mean.data(), p.mean.data() + p.mean.size());
        py::array_t<double> comps({static_cast<std::size_t>(p.components.rows()), static_cast<std::size_t>(p.components.cols())});
        for (Eigen::Index r = 0; r < p.components.rows(); ++r)
          for (Eigen::Index c = 0; c < p.components.cols(); ++c)
            comps.mutable_data()[r * p.components.cols() + c] = p.components(r, c);
        std::vector<double> var(p.explained_variance.data(),
                                p.explained_variance.data() + p.explained_variance.size());
        return py::make_tuple(py::array_t<double>(mean.size(), mean.data()), comps,
                              py::array_t<double>(var.size(), var.data()));
      },
      py::arg("data"), py::arg("q"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = RunCli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
