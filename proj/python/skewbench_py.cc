// Copyright 2026 The Skewbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Python bindings for the skewbench core.

#include <optional>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "skewbench/datagen.h"
#include "skewbench/experiment.h"
#include "skewbench/inference.h"
#include "skewbench/metrics.h"
#include "skewbench/nncore.h"
#include "skewbench/strategies.h"

namespace py = pybind11;

namespace skewbench {
namespace {

// Examples x features, one row per example.
Eigen::MatrixXd FeatureRows(const Dataset& d) {
  return d.GatherAll().transpose();
}

Dataset DatasetFromArrays(const Eigen::MatrixXd& features,
                          const std::vector<int>& labels,
                          const std::vector<int>& domains, int n_classes,
                          int n_domains) {
  if (features.rows() != static_cast<Eigen::Index>(labels.size()) ||
      labels.size() != domains.size()) {
    throw InvalidArgumentError("features, labels and domains disagree in length");
  }
  Dataset d(n_classes, n_domains, static_cast<int>(features.cols()));
  d.Reserve(labels.size());
  std::vector<float> row(features.cols());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
      row[j] = static_cast<float>(features(i, j));
    }
    d.Append(static_cast<uint32_t>(i), row, labels[i], domains[i]);
  }
  return d;
}

std::vector<LayerSpec> Trunk(const std::vector<int>& widths) {
  std::vector<LayerSpec> out;
  for (int w : widths) out.push_back({w, Activation::kRelu});
  return out;
}

}  // namespace
}  // namespace skewbench

PYBIND11_MODULE(_skewbench, m) {
  using namespace skewbench;
  m.doc() = "Bias mitigation benchmark on class/domain skewed data.";
  m.attr("__version__") = std::string(kVersion);

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<InvalidArgumentError>(m, "InvalidArgumentError",
                                               error.ptr());
  py::register_exception<IngestionError>(m, "IngestionError", error.ptr());
  py::register_exception<FormatError>(m, "FormatError", error.ptr());
  py::register_exception<NumericError>(m, "NumericError", error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());

  m.def("derive_seed", &DeriveSeed, py::arg("seed"), py::arg("tag"));

  // Data.
  py::class_<Dataset>(m, "Dataset")
      .def(py::init(&DatasetFromArrays), py::arg("features"),
           py::arg("labels"), py::arg("domains"), py::arg("n_classes"),
           py::arg("n_domains"))
      .def("__len__", &Dataset::size)
      .def_property_readonly("n_classes", &Dataset::n_classes)
      .def_property_readonly("n_domains", &Dataset::n_domains)
      .def_property_readonly("feature_dim", &Dataset::feature_dim)
      .def_property_readonly("features", &FeatureRows)
      .def_property_readonly("labels", &Dataset::labels)
      .def_property_readonly("domains", &Dataset::domains)
      .def_property_readonly("ids", &Dataset::ids)
      .def("cell_counts", &Dataset::CellCounts);

  m.def("write_dataset", &WriteDataset, py::arg("path"), py::arg("dataset"));
  m.def(
      "read_dataset",
      [](const std::filesystem::path& p) { return ReadDataset(p); },
      py::arg("path"));
  m.def("luma_gray", &LumaGray, py::arg("r"), py::arg("g"), py::arg("b"));
  m.def("assign_domains", &AssignDomains, py::arg("n"), py::arg("rho"),
        py::arg("majority"), py::arg("n_domains"), py::arg("seed"));

  py::class_<SyntheticConfig>(m, "SyntheticConfig")
      .def(py::init<>())
      .def_readwrite("n_classes", &SyntheticConfig::n_classes)
      .def_readwrite("feature_dim", &SyntheticConfig::feature_dim)
      .def_readwrite("mean_scale", &SyntheticConfig::mean_scale)
      .def_readwrite("discarded_fraction",
                     &SyntheticConfig::discarded_fraction)
      .def_readwrite("sigma", &SyntheticConfig::sigma)
      .def_readwrite("train_per_class", &SyntheticConfig::train_per_class)
      .def_readwrite("val_per_class", &SyntheticConfig::val_per_class)
      .def_readwrite("test_per_class", &SyntheticConfig::test_per_class)
      .def_readwrite("geometry_seed", &SyntheticConfig::geometry_seed)
      .def("resolved_means", &SyntheticConfig::ResolvedMeans);

  py::class_<SyntheticSplits>(m, "SyntheticSplits")
      .def_readonly("train", &SyntheticSplits::train)
      .def_readonly("val", &SyntheticSplits::val)
      .def_readonly("test_d0", &SyntheticSplits::test_d0)
      .def_readonly("test_d1", &SyntheticSplits::test_d1);

  m.def(
      "build_synthetic",
      [](const SyntheticConfig& cfg, double rho, uint64_t seed) {
        return BuildSynthetic(cfg, SkewSpec::Alternating(cfg.n_classes, rho),
                              seed);
      },
      py::arg("config") = SyntheticConfig{}, py::arg("rho") = 0.95,
      py::arg("seed") = 1);

  // Training.
  py::class_<Strategy>(m, "Strategy")
      .def_static("baseline", &Strategy::Baseline)
      .def_static("oversample", &Strategy::Oversample)
      .def_static("class_balanced", &Strategy::ClassBalanced,
                  py::arg("beta") = 0.9)
      .def_static(
          "adv_uniform_confusion",
          [](double w, const std::string& attach) {
            return Strategy::AdvUniformConfusion(
                w, attach == "final" ? AdvAttach::kFinal
                                     : AdvAttach::kPenultimate);
          },
          py::arg("adv_weight") = 1.0, py::arg("attach") = "penultimate")
      .def_static("adv_reversal_projection", &Strategy::AdvReversalProjection,
                  py::arg("adv_weight") = 1.0)
      .def_static("domain_discriminative", &Strategy::DomainDiscriminative)
      .def_static("domain_independent", &Strategy::DomainIndependent)
      .def_property_readonly("name", &Strategy::Name)
      .def_property_readonly("label", &Strategy::Label)
      .def_property_readonly("layout", [](const Strategy& s) {
        return LayoutName(s.Layout());
      })
      .def("__repr__", [](const Strategy& s) {
        return "<Strategy " + s.Label() + ">";
      });

  py::class_<TrainOptions>(m, "TrainOptions")
      .def(py::init<>())
      .def_property(
          "epochs", [](const TrainOptions& o) { return o.optim.epochs; },
          [](TrainOptions& o, int v) { o.optim.epochs = v; })
      .def_property(
          "lr", [](const TrainOptions& o) { return o.optim.lr; },
          [](TrainOptions& o, double v) { o.optim.lr = v; })
      .def_property(
          "momentum", [](const TrainOptions& o) { return o.optim.momentum; },
          [](TrainOptions& o, double v) { o.optim.momentum = v; })
      .def_property(
          "weight_decay",
          [](const TrainOptions& o) { return o.optim.weight_decay; },
          [](TrainOptions& o, double v) { o.optim.weight_decay = v; })
      .def_property(
          "batch_size",
          [](const TrainOptions& o) { return o.optim.batch_size; },
          [](TrainOptions& o, int v) { o.optim.batch_size = v; })
      .def_property(
          "trunk",
          [](const TrainOptions& o) {
            std::vector<int> w;
            for (const LayerSpec& l : o.trunk) w.push_back(l.width);
            return w;
          },
          [](TrainOptions& o, const std::vector<int>& w) {
            o.trunk = Trunk(w);
          },
          "Hidden ReLU layer widths.");

  py::class_<TrainPrior>(m, "TrainPrior")
      .def_static("uniform", &TrainPrior::Uniform, py::arg("n_classes"),
                  py::arg("n_domains"))
      .def_static("from_counts", &TrainPrior::FromCounts, py::arg("counts"),
                  py::arg("floor") = 1e-6)
      .def_readwrite("joint", &TrainPrior::joint)
      .def_readwrite("test", &TrainPrior::test);

  py::class_<ScoreTable>(m, "ScoreTable")
      .def(py::init<>())
      .def_property(
          "layout", [](const ScoreTable& t) { return LayoutName(t.layout); },
          [](ScoreTable& t, const std::string& v) { t.layout = ParseLayout(v); })
      .def_readwrite("n_classes", &ScoreTable::n_classes)
      .def_readwrite("n_domains", &ScoreTable::n_domains)
      .def_readwrite("ids", &ScoreTable::ids)
      .def_readwrite("y_true", &ScoreTable::y_true)
      .def_readwrite("d_true", &ScoreTable::d_true)
      .def_readwrite("raw", &ScoreTable::raw)
      .def_readwrite("probs", &ScoreTable::probs)
      .def_readwrite("domain_probs", &ScoreTable::domain_probs)
      .def("probabilities", &ScoreTable::Probabilities)
      .def("__len__", &ScoreTable::size);

  py::class_<TrainedModel>(m, "TrainedModel")
      .def_readonly("strategy", &TrainedModel::strategy)
      .def_readonly("train_prior", &TrainedModel::train_prior)
      .def_readonly("n_classes", &TrainedModel::n_classes)
      .def_readonly("n_domains", &TrainedModel::n_domains)
      .def("penultimate", &TrainedModel::Penultimate, py::arg("data"));

  m.def("train", &Train, py::arg("data"), py::arg("strategy"),
        py::arg("options") = TrainOptions{}, py::arg("seed") = 1,
        py::call_guard<py::gil_scoped_release>());
  m.def("fit_domain_posterior", &FitDomainPosterior, py::arg("model"),
        py::arg("data"));
  m.def("score", &Score, py::arg("model"), py::arg("data"));
  m.def("save_model", &SaveModel, py::arg("path"), py::arg("model"));
  m.def("load_model", &LoadModel, py::arg("path"));
  m.def("oversample_indices", &OversampleIndices, py::arg("labels"),
        py::arg("domains"), py::arg("n_classes"), py::arg("n_domains"),
        py::arg("n_draws"), py::arg("seed"));
  m.def("class_balanced_weights", &ClassBalancedWeights, py::arg("counts"),
        py::arg("beta"));
  m.def(
      "uniform_confusion",
      [](const Eigen::VectorXd& q) { return UniformConfusion(q).loss; },
      py::arg("q"));
  m.def("adversary_projection", &AdversaryProjection, py::arg("g_task"),
        py::arg("g_adv"));

  // Inference.
  m.def("prior_shift", &PriorShift, py::arg("posteriors"), py::arg("prior"));
  m.def("rules", [] {
    std::vector<std::string> out;
    for (DecisionRule r : AllRules()) out.push_back(RuleName(r));
    return out;
  });
  m.def(
      "decide",
      [](const ScoreTable& t, const std::string& rule,
         std::optional<TrainPrior> prior) {
        return Decide(t, ParseRule(rule), prior ? &*prior : nullptr);
      },
      py::arg("table"), py::arg("rule"), py::arg("prior") = py::none());

  py::class_<RbaResult>(m, "RbaResult")
      .def_readonly("classes", &RbaResult::classes)
      .def_readonly("domains", &RbaResult::domains)
      .def_readonly("objective", &RbaResult::objective)
      .def_readonly("proven", &RbaResult::proven)
      .def_readonly("iterations", &RbaResult::iterations)
      .def_readonly("max_violation", &RbaResult::max_violation)
      .def_property_readonly("feasible", &RbaResult::feasible);

  auto rba = [](bool brute) {
    return [brute](const Eigen::MatrixXd& log_scores, int n_classes,
                   std::optional<std::vector<int>> known_domains,
                   double target_bias, double epsilon) {
      RbaConfig cfg;
      cfg.target_bias = target_bias;
      cfg.epsilon = epsilon;
      std::vector<int> kd = known_domains.value_or(std::vector<int>{});
      return brute ? RbaBruteforce(log_scores, n_classes, 2, kd, cfg)
                   : RbaSolve(log_scores, n_classes, 2, kd, cfg);
    };
  };
  m.def("rba_solve", rba(false), py::arg("log_scores"), py::arg("n_classes"),
        py::arg("known_domains") = py::none(), py::arg("target_bias") = 0.0,
        py::arg("epsilon") = 0.05);
  m.def("rba_bruteforce", rba(true), py::arg("log_scores"),
        py::arg("n_classes"), py::arg("known_domains") = py::none(),
        py::arg("target_bias") = 0.0, py::arg("epsilon") = 0.05);
  m.def("write_scores", &WriteScores, py::arg("path"), py::arg("table"));
  m.def("read_scores", &ReadScores, py::arg("path"));

  // Metrics.
  m.def(
      "mean_class_domain_accuracy",
      [](const std::vector<int>& p, const std::vector<int>& y,
         const std::vector<int>& d, int n, int dd) {
        return MeanClassDomainAccuracy(p, y, d, n, dd);
      },
      py::arg("predicted"), py::arg("y_true"), py::arg("d_true"),
      py::arg("n_classes"), py::arg("n_domains") = 2);
  m.def(
      "bias_amplification",
      [](const std::vector<int>& p, const std::vector<int>& d, int n) {
        return ComputeBiasAmplification(p, d, n).value;
      },
      py::arg("predicted"), py::arg("d_true"), py::arg("n_classes"));
  m.def(
      "weighted_average_precision",
      [](const std::vector<double>& s, const std::vector<int>& l,
         const std::vector<double>& w) {
        return WeightedAveragePrecision(s, l, w);
      },
      py::arg("scores"), py::arg("labels"), py::arg("weights"));
  m.def(
      "best_f_threshold",
      [](const std::vector<double>& s, const std::vector<int>& l) {
        const FThreshold t = BestFThreshold(s, l);
        return py::make_tuple(t.threshold, t.f1);
      },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "dataset_skew",
      [](const Eigen::MatrixXi& counts) { return DatasetSkew(counts).mean; },
      py::arg("counts"));
  m.def(
      "domain_probe",
      [](const Eigen::MatrixXd& features, const std::vector<int>& domains) {
        return DomainProbe(features.transpose(), domains);
      },
      py::arg("features"), py::arg("domains"),
      "Held-out domain accuracy of a linear probe; features are "
      "examples x dim.");
  m.def(
      "summarize",
      [](const std::vector<double>& v) {
        const Summary s = Summarize(v);
        return py::make_tuple(s.mean, s.two_sigma, s.n);
      },
      py::arg("values"));

  // Experiments.
  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def("to_json", &ConfigToJson)
      .def("hash", &ConfigHash);
  m.def("parse_config", &ParseConfig, py::arg("json_text"));
  m.def("load_config", &LoadConfig, py::arg("path"));

  py::class_<RunSummary>(m, "RunSummary")
      .def_readonly("total_cells", &RunSummary::total_cells)
      .def_readonly("skipped_cells", &RunSummary::skipped_cells)
      .def_readonly("completed_cells", &RunSummary::completed_cells)
      .def_readonly("store", &RunSummary::store);
  m.def(
      "run_matrix",
      [](const ExperimentConfig& c, const std::filesystem::path& out,
         bool resume, size_t max_cells, int threads) {
        RunOptions o;
        o.resume = resume;
        o.max_cells = max_cells;
        o.threads = threads;
        return RunMatrix(c, out, o);
      },
      py::arg("config"), py::arg("out_dir"), py::arg("resume") = false,
      py::arg("max_cells") = 0, py::arg("threads") = 0,
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "report",
      [](const std::filesystem::path& dir) {
        const Report r = BuildReport(ReadStore(dir / kStoreFile));
        WriteReport(r, dir);
        return FormatReportTable(r);
      },
      py::arg("out_dir"),
      "Writes report.csv/report.txt (and skew_sweep.csv) and returns the "
      "table text.");
}
