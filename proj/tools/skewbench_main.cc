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

// skewbench command-line driver.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "skewbench/datagen.h"
#include "skewbench/experiment.h"
#include "skewbench/inference.h"
#include "skewbench/metrics.h"
#include "skewbench/strategies.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace skewbench {
namespace {

ExperimentConfig ConfigOrDefault(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : LoadConfig(path);
}

int GenData(const std::string& config_path, uint64_t seed,
            std::optional<double> rho, const fs::path& out) {
  const ExperimentConfig config = ConfigOrDefault(config_path);
  const SyntheticSplits s =
      BuildExperimentData(config.dataset, rho.value_or(config.dataset.rho), seed);
  fs::create_directories(out);
  WriteDataset(out / "train.skb", s.train);
  if (!s.val.empty()) WriteDataset(out / "val.skb", s.val);
  WriteDataset(out / "test_d0.skb", s.test_d0);
  WriteDataset(out / "test_d1.skb", s.test_d1);
  std::cout << "wrote " << s.train.size() << " train, " << s.val.size()
            << " val, " << s.test_d0.size() << "+" << s.test_d1.size()
            << " test examples to " << out.string() << "\n";
  return 0;
}

int TrainCmd(const fs::path& data_dir, const std::string& strategy_name,
             double beta, double adv_weight, const std::string& attach,
             const std::string& config_path, uint64_t seed,
             const fs::path& out) {
  const ExperimentConfig config = ConfigOrDefault(config_path);
  Strategy s;
  s.type = Strategy::ParseType(strategy_name);
  s.beta = beta;
  s.adv_weight = adv_weight;
  if (attach == "final" || s.type == StrategyType::kAdvReversalProjection) {
    s.attach = AdvAttach::kFinal;
  } else if (attach != "penultimate") {
    throw InvalidArgumentError("--attach must be penultimate or final");
  }
  const Dataset train = ReadDataset(data_dir / "train.skb", Split::Train());
  TrainedModel model = Train(train, s, config.train, DeriveSeed(seed, "train"));
  if (fs::exists(data_dir / "val.skb")) {
    FitDomainPosterior(model, ReadDataset(data_dir / "val.skb", Split::Val()));
  } else {
    FitDomainPosterior(model, train);
  }
  SaveModel(out, model);
  std::cout << "saved " << s.Label() << " model to " << out.string() << "\n";
  return 0;
}

int ScoreCmd(const fs::path& model_dir, const std::vector<std::string>& files,
             const fs::path& out) {
  const TrainedModel model = LoadModel(model_dir);
  std::vector<Dataset> parts;
  for (const std::string& f : files) parts.push_back(ReadDataset(f));
  std::vector<const Dataset*> ptrs;
  for (const Dataset& d : parts) ptrs.push_back(&d);
  const Dataset data = ptrs.size() == 1 ? parts[0]
                                        : Concatenate(ptrs, Split::Test(-1));
  WriteScores(out, Score(model, data));
  std::cout << "scored " << data.size() << " examples into " << out.string()
            << "\n";
  return 0;
}

std::optional<TrainPrior> ResolvePrior(const std::string& prior,
                                       const ScoreTable& table) {
  if (prior.empty() || prior == "none") return std::nullopt;
  if (prior == "uniform") {
    return TrainPrior::Uniform(table.n_classes, table.n_domains);
  }
  if (fs::is_directory(prior)) return LoadModel(prior).train_prior;
  return ReadPrior(prior);
}

int InferCmd(const fs::path& scores_path, const std::string& rule_name,
             const std::string& prior_arg, double rba_eps,
             double rba_target_bias, bool rba_unknown_domains,
             const fs::path& out) {
  const ScoreTable table = ReadScores(scores_path);
  std::optional<TrainPrior> prior = ResolvePrior(prior_arg, table);
  std::vector<int> pred;
  if (rule_name == "rba") {
    RbaConfig cfg;
    cfg.epsilon = rba_eps;
    cfg.target_bias = rba_target_bias;
    const RbaResult r = RbaSolve(table, cfg, !rba_unknown_domains);
    std::cerr << "rba: " << (r.feasible() ? "feasible" : "infeasible")
              << (r.proven ? " (proven)" : "") << ", objective "
              << r.objective << ", max violation " << r.max_violation << "\n";
    pred = r.classes;
  } else {
    pred = Decide(table, ParseRule(rule_name), prior ? &*prior : nullptr);
  }
  std::ofstream csv(out);
  csv << "id,y_true,d_true,predicted\n";
  for (size_t i = 0; i < pred.size(); ++i) {
    csv << table.ids[i] << "," << table.y_true[i] << "," << table.d_true[i]
        << "," << pred[i] << "\n";
  }
  if (!csv) throw IngestionError("cannot write " + out.string());
  std::cout << "wrote " << pred.size() << " predictions to " << out.string()
            << "\n";
  return 0;
}

int EvalCmd(const fs::path& predictions, int n_classes) {
  std::ifstream in(predictions);
  if (!in) throw IngestionError("cannot open " + predictions.string());
  std::string line;
  std::getline(in, line);
  if (line != "id,y_true,d_true,predicted") {
    throw FormatError(predictions.string() + ": unexpected header");
  }
  ScoreTable table;
  std::vector<int> pred;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string f[4];
    for (auto& x : f) {
      if (!std::getline(ss, x, ',')) {
        throw FormatError(predictions.string() + " line " +
                          std::to_string(line_no) + ": expected 4 fields");
      }
    }
    table.ids.push_back(static_cast<uint32_t>(std::stoul(f[0])));
    table.y_true.push_back(std::stoi(f[1]));
    table.d_true.push_back(std::stoi(f[2]));
    pred.push_back(std::stoi(f[3]));
  }
  if (n_classes <= 0) {
    n_classes = 1 + std::max(*std::max_element(table.y_true.begin(),
                                               table.y_true.end()),
                             *std::max_element(pred.begin(), pred.end()));
  }
  table.n_classes = n_classes;
  table.n_domains = 2;
  const RuleMetrics m = EvaluatePredictions(pred, table);
  json j = {{"mean_accuracy", m.mean_accuracy},
            {"bias", m.bias},
            {"accuracy_d0", m.accuracy_d0},
            {"accuracy_d1", m.accuracy_d1}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int RunMatrixCmd(const std::string& config_path, std::string out, bool resume,
                 size_t max_cells, int threads) {
  const ExperimentConfig config = LoadConfig(config_path);
  if (out.empty()) out = config.output_dir.string();
  if (out.empty()) throw InvalidArgumentError("--out or output_dir required");
  RunOptions opts;
  opts.resume = resume;
  opts.max_cells = max_cells;
  opts.threads = threads;
  opts.log = &std::cerr;
  const RunSummary s = RunMatrix(config, out, opts);
  std::cout << "cells: " << s.total_cells << " total, " << s.skipped_cells
            << " already stored, " << s.completed_cells << " run; store "
            << s.store.string() << "\n";
  return 0;
}

int ReportCmd(const fs::path& dir) {
  const StoredRun run = ReadStore(dir / kStoreFile);
  const Report report = BuildReport(run);
  WriteReport(report, dir);
  std::cout << FormatReportTable(report);
  return 0;
}

}  // namespace
}  // namespace skewbench

int main(int argc, char** argv) {
  using namespace skewbench;
  CLI::App app{"skewbench: bias mitigation benchmark on skewed data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  std::string config, out, data, strategy = "baseline", attach = "penultimate",
                               model, scores, rule, prior, predictions;
  uint64_t seed = 1;
  std::optional<double> rho;
  double beta = 0.9, adv_weight = 1.0, rba_eps = 0.05, rba_bias = 0.0;
  bool resume = false, rba_unknown = false;
  size_t max_cells = 0;
  int threads = 0, n_classes = 0;
  std::vector<std::string> data_files;

  auto* gen = app.add_subcommand("gen-data", "Build a skewed dataset");
  gen->add_option("--config", config, "Experiment config (JSON)");
  gen->add_option("--seed", seed, "Seed");
  gen->add_option("--rho", rho, "Skew level (default: config's)");
  gen->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one strategy");
  train->add_option("--data", data, "Directory from gen-data")->required();
  train->add_option("--strategy", strategy, "Strategy name");
  train->add_option("--beta", beta, "class_balanced beta");
  train->add_option("--adv-weight", adv_weight, "Adversarial weight");
  train->add_option("--attach", attach, "Adversary input: penultimate|final");
  train->add_option("--config", config, "Config for optim/model blocks");
  train->add_option("--seed", seed, "Seed");
  train->add_option("--out", out, "Model directory")->required();

  auto* score = app.add_subcommand("score", "Score datasets with a model");
  score->add_option("--model", model, "Model directory")->required();
  score->add_option("--data", data_files, "Dataset file(s)")->required();
  score->add_option("--out", out, "Score file (JSONL)")->required();

  auto* infer = app.add_subcommand("infer", "Apply a decision rule");
  infer->add_option("--scores", scores, "Score file")->required();
  infer->add_option("--rule", rule, "Rule name or 'rba'")->required();
  infer->add_option("--prior", prior,
                    "Prior JSON, model directory, 'uniform' or 'none'");
  infer->add_option("--rba-eps", rba_eps, "RBA margin");
  infer->add_option("--rba-target-bias", rba_bias, "RBA target bias");
  infer->add_flag("--rba-unknown-domains", rba_unknown,
                  "Let RBA choose domains too");
  infer->add_option("--out", out, "Predictions CSV")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a predictions CSV");
  eval->add_option("--predictions", predictions, "Predictions CSV")->required();
  eval->add_option("--n-classes", n_classes, "Number of classes");

  auto* run = app.add_subcommand("run-matrix", "Run the experiment matrix");
  run->add_option("--config", config, "Experiment config")->required();
  run->add_option("--out", out, "Output directory (default: config's)");
  run->add_flag("--resume", resume, "Skip cells already in the store");
  run->add_option("--max-cells", max_cells, "Stop after this many cells");
  run->add_option("--threads", threads, "Parallel cells");

  auto* report = app.add_subcommand("report", "Summarize a result store");
  report->add_option("--out", out, "Directory holding results.jsonl")
      ->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return GenData(config, seed, rho, out);
    if (*train) {
      return TrainCmd(data, strategy, beta, adv_weight, attach, config, seed,
                      out);
    }
    if (*score) return ScoreCmd(model, data_files, out);
    if (*infer) {
      return InferCmd(scores, rule, prior, rba_eps, rba_bias, rba_unknown, out);
    }
    if (*eval) return EvalCmd(predictions, n_classes);
    if (*run) return RunMatrixCmd(config, out, resume, max_cells, threads);
    if (*report) return ReportCmd(out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
