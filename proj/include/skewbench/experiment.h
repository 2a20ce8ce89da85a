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

// Experiment orchestration: JSON configuration, the strategy x rule matrix
// over seeds and skew levels, an append-only result store with resume, and
// report tables.

#ifndef SKEWBENCH_EXPERIMENT_H_
#define SKEWBENCH_EXPERIMENT_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "skewbench/datagen.h"
#include "skewbench/inference.h"
#include "skewbench/metrics.h"
#include "skewbench/nncore.h"
#include "skewbench/strategies.h"

namespace skewbench {

enum class DatasetKind { kSynthetic, kCifar10S };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::kSynthetic;
  SyntheticConfig synthetic;
  std::filesystem::path cifar_dir;
  // Domain-1 transform for CIFAR-10S (synthetic data uses
  // synthetic.domain_transform).
  DomainTransform cifar_transform = DomainTransform::GrayscaleLuma();
  // Headline skew level.
  double rho = 0.95;
  // Extra skew levels for the sweep summary; may include rho.
  std::vector<double> rho_sweep;

  // Headline level first, then the remaining sweep levels ascending.
  std::vector<double> AllRhos() const;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  std::vector<Strategy> strategies = {Strategy::Baseline()};
  std::vector<DecisionRule> rules = AllRules();
  TrainOptions train;
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  // Fit a domain probe on penultimate features of the test set.
  bool probe = true;
  // Fit P(d|x) on validation features (needed by
  // domain_weighted_conditional).
  bool domain_posterior = true;
  std::filesystem::path output_dir;

  void Validate() const;
};

// Parses the JSON schema documented in the README. Unknown keys and bad
// values raise ConfigError naming the field path, e.g. "optim.lr".
ExperimentConfig ParseConfig(const std::string& json_text);
ExperimentConfig LoadConfig(const std::filesystem::path& file);
// Canonical JSON: every field written out, keys sorted.
std::string ConfigToJson(const ExperimentConfig& config);
// Hex FNV-1a 64 of the canonical JSON.
std::string ConfigHash(const ExperimentConfig& config);

// Data for one seed and skew level. The data seed is derived from `seed`,
// independently of training.
SyntheticSplits BuildExperimentData(const DatasetConfig& config, double rho,
                                    uint64_t seed);

struct RuleMetrics {
  double mean_accuracy = 0.0;
  double bias = 0.0;
  double accuracy_d0 = 0.0;
  double accuracy_d1 = 0.0;
};

// Metrics of one decision rule on a two-domain test table.
RuleMetrics EvaluatePredictions(std::span<const int> predicted,
                                const ScoreTable& table);

struct ResultRow {
  double rho = 0.0;
  uint64_t seed = 0;
  std::string strategy;  // Strategy::Label()
  std::string rule;
  bool compatible = true;
  std::string reason;  // why incompatible
  // "mean_accuracy", "bias", "accuracy_d0", "accuracy_d1", "probe".
  std::map<std::string, double> metrics;
};

// One (rho, seed, strategy) unit of work.
struct CellKey {
  double rho = 0.0;
  uint64_t seed = 0;
  std::string strategy;

  std::string ToString() const;
  auto operator<=>(const CellKey&) const = default;
};

// Trains, scores and evaluates one cell. Deterministic.
std::vector<ResultRow> RunCell(const ExperimentConfig& config,
                               const Strategy& strategy, double rho,
                               uint64_t seed);

struct RunOptions {
  bool resume = false;
  // Stop after this many newly completed cells; 0 runs everything.
  size_t max_cells = 0;
  // Parallel cells; 0 reads SKEWBENCH_THREADS (default 1).
  int threads = 0;
  std::ostream* log = nullptr;
};

struct RunSummary {
  size_t total_cells = 0;
  size_t skipped_cells = 0;  // already in the store
  size_t completed_cells = 0;
  std::filesystem::path store;
};

inline constexpr char kStoreFile[] = "results.jsonl";

// Runs every cell into <out_dir>/results.jsonl. Without `resume` an
// existing store is replaced. With `resume`, cells already stored are
// skipped; a store written for a different configuration is refused with
// ConfigError.
RunSummary RunMatrix(const ExperimentConfig& config,
                     const std::filesystem::path& out_dir,
                     const RunOptions& options = {});

struct StoredRun {
  std::string config_hash;
  std::string version;
  std::string precision;
  ExperimentConfig config;
  std::vector<ResultRow> rows;
  std::vector<CellKey> cells;
};

// Reads a store; a truncated final line is ignored.
StoredRun ReadStore(const std::filesystem::path& store_file);

struct ReportRow {
  std::string strategy;
  std::string rule;
  std::string metric;
  Summary summary;
};

struct SweepRow {
  std::string strategy;
  std::string rule;
  double rho = 0.0;
  Summary accuracy;
  Summary bias;
};

struct Report {
  std::vector<ReportRow> rows;      // headline rho, sorted
  std::vector<SweepRow> sweep;      // empty without a sweep
  std::vector<std::pair<std::string, std::string>> incompatible;
};

// The rule each strategy is usually read with: sum_activations for
// domain_independent, sum_joint_shifted for domain_discriminative, argmax
// otherwise.
DecisionRule CanonicalRule(const Strategy& strategy);

Report BuildReport(const StoredRun& run);
// Writes report.csv, report.txt and (when swept) skew_sweep.csv into
// `out_dir`.
void WriteReport(const Report& report, const std::filesystem::path& out_dir);
std::string FormatReportTable(const Report& report);

}  // namespace skewbench

#endif  // SKEWBENCH_EXPERIMENT_H_
