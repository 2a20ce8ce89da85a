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

// Inference-time de-biasing: prior shift of joint (class, domain)
// posteriors, the decision rules that turn score tables into class
// predictions, and corpus-level constrained inference (RBA) together with
// an exhaustive oracle for it.

#ifndef SKEWBENCH_INFERENCE_H_
#define SKEWBENCH_INFERENCE_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "skewbench/common.h"

namespace skewbench {

class IncompatibleRuleError : public InvalidArgumentError {
 public:
  using InvalidArgumentError::InvalidArgumentError;
};

// Column layout of ScoreTable::raw:
//   kPlain      N columns, s(y, x)
//   kJoint      N*D columns, column y*D + d holds s(y, d, x)
//   kPerDomain  D*N columns, column d*N + y holds head d's s(y, d, x)
enum class ScoreLayout { kPlain, kJoint, kPerDomain };

std::string LayoutName(ScoreLayout layout);
ScoreLayout ParseLayout(std::string_view name);

struct ScoreTable {
  ScoreLayout layout = ScoreLayout::kPlain;
  int n_classes = 0;
  int n_domains = 1;
  std::vector<uint32_t> ids;
  std::vector<int> y_true;  // -1 when unknown
  std::vector<int> d_true;  // -1 when unknown
  Eigen::MatrixXd raw;      // examples x Width()
  // Optional. Rows over the layout's event space: all N*D cells for
  // kJoint, each head's N classes for kPerDomain.
  Eigen::MatrixXd probs;
  // Optional P(d|x), examples x D.
  Eigen::MatrixXd domain_probs;

  size_t size() const { return ids.size(); }
  int Width() const;
  int Column(int y, int d) const;
  bool HasKnownDomains() const;
  // `probs` if present, otherwise the layout-appropriate softmax of raw.
  Eigen::MatrixXd Probabilities() const;
  void Validate() const;
};

// Appends b's rows to a. Layouts and shapes must agree.
ScoreTable ConcatenateScores(const ScoreTable& a, const ScoreTable& b);

struct TrainPrior {
  // P_tr(y, d), N x D, sums to 1.
  Eigen::MatrixXd joint;
  // Optional target P_te(y, d); empty means uniform.
  Eigen::MatrixXd test;

  static TrainPrior Uniform(int n_classes, int n_domains);
  // Empirical distribution of the counts, floored at `floor` and
  // renormalized.
  static TrainPrior FromCounts(const Eigen::MatrixXi& counts,
                               double floor = 1e-6);
  TrainPrior Smoothed(double floor = 1e-6) const;
  Eigen::MatrixXd TestJoint() const;
  void Validate() const;
};

// Row-wise P_tr(y,d|x) * P_te(y,d) / P_tr(y,d), renormalized. `posteriors`
// is examples x (N*D) in kJoint column order. Throws InvalidArgumentError
// if the prior has a zero cell (smooth it first).
Eigen::MatrixXd PriorShift(const Eigen::MatrixXd& posteriors,
                           const TrainPrior& prior);

enum class DecisionRule {
  kArgmax,                     // argmax_y P(y|x), plain layout
  kSumJointTrain,              // argmax_y sum_d P_tr(y,d|x)
  kMaxJointShifted,            // argmax_y max_d P_te(y,d|x)
  kSumJointShifted,            // argmax_y sum_d P_te(y,d|x)
  kKnownDomain,                // argmax_y P(y|d*,x)
  kMaxConditional,             // argmax_y max_d P(y|d,x)
  kDomainWeightedConditional,  // argmax_y sum_d P(y|d,x) P(d|x)
  kSumActivations,             // argmax_y sum_d s(y,d,x)
};

std::string RuleName(DecisionRule rule);
DecisionRule ParseRule(std::string_view name);
std::vector<DecisionRule> AllRules();

// Why `rule` cannot run on `table` (with or without a prior), or nullopt.
std::optional<std::string> IncompatibilityReason(const ScoreTable& table,
                                                 DecisionRule rule,
                                                 bool has_prior);

// Class prediction per row; ties go to the lowest class index. Throws
// IncompatibleRuleError for a layout/rule mismatch, a missing prior on a
// shifted rule or missing known domains.
std::vector<int> Decide(const ScoreTable& table, DecisionRule rule,
                        const TrainPrior* prior = nullptr);

struct RbaConfig {
  // Target share of domain 0 among each class's predictions is
  // 0.5 + target_bias.
  double target_bias = 0.0;
  double epsilon = 0.05;
  double step_size = 0.1;
  int max_iters = 500;
  // Slack on constraint values, in example counts.
  double tolerance = 1e-9;
  // Node limit for the exact branch-and-bound refinement; 0 disables it.
  size_t exact_node_budget = 2'000'000;

  void Validate() const;
};

enum class RbaStatus { kFeasible, kInfeasible };

struct RbaResult {
  std::vector<int> classes;
  std::vector<int> domains;
  // Sum of the chosen log-scores.
  double objective = 0.0;
  RbaStatus status = RbaStatus::kInfeasible;
  // Branch-and-bound closed the search: the objective is optimal, or the
  // instance is proven infeasible.
  bool proven = false;
  int iterations = 0;
  // Largest constraint excess over epsilon, as a domain-ratio difference.
  double max_violation = 0.0;

  bool feasible() const { return status == RbaStatus::kFeasible; }
};

// Constrained inference over a log-score matrix. With `known_domains`
// (one per row) the matrix is examples x N and only classes are chosen;
// without, it is examples x (N*D) in kJoint order and each row picks a
// (class, domain) cell. Only D = 2 is supported.
RbaResult RbaSolve(const Eigen::MatrixXd& log_scores, int n_classes,
                   int n_domains, std::span<const int> known_domains,
                   const RbaConfig& config);

// Exhaustive search of the same problem: the highest-objective feasible
// assignment, first in lexicographic order on ties. Throws
// InvalidArgumentError beyond 16 examples or 2^26 assignments.
RbaResult RbaBruteforce(const Eigen::MatrixXd& log_scores, int n_classes,
                        int n_domains, std::span<const int> known_domains,
                        const RbaConfig& config);

// Log-scores RBA optimizes for a table: log sum_d P_tr(y,d|x) per class
// when domains are known, log P_tr(y,d|x) per cell otherwise.
Eigen::MatrixXd RbaLogScores(const ScoreTable& table, bool use_known_domains);

RbaResult RbaSolve(const ScoreTable& table, const RbaConfig& config,
                   bool use_known_domains);
RbaResult RbaBruteforce(const ScoreTable& table, const RbaConfig& config,
                        bool use_known_domains);

// Score files hold one JSON object per line:
//   {"id":..,"y_true":..,"d_true":..,"layout":"joint_ND","scores":..,
//    "probs":..,"domain_probs":[..]}
// "scores" (and the optional "probs") are nested by layout: a flat list of N
// for plain_N, N lists of D for joint_ND, D lists of N for per_domain_DxN.
// Every line must share one layout and shape.
void WriteScores(const std::filesystem::path& file, const ScoreTable& table);
ScoreTable ReadScores(const std::filesystem::path& file);

// {"joint": [[..]], "test": [[..]]} with N x D rows; "test" optional.
void WritePrior(const std::filesystem::path& file, const TrainPrior& prior);
TrainPrior ReadPrior(const std::filesystem::path& file);

}  // namespace skewbench

#endif  // SKEWBENCH_INFERENCE_H_
