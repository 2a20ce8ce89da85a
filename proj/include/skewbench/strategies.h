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

// Bias mitigation strategies: how each one lays out its heads, samples or
// weights the training data, and combines task and adversary gradients.

#ifndef SKEWBENCH_STRATEGIES_H_
#define SKEWBENCH_STRATEGIES_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "skewbench/datagen.h"
#include "skewbench/inference.h"
#include "skewbench/nncore.h"

namespace skewbench {

enum class StrategyType {
  kBaseline,
  kOversample,
  kClassBalanced,
  kAdvUniformConfusion,
  kAdvReversalProjection,
  kDomainDiscriminative,
  kDomainIndependent,
};

enum class AdvAttach { kPenultimate, kFinal };

struct Strategy {
  StrategyType type = StrategyType::kBaseline;
  // kClassBalanced only.
  double beta = 0.9;
  // Adversarial strategies only.
  double adv_weight = 1.0;
  AdvAttach attach = AdvAttach::kPenultimate;

  static Strategy Baseline() { return {}; }
  static Strategy Oversample() { return {StrategyType::kOversample}; }
  static Strategy ClassBalanced(double beta) {
    return {StrategyType::kClassBalanced, beta};
  }
  static Strategy AdvUniformConfusion(
      double adv_weight, AdvAttach attach = AdvAttach::kPenultimate) {
    return {StrategyType::kAdvUniformConfusion, 0.9, adv_weight, attach};
  }
  // The adversary reads the task logits.
  static Strategy AdvReversalProjection(double adv_weight) {
    return {StrategyType::kAdvReversalProjection, 0.9, adv_weight,
            AdvAttach::kFinal};
  }
  static Strategy DomainDiscriminative() {
    return {StrategyType::kDomainDiscriminative};
  }
  static Strategy DomainIndependent() {
    return {StrategyType::kDomainIndependent};
  }

  // Type name, e.g. "class_balanced".
  std::string Name() const;
  // Name plus parameters, e.g. "class_balanced(beta=0.9)". Unique per
  // distinct configuration; used as the strategy key in result stores.
  std::string Label() const;
  ScoreLayout Layout() const;
  bool UsesDomainLabels() const;
  void Validate() const;

  static StrategyType ParseType(std::string_view name);
};

// Draws n_draws indices: a non-empty (y, d) cell uniformly, then an example
// uniformly inside it. Empty cells are excluded (and logged to stderr).
std::vector<size_t> OversampleIndices(std::span<const int> labels,
                                      std::span<const int> domains,
                                      int n_classes, int n_domains,
                                      size_t n_draws, uint64_t seed);

// Per-cell (1 - beta) / (1 - beta^n), rescaled so the count-weighted mean
// is 1. Throws InvalidArgumentError on a zero count or beta outside [0, 1).
Eigen::MatrixXd ClassBalancedWeights(const Eigen::MatrixXi& cell_counts,
                                     double beta);

// -(1/D) sum_d log q_d with q clamped below at 1e-12; dlogits holds dL/dq.
LossGrad UniformConfusion(const Eigen::VectorXd& q);
// The same loss as a function of adversary logits: dL/dz = q - 1/D.
LossGrad UniformConfusionFromLogits(const Eigen::VectorXd& logits);

// g_task minus its projection on g_adv; g_task unchanged when
// |g_adv| <= 1e-12.
Eigen::VectorXd AdversaryProjection(const Eigen::VectorXd& g_task,
                                    const Eigen::VectorXd& g_adv);

enum class Augmentation { kAuto, kNone, kCropFlip };

struct TrainOptions {
  OptimConfig optim;
  std::vector<LayerSpec> trunk = {{64, Activation::kRelu},
                                  {64, Activation::kRelu}};
  // kAuto applies crop/flip to 3x32x32 image features only.
  Augmentation augmentation = Augmentation::kAuto;
};

struct TrainedModel {
  Network network;
  Strategy strategy;
  ScoreLayout layout = ScoreLayout::kPlain;
  TrainPrior train_prior;
  int n_classes = 0;
  int n_domains = 0;
  // P(d|x) estimator on frozen penultimate features, when fitted.
  std::optional<LinearSoftmaxModel> domain_head;

  // Trunk output for every row, feature_dim x rows.
  Eigen::MatrixXd Penultimate(const Dataset& data) const;
};

// Thrown when the loss or a gradient stops being finite. Carries the
// parameters as of the last completed epoch.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, Network last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const Network& last_good() const { return last_good_; }

 private:
  Network last_good_;
};

NetworkSpec BuildNetworkSpec(const Strategy& strategy, int input_dim,
                             int n_classes, int n_domains,
                             const std::vector<LayerSpec>& trunk);

TrainedModel Train(const Dataset& train, const Strategy& strategy,
                   const TrainOptions& options, uint64_t seed);

// Fits the P(d|x) head on frozen penultimate features of `data`.
void FitDomainPosterior(TrainedModel& model, const Dataset& data);

// Raw head activations (and their softmax) for every row of `data`.
ScoreTable Score(const TrainedModel& model, const Dataset& data);

// model.skbm checkpoint plus a model.meta.json sidecar in `dir`.
void SaveModel(const std::filesystem::path& dir, const TrainedModel& model);
TrainedModel LoadModel(const std::filesystem::path& dir);

}  // namespace skewbench

#endif  // SKEWBENCH_STRATEGIES_H_
