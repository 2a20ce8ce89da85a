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

// Evaluation metrics. All functions are pure and deterministic.

#ifndef SKEWBENCH_METRICS_H_
#define SKEWBENCH_METRICS_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "skewbench/common.h"

namespace skewbench {

// Accuracy of every (y, d) cell, averaged uniformly over the N*D cells.
// Throws InvalidArgumentError if any cell is empty.
double MeanClassDomainAccuracy(std::span<const int> predicted,
                               std::span<const int> y_true,
                               std::span<const int> d_true, int n_classes,
                               int n_domains);

// Accuracy over examples whose true domain is `domain`.
double DomainAccuracy(std::span<const int> predicted,
                      std::span<const int> y_true,
                      std::span<const int> d_true, int domain);

struct BiasAmplification {
  double value = 0.0;
  // Per-class max(Gr, Col) / (Gr + Col) - 0.5; 0 for flagged classes.
  std::vector<double> per_class;
  // Classes never predicted.
  std::vector<int> unpredicted;
};

// Two-domain bias amplification: the mean over classes of the larger
// domain's share of that class's predictions, minus 0.5. Predictions are
// attributed to the example's true domain.
BiasAmplification ComputeBiasAmplification(std::span<const int> predicted,
                                           std::span<const int> d_true,
                                           int n_classes);

// Positives per attribute and group, A x 2 (column g counts group g).
Eigen::MatrixXi AttributeGroupCounts(const Eigen::MatrixXi& labels,
                                     std::span<const int> group);

struct AttributeBias {
  std::vector<double> per_attribute;
  double mean = 0.0;
  // Attributes with no positive predictions; their term is -N_maj/(N_0+N_1).
  std::vector<int> unpredicted;
};

// Multi-label bias amplification. `predicted` is examples x A with 0/1
// entries, `train_counts` is A x 2 positives per group from the training
// set. Per attribute the majority group g* of the training counts gives
// P_g*/(P_0+P_1) - N_g*/(N_0+N_1).
AttributeBias ComputeAttributeBias(const Eigen::MatrixXi& predicted,
                                   std::span<const int> group,
                                   const Eigen::MatrixXi& train_counts);

// Average precision with per-example positive weights: at each positive
// (scores descending, ties by index) precision is TP_w / (TP_w + FP) with
// TP_w the accumulated weight of positives so far; the AP is the
// weight-averaged precision over positives.
double WeightedAveragePrecision(std::span<const double> scores,
                                std::span<const int> labels,
                                std::span<const double> weights);

struct WeightedMap {
  double value = 0.0;
  std::vector<double> per_attribute;  // NaN for skipped attributes
  std::vector<int> skipped;
};

// Mean over attributes of WeightedAveragePrecision with every positive of
// group g weighted by (N_0 + N_1) / (2 N_g). `group_counts` (A x 2) gives
// N_g; when empty the positives of `labels` are counted. Attributes with
// no positives in either group are skipped.
WeightedMap ComputeWeightedMap(const Eigen::MatrixXd& scores,
                               const Eigen::MatrixXi& labels,
                               std::span<const int> group,
                               const Eigen::MatrixXi& group_counts = {});

struct FThreshold {
  double threshold = 0.0;
  double f1 = 0.0;
};

// Threshold maximizing F1 for "score > threshold". Candidates are the
// midpoints between consecutive distinct scores plus one point below the
// minimum; ties go to the lower threshold. Throws InvalidArgumentError
// unless both classes are present.
FThreshold BestFThreshold(std::span<const double> scores,
                          std::span<const int> labels);

struct SkewSummary {
  // Majority-domain fraction of each row's positives; NaN when skipped.
  std::vector<double> per_row;
  double mean = 0.0;
  std::vector<int> skipped;
};

// Rows of `counts` are classes (or attributes), columns are domains.
SkewSummary DatasetSkew(const Eigen::MatrixXi& counts);

struct ProbeOptions {
  double train_fraction = 0.7;
  uint64_t seed = 11;
  double l2 = 1e-3;
  int max_iters = 300;
};

// Held-out accuracy of a linear softmax classifier predicting domains from
// frozen features (dim x examples). The split is stratified by domain.
// Throws InvalidArgumentError if fewer than two domains are present.
double DomainProbe(const Eigen::MatrixXd& features, std::span<const int> domains,
                   const ProbeOptions& options = {});

struct Summary {
  double mean = 0.0;
  // Two sample standard deviations; 0 for a single value.
  double two_sigma = 0.0;
  int n = 0;
};

Summary Summarize(std::span<const double> values);

}  // namespace skewbench

#endif  // SKEWBENCH_METRICS_H_
