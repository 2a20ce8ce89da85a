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

#include "skewbench/metrics.h"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "skewbench/nncore.h"

namespace skewbench {
namespace {

void CheckSameLength(size_t a, size_t b, const char* what) {
  if (a != b) {
    throw InvalidArgumentError(std::string(what) + ": length mismatch (" +
                               std::to_string(a) + " vs " + std::to_string(b) +
                               ")");
  }
}

std::vector<size_t> RankDescending(std::span<const double> scores) {
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return scores[a] > scores[b];
  });
  return order;
}

}  // namespace

double MeanClassDomainAccuracy(std::span<const int> predicted,
                               std::span<const int> y_true,
                               std::span<const int> d_true, int n_classes,
                               int n_domains) {
  CheckSameLength(predicted.size(), y_true.size(), "mean_class_domain_accuracy");
  CheckSameLength(predicted.size(), d_true.size(), "mean_class_domain_accuracy");
  Eigen::MatrixXi total = Eigen::MatrixXi::Zero(n_classes, n_domains);
  Eigen::MatrixXi correct = Eigen::MatrixXi::Zero(n_classes, n_domains);
  for (size_t i = 0; i < predicted.size(); ++i) {
    const int y = y_true[i];
    const int d = d_true[i];
    if (y < 0 || y >= n_classes || d < 0 || d >= n_domains) {
      throw InvalidArgumentError("mean_class_domain_accuracy: label or "
                                 "domain out of range");
    }
    ++total(y, d);
    if (predicted[i] == y) ++correct(y, d);
  }
  double sum = 0.0;
  for (int y = 0; y < n_classes; ++y) {
    for (int d = 0; d < n_domains; ++d) {
      if (total(y, d) == 0) {
        throw InvalidArgumentError(
            "mean_class_domain_accuracy: empty cell (y=" + std::to_string(y) +
            ", d=" + std::to_string(d) + ")");
      }
      sum += static_cast<double>(correct(y, d)) / total(y, d);
    }
  }
  return sum / (n_classes * n_domains);
}

double DomainAccuracy(std::span<const int> predicted,
                      std::span<const int> y_true,
                      std::span<const int> d_true, int domain) {
  CheckSameLength(predicted.size(), y_true.size(), "domain_accuracy");
  CheckSameLength(predicted.size(), d_true.size(), "domain_accuracy");
  size_t total = 0;
  size_t correct = 0;
  for (size_t i = 0; i < predicted.size(); ++i) {
    if (d_true[i] != domain) continue;
    ++total;
    if (predicted[i] == y_true[i]) ++correct;
  }
  if (total == 0) {
    throw InvalidArgumentError("domain_accuracy: no examples in domain " +
                               std::to_string(domain));
  }
  return static_cast<double>(correct) / total;
}

BiasAmplification ComputeBiasAmplification(std::span<const int> predicted,
                                           std::span<const int> d_true,
                                           int n_classes) {
  CheckSameLength(predicted.size(), d_true.size(), "bias_amplification");
  if (n_classes < 1) throw InvalidArgumentError("bias_amplification: N < 1");
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(n_classes, 2);
  for (size_t i = 0; i < predicted.size(); ++i) {
    if (d_true[i] != 0 && d_true[i] != 1) {
      throw InvalidArgumentError("bias_amplification needs exactly two "
                                 "domains");
    }
    if (predicted[i] < 0 || predicted[i] >= n_classes) {
      throw InvalidArgumentError("bias_amplification: prediction out of "
                                 "range");
    }
    ++counts(predicted[i], d_true[i]);
  }
  BiasAmplification out;
  out.per_class.assign(n_classes, 0.0);
  double sum = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    const int color = counts(c, 0);
    const int gray = counts(c, 1);
    if (color + gray == 0) {
      out.unpredicted.push_back(c);
      continue;
    }
    out.per_class[c] =
        static_cast<double>(std::max(color, gray)) / (color + gray) - 0.5;
    sum += out.per_class[c];
  }
  if (!out.unpredicted.empty()) {
    std::cerr << "warning: bias_amplification: " << out.unpredicted.size()
              << " class(es) never predicted contribute 0\n";
  }
  out.value = sum / n_classes;
  return out;
}

Eigen::MatrixXi AttributeGroupCounts(const Eigen::MatrixXi& labels,
                                     std::span<const int> group) {
  CheckSameLength(static_cast<size_t>(labels.rows()), group.size(),
                  "attribute_group_counts");
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(labels.cols(), 2);
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    if (group[i] != 0 && group[i] != 1) {
      throw InvalidArgumentError("group labels must be 0 or 1");
    }
    for (Eigen::Index a = 0; a < labels.cols(); ++a) {
      if (labels(i, a) != 0) ++counts(a, group[i]);
    }
  }
  return counts;
}

AttributeBias ComputeAttributeBias(const Eigen::MatrixXi& predicted,
                                   std::span<const int> group,
                                   const Eigen::MatrixXi& train_counts) {
  if (train_counts.rows() != predicted.cols() || train_counts.cols() != 2) {
    throw InvalidArgumentError("attribute_bias: train_counts must be A x 2");
  }
  const Eigen::MatrixXi p = AttributeGroupCounts(predicted, group);
  AttributeBias out;
  out.per_attribute.resize(predicted.cols());
  for (Eigen::Index a = 0; a < predicted.cols(); ++a) {
    const int n_total = train_counts(a, 0) + train_counts(a, 1);
    if (n_total == 0) {
      throw InvalidArgumentError("attribute_bias: attribute " +
                                 std::to_string(a) +
                                 " has no training positives");
    }
    const int maj = train_counts(a, 1) > train_counts(a, 0) ? 1 : 0;
    const double base = static_cast<double>(train_counts(a, maj)) / n_total;
    const int p_total = p(a, 0) + p(a, 1);
    double share = 0.0;
    if (p_total == 0) {
      out.unpredicted.push_back(static_cast<int>(a));
    } else {
      share = static_cast<double>(p(a, maj)) / p_total;
    }
    out.per_attribute[a] = share - base;
  }
  if (!out.per_attribute.empty()) {
    out.mean = std::accumulate(out.per_attribute.begin(),
                               out.per_attribute.end(), 0.0) /
               static_cast<double>(out.per_attribute.size());
  }
  return out;
}

double WeightedAveragePrecision(std::span<const double> scores,
                                std::span<const int> labels,
                                std::span<const double> weights) {
  CheckSameLength(scores.size(), labels.size(), "weighted_ap");
  CheckSameLength(scores.size(), weights.size(), "weighted_ap");
  const std::vector<size_t> order = RankDescending(scores);
  double tp_w = 0.0;
  double fp = 0.0;
  double acc = 0.0;
  double total_w = 0.0;
  for (size_t i : order) {
    if (labels[i] != 0) {
      tp_w += weights[i];
      acc += weights[i] * (tp_w / (tp_w + fp));
      total_w += weights[i];
    } else {
      fp += 1.0;
    }
  }
  if (total_w <= 0.0) {
    throw InvalidArgumentError("weighted_ap: no positive weight");
  }
  return acc / total_w;
}

WeightedMap ComputeWeightedMap(const Eigen::MatrixXd& scores,
                               const Eigen::MatrixXi& labels,
                               std::span<const int> group,
                               const Eigen::MatrixXi& group_counts) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols()) {
    throw InvalidArgumentError("weighted_map: scores and labels differ in "
                               "shape");
  }
  const Eigen::MatrixXi counts = group_counts.size() == 0
                                     ? AttributeGroupCounts(labels, group)
                                     : group_counts;
  if (counts.rows() != labels.cols() || counts.cols() != 2) {
    throw InvalidArgumentError("weighted_map: group_counts must be A x 2");
  }
  const Eigen::Index n = scores.rows();
  WeightedMap out;
  out.per_attribute.assign(labels.cols(),
                           std::numeric_limits<double>::quiet_NaN());
  std::vector<double> s(n);
  std::vector<int> l(n);
  std::vector<double> w(n);
  double sum = 0.0;
  int used = 0;
  for (Eigen::Index a = 0; a < labels.cols(); ++a) {
    const int n0 = counts(a, 0);
    const int n1 = counts(a, 1);
    bool has_pos = false;
    for (Eigen::Index i = 0; i < n; ++i) has_pos |= labels(i, a) != 0;
    if (n0 == 0 || n1 == 0 || !has_pos) {
      out.skipped.push_back(static_cast<int>(a));
      continue;
    }
    const double w0 = (n0 + n1) / (2.0 * n0);
    const double w1 = (n0 + n1) / (2.0 * n1);
    for (Eigen::Index i = 0; i < n; ++i) {
      s[i] = scores(i, a);
      l[i] = labels(i, a);
      w[i] = group[i] == 0 ? w0 : w1;
    }
    out.per_attribute[a] = WeightedAveragePrecision(s, l, w);
    sum += out.per_attribute[a];
    ++used;
  }
  if (!out.skipped.empty()) {
    std::cerr << "warning: weighted_map: skipped " << out.skipped.size()
              << " attribute(s) without positives in both groups\n";
  }
  if (used == 0) {
    throw InvalidArgumentError("weighted_map: every attribute was skipped");
  }
  out.value = sum / used;
  return out;
}

FThreshold BestFThreshold(std::span<const double> scores,
                          std::span<const int> labels) {
  CheckSameLength(scores.size(), labels.size(), "best_f_threshold");
  size_t n_pos = 0;
  for (int l : labels) n_pos += l != 0;
  if (n_pos == 0 || n_pos == labels.size()) {
    throw InvalidArgumentError(
        "best_f_threshold needs at least one positive and one negative");
  }
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Sweep thresholds upward; everything strictly above is predicted positive.
  const double lowest = scores[order.front()];
  FThreshold best{std::nextafter(lowest, -std::numeric_limits<double>::infinity()),
                  0.0};
  double tp = static_cast<double>(n_pos);
  double fp = static_cast<double>(labels.size() - n_pos);
  best.f1 = 2.0 * tp / (2.0 * tp + fp);
  size_t i = 0;
  while (i < order.size()) {
    const double v = scores[order[i]];
    while (i < order.size() && scores[order[i]] == v) {
      if (labels[order[i]] != 0) {
        tp -= 1.0;
      } else {
        fp -= 1.0;
      }
      ++i;
    }
    if (i == order.size()) break;
    const double t = 0.5 * (v + scores[order[i]]);
    const double f1 = tp > 0.0 ? 2.0 * tp / (2.0 * tp + fp + (n_pos - tp)) : 0.0;
    if (f1 > best.f1) best = {t, f1};
  }
  return best;
}

SkewSummary DatasetSkew(const Eigen::MatrixXi& counts) {
  SkewSummary out;
  out.per_row.assign(counts.rows(), std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int used = 0;
  for (Eigen::Index r = 0; r < counts.rows(); ++r) {
    const int total = counts.row(r).sum();
    if (total <= 0) {
      out.skipped.push_back(static_cast<int>(r));
      continue;
    }
    out.per_row[r] = static_cast<double>(counts.row(r).maxCoeff()) / total;
    sum += out.per_row[r];
    ++used;
  }
  if (!out.skipped.empty()) {
    std::cerr << "warning: dataset_skew: skipped " << out.skipped.size()
              << " row(s) without positives\n";
  }
  out.mean = used ? sum / used : std::numeric_limits<double>::quiet_NaN();
  return out;
}

double DomainProbe(const Eigen::MatrixXd& features, std::span<const int> domains,
                   const ProbeOptions& options) {
  CheckSameLength(static_cast<size_t>(features.cols()), domains.size(),
                  "domain_probe");
  if (!(options.train_fraction > 0.0 && options.train_fraction < 1.0)) {
    throw InvalidArgumentError("domain_probe: train_fraction must be in "
                               "(0, 1)");
  }
  int n_domains = 0;
  for (int d : domains) {
    if (d < 0) throw InvalidArgumentError("domain_probe: negative domain");
    n_domains = std::max(n_domains, d + 1);
  }
  std::vector<std::vector<size_t>> by_domain(n_domains);
  for (size_t i = 0; i < domains.size(); ++i) by_domain[domains[i]].push_back(i);
  int present = 0;
  for (const auto& v : by_domain) present += v.size() >= 2;
  if (present < 2) {
    throw InvalidArgumentError(
        "domain_probe needs at least two examples from each of two domains");
  }
  Rng rng(options.seed);
  std::vector<size_t> train_rows;
  std::vector<size_t> test_rows;
  for (auto& rows : by_domain) {
    if (rows.empty()) continue;
    std::shuffle(rows.begin(), rows.end(), rng);
    size_t k = static_cast<size_t>(
        std::llround(options.train_fraction * static_cast<double>(rows.size())));
    k = std::clamp<size_t>(k, 1, rows.size() - (rows.size() > 1 ? 1 : 0));
    train_rows.insert(train_rows.end(), rows.begin(), rows.begin() + k);
    test_rows.insert(test_rows.end(), rows.begin() + k, rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());

  Eigen::MatrixXd x_train(features.rows(), train_rows.size());
  std::vector<int> d_train(train_rows.size());
  for (size_t j = 0; j < train_rows.size(); ++j) {
    x_train.col(j) = features.col(train_rows[j]);
    d_train[j] = domains[train_rows[j]];
  }
  Eigen::MatrixXd x_test(features.rows(), test_rows.size());
  for (size_t j = 0; j < test_rows.size(); ++j) {
    x_test.col(j) = features.col(test_rows[j]);
  }
  const LinearSoftmaxModel probe = FitLinearSoftmax(
      x_train, d_train, n_domains, options.l2, options.max_iters);
  const std::vector<int> pred = probe.Predict(x_test);
  size_t correct = 0;
  for (size_t j = 0; j < test_rows.size(); ++j) {
    correct += pred[j] == domains[test_rows[j]];
  }
  return static_cast<double>(correct) / static_cast<double>(test_rows.size());
}

Summary Summarize(std::span<const double> values) {
  Summary s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.n;
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.two_sigma = 2.0 * std::sqrt(ss / (s.n - 1));
  }
  return s;
}

}  // namespace skewbench
