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

#include "skewbench/strategies.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>

#include "json.hpp"

namespace skewbench {
namespace {

using json = nlohmann::json;

constexpr char kTaskHead[] = "task";
constexpr char kAdversaryHead[] = "adversary";

std::string DomainHead(int d) { return "domain" + std::to_string(d); }

std::string FormatParam(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

json MatrixToJson(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd MatrixFromJson(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols) {
      throw FormatError("ragged matrix in model metadata");
    }
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

Eigen::VectorXd VectorFromJson(const json& j) {
  Eigen::VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

json VectorToJson(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

bool UseAugmentation(const Dataset& data, Augmentation a) {
  switch (a) {
    case Augmentation::kNone:
      return false;
    case Augmentation::kCropFlip:
      if (data.feature_dim() != kImageDim) {
        throw InvalidArgumentError("crop/flip augmentation needs 3x32x32 "
                                   "image features");
      }
      return true;
    case Augmentation::kAuto:
      return data.feature_dim() == kImageDim;
  }
  return false;
}

Eigen::MatrixXd GatherBatch(const Dataset& data, std::span<const size_t> rows,
                            bool augment, Rng& rng) {
  if (!augment) return data.Gather(rows);
  Eigen::MatrixXd out(data.feature_dim(), static_cast<Eigen::Index>(rows.size()));
  for (size_t j = 0; j < rows.size(); ++j) {
    const std::vector<float> img =
        Augment(data.features(rows[j]), SampleCropFlip(rng));
    for (int k = 0; k < data.feature_dim(); ++k) out(k, j) = img[k];
  }
  return out;
}

// Uniform confusion on adversary logits, mean over the batch.
BatchLoss ConfusionBatch(const Eigen::MatrixXd& logits) {
  BatchLoss out;
  const Eigen::Index b = logits.cols();
  out.dlogits.resize(logits.rows(), b);
  for (Eigen::Index j = 0; j < b; ++j) {
    LossGrad lg = UniformConfusionFromLogits(logits.col(j));
    out.loss += lg.loss;
    out.dlogits.col(j) = lg.dlogits / static_cast<double>(b);
  }
  if (b > 0) out.loss /= b;
  return out;
}

}  // namespace

std::string Strategy::Name() const {
  switch (type) {
    case StrategyType::kBaseline:
      return "baseline";
    case StrategyType::kOversample:
      return "oversample";
    case StrategyType::kClassBalanced:
      return "class_balanced";
    case StrategyType::kAdvUniformConfusion:
      return "adv_uniform_confusion";
    case StrategyType::kAdvReversalProjection:
      return "adv_reversal_projection";
    case StrategyType::kDomainDiscriminative:
      return "domain_discriminative";
    case StrategyType::kDomainIndependent:
      return "domain_independent";
  }
  return "unknown";
}

std::string Strategy::Label() const {
  switch (type) {
    case StrategyType::kClassBalanced:
      return Name() + "(beta=" + FormatParam(beta) + ")";
    case StrategyType::kAdvUniformConfusion:
      return Name() + "(w=" + FormatParam(adv_weight) + "," +
             (attach == AdvAttach::kPenultimate ? "penultimate" : "final") +
             ")";
    case StrategyType::kAdvReversalProjection:
      return Name() + "(w=" + FormatParam(adv_weight) + ")";
    default:
      return Name();
  }
}

StrategyType Strategy::ParseType(std::string_view name) {
  for (StrategyType t :
       {StrategyType::kBaseline, StrategyType::kOversample,
        StrategyType::kClassBalanced, StrategyType::kAdvUniformConfusion,
        StrategyType::kAdvReversalProjection,
        StrategyType::kDomainDiscriminative,
        StrategyType::kDomainIndependent}) {
    if (Strategy{t}.Name() == name) return t;
  }
  throw InvalidArgumentError("unknown strategy '" + std::string(name) + "'");
}

ScoreLayout Strategy::Layout() const {
  switch (type) {
    case StrategyType::kDomainDiscriminative:
      return ScoreLayout::kJoint;
    case StrategyType::kDomainIndependent:
      return ScoreLayout::kPerDomain;
    default:
      return ScoreLayout::kPlain;
  }
}

bool Strategy::UsesDomainLabels() const {
  return type != StrategyType::kBaseline;
}

void Strategy::Validate() const {
  if (type == StrategyType::kClassBalanced && !(beta >= 0.0 && beta < 1.0)) {
    throw InvalidArgumentError("class-balanced beta must lie in [0, 1)");
  }
  if ((type == StrategyType::kAdvUniformConfusion ||
       type == StrategyType::kAdvReversalProjection) &&
      !(adv_weight >= 0.0)) {
    throw InvalidArgumentError("adv_weight must be >= 0");
  }
}

std::vector<size_t> OversampleIndices(std::span<const int> labels,
                                      std::span<const int> domains,
                                      int n_classes, int n_domains,
                                      size_t n_draws, uint64_t seed) {
  if (labels.size() != domains.size()) {
    throw InvalidArgumentError("oversample: label and domain counts differ");
  }
  std::vector<std::vector<size_t>> cells(
      static_cast<size_t>(n_classes) * n_domains);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes || domains[i] < 0 ||
        domains[i] >= n_domains) {
      throw InvalidArgumentError("oversample: label or domain out of range");
    }
    cells[labels[i] * n_domains + domains[i]].push_back(i);
  }
  std::vector<const std::vector<size_t>*> live;
  for (size_t c = 0; c < cells.size(); ++c) {
    if (cells[c].empty()) {
      std::cerr << "warning: oversample: cell (y=" << c / n_domains
                << ", d=" << c % n_domains
                << ") is empty and is excluded\n";
    } else {
      live.push_back(&cells[c]);
    }
  }
  std::vector<size_t> out;
  if (n_draws == 0) return out;
  if (live.empty()) throw InvalidArgumentError("oversample: no examples");
  out.reserve(n_draws);
  Rng rng(seed);
  std::uniform_int_distribution<size_t> pick_cell(0, live.size() - 1);
  for (size_t k = 0; k < n_draws; ++k) {
    const std::vector<size_t>& cell = *live[pick_cell(rng)];
    std::uniform_int_distribution<size_t> pick(0, cell.size() - 1);
    out.push_back(cell[pick(rng)]);
  }
  return out;
}

Eigen::MatrixXd ClassBalancedWeights(const Eigen::MatrixXi& cell_counts,
                                     double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) {
    throw InvalidArgumentError("class-balanced beta must lie in [0, 1)");
  }
  if (cell_counts.size() == 0 || (cell_counts.array() < 1).any()) {
    throw InvalidArgumentError(
        "class-balanced weights need every cell count >= 1");
  }
  Eigen::MatrixXd w(cell_counts.rows(), cell_counts.cols());
  double weighted = 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      const double n = cell_counts(i, j);
      w(i, j) = (1.0 - beta) / (1.0 - std::pow(beta, n));
      weighted += n * w(i, j);
      total += n;
    }
  }
  return w / (weighted / total);
}

LossGrad UniformConfusion(const Eigen::VectorXd& q) {
  if (q.size() == 0) throw InvalidArgumentError("uniform_confusion: empty q");
  const double d = static_cast<double>(q.size());
  const Eigen::VectorXd clamped = q.cwiseMax(1e-12);
  LossGrad out;
  out.loss = -clamped.array().log().sum() / d;
  out.dlogits = (-1.0 / d) * clamped.cwiseInverse();
  return out;
}

LossGrad UniformConfusionFromLogits(const Eigen::VectorXd& logits) {
  const Eigen::VectorXd q = Softmax(logits);
  LossGrad out;
  out.loss = UniformConfusion(q).loss;
  out.dlogits = q.array() - 1.0 / static_cast<double>(q.size());
  return out;
}

Eigen::VectorXd AdversaryProjection(const Eigen::VectorXd& g_task,
                                    const Eigen::VectorXd& g_adv) {
  if (g_task.size() != g_adv.size()) {
    throw InvalidArgumentError("adversary_projection: dimension mismatch");
  }
  const double norm2 = g_adv.squaredNorm();
  if (std::sqrt(norm2) <= 1e-12) return g_task;
  return g_task - (g_task.dot(g_adv) / norm2) * g_adv;
}

NetworkSpec BuildNetworkSpec(const Strategy& strategy, int input_dim,
                             int n_classes, int n_domains,
                             const std::vector<LayerSpec>& trunk) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.trunk = trunk;
  switch (strategy.type) {
    case StrategyType::kBaseline:
    case StrategyType::kOversample:
    case StrategyType::kClassBalanced:
      spec.heads.push_back({kTaskHead, n_classes, HeadRole::kTask, ""});
      break;
    case StrategyType::kAdvUniformConfusion:
    case StrategyType::kAdvReversalProjection:
      spec.heads.push_back({kTaskHead, n_classes, HeadRole::kTask, ""});
      spec.heads.push_back(
          {kAdversaryHead, n_domains, HeadRole::kAdversary,
           strategy.attach == AdvAttach::kFinal ? kTaskHead : ""});
      break;
    case StrategyType::kDomainDiscriminative:
      spec.heads.push_back(
          {kTaskHead, n_classes * n_domains, HeadRole::kTask, ""});
      break;
    case StrategyType::kDomainIndependent:
      for (int d = 0; d < n_domains; ++d) {
        spec.heads.push_back({DomainHead(d), n_classes, HeadRole::kTask, ""});
      }
      break;
  }
  spec.Validate();
  return spec;
}

TrainedModel Train(const Dataset& train, const Strategy& strategy,
                   const TrainOptions& options, uint64_t seed) {
  strategy.Validate();
  options.optim.Validate();
  if (train.empty()) throw InvalidArgumentError("train: empty dataset");
  const int n_classes = train.n_classes();
  const int n_domains = train.n_domains();
  const Eigen::MatrixXi counts = train.CellCounts();

  NetworkSpec spec = BuildNetworkSpec(strategy, train.feature_dim(), n_classes,
                                      n_domains, options.trunk);
  Network net = Network::Create(spec, DeriveSeed(seed, "init"));
  OptimState state = OptimState::For(net.params());

  Eigen::MatrixXd cell_weights;
  if (strategy.type == StrategyType::kClassBalanced) {
    cell_weights = ClassBalancedWeights(counts, strategy.beta);
  }
  const bool augment = UseAugmentation(train, options.augmentation);
  Rng order_rng(DeriveSeed(seed, "order"));
  Rng augment_rng(DeriveSeed(seed, "augment"));

  const int adv_layer = spec.heads.size() > 1 &&
                                spec.heads.back().role == HeadRole::kAdversary
                            ? net.HeadLayer(kAdversaryHead)
                            : -1;
  std::vector<int> shared_layers;
  for (int l = 0; l < static_cast<int>(net.params().layers.size()); ++l) {
    if (l != adv_layer) shared_layers.push_back(l);
  }

  const size_t n = train.size();
  const auto batch_size = static_cast<size_t>(options.optim.batch_size);
  std::vector<size_t> order(n);
  std::vector<int> targets;
  std::vector<int> domain_targets;
  std::vector<double> weights;

  for (int epoch = 0; epoch < options.optim.epochs; ++epoch) {
    const Network epoch_start = net;
    const double lr = options.optim.LearningRate(epoch);
    if (strategy.type == StrategyType::kOversample) {
      order = OversampleIndices(
          train.labels(), train.domains(), n_classes, n_domains, n,
          DeriveSeed(seed, "oversample/" + std::to_string(epoch)));
    } else {
      std::iota(order.begin(), order.end(), size_t{0});
      std::shuffle(order.begin(), order.end(), order_rng);
    }

    for (size_t start = 0; start < n; start += batch_size) {
      const size_t stop = std::min(n, start + batch_size);
      const std::span<const size_t> rows(order.data() + start, stop - start);
      const auto b = static_cast<Eigen::Index>(rows.size());
      const ForwardTrace trace =
          Forward(net, GatherBatch(train, rows, augment, augment_rng));

      targets.resize(b);
      domain_targets.resize(b);
      for (Eigen::Index j = 0; j < b; ++j) {
        targets[j] = train.label(rows[j]);
        domain_targets[j] = train.domain(rows[j]);
      }

      double loss = 0.0;
      Gradients grads;
      switch (strategy.type) {
        case StrategyType::kBaseline:
        case StrategyType::kOversample:
        case StrategyType::kClassBalanced: {
          std::span<const double> w;
          if (strategy.type == StrategyType::kClassBalanced) {
            weights.resize(b);
            for (Eigen::Index j = 0; j < b; ++j) {
              weights[j] = cell_weights(targets[j], domain_targets[j]);
            }
            w = weights;
          }
          BatchLoss bl = SoftmaxXentBatch(trace.head_logits[0], targets, w);
          loss = bl.loss;
          grads = Backward(net, trace, {{kTaskHead, std::move(bl.dlogits)}});
          break;
        }
        case StrategyType::kDomainDiscriminative: {
          for (Eigen::Index j = 0; j < b; ++j) {
            targets[j] = targets[j] * n_domains + domain_targets[j];
          }
          BatchLoss bl = SoftmaxXentBatch(trace.head_logits[0], targets);
          loss = bl.loss;
          grads = Backward(net, trace, {{kTaskHead, std::move(bl.dlogits)}});
          break;
        }
        case StrategyType::kDomainIndependent: {
          // Each example reaches only its own domain's head.
          HeadGradients hg;
          for (int d = 0; d < n_domains; ++d) {
            const Eigen::MatrixXd& logits = trace.head_logits[d];
            Eigen::MatrixXd g = Eigen::MatrixXd::Zero(logits.rows(), b);
            bool any = false;
            for (Eigen::Index j = 0; j < b; ++j) {
              if (domain_targets[j] != d) continue;
              any = true;
              LossGrad lg = SoftmaxXent(logits.col(j), targets[j]);
              loss += lg.loss / b;
              g.col(j) = lg.dlogits / static_cast<double>(b);
            }
            if (any) hg.emplace(DomainHead(d), std::move(g));
          }
          grads = Backward(net, trace, hg);
          break;
        }
        case StrategyType::kAdvUniformConfusion: {
          BatchLoss task = SoftmaxXentBatch(trace.head_logits[0], targets);
          BatchLoss confusion = ConfusionBatch(trace.head_logits[1]);
          loss = task.loss + strategy.adv_weight * confusion.loss;
          grads = Backward(
              net, trace,
              {{kTaskHead, std::move(task.dlogits)},
               {kAdversaryHead, strategy.adv_weight * confusion.dlogits}});
          // The adversary itself learns to predict d on detached features.
          BatchLoss adv = SoftmaxXentBatch(trace.head_logits[1], domain_targets);
          const Gradients adv_grads =
              Backward(net, trace, {{kAdversaryHead, std::move(adv.dlogits)}});
          grads.grads.layers[adv_layer] = adv_grads.grads.layers[adv_layer];
          grads.touched[adv_layer] = true;
          break;
        }
        case StrategyType::kAdvReversalProjection: {
          BatchLoss task = SoftmaxXentBatch(trace.head_logits[0], targets);
          BatchLoss adv = SoftmaxXentBatch(trace.head_logits[1], domain_targets);
          loss = task.loss;
          grads = Backward(net, trace, {{kTaskHead, std::move(task.dlogits)}});
          const Gradients adv_grads =
              Backward(net, trace, {{kAdversaryHead, std::move(adv.dlogits)}});
          // Shared update: drop the task gradient's component along the
          // adversary gradient, then push against the adversary.
          const Eigen::VectorXd g_task = grads.grads.Flatten(shared_layers);
          const Eigen::VectorXd g_adv = adv_grads.grads.Flatten(shared_layers);
          grads.grads.Unflatten(shared_layers,
                                AdversaryProjection(g_task, g_adv) -
                                    strategy.adv_weight * g_adv);
          grads.grads.layers[adv_layer] = adv_grads.grads.layers[adv_layer];
          grads.touched[adv_layer] = true;
          break;
        }
      }

      if (!std::isfinite(loss)) {
        throw TrainingAborted("non-finite loss at epoch " +
                                  std::to_string(epoch) + ", batch " +
                                  std::to_string(start / batch_size),
                              epoch_start);
      }
      try {
        SgdStep(net.mutable_params(), grads, state, lr, options.optim);
      } catch (const NumericError& e) {
        throw TrainingAborted(e.what(), epoch_start);
      }
    }
    if (!net.params().AllFinite()) {
      throw TrainingAborted(
          "parameters diverged in epoch " + std::to_string(epoch),
          epoch_start);
    }
  }

  TrainedModel model{std::move(net), strategy, strategy.Layout(),
                     TrainPrior::FromCounts(counts), n_classes, n_domains,
                     std::nullopt};
  return model;
}

Eigen::MatrixXd TrainedModel::Penultimate(const Dataset& data) const {
  Eigen::MatrixXd out(network.spec().FeatureDim(),
                      static_cast<Eigen::Index>(data.size()));
  constexpr size_t kChunk = 2048;
  std::vector<size_t> rows;
  for (size_t start = 0; start < data.size(); start += kChunk) {
    const size_t stop = std::min(data.size(), start + kChunk);
    rows.resize(stop - start);
    std::iota(rows.begin(), rows.end(), start);
    const ForwardTrace trace = Forward(network, data.Gather(rows));
    out.middleCols(start, rows.size()) = trace.Penultimate();
  }
  return out;
}

void FitDomainPosterior(TrainedModel& model, const Dataset& data) {
  model.domain_head = FitLinearSoftmax(model.Penultimate(data),
                                       data.domains(), model.n_domains);
}

ScoreTable Score(const TrainedModel& model, const Dataset& data) {
  if (data.feature_dim() != model.network.spec().input_dim ||
      data.n_classes() != model.n_classes) {
    throw InvalidArgumentError("score: dataset does not match the model");
  }
  ScoreTable table;
  table.layout = model.layout;
  table.n_classes = model.n_classes;
  table.n_domains = model.n_domains;
  table.ids = data.ids();
  table.y_true = data.labels();
  table.d_true = data.domains();
  table.raw.resize(static_cast<Eigen::Index>(data.size()), table.Width());

  const NetworkSpec& spec = model.network.spec();
  constexpr size_t kChunk = 2048;
  std::vector<size_t> rows;
  for (size_t start = 0; start < data.size(); start += kChunk) {
    const size_t stop = std::min(data.size(), start + kChunk);
    rows.resize(stop - start);
    std::iota(rows.begin(), rows.end(), start);
    const Eigen::MatrixXd x = data.Gather(rows);
    const ForwardTrace trace = Forward(model.network, x);
    const auto len = static_cast<Eigen::Index>(rows.size());
    if (model.layout == ScoreLayout::kPerDomain) {
      for (int d = 0; d < model.n_domains; ++d) {
        table.raw.block(start, d * model.n_classes, len, model.n_classes) =
            trace.head_logits[spec.HeadIndex(DomainHead(d))].transpose();
      }
    } else {
      table.raw.middleRows(start, len) =
          trace.head_logits[spec.HeadIndex(kTaskHead)].transpose();
    }
  }
  table.probs = table.Probabilities();
  if (model.domain_head) {
    table.domain_probs =
        model.domain_head->Probabilities(model.Penultimate(data)).transpose();
  }
  return table;
}

void SaveModel(const std::filesystem::path& dir, const TrainedModel& model) {
  std::filesystem::create_directories(dir);
  SaveCheckpoint(dir / "model.skbm", model.network);
  json meta;
  meta["strategy"] = {{"name", model.strategy.Name()},
                      {"beta", model.strategy.beta},
                      {"adv_weight", model.strategy.adv_weight},
                      {"adv_attach", model.strategy.attach ==
                                             AdvAttach::kPenultimate
                                         ? "penultimate"
                                         : "final"}};
  meta["layout"] = LayoutName(model.layout);
  meta["n_classes"] = model.n_classes;
  meta["n_domains"] = model.n_domains;
  meta["train_prior"] = MatrixToJson(model.train_prior.joint);
  if (model.domain_head) {
    meta["domain_head"] = {{"weight", MatrixToJson(model.domain_head->weight)},
                           {"bias", VectorToJson(model.domain_head->bias)},
                           {"mean", VectorToJson(model.domain_head->mean)},
                           {"inv_scale",
                            VectorToJson(model.domain_head->inv_scale)}};
  }
  std::ofstream out(dir / "model.meta.json");
  out << meta.dump(2) << "\n";
  if (!out) throw IngestionError("cannot write model metadata in " + dir.string());
}

TrainedModel LoadModel(const std::filesystem::path& dir) {
  Network net = LoadCheckpoint(dir / "model.skbm");
  std::ifstream in(dir / "model.meta.json");
  if (!in) {
    throw IngestionError("missing model metadata " +
                         (dir / "model.meta.json").string());
  }
  try {
    const json meta = json::parse(in);
    Strategy s;
    const json& js = meta.at("strategy");
    s.type = Strategy::ParseType(js.at("name").get<std::string>());
    s.beta = js.at("beta").get<double>();
    s.adv_weight = js.at("adv_weight").get<double>();
    s.attach = js.at("adv_attach").get<std::string>() == "final"
                   ? AdvAttach::kFinal
                   : AdvAttach::kPenultimate;
    TrainPrior prior;
    prior.joint = MatrixFromJson(meta.at("train_prior"));
    prior.Validate();
    TrainedModel model{std::move(net),
                       s,
                       ParseLayout(meta.at("layout").get<std::string>()),
                       std::move(prior),
                       meta.at("n_classes").get<int>(),
                       meta.at("n_domains").get<int>(),
                       std::nullopt};
    if (meta.contains("domain_head")) {
      const json& h = meta["domain_head"];
      model.domain_head = LinearSoftmaxModel{
          MatrixFromJson(h.at("weight")), VectorFromJson(h.at("bias")),
          VectorFromJson(h.at("mean")), VectorFromJson(h.at("inv_scale"))};
    }
    return model;
  } catch (const json::exception& e) {
    throw FormatError("bad model metadata in " + dir.string() + ": " +
                      e.what());
  }
}

}  // namespace skewbench
