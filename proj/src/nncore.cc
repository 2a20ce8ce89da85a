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

#include "skewbench/nncore.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <utility>

#include "binary_io.h"
#include "json.hpp"

namespace skewbench {
namespace {

using json = nlohmann::json;

std::string ActivationName(Activation a) {
  return a == Activation::kRelu ? "relu" : "identity";
}

Activation ParseActivation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  throw FormatError("unknown activation '" + s + "'");
}

std::string RoleName(HeadRole r) {
  return r == HeadRole::kTask ? "task" : "adversary";
}

HeadRole ParseRole(const std::string& s) {
  if (s == "task") return HeadRole::kTask;
  if (s == "adversary") return HeadRole::kAdversary;
  throw FormatError("unknown head role '" + s + "'");
}

// Input width of head h.
int HeadInputWidth(const NetworkSpec& spec, const HeadSpec& head) {
  if (head.input.empty()) return spec.FeatureDim();
  return spec.heads[spec.HeadIndex(head.input)].width;
}

double LogSumExp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

void NetworkSpec::Validate() const {
  if (input_dim <= 0) throw InvalidArgumentError("input_dim must be positive");
  for (const LayerSpec& l : trunk) {
    if (l.width <= 0) {
      throw InvalidArgumentError("trunk layer widths must be positive");
    }
  }
  std::set<std::string> names;
  bool has_task = false;
  for (const HeadSpec& h : heads) {
    if (h.width <= 0) {
      throw InvalidArgumentError("head '" + h.name + "' has no outputs");
    }
    if (!h.input.empty() && !names.count(h.input)) {
      throw InvalidArgumentError("head '" + h.name + "' reads '" + h.input +
                                 "', which is not an earlier head");
    }
    if (!names.insert(h.name).second) {
      throw InvalidArgumentError("duplicate head name '" + h.name + "'");
    }
    has_task |= h.role == HeadRole::kTask;
  }
  if (!has_task) throw InvalidArgumentError("network needs a task head");
}

int NetworkSpec::FeatureDim() const {
  return trunk.empty() ? input_dim : trunk.back().width;
}

int NetworkSpec::HeadIndex(std::string_view name) const {
  for (size_t h = 0; h < heads.size(); ++h) {
    if (heads[h].name == name) return static_cast<int>(h);
  }
  throw InvalidArgumentError("no head named '" + std::string(name) + "'");
}

std::string NetworkSpec::ToJson() const {
  json j;
  j["input_dim"] = input_dim;
  j["trunk"] = json::array();
  for (const LayerSpec& l : trunk) {
    j["trunk"].push_back(
        {{"width", l.width}, {"activation", ActivationName(l.activation)}});
  }
  j["heads"] = json::array();
  for (const HeadSpec& h : heads) {
    j["heads"].push_back({{"name", h.name},
                          {"width", h.width},
                          {"role", RoleName(h.role)},
                          {"input", h.input}});
  }
  return j.dump();
}

NetworkSpec NetworkSpec::FromJson(const std::string& text) {
  try {
    const json j = json::parse(text);
    NetworkSpec spec;
    spec.input_dim = j.at("input_dim").get<int>();
    for (const auto& l : j.at("trunk")) {
      spec.trunk.push_back({l.at("width").get<int>(),
                            ParseActivation(l.at("activation"))});
    }
    for (const auto& h : j.at("heads")) {
      spec.heads.push_back({h.at("name").get<std::string>(),
                            h.at("width").get<int>(), ParseRole(h.at("role")),
                            h.value("input", std::string())});
    }
    spec.Validate();
    return spec;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad network spec: ") + e.what());
  }
}

size_t ParameterSet::NumCoefficients() const {
  size_t n = 0;
  for (const DenseLayer& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

double& ParameterSet::Coefficient(size_t flat) {
  for (DenseLayer& l : layers) {
    const auto w = static_cast<size_t>(l.weight.size());
    if (flat < w) return l.weight.data()[flat];
    flat -= w;
    const auto b = static_cast<size_t>(l.bias.size());
    if (flat < b) return l.bias.data()[flat];
    flat -= b;
  }
  throw InvalidArgumentError("coefficient index out of range");
}

double ParameterSet::Coefficient(size_t flat) const {
  return const_cast<ParameterSet*>(this)->Coefficient(flat);
}

int ParameterSet::IndexOf(std::string_view name) const {
  for (size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) return static_cast<int>(i);
  }
  throw InvalidArgumentError("no parameter block '" + std::string(name) +
                             "'");
}

const DenseLayer& ParameterSet::Layer(std::string_view name) const {
  return layers[IndexOf(name)];
}

ParameterSet ParameterSet::ZerosLike() const {
  ParameterSet out;
  out.layers.reserve(layers.size());
  for (const DenseLayer& l : layers) {
    out.layers.push_back(
        {l.name, Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
         Eigen::VectorXd::Zero(l.bias.size())});
  }
  return out;
}

bool ParameterSet::AllFinite() const {
  for (const DenseLayer& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

Eigen::VectorXd ParameterSet::Flatten(std::span<const int> layer_ids) const {
  Eigen::Index n = 0;
  for (int id : layer_ids) n += layers[id].weight.size() + layers[id].bias.size();
  Eigen::VectorXd v(n);
  Eigen::Index at = 0;
  for (int id : layer_ids) {
    const DenseLayer& l = layers[id];
    v.segment(at, l.weight.size()) =
        Eigen::Map<const Eigen::VectorXd>(l.weight.data(), l.weight.size());
    at += l.weight.size();
    v.segment(at, l.bias.size()) = l.bias;
    at += l.bias.size();
  }
  return v;
}

void ParameterSet::Unflatten(std::span<const int> layer_ids,
                             const Eigen::VectorXd& v) {
  Eigen::Index at = 0;
  for (int id : layer_ids) {
    DenseLayer& l = layers[id];
    Eigen::Map<Eigen::VectorXd>(l.weight.data(), l.weight.size()) =
        v.segment(at, l.weight.size());
    at += l.weight.size();
    l.bias = v.segment(at, l.bias.size());
    at += l.bias.size();
  }
  if (at != v.size()) {
    throw InvalidArgumentError("flattened vector size mismatch");
  }
}

Network::Network(NetworkSpec spec, ParameterSet params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.Validate();
  const size_t expected = spec_.trunk.size() + spec_.heads.size();
  if (params_.layers.size() != expected) {
    throw InvalidArgumentError("parameter blocks do not match network spec");
  }
  int in = spec_.input_dim;
  for (size_t i = 0; i < spec_.trunk.size(); ++i) {
    const DenseLayer& l = params_.layers[i];
    if (l.weight.rows() != spec_.trunk[i].width || l.weight.cols() != in ||
        l.bias.size() != spec_.trunk[i].width) {
      throw InvalidArgumentError("shape mismatch in layer " + l.name);
    }
    in = spec_.trunk[i].width;
  }
  for (size_t h = 0; h < spec_.heads.size(); ++h) {
    const DenseLayer& l = params_.layers[spec_.trunk.size() + h];
    const HeadSpec& hs = spec_.heads[h];
    if (l.weight.rows() != hs.width ||
        l.weight.cols() != HeadInputWidth(spec_, hs) ||
        l.bias.size() != hs.width) {
      throw InvalidArgumentError("shape mismatch in layer " + l.name);
    }
  }
  if (!params_.AllFinite()) {
    throw NumericError("network parameters contain non-finite values");
  }
}

Network Network::Create(const NetworkSpec& spec, uint64_t seed) {
  spec.Validate();
  Rng rng(seed);
  ParameterSet params;
  auto add = [&](std::string name, int out, int in) {
    const double a = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> u(-a, a);
    DenseLayer l{std::move(name), Eigen::MatrixXd(out, in),
                 Eigen::VectorXd::Zero(out)};
    for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] = u(rng);
    params.layers.push_back(std::move(l));
  };
  int in = spec.input_dim;
  for (size_t i = 0; i < spec.trunk.size(); ++i) {
    add("trunk." + std::to_string(i), spec.trunk[i].width, in);
    in = spec.trunk[i].width;
  }
  for (const HeadSpec& h : spec.heads) {
    add("head." + h.name, h.width, HeadInputWidth(spec, h));
  }
  return Network(spec, std::move(params));
}

int Network::HeadLayer(std::string_view name) const {
  return HeadLayer(spec_.HeadIndex(name));
}

ForwardTrace Forward(const Network& net, const Eigen::MatrixXd& batch) {
  const NetworkSpec& spec = net.spec();
  if (batch.rows() != spec.input_dim) {
    throw InvalidArgumentError(
        "forward: batch has " + std::to_string(batch.rows()) +
        " features, network expects " + std::to_string(spec.input_dim));
  }
  ForwardTrace trace;
  trace.input = batch;
  const Eigen::MatrixXd* x = &trace.input;
  for (size_t i = 0; i < spec.trunk.size(); ++i) {
    const DenseLayer& l = net.params().layers[net.TrunkLayer(i)];
    Eigen::MatrixXd pre = l.weight * *x;
    pre.colwise() += l.bias;
    Eigen::MatrixXd act = spec.trunk[i].activation == Activation::kRelu
                              ? Eigen::MatrixXd(pre.cwiseMax(0.0))
                              : pre;
    trace.trunk_pre.push_back(std::move(pre));
    trace.trunk_act.push_back(std::move(act));
    x = &trace.trunk_act.back();
  }
  trace.head_logits.resize(spec.heads.size());
  for (size_t h = 0; h < spec.heads.size(); ++h) {
    const DenseLayer& l = net.params().layers[net.HeadLayer(h)];
    const Eigen::MatrixXd& in =
        spec.heads[h].input.empty()
            ? trace.Penultimate()
            : trace.head_logits[spec.HeadIndex(spec.heads[h].input)];
    trace.head_logits[h] = l.weight * in;
    trace.head_logits[h].colwise() += l.bias;
  }
  return trace;
}

Gradients Backward(const Network& net, const ForwardTrace& trace,
                   const HeadGradients& head_grads) {
  const NetworkSpec& spec = net.spec();
  const Eigen::Index batch = trace.input.cols();
  Gradients out{net.params().ZerosLike(),
                std::vector<bool>(net.params().layers.size(), false)};

  std::vector<Eigen::MatrixXd> upstream(spec.heads.size());
  std::vector<bool> live(spec.heads.size(), false);
  for (const auto& [name, g] : head_grads) {
    const int h = spec.HeadIndex(name);
    if (g.rows() != spec.heads[h].width || g.cols() != batch) {
      throw InvalidArgumentError("backward: gradient for head '" + name +
                                 "' has the wrong shape");
    }
    upstream[h] = g;
    live[h] = true;
  }

  Eigen::MatrixXd trunk_grad;
  bool trunk_live = false;
  for (int h = static_cast<int>(spec.heads.size()) - 1; h >= 0; --h) {
    if (!live[h]) continue;
    const int layer = net.HeadLayer(h);
    const DenseLayer& l = net.params().layers[layer];
    const bool from_trunk = spec.heads[h].input.empty();
    const Eigen::MatrixXd& in =
        from_trunk ? trace.Penultimate()
                   : trace.head_logits[spec.HeadIndex(spec.heads[h].input)];
    out.grads.layers[layer].weight = upstream[h] * in.transpose();
    out.grads.layers[layer].bias = upstream[h].rowwise().sum();
    out.touched[layer] = true;
    Eigen::MatrixXd down = l.weight.transpose() * upstream[h];
    if (from_trunk) {
      if (trunk_live) {
        trunk_grad += down;
      } else {
        trunk_grad = std::move(down);
        trunk_live = true;
      }
    } else {
      const int src = spec.HeadIndex(spec.heads[h].input);
      if (live[src]) {
        upstream[src] += down;
      } else {
        upstream[src] = std::move(down);
        live[src] = true;
      }
    }
  }
  if (!trunk_live) return out;

  for (int i = static_cast<int>(spec.trunk.size()) - 1; i >= 0; --i) {
    const int layer = net.TrunkLayer(i);
    if (spec.trunk[i].activation == Activation::kRelu) {
      trunk_grad =
          (trace.trunk_pre[i].array() > 0.0).select(trunk_grad, 0.0);
    }
    const Eigen::MatrixXd& in = i == 0 ? trace.input : trace.trunk_act[i - 1];
    out.grads.layers[layer].weight = trunk_grad * in.transpose();
    out.grads.layers[layer].bias = trunk_grad.rowwise().sum();
    out.touched[layer] = true;
    if (i > 0) {
      trunk_grad = net.params().layers[layer].weight.transpose() * trunk_grad;
    }
  }
  return out;
}

Eigen::VectorXd Softmax(const Eigen::VectorXd& logits) {
  Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::MatrixXd SoftmaxColumns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    p.col(j) = Softmax(logits.col(j));
  }
  return p;
}

LossGrad SoftmaxXent(const Eigen::VectorXd& logits, int target) {
  if (target < 0 || target >= logits.size()) {
    throw InvalidArgumentError("softmax_xent: target out of range");
  }
  LossGrad out;
  out.loss = LogSumExp(logits) - logits[target];
  out.dlogits = Softmax(logits);
  out.dlogits[target] -= 1.0;
  return out;
}

LossGrad SigmoidBce(const Eigen::VectorXd& logits,
                    const Eigen::VectorXd& targets) {
  if (logits.size() != targets.size() || logits.size() == 0) {
    throw InvalidArgumentError("sigmoid_bce: shape mismatch");
  }
  const double n = static_cast<double>(logits.size());
  LossGrad out;
  out.dlogits.resize(logits.size());
  double total = 0.0;
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    const double z = logits[k];
    const double t = targets[k];
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    const double sig =
        z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    out.dlogits[k] = (sig - t) / n;
  }
  out.loss = total / n;
  return out;
}

BatchLoss SoftmaxXentBatch(const Eigen::MatrixXd& logits,
                           std::span<const int> targets,
                           std::span<const double> weights) {
  const Eigen::Index b = logits.cols();
  if (static_cast<size_t>(b) != targets.size() ||
      (!weights.empty() && weights.size() != targets.size())) {
    throw InvalidArgumentError("softmax_xent: batch size mismatch");
  }
  BatchLoss out;
  out.dlogits.resize(logits.rows(), b);
  if (b == 0) return out;
  for (Eigen::Index j = 0; j < b; ++j) {
    LossGrad lg = SoftmaxXent(logits.col(j), targets[j]);
    const double w = weights.empty() ? 1.0 : weights[j];
    out.loss += w * lg.loss;
    out.dlogits.col(j) = (w / b) * lg.dlogits;
  }
  out.loss /= b;
  return out;
}

BatchLoss SigmoidBceBatch(const Eigen::MatrixXd& logits,
                          const Eigen::MatrixXd& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw InvalidArgumentError("sigmoid_bce: batch shape mismatch");
  }
  const Eigen::Index b = logits.cols();
  BatchLoss out;
  out.dlogits.resize(logits.rows(), b);
  if (b == 0) return out;
  for (Eigen::Index j = 0; j < b; ++j) {
    LossGrad lg = SigmoidBce(logits.col(j), targets.col(j));
    out.loss += lg.loss;
    out.dlogits.col(j) = lg.dlogits / static_cast<double>(b);
  }
  out.loss /= b;
  return out;
}

void OptimConfig::Validate() const {
  if (!(lr >= 0.0)) throw InvalidArgumentError("lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw InvalidArgumentError("momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) {
    throw InvalidArgumentError("weight_decay must be >= 0");
  }
  if (!(lr_drop > 0.0)) throw InvalidArgumentError("lr_drop must be > 0");
  if (drop_period <= 0) throw InvalidArgumentError("drop_period must be > 0");
  if (epochs < 0) throw InvalidArgumentError("epochs must be >= 0");
  if (batch_size <= 0) throw InvalidArgumentError("batch_size must be > 0");
}

double OptimConfig::LearningRate(int epoch) const {
  return lr * std::pow(lr_drop, epoch / drop_period);
}

OptimState OptimState::For(const ParameterSet& params) {
  return OptimState{params.ZerosLike()};
}

void SgdStep(ParameterSet& params, const Gradients& grads, OptimState& state,
             double lr, const OptimConfig& config) {
  if (grads.grads.layers.size() != params.layers.size() ||
      state.velocity.layers.size() != params.layers.size()) {
    throw InvalidArgumentError("sgd_step: gradient set incomplete");
  }
  for (size_t i = 0; i < params.layers.size(); ++i) {
    const DenseLayer& g = grads.grads.layers[i];
    if (!g.weight.allFinite() || !g.bias.allFinite()) {
      throw NumericError("sgd_step: non-finite gradient in layer " +
                         params.layers[i].name + " (max |g| = " +
                         std::to_string(g.weight.cwiseAbs().maxCoeff()) + ")");
    }
  }
  for (size_t i = 0; i < params.layers.size(); ++i) {
    if (!grads.touched[i]) continue;
    DenseLayer& p = params.layers[i];
    DenseLayer& v = state.velocity.layers[i];
    const DenseLayer& g = grads.grads.layers[i];
    v.weight = config.momentum * v.weight + g.weight +
               config.weight_decay * p.weight;
    v.bias = config.momentum * v.bias + g.bias + config.weight_decay * p.bias;
    p.weight -= lr * v.weight;
    p.bias -= lr * v.bias;
  }
}

void SaveCheckpoint(const std::filesystem::path& file, const Network& net) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write checkpoint " + file.string());
  out.write("SKBM", 4);
  const std::string spec = net.spec().ToJson();
  internal::PutLE<uint32_t>(out, static_cast<uint32_t>(spec.size()));
  out.write(spec.data(), static_cast<std::streamsize>(spec.size()));
  const auto& layers = net.params().layers;
  internal::PutLE<uint32_t>(out, static_cast<uint32_t>(2 * layers.size()));
  auto block = [&](const std::string& name, const double* data,
                   Eigen::Index rows, Eigen::Index cols) {
    internal::PutLE<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    internal::PutLE<uint32_t>(out, static_cast<uint32_t>(rows));
    internal::PutLE<uint32_t>(out, static_cast<uint32_t>(cols));
    for (Eigen::Index k = 0; k < rows * cols; ++k) {
      internal::PutF64(out, data[k]);
    }
  };
  for (const DenseLayer& l : layers) {
    block(l.name + ".weight", l.weight.data(), l.weight.rows(),
          l.weight.cols());
    block(l.name + ".bias", l.bias.data(), l.bias.size(), 1);
  }
  if (!out) throw IngestionError("write failed for " + file.string());
}

Network LoadCheckpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint " + file.string());
  const std::string what = file.string();
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string(magic, 4) != "SKBM") {
    throw FormatError(what + " is not an SKBM checkpoint");
  }
  const uint32_t spec_len = internal::GetLE<uint32_t>(in, what);
  std::string spec_text(spec_len, '\0');
  in.read(spec_text.data(), spec_len);
  if (in.gcount() != static_cast<std::streamsize>(spec_len)) {
    throw FormatError(what + ": truncated spec");
  }
  NetworkSpec spec = NetworkSpec::FromJson(spec_text);
  Network fresh = Network::Create(spec, 0);
  ParameterSet params = fresh.params();
  const uint32_t blocks = internal::GetLE<uint32_t>(in, what);
  if (blocks != 2 * params.layers.size()) {
    throw FormatError(what + ": block count does not match the spec");
  }
  for (uint32_t k = 0; k < blocks; ++k) {
    const uint16_t name_len = internal::GetLE<uint16_t>(in, what);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t rows = internal::GetLE<uint32_t>(in, what);
    const uint32_t cols = internal::GetLE<uint32_t>(in, what);
    DenseLayer& l = params.layers[k / 2];
    const bool is_weight = k % 2 == 0;
    const std::string expected = l.name + (is_weight ? ".weight" : ".bias");
    if (name != expected) {
      throw FormatError(what + ": expected block " + expected + ", found " +
                        name);
    }
    double* data = is_weight ? l.weight.data() : l.bias.data();
    const Eigen::Index want_rows = is_weight ? l.weight.rows() : l.bias.size();
    const Eigen::Index want_cols = is_weight ? l.weight.cols() : 1;
    if (rows != want_rows || cols != want_cols) {
      throw FormatError(what + ": block " + name + " has the wrong shape");
    }
    for (size_t i = 0; i < static_cast<size_t>(rows) * cols; ++i) {
      data[i] = internal::GetF64(in, what);
    }
  }
  return Network(std::move(spec), std::move(params));
}

double CompareWithCentralDifferences(const Network& net,
                                     const Eigen::MatrixXd& batch,
                                     const LossWiring& wiring,
                                     const ParameterSet& analytic,
                                     const FiniteDiffOptions& options) {
  const size_t total = net.params().NumCoefficients();
  if (total == 0 || options.num_coordinates == 0) return 0.0;
  if (analytic.NumCoefficients() != total) {
    throw InvalidArgumentError("analytic gradient does not match network");
  }
  std::vector<size_t> coords(total);
  std::iota(coords.begin(), coords.end(), size_t{0});
  const size_t wanted = std::max<size_t>(options.num_coordinates, 200);
  if (total > wanted) {
    Rng rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(wanted);
    std::sort(coords.begin(), coords.end());
  }
  Network probe = net;
  double worst = 0.0;
  for (size_t c : coords) {
    double& w = probe.mutable_params().Coefficient(c);
    const double saved = w;
    w = saved + options.step;
    const double plus = wiring(Forward(probe, batch)).first;
    w = saved - options.step;
    const double minus = wiring(Forward(probe, batch)).first;
    w = saved;
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double a = analytic.Coefficient(c);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

double FiniteDiffCheck(const Network& net, const Eigen::MatrixXd& batch,
                       const LossWiring& wiring,
                       const FiniteDiffOptions& options) {
  const ForwardTrace trace = Forward(net, batch);
  const Gradients g = Backward(net, trace, wiring(trace).second);
  return CompareWithCentralDifferences(net, batch, wiring, g.grads, options);
}

Eigen::MatrixXd LinearSoftmaxModel::Logits(
    const Eigen::MatrixXd& features) const {
  const Eigen::MatrixXd z =
      (features.colwise() - mean).array().colwise() * inv_scale.array();
  Eigen::MatrixXd logits = weight * z;
  logits.colwise() += bias;
  return logits;
}

Eigen::MatrixXd LinearSoftmaxModel::Probabilities(
    const Eigen::MatrixXd& features) const {
  return SoftmaxColumns(Logits(features));
}

std::vector<int> LinearSoftmaxModel::Predict(
    const Eigen::MatrixXd& features) const {
  const Eigen::MatrixXd logits = Logits(features);
  std::vector<int> out(logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    Eigen::Index best;
    logits.col(j).maxCoeff(&best);
    out[j] = static_cast<int>(best);
  }
  return out;
}

LinearSoftmaxModel FitLinearSoftmax(const Eigen::MatrixXd& features,
                                    std::span<const int> labels,
                                    int n_classes, double l2, int max_iters) {
  const Eigen::Index dim = features.rows();
  const Eigen::Index n = features.cols();
  if (n == 0 || static_cast<size_t>(n) != labels.size()) {
    throw InvalidArgumentError("linear fit: features and labels disagree");
  }
  LinearSoftmaxModel model;
  model.mean = features.rowwise().mean();
  const Eigen::VectorXd var =
      (features.colwise() - model.mean).array().square().rowwise().mean();
  model.inv_scale = var.unaryExpr(
      [](double v) { return v > 1e-24 ? 1.0 / std::sqrt(v) : 0.0; });
  const Eigen::MatrixXd z =
      (features.colwise() - model.mean).array().colwise() *
      model.inv_scale.array();
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n_classes, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (labels[j] < 0 || labels[j] >= n_classes) {
      throw InvalidArgumentError("linear fit: label out of range");
    }
    onehot(labels[j], j) = 1.0;
  }
  model.weight = Eigen::MatrixXd::Zero(n_classes, dim);
  model.bias = Eigen::VectorXd::Zero(n_classes);

  auto objective = [&](const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                       Eigen::MatrixXd* probs) {
    Eigen::MatrixXd logits = w * z;
    logits.colwise() += b;
    double loss = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      loss += LogSumExp(logits.col(j)) - logits(labels[j], j);
    }
    if (probs) *probs = SoftmaxColumns(logits);
    return loss / n + 0.5 * l2 * w.squaredNorm();
  };

  Eigen::MatrixXd probs;
  double f = objective(model.weight, model.bias, &probs);
  double step = 1.0;
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::MatrixXd resid = probs - onehot;
    const Eigen::MatrixXd gw = resid * z.transpose() / n + l2 * model.weight;
    const Eigen::VectorXd gb = resid.rowwise().sum() / n;
    const double gnorm2 = gw.squaredNorm() + gb.squaredNorm();
    if (gnorm2 < 1e-14) break;
    step = std::min(step * 2.0, 64.0);
    while (true) {
      const Eigen::MatrixXd w = model.weight - step * gw;
      const Eigen::VectorXd b = model.bias - step * gb;
      Eigen::MatrixXd p;
      const double fn = objective(w, b, &p);
      if (fn <= f - 0.5 * step * gnorm2 || step < 1e-12) {
        model.weight = w;
        model.bias = b;
        probs = std::move(p);
        f = fn;
        break;
      }
      step *= 0.5;
    }
  }
  return model;
}

}  // namespace skewbench
