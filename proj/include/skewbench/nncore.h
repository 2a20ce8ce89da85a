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

// Dense multi-head networks with hand-written backpropagation.
//
// A network is a stack of fully connected trunk layers followed by any
// number of linear heads. A head reads either the trunk output (the
// penultimate features) or the logits of an earlier head, which is how an
// adversary is attached to the final classification layer. Activations are
// stored one example per column.

#ifndef SKEWBENCH_NNCORE_H_
#define SKEWBENCH_NNCORE_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "skewbench/common.h"

namespace skewbench {

enum class Activation { kRelu, kIdentity };
enum class HeadRole { kTask, kAdversary };

struct LayerSpec {
  int width = 0;
  Activation activation = Activation::kRelu;
};

struct HeadSpec {
  std::string name;
  int width = 0;
  HeadRole role = HeadRole::kTask;
  // Empty: reads the trunk output. Otherwise the name of an earlier head
  // whose logits feed this one.
  std::string input;
};

struct NetworkSpec {
  int input_dim = 0;
  std::vector<LayerSpec> trunk;
  std::vector<HeadSpec> heads;

  // Throws InvalidArgumentError unless widths are positive, head names are
  // unique, head inputs refer to earlier heads and at least one task head
  // exists.
  void Validate() const;
  int FeatureDim() const;
  int HeadIndex(std::string_view name) const;

  std::string ToJson() const;
  static NetworkSpec FromJson(const std::string& text);
};

struct DenseLayer {
  std::string name;
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

// Layer-ordered parameter (or gradient) blocks. Coefficients are addressed
// by a flat index: each layer's weight in column-major order, then its bias.
class ParameterSet {
 public:
  std::vector<DenseLayer> layers;

  size_t NumCoefficients() const;
  double& Coefficient(size_t flat);
  double Coefficient(size_t flat) const;
  int IndexOf(std::string_view name) const;
  const DenseLayer& Layer(std::string_view name) const;
  ParameterSet ZerosLike() const;
  bool AllFinite() const;
  // Flattened copy of the selected layers, in flat-index order.
  Eigen::VectorXd Flatten(std::span<const int> layer_ids) const;
  void Unflatten(std::span<const int> layer_ids, const Eigen::VectorXd& v);
};

class Network {
 public:
  // Glorot-uniform weights, zero biases.
  static Network Create(const NetworkSpec& spec, uint64_t seed);
  Network(NetworkSpec spec, ParameterSet params);

  const NetworkSpec& spec() const { return spec_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& mutable_params() { return params_; }

  // Layer index of trunk layer i / head h inside params().
  int TrunkLayer(int i) const { return i; }
  int HeadLayer(int h) const { return static_cast<int>(spec_.trunk.size()) + h; }
  int HeadLayer(std::string_view name) const;

 private:
  NetworkSpec spec_;
  ParameterSet params_;
};

struct ForwardTrace {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> trunk_pre;
  std::vector<Eigen::MatrixXd> trunk_act;
  // Indexed like NetworkSpec::heads.
  std::vector<Eigen::MatrixXd> head_logits;

  const Eigen::MatrixXd& Penultimate() const {
    return trunk_act.empty() ? input : trunk_act.back();
  }
};

// Upstream dL/dlogits per head name; heads absent from the map receive
// zero gradient.
using HeadGradients = std::map<std::string, Eigen::MatrixXd>;

struct Gradients {
  ParameterSet grads;
  // Layers reached by a non-absent upstream gradient. Layers not touched
  // are skipped by SgdStep, weight decay included.
  std::vector<bool> touched;
};

ForwardTrace Forward(const Network& net, const Eigen::MatrixXd& batch);
Gradients Backward(const Network& net, const ForwardTrace& trace,
                   const HeadGradients& head_grads);

struct LossGrad {
  double loss = 0.0;
  Eigen::VectorXd dlogits;
};

Eigen::VectorXd Softmax(const Eigen::VectorXd& logits);
Eigen::MatrixXd SoftmaxColumns(const Eigen::MatrixXd& logits);

// -log softmax(logits)[target] and its gradient, via max subtraction.
LossGrad SoftmaxXent(const Eigen::VectorXd& logits, int target);
// Mean binary cross-entropy with logits over all components.
LossGrad SigmoidBce(const Eigen::VectorXd& logits,
                    const Eigen::VectorXd& targets);

struct BatchLoss {
  double loss = 0.0;
  Eigen::MatrixXd dlogits;
};

// Mean over the batch of weight_i * xent_i. Empty weights means all ones.
BatchLoss SoftmaxXentBatch(const Eigen::MatrixXd& logits,
                           std::span<const int> targets,
                           std::span<const double> weights = {});
// Mean over the batch of the per-example SigmoidBce.
BatchLoss SigmoidBceBatch(const Eigen::MatrixXd& logits,
                          const Eigen::MatrixXd& targets);

struct OptimConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lr_drop = 0.1;
  int drop_period = 10;
  int epochs = 30;
  int batch_size = 128;

  void Validate() const;
  double LearningRate(int epoch) const;
};

struct OptimState {
  ParameterSet velocity;
  static OptimState For(const ParameterSet& params);
};

// v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v.
// Throws NumericError naming the layer if a gradient is not finite.
void SgdStep(ParameterSet& params, const Gradients& grads, OptimState& state,
             double lr, const OptimConfig& config);

// "SKBM" checkpoint: magic, u32 length + spec JSON, u32 block count, then
// per block {u16 name length, name, u32 rows, u32 cols, f64 values
// column-major}. Each layer is stored as "<name>.weight" and "<name>.bias".
void SaveCheckpoint(const std::filesystem::path& file, const Network& net);
Network LoadCheckpoint(const std::filesystem::path& file);

// Scalar loss plus per-head dL/dlogits for a forward trace.
using LossWiring =
    std::function<std::pair<double, HeadGradients>(const ForwardTrace&)>;

struct FiniteDiffOptions {
  double step = 1e-5;
  // Raised to 200 if smaller; every coordinate is checked when the network
  // has fewer.
  size_t num_coordinates = 256;
  uint64_t seed = 7;
};

// Max relative error |a - n| / max(|a|, |n|, 1e-6) between backprop and
// central differences over a random coordinate subsample.
double FiniteDiffCheck(const Network& net, const Eigen::MatrixXd& batch,
                       const LossWiring& wiring,
                       const FiniteDiffOptions& options = {});
// Same comparison against a caller-supplied analytic gradient.
double CompareWithCentralDifferences(const Network& net,
                                     const Eigen::MatrixXd& batch,
                                     const LossWiring& wiring,
                                     const ParameterSet& analytic,
                                     const FiniteDiffOptions& options = {});

// Multinomial logistic regression on standardized features, fitted by
// full-batch gradient descent with backtracking. Deterministic.
struct LinearSoftmaxModel {
  Eigen::MatrixXd weight;  // classes x dim
  Eigen::VectorXd bias;
  Eigen::VectorXd mean;
  Eigen::VectorXd inv_scale;

  Eigen::MatrixXd Logits(const Eigen::MatrixXd& features) const;
  Eigen::MatrixXd Probabilities(const Eigen::MatrixXd& features) const;
  std::vector<int> Predict(const Eigen::MatrixXd& features) const;
};

LinearSoftmaxModel FitLinearSoftmax(const Eigen::MatrixXd& features,
                                    std::span<const int> labels,
                                    int n_classes, double l2 = 1e-3,
                                    int max_iters = 300);

}  // namespace skewbench

#endif  // SKEWBENCH_NNCORE_H_
