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

// Construction of class/domain skewed datasets: the CIFAR-10S image
// benchmark and a low-dimensional synthetic analog that runs on a laptop.

#ifndef SKEWBENCH_DATAGEN_H_
#define SKEWBENCH_DATAGEN_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "skewbench/common.h"

namespace skewbench {

inline constexpr int kImageSide = 32;
inline constexpr int kImageChannels = 3;
inline constexpr int kImageDim = kImageSide * kImageSide * kImageChannels;

struct Example {
  uint32_t id = 0;
  std::vector<float> features;
  int y = 0;
  int d = 0;
};

enum class SplitKind { kTrain, kVal, kTest };

struct Split {
  SplitKind kind = SplitKind::kTrain;
  // Only meaningful for kTest: the single domain the copy holds, or -1 for
  // a mixed evaluation set.
  int domain = -1;

  static Split Train() { return {SplitKind::kTrain, -1}; }
  static Split Val() { return {SplitKind::kVal, -1}; }
  static Split Test(int d) { return {SplitKind::kTest, d}; }
  std::string Name() const;
};

// Row-major feature storage with per-row labels. Rows are appended during
// construction and the dataset is treated as immutable afterwards.
class Dataset {
 public:
  Dataset(int n_classes, int n_domains, int feature_dim,
          Split split = Split::Train());

  // Throws InvalidArgumentError on a duplicate id, out-of-range label or
  // domain, wrong feature width or non-finite feature.
  void Append(uint32_t id, std::span<const float> features, int y, int d);
  void Reserve(size_t n);

  size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  int n_classes() const { return n_classes_; }
  int n_domains() const { return n_domains_; }
  int feature_dim() const { return feature_dim_; }
  const Split& split() const { return split_; }

  uint32_t id(size_t i) const { return ids_[i]; }
  int label(size_t i) const { return labels_[i]; }
  int domain(size_t i) const { return domains_[i]; }
  std::span<const float> features(size_t i) const {
    return {features_.data() + i * feature_dim_,
            static_cast<size_t>(feature_dim_)};
  }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<int>& domains() const { return domains_; }
  const std::vector<uint32_t>& ids() const { return ids_; }

  Example example(size_t i) const;

  // Gathers the given rows into a (feature_dim x rows.size()) matrix, one
  // example per column.
  Eigen::MatrixXd Gather(std::span<const size_t> rows) const;
  Eigen::MatrixXd GatherAll() const;

  // N x D matrix of (class, domain) cell sizes.
  Eigen::MatrixXi CellCounts() const;

 private:
  int n_classes_;
  int n_domains_;
  int feature_dim_;
  Split split_;
  std::vector<float> features_;
  std::vector<uint32_t> ids_;
  std::vector<int> labels_;
  std::vector<int> domains_;
  std::unordered_set<uint32_t> seen_ids_;
};

// Stacks datasets that share N, D and width; ids are reassigned 0..n-1 in
// order.
Dataset Concatenate(std::span<const Dataset* const> parts, Split split);

struct SkewSpec {
  // Fraction of each class drawn from its majority domain.
  double rho = 0.95;
  // Majority domain per class.
  std::vector<int> majority_domain;

  // First half of the classes favour domain 0, the rest domain 1.
  static SkewSpec Alternating(int n_classes, double rho);
  void Validate(int n_classes, int n_domains) const;
};

// BT.601 luma, rounded half up.
uint8_t LumaGray(uint8_t r, uint8_t g, uint8_t b);

// Domain label for each of n examples of one class: exactly round(rho * n)
// keep `majority`, the rest are drawn uniformly without replacement and
// spread round-robin over the other domains.
std::vector<int> AssignDomains(size_t n, double rho, int majority,
                               int n_domains, uint64_t seed);

class DomainTransform {
 public:
  enum class Kind {
    kIdentity,
    kGrayscaleLuma,
    kCenterCrop,
    kDownsample,
    kLinearMap
  };

  static DomainTransform Identity();
  // Image transforms expect 3x32x32 channel-major pixels in [0, 1].
  static DomainTransform GrayscaleLuma();
  // repad: keep the crop in place and zero the border. Otherwise the crop
  // is resized back to 32x32 by nearest neighbour.
  static DomainTransform CenterCrop(int crop_size, bool repad);
  // Average-pools by `factor`. upsample_back: nearest-neighbour upsample to
  // 32x32, otherwise the small image is zero-padded in the centre.
  static DomainTransform Downsample(int factor, bool upsample_back);
  // Rejects the zero matrix; matrix must be square.
  static DomainTransform LinearMap(Eigen::MatrixXd matrix);
  // Synthetic default: replaces each pair of coordinates by its mean,
  // duplicated, the way grayscale replicates luma into three channels.
  static DomainTransform PairAveraging(int feature_dim);

  Kind kind() const { return kind_; }
  int crop_size() const { return crop_size_; }
  bool repad() const { return repad_; }
  int factor() const { return factor_; }
  bool upsample_back() const { return upsample_back_; }
  const Eigen::MatrixXd& matrix() const { return matrix_; }

  std::vector<float> Apply(std::span<const float> features) const;
  std::string Name() const;

 private:
  DomainTransform() = default;

  Kind kind_ = Kind::kIdentity;
  int crop_size_ = 28;
  bool repad_ = true;
  int factor_ = 2;
  bool upsample_back_ = true;
  Eigen::MatrixXd matrix_;
};

struct Cifar10S {
  Dataset train;
  Dataset test_color;
  Dataset test_gray;
};

// Reads data_batch_{1..5}.bin and test_batch.bin (3073-byte records) from
// `cifar_dir`. Domain 0 is colour, domain 1 the transformed copy
// (grayscale unless `transform` says otherwise).
Cifar10S BuildCifar10S(const std::filesystem::path& cifar_dir,
                       const SkewSpec& spec, uint64_t seed,
                       const DomainTransform& transform =
                           DomainTransform::GrayscaleLuma());

// Parses one CIFAR-10 binary batch. `expected_records` of 0 skips the count
// check.
Dataset ReadCifarBatch(const std::filesystem::path& file,
                       size_t expected_records, uint32_t first_id,
                       Split split);

struct SyntheticConfig {
  int n_classes = 10;
  int feature_dim = 16;
  // N x feature_dim. Empty means a regular simplex scaled by mean_scale and
  // rotated into feature space by a fixed orthonormal basis.
  Eigen::MatrixXd class_means;
  double mean_scale = 3.5;
  // Share of the generated means' energy that a linear domain transform
  // removes; the rest lies in the subspace it keeps. Ignored for explicit
  // class_means or transforms that keep everything.
  double discarded_fraction = 0.1;
  double sigma = 1.0;
  int train_per_class = 1000;
  int val_per_class = 200;
  // Per class, per domain.
  int test_per_class = 500;
  // Applied to domain-1 samples. Unset means PairAveraging.
  std::optional<DomainTransform> domain_transform;
  uint64_t geometry_seed = 20190610;

  void Validate() const;
  Eigen::MatrixXd ResolvedMeans() const;
  DomainTransform ResolvedTransform() const;

 private:
  Eigen::MatrixXd ShareEnergy(const Eigen::MatrixXd& means) const;
};

struct SyntheticSplits {
  Dataset train;
  Dataset val;
  Dataset test_d0;
  Dataset test_d1;
};

// Domain-0 rows are Gaussian draws around the class mean; domain-1 rows are
// such draws passed through the domain transform. test_d1 holds the
// transformed copies of the test_d0 rows.
SyntheticSplits BuildSynthetic(const SyntheticConfig& cfg,
                               const SkewSpec& spec, uint64_t seed);

// Pad-4 random crop plus horizontal flip for 3x32x32 images.
struct CropFlip {
  int offset_x = 4;
  int offset_y = 4;
  bool flip = false;
};
std::vector<float> Augment(std::span<const float> image, const CropFlip& op);
std::vector<float> Augment(std::span<const float> image, uint64_t seed);
CropFlip SampleCropFlip(Rng& rng);

// "SKB1" record file: header {magic, n u32, dim u32, N u16, D u16}, then per
// record {id u32, y u16, d u16, dim x f32}, all little-endian.
void WriteDataset(const std::filesystem::path& file, const Dataset& dataset);
Dataset ReadDataset(const std::filesystem::path& file,
                    Split split = Split::Train());

}  // namespace skewbench

#endif  // SKEWBENCH_DATAGEN_H_
