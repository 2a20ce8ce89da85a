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

#include "skewbench/datagen.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <utility>

#include "binary_io.h"

namespace skewbench {
namespace {

constexpr size_t kCifarRecordBytes = 1 + kImageDim;
constexpr size_t kCifarBatchRecords = 10000;
constexpr int kPlane = kImageSide * kImageSide;

inline size_t PixelIndex(int channel, int row, int col) {
  return static_cast<size_t>(channel) * kPlane + row * kImageSide + col;
}

void CheckImage(std::span<const float> image, const char* what) {
  if (image.size() != static_cast<size_t>(kImageDim)) {
    throw InvalidArgumentError(std::string(what) + ": expected a 3x32x32 " +
                               "image (" + std::to_string(kImageDim) +
                               " values), got " +
                               std::to_string(image.size()));
  }
}

uint8_t ToByte(float v) {
  const long q = std::lround(static_cast<double>(v) * 255.0);
  return static_cast<uint8_t>(std::clamp<long>(q, 0, 255));
}

}  // namespace

std::string Split::Name() const {
  switch (kind) {
    case SplitKind::kTrain:
      return "train";
    case SplitKind::kVal:
      return "val";
    case SplitKind::kTest:
      return domain < 0 ? "test" : "test_d" + std::to_string(domain);
  }
  return "unknown";
}

Dataset::Dataset(int n_classes, int n_domains, int feature_dim, Split split)
    : n_classes_(n_classes),
      n_domains_(n_domains),
      feature_dim_(feature_dim),
      split_(split) {
  if (n_classes < 1 || n_domains < 1 || feature_dim < 1) {
    throw InvalidArgumentError(
        "dataset needs at least one class, one domain and one feature");
  }
}

void Dataset::Reserve(size_t n) {
  features_.reserve(n * feature_dim_);
  ids_.reserve(n);
  labels_.reserve(n);
  domains_.reserve(n);
  seen_ids_.reserve(n);
}

void Dataset::Append(uint32_t id, std::span<const float> features, int y,
                     int d) {
  if (features.size() != static_cast<size_t>(feature_dim_)) {
    throw InvalidArgumentError("example " + std::to_string(id) + " has " +
                               std::to_string(features.size()) +
                               " features, dataset expects " +
                               std::to_string(feature_dim_));
  }
  if (y < 0 || y >= n_classes_) {
    throw InvalidArgumentError("example " + std::to_string(id) +
                               ": class " + std::to_string(y) +
                               " out of range");
  }
  if (d < 0 || d >= n_domains_) {
    throw InvalidArgumentError("example " + std::to_string(id) +
                               ": domain " + std::to_string(d) +
                               " out of range");
  }
  for (float v : features) {
    if (!std::isfinite(v)) {
      throw InvalidArgumentError("example " + std::to_string(id) +
                                 " has a non-finite feature");
    }
  }
  if (!seen_ids_.insert(id).second) {
    throw InvalidArgumentError("duplicate example id " + std::to_string(id));
  }
  features_.insert(features_.end(), features.begin(), features.end());
  ids_.push_back(id);
  labels_.push_back(y);
  domains_.push_back(d);
}

Example Dataset::example(size_t i) const {
  auto f = features(i);
  return Example{ids_[i], std::vector<float>(f.begin(), f.end()), labels_[i],
                 domains_[i]};
}

Eigen::MatrixXd Dataset::Gather(std::span<const size_t> rows) const {
  Eigen::MatrixXd out(feature_dim_, static_cast<Eigen::Index>(rows.size()));
  for (size_t j = 0; j < rows.size(); ++j) {
    const float* src = features_.data() + rows[j] * feature_dim_;
    for (int k = 0; k < feature_dim_; ++k) out(k, j) = src[k];
  }
  return out;
}

Eigen::MatrixXd Dataset::GatherAll() const {
  std::vector<size_t> rows(size());
  std::iota(rows.begin(), rows.end(), size_t{0});
  return Gather(rows);
}

Eigen::MatrixXi Dataset::CellCounts() const {
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(n_classes_, n_domains_);
  for (size_t i = 0; i < size(); ++i) ++counts(labels_[i], domains_[i]);
  return counts;
}

Dataset Concatenate(std::span<const Dataset* const> parts, Split split) {
  if (parts.empty()) throw InvalidArgumentError("nothing to concatenate");
  const Dataset& first = *parts.front();
  Dataset out(first.n_classes(), first.n_domains(), first.feature_dim(),
              split);
  size_t total = 0;
  for (const Dataset* p : parts) total += p->size();
  out.Reserve(total);
  uint32_t next = 0;
  for (const Dataset* p : parts) {
    if (p->n_classes() != first.n_classes() ||
        p->n_domains() != first.n_domains() ||
        p->feature_dim() != first.feature_dim()) {
      throw InvalidArgumentError("concatenated datasets disagree on shape");
    }
    for (size_t i = 0; i < p->size(); ++i) {
      out.Append(next++, p->features(i), p->label(i), p->domain(i));
    }
  }
  return out;
}

SkewSpec SkewSpec::Alternating(int n_classes, double rho) {
  SkewSpec spec;
  spec.rho = rho;
  spec.majority_domain.resize(n_classes);
  for (int c = 0; c < n_classes; ++c) {
    spec.majority_domain[c] = c < (n_classes + 1) / 2 ? 0 : 1;
  }
  return spec;
}

void SkewSpec::Validate(int n_classes, int n_domains) const {
  if (!(rho >= 0.5 && rho <= 1.0)) {
    throw InvalidArgumentError("skew rho must lie in [0.5, 1], got " +
                               std::to_string(rho));
  }
  if (majority_domain.size() != static_cast<size_t>(n_classes)) {
    throw InvalidArgumentError("skew needs a majority domain for each of " +
                               std::to_string(n_classes) + " classes");
  }
  for (int d : majority_domain) {
    if (d < 0 || d >= n_domains) {
      throw InvalidArgumentError("majority domain " + std::to_string(d) +
                                 " out of range");
    }
  }
}

uint8_t LumaGray(uint8_t r, uint8_t g, uint8_t b) {
  // Integer form of round-half-up(0.299 r + 0.587 g + 0.114 b).
  const unsigned weighted = 299u * r + 587u * g + 114u * b;
  return static_cast<uint8_t>(std::min(255u, (weighted + 500u) / 1000u));
}

std::vector<int> AssignDomains(size_t n, double rho, int majority,
                               int n_domains, uint64_t seed) {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw InvalidArgumentError("rho must lie in [0, 1]");
  }
  if (majority < 0 || majority >= n_domains) {
    throw InvalidArgumentError("majority domain out of range");
  }
  const size_t n_major = static_cast<size_t>(std::llround(rho * n));
  const size_t n_minor = n - n_major;
  if (n_minor > 0 && n_domains < 2) {
    throw InvalidArgumentError("minority examples need a second domain");
  }
  std::vector<int> domains(n, majority);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> others;
  for (int d = 0; d < n_domains; ++d) {
    if (d != majority) others.push_back(d);
  }
  for (size_t k = 0; k < n_minor; ++k) {
    domains[order[k]] = others[k % others.size()];
  }
  return domains;
}

DomainTransform DomainTransform::Identity() { return DomainTransform(); }

DomainTransform DomainTransform::GrayscaleLuma() {
  DomainTransform t;
  t.kind_ = Kind::kGrayscaleLuma;
  return t;
}

DomainTransform DomainTransform::CenterCrop(int crop_size, bool repad) {
  if (crop_size < 1 || crop_size > kImageSide) {
    throw InvalidArgumentError("crop size must lie in [1, 32]");
  }
  DomainTransform t;
  t.kind_ = Kind::kCenterCrop;
  t.crop_size_ = crop_size;
  t.repad_ = repad;
  return t;
}

DomainTransform DomainTransform::Downsample(int factor, bool upsample_back) {
  if (factor < 1 || kImageSide % factor != 0) {
    throw InvalidArgumentError("downsample factor must divide 32");
  }
  DomainTransform t;
  t.kind_ = Kind::kDownsample;
  t.factor_ = factor;
  t.upsample_back_ = upsample_back;
  return t;
}

DomainTransform DomainTransform::LinearMap(Eigen::MatrixXd matrix) {
  if (matrix.rows() == 0 || matrix.rows() != matrix.cols()) {
    throw InvalidArgumentError("linear domain map must be square");
  }
  if (!matrix.allFinite()) {
    throw InvalidArgumentError("linear domain map has non-finite entries");
  }
  if (matrix.isZero(0.0)) {
    throw InvalidArgumentError("degenerate domain transform: zero matrix");
  }
  DomainTransform t;
  t.kind_ = Kind::kLinearMap;
  t.matrix_ = std::move(matrix);
  return t;
}

DomainTransform DomainTransform::PairAveraging(int feature_dim) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(feature_dim, feature_dim);
  int k = 0;
  for (; k + 1 < feature_dim; k += 2) {
    m.block(k, k, 2, 2).setConstant(0.5);
  }
  if (k < feature_dim) m(k, k) = 1.0;
  return LinearMap(std::move(m));
}

std::string DomainTransform::Name() const {
  switch (kind_) {
    case Kind::kIdentity:
      return "identity";
    case Kind::kGrayscaleLuma:
      return "grayscale_luma";
    case Kind::kCenterCrop:
      return "center_crop";
    case Kind::kDownsample:
      return "downsample";
    case Kind::kLinearMap:
      return "linear_map";
  }
  return "unknown";
}

std::vector<float> DomainTransform::Apply(
    std::span<const float> features) const {
  switch (kind_) {
    case Kind::kIdentity:
      return {features.begin(), features.end()};

    case Kind::kGrayscaleLuma: {
      CheckImage(features, "grayscale_luma");
      std::vector<float> out(features.size());
      for (int p = 0; p < kPlane; ++p) {
        const uint8_t v = LumaGray(ToByte(features[p]),
                                   ToByte(features[kPlane + p]),
                                   ToByte(features[2 * kPlane + p]));
        const float scaled = static_cast<float>(v) / 255.0f;
        out[p] = out[kPlane + p] = out[2 * kPlane + p] = scaled;
      }
      return out;
    }

    case Kind::kCenterCrop: {
      CheckImage(features, "center_crop");
      std::vector<float> out(features.size(), 0.0f);
      const int lo = (kImageSide - crop_size_) / 2;
      for (int c = 0; c < kImageChannels; ++c) {
        for (int i = 0; i < kImageSide; ++i) {
          for (int j = 0; j < kImageSide; ++j) {
            if (repad_) {
              if (i >= lo && i < lo + crop_size_ && j >= lo &&
                  j < lo + crop_size_) {
                out[PixelIndex(c, i, j)] = features[PixelIndex(c, i, j)];
              }
            } else {
              const int si = lo + i * crop_size_ / kImageSide;
              const int sj = lo + j * crop_size_ / kImageSide;
              out[PixelIndex(c, i, j)] = features[PixelIndex(c, si, sj)];
            }
          }
        }
      }
      return out;
    }

    case Kind::kDownsample: {
      CheckImage(features, "downsample");
      const int small = kImageSide / factor_;
      std::vector<float> out(features.size(), 0.0f);
      const int pad = (kImageSide - small) / 2;
      for (int c = 0; c < kImageChannels; ++c) {
        for (int bi = 0; bi < small; ++bi) {
          for (int bj = 0; bj < small; ++bj) {
            double sum = 0.0;
            for (int u = 0; u < factor_; ++u) {
              for (int v = 0; v < factor_; ++v) {
                sum += features[PixelIndex(c, bi * factor_ + u,
                                           bj * factor_ + v)];
              }
            }
            const float mean =
                static_cast<float>(sum / (factor_ * factor_));
            if (upsample_back_) {
              for (int u = 0; u < factor_; ++u) {
                for (int v = 0; v < factor_; ++v) {
                  out[PixelIndex(c, bi * factor_ + u, bj * factor_ + v)] =
                      mean;
                }
              }
            } else {
              out[PixelIndex(c, pad + bi, pad + bj)] = mean;
            }
          }
        }
      }
      return out;
    }

    case Kind::kLinearMap: {
      if (features.size() != static_cast<size_t>(matrix_.cols())) {
        throw InvalidArgumentError("linear domain map expects " +
                                   std::to_string(matrix_.cols()) +
                                   " features");
      }
      Eigen::VectorXd x(features.size());
      for (size_t k = 0; k < features.size(); ++k) x[k] = features[k];
      const Eigen::VectorXd y = matrix_ * x;
      std::vector<float> out(features.size());
      for (size_t k = 0; k < out.size(); ++k) {
        out[k] = static_cast<float>(y[k]);
      }
      return out;
    }
  }
  throw InvalidArgumentError("unknown domain transform");
}

Dataset ReadCifarBatch(const std::filesystem::path& file,
                       size_t expected_records, uint32_t first_id,
                       Split split) {
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    throw IngestionError("cannot open CIFAR-10 batch " + file.string());
  }
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  if (expected_records > 0 && bytes < expected_records * kCifarRecordBytes) {
    throw IngestionError("truncated CIFAR-10 batch " + file.string() + ": " +
                         std::to_string(bytes) + " bytes, expected " +
                         std::to_string(expected_records * kCifarRecordBytes));
  }
  if (bytes % kCifarRecordBytes != 0) {
    throw FormatError("CIFAR-10 batch " + file.string() +
                      " is not a whole number of 3073-byte records");
  }
  const size_t records = bytes / kCifarRecordBytes;
  if (expected_records > 0 && records != expected_records) {
    throw FormatError("CIFAR-10 batch " + file.string() + " holds " +
                      std::to_string(records) + " records, expected " +
                      std::to_string(expected_records));
  }
  Dataset out(10, 2, kImageDim, split);
  out.Reserve(records);
  std::vector<unsigned char> record(kCifarRecordBytes);
  std::vector<float> pixels(kImageDim);
  for (size_t r = 0; r < records; ++r) {
    in.read(reinterpret_cast<char*>(record.data()), kCifarRecordBytes);
    if (!in) throw IngestionError("read failed in " + file.string());
    if (record[0] > 9) {
      throw FormatError("CIFAR-10 batch " + file.string() + " record " +
                        std::to_string(r) + " has label " +
                        std::to_string(record[0]));
    }
    for (int k = 0; k < kImageDim; ++k) {
      pixels[k] = static_cast<float>(record[1 + k]) / 255.0f;
    }
    out.Append(first_id + static_cast<uint32_t>(r), pixels, record[0], 0);
  }
  return out;
}

Cifar10S BuildCifar10S(const std::filesystem::path& cifar_dir,
                       const SkewSpec& spec, uint64_t seed,
                       const DomainTransform& transform) {
  spec.Validate(10, 2);
  std::vector<Dataset> batches;
  for (int b = 1; b <= 5; ++b) {
    batches.push_back(ReadCifarBatch(
        cifar_dir / ("data_batch_" + std::to_string(b) + ".bin"),
        kCifarBatchRecords, static_cast<uint32_t>((b - 1) * kCifarBatchRecords),
        Split::Train()));
  }
  const Dataset test = ReadCifarBatch(cifar_dir / "test_batch.bin",
                                      kCifarBatchRecords, 0, Split::Test(0));

  // Per-class row lists in file order.
  std::vector<std::vector<std::pair<int, size_t>>> by_class(10);
  for (int b = 0; b < 5; ++b) {
    for (size_t i = 0; i < batches[b].size(); ++i) {
      by_class[batches[b].label(i)].emplace_back(b, i);
    }
  }
  std::vector<std::vector<int>> domains(10);
  for (int c = 0; c < 10; ++c) {
    domains[c] = AssignDomains(
        by_class[c].size(), spec.rho, spec.majority_domain[c], 2,
        DeriveSeed(seed, "cifar10s/class" + std::to_string(c)));
  }
  // Emit rows in original file order so ids follow the source layout.
  std::vector<std::vector<int>> row_domain(5);
  for (int b = 0; b < 5; ++b) row_domain[b].assign(batches[b].size(), 0);
  for (int c = 0; c < 10; ++c) {
    for (size_t k = 0; k < by_class[c].size(); ++k) {
      row_domain[by_class[c][k].first][by_class[c][k].second] = domains[c][k];
    }
  }

  Cifar10S out{Dataset(10, 2, kImageDim, Split::Train()),
               Dataset(10, 2, kImageDim, Split::Test(0)),
               Dataset(10, 2, kImageDim, Split::Test(1))};
  out.train.Reserve(5 * kCifarBatchRecords);
  for (int b = 0; b < 5; ++b) {
    for (size_t i = 0; i < batches[b].size(); ++i) {
      const int d = row_domain[b][i];
      if (d == 0) {
        out.train.Append(batches[b].id(i), batches[b].features(i),
                         batches[b].label(i), 0);
      } else {
        out.train.Append(batches[b].id(i),
                         transform.Apply(batches[b].features(i)),
                         batches[b].label(i), 1);
      }
    }
  }
  out.test_color.Reserve(test.size());
  out.test_gray.Reserve(test.size());
  for (size_t i = 0; i < test.size(); ++i) {
    out.test_color.Append(test.id(i), test.features(i), test.label(i), 0);
    out.test_gray.Append(test.id(i), transform.Apply(test.features(i)),
                         test.label(i), 1);
  }
  return out;
}

void SyntheticConfig::Validate() const {
  if (n_classes < 2) throw InvalidArgumentError("need at least two classes");
  if (feature_dim < 2) throw InvalidArgumentError("feature_dim must be >= 2");
  if (train_per_class <= 0 || val_per_class <= 0 || test_per_class <= 0) {
    throw InvalidArgumentError("per-class counts must be positive");
  }
  if (!(sigma > 0.0)) throw InvalidArgumentError("sigma must be positive");
  if (!(discarded_fraction >= 0.0 && discarded_fraction <= 1.0)) {
    throw InvalidArgumentError("discarded_fraction must lie in [0, 1]");
  }
  if (class_means.size() > 0 &&
      (class_means.rows() != n_classes || class_means.cols() != feature_dim)) {
    throw InvalidArgumentError("class_means must be n_classes x feature_dim");
  }
  if (domain_transform) {
    if (domain_transform->kind() != DomainTransform::Kind::kLinearMap &&
        domain_transform->kind() != DomainTransform::Kind::kIdentity) {
      throw InvalidArgumentError(
          "synthetic data supports identity or linear_map transforms");
    }
    if (domain_transform->kind() == DomainTransform::Kind::kLinearMap &&
        domain_transform->matrix().rows() != feature_dim) {
      throw InvalidArgumentError("linear map size must equal feature_dim");
    }
  }
}

Eigen::MatrixXd SyntheticConfig::ResolvedMeans() const {
  if (class_means.size() > 0) return class_means;
  Rng rng(DeriveSeed(geometry_seed, "synthetic/geometry"));
  std::normal_distribution<double> normal(0.0, 1.0);
  if (feature_dim >= n_classes) {
    // Unit-norm regular simplex, rotated by a fixed orthonormal basis.
    Eigen::MatrixXd gauss(feature_dim, n_classes);
    for (Eigen::Index j = 0; j < gauss.cols(); ++j) {
      for (Eigen::Index i = 0; i < gauss.rows(); ++i) gauss(i, j) = normal(rng);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
    const Eigen::MatrixXd basis =
        qr.householderQ() * Eigen::MatrixXd::Identity(feature_dim, n_classes);
    Eigen::MatrixXd simplex =
        Eigen::MatrixXd::Identity(n_classes, n_classes).array() -
        1.0 / n_classes;
    simplex /= std::sqrt((n_classes - 1.0) / n_classes);
    return ShareEnergy(mean_scale * (basis * simplex).transpose());
  }
  Eigen::MatrixXd means(n_classes, feature_dim);
  for (int c = 0; c < n_classes; ++c) {
    for (int k = 0; k < feature_dim; ++k) means(c, k) = normal(rng);
    means.row(c).normalize();
  }
  return ShareEnergy(mean_scale * means);
}

Eigen::MatrixXd SyntheticConfig::ShareEnergy(const Eigen::MatrixXd& means) const {
  const DomainTransform transform = ResolvedTransform();
  if (transform.kind() != DomainTransform::Kind::kLinearMap) return means;
  // Orthogonal projector onto the row space of the map: the part of a mean
  // that survives the transform.
  const Eigen::MatrixXd& a = transform.matrix();
  const Eigen::MatrixXd kept_proj =
      a.completeOrthogonalDecomposition().pseudoInverse() * a;
  const Eigen::MatrixXd kept = means * kept_proj;
  const Eigen::MatrixXd lost = means - kept;
  if (kept.norm() < 1e-12 || lost.norm() < 1e-12) return means;
  return means.norm() * (std::sqrt(1.0 - discarded_fraction) * kept / kept.norm() +
                         std::sqrt(discarded_fraction) * lost / lost.norm());
}

DomainTransform SyntheticConfig::ResolvedTransform() const {
  return domain_transform ? *domain_transform
                          : DomainTransform::PairAveraging(feature_dim);
}

SyntheticSplits BuildSynthetic(const SyntheticConfig& cfg,
                               const SkewSpec& spec, uint64_t seed) {
  cfg.Validate();
  spec.Validate(cfg.n_classes, 2);
  const Eigen::MatrixXd means = cfg.ResolvedMeans();
  const DomainTransform transform = cfg.ResolvedTransform();
  const int dim = cfg.feature_dim;

  auto draw = [&](Rng& rng, int c) {
    std::normal_distribution<double> normal(0.0, cfg.sigma);
    std::vector<float> x(dim);
    for (int k = 0; k < dim; ++k) {
      x[k] = static_cast<float>(means(c, k) + normal(rng));
    }
    return x;
  };

  auto skewed = [&](const std::string& tag, int per_class, Split split) {
    Dataset out(cfg.n_classes, 2, dim, split);
    out.Reserve(static_cast<size_t>(per_class) * cfg.n_classes);
    Rng rng(DeriveSeed(seed, "synthetic/" + tag));
    uint32_t id = 0;
    for (int c = 0; c < cfg.n_classes; ++c) {
      const std::vector<int> domains = AssignDomains(
          per_class, spec.rho, spec.majority_domain[c], 2,
          DeriveSeed(seed, "skew/" + tag + "/" + std::to_string(c)));
      for (int k = 0; k < per_class; ++k) {
        std::vector<float> x = draw(rng, c);
        if (domains[k] == 1) x = transform.Apply(x);
        out.Append(id++, x, c, domains[k]);
      }
    }
    return out;
  };

  SyntheticSplits splits{skewed("train", cfg.train_per_class, Split::Train()),
                         skewed("val", cfg.val_per_class, Split::Val()),
                         Dataset(cfg.n_classes, 2, dim, Split::Test(0)),
                         Dataset(cfg.n_classes, 2, dim, Split::Test(1))};
  Rng rng(DeriveSeed(seed, "synthetic/test"));
  uint32_t id = 0;
  for (int c = 0; c < cfg.n_classes; ++c) {
    for (int k = 0; k < cfg.test_per_class; ++k) {
      const std::vector<float> x = draw(rng, c);
      splits.test_d0.Append(id, x, c, 0);
      splits.test_d1.Append(id, transform.Apply(x), c, 1);
      ++id;
    }
  }
  return splits;
}

CropFlip SampleCropFlip(Rng& rng) {
  std::uniform_int_distribution<int> offset(0, 8);
  std::bernoulli_distribution coin(0.5);
  CropFlip op;
  op.offset_x = offset(rng);
  op.offset_y = offset(rng);
  op.flip = coin(rng);
  return op;
}

std::vector<float> Augment(std::span<const float> image, const CropFlip& op) {
  CheckImage(image, "augment");
  if (op.offset_x < 0 || op.offset_x > 8 || op.offset_y < 0 ||
      op.offset_y > 8) {
    throw InvalidArgumentError("crop offsets must lie in [0, 8]");
  }
  std::vector<float> out(image.size(), 0.0f);
  for (int c = 0; c < kImageChannels; ++c) {
    for (int i = 0; i < kImageSide; ++i) {
      const int si = i + op.offset_y - 4;
      if (si < 0 || si >= kImageSide) continue;
      for (int j = 0; j < kImageSide; ++j) {
        const int sj = j + op.offset_x - 4;
        if (sj < 0 || sj >= kImageSide) continue;
        const int dj = op.flip ? kImageSide - 1 - j : j;
        out[PixelIndex(c, i, dj)] = image[PixelIndex(c, si, sj)];
      }
    }
  }
  return out;
}

std::vector<float> Augment(std::span<const float> image, uint64_t seed) {
  Rng rng(seed);
  return Augment(image, SampleCropFlip(rng));
}

void WriteDataset(const std::filesystem::path& file, const Dataset& dataset) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write " + file.string());
  out.write("SKB1", 4);
  internal::PutLE<uint32_t>(out, static_cast<uint32_t>(dataset.size()));
  internal::PutLE<uint32_t>(out, static_cast<uint32_t>(dataset.feature_dim()));
  internal::PutLE<uint16_t>(out, static_cast<uint16_t>(dataset.n_classes()));
  internal::PutLE<uint16_t>(out, static_cast<uint16_t>(dataset.n_domains()));
  for (size_t i = 0; i < dataset.size(); ++i) {
    internal::PutLE<uint32_t>(out, dataset.id(i));
    internal::PutLE<uint16_t>(out, static_cast<uint16_t>(dataset.label(i)));
    internal::PutLE<uint16_t>(out, static_cast<uint16_t>(dataset.domain(i)));
    for (float v : dataset.features(i)) internal::PutF32(out, v);
  }
  if (!out) throw IngestionError("write failed for " + file.string());
}

Dataset ReadDataset(const std::filesystem::path& file, Split split) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IngestionError("cannot open dataset file " + file.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string(magic, 4) != "SKB1") {
    throw FormatError(file.string() + " is not an SKB1 dataset file");
  }
  const std::string what = file.string();
  const uint32_t n = internal::GetLE<uint32_t>(in, what);
  const uint32_t dim = internal::GetLE<uint32_t>(in, what);
  const uint16_t n_classes = internal::GetLE<uint16_t>(in, what);
  const uint16_t n_domains = internal::GetLE<uint16_t>(in, what);
  Dataset out(n_classes, n_domains, static_cast<int>(dim), split);
  out.Reserve(n);
  std::vector<float> x(dim);
  for (uint32_t r = 0; r < n; ++r) {
    const uint32_t id = internal::GetLE<uint32_t>(in, what);
    const uint16_t y = internal::GetLE<uint16_t>(in, what);
    const uint16_t d = internal::GetLE<uint16_t>(in, what);
    for (uint32_t k = 0; k < dim; ++k) x[k] = internal::GetF32(in, what);
    out.Append(id, x, y, d);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(file.string() + " has trailing bytes after " +
                      std::to_string(n) + " records");
  }
  return out;
}

}  // namespace skewbench
