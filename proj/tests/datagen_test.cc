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
#include <vector>

#include <gtest/gtest.h>

#include "test_util.h"

namespace skewbench {
namespace {

using ::skewbench::testing::TempDir;

TEST(LumaGrayTest, Fixtures) {
  EXPECT_EQ(LumaGray(255, 255, 255), 255);
  EXPECT_EQ(LumaGray(0, 0, 0), 0);
  EXPECT_EQ(LumaGray(255, 0, 0), 76);
  EXPECT_EQ(LumaGray(0, 255, 0), 150);
  EXPECT_EQ(LumaGray(0, 0, 255), 29);
}

TEST(LumaGrayTest, IdempotentOnGrayTriples) {
  for (int v = 0; v < 256; ++v) {
    const auto b = static_cast<uint8_t>(v);
    EXPECT_EQ(LumaGray(b, b, b), b) << v;
  }
}

TEST(LumaGrayTest, RoundsHalfUp) {
  // In thousandths the exact luma is s; the result L must satisfy
  // -500 <= s - 1000 L < 500.
  for (int r = 0; r < 256; r += 5) {
    for (int g = 0; g < 256; g += 3) {
      for (int b = 0; b < 256; b += 7) {
        const int s = 299 * r + 587 * g + 114 * b;
        const int diff = s - 1000 * LumaGray(r, g, b);
        EXPECT_GE(diff, -500);
        EXPECT_LT(diff, 500);
      }
    }
  }
}

int CountEqual(const std::vector<int>& v, int x) {
  return static_cast<int>(std::count(v.begin(), v.end(), x));
}

TEST(AssignDomainsTest, ExactMajorityCounts) {
  EXPECT_EQ(CountEqual(AssignDomains(5000, 0.95, 0, 2, 1), 0), 4750);
  EXPECT_EQ(CountEqual(AssignDomains(100, 0.5, 1, 2, 1), 1), 50);
  EXPECT_EQ(CountEqual(AssignDomains(10, 1.0, 1, 2, 1), 1), 10);
  EXPECT_EQ(CountEqual(AssignDomains(1000, 0.95, 1, 2, 9), 0), 50);
}

TEST(AssignDomainsTest, DeterministicAndSeedSensitive) {
  EXPECT_EQ(AssignDomains(200, 0.8, 0, 2, 5), AssignDomains(200, 0.8, 0, 2, 5));
  EXPECT_NE(AssignDomains(200, 0.8, 0, 2, 5), AssignDomains(200, 0.8, 0, 2, 6));
}

TEST(AssignDomainsTest, MinoritySpreadOverOtherDomains) {
  const std::vector<int> d = AssignDomains(100, 0.7, 0, 3, 3);
  EXPECT_EQ(CountEqual(d, 0), 70);
  EXPECT_EQ(CountEqual(d, 1), 15);
  EXPECT_EQ(CountEqual(d, 2), 15);
}

TEST(SkewSpecTest, AlternatingAndValidation) {
  const SkewSpec s = SkewSpec::Alternating(10, 0.95);
  for (int c = 0; c < 10; ++c) EXPECT_EQ(s.majority_domain[c], c < 5 ? 0 : 1);
  EXPECT_THROW(SkewSpec::Alternating(10, 1.2).Validate(10, 2),
               InvalidArgumentError);
  EXPECT_THROW(s.Validate(9, 2), InvalidArgumentError);
}

SyntheticConfig SmallConfig() {
  SyntheticConfig cfg;
  cfg.train_per_class = 200;
  cfg.val_per_class = 40;
  cfg.test_per_class = 30;
  return cfg;
}

TEST(BuildSyntheticTest, SkewAndBalance) {
  SyntheticConfig cfg;
  cfg.test_per_class = 20;
  cfg.val_per_class = 20;
  const SyntheticSplits s =
      BuildSynthetic(cfg, SkewSpec::Alternating(10, 0.95), 4);
  const Eigen::MatrixXi counts = s.train.CellCounts();
  for (int c = 0; c < 10; ++c) {
    const int maj = c < 5 ? 0 : 1;
    EXPECT_EQ(counts(c, maj), 950);
    EXPECT_EQ(counts(c, 1 - maj), 50);
  }
  const Eigen::MatrixXi t0 = s.test_d0.CellCounts();
  const Eigen::MatrixXi t1 = s.test_d1.CellCounts();
  for (int c = 0; c < 10; ++c) {
    EXPECT_EQ(t0(c, 0), 20);
    EXPECT_EQ(t0(c, 1), 0);
    EXPECT_EQ(t1(c, 1), 20);
  }
  // Validation is skewed like train.
  const Eigen::MatrixXi v = s.val.CellCounts();
  EXPECT_EQ(v(0, 0), 19);
  EXPECT_EQ(v(9, 1), 19);
}

TEST(BuildSyntheticTest, GrayCopyIsTransformedColorCopy) {
  const SyntheticConfig cfg = SmallConfig();
  const SyntheticSplits s =
      BuildSynthetic(cfg, SkewSpec::Alternating(10, 0.95), 2);
  const DomainTransform t = cfg.ResolvedTransform();
  ASSERT_EQ(s.test_d0.size(), s.test_d1.size());
  for (size_t i = 0; i < s.test_d0.size(); ++i) {
    EXPECT_EQ(s.test_d0.id(i), s.test_d1.id(i));
    EXPECT_EQ(s.test_d0.label(i), s.test_d1.label(i));
    const std::vector<float> expect = t.Apply(s.test_d0.features(i));
    const auto got = s.test_d1.features(i);
    ASSERT_TRUE(std::equal(expect.begin(), expect.end(), got.begin()));
  }
}

TEST(BuildSyntheticTest, BitReproducible) {
  const SyntheticConfig cfg = SmallConfig();
  const SkewSpec spec = SkewSpec::Alternating(10, 0.8);
  const SyntheticSplits a = BuildSynthetic(cfg, spec, 7);
  const SyntheticSplits b = BuildSynthetic(cfg, spec, 7);
  EXPECT_EQ(a.train.GatherAll(), b.train.GatherAll());
  EXPECT_EQ(a.train.domains(), b.train.domains());
  const SyntheticSplits c = BuildSynthetic(cfg, spec, 8);
  EXPECT_NE(a.train.GatherAll(), c.train.GatherAll());
}

TEST(BuildSyntheticTest, IdentityTransformDomainsMatchInDistribution) {
  SyntheticConfig cfg = SmallConfig();
  cfg.train_per_class = 2000;
  cfg.domain_transform = DomainTransform::Identity();
  const SyntheticSplits s =
      BuildSynthetic(cfg, SkewSpec::Alternating(10, 0.5), 3);
  Eigen::VectorXd mean[2] = {Eigen::VectorXd::Zero(cfg.feature_dim),
                             Eigen::VectorXd::Zero(cfg.feature_dim)};
  int n[2] = {0, 0};
  for (size_t i = 0; i < s.train.size(); ++i) {
    const int d = s.train.domain(i);
    for (int k = 0; k < cfg.feature_dim; ++k) mean[d][k] += s.train.features(i)[k];
    ++n[d];
  }
  EXPECT_EQ(n[0], n[1]);
  const Eigen::VectorXd diff = mean[0] / n[0] - mean[1] / n[1];
  // Standard error of each coordinate is about sqrt(2 / 10000).
  EXPECT_LT(diff.cwiseAbs().maxCoeff(), 0.08);
}

TEST(BuildSyntheticTest, RankOneMapGivesRankOneFeatures) {
  SyntheticConfig cfg = SmallConfig();
  cfg.feature_dim = 8;
  Eigen::VectorXd u = Eigen::VectorXd::LinSpaced(8, 1.0, 2.0);
  cfg.domain_transform = DomainTransform::LinearMap(u * u.transpose());
  const SyntheticSplits s =
      BuildSynthetic(cfg, SkewSpec::Alternating(10, 0.5), 3);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(s.test_d1.GatherAll());
  const Eigen::VectorXd sv = svd.singularValues();
  EXPECT_GT(sv[0], 1.0);
  EXPECT_LT(sv[1] / sv[0], 1e-6);
}

TEST(BuildSyntheticTest, ZeroMapRejected) {
  EXPECT_THROW(DomainTransform::LinearMap(Eigen::MatrixXd::Zero(4, 4)),
               InvalidArgumentError);
}

TEST(BuildSyntheticTest, DiscardedFractionShapesMeans) {
  SyntheticConfig cfg;
  const Eigen::MatrixXd m = cfg.ResolvedMeans();
  const Eigen::MatrixXd a = cfg.ResolvedTransform().matrix();
  const Eigen::MatrixXd kept = m * a.transpose();
  const double lost_share = (m - kept).squaredNorm() / m.squaredNorm();
  EXPECT_NEAR(lost_share, cfg.discarded_fraction, 1e-12);
  // Energy is preserved.
  cfg.discarded_fraction = 0.5;
  EXPECT_NEAR(cfg.ResolvedMeans().norm(), m.norm(), 1e-9);
}

TEST(BuildSyntheticTest, PairAveragingIsProjection) {
  const Eigen::MatrixXd a = DomainTransform::PairAveraging(6).matrix();
  EXPECT_TRUE((a * a).isApprox(a));
  EXPECT_TRUE(a.isApprox(a.transpose()));
}

std::vector<float> RandomImage(uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> img(kImageDim);
  for (float& v : img) v = u(rng);
  return img;
}

float Pixel(const std::vector<float>& img, int c, int r, int col) {
  return img[c * kImageSide * kImageSide + r * kImageSide + col];
}

TEST(AugmentTest, CenterOffsetIsIdentity) {
  const std::vector<float> img = RandomImage(1);
  EXPECT_EQ(Augment(img, CropFlip{4, 4, false}), img);
}

TEST(AugmentTest, FlipIsInvolution) {
  const std::vector<float> img = RandomImage(2);
  const CropFlip flip{4, 4, true};
  const std::vector<float> once = Augment(img, flip);
  EXPECT_NE(once, img);
  EXPECT_EQ(Augment(once, flip), img);
  EXPECT_EQ(Pixel(once, 1, 3, 0), Pixel(img, 1, 3, kImageSide - 1));
}

TEST(AugmentTest, CornerOffsetShowsPadding) {
  const std::vector<float> img = RandomImage(3);
  const std::vector<float> out = Augment(img, CropFlip{0, 0, false});
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < kImageSide; ++i) {
      for (int k = 0; k < 4; ++k) {
        EXPECT_EQ(Pixel(out, c, k, i), 0.0f);  // top rows
        EXPECT_EQ(Pixel(out, c, i, k), 0.0f);  // left columns
      }
    }
  }
  EXPECT_EQ(Pixel(out, 0, 4, 4), Pixel(img, 0, 0, 0));
  EXPECT_EQ(Pixel(out, 2, 31, 31), Pixel(img, 2, 27, 27));
}

TEST(AugmentTest, SeededAndShapeChecked) {
  const std::vector<float> img = RandomImage(4);
  EXPECT_EQ(Augment(img, uint64_t{9}), Augment(img, uint64_t{9}));
  const std::vector<float> small(100, 0.0f);
  EXPECT_THROW(Augment(small, uint64_t{1}), InvalidArgumentError);
}

TEST(DomainTransformTest, GrayscaleMakesChannelEqualTriples) {
  std::vector<float> img = RandomImage(5);
  for (float& v : img) v = std::round(v * 255.0f) / 255.0f;
  const std::vector<float> g = DomainTransform::GrayscaleLuma().Apply(img);
  ASSERT_EQ(g.size(), img.size());
  for (int p = 0; p < kImageSide * kImageSide; ++p) {
    EXPECT_EQ(g[p], g[p + 1024]);
    EXPECT_EQ(g[p], g[p + 2048]);
  }
  EXPECT_EQ(DomainTransform::GrayscaleLuma().Apply(g), g);
}

TEST(DomainTransformTest, CropAndDownsampleKeepDimension) {
  const std::vector<float> img = RandomImage(6);
  EXPECT_EQ(DomainTransform::CenterCrop(28, true).Apply(img).size(),
            img.size());
  EXPECT_EQ(DomainTransform::Downsample(2, true).Apply(img).size(), img.size());
  const std::vector<float> down = DomainTransform::Downsample(4, true).Apply(img);
  // Every 4x4 block is constant.
  EXPECT_EQ(Pixel(down, 0, 0, 0), Pixel(down, 0, 3, 3));
  EXPECT_EQ(Pixel(down, 1, 4, 8), Pixel(down, 1, 7, 11));
}

void WriteCifarFile(const std::filesystem::path& file, int records,
                    uint64_t seed) {
  std::ofstream out(file, std::ios::binary);
  Rng rng(seed);
  for (int r = 0; r < records; ++r) {
    out.put(static_cast<char>(r % 10));
    for (int k = 0; k < kImageDim; ++k) {
      out.put(static_cast<char>(rng() & 0xFF));
    }
  }
}

TEST(CifarTest, ReadsRecordsScaled) {
  TempDir tmp;
  const auto file = tmp.path() / "data_batch_1.bin";
  WriteCifarFile(file, 12, 1);
  const Dataset d = ReadCifarBatch(file, 12, 100, Split::Train());
  ASSERT_EQ(d.size(), 12u);
  EXPECT_EQ(d.id(0), 100u);
  EXPECT_EQ(d.label(11), 1);
  for (size_t i = 0; i < d.size(); ++i) {
    for (float v : d.features(i)) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(CifarTest, ErrorsNameTheFile) {
  TempDir tmp;
  const auto missing = tmp.path() / "data_batch_1.bin";
  try {
    ReadCifarBatch(missing, 0, 0, Split::Train());
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("data_batch_1.bin"), std::string::npos);
  }
  const auto truncated = tmp.path() / "test_batch.bin";
  WriteCifarFile(truncated, 3, 2);
  std::filesystem::resize_file(truncated, 3 * 3073 - 10);
  EXPECT_THROW(ReadCifarBatch(truncated, 0, 0, Split::Train()), Error);
  WriteCifarFile(truncated, 5, 2);
  EXPECT_THROW(ReadCifarBatch(truncated, 4, 0, Split::Train()), FormatError);
  EXPECT_THROW(BuildCifar10S(tmp.path(), SkewSpec::Alternating(10, 0.95), 1),
               IngestionError);
}

TEST(DatasetTest, AppendValidates) {
  Dataset d(3, 2, 2);
  const float x[2] = {1.0f, 2.0f};
  d.Append(5, x, 0, 1);
  EXPECT_THROW(d.Append(5, x, 0, 1), InvalidArgumentError);
  EXPECT_THROW(d.Append(6, x, 3, 0), InvalidArgumentError);
  EXPECT_THROW(d.Append(7, x, 0, 2), InvalidArgumentError);
  const float bad[2] = {1.0f, std::nanf("")};
  EXPECT_THROW(d.Append(8, bad, 0, 0), InvalidArgumentError);
  const float wide[3] = {1.0f, 2.0f, 3.0f};
  EXPECT_THROW(d.Append(9, wide, 0, 0), InvalidArgumentError);
}

TEST(DatasetTest, FileRoundTrip) {
  TempDir tmp;
  const SyntheticSplits s =
      BuildSynthetic(SmallConfig(), SkewSpec::Alternating(10, 0.9), 1);
  const auto file = tmp.path() / "train.skb";
  WriteDataset(file, s.train);
  const Dataset back = ReadDataset(file);
  EXPECT_EQ(back.size(), s.train.size());
  EXPECT_EQ(back.ids(), s.train.ids());
  EXPECT_EQ(back.labels(), s.train.labels());
  EXPECT_EQ(back.domains(), s.train.domains());
  EXPECT_EQ(back.GatherAll(), s.train.GatherAll());

  std::ifstream in(file, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  EXPECT_EQ(std::string(magic, 4), "SKB1");

  std::filesystem::resize_file(file, std::filesystem::file_size(file) - 3);
  EXPECT_THROW(ReadDataset(file), Error);
}

TEST(DatasetTest, ConcatenateReassignsIds) {
  const SyntheticSplits s =
      BuildSynthetic(SmallConfig(), SkewSpec::Alternating(10, 0.9), 1);
  const Dataset* parts[] = {&s.test_d0, &s.test_d1};
  const Dataset all = Concatenate(parts, Split::Test(-1));
  ASSERT_EQ(all.size(), s.test_d0.size() * 2);
  std::vector<uint32_t> expect(all.size());
  std::iota(expect.begin(), expect.end(), 0u);
  EXPECT_EQ(all.ids(), expect);
  EXPECT_EQ(all.domain(all.size() - 1), 1);
}

}  // namespace
}  // namespace skewbench
