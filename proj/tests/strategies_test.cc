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

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.h"

namespace skewbench {
namespace {

using ::skewbench::testing::TempDir;

SyntheticSplits SmallData(uint64_t seed = 1) {
  SyntheticConfig cfg;
  cfg.n_classes = 4;
  cfg.feature_dim = 8;
  cfg.train_per_class = 60;
  cfg.val_per_class = 10;
  cfg.test_per_class = 10;
  return BuildSynthetic(cfg, SkewSpec::Alternating(4, 0.9), seed);
}

TrainOptions QuickOptions() {
  TrainOptions o;
  o.optim.epochs = 2;
  o.optim.batch_size = 32;
  o.trunk = {{16, Activation::kRelu}};
  return o;
}

bool SameParameters(const Network& a, const Network& b) {
  if (a.params().NumCoefficients() != b.params().NumCoefficients()) {
    return false;
  }
  for (size_t i = 0; i < a.params().NumCoefficients(); ++i) {
    if (a.params().Coefficient(i) != b.params().Coefficient(i)) return false;
  }
  return true;
}

TEST(ClassBalancedTest, WorkedWeights) {
  // beta = 0.9: counts 1 and 2 give raw weights 0.1/0.1 and 0.1/0.19.
  Eigen::MatrixXi counts(1, 2);
  counts << 1, 2;
  const Eigen::MatrixXd w = ClassBalancedWeights(counts, 0.9);
  const double raw1 = (1 - 0.9) / (1 - 0.9);
  const double raw2 = (1 - 0.9) / (1 - 0.81);
  EXPECT_NEAR(raw2, 0.526316, 1e-6);
  EXPECT_NEAR(w(0, 1) / w(0, 0), raw2 / raw1, 1e-12);
  EXPECT_NEAR((w(0, 0) * 1 + w(0, 1) * 2) / 3.0, 1.0, 1e-12);
}

TEST(ClassBalancedTest, BetaZeroIsUniformAndErrors) {
  Eigen::MatrixXi counts(2, 2);
  counts << 95, 5, 5, 95;
  EXPECT_TRUE(ClassBalancedWeights(counts, 0.0).isApproxToConstant(1.0));
  EXPECT_THROW(ClassBalancedWeights(counts, 1.0), InvalidArgumentError);
  counts(0, 1) = 0;
  EXPECT_THROW(ClassBalancedWeights(counts, 0.5), InvalidArgumentError);
}

TEST(UniformConfusionTest, UniformQHasLossLnD) {
  const LossGrad g = UniformConfusion(Eigen::VectorXd::Constant(2, 0.5));
  EXPECT_NEAR(g.loss, std::log(2.0), 1e-12);
  const LossGrad z = UniformConfusionFromLogits(Eigen::VectorXd::Zero(2));
  EXPECT_NEAR(z.loss, std::log(2.0), 1e-12);
  EXPECT_NEAR(z.dlogits.cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(UniformConfusionTest, LogitGradientMatchesFiniteDifference) {
  Eigen::VectorXd z(3);
  z << 0.4, -1.1, 2.0;
  const LossGrad g = UniformConfusionFromLogits(z);
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd p = z, m = z;
    p[k] += 1e-6;
    m[k] -= 1e-6;
    const double fd = (UniformConfusionFromLogits(p).loss -
                       UniformConfusionFromLogits(m).loss) /
                      2e-6;
    EXPECT_NEAR(g.dlogits[k], fd, 1e-7);
  }
}

TEST(ProjectionTest, RemovesAdversaryComponent) {
  Eigen::VectorXd t(2), a(2);
  t << 1, 1;
  a << 1, 0;
  const Eigen::VectorXd p = AdversaryProjection(t, a);
  EXPECT_NEAR(p[0], 0.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0, 1e-15);
  const Eigen::VectorXd gt = Eigen::VectorXd::LinSpaced(7, -1.0, 2.0);
  const Eigen::VectorXd ga = Eigen::VectorXd::LinSpaced(7, 3.0, -0.5);
  EXPECT_NEAR(AdversaryProjection(gt, ga).dot(ga), 0.0, 1e-12);
  EXPECT_EQ(AdversaryProjection(gt, Eigen::VectorXd::Zero(7)), gt);
}

TEST(OversampleTest, CellDrawsAreUniform) {
  // Skewed 2x2 cells with 95/5 splits.
  std::vector<int> y, d;
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < 100; ++i) {
      y.push_back(c);
      d.push_back(i < 95 ? c : 1 - c);
    }
  }
  const size_t draws = 100000;
  const std::vector<size_t> idx = OversampleIndices(y, d, 2, 2, draws, 7);
  ASSERT_EQ(idx.size(), draws);
  double counts[4] = {0, 0, 0, 0};
  for (size_t i : idx) counts[y[i] * 2 + d[i]] += 1.0;
  double chi2 = 0.0;
  const double expected = draws / 4.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 3 degrees of freedom: P(chi2 > 11.345) = 0.01.
  EXPECT_LT(chi2, 11.345);
}

TEST(OversampleTest, EmptyCellsExcluded) {
  const std::vector<int> y = {0, 0, 1};
  const std::vector<int> d = {0, 0, 0};
  const std::vector<size_t> idx = OversampleIndices(y, d, 2, 2, 1000, 3);
  for (size_t i : idx) EXPECT_LT(i, 3u);
  EXPECT_EQ(idx, OversampleIndices(y, d, 2, 2, 1000, 3));
}

TEST(StrategyTest, NamesAndLayouts) {
  EXPECT_EQ(Strategy::ClassBalanced(0.9).Label(), "class_balanced(beta=0.9)");
  EXPECT_EQ(Strategy::DomainDiscriminative().Layout(), ScoreLayout::kJoint);
  EXPECT_EQ(Strategy::DomainIndependent().Layout(), ScoreLayout::kPerDomain);
  EXPECT_EQ(Strategy::Baseline().Layout(), ScoreLayout::kPlain);
  EXPECT_FALSE(Strategy::Baseline().UsesDomainLabels());
  EXPECT_TRUE(Strategy::AdvUniformConfusion(1.0).UsesDomainLabels());
  EXPECT_EQ(Strategy::ParseType("domain_independent"),
            StrategyType::kDomainIndependent);
  EXPECT_THROW(Strategy::ParseType("bogus"), InvalidArgumentError);
  EXPECT_THROW(Strategy::ClassBalanced(1.5).Validate(), InvalidArgumentError);
}

TEST(StrategyTest, NetworkSpecs) {
  const std::vector<LayerSpec> trunk = {{16, Activation::kRelu}};
  const NetworkSpec dd =
      BuildNetworkSpec(Strategy::DomainDiscriminative(), 8, 4, 2, trunk);
  ASSERT_EQ(dd.heads.size(), 1u);
  EXPECT_EQ(dd.heads[0].width, 8);
  const NetworkSpec di =
      BuildNetworkSpec(Strategy::DomainIndependent(), 8, 4, 2, trunk);
  EXPECT_EQ(di.heads.size(), 2u);
  const NetworkSpec adv =
      BuildNetworkSpec(Strategy::AdvReversalProjection(1.0), 8, 4, 2, trunk);
  ASSERT_EQ(adv.heads.size(), 2u);
  EXPECT_EQ(adv.heads[1].role, HeadRole::kAdversary);
  EXPECT_EQ(adv.heads[1].input, adv.heads[0].name);
}

TEST(TrainTest, BetaZeroIsBitIdenticalToBaseline) {
  const SyntheticSplits s = SmallData();
  const TrainedModel a = Train(s.train, Strategy::Baseline(), QuickOptions(), 5);
  const TrainedModel b =
      Train(s.train, Strategy::ClassBalanced(0.0), QuickOptions(), 5);
  EXPECT_TRUE(SameParameters(a.network, b.network));
}

TEST(TrainTest, Deterministic) {
  const SyntheticSplits s = SmallData();
  for (const Strategy& st :
       {Strategy::Oversample(), Strategy::DomainIndependent(),
        Strategy::AdvUniformConfusion(1.0),
        Strategy::AdvReversalProjection(1.0)}) {
    const TrainedModel a = Train(s.train, st, QuickOptions(), 9);
    const TrainedModel b = Train(s.train, st, QuickOptions(), 9);
    EXPECT_TRUE(SameParameters(a.network, b.network)) << st.Label();
  }
}

TEST(TrainTest, ZeroLearningRateKeepsInitialization) {
  const SyntheticSplits s = SmallData();
  TrainOptions o = QuickOptions();
  o.optim.lr = 0.0;
  for (const Strategy& st :
       {Strategy::Baseline(), Strategy::DomainDiscriminative(),
        Strategy::AdvReversalProjection(1.0)}) {
    const TrainedModel m = Train(s.train, st, o, 3);
    const Network init = Network::Create(m.network.spec(),
                                         DeriveSeed(3, "init"));
    EXPECT_TRUE(SameParameters(m.network, init)) << st.Label();
  }
}

TEST(TrainTest, DomainIndependentHeadsSeeOnlyTheirDomain) {
  // With every training example in domain 0, head "domain1" never receives
  // a gradient and keeps its initialization.
  SyntheticConfig cfg;
  cfg.n_classes = 4;
  cfg.feature_dim = 8;
  cfg.train_per_class = 40;
  cfg.val_per_class = 4;
  cfg.test_per_class = 4;
  const SyntheticSplits s =
      BuildSynthetic(cfg, SkewSpec{1.0, {0, 0, 0, 0}}, 2);
  const TrainedModel m =
      Train(s.train, Strategy::DomainIndependent(), QuickOptions(), 4);
  const Network init = Network::Create(m.network.spec(), DeriveSeed(4, "init"));
  const int h1 = m.network.HeadLayer("domain1");
  const int h0 = m.network.HeadLayer("domain0");
  EXPECT_EQ(m.network.params().layers[h1].weight,
            init.params().layers[h1].weight);
  EXPECT_NE(m.network.params().layers[h0].weight,
            init.params().layers[h0].weight);
}

TEST(TrainTest, TrainPriorMatchesCounts) {
  const SyntheticSplits s = SmallData();
  const TrainedModel m = Train(s.train, Strategy::Baseline(), QuickOptions(), 1);
  EXPECT_NEAR(m.train_prior.joint(0, 0), 54.0 / 240.0, 1e-5);
  EXPECT_NEAR(m.train_prior.joint.sum(), 1.0, 1e-12);
}

TEST(ScoreTest, LayoutsAndShapes) {
  const SyntheticSplits s = SmallData();
  const TrainedModel dd =
      Train(s.train, Strategy::DomainDiscriminative(), QuickOptions(), 1);
  const ScoreTable t = Score(dd, s.test_d0);
  EXPECT_EQ(t.layout, ScoreLayout::kJoint);
  EXPECT_EQ(t.raw.cols(), 8);
  EXPECT_EQ(t.size(), s.test_d0.size());
  EXPECT_NO_THROW(t.Validate());
  const TrainedModel di =
      Train(s.train, Strategy::DomainIndependent(), QuickOptions(), 1);
  EXPECT_EQ(Score(di, s.test_d1).layout, ScoreLayout::kPerDomain);
}

TEST(ScoreTest, DomainPosteriorRowsAreDistributions) {
  const SyntheticSplits s = SmallData();
  TrainedModel m =
      Train(s.train, Strategy::AdvUniformConfusion(1.0), QuickOptions(), 1);
  FitDomainPosterior(m, s.val);
  const ScoreTable t = Score(m, s.test_d0);
  ASSERT_EQ(t.domain_probs.cols(), 2);
  for (Eigen::Index i = 0; i < t.domain_probs.rows(); ++i) {
    EXPECT_NEAR(t.domain_probs.row(i).sum(), 1.0, 1e-12);
  }
}

TEST(ModelIoTest, SaveLoadRoundTrip) {
  TempDir tmp;
  const SyntheticSplits s = SmallData();
  TrainedModel m =
      Train(s.train, Strategy::DomainIndependent(), QuickOptions(), 2);
  FitDomainPosterior(m, s.val);
  SaveModel(tmp.path() / "model", m);
  const TrainedModel back = LoadModel(tmp.path() / "model");
  EXPECT_TRUE(SameParameters(back.network, m.network));
  EXPECT_EQ(back.strategy.Label(), m.strategy.Label());
  EXPECT_EQ(back.layout, m.layout);
  const ScoreTable a = Score(m, s.test_d0);
  const ScoreTable b = Score(back, s.test_d0);
  EXPECT_EQ(a.raw, b.raw);
  EXPECT_LT((a.domain_probs - b.domain_probs).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(LoadModel(tmp.path() / "missing"), IngestionError);
}

}  // namespace
}  // namespace skewbench
