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

#include "skewbench/inference.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>

namespace skewbench {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Eigen::VectorXd RowSoftmax(const Eigen::VectorXd& v) {
  Eigen::VectorXd e = (v.array() - v.maxCoeff()).exp();
  return e / e.sum();
}

int ArgmaxRow(const Eigen::Ref<const Eigen::VectorXd>& v) {
  int best = 0;
  for (int k = 1; k < v.size(); ++k) {
    if (v[k] > v[best]) best = k;
  }
  return best;
}

// Joint P_tr(y,d|x) rows in kJoint order.
Eigen::MatrixXd JointPosteriors(const ScoreTable& t, const TrainPrior* prior) {
  const Eigen::MatrixXd p = t.Probabilities();
  if (t.layout == ScoreLayout::kJoint) return p;
  // Per-domain heads give P(y|d,x); weight each by the training domain
  // marginal.
  const Eigen::VectorXd pd = prior->joint.colwise().sum().transpose();
  Eigen::MatrixXd joint(p.rows(), t.n_classes * t.n_domains);
  for (int y = 0; y < t.n_classes; ++y) {
    for (int d = 0; d < t.n_domains; ++d) {
      joint.col(y * t.n_domains + d) = p.col(d * t.n_classes + y) * pd[d];
    }
  }
  return joint;
}

// P(y|d,x) rows in kPerDomain order, prior-shifted when a prior is given.
Eigen::MatrixXd Conditionals(const ScoreTable& t, const TrainPrior* prior) {
  const int n = t.n_classes;
  const int nd = t.n_domains;
  Eigen::MatrixXd cond(t.size(), n * nd);
  if (t.layout == ScoreLayout::kJoint) {
    Eigen::MatrixXd joint = t.Probabilities();
    if (prior) joint = PriorShift(joint, *prior);
    for (int d = 0; d < nd; ++d) {
      for (int y = 0; y < n; ++y) cond.col(d * n + y) = joint.col(y * nd + d);
    }
  } else {
    cond = t.Probabilities();
    if (prior) {
      const Eigen::MatrixXd te = prior->TestJoint();
      for (int d = 0; d < nd; ++d) {
        for (int y = 0; y < n; ++y) {
          const double ratio = (te(y, d) / te.col(d).sum()) /
                               (prior->joint(y, d) / prior->joint.col(d).sum());
          cond.col(d * n + y) *= ratio;
        }
      }
    }
  }
  for (Eigen::Index i = 0; i < cond.rows(); ++i) {
    for (int d = 0; d < nd; ++d) {
      const double s = cond.row(i).segment(d * n, n).sum();
      if (s > 0.0) cond.row(i).segment(d * n, n) /= s;
    }
  }
  return cond;
}

void CheckPrior(const ScoreTable& t, const TrainPrior& prior) {
  prior.Validate();
  if (prior.joint.rows() != t.n_classes || prior.joint.cols() != t.n_domains) {
    throw InvalidArgumentError("prior shape does not match the score table");
  }
}

// ---------------------------------------------------------------------------
// RBA.

struct RbaProblem {
  const Eigen::MatrixXd& scores;
  int n_classes;
  int n_domains;
  std::span<const int> known;
  double hi;   // target + epsilon
  double lo;   // target - epsilon
  double tol;

  size_t n() const { return static_cast<size_t>(scores.rows()); }
  int choices() const { return static_cast<int>(scores.cols()); }
  bool known_mode() const { return !known.empty(); }
  int ClassOf(size_t /*i*/, int choice) const {
    return known_mode() ? choice : choice / n_domains;
  }
  int DomainOf(size_t i, int choice) const {
    return known_mode() ? known[i] : choice % n_domains;
  }
};

RbaProblem MakeProblem(const Eigen::MatrixXd& scores, int n_classes,
                       int n_domains, std::span<const int> known,
                       const RbaConfig& config) {
  config.Validate();
  if (n_domains != 2) {
    throw InvalidArgumentError("RBA supports exactly two domains");
  }
  if (n_classes < 1) throw InvalidArgumentError("RBA needs classes");
  if (!known.empty()) {
    if (known.size() != static_cast<size_t>(scores.rows()) ||
        scores.cols() != n_classes) {
      throw InvalidArgumentError(
          "RBA with known domains needs an examples x N score matrix and "
          "one domain per example");
    }
    for (int d : known) {
      if (d < 0 || d >= n_domains) {
        throw InvalidArgumentError("RBA: known domain out of range");
      }
    }
  } else if (scores.cols() != n_classes * n_domains) {
    throw InvalidArgumentError(
        "RBA without known domains needs an examples x (N*D) score matrix");
  }
  if (scores.hasNaN()) throw NumericError("RBA: NaN log-score");
  const double t = 0.5 + config.target_bias;
  return RbaProblem{scores,          n_classes,         n_domains, known,
                    t + config.epsilon, t - config.epsilon, config.tolerance};
}

struct Counts {
  std::vector<int> d0;
  std::vector<int> d1;
};

Counts CountAssignment(const RbaProblem& p, const std::vector<int>& choice) {
  Counts c{std::vector<int>(p.n_classes, 0), std::vector<int>(p.n_classes, 0)};
  for (size_t i = 0; i < p.n(); ++i) {
    const int y = p.ClassOf(i, choice[i]);
    (p.DomainOf(i, choice[i]) == 0 ? c.d0 : c.d1)[y]++;
  }
  return c;
}

// g_hi = a - hi (a + b) <= 0 and g_lo = lo (a + b) - a <= 0.
double HiConstraint(const RbaProblem& p, int a, int b) {
  return a - p.hi * (a + b);
}
double LoConstraint(const RbaProblem& p, int a, int b) {
  return p.lo * (a + b) - a;
}

double TotalViolation(const RbaProblem& p, const Counts& c) {
  double v = 0.0;
  for (int y = 0; y < p.n_classes; ++y) {
    v += std::max(0.0, HiConstraint(p, c.d0[y], c.d1[y]) - p.tol);
    v += std::max(0.0, LoConstraint(p, c.d0[y], c.d1[y]) - p.tol);
  }
  return v;
}

double RatioViolation(const RbaProblem& p, const Counts& c) {
  const double target = 0.5 * (p.hi + p.lo);
  const double eps = 0.5 * (p.hi - p.lo);
  double worst = 0.0;
  for (int y = 0; y < p.n_classes; ++y) {
    const int m = c.d0[y] + c.d1[y];
    if (m == 0) continue;
    const double ratio = static_cast<double>(c.d0[y]) / m;
    worst = std::max(worst, std::abs(ratio - target) - eps);
  }
  return std::max(0.0, worst);
}

double Objective(const RbaProblem& p, const std::vector<int>& choice) {
  double s = 0.0;
  for (size_t i = 0; i < p.n(); ++i) s += p.scores(i, choice[i]);
  return s;
}

RbaResult MakeResult(const RbaProblem& p, const std::vector<int>& choice,
                     bool feasible, bool proven, int iterations) {
  RbaResult r;
  r.classes.resize(p.n());
  r.domains.resize(p.n());
  for (size_t i = 0; i < p.n(); ++i) {
    r.classes[i] = p.ClassOf(i, choice[i]);
    r.domains[i] = p.DomainOf(i, choice[i]);
  }
  r.objective = Objective(p, choice);
  r.status = feasible ? RbaStatus::kFeasible : RbaStatus::kInfeasible;
  r.proven = proven;
  r.iterations = iterations;
  r.max_violation = RatioViolation(p, CountAssignment(p, choice));
  return r;
}

// Lagrange-adjusted score of example i taking `choice`.
inline double Adjusted(const RbaProblem& p, const std::vector<double>& lam_hi,
                       const std::vector<double>& lam_lo, size_t i,
                       int choice) {
  const int y = p.ClassOf(i, choice);
  const double z = p.DomainOf(i, choice) == 0 ? 1.0 : 0.0;
  return p.scores(i, choice) - lam_hi[y] * (z - p.hi) -
         lam_lo[y] * (p.lo - z);
}

// Depth-first branch and bound. Any λ >= 0 gives a valid upper bound:
// for a feasible completion, sum of scores <= sum of adjusted scores.
class BranchAndBound {
 public:
  BranchAndBound(const RbaProblem& p, const std::vector<double>& lam_hi,
                 const std::vector<double>& lam_lo, size_t budget)
      : p_(p), budget_(budget) {
    const size_t n = p.n();
    const int k = p.choices();
    adjusted_.resize(n, k);
    for (size_t i = 0; i < n; ++i) {
      for (int c = 0; c < k; ++c) adjusted_(i, c) = Adjusted(p, lam_hi, lam_lo, i, c);
    }
    // Most decisive examples first.
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), size_t{0});
    std::vector<double> regret(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
      Eigen::VectorXd row = adjusted_.row(i);
      std::sort(row.data(), row.data() + row.size(), std::greater<>());
      regret[i] = row.size() > 1 ? row[0] - row[1] : 0.0;
    }
    std::stable_sort(order_.begin(), order_.end(), [&](size_t a, size_t b) {
      return regret[a] > regret[b];
    });
    suffix_.assign(n + 1, 0.0);
    for (size_t k2 = n; k2-- > 0;) {
      suffix_[k2] = suffix_[k2 + 1] + adjusted_.row(order_[k2]).maxCoeff();
    }
    choice_order_.resize(n);
    for (size_t i = 0; i < n; ++i) {
      std::vector<int>& co = choice_order_[i];
      co.resize(k);
      std::iota(co.begin(), co.end(), 0);
      std::stable_sort(co.begin(), co.end(), [&](int a, int b) {
        return adjusted_(i, a) > adjusted_(i, b);
      });
    }
    if (p.known_mode()) {
      remaining_d0_.assign(n + 1, 0);
      remaining_d1_.assign(n + 1, 0);
      for (size_t k2 = n; k2-- > 0;) {
        const bool zero = p.known[order_[k2]] == 0;
        remaining_d0_[k2] = remaining_d0_[k2 + 1] + (zero ? 1 : 0);
        remaining_d1_[k2] = remaining_d1_[k2 + 1] + (zero ? 0 : 1);
      }
    }
  }

  // Returns true when the search finished inside the budget.
  bool Run(double incumbent_obj, const std::vector<int>* incumbent) {
    best_obj_ = incumbent_obj;
    if (incumbent) best_ = *incumbent;
    current_.assign(p_.n(), 0);
    a_.assign(p_.n_classes, 0);
    b_.assign(p_.n_classes, 0);
    nodes_ = 0;
    exhausted_ = false;
    Descend(0, 0.0, 0.0);
    return !exhausted_;
  }

  bool found() const { return !best_.empty(); }
  const std::vector<int>& best() const { return best_; }
  double best_objective() const { return best_obj_; }

 private:
  bool CountsCanRecover(size_t depth) const {
    if (!p_.known_mode()) return true;
    const int r0 = remaining_d0_[depth];
    const int r1 = remaining_d1_[depth];
    long need0 = 0;
    long need1 = 0;
    for (int y = 0; y < p_.n_classes; ++y) {
      const double a = a_[y];
      const double b = b_[y];
      if (a + b == 0) continue;
      // Domain-0 additions needed for the lower ratio bound.
      if (p_.lo > 0.0) {
        const double x = (p_.lo * (a + b) - a - p_.tol) / (1.0 - p_.lo);
        if (x > 0) need0 += static_cast<long>(std::ceil(x));
      }
      // Domain-1 additions needed for the upper ratio bound.
      if (a > 0 && p_.hi < 1.0) {
        if (p_.hi <= 0.0) return false;
        const double y1 = (a - p_.hi * (a + b) - p_.tol) / p_.hi;
        if (y1 > 0) need1 += static_cast<long>(std::ceil(y1));
      }
    }
    return need0 <= r0 && need1 <= r1;
  }

  bool Feasible() const {
    for (int y = 0; y < p_.n_classes; ++y) {
      if (HiConstraint(p_, a_[y], b_[y]) > p_.tol) return false;
      if (LoConstraint(p_, a_[y], b_[y]) > p_.tol) return false;
    }
    return true;
  }

  void Descend(size_t depth, double obj, double adj) {
    if (exhausted_) return;
    if (++nodes_ > budget_) {
      exhausted_ = true;
      return;
    }
    if (depth == p_.n()) {
      if (Feasible() && (best_.empty() || obj > best_obj_ + 1e-12)) {
        best_obj_ = obj;
        best_ = current_;
      }
      return;
    }
    if (!CountsCanRecover(depth)) return;
    const size_t i = order_[depth];
    for (int c : choice_order_[i]) {
      const double bound = adj + adjusted_(i, c) + suffix_[depth + 1];
      if (!best_.empty() && bound <= best_obj_ + 1e-12) break;
      const int y = p_.ClassOf(i, c);
      const bool zero = p_.DomainOf(i, c) == 0;
      (zero ? a_ : b_)[y]++;
      current_[i] = c;
      Descend(depth + 1, obj + p_.scores(i, c), adj + adjusted_(i, c));
      (zero ? a_ : b_)[y]--;
      if (exhausted_) return;
    }
  }

  const RbaProblem& p_;
  size_t budget_;
  Eigen::MatrixXd adjusted_;
  std::vector<size_t> order_;
  std::vector<double> suffix_;
  std::vector<std::vector<int>> choice_order_;
  std::vector<int> remaining_d0_;
  std::vector<int> remaining_d1_;
  std::vector<int> current_;
  std::vector<int> a_;
  std::vector<int> b_;
  std::vector<int> best_;
  double best_obj_ = kNegInf;
  size_t nodes_ = 0;
  bool exhausted_ = false;
};

}  // namespace

std::string LayoutName(ScoreLayout layout) {
  switch (layout) {
    case ScoreLayout::kPlain:
      return "plain_N";
    case ScoreLayout::kJoint:
      return "joint_ND";
    case ScoreLayout::kPerDomain:
      return "per_domain_DxN";
  }
  return "unknown";
}

ScoreLayout ParseLayout(std::string_view name) {
  if (name == "plain_N") return ScoreLayout::kPlain;
  if (name == "joint_ND") return ScoreLayout::kJoint;
  if (name == "per_domain_DxN") return ScoreLayout::kPerDomain;
  throw InvalidArgumentError("unknown score layout '" + std::string(name) +
                             "'");
}

int ScoreTable::Width() const {
  return layout == ScoreLayout::kPlain ? n_classes : n_classes * n_domains;
}

int ScoreTable::Column(int y, int d) const {
  switch (layout) {
    case ScoreLayout::kPlain:
      return y;
    case ScoreLayout::kJoint:
      return y * n_domains + d;
    case ScoreLayout::kPerDomain:
      return d * n_classes + y;
  }
  return y;
}

bool ScoreTable::HasKnownDomains() const {
  if (d_true.size() != size()) return false;
  return std::all_of(d_true.begin(), d_true.end(),
                     [&](int d) { return d >= 0 && d < n_domains; });
}

Eigen::MatrixXd ScoreTable::Probabilities() const {
  if (probs.size() > 0) return probs;
  Eigen::MatrixXd p(raw.rows(), raw.cols());
  const int block = layout == ScoreLayout::kPerDomain ? n_classes : Width();
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    for (int start = 0; start < Width(); start += block) {
      p.row(i).segment(start, block) =
          RowSoftmax(raw.row(i).segment(start, block).transpose()).transpose();
    }
  }
  return p;
}

void ScoreTable::Validate() const {
  if (n_classes < 1 || n_domains < 1) {
    throw InvalidArgumentError("score table needs classes and domains");
  }
  const auto n = static_cast<Eigen::Index>(ids.size());
  if (raw.rows() != n || raw.cols() != Width()) {
    throw InvalidArgumentError("score table raw matrix has the wrong shape");
  }
  if ((!y_true.empty() && y_true.size() != ids.size()) ||
      (!d_true.empty() && d_true.size() != ids.size())) {
    throw InvalidArgumentError("score table label columns have wrong length");
  }
  if (!raw.allFinite()) throw NumericError("score table has non-finite scores");
  if (probs.size() > 0) {
    if (probs.rows() != n || probs.cols() != Width()) {
      throw InvalidArgumentError("probability matrix has the wrong shape");
    }
    const int block = layout == ScoreLayout::kPerDomain ? n_classes : Width();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int start = 0; start < Width(); start += block) {
        const auto seg = probs.row(i).segment(start, block);
        if ((seg.array() < 0.0).any() || std::abs(seg.sum() - 1.0) > 1e-9) {
          throw InvalidArgumentError("probability row " + std::to_string(i) +
                                     " is not a distribution");
        }
      }
    }
  }
  if (domain_probs.size() > 0 &&
      (domain_probs.rows() != n || domain_probs.cols() != n_domains)) {
    throw InvalidArgumentError("domain probability matrix has wrong shape");
  }
}

ScoreTable ConcatenateScores(const ScoreTable& a, const ScoreTable& b) {
  if (a.layout != b.layout || a.n_classes != b.n_classes ||
      a.n_domains != b.n_domains) {
    throw InvalidArgumentError("cannot concatenate differing score tables");
  }
  auto stack = [](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    if (x.size() == 0 && y.size() == 0) return Eigen::MatrixXd();
    if ((x.size() == 0) != (y.size() == 0)) {
      throw InvalidArgumentError("optional score columns present in only "
                                 "one of the tables");
    }
    Eigen::MatrixXd out(x.rows() + y.rows(), x.cols());
    out << x, y;
    return out;
  };
  ScoreTable out = a;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  out.y_true.insert(out.y_true.end(), b.y_true.begin(), b.y_true.end());
  out.d_true.insert(out.d_true.end(), b.d_true.begin(), b.d_true.end());
  out.raw = stack(a.raw, b.raw);
  out.probs = stack(a.probs, b.probs);
  out.domain_probs = stack(a.domain_probs, b.domain_probs);
  return out;
}

TrainPrior TrainPrior::Uniform(int n_classes, int n_domains) {
  TrainPrior p;
  p.joint = Eigen::MatrixXd::Constant(n_classes, n_domains,
                                      1.0 / (n_classes * n_domains));
  return p;
}

TrainPrior TrainPrior::FromCounts(const Eigen::MatrixXi& counts,
                                  double floor) {
  if (counts.size() == 0 || (counts.array() < 0).any() || counts.sum() == 0) {
    throw InvalidArgumentError("prior counts must be nonnegative, not all 0");
  }
  TrainPrior p;
  p.joint = counts.cast<double>() / static_cast<double>(counts.sum());
  return p.Smoothed(floor);
}

TrainPrior TrainPrior::Smoothed(double floor) const {
  TrainPrior p = *this;
  p.joint = p.joint.cwiseMax(floor);
  p.joint /= p.joint.sum();
  return p;
}

Eigen::MatrixXd TrainPrior::TestJoint() const {
  if (test.size() > 0) return test / test.sum();
  return Eigen::MatrixXd::Constant(joint.rows(), joint.cols(),
                                   1.0 / joint.size());
}

void TrainPrior::Validate() const {
  if (joint.size() == 0) throw InvalidArgumentError("empty prior");
  if (!joint.allFinite() || (joint.array() < 0.0).any()) {
    throw InvalidArgumentError("prior must be finite and nonnegative");
  }
  if (std::abs(joint.sum() - 1.0) > 1e-9) {
    throw InvalidArgumentError("prior must sum to 1");
  }
  if (test.size() > 0 &&
      (test.rows() != joint.rows() || test.cols() != joint.cols() ||
       (test.array() < 0.0).any() || test.sum() <= 0.0)) {
    throw InvalidArgumentError("target prior has the wrong shape or mass");
  }
}

Eigen::MatrixXd PriorShift(const Eigen::MatrixXd& posteriors,
                           const TrainPrior& prior) {
  prior.Validate();
  const Eigen::Index n_classes = prior.joint.rows();
  const Eigen::Index n_domains = prior.joint.cols();
  if (posteriors.cols() != n_classes * n_domains) {
    throw InvalidArgumentError("posterior rows must have N*D entries");
  }
  if ((prior.joint.array() <= 0.0).any()) {
    throw InvalidArgumentError(
        "prior has a zero cell; smooth it first (TrainPrior::Smoothed, "
        "prior smoothing floor in the config)");
  }
  const Eigen::MatrixXd te = prior.TestJoint();
  Eigen::RowVectorXd ratio(n_classes * n_domains);
  for (Eigen::Index y = 0; y < n_classes; ++y) {
    for (Eigen::Index d = 0; d < n_domains; ++d) {
      ratio[y * n_domains + d] = te(y, d) / prior.joint(y, d);
    }
  }
  Eigen::MatrixXd out = posteriors.array().rowwise() * ratio.array();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double s = out.row(i).sum();
    if (!(s > 0.0)) {
      throw InvalidArgumentError("posterior row " + std::to_string(i) +
                                 " has no mass");
    }
    out.row(i) /= s;
  }
  return out;
}

std::string RuleName(DecisionRule rule) {
  switch (rule) {
    case DecisionRule::kArgmax:
      return "argmax";
    case DecisionRule::kSumJointTrain:
      return "sum_joint_train";
    case DecisionRule::kMaxJointShifted:
      return "max_joint_shifted";
    case DecisionRule::kSumJointShifted:
      return "sum_joint_shifted";
    case DecisionRule::kKnownDomain:
      return "known_domain";
    case DecisionRule::kMaxConditional:
      return "max_conditional";
    case DecisionRule::kDomainWeightedConditional:
      return "domain_weighted_conditional";
    case DecisionRule::kSumActivations:
      return "sum_activations";
  }
  return "unknown";
}

std::vector<DecisionRule> AllRules() {
  return {DecisionRule::kArgmax,          DecisionRule::kSumJointTrain,
          DecisionRule::kMaxJointShifted, DecisionRule::kSumJointShifted,
          DecisionRule::kKnownDomain,     DecisionRule::kMaxConditional,
          DecisionRule::kDomainWeightedConditional,
          DecisionRule::kSumActivations};
}

DecisionRule ParseRule(std::string_view name) {
  for (DecisionRule r : AllRules()) {
    if (RuleName(r) == name) return r;
  }
  throw InvalidArgumentError("unknown decision rule '" + std::string(name) +
                             "'");
}

std::optional<std::string> IncompatibilityReason(const ScoreTable& table,
                                                 DecisionRule rule,
                                                 bool has_prior) {
  const bool plain = table.layout == ScoreLayout::kPlain;
  const bool per_domain = table.layout == ScoreLayout::kPerDomain;
  switch (rule) {
    case DecisionRule::kArgmax:
      if (!plain) return "argmax needs a plain N-way layout";
      return std::nullopt;
    case DecisionRule::kSumJointTrain:
      if (plain) return "no domain-resolved outputs in a plain layout";
      if (per_domain && !has_prior) {
        return "per-domain heads need a prior to form joint posteriors";
      }
      return std::nullopt;
    case DecisionRule::kMaxJointShifted:
    case DecisionRule::kSumJointShifted:
      if (plain) return "no domain-resolved outputs in a plain layout";
      if (!has_prior) return "shifted rules need a training prior";
      return std::nullopt;
    case DecisionRule::kKnownDomain:
      if (plain) return "no domain-resolved outputs in a plain layout";
      if (!table.HasKnownDomains()) return "known domains are missing";
      return std::nullopt;
    case DecisionRule::kMaxConditional:
      if (plain) return "no domain-resolved outputs in a plain layout";
      return std::nullopt;
    case DecisionRule::kDomainWeightedConditional:
      if (!per_domain) return "needs per-domain heads";
      if (table.domain_probs.size() == 0) return "P(d|x) estimates missing";
      return std::nullopt;
    case DecisionRule::kSumActivations:
      if (plain) return "no per-domain activations in a plain layout";
      return std::nullopt;
  }
  return "unknown rule";
}

std::vector<int> Decide(const ScoreTable& table, DecisionRule rule,
                        const TrainPrior* prior) {
  table.Validate();
  if (auto why = IncompatibilityReason(table, rule, prior != nullptr)) {
    throw IncompatibleRuleError(RuleName(rule) + " on " +
                                LayoutName(table.layout) + ": " + *why);
  }
  if (prior) CheckPrior(table, *prior);
  const int n = table.n_classes;
  const int nd = table.n_domains;
  const auto rows = static_cast<Eigen::Index>(table.size());
  std::vector<int> out(rows);

  switch (rule) {
    case DecisionRule::kArgmax: {
      const Eigen::MatrixXd p = table.Probabilities();
      for (Eigen::Index i = 0; i < rows; ++i) out[i] = ArgmaxRow(p.row(i));
      return out;
    }
    case DecisionRule::kSumJointTrain:
    case DecisionRule::kMaxJointShifted:
    case DecisionRule::kSumJointShifted: {
      Eigen::MatrixXd joint = JointPosteriors(table, prior);
      if (rule != DecisionRule::kSumJointTrain) joint = PriorShift(joint, *prior);
      const bool use_max = rule == DecisionRule::kMaxJointShifted;
      Eigen::VectorXd per_class(n);
      for (Eigen::Index i = 0; i < rows; ++i) {
        for (int y = 0; y < n; ++y) {
          const auto cells = joint.row(i).segment(y * nd, nd);
          per_class[y] = use_max ? cells.maxCoeff() : cells.sum();
        }
        out[i] = ArgmaxRow(per_class);
      }
      return out;
    }
    case DecisionRule::kKnownDomain: {
      const Eigen::MatrixXd cond = Conditionals(table, prior);
      for (Eigen::Index i = 0; i < rows; ++i) {
        const int d = table.d_true[i];
        out[i] = ArgmaxRow(cond.row(i).segment(d * n, n).transpose());
      }
      return out;
    }
    case DecisionRule::kMaxConditional:
    case DecisionRule::kDomainWeightedConditional: {
      const Eigen::MatrixXd cond = Conditionals(table, prior);
      const bool weighted = rule == DecisionRule::kDomainWeightedConditional;
      Eigen::VectorXd per_class(n);
      for (Eigen::Index i = 0; i < rows; ++i) {
        for (int y = 0; y < n; ++y) {
          double acc = weighted ? 0.0 : kNegInf;
          for (int d = 0; d < nd; ++d) {
            const double v = cond(i, d * n + y);
            acc = weighted ? acc + v * table.domain_probs(i, d)
                           : std::max(acc, v);
          }
          per_class[y] = acc;
        }
        out[i] = ArgmaxRow(per_class);
      }
      return out;
    }
    case DecisionRule::kSumActivations: {
      Eigen::VectorXd per_class(n);
      for (Eigen::Index i = 0; i < rows; ++i) {
        for (int y = 0; y < n; ++y) {
          double s = 0.0;
          for (int d = 0; d < nd; ++d) s += table.raw(i, table.Column(y, d));
          per_class[y] = s;
        }
        out[i] = ArgmaxRow(per_class);
      }
      return out;
    }
  }
  return out;
}

void RbaConfig::Validate() const {
  if (!(epsilon >= 0.0)) throw InvalidArgumentError("RBA epsilon must be >= 0");
  if (!(step_size > 0.0)) {
    throw InvalidArgumentError("RBA step_size must be > 0");
  }
  if (max_iters < 1) throw InvalidArgumentError("RBA max_iters must be >= 1");
  if (!(tolerance >= 0.0)) {
    throw InvalidArgumentError("RBA tolerance must be >= 0");
  }
}

RbaResult RbaSolve(const Eigen::MatrixXd& log_scores, int n_classes,
                   int n_domains, std::span<const int> known_domains,
                   const RbaConfig& config) {
  const RbaProblem p =
      MakeProblem(log_scores, n_classes, n_domains, known_domains, config);
  const size_t n = p.n();
  const int k = p.choices();
  if (n == 0) return RbaResult{{}, {}, 0.0, RbaStatus::kFeasible, true, 0, 0};

  std::vector<double> lam_hi(n_classes, 0.0);
  std::vector<double> lam_lo(n_classes, 0.0);
  std::vector<double> best_lam_hi = lam_hi;
  std::vector<double> best_lam_lo = lam_lo;
  double best_dual = std::numeric_limits<double>::infinity();

  std::vector<int> choice(n, 0);
  std::vector<int> best_feasible;
  double best_feasible_obj = kNegInf;
  std::vector<int> least_violating;
  double least_violation = std::numeric_limits<double>::infinity();
  bool certified = false;
  int iterations = 0;

  for (int it = 0; it < config.max_iters; ++it) {
    iterations = it + 1;
    double dual = 0.0;
    for (size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_v = Adjusted(p, lam_hi, lam_lo, i, 0);
      for (int c = 1; c < k; ++c) {
        const double v = Adjusted(p, lam_hi, lam_lo, i, c);
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      choice[i] = best;
      dual += best_v;
    }
    if (dual < best_dual) {
      best_dual = dual;
      best_lam_hi = lam_hi;
      best_lam_lo = lam_lo;
    }
    const Counts counts = CountAssignment(p, choice);
    const double violation = TotalViolation(p, counts);
    if (violation < least_violation) {
      least_violation = violation;
      least_violating = choice;
    }
    double slack = 0.0;
    if (violation == 0.0) {
      const double obj = Objective(p, choice);
      if (obj > best_feasible_obj) {
        best_feasible_obj = obj;
        best_feasible = choice;
      }
      for (int y = 0; y < n_classes; ++y) {
        slack += lam_hi[y] * HiConstraint(p, counts.d0[y], counts.d1[y]) +
                 lam_lo[y] * LoConstraint(p, counts.d0[y], counts.d1[y]);
      }
      // Feasible with complementary slackness: this argmax is optimal.
      if (std::abs(slack) <= 1e-12) {
        certified = true;
        break;
      }
    }
    // Subgradient step on the ratio violation of each class.
    for (int y = 0; y < n_classes; ++y) {
      const int m = std::max(1, counts.d0[y] + counts.d1[y]);
      const double g_hi = HiConstraint(p, counts.d0[y], counts.d1[y]) / m;
      const double g_lo = LoConstraint(p, counts.d0[y], counts.d1[y]) / m;
      lam_hi[y] = std::max(0.0, lam_hi[y] + config.step_size * g_hi);
      lam_lo[y] = std::max(0.0, lam_lo[y] + config.step_size * g_lo);
    }
  }

  if (certified) {
    return MakeResult(p, best_feasible, true, true, iterations);
  }
  if (config.exact_node_budget > 0) {
    BranchAndBound bnb(p, best_lam_hi, best_lam_lo, config.exact_node_budget);
    const bool complete = bnb.Run(
        best_feasible_obj, best_feasible.empty() ? nullptr : &best_feasible);
    if (bnb.found()) {
      return MakeResult(p, bnb.best(), true, complete, iterations);
    }
    if (complete) {
      return MakeResult(p, least_violating, false, true, iterations);
    }
  }
  if (!best_feasible.empty()) {
    return MakeResult(p, best_feasible, true, false, iterations);
  }
  return MakeResult(p, least_violating, false, false, iterations);
}

RbaResult RbaBruteforce(const Eigen::MatrixXd& log_scores, int n_classes,
                        int n_domains, std::span<const int> known_domains,
                        const RbaConfig& config) {
  const RbaProblem p =
      MakeProblem(log_scores, n_classes, n_domains, known_domains, config);
  const size_t n = p.n();
  const int k = p.choices();
  if (n > 16) {
    throw InvalidArgumentError("brute-force RBA is limited to 16 examples");
  }
  double total = 1.0;
  for (size_t i = 0; i < n; ++i) total *= k;
  if (total > static_cast<double>(1u << 26)) {
    throw InvalidArgumentError("brute-force RBA instance too large");
  }
  const double target = 0.5 * (p.hi + p.lo);
  const double eps = 0.5 * (p.hi - p.lo);

  std::vector<int> assign(n, 0);
  std::vector<int> best;
  double best_obj = kNegInf;
  std::vector<int> least;
  double least_excess = std::numeric_limits<double>::infinity();
  std::vector<int> d0(n_classes);
  std::vector<int> d1(n_classes);
  while (true) {
    std::fill(d0.begin(), d0.end(), 0);
    std::fill(d1.begin(), d1.end(), 0);
    double obj = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const int c = assign[i];
      const int y = known_domains.empty() ? c / n_domains : c;
      const int d = known_domains.empty() ? c % n_domains : known_domains[i];
      (d == 0 ? d0 : d1)[y]++;
      obj += log_scores(i, c);
    }
    // Feasibility in count form: |a - t m| <= eps m (+ tolerance).
    double excess = 0.0;
    for (int y = 0; y < n_classes; ++y) {
      const double m = d0[y] + d1[y];
      const double dev = std::abs(d0[y] - target * m) - eps * m;
      excess += std::max(0.0, dev - config.tolerance);
    }
    if (excess == 0.0) {
      if (obj > best_obj) {
        best_obj = obj;
        best = assign;
      }
    } else if (excess < least_excess) {
      least_excess = excess;
      least = assign;
    }
    // Odometer: last position fastest gives lexicographic order.
    bool wrapped = true;
    for (size_t pos = n; pos-- > 0;) {
      if (++assign[pos] < k) {
        wrapped = false;
        break;
      }
      assign[pos] = 0;
    }
    if (wrapped) break;
  }
  if (!best.empty() || n == 0) {
    return MakeResult(p, best, true, true, 0);
  }
  return MakeResult(p, least, false, true, 0);
}

Eigen::MatrixXd RbaLogScores(const ScoreTable& table, bool use_known_domains) {
  table.Validate();
  const Eigen::MatrixXd p = table.Probabilities();
  const int n = table.n_classes;
  const int nd = table.n_domains;
  auto safe_log = [](double v) { return std::log(std::max(v, 1e-300)); };
  if (use_known_domains) {
    Eigen::MatrixXd s(p.rows(), n);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      for (int y = 0; y < n; ++y) {
        double mass = 0.0;
        switch (table.layout) {
          case ScoreLayout::kPlain:
            mass = p(i, y);
            break;
          case ScoreLayout::kJoint:
            mass = p.row(i).segment(y * nd, nd).sum();
            break;
          case ScoreLayout::kPerDomain:
            for (int d = 0; d < nd; ++d) mass += p(i, d * n + y) / nd;
            break;
        }
        s(i, y) = safe_log(mass);
      }
    }
    return s;
  }
  if (table.layout != ScoreLayout::kJoint) {
    throw IncompatibleRuleError(
        "RBA without known domains needs joint (class, domain) scores");
  }
  return p.unaryExpr(safe_log);
}

RbaResult RbaSolve(const ScoreTable& table, const RbaConfig& config,
                   bool use_known_domains) {
  if (use_known_domains && !table.HasKnownDomains()) {
    throw IncompatibleRuleError("RBA: known domains requested but missing");
  }
  const Eigen::MatrixXd s = RbaLogScores(table, use_known_domains);
  return RbaSolve(s, table.n_classes, table.n_domains,
                  use_known_domains ? std::span<const int>(table.d_true)
                                    : std::span<const int>(),
                  config);
}

RbaResult RbaBruteforce(const ScoreTable& table, const RbaConfig& config,
                        bool use_known_domains) {
  if (use_known_domains && !table.HasKnownDomains()) {
    throw IncompatibleRuleError("RBA: known domains requested but missing");
  }
  const Eigen::MatrixXd s = RbaLogScores(table, use_known_domains);
  return RbaBruteforce(s, table.n_classes, table.n_domains,
                       use_known_domains ? std::span<const int>(table.d_true)
                                         : std::span<const int>(),
                       config);
}

}  // namespace skewbench
