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

#include "skewbench/experiment.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <utility>

#include <fmt/core.h>

#include "json.hpp"

namespace skewbench {
namespace {

using json = nlohmann::json;

constexpr char kPrecision[] = "float64";

// Walks one JSON object, remembering which keys were read so leftovers can
// be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(Where("") + ": expected an object");
  }

  bool Has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& At(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string Where(const std::string& key) const {
    if (path_.empty()) return key;
    if (key.empty()) return path_;
    return path_ + "." + key;
  }

  template <typename T>
  void Read(const std::string& key, T& out) {
    if (!Has(key)) return;
    try {
      out = At(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(Where(key) + ": wrong type");
    }
  }

  void Finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError(Where(it.key()) + ": unknown key");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Eigen::MatrixXd ParseMatrix(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty()) {
    throw ConfigError(where + ": expected a non-empty array of rows");
  }
  Eigen::MatrixXd m(j.size(), j[0].size());
  for (size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != j[0].size()) {
      throw ConfigError(where + ": ragged rows");
    }
    for (size_t c = 0; c < j[r].size(); ++c) {
      if (!j[r][c].is_number()) throw ConfigError(where + ": not a number");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

json MatrixJson(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

// `default_dim` sizes pair_averaging when the block omits feature_dim.
DomainTransform ParseTransform(const json& j, const std::string& path,
                               int default_dim) {
  ObjectReader r(j, path);
  std::string kind;
  r.Read("kind", kind);
  DomainTransform t = DomainTransform::Identity();
  if (kind == "identity") {
    t = DomainTransform::Identity();
  } else if (kind == "grayscale_luma") {
    t = DomainTransform::GrayscaleLuma();
  } else if (kind == "center_crop") {
    int size = 28;
    bool repad = true;
    r.Read("crop_size", size);
    r.Read("repad", repad);
    t = DomainTransform::CenterCrop(size, repad);
  } else if (kind == "downsample") {
    int factor = 2;
    bool back = true;
    r.Read("factor", factor);
    r.Read("upsample_back", back);
    t = DomainTransform::Downsample(factor, back);
  } else if (kind == "linear_map") {
    if (!r.Has("matrix")) throw ConfigError(r.Where("matrix") + ": required");
    t = DomainTransform::LinearMap(
        ParseMatrix(r.At("matrix"), r.Where("matrix")));
  } else if (kind == "pair_averaging") {
    int dim = default_dim;
    r.Read("feature_dim", dim);
    if (dim < 2) throw ConfigError(r.Where("feature_dim") + ": must be >= 2");
    t = DomainTransform::PairAveraging(dim);
  } else {
    throw ConfigError(r.Where("kind") + ": unknown transform '" + kind + "'");
  }
  r.Finish();
  return t;
}

json TransformJson(const DomainTransform& t) {
  json j = {{"kind", t.Name()}};
  switch (t.kind()) {
    case DomainTransform::Kind::kCenterCrop:
      j = {{"kind", "center_crop"},
           {"crop_size", t.crop_size()},
           {"repad", t.repad()}};
      break;
    case DomainTransform::Kind::kDownsample:
      j = {{"kind", "downsample"},
           {"factor", t.factor()},
           {"upsample_back", t.upsample_back()}};
      break;
    case DomainTransform::Kind::kLinearMap:
      j = {{"kind", "linear_map"}, {"matrix", MatrixJson(t.matrix())}};
      break;
    case DomainTransform::Kind::kIdentity:
      j = {{"kind", "identity"}};
      break;
    case DomainTransform::Kind::kGrayscaleLuma:
      j = {{"kind", "grayscale_luma"}};
      break;
  }
  return j;
}

SyntheticConfig ParseSynthetic(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  SyntheticConfig c;
  r.Read("n_classes", c.n_classes);
  r.Read("feature_dim", c.feature_dim);
  r.Read("mean_scale", c.mean_scale);
  r.Read("discarded_fraction", c.discarded_fraction);
  r.Read("sigma", c.sigma);
  r.Read("train_per_class", c.train_per_class);
  r.Read("val_per_class", c.val_per_class);
  r.Read("test_per_class", c.test_per_class);
  r.Read("geometry_seed", c.geometry_seed);
  if (r.Has("class_means") && !r.At("class_means").is_null()) {
    c.class_means = ParseMatrix(r.At("class_means"), r.Where("class_means"));
  }
  if (r.Has("transform") && !r.At("transform").is_null()) {
    c.domain_transform = ParseTransform(r.At("transform"), r.Where("transform"),
                                        c.feature_dim);
  }
  r.Finish();
  try {
    c.Validate();
  } catch (const InvalidArgumentError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

json SyntheticJson(const SyntheticConfig& c) {
  return {{"n_classes", c.n_classes},
          {"feature_dim", c.feature_dim},
          {"mean_scale", c.mean_scale},
          {"discarded_fraction", c.discarded_fraction},
          {"sigma", c.sigma},
          {"train_per_class", c.train_per_class},
          {"val_per_class", c.val_per_class},
          {"test_per_class", c.test_per_class},
          {"geometry_seed", c.geometry_seed},
          {"class_means",
           c.class_means.size() ? MatrixJson(c.class_means) : json(nullptr)},
          {"transform", c.domain_transform ? TransformJson(*c.domain_transform)
                                           : json(nullptr)}};
}

Strategy ParseStrategy(const json& j, const std::string& path) {
  Strategy s;
  if (j.is_string()) {
    try {
      s.type = Strategy::ParseType(j.get<std::string>());
    } catch (const InvalidArgumentError& e) {
      throw ConfigError(path + ": " + e.what());
    }
    if (s.type == StrategyType::kAdvReversalProjection) {
      s.attach = AdvAttach::kFinal;
    }
    return s;
  }
  ObjectReader r(j, path);
  std::string name;
  r.Read("name", name);
  try {
    s.type = Strategy::ParseType(name);
  } catch (const InvalidArgumentError& e) {
    throw ConfigError(r.Where("name") + ": " + e.what());
  }
  r.Read("beta", s.beta);
  r.Read("adv_weight", s.adv_weight);
  if (s.type == StrategyType::kAdvReversalProjection) s.attach = AdvAttach::kFinal;
  if (r.Has("attach")) {
    const std::string a = r.At("attach").get<std::string>();
    if (a == "penultimate") {
      s.attach = AdvAttach::kPenultimate;
    } else if (a == "final") {
      s.attach = AdvAttach::kFinal;
    } else {
      throw ConfigError(r.Where("attach") + ": expected penultimate or final");
    }
  }
  r.Finish();
  try {
    s.Validate();
  } catch (const InvalidArgumentError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return s;
}

json StrategyJson(const Strategy& s) {
  return {{"name", s.Name()},
          {"beta", s.beta},
          {"adv_weight", s.adv_weight},
          {"attach", s.attach == AdvAttach::kFinal ? "final" : "penultimate"}};
}

OptimConfig ParseOptim(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  OptimConfig o;
  r.Read("lr", o.lr);
  r.Read("momentum", o.momentum);
  r.Read("weight_decay", o.weight_decay);
  r.Read("lr_drop", o.lr_drop);
  r.Read("drop_period", o.drop_period);
  r.Read("epochs", o.epochs);
  r.Read("batch_size", o.batch_size);
  r.Finish();
  try {
    o.Validate();
  } catch (const InvalidArgumentError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return o;
}

json OptimJson(const OptimConfig& o) {
  return {{"lr", o.lr},
          {"momentum", o.momentum},
          {"weight_decay", o.weight_decay},
          {"lr_drop", o.lr_drop},
          {"drop_period", o.drop_period},
          {"epochs", o.epochs},
          {"batch_size", o.batch_size}};
}

std::string AugmentationName(Augmentation a) {
  switch (a) {
    case Augmentation::kAuto:
      return "auto";
    case Augmentation::kNone:
      return "none";
    case Augmentation::kCropFlip:
      return "crop_flip";
  }
  return "auto";
}

json CellJson(const CellKey& key) {
  return {{"rho", key.rho}, {"seed", key.seed}, {"strategy", key.strategy}};
}

json RowJson(const ResultRow& row) {
  json j = {{"rule", row.rule}, {"compatible", row.compatible}};
  if (!row.compatible) j["reason"] = row.reason;
  j["metrics"] = row.metrics;
  return j;
}

std::string ReadFile(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int ThreadCount(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SKEWBENCH_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

}  // namespace

std::vector<double> DatasetConfig::AllRhos() const {
  std::vector<double> out = {rho};
  std::vector<double> rest;
  for (double r : rho_sweep) {
    if (r != rho && std::find(rest.begin(), rest.end(), r) == rest.end()) {
      rest.push_back(r);
    }
  }
  std::sort(rest.begin(), rest.end());
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

void ExperimentConfig::Validate() const {
  if (strategies.empty()) throw ConfigError("strategies: must not be empty");
  if (rules.empty()) throw ConfigError("rules: must not be empty");
  if (seeds.empty()) throw ConfigError("seeds: must not be empty");
  std::set<std::string> labels;
  for (const Strategy& s : strategies) {
    if (!labels.insert(s.Label()).second) {
      throw ConfigError("strategies: duplicate entry " + s.Label());
    }
  }
  if (std::set<uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds: duplicate seed");
  }
  for (double r : dataset.AllRhos()) {
    if (!(r >= 0.0 && r <= 1.0)) {
      throw ConfigError("dataset.rho: skew levels must lie in [0, 1]");
    }
  }
  if (dataset.kind == DatasetKind::kCifar10S && dataset.cifar_dir.empty()) {
    throw ConfigError("dataset.cifar_dir: required for cifar10s");
  }
  if (train.trunk.empty()) throw ConfigError("model.trunk: must not be empty");
}

ExperimentConfig ParseConfig(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  ObjectReader r(root, "");

  if (r.Has("dataset")) {
    ObjectReader d(r.At("dataset"), "dataset");
    std::string kind = "synthetic";
    d.Read("kind", kind);
    if (kind == "synthetic") {
      c.dataset.kind = DatasetKind::kSynthetic;
    } else if (kind == "cifar10s") {
      c.dataset.kind = DatasetKind::kCifar10S;
    } else {
      throw ConfigError("dataset.kind: expected synthetic or cifar10s");
    }
    if (d.Has("synthetic")) {
      c.dataset.synthetic = ParseSynthetic(d.At("synthetic"),
                                           "dataset.synthetic");
    }
    std::string dir;
    d.Read("cifar_dir", dir);
    c.dataset.cifar_dir = dir;
    if (d.Has("cifar_transform")) {
      c.dataset.cifar_transform =
          ParseTransform(d.At("cifar_transform"), "dataset.cifar_transform",
                         kImageDim);
    }
    d.Read("rho", c.dataset.rho);
    d.Read("rho_sweep", c.dataset.rho_sweep);
    d.Finish();
  }

  if (r.Has("strategies")) {
    const json& s = r.At("strategies");
    if (!s.is_array()) throw ConfigError("strategies: expected an array");
    c.strategies.clear();
    for (size_t i = 0; i < s.size(); ++i) {
      c.strategies.push_back(
          ParseStrategy(s[i], "strategies[" + std::to_string(i) + "]"));
    }
  }

  if (r.Has("rules")) {
    const json& s = r.At("rules");
    if (s.is_string() && s.get<std::string>() == "all") {
      c.rules = AllRules();
    } else if (s.is_array()) {
      c.rules.clear();
      for (size_t i = 0; i < s.size(); ++i) {
        const std::string where = "rules[" + std::to_string(i) + "]";
        if (!s[i].is_string()) throw ConfigError(where + ": expected a name");
        try {
          c.rules.push_back(ParseRule(s[i].get<std::string>()));
        } catch (const InvalidArgumentError& e) {
          throw ConfigError(where + ": " + e.what());
        }
      }
    } else {
      throw ConfigError("rules: expected an array of names or \"all\"");
    }
  }

  if (r.Has("optim")) c.train.optim = ParseOptim(r.At("optim"), "optim");

  if (c.dataset.kind == DatasetKind::kCifar10S) {
    c.train.trunk = {{256, Activation::kRelu}, {128, Activation::kRelu}};
  }
  if (r.Has("model")) {
    ObjectReader m(r.At("model"), "model");
    if (m.Has("trunk")) {
      const json& t = m.At("trunk");
      if (!t.is_array()) throw ConfigError("model.trunk: expected an array");
      c.train.trunk.clear();
      for (size_t i = 0; i < t.size(); ++i) {
        ObjectReader l(t[i], "model.trunk[" + std::to_string(i) + "]");
        LayerSpec spec;
        l.Read("width", spec.width);
        std::string act = "relu";
        l.Read("activation", act);
        if (act == "relu") {
          spec.activation = Activation::kRelu;
        } else if (act == "identity") {
          spec.activation = Activation::kIdentity;
        } else {
          throw ConfigError(l.Where("activation") +
                            ": expected relu or identity");
        }
        if (spec.width < 1) throw ConfigError(l.Where("width") + ": must be >= 1");
        l.Finish();
        c.train.trunk.push_back(spec);
      }
    }
    m.Finish();
  }

  if (r.Has("augmentation")) {
    const std::string a = r.At("augmentation").is_string()
                              ? r.At("augmentation").get<std::string>()
                              : "";
    if (a == "auto") {
      c.train.augmentation = Augmentation::kAuto;
    } else if (a == "none") {
      c.train.augmentation = Augmentation::kNone;
    } else if (a == "crop_flip") {
      c.train.augmentation = Augmentation::kCropFlip;
    } else {
      throw ConfigError("augmentation: expected auto, none or crop_flip");
    }
  }

  r.Read("seeds", c.seeds);
  r.Read("probe", c.probe);
  r.Read("domain_posterior", c.domain_posterior);
  std::string out;
  r.Read("output_dir", out);
  c.output_dir = out;
  r.Finish();
  c.Validate();
  return c;
}

ExperimentConfig LoadConfig(const std::filesystem::path& file) {
  return ParseConfig(ReadFile(file));
}

std::string ConfigToJson(const ExperimentConfig& c) {
  json strategies = json::array();
  for (const Strategy& s : c.strategies) strategies.push_back(StrategyJson(s));
  json rules = json::array();
  for (DecisionRule r : c.rules) rules.push_back(RuleName(r));
  json trunk = json::array();
  for (const LayerSpec& l : c.train.trunk) {
    trunk.push_back(
        {{"width", l.width},
         {"activation",
          l.activation == Activation::kRelu ? "relu" : "identity"}});
  }
  json j = {
      {"dataset",
       {{"kind", c.dataset.kind == DatasetKind::kSynthetic ? "synthetic"
                                                           : "cifar10s"},
        {"synthetic", SyntheticJson(c.dataset.synthetic)},
        {"cifar_dir", c.dataset.cifar_dir.string()},
        {"cifar_transform", TransformJson(c.dataset.cifar_transform)},
        {"rho", c.dataset.rho},
        {"rho_sweep", c.dataset.rho_sweep}}},
      {"strategies", strategies},
      {"rules", rules},
      {"optim", OptimJson(c.train.optim)},
      {"model", {{"trunk", trunk}}},
      {"augmentation", AugmentationName(c.train.augmentation)},
      {"seeds", c.seeds},
      {"probe", c.probe},
      {"domain_posterior", c.domain_posterior},
      {"output_dir", c.output_dir.string()}};
  return j.dump();
}

std::string ConfigHash(const ExperimentConfig& config) {
  json j = json::parse(ConfigToJson(config));
  // Where results go does not change what they are.
  j.erase("output_dir");
  const std::string text = j.dump();
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

SyntheticSplits BuildExperimentData(const DatasetConfig& config, double rho,
                                    uint64_t seed) {
  const uint64_t data_seed = DeriveSeed(seed, "data");
  if (config.kind == DatasetKind::kSynthetic) {
    const SkewSpec spec =
        SkewSpec::Alternating(config.synthetic.n_classes, rho);
    return BuildSynthetic(config.synthetic, spec, data_seed);
  }
  Cifar10S c = BuildCifar10S(config.cifar_dir, SkewSpec::Alternating(10, rho),
                             data_seed, config.cifar_transform);
  Dataset val(c.train.n_classes(), c.train.n_domains(), c.train.feature_dim(),
              Split::Val());
  return {std::move(c.train), std::move(val), std::move(c.test_color),
          std::move(c.test_gray)};
}

RuleMetrics EvaluatePredictions(std::span<const int> predicted,
                                const ScoreTable& table) {
  RuleMetrics m;
  m.mean_accuracy = MeanClassDomainAccuracy(predicted, table.y_true,
                                            table.d_true, table.n_classes,
                                            table.n_domains);
  m.bias = ComputeBiasAmplification(predicted, table.d_true, table.n_classes)
               .value;
  m.accuracy_d0 = DomainAccuracy(predicted, table.y_true, table.d_true, 0);
  m.accuracy_d1 = DomainAccuracy(predicted, table.y_true, table.d_true, 1);
  return m;
}

std::string CellKey::ToString() const {
  return fmt::format("rho={}|seed={}|strategy={}", rho, seed, strategy);
}

std::vector<ResultRow> RunCell(const ExperimentConfig& config,
                               const Strategy& strategy, double rho,
                               uint64_t seed) {
  SyntheticSplits data = BuildExperimentData(config.dataset, rho, seed);
  const Dataset* parts[] = {&data.test_d0, &data.test_d1};
  const Dataset test = Concatenate(parts, Split::Test(-1));

  TrainedModel model =
      Train(data.train, strategy, config.train, DeriveSeed(seed, "train"));
  if (config.domain_posterior) {
    FitDomainPosterior(model, data.val.empty() ? data.train : data.val);
  }
  const ScoreTable table = Score(model, test);

  std::optional<double> probe;
  if (config.probe) {
    ProbeOptions po;
    po.seed = DeriveSeed(seed, "probe");
    probe = DomainProbe(model.Penultimate(test), test.domains(), po);
  }

  std::vector<ResultRow> rows;
  for (DecisionRule rule : config.rules) {
    ResultRow row;
    row.rho = rho;
    row.seed = seed;
    row.strategy = strategy.Label();
    row.rule = RuleName(rule);
    if (auto reason = IncompatibilityReason(table, rule, true)) {
      row.compatible = false;
      row.reason = *reason;
      rows.push_back(std::move(row));
      continue;
    }
    const std::vector<int> pred = Decide(table, rule, &model.train_prior);
    const RuleMetrics m = EvaluatePredictions(pred, table);
    row.metrics = {{"mean_accuracy", m.mean_accuracy},
                   {"bias", m.bias},
                   {"accuracy_d0", m.accuracy_d0},
                   {"accuracy_d1", m.accuracy_d1}};
    if (probe) row.metrics["probe"] = *probe;
    rows.push_back(std::move(row));
  }
  return rows;
}

StoredRun ReadStore(const std::filesystem::path& store_file) {
  std::ifstream in(store_file, std::ios::binary);
  if (!in) throw IngestionError("cannot open result store " + store_file.string());
  StoredRun run;
  std::string line;
  bool have_header = false;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const bool complete = !in.eof();
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      if (!complete) break;  // interrupted mid-write
      throw FormatError(store_file.string() + " line " +
                        std::to_string(line_no) + ": not JSON");
    }
    if (!complete) break;
    try {
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "header") {
        run.config_hash = j.at("config_hash").get<std::string>();
        run.version = j.at("version").get<std::string>();
        run.precision = j.at("precision").get<std::string>();
        run.config = ParseConfig(j.at("config").dump());
        have_header = true;
      } else if (kind == "cell") {
        const json& c = j.at("cell");
        CellKey key{c.at("rho").get<double>(), c.at("seed").get<uint64_t>(),
                    c.at("strategy").get<std::string>()};
        run.cells.push_back(key);
        for (const json& r : j.at("rows")) {
          ResultRow row;
          row.rho = key.rho;
          row.seed = key.seed;
          row.strategy = key.strategy;
          row.rule = r.at("rule").get<std::string>();
          row.compatible = r.at("compatible").get<bool>();
          row.reason = r.value("reason", "");
          row.metrics = r.at("metrics").get<std::map<std::string, double>>();
          run.rows.push_back(std::move(row));
        }
      } else {
        throw FormatError("unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw FormatError(store_file.string() + " line " +
                        std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) {
    throw FormatError(store_file.string() + ": missing header record");
  }
  return run;
}

RunSummary RunMatrix(const ExperimentConfig& config,
                     const std::filesystem::path& out_dir,
                     const RunOptions& options) {
  config.Validate();
  std::filesystem::create_directories(out_dir);
  RunSummary summary;
  summary.store = out_dir / kStoreFile;
  const std::string hash = ConfigHash(config);

  std::vector<CellKey> cells;
  for (double rho : config.dataset.AllRhos()) {
    for (uint64_t seed : config.seeds) {
      for (const Strategy& s : config.strategies) {
        cells.push_back({rho, seed, s.Label()});
      }
    }
  }
  summary.total_cells = cells.size();

  std::set<CellKey> done;
  const bool exists = std::filesystem::exists(summary.store);
  if (options.resume && exists) {
    StoredRun stored = ReadStore(summary.store);
    if (stored.config_hash != hash) {
      throw ConfigError("config hash " + hash +
                        " does not match the store's " + stored.config_hash +
                        "; refusing to mix results in " +
                        summary.store.string());
    }
    done.insert(stored.cells.begin(), stored.cells.end());
    // Drop a trailing partial record so new appends start on a fresh line.
    const std::string text = ReadFile(summary.store);
    const size_t keep = text.rfind('\n');
    if (keep != std::string::npos && keep + 1 != text.size()) {
      std::filesystem::resize_file(summary.store, keep + 1);
    }
  } else {
    std::ofstream out(summary.store, std::ios::binary | std::ios::trunc);
    json header = {{"kind", "header"},
                   {"config_hash", hash},
                   {"version", std::string(kVersion)},
                   {"precision", kPrecision},
                   {"config", json::parse(ConfigToJson(config))}};
    out << header.dump() << "\n";
    if (!out) throw IngestionError("cannot write " + summary.store.string());
  }

  std::vector<const CellKey*> pending;
  for (const CellKey& k : cells) {
    if (done.count(k)) {
      ++summary.skipped_cells;
    } else {
      pending.push_back(&k);
    }
  }
  const size_t budget = options.max_cells == 0
                            ? pending.size()
                            : std::min(pending.size(), options.max_cells);

  std::map<std::string, const Strategy*> by_label;
  for (const Strategy& s : config.strategies) by_label[s.Label()] = &s;

  std::ofstream store(summary.store, std::ios::binary | std::ios::app);
  if (!store) throw IngestionError("cannot append to " + summary.store.string());
  std::mutex writer;
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= budget) return;
      {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (failure) return;
      }
      const CellKey& key = *pending[i];
      try {
        const std::vector<ResultRow> rows =
            RunCell(config, *by_label.at(key.strategy), key.rho, key.seed);
        json record = {{"kind", "cell"}, {"cell", CellJson(key)}};
        json jrows = json::array();
        for (const ResultRow& r : rows) jrows.push_back(RowJson(r));
        record["rows"] = jrows;
        const std::string line = record.dump() + "\n";
        std::lock_guard<std::mutex> lock(writer);
        store.write(line.data(), static_cast<std::streamsize>(line.size()));
        store.flush();
        if (!store) throw IngestionError("write failed: " + summary.store.string());
        ++summary.completed_cells;
        if (options.log) {
          *options.log << "[" << summary.completed_cells << "/" << budget
                       << "] " << key.ToString() << "\n";
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const int n_threads =
      std::max(1, std::min<int>(ThreadCount(options.threads),
                                static_cast<int>(std::max<size_t>(budget, 1))));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return summary;
}

DecisionRule CanonicalRule(const Strategy& strategy) {
  switch (strategy.type) {
    case StrategyType::kDomainIndependent:
      return DecisionRule::kSumActivations;
    case StrategyType::kDomainDiscriminative:
      return DecisionRule::kSumJointShifted;
    default:
      return DecisionRule::kArgmax;
  }
}

Report BuildReport(const StoredRun& run) {
  const ExperimentConfig& config = run.config;
  const double headline = config.dataset.rho;
  static const char* kMetrics[] = {"mean_accuracy", "bias", "accuracy_d0",
                                   "accuracy_d1", "probe"};

  // (strategy, rule, rho, metric) -> values in seed order.
  std::map<std::tuple<std::string, std::string, double, std::string>,
           std::map<uint64_t, double>>
      values;
  std::set<std::pair<std::string, std::string>> incompatible;
  for (const ResultRow& row : run.rows) {
    if (!row.compatible) {
      incompatible.insert({row.strategy, row.rule});
      continue;
    }
    for (const auto& [name, v] : row.metrics) {
      values[{row.strategy, row.rule, row.rho, name}][row.seed] = v;
    }
  }
  auto summarize = [&](const std::string& s, const std::string& r, double rho,
                       const std::string& metric) -> std::optional<Summary> {
    auto it = values.find({s, r, rho, metric});
    if (it == values.end()) return std::nullopt;
    std::vector<double> v;
    for (const auto& [seed, x] : it->second) v.push_back(x);
    return Summarize(v);
  };

  Report report;
  for (const Strategy& strategy : config.strategies) {
    const std::string s = strategy.Label();
    for (DecisionRule rule : config.rules) {
      const std::string r = RuleName(rule);
      if (incompatible.count({s, r})) {
        report.incompatible.emplace_back(s, r);
        continue;
      }
      for (const char* metric : kMetrics) {
        if (auto sum = summarize(s, r, headline, metric)) {
          report.rows.push_back({s, r, metric, *sum});
        }
      }
    }
  }

  const std::vector<double> rhos = config.dataset.AllRhos();
  if (rhos.size() > 1) {
    std::vector<double> sorted = rhos;
    std::sort(sorted.begin(), sorted.end());
    for (const Strategy& strategy : config.strategies) {
      const std::string s = strategy.Label();
      std::string rule = RuleName(CanonicalRule(strategy));
      if (std::find(config.rules.begin(), config.rules.end(),
                    CanonicalRule(strategy)) == config.rules.end() ||
          incompatible.count({s, rule})) {
        rule.clear();
        for (DecisionRule r : config.rules) {
          if (!incompatible.count({s, RuleName(r)})) {
            rule = RuleName(r);
            break;
          }
        }
      }
      if (rule.empty()) continue;
      for (double rho : sorted) {
        auto acc = summarize(s, rule, rho, "mean_accuracy");
        auto bias = summarize(s, rule, rho, "bias");
        if (!acc || !bias) continue;
        report.sweep.push_back({s, rule, rho, *acc, *bias});
      }
    }
  }
  return report;
}

std::string FormatReportTable(const Report& report) {
  struct Line {
    std::string strategy, rule, bias, color, gray, mean;
  };
  std::vector<Line> lines;
  std::map<std::pair<std::string, std::string>, std::map<std::string, Summary>>
      grouped;
  std::vector<std::pair<std::string, std::string>> order;
  for (const ReportRow& r : report.rows) {
    auto key = std::make_pair(r.strategy, r.rule);
    if (!grouped.count(key)) order.push_back(key);
    grouped[key][r.metric] = r.summary;
  }
  auto pct = [](const Summary& s) {
    return fmt::format("{:.1f} ± {:.1f}", 100.0 * s.mean, 100.0 * s.two_sigma);
  };
  lines.push_back({"Strategy", "Rule", "Bias (↓)", "Color", "Gray",
                   "Mean"});
  for (const auto& key : order) {
    auto& m = grouped[key];
    lines.push_back({key.first, key.second,
                     fmt::format("{:.3f} ± {:.3f}", m["bias"].mean,
                                 m["bias"].two_sigma),
                     pct(m["accuracy_d0"]), pct(m["accuracy_d1"]),
                     pct(m["mean_accuracy"])});
  }
  // Display width: "±" is one column but two bytes.
  auto width = [](const std::string& s) {
    size_t w = 0;
    for (unsigned char c : s) w += (c & 0xC0) != 0x80;
    return w;
  };
  size_t w[6] = {0, 0, 0, 0, 0, 0};
  for (const Line& l : lines) {
    const std::string* f[] = {&l.strategy, &l.rule, &l.bias,
                              &l.color,    &l.gray, &l.mean};
    for (int i = 0; i < 6; ++i) w[i] = std::max(w[i], width(*f[i]));
  }
  std::ostringstream out;
  for (const Line& l : lines) {
    const std::string* f[] = {&l.strategy, &l.rule, &l.bias,
                              &l.color,    &l.gray, &l.mean};
    for (int i = 0; i < 6; ++i) {
      out << *f[i];
      if (i < 5) out << std::string(w[i] - width(*f[i]) + 2, ' ');
    }
    out << "\n";
  }
  if (!report.incompatible.empty()) {
    out << "\nIncompatible (skipped):\n";
    for (const auto& [s, r] : report.incompatible) {
      out << "  " << s << " x " << r << "\n";
    }
  }
  if (!report.sweep.empty()) {
    out << "\nSkew sweep (mean accuracy):\n";
    for (const SweepRow& r : report.sweep) {
      out << fmt::format("  {:<32} {:<20} rho={:<5} {:.1f} ± {:.1f}\n",
                         r.strategy, r.rule, r.rho, 100.0 * r.accuracy.mean,
                         100.0 * r.accuracy.two_sigma);
    }
  }
  return out.str();
}

void WriteReport(const Report& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream csv(out_dir / "report.csv", std::ios::binary);
    csv << "strategy,rule,metric,mean,two_sigma,n_seeds\n";
    for (const ReportRow& r : report.rows) {
      csv << fmt::format("\"{}\",{},{},{:.6f},{:.6f},{}\n", r.strategy, r.rule,
                         r.metric, r.summary.mean, r.summary.two_sigma,
                         r.summary.n);
    }
    if (!csv) throw IngestionError("cannot write report.csv");
  }
  {
    std::ofstream txt(out_dir / "report.txt", std::ios::binary);
    txt << FormatReportTable(report);
  }
  if (!report.sweep.empty()) {
    std::ofstream csv(out_dir / "skew_sweep.csv", std::ios::binary);
    csv << "strategy,rule,rho,mean_accuracy,two_sigma,bias,n_seeds\n";
    for (const SweepRow& r : report.sweep) {
      csv << fmt::format("\"{}\",{},{},{:.6f},{:.6f},{:.6f},{}\n", r.strategy,
                         r.rule, r.rho, r.accuracy.mean, r.accuracy.two_sigma,
                         r.bias.mean, r.accuracy.n);
    }
  }
}

}  // namespace skewbench
