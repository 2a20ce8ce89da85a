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

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "skewbench/inference.h"

namespace skewbench {
namespace {

using json = nlohmann::json;

json RowToJson(const Eigen::MatrixXd& m, Eigen::Index r) {
  json out = json::array();
  for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

// Splits a score row into the layout's nested form.
json NestRow(const ScoreTable& t, const Eigen::MatrixXd& m, Eigen::Index r) {
  if (t.layout == ScoreLayout::kPlain) return RowToJson(m, r);
  const int outer = t.layout == ScoreLayout::kJoint ? t.n_classes : t.n_domains;
  const int inner = t.layout == ScoreLayout::kJoint ? t.n_domains : t.n_classes;
  json out = json::array();
  for (int a = 0; a < outer; ++a) {
    json row = json::array();
    for (int b = 0; b < inner; ++b) row.push_back(m(r, a * inner + b));
    out.push_back(row);
  }
  return out;
}

// Shape (outer, inner) of a nested score value; inner is 0 when flat.
std::pair<int, int> NestedShape(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) {
    throw FormatError(where + ": expected a non-empty array");
  }
  if (!v[0].is_array()) return {static_cast<int>(v.size()), 0};
  const auto inner = static_cast<int>(v[0].size());
  for (const json& row : v) {
    if (!row.is_array() || static_cast<int>(row.size()) != inner) {
      throw FormatError(where + ": ragged nested scores");
    }
  }
  return {static_cast<int>(v.size()), inner};
}

void FillNested(const json& v, Eigen::MatrixXd& m, Eigen::Index r,
                const std::string& where) {
  Eigen::Index c = 0;
  auto put = [&](const json& x) {
    if (!x.is_number() || c >= m.cols()) {
      throw FormatError(where + ": expected " + std::to_string(m.cols()) +
                        " numbers");
    }
    m(r, c++) = x.get<double>();
  };
  if (!v.is_array()) throw FormatError(where + ": expected an array");
  for (const json& x : v) {
    if (x.is_array()) {
      for (const json& y : x) put(y);
    } else {
      put(x);
    }
  }
  if (c != m.cols()) {
    throw FormatError(where + ": expected " + std::to_string(m.cols()) +
                      " numbers");
  }
}

json MatrixJson(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(RowToJson(m, r));
  return rows;
}

Eigen::MatrixXd MatrixFrom(const json& rows, const std::string& where) {
  if (!rows.is_array() || rows.empty() || !rows[0].is_array()) {
    throw FormatError(where + ": expected a non-empty array of rows");
  }
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r].is_array() || rows[r].size() != rows[0].size()) {
      throw FormatError(where + ": ragged rows");
    }
    for (size_t c = 0; c < rows[r].size(); ++c) {
      m(r, c) = rows[r][c].get<double>();
    }
  }
  return m;
}

}  // namespace

void WriteScores(const std::filesystem::path& file, const ScoreTable& table) {
  table.Validate();
  std::ofstream out(file);
  if (!out) throw IngestionError("cannot open " + file.string() + " for writing");
  const std::string layout = LayoutName(table.layout);
  const bool has_probs = table.probs.rows() > 0;
  const bool has_dp = table.domain_probs.rows() > 0;
  for (size_t i = 0; i < table.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    json row = {{"id", table.ids[i]},
                {"y_true", table.y_true[i]},
                {"d_true", table.d_true[i]},
                {"layout", layout},
                {"scores", NestRow(table, table.raw, r)}};
    if (has_probs) row["probs"] = NestRow(table, table.probs, r);
    if (has_dp) row["domain_probs"] = RowToJson(table.domain_probs, r);
    out << row.dump() << "\n";
  }
  if (!out) throw IngestionError("write failed for " + file.string());
}

ScoreTable ReadScores(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IngestionError("cannot open score file " + file.string());
  std::vector<json> rows;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(file.string() + " line " + std::to_string(line_no) +
                        ": " + e.what());
    }
  }
  if (rows.empty()) throw IngestionError("empty score file " + file.string());

  ScoreTable table;
  const std::string where0 = file.string() + " line 1";
  try {
    table.layout = ParseLayout(rows[0].at("layout").get<std::string>());
    const auto [outer, inner] = NestedShape(rows[0].at("scores"), where0);
    switch (table.layout) {
      case ScoreLayout::kPlain:
        if (inner != 0) throw FormatError(where0 + ": plain_N scores are flat");
        table.n_classes = outer;
        // Plain scores do not say how many domains exist; take it from the
        // domain posteriors or the largest domain label.
        table.n_domains = 1;
        if (rows[0].contains("domain_probs")) {
          table.n_domains = static_cast<int>(rows[0]["domain_probs"].size());
        }
        for (const json& row : rows) {
          table.n_domains =
              std::max(table.n_domains, row.value("d_true", -1) + 1);
        }
        break;
      case ScoreLayout::kJoint:
        if (inner == 0) throw FormatError(where0 + ": joint_ND needs N x D");
        table.n_classes = outer;
        table.n_domains = inner;
        break;
      case ScoreLayout::kPerDomain:
        if (inner == 0) {
          throw FormatError(where0 + ": per_domain_DxN needs D x N");
        }
        table.n_domains = outer;
        table.n_classes = inner;
        break;
    }
  } catch (const json::exception& e) {
    throw FormatError(where0 + ": " + e.what());
  } catch (const InvalidArgumentError& e) {
    throw FormatError(where0 + ": " + e.what());
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  const int width = table.Width();
  table.raw.resize(n, width);
  const bool has_probs = rows[0].contains("probs");
  const bool has_dp = rows[0].contains("domain_probs");
  if (has_probs) table.probs.resize(n, width);
  if (has_dp) table.domain_probs.resize(n, table.n_domains);
  for (Eigen::Index r = 0; r < n; ++r) {
    const json& row = rows[r];
    const std::string where = file.string() + " record " + std::to_string(r + 1);
    try {
      if (row.at("layout").get<std::string>() != LayoutName(table.layout)) {
        throw FormatError(where + ": layout differs from the first record");
      }
      table.ids.push_back(row.at("id").get<uint32_t>());
      table.y_true.push_back(row.at("y_true").get<int>());
      table.d_true.push_back(row.at("d_true").get<int>());
      FillNested(row.at("scores"), table.raw, r, where + " scores");
      if (has_probs) FillNested(row.at("probs"), table.probs, r, where + " probs");
      if (has_dp) {
        FillNested(row.at("domain_probs"), table.domain_probs, r,
                   where + " domain_probs");
      }
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  table.Validate();
  return table;
}

void WritePrior(const std::filesystem::path& file, const TrainPrior& prior) {
  prior.Validate();
  json j = {{"joint", MatrixJson(prior.joint)}};
  if (prior.test.size() > 0) j["test"] = MatrixJson(prior.test);
  std::ofstream out(file);
  out << j.dump(2) << "\n";
  if (!out) throw IngestionError("cannot write prior " + file.string());
}

TrainPrior ReadPrior(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IngestionError("cannot open prior file " + file.string());
  TrainPrior prior;
  try {
    const json j = json::parse(in);
    prior.joint = MatrixFrom(j.at("joint"), file.string() + " joint");
    if (j.contains("test")) {
      prior.test = MatrixFrom(j["test"], file.string() + " test");
    }
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  prior.Validate();
  return prior;
}

}  // namespace skewbench
