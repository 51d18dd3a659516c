// Copyright 2026 The norm-forge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "normforge/error.hpp"
#include "normforge/numeric.hpp"

namespace normforge::stats {

struct FactorInfo {
  std::vector<std::string> levels;  // sorted; levels[0] is the reference
  std::string reference() const { return levels.front(); }
};

/// Named design matrix. Factors use treatment coding: one indicator column
/// "name[level]" per non-reference level. Interactions of a numeric column
/// with a factor are named "numeric:name[level]".
struct Design {
  Eigen::MatrixXd matrix;
  std::vector<std::string> names;
  std::map<std::string, FactorInfo> factors;
  bool has_intercept = false;

  std::optional<std::size_t> index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    return std::nullopt;
  }
};

inline std::string factor_column(const std::string& factor, const std::string& level) {
  return factor + "[" + level + "]";
}
inline std::string interaction_column(const std::string& numeric, const std::string& factor, const std::string& level) {
  return numeric + ":" + factor_column(factor, level);
}

class DesignBuilder {
 public:
  explicit DesignBuilder(std::size_t rows) : rows_(rows) {}

  DesignBuilder& intercept() {
    columns_.emplace_back("(Intercept)", std::vector<double>(rows_, 1.0));
    has_intercept_ = true;
    return *this;
  }

  DesignBuilder& numeric(const std::string& name, std::span<const double> values) {
    if (values.size() != rows_) fail(ErrorKind::InvalidArgument, "column '" + name + "' has wrong length");
    numerics_[name] = std::vector<double>(values.begin(), values.end());
    columns_.emplace_back(name, numerics_[name]);
    return *this;
  }

  /// Adds a factor; `reference` defaults to the alphabetically first level.
  DesignBuilder& factor(const std::string& name, std::span<const std::string> values,
                        std::optional<std::string> reference = std::nullopt) {
    if (values.size() != rows_) fail(ErrorKind::InvalidArgument, "factor '" + name + "' has wrong length");
    std::set<std::string> unique(values.begin(), values.end());
    std::vector<std::string> levels(unique.begin(), unique.end());
    if (reference) {
      auto it = std::find(levels.begin(), levels.end(), *reference);
      if (it == levels.end()) fail(ErrorKind::InvalidArgument, "reference level '" + *reference + "' not in factor '" + name + "'");
      std::rotate(levels.begin(), it, it + 1);
    }
    factor_values_[name] = std::vector<std::string>(values.begin(), values.end());
    factors_[name] = FactorInfo{levels};
    for (std::size_t l = 1; l < levels.size(); ++l) {
      std::vector<double> col(rows_);
      for (std::size_t i = 0; i < rows_; ++i) col[i] = values[i] == levels[l] ? 1.0 : 0.0;
      columns_.emplace_back(factor_column(name, levels[l]), std::move(col));
    }
    return *this;
  }

  /// numeric x factor interaction columns (factor must have been added).
  DesignBuilder& interaction(const std::string& numeric_name, const std::string& factor_name) {
    auto n = numerics_.find(numeric_name);
    auto f = factors_.find(factor_name);
    if (n == numerics_.end()) fail(ErrorKind::InvalidArgument, "interaction: unknown numeric column '" + numeric_name + "'");
    if (f == factors_.end()) fail(ErrorKind::InvalidArgument, "interaction: unknown factor '" + factor_name + "'");
    const auto& values = factor_values_[factor_name];
    for (std::size_t l = 1; l < f->second.levels.size(); ++l) {
      std::vector<double> col(rows_);
      for (std::size_t i = 0; i < rows_; ++i) col[i] = values[i] == f->second.levels[l] ? n->second[i] : 0.0;
      columns_.emplace_back(interaction_column(numeric_name, factor_name, f->second.levels[l]), std::move(col));
    }
    return *this;
  }

  Design build() const {
    Design d;
    d.matrix.resize(static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(columns_.size()));
    for (std::size_t j = 0; j < columns_.size(); ++j) {
      d.names.push_back(columns_[j].first);
      for (std::size_t i = 0; i < rows_; ++i)
        d.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = columns_[j].second[i];
    }
    d.factors = factors_;
    d.has_intercept = has_intercept_;
    return d;
  }

 private:
  std::size_t rows_;
  bool has_intercept_ = false;
  std::vector<std::pair<std::string, std::vector<double>>> columns_;
  std::map<std::string, std::vector<double>> numerics_;
  std::map<std::string, std::vector<std::string>> factor_values_;
  std::map<std::string, FactorInfo> factors_;
};

/// Names of columns that are linear combinations of earlier ones. Empty if
/// the design has full column rank.
inline std::vector<std::string> collinear_columns(const Design& design) {
  std::vector<std::string> out;
  const auto& X = design.matrix;
  Eigen::MatrixXd kept(X.rows(), 0);
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    Eigen::MatrixXd candidate(X.rows(), kept.cols() + 1);
    candidate << kept, X.col(j);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(candidate);
    qr.setThreshold(1e-10);
    if (qr.rank() == candidate.cols()) {
      kept = std::move(candidate);
    } else {
      out.push_back(design.names[static_cast<std::size_t>(j)]);
    }
  }
  return out;
}

struct OlsFit {
  std::vector<std::string> names;
  Eigen::VectorXd coefficients;
  Eigen::VectorXd standard_errors;
  Eigen::VectorXd t_values;
  Eigen::VectorXd p_values;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd residuals;
  std::map<std::string, FactorInfo> factors;
  std::size_t n = 0;
  double residual_df = 0;
  double rss = 0;
  double sigma2 = 0;  // rss / residual_df
  double log_likelihood = 0;
  double aic = 0;
  double r_squared = 0;

  std::size_t index(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    fail(ErrorKind::InvalidArgument, "no coefficient named '" + name + "'");
  }
  double coef(const std::string& name) const { return coefficients(static_cast<Eigen::Index>(index(name))); }
};

inline OlsFit ols_fit(std::span<const double> y, const Design& design) {
  const auto& X = design.matrix;
  const auto n = static_cast<Eigen::Index>(y.size());
  const auto p = X.cols();
  if (X.rows() != n) fail(ErrorKind::InvalidArgument, "design rows do not match response length");
  if (p == 0) fail(ErrorKind::InvalidArgument, "empty design");
  if (n <= p) fail(ErrorKind::RankDeficient, "need more observations than columns");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    auto cols = collinear_columns(design);
    std::string list;
    for (const auto& c : cols) list += (list.empty() ? "" : ", ") + c;
    fail(ErrorKind::RankDeficient, "design is rank deficient; collinear columns: " + list);
  }
  Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  OlsFit fit;
  fit.names = design.names;
  fit.factors = design.factors;
  fit.n = static_cast<std::size_t>(n);
  fit.coefficients = qr.solve(yv);
  fit.residuals = yv - X * fit.coefficients;
  fit.rss = fit.residuals.squaredNorm();
  fit.residual_df = static_cast<double>(n - p);
  fit.sigma2 = fit.rss / fit.residual_df;

  // (X'X)^-1 = P R^-1 R^-T P^T
  Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p, p).template triangularView<Eigen::Upper>();
  Eigen::MatrixXd Rinv = R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::MatrixXd unscaled = Rinv * Rinv.transpose();
  Eigen::MatrixXd xtx_inv = qr.colsPermutation() * unscaled * qr.colsPermutation().transpose();
  fit.covariance = fit.sigma2 * xtx_inv;
  fit.standard_errors = fit.covariance.diagonal().cwiseSqrt();
  fit.t_values = fit.coefficients.cwiseQuotient(fit.standard_errors);
  fit.p_values.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) fit.p_values(j) = numeric::t_two_sided_p(fit.t_values(j), fit.residual_df);

  double dn = static_cast<double>(n);
  fit.log_likelihood = -0.5 * dn * (std::log(2 * std::numbers::pi) + std::log(fit.rss / dn) + 1.0);
  fit.aic = -2 * fit.log_likelihood + 2 * static_cast<double>(p + 1);
  double tss = design.has_intercept ? (yv.array() - yv.mean()).square().sum() : yv.squaredNorm();
  fit.r_squared = tss > 0 ? 1 - fit.rss / tss : 0.0;
  return fit;
}

struct GroupSlope {
  std::string moderator;
  std::string level;
  double slope = 0;
  double se = 0;
  double t = 0;
  double p = 1;
};

struct SlopeContrast {
  std::string moderator;
  std::string level_a;
  std::string level_b;
  double delta = 0;  // slope(a) - slope(b)
  double se = 0;
  double t = 0;
  double p = 1;
};

struct TrendTable {
  std::string focal;
  std::vector<GroupSlope> slopes;
  std::vector<SlopeContrast> contrasts;
  double df = 0;
};

/// Per-level slopes of `focal` for each moderator factor, averaging the
/// focal interactions of the other moderators over their levels with equal
/// weight, plus all pairwise level contrasts within each moderator.
inline TrendTable trend_slopes(const OlsFit& fit, const std::string& focal, const std::vector<std::string>& moderators) {
  const auto p = fit.coefficients.size();
  TrendTable out;
  out.focal = focal;
  out.df = fit.residual_df;
  auto focal_index = fit.index(focal);
  for (const auto& m : moderators)
    if (!fit.factors.contains(m)) fail(ErrorKind::InvalidArgument, "moderator '" + m + "' is absent from the design");

  auto find = [&](const std::string& name) -> std::optional<Eigen::Index> {
    for (std::size_t i = 0; i < fit.names.size(); ++i)
      if (fit.names[i] == name) return static_cast<Eigen::Index>(i);
    return std::nullopt;
  };
  auto evaluate = [&](const Eigen::VectorXd& c, double& est, double& se) {
    est = c.dot(fit.coefficients);
    se = std::sqrt(std::max(0.0, (c.transpose() * fit.covariance * c)(0, 0)));
  };

  for (const auto& m : moderators) {
    const auto& levels = fit.factors.at(m).levels;
    std::vector<Eigen::VectorXd> combos;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
      c(static_cast<Eigen::Index>(focal_index)) = 1;
      if (l > 0)
        if (auto idx = find(interaction_column(focal, m, levels[l]))) c(*idx) += 1;
      for (const auto& other : moderators) {
        if (other == m) continue;
        const auto& olevels = fit.factors.at(other).levels;
        for (std::size_t k = 1; k < olevels.size(); ++k)
          if (auto idx = find(interaction_column(focal, other, olevels[k])))
            c(*idx) += 1.0 / static_cast<double>(olevels.size());
      }
      combos.push_back(c);
      GroupSlope g{m, levels[l]};
      evaluate(c, g.slope, g.se);
      g.t = g.se > 0 ? g.slope / g.se : 0.0;
      g.p = g.se > 0 ? numeric::t_two_sided_p(g.t, fit.residual_df) : 1.0;
      out.slopes.push_back(g);
    }
    for (std::size_t a = 0; a < levels.size(); ++a) {
      for (std::size_t b = a + 1; b < levels.size(); ++b) {
        SlopeContrast k{m, levels[a], levels[b]};
        evaluate(combos[a] - combos[b], k.delta, k.se);
        if (k.se > 0) {
          k.t = k.delta / k.se;
          k.p = numeric::t_two_sided_p(k.t, fit.residual_df);
        } else {
          k.t = 0;
          k.p = 1;
        }
        out.contrasts.push_back(k);
      }
    }
  }
  return out;
}

}  // namespace normforge::stats
