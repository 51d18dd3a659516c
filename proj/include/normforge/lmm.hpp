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

// Gaussian linear mixed models with random intercepts for one or more
// grouping factors, fitted by profiled ML or REML.
//
// With variance ratios theta_f = sigma_f^2 / sigma_e^2 and relative
// covariance V0 = I + sum_f theta_f Z_f Z_f', the fixed effects and the
// residual variance have closed forms given theta, leaving a deviance in
// theta only. Everything is evaluated in the q-dimensional random-effect
// space (q = total number of levels) via M = Lambda Z'Z Lambda + I with
// Lambda = diag(sqrt(theta)), so the cost per evaluation is O(q^3 + n p).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "normforge/csv.hpp"
#include "normforge/error.hpp"
#include "normforge/hash.hpp"
#include "normforge/numeric.hpp"
#include "normforge/ols.hpp"

namespace normforge::lmm {

enum class Objective { ML, REML };

inline std::string to_string(Objective o) { return o == Objective::ML ? "ML" : "REML"; }

struct GroupingFactor {
  std::string name;
  std::vector<int> codes;  // level index per observation
  std::vector<std::string> levels;
};

inline GroupingFactor make_factor(const std::string& name, const std::vector<std::string>& values) {
  GroupingFactor f;
  f.name = name;
  std::map<std::string, int> index;
  for (const auto& v : values) index.emplace(v, 0);
  int next = 0;
  for (auto& [level, code] : index) {
    code = next++;
    f.levels.push_back(level);
  }
  for (const auto& v : values) f.codes.push_back(index[v]);
  return f;
}

struct MixedFrame {
  Eigen::VectorXd y;
  stats::Design fixed;
  std::vector<GroupingFactor> random;
};

struct FitOptions {
  int max_iterations = 200;
  double deviance_tolerance = 1e-8;
  double gradient_tolerance = 1e-6;
  double initial_theta = 1.0;
};

/// Profiled deviance and its analytic gradient as functions of theta.
class ProfiledDeviance {
 public:
  struct State {
    double deviance = 0;
    double pwrss = 0;  // penalized weighted residual sum of squares r' V0^-1 r
    double logdet_l = 0;
    double logdet_w = 0;
    Eigen::VectorXd beta;
    Eigen::VectorXd modes;   // conditional modes of the random intercepts (response units)
    Eigen::MatrixXd w_inv;   // (X' V0^-1 X)^-1
  };

  ProfiledDeviance(const MixedFrame& frame, Objective objective) : frame_(frame), objective_(objective) {
    const auto& X = frame.fixed.matrix;
    n_ = static_cast<std::size_t>(frame.y.size());
    p_ = static_cast<std::size_t>(X.cols());
    if (X.rows() != frame.y.size()) fail(ErrorKind::InvalidArgument, "fixed design rows do not match response");
    if (frame.random.empty()) fail(ErrorKind::InvalidArgument, "at least one random intercept factor is required");
    std::size_t q = 0;
    for (const auto& f : frame.random) {
      if (f.codes.size() != n_) fail(ErrorKind::InvalidArgument, "factor '" + f.name + "' has wrong length");
      if (f.levels.size() < 2) fail(ErrorKind::InvalidArgument, "factor '" + f.name + "' needs at least 2 levels");
      offsets_.push_back(q);
      q += f.levels.size();
    }
    q_ = q;
    const auto qi = static_cast<Eigen::Index>(q_);
    ztz_ = Eigen::MatrixXd::Zero(qi, qi);
    ztx_ = Eigen::MatrixXd::Zero(qi, X.cols());
    zty_ = Eigen::VectorXd::Zero(qi);
    for (std::size_t i = 0; i < n_; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      for (std::size_t a = 0; a < frame.random.size(); ++a) {
        auto ia = static_cast<Eigen::Index>(offsets_[a] + static_cast<std::size_t>(frame.random[a].codes[i]));
        zty_(ia) += frame.y(row);
        ztx_.row(ia) += X.row(row);
        for (std::size_t b = 0; b < frame.random.size(); ++b) {
          auto ib = static_cast<Eigen::Index>(offsets_[b] + static_cast<std::size_t>(frame.random[b].codes[i]));
          ztz_(ia, ib) += 1.0;
        }
      }
    }
    xtx_ = X.transpose() * X;
    xty_ = X.transpose() * frame.y;
  }

  std::size_t n() const { return n_; }
  std::size_t p() const { return p_; }
  std::size_t q() const { return q_; }
  std::size_t factors() const { return offsets_.size(); }
  Objective objective() const { return objective_; }

  State evaluate(const Eigen::VectorXd& theta) const {
    Work w = solve(theta);
    State s;
    s.deviance = w.deviance;
    s.pwrss = w.pwrss;
    s.logdet_l = w.logdet_l;
    s.logdet_w = w.logdet_w;
    s.beta = w.beta;
    Eigen::VectorXd u = w.chol_m.matrixU().solve(w.v);
    s.modes = w.lambda.asDiagonal() * u;
    s.w_inv = w.chol_w.solve(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(p_), static_cast<Eigen::Index>(p_)));
    return s;
  }

  double deviance(const Eigen::VectorXd& theta) const { return solve(theta).deviance; }

  /// d deviance / d theta_f, with beta and sigma^2 profiled out.
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const {
    Work w = solve(theta);
    const auto qi = static_cast<Eigen::Index>(q_);
    // T = L^-1 Lambda G, so G Lambda M^-1 Lambda G = T'T.
    Eigen::MatrixXd T = w.chol_m.matrixL().solve(w.lambda.asDiagonal() * ztz_);
    Eigen::VectorXd s = w.ztr - T.transpose() * w.v;
    Eigen::MatrixXd K = ztx_ - T.transpose() * w.cx;
    Eigen::VectorXd g(static_cast<Eigen::Index>(factors()));
    const double dn = static_cast<double>(n_);
    const double dp = static_cast<double>(p_);
    for (std::size_t f = 0; f < factors(); ++f) {
      auto start = static_cast<Eigen::Index>(offsets_[f]);
      auto len = static_cast<Eigen::Index>(frame_.random[f].levels.size());
      double trace_h = 0;
      for (Eigen::Index i = start; i < start + len; ++i) trace_h += ztz_(i, i) - T.col(i).squaredNorm();
      double ss = s.segment(start, len).squaredNorm();
      if (objective_ == Objective::ML) {
        g(static_cast<Eigen::Index>(f)) = trace_h - dn * ss / w.pwrss;
      } else {
        Eigen::MatrixXd kf = K.middleRows(start, len);
        Eigen::MatrixXd lk = w.chol_w.matrixL().solve(kf.transpose());
        g(static_cast<Eigen::Index>(f)) = trace_h - lk.squaredNorm() - (dn - dp) * ss / w.pwrss;
      }
    }
    (void)qi;
    return g;
  }

 private:
  struct Work {
    Eigen::VectorXd lambda;
    Eigen::LLT<Eigen::MatrixXd> chol_m;
    Eigen::LLT<Eigen::MatrixXd> chol_w;
    Eigen::MatrixXd cx;  // L^-1 Lambda Z'X
    Eigen::VectorXd beta;
    Eigen::VectorXd ztr;
    Eigen::VectorXd v;  // L^-1 Lambda Z'r
    double pwrss = 0;
    double logdet_l = 0;
    double logdet_w = 0;
    double deviance = 0;
  };

  Work solve(const Eigen::VectorXd& theta) const {
    if (static_cast<std::size_t>(theta.size()) != factors())
      fail(ErrorKind::InvalidArgument, "theta has wrong dimension");
    Work w;
    const auto qi = static_cast<Eigen::Index>(q_);
    w.lambda.resize(qi);
    for (std::size_t f = 0; f < factors(); ++f) {
      double th = theta(static_cast<Eigen::Index>(f));
      if (th < 0 || !std::isfinite(th)) fail(ErrorKind::InvalidArgument, "theta must be finite and >= 0");
      w.lambda.segment(static_cast<Eigen::Index>(offsets_[f]), static_cast<Eigen::Index>(frame_.random[f].levels.size()))
          .setConstant(std::sqrt(th));
    }
    Eigen::MatrixXd M = w.lambda.asDiagonal() * ztz_ * w.lambda.asDiagonal();
    M.diagonal().array() += 1.0;
    w.chol_m.compute(M);
    if (w.chol_m.info() != Eigen::Success) fail(ErrorKind::NonConvergence, "random-effects system not positive definite");
    w.cx = w.chol_m.matrixL().solve(w.lambda.asDiagonal() * ztx_);
    Eigen::VectorXd cy = w.chol_m.matrixL().solve(w.lambda.asDiagonal() * zty_);
    Eigen::MatrixXd W = xtx_ - w.cx.transpose() * w.cx;
    w.chol_w.compute(W);
    if (w.chol_w.info() != Eigen::Success) fail(ErrorKind::RankDeficient, "fixed-effects design is singular");
    w.beta = w.chol_w.solve(xty_ - w.cx.transpose() * cy);
    Eigen::VectorXd r = frame_.y - frame_.fixed.matrix * w.beta;
    w.ztr = zty_ - ztx_ * w.beta;
    w.v = w.chol_m.matrixL().solve(w.lambda.asDiagonal() * w.ztr);
    w.pwrss = r.squaredNorm() - w.v.squaredNorm();
    if (!(w.pwrss > 0)) fail(ErrorKind::Degenerate, "zero residual variance");
    w.logdet_l = 2 * w.chol_m.matrixLLT().diagonal().array().log().sum();
    w.logdet_w = 2 * w.chol_w.matrixLLT().diagonal().array().log().sum();
    const double dn = static_cast<double>(n_);
    const double two_pi = 2 * std::numbers::pi;
    if (objective_ == Objective::ML) {
      w.deviance = w.logdet_l + dn * (1 + std::log(two_pi * w.pwrss / dn));
    } else {
      const double dfree = dn - static_cast<double>(p_);
      w.deviance = w.logdet_l + w.logdet_w + dfree * (1 + std::log(two_pi * w.pwrss / dfree));
    }
    (void)qi;
    return w;
  }

  const MixedFrame& frame_;
  Objective objective_;
  std::size_t n_ = 0, p_ = 0, q_ = 0;
  std::vector<std::size_t> offsets_;
  Eigen::MatrixXd ztz_, ztx_, xtx_;
  Eigen::VectorXd zty_, xty_;
};

struct LmmFit {
  std::vector<std::string> names;
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  Eigen::VectorXd t_values;
  Eigen::VectorXd p_values;
  Eigen::MatrixXd covariance;
  double df = 0;  // n - rank(X) - number of variance parameters
  std::vector<std::string> factor_names;
  std::map<std::string, double> variance_components;
  std::map<std::string, bool> at_boundary;
  std::map<std::string, Eigen::VectorXd> conditional_modes;
  Eigen::VectorXd theta;
  double residual_variance = 0;
  Objective objective = Objective::REML;
  double deviance = 0;
  double log_likelihood = 0;
  double aic = 0;
  double r2_marginal = 0;
  double r2_conditional = 0;
  int iterations = 0;
  double gradient_norm = 0;
  std::size_t n = 0;
  std::uint64_t design_digest = 0;  // fingerprint of the fixed-effect matrix

  double coef(const std::string& name) const { return beta(index(name)); }
  Eigen::Index index(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<Eigen::Index>(i);
    fail(ErrorKind::InvalidArgument, "no fixed effect named '" + name + "'");
  }
};

namespace detail {

inline Eigen::VectorXd projected(const Eigen::VectorXd& theta, const Eigen::VectorXd& g) {
  Eigen::VectorXd pg = g;
  for (Eigen::Index k = 0; k < theta.size(); ++k)
    if (theta(k) <= 0 && g(k) > 0) pg(k) = 0;
  return pg;
}

// Central-difference Hessian of the analytic gradient (forward near 0).
inline Eigen::MatrixXd hessian(const ProfiledDeviance& dev, const Eigen::VectorXd& theta) {
  const auto k = theta.size();
  Eigen::MatrixXd H(k, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    double h = 1e-5 * std::max(theta(j), 1e-2);
    Eigen::VectorXd up = theta, down = theta;
    up(j) += h;
    if (theta(j) - h >= 0) {
      down(j) -= h;
      H.col(j) = (dev.gradient(up) - dev.gradient(down)) / (2 * h);
    } else {
      H.col(j) = (dev.gradient(up) - dev.gradient(theta)) / h;
    }
  }
  return 0.5 * (H + H.transpose());
}

inline Eigen::VectorXd clip(Eigen::VectorXd theta) { return theta.cwiseMax(0.0); }

}  // namespace detail

inline LmmFit lmm_fit_frame(const MixedFrame& frame, Objective objective, const FitOptions& options = {}) {
  auto cols = stats::collinear_columns(frame.fixed);
  if (!cols.empty()) {
    std::string list;
    for (const auto& c : cols) list += (list.empty() ? "" : ", ") + c;
    fail(ErrorKind::RankDeficient, "singular fixed design; collinear columns: " + list);
  }
  ProfiledDeviance dev(frame, objective);
  if (dev.n() <= dev.p() + dev.factors() + 1) fail(ErrorKind::InvalidArgument, "too few observations for the model");

  const auto k = static_cast<Eigen::Index>(dev.factors());
  Eigen::VectorXd theta = Eigen::VectorXd::Constant(k, options.initial_theta);
  double current = dev.deviance(theta);
  // Boundary start can be better when true variances are tiny.
  if (double at_zero = dev.deviance(Eigen::VectorXd::Zero(k)); at_zero < current) {
    theta.setZero();
    current = at_zero;
  }
  std::ostringstream trajectory;
  int iter = 0;
  double improvement = std::numeric_limits<double>::infinity();
  Eigen::VectorXd pg;
  bool converged = false;
  for (; iter < options.max_iterations; ++iter) {
    Eigen::VectorXd g = dev.gradient(theta);
    pg = detail::projected(theta, g);
    trajectory << "  iter " << iter << ": deviance " << numeric::format_double(current) << ", |grad| "
               << numeric::format_double(pg.norm()) << "\n";
    if (pg.norm() < options.gradient_tolerance && (iter == 0 || improvement < options.deviance_tolerance)) {
      converged = true;
      break;
    }
    // Newton direction on the free coordinates, steepest descent otherwise.
    std::vector<Eigen::Index> free;
    for (Eigen::Index j = 0; j < k; ++j)
      if (!(theta(j) <= 0 && g(j) > 0)) free.push_back(j);
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(k);
    bool newton = false;
    {
      Eigen::MatrixXd H = detail::hessian(dev, theta);
      const auto m = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd Hf(m, m);
      Eigen::VectorXd gf(m);
      for (Eigen::Index a = 0; a < m; ++a) {
        gf(a) = g(free[static_cast<std::size_t>(a)]);
        for (Eigen::Index b = 0; b < m; ++b) Hf(a, b) = H(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
      }
      Eigen::LLT<Eigen::MatrixXd> llt(Hf);
      if (m > 0 && llt.info() == Eigen::Success) {
        Eigen::VectorXd step = -llt.solve(gf);
        if (step.allFinite() && step.dot(gf) < 0) {
          for (Eigen::Index a = 0; a < m; ++a) dir(free[static_cast<std::size_t>(a)]) = step(a);
          newton = true;
        }
      }
      if (!newton) {
        for (auto j : free) dir(j) = -g(j);
        // Scale so the first trial moves theta by at most its own size.
        double scale = 1.0 / std::max(1.0, dir.lpNorm<Eigen::Infinity>() / std::max(1.0, theta.lpNorm<Eigen::Infinity>()));
        dir *= scale;
      }
    }
    // Backtracking line search on the projected path.
    double step = 1.0;
    Eigen::VectorXd next = theta;
    double next_value = current;
    bool accepted = false;
    for (int trial = 0; trial < 60; ++trial, step *= 0.5) {
      Eigen::VectorXd candidate = detail::clip(theta + step * dir);
      double value = dev.deviance(candidate);
      if (candidate != theta && value < current && value <= current + 1e-4 * g.dot(candidate - theta)) {
        next = candidate;
        next_value = value;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // Golden-section search along the descent ray, for flat regions near 0.
      const double phi = (std::sqrt(5.0) - 1) / 2;
      double lo = 0, hi = 1;
      double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
      double f1 = dev.deviance(detail::clip(theta + x1 * dir)), f2 = dev.deviance(detail::clip(theta + x2 * dir));
      for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
        if (f1 < f2) {
          hi = x2;
          x2 = x1;
          f2 = f1;
          x1 = hi - phi * (hi - lo);
          f1 = dev.deviance(detail::clip(theta + x1 * dir));
        } else {
          lo = x1;
          x1 = x2;
          f1 = f2;
          x2 = lo + phi * (hi - lo);
          f2 = dev.deviance(detail::clip(theta + x2 * dir));
        }
      }
      Eigen::VectorXd candidate = detail::clip(theta + 0.5 * (lo + hi) * dir);
      double value = dev.deviance(candidate);
      if (value < current) {
        next = candidate;
        next_value = value;
        accepted = true;
      }
    }
    if (!accepted) {
      // No descent possible at working precision.
      if (pg.norm() < 1e3 * options.gradient_tolerance) {
        converged = true;
        break;
      }
      break;
    }
    improvement = current - next_value;
    theta = next;
    current = next_value;
  }
  if (!converged) {
    fail(ErrorKind::NonConvergence, "mixed model did not converge after " + std::to_string(iter) +
                                        " iterations; trajectory:\n" + trajectory.str());
  }

  auto state = dev.evaluate(theta);
  LmmFit fit;
  fit.names = frame.fixed.names;
  fit.design_digest = hash::fnv1a64(std::string_view(reinterpret_cast<const char*>(frame.fixed.matrix.data()),
                                                     sizeof(double) * static_cast<std::size_t>(frame.fixed.matrix.size())));
  fit.objective = objective;
  fit.theta = theta;
  fit.iterations = iter;
  fit.gradient_norm = pg.norm();
  fit.n = dev.n();
  const double dn = static_cast<double>(dev.n());
  const double dp = static_cast<double>(dev.p());
  fit.residual_variance = state.pwrss / (objective == Objective::ML ? dn : dn - dp);
  fit.beta = state.beta;
  fit.covariance = fit.residual_variance * state.w_inv;
  fit.se = fit.covariance.diagonal().cwiseSqrt();
  fit.t_values = fit.beta.cwiseQuotient(fit.se);
  fit.df = dn - dp - static_cast<double>(dev.factors() + 1);
  fit.p_values.resize(fit.beta.size());
  for (Eigen::Index j = 0; j < fit.beta.size(); ++j) fit.p_values(j) = numeric::t_two_sided_p(fit.t_values(j), fit.df);

  double sum_re = 0;
  Eigen::Index offset = 0;
  for (std::size_t f = 0; f < frame.random.size(); ++f) {
    const auto& name = frame.random[f].name;
    double var = theta(static_cast<Eigen::Index>(f)) * fit.residual_variance;
    fit.factor_names.push_back(name);
    fit.variance_components[name] = var;
    fit.at_boundary[name] = theta(static_cast<Eigen::Index>(f)) <= 0;
    auto len = static_cast<Eigen::Index>(frame.random[f].levels.size());
    fit.conditional_modes[name] = state.modes.segment(offset, len);
    offset += len;
    sum_re += var;
  }
  fit.deviance = state.deviance;
  fit.log_likelihood = -0.5 * state.deviance;
  fit.aic = state.deviance + 2 * (dp + static_cast<double>(dev.factors()) + 1);
  Eigen::VectorXd fitted = frame.fixed.matrix * fit.beta;
  double var_fixed = (fitted.array() - fitted.mean()).square().sum() / dn;
  double total = var_fixed + sum_re + fit.residual_variance;
  fit.r2_marginal = total > 0 ? var_fixed / total : 0.0;
  fit.r2_conditional = total > 0 ? (var_fixed + sum_re) / total : 0.0;
  return fit;
}

// ---------------------------------------------------------------------------
// Response data
// ---------------------------------------------------------------------------

enum class Transform { Identity, Log };

inline Transform parse_transform(const std::string& text) {
  if (text == "identity" || text.empty()) return Transform::Identity;
  if (text == "log") return Transform::Log;
  fail(ErrorKind::Config, "unknown transform '" + text + "'");
}

inline std::string to_string(Transform t) { return t == Transform::Log ? "log" : "identity"; }

struct Observation {
  std::string subject_id;
  std::string item_id;
  double measure = 0;
  std::map<std::string, double> covariates;
};

struct ResponseDataset {
  std::vector<Observation> observations;
  std::string measure_kind = "ResponseTime";  // ResponseTime, ErpAmplitude or another tag
  Transform transform = Transform::Identity;
};

/// Columns `subject_id,item_id,measure,covariate_*`; covariates are stored
/// without the `covariate_` prefix.
inline ResponseDataset load_response_dataset(const std::string& path, const std::string& measure_kind = "ResponseTime",
                                             Transform transform = Transform::Identity) {
  auto table = csv::read_file(path);
  auto subject = table.column("subject_id");
  auto item = table.column("item_id");
  auto measure = table.column("measure");
  std::vector<std::pair<std::size_t, std::string>> covs;
  const std::string prefix = "covariate_";
  for (std::size_t i = 0; i < table.header.size(); ++i)
    if (table.header[i].rfind(prefix, 0) == 0) covs.emplace_back(i, table.header[i].substr(prefix.size()));
  ResponseDataset ds;
  ds.measure_kind = measure_kind;
  ds.transform = transform;
  for (const auto& row : table.rows) {
    auto where = path + ": line " + std::to_string(row.line);
    Observation o;
    o.subject_id = row.fields[subject];
    o.item_id = row.fields[item];
    if (o.subject_id.empty() || o.item_id.empty()) fail(ErrorKind::Ingest, where + ": empty subject_id or item_id");
    auto m = numeric::parse_double(row.fields[measure]);
    if (!m || !std::isfinite(*m)) fail(ErrorKind::Ingest, where + ", column 'measure': not a finite number");
    o.measure = *m;
    for (const auto& [col, name] : covs) {
      auto v = numeric::parse_double(row.fields[col]);
      if (!v || !std::isfinite(*v)) fail(ErrorKind::Ingest, where + ", column '" + prefix + name + "': not a finite number");
      o.covariates[name] = *v;
    }
    ds.observations.push_back(std::move(o));
  }
  return ds;
}

inline void write_response_dataset(const ResponseDataset& ds, std::ostream& out) {
  std::vector<std::string> header = {"subject_id", "item_id", "measure"};
  std::set<std::string> names;
  for (const auto& o : ds.observations)
    for (const auto& [k, v] : o.covariates) names.insert(k);
  for (const auto& n : names) header.push_back("covariate_" + n);
  csv::write_row(out, header);
  for (const auto& o : ds.observations) {
    std::vector<std::string> row = {o.subject_id, o.item_id, numeric::format_double(o.measure)};
    for (const auto& n : names) row.push_back(numeric::format_double(o.covariates.at(n)));
    csv::write_row(out, row);
  }
}

struct LmmSpec {
  std::vector<std::string> fixed;               // covariate names
  bool intercept = true;
  std::vector<std::string> random_intercepts = {"subject", "item"};
  Objective objective = Objective::REML;
};

inline MixedFrame make_frame(const ResponseDataset& data, const LmmSpec& spec) {
  if (spec.random_intercepts.empty()) fail(ErrorKind::InvalidArgument, "at least one random intercept is required");
  if (spec.fixed.empty() && !spec.intercept) fail(ErrorKind::InvalidArgument, "model has no fixed effects");
  const auto n = data.observations.size();
  MixedFrame frame;
  frame.y.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double m = data.observations[i].measure;
    if (!std::isfinite(m)) fail(ErrorKind::InvalidArgument, "non-finite measure");
    if (data.transform == Transform::Log) {
      if (m <= 0) fail(ErrorKind::InvalidArgument, "log transform needs positive measures");
      m = std::log(m);
    }
    frame.y(static_cast<Eigen::Index>(i)) = m;
  }
  stats::DesignBuilder builder(n);
  if (spec.intercept) builder.intercept();
  for (const auto& name : spec.fixed) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto it = data.observations[i].covariates.find(name);
      if (it == data.observations[i].covariates.end())
        fail(ErrorKind::InvalidArgument, "observation " + std::to_string(i + 1) + " lacks predictor '" + name + "'");
      col[i] = it->second;
    }
    builder.numeric(name, col);
  }
  frame.fixed = builder.build();
  for (const auto& r : spec.random_intercepts) {
    std::vector<std::string> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (r == "subject") values[i] = data.observations[i].subject_id;
      else if (r == "item") values[i] = data.observations[i].item_id;
      else fail(ErrorKind::InvalidArgument, "random intercepts are limited to 'subject' and 'item', got '" + r + "'");
    }
    frame.random.push_back(make_factor(r, values));
    if (frame.random.back().levels.size() < 2)
      fail(ErrorKind::InvalidArgument, "random factor '" + r + "' needs at least 2 levels");
  }
  return frame;
}

inline LmmFit lmm_fit(const ResponseDataset& data, const LmmSpec& spec, const FitOptions& options = {}) {
  return lmm_fit_frame(make_frame(data, spec), spec.objective, options);
}

struct InformationCriteria {
  double aic = 0;
  double log_likelihood = 0;
};

inline InformationCriteria information_criteria(const LmmFit& fit) { return {fit.aic, fit.log_likelihood}; }

/// AIC comparisons across fits need a common objective, and REML fits
/// additionally need identical fixed-effect designs.
inline void check_comparable(const std::vector<const LmmFit*>& fits) {
  if (fits.empty()) return;
  for (const auto* f : fits) {
    if (f->objective != fits.front()->objective)
      fail(ErrorKind::InvalidComparison, "cannot compare ML and REML criteria");
    if (f->objective == Objective::REML &&
        (f->names != fits.front()->names || f->design_digest != fits.front()->design_digest))
      fail(ErrorKind::InvalidComparison, "REML criteria of fits with different fixed effects are not comparable; refit with ML");
  }
}

struct RSquared {
  double marginal = 0;
  double conditional = 0;
};

inline RSquared r_squared(const LmmFit& fit) { return {fit.r2_marginal, fit.r2_conditional}; }

}  // namespace normforge::lmm
