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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "normforge/error.hpp"
#include "normforge/numeric.hpp"

namespace normforge::stats {

/// Average (fractional) ranks, 1-based; ties share the mean of their positions.
inline std::vector<double> ranks(std::span<const double> x) {
  if (x.empty()) fail(ErrorKind::InvalidArgument, "ranks of an empty vector");
  for (double v : x)
    if (!std::isfinite(v)) fail(ErrorKind::InvalidArgument, "ranks require finite values");
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = rank;
    i = j + 1;
  }
  return out;
}

inline double mean(std::span<const double> x) {
  double s = 0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

/// Pearson correlation; Degenerate error when either vector is constant.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::InvalidArgument, "pearson: length mismatch");
  double mx = mean(x), my = mean(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0 || syy <= 0) fail(ErrorKind::Degenerate, "correlation undefined for a constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

enum class SignificanceBand { NotSignificant, P05, P01, P001 };

inline SignificanceBand band_for(double p) {
  if (p < 0.001) return SignificanceBand::P001;
  if (p < 0.01) return SignificanceBand::P01;
  if (p < 0.05) return SignificanceBand::P05;
  return SignificanceBand::NotSignificant;
}

inline std::string to_string(SignificanceBand b) {
  switch (b) {
    case SignificanceBand::NotSignificant: return "ns";
    case SignificanceBand::P05: return "*";
    case SignificanceBand::P01: return "**";
    case SignificanceBand::P001: return "***";
  }
  return "?";
}

struct CorrelationResult {
  double rho = 0;
  std::size_t n = 0;
  double p_value = 1;
  SignificanceBand band = SignificanceBand::NotSignificant;
};

/// Two-sided p for a correlation coefficient via t = r sqrt((n-2)/(1-r^2)).
inline double correlation_p_value(double rho, std::size_t n) {
  if (n < 3) fail(ErrorKind::InvalidArgument, "p-value needs n >= 3");
  if (std::fabs(rho) >= 1.0) return 0.0;
  double df = static_cast<double>(n - 2);
  double t = rho * std::sqrt(df / (1 - rho * rho));
  return numeric::t_two_sided_p(t, df);
}

inline void check_pairs(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::InvalidArgument, "spearman: length mismatch");
  if (x.size() < 3) fail(ErrorKind::InvalidArgument, "spearman needs n >= 3");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) fail(ErrorKind::InvalidArgument, "spearman: non-finite value");
}

inline CorrelationResult spearman(std::span<const double> x, std::span<const double> y) {
  check_pairs(x, y);
  auto rx = ranks(x), ry = ranks(y);
  CorrelationResult out;
  out.n = x.size();
  out.rho = pearson(rx, ry);
  out.p_value = correlation_p_value(out.rho, out.n);
  out.band = band_for(out.p_value);
  return out;
}

/// Exact two-sided permutation p-value of Spearman's rho (n <= 10): the
/// share of the n! reorderings of y whose |rho| reaches the observed one.
inline double spearman_exact_p(std::span<const double> x, std::span<const double> y) {
  check_pairs(x, y);
  if (x.size() > 10) fail(ErrorKind::InvalidArgument, "exact permutation p-value limited to n <= 10");
  auto rx = ranks(x), ry = ranks(y);
  double observed = std::fabs(pearson(rx, ry));
  double mx = mean(rx), my = mean(ry);
  double sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  double denom = std::sqrt(sxx * syy);
  std::vector<std::size_t> perm(ry.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t hits = 0, total = 0;
  do {
    double sxy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) sxy += (rx[i] - mx) * (ry[perm[i]] - my);
    if (std::fabs(sxy / denom) >= observed - 1e-12) ++hits;
    ++total;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace normforge::stats
