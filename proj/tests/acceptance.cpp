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

// Acceptance suite: one PASS/FAIL line per criterion. Tolerances and time
// budgets are fixed below; the exit status is nonzero if any line fails.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "normforge/aggregation.hpp"
#include "normforge/fixture.hpp"
#include "normforge/lmm.hpp"
#include "normforge/mock_backend.hpp"
#include "normforge/ols.hpp"
#include "normforge/pipeline.hpp"
#include "normforge/stats.hpp"
#include "normforge/substitution.hpp"
#include "normforge/validation.hpp"
#include "oracles.hpp"

using namespace normforge;
using stats::DesignBuilder;
namespace fs = std::filesystem;

namespace {

// --- pinned tolerances ------------------------------------------------------

constexpr double kWorkedExample = 2.158;
constexpr double kWorkedExampleTol = 1e-3;
constexpr double kRankTol = 1e-12;
constexpr double kPValueTol = 0.05;
constexpr std::size_t kExactMaxN = 8;
constexpr double kOlsTol = 1e-6;
constexpr double kAnovaTol = 1e-4;
constexpr double kGradientTol = 1e-4;
constexpr double kFdStep = 1e-5;
constexpr double kTargetRho = 0.65;
constexpr double kValidityTol = 0.05;
constexpr double kTrueSlope = -0.046;
constexpr double kRetestMin = 0.999;
constexpr double kAlpha = 0.05;
constexpr int kSeeds = 100;

struct Outcome {
  bool pass = false;
  std::string detail;
  std::vector<std::string> notes;
};

struct Criterion {
  int id;
  const char* title;
  double budget_s;
  std::function<Outcome()> run;
};

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("nf_acceptance_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Eigen::VectorXd as_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = pipeline::io::read_file(e.path());
  return out;
}

void run_pipeline(const fs::path& config, const fs::path& out, pipeline::Stage stage) {
  pipeline::RunOptions opts;
  opts.output_dir = out;
  pipeline::Pipeline(load_run_config(config), opts).run(stage);
}

// --- 1 ----------------------------------------------------------------------

Outcome worked_example() {
  std::vector<Candidate> cands{{"2", std::log(0.768)}, {"3", std::log(0.195)}, {"1", std::log(0.037)}};
  auto parsed = parse_candidates(cands, LikertScale::seven_point());
  double r = weighted_rating(parsed.valid).rating;
  return {std::abs(r - kWorkedExample) <= kWorkedExampleTol,
          fmt("rating %.6f, target %.3f +/- %.3f", r, kWorkedExample, kWorkedExampleTol), {}};
}

// --- 2 ----------------------------------------------------------------------

Outcome rank_oracle() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> size(3, 12);
  double rank_err = 0, rho_err = 0, exact_err = 0;
  std::map<std::size_t, double> p_gap;  // by n, for n <= kExactMaxN
  for (int v = 0; v < kSeeds; ++v) {
    std::size_t n = size(rng);
    // Few distinct values so ties are common.
    std::uniform_int_distribution<int> value(1, static_cast<int>(n) / 2 + 2);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = value(rng);
      y[i] = value(rng);
    }
    auto rx = stats::ranks(x), ox = oracle::ranks(x);
    for (std::size_t i = 0; i < n; ++i) rank_err = std::max(rank_err, std::abs(rx[i] - ox[i]));
    bool constant = std::all_of(x.begin(), x.end(), [&](double a) { return a == x[0]; }) ||
                    std::all_of(y.begin(), y.end(), [&](double a) { return a == y[0]; });
    if (constant) continue;
    auto res = stats::spearman(x, y);
    rho_err = std::max(rho_err, std::abs(res.rho - oracle::spearman(x, y)));
    if (n <= kExactMaxN) {
      double exact = oracle::exact_spearman_p(x, y);
      exact_err = std::max(exact_err, std::abs(stats::spearman_exact_p(x, y) - exact));
      p_gap[n] = std::max(p_gap[n], std::abs(res.p_value - exact));
    }
  }
  double worst = 0;
  std::size_t worst_n = 0;
  for (auto [n, g] : p_gap)
    if (g > worst) worst = g, worst_n = n;
  Outcome o;
  o.pass = rank_err <= kRankTol && rho_err <= kRankTol && worst <= kPValueTol;
  o.detail = fmt("rank err %.1e, rho err %.1e, max |p_t - p_exact| %.4f at n = %zu (tol %.2f)", rank_err, rho_err,
                 worst, worst_n, kPValueTol);
  o.notes.push_back(fmt("library exact p vs oracle: %.1e", exact_err));
  std::string by_n = "max p gap by n:";
  for (auto [n, g] : p_gap) by_n += fmt(" %zu:%.3f", n, g);
  o.notes.push_back(by_n);
  return o;
}

// --- 3 ----------------------------------------------------------------------

Outcome lmm_closed_forms() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0, 1);
  double ols_err = 0, anova_err = 0, grad = 0;

  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 120;
    std::vector<double> x(n), e(n);
    std::vector<std::string> g(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = z(rng);
      e[i] = z(rng);
      g[i] = "g" + std::to_string(i % 10);
    }
    auto design = DesignBuilder(n).intercept().numeric("x", x).build();
    auto factor = lmm::make_factor("group", g);
    Eigen::MatrixXd XZ(static_cast<Eigen::Index>(n), 2 + 10);
    XZ << design.matrix, oracle::indicator(factor.codes, 10);
    Eigen::VectorXd ev = as_vector(e);
    ev -= XZ * XZ.completeOrthogonalDecomposition().solve(ev);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = 1 + 0.5 * x[i] + ev(static_cast<Eigen::Index>(i));
    auto ols = stats::ols_fit(y, design);
    lmm::MixedFrame frame{as_vector(y), design, {factor}};
    for (auto obj : {lmm::Objective::ML, lmm::Objective::REML})
      ols_err = std::max(ols_err, (lmm::lmm_fit_frame(frame, obj).beta - ols.coefficients).cwiseAbs().maxCoeff());
  }

  for (int rep = 0; rep < 10; ++rep) {
    const int groups = 12, m = 5;
    std::vector<std::vector<double>> cells(groups);
    std::vector<double> y;
    std::vector<std::string> g;
    for (int a = 0; a < groups; ++a) {
      double effect = 2.0 * z(rng);
      for (int r = 0; r < m; ++r) {
        cells[static_cast<std::size_t>(a)].push_back(5 + effect + z(rng));
        y.push_back(cells[static_cast<std::size_t>(a)].back());
        g.push_back("g" + std::to_string(a));
      }
    }
    auto ref = oracle::one_way_anova(cells);
    lmm::MixedFrame frame{as_vector(y), DesignBuilder(y.size()).intercept().build(), {lmm::make_factor("group", g)}};
    auto fit = lmm::lmm_fit_frame(frame, lmm::Objective::REML);
    anova_err = std::max({anova_err, std::abs(fit.residual_variance - ref.within),
                          std::abs(fit.variance_components.at("group") - ref.between)});
  }

  // Crossed subjects x items with clearly positive components: interior optimum.
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> y, rating;
    std::vector<std::string> subj, item;
    std::vector<double> w(20), r(20);
    for (int i = 0; i < 20; ++i) w[static_cast<std::size_t>(i)] = 0.5 * z(rng), r[static_cast<std::size_t>(i)] = 1 + 6 * (z(rng) * 0.15 + 0.5);
    for (int s = 0; s < 15; ++s) {
      double u = 0.8 * z(rng);
      for (int i = 0; i < 20; ++i) {
        auto k = static_cast<std::size_t>(i);
        y.push_back(1 + 0.5 * r[k] + u + w[k] + z(rng));
        rating.push_back(r[k]);
        subj.push_back("s" + std::to_string(s));
        item.push_back("i" + std::to_string(i));
      }
    }
    lmm::MixedFrame frame{as_vector(y), DesignBuilder(y.size()).intercept().numeric("rating", rating).build(),
                          {lmm::make_factor("subject", subj), lmm::make_factor("item", item)}};
    for (auto obj : {lmm::Objective::ML, lmm::Objective::REML}) {
      auto fit = lmm::lmm_fit_frame(frame, obj);
      lmm::ProfiledDeviance dev(frame, obj);
      for (Eigen::Index j = 0; j < fit.theta.size(); ++j) {
        if (fit.theta(j) <= kFdStep) continue;
        Eigen::VectorXd up = fit.theta, down = fit.theta;
        up(j) += kFdStep;
        down(j) -= kFdStep;
        grad = std::max(grad, std::abs((dev.deviance(up) - dev.deviance(down)) / (2 * kFdStep)));
      }
    }
  }
  return {ols_err <= kOlsTol && anova_err <= kAnovaTol && grad <= kGradientTol,
          fmt("|beta - beta_ols| %.1e (tol %.0e), |var - anova| %.1e (tol %.0e), |fd grad| %.1e (tol %.0e)", ols_err,
              kOlsTol, anova_err, kAnovaTol, grad, kGradientTol),
          {}};
}

// --- 4 ----------------------------------------------------------------------

Outcome validity_recovery() {
  auto dir = scratch("validity");
  auto config = fixture::write_fixture(dir, fixture::single_study_fixture(300, {{"gpt-4o", kTargetRho}}));
  run_pipeline(config, dir / "out", pipeline::Stage::All);
  auto report = pipeline::io::read_json(dir / "out/report/report.json");
  const auto& cells = report["validity"]["groupings"]["language"];
  Outcome o;
  if (cells.size() != 1 || cells[0]["result"].is_null()) {
    o.detail = fmt("expected one language cell, found %zu", cells.size());
  } else {
    double rho = cells[0]["result"]["rho"].get<double>();
    o.pass = std::abs(rho - kTargetRho) <= kValidityTol;
    o.detail = fmt("rho %.4f over n = %d, target %.2f +/- %.2f", rho, cells[0]["n"].get<int>(), kTargetRho,
                   kValidityTol);
  }
  fs::remove_all(dir);
  return o;
}

// --- 5 ----------------------------------------------------------------------

Outcome substitution_pattern() {
  int human_sig = 0, machine_sign = 0, noise_null = 0, human_best = 0;
  double mean_machine_rho = 0;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    hash::SplitMix64 rng(0xACCE55ULL * static_cast<std::uint64_t>(seed));
    std::map<std::string, double> human;
    MockRaterConfig mock;
    mock.target_rho = kTargetRho;
    mock.noise_seed = static_cast<std::uint64_t>(seed);
    lmm::ItemRatings noise;
    for (int i = 1; i <= 64; ++i) {
      auto id = fmt("i%02d", i);
      double h = std::round((1 + 6 * numeric::normal_cdf(0.9 * fixture::gaussian(rng))) * 100) / 100;
      human[id] = h;
      mock.ground_truth[{{"study", id}, Dimension::Familiarity}] = h;
      noise[id] = 1 + 6 * numeric::normal_cdf(fixture::gaussian(rng));
    }
    fixture::ResponseSpec spec;
    spec.name = "rt";
    spec.subjects = 30;
    spec.slope = kTrueSlope;
    auto data = fixture::simulate_responses(human, spec, static_cast<std::uint64_t>(seed) * 7919);
    MockRater rater(mock);
    lmm::ItemRatings machine;
    for (const auto& [key, h] : mock.ground_truth)
      machine[key.item.item_id] =
          weighted_rating(parse_candidates(rater.rate(key, mock.scale), mock.scale).valid).rating;
    std::vector<double> hv, mv;
    for (const auto& [id, h] : human) hv.push_back(h), mv.push_back(machine[id]);
    mean_machine_rho += stats::spearman(hv, mv).rho / kSeeds;

    auto table = lmm::substitution_compare(data, {{"human", human}, {"machine", machine}, {"noise", noise}}, {});
    const auto& h = table.rows[0];
    const auto& m = table.rows[1];
    const auto& n = table.rows[2];
    human_sig += h.beta < 0 && h.p < kAlpha;
    machine_sign += (m.beta < 0) == (kTrueSlope < 0);
    noise_null += n.p >= kAlpha;
    human_best += table.best_aic_source == "human";
  }
  Outcome o;
  o.pass = human_sig >= 95 && machine_sign >= 90 && noise_null >= 90 && human_best >= 90;
  o.detail = fmt("human neg & sig %d/100 (>=95), machine same sign %d/100 (>=90), noise n.s. %d/100 (>=90), "
                 "human best ML-AIC %d/100 (>=90)",
                 human_sig, machine_sign, noise_null, human_best);
  o.notes.push_back(fmt("mean machine-human Spearman %.3f", mean_machine_rho));
  return o;
}

// --- 6 ----------------------------------------------------------------------

Outcome reliability() {
  auto dir = scratch("reliability");
  auto config = fixture::write_fixture(dir, fixture::archive_fixture());
  for (auto s : {pipeline::Stage::Ingest, pipeline::Stage::Elicit, pipeline::Stage::Aggregate,
                 pipeline::Stage::Reliability})
    run_pipeline(config, dir / "out", s);
  auto cells = pipeline::io::read_json(dir / "out/reliability/reliability.json")["cells"];
  double worst = 1;
  std::size_t missing = 0;
  for (const auto& c : cells) {
    if (c["result"].is_null()) {
      ++missing;
      continue;
    }
    worst = std::min(worst, c["result"]["rho"].get<double>());
  }
  fs::remove_all(dir);
  return {!cells.empty() && missing == 0 && worst >= kRetestMin,
          fmt("%zu cells, %zu unavailable, min rho %.6f (>= %.3f)", cells.size(), missing, worst, kRetestMin), {}};
}

// --- 7 ----------------------------------------------------------------------

Outcome error_trends() {
  const std::vector<std::pair<std::string, double>> truth{{"gpt-3.5-turbo", 0.37}, {"gpt-4o-mini", 0.23},
                                                          {"gpt-4o", 0.06}};
  const int items = 150;
  std::map<std::string, int> covered;
  std::map<std::string, double> mean_slope, mean_se;
  int contrast_sig = 0, adjacent_sig = 0;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) * 104729);
    std::uniform_real_distribution<double> h(1, 7);
    std::normal_distribution<double> e(0, 0.8);
    ErrorTable table;
    for (const auto& [model, slope] : truth)
      for (int i = 0; i < items; ++i) {
        ErrorRow r;
        r.model = model;
        r.session_id = "s1";
        r.study_id = "study";
        r.item_id = fmt("i%03d", i);
        r.language = "English";
        r.human = h(rng);
        r.error = 0.3 + slope * r.human + e(rng);
        table.rows.push_back(r);
      }
    auto trends = fit_error_model(table).trends;
    for (const auto& s : trends.slopes)
      for (const auto& [model, slope] : truth)
        if (s.moderator == "model" && s.level == model) {
          covered[model] += std::abs(s.slope - slope) <= 2 * s.se;
          mean_slope[model] += s.slope / kSeeds;
          mean_se[model] += s.se / kSeeds;
        }
    for (const auto& c : trends.contrasts) {
      bool extreme = (c.level_a == "gpt-3.5-turbo" && c.level_b == "gpt-4o") ||
                     (c.level_a == "gpt-4o" && c.level_b == "gpt-3.5-turbo");
      bool adjacent = (c.level_a == "gpt-3.5-turbo" && c.level_b == "gpt-4o-mini") ||
                      (c.level_a == "gpt-4o-mini" && c.level_b == "gpt-3.5-turbo");
      contrast_sig += extreme && c.p < kAlpha;
      adjacent_sig += adjacent && c.p < kAlpha;
    }
  }
  Outcome o;
  o.pass = contrast_sig >= 90;
  std::string rec, cov = "seeds with the estimate within 2 SE:";
  for (const auto& [model, slope] : truth) {
    o.pass = o.pass && std::abs(mean_slope[model] - slope) <= 2 * mean_se[model];
    rec += fmt("%s %.3f (true %.2f, SE %.3f), ", model.c_str(), mean_slope[model], slope, mean_se[model]);
    cov += fmt(" %s %d", model.c_str(), covered[model]);
  }
  o.detail = fmt("mean slopes %swithin 2 SE; smallest-vs-largest p < .05 in %d/100 (>=90)", rec.c_str(),
                 contrast_sig);
  o.notes.push_back(cov);
  o.notes.push_back(fmt("gpt-3.5-turbo vs gpt-4o-mini p < .05 in %d/100", adjacent_sig));
  return o;
}

// --- 8 ----------------------------------------------------------------------

Outcome determinism() {
  auto dir = scratch("determinism");
  auto config = fixture::write_fixture(dir, fixture::archive_fixture());
  run_pipeline(config, dir / "a", pipeline::Stage::All);
  run_pipeline(config, dir / "b", pipeline::Stage::All);
  auto report_a = snapshot(dir / "a/report"), report_b = snapshot(dir / "b/report");
  bool same_report = report_a == report_b;
  bool same_tree = snapshot(dir / "a") == snapshot(dir / "b");
  fs::remove_all(dir / "b/report");
  run_pipeline(config, dir / "b", pipeline::Stage::Report);
  bool regenerated = snapshot(dir / "b/report") == report_a;
  std::size_t files = report_a.size();
  fs::remove_all(dir);
  return {same_report && regenerated,
          fmt("report files %zu, identical %s, full tree identical %s, regeneration exact %s", files,
              same_report ? "yes" : "no", same_tree ? "yes" : "no", regenerated ? "yes" : "no"),
          {}};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "worked example", 1, worked_example},
      {2, "rank oracle", 10, rank_oracle},
      {3, "LMM degeneracy and closed forms", 30, lmm_closed_forms},
      {4, "end-to-end validity recovery", 60, validity_recovery},
      {5, "substitution pattern", 300, substitution_pattern},
      {6, "reliability protocol", 30, reliability},
      {7, "error-trend recovery", 60, error_trends},
      {8, "determinism and provenance", 60, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what(), {}};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool pass = o.pass && secs <= c.budget_s;
    failed += !pass;
    std::printf("%s  %d %s: %s [%.2f s, budget %.0f s]\n", pass ? "PASS" : "FAIL", c.id, c.title, o.detail.c_str(),
                secs, c.budget_s);
    for (const auto& n : o.notes) std::printf("      %s\n", n.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
