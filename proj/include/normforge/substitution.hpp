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

// Refit a response model with each rating source as the predictor and
// compare the fits.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "normforge/aggregation.hpp"
#include "normforge/lmm.hpp"

namespace normforge::lmm {

inline constexpr const char* kRatingPredictor = "rating";

struct SubstitutionSpec {
  std::vector<std::string> covariates;  // extra fixed covariates from the dataset
  std::vector<std::string> random_intercepts = {"subject", "item"};
  Objective objective = Objective::REML;  // for inference; AIC always uses ML refits
  std::string reference_source = "human";
};

struct SubstitutionRow {
  std::string source;
  std::size_t n_obs = 0;
  std::size_t n_items = 0;
  double beta = 0;
  double se = 0;
  double t = 0;
  double p = 1;
  double df = 0;
  double aic_ml = 0;
  double log_likelihood_ml = 0;
  double r2_marginal = 0;
  double r2_conditional = 0;
  std::optional<bool> same_direction;  // vs. the reference source
  LmmFit fit;
  LmmFit fit_ml;
};

struct SubstitutionTable {
  std::vector<SubstitutionRow> rows;  // in source order
  std::vector<std::string> coverage_gaps;
  std::string best_aic_source;
};

/// Item ratings of one source keyed by item_id.
using ItemRatings = std::map<std::string, double>;

inline ItemRatings item_ratings(const RatingTable& table, const std::string& model, const std::string& session_id,
                                const std::string& study_id, Dimension dimension) {
  ItemRatings out;
  for (const auto& r : table)
    if (r.model == model && r.session_id == session_id && r.study_id == study_id && r.dimension == dimension)
      out[r.item_id] = r.rating;
  return out;
}

/// Fits one model per rating source with identical structure. Items not
/// covered by every source are listed and dropped from all fits so that
/// the sources share one data set.
inline SubstitutionTable substitution_compare(const ResponseDataset& data,
                                              const std::vector<std::pair<std::string, ItemRatings>>& sources,
                                              const SubstitutionSpec& spec) {
  if (sources.empty()) fail(ErrorKind::InvalidArgument, "no rating sources given");
  std::set<std::string> items;
  for (const auto& o : data.observations) items.insert(o.item_id);
  SubstitutionTable out;
  std::set<std::string> shared = items;
  for (const auto& [name, ratings] : sources) {
    for (const auto& item : items) {
      if (!ratings.contains(item)) {
        out.coverage_gaps.push_back(name + ": no rating for item '" + item + "'");
        shared.erase(item);
      }
    }
  }
  if (shared.empty()) fail(ErrorKind::Join, "rating sources share no items with the response data");

  ResponseDataset base;
  base.measure_kind = data.measure_kind;
  base.transform = data.transform;
  for (const auto& o : data.observations)
    if (shared.contains(o.item_id)) base.observations.push_back(o);

  LmmSpec lmm_spec;
  lmm_spec.fixed = {kRatingPredictor};
  for (const auto& c : spec.covariates) lmm_spec.fixed.push_back(c);
  lmm_spec.random_intercepts = spec.random_intercepts;

  std::optional<double> reference_beta;
  for (const auto& [name, ratings] : sources) {
    ResponseDataset ds = base;
    for (auto& o : ds.observations) o.covariates[kRatingPredictor] = ratings.at(o.item_id);
    SubstitutionRow row;
    row.source = name;
    row.n_obs = ds.observations.size();
    row.n_items = shared.size();
    lmm_spec.objective = spec.objective;
    row.fit = lmm_fit(ds, lmm_spec);
    lmm_spec.objective = Objective::ML;
    row.fit_ml = spec.objective == Objective::ML ? row.fit : lmm_fit(ds, lmm_spec);
    auto j = row.fit.index(kRatingPredictor);
    row.beta = row.fit.beta(j);
    row.se = row.fit.se(j);
    row.t = row.fit.t_values(j);
    row.p = row.fit.p_values(j);
    row.df = row.fit.df;
    row.aic_ml = row.fit_ml.aic;
    row.log_likelihood_ml = row.fit_ml.log_likelihood;
    row.r2_marginal = row.fit.r2_marginal;
    row.r2_conditional = row.fit.r2_conditional;
    if (name == spec.reference_source) reference_beta = row.beta;
    out.rows.push_back(std::move(row));
  }
  std::vector<const LmmFit*> ml_fits;
  for (const auto& r : out.rows) ml_fits.push_back(&r.fit_ml);
  check_comparable(ml_fits);
  double best = std::numeric_limits<double>::infinity();
  for (auto& r : out.rows) {
    if (reference_beta && r.source != spec.reference_source)
      r.same_direction = (r.beta > 0) == (*reference_beta > 0);
    if (r.aic_ml < best) {
      best = r.aic_ml;
      out.best_aic_source = r.source;
    }
  }
  return out;
}

}  // namespace normforge::lmm
