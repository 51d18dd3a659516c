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

// Human-vs-machine comparisons: validity correlations, test-retest
// reliability and absolute-error modelling.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "normforge/aggregation.hpp"
#include "normforge/corpus.hpp"
#include "normforge/lmm.hpp"
#include "normforge/ols.hpp"
#include "normforge/stats.hpp"

namespace normforge {

using RatingKey = std::tuple<std::string, std::string, Dimension>;  // study, item, dimension

/// First session id (lexicographic) of each model in the table.
inline std::map<std::string, std::string> first_sessions(const RatingTable& table) {
  std::map<std::string, std::string> out;
  for (const auto& r : table) {
    auto [it, inserted] = out.emplace(r.model, r.session_id);
    if (!inserted && r.session_id < it->second) it->second = r.session_id;
  }
  return out;
}

/// One human/machine pair, both standardized to the analysis scale.
struct JoinedRating {
  std::string model;
  std::string session_id;
  const Stimulus* item = nullptr;
  Dimension dimension = Dimension::Familiarity;
  double human = 0;
  double machine = 0;
};

struct JoinResult {
  std::vector<JoinedRating> pairs;
  std::vector<std::string> failures;  // machine rows without a human counterpart
};

/// Joins each model's first session against the human table on
/// (study_id, item_id, dimension).
inline JoinResult join_ratings(const StudyCorpus& corpus, const RatingTable& human, const RatingTable& machine,
                               const LikertScale& to) {
  std::map<RatingKey, double> human_by_key;
  for (const auto& r : human) human_by_key[{r.study_id, r.item_id, r.dimension}] = r.rating;
  auto sessions = first_sessions(machine);
  JoinResult out;
  for (const auto& r : machine) {
    if (sessions.at(r.model) != r.session_id) continue;
    auto it = human_by_key.find({r.study_id, r.item_id, r.dimension});
    const Stimulus* item = corpus.find({r.study_id, r.item_id});
    if (it == human_by_key.end() || !item) {
      out.failures.push_back(r.model + " " + r.study_id + "/" + r.item_id + " (" + dimension_name(r.dimension) + ")");
      continue;
    }
    const auto& scale = corpus.scale(r.study_id, r.dimension);
    out.pairs.push_back({r.model, r.session_id, item, r.dimension, standardize(it->second, scale, to),
                         standardize(r.rating, scale, to)});
  }
  return out;
}

enum class ValidityGrouping { Language, Class, Subset };

inline std::string to_string(ValidityGrouping g) {
  switch (g) {
    case ValidityGrouping::Language: return "language";
    case ValidityGrouping::Class: return "class";
    case ValidityGrouping::Subset: return "subset";
  }
  return "?";
}

/// Group label of a pair under `g`; nullopt when the pair is outside it.
/// Language groups cover metaphors only; class groups split every language
/// by item class; subset groups cover tagged metaphors.
inline std::optional<std::string> group_label(const Stimulus& s, ValidityGrouping g) {
  switch (g) {
    case ValidityGrouping::Language:
      if (s.item_class != ItemClass::Metaphor) return std::nullopt;
      return s.language;
    case ValidityGrouping::Class: return s.language + "/" + class_name(s.item_class);
    case ValidityGrouping::Subset:
      if (!s.subset) return std::nullopt;
      return *s.subset;
  }
  return std::nullopt;
}

struct ValidityCell {
  ValidityGrouping grouping = ValidityGrouping::Language;
  Dimension dimension = Dimension::Familiarity;
  std::string group;
  std::string model;
  std::string session_id;
  std::size_t n = 0;
  std::optional<stats::CorrelationResult> result;  // empty when unavailable
  std::string note;
};

struct ValidityTable {
  std::vector<ValidityCell> cells;
  std::vector<std::string> notices;
};

/// Spearman correlation of human vs machine ratings per (dimension, group,
/// model). Cells with n < 3 or constant ratings are kept but marked
/// unavailable; groups with no joined pairs for a model are skipped with a
/// notice.
inline ValidityTable validity_table(const StudyCorpus& corpus, const RatingTable& human, const RatingTable& machine,
                                    ValidityGrouping grouping,
                                    const LikertScale& to = LikertScale::seven_point()) {
  auto joined = join_ratings(corpus, human, machine, to);
  ValidityTable out;
  for (const auto& f : joined.failures) out.notices.push_back("no human rating for " + f);

  using CellKey = std::tuple<Dimension, std::string, std::string>;  // dimension, group, model
  std::map<CellKey, std::pair<std::vector<double>, std::vector<double>>> cells;
  std::map<CellKey, std::string> session_of;
  std::set<std::string> models;
  for (const auto& [model, session] : first_sessions(machine)) models.insert(model);
  for (const auto& p : joined.pairs) {
    auto label = group_label(*p.item, grouping);
    if (!label) continue;
    CellKey key{p.dimension, *label, p.model};
    cells[key].first.push_back(p.human);
    cells[key].second.push_back(p.machine);
    session_of[key] = p.session_id;
  }
  // Every (dimension, group) present on the human side.
  std::set<std::pair<Dimension, std::string>> human_groups;
  for (const auto& s : corpus.stimuli()) {
    auto label = group_label(s, grouping);
    if (!label) continue;
    for (const auto& [d, norm] : s.human_means) human_groups.insert({d, *label});
  }
  for (const auto& [d, group] : human_groups) {
    for (const auto& model : models) {
      auto it = cells.find({d, group, model});
      if (it == cells.end()) {
        out.notices.push_back(dimension_name(d) + " / " + group + ": no joined ratings for model " + model +
                              "; cell skipped");
        continue;
      }
      ValidityCell cell{grouping, d, group, model, session_of[it->first], it->second.first.size(), std::nullopt, ""};
      if (cell.n < 3) {
        cell.note = "unavailable: n < 3";
      } else {
        try {
          cell.result = stats::spearman(it->second.first, it->second.second);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::Degenerate) throw;
          cell.note = "unavailable: constant ratings";
        }
      }
      out.cells.push_back(std::move(cell));
    }
  }
  return out;
}

struct RetestCell {
  Dimension dimension = Dimension::Familiarity;
  std::string language;
  std::string model;
  std::string session_a;
  std::string session_b;
  std::size_t n = 0;
  std::optional<stats::CorrelationResult> result;
  std::string note;
};

/// Spearman correlation between two sessions per (dimension, language,
/// model). Both tables must rate exactly the same (model, item, dimension)
/// keys. Ratings are standardized to `to` so multi-scale languages pool.
inline std::vector<RetestCell> test_retest(const StudyCorpus& corpus, const RatingTable& session_a,
                                           const RatingTable& session_b,
                                           const LikertScale& to = LikertScale::seven_point()) {
  using Key = std::tuple<std::string, std::string, std::string, Dimension>;
  auto index = [](const RatingTable& t) {
    std::map<Key, const RatingRow*> m;
    for (const auto& r : t) {
      auto [it, inserted] = m.emplace(Key{r.model, r.study_id, r.item_id, r.dimension}, &r);
      if (!inserted)
        fail(ErrorKind::Join, "duplicate rating for " + r.model + " " + r.study_id + "/" + r.item_id + " within a session table");
    }
    return m;
  };
  auto a = index(session_a), b = index(session_b);
  std::vector<std::string> missing;
  auto describe = [](const Key& k) {
    return std::get<0>(k) + " " + std::get<1>(k) + "/" + std::get<2>(k) + " (" + dimension_name(std::get<3>(k)) + ")";
  };
  for (const auto& [k, r] : a)
    if (!b.contains(k)) missing.push_back("missing in session b: " + describe(k));
  for (const auto& [k, r] : b)
    if (!a.contains(k)) missing.push_back("missing in session a: " + describe(k));
  if (!missing.empty()) {
    std::string msg = "session key sets differ (" + std::to_string(missing.size()) + " keys):";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += "\n  " + missing[i];
    if (missing.size() > 20) msg += "\n  ...";
    fail(ErrorKind::Join, msg);
  }
  using CellKey = std::tuple<Dimension, std::string, std::string>;
  std::map<CellKey, RetestCell> cells;
  std::map<CellKey, std::pair<std::vector<double>, std::vector<double>>> values;
  for (const auto& [k, ra] : a) {
    const auto* rb = b.at(k);
    const Stimulus* item = corpus.find({ra->study_id, ra->item_id});
    if (!item) fail(ErrorKind::Join, "rating for unknown item " + ra->study_id + "/" + ra->item_id);
    const auto& scale = corpus.scale(ra->study_id, ra->dimension);
    CellKey ck{ra->dimension, item->language, ra->model};
    auto& cell = cells[ck];
    cell.dimension = ra->dimension;
    cell.language = item->language;
    cell.model = ra->model;
    cell.session_a = ra->session_id;
    cell.session_b = rb->session_id;
    values[ck].first.push_back(standardize(ra->rating, scale, to));
    values[ck].second.push_back(standardize(rb->rating, scale, to));
  }
  std::vector<RetestCell> out;
  for (auto& [ck, cell] : cells) {
    const auto& [x, y] = values[ck];
    cell.n = x.size();
    if (cell.n < 3) {
      cell.note = "unavailable: n < 3";
    } else {
      try {
        cell.result = stats::spearman(x, y);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Degenerate) throw;
        cell.note = "unavailable: constant ratings";
      }
    }
    out.push_back(std::move(cell));
  }
  return out;
}

/// Splits a table holding several sessions per model into the first and
/// second session (lexicographic) of each model.
inline std::pair<RatingTable, RatingTable> split_sessions(const RatingTable& table) {
  std::map<std::string, std::set<std::string>> sessions;
  for (const auto& r : table) sessions[r.model].insert(r.session_id);
  RatingTable a, b;
  for (const auto& r : table) {
    const auto& s = sessions.at(r.model);
    if (s.size() < 2) continue;
    auto first = *s.begin();
    auto second = *std::next(s.begin());
    if (r.session_id == first) a.push_back(r);
    else if (r.session_id == second) b.push_back(r);
  }
  return {a, b};
}

struct ErrorRow {
  std::string model;
  std::string session_id;
  std::string study_id;
  std::string item_id;
  Dimension dimension = Dimension::Familiarity;
  std::string language;
  double human = 0;    // standardized
  double machine = 0;  // standardized
  double error = 0;    // |human - machine|
};

struct ErrorTable {
  std::vector<ErrorRow> rows;
  std::vector<std::string> join_failures;
};

inline ErrorTable absolute_error(const StudyCorpus& corpus, const RatingTable& human, const RatingTable& machine,
                                 const LikertScale& to = LikertScale::seven_point()) {
  auto joined = join_ratings(corpus, human, machine, to);
  ErrorTable out;
  out.join_failures = joined.failures;
  for (const auto& p : joined.pairs)
    out.rows.push_back({p.model, p.session_id, p.item->study_id, p.item->item_id, p.dimension, p.item->language,
                        p.human, p.machine, std::fabs(p.human - p.machine)});
  return out;
}

struct ErrorMean {
  Dimension dimension = Dimension::Familiarity;
  std::string model;
  std::size_t n = 0;
  double mean_error = 0;
};

inline std::vector<ErrorMean> mean_errors(const ErrorTable& table) {
  std::map<std::pair<Dimension, std::string>, std::pair<std::size_t, double>> acc;
  for (const auto& r : table.rows) {
    auto& a = acc[{r.dimension, r.model}];
    ++a.first;
    a.second += r.error;
  }
  std::vector<ErrorMean> out;
  for (const auto& [k, a] : acc)
    out.push_back({k.first, k.second, a.first, a.second / static_cast<double>(a.first)});
  return out;
}

inline constexpr const char* kHumanPredictor = "human_rating";

struct ErrorModel {
  stats::OlsFit ols;
  std::vector<std::string> moderators;
  stats::TrendTable trends;
  std::optional<lmm::LmmFit> study_intercept;  // same fixed part plus a per-study random intercept
  std::string study_intercept_note;
};

/// error ~ human_rating * (dimension + model), treatment coded, fitted by
/// OLS; factors with a single level are left out.
inline ErrorModel fit_error_model(const ErrorTable& table) {
  const auto n = table.rows.size();
  std::vector<double> y(n), h(n);
  std::vector<std::string> dims(n), models(n), studies(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = table.rows[i].error;
    h[i] = table.rows[i].human;
    dims[i] = dimension_name(table.rows[i].dimension);
    models[i] = table.rows[i].model;
    studies[i] = table.rows[i].study_id;
  }
  stats::DesignBuilder builder(n);
  builder.intercept().numeric(kHumanPredictor, h);
  std::vector<std::string> moderators;
  if (std::set<std::string>(dims.begin(), dims.end()).size() > 1) {
    builder.factor("dimension", dims);
    moderators.push_back("dimension");
  }
  if (std::set<std::string>(models.begin(), models.end()).size() > 1) {
    builder.factor("model", models);
    moderators.push_back("model");
  }
  for (const auto& m : moderators) builder.interaction(kHumanPredictor, m);
  auto design = builder.build();
  ErrorModel out{stats::ols_fit(y, design), moderators, {}, std::nullopt, ""};
  out.trends = stats::trend_slopes(out.ols, kHumanPredictor, moderators);
  std::set<std::string> study_levels(studies.begin(), studies.end());
  if (study_levels.size() < 2) {
    out.study_intercept_note = "study random intercept skipped: fewer than 2 studies";
  } else {
    lmm::MixedFrame frame;
    frame.y = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(n));
    frame.fixed = design;
    frame.random.push_back(lmm::make_factor("study", studies));
    try {
      out.study_intercept = lmm::lmm_fit_frame(frame, lmm::Objective::REML);
    } catch (const Error& e) {
      out.study_intercept_note = std::string("study random intercept fit failed: ") + e.what();
    }
  }
  return out;
}

}  // namespace normforge
