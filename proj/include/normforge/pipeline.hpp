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

// Stage runner: ingest, elicit, aggregate, validate, substitute,
// reliability, error-analysis, report. Every stage reads its inputs from the
// output directory and writes its results there, so stages can be rerun
// individually and `report` never re-elicits.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "normforge/aggregation.hpp"
#include "normforge/config.hpp"
#include "normforge/corpus.hpp"
#include "normforge/csv.hpp"
#include "normforge/elicitation.hpp"
#include "normforge/error.hpp"
#include "normforge/hash.hpp"
#include "normforge/http_backend.hpp"
#include "normforge/mock_backend.hpp"
#include "normforge/numeric.hpp"
#include "normforge/plots.hpp"
#include "normforge/substitution.hpp"
#include "normforge/validation.hpp"

#ifndef NORMFORGE_VERSION
#define NORMFORGE_VERSION "0.0.0"
#endif

namespace normforge::pipeline {

namespace fs = std::filesystem;

enum class Stage { Ingest, Elicit, Aggregate, Validate, Substitute, Reliability, ErrorAnalysis, Report, All };

inline constexpr Stage kStageOrder[] = {Stage::Ingest,     Stage::Elicit,      Stage::Aggregate,
                                        Stage::Validate,   Stage::Substitute,  Stage::Reliability,
                                        Stage::ErrorAnalysis, Stage::Report};

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::Elicit: return "elicit";
    case Stage::Aggregate: return "aggregate";
    case Stage::Validate: return "validate";
    case Stage::Substitute: return "substitute";
    case Stage::Reliability: return "reliability";
    case Stage::ErrorAnalysis: return "error-analysis";
    case Stage::Report: return "report";
    case Stage::All: return "all";
  }
  return "?";
}

inline std::optional<Stage> parse_stage(const std::string& text) {
  for (Stage s : kStageOrder)
    if (stage_name(s) == text) return s;
  if (text == "all") return Stage::All;
  return std::nullopt;
}

enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitConfig = 2,
  kExitMissingPrerequisite = 3,
  kExitElicitation = 4,
  kExitAnalysis = 5,
  kExitData = 6,
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::InvalidArgument: return kExitConfig;
    case ErrorKind::MissingPrerequisite: return kExitMissingPrerequisite;
    case ErrorKind::Retryable:
    case ErrorKind::Protocol:
    case ErrorKind::Credential:
    case ErrorKind::Integrity: return kExitElicitation;
    case ErrorKind::Unrateable:
    case ErrorKind::Degenerate:
    case ErrorKind::RankDeficient:
    case ErrorKind::NonConvergence:
    case ErrorKind::InvalidComparison: return kExitAnalysis;
    case ErrorKind::Ingest:
    case ErrorKind::Join: return kExitData;
  }
  return kExitOther;
}

class StageFailure : public std::runtime_error {
 public:
  StageFailure(Stage stage, const Error& cause)
      : std::runtime_error("stage '" + stage_name(stage) + "': " + cause.what()), stage_(stage), kind_(cause.kind()) {}
  Stage stage() const { return stage_; }
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return exit_code_for(kind_); }

 private:
  Stage stage_;
  ErrorKind kind_;
};

// ---------------------------------------------------------------------------
// Scope (--only)
// ---------------------------------------------------------------------------

struct Scope {
  std::string only;
  std::optional<std::string> study;
  std::optional<Dimension> dimension;
  std::optional<std::string> model;

  bool has_study(const std::string& s) const { return !study || *study == s; }
  bool has_dimension(Dimension d) const { return !dimension || *dimension == d; }
  bool has_model(const std::string& m) const { return !model || *model == m; }
  bool has_row(const RatingRow& r) const {
    return has_study(r.study_id) && has_dimension(r.dimension) && (r.model == "human" || has_model(r.model));
  }
};

inline Scope make_scope(const RunConfig& cfg, const std::string& only) {
  Scope scope;
  scope.only = only;
  if (only.empty()) return scope;
  for (const auto& [key, text] : cfg.instructions)
    if (key.first == only) {
      scope.study = only;
      return scope;
    }
  if (auto d = parse_dimension(only)) {
    scope.dimension = d;
    return scope;
  }
  if (cfg.model(only)) {
    scope.model = only;
    return scope;
  }
  fail(ErrorKind::Config, "--only '" + only + "' matches no study, dimension or model in the config");
}

/// Copy of `corpus` keeping the (item, dimension) ratings inside `scope`.
inline StudyCorpus restrict_corpus(const StudyCorpus& corpus, const InstructionSet& instructions, const Scope& scope) {
  InstructionSet kept;
  for (const auto& [key, text] : instructions)
    if (scope.has_study(key.first) && scope.has_dimension(key.second)) kept[key] = text;
  CorpusBuilder builder(kept);
  for (const auto& s : corpus.stimuli()) {
    if (!scope.has_study(s.study_id)) continue;
    for (const auto& [d, norm] : s.human_means)
      if (scope.has_dimension(d)) builder.add(s, d, norm, corpus.scale(s.study_id, d));
  }
  return std::move(builder).build();
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

namespace io {

inline void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Config, "cannot write '" + path.string() + "'");
  out << content;
  if (!out) fail(ErrorKind::Config, "write failed for '" + path.string() + "'");
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingPrerequisite, "cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_json(const fs::path& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

inline Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::Ingest, path.string() + ": " + e.what());
  }
}

template <class Fn>
void write_csv(const fs::path& path, const std::vector<std::string>& header, Fn&& rows) {
  std::ostringstream out;
  csv::write_row(out, header);
  rows(out);
  write_file(path, out.str());
}

inline std::string num(double v) { return numeric::format_double(v); }

}  // namespace io

inline Json correlation_json(const std::optional<stats::CorrelationResult>& r) {
  if (!r) return nullptr;
  return {{"rho", r->rho}, {"n", r->n}, {"p_value", r->p_value}, {"band", stats::to_string(r->band)}};
}

inline std::string slug(const std::string& text) {
  std::string out;
  for (unsigned char c : text) out.push_back(std::isalnum(c) ? static_cast<char>(std::tolower(c)) : '_');
  return out;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

struct RunOptions {
  std::string only;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> output_dir;
  std::function<void(const std::string&)> log;
  /// Replaces the configured backend (tests).
  std::shared_ptr<Backend> backend;
  RetryPolicy retry;
};

inline const char* kStandardizationNote =
    "Human item means are mapped onto the target scale with the endpoint-preserving affine map before "
    "cross-study analyses; per-participant ratings are not used.";
inline const char* kDfNote =
    "Mixed-model t tests use df = n - rank(X) - number of variance parameters, a conservative substitute for "
    "Satterthwaite degrees of freedom.";
inline const char* kErrorModelNote =
    "The error model is fitted by OLS; a variant with a per-study random intercept is reported alongside.";

class Pipeline {
 public:
  Pipeline(RunConfig config, RunOptions options = {}) : cfg_(std::move(config)), opts_(std::move(options)) {
    if (opts_.seed) cfg_.seed = *opts_.seed;
    if (opts_.output_dir) cfg_.output_dir = *opts_.output_dir;
    scope_ = make_scope(cfg_, opts_.only);
  }

  const RunConfig& config() const { return cfg_; }
  const fs::path& out() const { return cfg_.output_dir; }
  fs::path path(const std::string& rel) const { return cfg_.output_dir / rel; }

  /// Runs one stage, or all of them in order, then refreshes the manifest.
  void run(Stage stage) {
    if (stage == Stage::All) {
      for (Stage s : kStageOrder) run_one(s);
    } else {
      run_one(stage);
    }
    try {
      write_manifest();
    } catch (const Error& e) {
      throw StageFailure(stage, e);
    }
  }

 private:
  RunConfig cfg_;
  RunOptions opts_;
  Scope scope_;

  void log(const std::string& msg) const {
    if (opts_.log) opts_.log(msg);
  }

  void run_one(Stage s) {
    log("[" + stage_name(s) + "] start");
    try {
      switch (s) {
        case Stage::Ingest: ingest(); break;
        case Stage::Elicit: elicit(); break;
        case Stage::Aggregate: aggregate(); break;
        case Stage::Validate: validate(); break;
        case Stage::Substitute: substitute(); break;
        case Stage::Reliability: reliability(); break;
        case Stage::ErrorAnalysis: error_analysis(); break;
        case Stage::Report: report(); break;
        case Stage::All: break;
      }
    } catch (const Error& e) {
      throw StageFailure(s, e);
    } catch (const fs::filesystem_error& e) {
      throw StageFailure(s, Error(ErrorKind::Config, e.what()));
    }
    log("[" + stage_name(s) + "] done");
  }

  void require(const std::string& rel, Stage producer) const {
    if (!fs::exists(path(rel)))
      fail(ErrorKind::MissingPrerequisite,
           rel + " not found in " + out().string() + "; run '" + stage_name(producer) + "' first");
  }

  StudyCorpus ingested_corpus() const {
    require("ingest/corpus.csv", Stage::Ingest);
    return restrict_corpus(load_corpus(path("ingest/corpus.csv").string(), cfg_.instructions), cfg_.instructions,
                           scope_);
  }

  RatingTable machine_ratings() const {
    require("aggregate/ratings.csv", Stage::Aggregate);
    RatingTable out;
    for (auto& r : read_rating_table(path("aggregate/ratings.csv").string()))
      if (scope_.has_row(r)) out.push_back(std::move(r));
    return out;
  }

  std::vector<const ModelConfig*> models_in_scope() const {
    std::vector<const ModelConfig*> out;
    for (const auto& m : cfg_.models)
      if (scope_.has_model(m.params.model_name)) out.push_back(&m);
    return out;
  }

  std::vector<Dimension> dimensions_of(const StudyCorpus& corpus) const {
    std::set<Dimension> dims;
    for (const auto& s : corpus.stimuli())
      for (const auto& [d, norm] : s.human_means) dims.insert(d);
    return {dims.begin(), dims.end()};
  }

  Json scope_json() const { return scope_.only.empty() ? Json(nullptr) : Json(scope_.only); }

  // --- ingest --------------------------------------------------------------

  void ingest() {
    auto corpus = load_corpus(cfg_.corpus.string(), cfg_.instructions);
    Json studies = Json::object();
    for (const auto& [id, study] : corpus.studies()) {
      Json dims = Json::object();
      for (const auto& [d, scale] : study.scales) {
        std::size_t n = 0;
        for (const auto& s : corpus.stimuli())
          if (s.study_id == id && s.human_means.contains(d)) ++n;
        dims[dimension_name(d)] = {{"scale", scale.label()}, {"n_items", n}};
      }
      studies[id] = dims;
    }
    Json partitions = Json::object();
    for (auto [name, key] : {std::pair{"class", PartitionKey::Class}, std::pair{"subset", PartitionKey::Subset},
                             std::pair{"language", PartitionKey::Language},
                             std::pair{"dimension", PartitionKey::Dimension}}) {
      Json groups = Json::object();
      for (const auto& g : partition(corpus, key)) groups[g.name] = g.members.size();
      partitions[name] = groups;
    }
    Json lint = Json::array();
    for (const auto& [key, text] : cfg_.instructions) {
      for (const auto& w : lint_instructions(text, cfg_.lint_patterns)) {
        log("[ingest] warning: instructions for '" + key.first + "', " + dimension_name(key.second) +
            " contain practical-detail text: \"" + w.sentence + "\"");
        lint.push_back({{"study_id", key.first},
                        {"dimension", dimension_name(key.second)},
                        {"pattern", w.pattern},
                        {"sentence", w.sentence}});
      }
    }
    std::ostringstream corpus_csv;
    write_corpus(corpus, corpus_csv);
    io::write_file(path("ingest/corpus.csv"), corpus_csv.str());
    std::ostringstream human_csv;
    write_rating_table(human_rating_table(corpus), human_csv);
    io::write_file(path("ingest/human_ratings.csv"), human_csv.str());
    io::write_json(path("ingest/ingest.json"), {{"n_items", corpus.size()},
                                                {"studies", studies},
                                                {"partitions", partitions},
                                                {"lint_warnings", lint},
                                                {"target_scale", cfg_.target_scale.label()},
                                                {"notes", Json::array({kStandardizationNote})}});
  }

  // --- elicit --------------------------------------------------------------

  std::shared_ptr<Backend> make_backend(const StudyCorpus& full_corpus) const {
    if (opts_.backend) return opts_.backend;
    if (cfg_.backend.kind == BackendKind::Live)
      return std::make_shared<HttpBackend>(cfg_.backend.endpoint, api_key_from_env(),
                                           std::chrono::seconds(cfg_.backend.timeout_seconds));
    auto mock = std::make_shared<MockBackend>();
    for (const auto& m : cfg_.models)
      mock->add_model(m.params.model_name,
                      mock_config_from_corpus(full_corpus, m.mock_target_rho,
                                              cfg_.seed ^ hash::fnv1a64(m.params.model_name), cfg_.target_scale));
    return mock;
  }

  void elicit() {
    require("ingest/corpus.csv", Stage::Ingest);
    auto full = load_corpus(path("ingest/corpus.csv").string(), cfg_.instructions);
    auto corpus = restrict_corpus(full, cfg_.instructions, scope_);
    auto backend = make_backend(full);
    fs::create_directories(path("elicit"));
    RecordCache cache(path("elicit/cache.jsonl").string());
    SessionOptions options;
    options.prompt = cfg_.prompt;
    options.retry = opts_.retry;
    Json runs = Json::array();
    std::vector<std::string> failures;
    std::optional<ErrorKind> failure_kind;
    for (const auto* m : models_in_scope()) {
      for (const auto& session : cfg_.sessions) {
        auto params = m->params;
        params.session_id = session;
        for (Dimension d : dimensions_of(corpus)) {
          auto result = run_session(corpus, d, params, *backend, cache, options);
          Json failed = Json::array();
          for (const auto& f : result.failures) {
            auto msg = params.model_name + " " + session + " " + dimension_name(d) + " " + f.item.str() + ": " +
                       f.message;
            failures.push_back(msg);
            if (!failure_kind) failure_kind = f.kind;
            failed.push_back({{"item", f.item.str()}, {"kind", to_string(f.kind)}, {"message", f.message}});
          }
          runs.push_back({{"model", params.model_name},
                          {"session_id", session},
                          {"dimension", dimension_name(d)},
                          {"records", result.records.size()},
                          {"failures", failed}});
          log("[elicit] " + params.model_name + " " + session + " " + dimension_name(d) + ": " +
              std::to_string(result.records.size()) + " records, " + std::to_string(result.cache_hits) +
              " from cache, " + std::to_string(result.failures.size()) + " failed");
        }
      }
    }
    io::write_json(path("elicit/elicit.json"),
                   {{"backend", cfg_.backend.kind == BackendKind::Mock ? "mock" : "live"},
                    {"scope", scope_json()},
                    {"runs", runs},
                    {"cache_records", cache.size()}});
    if (!failures.empty()) {
      std::string msg = std::to_string(failures.size()) + " item(s) failed:";
      for (std::size_t i = 0; i < failures.size() && i < 20; ++i) msg += "\n  " + failures[i];
      fail(*failure_kind == ErrorKind::Credential ? ErrorKind::Credential : ErrorKind::Protocol, msg);
    }
  }

  // --- aggregate -----------------------------------------------------------

  void aggregate() {
    auto corpus = ingested_corpus();
    require("elicit/cache.jsonl", Stage::Elicit);
    RecordCache cache(path("elicit/cache.jsonl").string());
    std::vector<ElicitationRecord> records;
    std::vector<std::string> missing;
    for (const auto* m : models_in_scope()) {
      for (const auto& session : cfg_.sessions) {
        auto params = m->params;
        params.session_id = session;
        for (Dimension d : dimensions_of(corpus)) {
          for (const auto& s : corpus.stimuli()) {
            if (!s.human_means.contains(d)) continue;
            auto prompt = build_prompt(corpus, s, d, corpus.scale(s.study_id, d), cfg_.prompt);
            auto key = record_key(params, prompt, {s.key(), d});
            if (auto r = cache.get(key)) records.push_back(std::move(*r));
            else missing.push_back(params.model_name + " " + session + " " + dimension_name(d) + " " + s.key().str());
          }
        }
      }
    }
    if (!missing.empty()) {
      std::string msg = std::to_string(missing.size()) + " record(s) missing from the cache; run 'elicit' first:";
      for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += "\n  " + missing[i];
      fail(ErrorKind::MissingPrerequisite, msg);
    }
    auto result = aggregate_session(records, corpus);
    std::ostringstream ratings;
    write_rating_table(result.table, ratings);
    io::write_file(path("aggregate/ratings.csv"), ratings.str());
    io::write_csv(path("aggregate/unrateable.csv"), {"model", "session_id", "study_id", "item_id", "dimension", "reason"},
                  [&](std::ostream& out) {
                    for (const auto& u : result.unrateable)
                      csv::write_row(out, {u.key.model, u.key.session_id, u.key.study_id, u.key.item_id,
                                           dimension_name(u.key.dimension), u.reason});
                  });
    std::size_t renormalized = 0;
    for (const auto& r : result.table)
      if (!r.dropped.empty()) ++renormalized;
    Json notes = Json::array();
    if (renormalized > 0)
      notes.push_back(std::to_string(renormalized) +
                      " rating(s) renormalized over valid candidates after dropping non-numeric or out-of-range "
                      "tokens (see the dropped column of ratings.csv)");
    io::write_json(path("aggregate/aggregate.json"), {{"scope", scope_json()},
                                                      {"ratings", result.table.size()},
                                                      {"unrateable", result.unrateable.size()},
                                                      {"renormalized", renormalized},
                                                      {"notes", notes}});
  }

  // --- validate ------------------------------------------------------------

  void validate() {
    auto corpus = ingested_corpus();
    auto machine = machine_ratings();
    if (!cfg_.analyses.validity) {
      log("[validate] disabled in config");
      return;
    }
    auto human = human_rating_table(corpus);
    Json groupings = Json::object();
    Json notices = Json::array();
    std::ostringstream out;
    csv::write_row(out, {"grouping", "dimension", "group", "model", "session_id", "n", "rho", "p_value", "band", "note"});
    for (auto grouping : {ValidityGrouping::Language, ValidityGrouping::Class, ValidityGrouping::Subset}) {
      auto table = validity_table(corpus, human, machine, grouping, cfg_.target_scale);
      Json cells = Json::array();
      for (const auto& c : table.cells) {
        cells.push_back({{"dimension", dimension_name(c.dimension)},
                         {"group", c.group},
                         {"model", c.model},
                         {"session_id", c.session_id},
                         {"n", c.n},
                         {"result", correlation_json(c.result)},
                         {"note", c.note}});
        csv::write_row(out, {to_string(grouping), dimension_name(c.dimension), c.group, c.model, c.session_id,
                             std::to_string(c.n), c.result ? io::num(c.result->rho) : "",
                             c.result ? io::num(c.result->p_value) : "",
                             c.result ? stats::to_string(c.result->band) : "", c.note});
      }
      for (const auto& n : table.notices) notices.push_back(to_string(grouping) + ": " + n);
      groupings[to_string(grouping)] = cells;
    }
    io::write_file(path("validate/validity.csv"), out.str());
    io::write_json(path("validate/validity.json"), {{"scope", scope_json()},
                                                    {"target_scale", cfg_.target_scale.label()},
                                                    {"method", "Spearman rank correlation, first session per model"},
                                                    {"groupings", groupings},
                                                    {"notices", notices},
                                                    {"notes", Json::array({kStandardizationNote})}});
  }

  // --- reliability ---------------------------------------------------------

  void reliability() {
    auto corpus = ingested_corpus();
    auto machine = machine_ratings();
    if (!cfg_.analyses.reliability) {
      log("[reliability] disabled in config");
      return;
    }
    Json cells = Json::array();
    Json notices = Json::array();
    std::ostringstream out;
    csv::write_row(out, {"dimension", "language", "model", "session_a", "session_b", "n", "rho", "p_value", "band",
                         "note"});
    if (cfg_.sessions.size() < 2) {
      notices.push_back("fewer than two sessions configured; test-retest not computed");
    } else {
      auto [a, b] = split_sessions(machine);
      for (const auto& c : test_retest(corpus, a, b, cfg_.target_scale)) {
        cells.push_back({{"dimension", dimension_name(c.dimension)},
                         {"language", c.language},
                         {"model", c.model},
                         {"session_a", c.session_a},
                         {"session_b", c.session_b},
                         {"n", c.n},
                         {"result", correlation_json(c.result)},
                         {"note", c.note}});
        csv::write_row(out, {dimension_name(c.dimension), c.language, c.model, c.session_a, c.session_b,
                             std::to_string(c.n), c.result ? io::num(c.result->rho) : "",
                             c.result ? io::num(c.result->p_value) : "",
                             c.result ? stats::to_string(c.result->band) : "", c.note});
      }
    }
    io::write_file(path("reliability/reliability.csv"), out.str());
    io::write_json(path("reliability/reliability.json"),
                   {{"scope", scope_json()}, {"sessions", cfg_.sessions}, {"cells", cells}, {"notices", notices}});
  }

  // --- substitute ----------------------------------------------------------

  static Json fit_json(const lmm::LmmFit& fit) {
    Json fixed = Json::array();
    for (std::size_t i = 0; i < fit.names.size(); ++i) {
      auto k = static_cast<Eigen::Index>(i);
      fixed.push_back({{"term", fit.names[i]},
                       {"estimate", fit.beta(k)},
                       {"se", fit.se(k)},
                       {"t", fit.t_values(k)},
                       {"p", fit.p_values(k)}});
    }
    Json variance = Json::object();
    for (const auto& [name, v] : fit.variance_components)
      variance[name] = {{"variance", v}, {"at_boundary", fit.at_boundary.at(name)}};
    return {{"objective", lmm::to_string(fit.objective)},
            {"n", fit.n},
            {"df", fit.df},
            {"fixed", fixed},
            {"random_intercepts", variance},
            {"residual_variance", fit.residual_variance},
            {"deviance", fit.deviance},
            {"log_likelihood", fit.log_likelihood},
            {"aic", fit.aic},
            {"r2_marginal", fit.r2_marginal},
            {"r2_conditional", fit.r2_conditional},
            {"iterations", fit.iterations}};
  }

  void substitute() {
    auto corpus = ingested_corpus();
    auto machine = machine_ratings();
    auto human = human_rating_table(corpus);
    auto sessions = first_sessions(machine);
    Json analyses = Json::array();
    std::ostringstream out;
    csv::write_row(out, {"analysis", "subset", "source", "n_obs", "n_items", "beta", "se", "t", "p", "df", "aic_ml",
                         "log_likelihood_ml", "r2_marginal", "r2_conditional", "same_direction", "best_aic"});
    for (const auto& sa : cfg_.analyses.substitution) {
      if (!scope_.has_study(sa.study_id) || !scope_.has_dimension(sa.dimension)) continue;
      if (!corpus.studies().contains(sa.study_id))
        fail(ErrorKind::Config, "substitution '" + sa.name + "': unknown study '" + sa.study_id + "'");
      if (!fs::exists(sa.responses))
        fail(ErrorKind::MissingPrerequisite,
             "substitution '" + sa.name + "': response file '" + sa.responses.string() + "' not found");
      auto data = lmm::load_response_dataset(sa.responses.string(), sa.measure_kind, sa.transform);
      std::vector<std::pair<std::string, lmm::ItemRatings>> sources;
      sources.emplace_back("human", lmm::item_ratings(human, "human", "", sa.study_id, sa.dimension));
      for (const auto& [model, session] : sessions)
        sources.emplace_back(model, lmm::item_ratings(machine, model, session, sa.study_id, sa.dimension));
      lmm::SubstitutionSpec spec;
      spec.covariates = sa.covariates;
      spec.random_intercepts = sa.random_intercepts;
      spec.objective = sa.objective;

      std::vector<std::pair<std::string, std::optional<std::string>>> splits = {{"all", std::nullopt}};
      if (sa.split_by_subset) {
        std::set<std::string> subsets;
        for (const auto& s : corpus.stimuli())
          if (s.study_id == sa.study_id && s.subset) subsets.insert(*s.subset);
        for (const auto& s : subsets) splits.emplace_back(s, s);
      }
      for (const auto& [label, subset] : splits) {
        auto part = data;
        if (subset) {
          std::set<std::string> members;
          for (const auto& s : corpus.stimuli())
            if (s.study_id == sa.study_id && s.subset == subset) members.insert(s.item_id);
          std::erase_if(part.observations, [&](const lmm::Observation& o) { return !members.contains(o.item_id); });
        }
        auto where = "substitution '" + sa.name + "' (" + label + ")";
        lmm::SubstitutionTable table;
        try {
          table = lmm::substitution_compare(part, sources, spec);
        } catch (const Error& e) {
          fail(e.kind(), where + ": " + e.what());
        }
        Json rows = Json::array();
        for (const auto& r : table.rows) {
          std::string same = r.same_direction ? (*r.same_direction ? "yes" : "no") : "";
          csv::write_row(out, {sa.name, label, r.source, std::to_string(r.n_obs), std::to_string(r.n_items),
                               io::num(r.beta), io::num(r.se), io::num(r.t), io::num(r.p), io::num(r.df),
                               io::num(r.aic_ml), io::num(r.log_likelihood_ml), io::num(r.r2_marginal),
                               io::num(r.r2_conditional), same, r.source == table.best_aic_source ? "yes" : ""});
          rows.push_back({{"source", r.source},
                          {"n_obs", r.n_obs},
                          {"n_items", r.n_items},
                          {"beta", r.beta},
                          {"se", r.se},
                          {"t", r.t},
                          {"p", r.p},
                          {"band", stats::to_string(stats::band_for(r.p))},
                          {"df", r.df},
                          {"aic_ml", r.aic_ml},
                          {"log_likelihood_ml", r.log_likelihood_ml},
                          {"r2_marginal", r.r2_marginal},
                          {"r2_conditional", r.r2_conditional},
                          {"same_direction", r.same_direction ? Json(*r.same_direction) : Json(nullptr)},
                          {"fit", fit_json(r.fit)},
                          {"fit_ml", fit_json(r.fit_ml)}});
        }
        analyses.push_back({{"analysis", sa.name},
                            {"subset", label},
                            {"study_id", sa.study_id},
                            {"dimension", dimension_name(sa.dimension)},
                            {"measure_kind", sa.measure_kind},
                            {"transform", lmm::to_string(sa.transform)},
                            {"objective", lmm::to_string(sa.objective)},
                            {"rows", rows},
                            {"coverage_gaps", table.coverage_gaps},
                            {"best_aic_source", table.best_aic_source}});
      }
    }
    io::write_file(path("substitute/substitution.csv"), out.str());
    io::write_json(path("substitute/substitution.json"),
                   {{"scope", scope_json()},
                    {"predictor", lmm::kRatingPredictor},
                    {"analyses", analyses},
                    {"notes", Json::array({kDfNote, "AIC and log-likelihood come from ML refits; inference uses the "
                                                    "configured objective."})}});
  }

  // --- error analysis ------------------------------------------------------

  void error_analysis() {
    auto corpus = ingested_corpus();
    auto machine = machine_ratings();
    if (!cfg_.analyses.error_analysis) {
      log("[error-analysis] disabled in config");
      return;
    }
    auto human = human_rating_table(corpus);
    auto table = absolute_error(corpus, human, machine, cfg_.target_scale);
    std::erase_if(table.rows, [&](const ErrorRow& r) {
      const auto* s = corpus.find({r.study_id, r.item_id});
      return !s || s->item_class != ItemClass::Metaphor;
    });
    io::write_csv(path("error-analysis/absolute_error.csv"),
                  {"model", "session_id", "study_id", "item_id", "dimension", "language", "human", "machine", "error"},
                  [&](std::ostream& out) {
                    for (const auto& r : table.rows)
                      csv::write_row(out, {r.model, r.session_id, r.study_id, r.item_id, dimension_name(r.dimension),
                                           r.language, io::num(r.human), io::num(r.machine), io::num(r.error)});
                  });
    auto means = mean_errors(table);
    io::write_csv(path("error-analysis/error_means.csv"), {"dimension", "model", "n", "mean_error"},
                  [&](std::ostream& out) {
                    for (const auto& m : means)
                      csv::write_row(out, {dimension_name(m.dimension), m.model, std::to_string(m.n),
                                           io::num(m.mean_error)});
                  });
    if (table.rows.empty()) fail(ErrorKind::Degenerate, "no metaphor ratings to analyse");
    auto model = fit_error_model(table);
    Json coefficients = Json::array();
    for (std::size_t i = 0; i < model.ols.names.size(); ++i) {
      auto k = static_cast<Eigen::Index>(i);
      coefficients.push_back({{"term", model.ols.names[i]},
                              {"estimate", model.ols.coefficients(k)},
                              {"se", model.ols.standard_errors(k)},
                              {"t", model.ols.t_values(k)},
                              {"p", model.ols.p_values(k)}});
    }
    Json factors = Json::object();
    for (const auto& [name, info] : model.ols.factors) factors[name] = info.levels;
    Json slopes = Json::array();
    std::ostringstream trends;
    csv::write_row(trends, {"kind", "moderator", "level_a", "level_b", "estimate", "se", "t", "p"});
    for (const auto& s : model.trends.slopes) {
      slopes.push_back({{"moderator", s.moderator},
                        {"level", s.level},
                        {"slope", s.slope},
                        {"se", s.se},
                        {"t", s.t},
                        {"p", s.p}});
      csv::write_row(trends, {"slope", s.moderator, s.level, "", io::num(s.slope), io::num(s.se), io::num(s.t),
                              io::num(s.p)});
    }
    Json contrasts = Json::array();
    for (const auto& c : model.trends.contrasts) {
      contrasts.push_back({{"moderator", c.moderator},
                           {"level_a", c.level_a},
                           {"level_b", c.level_b},
                           {"delta", c.delta},
                           {"se", c.se},
                           {"t", c.t},
                           {"p", c.p}});
      csv::write_row(trends, {"contrast", c.moderator, c.level_a, c.level_b, io::num(c.delta), io::num(c.se),
                              io::num(c.t), io::num(c.p)});
    }
    io::write_file(path("error-analysis/trends.csv"), trends.str());
    Json formula = std::string("error ~ ") + kHumanPredictor;
    for (const auto& m : model.moderators) formula = formula.get<std::string>() + " * " + m;
    io::write_json(path("error-analysis/error_model.json"),
                   {{"scope", scope_json()},
                    {"formula", formula},
                    {"items", "metaphors"},
                    {"target_scale", cfg_.target_scale.label()},
                    {"ols",
                     {{"coefficients", coefficients},
                      {"factors", factors},
                      {"n", model.ols.n},
                      {"residual_df", model.ols.residual_df},
                      {"r_squared", model.ols.r_squared},
                      {"log_likelihood", model.ols.log_likelihood},
                      {"aic", model.ols.aic}}},
                    {"trends", {{"focal", model.trends.focal}, {"df", model.trends.df}, {"slopes", slopes},
                                {"contrasts", contrasts}}},
                    {"study_intercept", model.study_intercept ? fit_json(*model.study_intercept) : Json(nullptr)},
                    {"study_intercept_note", model.study_intercept_note},
                    {"join_failures", table.join_failures},
                    {"notes", Json::array({kErrorModelNote, "Slope contrasts are not adjusted for multiplicity."})}});
  }

  // --- report --------------------------------------------------------------

  Json optional_json(const std::string& rel, bool enabled, Stage producer) const {
    if (!enabled) return nullptr;
    require(rel, producer);
    return io::read_json(path(rel));
  }

  std::pair<std::int64_t, std::int64_t> timestamp_range(std::size_t& count) const {
    count = 0;
    std::int64_t lo = 0, hi = 0;
    std::ifstream in(path("elicit/cache.jsonl"), std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto ts = Json::parse(line).at("timestamp").get<std::int64_t>();
      lo = count == 0 ? ts : std::min(lo, ts);
      hi = count == 0 ? ts : std::max(hi, ts);
      ++count;
    }
    return {lo, hi};
  }

  Json provenance() const {
    std::size_t count = 0;
    auto [lo, hi] = timestamp_range(count);
    Json models = Json::array();
    for (const auto& m : cfg_.models) {
      Json entry = {{"name", m.params.model_name},
                    {"temperature", m.params.temperature},
                    {"max_output_tokens", m.params.max_output_tokens},
                    {"top_logprobs", m.params.top_logprob_count}};
      if (cfg_.backend.kind == BackendKind::Mock) entry["mock_target_rho"] = m.mock_target_rho;
      models.push_back(entry);
    }
    auto cache = path("elicit/cache.jsonl");
    return {{"software", {{"name", "norm-forge"}, {"version", NORMFORGE_VERSION}}},
            {"config", {{"file", cfg_.source.filename().string()}, {"sha256", hash::sha256_hex(cfg_.source_bytes)}}},
            {"seed", cfg_.seed},
            {"scope", scope_json()},
            {"backend", cfg_.backend.kind == BackendKind::Mock ? "mock" : "live"},
            {"models", models},
            {"sessions", cfg_.sessions},
            {"cache", {{"records", count}, {"sha256", fs::exists(cache) ? hash::sha256_file(cache.string()) : ""}}},
            {"record_timestamps", count ? Json::object({{"min", lo}, {"max", hi}}) : Json(nullptr)}};
  }

  void report() {
    auto corpus = ingested_corpus();
    auto machine = machine_ratings();
    const auto& a = cfg_.analyses;
    Json validity = optional_json("validate/validity.json", a.validity, Stage::Validate);
    Json reliability = optional_json("reliability/reliability.json", a.reliability, Stage::Reliability);
    Json substitution = optional_json("substitute/substitution.json", !a.substitution.empty(), Stage::Substitute);
    Json errors = optional_json("error-analysis/error_model.json", a.error_analysis, Stage::ErrorAnalysis);
    Json notices = Json::array();
    fs::remove_all(path("report/plots"));
    Json plots = Json::array();
    auto human = human_rating_table(corpus);
    auto add_plot = [&](const std::string& name, const plot::Svg& svg) {
      svg.save(path("report/plots/" + name).string());
      plots.push_back("plots/" + name);
    };
    fs::create_directories(path("report/plots"));
    const auto& to = cfg_.target_scale;
    const double lo = to.min_point(), hi = to.max_point();
    auto scale_label = "(" + to.label() + ")";

    // Scatter per dimension x language.
    auto joined = join_ratings(corpus, human, machine, to);
    std::set<std::string> languages;
    for (const auto& s : corpus.stimuli()) languages.insert(s.language);
    std::vector<std::string> model_order;
    for (const auto& m : cfg_.models) model_order.push_back(m.params.model_name);
    std::sort(model_order.begin(), model_order.end());
    for (Dimension d : kAllDimensions) {
      for (const auto& lang : languages) {
        std::vector<plot::ScatterSeries> series;
        for (const auto& model : model_order) {
          plot::ScatterSeries sr{model, {}, {}};
          for (const auto& p : joined.pairs)
            if (p.dimension == d && p.model == model && p.item->language == lang) {
              sr.x.push_back(p.human);
              sr.y.push_back(p.machine);
            }
          if (!sr.x.empty()) series.push_back(std::move(sr));
        }
        if (series.empty()) {
          notices.push_back("no " + dimension_name(d) + " ratings for " + lang + " items; scatter plot skipped");
          continue;
        }
        add_plot("scatter_" + slug(dimension_name(d)) + "_" + slug(lang) + ".svg",
                 plot::scatter_with_marginals(dimension_name(d) + ", " + lang + " (n = " +
                                                  std::to_string(series.front().x.size()) + " items)",
                                              "Human " + slug(dimension_name(d)) + " rating " + scale_label,
                                              "Model " + slug(dimension_name(d)) + " rating " + scale_label, lo, hi,
                                              series));
      }
    }

    // Per-subset bars from the validity table.
    if (!validity.is_null()) {
      std::map<std::string, std::vector<plot::BarGroup>> by_dim;
      std::map<std::string, std::size_t> n_by_dim;
      for (const auto& cell : validity["groupings"]["subset"]) {
        if (cell["result"].is_null()) continue;
        auto dim = cell["dimension"].get<std::string>();
        auto group = cell["group"].get<std::string>() + " (n = " + std::to_string(cell["n"].get<std::size_t>()) + ")";
        auto& groups = by_dim[dim];
        auto it = std::find_if(groups.begin(), groups.end(), [&](const plot::BarGroup& g) { return g.label == group; });
        if (it == groups.end()) {
          groups.push_back({group, {}});
          it = std::prev(groups.end());
        }
        it->bars.emplace_back(cell["model"].get<std::string>(), cell["result"]["rho"].get<double>());
      }
      if (by_dim.empty()) notices.push_back("no subset validity cells; subset bar chart skipped");
      for (const auto& [dim, groups] : by_dim)
        add_plot("subsets_" + slug(dim) + ".svg",
                 plot::grouped_bars(dim + " validity by subset", "Spearman rho", -0.25, 1.0, groups));
    }

    // Error by human rating, one panel per dimension.
    if (!errors.is_null()) {
      std::map<std::string, double> coef;
      for (const auto& c : errors["ols"]["coefficients"]) coef[c["term"].get<std::string>()] = c["estimate"].get<double>();
      auto levels = [&](const char* factor) {
        std::vector<std::string> out;
        if (errors["ols"]["factors"].contains(factor)) out = errors["ols"]["factors"][factor].get<std::vector<std::string>>();
        return out;
      };
      auto dims = levels("dimension");
      auto models = levels("model");
      std::set<std::string> rated_dims;
      for (const auto& p : joined.pairs)
        if (p.item->item_class == ItemClass::Metaphor) rated_dims.insert(dimension_name(p.dimension));
      if (dims.empty()) dims.assign(rated_dims.begin(), rated_dims.end());
      if (models.empty()) {
        std::set<std::string> ms;
        for (const auto& p : joined.pairs) ms.insert(p.model);
        models.assign(ms.begin(), ms.end());
      }
      auto get = [&](const std::string& name) { return coef.contains(name) ? coef.at(name) : 0.0; };
      std::vector<plot::LinePanel> panels;
      double y_max = 0;
      for (const auto& d : dims) {
        plot::LinePanel panel{d, {}};
        for (const auto& m : models) {
          plot::LineSeries s{m, {}};
          double a0 = get("(Intercept)") + get(stats::factor_column("dimension", d)) +
                      get(stats::factor_column("model", m));
          double b = get(kHumanPredictor) + get(stats::interaction_column(kHumanPredictor, "dimension", d)) +
                     get(stats::interaction_column(kHumanPredictor, "model", m));
          for (int i = 0; i <= 24; ++i) {
            double h = lo + (hi - lo) * i / 24.0;
            s.points.emplace_back(h, a0 + b * h);
            y_max = std::max(y_max, a0 + b * h);
          }
          panel.series.push_back(std::move(s));
        }
        panels.push_back(std::move(panel));
      }
      for (Dimension d : kAllDimensions)
        if (!rated_dims.contains(dimension_name(d)))
          notices.push_back("no " + dimension_name(d) + " metaphor ratings; error panel skipped");
      if (!panels.empty())
        add_plot("error_by_human_rating.svg",
                 plot::line_panels("Absolute error by human rating (metaphors)", "Human rating " + scale_label,
                                   "Predicted absolute error", lo, hi, 0, std::max(1.0, std::ceil(y_max)), panels));

      auto means = csv::read_file(path("error-analysis/error_means.csv").string());
      std::vector<plot::BarGroup> groups;
      double top = 0;
      for (const auto& row : means.rows) {
        auto d = row.fields[means.column("dimension")];
        auto v = *numeric::parse_double(row.fields[means.column("mean_error")]);
        top = std::max(top, v);
        auto it = std::find_if(groups.begin(), groups.end(), [&](const plot::BarGroup& g) { return g.label == d; });
        if (it == groups.end()) {
          groups.push_back({d, {}});
          it = std::prev(groups.end());
        }
        it->bars.emplace_back(row.fields[means.column("model")], v);
      }
      if (!groups.empty())
        add_plot("error_means.svg", plot::grouped_bars("Mean absolute error (metaphors)", "Mean absolute error", 0,
                                                       std::max(0.25, std::ceil(top * 4) / 4), groups));
    }

    if (!validity.is_null())
      for (const auto& n : validity["notices"]) notices.push_back(n);
    for (const auto& n : notices) log("[report] notice: " + n.get<std::string>());

    Json notes = Json::array({kStandardizationNote});
    if (!substitution.is_null()) notes.push_back(kDfNote);
    if (!errors.is_null()) notes.push_back(kErrorModelNote);
    auto aggregate = io::read_json(path("aggregate/aggregate.json"));
    for (const auto& n : aggregate["notes"]) notes.push_back(n);

    Json report = {{"provenance", provenance()},
                   {"target_scale", to.label()},
                   {"sources",
                    {{"validity", "validate/validity.json"},
                     {"reliability", "reliability/reliability.json"},
                     {"substitution", "substitute/substitution.json"},
                     {"error_analysis", "error-analysis/error_model.json"},
                     {"ratings", "aggregate/ratings.csv"}}},
                   {"validity", validity},
                   {"reliability", reliability},
                   {"substitution", substitution},
                   {"error_analysis", errors},
                   {"plots", plots},
                   {"notices", notices},
                   {"notes", notes}};
    io::write_json(path("report/report.json"), report);
    io::write_file(path("report/report.md"), render_markdown(report));
  }

  static std::string cell_text(const Json& result) {
    if (result.is_null()) return "n/a";
    auto band = result["band"].get<std::string>();
    return numeric::format_fixed(result["rho"].get<double>(), 2) + (band == "ns" ? "" : band);
  }

  static std::string render_markdown(const Json& report) {
    std::ostringstream md;
    const auto& prov = report["provenance"];
    md << "# norm-forge report\n\n";
    md << "- software: norm-forge " << prov["software"]["version"].get<std::string>() << "\n";
    md << "- config: " << prov["config"]["file"].get<std::string>() << " (sha256 "
       << prov["config"]["sha256"].get<std::string>() << ")\n";
    md << "- seed: " << prov["seed"].dump() << ", backend: " << prov["backend"].get<std::string>() << "\n";
    md << "- target scale: " << report["target_scale"].get<std::string>() << "\n\n";

    auto correlation_table = [&](const Json& cells, const char* group_field) {
      std::vector<std::string> models;
      std::map<std::pair<std::string, std::string>, std::map<std::string, std::string>> rows;
      std::map<std::pair<std::string, std::string>, std::size_t> ns;
      for (const auto& c : cells) {
        auto model = c["model"].get<std::string>();
        if (std::find(models.begin(), models.end(), model) == models.end()) models.push_back(model);
        std::pair key{c["dimension"].get<std::string>(), c[group_field].get<std::string>()};
        rows[key][model] = cell_text(c["result"]);
        ns[key] = std::max(ns[key], c["n"].get<std::size_t>());
      }
      md << "| dimension | group | n |";
      for (const auto& m : models) md << " " << m << " |";
      md << "\n|---|---|---|";
      for (std::size_t i = 0; i < models.size(); ++i) md << "---|";
      md << "\n";
      for (const auto& [key, vals] : rows) {
        md << "| " << key.first << " | " << key.second << " | " << ns[key] << " |";
        for (const auto& m : models) md << " " << (vals.contains(m) ? vals.at(m) : "") << " |";
        md << "\n";
      }
      md << "\n";
    };

    if (!report["validity"].is_null()) {
      md << "## Validity (Spearman rho)\n\n";
      for (const char* g : {"language", "class", "subset"}) {
        const auto& cells = report["validity"]["groupings"][g];
        if (cells.empty()) continue;
        md << "### By " << g << "\n\n";
        correlation_table(cells, "group");
      }
    }
    if (!report["reliability"].is_null() && !report["reliability"]["cells"].empty()) {
      md << "## Test-retest reliability\n\n";
      correlation_table(report["reliability"]["cells"], "language");
    }
    if (!report["substitution"].is_null()) {
      md << "## Substitution\n\n";
      for (const auto& a : report["substitution"]["analyses"]) {
        md << "### " << a["analysis"].get<std::string>() << " (" << a["subset"].get<std::string>() << ")\n\n";
        md << "| source | beta | t | p | AIC (ML) | R2 marginal | R2 conditional |\n|---|---|---|---|---|---|---|\n";
        for (const auto& r : a["rows"]) {
          md << "| " << r["source"].get<std::string>() << " | " << numeric::format_fixed(r["beta"].get<double>(), 4)
             << " | " << numeric::format_fixed(r["t"].get<double>(), 2) << " | "
             << numeric::format_fixed(r["p"].get<double>(), 4) << " | "
             << numeric::format_fixed(r["aic_ml"].get<double>(), 2) << " | "
             << numeric::format_fixed(r["r2_marginal"].get<double>(), 3) << " | "
             << numeric::format_fixed(r["r2_conditional"].get<double>(), 3) << " |\n";
        }
        md << "\nLowest AIC: " << a["best_aic_source"].get<std::string>() << "\n\n";
      }
    }
    if (!report["error_analysis"].is_null()) {
      md << "## Error trends\n\n| moderator | level | slope | se | p |\n|---|---|---|---|---|\n";
      for (const auto& s : report["error_analysis"]["trends"]["slopes"])
        md << "| " << s["moderator"].get<std::string>() << " | " << s["level"].get<std::string>() << " | "
           << numeric::format_fixed(s["slope"].get<double>(), 3) << " | "
           << numeric::format_fixed(s["se"].get<double>(), 3) << " | "
           << numeric::format_fixed(s["p"].get<double>(), 4) << " |\n";
      md << "\n";
    }
    if (!report["notices"].empty()) {
      md << "## Notices\n\n";
      for (const auto& n : report["notices"]) md << "- " << n.get<std::string>() << "\n";
      md << "\n";
    }
    md << "## Notes\n\n";
    for (const auto& n : report["notes"]) md << "- " << n.get<std::string>() << "\n";
    return md.str();
  }

  // --- manifest ------------------------------------------------------------

  void write_manifest() const {
    if (!fs::exists(out())) return;
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(out()))
      if (entry.is_regular_file()) {
        auto rel = fs::relative(entry.path(), out()).generic_string();
        if (rel != "manifest.json") files.push_back(rel);
      }
    std::sort(files.begin(), files.end());
    Json list = Json::array();
    for (const auto& f : files)
      list.push_back({{"path", f}, {"bytes", fs::file_size(path(f))}, {"sha256", hash::sha256_file(path(f).string())}});
    auto manifest = provenance();
    manifest["files"] = list;
    io::write_json(path("manifest.json"), manifest);
  }
};

}  // namespace normforge::pipeline
