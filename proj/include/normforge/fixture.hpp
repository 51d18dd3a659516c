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

// Synthetic rating corpora, response datasets and run configs used by the
// bundled example, the tests and the acceptance suite. Nothing here reads
// real norming data; every value is drawn from a seeded generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "normforge/corpus.hpp"
#include "normforge/csv.hpp"
#include "normforge/elicitation.hpp"
#include "normforge/hash.hpp"
#include "normforge/lmm.hpp"
#include "normforge/numeric.hpp"

namespace normforge::fixture {

namespace fs = std::filesystem;

/// Standard normal draw (Box-Muller on SplitMix64 uniforms).
inline double gaussian(hash::SplitMix64& rng) {
  double u1 = rng.uniform(), u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

struct ItemGroupSpec {
  ItemClass item_class = ItemClass::Metaphor;
  std::optional<std::string> subset;
  int count = 0;
};

struct StudySpec {
  std::string id;
  std::string language;
  LikertScale scale = LikertScale::seven_point();
  std::vector<Dimension> dimensions;
  std::vector<ItemGroupSpec> groups;
};

struct ModelSpec {
  std::string name;
  double target_rho = 0.65;
};

/// Crossed subjects x items response data attached to one study.
struct ResponseSpec {
  std::string name;        // analysis name, also the file stem
  std::string study_id;
  Dimension dimension = Dimension::Familiarity;
  std::string measure_kind = "ResponseTime";
  lmm::Transform transform = lmm::Transform::Log;
  int subjects = 30;
  double intercept = 6.5;
  double slope = -0.046;   // per native scale point, on the transformed scale
  double sd_subject = 0.15;
  double sd_item = 0.05;
  double sd_residual = 0.25;
  bool split_by_subset = false;
};

struct FixtureSpec {
  std::vector<StudySpec> studies;
  std::vector<ModelSpec> models;
  std::vector<ResponseSpec> responses;
  std::vector<std::string> sessions = {"s1", "s2"};
  std::uint64_t seed = 20250601;
};

inline std::vector<ModelSpec> default_models() {
  return {{"gpt-4o", 0.65}, {"gpt-4o-mini", 0.45}, {"gpt-3.5-turbo", 0.25}};
}

/// Eight studies with the languages, scales, classes, subsets and item
/// counts of the published metaphor norming material, plus one RT and two
/// N400 datasets.
inline FixtureSpec archive_fixture(std::uint64_t seed = 20250601) {
  using D = Dimension;
  using C = ItemClass;
  FixtureSpec f;
  f.seed = seed;
  f.models = default_models();
  auto seven = LikertScale::seven_point();
  f.studies = {
      {"en_nominal", "English", seven, {D::Familiarity, D::Imageability}, {{C::Metaphor, {}, 50}}},
      {"en_sensory", "English", seven, {D::Familiarity},
       {{C::Metaphor, "motion", 60}, {C::Metaphor, "auditory", 60}, {C::Literal, {}, 120}}},
      {"en_comprehension", "English", LikertScale(1, 6), {D::Comprehensibility},
       {{C::Metaphor, {}, 48}, {C::Anomalous, {}, 48}, {C::Literal, {}, 48}}},
      {"it_nominal", "Italian", LikertScale(1, 5), {D::Familiarity},
       {{C::Metaphor, {}, 48}, {C::Anomalous, {}, 46}, {C::Literal, {}, 46}}},
      {"it_genitive", "Italian", LikertScale(1, 5), {D::Familiarity}, {{C::Metaphor, {}, 105}}},
      {"it_pairs", "Italian", seven, {D::Familiarity, D::Imageability}, {{C::Metaphor, {}, 128}}},
      {"it_erp", "Italian", seven, {D::Familiarity}, {{C::Metaphor, "mental", 62}, {C::Metaphor, "physical", 62}}},
      {"it_body", "Italian", seven, {D::Familiarity},
       {{C::Metaphor, "body", 32}, {C::Metaphor, "object", 32}}},
  };
  ResponseSpec rt;
  rt.name = "rt_familiarity";
  rt.study_id = "it_body";
  rt.split_by_subset = true;
  ResponseSpec n400;
  n400.name = "n400_familiarity";
  n400.study_id = "it_erp";
  n400.measure_kind = "ErpAmplitude";
  n400.transform = lmm::Transform::Identity;
  n400.subjects = 24;
  n400.intercept = -2.0;
  n400.slope = 0.35;
  n400.sd_subject = 1.0;
  n400.sd_item = 0.5;
  n400.sd_residual = 2.5;
  auto n400_img = n400;
  n400_img.name = "n400_imageability";
  n400_img.study_id = "it_pairs";
  n400_img.dimension = D::Imageability;
  f.responses = {rt, n400, n400_img};
  return f;
}

/// One English familiarity study of `items` metaphors on a 7-point scale.
inline FixtureSpec single_study_fixture(int items = 300, std::vector<ModelSpec> models = {{"gpt-4o", 0.65}},
                                        std::uint64_t seed = 20250601) {
  FixtureSpec f;
  f.seed = seed;
  f.models = std::move(models);
  f.studies = {{"single_study", "English", LikertScale::seven_point(), {Dimension::Familiarity},
                {{ItemClass::Metaphor, {}, items}}}};
  return f;
}

namespace detail {

inline const std::vector<std::string>& english_words() {
  static const std::vector<std::string> w = {
      "lawyer", "wound",  "actor",   "river",  "memory", "city",   "thought", "silence", "anger",  "hope",
      "teacher", "voice", "promise", "sorrow", "garden", "mind",   "kiss",    "rumor",   "career", "winter",
      "shark",  "fjord",  "mask",    "bridge", "knife",  "arrow",  "pendulum", "tune",   "prison", "mirror",
      "storm",  "candle", "ladder",  "anchor", "desert", "maze",   "jewel",   "shield",  "fog",    "ocean"};
  return w;
}

inline const std::vector<std::string>& italian_words() {
  static const std::vector<std::string> w = {
      "avvocato", "ferita",   "attore",   "fiume",   "ricordo",  "città",    "pensiero", "silenzio", "rabbia",
      "speranza", "maestro",  "voce",     "promessa", "dolore",  "giardino", "mente",    "bacio",    "diceria",
      "carriera", "inverno",  "squalo",   "fiordo",   "maschera", "ponte",   "coltello", "freccia",  "pendolo",
      "melodia",  "prigione", "specchio", "tempesta", "candela",  "scala",   "ancora",   "deserto",  "labirinto",
      "gioiello", "scudo",    "nebbia",   "oceano"};
  return w;
}

/// Deterministic stream of distinct (topic, vehicle) pairs.
class PairStream {
 public:
  explicit PairStream(std::uint64_t seed) {
    const auto n = english_words().size();
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        if (a != b) pairs_.emplace_back(a, b);
    hash::SplitMix64 rng(seed);
    for (std::size_t i = pairs_.size(); i > 1; --i) std::swap(pairs_[i - 1], pairs_[rng.next() % i]);
  }
  std::pair<std::size_t, std::size_t> next() { return pairs_[pos_++ % pairs_.size()]; }

 private:
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  std::size_t pos_ = 0;
};

inline std::string item_text(const std::string& language, ItemClass c, std::pair<std::size_t, std::size_t> p) {
  if (language == "Italian") {
    const auto& w = italian_words();
    switch (c) {
      case ItemClass::Metaphor: return "Quel " + w[p.first] + " è un " + w[p.second];
      case ItemClass::Literal: return "Quel " + w[p.first] + " è un vero " + w[p.first];
      case ItemClass::Anomalous: return "Quel " + w[p.first] + " è un " + w[p.second] + " blu";
    }
  }
  const auto& w = english_words();
  switch (c) {
    case ItemClass::Metaphor: return "The " + w[p.first] + " is a " + w[p.second];
    case ItemClass::Literal: return "The " + w[p.first] + " is a real " + w[p.first];
    case ItemClass::Anomalous: return "The " + w[p.first] + " is a blue " + w[p.second];
  }
  return {};
}

inline double class_shift(ItemClass c, Dimension d) {
  if (c == ItemClass::Literal) return d == Dimension::Comprehensibility ? 1.4 : 1.0;
  if (c == ItemClass::Anomalous) return -1.4;
  return 0.0;
}

}  // namespace detail

/// One row of the stimulus file.
struct StimulusRow {
  Stimulus item;
  Dimension dimension;
  HumanNorm norm;
  LikertScale scale;
};

/// Human means: each item draws one latent shared across its dimensions
/// (plus dimension-specific noise), shifted by class, squashed onto the
/// native scale and rounded to two decimals.
inline std::vector<StimulusRow> generate_stimuli(const FixtureSpec& spec) {
  std::vector<StimulusRow> rows;
  detail::PairStream pairs(spec.seed ^ 0x5157ULL);
  hash::SplitMix64 rng(spec.seed);
  for (const auto& study : spec.studies) {
    int index = 0;
    for (const auto& g : study.groups) {
      for (int k = 0; k < g.count; ++k) {
        Stimulus s;
        s.study_id = study.id;
        ++index;
        s.item_id = (index < 10 ? "i00" : index < 100 ? "i0" : "i") + std::to_string(index);
        s.text = detail::item_text(study.language, g.item_class, pairs.next());
        s.language = study.language;
        s.item_class = g.item_class;
        s.subset = g.subset;
        double shared = gaussian(rng);
        for (Dimension d : study.dimensions) {
          double z = 0.8 * shared + 0.6 * gaussian(rng) + detail::class_shift(g.item_class, d);
          double lo = study.scale.min_point(), hi = study.scale.max_point();
          double mean = lo + (hi - lo) * numeric::normal_cdf(0.9 * z);
          mean = std::clamp(std::round(mean * 100.0) / 100.0, lo, hi);
          int raters = 20 + static_cast<int>(rng.next() % 21);
          rows.push_back({s, d, {mean, raters}, study.scale});
        }
      }
    }
  }
  return rows;
}

inline void write_stimuli(const std::vector<StimulusRow>& rows, std::ostream& out) {
  csv::write_row(out, corpus_columns());
  for (const auto& r : rows)
    csv::write_row(out, {r.item.study_id, r.item.item_id, r.item.text, r.item.language, class_name(r.item.item_class),
                         r.item.subset.value_or(""), dimension_name(r.dimension), numeric::format_double(r.norm.mean),
                         std::to_string(r.norm.n_raters), std::to_string(r.scale.min_point()),
                         std::to_string(r.scale.max_point())});
}

/// measure = intercept + slope * x_item + u_subject + w_item + e on the
/// transformed scale; Log transform stores exp() of that value.
inline lmm::ResponseDataset simulate_responses(const std::map<std::string, double>& item_predictor,
                                               const ResponseSpec& spec, std::uint64_t seed) {
  hash::SplitMix64 rng(seed);
  std::vector<double> subject_effect(static_cast<std::size_t>(spec.subjects));
  for (auto& u : subject_effect) u = spec.sd_subject * gaussian(rng);
  std::map<std::string, double> item_effect;
  for (const auto& [item, x] : item_predictor) item_effect[item] = spec.sd_item * gaussian(rng);
  lmm::ResponseDataset ds;
  ds.measure_kind = spec.measure_kind;
  ds.transform = spec.transform;
  for (int s = 0; s < spec.subjects; ++s) {
    auto subject = (s + 1 < 10 ? "p0" : "p") + std::to_string(s + 1);
    for (const auto& [item, x] : item_predictor) {
      double eta = spec.intercept + spec.slope * x + subject_effect[static_cast<std::size_t>(s)] + item_effect[item] +
                   spec.sd_residual * gaussian(rng);
      double measure = spec.transform == lmm::Transform::Log ? std::exp(eta) : eta;
      ds.observations.push_back({subject, item, std::round(measure * 1000.0) / 1000.0, {}});
    }
  }
  return ds;
}

/// Instruction text for one study and dimension, in the form used by the
/// norming questionnaires with the practical details already removed.
inline std::string instruction_text(const StudySpec& study, Dimension d) {
  auto def = default_definition(d);
  def[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(def[0])));
  auto name = dimension_name(d);
  name[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(name[0])));
  return "In this questionnaire you will read a series of expressions. For each expression, rate its " + name +
         ", that is, " + def + ". Use a scale from " + std::to_string(study.scale.min_point()) + " (very low) to " +
         std::to_string(study.scale.max_point()) + " (very high).";
}

inline Json run_config_json(const FixtureSpec& spec, const std::string& corpus_file, const std::string& output_dir) {
  Json instructions = Json::array();
  for (const auto& study : spec.studies)
    for (Dimension d : study.dimensions)
      instructions.push_back(
          {{"study_id", study.id}, {"dimension", dimension_name(d)}, {"text", instruction_text(study, d)}});
  Json models = Json::array();
  for (const auto& m : spec.models)
    models.push_back({{"name", m.name}, {"temperature", 0}, {"max_output_tokens", 1}, {"top_logprobs", 3},
                      {"mock_target_rho", m.target_rho}});
  Json substitution = Json::array();
  for (const auto& r : spec.responses)
    substitution.push_back({{"name", r.name},
                            {"responses", "responses_" + r.name + ".csv"},
                            {"measure_kind", r.measure_kind},
                            {"transform", lmm::to_string(r.transform)},
                            {"study_id", r.study_id},
                            {"dimension", dimension_name(r.dimension)},
                            {"random_intercepts", Json::array({"subject", "item"})},
                            {"objective", "REML"},
                            {"split_by_subset", r.split_by_subset}});
  return {{"corpus", corpus_file},
          {"instructions", instructions},
          {"models", models},
          {"backend", {{"kind", "mock"}}},
          {"prompt", {{"instruction_role", "user"}}},
          {"sessions", spec.sessions},
          {"seed", spec.seed},
          {"output_dir", output_dir},
          {"target_scale", {{"min", 1}, {"max", 7}}},
          {"analyses",
           {{"validity", true}, {"reliability", true}, {"error_analysis", true}, {"substitution", substitution}}}};
}

/// Writes stimuli.csv, responses_<name>.csv and config.json into `dir`.
/// Returns the config path.
inline fs::path write_fixture(const fs::path& dir, const FixtureSpec& spec, const std::string& output_dir = "out") {
  fs::create_directories(dir);
  auto rows = generate_stimuli(spec);
  {
    std::ofstream out(dir / "stimuli.csv", std::ios::binary);
    write_stimuli(rows, out);
  }
  for (const auto& r : spec.responses) {
    std::map<std::string, double> x;
    for (const auto& row : rows)
      if (row.item.study_id == r.study_id && row.dimension == r.dimension) x[row.item.item_id] = row.norm.mean;
    if (x.empty()) fail(ErrorKind::Config, "response spec '" + r.name + "' matches no rated items");
    auto ds = simulate_responses(x, r, spec.seed ^ hash::fnv1a64(r.name));
    std::ofstream out(dir / ("responses_" + r.name + ".csv"), std::ios::binary);
    lmm::write_response_dataset(ds, out);
  }
  auto config = dir / "config.json";
  std::ofstream out(config, std::ios::binary);
  out << run_config_json(spec, "stimuli.csv", output_dir).dump(2) << "\n";
  return config;
}

}  // namespace normforge::fixture
