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

// Run configuration: a single JSON document. Relative paths resolve against
// the directory holding the config file.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "normforge/corpus.hpp"
#include "normforge/elicitation.hpp"
#include "normforge/error.hpp"
#include "normforge/lmm.hpp"

namespace normforge {

struct ModelConfig {
  ElicitationParams params;  // session_id is overwritten per session
  double mock_target_rho = 0.65;
};

enum class BackendKind { Mock, Live };

struct BackendConfig {
  BackendKind kind = BackendKind::Mock;
  std::string endpoint;
  int timeout_seconds = 60;
};

struct SubstitutionAnalysis {
  std::string name;
  std::filesystem::path responses;
  std::string measure_kind = "ResponseTime";
  lmm::Transform transform = lmm::Transform::Identity;
  std::string study_id;
  Dimension dimension = Dimension::Familiarity;
  std::vector<std::string> covariates;
  std::vector<std::string> random_intercepts = {"subject", "item"};
  lmm::Objective objective = lmm::Objective::REML;
  bool split_by_subset = false;
};

struct AnalysisSelection {
  bool validity = true;
  bool reliability = true;
  bool error_analysis = true;
  std::vector<SubstitutionAnalysis> substitution;
};

struct RunConfig {
  std::filesystem::path source;  // config file
  std::string source_bytes;
  std::filesystem::path corpus;
  InstructionSet instructions;
  std::vector<ModelConfig> models;
  BackendConfig backend;
  PromptOptions prompt;
  std::vector<std::string> lint_patterns = default_lint_patterns();
  std::vector<std::string> sessions = {"s1", "s2"};
  std::uint64_t seed = 20250601;
  std::filesystem::path output_dir = "out";
  LikertScale target_scale = LikertScale::seven_point();
  AnalysisSelection analyses;

  const ModelConfig* model(const std::string& name) const {
    for (const auto& m : models)
      if (m.params.model_name == name) return &m;
    return nullptr;
  }
};

namespace detail {

template <class T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

inline Dimension dimension_field(const Json& j, const char* key, const std::string& where) {
  auto text = j.at(key).get<std::string>();
  auto d = parse_dimension(text);
  if (!d) fail(ErrorKind::Config, where + ": unknown dimension '" + text + "'");
  return *d;
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text, const std::filesystem::path& source) {
  RunConfig cfg;
  cfg.source = source;
  cfg.source_bytes = text;
  auto base = source.has_parent_path() ? source.parent_path() : std::filesystem::path(".");
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::Config, source.string() + ": " + e.what());
  }
  try {
    if (!j.is_object()) fail(ErrorKind::Config, "top level must be an object");
    if (!j.contains("corpus")) fail(ErrorKind::Config, "missing 'corpus'");
    cfg.corpus = detail::resolve(base, j.at("corpus").get<std::string>());

    if (!j.contains("instructions") || !j.at("instructions").is_array())
      fail(ErrorKind::Config, "missing 'instructions' list");
    for (const auto& ins : j.at("instructions")) {
      auto study = ins.at("study_id").get<std::string>();
      auto d = detail::dimension_field(ins, "dimension", "instructions for '" + study + "'");
      auto key = std::make_pair(study, d);
      if (cfg.instructions.count(key))
        fail(ErrorKind::Config, "duplicate instructions for '" + study + "', " + dimension_name(d));
      cfg.instructions[key] = ins.at("text").get<std::string>();
    }

    if (!j.contains("models") || !j.at("models").is_array() || j.at("models").empty())
      fail(ErrorKind::Config, "'models' must be a non-empty list");
    for (const auto& m : j.at("models")) {
      ModelConfig mc;
      mc.params.model_name = m.at("name").get<std::string>();
      mc.params.temperature = detail::get_or(m, "temperature", mc.params.temperature);
      mc.params.max_output_tokens = detail::get_or(m, "max_output_tokens", mc.params.max_output_tokens);
      mc.params.top_logprob_count = detail::get_or(m, "top_logprobs", mc.params.top_logprob_count);
      mc.params.retry_limit = detail::get_or(m, "retry_limit", mc.params.retry_limit);
      mc.params.concurrency_limit = detail::get_or(m, "concurrency_limit", mc.params.concurrency_limit);
      mc.mock_target_rho = detail::get_or(m, "mock_target_rho", mc.mock_target_rho);
      if (mc.mock_target_rho < -1 || mc.mock_target_rho > 1)
        fail(ErrorKind::Config, "model '" + mc.params.model_name + "': mock_target_rho outside [-1, 1]");
      try {
        mc.params.validate();
      } catch (const Error& e) {
        fail(ErrorKind::Config, "model '" + mc.params.model_name + "': " + e.what());
      }
      if (cfg.model(mc.params.model_name)) fail(ErrorKind::Config, "duplicate model '" + mc.params.model_name + "'");
      cfg.models.push_back(mc);
    }

    if (j.contains("backend")) {
      const auto& b = j.at("backend");
      auto kind = detail::get_or<std::string>(b, "kind", "mock");
      if (kind == "mock") {
        cfg.backend.kind = BackendKind::Mock;
      } else if (kind == "live") {
        cfg.backend.kind = BackendKind::Live;
        cfg.backend.endpoint = detail::get_or<std::string>(b, "endpoint", "");
        if (cfg.backend.endpoint.empty()) fail(ErrorKind::Config, "live backend needs an 'endpoint'");
      } else {
        fail(ErrorKind::Config, "backend kind must be 'mock' or 'live', got '" + kind + "'");
      }
      cfg.backend.timeout_seconds = detail::get_or(b, "timeout_seconds", cfg.backend.timeout_seconds);
    }

    if (j.contains("prompt")) {
      const auto& p = j.at("prompt");
      if (p.contains("instruction_role")) {
        try {
          cfg.prompt.role = parse_instruction_role(p.at("instruction_role").get<std::string>());
        } catch (const Error& e) {
          fail(ErrorKind::Config, e.what());
        }
      }
      cfg.prompt.rating_constraint = detail::get_or(p, "rating_constraint", cfg.prompt.rating_constraint);
    }
    if (j.contains("lint_patterns")) cfg.lint_patterns = j.at("lint_patterns").get<std::vector<std::string>>();

    if (j.contains("sessions")) {
      cfg.sessions = j.at("sessions").get<std::vector<std::string>>();
      if (cfg.sessions.empty()) fail(ErrorKind::Config, "'sessions' must not be empty");
      std::set<std::string> unique(cfg.sessions.begin(), cfg.sessions.end());
      if (unique.size() != cfg.sessions.size()) fail(ErrorKind::Config, "duplicate session ids");
    }
    cfg.seed = detail::get_or(j, "seed", cfg.seed);
    if (j.contains("output_dir")) cfg.output_dir = detail::resolve(base, j.at("output_dir").get<std::string>());
    else cfg.output_dir = detail::resolve(base, "out");
    if (j.contains("target_scale")) {
      const auto& t = j.at("target_scale");
      try {
        cfg.target_scale = LikertScale(t.at("min").get<int>(), t.at("max").get<int>());
      } catch (const Error& e) {
        fail(ErrorKind::Config, std::string("target_scale: ") + e.what());
      }
    }

    if (j.contains("analyses")) {
      const auto& a = j.at("analyses");
      cfg.analyses.validity = detail::get_or(a, "validity", true);
      cfg.analyses.reliability = detail::get_or(a, "reliability", true);
      cfg.analyses.error_analysis = detail::get_or(a, "error_analysis", true);
      if (a.contains("substitution")) {
        std::set<std::string> names;
        for (const auto& s : a.at("substitution")) {
          SubstitutionAnalysis sa;
          sa.name = s.at("name").get<std::string>();
          if (!names.insert(sa.name).second) fail(ErrorKind::Config, "duplicate substitution analysis '" + sa.name + "'");
          auto where = "substitution '" + sa.name + "'";
          sa.responses = detail::resolve(base, s.at("responses").get<std::string>());
          sa.measure_kind = detail::get_or(s, "measure_kind", sa.measure_kind);
          try {
            sa.transform = lmm::parse_transform(detail::get_or<std::string>(s, "transform", "identity"));
          } catch (const Error& e) {
            fail(ErrorKind::Config, where + ": " + e.what());
          }
          sa.study_id = s.at("study_id").get<std::string>();
          sa.dimension = detail::dimension_field(s, "dimension", where);
          sa.covariates = detail::get_or(s, "covariates", sa.covariates);
          sa.random_intercepts = detail::get_or(s, "random_intercepts", sa.random_intercepts);
          auto objective = detail::get_or<std::string>(s, "objective", "REML");
          if (objective == "REML") sa.objective = lmm::Objective::REML;
          else if (objective == "ML") sa.objective = lmm::Objective::ML;
          else fail(ErrorKind::Config, where + ": objective must be 'REML' or 'ML'");
          sa.split_by_subset = detail::get_or(s, "split_by_subset", false);
          cfg.analyses.substitution.push_back(std::move(sa));
        }
      }
    }
  } catch (const Json::exception& e) {
    fail(ErrorKind::Config, source.string() + ": " + e.what());
  }
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Config, "cannot open config '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path);
}

}  // namespace normforge
