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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "normforge/fixture.hpp"
#include "normforge/pipeline.hpp"
#include "normforge/plots.hpp"

using namespace normforge;
using pipeline::Pipeline;
using pipeline::Stage;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("nf_pipeline_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fixture::FixtureSpec mini_spec() {
  using C = ItemClass;
  fixture::FixtureSpec f;
  f.seed = 77;
  f.models = {{"model-a", 0.7}, {"model-b", 0.3}};
  f.studies = {
      {"en_study", "English", LikertScale::seven_point(), {Dimension::Familiarity, Dimension::Imageability},
       {{C::Metaphor, "mental", 20}, {C::Metaphor, "physical", 20}, {C::Literal, {}, 15}}},
      {"it_study", "Italian", LikertScale(1, 5), {Dimension::Familiarity}, {{C::Metaphor, {}, 25}, {C::Anomalous, {}, 10}}},
  };
  fixture::ResponseSpec rt;
  rt.name = "rt";
  rt.study_id = "en_study";
  rt.subjects = 12;
  rt.split_by_subset = true;
  f.responses = {rt};
  return f;
}

/// Writes the mini fixture once per process and returns its config path.
const fs::path& mini_config() {
  static const fs::path path = fixture::write_fixture(temp_dir("fixture"), mini_spec());
  return path;
}

RunConfig load_mini() { return load_run_config(mini_config()); }

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = pipeline::io::read_file(e.path());
  return out;
}

Json read_json(const fs::path& p) { return pipeline::io::read_json(p); }

pipeline::StageFailure run_expecting_failure(Pipeline& p, Stage s) {
  try {
    p.run(s);
  } catch (const pipeline::StageFailure& f) {
    return f;
  }
  ADD_FAILURE() << "stage " << pipeline::stage_name(s) << " did not fail";
  return pipeline::StageFailure(s, Error(ErrorKind::Config, "none"));
}

/// Backend that must never be called.
class FailingBackend : public Backend {
 public:
  int calls = 0;
  BackendReply complete(const ChatRequest&, const ItemContext&) override {
    ++calls;
    fail(ErrorKind::Protocol, "unexpected backend call");
  }
  bool uses_network() const override { return false; }
};

}  // namespace

// --- configuration ----------------------------------------------------------

TEST(Config, ParsesAndResolvesPaths) {
  auto cfg = load_mini();
  EXPECT_EQ(cfg.corpus, mini_config().parent_path() / "stimuli.csv");
  EXPECT_EQ(cfg.output_dir, mini_config().parent_path() / "out");
  EXPECT_EQ(cfg.models.size(), 2u);
  EXPECT_EQ(cfg.models[0].params.top_logprob_count, 3);
  EXPECT_EQ(cfg.models[0].params.temperature, 0.0);
  EXPECT_EQ(cfg.instructions.size(), 3u);
  EXPECT_EQ(cfg.backend.kind, BackendKind::Mock);
  ASSERT_EQ(cfg.analyses.substitution.size(), 1u);
  EXPECT_EQ(cfg.analyses.substitution[0].transform, lmm::Transform::Log);
  EXPECT_TRUE(cfg.analyses.substitution[0].split_by_subset);
}

TEST(Config, RejectsBadInput) {
  auto base = Json::parse(pipeline::io::read_file(mini_config()));
  auto expect_config_error = [&](const std::function<void(Json&)>& edit, const std::string& fragment) {
    Json j = base;
    edit(j);
    try {
      parse_run_config(j.dump(), "/tmp/c.json");
      ADD_FAILURE() << "accepted: " << fragment;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Config) << e.what();
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  expect_config_error([](Json& j) { j.erase("corpus"); }, "missing 'corpus'");
  expect_config_error([](Json& j) { j["models"] = Json::array(); }, "'models' must be a non-empty list");
  expect_config_error([](Json& j) { j["models"].push_back(j["models"][0]); }, "duplicate model");
  expect_config_error([](Json& j) { j["models"][0]["mock_target_rho"] = 1.5; }, "mock_target_rho");
  expect_config_error([](Json& j) { j["backend"]["kind"] = "carrier-pigeon"; }, "backend kind");
  expect_config_error([](Json& j) { j["backend"] = {{"kind", "live"}}; }, "endpoint");
  expect_config_error([](Json& j) { j["sessions"] = {"s1", "s1"}; }, "duplicate session");
  expect_config_error([](Json& j) { j["instructions"][0]["dimension"] = "Loudness"; }, "Loudness");
  EXPECT_THROW(parse_run_config("{not json", "/tmp/c.json"), Error);
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), Error);
}

TEST(Config, ScopeResolution) {
  auto cfg = load_mini();
  EXPECT_EQ(pipeline::make_scope(cfg, "it_study").study, std::optional<std::string>("it_study"));
  EXPECT_EQ(pipeline::make_scope(cfg, "Imageability").dimension, std::optional<Dimension>(Dimension::Imageability));
  EXPECT_EQ(pipeline::make_scope(cfg, "model-b").model, std::optional<std::string>("model-b"));
  try {
    pipeline::make_scope(cfg, "nothing");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Cli, ExitCodes) {
  using namespace pipeline;
  EXPECT_EQ(exit_code_for(ErrorKind::Config), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::MissingPrerequisite), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::Credential), 4);
  EXPECT_EQ(exit_code_for(ErrorKind::Integrity), 4);
  EXPECT_EQ(exit_code_for(ErrorKind::NonConvergence), 5);
  EXPECT_EQ(exit_code_for(ErrorKind::Ingest), 6);
  for (Stage s : kStageOrder) EXPECT_EQ(parse_stage(stage_name(s)), std::optional<Stage>(s));
  EXPECT_EQ(parse_stage("error-analysis"), std::optional<Stage>(Stage::ErrorAnalysis));
  EXPECT_FALSE(parse_stage("bogus"));
}

// --- end to end -------------------------------------------------------------

class PipelineRun : public ::testing::Test {
 protected:
  static fs::path out;
  static void SetUpTestSuite() {
    out = temp_dir("full");
    pipeline::RunOptions opts;
    opts.output_dir = out;
    Pipeline(load_mini(), opts).run(Stage::All);
  }
};
fs::path PipelineRun::out;

TEST_F(PipelineRun, WritesEveryArtifact) {
  for (const char* f : {"ingest/corpus.csv", "ingest/human_ratings.csv", "ingest/ingest.json", "elicit/cache.jsonl",
                        "elicit/elicit.json", "aggregate/ratings.csv", "aggregate/unrateable.csv",
                        "aggregate/aggregate.json", "validate/validity.csv", "validate/validity.json",
                        "reliability/reliability.csv", "reliability/reliability.json", "substitute/substitution.csv",
                        "substitute/substitution.json", "error-analysis/absolute_error.csv",
                        "error-analysis/error_means.csv", "error-analysis/trends.csv",
                        "error-analysis/error_model.json", "report/report.json", "report/report.md", "manifest.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
}

TEST_F(PipelineRun, ManifestHashesMatchFiles) {
  auto manifest = read_json(out / "manifest.json");
  std::vector<std::string> listed;
  for (const auto& f : manifest["files"]) {
    auto rel = f["path"].get<std::string>();
    listed.push_back(rel);
    EXPECT_EQ(f["sha256"], hash::sha256_file((out / rel).string())) << rel;
    EXPECT_EQ(f["bytes"].get<std::uintmax_t>(), fs::file_size(out / rel));
  }
  EXPECT_TRUE(std::is_sorted(listed.begin(), listed.end()));
  EXPECT_EQ(std::count(listed.begin(), listed.end(), "manifest.json"), 0);
  EXPECT_EQ(manifest["seed"], 77);
  EXPECT_EQ(manifest["backend"], "mock");
  EXPECT_EQ(manifest["cache"]["records"], 2 * 2 * (55 + 55 + 35));
}

TEST_F(PipelineRun, ValidityAndReliabilityTables) {
  auto validity = read_json(out / "validate/validity.json");
  const auto& lang = validity["groupings"]["language"];
  // (Familiarity: English, Italian; Imageability: English) x 2 models.
  ASSERT_EQ(lang.size(), 6u);
  for (const auto& c : lang) {
    EXPECT_EQ(c["session_id"], "s1");
    EXPECT_FALSE(c["result"].is_null());
  }
  EXPECT_EQ(lang[0]["n"], 40);
  const auto& subset = validity["groupings"]["subset"];
  ASSERT_EQ(subset.size(), 8u);
  EXPECT_EQ(subset[0]["group"], "mental");
  EXPECT_EQ(subset[0]["n"], 20);
  auto reliability = read_json(out / "reliability/reliability.json");
  ASSERT_EQ(reliability["cells"].size(), 6u);
  for (const auto& c : reliability["cells"]) EXPECT_DOUBLE_EQ(c["result"]["rho"].get<double>(), 1.0);
}

TEST_F(PipelineRun, ErrorAnalysisCoversMetaphorsOnly) {
  auto table = csv::read_file((out / "error-analysis/absolute_error.csv").string());
  EXPECT_EQ(table.rows.size(), 2u * (40 + 40 + 25));
  auto model = read_json(out / "error-analysis/error_model.json");
  std::vector<std::string> terms;
  for (const auto& c : model["ols"]["coefficients"]) terms.push_back(c["term"]);
  EXPECT_NE(std::find(terms.begin(), terms.end(), "human_rating:model[model-b]"), terms.end());
  EXPECT_NE(std::find(terms.begin(), terms.end(), "human_rating:dimension[Imageability]"), terms.end());
  EXPECT_FALSE(model["study_intercept"].is_null());
}

TEST_F(PipelineRun, SubstitutionWithSubsets) {
  auto sub = read_json(out / "substitute/substitution.json");
  ASSERT_EQ(sub["analyses"].size(), 3u);  // all, mental, physical
  EXPECT_EQ(sub["analyses"][0]["subset"], "all");
  EXPECT_EQ(sub["analyses"][1]["subset"], "mental");
  const auto& rows = sub["analyses"][0]["rows"];
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0]["source"], "human");
  EXPECT_EQ(rows[0]["fit"]["objective"], "REML");
  EXPECT_EQ(rows[0]["fit_ml"]["objective"], "ML");
}

TEST_F(PipelineRun, ReportListsPlotsAndNotices) {
  auto report = read_json(out / "report/report.json");
  std::vector<std::string> plots = report["plots"];
  for (const auto& p : plots) {
    auto svg = pipeline::io::read_file(out / "report" / p);
    EXPECT_NE(svg.find("<svg xmlns"), std::string::npos) << p;
    EXPECT_NE(svg.find("</svg>"), std::string::npos) << p;
  }
  EXPECT_NE(std::find(plots.begin(), plots.end(), "plots/scatter_familiarity_italian.svg"), plots.end());
  EXPECT_NE(std::find(plots.begin(), plots.end(), "plots/subsets_familiarity.svg"), plots.end());
  std::vector<std::string> notices = report["notices"];
  EXPECT_NE(std::find(notices.begin(), notices.end(),
                      "no Imageability ratings for Italian items; scatter plot skipped"),
            notices.end());
  auto md = pipeline::io::read_file(out / "report/report.md");
  EXPECT_NE(md.find("model-a"), std::string::npos);
}

TEST_F(PipelineRun, DeterministicAcrossRunsAndRegeneration) {
  auto second = temp_dir("second");
  pipeline::RunOptions opts;
  opts.output_dir = second;
  Pipeline(load_mini(), opts).run(Stage::All);
  EXPECT_EQ(snapshot(out), snapshot(second));

  auto before = snapshot(second);
  fs::remove_all(second / "report");
  Pipeline(load_mini(), opts).run(Stage::Report);
  EXPECT_EQ(snapshot(second), before);

  // Elicitation is served entirely from the cache.
  auto backend = std::make_shared<FailingBackend>();
  opts.backend = backend;
  Pipeline(load_mini(), opts).run(Stage::Elicit);
  EXPECT_EQ(backend->calls, 0);
  EXPECT_EQ(snapshot(second), before);
  fs::remove_all(second);
}

TEST(PipelineErrors, MissingPrerequisites) {
  auto dir = temp_dir("missing");
  pipeline::RunOptions opts;
  opts.output_dir = dir;
  Pipeline p(load_mini(), opts);
  auto f = run_expecting_failure(p, Stage::Validate);
  EXPECT_EQ(f.kind(), ErrorKind::MissingPrerequisite);
  EXPECT_EQ(f.exit_code(), 3);
  EXPECT_NE(std::string(f.what()).find("run 'ingest' first"), std::string::npos) << f.what();
  p.run(Stage::Ingest);
  f = run_expecting_failure(p, Stage::Aggregate);
  EXPECT_NE(std::string(f.what()).find("run 'elicit' first"), std::string::npos) << f.what();
  fs::remove_all(dir);
}

TEST(PipelineErrors, LiveBackendWithoutKeyIsCredentialError) {
  auto cfg = load_mini();
  cfg.backend.kind = BackendKind::Live;
  cfg.backend.endpoint = "http://127.0.0.1:9/v1/chat/completions";
  auto dir = temp_dir("live");
  pipeline::RunOptions opts;
  opts.output_dir = dir;
  ::unsetenv(kApiKeyEnv);
  Pipeline p(cfg, opts);
  p.run(Stage::Ingest);
  auto f = run_expecting_failure(p, Stage::Elicit);
  EXPECT_EQ(f.kind(), ErrorKind::Credential);
  EXPECT_EQ(f.exit_code(), 4);
  EXPECT_FALSE(fs::exists(dir / "elicit/cache.jsonl") && fs::file_size(dir / "elicit/cache.jsonl") > 0);
  fs::remove_all(dir);
}

TEST(PipelineErrors, BadCorpusIsDataError) {
  auto cfg = load_mini();
  auto dir = temp_dir("badcorpus");
  pipeline::io::write_file(dir / "bad.csv", "study_id,item_id\nx,y\n");
  cfg.corpus = dir / "bad.csv";
  pipeline::RunOptions opts;
  opts.output_dir = dir / "out";
  Pipeline p(cfg, opts);
  auto f = run_expecting_failure(p, Stage::Ingest);
  EXPECT_EQ(f.kind(), ErrorKind::Ingest);
  EXPECT_EQ(f.exit_code(), 6);
  fs::remove_all(dir);
}

TEST(PipelineScope, OnlyRestrictsToOneStudy) {
  auto dir = temp_dir("only");
  pipeline::RunOptions opts;
  opts.output_dir = dir;
  opts.only = "it_study";
  Pipeline(load_mini(), opts).run(Stage::All);
  auto ratings = read_rating_table((dir / "aggregate/ratings.csv").string());
  ASSERT_EQ(ratings.size(), 2u * 2u * 35u);
  for (const auto& r : ratings) EXPECT_EQ(r.study_id, "it_study");
  EXPECT_EQ(read_json(dir / "manifest.json")["scope"], "it_study");
  fs::remove_all(dir);
}

// --- plots ------------------------------------------------------------------

TEST(Plots, ScatterDrawsDiagonalAndLegend) {
  std::vector<double> v{1, 2, 3, 4, 5, 6, 7};
  auto svg = plot::scatter_with_marginals("T & <t>", "x", "y", 1, 7, {{"a<b", v, v}}).str();
  EXPECT_NE(svg.find("T &amp; &lt;t&gt;"), std::string::npos);
  EXPECT_NE(svg.find("a&lt;b (n = 7)"), std::string::npos);
  EXPECT_EQ(svg.find("a<b"), std::string::npos);
  EXPECT_EQ(std::count(svg.begin(), svg.end(), '\n') > 10, true);
  // Same input, same bytes.
  EXPECT_EQ(svg, plot::scatter_with_marginals("T & <t>", "x", "y", 1, 7, {{"a<b", v, v}}).str());
}

TEST(Plots, DensityIntegratesToOne) {
  std::vector<double> v{2, 2.5, 3, 3.2, 4, 5.5, 6};
  auto d = plot::density(v, -5, 15, 400);
  double area = 0;
  for (std::size_t i = 1; i < d.size(); ++i) area += 0.5 * (d[i].second + d[i - 1].second) * (d[i].first - d[i - 1].first);
  EXPECT_NEAR(area, 1.0, 1e-3);
}
