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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>

#include "normforge/aggregation.hpp"
#include "normforge/stats.hpp"
#include "normforge/validation.hpp"
#include "oracles.hpp"

using namespace normforge;

namespace {

std::vector<Candidate> worked_tokens() {
  return {{"2", std::log(0.768)}, {"3", std::log(0.195)}, {"1", std::log(0.037)}};
}

double rating_of(const std::vector<Candidate>& c, LikertScale scale = LikertScale::seven_point()) {
  return weighted_rating(parse_candidates(c, scale).valid).rating;
}

/// Random vector with many ties.
std::vector<double> tied_vector(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> d(1, static_cast<int>(std::max<std::size_t>(2, n / 2)));
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// Corpus of n English metaphors (subset a/b alternating) plus n/2 literals,
/// rated on Familiarity with a 7-point scale.
StudyCorpus small_corpus(std::size_t n) {
  CorpusBuilder b({{{"s", Dimension::Familiarity}, "Rate familiarity."}});
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(1, 7);
  for (std::size_t i = 0; i < n + n / 2; ++i) {
    bool metaphor = i < n;
    Stimulus s{"s", "i" + std::to_string(i), "text " + std::to_string(i), "English",
               metaphor ? ItemClass::Metaphor : ItemClass::Literal,
               metaphor ? std::optional<std::string>(i % 2 ? "b" : "a") : std::nullopt, {}};
    b.add(s, Dimension::Familiarity, {std::round(u(rng) * 100) / 100, 20}, LikertScale::seven_point());
  }
  return std::move(b).build();
}

RatingTable machine_from(const RatingTable& human, const std::string& model, const std::string& session,
                         const std::function<double(double, std::size_t)>& f) {
  RatingTable out;
  for (std::size_t i = 0; i < human.size(); ++i) {
    auto r = human[i];
    r.model = model;
    r.session_id = session;
    r.rating = f(r.rating, i);
    r.n_valid_candidates = 3;
    out.push_back(r);
  }
  return out;
}

}  // namespace

// --- aggregation ------------------------------------------------------------

TEST(Aggregation, WorkedExample) {
  EXPECT_NEAR(rating_of(worked_tokens()), 2.158, 1e-3);
  auto parsed = parse_candidates(worked_tokens(), LikertScale::seven_point());
  EXPECT_EQ(parsed.valid.size(), 3u);
  EXPECT_TRUE(parsed.dropped.empty());
}

TEST(Aggregation, SingleAndSymmetric) {
  EXPECT_DOUBLE_EQ(rating_of({{"5", std::log(0.3)}}), 5.0);
  EXPECT_DOUBLE_EQ(rating_of({{"1", std::log(0.5)}, {"7", std::log(0.5)}}), 4.0);
}

TEST(Aggregation, DropsAndRenormalizes) {
  auto parsed = parse_candidates({{"2", -0.5}, {" 3", -1.0}, {"9", -2.0}}, LikertScale::seven_point());
  ASSERT_EQ(parsed.valid.size(), 2u);
  EXPECT_EQ(parsed.valid[0].value, 2);
  EXPECT_EQ(parsed.valid[1].value, 3);
  ASSERT_EQ(parsed.dropped.size(), 1u);
  EXPECT_EQ(parsed.dropped[0].token, "9");
  EXPECT_EQ(parsed.dropped[0].reason, "out-of-range");
  double w2 = std::exp(-0.5), w3 = std::exp(-1.0);
  EXPECT_NEAR(weighted_rating(parsed.valid).rating, (2 * w2 + 3 * w3) / (w2 + w3), 1e-12);
}

TEST(Aggregation, MergesDuplicateIntegers) {
  auto parsed = parse_candidates({{"3", std::log(0.4)}, {" 3", std::log(0.2)}, {"5", std::log(0.4)}},
                                 LikertScale::seven_point());
  ASSERT_EQ(parsed.valid.size(), 2u);
  EXPECT_NEAR(std::exp(parsed.valid[0].logprob), 0.6, 1e-12);
  EXPECT_NEAR(weighted_rating(parsed.valid).rating, 3 * 0.6 + 5 * 0.4, 1e-12);
}

TEST(Aggregation, UnrateableCarriesReasons) {
  try {
    parse_candidates({{"yes", -0.1}, {"no", -1}, {"maybe", -2}}, LikertScale::seven_point(), "s/i1");
    FAIL();
  } catch (const UnrateableItem& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Unrateable);
    EXPECT_EQ(e.dropped().size(), 3u);
    EXPECT_NE(std::string(e.what()).find("s/i1"), std::string::npos);
  }
  EXPECT_THROW(parse_candidates({{"0", -0.1}, {"8", -1}}, LikertScale::seven_point()), UnrateableItem);
  EXPECT_THROW(parse_candidates({{"6", -0.1}}, LikertScale(1, 5)), UnrateableItem);
}

TEST(Aggregation, Invariants) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lp(-6, 0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ValidCandidate> valid;
    for (int v = 1; v <= 7; ++v)
      if (rng() % 2) valid.push_back({v, lp(rng)});
    if (valid.empty()) continue;
    double r = weighted_rating(valid).rating;
    EXPECT_GE(r, valid.front().value);
    EXPECT_LE(r, valid.back().value);
    auto shifted = valid;
    for (auto& c : shifted) c.logprob -= 3.25;
    EXPECT_NEAR(weighted_rating(shifted).rating, r, 1e-12);
    auto with_zero = valid;
    with_zero.push_back({valid.back().value == 7 ? 1 : 7, -1e6});
    std::sort(with_zero.begin(), with_zero.end(), [](auto& a, auto& b) { return a.value < b.value; });
    EXPECT_NEAR(weighted_rating(with_zero).rating, r, 1e-12);
  }
}

TEST(Aggregation, SessionTableAndUnrateableEntries) {
  auto corpus = small_corpus(10);
  std::vector<ElicitationRecord> records;
  for (std::size_t i = 0; i < 10; ++i) {
    ElicitationRecord r;
    r.key = {"m", "s1", "s", "i" + std::to_string(i), Dimension::Familiarity, "h"};
    r.top_candidates = i == 4 ? std::vector<Candidate>{{"x", -0.1}} : worked_tokens();
    records.push_back(r);
  }
  auto result = aggregate_session(records, corpus);
  ASSERT_EQ(result.table.size(), 9u);
  ASSERT_EQ(result.unrateable.size(), 1u);
  EXPECT_EQ(result.unrateable[0].key.item_id, "i4");
  EXPECT_NEAR(result.table[0].rating, 2.158, 1e-3);
  EXPECT_EQ(result.table[0].n_valid_candidates, 3);

  records[0].key.item_id = "missing";
  EXPECT_THROW(aggregate_session(records, corpus), Error);
}

TEST(Aggregation, RatingTableRoundTrip) {
  RatingTable t = {{"m", "s1", "s", "i1", Dimension::Familiarity, 2.158, 2, {{"9", "out-of-range"}}},
                   {"m", "s1", "s", "i,2", Dimension::Imageability, 5, 3, {}}};
  auto path = std::filesystem::temp_directory_path() / "nf_ratings_roundtrip.csv";
  {
    std::ofstream out(path);
    write_rating_table(t, out);
  }
  auto back = read_rating_table(path.string());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].item_id, "i,2");
  EXPECT_DOUBLE_EQ(back[0].rating, 2.158);
  ASSERT_EQ(back[0].dropped.size(), 1u);
  EXPECT_EQ(back[0].dropped[0].reason, "out-of-range");
  std::filesystem::remove(path);
}

// --- ranks and correlation --------------------------------------------------

TEST(Ranks, Examples) {
  std::vector<double> a{10, 20, 30}, b{5, 5, 1};
  EXPECT_EQ(stats::ranks(a), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(stats::ranks(b), (std::vector<double>{2.5, 2.5, 1}));
  EXPECT_THROW(stats::ranks(std::vector<double>{}), Error);
  EXPECT_THROW(stats::ranks(std::vector<double>{1, NAN}), Error);
}

TEST(Ranks, MatchOracleOnTiedVectors) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    auto v = tied_vector(rng, 3 + rng() % 40);
    auto r = stats::ranks(v);
    EXPECT_EQ(r, oracle::ranks(v));
    double n = static_cast<double>(v.size());
    EXPECT_DOUBLE_EQ(std::accumulate(r.begin(), r.end(), 0.0), n * (n + 1) / 2);
    // Permutation equivariance.
    std::vector<std::size_t> perm(v.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pv(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) pv[i] = v[perm[i]];
    auto pr = stats::ranks(pv);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(pr[i], r[perm[i]]);
  }
}

TEST(Spearman, MatchesOracleAndIsSymmetric) {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t n = 3 + rng() % 40;
    auto x = tied_vector(rng, n), y = tied_vector(rng, n);
    if (std::adjacent_find(x.begin(), x.end(), std::not_equal_to<>()) == x.end()) continue;
    if (std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) == y.end()) continue;
    auto r = stats::spearman(x, y);
    EXPECT_NEAR(r.rho, oracle::spearman(x, y), 1e-12);
    EXPECT_EQ(r.rho, stats::spearman(y, x).rho);
    double t = r.rho * std::sqrt((n - 2) / (1 - r.rho * r.rho));
    if (std::fabs(r.rho) < 1) EXPECT_NEAR(r.p_value, oracle::t_two_sided_p(t, n - 2.0), 1e-9);
  }
}

TEST(Spearman, MonotoneInvarianceAndErrors) {
  std::vector<double> x{0.3, -1.2, 2.5, 0.9, 1.7, -0.4};
  std::vector<double> ex, neg;
  for (double v : x) {
    ex.push_back(std::exp(v));
    neg.push_back(-v);
  }
  EXPECT_DOUBLE_EQ(stats::spearman(x, ex).rho, 1.0);
  EXPECT_DOUBLE_EQ(stats::spearman(x, neg).rho, -1.0);
  EXPECT_EQ(stats::spearman(x, ex).p_value, 0.0);
  std::vector<double> c(6, 2.0);
  try {
    stats::spearman(x, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Degenerate);
  }
  EXPECT_THROW(stats::spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2}), Error);
  EXPECT_THROW(stats::spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2}), Error);
}

TEST(Spearman, ExactPermutationMatchesOracle) {
  std::mt19937_64 rng(44);
  for (int trial = 0; trial < 40; ++trial) {
    std::size_t n = 3 + rng() % 6;
    auto x = tied_vector(rng, n), y = tied_vector(rng, n);
    if (std::adjacent_find(x.begin(), x.end(), std::not_equal_to<>()) == x.end()) continue;
    if (std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) == y.end()) continue;
    EXPECT_NEAR(stats::spearman_exact_p(x, y), oracle::exact_spearman_p(x, y), 1e-12);
  }
  EXPECT_THROW(stats::spearman_exact_p(std::vector<double>(11, 1), std::vector<double>(11, 1)), Error);
}

TEST(Spearman, Bands) {
  EXPECT_EQ(stats::band_for(0.2), stats::SignificanceBand::NotSignificant);
  EXPECT_EQ(stats::band_for(0.05), stats::SignificanceBand::NotSignificant);
  EXPECT_EQ(stats::band_for(0.049), stats::SignificanceBand::P05);
  EXPECT_EQ(stats::band_for(0.005), stats::SignificanceBand::P01);
  EXPECT_EQ(stats::band_for(0.0001), stats::SignificanceBand::P001);
  EXPECT_EQ(stats::to_string(stats::SignificanceBand::P01), "**");
}

TEST(Numeric, StudentTAgainstBoost) {
  for (double df : {1.0, 2.0, 3.5, 10.0, 46.0, 467.0}) {
    for (double t : {-8.0, -2.1, -0.3, 0.0, 0.7, 1.96, 4.5, 30.0}) {
      EXPECT_NEAR(numeric::student_t_cdf(t, df), oracle::t_cdf(t, df), 1e-10) << "t=" << t << " df=" << df;
      EXPECT_NEAR(numeric::t_two_sided_p(t, df), oracle::t_two_sided_p(t, df), 1e-10);
    }
  }
  // Tabulated critical values.
  EXPECT_NEAR(numeric::t_two_sided_p(2.228, 10), 0.05, 1e-4);
  EXPECT_NEAR(numeric::t_two_sided_p(12.706, 1), 0.05, 1e-4);
  EXPECT_NEAR(numeric::normal_quantile(0.975), 1.959964, 1e-6);
}

// --- validity, reliability, error ------------------------------------------

TEST(Validity, SelfCorrelationAndGroups) {
  auto corpus = small_corpus(20);
  auto human = human_rating_table(corpus);
  auto machine = machine_from(human, "copy", "s1", [](double h, std::size_t) { return h; });
  for (auto g : {ValidityGrouping::Language, ValidityGrouping::Class, ValidityGrouping::Subset}) {
    auto t = validity_table(corpus, human, machine, g);
    ASSERT_FALSE(t.cells.empty());
    for (const auto& c : t.cells) {
      ASSERT_TRUE(c.result);
      EXPECT_DOUBLE_EQ(c.result->rho, 1.0);
    }
  }
  auto lang = validity_table(corpus, human, machine, ValidityGrouping::Language);
  ASSERT_EQ(lang.cells.size(), 1u);
  EXPECT_EQ(lang.cells[0].n, 20u);  // literals excluded
  auto cls = validity_table(corpus, human, machine, ValidityGrouping::Class);
  ASSERT_EQ(cls.cells.size(), 2u);
  EXPECT_EQ(cls.cells[0].group, "English/Literal");
  auto sub = validity_table(corpus, human, machine, ValidityGrouping::Subset);
  ASSERT_EQ(sub.cells.size(), 2u);
  EXPECT_EQ(sub.cells[0].group, "a");
  EXPECT_EQ(sub.cells[1].n, 10u);
}

TEST(Validity, UsesFirstSessionAndMarksSmallCells) {
  auto corpus = small_corpus(4);
  auto human = human_rating_table(corpus);
  auto s1 = machine_from(human, "m", "s1", [](double h, std::size_t) { return h; });
  auto s2 = machine_from(human, "m", "s2", [](double h, std::size_t) { return 8 - h; });
  auto machine = s2;
  machine.insert(machine.end(), s1.begin(), s1.end());
  auto t = validity_table(corpus, human, machine, ValidityGrouping::Subset);
  ASSERT_EQ(t.cells.size(), 2u);
  for (const auto& c : t.cells) {
    EXPECT_EQ(c.session_id, "s1");
    EXPECT_EQ(c.n, 2u);
    EXPECT_FALSE(c.result);
    EXPECT_EQ(c.note, "unavailable: n < 3");
  }
  // A model missing from one group gets a notice, not a cell.
  RatingTable partial;
  for (const auto& r : s1)
    if (r.item_id == "i0" || r.item_id == "i2") partial.push_back(r);
  auto t2 = validity_table(corpus, human, partial, ValidityGrouping::Subset);
  EXPECT_EQ(t2.cells.size(), 1u);
  ASSERT_EQ(t2.notices.size(), 1u);
  EXPECT_NE(t2.notices[0].find("b: no joined ratings"), std::string::npos);
}

TEST(Validity, StandardizesBeforeCorrelating) {
  CorpusBuilder b({{{"five", Dimension::Familiarity}, "x"}});
  for (int i = 0; i < 5; ++i)
    b.add({"five", "i" + std::to_string(i), "t", "Italian", ItemClass::Metaphor, {}, {}}, Dimension::Familiarity,
          {1.0 + i, 10}, LikertScale(1, 5));
  auto corpus = std::move(b).build();
  auto human = human_rating_table(corpus);
  auto machine = machine_from(human, "m", "s1", [](double h, std::size_t) { return h; });
  auto err = absolute_error(corpus, human, machine);
  ASSERT_EQ(err.rows.size(), 5u);
  EXPECT_DOUBLE_EQ(err.rows[4].human, 7.0);
  EXPECT_DOUBLE_EQ(err.rows[2].human, 4.0);
  for (const auto& r : err.rows) EXPECT_EQ(r.error, 0.0);
}

TEST(Retest, IdenticalSessionsAndSwappedPair) {
  auto corpus = small_corpus(10);
  std::vector<double> truth;
  RatingTable human;
  for (const auto& r : human_rating_table(corpus))
    if (corpus.find(r.item())->item_class == ItemClass::Metaphor) human.push_back(r);
  auto a = machine_from(human, "m", "s1", [](double h, std::size_t) { return h; });
  auto cells = test_retest(corpus, a, a);
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_DOUBLE_EQ(cells[0].result->rho, 1.0);

  auto b = machine_from(human, "m", "s2", [](double h, std::size_t) { return h; });
  std::swap(b[2].rating, b[7].rating);
  std::vector<double> x, y;
  for (std::size_t i = 0; i < a.size(); ++i) {
    x.push_back(a[i].rating);
    y.push_back(b[i].rating);
  }
  cells = test_retest(corpus, a, b);
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_EQ(cells[0].n, 10u);
  EXPECT_EQ(cells[0].session_b, "s2");
  EXPECT_NEAR(cells[0].result->rho, oracle::spearman(x, y), 1e-12);

  b.pop_back();
  try {
    test_retest(corpus, a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Join);
    EXPECT_NE(std::string(e.what()).find("missing in session b: m s/i9"), std::string::npos) << e.what();
  }
}

TEST(Retest, SplitSessions) {
  RatingTable t = {{"m", "s2", "s", "i", Dimension::Familiarity, 1, 1, {}},
                   {"m", "s1", "s", "i", Dimension::Familiarity, 2, 1, {}},
                   {"solo", "s1", "s", "i", Dimension::Familiarity, 3, 1, {}}};
  auto [a, b] = split_sessions(t);
  ASSERT_EQ(a.size(), 1u);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(a[0].session_id, "s1");
  EXPECT_EQ(b[0].session_id, "s2");
}

TEST(AbsoluteError, DefinitionAndMeans) {
  auto corpus = small_corpus(6);
  auto human = human_rating_table(corpus);
  auto machine = machine_from(human, "m", "s1", [](double h, std::size_t i) { return i == 0 ? (h < 4 ? h + 1.5 : h - 1.5) : h; });
  auto err = absolute_error(corpus, human, machine);
  ASSERT_EQ(err.rows.size(), human.size());
  EXPECT_NEAR(err.rows[0].error, 1.5, 1e-12);
  auto means = mean_errors(err);
  ASSERT_EQ(means.size(), 1u);
  EXPECT_NEAR(means[0].mean_error, 1.5 / static_cast<double>(human.size()), 1e-12);

  RatingTable stray = machine;
  stray[0].item_id = "ghost";
  auto err2 = absolute_error(corpus, human, stray);
  EXPECT_EQ(err2.join_failures.size(), 1u);
  EXPECT_EQ(err2.rows.size(), human.size() - 1);
}
