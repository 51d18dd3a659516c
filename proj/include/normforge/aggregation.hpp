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
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "normforge/corpus.hpp"
#include "normforge/csv.hpp"
#include "normforge/elicitation.hpp"
#include "normforge/numeric.hpp"

namespace normforge {

struct ValidCandidate {
  int value = 0;
  double logprob = 0;
};

struct DroppedCandidate {
  std::string token;
  std::string reason;  // not-an-integer | out-of-range | zero-mass

  friend bool operator==(const DroppedCandidate&, const DroppedCandidate&) = default;
};

struct ParsedCandidates {
  std::vector<ValidCandidate> valid;  // ascending by value, one entry per value
  std::vector<DroppedCandidate> dropped;
};

class UnrateableItem : public Error {
 public:
  UnrateableItem(const std::string& what, std::vector<DroppedCandidate> dropped)
      : Error(ErrorKind::Unrateable, what), dropped_(std::move(dropped)) {}
  const std::vector<DroppedCandidate>& dropped() const { return dropped_; }

 private:
  std::vector<DroppedCandidate> dropped_;
};

namespace detail {
inline std::optional<long long> parse_rating_token(const std::string& token) {
  auto t = normforge::detail::trim(token);
  if (t.empty()) return std::nullopt;
  std::size_t start = (t[0] == '+' || t[0] == '-') ? 1 : 0;
  if (start == t.size()) return std::nullopt;
  for (std::size_t i = start; i < t.size(); ++i)
    if (t[i] < '0' || t[i] > '9') return std::nullopt;
  if (t.size() - start > 9) return std::nullopt;
  return numeric::parse_int(t);
}

inline double log_add(double a, double b) {
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline std::string describe(const std::vector<DroppedCandidate>& dropped) {
  std::string out;
  for (const auto& d : dropped) {
    if (!out.empty()) out += ", ";
    out += "'" + d.token + "': " + d.reason;
  }
  return out;
}
}  // namespace detail

/// Keeps tokens that are base-10 integers within the scale once trimmed;
/// probability mass of tokens naming the same integer is summed.
inline ParsedCandidates parse_candidates(const std::vector<Candidate>& candidates, const LikertScale& scale,
                                         const std::string& context = {}) {
  ParsedCandidates out;
  std::map<int, double> merged;
  for (const auto& c : candidates) {
    auto value = detail::parse_rating_token(c.token);
    if (!value) {
      out.dropped.push_back({c.token, "not-an-integer"});
      continue;
    }
    if (*value < scale.min_point() || *value > scale.max_point()) {
      out.dropped.push_back({c.token, "out-of-range"});
      continue;
    }
    int v = static_cast<int>(*value);
    auto [it, inserted] = merged.emplace(v, c.logprob);
    if (!inserted) it->second = detail::log_add(it->second, c.logprob);
  }
  for (const auto& [v, lp] : merged) out.valid.push_back({v, lp});
  if (out.valid.empty())
    throw UnrateableItem((context.empty() ? std::string() : context + ": ") +
                             "no candidate is a rating on scale " + scale.label() + " (" +
                             detail::describe(out.dropped) + ")",
                         out.dropped);
  return out;
}

inline ParsedCandidates parse_candidates(const ElicitationRecord& record, const LikertScale& scale) {
  if (record.top_candidates.empty())
    throw UnrateableItem(record.key.study_id + "/" + record.key.item_id + ": record has no candidates", {});
  return parse_candidates(record.top_candidates, scale, record.key.study_id + "/" + record.key.item_id);
}

struct WeightedValue {
  int value = 0;
  double weight = 0;
};

struct AggregatedRating {
  RecordKey key;
  double rating = 0;
  std::vector<WeightedValue> used_candidates;
  std::vector<DroppedCandidate> dropped_candidates;
};

/// Probability-weighted rating: weights are exp(logprob) renormalized over
/// the valid candidates; rating = sum(value * weight).
inline AggregatedRating weighted_rating(const std::vector<ValidCandidate>& valid) {
  if (valid.empty()) fail(ErrorKind::InvalidArgument, "weighted_rating needs at least one valid candidate");
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& c : valid) mx = std::max(mx, c.logprob);
  AggregatedRating out;
  double total = 0;
  for (const auto& c : valid) {
    double w = std::exp(c.logprob - mx);
    if (w > 0) {
      out.used_candidates.push_back({c.value, w});
      total += w;
    } else {
      out.dropped_candidates.push_back({std::to_string(c.value), "zero-mass"});
    }
  }
  double rating = 0;
  for (auto& u : out.used_candidates) {
    u.weight /= total;
    rating += u.value * u.weight;
  }
  // Convex combination: clamp rounding spill outside the hull.
  auto [lo, hi] = std::minmax_element(out.used_candidates.begin(), out.used_candidates.end(),
                                      [](const auto& a, const auto& b) { return a.value < b.value; });
  out.rating = std::clamp(rating, static_cast<double>(lo->value), static_cast<double>(hi->value));
  return out;
}

inline AggregatedRating aggregate_record(const ElicitationRecord& record, const LikertScale& scale) {
  auto parsed = parse_candidates(record, scale);
  auto rating = weighted_rating(parsed.valid);
  rating.key = record.key;
  rating.dropped_candidates.insert(rating.dropped_candidates.begin(), parsed.dropped.begin(), parsed.dropped.end());
  return rating;
}

// ---------------------------------------------------------------------------
// Rating tables
// ---------------------------------------------------------------------------

struct RatingRow {
  std::string model;
  std::string session_id;
  std::string study_id;
  std::string item_id;
  Dimension dimension = Dimension::Familiarity;
  double rating = 0;  // native scale of the study
  int n_valid_candidates = 0;
  std::vector<DroppedCandidate> dropped;

  StimulusKey item() const { return {study_id, item_id}; }
};

using RatingTable = std::vector<RatingRow>;

inline const std::vector<std::string>& rating_columns() {
  static const std::vector<std::string> cols = {"model",  "session_id",         "study_id", "item_id",
                                                "dimension", "rating", "n_valid_candidates", "dropped"};
  return cols;
}

inline std::string format_dropped(const std::vector<DroppedCandidate>& dropped) {
  if (dropped.empty()) return {};
  Json arr = Json::array();
  for (const auto& d : dropped) arr.push_back({{"token", d.token}, {"reason", d.reason}});
  return arr.dump();
}

inline void write_rating_table(const RatingTable& table, std::ostream& out) {
  csv::write_row(out, rating_columns());
  for (const auto& r : table)
    csv::write_row(out, {r.model, r.session_id, r.study_id, r.item_id, dimension_name(r.dimension),
                         numeric::format_double(r.rating), std::to_string(r.n_valid_candidates),
                         format_dropped(r.dropped)});
}

inline RatingTable read_rating_table(const std::string& path) {
  auto table = csv::read_file(path);
  std::vector<std::size_t> col;
  for (const auto& name : rating_columns()) col.push_back(table.column(name));
  RatingTable out;
  for (const auto& row : table.rows) {
    auto where = path + ": line " + std::to_string(row.line);
    RatingRow r;
    r.model = row.fields[col[0]];
    r.session_id = row.fields[col[1]];
    r.study_id = row.fields[col[2]];
    r.item_id = row.fields[col[3]];
    auto dim = parse_dimension(row.fields[col[4]]);
    if (!dim) fail(ErrorKind::Ingest, where + ": unknown dimension");
    r.dimension = *dim;
    auto rating = numeric::parse_double(row.fields[col[5]]);
    if (!rating) fail(ErrorKind::Ingest, where + ": rating is not a number");
    r.rating = *rating;
    auto nv = numeric::parse_int(row.fields[col[6]]);
    if (!nv) fail(ErrorKind::Ingest, where + ": n_valid_candidates is not an integer");
    r.n_valid_candidates = static_cast<int>(*nv);
    if (!row.fields[col[7]].empty()) {
      try {
        for (const auto& d : Json::parse(row.fields[col[7]]))
          r.dropped.push_back({d.at("token").get<std::string>(), d.at("reason").get<std::string>()});
      } catch (const Json::exception&) {
        fail(ErrorKind::Ingest, where + ": malformed dropped column");
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Human norms as a rating table (model "human", empty session).
inline RatingTable human_rating_table(const StudyCorpus& corpus) {
  RatingTable out;
  for (const auto& s : corpus.stimuli())
    for (const auto& [d, norm] : s.human_means)
      out.push_back({"human", "", s.study_id, s.item_id, d, norm.mean, 0, {}});
  return out;
}

struct UnrateableEntry {
  RecordKey key;
  std::string reason;
};

struct AggregationResult {
  RatingTable table;
  std::vector<UnrateableEntry> unrateable;
};

inline AggregationResult aggregate_session(const std::vector<ElicitationRecord>& records, const StudyCorpus& corpus) {
  AggregationResult out;
  for (const auto& record : records) {
    StimulusKey item{record.key.study_id, record.key.item_id};
    if (!corpus.find(item))
      fail(ErrorKind::Join, "record for " + item.str() + " does not match any corpus item");
    const auto& scale = corpus.scale(record.key.study_id, record.key.dimension);
    try {
      auto agg = aggregate_record(record, scale);
      out.table.push_back({record.key.model, record.key.session_id, record.key.study_id, record.key.item_id,
                           record.key.dimension, agg.rating, static_cast<int>(agg.used_candidates.size()),
                           agg.dropped_candidates});
    } catch (const UnrateableItem& e) {
      out.unrateable.push_back({record.key, e.what()});
    }
  }
  return out;
}

}  // namespace normforge
