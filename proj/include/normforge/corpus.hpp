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
#include <cctype>
#include <cmath>
#include <compare>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "normforge/csv.hpp"
#include "normforge/error.hpp"
#include "normforge/numeric.hpp"

namespace normforge {

/// Integer rating scale [min_point, max_point].
class LikertScale {
 public:
  LikertScale(int min_point, int max_point) : min_(min_point), max_(max_point) {
    if (min_point < 1) fail(ErrorKind::InvalidArgument, "scale floor must be >= 1");
    if (min_point >= max_point) fail(ErrorKind::InvalidArgument, "degenerate scale: min must be < max");
  }

  static LikertScale seven_point() { return {1, 7}; }

  int min_point() const { return min_; }
  int max_point() const { return max_; }
  int points() const { return max_ - min_ + 1; }
  double midpoint() const { return 0.5 * (min_ + max_); }
  bool contains(double v) const { return v >= min_ && v <= max_; }

  // 5-, 6- and 7-point scales starting at 1 are the only ones in the source materials.
  bool supported() const { return min_ == 1 && (max_ == 5 || max_ == 6 || max_ == 7); }

  std::string label() const { return std::to_string(min_) + "-" + std::to_string(max_); }

  friend bool operator==(const LikertScale&, const LikertScale&) = default;

 private:
  int min_;
  int max_;
};

/// Affine map between scales preserving both endpoints.
inline double standardize(double value, const LikertScale& from, const LikertScale& to) {
  if (!from.contains(value))
    fail(ErrorKind::InvalidArgument, "value " + numeric::format_double(value) + " outside scale " + from.label());
  if (from == to) return value;
  double out = (value - from.min_point()) * static_cast<double>(to.max_point() - to.min_point()) /
                   static_cast<double>(from.max_point() - from.min_point()) +
               to.min_point();
  return std::clamp(out, static_cast<double>(to.min_point()), static_cast<double>(to.max_point()));
}

enum class Dimension { Comprehensibility, Familiarity, Imageability };

inline constexpr Dimension kAllDimensions[] = {Dimension::Comprehensibility, Dimension::Familiarity,
                                               Dimension::Imageability};

inline std::string dimension_name(Dimension d) {
  switch (d) {
    case Dimension::Familiarity: return "Familiarity";
    case Dimension::Imageability: return "Imageability";
    case Dimension::Comprehensibility: return "Comprehensibility";
  }
  return "?";
}

inline std::optional<Dimension> parse_dimension(std::string_view text) {
  std::string lower;
  for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "familiarity") return Dimension::Familiarity;
  if (lower == "imageability") return Dimension::Imageability;
  if (lower == "comprehensibility") return Dimension::Comprehensibility;
  return std::nullopt;
}

/// Instruction gloss for each dimension as worded in the source norming forms.
inline std::string default_definition(Dimension d) {
  switch (d) {
    case Dimension::Familiarity: return "Frequency of experience of the expression";
    case Dimension::Imageability: return "Ease with which each expression evoked a visual mental image";
    case Dimension::Comprehensibility: return "How suitable or natural the expression is";
  }
  return {};
}

enum class ItemClass { Anomalous, Literal, Metaphor };

inline std::string class_name(ItemClass c) {
  switch (c) {
    case ItemClass::Metaphor: return "Metaphor";
    case ItemClass::Literal: return "Literal";
    case ItemClass::Anomalous: return "Anomalous";
  }
  return "?";
}

inline std::optional<ItemClass> parse_class(std::string_view text) {
  std::string lower;
  for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "metaphor") return ItemClass::Metaphor;
  if (lower == "literal") return ItemClass::Literal;
  if (lower == "anomalous") return ItemClass::Anomalous;
  return std::nullopt;
}

struct HumanNorm {
  double mean = 0;
  int n_raters = 0;
};

struct StimulusKey {
  std::string study_id;
  std::string item_id;

  auto operator<=>(const StimulusKey&) const = default;
  std::string str() const { return study_id + "/" + item_id; }
};

struct Stimulus {
  std::string study_id;
  std::string item_id;
  std::string text;
  std::string language;  // "English", "Italian" or any other tag
  ItemClass item_class = ItemClass::Metaphor;
  std::optional<std::string> subset;
  std::map<Dimension, HumanNorm> human_means;

  StimulusKey key() const { return {study_id, item_id}; }
};

struct Study {
  std::map<Dimension, LikertScale> scales;
  std::map<Dimension, std::string> instructions;
};

/// Instruction text per (study_id, dimension); declares which studies exist.
using InstructionSet = std::map<std::pair<std::string, Dimension>, std::string>;

/// Immutable after loading; stimuli keep file order.
class StudyCorpus {
 public:
  StudyCorpus() = default;

  const std::map<std::string, Study>& studies() const { return studies_; }
  const std::vector<Stimulus>& stimuli() const { return stimuli_; }
  std::size_t size() const { return stimuli_.size(); }

  const Study& study(const std::string& id) const {
    auto it = studies_.find(id);
    if (it == studies_.end()) fail(ErrorKind::InvalidArgument, "unknown study '" + id + "'");
    return it->second;
  }

  const Stimulus* find(const StimulusKey& key) const {
    auto it = index_.find(key);
    return it == index_.end() ? nullptr : &stimuli_[it->second];
  }

  const LikertScale& scale(const std::string& study_id, Dimension d) const {
    const auto& s = study(study_id);
    auto it = s.scales.find(d);
    if (it == s.scales.end())
      fail(ErrorKind::InvalidArgument, "study '" + study_id + "' has no scale for " + dimension_name(d));
    return it->second;
  }

  const std::string& instructions(const std::string& study_id, Dimension d) const {
    const auto& s = study(study_id);
    auto it = s.instructions.find(d);
    if (it == s.instructions.end())
      fail(ErrorKind::Config, "no instructions for study '" + study_id + "', " + dimension_name(d));
    return it->second;
  }

  /// Human mean of `key` on `d`, standardized to `to`; nullopt if unrated.
  std::optional<double> human_on(const Stimulus& item, Dimension d, const LikertScale& to) const {
    auto it = item.human_means.find(d);
    if (it == item.human_means.end()) return std::nullopt;
    return standardize(it->second.mean, scale(item.study_id, d), to);
  }

  friend class CorpusBuilder;

 private:
  std::map<std::string, Study> studies_;
  std::vector<Stimulus> stimuli_;
  std::map<StimulusKey, std::size_t> index_;
};

/// Validating builder used by the loader and by tests.
class CorpusBuilder {
 public:
  explicit CorpusBuilder(InstructionSet instructions) : instructions_(std::move(instructions)) {
    for (const auto& [key, text] : instructions_) {
      if (text.empty())
        fail(ErrorKind::Config, "empty instructions for study '" + key.first + "', " + dimension_name(key.second));
      corpus_.studies_[key.first].instructions[key.second] = text;
    }
  }

  /// Adds one (item, dimension) observation. `where` prefixes error messages.
  void add(const Stimulus& item_fields, Dimension d, HumanNorm norm, LikertScale scale,
           const std::string& where = {}) {
    auto prefix = where.empty() ? std::string() : where + ": ";
    auto study_it = corpus_.studies_.find(item_fields.study_id);
    if (study_it == corpus_.studies_.end())
      fail(ErrorKind::Ingest, prefix + "undeclared study '" + item_fields.study_id + "'");
    Study& study = study_it->second;
    if (!study.instructions.contains(d))
      fail(ErrorKind::Ingest, prefix + "study '" + item_fields.study_id + "' declares no instructions for " +
                                  dimension_name(d));
    if (!scale.supported())
      fail(ErrorKind::Ingest, prefix + "unsupported scale " + scale.label() + " (expected 1-5, 1-6 or 1-7)");
    auto [scale_it, inserted] = study.scales.emplace(d, scale);
    if (!inserted && !(scale_it->second == scale))
      fail(ErrorKind::Ingest, prefix + "scale " + scale.label() + " conflicts with " + scale_it->second.label() +
                                  " declared earlier for study '" + item_fields.study_id + "', " +
                                  dimension_name(d));
    if (!scale.contains(norm.mean))
      fail(ErrorKind::Ingest, prefix + "human_mean " + numeric::format_double(norm.mean) + " outside scale " +
                                  scale.label() + " for item '" + item_fields.item_id + "'");
    if (norm.n_raters < 0) fail(ErrorKind::Ingest, prefix + "n_raters must be non-negative");
    if (item_fields.subset && item_fields.item_class != ItemClass::Metaphor)
      fail(ErrorKind::Ingest, prefix + "subset tag on non-metaphor item '" + item_fields.item_id + "'");
    if (item_fields.text.empty()) fail(ErrorKind::Ingest, prefix + "empty item text");
    if (item_fields.language.empty()) fail(ErrorKind::Ingest, prefix + "empty language");

    auto key = item_fields.key();
    auto found = corpus_.index_.find(key);
    if (found == corpus_.index_.end()) {
      Stimulus s = item_fields;
      s.human_means.clear();
      s.human_means[d] = norm;
      corpus_.index_.emplace(key, corpus_.stimuli_.size());
      corpus_.stimuli_.push_back(std::move(s));
      return;
    }
    Stimulus& existing = corpus_.stimuli_[found->second];
    if (existing.text != item_fields.text || existing.language != item_fields.language ||
        existing.item_class != item_fields.item_class || existing.subset != item_fields.subset)
      fail(ErrorKind::Ingest, prefix + "duplicate (study_id, item_id) " + key.str() +
                                  " with conflicting item fields");
    if (existing.human_means.contains(d))
      fail(ErrorKind::Ingest, prefix + "duplicate (study_id, item_id) " + key.str() + " for " + dimension_name(d));
    existing.human_means[d] = norm;
  }

  StudyCorpus build() && { return std::move(corpus_); }

 private:
  InstructionSet instructions_;
  StudyCorpus corpus_;
};

inline const std::vector<std::string>& corpus_columns() {
  static const std::vector<std::string> cols = {"study_id", "item_id",    "text",     "language",
                                                "item_class", "subset",   "dimension", "human_mean",
                                                "n_raters", "scale_min", "scale_max"};
  return cols;
}

namespace detail {
inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}
}  // namespace detail

inline StudyCorpus parse_corpus(std::istream& in, const InstructionSet& instructions,
                                const std::string& source = "<stream>") {
  auto table = csv::parse(in, source);
  std::vector<std::size_t> col;
  for (const auto& name : corpus_columns()) {
    if (!table.has_column(name)) fail(ErrorKind::Ingest, source + ": missing column '" + name + "'");
    col.push_back(table.column(name));
  }
  CorpusBuilder builder(instructions);
  for (const auto& row : table.rows) {
    auto where = source + ": line " + std::to_string(row.line);
    auto field = [&](std::size_t i) { return detail::trim(row.fields[col[i]]); };
    auto bad = [&](std::size_t i, const std::string& why) {
      fail(ErrorKind::Ingest, where + ", column '" + corpus_columns()[i] + "': " + why);
    };
    Stimulus s;
    s.study_id = field(0);
    s.item_id = field(1);
    s.text = field(2);
    s.language = field(3);
    if (s.study_id.empty()) bad(0, "empty study_id");
    if (s.item_id.empty()) bad(1, "empty item_id");
    if (s.text.empty()) bad(2, "empty text");
    if (s.language.empty()) bad(3, "empty language");
    auto cls = parse_class(field(4));
    if (!cls) bad(4, "unknown item_class '" + field(4) + "'");
    s.item_class = *cls;
    if (auto sub = field(5); !sub.empty()) s.subset = sub;
    auto dim = parse_dimension(field(6));
    if (!dim) bad(6, "unknown dimension '" + field(6) + "'");
    auto mean = numeric::parse_double(field(7));
    if (!mean || !std::isfinite(*mean)) bad(7, "not a number: '" + field(7) + "'");
    auto raters = numeric::parse_int(field(8));
    if (!raters) bad(8, "not an integer: '" + field(8) + "'");
    auto smin = numeric::parse_int(field(9));
    if (!smin) bad(9, "not an integer: '" + field(9) + "'");
    auto smax = numeric::parse_int(field(10));
    if (!smax) bad(10, "not an integer: '" + field(10) + "'");
    if (*smin < 1 || *smin >= *smax) bad(10, "invalid scale " + field(9) + "-" + field(10));
    builder.add(s, *dim, HumanNorm{*mean, static_cast<int>(*raters)},
                LikertScale(static_cast<int>(*smin), static_cast<int>(*smax)), where);
  }
  return std::move(builder).build();
}

inline StudyCorpus load_corpus(const std::string& path, const InstructionSet& instructions) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Ingest, "cannot open corpus file '" + path + "'");
  return parse_corpus(in, instructions, path);
}

/// Writes the corpus in the ingestion schema: one row per item x dimension,
/// items in corpus order, dimensions in enum order.
inline void write_corpus(const StudyCorpus& corpus, std::ostream& out) {
  csv::write_row(out, corpus_columns());
  for (const auto& s : corpus.stimuli()) {
    for (const auto& [d, norm] : s.human_means) {
      const auto& scale = corpus.scale(s.study_id, d);
      csv::write_row(out, {s.study_id, s.item_id, s.text, s.language, class_name(s.item_class),
                           s.subset.value_or(""), dimension_name(d), numeric::format_double(norm.mean),
                           std::to_string(norm.n_raters), std::to_string(scale.min_point()),
                           std::to_string(scale.max_point())});
    }
  }
}

enum class PartitionKey { Class, Subset, Language, Dimension };

inline PartitionKey parse_partition_key(std::string_view text) {
  if (text == "class") return PartitionKey::Class;
  if (text == "subset") return PartitionKey::Subset;
  if (text == "language") return PartitionKey::Language;
  if (text == "dimension" || text == "dimension-availability") return PartitionKey::Dimension;
  fail(ErrorKind::InvalidArgument, "unknown partition key '" + std::string(text) + "'");
}

struct ItemGroup {
  std::string name;
  std::vector<StimulusKey> members;
};

/// Groups items by `key`, sorted by group name. Items without the key (no
/// subset tag) are left out. Dimension groups hold every item rated on that
/// dimension, so an item rated on two dimensions appears in both groups;
/// disjointness holds over (item, dimension) ratings.
inline std::vector<ItemGroup> partition(const StudyCorpus& corpus, PartitionKey key) {
  std::map<std::string, std::vector<StimulusKey>> groups;
  for (const auto& s : corpus.stimuli()) {
    switch (key) {
      case PartitionKey::Class: groups[class_name(s.item_class)].push_back(s.key()); break;
      case PartitionKey::Subset:
        if (s.subset) groups[*s.subset].push_back(s.key());
        break;
      case PartitionKey::Language: groups[s.language].push_back(s.key()); break;
      case PartitionKey::Dimension:
        for (const auto& [d, norm] : s.human_means) groups[dimension_name(d)].push_back(s.key());
        break;
    }
  }
  std::vector<ItemGroup> out;
  for (auto& [name, members] : groups) out.push_back({name, std::move(members)});
  return out;
}

}  // namespace normforge
