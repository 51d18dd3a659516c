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
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "normforge/corpus.hpp"
#include "normforge/error.hpp"
#include "normforge/hash.hpp"

namespace normforge {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Parameters and prompts
// ---------------------------------------------------------------------------

/// Query hyperparameters. The defaults are the deterministic protocol:
/// greedy decoding, one output token, top-3 alternatives with logprobs.
struct ElicitationParams {
  std::string model_name;
  double temperature = 0.0;
  int max_output_tokens = 1;
  int top_logprob_count = 3;
  std::string session_id = "s1";
  int retry_limit = 5;
  int concurrency_limit = 4;

  void validate() const {
    if (model_name.empty()) fail(ErrorKind::Config, "model_name must be set");
    if (session_id.empty()) fail(ErrorKind::Config, "session_id must be set");
    if (!(temperature >= 0)) fail(ErrorKind::Config, "temperature must be >= 0");
    if (max_output_tokens < 1) fail(ErrorKind::Config, "max_output_tokens must be >= 1");
    if (top_logprob_count < 1 || top_logprob_count > 20)
      fail(ErrorKind::Config, "top_logprob_count must be within [1, 20]");
    if (retry_limit < 0) fail(ErrorKind::Config, "retry_limit must be >= 0");
    if (concurrency_limit < 1) fail(ErrorKind::Config, "concurrency_limit must be >= 1");
  }
};

enum class InstructionRole { User, System };

inline InstructionRole parse_instruction_role(const std::string& text) {
  if (text == "user") return InstructionRole::User;
  if (text == "system") return InstructionRole::System;
  fail(ErrorKind::Config, "instruction_role must be 'user' or 'system', got '" + text + "'");
}

struct PromptOptions {
  InstructionRole role = InstructionRole::User;
  // {min} and {max} are replaced by the scale bounds.
  std::string rating_constraint = "Answer only with the rating value, a single number from {min} to {max}.";
};

struct ChatMessage {
  std::string role;
  std::string content;
};

struct PromptSpec {
  std::string instructions;
  std::string rating_constraint;
  std::string item_text;
  LikertScale scale = LikertScale::seven_point();
  InstructionRole role = InstructionRole::User;

  std::string item_block() const {
    return "Rate the following expression on a scale from " + std::to_string(scale.min_point()) + " to " +
           std::to_string(scale.max_point()) + ".\nExpression: " + item_text + "\n" + rating_constraint;
  }

  std::vector<ChatMessage> messages() const {
    if (role == InstructionRole::System) return {{"system", instructions}, {"user", item_block()}};
    return {{"user", instructions + "\n\n" + item_block()}};
  }

  /// Full prompt text as sent, role-tagged.
  std::string rendered() const {
    std::string out;
    for (const auto& m : messages()) out += "[" + m.role + "]\n" + m.content + "\n";
    return out;
  }

  std::string hash() const { return hash::sha256_hex(rendered()); }
};

namespace detail {
inline std::string replace_all(std::string text, const std::string& from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}
}  // namespace detail

inline PromptSpec build_prompt(const std::string& instructions, const Stimulus& item, Dimension dimension,
                               const LikertScale& scale, const PromptOptions& options = {}) {
  auto trimmed = normforge::detail::trim(instructions);
  if (trimmed.empty())
    fail(ErrorKind::Config, "empty instructions for " + item.key().str() + ", " + dimension_name(dimension));
  if (item.text.empty()) fail(ErrorKind::InvalidArgument, "item " + item.key().str() + " has no text");
  PromptSpec spec;
  spec.instructions = trimmed;
  spec.rating_constraint = detail::replace_all(
      detail::replace_all(options.rating_constraint, "{min}", std::to_string(scale.min_point())), "{max}",
      std::to_string(scale.max_point()));
  spec.item_text = item.text;
  spec.scale = scale;
  spec.role = options.role;
  return spec;
}

/// Uses the study's declared instructions; `scale` must match the declaration.
inline PromptSpec build_prompt(const StudyCorpus& corpus, const Stimulus& item, Dimension dimension,
                               const LikertScale& scale, const PromptOptions& options = {}) {
  const auto& declared = corpus.scale(item.study_id, dimension);
  if (!(declared == scale))
    fail(ErrorKind::Config, "scale " + scale.label() + " does not match the " + declared.label() +
                                " scale declared by study '" + item.study_id + "'");
  return build_prompt(corpus.instructions(item.study_id, dimension), item, dimension, scale, options);
}

struct LintWarning {
  std::string pattern;
  std::string sentence;
};

/// Phrases that usually belong to the practical side of an experiment
/// (keys, buttons, screens) and should be removed from model instructions.
inline const std::vector<std::string>& default_lint_patterns() {
  static const std::vector<std::string> patterns = {
      "press", "key", "click", "button", "space bar", "spacebar", "next screen", "next page", "mouse", "keyboard"};
  return patterns;
}

inline std::vector<LintWarning> lint_instructions(const std::string& instructions,
                                                  const std::vector<std::string>& patterns = default_lint_patterns()) {
  auto lower = [](std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  std::vector<std::string> sentences;
  std::string current;
  for (char c : instructions) {
    current.push_back(c);
    if (c == '.' || c == '!' || c == '?' || c == '\n') {
      sentences.push_back(normforge::detail::trim(current));
      current.clear();
    }
  }
  if (!normforge::detail::trim(current).empty()) sentences.push_back(normforge::detail::trim(current));
  std::vector<LintWarning> warnings;
  for (const auto& sentence : sentences) {
    auto low = lower(sentence);
    for (const auto& p : patterns) {
      // Match at word starts only, so "press" flags "pressing" but not "expression".
      auto needle = lower(p);
      bool hit = false;
      for (auto pos = low.find(needle); pos != std::string::npos && !hit; pos = low.find(needle, pos + 1))
        hit = pos == 0 || !std::isalnum(static_cast<unsigned char>(low[pos - 1]));
      if (hit) {
        warnings.push_back({p, sentence});
        break;
      }
    }
  }
  return warnings;
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct Candidate {
  std::string token;
  double logprob = 0;  // natural log

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct RecordKey {
  std::string model;
  std::string session_id;
  std::string study_id;
  std::string item_id;
  Dimension dimension = Dimension::Familiarity;
  std::string prompt_hash;

  auto operator<=>(const RecordKey&) const = default;

  /// Injective string form (a JSON array of the components).
  std::string id() const {
    return Json::array({model, session_id, study_id, item_id, dimension_name(dimension), prompt_hash}).dump();
  }
};

struct ElicitationRecord {
  RecordKey key;
  std::vector<Candidate> top_candidates;
  std::int64_t timestamp = 0;  // unix seconds reported by the backend
  std::string raw_response;

  friend bool operator==(const ElicitationRecord&, const ElicitationRecord&) = default;
};

inline Json to_json(const ElicitationRecord& r) {
  Json cands = Json::array();
  for (const auto& c : r.top_candidates) cands.push_back({{"token", c.token}, {"logprob", c.logprob}});
  Json j;
  j["model"] = r.key.model;
  j["session_id"] = r.key.session_id;
  j["study_id"] = r.key.study_id;
  j["item_id"] = r.key.item_id;
  j["dimension"] = dimension_name(r.key.dimension);
  j["prompt_hash"] = r.key.prompt_hash;
  j["top_candidates"] = std::move(cands);
  j["timestamp"] = r.timestamp;
  j["raw_response"] = r.raw_response;
  return j;
}

inline ElicitationRecord record_from_json(const Json& j) {
  try {
    ElicitationRecord r;
    r.key.model = j.at("model").get<std::string>();
    r.key.session_id = j.at("session_id").get<std::string>();
    r.key.study_id = j.at("study_id").get<std::string>();
    r.key.item_id = j.at("item_id").get<std::string>();
    auto dim = parse_dimension(j.at("dimension").get<std::string>());
    if (!dim) fail(ErrorKind::Integrity, "unknown dimension in record");
    r.key.dimension = *dim;
    r.key.prompt_hash = j.at("prompt_hash").get<std::string>();
    for (const auto& c : j.at("top_candidates"))
      r.top_candidates.push_back({c.at("token").get<std::string>(), c.at("logprob").get<double>()});
    r.timestamp = j.at("timestamp").get<std::int64_t>();
    r.raw_response = j.at("raw_response").get<std::string>();
    return r;
  } catch (const Json::exception& e) {
    fail(ErrorKind::Integrity, std::string("malformed elicitation record: ") + e.what());
  }
}

inline std::string serialize(const ElicitationRecord& r) { return to_json(r).dump(); }

/// Sorts by logprob descending (ties by token), truncates to `limit` and
/// checks the logprob invariants.
inline std::vector<Candidate> normalize_candidates(std::vector<Candidate> candidates, int limit) {
  for (auto& c : candidates) {
    if (!std::isfinite(c.logprob)) fail(ErrorKind::Protocol, "non-finite logprob for token '" + c.token + "'");
    if (c.logprob > 0) {
      if (c.logprob > 1e-9) fail(ErrorKind::Protocol, "positive logprob for token '" + c.token + "'");
      c.logprob = 0;
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return a.token < b.token;
  });
  if (static_cast<int>(candidates.size()) > limit) candidates.resize(static_cast<std::size_t>(limit));
  return candidates;
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0;
  int max_tokens = 1;
  int top_logprobs = 3;
};

inline ChatRequest make_request(const ElicitationParams& params, const PromptSpec& prompt) {
  return {params.model_name, prompt.messages(), params.temperature, params.max_output_tokens,
          params.top_logprob_count};
}

inline Json request_body(const ChatRequest& req) {
  Json messages = Json::array();
  for (const auto& m : req.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", req.model},         {"messages", messages}, {"temperature", req.temperature},
          {"max_tokens", req.max_tokens}, {"logprobs", true},     {"top_logprobs", req.top_logprobs}};
}

struct BackendReply {
  std::vector<Candidate> candidates;
  std::int64_t timestamp = 0;
  std::string raw;
};

/// Extracts the first generated token's top alternatives from a
/// chat-completions response body.
inline BackendReply parse_chat_response(const std::string& body) {
  Json j;
  try {
    j = Json::parse(body);
  } catch (const Json::exception& e) {
    fail(ErrorKind::Protocol, std::string("response is not JSON: ") + e.what());
  }
  BackendReply reply;
  reply.raw = body;
  if (j.contains("created") && j["created"].is_number_integer()) reply.timestamp = j["created"].get<std::int64_t>();
  const Json* content = nullptr;
  if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
    const auto& choice = j["choices"][0];
    if (choice.contains("logprobs") && choice["logprobs"].is_object() && choice["logprobs"].contains("content") &&
        choice["logprobs"]["content"].is_array() && !choice["logprobs"]["content"].empty())
      content = &choice["logprobs"]["content"][0];
  }
  if (!content || !content->contains("top_logprobs") || !(*content)["top_logprobs"].is_array() ||
      (*content)["top_logprobs"].empty())
    fail(ErrorKind::Protocol, "endpoint returned no logprobs");
  for (const auto& alt : (*content)["top_logprobs"]) {
    if (!alt.contains("token") || !alt.contains("logprob") || !alt["logprob"].is_number())
      fail(ErrorKind::Protocol, "malformed top_logprobs entry");
    reply.candidates.push_back({alt["token"].get<std::string>(), alt["logprob"].get<double>()});
  }
  return reply;
}

/// Builds a response body in the same schema; used by the mock backend and tests.
inline std::string make_chat_response(const std::string& model, const std::vector<Candidate>& candidates,
                                      std::int64_t created) {
  Json top = Json::array();
  for (const auto& c : candidates) top.push_back({{"token", c.token}, {"logprob", c.logprob}});
  std::string first = candidates.empty() ? std::string() : candidates.front().token;
  Json choice = {{"index", 0},
                 {"message", {{"role", "assistant"}, {"content", first}}},
                 {"logprobs", {{"content", Json::array({{{"token", first},
                                                         {"logprob", candidates.empty() ? 0.0 : candidates[0].logprob},
                                                         {"top_logprobs", top}}})}}},
                 {"finish_reason", "length"}};
  return Json{{"object", "chat.completion"}, {"created", created}, {"model", model}, {"choices", {choice}}}.dump();
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

/// What the item being rated is; mock backends use it, live ones ignore it.
struct ItemContext {
  StimulusKey item;
  Dimension dimension = Dimension::Familiarity;
  LikertScale scale = LikertScale::seven_point();
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Throws Error with kind Retryable, Protocol or Credential.
  virtual BackendReply complete(const ChatRequest& request, const ItemContext& context) = 0;
  virtual bool uses_network() const = 0;
};

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

/// Append-only newline-delimited JSON store of elicitation records. Writes
/// are serialized; an existing key is never overwritten.
class RecordCache {
 public:
  RecordCache() = default;  // in-memory only

  explicit RecordCache(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) return;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      Json j;
      try {
        j = Json::parse(line);
      } catch (const Json::exception&) {
        fail(ErrorKind::Integrity, path_ + ": line " + std::to_string(line_no) + " is not valid JSON");
      }
      auto record = record_from_json(j);
      auto id = record.key.id();
      if (lines_.contains(id)) {
        if (lines_[id] != line)
          fail(ErrorKind::Integrity, path_ + ": conflicting records for key " + id);
        continue;
      }
      lines_.emplace(id, line);
    }
  }

  RecordCache(const RecordCache&) = delete;
  RecordCache& operator=(const RecordCache&) = delete;

  std::optional<ElicitationRecord> get(const RecordKey& key) const {
    std::lock_guard lock(mutex_);
    auto it = lines_.find(key.id());
    if (it == lines_.end()) return std::nullopt;
    return record_from_json(Json::parse(it->second));
  }

  /// Raw persisted bytes for `key`, if present.
  std::optional<std::string> raw(const RecordKey& key) const {
    std::lock_guard lock(mutex_);
    auto it = lines_.find(key.id());
    if (it == lines_.end()) return std::nullopt;
    return it->second;
  }

  void put(const ElicitationRecord& record) {
    auto line = serialize(record);
    auto id = record.key.id();
    std::lock_guard lock(mutex_);
    if (auto it = lines_.find(id); it != lines_.end()) {
      if (it->second != line) fail(ErrorKind::Integrity, "conflicting write for existing key " + id);
      return;
    }
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::binary | std::ios::app);
      if (!out) fail(ErrorKind::Integrity, "cannot append to cache '" + path_ + "'");
      out << line << '\n';
      out.flush();
      if (!out) fail(ErrorKind::Integrity, "write to cache '" + path_ + "' failed");
    }
    lines_.emplace(std::move(id), std::move(line));
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return lines_.size();
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::string> lines_;
};

// ---------------------------------------------------------------------------
// Querying
// ---------------------------------------------------------------------------

/// Capped exponential backoff with full jitter.
struct RetryPolicy {
  std::chrono::milliseconds base_delay{500};
  std::chrono::milliseconds max_delay{30000};
  std::uint64_t jitter_seed = 0x5eed;
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };

  std::chrono::milliseconds delay(int attempt, std::mt19937_64& rng) const {
    auto cap = base_delay.count() * (1LL << std::min(attempt, 20));
    cap = std::min<long long>(cap, max_delay.count());
    std::uniform_int_distribution<long long> dist(0, std::max<long long>(cap, 0));
    return std::chrono::milliseconds(dist(rng));
  }
};

struct ElicitationTarget {
  StimulusKey item;
  Dimension dimension = Dimension::Familiarity;
};

inline RecordKey record_key(const ElicitationParams& params, const PromptSpec& prompt,
                            const ElicitationTarget& target) {
  return {params.model_name, params.session_id, target.item.study_id, target.item.item_id, target.dimension,
          prompt.hash()};
}

/// Queries the backend (with retries) without touching any cache.
inline ElicitationRecord fetch_record(const ElicitationParams& params, const PromptSpec& prompt,
                                      const ElicitationTarget& target, Backend& backend,
                                      const RetryPolicy& retry = {}) {
  params.validate();
  auto request = make_request(params, prompt);
  ItemContext context{target.item, target.dimension, prompt.scale};
  std::mt19937_64 rng(retry.jitter_seed ^ hash::fnv1a64(record_key(params, prompt, target).id()));
  for (int attempt = 0;; ++attempt) {
    try {
      auto reply = backend.complete(request, context);
      ElicitationRecord record;
      record.key = record_key(params, prompt, target);
      record.top_candidates = normalize_candidates(std::move(reply.candidates), params.top_logprob_count);
      if (record.top_candidates.empty()) fail(ErrorKind::Protocol, "endpoint returned no logprobs");
      record.timestamp = reply.timestamp;
      record.raw_response = std::move(reply.raw);
      return record;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Retryable) throw;
      if (attempt >= params.retry_limit)
        fail(ErrorKind::Retryable, target.item.str() + ": giving up after " + std::to_string(attempt + 1) +
                                       " attempts: " + e.what());
      retry.sleep(retry.delay(attempt, rng));
    }
  }
}

/// Returns the cached record for the key if present; otherwise queries the
/// backend and persists the record before returning.
inline ElicitationRecord elicit(const ElicitationParams& params, const PromptSpec& prompt,
                                const ElicitationTarget& target, Backend& backend, RecordCache& cache,
                                const RetryPolicy& retry = {}) {
  if (auto hit = cache.get(record_key(params, prompt, target))) return *hit;
  auto record = fetch_record(params, prompt, target, backend, retry);
  cache.put(record);
  return record;
}

struct ItemFailure {
  StimulusKey item;
  ErrorKind kind;
  std::string message;
};

struct SessionResult {
  std::vector<ElicitationRecord> records;  // corpus order
  std::vector<ItemFailure> failures;
  std::size_t cache_hits = 0;
};

struct SessionOptions {
  PromptOptions prompt;
  RetryPolicy retry;
  std::function<bool(const Stimulus&)> include;  // empty: all items
};

/// Rates every item of `dimension` in corpus order. Requests run on up to
/// `concurrency_limit` threads; records are committed to the cache in corpus
/// order. A credential error aborts the session; other failures are
/// collected and the rest of the session continues.
inline SessionResult run_session(const StudyCorpus& corpus, Dimension dimension, const ElicitationParams& params,
                                 Backend& backend, RecordCache& cache, const SessionOptions& options = {}) {
  params.validate();
  struct Job {
    const Stimulus* item;
    PromptSpec prompt;
  };
  std::vector<Job> jobs;
  for (const auto& s : corpus.stimuli()) {
    if (!s.human_means.contains(dimension)) continue;
    if (options.include && !options.include(s)) continue;
    jobs.push_back({&s, build_prompt(corpus, s, dimension, corpus.scale(s.study_id, dimension), options.prompt)});
  }

  struct Slot {
    bool done = false;
    std::optional<ElicitationRecord> record;
    bool from_cache = false;
    std::optional<ItemFailure> failure;
  };
  std::vector<Slot> slots(jobs.size());
  std::mutex commit_mutex;
  std::size_t next_commit = 0;
  std::atomic<std::size_t> next_job{0};
  std::atomic<bool> abort{false};
  std::optional<Error> abort_error;
  std::optional<Error> commit_error;

  auto commit_ready = [&] {
    while (next_commit < slots.size() && slots[next_commit].done) {
      auto& slot = slots[next_commit];
      if (slot.record && !slot.from_cache) cache.put(*slot.record);
      ++next_commit;
    }
  };

  auto worker = [&] {
    for (;;) {
      if (abort.load()) return;
      auto i = next_job.fetch_add(1);
      if (i >= jobs.size()) return;
      const auto& job = jobs[i];
      ElicitationTarget target{job.item->key(), dimension};
      Slot result;
      result.done = true;
      try {
        if (auto hit = cache.get(record_key(params, job.prompt, target))) {
          result.record = std::move(hit);
          result.from_cache = true;
        } else {
          result.record = fetch_record(params, job.prompt, target, backend, options.retry);
        }
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::Credential) {
          std::lock_guard lock(commit_mutex);
          if (!abort_error) abort_error = e;
          abort.store(true);
          return;
        }
        result.failure = ItemFailure{target.item, e.kind(), e.what()};
      }
      std::lock_guard lock(commit_mutex);
      slots[i] = std::move(result);
      try {
        commit_ready();
      } catch (const Error& e) {
        if (!commit_error) commit_error = e;
        abort.store(true);
        return;
      }
    }
  };

  auto threads = std::min<std::size_t>(static_cast<std::size_t>(params.concurrency_limit), jobs.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (abort_error) throw *abort_error;
  if (commit_error) throw *commit_error;

  SessionResult result;
  for (auto& slot : slots) {
    if (slot.record) {
      if (slot.from_cache) ++result.cache_hits;
      result.records.push_back(std::move(*slot.record));
    } else if (slot.failure) {
      result.failures.push_back(std::move(*slot.failure));
    }
  }
  return result;
}

}  // namespace normforge
