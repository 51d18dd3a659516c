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

// Deterministic offline rater that speaks the chat-completions schema.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "normforge/corpus.hpp"
#include "normforge/elicitation.hpp"
#include "normforge/hash.hpp"
#include "normforge/numeric.hpp"

namespace normforge {

struct RatedItem {
  StimulusKey item;
  Dimension dimension = Dimension::Familiarity;

  auto operator<=>(const RatedItem&) const = default;
};

struct MockRaterConfig {
  double target_rho = 0.65;  // target Spearman correlation with ground truth
  std::uint64_t noise_seed = 0;
  std::map<RatedItem, double> ground_truth;  // on `scale`
  LikertScale scale = LikertScale::seven_point();
  double kernel_width = 0.6;  // spread of the rating distribution, in scale points
  int top_k = 3;
};

/// Ground truth from the corpus human means, standardized to `scale`.
inline MockRaterConfig mock_config_from_corpus(const StudyCorpus& corpus, double target_rho, std::uint64_t seed,
                                               const LikertScale& scale = LikertScale::seven_point()) {
  MockRaterConfig config;
  config.target_rho = target_rho;
  config.noise_seed = seed;
  config.scale = scale;
  for (const auto& s : corpus.stimuli())
    for (const auto& [d, norm] : s.human_means)
      config.ground_truth[{s.key(), d}] = *corpus.human_on(s, d, scale);
  return config;
}

/// Precomputes one latent score per ground-truth entry. Within each
/// dimension the latent has sample Pearson correlation exactly r with the
/// normal scores of the ground-truth ranks, where r = 2 sin(pi rho / 6)
/// turns the Spearman target into the bivariate-normal Pearson value.
class MockRater {
 public:
  explicit MockRater(MockRaterConfig config) : config_(std::move(config)) {
    if (!(config_.target_rho >= -1.0 && config_.target_rho <= 1.0))
      fail(ErrorKind::InvalidArgument, "target_rho must lie in [-1, 1]");
    if (config_.kernel_width <= 0) fail(ErrorKind::InvalidArgument, "kernel_width must be positive");
    if (config_.top_k < 1) fail(ErrorKind::InvalidArgument, "top_k must be >= 1");
    std::map<Dimension, std::vector<std::pair<RatedItem, double>>> by_dimension;
    for (const auto& [key, value] : config_.ground_truth) by_dimension[key.dimension].emplace_back(key, value);
    double r = 2.0 * std::sin(std::numbers::pi * config_.target_rho / 6.0);
    r = std::clamp(r, -1.0, 1.0);
    for (auto& [d, entries] : by_dimension) compute_latents(entries, r);
  }

  const MockRaterConfig& config() const { return config_; }

  double latent(const RatedItem& key) const {
    auto it = latent_.find(key);
    if (it == latent_.end())
      fail(ErrorKind::InvalidArgument, "item " + key.item.str() + " (" + dimension_name(key.dimension) +
                                           ") has no ground truth in the mock configuration");
    return it->second;
  }

  /// Top-k rating tokens with natural-log probabilities on `scale`.
  std::vector<Candidate> rate(const RatedItem& key, const LikertScale& scale) const {
    double center = scale.min_point() + (scale.max_point() - scale.min_point()) * numeric::normal_cdf(latent(key));
    std::vector<double> log_weight;
    for (int k = scale.min_point(); k <= scale.max_point(); ++k) {
      double d = (k - center) / config_.kernel_width;
      log_weight.push_back(-0.5 * d * d);
    }
    double mx = *std::max_element(log_weight.begin(), log_weight.end());
    double sum = 0;
    for (double lw : log_weight) sum += std::exp(lw - mx);
    double log_norm = mx + std::log(sum);
    std::vector<Candidate> out;
    for (int k = scale.min_point(); k <= scale.max_point(); ++k)
      out.push_back({std::to_string(k), log_weight[static_cast<std::size_t>(k - scale.min_point())] - log_norm});
    return normalize_candidates(std::move(out), config_.top_k);
  }

 private:
  void compute_latents(const std::vector<std::pair<RatedItem, double>>& entries, double r) {
    const auto n = entries.size();
    std::vector<double> truth(n);
    for (std::size_t i = 0; i < n; ++i) truth[i] = entries[i].second;
    // Average ranks, then normal scores.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return truth[a] < truth[b]; });
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && truth[order[j + 1]] == truth[order[i]]) ++j;
      double rank = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) z[order[k]] = numeric::normal_quantile((rank - 0.5) / static_cast<double>(n));
      i = j + 1;
    }
    std::vector<double> noise(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& key = entries[i].first;
      hash::SplitMix64 gen(config_.noise_seed ^
                           hash::fnv1a64(key.item.study_id + '\x1f' + key.item.item_id + '\x1f' +
                                         dimension_name(key.dimension)));
      double u1 = gen.uniform(), u2 = gen.uniform();
      noise[i] = std::sqrt(-2 * std::log(u1)) * std::cos(2 * std::numbers::pi * u2);
    }
    auto mean = [](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += x;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    double mz = mean(z), me = mean(noise);
    double szz = 0, sze = 0;
    for (std::size_t i = 0; i < n; ++i) {
      szz += (z[i] - mz) * (z[i] - mz);
      sze += (z[i] - mz) * (noise[i] - me);
    }
    double beta = szz > 0 ? sze / szz : 0.0;
    std::vector<double> resid(n);
    double srr = 0;
    for (std::size_t i = 0; i < n; ++i) {
      resid[i] = noise[i] - me - beta * (z[i] - mz);
      srr += resid[i] * resid[i];
    }
    double scale = (srr > 0 && szz > 0) ? std::sqrt(szz / srr) : 0.0;
    double s = std::sqrt(std::max(0.0, 1 - r * r));
    for (std::size_t i = 0; i < n; ++i) {
      double zi = z[i] - mz;
      latent_[entries[i].first] = (scale > 0 ? r * zi + s * scale * resid[i] : (r >= 0 ? zi : -zi));
    }
  }

  MockRaterConfig config_;
  std::map<RatedItem, double> latent_;
};

/// One-shot form of MockRater::rate on the configuration's own scale.
inline std::vector<Candidate> mock_rate(const MockRaterConfig& config, const RatedItem& item) {
  return MockRater(config).rate(item, config.scale);
}

/// Backend serving per-model MockRaters plus optional fixed replies. Never
/// touches the network; counts calls so tests can assert cache behaviour.
class MockBackend : public Backend {
 public:
  MockBackend() = default;

  void add_model(const std::string& model, MockRaterConfig config) {
    raters_.insert_or_assign(model, MockRater(std::move(config)));
  }

  /// Fixed candidates returned for `key` regardless of model.
  void set_fixed(const RatedItem& key, std::vector<Candidate> candidates) { fixed_[key] = std::move(candidates); }

  BackendReply complete(const ChatRequest& request, const ItemContext& context) override {
    ++calls_;
    RatedItem key{context.item, context.dimension};
    std::vector<Candidate> candidates;
    if (auto it = fixed_.find(key); it != fixed_.end()) {
      candidates = it->second;
    } else {
      auto rater = raters_.find(request.model);
      if (rater == raters_.end()) fail(ErrorKind::Protocol, "mock backend has no model '" + request.model + "'");
      candidates = rater->second.rate(key, context.scale);
    }
    candidates = normalize_candidates(std::move(candidates), request.top_logprobs);
    return parse_chat_response(make_chat_response(request.model, candidates, 0));
  }

  bool uses_network() const override { return false; }

  std::size_t calls() const { return calls_.load(); }

 private:
  std::map<std::string, MockRater> raters_;
  std::map<RatedItem, std::vector<Candidate>> fixed_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace normforge
