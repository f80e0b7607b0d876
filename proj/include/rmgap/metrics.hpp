// Copyright 2026 The rmgap Authors
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

#include <cmath>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "rmgap/dataset.hpp"
#include "rmgap/rewards.hpp"

namespace rmgap {

struct AccuracyOptions {
  /// Rewards within this distance count as a tie. Zero means bit equality.
  double tie_epsilon = 0.0;
};

struct EvalReport {
  double accuracy = 0.0;
  double normalized_margin_mean = 0.0;
  std::size_t n_examples = 0;
  std::size_t n_ties = 0;
  double reward_stddev = 0.0;  // population stddev over all 2n rewards
  bool degenerate = false;     // stddev was 0, margin reported as 0
};

namespace detail {

struct PairRewards {
  std::vector<double> chosen, rejected;
};

inline PairRewards collect(const RewardFn& r, const PreferenceDataset& data) {
  PairRewards out;
  for (const auto& e : data) {
    out.chosen.push_back(r(e.prompt, e.chosen));
    out.rejected.push_back(r(e.prompt, e.rejected));
  }
  return out;
}

inline bool is_tie(double a, double b, const AccuracyOptions& opt) {
  return opt.tie_epsilon == 0.0 ? a == b : std::abs(a - b) <= opt.tie_epsilon;
}

}  // namespace detail

/// Mean of 1{r+ > r-} + 0.5 * 1{r+ = r-}.
inline double accuracy(const RewardFn& reward, const PreferenceDataset& data, AccuracyOptions opt = {}) {
  require_non_empty(data);
  double wins = 0.0;
  for (const auto& e : data) {
    const double a = reward(e.prompt, e.chosen);
    const double b = reward(e.prompt, e.rejected);
    if (detail::is_tie(a, b, opt)) wins += 0.5;
    else if (a > b) wins += 1.0;
  }
  return wins / static_cast<double>(data.size());
}

inline double accuracy(const RewardScorer& scorer, const PreferenceDataset& data, AccuracyOptions opt = {}) {
  return accuracy(as_reward_fn(scorer), data, opt);
}

struct MarginResult {
  double value = 0.0;
  double stddev = 0.0;
  bool degenerate = false;
};

/// Mean |r+ - r-| / s with s the population stddev of all chosen and rejected rewards.
inline MarginResult normalized_abs_margin(const RewardFn& reward, const PreferenceDataset& data) {
  require_non_empty(data);
  const auto pr = detail::collect(reward, data);
  const double n2 = 2.0 * static_cast<double>(data.size());
  long double mean = 0.0L;
  for (std::size_t i = 0; i < data.size(); ++i) mean += static_cast<long double>(pr.chosen[i]) + pr.rejected[i];
  mean /= n2;
  long double var = 0.0L;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const long double a = pr.chosen[i] - mean, b = pr.rejected[i] - mean;
    var += a * a + b * b;
  }
  var /= n2;
  MarginResult out;
  out.stddev = static_cast<double>(std::sqrt(var));
  if (out.stddev == 0.0) {
    out.degenerate = true;
    return out;
  }
  long double total = 0.0L;
  for (std::size_t i = 0; i < data.size(); ++i) total += std::abs(pr.chosen[i] - pr.rejected[i]) / out.stddev;
  out.value = static_cast<double>(total / static_cast<long double>(data.size()));
  return out;
}

inline MarginResult normalized_abs_margin(const RewardScorer& scorer, const PreferenceDataset& data) {
  return normalized_abs_margin(as_reward_fn(scorer), data);
}

inline EvalReport evaluate(const RewardFn& reward, const PreferenceDataset& data, AccuracyOptions opt = {}) {
  require_non_empty(data);
  EvalReport rep;
  rep.n_examples = data.size();
  const auto pr = detail::collect(reward, data);
  double wins = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (detail::is_tie(pr.chosen[i], pr.rejected[i], opt)) {
      wins += 0.5;
      ++rep.n_ties;
    } else if (pr.chosen[i] > pr.rejected[i]) {
      wins += 1.0;
    }
  }
  rep.accuracy = wins / static_cast<double>(data.size());
  // Replays the cached rewards so the scorer runs once per response.
  std::size_t idx = 0;
  std::vector<double> flat_rewards;
  for (std::size_t i = 0; i < data.size(); ++i) {
    flat_rewards.push_back(pr.chosen[i]);
    flat_rewards.push_back(pr.rejected[i]);
  }
  const RewardFn replay = [&](const TokenSeq&, const TokenSeq&) { return flat_rewards[idx++]; };
  const auto m = normalized_abs_margin(replay, data);
  rep.normalized_margin_mean = m.value;
  rep.reward_stddev = m.stddev;
  rep.degenerate = m.degenerate;
  return rep;
}

inline EvalReport evaluate(const RewardScorer& scorer, const PreferenceDataset& data, AccuracyOptions opt = {}) {
  return evaluate(as_reward_fn(scorer), data, opt);
}

// ---------------------------------------------------------------------------
// Win-rate comparison between two accuracy tables.

struct AccuracyKey {
  std::string model;
  std::string dataset;
  std::string seed;
  auto operator<=>(const AccuracyKey&) const = default;
};

using AccuracyTable = std::map<AccuracyKey, double>;

struct WinRate {
  double a_wins = 0.0;  // percentages
  double ties = 0.0;
  double b_wins = 0.0;
  std::size_t cells = 0;
};

/// Per aligned cell: a tie when |acc_a - acc_b| <= threshold, otherwise the
/// higher accuracy wins.
inline WinRate win_rate_comparison(const AccuracyTable& a, const AccuracyTable& b, double tie_threshold = 0.01) {
  std::vector<std::string> missing;
  auto describe = [](const AccuracyKey& k) { return "(" + k.model + ", " + k.dataset + ", " + k.seed + ")"; };
  for (const auto& [k, _] : a)
    if (!b.count(k)) missing.push_back(describe(k) + " only in A");
  for (const auto& [k, _] : b)
    if (!a.count(k)) missing.push_back(describe(k) + " only in B");
  if (!missing.empty()) {
    std::string msg = "accuracy tables are misaligned:";
    for (const auto& m : missing) msg += " " + m + ";";
    throw InputError(msg);
  }
  if (a.empty()) throw InputError("accuracy tables are empty");
  WinRate w;
  std::size_t aw = 0, t = 0, bw = 0;
  for (const auto& [k, acc_a] : a) {
    const double acc_b = b.at(k);
    // Slack keeps decimal thresholds such as 0.51 vs 0.50 on the tie side.
    if (std::abs(acc_a - acc_b) <= tie_threshold + 1e-12) ++t;
    else if (acc_a > acc_b) ++aw;
    else ++bw;
  }
  w.cells = a.size();
  const double n = static_cast<double>(w.cells);
  w.a_wins = 100.0 * static_cast<double>(aw) / n;
  w.ties = 100.0 * static_cast<double>(t) / n;
  w.b_wins = 100.0 * static_cast<double>(bw) / n;
  return w;
}

}  // namespace rmgap
