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

// Verification versus generation over finite response universes, and the
// unseen-token experiment comparing explicit and implicit reward models.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rmgap/metrics.hpp"
#include "rmgap/tasks.hpp"
#include "rmgap/training.hpp"

namespace rmgap {

/// A prompt family with a correctness predicate and an enumerable response
/// universe per prompt.
struct Task {
  std::string name;
  std::vector<TokenSeq> prompts;
  std::function<bool(const TokenSeq& prompt, const TokenSeq& response)> is_correct;
  std::function<std::vector<TokenSeq>(const TokenSeq& prompt)> universe;
  /// Universe size without enumerating it; used to refuse oversized work.
  std::function<double(const TokenSeq& prompt)> universe_size;
};

inline double universe_size(const Task& task, const TokenSeq& prompt) {
  if (task.universe_size) return task.universe_size(prompt);
  return static_cast<double>(task.universe(prompt).size());
}

inline void require_enumerable(const Task& task, const TokenSeq& prompt, double cap) {
  const double size = universe_size(task, prompt);
  if (size > cap)
    throw CapabilityError("response universe of size " + std::to_string(size) + " exceeds the enumeration cap " +
                          std::to_string(cap) + "; use the Monte-Carlo estimator instead");
}

/// Every prompt must have a correct and an incorrect response in its universe.
inline void validate(const Task& task) {
  if (task.prompts.empty()) throw InputError("task '" + task.name + "' has no prompts");
  if (!task.is_correct || !task.universe) throw InputError("task '" + task.name + "' is incomplete");
  for (std::size_t i = 0; i < task.prompts.size(); ++i) {
    bool some_correct = false, some_wrong = false;
    for (const auto& y : task.universe(task.prompts[i])) {
      (task.is_correct(task.prompts[i], y) ? some_correct : some_wrong) = true;
      if (some_correct && some_wrong) break;
    }
    if (!some_correct || !some_wrong)
      throw InputError("task '" + task.name + "': prompt " + std::to_string(i) +
                       " needs both a correct and an incorrect response");
  }
}

/// Sequence-level distribution over one prompt's universe. Responses outside
/// the universe carry zero mass.
struct ResponseTable {
  std::vector<TokenSeq> responses;
  Vector probs;
  std::map<TokenSeq, std::size_t> index;

  ResponseTable() = default;
  ResponseTable(std::vector<TokenSeq> ys, Vector ps) : responses(std::move(ys)), probs(std::move(ps)) {
    if (responses.size() != probs.size()) throw InputError("response table size mismatch");
    for (std::size_t i = 0; i < responses.size(); ++i)
      if (!index.emplace(responses[i], i).second) throw InputError("duplicate response in table");
  }

  double prob(const TokenSeq& y) const {
    auto it = index.find(y);
    return it == index.end() ? 0.0 : probs[it->second];
  }

  double total() const {
    long double s = 0.0L;
    for (double p : probs) s += p;
    return static_cast<double>(s);
  }
};

using TabularPolicy = std::map<TokenSeq, ResponseTable>;

inline const ResponseTable& table_for(const TabularPolicy& policy, const TokenSeq& prompt) {
  auto it = policy.find(prompt);
  if (it == policy.end()) throw InputError("tabular policy has no entry for the prompt");
  return it->second;
}

inline TabularPolicy uniform_reference(const Task& task, double cap = 40320.0) {
  TabularPolicy out;
  for (const auto& x : task.prompts) {
    require_enumerable(task, x, cap);
    auto ys = task.universe(x);
    const double p = 1.0 / static_cast<double>(ys.size());
    Vector ps(ys.size(), p);
    out.emplace(x, ResponseTable(std::move(ys), std::move(ps)));
  }
  return out;
}

/// Draws one response from a prompt's table.
inline TokenSeq sample_tabular(const TabularPolicy& policy, const TokenSeq& prompt, Rng& rng) {
  const auto& t = table_for(policy, prompt);
  return t.responses[sample_categorical(t.probs, rng)];
}

// ---------------------------------------------------------------------------
// Verifier construction.

struct VerifierConstruction {
  TabularPolicy policy;
  std::map<TokenSeq, double> normalizer;  // Z(x) per prompt
  double delta = 0.0;
  double beta = 0.0;
};

/// pi(y|x) = pi_ref(y|x) e^{delta/beta} / Z(x) on correct responses and
/// pi_ref(y|x) / Z(x) elsewhere in the universe.
inline VerifierConstruction construct_verifier_policy(const TabularPolicy& ref, const Task& task, double delta,
                                                      double beta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw InputError("delta must be positive");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw InputError("beta must be positive");
  VerifierConstruction out;
  out.delta = delta;
  out.beta = beta;
  const double boost = std::exp(delta / beta);
  for (const auto& x : task.prompts) {
    const auto& t = table_for(ref, x);
    Vector weights(t.responses.size());
    long double z = 0.0L;
    for (std::size_t i = 0; i < t.responses.size(); ++i) {
      if (!(t.probs[i] > 0.0))
        throw InputError("reference assigns zero probability to a response; the log-ratio is undefined");
      weights[i] = task.is_correct(x, t.responses[i]) ? t.probs[i] * boost : t.probs[i];
      z += weights[i];
    }
    const double zd = static_cast<double>(z);
    for (double& w : weights) w /= zd;
    out.normalizer[x] = zd;
    out.policy.emplace(x, ResponseTable(t.responses, std::move(weights)));
  }
  return out;
}

/// beta * (ln pi(y|x) - ln pi_ref(y|x)) over tabular distributions.
inline RewardFn tabular_im_reward(TabularPolicy policy, TabularPolicy ref, double beta) {
  if (!(beta > 0.0)) throw InputError("beta must be positive");
  return [policy = std::move(policy), ref = std::move(ref), beta](const TokenSeq& x, const TokenSeq& y) {
    const double p = table_for(policy, x).prob(y);
    const double q = table_for(ref, x).prob(y);
    if (!(p > 0.0) || !(q > 0.0)) throw InputError("log-ratio undefined outside the support");
    return beta * (std::log(p) - std::log(q));
  };
}

// ---------------------------------------------------------------------------
// Margin verification.

struct VerifierReport {
  bool is_verifier = false;
  double delta = 0.0;
  double measured_min_margin = 0.0;
  std::vector<double> margin_per_prompt;           // min correct - max incorrect
  std::vector<double> probability_ratio_per_prompt;  // pi(C|x) / pi_ref(C|x), when policies are known
  std::optional<double> bound;                     // e^{delta/beta}, when beta is known
  double cross_accuracy = 0.0;                     // accuracy over every (x, y+ in C, y- not in C)
  std::size_t cross_pairs = 0;
};

inline VerifierReport verify_margin(const RewardFn& reward, const Task& task, double delta,
                                    double cap = 40320.0) {
  if (task.prompts.empty()) throw InputError("task has no prompts");
  VerifierReport rep;
  rep.delta = delta;
  rep.measured_min_margin = std::numeric_limits<double>::infinity();
  long double wins = 0.0L;
  for (const auto& x : task.prompts) {
    require_enumerable(task, x, cap);
    std::vector<double> good, bad;
    for (const auto& y : task.universe(x)) (task.is_correct(x, y) ? good : bad).push_back(reward(x, y));
    if (good.empty() || bad.empty()) throw InputError("prompt lacks a correct or an incorrect response");
    const double m = *std::min_element(good.begin(), good.end()) - *std::max_element(bad.begin(), bad.end());
    rep.margin_per_prompt.push_back(m);
    rep.measured_min_margin = std::min(rep.measured_min_margin, m);
    // Pairwise wins by counting incorrect rewards below / equal to each correct one.
    std::sort(bad.begin(), bad.end());
    for (double g : good) {
      const auto lo = std::lower_bound(bad.begin(), bad.end(), g);
      const auto hi = std::upper_bound(bad.begin(), bad.end(), g);
      wins += static_cast<long double>(lo - bad.begin()) + 0.5L * static_cast<long double>(hi - lo);
    }
    rep.cross_pairs += good.size() * bad.size();
  }
  rep.cross_accuracy = static_cast<double>(wins / static_cast<long double>(rep.cross_pairs));
  rep.is_verifier = rep.measured_min_margin >= delta - 1e-9;
  if (rep.is_verifier && rep.measured_min_margin > 0.0 && rep.cross_accuracy != 1.0)
    throw ContractError("a positive-margin verifier must rank every cross pair correctly");
  return rep;
}

inline VerifierReport verify_margin(const RewardScorer& scorer, const Task& task, double delta,
                                    double cap = 40320.0) {
  return verify_margin(as_reward_fn(scorer), task, delta, cap);
}

// ---------------------------------------------------------------------------
// Generation probability.

/// Exact pi(C(x)|x) from a tabular distribution.
inline double generation_probability(const TabularPolicy& dist, const Task& task, const TokenSeq& prompt,
                                     double cap = 40320.0) {
  require_enumerable(task, prompt, cap);
  const auto& t = table_for(dist, prompt);
  long double s = 0.0L;
  for (std::size_t i = 0; i < t.responses.size(); ++i)
    if (task.is_correct(prompt, t.responses[i])) s += t.probs[i];
  return static_cast<double>(s);
}

/// Exact pi(C(x)|x) for an autoregressive policy: the sum of sequence
/// probabilities over the correct responses of the universe.
inline double generation_probability(const PolicyState& policy, const Task& task, const TokenSeq& prompt,
                                     double cap = 40320.0) {
  require_enumerable(task, prompt, cap);
  long double s = 0.0L;
  for (const auto& y : task.universe(prompt))
    if (task.is_correct(prompt, y)) s += std::exp(static_cast<long double>(sequence_log_prob(policy, prompt, y)));
  return static_cast<double>(s);
}

struct MonteCarloEstimate {
  double estimate = 0.0;
  double ci_low = 0.0;  // 95% Wilson interval
  double ci_high = 0.0;
  std::size_t samples = 0;
  std::size_t hits = 0;
};

inline MonteCarloEstimate wilson_interval(std::size_t hits, std::size_t samples, double z = 1.959963984540054) {
  if (samples == 0) throw InputError("Monte-Carlo estimate needs at least one sample");
  MonteCarloEstimate out;
  out.samples = samples;
  out.hits = hits;
  const double n = static_cast<double>(samples);
  const double p = static_cast<double>(hits) / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
  const double half = z / (1.0 + z2 / n) * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  out.estimate = p;
  out.ci_low = std::max(0.0, centre - half);
  out.ci_high = std::min(1.0, centre + half);
  return out;
}

/// Opt-in sampling estimate for universes beyond the enumeration cap.
inline MonteCarloEstimate generation_probability_mc(const PolicyState& policy, const Task& task,
                                                    const TokenSeq& prompt, std::size_t samples,
                                                    std::size_t max_len, Rng& rng) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples; ++i)
    if (task.is_correct(prompt, sample_response(policy, prompt, max_len, std::nullopt, rng))) ++hits;
  return wilson_interval(hits, samples);
}

// ---------------------------------------------------------------------------
// Efficient-generator predicate over a finite prompt family.

struct EfficientGeneratorRow {
  std::size_t prompt_length = 0;
  std::size_t prompt_count = 0;
  double min_probability = 0.0;
  double threshold = 0.0;  // alpha^-1 |x|^-k
  bool pass = false;
};

struct EfficientGeneratorReport {
  std::size_t k = 0;
  double alpha = 1.0;
  std::vector<EfficientGeneratorRow> rows;
  std::optional<std::size_t> largest_failing_length;
  std::string family;  // the checked claim covers this finite family only
};

using GenerationProbabilityFn = std::function<double(const TokenSeq& prompt)>;

inline EfficientGeneratorReport efficient_generator_check(const GenerationProbabilityFn& probability,
                                                          const std::map<std::size_t, std::vector<TokenSeq>>& prompts_by_size,
                                                          std::size_t k, double alpha, std::string family = {}) {
  if (!(alpha > 0.0)) throw InputError("alpha must be positive");
  EfficientGeneratorReport rep;
  rep.k = k;
  rep.alpha = alpha;
  rep.family = family.empty() ? "configured finite prompt family" : std::move(family);
  for (const auto& [len, prompts] : prompts_by_size) {
    if (prompts.empty()) continue;
    EfficientGeneratorRow row;
    row.prompt_length = len;
    row.prompt_count = prompts.size();
    row.threshold = 1.0 / (alpha * std::pow(static_cast<double>(len), static_cast<double>(k)));
    row.min_probability = std::numeric_limits<double>::infinity();
    for (const auto& x : prompts) {
      if (x.size() != len) throw InputError("prompt grouped under the wrong length");
      row.min_probability = std::min(row.min_probability, probability(x));
    }
    row.pass = row.min_probability >= row.threshold;
    if (!row.pass) rep.largest_failing_length = len;
    rep.rows.push_back(row);
  }
  return rep;
}

inline EfficientGeneratorReport efficient_generator_check(const TabularPolicy& dist, const Task& task,
                                                          std::size_t k, double alpha,
                                                          const std::map<std::size_t, std::vector<TokenSeq>>& prompts_by_size) {
  return efficient_generator_check([&](const TokenSeq& x) { return generation_probability(dist, task, x); },
                                   prompts_by_size, k, alpha, task.name);
}

inline std::map<std::size_t, std::vector<TokenSeq>> group_by_length(const std::vector<TokenSeq>& prompts) {
  std::map<std::size_t, std::vector<TokenSeq>> out;
  for (const auto& x : prompts) out[x.size()].push_back(x);
  return out;
}

// ---------------------------------------------------------------------------
// Summary for the verifier construction.

struct VerifierPromptRow {
  double reference_mass = 0.0;  // pi_ref(C|x)
  double policy_mass = 0.0;     // pi(C|x)
  double normalizer = 0.0;      // Z(x)
  double ratio = 0.0;           // pi(C|x) / pi_ref(C|x)
  double identity_residual = 0.0;  // |pi(C|x) Z(x) - pi_ref(C|x) e^{delta/beta}|
  std::size_t correct_count = 0;
  std::size_t universe_count = 0;
};

struct VerifierConstructionReport {
  VerifierReport verifier;
  std::vector<VerifierPromptRow> prompts;
  double bound = 0.0;
  bool bound_holds = false;
  double max_identity_residual = 0.0;
  std::string outside_universe = "responses outside the enumerated universe carry zero mass";
};

inline VerifierConstructionReport verifier_construction_report(const TabularPolicy& ref, const Task& task,
                                                               double delta, double beta) {
  const auto built = construct_verifier_policy(ref, task, delta, beta);
  VerifierConstructionReport rep;
  rep.bound = std::exp(delta / beta);
  rep.verifier = verify_margin(tabular_im_reward(built.policy, ref, beta), task, delta);
  rep.verifier.bound = rep.bound;
  rep.bound_holds = true;
  for (const auto& x : task.prompts) {
    VerifierPromptRow row;
    row.reference_mass = generation_probability(ref, task, x);
    row.policy_mass = generation_probability(built.policy, task, x);
    row.normalizer = built.normalizer.at(x);
    row.ratio = row.policy_mass / row.reference_mass;
    row.identity_residual = std::abs(row.policy_mass * row.normalizer - row.reference_mass * rep.bound);
    const auto& t = table_for(ref, x);
    row.universe_count = t.responses.size();
    for (const auto& y : t.responses) row.correct_count += task.is_correct(x, y) ? 1 : 0;
    if (row.ratio > rep.bound) rep.bound_holds = false;
    rep.max_identity_residual = std::max(rep.max_identity_residual, row.identity_residual);
    rep.verifier.probability_ratio_per_prompt.push_back(row.ratio);
    rep.prompts.push_back(row);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Concrete task families.

/// All vertex orderings of each graph; correct means a Hamiltonian cycle.
inline Task ham_task(const std::vector<Graph>& graphs, const Vocabulary& vocab, std::string name = "hamiltonian") {
  auto by_prompt = std::make_shared<std::map<TokenSeq, Graph>>();
  Task task;
  task.name = std::move(name);
  for (const auto& g : graphs) {
    TokenSeq x = encode_ham_prompt(g, vocab);
    if (by_prompt->emplace(x, g).second) task.prompts.push_back(std::move(x));
  }
  auto graph_of = [by_prompt](const TokenSeq& x) -> const Graph& {
    auto it = by_prompt->find(x);
    if (it == by_prompt->end()) throw InputError("prompt does not belong to the Hamiltonian task");
    return it->second;
  };
  task.is_correct = [graph_of, vocab](const TokenSeq& x, const TokenSeq& y) {
    const auto perm = decode_ham_response(y, vocab);
    return perm && is_hamiltonian_cycle(graph_of(x), *perm);
  };
  task.universe = [graph_of, vocab](const TokenSeq& x) {
    Permutation perm(graph_of(x).vertex_count());
    std::iota(perm.begin(), perm.end(), Vertex{0});
    std::vector<TokenSeq> out;
    do {
      out.push_back(encode_ham_response(perm, vocab));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
  };
  task.universe_size = [graph_of](const TokenSeq& x) {
    double f = 1.0;
    for (std::size_t i = 2; i <= graph_of(x).vertex_count(); ++i) f *= static_cast<double>(i);
    return f;
  };
  return task;
}

/// One prompt {0}, responses {1} (correct) and {2}.
inline Task toy_two_response_task() {
  Task task;
  task.name = "two_response_toy";
  task.prompts = {TokenSeq{0}};
  task.is_correct = [](const TokenSeq&, const TokenSeq& y) { return y == TokenSeq{1}; };
  task.universe = [](const TokenSeq&) { return std::vector<TokenSeq>{{1}, {2}}; };
  task.universe_size = [](const TokenSeq&) { return 2.0; };
  return task;
}

// ---------------------------------------------------------------------------
// Unseen-token experiment.

struct UnseenTokenConfig {
  std::size_t vocab_size = 40;
  std::size_t train_token_count = 20;  // tokens [0, train_token_count) may appear in training
  std::size_t dim = 16;
  std::size_t prompt_length = 3;
  std::size_t train_count = 30;
  std::size_t eval_count = 20;
  double signal = 1.0;
  double noise = 0.1;
  double min_quality_gap = 0.5;
  double beta = 1.0;
  double lr_fraction = 0.9;  // eta = lr_fraction * bound
  std::size_t steps = 5000;
  std::size_t record_every = 10;
  double init_scale = 0.1;   // stddev of the initial unembedding
  bool strict_lr = true;
  std::uint64_t seed = 0;
  std::size_t max_attempts = 16;
  std::size_t realizability_budget = 20000;
};

inline void validate(const UnseenTokenConfig& c) {
  if (c.train_token_count < 2 || c.train_token_count + 2 > c.vocab_size)
    throw ConfigError("train_token_count must leave at least two seen and two unseen tokens");
  if (c.dim < 2) throw ConfigError("dim must be at least 2");
  if (c.prompt_length == 0) throw ConfigError("prompt_length must be positive");
  if (c.train_count == 0 || c.eval_count == 0) throw ConfigError("example counts must be positive");
  if (!(c.min_quality_gap >= 0.0 && c.min_quality_gap < 2.0)) throw ConfigError("min_quality_gap must lie in [0, 2)");
  if (!(c.beta > 0.0)) throw ConfigError("beta must be positive");
  if (!(c.lr_fraction > 0.0)) throw ConfigError("lr_fraction must be positive");
  if (c.record_every == 0) throw ConfigError("record_every must be positive");
  if (!(c.init_scale >= 0.0)) throw ConfigError("init_scale must be non-negative");
}

struct UnseenTokenStep {
  std::size_t step = 0;
  double ex_train_loss = 0.0;
  double ex_train_accuracy = 0.0;
  double im_train_loss = 0.0;
  double im_train_accuracy = 0.0;
  double ex_eval_accuracy = 0.0;
  double im_eval_accuracy = 0.0;
  double ustar_lower_bound = 0.0;
  double im_eval_max_abs_difference = 0.0;
  bool unseen_rows_identical = true;
};

struct UnseenTokenReport {
  UnseenTokenConfig config;
  double learning_rate = 0.0;
  LrBound lr_bound{};
  std::size_t attempts = 0;
  Separability ex_realizability = Separability::Undetermined;
  Separability im_realizability = Separability::Undetermined;
  double ustar_min_margin = 0.0;
  double ustar_lower_bound = 0.0;  // fraction of eval examples u* ranks correctly
  double ex_final_cosine_to_ustar = 0.0;
  /// First recorded step whose EX eval accuracy reaches ustar_lower_bound.
  std::optional<std::size_t> first_step_ex_meets_bound;
  std::vector<UnseenTokenStep> steps;
  std::vector<double> im_final_eval_differences;  // r(x,y+) - r(x,y-) per eval example
  PreferenceDataset train;
  PreferenceDataset eval;
};

namespace detail {

/// Prompts along e_0, responses along q_t * signal * e_1, both with isotropic
/// noise and unit norm. Token qualities q_t are uniform in [-1, 1].
struct UnseenTokenGeometry {
  std::size_t dim;
  std::size_t prompt_length;
  double signal;
  double noise;
  std::uint64_t seed;
  Vector quality;

  Vector noisy(std::uint64_t stream, const TokenSeq& key, std::size_t axis, double weight) const {
    Rng rng(hash_sequence<TokenId>(derive_seed(seed, stream), key));
    Vector v = gaussian_vector(rng, dim, noise);
    v[axis] += weight;
    const double n = norm(v);
    for (double& x : v) x /= n;
    return v;
  }

  Vector operator()(const TokenSeq& prefix) const {
    if (prefix.size() == prompt_length) return noisy(0, prefix, 0, 1.0);
    if (prefix.size() == prompt_length + 1) return noisy(1, prefix, 1, quality[prefix.back()] * signal);
    Rng rng(hash_sequence<TokenId>(derive_seed(seed, 2), prefix));
    return random_unit_vector(rng, dim);
  }
};

/// Two distinct tokens from [lo, hi) with quality gap >= min_gap, better first.
inline std::pair<TokenId, TokenId> draw_pair(Rng& rng, TokenId lo, TokenId hi, const Vector& q, double min_gap) {
  std::uniform_int_distribution<TokenId> pick(lo, hi - 1);
  for (int tries = 0; tries < 100000; ++tries) {
    const TokenId a = pick(rng), b = pick(rng);
    if (a == b || std::abs(q[a] - q[b]) < min_gap) continue;
    return q[a] > q[b] ? std::pair{a, b} : std::pair{b, a};
  }
  throw TaskError("no token pair meets the quality gap");
}

}  // namespace detail

/// Trains EX and IM reward models on single-token preferences over a token
/// subset and evaluates both on preferences built from the remaining tokens.
inline UnseenTokenReport run_unseen_token_experiment(const UnseenTokenConfig& c) {
  validate(c);
  UnseenTokenReport rep;
  rep.config = c;
  const auto seen_hi = static_cast<TokenId>(c.train_token_count);
  const auto vocab_hi = static_cast<TokenId>(c.vocab_size);

  for (std::size_t attempt = 0; attempt < c.max_attempts; ++attempt) {
    const std::uint64_t seed = derive_seed(c.seed, attempt);
    Rng rng(derive_seed(seed, 7));
    detail::UnseenTokenGeometry geo{c.dim, c.prompt_length, c.signal, c.noise, seed, Vector(c.vocab_size)};
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (double& q : geo.quality) q = unit(rng);
    const Vector quality = geo.quality;
    auto reps = RepresentationProvider::composed(c.vocab_size, c.dim, geo);

    std::set<TokenSeq> used;
    std::uniform_int_distribution<TokenId> any(0, vocab_hi - 1);
    auto fresh_prompt = [&] {
      for (;;) {
        TokenSeq p(c.prompt_length);
        for (auto& t : p) t = any(rng);
        if (used.insert(p).second) return p;
      }
    };
    PreferenceDataset train{{}, "unseen_token_train", c.seed};
    PreferenceDataset eval{{}, "unseen_token_eval", c.seed};
    for (std::size_t i = 0; i < c.train_count; ++i) {
      const auto [a, b] = detail::draw_pair(rng, 0, seen_hi, quality, c.min_quality_gap);
      train.examples.emplace_back(fresh_prompt(), TokenSeq{a}, TokenSeq{b});
    }
    for (std::size_t i = 0; i < c.eval_count; ++i) {
      const auto [a, b] = detail::draw_pair(rng, seen_hi, vocab_hi, quality, c.min_quality_gap);
      eval.examples.emplace_back(fresh_prompt(), TokenSeq{a}, TokenSeq{b});
    }

    const auto ex_real = check_realizability(train, *reps, RealizabilityMode::Ex, c.beta, c.realizability_budget);
    const auto im_real = check_realizability(train, *reps, RealizabilityMode::Im, c.beta, c.realizability_budget);
    if (ex_real.status == Separability::Undetermined || im_real.status == Separability::Undetermined)
      throw TaskError("realizability undetermined: ex=" + to_string(ex_real.status) + " (" + ex_real.reason +
                      "), im=" + to_string(im_real.status) + " (" + im_real.reason + ")");
    if (ex_real.status != Separability::Separable || im_real.status != Separability::Separable) continue;

    rep.attempts = attempt + 1;
    rep.ex_realizability = ex_real.status;
    rep.im_realizability = im_real.status;
    rep.lr_bound = smoothness_and_lr_bound(train, *reps, c.beta);
    rep.learning_rate = c.lr_fraction * rep.lr_bound.bound;

    const auto ustar = max_margin_separator(train, *reps);
    rep.ustar_min_margin = ustar.min_margin;
    std::size_t ranked = 0;
    for (const auto& e : eval)
      if (dot(ustar.u, phi_ex(e, *reps)) > 0.0) ++ranked;
    rep.ustar_lower_bound = static_cast<double>(ranked) / static_cast<double>(eval.size());

    Rng init_rng(derive_seed(seed, 11));
    const PolicyState initial(gaussian_matrix(init_rng, c.vocab_size, c.dim, c.init_scale), reps);
    const RewardScorer ex0 = ExReward(LinearHead{Vector(c.dim, 0.0)}, reps);
    const RewardScorer im0 = ImReward(initial, initial, c.beta);

    TrainConfig tc;
    tc.learning_rate = rep.learning_rate;
    tc.steps = c.steps;
    tc.beta = c.beta;
    tc.record_every = c.record_every;
    tc.strict_lr = c.strict_lr;
    const auto ex_traj = gd_train(tc, train, ex0);
    const auto im_traj = gd_train(tc, train, im0);

    const Matrix& u0 = initial.unembedding();
    for (std::size_t i = 0; i < ex_traj.records.size(); ++i) {
      const auto& er = ex_traj.records[i];
      const auto& ir = im_traj.records[i];
      UnseenTokenStep s;
      s.step = er.step;
      s.ex_train_loss = er.loss;
      s.ex_train_accuracy = er.accuracy;
      s.im_train_loss = ir.loss;
      s.im_train_accuracy = ir.accuracy;
      s.ustar_lower_bound = rep.ustar_lower_bound;
      const RewardScorer ex_t = with_params(ex0, er.params);
      const RewardScorer im_t = with_params(im0, ir.params);
      s.ex_eval_accuracy = accuracy(ex_t, eval);
      s.im_eval_accuracy = accuracy(im_t, eval);
      for (const auto& e : eval)
        s.im_eval_max_abs_difference =
            std::max(s.im_eval_max_abs_difference, std::abs(reward_difference(im_t, e.prompt, e.chosen, e.rejected)));
      const Matrix& ut = std::get<Matrix>(ir.params);
      for (std::size_t t = c.train_token_count; t < c.vocab_size; ++t)
        for (std::size_t d = 0; d < c.dim; ++d)
          if (ut(t, d) != u0(t, d)) s.unseen_rows_identical = false;
      if (!rep.first_step_ex_meets_bound && s.ex_eval_accuracy >= s.ustar_lower_bound)
        rep.first_step_ex_meets_bound = s.step;
      rep.steps.push_back(s);
    }
    const RewardScorer im_final = final_scorer(im0, im_traj);
    for (const auto& e : eval) rep.im_final_eval_differences.push_back(reward_difference(im_final, e.prompt, e.chosen, e.rejected));
    rep.ex_final_cosine_to_ustar = cosine_similarity(std::get<Vector>(ex_traj.final_record().params), ustar.u);
    rep.train = std::move(train);
    rep.eval = std::move(eval);
    return rep;
  }
  throw TaskError("unseen-token experiment: no realizable instance within max_attempts");
}

}  // namespace rmgap
