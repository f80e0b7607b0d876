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

// Synthetic preference tasks: Hamiltonian-cycle verification over random
// graphs with a planted cycle, and a token-level shift task whose paraphrase
// tokens never appear in training but have controlled representations.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rmgap/dataset.hpp"
#include "rmgap/random.hpp"
#include "rmgap/training.hpp"

namespace rmgap {

using Vertex = std::uint32_t;
using Permutation = std::vector<Vertex>;

/// Undirected simple graph on vertices [0, n).
class Graph {
 public:
  explicit Graph(std::size_t n = 0) : n_(n) {}

  std::size_t vertex_count() const { return n_; }
  const std::set<std::pair<Vertex, Vertex>>& edges() const { return edges_; }
  std::size_t edge_count() const { return edges_.size(); }

  void add_edge(Vertex a, Vertex b) {
    if (a == b) throw InputError("self-loops are not allowed");
    if (a >= n_ || b >= n_) throw InputError("edge endpoint out of range");
    edges_.insert(std::minmax(a, b));
  }

  bool has_edge(Vertex a, Vertex b) const {
    if (a == b) return false;
    return edges_.count(std::minmax(a, b)) > 0;
  }

  bool is_complete() const { return edges_.size() == n_ * (n_ - 1) / 2; }

  bool operator==(const Graph&) const = default;

 private:
  std::size_t n_;
  std::set<std::pair<Vertex, Vertex>> edges_;
};

struct HamGraph {
  Graph graph;
  Permutation planted_cycle;
};

/// Plants the cycle of a random permutation, then adds every other edge
/// independently with probability p.
inline HamGraph generate_ham_graph(std::size_t n, double p, Rng& rng) {
  if (n < 3) throw InputError("Hamiltonian graphs need at least 3 vertices");
  if (!(p >= 0.0 && p <= 1.0)) throw InputError("p must lie in [0, 1]");
  HamGraph out{Graph(n), Permutation(n)};
  std::iota(out.planted_cycle.begin(), out.planted_cycle.end(), Vertex{0});
  std::shuffle(out.planted_cycle.begin(), out.planted_cycle.end(), rng);
  for (std::size_t i = 0; i < n; ++i) out.graph.add_edge(out.planted_cycle[i], out.planted_cycle[(i + 1) % n]);
  for (Vertex a = 0; a < n; ++a)
    for (Vertex b = a + 1; b < n; ++b) {
      if (out.graph.has_edge(a, b)) continue;
      if (uniform01(rng) < p) out.graph.add_edge(a, b);
    }
  return out;
}

inline bool is_hamiltonian_cycle(const Graph& g, const Permutation& perm) {
  const std::size_t n = g.vertex_count();
  if (n < 3 || perm.size() != n) return false;
  std::vector<bool> seen(n, false);
  for (Vertex v : perm) {
    if (v >= n || seen[v]) return false;
    seen[v] = true;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!g.has_edge(perm[i], perm[(i + 1) % n])) return false;
  return true;
}

/// Uniform permutation rejected until it is not a Hamiltonian cycle. After
/// max_tries, falls back to swapping pairs of positions in `base` (the planted
/// cycle when given, else the identity) and returns the first non-cycle.
inline Permutation negative_permutation(const Graph& g, Rng& rng, std::size_t max_tries = 100,
                                        std::optional<Permutation> base = std::nullopt) {
  const std::size_t n = g.vertex_count();
  if (g.is_complete()) throw TaskError("every permutation of a complete graph is a Hamiltonian cycle");
  Permutation perm(n);
  std::iota(perm.begin(), perm.end(), Vertex{0});
  for (std::size_t t = 0; t < max_tries; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    if (!is_hamiltonian_cycle(g, perm)) return perm;
  }
  Permutation start = base.value_or(Permutation{});
  if (start.size() != n) {
    start.resize(n);
    std::iota(start.begin(), start.end(), Vertex{0});
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 2; j < n; ++j) {
      Permutation cand = start;
      std::swap(cand[i], cand[j]);
      if (!is_hamiltonian_cycle(g, cand)) return cand;
    }
  throw TaskError("no non-Hamiltonian permutation found");
}

/// Vertex tokens 0..max_vertices-1 followed by the structural tokens.
inline Vocabulary ham_vocabulary(std::size_t max_vertices) {
  const auto base = static_cast<TokenId>(max_vertices);
  return Vocabulary(max_vertices + 7, {{"sep", base},
                                       {"edge_sep", base + 1},
                                       {"yes", base + 2},
                                       {"no", base + 3},
                                       {"vertices", base + 4},
                                       {"edges", base + 5},
                                       {"newline", base + 6}});
}

inline std::size_t vertex_budget(const Vocabulary& vocab) { return vocab.token("sep"); }

/// [vertices] ([sep] v)* [newline] [edges] ([sep] a [edge_sep] b)* with edges
/// in sorted order: 3 + 2n + 4|E| tokens.
inline TokenSeq encode_ham_prompt(const Graph& g, const Vocabulary& vocab) {
  if (g.vertex_count() > vertex_budget(vocab)) throw ConfigError("graph has more vertices than vertex tokens");
  const TokenId sep = vocab.token("sep");
  TokenSeq out{vocab.token("vertices")};
  for (Vertex v = 0; v < g.vertex_count(); ++v) {
    out.push_back(sep);
    out.push_back(v);
  }
  out.push_back(vocab.token("newline"));
  out.push_back(vocab.token("edges"));
  for (const auto& [a, b] : g.edges()) {
    out.push_back(sep);
    out.push_back(a);
    out.push_back(vocab.token("edge_sep"));
    out.push_back(b);
  }
  return out;
}

/// v0 [sep] v1 [sep] ... v_{n-1} [sep]
inline TokenSeq encode_ham_response(const Permutation& perm, const Vocabulary& vocab) {
  const TokenId sep = vocab.token("sep");
  TokenSeq out;
  for (Vertex v : perm) {
    if (v >= vertex_budget(vocab)) throw ConfigError("vertex id exceeds vertex-token budget");
    out.push_back(v);
    out.push_back(sep);
  }
  return out;
}

inline Graph decode_ham_prompt(const TokenSeq& prompt, const Vocabulary& vocab) {
  const TokenId sep = vocab.token("sep");
  const TokenId esep = vocab.token("edge_sep");
  std::size_t i = 0;
  auto expect = [&](TokenId t) {
    if (i >= prompt.size() || prompt[i] != t) throw InputError("malformed Hamiltonian prompt");
    ++i;
  };
  expect(vocab.token("vertices"));
  std::size_t n = 0;
  while (i < prompt.size() && prompt[i] == sep) {
    ++i;
    if (i >= prompt.size() || prompt[i] != n) throw InputError("malformed vertex list");
    ++n;
    ++i;
  }
  expect(vocab.token("newline"));
  expect(vocab.token("edges"));
  Graph g(n);
  while (i < prompt.size()) {
    expect(sep);
    if (i + 3 > prompt.size() || prompt[i + 1] != esep) throw InputError("malformed edge");
    g.add_edge(prompt[i], prompt[i + 2]);
    i += 3;
  }
  return g;
}

/// nullopt when the tokens are not of the form v [sep] v [sep] ...
inline std::optional<Permutation> decode_ham_response(const TokenSeq& response, const Vocabulary& vocab) {
  const TokenId sep = vocab.token("sep");
  if (response.empty() || response.size() % 2 != 0) return std::nullopt;
  Permutation perm;
  for (std::size_t i = 0; i < response.size(); i += 2) {
    if (response[i] >= sep || response[i + 1] != sep) return std::nullopt;
    perm.push_back(response[i]);
  }
  return perm;
}

inline PreferenceExample encode_ham_example(const Graph& g, const Permutation& positive, const Permutation& negative,
                                            const Vocabulary& vocab) {
  return PreferenceExample(encode_ham_prompt(g, vocab), encode_ham_response(positive, vocab),
                           encode_ham_response(negative, vocab));
}

struct HamTaskConfig {
  std::size_t n = 10;
  double p = 0.2;
  std::size_t train_count = 200;
  std::size_t test_count = 50;
  std::uint64_t seed = 0;
  std::size_t max_negative_tries = 100;
};

struct HamDataset {
  Vocabulary vocab;
  PreferenceDataset train;
  PreferenceDataset test;
  std::vector<HamGraph> train_graphs;
  std::vector<HamGraph> test_graphs;
};

inline void validate(const HamTaskConfig& c) {
  if (c.n < 3) throw ConfigError("n must be at least 3");
  if (!(c.p >= 0.0 && c.p <= 1.0)) throw ConfigError("p must lie in [0, 1]");
}

/// Each example draws its own graph from an independent sub-seed; train and
/// test use disjoint seed streams.
inline HamDataset make_ham_dataset(const HamTaskConfig& c) {
  validate(c);
  HamDataset out{ham_vocabulary(c.n), {}, {}, {}, {}};
  auto fill = [&](std::size_t count, std::uint64_t stream, PreferenceDataset& data, std::vector<HamGraph>& graphs,
                  const std::string& name) {
    data.name = name;
    data.seed = c.seed;
    const std::uint64_t split_seed = derive_seed(c.seed, stream);
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng(derive_seed(split_seed, i));
      HamGraph hg = generate_ham_graph(c.n, c.p, rng);
      const Permutation neg = negative_permutation(hg.graph, rng, c.max_negative_tries, hg.planted_cycle);
      data.examples.push_back(encode_ham_example(hg.graph, hg.planted_cycle, neg, out.vocab));
      graphs.push_back(std::move(hg));
    }
  };
  fill(c.train_count, 0, out.train, out.train_graphs, "ham_train");
  fill(c.test_count, 1, out.test, out.test_graphs, "ham_test");
  return out;
}

/// "n a-b a-b ..." edge-list text, one graph per line.
inline std::string edge_list_text(const Graph& g) {
  std::ostringstream os;
  os << g.vertex_count();
  for (const auto& [a, b] : g.edges()) os << ' ' << a << '-' << b;
  return os.str();
}

// ---------------------------------------------------------------------------
// Token-level shift.

struct TokenShiftConfig {
  std::size_t vocab_size = 32;
  std::size_t dim = 16;
  std::size_t prompt_length = 3;
  std::size_t train_prompt_count = 40;
  std::size_t test_prompt_count = 20;
  /// (good, bad) token pairs seen in training.
  std::vector<std::pair<TokenId, TokenId>> original_token_pairs{{0, 1}, {2, 3}, {4, 5}, {6, 7}};
  /// Paraphrase of each original pair, position by position.
  std::vector<std::pair<TokenId, TokenId>> paraphrase_token_pairs{{8, 9}, {10, 11}, {12, 13}, {14, 15}};
  double representation_similarity = 0.9;
  double signal = 1.0;       // weight of the quality direction in original response representations
  double noise = 0.1;        // per-coordinate noise scale
  std::uint64_t seed = 0;
  std::size_t max_attempts = 16;
};

struct TokenShiftTask {
  PreferenceDataset train;
  PreferenceDataset eval_original;
  PreferenceDataset eval_paraphrased;
  RepresentationPtr reps;
  std::size_t attempts = 0;
};

inline void validate(const TokenShiftConfig& c) {
  if (c.dim < 4) throw ConfigError("dim must be at least 4");
  if (c.prompt_length == 0) throw ConfigError("prompt_length must be positive");
  if (!(c.representation_similarity >= -1.0 && c.representation_similarity <= 1.0))
    throw ConfigError("representation_similarity must lie in [-1, 1]");
  if (c.original_token_pairs.empty() || c.original_token_pairs.size() != c.paraphrase_token_pairs.size())
    throw ConfigError("original and paraphrase token pairs must be non-empty and of equal count");
  std::set<TokenId> orig, para;
  for (auto [a, b] : c.original_token_pairs) {
    if (a == b) throw ConfigError("a token pair must hold two distinct tokens");
    orig.insert(a);
    orig.insert(b);
  }
  for (auto [a, b] : c.paraphrase_token_pairs) {
    if (a == b) throw ConfigError("a token pair must hold two distinct tokens");
    para.insert(a);
    para.insert(b);
  }
  for (TokenId t : orig)
    if (para.count(t)) throw ConfigError("paraphrase tokens must be disjoint from original tokens");
  for (TokenId t : orig)
    if (t >= c.vocab_size) throw ConfigError("token id outside vocabulary");
  for (TokenId t : para)
    if (t >= c.vocab_size) throw ConfigError("token id outside vocabulary");
  if (c.train_prompt_count == 0 || c.test_prompt_count == 0) throw ConfigError("prompt counts must be positive");
}

namespace detail {

/// Representation geometry of the token-shift task. Coordinates split into a
/// block A = [0, D/2) carrying prompts and original responses, and a block B =
/// [D/2, D) carrying only the paraphrase offsets:
///   h_x           = normalize(e_0 + noise_A)
///   h_{x,t}       = normalize(q_t * signal * e_1 + noise_A),  q_t = +1 good / -1 bad
///   h_{x,t'}      = s h_{x,t} + sqrt(1 - s^2) w,              w unit in block B
struct TokenShiftGeometry {
  TokenShiftConfig config;
  std::map<TokenId, std::pair<TokenId, double>> role;  // token -> (original token, quality)
  std::set<TokenId> paraphrase_tokens;
  std::uint64_t seed;

  Vector block_a_noise(Rng& rng) const {
    const std::size_t half = config.dim / 2;
    Vector v(config.dim, 0.0);
    std::normal_distribution<double> normal(0.0, config.noise);
    for (std::size_t i = 0; i < half; ++i) v[i] = normal(rng);
    return v;
  }

  Vector original(const TokenSeq& prompt, TokenId token, double quality) const {
    TokenSeq key = prompt;
    key.push_back(token);
    Rng rng(hash_sequence<TokenId>(derive_seed(seed, 1), key));
    Vector v = block_a_noise(rng);
    v[1] += quality * config.signal;
    const double n = norm(v);
    for (double& x : v) x /= n;
    return v;
  }

  Vector operator()(const TokenSeq& prefix) const {
    const std::size_t len = config.prompt_length;
    if (prefix.size() == len) {
      Rng rng(hash_sequence<TokenId>(derive_seed(seed, 0), prefix));
      Vector v = block_a_noise(rng);
      v[0] += 1.0;
      const double n = norm(v);
      for (double& x : v) x /= n;
      return v;
    }
    if (prefix.size() == len + 1) {
      const TokenId t = prefix.back();
      const TokenSeq prompt(prefix.begin(), prefix.end() - 1);
      auto it = role.find(t);
      if (it != role.end()) {
        const auto [orig_token, quality] = it->second;
        if (!paraphrase_tokens.count(t)) return original(prompt, t, quality);
        const Vector h = original(prompt, orig_token, quality);
        Rng rng(hash_sequence<TokenId>(derive_seed(seed, 2), prefix));
        const std::size_t half = config.dim / 2;
        Vector w(config.dim, 0.0);
        const Vector g = random_unit_vector(rng, config.dim - half);
        std::copy(g.begin(), g.end(), w.begin() + static_cast<std::ptrdiff_t>(half));
        const double s = config.representation_similarity;
        const double c = std::sqrt(std::max(0.0, 1.0 - s * s));
        Vector out(config.dim);
        for (std::size_t i = 0; i < config.dim; ++i) out[i] = s * h[i] + c * w[i];
        return out;
      }
    }
    Rng rng(hash_sequence<TokenId>(derive_seed(seed, 3), prefix));
    return random_unit_vector(rng, config.dim);
  }
};

inline TokenSeq random_prompt(Rng& rng, std::size_t length, const std::vector<TokenId>& pool) {
  TokenSeq p(length);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (auto& t : p) t = pool[pick(rng)];
  return p;
}

}  // namespace detail

/// Builds train / original-eval / paraphrased-eval sets plus their
/// representation provider, resampling until both EX and IM embeddings of the
/// training set are certified separable.
inline TokenShiftTask make_token_shift_task(const TokenShiftConfig& c) {
  validate(c);
  std::set<TokenId> response_tokens;
  for (auto [a, b] : c.original_token_pairs) response_tokens.insert({a, b});
  for (auto [a, b] : c.paraphrase_token_pairs) response_tokens.insert({a, b});
  std::vector<TokenId> prompt_pool;
  for (TokenId t = 0; t < c.vocab_size; ++t)
    if (!response_tokens.count(t)) prompt_pool.push_back(t);
  if (prompt_pool.empty())
    for (TokenId t = 0; t < c.vocab_size; ++t) prompt_pool.push_back(t);

  for (std::size_t attempt = 0; attempt < c.max_attempts; ++attempt) {
    const std::uint64_t seed = derive_seed(c.seed, attempt);
    detail::TokenShiftGeometry geo{c, {}, {}, seed};
    for (std::size_t j = 0; j < c.original_token_pairs.size(); ++j) {
      const auto [g, b] = c.original_token_pairs[j];
      const auto [pg, pb] = c.paraphrase_token_pairs[j];
      geo.role[g] = {g, 1.0};
      geo.role[b] = {b, -1.0};
      geo.role[pg] = {g, 1.0};
      geo.role[pb] = {b, -1.0};
      geo.paraphrase_tokens.insert({pg, pb});
    }
    auto reps = RepresentationProvider::composed(c.vocab_size, c.dim, geo);

    Rng rng(derive_seed(seed, 100));
    std::set<TokenSeq> used;
    auto fresh_prompt = [&] {
      for (;;) {
        TokenSeq p = detail::random_prompt(rng, c.prompt_length, prompt_pool);
        if (used.insert(p).second) return p;
      }
    };
    TokenShiftTask task;
    task.reps = reps;
    task.attempts = attempt + 1;
    task.train = {{}, "token_shift_train", c.seed};
    task.eval_original = {{}, "token_shift_eval_original", c.seed};
    task.eval_paraphrased = {{}, "token_shift_eval_paraphrased", c.seed};
    const std::size_t pairs = c.original_token_pairs.size();
    for (std::size_t i = 0; i < c.train_prompt_count; ++i) {
      const auto [g, b] = c.original_token_pairs[i % pairs];
      task.train.examples.emplace_back(fresh_prompt(), TokenSeq{g}, TokenSeq{b});
    }
    for (std::size_t i = 0; i < c.test_prompt_count; ++i) {
      const TokenSeq x = fresh_prompt();
      const auto [g, b] = c.original_token_pairs[i % pairs];
      const auto [pg, pb] = c.paraphrase_token_pairs[i % pairs];
      task.eval_original.examples.emplace_back(x, TokenSeq{g}, TokenSeq{b});
      task.eval_paraphrased.examples.emplace_back(x, TokenSeq{pg}, TokenSeq{pb});
    }
    const auto ex = check_realizability(task.train, *reps, RealizabilityMode::Ex);
    const auto im = check_realizability(task.train, *reps, RealizabilityMode::Im);
    if (ex.status == Separability::Separable && im.status == Separability::Separable) return task;
  }
  throw TaskError("token-shift task: no realizable instance within max_attempts");
}

}  // namespace rmgap
