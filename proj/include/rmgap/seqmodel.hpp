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

// Vocabulary, token sequences, frozen hidden representations and the
// softmax next-token policy built on an unembedding matrix.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rmgap/errors.hpp"
#include "rmgap/linalg.hpp"
#include "rmgap/random.hpp"

namespace rmgap {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

inline TokenSeq concat(const TokenSeq& a, const TokenSeq& b) {
  TokenSeq out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

/// prompt followed by the first `len` tokens of response.
inline TokenSeq prefix_of(const TokenSeq& prompt, const TokenSeq& response, std::size_t len) {
  TokenSeq out;
  out.reserve(prompt.size() + len);
  out.insert(out.end(), prompt.begin(), prompt.end());
  out.insert(out.end(), response.begin(), response.begin() + static_cast<std::ptrdiff_t>(len));
  return out;
}

class Vocabulary {
 public:
  Vocabulary(std::size_t size, std::map<std::string, TokenId, std::less<>> reserved = {})
      : size_(size), reserved_(std::move(reserved)) {
    if (size_ < 2) throw InputError("vocabulary size must be at least 2");
    std::vector<TokenId> ids;
    for (const auto& [name, id] : reserved_) {
      if (id >= size_) throw InputError("reserved token '" + name + "' out of range");
      ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw InputError("reserved token ids must be distinct");
  }

  std::size_t size() const { return size_; }
  const auto& reserved() const { return reserved_; }

  TokenId token(std::string_view name) const {
    auto it = reserved_.find(name);
    if (it == reserved_.end()) throw InputError("no reserved token named '" + std::string(name) + "'");
    return it->second;
  }

  bool contains(TokenId id) const { return id < size_; }

  void validate(const TokenSeq& seq) const {
    for (TokenId t : seq)
      if (t >= size_) throw InputError("token id " + std::to_string(t) + " outside vocabulary");
  }

 private:
  std::size_t size_;
  std::map<std::string, TokenId, std::less<>> reserved_;
};

/// Deterministic map from a token prefix to a frozen D-dimensional vector.
class RepresentationProvider {
 public:
  struct ExplicitTable {
    std::map<TokenSeq, Vector> table;
  };
  /// Unit-norm Gaussian direction seeded by a hash of (seed, prefix).
  struct SeededRandom {
    std::uint64_t seed;
  };
  struct Composed {
    std::function<Vector(const TokenSeq&)> hook;
  };
  using Source = std::variant<ExplicitTable, SeededRandom, Composed>;

  RepresentationProvider(std::size_t vocab_size, std::size_t dim, Source source)
      : vocab_size_(vocab_size), dim_(dim), source_(std::move(source)) {
    if (dim_ == 0) throw InputError("representation dimension must be positive");
    if (vocab_size_ < 2) throw InputError("vocabulary size must be at least 2");
  }

  static std::shared_ptr<const RepresentationProvider> table(std::size_t vocab_size, std::size_t dim,
                                                             std::map<TokenSeq, Vector> entries) {
    return std::make_shared<const RepresentationProvider>(vocab_size, dim,
                                                          ExplicitTable{std::move(entries)});
  }
  static std::shared_ptr<const RepresentationProvider> seeded(std::size_t vocab_size, std::size_t dim,
                                                              std::uint64_t seed) {
    return std::make_shared<const RepresentationProvider>(vocab_size, dim, SeededRandom{seed});
  }
  static std::shared_ptr<const RepresentationProvider> composed(
      std::size_t vocab_size, std::size_t dim, std::function<Vector(const TokenSeq&)> hook) {
    return std::make_shared<const RepresentationProvider>(vocab_size, dim, Composed{std::move(hook)});
  }

  std::size_t dim() const { return dim_; }
  std::size_t vocab_size() const { return vocab_size_; }
  const Source& source() const { return source_; }

  Vector operator()(const TokenSeq& prefix) const {
    for (TokenId t : prefix)
      if (t >= vocab_size_) throw InputError("token id " + std::to_string(t) + " outside vocabulary");
    Vector v = std::visit([&](const auto& s) { return lookup(s, prefix); }, source_);
    if (v.size() != dim_) throw InputError("representation has wrong dimension");
    if (!all_finite(v)) throw NumericError("representation has non-finite entries");
    return v;
  }

 private:
  Vector lookup(const ExplicitTable& s, const TokenSeq& prefix) const {
    auto it = s.table.find(prefix);
    if (it == s.table.end()) throw InputError("no representation for prefix of length " +
                                              std::to_string(prefix.size()));
    return it->second;
  }
  Vector lookup(const SeededRandom& s, const TokenSeq& prefix) const {
    Rng rng(hash_sequence<TokenId>(s.seed, prefix));
    return random_unit_vector(rng, dim_);
  }
  Vector lookup(const Composed& s, const TokenSeq& prefix) const { return s.hook(prefix); }

  std::size_t vocab_size_;
  std::size_t dim_;
  Source source_;
};

using RepresentationPtr = std::shared_ptr<const RepresentationProvider>;

inline Vector representation(const RepresentationProvider& provider, const TokenSeq& prefix) {
  return provider(prefix);
}

/// Unembedding matrix U (|V| x D) over a shared representation provider.
class PolicyState {
 public:
  PolicyState(Matrix unembedding, RepresentationPtr reps)
      : unembedding_(std::move(unembedding)), reps_(std::move(reps)) {
    if (!reps_) throw InputError("policy requires a representation provider");
    if (unembedding_.rows() != reps_->vocab_size())
      throw InputError("unembedding rows must equal vocabulary size");
    if (unembedding_.cols() != reps_->dim())
      throw InputError("unembedding columns must equal representation dimension");
    if (!all_finite(unembedding_.flat())) throw NumericError("unembedding has non-finite entries");
  }

  const Matrix& unembedding() const { return unembedding_; }
  const RepresentationPtr& reps() const { return reps_; }
  std::size_t vocab_size() const { return unembedding_.rows(); }
  std::size_t dim() const { return unembedding_.cols(); }

  PolicyState with_unembedding(Matrix u) const { return PolicyState(std::move(u), reps_); }

 private:
  Matrix unembedding_;
  RepresentationPtr reps_;
};

inline Vector logits(const Matrix& unembedding, std::span<const double> h) {
  Vector out(unembedding.rows());
  for (std::size_t v = 0; v < unembedding.rows(); ++v) out[v] = dot(unembedding.row(v), h);
  return out;
}

inline double log_sum_exp(std::span<const double> z) {
  if (z.empty()) throw InputError("log_sum_exp of empty vector");
  const double m = *std::max_element(z.begin(), z.end());
  if (!std::isfinite(m)) throw NumericError("non-finite logits");
  long double s = 0.0L;
  for (double x : z) s += std::exp(static_cast<long double>(x - m));
  return m + static_cast<double>(std::log(s));
}

inline Vector softmax(std::span<const double> z) {
  if (!all_finite(z)) throw NumericError("non-finite logits");
  const double m = *std::max_element(z.begin(), z.end());
  Vector p(z.size());
  long double s = 0.0L;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    s += p[i];
  }
  for (double& x : p) x = static_cast<double>(x / s);
  return p;
}

inline Vector next_token_distribution_at(const Matrix& unembedding, std::span<const double> h) {
  return softmax(logits(unembedding, h));
}

inline Vector next_token_distribution(const PolicyState& policy, const TokenSeq& prefix) {
  const Vector h = (*policy.reps())(prefix);
  return next_token_distribution_at(policy.unembedding(), h);
}

inline double token_log_prob_at(const Matrix& unembedding, std::span<const double> h, TokenId token) {
  const Vector z = logits(unembedding, h);
  return z[token] - log_sum_exp(z);
}

/// Sum over k of ln pi(y_k | x, y_<k).
inline double sequence_log_prob(const PolicyState& policy, const TokenSeq& prompt,
                                const TokenSeq& response) {
  for (TokenId t : response)
    if (t >= policy.vocab_size()) throw InputError("response token outside vocabulary");
  long double total = 0.0L;
  for (std::size_t k = 0; k < response.size(); ++k) {
    const Vector h = (*policy.reps())(prefix_of(prompt, response, k));
    total += token_log_prob_at(policy.unembedding(), h, response[k]);
  }
  return static_cast<double>(total);
}

inline TokenId sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  // Rounding left a sliver of mass past the last bucket.
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return static_cast<TokenId>(i);
  return 0;
}

/// Ancestral sampling at temperature 1.
inline TokenSeq sample_response(const PolicyState& policy, const TokenSeq& prompt, std::size_t max_len,
                                std::optional<TokenId> stop_token, Rng& rng) {
  if (max_len < 1) throw InputError("max_len must be at least 1");
  TokenSeq context = prompt;
  TokenSeq out;
  while (out.size() < max_len) {
    const Vector p = next_token_distribution(policy, context);
    const TokenId t = sample_categorical(p, rng);
    out.push_back(t);
    context.push_back(t);
    if (stop_token && t == *stop_token) break;
  }
  return out;
}

}  // namespace rmgap
