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

// Randomized small instances shared by the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "rmgap/rmgap.hpp"

namespace testing_support {

using namespace rmgap;

struct Instance {
  std::size_t vocab = 0;
  std::size_t dim = 0;
  RepresentationPtr reps;
  PreferenceDataset data;
};

inline TokenSeq random_seq(Rng& rng, std::size_t vocab, std::size_t len) {
  std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(vocab - 1));
  TokenSeq s(len);
  for (auto& t : s) t = tok(rng);
  return s;
}

/// Unit-norm seeded representations and random preferences with responses of
/// length 1..max_response.
inline Instance random_instance(Rng& rng, std::size_t vocab, std::size_t dim, std::size_t examples,
                                std::size_t max_prompt = 3, std::size_t max_response = 3) {
  Instance inst;
  inst.vocab = vocab;
  inst.dim = dim;
  inst.reps = RepresentationProvider::seeded(vocab, dim, rng());
  inst.data.name = "random";
  std::uniform_int_distribution<std::size_t> plen(1, max_prompt), rlen(1, max_response);
  while (inst.data.size() < examples) {
    TokenSeq x = random_seq(rng, vocab, plen(rng));
    TokenSeq a = random_seq(rng, vocab, rlen(rng));
    TokenSeq b = random_seq(rng, vocab, rlen(rng));
    if (a == b) continue;
    inst.data.examples.emplace_back(std::move(x), std::move(a), std::move(b));
  }
  return inst;
}

inline RewardScorer random_ex(Rng& rng, const Instance& inst, double scale = 1.0) {
  return ExReward(LinearHead{gaussian_vector(rng, inst.dim, scale)}, inst.reps);
}

inline RewardScorer random_im(Rng& rng, const Instance& inst, double beta = 1.0, double scale = 1.0) {
  const PolicyState ref(gaussian_matrix(rng, inst.vocab, inst.dim, scale), inst.reps);
  return ImReward(ref.with_unembedding(gaussian_matrix(rng, inst.vocab, inst.dim, scale)), ref, beta);
}

/// Template separator is the last token; yes = 0, no = 1.
inline RewardScorer random_exgrm(Rng& rng, const Instance& inst, double scale = 1.0) {
  const PolicyState p(gaussian_matrix(rng, inst.vocab, inst.dim, scale), inst.reps);
  return ExGrmReward(p, GrmTemplate::with_separator(static_cast<TokenId>(inst.vocab - 1), 0, 1));
}

/// The training objective of `scorer` with its parameters replaced by `theta`.
inline double objective_at(const RewardScorer& scorer, const PreferenceDataset& data, const std::vector<double>& theta) {
  Params p = trainable_params(scorer);
  auto f = flat(p);
  std::copy(theta.begin(), theta.end(), f.begin());
  const RewardScorer s = with_params(scorer, std::move(p));
  return kind_of(s) == RewardKind::ExGrm ? grm_loss(s, data) : bt_loss(s, data);
}

inline std::vector<double> analytic_gradient(const RewardScorer& scorer, const PreferenceDataset& data) {
  if (kind_of(scorer) == RewardKind::ExGrm) {
    const Matrix g = grm_gradient(scorer, data);
    return {g.flat().begin(), g.flat().end()};
  }
  const Params g = bt_gradient(scorer, data);
  const auto f = flat(g);
  return {f.begin(), f.end()};
}

/// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double scale = std::max(oracle::compensated_norm(a), oracle::compensated_norm(b));
  return scale == 0.0 ? 0.0 : oracle::compensated_norm(d) / scale;
}

inline double finite_difference_error(const RewardScorer& scorer, const PreferenceDataset& data) {
  const Params p0 = trainable_params(scorer);
  const auto theta0 = flat(p0);
  const std::vector<double> theta(theta0.begin(), theta0.end());
  const auto fd = oracle::finite_difference_gradient(
      [&](const std::vector<double>& t) { return objective_at(scorer, data, t); }, theta);
  return relative_error(analytic_gradient(scorer, data), fd);
}

}  // namespace testing_support
