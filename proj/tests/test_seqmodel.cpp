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

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "rmgap/seqmodel.hpp"

namespace rmgap {
namespace {

TEST(Vocabulary, RejectsTinyOrCollidingReserved) {
  EXPECT_THROW(Vocabulary(1), InputError);
  EXPECT_THROW(Vocabulary(4, {{"a", 1}, {"b", 1}}), InputError);
  EXPECT_THROW(Vocabulary(4, {{"a", 4}}), InputError);
  Vocabulary v(4, {{"yes", 2}, {"no", 3}});
  EXPECT_EQ(v.token("no"), 3u);
  EXPECT_THROW(v.token("maybe"), InputError);
  EXPECT_THROW(v.validate({0, 4}), InputError);
}

TEST(Representation, ExplicitTableLookup) {
  auto reps = RepresentationProvider::table(3, 2, {{TokenSeq{}, Vector{1.0, 0.0}}});
  EXPECT_EQ((*reps)({}), (Vector{1.0, 0.0}));
  EXPECT_THROW((*reps)({1}), InputError);
}

TEST(Representation, SeededIsDeterministicAndUnitNorm) {
  auto reps = RepresentationProvider::seeded(5, 8, 7);
  const Vector a = (*reps)({3, 1});
  const Vector b = (*reps)({3, 1});
  EXPECT_EQ(a, b);
  EXPECT_NEAR(oracle::compensated_norm(a), 1.0, 1e-9);
  EXPECT_NE((*reps)({1, 3}), a);
  // A second provider with the same seed reproduces the bits.
  EXPECT_EQ((*RepresentationProvider::seeded(5, 8, 7))({3, 1}), a);
}

TEST(Representation, InvalidTokenIsInputError) {
  auto reps = RepresentationProvider::seeded(5, 4, 1);
  EXPECT_THROW((*reps)({5}), InputError);
}

TEST(Representation, HookOutputIsChecked) {
  auto bad_dim = RepresentationProvider::composed(3, 2, [](const TokenSeq&) { return Vector{1.0}; });
  EXPECT_THROW((*bad_dim)({}), InputError);
  auto bad_val = RepresentationProvider::composed(3, 2, [](const TokenSeq&) { return Vector{NAN, 0.0}; });
  EXPECT_THROW((*bad_val)({}), NumericError);
}

TEST(Policy, ShapeChecks) {
  auto reps = RepresentationProvider::seeded(3, 2, 1);
  EXPECT_THROW(PolicyState(Matrix(2, 2), reps), InputError);
  EXPECT_THROW(PolicyState(Matrix(3, 3), reps), InputError);
  Matrix bad(3, 2);
  bad(0, 0) = INFINITY;
  EXPECT_THROW(PolicyState(bad, reps), NumericError);
}

TEST(Softmax, ZeroUnembeddingIsUniform) {
  auto reps = RepresentationProvider::seeded(4, 3, 2);
  PolicyState p(Matrix(4, 3), reps);
  for (double q : next_token_distribution(p, {1, 2})) EXPECT_DOUBLE_EQ(q, 0.25);
}

TEST(Softmax, HandComputedLogits) {
  const Vector p = softmax(Vector{std::log(1.0), std::log(2.0), std::log(3.0)});
  EXPECT_NEAR(p[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(p[2], 3.0 / 6.0, 1e-15);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Vector z = gaussian_vector(rng, 7, 5.0);
    Vector shifted = z;
    for (double& v : shifted) v += 123.25;
    const Vector a = softmax(z), b = softmax(shifted), ref = oracle::naive_softmax(z);
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_GT(a[i], 0.0);
      EXPECT_NEAR(a[i], b[i], 1e-12);
      EXPECT_NEAR(a[i], ref[i], 1e-12);
      total += a[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Vector p = softmax(Vector{1000.0, 999.0});
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_THROW(softmax(Vector{NAN, 0.0}), NumericError);
}

TEST(SequenceLogProb, EmptyAndUniform) {
  auto reps = RepresentationProvider::seeded(2, 3, 4);
  PolicyState p(Matrix(2, 3), reps);
  EXPECT_EQ(sequence_log_prob(p, {0}, {}), 0.0);
  EXPECT_NEAR(sequence_log_prob(p, {0}, {1, 0, 1}), 3.0 * std::log(0.5), 1e-14);
}

TEST(SequenceLogProb, HandComputedTwoSteps) {
  // h = e_0 at every prefix and U's first column holds ln 1, ln 2, ln 3.
  auto reps = RepresentationProvider::composed(3, 2, [](const TokenSeq&) { return Vector{1.0, 0.0}; });
  Matrix u(3, 2);
  u(0, 0) = std::log(1.0);
  u(1, 0) = std::log(2.0);
  u(2, 0) = std::log(3.0);
  PolicyState p(u, reps);
  EXPECT_NEAR(sequence_log_prob(p, {0}, {2, 2}), 2.0 * std::log(0.5), 1e-14);
}

TEST(SequenceLogProb, ChainRule) {
  Rng rng(11);
  auto reps = RepresentationProvider::seeded(6, 4, 9);
  for (int trial = 0; trial < 50; ++trial) {
    PolicyState p(gaussian_matrix(rng, 6, 4, 1.0), reps);
    std::uniform_int_distribution<TokenId> tok(0, 5);
    TokenSeq x{tok(rng), tok(rng)}, y{tok(rng), tok(rng)}, y2{tok(rng), tok(rng), tok(rng)};
    const double whole = sequence_log_prob(p, x, concat(y, y2));
    const double parts = sequence_log_prob(p, x, y) + sequence_log_prob(p, concat(x, y), y2);
    EXPECT_NEAR(whole, parts, 1e-10);
    EXPECT_LE(whole, 0.0);
  }
}

TEST(Sampling, OneHotPolicyRepeatsToken) {
  auto reps = RepresentationProvider::composed(3, 1, [](const TokenSeq&) { return Vector{1.0}; });
  Matrix u(3, 1);
  u(2, 0) = 800.0;
  PolicyState p(u, reps);
  Rng rng(1);
  EXPECT_EQ(sample_response(p, {0}, 5, std::nullopt, rng), (TokenSeq{2, 2, 2, 2, 2}));
  EXPECT_EQ(sample_response(p, {0}, 5, TokenId{2}, rng), (TokenSeq{2}));
  EXPECT_THROW(sample_response(p, {0}, 0, std::nullopt, rng), InputError);
}

TEST(Sampling, SameSeedSameSequence) {
  auto reps = RepresentationProvider::seeded(5, 3, 2);
  Rng init(4);
  PolicyState p(gaussian_matrix(init, 5, 3, 1.0), reps);
  Rng a(99), b(99);
  EXPECT_EQ(sample_response(p, {1}, 20, std::nullopt, a), sample_response(p, {1}, 20, std::nullopt, b));
}

TEST(Sampling, UniformBinaryFrequency) {
  auto reps = RepresentationProvider::seeded(2, 2, 5);
  PolicyState p(Matrix(2, 2), reps);
  Rng rng(2024);
  int zeros = 0;
  for (int i = 0; i < 10000; ++i) zeros += sample_response(p, {1}, 1, std::nullopt, rng)[0] == 0;
  EXPECT_GE(zeros / 10000.0, 0.48);
  EXPECT_LE(zeros / 10000.0, 0.52);
}

}  // namespace
}  // namespace rmgap
