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

#include "oracles.hpp"
#include "rmgap/rewards.hpp"

namespace rmgap {
namespace {

struct Fixture {
  RepresentationPtr reps = RepresentationProvider::seeded(6, 4, 21);
  Rng rng{5};
  PolicyState random_policy(double scale = 1.0) { return PolicyState(gaussian_matrix(rng, 6, 4, scale), reps); }
};

TEST(ExReward, ZeroHeadScoresZero) {
  Fixture f;
  const RewardScorer s = ExReward(LinearHead{Vector(4, 0.0)}, f.reps);
  EXPECT_EQ(score(s, {1, 2}, {3}), 0.0);
  EXPECT_EQ(score(s, {0}, {5, 4}), 0.0);
}

TEST(ExReward, HandInnerProduct) {
  auto reps = RepresentationProvider::table(4, 2, {{TokenSeq{0, 1}, Vector{3.0, -1.0}}});
  const RewardScorer s = ExReward(LinearHead{{1.0, 2.0}}, reps);
  EXPECT_DOUBLE_EQ(score(s, {0}, {1}), 1.0);
}

TEST(ExReward, DifferenceIsLinear) {
  Fixture f;
  const Vector u = gaussian_vector(f.rng, 4);
  const RewardScorer s = ExReward(LinearHead{u}, f.reps);
  const Vector d = subtract((*f.reps)({1, 2}), (*f.reps)({1, 3}));
  EXPECT_NEAR(reward_difference(s, {1}, {2}, {3}), oracle::plain_dot(u, d), 1e-12);
  EXPECT_EQ(reward_difference(s, {1}, {2}, {2}), 0.0);
}

TEST(ExReward, Validation) {
  Fixture f;
  EXPECT_THROW(ExReward(LinearHead{Vector(3, 0.0)}, f.reps), InputError);
  const RewardScorer s = ExReward(LinearHead{Vector(4, 0.0)}, f.reps);
  EXPECT_THROW(score(s, {1}, {}), InputError);
  EXPECT_THROW(score(s, {1}, {6}), InputError);
}

TEST(ExAllRepr, MeanOfPrefixRepresentations) {
  Fixture f;
  const Vector u = gaussian_vector(f.rng, 4);
  const RewardScorer s = ExAllReprReward(LinearHead{u}, f.reps);
  Vector mean(4, 0.0);
  for (const TokenSeq& p : {TokenSeq{0, 1}, TokenSeq{0, 1, 2}, TokenSeq{0, 1, 2, 3}})
    for (std::size_t i = 0; i < 4; ++i) mean[i] += (*f.reps)(p)[i] / 3.0;
  EXPECT_NEAR(score(s, {0}, {1, 2, 3}), oracle::plain_dot(u, mean), 1e-12);
}

TEST(ImReward, EqualPoliciesScoreZero) {
  Fixture f;
  const PolicyState p = f.random_policy();
  const RewardScorer s = ImReward(p, p, 0.7);
  EXPECT_EQ(score(s, {1, 2}, {3, 4}), 0.0);
}

TEST(ImReward, DoublingBetaDoublesReward) {
  Fixture f;
  const PolicyState p = f.random_policy(), ref = f.random_policy();
  const double a = score(ImReward(p, ref, 0.5), {1}, {2, 3});
  const double b = score(ImReward(p, ref, 1.0), {1}, {2, 3});
  EXPECT_EQ(b, 2.0 * a);
}

TEST(ImReward, MatchesSequenceLogProbRatio) {
  Fixture f;
  for (int t = 0; t < 20; ++t) {
    const PolicyState p = f.random_policy(), ref = f.random_policy();
    const double beta = 0.3;
    const double want = beta * (sequence_log_prob(p, {0, 5}, {1, 2, 3}) - sequence_log_prob(ref, {0, 5}, {1, 2, 3}));
    EXPECT_NEAR(score(ImReward(p, ref, beta), {0, 5}, {1, 2, 3}), want, 1e-10);
  }
}

TEST(ImReward, SingleTokenDifferenceClosedForm) {
  Fixture f;
  for (int t = 0; t < 20; ++t) {
    const PolicyState ref = f.random_policy();
    const PolicyState p = f.random_policy();
    const double beta = 1.7;
    const Vector h = (*f.reps)({2, 4});
    const auto& u = p.unembedding();
    const auto& u0 = ref.unembedding();
    const double closed = beta * (oracle::plain_dot(subtract(u.row(1), u.row(3)), h) -
                                  oracle::plain_dot(subtract(u0.row(1), u0.row(3)), h));
    EXPECT_NEAR(reward_difference(ImReward(p, ref, beta), {2, 4}, {1}, {3}), closed, 1e-10);
  }
}

TEST(ImReward, InvariantToCommonRowShift) {
  Fixture f;
  const PolicyState ref = f.random_policy();
  const PolicyState p = f.random_policy();
  Matrix shifted = p.unembedding();
  const Vector c = gaussian_vector(f.rng, 4, 3.0);
  for (std::size_t r = 0; r < shifted.rows(); ++r)
    for (std::size_t d = 0; d < 4; ++d) shifted(r, d) += c[d];
  const double a = score(ImReward(p, ref, 1.0), {1}, {2, 0});
  const double b = score(ImReward(p.with_unembedding(shifted), ref, 1.0), {1}, {2, 0});
  EXPECT_NEAR(a, b, 1e-10);
}

TEST(ImReward, UntouchedRowsGiveExactTie) {
  Fixture f;
  const PolicyState ref = f.random_policy();
  Matrix u = ref.unembedding();
  // Only rows 0 and 1 move; tokens 4 and 5 keep their reference rows.
  for (std::size_t d = 0; d < 4; ++d) u(0, d) += 0.37 * static_cast<double>(d + 1), u(1, d) -= 0.21;
  const RewardScorer s = ImReward(ref.with_unembedding(u), ref, 1.0);
  EXPECT_EQ(reward_difference(s, {3, 2}, {4}, {5}), 0.0);
  EXPECT_NE(reward_difference(s, {3, 2}, {0}, {5}), 0.0);
}

TEST(ImReward, Validation) {
  Fixture f;
  const PolicyState p = f.random_policy();
  EXPECT_THROW(ImReward(p, p, 0.0), InputError);
  EXPECT_THROW(ImReward(p, p, -1.0), InputError);
  const PolicyState other(p.unembedding(), RepresentationProvider::seeded(6, 4, 21));
  EXPECT_THROW(ImReward(p, other, 1.0), InputError);
}

TEST(ImNoRef, IsSequenceLogProb) {
  Fixture f;
  const PolicyState p = f.random_policy();
  EXPECT_EQ(score(ImNoRefReward{p}, {1}, {2, 3}), sequence_log_prob(p, {1}, {2, 3}));
}

TEST(ExGrm, ScoresAreProbabilitiesOfYes) {
  Fixture f;
  const auto tmpl = GrmTemplate::with_separator(5, 0, 1);
  EXPECT_EQ(tmpl.build_input({2}, {3, 4}), (TokenSeq{2, 5, 3, 4, 5}));
  for (int t = 0; t < 20; ++t) {
    const PolicyState p = f.random_policy(3.0);
    const RewardScorer s = ExGrmReward(p, tmpl);
    const double r = score(s, {2}, {3, 4});
    EXPECT_GT(r, 0.0);
    EXPECT_LT(r, 1.0);
    EXPECT_DOUBLE_EQ(r, next_token_distribution(p, {2, 5, 3, 4, 5})[0]);
  }
  EXPECT_THROW(ExGrmReward(f.random_policy(), GrmTemplate::with_separator(5, 2, 2)), InputError);
  EXPECT_THROW(ExGrmReward(f.random_policy(), GrmTemplate::with_separator(5, 0, 6)), InputError);
}

TEST(RewardKind, VariantTags) {
  Fixture f;
  const PolicyState p = f.random_policy();
  EXPECT_EQ(kind_of(RewardScorer(ExReward(LinearHead{Vector(4)}, f.reps))), RewardKind::Ex);
  EXPECT_EQ(kind_of(RewardScorer(ImNoRefReward{p})), RewardKind::ImNoRef);
  EXPECT_EQ(to_string(RewardKind::ExGrm), "exgrm");
}

}  // namespace
}  // namespace rmgap
