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

// Reward parameterizations behind a single scoring interface:
//
//   Ex         <u, h_{x,y}>
//   ExAllRepr  <u, mean_k h_{x,y<=k}>
//   Im         beta * (ln pi(y|x) - ln pi_ref(y|x))
//   ImNoRef    ln pi(y|x)
//   ExGrm      pi(yes | I[x,y])

#pragma once

#include <functional>
#include <string>
#include <variant>

#include "rmgap/seqmodel.hpp"

namespace rmgap {

struct LinearHead {
  Vector weights;
};

/// Wraps (prompt, response) into the verification input I[x,y].
struct GrmTemplate {
  std::function<TokenSeq(const TokenSeq&, const TokenSeq&)> build_input;
  TokenId yes_token = 0;
  TokenId no_token = 1;

  /// prompt ++ [sep] ++ response ++ [sep]
  static GrmTemplate with_separator(TokenId sep, TokenId yes, TokenId no) {
    GrmTemplate t;
    t.build_input = [sep](const TokenSeq& x, const TokenSeq& y) {
      TokenSeq out = x;
      out.push_back(sep);
      out.insert(out.end(), y.begin(), y.end());
      out.push_back(sep);
      return out;
    };
    t.yes_token = yes;
    t.no_token = no;
    return t;
  }
};

enum class RewardKind { Ex, ExAllRepr, Im, ImNoRef, ExGrm };

inline std::string to_string(RewardKind k) {
  switch (k) {
    case RewardKind::Ex: return "ex";
    case RewardKind::ExAllRepr: return "ex_all_repr";
    case RewardKind::Im: return "im";
    case RewardKind::ImNoRef: return "im_no_ref";
    case RewardKind::ExGrm: return "exgrm";
  }
  return "unknown";
}

struct ExReward {
  LinearHead head;
  RepresentationPtr reps;

  ExReward(LinearHead h, RepresentationPtr r) : head(std::move(h)), reps(std::move(r)) {
    if (!reps) throw InputError("EX reward requires a representation provider");
    if (head.weights.size() != reps->dim()) throw InputError("linear head dimension mismatch");
    if (!all_finite(head.weights)) throw NumericError("linear head has non-finite entries");
  }
};

struct ExAllReprReward {
  LinearHead head;
  RepresentationPtr reps;

  ExAllReprReward(LinearHead h, RepresentationPtr r) : head(std::move(h)), reps(std::move(r)) {
    if (!reps) throw InputError("EX reward requires a representation provider");
    if (head.weights.size() != reps->dim()) throw InputError("linear head dimension mismatch");
    if (!all_finite(head.weights)) throw NumericError("linear head has non-finite entries");
  }
};

struct ImReward {
  PolicyState policy;
  PolicyState reference;
  double beta;

  ImReward(PolicyState p, PolicyState ref, double b)
      : policy(std::move(p)), reference(std::move(ref)), beta(b) {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw InputError("beta must be positive");
    if (policy.reps() != reference.reps())
      throw InputError("policy and reference must share a representation provider");
  }
};

struct ImNoRefReward {
  PolicyState policy;
};

struct ExGrmReward {
  PolicyState policy;
  GrmTemplate tmpl;

  ExGrmReward(PolicyState p, GrmTemplate t) : policy(std::move(p)), tmpl(std::move(t)) {
    if (tmpl.yes_token == tmpl.no_token) throw InputError("yes and no tokens must differ");
    if (tmpl.yes_token >= policy.vocab_size() || tmpl.no_token >= policy.vocab_size())
      throw InputError("verdict tokens outside vocabulary");
    if (!tmpl.build_input) throw InputError("GRM template requires an input builder");
  }
};

using RewardScorer = std::variant<ExReward, ExAllReprReward, ImReward, ImNoRefReward, ExGrmReward>;

inline RewardKind kind_of(const RewardScorer& s) {
  return static_cast<RewardKind>(s.index());
}

inline const RepresentationProvider& reps_of(const RewardScorer& s) {
  return std::visit(
      [](const auto& r) -> const RepresentationProvider& {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, ExReward> || std::is_same_v<T, ExAllReprReward>)
          return *r.reps;
        else
          return *r.policy.reps();
      },
      s);
}

namespace detail {

/// One autoregressive step of the IM log-ratio, arranged so that a token whose
/// row is identical in U and U_ref contributes exactly -(lse - lse_ref).
inline double im_step_log_ratio(const Matrix& u, const Matrix& u_ref, std::span<const double> h,
                                TokenId token) {
  const Vector z = logits(u, h);
  const Vector z_ref = logits(u_ref, h);
  const double own = z[token] - z_ref[token];
  const double normalizer = log_sum_exp(z) - log_sum_exp(z_ref);
  return own - normalizer;
}

inline double im_log_ratio(const PolicyState& policy, const PolicyState& reference, const TokenSeq& prompt,
                           const TokenSeq& response) {
  long double total = 0.0L;
  for (std::size_t k = 0; k < response.size(); ++k) {
    const Vector h = (*policy.reps())(prefix_of(prompt, response, k));
    total += im_step_log_ratio(policy.unembedding(), reference.unembedding(), h, response[k]);
  }
  return static_cast<double>(total);
}

inline void check_response(const TokenSeq& response, std::size_t vocab_size) {
  if (response.empty()) throw InputError("response must be non-empty");
  for (TokenId t : response)
    if (t >= vocab_size) throw InputError("response token outside vocabulary");
}

}  // namespace detail

inline double score(const RewardScorer& scorer, const TokenSeq& prompt, const TokenSeq& response) {
  detail::check_response(response, reps_of(scorer).vocab_size());
  return std::visit(
      [&](const auto& r) -> double {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, ExReward>) {
          return dot(r.head.weights, (*r.reps)(concat(prompt, response)));
        } else if constexpr (std::is_same_v<T, ExAllReprReward>) {
          Vector mean(r.reps->dim(), 0.0);
          for (std::size_t k = 1; k <= response.size(); ++k)
            axpy(1.0, (*r.reps)(prefix_of(prompt, response, k)), mean);
          for (double& v : mean) v /= static_cast<double>(response.size());
          return dot(r.head.weights, mean);
        } else if constexpr (std::is_same_v<T, ImReward>) {
          return r.beta * detail::im_log_ratio(r.policy, r.reference, prompt, response);
        } else if constexpr (std::is_same_v<T, ImNoRefReward>) {
          return sequence_log_prob(r.policy, prompt, response);
        } else {
          const TokenSeq input = r.tmpl.build_input(prompt, response);
          return next_token_distribution(r.policy, input)[r.tmpl.yes_token];
        }
      },
      scorer);
}

/// score(a) - score(b). For IM with single unseen tokens whose rows equal the
/// reference rows both scores are bit-identical, so the result is exactly 0.
inline double reward_difference(const RewardScorer& scorer, const TokenSeq& prompt, const TokenSeq& a,
                                const TokenSeq& b) {
  return score(scorer, prompt, a) - score(scorer, prompt, b);
}

/// Plain callable view of a scorer, used by the metrics and theory layers.
using RewardFn = std::function<double(const TokenSeq&, const TokenSeq&)>;

inline RewardFn as_reward_fn(RewardScorer scorer) {
  return [s = std::move(scorer)](const TokenSeq& x, const TokenSeq& y) { return score(s, x, y); };
}

}  // namespace rmgap
