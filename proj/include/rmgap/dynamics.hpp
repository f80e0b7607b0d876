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

// First-order predictions of how one gradient step on a single training
// preference moves the reward of another (prompt, response) pair, next to the
// exact change obtained by actually taking the step.

#pragma once

#include <string>
#include <vector>

#include "rmgap/training.hpp"

namespace rmgap {

struct DynamicsQuery {
  PreferenceExample train_example;
  TokenSeq eval_prompt;
  TokenSeq eval_response;
  double eta = 1e-3;
};

enum class ResponseRole { Chosen, Rejected };

inline std::string to_string(ResponseRole r) { return r == ResponseRole::Chosen ? "chosen" : "rejected"; }

/// One term of the prediction. For IM: rho_{k,l} and <h_{xbar,ybar<k}, h_{x,v<l}>.
/// For EX-GRM: gamma(y+/-) and <h_{I[xbar,ybar]}, h_{I[x,y+/-]}> with k = l = 0.
struct CoefficientEntry {
  std::size_t k = 0;
  std::size_t l = 0;
  ResponseRole role = ResponseRole::Chosen;
  std::string name;  // "rho" or "gamma"
  double value = 0.0;
  double inner_product = 0.0;
};

struct DynamicsReport {
  RewardKind kind = RewardKind::Ex;
  double eta = 0.0;
  double g = 0.0;  // sigma(r(x,y-) - r(x,y+)); 0 for EX-GRM
  double predicted_delta = 0.0;
  double actual_delta = 0.0;
  double residual = 0.0;  // actual - predicted
  std::vector<CoefficientEntry> coefficients;
};

inline void validate(const DynamicsQuery& q) {
  if (!(q.eta >= 0.0) || !std::isfinite(q.eta)) throw InputError("eta must be non-negative and finite");
  if (q.eval_response.empty()) throw InputError("eval response must be non-empty");
}

/// Applies theta - eta * grad l(x, y+, y-) to a copy and rescoring (xbar, ybar).
/// The per-example loss is Bradley-Terry, or the GRM loss for EX-GRM.
inline double actual_delta(const RewardScorer& scorer, const DynamicsQuery& q) {
  validate(q);
  PreferenceDataset single{{q.train_example}, "dynamics", 0};
  const auto prepared = detail::prepare(scorer, single);
  const Params grad = detail::objective_gradient_prepared(scorer, prepared);
  Params next = trainable_params(scorer);
  axpy(-q.eta, flat(grad), flat(next));
  const RewardScorer updated = with_params(scorer, std::move(next));
  return score(updated, q.eval_prompt, q.eval_response) - score(scorer, q.eval_prompt, q.eval_response);
}

/// <h_{xbar,ybar}, h_{x,y+} - h_{x,y-}> * eta * g.
inline double predict_delta_ex(const DynamicsQuery& q, const ExReward& scorer) {
  validate(q);
  const auto& reps = *scorer.reps;
  const auto& e = q.train_example;
  const double rp = dot(scorer.head.weights, reps(concat(e.prompt, e.chosen)));
  const double rn = dot(scorer.head.weights, reps(concat(e.prompt, e.rejected)));
  const double g = sigmoid(rn - rp);
  return dot(reps(concat(q.eval_prompt, q.eval_response)), phi_ex(e, reps)) * q.eta * g;
}

/// rho_{k,l}(v) with 0-based k over the eval response and l over v:
///   1{ybar_k = v_l} - pi(ybar_k | x, v_<l) - pi(v_l | xbar, ybar_<k) + <pi(.|xbar,ybar_<k), pi(.|x,v_<l)>
inline double rho(std::size_t k, std::size_t l, ResponseRole role, const PolicyState& policy,
                  const DynamicsQuery& q) {
  const TokenSeq& v = role == ResponseRole::Chosen ? q.train_example.chosen : q.train_example.rejected;
  if (k >= q.eval_response.size() || l >= v.size()) throw InputError("rho: index out of range");
  const TokenId yk = q.eval_response[k];
  const TokenId vl = v[l];
  const Vector p_eval = next_token_distribution(policy, prefix_of(q.eval_prompt, q.eval_response, k));
  const Vector p_train = next_token_distribution(policy, prefix_of(q.train_example.prompt, v, l));
  return (yk == vl ? 1.0 : 0.0) - p_train[yk] - p_eval[vl] + dot(p_eval, p_train);
}

namespace detail {

/// rho from two conditionals, for callers that already hold them.
inline double rho_from(TokenId yk, TokenId vl, std::span<const double> p_eval, std::span<const double> p_train) {
  if (yk != vl) return -p_train[yk] - p_eval[vl] + dot(p_eval, p_train);
  // Factored so a shared token can never round below zero.
  double rest = 0.0;
  for (std::size_t v = 0; v < p_eval.size(); ++v)
    if (v != yk) rest += p_eval[v] * p_train[v];
  return (1.0 - p_train[yk]) * (1.0 - p_eval[yk]) + rest;
}

}  // namespace detail

/// First-order IM prediction:
///   (sum_{k,l} rho_{k,l}(y+) <h_{xbar,ybar<k}, h_{x,y+<l}> - same for y-) * eta * g * beta^2.
inline DynamicsReport predict_delta_im(const DynamicsQuery& q, const ImReward& scorer) {
  validate(q);
  const auto& reps = *scorer.policy.reps();
  const auto& e = q.train_example;
  DynamicsReport rep;
  rep.kind = RewardKind::Im;
  rep.eta = q.eta;
  const RewardScorer as_scorer = scorer;
  rep.g = sigmoid(score(as_scorer, e.prompt, e.rejected) - score(as_scorer, e.prompt, e.chosen));

  std::vector<Vector> h_eval, p_eval;
  for (std::size_t k = 0; k < q.eval_response.size(); ++k) {
    h_eval.push_back(reps(prefix_of(q.eval_prompt, q.eval_response, k)));
    p_eval.push_back(next_token_distribution_at(scorer.policy.unembedding(), h_eval.back()));
  }
  long double total = 0.0L;
  for (ResponseRole role : {ResponseRole::Chosen, ResponseRole::Rejected}) {
    const TokenSeq& v = role == ResponseRole::Chosen ? e.chosen : e.rejected;
    const double sign = role == ResponseRole::Chosen ? 1.0 : -1.0;
    for (std::size_t l = 0; l < v.size(); ++l) {
      const Vector h_train = reps(prefix_of(e.prompt, v, l));
      const Vector p_train = next_token_distribution_at(scorer.policy.unembedding(), h_train);
      for (std::size_t k = 0; k < q.eval_response.size(); ++k) {
        const double r = detail::rho_from(q.eval_response[k], v[l], p_eval[k], p_train);
        const double ip = dot(h_eval[k], h_train);
        total += sign * r * ip;
        rep.coefficients.push_back({k, l, role, "rho", r, ip});
      }
    }
  }
  rep.predicted_delta = static_cast<double>(total) * q.eta * rep.g * scorer.beta * scorer.beta;
  return rep;
}

namespace detail {

struct GrmConditionals {
  Vector h_eval, h_pos, h_neg;
  Vector p_eval, p_pos, p_neg;
};

inline GrmConditionals grm_conditionals(const DynamicsQuery& q, const ExGrmReward& s) {
  const auto& reps = *s.policy.reps();
  const auto& u = s.policy.unembedding();
  GrmConditionals c;
  c.h_eval = reps(s.tmpl.build_input(q.eval_prompt, q.eval_response));
  c.h_pos = reps(s.tmpl.build_input(q.train_example.prompt, q.train_example.chosen));
  c.h_neg = reps(s.tmpl.build_input(q.train_example.prompt, q.train_example.rejected));
  c.p_eval = next_token_distribution_at(u, c.h_eval);
  c.p_pos = next_token_distribution_at(u, c.h_pos);
  c.p_neg = next_token_distribution_at(u, c.h_neg);
  return c;
}

inline double gamma_plus_from(TokenId yes, std::span<const double> p_eval, std::span<const double> p_pos) {
  double rest = 0.0;
  for (std::size_t v = 0; v < p_eval.size(); ++v)
    if (v != yes) rest += p_eval[v] * p_pos[v];
  return (1.0 - p_eval[yes]) * (1.0 - p_pos[yes]) + rest;
}

inline double gamma_minus_from(TokenId yes, TokenId no, std::span<const double> p_eval,
                               std::span<const double> p_neg) {
  return -p_eval[no] - p_neg[yes] + dot(p_eval, p_neg);
}

}  // namespace detail

/// 1 - pi(yes|I[xbar,ybar]) - pi(yes|I[x,y+]) + <pi(.|I[xbar,ybar]), pi(.|I[x,y+])>, in [0, 2].
inline double gamma_plus(const DynamicsQuery& q, const ExGrmReward& s) {
  const auto c = detail::grm_conditionals(q, s);
  return detail::gamma_plus_from(s.tmpl.yes_token, c.p_eval, c.p_pos);
}

/// -pi(no|I[xbar,ybar]) - pi(yes|I[x,y-]) + <pi(.|I[xbar,ybar]), pi(.|I[x,y-])>, in [-2, 1].
inline double gamma_minus(const DynamicsQuery& q, const ExGrmReward& s) {
  const auto c = detail::grm_conditionals(q, s);
  return detail::gamma_minus_from(s.tmpl.yes_token, s.tmpl.no_token, c.p_eval, c.p_neg);
}

/// pi(yes|I[xbar,ybar]) (gamma+ <h_Ibar, h_I+> + gamma- <h_Ibar, h_I->) * eta.
inline DynamicsReport predict_delta_exgrm(const DynamicsQuery& q, const ExGrmReward& s) {
  validate(q);
  const auto c = detail::grm_conditionals(q, s);
  DynamicsReport rep;
  rep.kind = RewardKind::ExGrm;
  rep.eta = q.eta;
  const double gp = detail::gamma_plus_from(s.tmpl.yes_token, c.p_eval, c.p_pos);
  const double gm = detail::gamma_minus_from(s.tmpl.yes_token, s.tmpl.no_token, c.p_eval, c.p_neg);
  const double ip_pos = dot(c.h_eval, c.h_pos);
  const double ip_neg = dot(c.h_eval, c.h_neg);
  rep.coefficients.push_back({0, 0, ResponseRole::Chosen, "gamma", gp, ip_pos});
  rep.coefficients.push_back({0, 0, ResponseRole::Rejected, "gamma", gm, ip_neg});
  rep.predicted_delta = c.p_eval[s.tmpl.yes_token] * (gp * ip_pos + gm * ip_neg) * q.eta;
  return rep;
}

/// Prediction and actual step side by side for EX, IM and EX-GRM scorers.
inline DynamicsReport dynamics_check(const RewardScorer& scorer, const DynamicsQuery& q) {
  DynamicsReport rep;
  switch (kind_of(scorer)) {
    case RewardKind::Ex: {
      const auto& s = std::get<ExReward>(scorer);
      rep.kind = RewardKind::Ex;
      rep.eta = q.eta;
      const auto& reps = *s.reps;
      rep.g = sigmoid(dot(s.head.weights, reps(concat(q.train_example.prompt, q.train_example.rejected))) -
                      dot(s.head.weights, reps(concat(q.train_example.prompt, q.train_example.chosen))));
      rep.predicted_delta = predict_delta_ex(q, s);
      break;
    }
    case RewardKind::Im:
      rep = predict_delta_im(q, std::get<ImReward>(scorer));
      break;
    case RewardKind::ExGrm:
      rep = predict_delta_exgrm(q, std::get<ExGrmReward>(scorer));
      break;
    default:
      throw ContractError("dynamics predictions exist for EX, IM and EX-GRM scorers only");
  }
  rep.actual_delta = actual_delta(scorer, q);
  rep.residual = rep.actual_delta - rep.predicted_delta;
  return rep;
}

}  // namespace rmgap
