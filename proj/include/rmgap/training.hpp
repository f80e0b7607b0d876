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

// Bradley-Terry and generative-verifier losses with analytic gradients under
// frozen representations, full-batch gradient descent, the logistic-regression
// embeddings of single-token preference data, realizability checks and the
// hard-margin separator.

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "rmgap/dataset.hpp"
#include "rmgap/rewards.hpp"

namespace rmgap {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// -ln sigmoid(d), stable for large |d|.
inline double logistic_loss(double d) {
  if (d >= 0.0) return std::log1p(std::exp(-d));
  return -d + std::log1p(std::exp(d));
}

/// Trainable parameters: the linear head u (EX variants) or the unembedding U.
using Params = std::variant<Vector, Matrix>;

inline std::span<double> flat(Params& p) {
  return std::visit([](auto& v) -> std::span<double> {
    if constexpr (std::is_same_v<std::decay_t<decltype(v)>, Vector>) return v;
    else return v.flat();
  }, p);
}
inline std::span<const double> flat(const Params& p) {
  return std::visit([](const auto& v) -> std::span<const double> {
    if constexpr (std::is_same_v<std::decay_t<decltype(v)>, Vector>) return v;
    else return v.flat();
  }, p);
}

inline Params trainable_params(const RewardScorer& scorer) {
  return std::visit(
      [](const auto& r) -> Params {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, ExReward> || std::is_same_v<T, ExAllReprReward>)
          return r.head.weights;
        else
          return r.policy.unembedding();
      },
      scorer);
}

/// Copy of `scorer` with its trainable parameters replaced; the IM reference is kept.
inline RewardScorer with_params(const RewardScorer& scorer, Params params) {
  return std::visit(
      [&](const auto& r) -> RewardScorer {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, ExReward> || std::is_same_v<T, ExAllReprReward>) {
          if (!std::holds_alternative<Vector>(params)) throw ContractError("EX variants train a head vector");
          return T(LinearHead{std::get<Vector>(std::move(params))}, r.reps);
        } else {
          if (!std::holds_alternative<Matrix>(params)) throw ContractError("policy variants train a matrix");
          PolicyState p = r.policy.with_unembedding(std::get<Matrix>(std::move(params)));
          if constexpr (std::is_same_v<T, ImReward>) return ImReward(std::move(p), r.reference, r.beta);
          else if constexpr (std::is_same_v<T, ImNoRefReward>) return ImNoRefReward{std::move(p)};
          else return ExGrmReward(std::move(p), r.tmpl);
        }
      },
      scorer);
}

namespace detail {

struct Step {
  Vector h;
  TokenId token;
};

struct PreparedResponse {
  std::vector<Step> steps;  // (h_{x,y<k}, y_k) for policy-based rewards
  Vector rep;               // h_{x,y}, mean_k h_{x,y<=k} or h_{I[x,y]} depending on kind
};

struct PreparedExample {
  PreparedResponse chosen;
  PreparedResponse rejected;
};

inline PreparedResponse prepare_response(const RewardScorer& scorer, const TokenSeq& x, const TokenSeq& y) {
  check_response(y, reps_of(scorer).vocab_size());
  const RepresentationProvider& reps = reps_of(scorer);
  PreparedResponse out;
  switch (kind_of(scorer)) {
    case RewardKind::Ex:
      out.rep = reps(concat(x, y));
      break;
    case RewardKind::ExAllRepr: {
      Vector mean(reps.dim(), 0.0);
      for (std::size_t k = 1; k <= y.size(); ++k) axpy(1.0, reps(prefix_of(x, y, k)), mean);
      for (double& v : mean) v /= static_cast<double>(y.size());
      out.rep = std::move(mean);
      break;
    }
    case RewardKind::Im:
    case RewardKind::ImNoRef:
      for (std::size_t k = 0; k < y.size(); ++k) out.steps.push_back({reps(prefix_of(x, y, k)), y[k]});
      break;
    case RewardKind::ExGrm:
      out.rep = reps(std::get<ExGrmReward>(scorer).tmpl.build_input(x, y));
      break;
  }
  return out;
}

inline std::vector<PreparedExample> prepare(const RewardScorer& scorer, const PreferenceDataset& data) {
  std::vector<PreparedExample> out;
  out.reserve(data.size());
  for (const auto& e : data)
    out.push_back({prepare_response(scorer, e.prompt, e.chosen), prepare_response(scorer, e.prompt, e.rejected)});
  return out;
}

/// Same arithmetic as score(), on cached representations.
inline double prepared_reward(const RewardScorer& scorer, const PreparedResponse& r) {
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ExReward> || std::is_same_v<T, ExAllReprReward>) {
          return dot(s.head.weights, r.rep);
        } else if constexpr (std::is_same_v<T, ImReward>) {
          long double total = 0.0L;
          for (const auto& st : r.steps)
            total += im_step_log_ratio(s.policy.unembedding(), s.reference.unembedding(), st.h, st.token);
          return s.beta * static_cast<double>(total);
        } else if constexpr (std::is_same_v<T, ImNoRefReward>) {
          long double total = 0.0L;
          for (const auto& st : r.steps) total += token_log_prob_at(s.policy.unembedding(), st.h, st.token);
          return static_cast<double>(total);
        } else {
          return next_token_distribution_at(s.policy.unembedding(), r.rep)[s.tmpl.yes_token];
        }
      },
      scorer);
}

/// sum_k (e_{y_k} - pi(.|x,y_<k)) h_{x,y_<k}^T
inline Matrix grad_log_prob(const Matrix& u, const std::vector<Step>& steps) {
  Matrix g(u.rows(), u.cols());
  for (const auto& st : steps) {
    Vector coef = next_token_distribution_at(u, st.h);
    for (double& c : coef) c = -c;
    coef[st.token] += 1.0;
    add_outer(g, coef, st.h);
  }
  return g;
}

/// Subtraction as one elementwise pass; rows that agree in both operands become exactly 0.
inline Matrix difference(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols());
  auto fa = a.flat();
  auto fb = b.flat();
  auto fo = out.flat();
  for (std::size_t i = 0; i < fo.size(); ++i) fo[i] = fa[i] - fb[i];
  return out;
}

inline double bt_loss_prepared(const RewardScorer& scorer, const std::vector<PreparedExample>& data) {
  long double total = 0.0L;
  for (const auto& e : data)
    total += logistic_loss(prepared_reward(scorer, e.chosen) - prepared_reward(scorer, e.rejected));
  return static_cast<double>(total / static_cast<long double>(data.size()));
}

inline double accuracy_prepared(const RewardScorer& scorer, const std::vector<PreparedExample>& data) {
  double wins = 0.0;
  for (const auto& e : data) {
    const double a = prepared_reward(scorer, e.chosen);
    const double b = prepared_reward(scorer, e.rejected);
    if (a > b) wins += 1.0;
    else if (a == b) wins += 0.5;
  }
  return wins / static_cast<double>(data.size());
}

/// Gradient of the per-example Bradley-Terry loss, scaled by `weight`, added into `grad`.
inline void accumulate_bt_gradient(const RewardScorer& scorer, const PreparedExample& e, double weight,
                                   Params& grad) {
  const double g = sigmoid(prepared_reward(scorer, e.rejected) - prepared_reward(scorer, e.chosen));
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ExReward> || std::is_same_v<T, ExAllReprReward>) {
          const Vector phi = subtract(e.chosen.rep, e.rejected.rep);
          axpy(-g * weight, phi, std::get<Vector>(grad));
        } else if constexpr (std::is_same_v<T, ImReward> || std::is_same_v<T, ImNoRefReward>) {
          double beta = 1.0;
          if constexpr (std::is_same_v<T, ImReward>) beta = s.beta;
          const Matrix diff = difference(grad_log_prob(s.policy.unembedding(), e.chosen.steps),
                                         grad_log_prob(s.policy.unembedding(), e.rejected.steps));
          axpy(-g * beta * weight, diff.flat(), std::get<Matrix>(grad).flat());
        } else {
          throw ContractError("Bradley-Terry gradient is not defined for EX-GRM; use grm_gradient");
        }
      },
      scorer);
}

inline double grm_example_loss(const ExGrmReward& s, const PreparedExample& e) {
  const Matrix& u = s.policy.unembedding();
  const Vector zp = logits(u, e.chosen.rep);
  const Vector zn = logits(u, e.rejected.rep);
  return (log_sum_exp(zp) - zp[s.tmpl.yes_token]) + (log_sum_exp(zn) - zn[s.tmpl.no_token]);
}

inline void accumulate_grm_gradient(const ExGrmReward& s, const PreparedExample& e, double weight, Matrix& grad) {
  const Matrix& u = s.policy.unembedding();
  Vector cp = next_token_distribution_at(u, e.chosen.rep);
  Vector cn = next_token_distribution_at(u, e.rejected.rep);
  // -(e_yes - pi+) = pi+ - e_yes
  cp[s.tmpl.yes_token] -= 1.0;
  cn[s.tmpl.no_token] -= 1.0;
  for (double& c : cp) c *= weight;
  for (double& c : cn) c *= weight;
  add_outer(grad, cp, e.chosen.rep);
  add_outer(grad, cn, e.rejected.rep);
}

inline Params zero_like(const Params& p) {
  return std::visit([](const auto& v) -> Params {
    using T = std::decay_t<decltype(v)>;
    if constexpr (std::is_same_v<T, Vector>) return Vector(v.size(), 0.0);
    else return Matrix(v.rows(), v.cols());
  }, p);
}

inline double objective_prepared(const RewardScorer& scorer, const std::vector<PreparedExample>& data) {
  if (kind_of(scorer) == RewardKind::ExGrm) {
    const auto& s = std::get<ExGrmReward>(scorer);
    long double total = 0.0L;
    for (const auto& e : data) total += grm_example_loss(s, e);
    return static_cast<double>(total / static_cast<long double>(data.size()));
  }
  return bt_loss_prepared(scorer, data);
}

/// Gradient of the training objective: Bradley-Terry, or the GRM loss for EX-GRM.
inline Params objective_gradient_prepared(const RewardScorer& scorer, const std::vector<PreparedExample>& data) {
  Params grad = zero_like(trainable_params(scorer));
  const double w = 1.0 / static_cast<double>(data.size());
  if (kind_of(scorer) == RewardKind::ExGrm) {
    const auto& s = std::get<ExGrmReward>(scorer);
    for (const auto& e : data) accumulate_grm_gradient(s, e, w, std::get<Matrix>(grad));
  } else {
    for (const auto& e : data) accumulate_bt_gradient(scorer, e, w, grad);
  }
  return grad;
}

}  // namespace detail

/// Mean over examples of -ln sigmoid(r(x,y+) - r(x,y-)).
inline double bt_loss(const RewardScorer& scorer, const PreferenceDataset& data) {
  require_non_empty(data);
  return detail::bt_loss_prepared(scorer, detail::prepare(scorer, data));
}

/// Analytic Bradley-Terry gradient in the trainable-parameter space. A vector
/// for EX variants, a |V| x D matrix for IM variants.
inline Params bt_gradient(const RewardScorer& scorer, const PreferenceDataset& data) {
  require_non_empty(data);
  if (kind_of(scorer) == RewardKind::ExGrm)
    throw ContractError("Bradley-Terry gradient is not defined for EX-GRM; use grm_gradient");
  return detail::objective_gradient_prepared(scorer, detail::prepare(scorer, data));
}

/// Mean of -ln pi(yes | I[x,y+]) - ln pi(no | I[x,y-]).
inline double grm_loss(const RewardScorer& scorer, const PreferenceDataset& data) {
  require_non_empty(data);
  if (kind_of(scorer) != RewardKind::ExGrm) throw ContractError("grm_loss requires an EX-GRM scorer");
  return detail::objective_prepared(scorer, detail::prepare(scorer, data));
}

inline Matrix grm_gradient(const RewardScorer& scorer, const PreferenceDataset& data) {
  require_non_empty(data);
  if (kind_of(scorer) != RewardKind::ExGrm) throw ContractError("grm_gradient requires an EX-GRM scorer");
  return std::get<Matrix>(detail::objective_gradient_prepared(scorer, detail::prepare(scorer, data)));
}

// ---------------------------------------------------------------------------
// Logistic-regression embeddings and the learning-rate bound.

/// h_{x,y+} - h_{x,y-}
inline Vector phi_ex(const PreferenceExample& e, const RepresentationProvider& reps) {
  return subtract(reps(concat(e.prompt, e.chosen)), reps(concat(e.prompt, e.rejected)));
}

/// beta (e_{y+} - e_{y-}) h_x^T; defined for single-token responses only.
inline Matrix phi_im(const PreferenceExample& e, const RepresentationProvider& reps, double beta) {
  if (!is_single_token(e)) throw ContractError("phi_im requires single-token responses");
  const Vector h = reps(e.prompt);
  Matrix out(reps.vocab_size(), reps.dim());
  if (e.chosen[0] >= reps.vocab_size() || e.rejected[0] >= reps.vocab_size())
    throw InputError("response token outside vocabulary");
  add_row_outer(out, e.chosen[0], beta, h);
  add_row_outer(out, e.rejected[0], -beta, h);
  return out;
}

struct LrBound {
  double max_rep_norm;  // B
  double bound;         // 2 B^-2 min(beta^-2, 1)
};

/// B is the largest norm over h_x, h_{x,y+}, h_{x,y-} across the dataset.
inline LrBound smoothness_and_lr_bound(const PreferenceDataset& data, const RepresentationProvider& reps,
                                       double beta) {
  require_non_empty(data);
  if (!(beta > 0.0)) throw InputError("beta must be positive");
  double b = 0.0;
  for (const auto& e : data) {
    b = std::max(b, norm(reps(e.prompt)));
    b = std::max(b, norm(reps(concat(e.prompt, e.chosen))));
    b = std::max(b, norm(reps(concat(e.prompt, e.rejected))));
  }
  if (b == 0.0) return {0.0, std::numeric_limits<double>::infinity()};
  return {b, 2.0 / (b * b) * std::min(1.0 / (beta * beta), 1.0)};
}

// ---------------------------------------------------------------------------
// Gradient descent.

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t steps = 100;
  double beta = 1.0;
  std::size_t record_every = 1;
  std::optional<RewardKind> variant;
  bool strict_lr = false;
};

struct TrainRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  Params params;
};

struct TrainTrajectory {
  RewardKind kind = RewardKind::Ex;
  LrBound lr_bound{};
  std::vector<TrainRecord> records;
  std::vector<std::string> warnings;

  const TrainRecord& final_record() const { return records.back(); }
};

inline void validate(const TrainConfig& config) {
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate))
    throw ConfigError("learning_rate must be positive");
  if (!(config.beta > 0.0)) throw ConfigError("beta must be positive");
  if (config.record_every == 0) throw ConfigError("record_every must be positive");
}

/// Full-batch gradient descent theta <- theta - eta * grad L(theta). The IM
/// reference policy stays fixed. Records step 0, every record_every steps and
/// the final step.
inline TrainTrajectory gd_train(const TrainConfig& config, const PreferenceDataset& data,
                                const RewardScorer& initial) {
  validate(config);
  require_non_empty(data);
  const RewardKind kind = kind_of(initial);
  if (config.variant && *config.variant != kind)
    throw ConfigError("config variant " + to_string(*config.variant) + " does not match scorer " +
                      to_string(kind));
  if (kind == RewardKind::Im && std::get<ImReward>(initial).beta != config.beta)
    throw ConfigError("config beta does not match the IM scorer's beta");

  TrainTrajectory traj;
  traj.kind = kind;
  traj.lr_bound = smoothness_and_lr_bound(data, reps_of(initial), config.beta);
  if (!(config.learning_rate < traj.lr_bound.bound)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "learning rate " << config.learning_rate << " is not below the bound " << traj.lr_bound.bound
        << " (B = " << traj.lr_bound.max_rep_norm << ")";
    if (config.strict_lr) throw ConfigError(msg.str());
    traj.warnings.push_back(msg.str());
  }

  const auto prepared = detail::prepare(initial, data);
  RewardScorer current = initial;
  Params params = trainable_params(initial);

  auto record = [&](std::size_t step) {
    const double loss = detail::objective_prepared(current, prepared);
    if (!std::isfinite(loss)) throw NumericError("non-finite loss at step " + std::to_string(step));
    traj.records.push_back({step, loss, detail::accuracy_prepared(current, prepared), params});
  };

  record(0);
  for (std::size_t t = 1; t <= config.steps; ++t) {
    const Params grad = detail::objective_gradient_prepared(current, prepared);
    axpy(-config.learning_rate, flat(grad), flat(params));
    if (!all_finite(flat(params))) throw NumericError("non-finite parameters at step " + std::to_string(t));
    current = with_params(current, params);
    if (t % config.record_every == 0 || t == config.steps) record(t);
  }
  return traj;
}

inline RewardScorer final_scorer(const RewardScorer& initial, const TrainTrajectory& traj) {
  return with_params(initial, traj.final_record().params);
}

// ---------------------------------------------------------------------------
// Realizability and the hard-margin separator.

enum class Separability { Separable, NotSeparable, Undetermined };

inline std::string to_string(Separability s) {
  switch (s) {
    case Separability::Separable: return "separable";
    case Separability::NotSeparable: return "not_separable";
    case Separability::Undetermined: return "undetermined";
  }
  return "unknown";
}

struct Realizability {
  Separability status = Separability::Undetermined;
  std::optional<Vector> certificate;  // flattened u or U with all margins > 0
  std::size_t iterations = 0;
  std::string reason;
};

enum class RealizabilityMode { Ex, Im };

/// Decides whether some w has <w, phi_i> > 0 for all i. Exact "no" only for a
/// zero embedding or two opposite-direction embeddings; otherwise logistic-loss
/// gradient descent either finds a certificate or runs out of budget.
inline Realizability check_separability(const std::vector<Vector>& phis, std::size_t budget = 20000) {
  Realizability out;
  if (phis.empty()) throw InputError("no embeddings to separate");
  const std::size_t dim = phis.front().size();
  double total_sq = 0.0;
  for (std::size_t i = 0; i < phis.size(); ++i) {
    const double ni = norm(phis[i]);
    if (ni == 0.0) {
      out.status = Separability::NotSeparable;
      out.reason = "example " + std::to_string(i) + " has a zero embedding";
      return out;
    }
    total_sq += ni * ni;
    for (std::size_t j = 0; j < i; ++j) {
      const double nj = norm(phis[j]);
      if (dot(phis[i], phis[j]) <= -(1.0 - 1e-12) * ni * nj) {
        out.status = Separability::NotSeparable;
        out.reason = "examples " + std::to_string(j) + " and " + std::to_string(i) + " have opposite embeddings";
        return out;
      }
    }
  }
  const double n = static_cast<double>(phis.size());
  const double step = 4.0 * n / total_sq;  // 1 / smoothness of the mean logistic loss
  Vector w(dim, 0.0);
  Vector grad(dim);
  for (std::size_t it = 0; it <= budget; ++it) {
    bool all_positive = true;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& phi : phis) {
      const double m = dot(w, phi);
      if (!(m > 0.0)) all_positive = false;
      axpy(-sigmoid(-m) / n, phi, grad);
    }
    if (all_positive) {
      out.status = Separability::Separable;
      out.certificate = w;
      out.iterations = it;
      return out;
    }
    axpy(-step, grad, w);
  }
  out.iterations = budget;
  out.reason = "iteration budget exhausted";
  return out;
}

inline Realizability check_realizability(const PreferenceDataset& data, const RepresentationProvider& reps,
                                         RealizabilityMode mode, double beta = 1.0,
                                         std::size_t budget = 20000) {
  require_non_empty(data);
  std::vector<Vector> phis;
  phis.reserve(data.size());
  for (const auto& e : data) {
    if (mode == RealizabilityMode::Ex) {
      phis.push_back(phi_ex(e, reps));
    } else {
      const Matrix m = phi_im(e, reps, beta);
      phis.emplace_back(m.flat().begin(), m.flat().end());
    }
  }
  return check_separability(phis, budget);
}

struct MaxMarginResult {
  Vector u;
  Vector dual;                        // alpha_i >= 0, u = sum_i alpha_i phi_i
  double min_margin = 0.0;            // min_i <u, phi_i>
  double slackness_residual = 0.0;    // max_i alpha_i |<u, phi_i> - 1|
  std::size_t sweeps = 0;
};

namespace detail {

/// Solves the symmetric system a x = b by Gaussian elimination with partial
/// pivoting; returns nullopt when a pivot falls below `tol`.
inline std::optional<Vector> solve_dense(std::vector<Vector> a, Vector b, double tol = 1e-12) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    if (std::abs(a[piv][c]) < tol) return std::nullopt;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  Vector x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

inline void fill_kkt(const std::vector<Vector>& phis, MaxMarginResult& r) {
  r.min_margin = std::numeric_limits<double>::infinity();
  r.slackness_residual = 0.0;
  for (std::size_t i = 0; i < phis.size(); ++i) {
    const double m = dot(r.u, phis[i]);
    r.min_margin = std::min(r.min_margin, m);
    r.slackness_residual = std::max(r.slackness_residual, r.dual[i] * std::abs(m - 1.0));
  }
}

}  // namespace detail

/// argmin ||u||^2 subject to <u, phi_i> >= 1, by dual coordinate ascent on
/// max sum(alpha) - 0.5 ||sum alpha_i phi_i||^2, alpha >= 0, followed by an
/// exact solve on the active set. Throws when the constraints are infeasible.
inline MaxMarginResult max_margin_separator(const std::vector<Vector>& phis, double tol = 1e-10,
                                            std::size_t max_sweeps = 200000) {
  if (phis.empty()) throw InputError("max_margin_separator: no constraints");
  const std::size_t n = phis.size();
  const std::size_t dim = phis.front().size();
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (phis[i].size() != dim) throw InputError("max_margin_separator: ragged embeddings");
    sq[i] = squared_norm(phis[i]);
    if (sq[i] == 0.0)
      throw InputError("max-margin problem is infeasible (zero embedding); run check_realizability first");
  }

  MaxMarginResult r;
  r.u.assign(dim, 0.0);
  r.dual.assign(n, 0.0);
  constexpr double kDivergence = 1e12;
  for (std::size_t sweep = 1; sweep <= max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = dot(r.u, phis[i]);
      const double next = std::max(0.0, r.dual[i] + (1.0 - m) / sq[i]);
      const double delta = next - r.dual[i];
      if (delta != 0.0) {
        axpy(delta, phis[i], r.u);
        r.dual[i] = next;
        max_change = std::max(max_change, std::abs(delta) * sq[i]);
      }
    }
    r.sweeps = sweep;
    double dual_mass = 0.0;
    for (double a : r.dual) dual_mass += a;
    if (dual_mass > kDivergence || !all_finite(r.u))
      throw InputError("max-margin problem appears infeasible (dual diverges); run check_realizability first");
    if (max_change < tol * 1e-2) break;
  }

  // Polish: on the active set the constraints hold with equality, so
  // Gram * alpha_S = 1 gives the exact dual when the Gram matrix is regular.
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < n; ++i)
    if (r.dual[i] > 0.0) active.push_back(i);
  if (!active.empty() && active.size() <= dim) {
    std::vector<Vector> gram(active.size(), Vector(active.size()));
    for (std::size_t a = 0; a < active.size(); ++a)
      for (std::size_t b = 0; b < active.size(); ++b) gram[a][b] = dot(phis[active[a]], phis[active[b]]);
    if (auto sol = detail::solve_dense(gram, Vector(active.size(), 1.0))) {
      MaxMarginResult polished = r;
      std::fill(polished.dual.begin(), polished.dual.end(), 0.0);
      std::fill(polished.u.begin(), polished.u.end(), 0.0);
      bool ok = true;
      for (std::size_t a = 0; a < active.size(); ++a) {
        if ((*sol)[a] < 0.0) ok = false;
        polished.dual[active[a]] = (*sol)[a];
        axpy((*sol)[a], phis[active[a]], polished.u);
      }
      if (ok) {
        detail::fill_kkt(phis, polished);
        detail::fill_kkt(phis, r);
        const double before = std::max(1.0 - r.min_margin, r.slackness_residual);
        const double after = std::max(1.0 - polished.min_margin, polished.slackness_residual);
        if (after <= before) r = std::move(polished);
      }
    }
  }
  detail::fill_kkt(phis, r);
  if (r.min_margin < 1.0 - 1e-6)
    throw InputError("max-margin solver did not reach feasibility; run check_realizability first");
  return r;
}

inline MaxMarginResult max_margin_separator(const PreferenceDataset& data, const RepresentationProvider& reps) {
  require_non_empty(data);
  std::vector<Vector> phis;
  for (const auto& e : data) phis.push_back(phi_ex(e, reps));
  return max_margin_separator(phis);
}

}  // namespace rmgap
