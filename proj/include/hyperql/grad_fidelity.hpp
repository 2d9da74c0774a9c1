#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "hyperql/critic.hpp"
#include "hyperql/rl_core.hpp"
#include "hyperql/rng.hpp"

namespace hyperql {

class DegenerateDesign : public std::runtime_error {
 public:
  explicit DegenerateDesign(const std::string& what) : std::runtime_error(what) {}
};

// Perturbed-rollout evaluation protocol around the policy mean action.
struct CsProtocol {
  int eval_every = 10000;
  int n_states = 15;
  int n_rollouts = 15;
  double sigma_delta = 0.3;
  std::vector<double> taus{0.0, 0.25, 0.5, 0.75};
  int rollout_horizon = 400;
};

// Least-mean-squares linear fit over all ordered sample pairs:
// g* = (X'X)^-1 X'd with rows a_j - a_i and targets q_j - q_i. The i = j
// zero rows contribute nothing and are kept implicitly. center documents the
// expansion point and pins the dimension.
inline Eigen::VectorXd lmse_fit(const Eigen::VectorXd& center,
                                const std::vector<Eigen::VectorXd>& actions,
                                const std::vector<double>& qs, double ridge = 1e-10) {
  const int n_a = static_cast<int>(center.size());
  if (actions.size() != qs.size() || actions.empty()) {
    throw DegenerateDesign("lmse_fit: empty or mismatched samples");
  }
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_a, n_a);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_a);
  for (size_t i = 0; i < actions.size(); ++i) {
    for (size_t j = 0; j < actions.size(); ++j) {
      const Eigen::VectorXd d = actions[j] - actions[i];
      m.noalias() += d * d.transpose();
      rhs.noalias() += d * (qs[j] - qs[i]);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const double lam_max = eig.eigenvalues().maxCoeff();
  const double lam_min = eig.eigenvalues().minCoeff();
  if (lam_min <= 1e-12 * std::max(lam_max, 1e-300)) {
    if (ridge <= 0.0) {
      throw DegenerateDesign("lmse_fit: pairwise design is rank deficient");
    }
    m += ridge * Eigen::MatrixXd::Identity(n_a, n_a);
  }
  return m.ldlt().solve(rhs);
}

// Ill-defined (flagged absent) when either direction is numerically zero.
inline std::optional<double> cosine_similarity(const Eigen::VectorXd& u,
                                               const Eigen::VectorXd& v) {
  const double nu = u.norm(), nv = v.norm();
  if (nu <= 1e-12 || nv <= 1e-12) return std::nullopt;
  return u.dot(v) / (nu * nv);
}

// Empirical discounted return after forcing a first action, then following
// the policy.
template <typename Env, typename ActionFn>
double perturbed_return(const Env& env, ActionFn&& act, const Eigen::VectorXd& s,
                        const Eigen::VectorXd& a0, int horizon, double gamma,
                        RngStream& env_rng) {
  int step = 0;
  auto forced = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd a = step == 0 ? a0 : Eigen::VectorXd(act(x));
    ++step;
    return a;
  };
  return discounted_return(rollout(env, forced, horizon, env_rng, &s), gamma);
}

// Non-parametric gradient estimate at the policy mean from n_rollouts
// perturbed returns, one rollout per sampled action.
template <typename Env, typename ActionFn>
Eigen::VectorXd lmse_gradient_estimate(const Env& env, ActionFn&& act, const Eigen::VectorXd& s,
                                       const Eigen::VectorXd& a_mu, const CsProtocol& proto,
                                       double gamma, std::uint64_t seed, std::uint64_t stream) {
  std::vector<Eigen::VectorXd> actions;
  std::vector<double> qs;
  actions.reserve(static_cast<size_t>(proto.n_rollouts));
  RngStream delta_rng(seed, stream);
  for (int r = 0; r < proto.n_rollouts; ++r) {
    Eigen::VectorXd a = a_mu;
    for (int i = 0; i < a.size(); ++i) a[i] += delta_rng.normal(0.0, proto.sigma_delta);
    RngStream env_rng(seed, stream * 1000003 + static_cast<std::uint64_t>(r) + 1);
    actions.push_back(a);
    qs.push_back(perturbed_return(env, act, s, a, proto.rollout_horizon, gamma, env_rng));
  }
  return lmse_fit(a_mu, actions, qs);
}

struct CsStateRow {
  int state_idx = 0;
  std::optional<double> cs;
};

struct CsEvaluation {
  long step = 0;
  std::vector<CsStateRow> states;
  double mean_cs = 0.0;        // over defined states only
  int defined_count = 0;
  int undefined_count = 0;
  int nonpositive_count = 0;   // defined states with cs <= 0
  std::vector<double> learnable_frac;  // per tau, denominator n_states
};

// Per-state cosine between a parametric gradient field and the LMSE estimate
// from perturbed rollouts, plus the fraction of states above each threshold.
template <typename Env, typename ActionFn>
CsEvaluation evaluate_cs(const Env& env, ActionFn&& policy_mean,
                         const std::function<Eigen::VectorXd(const Eigen::VectorXd&,
                                                             const Eigen::VectorXd&)>& grad_fn,
                         const std::vector<Eigen::VectorXd>& states, const CsProtocol& proto,
                         double gamma, std::uint64_t seed) {
  CsEvaluation out;
  out.learnable_frac.assign(proto.taus.size(), 0.0);
  double cs_sum = 0.0;
  for (size_t i = 0; i < states.size(); ++i) {
    const Eigen::VectorXd& s = states[i];
    const Eigen::VectorXd a_mu = policy_mean(s);
    const Eigen::VectorXd parametric = grad_fn(s, a_mu);
    const Eigen::VectorXd estimate = lmse_gradient_estimate(env, policy_mean, s, a_mu, proto,
                                                            gamma, seed, static_cast<std::uint64_t>(i));
    std::optional<double> cs = cosine_similarity(parametric, estimate);
    out.states.push_back(CsStateRow{static_cast<int>(i), cs});
    if (cs) {
      cs_sum += *cs;
      ++out.defined_count;
      if (*cs <= 0.0) ++out.nonpositive_count;
      for (size_t t = 0; t < proto.taus.size(); ++t) {
        if (*cs > proto.taus[t]) out.learnable_frac[t] += 1.0;
      }
    } else {
      ++out.undefined_count;
    }
  }
  for (double& f : out.learnable_frac) f /= static_cast<double>(states.size());
  out.mean_cs = out.defined_count ? cs_sum / out.defined_count : 0.0;
  return out;
}

// LMSE applied to the critic's own outputs instead of rollout returns: a high
// cosine against the parametric gradient certifies local linearity at the
// perturbation scale.
inline std::optional<double> local_linearity_check(Critic& critic, const Eigen::VectorXd& s,
                                                   const Eigen::VectorXd& a_mu,
                                                   const CsProtocol& proto, std::uint64_t seed) {
  std::vector<Eigen::VectorXd> actions;
  std::vector<double> qs;
  RngStream rng(seed, 0x10CA1);
  for (int r = 0; r < proto.n_rollouts; ++r) {
    Eigen::VectorXd a = a_mu;
    for (int i = 0; i < a.size(); ++i) a[i] += rng.normal(0.0, proto.sigma_delta);
    actions.push_back(a);
    qs.push_back(critic.q_value(s, a));
  }
  const Eigen::VectorXd estimate = lmse_fit(a_mu, actions, qs);
  return cosine_similarity(critic.action_grad_autodiff(s, a_mu), estimate);
}

}  // namespace hyperql
