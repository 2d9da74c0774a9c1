#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperql/critic.hpp"
#include "hyperql/optim.hpp"
#include "hyperql/policy.hpp"
#include "hyperql/rl_core.hpp"

namespace hyperql {

class TrainDivergence : public std::runtime_error {
 public:
  TrainDivergence(const std::string& what, long step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step(step) {}
  long step;
};

struct TrainerConfig {
  std::string algo = "td3";  // td3 | sac
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  int batch = 100;
  double gamma = 0.99;
  double tau = 0.005;
  int policy_delay = 2;
  double expl_noise = 0.1;
  double target_noise = 0.2;
  double target_noise_clip = 0.5;
  double alpha_ent = 0.2;
  double reward_scale = 1.0;
  double action_scale = 1.0;
  long total_steps = 20000;
  int warmup = 1000;
  int eval_every = 5000;
  int eval_rollouts = 10;
  int replay_capacity = 100000;
  std::uint64_t seed = 1;
};

// Architectural knobs; the trainer profile keeps networks small enough for
// single-core experiments. Module-level defaults stay with their classes.
struct ModelSpec {
  std::vector<int> mlp_critic_hidden{256, 256};
  std::vector<int> primary_widths{16, 32, 48};
  int dyn_hidden = 32;
  std::vector<int> policy_hidden{64, 64};
};

// Hyperparameter defaults per algorithm and critic family.
inline TrainerConfig default_trainer_config(const std::string& algo, CriticKind kind) {
  TrainerConfig cfg;
  cfg.algo = algo;
  const bool hyper = kind == CriticKind::kSaHyper || kind == CriticKind::kAsHyper;
  if (algo == "sac") {
    cfg.batch = 256;
    cfg.reward_scale = 5.0;
    cfg.policy_delay = 1;
    cfg.actor_lr = hyper ? 2e-5 : 3e-4;
    cfg.critic_lr = hyper ? 5e-5 : 3e-4;
  } else {
    cfg.batch = 100;
    cfg.reward_scale = 1.0;
    cfg.policy_delay = 2;
    cfg.actor_lr = 3e-4;
    cfg.critic_lr = hyper ? 5e-5 : 3e-4;
  }
  return cfg;
}

struct Batch {
  Eigen::MatrixXd s, a, s2;
  Eigen::VectorXd r, done;

  int size() const { return static_cast<int>(s.rows()); }
};

inline Batch make_batch(const std::vector<const Transition*>& sampled) {
  Batch b;
  const int n = static_cast<int>(sampled.size());
  const int n_s = static_cast<int>(sampled[0]->s.size());
  const int n_a = static_cast<int>(sampled[0]->a.size());
  b.s.resize(n, n_s);
  b.a.resize(n, n_a);
  b.s2.resize(n, n_s);
  b.r.resize(n);
  b.done.resize(n);
  for (int i = 0; i < n; ++i) {
    b.s.row(i) = sampled[static_cast<size_t>(i)]->s;
    b.a.row(i) = sampled[static_cast<size_t>(i)]->a;
    b.s2.row(i) = sampled[static_cast<size_t>(i)]->s2;
    b.r[i] = sampled[static_cast<size_t>(i)]->r;
    b.done[i] = sampled[static_cast<size_t>(i)]->done ? 1.0 : 0.0;
  }
  return b;
}

// theta_target <- tau * theta + (1 - tau) * theta_target.
inline void soft_update(ParamStore& target, const ParamStore& online, double tau) {
  for (int i = 0; i < target.count(); ++i) {
    auto& tv = target.at(i).value;
    const auto& ov = online.at(i).value;
    for (size_t j = 0; j < tv.size(); ++j) tv[j] = tau * ov[j] + (1.0 - tau) * tv[j];
  }
}

inline Tensor matrix_leaf(Graph& g, const Eigen::MatrixXd& m, bool requires_grad = false) {
  std::vector<double> flat(static_cast<size_t>(m.rows()) * m.cols());
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) flat[static_cast<size_t>(i) * m.cols() + j] = m(i, j);
  }
  return g.leaf(static_cast<int>(m.rows()), static_cast<int>(m.cols()), flat, requires_grad);
}

using QFn = std::function<Tensor(Graph&, Tensor states, Tensor actions)>;

struct ActorEval {
  double surrogate = 0.0;       // mean Q along the current policy
  std::vector<double> grad;     // d surrogate / d phi, flattened
};

// Gradient of the off-policy surrogate through a frozen Q: backprop enters
// the critic only via the action input.
inline ActorEval actor_gradient(Graph& g, TanhPolicy& policy, const QFn& q_fn,
                                const Eigen::MatrixXd& states) {
  g.clear();
  Bound bp = bind(g, policy.params(), true);
  Tensor s = matrix_leaf(g, states);
  Tensor a = policy.forward(g, bp, s);
  Tensor surr = g.mean(q_fn(g, s, a));
  g.backward(surr);
  ActorEval out;
  out.surrogate = surr.scalar();
  out.grad = collect_grads(bp);
  return out;
}

// TD3-style and SAC-style actor-critic with twin critics and lagging
// targets, on the LQR environment.
class OffPolicyTrainer {
 public:
  struct MetricsRowT {
    long step = 0;
    double eval_return_mean = 0.0;
    double eval_return_std = 0.0;
    double td_loss = 0.0;
    double surrogate = 0.0;
  };

  using StepHook = std::function<void(long, OffPolicyTrainer&)>;

  OffPolicyTrainer(TrainerConfig cfg, const ModelSpec& spec, CriticKind kind, LqrEnv env)
      : cfg_(cfg),
        env_(std::move(env)),
        buffer_(cfg.replay_capacity),
        opt_q1_(cfg.critic_lr),
        opt_q2_(cfg.critic_lr),
        opt_pi_(cfg.actor_lr) {
    const int n_s = env_.state_dim(), n_a = env_.action_dim();
    q1_ = build_critic(kind, n_s, n_a, spec);
    q2_ = build_critic(kind, n_s, n_a, spec);
    q1_.init(cfg.seed * 2 + 1);
    q2_.init(cfg.seed * 2 + 2);
    q1_t_ = q1_.clone();
    q2_t_ = q2_.clone();
    if (cfg_.algo == "sac") {
      gpi_ = GaussPolicy("pi", n_s, n_a, spec.policy_hidden, cfg.action_scale);
      RngStream rng(cfg.seed, 0x901);
      init_mlp_default(gpi_.net, rng);
    } else {
      pi_ = TanhPolicy("pi", n_s, n_a, spec.policy_hidden, cfg.action_scale);
      RngStream rng(cfg.seed, 0x901);
      init_mlp_default(pi_.net, rng);
      pi_t_ = pi_;
    }
  }

  static Critic build_critic(CriticKind kind, int n_s, int n_a, const ModelSpec& spec) {
    switch (kind) {
      case CriticKind::kLinear:
        return Critic::linear(n_s, n_a);
      case CriticKind::kMlpConcat:
        return Critic::mlp_concat(n_s, n_a, spec.mlp_critic_hidden);
      case CriticKind::kSaHyper:
        return Critic::sa_hyper(n_s, n_a, spec.primary_widths, spec.dyn_hidden);
      case CriticKind::kAsHyper:
        return Critic::as_hyper(n_s, n_a, spec.primary_widths, spec.dyn_hidden);
    }
    throw ContractError("build_critic: bad kind");
  }

  // TD target y = scaled r + gamma (1 - done) * min-twin target value; TD3
  // smooths the target action, SAC samples it and subtracts the scaled
  // log-likelihood.
  Eigen::VectorXd td_targets(const Batch& batch, std::uint64_t draw_stream) {
    const int n = batch.size();
    const int n_a = env_.action_dim();
    target_graph_.clear();
    Graph& g = target_graph_;
    Tensor s2 = matrix_leaf(g, batch.s2);
    Tensor a2;
    Eigen::VectorXd ent_term = Eigen::VectorXd::Zero(n);
    if (cfg_.algo == "sac") {
      RngStream rng(cfg_.seed, 0x7A0000 + draw_stream);
      Eigen::MatrixXd eps(n, n_a);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n_a; ++j) eps(i, j) = rng.normal();
      }
      Bound bpi = bind(g, gpi_.params(), false);
      GaussPolicy::Sampled sp = gpi_.sample(g, bpi, s2, eps);
      a2 = sp.action;
      for (int i = 0; i < n; ++i) ent_term[i] = sp.log_prob.val()[static_cast<size_t>(i)];
    } else {
      RngStream rng(cfg_.seed, 0x7A0000 + draw_stream);
      Bound bpi = bind(g, pi_t_.params(), false);
      Tensor mean = pi_t_.forward(g, bpi, s2);
      Eigen::MatrixXd smoothed(n, n_a);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n_a; ++j) {
          double noise = rng.normal(0.0, cfg_.target_noise);
          noise = std::clamp(noise, -cfg_.target_noise_clip, cfg_.target_noise_clip);
          double v = mean.val()[static_cast<size_t>(i) * n_a + j] + noise;
          smoothed(i, j) = std::clamp(v, -cfg_.action_scale, cfg_.action_scale);
        }
      }
      a2 = matrix_leaf(g, smoothed);
    }
    Bound b1 = bind(g, q1_t_.params(), false);
    Bound b2 = bind(g, q2_t_.params(), false);
    Tensor t1 = q1_t_.q_batch(g, b1, s2, a2);
    Tensor t2 = q2_t_.q_batch(g, b2, s2, a2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      const double qmin = std::min(t1.val()[static_cast<size_t>(i)], t2.val()[static_cast<size_t>(i)]);
      double target = qmin;
      if (cfg_.algo == "sac") target -= cfg_.alpha_ent * ent_term[i];
      y[i] = cfg_.reward_scale * batch.r[i] + cfg_.gamma * (1.0 - batch.done[i]) * target;
    }
    return y;
  }

  // One fitted step on |Q(s,a) - y|^2 for both twins; targets untouched.
  double critic_update(const Batch& batch) {
    const Eigen::VectorXd y = td_targets(batch, static_cast<std::uint64_t>(updates_));
    critic_graph_.clear();
    Graph& g = critic_graph_;
    Tensor s = matrix_leaf(g, batch.s);
    Tensor a = matrix_leaf(g, batch.a);
    Tensor ty = matrix_leaf(g, y);
    Bound b1 = bind(g, q1_.params(), true);
    Bound b2 = bind(g, q2_.params(), true);
    Tensor d1 = g.sub(q1_.q_batch(g, b1, s, a), ty);
    Tensor d2 = g.sub(q2_.q_batch(g, b2, s, a), ty);
    Tensor l1 = g.mean(g.mul(d1, d1));
    Tensor l2 = g.mean(g.mul(d2, d2));
    Tensor loss = g.add(l1, l2);
    g.backward(loss);
    const double value = 0.5 * (l1.scalar() + l2.scalar());

    opt_q1_.step(q1_.params(), collect_grads(b1));
    opt_q2_.step(q2_.params(), collect_grads(b2));
    ++updates_;
    return value;
  }

  // Ascent on the frozen-critic surrogate; SAC adds the entropy bonus.
  double actor_update(const Batch& batch) {
    if (cfg_.algo == "sac") return sac_actor_update(batch);
    auto q_fn = [this](Graph& g, Tensor s, Tensor a) {
      Bound bq = bind(g, q1_.params(), false);
      return q1_.q_batch(g, bq, s, a);
    };
    ActorEval ev = actor_gradient(actor_graph_, pi_, q_fn, batch.s);
    for (double& gv : ev.grad) gv = -gv;  // ascend
    opt_pi_.step(pi_.params(), ev.grad);
    return ev.surrogate;
  }

  void soft_updates() {
    soft_update(q1_t_.params(), q1_.params(), cfg_.tau);
    soft_update(q2_t_.params(), q2_.params(), cfg_.tau);
    if (cfg_.algo != "sac") soft_update(pi_t_.params(), pi_.params(), cfg_.tau);
  }

  Eigen::VectorXd eval_action(const Eigen::VectorXd& s) const {
    return cfg_.algo == "sac" ? gpi_.act_mean(s) : pi_.act(s);
  }

  // Mean and std of the discounted return over noiseless rollouts.
  std::pair<double, double> evaluate(int eval_idx) {
    LqrEnv quiet = env_;
    quiet.noise_std = 0.0;
    std::vector<double> returns;
    for (int k = 0; k < cfg_.eval_rollouts; ++k) {
      RngStream rng(cfg_.seed, 0x9000000 + static_cast<std::uint64_t>(eval_idx) * 1000 +
                                   static_cast<std::uint64_t>(k));
      auto act = [this](const Eigen::VectorXd& s) { return eval_action(s); };
      returns.push_back(discounted_return(rollout(quiet, act, quiet.horizon, rng), quiet.gamma));
    }
    double mean = 0.0;
    for (double r : returns) mean += r;
    mean /= static_cast<double>(returns.size());
    double var = 0.0;
    for (double r : returns) var += (r - mean) * (r - mean);
    var /= static_cast<double>(returns.size());
    return {mean, std::sqrt(var)};
  }

  std::vector<MetricsRowT> run(const StepHook& hook = {}) {
    RngStream env_rng(cfg_.seed, 1);
    RngStream expl_rng(cfg_.seed, 2);
    RngStream buffer_rng(cfg_.seed, 4);
    Eigen::VectorXd s = env_.reset(env_rng);
    int ep_len = 0;
    int eval_idx = 0;
    double td_acc = 0.0, surr_acc = 0.0;
    long td_n = 0, surr_n = 0;
    std::vector<MetricsRowT> metrics;

    for (long step = 1; step <= cfg_.total_steps; ++step) {
      Eigen::VectorXd a = select_action(s, step, expl_rng);
      Eigen::VectorXd s2 = env_.next_state(s, a, &env_rng);
      const double r = env_.reward(s, a);
      buffer_.push(Transition{s, a, r, s2, false});
      s = std::move(s2);
      if (++ep_len >= env_.horizon) {
        s = env_.reset(env_rng);
        ep_len = 0;
      }

      if (step > cfg_.warmup) {
        Batch batch = make_batch(buffer_.sample(cfg_.batch, buffer_rng));
        const double td = critic_update(batch);
        if (!std::isfinite(td)) throw TrainDivergence("critic loss diverged", step);
        td_acc += td;
        ++td_n;
        if (step % cfg_.policy_delay == 0) {
          const double surr = actor_update(batch);
          if (!std::isfinite(surr)) throw TrainDivergence("actor surrogate diverged", step);
          surr_acc += surr;
          ++surr_n;
          soft_updates();
        }
      }

      if (cfg_.eval_every > 0 && step % cfg_.eval_every == 0) {
        auto [mean, sd] = evaluate(eval_idx++);
        metrics.push_back(MetricsRowT{step, mean, sd, td_n ? td_acc / td_n : 0.0,
                                      surr_n ? surr_acc / surr_n : 0.0});
        td_acc = surr_acc = 0.0;
        td_n = surr_n = 0;
      }
      if (hook) hook(step, *this);
    }
    return metrics;
  }

  std::vector<Eigen::VectorXd> sample_buffer_states(int n, RngStream& rng) const {
    auto sampled = buffer_.sample(n, rng);
    std::vector<Eigen::VectorXd> out;
    out.reserve(static_cast<size_t>(n));
    for (const Transition* t : sampled) out.push_back(t->s);
    return out;
  }

  const TrainerConfig& config() const { return cfg_; }
  const LqrEnv& env() const { return env_; }
  Critic& q1() { return q1_; }
  Critic& q2() { return q2_; }
  Critic& q1_target() { return q1_t_; }
  Critic& q2_target() { return q2_t_; }
  TanhPolicy& policy() { return pi_; }
  TanhPolicy& policy_target() { return pi_t_; }
  GaussPolicy& gauss_policy() { return gpi_; }
  ReplayBuffer& buffer() { return buffer_; }
  long updates() const { return updates_; }

 private:
  Eigen::VectorXd select_action(const Eigen::VectorXd& s, long step, RngStream& rng) {
    const int n_a = env_.action_dim();
    if (step <= cfg_.warmup) {
      Eigen::VectorXd a(n_a);
      for (int i = 0; i < n_a; ++i) a[i] = rng.uniform(-cfg_.action_scale, cfg_.action_scale);
      return a;
    }
    if (cfg_.algo == "sac") return gpi_.act_sample(s, rng);
    Eigen::VectorXd a = pi_.act(s);
    for (int i = 0; i < n_a; ++i) {
      a[i] = std::clamp(a[i] + rng.normal(0.0, cfg_.expl_noise), -cfg_.action_scale,
                        cfg_.action_scale);
    }
    return a;
  }

  double sac_actor_update(const Batch& batch) {
    const int n = batch.size();
    const int n_a = env_.action_dim();
    RngStream rng(cfg_.seed, 0x8B0000 + static_cast<std::uint64_t>(updates_));
    Eigen::MatrixXd eps(n, n_a);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n_a; ++j) eps(i, j) = rng.normal();
    }
    actor_graph_.clear();
    Graph& g = actor_graph_;
    Bound bpi = bind(g, gpi_.params(), true);
    Tensor s = matrix_leaf(g, batch.s);
    GaussPolicy::Sampled sp = gpi_.sample(g, bpi, s, eps);
    Bound b1 = bind(g, q1_.params(), false);
    Bound b2 = bind(g, q2_.params(), false);
    Tensor qa = q1_.q_batch(g, b1, s, sp.action);
    Tensor qb = q2_.q_batch(g, b2, s, sp.action);
    // min(qa, qb) = qa - relu(qa - qb)
    Tensor qmin = g.sub(qa, g.relu(g.sub(qa, qb)));
    Tensor loss = g.mean(g.sub(g.scale(sp.log_prob, cfg_.alpha_ent), qmin));
    g.backward(loss);
    opt_pi_.step(gpi_.params(), collect_grads(bpi));
    return -loss.scalar();
  }

  TrainerConfig cfg_;
  LqrEnv env_;
  Critic q1_, q2_, q1_t_, q2_t_;
  TanhPolicy pi_, pi_t_;
  GaussPolicy gpi_;
  ReplayBuffer buffer_;
  Adam opt_q1_, opt_q2_, opt_pi_;
  Graph critic_graph_, actor_graph_, target_graph_;
  long updates_ = 0;
};

}  // namespace hyperql
