#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hyperql/hypernet.hpp"
#include "hyperql/params.hpp"
#include "hyperql/rl_core.hpp"
#include "hyperql/rng.hpp"

namespace hyperql {

enum class MetaPolicyKind { kContextMlp, kHyperContext };

inline const char* meta_policy_kind_name(MetaPolicyKind k) {
  return k == MetaPolicyKind::kContextMlp ? "context-mlp" : "hyper-context";
}

// Gaussian meta-policy over a task context. The context enters exactly once:
// concatenated with the state (ContextMlp) or through the primary network
// (HyperContext). Per-dimension log-std is a learned parameter for the MLP
// and a generated distribution-head group for the hypernetwork.
class MetaPolicy {
 public:
  static MetaPolicy context_mlp(int n_s, int n_c, int n_a, std::vector<int> hidden = {64, 64}) {
    MetaPolicy p;
    p.kind_ = MetaPolicyKind::kContextMlp;
    p.n_s_ = n_s;
    p.n_c_ = n_c;
    p.n_a_ = n_a;
    std::vector<int> dims{n_s + n_c};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(n_a);
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
      p.w_.push_back(p.params_.add("pi.W" + std::to_string(l), dims[l], dims[l + 1]));
      p.b_.push_back(p.params_.add("pi.b" + std::to_string(l), 1, dims[l + 1]));
    }
    p.log_std_ = p.params_.add("pi.log_std", 1, n_a);
    return p;
  }

  static MetaPolicy hyper_context(int n_s, int n_c, int n_a,
                                  std::vector<int> widths = {16, 32, 48}, int dyn_hidden = 32) {
    MetaPolicy p;
    p.kind_ = MetaPolicyKind::kHyperContext;
    p.n_s_ = n_s;
    p.n_c_ = n_c;
    p.n_a_ = n_a;
    PrimaryConfig cfg;
    cfg.meta_dim = n_c;
    cfg.widths = std::move(widths);
    DynamicSpec dyn{n_s, dyn_hidden, n_a, 1, true};
    p.hyper_ = std::make_shared<HyperNet>("pi", cfg, dyn);
    return p;
  }

  MetaPolicyKind kind() const { return kind_; }
  int state_dim() const { return n_s_; }
  int context_dim() const { return n_c_; }
  int action_dim() const { return n_a_; }

  ParamStore& params() { return hyper_ ? hyper_->params() : params_; }
  const ParamStore& params() const { return hyper_ ? hyper_->params() : params_; }

  MetaPolicy clone() const {
    MetaPolicy p = *this;
    if (hyper_) p.hyper_ = std::make_shared<HyperNet>(*hyper_);
    return p;
  }

  void init(std::uint64_t seed) {
    if (hyper_) {
      init_hypernet(*hyper_, InitScheme{}, seed);
    } else {
      RngStream rng(seed, 0x3E7A);
      for (size_t l = 0; l < w_.size(); ++l) {
        Param& w = params_.at(w_[l]);
        Param& b = params_.at(b_[l]);
        const double bound = 1.0 / std::sqrt(static_cast<double>(w.rows));
        for (double& v : w.value) v = rng.uniform(-bound, bound);
        for (double& v : b.value) v = rng.uniform(-bound, bound);
      }
      std::fill(params_.at(log_std_).value.begin(), params_.at(log_std_).value.end(), 0.0);
    }
  }

  struct TaskHead {
    Tensor mean;     // [T x n_a]
    Tensor log_std;  // [1 x n_a]
  };

  // Distribution parameters for all steps of one task in one graph.
  TaskHead forward_task(Graph& g, const Bound& bp, const Eigen::MatrixXd& states,
                        const Eigen::VectorXd& context) const {
    const int t = static_cast<int>(states.rows());
    if (kind_ == MetaPolicyKind::kContextMlp) {
      Eigen::MatrixXd joined(t, n_s_ + n_c_);
      joined.leftCols(n_s_) = states;
      for (int i = 0; i < t; ++i) joined.row(i).tail(n_c_) = context;
      Tensor h = matrix_leaf_local(g, joined);
      for (size_t l = 0; l < w_.size(); ++l) {
        h = g.add_rowvec(g.matmul(h, bp[w_[l]]), bp[b_[l]]);
        if (l + 1 < w_.size()) h = g.relu(h);
      }
      return TaskHead{h, bp[log_std_]};
    }
    std::vector<double> c(context.data(), context.data() + context.size());
    DynTensors w = hyper_->forward(g, bp, g.leaf(1, n_c_, c));
    Tensor mean = dynamic_apply_shared(g, hyper_->dynamic_spec(), w, matrix_leaf_local(g, states));
    return TaskHead{mean, *w.log_std};
  }

  // Plain sampling and mean actions for rollouts.
  Eigen::VectorXd act_mean(const Eigen::VectorXd& s, const Eigen::VectorXd& c) const {
    Graph g;
    Bound bp = bind(g, params(), false);
    Eigen::MatrixXd row = s.transpose();
    TaskHead head = forward_task(g, bp, row, c);
    Eigen::VectorXd a(n_a_);
    for (int i = 0; i < n_a_; ++i) a[i] = head.mean.val()[static_cast<size_t>(i)];
    return a;
  }

  Eigen::VectorXd act_sample(const Eigen::VectorXd& s, const Eigen::VectorXd& c,
                             RngStream& rng) const {
    Graph g;
    Bound bp = bind(g, params(), false);
    Eigen::MatrixXd row = s.transpose();
    TaskHead head = forward_task(g, bp, row, c);
    Eigen::VectorXd a(n_a_);
    for (int i = 0; i < n_a_; ++i) {
      const double sd = std::exp(head.log_std.val()[static_cast<size_t>(i)]);
      a[i] = head.mean.val()[static_cast<size_t>(i)] + sd * rng.normal();
    }
    return a;
  }

  const HyperNet& hyper() const { return *hyper_; }

 private:
  static Tensor matrix_leaf_local(Graph& g, const Eigen::MatrixXd& m) {
    std::vector<double> flat(static_cast<size_t>(m.rows()) * m.cols());
    for (int i = 0; i < m.rows(); ++i) {
      for (int j = 0; j < m.cols(); ++j) flat[static_cast<size_t>(i) * m.cols() + j] = m(i, j);
    }
    return g.leaf(static_cast<int>(m.rows()), static_cast<int>(m.cols()), flat);
  }

  MetaPolicyKind kind_ = MetaPolicyKind::kContextMlp;
  int n_s_ = 0, n_c_ = 0, n_a_ = 0;
  ParamStore params_;
  std::vector<int> w_, b_;
  int log_std_ = -1;
  std::shared_ptr<HyperNet> hyper_;
};

// On-policy material for one task: states, sampled (pre-clip) actions, and
// per-step advantages (discounted return-to-go minus the task mean).
struct TaskData {
  int task_id = 0;
  Eigen::VectorXd context;
  Eigen::MatrixXd states;   // [T x n_s]
  Eigen::MatrixXd actions;  // [T x n_a]
  Eigen::VectorXd adv;      // [T]
  int n_traj = 0;
};

inline std::vector<double> return_to_go(const Trajectory& traj, double gamma) {
  std::vector<double> r(traj.size());
  double acc = 0.0;
  for (int t = static_cast<int>(traj.size()) - 1; t >= 0; --t) {
    acc = traj[static_cast<size_t>(t)].r + gamma * acc;
    r[static_cast<size_t>(t)] = acc;
  }
  return r;
}

inline TaskData collect_task_data(const PointMassEnv& env, const MetaPolicy& policy, int task_id,
                                  int n_traj, int horizon, double gamma, std::uint64_t seed,
                                  std::uint64_t stream) {
  const Eigen::VectorXd context = env.task.context();
  std::vector<Trajectory> trajs;
  trajs.reserve(static_cast<size_t>(n_traj));
  for (int k = 0; k < n_traj; ++k) {
    RngStream env_rng(seed, stream * 10007 + static_cast<std::uint64_t>(2 * k));
    RngStream act_rng(seed, stream * 10007 + static_cast<std::uint64_t>(2 * k + 1));
    auto act = [&](const Eigen::VectorXd& s) { return policy.act_sample(s, context, act_rng); };
    trajs.push_back(rollout(env, act, horizon, env_rng));
  }
  int total = 0;
  for (const auto& tr : trajs) total += static_cast<int>(tr.size());
  TaskData data;
  data.task_id = task_id;
  data.context = context;
  data.states.resize(total, env.state_dim());
  data.actions.resize(total, env.action_dim());
  data.adv.resize(total);
  data.n_traj = n_traj;
  int row = 0;
  double mean_rtg = 0.0;
  std::vector<std::vector<double>> rtgs;
  for (const auto& tr : trajs) {
    rtgs.push_back(return_to_go(tr, gamma));
    for (double v : rtgs.back()) mean_rtg += v;
  }
  mean_rtg /= static_cast<double>(total);
  for (size_t k = 0; k < trajs.size(); ++k) {
    for (size_t t = 0; t < trajs[k].size(); ++t) {
      data.states.row(row) = trajs[k][t].s;
      data.actions.row(row) = trajs[k][t].a;
      data.adv[row] = rtgs[k][t] - mean_rtg;
      ++row;
    }
  }
  return data;
}

namespace detail_meta {

// Weighted log-likelihood surrogate for one task, averaged per trajectory.
inline Tensor task_surrogate(Graph& g, const TaskData& data, Tensor mean, Tensor log_std) {
  const int t = static_cast<int>(data.states.rows());
  const int n_a = static_cast<int>(data.actions.cols());
  std::vector<double> aflat(static_cast<size_t>(t) * n_a);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < n_a; ++j) aflat[static_cast<size_t>(i) * n_a + j] = data.actions(i, j);
  }
  Tensor actions = g.leaf(t, n_a, aflat);
  Tensor inv_std = g.exp(g.scale(log_std, -1.0));
  Tensor z = g.mul_rowvec(g.sub(actions, mean), inv_std);
  Tensor quad = g.scale(g.mul(z, z), -0.5);
  Tensor per_elem = g.add_rowvec(g.affine(quad, 1.0, -0.5 * std::log(2.0 * M_PI)),
                                 g.scale(log_std, -1.0));
  Tensor logp = g.rowsum(per_elem);  // [T x 1]
  std::vector<double> w(static_cast<size_t>(t));
  for (int i = 0; i < t; ++i) w[static_cast<size_t>(i)] = data.adv[i];
  Tensor weighted = g.mul(logp, g.leaf(t, 1, w));
  return g.scale(g.sum(weighted), 1.0 / static_cast<double>(data.n_traj));
}

}  // namespace detail_meta

// Score-function policy gradient for one task at the current parameters.
inline std::vector<double> task_policy_gradient(const MetaPolicy& policy, const TaskData& data) {
  if (data.states.rows() == 0) throw ContractError("task_policy_gradient: empty batch");
  Graph g;
  Bound bp = bind(g, policy.params(), true);
  MetaPolicy::TaskHead head = policy.forward_task(g, bp, data.states, data.context);
  Tensor surr = detail_meta::task_surrogate(g, data, head.mean, head.log_std);
  g.backward(surr);
  return collect_grads(bp);
}

inline double task_surrogate_value(const MetaPolicy& policy, const TaskData& data) {
  Graph g;
  Bound bp = bind(g, policy.params(), false);
  MetaPolicy::TaskHead head = policy.forward_task(g, bp, data.states, data.context);
  return detail_meta::task_surrogate(g, data, head.mean, head.log_std).scalar();
}

// Tasks accumulate in ascending task id, so any iteration order produces the
// same bits.
inline std::vector<double> multi_task_gradient(const MetaPolicy& policy,
                                               std::vector<TaskData> tasks) {
  std::sort(tasks.begin(), tasks.end(),
            [](const TaskData& a, const TaskData& b) { return a.task_id < b.task_id; });
  std::vector<double> acc(static_cast<size_t>(policy.params().total_size()), 0.0);
  for (const TaskData& data : tasks) {
    std::vector<double> g = task_policy_gradient(policy, data);
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
  }
  for (double& v : acc) v /= static_cast<double>(tasks.size());
  return acc;
}

// One inner policy-gradient ascent step from fresh task rollouts; the input
// policy is left untouched.
inline std::vector<double> adapt(const MetaPolicy& policy, const PointMassEnv& env, int task_id,
                                 double inner_lr, int n_traj, int horizon, double gamma,
                                 std::uint64_t seed, std::uint64_t stream) {
  std::vector<double> phi = policy.params().flatten();
  if (inner_lr == 0.0) return phi;
  TaskData data = collect_task_data(env, policy, task_id, n_traj, horizon, gamma, seed, stream);
  std::vector<double> g = task_policy_gradient(policy, data);
  for (size_t i = 0; i < phi.size(); ++i) phi[i] += inner_lr * g[i];
  return phi;
}

struct MetaGradientConfig {
  double inner_lr = 0.1;
  int traj_per_task = 20;   // trajectories per update
  int horizon = 200;
  double gamma = 0.95;
  int meta_batch = 40;      // cap on tasks per update
};

// First-order MAML gradient: adapt per task, re-collect, take the policy
// gradient at the adapted parameters, average over tasks.
inline std::vector<double> meta_gradient(const MetaPolicy& policy,
                                         const std::vector<PointMassEnv>& envs,
                                         const MetaGradientConfig& cfg, std::uint64_t seed,
                                         std::uint64_t round) {
  std::vector<double> acc(static_cast<size_t>(policy.params().total_size()), 0.0);
  for (size_t i = 0; i < envs.size(); ++i) {
    const std::uint64_t base = round * 1000000 + static_cast<std::uint64_t>(i) * 4;
    std::vector<double> phi_i = adapt(policy, envs[i], static_cast<int>(i), cfg.inner_lr,
                                      cfg.traj_per_task, cfg.horizon, cfg.gamma, seed, base);
    MetaPolicy adapted = policy.clone();
    adapted.params().unflatten(phi_i);
    TaskData data = collect_task_data(envs[i], adapted, static_cast<int>(i), cfg.traj_per_task,
                                      cfg.horizon, cfg.gamma, seed, base + 2);
    std::vector<double> g = task_policy_gradient(adapted, data);
    for (size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
  }
  for (double& v : acc) v /= static_cast<double>(envs.size());
  return acc;
}

// The disentangled form: per task, the advantage-weighted score is first
// accumulated in dynamic-weight space, then pulled back through the primary
// once per task.
inline std::vector<double> factored_meta_gradient(const MetaPolicy& policy,
                                                  std::vector<TaskData> tasks) {
  if (policy.kind() != MetaPolicyKind::kHyperContext) {
    throw ContractError("factored_meta_gradient: policy is not hyper-context");
  }
  std::sort(tasks.begin(), tasks.end(),
            [](const TaskData& a, const TaskData& b) { return a.task_id < b.task_id; });
  const HyperNet& net = policy.hyper();
  const DynamicSpec& spec = net.dynamic_spec();
  std::vector<double> acc(static_cast<size_t>(policy.params().total_size()), 0.0);

  for (const TaskData& data : tasks) {
    // Dynamic-weight-space score sums G_i with the generated weights as leaves.
    std::vector<double> c(data.context.data(), data.context.data() + data.context.size());
    DynValues vals = net.values(c);
    Graph g;
    DynTensors w;
    w.has_hidden = spec.hidden_layers > 0;
    w.w1 = g.leaf(1, static_cast<int>(vals.w1.size()), vals.w1, true);
    w.b1 = g.leaf(1, static_cast<int>(vals.b1.size()), vals.b1, true);
    w.g1 = g.leaf(1, static_cast<int>(vals.g1.size()), vals.g1, true);
    if (w.has_hidden) {
      w.w2 = g.leaf(1, static_cast<int>(vals.w2.size()), vals.w2, true);
      w.b2 = g.leaf(1, static_cast<int>(vals.b2.size()), vals.b2, true);
      w.g2 = g.leaf(1, static_cast<int>(vals.g2.size()), vals.g2, true);
    }
    Tensor log_std = g.leaf(1, static_cast<int>(vals.log_std.size()), vals.log_std, true);
    w.log_std = log_std;

    std::vector<double> sflat(static_cast<size_t>(data.states.rows()) * data.states.cols());
    for (int i = 0; i < data.states.rows(); ++i) {
      for (int j = 0; j < data.states.cols(); ++j) {
        sflat[static_cast<size_t>(i) * data.states.cols() + j] = data.states(i, j);
      }
    }
    Tensor states = g.leaf(static_cast<int>(data.states.rows()),
                           static_cast<int>(data.states.cols()), sflat);
    Tensor mean = dynamic_apply_shared(g, spec, w, states);
    Tensor surr = detail_meta::task_surrogate(g, data, mean, log_std);
    g.backward(surr);

    // Pull G_i back through the primary: seed each head output and sweep.
    Graph gp;
    Bound bp = bind(gp, net.params(), true);
    DynTensors heads = net.forward(gp, bp, gp.leaf(1, policy.context_dim(), c));
    gp.backward_seeded(heads.w1, w.w1.grad());
    gp.backward_seeded(heads.b1, w.b1.grad());
    gp.backward_seeded(heads.g1, w.g1.grad());
    if (w.has_hidden) {
      gp.backward_seeded(heads.w2, w.w2.grad());
      gp.backward_seeded(heads.b2, w.b2.grad());
      gp.backward_seeded(heads.g2, w.g2.grad());
    }
    gp.backward_seeded(*heads.log_std, log_std.grad());
    std::vector<double> g_task = collect_grads(bp);
    for (size_t j = 0; j < acc.size(); ++j) acc[j] += g_task[j];
  }
  for (double& v : acc) v /= static_cast<double>(tasks.size());
  return acc;
}

// Deterministic per-task evaluation return (undiscounted episode sum).
inline double evaluate_meta_policy(const MetaPolicy& policy, const std::vector<PointMassEnv>& envs,
                                   int horizon, std::uint64_t seed) {
  double total = 0.0;
  for (size_t i = 0; i < envs.size(); ++i) {
    RngStream rng(seed, 0xE7A1 + i);
    const Eigen::VectorXd ctx = envs[i].task.context();
    auto act = [&](const Eigen::VectorXd& s) { return policy.act_mean(s, ctx); };
    Trajectory tr = rollout(envs[i], act, horizon, rng);
    total += discounted_return(tr, 1.0);
  }
  return total / static_cast<double>(envs.size());
}

struct NoiseStats {
  double mean = 0.0;
  std::optional<double> stddev;
  std::optional<double> cov;  // sigma / |mu|
  std::vector<double> returns;
};

enum class MetaObjective { kMaml, kMultiTask };

// Performance statistics of N independent single updates from a fixed
// parameter point: sample fresh trajectories, apply one update, evaluate,
// restore.
inline NoiseStats grad_noise_harness(MetaPolicy& policy, const std::vector<PointMassEnv>& envs,
                                     MetaObjective objective, double outer_lr,
                                     const MetaGradientConfig& cfg, int n_updates,
                                     std::uint64_t seed) {
  const std::vector<double> snapshot = policy.params().flatten();
  NoiseStats stats;
  for (int k = 0; k < n_updates; ++k) {
    std::vector<double> g;
    if (objective == MetaObjective::kMaml) {
      g = meta_gradient(policy, envs, cfg, seed, static_cast<std::uint64_t>(k) + 1);
    } else {
      std::vector<TaskData> tasks;
      for (size_t i = 0; i < envs.size(); ++i) {
        tasks.push_back(collect_task_data(envs[i], policy, static_cast<int>(i), cfg.traj_per_task,
                                          cfg.horizon, cfg.gamma, seed,
                                          (static_cast<std::uint64_t>(k) + 1) * 1000000 +
                                              static_cast<std::uint64_t>(i) * 4));
      }
      g = multi_task_gradient(policy, tasks);
    }
    std::vector<double> phi = snapshot;
    for (size_t i = 0; i < phi.size(); ++i) phi[i] += outer_lr * g[i];
    policy.params().unflatten(phi);
    stats.returns.push_back(evaluate_meta_policy(policy, envs, cfg.horizon, seed));
    policy.params().unflatten(snapshot);
  }
  double mean = 0.0;
  for (double r : stats.returns) mean += r;
  mean /= static_cast<double>(stats.returns.size());
  stats.mean = mean;
  if (n_updates > 1) {
    double var = 0.0;
    for (double r : stats.returns) var += (r - mean) * (r - mean);
    var /= static_cast<double>(stats.returns.size() - 1);
    stats.stddev = std::sqrt(var);
    stats.cov = *stats.stddev / std::abs(mean);
  }
  return stats;
}

// Task families at desk scale.
inline std::vector<PointMassEnv> fwd_back_family(int horizon = 200) {
  PointMassEnv fwd{PointMassTask::fwd_back(+1.0)};
  PointMassEnv back{PointMassTask::fwd_back(-1.0)};
  fwd.horizon = horizon;
  back.horizon = horizon;
  return {fwd, back};
}

inline std::vector<PointMassEnv> velocity_family(int n_tasks, std::uint64_t seed,
                                                 int horizon = 200) {
  std::vector<PointMassEnv> envs;
  RngStream rng(seed, 0xFA71);
  for (int i = 0; i < n_tasks; ++i) {
    PointMassEnv env{PointMassTask::velocity(rng.uniform(0.0, 2.0 * M_PI))};
    env.horizon = horizon;
    envs.push_back(env);
  }
  return envs;
}

}  // namespace hyperql
