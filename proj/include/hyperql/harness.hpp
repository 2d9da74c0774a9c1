#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hyperql/config.hpp"
#include "hyperql/grad_fidelity.hpp"
#include "hyperql/io.hpp"
#include "hyperql/meta_rl.hpp"
#include "hyperql/plot.hpp"
#include "hyperql/prop1.hpp"
#include "hyperql/trainers.hpp"

namespace hyperql {

// ---------------------------------------------------------------------------
// Default configurations (one per subcommand). Negative values mean "resolve
// from the algorithm defaults for the chosen critic".

inline Json default_train_config() {
  return Json{
      {"seed", 1},
      {"out_dir", "runs/train"},
      {"env",
       {{"kind", "lqr"}, {"horizon", 200}, {"noise_std", 0.0}, {"gamma", 0.99}, {"init_range", 1.0}}},
      {"trainer",
       {{"algo", "td3"},
        {"critic", "sa-hyper"},
        {"actor_lr", -1.0},
        {"critic_lr", -1.0},
        {"batch", -1},
        {"tau", 0.005},
        {"policy_delay", -1},
        {"expl_noise", 0.1},
        {"target_noise", 0.2},
        {"target_noise_clip", 0.5},
        {"alpha_ent", 0.2},
        {"reward_scale", -1.0},
        {"action_scale", 1.0},
        {"total_steps", 20000},
        {"warmup", 1000},
        {"eval_every", 5000},
        {"eval_rollouts", 10},
        {"replay_capacity", 100000}}},
      {"model",
       {{"mlp_critic_hidden", {256, 256}},
        {"primary_widths", {16, 32, 48}},
        {"dyn_hidden", 32},
        {"policy_hidden", {64, 64}}}}};
}

inline Json default_cs_sweep_config() {
  Json cfg = default_train_config();
  cfg["out_dir"] = "runs/cs-sweep";
  cfg["protocol"] = Json{{"eval_every", 10000}, {"n_states", 15},       {"n_rollouts", 15},
                         {"sigma_delta", 0.3},  {"rollout_horizon", 400},
                         {"taus", {0.0, 0.25, 0.5, 0.75}}};
  return cfg;
}

inline Json default_prop1_config() {
  return Json{{"seed", 1},
              {"out_dir", "runs/prop1"},
              {"alphas", {0.0, 0.25, 0.5}},
              {"instances", 100},
              {"n_s", 4},
              {"n_a", 2},
              {"n_states", 32},
              {"eta_scale", 1.0},
              {"direction", 1.0},
              {"mc_samples", 20000}};
}

inline Json default_meta_train_config() {
  return Json{{"seed", 1},
              {"out_dir", "runs/meta-train"},
              {"family", "fwdback"},
              {"n_tasks", 2},
              {"model", "hyper"},
              {"objective", "maml"},
              {"iterations", 120},
              {"inner_lr", 0.1},
              {"outer_lr", 0.03},
              {"traj_per_task", 20},
              {"horizon", 200},
              {"gamma", 0.95},
              {"meta_batch", 40},
              {"checkpoints", {15, 45, 80, 110}},
              {"model_arch",
               {{"mlp_hidden", {64, 64}}, {"primary_widths", {16, 32, 48}}, {"dyn_hidden", 32}}}};
}

inline Json default_meta_variance_config() {
  Json cfg = default_meta_train_config();
  cfg["out_dir"] = "runs/meta-variance";
  cfg["n_updates"] = 50;
  return cfg;
}

inline Json default_init_audit_config() {
  return Json{{"seed", 1},
              {"out_dir", "runs/init-audit"},
              {"n_meta", 200},
              {"bins", 100},
              {"meta_dim", 17},
              {"primary_widths", {64, 128, 256}},
              {"dyn_in", 6},
              {"dyn_hidden", 256},
              {"dyn_out", 1}};
}

// ---------------------------------------------------------------------------
// Config materialization.

inline CriticKind critic_kind_from(const std::string& name) {
  if (name == "linear") return CriticKind::kLinear;
  if (name == "mlp" || name == "mlp-concat") return CriticKind::kMlpConcat;
  if (name == "as-hyper") return CriticKind::kAsHyper;
  if (name == "sa-hyper") return CriticKind::kSaHyper;
  throw ConfigError("unknown critic kind: " + name);
}

inline LqrEnv env_from(const Json& cfg) {
  const Json& e = cfg.at("env");
  if (e.at("kind").get<std::string>() != "lqr") {
    throw ConfigError("env.kind: only 'lqr' is supported by this harness");
  }
  LqrEnv env = LqrEnv::default_instance();
  env.horizon = e.at("horizon").get<int>();
  env.noise_std = e.at("noise_std").get<double>();
  env.gamma = e.at("gamma").get<double>();
  env.init_range = e.at("init_range").get<double>();
  return env;
}

inline ModelSpec model_spec_from(const Json& cfg) {
  const Json& m = cfg.at("model");
  ModelSpec spec;
  spec.mlp_critic_hidden = m.at("mlp_critic_hidden").get<std::vector<int>>();
  spec.primary_widths = m.at("primary_widths").get<std::vector<int>>();
  spec.dyn_hidden = m.at("dyn_hidden").get<int>();
  spec.policy_hidden = m.at("policy_hidden").get<std::vector<int>>();
  return spec;
}

// Resolve trainer values, filling negatives from the per-algorithm defaults.
inline TrainerConfig trainer_config_from(Json& cfg) {
  Json& t = cfg.at("trainer");
  const CriticKind kind = critic_kind_from(t.at("critic").get<std::string>());
  TrainerConfig base = default_trainer_config(t.at("algo").get<std::string>(), kind);
  auto fill_d = [&](const char* key, double fallback) {
    if (t.at(key).get<double>() < 0) t[key] = fallback;
  };
  auto fill_i = [&](const char* key, int fallback) {
    if (t.at(key).get<int>() < 0) t[key] = fallback;
  };
  fill_d("actor_lr", base.actor_lr);
  fill_d("critic_lr", base.critic_lr);
  fill_d("reward_scale", base.reward_scale);
  fill_i("batch", base.batch);
  fill_i("policy_delay", base.policy_delay);

  TrainerConfig out = base;
  out.actor_lr = t.at("actor_lr").get<double>();
  out.critic_lr = t.at("critic_lr").get<double>();
  out.batch = t.at("batch").get<int>();
  out.gamma = cfg.at("env").at("gamma").get<double>();
  out.tau = t.at("tau").get<double>();
  out.policy_delay = t.at("policy_delay").get<int>();
  out.expl_noise = t.at("expl_noise").get<double>();
  out.target_noise = t.at("target_noise").get<double>();
  out.target_noise_clip = t.at("target_noise_clip").get<double>();
  out.alpha_ent = t.at("alpha_ent").get<double>();
  out.reward_scale = t.at("reward_scale").get<double>();
  out.action_scale = t.at("action_scale").get<double>();
  out.total_steps = t.at("total_steps").get<long>();
  out.warmup = t.at("warmup").get<int>();
  out.eval_every = t.at("eval_every").get<int>();
  out.eval_rollouts = t.at("eval_rollouts").get<int>();
  out.replay_capacity = t.at("replay_capacity").get<int>();
  out.seed = cfg.at("seed").get<std::uint64_t>();
  return out;
}

struct RunPaths {
  std::filesystem::path out, metrics, checkpoints, plots;
};

inline RunPaths prepare_run(const Json& resolved) {
  RunPaths p;
  p.out = resolve_out_dir(resolved.at("out_dir").get<std::string>());
  p.metrics = p.out / "metrics.csv";
  p.checkpoints = p.out / "checkpoints";
  p.plots = p.out / "plots";
  std::filesystem::create_directories(p.checkpoints);
  std::filesystem::create_directories(p.plots);
  std::ofstream f(p.out / "config.resolved.json");
  f << resolved.dump(2) << "\n";
  return p;
}

// ---------------------------------------------------------------------------
// Subcommand bodies. Each takes a fully merged config, resolves defaults,
// writes config.resolved.json, metrics.csv and checkpoints under out_dir.

inline std::vector<OffPolicyTrainer::MetricsRowT> run_train(Json cfg,
                                                            OffPolicyTrainer::StepHook hook = {}) {
  TrainerConfig tc = trainer_config_from(cfg);
  const CriticKind kind = critic_kind_from(cfg.at("trainer").at("critic").get<std::string>());
  RunPaths paths = prepare_run(cfg);

  OffPolicyTrainer tr(tc, model_spec_from(cfg), kind, env_from(cfg));
  auto metrics = tr.run(hook);

  CsvWriter w({"step", "eval_return_mean", "eval_return_std", "td_loss", "surrogate"});
  for (const auto& m : metrics) {
    w.row({static_cast<double>(m.step), m.eval_return_mean, m.eval_return_std, m.td_loss,
           m.surrogate});
  }
  w.save(paths.metrics);
  checkpoint_save(tr.q1().params(), paths.checkpoints / "q1.ckpt");
  checkpoint_save(tr.q2().params(), paths.checkpoints / "q2.ckpt");
  if (tc.algo == "sac") {
    checkpoint_save(tr.gauss_policy().params(), paths.checkpoints / "policy.ckpt");
  } else {
    checkpoint_save(tr.policy().params(), paths.checkpoints / "policy.ckpt");
  }
  return metrics;
}

struct CsSweepOutcome {
  std::vector<long> steps;
  std::vector<CsEvaluation> evals;
};

inline CsSweepOutcome run_cs_sweep(Json cfg) {
  CsProtocol proto;
  const Json& p = cfg.at("protocol");
  proto.eval_every = p.at("eval_every").get<int>();
  proto.n_states = p.at("n_states").get<int>();
  proto.n_rollouts = p.at("n_rollouts").get<int>();
  proto.sigma_delta = p.at("sigma_delta").get<double>();
  proto.rollout_horizon = p.at("rollout_horizon").get<int>();
  proto.taus = p.at("taus").get<std::vector<double>>();

  TrainerConfig tc = trainer_config_from(cfg);
  const CriticKind kind = critic_kind_from(cfg.at("trainer").at("critic").get<std::string>());
  RunPaths paths = prepare_run(cfg);
  LqrEnv env = env_from(cfg);

  OffPolicyTrainer tr(tc, model_spec_from(cfg), kind, env);

  std::vector<std::string> cols{"step", "state_idx", "cs"};
  for (double tau : proto.taus) cols.push_back("learnable_frac@" + fmt_g17(tau));
  CsvWriter w(cols);
  CsSweepOutcome outcome;

  auto hook = [&](long step, OffPolicyTrainer& t) {
    if (step % proto.eval_every != 0) return;
    if (t.buffer().size() < proto.n_states) return;
    LqrEnv quiet = env;
    quiet.noise_std = 0.0;
    RngStream state_rng(tc.seed, 0xC5000000 + static_cast<std::uint64_t>(step));
    auto states = t.sample_buffer_states(proto.n_states, state_rng);
    auto policy_mean = [&t](const Eigen::VectorXd& s) { return t.eval_action(s); };
    auto grad_fn = [&t](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
      return t.q1().action_grad_autodiff(s, a);
    };
    CsEvaluation ev = evaluate_cs(quiet, policy_mean, grad_fn, states, proto, quiet.gamma,
                                  tc.seed * 1000003 + static_cast<std::uint64_t>(step));
    ev.step = step;
    for (const CsStateRow& row : ev.states) {
      std::vector<double> cells{static_cast<double>(step), static_cast<double>(row.state_idx),
                                row.cs ? *row.cs : std::nan("")};
      for (double fcount : ev.learnable_frac) cells.push_back(fcount);
      w.row(cells);
    }
    outcome.steps.push_back(step);
    outcome.evals.push_back(std::move(ev));
  };

  auto metrics = tr.run(hook);
  w.save(paths.metrics);

  CsvWriter tw({"step", "eval_return_mean", "eval_return_std", "td_loss", "surrogate"});
  for (const auto& m : metrics) {
    tw.row({static_cast<double>(m.step), m.eval_return_mean, m.eval_return_std, m.td_loss,
            m.surrogate});
  }
  tw.save(paths.out / "train_metrics.csv");
  return outcome;
}

inline void run_prop1(Json cfg) {
  RunPaths paths = prepare_run(cfg);
  const auto alphas = cfg.at("alphas").get<std::vector<double>>();
  const int instances = cfg.at("instances").get<int>();
  const int n_s = cfg.at("n_s").get<int>();
  const int n_a = cfg.at("n_a").get<int>();
  const int n_states = cfg.at("n_states").get<int>();
  const double eta_scale = cfg.at("eta_scale").get<double>();
  const double direction = cfg.at("direction").get<double>();
  const long mc = cfg.at("mc_samples").get<long>();
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();

  CsvWriter w({"instance_id", "alpha", "eta", "advantage_closed", "advantage_mc"});
  for (int i = 0; i < instances; ++i) {
    BanditInstance inst = BanditInstance::random(n_s, n_a, n_states, seed * 100000 + static_cast<std::uint64_t>(i));
    Eigen::MatrixXd phi = inst.perturbed_gain(static_cast<std::uint64_t>(i));
    for (double alpha : alphas) {
      EtaBounds b = eta_bound(alpha, inst.kappa_q(), inst.kappa_mu(), inst.sigma_q(phi),
                              inst.sigma_mu());
      const double eta = eta_scale * b.derivation;
      StepResult r = verify_step(inst, phi, alpha, eta, direction);
      const double adv_mc = empirical_advantage_mc(inst, phi, r.phi_next, mc,
                                                   seed * 999 + static_cast<std::uint64_t>(i));
      w.row({static_cast<double>(i), alpha, eta, r.advantage, adv_mc});
    }
  }
  w.save(paths.metrics);
}

inline MetaPolicy build_meta_policy(const Json& cfg, int n_s, int n_c, int n_a) {
  const Json& arch = cfg.at("model_arch");
  const std::string model = cfg.at("model").get<std::string>();
  MetaPolicy policy =
      model == "hyper"
          ? MetaPolicy::hyper_context(n_s, n_c, n_a, arch.at("primary_widths").get<std::vector<int>>(),
                                      arch.at("dyn_hidden").get<int>())
          : MetaPolicy::context_mlp(n_s, n_c, n_a, arch.at("mlp_hidden").get<std::vector<int>>());
  policy.init(cfg.at("seed").get<std::uint64_t>());
  return policy;
}

inline std::vector<PointMassEnv> family_from(const Json& cfg) {
  const std::string family = cfg.at("family").get<std::string>();
  const int horizon = cfg.at("horizon").get<int>();
  if (family == "fwdback") return fwd_back_family(horizon);
  if (family == "velocity") {
    return velocity_family(cfg.at("n_tasks").get<int>(), cfg.at("seed").get<std::uint64_t>(),
                           horizon);
  }
  throw ConfigError("unknown task family: " + family);
}

inline MetaGradientConfig meta_gradient_config_from(const Json& cfg) {
  MetaGradientConfig mg;
  mg.inner_lr = cfg.at("inner_lr").get<double>();
  mg.traj_per_task = cfg.at("traj_per_task").get<int>();
  mg.horizon = cfg.at("horizon").get<int>();
  mg.gamma = cfg.at("gamma").get<double>();
  mg.meta_batch = cfg.at("meta_batch").get<int>();
  return mg;
}

// One outer update: collect, estimate the chosen objective's gradient,
// ascend with the plain outer rate.
inline void meta_outer_step(MetaPolicy& policy, const std::vector<PointMassEnv>& envs,
                            MetaObjective objective, const MetaGradientConfig& mg,
                            double outer_lr, std::uint64_t seed, std::uint64_t round) {
  std::vector<double> g;
  if (objective == MetaObjective::kMaml) {
    g = meta_gradient(policy, envs, mg, seed, round);
  } else {
    std::vector<TaskData> tasks;
    for (size_t i = 0; i < envs.size(); ++i) {
      tasks.push_back(collect_task_data(envs[i], policy, static_cast<int>(i), mg.traj_per_task,
                                        mg.horizon, mg.gamma, seed,
                                        round * 1000000 + static_cast<std::uint64_t>(i) * 4));
    }
    g = multi_task_gradient(policy, tasks);
  }
  std::vector<double> phi = policy.params().flatten();
  for (size_t i = 0; i < phi.size(); ++i) phi[i] += outer_lr * g[i];
  policy.params().unflatten(phi);
}

inline MetaObjective objective_from(const Json& cfg) {
  const std::string name = cfg.at("objective").get<std::string>();
  if (name == "maml") return MetaObjective::kMaml;
  if (name == "multitask") return MetaObjective::kMultiTask;
  throw ConfigError("unknown objective: " + name);
}

inline void run_meta_train(Json cfg) {
  RunPaths paths = prepare_run(cfg);
  auto envs = family_from(cfg);
  const int n_c = static_cast<int>(envs[0].task.context().size());
  MetaPolicy policy = build_meta_policy(cfg, envs[0].state_dim(), n_c, envs[0].action_dim());
  MetaGradientConfig mg = meta_gradient_config_from(cfg);
  const MetaObjective objective = objective_from(cfg);
  const double outer_lr = cfg.at("outer_lr").get<double>();
  const int iterations = cfg.at("iterations").get<int>();
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  const auto checkpoints = cfg.at("checkpoints").get<std::vector<int>>();

  CsvWriter w({"iteration", "mean_return"});
  for (int it = 1; it <= iterations; ++it) {
    meta_outer_step(policy, envs, objective, mg, outer_lr, seed, static_cast<std::uint64_t>(it));
    w.row({static_cast<double>(it), evaluate_meta_policy(policy, envs, mg.horizon, seed)});
    if (std::find(checkpoints.begin(), checkpoints.end(), it) != checkpoints.end()) {
      checkpoint_save(policy.params(),
                      paths.checkpoints / ("iter_" + std::to_string(it) + ".ckpt"));
    }
  }
  w.save(paths.metrics);
}

struct MetaVarianceRow {
  int checkpoint = 0;
  std::string model;
  double mean_return = 0.0;
  double std_return = 0.0;
  double cov = 0.0;
};

inline std::vector<MetaVarianceRow> run_meta_variance(Json cfg) {
  RunPaths paths = prepare_run(cfg);
  auto envs = family_from(cfg);
  const int n_c = static_cast<int>(envs[0].task.context().size());
  MetaPolicy policy = build_meta_policy(cfg, envs[0].state_dim(), n_c, envs[0].action_dim());
  MetaGradientConfig mg = meta_gradient_config_from(cfg);
  const MetaObjective objective = objective_from(cfg);
  const double outer_lr = cfg.at("outer_lr").get<double>();
  const int iterations = cfg.at("iterations").get<int>();
  const int n_updates = cfg.at("n_updates").get<int>();
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  const auto checkpoints = cfg.at("checkpoints").get<std::vector<int>>();
  const std::string model = cfg.at("model").get<std::string>();

  CsvWriter w({"checkpoint", "model_kind", "mean_return", "std_return", "cov"});
  std::vector<MetaVarianceRow> rows;
  for (int it = 1; it <= iterations; ++it) {
    meta_outer_step(policy, envs, objective, mg, outer_lr, seed, static_cast<std::uint64_t>(it));
    if (std::find(checkpoints.begin(), checkpoints.end(), it) == checkpoints.end()) continue;
    NoiseStats stats = grad_noise_harness(policy, envs, objective, outer_lr, mg, n_updates,
                                          seed * 31 + static_cast<std::uint64_t>(it));
    MetaVarianceRow row{it, model, stats.mean, stats.stddev.value_or(0.0),
                        stats.cov.value_or(0.0)};
    rows.push_back(row);
    w.row_cells({std::to_string(it), model, fmt_g17(row.mean_return), fmt_g17(row.std_return),
                 fmt_g17(row.cov)});
  }
  w.save(paths.metrics);
  return rows;
}

inline void run_init_audit(Json cfg) {
  RunPaths paths = prepare_run(cfg);
  PrimaryConfig pc;
  pc.meta_dim = cfg.at("meta_dim").get<int>();
  pc.widths = cfg.at("primary_widths").get<std::vector<int>>();
  DynamicSpec dyn{cfg.at("dyn_in").get<int>(), cfg.at("dyn_hidden").get<int>(),
                  cfg.at("dyn_out").get<int>(), 1, false};
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  const int n_meta = cfg.at("n_meta").get<int>();
  const int bins = cfg.at("bins").get<int>();

  HyperNet paper_net("audit", pc, dyn);
  HyperNet default_net("audit", pc, dyn);
  InitScheme paper;
  InitScheme framework;
  framework.framework_default = true;
  init_hypernet(paper_net, paper, seed);
  init_hypernet(default_net, framework, seed + 1);

  auto paper_samples = sample_dynamic_weights(paper_net, n_meta, seed + 2);
  auto default_samples = sample_dynamic_weights(default_net, n_meta, seed + 2);

  // Head draws must respect the stated intervals.
  bool within = true;
  for (const HyperNet::Head& h : paper_net.heads()) {
    const double range = paper.head_range(h.range);
    for (double v : paper_net.params().at(h.w).value) {
      within = within && v >= -range && v <= range;
    }
  }

  auto stddev = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return std::sqrt(var / static_cast<double>(v.size()));
  };

  CsvWriter w({"group", "paper_std", "default_std", "tv_distance", "heads_within_interval"});
  for (const auto& [group, sample] : paper_samples) {
    const auto& other = default_samples.at(group);
    w.row_cells({group, fmt_g17(stddev(sample)), fmt_g17(stddev(other)),
                 fmt_g17(weight_tv_distance(sample, other, bins)), within ? "1" : "0"});
  }
  w.save(paths.metrics);
}

}  // namespace hyperql
