#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperql/io.hpp"
#include "hyperql/rng.hpp"

namespace hyperql {

class EnvDivergence : public std::runtime_error {
 public:
  explicit EnvDivergence(const std::string& what) : std::runtime_error(what) {}
};

class InstabilityError : public std::runtime_error {
 public:
  explicit InstabilityError(const std::string& what) : std::runtime_error(what) {}
};

class BufferError : public std::runtime_error {
 public:
  explicit BufferError(const std::string& what) : std::runtime_error(what) {}
};

struct Transition {
  Eigen::VectorXd s;
  Eigen::VectorXd a;
  double r = 0.0;
  Eigen::VectorXd s2;
  bool done = false;
};

using Trajectory = std::vector<Transition>;

inline double discounted_return(const Trajectory& traj, double gamma) {
  double acc = 0.0;
  double disc = 1.0;
  for (const Transition& t : traj) {
    acc += disc * t.r;
    disc *= gamma;
  }
  return acc;
}

inline double spectral_radius(const Eigen::MatrixXd& m) {
  return m.eigenvalues().cwiseAbs().maxCoeff();
}

// Linear dynamics s' = A s + B a (+ noise), reward -(s'Qc s + a'Rc a).
// Episodes end only by horizon; there are no absorbing states.
struct LqrEnv {
  Eigen::MatrixXd A, B, Qc, Rc;
  double gamma = 0.99;
  int horizon = 200;
  double noise_std = 0.0;
  double init_range = 1.0;  // s0 ~ U(-r, r)^n

  int state_dim() const { return static_cast<int>(A.rows()); }
  int action_dim() const { return static_cast<int>(B.cols()); }

  Eigen::VectorXd reset(RngStream& rng) const {
    Eigen::VectorXd s(state_dim());
    for (int i = 0; i < state_dim(); ++i) s[i] = rng.uniform(-init_range, init_range);
    return s;
  }

  double reward(const Eigen::VectorXd& s, const Eigen::VectorXd& a) const {
    return -(s.dot(Qc * s) + a.dot(Rc * a));
  }

  Eigen::VectorXd next_state(const Eigen::VectorXd& s, const Eigen::VectorXd& a,
                             RngStream* rng = nullptr) const {
    Eigen::VectorXd s2 = A * s + B * a;
    if (noise_std > 0.0 && rng) {
      for (int i = 0; i < s2.size(); ++i) s2[i] += rng->normal(0.0, noise_std);
    }
    return s2;
  }

  // n_s=4, n_a=2, A = I + 0.1 * (stable random perturbation, seed 7),
  // B = 0.1 * random, Qc = I, Rc = 0.1 I. The perturbation is a random
  // matrix shifted to be Hurwitz, so A contracts with a comfortable margin.
  static LqrEnv default_instance() {
    LqrEnv env;
    const int n = 4, m = 2;
    RngStream rng(7);
    Eigen::MatrixXd r(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) r(i, j) = rng.uniform(-1.0, 1.0);
    }
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
    double shift = r.eigenvalues().real().maxCoeff() + 1.0;
    env.A = eye + 0.1 * (r - shift * eye);
    for (int guard = 0; spectral_radius(env.A) > 0.97 && guard < 100; ++guard) {
      shift += 0.5;
      env.A = eye + 0.1 * (r - shift * eye);
    }
    env.B = Eigen::MatrixXd(n, m);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) env.B(i, j) = 0.1 * rng.uniform(-1.0, 1.0);
    }
    env.Qc = Eigen::MatrixXd::Identity(n, n);
    env.Rc = 0.1 * Eigen::MatrixXd::Identity(m, m);
    return env;
  }
};

// Policy evaluation for a linear gain a = K s: solves the discounted
// fixed point P = Qc + K'RcK + gamma (A+BK)' P (A+BK), then
// Q(s,a) = r(s,a) + gamma V(As+Ba) with V(x) = -x'Px.
struct LqrOracle {
  Eigen::MatrixXd K, P;
  const LqrEnv* env = nullptr;

  static LqrOracle solve(const LqrEnv& env, const Eigen::MatrixXd& K, double tol = 1e-12,
                         long max_iters = 1000000) {
    const Eigen::MatrixXd closed = env.A + env.B * K;
    const Eigen::MatrixXd cost = env.Qc + K.transpose() * env.Rc * K;
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(env.A.rows(), env.A.cols());
    for (long it = 0; it < max_iters; ++it) {
      Eigen::MatrixXd next = cost + env.gamma * closed.transpose() * P * closed;
      const double delta = (next - P).cwiseAbs().maxCoeff();
      P = next;
      if (delta <= tol) return LqrOracle{K, P, &env};
    }
    throw InstabilityError("lqr oracle: no fixed point after " + std::to_string(max_iters) +
                           " iterations (spectral radius " +
                           std::to_string(spectral_radius(closed)) + ")");
  }

  double v(const Eigen::VectorXd& s) const { return -s.dot(P * s); }

  double q(const Eigen::VectorXd& s, const Eigen::VectorXd& a) const {
    return env->reward(s, a) + env->gamma * v(env->A * s + env->B * a);
  }

  Eigen::VectorXd grad_a(const Eigen::VectorXd& s, const Eigen::VectorXd& a) const {
    return -2.0 * env->Rc * a -
           2.0 * env->gamma * env->B.transpose() * P * (env->A * s + env->B * a);
  }

  Eigen::VectorXd greedy_action(const Eigen::VectorXd& s) const {
    const Eigen::MatrixXd m = env->Rc + env->gamma * env->B.transpose() * P * env->B;
    return -m.ldlt().solve(env->gamma * env->B.transpose() * P * env->A * s);
  }
};

// Random linear gain with a stable closed loop, for oracle-based protocols.
inline Eigen::MatrixXd sample_stable_gain(const LqrEnv& env, RngStream& rng,
                                          double max_radius = 0.99, double scale = 0.3) {
  const int n = env.state_dim(), m = env.action_dim();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Eigen::MatrixXd K(m, n);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) K(i, j) = rng.uniform(-scale, scale);
    }
    if (spectral_radius(env.A + env.B * K) < max_radius) return K;
  }
  throw InstabilityError("sample_stable_gain: no stable gain found");
}

// Two point-mass task families: goal-on-unit-circle with distance reward,
// and signed forward/backward progress along the first axis. The context
// vector is the task's predefined identifier.
enum class TaskFamily { kVelocityGoal, kFwdBack };

struct PointMassTask {
  TaskFamily family = TaskFamily::kFwdBack;
  Eigen::Vector2d goal{1.0, 0.0};
  double sign = 1.0;

  Eigen::VectorXd context() const {
    if (family == TaskFamily::kVelocityGoal) return goal;
    Eigen::VectorXd c(1);
    c[0] = sign;
    return c;
  }

  static PointMassTask fwd_back(double sign) {
    PointMassTask t;
    t.family = TaskFamily::kFwdBack;
    t.sign = sign;
    return t;
  }

  static PointMassTask velocity(double angle) {
    PointMassTask t;
    t.family = TaskFamily::kVelocityGoal;
    t.goal = Eigen::Vector2d(std::cos(angle), std::sin(angle));
    return t;
  }
};

struct PointMassEnv {
  PointMassTask task;
  int horizon = 200;
  double dt = 0.1;
  double action_clip = 1.0;
  double init_range = 0.0;  // start at the origin by default
  double gamma = 0.95;

  int state_dim() const { return 2; }
  int action_dim() const { return 2; }

  Eigen::VectorXd reset(RngStream& rng) const {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(2);
    if (init_range > 0.0) {
      s[0] = rng.uniform(-init_range, init_range);
      s[1] = rng.uniform(-init_range, init_range);
    }
    return s;
  }

  Eigen::VectorXd clip_action(const Eigen::VectorXd& a) const {
    Eigen::VectorXd c = a;
    for (int i = 0; i < c.size(); ++i) c[i] = std::clamp(c[i], -action_clip, action_clip);
    return c;
  }

  Eigen::VectorXd next_state(const Eigen::VectorXd& s, const Eigen::VectorXd& a,
                             RngStream* = nullptr) const {
    return s + dt * clip_action(a);
  }

  double reward_to(const Eigen::VectorXd& s, const Eigen::VectorXd& s2) const {
    if (task.family == TaskFamily::kVelocityGoal) {
      return -(s2 - Eigen::VectorXd(task.goal)).norm();
    }
    return task.sign * (s2[0] - s[0]);
  }
};

// Deterministic rollout driver: the action function owns any policy noise,
// the env rng stream owns dynamics noise. Records done=false throughout
// (horizon termination is not an absorbing state).
template <typename Env, typename ActionFn>
Trajectory rollout(const Env& env, ActionFn&& act, int horizon, RngStream& env_rng,
                   const Eigen::VectorXd* start = nullptr) {
  Trajectory traj;
  traj.reserve(static_cast<size_t>(horizon));
  Eigen::VectorXd s = start ? *start : env.reset(env_rng);
  for (int t = 0; t < horizon; ++t) {
    Eigen::VectorXd a = act(s);
    Eigen::VectorXd s2 = env.next_state(s, a, &env_rng);
    double r;
    if constexpr (requires { env.reward(s, a); }) {
      r = env.reward(s, a);
    } else {
      r = env.reward_to(s, s2);
    }
    if (!s2.allFinite()) {
      throw EnvDivergence("rollout: state diverged at step " + std::to_string(t));
    }
    traj.push_back(Transition{s, a, r, s2, false});
    s = std::move(s2);
  }
  return traj;
}

// Uniform-with-replacement ring buffer.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity) : capacity_(capacity) { data_.reserve(static_cast<size_t>(capacity)); }

  void push(Transition t) {
    if (static_cast<int>(data_.size()) < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[static_cast<size_t>(write_)] = std::move(t);
    }
    write_ = (write_ + 1) % capacity_;
  }

  int size() const { return static_cast<int>(data_.size()); }
  const Transition& at(int i) const { return data_[static_cast<size_t>(i)]; }

  std::vector<const Transition*> sample(int batch, RngStream& rng) const {
    if (size() == 0) throw BufferError("sample from empty buffer");
    if (size() < batch) {
      throw BufferError("underfull buffer: size " + std::to_string(size()) + " < batch " +
                        std::to_string(batch));
    }
    std::vector<const Transition*> out(static_cast<size_t>(batch));
    for (int i = 0; i < batch; ++i) out[static_cast<size_t>(i)] = &data_[static_cast<size_t>(rng.uniform_int(size()))];
    return out;
  }

 private:
  int capacity_;
  int write_ = 0;
  std::vector<Transition> data_;
};

inline void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path) {
  if (traj.empty()) throw IoError("empty trajectory");
  std::vector<std::string> cols{"step"};
  for (int i = 0; i < traj[0].s.size(); ++i) cols.push_back("s" + std::to_string(i));
  for (int i = 0; i < traj[0].a.size(); ++i) cols.push_back("a" + std::to_string(i));
  cols.push_back("r");
  cols.push_back("done");
  CsvWriter w(cols);
  for (size_t t = 0; t < traj.size(); ++t) {
    std::vector<double> row{static_cast<double>(t)};
    for (int i = 0; i < traj[t].s.size(); ++i) row.push_back(traj[t].s[i]);
    for (int i = 0; i < traj[t].a.size(); ++i) row.push_back(traj[t].a[i]);
    row.push_back(traj[t].r);
    row.push_back(traj[t].done ? 1.0 : 0.0);
    w.row(row);
  }
  w.save(path);
}

}  // namespace hyperql
