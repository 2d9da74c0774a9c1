#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <vector>

#include "hyperql/rng.hpp"

namespace hyperql {

class StationaryInstance : public std::runtime_error {
 public:
  explicit StationaryInstance(const std::string& what) : std::runtime_error(what) {}
};

inline double spectral_norm(const Eigen::MatrixXd& m) {
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues().maxCoeff();
}

// Quadratic bandit with a linear-Gaussian policy: Q(s,a) = -(a - Ts)'M(a - Ts)
// with M positive definite, actions a = Phi s + sigma * eps. All averaged
// quantities are exact: expectation over a frozen state set and Gaussian
// moments in closed form.
struct BanditInstance {
  Eigen::MatrixXd m;       // PD curvature
  Eigen::MatrixXd target;  // t(s) = target * s
  double sigma = 0.1;      // policy noise scale
  double cube = 1.0;       // state cube half-width
  std::vector<Eigen::VectorXd> dataset;

  int n_s() const { return static_cast<int>(target.cols()); }
  int n_a() const { return static_cast<int>(target.rows()); }

  double q(const Eigen::VectorXd& s, const Eigen::VectorXd& a) const {
    const Eigen::VectorXd d = a - target * s;
    return -d.dot(m * d);
  }

  Eigen::VectorXd grad_a(const Eigen::VectorXd& s, const Eigen::VectorXd& a) const {
    return -2.0 * m * (a - target * s);
  }

  Eigen::MatrixXd state_cov() const {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n_s(), n_s());
    for (const auto& s : dataset) cov.noalias() += s * s.transpose();
    return cov / static_cast<double>(dataset.size());
  }

  // Lipschitz constant of grad_a Q: exactly 2 ||M|| for a quadratic.
  double kappa_q() const { return 2.0 * spectral_norm(m); }
  // The linear policy's gradient map is constant in phi.
  double kappa_mu() const { return 0.0; }
  // sup ||grad_phi mu|| = sup ||s|| over the cube.
  double sigma_mu() const { return cube * std::sqrt(static_cast<double>(n_s())); }
  // sup ||grad_a Q|| over the cube and a 3-sigma noise ball.
  double sigma_q(const Eigen::MatrixXd& phi) const {
    const double reach = spectral_norm(phi - target) * sigma_mu() + 3.0 * sigma;
    return 2.0 * spectral_norm(m) * reach;
  }

  static BanditInstance random(int n_s, int n_a, int n_states, std::uint64_t seed) {
    RngStream rng(seed, 0xBA4D);
    BanditInstance inst;
    Eigen::MatrixXd r(n_a, n_a);
    for (int i = 0; i < n_a; ++i) {
      for (int j = 0; j < n_a; ++j) r(i, j) = rng.uniform(-1.0, 1.0);
    }
    inst.m = r * r.transpose() + 0.2 * Eigen::MatrixXd::Identity(n_a, n_a);
    inst.m *= 1.5 / spectral_norm(inst.m);  // fixed curvature scale
    inst.target = Eigen::MatrixXd(n_a, n_s);
    for (int i = 0; i < n_a; ++i) {
      for (int j = 0; j < n_s; ++j) inst.target(i, j) = rng.uniform(-0.5, 0.5);
    }
    inst.dataset.reserve(static_cast<size_t>(n_states));
    for (int k = 0; k < n_states; ++k) {
      Eigen::VectorXd s(n_s);
      for (int j = 0; j < n_s; ++j) s[j] = rng.uniform(-inst.cube, inst.cube);
      inst.dataset.push_back(s);
    }
    return inst;
  }

  // A gain with a nonzero averaged gradient, a fixed offset from the target.
  Eigen::MatrixXd perturbed_gain(std::uint64_t seed, double scale = 0.4) const {
    RngStream rng(seed, 0x6A1);
    Eigen::MatrixXd phi = target;
    for (int i = 0; i < n_a(); ++i) {
      for (int j = 0; j < n_s(); ++j) phi(i, j) += rng.uniform(-scale, scale);
    }
    return phi;
  }
};

using GradField = std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

// Average gradient operator in matrix form (n_a x n_s): the policy Jacobian
// of a = Phi s is the Kronecker lift of s, so averaging f against it is
// E[f(s, Phi s + sigma eps) s'].
inline Eigen::MatrixXd avg_policy_gradient_mc(const BanditInstance& inst,
                                              const Eigen::MatrixXd& phi, const GradField& f,
                                              long n_samples, std::uint64_t seed) {
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(inst.n_a(), inst.n_s());
  RngStream rng(seed, 0xAB6);
  for (long k = 0; k < n_samples; ++k) {
    const Eigen::VectorXd& s = inst.dataset[static_cast<size_t>(rng.uniform_int(
        static_cast<int>(inst.dataset.size())))];
    Eigen::VectorXd a = phi * s;
    for (int i = 0; i < a.size(); ++i) a[i] += inst.sigma * rng.normal();
    acc.noalias() += f(s, a) * s.transpose();
  }
  return acc / static_cast<double>(n_samples);
}

// Closed form of the same operator for the true gradient field:
// -2 M (Phi - T) Cov(s).
inline Eigen::MatrixXd avg_true_gradient(const BanditInstance& inst, const Eigen::MatrixXd& phi) {
  return -2.0 * inst.m * (phi - inst.target) * inst.state_cov();
}

// Learning-rate bounds for a relative gradient error alpha. The first form
// squares the combined constant, matching the quadratic term of the one-step
// expansion; the second applies the stated 1/k-tilde with
// k-tilde = (kappa_q sigma_mu + kappa_mu sigma_q) / 2.
struct EtaBounds {
  double derivation = 0.0;
  double stated = 0.0;
};

inline EtaBounds eta_bound(double alpha, double kappa_q, double kappa_mu, double sigma_q,
                           double sigma_mu) {
  if (alpha < 0.0 || alpha >= 1.0) {
    throw std::invalid_argument("eta_bound: alpha must lie in [0, 1)");
  }
  const double k = kappa_q * sigma_mu + kappa_mu * sigma_q;
  const double shape = (1.0 - alpha) / ((1.0 + alpha) * (1.0 + alpha));
  return EtaBounds{2.0 * shape / (k * k), 2.0 * shape / k};
}

// Gradient field g = grad_a Q + D s with the averaged error laid exactly
// along (+1) or against (-1) the averaged true gradient, scaled to a
// relative error of alpha.
struct CorruptedGradient {
  GradField field;
  Eigen::MatrixXd d;           // error generator: e(s, a) = D s
  Eigen::MatrixXd averaged;    // averaged corrupted gradient
  double realized_alpha = 0.0;
};

inline CorruptedGradient corrupt_gradient(const BanditInstance& inst, const Eigen::MatrixXd& phi,
                                          double alpha, double direction = 1.0) {
  const Eigen::MatrixXd g = avg_true_gradient(inst, phi);
  const double gnorm = g.norm();
  if (gnorm <= 1e-14) {
    throw StationaryInstance("corrupt_gradient: averaged true gradient is zero");
  }
  const Eigen::MatrixXd cov = inst.state_cov();
  const Eigen::MatrixXd dir = (direction >= 0.0 ? 1.0 : -1.0) * g / gnorm;
  // Solve D Cov = alpha ||G|| dir for D.
  Eigen::MatrixXd d = (alpha * gnorm) * cov.ldlt().solve(dir.transpose()).transpose();
  CorruptedGradient out;
  out.d = d;
  out.field = [inst, d](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    return Eigen::VectorXd(inst.grad_a(s, a) + d * s);
  };
  out.averaged = g + d * cov;
  out.realized_alpha = (out.averaged - g).norm() / gnorm;
  return out;
}

// Empirical advantage of one ascent step along an averaged gradient
// estimate, exact for the quadratic bandit.
inline double empirical_advantage(const BanditInstance& inst, const Eigen::MatrixXd& phi,
                                  const Eigen::MatrixXd& phi_next) {
  const Eigen::MatrixXd cov = inst.state_cov();
  const Eigen::MatrixXd d0 = phi - inst.target;
  const Eigen::MatrixXd d1 = phi_next - inst.target;
  return (d0.transpose() * inst.m * d0 * cov).trace() -
         (d1.transpose() * inst.m * d1 * cov).trace();
}

// Monte-Carlo cross-check of the same quantity.
inline double empirical_advantage_mc(const BanditInstance& inst, const Eigen::MatrixXd& phi,
                                     const Eigen::MatrixXd& phi_next, long n_samples,
                                     std::uint64_t seed) {
  RngStream rng(seed, 0xADC);
  double acc = 0.0;
  for (long k = 0; k < n_samples; ++k) {
    const Eigen::VectorXd& s = inst.dataset[static_cast<size_t>(rng.uniform_int(
        static_cast<int>(inst.dataset.size())))];
    Eigen::VectorXd eps(inst.n_a());
    for (int i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
    const Eigen::VectorXd a0 = phi * s + inst.sigma * eps;
    const Eigen::VectorXd a1 = phi_next * s + inst.sigma * eps;
    acc += inst.q(s, a1) - inst.q(s, a0);
  }
  return acc / static_cast<double>(n_samples);
}

struct StepResult {
  Eigen::MatrixXd phi_next;
  double advantage = 0.0;
  double realized_alpha = 0.0;
};

// One ascent step with an alpha-corrupted gradient at learning rate eta.
inline StepResult verify_step(const BanditInstance& inst, const Eigen::MatrixXd& phi, double alpha,
                              double eta, double direction = 1.0) {
  StepResult out;
  if (alpha == 0.0) {
    out.phi_next = phi + eta * avg_true_gradient(inst, phi);
    out.realized_alpha = 0.0;
  } else {
    CorruptedGradient c = corrupt_gradient(inst, phi, alpha, direction);
    out.phi_next = phi + eta * c.averaged;
    out.realized_alpha = c.realized_alpha;
  }
  out.advantage = empirical_advantage(inst, phi, out.phi_next);
  return out;
}

}  // namespace hyperql
