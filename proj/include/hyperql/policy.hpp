#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "hyperql/nn.hpp"
#include "hyperql/params.hpp"
#include "hyperql/rng.hpp"

namespace hyperql {

// Deterministic policy a = scale * tanh(net(s)).
struct TanhPolicy {
  Mlp net;
  double scale = 1.0;

  TanhPolicy() = default;
  TanhPolicy(const std::string& prefix, int n_s, int n_a, const std::vector<int>& hidden,
             double scale_in = 1.0)
      : scale(scale_in) {
    std::vector<int> dims{n_s};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(n_a);
    net = Mlp(prefix, dims, Act::kRelu);
  }

  int action_dim() const { return net.out_dim(); }
  ParamStore& params() { return net.params(); }
  const ParamStore& params() const { return net.params(); }

  Tensor forward(Graph& g, const Bound& bp, Tensor s) const {
    return g.scale(g.tanh(net.forward(g, bp, s)), scale);
  }

  Eigen::VectorXd act(const Eigen::VectorXd& s) const {
    auto raw = net.eval(std::span<const double>(s.data(), static_cast<size_t>(s.size())));
    Eigen::VectorXd a(net.out_dim());
    for (int i = 0; i < a.size(); ++i) a[i] = scale * std::tanh(raw[static_cast<size_t>(i)]);
    return a;
  }
};

// Reparameterized tanh-squashed Gaussian: the network emits mean and a raw
// spread per action dimension; log-std is squashed into [min, max] smoothly.
struct GaussPolicy {
  Mlp net;  // outputs [mean, raw_std] of width 2 * n_a
  double scale = 1.0;
  double log_std_min = -5.0;
  double log_std_max = 2.0;

  GaussPolicy() = default;
  GaussPolicy(const std::string& prefix, int n_s, int n_a, const std::vector<int>& hidden,
              double scale_in = 1.0)
      : scale(scale_in), n_a_(n_a) {
    std::vector<int> dims{n_s};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(2 * n_a);
    net = Mlp(prefix, dims, Act::kRelu);
  }

  int action_dim() const { return n_a_; }
  ParamStore& params() { return net.params(); }
  const ParamStore& params() const { return net.params(); }

  struct Sampled {
    Tensor action;    // [B x n_a]
    Tensor log_prob;  // [B x 1]
  };

  // Reparameterized sample for a fixed noise draw eps (row-major B x n_a).
  Sampled sample(Graph& g, const Bound& bp, Tensor s, const Eigen::MatrixXd& eps) const {
    const int b = s.rows();
    Tensor out = net.forward(g, bp, s);
    Tensor mean = g.slice_cols(out, 0, n_a_);
    Tensor log_std = squash_log_std(g, g.slice_cols(out, n_a_, n_a_));
    Tensor std = g.exp(log_std);

    std::vector<double> eps_flat(static_cast<size_t>(b) * n_a_);
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < n_a_; ++j) eps_flat[static_cast<size_t>(i) * n_a_ + j] = eps(i, j);
    }
    Tensor teps = g.leaf(b, n_a_, eps_flat);
    Tensor u = g.add(mean, g.mul(std, teps));
    Tensor th = g.tanh(u);
    Tensor action = g.scale(th, scale);

    // log N(u; mean, std) with the tanh change of variables.
    std::vector<double> gauss_const(static_cast<size_t>(b) * n_a_);
    for (size_t i = 0; i < gauss_const.size(); ++i) {
      const double e = eps_flat[i];
      gauss_const[i] = -0.5 * e * e - 0.5 * std::log(2.0 * M_PI);
    }
    Tensor terms = g.add(g.scale(log_std, -1.0), g.leaf(b, n_a_, gauss_const));
    Tensor jac = g.log(g.affine(g.affine(g.mul(th, th), -1.0, 1.0), scale, 1e-6));
    return Sampled{action, g.rowsum(g.sub(terms, jac))};
  }

  // Mean action (eps = 0), plain evaluation.
  Eigen::VectorXd act_mean(const Eigen::VectorXd& s) const {
    auto raw = net.eval(std::span<const double>(s.data(), static_cast<size_t>(s.size())));
    Eigen::VectorXd a(n_a_);
    for (int i = 0; i < n_a_; ++i) a[i] = scale * std::tanh(raw[static_cast<size_t>(i)]);
    return a;
  }

  Eigen::VectorXd act_sample(const Eigen::VectorXd& s, RngStream& rng) const {
    auto raw = net.eval(std::span<const double>(s.data(), static_cast<size_t>(s.size())));
    Eigen::VectorXd a(n_a_);
    for (int i = 0; i < n_a_; ++i) {
      const double mean = raw[static_cast<size_t>(i)];
      const double log_std = squash_log_std_value(raw[static_cast<size_t>(n_a_ + i)]);
      a[i] = scale * std::tanh(mean + std::exp(log_std) * rng.normal());
    }
    return a;
  }

  double squash_log_std_value(double raw) const {
    return log_std_min + 0.5 * (log_std_max - log_std_min) * (std::tanh(raw) + 1.0);
  }

 private:
  Tensor squash_log_std(Graph& g, Tensor raw) const {
    const double half = 0.5 * (log_std_max - log_std_min);
    return g.affine(g.tanh(raw), half, log_std_min + half);
  }

  int n_a_ = 0;
};

}  // namespace hyperql
