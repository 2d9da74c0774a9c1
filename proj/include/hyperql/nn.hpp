#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hyperql/params.hpp"
#include "hyperql/rng.hpp"
#include "hyperql/tensor.hpp"

namespace hyperql {

enum class Act { kRelu, kTanh, kNone };

// Plain fully connected stack: linear layers with an activation on every
// hidden layer and a linear output. Covers the standard/small/large MLP
// baselines as well as the bare linear model (no hidden layer).
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& prefix, std::vector<int> dims, Act hidden_act = Act::kRelu)
      : dims_(std::move(dims)), act_(hidden_act) {
    for (size_t l = 0; l + 1 < dims_.size(); ++l) {
      w_.push_back(params_.add(prefix + ".W" + std::to_string(l), dims_[l], dims_[l + 1]));
      b_.push_back(params_.add(prefix + ".b" + std::to_string(l), 1, dims_[l + 1]));
    }
  }

  const std::vector<int>& dims() const { return dims_; }
  int in_dim() const { return dims_.front(); }
  int out_dim() const { return dims_.back(); }
  int layer_count() const { return static_cast<int>(w_.size()); }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // x: [B x in] -> [B x out].
  Tensor forward(Graph& g, const Bound& b, Tensor x) const {
    Tensor h = x;
    for (size_t l = 0; l < w_.size(); ++l) {
      h = g.add_rowvec(g.matmul(h, b[w_[l]]), b[b_[l]]);
      if (l + 1 < w_.size()) h = activate(g, h);
    }
    return h;
  }

  // Convenience: bind + forward + read values (no gradient bookkeeping).
  std::vector<double> eval(std::span<const double> x) const {
    Graph g;
    Bound bp = bind(g, params_, false);
    Tensor out = forward(g, bp, g.leaf(1, in_dim(), x));
    return {out.val().begin(), out.val().end()};
  }

  int weight_index(int layer) const { return w_[static_cast<size_t>(layer)]; }
  int bias_index(int layer) const { return b_[static_cast<size_t>(layer)]; }

 private:
  Tensor activate(Graph& g, Tensor h) const {
    switch (act_) {
      case Act::kRelu:
        return g.relu(h);
      case Act::kTanh:
        return g.tanh(h);
      case Act::kNone:
        return h;
    }
    return h;
  }

  std::vector<int> dims_;
  Act act_ = Act::kRelu;
  std::vector<int> w_, b_;
  ParamStore params_;
};

// Baseline families used throughout: hidden sizes per model class.
inline std::vector<int> mlp_standard_dims(int in, int out, int width = 256) {
  return {in, width, width, out};
}
inline std::vector<int> mlp_small_dims(int in, int out, int width = 256) {
  return {in, width, out};
}
inline std::vector<int> mlp_large_dims(int in, int out, int width = 2900) {
  return {in, width, width, out};
}
inline std::vector<int> linear_dims(int in, int out) { return {in, out}; }

// Uniform fan-in init: bound = gain * sqrt(3 / fan_in).
inline void fill_kaiming_uniform(std::vector<double>& w, int fan_in, double gain, RngStream& rng) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  for (double& v : w) v = rng.uniform(-bound, bound);
}

// Framework-default linear init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for both
// weights and biases.
inline void init_mlp_default(Mlp& net, RngStream& rng) {
  for (int l = 0; l < net.layer_count(); ++l) {
    Param& w = net.params().at(net.weight_index(l));
    Param& b = net.params().at(net.bias_index(l));
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.rows));
    for (double& v : w.value) v = rng.uniform(-bound, bound);
    for (double& v : b.value) v = rng.uniform(-bound, bound);
  }
}

}  // namespace hyperql
