#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "hyperql/params.hpp"

namespace hyperql {

// Adam with the usual bias correction, beta = (0.9, 0.999), eps 1e-8.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  // Ascent if lr supplied negative by caller; callers here always minimize.
  void step(ParamStore& store, std::span<const double> flat_grad) {
    const size_t n = static_cast<size_t>(store.total_size());
    if (flat_grad.size() != n) {
      throw ShapeError("adam: gradient size mismatch");
    }
    if (m_.size() != n) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
      t_ = 0;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    size_t off = 0;
    for (Param& p : store) {
      for (double& w : p.value) {
        const double g = flat_grad[off];
        m_[off] = beta1_ * m_[off] + (1.0 - beta1_) * g;
        v_[off] = beta2_ * v_[off] + (1.0 - beta2_) * g * g;
        const double mhat = m_[off] / bc1;
        const double vhat = v_[off] / bc2;
        w -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        ++off;
      }
    }
  }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace hyperql
