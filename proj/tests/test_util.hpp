#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hyperql/tensor.hpp"

namespace hyperql::testing {

// Smallest |pre-activation| feeding any ReLU in the trace. Central
// differences are only a valid oracle when no kink sits inside the stencil,
// so FD-based tests resample until this margin clears the step size.
inline double relu_kink_margin(const hyperql::Graph& g) {
  double margin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < g.size(); ++i) {
    const auto& n = g.node(i);
    if (n.op != hyperql::Op::kRelu) continue;
    const auto& in = g.node(n.a);
    for (double v : in.val) margin = std::min(margin, std::abs(v));
  }
  return margin;
}

// Central-difference gradient of f at x. The test-side oracle for every
// autodiff check in this suite; it never touches the tape machinery.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f(x);
    x[i] = keep - h;
    const double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_err(double got, double want, double floor = 1e-12) {
  return std::abs(got - want) / (std::abs(want) + floor);
}

inline double max_rel_err(const std::vector<double>& got, const std::vector<double>& want,
                          double floor = 1e-12) {
  double m = 0.0;
  for (size_t i = 0; i < got.size(); ++i) m = std::max(m, rel_err(got[i], want[i], floor));
  return m;
}

// Count of coordinates violating both the relative and the absolute bar.
// Central differences carry ~1e-10 absolute noise at h = 1e-6, so a tiny
// true gradient cannot meet a purely relative tolerance.
inline int fd_violations(const std::vector<double>& got, const std::vector<double>& want,
                         double rel_tol = 1e-5, double abs_tol = 1e-9) {
  int bad = 0;
  for (size_t i = 0; i < got.size(); ++i) {
    const double abs_err = std::abs(got[i] - want[i]);
    if (abs_err > abs_tol && rel_err(got[i], want[i]) > rel_tol) ++bad;
  }
  return bad;
}

}  // namespace hyperql::testing
