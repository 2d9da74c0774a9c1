#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperql/hypernet.hpp"
#include "hyperql/nn.hpp"
#include "hyperql/params.hpp"

namespace hyperql {

enum class CriticKind { kLinear, kMlpConcat, kAsHyper, kSaHyper };

inline const char* critic_kind_name(CriticKind k) {
  switch (k) {
    case CriticKind::kLinear:
      return "linear";
    case CriticKind::kMlpConcat:
      return "mlp-concat";
    case CriticKind::kAsHyper:
      return "as-hyper";
    case CriticKind::kSaHyper:
      return "sa-hyper";
  }
  return "?";
}

// Q(s, a) under four input compositions: a bare linear map on [s, a], an MLP
// on [s, a], and the two hypernetwork orders. State features are the raw
// state. The analysis path caches per-layer matrices and activation masks so
// the closed-form action gradient can be read off the last forward.
class Critic {
 public:
  static Critic linear(int n_s, int n_a) {
    Critic c;
    c.kind_ = CriticKind::kLinear;
    c.n_s_ = n_s;
    c.n_a_ = n_a;
    c.linear_params_.add("q.w", n_s + n_a, 1);
    return c;
  }

  static Critic mlp_concat(int n_s, int n_a, std::vector<int> hidden = {256, 256}) {
    Critic c;
    c.kind_ = CriticKind::kMlpConcat;
    c.n_s_ = n_s;
    c.n_a_ = n_a;
    std::vector<int> dims{n_s + n_a};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(1);
    c.mlp_ = std::make_shared<Mlp>("q", dims, Act::kRelu);
    return c;
  }

  static Critic sa_hyper(int n_s, int n_a, std::vector<int> widths = {64, 128, 256},
                         int dyn_hidden = 256) {
    Critic c;
    c.kind_ = CriticKind::kSaHyper;
    c.n_s_ = n_s;
    c.n_a_ = n_a;
    PrimaryConfig cfg;
    cfg.meta_dim = n_s;
    cfg.widths = std::move(widths);
    DynamicSpec dyn{n_a, dyn_hidden, 1, 1, false};
    c.hyper_ = std::make_shared<HyperNet>("q", cfg, dyn);
    return c;
  }

  static Critic as_hyper(int n_s, int n_a, std::vector<int> widths = {64, 128, 256},
                         int dyn_hidden = 256) {
    Critic c;
    c.kind_ = CriticKind::kAsHyper;
    c.n_s_ = n_s;
    c.n_a_ = n_a;
    PrimaryConfig cfg;
    cfg.meta_dim = n_a;
    cfg.widths = std::move(widths);
    DynamicSpec dyn{n_s, dyn_hidden, 1, 1, false};
    c.hyper_ = std::make_shared<HyperNet>("q", cfg, dyn);
    return c;
  }

  // Single-hidden-layer-free variant used for the constant-gradient analysis.
  static Critic sa_hyper_single_layer(int n_s, int n_a, std::vector<int> widths = {16, 24, 32}) {
    Critic c;
    c.kind_ = CriticKind::kSaHyper;
    c.n_s_ = n_s;
    c.n_a_ = n_a;
    PrimaryConfig cfg;
    cfg.meta_dim = n_s;
    cfg.widths = std::move(widths);
    DynamicSpec dyn{n_a, 0, 1, 0, false};
    c.hyper_ = std::make_shared<HyperNet>("q", cfg, dyn);
    return c;
  }

  CriticKind kind() const { return kind_; }
  int state_dim() const { return n_s_; }
  int action_dim() const { return n_a_; }
  bool is_hyper() const { return hyper_ != nullptr; }

  // Deep copy; copies share nothing (used for target networks).
  Critic clone() const {
    Critic c = *this;
    if (mlp_) c.mlp_ = std::make_shared<Mlp>(*mlp_);
    if (hyper_) c.hyper_ = std::make_shared<HyperNet>(*hyper_);
    return c;
  }

  ParamStore& params() {
    if (mlp_) return mlp_->params();
    if (hyper_) return hyper_->params();
    return linear_params_;
  }
  const ParamStore& params() const { return const_cast<Critic*>(this)->params(); }

  const HyperNet& hyper() const { return *hyper_; }

  void init(std::uint64_t seed) {
    if (mlp_) {
      RngStream rng(seed, 0x3117);
      init_mlp_default(*mlp_, rng);
    } else if (hyper_) {
      init_hypernet(*hyper_, InitScheme{}, seed);
    } else {
      RngStream rng(seed, 0x3117);
      const double bound = 1.0 / std::sqrt(static_cast<double>(n_s_ + n_a_));
      for (double& v : linear_params_.at(0).value) v = rng.uniform(-bound, bound);
    }
  }

  // Batched graph path; s and a are [B x n_s], [B x n_a] tensors in g.
  Tensor q_batch(Graph& g, const Bound& bp, Tensor s, Tensor a) const {
    switch (kind_) {
      case CriticKind::kLinear:
        return g.matmul(g.concat_cols(s, a), bp[0]);
      case CriticKind::kMlpConcat:
        return mlp_->forward(g, bp, g.concat_cols(s, a));
      case CriticKind::kSaHyper: {
        DynTensors w = hyper_->forward(g, bp, s);
        return dynamic_apply_rows(g, hyper_->dynamic_spec(), w, a);
      }
      case CriticKind::kAsHyper: {
        DynTensors w = hyper_->forward(g, bp, a);
        return dynamic_apply_rows(g, hyper_->dynamic_spec(), w, s);
      }
    }
    throw ContractError("q_batch: bad kind");
  }

  // Analysis path: plain linear algebra, fills the gradient cache.
  double q_value(const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    check_dims(s, a);
    cache_.valid = false;
    switch (kind_) {
      case CriticKind::kLinear: {
        const Param& w = linear_params_.at(0);
        double q = 0.0;
        for (int i = 0; i < n_s_; ++i) q += s[i] * w.value[static_cast<size_t>(i)];
        for (int i = 0; i < n_a_; ++i) q += a[i] * w.value[static_cast<size_t>(n_s_ + i)];
        return q;
      }
      case CriticKind::kMlpConcat:
        return mlp_value_and_cache(s, a);
      case CriticKind::kSaHyper:
        return sa_value_and_cache(s, a);
      case CriticKind::kAsHyper: {
        DynValues v = hyper_->values(std::span<const double>(a.data(), static_cast<size_t>(a.size())));
        return dynamic_forward(v, std::span<const double>(s.data(), static_cast<size_t>(s.size())))[0];
      }
    }
    throw ContractError("q_value: bad kind");
  }

  // Reverse-mode gradient of Q in the action, state held constant.
  Eigen::VectorXd action_grad_autodiff(const Eigen::VectorXd& s, const Eigen::VectorXd& a) const {
    check_dims(s, a);
    Graph g;
    Bound bp = bind(g, params(), false);
    Tensor ts = g.leaf(1, n_s_, std::span<const double>(s.data(), static_cast<size_t>(s.size())));
    Tensor ta = g.leaf(1, n_a_, std::span<const double>(a.data(), static_cast<size_t>(a.size())), true);
    Tensor q = q_batch(g, bp, ts, ta);
    g.backward(g.sum(q));
    Eigen::VectorXd grad(n_a_);
    for (int i = 0; i < n_a_; ++i) grad[i] = ta.grad()[static_cast<size_t>(i)];
    return grad;
  }

  // Layer-matrix product with the cached activation diagonals.
  Eigen::VectorXd action_grad_closed_form() const {
    if (kind_ != CriticKind::kMlpConcat && kind_ != CriticKind::kSaHyper) {
      throw ContractError(std::string("closed-form gradient unsupported for ") +
                          critic_kind_name(kind_));
    }
    if (!cache_.valid) throw ContractError("closed-form gradient: run q_value first");
    Eigen::MatrixXd acc = cache_.mats.back();
    for (int l = static_cast<int>(cache_.masks.size()) - 1; l >= 0; --l) {
      acc = cache_.masks[static_cast<size_t>(l)].asDiagonal() * acc;
      acc = cache_.mats[static_cast<size_t>(l)] * acc;
    }
    return acc.col(0);
  }

  // Numerical rank of the primary Jacobian d w(a) / d a for the AS order:
  // one reverse sweep per generated weight, then an SVD cut at 1e-10 of the
  // largest singular value.
  int as_hyper_jacobian_rank(const Eigen::VectorXd& a) const {
    if (kind_ != CriticKind::kAsHyper) {
      throw ContractError("jacobian rank: critic is not as-hyper");
    }
    Graph g;
    Bound bp = bind(g, params(), false);
    Tensor ta = g.leaf(1, n_a_, std::span<const double>(a.data(), static_cast<size_t>(a.size())), true);
    DynTensors w = hyper_->forward(g, bp, ta);
    Tensor all = g.concat_cols(g.concat_cols(w.w1, w.b1), w.g1);
    if (w.has_hidden) {
      all = g.concat_cols(g.concat_cols(g.concat_cols(all, w.w2), w.b2), w.g2);
    }
    const int n_w = all.cols();
    Eigen::MatrixXd jac(n_a_, n_w);
    std::vector<double> seed(static_cast<size_t>(n_w), 0.0);
    for (int j = 0; j < n_w; ++j) {
      g.zero_grad();
      seed[static_cast<size_t>(j)] = 1.0;
      g.backward_seeded(all, seed);
      seed[static_cast<size_t>(j)] = 0.0;
      for (int i = 0; i < n_a_; ++i) jac(i, j) = ta.grad()[static_cast<size_t>(i)];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv[0] <= 0.0) return 0;
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i) {
      if (sv[i] > 1e-10 * sv[0]) ++rank;
    }
    return rank;
  }

 private:
  struct GradCache {
    bool valid = false;
    std::vector<Eigen::MatrixXd> mats;
    std::vector<Eigen::VectorXd> masks;
  };

  void check_dims(const Eigen::VectorXd& s, const Eigen::VectorXd& a) const {
    if (s.size() != n_s_ || a.size() != n_a_) {
      throw ShapeError("critic: state/action dims " + detail::shape_str(static_cast<int>(s.size()), static_cast<int>(a.size())) +
                       ", expected " + detail::shape_str(n_s_, n_a_));
    }
  }

  // Row-major parameter block copied into an Eigen-owned matrix.
  static Eigen::MatrixXd to_matrix(const Param& p) {
    Eigen::MatrixXd m(p.rows, p.cols);
    for (int i = 0; i < p.rows; ++i) {
      for (int j = 0; j < p.cols; ++j) m(i, j) = p.value[static_cast<size_t>(i) * p.cols + j];
    }
    return m;
  }

  static Eigen::MatrixXd to_matrix(const std::vector<double>& v, int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) m(i, j) = v[static_cast<size_t>(i) * cols + j];
    }
    return m;
  }

  double mlp_value_and_cache(const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    Eigen::VectorXd x(n_s_ + n_a_);
    x << s, a;
    cache_.mats.clear();
    cache_.masks.clear();
    const ParamStore& ps = mlp_->params();
    for (int l = 0; l < mlp_->layer_count(); ++l) {
      const Param& w = ps.at(mlp_->weight_index(l));
      const Param& b = ps.at(mlp_->bias_index(l));
      const Eigen::MatrixXd wm = to_matrix(w);
      Eigen::VectorXd z = wm.transpose() * x;
      for (int j = 0; j < z.size(); ++j) z[j] += b.value[static_cast<size_t>(j)];
      if (l == 0) {
        cache_.mats.push_back(wm.bottomRows(n_a_));
      } else {
        cache_.mats.push_back(wm);
      }
      if (l + 1 < mlp_->layer_count()) {
        Eigen::VectorXd mask(z.size());
        for (int j = 0; j < z.size(); ++j) mask[j] = z[j] > 0.0 ? 1.0 : 0.0;
        cache_.masks.push_back(mask);
        x = z.cwiseMax(0.0);
      } else {
        x = z;
      }
    }
    cache_.valid = true;
    return x[0];
  }

  double sa_value_and_cache(const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    DynValues v = hyper_->values(std::span<const double>(s.data(), static_cast<size_t>(s.size())));
    const DynamicSpec& spec = v.spec;
    const int h = spec.first_n();
    const Eigen::MatrixXd w1 = to_matrix(v.w1, spec.in_dim, h);
    Eigen::VectorXd z1 = w1.transpose() * a;
    for (int j = 0; j < h; ++j) {
      z1[j] = (1.0 + v.g1[static_cast<size_t>(j)]) * z1[j] + v.b1[static_cast<size_t>(j)];
    }
    Eigen::MatrixXd e1 = w1;
    for (int j = 0; j < h; ++j) e1.col(j) *= (1.0 + v.g1[static_cast<size_t>(j)]);
    if (!spec.hidden_layers) {
      cache_.valid = true;
      cache_.mats = {e1};
      cache_.masks.clear();
      return z1[0];
    }
    Eigen::VectorXd mask(h);
    for (int j = 0; j < h; ++j) mask[j] = z1[j] > 0.0 ? 1.0 : 0.0;
    Eigen::VectorXd x1 = z1.cwiseMax(0.0);
    const Eigen::MatrixXd w2 = to_matrix(v.w2, spec.hidden_dim, spec.out_dim);
    Eigen::VectorXd z2 = w2.transpose() * x1;
    for (int j = 0; j < spec.out_dim; ++j) {
      z2[j] = (1.0 + v.g2[static_cast<size_t>(j)]) * z2[j] + v.b2[static_cast<size_t>(j)];
    }
    Eigen::MatrixXd e2 = w2;
    for (int j = 0; j < spec.out_dim; ++j) e2.col(j) *= (1.0 + v.g2[static_cast<size_t>(j)]);
    cache_.valid = true;
    cache_.mats = {e1, e2};
    cache_.masks = {mask};
    return z2[0];
  }

  CriticKind kind_ = CriticKind::kLinear;
  int n_s_ = 0;
  int n_a_ = 0;
  ParamStore linear_params_;
  std::shared_ptr<Mlp> mlp_;
  std::shared_ptr<HyperNet> hyper_;
  GradCache cache_;
};

}  // namespace hyperql
