#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hyperql/nn.hpp"
#include "hyperql/params.hpp"
#include "hyperql/rng.hpp"
#include "hyperql/tensor.hpp"

namespace hyperql {

// Shape of the weight-receiving network. One ReLU hidden layer by default;
// hidden_layers = 0 degenerates to a single gain-modulated linear map.
struct DynamicSpec {
  int in_dim = 1;
  int hidden_dim = 256;
  int out_dim = 1;
  int hidden_layers = 1;  // 0 or 1
  bool dist_head = false;  // extra per-output log-std group generated by the primary

  int first_w() const { return in_dim * (hidden_layers ? hidden_dim : out_dim); }
  int first_n() const { return hidden_layers ? hidden_dim : out_dim; }

  int param_count() const {
    int n = first_w() + 2 * first_n();
    if (hidden_layers) n += hidden_dim * out_dim + 2 * out_dim;
    if (dist_head) n += out_dim;
    return n;
  }
};

struct PrimaryConfig {
  int meta_dim = 1;
  std::vector<int> widths{64, 128, 256};  // three up-scaling stages

  static std::vector<int> full_scale() { return {256, 512, 1024}; }
};

// Weight groups produced by the primary heads, as graph tensors. Each group
// is [B x group_size] with one row per meta input.
struct DynTensors {
  Tensor w1, b1, g1;
  Tensor w2, b2, g2;       // absent when hidden_layers == 0
  std::optional<Tensor> log_std;
  bool has_hidden = true;
};

// Same groups as plain values for a single meta input.
struct DynValues {
  DynamicSpec spec;
  std::vector<double> w1, b1, g1;
  std::vector<double> w2, b2, g2;
  std::vector<double> log_std;
};

// Primary network: three up-scaling stages, each a linear width increase
// followed by two pre-activation residual blocks (ReLU-linear-ReLU-linear
// with identity skip), then one linear head per dynamic parameter group.
class HyperNet {
 public:
  HyperNet() = default;
  HyperNet(const std::string& prefix, PrimaryConfig cfg, DynamicSpec dyn)
      : cfg_(std::move(cfg)), dyn_(dyn) {
    int prev = cfg_.meta_dim;
    for (size_t s = 0; s < cfg_.widths.size(); ++s) {
      const int w = cfg_.widths[s];
      const std::string sp = prefix + ".s" + std::to_string(s);
      up_w_.push_back(params_.add(sp + ".up.W", prev, w));
      up_b_.push_back(params_.add(sp + ".up.b", 1, w));
      for (int r = 0; r < 2; ++r) {
        const std::string rp = sp + ".res" + std::to_string(r);
        res_w_.push_back(params_.add(rp + ".W0", w, w));
        res_b_.push_back(params_.add(rp + ".b0", 1, w));
        res_w_.push_back(params_.add(rp + ".W1", w, w));
        res_b_.push_back(params_.add(rp + ".b1", 1, w));
      }
      prev = w;
    }
    latent_dim_ = prev;

    add_head(prefix, "w1", dyn_.first_w(), RangeClass::kFirstLayer);
    add_head(prefix, "b1", dyn_.first_n(), RangeClass::kFirstLayer);
    add_head(prefix, "g1", dyn_.first_n(), RangeClass::kFirstLayer);
    if (dyn_.hidden_layers) {
      add_head(prefix, "w2", dyn_.hidden_dim * dyn_.out_dim, RangeClass::kSecondLayer);
      add_head(prefix, "b2", dyn_.out_dim, RangeClass::kSecondLayer);
      add_head(prefix, "g2", dyn_.out_dim, RangeClass::kSecondLayer);
    }
    if (dyn_.dist_head) add_head(prefix, "log_std", dyn_.out_dim, RangeClass::kDistribution);
  }

  enum class RangeClass { kFirstLayer, kSecondLayer, kDistribution };

  struct Head {
    std::string name;
    int size = 0;
    RangeClass range = RangeClass::kFirstLayer;
    int w = -1;  // param indexes
    int b = -1;
  };

  const PrimaryConfig& config() const { return cfg_; }
  const DynamicSpec& dynamic_spec() const { return dyn_; }
  int latent_dim() const { return latent_dim_; }
  const std::vector<Head>& heads() const { return heads_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // z: [B x meta] -> latent [B x widths.back()].
  Tensor latent(Graph& g, const Bound& bp, Tensor z) const {
    Tensor h = z;
    int res = 0;
    for (size_t s = 0; s < cfg_.widths.size(); ++s) {
      h = g.add_rowvec(g.matmul(h, bp[up_w_[s]]), bp[up_b_[s]]);
      for (int r = 0; r < 2; ++r) {
        Tensor y = g.relu(h);
        y = g.add_rowvec(g.matmul(y, bp[res_w_[res]]), bp[res_b_[res]]);
        y = g.relu(y);
        y = g.add_rowvec(g.matmul(y, bp[res_w_[res + 1]]), bp[res_b_[res + 1]]);
        h = g.add(h, y);
        res += 2;
      }
    }
    return h;
  }

  // z: [B x meta] -> per-row dynamic weight groups.
  DynTensors forward(Graph& g, const Bound& bp, Tensor z) const {
    Tensor lat = latent(g, bp, z);
    auto head_out = [&](int i) {
      const Head& hd = heads_[static_cast<size_t>(i)];
      return g.add_rowvec(g.matmul(lat, bp[hd.w]), bp[hd.b]);
    };
    DynTensors out;
    out.has_hidden = dyn_.hidden_layers > 0;
    out.w1 = head_out(0);
    out.b1 = head_out(1);
    out.g1 = head_out(2);
    int next = 3;
    if (out.has_hidden) {
      out.w2 = head_out(next++);
      out.b2 = head_out(next++);
      out.g2 = head_out(next++);
    }
    if (dyn_.dist_head) out.log_std = head_out(next);
    return out;
  }

  // Plain values for one meta input; no gradient bookkeeping.
  DynValues values(std::span<const double> z) const {
    Graph g;
    Bound bp = bind(g, params_, false);
    DynTensors t = forward(g, bp, g.leaf(1, cfg_.meta_dim, z));
    DynValues v;
    v.spec = dyn_;
    auto take = [](Tensor t) { return std::vector<double>(t.val().begin(), t.val().end()); };
    v.w1 = take(t.w1);
    v.b1 = take(t.b1);
    v.g1 = take(t.g1);
    if (t.has_hidden) {
      v.w2 = take(t.w2);
      v.b2 = take(t.b2);
      v.g2 = take(t.g2);
    }
    if (t.log_std) v.log_std = take(*t.log_std);
    return v;
  }

 private:
  void add_head(const std::string& prefix, const std::string& name, int size, RangeClass range) {
    Head h;
    h.name = name;
    h.size = size;
    h.range = range;
    h.w = params_.add(prefix + ".head." + name + ".W", latent_dim_, size);
    h.b = params_.add(prefix + ".head." + name + ".b", 1, size);
    heads_.push_back(h);
  }

  PrimaryConfig cfg_;
  DynamicSpec dyn_;
  int latent_dim_ = 0;
  std::vector<int> up_w_, up_b_;
  std::vector<int> res_w_, res_b_;
  std::vector<Head> heads_;
  ParamStore params_;
};

// One dynamic layer: sigma((1 + g) * (x W) + b), activation on hidden only.
// Per-row variant: every batch row carries its own weights.
inline Tensor dynamic_apply_rows(Graph& g, const DynamicSpec& spec, const DynTensors& w, Tensor x) {
  Tensor h = g.bvecmat(x, w.w1, spec.in_dim, spec.first_n());
  h = g.add(g.mul(g.affine(w.g1, 1.0, 1.0), h), w.b1);
  if (!spec.hidden_layers) return h;
  h = g.relu(h);
  Tensor out = g.bvecmat(h, w.w2, spec.hidden_dim, spec.out_dim);
  return g.add(g.mul(g.affine(w.g2, 1.0, 1.0), out), w.b2);
}

// Shared variant: one weight set (row tensors from a single meta input)
// applied to a whole batch of base inputs.
inline Tensor dynamic_apply_shared(Graph& g, const DynamicSpec& spec, const DynTensors& w,
                                   Tensor x) {
  Tensor w1 = g.reshape(w.w1, spec.in_dim, spec.first_n());
  Tensor h = g.mul_rowvec(g.matmul(x, w1), g.affine(w.g1, 1.0, 1.0));
  h = g.add_rowvec(h, w.b1);
  if (!spec.hidden_layers) return h;
  h = g.relu(h);
  Tensor w2 = g.reshape(w.w2, spec.hidden_dim, spec.out_dim);
  Tensor out = g.mul_rowvec(g.matmul(h, w2), g.affine(w.g2, 1.0, 1.0));
  return g.add_rowvec(out, w.b2);
}

// Reference single-sample evaluation with plain loops.
inline std::vector<double> dynamic_forward(const DynValues& v, std::span<const double> x) {
  const DynamicSpec& s = v.spec;
  const int n1 = s.first_n();
  std::vector<double> h(static_cast<size_t>(n1), 0.0);
  for (int j = 0; j < n1; ++j) {
    double acc = 0.0;
    for (int i = 0; i < s.in_dim; ++i) acc += x[static_cast<size_t>(i)] * v.w1[static_cast<size_t>(i) * n1 + j];
    h[static_cast<size_t>(j)] = (1.0 + v.g1[static_cast<size_t>(j)]) * acc + v.b1[static_cast<size_t>(j)];
  }
  if (!s.hidden_layers) return h;
  for (double& e : h) e = e > 0.0 ? e : 0.0;
  std::vector<double> out(static_cast<size_t>(s.out_dim), 0.0);
  for (int j = 0; j < s.out_dim; ++j) {
    double acc = 0.0;
    for (int i = 0; i < s.hidden_dim; ++i) acc += h[static_cast<size_t>(i)] * v.w2[static_cast<size_t>(i) * s.out_dim + j];
    out[static_cast<size_t>(j)] = (1.0 + v.g2[static_cast<size_t>(j)]) * acc + v.b2[static_cast<size_t>(j)];
  }
  return out;
}

// Initialization scheme. Paper values: residual blocks fan-in Kaiming
// uniform with gain 1/sqrt(12); fixed uniform head weight ranges per dynamic
// layer; head biases zero. framework_default switches every layer to the
// usual U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
struct InitScheme {
  double block_gain = 1.0 / std::sqrt(12.0);
  double first_layer_range = 0.05;
  double second_layer_range = 0.008;
  double dist_head_range = 0.001;
  bool framework_default = false;

  double head_range(HyperNet::RangeClass rc) const {
    switch (rc) {
      case HyperNet::RangeClass::kFirstLayer:
        return first_layer_range;
      case HyperNet::RangeClass::kSecondLayer:
        return second_layer_range;
      case HyperNet::RangeClass::kDistribution:
        return dist_head_range;
    }
    return first_layer_range;
  }
};

inline void init_hypernet(HyperNet& net, const InitScheme& scheme, std::uint64_t seed) {
  RngStream rng(seed, 0xA11D);
  ParamStore& ps = net.params();

  std::map<int, std::pair<const HyperNet::Head*, bool>> head_of;  // index -> (head, is_bias)
  for (const HyperNet::Head& h : net.heads()) {
    head_of[h.w] = {&h, false};
    head_of[h.b] = {&h, true};
  }

  for (int i = 0; i < ps.count(); ++i) {
    Param& p = ps.at(i);
    // Bias names end in a ".b*" segment; a [1 x w] weight (scalar meta input)
    // must not be mistaken for one.
    const std::string tail = p.name.substr(p.name.rfind('.') + 1);
    const bool is_bias = !tail.empty() && tail[0] == 'b';
    // Declaration order pairs each bias with the weight right before it.
    const int fan_in = is_bias ? ps.at(i - 1).rows : p.rows;
    auto it = head_of.find(i);
    if (scheme.framework_default) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& v : p.value) v = rng.uniform(-bound, bound);
    } else if (it != head_of.end()) {
      if (it->second.second) {
        std::fill(p.value.begin(), p.value.end(), 0.0);
      } else {
        const double r = scheme.head_range(it->second.first->range);
        for (double& v : p.value) v = rng.uniform(-r, r);
      }
    } else if (is_bias) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& v : p.value) v = rng.uniform(-bound, bound);
    } else {
      fill_kaiming_uniform(p.value, p.rows, scheme.block_gain, rng);
    }
  }
}

// Closed-form parameter counts, kept separate from the builder so tests can
// cross-check construction arithmetic.
inline long primary_block_param_count(const PrimaryConfig& cfg) {
  long n = 0;
  long prev = cfg.meta_dim;
  for (int w : cfg.widths) {
    n += prev * w + w;                    // up-scale
    n += 2L * (2L * (static_cast<long>(w) * w + w));  // two residual blocks
    prev = w;
  }
  return n;
}

inline long primary_head_param_count(const PrimaryConfig& cfg, const DynamicSpec& dyn) {
  const long latent = cfg.widths.back();
  long n = 0;
  auto head = [&](int size) { n += latent * size + size; };
  head(dyn.first_w());
  head(dyn.first_n());
  head(dyn.first_n());
  if (dyn.hidden_layers) {
    head(dyn.hidden_dim * dyn.out_dim);
    head(dyn.out_dim);
    head(dyn.out_dim);
  }
  if (dyn.dist_head) head(dyn.out_dim);
  return n;
}

// Total-variation distance between two samples over shared histogram bins
// spanning the pooled range.
inline double weight_tv_distance(std::span<const double> a, std::span<const double> b, int bins) {
  if (a.empty() || b.empty()) throw ContractError("weight_tv_distance: empty sample");
  double lo = a[0], hi = a[0];
  for (double v : a) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : b) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) return 0.0;  // all mass in one degenerate bin
  std::vector<long> ca(static_cast<size_t>(bins), 0), cb(static_cast<size_t>(bins), 0);
  auto bin_of = [&](double v) {
    int k = static_cast<int>((v - lo) / (hi - lo) * bins);
    return std::min(std::max(k, 0), bins - 1);
  };
  for (double v : a) ++ca[static_cast<size_t>(bin_of(v))];
  for (double v : b) ++cb[static_cast<size_t>(bin_of(v))];
  // Integer cross-multiplied form keeps the 0 and 1 endpoints exact.
  const long na = static_cast<long>(a.size()), nb = static_cast<long>(b.size());
  long acc = 0;
  for (int k = 0; k < bins; ++k) {
    acc += std::llabs(ca[static_cast<size_t>(k)] * nb - cb[static_cast<size_t>(k)] * na);
  }
  return 0.5 * static_cast<double>(acc) / (static_cast<double>(na) * static_cast<double>(nb));
}

// Pooled per-group samples of generated dynamic weights over standard normal
// meta draws; the raw material of the initialization audit.
inline std::map<std::string, std::vector<double>> sample_dynamic_weights(const HyperNet& net,
                                                                         int n_meta,
                                                                         std::uint64_t seed) {
  std::map<std::string, std::vector<double>> out;
  RngStream rng(seed, 0xD1A6);
  std::vector<double> z(static_cast<size_t>(net.config().meta_dim));
  for (int i = 0; i < n_meta; ++i) {
    for (double& v : z) v = rng.normal();
    DynValues vals = net.values(z);
    auto append = [&](const std::string& name, const std::vector<double>& v) {
      auto& dst = out[name];
      dst.insert(dst.end(), v.begin(), v.end());
    };
    append("w1", vals.w1);
    append("b1", vals.b1);
    append("g1", vals.g1);
    if (vals.spec.hidden_layers) {
      append("w2", vals.w2);
      append("b2", vals.b2);
      append("g2", vals.g2);
    }
    if (vals.spec.dist_head) append("log_std", vals.log_std);
  }
  return out;
}

}  // namespace hyperql
