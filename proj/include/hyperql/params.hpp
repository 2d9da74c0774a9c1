#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperql/tensor.hpp"

namespace hyperql {

struct Param {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<double> value;

  int size() const { return rows * cols; }
};

// Ordered, named parameter collection. Declaration order is the layout used
// for flattening, optimizer state and checkpoints.
class ParamStore {
 public:
  int add(std::string name, int rows, int cols, double fill = 0.0) {
    params_.push_back(Param{std::move(name), rows, cols,
                            std::vector<double>(static_cast<size_t>(rows) * cols, fill)});
    return static_cast<int>(params_.size()) - 1;
  }

  int count() const { return static_cast<int>(params_.size()); }
  Param& at(int i) { return params_[static_cast<size_t>(i)]; }
  const Param& at(int i) const { return params_[static_cast<size_t>(i)]; }

  Param* find(const std::string& name) {
    for (Param& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
  const Param* find(const std::string& name) const {
    return const_cast<ParamStore*>(this)->find(name);
  }

  int total_size() const {
    int n = 0;
    for (const Param& p : params_) n += p.size();
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(total_size()));
    for (const Param& p : params_) out.insert(out.end(), p.value.begin(), p.value.end());
    return out;
  }

  void unflatten(std::span<const double> flat) {
    if (static_cast<int>(flat.size()) != total_size()) {
      throw ShapeError("unflatten: got " + std::to_string(flat.size()) + " values, store holds " +
                       std::to_string(total_size()));
    }
    size_t off = 0;
    for (Param& p : params_) {
      std::copy(flat.begin() + off, flat.begin() + off + p.value.size(), p.value.begin());
      off += p.value.size();
    }
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Param> params_;
};

// Leaf tensors for one forward trace, aligned with ParamStore order.
struct Bound {
  std::vector<Tensor> leaves;

  Tensor operator[](int i) const { return leaves[static_cast<size_t>(i)]; }
};

inline Bound bind(Graph& g, const ParamStore& store, bool requires_grad) {
  Bound b;
  b.leaves.reserve(static_cast<size_t>(store.count()));
  for (int i = 0; i < store.count(); ++i) {
    const Param& p = store.at(i);
    b.leaves.push_back(g.leaf(p.rows, p.cols, p.value, requires_grad));
  }
  return b;
}

// Gradient of every parameter after a backward pass, flattened in store order.
inline std::vector<double> collect_grads(const Bound& b) {
  std::vector<double> out;
  for (const Tensor& t : b.leaves) {
    auto g = t.grad();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

}  // namespace hyperql
