#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hyperql {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Node storage is kept at Eigen's preferred alignment so vectorized kernels
// take the same code path on every run; reduction order, and therefore the
// low bits of every result, stay reproducible.
using DVec = std::vector<double, Eigen::aligned_allocator<double>>;

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline std::string shape_str(int r, int c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}
}  // namespace detail

enum class Op : std::uint8_t {
  kLeaf,
  kMatmul,
  kTranspose,
  kBVecMat,  // per-row vector times per-row matrix
  kAdd,
  kSub,
  kAddRowVec,
  kMul,
  kMulRowVec,
  kRelu,
  kTanh,
  kExp,
  kLog,
  kAffine,  // c0 * x + c1
  kSum,
  kMean,
  kRowSum,
  kConcatCols,
  kSliceCols,
  kReshape,
};

class Graph;

// Handle into a Graph node. Cheap to copy; valid until the graph is cleared.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph* g, int id) : g_(g), id_(id) {}

  int id() const { return id_; }
  Graph* graph() const { return g_; }
  bool valid() const { return g_ != nullptr; }

  int rows() const;
  int cols() const;
  int size() const { return rows() * cols(); }
  std::span<const double> val() const;
  std::span<const double> grad() const;
  bool requires_grad() const;
  double scalar() const;

 private:
  Graph* g_ = nullptr;
  int id_ = -1;
};

// Define-by-run tape. Nodes are appended in creation order, which is also a
// valid topological order, so the backward sweep is a single reverse pass.
// clear() keeps node storage so a rebuilt trace with identical shapes does
// not allocate.
class Graph {
 public:
  struct Node {
    Op op = Op::kLeaf;
    int a = -1;
    int b = -1;
    int rows = 0;
    int cols = 0;
    double c0 = 0.0;
    double c1 = 0.0;
    int i0 = 0;
    int i1 = 0;
    bool needs_grad = false;
    DVec val;
    DVec grad;
  };

  int size() const { return static_cast<int>(live_); }

  void clear() { live_ = 0; }

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  Tensor leaf(int rows, int cols, std::span<const double> values, bool requires_grad = false) {
    if (static_cast<int>(values.size()) != rows * cols) {
      throw ShapeError("leaf: got " + std::to_string(values.size()) + " values for shape " +
                       detail::shape_str(rows, cols));
    }
    Node& n = fresh(Op::kLeaf, rows, cols, -1, -1, requires_grad);
    std::copy(values.begin(), values.end(), n.val.begin());
    return Tensor(this, static_cast<int>(live_) - 1);
  }

  Tensor zeros(int rows, int cols, bool requires_grad = false) {
    Node& n = fresh(Op::kLeaf, rows, cols, -1, -1, requires_grad);
    std::fill(n.val.begin(), n.val.end(), 0.0);
    return Tensor(this, static_cast<int>(live_) - 1);
  }

  Tensor matmul(Tensor a, Tensor b) {
    const Node& na = node(a.id());
    const Node& nb = node(b.id());
    if (na.cols != nb.rows) {
      throw ShapeError("matmul: inner dimensions differ, " + detail::shape_str(na.rows, na.cols) +
                       " vs " + detail::shape_str(nb.rows, nb.cols));
    }
    Node& n = fresh(Op::kMatmul, na.rows, nb.cols, a.id(), b.id(), na.needs_grad || nb.needs_grad);
    MatMap(n.val.data(), n.rows, n.cols).noalias() =
        cmap(a.id()) * cmap(b.id());
    return tail();
  }

  Tensor transpose(Tensor a) {
    const Node& na = node(a.id());
    Node& n = fresh(Op::kTranspose, na.cols, na.rows, a.id(), -1, na.needs_grad);
    MatMap(n.val.data(), n.rows, n.cols) = cmap(a.id()).transpose();
    return tail();
  }

  // Rows of x are length-k vectors; rows of w are k*n matrices (row-major).
  // Row i of the result is x_i * W_i, shape [rows x n].
  Tensor bvecmat(Tensor x, Tensor w, int k, int n) {
    const Node& nx = node(x.id());
    const Node& nw = node(w.id());
    if (nx.cols != k || nw.cols != k * n || nx.rows != nw.rows) {
      throw ShapeError("bvecmat: " + detail::shape_str(nx.rows, nx.cols) + " with " +
                       detail::shape_str(nw.rows, nw.cols) + " for k=" + std::to_string(k) +
                       " n=" + std::to_string(n));
    }
    Node& out = fresh(Op::kBVecMat, nx.rows, n, x.id(), w.id(), nx.needs_grad || nw.needs_grad);
    out.i0 = k;
    out.i1 = n;
    const double* xv = node(x.id()).val.data();
    const double* wv = node(w.id()).val.data();
    for (int i = 0; i < out.rows; ++i) {
      Eigen::Map<const Eigen::RowVectorXd> xi(xv + i * k, k);
      ConstMatMap wi(wv + i * k * n, k, n);
      Eigen::Map<Eigen::RowVectorXd>(out.val.data() + i * n, n).noalias() = xi * wi;
    }
    return tail();
  }

  Tensor add(Tensor a, Tensor b) { return binary_same(Op::kAdd, a, b); }
  Tensor sub(Tensor a, Tensor b) { return binary_same(Op::kSub, a, b); }
  Tensor mul(Tensor a, Tensor b) { return binary_same(Op::kMul, a, b); }

  Tensor add_rowvec(Tensor a, Tensor r) { return rowvec_op(Op::kAddRowVec, a, r); }
  Tensor mul_rowvec(Tensor a, Tensor r) { return rowvec_op(Op::kMulRowVec, a, r); }

  Tensor relu(Tensor a) { return unary(Op::kRelu, a); }
  Tensor tanh(Tensor a) { return unary(Op::kTanh, a); }
  Tensor exp(Tensor a) { return unary(Op::kExp, a); }
  Tensor log(Tensor a) { return unary(Op::kLog, a); }

  Tensor affine(Tensor a, double scale, double offset) {
    const Node& na = node(a.id());
    Node& n = fresh(Op::kAffine, na.rows, na.cols, a.id(), -1, na.needs_grad);
    n.c0 = scale;
    n.c1 = offset;
    const Node& in = node(a.id());
    for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = scale * in.val[i] + offset;
    return tail();
  }

  Tensor sum(Tensor a) {
    const Node& na = node(a.id());
    Node& n = fresh(Op::kSum, 1, 1, a.id(), -1, na.needs_grad);
    n.val[0] = cmap(a.id()).sum();
    return tail();
  }

  Tensor mean(Tensor a) {
    const Node& na = node(a.id());
    Node& n = fresh(Op::kMean, 1, 1, a.id(), -1, na.needs_grad);
    n.val[0] = cmap(a.id()).mean();
    return tail();
  }

  Tensor rowsum(Tensor a) {
    const Node& na = node(a.id());
    Node& n = fresh(Op::kRowSum, na.rows, 1, a.id(), -1, na.needs_grad);
    Eigen::Map<Eigen::VectorXd>(n.val.data(), n.rows) = cmap(a.id()).rowwise().sum();
    return tail();
  }

  Tensor concat_cols(Tensor a, Tensor b) {
    const Node& na = node(a.id());
    const Node& nb = node(b.id());
    if (na.rows != nb.rows) {
      throw ShapeError("concat_cols: row counts differ, " + detail::shape_str(na.rows, na.cols) +
                       " vs " + detail::shape_str(nb.rows, nb.cols));
    }
    Node& n = fresh(Op::kConcatCols, na.rows, na.cols + nb.cols, a.id(), b.id(),
                    na.needs_grad || nb.needs_grad);
    MatMap out(n.val.data(), n.rows, n.cols);
    out.leftCols(node(a.id()).cols) = cmap(a.id());
    out.rightCols(node(b.id()).cols) = cmap(b.id());
    return tail();
  }

  Tensor slice_cols(Tensor a, int from, int len) {
    const Node& na = node(a.id());
    if (from < 0 || len < 0 || from + len > na.cols) {
      throw ShapeError("slice_cols: [" + std::to_string(from) + "," + std::to_string(from + len) +
                       ") out of " + detail::shape_str(na.rows, na.cols));
    }
    Node& n = fresh(Op::kSliceCols, na.rows, len, a.id(), -1, na.needs_grad);
    n.i0 = from;
    n.i1 = len;
    MatMap(n.val.data(), n.rows, n.cols) = cmap(a.id()).middleCols(from, len);
    return tail();
  }

  // Same data, new shape; row-major layout is preserved.
  Tensor reshape(Tensor a, int rows, int cols) {
    const Node& na = node(a.id());
    if (rows * cols != na.rows * na.cols) {
      throw ShapeError("reshape: " + detail::shape_str(na.rows, na.cols) + " to " +
                       detail::shape_str(rows, cols));
    }
    Node& n = fresh(Op::kReshape, rows, cols, a.id(), -1, na.needs_grad);
    n.val = node(a.id()).val;
    return tail();
  }

  // Convenience wrappers.
  Tensor scale(Tensor a, double s) { return affine(a, s, 0.0); }
  Tensor square(Tensor a) { return mul(a, a); }

  // Reverse sweep from a scalar loss. Gradients accumulate; a repeated call
  // without clear() adds another full pass.
  void backward(Tensor loss) {
    const Node& n = node(loss.id());
    if (n.rows * n.cols != 1) {
      throw ContractError("backward: loss must be scalar, got " +
                          detail::shape_str(n.rows, n.cols));
    }
    zero_interior_grads();
    node(loss.id()).grad[0] += 1.0;
    sweep(loss.id());
  }

  // Reverse sweep seeding an arbitrary node with the given output gradient.
  void backward_seeded(Tensor t, std::span<const double> seed) {
    Node& n = node(t.id());
    if (static_cast<int>(seed.size()) != n.rows * n.cols) {
      throw ShapeError("backward_seeded: seed size " + std::to_string(seed.size()) +
                       " for node shape " + detail::shape_str(n.rows, n.cols));
    }
    zero_interior_grads();
    for (size_t i = 0; i < seed.size(); ++i) n.grad[i] += seed[i];
    sweep(t.id());
  }

  void zero_grad() {
    for (size_t i = 0; i < live_; ++i) {
      std::fill(nodes_[i].grad.begin(), nodes_[i].grad.end(), 0.0);
    }
  }

 private:
  std::vector<Node> nodes_;
  size_t live_ = 0;

  Tensor tail() { return Tensor(this, static_cast<int>(live_) - 1); }

  ConstMatMap cmap(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return ConstMatMap(n.val.data(), n.rows, n.cols);
  }
  MatMap gmap(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    return MatMap(n.grad.data(), n.rows, n.cols);
  }

  Node& fresh(Op op, int rows, int cols, int a, int b, bool needs_grad) {
    if (live_ == nodes_.size()) nodes_.emplace_back();
    Node& n = nodes_[live_++];
    n.op = op;
    n.a = a;
    n.b = b;
    n.rows = rows;
    n.cols = cols;
    n.c0 = n.c1 = 0.0;
    n.i0 = n.i1 = 0;
    n.needs_grad = needs_grad;
    const size_t len = static_cast<size_t>(rows) * static_cast<size_t>(cols);
    n.val.resize(len);
    n.grad.assign(len, 0.0);
    return n;
  }

  Tensor unary(Op op, Tensor a) {
    const Node& na = node(a.id());
    Node& n = fresh(op, na.rows, na.cols, a.id(), -1, na.needs_grad);
    const DVec& x = node(a.id()).val;
    switch (op) {
      case Op::kRelu:
        for (size_t i = 0; i < x.size(); ++i) n.val[i] = x[i] > 0.0 ? x[i] : 0.0;
        break;
      case Op::kTanh:
        for (size_t i = 0; i < x.size(); ++i) n.val[i] = std::tanh(x[i]);
        break;
      case Op::kExp:
        for (size_t i = 0; i < x.size(); ++i) n.val[i] = std::exp(x[i]);
        break;
      case Op::kLog:
        for (size_t i = 0; i < x.size(); ++i) n.val[i] = std::log(x[i]);
        break;
      default:
        throw ContractError("unary: bad op");
    }
    return tail();
  }

  Tensor binary_same(Op op, Tensor a, Tensor b) {
    const Node& na = node(a.id());
    const Node& nb = node(b.id());
    if (na.rows != nb.rows || na.cols != nb.cols) {
      throw ShapeError("elementwise: shapes differ, " + detail::shape_str(na.rows, na.cols) +
                       " vs " + detail::shape_str(nb.rows, nb.cols));
    }
    Node& n = fresh(op, na.rows, na.cols, a.id(), b.id(), na.needs_grad || nb.needs_grad);
    const DVec& x = node(a.id()).val;
    const DVec& y = node(b.id()).val;
    switch (op) {
      case Op::kAdd:
        for (size_t i = 0; i < x.size(); ++i) n.val[i] = x[i] + y[i];
        break;
      case Op::kSub:
        for (size_t i = 0; i < x.size(); ++i) n.val[i] = x[i] - y[i];
        break;
      case Op::kMul:
        for (size_t i = 0; i < x.size(); ++i) n.val[i] = x[i] * y[i];
        break;
      default:
        throw ContractError("binary: bad op");
    }
    return tail();
  }

  Tensor rowvec_op(Op op, Tensor a, Tensor r) {
    const Node& na = node(a.id());
    const Node& nr = node(r.id());
    if (nr.rows != 1 || nr.cols != na.cols) {
      throw ShapeError("rowvec op: " + detail::shape_str(na.rows, na.cols) + " with " +
                       detail::shape_str(nr.rows, nr.cols));
    }
    Node& n = fresh(op, na.rows, na.cols, a.id(), r.id(), na.needs_grad || nr.needs_grad);
    const DVec& x = node(a.id()).val;
    const DVec& v = node(r.id()).val;
    const int cols = n.cols;
    for (int i = 0; i < n.rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        const double xv = x[static_cast<size_t>(i) * cols + j];
        n.val[static_cast<size_t>(i) * cols + j] =
            op == Op::kAddRowVec ? xv + v[static_cast<size_t>(j)] : xv * v[static_cast<size_t>(j)];
      }
    }
    return tail();
  }

  // Leaf gradients accumulate across sweeps; interior gradients are scratch
  // for one pass only and are re-zeroed before seeding.
  void zero_interior_grads() {
    for (size_t i = 0; i < live_; ++i) {
      Node& n = nodes_[i];
      if (n.op != Op::kLeaf) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    }
  }

  void sweep(int from) {
    for (int id = from; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.needs_grad || n.op == Op::kLeaf) continue;
      backprop_node(id);
    }
  }

  void backprop_node(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    Node& a = nodes_[static_cast<size_t>(n.a)];
    const bool need_a = a.needs_grad;
    switch (n.op) {
      case Op::kMatmul: {
        Node& b = nodes_[static_cast<size_t>(n.b)];
        if (need_a) gmap(n.a).noalias() += cmap_grad(id) * cmap(n.b).transpose();
        if (b.needs_grad) gmap(n.b).noalias() += cmap(n.a).transpose() * cmap_grad(id);
        break;
      }
      case Op::kTranspose:
        if (need_a) gmap(n.a) += cmap_grad(id).transpose();
        break;
      case Op::kBVecMat: {
        Node& b = nodes_[static_cast<size_t>(n.b)];
        const int k = n.i0;
        const int m = n.i1;
        for (int i = 0; i < n.rows; ++i) {
          Eigen::Map<const Eigen::RowVectorXd> gi(n.grad.data() + i * m, m);
          if (need_a) {
            ConstMatMap wi(b.val.data() + static_cast<size_t>(i) * k * m, k, m);
            Eigen::Map<Eigen::RowVectorXd>(a.grad.data() + i * k, k).noalias() +=
                gi * wi.transpose();
          }
          if (b.needs_grad) {
            Eigen::Map<const Eigen::RowVectorXd> xi(a.val.data() + i * k, k);
            MatMap(b.grad.data() + static_cast<size_t>(i) * k * m, k, m).noalias() +=
                xi.transpose() * gi;
          }
        }
        break;
      }
      case Op::kAdd: {
        Node& b = nodes_[static_cast<size_t>(n.b)];
        if (need_a) gmap(n.a) += cmap_grad(id);
        if (b.needs_grad) gmap(n.b) += cmap_grad(id);
        break;
      }
      case Op::kSub: {
        Node& b = nodes_[static_cast<size_t>(n.b)];
        if (need_a) gmap(n.a) += cmap_grad(id);
        if (b.needs_grad) gmap(n.b) -= cmap_grad(id);
        break;
      }
      case Op::kAddRowVec: {
        Node& b = nodes_[static_cast<size_t>(n.b)];
        if (need_a) gmap(n.a) += cmap_grad(id);
        if (b.needs_grad) {
          Eigen::Map<Eigen::RowVectorXd>(b.grad.data(), b.cols) +=
              cmap_grad(id).colwise().sum();
        }
        break;
      }
      case Op::kMul: {
        Node& b = nodes_[static_cast<size_t>(n.b)];
        for (size_t i = 0; i < n.grad.size(); ++i) {
          if (need_a) a.grad[i] += n.grad[i] * b.val[i];
          if (b.needs_grad) b.grad[i] += n.grad[i] * a.val[i];
        }
        break;
      }
      case Op::kMulRowVec: {
        Node& b = nodes_[static_cast<size_t>(n.b)];
        const int cols = n.cols;
        for (int i = 0; i < n.rows; ++i) {
          for (int j = 0; j < cols; ++j) {
            const size_t idx = static_cast<size_t>(i) * cols + j;
            if (need_a) a.grad[idx] += n.grad[idx] * b.val[static_cast<size_t>(j)];
            if (b.needs_grad) b.grad[static_cast<size_t>(j)] += n.grad[idx] * a.val[idx];
          }
        }
        break;
      }
      case Op::kRelu:
        if (need_a) {
          for (size_t i = 0; i < n.grad.size(); ++i) {
            if (a.val[i] > 0.0) a.grad[i] += n.grad[i];
          }
        }
        break;
      case Op::kTanh:
        if (need_a) {
          for (size_t i = 0; i < n.grad.size(); ++i) {
            a.grad[i] += n.grad[i] * (1.0 - n.val[i] * n.val[i]);
          }
        }
        break;
      case Op::kExp:
        if (need_a) {
          for (size_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i] * n.val[i];
        }
        break;
      case Op::kLog:
        if (need_a) {
          for (size_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i] / a.val[i];
        }
        break;
      case Op::kAffine:
        if (need_a) {
          for (size_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.c0 * n.grad[i];
        }
        break;
      case Op::kSum:
        if (need_a) {
          const double g = n.grad[0];
          for (double& ag : a.grad) ag += g;
        }
        break;
      case Op::kMean:
        if (need_a) {
          const double g = n.grad[0] / static_cast<double>(a.val.size());
          for (double& ag : a.grad) ag += g;
        }
        break;
      case Op::kRowSum:
        if (need_a) {
          for (int i = 0; i < a.rows; ++i) {
            const double g = n.grad[static_cast<size_t>(i)];
            for (int j = 0; j < a.cols; ++j) a.grad[static_cast<size_t>(i) * a.cols + j] += g;
          }
        }
        break;
      case Op::kConcatCols: {
        Node& b = nodes_[static_cast<size_t>(n.b)];
        if (need_a) gmap(n.a) += cmap_grad(id).leftCols(a.cols);
        if (b.needs_grad) gmap(n.b) += cmap_grad(id).rightCols(b.cols);
        break;
      }
      case Op::kSliceCols:
        if (need_a) gmap(n.a).middleCols(n.i0, n.i1) += cmap_grad(id);
        break;
      case Op::kReshape:
        if (need_a) {
          for (size_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i];
        }
        break;
      case Op::kLeaf:
        break;
    }
  }

  ConstMatMap cmap_grad(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return ConstMatMap(n.grad.data(), n.rows, n.cols);
  }
};

inline int Tensor::rows() const { return g_->node(id_).rows; }
inline int Tensor::cols() const { return g_->node(id_).cols; }
inline std::span<const double> Tensor::val() const {
  const Graph::Node& n = g_->node(id_);
  return std::span<const double>(n.val.data(), n.val.size());
}
inline std::span<const double> Tensor::grad() const {
  const Graph::Node& n = g_->node(id_);
  return std::span<const double>(n.grad.data(), n.grad.size());
}
inline bool Tensor::requires_grad() const { return g_->node(id_).needs_grad; }
inline double Tensor::scalar() const {
  if (rows() * cols() != 1) {
    throw ContractError("scalar: tensor is " + detail::shape_str(rows(), cols()));
  }
  return g_->node(id_).val[0];
}

}  // namespace hyperql
