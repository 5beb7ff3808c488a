// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

// Minimal dense tensor with define-by-run reverse-mode autodiff.
// Two instantiations are used throughout: float for training, double for
// finite-difference gradient checking. All reductions run in a fixed
// sequential order so repeated runs are bit-identical.

namespace alei {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline long long shape_numel(const Shape& s) {
  long long n = 1;
  for (int d : s) n *= d;
  return n;
}

struct dim_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> val;
  std::vector<T> grad;  // allocated lazily, same length as val
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // null for leaves
  std::uint64_t id = 0;

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> c{0};
    return ++c;
  }

  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), T(0));
  }
};

}  // namespace detail

template <class T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape s) { return filled(std::move(s), T(0)); }

  static Tensor filled(Shape s, T v) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(s);
    n->val.assign(static_cast<size_t>(shape_numel(n->shape)), v);
    n->id = Node::next_id();
    return Tensor(std::move(n));
  }

  static Tensor from(Shape s, std::vector<T> data) {
    if (static_cast<long long>(data.size()) != shape_numel(s))
      throw dim_error("tensor data length " + std::to_string(data.size()) +
                      " does not match shape " + shape_str(s));
    auto n = std::make_shared<Node>();
    n->shape = std::move(s);
    n->val = std::move(data);
    n->id = Node::next_id();
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  static Tensor randn(Shape s, std::mt19937_64& rng, T stddev = T(1)) {
    auto t = zeros(std::move(s));
    std::normal_distribution<double> d(0.0, 1.0);
    for (auto& x : t.node()->val) x = static_cast<T>(d(rng)) * stddev;
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  long long numel() const { return static_cast<long long>(n_->val.size()); }

  T* data() { return n_->val.data(); }
  const T* data() const { return n_->val.data(); }
  std::vector<T>& values() { return n_->val; }
  const std::vector<T>& values() const { return n_->val; }
  T item() const {
    if (numel() != 1) throw dim_error("item() on non-scalar " + shape_str(shape()));
    return n_->val[0];
  }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    n_->requires_grad = b;
    return *this;
  }
  const std::vector<T>& grad() const { return n_->grad; }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  std::shared_ptr<Node> node() const { return n_; }

  // Reverse sweep from a scalar. Gradients accumulate into every
  // requires_grad leaf reachable from this node.
  void backward() const {
    if (numel() != 1) throw dim_error("backward() needs a scalar output");
    if (!n_->requires_grad) return;
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<Node*> seen;
    std::vector<std::shared_ptr<Node>> stack{n_};
    while (!stack.empty()) {
      auto cur = stack.back();
      stack.pop_back();
      if (!seen.insert(cur.get()).second) continue;
      order.push_back(cur);
      for (auto& p : cur->parents)
        if (p->requires_grad) stack.push_back(p);
    }
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a->id > b->id; });
    n_->ensure_grad();
    n_->grad[0] += T(1);
    for (auto& nd : order)
      if (nd->backprop) nd->backprop(*nd);
  }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<EMat<T>>;
template <class T>
using CMapM = Eigen::Map<const EMat<T>>;

template <class T>
std::shared_ptr<Node<T>> make_op(Shape shape,
                                 std::vector<std::shared_ptr<Node<T>>> parents,
                                 std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->val.resize(static_cast<size_t>(shape_numel(n->shape)));
  bool rg = false;
  for (auto& p : parents) rg = rg || p->requires_grad;
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  n->id = Node<T>::next_id();
  return n;
}

}  // namespace detail

// ---- elementwise ----

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw dim_error("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
  auto an = a.node(), bn = b.node();
  auto n = detail::make_op<T>(a.shape(), {an, bn}, [an, bn](detail::Node<T>& o) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i];
    }
  });
  for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = an->val[i] + bn->val[i];
  return Tensor<T>(n);
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw dim_error("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
  auto an = a.node(), bn = b.node();
  auto n = detail::make_op<T>(a.shape(), {an, bn}, [an, bn](detail::Node<T>& o) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
    }
  });
  for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = an->val[i] - bn->val[i];
  return Tensor<T>(n);
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw dim_error("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
  auto an = a.node(), bn = b.node();
  auto n = detail::make_op<T>(a.shape(), {an, bn}, [an, bn](detail::Node<T>& o) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * bn->val[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i] * an->val[i];
    }
  });
  for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = an->val[i] * bn->val[i];
  return Tensor<T>(n);
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  auto an = a.node();
  auto n = detail::make_op<T>(a.shape(), {an}, [an, c](detail::Node<T>& o) {
    an->ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * c;
  });
  for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = an->val[i] * c;
  return Tensor<T>(n);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  auto an = a.node();
  auto n = detail::make_op<T>(a.shape(), {an}, [an](detail::Node<T>& o) {
    an->ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i) {
      T s = o.val[i];
      an->grad[i] += o.grad[i] * s * (T(1) - s);
    }
  });
  for (size_t i = 0; i < n->val.size(); ++i) {
    T x = an->val[i];
    n->val[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                          : std::exp(x) / (T(1) + std::exp(x));
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  auto an = a.node();
  auto n = detail::make_op<T>(a.shape(), {an}, [an](detail::Node<T>& o) {
    an->ensure_grad();
    const T inv_sqrt2 = T(0.7071067811865475);
    const T inv_sqrt2pi = T(0.3989422804014327);
    for (size_t i = 0; i < o.grad.size(); ++i) {
      T x = an->val[i];
      T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      an->grad[i] += o.grad[i] * (cdf + x * pdf);
    }
  });
  const T inv_sqrt2 = T(0.7071067811865475);
  for (size_t i = 0; i < n->val.size(); ++i) {
    T x = an->val[i];
    n->val[i] = x * T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  auto an = a.node();
  auto n = detail::make_op<T>(a.shape(), {an}, [an](detail::Node<T>& o) {
    an->ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i)
      if (an->val[i] > T(0)) an->grad[i] += o.grad[i];
  });
  for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = std::max(an->val[i], T(0));
  return Tensor<T>(n);
}

// a*x + b elementwise with constants
template <class T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
  auto xn = x.node();
  auto n = detail::make_op<T>(x.shape(), {xn}, [xn, a](detail::Node<T>& o) {
    xn->ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i] * a;
  });
  for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = a * xn->val[i] + b;
  return Tensor<T>(n);
}

// clamp with zero gradient outside [lo, hi]
template <class T>
Tensor<T> clamp_range(const Tensor<T>& x, T lo, T hi) {
  auto xn = x.node();
  auto n = detail::make_op<T>(x.shape(), {xn}, [xn, lo, hi](detail::Node<T>& o) {
    xn->ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i)
      if (xn->val[i] > lo && xn->val[i] < hi) xn->grad[i] += o.grad[i];
  });
  for (size_t i = 0; i < n->val.size(); ++i)
    n->val[i] = std::clamp(xn->val[i], lo, hi);
  return Tensor<T>(n);
}

// x[R,C] * v[R] broadcast over columns (per-row gate)
template <class T>
Tensor<T> mul_colvec(const Tensor<T>& x, const Tensor<T>& v) {
  if (x.rank() != 2 || v.rank() != 1 || x.dim(0) != v.dim(0))
    throw dim_error("mul_colvec: " + shape_str(x.shape()) + " * " +
                    shape_str(v.shape()));
  const int R = x.dim(0), C = x.dim(1);
  auto xn = x.node(), vn = v.node();
  auto n = detail::make_op<T>(x.shape(), {xn, vn}, [xn, vn, R, C](detail::Node<T>& o) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
          xn->grad[static_cast<size_t>(r * C + c)] += o.grad[static_cast<size_t>(r * C + c)] * vn->val[static_cast<size_t>(r)];
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
          vn->grad[static_cast<size_t>(r)] += o.grad[static_cast<size_t>(r * C + c)] * xn->val[static_cast<size_t>(r * C + c)];
    }
  });
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c)
      n->val[static_cast<size_t>(r * C + c)] = xn->val[static_cast<size_t>(r * C + c)] * vn->val[static_cast<size_t>(r)];
  return Tensor<T>(n);
}

// x[R,C] + v[R] broadcast over columns
template <class T>
Tensor<T> add_colvec(const Tensor<T>& x, const Tensor<T>& v) {
  if (x.rank() != 2 || v.rank() != 1 || x.dim(0) != v.dim(0))
    throw dim_error("add_colvec: " + shape_str(x.shape()) + " + " +
                    shape_str(v.shape()));
  const int R = x.dim(0), C = x.dim(1);
  auto xn = x.node(), vn = v.node();
  auto n = detail::make_op<T>(x.shape(), {xn, vn}, [xn, vn, R, C](detail::Node<T>& o) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) vn->grad[static_cast<size_t>(r)] += o.grad[static_cast<size_t>(r * C + c)];
    }
  });
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c)
      n->val[static_cast<size_t>(r * C + c)] = xn->val[static_cast<size_t>(r * C + c)] + vn->val[static_cast<size_t>(r)];
  return Tensor<T>(n);
}

// log with a floor, so finite inputs can never yield -inf
template <class T>
Tensor<T> log_clamped(const Tensor<T>& a, T floor_v) {
  auto an = a.node();
  auto n = detail::make_op<T>(a.shape(), {an, }, [an, floor_v](detail::Node<T>& o) {
    an->ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i) {
      T x = std::max(an->val[i], floor_v);
      an->grad[i] += an->val[i] > floor_v ? o.grad[i] / x : T(0);
    }
  });
  for (size_t i = 0; i < n->val.size(); ++i)
    n->val[i] = std::log(std::max(an->val[i], floor_v));
  return Tensor<T>(n);
}

// ---- reductions ----

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  auto an = a.node();
  auto n = detail::make_op<T>({1}, {an}, [an](detail::Node<T>& o) {
    an->ensure_grad();
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += o.grad[0];
  });
  T acc = T(0);
  for (T v : an->val) acc += v;  // fixed order
  n->val[0] = acc;
  return Tensor<T>(n);
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// ---- matrix ops (Eigen-backed) ----

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw dim_error("matmul: incompatible shapes " + shape_str(a.shape()) +
                    " and " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), p = b.dim(1);
  auto an = a.node(), bn = b.node();
  auto n = detail::make_op<T>({m, p}, {an, bn}, [an, bn, m, k, p](detail::Node<T>& o) {
    detail::CMapM<T> g(o.grad.data(), m, p);
    if (an->requires_grad) {
      an->ensure_grad();
      detail::MapM<T> ga(an->grad.data(), m, k);
      detail::CMapM<T> B(bn->val.data(), k, p);
      ga.noalias() += g * B.transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      detail::MapM<T> gb(bn->grad.data(), k, p);
      detail::CMapM<T> A(an->val.data(), m, k);
      gb.noalias() += A.transpose() * g;
    }
  });
  detail::CMapM<T> A(an->val.data(), m, k), B(bn->val.data(), k, p);
  detail::MapM<T> O(n->val.data(), m, p);
  O.noalias() = A * B;
  return Tensor<T>(n);
}

// a[m,k] * b[n,k]^T -> [m,n]
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw dim_error("matmul_nt: incompatible shapes " + shape_str(a.shape()) +
                    " and " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), p = b.dim(0);
  auto an = a.node(), bn = b.node();
  auto n = detail::make_op<T>({m, p}, {an, bn}, [an, bn, m, k, p](detail::Node<T>& o) {
    detail::CMapM<T> g(o.grad.data(), m, p);
    if (an->requires_grad) {
      an->ensure_grad();
      detail::MapM<T> ga(an->grad.data(), m, k);
      detail::CMapM<T> B(bn->val.data(), p, k);
      ga.noalias() += g * B;
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      detail::MapM<T> gb(bn->grad.data(), p, k);
      detail::CMapM<T> A(an->val.data(), m, k);
      gb.noalias() += g.transpose() * A;
    }
  });
  detail::CMapM<T> A(an->val.data(), m, k), B(bn->val.data(), p, k);
  detail::MapM<T> O(n->val.data(), m, p);
  O.noalias() = A * B.transpose();
  return Tensor<T>(n);
}

// x[R,C] + v[C] broadcast over rows
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  if (x.rank() != 2 || v.rank() != 1 || x.dim(1) != v.dim(0))
    throw dim_error("add_rowvec: " + shape_str(x.shape()) + " + " +
                    shape_str(v.shape()));
  const int R = x.dim(0), C = x.dim(1);
  auto xn = x.node(), vn = v.node();
  auto n = detail::make_op<T>(x.shape(), {xn, vn}, [xn, vn, R, C](detail::Node<T>& o) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) vn->grad[static_cast<size_t>(c)] += o.grad[static_cast<size_t>(r * C + c)];
    }
  });
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c)
      n->val[static_cast<size_t>(r * C + c)] = xn->val[static_cast<size_t>(r * C + c)] + vn->val[static_cast<size_t>(c)];
  return Tensor<T>(n);
}

// x[R,C] * v[C] broadcast over rows (per-channel gate)
template <class T>
Tensor<T> mul_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  if (x.rank() != 2 || v.rank() != 1 || x.dim(1) != v.dim(0))
    throw dim_error("mul_rowvec: " + shape_str(x.shape()) + " * " +
                    shape_str(v.shape()));
  const int R = x.dim(0), C = x.dim(1);
  auto xn = x.node(), vn = v.node();
  auto n = detail::make_op<T>(x.shape(), {xn, vn}, [xn, vn, R, C](detail::Node<T>& o) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
          xn->grad[static_cast<size_t>(r * C + c)] += o.grad[static_cast<size_t>(r * C + c)] * vn->val[static_cast<size_t>(c)];
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
          vn->grad[static_cast<size_t>(c)] += o.grad[static_cast<size_t>(r * C + c)] * xn->val[static_cast<size_t>(r * C + c)];
    }
  });
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c)
      n->val[static_cast<size_t>(r * C + c)] = xn->val[static_cast<size_t>(r * C + c)] * vn->val[static_cast<size_t>(c)];
  return Tensor<T>(n);
}

// x[R,C] * g[r,C] with the gate tiled down the rows (R % r == 0)
template <class T>
Tensor<T> mul_tile_rows(const Tensor<T>& x, const Tensor<T>& g) {
  if (x.rank() != 2 || g.rank() != 2 || x.dim(1) != g.dim(1) ||
      x.dim(0) % g.dim(0) != 0)
    throw dim_error("mul_tile_rows: " + shape_str(x.shape()) + " * " +
                    shape_str(g.shape()));
  const int R = x.dim(0), C = x.dim(1), r0 = g.dim(0);
  auto xn = x.node(), gn = g.node();
  auto n = detail::make_op<T>(x.shape(), {xn, gn}, [xn, gn, R, C, r0](detail::Node<T>& o) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
          xn->grad[static_cast<size_t>(r * C + c)] += o.grad[static_cast<size_t>(r * C + c)] * gn->val[static_cast<size_t>((r % r0) * C + c)];
    }
    if (gn->requires_grad) {
      gn->ensure_grad();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
          gn->grad[static_cast<size_t>((r % r0) * C + c)] += o.grad[static_cast<size_t>(r * C + c)] * xn->val[static_cast<size_t>(r * C + c)];
    }
  });
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c)
      n->val[static_cast<size_t>(r * C + c)] = xn->val[static_cast<size_t>(r * C + c)] * gn->val[static_cast<size_t>((r % r0) * C + c)];
  return Tensor<T>(n);
}

// ---- shape ops ----

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape s) {
  if (shape_numel(s) != a.numel())
    throw dim_error("reshape: " + shape_str(a.shape()) + " -> " + shape_str(s));
  auto an = a.node();
  auto n = detail::make_op<T>(std::move(s), {an}, [an](detail::Node<T>& o) {
    an->ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
  });
  n->val = an->val;
  return Tensor<T>(n);
}

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw dim_error("concat_rows: empty input");
  const int C = parts[0].dim(1);
  int R = 0;
  std::vector<std::shared_ptr<detail::Node<T>>> pn;
  for (auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != C)
      throw dim_error("concat_rows: column mismatch");
    R += p.dim(0);
    pn.push_back(p.node());
  }
  auto n = detail::make_op<T>({R, C}, pn, [pn](detail::Node<T>& o) {
    size_t off = 0;
    for (auto& p : pn) {
      if (p->requires_grad) {
        p->ensure_grad();
        for (size_t i = 0; i < p->val.size(); ++i) p->grad[i] += o.grad[off + i];
      }
      off += p->val.size();
    }
  });
  size_t off = 0;
  for (auto& p : pn) {
    std::copy(p->val.begin(), p->val.end(), n->val.begin() + static_cast<long>(off));
    off += p->val.size();
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, int row0, int nrows) {
  if (a.rank() != 2 || row0 < 0 || row0 + nrows > a.dim(0))
    throw dim_error("slice_rows: rows [" + std::to_string(row0) + "," +
                    std::to_string(row0 + nrows) + ") of " + shape_str(a.shape()));
  const int C = a.dim(1);
  auto an = a.node();
  auto n = detail::make_op<T>({nrows, C}, {an}, [an, row0, C](detail::Node<T>& o) {
    an->ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i)
      an->grad[static_cast<size_t>(row0 * C) + i] += o.grad[i];
  });
  std::copy(an->val.begin() + row0 * C, an->val.begin() + (row0 + nrows) * C,
            n->val.begin());
  return Tensor<T>(n);
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, int col0, int ncols) {
  if (a.rank() != 2 || col0 < 0 || col0 + ncols > a.dim(1))
    throw dim_error("slice_cols: cols [" + std::to_string(col0) + "," +
                    std::to_string(col0 + ncols) + ") of " + shape_str(a.shape()));
  const int R = a.dim(0), C = a.dim(1);
  auto an = a.node();
  auto n = detail::make_op<T>({R, ncols}, {an}, [an, col0, ncols, R, C](detail::Node<T>& o) {
    an->ensure_grad();
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < ncols; ++c)
        an->grad[static_cast<size_t>(r * C + col0 + c)] += o.grad[static_cast<size_t>(r * ncols + c)];
  });
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < ncols; ++c)
      n->val[static_cast<size_t>(r * ncols + c)] = an->val[static_cast<size_t>(r * C + col0 + c)];
  return Tensor<T>(n);
}

// ---- softmax / layer norm ----

template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& a) {
  if (a.rank() < 1) throw dim_error("softmax: rank 0");
  const int C = a.dim(a.rank() - 1);
  const int R = static_cast<int>(a.numel() / C);
  auto an = a.node();
  auto n = detail::make_op<T>(a.shape(), {an}, [an, R, C](detail::Node<T>& o) {
    an->ensure_grad();
    for (int r = 0; r < R; ++r) {
      const size_t off = static_cast<size_t>(r) * C;
      T dot = T(0);
      for (int c = 0; c < C; ++c) dot += o.grad[off + c] * o.val[off + c];
      for (int c = 0; c < C; ++c)
        an->grad[off + c] += o.val[off + c] * (o.grad[off + c] - dot);
    }
  });
  for (int r = 0; r < R; ++r) {
    const size_t off = static_cast<size_t>(r) * C;
    T mx = an->val[off];
    for (int c = 1; c < C; ++c) mx = std::max(mx, an->val[off + c]);
    T z = T(0);
    for (int c = 0; c < C; ++c) {
      n->val[off + c] = std::exp(an->val[off + c] - mx);
      z += n->val[off + c];
    }
    for (int c = 0; c < C; ++c) n->val[off + c] /= z;
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5)) {
  if (x.rank() < 1) throw dim_error("layer_norm: rank 0");
  const int D = x.dim(x.rank() - 1);
  if (gain.numel() != D || bias.numel() != D)
    throw dim_error("layer_norm: gain/bias must have length " + std::to_string(D));
  const int R = static_cast<int>(x.numel() / D);
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  auto mu = std::make_shared<std::vector<T>>(static_cast<size_t>(R));
  auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(R));
  auto n = detail::make_op<T>(x.shape(), {xn, gn, bn},
                              [xn, gn, bn, mu, rstd, R, D](detail::Node<T>& o) {
    for (int r = 0; r < R; ++r) {
      const size_t off = static_cast<size_t>(r) * D;
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (int c = 0; c < D; ++c)
          gn->grad[static_cast<size_t>(c)] += o.grad[off + c] *
              (xn->val[off + c] - (*mu)[static_cast<size_t>(r)]) * (*rstd)[static_cast<size_t>(r)];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int c = 0; c < D; ++c) bn->grad[static_cast<size_t>(c)] += o.grad[off + c];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        const T rs = (*rstd)[static_cast<size_t>(r)];
        const T m = (*mu)[static_cast<size_t>(r)];
        T sum_gy = T(0), sum_gyx = T(0);
        for (int c = 0; c < D; ++c) {
          T gy = o.grad[off + c] * gn->val[static_cast<size_t>(c)];
          T xhat = (xn->val[off + c] - m) * rs;
          sum_gy += gy;
          sum_gyx += gy * xhat;
        }
        for (int c = 0; c < D; ++c) {
          T gy = o.grad[off + c] * gn->val[static_cast<size_t>(c)];
          T xhat = (xn->val[off + c] - m) * rs;
          xn->grad[off + c] += rs * (gy - (sum_gy + xhat * sum_gyx) / static_cast<T>(D));
        }
      }
    }
  });
  for (int r = 0; r < R; ++r) {
    const size_t off = static_cast<size_t>(r) * D;
    T m = T(0);
    for (int c = 0; c < D; ++c) m += xn->val[off + c];
    m /= static_cast<T>(D);
    T var = T(0);
    for (int c = 0; c < D; ++c) {
      T d = xn->val[off + c] - m;
      var += d * d;
    }
    var /= static_cast<T>(D);
    T rs = T(1) / std::sqrt(var + eps);
    (*mu)[static_cast<size_t>(r)] = m;
    (*rstd)[static_cast<size_t>(r)] = rs;
    for (int c = 0; c < D; ++c)
      n->val[off + c] = (xn->val[off + c] - m) * rs * gn->val[static_cast<size_t>(c)] + bn->val[static_cast<size_t>(c)];
  }
  return Tensor<T>(n);
}

// ---- convolution (cross-correlation convention) ----

// x[Cin,H,W], k[Cout,Cin,kh,kw], zero padding
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, int stride = 1, int pad = 0) {
  if (x.rank() != 3 || k.rank() != 4 || x.dim(0) != k.dim(1))
    throw dim_error("conv2d: incompatible shapes " + shape_str(x.shape()) +
                    " and " + shape_str(k.shape()));
  const int Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (kh > H + 2 * pad || kw > W + 2 * pad)
    throw dim_error("conv2d: kernel " + shape_str(k.shape()) +
                    " larger than padded input " + shape_str(x.shape()));
  auto xn = x.node(), kn = k.node();
  auto fwd_bwd = [xn, kn, Cin, H, W, Cout, kh, kw, Ho, Wo, stride, pad](
                     detail::Node<T>* out, bool backward_pass) {
    for (int co = 0; co < Cout; ++co)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          const size_t oidx = static_cast<size_t>((co * Ho + oy) * Wo + ox);
          T acc = T(0);
          const T g = backward_pass ? out->grad[oidx] : T(0);
          for (int ci = 0; ci < Cin; ++ci)
            for (int dy = 0; dy < kh; ++dy) {
              const int iy = oy * stride - pad + dy;
              if (iy < 0 || iy >= H) continue;
              for (int dx = 0; dx < kw; ++dx) {
                const int ix = ox * stride - pad + dx;
                if (ix < 0 || ix >= W) continue;
                const size_t xi = static_cast<size_t>((ci * H + iy) * W + ix);
                const size_t ki = static_cast<size_t>(((co * Cin + ci) * kh + dy) * kw + dx);
                if (!backward_pass) {
                  acc += xn->val[xi] * kn->val[ki];
                } else {
                  if (xn->requires_grad) xn->grad[xi] += g * kn->val[ki];
                  if (kn->requires_grad) kn->grad[ki] += g * xn->val[xi];
                }
              }
            }
          if (!backward_pass) out->val[oidx] = acc;
        }
  };
  auto n = detail::make_op<T>({Cout, Ho, Wo}, {xn, kn},
                              [xn, kn, fwd_bwd](detail::Node<T>& o) {
    if (xn->requires_grad) xn->ensure_grad();
    if (kn->requires_grad) kn->ensure_grad();
    fwd_bwd(&o, true);
  });
  fwd_bwd(n.get(), false);
  return Tensor<T>(n);
}

// 2x2 average pooling, stride 2
template <class T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  if (x.rank() != 3 || x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
    throw dim_error("avg_pool2: needs even HxW, got " + shape_str(x.shape()));
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Ho = H / 2, Wo = W / 2;
  auto xn = x.node();
  auto n = detail::make_op<T>({C, Ho, Wo}, {xn}, [xn, C, H, W, Ho, Wo](detail::Node<T>& o) {
    xn->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < Ho; ++y)
        for (int x2 = 0; x2 < Wo; ++x2) {
          const T g = o.grad[static_cast<size_t>((c * Ho + y) * Wo + x2)] * T(0.25);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              xn->grad[static_cast<size_t>((c * H + 2 * y + dy) * W + 2 * x2 + dx)] += g;
        }
  });
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y)
      for (int x2 = 0; x2 < Wo; ++x2) {
        T acc = T(0);
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            acc += xn->val[static_cast<size_t>((c * H + 2 * y + dy) * W + 2 * x2 + dx)];
        n->val[static_cast<size_t>((c * Ho + y) * Wo + x2)] = acc * T(0.25);
      }
  return Tensor<T>(n);
}

// [C,H,W] -> [C] global average
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 3) throw dim_error("global_avg_pool: needs rank 3");
  const int C = x.dim(0);
  const int HW = x.dim(1) * x.dim(2);
  auto xn = x.node();
  auto n = detail::make_op<T>({C}, {xn}, [xn, C, HW](detail::Node<T>& o) {
    xn->ensure_grad();
    for (int c = 0; c < C; ++c) {
      const T g = o.grad[static_cast<size_t>(c)] / static_cast<T>(HW);
      for (int i = 0; i < HW; ++i) xn->grad[static_cast<size_t>(c * HW + i)] += g;
    }
  });
  for (int c = 0; c < C; ++c) {
    T acc = T(0);
    for (int i = 0; i < HW; ++i) acc += xn->val[static_cast<size_t>(c * HW + i)];
    n->val[static_cast<size_t>(c)] = acc / static_cast<T>(HW);
  }
  return Tensor<T>(n);
}

// [3,H,W] -> [L, 3*P*P] non-overlapping patches, row-major patch order
template <class T>
Tensor<T> img_to_patches(const Tensor<T>& x, int P) {
  if (x.rank() != 3 || x.dim(1) % P != 0 || x.dim(2) % P != 0)
    throw dim_error("img_to_patches: " + shape_str(x.shape()) + " with P=" +
                    std::to_string(P));
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Py = H / P, Px = W / P, L = Py * Px, F = C * P * P;
  auto xn = x.node();
  auto idx_of = [C, H, W, P, Px, F](int l, int f) {
    const int py = l / Px, px = l % Px;
    const int c = f / (P * P), dy = (f / P) % P, dx = f % P;
    (void)C;
    return static_cast<size_t>((c * H + py * P + dy) * W + px * P + dx);
  };
  auto n = detail::make_op<T>({L, F}, {xn}, [xn, L, F, idx_of](detail::Node<T>& o) {
    xn->ensure_grad();
    for (int l = 0; l < L; ++l)
      for (int f = 0; f < F; ++f)
        xn->grad[idx_of(l, f)] += o.grad[static_cast<size_t>(l * F + f)];
  });
  for (int l = 0; l < L; ++l)
    for (int f = 0; f < F; ++f)
      n->val[static_cast<size_t>(l * F + f)] = xn->val[idx_of(l, f)];
  return Tensor<T>(n);
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace alei
