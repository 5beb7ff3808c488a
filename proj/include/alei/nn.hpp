// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "alei/tensor.hpp"

namespace alei {

template <class T>
struct Parameter {
  std::string name;  // dot-separated checkpoint path
  Tensor<T> tensor;
  bool trainable = true;
};

// Flat, ordered parameter registry. Order of registration is the order of
// checkpointing and of Adam state, so it must be deterministic.
template <class T>
class ParamRegistry {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t, bool trainable = true) {
    if (index_.count(name))
      throw std::runtime_error("duplicate parameter name: " + name);
    t.set_requires_grad(trainable);
    index_[name] = params_.size();
    params_.push_back(Parameter<T>{name, std::move(t), trainable});
    return params_.back().tensor;
  }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("unknown parameter: " + name);
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }

  std::vector<Parameter<T>*> trainable() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_)
      if (p.trainable) out.push_back(&p);
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, size_t> index_;
};

// y = x W + b, x:[R,K] W:[K,N] b:[N]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b) {
  return add_rowvec(matmul(x, W), b);
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

template <class T>
struct MhaParams {
  Tensor<T> Wq, bq, Wk, bk, Wv, bv, Wo, bo;  // all [D,D] / [D]
};

// Scaled dot-product multi-head attention. q:[Tq,D] k,v:[Tk,D] -> [Tq,D]
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k,
                               const Tensor<T>& v, int heads,
                               const MhaParams<T>& p) {
  const int D = q.dim(1);
  if (D % heads != 0)
    throw dim_error("multi_head_attention: dim " + std::to_string(D) +
                    " not divisible by " + std::to_string(heads) + " heads");
  const int dh = D / heads;
  Tensor<T> Q = linear(q, p.Wq, p.bq);
  Tensor<T> K = linear(k, p.Wk, p.bk);
  Tensor<T> V = linear(v, p.Wv, p.bv);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Tensor<T>> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor<T> Qh = slice_cols(Q, h * dh, dh);
    Tensor<T> Kh = slice_cols(K, h * dh, dh);
    Tensor<T> Vh = slice_cols(V, h * dh, dh);
    Tensor<T> scores = scale(matmul_nt(Qh, Kh), inv_sqrt);
    Tensor<T> attn = softmax_lastdim(scores);
    outs.push_back(matmul(attn, Vh));
  }
  // concat along columns via rows trick: transpose-free column concat
  // [Tq,dh] x heads -> [Tq,D]
  Tensor<T> cat = concat_cols(outs);
  return linear(cat, p.Wo, p.bo);
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw dim_error("concat_cols: empty input");
  const int R = parts[0].dim(0);
  int C = 0;
  std::vector<std::shared_ptr<detail::Node<T>>> pn;
  std::vector<int> widths;
  for (auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != R) throw dim_error("concat_cols: row mismatch");
    widths.push_back(p.dim(1));
    C += p.dim(1);
    pn.push_back(p.node());
  }
  auto n = detail::make_op<T>({R, C}, pn, [pn, widths, R, C](detail::Node<T>& o) {
    int col0 = 0;
    for (size_t pi = 0; pi < pn.size(); ++pi) {
      const int w = widths[pi];
      if (pn[pi]->requires_grad) {
        pn[pi]->ensure_grad();
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < w; ++c)
            pn[pi]->grad[static_cast<size_t>(r * w + c)] += o.grad[static_cast<size_t>(r * C + col0 + c)];
      }
      col0 += w;
    }
  });
  int col0 = 0;
  for (size_t pi = 0; pi < pn.size(); ++pi) {
    const int w = widths[pi];
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < w; ++c)
        n->val[static_cast<size_t>(r * C + col0 + c)] = pn[pi]->val[static_cast<size_t>(r * w + c)];
    col0 += w;
  }
  return Tensor<T>(n);
}

// ---- optimizer ----

template <class T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, T lr, T beta1 = T(0.9),
       T beta2 = T(0.999), T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.emplace_back(p->tensor.numel(), T(0));
      v_.emplace_back(p->tensor.numel(), T(0));
    }
  }

  // Applies one update from the gradients currently stored on the
  // parameters (caller handles batch averaging), then leaves grads intact.
  void step() {
    ++t_;
    const T bc1 = T(1) - std::pow(b1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(b2_, static_cast<T>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = params_[pi]->tensor;
      if (p.grad().empty()) continue;
      T* w = p.data();
      const auto& g = p.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        m_[pi][i] = b1_ * m_[pi][i] + (T(1) - b1_) * g[i];
        v_[pi][i] = b2_ * v_[pi][i] + (T(1) - b2_) * g[i] * g[i];
        const T mhat = m_[pi][i] / bc1;
        const T vhat = v_[pi][i] / bc2;
        w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  std::vector<Parameter<T>*> params_;
  T lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

// ---- finite-difference gradient oracle ----

// f() rebuilds the graph from current parameter values and returns a scalar.
// Central differences per coordinate against the tape gradient; returns the
// max over coordinates of |a-n| / max(1e-8, |a|+|n|).
template <class T>
T grad_check(const std::function<Tensor<T>()>& f,
             std::vector<Parameter<T>*> params, T eps = T(1e-4)) {
  for (auto* p : params) p->tensor.zero_grad();
  Tensor<T> out = f();
  if (!std::isfinite(out.item()))
    throw std::runtime_error("grad_check: non-finite objective");
  out.backward();
  std::vector<std::vector<T>> analytic;
  for (auto* p : params) {
    if (p->tensor.grad().empty())
      analytic.emplace_back(p->tensor.numel(), T(0));
    else
      analytic.push_back(p->tensor.grad());
  }
  T worst = T(0);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& t = params[pi]->tensor;
    for (long long i = 0; i < t.numel(); ++i) {
      const T saved = t.data()[i];
      t.data()[i] = saved + eps;
      const T fp = f().item();
      t.data()[i] = saved - eps;
      const T fm = f().item();
      t.data()[i] = saved;
      const T num = (fp - fm) / (T(2) * eps);
      const T ana = analytic[pi][static_cast<size_t>(i)];
      const T rel = std::abs(ana - num) /
                    std::max(T(1e-8), std::abs(ana) + std::abs(num));
      worst = std::max(worst, rel);
    }
  }
  for (auto* p : params) p->tensor.zero_grad();
  return worst;
}

}  // namespace alei
