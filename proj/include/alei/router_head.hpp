// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "alei/nn.hpp"
#include "alei/tensor.hpp"

// Dynamic feature selection: softmax router over the concatenated CLS
// tokens, per-modality sigmoid heads, convex mixture prediction, and the
// entropy regularizer on the routing distribution.

namespace alei {

template <class T>
struct RouterParams {
  Tensor<T> W;  // [(M+1)*D, M+1]
  Tensor<T> b;  // [M+1]
};

template <class T>
struct ClassHead {
  Tensor<T> w;  // [D,1]
  Tensor<T> b;  // [1]
};

enum class MoeSign { LITERAL, BALANCE };

inline MoeSign moe_sign_from_name(const std::string& s) {
  if (s == "literal") return MoeSign::LITERAL;
  if (s == "balance") return MoeSign::BALANCE;
  throw std::runtime_error("moe sign must be 'literal' or 'balance', got " + s);
}

// F_cls [1,(M+1)D] -> routing distribution [1,M+1]
template <class T>
Tensor<T> route(const Tensor<T>& f_cls, const RouterParams<T>& r) {
  return softmax_lastdim(linear(f_cls, r.W, r.b));
}

// sigmoid probability from one modality's CLS token [1,D]
template <class T>
Tensor<T> head_predict(const Tensor<T>& cls, const ClassHead<T>& h) {
  return sigmoid(linear(cls, h.w, h.b));
}

// fused = sum_i p_i * per_head_i; both [1,M+1]
template <class T>
Tensor<T> mixture_predict(const Tensor<T>& p, const Tensor<T>& per_head) {
  return sum(mul(p, per_head));
}

// H(p) = -sum p log p, clamped at 1e-12 inside the log
template <class T>
Tensor<T> entropy_loss(const Tensor<T>& p) {
  return scale(sum(mul(p, log_clamped(p, T(1e-12)))), T(-1));
}

// binary cross-entropy on a clamped probability
template <class T>
Tensor<T> bce_loss(T y, const Tensor<T>& p_hat) {
  Tensor<T> pc = clamp_range(p_hat, T(1e-7), T(1) - T(1e-7));
  Tensor<T> pos = scale(log_clamped(pc, T(1e-12)), -y);
  Tensor<T> neg = scale(log_clamped(affine(pc, T(-1), T(1)), T(1e-12)), -(T(1) - y));
  return add(sum(pos), sum(neg));
}

// L_total = L_cls + lambda * L_moe, with a configurable sign on the
// entropy term (LITERAL adds +H, BALANCE subtracts it to reward spread)
template <class T>
Tensor<T> total_loss(T y, const Tensor<T>& fused, const Tensor<T>& p, T lambda,
                     MoeSign sign) {
  Tensor<T> l = bce_loss(y, fused);
  if (lambda != T(0)) {
    Tensor<T> h = entropy_loss(p);
    l = add(l, scale(h, sign == MoeSign::LITERAL ? lambda : -lambda));
  }
  return l;
}

}  // namespace alei
