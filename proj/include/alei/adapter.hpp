// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "alei/nn.hpp"
#include "alei/tensor.hpp"

// Low-level interaction adapter: a small convolutional encoder pools the
// low-level planes into a single D-vector G, which is exchanged with the
// backbone through gated cross-attention injector/extractor pairs at each
// fusion layer. All gates and the extractor FFN output start at zero, so
// the adapter is exactly transparent at construction.

namespace alei {

struct AdapterConfig {
  int conv1_channels = 16;
  int conv2_channels = 32;
};

template <class T>
struct AdapterEncoder {
  Tensor<T> k1, b1;  // [c1, 3M, 3, 3]
  Tensor<T> n1_g, n1_b;  // per-channel norm affine, [c1]
  Tensor<T> k2, b2;  // [c2, c1, 3, 3]
  Tensor<T> n2_g, n2_b;  // [c2]
  Tensor<T> p1_W, p1_b;  // [c2, D]
  Tensor<T> p2_W, p2_b;  // [D, D]
};

template <class T>
struct InjectBlock {
  Tensor<T> lnf_g, lnf_b;  // over F tokens
  Tensor<T> lng_g, lng_b;  // over G
  MhaParams<T> mha;
  Tensor<T> gamma;  // [D], zero init
};

template <class T>
struct ExtractBlock {
  Tensor<T> lng_g, lng_b;
  Tensor<T> lnf_g, lnf_b;
  MhaParams<T> mha;
  Tensor<T> eta;  // [D], zero init
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> f1_W, f1_b;  // [D, 2D]
  Tensor<T> f2_W, f2_b;  // [2D, D], zero init
};

namespace detail_adapter {

// channel-wise normalization of a conv map [C,H,W] with affine per channel
template <class T>
Tensor<T> channel_norm(const Tensor<T>& x, const Tensor<T>& g, const Tensor<T>& b) {
  const int C = x.dim(0), HW = x.dim(1) * x.dim(2);
  Tensor<T> flat = reshape(x, {C, HW});
  Tensor<T> ones = Tensor<T>::filled({HW}, T(1));
  Tensor<T> zeros = Tensor<T>::zeros({HW});
  Tensor<T> normed = layer_norm(flat, ones, zeros);
  return reshape(add_colvec(mul_colvec(normed, g), b), x.shape());
}

}  // namespace detail_adapter

// low-level planes [3M,H,W] -> G0 [1,D]
template <class T>
Tensor<T> encode_lowlevel(const Tensor<T>& planes, const AdapterEncoder<T>& e,
                          int expected_channels) {
  if (planes.dim(0) != expected_channels)
    throw dim_error("encode_lowlevel: expected " + std::to_string(expected_channels) +
                    " channels, got " + std::to_string(planes.dim(0)));
  Tensor<T> h = conv2d(planes, e.k1, 1, 1);
  h = reshape(add_colvec(reshape(h, {h.dim(0), h.dim(1) * h.dim(2)}), e.b1), h.shape());
  h = detail_adapter::channel_norm(h, e.n1_g, e.n1_b);
  h = avg_pool2(relu(h));
  h = conv2d(h, e.k2, 1, 1);
  h = reshape(add_colvec(reshape(h, {h.dim(0), h.dim(1) * h.dim(2)}), e.b2), h.shape());
  h = detail_adapter::channel_norm(h, e.n2_g, e.n2_b);
  h = avg_pool2(relu(h));
  Tensor<T> pooled = reshape(global_avg_pool(h), {1, h.dim(0)});
  Tensor<T> g = gelu(linear(pooled, e.p1_W, e.p1_b));
  return linear(g, e.p2_W, e.p2_b);
}

// F~ = F + gamma * MHA(LN(F), LN(G), LN(G))
template <class T>
Tensor<T> adapter_inject(const Tensor<T>& fcat, const Tensor<T>& g,
                         const InjectBlock<T>& ib, int heads) {
  Tensor<T> lf = layer_norm(fcat, ib.lnf_g, ib.lnf_b);
  Tensor<T> lg = layer_norm(g, ib.lng_g, ib.lng_b);
  Tensor<T> attn = multi_head_attention(lf, lg, lg, heads, ib.mha);
  return add(fcat, mul_rowvec(attn, ib.gamma));
}

// G~ = G + eta * MHA(LN(G), LN(F'), LN(F'));  G' = G~ + FFN(LN(G~))
template <class T>
Tensor<T> adapter_extract_back(const Tensor<T>& g, const Tensor<T>& fnext,
                               const ExtractBlock<T>& eb, int heads) {
  Tensor<T> lg = layer_norm(g, eb.lng_g, eb.lng_b);
  Tensor<T> lf = layer_norm(fnext, eb.lnf_g, eb.lnf_b);
  Tensor<T> attn = multi_head_attention(lg, lf, lf, heads, eb.mha);
  Tensor<T> gt = add(g, mul_rowvec(attn, eb.eta));
  Tensor<T> ffn = linear(gelu(linear(layer_norm(gt, eb.ln2_g, eb.ln2_b), eb.f1_W, eb.f1_b)),
                         eb.f2_W, eb.f2_b);
  return add(gt, ffn);
}

}  // namespace alei
