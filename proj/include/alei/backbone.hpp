// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "alei/nn.hpp"
#include "alei/tensor.hpp"

// Multi-stream transformer backbone: a frozen base shared across all
// modality streams, per-modality LoRA experts on the QKV projection, and
// gated cross-modal self-attention at designated fusion layers.

namespace alei {

struct BackboneConfig {
  int image_size = 32;
  int patch_size = 4;
  int embed_dim = 32;
  int layers = 4;
  int heads = 4;
  int modalities = 4;  // M+1 streams including the image stream
  int lora_rank = 4;
  double lora_alpha = 8.0;
  std::vector<int> fusion_layers;  // empty -> default schedule
  bool per_modality_gate = false;  // beta tiled (default) vs per modality

  int seq_len() const { return (image_size * image_size) / (patch_size * patch_size); }
  int tokens() const { return 1 + seq_len(); }
  int ffn_hidden() const { return 4 * embed_dim; }
  double lora_scale() const { return lora_alpha / lora_rank; }

  // quarter, half, three-quarter and final layer
  std::vector<int> effective_fusion_layers() const {
    if (!fusion_layers.empty()) return fusion_layers;
    std::set<int> s;
    const int N = layers;
    s.insert((N + 3) / 4 - 1);
    s.insert((N + 1) / 2 - 1);
    s.insert((3 * N + 3) / 4 - 1);
    s.insert(N - 1);
    std::vector<int> out(s.begin(), s.end());
    return out;
  }

  void validate() const {
    if (embed_dim % heads != 0)
      throw dim_error("embed_dim " + std::to_string(embed_dim) +
                      " not divisible by heads " + std::to_string(heads));
    if (image_size % patch_size != 0)
      throw dim_error("image_size not divisible by patch_size");
    for (int l : effective_fusion_layers())
      if (l < 0 || l >= layers)
        throw dim_error("fusion layer " + std::to_string(l) + " out of range");
  }
};

// frozen transformer block weights, shared across modalities
template <class T>
struct BaseBlock {
  Tensor<T> ln1_g, ln1_b;
  Tensor<T> Wqkv, bqkv;  // [D,3D], [3D]
  Tensor<T> Wo, bo;      // [D,D], [D]
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> W1, b1;  // [D,4D]
  Tensor<T> W2, b2;  // [4D,D]
};

template <class T>
struct LoraExpert {
  Tensor<T> A;  // [D,r], gaussian init
  Tensor<T> B;  // [r,3D], zero init so the delta vanishes at construction
};

template <class T>
struct FusionBlock {
  Tensor<T> ln_g, ln_b;
  MhaParams<T> mha;
  Tensor<T> beta;  // [(1+L),D] (tiled) or [(M+1)(1+L),D] per-modality
};

template <class T>
struct PatchEmbed {
  Tensor<T> Wp, bp;  // [3P^2,D], [D]
  Tensor<T> cls;     // [1,D]
  Tensor<T> pos;     // [(1+L),D]
};

// frozen base QKV plus the (alpha/r)-scaled low-rank delta
template <class T>
Tensor<T> lora_qkv(const Tensor<T>& x, const BaseBlock<T>& base,
                   const LoraExpert<T>* lora, T lora_scale) {
  Tensor<T> qkv = linear(x, base.Wqkv, base.bqkv);
  if (lora != nullptr)
    qkv = add(qkv, scale(matmul(matmul(x, lora->A), lora->B), lora_scale));
  return qkv;
}

namespace detail_attn {

// attention over a precomputed qkv projection [Tq,3D]
template <class T>
Tensor<T> qkv_attention(const Tensor<T>& qkv, int D, int heads,
                        const Tensor<T>& Wo, const Tensor<T>& bo) {
  const int dh = D / heads;
  Tensor<T> Q = slice_cols(qkv, 0, D);
  Tensor<T> K = slice_cols(qkv, D, D);
  Tensor<T> V = slice_cols(qkv, 2 * D, D);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Tensor<T>> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor<T> Qh = slice_cols(Q, h * dh, dh);
    Tensor<T> Kh = slice_cols(K, h * dh, dh);
    Tensor<T> Vh = slice_cols(V, h * dh, dh);
    Tensor<T> attn = softmax_lastdim(scale(matmul_nt(Qh, Kh), inv_sqrt));
    outs.push_back(matmul(attn, Vh));
  }
  return linear(concat_cols(outs), Wo, bo);
}

}  // namespace detail_attn

// pre-LN transformer block: x + Attn(LN(x)), then y + FFN(LN(y))
template <class T>
Tensor<T> modality_layer_forward(const Tensor<T>& x, const BaseBlock<T>& base,
                                 const LoraExpert<T>* lora, T lora_scale,
                                 int heads) {
  const int D = x.dim(1);
  Tensor<T> qkv = lora_qkv(layer_norm(x, base.ln1_g, base.ln1_b), base, lora, lora_scale);
  Tensor<T> h = add(x, detail_attn::qkv_attention(qkv, D, heads, base.Wo, base.bo));
  Tensor<T> f = linear(gelu(linear(layer_norm(h, base.ln2_g, base.ln2_b), base.W1, base.b1)),
                       base.W2, base.b2);
  return add(h, f);
}

// gated residual self-attention over the concatenated modality sequence
template <class T>
Tensor<T> cross_lowlevel_fuse(const Tensor<T>& fcat, const FusionBlock<T>& fb,
                              int heads) {
  Tensor<T> ln = layer_norm(fcat, fb.ln_g, fb.ln_b);
  Tensor<T> attn = multi_head_attention(ln, ln, ln, heads, fb.mha);
  return add(fcat, mul_tile_rows(attn, fb.beta));
}

// tokens for one stream: patch projection, CLS prepended, positions added
template <class T>
Tensor<T> patch_embed(const Tensor<T>& stream, const PatchEmbed<T>& e, int P) {
  Tensor<T> patches = linear(img_to_patches(stream, P), e.Wp, e.bp);
  return add(concat_rows<T>({e.cls, patches}), e.pos);
}

}  // namespace alei
