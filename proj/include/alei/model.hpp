// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "alei/adapter.hpp"
#include "alei/backbone.hpp"
#include "alei/checkpoint.hpp"
#include "alei/extractors.hpp"
#include "alei/router_head.hpp"

namespace alei {

struct ModelConfig {
  BackboneConfig backbone;
  ExtractorConfig extractors;
  AdapterConfig adapter;
  std::uint64_t base_seed = 1234;  // seeds the frozen base and all inits
  bool early_fusion = false;       // adds per-stream 1x1 mixers (baseline)

  void validate() const {
    backbone.validate();
    extractors.validate();
    if (backbone.modalities != extractors.num_modalities())
      throw dim_error("modalities mismatch: backbone says " +
                      std::to_string(backbone.modalities) + ", extractor list has " +
                      std::to_string(extractors.num_modalities()));
  }
};

// per-forward component switches for ablation runs
struct RunFlags {
  bool lora = true;     // LE
  bool fusion = true;   // CLA
  bool adapter = true;  // LIIA
  bool dfs = true;      // router + per-modality heads vs shared head
};

template <class T>
struct ForwardResult {
  std::vector<Tensor<T>> cls;  // per modality, each [1,D]
  Tensor<T> p;                 // routing distribution [1,M+1]
  Tensor<T> per_head;          // per-head probabilities [1,M+1]
  Tensor<T> fused;             // scalar prediction
};

template <class T>
class AleiModel {
 public:
  ModelConfig cfg;
  ParamRegistry<T> params;

  std::vector<PatchEmbed<T>> embeds;               // per modality
  std::vector<BaseBlock<T>> base;                  // per layer, frozen
  Tensor<T> final_ln_g, final_ln_b;                // frozen
  std::vector<std::vector<LoraExpert<T>>> lora;    // [modality][layer]
  std::map<int, FusionBlock<T>> fuse;              // keyed by layer
  AdapterEncoder<T> encoder;
  ClassHead<T> encoder_head;                       // phase-1 probe head for G0
  std::map<int, InjectBlock<T>> inject;
  std::map<int, ExtractBlock<T>> extract;
  RouterParams<T> router;
  std::vector<ClassHead<T>> heads;                 // per modality
  ClassHead<T> shared_head;                        // DFS-off late-fusion head
  std::vector<std::pair<Tensor<T>, Tensor<T>>> early_mix;  // 1x1 conv per stream

  explicit AleiModel(ModelConfig c) : cfg(std::move(c)) {
    cfg.validate();
    build();
  }

  int modalities() const { return cfg.backbone.modalities; }
  int dim() const { return cfg.backbone.embed_dim; }
  int image_index() const {
    for (size_t i = 0; i < cfg.extractors.kinds.size(); ++i)
      if (cfg.extractors.kinds[i] == ExtractorKind::IMAGE) return static_cast<int>(i);
    return 0;
  }

  // ---- forward ----

  // planes: [(M+1)*3, H, W] standardized modality stack for one sample
  ForwardResult<T> forward(const Tensor<T>& planes, const RunFlags& flags = {}) const {
    const auto& bc = cfg.backbone;
    const int Mp1 = modalities();
    const int Tn = bc.tokens();
    std::vector<Tensor<T>> x;
    x.reserve(static_cast<size_t>(Mp1));
    for (int j = 0; j < Mp1; ++j)
      x.push_back(patch_embed(stream(planes, j), embeds[static_cast<size_t>(j)], bc.patch_size));

    Tensor<T> g;
    const bool use_adapter = flags.adapter && !inject.empty();
    if (use_adapter)
      g = encode_lowlevel(lowlevel_planes(planes), encoder, 3 * (Mp1 - 1));

    const T ls = static_cast<T>(bc.lora_scale());
    auto fl = bc.effective_fusion_layers();
    for (int i = 0; i < bc.layers; ++i) {
      for (int j = 0; j < Mp1; ++j)
        x[static_cast<size_t>(j)] = modality_layer_forward(
            x[static_cast<size_t>(j)], base[static_cast<size_t>(i)],
            flags.lora ? &lora[static_cast<size_t>(j)][static_cast<size_t>(i)] : nullptr,
            ls, bc.heads);
      if (std::find(fl.begin(), fl.end(), i) != fl.end()) {
        Tensor<T> fcat = concat_rows(x);
        if (use_adapter)
          fcat = adapter_inject(fcat, g, inject.at(i), bc.heads);
        if (flags.fusion)
          fcat = cross_lowlevel_fuse(fcat, fuse.at(i), bc.heads);
        if (use_adapter)
          g = adapter_extract_back(g, fcat, extract.at(i), bc.heads);
        for (int j = 0; j < Mp1; ++j)
          x[static_cast<size_t>(j)] = slice_rows(fcat, j * Tn, Tn);
      }
    }

    ForwardResult<T> out;
    for (int j = 0; j < Mp1; ++j) {
      Tensor<T> t = layer_norm(x[static_cast<size_t>(j)], final_ln_g, final_ln_b);
      out.cls.push_back(slice_rows(t, 0, 1));
    }
    Tensor<T> f_cls = concat_cols(out.cls);
    if (flags.dfs) {
      out.p = route(f_cls, router);
      std::vector<Tensor<T>> hp;
      for (int j = 0; j < Mp1; ++j)
        hp.push_back(head_predict(out.cls[static_cast<size_t>(j)], heads[static_cast<size_t>(j)]));
      out.per_head = concat_cols(hp);
      out.fused = mixture_predict(out.p, out.per_head);
    } else {
      out.p = Tensor<T>::filled({1, Mp1}, T(1) / static_cast<T>(Mp1));
      out.fused = sum(head_predict(f_cls, shared_head));
      out.per_head = out.p;  // not meaningful without per-modality heads
    }
    return out;
  }

  // single-stream phase-1 probe: modality j through the frozen base with
  // its LoRA expert, no fusion, no adapter
  Tensor<T> forward_single(const Tensor<T>& planes, int j) const {
    const auto& bc = cfg.backbone;
    Tensor<T> t = patch_embed(stream(planes, j), embeds[static_cast<size_t>(j)], bc.patch_size);
    const T ls = static_cast<T>(bc.lora_scale());
    for (int i = 0; i < bc.layers; ++i)
      t = modality_layer_forward(t, base[static_cast<size_t>(i)],
                                 &lora[static_cast<size_t>(j)][static_cast<size_t>(i)], ls, bc.heads);
    t = layer_norm(t, final_ln_g, final_ln_b);
    return slice_rows(t, 0, 1);
  }

  Tensor<T> probe_predict(const Tensor<T>& planes, int j) const {
    return sum(head_predict(forward_single(planes, j), heads[static_cast<size_t>(j)]));
  }

  // phase-1 probe for the adapter encoder
  Tensor<T> encoder_predict(const Tensor<T>& planes) const {
    Tensor<T> g = encode_lowlevel(lowlevel_planes(planes), encoder, 3 * (modalities() - 1));
    return sum(head_predict(g, encoder_head));
  }

  // early-fusion baseline: per-stream 1x1 mix, summed, single stream
  Tensor<T> early_fusion_predict(const Tensor<T>& planes) const {
    if (early_mix.empty())
      throw std::runtime_error("model built without early-fusion parameters");
    const auto& bc = cfg.backbone;
    const int H = planes.dim(1), W = planes.dim(2);
    Tensor<T> mixed;
    for (int j = 0; j < modalities(); ++j) {
      Tensor<T> s = conv2d(stream(planes, j), early_mix[static_cast<size_t>(j)].first, 1, 0);
      s = reshape(add_colvec(reshape(s, {3, H * W}), early_mix[static_cast<size_t>(j)].second),
                  {3, H, W});
      mixed = j == 0 ? s : add(mixed, s);
    }
    Tensor<T> t = patch_embed(mixed, embeds[0], bc.patch_size);
    const T ls = static_cast<T>(bc.lora_scale());
    for (int i = 0; i < bc.layers; ++i)
      t = modality_layer_forward(t, base[static_cast<size_t>(i)], &lora[0][static_cast<size_t>(i)],
                                 ls, bc.heads);
    t = layer_norm(t, final_ln_g, final_ln_b);
    return sum(head_predict(slice_rows(t, 0, 1), heads[0]));
  }

  // ---- trainability / checkpointing ----

  void set_trainable(const std::function<bool(const std::string&)>& pred) {
    for (auto& p : params.all()) {
      const bool frozen_base = p.name.rfind("backbone.base.", 0) == 0;
      p.trainable = !frozen_base && pred(p.name);
      p.tensor.set_requires_grad(p.trainable);
    }
  }

  Checkpoint save(const std::function<bool(const std::string&)>& pred =
                      [](const std::string&) { return true; }) const {
    Checkpoint ck;
    for (const auto& p : params.all())
      if (pred(p.name)) ck.put(p.name, p.tensor);
    return ck;
  }

  // loads every parameter entry present in the archive; names that do not
  // exist in this model are an error (stats./meta. entries are skipped)
  void load(const Checkpoint& ck) {
    std::string unknown;
    for (const auto& [name, e] : ck.entries) {
      if (name.rfind("stats.", 0) == 0 || name.rfind("meta.", 0) == 0) continue;
      if (!params.contains(name)) {
        unknown += unknown.empty() ? name : (", " + name);
        continue;
      }
      ck.get(name, params.at(name).tensor);
    }
    if (!unknown.empty())
      throw format_error("checkpoint contains unknown parameters: " + unknown);
  }

  Tensor<T> stream(const Tensor<T>& planes, int j) const {
    const int H = planes.dim(1), W = planes.dim(2);
    const size_t off = static_cast<size_t>(j) * 3 * H * W;
    std::vector<T> d(planes.data() + off, planes.data() + off + static_cast<size_t>(3) * H * W);
    return Tensor<T>::from({3, H, W}, std::move(d));
  }

  // channel-concatenation of all non-IMAGE planes, in configured order
  Tensor<T> lowlevel_planes(const Tensor<T>& planes) const {
    const int H = planes.dim(1), W = planes.dim(2);
    const int M = modalities() - 1;
    auto out = Tensor<T>::zeros({3 * M, H, W});
    int dst = 0;
    for (int j = 0; j < modalities(); ++j) {
      if (j == image_index()) continue;
      std::copy(planes.data() + static_cast<size_t>(j) * 3 * H * W,
                planes.data() + static_cast<size_t>(j + 1) * 3 * H * W,
                out.data() + static_cast<size_t>(dst) * H * W);
      dst += 3;
    }
    return out;
  }

 private:
  void build() {
    const auto& bc = cfg.backbone;
    const int D = bc.embed_dim, Mp1 = bc.modalities, Tn = bc.tokens();
    const int F = 3 * bc.patch_size * bc.patch_size;
    std::mt19937_64 rng(cfg.base_seed);
    auto xavier = [&](Shape s) {
      const T std = static_cast<T>(std::sqrt(2.0 / (s[0] + s[s.size() - 1])));
      return Tensor<T>::randn(s, rng, std);
    };
    auto gauss = [&](Shape s, double std) {
      return Tensor<T>::randn(std::move(s), rng, static_cast<T>(std));
    };
    auto zeros = [](Shape s) { return Tensor<T>::zeros(std::move(s)); };
    auto ones = [](Shape s) { return Tensor<T>::filled(std::move(s), T(1)); };

    // frozen base
    for (int i = 0; i < bc.layers; ++i) {
      const std::string p = "backbone.base." + std::to_string(i) + ".";
      BaseBlock<T> b;
      b.ln1_g = params.add(p + "ln1_g", ones({D}), false);
      b.ln1_b = params.add(p + "ln1_b", zeros({D}), false);
      b.Wqkv = params.add(p + "wqkv", xavier({D, 3 * D}), false);
      b.bqkv = params.add(p + "bqkv", zeros({3 * D}), false);
      b.Wo = params.add(p + "wo", xavier({D, D}), false);
      b.bo = params.add(p + "bo", zeros({D}), false);
      b.ln2_g = params.add(p + "ln2_g", ones({D}), false);
      b.ln2_b = params.add(p + "ln2_b", zeros({D}), false);
      b.W1 = params.add(p + "w1", xavier({D, bc.ffn_hidden()}), false);
      b.b1 = params.add(p + "b1", zeros({bc.ffn_hidden()}), false);
      b.W2 = params.add(p + "w2", xavier({bc.ffn_hidden(), D}), false);
      b.b2 = params.add(p + "b2", zeros({D}), false);
      base.push_back(std::move(b));
    }
    final_ln_g = params.add("backbone.base.final_ln.g", ones({D}), false);
    final_ln_b = params.add("backbone.base.final_ln.b", zeros({D}), false);

    // per-modality embeddings and LoRA experts
    for (int j = 0; j < Mp1; ++j) {
      const std::string p = "backbone.embed." + std::to_string(j) + ".";
      PatchEmbed<T> e;
      e.Wp = params.add(p + "wp", xavier({F, D}));
      e.bp = params.add(p + "bp", zeros({D}));
      e.cls = params.add(p + "cls", gauss({1, D}, 0.02));
      e.pos = params.add(p + "pos", gauss({Tn, D}, 0.02));
      embeds.push_back(std::move(e));
      std::vector<LoraExpert<T>> lj;
      for (int i = 0; i < bc.layers; ++i) {
        const std::string q = "backbone.lora." + std::to_string(j) + "." + std::to_string(i) + ".";
        LoraExpert<T> le;
        le.A = params.add(q + "a", gauss({D, bc.lora_rank}, 1.0 / std::sqrt(static_cast<double>(D))));
        le.B = params.add(q + "b", zeros({bc.lora_rank, 3 * D}));
        lj.push_back(std::move(le));
      }
      lora.push_back(std::move(lj));
    }

    auto make_mha = [&](const std::string& p) {
      MhaParams<T> m;
      m.Wq = params.add(p + "wq", xavier({D, D}));
      m.bq = params.add(p + "bq", zeros({D}));
      m.Wk = params.add(p + "wk", xavier({D, D}));
      m.bk = params.add(p + "bk", zeros({D}));
      m.Wv = params.add(p + "wv", xavier({D, D}));
      m.bv = params.add(p + "bv", zeros({D}));
      m.Wo = params.add(p + "wo", xavier({D, D}));
      m.bo = params.add(p + "bo", zeros({D}));
      return m;
    };

    // fusion blocks at the designated layers, gates zero
    for (int i : bc.effective_fusion_layers()) {
      const std::string p = "backbone.fuse." + std::to_string(i) + ".";
      FusionBlock<T> fb;
      fb.ln_g = params.add(p + "ln_g", ones({D}));
      fb.ln_b = params.add(p + "ln_b", zeros({D}));
      fb.mha = make_mha(p);
      const int beta_rows = bc.per_modality_gate ? Mp1 * Tn : Tn;
      fb.beta = params.add(p + "beta", zeros({beta_rows, D}));
      fuse.emplace(i, std::move(fb));
    }

    // adapter
    {
      const int M = Mp1 - 1;
      const int c1 = cfg.adapter.conv1_channels, c2 = cfg.adapter.conv2_channels;
      const std::string p = "adapter.encoder.";
      encoder.k1 = params.add(p + "k1", gauss({c1, 3 * M, 3, 3}, std::sqrt(2.0 / (9.0 * 3 * M))));
      encoder.b1 = params.add(p + "b1", zeros({c1}));
      encoder.n1_g = params.add(p + "n1_g", ones({c1}));
      encoder.n1_b = params.add(p + "n1_b", zeros({c1}));
      encoder.k2 = params.add(p + "k2", gauss({c2, c1, 3, 3}, std::sqrt(2.0 / (9.0 * c1))));
      encoder.b2 = params.add(p + "b2", zeros({c2}));
      encoder.n2_g = params.add(p + "n2_g", ones({c2}));
      encoder.n2_b = params.add(p + "n2_b", zeros({c2}));
      encoder.p1_W = params.add(p + "p1_w", xavier({c2, D}));
      encoder.p1_b = params.add(p + "p1_b", zeros({D}));
      encoder.p2_W = params.add(p + "p2_w", xavier({D, D}));
      encoder.p2_b = params.add(p + "p2_b", zeros({D}));
      encoder_head.w = params.add("adapter.encoder_head.w", zeros({D, 1}));
      encoder_head.b = params.add("adapter.encoder_head.b", zeros({1}));
      for (int i : bc.effective_fusion_layers()) {
        const std::string q = "adapter.inject." + std::to_string(i) + ".";
        InjectBlock<T> ib;
        ib.lnf_g = params.add(q + "lnf_g", ones({D}));
        ib.lnf_b = params.add(q + "lnf_b", zeros({D}));
        ib.lng_g = params.add(q + "lng_g", ones({D}));
        ib.lng_b = params.add(q + "lng_b", zeros({D}));
        ib.mha = make_mha(q);
        ib.gamma = params.add(q + "gamma", zeros({D}));
        inject.emplace(i, std::move(ib));
        const std::string r = "adapter.extract." + std::to_string(i) + ".";
        ExtractBlock<T> eb;
        eb.lng_g = params.add(r + "lng_g", ones({D}));
        eb.lng_b = params.add(r + "lng_b", zeros({D}));
        eb.lnf_g = params.add(r + "lnf_g", ones({D}));
        eb.lnf_b = params.add(r + "lnf_b", zeros({D}));
        eb.mha = make_mha(r);
        eb.eta = params.add(r + "eta", zeros({D}));
        eb.ln2_g = params.add(r + "ln2_g", ones({D}));
        eb.ln2_b = params.add(r + "ln2_b", zeros({D}));
        eb.f1_W = params.add(r + "f1_w", xavier({D, 2 * D}));
        eb.f1_b = params.add(r + "f1_b", zeros({2 * D}));
        eb.f2_W = params.add(r + "f2_w", zeros({2 * D, D}));  // transparency at init
        eb.f2_b = params.add(r + "f2_b", zeros({D}));
        extract.emplace(i, std::move(eb));
      }
    }

    // router (zero init -> uniform start) and heads
    router.W = params.add("router.W", zeros({Mp1 * D, Mp1}));
    router.b = params.add("router.b", zeros({Mp1}));
    for (int j = 0; j < Mp1; ++j) {
      const std::string p = "heads." + std::to_string(j) + ".";
      ClassHead<T> h;
      h.w = params.add(p + "w", zeros({D, 1}));
      h.b = params.add(p + "b", zeros({1}));
      heads.push_back(std::move(h));
    }
    shared_head.w = params.add("head.shared.w", zeros({Mp1 * D, 1}));
    shared_head.b = params.add("head.shared.b", zeros({1}));

    if (cfg.early_fusion) {
      for (int j = 0; j < Mp1; ++j) {
        const std::string p = "earlyfuse." + std::to_string(j) + ".";
        auto w = params.add(p + "w", gauss({3, 3, 1, 1}, 0.3));
        auto b = params.add(p + "b", zeros({3}));
        early_mix.emplace_back(w, b);
      }
    }

    // base is frozen from the start
    set_trainable([](const std::string&) { return true; });
  }
};

}  // namespace alei
