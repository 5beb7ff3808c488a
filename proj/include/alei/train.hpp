// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "alei/dataset.hpp"
#include "alei/model.hpp"

// Two-phase training, evaluation metrics, fusion baselines and ablations.

namespace alei {

struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9, beta2 = 0.999;
  int batch = 32;
  int epochs = 10;
  double lambda = 0.1;
  MoeSign moe_sign = MoeSign::LITERAL;
  std::uint64_t seed = 0;
  bool freeze_lora_phase2 = false;
  bool augment_crop = true;
  int crop_size = 28;
  bool distort_augment = false;  // robustness-style augmented training
  bool verbose = false;
};

// ---- input pipeline: image -> (crop / distortion) -> modality planes ----

struct Pipeline {
  ExtractorConfig extractors;
  StandardizeStats stats;

  static StandardizeStats fit_stats(const std::vector<SampleRecord>& train,
                                    const ExtractorConfig& ec) {
    StatsAccumulator<float> acc(ec);
    for (const auto& s : train) acc.add(s.image);
    return acc.finish();
  }

  Tensor<float> planes(const Tensor<float>& image) const {
    return extract_all(image, extractors, stats);
  }
};

// crop a c x c window at (oy, ox) and re-pad to the original size by
// replicating the crop's edges, keeping the crop centered
inline Tensor<float> crop_repad(const Tensor<float>& img, int oy, int ox, int c) {
  const int H = img.dim(1), W = img.dim(2);
  const int py = (H - c) / 2, px = (W - c) / 2;
  auto out = Tensor<float>::zeros(img.shape());
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int sy = oy + std::clamp(y - py, 0, c - 1);
        const int sx = ox + std::clamp(x - px, 0, c - 1);
        out.data()[static_cast<size_t>((ch * H + y) * W + x)] =
            img.data()[static_cast<size_t>((ch * H + sy) * W + sx)];
      }
  return out;
}

inline Tensor<float> center_crop_repad(const Tensor<float>& img, int c) {
  return crop_repad(img, (img.dim(1) - c) / 2, (img.dim(2) - c) / 2, c);
}

// training-time view of a sample: optional distortion augmentation then
// optional random crop; deterministic in (cfg.seed, epoch, index)
inline Tensor<float> train_view(const SampleRecord& s, const TrainConfig& cfg,
                                int epoch, std::uint64_t index) {
  Tensor<float> img = s.image;
  std::mt19937_64 rng(mix_seed(cfg.seed ^ (0xA5A5ull + static_cast<std::uint64_t>(epoch)), index));
  if (cfg.distort_augment) {
    DistortionConfig dc;
    switch (rng() % 4) {
      case 0: dc.kind = DistortionKind::NONE; break;
      case 1: dc.kind = DistortionKind::BLUR; break;
      case 2: dc.kind = DistortionKind::DOWNSAMPLE; break;
      default: dc.kind = DistortionKind::JPEGQ; break;
    }
    img = apply_distortion(img, dc);
  }
  if (cfg.augment_crop && cfg.crop_size < img.dim(1)) {
    const int span = img.dim(1) - cfg.crop_size + 1;
    const int oy = static_cast<int>(rng() % static_cast<std::uint64_t>(span));
    const int ox = static_cast<int>(rng() % static_cast<std::uint64_t>(span));
    img = crop_repad(img, oy, ox, cfg.crop_size);
  }
  return img;
}

inline Tensor<float> eval_view(const SampleRecord& s, const TrainConfig& cfg) {
  if (cfg.augment_crop && cfg.crop_size < s.image.dim(1))
    return center_crop_repad(s.image, cfg.crop_size);
  return s.image;
}

// ---- metrics ----

struct Metrics {
  double acc = 0.0;
  double ap = 0.0;
  int n = 0;
  std::map<std::string, double> family_acc;             // per family, "real" for label 0
  std::map<std::string, std::vector<double>> family_p;  // mean router distribution
};

// AP by rank summation: sort scores descending (stable), sum precision at
// each positive rank, divide by the number of positives.
inline double average_precision(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  int positives = 0;
  for (int l : labels) positives += l;
  if (positives == 0) return 0.0;
  double ap = 0.0;
  int tp = 0;
  for (size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == 1) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(k + 1);
    }
  }
  return ap / positives;
}

template <class Predict>
Metrics evaluate_with(const std::vector<SampleRecord>& data, Predict&& predict) {
  if (data.empty()) throw std::runtime_error("evaluate: empty dataset");
  Metrics m;
  std::vector<double> scores;
  std::vector<int> labels;
  std::map<std::string, std::pair<int, int>> fam_counts;  // correct, total
  std::map<std::string, std::pair<std::vector<double>, int>> fam_p;
  for (const auto& s : data) {
    auto [score, p] = predict(s);
    scores.push_back(score);
    labels.push_back(s.label);
    const int pred = score >= 0.5 ? 1 : 0;
    const std::string fam = s.label == 0 ? "real" : family_name(s.family);
    auto& fc = fam_counts[fam];
    fc.first += pred == s.label ? 1 : 0;
    fc.second += 1;
    auto& fp = fam_p[fam];
    if (fp.first.size() < p.size()) fp.first.resize(p.size(), 0.0);
    for (size_t i = 0; i < p.size(); ++i) fp.first[i] += p[i];
    fp.second += 1;
  }
  int correct = 0;
  for (size_t i = 0; i < scores.size(); ++i)
    correct += (scores[i] >= 0.5 ? 1 : 0) == labels[i] ? 1 : 0;
  m.n = static_cast<int>(scores.size());
  m.acc = static_cast<double>(correct) / m.n;
  m.ap = average_precision(scores, labels);
  for (auto& [fam, fc] : fam_counts)
    m.family_acc[fam] = static_cast<double>(fc.first) / fc.second;
  for (auto& [fam, fp] : fam_p) {
    auto v = fp.first;
    for (auto& x : v) x /= fp.second;
    m.family_p[fam] = v;
  }
  return m;
}

inline Metrics evaluate(const AleiModel<float>& model, const std::vector<SampleRecord>& data,
                        const Pipeline& pipe, const TrainConfig& cfg,
                        const RunFlags& flags = {}) {
  return evaluate_with(data, [&](const SampleRecord& s) {
    auto r = model.forward(pipe.planes(eval_view(s, cfg)), flags);
    std::vector<double> p(r.p.values().begin(), r.p.values().end());
    return std::pair<double, std::vector<double>>(static_cast<double>(r.fused.item()), p);
  });
}

// ---- generic minibatch loop ----

// loss(sample_index, epoch) builds the per-sample graph and returns the
// scalar loss. Gradients are averaged over the batch in a fixed order.
template <class LossFn>
void train_loop(ParamRegistry<float>& params, int n_samples, const TrainConfig& cfg,
                LossFn&& loss) {
  auto trainable = params.trainable();
  Adam<float> opt(trainable, static_cast<float>(cfg.lr), static_cast<float>(cfg.beta1),
                  static_cast<float>(cfg.beta2));
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(static_cast<size_t>(n_samples));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int b0 = 0; b0 < n_samples; b0 += cfg.batch) {
      const int bn = std::min(cfg.batch, n_samples - b0);
      params.zero_grad();
      double batch_loss = 0.0;
      for (int k = 0; k < bn; ++k) {
        Tensor<float> l = loss(order[static_cast<size_t>(b0 + k)], epoch);
        const float lv = l.item();
        if (!std::isfinite(lv))
          throw numerical_error("non-finite loss at epoch " + std::to_string(epoch));
        batch_loss += lv;
        l.backward();
      }
      const float inv = 1.0f / static_cast<float>(bn);
      for (auto* p : trainable) {
        auto& g = const_cast<std::vector<float>&>(p->tensor.grad());
        for (auto& v : g) v *= inv;
      }
      opt.step();
      (void)batch_loss;
    }
    if (cfg.verbose) std::fprintf(stderr, "epoch %d done\n", epoch);
  }
}

// mean training loss of one epoch without updating (for smoke checks)
template <class LossFn>
double mean_loss(int n_samples, LossFn&& loss) {
  double acc = 0.0;
  for (int i = 0; i < n_samples; ++i) acc += loss(i, 0).item();
  return acc / n_samples;
}

// ---- phases ----

inline bool name_has_prefix(const std::string& name, const std::string& prefix) {
  return name.rfind(prefix, 0) == 0;
}

// phase 1 for one modality: LoRA expert, patch embedding and the
// per-modality head, trained with BCE through the frozen base
inline void train_phase1(AleiModel<float>& model, int modality,
                         const std::vector<SampleRecord>& train, const Pipeline& pipe,
                         const TrainConfig& cfg) {
  const std::string lp = "backbone.lora." + std::to_string(modality) + ".";
  const std::string ep = "backbone.embed." + std::to_string(modality) + ".";
  const std::string hp = "heads." + std::to_string(modality) + ".";
  model.set_trainable([&](const std::string& n) {
    return name_has_prefix(n, lp) || name_has_prefix(n, ep) || name_has_prefix(n, hp);
  });
  train_loop(model.params, static_cast<int>(train.size()), cfg, [&](int i, int epoch) {
    const auto& s = train[static_cast<size_t>(i)];
    Tensor<float> planes = pipe.planes(train_view(s, cfg, epoch, static_cast<std::uint64_t>(i)));
    return bce_loss(static_cast<float>(s.label), model.probe_predict(planes, modality));
  });
}

// phase 1 for the adapter's low-level encoder, with its own probe head
inline void train_phase1_encoder(AleiModel<float>& model,
                                 const std::vector<SampleRecord>& train,
                                 const Pipeline& pipe, const TrainConfig& cfg) {
  model.set_trainable([&](const std::string& n) {
    return name_has_prefix(n, "adapter.encoder.") ||
           name_has_prefix(n, "adapter.encoder_head.");
  });
  train_loop(model.params, static_cast<int>(train.size()), cfg, [&](int i, int epoch) {
    const auto& s = train[static_cast<size_t>(i)];
    Tensor<float> planes = pipe.planes(train_view(s, cfg, epoch, static_cast<std::uint64_t>(i)));
    return bce_loss(static_cast<float>(s.label), model.encoder_predict(planes));
  });
}

// phase 2: fusion gates, adapter, router and heads with the total loss;
// LoRA stays trainable unless frozen; the base and embeddings stay fixed
inline void train_phase2(AleiModel<float>& model, const std::vector<SampleRecord>& train,
                         const Pipeline& pipe, const TrainConfig& cfg,
                         const RunFlags& flags = {}) {
  model.set_trainable([&](const std::string& n) {
    if (flags.dfs) {
      if (name_has_prefix(n, "router.") || name_has_prefix(n, "heads.")) return true;
    } else {
      if (name_has_prefix(n, "head.shared.")) return true;
    }
    if (flags.fusion && name_has_prefix(n, "backbone.fuse.")) return true;
    if (flags.adapter && name_has_prefix(n, "adapter.") &&
        !name_has_prefix(n, "adapter.encoder_head."))
      return true;
    if (flags.lora && !cfg.freeze_lora_phase2 && name_has_prefix(n, "backbone.lora."))
      return true;
    return false;
  });
  train_loop(model.params, static_cast<int>(train.size()), cfg, [&](int i, int epoch) {
    const auto& s = train[static_cast<size_t>(i)];
    Tensor<float> planes = pipe.planes(train_view(s, cfg, epoch, static_cast<std::uint64_t>(i)));
    auto r = model.forward(planes, flags);
    return total_loss(static_cast<float>(s.label), r.fused, r.p,
                      static_cast<float>(cfg.lambda), cfg.moe_sign);
  });
}

// ---- baselines ----

// concatenated phase-1 CLS features, single trained affine head
inline Metrics late_fusion_baseline(AleiModel<float>& model,
                                    const std::vector<SampleRecord>& train,
                                    const std::vector<SampleRecord>& test,
                                    const Pipeline& pipe, const TrainConfig& cfg) {
  RunFlags flags;
  flags.fusion = false;
  flags.adapter = false;
  flags.dfs = false;
  model.set_trainable([&](const std::string& n) { return name_has_prefix(n, "head.shared."); });
  train_loop(model.params, static_cast<int>(train.size()), cfg, [&](int i, int epoch) {
    const auto& s = train[static_cast<size_t>(i)];
    Tensor<float> planes = pipe.planes(train_view(s, cfg, epoch, static_cast<std::uint64_t>(i)));
    auto r = model.forward(planes, flags);
    return bce_loss(static_cast<float>(s.label), r.fused);
  });
  return evaluate(model, test, pipe, cfg, flags);
}

// per-stream 1x1 mixers summed into one stream, one expert and one head
inline Metrics early_fusion_baseline(AleiModel<float>& model,
                                     const std::vector<SampleRecord>& train,
                                     const std::vector<SampleRecord>& test,
                                     const Pipeline& pipe, const TrainConfig& cfg) {
  model.set_trainable([&](const std::string& n) {
    return name_has_prefix(n, "earlyfuse.") || name_has_prefix(n, "backbone.lora.0.") ||
           name_has_prefix(n, "backbone.embed.0.") || name_has_prefix(n, "heads.0.");
  });
  train_loop(model.params, static_cast<int>(train.size()), cfg, [&](int i, int epoch) {
    const auto& s = train[static_cast<size_t>(i)];
    Tensor<float> planes = pipe.planes(train_view(s, cfg, epoch, static_cast<std::uint64_t>(i)));
    return bce_loss(static_cast<float>(s.label), model.early_fusion_predict(planes));
  });
  return evaluate_with(test, [&](const SampleRecord& s) {
    Tensor<float> planes = pipe.planes(eval_view(s, cfg));
    const double score = static_cast<double>(model.early_fusion_predict(planes).item());
    return std::pair<double, std::vector<double>>(score, {});
  });
}

// ---- checkpoint helpers ----

inline Checkpoint full_checkpoint(const AleiModel<float>& model, const Pipeline& pipe) {
  Checkpoint ck = model.save();
  for (const auto& [kind, st] : pipe.stats) {
    ck.put_scalar("stats." + kind + ".mean", st.mean);
    ck.put_scalar("stats." + kind + ".std", st.stdev);
  }
  return ck;
}

inline StandardizeStats stats_from_checkpoint(const Checkpoint& ck) {
  StandardizeStats out;
  for (const auto& [name, e] : ck.entries) {
    if (!name_has_prefix(name, "stats.")) continue;
    const auto rest = name.substr(6);
    const auto dot = rest.find('.');
    const std::string kind = rest.substr(0, dot);
    const std::string field = rest.substr(dot + 1);
    auto& st = out[kind];
    if (field == "mean")
      st.mean = ck.get_scalar(name);
    else
      st.stdev = ck.get_scalar(name);
  }
  return out;
}

}  // namespace alei
