// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "alei/tensor.hpp"

// Deterministic maps from an RGB image to low-level information planes.
// All extractors are pure functions of the pixel data; every non-IMAGE
// kind maps constant images to exactly zero (before standardization).

namespace alei {

enum class ExtractorKind { IMAGE, SRM, NPR, BAYAR, HPR };

inline std::string kind_name(ExtractorKind k) {
  switch (k) {
    case ExtractorKind::IMAGE: return "image";
    case ExtractorKind::SRM: return "srm";
    case ExtractorKind::NPR: return "npr";
    case ExtractorKind::BAYAR: return "bayar";
    case ExtractorKind::HPR: return "hpr";
  }
  return "?";
}

inline ExtractorKind kind_from_name(const std::string& s) {
  if (s == "image") return ExtractorKind::IMAGE;
  if (s == "srm") return ExtractorKind::SRM;
  if (s == "npr") return ExtractorKind::NPR;
  if (s == "bayar") return ExtractorKind::BAYAR;
  if (s == "hpr") return ExtractorKind::HPR;
  throw std::runtime_error("unknown extractor kind: " + s);
}

namespace img {

// reflection index into [0,n)
inline int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

// per-channel 2D correlation with reflection padding, "same" output
template <class T>
std::vector<T> correlate_reflect(const std::vector<T>& ch, int H, int W,
                                 const std::vector<T>& k, int kh, int kw) {
  if (H < kh || W < kw)
    throw dim_error("correlate_reflect: image " + std::to_string(H) + "x" +
                    std::to_string(W) + " smaller than kernel");
  std::vector<T> out(static_cast<size_t>(H) * W, T(0));
  const int cy = kh / 2, cx = kw / 2;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      T acc = T(0);
      for (int dy = 0; dy < kh; ++dy)
        for (int dx = 0; dx < kw; ++dx) {
          const int iy = reflect(y + dy - cy, H);
          const int ix = reflect(x + dx - cx, W);
          acc += k[static_cast<size_t>(dy * kw + dx)] * ch[static_cast<size_t>(iy * W + ix)];
        }
      out[static_cast<size_t>(y * W + x)] = acc;
    }
  return out;
}

template <class T>
std::vector<T> gaussian_kernel_1d(T sigma) {
  const int r = static_cast<int>(std::ceil(T(3) * sigma));
  std::vector<T> k(static_cast<size_t>(2 * r + 1));
  T s = T(0);
  for (int i = -r; i <= r; ++i) {
    k[static_cast<size_t>(i + r)] = std::exp(-static_cast<T>(i * i) / (T(2) * sigma * sigma));
    s += k[static_cast<size_t>(i + r)];
  }
  for (auto& v : k) v /= s;
  return k;
}

// separable gaussian blur, reflection padding
template <class T>
std::vector<T> blur_channel(const std::vector<T>& ch, int H, int W, T sigma) {
  auto k = gaussian_kernel_1d(sigma);
  const int r = static_cast<int>(k.size()) / 2;
  std::vector<T> tmp(ch.size()), out(ch.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      T acc = T(0);
      for (int d = -r; d <= r; ++d)
        acc += k[static_cast<size_t>(d + r)] * ch[static_cast<size_t>(y * W + reflect(x + d, W))];
      tmp[static_cast<size_t>(y * W + x)] = acc;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      T acc = T(0);
      for (int d = -r; d <= r; ++d)
        acc += k[static_cast<size_t>(d + r)] * tmp[static_cast<size_t>(reflect(y + d, H) * W + x)];
      out[static_cast<size_t>(y * W + x)] = acc;
    }
  return out;
}

}  // namespace img

template <class T>
Tensor<T> gaussian_blur(const Tensor<T>& x, T sigma) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto out = Tensor<T>::zeros(x.shape());
  for (int c = 0; c < C; ++c) {
    std::vector<T> ch(x.data() + static_cast<size_t>(c) * H * W,
                      x.data() + static_cast<size_t>(c + 1) * H * W);
    auto b = img::blur_channel(ch, H, W, sigma);
    std::copy(b.begin(), b.end(), out.data() + static_cast<size_t>(c) * H * W);
  }
  return out;
}

// The 3-kernel SRM subset: first-order, second-order and 5x5 SQUARE
// residuals. Output channel j is kernel j applied to input channel j.
template <class T>
std::vector<std::vector<T>> srm_kernels() {
  std::vector<std::vector<T>> ks(3);
  // first order (scaled second difference), 3x3
  ks[0] = {0, 0, 0, T(0.5), T(-1), T(0.5), 0, 0, 0};
  // second order edge, 3x3, 1/4
  ks[1] = {T(-0.25), T(0.5), T(-0.25),
           T(0.5),  T(-1),  T(0.5),
           T(-0.25), T(0.5), T(-0.25)};
  // SQUARE 5x5, 1/12
  const T q = T(1) / T(12);
  ks[2] = {-1 * q, 2 * q,  -2 * q,  2 * q,  -1 * q,
           2 * q,  -6 * q, 8 * q,   -6 * q, 2 * q,
           -2 * q, 8 * q,  -12 * q, 8 * q,  -2 * q,
           2 * q,  -6 * q, 8 * q,   -6 * q, 2 * q,
           -1 * q, 2 * q,  -2 * q,  2 * q,  -1 * q};
  return ks;
}

template <class T>
Tensor<T> extract_srm(const Tensor<T>& x) {
  const int H = x.dim(1), W = x.dim(2);
  if (H < 5 || W < 5)
    throw dim_error("extract_srm: image smaller than 5x5: " + shape_str(x.shape()));
  auto ks = srm_kernels<T>();
  auto out = Tensor<T>::zeros(x.shape());
  for (int c = 0; c < 3; ++c) {
    const int kw = c == 2 ? 5 : 3;
    std::vector<T> ch(x.data() + static_cast<size_t>(c) * H * W,
                      x.data() + static_cast<size_t>(c + 1) * H * W);
    auto r = img::correlate_reflect(ch, H, W, ks[static_cast<size_t>(c)], kw, kw);
    std::copy(r.begin(), r.end(), out.data() + static_cast<size_t>(c) * H * W);
  }
  return out;
}

// residual against factor-f average-down / nearest-up reconstruction
template <class T>
Tensor<T> extract_npr(const Tensor<T>& x, int factor = 2) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H % factor != 0 || W % factor != 0)
    throw dim_error("extract_npr: " + shape_str(x.shape()) +
                    " not divisible by factor " + std::to_string(factor));
  auto out = Tensor<T>::zeros(x.shape());
  const T inv = T(1) / static_cast<T>(factor * factor);
  for (int c = 0; c < C; ++c)
    for (int by = 0; by < H / factor; ++by)
      for (int bx = 0; bx < W / factor; ++bx) {
        T m = T(0);
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            m += x.data()[static_cast<size_t>((c * H + by * factor + dy) * W + bx * factor + dx)];
        m *= inv;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) {
            const size_t i = static_cast<size_t>((c * H + by * factor + dy) * W + bx * factor + dx);
            out.data()[i] = x.data()[i] - m;
          }
      }
  return out;
}

// Re-impose the constrained-convolution condition: center tap -1,
// off-center taps rescaled to sum to 1.
template <class T>
Tensor<T> project_bayar(const Tensor<T>& k) {
  if (k.rank() != 2 || k.dim(0) != 5 || k.dim(1) != 5)
    throw dim_error("project_bayar: expects 5x5 kernel, got " + shape_str(k.shape()));
  auto out = Tensor<T>::from(k.shape(), k.values());
  T off_sum = T(0);
  for (int i = 0; i < 25; ++i)
    if (i != 12) off_sum += out.data()[i];
  if (std::abs(off_sum) < T(1e-12)) {
    for (int i = 0; i < 25; ++i) out.data()[i] = T(1) / T(24);
  } else {
    for (int i = 0; i < 25; ++i) out.data()[i] /= off_sum;
  }
  out.data()[12] = T(-1);
  return out;
}

// canonical starting kernel: center -1, uniform off-center taps
template <class T>
Tensor<T> bayar_default_kernel() {
  return project_bayar(Tensor<T>::filled({5, 5}, T(1)));
}

template <class T>
void check_bayar_constraint(const Tensor<T>& k) {
  if (k.rank() != 2 || k.dim(0) != 5 || k.dim(1) != 5)
    throw dim_error("bayar kernel must be 5x5, got " + shape_str(k.shape()));
  T off_sum = T(0);
  for (int i = 0; i < 25; ++i)
    if (i != 12) off_sum += k.data()[i];
  if (std::abs(k.data()[12] + T(1)) > T(1e-6) || std::abs(off_sum - T(1)) > T(1e-6))
    throw std::runtime_error("bayar constraint violated: center=" +
                             std::to_string(static_cast<double>(k.data()[12])) +
                             " off_sum=" + std::to_string(static_cast<double>(off_sum)));
}

template <class T>
Tensor<T> extract_bayar(const Tensor<T>& x, const Tensor<T>& kernel) {
  check_bayar_constraint(kernel);
  const int H = x.dim(1), W = x.dim(2);
  auto out = Tensor<T>::zeros(x.shape());
  for (int c = 0; c < 3; ++c) {
    std::vector<T> ch(x.data() + static_cast<size_t>(c) * H * W,
                      x.data() + static_cast<size_t>(c + 1) * H * W);
    auto r = img::correlate_reflect(ch, H, W, kernel.values(), 5, 5);
    std::copy(r.begin(), r.end(), out.data() + static_cast<size_t>(c) * H * W);
  }
  return out;
}

// high-pass residual: x - gaussian_blur(x, sigma). Stand-in for learned
// denoiser residuals behind the same extractor interface.
template <class T>
Tensor<T> extract_hpr(const Tensor<T>& x, T sigma = T(1)) {
  if (sigma <= T(0)) throw std::runtime_error("extract_hpr: sigma must be > 0");
  auto b = gaussian_blur(x, sigma);
  auto out = Tensor<T>::zeros(x.shape());
  for (long long i = 0; i < x.numel(); ++i)
    out.data()[i] = x.data()[i] - b.data()[i];
  return out;
}

struct ExtractorConfig {
  std::vector<ExtractorKind> kinds{ExtractorKind::IMAGE, ExtractorKind::SRM,
                                   ExtractorKind::NPR, ExtractorKind::BAYAR};
  int npr_factor = 2;
  double hpr_sigma = 1.0;

  void validate() const {
    int n_image = 0;
    for (size_t i = 0; i < kinds.size(); ++i) {
      if (kinds[i] == ExtractorKind::IMAGE) ++n_image;
      for (size_t j = i + 1; j < kinds.size(); ++j)
        if (kinds[i] == kinds[j])
          throw std::runtime_error("duplicate extractor kind: " + kind_name(kinds[i]));
    }
    if (n_image != 1 || kinds.size() < 2)
      throw std::runtime_error(
          "extractor list must contain IMAGE exactly once plus at least one "
          "low-level kind");
  }
  int num_modalities() const { return static_cast<int>(kinds.size()); }
};

struct KindStats {
  double mean = 0.0;
  double stdev = 1.0;
};

// dataset-level standardization statistics, frozen from the training split
using StandardizeStats = std::map<std::string, KindStats>;

template <class T>
Tensor<T> extract_one(const Tensor<T>& x, ExtractorKind k, const ExtractorConfig& cfg) {
  switch (k) {
    case ExtractorKind::IMAGE: return Tensor<T>::from(x.shape(), x.values());
    case ExtractorKind::SRM: return extract_srm(x);
    case ExtractorKind::NPR: return extract_npr(x, cfg.npr_factor);
    case ExtractorKind::BAYAR: return extract_bayar(x, bayar_default_kernel<T>());
    case ExtractorKind::HPR: return extract_hpr(x, static_cast<T>(cfg.hpr_sigma));
  }
  throw std::runtime_error("unreachable extractor kind");
}

// All configured planes for one image, standardized with the given stats
// and clamped to [-4, 4]. Returns [(M+1)*3, H, W].
template <class T>
Tensor<T> extract_all(const Tensor<T>& x, const ExtractorConfig& cfg,
                      const StandardizeStats& stats) {
  cfg.validate();
  const int H = x.dim(1), W = x.dim(2);
  auto out = Tensor<T>::zeros({static_cast<int>(cfg.kinds.size()) * 3, H, W});
  for (size_t m = 0; m < cfg.kinds.size(); ++m) {
    Tensor<T> plane = extract_one(x, cfg.kinds[m], cfg);
    auto it = stats.find(kind_name(cfg.kinds[m]));
    const KindStats ks = it == stats.end() ? KindStats{} : it->second;
    const T mu = static_cast<T>(ks.mean);
    const T inv = static_cast<T>(1.0 / std::max(ks.stdev, 1e-8));
    for (long long i = 0; i < plane.numel(); ++i) {
      T v = (plane.data()[i] - mu) * inv;
      out.data()[static_cast<long long>(m) * 3 * H * W + i] =
          std::clamp(v, T(-4), T(4));
    }
  }
  return out;
}

// Accumulates per-kind mean/std over a training split.
template <class T>
class StatsAccumulator {
 public:
  explicit StatsAccumulator(const ExtractorConfig& cfg) : cfg_(cfg) {}

  void add(const Tensor<T>& x) {
    for (auto k : cfg_.kinds) {
      Tensor<T> plane = extract_one(x, k, cfg_);
      auto& a = acc_[kind_name(k)];
      for (long long i = 0; i < plane.numel(); ++i) {
        const double v = static_cast<double>(plane.data()[i]);
        a.s += v;
        a.s2 += v * v;
        a.n += 1;
      }
    }
  }

  StandardizeStats finish() const {
    StandardizeStats out;
    for (auto& [name, a] : acc_) {
      KindStats ks;
      ks.mean = a.s / std::max<long long>(a.n, 1);
      const double var = a.s2 / std::max<long long>(a.n, 1) - ks.mean * ks.mean;
      ks.stdev = std::sqrt(std::max(var, 1e-12));
      out[name] = ks;
    }
    return out;
  }

 private:
  struct Acc {
    double s = 0, s2 = 0;
    long long n = 0;
  };
  ExtractorConfig cfg_;
  std::map<std::string, Acc> acc_;
};

}  // namespace alei
