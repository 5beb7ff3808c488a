// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "alei/extractors.hpp"
#include "alei/tensor.hpp"

namespace alei {

enum class Family : std::uint8_t { NONE = 0, UP = 1, HF = 2, CB = 3 };

inline std::string family_name(Family f) {
  switch (f) {
    case Family::NONE: return "none";
    case Family::UP: return "up";
    case Family::HF: return "hf";
    case Family::CB: return "cb";
  }
  return "?";
}

inline Family family_from_name(const std::string& s) {
  if (s == "none") return Family::NONE;
  if (s == "up") return Family::UP;
  if (s == "hf") return Family::HF;
  if (s == "cb") return Family::CB;
  throw std::runtime_error("unknown forgery family: " + s);
}

struct SampleRecord {
  std::uint8_t label = 0;  // 0=real, 1=fake
  Family family = Family::NONE;
  Tensor<float> image;  // [C,H,W], values in [0,1]
};

struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- binary dataset container ("ALDS") ----
// header: magic "ALDS", u16 version=1, u8 reserved, u32 count  (11 bytes)
// record: u8 label, u8 family, u16 C, u16 H, u16 W, C*H*W little-endian f32

inline void write_dataset(const std::string& path, const std::vector<SampleRecord>& samples) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw format_error("cannot open for writing: " + path);
  f.write("ALDS", 4);
  const std::uint16_t version = 1;
  const std::uint8_t reserved = 0;
  const std::uint32_t count = static_cast<std::uint32_t>(samples.size());
  f.write(reinterpret_cast<const char*>(&version), 2);
  f.write(reinterpret_cast<const char*>(&reserved), 1);
  f.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& s : samples) {
    const std::uint8_t fam = static_cast<std::uint8_t>(s.family);
    const std::uint16_t C = static_cast<std::uint16_t>(s.image.dim(0));
    const std::uint16_t H = static_cast<std::uint16_t>(s.image.dim(1));
    const std::uint16_t W = static_cast<std::uint16_t>(s.image.dim(2));
    f.write(reinterpret_cast<const char*>(&s.label), 1);
    f.write(reinterpret_cast<const char*>(&fam), 1);
    f.write(reinterpret_cast<const char*>(&C), 2);
    f.write(reinterpret_cast<const char*>(&H), 2);
    f.write(reinterpret_cast<const char*>(&W), 2);
    f.write(reinterpret_cast<const char*>(s.image.data()),
            static_cast<std::streamsize>(s.image.numel() * 4));
  }
  if (!f) throw format_error("write failed: " + path);
}

inline std::vector<SampleRecord> read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw format_error("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != "ALDS")
    throw format_error("bad magic at offset 0 in " + path);
  std::uint16_t version;
  std::uint8_t reserved;
  std::uint32_t count;
  f.read(reinterpret_cast<char*>(&version), 2);
  f.read(reinterpret_cast<char*>(&reserved), 1);
  f.read(reinterpret_cast<char*>(&count), 4);
  if (!f) throw format_error("truncated header (offset " +
                             std::to_string(f.tellg() == -1 ? 4 : static_cast<long>(f.tellg())) +
                             ") in " + path);
  if (version != 1)
    throw format_error("unsupported dataset version " + std::to_string(version));
  std::vector<SampleRecord> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const long off = static_cast<long>(f.tellg());
    SampleRecord s;
    std::uint8_t fam;
    std::uint16_t C, H, W;
    f.read(reinterpret_cast<char*>(&s.label), 1);
    f.read(reinterpret_cast<char*>(&fam), 1);
    f.read(reinterpret_cast<char*>(&C), 2);
    f.read(reinterpret_cast<char*>(&H), 2);
    f.read(reinterpret_cast<char*>(&W), 2);
    if (!f)
      throw format_error("truncated record header at offset " + std::to_string(off) +
                         " in " + path);
    s.family = static_cast<Family>(fam);
    s.image = Tensor<float>::zeros({C, H, W});
    f.read(reinterpret_cast<char*>(s.image.data()),
           static_cast<std::streamsize>(s.image.numel() * 4));
    if (!f)
      throw format_error("truncated payload at offset " + std::to_string(off) +
                         " in " + path);
    out.push_back(std::move(s));
  }
  return out;
}

// ---- synthetic corpus ----

struct GenConfig {
  int size = 32;
  double real_sigma_min = 0.8, real_sigma_max = 2.0;
  int up_factor = 2;
  int up_shift = 1;       // circular shift after upsampling, misaligns blocks
  double hf_band = 0.75;   // band threshold as fraction of spectrum
  double hf_boost = 2.0;   // amplitude multiplier for the replaced band
  double hf_floor = 0.25;  // amplitude floor, fraction of full non-DC RMS
  double cb_amp = 0.002;  // checkerboard amplitude
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// band-limited gaussian random field, rescaled per channel to [0,1]
inline Tensor<float> gen_real_image(std::uint64_t seed, std::uint64_t index,
                                    const GenConfig& cfg) {
  std::mt19937_64 rng(mix_seed(seed, index));
  const int S = cfg.size;
  auto img = Tensor<float>::zeros({3, S, S});
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(cfg.real_sigma_min, cfg.real_sigma_max);
  for (int c = 0; c < 3; ++c) {
    std::vector<float> noise(static_cast<size_t>(S) * S);
    for (auto& v : noise) v = static_cast<float>(nd(rng));
    const float sigma = static_cast<float>(ud(rng));
    auto b = img::blur_channel(noise, S, S, sigma);
    float lo = b[0], hi = b[0];
    for (float v : b) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const float span = std::max(hi - lo, 1e-8f);
    for (int i = 0; i < S * S; ++i)
      img.data()[static_cast<size_t>(c) * S * S + i] = (b[static_cast<size_t>(i)] - lo) / span;
  }
  return img;
}

namespace dct {

// orthonormal DCT-II basis matrix, n x n
inline std::vector<double> basis(int n) {
  std::vector<double> M(static_cast<size_t>(n) * n);
  const double pi = 3.14159265358979323846;
  for (int k = 0; k < n; ++k) {
    const double a = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i)
      M[static_cast<size_t>(k * n + i)] = a * std::cos(pi * (i + 0.5) * k / n);
  }
  return M;
}

// out = M * X * M^T (forward=true) or M^T * X * M (inverse), n x n blocks
inline void transform(const std::vector<double>& M, std::vector<double>& X, int n,
                      bool forward) {
  std::vector<double> tmp(static_cast<size_t>(n) * n, 0.0), out(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int k = 0; k < n; ++k)
        acc += (forward ? M[static_cast<size_t>(i * n + k)] : M[static_cast<size_t>(k * n + i)]) * X[static_cast<size_t>(k * n + j)];
      tmp[static_cast<size_t>(i * n + j)] = acc;
    }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int k = 0; k < n; ++k)
        acc += tmp[static_cast<size_t>(i * n + k)] * (forward ? M[static_cast<size_t>(j * n + k)] : M[static_cast<size_t>(k * n + j)]);
      out[static_cast<size_t>(i * n + j)] = acc;
    }
  X = out;
}

}  // namespace dct

// fake families, built from gen_real content
inline Tensor<float> gen_fake_image(std::uint64_t seed, std::uint64_t index,
                                    Family family, const GenConfig& cfg) {
  Tensor<float> img = gen_real_image(seed, index, cfg);
  const int S = cfg.size;
  std::mt19937_64 rng(mix_seed(seed ^ 0xF00Dull, index));
  std::normal_distribution<double> nd(0.0, 1.0);
  switch (family) {
    case Family::UP: {
      const int f = cfg.up_factor;
      if (S % f != 0) throw dim_error("gen_fake: size not divisible by up factor");
      auto out = Tensor<float>::zeros(img.shape());
      for (int c = 0; c < 3; ++c)
        for (int by = 0; by < S / f; ++by)
          for (int bx = 0; bx < S / f; ++bx) {
            float m = 0;
            for (int dy = 0; dy < f; ++dy)
              for (int dx = 0; dx < f; ++dx)
                m += img.data()[static_cast<size_t>((c * S + by * f + dy) * S + bx * f + dx)];
            m /= static_cast<float>(f * f);
            for (int dy = 0; dy < f; ++dy)
              for (int dx = 0; dx < f; ++dx) {
                // circular shift so the synthesis grid does not coincide
                // with the analysis grid of downstream residual extractors
                const int y = (by * f + dy + cfg.up_shift) % S;
                const int x = (bx * f + dx + cfg.up_shift) % S;
                out.data()[static_cast<size_t>((c * S + y) * S + x)] = m;
              }
          }
      img = out;
      break;
    }
    case Family::HF: {
      auto M = dct::basis(S);
      const double thr = cfg.hf_band * (S - 1);
      for (int c = 0; c < 3; ++c) {
        std::vector<double> X(static_cast<size_t>(S) * S);
        for (int i = 0; i < S * S; ++i)
          X[static_cast<size_t>(i)] = img.data()[static_cast<size_t>(c) * S * S + i];
        dct::transform(M, X, S, true);
        double band_e = 0, full_e = 0;
        long band_n = 0;
        for (int u = 0; u < S; ++u)
          for (int v = 0; v < S; ++v) {
            const double e = X[static_cast<size_t>(u * S + v)] * X[static_cast<size_t>(u * S + v)];
            if (u + v > 0) full_e += e;  // exclude DC
            if (std::max(u, v) >= thr) {
              band_e += e;
              ++band_n;
            }
          }
        // smooth sources leave the band nearly empty, so floor the noise
        // amplitude at a fraction of the overall (non-DC) spectrum RMS
        const double rms = std::max(std::sqrt(band_e / std::max<long>(band_n, 1)),
                                    cfg.hf_floor * std::sqrt(full_e / (S * S - 1)));
        for (int u = 0; u < S; ++u)
          for (int v = 0; v < S; ++v)
            if (std::max(u, v) >= thr)
              X[static_cast<size_t>(u * S + v)] = nd(rng) * rms * cfg.hf_boost;
        dct::transform(M, X, S, false);
        for (int i = 0; i < S * S; ++i)
          img.data()[static_cast<size_t>(c) * S * S + i] = static_cast<float>(X[static_cast<size_t>(i)]);
      }
      break;
    }
    case Family::CB: {
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < S; ++y)
          for (int x = 0; x < S; ++x) {
            const float sgn = ((x + y) & 1) ? -1.0f : 1.0f;
            img.data()[static_cast<size_t>((c * S + y) * S + x)] += sgn * static_cast<float>(cfg.cb_amp);
          }
      break;
    }
    case Family::NONE:
      throw std::runtime_error("gen_fake: family NONE is not a forgery family");
  }
  for (long long i = 0; i < img.numel(); ++i)
    img.data()[i] = std::clamp(img.data()[i], 0.0f, 1.0f);
  return img;
}

inline std::vector<SampleRecord> gen_real(std::uint64_t seed, int n, const GenConfig& cfg) {
  std::vector<SampleRecord> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    out.push_back({0, Family::NONE, gen_real_image(seed, static_cast<std::uint64_t>(i), cfg)});
  return out;
}

inline std::vector<SampleRecord> gen_fake(std::uint64_t seed, int n, Family family,
                                          const GenConfig& cfg) {
  std::vector<SampleRecord> out;
  out.reserve(static_cast<size_t>(n));
  // offset the index space so fakes never reuse a real sample's field
  const std::uint64_t base = 0x100000ull * (static_cast<std::uint64_t>(family) + 1);
  for (int i = 0; i < n; ++i)
    out.push_back({1, family,
                   gen_fake_image(seed, base + static_cast<std::uint64_t>(i), family, cfg)});
  return out;
}

// ---- robustness distortions ----

enum class DistortionKind { NONE, BLUR, DOWNSAMPLE, JPEGQ };

inline std::string distortion_name(DistortionKind k) {
  switch (k) {
    case DistortionKind::NONE: return "none";
    case DistortionKind::BLUR: return "blur";
    case DistortionKind::DOWNSAMPLE: return "down";
    case DistortionKind::JPEGQ: return "jpeg";
  }
  return "?";
}

inline DistortionKind distortion_from_name(const std::string& s) {
  if (s == "none") return DistortionKind::NONE;
  if (s == "blur") return DistortionKind::BLUR;
  if (s == "down") return DistortionKind::DOWNSAMPLE;
  if (s == "jpeg") return DistortionKind::JPEGQ;
  throw std::runtime_error("unknown distortion: " + s);
}

struct DistortionConfig {
  DistortionKind kind = DistortionKind::NONE;
  double blur_sigma = 1.0;
  double down_ratio = 0.5;
  int jpeg_quality = 95;

  void validate() const {
    if (blur_sigma <= 0) throw std::runtime_error("blur sigma must be > 0");
    if (down_ratio <= 0 || down_ratio >= 1)
      throw std::runtime_error("downsample ratio must be in (0,1)");
    if (jpeg_quality < 1 || jpeg_quality > 100)
      throw std::runtime_error("jpeg quality must be in [1,100]");
  }
};

inline std::vector<float> bilinear_resize(const std::vector<float>& ch, int H, int W,
                                          int Ho, int Wo) {
  std::vector<float> out(static_cast<size_t>(Ho) * Wo);
  for (int y = 0; y < Ho; ++y)
    for (int x = 0; x < Wo; ++x) {
      const float sy = Ho > 1 ? static_cast<float>(y) * (H - 1) / (Ho - 1) : 0.0f;
      const float sx = Wo > 1 ? static_cast<float>(x) * (W - 1) / (Wo - 1) : 0.0f;
      const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
      const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
      const float fy = sy - y0, fx = sx - x0;
      const float v =
          (1 - fy) * ((1 - fx) * ch[static_cast<size_t>(y0 * W + x0)] + fx * ch[static_cast<size_t>(y0 * W + x1)]) +
          fy * ((1 - fx) * ch[static_cast<size_t>(y1 * W + x0)] + fx * ch[static_cast<size_t>(y1 * W + x1)]);
      out[static_cast<size_t>(y * Wo + x)] = v;
    }
  return out;
}

// standard JPEG luminance quantization table
inline const std::array<int, 64>& jpeg_luma_table() {
  static const std::array<int, 64> t = {
      16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
      14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
      18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
      49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
  return t;
}

// blockwise-DCT quantization surrogate for JPEG (no entropy coding)
inline std::vector<float> jpeg_surrogate_channel(const std::vector<float>& ch, int H,
                                                 int W, int quality) {
  const int scale_pct = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<double, 64> q;
  for (int i = 0; i < 64; ++i)
    q[static_cast<size_t>(i)] = std::clamp((jpeg_luma_table()[static_cast<size_t>(i)] * scale_pct + 50) / 100, 1, 255);
  static const std::vector<double> M8 = dct::basis(8);
  std::vector<float> out = ch;
  for (int by = 0; by + 8 <= H; by += 8)
    for (int bx = 0; bx + 8 <= W; bx += 8) {
      std::vector<double> X(64);
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          X[static_cast<size_t>(y * 8 + x)] = ch[static_cast<size_t>((by + y) * W + bx + x)] * 255.0 - 128.0;
      dct::transform(M8, X, 8, true);
      for (int i = 0; i < 64; ++i)
        X[static_cast<size_t>(i)] = std::round(X[static_cast<size_t>(i)] / q[static_cast<size_t>(i)]) * q[static_cast<size_t>(i)];
      dct::transform(M8, X, 8, false);
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          out[static_cast<size_t>((by + y) * W + bx + x)] = static_cast<float>((X[static_cast<size_t>(y * 8 + x)] + 128.0) / 255.0);
    }
  return out;
}

inline Tensor<float> apply_distortion(const Tensor<float>& image, const DistortionConfig& cfg) {
  cfg.validate();
  if (cfg.kind == DistortionKind::NONE)
    return Tensor<float>::from(image.shape(), image.values());
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  auto out = Tensor<float>::zeros(image.shape());
  for (int c = 0; c < C; ++c) {
    std::vector<float> ch(image.data() + static_cast<size_t>(c) * H * W,
                          image.data() + static_cast<size_t>(c + 1) * H * W);
    std::vector<float> r;
    switch (cfg.kind) {
      case DistortionKind::BLUR:
        r = img::blur_channel(ch, H, W, static_cast<float>(cfg.blur_sigma));
        break;
      case DistortionKind::DOWNSAMPLE: {
        const int Hs = std::max(1, static_cast<int>(std::lround(H * cfg.down_ratio)));
        const int Ws = std::max(1, static_cast<int>(std::lround(W * cfg.down_ratio)));
        r = bilinear_resize(bilinear_resize(ch, H, W, Hs, Ws), Hs, Ws, H, W);
        break;
      }
      case DistortionKind::JPEGQ:
        r = jpeg_surrogate_channel(ch, H, W, cfg.jpeg_quality);
        break;
      case DistortionKind::NONE:
        r = ch;
        break;
    }
    for (int i = 0; i < H * W; ++i)
      out.data()[static_cast<size_t>(c) * H * W + i] = std::clamp(r[static_cast<size_t>(i)], 0.0f, 1.0f);
  }
  return out;
}

}  // namespace alei
