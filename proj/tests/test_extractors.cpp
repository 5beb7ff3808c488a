// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "alei/extractors.hpp"

using namespace alei;

namespace {

Tensor<double> constant_image(int S, double v) { return Tensor<double>::filled({3, S, S}, v); }

}  // namespace

TEST(Srm, ConstantImageMapsToZero) {
  auto r = extract_srm(constant_image(8, 0.7));
  for (double v : r.values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Srm, LinearRampKillsSecondDifference) {
  // horizontal ramp through the first-order kernel [0.5,-1,0.5] row
  auto img = Tensor<double>::zeros({3, 8, 8});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        img.data()[static_cast<size_t>((c * 8 + y) * 8 + x)] = 0.1 * x;
  auto r = extract_srm(img);
  // channel 0 uses the first-order kernel; interior response is zero
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x)
      EXPECT_NEAR(r.values()[static_cast<size_t>((0 * 8 + y) * 8 + x)], 0.0, 1e-12);
}

TEST(Srm, ImpulseReproducesKernel) {
  auto img = Tensor<double>::zeros({3, 11, 11});
  for (int c = 0; c < 3; ++c) img.data()[static_cast<size_t>((c * 11 + 5) * 11 + 5)] = 1.0;
  auto r = extract_srm(img);
  auto ks = srm_kernels<double>();
  for (int c = 0; c < 3; ++c) {
    const int kw = c == 2 ? 5 : 3;
    const int h = kw / 2;
    // cross-correlation of an impulse yields the flipped kernel; all three
    // SRM kernels are symmetric, so the response equals the kernel
    for (int dy = -h; dy <= h; ++dy)
      for (int dx = -h; dx <= h; ++dx)
        EXPECT_NEAR(r.values()[static_cast<size_t>((c * 11 + 5 + dy) * 11 + 5 + dx)],
                    ks[static_cast<size_t>(c)][static_cast<size_t>((dy + h) * kw + dx + h)], 1e-12)
            << "channel " << c;
  }
}

TEST(Srm, TooSmallImageThrows) {
  EXPECT_THROW(extract_srm(constant_image(4, 0.0)), dim_error);
}

TEST(Npr, ConstantImageMapsToZero) {
  auto r = extract_npr(constant_image(8, 0.3));
  for (double v : r.values()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Npr, NonDivisibleThrows) {
  EXPECT_THROW(extract_npr(constant_image(7, 0.0)), dim_error);
}

TEST(Npr, NullSpaceBruteForceOn4x4) {
  // every 2x nearest-neighbor upsample of a 2x2 image is in the null space;
  // enumerate all 16 binary 2x2 sources
  for (int bits = 0; bits < 16; ++bits) {
    auto img = Tensor<double>::zeros({3, 4, 4});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
          const int b = (y / 2) * 2 + (x / 2);
          img.data()[static_cast<size_t>((c * 4 + y) * 4 + x)] = (bits >> b) & 1;
        }
    auto r = extract_npr(img, 2);
    for (double v : r.values()) ASSERT_NEAR(v, 0.0, 1e-15) << "bits=" << bits;
  }
}

TEST(Npr, CheckerboardIsItsOwnResidual) {
  auto img = Tensor<double>::zeros({3, 4, 4});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        img.data()[static_cast<size_t>((c * 4 + y) * 4 + x)] = ((x + y) & 1) ? -1.0 : 1.0;
  auto r = extract_npr(img, 2);
  for (long long i = 0; i < img.numel(); ++i)
    EXPECT_NEAR(r.data()[i], img.data()[i], 1e-15);
}

TEST(Bayar, ProjectAllOnes) {
  auto k = project_bayar(Tensor<double>::filled({5, 5}, 1.0));
  EXPECT_DOUBLE_EQ(k.values()[12], -1.0);
  double off = 0;
  for (int i = 0; i < 25; ++i)
    if (i != 12) {
      EXPECT_NEAR(k.values()[static_cast<size_t>(i)], 1.0 / 24.0, 1e-12);
      off += k.values()[static_cast<size_t>(i)];
    }
  EXPECT_NEAR(off, 1.0, 1e-12);
}

TEST(Bayar, ConstraintHoldsAfterProjection) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto k = project_bayar(Tensor<double>::randn({5, 5}, rng));
    double off = 0;
    for (int i = 0; i < 25; ++i)
      if (i != 12) off += k.values()[static_cast<size_t>(i)];
    EXPECT_LT(std::abs(k.values()[12] + 1.0), 1e-7);
    EXPECT_LT(std::abs(off - 1.0), 1e-7);
  }
}

TEST(Bayar, ConstantImageMapsToZero) {
  auto r = extract_bayar(constant_image(8, 0.5), bayar_default_kernel<double>());
  for (double v : r.values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Bayar, ViolatedConstraintThrows) {
  auto k = Tensor<double>::filled({5, 5}, 1.0);
  EXPECT_THROW(extract_bayar(constant_image(8, 0.5), k), std::runtime_error);
}

TEST(Bayar, ImpulseReproducesKernelMirror) {
  auto img = Tensor<double>::zeros({3, 11, 11});
  img.data()[5 * 11 + 5] = 1.0;
  auto k = bayar_default_kernel<double>();
  auto r = extract_bayar(img, k);
  // default kernel is symmetric, so correlation response equals the kernel
  for (int dy = -2; dy <= 2; ++dy)
    for (int dx = -2; dx <= 2; ++dx)
      EXPECT_NEAR(r.values()[static_cast<size_t>((5 + dy) * 11 + 5 + dx)],
                  k.values()[static_cast<size_t>((dy + 2) * 5 + dx + 2)], 1e-12);
}

TEST(Hpr, ConstantImageMapsToZero) {
  auto r = extract_hpr(constant_image(16, 0.42), 1.0);
  for (double v : r.values()) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(Hpr, BlurKernelNormalized) {
  auto k = img::gaussian_kernel_1d(1.0);
  double s = 0;
  for (double v : k) s += v;
  EXPECT_NEAR(s, 1.0, 1e-6);
}

TEST(Hpr, WhiteNoiseVarianceDropsAndMeanNearZero) {
  double mean_acc = 0;
  int wins = 0;
  const int n_seeds = 100, S = 16;
  for (int seed = 0; seed < n_seeds; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    auto img = Tensor<double>::randn({3, S, S}, rng);
    auto r = extract_hpr(img, 1.0);
    double m_in = 0, m_out = 0;
    for (double v : img.values()) m_in += v;
    for (double v : r.values()) m_out += v;
    m_in /= img.numel();
    m_out /= r.numel();
    double v_in = 0, v_out = 0;
    for (double v : img.values()) v_in += (v - m_in) * (v - m_in);
    for (double v : r.values()) v_out += (v - m_out) * (v - m_out);
    if (v_out < v_in) ++wins;
    mean_acc += m_out;
  }
  EXPECT_EQ(wins, n_seeds);
  // 3*sigma/sqrt(total pixels over all seeds)
  const double tol = 3.0 / std::sqrt(3.0 * S * S * n_seeds);
  EXPECT_LT(std::abs(mean_acc / n_seeds), tol);
}

TEST(ExtractAll, ImageOnlyInvalid) {
  ExtractorConfig cfg;
  cfg.kinds = {ExtractorKind::IMAGE};
  EXPECT_THROW(cfg.validate(), std::runtime_error);
}

TEST(ExtractAll, SingleLowLevelStreamFinite) {
  ExtractorConfig cfg;
  cfg.kinds = {ExtractorKind::IMAGE, ExtractorKind::SRM};
  std::mt19937_64 rng(1);
  auto img = Tensor<double>::randn({3, 8, 8}, rng);
  auto out = extract_all(img, cfg, {});
  EXPECT_EQ(out.shape(), (Shape{6, 8, 8}));
  EXPECT_TRUE(all_finite(out));
}

TEST(ExtractAll, ConstantImageZeroLowLevelPlanes) {
  ExtractorConfig cfg;
  cfg.kinds = {ExtractorKind::IMAGE, ExtractorKind::NPR, ExtractorKind::SRM,
               ExtractorKind::HPR};
  auto img = constant_image(16, 0.6);
  // raw (unstandardized) check via extract_one
  for (size_t m = 1; m < cfg.kinds.size(); ++m) {
    auto plane = extract_one(img, cfg.kinds[m], cfg);
    for (double v : plane.values()) ASSERT_NEAR(v, 0.0, 1e-9) << kind_name(cfg.kinds[m]);
  }
}

TEST(ExtractAll, StackOrderMatchesKindsOrder) {
  // marker: NPR of a checkerboard is the checkerboard, SRM of it is 4x
  // amplified, IMAGE passes through; distinguishable per slot
  ExtractorConfig cfg;
  cfg.kinds = {ExtractorKind::NPR, ExtractorKind::IMAGE};
  EXPECT_NO_THROW(cfg.validate());
  auto img = Tensor<double>::zeros({3, 4, 4});
  for (int i = 0; i < 48; ++i) img.data()[i] = static_cast<double>(i % 2);
  auto out = extract_all(img, cfg, {});
  // slot 1 must be the raw image (IMAGE has identity extraction, unit stats)
  for (int i = 0; i < 48; ++i)
    EXPECT_NEAR(out.data()[48 + i], img.data()[i], 1e-12);
  // slot 0 must differ from the raw image (it is the NPR residual)
  double diff = 0;
  for (int i = 0; i < 48; ++i) diff += std::abs(out.data()[i] - img.data()[i]);
  EXPECT_GT(diff, 1.0);
}

TEST(ExtractAll, Deterministic) {
  ExtractorConfig cfg;
  std::mt19937_64 rng(9);
  auto img = Tensor<double>::randn({3, 32, 32}, rng);
  auto a = extract_all(img, cfg, {});
  auto b = extract_all(img, cfg, {});
  EXPECT_EQ(a.values(), b.values());
}

TEST(ExtractAll, DuplicateKindRejected) {
  ExtractorConfig cfg;
  cfg.kinds = {ExtractorKind::IMAGE, ExtractorKind::SRM, ExtractorKind::SRM};
  EXPECT_THROW(cfg.validate(), std::runtime_error);
}

TEST(Stats, StandardizationUsesProvidedMoments) {
  ExtractorConfig cfg;
  cfg.kinds = {ExtractorKind::IMAGE, ExtractorKind::SRM};
  StandardizeStats st;
  st["image"] = {0.5, 2.0};
  auto img = constant_image(8, 0.5);
  auto out = extract_all(img, cfg, st);
  for (int i = 0; i < 3 * 64; ++i) EXPECT_NEAR(out.data()[i], 0.0, 1e-12);
}
