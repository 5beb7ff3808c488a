// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "alei/dataset.hpp"

using namespace alei;

namespace {

std::string tmp_path(const std::string& name) {
  return std::string(::testing::TempDir()) + name;
}

double l2(const Tensor<float>& t) {
  double s = 0;
  for (float v : t.values()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

double l2(const Tensor<double>& t) {
  double s = 0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

Tensor<double> to_double(const Tensor<float>& t) {
  auto out = Tensor<double>::zeros(t.shape());
  for (long long i = 0; i < t.numel(); ++i) out.data()[i] = t.data()[i];
  return out;
}

long long file_size(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  return f ? static_cast<long long>(f.tellg()) : -1;
}

}  // namespace

TEST(Container, RoundTripBitwise) {
  GenConfig gc;
  auto samples = gen_real(7, 3, gc);
  auto fakes = gen_fake(7, 2, Family::UP, gc);
  samples.insert(samples.end(), fakes.begin(), fakes.end());
  const auto path = tmp_path("rt.alds");
  write_dataset(path, samples);
  auto back = read_dataset(path);
  ASSERT_EQ(back.size(), samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(back[i].label, samples[i].label);
    EXPECT_EQ(back[i].family, samples[i].family);
    ASSERT_EQ(back[i].image.shape(), samples[i].image.shape());
    EXPECT_EQ(back[i].image.values(), samples[i].image.values());
  }
  std::remove(path.c_str());
}

TEST(Container, FiveSamples32x32Is61491Bytes) {
  GenConfig gc;
  auto samples = gen_real(1, 5, gc);
  const auto path = tmp_path("size.alds");
  write_dataset(path, samples);
  EXPECT_EQ(file_size(path), 61491);
  std::remove(path.c_str());
}

TEST(Container, BadMagicNamesOffsetZero) {
  const auto path = tmp_path("badmagic.alds");
  {
    std::ofstream f(path, std::ios::binary);
    f.write("NOPE", 4);
    f.write("xxxxxxx", 7);
  }
  try {
    read_dataset(path);
    FAIL() << "expected format_error";
  } catch (const format_error& e) {
    EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos) << e.what();
  }
  std::remove(path.c_str());
}

TEST(Container, TruncatedPayloadNamesOffset) {
  GenConfig gc;
  auto samples = gen_real(3, 1, gc);
  const auto path = tmp_path("trunc.alds");
  write_dataset(path, samples);
  // chop the file in the middle of the pixel payload
  {
    std::ifstream f(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::ofstream g(path, std::ios::binary | std::ios::trunc);
    g.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
  }
  try {
    read_dataset(path);
    FAIL() << "expected format_error";
  } catch (const format_error& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }
  std::remove(path.c_str());
}

TEST(Container, MissingFileThrows) {
  EXPECT_THROW(read_dataset(tmp_path("does_not_exist.alds")), format_error);
}

TEST(Generator, RealIsDeterministicAndInRange) {
  GenConfig gc;
  auto a = gen_real_image(42, 0, gc);
  auto b = gen_real_image(42, 0, gc);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_EQ(a.shape(), (Shape{3, 32, 32}));
  for (float v : a.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Generator, DifferentIndicesDiffer) {
  GenConfig gc;
  auto a = gen_real_image(42, 0, gc);
  auto b = gen_real_image(42, 1, gc);
  double diff = 0;
  for (long long i = 0; i < a.numel(); ++i) diff += std::abs(a.data()[i] - b.data()[i]);
  EXPECT_GT(diff, 1.0);
}

TEST(Generator, RealIsSmootherThanWhiteNoise) {
  // real images are blurred fields, so the high-pass residual should carry a
  // small fraction of the signal energy, unlike unit-variance white noise
  GenConfig gc;
  int wins = 0;
  for (int i = 0; i < 20; ++i) {
    auto img = to_double(gen_real_image(5, static_cast<std::uint64_t>(i), gc));
    const double hp = l2(extract_hpr(img, 1.0));
    const double total = l2(img);
    if (hp < 0.25 * total) ++wins;
  }
  EXPECT_EQ(wins, 20);
}

TEST(Generator, UpFamilyElevatesNprResidual) {
  GenConfig gc;
  int wins = 0;
  for (int i = 0; i < 20; ++i) {
    auto real = to_double(gen_real_image(11, static_cast<std::uint64_t>(i), gc));
    auto fake = to_double(gen_fake_image(11, static_cast<std::uint64_t>(i), Family::UP, gc));
    if (l2(extract_npr(fake, 2)) > l2(extract_npr(real, 2))) ++wins;
  }
  EXPECT_EQ(wins, 20);
}

TEST(Generator, UpFamilyIsBlockConstantUpToShift) {
  // undoing the circular shift must land every pixel on a constant 2x2 block
  GenConfig gc;
  auto fake = gen_fake_image(3, 0, Family::UP, gc);
  const int S = gc.size;
  for (int c = 0; c < 3; ++c)
    for (int by = 0; by < S / 2; ++by)
      for (int bx = 0; bx < S / 2; ++bx) {
        float v0 = -1;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int y = (by * 2 + dy + gc.up_shift) % S;
            const int x = (bx * 2 + dx + gc.up_shift) % S;
            const float v = fake.data()[static_cast<size_t>((c * S + y) * S + x)];
            if (v0 < 0)
              v0 = v;
            else
              ASSERT_FLOAT_EQ(v, v0);
          }
      }
}

TEST(Generator, HfFamilyElevatesSrmResidual) {
  GenConfig gc;
  int wins = 0;
  for (int i = 0; i < 20; ++i) {
    auto real = to_double(gen_real_image(13, static_cast<std::uint64_t>(i), gc));
    auto fake = to_double(gen_fake_image(13, static_cast<std::uint64_t>(i), Family::HF, gc));
    if (l2(extract_srm(fake)) > l2(extract_srm(real))) ++wins;
  }
  EXPECT_EQ(wins, 20);
}

TEST(Generator, CbFamilyAddsFixedCheckerboard) {
  GenConfig gc;
  auto real = gen_real_image(17, 0x400000ull, gc);
  auto fake = gen_fake_image(17, 0x400000ull, Family::CB, gc);
  const int S = gc.size;
  int checked = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const size_t i = static_cast<size_t>((c * S + y) * S + x);
        const float sgn = ((x + y) & 1) ? -1.0f : 1.0f;
        const float expect = real.data()[i] + sgn * static_cast<float>(gc.cb_amp);
        // skip pixels affected by the [0,1] clamp
        if (expect >= 0.0f && expect <= 1.0f) {
          ASSERT_NEAR(fake.data()[i], expect, 1e-6);
          ++checked;
        }
      }
  EXPECT_GT(checked, S * S);  // most pixels are away from the clamp
}

TEST(Generator, FakeLabelsAndFamiliesSet) {
  GenConfig gc;
  auto fakes = gen_fake(1, 3, Family::HF, gc);
  for (const auto& s : fakes) {
    EXPECT_EQ(s.label, 1);
    EXPECT_EQ(s.family, Family::HF);
  }
  auto reals = gen_real(1, 3, gc);
  for (const auto& s : reals) {
    EXPECT_EQ(s.label, 0);
    EXPECT_EQ(s.family, Family::NONE);
  }
}

TEST(Generator, NoneFamilyFakeRejected) {
  GenConfig gc;
  EXPECT_THROW(gen_fake_image(1, 0, Family::NONE, gc), std::runtime_error);
}

TEST(Distortion, NoneIsBitwiseCopy) {
  GenConfig gc;
  auto img = gen_real_image(23, 0, gc);
  DistortionConfig dc;
  auto out = apply_distortion(img, dc);
  EXPECT_EQ(out.values(), img.values());
}

TEST(Distortion, BlurReducesHighPassEnergy) {
  GenConfig gc;
  DistortionConfig dc;
  dc.kind = DistortionKind::BLUR;
  for (int i = 0; i < 10; ++i) {
    auto img = gen_real_image(29, static_cast<std::uint64_t>(i), gc);
    auto out = apply_distortion(img, dc);
    EXPECT_LT(l2(extract_hpr(to_double(out), 1.0)), l2(extract_hpr(to_double(img), 1.0)));
  }
}

TEST(Distortion, ShapePreservedAndRangeClamped) {
  GenConfig gc;
  auto img = gen_real_image(31, 0, gc);
  for (auto k : {DistortionKind::BLUR, DistortionKind::DOWNSAMPLE, DistortionKind::JPEGQ}) {
    DistortionConfig dc;
    dc.kind = k;
    auto out = apply_distortion(img, dc);
    EXPECT_EQ(out.shape(), img.shape()) << distortion_name(k);
    for (float v : out.values()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Distortion, JpegHigherQualityMeansSmallerError) {
  GenConfig gc;
  auto img = gen_real_image(37, 2, gc);
  auto err = [&](int q) {
    DistortionConfig dc;
    dc.kind = DistortionKind::JPEGQ;
    dc.jpeg_quality = q;
    auto out = apply_distortion(img, dc);
    double s = 0;
    for (long long i = 0; i < img.numel(); ++i) {
      const double d = out.data()[i] - img.data()[i];
      s += d * d;
    }
    return s;
  };
  const double e95 = err(95), e50 = err(50), e10 = err(10);
  EXPECT_LT(e95, e50);
  EXPECT_LT(e50, e10);
}

TEST(Distortion, JpegQuality100NearlyLossless) {
  // at quality 100 every quantization step collapses to 1 (of 255 levels),
  // so reconstruction error is bounded by rounding alone
  GenConfig gc;
  auto img = gen_real_image(41, 0, gc);
  DistortionConfig dc;
  dc.kind = DistortionKind::JPEGQ;
  dc.jpeg_quality = 100;
  auto out = apply_distortion(img, dc);
  for (long long i = 0; i < img.numel(); ++i)
    ASSERT_NEAR(out.data()[i], img.data()[i], 4.0 / 255.0);
}

TEST(Distortion, DownsampleRemovesCheckerboard) {
  // the highest spatial frequency cannot survive a 0.5x round trip
  const int S = 32;
  auto img = Tensor<float>::zeros({3, S, S});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x)
        img.data()[static_cast<size_t>((c * S + y) * S + x)] =
            0.5f + (((x + y) & 1) ? -0.25f : 0.25f);
  DistortionConfig dc;
  dc.kind = DistortionKind::DOWNSAMPLE;
  auto out = apply_distortion(img, dc);
  // bilinear resampling has no prefilter, so some aliased energy survives;
  // require the mean deviation to drop well below the original 0.25
  double dev = 0;
  for (float v : out.values()) dev += std::abs(v - 0.5);
  EXPECT_LT(dev / out.numel(), 0.1);
}

TEST(Distortion, InvalidConfigRejected) {
  DistortionConfig dc;
  dc.jpeg_quality = 0;
  EXPECT_THROW(dc.validate(), std::runtime_error);
  dc = {};
  dc.down_ratio = 1.5;
  EXPECT_THROW(dc.validate(), std::runtime_error);
  dc = {};
  dc.blur_sigma = -1;
  EXPECT_THROW(dc.validate(), std::runtime_error);
}

TEST(Dct, OrthonormalRoundTrip) {
  auto M = dct::basis(8);
  std::vector<double> X(64);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  for (auto& v : X) v = nd(rng);
  auto Y = X;
  dct::transform(M, Y, 8, true);
  double ex = 0, ey = 0;
  for (int i = 0; i < 64; ++i) {
    ex += X[static_cast<size_t>(i)] * X[static_cast<size_t>(i)];
    ey += Y[static_cast<size_t>(i)] * Y[static_cast<size_t>(i)];
  }
  EXPECT_NEAR(ex, ey, 1e-9);  // Parseval
  dct::transform(M, Y, 8, false);
  for (int i = 0; i < 64; ++i) EXPECT_NEAR(Y[static_cast<size_t>(i)], X[static_cast<size_t>(i)], 1e-9);
}
