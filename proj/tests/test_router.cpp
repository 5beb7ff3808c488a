// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "alei/router_head.hpp"

using namespace alei;

namespace {

RouterParams<double> zero_router(int Mp1, int D) {
  RouterParams<double> r;
  r.W = Tensor<double>::zeros({Mp1 * D, Mp1});
  r.b = Tensor<double>::zeros({Mp1});
  return r;
}

}  // namespace

TEST(Router, ZeroInitRoutesUniformly) {
  const int Mp1 = 4, D = 8;
  auto r = zero_router(Mp1, D);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    auto f_cls = Tensor<double>::randn({1, Mp1 * D}, rng);
    auto p = route(f_cls, r);
    for (double v : p.values()) EXPECT_DOUBLE_EQ(v, 0.25);
  }
}

TEST(Router, BiasOnlyClosedForm) {
  // W=0, b=[10,0,0,0]: p0 = e^10/(e^10+3), others 1/(e^10+3)
  const int Mp1 = 4, D = 4;
  auto r = zero_router(Mp1, D);
  r.b.data()[0] = 10.0;
  std::mt19937_64 rng(2);
  auto p = route(Tensor<double>::randn({1, Mp1 * D}, rng), r);
  const double z = std::exp(10.0) + 3.0;
  EXPECT_NEAR(p.data()[0], std::exp(10.0) / z, 1e-12);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(p.data()[i], 1.0 / z, 1e-15);
}

TEST(Router, DistributionProperties) {
  const int Mp1 = 4, D = 8;
  std::mt19937_64 rng(3);
  RouterParams<double> r;
  r.W = Tensor<double>::randn({Mp1 * D, Mp1}, rng);
  r.b = Tensor<double>::randn({Mp1}, rng);
  for (int trial = 0; trial < 1000; ++trial) {
    auto p = route(Tensor<double>::randn({1, Mp1 * D}, rng), r);
    double s = 0;
    for (double v : p.values()) {
      ASSERT_GT(v, 0.0);
      ASSERT_LT(v, 1.0);
      s += v;
    }
    ASSERT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Head, ZeroInitPredictsHalf) {
  ClassHead<double> h;
  h.w = Tensor<double>::zeros({8, 1});
  h.b = Tensor<double>::zeros({1});
  std::mt19937_64 rng(4);
  auto p = head_predict(Tensor<double>::randn({1, 8}, rng), h);
  EXPECT_DOUBLE_EQ(p.item(), 0.5);
}

TEST(Head, BiasShiftsLogit) {
  ClassHead<double> h;
  h.w = Tensor<double>::zeros({8, 1});
  h.b = Tensor<double>::from({1}, {2.0});
  std::mt19937_64 rng(5);
  auto p = head_predict(Tensor<double>::randn({1, 8}, rng), h);
  EXPECT_NEAR(p.item(), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
}

TEST(Mixture, ConvexCombinationStaysInUnitInterval) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    // random distribution over 4 slots
    std::vector<double> logits(4), probs(4), heads(4);
    double z = 0;
    for (int i = 0; i < 4; ++i) {
      logits[static_cast<size_t>(i)] = std::exp(3.0 * (ud(rng) - 0.5));
      z += logits[static_cast<size_t>(i)];
    }
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 4; ++i) {
      probs[static_cast<size_t>(i)] = logits[static_cast<size_t>(i)] / z;
      heads[static_cast<size_t>(i)] = ud(rng);
      lo = std::min(lo, heads[static_cast<size_t>(i)]);
      hi = std::max(hi, heads[static_cast<size_t>(i)]);
    }
    auto p = Tensor<double>::from({1, 4}, probs);
    auto q = Tensor<double>::from({1, 4}, heads);
    const double fused = mixture_predict(p, q).item();
    ASSERT_GE(fused, lo - 1e-12);
    ASSERT_LE(fused, hi + 1e-12);
  }
}

TEST(Mixture, OneHotSelectsSingleHead) {
  auto p = Tensor<double>::from({1, 4}, {0.0, 0.0, 1.0, 0.0});
  auto q = Tensor<double>::from({1, 4}, {0.9, 0.8, 0.3, 0.1});
  EXPECT_DOUBLE_EQ(mixture_predict(p, q).item(), 0.3);
}

TEST(Entropy, UniformIsLogM) {
  auto p = Tensor<double>::filled({1, 4}, 0.25);
  EXPECT_NEAR(entropy_loss(p).item(), std::log(4.0), 1e-12);
  auto p2 = Tensor<double>::filled({1, 2}, 0.5);
  EXPECT_NEAR(entropy_loss(p2).item(), std::log(2.0), 1e-12);
}

TEST(Entropy, OneHotIsZero) {
  auto p = Tensor<double>::from({1, 4}, {1.0, 0.0, 0.0, 0.0});
  EXPECT_NEAR(entropy_loss(p).item(), 0.0, 1e-10);
}

TEST(Entropy, TwoPointClosedForm) {
  auto p = Tensor<double>::from({1, 2}, {0.9, 0.1});
  const double want = -(0.9 * std::log(0.9) + 0.1 * std::log(0.1));
  EXPECT_NEAR(entropy_loss(p).item(), want, 1e-12);
}

TEST(Entropy, GradCheckThroughSoftmax) {
  ParamRegistry<double> reg;
  std::mt19937_64 rng(7);
  auto& logits = reg.add("logits", Tensor<double>::randn({1, 4}, rng));
  auto f = [&]() { return entropy_loss(softmax_lastdim(logits)); };
  const double worst = grad_check<double>(f, {&reg.at("logits")}, 1e-5);
  EXPECT_LT(worst, 1e-8);
  (void)logits;
}

TEST(Bce, ClosedForms) {
  auto half = Tensor<double>::scalar(0.5);
  EXPECT_NEAR(bce_loss(1.0, half).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_loss(0.0, half).item(), std::log(2.0), 1e-12);
  auto p9 = Tensor<double>::scalar(0.9);
  EXPECT_NEAR(bce_loss(1.0, p9).item(), -std::log(0.9), 1e-12);
  EXPECT_NEAR(bce_loss(0.0, p9).item(), -std::log(0.1), 1e-12);
}

TEST(Bce, SaturatedInputsAreClamped) {
  auto one = Tensor<double>::scalar(1.0);
  auto zero = Tensor<double>::scalar(0.0);
  // wrong and fully confident: finite, equals -log(1e-7)
  EXPECT_NEAR(bce_loss(0.0, one).item(), -std::log(1e-7), 1e-6);
  EXPECT_NEAR(bce_loss(1.0, zero).item(), -std::log(1e-7), 1e-6);
  // right and fully confident: tiny but finite
  EXPECT_NEAR(bce_loss(1.0, one).item(), 1e-7, 1e-9);
}

TEST(Bce, GradCheck) {
  ParamRegistry<double> reg;
  auto& z = reg.add("z", Tensor<double>::from({1, 1}, {0.3}));
  auto f = [&]() { return bce_loss(1.0, sigmoid(z)); };
  const double worst = grad_check<double>(f, {&reg.at("z")}, 1e-6);
  EXPECT_LT(worst, 1e-8);
  (void)z;
}

TEST(TotalLoss, LiteralPinnedValue) {
  // fused 0.5 and uniform routing over 4: ln2 + 0.1*ln4 = 0.8317766167
  auto fused = Tensor<double>::scalar(0.5);
  auto p = Tensor<double>::filled({1, 4}, 0.25);
  const double got = total_loss(1.0, fused, p, 0.1, MoeSign::LITERAL).item();
  EXPECT_NEAR(got, 0.8317766166719343, 1e-12);
}

TEST(TotalLoss, BalanceFlipsTheSign) {
  auto fused = Tensor<double>::scalar(0.5);
  auto p = Tensor<double>::filled({1, 4}, 0.25);
  const double lit = total_loss(1.0, fused, p, 0.1, MoeSign::LITERAL).item();
  const double bal = total_loss(1.0, fused, p, 0.1, MoeSign::BALANCE).item();
  EXPECT_NEAR(lit - bal, 0.2 * std::log(4.0), 1e-12);
  EXPECT_NEAR(lit + bal, 2.0 * std::log(2.0), 1e-12);
}

TEST(TotalLoss, LambdaZeroIsPlainBce) {
  auto fused = Tensor<double>::scalar(0.7);
  auto p = Tensor<double>::from({1, 4}, {0.7, 0.1, 0.1, 0.1});
  EXPECT_DOUBLE_EQ(total_loss(1.0, fused, p, 0.0, MoeSign::LITERAL).item(),
                   bce_loss(1.0, fused).item());
}

TEST(TotalLoss, SignNameParsing) {
  EXPECT_EQ(moe_sign_from_name("literal"), MoeSign::LITERAL);
  EXPECT_EQ(moe_sign_from_name("balance"), MoeSign::BALANCE);
  EXPECT_THROW(moe_sign_from_name("other"), std::runtime_error);
}
