/*
 * Copyright 2026 The DRA Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dra/augmentation.hpp"
#include "dra/error.hpp"
#include "dra/gradcheck.hpp"

namespace dra {
namespace {

using ag::Shape;
using TensorF = ag::Tensor<float>;

TensorF random_map(std::mt19937_64& rng, int c, int h, int w, double mean, double stddev) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(c) * h * w);
  double m = 0.0;
  for (double& x : v) {
    x = d(rng);
    m += x;
  }
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  const double s = std::sqrt(var / static_cast<double>(v.size()));
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>(mean + stddev * (v[i] - m) / s);
  }
  return TensorF(Shape{c, h, w}, out);
}

void moments(const TensorF& t, double& mean, double& stddev) {
  mean = 0.0;
  for (float v : t.values()) mean += v;
  mean /= static_cast<double>(t.numel());
  double var = 0.0;
  for (float v : t.values()) var += (v - mean) * (v - mean);
  stddev = std::sqrt(var / static_cast<double>(t.numel()));
}

TEST(StyleExchange, EtaZeroIsBitIdentity) {
  std::mt19937_64 rng(1);
  const TensorF x = random_map(rng, 4, 5, 5, 0.3, 1.7);
  const TensorF z = random_map(rng, 4, 5, 5, -2.0, 0.2);
  StyleExchangeConfig cfg;
  cfg.eta = 0.0;
  const TensorF y = style_exchange(x, z, cfg);
  ASSERT_EQ(y.numel(), x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST(StyleExchange, EtaOneMatchesSourceMoments) {
  std::mt19937_64 rng(2);
  const TensorF x = random_map(rng, 3, 8, 8, 0.0, 1.0);
  const TensorF z = random_map(rng, 3, 8, 8, 2.0, 3.0);
  StyleExchangeConfig cfg;
  cfg.eta = 1.0;
  double mean, stddev;
  moments(style_exchange(x, z, cfg), mean, stddev);
  EXPECT_NEAR(mean, 2.0, 1e-4);
  EXPECT_NEAR(stddev, 3.0, 1e-4);
}

TEST(StyleExchange, PerChannelScopeMatchesEachChannel) {
  std::mt19937_64 rng(3);
  TensorF x = random_map(rng, 2, 6, 6, 0.0, 1.0);
  TensorF z(Shape{2, 6, 6});
  const TensorF z0 = random_map(rng, 1, 6, 6, -1.0, 0.5);
  const TensorF z1 = random_map(rng, 1, 6, 6, 4.0, 2.0);
  std::copy(z0.values().begin(), z0.values().end(), z.values().begin());
  std::copy(z1.values().begin(), z1.values().end(), z.values().begin() + 36);
  StyleExchangeConfig cfg;
  cfg.eta = 1.0;
  cfg.scope = MomentScope::kPerChannel;
  const TensorF y = style_exchange(x, z, cfg);
  const double want_mean[] = {-1.0, 4.0};
  const double want_std[] = {0.5, 2.0};
  for (int c = 0; c < 2; ++c) {
    TensorF plane(Shape{1, 6, 6},
                  std::vector<float>(y.values().begin() + c * 36, y.values().begin() + c * 36 + 36));
    double mean, stddev;
    moments(plane, mean, stddev);
    EXPECT_NEAR(mean, want_mean[c], 1e-4);
    EXPECT_NEAR(stddev, want_std[c], 1e-4);
  }
}

TEST(StyleExchange, SelfPairingIsIdentity) {
  std::mt19937_64 rng(4);
  const TensorF x = random_map(rng, 4, 4, 4, 0.7, 2.5);
  for (double eta : {0.025, 0.5, 1.0}) {
    StyleExchangeConfig cfg;
    cfg.eta = eta;
    const TensorF y = style_exchange(x, x, cfg);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.values()[i], x.values()[i], 1e-5);
  }
}

TEST(StyleExchange, LinearInEta) {
  std::mt19937_64 rng(5);
  const TensorF x = random_map(rng, 3, 4, 4, 0.1, 1.2);
  const TensorF z = random_map(rng, 3, 4, 4, 1.5, 0.4);
  StyleExchangeConfig cfg;
  cfg.eta = 0.0;
  const TensorF y0 = style_exchange(x, z, cfg);
  cfg.eta = 1.0;
  const TensorF y1 = style_exchange(x, z, cfg);
  for (double eta : {0.025, 0.3, 0.75}) {
    cfg.eta = eta;
    const TensorF y = style_exchange(x, z, cfg);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      EXPECT_NEAR(y.values()[i], (1.0 - eta) * y0.values()[i] + eta * y1.values()[i], 1e-5);
    }
  }
}

TEST(StyleExchange, ConstantInputStaysFinite) {
  const TensorF x(Shape{2, 3, 3}, 1.5f);
  std::mt19937_64 rng(6);
  const TensorF z = random_map(rng, 2, 3, 3, 0.0, 1.0);
  StyleExchangeConfig cfg;
  cfg.eta = 1.0;
  for (float v : style_exchange(x, z, cfg).values()) EXPECT_TRUE(std::isfinite(v));
  for (float v : style_exchange(z, x, cfg).values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(StyleExchange, Errors) {
  StyleExchangeConfig cfg;
  const TensorF a(Shape{2, 3, 3}, 0.0f);
  const TensorF b(Shape{2, 3, 4}, 0.0f);
  EXPECT_THROW(style_exchange(a, b, cfg), DimensionError);
  TensorF bad(Shape{2, 3, 3}, 0.0f);
  bad.values()[4] = std::nanf("");
  EXPECT_THROW(style_exchange(bad, a, cfg), NumericError);
  cfg.eta = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(parse_moment_scope("spatial"), ConfigError);
}

TEST(StyleExchange, GradientCheckWithFrozenSources) {
  for (MomentScope scope : {MomentScope::kGlobal, MomentScope::kPerChannel}) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(3 * 2 * 3 * 3);
    for (double& x : v) x = d(rng);
    ag::Tensor<double> feats = ag::Tensor<double>::parameter(Shape{3, 2, 3, 3}, v, "features");

    StyleExchangePlan plan;
    plan.config.eta = 0.4;
    plan.config.scope = scope;
    plan.pairing = {2, 0, 1};
    FeatureMoments sources;
    plan.captured_sources = &sources;
    {
      ag::Tape<double> tape;
      style_exchange_batch(tape, feats, plan);
    }
    plan.captured_sources = nullptr;
    plan.frozen_sources = &sources;

    std::vector<double> proj(v.size());
    for (double& p : proj) p = d(rng);
    const auto fn = [&](ag::Tape<double>& tape, const std::vector<ag::Tensor<double>>& in) {
      ag::Tensor<double> y = style_exchange_batch(tape, in[0], plan);
      return tape.sum(tape.mul(y, ag::Tensor<double>(y.shape(), proj)));
    };
    const ag::GradientCheckReport report = ag::gradient_check(fn, {feats}, 1e-3, 1e-3);
    EXPECT_TRUE(report.passed) << moment_scope_name(scope) << " " << report.max_error();
  }
}

TEST(PairBatch, DeterministicAndDegenerate) {
  std::mt19937_64 a(11), b(11);
  EXPECT_EQ(pair_batch(16, a), pair_batch(16, b));
  std::mt19937_64 r(3);
  EXPECT_EQ(pair_batch(1, r), std::vector<int>{0});
  EXPECT_TRUE(pair_batch(0, r).empty());
}

TEST(PairBatch, UniformOverPositions) {
  std::mt19937_64 rng(2024);
  const int draws = 10000;
  int counts[4][4] = {};
  for (int t = 0; t < draws; ++t) {
    const std::vector<int> p = pair_batch(4, rng);
    ASSERT_EQ(p.size(), 4u);
    for (int i = 0; i < 4; ++i) ++counts[i][p[i]];
  }
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(counts[i][j] / double(draws), 0.25, 0.02);
}

TEST(Mixup, EndpointsAndMidpoint) {
  const TensorF zero(Shape{3, 2, 2}, 0.0f);
  const TensorF two(Shape{3, 2, 2}, 2.0f);

  MixupResult r = mixup(zero, two, 1, 4, 1.0, 6);
  for (float v : r.input.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(r.soft_label, (std::vector<float>{0, 1, 0, 0, 0, 0}));

  r = mixup(zero, two, 1, 4, 0.0, 6);
  for (float v : r.input.values()) EXPECT_EQ(v, 2.0f);
  EXPECT_EQ(r.soft_label, (std::vector<float>{0, 0, 0, 0, 1, 0}));

  r = mixup(zero, two, 1, 4, 0.5, 6);
  for (float v : r.input.values()) EXPECT_FLOAT_EQ(v, 1.0f);
  EXPECT_FLOAT_EQ(r.soft_label[1], 0.5f);
  EXPECT_FLOAT_EQ(r.soft_label[4], 0.5f);

  EXPECT_THROW(mixup(zero, two, 0, 0, 1.5, 6), ContractError);
  EXPECT_THROW(mixup(zero, TensorF(Shape{3, 2, 3}), 0, 0, 0.5, 6), DimensionError);
}

TEST(Mixup, BetaLambdaMoments) {
  // Beta(a, a) has mean 1/2 and variance 1 / (4 (2a + 1)).
  std::mt19937_64 rng(9);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double l = sample_mixup_lambda(rng, 0.2);
    ASSERT_GE(l, 0.0);
    ASSERT_LE(l, 1.0);
    sum += l;
    sq += l * l;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.5, 0.01);
  EXPECT_NEAR(sq / n - mean * mean, 1.0 / (4.0 * 1.4), 0.01);
}

TEST(Mixup, BatchRowsAreConvexCombinations) {
  TensorF inputs(Shape{2, 1, 1, 2}, std::vector<float>{1, 2, 5, 6});
  const std::vector<int> labels = {0, 2};
  const std::vector<int> pairing = {1, 0};
  const std::vector<double> lambdas = {0.25, 1.0};
  const MixupBatch b = mixup_batch(inputs, labels, pairing, lambdas, 3);
  EXPECT_FLOAT_EQ(b.inputs.values()[0], 0.25f * 1 + 0.75f * 5);
  EXPECT_FLOAT_EQ(b.inputs.values()[1], 0.25f * 2 + 0.75f * 6);
  EXPECT_FLOAT_EQ(b.inputs.values()[2], 5.0f);
  EXPECT_EQ(b.targets.shape(), (Shape{2, 3}));
  EXPECT_FLOAT_EQ(b.targets.values()[0], 0.25f);
  EXPECT_FLOAT_EQ(b.targets.values()[2], 0.75f);
  EXPECT_FLOAT_EQ(b.targets.values()[5], 1.0f);
}

}  // namespace
}  // namespace dra
