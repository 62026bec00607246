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
#include <cstring>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dra/autograd.hpp"
#include "dra/error.hpp"
#include "dra/gradcheck.hpp"

namespace dra::ag {
namespace {

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

// Brute-force cross-correlation written independently of the library.
std::vector<double> brute_force_conv(const std::vector<double>& x, int n, int c, int h, int w,
                                     const std::vector<double>& k, int o, int ks, int stride,
                                     int pad) {
  const int ho = (h + 2 * pad - ks) / stride + 1;
  const int wo = (w + 2 * pad - ks) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(n) * o * ho * wo, 0.0);
  for (int b = 0; b < n; ++b)
    for (int oc = 0; oc < o; ++oc)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          double acc = 0.0;
          for (int ic = 0; ic < c; ++ic)
            for (int di = 0; di < ks; ++di)
              for (int dj = 0; dj < ks; ++dj) {
                const int yy = i * stride + di - pad;
                const int xx = j * stride + dj - pad;
                if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
                acc += x[((b * c + ic) * h + yy) * w + xx] * k[((oc * c + ic) * ks + di) * ks + dj];
              }
          y[((b * o + oc) * ho + i) * wo + j] = acc;
        }
  return y;
}

TEST(Conv2d, ScalarProduct) {
  Tape<float> tape;
  TensorF x(Shape{1, 1, 1, 1}, 3.0f);
  TensorF w(Shape{1, 1, 1, 1}, 2.0f);
  EXPECT_EQ(tape.conv2d(x, w, 1, 0).item(), 6.0f);
}

TEST(Conv2d, IdentityKernel) {
  Tape<float> tape;
  TensorF x(Shape{2, 1, 3, 4}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12,
                                                   -1, -2, -3, -4, -5, -6, -7, -8, -9, 0, 1, 2});
  TensorF w(Shape{1, 1, 1, 1}, 1.0f);
  auto y = tape.conv2d(x, w, 1, 0);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST(Conv2d, OnesWithPaddingMatchesBruteForce) {
  Tape<float> tape;
  TensorF x(Shape{1, 1, 3, 3}, 1.0f);
  TensorF w(Shape{1, 1, 3, 3}, 1.0f);
  auto y = tape.conv2d(x, w, 1, 1);
  const auto oracle = brute_force_conv(std::vector<double>(9, 1.0), 1, 1, 3, 3,
                                       std::vector<double>(9, 1.0), 1, 3, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_EQ(oracle[4], 9.0);
  EXPECT_EQ(oracle[0], 4.0);
  for (int i = 0; i < 9; ++i) EXPECT_EQ(y.values()[i], oracle[i]);
  EXPECT_EQ(y.values()[4], 9.0f);
  EXPECT_EQ(y.values()[0], 4.0f);
  EXPECT_EQ(y.values()[8], 4.0f);
}

TEST(Conv2d, Im2colPathMatchesDirectAndBruteForce) {
  std::mt19937_64 rng(11);
  struct Case {
    int n, c, h, w, o, k, stride, pad;
  };
  for (const Case& cs : {Case{2, 3, 5, 5, 4, 3, 1, 1}, Case{1, 2, 8, 6, 3, 3, 2, 1},
                         Case{3, 4, 7, 7, 2, 1, 2, 0}, Case{1, 1, 6, 6, 1, 5, 1, 2}}) {
    auto xv = random_values(static_cast<std::size_t>(cs.n) * cs.c * cs.h * cs.w, rng);
    auto wv = random_values(static_cast<std::size_t>(cs.o) * cs.c * cs.k * cs.k, rng);
    TensorD x(Shape{cs.n, cs.c, cs.h, cs.w}, xv);
    TensorD w(Shape{cs.o, cs.c, cs.k, cs.k}, wv);
    Tape<double> tape;
    auto fast = tape.conv2d(x, w, cs.stride, cs.pad);
    auto direct = reference::conv2d_direct(x, w, cs.stride, cs.pad);
    auto oracle = brute_force_conv(xv, cs.n, cs.c, cs.h, cs.w, wv, cs.o, cs.k, cs.stride, cs.pad);
    ASSERT_EQ(fast.numel(), oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      EXPECT_NEAR(fast.values()[i], oracle[i], 1e-12);
      EXPECT_NEAR(direct[i], oracle[i], 1e-12);
    }
  }
}

TEST(Conv2d, ShapeMismatchNamesBothShapes) {
  Tape<float> tape;
  TensorF x(Shape{1, 3, 4, 4});
  TensorF w(Shape{2, 2, 3, 3});
  try {
    tape.conv2d(x, w, 1, 1);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[1,3,4,4]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2,2,3,3]"), std::string::npos);
  }
  TensorF even(Shape{1, 3, 2, 2});
  EXPECT_THROW(tape.conv2d(x, even, 1, 0), DimensionError);
}

TEST(Conv1x1, IdentityZeroAndChannelSum) {
  Tape<float> tape;
  TensorF x(Shape{1, 2, 2, 2}, std::vector<float>{1, 2, 3, 4, 10, 20, 30, 40});
  TensorF eye(Shape{2, 2, 1, 1}, std::vector<float>{1, 0, 0, 1});
  auto same = tape.conv1x1(x, eye);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(same.values()[i], x.values()[i]);

  TensorF zero(Shape{3, 2, 1, 1}, 0.0f);
  auto zeros = tape.conv1x1(x, zero);
  for (float v : zeros.values()) EXPECT_EQ(v, 0.0f);

  TensorF rowsum(Shape{1, 2, 1, 1}, std::vector<float>{1, 1});
  auto s = tape.conv1x1(x, rowsum);
  ASSERT_EQ(s.shape(), (Shape{1, 1, 2, 2}));
  const float expected[] = {11, 22, 33, 44};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(s.values()[i], expected[i]);

  TensorF wide(Shape{1, 2, 3, 3});
  EXPECT_THROW(tape.conv1x1(x, wide), DimensionError);
}

TEST(Conv1x1, BitIdenticalToConv2dWithUnitKernel) {
  std::mt19937 rng(3);
  std::normal_distribution<float> d;
  std::vector<float> xv(2 * 5 * 6 * 6), wv(7 * 5);
  for (auto& v : xv) v = d(rng);
  for (auto& v : wv) v = d(rng);
  TensorF x(Shape{2, 5, 6, 6}, xv);
  TensorF w(Shape{7, 5, 1, 1}, wv);
  Tape<float> tape;
  auto a = tape.conv2d(x, w, 1, 0);
  auto b = tape.conv1x1(x, w);
  ASSERT_EQ(a.numel(), b.numel());
  EXPECT_EQ(std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(float)), 0);
}

TEST(Softmax, KnownValues) {
  Tape<double> tape;
  auto even = tape.softmax(TensorD(Shape{1, 2}, std::vector<double>{0, 0}), 1);
  EXPECT_EQ(even.values()[0], 0.5);
  EXPECT_EQ(even.values()[1], 0.5);
  // e / (1 + e), computed at high precision.
  auto skew = tape.softmax(TensorD(Shape{1, 2}, std::vector<double>{1, 0}), 1);
  EXPECT_NEAR(skew.values()[0], 0.7311, 1e-4);
  EXPECT_NEAR(skew.values()[1], 0.2689, 1e-4);
  EXPECT_NEAR(skew.values()[0], 0.7310585786300049, 1e-12);
}

TEST(Softmax, RowsArePositiveAndSumToOne) {
  std::mt19937_64 rng(5);
  Tape<float> tape;
  for (int trial = 0; trial < 200; ++trial) {
    const int rows = 1 + trial % 7;
    const int cols = 1 + trial % 5;
    auto v = random_values(static_cast<std::size_t>(rows) * cols, rng, 4.0);
    TensorF x(Shape{rows, cols}, std::vector<float>(v.begin(), v.end()));
    for (int axis : {0, 1}) {
      auto y = tape.softmax(x, axis);
      const int lines = axis == 1 ? rows : cols;
      for (int i = 0; i < lines; ++i) {
        double total = 0.0;
        const int len = axis == 1 ? cols : rows;
        for (int j = 0; j < len; ++j) {
          const float p = axis == 1 ? y.values()[i * cols + j] : y.values()[j * cols + i];
          EXPECT_GT(p, 0.0f);
          EXPECT_LE(p, 1.0f);
          total += p;
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
      }
    }
  }
}

TEST(Softmax, InvalidAxis) {
  Tape<float> tape;
  TensorF x(Shape{2, 2});
  EXPECT_THROW(tape.softmax(x, 2), ContractError);
  EXPECT_THROW(tape.softmax(x, -1), ContractError);
}

TEST(GlobalAvgPool, ConstantMap) {
  Tape<float> tape;
  auto y = tape.global_avg_pool(TensorF(Shape{2, 3, 4, 5}, 2.5f));
  ASSERT_EQ(y.shape(), (Shape{2, 3}));
  for (float v : y.values()) EXPECT_FLOAT_EQ(v, 2.5f);
}

TEST(CrossEntropy, LabelOutOfRange) {
  Tape<float> tape;
  TensorF logits(Shape{2, 3});
  const int bad[] = {0, 3};
  EXPECT_THROW(tape.cross_entropy(logits, bad), ContractError);
  const int neg[] = {-1, 0};
  EXPECT_THROW(tape.cross_entropy(logits, neg), ContractError);
  const int ok[] = {0, 2};
  EXPECT_NEAR(tape.cross_entropy(logits, ok).item(), std::log(3.0), 1e-6);
}

TEST(Backward, IdentityLoss) {
  Tape<float> tape;
  auto x = TensorF::parameter(Shape{1}, {5.0f}, "x");
  tape.backward(x);
  EXPECT_EQ(x.grad()[0], 1.0f);
}

TEST(Backward, Square) {
  Tape<float> tape;
  auto x = TensorF::parameter(Shape{1}, {3.0f}, "x");
  tape.backward(tape.mul(x, x));
  EXPECT_EQ(x.grad()[0], 6.0f);
}

TEST(Backward, ReuseDoublesGradient) {
  std::mt19937_64 rng(9);
  auto v = random_values(12, rng);
  auto make = [&] { return TensorD::parameter(Shape{3, 4}, v, "x"); };
  auto w = random_values(12, rng);
  TensorD weights(Shape{3, 4}, w);

  auto once = make();
  {
    Tape<double> tape;
    tape.backward(tape.sum(tape.mul(tape.relu(once), weights)));
  }
  auto twice = make();
  {
    Tape<double> tape;
    auto r = tape.relu(twice);
    tape.backward(tape.sum(tape.add(tape.mul(r, weights), tape.mul(r, weights))));
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_DOUBLE_EQ(twice.grad()[i], 2.0 * once.grad()[i]);
  }
}

TEST(Backward, UnusedTensorKeepsZeroGrad) {
  Tape<float> tape;
  auto used = TensorF::parameter(Shape{2}, {1, 2}, "used");
  auto unused = TensorF::parameter(Shape{2}, {3, 4}, "unused");
  unused.zero_grad();
  tape.backward(tape.sum(used));
  for (float g : unused.grad()) EXPECT_EQ(g, 0.0f);
  for (float g : used.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, NonScalarLoss) {
  Tape<float> tape;
  auto x = TensorF::parameter(Shape{2}, {1, 2}, "x");
  auto y = tape.scale(x, 2.0f);
  EXPECT_THROW(tape.backward(y), DimensionError);
}

TEST(Backward, ZeroGradResets) {
  Tape<float> tape;
  auto x = TensorF::parameter(Shape{3}, {1, 2, 3}, "x");
  tape.backward(tape.sum(x));
  x.zero_grad();
  for (float g : x.grad()) EXPECT_EQ(g, 0.0f);
}

TEST(GradientCheck, LinearOpIsExact) {
  std::mt19937_64 rng(1);
  auto a = TensorD::parameter(Shape{3, 4}, random_values(12, rng), "a");
  TensorD b(Shape{4, 2}, random_values(8, rng));
  auto report = gradient_check(
      [&](Tape<double>& t, const std::vector<TensorD>& in) { return t.matmul(in[0], b); }, {a},
      1e-3, 1e-6);
  EXPECT_TRUE(report.passed);
  EXPECT_LT(report.max_error(), 1e-6);
}

TEST(GradientCheck, Conv2dSmallRandom) {
  std::mt19937_64 rng(2);
  auto x = TensorD::parameter(Shape{2, 2, 4, 4}, random_values(64, rng), "input");
  auto w = TensorD::parameter(Shape{3, 2, 3, 3}, random_values(54, rng), "weight");
  auto report = gradient_check(
      [](Tape<double>& t, const std::vector<TensorD>& in) { return t.conv2d(in[0], in[1], 1, 1); },
      {x, w}, 1e-3, 1e-3);
  EXPECT_TRUE(report.passed) << report.max_error();
  auto strided = gradient_check(
      [](Tape<double>& t, const std::vector<TensorD>& in) { return t.conv2d(in[0], in[1], 2, 1); },
      {x, w}, 1e-3, 1e-3);
  EXPECT_TRUE(strided.passed) << strided.max_error();
}

// Every differentiable op, random small shapes, several seeds.
TEST(GradientCheck, EveryOpMatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    auto p = [&](Shape s, const char* name) {
      return TensorD::parameter(s, random_values(s.numel(), rng), name);
    };
    auto x4 = p(Shape{2, 3, 3, 3}, "x4");
    auto y4 = p(Shape{2, 3, 3, 3}, "y4");
    auto w1 = p(Shape{2, 3, 1, 1}, "w1");
    auto m = p(Shape{3, 4}, "m");
    auto n = p(Shape{4, 2}, "n");
    auto bias = p(Shape{2}, "bias");
    auto gate = p(Shape{2, 3}, "gate");
    const std::vector<int> labels = {1, 0, 1};
    TensorD soft(Shape{3, 2}, std::vector<double>{0.3, 0.7, 1.0, 0.0, 0.5, 0.5});

    using F = CheckedFunction;
    const std::vector<std::pair<F, std::vector<TensorD>>> cases = {
        {[](Tape<double>& t, const std::vector<TensorD>& in) { return t.relu(in[0]); }, {x4}},
        {[](Tape<double>& t, const std::vector<TensorD>& in) { return t.add(in[0], in[1]); },
         {x4, y4}},
        {[](Tape<double>& t, const std::vector<TensorD>& in) { return t.mul(in[0], in[1]); },
         {x4, y4}},
        {[](Tape<double>& t, const std::vector<TensorD>& in) { return t.scale(in[0], -1.7); },
         {x4}},
        {[](Tape<double>& t, const std::vector<TensorD>& in) { return t.conv1x1(in[0], in[1]); },
         {x4, w1}},
        {[](Tape<double>& t, const std::vector<TensorD>& in) { return t.matmul(in[0], in[1]); },
         {m, n}},
        {[](Tape<double>& t, const std::vector<TensorD>& in) {
           return t.add_bias(t.matmul(in[0], in[1]), in[2]);
         },
         {m, n, bias}},
        {[](Tape<double>& t, const std::vector<TensorD>& in) { return t.softmax(in[0], 1); }, {m}},
        {[](Tape<double>& t, const std::vector<TensorD>& in) { return t.softmax(in[0], 0); }, {m}},
        {[](Tape<double>& t, const std::vector<TensorD>& in) { return t.global_avg_pool(in[0]); },
         {x4}},
        {[&](Tape<double>& t, const std::vector<TensorD>& in) {
           return t.cross_entropy(t.matmul(in[0], in[1]), labels);
         },
         {m, n}},
        {[&](Tape<double>& t, const std::vector<TensorD>& in) {
           return t.soft_cross_entropy(t.matmul(in[0], in[1]), soft);
         },
         {m, n}},
        {[](Tape<double>& t, const std::vector<TensorD>& in) {
           return t.add(t.gate_scale(in[0], in[1], 0), t.gate_scale(in[0], in[1], 2));
         },
         {x4, gate}},
    };
    for (std::size_t i = 0; i < cases.size(); ++i) {
      auto report = gradient_check(cases[i].first, cases[i].second, 1e-3, 1e-3);
      EXPECT_TRUE(report.passed) << "case " << i << " seed " << seed << " error "
                                 << report.max_error();
    }
  }
}

TEST(GradientCheck, RejectsNonFiniteInputAndBadStep) {
  auto x = TensorD::parameter(Shape{2}, {1.0, std::nan("")}, "poisoned");
  auto fn = [](Tape<double>& t, const std::vector<TensorD>& in) { return t.sum(in[0]); };
  try {
    gradient_check(fn, {x}, 1e-3, 1e-3);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("poisoned"), std::string::npos);
  }
  auto ok = TensorD::parameter(Shape{1}, {1.0}, "ok");
  EXPECT_THROW(gradient_check(fn, {ok}, 0.0, 1e-3), ContractError);
}

}  // namespace
}  // namespace dra::ag
