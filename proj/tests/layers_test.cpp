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
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dra/error.hpp"
#include "dra/gradcheck.hpp"
#include "dra/layers.hpp"

namespace dra {
namespace {

using ag::Shape;
using TensorF = ag::Tensor<float>;

TensorF random_tensor(Shape shape, std::mt19937_64& rng, double scale, const std::string& name) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<float> v(shape.numel());
  for (float& x : v) x = static_cast<float>(d(rng));
  return TensorF::parameter(std::move(shape), std::move(v), name);
}

DRABlock<float> make_block(int channels, int experts, GateMode mode, std::mt19937_64& rng) {
  DRABlock<float> b;
  b.in_channels = channels;
  b.out_channels = channels;
  b.conv = random_tensor(Shape{channels, channels, 3, 3}, rng, 0.3, "conv");
  b.gate.config.mode = mode;
  b.gate.experts = experts;
  b.gate.channels = channels;
  if (mode == GateMode::kMoe || mode == GateMode::kGumbelST) {
    b.gate.weight = random_tensor(Shape{channels, experts}, rng, 0.5, "gate");
  }
  for (int k = 0; k < experts; ++k) {
    b.adapters.push_back(random_tensor(Shape{channels, channels, 1, 1}, rng, 0.3, "adapter"));
  }
  return b;
}

GateUnit<float> make_gate(int channels, int experts, std::vector<float> weight) {
  GateUnit<float> g;
  g.experts = experts;
  g.channels = channels;
  g.weight = TensorF::parameter(Shape{channels, experts}, std::move(weight), "W");
  return g;
}

void expect_rows_normalized(const TensorF& g, double tol) {
  const int n = g.shape()[0], k = g.shape()[1];
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int e = 0; e < k; ++e) {
      const float v = g.values()[i * k + e];
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, tol);
  }
}

TEST(Gate, ZeroWeightIsUniform) {
  for (int k : {1, 2, 3, 5}) {
    const GateUnit<float> gate = make_gate(4, k, std::vector<float>(4 * k, 0.0f));
    std::mt19937_64 rng(k);
    const TensorF x = random_tensor(Shape{3, 4, 2, 2}, rng, 1.0, "x");
    ag::Tape<float> tape;
    const TensorF g = gate_forward(tape, gate, x, ForwardContext{}, 0);
    for (float v : g.values()) EXPECT_EQ(v, 1.0f / static_cast<float>(k));
  }
}

TEST(Gate, PooledLogitsOneZero) {
  // One channel pooling to 1 and W = (1, 0) give logits (1, 0).
  const GateUnit<float> gate = make_gate(1, 2, {1.0f, 0.0f});
  const TensorF x(Shape{1, 1, 3, 3}, 1.0f);
  ag::Tape<float> tape;
  const TensorF g = gate_forward(tape, gate, x, ForwardContext{}, 0);
  EXPECT_NEAR(g.values()[0], 0.7310585786300049, 1e-4);
  EXPECT_NEAR(g.values()[1], 0.2689414213699951, 1e-4);
}

TEST(Gate, TrainingNoisePerturbsButNormalizes) {
  std::mt19937_64 rng(3);
  GateUnit<float> gate = make_gate(4, 3, std::vector<float>(12, 0.2f));
  const TensorF x = random_tensor(Shape{8, 4, 2, 2}, rng, 1.0, "x");
  ag::Tape<float> tape;
  const TensorF clean = gate_forward(tape, gate, x, ForwardContext{}, 0);
  ForwardContext ctx;
  ctx.training = true;
  ctx.noise_seed = 42;
  const TensorF noisy = gate_forward(tape, gate, x, ctx, 0);
  expect_rows_normalized(noisy, 1e-6);
  double diff = 0.0;
  for (std::size_t i = 0; i < clean.numel(); ++i) {
    diff += std::abs(clean.values()[i] - noisy.values()[i]);
  }
  EXPECT_GT(diff, 0.0);

  const TensorF again = gate_forward(tape, gate, x, ctx, 0);
  for (std::size_t i = 0; i < noisy.numel(); ++i) EXPECT_EQ(noisy.values()[i], again.values()[i]);
}

TEST(Gate, NoiseDependsOnSampleIdNotBatchPosition) {
  std::mt19937_64 rng(4);
  GateUnit<float> gate = make_gate(2, 2, {0.3f, -0.1f, 0.2f, 0.4f});
  const TensorF x = random_tensor(Shape{2, 2, 2, 2}, rng, 1.0, "x");
  TensorF swapped(Shape{2, 2, 2, 2});
  std::copy(x.values().begin() + 8, x.values().end(), swapped.values().begin());
  std::copy(x.values().begin(), x.values().begin() + 8, swapped.values().begin() + 8);
  const std::vector<std::int64_t> ids = {10, 20};
  const std::vector<std::int64_t> ids_swapped = {20, 10};
  ForwardContext a;
  a.training = true;
  a.noise_seed = 5;
  a.sample_ids = ids;
  ForwardContext b = a;
  b.sample_ids = ids_swapped;
  ag::Tape<float> tape;
  const TensorF ga = gate_forward(tape, gate, x, a, 1);
  const TensorF gb = gate_forward(tape, gate, swapped, b, 1);
  EXPECT_EQ(ga.values()[0], gb.values()[2]);
  EXPECT_EQ(ga.values()[3], gb.values()[1]);
}

TEST(Gate, ChannelMismatch) {
  const GateUnit<float> gate = make_gate(3, 2, std::vector<float>(6, 0.0f));
  ag::Tape<float> tape;
  EXPECT_THROW(gate_forward(tape, gate, TensorF(Shape{1, 4, 2, 2}), ForwardContext{}, 0),
               DimensionError);
}

TEST(GumbelGate, ForwardIsOneHot) {
  std::mt19937_64 rng(6);
  GateUnit<float> gate = make_gate(4, 3, std::vector<float>(12, 0.0f));
  gate.weight = random_tensor(Shape{4, 3}, rng, 1.0, "W");
  gate.config.mode = GateMode::kGumbelST;
  const TensorF x = random_tensor(Shape{32, 4, 2, 2}, rng, 1.0, "x");
  for (bool training : {false, true}) {
    ForwardContext ctx;
    ctx.training = training;
    ctx.noise_seed = 77;
    ag::Tape<float> tape;
    const TensorF g = gumbel_gate_forward(tape, gate, x, ctx, 0);
    for (int i = 0; i < 32; ++i) {
      int ones = 0;
      for (int e = 0; e < 3; ++e) {
        const float v = g.values()[i * 3 + e];
        EXPECT_TRUE(v == 0.0f || v == 1.0f);
        ones += v == 1.0f;
      }
      EXPECT_EQ(ones, 1);
    }
  }
}

TEST(GumbelGate, ZeroLogitsSelectUniformly) {
  const int k = 3;
  const int draws = 10000;
  GateUnit<float> gate = make_gate(1, k, std::vector<float>(k, 0.0f));
  gate.config.mode = GateMode::kGumbelST;
  const TensorF x(Shape{draws, 1, 1, 1}, 1.0f);
  ForwardContext ctx;
  ctx.training = true;
  ctx.noise_seed = 2024;
  ag::Tape<float> tape;
  const TensorF g = gumbel_gate_forward(tape, gate, x, ctx, 0);
  std::vector<int> counts(k, 0);
  for (int i = 0; i < draws; ++i)
    for (int e = 0; e < k; ++e) counts[e] += g.values()[i * k + e] == 1.0f;
  for (int e = 0; e < k; ++e) EXPECT_NEAR(counts[e] / double(draws), 1.0 / k, 0.05);
}

TEST(GumbelGate, StraightThroughGradientReachesW) {
  std::mt19937_64 rng(8);
  GateUnit<float> gate = make_gate(3, 2, std::vector<float>(6, 0.0f));
  gate.weight = random_tensor(Shape{3, 2}, rng, 0.5, "W");
  gate.config.mode = GateMode::kGumbelST;
  const TensorF x = random_tensor(Shape{4, 3, 2, 2}, rng, 1.0, "x");
  ForwardContext ctx;
  ctx.training = true;
  ag::Tape<float> tape;
  const TensorF g = gumbel_gate_forward(tape, gate, x, ctx, 0);
  const TensorF w(Shape{4, 2}, std::vector<float>{1, -2, 0.5f, 3, -1, 1, 2, 0});
  tape.backward(tape.sum(tape.mul(g, w)));
  double norm = 0.0;
  for (float v : gate.weight.grad()) norm += std::abs(v);
  EXPECT_GT(norm, 0.0);
}

TEST(GumbelGate, Errors) {
  GateUnit<float> gate = make_gate(1, 2, {0.0f, 0.0f});
  ag::Tape<float> tape;
  const TensorF x(Shape{1, 1, 1, 1}, 1.0f);
  EXPECT_THROW(gumbel_gate_forward(tape, gate, x, ForwardContext{}, 0), ContractError);
  gate.config.mode = GateMode::kGumbelST;
  gate.config.temperature = 0.0;
  EXPECT_THROW(gumbel_gate_forward(tape, gate, x, ForwardContext{}, 0), ContractError);
}

TEST(FixedGate, OneHotAtDomain) {
  const TensorF a = fixed_gate_forward<float>(0, 2);
  EXPECT_EQ(std::vector<float>(a.values().begin(), a.values().end()),
            (std::vector<float>{1, 0}));
  const TensorF b = fixed_gate_forward<float>(3, 4);
  EXPECT_EQ(std::vector<float>(b.values().begin(), b.values().end()),
            (std::vector<float>{0, 0, 0, 1}));
  EXPECT_THROW(fixed_gate_forward<float>(2, 2), ContractError);
  EXPECT_THROW(fixed_gate_forward<float>(-1, 2), ContractError);
}

TEST(DRABlock, ZeroAdaptersGivePlainResidual) {
  std::mt19937_64 rng(10);
  DRABlock<float> block = make_block(3, 2, GateMode::kMoe, rng);
  for (auto& a : block.adapters) std::fill(a.values().begin(), a.values().end(), 0.0f);
  const TensorF x = random_tensor(Shape{2, 3, 4, 4}, rng, 1.0, "x");
  ag::Tape<float> tape;
  const TensorF y = dra_block_forward(tape, block, x, ForwardContext{}).output;
  const TensorF ref = tape.relu(tape.add(x, tape.conv2d(x, block.conv, 1, 1)));
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.values()[i], ref.values()[i]);
}

TEST(DRABlock, SingleExpertMatchesResidualAdapterBitwise) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    DRABlock<float> block = make_block(4, 1, GateMode::kMoe, rng);
    const TensorF x = random_tensor(Shape{3, 4, 5, 5}, rng, 1.0, "x");
    ForwardContext ctx;
    ctx.training = trial % 2 == 1;
    ctx.noise_seed = trial;
    ag::Tape<float> tape;
    const BlockOutput<float> out = dra_block_forward(tape, block, x, ctx);
    for (float g : out.gate.values()) EXPECT_EQ(g, 1.0f);
    const TensorF ref = residual_adapter_block_forward(tape, block, x, block.adapters[0]);
    ASSERT_EQ(out.output.numel(), ref.numel());
    EXPECT_EQ(std::memcmp(out.output.values().data(), ref.values().data(),
                          ref.numel() * sizeof(float)),
              0);
  }
}

TEST(DRABlock, IdenticalAdaptersAreGateInvariant) {
  std::mt19937_64 rng(12);
  DRABlock<float> block = make_block(3, 3, GateMode::kMoe, rng);
  for (int k = 1; k < 3; ++k) block.adapters[k] = block.adapters[0].clone();
  const TensorF x = random_tensor(Shape{2, 3, 4, 4}, rng, 1.0, "x");
  ag::Tape<float> tape;
  const TensorF base = dra_block_forward(tape, block, x, ForwardContext{}).output;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> g(6);
    for (int i = 0; i < 2; ++i) {
      double a = u(rng), b = u(rng), c = u(rng);
      const double s = a + b + c;
      g[i * 3] = static_cast<float>(a / s);
      g[i * 3 + 1] = static_cast<float>(b / s);
      g[i * 3 + 2] = static_cast<float>(c / s);
    }
    const TensorF y = dra_block_combine(tape, block, x, TensorF(Shape{2, 3}, g));
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.values()[i], base.values()[i], 1e-6);
  }
}

TEST(DRABlock, TransitionHalvesResolution) {
  std::mt19937_64 rng(13);
  ArchitectureSpec spec;
  spec.image_size = 16;
  const Network net = Network::initialize(spec, 1);
  const DRABlock<float>& t = net.blocks()[2];
  ASSERT_TRUE(t.transition());
  const TensorF x = random_tensor(Shape{2, 8, 8, 8}, rng, 1.0, "x");
  ag::Tape<float> tape;
  const BlockOutput<float> out = dra_block_forward(tape, t, x, ForwardContext{});
  EXPECT_EQ(out.output.shape(), (Shape{2, 16, 4, 4}));
  EXPECT_EQ(out.gate.shape(), (Shape{2, 2}));
}

ArchitectureSpec tiny_spec() {
  ArchitectureSpec spec;
  spec.image_size = 8;
  spec.stage_channels = {4};
  spec.blocks_per_stage = 2;
  spec.experts = 2;
  spec.num_classes = 3;
  return spec;
}

TEST(Network, UniformGatePaths) {
  ArchitectureSpec spec = tiny_spec();
  spec.blocks_per_stage = 1;
  spec.gate.mode = GateMode::kUniform;
  const Network net = Network::initialize(spec, 3);
  std::mt19937_64 rng(3);
  const TensorF x = random_tensor(Shape{4, 3, 8, 8}, rng, 1.0, "x");
  ag::Tape<float> tape;
  const NetworkOutput<float> out = net.forward(tape, x, ForwardContext{});
  ASSERT_EQ(out.paths.size(), 4u * 2u * 1u);
  for (float p : out.paths) EXPECT_EQ(p, 0.5f);
}

TEST(Network, PathsHoldGateColumns) {
  const Network net = Network::initialize(tiny_spec(), 4);
  std::mt19937_64 rng(4);
  const TensorF x = random_tensor(Shape{3, 3, 8, 8}, rng, 1.0, "x");
  ag::Tape<float> tape;
  const NetworkOutput<float> out = net.forward(tape, x, ForwardContext{});
  const int k = 2, layers = 2;
  for (int i = 0; i < 3; ++i) {
    for (int l = 0; l < layers; ++l) {
      double s = 0.0;
      for (int e = 0; e < k; ++e) s += out.paths[(i * k + e) * layers + l];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Network, JointLabelSpaceExtent) {
  ArchitectureSpec spec = tiny_spec();
  spec.num_classes = 3 + 4;
  const Network net = Network::initialize(spec, 5);
  ag::Tape<float> tape;
  const NetworkOutput<float> out = net.forward(tape, TensorF(Shape{2, 3, 8, 8}, 0.5f),
                                               ForwardContext{});
  EXPECT_EQ(out.logits.shape(), (Shape{2, 7}));
}

TEST(Network, ResolutionMismatch) {
  const Network net = Network::initialize(tiny_spec(), 5);
  ag::Tape<float> tape;
  EXPECT_THROW(net.forward(tape, TensorF(Shape{1, 3, 16, 16}), ForwardContext{}), DimensionError);
}

TEST(Network, EvalIsDeterministic) {
  const Network net = Network::initialize(ArchitectureSpec{}, 6);
  std::mt19937_64 rng(6);
  const TensorF x = random_tensor(Shape{5, 3, 32, 32}, rng, 1.0, "x");
  ag::Tape<float> t1, t2;
  const NetworkOutput<float> a = net.forward(t1, x, ForwardContext{});
  const NetworkOutput<float> b = net.forward(t2, x, ForwardContext{});
  EXPECT_EQ(std::memcmp(a.logits.values().data(), b.logits.values().data(),
                        a.logits.numel() * sizeof(float)),
            0);
  EXPECT_EQ(a.paths, b.paths);
}

TEST(Network, FrozenBackboneSurvivesUpdates) {
  ArchitectureSpec spec = tiny_spec();
  Network net = Network::initialize(spec, 7);
  net.set_backbone_frozen(true);
  ASSERT_TRUE(net.backbone_frozen());
  std::vector<std::vector<float>> before;
  for (const auto& p : net.backbone_parameters()) {
    before.emplace_back(p.values().begin(), p.values().end());
  }
  std::mt19937_64 rng(7);
  const std::vector<int> labels = {0, 1, 2, 1};
  for (int step = 0; step < 10; ++step) {
    const TensorF x = random_tensor(Shape{4, 3, 8, 8}, rng, 1.0, "x");
    ForwardContext ctx;
    ctx.training = true;
    ctx.step = static_cast<std::uint64_t>(step);
    ag::Tape<float> tape;
    const NetworkOutput<float> out = net.forward(tape, x, ctx);
    tape.backward(tape.cross_entropy(out.logits, labels));
    for (auto p : net.parameters()) {
      if (!p.requires_grad()) continue;
      auto v = p.values();
      auto g = p.grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= 0.1f * g[i];
      p.zero_grad();
    }
  }
  const auto after = net.backbone_parameters();
  for (std::size_t i = 0; i < after.size(); ++i) {
    EXPECT_EQ(std::vector<float>(after[i].values().begin(), after[i].values().end()), before[i])
        << after[i].name();
    EXPECT_FALSE(after[i].has_grad() &&
                 std::any_of(after[i].grad().begin(), after[i].grad().end(),
                             [](float g) { return g != 0.0f; }));
  }
}

TEST(Network, GradientCheckTwoBlocksWithStyleExchange) {
  const ArchitectureSpec spec = tiny_spec();
  BasicNetwork<double> net = Network::initialize(spec, 8).cast<double>();
  std::mt19937_64 rng(8);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> pixels(3 * 3 * 8 * 8);
  for (double& p : pixels) p = d(rng);
  const ag::Tensor<double> images(Shape{3, 3, 8, 8}, pixels);
  const std::vector<int> labels = {2, 0, 1};

  StyleExchangePlan plan;
  plan.config.eta = 0.5;
  plan.pairing = {1, 2, 0};
  FeatureMoments sources;
  ForwardContext ctx;
  ctx.training = true;
  ctx.noise_seed = 99;
  ctx.style = &plan;
  plan.captured_sources = &sources;
  {
    ag::Tape<double> tape;
    net.forward(tape, images, ctx);
  }
  plan.captured_sources = nullptr;
  plan.frozen_sources = &sources;

  const auto fn = [&](ag::Tape<double>& tape, const std::vector<ag::Tensor<double>>&) {
    return tape.cross_entropy(net.forward(tape, images, ctx).logits, labels);
  };
  const ag::GradientCheckReport report = ag::gradient_check(fn, net.parameters(), 1e-3, 1e-3);
  for (const auto& e : report.entries) {
    EXPECT_LT(e.max_relative_error, 1e-3) << e.name;
    EXPECT_GT(e.checked, 0) << e.name;
  }
  EXPECT_TRUE(report.passed);
}

TEST(Parameters, FormulaExamples) {
  ArchitectureSpec one;
  one.stage_channels = {64};
  one.blocks_per_stage = 1;
  one.experts = 2;
  EXPECT_EQ(adapter_parameter_formula(one), 8320);
  one.stage_channels = {8};
  one.experts = 1;
  EXPECT_EQ(adapter_parameter_formula(one), 72);
}

TEST(Parameters, LearnableCountMatchesFormula) {
  for (int k : {1, 2, 4}) {
    ArchitectureSpec spec;
    spec.experts = k;
    Network net = Network::initialize(spec, 1);
    net.set_backbone_frozen(true);
    const std::int64_t classifier = 32 * spec.num_classes + spec.num_classes;
    EXPECT_EQ(count_parameters(net, true), adapter_parameter_formula(spec) + classifier);
    EXPECT_GT(count_parameters(net, false), count_parameters(net, true));
  }
}

TEST(Checkpoint, RoundTrip) {
  ArchitectureSpec spec;
  spec.experts = 3;
  spec.gate.mode = GateMode::kGumbelST;
  Network net = Network::initialize(spec, 12);
  net.set_backbone_frozen(true);
  const nlohmann::json meta = {{"seed", 12}, {"note", "x"}};
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(net, meta);
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DRA1");
  const Checkpoint ck = deserialize_checkpoint(bytes);
  EXPECT_EQ(ck.metadata, meta);
  EXPECT_EQ(ck.network.spec().to_json(), spec.to_json());
  const auto a = net.parameters();
  const auto b = ck.network.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name(), b[i].name());
    EXPECT_EQ(a[i].requires_grad(), b[i].requires_grad());
    EXPECT_EQ(std::vector<float>(a[i].values().begin(), a[i].values().end()),
              std::vector<float>(b[i].values().begin(), b[i].values().end()));
  }
  EXPECT_EQ(serialize_checkpoint(ck.network, ck.metadata), bytes);
}

TEST(Checkpoint, CorruptInputs) {
  const Network net = Network::initialize(ArchitectureSpec{}, 1);
  std::vector<std::uint8_t> bytes = serialize_checkpoint(net, nlohmann::json::object());

  std::vector<std::uint8_t> bad = bytes;
  bad[0] = 'X';
  try {
    deserialize_checkpoint(bad);
    FAIL() << "bad magic accepted";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("DRA1"), std::string::npos);
  }

  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 10);
  EXPECT_THROW(deserialize_checkpoint(cut), FormatError);
  std::vector<std::uint8_t> longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(longer), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/ck.dra"), IoError);
}

TEST(Architecture, JsonRoundTripAndValidation) {
  ArchitectureSpec spec;
  spec.experts = 4;
  spec.gate.mode = GateMode::kFixed;
  spec.gate.noise_std = 0.2;
  const ArchitectureSpec back = ArchitectureSpec::from_json(spec.to_json());
  EXPECT_EQ(back.to_json(), spec.to_json());
  ArchitectureSpec bad;
  bad.stage_channels.clear();
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ArchitectureSpec{};
  bad.image_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_gate_mode("softmax"), ConfigError);
  EXPECT_EQ(parse_gate_mode("gumbel_st"), GateMode::kGumbelST);
}

}  // namespace
}  // namespace dra
