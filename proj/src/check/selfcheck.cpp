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


#include "dra/selfcheck.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <random>
#include <sstream>

#include "dra/analysis.hpp"
#include "dra/augmentation.hpp"
#include "dra/datagen.hpp"
#include "dra/gradcheck.hpp"
#include "dra/layers.hpp"

namespace dra {

bool CheckGroup::passed() const {
  return !items.empty() &&
         std::all_of(items.begin(), items.end(), [](const CheckItem& i) { return i.passed; });
}

nlohmann::json CheckGroup::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& i : items) {
    list.push_back({{"name", i.name}, {"passed", i.passed}, {"detail", i.detail}});
  }
  return {{"name", name}, {"passed", passed()}, {"checks", list}};
}

namespace {

using ag::Shape;
using TensorF = ag::Tensor<float>;
using TensorD = ag::Tensor<double>;

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string format(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

template <typename T>
ag::Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double scale,
                            const std::string& name) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<T> v(shape.numel());
  for (T& x : v) x = static_cast<T>(d(rng));
  return ag::Tensor<T>::parameter(std::move(shape), std::move(v), name);
}

CheckItem gradient_item(const std::string& name, const ag::GradientCheckReport& r) {
  return {name, r.passed, "max relative error " + format(r.max_error())};
}

DRABlock<float> random_block(int channels, int experts, GateMode mode, std::mt19937_64& rng) {
  DRABlock<float> b;
  b.in_channels = channels;
  b.out_channels = channels;
  b.conv = random_tensor<float>(Shape{channels, channels, 3, 3}, rng, 0.3, "conv");
  b.gate.config.mode = mode;
  b.gate.experts = experts;
  b.gate.channels = channels;
  if (mode == GateMode::kMoe || mode == GateMode::kGumbelST) {
    b.gate.weight = random_tensor<float>(Shape{channels, experts}, rng, 0.7, "gate");
  }
  for (int k = 0; k < experts; ++k) {
    b.adapters.push_back(random_tensor<float>(Shape{channels, channels, 1, 1}, rng, 0.3, "adapter"));
  }
  return b;
}

std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
  const int n = static_cast<int>(a.size());
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t =
            (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ev[i] = a[i][i];
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

}  // namespace

CheckGroup check_gradients() {
  Timer timer;
  CheckGroup g{"gradient integrity", {}, 0.0};
  constexpr double kStep = 1e-3, kTol = 1e-3;
  std::mt19937_64 rng(100);
  auto p = [&](Shape s, const char* name) { return random_tensor<double>(s, rng, 1.0, name); };
  const auto x4 = p(Shape{2, 3, 3, 3}, "x4");
  const auto y4 = p(Shape{2, 3, 3, 3}, "y4");
  const auto img = p(Shape{2, 2, 5, 5}, "image");
  const auto w3 = p(Shape{3, 2, 3, 3}, "w3");
  const auto w1 = p(Shape{2, 3, 1, 1}, "w1");
  const auto m = p(Shape{3, 4}, "m");
  const auto n = p(Shape{4, 2}, "n");
  const auto bias = p(Shape{2}, "bias");
  const auto gate = p(Shape{2, 3}, "gate");
  const std::vector<int> labels = {1, 0, 1};
  const TensorD soft(Shape{3, 2}, std::vector<double>{0.3, 0.7, 1.0, 0.0, 0.5, 0.5});

  using F = ag::CheckedFunction;
  using In = std::vector<TensorD>;
  const std::vector<std::tuple<std::string, F, In>> cases = {
      {"conv2d stride 1", [](ag::Tape<double>& t, const In& in) { return t.conv2d(in[0], in[1], 1, 1); },
       {img, w3}},
      {"conv2d stride 2", [](ag::Tape<double>& t, const In& in) { return t.conv2d(in[0], in[1], 2, 1); },
       {img, w3}},
      {"conv1x1", [](ag::Tape<double>& t, const In& in) { return t.conv1x1(in[0], in[1]); }, {x4, w1}},
      {"relu", [](ag::Tape<double>& t, const In& in) { return t.relu(in[0]); }, {x4}},
      {"add", [](ag::Tape<double>& t, const In& in) { return t.add(in[0], in[1]); }, {x4, y4}},
      {"mul", [](ag::Tape<double>& t, const In& in) { return t.mul(in[0], in[1]); }, {x4, y4}},
      {"scale", [](ag::Tape<double>& t, const In& in) { return t.scale(in[0], -1.7); }, {x4}},
      {"sum", [](ag::Tape<double>& t, const In& in) { return t.sum(in[0]); }, {x4}},
      {"matmul", [](ag::Tape<double>& t, const In& in) { return t.matmul(in[0], in[1]); }, {m, n}},
      {"add_bias",
       [](ag::Tape<double>& t, const In& in) { return t.add_bias(t.matmul(in[0], in[1]), in[2]); },
       {m, n, bias}},
      {"softmax", [](ag::Tape<double>& t, const In& in) { return t.softmax(in[0], 1); }, {m}},
      {"global_avg_pool", [](ag::Tape<double>& t, const In& in) { return t.global_avg_pool(in[0]); },
       {x4}},
      {"cross_entropy",
       [&](ag::Tape<double>& t, const In& in) { return t.cross_entropy(t.matmul(in[0], in[1]), labels); },
       {m, n}},
      {"soft_cross_entropy",
       [&](ag::Tape<double>& t, const In& in) {
         return t.soft_cross_entropy(t.matmul(in[0], in[1]), soft);
       },
       {m, n}},
      {"gate_scale",
       [](ag::Tape<double>& t, const In& in) {
         return t.add(t.gate_scale(in[0], in[1], 0), t.gate_scale(in[0], in[1], 2));
       },
       {x4, gate}},
  };
  for (const auto& [name, fn, inputs] : cases) {
    g.items.push_back(gradient_item(name, ag::gradient_check(fn, inputs, kStep, kTol)));
  }

  // Style exchange alone, with its stop-gradient sources held fixed.
  {
    StyleExchangePlan plan;
    plan.config.eta = 0.5;
    plan.pairing = {1, 2, 0};
    FeatureMoments sources;
    const auto feats = p(Shape{3, 2, 3, 3}, "features");
    plan.captured_sources = &sources;
    {
      ag::Tape<double> tape;
      style_exchange_batch(tape, feats, plan);
    }
    plan.captured_sources = nullptr;
    plan.frozen_sources = &sources;
    const F fn = [&](ag::Tape<double>& t, const In& in) { return style_exchange_batch(t, in[0], plan); };
    g.items.push_back(gradient_item("style_exchange", ag::gradient_check(fn, {feats}, kStep, kTol)));
  }

  // Full network: two blocks, K=2, style exchange on the final map.
  {
    ArchitectureSpec spec;
    spec.image_size = 8;
    spec.stage_channels = {4};
    spec.blocks_per_stage = 2;
    spec.experts = 2;
    spec.num_classes = 3;
    const BasicNetwork<double> net = Network::initialize(spec, 8).cast<double>();
    std::vector<double> pixels(3 * 3 * 8 * 8);
    std::normal_distribution<double> d;
    for (double& v : pixels) v = d(rng);
    const TensorD images(Shape{3, 3, 8, 8}, pixels);
    const std::vector<int> y = {2, 0, 1};
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
    const F fn = [&](ag::Tape<double>& t, const In&) {
      return t.cross_entropy(net.forward(t, images, ctx).logits, y);
    };
    const auto report = ag::gradient_check(fn, net.parameters(), kStep, kTol);
    g.items.push_back(gradient_item("network 2 blocks, K=2, style exchange", report));
  }

  g.seconds = timer.seconds();
  g.items.push_back({"runtime under 60 s", g.seconds < 60.0, format(g.seconds) + " s"});
  return g;
}

CheckGroup check_gate_contracts(int evaluations, std::uint64_t seed) {
  Timer timer;
  CheckGroup g{"gate contracts", {}, 0.0};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_k(1, 5), pick_c(1, 8), pick_n(1, 16);

  double worst_sum = 0.0;
  long moe = 0, gumbel = 0, gumbel_bad = 0, fixed = 0, fixed_bad = 0, zero_bad = 0, zero = 0;
  std::uint64_t step = 0;
  while (moe < evaluations || gumbel < evaluations || fixed < evaluations || zero < evaluations) {
    const int k = pick_k(rng), c = pick_c(rng), n = pick_n(rng);
    const TensorF x = random_tensor<float>(Shape{n, c, 3, 3}, rng, 2.0, "x");
    ForwardContext ctx;
    ctx.training = (step % 2) == 0;
    ctx.noise_seed = seed;
    ctx.step = step++;
    ag::Tape<float> tape;

    GateUnit<float> unit;
    unit.experts = k;
    unit.channels = c;
    unit.weight = random_tensor<float>(Shape{c, k}, rng, 1.5, "W");
    if (moe < evaluations) {
      const TensorF out = gate_forward(tape, unit, x, ctx, 0);
      for (int i = 0; i < n; ++i, ++moe) {
        double s = 0.0;
        for (int e = 0; e < k; ++e) s += out.values()[i * k + e];
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
    }
    if (gumbel < evaluations) {
      unit.config.mode = GateMode::kGumbelST;
      const TensorF out = gumbel_gate_forward(tape, unit, x, ctx, 0);
      for (int i = 0; i < n; ++i, ++gumbel) {
        int ones = 0, others = 0;
        for (int e = 0; e < k; ++e) {
          const float v = out.values()[i * k + e];
          ones += v == 1.0f;
          others += v != 0.0f && v != 1.0f;
        }
        gumbel_bad += ones != 1 || others != 0;
      }
    }
    if (zero < evaluations) {
      GateUnit<float> flat = unit;
      flat.config.mode = GateMode::kMoe;
      flat.weight = TensorF::parameter(Shape{c, k}, std::vector<float>(c * k, 0.0f), "W0");
      const TensorF out = gate_forward(tape, flat, x, ForwardContext{}, 0);
      for (int i = 0; i < n; ++i, ++zero)
        for (int e = 0; e < k; ++e) zero_bad += out.values()[i * k + e] != 1.0f / static_cast<float>(k);
    }
    if (fixed < evaluations) {
      DRABlock<float> block = random_block(c, k, GateMode::kFixed, rng);
      std::vector<int> tags(static_cast<std::size_t>(n));
      std::uniform_int_distribution<int> dom(0, k - 1);
      for (int& t : tags) t = dom(rng);
      ForwardContext fctx = ctx;
      fctx.domain_tags = tags;
      const auto out = dra_block_forward(tape, block, x, fctx);
      for (int i = 0; i < n; ++i, ++fixed)
        for (int e = 0; e < k; ++e)
          fixed_bad += out.gate.values()[i * k + e] != (e == tags[i] ? 1.0f : 0.0f);
    }
  }
  g.items.push_back({"rows sum to one within 1e-6", worst_sum <= 1e-6,
                     std::to_string(moe) + " evaluations, worst deviation " + format(worst_sum)});
  g.items.push_back({"gumbel forward is one-hot", gumbel_bad == 0,
                     std::to_string(gumbel) + " evaluations, " + std::to_string(gumbel_bad) +
                         " violations"});
  g.items.push_back({"fixed gates follow domain tags", fixed_bad == 0,
                     std::to_string(fixed) + " evaluations, " + std::to_string(fixed_bad) +
                         " mismatched entries"});
  g.items.push_back({"zero weights give exactly 1/K", zero_bad == 0,
                     std::to_string(zero) + " evaluations, " + std::to_string(zero_bad) +
                         " inexact entries"});
  g.seconds = timer.seconds();
  return g;
}

CheckGroup check_degeneracy() {
  Timer timer;
  CheckGroup g{"degeneracy identities", {}, 0.0};
  std::mt19937_64 rng(7);

  bool bitwise = true;
  for (int trial = 0; trial < 10; ++trial) {
    const DRABlock<float> block = random_block(4, 1, GateMode::kMoe, rng);
    const TensorF x = random_tensor<float>(Shape{3, 4, 5, 5}, rng, 1.0, "x");
    ForwardContext ctx;
    ctx.training = trial % 2 == 1;
    ctx.noise_seed = trial;
    ag::Tape<float> tape;
    const auto out = dra_block_forward(tape, block, x, ctx);
    const TensorF ref = residual_adapter_block_forward(tape, block, x, block.adapters[0]);
    bitwise = bitwise && out.output.numel() == ref.numel() &&
              std::memcmp(out.output.values().data(), ref.values().data(),
                          ref.numel() * sizeof(float)) == 0;
  }
  g.items.push_back({"K=1 equals the single-adapter block bitwise", bitwise, "10 random blocks"});

  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    DRABlock<float> block = random_block(3, 3, GateMode::kMoe, rng);
    for (int k = 1; k < 3; ++k) block.adapters[k] = block.adapters[0].clone();
    const TensorF x = random_tensor<float>(Shape{2, 3, 4, 4}, rng, 1.0, "x");
    ag::Tape<float> tape;
    const TensorF base = dra_block_forward(tape, block, x, ForwardContext{}).output;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<float> gates(6);
    for (int i = 0; i < 2; ++i) {
      const double a = u(rng), b = u(rng), c = u(rng), s = a + b + c;
      gates[i * 3] = static_cast<float>(a / s);
      gates[i * 3 + 1] = static_cast<float>(b / s);
      gates[i * 3 + 2] = static_cast<float>(c / s);
    }
    const TensorF y = dra_block_combine(tape, block, x, TensorF(Shape{2, 3}, gates));
    for (std::size_t i = 0; i < y.numel(); ++i)
      worst = std::max(worst, static_cast<double>(std::abs(y.values()[i] - base.values()[i])));
  }
  g.items.push_back({"identical adapters are gate-invariant within 1e-6", worst <= 1e-6,
                     "worst difference " + format(worst)});

  bool identity = true;
  double moment_err = 0.0;
  std::uniform_real_distribution<double> loc(-2.0, 2.0), spread(0.5, 3.0);
  for (int trial = 0; trial < 10; ++trial) {
    const TensorF x = random_tensor<float>(Shape{3, 6, 6}, rng, spread(rng), "x");
    TensorF z = random_tensor<float>(Shape{3, 6, 6}, rng, spread(rng), "z");
    const double shift = loc(rng);
    for (float& v : z.values()) v = static_cast<float>(v + shift);
    StyleExchangeConfig cfg;
    cfg.eta = 0.0;
    const TensorF same = style_exchange(x, z, cfg);
    identity = identity && std::memcmp(same.values().data(), x.values().data(),
                                       x.numel() * sizeof(float)) == 0;
    cfg.eta = 1.0;
    const TensorF y = style_exchange(x, z, cfg);
    auto moments = [](const TensorF& t, double& mean, double& sd) {
      mean = 0.0;
      for (float v : t.values()) mean += v;
      mean /= t.numel();
      double var = 0.0;
      for (float v : t.values()) var += (v - mean) * (v - mean);
      sd = std::sqrt(var / t.numel());
    };
    double my, sy, mz, sz;
    moments(y, my, sy);
    moments(z, mz, sz);
    moment_err = std::max({moment_err, std::abs(my - mz), std::abs(sy - sz)});
  }
  g.items.push_back({"eta=0 style exchange is the identity bitwise", identity, "10 random maps"});
  g.items.push_back({"eta=1 output moments match the source within 1e-4", moment_err <= 1e-4,
                     "worst moment error " + format(moment_err)});
  g.seconds = timer.seconds();
  return g;
}

CheckGroup check_parameter_accounting() {
  Timer timer;
  CheckGroup g{"parameter accounting", {}, 0.0};
  struct Case {
    std::vector<int> channels;
    int blocks;
    int experts;
  };
  const std::vector<Case> cases = {{{8, 16, 32}, 2, 2}, {{8, 16}, 1, 1}, {{16, 32, 64}, 1, 4}};
  for (const auto& c : cases) {
    ArchitectureSpec spec;
    spec.stage_channels = c.channels;
    spec.blocks_per_stage = c.blocks;
    spec.experts = c.experts;
    Network net = Network::initialize(spec, 1);
    net.set_backbone_frozen(true);
    const std::int64_t classifier =
        static_cast<std::int64_t>(c.channels.back()) * spec.num_classes + spec.num_classes;
    const std::int64_t want = adapter_parameter_formula(spec) + classifier;
    const std::int64_t got = count_parameters(net, true);
    std::string channels;
    for (int ch : c.channels) channels += (channels.empty() ? "" : "/") + std::to_string(ch);
    g.items.push_back({"channels " + channels + ", " + std::to_string(spec.layers()) +
                           " layers, K=" + std::to_string(c.experts),
                       got == want,
                       "learnable " + std::to_string(got) + ", formula plus classifier " + std::to_string(want)});
  }
  g.seconds = timer.seconds();
  return g;
}

CheckGroup check_analysis(int matrices) {
  Timer timer;
  CheckGroup g{"analysis correctness", {}, 0.0};

  std::mt19937_64 rng(11);
  std::normal_distribution<double> d;
  double worst = 0.0;
  for (int t = 0; t < matrices; ++t) {
    std::vector<std::vector<double>> x(20, std::vector<double>(8));
    for (auto& row : x)
      for (double& v : row) v = d(rng);
    std::vector<double> mean(8, 0.0);
    for (const auto& row : x)
      for (int j = 0; j < 8; ++j) mean[j] += row[j] / 20.0;
    std::vector<std::vector<double>> cov(8, std::vector<double>(8, 0.0));
    for (const auto& row : x)
      for (int a = 0; a < 8; ++a)
        for (int b = 0; b < 8; ++b) cov[a][b] += (row[a] - mean[a]) * (row[b] - mean[b]) / 19.0;
    const auto oracle = jacobi_eigenvalues(cov);
    const auto r = pca(x, 8);
    for (int i = 0; i < 8; ++i) worst = std::max(worst, std::abs(r.eigenvalues[i] - oracle[i]));
  }
  g.items.push_back({"PCA eigenvalues match a Jacobi solver within 1e-6", worst <= 1e-6,
                     std::to_string(matrices) + " random 20x8 matrices, worst " + format(worst)});

  DatasetSpec ds;
  ds.samples = 150;
  ds.image_size = 16;
  const LatentDomainDataset data = generate_dataset(ds);
  const TagCapability tags = TagCapability::evaluation();

  bool exact = true;
  std::string detail;
  for (int k : {1, 2, 4}) {
    ArchitectureSpec spec;
    spec.image_size = 16;
    spec.experts = k;
    spec.gate.mode = GateMode::kUniform;
    const Network net = Network::initialize(spec, 1);
    const auto recs = extract_paths(net, data, data.test_indices(), tags);
    for (int l = 0; l < spec.layers(); ++l) {
      std::vector<double> rows;
      for (const auto& r : recs)
        for (int e = 0; e < k; ++e) rows.push_back(r.at(e, l));
      const double pur = purity(rows, k);
      exact = exact && pur == 1.0 / k;
    }
    detail += (detail.empty() ? "K=" : ", K=") + std::to_string(k);
  }
  g.items.push_back({"uniform gates have purity exactly 1/K", exact, detail});

  ArchitectureSpec spec;
  spec.image_size = 16;
  spec.experts = ds.domains;
  spec.gate.mode = GateMode::kFixed;
  const Network net = Network::initialize(spec, 1);
  const auto recs = extract_paths(net, data, data.test_indices(), tags);
  std::vector<std::vector<double>> flat;
  for (const auto& r : recs) flat.push_back(r.flatten());
  const PCAResult p = pca(flat, 2);
  std::vector<std::array<double, 2>> centroid(static_cast<std::size_t>(ds.domains), {0.0, 0.0});
  std::vector<int> count(static_cast<std::size_t>(ds.domains), 0);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    centroid[recs[i].domain][0] += p.projections[i][0];
    centroid[recs[i].domain][1] += p.projections[i][1];
    ++count[recs[i].domain];
  }
  for (int c = 0; c < ds.domains; ++c)
    for (double& v : centroid[c]) v /= std::max(count[c], 1);
  double intra = 0.0, inter = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& c = centroid[recs[i].domain];
    intra = std::max(intra, std::hypot(p.projections[i][0] - c[0], p.projections[i][1] - c[1]));
  }
  for (int a = 0; a < ds.domains; ++a)
    for (int b = a + 1; b < ds.domains; ++b)
      inter = std::min(inter, std::hypot(centroid[a][0] - centroid[b][0],
                                         centroid[a][1] - centroid[b][1]));
  const bool all_present = std::all_of(count.begin(), count.end(), [](int n) { return n > 0; });
  g.items.push_back({"fixed gates give D separated path clusters", all_present && inter > intra,
                     std::to_string(ds.domains) + " clusters, min centroid distance " +
                         format(inter) + ", max intra-cluster radius " + format(intra)});
  g.seconds = timer.seconds();
  return g;
}

std::vector<CheckGroup> run_self_check() {
  return {check_gradients(), check_gate_contracts(), check_degeneracy(),
          check_parameter_accounting(), check_analysis()};
}

}  // namespace dra
