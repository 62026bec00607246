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

#include "dra/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "../common/json_util.hpp"
#include "dra/error.hpp"
#include "dra/rng.hpp"

namespace dra {

const char* gate_mode_name(GateMode mode) {
  switch (mode) {
    case GateMode::kMoe: return "moe";
    case GateMode::kGumbelST: return "gumbel_st";
    case GateMode::kFixed: return "fixed";
    case GateMode::kUniform: return "uniform";
  }
  return "?";
}

GateMode parse_gate_mode(const std::string& name) {
  if (name == "moe") return GateMode::kMoe;
  if (name == "gumbel_st" || name == "gumbel") return GateMode::kGumbelST;
  if (name == "fixed") return GateMode::kFixed;
  if (name == "uniform") return GateMode::kUniform;
  throw ConfigError("unknown gate mode '" + name + "' (expected moe, gumbel_st, fixed, uniform)");
}

void ArchitectureSpec::validate() const {
  if (in_channels < 1) throw ConfigError("architecture: in_channels must be positive");
  if (stage_channels.empty()) throw ConfigError("architecture: at least one stage is required");
  for (int c : stage_channels) {
    if (c < 1) throw ConfigError("architecture: stage channels must be positive");
  }
  if (blocks_per_stage < 1) throw ConfigError("architecture: blocks_per_stage must be >= 1");
  if (stem_stride < 1) throw ConfigError("architecture: stem_stride must be >= 1");
  if (experts < 0) throw ConfigError("architecture: experts (K) must be >= 0");
  if (num_classes < 1) throw ConfigError("architecture: num_classes must be >= 1");
  if (!(gate.noise_std >= 0.0)) throw ConfigError("architecture: noise_std must be >= 0");
  if (!(gate.temperature > 0.0)) {
    throw ConfigError("architecture: gumbel temperature must be positive");
  }
  int side = image_size;
  if (side < 1) throw ConfigError("architecture: image_size must be positive");
  side = (side - 1) / stem_stride + 1;
  for (std::size_t s = 1; s < stage_channels.size(); ++s) side = (side - 1) / 2 + 1;
  if (side < 1) throw ConfigError("architecture: image too small for the stage layout");
}

nlohmann::json ArchitectureSpec::to_json() const {
  return {
      {"in_channels", in_channels},
      {"image_size", image_size},
      {"stem_stride", stem_stride},
      {"stage_channels", stage_channels},
      {"blocks_per_stage", blocks_per_stage},
      {"experts", experts},
      {"gate",
       {{"mode", gate_mode_name(gate.mode)},
        {"noise_std", gate.noise_std},
        {"temperature", gate.temperature}}},
      {"num_classes", num_classes},
  };
}

ArchitectureSpec ArchitectureSpec::from_json(const nlohmann::json& j) {
  jsonutil::reject_unknown(j,
                           {"in_channels", "image_size", "stem_stride", "stage_channels",
                            "blocks_per_stage", "experts", "gate", "num_classes"},
                           "architecture");
  ArchitectureSpec s;
  try {
    s.in_channels = j.value("in_channels", s.in_channels);
    s.image_size = j.value("image_size", s.image_size);
    s.stem_stride = j.value("stem_stride", s.stem_stride);
    s.stage_channels = j.value("stage_channels", s.stage_channels);
    s.blocks_per_stage = j.value("blocks_per_stage", s.blocks_per_stage);
    s.experts = j.value("experts", s.experts);
    s.num_classes = j.value("num_classes", s.num_classes);
    if (j.contains("gate")) {
      const auto& g = j.at("gate");
      jsonutil::reject_unknown(g, {"mode", "noise_std", "temperature"}, "architecture.gate");
      s.gate.mode = parse_gate_mode(g.value("mode", std::string("moe")));
      s.gate.noise_std = g.value("noise_std", s.gate.noise_std);
      s.gate.temperature = g.value("temperature", s.gate.temperature);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("architecture: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

template <typename T>
ag::Tensor<T> gate_logits(ag::Tape<T>& tape, const GateUnit<T>& gate,
                          const ag::Tensor<T>& features) {
  if (features.shape().rank() != 4 || features.shape()[1] != gate.channels) {
    throw DimensionError("gate: features " + features.shape().str() + " do not match " +
                         std::to_string(gate.channels) + " gate channels");
  }
  if (!gate.weight.defined()) throw ContractError("gate: this gate mode has no weight");
  return tape.matmul(tape.global_avg_pool(features), gate.weight);
}

std::int64_t sample_id(const ForwardContext& ctx, int i) {
  if (ctx.sample_ids.empty()) return i;
  return ctx.sample_ids[static_cast<std::size_t>(i)];
}

void check_ids(const ForwardContext& ctx, int batch) {
  if (!ctx.sample_ids.empty() && static_cast<int>(ctx.sample_ids.size()) != batch) {
    throw DimensionError("forward: " + std::to_string(ctx.sample_ids.size()) +
                         " sample ids for a batch of " + std::to_string(batch));
  }
}

}  // namespace

template <typename T>
ag::Tensor<T> gate_forward(ag::Tape<T>& tape, const GateUnit<T>& gate,
                           const ag::Tensor<T>& features, const ForwardContext& ctx, int layer) {
  ag::Tensor<T> logits = gate_logits(tape, gate, features);
  const int n = logits.shape()[0];
  const int k = gate.experts;
  if (ctx.training && gate.config.noise_std > 0.0) {
    check_ids(ctx, n);
    const CounterRng stream(hash_seed({ctx.noise_seed, ctx.step, static_cast<std::uint64_t>(layer),
                                       0x6a7eULL}));
    ag::Tensor<T> noise(logits.shape());
    auto nv = noise.values();
    for (int i = 0; i < n; ++i) {
      const CounterRng draw = stream.fork(static_cast<std::uint64_t>(sample_id(ctx, i)));
      for (int e = 0; e < k; ++e) {
        nv[i * k + e] = static_cast<T>(gate.config.noise_std * draw.normal(e));
      }
    }
    logits = tape.add(logits, noise);
  }
  return tape.softmax(logits, 1);
}

template <typename T>
ag::Tensor<T> gumbel_gate_forward(ag::Tape<T>& tape, const GateUnit<T>& gate,
                                  const ag::Tensor<T>& features, const ForwardContext& ctx,
                                  int layer) {
  if (gate.config.mode != GateMode::kGumbelST) {
    throw ContractError("gumbel_gate_forward: gate mode is not gumbel_st");
  }
  if (!(gate.config.temperature > 0.0)) {
    throw ContractError("gumbel_gate_forward: temperature must be positive");
  }
  ag::Tensor<T> logits = gate_logits(tape, gate, features);
  const int n = logits.shape()[0];
  const int k = gate.experts;
  const T inv_temp = static_cast<T>(1.0 / gate.config.temperature);
  check_ids(ctx, n);
  const CounterRng stream(hash_seed({ctx.noise_seed, ctx.step, static_cast<std::uint64_t>(layer),
                                     0x9b3bULL}));

  std::vector<T> soft(static_cast<std::size_t>(n) * k);
  ag::Tensor<T> hard(logits.shape());
  auto lv = logits.values();
  auto hv = hard.values();
  for (int i = 0; i < n; ++i) {
    const CounterRng draw = stream.fork(static_cast<std::uint64_t>(sample_id(ctx, i)));
    T* s = soft.data() + static_cast<std::size_t>(i) * k;
    T peak = -std::numeric_limits<T>::infinity();
    int best = 0;
    for (int e = 0; e < k; ++e) {
      const T g = ctx.training ? static_cast<T>(draw.gumbel(e)) : T(0);
      s[e] = (lv[i * k + e] + g) * inv_temp;
      if (s[e] > peak) {  // strict: lowest index wins ties
        peak = s[e];
        best = e;
      }
    }
    T total = T(0);
    for (int e = 0; e < k; ++e) {
      s[e] = std::exp(s[e] - peak);
      total += s[e];
    }
    for (int e = 0; e < k; ++e) s[e] /= total;
    hv[i * k + best] = T(1);
  }
  if (!logits.requires_grad()) return hard;
  ag::Tensor<T> in = logits;
  return tape.record(hard, {logits}, [in, hard, soft = std::move(soft), n, k,
                                      inv_temp]() mutable {
    auto dy = hard.grad();
    auto dx = in.grad();
    for (int i = 0; i < n; ++i) {
      const T* s = soft.data() + static_cast<std::size_t>(i) * k;
      T inner = T(0);
      for (int e = 0; e < k; ++e) inner += s[e] * dy[i * k + e];
      for (int e = 0; e < k; ++e) dx[i * k + e] += inv_temp * s[e] * (dy[i * k + e] - inner);
    }
  });
}

template <typename T>
ag::Tensor<T> fixed_gate_forward(int domain, int experts) {
  if (experts < 1) throw ContractError("fixed gate: K must be positive");
  if (domain < 0 || domain >= experts) {
    throw ContractError("fixed gate: domain " + std::to_string(domain) + " outside [0, " +
                        std::to_string(experts) + ")");
  }
  ag::Tensor<T> g(ag::Shape{experts});
  g.values()[static_cast<std::size_t>(domain)] = T(1);
  return g;
}

namespace {

template <typename T>
ag::Tensor<T> identity_path(ag::Tape<T>& tape, const DRABlock<T>& block, const ag::Tensor<T>& x) {
  if (block.transition()) return tape.conv2d(x, block.projection, block.stride, 0);
  return x;
}

template <typename T>
void check_block_input(const DRABlock<T>& block, const ag::Tensor<T>& x) {
  if (x.shape().rank() != 4 || x.shape()[1] != block.in_channels) {
    throw DimensionError("block " + std::to_string(block.layer_index) + ": input " +
                         x.shape().str() + " does not have " +
                         std::to_string(block.in_channels) + " channels");
  }
}

template <typename T>
ag::Tensor<T> gate_values(ag::Tape<T>& tape, const DRABlock<T>& block, const ag::Tensor<T>& u,
                          const ForwardContext& ctx) {
  const int n = u.shape()[0];
  const int k = block.gate.experts;
  switch (block.gate.config.mode) {
    case GateMode::kMoe:
      return gate_forward(tape, block.gate, u, ctx, block.layer_index);
    case GateMode::kGumbelST:
      return gumbel_gate_forward(tape, block.gate, u, ctx, block.layer_index);
    case GateMode::kUniform:
      return ag::Tensor<T>(ag::Shape{n, k}, T(1) / static_cast<T>(k));
    case GateMode::kFixed: {
      if (static_cast<int>(ctx.domain_tags.size()) != n) {
        throw ContractError("fixed gates need the domain tag of every sample in the batch");
      }
      ag::Tensor<T> g(ag::Shape{n, k});
      for (int i = 0; i < n; ++i) {
        ag::Tensor<T> row = fixed_gate_forward<T>(ctx.domain_tags[i], k);
        std::copy(row.values().begin(), row.values().end(), g.values().begin() + i * k);
      }
      return g;
    }
  }
  throw ContractError("unknown gate mode");
}

template <typename T>
ag::Tensor<T> assemble(ag::Tape<T>& tape, const DRABlock<T>& block, const ag::Tensor<T>& x,
                       const ag::Tensor<T>& u, const ag::Tensor<T>& gate) {
  ag::Tensor<T> sum = tape.add(u, tape.conv2d(x, block.conv, block.stride, 1));
  if (!block.adapters.empty()) {
    if (!gate.defined() || gate.shape().rank() != 2 || gate.shape()[0] != x.shape()[0] ||
        gate.shape()[1] != static_cast<int>(block.adapters.size())) {
      throw DimensionError("block " + std::to_string(block.layer_index) + ": gate " +
                           (gate.defined() ? gate.shape().str() : std::string("<none>")) +
                           " does not match batch and K=" +
                           std::to_string(block.adapters.size()));
    }
    for (std::size_t k = 0; k < block.adapters.size(); ++k) {
      sum = tape.add(sum, tape.gate_scale(tape.conv1x1(u, block.adapters[k]), gate,
                                          static_cast<int>(k)));
    }
  }
  return tape.relu(sum);
}

}  // namespace

template <typename T>
ag::Tensor<T> dra_block_combine(ag::Tape<T>& tape, const DRABlock<T>& block,
                                const ag::Tensor<T>& x, const ag::Tensor<T>& gate) {
  check_block_input(block, x);
  return assemble(tape, block, x, identity_path(tape, block, x), gate);
}

template <typename T>
ag::Tensor<T> residual_adapter_block_forward(ag::Tape<T>& tape, const DRABlock<T>& block,
                                             const ag::Tensor<T>& x,
                                             const ag::Tensor<T>& adapter) {
  check_block_input(block, x);
  const ag::Tensor<T> u = identity_path(tape, block, x);
  ag::Tensor<T> sum = tape.add(u, tape.conv2d(x, block.conv, block.stride, 1));
  sum = tape.add(sum, tape.conv1x1(u, adapter));
  return tape.relu(sum);
}

template <typename T>
BlockOutput<T> dra_block_forward(ag::Tape<T>& tape, const DRABlock<T>& block,
                                 const ag::Tensor<T>& x, const ForwardContext& ctx) {
  check_block_input(block, x);
  const ag::Tensor<T> u = identity_path(tape, block, x);
  if (block.adapters.empty()) return {assemble(tape, block, x, u, ag::Tensor<T>()), {}};
  ag::Tensor<T> gate = gate_values(tape, block, u, ctx);
  return {assemble(tape, block, x, u, gate), gate};
}

// ---------------------------------------------------------------------------

template <typename T>
BasicNetwork<T> BasicNetwork<T>::initialize(const ArchitectureSpec& spec, std::uint64_t seed) {
  spec.validate();
  BasicNetwork<T> net;
  net.spec_ = spec;
  std::mt19937_64 rng(hash_seed({seed, 0x1a1cULL}));
  auto normal = [&](ag::Shape shape, double stddev, const std::string& name) {
    std::normal_distribution<double> d(0.0, stddev);
    std::vector<T> v(shape.numel());
    for (T& x : v) x = static_cast<T>(d(rng));
    return ag::Tensor<T>::parameter(std::move(shape), std::move(v), name);
  };

  const int c0 = spec.stage_channels.front();
  net.stem_ = normal(ag::Shape{c0, spec.in_channels, 3, 3},
                     std::sqrt(2.0 / (spec.in_channels * 9)), "stem");
  int in = c0;
  int layer = 0;
  for (std::size_t s = 0; s < spec.stage_channels.size(); ++s) {
    const int out = spec.stage_channels[s];
    for (int b = 0; b < spec.blocks_per_stage; ++b, ++layer) {
      DRABlock<T> block;
      const std::string prefix = "block" + std::to_string(layer);
      block.layer_index = layer;
      block.in_channels = in;
      block.out_channels = out;
      block.stride = (s > 0 && b == 0) ? 2 : 1;
      block.conv = normal(ag::Shape{out, in, 3, 3}, 0.5 * std::sqrt(2.0 / (in * 9)),
                          prefix + ".conv");
      if (block.stride != 1 || in != out) {
        block.projection = normal(ag::Shape{out, in, 1, 1}, std::sqrt(1.0 / in),
                                  prefix + ".projection");
      }
      block.gate.config = spec.gate;
      block.gate.channels = out;
      block.gate.experts = spec.experts;
      if (!spec.plain()) {
        if (spec.gate.mode == GateMode::kMoe || spec.gate.mode == GateMode::kGumbelST) {
          block.gate.weight = normal(ag::Shape{out, spec.experts}, 0.01, prefix + ".gate");
        }
        for (int k = 0; k < spec.experts; ++k) {
          block.adapters.push_back(normal(ag::Shape{out, out, 1, 1}, 0.1 / std::sqrt(out),
                                          prefix + ".adapter" + std::to_string(k)));
        }
      }
      net.blocks_.push_back(std::move(block));
      in = out;
    }
  }
  net.classifier_ = normal(ag::Shape{in, spec.num_classes}, std::sqrt(1.0 / in),
                           "classifier.weight");
  net.classifier_bias_ = ag::Tensor<T>::parameter(
      ag::Shape{spec.num_classes}, std::vector<T>(spec.num_classes, T(0)), "classifier.bias");
  return net;
}

template <typename T>
NetworkOutput<T> BasicNetwork<T>::forward(ag::Tape<T>& tape, const ag::Tensor<T>& images,
                                          const ForwardContext& ctx) const {
  const ag::Shape& s = images.shape();
  if (s.rank() != 4 || s[1] != spec_.in_channels || s[2] != spec_.image_size ||
      s[3] != spec_.image_size) {
    throw DimensionError("network expects [N," + std::to_string(spec_.in_channels) + "," +
                         std::to_string(spec_.image_size) + "," +
                         std::to_string(spec_.image_size) + "] images, got " + s.str());
  }
  const int n = s[0];
  const int k = spec_.experts;
  const int layers = static_cast<int>(blocks_.size());
  NetworkOutput<T> result;
  if (!spec_.plain()) result.paths.assign(static_cast<std::size_t>(n) * k * layers, T(0));

  ag::Tensor<T> x = tape.relu(tape.conv2d(images, stem_, spec_.stem_stride, 1));
  for (int l = 0; l < layers; ++l) {
    BlockOutput<T> b = dra_block_forward(tape, blocks_[l], x, ctx);
    x = b.output;
    if (b.gate.defined()) {
      auto g = b.gate.values();
      for (int i = 0; i < n; ++i)
        for (int e = 0; e < k; ++e)
          result.paths[(static_cast<std::size_t>(i) * k + e) * layers + l] = g[i * k + e];
    }
  }
  if (ctx.training && ctx.style != nullptr && ctx.style->config.eta > 0.0) {
    x = style_exchange_batch(tape, x, *ctx.style);
  }
  result.features = x;
  result.logits = tape.add_bias(tape.matmul(tape.global_avg_pool(x), classifier_),
                                classifier_bias_);
  return result;
}

template <typename T>
std::vector<ag::Tensor<T>> BasicNetwork<T>::parameters() const {
  std::vector<ag::Tensor<T>> p;
  p.push_back(stem_);
  for (const auto& b : blocks_) {
    p.push_back(b.conv);
    if (b.projection.defined()) p.push_back(b.projection);
    if (b.gate.weight.defined()) p.push_back(b.gate.weight);
    for (const auto& a : b.adapters) p.push_back(a);
  }
  p.push_back(classifier_);
  p.push_back(classifier_bias_);
  return p;
}

template <typename T>
std::vector<ag::Tensor<T>> BasicNetwork<T>::backbone_parameters() const {
  std::vector<ag::Tensor<T>> p;
  p.push_back(stem_);
  for (const auto& b : blocks_) {
    p.push_back(b.conv);
    if (b.projection.defined()) p.push_back(b.projection);
  }
  return p;
}

template <typename T>
void BasicNetwork<T>::set_backbone_frozen(bool frozen) {
  for (auto t : backbone_parameters()) t.set_requires_grad(!frozen);
}

template <typename T>
bool BasicNetwork<T>::backbone_frozen() const {
  for (const auto& t : backbone_parameters()) {
    if (t.requires_grad()) return false;
  }
  return true;
}

template <typename T>
void BasicNetwork<T>::copy_backbone_from(const BasicNetwork& other, bool include_classifier) {
  auto dst = backbone_parameters();
  auto src = other.backbone_parameters();
  if (dst.size() != src.size()) throw MismatchError("copy_backbone_from: layouts differ");
  auto copy = [](ag::Tensor<T> to, const ag::Tensor<T>& from) {
    if (!(to.shape() == from.shape())) {
      throw MismatchError("copy_backbone_from: " + to.name() + " has shape " + to.shape().str() +
                          ", source " + from.shape().str());
    }
    std::copy(from.values().begin(), from.values().end(), to.values().begin());
  };
  for (std::size_t i = 0; i < dst.size(); ++i) copy(dst[i], src[i]);
  if (include_classifier) {
    copy(classifier_, other.classifier_);
    copy(classifier_bias_, other.classifier_bias_);
  }
}

template <typename T>
template <typename U>
BasicNetwork<U> BasicNetwork<T>::cast() const {
  BasicNetwork<U> out;
  out.spec_ = spec_;
  auto conv = [](const ag::Tensor<T>& t) {
    return t.defined() ? t.template cast<U>() : ag::Tensor<U>();
  };
  out.stem_ = conv(stem_);
  for (const auto& b : blocks_) {
    DRABlock<U> nb;
    nb.layer_index = b.layer_index;
    nb.in_channels = b.in_channels;
    nb.out_channels = b.out_channels;
    nb.stride = b.stride;
    nb.conv = conv(b.conv);
    nb.projection = conv(b.projection);
    nb.gate.config = b.gate.config;
    nb.gate.experts = b.gate.experts;
    nb.gate.channels = b.gate.channels;
    nb.gate.weight = conv(b.gate.weight);
    for (const auto& a : b.adapters) nb.adapters.push_back(conv(a));
    out.blocks_.push_back(std::move(nb));
  }
  out.classifier_ = conv(classifier_);
  out.classifier_bias_ = conv(classifier_bias_);
  return out;
}

template class BasicNetwork<float>;
template class BasicNetwork<double>;
template BasicNetwork<double> BasicNetwork<float>::cast<double>() const;
template BasicNetwork<float> BasicNetwork<double>::cast<float>() const;

#define DRA_INSTANTIATE_LAYERS(T)                                                              \
  template ag::Tensor<T> gate_forward(ag::Tape<T>&, const GateUnit<T>&, const ag::Tensor<T>&,  \
                                      const ForwardContext&, int);                             \
  template ag::Tensor<T> gumbel_gate_forward(ag::Tape<T>&, const GateUnit<T>&,                 \
                                             const ag::Tensor<T>&, const ForwardContext&, int);  \
  template ag::Tensor<T> fixed_gate_forward<T>(int, int);                                      \
  template BlockOutput<T> dra_block_forward(ag::Tape<T>&, const DRABlock<T>&,                  \
                                            const ag::Tensor<T>&, const ForwardContext&);      \
  template ag::Tensor<T> dra_block_combine(ag::Tape<T>&, const DRABlock<T>&,                   \
                                           const ag::Tensor<T>&, const ag::Tensor<T>&);        \
  template ag::Tensor<T> residual_adapter_block_forward(ag::Tape<T>&, const DRABlock<T>&,      \
                                                        const ag::Tensor<T>&,                  \
                                                        const ag::Tensor<T>&);

DRA_INSTANTIATE_LAYERS(float)
DRA_INSTANTIATE_LAYERS(double)
#undef DRA_INSTANTIATE_LAYERS

std::int64_t count_parameters(const Network& net, bool learnable_only) {
  std::int64_t total = 0;
  for (const auto& t : net.parameters()) {
    if (!learnable_only || t.requires_grad()) total += static_cast<std::int64_t>(t.numel());
  }
  return total;
}

std::int64_t adapter_parameter_formula(const ArchitectureSpec& spec) {
  std::int64_t total = 0;
  const std::int64_t k = spec.experts;
  for (int c : spec.stage_channels) {
    total += spec.blocks_per_stage * (k * c + k * static_cast<std::int64_t>(c) * c);
  }
  return total;
}

}  // namespace dra
