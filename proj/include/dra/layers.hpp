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

#ifndef DRA_LAYERS_HPP
#define DRA_LAYERS_HPP

// Residual blocks with dynamic residual adapters. Each block computes
//
//   relu( u + f(x) + sum_k g_k(u) * h_k(u) )
//
// where u is the identity path (a strided 1x1 projection in transition
// blocks), f the frozen backbone convolution, h_k light-weight 1x1
// corrections and g a gate over the K corrections computed from pooled
// channel statistics of u.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dra/augmentation.hpp"
#include "dra/autograd.hpp"

namespace dra {

enum class GateMode {
  kMoe,       // softmax(W^T avgpool(u) + noise)
  kGumbelST,  // straight-through Gumbel-softmax, one-hot forward
  kFixed,     // one-hot at the sample's domain tag, K == D
  kUniform,   // 1/K everywhere
};

const char* gate_mode_name(GateMode mode);
GateMode parse_gate_mode(const std::string& name);

struct GateConfig {
  GateMode mode = GateMode::kMoe;
  double noise_std = 0.1;  // logit noise variance 1e-2
  double temperature = 1.0;
};

struct ArchitectureSpec {
  int in_channels = 3;
  int image_size = 32;
  int stem_stride = 2;
  std::vector<int> stage_channels = {8, 16, 32};
  int blocks_per_stage = 2;
  // Number of corrections per block; 0 builds the plain backbone.
  int experts = 2;
  GateConfig gate;
  int num_classes = 6;

  int layers() const { return static_cast<int>(stage_channels.size()) * blocks_per_stage; }
  bool plain() const { return experts == 0; }
  void validate() const;

  nlohmann::json to_json() const;
  static ArchitectureSpec from_json(const nlohmann::json& j);
};

// Everything a forward pass needs besides weights and inputs.
struct ForwardContext {
  bool training = false;
  // Key of the counter-based noise stream; combined with `step`, the layer
  // and each sample id so every draw is independent of batch composition.
  std::uint64_t noise_seed = 0;
  std::uint64_t step = 0;
  std::span<const std::int64_t> sample_ids;
  // Hidden domain tags; read only by fixed gates.
  std::span<const int> domain_tags;
  // Style exchange on the final feature map, training only.
  const StyleExchangePlan* style = nullptr;
};

template <typename T>
struct GateUnit {
  GateConfig config;
  int experts = 0;
  int channels = 0;
  ag::Tensor<T> weight;  // [C,K]; undefined for fixed and uniform gates
};

// Softmax(W^T avgpool(features) + eps); eps ~ N(0, noise_std^2) per sample
// and expert when training, zero otherwise. Returns [N,K].
template <typename T>
ag::Tensor<T> gate_forward(ag::Tape<T>& tape, const GateUnit<T>& gate,
                           const ag::Tensor<T>& features, const ForwardContext& ctx, int layer);

// One-hot argmax of (logits + Gumbel noise) / temperature in the forward
// pass; gradients flow through the soft sample. Noise only when training.
template <typename T>
ag::Tensor<T> gumbel_gate_forward(ag::Tape<T>& tape, const GateUnit<T>& gate,
                                  const ag::Tensor<T>& features, const ForwardContext& ctx,
                                  int layer);

// One-hot vector of length K at position `domain`.
template <typename T>
ag::Tensor<T> fixed_gate_forward(int domain, int experts);

template <typename T>
struct DRABlock {
  int layer_index = 0;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  ag::Tensor<T> conv;        // [out,in,3,3]
  ag::Tensor<T> projection;  // [out,in,1,1], transition blocks only
  GateUnit<T> gate;
  std::vector<ag::Tensor<T>> adapters;  // K x [out,out,1,1]

  bool transition() const { return projection.defined(); }
};

template <typename T>
struct BlockOutput {
  ag::Tensor<T> output;
  ag::Tensor<T> gate;  // [N,K]; undefined for plain blocks
};

// Dispatches on the gate mode and combines the corrections.
template <typename T>
BlockOutput<T> dra_block_forward(ag::Tape<T>& tape, const DRABlock<T>& block,
                                 const ag::Tensor<T>& x, const ForwardContext& ctx);

// Block output for externally supplied gate values [N,K].
template <typename T>
ag::Tensor<T> dra_block_combine(ag::Tape<T>& tape, const DRABlock<T>& block,
                                const ag::Tensor<T>& x, const ag::Tensor<T>& gate);

// relu(u + f(x) + h(u)) with a single correction and no gate.
template <typename T>
ag::Tensor<T> residual_adapter_block_forward(ag::Tape<T>& tape, const DRABlock<T>& block,
                                             const ag::Tensor<T>& x,
                                             const ag::Tensor<T>& adapter);

template <typename T>
struct NetworkOutput {
  ag::Tensor<T> logits;    // [N, |Y|]
  ag::Tensor<T> features;  // final feature map after any style exchange
  // Gate activations [N,K,L], row-major; empty for the plain backbone.
  std::vector<T> paths;
};

template <typename T>
class BasicNetwork {
 public:
  BasicNetwork() = default;

  // Fresh network with seeded initialization; backbone trainable.
  static BasicNetwork initialize(const ArchitectureSpec& spec, std::uint64_t seed);

  const ArchitectureSpec& spec() const { return spec_; }
  std::vector<DRABlock<T>>& blocks() { return blocks_; }
  const std::vector<DRABlock<T>>& blocks() const { return blocks_; }
  ag::Tensor<T>& stem() { return stem_; }
  ag::Tensor<T>& classifier() { return classifier_; }
  ag::Tensor<T>& classifier_bias() { return classifier_bias_; }

  NetworkOutput<T> forward(ag::Tape<T>& tape, const ag::Tensor<T>& images,
                           const ForwardContext& ctx) const;

  // Parameters in declaration order: stem, then per block conv, projection,
  // gate weight, adapters; finally classifier weight and bias.
  std::vector<ag::Tensor<T>> parameters() const;
  std::vector<ag::Tensor<T>> backbone_parameters() const;

  void set_backbone_frozen(bool frozen);
  bool backbone_frozen() const;

  // Copies backbone and classifier weights from another network with the
  // same stage layout (used to seed the adapter phase from a plain model).
  void copy_backbone_from(const BasicNetwork& other, bool include_classifier);

  template <typename U>
  BasicNetwork<U> cast() const;

 private:
  template <typename U>
  friend class BasicNetwork;

  ArchitectureSpec spec_;
  ag::Tensor<T> stem_;  // [C0, in, 3, 3]
  std::vector<DRABlock<T>> blocks_;
  ag::Tensor<T> classifier_;       // [C_last, |Y|]
  ag::Tensor<T> classifier_bias_;  // [|Y|]
};

using Network = BasicNetwork<float>;

// Learnable-only counts tensors with requires_grad; otherwise everything.
std::int64_t count_parameters(const Network& net, bool learnable_only);

// Gates and corrections per block: sum_l K*C_l + K*C_l^2.
std::int64_t adapter_parameter_formula(const ArchitectureSpec& spec);

// Checkpoint file: "DRA1", u64 little-endian length, JSON descriptor, then
// every parameter as little-endian float32 in declaration order.
struct Checkpoint {
  Network network;
  nlohmann::json metadata;
};

std::vector<std::uint8_t> serialize_checkpoint(const Network& net, const nlohmann::json& metadata);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Network& net, const nlohmann::json& metadata, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

extern template class BasicNetwork<float>;
extern template class BasicNetwork<double>;

}  // namespace dra

#endif  // DRA_LAYERS_HPP
