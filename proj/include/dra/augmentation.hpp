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

#ifndef DRA_AUGMENTATION_HPP
#define DRA_AUGMENTATION_HPP

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dra/autograd.hpp"

namespace dra {

enum class MomentScope {
  kGlobal,      // one mean/std per sample over C,H,W
  kPerChannel,  // one mean/std per sample and channel over H,W
};

const char* moment_scope_name(MomentScope scope);
MomentScope parse_moment_scope(const std::string& name);

struct StyleExchangeConfig {
  double eta = 0.025;
  MomentScope scope = MomentScope::kGlobal;
  double epsilon = 1e-5;

  void validate() const;
};

// Source statistics per sample, laid out [N, groups] where groups is 1 or C.
struct FeatureMoments {
  int groups = 0;
  std::vector<double> mean;
  std::vector<double> stddev;  // sqrt(var + epsilon)
};

// How a batch is restyled: sample i borrows the statistics of pairing[i].
struct StyleExchangePlan {
  StyleExchangeConfig config;
  std::vector<int> pairing;
  // When set, source statistics are read from here instead of the batch.
  // Gradient checks use this to hold the stop-gradient sources fixed.
  const FeatureMoments* frozen_sources = nullptr;
  // When set, the source statistics actually used are written here.
  FeatureMoments* captured_sources = nullptr;
};

// Restyles a_x with the moments of a_z, both [C,H,W]:
//   eta * (sigma_z * (a_x - mu_x) / sigma_x + mu_z) + (1 - eta) * a_x
// with sigma = sqrt(var + epsilon). eta == 0 returns a_x unchanged.
ag::Tensor<float> style_exchange(const ag::Tensor<float>& a_x, const ag::Tensor<float>& a_z,
                                 const StyleExchangeConfig& config);

// Batched, differentiable form applied to feature maps [N,C,H,W] inside a
// training graph. Gradients flow into the restyled sample only; the source
// statistics are treated as constants.
template <typename T>
ag::Tensor<T> style_exchange_batch(ag::Tape<T>& tape, const ag::Tensor<T>& features,
                                   const StyleExchangePlan& plan);

// Random pairing of a mini-batch (a sample may draw itself). Batches with
// fewer than two samples get the identity.
std::vector<int> pair_batch(int batch_size, std::mt19937_64& rng);

struct MixupResult {
  ag::Tensor<float> input;
  std::vector<float> soft_label;
};

// lambda * x + (1 - lambda) * x2 with the matching label mix over `classes`.
MixupResult mixup(const ag::Tensor<float>& x, const ag::Tensor<float>& x2, int y, int y2,
                  double lambda, int classes);

// Beta(alpha, alpha) draw used for MixUp mixing weights.
double sample_mixup_lambda(std::mt19937_64& rng, double alpha = 0.2);

// Applies MixUp across a batch [N,...] using `pairing` and per-sample
// lambdas; returns mixed inputs and soft targets [N, classes].
struct MixupBatch {
  ag::Tensor<float> inputs;
  ag::Tensor<float> targets;
};
MixupBatch mixup_batch(const ag::Tensor<float>& inputs, std::span<const int> labels,
                       std::span<const int> pairing, std::span<const double> lambdas,
                       int classes);

}  // namespace dra

#endif  // DRA_AUGMENTATION_HPP
