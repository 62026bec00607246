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


#ifndef DRA_TRAINING_HPP
#define DRA_TRAINING_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dra/augmentation.hpp"
#include "dra/datagen.hpp"
#include "dra/layers.hpp"

namespace dra {

struct Schedule {
  double base_lr = 0.1;
  std::vector<int> decay_epochs = {40, 50};
  double decay_factor = 0.1;
  int epochs = 60;
  int batch_size = 64;

  // 120 epochs, decays at 80 and 100, batch 128.
  static Schedule paper();
  void validate() const;
  nlohmann::json to_json() const;
  static Schedule from_json(const nlohmann::json& j);
};

double lr_at(int epoch, const Schedule& schedule);

struct OptimizerState {
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr = 0.1;
  // One buffer per parameter; empty for parameters that were never updated.
  std::vector<std::vector<float>> velocity;
};

// v <- momentum * v + g + weight_decay * p;  p <- p - lr * v; then zero g.
// Tensors without requires_grad are skipped entirely.
void sgd_step(const std::vector<ag::Tensor<float>>& params, OptimizerState& state);

struct RunConfig {
  DatasetSpec dataset;
  std::string dataset_path;  // when set, loaded instead of generated
  ArchitectureSpec architecture;
  StyleExchangeConfig style;
  bool learn_theta = false;
  bool mixup = false;
  double mixup_alpha = 0.2;
  Schedule schedule;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "run";

  void validate() const;
  nlohmann::json to_json() const;
  // Rejects unknown keys; missing keys keep their defaults.
  static RunConfig from_json(const nlohmann::json& j);
};

struct MetricsReport {
  std::vector<double> pi;
  std::vector<int> domain_counts;
  std::vector<double> domain_accuracy;
  double weighted_accuracy = 0.0;
  double unweighted_accuracy = 0.0;
  double min_domain_accuracy = 0.0;
  double overall_accuracy = 0.0;
  std::vector<double> layer_purity;  // empty for the plain backbone

  nlohmann::json to_json() const;
};

double weighted_accuracy(std::span<const double> accuracy, std::span<const double> pi);

// Pure bookkeeping over predictions; `domains` are hidden tags.
MetricsReport score_predictions(std::span<const int> predictions, std::span<const int> labels,
                                std::span<const int> domains, std::span<const double> pi);

// Per-sample predictions and gate paths in evaluation mode.
struct Predictions {
  std::vector<int> labels;
  std::vector<float> paths;  // [N,K,L]
};
Predictions predict(const Network& net, const LatentDomainDataset& data,
                    std::span<const int> indices, const TagCapability* tags = nullptr);

// Test-split metrics of a trained network.
MetricsReport evaluate(const Network& net, const LatentDomainDataset& data);

// Mean of each scalar and per-domain entry across reports.
MetricsReport average_reports(std::span<const MetricsReport> reports);

struct EpochRecord {
  int phase = 0;
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  MetricsReport test;
};

struct PhaseResult {
  Network network;
  std::vector<EpochRecord> history;
  MetricsReport report;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

// Phase 1: the plain backbone, all weights learnable.
PhaseResult train_backbone(const RunConfig& config, const LatentDomainDataset& data,
                           std::uint64_t seed, const ProgressFn& progress = {});

// Phase 2: gates, corrections and classifier on top of `backbone`; with
// learn_theta the backbone is ignored and everything trains from scratch.
PhaseResult train_adapters(const RunConfig& config, const LatentDomainDataset& data,
                           std::uint64_t seed, const Network* backbone,
                           const ProgressFn& progress = {});

struct TrainResult {
  PhaseResult baseline;  // phase 1; empty history in joint mode
  PhaseResult dra;
};

TrainResult train(const RunConfig& config, const LatentDomainDataset& data, std::uint64_t seed,
                  const ProgressFn& progress = {});

// The six ablation rows: default, K=1, eta=0, learn theta, MixUp, Gumbel.
struct NamedConfig {
  std::string name;
  RunConfig config;
};
std::vector<NamedConfig> table5_configs(const RunConfig& base);

// Metrics CSV: one row per epoch.
std::string metrics_csv(std::span<const EpochRecord> history, int domains, int layers);

}  // namespace dra

#endif  // DRA_TRAINING_HPP
