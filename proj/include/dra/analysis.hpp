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


#ifndef DRA_ANALYSIS_HPP
#define DRA_ANALYSIS_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dra/datagen.hpp"
#include "dra/layers.hpp"

namespace dra {

// Gate activations of one sample: xi(k, l) for expert k at layer l.
struct PathRecord {
  std::int64_t sample_id = 0;
  int label = 0;
  int domain = 0;
  int experts = 0;
  int layers = 0;
  std::vector<double> xi;  // [K,L] row-major

  double at(int k, int l) const { return xi[static_cast<std::size_t>(k) * layers + l]; }
  // Concatenated rows (length K*L), or a single expert's row when given.
  std::vector<double> flatten(std::optional<int> expert = std::nullopt) const;
};

// Worker count for analysis loops: DRA_THREADS when set to a positive
// integer, otherwise the hardware concurrency.
int analysis_threads();

// Evaluation-mode paths for the listed samples. Reading domain tags needs
// the evaluation capability.
std::vector<PathRecord> extract_paths(const Network& net, const LatentDomainDataset& data,
                                      std::span<const int> indices, const TagCapability& tags);

// Equal number of samples per domain (the smallest domain's count unless
// `per_domain` is lower), chosen deterministically from `indices`.
std::vector<int> balanced_indices(const LatentDomainDataset& data, std::span<const int> indices,
                                  int per_domain, std::uint64_t seed, const TagCapability& tags);

// Mean over rows of max_k g_k. Rows must sum to 1 within 1e-4.
double purity(std::span<const double> rows, int experts);
double purity(const ag::Tensor<float>& gate_acts);

struct PCAResult {
  int dims = 0;
  std::vector<double> mean;
  std::vector<std::vector<double>> components;  // orthonormal, descending eigenvalue
  std::vector<double> eigenvalues;
  std::vector<double> explained_ratio;
  std::vector<std::vector<double>> projections;  // [N][n_components]
  std::vector<bool> degenerate;                  // zero-variance components
};

// Covariance uses the 1/(N-1) normalization. Components by power iteration
// with deflation; the largest-magnitude entry of each component is positive.
PCAResult pca(const std::vector<std::vector<double>>& vectors, int n_components,
              double tolerance = 1e-8, int max_iterations = 1000);

enum class GroupBy { kDomain, kClass };
GroupBy parse_group_by(const std::string& name);
const char* group_by_name(GroupBy g);

struct GateProfile {
  GroupBy group_by = GroupBy::kDomain;
  int groups = 0;
  int layers = 0;
  int experts = 0;
  std::vector<int> counts;     // per group
  std::vector<double> mean;    // [G,L,K]
  std::vector<bool> uniform;   // [G,L]: max_k mean - 1/K < 0.05
  std::vector<bool> layer_uniform;  // [L]: uniform for every group

  double at(int g, int l, int k) const {
    return mean[(static_cast<std::size_t>(g) * layers + l) * experts + k];
  }
};

GateProfile per_layer_gate_profile(std::span<const PathRecord> records, GroupBy group_by);

struct Neighbor {
  std::int64_t sample_id;
  double distance;
};

// Euclidean distance between flattened paths, ascending, ties by id; the
// query itself is excluded.
std::vector<Neighbor> path_distance_neighbors(std::span<const PathRecord> records,
                                              std::int64_t query_id, int k_neighbors);

// sample_id,class,domain,xi_1_1,...,xi_K_L
std::string paths_csv(std::span<const PathRecord> records);
// sample_id,class,domain,pc1,...
std::string pca_csv(std::span<const PathRecord> records, const PCAResult& result);
// 600x600 scatter of the first two components, coloured by domain.
std::string pca_svg(std::span<const PathRecord> records, const PCAResult& result);

}  // namespace dra

#endif  // DRA_ANALYSIS_HPP
