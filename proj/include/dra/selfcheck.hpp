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


#ifndef DRA_SELFCHECK_HPP
#define DRA_SELFCHECK_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace dra {

struct CheckItem {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct CheckGroup {
  std::string name;
  std::vector<CheckItem> items;
  double seconds = 0.0;

  bool passed() const;
  nlohmann::json to_json() const;
};

// Central differences in 64-bit (step 1e-3, tolerance 1e-3) for every op
// and for a 2-block K=2 network with style exchange in the graph.
CheckGroup check_gradients();

// Randomized gate evaluations: normalization, one-hot Gumbel forward,
// fixed gates at the domain tag, exact 1/K for zero weights.
CheckGroup check_gate_contracts(int evaluations = 10000, std::uint64_t seed = 1);

// K=1 against the single-adapter block, identical adapters, eta in {0, 1}.
CheckGroup check_degeneracy();

// Learnable parameter counts against the closed-form adapter count.
CheckGroup check_parameter_accounting();

// PCA against a Jacobi eigensolver, uniform-gate purity, fixed-gate clusters.
CheckGroup check_analysis(int matrices = 50);

std::vector<CheckGroup> run_self_check();

}  // namespace dra

#endif  // DRA_SELFCHECK_HPP
