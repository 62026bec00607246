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

#ifndef DRA_GRADCHECK_HPP
#define DRA_GRADCHECK_HPP

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dra/autograd.hpp"

namespace dra::ag {

struct GradientCheckEntry {
  std::string name;
  // max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|)
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Entries whose +/- step flipped a relu sign; their difference quotient
  // straddles a kink and says nothing about the derivative.
  std::size_t skipped_kinks = 0;
};

struct GradientCheckReport {
  std::vector<GradientCheckEntry> entries;
  double tolerance = 0.0;
  bool passed = false;

  double max_error() const;
};

// The function under test receives the (possibly perturbed) inputs and
// returns a tensor. Non-scalar outputs are reduced against a fixed random
// projection so the whole Jacobian participates.
using CheckedFunction =
    std::function<Tensor<double>(Tape<double>&, const std::vector<Tensor<double>>&)>;

// Compares reverse-mode gradients with central differences, both in 64-bit.
// Only inputs with requires_grad set are checked.
GradientCheckReport gradient_check(const CheckedFunction& fn, std::vector<Tensor<double>> inputs,
                                   double step, double tolerance);

}  // namespace dra::ag

#endif  // DRA_GRADCHECK_HPP
