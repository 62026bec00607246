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

#include "dra/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dra/error.hpp"

namespace dra::ag {

double GradientCheckReport::max_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_relative_error);
  return worst;
}

namespace {

struct Evaluation {
  double value;
  std::uint64_t kinks;
};

class Harness {
 public:
  Harness(const CheckedFunction& fn, std::vector<Tensor<double>>& inputs)
      : fn_(fn), inputs_(inputs) {}

  // Returns the scalar objective and records the tape for later backward.
  Tensor<double> objective(Tape<double>& tape) {
    Tensor<double> out = fn_(tape, inputs_);
    if (!out.defined()) throw ContractError("gradient_check: function returned no tensor");
    for (double v : out.values()) {
      if (!std::isfinite(v)) throw NumericError("gradient_check: non-finite function output");
    }
    if (out.numel() == 1) return out;
    if (projection_.size() != out.numel()) {
      std::mt19937_64 rng(0x5eedULL);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      projection_.resize(out.numel());
      for (double& p : projection_) p = u(rng);
    }
    Tensor<double> weights(out.shape(), projection_);
    return tape.sum(tape.mul(out, weights));
  }

  Evaluation evaluate() {
    Tape<double> tape;
    tape.set_track_kinks(true);
    const double v = objective(tape).item();
    return {v, tape.kink_signature()};
  }

 private:
  const CheckedFunction& fn_;
  std::vector<Tensor<double>>& inputs_;
  std::vector<double> projection_;
};

}  // namespace

GradientCheckReport gradient_check(const CheckedFunction& fn, std::vector<Tensor<double>> inputs,
                                   double step, double tolerance) {
  if (!(step > 0.0)) throw ContractError("gradient_check: step must be positive");
  for (const auto& t : inputs) {
    for (double v : t.values()) {
      if (!std::isfinite(v)) {
        throw NumericError("gradient_check: non-finite value in input '" + t.name() + "'");
      }
    }
  }
  Harness harness(fn, inputs);

  for (auto& t : inputs) {
    if (t.requires_grad()) t.zero_grad();
  }
  std::uint64_t base_kinks = 0;
  {
    Tape<double> tape;
    tape.set_track_kinks(true);
    Tensor<double> loss = harness.objective(tape);
    base_kinks = tape.kink_signature();
    tape.backward(loss);
  }

  GradientCheckReport report;
  report.tolerance = tolerance;
  report.passed = true;
  for (std::size_t idx = 0; idx < inputs.size(); ++idx) {
    Tensor<double>& t = inputs[idx];
    if (!t.requires_grad()) continue;
    GradientCheckEntry entry;
    entry.name = t.name().empty() ? "input" + std::to_string(idx) : t.name();
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (double g : analytic) {
      if (!std::isfinite(g)) {
        throw NumericError("gradient_check: non-finite gradient for '" + entry.name + "'");
      }
    }
    double scale = 0.0;
    double worst_abs = 0.0;
    auto values = t.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const Evaluation up = harness.evaluate();
      values[i] = saved - step;
      const Evaluation down = harness.evaluate();
      values[i] = saved;
      if (up.kinks != base_kinks || down.kinks != base_kinks) {
        ++entry.skipped_kinks;
        continue;
      }
      const double numeric = (up.value - down.value) / (2.0 * step);
      scale = std::max({scale, std::abs(numeric), std::abs(analytic[i])});
      worst_abs = std::max(worst_abs, std::abs(numeric - analytic[i]));
      ++entry.checked;
    }
    entry.max_relative_error = worst_abs / std::max(scale, 1e-10);
    if (entry.max_relative_error >= tolerance || (entry.checked == 0 && t.numel() > 0)) {
      report.passed = false;
    }
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace dra::ag
