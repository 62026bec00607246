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

#include "dra/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dra/error.hpp"

namespace dra {

const char* moment_scope_name(MomentScope scope) {
  return scope == MomentScope::kGlobal ? "global" : "per_channel";
}

MomentScope parse_moment_scope(const std::string& name) {
  if (name == "global") return MomentScope::kGlobal;
  if (name == "per_channel") return MomentScope::kPerChannel;
  throw ConfigError("unknown moment scope '" + name + "' (expected global or per_channel)");
}

void StyleExchangeConfig::validate() const {
  if (!(eta >= 0.0 && eta <= 1.0)) {
    throw ConfigError("style exchange eta must lie in [0,1], got " + std::to_string(eta));
  }
  if (!(epsilon > 0.0)) throw ConfigError("style exchange epsilon must be positive");
}

namespace {

struct Layout {
  int batch, channels, area;
  int groups;      // statistics per sample
  int group_size;  // elements per statistic
};

Layout layout_of(const ag::Shape& s, MomentScope scope) {
  if (s.rank() != 4) {
    throw DimensionError("style exchange expects [N,C,H,W] features, got " + s.str());
  }
  Layout l{s[0], s[1], s[2] * s[3], 1, 0};
  if (scope == MomentScope::kPerChannel) {
    l.groups = l.channels;
    l.group_size = l.area;
  } else {
    l.groups = 1;
    l.group_size = l.channels * l.area;
  }
  return l;
}

template <typename T>
FeatureMoments compute_moments(std::span<const T> values, const Layout& l, double epsilon) {
  FeatureMoments m;
  m.groups = l.groups;
  const std::size_t count = static_cast<std::size_t>(l.batch) * l.groups;
  m.mean.resize(count);
  m.stddev.resize(count);
  for (std::size_t g = 0; g < count; ++g) {
    const T* p = values.data() + g * static_cast<std::size_t>(l.group_size);
    double sum = 0.0;
    for (int i = 0; i < l.group_size; ++i) sum += p[i];
    const double mu = sum / l.group_size;
    double sq = 0.0;
    for (int i = 0; i < l.group_size; ++i) {
      const double d = p[i] - mu;
      sq += d * d;
    }
    m.mean[g] = mu;
    m.stddev[g] = std::sqrt(sq / l.group_size + epsilon);
  }
  return m;
}

void check_finite(std::span<const float> v, const char* what) {
  for (float x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("style exchange: non-finite ") + what);
  }
}

}  // namespace

template <typename T>
ag::Tensor<T> style_exchange_batch(ag::Tape<T>& tape, const ag::Tensor<T>& features,
                                   const StyleExchangePlan& plan) {
  const StyleExchangeConfig& cfg = plan.config;
  cfg.validate();
  const Layout l = layout_of(features.shape(), cfg.scope);
  if (static_cast<int>(plan.pairing.size()) != l.batch) {
    throw DimensionError("style exchange: pairing has " + std::to_string(plan.pairing.size()) +
                         " entries for batch " + features.shape().str());
  }
  for (int p : plan.pairing) {
    if (p < 0 || p >= l.batch) throw ContractError("style exchange: pairing index out of range");
  }
  if (cfg.eta == 0.0) return features;

  auto x = features.values();
  const FeatureMoments own = compute_moments<T>(x, l, cfg.epsilon);
  FeatureMoments source;
  if (plan.frozen_sources != nullptr) {
    source = *plan.frozen_sources;
    if (source.groups != l.groups ||
        source.mean.size() != static_cast<std::size_t>(l.batch) * l.groups) {
      throw DimensionError("style exchange: frozen source statistics do not match the batch");
    }
  } else {
    source.groups = l.groups;
    source.mean.resize(own.mean.size());
    source.stddev.resize(own.stddev.size());
    for (int i = 0; i < l.batch; ++i) {
      for (int g = 0; g < l.groups; ++g) {
        source.mean[i * l.groups + g] = own.mean[plan.pairing[i] * l.groups + g];
        source.stddev[i * l.groups + g] = own.stddev[plan.pairing[i] * l.groups + g];
      }
    }
  }
  if (plan.captured_sources != nullptr) *plan.captured_sources = source;

  const T eta = static_cast<T>(cfg.eta);
  const T keep = T(1) - eta;
  ag::Tensor<T> out(features.shape());
  auto y = out.values();
  const std::size_t groups_total = own.mean.size();
  for (std::size_t g = 0; g < groups_total; ++g) {
    const T mu_x = static_cast<T>(own.mean[g]);
    const T ratio = static_cast<T>(source.stddev[g] / own.stddev[g]);
    const T mu_z = static_cast<T>(source.mean[g]);
    const std::size_t base = g * static_cast<std::size_t>(l.group_size);
    for (int i = 0; i < l.group_size; ++i) {
      const T v = x[base + i];
      y[base + i] = eta * (ratio * (v - mu_x) + mu_z) + keep * v;
    }
  }
  if (!features.requires_grad()) return out;

  ag::Tensor<T> in = features;
  return tape.record(out, {features}, [in, out, l, own, source, eta, keep]() mutable {
    auto x = in.values();
    auto dy = out.grad();
    auto dx = in.grad();
    for (std::size_t g = 0; g < own.mean.size(); ++g) {
      const std::size_t base = g * static_cast<std::size_t>(l.group_size);
      const double inv_sx = 1.0 / own.stddev[g];
      const double gain = static_cast<double>(eta) * source.stddev[g];
      double mean_d = 0.0;
      double mean_dx = 0.0;
      for (int i = 0; i < l.group_size; ++i) {
        const double xhat = (x[base + i] - own.mean[g]) * inv_sx;
        const double d = gain * dy[base + i];
        mean_d += d;
        mean_dx += d * xhat;
      }
      mean_d /= l.group_size;
      mean_dx /= l.group_size;
      for (int i = 0; i < l.group_size; ++i) {
        const double xhat = (x[base + i] - own.mean[g]) * inv_sx;
        const double d = gain * dy[base + i];
        dx[base + i] += static_cast<T>(inv_sx * (d - mean_d - xhat * mean_dx)) + keep * dy[base + i];
      }
    }
  });
}

template ag::Tensor<float> style_exchange_batch(ag::Tape<float>&, const ag::Tensor<float>&,
                                                const StyleExchangePlan&);
template ag::Tensor<double> style_exchange_batch(ag::Tape<double>&, const ag::Tensor<double>&,
                                                 const StyleExchangePlan&);

ag::Tensor<float> style_exchange(const ag::Tensor<float>& a_x, const ag::Tensor<float>& a_z,
                                 const StyleExchangeConfig& config) {
  config.validate();
  if (!(a_x.shape() == a_z.shape()) || a_x.shape().rank() != 3) {
    throw DimensionError("style exchange: expected equal [C,H,W] shapes, got " +
                         a_x.shape().str() + " and " + a_z.shape().str());
  }
  check_finite(a_x.values(), "a_x");
  check_finite(a_z.values(), "a_z");
  const ag::Shape& s = a_x.shape();
  if (config.eta == 0.0) return a_x.clone();

  // Stack [x, z] as a batch of two and pair x with z.
  std::vector<float> both(a_x.values().begin(), a_x.values().end());
  both.insert(both.end(), a_z.values().begin(), a_z.values().end());
  ag::Tensor<float> batch(ag::Shape{2, s[0], s[1], s[2]}, std::move(both));
  StyleExchangePlan plan{config, {1, 1}, nullptr, nullptr};
  ag::Tape<float> tape;
  ag::Tensor<float> restyled = style_exchange_batch(tape, batch, plan);
  auto v = restyled.values();
  return ag::Tensor<float>(s, std::vector<float>(v.begin(), v.begin() + s.numel()));
}

std::vector<int> pair_batch(int batch_size, std::mt19937_64& rng) {
  std::vector<int> pairing(static_cast<std::size_t>(std::max(batch_size, 0)));
  std::iota(pairing.begin(), pairing.end(), 0);
  if (batch_size < 2) return pairing;
  std::shuffle(pairing.begin(), pairing.end(), rng);
  return pairing;
}

MixupResult mixup(const ag::Tensor<float>& x, const ag::Tensor<float>& x2, int y, int y2,
                  double lambda, int classes) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ContractError("mixup: lambda must lie in [0,1], got " + std::to_string(lambda));
  }
  if (!(x.shape() == x2.shape())) {
    throw DimensionError("mixup: shape mismatch " + x.shape().str() + " vs " + x2.shape().str());
  }
  if (y < 0 || y >= classes || y2 < 0 || y2 >= classes) {
    throw ContractError("mixup: label outside [0, " + std::to_string(classes) + ")");
  }
  const float a = static_cast<float>(lambda);
  const float b = static_cast<float>(1.0 - lambda);
  std::vector<float> mixed(x.numel());
  auto xv = x.values();
  auto zv = x2.values();
  for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] = a * xv[i] + b * zv[i];
  std::vector<float> label(static_cast<std::size_t>(classes), 0.0f);
  label[static_cast<std::size_t>(y)] += a;
  label[static_cast<std::size_t>(y2)] += b;
  return {ag::Tensor<float>(x.shape(), std::move(mixed)), std::move(label)};
}

double sample_mixup_lambda(std::mt19937_64& rng, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(rng);
  const double b = gamma(rng);
  if (a + b <= 0.0) return 0.5;
  return a / (a + b);
}

MixupBatch mixup_batch(const ag::Tensor<float>& inputs, std::span<const int> labels,
                       std::span<const int> pairing, std::span<const double> lambdas,
                       int classes) {
  const int n = inputs.shape()[0];
  if (static_cast<int>(labels.size()) != n || static_cast<int>(pairing.size()) != n ||
      static_cast<int>(lambdas.size()) != n) {
    throw DimensionError("mixup: batch of " + std::to_string(n) +
                         " needs as many labels, pairs and lambdas");
  }
  const std::size_t per = inputs.numel() / static_cast<std::size_t>(n);
  std::vector<float> mixed(inputs.numel());
  std::vector<float> targets(static_cast<std::size_t>(n) * classes, 0.0f);
  auto src = inputs.values();
  for (int i = 0; i < n; ++i) {
    const int j = pairing[i];
    const double lambda = lambdas[i];
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("mixup: lambda outside [0,1]");
    const float a = static_cast<float>(lambda);
    const float b = static_cast<float>(1.0 - lambda);
    for (std::size_t e = 0; e < per; ++e) {
      mixed[i * per + e] = a * src[i * per + e] + b * src[j * per + e];
    }
    targets[i * classes + labels[i]] += a;
    targets[i * classes + labels[j]] += b;
  }
  return {ag::Tensor<float>(inputs.shape(), std::move(mixed)),
          ag::Tensor<float>(ag::Shape{n, classes}, std::move(targets))};
}

}  // namespace dra
