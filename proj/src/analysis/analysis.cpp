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


#include "dra/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <numeric>
#include <thread>

#include "dra/error.hpp"
#include "dra/rng.hpp"
#include "dra/training.hpp"

namespace dra {

std::vector<double> PathRecord::flatten(std::optional<int> expert) const {
  if (!expert) return xi;
  if (*expert < 0 || *expert >= experts) {
    throw ContractError("path: expert " + std::to_string(*expert) + " outside [0, " +
                        std::to_string(experts) + ")");
  }
  const auto first = xi.begin() + static_cast<std::ptrdiff_t>(*expert) * layers;
  return std::vector<double>(first, first + layers);
}

int analysis_threads() {
  if (const char* env = std::getenv("DRA_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(std::min(v, 256L));
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<PathRecord> extract_paths(const Network& net, const LatentDomainDataset& data,
                                      std::span<const int> indices, const TagCapability& tags) {
  if (net.spec().plain()) throw MismatchError("extract_paths: the network has no gates");
  const int n = static_cast<int>(indices.size());
  const int k = net.spec().experts;
  const int layers = net.spec().layers();
  const auto domain = data.domain_tags(tags);

  const int workers = std::max(1, std::min(analysis_threads(), (n + 127) / 128));
  std::vector<Predictions> parts(static_cast<std::size_t>(workers));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  const int chunk = (n + workers - 1) / std::max(workers, 1);
  auto run = [&](int w) {
    try {
      const int lo = std::min(n, w * chunk);
      const int hi = std::min(n, lo + chunk);
      parts[w] = predict(net, data, indices.subspan(lo, hi - lo), &tags);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<PathRecord> out;
  out.reserve(indices.size());
  for (int w = 0; w < workers; ++w) {
    const int lo = std::min(n, w * chunk);
    const int hi = std::min(n, lo + chunk);
    for (int i = lo; i < hi; ++i) {
      const int id = indices[static_cast<std::size_t>(i)];
      PathRecord r;
      r.sample_id = id;
      r.label = data.labels()[static_cast<std::size_t>(id)];
      r.domain = domain[static_cast<std::size_t>(id)];
      r.experts = k;
      r.layers = layers;
      const auto first = parts[w].paths.begin() + static_cast<std::ptrdiff_t>(i - lo) * k * layers;
      r.xi.assign(first, first + k * layers);
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<int> balanced_indices(const LatentDomainDataset& data, std::span<const int> indices,
                                  int per_domain, std::uint64_t seed, const TagCapability& tags) {
  const auto domain = data.domain_tags(tags);
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(data.spec().domains));
  for (int i : indices) groups[static_cast<std::size_t>(domain[static_cast<std::size_t>(i)])].push_back(i);
  std::size_t take = std::numeric_limits<std::size_t>::max();
  for (const auto& g : groups)
    if (!g.empty()) take = std::min(take, g.size());
  if (per_domain > 0) take = std::min(take, static_cast<std::size_t>(per_domain));
  const CounterRng rng(hash_seed({seed, 0xba1aULL}));
  std::vector<int> out;
  for (std::size_t d = 0; d < groups.size(); ++d) {
    std::vector<int>& g = groups[d];
    const CounterRng r = rng.fork(d);
    for (std::size_t i = g.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(r.uniform(i) * static_cast<double>(i));
      std::swap(g[i - 1], g[std::min(j, i - 1)]);
    }
    out.insert(out.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(std::min(take, g.size())));
  }
  std::sort(out.begin(), out.end());
  return out;
}

double purity(std::span<const double> rows, int experts) {
  if (experts < 1 || rows.size() % static_cast<std::size_t>(experts) != 0) {
    throw DimensionError("purity: " + std::to_string(rows.size()) +
                         " values do not form rows of " + std::to_string(experts));
  }
  const std::size_t n = rows.size() / static_cast<std::size_t>(experts);
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = rows.subspan(i * experts, static_cast<std::size_t>(experts));
    const double s = std::accumulate(row.begin(), row.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-4) {
      throw ContractError("purity: row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
    total += *std::max_element(row.begin(), row.end());
  }
  return total / static_cast<double>(n);
}

double purity(const ag::Tensor<float>& gate_acts) {
  if (gate_acts.shape().rank() != 2) {
    throw DimensionError("purity: expected [N,K] gate activations, got " + gate_acts.shape().str());
  }
  std::vector<double> rows(gate_acts.values().begin(), gate_acts.values().end());
  return purity(rows, gate_acts.shape()[1]);
}

// ---------------------------------------------------------------------------

PCAResult pca(const std::vector<std::vector<double>>& vectors, int n_components, double tolerance,
              int max_iterations) {
  const int n = static_cast<int>(vectors.size());
  if (n < 2) throw ContractError("pca: need at least two vectors");
  const int m = static_cast<int>(vectors.front().size());
  for (const auto& v : vectors) {
    if (static_cast<int>(v.size()) != m) throw DimensionError("pca: vectors differ in length");
  }
  if (n_components < 1 || n_components > std::min(n, m)) {
    throw ContractError("pca: n_components must lie in [1, min(N, M)] = [1, " +
                        std::to_string(std::min(n, m)) + "]");
  }

  PCAResult r;
  r.dims = m;
  r.mean.assign(static_cast<std::size_t>(m), 0.0);
  for (const auto& v : vectors)
    for (int j = 0; j < m; ++j) r.mean[j] += v[j];
  for (double& x : r.mean) x /= n;

  std::vector<double> cov(static_cast<std::size_t>(m) * m, 0.0);
  for (const auto& v : vectors) {
    for (int a = 0; a < m; ++a) {
      const double da = v[a] - r.mean[a];
      for (int b = 0; b < m; ++b) cov[a * m + b] += da * (v[b] - r.mean[b]);
    }
  }
  for (double& c : cov) c /= (n - 1);
  double trace = 0.0;
  for (int a = 0; a < m; ++a) trace += cov[a * m + a];

  auto norm = [](const std::vector<double>& v) {
    return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  };
  auto matvec = [&](const std::vector<double>& v) {
    std::vector<double> out(static_cast<std::size_t>(m), 0.0);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) out[a] += cov[a * m + b] * v[b];
    return out;
  };
  auto orthogonalize = [&](std::vector<double>& v) {
    for (const auto& c : r.components) {
      const double d = std::inner_product(v.begin(), v.end(), c.begin(), 0.0);
      for (int j = 0; j < m; ++j) v[j] -= d * c[j];
    }
  };
  double scale = 0.0;
  for (double c : cov) scale = std::max(scale, std::abs(c));

  for (int comp = 0; comp < n_components; ++comp) {
    // Start from the column of the deflated matrix with the largest norm.
    std::vector<double> v(static_cast<std::size_t>(m), 0.0);
    double best = -1.0;
    for (int b = 0; b < m; ++b) {
      double s = 0.0;
      for (int a = 0; a < m; ++a) s += cov[a * m + b] * cov[a * m + b];
      if (s > best + 1e-300) {
        best = s;
        for (int a = 0; a < m; ++a) v[a] = cov[a * m + b];
      }
    }
    orthogonalize(v);
    bool degenerate = norm(v) <= 1e-12 * std::max(scale, 1e-300) || scale == 0.0;
    if (!degenerate) {
      double len = norm(v);
      for (double& x : v) x /= len;
      for (int it = 0; it < max_iterations; ++it) {
        std::vector<double> w = matvec(v);
        orthogonalize(w);
        len = norm(w);
        if (len <= 1e-300) {
          degenerate = true;
          break;
        }
        for (double& x : w) x /= len;
        double diff_plus = 0.0, diff_minus = 0.0;
        for (int j = 0; j < m; ++j) {
          diff_plus = std::max(diff_plus, std::abs(w[j] - v[j]));
          diff_minus = std::max(diff_minus, std::abs(w[j] + v[j]));
        }
        v = std::move(w);
        if (std::min(diff_plus, diff_minus) < tolerance) break;
      }
    }
    if (degenerate) {
      // Deterministic stand-in: the first basis vector not yet spanned.
      for (int e = 0; e < m; ++e) {
        std::vector<double> basis(static_cast<std::size_t>(m), 0.0);
        basis[e] = 1.0;
        orthogonalize(basis);
        const double len = norm(basis);
        if (len > 1e-6) {
          for (double& x : basis) x /= len;
          v = std::move(basis);
          break;
        }
      }
    }
    const auto peak = std::max_element(v.begin(), v.end(), [](double a, double b) {
      return std::abs(a) < std::abs(b);
    });
    if (*peak < 0.0)
      for (double& x : v) x = -x;
    const std::vector<double> cv = matvec(v);
    double lambda = std::inner_product(v.begin(), v.end(), cv.begin(), 0.0);
    if (degenerate || std::abs(lambda) <= 1e-12 * std::max(trace, 1e-300)) {
      lambda = degenerate ? 0.0 : lambda;
    }
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) cov[a * m + b] -= lambda * v[a] * v[b];
    r.components.push_back(v);
    r.eigenvalues.push_back(lambda);
    r.explained_ratio.push_back(trace > 0.0 ? std::clamp(lambda / trace, 0.0, 1.0) : 0.0);
    r.degenerate.push_back(degenerate);
  }

  r.projections.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    r.projections[i].resize(static_cast<std::size_t>(n_components));
    for (int c = 0; c < n_components; ++c) {
      double s = 0.0;
      for (int j = 0; j < m; ++j) s += (vectors[i][j] - r.mean[j]) * r.components[c][j];
      r.projections[i][c] = s;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

GroupBy parse_group_by(const std::string& name) {
  if (name == "domain") return GroupBy::kDomain;
  if (name == "class") return GroupBy::kClass;
  throw ConfigError("unknown group key '" + name + "' (expected domain or class)");
}

const char* group_by_name(GroupBy g) { return g == GroupBy::kDomain ? "domain" : "class"; }

GateProfile per_layer_gate_profile(std::span<const PathRecord> records, GroupBy group_by) {
  if (records.empty()) throw ContractError("gate profile: no records");
  GateProfile p;
  p.group_by = group_by;
  p.experts = records.front().experts;
  p.layers = records.front().layers;
  for (const auto& r : records) {
    if (r.experts != p.experts || r.layers != p.layers) {
      throw DimensionError("gate profile: records have different K x L shapes");
    }
    p.groups = std::max(p.groups, (group_by == GroupBy::kDomain ? r.domain : r.label) + 1);
  }
  const std::size_t cells = static_cast<std::size_t>(p.groups) * p.layers * p.experts;
  p.mean.assign(cells, 0.0);
  p.counts.assign(static_cast<std::size_t>(p.groups), 0);
  for (const auto& r : records) {
    const int g = group_by == GroupBy::kDomain ? r.domain : r.label;
    ++p.counts[g];
    for (int l = 0; l < p.layers; ++l)
      for (int k = 0; k < p.experts; ++k)
        p.mean[(static_cast<std::size_t>(g) * p.layers + l) * p.experts + k] += r.at(k, l);
  }
  for (int g = 0; g < p.groups; ++g)
    for (int l = 0; l < p.layers; ++l)
      for (int k = 0; k < p.experts; ++k)
        if (p.counts[g] > 0)
          p.mean[(static_cast<std::size_t>(g) * p.layers + l) * p.experts + k] /= p.counts[g];

  const double uniform_share = 1.0 / p.experts;
  p.uniform.assign(static_cast<std::size_t>(p.groups) * p.layers, false);
  p.layer_uniform.assign(static_cast<std::size_t>(p.layers), true);
  for (int g = 0; g < p.groups; ++g) {
    for (int l = 0; l < p.layers; ++l) {
      double peak = 0.0;
      for (int k = 0; k < p.experts; ++k) peak = std::max(peak, p.at(g, l, k));
      const bool flat = peak - uniform_share < 0.05;
      p.uniform[static_cast<std::size_t>(g) * p.layers + l] = flat;
      if (p.counts[g] > 0 && !flat) p.layer_uniform[l] = false;
    }
  }
  return p;
}

std::vector<Neighbor> path_distance_neighbors(std::span<const PathRecord> records,
                                              std::int64_t query_id, int k_neighbors) {
  const auto q = std::find_if(records.begin(), records.end(),
                              [&](const PathRecord& r) { return r.sample_id == query_id; });
  if (q == records.end()) {
    throw ContractError("neighbors: query id " + std::to_string(query_id) + " not among records");
  }
  std::vector<Neighbor> all;
  for (const auto& r : records) {
    if (&r == &*q) continue;
    if (r.xi.size() != q->xi.size()) throw DimensionError("neighbors: path lengths differ");
    double s = 0.0;
    for (std::size_t j = 0; j < r.xi.size(); ++j) s += (r.xi[j] - q->xi[j]) * (r.xi[j] - q->xi[j]);
    all.push_back({r.sample_id, std::sqrt(s)});
  }
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.sample_id < b.sample_id;
  });
  if (k_neighbors >= 0 && static_cast<std::size_t>(k_neighbors) < all.size()) {
    all.resize(static_cast<std::size_t>(k_neighbors));
  }
  return all;
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string paths_csv(std::span<const PathRecord> records) {
  std::string out = "sample_id,class,domain";
  if (!records.empty()) {
    for (int k = 0; k < records.front().experts; ++k)
      for (int l = 0; l < records.front().layers; ++l)
        out += ",xi_" + std::to_string(k + 1) + "_" + std::to_string(l + 1);
  }
  out += "\n";
  for (const auto& r : records) {
    out += std::to_string(r.sample_id) + "," + std::to_string(r.label) + "," +
           std::to_string(r.domain);
    for (double v : r.xi) out += "," + fmt(v);
    out += "\n";
  }
  return out;
}

std::string pca_csv(std::span<const PathRecord> records, const PCAResult& result) {
  if (result.projections.size() != records.size()) {
    throw DimensionError("pca_csv: projections do not match records");
  }
  std::string out = "sample_id,class,domain";
  for (std::size_t c = 0; c < result.components.size(); ++c) out += ",pc" + std::to_string(c + 1);
  out += "\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    out += std::to_string(records[i].sample_id) + "," + std::to_string(records[i].label) + "," +
           std::to_string(records[i].domain);
    for (double v : result.projections[i]) out += "," + fmt(v);
    out += "\n";
  }
  return out;
}

std::string pca_svg(std::span<const PathRecord> records, const PCAResult& result) {
  if (result.projections.size() != records.size()) {
    throw DimensionError("pca_svg: projections do not match records");
  }
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  constexpr double kSize = 600.0, kMargin = 50.0;
  double lo[2] = {0.0, 0.0}, hi[2] = {0.0, 0.0};
  const int dims = static_cast<int>(result.components.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (int a = 0; a < 2; ++a) {
      const double v = a < dims ? result.projections[i][a] : 0.0;
      lo[a] = i == 0 ? v : std::min(lo[a], v);
      hi[a] = i == 0 ? v : std::max(hi[a], v);
    }
  }
  auto coord = [&](int a, double v) {
    const double span = hi[a] - lo[a];
    const double t = span > 0.0 ? (v - lo[a]) / span : 0.5;
    return a == 0 ? kMargin + t * (kSize - 2 * kMargin) : kSize - kMargin - t * (kSize - 2 * kMargin);
  };
  std::string out =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" "
      "viewBox=\"0 0 600 600\">\n"
      "<rect width=\"600\" height=\"600\" fill=\"white\"/>\n"
      "<line x1=\"50\" y1=\"550\" x2=\"550\" y2=\"550\" stroke=\"black\"/>\n"
      "<line x1=\"50\" y1=\"50\" x2=\"50\" y2=\"550\" stroke=\"black\"/>\n"
      "<text x=\"300\" y=\"585\" text-anchor=\"middle\" font-size=\"14\">PC1</text>\n"
      "<text x=\"18\" y=\"300\" text-anchor=\"middle\" font-size=\"14\" "
      "transform=\"rotate(-90 18 300)\">PC2</text>\n";
  std::map<int, bool> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int d = records[i].domain;
    seen[d] = true;
    const double x = coord(0, result.projections[i][0]);
    const double y = coord(1, dims > 1 ? result.projections[i][1] : 0.0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\" "
                  "fill-opacity=\"0.6\"/>\n", x, y, colors[d % 8]);
    out += buf;
  }
  int row = 0;
  for (const auto& [d, unused] : seen) {
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "<circle cx=\"470\" cy=\"%d\" r=\"5\" fill=\"%s\"/>"
                  "<text x=\"482\" y=\"%d\" font-size=\"12\">domain %d</text>\n",
                  24 + 16 * row, colors[d % 8], 28 + 16 * row, d);
    out += buf;
    ++row;
  }
  out += "</svg>\n";
  return out;
}

}  // namespace dra
