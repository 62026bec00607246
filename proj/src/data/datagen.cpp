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


#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "../common/json_util.hpp"
#include "dra/datagen.hpp"
#include "dra/error.hpp"
#include "dra/rng.hpp"

namespace dra {

const char* label_mode_name(LabelMode mode) {
  return mode == LabelMode::kJoint ? "joint_labels" : "exclusive_labels";
}

LabelMode parse_label_mode(const std::string& name) {
  if (name == "joint_labels" || name == "joint") return LabelMode::kJoint;
  if (name == "exclusive_labels" || name == "exclusive") return LabelMode::kExclusive;
  throw ConfigError("unknown label mode '" + name + "' (expected joint_labels or exclusive_labels)");
}

const char* style_name(Style style) {
  switch (style) {
    case Style::kPhoto: return "photo";
    case Style::kSketch: return "sketch";
    case Style::kCartoon: return "cartoon";
    case Style::kTexture: return "texture";
  }
  return "unknown";
}

const char* shape_name(ShapeKind shape) {
  static constexpr std::array<const char*, kMaxShapes> names = {
      "disk", "square", "cross", "triangle", "ring", "diamond", "bar", "saltire"};
  return names[static_cast<std::size_t>(shape)];
}

int DatasetSpec::num_classes() const {
  if (mode == LabelMode::kJoint) return classes;
  return std::accumulate(domain_classes.begin(), domain_classes.end(), 0);
}

int DatasetSpec::label_offset(int domain) const {
  if (mode == LabelMode::kJoint) return 0;
  return std::accumulate(domain_classes.begin(), domain_classes.begin() + domain, 0);
}

int DatasetSpec::classes_in_domain(int domain) const {
  return mode == LabelMode::kJoint ? classes : domain_classes[static_cast<std::size_t>(domain)];
}

void DatasetSpec::validate() const {
  if (domains < 1 || domains > kMaxDomains) {
    throw ConfigError("dataset: domains must lie in [1, " + std::to_string(kMaxDomains) + "]");
  }
  if (static_cast<int>(pi.size()) != domains) {
    throw ConfigError("dataset: pi has " + std::to_string(pi.size()) + " entries for " +
                      std::to_string(domains) + " domains");
  }
  double total = 0.0;
  for (double p : pi) {
    if (!(p > 0.0)) throw ConfigError("dataset: every pi entry must be positive");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("dataset: pi must sum to 1, sums to " + std::to_string(total));
  }
  if (mode == LabelMode::kJoint) {
    if (classes < 1 || classes > kMaxShapes) {
      throw ConfigError("dataset: classes must lie in [1, " + std::to_string(kMaxShapes) +
                        "], only " + std::to_string(kMaxShapes) + " shapes are representable");
    }
  } else {
    if (static_cast<int>(domain_classes.size()) != domains) {
      throw ConfigError("dataset: exclusive labels need one class count per domain");
    }
    for (int c : domain_classes) {
      if (c < 1 || c > kMaxShapes) {
        throw ConfigError("dataset: classes per domain must lie in [1, " +
                          std::to_string(kMaxShapes) + "]");
      }
    }
  }
  if (image_size < 8 || image_size > 256) {
    throw ConfigError("dataset: image_size must lie in [8, 256]");
  }
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ConfigError("dataset: test_fraction must lie in [0, 1)");
  }
  const std::vector<int> counts = allocate_counts(pi, std::max(samples, 0));
  for (int d = 0; d < domains; ++d) {
    if (counts[static_cast<std::size_t>(d)] < classes_in_domain(d)) {
      throw ConfigError("dataset: " + std::to_string(samples) +
                        " samples leave domain " + std::to_string(d) + " with fewer samples (" +
                        std::to_string(counts[static_cast<std::size_t>(d)]) + ") than classes");
    }
  }
}

nlohmann::json DatasetSpec::to_json() const {
  nlohmann::json j = {{"mode", label_mode_name(mode)},
                      {"domains", domains},
                      {"classes", classes},
                      {"pi", pi},
                      {"image_size", image_size},
                      {"samples", samples},
                      {"seed", seed},
                      {"test_fraction", test_fraction},
                      {"split_seed", split_seed}};
  if (mode == LabelMode::kExclusive) j["domain_classes"] = domain_classes;
  return j;
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
  jsonutil::reject_unknown(j,
                           {"mode", "domains", "classes", "domain_classes", "pi", "image_size",
                            "samples", "seed", "test_fraction", "split_seed"},
                           "dataset");
  DatasetSpec s;
  try {
    if (j.contains("mode")) s.mode = parse_label_mode(j.at("mode").get<std::string>());
    s.domains = j.value("domains", s.domains);
    s.classes = j.value("classes", s.classes);
    s.domain_classes = j.value("domain_classes", s.domain_classes);
    s.pi = j.value("pi", s.pi);
    s.image_size = j.value("image_size", s.image_size);
    s.samples = j.value("samples", s.samples);
    s.seed = j.value("seed", s.seed);
    s.test_fraction = j.value("test_fraction", s.test_fraction);
    s.split_seed = j.value("split_seed", s.split_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }
  if (s.mode == LabelMode::kExclusive && j.contains("domain_classes") && !j.contains("domains")) {
    s.domains = static_cast<int>(s.domain_classes.size());
  }
  return s;
}

std::vector<int> allocate_counts(std::span<const double> pi, int n) {
  std::vector<int> counts(pi.size(), 0);
  std::vector<double> remainder(pi.size(), 0.0);
  int assigned = 0;
  for (std::size_t d = 0; d < pi.size(); ++d) {
    const double exact = pi[d] * n;
    counts[d] = static_cast<int>(std::floor(exact + 1e-9));
    remainder[d] = exact - counts[d];
    assigned += counts[d];
  }
  std::vector<std::size_t> order(pi.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n && i < order.size(); ++i, ++assigned) ++counts[order[i]];
  return counts;
}

namespace {

template <typename V>
void shuffle_with(V& v, const CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform(i) * static_cast<double>(i));
    std::swap(v[i - 1], v[std::min(j, i - 1)]);
  }
}

bool inside(ShapeKind kind, double u, double v) {
  switch (kind) {
    case ShapeKind::kDisk:
      return u * u + v * v <= 1.0;
    case ShapeKind::kSquare:
      return std::max(std::abs(u), std::abs(v)) <= 0.8;
    case ShapeKind::kCross:
      return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) ||
             (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    case ShapeKind::kTriangle:
      return v <= 0.8 && std::abs(u) <= (v + 0.9) / 1.7;
    case ShapeKind::kRing: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.3;
    }
    case ShapeKind::kDiamond:
      return std::abs(u) + std::abs(v) <= 1.05;
    case ShapeKind::kBar:
      return std::abs(u) <= 1.0 && std::abs(v) <= 0.35;
    case ShapeKind::kSaltire: {
      const double a = (u + v) * 0.7071067811865476;
      const double b = (u - v) * 0.7071067811865476;
      return (std::abs(a) <= 0.25 && std::abs(b) <= 1.1) ||
             (std::abs(b) <= 0.25 && std::abs(a) <= 1.1);
    }
  }
  return false;
}

struct Placement {
  double cx, cy, radius, cos_a, sin_a;
};

// Fraction of a 4x4 sub-pixel grid inside the shape.
std::vector<double> coverage_map(ShapeKind kind, const Placement& p, int size) {
  std::vector<double> cov(static_cast<std::size_t>(size) * size, 0.0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy) {
        for (int sx = 0; sx < 4; ++sx) {
          const double px = x + (sx + 0.5) / 4.0 - p.cx;
          const double py = y + (sy + 0.5) / 4.0 - p.cy;
          const double u = (p.cos_a * px + p.sin_a * py) / p.radius;
          const double v = (-p.sin_a * px + p.cos_a * py) / p.radius;
          hits += inside(kind, u, v);
        }
      }
      cov[static_cast<std::size_t>(y) * size + x] = hits / 16.0;
    }
  }
  return cov;
}

// Largest coverage jump to a 4-neighbour: 1 on hard boundaries, 0 inside.
std::vector<double> edge_map(const std::vector<double>& cov, int size) {
  std::vector<double> edge(cov.size(), 0.0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double c = cov[static_cast<std::size_t>(y) * size + x];
      double m = 0.0;
      const int dx[] = {1, -1, 0, 0};
      const int dy[] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        const int nx = x + dx[k], ny = y + dy[k];
        const double n = (nx < 0 || ny < 0 || nx >= size || ny >= size)
                             ? 0.0
                             : cov[static_cast<std::size_t>(ny) * size + nx];
        m = std::max(m, std::abs(c - n));
      }
      edge[static_cast<std::size_t>(y) * size + x] = std::min(1.0, m);
    }
  }
  return edge;
}

using Rgb = std::array<double, 3>;

double luminance(const Rgb& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

Rgb random_color(const CounterRng& r, std::uint64_t base, double lo, double hi) {
  return {lo + (hi - lo) * r.uniform(base), lo + (hi - lo) * r.uniform(base + 1),
          lo + (hi - lo) * r.uniform(base + 2)};
}

constexpr std::array<Rgb, 6> kPalette = {{{0.95, 0.20, 0.15},
                                          {0.10, 0.55, 0.95},
                                          {0.98, 0.85, 0.10},
                                          {0.15, 0.80, 0.30},
                                          {0.75, 0.25, 0.85},
                                          {1.00, 0.55, 0.05}}};

}  // namespace

std::vector<float> render_sample(ShapeKind shape, Style style, int size, std::uint64_t key) {
  const CounterRng r(key);
  const CounterRng noise = r.fork(0x4e015eULL);
  const double s = size;
  const double angle = (r.uniform(0) - 0.5) * 0.5;
  const Placement place{s * (0.38 + 0.24 * r.uniform(1)), s * (0.38 + 0.24 * r.uniform(2)),
                        s * (0.22 + 0.12 * r.uniform(3)), std::cos(angle), std::sin(angle)};
  const std::vector<double> cov = coverage_map(shape, place, size);
  const std::vector<double> edge = edge_map(cov, size);
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  std::vector<float> img(3 * plane);
  auto put = [&](std::size_t i, const Rgb& c) {
    for (int ch = 0; ch < 3; ++ch) {
      img[ch * plane + i] = static_cast<float>(std::clamp(c[ch], 0.0, 1.0));
    }
  };

  switch (style) {
    case Style::kPhoto: {
      const Rgb b0 = random_color(r, 10, 0.15, 0.9);
      const Rgb b1 = random_color(r, 13, 0.15, 0.9);
      Rgb fg = random_color(r, 16, 0.05, 0.95);
      const Rgb mid = {(b0[0] + b1[0]) / 2, (b0[1] + b1[1]) / 2, (b0[2] + b1[2]) / 2};
      if (std::abs(luminance(fg) - luminance(mid)) < 0.25) {
        for (double& c : fg) c = 1.0 - c;
      }
      const double grad = 6.283185307179586 * r.uniform(19);
      const double light = 6.283185307179586 * r.uniform(20);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * size + x;
          const double t = 0.5 + 0.5 * ((x - s / 2) * std::cos(grad) + (y - s / 2) * std::sin(grad)) /
                                     (s / 2);
          const double shade =
              0.8 + 0.2 * ((x - place.cx) * std::cos(light) + (y - place.cy) * std::sin(light)) /
                        place.radius;
          Rgb c;
          for (int ch = 0; ch < 3; ++ch) {
            const double bg = b0[ch] + (b1[ch] - b0[ch]) * std::clamp(t, 0.0, 1.0);
            c[ch] = (1 - cov[i]) * bg + cov[i] * fg[ch] * shade +
                    0.03 * noise.normal(3 * i + ch);
          }
          put(i, c);
        }
      }
      break;
    }
    case Style::kSketch: {
      const double paper = 0.9 + 0.08 * r.uniform(10);
      const Rgb ink = {0.1 + 0.15 * r.uniform(11), 0.1 + 0.15 * r.uniform(12),
                       0.2 + 0.2 * r.uniform(13)};
      const int period = 3 + static_cast<int>(r.uniform(14) * 3);
      const bool hatch = r.uniform(15) < 0.5;
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * size + x;
          double stroke = std::min(1.0, 1.2 * edge[i]);
          if (hatch && cov[i] > 0.5 && (x + y) % period == 0) stroke = std::max(stroke, 0.35);
          const double grain = 0.025 * noise.normal(i);
          Rgb c;
          for (int ch = 0; ch < 3; ++ch) c[ch] = paper + grain - (paper - ink[ch]) * stroke;
          put(i, c);
        }
      }
      break;
    }
    case Style::kCartoon: {
      const int a = static_cast<int>(r.uniform(10) * kPalette.size()) % 6;
      int b = static_cast<int>(r.uniform(11) * (kPalette.size() - 1)) % 5;
      if (b >= a) ++b;
      const Rgb bg = {kPalette[a][0] * 0.35, kPalette[a][1] * 0.35, kPalette[a][2] * 0.35};
      const Rgb fg = kPalette[b];
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * size + x;
          const double outline = std::min(1.0, 1.5 * edge[i]);
          Rgb c;
          for (int ch = 0; ch < 3; ++ch) {
            const double flat = cov[i] >= 0.5 ? fg[ch] : bg[ch];
            c[ch] = flat * (1 - outline) + 0.02 * outline;
          }
          put(i, c);
        }
      }
      break;
    }
    case Style::kTexture: {
      const Rgb c0 = random_color(r, 10, 0.1, 0.9);
      const Rgb c1 = random_color(r, 13, 0.1, 0.9);
      Rgb f0 = random_color(r, 16, 0.0, 1.0);
      const Rgb mid = {(c0[0] + c1[0]) / 2, (c0[1] + c1[1]) / 2, (c0[2] + c1[2]) / 2};
      if (std::abs(luminance(f0) - luminance(mid)) < 0.25) {
        for (double& c : f0) c = 1.0 - c;
      }
      const double freq = 0.25 + 0.35 * r.uniform(19);
      const double orient = 3.141592653589793 * r.uniform(20);
      const double phase = 6.283185307179586 * r.uniform(21);
      const int cell = 2 + static_cast<int>(r.uniform(22) * 3);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * size + x;
          const double w =
              0.5 + 0.5 * std::sin(freq * (x * std::cos(orient) + y * std::sin(orient)) + phase);
          const bool check = ((x / cell) + (y / cell)) % 2 == 0;
          Rgb c;
          for (int ch = 0; ch < 3; ++ch) {
            const double bg = c0[ch] + (c1[ch] - c0[ch]) * w;
            const double fg = check ? f0[ch] : 0.6 * f0[ch] + 0.4 * mid[ch];
            c[ch] = (1 - cov[i]) * bg + cov[i] * fg + 0.03 * noise.normal(3 * i + ch);
          }
          put(i, c);
        }
      }
      break;
    }
  }
  return img;
}

LatentDomainDataset::LatentDomainDataset(DatasetSpec spec, int channels, std::vector<float> images,
                                         std::vector<int> labels, std::vector<int> domain_tags,
                                         std::vector<std::uint8_t> test_flags)
    : spec_(std::move(spec)),
      channels_(channels),
      images_(std::move(images)),
      labels_(std::move(labels)),
      domain_tags_(std::move(domain_tags)),
      test_flags_(std::move(test_flags)) {
  const std::size_t n = labels_.size();
  if (domain_tags_.size() != n || test_flags_.size() != n || images_.size() != n * image_numel()) {
    throw DimensionError("dataset: inconsistent field sizes");
  }
}

std::span<const float> LatentDomainDataset::image(int i) const {
  return std::span<const float>(images_).subspan(static_cast<std::size_t>(i) * image_numel(),
                                                 image_numel());
}

std::vector<int> LatentDomainDataset::train_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (!test_flags_[static_cast<std::size_t>(i)]) out.push_back(i);
  return out;
}

std::vector<int> LatentDomainDataset::test_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (test_flags_[static_cast<std::size_t>(i)]) out.push_back(i);
  return out;
}

ag::Tensor<float> LatentDomainDataset::gather(std::span<const int> indices) const {
  const int b = static_cast<int>(indices.size());
  ag::Tensor<float> out(ag::Shape{b, channels_, spec_.image_size, spec_.image_size});
  auto dst = out.values();
  for (int j = 0; j < b; ++j) {
    const int i = indices[static_cast<std::size_t>(j)];
    if (i < 0 || i >= size()) throw ContractError("dataset: sample index out of range");
    const auto src = image(i);
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(j) * image_numel());
  }
  return out;
}

bool LatentDomainDataset::operator==(const LatentDomainDataset& o) const {
  return spec_.to_json() == o.spec_.to_json() && channels_ == o.channels_ &&
         images_ == o.images_ && labels_ == o.labels_ && domain_tags_ == o.domain_tags_ &&
         test_flags_ == o.test_flags_;
}

LatentDomainDataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  const CounterRng root(hash_seed({spec.seed, 0xda7aULL}));
  const std::vector<int> counts = allocate_counts(spec.pi, spec.samples);

  std::vector<std::pair<int, int>> slots;  // (domain, label)
  slots.reserve(static_cast<std::size_t>(spec.samples));
  for (int d = 0; d < spec.domains; ++d) {
    const int classes = spec.classes_in_domain(d);
    const std::vector<double> even(static_cast<std::size_t>(classes), 1.0 / classes);
    const std::vector<int> per_class = allocate_counts(even, counts[static_cast<std::size_t>(d)]);
    for (int c = 0; c < classes; ++c)
      for (int k = 0; k < per_class[static_cast<std::size_t>(c)]; ++k)
        slots.emplace_back(d, spec.label_offset(d) + c);
  }
  shuffle_with(slots, root.fork(1));

  const int n = spec.samples;
  const int size = spec.image_size;
  const std::size_t numel = 3 * static_cast<std::size_t>(size) * size;
  std::vector<float> images(numel * static_cast<std::size_t>(n));
  std::vector<int> labels(static_cast<std::size_t>(n));
  std::vector<int> tags(static_cast<std::size_t>(n));
  const CounterRng render_keys = root.fork(2);
  for (int i = 0; i < n; ++i) {
    const auto [d, label] = slots[static_cast<std::size_t>(i)];
    const auto shape = static_cast<ShapeKind>(label - spec.label_offset(d));
    const std::vector<float> img =
        render_sample(shape, static_cast<Style>(d), size, render_keys.fork(i).key());
    std::copy(img.begin(), img.end(), images.begin() + static_cast<std::ptrdiff_t>(i * numel));
    labels[static_cast<std::size_t>(i)] = label;
    tags[static_cast<std::size_t>(i)] = d;
  }

  // Stratified split: each (class, domain) group contributes its own share.
  std::vector<std::uint8_t> test(static_cast<std::size_t>(n), 0);
  const int nc = spec.num_classes();
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(nc * spec.domains));
  for (int i = 0; i < n; ++i) {
    groups[static_cast<std::size_t>(labels[i] * spec.domains + tags[i])].push_back(i);
  }
  const CounterRng split(hash_seed({spec.split_seed, 0x5b117ULL}));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::vector<int>& members = groups[g];
    shuffle_with(members, split.fork(g));
    const auto take = static_cast<std::size_t>(
        std::llround(spec.test_fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < take && k < members.size(); ++k) {
      test[static_cast<std::size_t>(members[k])] = 1;
    }
  }
  return LatentDomainDataset(spec, 3, std::move(images), std::move(labels), std::move(tags),
                             std::move(test));
}

}  // namespace dra
