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


#ifndef DRA_DATAGEN_HPP
#define DRA_DATAGEN_HPP

// Synthetic latent-domain image data. Classes are parametric shapes; domains
// are rendering styles mixed in proportions pi. Domain tags are stored with
// every sample but can only be read through a TagCapability.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dra/autograd.hpp"

namespace dra {

enum class LabelMode {
  kJoint,      // every class appears in every domain
  kExclusive,  // domain d owns its own label range
};

const char* label_mode_name(LabelMode mode);
LabelMode parse_label_mode(const std::string& name);

enum class Style { kPhoto = 0, kSketch = 1, kCartoon = 2, kTexture = 3 };
enum class ShapeKind { kDisk = 0, kSquare, kCross, kTriangle, kRing, kDiamond, kBar, kSaltire };

constexpr int kMaxDomains = 4;
constexpr int kMaxShapes = 8;

const char* style_name(Style style);
const char* shape_name(ShapeKind shape);

struct DatasetSpec {
  LabelMode mode = LabelMode::kJoint;
  int domains = 3;
  int classes = 6;  // per domain in joint mode
  // Exclusive mode: classes owned by each domain, one entry per domain.
  std::vector<int> domain_classes;
  std::vector<double> pi = {0.6, 0.3, 0.1};
  int image_size = 32;
  int samples = 6000;
  std::uint64_t seed = 1;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 2;

  int num_classes() const;
  // First joint label of domain d (0 in joint mode).
  int label_offset(int domain) const;
  int classes_in_domain(int domain) const;
  void validate() const;

  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

// Exact proportional allocation of n samples to shares pi (largest
// remainder, ties to the lower index).
std::vector<int> allocate_counts(std::span<const double> pi, int n);

class TagCapability {
 public:
  static TagCapability evaluation() { return TagCapability(); }
  static TagCapability fixed_gates() { return TagCapability(); }

 private:
  TagCapability() = default;
};

class LatentDomainDataset {
 public:
  LatentDomainDataset() = default;
  LatentDomainDataset(DatasetSpec spec, int channels, std::vector<float> images,
                      std::vector<int> labels, std::vector<int> domain_tags,
                      std::vector<std::uint8_t> test_flags);

  const DatasetSpec& spec() const { return spec_; }
  int size() const { return static_cast<int>(labels_.size()); }
  int channels() const { return channels_; }
  int height() const { return spec_.image_size; }
  int width() const { return spec_.image_size; }
  std::size_t image_numel() const {
    return static_cast<std::size_t>(channels_) * spec_.image_size * spec_.image_size;
  }

  std::span<const float> images() const { return images_; }
  std::span<const float> image(int i) const;
  std::span<const int> labels() const { return labels_; }
  std::span<const std::uint8_t> test_flags() const { return test_flags_; }
  std::span<const int> domain_tags(const TagCapability&) const { return domain_tags_; }

  std::vector<int> train_indices() const;
  std::vector<int> test_indices() const;

  // [B, C, H, W] copy of the listed samples.
  ag::Tensor<float> gather(std::span<const int> indices) const;

  bool operator==(const LatentDomainDataset& other) const;

 private:
  DatasetSpec spec_;
  int channels_ = 3;
  std::vector<float> images_;
  std::vector<int> labels_;
  std::vector<int> domain_tags_;
  std::vector<std::uint8_t> test_flags_;
};

LatentDomainDataset generate_dataset(const DatasetSpec& spec);

// Draws one image [C,H,W] in [0,1]; exposed for tests and previews.
std::vector<float> render_sample(ShapeKind shape, Style style, int size, std::uint64_t key);

// "LDD1" file: magic, u64 little-endian header length, JSON header, images
// as float32, then labels, domain tags and split flags as int32.
std::vector<std::uint8_t> serialize_dataset(const LatentDomainDataset& data);
LatentDomainDataset deserialize_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const LatentDomainDataset& data, const std::string& path);
LatentDomainDataset load_dataset(const std::string& path);

}  // namespace dra

#endif  // DRA_DATAGEN_HPP
