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


#include "../common/binary_io.hpp"
#include "dra/datagen.hpp"
#include "dra/error.hpp"

namespace dra {
namespace {

constexpr char kMagic[4] = {'L', 'D', 'D', '1'};
constexpr int kVersion = 1;

}  // namespace

std::vector<std::uint8_t> serialize_dataset(const LatentDomainDataset& data) {
  const nlohmann::json header = {
      {"version", kVersion},
      {"spec", data.spec().to_json()},
      {"counts",
       {{"samples", data.size()},
        {"train", data.train_indices().size()},
        {"test", data.test_indices().size()}}},
      {"image_shape", {data.channels(), data.height(), data.width()}},
      {"payload_bytes", data.images().size_bytes() + 3 * sizeof(std::int32_t) * data.size()}};
  const std::string text = header.dump();
  io::ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.value<std::uint64_t>(text.size());
  w.text(text);
  w.values<float>(data.images());
  for (int v : data.labels()) w.value<std::int32_t>(v);
  for (int v : data.domain_tags(TagCapability::evaluation())) w.value<std::int32_t>(v);
  for (std::uint8_t v : data.test_flags()) w.value<std::int32_t>(v);
  return std::move(w.bytes());
}

LatentDomainDataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "dataset");
  const std::string magic = r.text(4, "magic");
  if (magic != std::string(kMagic, 4)) throw FormatError("dataset: bad magic, expected \"LDD1\"");
  const auto length = r.value<std::uint64_t>("header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.text(length, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset: header is not valid JSON: ") + e.what());
  }
  DatasetSpec spec;
  int n = 0, c = 0, h = 0, w = 0;
  try {
    if (header.at("version").get<int>() != kVersion) {
      throw FormatError("dataset: unsupported version " + header.at("version").dump());
    }
    spec = DatasetSpec::from_json(header.at("spec"));
    n = header.at("counts").at("samples").get<int>();
    const auto shape = header.at("image_shape").get<std::vector<int>>();
    if (shape.size() != 3) throw FormatError("dataset: image_shape must have three extents");
    c = shape[0];
    h = shape[1];
    w = shape[2];
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("dataset: malformed header: ") + e.what());
  }
  if (n < 0 || c < 1 || h != spec.image_size || w != spec.image_size) {
    throw FormatError("dataset: header counts disagree with the spec");
  }
  const std::size_t image_values = static_cast<std::size_t>(n) * c * h * w;
  const std::size_t payload = image_values * sizeof(float) + 3 * sizeof(std::int32_t) * n;
  if (header.contains("payload_bytes") && header.at("payload_bytes").get<std::size_t>() != payload) {
    throw FormatError("dataset: header/payload size mismatch: header declares " +
                      header.at("payload_bytes").dump() + " payload bytes, shapes imply " +
                      std::to_string(payload));
  }
  const std::size_t expected = r.position() + payload;
  if (bytes.size() < expected) {
    throw FormatError("dataset: truncated payload: expected " + std::to_string(expected) +
                      " bytes, file has " + std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw FormatError("dataset: header/payload size mismatch: expected " +
                      std::to_string(expected) + " bytes, file has " +
                      std::to_string(bytes.size()));
  }
  std::vector<float> images(image_values);
  r.values<float>(std::span<float>(images), "images");
  auto ints = [&](const char* field) {
    std::vector<std::int32_t> v(static_cast<std::size_t>(n));
    r.values<std::int32_t>(std::span<std::int32_t>(v), field);
    return v;
  };
  const auto labels32 = ints("labels");
  const auto tags32 = ints("domain tags");
  const auto split32 = ints("split flags");
  std::vector<int> labels(labels32.begin(), labels32.end());
  std::vector<int> tags(tags32.begin(), tags32.end());
  std::vector<std::uint8_t> split(split32.size());
  for (std::size_t i = 0; i < split32.size(); ++i) {
    if (split32[i] != 0 && split32[i] != 1) throw FormatError("dataset: split flag not 0 or 1");
    split[i] = static_cast<std::uint8_t>(split32[i]);
    if (labels[i] < 0 || labels[i] >= spec.num_classes()) {
      throw FormatError("dataset: label outside the label space");
    }
    if (tags[i] < 0 || tags[i] >= spec.domains) throw FormatError("dataset: domain tag out of range");
  }
  return LatentDomainDataset(spec, c, std::move(images), std::move(labels), std::move(tags),
                             std::move(split));
}

void save_dataset(const LatentDomainDataset& data, const std::string& path) {
  io::write_file(path, serialize_dataset(data));
}

LatentDomainDataset load_dataset(const std::string& path) {
  return deserialize_dataset(io::read_file(path));
}

}  // namespace dra
