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

#include "../common/binary_io.hpp"
#include "dra/error.hpp"
#include "dra/layers.hpp"

namespace dra {
namespace {

constexpr char kMagic[4] = {'D', 'R', 'A', '1'};
constexpr int kVersion = 1;

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Network& net, const nlohmann::json& metadata) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& t : net.parameters()) {
    params.push_back({{"name", t.name()},
                      {"shape", t.shape().dims()},
                      {"learnable", t.requires_grad()}});
  }
  const nlohmann::json header = {{"version", kVersion},
                                 {"architecture", net.spec().to_json()},
                                 {"parameters", params},
                                 {"metadata", metadata}};
  const std::string text = header.dump();
  io::ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.value<std::uint64_t>(text.size());
  w.text(text);
  for (const auto& t : net.parameters()) w.values<float>(t.values());
  return std::move(w.bytes());
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "checkpoint");
  const std::string magic = r.text(4, "magic");
  if (magic != std::string(kMagic, 4)) {
    throw FormatError("checkpoint: bad magic, expected \"DRA1\"");
  }
  const auto length = r.value<std::uint64_t>("descriptor length");
  r.need(length, "descriptor");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.text(length, "descriptor"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: descriptor is not valid JSON: ") + e.what());
  }
  if (header.value("version", 0) != kVersion) {
    throw FormatError("checkpoint: unsupported version " + header.value("version", nlohmann::json()).dump());
  }
  ArchitectureSpec spec;
  try {
    spec = ArchitectureSpec::from_json(header.at("architecture"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  Checkpoint ck{Network::initialize(spec, 0), header.value("metadata", nlohmann::json::object())};
  auto params = ck.network.parameters();
  const auto& listed = header.at("parameters");
  if (listed.size() != params.size()) {
    throw FormatError("checkpoint: descriptor lists " + std::to_string(listed.size()) +
                      " parameters, architecture has " + std::to_string(params.size()));
  }
  std::size_t expected = r.position();
  for (const auto& t : params) expected += t.numel() * sizeof(float);
  if (bytes.size() != expected) {
    throw FormatError("checkpoint: payload size mismatch, expected " + std::to_string(expected) +
                      " bytes, file has " + std::to_string(bytes.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto t = params[i];
    const auto& entry = listed[i];
    if (entry.at("name").get<std::string>() != t.name() ||
        entry.at("shape").get<std::vector<int>>() != t.shape().dims()) {
      throw FormatError("checkpoint: parameter " + std::to_string(i) + " is '" +
                        entry.at("name").get<std::string>() + "', expected '" + t.name() + "' " +
                        t.shape().str());
    }
    r.values<float>(t.values(), t.name());
    t.set_requires_grad(entry.value("learnable", true));
  }
  return ck;
}

void save_checkpoint(const Network& net, const nlohmann::json& metadata, const std::string& path) {
  const auto bytes = serialize_checkpoint(net, metadata);
  io::write_file(path, bytes);
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto bytes = io::read_file(path);
  return deserialize_checkpoint(bytes);
}

}  // namespace dra
