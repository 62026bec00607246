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
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dra/datagen.hpp"
#include "dra/error.hpp"

namespace dra {
namespace {

DatasetSpec small_spec() {
  DatasetSpec s;
  s.samples = 1000;
  s.image_size = 16;
  return s;
}

std::vector<int> domain_counts(const LatentDomainDataset& data) {
  std::vector<int> counts(static_cast<std::size_t>(data.spec().domains), 0);
  for (int d : data.domain_tags(TagCapability::evaluation())) ++counts[static_cast<std::size_t>(d)];
  return counts;
}

TEST(Allocation, ExactProportions) {
  const std::vector<double> pi = {0.6, 0.3, 0.1};
  EXPECT_EQ(allocate_counts(pi, 1000), (std::vector<int>{600, 300, 100}));
  EXPECT_EQ(allocate_counts(pi, 6000), (std::vector<int>{3600, 1800, 600}));
  const std::vector<double> thirds = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  EXPECT_EQ(allocate_counts(thirds, 10), (std::vector<int>{4, 3, 3}));
}

TEST(Allocation, WithinOneSampleOfShare) {
  const std::vector<double> pi = {0.052, 0.156, 0.091, 0.028, 0.122, 0.1, 0.406, 0.016, 0.029};
  for (int n : {17, 100, 999, 4321}) {
    const std::vector<int> c = allocate_counts(pi, n);
    int total = 0;
    for (std::size_t d = 0; d < pi.size(); ++d) {
      EXPECT_LE(std::abs(c[d] - pi[d] * n), 1.0);
      total += c[d];
    }
    EXPECT_EQ(total, n);
  }
}

TEST(Generate, DomainCountsFollowPi) {
  const LatentDomainDataset data = generate_dataset(small_spec());
  EXPECT_EQ(data.size(), 1000);
  EXPECT_EQ(domain_counts(data), (std::vector<int>{600, 300, 100}));
}

TEST(Generate, EveryClassInEveryDomain) {
  const LatentDomainDataset data = generate_dataset(small_spec());
  std::map<std::pair<int, int>, int> seen;
  const auto tags = data.domain_tags(TagCapability::evaluation());
  for (int i = 0; i < data.size(); ++i) ++seen[{data.labels()[i], tags[i]}];
  EXPECT_EQ(seen.size(), 6u * 3u);
}

TEST(Generate, PixelsInUnitRange) {
  const LatentDomainDataset data = generate_dataset(small_spec());
  const auto [lo, hi] = std::minmax_element(data.images().begin(), data.images().end());
  EXPECT_GE(*lo, 0.0f);
  EXPECT_LE(*hi, 1.0f);
}

TEST(Generate, SameSeedIsBitIdentical) {
  const LatentDomainDataset a = generate_dataset(small_spec());
  const LatentDomainDataset b = generate_dataset(small_spec());
  EXPECT_TRUE(a == b);
  DatasetSpec other = small_spec();
  other.seed = 99;
  EXPECT_FALSE(a == generate_dataset(other));
}

TEST(Generate, ExclusiveLabelsAreDisjoint) {
  DatasetSpec s = small_spec();
  s.mode = LabelMode::kExclusive;
  s.domains = 2;
  s.pi = {0.5, 0.5};
  s.domain_classes = {3, 4};
  EXPECT_EQ(s.num_classes(), 7);
  const LatentDomainDataset data = generate_dataset(s);
  const auto tags = data.domain_tags(TagCapability::evaluation());
  std::vector<std::vector<int>> seen(2);
  for (int i = 0; i < data.size(); ++i) seen[tags[i]].push_back(data.labels()[i]);
  for (auto& v : seen) std::sort(v.begin(), v.end());
  EXPECT_EQ(seen[0].front(), 0);
  EXPECT_EQ(seen[0].back(), 2);
  EXPECT_EQ(seen[1].front(), 3);
  EXPECT_EQ(seen[1].back(), 6);
}

TEST(Split, StratifiedTwentyPercent) {
  const LatentDomainDataset data = generate_dataset(small_spec());
  const auto tags = data.domain_tags(TagCapability::evaluation());
  std::map<std::pair<int, int>, std::pair<int, int>> groups;  // (test, total)
  for (int i = 0; i < data.size(); ++i) {
    auto& g = groups[{data.labels()[i], tags[i]}];
    g.first += data.test_flags()[i];
    ++g.second;
  }
  for (const auto& [key, g] : groups) {
    EXPECT_LE(std::abs(g.first - 0.2 * g.second), 0.5 + 1e-9);
  }
  const auto train = data.train_indices();
  const auto test = data.test_indices();
  EXPECT_EQ(train.size() + test.size(), 1000u);
  std::vector<int> both;
  std::set_intersection(train.begin(), train.end(), test.begin(), test.end(),
                        std::back_inserter(both));
  EXPECT_TRUE(both.empty());
  EXPECT_NEAR(static_cast<double>(test.size()), 200.0, 10.0);
}

TEST(Split, SplitSeedChangesOnlyTheSplit) {
  DatasetSpec s = small_spec();
  const LatentDomainDataset a = generate_dataset(s);
  s.split_seed = 7;
  const LatentDomainDataset b = generate_dataset(s);
  EXPECT_TRUE(std::equal(a.images().begin(), a.images().end(), b.images().begin()));
  EXPECT_FALSE(std::equal(a.test_flags().begin(), a.test_flags().end(), b.test_flags().begin()));
}

TEST(Spec, Validation) {
  DatasetSpec s = small_spec();
  s.pi = {0.5, 0.3, 0.1};
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.classes = 9;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.domains = 5;
  s.pi = {0.2, 0.2, 0.2, 0.2, 0.2};
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.samples = 12;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(DatasetSpec::from_json({{"colour", 1}}), ConfigError);
}

TEST(Spec, JsonRoundTrip) {
  DatasetSpec s = small_spec();
  s.mode = LabelMode::kExclusive;
  s.domain_classes = {2, 3, 4};
  EXPECT_EQ(DatasetSpec::from_json(s.to_json()).to_json(), s.to_json());
}

TEST(Gather, CopiesRequestedSamples) {
  const LatentDomainDataset data = generate_dataset(small_spec());
  const std::vector<int> idx = {5, 2};
  const ag::Tensor<float> batch = data.gather(idx);
  EXPECT_EQ(batch.shape(), (ag::Shape{2, 3, 16, 16}));
  EXPECT_TRUE(std::equal(data.image(2).begin(), data.image(2).end(),
                         batch.values().begin() + data.image_numel()));
}

TEST(DatasetFile, RoundTrip) {
  const LatentDomainDataset data = generate_dataset(small_spec());
  const std::vector<std::uint8_t> bytes = serialize_dataset(data);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LDD1");
  EXPECT_TRUE(deserialize_dataset(bytes) == data);

  const std::string path = ::testing::TempDir() + "/roundtrip.ldd";
  save_dataset(data, path);
  EXPECT_TRUE(load_dataset(path) == data);
  std::remove(path.c_str());
}

TEST(DatasetFile, CorruptMagic) {
  std::vector<std::uint8_t> bytes = serialize_dataset(generate_dataset(small_spec()));
  bytes[3] = '2';
  try {
    deserialize_dataset(bytes);
    FAIL() << "accepted bad magic";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("\"LDD1\""), std::string::npos) << e.what();
  }
}

TEST(DatasetFile, TruncatedPayload) {
  std::vector<std::uint8_t> bytes = serialize_dataset(generate_dataset(small_spec()));
  const std::size_t full = bytes.size();
  bytes.resize(full - 100);
  try {
    deserialize_dataset(bytes);
    FAIL() << "accepted truncated file";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(full)), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(full - 100)), std::string::npos) << msg;
  }
  bytes.resize(3);
  EXPECT_THROW(deserialize_dataset(bytes), FormatError);
}

TEST(DatasetFile, TrailingBytesAreASizeMismatch) {
  std::vector<std::uint8_t> bytes = serialize_dataset(generate_dataset(small_spec()));
  bytes.push_back(0);
  try {
    deserialize_dataset(bytes);
    FAIL() << "accepted oversize file";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("mismatch"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace dra
