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


#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "dra/dra.h"

namespace {

using nlohmann::json;

std::string take(char* s) {
  std::string out = s ? s : "";
  dra_string_free(s);
  return out;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("dra_capi_" + name)).string();
}

const char* kSmallSpec = R"({"samples": 120, "image_size": 16})";
const char* kSmallRun = R"({"dataset": {"samples": 120, "image_size": 16},
                            "schedule": {"epochs": 2, "decay_epochs": [1], "batch_size": 16}})";

TEST(CApi, StatusNamesAndVersion) {
  EXPECT_STREQ(dra_status_name(DRA_OK), "ok");
  EXPECT_STREQ(dra_status_name(DRA_ERR_MISMATCH), "mismatch");
  EXPECT_STREQ(dra_status_name(DRA_ERR_CONFIG), "config");
  EXPECT_GT(std::strlen(dra_version()), 0u);
}

TEST(CApi, NullArgumentsAreContractErrors) {
  EXPECT_EQ(dra_dataset_generate(kSmallSpec, nullptr), DRA_ERR_CONTRACT);
  EXPECT_NE(std::string(dra_last_error()).find("out"), std::string::npos);
  EXPECT_EQ(dra_dataset_save(nullptr, "x"), DRA_ERR_CONTRACT);
  dra_dataset_free(nullptr);
  dra_model_free(nullptr);
  dra_result_free(nullptr);
  dra_string_free(nullptr);
}

TEST(CApi, BadSpecIsConfigError) {
  dra_dataset* d = nullptr;
  EXPECT_EQ(dra_dataset_generate(R"({"pi": [0.5, 0.6, 0.1]})", &d), DRA_ERR_CONFIG);
  EXPECT_EQ(d, nullptr);
  EXPECT_NE(std::string(dra_last_error()).find("sum"), std::string::npos);
  EXPECT_EQ(dra_dataset_generate("{not json", &d), DRA_ERR_CONFIG);
}

TEST(CApi, DatasetRoundTripKeepsDigest) {
  dra_dataset* d = nullptr;
  ASSERT_EQ(dra_dataset_generate(kSmallSpec, &d), DRA_OK);
  EXPECT_STREQ(dra_last_error(), "");
  std::uint64_t before = 0, after = 0;
  ASSERT_EQ(dra_dataset_digest(d, &before), DRA_OK);
  const std::string path = temp_path("round.ldd");
  ASSERT_EQ(dra_dataset_save(d, path.c_str()), DRA_OK);
  dra_dataset* loaded = nullptr;
  ASSERT_EQ(dra_dataset_load(path.c_str(), &loaded), DRA_OK);
  ASSERT_EQ(dra_dataset_digest(loaded, &after), DRA_OK);
  EXPECT_EQ(before, after);
  char* info = nullptr;
  ASSERT_EQ(dra_dataset_info(loaded, &info), DRA_OK);
  const json j = json::parse(take(info));
  EXPECT_EQ(j["samples"], 120);
  EXPECT_EQ(j["domain_counts"], json({72, 36, 12}));
  dra_dataset_free(d);
  dra_dataset_free(loaded);
  std::filesystem::remove(path);
  EXPECT_EQ(dra_dataset_load(path.c_str(), &loaded), DRA_ERR_IO);
}

TEST(CApi, ConfigResolveEchoesDefaults) {
  char* out = nullptr;
  ASSERT_EQ(dra_config_resolve("{}", &out), DRA_OK);
  const json j = json::parse(take(out));
  EXPECT_EQ(j["architecture"]["experts"], 2);
  EXPECT_EQ(j["style"]["eta"], 0.025);
  EXPECT_EQ(j["schedule"]["epochs"], 60);
  EXPECT_EQ(dra_config_resolve(R"({"architecture": {"experts": 0}})", &out), DRA_ERR_CONFIG);
}

TEST(CApi, AblationRows) {
  char* out = nullptr;
  ASSERT_EQ(dra_ablation_configs(kSmallRun, &out), DRA_OK);
  const json rows = json::parse(take(out));
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0]["name"], "default");
  EXPECT_EQ(rows[5]["config"]["architecture"]["gate"]["mode"], "gumbel_st");
}

void count_epochs(const char* epoch_json, void* user) {
  const json e = json::parse(epoch_json);
  EXPECT_TRUE(e.contains("test"));
  ++*static_cast<int*>(user);
}

TEST(CApi, TrainSaveLoadEvaluateAnalyze) {
  dra_dataset* d = nullptr;
  ASSERT_EQ(dra_dataset_generate(kSmallSpec, &d), DRA_OK);
  int epochs = 0;
  dra_result* r = nullptr;
  ASSERT_EQ(dra_train(kSmallRun, d, 1, nullptr, count_epochs, &epochs, &r), DRA_OK)
      << dra_last_error();
  EXPECT_EQ(epochs, 4);

  char* text = nullptr;
  ASSERT_EQ(dra_result_metrics_csv(r, &text), DRA_OK);
  const std::string csv = take(text);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  ASSERT_EQ(dra_result_report(r, 1, &text), DRA_OK);
  const json report = json::parse(take(text));
  EXPECT_EQ(report["layer_purity"].size(), 6u);
  EXPECT_EQ(dra_result_report(r, 2, &text), DRA_ERR_CONTRACT);

  dra_model* m = nullptr;
  ASSERT_EQ(dra_result_model(r, 1, &m), DRA_OK);
  const std::string path = temp_path("model.dra");
  ASSERT_EQ(dra_model_save(m, R"({"seed": 1})", path.c_str()), DRA_OK);
  dra_model* loaded = nullptr;
  ASSERT_EQ(dra_model_load(path.c_str(), &loaded), DRA_OK);
  ASSERT_EQ(dra_model_info(loaded, &text), DRA_OK);
  const json info = json::parse(take(text));
  EXPECT_EQ(info["metadata"]["seed"], 1);

  char* evaluated = nullptr;
  ASSERT_EQ(dra_evaluate(loaded, d, &evaluated), DRA_OK);
  EXPECT_EQ(json::parse(take(evaluated))["weighted_accuracy"], report["weighted_accuracy"]);

  char *paths = nullptr, *svg = nullptr, *summary = nullptr;
  ASSERT_EQ(dra_analyze(loaded, d, R"({"components": 3})", &paths, nullptr, &svg, &summary),
            DRA_OK)
      << dra_last_error();
  EXPECT_EQ(take(paths).rfind("sample_id,class,domain,xi_1_1", 0), 0u);
  EXPECT_NE(take(svg).find("<svg"), std::string::npos);
  EXPECT_EQ(json::parse(take(summary))["pca"]["eigenvalues"].size(), 3u);
  EXPECT_EQ(dra_analyze(loaded, d, R"({"colour": 1})", nullptr, nullptr, nullptr, nullptr),
            DRA_ERR_CONFIG);

  dra_model* backbone = nullptr;
  ASSERT_EQ(dra_result_model(r, 0, &backbone), DRA_OK);
  EXPECT_EQ(dra_analyze(backbone, d, nullptr, nullptr, nullptr, nullptr, nullptr), DRA_ERR_MISMATCH);

  // Phase 2 on a supplied backbone reproduces the full run.
  dra_result* again = nullptr;
  ASSERT_EQ(dra_train(kSmallRun, d, 1, backbone, nullptr, nullptr, &again), DRA_OK);
  ASSERT_EQ(dra_result_report(again, 1, &text), DRA_OK);
  EXPECT_EQ(json::parse(take(text)), report);

  dra_dataset* other = nullptr;
  ASSERT_EQ(dra_dataset_generate(R"({"samples": 120, "image_size": 16, "classes": 4})", &other),
            DRA_OK);
  EXPECT_EQ(dra_evaluate(loaded, other, &evaluated), DRA_ERR_MISMATCH);

  dra_result_free(again);
  dra_model_free(backbone);
  dra_model_free(loaded);
  dra_model_free(m);
  dra_result_free(r);
  dra_dataset_free(other);
  dra_dataset_free(d);
  std::filesystem::remove(path);
}

TEST(CApi, SelfCheckPasses) {
  char* text = nullptr;
  int passed = 0;
  ASSERT_EQ(dra_self_check(&text, &passed), DRA_OK);
  EXPECT_EQ(passed, 1);
  EXPECT_TRUE(json::parse(take(text))["passed"].get<bool>());
}

}  // namespace
