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


#ifndef DRA_DRA_H
#define DRA_DRA_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define DRA_API __attribute__((visibility("default")))
#else
#define DRA_API
#endif

typedef enum dra_status {
  DRA_OK = 0,
  DRA_ERR_DIMENSION = 1,
  DRA_ERR_NUMERIC = 2,
  DRA_ERR_FORMAT = 3,
  DRA_ERR_CONFIG = 4,
  DRA_ERR_CONTRACT = 5,
  DRA_ERR_MISMATCH = 6,
  DRA_ERR_IO = 7,
  DRA_ERR_INTERNAL = 8
} dra_status;

typedef struct dra_dataset dra_dataset;
typedef struct dra_model dra_model;
typedef struct dra_result dra_result;

/* Strings returned through char** outputs are owned by the caller. */
DRA_API void dra_string_free(char* s);

DRA_API const char* dra_version(void);
DRA_API const char* dra_status_name(dra_status status);
/* Message of the last failure on the calling thread; empty after success. */
DRA_API const char* dra_last_error(void);

/* Datasets ("LDD1" files). spec_json may be NULL or "{}" for defaults. */
DRA_API dra_status dra_dataset_generate(const char* spec_json, dra_dataset** out);
DRA_API dra_status dra_dataset_load(const char* path, dra_dataset** out);
DRA_API dra_status dra_dataset_save(const dra_dataset* data, const char* path);
/* JSON with the spec, sizes, per-domain and per-class counts. */
DRA_API dra_status dra_dataset_info(const dra_dataset* data, char** json_out);
/* FNV-1a 64 of the serialized file. */
DRA_API dra_status dra_dataset_digest(const dra_dataset* data, uint64_t* out);
DRA_API void dra_dataset_free(dra_dataset* data);

/* Parses and validates a run config; writes it back with every default. */
DRA_API dra_status dra_config_resolve(const char* config_json, char** resolved_json);

/* The six ablation rows built from a base config, as a JSON array of
 * {"name": ..., "config": ...}: default, K=1, eta=0, learn_theta, mixup,
 * gumbel_st. */
DRA_API dra_status dra_ablation_configs(const char* config_json, char** rows_json);

/* Called once per epoch with the epoch record as JSON. */
typedef void (*dra_progress_fn)(const char* epoch_json, void* user);

/* Trains the plain backbone and the DRA network for one seed. When
 * `backbone` is given, phase 1 is skipped and that network is reused. */
DRA_API dra_status dra_train(const char* config_json, const dra_dataset* data, uint64_t seed,
                             const dra_model* backbone, dra_progress_fn progress, void* user,
                             dra_result** out);
/* which: 0 for the plain backbone, 1 for the DRA network. */
DRA_API dra_status dra_result_report(const dra_result* result, int which, char** json_out);
DRA_API dra_status dra_result_metrics_csv(const dra_result* result, char** csv_out);
DRA_API dra_status dra_result_model(const dra_result* result, int which, dra_model** out);
DRA_API void dra_result_free(dra_result* result);

/* Checkpoints ("DRA1" files). metadata_json may be NULL. */
DRA_API dra_status dra_model_load(const char* path, dra_model** out);
DRA_API dra_status dra_model_save(const dra_model* model, const char* metadata_json,
                                  const char* path);
/* Architecture, metadata and parameter counts. */
DRA_API dra_status dra_model_info(const dra_model* model, char** json_out);
DRA_API void dra_model_free(dra_model* model);

/* Test-split report; DRA_ERR_MISMATCH when label space or resolution differ. */
DRA_API dra_status dra_evaluate(const dra_model* model, const dra_dataset* data,
                                char** report_json);

/* Activation paths of the test split. options_json keys: "balanced"
 * (bool), "per_domain" (int), "seed" (int), "components" (int),
 * "group_by" ("domain" or "class"), "query" (sample id), "neighbors" (int).
 * Any output pointer may be NULL. */
DRA_API dra_status dra_analyze(const dra_model* model, const dra_dataset* data,
                               const char* options_json, char** paths_csv, char** pca_csv,
                               char** pca_svg, char** summary_json);

/* Gradient checks and invariant suite; *passed is 1 when every check passed. */
DRA_API dra_status dra_self_check(char** report_json, int* passed);

#ifdef __cplusplus
}
#endif

#endif /* DRA_DRA_H */
