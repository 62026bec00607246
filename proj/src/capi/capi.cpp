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


#include "dra/dra.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include "dra/analysis.hpp"
#include "dra/datagen.hpp"
#include "dra/error.hpp"
#include "dra/layers.hpp"
#include "dra/selfcheck.hpp"
#include "dra/training.hpp"

struct dra_dataset {
  dra::LatentDomainDataset data;
};

struct dra_model {
  dra::Network network;
  nlohmann::json metadata = nlohmann::json::object();
};

struct dra_result {
  dra::TrainResult result;
  int domains = 0;
  int layers = 0;
};

namespace {

thread_local std::string last_error;

dra_status fail(dra_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <typename Fn>
dra_status guarded(Fn&& fn) {
  try {
    last_error.clear();
    fn();
    return DRA_OK;
  } catch (const dra::Error& e) {
    return fail(static_cast<dra_status>(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(DRA_ERR_CONFIG, std::string("invalid JSON: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(DRA_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(DRA_ERR_INTERNAL, e.what());
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw dra::ContractError(std::string(what) + " must not be NULL");
}

nlohmann::json parse_json(const char* text, const char* what) {
  if (text == nullptr || *text == '\0') return nlohmann::json::object();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw dra::ConfigError(std::string(what) + " is not valid JSON: " + e.what());
  }
}

nlohmann::json epoch_json(const dra::EpochRecord& e) {
  return {{"phase", e.phase},
          {"epoch", e.epoch},
          {"lr", e.lr},
          {"train_loss", e.train_loss},
          {"test", e.test.to_json()}};
}

dra::RunConfig resolve_for(nlohmann::json j, const dra::LatentDomainDataset& data) {
  if (!j.is_object()) throw dra::ConfigError("config must be a JSON object");
  const bool from_file = j.contains("dataset_path") && !j.at("dataset_path").get<std::string>().empty();
  if (from_file || !j.contains("dataset")) j["dataset"] = data.spec().to_json();
  dra::RunConfig cfg = dra::RunConfig::from_json(j);
  if (cfg.dataset.to_json() != data.spec().to_json()) {
    throw dra::MismatchError("config dataset spec differs from the supplied dataset");
  }
  return cfg;
}

}  // namespace

extern "C" {

void dra_string_free(char* s) { std::free(s); }

const char* dra_version(void) { return "1.0.0"; }

const char* dra_status_name(dra_status status) {
  return dra::error_code_name(static_cast<dra::ErrorCode>(status));
}

const char* dra_last_error(void) { return last_error.c_str(); }

dra_status dra_dataset_generate(const char* spec_json, dra_dataset** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    const auto spec = dra::DatasetSpec::from_json(parse_json(spec_json, "dataset spec"));
    *out = new dra_dataset{dra::generate_dataset(spec)};
  });
}

dra_status dra_dataset_load(const char* path, dra_dataset** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    *out = new dra_dataset{dra::load_dataset(path)};
  });
}

dra_status dra_dataset_save(const dra_dataset* data, const char* path) {
  return guarded([&] {
    require(data, "data");
    require(path, "path");
    dra::save_dataset(data->data, path);
  });
}

dra_status dra_dataset_info(const dra_dataset* data, char** json_out) {
  return guarded([&] {
    require(data, "data");
    require(json_out, "json_out");
    const auto& d = data->data;
    const auto tags = d.domain_tags(dra::TagCapability::evaluation());
    std::vector<int> per_domain(static_cast<std::size_t>(d.spec().domains), 0);
    std::vector<int> per_class(static_cast<std::size_t>(d.spec().num_classes()), 0);
    for (int i = 0; i < d.size(); ++i) {
      ++per_domain[static_cast<std::size_t>(tags[static_cast<std::size_t>(i)])];
      ++per_class[static_cast<std::size_t>(d.labels()[static_cast<std::size_t>(i)])];
    }
    const nlohmann::json j = {{"spec", d.spec().to_json()},
                              {"samples", d.size()},
                              {"train", d.train_indices().size()},
                              {"test", d.test_indices().size()},
                              {"domain_counts", per_domain},
                              {"class_counts", per_class}};
    *json_out = copy_string(j.dump(2));
  });
}

dra_status dra_dataset_digest(const dra_dataset* data, uint64_t* out) {
  return guarded([&] {
    require(data, "data");
    require(out, "out");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : dra::serialize_dataset(data->data)) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
    *out = h;
  });
}

void dra_dataset_free(dra_dataset* data) { delete data; }

dra_status dra_config_resolve(const char* config_json, char** resolved_json) {
  return guarded([&] {
    require(resolved_json, "resolved_json");
    const auto cfg = dra::RunConfig::from_json(parse_json(config_json, "config"));
    *resolved_json = copy_string(cfg.to_json().dump(2));
  });
}

dra_status dra_ablation_configs(const char* config_json, char** rows_json) {
  return guarded([&] {
    require(rows_json, "rows_json");
    const auto base = dra::RunConfig::from_json(parse_json(config_json, "config"));
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : dra::table5_configs(base)) {
      rows.push_back({{"name", row.name}, {"config", row.config.to_json()}});
    }
    *rows_json = copy_string(rows.dump(2));
  });
}

dra_status dra_train(const char* config_json, const dra_dataset* data, uint64_t seed,
                     const dra_model* backbone, dra_progress_fn progress, void* user,
                     dra_result** out) {
  return guarded([&] {
    require(data, "data");
    require(out, "out");
    *out = nullptr;
    const dra::RunConfig cfg = resolve_for(parse_json(config_json, "config"), data->data);
    dra::ProgressFn cb;
    if (progress != nullptr) {
      cb = [&](const dra::EpochRecord& e) { progress(epoch_json(e).dump().c_str(), user); };
    }
    auto r = std::make_unique<dra_result>();
    r->domains = data->data.spec().domains;
    r->layers = cfg.architecture.layers();
    if (backbone != nullptr && !cfg.learn_theta) {
      if (!backbone->network.spec().plain()) {
        throw dra::MismatchError("backbone checkpoint must be a plain network (K=0)");
      }
      r->result.baseline.network = backbone->network;
      r->result.baseline.report = dra::evaluate(backbone->network, data->data);
      r->result.dra = dra::train_adapters(cfg, data->data, seed, &backbone->network, cb);
    } else {
      r->result = dra::train(cfg, data->data, seed, cb);
    }
    *out = r.release();
  });
}

dra_status dra_result_report(const dra_result* result, int which, char** json_out) {
  return guarded([&] {
    require(result, "result");
    require(json_out, "json_out");
    if (which != 0 && which != 1) throw dra::ContractError("which must be 0 or 1");
    const auto& phase = which == 0 ? result->result.baseline : result->result.dra;
    if (!phase.network.spec().plain() && which == 0) {
      throw dra::ContractError("no plain baseline in this result");
    }
    if (phase.network.parameters().empty()) {
      throw dra::ContractError("no baseline network in this result (joint training)");
    }
    *json_out = copy_string(phase.report.to_json().dump(2));
  });
}

dra_status dra_result_metrics_csv(const dra_result* result, char** csv_out) {
  return guarded([&] {
    require(result, "result");
    require(csv_out, "csv_out");
    std::vector<dra::EpochRecord> all = result->result.baseline.history;
    all.insert(all.end(), result->result.dra.history.begin(), result->result.dra.history.end());
    *csv_out = copy_string(dra::metrics_csv(all, result->domains, result->layers));
  });
}

dra_status dra_result_model(const dra_result* result, int which, dra_model** out) {
  return guarded([&] {
    require(result, "result");
    require(out, "out");
    *out = nullptr;
    if (which != 0 && which != 1) throw dra::ContractError("which must be 0 or 1");
    const auto& net = which == 0 ? result->result.baseline.network : result->result.dra.network;
    if (net.parameters().empty()) {
      throw dra::ContractError("no baseline network in this result (joint training)");
    }
    *out = new dra_model{net, nlohmann::json::object()};
  });
}

void dra_result_free(dra_result* result) { delete result; }

dra_status dra_model_load(const char* path, dra_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    dra::Checkpoint ck = dra::load_checkpoint(path);
    *out = new dra_model{std::move(ck.network), std::move(ck.metadata)};
  });
}

dra_status dra_model_save(const dra_model* model, const char* metadata_json, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    dra::save_checkpoint(model->network, parse_json(metadata_json, "metadata"), path);
  });
}

dra_status dra_model_info(const dra_model* model, char** json_out) {
  return guarded([&] {
    require(model, "model");
    require(json_out, "json_out");
    const auto& net = model->network;
    nlohmann::json j = {{"architecture", net.spec().to_json()},
                        {"metadata", model->metadata},
                        {"parameters", dra::count_parameters(net, false)},
                        {"learnable_parameters", dra::count_parameters(net, true)}};
    if (!net.spec().plain()) j["adapter_formula"] = dra::adapter_parameter_formula(net.spec());
    *json_out = copy_string(j.dump(2));
  });
}

void dra_model_free(dra_model* model) { delete model; }

dra_status dra_evaluate(const dra_model* model, const dra_dataset* data, char** report_json) {
  return guarded([&] {
    require(model, "model");
    require(data, "data");
    require(report_json, "report_json");
    *report_json = copy_string(dra::evaluate(model->network, data->data).to_json().dump(2));
  });
}

dra_status dra_analyze(const dra_model* model, const dra_dataset* data, const char* options_json,
                       char** paths_csv, char** pca_csv, char** pca_svg, char** summary_json) {
  return guarded([&] {
    require(model, "model");
    require(data, "data");
    const nlohmann::json opt = parse_json(options_json, "options");
    if (!opt.is_object()) throw dra::ConfigError("options must be a JSON object");
    for (const auto& [key, unused] : opt.items()) {
      static const char* known[] = {"balanced", "per_domain", "seed", "components",
                                    "group_by", "query",      "neighbors"};
      if (std::find_if(std::begin(known), std::end(known),
                       [&](const char* k) { return key == k; }) == std::end(known)) {
        throw dra::ConfigError("options: unknown key '" + key + "'");
      }
    }
    const auto tags = dra::TagCapability::evaluation();
    const auto& d = data->data;
    std::vector<int> indices = d.test_indices();
    if (opt.value("balanced", false)) {
      indices = dra::balanced_indices(d, indices, opt.value("per_domain", 0),
                                      opt.value("seed", std::uint64_t{1}), tags);
    }
    const auto records = dra::extract_paths(model->network, d, indices, tags);
    if (records.size() < 2) throw dra::ContractError("analysis needs at least two samples");
    const int dims = records.front().experts * records.front().layers;
    const int components =
        std::min({opt.value("components", 2), dims, static_cast<int>(records.size())});
    std::vector<std::vector<double>> flat;
    flat.reserve(records.size());
    for (const auto& r : records) flat.push_back(r.flatten());
    const dra::PCAResult p = dra::pca(flat, components);
    const dra::GroupBy group = dra::parse_group_by(opt.value("group_by", std::string("domain")));
    const dra::GateProfile prof = dra::per_layer_gate_profile(records, group);

    if (paths_csv != nullptr) *paths_csv = copy_string(dra::paths_csv(records));
    if (pca_csv != nullptr) *pca_csv = copy_string(dra::pca_csv(records, p));
    if (pca_svg != nullptr) *pca_svg = copy_string(dra::pca_svg(records, p));
    if (summary_json != nullptr) {
      const int k = records.front().experts, layers = records.front().layers;
      std::vector<double> layer_purity;
      for (int l = 0; l < layers; ++l) {
        std::vector<double> rows;
        rows.reserve(records.size() * k);
        for (const auto& r : records)
          for (int e = 0; e < k; ++e) rows.push_back(r.at(e, l));
        layer_purity.push_back(dra::purity(rows, k));
      }
      nlohmann::json groups = nlohmann::json::array();
      for (int g = 0; g < prof.groups; ++g) {
        nlohmann::json per_layer = nlohmann::json::array();
        for (int l = 0; l < layers; ++l) {
          std::vector<double> mean;
          for (int e = 0; e < k; ++e) mean.push_back(prof.at(g, l, e));
          per_layer.push_back(mean);
        }
        std::vector<bool> flat_layers;
        for (int l = 0; l < layers; ++l)
          flat_layers.push_back(prof.uniform[static_cast<std::size_t>(g) * layers + l]);
        groups.push_back({{"group", g},
                          {"count", prof.counts[g]},
                          {"mean_gate", per_layer},
                          {"uniform", flat_layers}});
      }
      std::vector<bool> layer_uniform(prof.layer_uniform.begin(), prof.layer_uniform.end());
      std::vector<bool> degenerate(p.degenerate.begin(), p.degenerate.end());
      nlohmann::json s = {{"samples", records.size()},
                          {"experts", k},
                          {"layers", layers},
                          {"layer_purity", layer_purity},
                          {"pca",
                           {{"eigenvalues", p.eigenvalues},
                            {"explained_ratio", p.explained_ratio},
                            {"degenerate", degenerate}}},
                          {"profile",
                           {{"group_by", dra::group_by_name(group)},
                            {"groups", groups},
                            {"layer_uniform", layer_uniform}}}};
      if (opt.contains("query")) {
        const auto hits = dra::path_distance_neighbors(records, opt.at("query").get<std::int64_t>(),
                                                       opt.value("neighbors", 5));
        nlohmann::json list = nlohmann::json::array();
        for (const auto& h : hits) list.push_back({{"sample_id", h.sample_id}, {"distance", h.distance}});
        s["neighbors"] = {{"query", opt.at("query")}, {"nearest", list}};
      }
      *summary_json = copy_string(s.dump(2));
    }
  });
}

dra_status dra_self_check(char** report_json, int* passed) {
  return guarded([&] {
    require(report_json, "report_json");
    const auto groups = dra::run_self_check();
    nlohmann::json list = nlohmann::json::array();
    bool ok = true;
    for (const auto& g : groups) {
      list.push_back(g.to_json());
      ok = ok && g.passed();
    }
    *report_json = copy_string(nlohmann::json{{"passed", ok}, {"groups", list}}.dump(2));
    if (passed != nullptr) *passed = ok ? 1 : 0;
  });
}

}  // extern "C"
