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


// Command-line front end over the C API.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dra/dra.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kMismatch = 4 };

class CommandError : public std::runtime_error {
 public:
  CommandError(int code, const std::string& message) : std::runtime_error(message), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

int exit_code(dra_status s) {
  switch (s) {
    case DRA_OK: return kOk;
    case DRA_ERR_CONFIG: return kConfig;
    case DRA_ERR_NUMERIC: return kNumeric;
    case DRA_ERR_MISMATCH: return kMismatch;
    default: return kFailure;
  }
}

void check(dra_status s, const std::string& what) {
  if (s != DRA_OK) {
    throw CommandError(exit_code(s), what + ": " + dra_status_name(s) + " error: " + dra_last_error());
  }
}

struct StringDeleter {
  void operator()(char* p) const { dra_string_free(p); }
};
struct DatasetDeleter {
  void operator()(dra_dataset* p) const { dra_dataset_free(p); }
};
struct ModelDeleter {
  void operator()(dra_model* p) const { dra_model_free(p); }
};
struct ResultDeleter {
  void operator()(dra_result* p) const { dra_result_free(p); }
};
using Dataset = std::unique_ptr<dra_dataset, DatasetDeleter>;
using Model = std::unique_ptr<dra_model, ModelDeleter>;
using Result = std::unique_ptr<dra_result, ResultDeleter>;

std::string take(char* s) {
  std::unique_ptr<char, StringDeleter> owned(s);
  return owned ? std::string(owned.get()) : std::string();
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CommandError(kConfig, "cannot read '" + path + "'");
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw CommandError(kFailure, "cannot write '" + path.string() + "'");
}

json parse_config(const std::string& text, const std::string& where) {
  try {
    return text.empty() ? json::object() : json::parse(text);
  } catch (const json::exception& e) {
    throw CommandError(kConfig, where + " is not valid JSON: " + e.what());
  }
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Wall-clock notes go to the log only, so every other output stays
// byte-identical across reruns.
class Log {
 public:
  explicit Log(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path, std::ios::app);
  }
  void line(const std::string& text) {
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%S", std::localtime(&now));
    out_ << stamp << " " << text << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct Progress {
  Log* log = nullptr;
  std::string label;
  bool quiet = false;
};

void on_epoch(const char* epoch_json, void* user) {
  auto* p = static_cast<Progress*>(user);
  const json e = json::parse(epoch_json);
  char line[256];
  std::snprintf(line, sizeof line, "%s phase %d epoch %3d lr %.4g loss %.4f weighted %.4f min %.4f",
                p->label.c_str(), e["phase"].get<int>(), e["epoch"].get<int>(),
                e["lr"].get<double>(), e["train_loss"].get<double>(),
                e["test"]["weighted_accuracy"].get<double>(),
                e["test"]["min_domain_accuracy"].get<double>());
  if (p->log != nullptr) p->log->line(line);
  if (!p->quiet) std::fprintf(stderr, "%s\n", line);
}

Dataset load_or_generate(const json& config) {
  dra_dataset* raw = nullptr;
  if (config.contains("dataset_path")) {
    check(dra_dataset_load(config["dataset_path"].get<std::string>().c_str(), &raw), "dataset");
  } else {
    const std::string spec = config.value("dataset", json::object()).dump();
    check(dra_dataset_generate(spec.c_str(), &raw), "dataset");
  }
  return Dataset(raw);
}

std::uint64_t digest(const dra_dataset* data) {
  std::uint64_t d = 0;
  check(dra_dataset_digest(data, &d), "dataset digest");
  return d;
}

json resolve(const json& config) {
  char* out = nullptr;
  check(dra_config_resolve(config.dump().c_str(), &out), "config");
  return json::parse(take(out));
}

struct SeedRun {
  Result result;
  json baseline;  // null in joint mode
  json dra;
};

SeedRun run_seed(const json& config, const dra_dataset* data, std::uint64_t seed,
                 const dra_model* backbone, Progress& progress) {
  dra_result* raw = nullptr;
  check(dra_train(config.dump().c_str(), data, seed, backbone, on_epoch, &progress, &raw),
        "train (seed " + std::to_string(seed) + ")");
  SeedRun r{Result(raw), nullptr, nullptr};
  char* text = nullptr;
  if (!config.value("learn_theta", false)) {
    check(dra_result_report(raw, 0, &text), "baseline report");
    r.baseline = json::parse(take(text));
  }
  check(dra_result_report(raw, 1, &text), "report");
  r.dra = json::parse(take(text));
  return r;
}

Model result_model(const dra_result* result, int which) {
  dra_model* raw = nullptr;
  check(dra_result_model(result, which, &raw), "model");
  return Model(raw);
}

void save_model(const dra_model* model, const json& metadata, const fs::path& path) {
  fs::create_directories(path.parent_path());
  check(dra_model_save(model, metadata.dump().c_str(), path.string().c_str()), "checkpoint");
}

// Writes checkpoints, metrics and report for one seed into `dir`.
void write_seed(const SeedRun& run, const json& config, std::uint64_t seed,
                const std::string& dataset_digest, const fs::path& dir) {
  const json meta = {{"seed", seed}, {"dataset_digest", dataset_digest}};
  if (!run.baseline.is_null()) {
    save_model(result_model(run.result.get(), 0).get(), meta, dir / "backbone.dra");
  }
  save_model(result_model(run.result.get(), 1).get(), meta, dir / "model.dra");
  char* csv = nullptr;
  check(dra_result_metrics_csv(run.result.get(), &csv), "metrics");
  write_text(dir / "metrics.csv", take(csv));
  json report = {{"seed", seed}, {"dataset_digest", dataset_digest}, {"config", config},
                 {"baseline", run.baseline}, {"dra", run.dra}};
  write_text(dir / "report.json", report.dump(2) + "\n");
}

json mean_report(const std::vector<json>& reports) {
  if (reports.empty() || reports.front().is_null()) return nullptr;
  json out = reports.front();
  for (const char* key : {"weighted_accuracy", "unweighted_accuracy", "min_domain_accuracy",
                          "overall_accuracy"}) {
    double s = 0.0;
    for (const auto& r : reports) s += r[key].get<double>();
    out[key] = s / reports.size();
  }
  for (const char* key : {"domain_accuracy", "layer_purity"}) {
    if (!out.contains(key)) continue;
    for (std::size_t i = 0; i < out[key].size(); ++i) {
      double s = 0.0;
      for (const auto& r : reports) s += r[key][i].get<double>();
      out[key][i] = s / reports.size();
    }
  }
  return out;
}

std::vector<std::uint64_t> seeds_of(const json& config, const std::optional<std::uint64_t>& seed) {
  if (seed) return {*seed};
  return config.at("seeds").get<std::vector<std::uint64_t>>();
}

std::string table_row(const std::string& name, const json& r, int domains) {
  std::string row = name + "," + fixed(r["weighted_accuracy"].get<double>()) + "," +
                    fixed(r["unweighted_accuracy"].get<double>()) + "," +
                    fixed(r["min_domain_accuracy"].get<double>());
  for (int d = 0; d < domains; ++d) row += "," + fixed(r["domain_accuracy"][d].get<double>());
  return row + "\n";
}

std::string table_header(const std::string& first, int domains) {
  std::string h = first + ",weighted_acc,unweighted_acc,min_domain_acc";
  for (int d = 0; d < domains; ++d) h += ",acc_d" + std::to_string(d);
  return h + "\n";
}

struct TrainOptions {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string ablate;
  std::string sweep;
  bool quiet = false;
};

int cmd_train(const TrainOptions& opt) {
  json config = resolve(parse_config(opt.config_path.empty() ? "" : read_text(opt.config_path),
                                     "config"));
  if (!opt.out.empty()) config["output_dir"] = opt.out;
  const fs::path out = config["output_dir"].get<std::string>();
  const auto seeds = seeds_of(config, opt.seed);

  std::vector<double> sweep_values;
  if (!opt.sweep.empty()) {
    const auto eq = opt.sweep.find('=');
    if (eq == std::string::npos || opt.sweep.substr(0, eq) != "eta") {
      throw CommandError(kConfig, "--sweep expects eta=v1,v2,...");
    }
    std::stringstream list(opt.sweep.substr(eq + 1));
    std::string item;
    while (std::getline(list, item, ',')) {
      try {
        std::size_t used = 0;
        sweep_values.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw CommandError(kConfig, "--sweep: '" + item + "' is not a number");
      }
    }
    if (sweep_values.empty()) throw CommandError(kConfig, "--sweep: no values given");
  }
  if (!opt.ablate.empty() && opt.ablate != "table5") {
    throw CommandError(kConfig, "--ablate supports only 'table5'");
  }

  Dataset data = load_or_generate(config);
  const std::string data_digest = hex(digest(data.get()));
  write_text(out / "config.json", config.dump(2) + "\n");
  Log log(out / "train.log");
  log.line("dataset digest " + data_digest + ", seeds " + json(seeds).dump());
  const int domains = [&] {
    char* info = nullptr;
    check(dra_dataset_info(data.get(), &info), "dataset info");
    return json::parse(take(info))["spec"]["domains"].get<int>();
  }();

  if (!opt.ablate.empty() || !sweep_values.empty()) {
    // Named variants of the base config.
    std::vector<std::pair<std::string, json>> rows;
    std::string table_name;
    if (!opt.ablate.empty()) {
      char* text = nullptr;
      check(dra_ablation_configs(config.dump().c_str(), &text), "ablation");
      for (const auto& r : json::parse(take(text))) rows.emplace_back(r["name"], r["config"]);
      table_name = "ablation";
    } else {
      for (double eta : sweep_values) {
        json c = config;
        c["style"]["eta"] = eta;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", eta);
        rows.emplace_back(buf, resolve(c));
      }
      table_name = "sweep_eta";
    }
    std::map<std::string, std::vector<json>> reports;
    std::vector<json> baselines;
    for (std::uint64_t seed : seeds) {
      Model backbone;
      for (const auto& [name, row] : rows) {
        Progress progress{&log, name + " seed " + std::to_string(seed), opt.quiet};
        Stopwatch watch;
        const bool joint = row.value("learn_theta", false);
        SeedRun run = run_seed(row, data.get(), seed, joint ? nullptr : backbone.get(), progress);
        log.line(progress.label + " finished in " + fixed(watch.seconds()) + " s");
        if (!joint && !backbone) {
          backbone = result_model(run.result.get(), 0);
          baselines.push_back(run.baseline);
        }
        write_seed(run, row, seed, data_digest,
                   out / table_name / name / ("seed_" + std::to_string(seed)));
        reports[name].push_back(run.dra);
      }
    }
    std::string table = table_header(opt.ablate.empty() ? "eta" : "config", domains);
    json summary = {{"dataset_digest", data_digest}, {"seeds", seeds}, {"rows", json::array()}};
    if (!baselines.empty()) {
      table += table_row("plain", mean_report(baselines), domains);
      summary["plain"] = mean_report(baselines);
    }
    for (const auto& [name, row] : rows) {
      const json mean = mean_report(reports[name]);
      table += table_row(name, mean, domains);
      summary["rows"].push_back({{"name", name}, {"config", row}, {"mean", mean}});
    }
    write_text(out / (table_name + ".csv"), table);
    write_text(out / (table_name + ".json"), summary.dump(2) + "\n");
    std::cout << table;
    return kOk;
  }

  std::vector<json> baselines, dras;
  for (std::uint64_t seed : seeds) {
    Progress progress{&log, "seed " + std::to_string(seed), opt.quiet};
    Stopwatch watch;
    SeedRun run = run_seed(config, data.get(), seed, nullptr, progress);
    log.line(progress.label + " finished in " + fixed(watch.seconds()) + " s");
    const fs::path dir = seeds.size() == 1 ? out : out / ("seed_" + std::to_string(seed));
    write_seed(run, config, seed, data_digest, dir);
    baselines.push_back(run.baseline);
    dras.push_back(run.dra);
  }
  const json base = mean_report(baselines), dra = mean_report(dras);
  if (seeds.size() > 1) {
    write_text(out / "report.json", json{{"dataset_digest", data_digest},
                                         {"seeds", seeds},
                                         {"config", config},
                                         {"baseline", base},
                                         {"dra", dra}}.dump(2) +
                                        "\n");
  }
  std::string table = table_header("model", domains);
  if (!base.is_null()) table += table_row("plain", base, domains);
  table += table_row("dra", dra, domains);
  std::cout << table;
  return kOk;
}

int cmd_gen(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed) {
  json spec = parse_config(config_path.empty() ? "" : read_text(config_path), "dataset spec");
  if (spec.contains("dataset")) spec = spec["dataset"];
  if (seed) spec["seed"] = *seed;
  dra_dataset* raw = nullptr;
  check(dra_dataset_generate(spec.dump().c_str(), &raw), "dataset spec");
  Dataset data(raw);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  check(dra_dataset_save(data.get(), out.c_str()), "write dataset");
  char* info = nullptr;
  check(dra_dataset_info(data.get(), &info), "dataset info");
  json j = json::parse(take(info));
  j["digest"] = hex(digest(data.get()));
  j["bytes"] = fs::file_size(out);
  std::cout << j.dump(2) << "\n";
  return kOk;
}

std::pair<Model, Dataset> load_pair(const std::string& checkpoint, const std::string& dataset) {
  dra_model* m = nullptr;
  check(dra_model_load(checkpoint.c_str(), &m), "checkpoint");
  Model model(m);
  dra_dataset* d = nullptr;
  check(dra_dataset_load(dataset.c_str(), &d), "dataset");
  return {std::move(model), Dataset(d)};
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, const std::string& out) {
  auto [model, data] = load_pair(checkpoint, dataset);
  char* text = nullptr;
  check(dra_evaluate(model.get(), data.get(), &text), "evaluate");
  const std::string report = take(text) + "\n";
  if (!out.empty()) write_text(out, report);
  std::cout << report;
  return kOk;
}

int cmd_analyze(const std::string& checkpoint, const std::string& dataset,
                const std::string& config_path, const std::string& out) {
  const json options = parse_config(config_path.empty() ? "" : read_text(config_path), "options");
  auto [model, data] = load_pair(checkpoint, dataset);
  char *paths = nullptr, *pca = nullptr, *svg = nullptr, *summary = nullptr;
  check(dra_analyze(model.get(), data.get(), options.dump().c_str(), &paths, &pca, &svg, &summary),
        "analyze");
  const fs::path dir = out.empty() ? fs::path("analysis") : fs::path(out);
  write_text(dir / "paths.csv", take(paths));
  write_text(dir / "pca.csv", take(pca));
  write_text(dir / "pca.svg", take(svg));
  const std::string s = take(summary) + "\n";
  write_text(dir / "summary.json", s);
  std::cout << s;
  return kOk;
}

int cmd_check(const std::string& out) {
  char* text = nullptr;
  int passed = 0;
  check(dra_self_check(&text, &passed), "self check");
  const json report = json::parse(take(text));
  if (!out.empty()) write_text(out, report.dump(2) + "\n");
  for (const auto& g : report["groups"]) {
    for (const auto& c : g["checks"]) {
      std::cout << (c["passed"].get<bool>() ? "PASS " : "FAIL ") << g["name"].get<std::string>()
                << ": " << c["name"].get<std::string>() << " (" << c["detail"].get<std::string>()
                << ")\n";
    }
  }
  std::cout << (passed ? "all checks passed" : "some checks FAILED") << "\n";
  return passed ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic residual adapters for latent domain learning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dra_version()));

  std::string config, out, checkpoint, dataset;
  std::optional<std::uint64_t> seed;
  TrainOptions train;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic latent-domain dataset (LDD1)");
  gen->add_option("--config", config, "Dataset spec JSON (defaults when omitted)");
  gen->add_option("--out", out, "Output dataset file")->required();
  gen->add_option("--seed", seed, "Override the generation seed");

  auto* tr = app.add_subcommand("train", "Train the plain backbone and the DRA network");
  tr->add_option("--config", train.config_path, "Run config JSON (defaults when omitted)");
  tr->add_option("--out", train.out, "Output directory (overrides output_dir)");
  tr->add_option("--seed", train.seed, "Train a single seed instead of the config's list");
  tr->add_option("--ablate", train.ablate, "Run an ablation table: table5");
  tr->add_option("--sweep", train.sweep, "Sweep a parameter, e.g. eta=0,0.025,0.05");
  tr->add_flag("--quiet", train.quiet, "Only log progress to train.log");
  tr->get_option("--ablate")->excludes(tr->get_option("--sweep"));

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset's test split");
  ev->add_option("checkpoint", checkpoint, "Checkpoint (DRA1)")->required();
  ev->add_option("dataset", dataset, "Dataset (LDD1)")->required();
  ev->add_option("--out", out, "Write the report JSON here as well");

  auto* an = app.add_subcommand("analyze", "Activation paths, PCA and gate profiles");
  an->add_option("checkpoint", checkpoint, "Checkpoint (DRA1)")->required();
  an->add_option("dataset", dataset, "Dataset (LDD1)")->required();
  an->add_option("--config", config, "Analysis options JSON");
  an->add_option("--out", out, "Output directory (default: analysis)");

  auto* ck = app.add_subcommand("check", "Run gradient checks and the invariant suite");
  ck->add_option("--out", out, "Write the report JSON here as well");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(config, out, seed);
    if (tr->parsed()) return cmd_train(train);
    if (ev->parsed()) return cmd_eval(checkpoint, dataset, out);
    if (an->parsed()) return cmd_analyze(checkpoint, dataset, config, out);
    if (ck->parsed()) return cmd_check(out);
  } catch (const CommandError& e) {
    std::cerr << "dra: " << e.what() << "\n";
    return e.code();
  } catch (const std::exception& e) {
    std::cerr << "dra: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
