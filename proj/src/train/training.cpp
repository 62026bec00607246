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


#include "dra/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "../common/json_util.hpp"
#include "dra/analysis.hpp"
#include "dra/error.hpp"
#include "dra/rng.hpp"

namespace dra {

Schedule Schedule::paper() {
  Schedule s;
  s.decay_epochs = {80, 100};
  s.epochs = 120;
  s.batch_size = 128;
  return s;
}

void Schedule::validate() const {
  if (epochs < 1) throw ConfigError("schedule: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("schedule: batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("schedule: base_lr must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw ConfigError("schedule: decay_factor must lie in (0, 1]");
  }
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] <= 0 || decay_epochs[i] >= epochs ||
        (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])) {
      throw ConfigError("schedule: decay epochs must be strictly increasing and inside (0, " +
                        std::to_string(epochs) + ")");
    }
  }
}

nlohmann::json Schedule::to_json() const {
  return {{"base_lr", base_lr},
          {"decay_epochs", decay_epochs},
          {"decay_factor", decay_factor},
          {"epochs", epochs},
          {"batch_size", batch_size}};
}

Schedule Schedule::from_json(const nlohmann::json& j) {
  jsonutil::reject_unknown(j, {"preset", "base_lr", "decay_epochs", "decay_factor", "epochs",
                               "batch_size"},
                           "schedule");
  Schedule s;
  try {
    if (j.contains("preset")) {
      const std::string preset = j.at("preset").get<std::string>();
      if (preset == "paper") {
        s = paper();
      } else if (preset != "desk") {
        throw ConfigError("schedule: unknown preset '" + preset + "' (expected desk or paper)");
      }
    }
    s.base_lr = j.value("base_lr", s.base_lr);
    s.decay_epochs = j.value("decay_epochs", s.decay_epochs);
    s.decay_factor = j.value("decay_factor", s.decay_factor);
    s.epochs = j.value("epochs", s.epochs);
    s.batch_size = j.value("batch_size", s.batch_size);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  return s;
}

double lr_at(int epoch, const Schedule& schedule) {
  if (epoch < 0 || epoch >= schedule.epochs) {
    throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(schedule.epochs) + ")");
  }
  double lr = schedule.base_lr;
  for (int d : schedule.decay_epochs) {
    if (epoch >= d) lr *= schedule.decay_factor;
  }
  return lr;
}

void sgd_step(const std::vector<ag::Tensor<float>>& params, OptimizerState& state) {
  if (state.velocity.size() < params.size()) state.velocity.resize(params.size());
  for (const auto& p : params) {
    if (!p.requires_grad() || !p.has_grad()) continue;
    for (float g : p.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("sgd: non-finite gradient in '" + p.name() + "'");
      }
    }
  }
  const auto m = static_cast<float>(state.momentum);
  const auto wd = static_cast<float>(state.weight_decay);
  const auto lr = static_cast<float>(state.lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ag::Tensor<float> p = params[i];
    if (!p.requires_grad()) continue;
    std::vector<float>& v = state.velocity[i];
    if (v.empty()) v.assign(p.numel(), 0.0f);
    auto w = p.values();
    auto g = p.grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = m * v[j] + g[j] + wd * w[j];
      w[j] -= lr * v[j];
    }
    p.zero_grad();
  }
}

// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  if (dataset_path.empty()) dataset.validate();
  architecture.validate();
  style.validate();
  schedule.validate();
  if (architecture.experts < 1) throw ConfigError("config: K (experts) must be >= 1");
  if (dataset_path.empty()) {
    if (architecture.num_classes != dataset.num_classes()) {
      throw ConfigError("config: architecture has " + std::to_string(architecture.num_classes) +
                        " classes, dataset label space has " +
                        std::to_string(dataset.num_classes()));
    }
    if (architecture.image_size != dataset.image_size) {
      throw ConfigError("config: architecture image_size differs from the dataset");
    }
    if (architecture.gate.mode == GateMode::kFixed && architecture.experts != dataset.domains) {
      throw ConfigError("config: fixed gates need K == D, got K=" +
                        std::to_string(architecture.experts) + " and D=" +
                        std::to_string(dataset.domains));
    }
  }
  if (!(mixup_alpha > 0.0)) throw ConfigError("config: mixup_alpha must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("config: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("config: weight_decay must be >= 0");
  if (seeds.empty()) throw ConfigError("config: at least one seed is required");
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = {
      {"architecture", architecture.to_json()},
      {"style",
       {{"eta", style.eta}, {"scope", moment_scope_name(style.scope)}, {"epsilon", style.epsilon}}},
      {"learn_theta", learn_theta},
      {"mixup", mixup},
      {"mixup_alpha", mixup_alpha},
      {"schedule", schedule.to_json()},
      {"optimizer", {{"momentum", momentum}, {"weight_decay", weight_decay}}},
      {"seeds", seeds},
      {"output_dir", output_dir}};
  if (dataset_path.empty()) {
    j["dataset"] = dataset.to_json();
  } else {
    j["dataset_path"] = dataset_path;
  }
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  jsonutil::reject_unknown(j,
                           {"dataset", "dataset_path", "architecture", "style", "learn_theta",
                            "mixup", "mixup_alpha", "schedule", "optimizer", "seeds",
                            "output_dir"},
                           "config");
  RunConfig c;
  try {
    if (j.contains("dataset")) c.dataset = DatasetSpec::from_json(j.at("dataset"));
    c.dataset_path = j.value("dataset_path", c.dataset_path);
    if (j.contains("architecture")) {
      nlohmann::json arch = j.at("architecture");
      jsonutil::require_object(arch, "architecture");
      if (!arch.contains("num_classes")) arch["num_classes"] = c.dataset.num_classes();
      if (!arch.contains("image_size")) arch["image_size"] = c.dataset.image_size;
      c.architecture = ArchitectureSpec::from_json(arch);
    } else {
      c.architecture.num_classes = c.dataset.num_classes();
      c.architecture.image_size = c.dataset.image_size;
    }
    if (j.contains("style")) {
      const auto& s = j.at("style");
      jsonutil::reject_unknown(s, {"eta", "scope", "epsilon"}, "style");
      c.style.eta = s.value("eta", c.style.eta);
      if (s.contains("scope")) c.style.scope = parse_moment_scope(s.at("scope").get<std::string>());
      c.style.epsilon = s.value("epsilon", c.style.epsilon);
    }
    c.learn_theta = j.value("learn_theta", c.learn_theta);
    c.mixup = j.value("mixup", c.mixup);
    c.mixup_alpha = j.value("mixup_alpha", c.mixup_alpha);
    if (j.contains("schedule")) c.schedule = Schedule::from_json(j.at("schedule"));
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      jsonutil::reject_unknown(o, {"momentum", "weight_decay"}, "optimizer");
      c.momentum = o.value("momentum", c.momentum);
      c.weight_decay = o.value("weight_decay", c.weight_decay);
    }
    c.seeds = j.value("seeds", c.seeds);
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

nlohmann::json MetricsReport::to_json() const {
  return {{"pi", pi},
          {"domain_counts", domain_counts},
          {"domain_accuracy", domain_accuracy},
          {"weighted_accuracy", weighted_accuracy},
          {"unweighted_accuracy", unweighted_accuracy},
          {"min_domain_accuracy", min_domain_accuracy},
          {"overall_accuracy", overall_accuracy},
          {"layer_purity", layer_purity}};
}

double weighted_accuracy(std::span<const double> accuracy, std::span<const double> pi) {
  if (accuracy.size() != pi.size()) {
    throw DimensionError("weighted_accuracy: " + std::to_string(accuracy.size()) +
                         " accuracies for " + std::to_string(pi.size()) + " shares");
  }
  double total = 0.0;
  for (std::size_t d = 0; d < pi.size(); ++d) total += pi[d] * accuracy[d];
  return total;
}

MetricsReport score_predictions(std::span<const int> predictions, std::span<const int> labels,
                                std::span<const int> domains, std::span<const double> pi) {
  if (predictions.size() != labels.size() || labels.size() != domains.size()) {
    throw DimensionError("score_predictions: predictions, labels and domains differ in length");
  }
  const std::size_t nd = pi.size();
  MetricsReport r;
  r.pi.assign(pi.begin(), pi.end());
  r.domain_counts.assign(nd, 0);
  std::vector<int> correct(nd, 0);
  int total_correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int d = domains[i];
    if (d < 0 || static_cast<std::size_t>(d) >= nd) {
      throw ContractError("score_predictions: domain tag out of range");
    }
    ++r.domain_counts[d];
    const bool hit = predictions[i] == labels[i];
    correct[d] += hit;
    total_correct += hit;
  }
  r.domain_accuracy.resize(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    r.domain_accuracy[d] =
        r.domain_counts[d] > 0 ? static_cast<double>(correct[d]) / r.domain_counts[d] : 0.0;
  }
  r.weighted_accuracy = weighted_accuracy(r.domain_accuracy, pi);
  r.unweighted_accuracy =
      nd == 0 ? 0.0
              : std::accumulate(r.domain_accuracy.begin(), r.domain_accuracy.end(), 0.0) / nd;
  r.min_domain_accuracy =
      nd == 0 ? 0.0 : *std::min_element(r.domain_accuracy.begin(), r.domain_accuracy.end());
  r.overall_accuracy =
      labels.empty() ? 0.0 : static_cast<double>(total_correct) / static_cast<double>(labels.size());
  return r;
}

namespace {

constexpr int kEvalBatch = 128;

// Pixels in [0,1] are fed to the network as [-1,1].
ag::Tensor<float> network_input(const LatentDomainDataset& data, std::span<const int> idx) {
  ag::Tensor<float> x = data.gather(idx);
  for (float& v : x.values()) v = 2.0f * v - 1.0f;
  return x;
}

void check_compatible(const Network& net, const LatentDomainDataset& data) {
  const ArchitectureSpec& a = net.spec();
  if (a.num_classes != data.spec().num_classes() || a.image_size != data.spec().image_size ||
      a.in_channels != data.channels()) {
    throw MismatchError("network expects " + std::to_string(a.num_classes) + " classes at " +
                        std::to_string(a.image_size) + "px, dataset has " +
                        std::to_string(data.spec().num_classes()) + " classes at " +
                        std::to_string(data.spec().image_size) + "px");
  }
  if (a.gate.mode == GateMode::kFixed && !a.plain() && a.experts != data.spec().domains) {
    throw MismatchError("fixed-gate network has K=" + std::to_string(a.experts) +
                        " but the dataset has " + std::to_string(data.spec().domains) +
                        " domains");
  }
}

}  // namespace

Predictions predict(const Network& net, const LatentDomainDataset& data,
                    std::span<const int> indices, const TagCapability* tags) {
  check_compatible(net, data);
  const int n = static_cast<int>(indices.size());
  const int k = net.spec().experts;
  const int layers = net.spec().layers();
  const int classes = net.spec().num_classes;
  Predictions out;
  out.labels.resize(static_cast<std::size_t>(n));
  if (!net.spec().plain()) out.paths.resize(static_cast<std::size_t>(n) * k * layers);
  std::span<const int> all_tags;
  if (tags != nullptr) all_tags = data.domain_tags(*tags);
  for (int b0 = 0; b0 < n; b0 += kEvalBatch) {
    const int bs = std::min(kEvalBatch, n - b0);
    const std::span<const int> idx = indices.subspan(static_cast<std::size_t>(b0), bs);
    std::vector<std::int64_t> ids(idx.begin(), idx.end());
    std::vector<int> batch_tags;
    if (!all_tags.empty()) {
      for (int i : idx) batch_tags.push_back(all_tags[static_cast<std::size_t>(i)]);
    }
    ForwardContext ctx;
    ctx.sample_ids = ids;
    ctx.domain_tags = batch_tags;
    ag::Tape<float> tape;
    const NetworkOutput<float> o = net.forward(tape, network_input(data, idx), ctx);
    const auto logits = o.logits.values();
    for (int i = 0; i < bs; ++i) {
      const float* row = logits.data() + static_cast<std::size_t>(i) * classes;
      out.labels[static_cast<std::size_t>(b0 + i)] =
          static_cast<int>(std::max_element(row, row + classes) - row);
    }
    std::copy(o.paths.begin(), o.paths.end(),
              out.paths.begin() + static_cast<std::ptrdiff_t>(b0) * k * layers);
  }
  return out;
}

MetricsReport evaluate(const Network& net, const LatentDomainDataset& data) {
  const TagCapability cap = TagCapability::evaluation();
  const std::vector<int> idx = data.test_indices();
  const Predictions p = predict(net, data, idx, &cap);
  const auto tags = data.domain_tags(cap);
  std::vector<int> labels, domains;
  for (int i : idx) {
    labels.push_back(data.labels()[static_cast<std::size_t>(i)]);
    domains.push_back(tags[static_cast<std::size_t>(i)]);
  }
  MetricsReport r = score_predictions(p.labels, labels, domains, data.spec().pi);
  if (!net.spec().plain() && !idx.empty()) {
    const int k = net.spec().experts;
    const int layers = net.spec().layers();
    std::vector<double> rows(idx.size() * static_cast<std::size_t>(k));
    for (int l = 0; l < layers; ++l) {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (int e = 0; e < k; ++e)
          rows[i * k + e] = p.paths[(i * k + e) * layers + l];
      r.layer_purity.push_back(purity(rows, k));
    }
  }
  return r;
}

MetricsReport average_reports(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw ContractError("average_reports: no reports");
  MetricsReport avg = reports.front();
  const double n = static_cast<double>(reports.size());
  auto mean_of = [&](auto field) {
    double s = 0.0;
    for (const auto& r : reports) s += field(r);
    return s / n;
  };
  avg.weighted_accuracy = mean_of([](const MetricsReport& r) { return r.weighted_accuracy; });
  avg.unweighted_accuracy = mean_of([](const MetricsReport& r) { return r.unweighted_accuracy; });
  avg.min_domain_accuracy = mean_of([](const MetricsReport& r) { return r.min_domain_accuracy; });
  avg.overall_accuracy = mean_of([](const MetricsReport& r) { return r.overall_accuracy; });
  for (std::size_t d = 0; d < avg.domain_accuracy.size(); ++d) {
    avg.domain_accuracy[d] = mean_of([d](const MetricsReport& r) { return r.domain_accuracy[d]; });
  }
  for (std::size_t l = 0; l < avg.layer_purity.size(); ++l) {
    avg.layer_purity[l] = mean_of([l](const MetricsReport& r) { return r.layer_purity[l]; });
  }
  return avg;
}

// ---------------------------------------------------------------------------

namespace {

PhaseResult run_phase(const RunConfig& config, const LatentDomainDataset& data,
                      std::uint64_t seed, int phase, Network net, const ProgressFn& progress) {
  check_compatible(net, data);
  const ArchitectureSpec& spec = net.spec();
  const std::vector<int> train_idx = data.train_indices();
  const int n = static_cast<int>(train_idx.size());
  const int classes = spec.num_classes;
  const bool adapters = !spec.plain();
  const bool restyle = adapters && config.style.eta > 0.0;
  const bool mix = adapters && config.mixup;
  std::span<const int> tags;
  if (adapters && spec.gate.mode == GateMode::kFixed) {
    tags = data.domain_tags(TagCapability::fixed_gates());
  }

  OptimizerState opt;
  opt.momentum = config.momentum;
  opt.weight_decay = config.weight_decay;
  const std::vector<ag::Tensor<float>> params = net.parameters();
  std::mt19937_64 rng(hash_seed({seed, static_cast<std::uint64_t>(phase), 0x7a41ULL}));
  const std::uint64_t noise_seed = hash_seed({seed, static_cast<std::uint64_t>(phase), 0x901eULL});

  PhaseResult result;
  std::vector<int> order = train_idx;
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < config.schedule.epochs; ++epoch) {
    opt.lr = lr_at(epoch, config.schedule);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (int b0 = 0; b0 < n; b0 += config.schedule.batch_size) {
      const int bs = std::min(config.schedule.batch_size, n - b0);
      const std::span<const int> idx(order.data() + b0, static_cast<std::size_t>(bs));
      std::vector<std::int64_t> ids(idx.begin(), idx.end());
      std::vector<int> labels(static_cast<std::size_t>(bs));
      std::vector<int> batch_tags;
      for (int i = 0; i < bs; ++i) {
        labels[static_cast<std::size_t>(i)] = data.labels()[static_cast<std::size_t>(idx[i])];
        if (!tags.empty()) batch_tags.push_back(tags[static_cast<std::size_t>(idx[i])]);
      }
      ag::Tensor<float> x = network_input(data, idx);

      StyleExchangePlan plan;
      ForwardContext ctx;
      ctx.training = true;
      ctx.noise_seed = noise_seed;
      ctx.step = step;
      ctx.sample_ids = ids;
      ctx.domain_tags = batch_tags;
      if (restyle) {
        plan.config = config.style;
        plan.pairing = pair_batch(bs, rng);
        ctx.style = &plan;
      }

      ag::Tape<float> tape;
      ag::Tensor<float> loss;
      if (mix) {
        const std::vector<int> pairing = pair_batch(bs, rng);
        std::vector<double> lambdas(static_cast<std::size_t>(bs));
        for (double& l : lambdas) l = sample_mixup_lambda(rng, config.mixup_alpha);
        const MixupBatch mb = mixup_batch(x, labels, pairing, lambdas, classes);
        loss = tape.soft_cross_entropy(net.forward(tape, mb.inputs, ctx).logits, mb.targets);
      } else {
        loss = tape.cross_entropy(net.forward(tape, x, ctx).logits, labels);
      }
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("training: non-finite loss in phase " + std::to_string(phase) +
                           ", epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      sgd_step(params, opt);
      loss_sum += value * bs;
      ++step;
    }
    EpochRecord rec;
    rec.phase = phase;
    rec.epoch = epoch;
    rec.lr = opt.lr;
    rec.train_loss = n > 0 ? loss_sum / n : 0.0;
    rec.test = evaluate(net, data);
    result.history.push_back(rec);
    if (progress) progress(rec);
  }
  result.report = result.history.empty() ? evaluate(net, data) : result.history.back().test;
  result.network = std::move(net);
  return result;
}

}  // namespace

PhaseResult train_backbone(const RunConfig& config, const LatentDomainDataset& data,
                           std::uint64_t seed, const ProgressFn& progress) {
  ArchitectureSpec spec = config.architecture;
  spec.experts = 0;
  Network net = Network::initialize(spec, hash_seed({seed, 1}));
  return run_phase(config, data, seed, 1, std::move(net), progress);
}

PhaseResult train_adapters(const RunConfig& config, const LatentDomainDataset& data,
                           std::uint64_t seed, const Network* backbone,
                           const ProgressFn& progress) {
  Network net = Network::initialize(config.architecture, hash_seed({seed, 2}));
  if (!config.learn_theta) {
    if (backbone == nullptr) throw ContractError("train_adapters: a phase-1 backbone is required");
    net.copy_backbone_from(*backbone, true);
    net.set_backbone_frozen(true);
  }
  return run_phase(config, data, seed, 2, std::move(net), progress);
}

TrainResult train(const RunConfig& config, const LatentDomainDataset& data, std::uint64_t seed,
                  const ProgressFn& progress) {
  config.validate();
  TrainResult result;
  if (config.learn_theta) {
    result.dra = train_adapters(config, data, seed, nullptr, progress);
  } else {
    result.baseline = train_backbone(config, data, seed, progress);
    result.dra = train_adapters(config, data, seed, &result.baseline.network, progress);
  }
  return result;
}

std::vector<NamedConfig> table5_configs(const RunConfig& base) {
  std::vector<NamedConfig> out;
  out.push_back({"default", base});
  RunConfig k1 = base;
  k1.architecture.experts = 1;
  if (k1.architecture.gate.mode == GateMode::kFixed) k1.architecture.gate.mode = GateMode::kMoe;
  out.push_back({"K=1", k1});
  RunConfig eta0 = base;
  eta0.style.eta = 0.0;
  out.push_back({"eta=0", eta0});
  RunConfig theta = base;
  theta.learn_theta = true;
  out.push_back({"learn_theta", theta});
  RunConfig mix = base;
  mix.mixup = true;
  mix.style.eta = 0.0;
  out.push_back({"mixup", mix});
  RunConfig gumbel = base;
  gumbel.architecture.gate.mode = GateMode::kGumbelST;
  out.push_back({"gumbel_st", gumbel});
  return out;
}

std::string metrics_csv(std::span<const EpochRecord> history, int domains, int layers) {
  std::string out = "phase,epoch,lr,train_loss";
  for (int d = 0; d < domains; ++d) out += ",acc_d" + std::to_string(d);
  out += ",weighted_acc";
  for (int l = 0; l < layers; ++l) out += ",purity_l" + std::to_string(l);
  out += "\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const EpochRecord& r : history) {
    out += std::to_string(r.phase) + "," + std::to_string(r.epoch) + ",";
    std::snprintf(buf, sizeof buf, "%.6g", r.lr);
    out += buf;
    out += "," + num(r.train_loss);
    for (int d = 0; d < domains; ++d) {
      out += "," + (d < static_cast<int>(r.test.domain_accuracy.size())
                        ? num(r.test.domain_accuracy[d])
                        : std::string());
    }
    out += "," + num(r.test.weighted_accuracy);
    for (int l = 0; l < layers; ++l) {
      out += "," + (l < static_cast<int>(r.test.layer_purity.size()) ? num(r.test.layer_purity[l])
                                                                      : std::string());
    }
    out += "\n";
  }
  return out;
}

}  // namespace dra
