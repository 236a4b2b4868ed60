#include "normaug/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "normaug/io.hpp"

namespace naug {

namespace {

const char *const kMetaKeys[] = {"epoch", "rng_state"};

}  // namespace

void RunConfig::sync() {
  data.classes = model.classes;
  data.source_domains = model.domains;
  data.dim = model.input_dim;
  data.seed = train.seed;
}

void RunConfig::set_seed(std::uint64_t seed) {
  train.seed = seed;
  sync();
}

KeyValues RunConfig::to_key_values() const {
  KeyValues out;
  model.write(out);
  train.write(out);
  out["data"] = data_path;
  out["target_domain"] = target_domain ? std::to_string(*target_domain) : "";
  out["per_cell"] = std::to_string(data.per_cell);
  out["separation"] = format_double(data.separation);
  out["shift"] = format_double(data.shift);
  out["target_shift"] = format_double(data.target_shift);
  out["noise"] = format_double(data.noise);
  out["style_log_scale"] = format_double(data.style.log_scale);
  out["style_scale_jitter"] = format_double(data.style.scale_jitter);
  out["style_shift"] = format_double(data.style.shift);
  out["style_shift_coherence"] = format_double(data.style.shift_coherence);
  out["style_rotation"] = format_double(data.style.rotation);
  out["strategy"] = to_string(strategy);
  out["scope"] = to_string(scope);
  return out;
}

RunConfig RunConfig::from_key_values(const KeyValues &values) {
  ConfigReader in(values);
  RunConfig c;
  c.model = ModelConfig::read(in);
  c.train = TrainConfig::read(in);
  c.data_path = in.get_string("data", "");
  const std::string target = in.get_string("target_domain", "");
  if (!target.empty()) {
    KeyValues one{{"target_domain", target}};
    ConfigReader sub(one);
    c.target_domain = sub.get_size("target_domain", 0);
  }
  GeneratorConfig &g = c.data;
  g.per_cell = in.get_size("per_cell", g.per_cell);
  g.separation = in.get_double("separation", g.separation);
  g.shift = in.get_double("shift", g.shift);
  g.target_shift = in.get_double("target_shift", g.target_shift);
  g.noise = in.get_double("noise", g.noise);
  g.style.log_scale = in.get_double("style_log_scale", g.style.log_scale);
  g.style.scale_jitter = in.get_double("style_scale_jitter", g.style.scale_jitter);
  g.style.shift = in.get_double("style_shift", g.style.shift);
  g.style.shift_coherence = in.get_double("style_shift_coherence", g.style.shift_coherence);
  g.style.rotation = in.get_double("style_rotation", g.style.rotation);
  c.strategy = parse_fusion_strategy(in.get_string("strategy", to_string(c.strategy)));
  c.scope = parse_subpath_scope(in.get_string("scope", to_string(c.scope)));
  in.require_all_used();
  c.model.validate();
  c.train.validate();
  c.sync();
  return c;
}

RunConfig load_run_config(const std::filesystem::path &path) {
  return RunConfig::from_key_values(load_key_values(path));
}

Dataset prepare_data(const RunConfig &config) {
  if (!config.data_path.empty()) return load_csv(config.data_path);
  return generate(config.data).data;
}

LodoSplit split_for_run(const RunConfig &config, const Dataset &data) {
  if (data.dim != config.model.input_dim) {
    throw std::invalid_argument("data has " + std::to_string(data.dim) + " features, config input_dim is " +
                                std::to_string(config.model.input_dim));
  }
  if (data.num_classes > config.model.classes) {
    throw std::invalid_argument("data has " + std::to_string(data.num_classes) + " classes, config classes is " +
                                std::to_string(config.model.classes));
  }
  const auto present = data.present_domains();
  LodoSplit split;
  split.target_domain = config.target_domain ? *config.target_domain : present.back();
  auto [source, target] = split_lodo(data, split.target_domain);
  if (source.present_domains().size() != config.model.domains) {
    throw std::invalid_argument("data has " + std::to_string(source.present_domains().size()) +
                                " source domains, config domains is " + std::to_string(config.model.domains));
  }
  split.source = std::move(source);
  split.target = std::move(target);
  return split;
}

TrainedRun run_training(const RunConfig &config) {
  LodoSplit split = split_for_run(config, prepare_data(config));
  Model model(config.model, config.train.seed);
  TrainResult result = train(model, split.source, split.target, config.train, config.strategy, config.scope);
  return {std::move(model), std::move(result), std::move(split)};
}

KeyValues checkpoint_meta(const RunConfig &config, const TrainResult &result) {
  KeyValues meta = config.to_key_values();
  KeyValues model_keys;
  config.model.write(model_keys);
  for (const auto &[k, _] : model_keys) meta.erase(k);
  meta["epoch"] = std::to_string(result.metrics.size());
  meta["rng_state"] = result.rng_state;
  return meta;
}

RunConfig run_config_from_checkpoint(const ModelConfig &model, const KeyValues &meta) {
  KeyValues values = meta;
  for (const char *k : kMetaKeys) values.erase(k);
  model.write(values);
  return RunConfig::from_key_values(values);
}

std::string to_string(AblationVariant variant) {
  switch (variant) {
    case AblationVariant::DeepAll: return "DeepAll";
    case AblationVariant::Model1: return "Model-1";
    case AblationVariant::Model2: return "Model-2";
    case AblationVariant::Ours: return "Ours";
  }
  return "?";
}

const std::vector<AblationVariant> &ablation_variants() {
  static const std::vector<AblationVariant> all = {AblationVariant::DeepAll, AblationVariant::Model1,
                                                   AblationVariant::Model2, AblationVariant::Ours};
  return all;
}

std::vector<AblationRow> run_ablation(const RunConfig &base, const std::vector<std::uint64_t> &seeds) {
  if (seeds.empty()) throw std::invalid_argument("ablate: empty seed list");
  std::vector<AblationRow> rows;
  for (auto seed : seeds) {
    RunConfig config = base;
    config.set_seed(seed);
    const LodoSplit split = split_for_run(config, prepare_data(config));
    auto fit = [&](bool use_on, bool use_aug) {
      ModelConfig mc = config.model;
      mc.use_on = use_on;
      mc.use_aug = use_aug;
      Model model(mc, seed);
      return train(model, split.source, split.target, config.train, config.strategy, config.scope).metrics.back();
    };
    const EpochMetrics deep_all = fit(false, false);
    const EpochMetrics model1 = fit(true, false);
    const EpochMetrics full = fit(true, true);
    rows.push_back({seed, AblationVariant::DeepAll, deep_all.tgt_acc_main});
    rows.push_back({seed, AblationVariant::Model1, model1.tgt_acc_main});
    rows.push_back({seed, AblationVariant::Model2, full.tgt_acc_main});
    rows.push_back({seed, AblationVariant::Ours, full.tgt_acc_ensemble});
  }
  return rows;
}

std::vector<AblationSummary> summarize_ablation(const std::vector<AblationRow> &rows) {
  std::vector<AblationSummary> out;
  for (auto variant : ablation_variants()) {
    std::vector<double> values;
    for (const auto &r : rows)
      if (r.variant == variant) values.push_back(r.tgt_acc);
    AblationSummary s{variant};
    if (!values.empty()) {
      for (double v : values) s.mean += v;
      s.mean /= static_cast<double>(values.size());
      if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
      }
    }
    out.push_back(s);
  }
  return out;
}

std::string ablation_runs_csv(const std::vector<AblationRow> &rows) {
  std::string out = "seed,variant,tgt_acc\n";
  for (const auto &r : rows) out += std::to_string(r.seed) + "," + to_string(r.variant) + "," + format_double(r.tgt_acc) + "\n";
  return out;
}

std::string ablation_summary_csv(const std::vector<AblationSummary> &summary) {
  std::string out = "variant,mean,std\n";
  for (const auto &s : summary) out += to_string(s.variant) + "," + format_double(s.mean) + "," + format_double(s.std) + "\n";
  return out;
}

}  // namespace naug
