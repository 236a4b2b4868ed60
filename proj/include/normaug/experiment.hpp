#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "normaug/config.hpp"
#include "normaug/datagen.hpp"
#include "normaug/model.hpp"
#include "normaug/training.hpp"

namespace naug {

// Everything a run depends on. One flat key=value namespace: the ModelConfig
// and TrainConfig keys plus the data keys below. `seed` seeds data
// generation, model init and training alike.
//
// data keys: data (CSV path; generated when empty), target_domain,
// per_cell, separation, shift, target_shift, noise, style_log_scale,
// style_scale_jitter, style_shift, style_shift_coherence, style_rotation,
// strategy, scope
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  GeneratorConfig data;
  std::string data_path;
  std::optional<std::size_t> target_domain;  // default: highest domain id
  FusionStrategy strategy = FusionStrategy::MeanMeanIM;
  SubpathScope scope = SubpathScope::independent_only;

  // Keeps the generator's classes/domains/dim in step with the model.
  void sync();
  KeyValues to_key_values() const;
  static RunConfig from_key_values(const KeyValues &values);
  void set_seed(std::uint64_t seed);
};

RunConfig load_run_config(const std::filesystem::path &path);

// Full dataset (sources and held-out domain) for the config.
Dataset prepare_data(const RunConfig &config);

struct LodoSplit {
  Dataset source;
  Dataset target;
  std::size_t target_domain = 0;
};
LodoSplit split_for_run(const RunConfig &config, const Dataset &data);

struct TrainedRun {
  Model model;
  TrainResult result;
  LodoSplit split;
};

TrainedRun run_training(const RunConfig &config);

// Checkpoint metadata: the run config (minus model keys), the final epoch
// and the sampler RNG state.
KeyValues checkpoint_meta(const RunConfig &config, const TrainResult &result);
RunConfig run_config_from_checkpoint(const ModelConfig &model, const KeyValues &meta);

enum class AblationVariant { DeepAll, Model1, Model2, Ours };
std::string to_string(AblationVariant variant);
const std::vector<AblationVariant> &ablation_variants();

struct AblationRow {
  std::uint64_t seed = 0;
  AblationVariant variant = AblationVariant::DeepAll;
  double tgt_acc = 0.0;
};

struct AblationSummary {
  AblationVariant variant;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single seed
};

// DeepAll: no ON, no AUG. Model-1: ON. Model-2: ON + AUG, main path only.
// Ours: the Model-2 network with ensemble prediction (config strategy).
std::vector<AblationRow> run_ablation(const RunConfig &base, const std::vector<std::uint64_t> &seeds);
std::vector<AblationSummary> summarize_ablation(const std::vector<AblationRow> &rows);
std::string ablation_runs_csv(const std::vector<AblationRow> &rows);
std::string ablation_summary_csv(const std::vector<AblationSummary> &summary);

}  // namespace naug
