#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "normaug/config.hpp"
#include "normaug/datagen.hpp"
#include "normaug/inference.hpp"
#include "normaug/model.hpp"

namespace naug {

enum class CombinationMode { random, single_only };

std::string to_string(CombinationMode mode);
CombinationMode parse_combination_mode(const std::string &name);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t iterations_per_epoch = 0;  // 0: one pass over the largest source domain
  std::size_t per_domain_batch = 16;
  double lr_backbone = 0.003;
  double lr_classifier = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  CombinationMode combination_mode = CombinationMode::random;
  double aux_weight = 1.0;
  std::size_t lr_step = 0;  // 0: constant learning rates
  double lr_gamma = 0.1;
  double val_fraction = 0.1;  // held-out share of each source domain

  void validate() const;
  void write(KeyValues &out) const;
  static TrainConfig read(ConfigReader &in);
};

// Rows ordered domain by domain; `domains` holds local ids 0..N-1.
struct DomainBatch {
  Tensor features;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> domains;
  std::size_t per_domain = 0;

  std::size_t size() const { return labels.size(); }
  // Throws unless B = N * b with exactly b rows per domain and b >= 2.
  void validate(std::size_t domain_count) const;
};

// Draws b rows per source domain, uniformly without replacement. Dataset
// domain ids are mapped to local ids by ascending order.
DomainBatch sample_batch(const Dataset &data, std::size_t per_domain, std::mt19937_64 &rng);

// Epoch-wise sampler: each domain's rows are shuffled and consumed without
// replacement, and reshuffled once exhausted.
class DomainBalancedSampler {
 public:
  DomainBalancedSampler(const Dataset &data, std::size_t per_domain, std::uint64_t seed);

  DomainBatch next();
  std::size_t domain_count() const { return pools_.size(); }
  std::size_t largest_domain() const;
  std::mt19937_64 &rng() { return rng_; }

 private:
  struct Pool {
    std::vector<std::size_t> rows;
    std::size_t cursor = 0;
  };
  const Dataset &data_;
  std::size_t per_domain_;
  std::vector<Pool> pools_;
  std::mt19937_64 rng_;
};

Partition sample_combination(const std::vector<Partition> &combinations, std::mt19937_64 &rng, CombinationMode mode);

// meanCE(main) + aux_weight * (1/K) * sum_k meanCE(block k).
Tensor total_loss(const Tensor &main_logits, const std::vector<Model::AuxBlock> &blocks,
                  const std::vector<std::size_t> &labels, double aux_weight = 1.0);

// SGD with momentum and L2 weight decay:
//   g = grad + wd * w;  v = momentum * v + g;  w -= lr * v
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<NamedParam> params, double lr_backbone, double lr_classifier, double momentum,
               double weight_decay);

  void zero_grad();
  void step();
  void set_learning_rates(double lr_backbone, double lr_classifier);
  const std::vector<NamedParam> &params() const { return params_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_backbone_;
  double lr_classifier_;
  double momentum_;
  double weight_decay_;
};

// One optimization step; returns the loss before the update. Throws
// std::runtime_error on a non-finite loss.
double train_step(Model &model, const DomainBatch &batch, const Partition *partition, SgdOptimizer &optimizer,
                  double aux_weight);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double src_acc = 0.0;
  double tgt_acc_main = 0.0;
  double tgt_acc_ensemble = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  std::string rng_state;  // sampler and combination generators after the last step
};

// Splits every source domain into train/validation rows (val_fraction each).
std::pair<Dataset, Dataset> split_validation(const Dataset &source, double fraction, std::uint64_t seed);

// Leave-one-domain-out training on `source`; after each epoch evaluates the
// source validation rows and `target`. The ensemble column uses `strategy`
// for models with the auxiliary path and the main path otherwise.
TrainResult train(Model &model, const Dataset &source, const Dataset &target, const TrainConfig &config,
                  FusionStrategy strategy = FusionStrategy::MeanMeanIM,
                  SubpathScope scope = SubpathScope::independent_only,
                  const std::function<void(const EpochMetrics &)> &on_epoch = {});

std::string metrics_csv(const std::vector<EpochMetrics> &metrics);

}  // namespace naug
