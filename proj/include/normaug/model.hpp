#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "normaug/config.hpp"
#include "normaug/normbank.hpp"
#include "normaug/tensor.hpp"

namespace naug {

enum class ClassifierMode { independent, shared_one, shared_two };
enum class Backbone { mlp, smallconv };
enum class CombinationScheme { reduced, full };

std::string to_string(ClassifierMode mode);
std::string to_string(Backbone backbone);
std::string to_string(CombinationScheme scheme);

struct ModelConfig {
  std::size_t input_dim = 16;
  // Linear widths (mlp) or conv channel counts (smallconv); each block is
  // followed by a normalization layer and ReLU. The last block's output is
  // the penultimate feature.
  std::vector<std::size_t> hidden = {64, 64, 32};
  std::size_t classes = 5;
  std::size_t domains = 3;
  bool use_on = true;
  bool use_aug = true;
  ClassifierMode classifier_mode = ClassifierMode::independent;
  Backbone backbone = Backbone::mlp;
  CombinationScheme scheme = CombinationScheme::reduced;
  double bn_momentum = kDefaultBnMomentum;
  double bn_eps = kDefaultBnEps;

  void validate() const;
  std::size_t feature_dim() const { return hidden.back(); }
  // lower_snake_case keys as used in config files
  void write(KeyValues &out) const;
  static ModelConfig read(ConfigReader &in);
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor forward(const Tensor &x) const;
};

enum class ParamGroup { backbone, classifier };

struct NamedParam {
  std::string name;
  Tensor tensor;
  ParamGroup group;
};

// Two-path network: a shared backbone whose normalization layers either run
// the main-path unit (ON or plain BN over the whole batch) or dispatch rows
// to BN-bank units, plus the main classifier and the classifier bank.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  Model(const Model &) = delete;
  Model &operator=(const Model &) = delete;
  Model(Model &&) = default;
  Model &operator=(Model &&) = default;

  const ModelConfig &config() const { return config_; }
  const std::vector<Partition> &combinations() const { return combinations_; }
  std::vector<DomainSubset> bank_keys() const;

  struct Output {
    Tensor logits;    // [B, classes]
    Tensor features;  // [B, feature_dim]
  };
  struct AuxBlock {
    DomainSubset subset;
    std::vector<std::size_t> rows;  // indices into the input batch
    Tensor logits;                  // [rows.size(), classes]
  };

  Output forward_main(const Tensor &x, NormMode mode);
  // One block per partition group that owns at least one row.
  std::vector<AuxBlock> forward_aux(const Tensor &x, std::span<const std::size_t> domain_ids,
                                    const Partition &partition, NormMode mode);
  // Every row through bank unit `subset` at each layer and classifier C_subset.
  Output forward_subpath(const Tensor &x, const DomainSubset &subset, NormMode mode);

  // Trainable tensors, each storage listed once even when aliased.
  std::vector<NamedParam> parameters() const;
  // Parameters outside normalization units and classifiers.
  std::size_t backbone_parameter_count() const;
  std::size_t parameter_count() const;

  Linear &main_classifier() { return main_classifier_; }
  Linear &aux_classifier(const DomainSubset &subset);
  ONUnit &main_norm(std::size_t layer) { return layers_.at(layer).main; }
  BNBank &bank(std::size_t layer);
  std::size_t norm_layer_count() const { return layers_.size(); }

  // Persistent state in a fixed order: trainable tensors, running
  // statistics and unit update counters. Aliased classifiers appear once.
  void visit_state(const std::function<void(const std::string &, const Shape &, std::span<double>)> &fn);
  void visit_counters(const std::function<void(const std::string &, std::size_t &)> &fn);

 private:
  struct Layer {
    Tensor weight;  // [in, out] or [out, in, 3, 3]
    ONUnit main;
    std::optional<BNBank> bank;
  };

  Tensor to_backbone_input(const Tensor &x) const;
  Tensor run_backbone(const Tensor &x, const std::function<Tensor(Layer &, const Tensor &)> &normalize);

  ModelConfig config_;
  std::vector<Partition> combinations_;
  std::vector<Layer> layers_;
  Linear main_classifier_;
  std::map<DomainSubset, Linear> aux_classifiers_;
  std::size_t image_side_ = 0;
};

}  // namespace naug
