#include "normaug/model.hpp"

#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include "normaug/io.hpp"
#include "normaug/ops.hpp"

namespace naug {

std::string to_string(ClassifierMode mode) {
  switch (mode) {
    case ClassifierMode::independent: return "independent";
    case ClassifierMode::shared_one: return "shared_one";
    case ClassifierMode::shared_two: return "shared_two";
  }
  return "?";
}

std::string to_string(Backbone backbone) { return backbone == Backbone::mlp ? "mlp" : "smallconv"; }

std::string to_string(CombinationScheme scheme) {
  return scheme == CombinationScheme::reduced ? "reduced" : "full";
}

void ModelConfig::validate() const {
  if (domains < 2) throw std::invalid_argument("model config: domains must be >= 2");
  if (classes < 2) throw std::invalid_argument("model config: classes must be >= 2");
  if (input_dim == 0) throw std::invalid_argument("model config: input_dim must be positive");
  if (hidden.empty()) throw std::invalid_argument("model config: need at least one hidden layer");
  for (auto h : hidden)
    if (h == 0) throw std::invalid_argument("model config: hidden sizes must be positive");
  if (backbone == Backbone::smallconv) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(input_dim))));
    if (side * side != input_dim) throw std::invalid_argument("model config: smallconv needs a square input_dim");
  }
  if (use_on && backbone == Backbone::mlp) {
    for (auto h : hidden)
      if (h < 2) throw std::invalid_argument("model config: ON needs at least 2 features per layer");
  }
  if (scheme == CombinationScheme::full && domains < 3) {
    throw std::invalid_argument("model config: full combination scheme needs >= 3 domains");
  }
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0) || !(bn_eps > 0.0)) {
    throw std::invalid_argument("model config: bn_momentum must be in (0,1] and bn_eps positive");
  }
}

void ModelConfig::write(KeyValues &out) const {
  out["input_dim"] = std::to_string(input_dim);
  out["hidden"] = join_sizes(hidden);
  out["classes"] = std::to_string(classes);
  out["domains"] = std::to_string(domains);
  out["use_on"] = use_on ? "true" : "false";
  out["use_aug"] = use_aug ? "true" : "false";
  out["classifier_mode"] = to_string(classifier_mode);
  out["backbone"] = to_string(backbone);
  out["combination_scheme"] = to_string(scheme);
  out["bn_momentum"] = format_double(bn_momentum);
  out["bn_eps"] = format_double(bn_eps);
}

ModelConfig ModelConfig::read(ConfigReader &in) {
  ModelConfig c;
  c.input_dim = in.get_size("input_dim", c.input_dim);
  c.hidden = in.get_size_list("hidden", c.hidden);
  c.classes = in.get_size("classes", c.classes);
  c.domains = in.get_size("domains", c.domains);
  c.use_on = in.get_bool("use_on", c.use_on);
  c.use_aug = in.get_bool("use_aug", c.use_aug);
  const std::string mode = in.get_string("classifier_mode", to_string(c.classifier_mode));
  if (mode == "independent") c.classifier_mode = ClassifierMode::independent;
  else if (mode == "shared_one") c.classifier_mode = ClassifierMode::shared_one;
  else if (mode == "shared_two") c.classifier_mode = ClassifierMode::shared_two;
  else throw std::invalid_argument("config: unknown classifier_mode '" + mode + "'");
  const std::string backbone = in.get_string("backbone", to_string(c.backbone));
  if (backbone == "mlp") c.backbone = Backbone::mlp;
  else if (backbone == "smallconv") c.backbone = Backbone::smallconv;
  else throw std::invalid_argument("config: unknown backbone '" + backbone + "'");
  const std::string scheme = in.get_string("combination_scheme", to_string(c.scheme));
  if (scheme == "reduced") c.scheme = CombinationScheme::reduced;
  else if (scheme == "full") c.scheme = CombinationScheme::full;
  else throw std::invalid_argument("config: unknown combination_scheme '" + scheme + "'");
  c.bn_momentum = in.get_double("bn_momentum", c.bn_momentum);
  c.bn_eps = in.get_double("bn_eps", c.bn_eps);
  return c;
}

Tensor Linear::forward(const Tensor &x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

namespace {

Tensor he_normal(const Shape &shape, std::size_t fan_in, std::mt19937_64 &rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> v(shape_numel(shape));
  for (auto &x : v) x = dist(rng);
  return Tensor(shape, std::move(v), true);
}

Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64 &rng) {
  return Linear{he_normal({in, out}, in, rng), Tensor::zeros({out}, true)};
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  if (config_.backbone == Backbone::smallconv) {
    image_side_ = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(config_.input_dim))));
  }
  if (config_.use_aug) {
    combinations_ = config_.scheme == CombinationScheme::reduced ? enumerate_reduced_combinations(config_.domains)
                                                                 : enumerate_full_combinations(config_.domains);
  }

  std::size_t in = config_.backbone == Backbone::mlp ? config_.input_dim : 1;
  for (auto width : config_.hidden) {
    Layer layer{Tensor(), ONUnit(width, config_.bn_momentum, config_.bn_eps), std::nullopt};
    if (config_.backbone == Backbone::mlp) {
      layer.weight = he_normal({in, width}, in, rng);
    } else {
      layer.weight = he_normal({width, in, 3, 3}, in * 9, rng);
    }
    if (config_.use_aug) {
      layer.bank.emplace(config_.domains, width, combinations_, config_.bn_momentum, config_.bn_eps);
    }
    layers_.push_back(std::move(layer));
    in = width;
  }

  main_classifier_ = make_linear(config_.feature_dim(), config_.classes, rng);
  if (config_.use_aug) {
    std::optional<Linear> shared;
    if (config_.classifier_mode == ClassifierMode::shared_one) shared = main_classifier_;
    if (config_.classifier_mode == ClassifierMode::shared_two) {
      shared = make_linear(config_.feature_dim(), config_.classes, rng);
    }
    for (const auto &key : layers_.front().bank->keys()) {
      aux_classifiers_.emplace(key, shared ? *shared : make_linear(config_.feature_dim(), config_.classes, rng));
    }
  }
}

std::vector<DomainSubset> Model::bank_keys() const {
  if (!config_.use_aug) return {};
  return layers_.front().bank->keys();
}

BNBank &Model::bank(std::size_t layer) {
  auto &l = layers_.at(layer);
  if (!l.bank) throw std::logic_error("model: auxiliary path disabled (use_aug=false)");
  return *l.bank;
}

Linear &Model::aux_classifier(const DomainSubset &subset) {
  auto it = aux_classifiers_.find(subset);
  if (it == aux_classifiers_.end()) {
    throw std::out_of_range("model: no classifier for subset {" + subset.label() + "}");
  }
  return it->second;
}

Tensor Model::to_backbone_input(const Tensor &x) const {
  if (x.rank() != 2 || x.dim(1) != config_.input_dim) {
    throw ShapeError("model input", "expected [B x " + std::to_string(config_.input_dim) + "], got " +
                                        shape_to_string(x.shape()));
  }
  if (x.dim(0) == 0) throw ShapeError("model input", "empty batch");
  if (config_.backbone == Backbone::mlp) return x;
  return reshape(x, {x.dim(0), 1, image_side_, image_side_});
}

Tensor Model::run_backbone(const Tensor &x, const std::function<Tensor(Layer &, const Tensor &)> &normalize) {
  Tensor h = to_backbone_input(x);
  for (auto &layer : layers_) {
    h = config_.backbone == Backbone::mlp ? matmul(h, layer.weight) : conv2d(h, layer.weight, 1);
    h = relu(normalize(layer, h));
  }
  return config_.backbone == Backbone::mlp ? h : global_avg_pool(h);
}

Model::Output Model::forward_main(const Tensor &x, NormMode mode) {
  Tensor features = run_backbone(x, [&](Layer &layer, const Tensor &h) {
    return config_.use_on ? on_forward(layer.main, h, mode) : bn_forward(layer.main.bn, h, mode);
  });
  return {main_classifier_.forward(features), features};
}

std::vector<Model::AuxBlock> Model::forward_aux(const Tensor &x, std::span<const std::size_t> domain_ids,
                                                const Partition &partition, NormMode mode) {
  if (!config_.use_aug) throw std::logic_error("model: auxiliary path disabled (use_aug=false)");
  if (partition.domain_count() != config_.domains) {
    throw std::invalid_argument("forward_aux: partition " + partition.label() + " does not match " +
                                std::to_string(config_.domains) + " domains");
  }
  Tensor features = run_backbone(x, [&](Layer &layer, const Tensor &h) {
    return partitioned_forward(*layer.bank, partition, h, domain_ids, mode);
  });
  std::vector<AuxBlock> blocks;
  for (const auto &subset : partition.groups()) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < domain_ids.size(); ++r)
      if (subset.contains(domain_ids[r])) rows.push_back(r);
    if (rows.empty()) continue;
    Tensor logits = aux_classifier(subset).forward(gather_rows(features, rows));
    blocks.push_back({subset, std::move(rows), std::move(logits)});
  }
  return blocks;
}

Model::Output Model::forward_subpath(const Tensor &x, const DomainSubset &subset, NormMode mode) {
  if (!config_.use_aug) throw std::logic_error("model: auxiliary path disabled (use_aug=false)");
  Linear &classifier = aux_classifier(subset);
  Tensor features = run_backbone(x, [&](Layer &layer, const Tensor &h) {
    return bn_forward(layer.bank->unit(subset), h, mode);
  });
  return {classifier.forward(features), features};
}

std::vector<NamedParam> Model::parameters() const {
  std::vector<NamedParam> out;
  std::set<const void *> seen;
  auto push = [&](std::string name, const Tensor &t, ParamGroup group) {
    if (seen.insert(t.storage_id()).second) out.push_back({std::move(name), t, group});
  };
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto &layer = layers_[i];
    const std::string prefix = "layer" + std::to_string(i);
    push(prefix + ".weight", layer.weight, ParamGroup::backbone);
    push(prefix + ".main.gamma", layer.main.bn.gamma, ParamGroup::backbone);
    push(prefix + ".main.beta", layer.main.bn.beta, ParamGroup::backbone);
    if (config_.use_on) push(prefix + ".main.mix", layer.main.mixture_logits, ParamGroup::backbone);
    if (layer.bank) {
      for (const auto &[key, unit] : layer.bank->units()) {
        push(prefix + ".bank." + key.label() + ".gamma", unit.gamma, ParamGroup::backbone);
        push(prefix + ".bank." + key.label() + ".beta", unit.beta, ParamGroup::backbone);
      }
    }
  }
  push("cls.main.weight", main_classifier_.weight, ParamGroup::classifier);
  push("cls.main.bias", main_classifier_.bias, ParamGroup::classifier);
  for (const auto &[key, cls] : aux_classifiers_) {
    push("cls.aux." + key.label() + ".weight", cls.weight, ParamGroup::classifier);
    push("cls.aux." + key.label() + ".bias", cls.bias, ParamGroup::classifier);
  }
  return out;
}

std::size_t Model::backbone_parameter_count() const {
  std::size_t n = 0;
  for (const auto &layer : layers_) n += layer.weight.numel();
  return n;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto &p : parameters()) n += p.tensor.numel();
  return n;
}

void Model::visit_state(const std::function<void(const std::string &, const Shape &, std::span<double>)> &fn) {
  for (auto &p : parameters()) fn(p.name, p.tensor.shape(), p.tensor.mutable_data());
  auto running = [&](const std::string &prefix, BNUnit &unit) {
    fn(prefix + ".running_mean", Shape{unit.channels()}, unit.running_mean);
    fn(prefix + ".running_var", Shape{unit.channels()}, unit.running_var);
  };
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto &layer = layers_[i];
    const std::string prefix = "layer" + std::to_string(i);
    running(prefix + ".main", layer.main.bn);
    if (layer.bank) {
      for (auto &[key, unit] : layer.bank->units()) running(prefix + ".bank." + key.label(), unit);
    }
  }
}

void Model::visit_counters(const std::function<void(const std::string &, std::size_t &)> &fn) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto &layer = layers_[i];
    const std::string prefix = "layer" + std::to_string(i);
    fn(prefix + ".main.updates", layer.main.bn.updates);
    if (layer.bank) {
      for (auto &[key, unit] : layer.bank->units()) fn(prefix + ".bank." + key.label() + ".updates", unit.updates);
    }
  }
}

}  // namespace naug
