#include "normaug/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "normaug/io.hpp"
#include "normaug/ops.hpp"

namespace naug {

namespace {

std::vector<std::vector<std::size_t>> rows_by_domain(const Dataset &data) {
  std::vector<std::vector<std::size_t>> out;
  for (auto d : data.present_domains()) out.push_back(data.rows_of_domain(d));
  if (out.size() < 2) throw std::invalid_argument("training: need at least 2 source domains");
  return out;
}

void require_pool_size(const std::vector<std::size_t> &rows, std::size_t per_domain, std::size_t local) {
  if (rows.size() < per_domain) {
    throw std::invalid_argument("sample_batch: domain " + std::to_string(local) + " has " +
                                std::to_string(rows.size()) + " samples, fewer than the per-domain batch " +
                                std::to_string(per_domain));
  }
}

std::mt19937_64 tagged_rng(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kSamplerTag = 0x5a4d50u;
constexpr std::uint32_t kCombinationTag = 0x434f4du;

DomainBatch assemble(const Dataset &data, const std::vector<std::vector<std::size_t>> &picks, std::size_t b) {
  DomainBatch batch;
  batch.per_domain = b;
  std::vector<double> values;
  values.reserve(picks.size() * b * data.dim);
  for (std::size_t d = 0; d < picks.size(); ++d) {
    for (auto r : picks[d]) {
      const auto row = data.row(r);
      values.insert(values.end(), row.begin(), row.end());
      batch.labels.push_back(data.labels[r]);
      batch.domains.push_back(d);
    }
  }
  batch.features = Tensor({batch.labels.size(), data.dim}, std::move(values));
  return batch;
}

}  // namespace

std::string to_string(CombinationMode mode) { return mode == CombinationMode::random ? "random" : "single_only"; }

CombinationMode parse_combination_mode(const std::string &name) {
  if (name == "random") return CombinationMode::random;
  if (name == "single_only") return CombinationMode::single_only;
  throw std::invalid_argument("unknown combination_mode '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(lr_backbone > 0.0) || !(lr_classifier > 0.0)) {
    throw std::invalid_argument("train config: learning rates must be positive");
  }
  if (per_domain_batch < 2) throw std::invalid_argument("train config: per_domain_batch must be >= 2");
  if (epochs == 0) throw std::invalid_argument("train config: epochs must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("train config: momentum must be in [0,1)");
  if (weight_decay < 0.0) throw std::invalid_argument("train config: weight_decay must be >= 0");
  if (aux_weight < 0.0) throw std::invalid_argument("train config: aux_weight must be >= 0");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw std::invalid_argument("train config: val_fraction must be in [0,1)");
  if (!(lr_gamma > 0.0)) throw std::invalid_argument("train config: lr_gamma must be positive");
}

void TrainConfig::write(KeyValues &out) const {
  out["epochs"] = std::to_string(epochs);
  out["iterations_per_epoch"] = std::to_string(iterations_per_epoch);
  out["per_domain_batch"] = std::to_string(per_domain_batch);
  out["lr_backbone"] = format_double(lr_backbone);
  out["lr_classifier"] = format_double(lr_classifier);
  out["momentum"] = format_double(momentum);
  out["weight_decay"] = format_double(weight_decay);
  out["seed"] = std::to_string(seed);
  out["combination_mode"] = to_string(combination_mode);
  out["aux_weight"] = format_double(aux_weight);
  out["lr_step"] = std::to_string(lr_step);
  out["lr_gamma"] = format_double(lr_gamma);
  out["val_fraction"] = format_double(val_fraction);
}

TrainConfig TrainConfig::read(ConfigReader &in) {
  TrainConfig c;
  c.epochs = in.get_size("epochs", c.epochs);
  c.iterations_per_epoch = in.get_size("iterations_per_epoch", c.iterations_per_epoch);
  c.per_domain_batch = in.get_size("per_domain_batch", c.per_domain_batch);
  c.lr_backbone = in.get_double("lr_backbone", c.lr_backbone);
  c.lr_classifier = in.get_double("lr_classifier", c.lr_classifier);
  c.momentum = in.get_double("momentum", c.momentum);
  c.weight_decay = in.get_double("weight_decay", c.weight_decay);
  c.seed = in.get_u64("seed", c.seed);
  c.combination_mode = parse_combination_mode(in.get_string("combination_mode", to_string(c.combination_mode)));
  c.aux_weight = in.get_double("aux_weight", c.aux_weight);
  c.lr_step = in.get_size("lr_step", c.lr_step);
  c.lr_gamma = in.get_double("lr_gamma", c.lr_gamma);
  c.val_fraction = in.get_double("val_fraction", c.val_fraction);
  return c;
}

void DomainBatch::validate(std::size_t domain_count) const {
  if (per_domain < 2) throw std::invalid_argument("domain batch: per-domain count must be >= 2");
  if (size() != domain_count * per_domain || domains.size() != size() || features.dim(0) != size()) {
    throw std::invalid_argument("domain batch: expected " + std::to_string(domain_count * per_domain) + " rows");
  }
  std::vector<std::size_t> counts(domain_count, 0);
  for (auto d : domains) {
    if (d >= domain_count) throw std::invalid_argument("domain batch: domain id out of range");
    ++counts[d];
  }
  for (auto c : counts)
    if (c != per_domain) throw std::invalid_argument("domain batch: unequal per-domain counts");
}

DomainBatch sample_batch(const Dataset &data, std::size_t per_domain, std::mt19937_64 &rng) {
  if (per_domain < 2) throw std::invalid_argument("sample_batch: per-domain batch must be >= 2");
  auto pools = rows_by_domain(data);
  std::vector<std::vector<std::size_t>> picks;
  for (std::size_t d = 0; d < pools.size(); ++d) {
    require_pool_size(pools[d], per_domain, d);
    // partial Fisher-Yates
    auto &rows = pools[d];
    for (std::size_t i = 0; i < per_domain; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, rows.size() - 1);
      std::swap(rows[i], rows[pick(rng)]);
    }
    picks.emplace_back(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(per_domain));
  }
  return assemble(data, picks, per_domain);
}

DomainBalancedSampler::DomainBalancedSampler(const Dataset &data, std::size_t per_domain, std::uint64_t seed)
    : data_(data), per_domain_(per_domain), rng_(tagged_rng(seed, kSamplerTag)) {
  if (per_domain < 2) throw std::invalid_argument("sampler: per-domain batch must be >= 2");
  auto rows = rows_by_domain(data);
  for (std::size_t d = 0; d < rows.size(); ++d) {
    require_pool_size(rows[d], per_domain, d);
    std::shuffle(rows[d].begin(), rows[d].end(), rng_);
    pools_.push_back({std::move(rows[d]), 0});
  }
}

std::size_t DomainBalancedSampler::largest_domain() const {
  std::size_t n = 0;
  for (const auto &p : pools_) n = std::max(n, p.rows.size());
  return n;
}

DomainBatch DomainBalancedSampler::next() {
  std::vector<std::vector<std::size_t>> picks;
  for (auto &pool : pools_) {
    if (pool.cursor + per_domain_ > pool.rows.size()) {
      std::shuffle(pool.rows.begin(), pool.rows.end(), rng_);
      pool.cursor = 0;
    }
    const auto first = pool.rows.begin() + static_cast<std::ptrdiff_t>(pool.cursor);
    picks.emplace_back(first, first + static_cast<std::ptrdiff_t>(per_domain_));
    pool.cursor += per_domain_;
  }
  return assemble(data_, picks, per_domain_);
}

Partition sample_combination(const std::vector<Partition> &combinations, std::mt19937_64 &rng, CombinationMode mode) {
  if (combinations.empty()) throw std::invalid_argument("sample_combination: no combinations");
  if (mode == CombinationMode::single_only) {
    return Partition::singletons(combinations.front().domain_count());
  }
  std::uniform_int_distribution<std::size_t> pick(0, combinations.size() - 1);
  return combinations[pick(rng)];
}

Tensor total_loss(const Tensor &main_logits, const std::vector<Model::AuxBlock> &blocks,
                  const std::vector<std::size_t> &labels, double aux_weight) {
  Tensor loss = cross_entropy(main_logits, labels);
  if (blocks.empty()) return loss;
  Tensor aux;
  for (const auto &block : blocks) {
    std::vector<std::size_t> block_labels;
    block_labels.reserve(block.rows.size());
    for (auto r : block.rows) {
      if (r >= labels.size()) throw std::out_of_range("total_loss: block row outside the batch");
      block_labels.push_back(labels[r]);
    }
    Tensor ce = cross_entropy(block.logits, block_labels);
    aux = aux.defined() ? add(aux, ce) : ce;
  }
  return add(loss, mul_scalar(aux, aux_weight / static_cast<double>(blocks.size())));
}

SgdOptimizer::SgdOptimizer(std::vector<NamedParam> params, double lr_backbone, double lr_classifier, double momentum,
                           double weight_decay)
    : params_(std::move(params)),
      lr_backbone_(lr_backbone),
      lr_classifier_(lr_classifier),
      momentum_(momentum),
      weight_decay_(weight_decay) {
  for (const auto &p : params_) velocity_.emplace_back(p.tensor.numel(), 0.0);
}

void SgdOptimizer::zero_grad() {
  for (auto &p : params_) p.tensor.zero_grad();
}

void SgdOptimizer::set_learning_rates(double lr_backbone, double lr_classifier) {
  lr_backbone_ = lr_backbone;
  lr_classifier_ = lr_classifier;
}

void SgdOptimizer::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto &p = params_[i];
    const double lr = p.group == ParamGroup::classifier ? lr_classifier_ : lr_backbone_;
    auto w = p.tensor.mutable_data();
    auto g = p.tensor.grad();
    auto &v = velocity_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double d = g[j] + weight_decay_ * w[j];
      v[j] = momentum_ * v[j] + d;
      w[j] -= lr * v[j];
    }
  }
}

double train_step(Model &model, const DomainBatch &batch, const Partition *partition, SgdOptimizer &optimizer,
                  double aux_weight) {
  optimizer.zero_grad();
  auto main = model.forward_main(batch.features, NormMode::train);
  std::vector<Model::AuxBlock> blocks;
  if (model.config().use_aug) {
    if (!partition) throw std::invalid_argument("train_step: auxiliary path needs a partition");
    blocks = model.forward_aux(batch.features, batch.domains, *partition, NormMode::train);
  }
  Tensor loss = total_loss(main.logits, blocks, batch.labels, aux_weight);
  const double value = loss.item();
  if (!std::isfinite(value)) {
    throw std::runtime_error("train_step: non-finite loss (" + format_double(value) + ")" +
                             (partition ? " with partition " + partition->label() : ""));
  }
  loss.backward();
  optimizer.step();
  return value;
}

std::pair<Dataset, Dataset> split_validation(const Dataset &source, double fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x76616cULL);
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> val_rows;
  for (auto d : source.present_domains()) {
    auto rows = source.rows_of_domain(d);
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(rows.size())));
    val_rows.insert(val_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_rows.insert(train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_val), rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(val_rows.begin(), val_rows.end());
  return {source.subset(train_rows), source.subset(val_rows)};
}

TrainResult train(Model &model, const Dataset &source, const Dataset &target, const TrainConfig &config,
                  FusionStrategy strategy, SubpathScope scope,
                  const std::function<void(const EpochMetrics &)> &on_epoch) {
  config.validate();
  if (source.present_domains().size() != model.config().domains) {
    throw std::invalid_argument("train: model expects " + std::to_string(model.config().domains) +
                                " source domains, data has " + std::to_string(source.present_domains().size()));
  }
  auto [train_set, val_set] = split_validation(source, config.val_fraction, config.seed);
  DomainBalancedSampler sampler(train_set, config.per_domain_batch, config.seed);
  const std::size_t iterations = config.iterations_per_epoch
                                     ? config.iterations_per_epoch
                                     : (sampler.largest_domain() + config.per_domain_batch - 1) / config.per_domain_batch;
  SgdOptimizer optimizer(model.parameters(), config.lr_backbone, config.lr_classifier, config.momentum,
                         config.weight_decay);
  const bool aug = model.config().use_aug;
  const FusionStrategy ensemble = aug ? strategy : FusionStrategy::MainOnly;
  std::mt19937_64 combination_rng = tagged_rng(config.seed, kCombinationTag);

  TrainResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.lr_step) {
      const double decay = std::pow(config.lr_gamma, static_cast<double>(epoch / config.lr_step));
      optimizer.set_learning_rates(config.lr_backbone * decay, config.lr_classifier * decay);
    }
    double loss_sum = 0.0;
    for (std::size_t it = 0; it < iterations; ++it) {
      DomainBatch batch = sampler.next();
      if (aug) {
        Partition partition = sample_combination(model.combinations(), combination_rng, config.combination_mode);
        loss_sum += train_step(model, batch, &partition, optimizer, config.aux_weight);
      } else {
        loss_sum += train_step(model, batch, nullptr, optimizer, config.aux_weight);
      }
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = loss_sum / static_cast<double>(iterations);
    m.src_acc = val_set.size() ? evaluate(model, val_set, ensemble, scope).fused_accuracy : 0.0;
    const EvalResult tgt = evaluate(model, target, ensemble, scope);
    m.tgt_acc_main = tgt.path_accuracy.front().second;
    m.tgt_acc_ensemble = tgt.fused_accuracy;
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  std::ostringstream state;
  state << sampler.rng() << ' ' << combination_rng;
  result.rng_state = state.str();
  return result;
}

std::string metrics_csv(const std::vector<EpochMetrics> &metrics) {
  std::string out = "epoch,train_loss,src_acc,tgt_acc_main,tgt_acc_ensemble\n";
  for (const auto &m : metrics) {
    out += std::to_string(m.epoch) + "," + format_double(m.train_loss) + "," + format_double(m.src_acc) + "," +
           format_double(m.tgt_acc_main) + "," + format_double(m.tgt_acc_ensemble) + "\n";
  }
  return out;
}

}  // namespace naug
