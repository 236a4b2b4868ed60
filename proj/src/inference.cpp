#include "normaug/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "normaug/io.hpp"
#include "normaug/ops.hpp"

namespace naug {

namespace {

struct StrategyName {
  FusionStrategy strategy;
  const char *name;
};

constexpr StrategyName kStrategyNames[] = {
    {FusionStrategy::MeanMeanIM, "MeanMeanIM"}, {FusionStrategy::MeanAll, "MeanAll"},
    {FusionStrategy::MainOnly, "MainOnly"},     {FusionStrategy::MeanI, "MeanI"},
    {FusionStrategy::MaxI, "MaxI"},             {FusionStrategy::MaxIM, "MaxIM"},
    {FusionStrategy::MaxMeanI_M, "MaxMeanI_M"}, {FusionStrategy::MeanMaxI_M, "MeanMaxI_M"},
};

using Matrix = std::vector<double>;

Matrix normalized_rows(const Tensor &p, std::size_t cols) {
  Matrix out(p.data().begin(), p.data().end());
  for (std::size_t r = 0; r < out.size() / cols; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += out[r * cols + c];
    if (!(total > 0.0)) throw std::invalid_argument("fuse: probability row with nonpositive sum");
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= total;
  }
  return out;
}

// Compensated sum, then the quotient corrected by its residual: the result
// is the exact mean of the inputs rounded once.
Matrix mean_of(const std::vector<const Matrix *> &items) {
  const double n = static_cast<double>(items.size());
  Matrix out(items.front()->size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double hi = 0.0, lo = 0.0;
    for (const auto *m : items) {
      const double x = (*m)[i];
      const double s = hi + x;
      const double b = s - hi;
      lo += (hi - (s - b)) + (x - b);
      hi = s;
    }
    const double q = hi / n;
    out[i] = q + (std::fma(-q, n, hi) + lo) / n;
  }
  return out;
}

Matrix renormalized_max(const std::vector<const Matrix *> &items, std::size_t cols) {
  Matrix out(*items.front());
  for (const auto *m : items)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], (*m)[i]);
  for (std::size_t r = 0; r < out.size() / cols; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += out[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= total;
  }
  return out;
}

std::size_t argmax_row(std::span<const double> values, std::size_t row, std::size_t cols) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < cols; ++c)
    if (values[row * cols + c] > values[row * cols + best]) best = c;
  return best;
}

Tensor concat_rows(const std::vector<Tensor> &chunks) {
  std::size_t rows = 0;
  std::vector<double> values;
  for (const auto &c : chunks) {
    rows += c.dim(0);
    values.insert(values.end(), c.data().begin(), c.data().end());
  }
  return Tensor({rows, chunks.front().dim(1)}, std::move(values));
}

}  // namespace

std::string to_string(FusionStrategy strategy) {
  for (const auto &s : kStrategyNames)
    if (s.strategy == strategy) return s.name;
  return "?";
}

std::string to_string(SubpathScope scope) {
  return scope == SubpathScope::independent_only ? "independent_only" : "all_units";
}

FusionStrategy parse_fusion_strategy(const std::string &name) {
  for (const auto &s : kStrategyNames)
    if (name == s.name) return s.strategy;
  throw std::invalid_argument("unknown fusion strategy '" + name + "'");
}

SubpathScope parse_subpath_scope(const std::string &name) {
  if (name == "independent_only") return SubpathScope::independent_only;
  if (name == "all_units") return SubpathScope::all_units;
  throw std::invalid_argument("unknown sub-path scope '" + name + "'");
}

const std::vector<FusionStrategy> &all_fusion_strategies() {
  static const std::vector<FusionStrategy> all = [] {
    std::vector<FusionStrategy> v;
    for (const auto &s : kStrategyNames) v.push_back(s.strategy);
    return v;
  }();
  return all;
}

bool uses_subpaths(FusionStrategy strategy) { return strategy != FusionStrategy::MainOnly; }

Tensor fuse(FusionStrategy strategy, const Tensor &main, const std::vector<Tensor> &subpaths) {
  if (main.rank() != 2) throw ShapeError("fuse", "expected [B x C] probabilities, got " + shape_to_string(main.shape()));
  const std::size_t cols = main.dim(1);
  for (const auto &s : subpaths)
    if (s.shape() != main.shape()) throw ShapeError("fuse", main.shape(), s.shape());
  if (uses_subpaths(strategy) && subpaths.empty()) {
    throw std::invalid_argument("fuse: strategy " + to_string(strategy) + " needs at least one sub-path");
  }
  const Matrix m = normalized_rows(main, cols);
  std::vector<Matrix> subs;
  subs.reserve(subpaths.size());
  for (const auto &s : subpaths) subs.push_back(normalized_rows(s, cols));
  std::vector<const Matrix *> sub_ptrs;
  for (const auto &s : subs) sub_ptrs.push_back(&s);
  std::vector<const Matrix *> all_ptrs{&m};
  all_ptrs.insert(all_ptrs.end(), sub_ptrs.begin(), sub_ptrs.end());

  Matrix out;
  switch (strategy) {
    case FusionStrategy::MainOnly: out = m; break;
    case FusionStrategy::MeanMeanIM: {
      const Matrix avg = mean_of(sub_ptrs);
      out = mean_of({&m, &avg});
      break;
    }
    case FusionStrategy::MeanAll: out = mean_of(all_ptrs); break;
    case FusionStrategy::MeanI: out = mean_of(sub_ptrs); break;
    case FusionStrategy::MaxI: out = renormalized_max(sub_ptrs, cols); break;
    case FusionStrategy::MaxIM: out = renormalized_max(all_ptrs, cols); break;
    case FusionStrategy::MaxMeanI_M: {
      const Matrix avg = mean_of(sub_ptrs);
      out = renormalized_max({&avg, &m}, cols);
      break;
    }
    case FusionStrategy::MeanMaxI_M: {
      const Matrix peak = renormalized_max(sub_ptrs, cols);
      out = mean_of({&peak, &m});
      break;
    }
  }
  return Tensor(main.shape(), std::move(out));
}

std::vector<DomainSubset> subpaths_in_scope(const Model &model, SubpathScope scope) {
  std::vector<DomainSubset> keys;
  for (const auto &k : model.bank_keys())
    if (scope == SubpathScope::all_units || k.size() == 1) keys.push_back(k);
  return keys;
}

Prediction predict(Model &model, const Tensor &features, FusionStrategy strategy, SubpathScope scope) {
  NoGradGuard no_grad;
  Prediction out;
  Tensor main = softmax(model.forward_main(features, NormMode::eval).logits);
  out.paths.push_back({"main", main});
  std::vector<Tensor> subs;
  if (uses_subpaths(strategy)) {
    if (!model.config().use_aug) {
      throw std::invalid_argument("strategy " + to_string(strategy) + " needs the auxiliary path (use_aug=false)");
    }
    const auto keys = subpaths_in_scope(model, scope);
    if (scope == SubpathScope::all_units) {
      for (const auto &k : keys)
        for (std::size_t l = 0; l < model.norm_layer_count(); ++l)
          if (model.bank(l).unit(k).updates == 0) {
            throw std::invalid_argument("scope all_units: unit {" + k.label() + "} has never-updated statistics");
          }
    }
    for (const auto &k : keys) {
      Tensor p = softmax(model.forward_subpath(features, k, NormMode::eval).logits);
      out.paths.push_back({"aux_" + k.label(), p});
      subs.push_back(p);
    }
  }
  out.fused = fuse(strategy, main, subs);
  return out;
}

Tensor rows_tensor(const Dataset &data, std::size_t begin, std::size_t end) {
  std::vector<double> values(data.features.begin() + static_cast<std::ptrdiff_t>(begin * data.dim),
                             data.features.begin() + static_cast<std::ptrdiff_t>(end * data.dim));
  return Tensor({end - begin, data.dim}, std::move(values));
}

Prediction predict_dataset(Model &model, const Dataset &data, FusionStrategy strategy, SubpathScope scope,
                           std::size_t chunk_size) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty split");
  if (chunk_size == 0) throw std::invalid_argument("evaluate: chunk size must be positive");
  std::vector<Prediction> chunks;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk_size) {
    const std::size_t end = std::min(data.size(), begin + chunk_size);
    chunks.push_back(predict(model, rows_tensor(data, begin, end), strategy, scope));
  }
  Prediction out;
  std::vector<Tensor> fused;
  for (auto &c : chunks) fused.push_back(c.fused);
  out.fused = concat_rows(fused);
  for (std::size_t p = 0; p < chunks.front().paths.size(); ++p) {
    std::vector<Tensor> parts;
    for (auto &c : chunks) parts.push_back(c.paths[p].probs);
    out.paths.push_back({chunks.front().paths[p].name, concat_rows(parts)});
  }
  return out;
}

EvalResult evaluate(Model &model, const Dataset &data, FusionStrategy strategy, SubpathScope scope,
                    std::size_t chunk_size) {
  Prediction pred = predict_dataset(model, data, strategy, scope, chunk_size);
  const std::size_t cols = pred.fused.dim(1);
  if (cols != data.num_classes && data.num_classes != 0 && cols < data.num_classes) {
    throw std::invalid_argument("evaluate: model predicts " + std::to_string(cols) + " classes, data has " +
                                std::to_string(data.num_classes));
  }
  auto accuracy = [&](const Tensor &probs) {
    std::size_t correct = 0;
    for (std::size_t r = 0; r < data.size(); ++r) correct += argmax_row(probs.data(), r, cols) == data.labels[r];
    return static_cast<double>(correct) / static_cast<double>(data.size());
  };
  EvalResult result;
  result.samples = data.size();
  for (const auto &p : pred.paths) result.path_accuracy.emplace_back(p.name, accuracy(p.probs));
  result.fused_accuracy = accuracy(pred.fused);
  return result;
}

std::string eval_csv(const EvalResult &result) {
  std::string out = "path_name,accuracy\n";
  for (const auto &[name, acc] : result.path_accuracy) out += name + "," + format_double(acc) + "\n";
  out += "fused," + format_double(result.fused_accuracy) + "\n";
  return out;
}

}  // namespace naug
