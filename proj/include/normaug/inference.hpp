#pragma once

#include <string>
#include <utility>
#include <vector>

#include "normaug/datagen.hpp"
#include "normaug/model.hpp"

namespace naug {

// Test-time combination of the main-path prediction (M) with the sub-path
// predictions (I). Max variants take the elementwise max across paths and
// renormalize to sum 1.
enum class FusionStrategy {
  MeanMeanIM,  // (M + mean(I)) / 2
  MeanAll,     // mean(M, I...)
  MainOnly,    // M
  MeanI,       // mean(I)
  MaxI,        // max(I)
  MaxIM,       // max(M, I...)
  MaxMeanI_M,  // max(mean(I), M)
  MeanMaxI_M,  // (max(I) + M) / 2
};

enum class SubpathScope {
  independent_only,  // single-domain units
  all_units,         // every bank unit
};

std::string to_string(FusionStrategy strategy);
std::string to_string(SubpathScope scope);
FusionStrategy parse_fusion_strategy(const std::string &name);
SubpathScope parse_subpath_scope(const std::string &name);
const std::vector<FusionStrategy> &all_fusion_strategies();
bool uses_subpaths(FusionStrategy strategy);

// Fuses [B, C] probability matrices. Each input row is first rescaled to sum
// to 1, so the result does not change under a common positive rescaling of
// the inputs.
Tensor fuse(FusionStrategy strategy, const Tensor &main, const std::vector<Tensor> &subpaths);

struct PathProbs {
  std::string name;  // "main" or "aux_<subset>"
  Tensor probs;
};

struct Prediction {
  Tensor fused;
  std::vector<PathProbs> paths;  // main first, then sub-paths in key order
};

std::vector<DomainSubset> subpaths_in_scope(const Model &model, SubpathScope scope);

// Eval-mode forward through the main path and every sub-path in scope.
Prediction predict(Model &model, const Tensor &features, FusionStrategy strategy, SubpathScope scope);

struct EvalResult {
  std::vector<std::pair<std::string, double>> path_accuracy;
  double fused_accuracy = 0.0;
  std::size_t samples = 0;
};

// Accuracy of every path and of the fused prediction, from one forward pass
// per chunk.
EvalResult evaluate(Model &model, const Dataset &data, FusionStrategy strategy, SubpathScope scope,
                    std::size_t chunk_size = 256);

// Probabilities for every row of `data`, chunked.
Prediction predict_dataset(Model &model, const Dataset &data, FusionStrategy strategy, SubpathScope scope,
                           std::size_t chunk_size = 256);

std::string eval_csv(const EvalResult &result);

Tensor rows_tensor(const Dataset &data, std::size_t begin, std::size_t end);

}  // namespace naug
