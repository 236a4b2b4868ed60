#pragma once

#include <string>
#include <vector>

#include "normaug/datagen.hpp"
#include "normaug/model.hpp"

namespace naug {

struct DivergenceReport {
  double d_s2s = 0.0;
  double d_s2t = 0.0;
  std::vector<std::vector<double>> domain_means;  // one per source set, in input order
  std::vector<double> source_mean;                // sample-weighted over all source rows
  std::vector<double> target_mean;
};

// Each tensor is an [n x F] feature matrix.
//   d_s2s = (1/N) sum_d |f_s - f_d|,  d_s2t = |f_s - f_t|  (Euclidean)
DivergenceReport divergence_from_features(const std::vector<Tensor> &sources, const Tensor &target);

// Penultimate main-path features in eval mode, [size x feature_dim].
Tensor extract_features(Model &model, const Dataset &data, std::size_t chunk_size = 256);

// Source sets are the domains present in `source`, in ascending id order.
DivergenceReport divergence(Model &model, const Dataset &source, const Dataset &target);

// Mean L2 distance between the probe rows' main-path features when the
// probe batch is normalized alone and when it is normalized together with
// each companion batch (batch-statistics mode, no running-stat updates).
std::vector<double> perturbation_probe(Model &model, const Tensor &probe, const std::vector<Tensor> &companions);

std::string divergence_csv(const DivergenceReport &report);

}  // namespace naug
