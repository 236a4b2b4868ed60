#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "normaug/tensor.hpp"

namespace naug {

inline constexpr double kDefaultBnEps = 1e-5;
inline constexpr double kDefaultBnMomentum = 0.1;

// Nonempty set of source-domain indices, stored as a bitmask.
class DomainSubset {
 public:
  static constexpr std::size_t kMaxDomains = 32;

  static DomainSubset from_mask(std::uint32_t mask, std::size_t domain_count);
  static DomainSubset of(const std::vector<std::size_t> &members, std::size_t domain_count);
  static DomainSubset singleton(std::size_t domain, std::size_t domain_count);
  static DomainSubset all(std::size_t domain_count);

  std::uint32_t mask() const { return mask_; }
  std::size_t size() const;
  bool contains(std::size_t domain) const { return domain < kMaxDomains && ((mask_ >> domain) & 1U); }
  std::size_t lowest() const;
  std::vector<std::size_t> members() const;
  // Members joined by '+', e.g. "0+2". Safe inside CSV fields and names.
  std::string label() const;
  static DomainSubset parse(const std::string &label, std::size_t domain_count);

  auto operator<=>(const DomainSubset &) const = default;

 private:
  explicit DomainSubset(std::uint32_t mask) : mask_(mask) {}
  std::uint32_t mask_ = 0;
};

// Disjoint cover of all domains 0..N-1 by DomainSubsets, held in canonical
// order (ascending lowest member).
class Partition {
 public:
  Partition(std::vector<DomainSubset> groups, std::size_t domain_count);

  static Partition singletons(std::size_t domain_count);
  static Partition whole(std::size_t domain_count);

  const std::vector<DomainSubset> &groups() const { return groups_; }
  std::size_t size() const { return groups_.size(); }
  std::size_t domain_count() const { return domain_count_; }
  const DomainSubset &group_of(std::size_t domain) const;
  // e.g. "{0+1}{2}"
  std::string label() const;

  bool operator==(const Partition &) const = default;

 private:
  std::vector<DomainSubset> groups_;
  std::size_t domain_count_ = 0;
};

// Canonical partition order: more groups first, then lexicographic masks.
bool canonical_less(const Partition &a, const Partition &b);

// All-singletons partition plus {all-but-i, {i}} for every domain i, deduplicated
// (so N = 2 yields only the singletons partition). Requires N >= 2.
std::vector<Partition> enumerate_reduced_combinations(std::size_t domain_count);
// All-singletons plus every partition with one merged group of size
// 2..N-1; 1 + sum_{k=2}^{N-1} C(N,k) partitions. Requires N >= 3.
std::vector<Partition> enumerate_full_combinations(std::size_t domain_count);

enum class NormMode {
  train,        // batch statistics, running statistics updated
  eval,         // running statistics
  batch_stats,  // batch statistics, running statistics untouched
};

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> variance;  // population variance
  std::vector<double> sigma;     // sqrt(variance + eps)
};

// Per-channel statistics over the selected rows (and all spatial positions
// for rank-4 input).
BatchStats compute_batch_stats(const Tensor &features, std::span<const std::size_t> rows,
                               double eps = kDefaultBnEps);

struct BNUnit {
  explicit BNUnit(std::size_t channels, double momentum = kDefaultBnMomentum, double eps = kDefaultBnEps);

  std::size_t channels() const { return running_mean.size(); }

  Tensor gamma;
  Tensor beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum;
  double eps;
  // Number of train-mode passes that updated the running statistics.
  std::size_t updates = 0;
};

Tensor bn_forward(BNUnit &unit, const Tensor &features, NormMode mode);
// Normalizes only `rows`; the result has rows.size() rows in that order.
Tensor bn_forward(BNUnit &unit, const Tensor &features, const std::vector<std::size_t> &rows, NormMode mode);

// Optimized normalization: a learned convex mixture of the batch- and
// instance-standardized input followed by the affine transform.
struct ONUnit {
  explicit ONUnit(std::size_t channels, double momentum = kDefaultBnMomentum, double eps = kDefaultBnEps);

  std::size_t channels() const { return bn.channels(); }
  // (w_bn, w_in) = softmax(mixture_logits)
  std::pair<double, double> mixture_weights() const;

  // gamma, beta and the running BN statistics live here.
  BNUnit bn;
  Tensor mixture_logits;  // [2]: BN weight, IN weight
};

Tensor on_forward(ONUnit &unit, const Tensor &features, NormMode mode);

// Per-sample standardization: over spatial positions per channel for rank 4,
// over the feature axis for rank 2.
Tensor instance_standardize(const Tensor &features, double eps);

// BN units keyed by domain subset. One unit per key, so every partition that
// names a subset reaches the same parameters.
class BNBank {
 public:
  BNBank(std::size_t domain_count, std::size_t channels, const std::vector<Partition> &scheme,
         double momentum = kDefaultBnMomentum, double eps = kDefaultBnEps);

  std::size_t domain_count() const { return domain_count_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return units_.size(); }
  bool contains(const DomainSubset &subset) const { return units_.count(subset) != 0; }
  BNUnit &unit(const DomainSubset &subset);
  const BNUnit &unit(const DomainSubset &subset) const;
  std::vector<DomainSubset> keys() const;
  std::map<DomainSubset, BNUnit> &units() { return units_; }
  const std::map<DomainSubset, BNUnit> &units() const { return units_; }

 private:
  std::size_t domain_count_;
  std::size_t channels_;
  std::map<DomainSubset, BNUnit> units_;
};

// Rows whose domain falls in each group are normalized by that group's unit
// using statistics over those rows only; output rows keep input order.
Tensor partitioned_forward(BNBank &bank, const Partition &partition, const Tensor &features,
                           std::span<const std::size_t> domain_ids, NormMode mode);

}  // namespace naug
