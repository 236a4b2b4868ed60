#include "normaug/normbank.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "normaug/ops.hpp"

namespace naug {

// ---------------------------------------------------------------------------
// DomainSubset / Partition

DomainSubset DomainSubset::from_mask(std::uint32_t mask, std::size_t domain_count) {
  if (domain_count == 0 || domain_count > kMaxDomains) {
    throw std::invalid_argument("domain subset: domain count " + std::to_string(domain_count) +
                                " outside 1.." + std::to_string(kMaxDomains));
  }
  if (mask == 0) throw std::invalid_argument("domain subset: empty");
  if (domain_count < kMaxDomains && (mask >> domain_count) != 0) {
    throw std::invalid_argument("domain subset: member beyond domain count " + std::to_string(domain_count));
  }
  return DomainSubset(mask);
}

DomainSubset DomainSubset::of(const std::vector<std::size_t> &members, std::size_t domain_count) {
  std::uint32_t mask = 0;
  for (auto m : members) {
    if (m >= kMaxDomains || m >= domain_count) {
      throw std::invalid_argument("domain subset: member " + std::to_string(m) + " out of range");
    }
    mask |= 1U << m;
  }
  return from_mask(mask, domain_count);
}

DomainSubset DomainSubset::singleton(std::size_t domain, std::size_t domain_count) {
  return of({domain}, domain_count);
}

DomainSubset DomainSubset::all(std::size_t domain_count) {
  const std::uint32_t mask =
      domain_count >= kMaxDomains ? ~0U : (static_cast<std::uint32_t>(1U << domain_count) - 1U);
  return from_mask(mask, domain_count);
}

std::size_t DomainSubset::size() const { return static_cast<std::size_t>(std::popcount(mask_)); }

std::size_t DomainSubset::lowest() const { return static_cast<std::size_t>(std::countr_zero(mask_)); }

std::vector<std::size_t> DomainSubset::members() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < kMaxDomains; ++i)
    if (contains(i)) out.push_back(i);
  return out;
}

std::string DomainSubset::label() const {
  std::string out;
  for (auto m : members()) {
    if (!out.empty()) out += '+';
    out += std::to_string(m);
  }
  return out;
}

DomainSubset DomainSubset::parse(const std::string &label, std::size_t domain_count) {
  std::vector<std::size_t> members;
  std::stringstream ss(label);
  std::string part;
  while (std::getline(ss, part, '+')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw std::invalid_argument("domain subset: cannot parse '" + label + "'");
    }
    members.push_back(std::stoul(part));
  }
  return of(members, domain_count);
}

Partition::Partition(std::vector<DomainSubset> groups, std::size_t domain_count)
    : groups_(std::move(groups)), domain_count_(domain_count) {
  if (groups_.empty()) throw std::invalid_argument("partition: no groups");
  std::uint32_t seen = 0;
  for (const auto &g : groups_) {
    if (seen & g.mask()) throw std::invalid_argument("partition: groups overlap at " + g.label());
    seen |= g.mask();
  }
  if (seen != DomainSubset::all(domain_count).mask()) {
    throw std::invalid_argument("partition: groups do not cover all " + std::to_string(domain_count) +
                                " domains");
  }
  std::sort(groups_.begin(), groups_.end(),
            [](const DomainSubset &a, const DomainSubset &b) { return a.lowest() < b.lowest(); });
}

Partition Partition::singletons(std::size_t domain_count) {
  std::vector<DomainSubset> groups;
  for (std::size_t i = 0; i < domain_count; ++i) groups.push_back(DomainSubset::singleton(i, domain_count));
  return Partition(std::move(groups), domain_count);
}

Partition Partition::whole(std::size_t domain_count) {
  return Partition({DomainSubset::all(domain_count)}, domain_count);
}

const DomainSubset &Partition::group_of(std::size_t domain) const {
  for (const auto &g : groups_)
    if (g.contains(domain)) return g;
  throw std::out_of_range("partition: domain " + std::to_string(domain) + " not covered");
}

std::string Partition::label() const {
  std::string out;
  for (const auto &g : groups_) out += "{" + g.label() + "}";
  return out;
}

bool canonical_less(const Partition &a, const Partition &b) {
  if (a.size() != b.size()) return a.size() > b.size();
  return std::lexicographical_compare(
      a.groups().begin(), a.groups().end(), b.groups().begin(), b.groups().end(),
      [](const DomainSubset &x, const DomainSubset &y) { return x.mask() < y.mask(); });
}

namespace {

std::vector<Partition> sorted_unique(std::vector<Partition> parts) {
  std::sort(parts.begin(), parts.end(), canonical_less);
  parts.erase(std::unique(parts.begin(), parts.end()), parts.end());
  return parts;
}

Partition merged_with_singletons(std::uint32_t merged, std::size_t n) {
  std::vector<DomainSubset> groups{DomainSubset::from_mask(merged, n)};
  for (std::size_t i = 0; i < n; ++i)
    if (!((merged >> i) & 1U)) groups.push_back(DomainSubset::singleton(i, n));
  return Partition(std::move(groups), n);
}

}  // namespace

std::vector<Partition> enumerate_reduced_combinations(std::size_t domain_count) {
  if (domain_count < 2) throw std::invalid_argument("reduced combinations need at least 2 domains");
  std::vector<Partition> parts{Partition::singletons(domain_count)};
  const std::uint32_t all = DomainSubset::all(domain_count).mask();
  for (std::size_t i = 0; i < domain_count; ++i) {
    parts.push_back(merged_with_singletons(all & ~(1U << i), domain_count));
  }
  return sorted_unique(std::move(parts));
}

std::vector<Partition> enumerate_full_combinations(std::size_t domain_count) {
  if (domain_count < 3) throw std::invalid_argument("full combinations need at least 3 domains");
  if (domain_count > 20) throw std::invalid_argument("full combinations: too many domains");
  std::vector<Partition> parts{Partition::singletons(domain_count)};
  const std::uint32_t limit = 1U << domain_count;
  for (std::uint32_t mask = 1; mask < limit; ++mask) {
    const int k = std::popcount(mask);
    if (k >= 2 && static_cast<std::size_t>(k) <= domain_count - 1) {
      parts.push_back(merged_with_singletons(mask, domain_count));
    }
  }
  return sorted_unique(std::move(parts));
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

std::vector<std::size_t> channel_reduce_axes(const Tensor &x) {
  if (x.rank() == 2) return {0};
  if (x.rank() == 4) return {0, 2, 3};
  throw ShapeError("normalization", "expected rank 2 or 4 features, got " + shape_to_string(x.shape()));
}

// [C] parameter viewed so that it broadcasts along the channel axis.
Tensor channel_view(const Tensor &param, const Tensor &x) {
  if (x.rank() == 4) return reshape(param, {param.numel(), 1, 1});
  return param;
}

Tensor channel_constant(const std::vector<double> &values, const Tensor &x) {
  if (x.rank() == 4) return Tensor({values.size(), 1, 1}, values);
  return Tensor({values.size()}, values);
}

void check_channels(const std::string &op, const Tensor &x, std::size_t channels) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw ShapeError(op, "expected rank 2 or 4 features, got " + shape_to_string(x.shape()));
  }
  if (x.dim(1) != channels) {
    throw ShapeError(op, "channel mismatch: unit has " + std::to_string(channels) + ", features " +
                             shape_to_string(x.shape()));
  }
}

struct Standardized {
  Tensor xhat;
  Tensor mean;
  Tensor var;
};

Standardized batch_standardize(const Tensor &x, double eps) {
  const auto axes = channel_reduce_axes(x);
  Tensor mu = mean(x, axes);
  Tensor centered = sub(x, mu);
  Tensor var = mean(square(centered), axes);
  Tensor xhat = div(centered, sqrt(add_scalar(var, eps)));
  return {xhat, mu, var};
}

Tensor running_standardize(const BNUnit &unit, const Tensor &x) {
  std::vector<double> inv_sigma(unit.channels());
  for (std::size_t c = 0; c < unit.channels(); ++c) inv_sigma[c] = 1.0 / std::sqrt(unit.running_var[c] + unit.eps);
  return mul(sub(x, channel_constant(unit.running_mean, x)), channel_constant(inv_sigma, x));
}

void update_running(BNUnit &unit, const Standardized &s) {
  const double m = unit.momentum;
  auto mu = s.mean.data();
  auto var = s.var.data();
  for (std::size_t c = 0; c < unit.channels(); ++c) {
    unit.running_mean[c] = (1.0 - m) * unit.running_mean[c] + m * mu[c];
    unit.running_var[c] = (1.0 - m) * unit.running_var[c] + m * var[c];
  }
  ++unit.updates;
}

Tensor bn_standardize(BNUnit &unit, const Tensor &x, NormMode mode) {
  if (mode == NormMode::eval) return running_standardize(unit, x);
  Standardized s = batch_standardize(x, unit.eps);
  if (mode == NormMode::train) update_running(unit, s);
  return s.xhat;
}

Tensor affine(const BNUnit &unit, const Tensor &xhat) {
  return add(mul(xhat, channel_view(unit.gamma, xhat)), channel_view(unit.beta, xhat));
}

}  // namespace

BatchStats compute_batch_stats(const Tensor &features, std::span<const std::size_t> rows, double eps) {
  if (rows.empty()) throw std::invalid_argument("empty sub-batch");
  channel_reduce_axes(features);
  NoGradGuard no_grad;
  Tensor picked = gather_rows(features, std::vector<std::size_t>(rows.begin(), rows.end()));
  Standardized s = batch_standardize(picked, eps);
  BatchStats stats;
  stats.mean.assign(s.mean.data().begin(), s.mean.data().end());
  stats.variance.assign(s.var.data().begin(), s.var.data().end());
  stats.sigma.resize(stats.variance.size());
  for (std::size_t c = 0; c < stats.sigma.size(); ++c) stats.sigma[c] = std::sqrt(stats.variance[c] + eps);
  return stats;
}

BNUnit::BNUnit(std::size_t channels, double momentum_, double eps_)
    : gamma(Tensor::full({channels}, 1.0, true)),
      beta(Tensor::zeros({channels}, true)),
      running_mean(channels, 0.0),
      running_var(channels, 1.0),
      momentum(momentum_),
      eps(eps_) {
  if (channels == 0) throw std::invalid_argument("BN unit: zero channels");
  if (!(momentum > 0.0 && momentum <= 1.0)) throw std::invalid_argument("BN unit: momentum must be in (0,1]");
  if (!(eps > 0.0)) throw std::invalid_argument("BN unit: eps must be positive");
}

Tensor bn_forward(BNUnit &unit, const Tensor &features, NormMode mode) {
  check_channels("bn_forward", features, unit.channels());
  return affine(unit, bn_standardize(unit, features, mode));
}

Tensor bn_forward(BNUnit &unit, const Tensor &features, const std::vector<std::size_t> &rows, NormMode mode) {
  if (rows.empty()) throw std::invalid_argument("empty sub-batch");
  return bn_forward(unit, gather_rows(features, rows), mode);
}

ONUnit::ONUnit(std::size_t channels, double momentum, double eps)
    : bn(channels, momentum, eps), mixture_logits(Tensor::zeros({2}, true)) {}

std::pair<double, double> ONUnit::mixture_weights() const {
  auto z = mixture_logits.data();
  const double peak = std::max(z[0], z[1]);
  const double a = std::exp(z[0] - peak);
  const double b = std::exp(z[1] - peak);
  return {a / (a + b), b / (a + b)};
}

Tensor instance_standardize(const Tensor &x, double eps) {
  std::vector<std::size_t> axes;
  if (x.rank() == 4) {
    axes = {2, 3};
  } else if (x.rank() == 2) {
    if (x.dim(1) < 2) throw ShapeError("instance_standardize", "IN undefined for single-feature rows");
    axes = {1};
  } else {
    throw ShapeError("instance_standardize", "expected rank 2 or 4 features, got " + shape_to_string(x.shape()));
  }
  Tensor centered = sub(x, mean(x, axes));
  Tensor var = mean(square(centered), axes);
  return div(centered, sqrt(add_scalar(var, eps)));
}

Tensor on_forward(ONUnit &unit, const Tensor &features, NormMode mode) {
  check_channels("on_forward", features, unit.channels());
  if (features.rank() == 2 && features.dim(1) < 2) {
    throw ShapeError("on_forward", "IN undefined for single-feature rows");
  }
  Tensor weights = softmax(reshape(unit.mixture_logits, {1, 2}));
  Tensor bn_part = bn_standardize(unit.bn, features, mode);
  Tensor in_part = instance_standardize(features, unit.bn.eps);
  Tensor mixed = add(mul(bn_part, element(weights, 0)), mul(in_part, element(weights, 1)));
  return affine(unit.bn, mixed);
}

BNBank::BNBank(std::size_t domain_count, std::size_t channels, const std::vector<Partition> &scheme,
               double momentum, double eps)
    : domain_count_(domain_count), channels_(channels) {
  if (scheme.empty()) throw std::invalid_argument("BN bank: empty combination scheme");
  for (const auto &p : scheme) {
    if (p.domain_count() != domain_count) {
      throw std::invalid_argument("BN bank: partition " + p.label() + " has wrong domain count");
    }
    for (const auto &g : p.groups()) {
      if (!units_.count(g)) units_.emplace(g, BNUnit(channels, momentum, eps));
    }
  }
}

BNUnit &BNBank::unit(const DomainSubset &subset) {
  auto it = units_.find(subset);
  if (it == units_.end()) throw std::out_of_range("BN bank: no unit for subset {" + subset.label() + "}");
  return it->second;
}

const BNUnit &BNBank::unit(const DomainSubset &subset) const {
  auto it = units_.find(subset);
  if (it == units_.end()) throw std::out_of_range("BN bank: no unit for subset {" + subset.label() + "}");
  return it->second;
}

std::vector<DomainSubset> BNBank::keys() const {
  std::vector<DomainSubset> out;
  for (const auto &[k, _] : units_) out.push_back(k);
  return out;
}

Tensor partitioned_forward(BNBank &bank, const Partition &partition, const Tensor &features,
                           std::span<const std::size_t> domain_ids, NormMode mode) {
  if (partition.domain_count() != bank.domain_count()) {
    throw std::invalid_argument("partitioned_forward: partition covers " + std::to_string(partition.domain_count()) +
                                " domains, bank " + std::to_string(bank.domain_count()));
  }
  if (features.rank() == 0 || domain_ids.size() != features.dim(0)) {
    throw ShapeError("partitioned_forward", "need one domain id per row, got " + std::to_string(domain_ids.size()) +
                                                " for " + shape_to_string(features.shape()));
  }
  std::vector<std::vector<std::size_t>> rows(partition.size());
  for (std::size_t r = 0; r < domain_ids.size(); ++r) {
    if (domain_ids[r] >= bank.domain_count()) {
      throw std::invalid_argument("partitioned_forward: domain id " + std::to_string(domain_ids[r]) +
                                  " out of range");
    }
    for (std::size_t g = 0; g < partition.size(); ++g) {
      if (partition.groups()[g].contains(domain_ids[r])) {
        rows[g].push_back(r);
        break;
      }
    }
  }
  std::vector<Tensor> parts;
  std::vector<std::vector<std::size_t>> used_rows;
  for (std::size_t g = 0; g < partition.size(); ++g) {
    const DomainSubset &subset = partition.groups()[g];
    BNUnit &unit = bank.unit(subset);
    if (rows[g].empty() && mode == NormMode::eval) continue;
    if (rows[g].size() < 2 && mode != NormMode::eval) {
      throw std::invalid_argument("degenerate sub-batch: subset {" + subset.label() + "} selects " +
                                  std::to_string(rows[g].size()) + " rows");
    }
    parts.push_back(bn_forward(unit, features, rows[g], mode));
    used_rows.push_back(std::move(rows[g]));
  }
  return assemble_rows(parts, used_rows, features.dim(0));
}

}  // namespace naug
