#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "normaug/grad_check.hpp"
#include "normaug/normbank.hpp"
#include "normaug/ops.hpp"

using namespace naug;

namespace {

Tensor random_tensor(const Shape &shape, std::mt19937_64 &rng, double scale = 1.0, double shift = 0.0) {
  std::normal_distribution<double> dist(shift, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto &x : v) x = dist(rng);
  return Tensor(shape, v);
}

// Straightforward two-pass mean / population variance per column.
void two_pass(const Tensor &x, const std::vector<std::size_t> &rows, std::size_t c, double &mu, double &var) {
  const std::size_t cols = x.dim(1);
  double s = 0.0;
  for (auto r : rows) s += x[r * cols + c];
  mu = s / rows.size();
  double ss = 0.0;
  for (auto r : rows) ss += (x[r * cols + c] - mu) * (x[r * cols + c] - mu);
  var = ss / rows.size();
}

std::vector<double> values(const Tensor &t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

// --- subsets & partitions --------------------------------------------------

TEST(DomainSubset, RejectsEmptyAndOutOfRange) {
  EXPECT_THROW(DomainSubset::from_mask(0, 3), std::invalid_argument);
  EXPECT_THROW(DomainSubset::from_mask(0b1000, 3), std::invalid_argument);
  EXPECT_EQ(DomainSubset::of({0, 2}, 3).label(), "0+2");
  EXPECT_EQ(DomainSubset::parse("0+2", 3), DomainSubset::of({2, 0}, 3));
}

TEST(Partition, ValidatesCover) {
  EXPECT_THROW(Partition({DomainSubset::of({0, 1}, 3)}, 3), std::invalid_argument);
  EXPECT_THROW(Partition({DomainSubset::of({0, 1}, 3), DomainSubset::of({1, 2}, 3)}, 3), std::invalid_argument);
  Partition p({DomainSubset::of({2}, 3), DomainSubset::of({0, 1}, 3)}, 3);
  EXPECT_EQ(p.label(), "{0+1}{2}");
}

TEST(Enumerate, ReducedThreeDomains) {
  auto parts = enumerate_reduced_combinations(3);
  ASSERT_EQ(parts.size(), 4u);
  auto s = [](std::vector<std::size_t> m) { return DomainSubset::of(m, 3); };
  std::set<std::string> got;
  for (const auto &p : parts) got.insert(p.label());
  std::set<std::string> expected{
      Partition({s({0}), s({1}), s({2})}, 3).label(), Partition({s({0, 1}), s({2})}, 3).label(),
      Partition({s({0}), s({1, 2})}, 3).label(), Partition({s({1}), s({0, 2})}, 3).label()};
  EXPECT_EQ(got, expected);
  EXPECT_EQ(parts.front(), Partition::singletons(3));
  EXPECT_TRUE(std::is_sorted(parts.begin(), parts.end(), canonical_less));
}

TEST(Enumerate, ReducedFourDomains) {
  auto parts = enumerate_reduced_combinations(4);
  std::set<std::string> got;
  for (const auto &p : parts) got.insert(p.label());
  EXPECT_EQ(got, (std::set<std::string>{"{0}{1}{2}{3}", "{0+1+2}{3}", "{0+1+3}{2}", "{0+2+3}{1}", "{0}{1+2+3}"}));
}

TEST(Enumerate, ReducedFiveDomainsDistinctAndValid) {
  auto parts = enumerate_reduced_combinations(5);
  ASSERT_EQ(parts.size(), 6u);
  std::set<std::string> labels;
  for (const auto &p : parts) {
    labels.insert(p.label());
    // independent validity check: disjoint cover of 0..4
    std::uint32_t seen = 0;
    for (const auto &g : p.groups()) {
      EXPECT_EQ(seen & g.mask(), 0u);
      seen |= g.mask();
    }
    EXPECT_EQ(seen, 0b11111u);
  }
  EXPECT_EQ(labels.size(), 6u);
}

TEST(Enumerate, TwoDomainsCollapse) {
  auto parts = enumerate_reduced_combinations(2);
  ASSERT_EQ(parts.size(), 1u);
  EXPECT_EQ(parts[0], Partition::singletons(2));
  EXPECT_THROW(enumerate_reduced_combinations(1), std::invalid_argument);
}

TEST(Enumerate, FullCounts) {
  EXPECT_EQ(enumerate_full_combinations(3).size(), 4u);
  EXPECT_EQ(enumerate_full_combinations(4).size(), 11u);
  EXPECT_EQ(enumerate_full_combinations(5).size(), 1u + 10 + 10 + 5);
  EXPECT_THROW(enumerate_full_combinations(2), std::invalid_argument);
  std::set<std::string> r3, f3;
  for (auto &p : enumerate_reduced_combinations(3)) r3.insert(p.label());
  for (auto &p : enumerate_full_combinations(3)) f3.insert(p.label());
  EXPECT_EQ(r3, f3);
  for (const auto &p : enumerate_full_combinations(4)) {
    std::size_t merged = 0;
    for (const auto &g : p.groups()) merged += g.size() > 1;
    EXPECT_LE(merged, 1u);
  }
}

// --- statistics ------------------------------------------------------------

TEST(BatchStats, SimpleColumn) {
  Tensor x({2, 1}, {1, 3});
  std::vector<std::size_t> rows{0, 1};
  auto st = compute_batch_stats(x, rows, 1e-300);
  EXPECT_DOUBLE_EQ(st.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(st.sigma[0], 1.0);
}

TEST(BatchStats, ConstantColumn) {
  Tensor x({3, 1}, {5, 5, 5});
  std::vector<std::size_t> rows{0, 1, 2};
  auto st = compute_batch_stats(x, rows, 1e-5);
  EXPECT_DOUBLE_EQ(st.mean[0], 5.0);
  EXPECT_DOUBLE_EQ(st.sigma[0], std::sqrt(1e-5));
}

TEST(BatchStats, EmptyRowsRejected) {
  Tensor x({3, 1}, {5, 5, 5});
  try {
    compute_batch_stats(x, std::vector<std::size_t>{}, 1e-5);
    FAIL();
  } catch (const std::invalid_argument &e) {
    EXPECT_NE(std::string(e.what()).find("empty sub-batch"), std::string::npos);
  }
}

TEST(BatchStats, MatchesTwoPassOracle) {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({16, 8}, rng, 2.0, 3.0);
  std::vector<std::size_t> rows(16);
  for (std::size_t i = 0; i < 16; ++i) rows[i] = i;
  auto st = compute_batch_stats(x, rows, 1e-5);
  for (std::size_t c = 0; c < 8; ++c) {
    double mu, var;
    two_pass(x, rows, c, mu, var);
    EXPECT_NEAR(st.mean[c], mu, 1e-12);
    EXPECT_NEAR(st.variance[c], var, 1e-12);
    EXPECT_NEAR(st.sigma[c], std::sqrt(var + 1e-5), 1e-12);
  }
}

TEST(BatchStats, Rank4ReducesSpatialPositions) {
  Tensor x({2, 1, 1, 2}, {1, 3, 5, 7});
  std::vector<std::size_t> rows{0, 1};
  auto st = compute_batch_stats(x, rows, 1e-5);
  EXPECT_DOUBLE_EQ(st.mean[0], 4.0);
  EXPECT_DOUBLE_EQ(st.variance[0], 5.0);
}

// --- bn_forward ------------------------------------------------------------

TEST(BNForward, StandardizesAndAppliesAffine) {
  BNUnit unit(1, 0.1, 1e-300);
  Tensor y = bn_forward(unit, Tensor({2, 1}, {1, 3}), NormMode::train);
  EXPECT_EQ(values(y), (std::vector<double>{-1, 1}));
  unit.gamma.mutable_data()[0] = 2.0;
  unit.beta.mutable_data()[0] = 1.0;
  y = bn_forward(unit, Tensor({2, 1}, {-1, 1}), NormMode::train);
  EXPECT_EQ(values(y), (std::vector<double>{-1, 3}));
}

TEST(BNForward, RunningMeanUpdate) {
  BNUnit unit(1);
  bn_forward(unit, Tensor({2, 1}, {1, 3}), NormMode::train);
  EXPECT_DOUBLE_EQ(unit.running_mean[0], 0.2);
  EXPECT_DOUBLE_EQ(unit.running_var[0], 0.9 * 1.0 + 0.1 * 1.0);
  EXPECT_EQ(unit.updates, 1u);
}

TEST(BNForward, EvalUsesRunningStatsAndDoesNotUpdate) {
  BNUnit unit(1);
  unit.running_mean[0] = 1.0;
  unit.running_var[0] = 4.0 - unit.eps;
  Tensor y = bn_forward(unit, Tensor({1, 1}, {5}), NormMode::eval);
  EXPECT_NEAR(y[0], 2.0, 1e-15);
  EXPECT_EQ(unit.updates, 0u);
  bn_forward(unit, Tensor({2, 1}, {5, 7}), NormMode::batch_stats);
  EXPECT_EQ(unit.running_mean[0], 1.0);
}

TEST(BNForward, ChannelMismatch) {
  BNUnit unit(3);
  EXPECT_THROW(bn_forward(unit, Tensor::zeros({2, 2}), NormMode::train), ShapeError);
}

TEST(BNForward, NormalizedGroupHasZeroMeanUnitVariance) {
  std::mt19937_64 rng(9);
  BNUnit unit(4, 0.1, 1e-300);
  Tensor x = random_tensor({12, 4}, rng, 3.0, -2.0);
  Tensor y = bn_forward(unit, x, NormMode::train);
  std::vector<std::size_t> rows(12);
  for (std::size_t i = 0; i < 12; ++i) rows[i] = i;
  for (std::size_t c = 0; c < 4; ++c) {
    double mu, var;
    two_pass(y, rows, c, mu, var);
    EXPECT_NEAR(mu, 0.0, 1e-8);
    EXPECT_NEAR(var, 1.0, 1e-8);
  }
}

TEST(BNForward, GradientThroughBatchStatistics) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    BNUnit unit(3);
    Tensor x = random_tensor({5, 3}, rng);
    x.set_requires_grad(true);
    unit.gamma.mutable_data()[1] = 1.7;
    Tensor weights = random_tensor({5, 3}, rng);
    auto r = grad_check([&] { return sum_all(mul(bn_forward(unit, x, NormMode::train), weights)); },
                        {x, unit.gamma, unit.beta}, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-4);
    Tensor img = random_tensor({3, 3, 2, 2}, rng);
    img.set_requires_grad(true);
    Tensor w4 = random_tensor({3, 3, 2, 2}, rng);
    r = grad_check([&] { return sum_all(mul(bn_forward(unit, img, NormMode::train), w4)); },
                   {img, unit.gamma, unit.beta}, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-4);
  }
}

// --- ON --------------------------------------------------------------------

TEST(ONForward, PureBnMixtureEqualsBn) {
  std::mt19937_64 rng(17);
  Tensor x = random_tensor({6, 4}, rng);
  ONUnit on(4);
  on.mixture_logits.mutable_data()[0] = 1000.0;
  on.mixture_logits.mutable_data()[1] = -1000.0;
  on.bn.gamma.mutable_data()[2] = 3.0;
  BNUnit bn(4);
  bn.gamma.mutable_data()[2] = 3.0;
  EXPECT_EQ(values(on_forward(on, x, NormMode::train)), values(bn_forward(bn, x, NormMode::train)));
  EXPECT_EQ(on.bn.running_mean, bn.running_mean);
}

TEST(ONForward, PureInOnConstantChannelsGivesBeta) {
  ONUnit on(2);
  on.mixture_logits.mutable_data()[0] = -1000.0;
  on.mixture_logits.mutable_data()[1] = 1000.0;
  on.bn.beta.mutable_data()[0] = 0.25;
  on.bn.beta.mutable_data()[1] = -0.5;
  // one sample, channels constant over a 2x2 map
  Tensor x({2, 2, 2, 2}, {2, 2, 2, 2, 4, 4, 4, 4, 1, 1, 1, 1, 7, 7, 7, 7});
  Tensor y = on_forward(on, x, NormMode::train);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_DOUBLE_EQ(y[(n * 2 + 0) * 4 + i], 0.25);
      EXPECT_DOUBLE_EQ(y[(n * 2 + 1) * 4 + i], -0.5);
    }
}

TEST(ONForward, HalfMixtureIsAverageOfStandardizers) {
  std::mt19937_64 rng(19);
  Tensor x = random_tensor({5, 3}, rng, 2.0, 1.0);
  ONUnit on(3);  // zero logits -> 0.5 / 0.5
  Tensor y = on_forward(on, x, NormMode::batch_stats);
  const double eps = on.bn.eps;
  // composition oracle: explicit BN and IN standardization loops
  for (std::size_t r = 0; r < 5; ++r) {
    double rmu = 0, rvar = 0;
    for (std::size_t c = 0; c < 3; ++c) rmu += x[r * 3 + c];
    rmu /= 3;
    for (std::size_t c = 0; c < 3; ++c) rvar += (x[r * 3 + c] - rmu) * (x[r * 3 + c] - rmu);
    rvar /= 3;
    for (std::size_t c = 0; c < 3; ++c) {
      double cmu = 0, cvar = 0;
      for (std::size_t k = 0; k < 5; ++k) cmu += x[k * 3 + c];
      cmu /= 5;
      for (std::size_t k = 0; k < 5; ++k) cvar += (x[k * 3 + c] - cmu) * (x[k * 3 + c] - cmu);
      cvar /= 5;
      const double bn = (x[r * 3 + c] - cmu) / std::sqrt(cvar + eps);
      const double in = (x[r * 3 + c] - rmu) / std::sqrt(rvar + eps);
      EXPECT_NEAR(y[r * 3 + c], 0.5 * bn + 0.5 * in, 1e-12);
    }
  }
  auto [wb, wi] = on.mixture_weights();
  EXPECT_DOUBLE_EQ(wb + wi, 1.0);
}

TEST(ONForward, SingleFeatureRowsRejected) {
  ONUnit on(1);
  EXPECT_THROW(on_forward(on, Tensor::zeros({4, 1}), NormMode::train), ShapeError);
}

TEST(ONForward, GradientIncludingMixture) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    ONUnit on(3);
    on.mixture_logits.mutable_data()[0] = 0.3 * trial;
    Tensor x = random_tensor({4, 3}, rng);
    x.set_requires_grad(true);
    Tensor w = random_tensor({4, 3}, rng);
    auto r = grad_check([&] { return sum_all(mul(on_forward(on, x, NormMode::train), w)); },
                        {x, on.bn.gamma, on.bn.beta, on.mixture_logits}, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-4);
  }
}

// --- bank & partitioned forward --------------------------------------------

TEST(BNBank, ReducedSchemeHasTwoNUnits) {
  for (std::size_t n : {3u, 4u, 5u}) {
    BNBank bank(n, 4, enumerate_reduced_combinations(n));
    EXPECT_EQ(bank.size(), 2 * n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_TRUE(bank.contains(DomainSubset::singleton(i, n)));
  }
  BNBank full(4, 2, enumerate_full_combinations(4));
  EXPECT_EQ(full.size(), 4u + 6u + 4u);
}

TEST(Partitioned, WholePartitionEqualsPlainBn) {
  std::mt19937_64 rng(29);
  Tensor x = random_tensor({9, 3}, rng);
  std::vector<std::size_t> ids{0, 1, 2, 0, 1, 2, 0, 1, 2};
  BNBank bank(3, 3, {Partition::whole(3)});
  BNUnit plain(3);
  Tensor a = partitioned_forward(bank, Partition::whole(3), x, ids, NormMode::train);
  Tensor b = bn_forward(plain, x, NormMode::train);
  EXPECT_EQ(values(a), values(b));
}

TEST(Partitioned, SingletonsStandardizeEachDomainBlock) {
  std::mt19937_64 rng(31);
  const std::size_t per = 4;
  std::vector<double> v;
  std::vector<std::size_t> ids;
  for (std::size_t d = 0; d < 3; ++d) {
    Tensor block = random_tensor({per, 2}, rng, 1.0 + d, 5.0 * d);
    v.insert(v.end(), block.data().begin(), block.data().end());
    ids.insert(ids.end(), per, d);
  }
  Tensor x({3 * per, 2}, v);
  BNBank bank(3, 2, enumerate_reduced_combinations(3));
  Tensor y = partitioned_forward(bank, Partition::singletons(3), x, ids, NormMode::train);
  for (std::size_t d = 0; d < 3; ++d) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < per; ++r) rows.push_back(d * per + r);
    for (std::size_t c = 0; c < 2; ++c) {
      double mu, var;
      two_pass(x, rows, c, mu, var);
      for (auto r : rows) EXPECT_NEAR(y[r * 2 + c], (x[r * 2 + c] - mu) / std::sqrt(var + kDefaultBnEps), 1e-12);
    }
  }
}

TEST(Partitioned, RowPermutationEquivariance) {
  std::mt19937_64 rng(37);
  Tensor x = random_tensor({9, 2}, rng);
  std::vector<std::size_t> ids{0, 1, 2, 0, 1, 2, 0, 1, 2};
  std::vector<std::size_t> perm{4, 0, 8, 2, 6, 1, 3, 7, 5};
  Tensor xp = gather_rows(x, perm);
  std::vector<std::size_t> idp;
  for (auto p : perm) idp.push_back(ids[p]);
  auto parts = enumerate_reduced_combinations(3);
  for (const auto &part : parts) {
    BNBank bank(3, 2, parts);
    Tensor y = partitioned_forward(bank, part, x, ids, NormMode::train);
    Tensor yp = partitioned_forward(bank, part, xp, idp, NormMode::train);
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(yp[i * 2 + c], y[perm[i] * 2 + c], 1e-14);
  }
}

TEST(Partitioned, OutputDependsOnlyOnOwnGroup) {
  std::mt19937_64 rng(41);
  std::vector<std::size_t> ids{0, 0, 1, 1, 2, 2, 0, 1, 2};
  Partition part({DomainSubset::of({0, 1}, 3), DomainSubset::of({2}, 3)}, 3);
  BNBank bank(3, 3, enumerate_reduced_combinations(3));
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({9, 3}, rng);
    Tensor y = partitioned_forward(bank, part, x, ids, NormMode::train);
    Tensor mutated = x.detach();
    for (std::size_t r = 0; r < 9; ++r)
      if (ids[r] == 2)
        for (std::size_t c = 0; c < 3; ++c) mutated.mutable_data()[r * 3 + c] += 10.0 * (trial + 1);
    Tensor y2 = partitioned_forward(bank, part, mutated, ids, NormMode::train);
    for (std::size_t r = 0; r < 9; ++r)
      if (ids[r] != 2)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y[r * 3 + c], y2[r * 3 + c]);
  }
}

TEST(Partitioned, DegenerateSubBatch) {
  std::vector<std::size_t> ids{0, 0, 1, 2, 2};
  BNBank bank(3, 1, enumerate_reduced_combinations(3));
  try {
    partitioned_forward(bank, Partition::singletons(3), Tensor::zeros({5, 1}), ids, NormMode::train);
    FAIL();
  } catch (const std::invalid_argument &e) {
    EXPECT_NE(std::string(e.what()).find("degenerate sub-batch"), std::string::npos);
  }
  // eval mode has no batch statistics, so one row is fine
  EXPECT_NO_THROW(partitioned_forward(bank, Partition::singletons(3), Tensor::zeros({5, 1}), ids, NormMode::eval));
}

TEST(Partitioned, MissingUnit) {
  BNBank bank(3, 1, {Partition::singletons(3)});
  std::vector<std::size_t> ids{0, 0, 1, 1, 2, 2};
  EXPECT_THROW(partitioned_forward(bank, Partition::whole(3), Tensor::zeros({6, 1}), ids, NormMode::train),
               std::out_of_range);
}

TEST(Partitioned, SharedUnitVisibleAcrossPartitions) {
  BNBank bank(3, 1, enumerate_reduced_combinations(3));
  std::vector<std::size_t> ids{0, 0, 1, 1, 2, 2};
  Tensor x({6, 1}, {1, 2, 3, 4, 5, 6});
  Partition p({DomainSubset::of({0, 1}, 3), DomainSubset::of({2}, 3)}, 3);
  partitioned_forward(bank, p, x, ids, NormMode::train);
  const BNUnit &u = bank.unit(DomainSubset::of({0, 1}, 3));
  EXPECT_EQ(u.updates, 1u);
  EXPECT_DOUBLE_EQ(u.running_mean[0], 0.1 * 2.5);
  bank.unit(DomainSubset::of({0, 1}, 3)).gamma.mutable_data()[0] = 4.0;
  // the same key from the bank's other view
  EXPECT_EQ(bank.units().at(DomainSubset::of({1, 0}, 3)).gamma[0], 4.0);
}

TEST(Partitioned, GradientThroughThreeGroups) {
  std::mt19937_64 rng(43);
  std::vector<std::size_t> ids{0, 1, 2, 0, 1, 2, 0, 1, 2};
  BNBank bank(3, 2, enumerate_reduced_combinations(3));
  std::vector<Tensor> params;
  for (auto &[k, u] : bank.units()) {
    u.gamma.mutable_data()[0] = 1.0 + 0.1 * k.mask();
    params.push_back(u.gamma);
    params.push_back(u.beta);
  }
  Tensor x = random_tensor({9, 2}, rng);
  x.set_requires_grad(true);
  params.push_back(x);
  Tensor w = random_tensor({9, 2}, rng);
  auto r = grad_check(
      [&] { return sum_all(mul(partitioned_forward(bank, Partition::singletons(3), x, ids, NormMode::train), w)); },
      params, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-4);
}
