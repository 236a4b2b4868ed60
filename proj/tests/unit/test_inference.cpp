#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "normaug/inference.hpp"
#include "normaug/training.hpp"

using namespace naug;

namespace {

const Tensor kMain({1, 2}, {0.8, 0.2});
const std::vector<Tensor> kSubs{Tensor({1, 2}, {0.6, 0.4}), Tensor({1, 2}, {0.4, 0.6})};

std::vector<double> values(const Tensor &t) { return {t.data().begin(), t.data().end()}; }

ModelConfig small(bool use_aug = true) {
  ModelConfig c;
  c.input_dim = 6;
  c.hidden = {8, 5};
  c.classes = 3;
  c.domains = 3;
  c.use_aug = use_aug;
  return c;
}

GeneratorConfig small_data() {
  GeneratorConfig g;
  g.dim = 6;
  g.classes = 3;
  g.per_cell = 20;
  return g;
}

Tensor random_probs(std::size_t rows, std::size_t cols, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<double> v(rows * cols);
  for (auto &x : v) x = u(rng);
  for (std::size_t r = 0; r < rows; ++r) {
    const double s = std::accumulate(v.begin() + r * cols, v.begin() + (r + 1) * cols, 0.0);
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] /= s;
  }
  return Tensor({rows, cols}, v);
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

// A briefly trained model, so every bank unit has running statistics.
struct Trained {
  Dataset source, target;
  Model model{small(), 3};
  Trained() {
    auto split = split_lodo(generate(small_data()).data, 3);
    source = std::move(split.first);
    target = std::move(split.second);
    TrainConfig t;
    t.epochs = 2;
    t.iterations_per_epoch = 10;
    t.per_domain_batch = 4;
    train(model, source, target, t);
  }
};

}  // namespace

TEST(Fuse, AlgorithmTwoWorkedExample) {
  EXPECT_EQ(values(fuse(FusionStrategy::MeanMeanIM, kMain, kSubs)), (std::vector<double>{0.65, 0.35}));
  EXPECT_EQ(values(fuse(FusionStrategy::MainOnly, kMain, kSubs)), values(kMain));
  EXPECT_EQ(values(fuse(FusionStrategy::MainOnly, kMain, {})), values(kMain));
}

TEST(Fuse, MeanAllWorkedExample) {
  EXPECT_EQ(values(fuse(FusionStrategy::MeanAll, kMain, kSubs)), (std::vector<double>{0.6, 0.4}));
}

TEST(Fuse, MaxFamily) {
  EXPECT_EQ(values(fuse(FusionStrategy::MeanMaxI_M, kMain, kSubs)), (std::vector<double>{0.65, 0.35}));
  EXPECT_EQ(values(fuse(FusionStrategy::MaxI, kMain, kSubs)), (std::vector<double>{0.5, 0.5}));
  const auto max_im = values(fuse(FusionStrategy::MaxIM, kMain, kSubs));  // [0.8, 0.6] / 1.4
  EXPECT_NEAR(max_im[0], 0.8 / 1.4, 1e-15);
  const auto max_mean = values(fuse(FusionStrategy::MaxMeanI_M, kMain, kSubs));  // [0.8, 0.5] / 1.3
  EXPECT_NEAR(max_mean[0], 0.8 / 1.3, 1e-15);
  EXPECT_EQ(values(fuse(FusionStrategy::MeanI, kMain, kSubs)), (std::vector<double>{0.5, 0.5}));
}

TEST(Fuse, RowsSumToOne) {
  std::mt19937_64 rng(1);
  const Tensor m = random_probs(20, 5, rng);
  const std::vector<Tensor> subs{random_probs(20, 5, rng), random_probs(20, 5, rng), random_probs(20, 5, rng)};
  for (auto s : all_fusion_strategies()) {
    const Tensor f = fuse(s, m, subs);
    for (std::size_t r = 0; r < 20; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 5; ++c) total += f[r * 5 + c];
      EXPECT_NEAR(total, 1.0, 1e-12) << to_string(s);
    }
  }
}

TEST(Fuse, ArgmaxInvariantUnderCommonRescaling) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor m = random_probs(10, 4, rng);
    const std::vector<Tensor> subs{random_probs(10, 4, rng), random_probs(10, 4, rng)};
    const double c = scale(rng);
    auto scaled = [&](const Tensor &t) {
      std::vector<double> v = values(t);
      for (auto &x : v) x *= c;
      return Tensor(t.shape(), v);
    };
    for (auto s : all_fusion_strategies()) {
      const Tensor a = fuse(s, m, subs);
      const Tensor b = fuse(s, scaled(m), {scaled(subs[0]), scaled(subs[1])});
      for (std::size_t r = 0; r < 10; ++r) {
        EXPECT_EQ(argmax(a.data().subspan(r * 4, 4)), argmax(b.data().subspan(r * 4, 4))) << to_string(s);
      }
    }
  }
}

TEST(Fuse, MeanMeanEqualsMeanAllWithOneSubpath) {
  std::mt19937_64 rng(3);
  const Tensor m = random_probs(8, 3, rng);
  const Tensor s = random_probs(8, 3, rng);
  EXPECT_EQ(values(fuse(FusionStrategy::MeanMeanIM, m, {s})), values(fuse(FusionStrategy::MeanAll, m, {s})));
}

TEST(Fuse, Errors) {
  EXPECT_THROW(fuse(FusionStrategy::MeanMeanIM, kMain, {}), std::invalid_argument);
  EXPECT_THROW(fuse(FusionStrategy::MeanAll, kMain, {Tensor({1, 3}, {0.2, 0.3, 0.5})}), ShapeError);
  EXPECT_THROW(fuse(FusionStrategy::MeanAll, Tensor({2}, {0.5, 0.5}), {}), ShapeError);
}

TEST(FusionNames, RoundTrip) {
  for (auto s : all_fusion_strategies()) EXPECT_EQ(parse_fusion_strategy(to_string(s)), s);
  EXPECT_EQ(all_fusion_strategies().size(), 8u);
  EXPECT_THROW(parse_fusion_strategy("MeanMean"), std::invalid_argument);
  EXPECT_EQ(parse_subpath_scope("all_units"), SubpathScope::all_units);
  EXPECT_THROW(parse_subpath_scope("some"), std::invalid_argument);
}

TEST(Predict, PathsInScope) {
  Trained t;
  const Tensor x = rows_tensor(t.target, 0, 5);
  const auto ind = predict(t.model, x, FusionStrategy::MeanMeanIM, SubpathScope::independent_only);
  ASSERT_EQ(ind.paths.size(), 4u);
  EXPECT_EQ(ind.paths[0].name, "main");
  EXPECT_EQ(ind.paths[1].name, "aux_0");
  const auto all = predict(t.model, x, FusionStrategy::MeanMeanIM, SubpathScope::all_units);
  EXPECT_EQ(all.paths.size(), 1u + t.model.bank_keys().size());
  std::vector<Tensor> subs;
  for (std::size_t i = 1; i < ind.paths.size(); ++i) subs.push_back(ind.paths[i].probs);
  EXPECT_EQ(values(ind.fused), values(fuse(FusionStrategy::MeanMeanIM, ind.paths[0].probs, subs)));
}

TEST(Predict, AllUnitsNeedsTrainedStatistics) {
  Model fresh(small(), 0);
  const Tensor x({2, 6}, std::vector<double>(12, 0.5));
  EXPECT_THROW(predict(fresh, x, FusionStrategy::MeanMeanIM, SubpathScope::all_units), std::invalid_argument);
  EXPECT_NO_THROW(predict(fresh, x, FusionStrategy::MeanMeanIM, SubpathScope::independent_only));
}

TEST(Predict, SubpathStrategyNeedsAuxPath) {
  Model plain(small(false), 0);
  const Tensor x({2, 6}, std::vector<double>(12, 0.5));
  EXPECT_THROW(predict(plain, x, FusionStrategy::MeanI, SubpathScope::independent_only), std::invalid_argument);
  EXPECT_NO_THROW(predict(plain, x, FusionStrategy::MainOnly, SubpathScope::independent_only));
}

TEST(Evaluate, ChunkSizeIndependence) {
  Trained t;
  const auto whole = predict_dataset(t.model, t.target, FusionStrategy::MeanMeanIM, SubpathScope::all_units, 64);
  for (std::size_t chunk : {1u, 7u, 1000u}) {
    const auto p = predict_dataset(t.model, t.target, FusionStrategy::MeanMeanIM, SubpathScope::all_units, chunk);
    EXPECT_EQ(values(p.fused), values(whole.fused)) << chunk;
    for (std::size_t i = 0; i < p.paths.size(); ++i) EXPECT_EQ(values(p.paths[i].probs), values(whole.paths[i].probs));
  }
  const auto a = evaluate(t.model, t.target, FusionStrategy::MeanMeanIM, SubpathScope::independent_only, 1);
  const auto b = evaluate(t.model, t.target, FusionStrategy::MeanMeanIM, SubpathScope::independent_only, 64);
  EXPECT_EQ(a.path_accuracy, b.path_accuracy);
  EXPECT_EQ(a.fused_accuracy, b.fused_accuracy);
}

TEST(Evaluate, ShuffleInvariancePerSample) {
  Trained t;
  std::vector<std::size_t> perm(t.target.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(4);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Dataset shuffled = t.target.subset(perm);
  const auto p = predict_dataset(t.model, t.target, FusionStrategy::MeanMeanIM, SubpathScope::independent_only, 32);
  const auto q = predict_dataset(t.model, shuffled, FusionStrategy::MeanMeanIM, SubpathScope::independent_only, 32);
  const std::size_t c = p.fused.dim(1);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t k = 0; k < c; ++k) EXPECT_EQ(q.fused[i * c + k], p.fused[perm[i] * c + k]);
  }
}

TEST(Evaluate, AllCorrectToyModel) {
  // at init every unit and classifier path computes the same function in eval
  // mode; label the data by that prediction
  ModelConfig c = small();
  c.use_on = false;
  c.classifier_mode = ClassifierMode::shared_one;
  Model m(c, 5);
  Dataset d = generate(small_data()).data;
  const auto pred = predict_dataset(m, d, FusionStrategy::MainOnly, SubpathScope::independent_only);
  for (std::size_t r = 0; r < d.size(); ++r) d.labels[r] = argmax(pred.fused.data().subspan(r * 3, 3));
  const auto res = evaluate(m, d, FusionStrategy::MeanMeanIM, SubpathScope::independent_only);
  for (const auto &[name, acc] : res.path_accuracy) EXPECT_EQ(acc, 1.0) << name;
  EXPECT_EQ(res.fused_accuracy, 1.0);
  EXPECT_EQ(res.samples, d.size());
}

TEST(Evaluate, FusedAccuracyFromSamePass) {
  Trained t;
  const auto pred = predict_dataset(t.model, t.target, FusionStrategy::MaxIM, SubpathScope::independent_only);
  const auto res = evaluate(t.model, t.target, FusionStrategy::MaxIM, SubpathScope::independent_only);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < t.target.size(); ++r) correct += argmax(pred.fused.data().subspan(r * 3, 3)) == t.target.labels[r];
  EXPECT_EQ(res.fused_accuracy, static_cast<double>(correct) / t.target.size());
}

TEST(Evaluate, EmptySplit) {
  Model m(small(), 0);
  Dataset empty;
  empty.dim = 6;
  EXPECT_THROW(evaluate(m, empty, FusionStrategy::MainOnly, SubpathScope::independent_only), std::invalid_argument);
}

TEST(Evaluate, CsvLayout) {
  EvalResult r;
  r.path_accuracy = {{"main", 0.5}, {"aux_0", 0.25}};
  r.fused_accuracy = 0.75;
  EXPECT_EQ(eval_csv(r), "path_name,accuracy\nmain,0.5\naux_0,0.25\nfused,0.75\n");
}
