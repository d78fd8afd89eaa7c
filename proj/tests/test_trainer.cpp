#include <gtest/gtest.h>

#include <random>

#include "milvid/trainer.hpp"
#include "test_support.hpp"

using namespace milvid;
using milvid::testing::split_synthetic;
using milvid::testing::TempDir;

namespace {

SynthConfig small_synth(std::uint64_t seed, double shift = 3.0) {
  SynthConfig c;
  c.dim = 16;
  c.n_pos_bags = 12;
  c.n_neg_bags = 20;
  c.n_test_pos_bags = 10;
  c.n_test_neg_bags = 10;
  c.instances_per_bag = 8;
  c.witness_rate = 0.25;
  c.shift_magnitude = shift;
  c.noise_std = 1.0;
  c.seed = seed;
  return c;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.bags_per_batch = 6;
  cfg.lambda = 0.001;
  cfg.hidden_dims = {16, 8};
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST(TrainConfig, Validation) {
  auto cfg = small_config();
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), config_error);
  cfg = small_config();
  cfg.bags_per_batch = 0;
  EXPECT_THROW(cfg.validate(), config_error);
  cfg = small_config();
  cfg.lambda = -1;
  EXPECT_THROW(cfg.validate(), config_error);
  cfg = small_config();
  cfg.checkpoint_every = 1;
  EXPECT_THROW(cfg.validate(), config_error);
}

TEST(Train, OneEpochTwoBagsOneStep) {
  std::mt19937_64 rng(1);
  auto ds = make_dataset({milvid::testing::random_bag(rng, "p", 1, 3, 4), milvid::testing::random_bag(rng, "n", -1, 3, 4)});
  auto cfg = small_config();
  cfg.epochs = 1;
  cfg.bags_per_batch = 2;
  const auto res = train(ds, cfg);
  EXPECT_EQ(res.log.rows.size(), 1u);
  EXPECT_EQ(res.state.iterations, 1u);
  EXPECT_EQ(res.state.optimizer_state.step, 1u);
}

TEST(Train, RequiresBothClasses) {
  std::mt19937_64 rng(2);
  auto only_pos = make_dataset({milvid::testing::random_bag(rng, "p", 1, 3, 4)});
  auto only_neg = make_dataset({milvid::testing::random_bag(rng, "n", -1, 3, 4)});
  EXPECT_THROW(train(only_pos, small_config()), config_error);
  EXPECT_THROW(train(only_neg, small_config()), config_error);
}

TEST(Train, LogRowPerIteration) {
  const auto data = split_synthetic(synthesize(small_synth(3)));
  auto cfg = small_config();
  const auto res = train(data.train, cfg);
  const auto plan = plan_batches(12, cfg.bags_per_batch);
  EXPECT_EQ(plan.batches_per_epoch, 4u);
  ASSERT_EQ(res.log.rows.size(), cfg.epochs * plan.batches_per_epoch);
  for (std::size_t i = 0; i < res.log.rows.size(); ++i) {
    EXPECT_EQ(res.log.rows[i].iteration, i + 1);
    EXPECT_TRUE(std::isfinite(res.log.rows[i].objective));
  }
  const auto csv = log_to_csv(res.log);
  EXPECT_EQ(csv.rfind("iteration,epoch,objective,val_auc,seconds\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(res.log.rows.size() + 1));
}

TEST(Train, DeterministicCheckpoints) {
  const auto data = split_synthetic(synthesize(small_synth(4)));
  const auto a = train(data.train, small_config());
  const auto b = train(data.train, small_config());
  EXPECT_EQ(serialize_checkpoint(a.state), serialize_checkpoint(b.state));
  EXPECT_EQ(serialize(a.model), serialize(b.model));

  auto other = small_config();
  other.seed = 6;
  EXPECT_NE(serialize(train(data.train, other).model), serialize(a.model));
}

TEST(Train, ResumeReproducesUninterruptedRun) {
  TempDir dir("train");
  const auto data = split_synthetic(synthesize(small_synth(5)));
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    auto cfg = small_config();
    cfg.optimizer = OptimizerConfig::defaults(kind);
    cfg.epochs = 6;
    cfg.eval_every = 2;
    const auto full = train(data.train, cfg, data.test);

    auto first = cfg;
    first.epochs = 3;
    first.checkpoint_every = 3;
    first.checkpoint_path = dir / "half.ckpt";
    train(data.train, first, data.test);
    const auto resumed = train(data.train, cfg, data.test, load_checkpoint(dir / "half.ckpt"));

    EXPECT_EQ(resumed.state, full.state) << to_string(kind);
    EXPECT_EQ(serialize_checkpoint(resumed.state), serialize_checkpoint(full.state));
    EXPECT_EQ(resumed.log.rows.size(), full.log.rows.size() / 2);
    EXPECT_EQ(resumed.log.rows.back().objective, full.log.rows.back().objective);
  }
}

TEST(Train, ResumeRejectsDifferentConfig) {
  TempDir dir("train");
  const auto data = split_synthetic(synthesize(small_synth(6)));
  auto cfg = small_config();
  cfg.checkpoint_every = 2;
  cfg.checkpoint_path = dir / "c.ckpt";
  train(data.train, cfg);
  auto other = small_config();
  other.lambda = 0.5;
  EXPECT_THROW(train(data.train, other, {}, load_checkpoint(dir / "c.ckpt")), config_error);
}

TEST(Train, CheckpointRoundTripAndCorruption) {
  const auto data = split_synthetic(synthesize(small_synth(7)));
  auto cfg = small_config();
  cfg.eval_every = 1;
  const auto res = train(data.train, cfg, data.test);
  ASSERT_TRUE(res.state.best_model.has_value());
  const auto bytes = serialize_checkpoint(res.state);
  EXPECT_EQ(deserialize_checkpoint(bytes), res.state);
  auto bad = bytes;
  bad[bad.size() / 2] ^= 1;
  EXPECT_THROW(deserialize_checkpoint(bad), checksum_error);
  EXPECT_THROW(deserialize(bytes), format_error);  // checkpoint is not a bare model
}

TEST(Train, NonFiniteObjectiveAbortsAndKeepsLastCheckpoint) {
  TempDir dir("train");
  std::mt19937_64 rng(8);
  auto ds = make_dataset({milvid::testing::random_bag(rng, "p", 1, 3, 4), milvid::testing::random_bag(rng, "n", -1, 3, 4)});
  auto cfg = small_config();
  cfg.epochs = 5;
  cfg.bags_per_batch = 2;
  cfg.dropout = false;
  cfg.hidden_dims = {};  // linear scorer: the weight penalty overflows on the second step
  cfg.model.output_activation = Activation::identity;
  cfg.optimizer.lr = 1e300;
  cfg.checkpoint_every = 1;
  cfg.checkpoint_path = dir / "last.ckpt";
  EXPECT_THROW(train(ds, cfg), training_error);
  const auto kept = load_checkpoint(dir / "last.ckpt");
  EXPECT_GE(kept.epochs_completed, 1u);
  EXPECT_LT(kept.epochs_completed, 5u);
}

TEST(Batching, BalancedBatchesAlwaysHoldBothClasses) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t np = 1 + rng() % 30, nn = 1 + rng() % 30;
    const auto bpb = static_cast<std::uint32_t>(1 + rng() % 20);
    std::vector<std::size_t> pos(np), neg(nn);
    std::iota(pos.begin(), pos.end(), 0);
    std::iota(neg.begin(), neg.end(), 1000);
    const auto batches = epoch_batches(pos, neg, bpb, rng(), static_cast<std::uint32_t>(trial));
    std::vector<int> seen(np, 0);
    for (const auto& b : batches) {
      const auto n_pos = std::count_if(b.begin(), b.end(), [](std::size_t i) { return i < 1000; });
      EXPECT_GT(n_pos, 0);
      EXPECT_GT(static_cast<long>(b.size()) - n_pos, 0);
      for (auto i : b) {
        if (i < 1000) seen[i]++;
      }
    }
    // One epoch visits every positive bag exactly once.
    for (int s : seen) EXPECT_EQ(s, 1);
  }
}

TEST(Train, ObjectiveDecreasesOnSeparableData) {
  auto c = small_synth(10);
  c.n_pos_bags = 40;
  c.n_neg_bags = 40;
  const auto data = split_synthetic(synthesize(c));
  auto cfg = small_config();
  cfg.epochs = 30;
  cfg.bags_per_batch = 8;
  const auto res = train(data.train, cfg);
  const auto before = objective(init_glorot_normal(layer_dims_for(16, cfg.hidden_dims), cfg.seed, cfg.model),
                                data.train.bags, cfg.lambda);
  const auto after = objective(res.model, data.train.bags, cfg.lambda);
  EXPECT_LT(after.value, before.value);
  for (const auto& r : res.log.rows) EXPECT_TRUE(std::isfinite(r.objective));
}

TEST(Train, ValidationKeepsBestModel) {
  const auto data = split_synthetic(synthesize(small_synth(11)));
  auto cfg = small_config();
  cfg.eval_every = 1;
  const auto res = train(data.train, cfg, data.test);
  ASSERT_TRUE(res.best_model && res.log.best_val_auc);
  double best = 0.0;
  std::size_t evaluated = 0;
  for (const auto& r : res.log.rows) {
    if (r.val_auc) {
      best = std::max(best, *r.val_auc);
      ++evaluated;
    }
  }
  EXPECT_EQ(evaluated, cfg.epochs);
  EXPECT_EQ(*res.log.best_val_auc, best);
  EXPECT_EQ(bag_auc(*res.best_model, data.test), best);
}

TEST(Train, NoShiftMeansChanceLevelAuc) {
  auto c = small_synth(12, 0.0);
  c.n_pos_bags = 50;
  c.n_neg_bags = 50;
  c.n_test_pos_bags = 300;
  c.n_test_neg_bags = 300;
  const auto data = split_synthetic(synthesize(c));
  auto cfg = small_config();
  cfg.epochs = 10;
  const auto res = train(data.train, cfg);
  EXPECT_NEAR(bag_auc(res.model, data.test), 0.5, 0.05);
}

TEST(CompareOptimizers, SingleAndRepeatedKinds) {
  const auto data = split_synthetic(synthesize(small_synth(13)));
  auto cfg = small_config();
  const std::vector<OptimizerKind> one{OptimizerKind::sgd};
  const auto rows = compare_optimizers(data.train, data.test, cfg, one);
  ASSERT_EQ(rows.size(), 1u);

  const std::vector<OptimizerKind> twice{OptimizerKind::sgd, OptimizerKind::sgd};
  const auto rows2 = compare_optimizers(data.train, data.test, cfg, twice);
  ASSERT_EQ(rows2.size(), 2u);
  EXPECT_EQ(rows2[0].auc, rows2[1].auc);
  EXPECT_EQ(rows2[0].final_objective, rows2[1].final_objective);
  EXPECT_EQ(rows2[0].auc, rows[0].auc);

  EXPECT_THROW(compare_optimizers(data.train, data.test, cfg, std::span<const OptimizerKind>{}), config_error);
}

TEST(CompareOptimizers, TableShape) {
  const std::vector<ComparisonRow> rows{{OptimizerKind::rmsprop, 0.66, 0}, {OptimizerKind::adagrad, 0.67, 0},
                                        {OptimizerKind::adam, 0.6726, 0}, {OptimizerKind::sgd, 0.6768, 0}};
  EXPECT_EQ(format_comparison(rows), "Optimiser\tAUC(%)\nRMSprop\t66.00%\nAdagrad\t67.00%\nAdam\t67.26%\nSGD\t67.68%\n");
}
