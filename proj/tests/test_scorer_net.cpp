#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "milvid/scorer_net.hpp"
#include "test_support.hpp"

using namespace milvid;
using milvid::testing::central_differences;
using milvid::testing::random_model;
using milvid::testing::random_vector;
using milvid::testing::relative_error;

namespace {

ModelOptions opts(Activation out, double dropout = 0.0, Activation hidden = Activation::relu) {
  return ModelOptions{hidden, out, dropout};
}

double sample_std(std::span<const double> xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(xs.size() - 1));
}

}  // namespace

TEST(ScoringModel, ParameterLayout) {
  ScoringModel m({8, 4, 2, 1}, {});
  EXPECT_EQ(m.num_layers(), 3u);
  EXPECT_EQ(m.params().size(), 8u * 4 + 4 + 4 * 2 + 2 + 2 * 1 + 1);
  EXPECT_EQ(m.weights(1).size(), 8u);
  EXPECT_EQ(m.biases(2).size(), 1u);
  EXPECT_EQ(m.bias_offset(0), 32u);
  EXPECT_EQ(m.weight_offset(1), 36u);
  EXPECT_TRUE(m.is_weight(0));
  EXPECT_FALSE(m.is_weight(32));
  EXPECT_EQ(default_layer_dims(4096), (std::vector<std::size_t>{4096, 512, 32, 1}));
}

TEST(ScoringModel, RejectsBadConfig) {
  EXPECT_THROW(ScoringModel({8}, {}), config_error);
  EXPECT_THROW(ScoringModel({8, 0, 1}, {}), config_error);
  EXPECT_THROW(ScoringModel({8, 2}, {}), config_error);
  EXPECT_THROW(ScoringModel({8, 1}, opts(Activation::sigmoid, 1.0)), config_error);
  EXPECT_THROW(ScoringModel({8, 1}, opts(Activation::sigmoid, -0.1)), config_error);
}

TEST(GlorotNormal, StdMatchesFormulaForWideLayer) {
  const auto m = init_glorot_normal({4096, 512, 32, 1}, 7);
  const double expected = std::sqrt(2.0 / (4096 + 512));
  EXPECT_NEAR(expected, 0.020833333333333332, 1e-15);
  EXPECT_NEAR(sample_std(m.weights(0)), expected, 0.05 * expected);
  EXPECT_NEAR(sample_std(m.weights(1)), std::sqrt(2.0 / 544), 0.05 * std::sqrt(2.0 / 544));
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    for (double b : m.biases(l)) EXPECT_EQ(b, 0.0);
  }
}

TEST(GlorotNormal, UnitFanGivesUnitStd) {
  // fan_in = fan_out = 1 -> sqrt(2/2) = 1. Pool many independently seeded 1x1 draws.
  std::vector<double> draws;
  for (std::uint64_t s = 0; s < 4000; ++s) draws.push_back(init_glorot_normal({1, 1}, s).weights(0)[0]);
  EXPECT_NEAR(sample_std(draws), 1.0, 0.05);
}

TEST(GlorotNormal, Deterministic) {
  EXPECT_EQ(init_glorot_normal({16, 8, 1}, 3), init_glorot_normal({16, 8, 1}, 3));
  EXPECT_NE(init_glorot_normal({16, 8, 1}, 3), init_glorot_normal({16, 8, 1}, 4));
}

TEST(Score, ZeroModelGivesActivationMidpoint) {
  std::mt19937_64 rng(1);
  const auto x = random_vector(rng, 8);
  EXPECT_EQ(score(ScoringModel({8, 4, 2, 1}, opts(Activation::sigmoid)), x), 0.5);
  EXPECT_EQ(score(ScoringModel({8, 4, 2, 1}, opts(Activation::tanh)), x), 0.0);
}

TEST(Score, DimensionMismatchIsShapeError) {
  ScoringModel m({8, 4, 1}, {});
  EXPECT_THROW(score(m, std::vector<double>(7, 0.0)), shape_error);
}

TEST(Score, OutputRanges) {
  std::mt19937_64 rng(2);
  const auto sig = random_model({8, 6, 1}, 5, opts(Activation::sigmoid), 1.0);
  const auto th = random_model({8, 6, 1}, 5, opts(Activation::tanh), 1.0);
  for (int i = 0; i < 500; ++i) {
    const auto x = random_vector(rng, 8, 0.5);
    const double s = score(sig, x);
    const double t = score(th, x);
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
    EXPECT_GT(t, -1.0);
    EXPECT_LT(t, 1.0);
  }
}

TEST(Score, EvalModeIgnoresDropoutRate) {
  std::mt19937_64 rng(3);
  auto with = random_model({8, 4, 2, 1}, 9, opts(Activation::sigmoid, 0.6));
  auto without = random_model({8, 4, 2, 1}, 9, opts(Activation::sigmoid, 0.0));
  for (int i = 0; i < 50; ++i) {
    const auto x = random_vector(rng, 8);
    EXPECT_EQ(score(with, x), score(without, x));
    EXPECT_EQ(score(with, x), score(with, x));
  }
}

TEST(Score, TrainModeMaskIsSeededAndInverted) {
  std::mt19937_64 rng(4);
  const auto m = random_model({8, 64, 1}, 1, opts(Activation::identity, 0.6));
  const auto x = random_vector(rng, 8);
  const auto a = forward(m, std::span<const double>(x), ScoreMode::train(77));
  const auto b = forward(m, std::span<const double>(x), ScoreMode::train(77));
  EXPECT_EQ(a.dropout_scale, b.dropout_scale);
  for (double s : a.dropout_scale) EXPECT_TRUE(s == 0.0 || std::abs(s - 2.5) < 1e-15);
  EXPECT_TRUE(forward(m, std::span<const double>(x), ScoreMode::eval()).dropout_scale.empty());
}

// Linear network: the train-mode score is linear in the mask, so its mean
// over masks is the eval-mode score.
TEST(Score, TrainModeMeanMatchesEvalOnLinearNetwork) {
  std::mt19937_64 rng(5);
  const auto m = random_model({6, 32, 4, 1}, 2, opts(Activation::identity, 0.6, Activation::identity), 0.3);
  const auto x = random_vector(rng, 6);
  const double eval = score(m, x);

  const std::size_t n = 20000;
  double sum = 0.0, sq = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double s = score(m, x, ScoreMode::train(mix_seed(123, k)));
    sum += s;
    sq += s * s;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  EXPECT_NEAR(mean, eval, 5.0 * se) << "standard error " << se;
}

TEST(Backward, HandChainRule) {
  ScoringModel m({1, 1, 1}, opts(Activation::identity, 0.0, Activation::identity));
  m.weights(0)[0] = 2.0;
  m.weights(1)[0] = 3.0;
  const std::vector<double> x{5.0};
  const auto t = forward(m, std::span<const double>(x), ScoreMode::eval());
  EXPECT_EQ(t.score(), 30.0);
  const auto g = backward(m, t, 1.0);
  EXPECT_EQ(g.params[m.weight_offset(0)], 15.0);  // w2 * x
  EXPECT_EQ(g.params[m.weight_offset(1)], 10.0);  // w1 * x
  EXPECT_EQ(g.params[m.bias_offset(0)], 3.0);
  EXPECT_EQ(g.params[m.bias_offset(1)], 1.0);
  EXPECT_EQ(g.input[0], 6.0);
}

TEST(Backward, ZeroUpstreamGivesZeroGradient) {
  std::mt19937_64 rng(6);
  const auto m = random_model({8, 4, 2, 1}, 3, opts(Activation::sigmoid));
  const auto x = random_vector(rng, 8);
  const auto g = backward(m, forward(m, std::span<const double>(x), ScoreMode::eval()), 0.0);
  for (double v : g.params) EXPECT_EQ(v, 0.0);
  for (double v : g.input) EXPECT_EQ(v, 0.0);
}

TEST(Backward, StaleTraceRejected) {
  std::mt19937_64 rng(7);
  const auto small = random_model({8, 4, 1}, 3, opts(Activation::sigmoid));
  const auto big = random_model({8, 5, 1}, 3, opts(Activation::sigmoid));
  const auto x = random_vector(rng, 8);
  const auto t = forward(small, std::span<const double>(x), ScoreMode::eval());
  EXPECT_THROW(backward(big, t, 1.0), shape_error);
}

class FiniteDifference : public ::testing::TestWithParam<Activation> {};

TEST_P(FiniteDifference, EveryParameterAndInput) {
  std::mt19937_64 rng(8);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto m = random_model({8, 4, 2, 1}, 100 + seed, opts(GetParam(), 0.6));
    std::vector<double> x = random_vector(rng, 8);
    const auto g = backward(m, forward(m, std::span<const double>(x), ScoreMode::eval()), 1.0);

    std::vector<double> theta(m.params().begin(), m.params().end());
    const auto numeric = central_differences(theta, [&] {
      std::copy(theta.begin(), theta.end(), m.params().begin());
      return score(m, x);
    });
    std::copy(theta.begin(), theta.end(), m.params().begin());
    for (std::size_t i = 0; i < theta.size(); ++i) {
      EXPECT_LT(relative_error(g.params[i], numeric[i]), 1e-4) << "param " << i;
    }

    const auto numeric_x = central_differences(x, [&] { return score(m, x); });
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LT(relative_error(g.input[i], numeric_x[i]), 1e-4);
  }
}

// With a fixed mask the network is still a deterministic function; its
// gradient must route through the kept units only.
TEST_P(FiniteDifference, TrainModeWithFixedMask) {
  std::mt19937_64 rng(9);
  auto m = random_model({8, 6, 3, 1}, 55, opts(GetParam(), 0.5));
  std::vector<double> x = random_vector(rng, 8);
  const auto mode = ScoreMode::train(31337);
  const auto g = backward(m, forward(m, std::span<const double>(x), mode), 1.0);
  std::vector<double> theta(m.params().begin(), m.params().end());
  const auto numeric = central_differences(theta, [&] {
    std::copy(theta.begin(), theta.end(), m.params().begin());
    return score(m, x, mode);
  });
  for (std::size_t i = 0; i < theta.size(); ++i) EXPECT_LT(relative_error(g.params[i], numeric[i]), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Outputs, FiniteDifference, ::testing::Values(Activation::sigmoid, Activation::tanh),
                         [](const auto& info) { return to_string(info.param); });

TEST(Serialize, RoundTripIsBitwise) {
  const auto m = random_model({8, 4, 2, 1}, 12, opts(Activation::tanh, 0.35));
  const auto bytes = serialize(m);
  const auto back = deserialize(bytes);
  EXPECT_EQ(back, m);
  EXPECT_EQ(serialize(back), bytes);
}

TEST(Serialize, EveryCorruptedByteFailsChecksum) {
  const auto m = random_model({4, 3, 1}, 13, opts(Activation::sigmoid));
  const auto bytes = serialize(m);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= 0x5a;
    EXPECT_THROW(deserialize(bad), checksum_error) << "byte " << i;
  }
}

TEST(Serialize, TruncationAndWrongKind) {
  const auto m = random_model({4, 3, 1}, 13, opts(Activation::sigmoid));
  auto bytes = serialize(m);
  EXPECT_THROW(deserialize(std::span(bytes).first(10)), corruption_error);
  bytes.pop_back();
  EXPECT_THROW(deserialize(bytes), checksum_error);

  io::ByteWriter w;
  encode_model_payload(m, w);
  EXPECT_THROW(deserialize(wrap_container(ContainerKind::checkpoint, w.data())), format_error);
}

TEST(Serialize, VersionMismatchDetected) {
  const auto m = random_model({4, 3, 1}, 13, opts(Activation::sigmoid));
  auto bytes = serialize(m);
  bytes[4] = 9;  // version field
  const auto crc = io::crc32(std::span(bytes).first(bytes.size() - 4));
  for (int k = 0; k < 4; ++k) bytes[bytes.size() - 4 + k] = static_cast<unsigned char>(crc >> (8 * k));
  try {
    deserialize(bytes);
    FAIL() << "expected format_error";
  } catch (const format_error& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Serialize, DeserializedModelScoresIdentically) {
  std::mt19937_64 rng(14);
  const auto m = init_glorot_normal({32, 16, 4, 1}, 77);
  const auto back = deserialize(serialize(m));
  for (int i = 0; i < 100; ++i) {
    const auto x = random_vector(rng, 32);
    EXPECT_EQ(score(back, x), score(m, x));
  }
}
