#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "spi/model.hpp"
#include "support.hpp"

using namespace spi;
using spi_test::Rng;

namespace {

// Layer-by-layer matrix product with explicit loops over the stored weights.
Vec mlp_oracle(const ModelParams& p, Vec h) {
  for (std::size_t l = 0; l < p.mlp.size(); ++l) {
    const auto& L = p.mlp[l];
    Vec out(L.weight.rows);
    for (std::size_t r = 0; r < L.weight.rows; ++r) {
      double s = L.bias[r];
      for (std::size_t c = 0; c < L.weight.cols; ++c) s += L.weight.data[r * L.weight.cols + c] * h[c];
      out[r] = (l + 1 < p.mlp.size()) ? std::max(0.0, s) : s;
    }
    h = out;
  }
  return h;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / (std::string("spi_test_") + name)).string();
}

}  // namespace

TEST(Model, ZeroParamsGiveZeroEmbeddingAndUniformClasses) {
  const auto p = make_zero_params(ModelShape{});
  const auto z = forward_features(p, Vec{0.3, -2.0});
  ASSERT_EQ(z.size(), 32u);
  for (double v : z) EXPECT_EQ(v, 0.0);
  const auto h = class_probabilities(p, z);
  for (double v : h) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(Model, IdentityLayerPassesPositiveInput) {
  ModelParams p = make_zero_params(ModelShape{3, {}, 3, 2});
  for (std::size_t i = 0; i < 3; ++i) p.mlp[0].weight(i, i) = 1.0;
  const Vec x{0.5, 1.5, 2.5};
  EXPECT_EQ(forward_features(p, x), x);
  // With a ReLU hidden identity layer in front the result is unchanged too.
  ModelParams q = make_zero_params(ModelShape{3, {3}, 3, 2});
  for (auto& layer : q.mlp) {
    for (std::size_t i = 0; i < 3; ++i) layer.weight(i, i) = 1.0;
  }
  EXPECT_EQ(forward_features(q, x), x);
}

TEST(Model, ForwardMatchesMatmulOracle) {
  Rng rng(20);
  for (int t = 0; t < 50; ++t) {
    const auto p = init_params(ModelShape{3, {7, 5}, 4, 3}, rng());
    const auto x = spi_test::gaussian_vec(3, rng);
    const auto z = forward_features(p, x);
    const auto o = mlp_oracle(p, x);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], o[i], 1e-14);
  }
}

TEST(Model, ForwardIsDeterministic) {
  const auto p = init_params(ModelShape{}, 9);
  EXPECT_EQ(forward_features(p, Vec{0.1, 0.2}), forward_features(p, Vec{0.1, 0.2}));
}

TEST(Model, ClassifierTwoClassExample) {
  ModelParams p = make_zero_params(ModelShape{2, {}, 2, 2});
  p.classifier.weight(0, 0) = 1.0;
  const auto h = class_probabilities(p, Vec{1.0, 0.0});
  EXPECT_NEAR(h[0], 0.731059, 1e-6);
  EXPECT_NEAR(h[1], 0.268941, 1e-6);
}

TEST(Model, ShapeErrors) {
  const auto p = init_params(ModelShape{}, 1);
  EXPECT_SPI_ERROR(forward_features(p, Vec{1, 2, 3}), ErrorKind::ShapeMismatch);
  EXPECT_SPI_ERROR(forward_logits(p, Vec(31, 0.0)), ErrorKind::ShapeMismatch);
}

TEST(Model, InitIsSeededHeScale) {
  const auto a = init_params(ModelShape{}, 5);
  EXPECT_EQ(a, init_params(ModelShape{}, 5));
  EXPECT_NE(a, init_params(ModelShape{}, 6));
  double ss = 0.0;
  for (double w : a.mlp[1].weight.data) ss += w * w;
  const double var = ss / static_cast<double>(a.mlp[1].weight.data.size());
  EXPECT_NEAR(var, 2.0 / 64.0, 0.1 * 2.0 / 64.0);
}

TEST(Model, BackwardMatchesFiniteDifferences) {
  Rng rng(21);
  const ModelShape shape{2, {6}, 4, 3};
  for (int t = 0; t < 10; ++t) {
    ModelParams p = init_params(shape, rng());
    const auto x = spi_test::gaussian_vec(2, rng);
    const auto upstream = spi_test::gaussian_vec(4, rng);
    FeatureTrace trace;
    forward_features(p, x, &trace);
    bool kink = false;
    for (const auto& pre : trace.preactivations) {
      for (double v : pre) kink = kink || std::abs(v) < 1e-4;
    }
    if (kink) continue;
    ModelParams g = zeros_like(p);
    backward_features(p, trace, upstream, g);
    auto f = [&](const ModelParams& q) {
      const auto z = forward_features(q, x);
      double s = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) s += upstream[i] * z[i];
      return s;
    };
    for (std::size_t l = 0; l < p.mlp.size(); ++l) {
      for (std::size_t k = 0; k < p.mlp[l].weight.data.size(); ++k) {
        double& w = p.mlp[l].weight.data[k];
        const double keep = w;
        w = keep + 1e-6;
        const double up = f(p);
        w = keep - 1e-6;
        const double down = f(p);
        w = keep;
        EXPECT_NEAR(g.mlp[l].weight.data[k], (up - down) / 2e-6, 1e-7);
      }
    }
  }
}

// --- sgd_step -----------------------------------------------------------------

TEST(Sgd, ZeroGradientNoDecayLeavesParams) {
  auto p = init_params(ModelShape{2, {3}, 2, 2}, 1);
  const auto before = p;
  auto st = make_optimizer(p, 0.1, 0.9, 0.0);
  sgd_step(p, zeros_like(p), st);
  EXPECT_EQ(p, before);
}

TEST(Sgd, PlainGradientDescent) {
  auto p = init_params(ModelShape{2, {3}, 2, 2}, 2);
  const auto before = p;
  auto g = zeros_like(p);
  Rng rng(3);
  for_each_array(g, [&](Vec& a) { a = spi_test::gaussian_vec(a.size(), rng); });
  auto st = make_optimizer(p, 0.05, 0.0, 0.0);
  sgd_step(p, g, st);
  EXPECT_DOUBLE_EQ(p.mlp[0].weight.data[1], before.mlp[0].weight.data[1] - 0.05 * g.mlp[0].weight.data[1]);
  EXPECT_DOUBLE_EQ(p.classifier.bias[1], before.classifier.bias[1] - 0.05 * g.classifier.bias[1]);
}

TEST(Sgd, MomentumRecurrenceTwoSteps) {
  auto p = make_zero_params(ModelShape{1, {}, 1, 1});
  p.mlp[0].weight.data[0] = 1.0;
  auto g = zeros_like(p);
  g.mlp[0].weight.data[0] = 0.5;
  auto st = make_optimizer(p, 0.1, 0.9, 0.0);
  sgd_step(p, g, st);
  sgd_step(p, g, st);
  // v1 = g, v2 = 0.9 g + g = 1.9 g; θ2 = 1 − 0.1 (g + 1.9 g).
  EXPECT_DOUBLE_EQ(st.velocity.mlp[0].weight.data[0], 0.5 * 1.9);
  EXPECT_NEAR(p.mlp[0].weight.data[0], 1.0 - 0.1 * (0.5 + 0.95), 1e-15);
}

TEST(Sgd, CoupledWeightDecay) {
  auto p = make_zero_params(ModelShape{1, {}, 1, 1});
  p.mlp[0].weight.data[0] = 2.0;
  auto st = make_optimizer(p, 0.1, 0.9, 0.0005);
  sgd_step(p, zeros_like(p), st);
  EXPECT_DOUBLE_EQ(st.velocity.mlp[0].weight.data[0], 0.001);
  EXPECT_DOUBLE_EQ(p.mlp[0].weight.data[0], 2.0 - 0.1 * 0.001);
}

TEST(Sgd, ZeroLearningRateIsIdentity) {
  auto p = init_params(ModelShape{}, 4);
  const auto before = p;
  auto g = zeros_like(p);
  for_each_array(g, [](Vec& a) { std::fill(a.begin(), a.end(), 3.0); });
  auto st = make_optimizer(p, 0.0, 0.9, 0.0005);
  sgd_step(p, g, st);
  EXPECT_EQ(p, before);
}

TEST(Sgd, NonFiniteGradientRejectedBeforeUpdate) {
  auto p = init_params(ModelShape{2, {3}, 2, 2}, 5);
  const auto before = p;
  auto g = zeros_like(p);
  g.classifier.bias[0] = std::nan("");
  auto st = make_optimizer(p, 0.1, 0.9, 0.0);
  EXPECT_SPI_ERROR(sgd_step(p, g, st), ErrorKind::NonFiniteGradient);
  EXPECT_EQ(p, before);
}

TEST(Sgd, ReferenceDefaults) {
  const OptimizerState st;
  EXPECT_EQ(st.lr, 0.0002);
  EXPECT_EQ(st.momentum, 0.9);
  EXPECT_EQ(st.weight_decay, 0.0005);
}

// --- schedules ------------------------------------------------------------------

TEST(Schedule, Boundaries) {
  const Schedule s{0.0, 0.0002, 1e-5, 5, 40};
  EXPECT_EQ(schedule_value(s, 0, 0.0), 0.0);
  EXPECT_EQ(schedule_value(s, 5, 0.0), 0.0002);
  EXPECT_NEAR(schedule_value(s, 39, 1.0), 1e-5, 1e-12);
  EXPECT_NEAR(schedule_value(s, 2, 0.5), 0.0002 * 2.5 / 5, 1e-18);
}

TEST(Schedule, CosineMidpoint) {
  const Schedule s{0.0, 0.0002, 1e-5, 5, 45};
  EXPECT_NEAR(schedule_value(s, 25, 0.0), (0.0002 + 1e-5) / 2, 1e-9);
  const Schedule tau{0.7, 0.7, 0.25, 0, 80};
  EXPECT_EQ(schedule_value(tau, 0, 0.0), 0.7);
  EXPECT_NEAR(schedule_value(tau, 40, 0.0), 0.475, 1e-12);
  EXPECT_NEAR(schedule_value(tau, 79, 1.0), 0.25, 1e-12);
}

TEST(Schedule, CosineOracleAndMonotoneDecay) {
  const Schedule s{0.0, 1.0, 0.1, 3, 20};
  double prev = schedule_value(s, 3, 0.0);
  for (int e = 3; e < 20; ++e) {
    for (double f : {0.0, 0.25, 0.5, 0.75}) {
      const double v = schedule_value(s, e, f);
      const double progress = (e + f - 3.0) / 17.0;
      EXPECT_NEAR(v, 0.1 + 0.45 * (1 + std::cos(std::numbers::pi * progress)), 1e-14);
      EXPECT_LE(v, prev + 1e-15);
      prev = v;
    }
  }
}

TEST(Schedule, Errors) {
  const Schedule s{0.0, 0.0002, 1e-5, 5, 40};
  EXPECT_SPI_ERROR(schedule_value(s, 40, 0.0), ErrorKind::InvalidEpoch);
  EXPECT_SPI_ERROR(schedule_value(s, -1, 0.0), ErrorKind::InvalidEpoch);
  EXPECT_SPI_ERROR(schedule_value(s, 0, 1.5), ErrorKind::InvalidInput);
  EXPECT_SPI_ERROR((Schedule{0.0, 1e-5, 2e-4, 5, 40}.validate()), ErrorKind::InvalidInput);
  EXPECT_SPI_ERROR((Schedule{0.0, 1e-4, 1e-5, 50, 40}.validate()), ErrorKind::InvalidInput);
}

// --- checkpoints ----------------------------------------------------------------

TEST(Checkpoint, RoundTripIsExact) {
  const auto p = init_params(ModelShape{2, {64, 64}, 32, 5}, 77);
  const auto path = temp_path("ckpt_roundtrip.txt");
  save_checkpoint(path, p, CheckpointHeader{ModelShape{2, {64, 64}, 32, 5}, 77, 12});
  CheckpointHeader h;
  const auto q = load_checkpoint(path, &h);
  EXPECT_EQ(p, q);
  EXPECT_EQ(h.seed, 77u);
  EXPECT_EQ(h.epoch, 12);
  EXPECT_EQ(h.shape.hidden, (std::vector<std::size_t>{64, 64}));
  std::remove(path.c_str());
}

TEST(Checkpoint, Errors) {
  EXPECT_SPI_ERROR(load_checkpoint(temp_path("does_not_exist.txt")), ErrorKind::StorageError);
  const auto path = temp_path("ckpt_bad.txt");
  {
    std::ofstream(path) << "spi-checkpoint 1\ninput_dim 2\nhidden 0\nembedding_dim 1\nnum_classes 1\nseed 0\nepoch 0\n3 1 2 3\n";
  }
  EXPECT_SPI_ERROR(load_checkpoint(path), ErrorKind::ParseError);
  {
    std::ofstream(path) << "not a checkpoint\n";
  }
  EXPECT_SPI_ERROR(load_checkpoint(path), ErrorKind::ParseError);
  std::remove(path.c_str());
}
