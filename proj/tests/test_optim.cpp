#include "spdnet/errors.hpp"
#include "spdnet/optim.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

using namespace spdnet;
using oracle::Rng;

namespace {

NetworkConfig tiny(AttentionMode mode = AttentionMode::kSmsa) {
  NetworkConfig c;
  c.backbone = {{6, 5}};
  c.smae_up = 5;
  c.smae_down = 3;
  c.depth = 5;
  c.classes = 2;
  c.attention = mode;
  return c;
}

SpdDataset toy(int n, std::uint64_t seed) {
  SynthOptions o;
  o.classes = 2;
  o.per_class = n / 2;
  o.dim = 6;
  o.frames = 60;
  o.seed = seed;
  return synth_generate(o);
}

double mean_loss(const SpdDataset& data, const ModelState& s,
                 const NetworkConfig& c) {
  double total = 0.0;
  for (const auto& item : data.items) total += loss(model_fwd(item.x, s, c), item.label, c).total;
  return total / static_cast<double>(data.size());
}

bool same_state(const ModelState& a, const ModelState& b) {
  for (std::size_t i = 0; i < a.backbone.size(); ++i) {
    if (a.backbone[i].matrix() != b.backbone[i].matrix()) return false;
  }
  for (std::size_t e = 0; e < a.smae.size(); ++e) {
    if (a.smae[e].down.matrix() != b.smae[e].down.matrix()) return false;
    if (a.smae[e].up.matrix() != b.smae[e].up.matrix()) return false;
    if (a.heads[e].weight != b.heads[e].weight) return false;
    if (a.heads[e].bias != b.heads[e].bias) return false;
  }
  return true;
}

}  // namespace

TEST(OptimizerConfig, Validation) {
  OptimizerConfig o;
  EXPECT_NO_THROW(o.validate());
  o.lr = 0.0;
  EXPECT_THROW(o.validate(), ConfigError);
  o = OptimizerConfig{};
  o.decay = 1.5;
  EXPECT_THROW(o.validate(), ConfigError);
  o = OptimizerConfig{};
  o.batch_size = 0;
  try {
    o.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}

TEST(StiefelStep, ZeroGradientIsExact) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const StiefelParam w = StiefelParam::random(7, 4, rng);
    EXPECT_EQ(stiefel_step(w, Matrix::Zero(7, 4), 0.1).matrix(), w.matrix());
    EXPECT_EQ(stiefel_step(w, oracle::gaussian(7, 4, rng), 0.0).matrix(), w.matrix());
  }
}

TEST(StiefelStep, TangentProjectionIsIdempotent) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Matrix w = StiefelParam::random(6, 3, rng).matrix();
    const Matrix g = stiefel_tangent(w, oracle::gaussian(6, 3, rng));
    EXPECT_LT((stiefel_tangent(w, g) - g).norm(), 1e-12 * (1.0 + g.norm()));
    const Matrix wg = w.transpose() * g;
    EXPECT_LT((wg + wg.transpose()).norm(), 1e-12);
  }
}

TEST(StiefelStep, OrthogonalitySweep) {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const int d_in = 3 + t % 6;
    const int d_out = 1 + t % d_in;
    const StiefelParam w = StiefelParam::random(d_in, d_out, rng);
    const StiefelParam next = stiefel_step(w, oracle::gaussian(d_in, d_out, rng), 0.5);
    ASSERT_LT(next.orthogonality_residual(), 1e-8);
  }
}

TEST(StiefelStep, RetractionFollowsDescent) {
  Rng rng(4);
  const StiefelParam w = StiefelParam::random(6, 3, rng);
  const Matrix g = oracle::gaussian(6, 3, rng);
  const Matrix xi = stiefel_tangent(w.matrix(), g);
  const double h = 1e-6;
  const Matrix moved = stiefel_step(w, g, h).matrix();
  EXPECT_LT((moved - (w.matrix() - h * xi)).norm(), 10 * h * h * (1 + xi.squaredNorm()));
}

TEST(StiefelStep, RankCollapseIsReported) {
  Matrix m = Matrix::Zero(4, 2);
  m(0, 0) = 1.0;
  m(0, 1) = 1.0;
  EXPECT_THROW(retract_qf(m), RetractionError);
  EXPECT_THROW(stiefel_step(StiefelParam::identity_columns(4, 2), Matrix::Zero(4, 3), 0.1),
               DimensionMismatchError);
}

TEST(LrSchedule, StepDecay) {
  OptimizerConfig o;
  o.decay_period = 50;
  EXPECT_DOUBLE_EQ(lr_schedule(0, o), 0.01);
  EXPECT_DOUBLE_EQ(lr_schedule(49, o), 0.01);
  EXPECT_NEAR(lr_schedule(50, o), 0.008, 1e-15);
  EXPECT_NEAR(lr_schedule(100, o), 0.0064, 1e-15);
  double prev = lr_schedule(0, o);
  for (int e = 1; e < 500; ++e) {
    const double cur = lr_schedule(e, o);
    EXPECT_LE(cur, prev);
    prev = cur;
  }
  o.decay_period = 0;
  EXPECT_DOUBLE_EQ(lr_schedule(10000, o), 0.01);
  EXPECT_THROW(lr_schedule(-1, o), PreconditionError);
}

TEST(TrainEpoch, ZeroLearningRateKeepsState) {
  const NetworkConfig c = tiny();
  const SpdDataset data = toy(10, 5);
  ModelState s = init_model(c, 5);
  const ModelState before = s;
  OptimizerConfig o;
  o.lr = 0.0;
  o.batch_size = 4;
  auto rng = epoch_rng(o.seed, 0);
  const EpochMetrics m = train_epoch(data, s, c, o, 0, rng);
  EXPECT_TRUE(same_state(s, before));
  EXPECT_EQ(m.samples, 10u);
  EXPECT_NEAR(m.loss, mean_loss(data, s, c), 1e-12);
  EXPECT_GT(m.ce, 0.0);
}

TEST(TrainEpoch, SingleSampleLossDecreases) {
  const NetworkConfig c = tiny();
  SpdDataset data = toy(2, 6);
  data.items.resize(1);
  ModelState s = init_model(c, 6);
  OptimizerConfig o;
  o.batch_size = 1;
  double prev = mean_loss(data, s, c);
  for (int epoch = 0; epoch < 10; ++epoch) {
    auto rng = epoch_rng(o.seed, epoch);
    train_epoch(data, s, c, o, epoch, rng);
    const double cur = mean_loss(data, s, c);
    EXPECT_LT(cur, prev) << "epoch " << epoch;
    prev = cur;
  }
}

TEST(TrainEpoch, DeterministicAcrossRunsAndWorkers) {
  const NetworkConfig c = tiny();
  const SpdDataset data = toy(20, 7);
  OptimizerConfig o;
  o.batch_size = 6;
  auto run = [&](int workers) {
    OptimizerConfig oo = o;
    oo.workers = workers;
    ModelState s = init_model(c, 7);
    std::vector<double> losses;
    for (int epoch = 0; epoch < 3; ++epoch) {
      auto rng = epoch_rng(oo.seed, epoch);
      losses.push_back(train_epoch(data, s, c, oo, epoch, rng).loss);
    }
    return std::pair{losses, s};
  };
  const auto a = run(0);
  const auto b = run(0);
  const auto p = run(3);
  EXPECT_EQ(a.first, b.first);
  EXPECT_TRUE(same_state(a.second, b.second));
  EXPECT_EQ(a.first, p.first);
  EXPECT_TRUE(same_state(a.second, p.second));
}

TEST(TrainEpoch, OrthogonalityHoldsAfterEveryStep) {
  const NetworkConfig c = tiny(AttentionMode::kEusa);
  const SpdDataset data = toy(12, 8);
  ModelState s = init_model(c, 8);
  OptimizerConfig o;
  o.batch_size = 5;
  o.lr = 0.05;
  for (int epoch = 0; epoch < 5; ++epoch) {
    auto rng = epoch_rng(o.seed, epoch);
    train_epoch(data, s, c, o, epoch, rng);
    for (const auto& w : s.backbone) EXPECT_LT(w.orthogonality_residual(), 1e-8);
    for (const auto& p : s.smae) {
      EXPECT_LT(p.down.orthogonality_residual(), 1e-8);
      EXPECT_LT(p.up.orthogonality_residual(), 1e-8);
    }
  }
}

TEST(TrainEpoch, NaNReportsBatch) {
  const NetworkConfig c = tiny();
  const SpdDataset data = toy(6, 9);
  ModelState s = init_model(c, 9);
  s.heads[0].bias(0) = NAN;
  OptimizerConfig o;
  o.batch_size = 3;
  auto rng = epoch_rng(o.seed, 0);
  try {
    train_epoch(data, s, c, o, 0, rng);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos) << e.what();
  }
}

TEST(Descent, SmallStepReducesLoss) {
  int improved = 0;
  const NetworkConfig c = tiny();
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const SpdDataset data = toy(6, 1000 + seed);
    ModelState s = init_model(c, seed);
    const double before = mean_loss(data, s, c);
    std::vector<const LabeledSpd*> batch;
    for (const auto& item : data.items) batch.push_back(&item);
    const BatchResult r = batch_gradient(batch, s, c, 0);
    apply_step(s, r.grads, 1e-3, 1e-3);
    if (mean_loss(data, s, c) < before) ++improved;
  }
  EXPECT_GE(improved, 95);
}

TEST(Workers, DeterministicEnvironmentForcesSequential) {
  ::setenv("SPD_DETERMINISTIC", "1", 1);
  EXPECT_EQ(effective_workers(8), 0);
  ::unsetenv("SPD_DETERMINISTIC");
  EXPECT_EQ(effective_workers(8), 8);
}

TEST(EpochRng, DependsOnSeedAndEpochOnly) {
  auto a = epoch_rng(3, 7);
  auto b = epoch_rng(3, 7);
  auto c = epoch_rng(3, 8);
  const auto x = a();
  EXPECT_EQ(x, b());
  EXPECT_NE(x, c());
}
