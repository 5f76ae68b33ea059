// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "hydra/analysis.hpp"
#include "hydra/gradcheck.hpp"
#include "hydra/hydra_opt.hpp"
#include "hydra/synthetic.hpp"
#include "test_util.hpp"

namespace hydra {
namespace {

using testing::MatrixNear;
using testing::rel_inf;

std::vector<LowRankAdapter> random_targets(Rng& rng, std::size_t K, std::size_t d, std::size_t r, std::size_t k) {
  std::vector<LowRankAdapter> out;
  for (std::size_t i = 0; i < K; ++i) out.push_back({gaussian_sample(rng, d, r, 0, 1), gaussian_sample(rng, r, k, 0, 1)});
  return out;
}

/// Scalar instance: B1 = [2], A1 = [3] against B' = [1], A' = [1].
HydraState scalar_state(bool routed) {
  HydraState s;
  s.A = Matrix{{1}};
  s.Bs = {Matrix{{1}}};
  if (routed) s.C = Matrix{{0}};
  return s;
}

const std::vector<LowRankAdapter> kScalarTarget{{Matrix{{2}}, Matrix{{3}}}};

TEST(InitState, PerTaskModeHasNoLogits) {
  Rng rng(1);
  auto targets = random_targets(rng, 3, 6, 2, 5);
  HydraConfig cfg;
  cfg.clusters = 3;
  const HydraState s = init_state(targets, cfg, rng);
  EXPECT_FALSE(s.routed());
  EXPECT_EQ(s.Bs.size(), 3u);
  EXPECT_EQ(s.step, 0u);
}

TEST(InitState, MeanOfIdenticalAIsExact) {
  Rng rng(2);
  auto targets = random_targets(rng, 4, 6, 2, 5);
  for (auto& t : targets) t.A = targets.front().A;
  HydraConfig cfg;
  cfg.clusters = 2;
  const HydraState s = init_state(targets, cfg, rng);
  EXPECT_EQ(s.A, targets.front().A);
  EXPECT_EQ(s.Bs[0], targets[0].B);
  EXPECT_EQ(s.Bs[1], targets[1].B);
  ASSERT_TRUE(s.routed());
  EXPECT_EQ(s.C->rows(), 4u);
  EXPECT_EQ(s.C->cols(), 2u);
  EXPECT_EQ(s.A_moments.m, Matrix(2, 5));
}

TEST(InitState, SeedDeterminesState) {
  Rng gen(3);
  const auto targets = random_targets(gen, 4, 6, 2, 5);
  for (InitScheme init : {InitScheme::MEAN_A_COPY_B, InitScheme::RANDOM}) {
    HydraConfig cfg;
    cfg.clusters = 2;
    cfg.init = init;
    Rng a(10), b(10);
    EXPECT_EQ(init_state(targets, cfg, a), init_state(targets, cfg, b));
  }
}

TEST(InitState, TooManyClusters) {
  Rng rng(4);
  const auto targets = random_targets(rng, 2, 4, 2, 4);
  HydraConfig cfg;
  cfg.clusters = 3;
  EXPECT_THROW(init_state(targets, cfg, rng), ParameterError);
}

TEST(RoutedLoss, ScalarHandOracle) {
  const LossValue l = loss_eq1(scalar_state(true), kScalarTarget, HydraConfig{});
  EXPECT_DOUBLE_EQ(l.total, 5.0);  // |2*3 - 1*1|
  ASSERT_EQ(l.per_task.size(), 1u);
}

TEST(RoutedLoss, ZeroAtExactOneHotReconstruction) {
  Rng rng(5);
  HydraState s;
  s.A = gaussian_sample(rng, 2, 6, 0, 1);
  s.Bs = {gaussian_sample(rng, 5, 2, 0, 1), gaussian_sample(rng, 5, 2, 0, 1)};
  const std::vector<std::size_t> truth{1, 0, 1};
  std::vector<LowRankAdapter> targets;
  for (std::size_t c : truth) targets.push_back({s.Bs[c], s.A});
  s.C = Matrix(3, 2, 0.0);
  for (std::size_t i = 0; i < 3; ++i) (*s.C)(i, truth[i]) = 1e6;
  EXPECT_EQ(loss_eq1(s, targets, HydraConfig{}).total, 0.0);
  EXPECT_EQ(assign_tasks(s, 3), truth);
}

TEST(RoutedLoss, RequiresLogits) { EXPECT_THROW(loss_eq1(scalar_state(false), kScalarTarget, HydraConfig{}), ModeError); }

TEST(LossProperty, NonNegative) {
  Rng rng(6);
  for (DistanceKind kind : {DistanceKind::MAE, DistanceKind::MSE, DistanceKind::FRO, DistanceKind::COS}) {
    HydraConfig cfg;
    cfg.clusters = 2;
    cfg.distance = kind;
    cfg.init = InitScheme::RANDOM;
    for (int trial = 0; trial < 10; ++trial) {
      const auto targets = random_targets(rng, 3, 5, 2, 4);
      const HydraState s = init_state(targets, cfg, rng);
      EXPECT_GE(loss_eq1(s, targets, cfg).total, kind == DistanceKind::COS ? -1e-12 : 0.0);
    }
  }
}

TEST(PerTaskLoss, ZeroWithSharedA) {
  Rng rng(7);
  const Matrix shared = gaussian_sample(rng, 3, 7, 0, 1);
  std::vector<LowRankAdapter> targets;
  HydraState s;
  s.A = shared;
  for (int i = 0; i < 4; ++i) {
    targets.push_back({gaussian_sample(rng, 6, 3, 0, 1), shared});
    s.Bs.push_back(targets.back().B);
  }
  EXPECT_EQ(loss_eq2(s, targets, HydraConfig{}).total, 0.0);
}

TEST(PerTaskLoss, RequiresOneBPerTask) {
  Rng rng(8);
  const auto targets = random_targets(rng, 3, 4, 2, 4);
  HydraConfig cfg;
  cfg.clusters = 2;
  const HydraState s = init_state(targets, cfg, rng);
  EXPECT_THROW(loss_eq2(s, targets, cfg), ModeError);
}

TEST(PerTaskLoss, SingleTaskMatchesRoutedLoss) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const auto targets = random_targets(rng, 1, 4, 2, 4);
    HydraState s;
    s.A = gaussian_sample(rng, 2, 4, 0, 1);
    s.Bs = {gaussian_sample(rng, 4, 2, 0, 1)};
    const double eq2 = loss_eq2(s, targets, HydraConfig{}).total;
    s.C = gaussian_sample(rng, 1, 1, 0, 1);  // single column: weight is exactly 1
    EXPECT_EQ(loss_eq1(s, targets, HydraConfig{}).total, eq2);
  }
}

TEST(PerTaskLoss, PermutingTasksPermutesPerTaskLoss) {
  Rng rng(10);
  auto targets = random_targets(rng, 3, 4, 2, 5);
  HydraState s;
  s.A = gaussian_sample(rng, 2, 5, 0, 1);
  for (int i = 0; i < 3; ++i) s.Bs.push_back(gaussian_sample(rng, 4, 2, 0, 1));
  const auto before = loss_eq2(s, targets, HydraConfig{}).per_task;
  std::swap(targets[0], targets[2]);
  std::swap(s.Bs[0], s.Bs[2]);
  const auto after = loss_eq2(s, targets, HydraConfig{}).per_task;
  EXPECT_EQ(after[0], before[2]);
  EXPECT_EQ(after[1], before[1]);
  EXPECT_EQ(after[2], before[0]);
}

TEST(LossConsistency, OneHotRoutingEqualsPerTask) {
  Rng rng(11);
  for (DistanceKind kind : {DistanceKind::MAE, DistanceKind::MSE, DistanceKind::FRO, DistanceKind::COS}) {
    HydraConfig cfg;
    cfg.clusters = 3;
    cfg.distance = kind;
    cfg.init = InitScheme::RANDOM;
    const auto targets = random_targets(rng, 3, 5, 2, 5);
    HydraState s = init_state(targets, cfg, rng);
    const double eq2 = loss_eq2(s, targets, cfg).total;
    s.C = Matrix(3, 3);
    for (std::size_t i = 0; i < 3; ++i) (*s.C)(i, i) = 1e6;
    EXPECT_NEAR(loss_eq1(s, targets, cfg).total, eq2, 1e-9 * std::abs(eq2));
  }
}

TEST(Gradients, ScalarHandOracle) {
  for (bool routed : {true, false}) {
    const HydraGradients g = gradients(scalar_state(routed), kScalarTarget, HydraConfig{});
    EXPECT_EQ(g.A, (Matrix{{-1}}));
    EXPECT_EQ(g.Bs.at(0), (Matrix{{-1}}));
    if (routed) {
      EXPECT_EQ(*g.C, (Matrix{{0}}));
    }
  }
}

TEST(Gradients, ZeroAtExactReconstructionMae) {
  Rng rng(12);
  HydraState s;
  s.A = gaussian_sample(rng, 2, 6, 0, 1);
  s.Bs = {gaussian_sample(rng, 5, 2, 0, 1), gaussian_sample(rng, 5, 2, 0, 1)};
  std::vector<LowRankAdapter> targets{{s.Bs[0], s.A}, {s.Bs[1], s.A}, {s.Bs[0], s.A}};
  s.C = Matrix{{1e6, 0}, {0, 1e6}, {1e6, 0}};
  const HydraGradients g = gradients(s, targets, HydraConfig{});
  EXPECT_EQ(g.A, Matrix(2, 6));
  for (const auto& b : g.Bs) EXPECT_EQ(b, Matrix(5, 2));
  EXPECT_EQ(*g.C, Matrix(3, 2));
}

// Independent of the gradcheck module: finite differences of loss_eq1 /
// loss_eq2 straight from the public API.
TEST(GradientsProperty, MatchFiniteDifferences) {
  Rng rng(13);
  for (DistanceKind kind : {DistanceKind::MAE, DistanceKind::MSE, DistanceKind::FRO, DistanceKind::COS}) {
    for (std::size_t M : {2, 3}) {
      HydraConfig cfg;
      cfg.clusters = M;
      cfg.distance = kind;
      cfg.init = InitScheme::RANDOM;
      for (int trial = 0; trial < 3; ++trial) {
        const auto targets = random_targets(rng, 3, 8, 2, 8);
        HydraState s = init_state(targets, cfg, rng);
        s.A = gaussian_sample(rng, 2, 8, 0, 1);
        for (auto& b : s.Bs) b = gaussian_sample(rng, 8, 2, 0, 1);

        auto loss = [&] { return M == 3 ? loss_eq2(s, targets, cfg).total : loss_eq1(s, targets, cfg).total; };
        const HydraGradients g = gradients(s, targets, cfg);
        auto fd = [&](Matrix& param) {
          const Matrix saved = param;
          Matrix out = finite_diff(
              [&](const Matrix& p) {
                param = p;
                return loss();
              },
              saved, 1e-5);
          param = saved;
          return out;
        };
        EXPECT_LT(rel_inf(g.A, fd(s.A)), 1e-5) << to_string(kind) << " M=" << M;
        for (std::size_t j = 0; j < M; ++j) EXPECT_LT(rel_inf(g.Bs[j], fd(s.Bs[j])), 1e-5) << to_string(kind);
        if (s.C) {
          EXPECT_LT(rel_inf(*g.C, fd(*s.C)), 1e-5) << to_string(kind);
        }
      }
    }
  }
}

TEST(GradCheck, HarnessPassesOnSmallRun) {
  gradcheck::Options opt;
  opt.instances = 2;
  const auto rep = gradcheck::run(opt);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
  // 4 kinds x {M=2: A, 2 B, C; M=3: A, 3 B} x 2 instances, same count for VeRA.
  EXPECT_EQ(rep.cases.size(), 2u * 4 * 2 * (4 + 4));
}

TEST(AdamW, ZeroGradientIsFixedPoint) {
  Rng rng(14);
  const auto targets = random_targets(rng, 3, 4, 2, 4);
  HydraConfig cfg;
  cfg.clusters = 2;
  HydraState s = init_state(targets, cfg, rng);
  const HydraState before = s;
  HydraGradients zero{Matrix(2, 4), {Matrix(4, 2), Matrix(4, 2)}, Matrix(3, 2)};
  adamw_step(s, zero, cfg);
  EXPECT_EQ(s.A, before.A);
  EXPECT_EQ(s.Bs, before.Bs);
  EXPECT_EQ(s.C, before.C);
  EXPECT_EQ(s.step, 1u);
}

TEST(AdamW, FirstStepMovesBySignTimesLearningRate) {
  HydraConfig cfg;
  cfg.learning_rate = 1e-3;
  Matrix theta{{1.0, -2.0, 0.5}};
  const Matrix g{{0.3, -4.0, 1e-3}};
  AdamMoments mom = AdamMoments::zeros_like(theta);
  adamw_update(theta, mom, g, cfg, 1);
  // m_hat = g, v_hat = g^2: shift = -lr * g / (|g| + eps).
  const Matrix expected{{1.0 - 1e-3 * 0.3 / (0.3 + 1e-8), -2.0 + 1e-3 * 4.0 / (4.0 + 1e-8), 0.5 - 1e-3 * 1e-3 / (1e-3 + 1e-8)}};
  EXPECT_TRUE(MatrixNear(theta, expected, 1e-15));
}

TEST(AdamW, WeightDecayShrinksParameters) {
  HydraConfig cfg;
  cfg.weight_decay = 0.1;
  cfg.learning_rate = 0.01;
  Matrix theta{{2.0}};
  AdamMoments mom = AdamMoments::zeros_like(theta);
  adamw_update(theta, mom, Matrix{{0.0}}, cfg, 1);
  EXPECT_DOUBLE_EQ(theta[0], 2.0 - 0.01 * 0.1 * 2.0);
}

TEST(AdamW, DeterministicSteps) {
  Rng rng(15);
  const auto targets = random_targets(rng, 3, 4, 2, 4);
  HydraConfig cfg;
  cfg.clusters = 2;
  HydraState a = init_state(targets, cfg, rng);
  HydraState b = a;
  const HydraGradients g = gradients(a, targets, cfg);
  adamw_step(a, g, cfg);
  adamw_step(b, g, cfg);
  EXPECT_EQ(a, b);
}

TEST(Train, ZeroEpochsReturnsInitialState) {
  Rng gen(16);
  const auto targets = random_targets(gen, 3, 4, 2, 4);
  HydraConfig cfg;
  cfg.clusters = 2;
  cfg.epochs = 0;
  Rng a(1), b(1);
  const auto [state, trace] = train(targets, cfg, a);
  EXPECT_EQ(state, init_state(targets, cfg, b));
  EXPECT_TRUE(trace.losses.empty());
}

TEST(Train, ExactRepresentationIsStationary) {
  Rng gen(17);
  const Matrix shared = gaussian_sample(gen, 2, 6, 0, 1);
  std::vector<LowRankAdapter> targets;
  for (int i = 0; i < 3; ++i) targets.push_back({gaussian_sample(gen, 5, 2, 0, 1), shared});
  HydraConfig cfg;
  cfg.clusters = 3;
  cfg.epochs = 100;
  Rng a(2), b(2);
  const auto [state, trace] = train(targets, cfg, a);
  for (double l : trace.losses) EXPECT_EQ(l, 0.0);
  const HydraState init = init_state(targets, cfg, b);
  EXPECT_EQ(state.A, init.A);
  EXPECT_EQ(state.Bs, init.Bs);
}

TEST(Train, ReducesLoss) {
  SynthSpec spec;
  spec.slot_names = {"q"};
  const AdapterCollection c = generate(spec);
  const auto targets = c.slot_adapters<LowRankAdapter>(c.slots().front());
  HydraConfig cfg;
  cfg.clusters = 5;
  cfg.epochs = 200;
  Rng rng(0);
  const auto [state, trace] = train(targets, cfg, rng);
  EXPECT_LT(trace.final_loss, trace.losses.front());
  EXPECT_EQ(trace.losses.size(), 200u);
}

TEST(Train, RandomInitConvergesWithLargerStep) {
  SynthSpec spec;
  spec.slot_names = {"q"};
  const AdapterCollection c = generate(spec);
  const auto targets = c.slot_adapters<LowRankAdapter>(c.slots().front());
  HydraConfig cfg;
  cfg.clusters = 5;
  cfg.epochs = 2000;
  cfg.learning_rate = 1e-2;
  cfg.init = InitScheme::RANDOM;
  Rng rng(0);
  const auto [state, trace] = train(targets, cfg, rng);
  EXPECT_LT(trace.final_loss, 0.5 * trace.losses.front());
}

TEST(Train, SeedDeterminesFinalState) {
  Rng gen(18);
  const auto targets = random_targets(gen, 4, 6, 2, 6);
  HydraConfig cfg;
  cfg.clusters = 2;
  cfg.epochs = 50;
  Rng a(3), b(3);
  EXPECT_EQ(train(targets, cfg, a).first, train(targets, cfg, b).first);
}

TEST(AssignTasks, IdentityInPerTaskMode) {
  HydraState s;
  s.A = Matrix(1, 1);
  s.Bs.assign(3, Matrix(1, 1));
  EXPECT_EQ(assign_tasks(s, 3), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(AssignTasks, ArgmaxWithShiftAndScaleInvariance) {
  HydraState s;
  s.A = Matrix(1, 1);
  s.Bs.assign(2, Matrix(1, 1));
  s.C = Matrix{{0.1, 2.0}, {3.0, 3.0}, {-1.0, -5.0}};
  const std::vector<std::size_t> expected{1, 0, 0};  // tie -> lowest index
  EXPECT_EQ(assign_tasks(s, 3), expected);
  for (std::size_t c = 0; c < 2; ++c) (*s.C)(0, c) += 7.0;
  EXPECT_EQ(assign_tasks(s, 3), expected);
  *s.C *= 0.25;
  EXPECT_EQ(assign_tasks(s, 3), expected);
}

TEST(ExportBundle, ParameterCountAndRatios) {
  for (std::size_t M : {1, 5}) {
    HydraState s;
    s.A = Matrix(4, 16);
    s.Bs.assign(M, Matrix(16, 4));
    const LoraBundleSlot b = export_bundle(s, std::vector<std::size_t>(5, 0));
    EXPECT_EQ(b.param_count(), M * 4 * 16 + 4 * 16);
    EXPECT_DOUBLE_EQ(100.0 * b.param_count() / (5.0 * 4 * 32), M == 1 ? 20.0 : 60.0);
  }
  HydraState s;
  s.A = Matrix(1, 1);
  s.Bs = {Matrix(1, 1)};
  EXPECT_THROW(export_bundle(s, {1}), ValidationError);
}

// VeRA

std::vector<VeraAdapter> random_vera(Rng& rng, std::size_t K, std::size_t d, std::size_t r, std::size_t k) {
  const Matrix B = gaussian_sample(rng, d, r, 0, 1), A = gaussian_sample(rng, r, k, 0, 1);
  std::vector<VeraAdapter> out;
  for (std::size_t i = 0; i < K; ++i) out.push_back({gaussian_sample(rng, d, 1, 0, 1), gaussian_sample(rng, r, 1, 0, 1), B, A});
  return out;
}

TEST(Vera, ExactRepresentationHasZeroLoss) {
  Rng rng(19);
  auto targets = random_vera(rng, 3, 6, 2, 5);
  for (auto& t : targets) t.lambda_d = targets.front().lambda_d;
  HydraConfig cfg;
  cfg.clusters = 3;
  const VeraHydraState s = init_vera_state(targets, cfg, rng);
  EXPECT_EQ(vera_loss(s, targets, cfg).total, 0.0);
  const VeraGradients g = vera_gradients(s, targets, cfg);
  EXPECT_EQ(g.lambda_d, Matrix(2, 1));
  for (const auto& b : g.lambda_bs) EXPECT_EQ(b, Matrix(6, 1));
}

TEST(Vera, ScalarCaseMatchesLoraArithmetic) {
  // diag(2) [1] diag(3) [1] = 6 against prediction 1 * 1 * 1 * 1.
  const std::vector<VeraAdapter> targets{{Matrix{{2}}, Matrix{{3}}, Matrix{{1}}, Matrix{{1}}}};
  VeraHydraState s;
  s.shared_B = Matrix{{1}};
  s.shared_A = Matrix{{1}};
  s.lambda_d = Matrix{{1}};
  s.lambda_bs = {Matrix{{1}}};
  EXPECT_DOUBLE_EQ(vera_loss(s, targets, HydraConfig{}).total, 5.0);
  const VeraGradients g = vera_gradients(s, targets, HydraConfig{});
  EXPECT_EQ(g.lambda_d, (Matrix{{-1}}));
  EXPECT_EQ(g.lambda_bs.at(0), (Matrix{{-1}}));
}

TEST(Vera, RejectsDifferentFrozenMatrices) {
  Rng rng(20);
  auto targets = random_vera(rng, 2, 4, 2, 4);
  targets[1].shared_A = gaussian_sample(rng, 2, 4, 0, 1);
  HydraConfig cfg;
  EXPECT_THROW(train_vera(targets, cfg, rng), ValidationError);
}

TEST(VeraProperty, GradientsMatchFiniteDifferences) {
  Rng rng(21);
  for (DistanceKind kind : {DistanceKind::MAE, DistanceKind::MSE, DistanceKind::FRO, DistanceKind::COS}) {
    for (std::size_t M : {2, 3}) {
      HydraConfig cfg;
      cfg.clusters = M;
      cfg.distance = kind;
      cfg.init = InitScheme::RANDOM;
      const auto targets = random_vera(rng, 3, 6, 2, 5);
      VeraHydraState s = init_vera_state(targets, cfg, rng);
      s.lambda_d = gaussian_sample(rng, 2, 1, 0, 1);
      for (auto& b : s.lambda_bs) b = gaussian_sample(rng, 6, 1, 0, 1);
      const VeraGradients g = vera_gradients(s, targets, cfg);
      auto fd = [&](Matrix& param) {
        const Matrix saved = param;
        Matrix out = finite_diff(
            [&](const Matrix& p) {
              param = p;
              return vera_loss(s, targets, cfg).total;
            },
            saved, 1e-5);
        param = saved;
        return out;
      };
      EXPECT_LT(rel_inf(g.lambda_d, fd(s.lambda_d)), 1e-5) << to_string(kind);
      for (std::size_t j = 0; j < M; ++j) EXPECT_LT(rel_inf(g.lambda_bs[j], fd(s.lambda_bs[j])), 1e-5);
      if (s.C) {
        EXPECT_LT(rel_inf(*g.C, fd(*s.C)), 1e-5);
      }
    }
  }
}

TEST(Vera, TrainingReducesLoss) {
  SynthSpec spec;
  spec.slot_names = {"q"};
  const AdapterCollection c = generate_vera(spec);
  const auto targets = c.slot_adapters<VeraAdapter>(c.slots().front());
  HydraConfig cfg;
  cfg.clusters = 2;
  cfg.epochs = 300;
  cfg.learning_rate = 1e-2;
  Rng rng(0);
  const auto [state, trace] = train_vera(targets, cfg, rng);
  EXPECT_LT(trace.final_loss, trace.losses.front());
  EXPECT_EQ(export_bundle(state, assign_tasks(state, 5)).param_count(), 2u * 16 + 4);
}

// Collections

TEST(HydraMergeCollection, JobCountDoesNotChangeResult) {
  SynthSpec spec;
  spec.layers = 2;
  spec.d = 8;
  spec.k = 8;
  spec.r = 2;
  const AdapterCollection c = generate(spec);
  HydraConfig cfg;
  cfg.clusters = 2;
  cfg.epochs = 20;
  cfg.seed = 4;
  const auto serial = hydra_merge_collection(c, cfg, 1);
  const auto parallel = hydra_merge_collection(c, cfg, 4);
  EXPECT_EQ(serial.bundle, parallel.bundle);
  EXPECT_EQ(serial.final_loss(), parallel.final_loss());
}

TEST(HydraMergeCollection, WarmStartAtExactRepresentationReconstructsPerfectly) {
  SynthSpec spec;
  spec.a_noise = 0.0;
  spec.d = 8;
  spec.k = 8;
  spec.r = 2;
  const AdapterCollection c = generate(spec);
  HydraConfig cfg;
  cfg.clusters = 5;
  cfg.epochs = 10;
  const auto res = hydra_merge_collection(c, cfg);
  const ReconReport rep = reconstruction_report(c, res.bundle);
  EXPECT_EQ(rep.grand_mean_mae, 0.0);
  EXPECT_EQ(rep.grand_mean_fro, 0.0);
}

TEST(GlobalizeAssignments, MajorityVoteAcrossSlots) {
  MergedBundle b;
  b.tasks = {"t1", "t2"};
  b.slots.emplace(SlotKey{0, "q"}, LoraBundleSlot{Matrix(1, 1), {Matrix(1, 1), Matrix(1, 1)}, {0, 1}});
  b.slots.emplace(SlotKey{0, "v"}, LoraBundleSlot{Matrix(1, 1), {Matrix(1, 1), Matrix(1, 1)}, {1, 1}});
  b.slots.emplace(SlotKey{1, "q"}, LoraBundleSlot{Matrix(1, 1), {Matrix(1, 1), Matrix(1, 1)}, {1, 0}});
  globalize_assignments(b);
  for (const auto& [key, slot] : b.slots)
    EXPECT_EQ(std::get<LoraBundleSlot>(slot).assignment, (std::vector<std::size_t>{1, 1}));
}

}  // namespace
}  // namespace hydra
