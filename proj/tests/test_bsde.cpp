#include "epigame/bsde.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace epigame;
using namespace epigame::bsde;
using namespace epigame::testing;
using nn::OutputActivation;

TEST(DriverTerms, ControlFreeGameHasNoShift) {
  GameParams q = ny_nj_pa_params();
  q.policy_effectiveness = 0.0;
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd x = random_state(3, rng).solver();
    const ControlProfile others = random_controls(3, rng);
    Eigen::VectorXd p(9);
    for (Eigen::Index i = 0; i < 9; ++i) p(i) = 1e12 * std::normal_distribution<double>()(rng);
    const DriverTerms d = driver_terms(1, 10.0, x, p, others, q);
    ControlProfile own_zero = others;
    own_zero.ell(1) = 0.0;
    own_zero.h(1) = 0.0;
    EXPECT_EQ(d.mu, solver_drift(x, own_zero, q));
    EXPECT_EQ(d.control.ell, 0.0);
    EXPECT_EQ(d.control.h, 0.0);
    EXPECT_EQ(d.g, running_cost(1, 10.0, x, 0.0, 0.0, q));
  }
}

TEST(DriverTerms, ZeroGradientGivesRunningCostAtOrigin) {
  const GameParams q = epigame::testing::three_regions_both_controls();
  std::mt19937_64 rng(2);
  const Eigen::VectorXd x = random_state(3, rng).solver();
  const DriverTerms d = driver_terms(0, 5.0, x, Eigen::VectorXd::Zero(9), random_controls(3, rng), q);
  EXPECT_EQ(d.control.ell, 0.0);
  EXPECT_EQ(d.control.h, 0.0);
  EXPECT_EQ(d.g, running_cost(0, 5.0, x, 0.0, 0.0, q));
}

TEST(DriverTerms, SplitRecoversTheMinimisedHamiltonian) {
  const GameParams q = epigame::testing::three_regions_both_controls();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> exponent(9.0, 14.0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = static_cast<std::size_t>(trial % 3);
    const Eigen::VectorXd x = random_state(3, rng).solver();
    const ControlProfile others = random_controls(3, rng);
    const double scale = std::pow(10.0, exponent(rng));
    Eigen::VectorXd p(9);
    for (Eigen::Index i = 0; i < 9; ++i) p(i) = scale * std::normal_distribution<double>()(rng);
    const DriverTerms d = driver_terms(n, 20.0, x, p, others, q);
    ControlProfile at = others;
    at.ell(static_cast<Eigen::Index>(n)) = d.control.ell;
    at.h(static_cast<Eigen::Index>(n)) = d.control.h;
    const double h_min = hamiltonian_value(n, 20.0, x, at, p, q);
    EXPECT_LE(relative_error(d.mu.dot(p) + d.g, h_min), 1e-10);
  }
}

TEST(StageLoss, ExactLinearValueGivesZeroLoss) {
  double c = 0.0;
  StageProblem pb = constant_cost_problem(&c);
  pb.params.noise_s.setZero();
  Mlp v({4, 1}, OutputActivation::identity);  // V = c (T - t) in value units
  v.weights()[0](0, 0) = -c * 60.0 / pb.value_scale;
  v.biases()[0](0) = c * 60.0 / pb.value_scale;
  const Mlp a({4, 2}, OutputActivation::logistic);
  std::mt19937_64 rng(4);
  const StageLoss sl = stage_loss(pb, v, a, draw_noise(pb, rng));
  EXPECT_LE(sl.terminal_sq, 1e-24);
  EXPECT_LE(sl.loss, 1e-24);
}

TEST(StageLoss, PolicyGradientVanishesWithoutMismatchWeight) {
  StageProblem pb = small_problem();
  pb.tau = 0.0;
  Mlp v = random_value_net(4, 5);
  Mlp a = random_policy_net(4, 6);
  normalize_for_small_problem(v, a);
  std::mt19937_64 rng(7);
  const NoiseBatch nb = draw_noise(pb, rng);
  const StageLoss sl = stage_loss(pb, v, a, nb);
  EXPECT_EQ(sl.policy_grad.squared_norm(), 0.0);
  Mlp other = random_policy_net(4, 8);
  other.set_input_normalization(a.input_shift(), a.input_scale());
  EXPECT_EQ(stage_loss(pb, v, other, nb, false).loss, sl.loss);
}

TEST(StageLoss, MatchesIndependentImplementation) {
  StageProblem pb = small_problem();
  Mlp v = random_value_net(4, 9);
  Mlp a = random_policy_net(4, 10);
  normalize_for_small_problem(v, a);
  std::mt19937_64 rng(11);
  for (int batch = 0; batch < 5; ++batch) {
    const NoiseBatch nb = draw_noise(pb, rng);
    EXPECT_LE(relative_error(stage_loss(pb, v, a, nb, false).loss, reference_loss(pb, v, a, nb)), 1e-10);
  }
}

TEST(StageLoss, MatchesIndependentImplementationWithPathConsistency) {
  StageProblem pb = small_problem();
  pb.consistency = 3.0;
  Mlp v = random_value_net(4, 40);
  Mlp a = random_policy_net(4, 41);
  normalize_for_small_problem(v, a);
  std::mt19937_64 rng(42);
  const NoiseBatch nb = draw_noise(pb, rng);
  const StageLoss sl = stage_loss(pb, v, a, nb, false);
  EXPECT_GT(sl.path_gap, 0.0);
  EXPECT_LE(relative_error(sl.loss, reference_loss(pb, v, a, nb)), 1e-10);
}

TEST(StageLoss, ExactLinearValueHasNoPathGap) {
  double c = 0.0;
  StageProblem pb = constant_cost_problem(&c);
  pb.params.noise_s.setZero();
  pb.consistency = 1.0;
  Mlp v({4, 1}, OutputActivation::identity);
  v.weights()[0](0, 0) = -c * 60.0 / pb.value_scale;
  v.biases()[0](0) = c * 60.0 / pb.value_scale;
  std::mt19937_64 rng(43);
  const StageLoss sl = stage_loss(pb, v, Mlp({4, 2}, OutputActivation::logistic), draw_noise(pb, rng));
  EXPECT_LE(sl.path_gap, 1e-24);
}

TEST(StageLoss, MatchesIndependentImplementationWithOpponents) {
  const GameParams q = epigame::testing::three_regions_both_controls();
  StageProblem pb;
  pb.player = 1;
  pb.params = q;
  pb.params.horizon = 5.0;
  pb.grid = TimeGrid(5.0, 5);
  pb.nominal_x0 = ny_nj_pa_initial_state();
  pb.batch_size = 4;
  pb.jitter = 0.3;
  pb.value_scale = 1e10;
  auto opponents = std::make_shared<std::vector<Mlp>>();
  for (std::uint64_t s = 0; s < 3; ++s) opponents->push_back(random_policy_net(10, 20 + s));
  pb.opponents = opponents;
  const Mlp v = random_value_net(10, 12);
  const Mlp a = random_policy_net(10, 13);
  std::mt19937_64 rng(14);
  const NoiseBatch nb = draw_noise(pb, rng);
  EXPECT_LE(relative_error(stage_loss(pb, v, a, nb, false).loss, reference_loss(pb, v, a, nb)), 1e-10);
}

class StageLossGradient : public ::testing::TestWithParam<double> {};

TEST_P(StageLossGradient, ParameterGradientMatchesCentralDifferences) {
  StageProblem pb = small_problem();
  pb.consistency = GetParam();
  Mlp v = random_value_net(4, 15);
  Mlp a = random_policy_net(4, 16);
  normalize_for_small_problem(v, a);
  std::mt19937_64 rng(17);
  const NoiseBatch nb = draw_noise(pb, rng);
  const StageLoss sl = stage_loss(pb, v, a, nb);
  for (int which = 0; which < 2; ++which) {
    Mlp& net = which == 0 ? v : a;
    const nn::MlpGradient& g = which == 0 ? sl.value_grad : sl.policy_grad;
    std::uniform_int_distribution<std::size_t> pick(0, net.num_parameters() - 1);
    for (int probe = 0; probe < 20; ++probe) {
      const std::size_t i = pick(rng);
      const double saved = net.parameter(i);
      net.parameter(i) = saved + 1e-5;
      const double up = stage_loss(pb, v, a, nb, false).loss;
      net.parameter(i) = saved - 1e-5;
      const double down = stage_loss(pb, v, a, nb, false).loss;
      net.parameter(i) = saved;
      const double fd = (up - down) / 2e-5;
      EXPECT_LE(relative_error(flat(g, i), fd), 1e-5) << (which ? "policy" : "value") << " parameter " << i;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(ConsistencyWeight, StageLossGradient, ::testing::Values(0.0, 2.0));

TEST(StageLoss, RejectsWrongNetworkShapes) {
  const StageProblem pb = small_problem();
  std::mt19937_64 rng(18);
  const NoiseBatch nb = draw_noise(pb, rng);
  EXPECT_THROW(stage_loss(pb, random_value_net(5, 1), random_policy_net(4, 2), nb), std::invalid_argument);
  EXPECT_THROW(stage_loss(pb, random_value_net(4, 1), random_value_net(4, 2), nb), std::invalid_argument);
}

TEST(DrawNoise, JitteredStatesStayOnTheSimplex) {
  StageProblem pb = small_problem();
  pb.jitter = 0.5;
  pb.batch_size = 200;
  std::mt19937_64 rng(19);
  const NoiseBatch nb = draw_noise(pb, rng);
  for (Eigen::Index b = 0; b < nb.x0.cols(); ++b) {
    EXPECT_NEAR(nb.x0.col(b).sum(), 1.0, 1e-15);
    EXPECT_GE(nb.x0.col(b).minCoeff(), 0.0);
  }
  ASSERT_EQ(nb.dw.size(), 4u);
  EXPECT_EQ(nb.dw[0].rows(), 2);
}

TEST(TrainBestResponse, ControlFreeZeroCostLearnsZeroValue) {
  GameParams q = epigame::testing::single_region(0.05, 0.03);
  q.policy_effectiveness = 0.0;
  q.death_weight = 0.0;
  q.horizon = 30.0;
  StageProblem pb;
  pb.params = q;
  pb.grid = TimeGrid(30.0, 30);
  pb.nominal_x0 = GameState(1);
  pb.nominal_x0.S(0) = 0.97;
  pb.nominal_x0.E(0) = 0.02;
  pb.nominal_x0.I(0) = 0.01;
  pb.batch_size = 16;
  pb.value_scale = 1e9;
  Mlp v = random_value_net(4, 21);
  v.weights().back() *= 0.01;  // the solver's initial value networks start near zero
  Mlp a = random_policy_net(4, 22);
  TrainOptions opt;
  opt.iterations = 500;
  opt.learning_rate = 1e-3;
  opt.seed = 23;
  const TrainDiagnostics d = train_best_response(pb, v, a, opt);
  EXPECT_LE(d.terminal_sq.back(), 1e-6);
  const double v0 = nn::forward(v, network_input(0.0, pb.nominal_x0.solver(), 30.0))(0);
  EXPECT_LE(std::abs(v0), 1e-3);
}

TEST(TrainBestResponse, ConstantCostRecoversLinearValue) {
  double c = 0.0;
  const StageProblem pb = constant_cost_problem(&c);
  Mlp v = random_value_net(4, 24);
  Mlp a = random_policy_net(4, 25);
  TrainOptions opt;
  opt.iterations = 200;
  opt.learning_rate = 1e-3;
  opt.seed = 26;
  train_best_response(pb, v, a, opt);
  const double y0 = pb.value_scale * nn::forward(v, network_input(0.0, pb.nominal_x0.solver(), 60.0))(0);
  EXPECT_LE(relative_error(y0, c * 60.0), 0.01);
}

TEST(TrainBestResponse, LinearCostMatchesMomentOde) {
  GameParams q = epigame::testing::single_region(0.0, 0.0);
  q.contact_matrix.setZero();
  q.policy_effectiveness = 0.0;
  q.horizon = 60.0;
  GameState x0(1);
  x0.S(0) = 0.9;
  x0.E(0) = 0.06;
  x0.I(0) = 0.04;
  const double exact = linear_cost_exact(q, x0);

  StageProblem pb;
  pb.params = q;
  pb.grid = TimeGrid(60.0, 120);
  pb.nominal_x0 = x0;
  pb.batch_size = 32;
  pb.tau = 0.0;
  pb.jitter = 0.1;
  pb.value_scale = exact;
  Mlp v = random_value_net(4, 37);
  v.weights().back() *= 0.01;
  Mlp a = random_policy_net(4, 38);
  TrainOptions opt;
  opt.iterations = 300;
  opt.learning_rate = 1e-3;
  opt.seed = 39;
  train_best_response(pb, v, a, opt);
  const double y0 = pb.value_scale * nn::forward(v, network_input(0.0, x0.solver(), 60.0))(0);
  EXPECT_LE(relative_error(y0, exact), 0.02);
}

TEST(TrainBestResponse, DeterministicGivenSeed) {
  const StageProblem pb = small_problem();
  auto run = [&] {
    Mlp v = random_value_net(4, 27);
    Mlp a = random_policy_net(4, 28);
    normalize_for_small_problem(v, a);
    TrainOptions opt;
    opt.iterations = 20;
    opt.seed = 29;
    const TrainDiagnostics d = train_best_response(pb, v, a, opt);
    return std::make_tuple(v, a, d.loss);
  };
  const auto r1 = run();
  const auto r2 = run();
  EXPECT_TRUE(std::get<0>(r1) == std::get<0>(r2));
  EXPECT_TRUE(std::get<1>(r1) == std::get<1>(r2));
  EXPECT_EQ(std::get<2>(r1), std::get<2>(r2));
}

TEST(TrainBestResponse, DivergenceGuardAborts) {
  const StageProblem pb = small_problem();
  Mlp v = random_value_net(4, 30);
  Mlp a = random_policy_net(4, 31);
  TrainOptions opt;
  opt.iterations = 50;
  opt.divergence_factor = 1e-9;  // every loss counts as divergent
  opt.divergence_window = 5;
  EXPECT_THROW(train_best_response(pb, v, a, opt), TrainingDiverged);
}

TEST(TrainBestResponse, PolicyFitImprovesAgainstFrozenValue) {
  StageProblem pb = small_problem();
  Mlp v = random_value_net(4, 32);
  Mlp a = random_policy_net(4, 33);
  normalize_for_small_problem(v, a);
  nn::OptimState s(a, 1e-2);
  std::mt19937_64 rng(34);
  std::vector<double> mismatch;
  for (int it = 0; it < 100; ++it) {
    const StageLoss sl = stage_loss(pb, v, a, draw_noise(pb, rng));
    mismatch.push_back(sl.control_mismatch);
    nn::optimizer_step(s, a, sl.policy_grad);
  }
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 10; ++i) {
    early += mismatch[static_cast<std::size_t>(i)];
    late += mismatch[static_cast<std::size_t>(90 + i)];
  }
  EXPECT_LT(late, 0.5 * early);
}

TEST(TrainBestResponse, ValidatesTheProblem) {
  StageProblem pb = small_problem();
  pb.tau = -1.0;
  Mlp v = random_value_net(4, 35);
  Mlp a = random_policy_net(4, 36);
  EXPECT_THROW(train_best_response(pb, v, a, TrainOptions{}), std::invalid_argument);
}

TEST(Diagnostics, CsvHeaderAndRows) {
  TrainDiagnostics d;
  d.loss = {2.0, 1.0};
  d.terminal_sq = {1.5, 0.5};
  d.control_mismatch = {0.5, 0.5};
  std::ostringstream os;
  write_diagnostics_csv(os, d);
  EXPECT_EQ(os.str(), "iter,loss,terminal_sq,control_mismatch\n0,2,1.5,0.5\n1,1,0.5,0.5\n");
}
