#include "epigame/evaluate.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace epigame;
using namespace epigame::evaluate;

namespace {

dfp::Game short_game() {
  GameParams p = ny_nj_pa_params();
  p.horizon = 20.0;
  return {p, ny_nj_pa_initial_state(), TimeGrid(20.0, 20)};
}

dfp::SolverConfig tiny_solver() {
  dfp::SolverConfig cfg;
  cfg.hidden = {8};
  cfg.probe_paths = 8;
  cfg.probe_states = 16;
  cfg.iterations_per_stage = 5;
  cfg.batch_size = 4;
  return cfg;
}

}  // namespace

TEST(ParseDeviation, AcceptsEveryKind) {
  const Deviation a = parse_deviation("0:equilibrium");
  EXPECT_EQ(a.player, 0u);
  EXPECT_EQ(a.kind, DeviationKind::equilibrium);
  const Deviation b = parse_deviation("2:constant:0.5:0.25");
  EXPECT_EQ(b.player, 2u);
  EXPECT_EQ(b.kind, DeviationKind::constant);
  EXPECT_EQ(b.ell, 0.5);
  EXPECT_EQ(b.h, 0.25);
  const Deviation c = parse_deviation("1:scaled:1.5");
  EXPECT_EQ(c.kind, DeviationKind::scaled);
  EXPECT_EQ(c.factor, 1.5);
  EXPECT_EQ(parse_deviation("1:retrain").kind, DeviationKind::retrain);
  EXPECT_EQ(to_string(DeviationKind::scaled), "scaled");
}

TEST(ParseDeviation, RejectsMalformedText) {
  for (const char* bad : {"", "x:equilibrium", "-1:equilibrium", "0", "0:constant:0.5", "0:constant:2:0",
                          "0:scaled:-1", "0:scaled:abc", "0:flee", "0:retrain:3", "0:constant:0.5:0.5x"}) {
    EXPECT_THROW(parse_deviation(bad), std::invalid_argument) << bad;
  }
}

TEST(EvaluateDeviation, EquilibriumAgainstItselfHasZeroResidual) {
  const dfp::Game g = short_game();
  const dfp::NetworkSet eq = dfp::initial_networks(g.params, g.x0, g.grid, tiny_solver());
  const NashReport r = evaluate_deviation(g, eq, {parse_deviation("1:equilibrium")}, {32, 5, 1});
  EXPECT_EQ(r.residual, 0.0);
  EXPECT_EQ(r.residual_paired_se, 0.0);
  ASSERT_EQ(r.players.size(), 3u);
  for (const auto& pc : r.players) {
    EXPECT_EQ(pc.equilibrium.mean, pc.deviation.mean);
    EXPECT_GT(pc.equilibrium.standard_error, 0.0);
  }
}

TEST(EvaluateDeviation, FullLockdownIsCostlierThanDoingNothingEarly) {
  const dfp::Game g = short_game();
  const dfp::NetworkSet eq = dfp::initial_networks(g.params, g.x0, g.grid, tiny_solver());
  const NashReport r = evaluate_deviation(g, eq, {parse_deviation("0:constant:1:0")}, {32, 5, 1});
  // Twenty days of lockdown cost wages far above the few deaths avoided.
  EXPECT_LT(r.residual, 0.0);
  EXPECT_GT(r.deviator().deviation.mean, r.deviator().equilibrium.mean);
  EXPECT_GT(r.residual_paired_se, 0.0);
}

TEST(EvaluateDeviation, ControlFreeGameMakesEveryPolicyEquivalent) {
  dfp::Game g = short_game();
  g.params.policy_effectiveness = 0.0;
  g.params.productivity = 0.0;
  g.params.health_grant_coeff = 0.0;
  const dfp::NetworkSet eq = dfp::initial_networks(g.params, g.x0, g.grid, tiny_solver());
  for (const char* dev : {"0:constant:0.7:0.3", "2:scaled:50"}) {
    const NashReport r = evaluate_deviation(g, eq, {parse_deviation(dev)}, {64, 9, 1});
    EXPECT_LE(std::abs(r.residual), 2.0 * r.deviator().equilibrium.standard_error) << dev;
  }
}

TEST(EvaluateDeviation, RejectsNonUnilateralAndMismatchedInput) {
  const dfp::Game g = short_game();
  const dfp::NetworkSet eq = dfp::initial_networks(g.params, g.x0, g.grid, tiny_solver());
  EXPECT_THROW(evaluate_deviation(g, eq, {parse_deviation("0:equilibrium"), parse_deviation("1:equilibrium")}, {}),
               std::invalid_argument);
  EXPECT_THROW(evaluate_deviation(g, eq, {}, {}), std::invalid_argument);
  EXPECT_THROW(evaluate_deviation(g, eq, {parse_deviation("3:equilibrium")}, {}), std::invalid_argument);
  EXPECT_THROW(evaluate_deviation(g, eq, {parse_deviation("0:retrain")}, {}), std::invalid_argument);
  dfp::NetworkSet two({eq[0], eq[1]});
  EXPECT_THROW(evaluate_deviation(g, two, {parse_deviation("0:equilibrium")}, {}), std::invalid_argument);
}

TEST(RetrainBestResponse, WarmStartsAndIsDeterministic) {
  const dfp::Game g = short_game();
  const dfp::SolverConfig cfg = tiny_solver();
  const dfp::NetworkSet eq = dfp::initial_networks(g.params, g.x0, g.grid, cfg);
  const std::vector<double> scales(3, 1e9);
  const dfp::PlayerNetworks a = retrain_best_response(g, cfg, eq, 1, scales);
  const dfp::PlayerNetworks b = retrain_best_response(g, cfg, eq, 1, scales);
  EXPECT_TRUE(a.policy == b.policy);
  EXPECT_TRUE(a.value == b.value);
  EXPECT_FALSE(a.value == eq[1].value);
  const NashReport r = evaluate_deviation(g, eq, {parse_deviation("1:retrain")}, {16, 2, 1}, &a.policy);
  EXPECT_EQ(r.deviation.kind, DeviationKind::retrain);
}
