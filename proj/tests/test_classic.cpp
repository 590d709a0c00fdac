#include "epigame/classic.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

using namespace epigame::classic;

TEST(SeirDerivative, Example) {
  const SeirState d = seir_derivative({0.99, 0.0, 0.01, 0.0}, SeirRates{});
  EXPECT_NEAR(d.S, -0.0016830, 5e-8);
  EXPECT_NEAR(d.E, 0.0016830, 5e-8);
  EXPECT_NEAR(d.I, -0.00076923, 5e-9);
  EXPECT_NEAR(d.R, 0.00076923, 5e-9);
}

TEST(SeirDerivative, DiseaseFreeAndConservation) {
  const SeirState z = seir_derivative({0.6, 0.0, 0.0, 0.4}, SeirRates{});
  EXPECT_EQ(z.S, 0.0);
  EXPECT_EQ(z.E, 0.0);
  EXPECT_EQ(z.I, 0.0);
  EXPECT_EQ(z.R, 0.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const SeirState d = seir_derivative({u(rng), u(rng), u(rng), u(rng)}, {u(rng), u(rng), u(rng)});
    const double scale = std::max({std::abs(d.S), std::abs(d.E), std::abs(d.I), std::abs(d.R)});
    EXPECT_LE(std::abs(d.mass()), 4.0 * std::numeric_limits<double>::epsilon() * scale);
  }
  EXPECT_THROW(seir_derivative({1, 0, 0, 0}, {-0.1, 0.2, 0.1}), std::invalid_argument);
}

TEST(IntegrateSeir, DiseaseFreeIsConstant) {
  const auto traj = integrate_seir({0.8, 0.0, 0.0, 0.2}, SeirRates{}, 30.0, 0.5);
  ASSERT_EQ(traj.size(), 61u);
  for (const auto& s : traj) {
    EXPECT_EQ(s.state.S, 0.8);
    EXPECT_EQ(s.state.R, 0.2);
  }
}

TEST(IntegrateSeir, ConservesMassOverCaseStudyHorizon) {
  const auto traj = integrate_seir({1.0 - 1e-4, 0.0, 1e-4, 0.0}, SeirRates{}, 180.0, 0.1);
  ASSERT_EQ(traj.size(), 1801u);
  double worst = 0.0;
  for (const auto& s : traj) worst = std::max(worst, std::abs(s.state.mass() - 1.0));
  EXPECT_LE(worst, 1e-9);
  EXPECT_NEAR(traj.back().t, 180.0, 1e-9);
}

TEST(IntegrateSeir, FourthOrderConvergence) {
  const SeirState x0{1.0 - 1e-2, 0.0, 1e-2, 0.0};
  const SeirState a = integrate_seir(x0, SeirRates{}, 180.0, 0.4).back().state;
  const SeirState b = integrate_seir(x0, SeirRates{}, 180.0, 0.2).back().state;
  const SeirState c = integrate_seir(x0, SeirRates{}, 180.0, 0.1).back().state;
  const double e1 = std::abs(a.I - b.I);
  const double e2 = std::abs(b.I - c.I);
  ASSERT_GT(e2, 0.0);
  EXPECT_NEAR(std::log2(e1 / e2), 4.0, 0.3);
}

TEST(IntegrateSeir, EpidemicCurveHasOneInteriorPeak) {
  const auto traj = integrate_seir({1.0 - 1e-4, 0.0, 1e-4, 0.0}, SeirRates{}, 360.0, 0.1);
  std::size_t turns = 0;
  for (std::size_t i = 1; i + 1 < traj.size(); ++i) {
    const double prev = traj[i].state.I - traj[i - 1].state.I;
    const double next = traj[i + 1].state.I - traj[i].state.I;
    if (prev > 0.0 && next <= 0.0) ++turns;
  }
  EXPECT_EQ(turns, 1u);
}

TEST(IntegrateSeir, RejectsBadGrid) {
  EXPECT_THROW(integrate_seir({1, 0, 0, 0}, SeirRates{}, 10.0, 0.0), std::invalid_argument);
  EXPECT_THROW(integrate_seir({1, 0, 0, 0}, SeirRates{}, 10.0, 0.3), std::invalid_argument);
  EXPECT_THROW(integrate_seir({0.5, 0, 0.5, 0}, SeirRates{1e9, 0.2, 0.1}, 10.0, 1.0), std::runtime_error);
}

TEST(SisTransition, Example) {
  const SisProbabilities p = sis_transition_probabilities({50, 100, 0.17, 1.0 / 13}, 0.01);
  EXPECT_NEAR(p.up, 0.0425, 1e-15);
  EXPECT_NEAR(p.down, 0.0384615, 5e-8);
  EXPECT_NEAR(p.stay, 0.9190385, 5e-8);
  EXPECT_EQ(p.up + p.down + p.stay, 1.0);
}

TEST(SisTransition, BoundaryStates) {
  const SisProbabilities none = sis_transition_probabilities({0, 100, 0.17, 1.0 / 13}, 0.01);
  EXPECT_EQ(none.up, 0.0);
  EXPECT_EQ(none.down, 0.0);
  EXPECT_EQ(none.stay, 1.0);
  const SisProbabilities all = sis_transition_probabilities({100, 100, 0.17, 1.0 / 13}, 0.01);
  EXPECT_EQ(all.up, 0.0);
  EXPECT_DOUBLE_EQ(all.down, 100.0 / 13 * 0.01);
  EXPECT_DOUBLE_EQ(all.stay, 1.0 - 100.0 / 13 * 0.01);
}

TEST(SisTransition, RejectsLargeStepAndBadCounts) {
  EXPECT_THROW(sis_transition_probabilities({50, 100, 0.17, 1.0 / 13}, 1.0), std::domain_error);
  EXPECT_THROW(sis_transition_probabilities({101, 100, 0.17, 1.0 / 13}, 0.01), std::invalid_argument);
  EXPECT_THROW(sis_transition_probabilities({5, 100, 0.17, 1.0 / 13}, -0.01), std::invalid_argument);
}

TEST(SisStep, AbsorbingAndReproducible) {
  std::mt19937_64 rng(3);
  SisCounts c{0, 100, 0.17, 1.0 / 13};
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sis_step(c, 0.01, rng).infected, 0);

  auto run = [](std::uint64_t seed) {
    std::mt19937_64 r(seed);
    SisCounts s{50, 100, 0.17, 1.0 / 13};
    std::vector<long> path;
    for (int i = 0; i < 500; ++i) {
      s = sis_step(s, 0.01, r);
      path.push_back(s.infected);
      EXPECT_GE(s.infected, 0);
      EXPECT_LE(s.infected, 100);
    }
    return path;
  };
  EXPECT_EQ(run(9), run(9));
}

TEST(SisStep, EmpiricalFrequencyMatchesProbabilities) {
  const SisCounts c{50, 100, 0.17, 1.0 / 13};
  const SisProbabilities p = sis_transition_probabilities(c, 0.01);
  std::mt19937_64 rng(2024);
  const int draws = 100000;
  int up = 0, down = 0;
  for (int i = 0; i < draws; ++i) {
    const long next = sis_step(c, 0.01, rng).infected;
    up += next == 51;
    down += next == 49;
  }
  const double se_up = std::sqrt(p.up * (1 - p.up) / draws);
  const double se_down = std::sqrt(p.down * (1 - p.down) / draws);
  EXPECT_LE(std::abs(up / double(draws) - p.up), 3 * se_up);
  EXPECT_LE(std::abs(down / double(draws) - p.down), 3 * se_down);
}
