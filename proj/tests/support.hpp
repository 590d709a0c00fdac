#pragma once

#include "epigame/params.hpp"
#include "epigame/presets.hpp"

#include <Eigen/Dense>

#include <random>

namespace epigame::testing {

/// Case-study economics and epidemiology on a single region of one million people.
inline GameParams single_region(double noise_s = 0.0, double noise_e = 0.0) {
  GameParams p = ny_nj_pa_params();
  p.num_regions = 1;
  p.contact_matrix = build_contact_matrix(0.17, 0.9, 1);
  p.noise_s = Eigen::VectorXd::Constant(1, noise_s);
  p.noise_e = Eigen::VectorXd::Constant(1, noise_e);
  p.populations = Eigen::VectorXd::Constant(1, 1e6);
  return p;
}

/// Case-study parameters with vaccination and the recovery boost switched on,
/// so that both controls matter.
inline GameParams three_regions_both_controls() {
  GameParams p = ny_nj_pa_params();
  p.vaccine_max_rate = 0.02;
  p.recovery_boost = 0.05;
  p.health_grant_coeff = 1e7;
  p.discount_rate = 0.001;
  return p;
}

/// Random valid state: per region a random point of the probability simplex.
template <class Rng>
GameState random_state(std::size_t n, Rng& rng) {
  std::exponential_distribution<double> e(1.0);
  GameState s(n);
  for (std::size_t r = 0; r < n; ++r) {
    double w[4];
    double total = 0.0;
    for (double& v : w) total += (v = e(rng));
    s.S(r) = w[0] / total;
    s.E(r) = w[1] / total;
    s.I(r) = w[2] / total;
    s.R(r) = w[3] / total;
  }
  return s;
}

template <class Rng>
ControlProfile random_controls(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ControlProfile c(n);
  for (std::size_t r = 0; r < n; ++r) {
    c.ell(static_cast<Eigen::Index>(r)) = u(rng);
    c.h(static_cast<Eigen::Index>(r)) = u(rng);
  }
  return c;
}

inline double relative_error(double a, double b) {
  const double s = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / s;
}

}  // namespace epigame::testing
