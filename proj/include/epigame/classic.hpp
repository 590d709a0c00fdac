#pragma once

// Single-region deterministic SEIR and the fixed-step stochastic SIS chain.
// Used as standalone demos and as oracles for the controlled model.

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace epigame::classic {

struct SeirState {
  double S = 1.0, E = 0.0, I = 0.0, R = 0.0;

  double mass() const { return S + E + I + R; }
  bool finite() const { return std::isfinite(S) && std::isfinite(E) && std::isfinite(I) && std::isfinite(R); }

  SeirState operator+(const SeirState& o) const { return {S + o.S, E + o.E, I + o.I, R + o.R}; }
  SeirState operator*(double k) const { return {S * k, E * k, I * k, R * k}; }
};

struct SeirRates {
  double beta = 0.17;
  double gamma = 0.2;
  double lambda = 1.0 / 13;
};

inline SeirState seir_derivative(const SeirState& x, const SeirRates& k) {
  if (!(k.beta >= 0.0 && k.gamma >= 0.0 && k.lambda >= 0.0)) {
    throw std::invalid_argument("seir_derivative: rates must be nonnegative");
  }
  const double infection = k.beta * x.S * x.I;
  return {-infection, infection - k.gamma * x.E, k.gamma * x.E - k.lambda * x.I, k.lambda * x.I};
}

struct SeirSample {
  double t;
  SeirState state;
};

/// Classical RK4 on a fixed grid; returns num_steps + 1 samples starting at t = 0.
inline std::vector<SeirSample> integrate_seir(const SeirState& x0, const SeirRates& k, double horizon, double step) {
  if (!(step > 0.0) || !(horizon > 0.0) || !std::isfinite(step) || !std::isfinite(horizon)) {
    throw std::invalid_argument("integrate_seir: horizon and step must be positive");
  }
  const double ratio = horizon / step;
  const auto num_steps = static_cast<long>(std::llround(ratio));
  if (num_steps < 1 || std::abs(ratio - static_cast<double>(num_steps)) > 1e-9 * ratio) {
    throw std::invalid_argument("integrate_seir: horizon must be a multiple of step");
  }

  std::vector<SeirSample> out;
  out.reserve(static_cast<std::size_t>(num_steps) + 1);
  SeirState x = x0;
  out.push_back({0.0, x});
  for (long i = 0; i < num_steps; ++i) {
    const SeirState k1 = seir_derivative(x, k);
    const SeirState k2 = seir_derivative(x + k1 * (0.5 * step), k);
    const SeirState k3 = seir_derivative(x + k2 * (0.5 * step), k);
    const SeirState k4 = seir_derivative(x + k3 * step, k);
    x = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (step / 6.0);
    if (!x.finite()) {
      throw std::runtime_error("integrate_seir: non-finite state at step " + std::to_string(i + 1));
    }
    out.push_back({static_cast<double>(i + 1) * step, x});
  }
  return out;
}

struct SisCounts {
  long infected = 0;
  long population = 1;
  double infection_rate = 0.17;
  double recovery_rate = 1.0 / 13;
};

struct SisProbabilities {
  double up;
  double down;
  double stay;
};

/// One-step transition probabilities of the SIS chain over a window dt.
inline SisProbabilities sis_transition_probabilities(const SisCounts& c, double dt) {
  if (c.population <= 0 || c.infected < 0 || c.infected > c.population) {
    throw std::invalid_argument("sis_transition_probabilities: need 0 <= n <= N, N > 0");
  }
  if (!(dt > 0.0) || c.infection_rate < 0.0 || c.recovery_rate < 0.0) {
    throw std::invalid_argument("sis_transition_probabilities: dt must be positive and rates nonnegative");
  }
  const auto n = static_cast<double>(c.infected);
  const auto N = static_cast<double>(c.population);
  const double up = c.infection_rate / N * n * (N - n) * dt;
  const double down = c.recovery_rate * n * dt;
  if (up + down > 1.0) {
    throw std::domain_error("sis_transition_probabilities: dt too large, probabilities leave [0, 1]");
  }
  return {up, down, 1.0 - up - down};
}

/// Draws one categorical move of the SIS chain.
template <class Rng>
SisCounts sis_step(const SisCounts& c, double dt, Rng& rng) {
  const SisProbabilities p = sis_transition_probabilities(c, dt);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  SisCounts next = c;
  if (u < p.up) {
    ++next.infected;
  } else if (u < p.up + p.down) {
    --next.infected;
  }
  return next;
}

}  // namespace epigame::classic
