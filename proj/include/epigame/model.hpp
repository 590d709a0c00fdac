#pragma once

#include "epigame/params.hpp"

#include <cmath>
#include <stdexcept>

namespace epigame {

/// v(h): zero up to the threshold h-bar, then affine up to v-bar at h = 1.
inline double vaccination_rate(double h, const GameParams& p) {
  detail::require(h >= 0.0 && h <= 1.0, "vaccination_rate: h must lie in [0, 1]");
  if (h <= p.vaccine_threshold) return 0.0;
  return p.vaccine_max_rate * (h - p.vaccine_threshold) / (1.0 - p.vaccine_threshold);
}

/// lambda(h) = lambda_0 + lambda_1 h.
inline double recovery_rate(double h, const GameParams& p) {
  detail::require(h >= 0.0 && h <= 1.0, "recovery_rate: h must lie in [0, 1]");
  return p.base_recovery_rate + p.recovery_boost * h;
}

namespace detail {

inline void check_dims(Eigen::Index x_size, const ControlProfile& c, const GameParams& p) {
  const auto n = static_cast<Eigen::Index>(p.num_regions);
  if (x_size < 3 * n) throw std::invalid_argument("state: fewer than 3N entries for the parameter set");
  if (c.ell.size() != n || c.h.size() != n) {
    throw std::invalid_argument("controls: expected one (ell, h) pair per region");
  }
}

}  // namespace detail

/// Drift of the controlled SEIR system written into `out` (4N entries, same
/// layout as GameState). Only the S, E, I blocks of `x` are read, so the 3N
/// solver vector is accepted as well.
inline void drift_into(const Eigen::Ref<const Eigen::VectorXd>& x, const ControlProfile& c, const GameParams& p,
                       Eigen::Ref<Eigen::VectorXd> out) {
  detail::check_dims(x.size(), c, p);
  const auto n = static_cast<Eigen::Index>(p.num_regions);
  const double theta = p.policy_effectiveness;
  for (Eigen::Index r = 0; r < n; ++r) {
    const double S = x(r), E = x(n + r), I = x(2 * n + r);
    const double open_r = 1.0 - theta * c.ell(r);
    double infection = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      infection += p.contact_matrix(r, k) * x(2 * n + k) * (1.0 - theta * c.ell(k));
    }
    infection *= S * open_r;
    const double vacc = vaccination_rate(c.h(r), p) * S;
    const double recov = recovery_rate(c.h(r), p) * I;
    out(r) = -infection - vacc;
    out(n + r) = infection - p.latency_rate * E;
    out(2 * n + r) = p.latency_rate * E - recov;
    if (out.size() >= 4 * n) out(3 * n + r) = recov + vacc;
  }
}

inline Eigen::VectorXd drift(double /*t*/, const GameState& state, const ControlProfile& c, const GameParams& p) {
  if (state.num_regions() != p.num_regions) throw std::invalid_argument("drift: state/params region mismatch");
  Eigen::VectorXd out(static_cast<Eigen::Index>(p.state_dim()));
  drift_into(state.values(), c, p, out);
  return out;
}

/// Drift restricted to the 3N solver coordinates (S, E, I blocks).
inline Eigen::VectorXd solver_drift(const Eigen::Ref<const Eigen::VectorXd>& x, const ControlProfile& c,
                                    const GameParams& p) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(p.solver_dim()));
  drift_into(x, c, p, out);
  return out;
}

/// Noise loading Sigma(x): rows follow the state layout (4N, or 3N when
/// `rows` is the solver dimension); columns are [W^{s_1..N}, W^{e_1..N}].
inline Eigen::MatrixXd diffusion_rows(const Eigen::Ref<const Eigen::VectorXd>& x, const GameParams& p,
                                      Eigen::Index rows) {
  const auto n = static_cast<Eigen::Index>(p.num_regions);
  if (x.size() < 3 * n) throw std::invalid_argument("diffusion: fewer than 3N state entries");
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(rows, 2 * n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double s_load = p.noise_s(r) * x(r);
    const double e_load = p.noise_e(r) * x(n + r);
    sigma(r, r) = -s_load;
    sigma(n + r, r) = s_load;
    sigma(n + r, n + r) = -e_load;
    sigma(2 * n + r, n + r) = e_load;
  }
  return sigma;
}

inline Eigen::MatrixXd diffusion(const GameState& state, const GameParams& p) {
  if (state.num_regions() != p.num_regions) throw std::invalid_argument("diffusion: state/params region mismatch");
  return diffusion_rows(state.values(), p, static_cast<Eigen::Index>(p.state_dim()));
}

/// Sigma(x) * dW without materialising Sigma; `out` holds 3N or 4N rows.
inline void apply_diffusion(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& dw,
                            const GameParams& p, Eigen::Ref<Eigen::VectorXd> out) {
  const auto n = static_cast<Eigen::Index>(p.num_regions);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double s_term = p.noise_s(r) * x(r) * dw(r);
    const double e_term = p.noise_e(r) * x(n + r) * dw(n + r);
    out(r) = -s_term;
    out(n + r) = s_term - e_term;
    out(2 * n + r) = e_term;
    if (out.size() >= 4 * n) out(3 * n + r) = 0.0;
  }
}

/// Discounted cost rate of region `region`: lockdown wage loss plus weighted
/// death and in-patient costs, plus the quadratic health grant.
inline double running_cost(std::size_t region, double t, const Eigen::Ref<const Eigen::VectorXd>& x, double ell,
                           double h, const GameParams& p) {
  const auto n = static_cast<Eigen::Index>(p.num_regions);
  const auto r = static_cast<Eigen::Index>(region);
  if (r >= n || x.size() < 3 * n) throw std::invalid_argument("running_cost: region or state size out of range");
  const double S = x(r), E = x(n + r), I = x(2 * n + r);
  const double per_person =
      (S + E + I) * ell * p.productivity +
      p.death_weight * (p.death_rate * I * p.value_of_life + p.hospitalization_rate * I * p.inpatient_cost);
  return std::exp(-p.discount_rate * t) * (p.populations(r) * per_person + p.health_grant_coeff * h * h);
}

inline double running_cost(std::size_t region, double t, const GameState& state, double ell, double h,
                           const GameParams& p) {
  return running_cost(region, t, state.values(), ell, h, p);
}

}  // namespace epigame
