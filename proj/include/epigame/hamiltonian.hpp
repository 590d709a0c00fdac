#pragma once

#include "epigame/model.hpp"
#include "epigame/sde.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace epigame {

/// H^n = b(t, x, ell, h) . p + f^n(t, x, ell^n, h^n), with b restricted to the
/// 3N solver coordinates and p = grad_x V^n.
inline double hamiltonian_value(std::size_t region, double t, const Eigen::Ref<const Eigen::VectorXd>& x,
                                const ControlProfile& controls, const Eigen::Ref<const Eigen::VectorXd>& p,
                                const GameParams& params) {
  const auto dim = static_cast<Eigen::Index>(params.solver_dim());
  if (p.size() != dim || x.size() < dim) throw std::invalid_argument("hamiltonian_value: dimension mismatch");
  Eigen::VectorXd b(dim);
  drift_into(x, controls, params, b);
  const auto r = static_cast<Eigen::Index>(region);
  return b.dot(p) + running_cost(region, t, x, controls.ell(r), controls.h(r), params);
}

/// The ell^n-dependent part of H^n written in u = 1 - theta ell^n:
/// quadratic * u^2 + linear * u on u in [1 - theta, 1].
struct LockdownQuadratic {
  double quadratic = 0.0;
  double linear = 0.0;
  // d(quadratic)/dp and d(linear)/dp, 3N each.
  Eigen::VectorXd d_quadratic;
  Eigen::VectorXd d_linear;
};

inline LockdownQuadratic lockdown_quadratic(std::size_t region, double t, const Eigen::Ref<const Eigen::VectorXd>& x,
                                            const ControlProfile& others, const Eigen::Ref<const Eigen::VectorXd>& p,
                                            const GameParams& params) {
  const auto n = static_cast<Eigen::Index>(params.num_regions);
  const auto r = static_cast<Eigen::Index>(region);
  const double theta = params.policy_effectiveness;
  const auto& beta = params.contact_matrix;
  auto S = [&](Eigen::Index k) { return x(k); };
  auto I = [&](Eigen::Index k) { return x(2 * n + k); };
  auto gap = [&](Eigen::Index k) { return p(n + k) - p(k); };  // p_E - p_S
  auto open = [&](Eigen::Index k) { return 1.0 - theta * others.ell(k); };

  LockdownQuadratic q;
  q.d_quadratic = Eigen::VectorXd::Zero(3 * n);
  q.d_linear = Eigen::VectorXd::Zero(3 * n);

  const double self_weight = beta(r, r) * S(r) * I(r);
  q.quadratic = self_weight * gap(r);
  q.d_quadratic(r) = -self_weight;
  q.d_quadratic(n + r) = self_weight;

  // Region r's susceptibles meeting infectious travellers from k, and
  // region r's infectious reaching susceptibles of j.
  double import_weight = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (k == r) continue;
    import_weight += beta(r, k) * I(k) * open(k);
  }
  import_weight *= S(r);
  q.linear = import_weight * gap(r);
  q.d_linear(r) -= import_weight;
  q.d_linear(n + r) += import_weight;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == r) continue;
    const double export_weight = beta(j, r) * S(j) * I(r) * open(j);
    q.linear += export_weight * gap(j);
    q.d_linear(j) -= export_weight;
    q.d_linear(n + j) += export_weight;
  }
  if (theta > 0.0) {
    const double wage = std::exp(-params.discount_rate * t) * params.populations(r) * (S(r) + x(n + r) + I(r)) *
                        params.productivity;
    q.linear -= wage / theta;
  }
  return q;
}

struct BestResponse {
  RegionControl control;
  bool ell_interior = false;
  bool h_interior = false;
};

namespace detail {

inline double tie_tolerance(double scale) { return 1e-12 * std::max(1.0, scale); }

struct Candidate {
  double x;
  double value;
};

/// Returns the minimising candidate; candidates must be sorted by increasing
/// control so that near-ties resolve toward the smaller control.
inline std::size_t argmin_smallest(const std::vector<Candidate>& cands, double scale) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < cands.size(); ++i) {
    if (cands[i].value < cands[best].value - tie_tolerance(scale)) best = i;
  }
  return best;
}

struct HealthPieces {
  double quad;   // e^{-rt} eta
  double lin;    // -lambda_1 I p_I
  double slope;  // -S p_S vbar / (1 - hbar), active above the threshold
};

inline HealthPieces health_pieces(std::size_t region, double t, const Eigen::Ref<const Eigen::VectorXd>& x,
                                  const Eigen::Ref<const Eigen::VectorXd>& p, const GameParams& params) {
  const auto n = static_cast<Eigen::Index>(params.num_regions);
  const auto r = static_cast<Eigen::Index>(region);
  HealthPieces hp;
  hp.quad = std::exp(-params.discount_rate * t) * params.health_grant_coeff;
  hp.lin = -params.recovery_boost * x(2 * n + r) * p(2 * n + r);
  hp.slope = -x(r) * p(r) * params.vaccine_max_rate / (1.0 - params.vaccine_threshold);
  return hp;
}

inline double health_value(const HealthPieces& hp, double h, double threshold) {
  return hp.quad * h * h + hp.lin * h + (h > threshold ? hp.slope * (h - threshold) : 0.0);
}

}  // namespace detail

/// Closed-form minimiser of H^n over (ell^n, h^n) in [0,1]^2 with the other
/// regions' controls fixed. H^n is additively separable in ell^n and h^n and
/// each part is (piecewise) quadratic, so each is minimised exactly by
/// comparing vertices with interval endpoints. Ties go to the smaller control.
inline BestResponse best_response_detail(std::size_t region, double t, const Eigen::Ref<const Eigen::VectorXd>& x,
                                         const ControlProfile& others, const Eigen::Ref<const Eigen::VectorXd>& p,
                                         const GameParams& params) {
  const auto dim = static_cast<Eigen::Index>(params.solver_dim());
  if (p.size() != dim || x.size() < dim) throw std::invalid_argument("best_response: dimension mismatch");
  const double theta = params.policy_effectiveness;
  BestResponse out;

  if (theta > 0.0) {
    const LockdownQuadratic q = lockdown_quadratic(region, t, x, others, p, params);
    auto value = [&](double u) { return q.quadratic * u * u + q.linear * u; };
    // Ordered by increasing ell, i.e. decreasing u.
    std::vector<detail::Candidate> cands;
    cands.push_back({1.0, value(1.0)});
    bool has_vertex = false;
    if (q.quadratic > 0.0) {
      const double u = -q.linear / (2.0 * q.quadratic);
      if (u < 1.0 && u > 1.0 - theta) {
        cands.push_back({u, value(u)});
        has_vertex = true;
      }
    }
    cands.push_back({1.0 - theta, value(1.0 - theta)});
    const double scale = std::abs(q.quadratic) + std::abs(q.linear);
    const std::size_t best = detail::argmin_smallest(cands, scale);
    out.control.ell = std::clamp((1.0 - cands[best].x) / theta, 0.0, 1.0);
    out.ell_interior = has_vertex && best == 1;
  }

  const detail::HealthPieces hp = detail::health_pieces(region, t, x, p, params);
  const double hbar = params.vaccine_threshold;
  std::vector<detail::Candidate> cands;
  auto push = [&](double h) { cands.push_back({h, detail::health_value(hp, h, hbar)}); };
  std::vector<double> points{0.0, hbar, 1.0};
  if (hp.quad > 0.0) {
    const double v1 = -hp.lin / (2.0 * hp.quad);
    const double v2 = -(hp.lin + hp.slope) / (2.0 * hp.quad);
    if (v1 > 0.0 && v1 < hbar) points.push_back(v1);
    if (v2 > hbar && v2 < 1.0) points.push_back(v2);
  }
  std::sort(points.begin(), points.end());
  for (double h : points) push(h);
  const double scale = std::abs(hp.quad) + std::abs(hp.lin) + std::abs(hp.slope);
  const double h_best = cands[detail::argmin_smallest(cands, scale)].x;
  out.control.h = h_best;
  out.h_interior = h_best > 0.0 && h_best < 1.0 && h_best != hbar;
  return out;
}

inline RegionControl best_response(std::size_t region, double t, const Eigen::Ref<const Eigen::VectorXd>& x,
                                   const ControlProfile& others, const Eigen::Ref<const Eigen::VectorXd>& p,
                                   const GameParams& params) {
  return best_response_detail(region, t, x, others, p, params).control;
}

/// Jacobian d(ell*, h*)/dp (2 x 3N) of the closed-form best response. Zero
/// rows where the optimum sits on an interval endpoint or the threshold.
inline Eigen::MatrixXd best_response_sensitivity(std::size_t region, double t,
                                                 const Eigen::Ref<const Eigen::VectorXd>& x,
                                                 const ControlProfile& others,
                                                 const Eigen::Ref<const Eigen::VectorXd>& p, const GameParams& params,
                                                 const BestResponse& at) {
  const auto n = static_cast<Eigen::Index>(params.num_regions);
  const auto r = static_cast<Eigen::Index>(region);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2, 3 * n);
  if (at.ell_interior) {
    const LockdownQuadratic q = lockdown_quadratic(region, t, x, others, p, params);
    const double a = q.quadratic;
    // u = -L / (2A), ell = (1 - u) / theta
    const Eigen::VectorXd du = -q.d_linear / (2.0 * a) + q.linear / (2.0 * a * a) * q.d_quadratic;
    jac.row(0) = -du.transpose() / params.policy_effectiveness;
  }
  if (at.h_interior) {
    const detail::HealthPieces hp = detail::health_pieces(region, t, x, p, params);
    const double I = x(2 * n + r);
    jac(1, 2 * n + r) = params.recovery_boost * I / (2.0 * hp.quad);
    if (at.control.h > params.vaccine_threshold) {
      jac(1, r) = x(r) * params.vaccine_max_rate / (1.0 - params.vaccine_threshold) / (2.0 * hp.quad);
    }
  }
  return jac;
}

/// Exhaustive minimisation of H^n over the uniform grid {0, res, 2 res, ..., 1}^2.
/// H^n(ell, h) = H^n(ell, 0) + H^n(0, h) - H^n(0, 0) holds exactly because the
/// two controls never interact, so the table is filled from 2 m evaluations of
/// hamiltonian_value for m points per axis. Ties go to the smaller (ell, h).
inline RegionControl best_response_grid(std::size_t region, double t, const Eigen::Ref<const Eigen::VectorXd>& x,
                                        const ControlProfile& others, const Eigen::Ref<const Eigen::VectorXd>& p,
                                        const GameParams& params, double resolution,
                                        std::size_t* evaluated_points = nullptr) {
  if (!(resolution > 0.0 && resolution <= 0.5)) throw std::invalid_argument("best_response_grid: resolution in (0, 0.5]");
  std::vector<double> axis;
  const auto steps = static_cast<long>(std::floor(1.0 / resolution + 1e-9));
  for (long i = 0; i <= steps; ++i) axis.push_back(std::min(1.0, static_cast<double>(i) * resolution));
  if (axis.back() < 1.0) axis.push_back(1.0);

  const auto r = static_cast<Eigen::Index>(region);
  ControlProfile c = others;
  auto eval = [&](double ell, double h) {
    c.ell(r) = ell;
    c.h(r) = h;
    return hamiltonian_value(region, t, x, c, p, params);
  };
  const double base = eval(0.0, 0.0);
  std::vector<double> by_ell(axis.size()), by_h(axis.size());
  for (std::size_t i = 0; i < axis.size(); ++i) {
    by_ell[i] = eval(axis[i], 0.0);
    by_h[i] = eval(0.0, axis[i]);
  }

  double best = std::numeric_limits<double>::infinity();
  RegionControl arg{0.0, 0.0};
  const double tol = detail::tie_tolerance(std::abs(base));
  for (std::size_t i = 0; i < axis.size(); ++i) {
    for (std::size_t j = 0; j < axis.size(); ++j) {
      const double v = by_ell[i] + by_h[j] - base;
      if (v < best - tol) {
        best = v;
        arg = {axis[i], axis[j]};
      }
    }
  }
  if (evaluated_points) *evaluated_points = axis.size() * axis.size();
  return arg;
}

}  // namespace epigame
