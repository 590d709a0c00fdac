#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace epigame {

/// Parameters of the N-region controlled stochastic SEIR game.
///
/// Rates are per day, populations in persons, money in the same currency
/// as `productivity`. Immutable once validated; every evaluation routine
/// takes it by const reference.
struct GameParams {
  std::size_t num_regions = 1;
  Eigen::MatrixXd contact_matrix;  // beta^{nk}: infected in k meeting susceptible in n

  double latency_rate = 0.2;             // gamma
  double base_recovery_rate = 1.0 / 13;  // lambda_0 = 1/D
  double death_rate = 0.0065 / 13;       // kappa
  double policy_effectiveness = 0.99;    // theta

  Eigen::VectorXd noise_s;  // sigma_{s_n}
  Eigen::VectorXd noise_e;  // sigma_{e_n}
  Eigen::VectorXd populations;

  double productivity = 172.6;  // w
  double death_weight = 100.0;  // a
  double value_of_life = 1.96e6;
  double hospitalization_rate = 228.7e-5;
  double inpatient_cost = 73300.0 / 13;
  double health_grant_coeff = 1e6;  // eta
  double discount_rate = 0.0;
  double horizon = 180.0;  // T, days

  double vaccine_threshold = 0.5;  // h-bar
  double vaccine_max_rate = 0.0;   // v-bar
  double recovery_boost = 0.0;     // lambda_1

  std::size_t state_dim() const { return 4 * num_regions; }
  std::size_t solver_dim() const { return 3 * num_regions; }
  std::size_t noise_dim() const { return 2 * num_regions; }

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

inline bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

}  // namespace detail

inline void GameParams::validate() const {
  using detail::finite_nonneg;
  using detail::require;
  const auto n = static_cast<Eigen::Index>(num_regions);
  require(num_regions >= 1, "num_regions: must be at least 1");
  require(contact_matrix.rows() == n && contact_matrix.cols() == n,
          "contact_matrix: must be num_regions x num_regions");
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < n; ++k) {
      require(finite_nonneg(contact_matrix(i, k)), "contact_matrix: entries must be finite and >= 0");
      if (k != i) {
        require(contact_matrix(i, i) > contact_matrix(i, k),
                "contact_matrix: diagonal must dominate each off-diagonal entry of its row");
      }
    }
  }
  require(noise_s.size() == n, "noise_s: one volatility per region");
  require(noise_e.size() == n, "noise_e: one volatility per region");
  require(populations.size() == n, "populations: one population per region");
  for (Eigen::Index i = 0; i < n; ++i) {
    require(finite_nonneg(noise_s(i)), "noise_s: must be finite and >= 0");
    require(finite_nonneg(noise_e(i)), "noise_e: must be finite and >= 0");
    require(std::isfinite(populations(i)) && populations(i) > 0.0, "populations: must be > 0");
  }
  require(finite_nonneg(latency_rate), "latency_rate: must be >= 0");
  require(finite_nonneg(base_recovery_rate), "base_recovery_rate: must be >= 0");
  require(finite_nonneg(death_rate), "death_rate: must be >= 0");
  require(std::isfinite(policy_effectiveness) && policy_effectiveness >= 0.0 && policy_effectiveness <= 1.0,
          "policy_effectiveness: must lie in [0, 1]");
  require(finite_nonneg(productivity), "productivity: must be >= 0");
  require(finite_nonneg(death_weight), "death_weight: must be >= 0");
  require(finite_nonneg(value_of_life), "value_of_life: must be >= 0");
  require(finite_nonneg(hospitalization_rate), "hospitalization_rate: must be >= 0");
  require(finite_nonneg(inpatient_cost), "inpatient_cost: must be >= 0");
  require(finite_nonneg(health_grant_coeff), "health_grant_coeff: must be >= 0");
  require(finite_nonneg(discount_rate), "discount_rate: must be >= 0");
  require(std::isfinite(horizon) && horizon > 0.0, "horizon: must be > 0");
  require(std::isfinite(vaccine_threshold) && vaccine_threshold >= 0.0 && vaccine_threshold < 1.0,
          "vaccine_threshold: must lie in [0, 1)");
  require(finite_nonneg(vaccine_max_rate), "vaccine_max_rate: must be >= 0");
  require(finite_nonneg(recovery_boost), "recovery_boost: must be >= 0");
}

/// Contact rates from co-location mixing: a fraction `residency_fraction` of
/// each region stays home and the rest spreads evenly over the other regions,
/// so beta^{nk} = beta_base * sum_m f_{nm} f_{km}.
inline Eigen::MatrixXd build_contact_matrix(double beta_base, double residency_fraction,
                                            std::size_t num_regions) {
  detail::require(std::isfinite(beta_base) && beta_base >= 0.0, "beta_base: must be finite and >= 0");
  detail::require(std::isfinite(residency_fraction) && residency_fraction > 0.0 && residency_fraction <= 1.0,
                  "residency_fraction: must lie in (0, 1]");
  detail::require(num_regions >= 1, "num_regions: must be at least 1");
  const auto n = static_cast<Eigen::Index>(num_regions);
  if (n == 1) return Eigen::MatrixXd::Constant(1, 1, beta_base);

  Eigen::MatrixXd presence(n, n);
  const double away = (1.0 - residency_fraction) / static_cast<double>(n - 1);
  presence.setConstant(away);
  presence.diagonal().setConstant(residency_fraction);
  return beta_base * presence * presence.transpose();
}

/// Per-region compartment proportions, laid out [S_1..S_N, E_1..E_N, I_1..I_N, R_1..R_N].
/// The first 3N entries are the solver state X.
class GameState {
 public:
  GameState() = default;
  explicit GameState(std::size_t num_regions)
      : n_(num_regions), x_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(4 * num_regions))) {}
  GameState(std::size_t num_regions, Eigen::VectorXd values) : n_(num_regions), x_(std::move(values)) {
    detail::require(x_.size() == static_cast<Eigen::Index>(4 * n_), "GameState: expected 4N entries");
  }

  /// Builds a state from the 3N solver coordinates, recovering R from mass balance.
  static GameState from_solver(std::size_t num_regions, const Eigen::Ref<const Eigen::VectorXd>& solver) {
    detail::require(solver.size() == static_cast<Eigen::Index>(3 * num_regions),
                    "GameState: expected 3N solver entries");
    GameState s(num_regions);
    s.x_.head(solver.size()) = solver;
    for (std::size_t r = 0; r < num_regions; ++r) {
      s.R(r) = std::max(0.0, 1.0 - s.S(r) - s.E(r) - s.I(r));
    }
    return s;
  }

  std::size_t num_regions() const { return n_; }

  double& S(std::size_t r) { return x_(idx(0, r)); }
  double& E(std::size_t r) { return x_(idx(1, r)); }
  double& I(std::size_t r) { return x_(idx(2, r)); }
  double& R(std::size_t r) { return x_(idx(3, r)); }
  double S(std::size_t r) const { return x_(idx(0, r)); }
  double E(std::size_t r) const { return x_(idx(1, r)); }
  double I(std::size_t r) const { return x_(idx(2, r)); }
  double R(std::size_t r) const { return x_(idx(3, r)); }

  double mass(std::size_t r) const { return S(r) + E(r) + I(r) + R(r); }

  const Eigen::VectorXd& values() const { return x_; }
  Eigen::VectorXd& values() { return x_; }
  auto solver() const { return x_.head(static_cast<Eigen::Index>(3 * n_)); }

 private:
  Eigen::Index idx(std::size_t block, std::size_t r) const {
    return static_cast<Eigen::Index>(block * n_ + r);
  }

  std::size_t n_ = 0;
  Eigen::VectorXd x_;
};

/// Lockdown fraction ell^n and health effort h^n for every region, each in [0, 1].
struct ControlProfile {
  Eigen::VectorXd ell;
  Eigen::VectorXd h;

  ControlProfile() = default;
  explicit ControlProfile(std::size_t num_regions)
      : ell(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_regions))),
        h(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_regions))) {}

  std::size_t num_regions() const { return static_cast<std::size_t>(ell.size()); }

  /// Clamps both components into the box; returns how many entries moved.
  int clamp() {
    int moved = 0;
    for (Eigen::VectorXd* v : {&ell, &h}) {
      for (Eigen::Index i = 0; i < v->size(); ++i) {
        const double c = std::clamp((*v)(i), 0.0, 1.0);
        if (c != (*v)(i) || std::isnan((*v)(i))) ++moved;
        (*v)(i) = std::isnan((*v)(i)) ? 0.0 : c;
      }
    }
    return moved;
  }
};

}  // namespace epigame
