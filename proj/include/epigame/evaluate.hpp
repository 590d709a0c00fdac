#pragma once

// Nash-residual evaluation: Monte Carlo costs under the equilibrium profile
// and under one player's unilateral deviation. Both ensembles share their
// Brownian paths (path i uses seed base + i in each).

#include "epigame/dfp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace epigame::evaluate {

using dfp::Mlp;
using dfp::NetworkSet;
using dfp::PlayerNetworks;

enum class DeviationKind { equilibrium, constant, scaled, retrain };

struct Deviation {
  std::size_t player = 0;
  DeviationKind kind = DeviationKind::equilibrium;
  double ell = 0.0;     // constant
  double h = 0.0;       // constant
  double factor = 1.0;  // scaled: alpha_dev = clamp(factor * alpha_eq)
};

/// Parses "PLAYER:equilibrium", "PLAYER:constant:ELL:H", "PLAYER:scaled:K"
/// or "PLAYER:retrain".
inline Deviation parse_deviation(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
  auto bad = [&](const std::string& why) {
    return std::invalid_argument("deviation '" + text + "': " + why);
  };
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw bad("'" + s + "' is not a number");
    }
    if (used != s.size() || !std::isfinite(v)) throw bad("'" + s + "' is not a number");
    return v;
  };
  if (parts.size() < 2) throw bad("expected PLAYER:KIND[:ARGS]");
  Deviation d;
  if (parts[0].empty() || parts[0].find_first_not_of("0123456789") != std::string::npos) {
    throw bad("player must be a non-negative integer");
  }
  d.player = std::stoul(parts[0]);
  const std::string& kind = parts[1];
  if (kind == "equilibrium" && parts.size() == 2) {
    d.kind = DeviationKind::equilibrium;
  } else if (kind == "retrain" && parts.size() == 2) {
    d.kind = DeviationKind::retrain;
  } else if (kind == "constant" && parts.size() == 4) {
    d.kind = DeviationKind::constant;
    d.ell = number(parts[2]);
    d.h = number(parts[3]);
    if (d.ell < 0.0 || d.ell > 1.0 || d.h < 0.0 || d.h > 1.0) throw bad("controls must lie in [0, 1]");
  } else if (kind == "scaled" && parts.size() == 3) {
    d.kind = DeviationKind::scaled;
    d.factor = number(parts[2]);
    if (d.factor < 0.0) throw bad("factor must be >= 0");
  } else {
    throw bad("unknown kind or wrong number of arguments");
  }
  return d;
}

inline std::string to_string(DeviationKind k) {
  switch (k) {
    case DeviationKind::equilibrium:
      return "equilibrium";
    case DeviationKind::constant:
      return "constant";
    case DeviationKind::scaled:
      return "scaled";
    case DeviationKind::retrain:
      return "retrain";
  }
  return "unknown";
}

struct PlayerCosts {
  CostEstimate equilibrium;
  CostEstimate deviation;
};

struct NashReport {
  Deviation deviation;
  std::vector<PlayerCosts> players;
  /// J(eq) - J(dev) for the deviating player; positive means the deviation pays.
  double residual = 0.0;
  /// Standard error of the residual from the paired per-path differences.
  double residual_paired_se = 0.0;

  const PlayerCosts& deviator() const { return players.at(deviation.player); }
};

struct EvaluationOptions {
  std::size_t paths = 256;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

namespace detail {

inline std::vector<double> per_path_costs(const PathBatch& b, std::size_t region, const GameParams& p) {
  std::vector<double> out(b.num_paths());
  for (std::size_t i = 0; i < b.num_paths(); ++i) out[i] = path_cost(b, i, region, p);
  return out;
}

inline double paired_se(const std::vector<double>& a, const std::vector<double>& b) {
  const auto m = static_cast<double>(a.size());
  if (a.size() < 2) return 0.0;
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= m;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  return std::sqrt(ss / (m - 1.0)) / std::sqrt(m);
}

}  // namespace detail

/// Policy that replaces the deviating player's equilibrium policy.
/// `retrained` must hold the re-trained policy network for kind retrain.
inline Policy deviation_policy(const Deviation& d, const NetworkSet& eq, double horizon,
                               const Mlp* retrained = nullptr) {
  if (d.player >= eq.size()) throw std::invalid_argument("deviation: player index out of range");
  switch (d.kind) {
    case DeviationKind::equilibrium:
      return bsde::network_policy(std::make_shared<const Mlp>(eq[d.player].policy), horizon);
    case DeviationKind::constant:
      return constant_policy(d.ell, d.h);
    case DeviationKind::scaled: {
      const Policy base = bsde::network_policy(std::make_shared<const Mlp>(eq[d.player].policy), horizon);
      const double k = d.factor;
      return [base, k](double t, const Eigen::Ref<const Eigen::VectorXd>& x) {
        const RegionControl c = base(t, x);
        return RegionControl{std::clamp(k * c.ell, 0.0, 1.0), std::clamp(k * c.h, 0.0, 1.0)};
      };
    }
    case DeviationKind::retrain:
      if (!retrained) throw std::invalid_argument("deviation: retrain needs the re-trained network");
      return bsde::network_policy(std::make_shared<const Mlp>(*retrained), horizon);
  }
  throw std::invalid_argument("deviation: unknown kind");
}

/// Re-trains `player`'s best response against the equilibrium opponents,
/// warm-started from its equilibrium networks, with one more stage's budget.
inline PlayerNetworks retrain_best_response(const dfp::Game& game, const dfp::SolverConfig& cfg,
                                            const NetworkSet& eq, std::size_t player,
                                            const std::vector<double>& value_scales) {
  if (player >= eq.size()) throw std::invalid_argument("retrain: player index out of range");
  PlayerNetworks mine = eq[player];
  const bsde::StageProblem pb = dfp::stage_problem(game, cfg, player, eq.policies(), value_scales.at(player));
  const bsde::TrainOptions opt = dfp::train_options(cfg, dfp::derive_seed(cfg.seed, 0, player, 6));
  bsde::train_best_response(pb, mine.value, mine.policy, opt);
  return mine;
}

/// Costs of every player under the equilibrium and under exactly one
/// unilateral deviation. More than one deviation is rejected.
inline NashReport evaluate_deviation(const dfp::Game& game, const NetworkSet& eq,
                                     const std::vector<Deviation>& deviations, const EvaluationOptions& opt,
                                     const Mlp* retrained = nullptr) {
  if (deviations.size() != 1) {
    throw std::invalid_argument("evaluate: a Nash deviation is unilateral; give exactly one deviating player");
  }
  const Deviation& d = deviations.front();
  dfp::check_compatible(eq, game.params);
  if (d.player >= eq.size()) throw std::invalid_argument("evaluate: player index out of range");
  if (opt.paths < 2) throw std::invalid_argument("evaluate: need at least two paths");

  const std::vector<Policy> eq_policies = dfp::network_policies(eq, game.params.horizon);
  std::vector<Policy> dev_policies = eq_policies;
  dev_policies[d.player] = deviation_policy(d, eq, game.params.horizon, retrained);

  const PathBatch eq_paths = simulate_batch(game.x0, eq_policies, game.grid, opt.paths, opt.seed, game.params,
                                            opt.threads);
  const PathBatch dev_paths = simulate_batch(game.x0, dev_policies, game.grid, opt.paths, opt.seed, game.params,
                                             opt.threads);
  const auto eq_costs = estimate_costs(eq_paths, game.params);
  const auto dev_costs = estimate_costs(dev_paths, game.params);

  NashReport rep;
  rep.deviation = d;
  for (std::size_t n = 0; n < eq.size(); ++n) rep.players.push_back({eq_costs[n], dev_costs[n]});
  rep.residual = eq_costs[d.player].mean - dev_costs[d.player].mean;
  rep.residual_paired_se = detail::paired_se(detail::per_path_costs(eq_paths, d.player, game.params),
                                             detail::per_path_costs(dev_paths, d.player, game.params));
  return rep;
}

}  // namespace epigame::evaluate
