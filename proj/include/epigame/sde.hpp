#pragma once

#include "epigame/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace epigame {

struct TimeGrid {
  double horizon = 180.0;
  std::size_t num_steps = 180;

  TimeGrid() = default;
  TimeGrid(double horizon_days, std::size_t steps) : horizon(horizon_days), num_steps(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon) || num_steps < 1) {
      throw std::invalid_argument("TimeGrid: need horizon > 0 and num_steps >= 1");
    }
  }

  double step() const { return horizon / static_cast<double>(num_steps); }
  double time(std::size_t k) const { return horizon * static_cast<double>(k) / static_cast<double>(num_steps); }
};

struct EulerStep {
  Eigen::VectorXd unclamped;  // x + b dt + Sigma dW
  Eigen::VectorXd state;      // after clamping every compartment into [0, 1]
  int clamp_events = 0;
};

/// One Euler-Maruyama step of the full 4N state. `dw` holds the 2N Brownian
/// increments (variance dt each), ordered [W^{s_1..N}, W^{e_1..N}].
inline EulerStep euler_step(const Eigen::Ref<const Eigen::VectorXd>& x, const ControlProfile& c, double dt,
                            const Eigen::Ref<const Eigen::VectorXd>& dw, const GameParams& p) {
  const auto dim = static_cast<Eigen::Index>(p.state_dim());
  if (x.size() != dim || dw.size() != static_cast<Eigen::Index>(p.noise_dim())) {
    throw std::invalid_argument("euler_step: state or increment dimension mismatch");
  }
  EulerStep out;
  out.unclamped.resize(dim);
  Eigen::VectorXd noise(dim);
  drift_into(x, c, p, out.unclamped);
  apply_diffusion(x, dw, p, noise);
  out.unclamped = x + out.unclamped * dt + noise;
  if (!out.unclamped.allFinite()) throw std::runtime_error("euler_step: non-finite state");
  out.state = out.unclamped;
  for (Eigen::Index i = 0; i < dim; ++i) {
    const double v = std::clamp(out.state(i), 0.0, 1.0);
    if (v != out.state(i)) {
      ++out.clamp_events;
      out.state(i) = v;
    }
  }
  return out;
}

struct RegionControl {
  double ell = 0.0;
  double h = 0.0;
};

/// Feedback policy of one region: (t, solver state X of size 3N) -> (ell, h).
using Policy = std::function<RegionControl(double, const Eigen::Ref<const Eigen::VectorXd>&)>;

inline Policy constant_policy(double ell, double h) {
  return [ell, h](double, const Eigen::Ref<const Eigen::VectorXd>&) { return RegionControl{ell, h}; };
}

struct PathBatch {
  TimeGrid grid;
  std::size_t num_regions = 0;
  std::vector<Eigen::MatrixXd> states;    // per path: 4N x (num_steps + 1)
  std::vector<Eigen::MatrixXd> controls;  // per path: 2N x num_steps, rows [ell_1..N, h_1..N]
  std::vector<std::uint64_t> seeds;
  long state_clamp_events = 0;
  long policy_clamp_events = 0;

  std::size_t num_paths() const { return states.size(); }
};

namespace detail {

inline void simulate_path(const GameState& x0, const std::vector<Policy>& policies, const TimeGrid& grid,
                          std::uint64_t seed, const GameParams& p, Eigen::MatrixXd& states,
                          Eigen::MatrixXd& controls, long& state_clamps, long& policy_clamps) {
  const auto n = static_cast<Eigen::Index>(p.num_regions);
  const auto steps = static_cast<Eigen::Index>(grid.num_steps);
  const double dt = grid.step();
  const double sqrt_dt = std::sqrt(dt);
  states.resize(4 * n, steps + 1);
  controls.resize(2 * n, steps);
  states.col(0) = x0.values();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ControlProfile c(p.num_regions);
  Eigen::VectorXd dw(2 * n);
  for (Eigen::Index k = 0; k < steps; ++k) {
    const double t = grid.time(static_cast<std::size_t>(k));
    const Eigen::VectorXd solver = states.col(k).head(3 * n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const RegionControl rc = policies[static_cast<std::size_t>(r)](t, solver);
      c.ell(r) = rc.ell;
      c.h(r) = rc.h;
    }
    policy_clamps += c.clamp();
    for (Eigen::Index j = 0; j < 2 * n; ++j) dw(j) = normal(rng) * sqrt_dt;
    EulerStep step = euler_step(states.col(k), c, dt, dw, p);
    state_clamps += step.clamp_events;
    states.col(k + 1) = step.state;
    controls.col(k) << c.ell, c.h;
  }
}

}  // namespace detail

/// Monte Carlo ensemble of controlled paths. Path i uses seed base_seed + i,
/// so results do not depend on `threads`.
inline PathBatch simulate_batch(const GameState& x0, const std::vector<Policy>& policies, const TimeGrid& grid,
                                std::size_t num_paths, std::uint64_t base_seed, const GameParams& p,
                                unsigned threads = 1) {
  if (x0.num_regions() != p.num_regions || policies.size() != p.num_regions) {
    throw std::invalid_argument("simulate_batch: need one policy per region and a matching initial state");
  }
  PathBatch batch;
  batch.grid = grid;
  batch.num_regions = p.num_regions;
  batch.states.resize(num_paths);
  batch.controls.resize(num_paths);
  batch.seeds.resize(num_paths);
  for (std::size_t i = 0; i < num_paths; ++i) batch.seeds[i] = base_seed + i;

  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(num_paths, 1))));
  std::vector<long> state_clamps(threads, 0), policy_clamps(threads, 0);
  auto work = [&](unsigned w) {
    for (std::size_t i = w; i < num_paths; i += threads) {
      detail::simulate_path(x0, policies, grid, batch.seeds[i], p, batch.states[i], batch.controls[i],
                            state_clamps[w], policy_clamps[w]);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  for (unsigned w = 0; w < threads; ++w) {
    batch.state_clamp_events += state_clamps[w];
    batch.policy_clamp_events += policy_clamps[w];
  }
  return batch;
}

struct CostEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

/// Per-path realised cost of `region`: left-endpoint sum of running_cost * dt.
inline double path_cost(const PathBatch& batch, std::size_t path, std::size_t region, const GameParams& p) {
  const auto n = static_cast<Eigen::Index>(p.num_regions);
  const auto r = static_cast<Eigen::Index>(region);
  const double dt = batch.grid.step();
  const Eigen::MatrixXd& xs = batch.states[path];
  const Eigen::MatrixXd& cs = batch.controls[path];
  double total = 0.0;
  for (std::size_t k = 0; k < batch.grid.num_steps; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    total += running_cost(region, batch.grid.time(k), xs.col(kk), cs(r, kk), cs(n + r, kk), p) * dt;
  }
  return total;
}

/// Mean cost per region and its standard error (sample sd / sqrt(paths)).
inline std::vector<CostEstimate> estimate_costs(const PathBatch& batch, const GameParams& p) {
  if (batch.num_paths() == 0) throw std::invalid_argument("estimate_costs: empty batch");
  if (batch.num_regions != p.num_regions) throw std::invalid_argument("estimate_costs: region mismatch");
  const auto paths = static_cast<double>(batch.num_paths());
  std::vector<CostEstimate> out(p.num_regions);
  for (std::size_t r = 0; r < p.num_regions; ++r) {
    std::vector<double> costs(batch.num_paths());
    for (std::size_t i = 0; i < batch.num_paths(); ++i) costs[i] = path_cost(batch, i, r, p);
    double mean = 0.0;
    for (double c : costs) mean += c;
    mean /= paths;
    double ss = 0.0;
    for (double c : costs) ss += (c - mean) * (c - mean);
    out[r].mean = mean;
    out[r].standard_error = batch.num_paths() > 1 ? std::sqrt(ss / (paths - 1.0)) / std::sqrt(paths) : 0.0;
  }
  return out;
}

}  // namespace epigame
