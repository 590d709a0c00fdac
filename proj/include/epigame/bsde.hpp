#pragma once

// One fictitious-play stage for one player: the stage PDE is solved through
// its BSDE representation. Forward paths follow mu^n (player n at the
// reference control, opponents on their frozen policy networks); the value
// network supplies Y_0 = V(0, x_0) and Z = Sigma^T grad V; the policy network
// is fitted to the pointwise minimiser of the Hamiltonian.

#include "epigame/hamiltonian.hpp"
#include "epigame/mlp.hpp"
#include "epigame/sde.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace epigame::bsde {

using nn::Mlp;

/// Network input for time t and solver state x: (t / T, x).
inline Eigen::VectorXd network_input(double t, const Eigen::Ref<const Eigen::VectorXd>& x, double horizon) {
  Eigen::VectorXd in(x.size() + 1);
  in(0) = t / horizon;
  in.tail(x.size()) = x;
  return in;
}

/// Policy of a region backed by its policy network.
inline Policy network_policy(std::shared_ptr<const Mlp> net, double horizon) {
  return [net = std::move(net), horizon](double t, const Eigen::Ref<const Eigen::VectorXd>& x) {
    const Eigen::VectorXd out = nn::forward(*net, network_input(t, x, horizon));
    return RegionControl{out(0), out(1)};
  };
}

struct DriverTerms {
  Eigen::VectorXd mu;           // drift with player n at (0, 0), 3N
  double g = 0.0;               // inf over own control of f^n + (b(alpha) - b(ref)) . p
  RegionControl control;        // the minimiser alpha^n
  Eigen::VectorXd drift_shift;  // b(alpha^n) - b(ref) = dg/dp
  BestResponse detail;
};

/// Splits inf_alpha H^n into mu^n . p + g^n with the reference control (0, 0),
/// so that mu^n . p + g^n == min over own controls of H^n.
inline DriverTerms driver_terms(std::size_t player, double t, const Eigen::Ref<const Eigen::VectorXd>& x,
                                const Eigen::Ref<const Eigen::VectorXd>& p, const ControlProfile& others,
                                const GameParams& params) {
  const auto r = static_cast<Eigen::Index>(player);
  const auto dim = static_cast<Eigen::Index>(params.solver_dim());
  DriverTerms out;
  ControlProfile c = others;
  c.ell(r) = 0.0;
  c.h(r) = 0.0;
  out.mu.resize(dim);
  drift_into(x, c, params, out.mu);

  out.detail = best_response_detail(player, t, x, others, p, params);
  out.control = out.detail.control;
  c.ell(r) = out.control.ell;
  c.h(r) = out.control.h;
  Eigen::VectorXd b_opt(dim);
  drift_into(x, c, params, b_opt);
  out.drift_shift = b_opt - out.mu;
  out.g = running_cost(player, t, x, out.control.ell, out.control.h, params) + out.drift_shift.dot(p);
  return out;
}

/// Stage problem of one player against frozen opponents.
struct StageProblem {
  std::size_t player = 0;
  GameParams params;
  TimeGrid grid;
  GameState nominal_x0;
  /// Policy networks of every player from the previous stage; entry `player`
  /// is ignored. Shared read-only between concurrently trained players.
  std::shared_ptr<const std::vector<Mlp>> opponents;
  std::size_t batch_size = 64;
  double tau = 1.0;
  double jitter = 0.1;  // relative half-width of the uniform x_0 perturbation
  /// Fraction of each batch started from a broad state instead: per region
  /// E, I ~ U(0, 0.2), R ~ U(0, 0.8), S the remainder.
  double broad_fraction = 0.0;
  /// Currency per unit of value-network output; costs are divided by it.
  double value_scale = 1.0;
  /// Weight of the path-consistency term E sum_k |Y_k - V(t_k, X_k)|^2 dt / T
  /// (0 = the plain terminal loss).
  double consistency = 0.0;

  void validate() const {
    params.validate();
    detail::require(player < params.num_regions, "StageProblem: player index out of range");
    detail::require(nominal_x0.num_regions() == params.num_regions, "StageProblem: x0 region mismatch");
    detail::require(batch_size >= 1, "StageProblem: batch_size must be >= 1");
    detail::require(tau >= 0.0, "StageProblem: tau must be >= 0");
    detail::require(jitter >= 0.0 && jitter < 1.0, "StageProblem: jitter must lie in [0, 1)");
    detail::require(broad_fraction >= 0.0 && broad_fraction <= 1.0, "StageProblem: broad_fraction must lie in [0, 1]");
    detail::require(value_scale > 0.0 && std::isfinite(value_scale), "StageProblem: value_scale must be > 0");
    detail::require(consistency >= 0.0 && std::isfinite(consistency), "StageProblem: consistency must be >= 0");
    if (params.num_regions > 1) {
      detail::require(opponents && opponents->size() == params.num_regions,
                      "StageProblem: need one policy network per player");
    }
  }
};

/// Cost scale used by default: a full lockdown of region n over the horizon.
inline double default_value_scale(const GameParams& p, std::size_t region) {
  const double s = p.populations(static_cast<Eigen::Index>(region)) * p.productivity * p.horizon;
  return s > 0.0 ? s : 1.0;
}

/// Initial states and Brownian increments for one optimisation step.
struct NoiseBatch {
  Eigen::MatrixXd x0;               // 4N x batch
  std::vector<Eigen::MatrixXd> dw;  // per step: 2N x batch, variance dt
};

/// Nominal state with each compartment scaled by (1 + U(-jitter, jitter)),
/// renormalised per region.
template <class Rng>
Eigen::VectorXd jittered_state(const GameState& nominal, double jitter, Rng& rng) {
  const std::size_t n = nominal.num_regions();
  GameState s = nominal;
  std::uniform_real_distribution<double> u(-jitter, jitter);
  for (std::size_t r = 0; r < n; ++r) {
    s.S(r) *= 1.0 + u(rng);
    s.E(r) *= 1.0 + u(rng);
    s.I(r) *= 1.0 + u(rng);
    s.R(r) *= 1.0 + u(rng);
    const double m = s.mass(r);
    s.S(r) /= m;
    s.E(r) /= m;
    s.I(r) /= m;
    s.R(r) /= m;
  }
  return s.values();
}

/// Broad initial state: per region E, I ~ U(0, 0.2) and R ~ U(0, 0.8), with
/// E, I, R scaled down together when they exceed the whole population.
template <class Rng>
Eigen::VectorXd broad_state(std::size_t num_regions, Rng& rng) {
  GameState s(num_regions);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t r = 0; r < num_regions; ++r) {
    double e = 0.2 * u(rng), i = 0.2 * u(rng), rec = 0.8 * u(rng);
    const double used = e + i + rec;
    if (used > 1.0) {
      e /= used;
      i /= used;
      rec /= used;
    }
    s.E(r) = e;
    s.I(r) = i;
    s.R(r) = rec;
    s.S(r) = std::max(0.0, 1.0 - e - i - rec);
  }
  return s.values();
}

template <class Rng>
NoiseBatch draw_noise(const StageProblem& pb, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(pb.params.num_regions);
  const auto batch = static_cast<Eigen::Index>(pb.batch_size);
  NoiseBatch nb;
  nb.x0.resize(4 * n, batch);
  const auto broad = static_cast<Eigen::Index>(std::llround(pb.broad_fraction * static_cast<double>(batch)));
  for (Eigen::Index b = 0; b < batch; ++b) {
    nb.x0.col(b) = b < batch - broad ? jittered_state(pb.nominal_x0, pb.jitter, rng)
                                     : broad_state(pb.params.num_regions, rng);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(pb.grid.step());
  nb.dw.resize(pb.grid.num_steps);
  for (auto& m : nb.dw) {
    m.resize(2 * n, batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Eigen::Index j = 0; j < 2 * n; ++j) m(j, b) = normal(rng) * sd;
    }
  }
  return nb;
}

/// Forward paths of the stage SDE. They do not depend on the trained
/// networks, only on the frozen opponents.
struct ForwardPaths {
  std::vector<Eigen::MatrixXd> x;         // K + 1 entries of 3N x batch
  std::vector<Eigen::MatrixXd> noise;     // K entries: Sigma(X_k) dW_k, 3N x batch
  std::vector<Eigen::MatrixXd> controls;  // K entries: 2N x batch, own rows zero
  long clamp_events = 0;
};

inline ForwardPaths simulate_forward(const StageProblem& pb, const NoiseBatch& nb) {
  const auto n = static_cast<Eigen::Index>(pb.params.num_regions);
  const auto dim = 3 * n;
  const auto batch = nb.x0.cols();
  const auto steps = pb.grid.num_steps;
  const double dt = pb.grid.step();
  const auto me = static_cast<Eigen::Index>(pb.player);

  ForwardPaths fp;
  fp.x.reserve(steps + 1);
  fp.x.push_back(nb.x0.topRows(dim));
  fp.noise.reserve(steps);
  fp.controls.reserve(steps);
  ControlProfile c(pb.params.num_regions);
  Eigen::VectorXd mu(dim), shock(dim);
  Eigen::MatrixXd input(dim + 1, batch);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = pb.grid.time(k);
    const Eigen::MatrixXd& xk = fp.x.back();
    Eigen::MatrixXd ctrl = Eigen::MatrixXd::Zero(2 * n, batch);
    if (n > 1) {
      input.row(0).setConstant(t / pb.params.horizon);
      input.bottomRows(dim) = xk;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == me) continue;
        const Eigen::MatrixXd a = nn::forward((*pb.opponents)[static_cast<std::size_t>(j)], input);
        ctrl.row(j) = a.row(0);
        ctrl.row(n + j) = a.row(1);
      }
    }
    Eigen::MatrixXd next(dim, batch), noise(dim, batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
      c.ell = ctrl.col(b).head(n);
      c.h = ctrl.col(b).tail(n);
      drift_into(xk.col(b), c, pb.params, mu);
      apply_diffusion(xk.col(b), nb.dw[k].col(b), pb.params, shock);
      noise.col(b) = shock;
      for (Eigen::Index i = 0; i < dim; ++i) {
        const double v = xk(i, b) + mu(i) * dt + shock(i);
        if (!std::isfinite(v)) throw std::runtime_error("stage forward path: non-finite state at step " + std::to_string(k));
        const double clamped = std::clamp(v, 0.0, 1.0);
        if (clamped != v) ++fp.clamp_events;
        next(i, b) = clamped;
      }
    }
    fp.x.push_back(std::move(next));
    fp.noise.push_back(std::move(noise));
    fp.controls.push_back(std::move(ctrl));
  }
  return fp;
}

struct StageLoss {
  double loss = 0.0;
  double terminal_sq = 0.0;       // mean |Y_T|^2
  double control_mismatch = 0.0;  // mean over paths of sum_k |alpha - alpha_net|^2 dt
  double path_gap = 0.0;          // mean over paths of sum_{0<k<K} |Y_k - V(t_k, X_k)|^2 dt / T
  Eigen::VectorXd terminal;       // Y_T per path
  Eigen::VectorXd initial_value;  // Y_0 per path (value units)
  nn::MlpGradient value_grad;
  nn::MlpGradient policy_grad;
  long clamp_events = 0;
};

/// Stage loss E|Y_T|^2 + tau E sum_k |alpha^n - alpha_net|^2 dt, plus the
/// optional path-consistency term, on one sampled batch, optionally with its
/// exact parameter gradient (control clamps pass zero subgradient).
inline StageLoss stage_loss(const StageProblem& pb, const Mlp& value_net, const Mlp& policy_net,
                            const NoiseBatch& nb, bool with_gradient = true) {
  const GameParams& prm = pb.params;
  const auto n = static_cast<Eigen::Index>(prm.num_regions);
  const auto dim = 3 * n;
  const auto batch = nb.x0.cols();
  const auto steps = static_cast<Eigen::Index>(pb.grid.num_steps);
  const double dt = pb.grid.step();
  const double scale = pb.value_scale;
  if (static_cast<Eigen::Index>(value_net.input_dim()) != dim + 1 || value_net.output_dim() != 1) {
    throw std::invalid_argument("stage_loss: value network must map 3N+1 inputs to 1 output");
  }
  if (static_cast<Eigen::Index>(policy_net.input_dim()) != dim + 1 || policy_net.output_dim() != 2) {
    throw std::invalid_argument("stage_loss: policy network must map 3N+1 inputs to 2 outputs");
  }

  const ForwardPaths fp = simulate_forward(pb, nb);

  // Column k * batch + b holds (t_k, X_k^b) for k < K.
  const Eigen::Index cols = steps * batch;
  Eigen::MatrixXd input(dim + 1, cols);
  for (Eigen::Index k = 0; k < steps; ++k) {
    input.block(0, k * batch, 1, batch).setConstant(pb.grid.time(static_cast<std::size_t>(k)) / prm.horizon);
    input.block(1, k * batch, dim, batch) = fp.x[static_cast<std::size_t>(k)];
  }
  const nn::ForwardCache vcache = nn::forward_cached(value_net, input);
  const Eigen::MatrixXd grad_v = nn::input_gradient(value_net, vcache);  // (dim + 1) x cols
  const nn::ForwardCache acache = nn::forward_cached(policy_net, input);
  const Eigen::MatrixXd& alpha_net = acache.activations.back();  // 2 x cols

  StageLoss out;
  out.clamp_events = fp.clamp_events;
  out.terminal = vcache.activations.back().block(0, 0, 1, batch).transpose();
  out.initial_value = out.terminal;

  // gap(k, b) = Y_k - V(t_k, X_k) for 0 < k < K; Y_k is accumulated in out.terminal.
  Eigen::MatrixXd gap = Eigen::MatrixXd::Zero(steps, batch);
  const Eigen::MatrixXd& v_out = vcache.activations.back();
  Eigen::MatrixXd mismatch(2, cols);
  Eigen::MatrixXd slope_shift(dim, cols);       // dg/dp per column
  Eigen::MatrixXd mismatch_pullback(dim, cols); // (d alpha / d p_hat)^T mismatch
  ControlProfile others(prm.num_regions);
  for (Eigen::Index k = 0; k < steps; ++k) {
    const double t = pb.grid.time(static_cast<std::size_t>(k));
    const auto ku = static_cast<std::size_t>(k);
    if (k > 0) gap.row(k) = out.terminal.transpose() - v_out.block(0, k * batch, 1, batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const Eigen::Index col = k * batch + b;
      const auto x = fp.x[ku].col(b);
      others.ell = fp.controls[ku].col(b).head(n);
      others.h = fp.controls[ku].col(b).tail(n);
      const Eigen::VectorXd p_hat = grad_v.col(col).tail(dim);
      const Eigen::VectorXd p = scale * p_hat;
      const DriverTerms d = driver_terms(pb.player, t, x, p, others, prm);
      const double g_hat = d.g / scale;
      out.terminal(b) += -g_hat * dt + p_hat.dot(fp.noise[ku].col(b));
      mismatch(0, col) = d.control.ell - alpha_net(0, col);
      mismatch(1, col) = d.control.h - alpha_net(1, col);
      if (with_gradient) {
        slope_shift.col(col) = d.drift_shift;
        if (pb.tau > 0.0 && (d.detail.ell_interior || d.detail.h_interior)) {
          const Eigen::MatrixXd jac = best_response_sensitivity(pb.player, t, x, others, p, prm, d.detail);
          mismatch_pullback.col(col) = scale * (jac.transpose() * mismatch.col(col));
        } else {
          mismatch_pullback.col(col).setZero();
        }
      }
    }
  }
  if (!out.terminal.allFinite()) throw std::runtime_error("stage_loss: non-finite terminal value");

  const double inv_batch = 1.0 / static_cast<double>(batch);
  out.terminal_sq = out.terminal.squaredNorm() * inv_batch;
  out.control_mismatch = mismatch.squaredNorm() * dt * inv_batch;
  out.path_gap = gap.squaredNorm() * dt / prm.horizon * inv_batch;
  out.loss = out.terminal_sq + pb.tau * out.control_mismatch + pb.consistency * out.path_gap;
  if (!std::isfinite(out.loss)) throw std::runtime_error("stage_loss: non-finite loss");

  if (with_gradient) {
    // Adjoint of the increment taken at step k: every later Y_j it feeds.
    const Eigen::MatrixXd gap_weight = (2.0 * pb.consistency * dt / prm.horizon * inv_batch) * gap;
    Eigen::MatrixXd adjoint(steps, batch);
    adjoint.row(steps - 1) = (2.0 * inv_batch) * out.terminal.transpose();
    for (Eigen::Index k = steps - 2; k >= 0; --k) adjoint.row(k) = adjoint.row(k + 1) + gap_weight.row(k + 1);
    Eigen::MatrixXd value_weight = Eigen::MatrixXd::Zero(1, cols);
    Eigen::MatrixXd direction = Eigen::MatrixXd::Zero(dim + 1, cols);
    for (Eigen::Index k = 0; k < steps; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      for (Eigen::Index b = 0; b < batch; ++b) {
        const Eigen::Index col = k * batch + b;
        const double w = adjoint(k, b);
        value_weight(0, col) = k == 0 ? w : -gap_weight(k, b);
        direction.col(col).tail(dim) =
            w * (fp.noise[ku].col(b) - dt * slope_shift.col(col)) +
            (2.0 * pb.tau * dt * inv_batch) * mismatch_pullback.col(col);
      }
    }
    out.value_grad = nn::backward_value_and_slope(value_net, vcache, value_weight, direction);
    out.policy_grad = nn::backward(policy_net, acache, (-2.0 * pb.tau * dt * inv_batch) * mismatch);
  }
  return out;
}

struct TrainOptions {
  std::size_t iterations = 1000;
  double learning_rate = 3e-4;
  double l2 = 0.0;
  std::uint64_t seed = 1;
  /// Shift the value network's output bias by -mean(Y_T) after every step,
  /// which minimises the terminal term exactly in that one parameter.
  bool exact_output_bias = true;
  /// Abort when the loss stays above divergence_factor x its first value
  /// for divergence_window consecutive steps.
  double divergence_factor = 1e3;
  std::size_t divergence_window = 100;
};

struct TrainDiagnostics {
  std::vector<double> loss;
  std::vector<double> terminal_sq;
  std::vector<double> control_mismatch;
  long clamp_events = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optimises the value and policy networks of one stage problem in place.
inline TrainDiagnostics train_best_response(const StageProblem& pb, Mlp& value_net, Mlp& policy_net,
                                            const TrainOptions& opt) {
  pb.validate();
  std::mt19937_64 rng(opt.seed);
  nn::OptimState value_state(value_net, opt.learning_rate);
  nn::OptimState policy_state(policy_net, opt.learning_rate);
  value_state.l2 = policy_state.l2 = opt.l2;
  TrainDiagnostics diag;
  std::size_t above = 0;
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    const NoiseBatch nb = draw_noise(pb, rng);
    const StageLoss sl = stage_loss(pb, value_net, policy_net, nb, true);
    diag.loss.push_back(sl.loss);
    diag.terminal_sq.push_back(sl.terminal_sq);
    diag.control_mismatch.push_back(sl.control_mismatch);
    diag.clamp_events += sl.clamp_events;
    if (sl.loss > opt.divergence_factor * diag.loss.front()) {
      if (++above >= opt.divergence_window) {
        throw TrainingDiverged("player " + std::to_string(pb.player) + " diverged at iteration " +
                               std::to_string(it) + " (loss " + std::to_string(sl.loss) + ")");
      }
    } else {
      above = 0;
    }
    nn::optimizer_step(value_state, value_net, sl.value_grad);
    if (opt.exact_output_bias) value_net.biases().back()(0) -= sl.terminal.mean();
    if (pb.tau > 0.0) nn::optimizer_step(policy_state, policy_net, sl.policy_grad);
  }
  return diag;
}

/// Writes the diagnostics stream as CSV `iter,loss,terminal_sq,control_mismatch`.
inline void write_diagnostics_csv(std::ostream& os, const TrainDiagnostics& d) {
  os << "iter,loss,terminal_sq,control_mismatch\n";
  os.precision(17);
  for (std::size_t i = 0; i < d.loss.size(); ++i) {
    os << i << ',' << d.loss[i] << ',' << d.terminal_sq[i] << ',' << d.control_mismatch[i] << '\n';
  }
}

}  // namespace epigame::bsde
