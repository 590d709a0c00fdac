#pragma once

// Enhanced deep fictitious play: at stage m + 1 every player best-responds to
// the stage-m policy networks of the others. Only the previous and the
// current network sets are alive at any time.

#include "epigame/bsde.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

namespace epigame::dfp {

using bsde::Mlp;

struct SolverConfig {
  std::size_t stages = 10;
  double tolerance = 1e-3;
  std::size_t iterations_per_stage = 500;
  std::size_t batch_size = 64;
  double tau = 1.0;
  double consistency = 0.0;  // weight of the path-consistency loss term
  double learning_rate = 3e-4;
  double l2 = 0.0;
  double jitter = 0.1;
  double broad_fraction = 0.0;  // share of each batch started from broad states
  std::vector<std::size_t> hidden = {32, 32, 32};
  std::uint64_t seed = 1;
  std::size_t probe_states = 512;
  std::size_t probe_paths = 64;
  unsigned threads = 1;
  /// Final-layer bias of fresh policy networks; logistic(-6) ~ 0.0025, so
  /// play starts from "no intervention".
  double initial_policy_bias = -6.0;
  /// Order in which players are trained inside a stage (empty = 0..N-1).
  std::vector<std::size_t> player_order;
};

struct PlayerNetworks {
  Mlp value;
  Mlp policy;
};

/// Value and policy networks of every player at one stage.
class NetworkSet {
 public:
  NetworkSet() { ++live_; }
  explicit NetworkSet(std::vector<PlayerNetworks> players) : players_(std::move(players)) { ++live_; }
  NetworkSet(const NetworkSet& o) : players_(o.players_) { ++live_; }
  NetworkSet(NetworkSet&& o) noexcept : players_(std::move(o.players_)) { ++live_; }
  NetworkSet& operator=(const NetworkSet&) = default;
  NetworkSet& operator=(NetworkSet&&) noexcept = default;
  ~NetworkSet() { --live_; }

  std::size_t size() const { return players_.size(); }
  PlayerNetworks& operator[](std::size_t i) { return players_[i]; }
  const PlayerNetworks& operator[](std::size_t i) const { return players_[i]; }

  std::shared_ptr<const std::vector<Mlp>> policies() const {
    auto out = std::make_shared<std::vector<Mlp>>();
    for (const auto& p : players_) out->push_back(p.policy);
    return out;
  }

  /// Number of NetworkSet objects currently alive in the process.
  static long live() { return live_.load(); }

 private:
  std::vector<PlayerNetworks> players_;
  static inline std::atomic<long> live_{0};
};

struct StageResult {
  std::size_t stage = 0;
  NetworkSet networks;
  double metric = 0.0;
  double wall_seconds = 0.0;
  std::vector<double> final_loss;
};

struct StageSummary {
  std::size_t stage = 0;
  double metric = 0.0;
  double wall_seconds = 0.0;
  std::vector<double> final_loss;
};

struct DfpRun {
  std::vector<StageSummary> history;
  StageResult final;
  long peak_network_sets = 0;
  bool converged = false;
};

/// Deterministic per-(stage, player, purpose) seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stage, std::uint64_t player,
                                 std::uint64_t purpose) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(mix(master) ^ stage) ^ (player << 8)) ^ (purpose << 16));
}

inline std::vector<std::size_t> layer_dims(std::size_t solver_dim, const std::vector<std::size_t>& hidden,
                                           std::size_t outputs) {
  std::vector<std::size_t> dims{solver_dim + 1};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(outputs);
  return dims;
}

/// Mean and inverse standard deviation of the network inputs (t/T, x) over
/// Monte Carlo paths in which nobody intervenes.
struct InputNormalization {
  Eigen::VectorXd shift;
  Eigen::VectorXd scale;
};

inline InputNormalization uncontrolled_input_normalization(const GameParams& p, const GameState& x0,
                                                           const TimeGrid& grid, std::size_t paths,
                                                           std::uint64_t seed) {
  const std::vector<Policy> idle(p.num_regions, constant_policy(0.0, 0.0));
  const PathBatch batch = simulate_batch(x0, idle, grid, paths, seed, p);
  const auto dim = static_cast<Eigen::Index>(p.solver_dim());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim + 1);
  Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(dim + 1);
  double count = 0.0;
  Eigen::VectorXd in(dim + 1);
  for (const auto& states : batch.states) {
    for (std::size_t k = 0; k <= grid.num_steps; ++k) {
      in(0) = grid.time(k) / p.horizon;
      in.tail(dim) = states.col(static_cast<Eigen::Index>(k)).head(dim);
      sum += in;
      sum_sq += in.cwiseProduct(in);
      count += 1.0;
    }
  }
  InputNormalization out;
  out.shift = sum / count;
  out.scale.resize(dim + 1);
  for (Eigen::Index i = 0; i <= dim; ++i) {
    const double var = std::max(0.0, sum_sq(i) / count - out.shift(i) * out.shift(i));
    const double sd = std::sqrt(var);
    out.scale(i) = sd > 1e-8 ? 1.0 / sd : 1.0;
  }
  return out;
}

/// Stage-0 networks: random value networks, policy networks squashed to ~(0, 0).
inline NetworkSet initial_networks(const GameParams& p, const GameState& x0, const TimeGrid& grid,
                                   const SolverConfig& cfg) {
  const InputNormalization norm =
      uncontrolled_input_normalization(p, x0, grid, cfg.probe_paths, derive_seed(cfg.seed, 0, 0, 4));
  std::vector<PlayerNetworks> players;
  for (std::size_t n = 0; n < p.num_regions; ++n) {
    std::mt19937_64 rng(derive_seed(cfg.seed, 0, n, 1));
    PlayerNetworks pn;
    pn.value = Mlp::random(layer_dims(p.solver_dim(), cfg.hidden, 1), nn::OutputActivation::identity, rng);
    pn.policy = Mlp::random(layer_dims(p.solver_dim(), cfg.hidden, 2), nn::OutputActivation::logistic, rng);
    pn.value.set_input_normalization(norm.shift, norm.scale);
    pn.policy.set_input_normalization(norm.shift, norm.scale);
    pn.value.weights().back() *= 0.01;
    pn.policy.weights().back() *= 0.01;
    pn.policy.biases().back().setConstant(cfg.initial_policy_bias);
    players.push_back(std::move(pn));
  }
  return NetworkSet(std::move(players));
}

/// Probe points (t, x) as columns of a (3N + 1) x count input matrix.
struct ProbeSet {
  Eigen::MatrixXd inputs;
};

/// Forward sample of the stage-0 profile: convergence probes plus the
/// per-player cost scale used to normalize value networks.
struct ReferenceSample {
  ProbeSet probes;
  std::vector<double> value_scales;
};

inline ReferenceSample reference_sample(const GameParams& p, const GameState& x0, const TimeGrid& grid,
                                        const NetworkSet& policies, std::size_t paths, std::size_t count,
                                        std::uint64_t seed) {
  if (paths == 0 || count == 0) throw std::invalid_argument("probe_paths, probe_states: must be positive");
  std::vector<Policy> pol;
  for (std::size_t n = 0; n < policies.size(); ++n) {
    pol.push_back(bsde::network_policy(std::make_shared<const Mlp>(policies[n].policy), p.horizon));
  }
  const PathBatch batch = simulate_batch(x0, pol, grid, paths, seed, p);
  ReferenceSample out;
  for (std::size_t n = 0; n < p.num_regions; ++n) {
    out.value_scales.push_back(bsde::default_value_scale(p, n));
  }
  const auto costs = estimate_costs(batch, p);
  for (std::size_t n = 0; n < costs.size(); ++n) {
    if (costs[n].mean > 0.0 && std::isfinite(costs[n].mean)) out.value_scales[n] = costs[n].mean;
  }

  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  std::uniform_int_distribution<std::size_t> pick_path(0, paths - 1);
  std::uniform_int_distribution<std::size_t> pick_step(0, grid.num_steps - 1);
  const auto dim = static_cast<Eigen::Index>(p.solver_dim());
  out.probes.inputs.resize(dim + 1, static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t path = pick_path(rng);
    const std::size_t step = pick_step(rng);
    const auto col = static_cast<Eigen::Index>(i);
    out.probes.inputs(0, col) = grid.time(step) / p.horizon;
    out.probes.inputs.block(1, col, dim, 1) = batch.states[path].col(static_cast<Eigen::Index>(step)).head(dim);
  }
  return out;
}

/// max over players of the mean over probes of |alpha_new - alpha_prev|_2.
inline double convergence_metric(const NetworkSet& prev, const NetworkSet& next, const ProbeSet& probes) {
  if (probes.inputs.cols() == 0) throw std::invalid_argument("convergence_metric: empty probe set");
  if (prev.size() != next.size()) throw std::invalid_argument("convergence_metric: player count mismatch");
  double worst = 0.0;
  for (std::size_t n = 0; n < prev.size(); ++n) {
    const Eigen::MatrixXd a = nn::forward(prev[n].policy, probes.inputs);
    const Eigen::MatrixXd b = nn::forward(next[n].policy, probes.inputs);
    const double mean = (a - b).colwise().norm().mean();
    worst = std::max(worst, mean);
  }
  return worst;
}

struct Game {
  GameParams params;
  GameState x0;
  TimeGrid grid;
};

/// Best-response problem of `player` against frozen opponent policies.
inline bsde::StageProblem stage_problem(const Game& game, const SolverConfig& cfg, std::size_t player,
                                        std::shared_ptr<const std::vector<Mlp>> opponents, double value_scale) {
  bsde::StageProblem pb;
  pb.player = player;
  pb.params = game.params;
  pb.grid = game.grid;
  pb.nominal_x0 = game.x0;
  pb.opponents = std::move(opponents);
  pb.batch_size = cfg.batch_size;
  pb.tau = cfg.tau;
  pb.consistency = cfg.consistency;
  pb.jitter = cfg.jitter;
  pb.broad_fraction = cfg.broad_fraction;
  pb.value_scale = value_scale;
  return pb;
}

inline bsde::TrainOptions train_options(const SolverConfig& cfg, std::uint64_t seed) {
  bsde::TrainOptions opt;
  opt.iterations = cfg.iterations_per_stage;
  opt.learning_rate = cfg.learning_rate;
  opt.l2 = cfg.l2;
  opt.seed = seed;
  return opt;
}

/// Feedback policies of every player backed by their policy networks.
inline std::vector<Policy> network_policies(const NetworkSet& nets, double horizon) {
  std::vector<Policy> out;
  for (std::size_t n = 0; n < nets.size(); ++n) {
    out.push_back(bsde::network_policy(std::make_shared<const Mlp>(nets[n].policy), horizon));
  }
  return out;
}

/// Throws std::invalid_argument unless `nets` has one value and one policy
/// network per region with the input and output shapes of this game.
inline void check_compatible(const NetworkSet& nets, const GameParams& p) {
  if (nets.size() != p.num_regions) {
    throw std::invalid_argument("checkpoint has " + std::to_string(nets.size()) + " players, config has " +
                                std::to_string(p.num_regions) + " regions");
  }
  for (std::size_t n = 0; n < nets.size(); ++n) {
    const bool ok = nets[n].value.input_dim() == p.solver_dim() + 1 && nets[n].value.output_dim() == 1 &&
                    nets[n].policy.input_dim() == p.solver_dim() + 1 && nets[n].policy.output_dim() == 2;
    if (!ok) throw std::invalid_argument("checkpoint network shapes of player " + std::to_string(n) +
                                         " do not match the config");
  }
}

/// Probes and value scales of a run; depends only on the game and config.
inline ReferenceSample stage0_reference(const Game& game, const SolverConfig& cfg) {
  const NetworkSet stage0 = initial_networks(game.params, game.x0, game.grid, cfg);
  return reference_sample(game.params, game.x0, game.grid, stage0, cfg.probe_paths, cfg.probe_states,
                          derive_seed(cfg.seed, 0, 0, 3));
}

/// Trains every player's best response to `current` and returns the next stage.
inline StageResult run_stage(const Game& game, const SolverConfig& cfg, const StageResult& current,
                             const std::vector<double>& value_scales) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t num_players = game.params.num_regions;
  const std::size_t next_stage = current.stage + 1;
  StageResult next;
  next.stage = next_stage;
  next.networks = current.networks;  // warm start
  next.final_loss.assign(num_players, 0.0);
  const auto opponents = current.networks.policies();

  std::vector<std::size_t> order = cfg.player_order;
  if (order.empty()) {
    for (std::size_t n = 0; n < num_players; ++n) order.push_back(n);
  }
  if (order.size() != num_players) throw std::invalid_argument("player_order: must list every player once");

  auto train = [&](std::size_t n) {
    const bsde::StageProblem pb = stage_problem(game, cfg, n, opponents, value_scales.at(n));
    const bsde::TrainOptions opt = train_options(cfg, derive_seed(cfg.seed, next_stage, n, 2));
    PlayerNetworks& mine = next.networks[n];
    const bsde::TrainDiagnostics d = bsde::train_best_response(pb, mine.value, mine.policy, opt);
    next.final_loss[n] = d.loss.empty() ? 0.0 : d.loss.back();
  };

  if (cfg.threads <= 1 || num_players == 1) {
    for (std::size_t n : order) train(n);
  } else {
    std::vector<std::exception_ptr> errors(num_players);
    std::vector<std::thread> pool;
    std::atomic<std::size_t> cursor{0};
    const unsigned workers = std::min<unsigned>(cfg.threads, static_cast<unsigned>(num_players));
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = cursor++; i < num_players; i = cursor++) {
          try {
            train(order[i]);
          } catch (...) {
            errors[order[i]] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  next.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return next;
}

using StageCallback = std::function<void(const StageResult&)>;

/// Runs fictitious-play stages until cfg.stages is reached or the metric
/// falls below cfg.tolerance. `resume` continues from a saved stage.
inline DfpRun run_enhanced_dfp(const Game& game, const SolverConfig& cfg, const StageCallback& on_stage = {},
                               std::optional<StageResult> resume = std::nullopt) {
  game.params.validate();
  DfpRun run;  // run.final stays an empty placeholder until the end
  const long baseline = NetworkSet::live() - (resume ? 1 : 0);

  ReferenceSample ref;
  StageResult current;
  {
    NetworkSet stage0 = initial_networks(game.params, game.x0, game.grid, cfg);
    ref = reference_sample(game.params, game.x0, game.grid, stage0, cfg.probe_paths, cfg.probe_states,
                           derive_seed(cfg.seed, 0, 0, 3));
    if (resume) {
      current = std::move(*resume);
      resume.reset();
    } else {
      current.networks = std::move(stage0);
    }
  }
  run.peak_network_sets = NetworkSet::live() - baseline;

  while (current.stage < cfg.stages) {
    StageResult next = run_stage(game, cfg, current, ref.value_scales);
    run.peak_network_sets = std::max(run.peak_network_sets, NetworkSet::live() - baseline);
    next.metric = convergence_metric(current.networks, next.networks, ref.probes);
    run.history.push_back({next.stage, next.metric, next.wall_seconds, next.final_loss});
    if (on_stage) on_stage(next);
    current = std::move(next);
    if (current.metric < cfg.tolerance) {
      run.converged = true;
      break;
    }
  }
  run.final = std::move(current);
  return run;
}

// Checkpoint file (one per stage per player), little-endian host order:
//   "EPGCKPT\0" | u32 version | u32 stage | u32 player | u32 players
//   | f64 metric | f64 final loss
//   | value network | policy network | u64 FNV-1a of all preceding bytes
inline constexpr char kCheckpointMagic[8] = {'E', 'P', 'G', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CorruptCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedCheckpointVersion : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::filesystem::path player_file(const std::filesystem::path& stage_dir, std::size_t player) {
  return stage_dir / ("player_" + std::to_string(player) + ".ckpt");
}

inline void save_checkpoint(const StageResult& r, const std::filesystem::path& stage_dir) {
  std::filesystem::create_directories(stage_dir);
  for (std::size_t n = 0; n < r.networks.size(); ++n) {
    std::ostringstream os(std::ios::binary);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    nn::detail::write_pod(os, kCheckpointVersion);
    nn::detail::write_pod(os, static_cast<std::uint32_t>(r.stage));
    nn::detail::write_pod(os, static_cast<std::uint32_t>(n));
    nn::detail::write_pod(os, static_cast<std::uint32_t>(r.networks.size()));
    nn::detail::write_pod(os, r.metric);
    nn::detail::write_pod(os, n < r.final_loss.size() ? r.final_loss[n] : 0.0);
    nn::write_mlp(os, r.networks[n].value);
    nn::write_mlp(os, r.networks[n].policy);
    const std::string body = os.str();
    const std::uint64_t sum = fnv1a(body);
    std::ofstream f(player_file(stage_dir, n), std::ios::binary | std::ios::trunc);
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    f.write(reinterpret_cast<const char*>(&sum), sizeof(sum));
    if (!f) throw std::runtime_error("save_checkpoint: cannot write " + player_file(stage_dir, n).string());
  }
}

inline StageResult load_checkpoint(const std::filesystem::path& stage_dir) {
  StageResult r;
  std::vector<PlayerNetworks> players;
  std::size_t expected = 1;
  for (std::size_t n = 0; n < expected; ++n) {
    const auto path = player_file(stage_dir, n);
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: missing " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(kCheckpointMagic) + sizeof(std::uint64_t)) {
      throw CorruptCheckpoint("corrupt checkpoint " + path.string() + ": truncated");
    }
    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - sizeof(stored), sizeof(stored));
    const std::string body = bytes.substr(0, bytes.size() - sizeof(stored));
    if (std::memcmp(body.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
      throw CorruptCheckpoint("corrupt checkpoint " + path.string() + ": bad magic");
    }
    std::istringstream is(body, std::ios::binary);
    is.ignore(sizeof(kCheckpointMagic));
    try {
      const auto version = nn::detail::read_pod<std::uint32_t>(is, "version");
      if (version != kCheckpointVersion) {
        throw UnsupportedCheckpointVersion("checkpoint " + path.string() + ": version " +
                                           std::to_string(version) + " unsupported (expected " +
                                           std::to_string(kCheckpointVersion) + ")");
      }
      if (fnv1a(body) != stored) throw CorruptCheckpoint("corrupt checkpoint " + path.string() + ": checksum");
      const auto stage = nn::detail::read_pod<std::uint32_t>(is, "stage");
      const auto player = nn::detail::read_pod<std::uint32_t>(is, "player");
      const auto count = nn::detail::read_pod<std::uint32_t>(is, "player count");
      if (player != n || count == 0) throw CorruptCheckpoint("corrupt checkpoint " + path.string() + ": header");
      if (n == 0) {
        expected = count;
        r.stage = stage;
      } else if (count != expected || stage != r.stage) {
        throw CorruptCheckpoint("checkpoint " + path.string() + ": inconsistent stage directory");
      }
      const double metric = nn::detail::read_pod<double>(is, "metric");
      const double loss = nn::detail::read_pod<double>(is, "loss");
      if (n == 0) r.metric = metric;
      r.final_loss.push_back(loss);
      PlayerNetworks pn;
      pn.value = nn::read_mlp(is);
      pn.policy = nn::read_mlp(is);
      if (is.peek() != std::char_traits<char>::eof()) {
        throw CorruptCheckpoint("corrupt checkpoint " + path.string() + ": trailing bytes");
      }
      players.push_back(std::move(pn));
    } catch (const CorruptCheckpoint&) {
      throw;
    } catch (const UnsupportedCheckpointVersion&) {
      throw;
    } catch (const std::runtime_error& e) {
      throw CorruptCheckpoint("corrupt checkpoint " + path.string() + ": " + e.what());
    }
  }
  r.networks = NetworkSet(std::move(players));
  return r;
}

}  // namespace epigame::dfp
