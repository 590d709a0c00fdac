// epigame: solve, simulate and evaluate the N-region stochastic SEIR game.

#include "epigame/classic.hpp"
#include "epigame/config.hpp"
#include "epigame/evaluate.hpp"
#include "epigame/io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace epigame;

namespace {

constexpr int kUsageError = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::string config_path;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> paths;
  std::optional<std::size_t> stages;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_stages) {
  cmd->add_option("--config", f.config_path, "JSON run configuration (merged over --preset)");
  cmd->add_option("--preset", f.preset, "named preset: ny-nj-pa");
  cmd->add_option("--seed", f.seed, "master seed (overrides the config)");
  cmd->add_option("--out", f.out, "output directory (overrides the config)");
  cmd->add_option("--paths", f.paths, "Monte Carlo paths (overrides simulation.paths)");
  if (with_stages) cmd->add_option("--stages", f.stages, "fictitious-play stages (overrides solver.stages)");
}

RunConfig load_config(const CommonFlags& f) {
  if (f.config_path.empty() && f.preset.empty()) throw ConfigError("preset", "give --preset or --config");
  json doc = f.config_path.empty() ? json::object() : read_json_file(f.config_path);
  if (!doc.is_object()) throw ConfigError("<root>", "expected an object");
  if (f.seed) doc["seed"] = *f.seed;
  if (!f.out.empty()) doc["output_dir"] = f.out;
  if (f.paths) doc["simulation"]["paths"] = *f.paths;
  if (f.stages) doc["solver"]["stages"] = *f.stages;
  return resolve_config(f.preset, doc);
}

io::Provenance provenance(const RunConfig& cfg) { return {cfg.hash(), cfg.seed}; }

std::optional<fs::path> latest_stage_dir(const fs::path& run_dir) {
  std::optional<fs::path> best;
  if (!fs::is_directory(run_dir)) return best;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && name.rfind("stage_", 0) == 0 && (!best || name > best->filename().string())) {
      best = entry.path();
    }
  }
  return best;
}

/// Accepts a stage directory or a run directory (its latest stage).
fs::path resolve_checkpoint(const fs::path& path) {
  if (fs::exists(dfp::player_file(path, 0))) return path;
  if (auto latest = latest_stage_dir(path)) return *latest;
  throw UsageError("no checkpoint found under " + path.string());
}

dfp::NetworkSet load_networks(const fs::path& path, const RunConfig& cfg) {
  dfp::StageResult r = dfp::load_checkpoint(resolve_checkpoint(path));
  try {
    dfp::check_compatible(r.networks, cfg.params);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("checkpoint/config mismatch: ") + e.what());
  }
  return std::move(r.networks);
}

void write_file(const fs::path& path, const std::string& text) {
  io::write_text_file(path, text);
  std::cout << "wrote " << path.string() << "\n";
}

int cmd_solve(const CommonFlags& f, bool resume) {
  const RunConfig cfg = load_config(f);
  const fs::path out = cfg.output_dir;
  const io::Provenance prov = provenance(cfg);
  fs::create_directories(out);
  write_file(out / "config.json", cfg.resolved.dump(2) + "\n");

  std::vector<dfp::StageSummary> history;
  std::optional<dfp::StageResult> start;
  if (resume) {
    if (auto dir = latest_stage_dir(out)) {
      start = dfp::load_checkpoint(*dir);
      dfp::check_compatible(start->networks, cfg.params);
      const json old = read_json_file(out / "manifest.json");
      if (old.value("config_hash", "") != prov.config_hash) {
        throw UsageError("cannot resume: " + (out / "manifest.json").string() + " was written by another config");
      }
      for (const auto& s : old.at("stages")) {
        if (s.at("stage").get<std::size_t>() > start->stage) break;
        history.push_back({s.at("stage").get<std::size_t>(), s.at("metric").get<double>(), 0.0,
                           s.at("final_loss").get<std::vector<double>>()});
      }
      std::cout << "resuming from " << dir->string() << "\n";
    }
  }

  auto write_records = [&](bool converged) {
    io::write_text_file(out / "manifest.json",
                        io::manifest(cfg.resolved, prov, cfg.solver, cfg.params.num_regions, history, converged)
                                .dump(2) +
                            "\n");
    std::ostringstream metric, timing;
    io::write_metric_csv(metric, history, cfg.params.num_regions, prov);
    io::write_timing_csv(timing, history, prov);
    io::write_text_file(out / "metric.csv", metric.str());
    io::write_text_file(out / "timing.csv", timing.str());
  };

  const dfp::DfpRun run = dfp::run_enhanced_dfp(
      cfg.game(), cfg.solver,
      [&](const dfp::StageResult& r) {
        dfp::save_checkpoint(r, out / io::stage_dir_name(r.stage));
        history.push_back({r.stage, r.metric, r.wall_seconds, r.final_loss});
        write_records(false);
        std::cout << "stage " << r.stage << " metric " << r.metric << " wall " << std::fixed
                  << std::setprecision(1) << r.wall_seconds << "s" << std::defaultfloat << std::setprecision(6)
                  << "\n";
      },
      std::move(start));
  write_records(run.converged);
  std::cout << (run.converged ? "converged" : "stage limit reached") << " after stage " << run.final.stage
            << "; artifacts in " << out.string() << "\n";
  return 0;
}

int write_simulation(const RunConfig& cfg, const std::vector<Policy>& policies, bool write_paths,
                     const fs::path& out) {
  const PathBatch batch = simulate_batch(cfg.x0, policies, cfg.grid, cfg.simulation.paths,
                                         dfp::derive_seed(cfg.seed, 0, 0, 5), cfg.params);
  const io::Provenance prov = provenance(cfg);
  if (write_paths) {
    std::ostringstream os;
    io::write_paths_csv(os, batch, cfg.region_names, prov);
    write_file(out / "paths.csv", os.str());
  }
  std::ostringstream os;
  io::write_summary_csv(os, io::summarize(batch), cfg.region_names, prov);
  write_file(out / "summary.csv", os.str());
  const auto costs = estimate_costs(batch, cfg.params);
  for (std::size_t n = 0; n < costs.size(); ++n) {
    std::cout << cfg.region_names[n] << " cost " << costs[n].mean << " +- " << costs[n].standard_error << "\n";
  }
  return 0;
}

int cmd_simulate(const CommonFlags& f, const std::string& source, const std::string& checkpoint, double ell,
                 double h) {
  const RunConfig cfg = load_config(f);
  std::vector<Policy> policies;
  if (source == "none") {
    policies.assign(cfg.params.num_regions, constant_policy(0.0, 0.0));
  } else if (source == "constant") {
    if (ell < 0.0 || ell > 1.0 || h < 0.0 || h > 1.0) throw UsageError("--ell and --health must lie in [0, 1]");
    policies.assign(cfg.params.num_regions, constant_policy(ell, h));
  } else {
    if (checkpoint.empty()) throw UsageError("--policy checkpoint needs --checkpoint");
    policies = dfp::network_policies(load_networks(checkpoint, cfg), cfg.params.horizon);
  }
  return write_simulation(cfg, policies, true, cfg.output_dir);
}

int cmd_export(const CommonFlags& f, const std::string& checkpoint) {
  const RunConfig cfg = load_config(f);
  const fs::path source = checkpoint.empty() ? cfg.output_dir : fs::path(checkpoint);
  const auto policies = dfp::network_policies(load_networks(source, cfg), cfg.params.horizon);
  return write_simulation(cfg, policies, false, cfg.output_dir / "figure_data");
}

json cost_json(const CostEstimate& c) { return {{"mean", c.mean}, {"standard_error", c.standard_error}}; }

int cmd_evaluate(const CommonFlags& f, const std::string& checkpoint, const std::vector<std::string>& specs) {
  const RunConfig cfg = load_config(f);
  std::vector<evaluate::Deviation> deviations;
  for (const auto& s : specs) deviations.push_back(evaluate::parse_deviation(s));
  if (deviations.size() != 1) {
    throw UsageError("a Nash deviation is unilateral: give exactly one --deviation");
  }
  const fs::path source = checkpoint.empty() ? cfg.output_dir : fs::path(checkpoint);
  const dfp::NetworkSet eq = load_networks(source, cfg);
  if (deviations.front().player >= eq.size()) throw UsageError("--deviation: player index out of range");

  std::optional<dfp::PlayerNetworks> retrained;
  if (deviations.front().kind == evaluate::DeviationKind::retrain) {
    const auto ref = dfp::stage0_reference(cfg.game(), cfg.solver);
    std::cout << "re-training player " << deviations.front().player << " ("
              << cfg.solver.iterations_per_stage << " iterations)\n";
    retrained = evaluate::retrain_best_response(cfg.game(), cfg.solver, eq, deviations.front().player,
                                                ref.value_scales);
  }
  evaluate::EvaluationOptions opt;
  opt.paths = cfg.simulation.paths;
  opt.seed = dfp::derive_seed(cfg.seed, 0, 0, 7);
  const evaluate::NashReport rep =
      evaluate::evaluate_deviation(cfg.game(), eq, deviations, opt, retrained ? &retrained->policy : nullptr);

  json players = json::array();
  for (std::size_t n = 0; n < rep.players.size(); ++n) {
    players.push_back({{"player", n},
                       {"region", cfg.region_names[n]},
                       {"equilibrium", cost_json(rep.players[n].equilibrium)},
                       {"deviation", cost_json(rep.players[n].deviation)}});
  }
  const json report{{"schema_version", io::kManifestSchemaVersion},
                    {"config_hash", cfg.hash()},
                    {"seed", cfg.seed},
                    {"paths", opt.paths},
                    {"deviation", {{"player", rep.deviation.player}, {"kind", to_string(rep.deviation.kind)}}},
                    {"players", players},
                    {"nash_residual", rep.residual},
                    {"nash_residual_paired_se", rep.residual_paired_se}};
  write_file(cfg.output_dir / "evaluation.json", report.dump(2) + "\n");
  const auto& me = rep.deviator();
  std::cout << "player " << rep.deviation.player << " (" << cfg.region_names[rep.deviation.player]
            << "): J(eq) " << me.equilibrium.mean << " +- " << me.equilibrium.standard_error << ", J(dev) "
            << me.deviation.mean << " +- " << me.deviation.standard_error << ", residual " << rep.residual
            << " (paired se " << rep.residual_paired_se << ")\n";
  return 0;
}

int cmd_ode_demo(const classic::SeirRates& k, double e0, double i0, double horizon, double step,
                 const std::string& out) {
  if (e0 < 0.0 || i0 < 0.0 || e0 + i0 > 1.0) throw UsageError("--e0 and --i0 must be >= 0 with sum <= 1");
  classic::SeirState x0{1.0 - e0 - i0, e0, i0, 0.0};
  std::ostringstream os;
  os << "t,S,E,I,R\n" << std::setprecision(17);
  for (const auto& s : classic::integrate_seir(x0, k, horizon, step)) {
    os << s.t << ',' << s.state.S << ',' << s.state.E << ',' << s.state.I << ',' << s.state.R << '\n';
  }
  if (out.empty()) {
    std::cout << os.str();
  } else {
    write_file(out, os.str());
  }
  return 0;
}

int cmd_sis_demo(const classic::SisCounts& c0, double dt, std::size_t steps, std::uint64_t seed,
                 const std::string& out) {
  const classic::SisProbabilities p = classic::sis_transition_probabilities(c0, dt);
  std::cerr << std::setprecision(10) << "N=" << c0.population << " n=" << c0.infected << " dt=" << dt
            << ": up " << p.up << ", down " << p.down << ", stay " << p.stay << "\n";
  std::mt19937_64 rng(seed);
  std::ostringstream os;
  os << "t,infected\n" << std::setprecision(17);
  classic::SisCounts c = c0;
  os << 0.0 << ',' << c.infected << '\n';
  for (std::size_t i = 1; i <= steps; ++i) {
    c = classic::sis_step(c, dt, rng);
    os << static_cast<double>(i) * dt << ',' << c.infected << '\n';
  }
  if (out.empty()) {
    std::cout << os.str();
  } else {
    write_file(out, os.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Enhanced deep fictitious play for the N-region stochastic SEIR game"};
  app.require_subcommand(1);

  CommonFlags solve_f, sim_f, eval_f, export_f;
  bool resume = false;
  auto* solve = app.add_subcommand("solve", "train the equilibrium and write checkpoints");
  add_common(solve, solve_f, true);
  solve->add_flag("--resume", resume, "continue from the latest stage in the output directory");

  std::string source = "none", sim_ckpt;
  double ell = 0.0, h = 0.0;
  auto* sim = app.add_subcommand("simulate", "Monte Carlo paths under a policy; writes paths and summary CSV");
  add_common(sim, sim_f, false);
  sim->add_option("--policy", source, "policy source")->check(CLI::IsMember({"checkpoint", "constant", "none"}));
  sim->add_option("--checkpoint", sim_ckpt, "run or stage directory with checkpoints");
  sim->add_option("--ell", ell, "constant lockdown level");
  sim->add_option("--health", h, "constant health effort");

  std::string eval_ckpt;
  std::vector<std::string> deviations;
  auto* eval = app.add_subcommand("evaluate", "Nash residual of one unilateral deviation");
  add_common(eval, eval_f, false);
  eval->add_option("--checkpoint", eval_ckpt, "run or stage directory (default: the output directory)");
  eval->add_option("--deviation", deviations,
                   "PLAYER:equilibrium | PLAYER:constant:ELL:H | PLAYER:scaled:K | PLAYER:retrain")
      ->required();

  std::string export_ckpt;
  auto* exp = app.add_subcommand("export-figure-data", "summary CSV of the trained equilibrium for plotting");
  add_common(exp, export_f, false);
  exp->add_option("--checkpoint", export_ckpt, "run or stage directory (default: the output directory)");

  classic::SeirRates rates;
  double e0 = 0.0, i0 = 1e-3, horizon = 180.0, step = 0.1;
  std::string ode_out;
  auto* ode = app.add_subcommand("ode-demo", "deterministic single-region SEIR by RK4");
  ode->add_option("--beta", rates.beta, "contact rate per day");
  ode->add_option("--gamma", rates.gamma, "latency rate per day");
  ode->add_option("--lambda", rates.lambda, "recovery rate per day");
  ode->add_option("--e0", e0, "initial exposed fraction");
  ode->add_option("--i0", i0, "initial infectious fraction");
  ode->add_option("--horizon-days", horizon, "horizon");
  ode->add_option("--step-days", step, "RK4 step");
  ode->add_option("--out", ode_out, "CSV file (default: stdout)");

  classic::SisCounts sis{50, 100, 0.17, 1.0 / 13};
  double sis_dt = 0.01;
  std::size_t sis_steps = 1000;
  std::uint64_t sis_seed = 1;
  std::string sis_out;
  auto* sisc = app.add_subcommand("sis-demo", "fixed-step stochastic SIS chain");
  sisc->add_option("--population", sis.population, "N");
  sisc->add_option("--infected", sis.infected, "initial infected count n");
  sisc->add_option("--infection-rate", sis.infection_rate, "per day");
  sisc->add_option("--recovery-rate", sis.recovery_rate, "per day");
  sisc->add_option("--dt-days", sis_dt, "step");
  sisc->add_option("--steps", sis_steps, "number of steps");
  sisc->add_option("--seed", sis_seed, "RNG seed");
  sisc->add_option("--out", sis_out, "CSV file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*solve) return cmd_solve(solve_f, resume);
    if (*sim) return cmd_simulate(sim_f, source, sim_ckpt, ell, h);
    if (*eval) return cmd_evaluate(eval_f, eval_ckpt, deviations);
    if (*exp) return cmd_export(export_f, export_ckpt);
    if (*ode) return cmd_ode_demo(rates, e0, i0, horizon, step, ode_out);
    if (*sisc) return cmd_sis_demo(sis, sis_dt, sis_steps, sis_seed, sis_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
