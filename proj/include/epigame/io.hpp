#pragma once

// CSV and manifest output. Every file starts with a provenance comment line
// carrying the schema version, config hash and master seed.

#include "epigame/dfp.hpp"
#include "epigame/sde.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace epigame::io {

inline constexpr int kCsvSchemaVersion = 1;
inline constexpr int kManifestSchemaVersion = 1;

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
};

inline void write_provenance(std::ostream& os, const Provenance& prov, const std::string& kind) {
  os << "# epigame " << kind << " schema=" << kCsvSchemaVersion << " config_hash=" << prov.config_hash
     << " seed=" << prov.seed << "\n";
}

/// Quantities tracked per region and time point, in CSV column order.
inline const std::array<std::string, 6>& summary_quantities() {
  static const std::array<std::string, 6> names{"S", "E", "I", "R", "ell", "h"};
  return names;
}

/// Value of quantity q (index into summary_quantities) for one path at step k.
/// The control at the final time repeats the last applied control.
inline double path_quantity(const PathBatch& b, std::size_t path, std::size_t q, std::size_t region,
                            std::size_t k) {
  const auto n = static_cast<Eigen::Index>(b.num_regions);
  const auto r = static_cast<Eigen::Index>(region);
  if (q < 4) return b.states[path](static_cast<Eigen::Index>(q) * n + r, static_cast<Eigen::Index>(k));
  const auto kc = static_cast<Eigen::Index>(std::min(k, b.grid.num_steps - 1));
  return b.controls[path]((static_cast<Eigen::Index>(q) - 4) * n + r, kc);
}

/// Ensemble mean and sample standard deviation of every quantity;
/// mean[q] and sd[q] are num_regions x (num_steps + 1).
struct EnsembleSummary {
  TimeGrid grid;
  std::size_t num_regions = 0;
  std::size_t num_paths = 0;
  std::array<Eigen::MatrixXd, 6> mean;
  std::array<Eigen::MatrixXd, 6> sd;

  double lo(std::size_t q, std::size_t r, std::size_t k) const { return band(q, r, k, -1.96); }
  double hi(std::size_t q, std::size_t r, std::size_t k) const { return band(q, r, k, 1.96); }

 private:
  double band(std::size_t q, std::size_t r, std::size_t k, double z) const {
    const auto i = static_cast<Eigen::Index>(r);
    const auto j = static_cast<Eigen::Index>(k);
    return mean[q](i, j) + z * sd[q](i, j);
  }
};

inline EnsembleSummary summarize(const PathBatch& b) {
  if (b.num_paths() == 0) throw std::invalid_argument("summarize: empty batch");
  EnsembleSummary s;
  s.grid = b.grid;
  s.num_regions = b.num_regions;
  s.num_paths = b.num_paths();
  const auto n = static_cast<Eigen::Index>(b.num_regions);
  const auto cols = static_cast<Eigen::Index>(b.grid.num_steps + 1);
  const double paths = static_cast<double>(b.num_paths());
  for (std::size_t q = 0; q < 6; ++q) {
    auto value = [&](std::size_t i, Eigen::Index r, Eigen::Index k) {
      return path_quantity(b, i, q, static_cast<std::size_t>(r), static_cast<std::size_t>(k));
    };
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, cols);
    for (std::size_t i = 0; i < b.num_paths(); ++i) {
      for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index k = 0; k < cols; ++k) sum(r, k) += value(i, r, k);
      }
    }
    s.mean[q] = sum / paths;
    Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(n, cols);
    for (std::size_t i = 0; i < b.num_paths(); ++i) {
      for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index k = 0; k < cols; ++k) {
          const double d = value(i, r, k) - s.mean[q](r, k);
          sum_sq(r, k) += d * d;
        }
      }
    }
    s.sd[q] = b.num_paths() > 1 ? Eigen::MatrixXd((sum_sq / (paths - 1.0)).cwiseSqrt())
                                : Eigen::MatrixXd::Zero(n, cols);
  }
  return s;
}

inline std::vector<std::string> default_region_names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t r = 0; r < n; ++r) out.push_back("region" + std::to_string(r));
  return out;
}

/// One row per path, time point and region: path,t,region,S,E,I,R,ell,h.
inline void write_paths_csv(std::ostream& os, const PathBatch& b, const std::vector<std::string>& regions,
                            const Provenance& prov) {
  if (regions.size() != b.num_regions) throw std::invalid_argument("write_paths_csv: one name per region");
  write_provenance(os, prov, "paths");
  os << "path,t,region,S,E,I,R,ell,h\n" << std::setprecision(17);
  for (std::size_t i = 0; i < b.num_paths(); ++i) {
    for (std::size_t k = 0; k <= b.grid.num_steps; ++k) {
      for (std::size_t r = 0; r < b.num_regions; ++r) {
        os << i << ',' << b.grid.time(k) << ',' << regions[r];
        for (std::size_t q = 0; q < 6; ++q) os << ',' << path_quantity(b, i, q, r, k);
        os << '\n';
      }
    }
  }
}

/// Ensemble summary with mean and 95% normal-approximation bands
/// (mean +- 1.96 sd across paths): t,region,mean_S,lo_S,hi_S,...,mean_h,lo_h,hi_h.
inline void write_summary_csv(std::ostream& os, const EnsembleSummary& s, const std::vector<std::string>& regions,
                              const Provenance& prov) {
  if (regions.size() != s.num_regions) throw std::invalid_argument("write_summary_csv: one name per region");
  write_provenance(os, prov, "summary");
  os << "t,region";
  for (const auto& q : summary_quantities()) os << ",mean_" << q << ",lo_" << q << ",hi_" << q;
  os << '\n' << std::setprecision(17);
  for (std::size_t r = 0; r < s.num_regions; ++r) {
    for (std::size_t k = 0; k <= s.grid.num_steps; ++k) {
      os << s.grid.time(k) << ',' << regions[r];
      for (std::size_t q = 0; q < 6; ++q) {
        os << ',' << s.mean[q](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) << ','
           << s.lo(q, r, k) << ',' << s.hi(q, r, k);
      }
      os << '\n';
    }
  }
}

/// Convergence metric per stage: stage,metric,final_loss_<player>...
inline void write_metric_csv(std::ostream& os, const std::vector<dfp::StageSummary>& history,
                             std::size_t players, const Provenance& prov) {
  write_provenance(os, prov, "metric");
  os << "stage,metric";
  for (std::size_t n = 0; n < players; ++n) os << ",final_loss_" << n;
  os << '\n' << std::setprecision(17);
  for (const auto& h : history) {
    os << h.stage << ',' << h.metric;
    for (std::size_t n = 0; n < players; ++n) os << ',' << (n < h.final_loss.size() ? h.final_loss[n] : 0.0);
    os << '\n';
  }
}

/// Wall-clock per stage, kept apart from the reproducible artifacts.
inline void write_timing_csv(std::ostream& os, const std::vector<dfp::StageSummary>& history,
                             const Provenance& prov) {
  write_provenance(os, prov, "timing");
  os << "stage,wall_seconds\n" << std::setprecision(17);
  for (const auto& h : history) os << h.stage << ',' << h.wall_seconds << '\n';
}

inline std::string stage_dir_name(std::size_t stage) {
  std::ostringstream os;
  os << "stage_" << std::setw(3) << std::setfill('0') << stage;
  return os.str();
}

/// Run manifest: seeds, config hash, resolved config and metric history.
inline nlohmann::json manifest(const nlohmann::json& resolved_config, const Provenance& prov,
                               const dfp::SolverConfig& solver, std::size_t players,
                               const std::vector<dfp::StageSummary>& history, bool converged) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& h : history) {
    std::vector<std::uint64_t> train_seeds;
    for (std::size_t n = 0; n < players; ++n) train_seeds.push_back(dfp::derive_seed(solver.seed, h.stage, n, 2));
    stages.push_back({{"stage", h.stage},
                      {"metric", h.metric},
                      {"final_loss", h.final_loss},
                      {"checkpoint", stage_dir_name(h.stage)},
                      {"train_seeds", train_seeds}});
  }
  std::vector<std::uint64_t> init_seeds;
  for (std::size_t n = 0; n < players; ++n) init_seeds.push_back(dfp::derive_seed(solver.seed, 0, n, 1));
  return {{"schema_version", kManifestSchemaVersion},
          {"config_hash", prov.config_hash},
          {"seed", prov.seed},
          {"init_seeds", init_seeds},
          {"probe_seed", dfp::derive_seed(solver.seed, 0, 0, 3)},
          {"normalization_seed", dfp::derive_seed(solver.seed, 0, 0, 4)},
          {"stages", stages},
          {"converged", converged},
          {"config", resolved_config}};
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace epigame::io
