#pragma once

#include "epigame/params.hpp"

#include <string>
#include <vector>

namespace epigame {

/// NY / NJ / PA, 180 days from mid-March 2020. Lockdown is the only active
/// control: vaccination is unavailable and the recovery boost is off.
inline GameParams ny_nj_pa_params() {
  GameParams p;
  p.num_regions = 3;
  p.contact_matrix = build_contact_matrix(0.17, 0.9, 3);
  p.latency_rate = 1.0 / 5;
  p.base_recovery_rate = 1.0 / 13;
  p.death_rate = 0.0065 / 13;
  p.policy_effectiveness = 0.99;
  p.noise_s = Eigen::VectorXd::Constant(3, 1e-3);
  p.noise_e = Eigen::VectorXd::Constant(3, 6e-4);
  p.populations = Eigen::Vector3d(19.54e6, 8.91e6, 12.81e6);
  p.productivity = 172.6;
  p.death_weight = 100.0;
  p.value_of_life = 1.96e6;
  p.hospitalization_rate = 228.7e-5;
  p.inpatient_cost = 73300.0 / 13;
  p.health_grant_coeff = 1e6;
  p.discount_rate = 0.0;
  p.horizon = 180.0;
  p.vaccine_threshold = 0.5;
  p.vaccine_max_rate = 0.0;
  p.recovery_boost = 0.0;
  return p;
}

/// Starting compartments for the case study (no published values; chosen so
/// that NY leads NJ, which leads PA).
inline GameState ny_nj_pa_initial_state() {
  GameState s(3);
  const double exposed[3] = {2e-3, 1e-3, 5e-4};
  const double infectious[3] = {1e-3, 5e-4, 2.5e-4};
  for (std::size_t r = 0; r < 3; ++r) {
    s.E(r) = exposed[r];
    s.I(r) = infectious[r];
    s.R(r) = 0.0;
    s.S(r) = 1.0 - exposed[r] - infectious[r];
  }
  return s;
}

inline std::vector<std::string> ny_nj_pa_region_names() { return {"NY", "NJ", "PA"}; }

}  // namespace epigame
