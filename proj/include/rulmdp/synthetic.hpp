#pragma once

#include <cstdint>
#include <vector>

#include "rulmdp/ingest.hpp"

namespace rulmdp {

// Seeded run-to-failure fleet whose informative sensors move linearly with the
// capped RUL, with Gaussian noise of `noise_frac * rul_cap` in RUL units.
struct SyntheticFleetConfig {
  std::size_t units = 20;
  std::uint32_t min_life = 150;
  std::uint32_t max_life = 300;
  double rul_cap = kDefaultRulCap;
  double noise_frac = 0.05;
  std::size_t informative_sensors = 12;
  // Shifts every sensor baseline; distinct values emulate heterogeneous machines.
  double baseline_shift = 0.0;
  // Scales sensor sensitivity to degradation.
  double gain_scale = 1.0;
  // Seeds the shared sensor design; `seed` draws unit lives and noise, so
  // fleets with equal design_seed come from the same engine model.
  std::uint64_t design_seed = 42;
  std::uint64_t seed = 42;
};

std::vector<UnitSeries> synthetic_fleet(const SyntheticFleetConfig& config);

}  // namespace rulmdp
