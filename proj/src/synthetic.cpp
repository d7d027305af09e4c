#include "rulmdp/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "rulmdp/errors.hpp"
#include "rulmdp/rng.hpp"

namespace rulmdp {

std::vector<UnitSeries> synthetic_fleet(const SyntheticFleetConfig& c) {
  if (c.units == 0) throw ValidationError("synthetic fleet needs at least one unit");
  if (c.min_life < 2 || c.max_life < c.min_life) throw ValidationError("synthetic fleet life range is invalid");
  if (c.informative_sensors > kSensors) throw ValidationError("more informative sensors than sensors");
  Rng root(c.seed);
  // Sensor response: baseline + gain * degradation, degradation = 1 - rul/cap.
  // The sensor structure is shared across the fleet (one engine model).
  Rng design = Rng(c.design_seed).split("design");
  std::array<double, kSensors> baseline{}, gain{};
  for (std::size_t s = 0; s < kSensors; ++s) {
    baseline[s] = design.uniform(-5.0, 5.0) + c.baseline_shift;
    const double mag = design.uniform(0.5, 2.0) * c.gain_scale;
    gain[s] = s < c.informative_sensors ? (design.uniform() < 0.5 ? -mag : mag) : 0.0;
  }
  // The last two sensors are exactly constant, the rest of the uninformative
  // ones carry pure noise.
  const std::size_t constant_from = kSensors - 2;

  std::vector<UnitSeries> units;
  Rng lives = root.split("lives");
  for (std::size_t u = 0; u < c.units; ++u) {
    Rng noise = root.split(1000 + u);
    UnitSeries series;
    series.unit_id = static_cast<std::uint32_t>(u + 1);
    series.failure_cycle =
        c.min_life + static_cast<std::uint32_t>(lives.uniform_int(c.max_life - c.min_life + 1));
    for (std::uint32_t t = 1; t <= series.failure_cycle; ++t) {
      CycleRecord r;
      r.unit_id = series.unit_id;
      r.cycle = t;
      r.op_settings = {0.001 * noise.normal(), 0.0003 * noise.normal(), 100.0};
      const double degradation = 1.0 - piecewise_rul(series.failure_cycle, t, c.rul_cap) / c.rul_cap;
      for (std::size_t s = 0; s < kSensors; ++s) {
        if (s >= constant_from) {
          r.sensors[s] = baseline[s];
        } else if (s < c.informative_sensors) {
          r.sensors[s] = baseline[s] + gain[s] * (degradation + c.noise_frac * noise.normal());
        } else {
          r.sensors[s] = baseline[s] + 0.5 * noise.normal();
        }
      }
      series.records.push_back(r);
    }
    units.push_back(std::move(series));
  }
  return units;
}

}  // namespace rulmdp
