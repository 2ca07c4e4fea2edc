#ifndef VTOPO_PROJECTION_HPP
#define VTOPO_PROJECTION_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "types.hpp"

namespace vtopo {

/// Relaxed Heaviside (tanh) projection with steepness continuation.
struct ProjectionConfig
{
  double threshold = 0.5;   // eta
  double steepness = 1.0;   // gamma
  int doubling_period = 50;
  double steepness_cap = 64.0;

  void validate() const
  {
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("ProjectionConfig: threshold must lie in (0,1)");
    if (!(steepness >= 1.0)) throw std::invalid_argument("ProjectionConfig: steepness must be >= 1");
    if (doubling_period < 1) throw std::invalid_argument("ProjectionConfig: doubling_period must be >= 1");
    if (!(steepness_cap >= 1.0)) throw std::invalid_argument("ProjectionConfig: steepness_cap must be >= 1");
  }
};

inline double heaviside(double rho, const ProjectionConfig& cfg) noexcept
{
  const double g = cfg.steepness, eta = cfg.threshold;
  const double a = std::tanh(g * eta);
  return (a + std::tanh(g * (rho - eta))) / (a + std::tanh(g * (1.0 - eta)));
}

inline double heaviside_derivative(double rho, const ProjectionConfig& cfg) noexcept
{
  const double g = cfg.steepness, eta = cfg.threshold;
  const double t = std::tanh(g * (rho - eta));
  return g * (1.0 - t * t) / (std::tanh(g * eta) + std::tanh(g * (1.0 - eta)));
}

/// gamma = min(cap, 2^floor(iteration / period)).
inline ProjectionConfig advance_steepness(ProjectionConfig cfg, int iteration)
{
  if (iteration < 0) throw std::invalid_argument("advance_steepness: negative iteration");
  const int doublings = iteration / cfg.doubling_period;
  // 2^doublings overflows past ~1023 doublings; the cap binds long before that
  cfg.steepness = doublings >= 1000 ? cfg.steepness_cap : std::min(cfg.steepness_cap, std::ldexp(1.0, doublings));
  return cfg;
}

/// Final plateau value of the continuation schedule.
inline bool steepness_at_plateau(const ProjectionConfig& cfg, int iteration, int max_iterations)
{
  const double now = advance_steepness(cfg, iteration).steepness;
  const double last = advance_steepness(cfg, std::max(iteration, max_iterations - 1)).steepness;
  return now >= last;
}

inline ProjectedDensityGrid project(const DensityGrid& rho, const ProjectionConfig& cfg)
{
  ProjectedDensityGrid out(rho.grid);
  for (std::size_t e = 0; e < rho.values.size(); ++e) out.values[e] = heaviside(rho.values[e], cfg);
  return out;
}

struct VolumeOptions
{
  bool count_passive_solid = false;
};

/// Material fraction over the volume budget. Design elements always count;
/// passive-solid elements count as full material only when enabled;
/// passive-void elements never count.
inline double volume_fraction(const ProjectedDensityGrid& grid, const DomainMask& mask, VolumeOptions opt = {})
{
  if (!(grid.grid == mask.grid)) throw std::invalid_argument("volume_fraction: grid and mask resolutions differ");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t e = 0; e < grid.values.size(); ++e) {
    switch (mask.states[e]) {
    case ElementState::design:
      sum += grid.values[e];
      ++n;
      break;
    case ElementState::passive_solid:
      if (opt.count_passive_solid) {
        sum += 1.0;
        ++n;
      }
      break;
    case ElementState::passive_void:
      break;
    }
  }
  if (n == 0) throw std::invalid_argument("volume_fraction: no active elements");
  return sum / static_cast<double>(n);
}

/// Number of elements in the volume budget, i.e. the denominator of volume_fraction.
inline std::size_t volume_budget_elements(const DomainMask& mask, VolumeOptions opt = {})
{
  std::size_t n = mask.count(ElementState::design);
  if (opt.count_passive_solid) n += mask.count(ElementState::passive_solid);
  return n;
}

} // namespace vtopo

#endif // VTOPO_PROJECTION_HPP
