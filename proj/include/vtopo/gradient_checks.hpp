#ifndef VTOPO_GRADIENT_CHECKS_HPP
#define VTOPO_GRADIENT_CHECKS_HPP

// Finite-difference verification of the analytical sensitivities, shared by
// `vtopo check-gradients` and the acceptance suite.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "oracle.hpp"
#include "pipeline.hpp"
#include "voronoi_field.hpp"

namespace vtopo::checks {

struct CheckResult
{
  double max_relative_error = 0.0;
  std::size_t components = 0;  // compared components
  bool passed = false;
};

/// Random anisotropic sites in the unit square.
inline SiteSet<2> random_sites(std::mt19937_64& rng, int count, double diag_lo, double diag_hi, double off_max)
{
  std::uniform_real_distribution<double> pos(0.0, 1.0), diag(diag_lo, diag_hi), off(-off_max, off_max);
  SiteSet<2> s;
  for (int m = 0; m < count; ++m) {
    s.positions.push_back({pos(rng), pos(rng)});
    SymMatrix<2> D;
    D(0, 0) = diag(rng);
    D(1, 1) = diag(rng);
    D(1, 0) = off(rng);
    s.metric_factors.push_back(D);
  }
  return s;
}

/// d rho / d x_n and d rho / d D_n (lower-triangle parameters) against central
/// differences of the long double reference density, over `configs` random 5-site configurations and
/// both eps_s = 0 and eps_s = 1e-7.
inline CheckResult check_density_gradients(std::uint64_t seed, int configs = 20, int points_per_config = 20,
                                           double step = 1e-6, double threshold = 1e-4, double min_magnitude = 1e-8)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  CheckResult res{0.0, 0, true};
  constexpr int n_sites = 5;
  std::vector<int> ids(n_sites);
  std::iota(ids.begin(), ids.end(), 0);

  for (int c = 0; c < configs; ++c) {
    FieldConfig cfg;
    cfg.sharpness = 10.0;
    cfg.boundary_weight = (c % 2 == 0) ? 0.0 : 1e-7;
    cfg.neighbor_count = n_sites;
    const SiteSet<2> sites = random_sites(rng, n_sites, 5.0, 40.0, 10.0);
    const DesignLayout layout{sites.size()};
    const std::vector<double> p0 = layout.flatten(sites);

    for (int k = 0; k < points_per_config; ++k) {
      const Vec<2> x{unit(rng), unit(rng)};
      const auto row = density_gradients_at<2>(x, sites, cfg, ids);
      std::vector<double> analytical(layout.size(), 0.0);
      for (const auto& e : row.entries) {
        const auto m = static_cast<std::size_t>(e.site);
        for (int a = 0; a < 2; ++a) analytical[layout.position_offset(m) + a] = e.d_rho_d_x[a];
        const auto dD = lower_triangle_gradient<2>(e.d_rho_d_D);
        for (int a = 0; a < DesignLayout::metric_dofs; ++a) analytical[layout.metric_offset(m) + a] = dD[a];
      }
      auto f = [&](std::span<const double> p) {
        return oracle::extended_density_at(x, layout.unflatten(p), cfg);
      };
      const auto rep = oracle::fd_gradient_check(f, p0, analytical, step, threshold, min_magnitude);
      res.max_relative_error = std::max(res.max_relative_error, rep.max_relative_error);
      res.components += rep.checked();
    }
  }
  res.passed = res.max_relative_error < threshold && res.components > 0;
  return res;
}

/// The frozen end-to-end problem: 16x8 cantilever, 4 anisotropic sites,
/// beta = 10, gamma = 1, all elements design.
inline Problem frozen_gradient_problem()
{
  Problem p;
  p.grid = {16, 8};
  p.mask = DomainMask::all_design(p.grid);
  p.bcs.supports.push_back({{0.0, 0.0, 0.0, 1.0}, true, true});
  p.bcs.loads.push_back({{1.0, 0.5, 1.0, 0.5}, {0.0, -1.0}});
  p.field.sharpness = 10.0;
  p.field.neighbor_count = 4;
  p.projection.steepness = 1.0;
  p.solver.tolerance = 1e-12;
  p.solver.max_iterations = 100000;
  return p;
}

inline SiteSet<2> frozen_gradient_sites()
{
  SiteSet<2> s;
  s.positions = {{0.21, 0.13}, {0.68, 0.11}, {0.37, 0.39}, {0.83, 0.36}};
  s.metric_factors = {SymMatrix<2>({14.0, 2.0, 9.0}), SymMatrix<2>({10.0, -1.5, 16.0}),
                      SymMatrix<2>({12.0, 0.5, 11.0}), SymMatrix<2>({8.0, 1.0, 13.0})};
  return s;
}

struct EndToEndResult
{
  CheckResult compliance;
  CheckResult volume;
};

/// Full compliance and volume gradients with respect to every design variable
/// against central differences of rasterize -> project -> solve.
inline EndToEndResult check_end_to_end(double step = 1e-6, double compliance_threshold = 1e-3,
                                       double volume_threshold = 1e-5, double min_magnitude = 1e-6)
{
  const Problem problem = frozen_gradient_problem();
  const SiteSet<2> sites = frozen_gradient_sites();
  const DesignLayout layout{sites.size()};
  const std::vector<double> p0 = layout.flatten(sites);
  const ProjectionConfig proj = problem.projection;

  const Evaluation ev = evaluate_design(problem, sites, proj);

  auto compliance = [&](std::span<const double> p) {
    return evaluate_design(problem, layout.unflatten(p), proj).state.compliance;
  };
  auto volume = [&](std::span<const double> p) {
    const auto rho = render_design(problem, layout.unflatten(p), proj);
    return volume_fraction(rho, problem.mask, problem.volume);
  };
  const auto rc = oracle::fd_gradient_check(compliance, p0, ev.gradients.compliance, step, compliance_threshold,
                                            min_magnitude);
  const auto rv = oracle::fd_gradient_check(volume, p0, ev.gradients.volume, step, volume_threshold, min_magnitude);
  EndToEndResult out;
  out.compliance = {rc.max_relative_error, rc.checked(), rc.passed && rc.checked() > 0};
  out.volume = {rv.max_relative_error, rv.checked(), rv.passed && rv.checked() > 0};
  return out;
}

} // namespace vtopo::checks

#endif // VTOPO_GRADIENT_CHECKS_HPP
