#ifndef VTOPO_PIPELINE_HPP
#define VTOPO_PIPELINE_HPP

// Compliance minimization over Voronoi sites:
// rasterize -> project -> solve -> chain-rule sensitivities -> MMA step.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "elasticity.hpp"
#include "mma.hpp"
#include "neighbor_index.hpp"
#include "projection.hpp"
#include "types.hpp"
#include "voronoi_field.hpp"

namespace vtopo {

struct SiteInit
{
  int coarse_nx = 1;
  int coarse_ny = 1;
  SymMatrix<2> initial_metric = SymMatrix<2>::identity(150.0);
  std::uint64_t seed = 1;
  Region region{0.0, 0.0, 1.0, 1.0};        // fraction of the domain the coarse grid covers
  std::vector<Vec<2>> explicit_positions;   // overrides the coarse grid when nonempty
};

struct DesignBounds
{
  double position_margin = 0.2;  // fraction of the domain extent, per side
  double diagonal_min = 0.0;
  double diagonal_max = 2000.0;
  double off_diagonal_max = 100.0;
};

struct Problem
{
  GridSpec grid;
  DomainMask mask;
  BoundaryConditions bcs;
  MaterialModel material;
  FieldConfig field;
  ProjectionConfig projection;
  double volume_fraction = 0.35;
  SiteInit init;
  int max_iterations = 300;
  double design_tolerance = 1e-4;
  double compliance_tolerance = 1e-3;
  bool optimize_positions = true;
  bool optimize_metrics = true;
  SolverOptions solver;
  MmaSettings mma{.move_limit = 0.02};  // 0.2 of [0, 2000] lets D jump by 400 per step
  VolumeOptions volume;
  DesignBounds bounds;

  void validate() const
  {
    if (grid.nx < 1 || grid.ny < 1) throw std::invalid_argument("Problem: grid resolution must be positive");
    if (!(mask.grid == grid)) throw std::invalid_argument("Problem: mask resolution does not match grid");
    mask.validate();
    material.validate();
    field.validate();
    projection.validate();
    if (!(volume_fraction > 0.0 && volume_fraction < 1.0))
      throw std::invalid_argument("Problem: volume_fraction must lie in (0,1)");
    if (!optimize_positions && !optimize_metrics)
      throw std::invalid_argument("Problem: at least one of optimize_positions / optimize_metrics must be set");
    if (max_iterations < 0) throw std::invalid_argument("Problem: max_iterations must be >= 0");
    if (init.explicit_positions.empty() && (init.coarse_nx < 1 || init.coarse_ny < 1))
      throw std::invalid_argument("Problem: coarse grid dimensions must be positive");
  }
};

struct IterationRecord
{
  int iteration = 0;
  double compliance = 0.0;
  double volume_fraction = 0.0;
  double delta = 0.0;
  double gamma = 1.0;
  double fem_residual = 0.0;
  double t_fem_s = 0.0;
  double t_grad_s = 0.0;
  double t_mma_s = 0.0;
};

using OptHistory = std::vector<IterationRecord>;

//-----------------------------------------------------------------------------
/// One site per coarse cell, uniformly random inside it, all with the initial metric.
inline SiteSet<2> initialize_sites(const Problem& problem)
{
  const SiteInit& in = problem.init;
  SiteSet<2> sites;
  if (!in.explicit_positions.empty()) {
    sites.positions = in.explicit_positions;
  } else {
    if (in.coarse_nx < 1 || in.coarse_ny < 1) throw std::invalid_argument("initialize_sites: empty coarse grid");
    const std::size_t count = static_cast<std::size_t>(in.coarse_nx) * in.coarse_ny;
    if (count > problem.grid.element_count())
      throw std::invalid_argument("initialize_sites: coarse grid has more cells than the simulation grid");
    std::mt19937_64 rng(in.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double W = problem.grid.width(), H = problem.grid.height();
    const double x0 = in.region.x0 * W, y0 = in.region.y0 * H;
    const double cw = (in.region.x1 - in.region.x0) * W / in.coarse_nx;
    const double ch = (in.region.y1 - in.region.y0) * H / in.coarse_ny;
    for (int b = 0; b < in.coarse_ny; ++b)
      for (int a = 0; a < in.coarse_nx; ++a) {
        const double u = unit(rng), v = unit(rng);
        sites.positions.push_back({x0 + (a + u) * cw, y0 + (b + v) * ch});
      }
  }
  sites.metric_factors.assign(sites.positions.size(), in.initial_metric);
  return sites;
}

//-----------------------------------------------------------------------------
/// Flat design layout: [x_0, y_0, x_1, y_1, ...,  D_0 packed, D_1 packed, ...].
struct DesignLayout
{
  static constexpr int position_dofs = 2;
  static constexpr int metric_dofs = SymMatrix<2>::packed_size;

  std::size_t sites = 0;

  std::size_t size() const noexcept { return sites * (position_dofs + metric_dofs); }
  std::size_t position_offset(std::size_t m) const noexcept { return m * position_dofs; }
  std::size_t metric_offset(std::size_t m) const noexcept { return sites * position_dofs + m * metric_dofs; }

  std::vector<double> flatten(const SiteSet<2>& s) const
  {
    std::vector<double> v(size());
    for (std::size_t m = 0; m < sites; ++m) {
      for (int a = 0; a < position_dofs; ++a) v[position_offset(m) + a] = s.positions[m][a];
      for (int a = 0; a < metric_dofs; ++a) v[metric_offset(m) + a] = s.metric_factors[m].packed()[a];
    }
    return v;
  }

  SiteSet<2> unflatten(std::span<const double> v) const
  {
    SiteSet<2> s;
    s.positions.resize(sites);
    s.metric_factors.resize(sites);
    for (std::size_t m = 0; m < sites; ++m) {
      for (int a = 0; a < position_dofs; ++a) s.positions[m][a] = v[position_offset(m) + a];
      for (int a = 0; a < metric_dofs; ++a) s.metric_factors[m].packed()[a] = v[metric_offset(m) + a];
    }
    return s;
  }

  void bounds(const GridSpec& g, const DesignBounds& b, std::vector<double>& lower, std::vector<double>& upper) const
  {
    lower.resize(size());
    upper.resize(size());
    const double ext[2] = {g.width(), g.height()};
    for (std::size_t m = 0; m < sites; ++m) {
      for (int a = 0; a < position_dofs; ++a) {
        lower[position_offset(m) + a] = -b.position_margin * ext[a];
        upper[position_offset(m) + a] = (1.0 + b.position_margin) * ext[a];
      }
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c <= r; ++c) {
          const std::size_t k = metric_offset(m) + SymMatrix<2>::packed_index(r, c);
          lower[k] = r == c ? b.diagonal_min : -b.off_diagonal_max;
          upper[k] = r == c ? b.diagonal_max : b.off_diagonal_max;
        }
    }
  }
};

struct DesignGradients
{
  std::vector<double> compliance;  // dc/d(design), DesignLayout order
  std::vector<double> volume;      // dV/d(design), V the budget fraction
};

/// Chain rule dc/dp = sum_e dc/d rho~_e * d rho~_e/d rho_e * d rho_e/dp, and
/// the same for the volume fraction with dV/d rho~_e = 1 / budget elements.
inline DesignGradients assemble_design_gradients(std::span<const double> dc_drho_tilde, const DensityGrid& rho,
                                                 const ProjectionConfig& proj, const DensityGradients<2>& grads,
                                                 const DomainMask& mask, std::size_t site_count,
                                                 VolumeOptions vol = {})
{
  const std::size_t ne = rho.values.size();
  if (dc_drho_tilde.size() != ne || mask.states.size() != ne || grads.offsets.size() != ne + 1)
    throw std::invalid_argument("assemble_design_gradients: inconsistent grid sizes");
  const DesignLayout layout{site_count};
  DesignGradients out{std::vector<double>(layout.size(), 0.0), std::vector<double>(layout.size(), 0.0)};
  const double dv_drho_tilde = 1.0 / static_cast<double>(volume_budget_elements(mask, vol));

  for (std::size_t e = 0; e < ne; ++e) {
    if (mask.states[e] != ElementState::design) continue;
    const double dproj = heaviside_derivative(rho.values[e], proj);
    const double wc = dc_drho_tilde[e] * dproj;
    const double wv = dv_drho_tilde * dproj;
    for (const auto& entry : grads.row(e)) {
      const auto m = static_cast<std::size_t>(entry.site);
      for (int a = 0; a < 2; ++a) {
        out.compliance[layout.position_offset(m) + a] += wc * entry.d_rho_d_x[a];
        out.volume[layout.position_offset(m) + a] += wv * entry.d_rho_d_x[a];
      }
      const auto dD = lower_triangle_gradient<2>(entry.d_rho_d_D);
      for (int a = 0; a < DesignLayout::metric_dofs; ++a) {
        out.compliance[layout.metric_offset(m) + a] += wc * dD[a];
        out.volume[layout.metric_offset(m) + a] += wv * dD[a];
      }
    }
  }
  return out;
}

//-----------------------------------------------------------------------------
enum class StopReason { none, max_iterations, design_change, compliance };

/// Algorithm-level stopping rule evaluated after an update with design change
/// `delta`: the loop continues while delta > tol_delta; the compliance rule
/// |c_i + c_{i-1} - c_{i-2} - c_{i-3}| / (c_{i-2} + c_{i-3}) < tol_c needs four
/// records and is only consulted when `compliance_active`.
inline StopReason convergence_check(const OptHistory& history, double delta, double tol_delta, double tol_c,
                                    bool compliance_active = true)
{
  if (history.empty()) throw std::invalid_argument("convergence_check: empty history");
  if (!(delta > tol_delta)) return StopReason::design_change;
  if (compliance_active && history.size() >= 4) {
    const std::size_t i = history.size() - 1;
    const double num = history[i].compliance + history[i - 1].compliance - history[i - 2].compliance -
                       history[i - 3].compliance;
    const double den = history[i - 2].compliance + history[i - 3].compliance;
    if (den != 0.0 && std::abs(num) / std::abs(den) < tol_c) return StopReason::compliance;
  }
  return StopReason::none;
}

//-----------------------------------------------------------------------------
/// Everything a single forward/backward evaluation produces.
struct Evaluation
{
  RasterResult raster;
  ProjectedDensityGrid projected;
  double volume = 0.0;
  ElasticState state;
  DesignGradients gradients;
  double t_fem_s = 0.0;
  double t_grad_s = 0.0;
};

inline FieldConfig effective_field(const FieldConfig& f, std::size_t sites)
{
  FieldConfig out = f;
  out.neighbor_count = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(f.neighbor_count), sites));
  return out;
}

/// Forward pass and sensitivities for one design at one projection steepness.
inline Evaluation evaluate_design(const Problem& problem, const SiteSet<2>& sites, const ProjectionConfig& proj,
                                  const std::vector<double>* warm_start = nullptr, std::uint64_t generation = 0)
{
  using clock = std::chrono::steady_clock;
  Evaluation ev;
  const FieldConfig field = effective_field(problem.field, sites.size());

  auto t0 = clock::now();
  const auto index = build_index(sites, generation);
  ev.raster = rasterize_density(sites, problem.mask, field, index, true);
  ev.projected = project(ev.raster.density, proj);
  ev.volume = volume_fraction(ev.projected, problem.mask, problem.volume);
  auto t1 = clock::now();

  ev.state = assemble_and_solve(ev.projected, problem.mask, problem.bcs, problem.material, problem.solver, warm_start);
  compliance_and_sensitivity(ev.state, ev.projected, problem.mask, problem.material);
  auto t2 = clock::now();

  ev.gradients = assemble_design_gradients(ev.state.element_sensitivities, ev.raster.density, proj,
                                           ev.raster.gradients, problem.mask, sites.size(), problem.volume);
  auto t3 = clock::now();

  ev.t_fem_s = std::chrono::duration<double>(t2 - t1).count();
  ev.t_grad_s = std::chrono::duration<double>((t1 - t0) + (t3 - t2)).count();
  return ev;
}

/// Density of a design without gradients or FEM.
inline ProjectedDensityGrid render_design(const Problem& problem, const SiteSet<2>& sites, const ProjectionConfig& proj)
{
  const FieldConfig field = effective_field(problem.field, sites.size());
  const auto index = build_index(sites);
  return project(rasterize_density(sites, problem.mask, field, index, false).density, proj);
}

struct OptResult
{
  SiteSet<2> sites;
  ProjectedDensityGrid density;
  OptHistory history;
  StopReason reason = StopReason::none;
};

/// Invoked once per iteration with the record, the projected density and the
/// design that produced them (before that iteration's update).
using IterationCallback =
    std::function<void(int, const IterationRecord&, const ProjectedDensityGrid&, const SiteSet<2>&)>;

struct OptimizeOptions
{
  IterationCallback on_iteration;
  std::function<void(int, const SolveReport&)> on_solver_warning;
  std::optional<SiteSet<2>> initial_sites;
};

inline OptResult optimize(const Problem& problem, const OptimizeOptions& opts = {})
{
  using clock = std::chrono::steady_clock;
  problem.validate();

  OptResult result;
  SiteSet<2> sites = opts.initial_sites ? *opts.initial_sites : initialize_sites(problem);
  sites.validate();
  const DesignLayout layout{sites.size()};

  std::vector<double> lower, upper;
  layout.bounds(problem.grid, problem.bounds, lower, upper);
  std::vector<double> design = layout.flatten(sites);
  for (std::size_t j = 0; j < design.size(); ++j) design[j] = std::clamp(design[j], lower[j], upper[j]);
  sites = layout.unflatten(design);

  // optimized subset of the flat layout
  std::vector<std::size_t> active;
  for (std::size_t m = 0; m < sites.size(); ++m) {
    if (problem.optimize_positions)
      for (int a = 0; a < DesignLayout::position_dofs; ++a) active.push_back(layout.position_offset(m) + a);
    if (problem.optimize_metrics)
      for (int a = 0; a < DesignLayout::metric_dofs; ++a) active.push_back(layout.metric_offset(m) + a);
  }
  std::vector<double> lo_a(active.size()), up_a(active.size());
  for (std::size_t k = 0; k < active.size(); ++k) {
    lo_a[k] = lower[active[k]];
    up_a[k] = upper[active[k]];
  }
  MmaState mma(lo_a, up_a, problem.mma);

  ProjectionConfig proj = advance_steepness(problem.projection, 0);
  std::vector<double> displacement;
  double objective_scale = 0.0;

  for (int it = 0; it < problem.max_iterations; ++it) {
    proj = advance_steepness(problem.projection, it);
    Evaluation ev = evaluate_design(problem, sites, proj, displacement.empty() ? nullptr : &displacement,
                                    static_cast<std::uint64_t>(it));
    if (!ev.state.report.converged && opts.on_solver_warning) opts.on_solver_warning(it, ev.state.report);
    displacement = ev.state.displacements;

    const double c = ev.state.compliance;
    if (it == 0) objective_scale = std::abs(c) > 0.0 ? std::abs(c) : 1.0;

    auto t0 = clock::now();
    std::vector<double> x(active.size()), df(active.size()), dg(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) {
      x[k] = design[active[k]];
      df[k] = ev.gradients.compliance[active[k]] / objective_scale;
      dg[k] = ev.gradients.volume[active[k]];
    }
    const std::vector<double> xn =
        mma_update(x, c / objective_scale, df, ev.volume - problem.volume_fraction, dg, mma);
    double delta = 0.0;
    for (std::size_t k = 0; k < active.size(); ++k) {
      delta = std::max(delta, std::abs(xn[k] - x[k]));
      design[active[k]] = xn[k];
    }
    auto t1 = clock::now();

    IterationRecord rec;
    rec.iteration = it;
    rec.compliance = c;
    rec.volume_fraction = ev.volume;
    rec.delta = delta;
    rec.gamma = proj.steepness;
    rec.fem_residual = ev.state.report.relative_residual;
    rec.t_fem_s = ev.t_fem_s;
    rec.t_grad_s = ev.t_grad_s;
    rec.t_mma_s = std::chrono::duration<double>(t1 - t0).count();
    result.history.push_back(rec);
    if (opts.on_iteration) opts.on_iteration(it, rec, ev.projected, sites);

    sites = layout.unflatten(design);

    // the compliance rule only looks at four records taken at the final steepness
    const std::size_t nh = result.history.size();
    const bool plateau = steepness_at_plateau(problem.projection, it, problem.max_iterations) && nh >= 4 &&
                         result.history[nh - 4].gamma == proj.steepness;
    const StopReason reason = convergence_check(result.history, delta, problem.design_tolerance,
                                                problem.compliance_tolerance, plateau);
    if (reason != StopReason::none) {
      result.reason = reason;
      break;
    }
  }
  if (result.reason == StopReason::none && problem.max_iterations >= 0) result.reason = StopReason::max_iterations;

  result.sites = sites;
  result.density = render_design(problem, sites, proj);
  return result;
}

} // namespace vtopo

#endif // VTOPO_PIPELINE_HPP
