#ifndef VTOPO_VORONOI_FIELD_HPP
#define VTOPO_VORONOI_FIELD_HPP

// Differentiable generalized Voronoi density.
//
//   d_m(x)  = sqrt((x - x_m)^T A_m (x - x_m)),   A_m = D_m D_m^T
//   S_m(x)  = e^{-d_m} / (sum_n e^{-d_n} + eps_s),  S_0 = eps_s / (same)
//   rho(x)  = 1 - sum_{m in I_v} S_m^beta
//
// where I_v holds the queried neighbor sites plus the virtual index 0 when
// eps_s > 0. Weights are evaluated in a shifted log-sum-exp form so that very
// stiff metrics (distances ~1e3) stay finite, and rho is assembled as
// (1 - S_max^beta) - sum_{others} S^beta with expm1/log1p so that it keeps
// full relative precision inside cells, where rho is tiny.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "neighbor_index.hpp"
#include "types.hpp"

namespace vtopo {

template <int Dim>
double metric_quadratic_form(const SymMatrix<Dim>& a, const Vec<Dim>& r) noexcept
{
  double q = 0.0;
  for (int i = 0; i < Dim; ++i)
    for (int j = 0; j < Dim; ++j) q += r[i] * a(i, j) * r[j];
  return q;
}

/// Mahalanobis distance from x to site m, floored at cfg.distance_floor.
template <int Dim>
double anisotropic_distance(const Vec<Dim>& x, std::size_t site, const SiteSet<Dim>& sites,
                            double distance_floor = FieldConfig{}.distance_floor)
{
  const SymMatrix<Dim> a = sites.metric_factors[site].gram();
  const double q = metric_quadratic_form<Dim>(a, x - sites.positions[site]);
  return std::max(distance_floor, std::sqrt(std::max(q, 0.0)));
}

struct SoftWeights
{
  double virtual_weight = 0.0;       // S_0
  std::vector<double> site_weights;  // S_m, aligned with neighbor_ids
  std::vector<int> neighbor_ids;
};

template <int Dim>
struct GradientEntry
{
  int site;
  Vec<Dim> d_rho_d_x;
  SymMatrix<Dim> d_rho_d_D;  // symmetrized
};

template <int Dim>
struct DensityGradientRow
{
  double rho = 0.0;
  std::vector<GradientEntry<Dim>> entries;
};

namespace detail {

/// Scratch state of one field evaluation. Index j runs over neighbor_ids; the
/// virtual point is tracked separately.
template <int Dim>
struct FieldEval
{
  std::vector<Vec<Dim>> offset;   // x - x_n
  std::vector<double> dist;       // d_n (floored)
  std::vector<double> log_w;      // log of shifted weight
  std::vector<SymMatrix<Dim>> metric;
  double log_w0 = 0.0;
  bool has_virtual = false;
  int argmax = -1;                // -1 means the virtual point dominates
  double log_denom = 0.0;         // log of shifted denominator = log1p(r)
  double rho = 0.0;

  double log_s(int j) const noexcept { return log_w[j] - log_denom; }
  double log_s0() const noexcept { return log_w0 - log_denom; }
};

template <int Dim>
void evaluate(const Vec<Dim>& x, const SiteSet<Dim>& sites, const FieldConfig& cfg,
              std::span<const int> ids, FieldEval<Dim>& ev)
{
  if (ids.empty()) throw std::invalid_argument("voronoi_field: empty neighbor list");
  const std::size_t n = ids.size();
  ev.offset.resize(n);
  ev.dist.resize(n);
  ev.log_w.resize(n);
  ev.metric.resize(n);

  double d_min = std::numeric_limits<double>::infinity();
  int j_min = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const auto m = static_cast<std::size_t>(ids[j]);
    ev.metric[j] = sites.metric_factors[m].gram();
    ev.offset[j] = x - sites.positions[m];
    const double q = metric_quadratic_form<Dim>(ev.metric[j], ev.offset[j]);
    ev.dist[j] = std::max(cfg.distance_floor, std::sqrt(std::max(q, 0.0)));
    if (ev.dist[j] < d_min) {
      d_min = ev.dist[j];
      j_min = static_cast<int>(j);
    }
  }

  ev.has_virtual = cfg.boundary_weight > 0.0;
  double shift = d_min;
  ev.argmax = j_min;
  if (ev.has_virtual) {
    const double virtual_dist = -std::log(cfg.boundary_weight);
    if (virtual_dist < d_min) {
      shift = virtual_dist;
      ev.argmax = -1;
    }
    ev.log_w0 = std::log(cfg.boundary_weight) + shift;
  }

  // r = sum of shifted weights other than the dominant one (which is e^0 = 1)
  double rest = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    ev.log_w[j] = -(ev.dist[j] - shift);
    if (static_cast<int>(j) != ev.argmax) rest += std::exp(ev.log_w[j]);
  }
  if (ev.has_virtual) {
    if (ev.argmax == -1)
      ev.log_w0 = 0.0;
    else
      rest += std::exp(ev.log_w0);
  }
  if (ev.argmax >= 0) ev.log_w[ev.argmax] = 0.0;
  ev.log_denom = std::log1p(rest);

  // rho = (1 - S_max^beta) - sum_{others} S^beta
  const double beta = cfg.sharpness;
  const double log_s_max = -ev.log_denom;
  double others = 0.0;
  for (std::size_t j = 0; j < n; ++j)
    if (static_cast<int>(j) != ev.argmax) others += std::exp(beta * ev.log_s(static_cast<int>(j)));
  if (ev.has_virtual && ev.argmax != -1) others += std::exp(beta * ev.log_s0());
  const double rho = -std::expm1(beta * log_s_max) - others;
  ev.rho = std::clamp(rho, 0.0, 1.0);
}

} // namespace detail

template <int Dim>
SoftWeights soft_weights(const Vec<Dim>& x, const SiteSet<Dim>& sites, const FieldConfig& cfg,
                         std::span<const int> neighbor_ids)
{
  detail::FieldEval<Dim> ev;
  detail::evaluate<Dim>(x, sites, cfg, neighbor_ids, ev);
  SoftWeights w;
  w.neighbor_ids.assign(neighbor_ids.begin(), neighbor_ids.end());
  w.site_weights.resize(neighbor_ids.size());
  for (std::size_t j = 0; j < neighbor_ids.size(); ++j)
    w.site_weights[j] = std::exp(ev.log_s(static_cast<int>(j)));
  w.virtual_weight = ev.has_virtual ? std::exp(ev.log_s0()) : 0.0;
  return w;
}

template <int Dim>
double density_at(const Vec<Dim>& x, const SiteSet<Dim>& sites, const FieldConfig& cfg,
                  std::span<const int> neighbor_ids)
{
  detail::FieldEval<Dim> ev;
  detail::evaluate<Dim>(x, sites, cfg, neighbor_ids, ev);
  return ev.rho;
}

namespace detail {

/// Gradient rows from a finished evaluation. For neighbor n,
///   d rho / d x_n = c_n Y_n,            Y_n = A_n (x_n - x) / d_n
///   d rho / d D_n = c_n d_n (X_n X_n^T) D_n,   X_n = (x_n - x) / d_n
/// with c_n = -sum_m beta S_m^{beta-1} S_m (S_n - delta_mn)
///          = -beta S_n [(1 - S_n^{beta-1}) - rho].
/// The virtual term enters through rho only when eps_s > 0.
template <int Dim>
void gradient_rows(const SiteSet<Dim>& sites, const FieldConfig& cfg, std::span<const int> ids,
                   const FieldEval<Dim>& ev, std::vector<GradientEntry<Dim>>& out)
{
  const double beta = cfg.sharpness;
  // unclamped rho keeps c_n consistent with the algebra; clamping only matters at roundoff level
  double rho_raw = 0.0;
  {
    double others = 0.0;
    for (std::size_t j = 0; j < ids.size(); ++j)
      if (static_cast<int>(j) != ev.argmax) others += std::exp(beta * ev.log_s(static_cast<int>(j)));
    if (ev.has_virtual && ev.argmax != -1) others += std::exp(beta * ev.log_s0());
    rho_raw = -std::expm1(-beta * ev.log_denom) - others;
  }

  out.clear();
  out.reserve(ids.size());
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const double log_s = ev.log_s(static_cast<int>(j));
    const double s = std::exp(log_s);
    const double one_minus_pow = -std::expm1((beta - 1.0) * log_s);
    const double c = -beta * s * (one_minus_pow - rho_raw);

    GradientEntry<Dim> g{ids[j], {}, {}};
    const double d = ev.dist[j];
    const Vec<Dim>& r = ev.offset[j];  // x - x_n = -d X_n
    const SymMatrix<Dim>& dn = sites.metric_factors[static_cast<std::size_t>(ids[j])];
    const Vec<Dim> ar = ev.metric[j] * r;
    const Vec<Dim> dr = dn * r;
    for (int a = 0; a < Dim; ++a) g.d_rho_d_x[a] = -c * ar[a] / d;
    // general gradient G_ab = (c/d) r_a (D r)_b, projected onto symmetric matrices
    for (int a = 0; a < Dim; ++a)
      for (int b = 0; b <= a; ++b)
        g.d_rho_d_D(a, b) = 0.5 * c / d * (r[a] * dr[b] + r[b] * dr[a]);
    out.push_back(g);
  }
}

} // namespace detail

template <int Dim>
DensityGradientRow<Dim> density_gradients_at(const Vec<Dim>& x, const SiteSet<Dim>& sites,
                                             const FieldConfig& cfg, std::span<const int> neighbor_ids)
{
  detail::FieldEval<Dim> ev;
  detail::evaluate<Dim>(x, sites, cfg, neighbor_ids, ev);
  DensityGradientRow<Dim> row;
  row.rho = ev.rho;
  detail::gradient_rows<Dim>(sites, cfg, neighbor_ids, ev, row.entries);
  return row;
}

/// Gradient with respect to the packed lower-triangle parameters of D: a
/// diagonal parameter sets one entry, an off-diagonal parameter sets two.
template <int Dim>
typename SymMatrix<Dim>::packed_type lower_triangle_gradient(const SymMatrix<Dim>& sym_grad) noexcept
{
  typename SymMatrix<Dim>::packed_type g{};
  for (int a = 0; a < Dim; ++a)
    for (int b = 0; b <= a; ++b)
      g[SymMatrix<Dim>::packed_index(a, b)] = (a == b ? 1.0 : 2.0) * sym_grad(a, b);
  return g;
}

//-----------------------------------------------------------------------------
/// Per-element density gradients in a neighbor-sparse (CSR-like) layout.
/// Row e holds entries [offsets[e], offsets[e+1]); absent sites are zero.
template <int Dim>
struct DensityGradients
{
  std::vector<std::size_t> offsets;
  std::vector<GradientEntry<Dim>> entries;

  std::span<const GradientEntry<Dim>> row(std::size_t e) const
  {
    return std::span<const GradientEntry<Dim>>(entries).subspan(offsets[e], offsets[e + 1] - offsets[e]);
  }
};

struct RasterResult
{
  DensityGrid density;
  DensityGradients<2> gradients;  // empty unless requested
};

/// Evaluates the density at every element centroid using the k nearest sites.
/// Passive-void elements get 0 and passive-solid elements 1, both with no
/// gradient entries.
inline RasterResult rasterize_density(const SiteSet<2>& sites, const DomainMask& mask, const FieldConfig& cfg,
                                      const NeighborIndex<2>& index, bool with_gradients)
{
  sites.validate();
  cfg.validate();
  mask.validate();
  if (static_cast<std::size_t>(cfg.neighbor_count) > sites.size())
    throw std::invalid_argument("rasterize_density: neighbor_count exceeds number of sites");
  if (index.size() != sites.size())
    throw std::invalid_argument("rasterize_density: neighbor index was built for a different site set");

  const GridSpec& grid = mask.grid;
  RasterResult out;
  out.density = DensityGrid(grid, 0.0);
  if (with_gradients) {
    out.gradients.offsets.assign(grid.element_count() + 1, 0);
    out.gradients.entries.reserve(grid.element_count() * static_cast<std::size_t>(cfg.neighbor_count));
  }

  detail::FieldEval<2> ev;
  std::vector<int> ids;
  std::vector<GradientEntry<2>> row;
  for (std::size_t e = 0; e < grid.element_count(); ++e) {
    const ElementState st = mask.states[e];
    if (st == ElementState::design) {
      const Vec<2> x = grid.centroid(e);
      index.query(x, cfg.neighbor_count, ids);
      detail::evaluate<2>(x, sites, cfg, ids, ev);
      out.density.values[e] = ev.rho;
      if (with_gradients) {
        detail::gradient_rows<2>(sites, cfg, ids, ev, row);
        out.gradients.entries.insert(out.gradients.entries.end(), row.begin(), row.end());
      }
    } else {
      out.density.values[e] = st == ElementState::passive_solid ? 1.0 : 0.0;
    }
    if (with_gradients) out.gradients.offsets[e + 1] = out.gradients.entries.size();
  }
  return out;
}

} // namespace vtopo

#endif // VTOPO_VORONOI_FIELD_HPP
