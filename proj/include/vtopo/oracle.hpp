#ifndef VTOPO_ORACLE_HPP
#define VTOPO_ORACLE_HPP

// Brute-force references for the test suite and `vtopo check-gradients`.
// Nothing here calls into the code paths it checks; only the domain types
// are shared.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "elasticity.hpp"
#include "types.hpp"

namespace vtopo::oracle {

struct FDReport
{
  std::vector<double> analytical;
  std::vector<double> finite_difference;
  std::vector<double> relative_error;  // NaN marks components below the magnitude cut
  double max_relative_error = 0.0;
  double threshold = 0.0;
  bool passed = true;

  std::size_t checked() const
  {
    return static_cast<std::size_t>(std::count_if(relative_error.begin(), relative_error.end(),
                                                  [](double e) { return !std::isnan(e); }));
  }
};

inline double relative_error(double a, double b)
{
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

/// Central differences of f around x, compared against `analytical`.
/// Components where both values are at most `min_magnitude` are skipped.
/// f may return long double; the difference is then formed in that precision,
/// which keeps roundoff well below small components at h = 1e-6.
template <typename F>
inline FDReport fd_gradient_check(F&& f, std::span<const double> x, std::span<const double> analytical, double step,
                                  double threshold, double min_magnitude = 0.0)
{
  if (analytical.size() != x.size()) throw std::invalid_argument("fd_gradient_check: gradient length mismatch");
  FDReport rep;
  rep.threshold = threshold;
  rep.analytical.assign(analytical.begin(), analytical.end());
  std::vector<double> xp(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + step;
    const double hi = xp[i];
    const auto fp = f(std::span<const double>(xp));
    xp[i] = x[i] - step;
    const double lo = xp[i];
    const auto fm = f(std::span<const double>(xp));
    xp[i] = x[i];
    if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm)))
      throw std::runtime_error("fd_gradient_check: non-finite function value");
    // divide by the step actually taken after rounding x +- h
    const double fd = static_cast<double>((fp - fm) / static_cast<decltype(fp - fm)>(hi - lo));
    rep.finite_difference.push_back(fd);
    if (std::max(std::abs(fd), std::abs(analytical[i])) <= min_magnitude) {
      rep.relative_error.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double err = relative_error(analytical[i], fd);
    rep.relative_error.push_back(err);
    rep.max_relative_error = std::max(rep.max_relative_error, err);
  }
  rep.passed = rep.max_relative_error < threshold;
  return rep;
}

/// Density evaluated straight from the weight definition in long double:
/// rho = 1 - sum_m S_m^beta - S_0^beta, S_m = e^{-d_m} / (sum_n e^{-d_n} + eps_s).
inline long double extended_density_at(const Vec<2>& x, const SiteSet<2>& sites, const FieldConfig& cfg)
{
  const std::size_t n = sites.size();
  std::vector<long double> d(n);
  long double d_min = std::numeric_limits<long double>::infinity();
  for (std::size_t m = 0; m < n; ++m) {
    const auto& D = sites.metric_factors[m];
    const long double r0 = static_cast<long double>(x[0]) - sites.positions[m][0];
    const long double r1 = static_cast<long double>(x[1]) - sites.positions[m][1];
    const long double y0 = D(0, 0) * r0 + static_cast<long double>(D(1, 0)) * r1;
    const long double y1 = D(1, 0) * r0 + static_cast<long double>(D(1, 1)) * r1;
    d[m] = std::max<long double>(cfg.distance_floor, std::sqrt(y0 * y0 + y1 * y1));
    d_min = std::min(d_min, d[m]);
  }
  // common factor e^{d_min} on numerator and denominator
  long double denom = static_cast<long double>(cfg.boundary_weight) * std::exp(d_min);
  for (std::size_t m = 0; m < n; ++m) denom += std::exp(-(d[m] - d_min));
  const long double beta = cfg.sharpness;
  long double sum = 0.0L;
  for (std::size_t m = 0; m < n; ++m) sum += std::pow(std::exp(-(d[m] - d_min)) / denom, beta);
  if (cfg.boundary_weight > 0.0)
    sum += std::pow(static_cast<long double>(cfg.boundary_weight) * std::exp(d_min) / denom, beta);
  return std::clamp(1.0L - sum, 0.0L, 1.0L);
}

//-----------------------------------------------------------------------------
/// Density from every site, written straight from the defining formulas with
/// the same arithmetic order as the library path (sites ascending, then the
/// virtual point), so the k = N^c comparison can be bitwise.
inline double brute_force_density_at(const Vec<2>& x, const SiteSet<2>& sites, const FieldConfig& cfg)
{
  const std::size_t n = sites.size();
  std::vector<double> d(n);
  double d_min = std::numeric_limits<double>::infinity();
  int j_min = 0;
  for (std::size_t m = 0; m < n; ++m) {
    const auto& D = sites.metric_factors[m];
    double A[2][2];
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        // only the lower triangle is formed in the library; mirror that
        const int r = std::max(i, j), c = std::min(i, j);
        double s = 0.0;
        for (int l = 0; l < 2; ++l) s += D(r, l) * D(c, l);
        A[i][j] = s;
      }
    const double r[2] = {x[0] - sites.positions[m][0], x[1] - sites.positions[m][1]};
    double q = 0.0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) q += r[i] * A[i][j] * r[j];
    d[m] = std::max(cfg.distance_floor, std::sqrt(std::max(q, 0.0)));
    if (d[m] < d_min) {
      d_min = d[m];
      j_min = static_cast<int>(m);
    }
  }
  const bool virt = cfg.boundary_weight > 0.0;
  double shift = d_min;
  int top = j_min;
  double log_w0 = 0.0;
  if (virt) {
    const double dv = -std::log(cfg.boundary_weight);
    if (dv < d_min) {
      shift = dv;
      top = -1;
    }
    log_w0 = std::log(cfg.boundary_weight) + shift;
  }
  std::vector<double> log_w(n);
  double rest = 0.0;
  for (std::size_t m = 0; m < n; ++m) {
    log_w[m] = -(d[m] - shift);
    if (static_cast<int>(m) != top) rest += std::exp(log_w[m]);
  }
  if (virt) {
    if (top == -1)
      log_w0 = 0.0;
    else
      rest += std::exp(log_w0);
  }
  if (top >= 0) log_w[top] = 0.0;
  const double log_denom = std::log1p(rest);
  const double beta = cfg.sharpness;
  double others = 0.0;
  for (std::size_t m = 0; m < n; ++m)
    if (static_cast<int>(m) != top) others += std::exp(beta * (log_w[m] - log_denom));
  if (virt && top != -1) others += std::exp(beta * (log_w0 - log_denom));
  return std::clamp(-std::expm1(beta * -log_denom) - others, 0.0, 1.0);
}

inline DensityGrid brute_force_density(const SiteSet<2>& sites, const DomainMask& mask, const FieldConfig& cfg)
{
  DensityGrid out(mask.grid, 0.0);
  for (std::size_t e = 0; e < out.values.size(); ++e) {
    switch (mask.states[e]) {
    case ElementState::design: out.values[e] = brute_force_density_at(mask.grid.centroid(e), sites, cfg); break;
    case ElementState::passive_solid: out.values[e] = 1.0; break;
    case ElementState::passive_void: out.values[e] = 0.0; break;
    }
  }
  return out;
}

/// Soft weights from the textbook (unshifted) softmax; fine for moderate distances.
inline std::vector<double> naive_soft_weights(const Vec<2>& x, const SiteSet<2>& sites, double boundary_weight,
                                              double* virtual_weight = nullptr)
{
  std::vector<double> w(sites.size());
  double sum = boundary_weight;
  for (std::size_t m = 0; m < sites.size(); ++m) {
    const auto& D = sites.metric_factors[m];
    const double r0 = x[0] - sites.positions[m][0], r1 = x[1] - sites.positions[m][1];
    const double y0 = D(0, 0) * r0 + D(0, 1) * r1, y1 = D(1, 0) * r0 + D(1, 1) * r1;
    w[m] = std::exp(-std::sqrt(y0 * y0 + y1 * y1));
    sum += w[m];
  }
  for (double& v : w) v /= sum;
  if (virtual_weight) *virtual_weight = boundary_weight / sum;
  return w;
}

/// argmin over sites of the Mahalanobis distance, ties to the lower index.
inline std::vector<int> discrete_voronoi_labels(const SiteSet<2>& sites, std::span<const Vec<2>> points)
{
  std::vector<int> labels;
  labels.reserve(points.size());
  for (const auto& p : points) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < sites.size(); ++m) {
      const auto& D = sites.metric_factors[m];
      const double r0 = p[0] - sites.positions[m][0], r1 = p[1] - sites.positions[m][1];
      const double y0 = D(0, 0) * r0 + D(0, 1) * r1, y1 = D(1, 0) * r0 + D(1, 1) * r1;
      const double dm = y0 * y0 + y1 * y1;
      if (dm < best_d) {
        best_d = dm;
        best = static_cast<int>(m);
      }
    }
    labels.push_back(best);
  }
  return labels;
}

//-----------------------------------------------------------------------------
/// Q4 unit-square plane-stress stiffness by 2x2 Gauss quadrature of B^T C B.
inline Eigen::Matrix<double, 8, 8> quadrature_element_stiffness(double nu, double E = 1.0)
{
  Eigen::Matrix3d C;
  C << 1.0, nu, 0.0, nu, 1.0, 0.0, 0.0, 0.0, (1.0 - nu) / 2.0;
  C *= E / (1.0 - nu * nu);
  // node coordinates, counter-clockwise from the lower-left corner
  const double xn[4] = {0.0, 1.0, 1.0, 0.0}, yn[4] = {0.0, 0.0, 1.0, 1.0};
  const double gp[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
  Eigen::Matrix<double, 8, 8> K = Eigen::Matrix<double, 8, 8>::Zero();
  for (double gx : gp)
    for (double gy : gp) {
      Eigen::Matrix<double, 3, 8> B = Eigen::Matrix<double, 3, 8>::Zero();
      for (int a = 0; a < 4; ++a) {
        // N_a = (1 - |x - x_a|)(1 - |y - y_a|) on the unit square
        const double sx = xn[a] > 0.5 ? 1.0 : -1.0, sy = yn[a] > 0.5 ? 1.0 : -1.0;
        const double fx = xn[a] > 0.5 ? gx : 1.0 - gx, fy = yn[a] > 0.5 ? gy : 1.0 - gy;
        const double dNdx = sx * fy, dNdy = sy * fx;
        B(0, 2 * a) = dNdx;
        B(1, 2 * a + 1) = dNdy;
        B(2, 2 * a) = dNdy;
        B(2, 2 * a + 1) = dNdx;
      }
      K += 0.25 * B.transpose() * C * B;
    }
  return K;
}

/// Explicit global stiffness (fixed DOFs not yet eliminated).
inline Eigen::MatrixXd assemble_dense_stiffness(const ProjectedDensityGrid& rho, const DomainMask& mask,
                                                const MaterialModel& mat)
{
  const GridSpec& g = rho.grid;
  const int nnx = g.nx + 1;
  const Eigen::Index ndof = 2 * static_cast<Eigen::Index>(nnx) * (g.ny + 1);
  const Eigen::Matrix<double, 8, 8> k0 = quadrature_element_stiffness(mat.poisson);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(ndof, ndof);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t e = static_cast<std::size_t>(j) * g.nx + i;
      double E = mat.E_min;
      if (mask.states[e] == ElementState::design)
        E = mat.E_min + std::pow(rho.values[e], mat.penal) * (mat.E0 - mat.E_min);
      else if (mask.states[e] == ElementState::passive_solid)
        E = mat.E0;
      const int nodes[4] = {j * nnx + i, j * nnx + i + 1, (j + 1) * nnx + i + 1, (j + 1) * nnx + i};
      for (int a = 0; a < 8; ++a)
        for (int b = 0; b < 8; ++b) K(2 * nodes[a / 2] + a % 2, 2 * nodes[b / 2] + b % 2) += E * k0(a, b);
    }
  return K;
}

/// Direct solve of the reduced system K_ff U_f = F_f.
inline std::vector<double> dense_fem_solve(const ProjectedDensityGrid& rho, const DomainMask& mask,
                                           const BoundaryConditions& bcs, const MaterialModel& mat)
{
  const GridSpec& g = rho.grid;
  if (g.nx > 32 || g.ny > 32) throw std::invalid_argument("dense_fem_solve: grid larger than 32x32");
  const ResolvedBoundary rb = resolve_boundary(g, bcs);
  const Eigen::MatrixXd K = assemble_dense_stiffness(rho, mask, mat);

  std::vector<Eigen::Index> free;
  for (Eigen::Index d = 0; d < K.rows(); ++d)
    if (!rb.fixed[static_cast<std::size_t>(d)]) free.push_back(d);
  if (free.size() == static_cast<std::size_t>(K.rows()))
    throw std::invalid_argument("dense_fem_solve: no fixed DOFs, system is singular");

  const auto nf = static_cast<Eigen::Index>(free.size());
  Eigen::MatrixXd Kff(nf, nf);
  Eigen::VectorXd Ff(nf);
  for (Eigen::Index a = 0; a < nf; ++a) {
    Ff(a) = rb.force[static_cast<std::size_t>(free[a])];
    for (Eigen::Index b = 0; b < nf; ++b) Kff(a, b) = K(free[a], free[b]);
  }
  std::vector<double> U(static_cast<std::size_t>(K.rows()), 0.0);
  if (Ff.norm() == 0.0) return U;
  Eigen::LLT<Eigen::MatrixXd> llt(Kff);
  if (llt.info() != Eigen::Success) throw std::runtime_error("dense_fem_solve: stiffness matrix is not positive definite");
  const Eigen::VectorXd Uf = llt.solve(Ff);
  for (Eigen::Index a = 0; a < nf; ++a) U[static_cast<std::size_t>(free[a])] = Uf(a);
  return U;
}

} // namespace vtopo::oracle

#endif // VTOPO_ORACLE_HPP
