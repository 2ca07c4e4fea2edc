#ifndef VTOPO_ELASTICITY_HPP
#define VTOPO_ELASTICITY_HPP

// Plane-stress linear elasticity on a regular grid of unit square bilinear
// elements with SIMP-interpolated moduli, solved with CG preconditioned by a
// geometric multigrid V-cycle (Jacobi on request).
//
// Node (i, j), 0 <= i <= nx, 0 <= j <= ny, has index j * (nx + 1) + i and
// DOFs 2n (x) and 2n + 1 (y). Element nodes are taken counter-clockwise from
// the lower-left corner.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "types.hpp"

namespace vtopo {

struct MaterialModel
{
  double E0 = 1.0;
  double E_min = 1e-9;
  double poisson = 0.3;
  double penal = 1.0;

  void validate() const
  {
    if (!(E_min > 0.0 && E_min < E0)) throw std::invalid_argument("MaterialModel: need 0 < E_min < E0");
    if (!(penal >= 1.0)) throw std::invalid_argument("MaterialModel: penal must be >= 1");
    if (!(poisson > 0.0 && poisson < 0.5)) throw std::invalid_argument("MaterialModel: poisson must lie in (0, 0.5)");
  }
};

using ElementMatrix = std::array<double, 64>;

/// Unit-modulus stiffness of the unit square Q4 element (plane stress, unit thickness).
inline ElementMatrix element_stiffness_unit(double nu)
{
  const double k[8] = {0.5 - nu / 6.0,         0.125 + nu / 8.0, -0.25 - nu / 12.0, -0.125 + 3.0 * nu / 8.0,
                       -0.25 + nu / 12.0,      -0.125 - nu / 8.0, nu / 6.0,         0.125 - 3.0 * nu / 8.0};
  static constexpr int pattern[8][8] = {
      {0, 1, 2, 3, 4, 5, 6, 7}, {1, 0, 7, 6, 5, 4, 3, 2}, {2, 7, 0, 5, 6, 3, 4, 1}, {3, 6, 5, 0, 7, 2, 1, 4},
      {4, 5, 6, 7, 0, 1, 2, 3}, {5, 4, 3, 2, 1, 0, 7, 6}, {6, 3, 4, 1, 2, 7, 0, 5}, {7, 2, 1, 4, 3, 6, 5, 0}};
  const double scale = 1.0 / (1.0 - nu * nu);
  ElementMatrix ke{};
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b) ke[a * 8 + b] = scale * k[pattern[a][b]];
  return ke;
}

inline double interpolate_modulus(double rho_tilde, const MaterialModel& mat)
{
  return mat.E_min + std::pow(rho_tilde, mat.penal) * (mat.E0 - mat.E_min);
}

//-----------------------------------------------------------------------------
/// Axis-aligned rectangle in fractional domain coordinates: (0,0) is the
/// lower-left corner of the domain and (1,1) the upper-right.
struct Region
{
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
};

struct SupportSpec
{
  Region region;
  bool fix_x = true;
  bool fix_y = true;
};

/// Total force split equally over the nodes inside the region (or the node
/// nearest its center when the region contains none).
struct LoadSpec
{
  Region region;
  Vec<2> force{0.0, 0.0};
};

struct BoundaryConditions
{
  std::vector<SupportSpec> supports;
  std::vector<LoadSpec> loads;
};

namespace detail {

inline std::vector<std::size_t> nodes_in_region(const GridSpec& g, const Region& r)
{
  constexpr double tol = 1e-9;
  std::vector<std::size_t> nodes;
  for (int j = 0; j <= g.ny; ++j)
    for (int i = 0; i <= g.nx; ++i) {
      const double fx = static_cast<double>(i) / g.nx, fy = static_cast<double>(j) / g.ny;
      if (fx >= r.x0 - tol && fx <= r.x1 + tol && fy >= r.y0 - tol && fy <= r.y1 + tol)
        nodes.push_back(static_cast<std::size_t>(j) * (g.nx + 1) + i);
    }
  if (nodes.empty()) {
    const int i = static_cast<int>(std::lround(0.5 * (r.x0 + r.x1) * g.nx));
    const int j = static_cast<int>(std::lround(0.5 * (r.y0 + r.y1) * g.ny));
    nodes.push_back(static_cast<std::size_t>(std::clamp(j, 0, g.ny)) * (g.nx + 1) + std::clamp(i, 0, g.nx));
  }
  return nodes;
}

} // namespace detail

/// Boundary conditions resolved onto a grid's DOFs.
struct ResolvedBoundary
{
  std::vector<char> fixed;   // per DOF
  std::vector<double> force; // per DOF
  std::vector<std::size_t> load_nodes;
  std::vector<std::size_t> support_nodes;
};

inline std::size_t node_count(const GridSpec& g) { return static_cast<std::size_t>(g.nx + 1) * (g.ny + 1); }

inline ResolvedBoundary resolve_boundary(const GridSpec& g, const BoundaryConditions& bc)
{
  if (bc.supports.empty()) throw std::invalid_argument("BoundaryConditions: no supports");
  if (bc.loads.empty()) throw std::invalid_argument("BoundaryConditions: no loads");
  const std::size_t ndof = 2 * node_count(g);
  ResolvedBoundary rb{std::vector<char>(ndof, 0), std::vector<double>(ndof, 0.0), {}, {}};
  for (const auto& s : bc.supports)
    for (std::size_t n : detail::nodes_in_region(g, s.region)) {
      if (s.fix_x) rb.fixed[2 * n] = 1;
      if (s.fix_y) rb.fixed[2 * n + 1] = 1;
      rb.support_nodes.push_back(n);
    }
  for (const auto& l : bc.loads) {
    const auto nodes = detail::nodes_in_region(g, l.region);
    const double share = 1.0 / static_cast<double>(nodes.size());
    for (std::size_t n : nodes) {
      for (int a = 0; a < 2; ++a) {
        if (l.force[a] != 0.0 && rb.fixed[2 * n + a])
          throw std::invalid_argument("BoundaryConditions: load applied to a fixed DOF");
        rb.force[2 * n + a] += share * l.force[a];
      }
      rb.load_nodes.push_back(n);
    }
  }
  if (std::none_of(rb.fixed.begin(), rb.fixed.end(), [](char c) { return c != 0; }))
    throw std::invalid_argument("BoundaryConditions: supports select no DOFs");
  return rb;
}

inline std::array<std::size_t, 8> element_dofs(const GridSpec& g, int i, int j) noexcept
{
  const std::size_t stride = static_cast<std::size_t>(g.nx) + 1;
  const std::size_t n0 = static_cast<std::size_t>(j) * stride + i;
  const std::size_t nodes[4] = {n0, n0 + 1, n0 + stride + 1, n0 + stride};
  std::array<std::size_t, 8> d{};
  for (int a = 0; a < 4; ++a) {
    d[2 * a] = 2 * nodes[a];
    d[2 * a + 1] = 2 * nodes[a] + 1;
  }
  return d;
}

/// Per-element moduli: SIMP on design elements, E_min on passive-void, E0 on passive-solid.
inline std::vector<double> element_moduli(const ProjectedDensityGrid& rho, const DomainMask& mask,
                                          const MaterialModel& mat)
{
  std::vector<double> E(rho.values.size());
  for (std::size_t e = 0; e < E.size(); ++e) {
    switch (mask.states[e]) {
    case ElementState::design: E[e] = interpolate_modulus(rho.values[e], mat); break;
    case ElementState::passive_void: E[e] = mat.E_min; break;
    case ElementState::passive_solid: E[e] = mat.E0; break;
    }
  }
  return E;
}

//-----------------------------------------------------------------------------
/// Matrix-free global stiffness with fixed DOFs eliminated: rows and columns of
/// fixed DOFs act as the identity.
class StiffnessOperator
{
public:
  StiffnessOperator(const GridSpec& g, std::vector<double> moduli, std::vector<char> fixed, double nu)
      : grid_{g}, moduli_{std::move(moduli)}, fixed_{std::move(fixed)}, ke_{element_stiffness_unit(nu)}
  {
    if (moduli_.size() != g.element_count()) throw std::invalid_argument("StiffnessOperator: moduli size mismatch");
    if (fixed_.size() != 2 * node_count(g)) throw std::invalid_argument("StiffnessOperator: fixed mask size mismatch");
  }

  std::size_t size() const noexcept { return fixed_.size(); }
  const GridSpec& grid() const noexcept { return grid_; }
  const ElementMatrix& unit_element() const noexcept { return ke_; }
  const std::vector<double>& moduli() const noexcept { return moduli_; }
  const std::vector<char>& fixed() const noexcept { return fixed_; }

  void apply(const std::vector<double>& x, std::vector<double>& y) const
  {
    y.assign(x.size(), 0.0);
    for (int j = 0; j < grid_.ny; ++j)
      for (int i = 0; i < grid_.nx; ++i) {
        const auto dofs = element_dofs(grid_, i, j);
        double ue[8];
        for (int a = 0; a < 8; ++a) ue[a] = fixed_[dofs[a]] ? 0.0 : x[dofs[a]];
        const double E = moduli_[grid_.element_index(i, j)];
        for (int a = 0; a < 8; ++a) {
          double s = 0.0;
          for (int b = 0; b < 8; ++b) s += ke_[a * 8 + b] * ue[b];
          y[dofs[a]] += E * s;
        }
      }
    for (std::size_t d = 0; d < y.size(); ++d)
      if (fixed_[d]) y[d] = x[d];
  }

  std::vector<double> diagonal() const
  {
    std::vector<double> diag(size(), 0.0);
    for (int j = 0; j < grid_.ny; ++j)
      for (int i = 0; i < grid_.nx; ++i) {
        const auto dofs = element_dofs(grid_, i, j);
        const double E = moduli_[grid_.element_index(i, j)];
        for (int a = 0; a < 8; ++a) diag[dofs[a]] += E * ke_[a * 8 + a];
      }
    for (std::size_t d = 0; d < diag.size(); ++d)
      if (fixed_[d]) diag[d] = 1.0;
    return diag;
  }

private:
  GridSpec grid_;
  std::vector<double> moduli_;
  std::vector<char> fixed_;
  ElementMatrix ke_;
};

enum class Preconditioner { multigrid, jacobi };

struct SolverOptions
{
  double tolerance = 1e-8;      // relative residual ||KU - F|| / ||F||
  int max_iterations = 20000;
  Preconditioner preconditioner = Preconditioner::multigrid;
  int smoothing_steps = 2;      // damped Jacobi sweeps before and after the coarse correction
  double smoothing_weight = 0.6;
  std::size_t coarse_dofs = 1000;  // stop coarsening below this many DOFs
};

struct SolveReport
{
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = true;
};

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Explicit global stiffness of the operator, identity rows/columns on fixed DOFs.
inline SparseMatrix assemble_stiffness(const StiffnessOperator& K)
{
  const GridSpec& g = K.grid();
  const auto& fixed = K.fixed();
  const auto& ke = K.unit_element();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(g.element_count() * 64 + K.size());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const auto dofs = element_dofs(g, i, j);
      const double E = K.moduli()[g.element_index(i, j)];
      for (int a = 0; a < 8; ++a) {
        if (fixed[dofs[a]]) continue;
        for (int b = 0; b < 8; ++b)
          if (!fixed[dofs[b]])
            trip.emplace_back(static_cast<int>(dofs[a]), static_cast<int>(dofs[b]), E * ke[a * 8 + b]);
      }
    }
  for (std::size_t d = 0; d < K.size(); ++d)
    if (fixed[d]) trip.emplace_back(static_cast<int>(d), static_cast<int>(d), 1.0);
  SparseMatrix A(static_cast<Eigen::Index>(K.size()), static_cast<Eigen::Index>(K.size()));
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

/// Bilinear interpolation from the (nx/2, ny/2) grid to the (nx, ny) grid,
/// both displacement components; rows of `fixed` fine DOFs are dropped.
inline SparseMatrix prolongation(const GridSpec& fine, const std::vector<char>& fixed)
{
  const GridSpec coarse{fine.nx / 2, fine.ny / 2};
  const int cs = coarse.nx + 1;
  std::vector<Eigen::Triplet<double>> trip;
  for (int j = 0; j <= fine.ny; ++j)
    for (int i = 0; i <= fine.nx; ++i) {
      const int n = j * (fine.nx + 1) + i;
      const int i0 = i / 2, j0 = j / 2;
      const int i1 = (i % 2) ? i0 + 1 : i0, j1 = (j % 2) ? j0 + 1 : j0;
      const double wi = (i % 2) ? 0.5 : 1.0, wj = (j % 2) ? 0.5 : 1.0;
      const int ci[2] = {i0, i1}, cj[2] = {j0, j1};
      const int ni = (i % 2) ? 2 : 1, nj = (j % 2) ? 2 : 1;
      for (int c = 0; c < 2; ++c) {
        if (fixed[2 * n + c]) continue;
        for (int b = 0; b < nj; ++b)
          for (int a = 0; a < ni; ++a) {
            const int cn = cj[b] * cs + ci[a];
            trip.emplace_back(2 * n + c, 2 * cn + c, wi * wj);
          }
      }
    }
  SparseMatrix P(2 * static_cast<Eigen::Index>(node_count(fine)), 2 * static_cast<Eigen::Index>(node_count(coarse)));
  P.setFromTriplets(trip.begin(), trip.end());
  return P;
}

/// One symmetric V-cycle over a Galerkin hierarchy A_{l+1} = P_l^T A_l P_l,
/// damped Jacobi smoothing, sparse Cholesky on the coarsest level.
class MultigridPreconditioner
{
public:
  MultigridPreconditioner(const StiffnessOperator& K, const SolverOptions& opt)
      : steps_{opt.smoothing_steps}, omega_{opt.smoothing_weight}
  {
    GridSpec g = K.grid();
    std::vector<char> fixed = K.fixed();
    levels_.push_back({assemble_stiffness(K), {}, {}});
    while (g.nx % 2 == 0 && g.ny % 2 == 0 && g.nx >= 4 && g.ny >= 4 &&
           static_cast<std::size_t>(levels_.back().A.rows()) > opt.coarse_dofs) {
      Level& fine = levels_.back();
      fine.P = prolongation(g, fixed);
      SparseMatrix Ac = SparseMatrix(fine.P.transpose() * fine.A) * fine.P;
      g = GridSpec{g.nx / 2, g.ny / 2};
      // coarse DOFs that every fine neighbor pins get an identity row
      fixed.assign(static_cast<std::size_t>(Ac.rows()), 0);
      Eigen::VectorXd diag = Ac.diagonal();
      std::vector<Eigen::Triplet<double>> pad;
      for (Eigen::Index d = 0; d < Ac.rows(); ++d)
        if (diag[d] == 0.0) {
          fixed[static_cast<std::size_t>(d)] = 1;
          pad.emplace_back(static_cast<int>(d), static_cast<int>(d), 1.0);
        }
      if (!pad.empty()) {
        SparseMatrix I(Ac.rows(), Ac.cols());
        I.setFromTriplets(pad.begin(), pad.end());
        Ac += I;
      }
      Ac.prune(0.0);
      levels_.push_back({std::move(Ac), {}, {}});
    }
    for (auto& l : levels_) l.inv_diag = l.A.diagonal().cwiseInverse();
    coarse_.compute(Eigen::SparseMatrix<double>(levels_.back().A));
    if (coarse_.info() != Eigen::Success) throw std::runtime_error("MultigridPreconditioner: coarse factorization failed");
  }

  std::size_t level_count() const noexcept { return levels_.size(); }

  void apply(const Eigen::VectorXd& r, Eigen::VectorXd& z) const { z = cycle(0, r); }

private:
  struct Level
  {
    SparseMatrix A;
    SparseMatrix P;  // from the next coarser level
    Eigen::VectorXd inv_diag;
  };

  Eigen::VectorXd cycle(std::size_t l, const Eigen::VectorXd& b) const
  {
    if (l + 1 == levels_.size()) return coarse_.solve(b);
    const Level& L = levels_[l];
    Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
    for (int s = 0; s < steps_; ++s) x += omega_ * L.inv_diag.cwiseProduct(b - L.A * x);
    const Eigen::VectorXd rc = L.P.transpose() * (b - L.A * x);
    x += L.P * cycle(l + 1, rc);
    for (int s = 0; s < steps_; ++s) x += omega_ * L.inv_diag.cwiseProduct(b - L.A * x);
    return x;
  }

  std::vector<Level> levels_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> coarse_;
  int steps_;
  double omega_;
};

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b)
{
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

} // namespace detail

/// Preconditioned conjugate gradients on K. On non-convergence x holds the
/// iterate with the smallest residual seen.
inline SolveReport pcg_solve(const StiffnessOperator& K, const std::vector<double>& b, std::vector<double>& x,
                             const SolverOptions& opt)
{
  using Eigen::VectorXd;
  const auto n = static_cast<Eigen::Index>(K.size());
  if (b.size() != K.size()) throw std::invalid_argument("pcg_solve: right-hand side size mismatch");
  if (x.size() != K.size()) x.assign(K.size(), 0.0);
  const auto& fixed = K.fixed();

  VectorXd rhs = Eigen::Map<const VectorXd>(b.data(), n);
  for (Eigen::Index d = 0; d < n; ++d)
    if (fixed[static_cast<std::size_t>(d)]) rhs[d] = 0.0;
  VectorXd u = Eigen::Map<VectorXd>(x.data(), n);
  for (Eigen::Index d = 0; d < n; ++d)
    if (fixed[static_cast<std::size_t>(d)]) u[d] = 0.0;

  const double b_norm = rhs.norm();
  if (b_norm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    return {0, 0.0, true};
  }

  const SparseMatrix A = assemble_stiffness(K);
  std::optional<MultigridPreconditioner> mg;
  VectorXd inv_diag;
  if (opt.preconditioner == Preconditioner::multigrid)
    mg.emplace(K, opt);
  else
    inv_diag = A.diagonal().cwiseInverse();
  auto precondition = [&](const VectorXd& r, VectorXd& z) {
    if (mg)
      mg->apply(r, z);
    else
      z = inv_diag.cwiseProduct(r);
  };

  VectorXd r = rhs - A * u;
  double res = r.norm() / b_norm;
  VectorXd best = u;
  double best_res = res;
  int it = 0;
  if (res > opt.tolerance) {
    VectorXd z, p, q;
    precondition(r, z);
    p = z;
    double rz = r.dot(z);
    while (it < opt.max_iterations) {
      q = A * p;
      const double pq = p.dot(q);
      if (!(pq > 0.0)) break;
      const double alpha = rz / pq;
      u += alpha * p;
      r -= alpha * q;
      ++it;
      res = r.norm() / b_norm;
      if (res < best_res) {
        best_res = res;
        best = u;
      }
      if (res <= opt.tolerance) break;
      precondition(r, z);
      const double rz_new = r.dot(z);
      const double beta = rz_new / rz;
      rz = rz_new;
      p = z + beta * p;
    }
  }

  // the recursive residual drifts from the true one; report the true value
  double true_res = (rhs - A * u).norm() / b_norm;
  if (true_res > opt.tolerance && best_res < res) {
    u = best;
    true_res = (rhs - A * u).norm() / b_norm;
  }
  std::copy(u.data(), u.data() + n, x.begin());
  return {it, true_res, true_res <= opt.tolerance};
}

//-----------------------------------------------------------------------------
struct ElasticState
{
  std::vector<double> displacements;
  std::vector<double> force;
  double compliance = 0.0;
  std::vector<double> element_sensitivities;  // dc / d rho~_e
  SolveReport report;
};

/// Solves K(rho~) U = F. Non-convergence is reported, not thrown; the state
/// then carries the best iterate. `warm_start`, when given, seeds CG.
inline ElasticState assemble_and_solve(const ProjectedDensityGrid& rho, const DomainMask& mask,
                                       const BoundaryConditions& bcs, const MaterialModel& mat,
                                       const SolverOptions& opt = {},
                                       const std::vector<double>* warm_start = nullptr)
{
  mat.validate();
  mask.validate();
  if (!(rho.grid == mask.grid)) throw std::invalid_argument("assemble_and_solve: density and mask resolutions differ");
  if (!(opt.tolerance > 0.0)) throw std::invalid_argument("assemble_and_solve: tolerance must be > 0");
  const ResolvedBoundary rb = resolve_boundary(rho.grid, bcs);
  StiffnessOperator K(rho.grid, element_moduli(rho, mask, mat), rb.fixed, mat.poisson);

  ElasticState st;
  st.force = rb.force;
  if (warm_start && warm_start->size() == K.size()) st.displacements = *warm_start;
  st.report = pcg_solve(K, st.force, st.displacements, opt);
  st.compliance = detail::dot(st.force, st.displacements);
  return st;
}

/// c = F^T U and dc/d rho~_e = -p rho~_e^{p-1} (E0 - E_min) u_e^T k0 u_e on
/// design elements, zero on passive ones.
inline double compliance_and_sensitivity(ElasticState& state, const ProjectedDensityGrid& rho,
                                         const DomainMask& mask, const MaterialModel& mat)
{
  const GridSpec& g = rho.grid;
  const ElementMatrix ke = element_stiffness_unit(mat.poisson);
  state.compliance = detail::dot(state.force, state.displacements);
  state.element_sensitivities.assign(g.element_count(), 0.0);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t e = g.element_index(i, j);
      if (mask.states[e] != ElementState::design) continue;
      const auto dofs = element_dofs(g, i, j);
      double ue[8];
      for (int a = 0; a < 8; ++a) ue[a] = state.displacements[dofs[a]];
      double energy = 0.0;
      for (int a = 0; a < 8; ++a) {
        double s = 0.0;
        for (int b = 0; b < 8; ++b) s += ke[a * 8 + b] * ue[b];
        energy += ue[a] * s;
      }
      const double dE = mat.penal == 1.0 ? 1.0 : mat.penal * std::pow(rho.values[e], mat.penal - 1.0);
      state.element_sensitivities[e] = -dE * (mat.E0 - mat.E_min) * energy;
    }
  return state.compliance;
}

} // namespace vtopo

#endif // VTOPO_ELASTICITY_HPP
