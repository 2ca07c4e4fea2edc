#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>

#include "vtopo/elasticity.hpp"
#include "vtopo/oracle.hpp"

using namespace vtopo;

namespace {

BoundaryConditions cantilever()
{
  BoundaryConditions b;
  b.supports.push_back({{0.0, 0.0, 0.0, 1.0}, true, true});
  b.loads.push_back({{1.0, 0.5, 1.0, 0.5}, {0.0, -1.0}});
  return b;
}

double rel(const std::vector<double>& a, const std::vector<double>& b)
{
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

ProjectedDensityGrid random_density(const GridSpec& g, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  ProjectedDensityGrid rho(g);
  for (double& v : rho.values) v = u(rng);
  return rho;
}

} // namespace

TEST(ElementStiffness, SymmetricWithThreeRigidModes)
{
  const auto ke = element_stiffness_unit(0.3);
  Eigen::Matrix<double, 8, 8> K;
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b) {
      K(a, b) = ke[a * 8 + b];
      EXPECT_NEAR(ke[a * 8 + b], ke[b * 8 + a], 1e-14);
    }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 8, 8>> es(K);
  int zeros = 0;
  for (int i = 0; i < 8; ++i) {
    EXPECT_GT(es.eigenvalues()(i), -1e-12);
    zeros += std::abs(es.eigenvalues()(i)) < 1e-12;
  }
  EXPECT_EQ(zeros, 3);
}

TEST(ElementStiffness, RigidTranslationAndRotation)
{
  const auto ke = element_stiffness_unit(0.3);
  // node order: (0,0), (1,0), (1,1), (0,1)
  const double xs[4] = {0, 1, 1, 0}, ys[4] = {0, 0, 1, 1};
  double tx[8], ty[8], rot[8];
  for (int n = 0; n < 4; ++n) {
    tx[2 * n] = 1;
    tx[2 * n + 1] = 0;
    ty[2 * n] = 0;
    ty[2 * n + 1] = 1;
    rot[2 * n] = -ys[n];
    rot[2 * n + 1] = xs[n];
  }
  for (const double* v : {tx, ty, rot})
    for (int a = 0; a < 8; ++a) {
      double s = 0.0;
      for (int b = 0; b < 8; ++b) s += ke[a * 8 + b] * v[b];
      EXPECT_NEAR(s, 0.0, 1e-14);
    }
}

TEST(ElementStiffness, MatchesGaussQuadrature)
{
  for (double nu : {0.3, 0.1, 0.45}) {
    const auto ke = element_stiffness_unit(nu);
    const auto ref = oracle::quadrature_element_stiffness(nu);
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b) EXPECT_NEAR(ke[a * 8 + b], ref(a, b), 1e-14) << a << "," << b;
  }
}

TEST(InterpolateModulus, Examples)
{
  MaterialModel m;
  EXPECT_DOUBLE_EQ(interpolate_modulus(0.0, m), 1e-9);
  EXPECT_DOUBLE_EQ(interpolate_modulus(1.0, m), 1.0);
  EXPECT_DOUBLE_EQ(interpolate_modulus(0.5, m), 0.5 * (1.0 - 1e-9) + 1e-9);
  m.penal = 3.0;
  EXPECT_DOUBLE_EQ(interpolate_modulus(0.5, m), 0.125 * (1.0 - 1e-9) + 1e-9);
}

TEST(MaterialModel, Validation)
{
  MaterialModel m;
  m.E_min = 0.0;
  EXPECT_THROW(m.validate(), std::invalid_argument);
  m = {};
  m.penal = 0.5;
  EXPECT_THROW(m.validate(), std::invalid_argument);
}

TEST(Boundary, ResolveCantilever)
{
  const GridSpec g{16, 8};
  const auto rb = resolve_boundary(g, cantilever());
  int fixed = 0;
  for (char f : rb.fixed) fixed += f;
  EXPECT_EQ(fixed, 2 * 9);
  const std::size_t load_node = 4 * 17 + 16;
  EXPECT_EQ(rb.load_nodes, std::vector<std::size_t>{load_node});
  EXPECT_EQ(rb.force[2 * load_node + 1], -1.0);
}

TEST(Boundary, DistributedLoadSplitsEqually)
{
  const GridSpec g{10, 10};
  BoundaryConditions b;
  b.supports.push_back({{0.0, 0.0, 1.0, 0.0}, true, true});
  b.loads.push_back({{1.0, 0.4, 1.0, 0.6}, {0.0, -1.0}});
  const auto rb = resolve_boundary(g, b);
  ASSERT_EQ(rb.load_nodes.size(), 3u);
  double total = 0.0;
  for (std::size_t n : rb.load_nodes) {
    EXPECT_NEAR(rb.force[2 * n + 1], -1.0 / 3.0, 1e-15);
    total += rb.force[2 * n + 1];
  }
  EXPECT_NEAR(total, -1.0, 1e-15);
}

TEST(Boundary, Errors)
{
  const GridSpec g{4, 4};
  BoundaryConditions b = cantilever();
  b.supports.clear();
  EXPECT_THROW(resolve_boundary(g, b), std::invalid_argument);
  b = cantilever();
  b.loads.clear();
  EXPECT_THROW(resolve_boundary(g, b), std::invalid_argument);
  b = cantilever();
  b.loads[0].region = {0.0, 0.5, 0.0, 0.5};
  EXPECT_THROW(resolve_boundary(g, b), std::invalid_argument);
}

TEST(Stiffness, MatrixFreeMatchesDenseAssembly)
{
  const GridSpec g{6, 4};
  const auto rho = random_density(g, 1);
  auto mask = DomainMask::all_design(g);
  mask.states[3] = ElementState::passive_solid;
  mask.states[7] = ElementState::passive_void;
  const MaterialModel mat;
  std::vector<char> none(2 * node_count(g), 0);
  StiffnessOperator K(g, element_moduli(rho, mask, mat), none, mat.poisson);
  const Eigen::MatrixXd Kd = oracle::assemble_dense_stiffness(rho, mask, mat);
  std::vector<double> e(K.size(), 0.0), col;
  for (std::size_t c = 0; c < K.size(); ++c) {
    e[c] = 1.0;
    K.apply(e, col);
    e[c] = 0.0;
    for (std::size_t r = 0; r < K.size(); ++r)
      ASSERT_NEAR(col[r], Kd(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)), 1e-12);
  }
  const SparseMatrix Ks = assemble_stiffness(K);
  EXPECT_NEAR((Eigen::MatrixXd(Ks) - Kd).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(Solve, UniformCantileverMatchesDenseSolve)
{
  const GridSpec g{16, 8};
  const ProjectedDensityGrid rho(g, 1.0);
  const auto mask = DomainMask::all_design(g);
  const MaterialModel mat;
  const auto st = assemble_and_solve(rho, mask, cantilever(), mat);
  EXPECT_TRUE(st.report.converged);
  EXPECT_LE(st.report.relative_residual, 1e-8);
  const auto U = oracle::dense_fem_solve(rho, mask, cantilever(), mat);
  EXPECT_LT(rel(st.displacements, U), 1e-7);
  double c_ref = 0.0;
  for (std::size_t d = 0; d < U.size(); ++d) c_ref += st.force[d] * U[d];
  EXPECT_NEAR(st.compliance / c_ref, 1.0, 1e-8);
}

TEST(Solve, BothPreconditionersAgreeOnHighContrastDensity)
{
  const GridSpec g{32, 16};
  auto rho = random_density(g, 2);
  for (std::size_t e = 0; e < rho.values.size(); e += 3) rho.values[e] = 0.0;
  const auto mask = DomainMask::all_design(g);
  const MaterialModel mat;
  SolverOptions mg, jac;
  jac.preconditioner = Preconditioner::jacobi;
  jac.max_iterations = 200000;
  const auto a = assemble_and_solve(rho, mask, cantilever(), mat, mg);
  const auto b = assemble_and_solve(rho, mask, cantilever(), mat, jac);
  EXPECT_TRUE(a.report.converged);
  EXPECT_TRUE(b.report.converged);
  EXPECT_LT(a.report.iterations, b.report.iterations);
  EXPECT_NEAR(a.compliance / b.compliance, 1.0, 1e-7);
  // void elements sit at E_min = 1e-9, so only the energy is well conditioned
  const auto U = oracle::dense_fem_solve(rho, mask, cantilever(), mat);
  double c_ref = 0.0;
  for (std::size_t d = 0; d < U.size(); ++d) c_ref += a.force[d] * U[d];
  EXPECT_NEAR(a.compliance / c_ref, 1.0, 1e-7);
}

TEST(Solve, ZeroLoadGivesZeroDisplacement)
{
  const GridSpec g{8, 4};
  BoundaryConditions b = cantilever();
  b.loads[0].force = {0.0, 0.0};
  const auto st = assemble_and_solve(ProjectedDensityGrid(g, 0.7), DomainMask::all_design(g), b, MaterialModel{});
  for (double u : st.displacements) EXPECT_EQ(u, 0.0);
  EXPECT_EQ(st.compliance, 0.0);
}

TEST(Solve, DoublingLoadQuadruplesCompliance)
{
  const GridSpec g{16, 8};
  const auto rho = random_density(g, 3);
  const auto mask = DomainMask::all_design(g);
  BoundaryConditions b2 = cantilever();
  b2.loads[0].force = {0.0, -2.0};
  const auto a = assemble_and_solve(rho, mask, cantilever(), MaterialModel{});
  const auto b = assemble_and_solve(rho, mask, b2, MaterialModel{});
  EXPECT_NEAR(b.compliance / a.compliance, 4.0, 1e-7);
}

TEST(Solve, NonConvergenceReturnsBestIterate)
{
  const GridSpec g{16, 8};
  SolverOptions opt;
  opt.max_iterations = 2;
  opt.preconditioner = Preconditioner::jacobi;
  const auto st = assemble_and_solve(ProjectedDensityGrid(g, 1.0), DomainMask::all_design(g), cantilever(),
                                     MaterialModel{}, opt);
  EXPECT_FALSE(st.report.converged);
  EXPECT_GT(st.report.relative_residual, 1e-8);
  EXPECT_LT(st.report.relative_residual, 1.0);
  EXPECT_LE(st.report.iterations, 2);
}

TEST(Solve, WarmStartFromSolutionNeedsNoIterations)
{
  const GridSpec g{16, 8};
  const ProjectedDensityGrid rho(g, 0.6);
  const auto mask = DomainMask::all_design(g);
  const auto a = assemble_and_solve(rho, mask, cantilever(), MaterialModel{});
  const auto b = assemble_and_solve(rho, mask, cantilever(), MaterialModel{}, {}, &a.displacements);
  EXPECT_EQ(b.report.iterations, 0);
  EXPECT_EQ(b.compliance, a.compliance);
}

TEST(Solve, OddGridFallsBackToDirectCoarseLevel)
{
  const GridSpec g{15, 7};
  const auto rho = random_density(g, 4);
  const auto mask = DomainMask::all_design(g);
  const auto st = assemble_and_solve(rho, mask, cantilever(), MaterialModel{});
  EXPECT_TRUE(st.report.converged);
  const auto U = oracle::dense_fem_solve(rho, mask, cantilever(), MaterialModel{});
  EXPECT_LT(rel(st.displacements, U), 1e-7);
}

TEST(Sensitivity, NonPositiveAndZeroOnPassive)
{
  const GridSpec g{16, 8};
  auto rho = random_density(g, 5);
  auto mask = DomainMask::all_design(g);
  mask.states[10] = ElementState::passive_solid;
  const MaterialModel mat;
  auto st = assemble_and_solve(rho, mask, cantilever(), mat);
  compliance_and_sensitivity(st, rho, mask, mat);
  for (double s : st.element_sensitivities) EXPECT_LE(s, 0.0);
  EXPECT_EQ(st.element_sensitivities[10], 0.0);
  EXPECT_GE(st.compliance, 0.0);
}

TEST(Sensitivity, ZeroDisplacementElementHasZeroSensitivity)
{
  const GridSpec g{4, 4};
  ElasticState st;
  st.displacements.assign(2 * node_count(g), 0.0);
  st.force = st.displacements;
  const ProjectedDensityGrid rho(g, 0.5);
  compliance_and_sensitivity(st, rho, DomainMask::all_design(g), MaterialModel{});
  for (double s : st.element_sensitivities) EXPECT_EQ(s, 0.0);
}

TEST(Sensitivity, MatchesFiniteDifferencesWithResolve)
{
  const GridSpec g{4, 4};
  auto rho = random_density(g, 6);
  const auto mask = DomainMask::all_design(g);
  for (double p : {1.0, 3.0}) {
    MaterialModel mat;
    mat.penal = p;
    SolverOptions opt;
    opt.tolerance = 1e-14;
    auto st = assemble_and_solve(rho, mask, cantilever(), mat, opt);
    compliance_and_sensitivity(st, rho, mask, mat);
    const double h = 1e-6;
    for (std::size_t e = 0; e < rho.values.size(); ++e) {
      auto rp = rho, rm = rho;
      rp.values[e] += h;
      rm.values[e] -= h;
      const double fd = (assemble_and_solve(rp, mask, cantilever(), mat, opt).compliance -
                         assemble_and_solve(rm, mask, cantilever(), mat, opt).compliance) /
                        (2.0 * h);
      EXPECT_LT(oracle::relative_error(st.element_sensitivities[e], fd), 1e-5) << "element " << e << " p " << p;
    }
  }
}
