#include <gtest/gtest.h>

#include <cmath>

#include "vtopo/oracle.hpp"

using namespace vtopo;

TEST(FdGradientCheck, QuadraticSanity)
{
  const std::vector<double> x{0.3, -1.2, 2.5, 0.0};
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = 2.0 * x[i];
  auto f = [](std::span<const double> p) {
    double s = 0.0;
    for (double v : p) s += v * v;
    return s;
  };
  const auto rep = oracle::fd_gradient_check(f, x, g, 1e-6, 1e-9);
  EXPECT_TRUE(rep.passed) << rep.max_relative_error;
  EXPECT_LT(rep.max_relative_error, 1e-9);
}

TEST(FdGradientCheck, DetectsWrongGradient)
{
  const std::vector<double> x{1.0, 2.0};
  const std::vector<double> wrong{2.0, 4.4};
  auto f = [](std::span<const double> p) { return p[0] * p[0] + p[1] * p[1]; };
  const auto rep = oracle::fd_gradient_check(f, x, wrong, 1e-6, 1e-4);
  EXPECT_FALSE(rep.passed);
  EXPECT_NEAR(rep.max_relative_error, 0.4 / 4.4, 1e-6);
}

TEST(FdGradientCheck, Errors)
{
  const std::vector<double> x{1.0};
  auto bad = [](std::span<const double>) { return std::nan(""); };
  EXPECT_THROW(oracle::fd_gradient_check(bad, x, x, 1e-6, 1e-4), std::runtime_error);
  auto f = [](std::span<const double> p) { return p[0]; };
  EXPECT_THROW(oracle::fd_gradient_check(f, x, std::vector<double>{1.0, 2.0}, 1e-6, 1e-4), std::invalid_argument);
}

TEST(BruteForce, SingleSiteWithoutVirtualIsEmpty)
{
  SiteSet<2> s;
  s.positions = {{0.4, 0.2}};
  s.metric_factors = {SymMatrix<2>({30.0, 5.0, 20.0})};
  FieldConfig cfg;
  cfg.neighbor_count = 1;
  const GridSpec g{16, 8};
  const auto rho = oracle::brute_force_density(s, DomainMask::all_design(g), cfg);
  for (double v : rho.values) EXPECT_EQ(v, 0.0);
}

TEST(BruteForce, AgreesWithExtendedPrecision)
{
  SiteSet<2> s;
  s.positions = {{0.2, 0.3}, {0.6, 0.4}, {0.45, 0.8}};
  s.metric_factors = {SymMatrix<2>({20.0, 2.0, 10.0}), SymMatrix<2>({15.0, -1.0, 25.0}),
                      SymMatrix<2>({12.0, 0.0, 12.0})};
  for (double eps : {0.0, 1e-7}) {
    FieldConfig cfg;
    cfg.sharpness = 10.0;
    cfg.boundary_weight = eps;
    cfg.neighbor_count = 3;
    for (int i = 0; i <= 10; ++i)
      for (int j = 0; j <= 10; ++j) {
        const Vec<2> x{i / 10.0, j / 10.0};
        EXPECT_NEAR(oracle::brute_force_density_at(x, s, cfg),
                    static_cast<double>(oracle::extended_density_at(x, s, cfg)), 1e-13);
      }
  }
}

TEST(NaiveSoftWeights, PartitionOfUnity)
{
  SiteSet<2> s;
  s.positions = {{0.2, 0.3}, {0.6, 0.4}};
  s.metric_factors.assign(2, SymMatrix<2>::identity(5.0));
  double v0 = 0.0;
  const auto w = oracle::naive_soft_weights({0.5, 0.5}, s, 0.01, &v0);
  EXPECT_NEAR(w[0] + w[1] + v0, 1.0, 1e-15);
  EXPECT_GT(v0, 0.0);
}

TEST(DiscreteLabels, NearestAndTies)
{
  SiteSet<2> s;
  s.positions = {{0.0, 0.0}, {1.0, 0.0}};
  s.metric_factors.assign(2, SymMatrix<2>::identity());
  const std::vector<Vec<2>> pts{{0.2, 0.3}, {0.9, -0.1}, {0.5, 0.7}};
  EXPECT_EQ(oracle::discrete_voronoi_labels(s, pts), (std::vector<int>{0, 1, 0}));
}

TEST(DenseFem, SingularSystemIsAnError)
{
  const GridSpec g{4, 4};
  BoundaryConditions b;
  b.loads.push_back({{1.0, 0.5, 1.0, 0.5}, {0.0, -1.0}});
  EXPECT_THROW(oracle::dense_fem_solve(ProjectedDensityGrid(g, 1.0), DomainMask::all_design(g), b, MaterialModel{}),
               std::invalid_argument);
}

TEST(DenseFem, SizeLimitAndZeroLoad)
{
  BoundaryConditions b;
  b.supports.push_back({{0.0, 0.0, 0.0, 1.0}, true, true});
  b.loads.push_back({{1.0, 0.5, 1.0, 0.5}, {0.0, 0.0}});
  const GridSpec big{33, 4};
  EXPECT_THROW(oracle::dense_fem_solve(ProjectedDensityGrid(big, 1.0), DomainMask::all_design(big), b, MaterialModel{}),
               std::invalid_argument);
  const GridSpec g{4, 2};
  for (double u : oracle::dense_fem_solve(ProjectedDensityGrid(g, 1.0), DomainMask::all_design(g), b, MaterialModel{}))
    EXPECT_EQ(u, 0.0);
}

TEST(QuadratureStiffness, ScalesWithModulus)
{
  const auto a = oracle::quadrature_element_stiffness(0.3, 1.0);
  const auto b = oracle::quadrature_element_stiffness(0.3, 2.5);
  EXPECT_NEAR((b - 2.5 * a).cwiseAbs().maxCoeff(), 0.0, 1e-14);
}
