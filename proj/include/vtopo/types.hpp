#ifndef VTOPO_TYPES_HPP
#define VTOPO_TYPES_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace vtopo {

template <int Dim>
using Vec = std::array<double, Dim>;

template <int Dim>
constexpr double dot(const Vec<Dim>& a, const Vec<Dim>& b) noexcept
{
  double s = 0.0;
  for (int i = 0; i < Dim; ++i) s += a[i] * b[i];
  return s;
}

// size_t parameter so that deduction from std::array works
template <std::size_t N>
constexpr std::array<double, N> operator-(const std::array<double, N>& a, const std::array<double, N>& b) noexcept
{
  std::array<double, N> r{};
  for (std::size_t i = 0; i < N; ++i) r[i] = a[i] - b[i];
  return r;
}

template <int Dim>
constexpr double squared_norm(const Vec<Dim>& a) noexcept { return dot<Dim>(a, a); }

//-----------------------------------------------------------------------------
/// Symmetric Dim x Dim matrix stored as its packed lower triangle, row by row:
/// (0,0), (1,0), (1,1), (2,0), ...
/// Symmetry holds by construction; there is no upper triangle to drift.
template <int Dim>
class SymMatrix
{
public:
  static constexpr int packed_size = Dim * (Dim + 1) / 2;
  using packed_type = std::array<double, packed_size>;

  constexpr SymMatrix() = default;
  constexpr explicit SymMatrix(const packed_type& lower) noexcept : lower_{lower} {}

  static constexpr SymMatrix identity(double scale = 1.0) noexcept
  {
    SymMatrix m;
    for (int i = 0; i < Dim; ++i) m(i, i) = scale;
    return m;
  }

  static constexpr int packed_index(int i, int j) noexcept
  {
    if (i < j) { const int t = i; i = j; j = t; }
    return i * (i + 1) / 2 + j;
  }

  constexpr double operator()(int i, int j) const noexcept { return lower_[packed_index(i, j)]; }
  constexpr double& operator()(int i, int j) noexcept { return lower_[packed_index(i, j)]; }

  constexpr const packed_type& packed() const noexcept { return lower_; }
  constexpr packed_type& packed() noexcept { return lower_; }

  constexpr Vec<Dim> operator*(const Vec<Dim>& v) const noexcept
  {
    Vec<Dim> r{};
    for (int i = 0; i < Dim; ++i)
      for (int j = 0; j < Dim; ++j) r[i] += (*this)(i, j) * v[j];
    return r;
  }

  /// D D^T, which for symmetric D is D^2.
  constexpr SymMatrix gram() const noexcept
  {
    SymMatrix a;
    for (int i = 0; i < Dim; ++i)
      for (int j = 0; j <= i; ++j) {
        double s = 0.0;
        for (int l = 0; l < Dim; ++l) s += (*this)(i, l) * (*this)(j, l);
        a(i, j) = s;
      }
    return a;
  }

  friend constexpr bool operator==(const SymMatrix&, const SymMatrix&) = default;

private:
  packed_type lower_{};
};

//-----------------------------------------------------------------------------
/// Site positions x_m and metric factors D_m of the generalized Voronoi diagram.
template <int Dim>
struct SiteSet
{
  std::vector<Vec<Dim>> positions;
  std::vector<SymMatrix<Dim>> metric_factors;

  std::size_t size() const noexcept { return positions.size(); }

  void validate() const
  {
    if (positions.empty()) throw std::invalid_argument("SiteSet: at least one site required");
    if (positions.size() != metric_factors.size())
      throw std::invalid_argument("SiteSet: positions and metric_factors differ in length");
  }
};

struct FieldConfig
{
  double sharpness = 50.0;        // beta
  double boundary_weight = 0.0;   // eps_s, virtual-point weight
  int neighbor_count = 16;        // k
  double distance_floor = 1e-12;

  void validate() const
  {
    if (!(sharpness >= 1.0)) throw std::invalid_argument("FieldConfig: sharpness must be >= 1");
    if (!(boundary_weight >= 0.0)) throw std::invalid_argument("FieldConfig: boundary_weight must be >= 0");
    if (neighbor_count < 1) throw std::invalid_argument("FieldConfig: neighbor_count must be >= 1");
    if (!(distance_floor > 0.0)) throw std::invalid_argument("FieldConfig: distance_floor must be > 0");
  }
};

//-----------------------------------------------------------------------------
/// Regular 2D element grid. Element (i, j) has index j * nx + i, j = 0 is the
/// bottom row. Physical coordinates put the domain at [0, 1] x [0, ny/nx].
struct GridSpec
{
  int nx = 0;
  int ny = 0;

  std::size_t element_count() const noexcept { return static_cast<std::size_t>(nx) * ny; }
  double element_size() const noexcept { return 1.0 / nx; }
  double width() const noexcept { return 1.0; }
  double height() const noexcept { return static_cast<double>(ny) / nx; }

  std::size_t element_index(int i, int j) const noexcept
  {
    return static_cast<std::size_t>(j) * nx + i;
  }

  Vec<2> centroid(int i, int j) const noexcept
  {
    const double h = element_size();
    return {(i + 0.5) * h, (j + 0.5) * h};
  }

  Vec<2> centroid(std::size_t e) const noexcept
  {
    return centroid(static_cast<int>(e % nx), static_cast<int>(e / nx));
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

enum class ElementState : unsigned char { design, passive_void, passive_solid };

struct DomainMask
{
  GridSpec grid;
  std::vector<ElementState> states;

  static DomainMask all_design(const GridSpec& g)
  {
    return {g, std::vector<ElementState>(g.element_count(), ElementState::design)};
  }

  std::size_t count(ElementState s) const noexcept
  {
    std::size_t c = 0;
    for (auto st : states) c += (st == s);
    return c;
  }

  void validate() const
  {
    if (states.size() != grid.element_count())
      throw std::invalid_argument("DomainMask: state count does not match grid resolution");
    if (count(ElementState::design) == 0)
      throw std::invalid_argument("DomainMask: no design elements");
  }
};

/// Per-element scalar field on a GridSpec (raw or projected density, sensitivities).
struct ScalarGrid
{
  GridSpec grid;
  std::vector<double> values;

  ScalarGrid() = default;
  ScalarGrid(const GridSpec& g, double fill = 0.0) : grid{g}, values(g.element_count(), fill) {}

  double& operator()(int i, int j) { return values[grid.element_index(i, j)]; }
  double operator()(int i, int j) const { return values[grid.element_index(i, j)]; }
};

using DensityGrid = ScalarGrid;
using ProjectedDensityGrid = ScalarGrid;

} // namespace vtopo

#endif // VTOPO_TYPES_HPP
