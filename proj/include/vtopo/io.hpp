#ifndef VTOPO_IO_HPP
#define VTOPO_IO_HPP

// File formats: binary PGM (P5) density images and masks, CSV convergence
// logs, JSON site dumps.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pipeline.hpp"
#include "types.hpp"

namespace vtopo::io {

struct IoError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

//-----------------------------------------------------------------------------
struct GrayImage
{
  int width = 0;
  int height = 0;
  int maxval = 255;
  std::vector<int> pixels;  // row-major, first row is the top of the image
};

/// Pixel = round(255 (1 - rho~)), top row = highest y, so material is dark.
inline GrayImage density_to_image(const ProjectedDensityGrid& grid)
{
  GrayImage img{grid.grid.nx, grid.grid.ny, 255, {}};
  img.pixels.reserve(grid.values.size());
  for (int row = 0; row < img.height; ++row) {
    const int j = img.height - 1 - row;
    for (int i = 0; i < img.width; ++i) {
      const double v = std::clamp(grid(i, j), 0.0, 1.0);
      img.pixels.push_back(static_cast<int>(std::lround(255.0 * (1.0 - v))));
    }
  }
  return img;
}

inline void write_pgm(const GrayImage& img, const std::filesystem::path& path)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << img.width << ' ' << img.height << '\n' << img.maxval << '\n';
  for (int p : img.pixels) {
    if (img.maxval < 256) {
      out.put(static_cast<char>(static_cast<unsigned char>(p)));
    } else {
      out.put(static_cast<char>((p >> 8) & 0xff));
      out.put(static_cast<char>(p & 0xff));
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

inline void write_density_image(const ProjectedDensityGrid& grid, const std::filesystem::path& path)
{
  write_pgm(density_to_image(grid), path);
}

namespace detail {

inline void skip_pgm_space(std::istream& in)
{
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c != EOF && std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_pgm_int(std::istream& in, const std::string& what)
{
  skip_pgm_space(in);
  int v = 0;
  if (!(in >> v)) throw IoError("malformed PGM: cannot read " + what);
  return v;
}

} // namespace detail

/// Reads P2 (ASCII) or P5 (binary) graymaps.
inline GrayImage read_pgm(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (!in || (magic != "P5" && magic != "P2")) throw IoError("malformed PGM: bad magic in " + path.string());
  GrayImage img;
  img.width = detail::read_pgm_int(in, "width");
  img.height = detail::read_pgm_int(in, "height");
  img.maxval = detail::read_pgm_int(in, "maxval");
  if (img.width <= 0 || img.height <= 0 || img.maxval <= 0 || img.maxval > 65535)
    throw IoError("malformed PGM: bad header in " + path.string());
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  img.pixels.resize(n);
  if (magic == "P5") {
    in.get();  // single whitespace after maxval
    for (std::size_t k = 0; k < n; ++k) {
      int v = in.get();
      if (img.maxval > 255) v = (v << 8) | in.get();
      if (!in) throw IoError("malformed PGM: truncated pixel data in " + path.string());
      img.pixels[k] = v;
    }
  } else {
    for (std::size_t k = 0; k < n; ++k) img.pixels[k] = detail::read_pgm_int(in, "pixel");
  }
  for (int v : img.pixels)
    if (v < 0 || v > img.maxval) throw IoError("malformed PGM: pixel out of range in " + path.string());
  return img;
}

/// Mask classes from a graymap whose size equals the grid or an integer
/// multiple of it (blocks are averaged): >= 2/3 of maxval is design, <= 1/3
/// passive void, anything between passive solid.
inline DomainMask mask_from_image(const GrayImage& img, const GridSpec& grid)
{
  if (img.width % grid.nx != 0 || img.height % grid.ny != 0 || img.width / grid.nx != img.height / grid.ny)
    throw IoError("mask resolution " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                  " is not a uniform integer multiple of the grid " + std::to_string(grid.nx) + "x" +
                  std::to_string(grid.ny));
  const int f = img.width / grid.nx;
  DomainMask mask{grid, std::vector<ElementState>(grid.element_count(), ElementState::design)};
  for (int j = 0; j < grid.ny; ++j)
    for (int i = 0; i < grid.nx; ++i) {
      double sum = 0.0;
      for (int b = 0; b < f; ++b)
        for (int a = 0; a < f; ++a) {
          const int row = (grid.ny - 1 - j) * f + b;
          sum += img.pixels[static_cast<std::size_t>(row) * img.width + i * f + a];
        }
      const double v = sum / (f * f) / img.maxval;
      ElementState s = ElementState::passive_solid;
      if (v >= 2.0 / 3.0) s = ElementState::design;
      else if (v <= 1.0 / 3.0) s = ElementState::passive_void;
      mask.states[grid.element_index(i, j)] = s;
    }
  if (mask.count(ElementState::design) == 0) throw IoError("mask has no design elements");
  return mask;
}

inline DomainMask load_mask(const std::filesystem::path& path, const GridSpec& grid)
{
  return mask_from_image(read_pgm(path), grid);
}

//-----------------------------------------------------------------------------
inline constexpr const char* log_header =
    "iteration,compliance,volume_fraction,delta,gamma,fem_residual,t_fem_s,t_grad_s,t_mma_s";

inline void write_log_row(std::ostream& out, const IterationRecord& r)
{
  out << r.iteration << ',' << std::setprecision(17) << r.compliance << ',' << r.volume_fraction << ',' << r.delta
      << ',' << r.gamma << ',' << r.fem_residual << ',' << r.t_fem_s << ',' << r.t_grad_s << ',' << r.t_mma_s << '\n';
}

inline void write_log(const OptHistory& history, const std::filesystem::path& path)
{
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << log_header << '\n';
  for (const auto& r : history) write_log_row(out, r);
}

inline OptHistory read_log(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != log_header) throw IoError("unexpected log header in " + path.string());
  OptHistory h;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    IterationRecord r;
    char c = 0;
    ls >> r.iteration >> c >> r.compliance >> c >> r.volume_fraction >> c >> r.delta >> c >> r.gamma >> c >>
        r.fem_residual >> c >> r.t_fem_s >> c >> r.t_grad_s >> c >> r.t_mma_s;
    if (!ls) throw IoError("malformed log row: " + line);
    h.push_back(r);
  }
  return h;
}

//-----------------------------------------------------------------------------
inline nlohmann::json sites_to_json(const SiteSet<2>& sites, int iteration)
{
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t m = 0; m < sites.size(); ++m) {
    const auto& p = sites.positions[m];
    const auto& d = sites.metric_factors[m].packed();
    arr.push_back({{"position", {p[0], p[1]}}, {"metric", {d[0], d[1], d[2]}}});
  }
  return {{"iteration", iteration}, {"sites", arr}};
}

inline void write_sites(const SiteSet<2>& sites, int iteration, const std::filesystem::path& path)
{
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << sites_to_json(sites, iteration).dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

inline SiteSet<2> sites_from_json(const nlohmann::json& doc)
{
  SiteSet<2> s;
  try {
    for (const auto& rec : doc.at("sites")) {
      const auto& p = rec.at("position");
      const auto& d = rec.at("metric");
      if (p.size() != 2 || d.size() != 3) throw IoError("site record needs 2 coordinates and 3 metric entries");
      s.positions.push_back({p[0].get<double>(), p[1].get<double>()});
      s.metric_factors.push_back(SymMatrix<2>({d[0].get<double>(), d[1].get<double>(), d[2].get<double>()}));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed site dump: ") + e.what());
  }
  s.validate();
  return s;
}

inline SiteSet<2> read_sites(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed site dump " + path.string() + ": " + e.what());
  }
  return sites_from_json(doc);
}

//-----------------------------------------------------------------------------
/// Writes the convergence log as iterations arrive, plus a density image and a
/// site dump every `period` iterations (iteration % period == 0).
class RunEmitter
{
public:
  RunEmitter(std::filesystem::path directory, int period) : dir_{std::move(directory)}, period_{period}
  {
    if (period_ < 1) throw IoError("emission period must be >= 1");
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    log_.open(dir_ / "log.csv");
    if (!log_) throw IoError("cannot write to output directory " + dir_.string());
    log_ << log_header << '\n';
  }

  void operator()(int iteration, const IterationRecord& rec, const ProjectedDensityGrid& rho, const SiteSet<2>& sites)
  {
    write_log_row(log_, rec);
    log_.flush();
    if (iteration % period_ == 0) {
      write_density_image(rho, dir_ / frame_name("density", iteration, ".pgm"));
      write_sites(sites, iteration, dir_ / frame_name("sites", iteration, ".json"));
    }
  }

  const std::filesystem::path& directory() const noexcept { return dir_; }

  static std::string frame_name(const std::string& stem, int iteration, const std::string& ext)
  {
    std::ostringstream os;
    os << stem << '_' << std::setw(4) << std::setfill('0') << iteration << ext;
    return os.str();
  }

private:
  std::filesystem::path dir_;
  int period_;
  std::ofstream log_;
};

} // namespace vtopo::io

#endif // VTOPO_IO_HPP
