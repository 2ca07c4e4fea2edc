#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "vtopo/config.hpp"
#include "vtopo/io.hpp"
#include "vtopo/voronoi_field.hpp"

using namespace vtopo;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
  const fs::path dir = fs::temp_directory_path() / "vtopo_test_config_io" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& s)
{
  std::ofstream(p) << s;
}

std::string config_error(const json& doc)
{
  try {
    config_from_json(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

io::GrayImage uniform_image(int w, int h, int v)
{
  return {w, h, 255, std::vector<int>(static_cast<std::size_t>(w) * h, v)};
}

} // namespace

TEST(Presets, AllLoad)
{
  for (const auto& name : preset_names()) {
    if (name == "masked") continue;
    EXPECT_NO_THROW(preset_config(name)) << name;
  }
}

TEST(Presets, Cantilever)
{
  const auto rc = preset_config("cantilever");
  const Problem& p = rc.problem;
  EXPECT_EQ(p.grid.nx, 128);
  EXPECT_EQ(p.grid.ny, 64);
  EXPECT_DOUBLE_EQ(p.volume_fraction, 0.35);
  EXPECT_EQ(p.init.coarse_nx * p.init.coarse_ny, 18);
  EXPECT_EQ(p.init.initial_metric.packed(), SymMatrix<2>::identity(150.0).packed());
  const auto rb = resolve_boundary(p.grid, p.bcs);
  for (int j = 0; j <= p.grid.ny; ++j) {
    const std::size_t n = static_cast<std::size_t>(j) * (p.grid.nx + 1);
    EXPECT_TRUE(rb.fixed[2 * n] && rb.fixed[2 * n + 1]);
  }
  ASSERT_EQ(rb.load_nodes.size(), 1u);
  EXPECT_EQ(rb.load_nodes[0], static_cast<std::size_t>(32 * 129 + 128));
  EXPECT_EQ(rb.force[2 * rb.load_nodes[0] + 1], -1.0);
}

TEST(Presets, FramedCantilever)
{
  const auto rc = preset_config("framed_cantilever");
  const Problem& p = rc.problem;
  const auto rb = resolve_boundary(p.grid, p.bcs);
  double total = 0.0;
  for (std::size_t n : rb.load_nodes) {
    const double y = static_cast<double>(n / (p.grid.nx + 1)) / p.grid.ny;
    EXPECT_GE(y, 0.4 - 1e-12);
    EXPECT_LE(y, 0.6 + 1e-12);
    total += rb.force[2 * n + 1];
  }
  EXPECT_NEAR(total, -1.0, 1e-12);
  // thickness 0.01 of a 128-wide grid rounds to one element
  EXPECT_EQ(p.mask.states[p.grid.element_index(0, 10)], ElementState::passive_solid);
  EXPECT_EQ(p.mask.states[p.grid.element_index(10, 0)], ElementState::passive_solid);
  EXPECT_EQ(p.mask.states[p.grid.element_index(1, 1)], ElementState::design);
  EXPECT_EQ(p.mask.count(ElementState::passive_solid), static_cast<std::size_t>(2 * 128 + 2 * 62));
}

TEST(Config, OverridesMergeIntoPreset)
{
  const auto rc = config_from_json({{"preset", "cantilever"},
                                    {"grid", {{"nx", 32}, {"ny", 16}}},
                                    {"sites", {{"seed", 9}}},
                                    {"solver", {{"preconditioner", "jacobi"}}}});
  EXPECT_EQ(rc.problem.grid.nx, 32);
  EXPECT_EQ(rc.problem.init.seed, 9u);
  EXPECT_EQ(rc.problem.init.coarse_nx, 6);
  EXPECT_EQ(rc.problem.solver.preconditioner, Preconditioner::jacobi);
}

TEST(Config, SchemaErrors)
{
  EXPECT_NE(config_error({{"preset", "cantilever"}, {"volume_fraction", 1.5}}).find("volume_fraction"),
            std::string::npos);
  EXPECT_NE(config_error({{"preset", "cantilever"}, {"volum_fraction", 0.3}}).find("volum_fraction"),
            std::string::npos);
  EXPECT_NE(config_error({{"preset", "cantilever"}, {"field", {{"sharpnes", 3}}}}).find("field.sharpnes"),
            std::string::npos);
  EXPECT_NE(config_error({{"preset", "nope"}}).find("preset"), std::string::npos);
  EXPECT_NE(config_error({{"preset", "cantilever"}, {"grid", {{"nx", "wide"}}}}).find("grid.nx"), std::string::npos);
  EXPECT_FALSE(config_error({{"preset", "cantilever"}, {"solver", {{"preconditioner", "ilu"}}}}).empty());
  EXPECT_FALSE(config_error({{"preset", "cantilever"}, {"supports", json::array()}}).empty());
  EXPECT_FALSE(config_error({{"preset", "masked"}}).empty());
  EXPECT_FALSE(config_error(json::array()).empty());
}

TEST(Config, LoadFileErrors)
{
  EXPECT_THROW(load_config("/nonexistent/vtopo.json"), ConfigError);
  const auto dir = scratch("bad_json");
  write_text(dir / "c.json", "{ not json");
  EXPECT_THROW(load_config(dir / "c.json"), ConfigError);
  EXPECT_THROW(load_config(fs::path(VTOPO_TEST_DATA_DIR) / "bad_volume.json"), ConfigError);
}

TEST(Config, MaskPathResolvesAgainstConfigDirectory)
{
  const auto dir = scratch("mask_rel");
  auto img = uniform_image(16, 8, 255);
  for (int x = 0; x < 4; ++x) img.pixels[static_cast<std::size_t>(x)] = 0;  // top-left row goes void
  io::write_pgm(img, dir / "m.pgm");
  write_text(dir / "c.json",
             R"({"preset": "masked", "grid": {"nx": 16, "ny": 8}, "sites": {"coarse_grid": [2, 1]}, "mask": "m.pgm"})");
  const auto rc = load_config(dir / "c.json");
  EXPECT_EQ(rc.problem.mask.count(ElementState::passive_void), 4u);
  EXPECT_EQ(rc.problem.mask.states[rc.problem.grid.element_index(0, 7)], ElementState::passive_void);
}

TEST(Mask, ClassThresholds)
{
  const GridSpec g{3, 1};
  io::GrayImage img{3, 1, 255, {255, 0, 128}};
  const auto m = io::mask_from_image(img, g);
  EXPECT_EQ(m.states[0], ElementState::design);
  EXPECT_EQ(m.states[1], ElementState::passive_void);
  EXPECT_EQ(m.states[2], ElementState::passive_solid);
  EXPECT_EQ(io::mask_from_image(uniform_image(6, 2, 255), g).count(ElementState::design), 3u);
}

TEST(Mask, Errors)
{
  const GridSpec g{4, 2};
  EXPECT_THROW(io::mask_from_image(uniform_image(4, 2, 0), g), io::IoError);
  EXPECT_THROW(io::mask_from_image(uniform_image(5, 2, 255), g), io::IoError);
  EXPECT_THROW(io::mask_from_image(uniform_image(8, 2, 255), g), io::IoError);
  EXPECT_THROW(io::load_mask("/nonexistent.pgm", g), io::IoError);
  const auto dir = scratch("bad_pgm");
  write_text(dir / "x.pgm", "P6\n1 1\n255\n");
  EXPECT_THROW(io::read_pgm(dir / "x.pgm"), io::IoError);
  write_text(dir / "t.pgm", "P5\n4 4\n255\nab");
  EXPECT_THROW(io::read_pgm(dir / "t.pgm"), io::IoError);
}

TEST(Mask, ContourCountsMatchHistogramAndVoidHasZeroDensity)
{
  // elliptical design region with a gray wall ring, black outside
  const int w = 64, h = 32;
  io::GrayImage img{w, h, 255, std::vector<int>(static_cast<std::size_t>(w) * h, 0)};
  std::size_t white = 0, gray = 0, black = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double u = (c + 0.5 - w / 2.0) / (w / 2.0), v = (r + 0.5 - h / 2.0) / (h / 2.0);
      const double q = u * u + v * v;
      int val = 0;
      if (q < 0.7) val = 255;
      else if (q < 0.9) val = 128;
      img.pixels[static_cast<std::size_t>(r) * w + c] = val;
      (val == 255 ? white : val == 128 ? gray : black) += 1;
    }
  const auto dir = scratch("contour");
  io::write_pgm(img, dir / "wing.pgm");
  const GridSpec g{w, h};
  const auto mask = io::load_mask(dir / "wing.pgm", g);
  EXPECT_EQ(mask.count(ElementState::design), white);
  EXPECT_EQ(mask.count(ElementState::passive_solid), gray);
  EXPECT_EQ(mask.count(ElementState::passive_void), black);

  SiteSet<2> s;
  s.positions = {{0.3, 0.25}, {0.7, 0.25}};
  s.metric_factors.assign(2, SymMatrix<2>::identity(40.0));
  FieldConfig cfg;
  cfg.neighbor_count = 2;
  const auto r = rasterize_density(s, mask, cfg, build_index(s), false);
  for (std::size_t e = 0; e < mask.states.size(); ++e) {
    if (mask.states[e] == ElementState::passive_void) {
      EXPECT_EQ(r.density.values[e], 0.0);
    } else if (mask.states[e] == ElementState::passive_solid) {
      EXPECT_EQ(r.density.values[e], 1.0);
    }
  }
}

TEST(Pgm, DensityImageExamples)
{
  const GridSpec g{4, 2};
  for (double v : {1.0, 0.0}) {
    const auto img = io::density_to_image(ProjectedDensityGrid(g, v));
    for (int p : img.pixels) EXPECT_EQ(p, v == 1.0 ? 0 : 255);
  }
  ProjectedDensityGrid cb(g);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) cb(i, j) = (i + j) % 2;
  const auto img = io::density_to_image(cb);
  for (int row = 0; row < img.height; ++row)
    for (int c = 0; c < img.width; ++c) {
      const int j = img.height - 1 - row;
      EXPECT_EQ(img.pixels[static_cast<std::size_t>(row) * img.width + c], (c + j) % 2 ? 0 : 255);
    }
}

TEST(Pgm, RoundTrip)
{
  const auto dir = scratch("pgm");
  io::GrayImage img{3, 2, 255, {0, 17, 255, 128, 1, 254}};
  io::write_pgm(img, dir / "a.pgm");
  const auto back = io::read_pgm(dir / "a.pgm");
  EXPECT_EQ(back.width, 3);
  EXPECT_EQ(back.height, 2);
  EXPECT_EQ(back.pixels, img.pixels);
  write_text(dir / "b.pgm", "P2\n# comment\n2 1\n15\n0 15\n");
  const auto ascii = io::read_pgm(dir / "b.pgm");
  EXPECT_EQ(ascii.maxval, 15);
  EXPECT_EQ(ascii.pixels, (std::vector<int>{0, 15}));
}

TEST(Log, RoundTrip)
{
  const auto dir = scratch("log");
  OptHistory h;
  h.push_back({0, 123.456789012345678, 0.35, 0.1, 1.0, 1e-9, 0.01, 0.002, 1e-5});
  h.push_back({1, 1.0 / 3.0, 0.3499, 1e-5, 2.0, 3e-10, 0.02, 0.003, 2e-5});
  io::write_log(h, dir / "log.csv");
  const auto back = io::read_log(dir / "log.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].iteration, 1);
  EXPECT_EQ(back[0].compliance, h[0].compliance);
  EXPECT_EQ(back[1].compliance, h[1].compliance);
  EXPECT_EQ(back[1].gamma, 2.0);
}

TEST(Sites, RoundTripAtFullPrecision)
{
  const auto dir = scratch("sites");
  SiteSet<2> s;
  s.positions = {{0.1 + 1e-17, 1.0 / 3.0}, {-0.05, 0.6}};
  s.metric_factors = {SymMatrix<2>({150.0, 0.1234567890123, 149.0}), SymMatrix<2>({1.0 / 7.0, -3.0, 2000.0})};
  io::write_sites(s, 12, dir / "s.json");
  const auto back = io::read_sites(dir / "s.json");
  EXPECT_EQ(back.positions, s.positions);
  for (std::size_t m = 0; m < s.size(); ++m) EXPECT_EQ(back.metric_factors[m].packed(), s.metric_factors[m].packed());
  write_text(dir / "bad.json", R"({"sites": [{"position": [1]}]})");
  EXPECT_THROW(io::read_sites(dir / "bad.json"), io::IoError);
}

TEST(RunEmitter, CountsFiles)
{
  const auto dir = scratch("emit");
  io::RunEmitter em(dir / "out", 1);
  const GridSpec g{4, 2};
  SiteSet<2> s;
  s.positions = {{0.5, 0.25}};
  s.metric_factors = {SymMatrix<2>::identity(10.0)};
  for (int it = 0; it < 3; ++it) em(it, IterationRecord{.iteration = it}, ProjectedDensityGrid(g, 0.5), s);
  int images = 0, dumps = 0;
  for (const auto& e : fs::directory_iterator(dir / "out")) {
    images += e.path().extension() == ".pgm";
    dumps += e.path().extension() == ".json";
  }
  EXPECT_EQ(images, 3);
  EXPECT_EQ(dumps, 3);
  std::ifstream in(dir / "out" / "log.csv");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_EQ(lines, 4);
  EXPECT_EQ(io::RunEmitter::frame_name("density", 7, ".pgm"), "density_0007.pgm");
  EXPECT_THROW(io::RunEmitter(dir / "x", 0), io::IoError);
}

TEST(RunEmitter, PeriodSkipsFrames)
{
  const auto dir = scratch("emit_period");
  io::RunEmitter em(dir, 2);
  SiteSet<2> s;
  s.positions = {{0.5, 0.25}};
  s.metric_factors = {SymMatrix<2>::identity(10.0)};
  for (int it = 0; it < 5; ++it) em(it, IterationRecord{.iteration = it}, ProjectedDensityGrid({2, 1}, 0.5), s);
  EXPECT_TRUE(fs::exists(dir / "density_0004.pgm"));
  EXPECT_FALSE(fs::exists(dir / "density_0003.pgm"));
}
