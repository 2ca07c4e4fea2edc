#ifndef VTOPO_CONFIG_HPP
#define VTOPO_CONFIG_HPP

// JSON run configuration and the built-in problem presets.
//
// A config may name a preset; the preset document is loaded first and the
// config's own keys are merged over it (objects merge recursively, every
// other value replaces). The merged document is then validated strictly:
// unknown keys, wrong types and out-of-range values are rejected with the
// offending key path in the message.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "io.hpp"
#include "pipeline.hpp"

namespace vtopo {

struct ConfigError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

struct RunConfig
{
  Problem problem;
  std::string preset;
  std::filesystem::path output_directory = "out";
  int emit_every = 10;
  std::optional<std::filesystem::path> mask_path;
  double frame_thickness = 0.0;
};

using json = nlohmann::json;

inline std::vector<std::string> preset_names()
{
  return {"cantilever", "framed_cantilever", "arch_two_sites", "pushdown_two_sites", "free_boundary_cantilever",
          "masked"};
}

/// Preset documents. Geometry is in fractions of the domain; metric values
/// are in the physical frame where the domain width is 1.
inline json preset_document(const std::string& name)
{
  const json left_edge_fixed = json::array({{{"region", {0.0, 0.0, 0.0, 1.0}}, {"axes", "xy"}}});
  if (name == "cantilever" || name == "masked") {
    json d = {
        {"grid", {{"nx", 128}, {"ny", 64}}},
        {"volume_fraction", 0.35},
        {"max_iterations", 250},
        {"field", {{"sharpness", 50.0}, {"neighbor_count", 16}}},
        {"sites", {{"coarse_grid", {6, 3}}, {"initial_metric", {150.0, 0.0, 150.0}}, {"seed", 1}}},
        {"supports", left_edge_fixed},
        {"loads", json::array({{{"region", {1.0, 0.5, 1.0, 0.5}}, {"force", {0.0, -1.0}}}})},
    };
    return d;
  }
  if (name == "framed_cantilever") {
    return {
        {"grid", {{"nx", 128}, {"ny", 64}}},
        {"volume_fraction", 0.35},
        {"max_iterations", 250},
        {"frame_thickness", 0.01},
        {"field", {{"sharpness", 50.0}, {"neighbor_count", 16}}},
        {"sites", {{"coarse_grid", {14, 7}}, {"initial_metric", {350.0, 0.0, 350.0}}, {"seed", 1}}},
        {"supports", left_edge_fixed},
        {"loads", json::array({{{"region", {1.0, 0.4, 1.0, 0.6}}, {"force", {0.0, -1.0}}}})},
    };
  }
  if (name == "arch_two_sites") {
    return {
        {"grid", {{"nx", 64}, {"ny", 64}}},
        {"volume_fraction", 0.2},
        {"max_iterations", 250},
        {"optimize_positions", false},
        {"field", {{"sharpness", 50.0}, {"neighbor_count", 2}}},
        {"sites", {{"positions", {{0.5, 0.2}, {0.5, 0.8}}}, {"initial_metric", {80.0, 0.0, 80.0}}}},
        {"supports", json::array({{{"region", {0.0, 0.0, 0.0, 0.0}}, {"axes", "xy"}},
                                  {{"region", {1.0, 0.0, 1.0, 0.0}}, {"axes", "xy"}}})},
        {"loads", json::array({{{"region", {0.5, 0.5, 0.5, 0.5}}, {"force", {0.0, -1.0}}}})},
    };
  }
  if (name == "pushdown_two_sites") {
    return {
        {"grid", {{"nx", 64}, {"ny", 64}}},
        {"volume_fraction", 0.2},
        {"max_iterations", 150},
        {"optimize_metrics", false},
        {"field", {{"sharpness", 50.0}, {"neighbor_count", 2}}},
        {"sites", {{"positions", {{0.2, 0.45}, {0.6, 0.7}}}, {"initial_metric", {80.0, 0.0, 80.0}}}},
        {"supports", json::array({{{"region", {0.0, 0.0, 1.0, 0.0}}, {"axes", "xy"}}})},
        {"loads", json::array({{{"region", {0.45, 1.0, 0.55, 1.0}}, {"force", {0.0, -1.0}}}})},
    };
  }
  if (name == "free_boundary_cantilever") {
    return {
        {"grid", {{"nx", 128}, {"ny", 64}}},
        {"volume_fraction", 0.35},
        {"max_iterations", 250},
        {"optimize_metrics", false},
        {"field", {{"sharpness", 50.0}, {"neighbor_count", 16}, {"boundary_weight", 1e-7}}},
        {"sites", {{"coarse_grid", {8, 4}}, {"initial_metric", {250.0, 0.0, 250.0}}, {"seed", 1}}},
        {"supports", left_edge_fixed},
        {"loads", json::array({{{"region", {1.0, 0.5, 1.0, 0.5}}, {"force", {0.0, -1.0}}}})},
    };
  }
  throw ConfigError("preset: unknown preset '" + name + "'");
}

namespace detail {

inline void merge_into(json& base, const json& over)
{
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge_into(base[it.key()], *it);
    else
      base[it.key()] = *it;
  }
}

/// Strict reader over one JSON object: tracks consumed keys so leftovers can
/// be reported as unknown.
class ObjectReader
{
public:
  ObjectReader(const json& obj, std::string path) : obj_{obj}, path_{std::move(path)}
  {
    if (!obj_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json& raw(const std::string& key)
  {
    seen_.insert(key);
    return obj_.at(key);
  }

  template <typename T>
  void read(const std::string& key, T& out)
  {
    if (!obj_.contains(key)) return;
    seen_.insert(key);
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(child(key) + ": wrong type");
    }
    if constexpr (std::is_same_v<T, int> || std::is_same_v<T, double>) {
      if (!obj_.at(key).is_number()) throw ConfigError(child(key) + ": expected a number");
    }
  }

  std::vector<double> numbers(const std::string& key, std::size_t n)
  {
    seen_.insert(key);
    const json& v = obj_.at(key);
    if (!v.is_array() || v.size() != n) throw ConfigError(child(key) + ": expected " + std::to_string(n) + " numbers");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) throw ConfigError(child(key) + ": expected numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }

  void finish() const
  {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(child(it.key()) + ": unknown key");
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "<root>" : path_; }

private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& key, const std::string& what)
{
  if (!ok) throw ConfigError(key + ": " + what);
}

inline Region read_region(ObjectReader& r, const std::string& key)
{
  const auto v = r.numbers(key, 4);
  const Region reg{v[0], v[1], v[2], v[3]};
  require(reg.x0 <= reg.x1 && reg.y0 <= reg.y1, r.child(key), "region must be [x0, y0, x1, y1] with x0<=x1, y0<=y1");
  for (double c : v) require(c >= 0.0 && c <= 1.0, r.child(key), "region coordinates are fractions in [0,1]");
  return reg;
}

/// Passive-solid elements within `thickness` (in domain-width units) of the border.
inline void apply_frame(DomainMask& mask, double thickness)
{
  if (thickness <= 0.0) return;
  const GridSpec& g = mask.grid;
  const int t = std::max(1, static_cast<int>(std::lround(thickness * g.nx)));
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      if (i < t || j < t || i >= g.nx - t || j >= g.ny - t) {
        auto& s = mask.states[g.element_index(i, j)];
        if (s == ElementState::design) s = ElementState::passive_solid;
      }
}

} // namespace detail

/// Builds a validated RunConfig from a (possibly preset-referencing) document.
/// Relative mask paths resolve against `base_dir`.
inline RunConfig config_from_json(const json& user, const std::filesystem::path& base_dir = {})
{
  using detail::ObjectReader;
  using detail::require;
  if (!user.is_object()) throw ConfigError("<root>: expected an object");

  RunConfig rc;
  json doc = json::object();
  if (user.contains("preset")) {
    if (!user.at("preset").is_string()) throw ConfigError("preset: expected a string");
    rc.preset = user.at("preset").get<std::string>();
    doc = preset_document(rc.preset);
  }
  detail::merge_into(doc, user);

  ObjectReader root(doc, "");
  Problem& p = rc.problem;
  if (root.has("preset")) root.read("preset", rc.preset);

  require(root.has("grid"), "grid", "missing");
  {
    ObjectReader g(root.raw("grid"), "grid");
    require(g.has("nx") && g.has("ny"), "grid", "needs nx and ny");
    g.read("nx", p.grid.nx);
    g.read("ny", p.grid.ny);
    g.finish();
    require(p.grid.nx >= 1 && p.grid.nx <= 4096, "grid.nx", "must lie in [1, 4096]");
    require(p.grid.ny >= 1 && p.grid.ny <= 4096, "grid.ny", "must lie in [1, 4096]");
  }

  root.read("volume_fraction", p.volume_fraction);
  require(p.volume_fraction > 0.0 && p.volume_fraction < 1.0, "volume_fraction", "must lie in (0,1)");
  root.read("max_iterations", p.max_iterations);
  require(p.max_iterations >= 0, "max_iterations", "must be >= 0");
  root.read("design_tolerance", p.design_tolerance);
  require(p.design_tolerance >= 0.0, "design_tolerance", "must be >= 0");
  root.read("compliance_tolerance", p.compliance_tolerance);
  require(p.compliance_tolerance >= 0.0, "compliance_tolerance", "must be >= 0");
  root.read("optimize_positions", p.optimize_positions);
  root.read("optimize_metrics", p.optimize_metrics);
  require(p.optimize_positions || p.optimize_metrics, "optimize_positions",
          "at least one of optimize_positions / optimize_metrics must be true");
  root.read("count_passive_solid_in_volume", p.volume.count_passive_solid);
  root.read("frame_thickness", rc.frame_thickness);
  require(rc.frame_thickness >= 0.0 && rc.frame_thickness < 0.5, "frame_thickness", "must lie in [0, 0.5)");

  if (root.has("field")) {
    ObjectReader f(root.raw("field"), "field");
    f.read("sharpness", p.field.sharpness);
    f.read("boundary_weight", p.field.boundary_weight);
    f.read("neighbor_count", p.field.neighbor_count);
    f.read("distance_floor", p.field.distance_floor);
    f.finish();
    require(p.field.sharpness >= 1.0, "field.sharpness", "must be >= 1");
    require(p.field.boundary_weight >= 0.0, "field.boundary_weight", "must be >= 0");
    require(p.field.neighbor_count >= 1, "field.neighbor_count", "must be >= 1");
    require(p.field.distance_floor > 0.0, "field.distance_floor", "must be > 0");
  }
  if (root.has("projection")) {
    ObjectReader f(root.raw("projection"), "projection");
    f.read("threshold", p.projection.threshold);
    f.read("initial_steepness", p.projection.steepness);
    f.read("doubling_period", p.projection.doubling_period);
    f.read("steepness_cap", p.projection.steepness_cap);
    f.finish();
    require(p.projection.threshold > 0.0 && p.projection.threshold < 1.0, "projection.threshold", "must lie in (0,1)");
    require(p.projection.doubling_period >= 1, "projection.doubling_period", "must be >= 1");
    require(p.projection.steepness_cap >= 1.0, "projection.steepness_cap", "must be >= 1");
    require(p.projection.steepness >= 1.0, "projection.initial_steepness", "must be >= 1");
  }
  if (root.has("material")) {
    ObjectReader f(root.raw("material"), "material");
    f.read("E0", p.material.E0);
    f.read("E_min", p.material.E_min);
    f.read("poisson", p.material.poisson);
    f.read("penal", p.material.penal);
    f.finish();
    require(p.material.E_min > 0.0 && p.material.E_min < p.material.E0, "material.E_min", "need 0 < E_min < E0");
    require(p.material.poisson > 0.0 && p.material.poisson < 0.5, "material.poisson", "must lie in (0, 0.5)");
    require(p.material.penal >= 1.0, "material.penal", "must be >= 1");
  }
  if (root.has("solver")) {
    ObjectReader f(root.raw("solver"), "solver");
    f.read("tolerance", p.solver.tolerance);
    f.read("max_iterations", p.solver.max_iterations);
    if (f.has("preconditioner")) {
      std::string pc;
      f.read("preconditioner", pc);
      if (pc == "multigrid")
        p.solver.preconditioner = Preconditioner::multigrid;
      else if (pc == "jacobi")
        p.solver.preconditioner = Preconditioner::jacobi;
      else
        throw ConfigError("solver.preconditioner: must be \"multigrid\" or \"jacobi\"");
    }
    f.finish();
    require(p.solver.tolerance > 0.0, "solver.tolerance", "must be > 0");
    require(p.solver.max_iterations >= 1, "solver.max_iterations", "must be >= 1");
  }
  if (root.has("mma")) {
    ObjectReader f(root.raw("mma"), "mma");
    f.read("move_limit", p.mma.move_limit);
    f.read("asymptote_init", p.mma.asymptote_init);
    f.read("asymptote_increase", p.mma.asymptote_increase);
    f.read("asymptote_decrease", p.mma.asymptote_decrease);
    f.finish();
    require(p.mma.move_limit > 0.0 && p.mma.move_limit <= 1.0, "mma.move_limit", "must lie in (0,1]");
    require(p.mma.asymptote_init > 0.0, "mma.asymptote_init", "must be > 0");
  }
  if (root.has("bounds")) {
    ObjectReader f(root.raw("bounds"), "bounds");
    f.read("position_margin", p.bounds.position_margin);
    f.read("diagonal_min", p.bounds.diagonal_min);
    f.read("diagonal_max", p.bounds.diagonal_max);
    f.read("off_diagonal_max", p.bounds.off_diagonal_max);
    f.finish();
    require(p.bounds.position_margin >= 0.0, "bounds.position_margin", "must be >= 0");
    require(p.bounds.diagonal_max > p.bounds.diagonal_min, "bounds.diagonal_max", "must exceed diagonal_min");
    require(p.bounds.off_diagonal_max > 0.0, "bounds.off_diagonal_max", "must be > 0");
  }

  require(root.has("sites"), "sites", "missing");
  {
    ObjectReader s(root.raw("sites"), "sites");
    if (s.has("coarse_grid")) {
      const auto cg = s.numbers("coarse_grid", 2);
      p.init.coarse_nx = static_cast<int>(cg[0]);
      p.init.coarse_ny = static_cast<int>(cg[1]);
      require(cg[0] >= 1 && cg[1] >= 1 && cg[0] == p.init.coarse_nx && cg[1] == p.init.coarse_ny,
              "sites.coarse_grid", "must be two positive integers");
      require(static_cast<std::size_t>(p.init.coarse_nx) * p.init.coarse_ny <= p.grid.element_count(),
              "sites.coarse_grid", "has more cells than the simulation grid");
    }
    if (s.has("initial_metric")) {
      const auto m = s.numbers("initial_metric", 3);
      p.init.initial_metric = SymMatrix<2>({m[0], m[1], m[2]});
    }
    if (s.has("seed")) {
      long long seed = 0;
      s.read("seed", seed);
      require(seed >= 0, "sites.seed", "must be >= 0");
      p.init.seed = static_cast<std::uint64_t>(seed);
    }
    if (s.has("region")) p.init.region = detail::read_region(s, "region");
    if (s.has("positions")) {
      const json& arr = s.raw("positions");
      require(arr.is_array() && !arr.empty(), "sites.positions", "expected a nonempty array of [x, y]");
      for (const auto& pt : arr) {
        require(pt.is_array() && pt.size() == 2 && pt[0].is_number() && pt[1].is_number(), "sites.positions",
                "expected [x, y] pairs");
        p.init.explicit_positions.push_back({pt[0].get<double>(), pt[1].get<double>()});
      }
    }
    s.finish();
    require(s.has("coarse_grid") || s.has("positions"), "sites", "needs coarse_grid or positions");
  }

  require(root.has("supports"), "supports", "missing");
  {
    const json& arr = root.raw("supports");
    require(arr.is_array() && !arr.empty(), "supports", "expected a nonempty array");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      ObjectReader s(arr[k], "supports[" + std::to_string(k) + "]");
      require(s.has("region"), s.child("region"), "missing");
      SupportSpec sp;
      sp.region = detail::read_region(s, "region");
      std::string axes = "xy";
      s.read("axes", axes);
      require(axes == "x" || axes == "y" || axes == "xy", s.child("axes"), "must be \"x\", \"y\" or \"xy\"");
      sp.fix_x = axes.find('x') != std::string::npos;
      sp.fix_y = axes.find('y') != std::string::npos;
      s.finish();
      p.bcs.supports.push_back(sp);
    }
  }
  require(root.has("loads"), "loads", "missing");
  {
    const json& arr = root.raw("loads");
    require(arr.is_array() && !arr.empty(), "loads", "expected a nonempty array");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      ObjectReader s(arr[k], "loads[" + std::to_string(k) + "]");
      require(s.has("region") && s.has("force"), s.where(), "needs region and force");
      LoadSpec ld;
      ld.region = detail::read_region(s, "region");
      const auto f = s.numbers("force", 2);
      ld.force = {f[0], f[1]};
      s.finish();
      p.bcs.loads.push_back(ld);
    }
  }

  if (root.has("mask")) {
    std::string m;
    root.read("mask", m);
    std::filesystem::path mp(m);
    if (mp.is_relative() && !base_dir.empty()) mp = base_dir / mp;
    rc.mask_path = mp;
  }
  if (root.has("output")) {
    ObjectReader o(root.raw("output"), "output");
    std::string dir = rc.output_directory.string();
    o.read("directory", dir);
    rc.output_directory = dir;
    o.read("emit_every", rc.emit_every);
    o.finish();
    require(rc.emit_every >= 1, "output.emit_every", "must be >= 1");
  }
  root.finish();

  if (rc.preset == "masked" && !rc.mask_path)
    throw ConfigError("mask: preset 'masked' requires a mask path");

  if (rc.mask_path) {
    try {
      p.mask = io::load_mask(*rc.mask_path, p.grid);
    } catch (const io::IoError& e) {
      throw ConfigError(std::string("mask: ") + e.what());
    }
  } else {
    p.mask = DomainMask::all_design(p.grid);
  }
  detail::apply_frame(p.mask, rc.frame_thickness);
  require(p.mask.count(ElementState::design) > 0, "mask", "no design elements remain");

  try {
    (void)resolve_boundary(p.grid, p.bcs);
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("supports/loads: ") + e.what());
  }
  return rc;
}

inline RunConfig preset_config(const std::string& name)
{
  return config_from_json(json{{"preset", name}});
}

inline RunConfig load_config(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("config: malformed JSON in " + path.string() + ": " + e.what());
  }
  return config_from_json(doc, path.parent_path());
}

} // namespace vtopo

#endif // VTOPO_CONFIG_HPP
