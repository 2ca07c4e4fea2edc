// vtopo: run presets or config files, verify gradients, re-render site dumps.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vtopo/config.hpp"
#include "vtopo/gradient_checks.hpp"
#include "vtopo/io.hpp"
#include "vtopo/pipeline.hpp"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 1;
constexpr int exit_oracle = 2;

const char* reason_name(vtopo::StopReason r)
{
  switch (r) {
  case vtopo::StopReason::max_iterations: return "max_iterations";
  case vtopo::StopReason::design_change: return "design_change";
  case vtopo::StopReason::compliance: return "compliance";
  default: return "none";
  }
}

void log_mask_counts(const vtopo::DomainMask& mask)
{
  std::cerr << "mask: design=" << mask.count(vtopo::ElementState::design)
            << " passive_void=" << mask.count(vtopo::ElementState::passive_void)
            << " passive_solid=" << mask.count(vtopo::ElementState::passive_solid) << '\n';
}

int run_command(const std::string& config_path, const std::string& preset, std::optional<long long> seed,
                std::optional<std::string> out_dir, std::optional<int> emit_every, std::optional<int> max_iter)
{
  vtopo::RunConfig rc;
  try {
    if (!preset.empty() && !config_path.empty()) throw vtopo::ConfigError("run: give a config file or --preset, not both");
    if (preset.empty() && config_path.empty()) throw vtopo::ConfigError("run: a config file or --preset is required");
    vtopo::json overrides = vtopo::json::object();
    if (seed) {
      if (*seed < 0) throw vtopo::ConfigError("--seed: must be >= 0");
      overrides["sites"]["seed"] = *seed;
    }
    if (max_iter) overrides["max_iterations"] = *max_iter;
    if (out_dir) overrides["output"]["directory"] = *out_dir;
    if (emit_every) overrides["output"]["emit_every"] = *emit_every;

    vtopo::json doc;
    std::filesystem::path base;
    if (!preset.empty()) {
      doc = {{"preset", preset}};
    } else {
      std::ifstream in(config_path);
      if (!in) throw vtopo::ConfigError("config: cannot open " + config_path);
      try {
        in >> doc;
      } catch (const vtopo::json::exception& e) {
        throw vtopo::ConfigError("config: malformed JSON in " + config_path + ": " + e.what());
      }
      base = std::filesystem::path(config_path).parent_path();
    }
    if (!doc.is_object()) throw vtopo::ConfigError("<root>: expected an object");
    vtopo::detail::merge_into(doc, overrides);
    rc = vtopo::config_from_json(doc, base);
  } catch (const vtopo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  }

  log_mask_counts(rc.problem.mask);
  vtopo::io::RunEmitter emitter(rc.output_directory, rc.emit_every);
  vtopo::OptimizeOptions opts;
  opts.on_iteration = [&](int it, const vtopo::IterationRecord& rec, const vtopo::ProjectedDensityGrid& rho,
                          const vtopo::SiteSet<2>& sites) {
    emitter(it, rec, rho, sites);
    std::fprintf(stderr, "it %4d  c=%.6e  V=%.4f  delta=%.3e  gamma=%g\n", it, rec.compliance, rec.volume_fraction,
                 rec.delta, rec.gamma);
  };
  opts.on_solver_warning = [](int it, const vtopo::SolveReport& r) {
    std::fprintf(stderr, "warning: it %d FEM not converged after %d iterations (residual %.3e), using best iterate\n",
                 it, r.iterations, r.relative_residual);
  };
  const vtopo::OptResult res = vtopo::optimize(rc.problem, opts);
  const int last = res.history.empty() ? 0 : res.history.back().iteration;
  vtopo::io::write_density_image(res.density, rc.output_directory / "density_final.pgm");
  vtopo::io::write_sites(res.sites, last, rc.output_directory / "sites_final.json");
  std::cerr << "stopped: " << reason_name(res.reason) << " after " << res.history.size() << " iterations\n";
  return exit_ok;
}

int check_gradients_command(long long seed)
{
  bool ok = true;
  const auto d = vtopo::checks::check_density_gradients(static_cast<std::uint64_t>(seed));
  std::printf("%s density gradients: max rel err %.3e over %zu components\n", d.passed ? "PASS" : "FAIL",
              d.max_relative_error, d.components);
  ok = ok && d.passed;
  const auto e = vtopo::checks::check_end_to_end();
  std::printf("%s compliance gradient: max rel err %.3e over %zu components\n", e.compliance.passed ? "PASS" : "FAIL",
              e.compliance.max_relative_error, e.compliance.components);
  std::printf("%s volume gradient: max rel err %.3e over %zu components\n", e.volume.passed ? "PASS" : "FAIL",
              e.volume.max_relative_error, e.volume.components);
  ok = ok && e.compliance.passed && e.volume.passed;
  return ok ? exit_ok : exit_oracle;
}

int render_command(const std::string& dump, const std::string& config_path, const std::string& out)
{
  vtopo::RunConfig rc;
  try {
    rc = vtopo::load_config(config_path);
  } catch (const vtopo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  }
  vtopo::SiteSet<2> sites;
  try {
    sites = vtopo::io::read_sites(dump);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_config;
  }
  // render at the final projection steepness of the configured run
  const int it = std::max(0, rc.problem.max_iterations - 1);
  const auto proj = vtopo::advance_steepness(rc.problem.projection, it);
  const auto rho = vtopo::render_design(rc.problem, sites, proj);
  const std::filesystem::path path = out.empty() ? std::filesystem::path(dump).replace_extension(".pgm") : std::filesystem::path(out);
  vtopo::io::write_density_image(rho, path);
  std::cerr << "wrote " << path.string() << '\n';
  return exit_ok;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Differentiable anisotropic Voronoi topology optimization"};
  app.require_subcommand(1);

  std::string config_path, preset, out_dir_s;
  long long seed = 0;
  int emit_every = 0, max_iter = 0;
  auto* run = app.add_subcommand("run", "optimize a preset or a JSON config");
  run->add_option("config", config_path, "JSON config file");
  auto* o_preset = run->add_option("--preset", preset, "built-in preset name");
  auto* o_seed = run->add_option("--seed", seed, "site initialization seed");
  auto* o_out = run->add_option("--out", out_dir_s, "output directory");
  auto* o_emit = run->add_option("--emit-every", emit_every, "iterations between image/site dumps");
  auto* o_iter = run->add_option("--max-iter", max_iter, "iteration limit");
  (void)o_preset;

  long long check_seed = 1;
  auto* check = app.add_subcommand("check-gradients", "finite-difference verification of all sensitivities");
  check->add_option("--seed", check_seed, "seed for the random configurations");

  std::string dump, render_config, render_out;
  auto* render = app.add_subcommand("render", "re-rasterize a site dump to a PGM image");
  render->add_option("sites", dump, "site dump (JSON)")->required();
  render->add_option("config", render_config, "JSON config")->required();
  render->add_option("-o,--output", render_out, "output image (default: dump name with .pgm)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_config;
  }

  try {
    if (*run) {
      auto opt = [](CLI::Option* o, auto v) { return o->count() ? std::optional(v) : std::nullopt; };
      return run_command(config_path, preset, opt(o_seed, seed), opt(o_out, out_dir_s), opt(o_emit, emit_every),
                         opt(o_iter, max_iter));
    }
    if (*check) return check_gradients_command(check_seed);
    if (*render) return render_command(dump, render_config, render_out);
  } catch (const vtopo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return exit_ok;
}
