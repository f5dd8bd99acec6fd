#pragma once

// Experiment pipeline stages: synth -> fit -> reconstruct, plus slicing and
// spectrum dumps. Each stage reads and writes a run directory with binary
// arrays, JSON sidecars and a manifest of content hashes.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "specfield/config.hpp"
#include "specfield/inference.hpp"
#include "specfield/io.hpp"
#include "specfield/synth.hpp"

namespace specfield::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* version = "0.1.0";

/// Command-line overrides applied on top of a config.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<DerivativeBackend> backend;
  std::optional<long> dense_cap;
  std::optional<long> probes;

  void apply(ExperimentConfig& c) const {
    if (seed) c.seeds = {*seed, *seed + 1, *seed + 2};
    if (backend) c.hyper.backend = *backend;
    if (dense_cap) c.fit.dense_cap = *dense_cap;
    if (probes) c.fit.probes = *probes;
    c.validate();
  }
};

/// Threads requested through SPECFIELD_THREADS (default 1). Every stage runs
/// single-threaded, so this only bounds and records the request.
inline long requested_threads() {
  const char* env = std::getenv("SPECFIELD_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("SPECFIELD_THREADS must be a positive integer");
  return n;
}

namespace detail {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline io::Manifest make_manifest(const std::string& command, const ExperimentConfig& c) {
  io::Manifest m(command);
  m.doc()["version"] = version;
  m.doc()["config"] = config_to_json(c);
  m.doc()["seeds"] = {{"field", c.seeds.field}, {"noise", c.seeds.noise}, {"mask", c.seeds.mask}};
  m.doc()["threads"] = {{"requested", requested_threads()}, {"used", 1}};
  return m;
}

inline Vector mask_to_vector(const std::vector<std::uint8_t>& m) {
  Vector v(static_cast<long>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i) v[static_cast<long>(i)] = m[i] ? 1.0 : 0.0;
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth

/// Files: phi, data (zero outside the mask), mask (1 = observed), truth
/// spectrum (harmonic lattice order), config echo; plus manifest.json.
inline json run_synth(const ExperimentConfig& c, const fs::path& out) {
  detail::Stopwatch clock;
  ExperimentBundle b = generate(c);
  fs::create_directories(out);
  const double gen_time = clock.seconds();

  io::write_field(out / "phi.bin", b.grid, b.phi.values);
  io::write_field(out / "data.bin", b.grid, b.response->adjoint_apply(b.data), io::Domain::position,
                  {{"masked_fill", 0.0}, {"noise_sigma", b.noise_sigma}});
  io::write_field(out / "mask.bin", b.grid, detail::mask_to_vector(b.mask));
  io::write_field(out / "truth_spectrum.bin", b.grid, b.truth, io::Domain::harmonic);
  io::write_file(out / "config.yaml", config_to_yaml(c));

  io::Manifest m = detail::make_manifest("synth", c);
  for (const char* f : {"phi.bin", "data.bin", "mask.bin", "truth_spectrum.bin", "config.yaml"})
    m.add_file(out, f);
  for (const char* f : {"phi.json", "data.json", "mask.json", "truth_spectrum.json"}) m.add_file(out, f);
  m.doc()["summary"] = {{"cells", b.grid.size()},
                        {"observed", b.response->n_observed()},
                        {"observed_fraction", b.response->observed_fraction()}};
  m.add_timing("generate", gen_time);
  m.add_timing("total", clock.seconds());
  m.write(out);
  return m.doc();
}

struct Bundle {
  ExperimentConfig config;
  RegularGrid grid;
  Field phi;
  std::vector<std::uint8_t> mask;
  std::shared_ptr<const MaskResponseOp> response;
  Vector data;
  Vector truth;
};

inline Bundle load_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("bundle directory not found: " + dir.string());
  if (!fs::exists(dir / "config.yaml")) throw IoError("bundle has no config.yaml: " + dir.string());
  ExperimentConfig c = load_config(dir / "config.yaml");
  auto phi = io::read_array(dir / "phi.bin");
  auto data = io::read_array(dir / "data.bin");
  auto mask = io::read_array(dir / "mask.bin");
  auto truth = io::read_array(dir / "truth_spectrum.bin");
  RegularGrid grid = phi.grid();
  if (!(data.grid() == grid) || !(mask.grid() == grid) || !(truth.grid() == grid))
    throw IoError("bundle arrays live on different grids");
  std::vector<std::uint8_t> m(static_cast<std::size_t>(grid.size()));
  for (long i = 0; i < grid.size(); ++i) m[i] = mask.values[i] != 0.0;
  auto response = std::make_shared<const MaskResponseOp>(grid, m);
  return {c, grid, Field(grid, phi.values), m, response, response->apply(data.values), truth.values};
}

// ---------------------------------------------------------------------------
// fit

enum class FitMode { perfect, marginal };

inline FitMode parse_mode(const std::string& s) {
  if (s == "perfect") return FitMode::perfect;
  if (s == "marginal") return FitMode::marginal;
  throw ConfigError("mode must be 'perfect' or 'marginal', got '" + s + "'");
}

inline std::string to_string(FitMode m) { return m == FitMode::perfect ? "perfect" : "marginal"; }

inline PosteriorOptions posterior_options(const ExperimentConfig& c) {
  PosteriorOptions o;
  o.dense_cap = c.fit.dense_cap;
  o.probes = c.fit.probes;
  o.seed = c.seeds.noise;
  return o;
}

inline std::unique_ptr<SpectralObjective> make_objective(const Bundle& b, FitMode mode,
                                                         const ExperimentConfig& c) {
  if (mode == FitMode::perfect)
    return std::make_unique<PerfectDataProblem>(b.phi, c.hyper, c.nu, c.epsilon, true);
  if (!(c.noise_sigma > 0.0)) throw ConfigError("marginal fit needs noise_sigma > 0");
  return std::make_unique<NoisyDataProblem>(b.response, b.data, c.noise_sigma, c.hyper, c.nu,
                                            c.epsilon, true, posterior_options(c));
}

struct FitOutput {
  MapResult map;
  Vector raw_power;
  json manifest;
};

/// MAP fit with Laplace uncertainties; writes tau, delta, log_spectrum,
/// uncertainty (and its tau / tan(delta) parts), the raw power estimate and
/// the Hamiltonian trace. Non-convergence is recorded, not raised.
inline FitOutput run_fit(const Bundle& b, FitMode mode, const fs::path& out,
                         const Overrides& ov = {}) {
  detail::Stopwatch clock;
  ExperimentConfig c = b.config;
  ov.apply(c);
  auto obj = make_objective(b, mode, c);
  FitOutput res;
  res.map = minimize_map(*obj, c.fit.optimizer, std::nullopt, c.fit.dense_cap);
  const double fit_time = clock.seconds();
  curvature_uncertainty(res.map, *obj, c.fit.dense_cap, c.fit.probes, c.seeds.noise);
  const double unc_time = clock.seconds() - fit_time;
  res.raw_power = obj->raw_power();

  fs::create_directories(out);
  const auto& g = b.grid;
  const auto h = io::Domain::harmonic;
  io::write_field(out / "tau.bin", g, res.map.params.tau, h);
  io::write_field(out / "delta.bin", g, res.map.params.delta, h);
  io::write_field(out / "log_spectrum.bin", g, res.map.log_spectrum(), h);
  io::write_field(out / "uncertainty.bin", g, res.map.uncertainty_log_spectrum, h);
  io::write_field(out / "uncertainty_tau.bin", g, res.map.uncertainty_tau, h);
  io::write_field(out / "uncertainty_tan_delta.bin", g, res.map.uncertainty_tan_delta, h);
  io::write_field(out / "raw_power.bin", g, res.raw_power, h, {{"source", to_string(mode)}});
  const auto& tr = res.map.hamiltonian_trace;
  io::write_vector(out / "trace.bin", Eigen::Map<const Vector>(tr.data(), static_cast<long>(tr.size())));

  io::Manifest m = detail::make_manifest("fit", c);
  for (const char* f : {"tau", "delta", "log_spectrum", "uncertainty", "uncertainty_tau",
                        "uncertainty_tan_delta", "raw_power", "trace"}) {
    m.add_file(out, std::string(f) + ".bin");
    m.add_file(out, std::string(f) + ".json");
  }
  m.doc()["mode"] = to_string(mode);
  m.doc()["convergence"] = {{"converged", res.map.converged},
                            {"iterations", res.map.iterations},
                            {"evaluations", res.map.evaluations},
                            {"final_hamiltonian", res.map.final_hamiltonian},
                            {"gradient_norm", res.map.gradient_norm},
                            {"gradient_tolerance", res.map.gradient_tolerance},
                            {"message", res.map.message},
                            {"approximate", res.map.approximate},
                            {"capped", res.map.capped},
                            {"uncertainty_approximate", res.map.uncertainty_approximate},
                            {"curvature_pseudo_inverse", res.map.curvature_pseudo_inverse}};
  m.add_timing("minimize", fit_time);
  m.add_timing("uncertainty", unc_time);
  m.add_timing("total", clock.seconds());
  m.write(out);
  res.manifest = m.doc();
  return res;
}

inline SpectralParams load_fit(const fs::path& dir, const RegularGrid& grid, const ExperimentConfig& c) {
  auto tau = io::read_array(dir / "tau.bin");
  auto delta = io::read_array(dir / "delta.bin");
  if (!(tau.grid() == grid) || !(delta.grid() == grid)) throw IoError("fit does not match the bundle grid");
  return SpectralParams(grid, tau.values, delta.values, c.epsilon, c.nu);
}

// ---------------------------------------------------------------------------
// reconstruct

/// Wiener mean and per-cell standard deviation for the fitted spectrum.
inline Reconstruction run_reconstruct(const Bundle& b, const fs::path& fit_dir, const fs::path& out,
                                      const Overrides& ov = {}) {
  detail::Stopwatch clock;
  ExperimentConfig c = b.config;
  ov.apply(c);
  if (!(c.noise_sigma > 0.0)) throw ConfigError("reconstruction needs noise_sigma > 0");
  const SpectralParams p = load_fit(fit_dir, b.grid, c);
  NoisyDataProblem prob(b.response, b.data, c.noise_sigma, c.hyper, c.nu, c.epsilon, true,
                        posterior_options(c));
  Reconstruction rec = wiener_reconstruct(prob, p);
  fs::create_directories(out);
  io::write_field(out / "mean.bin", b.grid, rec.mean.values);
  io::write_field(out / "uncertainty.bin", b.grid, rec.uncertainty.values, io::Domain::position,
                  {{"prior_std", rec.prior_std}});
  io::Manifest m = detail::make_manifest("reconstruct", c);
  for (const char* f : {"mean.bin", "mean.json", "uncertainty.bin", "uncertainty.json"}) m.add_file(out, f);
  m.doc()["summary"] = {{"route", to_string(rec.route)},
                        {"approximate", rec.approximate},
                        {"prior_std", rec.prior_std}};
  m.add_timing("total", clock.seconds());
  m.write(out);
  return rec;
}

// ---------------------------------------------------------------------------
// slice and spectrum dump

/// Fix `axis` at `index` and write the remaining cells with index and
/// coordinate columns. A 1D array is written whole.
inline long run_slice(const fs::path& file, int axis, long index, const fs::path& out) {
  auto a = io::read_array(file);
  const RegularGrid grid = a.grid();
  if (axis < 0 || axis >= grid.ndim())
    throw InvalidArgument("axis " + std::to_string(axis) + " out of range");
  if (index < 0 || index >= grid.n_points(axis))
    throw InvalidArgument("index " + std::to_string(index) + " out of range for axis " +
                          std::to_string(axis));
  std::unique_ptr<KCoords> kc;
  if (a.domain == io::Domain::harmonic) kc = std::make_unique<KCoords>(grid);
  std::vector<int> free_axes;
  for (int d = 0; d < grid.ndim(); ++d)
    if (d != axis || grid.ndim() == 1) free_axes.push_back(d);
  std::ostringstream os;
  for (int d : free_axes) os << 'i' << d << ',';
  for (int d : free_axes) os << (kc ? 'k' : 'x') << d << ',';
  os << "value\n";
  long rows = 0;
  for (long i = 0; i < grid.size(); ++i) {
    if (grid.ndim() > 1 && grid.index(i, axis) != index) continue;
    for (int d : free_axes) os << grid.index(i, d) << ',';
    for (int d : free_axes)
      os << io::format_double(kc ? kc->coord(i, d) : cell_coordinate(grid, d, grid.index(i, d))) << ',';
    os << io::format_double(a.values[i]) << '\n';
    ++rows;
  }
  io::write_file(out, os.str());
  return rows;
}

/// Per-mode table: signed k coordinates, truth, raw power, tau, delta,
/// log-spectrum and its uncertainty.
inline long run_spectrum_dump(const fs::path& bundle_dir, const fs::path& fit_dir, const fs::path& out) {
  const Bundle b = load_bundle(bundle_dir);
  const auto& g = b.grid;
  auto read = [&](const char* name) {
    auto a = io::read_array(fit_dir / name);
    if (!(a.grid() == g)) throw IoError(std::string(name) + " does not match the bundle grid");
    return a.values;
  };
  const Vector tau = read("tau.bin"), delta = read("delta.bin"), ell = read("log_spectrum.bin"),
               unc = read("uncertainty.bin"), raw = read("raw_power.bin");
  KCoords kc(g);
  std::ostringstream os;
  for (int d = 0; d < g.ndim(); ++d) os << 'i' << d << ',';
  for (int d = 0; d < g.ndim(); ++d) os << 'k' << d << ',';
  os << "truth,raw_power,tau,delta,log_spectrum,uncertainty\n";
  for (long i = 0; i < g.size(); ++i) {
    for (int d = 0; d < g.ndim(); ++d) os << g.index(i, d) << ',';
    for (int d = 0; d < g.ndim(); ++d) os << io::format_double(kc.coord(i, d)) << ',';
    for (double v : {b.truth[i], raw[i], tau[i], delta[i], ell[i]}) os << io::format_double(v) << ',';
    os << io::format_double(unc[i]) << '\n';
  }
  io::write_file(out, os.str());
  return g.size();
}

}  // namespace specfield::pipeline
