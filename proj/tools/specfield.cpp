// specfield: experiment driver (synth, fit, reconstruct, slice, spectrum-dump).
//
// Exit codes: 0 success (non-converged fits included), 2 usage or config
// error, 3 numerical failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "specfield/pipeline.hpp"

namespace fs = std::filesystem;
using namespace specfield;

namespace {

constexpr int exit_usage = 2;
constexpr int exit_numerical = 3;

struct CommonFlags {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;
  std::optional<long> dense_cap;
  std::optional<long> probes;

  pipeline::Overrides overrides() const {
    pipeline::Overrides o;
    o.seed = seed;
    if (backend) o.backend = parse_backend(*backend);
    o.dense_cap = dense_cap;
    o.probes = probes;
    return o;
  }
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--seed-override", f.seed, "Replace the field/noise/mask seeds with s, s+1, s+2");
  cmd->add_option("--backend", f.backend, "Derivative backend: finite_difference | fourier");
  cmd->add_option("--dense-cap", f.dense_cap, "Largest lattice handled with dense linear algebra")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--probes", f.probes, "Stochastic probes used above the dense cap")
      ->check(CLI::NonNegativeNumber);
}

int run(int argc, char** argv) {
  CLI::App app{"Spectral-density inference experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pipeline::version);

  CommonFlags common;

  std::string config_path, out;
  auto* synth = app.add_subcommand("synth", "Generate a mock-data bundle from a config");
  synth->add_option("--config", config_path, "YAML experiment config")->required();
  synth->add_option("--out", out, "Output bundle directory")->required();
  add_common(synth, common);

  std::string bundle, mode = "perfect", fit_dir;
  auto* fit = app.add_subcommand("fit", "MAP spectrum fit on a bundle");
  fit->add_option("bundle", bundle, "Bundle directory")->required();
  fit->add_option("--mode", mode, "perfect (uses phi) or marginal (uses d)")
      ->check(CLI::IsMember({"perfect", "marginal"}));
  fit->add_option("--out", out, "Output fit directory")->required();
  add_common(fit, common);

  auto* rec = app.add_subcommand("reconstruct", "Wiener reconstruction with a fitted spectrum");
  rec->add_option("bundle", bundle, "Bundle directory")->required();
  rec->add_option("fit", fit_dir, "Fit directory")->required();
  rec->add_option("--out", out, "Output directory")->required();
  add_common(rec, common);

  std::string field_file;
  int axis = 0;
  long index = 0;
  auto* slice = app.add_subcommand("slice", "Write a slice of a stored array as CSV");
  slice->add_option("file", field_file, "Array file (.bin with .json sidecar)")->required();
  slice->add_option("axis", axis, "Axis held fixed")->required();
  slice->add_option("index", index, "Index along that axis")->required();
  slice->add_option("--out", out, "Output CSV file")->required();

  auto* dump = app.add_subcommand("spectrum-dump", "Per-mode CSV of truth, fit and uncertainty");
  dump->add_option("bundle", bundle, "Bundle directory")->required();
  dump->add_option("fit", fit_dir, "Fit directory")->required();
  dump->add_option("--out", out, "Output CSV file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_usage;
  }

  try {
    pipeline::requested_threads();
    if (*synth) {
      ExperimentConfig c = load_config(config_path);
      common.overrides().apply(c);
      auto m = pipeline::run_synth(c, out);
      std::cout << "synth: wrote " << m["files"].size() << " files to " << out << "\n";
    } else if (*fit) {
      const auto b = pipeline::load_bundle(bundle);
      auto r = pipeline::run_fit(b, pipeline::parse_mode(mode), out, common.overrides());
      std::cout << "fit: " << r.map.message << " after " << r.map.iterations << " iterations, H = "
                << io::format_double(r.map.final_hamiltonian) << "\n";
      if (!r.map.converged)
        std::cerr << "warning: fit did not converge (" << r.map.message << "); results written anyway\n";
    } else if (*rec) {
      const auto b = pipeline::load_bundle(bundle);
      auto r = pipeline::run_reconstruct(b, fit_dir, out, common.overrides());
      std::cout << "reconstruct: route " << to_string(r.route) << ", wrote " << out << "\n";
    } else if (*slice) {
      const long rows = pipeline::run_slice(field_file, axis, index, out);
      std::cout << "slice: " << rows << " rows\n";
    } else if (*dump) {
      const long rows = pipeline::run_spectrum_dump(bundle, fit_dir, out);
      std::cout << "spectrum-dump: " << rows << " modes\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_usage;
  } catch (const IoError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return exit_usage;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return exit_usage;
  } catch (const GridError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return exit_usage;
  } catch (const CapExceeded& e) {
    std::cerr << "size limit: " << e.what() << " (raise --dense-cap or pass --probes)\n";
    return exit_usage;
  } catch (const Error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return exit_numerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_numerical;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
