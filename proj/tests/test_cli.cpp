#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "specfield/io.hpp"

using namespace specfield;
namespace fs = std::filesystem;

#ifndef SPECFIELD_CLI
#error "SPECFIELD_CLI must name the driver executable"
#endif

namespace {

const fs::path root = fs::temp_directory_path() / "specfield_test_cli";

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + SPECFIELD_CLI + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string p(const std::string& name) { return (root / name).string(); }

const char* small_config = R"(case: oscillator1d
grid: {points: [128], lengths: [10.0]}
seeds: {field: 4, noise: 5, mask: 6}
fit: {max_iterations: 300}
)";

void setup_once() {
  static bool done = false;
  if (done) return;
  fs::remove_all(root);
  fs::create_directories(root);
  io::write_file(root / "small.cfg", small_config);
  io::write_file(root / "typo.cfg", std::string(small_config) + "noise_sigmaa: 3\n");
  done = true;
}

}  // namespace

TEST_CASE("usage and config errors exit with 2", "[cli]") {
  setup_once();
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("synth --out " + p("x")) == 2);
  CHECK(run("synth --config " + p("missing.cfg") + " --out " + p("x")) == 2);
  CHECK(run("synth --config " + p("typo.cfg") + " --out " + p("x")) == 2);
  CHECK(run("synth --config " + p("small.cfg") + " --out " + p("x") + " --dense-cap 0") == 2);
  CHECK(run("synth --config " + p("small.cfg") + " --out " + p("x") + " --backend spline") == 2);
  CHECK(run("synth --config " + p("small.cfg") + " --out " + p("x"), "SPECFIELD_THREADS=many") == 2);
  CHECK(run("fit " + p("no_bundle") + " --out " + p("y")) == 2);
  CHECK(run("fit " + p("no_bundle") + " --mode sideways --out " + p("y")) == 2);
  CHECK(run("--version") == 0);
}

TEST_CASE("full pipeline writes its files", "[cli]") {
  setup_once();
  REQUIRE(run("synth --config " + p("small.cfg") + " --out " + p("b")) == 0);
  for (const char* f : {"phi", "data", "mask", "truth_spectrum"}) {
    CHECK(fs::exists(root / "b" / (std::string(f) + ".bin")));
    CHECK(fs::exists(root / "b" / (std::string(f) + ".json")));
  }
  CHECK(fs::exists(root / "b" / "config.yaml"));
  auto m = io::Manifest::read(root / "b");
  CHECK(m["files"]["phi.bin"]["sha256"] == io::sha256_file(root / "b" / "phi.bin"));
  CHECK(m["seeds"]["field"] == 4);

  REQUIRE(run("fit " + p("b") + " --mode perfect --out " + p("fp")) == 0);
  REQUIRE(run("fit " + p("b") + " --mode marginal --out " + p("fm")) == 0);
  auto fm = io::Manifest::read(root / "fm");
  CHECK(fm["mode"] == "marginal");
  CHECK(fm["convergence"].contains("converged"));
  for (const char* f : {"tau", "delta", "log_spectrum", "uncertainty", "raw_power", "trace"})
    CHECK(fs::exists(root / "fm" / (std::string(f) + ".bin")));

  REQUIRE(run("reconstruct " + p("b") + " " + p("fm") + " --out " + p("r")) == 0);
  auto mean = io::read_array(root / "r" / "mean.bin");
  CHECK(mean.values.size() == 128);
  CHECK(mean.values.allFinite());

  REQUIRE(run("slice " + p("r/mean.bin") + " 0 0 --out " + p("slice.csv")) == 0);
  CHECK(io::read_csv_values(root / "slice.csv") == mean.values);
  CHECK(run("slice " + p("r/mean.bin") + " 1 0 --out " + p("s2.csv")) == 2);
  CHECK(run("slice " + p("r/mean.bin") + " 0 500 --out " + p("s2.csv")) == 2);

  REQUIRE(run("spectrum-dump " + p("b") + " " + p("fm") + " --out " + p("dump.csv")) == 0);
  const std::string dump = io::read_file(root / "dump.csv");
  CHECK(dump.rfind("i0,k0,truth,raw_power,tau,delta,log_spectrum,uncertainty\n", 0) == 0);
  CHECK(std::count(dump.begin(), dump.end(), '\n') == 129);
}

TEST_CASE("reruns are byte identical and seeds matter", "[cli]") {
  setup_once();
  REQUIRE(run("synth --config " + p("small.cfg") + " --out " + p("h1")) == 0);
  REQUIRE(run("synth --config " + p("small.cfg") + " --out " + p("h2")) == 0);
  REQUIRE(run("synth --config " + p("small.cfg") + " --out " + p("h3") + " --seed-override 40") == 0);
  REQUIRE(run("fit " + p("h1") + " --out " + p("f1")) == 0);
  REQUIRE(run("fit " + p("h2") + " --out " + p("f2")) == 0);
  const auto a = io::Manifest::read(root / "h1")["files"], b = io::Manifest::read(root / "h2")["files"],
             c = io::Manifest::read(root / "h3")["files"];
  CHECK(a == b);
  CHECK(a["phi.bin"]["sha256"] != c["phi.bin"]["sha256"]);
  CHECK(io::Manifest::read(root / "h3")["seeds"]["noise"] == 41);
  CHECK(io::Manifest::read(root / "f1")["files"] == io::Manifest::read(root / "f2")["files"]);
}
