// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Pipeline runs go to $TMPDIR/specfield_acceptance.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "specfield/pipeline.hpp"
#include "specfield/specfield.hpp"

using namespace specfield;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

const fs::path work = fs::temp_directory_path() / "specfield_acceptance";

Vector randn(long n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g;
  Vector v(n);
  for (auto& x : v) x = scale * g(rng);
  return v;
}

// |k| index of each lattice mode on a 1D grid.
long abs_index(const RegularGrid& g, long i) { return std::abs(signed_index(g.index(i, 0), g.n_points(0))); }

// Max over components of |analytic - central difference|, relative to the
// largest analytic component.
double fd_mismatch(const SpectralObjective& obj, const SpectralParams& p, double h) {
  const auto an = obj.evaluate(p, true);
  double worst = 0.0;
  const double scale = std::max(an.grad_tau.cwiseAbs().maxCoeff(), an.grad_delta.cwiseAbs().maxCoeff());
  for (int block = 0; block < 2; ++block)
    for (long i = 0; i < p.tau.size(); ++i) {
      SpectralParams a = p, b = p;
      (block ? a.delta : a.tau)[i] += h;
      (block ? b.delta : b.tau)[i] -= h;
      const double fd = (obj.evaluate(a, false).value - obj.evaluate(b, false).value) / (2.0 * h);
      const double g = (block ? an.grad_delta : an.grad_tau)[i];
      worst = std::max(worst, std::abs(g - fd));
    }
  return worst / scale;
}

Outcome ac1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double perfect = 0.0, marginal = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    auto g = make_grid({{64, 1.0 + 9.0 * u(rng)}});
    KCoords kc(g);
    Vector power(g.size());
    const double slope = 1.0 + 3.0 * u(rng);
    for (long i = 0; i < g.size(); ++i) power[i] = 1.0 / (1.0 + std::pow(std::abs(kc.coord(i, 0)), slope));
    PerfectDataProblem prob(sample_field(g, power, 10 + trial), {}, std::numbers::pi / 2, 1e-3, true);
    SpectralParams p = prob.zero_params();
    p.tau = power.array().log().matrix() + randn(g.size(), rng, 0.3);
    p.delta = randn(g.size(), rng, 0.3);
    perfect = std::max(perfect, fd_mismatch(prob, p, 1e-5));
  }
  for (int trial = 0; trial < 3; ++trial) {
    auto g = make_grid({{32, 2.0}});
    KCoords kc(g);
    Vector power(g.size());
    for (long i = 0; i < g.size(); ++i) power[i] = 1.0 / (1.0 + std::pow(kc.coord(i, 0), 2));
    MaskSpec ms;
    ms.fraction = 0.3;
    auto resp = std::make_shared<const MaskResponseOp>(g, make_mask(g, ms, 50 + trial));
    const Field phi = sample_field(g, power, 60 + trial);
    const Vector d = add_noise(resp->apply(phi.values), 0.3, 70 + trial);
    NoisyDataProblem prob(resp, d, 0.3, {}, std::numbers::pi / 2, 1e-3, true);
    SpectralParams p = prob.zero_params();
    p.tau = power.array().log().matrix() + randn(g.size(), rng, 0.3);
    p.delta = randn(g.size(), rng, 0.3);
    marginal = std::max(marginal, fd_mismatch(prob, p, 1e-5));
  }
  const double t = seconds_since(t0);
  return {perfect < 1e-5 && marginal < 1e-4 && t < 60.0,
          "perfect " + fmt("%.2e", perfect) + " (< 1e-5), marginal " + fmt("%.2e", marginal) +
              " (< 1e-4), " + fmt("%.1f s", t)};
}

Outcome ac2() {
  const double a = 0.0003, b = 0.001, m2 = 0.5;
  auto g = make_grid({{1024, 10.0}});
  KCoords kc(g);
  const Vector p = sde_to_spectrum(SdeSpec::oscillator(a, b, m2), kc);
  double worst = 0.0;
  for (long i = 0; i < g.size(); ++i) {
    const double w = kc.coord(i, 0);
    const double expect = 1.0 / (std::pow(m2 - a * w * w, 2) + std::pow(b * w, 2));
    worst = std::max(worst, std::abs(p[i] - expect) / expect);
  }
  return {worst < 1e-10, "max rel deviation " + fmt("%.2e", worst) + " (< 1e-10)"};
}

Outcome ac3() {
  auto g = make_grid({{256, 10.0}});
  KCoords kc(g);
  Vector power(g.size());
  for (long i = 0; i < g.size(); ++i) power[i] = 1.0 / (1.0 + std::pow(kc.coord(i, 0), 2));
  PerfectDataProblem prob(sample_field(g, power, 3), {}, std::numbers::pi / 2, 1e-3, false);
  const auto r = minimize_map(prob);
  const Vector target = prob.periodogram_values().array().log().matrix();
  const double tau_err = (r.params.tau - target).cwiseAbs().maxCoeff();
  const double delta_err = r.params.delta.cwiseAbs().maxCoeff();
  return {tau_err < 1e-4 && delta_err < 1e-4,
          "max |tau - log p| " + fmt("%.2e", tau_err) + ", max |delta| " + fmt("%.2e", delta_err) + " (< 1e-4)"};
}

struct OscillatorRun {
  ExperimentConfig config;
  fs::path bundle, perfect, marginal, recon;
  double perfect_seconds = 0.0, marginal_seconds = 0.0;
};

OscillatorRun run_oscillator(const fs::path& dir) {
  OscillatorRun r;
  r.config = preset("oscillator1d");
  r.bundle = dir / "bundle";
  r.perfect = dir / "fit_perfect";
  r.marginal = dir / "fit_marginal";
  r.recon = dir / "reconstruct";
  pipeline::run_synth(r.config, r.bundle);
  const auto b = pipeline::load_bundle(r.bundle);
  auto t0 = std::chrono::steady_clock::now();
  pipeline::run_fit(b, pipeline::FitMode::perfect, r.perfect);
  r.perfect_seconds = seconds_since(t0);
  t0 = std::chrono::steady_clock::now();
  pipeline::run_fit(b, pipeline::FitMode::marginal, r.marginal);
  pipeline::run_reconstruct(b, r.marginal, r.recon);
  r.marginal_seconds = seconds_since(t0);
  return r;
}

Vector load(const fs::path& p) { return io::read_array(p).values; }

Outcome ac4(const OscillatorRun& run) {
  const auto truth_arr = io::read_array(run.bundle / "truth_spectrum.bin");
  const RegularGrid g = truth_arr.grid();
  const Vector lt = truth_arr.values.array().log().matrix();
  const Vector ell = load(run.perfect / "log_spectrum.bin");
  const Vector delta = load(run.perfect / "delta.bin");
  const Vector unc = load(run.perfect / "uncertainty.bin");
  Eigen::Index it, ir;
  lt.maxCoeff(&it);
  ell.maxCoeff(&ir);
  const long res = abs_index(g, it), rec = abs_index(g, ir);
  const bool a = std::abs(rec - res) <= 2;

  long outside = 0, lo = -1, hi = -1;
  for (long i = 0; i < g.size(); ++i)
    if (std::abs(delta[i]) > 0.1 && std::abs(abs_index(g, i) - res) > 5) {
      ++outside;
      const long k = abs_index(g, i);
      lo = lo < 0 ? k : std::min(lo, k);
      hi = std::max(hi, k);
    }
  const bool b = outside == 0;

  long n = 0, inside = 0;
  for (long i = 0; i < g.size(); ++i)
    if (abs_index(g, i) < res) {
      ++n;
      inside += std::abs(lt[i] - ell[i]) <= unc[i];
    }
  const double c = static_cast<double>(inside) / static_cast<double>(n);
  const bool ok = a && b && c >= 0.7 && run.perfect_seconds < 120.0;
  std::string d = "(a) peak at |k| " + std::to_string(rec) + " vs " + std::to_string(res) + (a ? " ok" : " FAIL");
  d += "; (b) |delta| > 0.1 on " + std::to_string(outside) + " modes beyond +-5";
  if (!b) d += " (|k| " + std::to_string(lo) + ".." + std::to_string(hi) + ") FAIL";
  else d += " ok";
  d += "; (c) band coverage " + fmt("%.2f", c) + (c >= 0.7 ? " ok" : " FAIL");
  d += "; " + fmt("%.1f s", run.perfect_seconds);
  return {ok, d};
}

Outcome ac5(const OscillatorRun& run) {
  const auto truth_arr = io::read_array(run.bundle / "truth_spectrum.bin");
  const RegularGrid g = truth_arr.grid();
  const Vector& truth = truth_arr.values;
  const Vector ell = load(run.marginal / "log_spectrum.bin");
  const Vector phi = load(run.bundle / "phi.bin");
  const Vector mask = load(run.bundle / "mask.bin");
  const Vector mean = load(run.recon / "mean.bin");
  const double sigma = run.config.noise_sigma;

  double ss = 0.0;
  long n = 0;
  for (long i = 0; i < g.size(); ++i)
    if (truth[i] > sigma * sigma * g.cell_volume()) {
      ss += std::pow(ell[i] - std::log(truth[i]), 2);
      ++n;
    }
  const double rms = std::sqrt(ss / static_cast<double>(n));

  // Amplitude correlation time of alpha x'' + beta x' + m2 x: 2 alpha / beta.
  const auto& terms = run.config.sde.terms;
  const double corr = 2.0 * terms[0].coeff / terms[1].coeff;
  const double prior_std = std::sqrt(truth.sum() / g.total_volume());
  std::string gaps;
  bool gaps_ok = true;
  long short_gaps = 0;
  for (long i = 0; i < g.size();) {
    if (mask[i] != 0.0) {
      ++i;
      continue;
    }
    long j = i;
    while (j < g.size() && mask[j] == 0.0) ++j;
    const double len = static_cast<double>(j - i) * g.cell_volume();
    if (len < 2.0 * corr) {
      double e = 0.0;
      for (long c = i; c < j; ++c) e += std::pow(mean[c] - phi[c], 2);
      e = std::sqrt(e / static_cast<double>(j - i));
      gaps += " " + fmt("%.2f", len) + ":" + fmt("%.1f", e);
      gaps_ok &= e < prior_std;
      ++short_gaps;
    }
    i = j;
  }
  const bool ok = rms < 2.0 && gaps_ok && short_gaps > 0 && run.marginal_seconds < 600.0;
  return {ok, "log-spectrum rms " + fmt("%.3f", rms) + " over " + std::to_string(n) +
                  " modes (< 2); gap length:rms" + gaps + " vs prior std " + fmt("%.1f", prior_std) + "; " +
                  fmt("%.1f s", run.marginal_seconds)};
}

Outcome ac6() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = work / "wave2d";
  fs::remove_all(dir);
  auto c = preset("wave2d", 64);
  pipeline::run_synth(c, dir / "bundle");
  const auto b = pipeline::load_bundle(dir / "bundle");
  pipeline::run_fit(b, pipeline::FitMode::marginal, dir / "fit");
  pipeline::run_reconstruct(b, dir / "fit", dir / "reconstruct");
  const double t = seconds_since(t0);

  const RegularGrid& g = b.grid;
  const long n = g.size();
  const Vector ell = load(dir / "fit" / "log_spectrum.bin");
  const Vector mean = load(dir / "reconstruct" / "mean.bin");
  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0L);
  std::sort(order.begin(), order.end(), [&](long x, long y) { return b.truth[x] > b.truth[y]; });
  const long n_ridge = static_cast<long>(std::ceil(0.01 * n));
  std::vector<long> rorder(order.size());
  std::iota(rorder.begin(), rorder.end(), 0L);
  std::sort(rorder.begin(), rorder.end(), [&](long x, long y) { return ell[x] > ell[y]; });
  const std::set<long> top(rorder.begin(), rorder.begin() + static_cast<long>(std::ceil(0.05 * n)));
  long hit = 0;
  for (long i = 0; i < n_ridge; ++i) hit += top.count(order[i]);
  const double overlap = static_cast<double>(hit) / static_cast<double>(n_ridge);

  // Error medians grouped by distance (in time slices, periodic) from the
  // nearest slice holding an observed cell, over the fully masked late band.
  const long nt = g.n_points(0);
  std::vector<bool> any_obs(nt, false), all_masked(nt, true);
  for (long i = 0; i < n; ++i) {
    any_obs[g.index(i, 0)] = any_obs[g.index(i, 0)] || b.mask[i];
    all_masked[g.index(i, 0)] = all_masked[g.index(i, 0)] && !b.mask[i];
  }
  std::map<long, std::vector<double>> by_distance;
  for (long i = 0; i < n; ++i) {
    const long t_i = g.index(i, 0);
    if (!all_masked[t_i]) continue;
    long dmin = nt;
    for (long s = 0; s < nt; ++s)
      if (any_obs[s]) dmin = std::min(dmin, std::min((t_i - s + nt) % nt, (s - t_i + nt) % nt));
    by_distance[dmin].push_back(std::abs(mean[i] - b.phi.values[i]));
  }
  std::vector<double> medians;
  std::string med;
  for (auto& [d, v] : by_distance) {
    std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
    medians.push_back(v[v.size() / 2]);
    med += " " + std::to_string(d) + ":" + fmt("%.1f", medians.back());
  }
  const bool mono = medians.size() >= 2 && std::is_sorted(medians.begin(), medians.end());
  const bool ok = overlap >= 0.6 && mono && t < 1800.0;
  return {ok, "ridge overlap " + fmt("%.2f", overlap) + " (>= 0.6); median error by distance" + med +
                  (mono ? " monotone" : " NOT monotone") + "; " + fmt("%.1f s", t)};
}

Outcome ac7() {
  std::mt19937_64 rng(77);
  // CG against a dense Cholesky solve.
  const long m = 60;
  Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(m, m, [&] { return std::normal_distribution<double>()(rng); });
  Eigen::MatrixXd spd = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(m, m);
  const Vector rhs = randn(m, rng);
  CGConfig cfg;
  cfg.rel_tolerance = 1e-13;
  cfg.abs_tolerance = 1e-300;
  const Vector x_cg = cg_solve(DenseMatrixOp(spd), rhs, cfg).x;
  const Vector x_ll = spd.llt().solve(rhs);
  const double cg_err = (x_cg - x_ll).norm() / x_ll.norm();

  // Adjoint consistency.
  auto g = make_grid({{16, 2.0}, {12, 1.5}});
  KCoords kc(g);
  Vector mult(g.size());
  for (long i = 0; i < g.size(); ++i) mult[i] = 1.0 / (1.0 + kc.coord(i, 0) * kc.coord(i, 0) + std::abs(kc.coord(i, 1)));
  MaskSpec ms;
  ms.fraction = 0.4;
  auto resp = std::make_shared<const MaskResponseOp>(g, make_mask(g, ms, 5));
  auto diag = std::make_shared<const DiagonalHarmonicOp>(g, symmetrize(g, mult));
  auto chain = std::make_shared<const ChainOp>(resp, diag);
  double adj = 0.0;
  for (const LinearOperator* op : std::initializer_list<const LinearOperator*>{resp.get(), diag.get(), chain.get()}) {
    const Vector x = randn(op->domain_size(), rng), y = randn(op->codomain_size(), rng);
    const Vector ax = op->apply(x), aty = op->adjoint_apply(y);
    adj = std::max(adj, std::abs(ax.dot(y) - x.dot(aty)) / (ax.norm() * y.norm()));
  }

  // Log-determinant: Cholesky and harmonic diagonal against eigenvalue sums.
  const double ld_ref = spd.selfadjointView<Eigen::Lower>().eigenvalues().array().log().sum();
  const double ld_err = std::abs(log_det(DenseMatrixOp(spd), LogDetMethod::exact) - ld_ref) / std::abs(ld_ref);
  const Eigen::MatrixXd dd = dense_materialize(*diag);
  const double ld_ref2 = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (dd + dd.transpose()))
                             .eigenvalues().array().log().sum();
  const double ld_err2 = std::abs(log_det(*diag, LogDetMethod::diagonal) - ld_ref2) / std::abs(ld_ref2);
  const double logdet = std::max(ld_err, ld_err2);

  // Parseval and Hermitian symmetry of the forward transform of a real field.
  const Field f(g, randn(g.size(), rng));
  const HarmonicField h = fft_forward(f);
  const double lhs = f.values.squaredNorm() * g.cell_volume();
  const double rhs_p = h.values.squaredNorm() / g.total_volume();
  const double parseval = std::abs(lhs - rhs_p) / lhs;
  const double herm = hermitian_violation(h);

  const bool ok = cg_err < 1e-7 && adj < 1e-10 && logdet < 1e-8 && parseval < 1e-10 && herm < 1e-12;
  return {ok, "cg " + fmt("%.1e", cg_err) + " (< 1e-7), adjoint " + fmt("%.1e", adj) + " (< 1e-10), log-det " +
                  fmt("%.1e", logdet) + " (< 1e-8), Parseval " + fmt("%.1e", parseval) + " (< 1e-10), Hermitian " +
                  fmt("%.1e", herm) + " (< 1e-12)"};
}

Outcome ac8() {
  auto g = make_grid({{32, 1.0}, {32, 1.0}});
  KCoords kc(g);
  auto logabs = [](double k) { return k == 0.0 ? 0.0 : std::log(std::abs(k)); };
  Vector saddle(g.size());
  Eigen::MatrixXd basis(g.size(), 3);
  for (long i = 0; i < g.size(); ++i) {
    const double l0 = logabs(kc.coord(i, 0)), l1 = logabs(kc.coord(i, 1));
    saddle[i] = l0 * l1;
    basis.row(i) << 1.0, l0, l1;
  }
  // Least-squares power law, rescaled to the saddle's norm.
  Vector fit = basis * basis.colPivHouseholderQr().solve(saddle);
  fit *= saddle.norm() / fit.norm();
  auto t = std::dynamic_pointer_cast<const QuadraticForm>(
      build_smoothness_precision(g, 2.0, DerivativeBackend::finite_difference));
  const double e_saddle = t->energy(saddle), e_fit = t->energy(fit);
  const bool ok = e_saddle > 0.0 && e_saddle > 10.0 * e_fit;
  return {ok, "saddle energy " + fmt("%.4g", e_saddle) + ", best power law " + fmt("%.3g", e_fit)};
}

Outcome ac9(const OscillatorRun& first) {
  const OscillatorRun second = run_oscillator(work / "oscillator_rerun");
  long files = 0;
  bool same = true;
  std::string diff;
  for (const auto& [a, b] : {std::pair{first.bundle, second.bundle}, {first.perfect, second.perfect},
                             {first.marginal, second.marginal}, {first.recon, second.recon}}) {
    const auto fa = io::Manifest::read(a)["files"], fb = io::Manifest::read(b)["files"];
    if (fa != fb) {
      same = false;
      diff += " " + a.filename().string();
    }
    for (auto& [name, entry] : fa.items())
      if (entry["sha256"] != io::sha256_file(b / name)) same = false;
    files += static_cast<long>(fa.size());
  }
  return {same, std::to_string(files) + " files compared" + (same ? ", all identical" : ", differ in" + diff)};
}

}  // namespace

int main() {
  fs::remove_all(work);
  fs::create_directories(work);
  bool all = true;
  auto report = [&](const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all &= o.pass;
    std::printf("%s %s  %s\n", name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  };
  report("AC1", ac1);
  report("AC2", ac2);
  report("AC3", ac3);
  std::optional<OscillatorRun> osc;
  try {
    osc = run_oscillator(work / "oscillator");
  } catch (const std::exception& e) {
    std::printf("oscillator pipeline failed: %s\n", e.what());
  }
  auto need = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!osc) return {false, "oscillator pipeline unavailable"};
      return fn(*osc);
    };
  };
  report("AC4", need(ac4));
  report("AC5", need(ac5));
  report("AC6", ac6);
  report("AC7", ac7);
  report("AC8", ac8);
  report("AC9", need(ac9));
  return all ? 0 : 1;
}
