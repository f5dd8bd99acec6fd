#pragma once

// Spectral density parameterization P = exp(tau + tan(delta)), characteristic
// functions of linear constant-coefficient differential operators and the
// ground-truth spectra used by the experiments.

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "specfield/constants.hpp"
#include "specfield/errors.hpp"
#include "specfield/grid.hpp"
#include "specfield/operators.hpp"

namespace specfield {

/// tau and delta over the harmonic lattice plus the delta cutoff and width.
struct SpectralParams {
  RegularGrid grid;
  Vector tau;
  Vector delta;
  double epsilon = 1e-3;
  double nu = std::numbers::pi / 2.0;

  SpectralParams() = default;
  SpectralParams(RegularGrid g, Vector t, Vector d, double eps = 1e-3,
                 double nu_ = std::numbers::pi / 2.0)
      : grid(std::move(g)), tau(std::move(t)), delta(std::move(d)), epsilon(eps), nu(nu_) {
    validate();
  }

  static SpectralParams zeros(const RegularGrid& g, double eps = 1e-3,
                              double nu_ = std::numbers::pi / 2.0) {
    return {g, Vector::Zero(g.size()), Vector::Zero(g.size()), eps, nu_};
  }

  /// Support bound b = pi/2 - epsilon of delta.
  double bound() const { return std::numbers::pi / 2.0 - epsilon; }

  void validate() const {
    if (tau.size() != grid.size() || delta.size() != grid.size())
      throw GridError("spectral parameters do not match the grid");
    if (!(epsilon > 0.0) || !(epsilon < std::numbers::pi / 2.0))
      throw InvalidArgument("epsilon must lie in (0, pi/2)");
    if (!(nu > 0.0)) throw InvalidArgument("nu must be positive");
    if (!tau.allFinite() || !delta.allFinite()) throw InvalidArgument("tau/delta must be finite");
  }

  /// delta projected onto [-b, b].
  Vector clamped_delta() const { return delta.cwiseMax(-bound()).cwiseMin(bound()); }

  void clamp() { delta = clamped_delta(); }

  /// log P = tau + tan(clamp(delta)).
  Vector log_spectrum() const { return tau + clamped_delta().array().tan().matrix(); }
};

struct SpectrumEvaluation {
  Vector power;
  /// Set when some mode exceeded the representable range and was capped.
  bool capped = false;
};

/// P(k) = exp(tau + tan(delta)) with delta clamped, capped at 1e300.
inline SpectrumEvaluation evaluate_spectrum(const SpectralParams& p) {
  p.validate();
  const double log_cap = std::log(convention::max_power);
  SpectrumEvaluation out;
  Vector logp = p.log_spectrum();
  out.power.resize(logp.size());
  for (long i = 0; i < logp.size(); ++i) {
    if (logp[i] > log_cap) {
      out.capped = true;
      logp[i] = log_cap;
    }
    out.power[i] = std::exp(logp[i]);
    if (!(out.power[i] > 0.0)) out.power[i] = std::numeric_limits<double>::min();
  }
  return out;
}

/// Phi as a diagonal harmonic operator with eigenvalues P(k).
inline DiagonalHarmonicOp spectrum_from_params(const SpectralParams& p, bool* capped = nullptr) {
  SpectrumEvaluation e = evaluate_spectrum(p);
  if (capped) *capped = e.capped;
  return DiagonalHarmonicOp(p.grid, std::move(e.power));
}

/// Covariance of cell values for spectrum P: eigenvalues P(k) / dV.
inline DiagonalHarmonicOp cell_covariance(const RegularGrid& grid, const Vector& power) {
  return DiagonalHarmonicOp(grid, power / grid.cell_volume());
}

struct SdeTerm {
  /// Derivative order along each axis (axis 0 is time).
  std::vector<int> orders;
  double coeff = 0.0;
};

/// Linear autonomous operator g(d_t, d_x) driven by noise with spectrum P_xi.
struct SdeSpec {
  std::vector<SdeTerm> terms;
  double noise_power = 1.0;

  void validate(int ndim) const {
    if (terms.empty()) throw InvalidArgument("SDE needs at least one term");
    for (const auto& t : terms) {
      if (static_cast<int>(t.orders.size()) != ndim)
        throw InvalidArgument("SDE term order list must have one entry per axis");
      for (int o : t.orders)
        if (o < 0) throw InvalidArgument("negative derivative order");
      if (!std::isfinite(t.coeff)) throw InvalidArgument("SDE coefficient must be finite");
    }
    if (!(noise_power > 0.0)) throw InvalidArgument("noise spectrum must be positive");
  }

  /// (alpha d_t^2 + beta d_t + m2) phi = xi
  static SdeSpec oscillator(double alpha = 0.0003, double beta = 0.001, double m2 = 0.5) {
    return {{{{2}, alpha}, {{1}, beta}, {{0}, m2}}, 1.0};
  }

  /// (alpha d_t^2 - beta d_x^2 - gamma d_x - rho d_t + m2) phi = xi
  static SdeSpec wave2d(double alpha = 0.00007, double beta = 0.0002, double gamma = 0.0014,
                        double rho = 0.0012, double m2 = 0.1) {
    return {{{{2, 0}, alpha}, {{0, 2}, -beta}, {{0, 1}, -gamma}, {{1, 0}, -rho}, {{0, 0}, m2}},
            1.0};
  }
};

/// f(k) = g(i omega, i k) at every lattice mode.
inline Eigen::VectorXcd sde_char(const SdeSpec& spec, const KCoords& kc) {
  const RegularGrid& grid = kc.grid();
  spec.validate(grid.ndim());
  const std::complex<double> I(0.0, 1.0);
  Eigen::VectorXcd f = Eigen::VectorXcd::Zero(grid.size());
  for (long i = 0; i < grid.size(); ++i) {
    std::complex<double> acc = 0.0;
    for (const auto& t : spec.terms) {
      std::complex<double> term = t.coeff;
      for (int a = 0; a < grid.ndim(); ++a)
        for (int o = 0; o < t.orders[a]; ++o) term *= I * kc.coord(i, a);
      acc += term;
    }
    f[i] = acc;
  }
  return f;
}

/// P_phi = P_xi / |f|^2; throws when f vanishes at a lattice mode.
inline Vector sde_to_spectrum(const SdeSpec& spec, const KCoords& kc) {
  const Eigen::VectorXcd f = sde_char(spec, kc);
  Vector p(f.size());
  for (long i = 0; i < f.size(); ++i) {
    const double mag2 = std::norm(f[i]);
    if (!(mag2 > 0.0)) throw SpectrumError("spectrum diverges on-grid (f(k) = 0 at a lattice mode)");
    p[i] = spec.noise_power / mag2;
    if (!std::isfinite(p[i])) throw SpectrumError("non-finite spectrum value");
  }
  return p;
}

struct StructuredSpectrumParams {
  double m2 = 1.1;
  double alpha = 0.0025;
  double beta = 0.0011;
  double gamma = 0.002;
  double rho = 0.004;
};

/// 2 / ((m2 - sin(alpha k^2 - beta omega^2))^2 + (gamma k + rho omega)^2) on a
/// (time, space) grid: axis 0 carries omega, axis 1 carries k.
inline Vector structured_spectrum(const KCoords& kc, const StructuredSpectrumParams& c = {}) {
  const RegularGrid& grid = kc.grid();
  if (grid.ndim() != 2) throw InvalidArgument("structured spectrum needs a 2D (t, x) grid");
  Vector p(grid.size());
  for (long i = 0; i < grid.size(); ++i) {
    const double w = kc.coord(i, 0), k = kc.coord(i, 1);
    const double a = c.m2 - std::sin(c.alpha * k * k - c.beta * w * w);
    const double b = c.gamma * k + c.rho * w;
    p[i] = 2.0 / (a * a + b * b);
    if (!std::isfinite(p[i]) || !(p[i] > 0.0)) throw SpectrumError("non-finite structured spectrum");
  }
  return p;
}

}  // namespace specfield
