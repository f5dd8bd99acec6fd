#pragma once

// Information Hamiltonians for the spectral parameters (tau, delta), their
// gradients and curvatures, MAP estimation, Laplace uncertainties of the
// log-spectrum and empirical-Bayes Wiener reconstruction.
//
// Both Hamiltonians depend on the data only through the log-spectrum
// l = tau + tan(delta):
//
//   H = H_lik(l) + 1/2 tau^T (T_sigma + D_eta) tau
//               + 1/2 delta^T (T_mu + D_eta) delta + 1/(2 nu^2) delta^T delta
//
// Perfect data:  H_lik = 1/2 sum_k (p_k exp(-l_k) + l_k), p the periodogram.
// Noisy data:    H_lik = 1/2 (log(|S|/|D|) - j^T D j), field marginalized.
//
// Parameters live on the full harmonic lattice but stay symmetric under
// k -> -k (a real field has a symmetric spectrum); the optimizer works on one
// representative per {k, -k} orbit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "specfield/constants.hpp"
#include "specfield/errors.hpp"
#include "specfield/grid.hpp"
#include "specfield/model.hpp"
#include "specfield/operators.hpp"
#include "specfield/optimizer.hpp"
#include "specfield/posterior.hpp"
#include "specfield/priors.hpp"

namespace specfield {

/// One representative per {k, -k} orbit of the harmonic lattice.
class ReducedLattice {
 public:
  explicit ReducedLattice(const RegularGrid& grid) : grid_(grid), slot_(grid.size(), -1) {
    for (long i = 0; i < grid.size(); ++i) {
      const long j = grid.mirror(i);
      if (i <= j) {
        slot_[i] = static_cast<long>(reps_.size());
        reps_.push_back(i);
      }
    }
    for (long i = 0; i < grid.size(); ++i)
      if (slot_[i] < 0) slot_[i] = slot_[grid.mirror(i)];
  }

  long size() const { return static_cast<long>(reps_.size()); }
  long slot(long flat) const { return slot_[flat]; }
  const std::vector<long>& representatives() const { return reps_; }

  Vector expand(const Vector& r) const {
    Vector out(grid_.size());
    for (long i = 0; i < grid_.size(); ++i) out[i] = r[slot_[i]];
    return out;
  }
  Vector restrict(const Vector& full) const {
    Vector out(size());
    for (long s = 0; s < size(); ++s) out[s] = full[reps_[s]];
    return out;
  }
  /// Gradient with respect to reduced coordinates: orbit sums.
  Vector reduce_gradient(const Vector& full) const {
    Vector out = Vector::Zero(size());
    for (long i = 0; i < grid_.size(); ++i) out[slot_[i]] += full[i];
    return out;
  }
  /// Expansion matrix E (N x n_reduced), full = E * reduced.
  Eigen::SparseMatrix<double> expansion() const {
    std::vector<Eigen::Triplet<double>> t;
    for (long i = 0; i < grid_.size(); ++i) t.emplace_back(i, slot_[i], 1.0);
    Eigen::SparseMatrix<double> e(grid_.size(), size());
    e.setFromTriplets(t.begin(), t.end());
    return e;
  }

 private:
  RegularGrid grid_;
  std::vector<long> slot_;
  std::vector<long> reps_;
};

/// Prior part of the Hamiltonian. With `enabled` false the smoothness and
/// zero-mode terms are dropped; the 1/(2 nu^2) delta^2 term always stays.
class PriorTerms {
 public:
  PriorTerms(const RegularGrid& grid, const SmoothnessHyper& hyper, double nu, bool enabled)
      : hyper_(hyper), nu_(nu), enabled_(enabled) {
    hyper.validate();
    if (!(nu > 0.0)) throw InvalidArgument("nu must be positive");
    if (enabled) {
      tau_ = std::make_shared<SmoothnessPrior>(grid, hyper.sigma, hyper.eta, hyper.backend);
      delta_ = std::make_shared<SmoothnessPrior>(grid, hyper.mu, hyper.eta, hyper.backend);
    }
  }

  bool enabled() const { return enabled_; }
  double nu() const { return nu_; }
  const SmoothnessHyper& hyper() const { return hyper_; }
  const SmoothnessPrior* tau_prior() const { return tau_.get(); }
  const SmoothnessPrior* delta_prior() const { return delta_.get(); }

  Vector tau_gradient(const Vector& tau) const {
    return enabled_ ? tau_->gradient(tau) : Vector(Vector::Zero(tau.size()));
  }
  Vector delta_gradient(const Vector& delta) const {
    Vector g = delta / (nu_ * nu_);
    if (enabled_) g += delta_->gradient(delta);
    return g;
  }
  double energy(const Vector& tau, const Vector& delta) const {
    return 0.5 * tau.dot(tau_gradient(tau)) + 0.5 * delta.dot(delta_gradient(delta));
  }

  /// Precision matrices (T + D_eta) of tau and delta without the nu term.
  Eigen::SparseMatrix<double> tau_sparse(long n) const { return sparse_of(tau_.get(), n); }
  Eigen::SparseMatrix<double> delta_sparse(long n) const { return sparse_of(delta_.get(), n); }
  bool sparse_available() const { return !enabled_ || tau_->sparse().has_value(); }
  Eigen::MatrixXd tau_dense(long n, long cap) const { return dense_of(tau_.get(), n, cap); }
  Eigen::MatrixXd delta_dense(long n, long cap) const { return dense_of(delta_.get(), n, cap); }

 private:
  Eigen::SparseMatrix<double> sparse_of(const SmoothnessPrior* p, long n) const {
    if (!enabled_) return Eigen::SparseMatrix<double>(n, n);
    auto s = p->sparse();
    if (!s) throw InvalidArgument("prior has no sparse form for this backend");
    return *s;
  }
  Eigen::MatrixXd dense_of(const SmoothnessPrior* p, long n, long cap) const {
    if (!enabled_) return Eigen::MatrixXd::Zero(n, n);
    return p->dense(cap);
  }

  SmoothnessHyper hyper_;
  double nu_;
  bool enabled_;
  std::shared_ptr<SmoothnessPrior> tau_, delta_;
};

/// Likelihood part evaluated at a log-spectrum.
struct LikelihoodTerms {
  double value = 0.0;
  /// dH_lik / dl per lattice mode.
  Vector gradient;
  /// Curvature weight r per mode: d^2 H_lik / dl^2 ~ r / 2.
  Vector curvature;
  bool approximate = false;
};

/// Full evaluation of a Hamiltonian at (tau, delta).
struct HamiltonianValue {
  double value = 0.0;
  double likelihood = 0.0;
  double prior = 0.0;
  Vector grad_tau, grad_delta;
  Vector curvature;
  bool approximate = false;
  bool capped = false;
};

class SpectralObjective {
 public:
  SpectralObjective(RegularGrid grid, SmoothnessHyper hyper, double nu, double epsilon,
                    bool priors)
      : grid_(std::move(grid)), priors_(grid_, hyper, nu, priors), epsilon_(epsilon) {
    if (!(epsilon > 0.0) || !(epsilon < std::numbers::pi / 2))
      throw InvalidArgument("epsilon must lie in (0, pi/2)");
  }
  virtual ~SpectralObjective() = default;

  const RegularGrid& grid() const { return grid_; }
  const PriorTerms& priors() const { return priors_; }
  double epsilon() const { return epsilon_; }
  double nu() const { return priors_.nu(); }

  /// Per-mode raw power estimate used for initialization, and its floor.
  virtual Vector raw_power() const = 0;
  virtual double power_floor() const = 0;
  virtual LikelihoodTerms likelihood(const Vector& log_power, bool need_gradient) const = 0;

  SpectralParams zero_params() const { return SpectralParams::zeros(grid_, epsilon_, nu()); }

  HamiltonianValue evaluate(const SpectralParams& p, bool need_gradient) const {
    require_same_grid(p.grid, grid_, "Hamiltonian");
    const Vector delta = p.clamped_delta();
    const Vector tan_d = delta.array().tan().matrix();
    Vector ell = p.tau + tan_d;
    const double cap = std::log(convention::max_power);
    HamiltonianValue out;
    std::vector<bool> capped(static_cast<std::size_t>(ell.size()), false);
    for (long i = 0; i < ell.size(); ++i)
      if (ell[i] > cap) {
        ell[i] = cap;
        capped[i] = true;
        out.capped = true;
      }
    LikelihoodTerms lik = likelihood(ell, need_gradient);
    out.likelihood = lik.value;
    out.prior = priors_.energy(p.tau, delta);
    out.value = lik.value + out.prior;
    out.approximate = lik.approximate;
    if (need_gradient) {
      Vector gl = lik.gradient;
      for (long i = 0; i < gl.size(); ++i)
        if (capped[i]) gl[i] = std::max(gl[i], 0.0);
      const Vector sec2 = (Vector::Ones(delta.size()) + tan_d.cwiseAbs2());
      out.grad_tau = gl + priors_.tau_gradient(p.tau);
      out.grad_delta = gl.cwiseProduct(sec2) + priors_.delta_gradient(delta);
      out.curvature = lik.curvature;
    }
    return out;
  }

 protected:
  RegularGrid grid_;
  PriorTerms priors_;
  double epsilon_;
};

/// Perfect observation of the field phi.
class PerfectDataProblem final : public SpectralObjective {
 public:
  PerfectDataProblem(Field phi, SmoothnessHyper hyper = {}, double nu = std::numbers::pi / 2,
                     double epsilon = 1e-3, bool priors = true)
      : SpectralObjective(phi.grid, hyper, nu, epsilon, priors),
        phi_(std::move(phi)),
        power_(periodogram(phi_)) {
    if (!phi_.values.allFinite()) throw InvalidArgument("field contains non-finite values");
  }

  const Field& phi() const { return phi_; }
  const Vector& periodogram_values() const { return power_; }

  Vector raw_power() const override { return power_; }
  double power_floor() const override {
    const double mean = power_.mean();
    return mean > 0.0 ? 1e-12 * mean : 1e-300;
  }

  LikelihoodTerms likelihood(const Vector& ell, bool need_gradient) const override {
    LikelihoodTerms out;
    const Vector r = power_.cwiseProduct((-ell).array().exp().matrix());
    out.value = 0.5 * (r.sum() + ell.sum());
    if (!std::isfinite(out.value)) out.value = std::numeric_limits<double>::infinity();
    if (need_gradient) {
      out.gradient = 0.5 * (Vector::Ones(ell.size()) - r);
      out.curvature = r;
    }
    return out;
  }

 private:
  Field phi_;
  Vector power_;
};

/// Noisy masked data d = R phi + n with white noise of standard deviation
/// noise_sigma; the field is marginalized analytically.
class NoisyDataProblem final : public SpectralObjective {
 public:
  NoisyDataProblem(std::shared_ptr<const MaskResponseOp> response, Vector data, double noise_sigma,
                   SmoothnessHyper hyper = {}, double nu = std::numbers::pi / 2,
                   double epsilon = 1e-3, bool priors = true, PosteriorOptions options = {})
      : SpectralObjective(response->grid(), hyper, nu, epsilon, priors),
        response_(std::move(response)),
        data_(std::move(data)),
        sigma_(noise_sigma),
        options_(options) {
    if (response_->mode() != MaskResponseOp::Mode::select)
      throw InvalidArgument("noisy-data response must select observed cells");
    if (data_.size() != response_->n_observed())
      throw GridError("data length does not match the number of observed cells");
    if (!(sigma_ > 0.0)) throw InvalidArgument("noise sigma must be positive");
    if (!data_.allFinite()) throw InvalidArgument("data contain non-finite values");
  }

  const MaskResponseOp& response() const { return *response_; }
  std::shared_ptr<const MaskResponseOp> response_ptr() const { return response_; }
  const Vector& data() const { return data_; }
  double noise_sigma() const { return sigma_; }
  double noise_variance() const { return sigma_ * sigma_; }
  const PosteriorOptions& options() const { return options_; }
  /// Noise level expressed as a spectral density.
  double noise_power() const { return noise_variance() * grid_.cell_volume(); }

  /// Cell covariance eigenvalues for a log-spectrum.
  Vector cell_eigenvalues(const Vector& ell) const {
    return (ell.array().exp() / grid_.cell_volume()).matrix();
  }

  PosteriorSummary posterior(const Vector& ell, bool need_gradient) const {
    return summarize_posterior(grid_, cell_eigenvalues(ell), *response_, data_, noise_variance(),
                               need_gradient, options_);
  }

  Vector raw_power() const override {
    Field filled(grid_, response_->adjoint_apply(data_));
    const double frac = response_->observed_fraction();
    return frac > 0.0 ? Vector(periodogram(filled) / frac) : Vector(Vector::Zero(grid_.size()));
  }
  double power_floor() const override { return noise_power(); }

  LikelihoodTerms likelihood(const Vector& ell, bool need_gradient) const override {
    LikelihoodTerms out;
    PosteriorSummary post;
    try {
      post = posterior(ell, need_gradient);
    } catch (const NotPositiveError&) {
      out.value = std::numeric_limits<double>::infinity();
      if (need_gradient) throw;
      return out;
    }
    out.value = 0.5 * (post.log_det_ratio - post.jdj);
    out.approximate = post.approximate;
    if (!std::isfinite(out.value)) out.value = std::numeric_limits<double>::infinity();
    if (need_gradient) {
      const Vector s = cell_eigenvalues(ell);
      const Vector ratio = (post.harmonic_variance + post.mean_power).cwiseQuotient(s);
      out.gradient = 0.5 * (Vector::Ones(ell.size()) - ratio);
      // Expected (Fisher) curvature: (1 - D_kk / s_k)^2 / 2 per mode.
      out.curvature = (Vector::Ones(ell.size()) - post.harmonic_variance.cwiseQuotient(s))
                          .cwiseMax(0.0)
                          .cwiseAbs2();
    }
    return out;
  }

 private:
  std::shared_ptr<const MaskResponseOp> response_;
  Vector data_;
  double sigma_;
  PosteriorOptions options_;
};

// ---------------------------------------------------------------------------
// Free-function forms

inline double perfect_hamiltonian(const PerfectDataProblem& prob, const SpectralParams& p) {
  return prob.evaluate(p, false).value;
}

inline std::pair<Vector, Vector> perfect_gradient(const PerfectDataProblem& prob,
                                                  const SpectralParams& p) {
  auto v = prob.evaluate(p, true);
  return {v.grad_tau, v.grad_delta};
}

inline double marginal_hamiltonian(const NoisyDataProblem& prob, const SpectralParams& p) {
  return prob.evaluate(p, false).value;
}

inline std::pair<Vector, Vector> marginal_gradient(const NoisyDataProblem& prob,
                                                   const SpectralParams& p) {
  auto v = prob.evaluate(p, true);
  return {v.grad_tau, v.grad_delta};
}

// ---------------------------------------------------------------------------
// Initialization

/// Moving average over `width` neighbours along every axis in signed mode
/// order, truncated at the lattice ends.
inline Vector smooth_modes(const RegularGrid& grid, const Vector& v, int half_width = 2) {
  Vector cur = v;
  for (int a = 0; a < grid.ndim(); ++a) {
    const long n = grid.n_points(a);
    const long stride = grid.stride(a);
    Vector next(cur.size());
    for (long i = 0; i < grid.size(); ++i) {
      const long j = grid.index(i, a);
      const long base = i - j * stride;
      const long pos = signed_index(j, n) + n / 2;  // 0..n-1 in signed order
      double acc = 0.0;
      int count = 0;
      for (long q = std::max(0L, pos - half_width); q <= std::min(n - 1, pos + half_width); ++q) {
        const long jj = ((q - n / 2) % n + n) % n;
        acc += cur[base + jj * stride];
        ++count;
      }
      next[i] = acc / count;
    }
    cur = next;
  }
  return symmetrize(grid, cur);
}

/// tau from the smoothed log of the raw power estimate, delta = 0.
inline SpectralParams initial_params(const SpectralObjective& obj) {
  const double floor = obj.power_floor();
  Vector raw = obj.raw_power();
  Vector logp(raw.size());
  for (long i = 0; i < raw.size(); ++i) logp[i] = std::log(std::max(raw[i], floor));
  SpectralParams p = obj.zero_params();
  p.tau = smooth_modes(obj.grid(), logp);
  return p;
}

// ---------------------------------------------------------------------------
// MAP estimation

struct MapResult {
  SpectralParams params;
  std::vector<double> hamiltonian_trace;
  bool converged = false;
  long iterations = 0;
  long evaluations = 0;
  double final_hamiltonian = 0.0;
  double gradient_norm = 0.0;
  double gradient_tolerance = 0.0;
  std::string message;
  bool approximate = false;
  bool capped = false;

  /// Laplace uncertainty of the log-spectrum and the contributions of the
  /// tau and tan(delta) curvature blocks (filled by curvature_uncertainty).
  Vector uncertainty_log_spectrum;
  Vector uncertainty_tau;
  Vector uncertainty_tan_delta;
  bool curvature_pseudo_inverse = false;
  bool uncertainty_approximate = false;

  const Vector& tau_bar() const { return params.tau; }
  const Vector& delta_bar() const { return params.delta; }
  Vector log_spectrum() const { return params.log_spectrum(); }
};

namespace detail {

/// Approximate reduced Hessian of the Hamiltonian, used as the inverse
/// initial L-BFGS metric. Likelihood curvature is clipped to keep it PD.
class MapPreconditioner {
 public:
  MapPreconditioner(const SpectralObjective& obj, const ReducedLattice& red,
                    const SpectralParams& p, const HamiltonianValue& h, long dense_cap) {
    const long n = obj.grid().size();
    const long m = red.size();
    const Vector c = (0.5 * h.curvature).cwiseMax(0.05).cwiseMin(50.0);
    const Vector delta = p.clamped_delta();
    const Vector sec2 = Vector::Ones(n) + delta.array().tan().square().matrix();
    const double nu2 = 1.0 / (obj.nu() * obj.nu());
    const auto e = red.expansion();
    const auto& pr = obj.priors();
    if (pr.sparse_available()) {
      Eigen::SparseMatrix<double> ptau = pr.tau_sparse(n), pdel = pr.delta_sparse(n);
      Eigen::SparseMatrix<double> htt = e.transpose() * ptau * e;
      Eigen::SparseMatrix<double> hdd = e.transpose() * pdel * e;
      std::vector<Eigen::Triplet<double>> t;
      auto push = [&](const Eigen::SparseMatrix<double>& blk, long ro, long co) {
        for (int k = 0; k < blk.outerSize(); ++k)
          for (Eigen::SparseMatrix<double>::InnerIterator it(blk, k); it; ++it)
            t.emplace_back(it.row() + ro, it.col() + co, it.value());
      };
      push(htt, 0, 0);
      push(hdd, m, m);
      for (long i = 0; i < n; ++i) {
        const long s = red.slot(i);
        t.emplace_back(s, s, c[i]);
        t.emplace_back(s, m + s, c[i] * sec2[i]);
        t.emplace_back(m + s, s, c[i] * sec2[i]);
        t.emplace_back(m + s, m + s, c[i] * sec2[i] * sec2[i] + nu2);
      }
      Eigen::SparseMatrix<double> hm(2 * m, 2 * m);
      hm.setFromTriplets(t.begin(), t.end());
      sparse_ = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>(hm);
      if (sparse_->info() != Eigen::Success) sparse_.reset();
    } else if (2 * m <= 2 * dense_cap) {
      const Eigen::MatrixXd ed(e);
      Eigen::MatrixXd hm = Eigen::MatrixXd::Zero(2 * m, 2 * m);
      hm.topLeftCorner(m, m) = ed.transpose() * pr.tau_dense(n, dense_cap) * ed;
      hm.bottomRightCorner(m, m) = ed.transpose() * pr.delta_dense(n, dense_cap) * ed;
      for (long i = 0; i < n; ++i) {
        const long s = red.slot(i);
        hm(s, s) += c[i];
        hm(s, m + s) += c[i] * sec2[i];
        hm(m + s, s) += c[i] * sec2[i];
        hm(m + s, m + s) += c[i] * sec2[i] * sec2[i] + nu2;
      }
      dense_ = std::make_shared<Eigen::LDLT<Eigen::MatrixXd>>(hm);
      if (dense_->info() != Eigen::Success) dense_.reset();
    }
    // Diagonal fallback.
    diag_ = Vector::Zero(2 * m);
    for (long i = 0; i < n; ++i) {
      const long s = red.slot(i);
      diag_[s] += c[i];
      diag_[m + s] += c[i] * sec2[i] * sec2[i] + nu2;
    }
  }

  Vector solve(const Vector& g) const {
    if (sparse_) return sparse_->solve(g);
    if (dense_) return dense_->solve(g);
    return g.cwiseQuotient(diag_);
  }

 private:
  std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> sparse_;
  std::shared_ptr<Eigen::LDLT<Eigen::MatrixXd>> dense_;
  Vector diag_;
};

}  // namespace detail

/// Minimize the Hamiltonian over (tau, delta) with delta confined to [-b, b].
inline MapResult minimize_map(const SpectralObjective& obj, const OptimizerConfig& cfg = {},
                              std::optional<SpectralParams> start = std::nullopt,
                              long dense_cap = convention::default_dense_cap) {
  const RegularGrid& grid = obj.grid();
  const ReducedLattice red(grid);
  const long m = red.size();
  SpectralParams p0 = start ? *start : initial_params(obj);
  require_same_grid(p0.grid, grid, "minimize_map");
  p0.epsilon = obj.epsilon();
  p0.nu = obj.nu();
  p0.tau = symmetrize(grid, p0.tau);
  p0.delta = symmetrize(grid, p0.clamped_delta());

  auto unpack = [&](const Vector& x) {
    SpectralParams p = p0;
    p.tau = red.expand(x.head(m));
    p.delta = red.expand(x.tail(m));
    return p;
  };

  bool approximate = false;
  OptimizerProblem prob;
  prob.evaluate = [&](const Vector& x, Vector* grad) {
    const SpectralParams p = unpack(x);
    HamiltonianValue h = obj.evaluate(p, grad != nullptr);
    approximate |= h.approximate;
    if (grad) {
      grad->resize(2 * m);
      grad->head(m) = red.reduce_gradient(h.grad_tau);
      grad->tail(m) = red.reduce_gradient(h.grad_delta);
    }
    return h.value;
  };
  prob.preconditioner = [&](const Vector& x) {
    const SpectralParams p = unpack(x);
    const HamiltonianValue h = obj.evaluate(p, true);
    auto pc = std::make_shared<detail::MapPreconditioner>(obj, red, p, h, dense_cap);
    return std::function<Vector(const Vector&)>([pc](const Vector& g) { return pc->solve(g); });
  };
  const double b = p0.bound();
  prob.lower.resize(2 * m);
  prob.upper.resize(2 * m);
  prob.lower.head(m).setConstant(-std::numeric_limits<double>::infinity());
  prob.upper.head(m).setConstant(std::numeric_limits<double>::infinity());
  prob.lower.tail(m).setConstant(-b);
  prob.upper.tail(m).setConstant(b);

  Vector x0(2 * m);
  x0.head(m) = red.restrict(p0.tau);
  x0.tail(m) = red.restrict(p0.delta);
  const double tol = cfg.gradient_tolerance > 0.0 ? cfg.gradient_tolerance
                                                  : 1e-6 * static_cast<double>(grid.size());
  OptimizerResult opt = minimize_lbfgs(prob, x0, cfg, tol);

  MapResult out;
  out.params = unpack(opt.x);
  out.hamiltonian_trace = std::move(opt.trace);
  out.converged = opt.converged;
  out.iterations = opt.iterations;
  out.evaluations = opt.evaluations;
  out.final_hamiltonian = opt.value;
  out.gradient_norm = opt.gradient_norm;
  out.gradient_tolerance = tol;
  out.message = opt.message;
  out.approximate = approximate;
  out.capped = (out.params.log_spectrum().array() > std::log(convention::max_power)).any();
  return out;
}

// ---------------------------------------------------------------------------
// Curvature uncertainty

struct CurvatureBlocks {
  Eigen::MatrixXd tau;        // d^2 H / dtau dtau
  Eigen::MatrixXd tan_delta;  // d^2 H / dt dt, t = tan(delta)
};

/// Curvature blocks of the Hamiltonian transformed to t = tan(delta), which
/// carries the extra Jacobian term -sum log cos^2(delta).
inline CurvatureBlocks curvature_blocks(const SpectralObjective& obj, const SpectralParams& p,
                                        long dense_cap = convention::default_dense_cap) {
  const long n = obj.grid().size();
  if (n > dense_cap) throw CapExceeded("curvature blocks exceed the dense cap");
  const HamiltonianValue h = obj.evaluate(p, true);
  const Vector lik = 0.5 * h.curvature;
  const auto& pr = obj.priors();
  const Vector delta = p.clamped_delta();
  const double nu2 = 1.0 / (obj.nu() * obj.nu());

  CurvatureBlocks out;
  out.tau = pr.tau_dense(n, dense_cap);
  out.tau.diagonal() += lik;

  Eigen::MatrixXd q = pr.delta_dense(n, dense_cap);
  q.diagonal().array() += nu2;
  const Vector qd = q * delta;
  const Vector cos2 = delta.array().cos().square().matrix();
  out.tan_delta = cos2.asDiagonal() * q * cos2.asDiagonal();
  for (long i = 0; i < n; ++i) {
    const double c = std::cos(delta[i]), s = std::sin(delta[i]);
    out.tan_delta(i, i) += lik[i] - 2.0 * c * c * c * s * qd[i] +
                           2.0 * c * c * std::cos(2.0 * delta[i]);
  }
  return out;
}

namespace detail {

/// Diagonal of the inverse of a symmetric matrix; pseudo-inverse when the
/// matrix is not positive definite.
inline Vector inverse_diagonal(const Eigen::MatrixXd& h, bool& pseudo) {
  Eigen::LLT<Eigen::MatrixXd> llt(h);
  if (llt.info() == Eigen::Success) {
    const long n = h.rows();
    Eigen::MatrixXd linv = Eigen::MatrixXd::Identity(n, n);
    llt.matrixL().solveInPlace(linv);
    return linv.colwise().squaredNorm().transpose();
  }
  pseudo = true;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  const Vector& ev = es.eigenvalues();
  const double tol = 1e-10 * ev.cwiseAbs().maxCoeff();
  Vector inv(ev.size());
  for (long i = 0; i < ev.size(); ++i) inv[i] = ev[i] > tol ? 1.0 / ev[i] : 0.0;
  return es.eigenvectors().cwiseAbs2() * inv;
}

}  // namespace detail

/// Matrix-free curvature block, the same matrices curvature_blocks builds.
class CurvatureOp final : public LinearOperator {
 public:
  enum class Block { tau, tan_delta };

  CurvatureOp(const SpectralObjective& obj, const SpectralParams& p, Block which)
      : obj_(obj), which_(which), delta_(p.clamped_delta()) {
    const HamiltonianValue h = obj.evaluate(p, true);
    diag_ = 0.5 * h.curvature;
    if (which == Block::tan_delta) {
      cos2_ = delta_.array().cos().square().matrix();
      const Vector qd = q_apply(delta_);
      for (long i = 0; i < delta_.size(); ++i) {
        const double c = std::cos(delta_[i]), s = std::sin(delta_[i]);
        diag_[i] += -2.0 * c * c * c * s * qd[i] + 2.0 * c * c * std::cos(2.0 * delta_[i]);
      }
    }
  }
  long domain_size() const override { return diag_.size(); }
  long codomain_size() const override { return diag_.size(); }
  Vector apply(const Vector& v) const override {
    if (which_ == Block::tau) return diag_.cwiseProduct(v) + obj_.priors().tau_gradient(v);
    return diag_.cwiseProduct(v) + cos2_.cwiseProduct(q_apply(cos2_.cwiseProduct(v)));
  }
  Vector adjoint_apply(const Vector& v) const override { return apply(v); }

 private:
  Vector q_apply(const Vector& v) const { return obj_.priors().delta_gradient(v); }

  const SpectralObjective& obj_;
  Block which_;
  Vector delta_, diag_, cos2_;
};

/// sqrt of diag of the inverse curvature for the log-spectrum tau + tan(delta),
/// summing the tau and tan(delta) block contributions in quadrature. Lattices
/// above the dense cap use `probes` Hutchinson probes with CG solves.
inline void curvature_uncertainty(MapResult& result, const SpectralObjective& obj,
                                  long dense_cap = convention::default_dense_cap, long probes = 0,
                                  std::uint64_t seed = 0) {
  Vector vt, vd;
  bool pseudo = false;
  if (obj.grid().size() <= dense_cap) {
    const CurvatureBlocks blocks = curvature_blocks(obj, result.params, dense_cap);
    vt = detail::inverse_diagonal(blocks.tau, pseudo);
    vd = detail::inverse_diagonal(blocks.tan_delta, pseudo);
  } else {
    if (probes < 1)
      throw CapExceeded("curvature uncertainty above the dense cap needs probes");
    CGConfig cg{.rel_tolerance = 1e-8};
    auto inv = [&](CurvatureOp::Block b, std::uint64_t stream) {
      auto op = std::make_shared<CurvatureOp>(obj, result.params, b);
      return diag_estimate(InverseCgOp(op, cg), probes, seed + stream, 0);
    };
    vt = inv(CurvatureOp::Block::tau, 1);
    vd = inv(CurvatureOp::Block::tan_delta, 2);
    result.uncertainty_approximate = true;
  }
  result.uncertainty_tau = vt.cwiseMax(0.0).cwiseSqrt();
  result.uncertainty_tan_delta = vd.cwiseMax(0.0).cwiseSqrt();
  result.uncertainty_log_spectrum = (vt + vd).cwiseMax(0.0).cwiseSqrt();
  result.curvature_pseudo_inverse = pseudo;
}

// ---------------------------------------------------------------------------
// Empirical-Bayes reconstruction

struct Reconstruction {
  Field mean;
  Field uncertainty;
  /// Prior standard deviation of a cell under the fitted spectrum.
  double prior_std = 0.0;
  PosteriorRoute route = PosteriorRoute::none;
  bool approximate = false;
};

/// Posterior mean and per-cell standard deviation of the field for a fixed
/// spectrum (tau_bar, delta_bar).
inline Reconstruction wiener_reconstruct(const NoisyDataProblem& prob, const SpectralParams& p) {
  require_same_grid(p.grid, prob.grid(), "wiener_reconstruct");
  const RegularGrid& grid = prob.grid();
  auto spec = evaluate_spectrum(p);
  const Vector s = spec.power / grid.cell_volume();
  const PosteriorSummary post =
      summarize_posterior(grid, s, prob.response(), prob.data(), prob.noise_variance(), false,
                          prob.options());
  const Vector var =
      posterior_cell_variance(grid, s, prob.response(), prob.noise_variance(), prob.options());
  Reconstruction out;
  out.mean = Field(grid, post.mean);
  out.uncertainty = Field(grid, var.cwiseMax(0.0).cwiseSqrt());
  out.prior_std = std::sqrt(s.mean());
  out.route = post.route;
  out.approximate = post.approximate;
  return out;
}

}  // namespace specfield
