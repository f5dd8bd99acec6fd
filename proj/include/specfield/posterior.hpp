#pragma once

// Gaussian field posterior for masked data with white noise:
//
//   D = (S^{-1} + R^T R / s2)^{-1},  j = R^T d / s2,  m = D j
//
// with S the circulant cell covariance (eigenvalues s_k = P_k / dV). The
// summary provides log(|S|/|D|), j^T D j, the mean m, and the harmonic
// diagonal of D together with |m_k|^2 (unitary DFT), which is everything the
// marginal Hamiltonian and its gradient need.
//
// Exact dense routes work on whichever of the masked / observed cell sets is
// smaller:
//   masked set U:   A = S^{-1} + 1/s2 (circulant), B = P_U C P_U^T with C the
//                   circulant with eigenvalues s2^2 / (s + s2), so that
//                   D = A^{-1} + A^{-1} P_U^T B^{-1} P_U A^{-1}
//   observed set O: K = P_O (S + s2) P_O^T,  D = S - S P_O^T K^{-1} P_O S
// Above the dense cap everything is estimated with conjugate gradients on the
// whitened system W = 1 + S^{1/2} M S^{1/2} / s2 and random probes.

#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "specfield/constants.hpp"
#include "specfield/errors.hpp"
#include "specfield/fft.hpp"
#include "specfield/grid.hpp"
#include "specfield/operators.hpp"
#include "specfield/rng.hpp"

namespace specfield {

enum class PosteriorRoute { none, masked_set, observed_set, probed };

inline std::string to_string(PosteriorRoute r) {
  switch (r) {
    case PosteriorRoute::none: return "none";
    case PosteriorRoute::masked_set: return "masked_set";
    case PosteriorRoute::observed_set: return "observed_set";
    case PosteriorRoute::probed: return "probed";
  }
  return "unknown";
}

struct PosteriorOptions {
  long dense_cap = convention::default_dense_cap;
  /// Probe count above the dense cap; 0 makes the cap a hard error.
  long probes = 0;
  std::uint64_t seed = 0;
  long lanczos_steps = 40;
  double cg_tolerance = 1e-10;
};

struct PosteriorSummary {
  /// log(|S| / |D|)
  double log_det_ratio = 0.0;
  double jdj = 0.0;
  Vector mean;
  /// (U D U^H)_kk with U the unitary DFT.
  Vector harmonic_variance;
  /// |(U m)_k|^2
  Vector mean_power;
  PosteriorRoute route = PosteriorRoute::none;
  bool approximate = false;
};

namespace detail {

/// Real circulant kernel c(x) with eigenvalues lambda_k.
inline Vector circulant_kernel(const RegularGrid& grid, const Vector& lambda) {
  Eigen::VectorXcd buf = lambda.cast<std::complex<double>>();
  fft::transform(grid.shape(), buf, fft::Direction::backward);
  return buf.real() / static_cast<double>(grid.size());
}

/// Applies the circulant with eigenvalues lambda to a cell vector.
inline Vector circulant_apply(const RegularGrid& grid, const Vector& lambda, const Vector& v) {
  Eigen::VectorXcd buf = v.cast<std::complex<double>>();
  fft::transform(grid.shape(), buf, fft::Direction::forward);
  buf = buf.cwiseProduct(lambda.cast<std::complex<double>>());
  fft::transform(grid.shape(), buf, fft::Direction::backward);
  return buf.real() / static_cast<double>(grid.size());
}

/// |U v|^2 per mode.
inline Vector unitary_power(const RegularGrid& grid, const Vector& v) {
  Eigen::VectorXcd buf = v.cast<std::complex<double>>();
  fft::transform(grid.shape(), buf, fft::Direction::forward);
  return buf.cwiseAbs2() / static_cast<double>(grid.size());
}

/// Flat index of x_a - x_b under periodic wrap, for cells of a fixed subset.
class DifferenceIndex {
 public:
  DifferenceIndex(const RegularGrid& grid, const std::vector<long>& cells) : grid_(grid) {
    const int dim = grid.ndim();
    coords_.resize(cells.size() * static_cast<std::size_t>(dim));
    for (std::size_t c = 0; c < cells.size(); ++c)
      for (int a = 0; a < dim; ++a) coords_[c * dim + a] = grid.index(cells[c], a);
  }

  long operator()(std::size_t p, std::size_t q) const {
    const int dim = grid_.ndim();
    long f = 0;
    for (int a = 0; a < dim; ++a) {
      const long n = grid_.n_points(a);
      long d = coords_[p * dim + a] - coords_[q * dim + a];
      if (d < 0) d += n;
      f += d * grid_.stride(a);
    }
    return f;
  }

 private:
  const RegularGrid& grid_;
  std::vector<long> coords_;
};

/// Dense sub-matrix of a circulant restricted to `cells`.
inline Eigen::MatrixXd circulant_block(const RegularGrid& grid, const Vector& kernel,
                                       const std::vector<long>& cells) {
  DifferenceIndex diff(grid, cells);
  const long n = static_cast<long>(cells.size());
  Eigen::MatrixXd m(n, n);
  for (long q = 0; q < n; ++q)
    for (long p = 0; p < n; ++p) m(p, q) = kernel[diff(p, q)];
  return m;
}

/// (1/N) sum_{p,q} Minv_pq exp(-i k (x_p - x_q)) at every mode.
inline Vector harmonic_quadratic_diagonal(const RegularGrid& grid, const Eigen::MatrixXd& minv,
                                          const std::vector<long>& cells) {
  DifferenceIndex diff(grid, cells);
  const long n = static_cast<long>(cells.size());
  Eigen::VectorXcd h = Eigen::VectorXcd::Zero(grid.size());
  for (long q = 0; q < n; ++q)
    for (long p = 0; p < n; ++p) h[diff(p, q)] += minv(p, q);
  fft::transform(grid.shape(), h, fft::Direction::forward);
  return h.real() / static_cast<double>(grid.size());
}

inline Eigen::LLT<Eigen::MatrixXd> factor_spd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw NotPositiveError(std::string("operator not positive (") + what + ")");
  return llt;
}

inline double llt_log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// Whitened posterior precision W = 1 + S^{1/2} M S^{1/2} / s2.
class WhitenedPrecision final : public LinearOperator {
 public:
  WhitenedPrecision(const RegularGrid& grid, Vector sqrt_s, Vector mask, double s2)
      : grid_(grid), sqrt_s_(std::move(sqrt_s)), mask_(std::move(mask)), s2_(s2) {}
  long domain_size() const override { return grid_.size(); }
  long codomain_size() const override { return grid_.size(); }
  Vector apply(const Vector& v) const override {
    Vector t = circulant_apply(grid_, sqrt_s_, v);
    t = t.cwiseProduct(mask_) / s2_;
    return v + circulant_apply(grid_, sqrt_s_, t);
  }
  Vector adjoint_apply(const Vector& v) const override { return apply(v); }

 private:
  const RegularGrid& grid_;
  Vector sqrt_s_, mask_;
  double s2_;
};

/// Stochastic Lanczos quadrature estimate of log|W|.
inline double slq_log_det(const LinearOperator& w, long probes, long steps, std::uint64_t seed) {
  const long n = w.domain_size();
  auto rng = make_rng(seed, "slq_log_det");
  double acc = 0.0;
  for (long p = 0; p < probes; ++p) {
    Vector z = rademacher(n, rng);
    const double znorm2 = z.squaredNorm();
    std::vector<Vector> basis;
    std::vector<double> alpha, beta;
    Vector q = z / std::sqrt(znorm2), q_prev = Vector::Zero(n);
    double b = 0.0;
    for (long it = 0; it < std::min(steps, n); ++it) {
      basis.push_back(q);
      Vector v = w.apply(q) - b * q_prev;
      const double a = q.dot(v);
      v -= a * q;
      for (const auto& u : basis) v -= u.dot(v) * u;  // full reorthogonalization
      alpha.push_back(a);
      b = v.norm();
      if (b < 1e-12 * std::abs(a)) break;
      beta.push_back(b);
      q_prev = q;
      q = v / b;
    }
    const long k = static_cast<long>(alpha.size());
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(k, k);
    for (long i = 0; i < k; ++i) {
      t(i, i) = alpha[i];
      if (i + 1 < k) t(i, i + 1) = t(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
    double quad = 0.0;
    for (long i = 0; i < k; ++i) {
      const double theta = es.eigenvalues()[i];
      if (!(theta > 0.0)) throw NotPositiveError("operator not positive (Lanczos)");
      quad += es.eigenvectors()(0, i) * es.eigenvectors()(0, i) * std::log(theta);
    }
    acc += znorm2 * quad;
  }
  return acc / static_cast<double>(probes);
}

/// Real unit-variance probe whose harmonic coefficients have random phases
/// and unit modulus; returns (cell vector, harmonic coefficients).
inline std::pair<Vector, Eigen::VectorXcd> phase_probe(const RegularGrid& grid,
                                                      std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, convention::two_pi);
  Eigen::VectorXcd zeta(grid.size());
  for (long i = 0; i < grid.size(); ++i) {
    const long j = grid.mirror(i);
    if (j == i) zeta[i] = (rng() & 1u) ? 1.0 : -1.0;
    else if (i < j) zeta[i] = std::polar(1.0, u(rng));
  }
  for (long i = 0; i < grid.size(); ++i) {
    const long j = grid.mirror(i);
    if (i > j) zeta[i] = std::conj(zeta[j]);
  }
  Eigen::VectorXcd buf = zeta;
  fft::transform(grid.shape(), buf, fft::Direction::backward);
  return {buf.real() / std::sqrt(static_cast<double>(grid.size())), zeta};
}

}  // namespace detail

/// Posterior summary for cell covariance eigenvalues `s` (length N), mask
/// `r` and data `d` on the observed cells, noise variance `s2`.
inline PosteriorSummary summarize_posterior(const RegularGrid& grid, const Vector& s,
                                            const MaskResponseOp& r, const Vector& d, double s2,
                                            bool need_gradient, const PosteriorOptions& opt = {}) {
  if (s.size() != grid.size()) throw GridError("posterior: spectrum size mismatch");
  if (d.size() != r.n_observed()) throw GridError("posterior: data length mismatch");
  if (!(s2 > 0.0)) throw InvalidArgument("noise variance must be positive");
  const long n = grid.size();
  const double nd = static_cast<double>(n);
  PosteriorSummary out;

  if (r.n_observed() == 0) {
    out.mean = Vector::Zero(n);
    out.harmonic_variance = s;
    out.mean_power = Vector::Zero(n);
    return out;
  }

  std::vector<long> masked;
  for (long i = 0; i < n; ++i)
    if (!r.observed()[i]) masked.push_back(i);
  const Vector j = r.adjoint_apply(d) / s2;

  if (n > opt.dense_cap) {
    if (opt.probes < 1)
      throw CapExceeded("grid of " + std::to_string(n) + " cells exceeds the dense cap " +
                        std::to_string(opt.dense_cap) + " and probing is disabled");
    out.route = PosteriorRoute::probed;
    out.approximate = true;
    const Vector sqrt_s = s.cwiseSqrt();
    detail::WhitenedPrecision w(grid, sqrt_s, r.mask_vector(), s2);
    CGConfig cg{.rel_tolerance = opt.cg_tolerance};
    cg.preconditioner = std::make_shared<DiagonalHarmonicOp>(
        grid, (Vector::Ones(n) + s * (r.observed_fraction() / s2)).cwiseInverse());
    const Vector xi = cg_solve(w, detail::circulant_apply(grid, sqrt_s, j), cg).x;
    out.mean = detail::circulant_apply(grid, sqrt_s, xi);
    out.jdj = j.dot(out.mean);
    out.log_det_ratio = detail::slq_log_det(w, opt.probes, opt.lanczos_steps, opt.seed);
    out.mean_power = detail::unitary_power(grid, out.mean);
    if (need_gradient) {
      auto rng = make_rng(opt.seed, "harmonic_variance");
      Vector acc = Vector::Zero(n);
      for (long p = 0; p < opt.probes; ++p) {
        auto [z, zeta] = detail::phase_probe(grid, rng);
        Eigen::VectorXcd x = cg_solve(w, z, cg).x.cast<std::complex<double>>();
        fft::transform(grid.shape(), x, fft::Direction::forward);
        x /= std::sqrt(nd);
        for (long i = 0; i < n; ++i) acc[i] += (std::conj(zeta[i]) * x[i]).real();
      }
      out.harmonic_variance = s.cwiseProduct(acc) / static_cast<double>(opt.probes);
    }
    return out;
  }

  const long n_obs = r.n_observed();
  const long n_mask = static_cast<long>(masked.size());
  if (n_mask <= n_obs) {
    out.route = PosteriorRoute::masked_set;
    const Vector a = s.cwiseInverse() + Vector::Constant(n, 1.0 / s2);
    const Vector a_inv = (s * s2).cwiseQuotient(s + Vector::Constant(n, s2));
    const Vector y = detail::circulant_apply(grid, a_inv, j);
    out.log_det_ratio = (s / s2).array().log1p().sum();
    if (n_mask == 0) {
      out.mean = y;
      out.jdj = j.dot(y);
      out.mean_power = detail::unitary_power(grid, y);
      out.harmonic_variance = a_inv;
      return out;
    }
    const Vector cb = detail::circulant_kernel(
        grid, (s2 * s2) * (s + Vector::Constant(n, s2)).cwiseInverse());
    const Eigen::MatrixXd b = detail::circulant_block(grid, cb, masked);
    const auto llt = detail::factor_spd(b, "masked-set block");
    out.log_det_ratio += detail::llt_log_det(llt) - static_cast<double>(n_mask) * std::log(s2);
    Vector yu(n_mask);
    for (long u = 0; u < n_mask; ++u) yu[u] = y[masked[u]];
    const Vector zu = llt.solve(yu);
    Vector w = Vector::Zero(n);
    for (long u = 0; u < n_mask; ++u) w[masked[u]] = zu[u];
    out.mean = y + detail::circulant_apply(grid, a_inv, w);
    out.jdj = j.dot(out.mean);
    out.mean_power = detail::unitary_power(grid, out.mean);
    if (need_gradient) {
      const Eigen::MatrixXd binv = llt.solve(Eigen::MatrixXd::Identity(n_mask, n_mask));
      const Vector q = detail::harmonic_quadratic_diagonal(grid, binv, masked);
      out.harmonic_variance = a_inv + q.cwiseProduct(a_inv.cwiseAbs2());
    }
    return out;
  }

  out.route = PosteriorRoute::observed_set;
  const auto& obs = r.observed_indices();
  const Vector ck = detail::circulant_kernel(grid, s + Vector::Constant(n, s2));
  const Eigen::MatrixXd k = detail::circulant_block(grid, ck, obs);
  const auto llt = detail::factor_spd(k, "observed-set block");
  out.log_det_ratio = detail::llt_log_det(llt) - static_cast<double>(n_obs) * std::log(s2);
  const Vector kd = llt.solve(d);
  out.jdj = d.squaredNorm() / s2 - d.dot(kd);
  out.mean = detail::circulant_apply(grid, s, r.adjoint_apply(kd));
  out.mean_power = detail::unitary_power(grid, out.mean);
  if (need_gradient) {
    const Eigen::MatrixXd kinv = llt.solve(Eigen::MatrixXd::Identity(n_obs, n_obs));
    const Vector q = detail::harmonic_quadratic_diagonal(grid, kinv, obs);
    out.harmonic_variance = s - q.cwiseProduct(s.cwiseAbs2());
  }
  return out;
}

/// Diagonal of D in the cell basis.
inline Vector posterior_cell_variance(const RegularGrid& grid, const Vector& s,
                                      const MaskResponseOp& r, double s2,
                                      const PosteriorOptions& opt = {}) {
  const long n = grid.size();
  if (!(s2 > 0.0)) throw InvalidArgument("noise variance must be positive");
  if (r.n_observed() == 0) return Vector::Constant(n, s.mean());

  if (n > opt.dense_cap) {
    if (opt.probes < 1) throw CapExceeded("posterior variance above the dense cap needs probes");
    const Vector sqrt_s = s.cwiseSqrt();
    detail::WhitenedPrecision w(grid, sqrt_s, r.mask_vector(), s2);
    CGConfig cg{.rel_tolerance = opt.cg_tolerance};
    cg.preconditioner = std::make_shared<DiagonalHarmonicOp>(
        grid, (Vector::Ones(n) + s * (r.observed_fraction() / s2)).cwiseInverse());
    auto rng = make_rng(opt.seed, "cell_variance");
    Vector acc = Vector::Zero(n);
    for (long p = 0; p < opt.probes; ++p) {
      Vector z = rademacher(n, rng);
      Vector v = detail::circulant_apply(grid, sqrt_s, z);
      v = detail::circulant_apply(grid, sqrt_s, cg_solve(w, v, cg).x);
      acc += z.cwiseProduct(v);
    }
    return acc / static_cast<double>(opt.probes);
  }

  std::vector<long> masked;
  for (long i = 0; i < n; ++i)
    if (!r.observed()[i]) masked.push_back(i);
  const bool use_masked = static_cast<long>(masked.size()) <= r.n_observed();
  const std::vector<long>& cells = use_masked ? masked : r.observed_indices();
  const long m = static_cast<long>(cells.size());

  // Kernel of the circulant part (A^{-1} or S) and of the block matrix.
  const Vector base_eig = use_masked
                              ? Vector((s * s2).cwiseQuotient(s + Vector::Constant(n, s2)))
                              : s;
  const Vector base = detail::circulant_kernel(grid, base_eig);
  Vector out = Vector::Constant(n, base[0]);
  if (m == 0) return out;
  const Vector block_eig = use_masked
                               ? Vector((s2 * s2) * (s + Vector::Constant(n, s2)).cwiseInverse())
                               : Vector(s + Vector::Constant(n, s2));
  const auto llt = detail::factor_spd(
      detail::circulant_block(grid, detail::circulant_kernel(grid, block_eig), cells), "variance block");

  // G_xu = base(x - x_u)
  Eigen::MatrixXd g(n, m);
  for (long u = 0; u < m; ++u)
    for (long x = 0; x < n; ++x) {
      long f = 0;
      for (int a = 0; a < grid.ndim(); ++a) {
        const long nn = grid.n_points(a);
        long dd = grid.index(x, a) - grid.index(cells[u], a);
        if (dd < 0) dd += nn;
        f += dd * grid.stride(a);
      }
      g(x, u) = base[f];
    }
  const Eigen::MatrixXd gt_solved = llt.solve(g.transpose());  // m x n
  const Vector quad = (g.transpose().cwiseProduct(gt_solved)).colwise().sum().transpose();
  return use_masked ? Vector(out + quad) : Vector(out - quad);
}

}  // namespace specfield
