#pragma once

// Linear operators on real cell (or data) vectors, conjugate gradients,
// dense materialization, log-determinants and diagonal probing.
//
// Operators act on plain coefficient vectors. Adjoints are taken with respect
// to the Euclidean product of those vectors; for field-to-field operators
// this coincides with the adjoint under the continuum product.

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "specfield/constants.hpp"
#include "specfield/errors.hpp"
#include "specfield/grid.hpp"
#include "specfield/rng.hpp"

namespace specfield {

using Vector = Eigen::VectorXd;

class LinearOperator {
 public:
  virtual ~LinearOperator() = default;
  virtual long domain_size() const = 0;
  virtual long codomain_size() const = 0;
  virtual Vector apply(const Vector& v) const = 0;
  virtual Vector adjoint_apply(const Vector& v) const = 0;
  /// Diagonal in the cell basis, when known in closed form.
  virtual std::optional<Vector> cell_diagonal() const { return std::nullopt; }
  /// Eigenvalues in the harmonic basis, when the operator is diagonal there.
  virtual std::optional<Vector> harmonic_diagonal() const { return std::nullopt; }

 protected:
  void check_domain(const Vector& v) const {
    if (v.size() != domain_size())
      throw GridError("operator domain mismatch: expected " + std::to_string(domain_size()) +
                      ", got " + std::to_string(v.size()));
  }
  void check_codomain(const Vector& v) const {
    if (v.size() != codomain_size())
      throw GridError("operator codomain mismatch: expected " + std::to_string(codomain_size()) +
                      ", got " + std::to_string(v.size()));
  }
};

using LinOpPtr = std::shared_ptr<const LinearOperator>;

/// Multiplication by a positive real function of k in harmonic space.
class DiagonalHarmonicOp final : public LinearOperator {
 public:
  DiagonalHarmonicOp(RegularGrid grid, Vector multiplier)
      : grid_(std::move(grid)), multiplier_(std::move(multiplier)) {
    if (multiplier_.size() != grid_.size()) throw GridError("multiplier size mismatch");
    for (long i = 0; i < multiplier_.size(); ++i)
      if (!(multiplier_[i] > 0.0) || !std::isfinite(multiplier_[i]))
        throw InvalidArgument("diagonal harmonic operator entries must be positive and finite");
    symmetric_ = reflection_asymmetry(grid_, multiplier_) <= 1e-12;
  }

  const RegularGrid& grid() const { return grid_; }
  const Vector& multiplier() const { return multiplier_; }
  bool reflection_symmetric() const { return symmetric_; }

  long domain_size() const override { return grid_.size(); }
  long codomain_size() const override { return grid_.size(); }

  Vector apply(const Vector& v) const override { return filter(v, multiplier_); }
  Vector adjoint_apply(const Vector& v) const override { return filter(v, multiplier_); }

  HarmonicField apply(const HarmonicField& h) const {
    require_same_grid(h.grid, grid_, "DiagonalHarmonicOp");
    return {grid_, h.values.cwiseProduct(multiplier_.cast<std::complex<double>>()),
            h.hermitian && symmetric_};
  }
  Field apply(const Field& f) const {
    require_same_grid(f.grid, grid_, "DiagonalHarmonicOp");
    return {grid_, apply(f.values)};
  }

  std::optional<Vector> harmonic_diagonal() const override { return multiplier_; }
  std::optional<Vector> cell_diagonal() const override {
    return Vector::Constant(grid_.size(), multiplier_.mean());
  }

 private:
  Vector filter(const Vector& v, const Vector& m) const {
    check_domain(v);
    if (!symmetric_)
      throw InvalidArgument("real-space application needs a reflection-symmetric multiplier");
    Eigen::VectorXcd buf = v.cast<std::complex<double>>();
    fft::transform(grid_.shape(), buf, fft::Direction::forward);
    buf = buf.cwiseProduct(m.cast<std::complex<double>>());
    fft::transform(grid_.shape(), buf, fft::Direction::backward);
    return buf.real() / static_cast<double>(grid_.size());
  }

  RegularGrid grid_;
  Vector multiplier_;
  bool symmetric_ = true;
};

/// Reciprocal of a diagonal harmonic operator.
class InverseDiagonalOp final : public LinearOperator {
 public:
  explicit InverseDiagonalOp(const DiagonalHarmonicOp& op)
      : inner_(op.grid(), op.multiplier().cwiseInverse()) {}
  long domain_size() const override { return inner_.domain_size(); }
  long codomain_size() const override { return inner_.codomain_size(); }
  Vector apply(const Vector& v) const override { return inner_.apply(v); }
  Vector adjoint_apply(const Vector& v) const override { return inner_.adjoint_apply(v); }
  std::optional<Vector> harmonic_diagonal() const override { return inner_.harmonic_diagonal(); }
  std::optional<Vector> cell_diagonal() const override { return inner_.cell_diagonal(); }
  const DiagonalHarmonicOp& as_diagonal() const { return inner_; }

 private:
  DiagonalHarmonicOp inner_;
};

/// Cell mask response. `select` maps a field to the vector of observed cells;
/// `zero_fill` keeps the field shape and zeroes masked cells.
class MaskResponseOp final : public LinearOperator {
 public:
  enum class Mode { select, zero_fill };

  MaskResponseOp(RegularGrid grid, std::vector<std::uint8_t> observed, Mode mode = Mode::select)
      : grid_(std::move(grid)), observed_(std::move(observed)), mode_(mode) {
    if (static_cast<long>(observed_.size()) != grid_.size()) throw GridError("mask size mismatch");
    for (long i = 0; i < grid_.size(); ++i)
      if (observed_[i]) indices_.push_back(i);
  }

  const RegularGrid& grid() const { return grid_; }
  const std::vector<std::uint8_t>& observed() const { return observed_; }
  const std::vector<long>& observed_indices() const { return indices_; }
  long n_observed() const { return static_cast<long>(indices_.size()); }
  Mode mode() const { return mode_; }
  double observed_fraction() const {
    return static_cast<double>(indices_.size()) / static_cast<double>(grid_.size());
  }

  long domain_size() const override { return grid_.size(); }
  long codomain_size() const override {
    return mode_ == Mode::select ? n_observed() : grid_.size();
  }

  Vector apply(const Vector& v) const override {
    check_domain(v);
    if (mode_ == Mode::zero_fill) return v.cwiseProduct(mask_vector());
    Vector out(n_observed());
    for (long u = 0; u < n_observed(); ++u) out[u] = v[indices_[u]];
    return out;
  }

  Vector adjoint_apply(const Vector& d) const override {
    check_codomain(d);
    if (mode_ == Mode::zero_fill) return d.cwiseProduct(mask_vector());
    Vector out = Vector::Zero(grid_.size());
    for (long u = 0; u < n_observed(); ++u) out[indices_[u]] = d[u];
    return out;
  }

  std::optional<Vector> cell_diagonal() const override {
    if (mode_ == Mode::zero_fill) return mask_vector();
    return std::nullopt;
  }

  Vector mask_vector() const {
    Vector m(grid_.size());
    for (long i = 0; i < grid_.size(); ++i) m[i] = observed_[i] ? 1.0 : 0.0;
    return m;
  }

 private:
  RegularGrid grid_;
  std::vector<std::uint8_t> observed_;
  std::vector<long> indices_;
  Mode mode_;
};

/// scale * identity, e.g. the noise covariance sigma_n^2 * 1.
class ScaledIdentityOp final : public LinearOperator {
 public:
  ScaledIdentityOp(long n, double scale) : n_(n), scale_(scale) {}
  double scale() const { return scale_; }
  long domain_size() const override { return n_; }
  long codomain_size() const override { return n_; }
  Vector apply(const Vector& v) const override {
    check_domain(v);
    return scale_ * v;
  }
  Vector adjoint_apply(const Vector& v) const override { return apply(v); }
  std::optional<Vector> cell_diagonal() const override { return Vector::Constant(n_, scale_); }

 private:
  long n_;
  double scale_;
};

/// alpha * A + beta * B
class SumOp final : public LinearOperator {
 public:
  SumOp(LinOpPtr a, LinOpPtr b, double alpha = 1.0, double beta = 1.0)
      : a_(std::move(a)), b_(std::move(b)), alpha_(alpha), beta_(beta) {
    if (a_->domain_size() != b_->domain_size() || a_->codomain_size() != b_->codomain_size())
      throw GridError("SumOp: operand shapes differ");
  }
  long domain_size() const override { return a_->domain_size(); }
  long codomain_size() const override { return a_->codomain_size(); }
  Vector apply(const Vector& v) const override {
    return alpha_ * a_->apply(v) + beta_ * b_->apply(v);
  }
  Vector adjoint_apply(const Vector& v) const override {
    return alpha_ * a_->adjoint_apply(v) + beta_ * b_->adjoint_apply(v);
  }

 private:
  LinOpPtr a_, b_;
  double alpha_, beta_;
};

/// A * B (B applied first).
class ChainOp final : public LinearOperator {
 public:
  ChainOp(LinOpPtr a, LinOpPtr b) : a_(std::move(a)), b_(std::move(b)) {
    if (a_->domain_size() != b_->codomain_size()) throw GridError("ChainOp: shapes do not chain");
  }
  long domain_size() const override { return b_->domain_size(); }
  long codomain_size() const override { return a_->codomain_size(); }
  Vector apply(const Vector& v) const override { return a_->apply(b_->apply(v)); }
  Vector adjoint_apply(const Vector& v) const override {
    return b_->adjoint_apply(a_->adjoint_apply(v));
  }

 private:
  LinOpPtr a_, b_;
};

/// A^T, e.g. R^T for a response R.
class AdjointOp final : public LinearOperator {
 public:
  explicit AdjointOp(LinOpPtr a) : a_(std::move(a)) {}
  long domain_size() const override { return a_->codomain_size(); }
  long codomain_size() const override { return a_->domain_size(); }
  Vector apply(const Vector& v) const override { return a_->adjoint_apply(v); }
  Vector adjoint_apply(const Vector& v) const override { return a_->apply(v); }

 private:
  LinOpPtr a_;
};

class SparseMatrixOp final : public LinearOperator {
 public:
  explicit SparseMatrixOp(Eigen::SparseMatrix<double> m) : m_(std::move(m)) {}
  const Eigen::SparseMatrix<double>& matrix() const { return m_; }
  long domain_size() const override { return m_.cols(); }
  long codomain_size() const override { return m_.rows(); }
  Vector apply(const Vector& v) const override {
    check_domain(v);
    return m_ * v;
  }
  Vector adjoint_apply(const Vector& v) const override {
    check_codomain(v);
    return m_.transpose() * v;
  }
  std::optional<Vector> cell_diagonal() const override {
    if (m_.rows() != m_.cols()) return std::nullopt;
    return Vector(m_.diagonal());
  }

 private:
  Eigen::SparseMatrix<double> m_;
};

class DenseMatrixOp final : public LinearOperator {
 public:
  explicit DenseMatrixOp(Eigen::MatrixXd m) : m_(std::move(m)) {}
  const Eigen::MatrixXd& matrix() const { return m_; }
  long domain_size() const override { return m_.cols(); }
  long codomain_size() const override { return m_.rows(); }
  Vector apply(const Vector& v) const override {
    check_domain(v);
    return m_ * v;
  }
  Vector adjoint_apply(const Vector& v) const override {
    check_codomain(v);
    return m_.transpose() * v;
  }
  std::optional<Vector> cell_diagonal() const override {
    if (m_.rows() != m_.cols()) return std::nullopt;
    return Vector(m_.diagonal());
  }

 private:
  Eigen::MatrixXd m_;
};

inline Field apply(const LinearOperator& op, const Field& f) { return {f.grid, op.apply(f.values)}; }

// ---------------------------------------------------------------------------
// Conjugate gradients

struct CGConfig {
  double rel_tolerance = 1e-8;
  double abs_tolerance = 1e-12;
  /// 0 selects 10 * N.
  long max_iters = 0;
  /// Approximate inverse of the system operator.
  LinOpPtr preconditioner;
};

struct CGResult {
  Vector x;
  long iterations = 0;
  double residual = 0.0;  // relative to ||b||
};

/// Solve op x = b for a self-adjoint positive definite op.
inline CGResult cg_solve(const LinearOperator& op, const Vector& b, const CGConfig& cfg = {},
                         const Vector* x0 = nullptr) {
  if (!(cfg.rel_tolerance > 0.0) || !(cfg.abs_tolerance > 0.0))
    throw InvalidArgument("CG tolerances must be positive");
  if (cfg.max_iters < 0) throw InvalidArgument("CG max_iters must be >= 1");
  const long n = op.domain_size();
  if (b.size() != n || op.codomain_size() != n) throw GridError("cg_solve: shape mismatch");
  const double bnorm = b.norm();
  CGResult out;
  if (bnorm == 0.0) {
    out.x = Vector::Zero(n);
    return out;
  }
  const long max_iters = cfg.max_iters > 0 ? cfg.max_iters : 10 * n;
  const double target = std::max(cfg.rel_tolerance * bnorm, cfg.abs_tolerance);

  Vector x = x0 ? *x0 : Vector::Zero(n);
  Vector r = x0 ? Vector(b - op.apply(x)) : b;
  Vector z = cfg.preconditioner ? cfg.preconditioner->apply(r) : r;
  Vector p = z;
  double rz = r.dot(z);
  double rnorm = r.norm();
  long it = 0;
  while (rnorm > target) {
    if (it >= max_iters)
      throw ConvergenceError("conjugate gradients did not converge", rnorm / bnorm,
                             static_cast<int>(it));
    Vector q = op.apply(p);
    const double curvature = p.dot(q);
    if (!(curvature > 0.0)) throw NotPositiveError("operator not positive (CG breakdown)");
    const double alpha = rz / curvature;
    x += alpha * p;
    r -= alpha * q;
    // Periodically recompute the true residual to limit drift.
    if ((it + 1) % 200 == 0) r = b - op.apply(x);
    z = cfg.preconditioner ? cfg.preconditioner->apply(r) : r;
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
    rnorm = r.norm();
    ++it;
  }
  out.x = std::move(x);
  out.iterations = it;
  out.residual = rnorm / bnorm;
  return out;
}

inline CGResult cg_solve(const LinearOperator& op, const Field& b, const CGConfig& cfg = {}) {
  return cg_solve(op, b.values, cfg);
}

/// Applies op^{-1} by conjugate gradients.
class InverseCgOp final : public LinearOperator {
 public:
  InverseCgOp(LinOpPtr op, CGConfig cfg) : op_(std::move(op)), cfg_(std::move(cfg)) {}
  long domain_size() const override { return op_->domain_size(); }
  long codomain_size() const override { return op_->codomain_size(); }
  Vector apply(const Vector& v) const override { return cg_solve(*op_, v, cfg_).x; }
  Vector adjoint_apply(const Vector& v) const override { return apply(v); }

 private:
  LinOpPtr op_;
  CGConfig cfg_;
};

// ---------------------------------------------------------------------------
// Dense paths

inline Eigen::MatrixXd dense_materialize(const LinearOperator& op,
                                         long cap = convention::default_dense_cap) {
  const long n = op.domain_size();
  if (n > cap || op.codomain_size() > cap)
    throw CapExceeded("dense materialization of a " + std::to_string(n) +
                      "-dimensional operator exceeds cap " + std::to_string(cap));
  if (auto* dense = dynamic_cast<const DenseMatrixOp*>(&op)) return dense->matrix();
  if (auto* sparse = dynamic_cast<const SparseMatrixOp*>(&op))
    return Eigen::MatrixXd(sparse->matrix());
  Eigen::MatrixXd m(op.codomain_size(), n);
  Vector e = Vector::Zero(n);
  for (long j = 0; j < n; ++j) {
    e[j] = 1.0;
    m.col(j) = op.apply(e);
    e[j] = 0.0;
  }
  return m;
}

enum class LogDetMethod { exact, diagonal };

/// log|A| of a symmetric positive definite dense matrix via Cholesky.
inline double log_det_spd(const Eigen::MatrixXd& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw NotPositiveError("operator not positive (Cholesky failed)");
  const auto& l = llt.matrixLLT();
  double acc = 0.0;
  for (long i = 0; i < a.rows(); ++i) {
    if (!(l(i, i) > 0.0)) throw NotPositiveError("operator not positive (non-positive pivot)");
    acc += std::log(l(i, i));
  }
  return 2.0 * acc;
}

inline double log_det(const LinearOperator& op, LogDetMethod method,
                      long cap = convention::default_dense_cap) {
  if (method == LogDetMethod::diagonal) {
    if (auto h = op.harmonic_diagonal()) {
      if ((h->array() <= 0.0).any()) throw NotPositiveError("operator not positive");
      return h->array().log().sum();
    }
    if (auto* s = dynamic_cast<const ScaledIdentityOp*>(&op)) {
      if (!(s->scale() > 0.0)) throw NotPositiveError("operator not positive");
      return static_cast<double>(s->domain_size()) * std::log(s->scale());
    }
    throw InvalidArgument("diagonal log-det requires an operator diagonal in a known basis");
  }
  return log_det_spd(dense_materialize(op, cap));
}

/// Rademacher +-1 probe vector from a dedicated stream.
inline Vector rademacher(long n, std::mt19937_64& rng) {
  Vector z(n);
  for (long i = 0; i < n; ++i) z[i] = (rng() & 1u) ? 1.0 : -1.0;
  return z;
}

/// Diagonal of a self-adjoint operator: closed form, dense, or Hutchinson probes.
inline Vector diag_estimate(const LinearOperator& op, long n_probes, std::uint64_t seed,
                            long cap = convention::default_dense_cap) {
  if (n_probes < 1) throw InvalidArgument("diag_estimate needs at least one probe");
  // Circulant operators report the mean eigenvalue on every cell.
  if (auto d = op.cell_diagonal()) return *d;
  const long n = op.domain_size();
  if (n <= cap) return dense_materialize(op, cap).diagonal();
  auto rng = make_rng(seed, "diag_estimate");
  Vector acc = Vector::Zero(n);
  for (long p = 0; p < n_probes; ++p) {
    Vector z = rademacher(n, rng);
    acc += z.cwiseProduct(op.apply(z));
  }
  return acc / static_cast<double>(n_probes);
}

}  // namespace specfield
