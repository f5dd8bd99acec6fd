#pragma once

// Smoothness priors over the harmonic lattice.
//
// The log-log smoothness precision penalizes every entry of the Hessian of a
// lattice function psi taken with respect to log|k_i|:
//
//   psi^T T^{-1} psi = (1/s^2) sum_{i<=j} c_ij int d^M log|k| |d^2 psi / dlog|k_i| dlog|k_j||^2
//
// with c_ii = 1 and c_ij = 2, so saddle-shaped psi are penalized even where the
// log-Laplacian vanishes. Negative k use |d log(-k)| = |d log k|: each axis
// splits into two half-ladders |m| = 1..n/2 (the Nyquist mode belongs to both)
// and the integral runs over the 2^M sign quadrants. Rows with k_i = 0 are
// excluded; the zero-mode precision D_eta (plain second k-derivatives) is
// what constrains them.

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "specfield/errors.hpp"
#include "specfield/fft.hpp"
#include "specfield/grid.hpp"
#include "specfield/operators.hpp"

namespace specfield {

enum class DerivativeBackend { finite_difference, fourier };

inline std::string to_string(DerivativeBackend b) {
  return b == DerivativeBackend::fourier ? "fourier" : "finite_difference";
}

inline DerivativeBackend parse_backend(const std::string& s) {
  if (s == "finite_difference" || s == "fd") return DerivativeBackend::finite_difference;
  if (s == "fourier") return DerivativeBackend::fourier;
  throw InvalidArgument("unknown derivative backend '" + s + "'");
}

struct SmoothnessHyper {
  double sigma = 2.0;  // tau strength
  double mu = 2.0;     // delta strength
  double eta = 0.1;    // zero-mode strength
  DerivativeBackend backend = DerivativeBackend::finite_difference;

  void validate() const {
    if (!(sigma > 0.0) || !(mu > 0.0) || !(eta > 0.0))
      throw InvalidArgument("smoothness hyper-parameters must be strictly positive");
  }
};

/// Finite-difference weights for derivative `order` at `x0` on arbitrary nodes
/// (Fornberg's recursion).
inline std::vector<double> fd_weights(double x0, const std::vector<double>& nodes, int order) {
  const int n = static_cast<int>(nodes.size());
  std::vector<std::vector<double>> c(n, std::vector<double>(order + 1, 0.0));
  double c1 = 1.0, c4 = nodes[0] - x0;
  c[0][0] = 1.0;
  for (int i = 1; i < n; ++i) {
    const int mn = std::min(i, order);
    double c2 = 1.0;
    const double c5 = c4;
    c4 = nodes[i] - x0;
    for (int j = 0; j < i; ++j) {
      const double c3 = nodes[i] - nodes[j];
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k) c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
        c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
      }
      for (int k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
      c[j][0] = c4 * c[j][0] / c3;
    }
    c1 = c2;
  }
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = c[i][order];
  return w;
}

/// Stencil on a ladder: node positions (ladder slots) and weights.
struct Stencil {
  std::vector<int> slots;
  std::vector<double> weights;
};

/// log|k| half-ladders of every axis.
class LogCoordMap {
 public:
  struct HalfAxis {
    std::vector<long> storage;    // storage index along the axis, |m| = 1..n/2
    std::vector<double> log_k;    // log|k| abscissae, increasing
    std::vector<double> weights;  // trapezoid weights in log|k|
  };

  explicit LogCoordMap(const RegularGrid& grid) : grid_(grid) {
    for (int a = 0; a < grid.ndim(); ++a) {
      const long n = grid.n_points(a);
      std::array<HalfAxis, 2> halves;
      for (int h = 0; h < 2; ++h) {
        auto& half = halves[h];
        for (long m = 1; m <= n / 2; ++m) {
          long j = (h == 0) ? (m < n / 2 ? m : n / 2) : n - m;
          half.storage.push_back(j);
          half.log_k.push_back(std::log(grid.dk(a) * static_cast<double>(m)));
        }
        const auto& x = half.log_k;
        const std::size_t len = x.size();
        half.weights.assign(len, 0.0);
        for (std::size_t i = 0; i + 1 < len; ++i) {
          half.weights[i] += 0.5 * (x[i + 1] - x[i]);
          half.weights[i + 1] += 0.5 * (x[i + 1] - x[i]);
        }
      }
      halves_.push_back(halves);
      std::vector<double> lk(static_cast<std::size_t>(n));
      for (long j = 0; j < n; ++j) {
        long m = signed_index(j, n);
        lk[j] = m == 0 ? 0.0 : std::log(grid.dk(a) * std::abs(static_cast<double>(m)));
      }
      log_abs_k_.push_back(std::move(lk));
    }
  }

  const RegularGrid& grid() const { return grid_; }
  /// Half 0 is k > 0 (plus Nyquist), half 1 is k < 0.
  const HalfAxis& half(int axis, int h) const { return halves_.at(axis).at(h); }
  /// log|k| along an axis in storage order; 0 at the excluded k = 0 row.
  double log_abs_k(int axis, long j) const { return log_abs_k_[axis][j]; }
  bool is_zero_row(long j) const { return j == 0; }

  /// Derivative stencil of `order` (1 or 2) at ladder slot `i`.
  Stencil stencil(int axis, int h, int i, int order) const {
    const auto& x = half(axis, h).log_k;
    const int len = static_cast<int>(x.size());
    Stencil s;
    if (len < order + 1) return s;
    if (i > 0 && i < len - 1) {
      s.slots = {i - 1, i, i + 1};
    } else {
      // One-sided at the ends: exact for cubics (2nd derivative) or quadratics.
      int width = std::min(len, order == 2 ? 4 : 3);
      int start = (i == 0) ? 0 : len - width;
      for (int q = 0; q < width; ++q) s.slots.push_back(start + q);
    }
    std::vector<double> nodes;
    for (int q : s.slots) nodes.push_back(x[q]);
    s.weights = fd_weights(x[i], nodes, order);
    return s;
  }

 private:
  RegularGrid grid_;
  std::vector<std::array<HalfAxis, 2>> halves_;
  std::vector<std::vector<double>> log_abs_k_;
};

namespace detail {

/// Enumerate every point of every sign quadrant: calls fn(halves, slots).
template <class Fn>
void for_each_quadrant_point(const LogCoordMap& map, Fn&& fn) {
  const int dim = map.grid().ndim();
  std::vector<int> halves(dim, 0), slots(dim, 0);
  for (int q = 0; q < (1 << dim); ++q) {
    for (int a = 0; a < dim; ++a) halves[a] = (q >> a) & 1;
    std::vector<int> len(dim);
    long count = 1;
    for (int a = 0; a < dim; ++a) {
      len[a] = static_cast<int>(map.half(a, halves[a]).storage.size());
      count *= len[a];
    }
    for (long p = 0; p < count; ++p) {
      long rem = p;
      for (int a = dim - 1; a >= 0; --a) {
        slots[a] = static_cast<int>(rem % len[a]);
        rem /= len[a];
      }
      fn(halves, slots);
    }
  }
}

struct Row {
  std::vector<long> cols;
  std::vector<double> vals;
  long target = -1;  // lattice mode the row is evaluated at
  double weight = 0.0;
  bool owner = false;  // true for the quadrant that owns `target`
};

/// Rows of the log-Hessian entry (i, j) for the finite-difference backend.
inline std::vector<Row> log_hessian_rows(const LogCoordMap& map, int ai, int aj) {
  const RegularGrid& grid = map.grid();
  const int dim = grid.ndim();
  std::vector<Row> rows;
  for_each_quadrant_point(map, [&](const std::vector<int>& halves, const std::vector<int>& slots) {
    Row row;
    std::vector<long> idx(dim);
    double weight = 1.0;
    bool owner = true;
    for (int a = 0; a < dim; ++a) {
      const auto& half = map.half(a, halves[a]);
      idx[a] = half.storage[slots[a]];
      weight *= half.weights[slots[a]];
      const long n = grid.n_points(a);
      // Nyquist (j = n/2) is owned by the negative half.
      const bool negative = signed_index(idx[a], n) < 0;
      if (negative != (halves[a] == 1)) owner = false;
    }
    row.target = grid.flat(idx);
    row.weight = weight;
    row.owner = owner;
    std::vector<Stencil> st;
    if (ai == aj) {
      st.push_back(map.stencil(ai, halves[ai], slots[ai], 2));
      if (st[0].slots.empty()) return;
    } else {
      st.push_back(map.stencil(ai, halves[ai], slots[ai], 1));
      st.push_back(map.stencil(aj, halves[aj], slots[aj], 1));
      if (st[0].slots.empty() || st[1].slots.empty()) return;
    }
    if (ai == aj) {
      for (std::size_t q = 0; q < st[0].slots.size(); ++q) {
        auto nidx = idx;
        nidx[ai] = map.half(ai, halves[ai]).storage[st[0].slots[q]];
        row.cols.push_back(grid.flat(nidx));
        row.vals.push_back(st[0].weights[q]);
      }
    } else {
      for (std::size_t p = 0; p < st[0].slots.size(); ++p)
        for (std::size_t q = 0; q < st[1].slots.size(); ++q) {
          auto nidx = idx;
          nidx[ai] = map.half(ai, halves[ai]).storage[st[0].slots[p]];
          nidx[aj] = map.half(aj, halves[aj]).storage[st[1].slots[q]];
          row.cols.push_back(grid.flat(nidx));
          row.vals.push_back(st[0].weights[p] * st[1].weights[q]);
        }
    }
    rows.push_back(std::move(row));
  });
  return rows;
}

/// Appends sqrt(scale * weight) * r as rows of a factor B, so that the
/// precision is B^T B = sum_rows scale * weight * r r^T.
inline void accumulate_factor(std::vector<Eigen::Triplet<double>>& trip, long& next_row,
                              const std::vector<Row>& rows, double scale) {
  for (const auto& r : rows) {
    const double f = std::sqrt(scale * r.weight);
    for (std::size_t p = 0; p < r.cols.size(); ++p) trip.emplace_back(next_row, r.cols[p], f * r.vals[p]);
    ++next_row;
  }
}

/// Signed coordinate of every lattice mode along one axis. With
/// `odd_part` the Nyquist row is zeroed so that the result is odd under
/// k -> -k on the lattice, as a multiplier of first derivatives must be.
inline Vector axis_coordinate(const RegularGrid& grid, int axis, bool odd_part = false) {
  KCoords kc(grid);
  const long n = grid.n_points(axis);
  Vector out(grid.size());
  for (long i = 0; i < grid.size(); ++i)
    out[i] = (odd_part && grid.index(i, axis) == n / 2) ? 0.0 : kc.coord(i, axis);
  return out;
}

/// Spectral derivative of a real lattice function along one harmonic axis.
/// The lattice is treated as periodic in k; order 1 zeroes the Nyquist term.
inline Vector spectral_derivative(const RegularGrid& grid, const Vector& psi, int axis, int order) {
  const long n = grid.n_points(axis);
  const double scale = grid.length(axis) / static_cast<double>(n);
  Eigen::VectorXcd buf = psi.cast<std::complex<double>>();
  fft::transform_axis(grid.shape(), buf, axis, fft::Direction::forward);
  for (long i = 0; i < grid.size(); ++i) {
    const long j = grid.index(i, axis);
    const long q = signed_index(j, n);
    const double w = scale * static_cast<double>(q);
    if (order == 1)
      buf[i] *= (q == -n / 2) ? std::complex<double>(0.0) : std::complex<double>(0.0, w);
    else
      buf[i] *= -w * w;
  }
  fft::transform_axis(grid.shape(), buf, axis, fft::Direction::backward);
  return buf.real() / static_cast<double>(n);
}

}  // namespace detail

/// Mixed second log-derivative d^2 psi / dlog|k_i| dlog|k_j| at every lattice
/// mode with all k != 0 (zero on excluded rows).
inline Vector log_second_derivative(const RegularGrid& grid, const Vector& psi, int ai, int aj,
                                    DerivativeBackend backend) {
  if (ai < 0 || aj < 0 || ai >= grid.ndim() || aj >= grid.ndim())
    throw InvalidArgument("axis out of range");
  if (psi.size() != grid.size()) throw GridError("log_second_derivative: size mismatch");
  Vector out = Vector::Zero(grid.size());
  if (backend == DerivativeBackend::finite_difference) {
    LogCoordMap map(grid);
    for (const auto& r : detail::log_hessian_rows(map, std::min(ai, aj), std::max(ai, aj))) {
      if (!r.owner) continue;
      double acc = 0.0;
      for (std::size_t q = 0; q < r.cols.size(); ++q) acc += r.vals[q] * psi[r.cols[q]];
      out[r.target] = acc;
    }
    return out;
  }
  // d/dlog k = k d/dk for either sign of k.
  const Vector ki = detail::axis_coordinate(grid, ai, true);
  if (ai == aj) {
    const Vector k2 = detail::axis_coordinate(grid, ai).cwiseAbs2();
    out = k2.cwiseProduct(detail::spectral_derivative(grid, psi, ai, 2)) +
          ki.cwiseProduct(detail::spectral_derivative(grid, psi, ai, 1));
  } else {
    const Vector kj = detail::axis_coordinate(grid, aj, true);
    Vector inner = kj.cwiseProduct(detail::spectral_derivative(grid, psi, aj, 1));
    out = ki.cwiseProduct(detail::spectral_derivative(grid, inner, ai, 1));
  }
  for (long i = 0; i < grid.size(); ++i)
    for (int a = 0; a < grid.ndim(); ++a)
      if (grid.index(i, a) == 0) out[i] = 0.0;
  return out;
}

/// Symmetric PSD precision A that also evaluates 1/2 psi^T A psi as a sum of
/// squares. The stiff log-derivative rows make psi^T (A psi) lose most of its
/// digits to cancellation.
class QuadraticForm : public LinearOperator {
 public:
  virtual double energy(const Vector& psi) const = 0;
};

/// Precision B^T B held together with its factor B.
class SparseGramOp final : public QuadraticForm {
 public:
  SparseGramOp(Eigen::SparseMatrix<double> factor, long n) : b_(std::move(factor)) {
    b_.conservativeResize(b_.rows(), n);
    m_ = Eigen::SparseMatrix<double>(b_.transpose() * b_);
  }
  const Eigen::SparseMatrix<double>& matrix() const { return m_; }
  const Eigen::SparseMatrix<double>& factor() const { return b_; }
  long domain_size() const override { return m_.cols(); }
  long codomain_size() const override { return m_.rows(); }
  Vector apply(const Vector& v) const override {
    check_domain(v);
    return m_ * v;
  }
  Vector adjoint_apply(const Vector& v) const override { return apply(v); }
  std::optional<Vector> cell_diagonal() const override { return Vector(m_.diagonal()); }
  double energy(const Vector& psi) const override {
    check_domain(psi);
    return 0.5 * (b_ * psi).squaredNorm();
  }

 private:
  Eigen::SparseMatrix<double> b_, m_;
};

/// Matrix-free log-log smoothness precision using spectral differentiation.
class FourierSmoothnessOp final : public QuadraticForm {
 public:
  FourierSmoothnessOp(const RegularGrid& grid, double strength) : grid_(grid) {
    if (!(strength > 0.0)) throw InvalidArgument("smoothness strength must be positive");
    scale_ = 1.0 / (strength * strength);
    LogCoordMap map(grid);
    weight_ = Vector::Ones(grid.size());
    for (int a = 0; a < grid.ndim(); ++a) {
      const long n = grid.n_points(a);
      std::vector<double> wa(static_cast<std::size_t>(n), 0.0);
      for (int h = 0; h < 2; ++h) {
        const auto& half = map.half(a, h);
        for (std::size_t s = 0; s < half.storage.size(); ++s) wa[half.storage[s]] += half.weights[s];
      }
      for (long i = 0; i < grid.size(); ++i) weight_[i] *= wa[grid.index(i, a)];
      coords_.push_back(detail::axis_coordinate(grid, a, true));
      squares_.push_back(detail::axis_coordinate(grid, a).cwiseAbs2());
    }
  }

  long domain_size() const override { return grid_.size(); }
  long codomain_size() const override { return grid_.size(); }

  Vector apply(const Vector& psi) const override {
    check_domain(psi);
    Vector out = Vector::Zero(grid_.size());
    const int dim = grid_.ndim();
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j) {
        const double c = (i == j) ? 1.0 : 2.0;
        out += c * transpose_term(i, j, weight_.cwiseProduct(term(i, j, psi)));
      }
    return scale_ * out;
  }
  Vector adjoint_apply(const Vector& v) const override { return apply(v); }
  double energy(const Vector& psi) const override {
    check_domain(psi);
    double e = 0.0;
    for (int i = 0; i < grid_.ndim(); ++i)
      for (int j = i; j < grid_.ndim(); ++j)
        e += (i == j ? 1.0 : 2.0) * weight_.dot(term(i, j, psi).cwiseAbs2());
    return 0.5 * scale_ * e;
  }

 private:
  Vector d1(const Vector& v, int a) const { return detail::spectral_derivative(grid_, v, a, 1); }
  Vector d2(const Vector& v, int a) const { return detail::spectral_derivative(grid_, v, a, 2); }

  Vector term(int i, int j, const Vector& psi) const {
    const Vector& ki = coords_[i];
    if (i == j) return squares_[i].cwiseProduct(d2(psi, i)) + ki.cwiseProduct(d1(psi, i));
    const Vector& kj = coords_[j];
    return ki.cwiseProduct(d1(kj.cwiseProduct(d1(psi, j)), i));
  }

  // d1 is antisymmetric, d2 symmetric.
  Vector transpose_term(int i, int j, const Vector& u) const {
    const Vector& ki = coords_[i];
    if (i == j) return d2(squares_[i].cwiseProduct(u), i) - d1(ki.cwiseProduct(u), i);
    const Vector& kj = coords_[j];
    return d1(kj.cwiseProduct(d1(ki.cwiseProduct(u), i)), j);
  }

  RegularGrid grid_;
  double scale_ = 1.0;
  Vector weight_;
  std::vector<Vector> coords_;   // odd part, multiplies first derivatives
  std::vector<Vector> squares_;  // k^2
};

/// Log-log smoothness precision T^{-1} with overall strength s (sigma or mu).
inline LinOpPtr build_smoothness_precision(const RegularGrid& grid, double strength,
                                           DerivativeBackend backend) {
  if (!(strength > 0.0)) throw InvalidArgument("smoothness strength must be positive");
  if (backend == DerivativeBackend::fourier)
    return std::make_shared<FourierSmoothnessOp>(grid, strength);
  LogCoordMap map(grid);
  std::vector<Eigen::Triplet<double>> trip;
  long rows = 0;
  const double scale = 1.0 / (strength * strength);
  for (int i = 0; i < grid.ndim(); ++i)
    for (int j = i; j < grid.ndim(); ++j)
      detail::accumulate_factor(trip, rows, detail::log_hessian_rows(map, i, j),
                                scale * (i == j ? 1.0 : 2.0));
  Eigen::SparseMatrix<double> b(rows, grid.size());
  b.setFromTriplets(trip.begin(), trip.end());
  return std::make_shared<SparseGramOp>(std::move(b), grid.size());
}

namespace detail {

/// Spectral-backend zero-mode precision: plain k-Hessian with uniform weights.
class FourierZeroModeOp final : public QuadraticForm {
 public:
  FourierZeroModeOp(const RegularGrid& grid, double eta)
      : grid_(grid), scale_(grid.mode_volume() / (eta * eta)) {}
  long domain_size() const override { return grid_.size(); }
  long codomain_size() const override { return grid_.size(); }
  Vector apply(const Vector& psi) const override {
    check_domain(psi);
    Vector out = Vector::Zero(grid_.size());
    for (int i = 0; i < grid_.ndim(); ++i)
      for (int j = i; j < grid_.ndim(); ++j) {
        if (i == j) {
          out += spectral_derivative(grid_, spectral_derivative(grid_, psi, i, 2), i, 2);
        } else {
          Vector t = spectral_derivative(grid_, spectral_derivative(grid_, psi, j, 1), i, 1);
          out += 2.0 * spectral_derivative(grid_, spectral_derivative(grid_, t, i, 1), j, 1);
        }
      }
    return scale_ * out;
  }
  Vector adjoint_apply(const Vector& v) const override { return apply(v); }
  double energy(const Vector& psi) const override {
    check_domain(psi);
    double e = 0.0;
    for (int i = 0; i < grid_.ndim(); ++i)
      for (int j = i; j < grid_.ndim(); ++j) {
        const Vector r = i == j ? spectral_derivative(grid_, psi, i, 2)
                                : spectral_derivative(grid_, spectral_derivative(grid_, psi, j, 1), i, 1);
        e += (i == j ? 1.0 : 2.0) * r.squaredNorm();
      }
    return 0.5 * scale_ * e;
  }

 private:
  RegularGrid grid_;
  double scale_;
};

}  // namespace detail

/// Zero-mode precision D_eta^{-1}: (1/eta^2) int |Hessian_k psi|^2 d^M k in plain
/// (non-log) k. Affine functions of k lie in its null space; stencils never
/// touch the Nyquist row so that the operator commutes with k -> -k.
inline LinOpPtr build_zero_mode_precision(const RegularGrid& grid, double eta,
                                          DerivativeBackend backend = DerivativeBackend::finite_difference) {
  if (!(eta > 0.0)) throw InvalidArgument("eta must be positive");
  if (backend == DerivativeBackend::fourier)
    return std::make_shared<detail::FourierZeroModeOp>(grid, eta);
  const int dim = grid.ndim();
  const double measure = grid.mode_volume();
  const double scale = 1.0 / (eta * eta);
  std::vector<Eigen::Triplet<double>> trip;
  long n_rows = 0;
  for (int i = 0; i < dim; ++i)
    for (int j = i; j < dim; ++j) {
      std::vector<detail::Row> rows;
      for (long f = 0; f < grid.size(); ++f) {
        const long ni = grid.n_points(i), nj = grid.n_points(j);
        const long mi = signed_index(grid.index(f, i), ni);
        const long mj = signed_index(grid.index(f, j), nj);
        if (std::abs(mi) > ni / 2 - 2 || std::abs(mj) > nj / 2 - 2) continue;
        std::vector<long> idx(dim);
        for (int a = 0; a < dim; ++a) idx[a] = grid.index(f, a);
        detail::Row row;
        row.weight = measure;
        const double hi = grid.dk(i), hj = grid.dk(j);
        if (i == j) {
          for (int s = -1; s <= 1; ++s) {
            auto n2 = idx;
            n2[i] = idx[i] + s;
            row.cols.push_back(grid.flat(n2));
            row.vals.push_back((s == 0 ? -2.0 : 1.0) / (hi * hi));
          }
        } else {
          for (int s = -1; s <= 1; s += 2)
            for (int t = -1; t <= 1; t += 2) {
              auto n2 = idx;
              n2[i] = idx[i] + s;
              n2[j] = idx[j] + t;
              row.cols.push_back(grid.flat(n2));
              row.vals.push_back(static_cast<double>(s * t) / (4.0 * hi * hj));
            }
        }
        rows.push_back(std::move(row));
      }
      detail::accumulate_factor(trip, n_rows, rows, scale * (i == j ? 1.0 : 2.0));
    }
  Eigen::SparseMatrix<double> b(n_rows, grid.size());
  b.setFromTriplets(trip.begin(), trip.end());
  return std::make_shared<SparseGramOp>(std::move(b), grid.size());
}

/// Smoothness prior T^{-1} + D_eta^{-1} for one lattice function.
class SmoothnessPrior {
 public:
  SmoothnessPrior(const RegularGrid& grid, double strength, double eta, DerivativeBackend backend)
      : grid_(grid),
        smooth_(std::dynamic_pointer_cast<const QuadraticForm>(
            build_smoothness_precision(grid, strength, backend))),
        zero_(std::dynamic_pointer_cast<const QuadraticForm>(
            build_zero_mode_precision(grid, eta, backend))),
        backend_(backend) {}

  LinOpPtr smoothness() const { return smooth_; }
  LinOpPtr zero_mode() const { return zero_; }
  DerivativeBackend backend() const { return backend_; }

  /// (T^{-1} + D_eta^{-1}) psi, the gradient of the energy.
  Vector gradient(const Vector& psi) const { return smooth_->apply(psi) + zero_->apply(psi); }
  /// 1/2 psi^T (T^{-1} + D_eta^{-1}) psi
  double energy(const Vector& psi) const { return smooth_->energy(psi) + zero_->energy(psi); }

  /// Combined precision as a sparse matrix (finite-difference backend only).
  std::optional<Eigen::SparseMatrix<double>> sparse() const {
    auto* a = dynamic_cast<const SparseGramOp*>(smooth_.get());
    auto* b = dynamic_cast<const SparseGramOp*>(zero_.get());
    if (!a || !b) return std::nullopt;
    return Eigen::SparseMatrix<double>(a->matrix() + b->matrix());
  }

  Eigen::MatrixXd dense(long cap = convention::default_dense_cap) const {
    if (auto s = sparse()) {
      if (grid_.size() > cap) throw CapExceeded("dense prior exceeds cap");
      return Eigen::MatrixXd(*s);
    }
    return dense_materialize(*smooth_, cap) + dense_materialize(*zero_, cap);
  }

 private:
  RegularGrid grid_;
  std::shared_ptr<const QuadraticForm> smooth_;
  std::shared_ptr<const QuadraticForm> zero_;
  DerivativeBackend backend_;
};

/// 1/2 psi^T (T^{-1} + D_eta^{-1}) psi with T built from `strength`.
inline double prior_energy(const RegularGrid& grid, const Vector& psi, double strength,
                           const SmoothnessHyper& hyper) {
  return SmoothnessPrior(grid, strength, hyper.eta, hyper.backend).energy(psi);
}

}  // namespace specfield
