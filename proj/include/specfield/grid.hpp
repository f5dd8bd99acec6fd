#pragma once

// Regular periodic space-time grids, scalar fields on them, harmonic
// transforms and mode coordinates. Axis 0 is time by convention.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "specfield/constants.hpp"
#include "specfield/errors.hpp"
#include "specfield/fft.hpp"

namespace specfield {

struct Axis {
  long n_points = 0;
  double length = 0.0;
  bool operator==(const Axis&) const = default;
};

class RegularGrid {
 public:
  RegularGrid() = default;

  explicit RegularGrid(std::vector<Axis> axes) : axes_(std::move(axes)) {
    if (axes_.empty() || axes_.size() > 3)
      throw GridError("grid must have 1, 2 or 3 axes, got " + std::to_string(axes_.size()));
    cell_volume_ = 1.0;
    total_volume_ = 1.0;
    mode_volume_ = 1.0;
    size_ = 1;
    for (std::size_t a = 0; a < axes_.size(); ++a) {
      const auto& ax = axes_[a];
      if (ax.n_points < 4 || ax.n_points % 2 != 0)
        throw GridError("axis " + std::to_string(a) + ": n_points must be even and >= 4, got " +
                        std::to_string(ax.n_points));
      if (!(ax.length > 0.0) || !std::isfinite(ax.length))
        throw GridError("axis " + std::to_string(a) + ": length must be positive");
      cell_volume_ *= ax.length / static_cast<double>(ax.n_points);
      total_volume_ *= ax.length;
      mode_volume_ *= convention::two_pi / ax.length;
      size_ *= ax.n_points;
      shape_.push_back(static_cast<int>(ax.n_points));
    }
    strides_.assign(axes_.size(), 1);
    for (int a = static_cast<int>(axes_.size()) - 2; a >= 0; --a)
      strides_[a] = strides_[a + 1] * axes_[a + 1].n_points;
  }

  int ndim() const { return static_cast<int>(axes_.size()); }
  const std::vector<Axis>& axes() const { return axes_; }
  const Axis& axis(int a) const { return axes_.at(static_cast<std::size_t>(a)); }
  long n_points(int a) const { return axis(a).n_points; }
  double length(int a) const { return axis(a).length; }
  const std::vector<int>& shape() const { return shape_; }
  long size() const { return size_; }
  long stride(int a) const { return strides_.at(static_cast<std::size_t>(a)); }

  double cell_volume() const { return cell_volume_; }
  double total_volume() const { return total_volume_; }
  /// Volume of one harmonic cell, prod(2 pi / L).
  double mode_volume() const { return mode_volume_; }
  /// Harmonic spacing along one axis.
  double dk(int a) const { return convention::two_pi / length(a); }

  /// Storage index along axis `a` of flat index `flat`.
  long index(long flat, int a) const { return (flat / strides_[a]) % axes_[a].n_points; }

  long flat(const std::vector<long>& idx) const {
    long f = 0;
    for (int a = 0; a < ndim(); ++a) {
      long n = axes_[a].n_points;
      f += (((idx[a] % n) + n) % n) * strides_[a];
    }
    return f;
  }

  /// Flat index of the mode -k (or the cell -x) under periodic wrap.
  long mirror(long flat_index) const {
    long f = 0;
    for (int a = 0; a < ndim(); ++a) {
      long n = axes_[a].n_points;
      long j = index(flat_index, a);
      f += ((n - j) % n) * strides_[a];
    }
    return f;
  }

  bool operator==(const RegularGrid& o) const { return axes_ == o.axes_; }

 private:
  std::vector<Axis> axes_;
  std::vector<int> shape_;
  std::vector<long> strides_;
  long size_ = 0;
  double cell_volume_ = 0.0;
  double total_volume_ = 0.0;
  double mode_volume_ = 0.0;
};

inline RegularGrid make_grid(std::vector<Axis> dims) { return RegularGrid(std::move(dims)); }

inline void require_same_grid(const RegularGrid& a, const RegularGrid& b, const char* what) {
  if (!(a == b)) throw GridError(std::string(what) + ": grid mismatch");
}

/// Signed FFT index in [-n/2, n/2) for storage index j.
inline long signed_index(long j, long n) { return j < n / 2 ? j : j - n; }

/// Real scalar field sampled at cell positions.
struct Field {
  RegularGrid grid;
  Eigen::VectorXd values;

  Field() = default;
  Field(RegularGrid g, Eigen::VectorXd v) : grid(std::move(g)), values(std::move(v)) {
    if (values.size() != grid.size())
      throw GridError("field has " + std::to_string(values.size()) + " values, grid has " +
                      std::to_string(grid.size()) + " cells");
  }
  static Field zeros(const RegularGrid& g) { return {g, Eigen::VectorXd::Zero(g.size())}; }
  static Field constant(const RegularGrid& g, double c) {
    return {g, Eigen::VectorXd::Constant(g.size(), c)};
  }
};

/// Complex field over the harmonic lattice, stored in FFT order.
struct HarmonicField {
  RegularGrid grid;
  Eigen::VectorXcd values;
  /// True when the values are the transform of a real field.
  bool hermitian = false;

  HarmonicField() = default;
  HarmonicField(RegularGrid g, Eigen::VectorXcd v, bool herm)
      : grid(std::move(g)), values(std::move(v)), hermitian(herm) {
    if (values.size() != grid.size()) throw GridError("harmonic field size mismatch");
  }
};

/// Largest |v(-k) - conj(v(k))| relative to max |v|.
inline double hermitian_violation(const RegularGrid& grid, const Eigen::VectorXcd& v) {
  double scale = v.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  double worst = 0.0;
  for (long i = 0; i < grid.size(); ++i)
    worst = std::max(worst, std::abs(v[grid.mirror(i)] - std::conj(v[i])));
  return worst / scale;
}

inline double hermitian_violation(const HarmonicField& h) { return hermitian_violation(h.grid, h.values); }

/// Harmonic mode coordinates k = (omega, k_1, ...), angular units.
class KCoords {
 public:
  explicit KCoords(const RegularGrid& grid) : grid_(grid) {
    for (int a = 0; a < grid.ndim(); ++a) {
      long n = grid.n_points(a);
      std::vector<double> c(static_cast<std::size_t>(n));
      for (long j = 0; j < n; ++j) c[j] = grid.dk(a) * static_cast<double>(signed_index(j, n));
      axes_.push_back(std::move(c));
    }
  }

  const RegularGrid& grid() const { return grid_; }
  /// Coordinates along one axis in storage order.
  const std::vector<double>& axis(int a) const { return axes_.at(static_cast<std::size_t>(a)); }
  double coord(long flat, int a) const { return axes_[a][grid_.index(flat, a)]; }
  long signed_mode(long flat, int a) const {
    return signed_index(grid_.index(flat, a), grid_.n_points(a));
  }
  double radius(long flat) const {
    double r2 = 0.0;
    for (int a = 0; a < grid_.ndim(); ++a) r2 += coord(flat, a) * coord(flat, a);
    return std::sqrt(r2);
  }
  bool is_zero_mode(long flat) const { return flat == 0; }
  double spacing(int a) const { return grid_.dk(a); }

 private:
  RegularGrid grid_;
  std::vector<std::vector<double>> axes_;
};

inline KCoords k_coords(const RegularGrid& grid) { return KCoords(grid); }

/// Forward transform, scaled by the cell volume.
inline HarmonicField fft_forward(const Field& f) {
  Eigen::VectorXcd buf = f.values.cast<std::complex<double>>();
  fft::transform(f.grid.shape(), buf, fft::Direction::forward);
  buf *= f.grid.cell_volume();
  return {f.grid, std::move(buf), true};
}

/// Inverse transform; throws NonRealResult if the input is not Hermitian.
inline Field fft_inverse(const HarmonicField& h) {
  if (hermitian_violation(h) > convention::hermitian_tolerance)
    throw NonRealResult("harmonic field violates Hermitian symmetry; inverse is not real");
  Eigen::VectorXcd buf = h.values;
  fft::transform(h.grid.shape(), buf, fft::Direction::backward);
  return {h.grid, buf.real() / h.grid.total_volume()};
}

/// Complex inverse transform without the realness check.
inline Eigen::VectorXcd fft_inverse_complex(const HarmonicField& h) {
  Eigen::VectorXcd buf = h.values;
  fft::transform(h.grid.shape(), buf, fft::Direction::backward);
  return buf / h.grid.total_volume();
}

/// Continuum inner product sum_x a b dV.
inline double inner_product(const Field& a, const Field& b) {
  require_same_grid(a.grid, b.grid, "inner_product");
  return a.values.dot(b.values) * a.grid.cell_volume();
}

/// Harmonic inner product Re sum_k conj(a) b / V.
inline double inner_product(const HarmonicField& a, const HarmonicField& b) {
  require_same_grid(a.grid, b.grid, "inner_product");
  return a.values.dot(b.values).real() / a.grid.total_volume();
}

/// Periodogram |h(k)|^2 / V of a real field; an estimate of P(k).
inline Eigen::VectorXd periodogram(const Field& f) {
  HarmonicField h = fft_forward(f);
  return h.values.cwiseAbs2() / f.grid.total_volume();
}

/// Physical cell-centre coordinate along axis a, axes centred at zero.
inline double cell_coordinate(const RegularGrid& grid, int a, long j) {
  return -0.5 * grid.length(a) + grid.length(a) * static_cast<double>(j) /
                                     static_cast<double>(grid.n_points(a));
}

/// Symmetrize a real lattice function under k -> -k.
inline Eigen::VectorXd symmetrize(const RegularGrid& grid, const Eigen::VectorXd& v) {
  Eigen::VectorXd out(v.size());
  for (long i = 0; i < grid.size(); ++i) out[i] = 0.5 * (v[i] + v[grid.mirror(i)]);
  return out;
}

inline double reflection_asymmetry(const RegularGrid& grid, const Eigen::VectorXd& v) {
  double worst = 0.0, scale = v.cwiseAbs().maxCoeff();
  for (long i = 0; i < grid.size(); ++i) worst = std::max(worst, std::abs(v[i] - v[grid.mirror(i)]));
  return scale > 0 ? worst / scale : 0.0;
}

}  // namespace specfield
