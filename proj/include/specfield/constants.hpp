#pragma once

// Normalization conventions shared by every module. Changing any of these
// changes the meaning of serialized spectra.
//
//   forward:   h(k) = dV * sum_x f(x) exp(-i k.x)         (dV = cell volume)
//   inverse:   f(x) = (1/V) * sum_k h(k) exp(+i k.x)      (V = total volume)
//
// so that sum_x dV ~ int dx and sum_k / V ~ int dk / (2 pi)^D. A field with
// spectral density P(k) has <h(k) h(k')*> = V P(k) delta_kk', hence the
// periodogram is |h(k)|^2 / V and the covariance matrix of cell values has
// eigenvalues P(k) / dV.

#include <numbers>

namespace specfield::convention {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// Relative tolerance for Hermitian symmetry of transforms of real fields.
inline constexpr double hermitian_tolerance = 1e-12;

/// Largest spectral density value produced before capping.
inline constexpr double max_power = 1e300;

/// Default cap on the number of cells for dense materialization.
inline constexpr long default_dense_cap = 4096;

}  // namespace specfield::convention
