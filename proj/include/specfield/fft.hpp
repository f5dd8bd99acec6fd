#pragma once

// Thin FFTW wrapper: unnormalized complex transforms over all axes or along a
// single axis of a row-major array. Plans are cached per thread.

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <span>
#include <tuple>
#include <vector>

#include <Eigen/Core>

namespace specfield::fft {

enum class Direction { forward, backward };

namespace detail {

// The FFTW planner is not thread-safe; execution of an existing plan is.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanKey {
  std::vector<int> shape;
  int axis;  // -1 for all axes
  int sign;
  bool operator<(const PlanKey& o) const {
    return std::tie(shape, axis, sign) < std::tie(o.shape, o.axis, o.sign);
  }
};

class PlanCache {
 public:
  ~PlanCache() {
    std::lock_guard lock(planner_mutex());
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  fftw_plan get(const std::vector<int>& shape, int axis, int sign) {
    PlanKey key{shape, axis, sign};
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::size_t total = 1;
    for (int n : shape) total *= static_cast<std::size_t>(n);
    std::lock_guard lock(planner_mutex());
    auto* buf = fftw_alloc_complex(total);
    fftw_plan plan = nullptr;
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    if (axis < 0) {
      plan = fftw_plan_dft(static_cast<int>(shape.size()), shape.data(), buf, buf, sign, flags);
    } else {
      // Transform along `axis`, loop over all other axes.
      std::vector<int> strides(shape.size(), 1);
      for (int a = static_cast<int>(shape.size()) - 2; a >= 0; --a)
        strides[a] = strides[a + 1] * shape[a + 1];
      fftw_iodim dim{shape[axis], strides[axis], strides[axis]};
      std::vector<fftw_iodim> loops;
      for (int a = 0; a < static_cast<int>(shape.size()); ++a)
        if (a != axis) loops.push_back({shape[a], strides[a], strides[a]});
      plan = fftw_plan_guru_dft(1, &dim, static_cast<int>(loops.size()), loops.data(), buf, buf,
                                sign, flags);
    }
    fftw_free(buf);
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::map<PlanKey, fftw_plan> plans_;
};

inline PlanCache& plan_cache() {
  thread_local PlanCache cache;
  return cache;
}

inline int sign_of(Direction dir) { return dir == Direction::forward ? FFTW_FORWARD : FFTW_BACKWARD; }

}  // namespace detail

/// In-place unnormalized DFT over every axis. forward uses exp(-i k.x).
inline void transform(const std::vector<int>& shape, std::span<std::complex<double>> data,
                      Direction dir) {
  fftw_plan plan = detail::plan_cache().get(shape, -1, detail::sign_of(dir));
  auto* p = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(plan, p, p);
}

/// In-place unnormalized DFT along one axis only.
inline void transform_axis(const std::vector<int>& shape, std::span<std::complex<double>> data,
                           int axis, Direction dir) {
  fftw_plan plan = detail::plan_cache().get(shape, axis, detail::sign_of(dir));
  auto* p = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(plan, p, p);
}

inline void transform(const std::vector<int>& shape, Eigen::VectorXcd& data, Direction dir) {
  transform(shape, std::span<std::complex<double>>(data.data(), static_cast<std::size_t>(data.size())), dir);
}

inline void transform_axis(const std::vector<int>& shape, Eigen::VectorXcd& data, int axis,
                           Direction dir) {
  transform_axis(shape,
                 std::span<std::complex<double>>(data.data(), static_cast<std::size_t>(data.size())),
                 axis, dir);
}

}  // namespace specfield::fft
