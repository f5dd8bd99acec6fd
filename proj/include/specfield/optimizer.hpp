#pragma once

// Box-constrained limited-memory BFGS with a user-supplied initial inverse
// Hessian (preconditioner) and a backtracking Armijo line search with cubic
// interpolation. Components sitting on a bound whose gradient pushes outward
// are frozen for the step; trial points are projected onto the box.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "specfield/errors.hpp"

namespace specfield {

struct OptimizerConfig {
  long max_iterations = 2000;
  /// Stop when the projected gradient infinity-norm falls below this.
  /// Values <= 0 select 1e-6 * (number of lattice modes).
  double gradient_tolerance = 0.0;
  /// Also stop when the predicted decrease -g.p of the quasi-Newton step is
  /// below this times (1 + |f|); stiff directions leave gradients that the
  /// objective can no longer resolve in double precision.
  double decrement_tolerance = 1e-13;
  /// Also stop when H fell by less than this times max(|f|, 1) over the last
  /// `stall_window` accepted steps.
  double function_tolerance = 1e-12;
  long stall_window = 10;
  long memory = 12;
  long max_restarts = 4;
  double armijo = 1e-4;
  long max_line_search = 40;
  /// Largest change of any single coordinate in one step.
  double max_step = 5.0;
  /// Iteration of the first preconditioner refresh; later refreshes double the gap.
  long refresh_start = 10;
};

struct OptimizerResult {
  Eigen::VectorXd x;
  double value = 0.0;
  std::vector<double> trace;
  long iterations = 0;
  long evaluations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  std::string message;
};

/// Objective callbacks. `evaluate` returns the value and fills the gradient
/// when one is requested; non-finite values mark infeasible trial points.
/// `preconditioner` returns an approximate inverse Hessian at x.
struct OptimizerProblem {
  std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)> evaluate;
  std::function<std::function<Eigen::VectorXd(const Eigen::VectorXd&)>(const Eigen::VectorXd& x)>
      preconditioner;
  Eigen::VectorXd lower, upper;
};

namespace detail {

inline Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                               const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

/// Components where the bound blocks the steepest-descent direction.
inline std::vector<bool> active_set(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                    const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  std::vector<bool> act(static_cast<std::size_t>(x.size()), false);
  for (long i = 0; i < x.size(); ++i)
    act[i] = (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0);
  return act;
}

inline double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                      const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  auto act = active_set(x, g, lo, hi);
  double m = 0.0;
  for (long i = 0; i < x.size(); ++i)
    if (!act[i]) m = std::max(m, std::abs(g[i]));
  return m;
}

inline void zero_active(Eigen::VectorXd& v, const std::vector<bool>& act) {
  for (long i = 0; i < v.size(); ++i)
    if (act[i]) v[i] = 0.0;
}

}  // namespace detail

inline OptimizerResult minimize_lbfgs(const OptimizerProblem& prob, Eigen::VectorXd x0,
                                      const OptimizerConfig& cfg, double gradient_tolerance) {
  using Eigen::VectorXd;
  const long n = x0.size();
  if (prob.lower.size() != n || prob.upper.size() != n)
    throw InvalidArgument("optimizer bounds do not match the parameter vector");
  OptimizerResult res;
  VectorXd x = detail::project(x0, prob.lower, prob.upper);
  VectorXd g(n);
  double f = prob.evaluate(x, &g);
  ++res.evaluations;
  if (!std::isfinite(f)) throw InvalidArgument("objective is not finite at the starting point");
  res.trace.push_back(f);

  auto precond = prob.preconditioner(x);
  std::deque<VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  long next_refresh = cfg.refresh_start;
  long failures = 0;

  auto finish = [&](bool converged, std::string msg) {
    res.x = x;
    res.value = f;
    res.gradient_norm = detail::projected_gradient_norm(x, g, prob.lower, prob.upper);
    res.converged = converged;
    res.message = std::move(msg);
    return res;
  };

  for (long it = 0;; ++it) {
    if (detail::projected_gradient_norm(x, g, prob.lower, prob.upper) < gradient_tolerance)
      return finish(true, "gradient tolerance reached");
    if (it >= cfg.max_iterations) return finish(false, "iteration limit reached");

    if (it == next_refresh) {
      precond = prob.preconditioner(x);
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      next_refresh = 2 * next_refresh + cfg.refresh_start;
    }

    const auto act = detail::active_set(x, g, prob.lower, prob.upper);
    VectorXd q = g;
    detail::zero_active(q, act);
    const long m = static_cast<long>(s_hist.size());
    std::vector<double> alpha(static_cast<std::size_t>(m));
    for (long i = m - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    VectorXd r = precond(q);
    for (long i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(r);
      r += (alpha[i] - beta) * s_hist[i];
    }
    VectorXd p = -r;
    detail::zero_active(p, act);
    double gp = g.dot(p);
    if (!(gp < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      VectorXd gf = g;
      detail::zero_active(gf, act);
      p = -precond(gf);
      detail::zero_active(p, act);
      gp = g.dot(p);
      if (!(gp < 0.0)) {
        p = -gf;
        gp = g.dot(p);
      }
    }

    if (-gp < cfg.decrement_tolerance * (1.0 + std::abs(f)))
      return finish(true, "predicted decrease below tolerance");

    // Backtracking line search on the projected path.
    double step = 1.0;
    const double pmax = p.cwiseAbs().maxCoeff();
    if (pmax * step > cfg.max_step) step = cfg.max_step / pmax;
    double f_new = std::numeric_limits<double>::infinity();
    VectorXd x_new, g_new(n);
    bool accepted = false, have_grad = false;
    double prev_step = 0.0, f_prev = 0.0;
    for (long ls = 0; ls < cfg.max_line_search; ++ls) {
      x_new = detail::project(x + step * p, prob.lower, prob.upper);
      const double decrease = g.dot(x_new - x);
      have_grad = (ls == 0);
      f_new = prob.evaluate(x_new, have_grad ? &g_new : nullptr);
      ++res.evaluations;
      if (std::isfinite(f_new) && f_new <= f + cfg.armijo * decrease && f_new <= f) {
        accepted = true;
        break;
      }
      double next;
      if (!std::isfinite(f_new)) {
        next = 0.25 * step;
      } else if (ls == 0 || !std::isfinite(f_prev)) {
        next = -gp * step * step / (2.0 * (f_new - f - gp * step));
      } else {
        // Cubic through f(0), f'(0), f(step), f(prev_step).
        const double r1 = f_new - f - gp * step, r2 = f_prev - f - gp * prev_step;
        const double d = step - prev_step;
        const double a = (r1 / (step * step) - r2 / (prev_step * prev_step)) / d;
        const double b = (-prev_step * r1 / (step * step) + step * r2 / (prev_step * prev_step)) / d;
        if (a == 0.0) {
          next = -gp / (2.0 * b);
        } else {
          const double disc = b * b - 3.0 * a * gp;
          next = disc >= 0.0 ? (-b + std::sqrt(disc)) / (3.0 * a) : 0.1 * step;
        }
      }
      if (!std::isfinite(next)) next = 0.5 * step;
      prev_step = step;
      f_prev = f_new;
      step = std::clamp(next, 0.1 * step, 0.5 * step);
    }

    if (!accepted) {
      ++failures;
      if (failures > cfg.max_restarts) return finish(false, "line search failed after restarts");
      precond = prob.preconditioner(x);
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      continue;
    }
    failures = 0;
    if (!have_grad) {
      f_new = prob.evaluate(x_new, &g_new);
      ++res.evaluations;
    }
    const VectorXd s = x_new - x, y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<long>(s_hist.size()) > cfg.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x = x_new;
    g = g_new;
    f = f_new;
    res.trace.push_back(f);
    res.iterations = it + 1;
    const auto w = static_cast<std::size_t>(cfg.stall_window);
    if (w > 0 && res.trace.size() > w &&
        res.trace[res.trace.size() - 1 - w] - f <= cfg.function_tolerance * std::max(std::abs(f), 1.0))
      return finish(true, "relative reduction below tolerance");
  }
}

}  // namespace specfield
