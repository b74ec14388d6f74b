#pragma once

// Weighted squared-error LASSO with per-coefficient penalty factors, solved by
// cyclic coordinate descent on the weighted Gram matrix.
//
//   minimize  loss_scale * sum_i w_i (y_i - x_i'b)^2 + sum_j penalty_j |b_j|

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "hetsvm/design.hpp"
#include "hetsvm/errors.hpp"

namespace hetsvm {

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

struct LassoProblem {
  Matrix x;                // n x p, centered by the caller
  Vector y;                // centered by the caller
  Vector w;                // observation weights; empty means all ones
  Vector penalty_factor;   // p entries >= 0; empty means all ones
  double loss_scale = 1.0;
};

// Sufficient statistics of a LASSO problem. `reference_square` holds the
// uncentered weighted sum of squares per column and is used to recognise
// columns that centering has reduced to (numerically) zero; those columns are
// pinned at zero.
struct LassoGram {
  Matrix gram;             // X'WX
  Vector xty;              // X'Wy
  double yty = 0.0;        // y'Wy
  Vector penalty_factor;
  double loss_scale = 1.0;
  Vector reference_square;
};

struct LassoOptions {
  double tolerance = 1e-7;       // max per-pass change of b_j * sqrt(loss_scale * G_jj)
  double kkt_tolerance = 1e-7;
  int max_passes = 10000;
  bool record_objective = false;
};

struct LassoSolution {
  Vector coefficients;
  double objective = 0.0;
  int passes = 0;
  double kkt_violation = 0.0;
  bool converged = false;
  std::vector<double> objective_trace;  // one entry per pass when requested
};

namespace detail {

inline bool pinned(const LassoGram& g, Index j) {
  const double d = g.gram(j, j);
  const double ref = g.reference_square.size() ? g.reference_square[j] : d;
  return !(d > 0.0) || d <= 1e-12 * ref;
}

inline void check_gram(const LassoGram& g) {
  const Index p = g.gram.rows();
  if (g.gram.cols() != p || g.xty.size() != p || g.penalty_factor.size() != p) {
    throw DataError("LASSO problem dimensions are inconsistent");
  }
  if (!g.gram.allFinite() || !g.xty.allFinite() || !std::isfinite(g.yty)) {
    throw DataError("LASSO problem contains non-finite values");
  }
  for (Index j = 0; j < p; ++j) {
    if (!std::isfinite(g.penalty_factor[j]) || g.penalty_factor[j] < 0.0) {
      throw DataError("penalty factors must be finite and non-negative");
    }
  }
  if (!(g.loss_scale > 0.0) || !std::isfinite(g.loss_scale)) {
    throw DataError("loss scale must be positive and finite");
  }
}

}  // namespace detail

inline double lasso_objective(const LassoGram& g, const Vector& b) {
  const double quad = b.dot(g.gram * b) - 2.0 * b.dot(g.xty) + g.yty;
  return g.loss_scale * quad + g.penalty_factor.dot(b.cwiseAbs());
}

// Largest subgradient-condition violation, expressed per unit of
// sqrt(loss_scale * G_jj) so that the measure does not depend on column scale.
inline double lasso_kkt_violation(const LassoGram& g, const Vector& b) {
  const Vector grad = 2.0 * g.loss_scale * (g.gram * b - g.xty);
  double worst = 0.0;
  for (Index j = 0; j < b.size(); ++j) {
    if (detail::pinned(g, j)) continue;
    const double pf = g.penalty_factor[j];
    const double v = b[j] == 0.0 ? std::max(0.0, std::abs(grad[j]) - pf)
                                 : std::abs(grad[j] + pf * (b[j] > 0.0 ? 1.0 : -1.0));
    worst = std::max(worst, v / std::sqrt(g.loss_scale * g.gram(j, j)));
  }
  return worst;
}

inline LassoSolution solve(const LassoGram& g, const std::optional<Vector>& warm_start = std::nullopt,
                           const LassoOptions& opt = {}) {
  detail::check_gram(g);
  const Index p = g.gram.rows();
  const double s = g.loss_scale;

  LassoSolution sol;
  sol.coefficients = Vector::Zero(p);
  if (warm_start) {
    if (warm_start->size() != p) throw DataError("warm start has the wrong length");
    sol.coefficients = *warm_start;
  }
  Vector& b = sol.coefficients;
  std::vector<char> is_pinned(static_cast<std::size_t>(p));
  for (Index j = 0; j < p; ++j) {
    is_pinned[static_cast<std::size_t>(j)] = detail::pinned(g, j);
    if (is_pinned[static_cast<std::size_t>(j)]) b[j] = 0.0;
  }
  Vector gb = g.gram * b;

  auto update = [&](Index j) -> double {
    if (is_pinned[static_cast<std::size_t>(j)]) return 0.0;
    const double gjj = g.gram(j, j);
    const double rho = s * (g.xty[j] - gb[j] + gjj * b[j]);
    const double next = soft_threshold(rho, 0.5 * g.penalty_factor[j]) / (s * gjj);
    const double delta = next - b[j];
    if (delta == 0.0) return 0.0;
    gb.noalias() += delta * g.gram.col(j);
    b[j] = next;
    return std::abs(delta) * std::sqrt(s * gjj);
  };

  auto pass = [&](bool nonzero_only) {
    double worst = 0.0;
    for (Index j = 0; j < p; ++j) {
      if (nonzero_only && b[j] == 0.0) continue;
      worst = std::max(worst, update(j));
    }
    ++sol.passes;
    if (opt.record_objective) sol.objective_trace.push_back(lasso_objective(g, b));
    return worst;
  };

  while (sol.passes < opt.max_passes) {
    if (pass(false) < opt.tolerance) {
      // Refresh the Gram product to shed accumulated rounding before the
      // optimality check.
      gb = g.gram * b;
      sol.kkt_violation = lasso_kkt_violation(g, b);
      if (sol.kkt_violation <= opt.kkt_tolerance) {
        sol.converged = true;
        break;
      }
      continue;
    }
    while (sol.passes < opt.max_passes && pass(true) >= opt.tolerance) {
    }
  }
  if (!sol.converged) sol.kkt_violation = lasso_kkt_violation(g, b);
  sol.objective = lasso_objective(g, b);
  return sol;
}

inline LassoGram make_gram(const LassoProblem& problem) {
  const Index n = problem.x.rows();
  const Index p = problem.x.cols();
  if (problem.y.size() != n) throw DataError("response length does not match design rows");
  const Vector w = problem.w.size() ? problem.w : Vector::Ones(n);
  if (w.size() != n) throw DataError("weight length does not match design rows");
  if (!problem.x.allFinite() || !problem.y.allFinite() || !w.allFinite()) {
    throw DataError("LASSO problem contains non-finite values");
  }
  LassoGram g;
  const Matrix wx = w.asDiagonal() * problem.x;
  g.gram = problem.x.transpose() * wx;
  g.xty = wx.transpose() * problem.y;
  g.yty = problem.y.dot(w.cwiseProduct(problem.y));
  g.penalty_factor = problem.penalty_factor.size() ? problem.penalty_factor : Vector::Ones(p);
  g.loss_scale = problem.loss_scale;
  g.reference_square = g.gram.diagonal();
  return g;
}

inline LassoSolution solve(const LassoProblem& problem,
                           const std::optional<Vector>& warm_start = std::nullopt,
                           const LassoOptions& opt = {}) {
  return solve(make_gram(problem), warm_start, opt);
}

}  // namespace hetsvm
