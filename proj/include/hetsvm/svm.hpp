#pragma once

// L2 (squared hinge) SVM with separate LASSO penalties on the causal block Z
// and the pre-treatment block V, fitted as a sequence of weighted LASSO
// problems on the current set of active observations {i : 1 >= y_i W_i}.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hetsvm/design.hpp"
#include "hetsvm/errors.hpp"
#include "hetsvm/lasso.hpp"

namespace hetsvm {

struct PenaltyPair {
  double lambda_z = 1.0;
  double lambda_v = 1.0;

  static PenaltyPair from_log(double log_z, double log_v) {
    return {std::exp(log_z), std::exp(log_v)};
  }

  void validate() const {
    if (!(lambda_z > 0.0) || !std::isfinite(lambda_z) || !(lambda_v > 0.0) ||
        !std::isfinite(lambda_v)) {
      throw ConfigError("penalties must be positive and finite");
    }
  }
};

enum class StopReason { kActiveSetRepeat, kCoefficientChange, kCycle, kIterationCap };

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::kActiveSetRepeat: return "active_set_repeat";
    case StopReason::kCoefficientChange: return "coefficient_change";
    case StopReason::kCycle: return "cycle";
    case StopReason::kIterationCap: return "iteration_cap";
  }
  return "unknown";
}

struct SvmFit {
  PenaltyPair penalties;
  double mu = 0.0;
  Vector beta;         // coefficients on Z, original scale
  Vector gamma;        // coefficients on V, original scale
  Vector beta_tilde;   // lambda_z * beta
  Vector gamma_tilde;  // lambda_v * gamma
  Vector margins;      // W_i for every unit
  std::vector<char> active;  // 1 >= y_i W_i
  Index active_size = 0;
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
  StopReason stop_reason = StopReason::kIterationCap;
  int objective_increases = 0;
  int inner_passes = 0;
  double kkt_violation = 0.0;

  Index nonzero_count() const {
    return static_cast<Index>((beta_tilde.array() != 0.0).count() +
                              (gamma_tilde.array() != 0.0).count());
  }
};

struct FitOptions {
  double tolerance = 1e-6;
  int max_iterations = 200;
  LassoOptions inner;
};

inline double squared_hinge(double y, double w) {
  const double slack = 1.0 - y * w;
  return slack > 0.0 ? slack * slack : 0.0;
}

// Full-sample penalized objective on the original coefficient scale.
inline double svm_objective(const CausalDesign& d, const PenaltyPair& pen, const Vector& margins,
                            const Vector& beta, const Vector& gamma) {
  double loss = 0.0;
  for (Index i = 0; i < d.units(); ++i) loss += d.weights[i] * squared_hinge(d.y_star[i], margins[i]);
  return loss + pen.lambda_z * beta.cwiseAbs().sum() + pen.lambda_v * gamma.cwiseAbs().sum();
}

// Design-level data shared by every fit on the same design: the stacked
// regressor matrix [Z V] and its full-sample weighted moments.
class PreparedDesign {
 public:
  explicit PreparedDesign(const CausalDesign& design) : design_(&design) {
    design.validate();
    const Index n = design.units();
    x_.resize(n, design.lz() + design.lv());
    x_ << design.z, design.v;
    const Vector& w = design.weights;
    const Matrix wx = w.asDiagonal() * x_;
    full_.sw = w.sum();
    full_.sx = wx.colwise().sum().transpose();
    full_.sxx = x_.transpose() * wx;
    full_.sy = w.dot(design.y_star);
    full_.sxy = wx.transpose() * design.y_star;
    full_.syy = w.dot(design.y_star.cwiseProduct(design.y_star));
    full_.count = n;
  }

  const CausalDesign& design() const { return *design_; }
  const Matrix& x() const { return x_; }

  // Weighted sums over a subset of units.
  struct Moments {
    double sw = 0.0;
    Vector sx;
    Matrix sxx;
    double sy = 0.0;
    Vector sxy;
    double syy = 0.0;
    Index count = 0;
  };

  const Moments& full() const { return full_; }

  void toggle(Moments& m, Index i, bool add) const {
    const double sign = add ? 1.0 : -1.0;
    const double w = sign * design_->weights[i];
    const double y = design_->y_star[i];
    const auto row = x_.row(i).transpose();
    m.sw += w;
    m.sx.noalias() += w * row;
    m.sxx.selfadjointView<Eigen::Lower>().rankUpdate(row, w);
    m.sy += w * y;
    m.sxy.noalias() += (w * y) * row;
    m.syy += w * y * y;
    m.count += add ? 1 : -1;
  }

  // Moments for `active`, built from whichever of the full sums or a direct
  // accumulation is cheaper.
  Moments moments_for(const std::vector<char>& active) const {
    const Index n = design_->units();
    Index inactive = 0;
    for (char a : active) inactive += a ? 0 : 1;
    Moments m;
    if (inactive <= n / 2) {
      m = full_;
      m.sxx.triangularView<Eigen::StrictlyUpper>().setZero();
      for (Index i = 0; i < n; ++i) {
        if (!active[static_cast<std::size_t>(i)]) toggle(m, i, false);
      }
    } else {
      const Index p = x_.cols();
      m.sx = Vector::Zero(p);
      m.sxx = Matrix::Zero(p, p);
      m.sxy = Vector::Zero(p);
      for (Index i = 0; i < n; ++i) {
        if (active[static_cast<std::size_t>(i)]) toggle(m, i, true);
      }
    }
    return m;
  }

 private:
  const CausalDesign* design_;
  Matrix x_;
  Moments full_;
};

namespace detail {

inline std::vector<char> active_from_margins(const Vector& y, const Vector& margins, Index& size) {
  std::vector<char> active(static_cast<std::size_t>(y.size()));
  size = 0;
  for (Index i = 0; i < y.size(); ++i) {
    const bool a = 1.0 >= y[i] * margins[i];
    active[static_cast<std::size_t>(i)] = a;
    size += a;
  }
  return active;
}

}  // namespace detail

inline SvmFit fit(const PreparedDesign& prep, const PenaltyPair& penalties,
                  const SvmFit* init = nullptr, const FitOptions& opt = {}) {
  penalties.validate();
  const CausalDesign& d = prep.design();
  const Index n = d.units();
  const Index lz = d.lz();
  const Index p = lz + d.lv();

  // Column rescaling x_j / lambda_j so that the LASSO runs with unit penalty.
  Vector scale(p);
  scale.head(lz).setConstant(1.0 / penalties.lambda_z);
  scale.tail(d.lv()).setConstant(1.0 / penalties.lambda_v);

  Vector coef = Vector::Zero(p);  // original scale
  double mu = 0.0;
  Vector margins = Vector::Zero(n);
  if (init) {
    if (init->beta.size() != lz || init->gamma.size() != d.lv()) {
      throw DataError("initial fit does not match design dimensions");
    }
    coef << init->beta, init->gamma;
    mu = init->mu;
    margins = (prep.x() * coef).array() + mu;
  }

  Index active_size = 0;
  std::vector<char> active = detail::active_from_margins(d.y_star, margins, active_size);
  PreparedDesign::Moments m = prep.moments_for(active);
  std::vector<std::vector<char>> history{active};

  SvmFit out;
  out.penalties = penalties;
  struct Iterate {
    double mu;
    Vector coef;
    Vector margins;
    double objective;
  };
  std::optional<Iterate> best;
  double previous_objective = std::numeric_limits<double>::infinity();

  for (int k = 1; k <= opt.max_iterations; ++k) {
    if (active_size == 0 || !(m.sw > 0.0)) {
      throw DegenerateFitError("active set is empty; the fit is degenerate");
    }
    out.iterations = k;

    // Centered weighted moments over the active set, on the rescaled columns.
    const Matrix sxx = m.sxx.selfadjointView<Eigen::Lower>();
    LassoGram g;
    g.gram = scale.asDiagonal() * (sxx - m.sx * m.sx.transpose() / m.sw) * scale.asDiagonal();
    g.xty = scale.cwiseProduct(m.sxy - m.sx * (m.sy / m.sw));
    g.yty = m.syy - m.sy * m.sy / m.sw;
    g.penalty_factor = Vector::Ones(p);
    g.loss_scale = 1.0 / static_cast<double>(active_size);
    g.reference_square = scale.cwiseProduct(scale).cwiseProduct(sxx.diagonal());

    const Vector warm = coef.cwiseQuotient(scale);
    const LassoSolution sol = solve(g, warm, opt.inner);
    out.inner_passes += sol.passes;
    out.kkt_violation = sol.kkt_violation;

    const Vector next_coef = sol.coefficients.cwiseProduct(scale);
    const double next_mu = (m.sy - m.sx.dot(next_coef)) / m.sw;
    margins = (prep.x() * next_coef).array() + next_mu;

    const double change = std::max((next_coef - coef).cwiseAbs().maxCoeff(),
                                   std::abs(next_mu - mu));
    coef = next_coef;
    mu = next_mu;

    const double objective =
        svm_objective(d, penalties, margins, coef.head(lz), coef.tail(d.lv()));
    if (objective > previous_objective * (1.0 + 1e-12)) ++out.objective_increases;
    previous_objective = objective;
    if (!best || objective < best->objective) best = Iterate{mu, coef, margins, objective};

    Index next_size = 0;
    std::vector<char> next_active = detail::active_from_margins(d.y_star, margins, next_size);

    if (next_active == active) {
      out.stop_reason = StopReason::kActiveSetRepeat;
      out.converged = true;
      break;
    }
    if ((k > 1 || init) && change < opt.tolerance) {
      out.stop_reason = StopReason::kCoefficientChange;
      out.converged = true;
      break;
    }
    bool cycled = false;
    for (const auto& h : history) cycled |= h == next_active;
    if (cycled) {
      out.stop_reason = StopReason::kCycle;
      mu = best->mu;
      coef = best->coef;
      margins = best->margins;
      break;
    }
    if (k == opt.max_iterations) {
      out.stop_reason = StopReason::kIterationCap;
      mu = best->mu;
      coef = best->coef;
      margins = best->margins;
      break;
    }

    // Incremental update of the active-set moments when few units move.
    Index moved = 0;
    for (Index i = 0; i < n; ++i) moved += active[static_cast<std::size_t>(i)] != next_active[static_cast<std::size_t>(i)];
    if (moved * 4 < n) {
      for (Index i = 0; i < n; ++i) {
        const auto u = static_cast<std::size_t>(i);
        if (active[u] != next_active[u]) prep.toggle(m, i, next_active[u] != 0);
      }
    } else {
      m = prep.moments_for(next_active);
    }
    active = std::move(next_active);
    active_size = next_size;
    history.push_back(active);
  }

  out.mu = mu;
  out.beta = coef.head(lz);
  out.gamma = coef.tail(d.lv());
  out.beta_tilde = out.beta * penalties.lambda_z;
  out.gamma_tilde = out.gamma * penalties.lambda_v;
  out.margins = margins;
  out.active = detail::active_from_margins(d.y_star, margins, out.active_size);
  out.objective = svm_objective(d, penalties, margins, out.beta, out.gamma);
  return out;
}

inline SvmFit fit(const CausalDesign& design, const PenaltyPair& penalties,
                  const SvmFit* init = nullptr, const FitOptions& opt = {}) {
  const PreparedDesign prep(design);
  return fit(prep, penalties, init, opt);
}

inline double predict_margin(const SvmFit& f, const Vector& z_row, const Vector& v_row) {
  if (z_row.size() != f.beta.size() || v_row.size() != f.gamma.size()) {
    throw DataError("row dimensions do not match the fitted model");
  }
  return f.mu + f.beta.dot(z_row) + f.gamma.dot(v_row);
}

// sgn with sgn(0) = +1.
inline int sign_of(double margin) { return margin >= 0.0 ? 1 : -1; }

inline int classify(const SvmFit& f, const Vector& z_row, const Vector& v_row) {
  return sign_of(predict_margin(f, z_row, v_row));
}

}  // namespace hetsvm
