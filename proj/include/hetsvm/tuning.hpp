#pragma once

// Selection of (lambda_z, lambda_v) by generalized cross-validation, using an
// alternating line search over log-lambda followed by radius refinement.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "hetsvm/design.hpp"
#include "hetsvm/errors.hpp"
#include "hetsvm/svm.hpp"

namespace hetsvm {

// GCV with the number of nonzero slope coefficients as degrees of freedom:
//   (1 / (n (1 - l/a)^2)) * sum_i w_i |1 - y_i W_i|_+^2,  +inf when l >= a.
inline double gcv_value(double hinge_sum, Index n, Index nonzero, Index active) {
  if (nonzero >= active) return std::numeric_limits<double>::infinity();
  const double shrink = 1.0 - static_cast<double>(nonzero) / static_cast<double>(active);
  return hinge_sum / (static_cast<double>(n) * shrink * shrink);
}

inline double hinge_sum(const SvmFit& f, const CausalDesign& d) {
  double s = 0.0;
  for (Index i = 0; i < d.units(); ++i) s += d.weights[i] * squared_hinge(d.y_star[i], f.margins[i]);
  return s;
}

inline double gcv(const SvmFit& f, const CausalDesign& d) {
  return gcv_value(hinge_sum(f, d), d.units(), f.nonzero_count(), f.active_size);
}

struct GcvRecord {
  PenaltyPair penalties;
  double log_lambda_z = 0.0;
  double log_lambda_v = 0.0;
  double gcv = std::numeric_limits<double>::infinity();
  Index nonzero = 0;  // l
  Index active = 0;   // a
  SvmFit fit;
};

struct TraceRow {
  int round = 0;
  double log_lambda_z = 0.0;
  double log_lambda_v = 0.0;
  Index nonzero = 0;
  Index active = 0;
  double gcv = 0.0;
};

inline std::vector<double> default_log_grid() {
  std::vector<double> g;
  for (int k = -15; k <= 10; ++k) g.push_back(static_cast<double>(k));
  return g;
}

struct SearchOptions {
  std::vector<double> log_grid = default_log_grid();
  double precision = 1e-4;
  int max_rounds = 50;
  std::optional<double> initial_log_lambda_z;  // defaults to the largest grid value
  FitOptions fit;
};

struct SearchResult {
  GcvRecord best;
  std::vector<TraceRow> trace;
  int fits = 0;
};

namespace detail {

// GCV comparisons treat values within a relative 1e-12 as equal, so that fits
// which differ only by rounding tie and the tie rule applies.
inline bool gcv_less(double a, double b) {
  if (std::isinf(a)) return false;
  if (std::isinf(b)) return true;
  return a < b - 1e-12 * std::abs(b);
}

inline bool gcv_equal(double a, double b) { return !gcv_less(a, b) && !gcv_less(b, a); }

// Total order used for the final selection: smaller GCV, then the sparser
// side (larger lambdas).
inline bool record_better(const GcvRecord& a, const GcvRecord& b) {
  if (gcv_less(a.gcv, b.gcv)) return true;
  if (gcv_less(b.gcv, a.gcv)) return false;
  const double sa = a.log_lambda_z + a.log_lambda_v;
  const double sb = b.log_lambda_z + b.log_lambda_v;
  if (sa != sb) return sa > sb;
  return a.log_lambda_z > b.log_lambda_z;
}

class GcvSearch {
 public:
  GcvSearch(const CausalDesign& design, const SearchOptions& opt)
      : design_(design), prep_(design), opt_(opt) {}

  const GcvRecord& evaluate(double log_z, double log_v, const SvmFit* warm) {
    const auto key = std::make_pair(log_z, log_v);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    GcvRecord r;
    r.log_lambda_z = log_z;
    r.log_lambda_v = log_v;
    r.penalties = PenaltyPair::from_log(log_z, log_v);
    r.fit = fit(prep_, r.penalties, warm, opt_.fit);
    r.nonzero = r.fit.nonzero_count();
    r.active = r.fit.active_size;
    r.gcv = gcv(r.fit, design_);
    ++fits_;
    trace_.push_back({round_, log_z, log_v, r.nonzero, r.active, r.gcv});
    return memo_.emplace(key, std::move(r)).first->second;
  }

  // Scans one coordinate over `candidates` with the other held fixed. With an
  // incumbent, the coordinate moves only on a strict GCV decrease; ties among
  // improving candidates go to the larger lambda. Returns true if it moved.
  bool line_search(bool scan_z, std::vector<double> candidates, double fixed,
                   std::optional<double>& incumbent) {
    ++round_;
    std::sort(candidates.begin(), candidates.end(), std::greater<>());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    auto at = [&](double c) -> const GcvRecord& {
      return scan_z ? memo_.at({c, fixed}) : memo_.at({fixed, c});
    };
    const SvmFit* warm = nullptr;
    if (incumbent) {
      warm = &evaluate(scan_z ? *incumbent : fixed, scan_z ? fixed : *incumbent, nullptr).fit;
    }
    for (double c : candidates) {
      const GcvRecord& r = evaluate(scan_z ? c : fixed, scan_z ? fixed : c, warm);
      warm = &r.fit;
    }

    std::optional<double> choice;
    double choice_gcv = incumbent ? at(*incumbent).gcv : std::numeric_limits<double>::infinity();
    for (double c : candidates) {  // descending lambda, so the first of a tie wins
      if (incumbent && c == *incumbent) continue;
      const double g = at(c).gcv;
      if ((!choice && !incumbent) || gcv_less(g, choice_gcv)) {
        choice = c;
        choice_gcv = g;
      }
    }
    if (choice) {
      incumbent = choice;
      return true;
    }
    return false;
  }

  SearchResult run() {
    std::vector<double> grid = opt_.log_grid;
    if (grid.empty()) throw ConfigError("tuning grid is empty");
    if (!(opt_.precision > 0.0)) throw ConfigError("tuning precision must be positive");
    for (double g : grid) {
      if (!std::isfinite(g)) throw ConfigError("tuning grid values must be finite");
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    const double lo = grid.front();
    const double hi = grid.back();

    std::optional<double> inc_z = opt_.initial_log_lambda_z.value_or(hi);
    std::optional<double> inc_v;
    line_search(false, grid, *inc_z, inc_v);
    for (int r = 0; r < opt_.max_rounds; ++r) {
      const bool moved_z = line_search(true, grid, *inc_v, inc_z);
      const bool moved_v = line_search(false, grid, *inc_z, inc_v);
      if (!moved_z && !moved_v) break;
    }

    if (grid.size() > 1) {
      double spacing = std::numeric_limits<double>::infinity();
      for (std::size_t i = 1; i < grid.size(); ++i) spacing = std::min(spacing, grid[i] - grid[i - 1]);
      auto neighbourhood = [&](double c, double h) {
        std::vector<double> out{c};
        if (c - h >= lo) out.push_back(c - h);
        if (c + h <= hi) out.push_back(c + h);
        return out;
      };
      for (double h = spacing / 2.0; h >= opt_.precision; h /= 2.0) {
        for (int r = 0; r < opt_.max_rounds; ++r) {
          const bool moved_v = line_search(false, neighbourhood(*inc_v, h), *inc_z, inc_v);
          const bool moved_z = line_search(true, neighbourhood(*inc_z, h), *inc_v, inc_z);
          if (!moved_v && !moved_z) break;
        }
      }
    }

    const GcvRecord* best = nullptr;
    for (const auto& [key, rec] : memo_) {
      if (!best || record_better(rec, *best)) best = &rec;
    }
    if (!best || std::isinf(best->gcv)) {
      throw TuningError("every evaluated tuning point has an infinite GCV (l >= a)");
    }
    SearchResult out;
    out.best = *best;
    out.trace = std::move(trace_);
    out.fits = fits_;
    return out;
  }

 private:
  const CausalDesign& design_;
  PreparedDesign prep_;
  SearchOptions opt_;
  std::map<std::pair<double, double>, GcvRecord> memo_;
  std::vector<TraceRow> trace_;
  int round_ = 0;
  int fits_ = 0;
};

}  // namespace detail

inline SearchResult search(const CausalDesign& design, const SearchOptions& opt = {}) {
  detail::GcvSearch s(design, opt);
  return s.run();
}

}  // namespace hetsvm
