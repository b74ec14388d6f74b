#pragma once

// Treatment-effect estimates from a fitted model. Counterfactual margins
// W(t) are obtained by rebuilding each unit's Z row under treatment t.
//
//   CTE(t)  = (sgn W(t) - sgn W(0)) / 2           in {-1, 0, +1}
//   CATE(t) = (clamp(W(t)) - clamp(W(0))) / 2      clamp to [-1, 1]
//
// Reported values at the interface are percentage points (100x).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "hetsvm/design.hpp"
#include "hetsvm/errors.hpp"
#include "hetsvm/svm.hpp"

namespace hetsvm {

inline double truncate_margin(double w) { return std::clamp(w, -1.0, 1.0); }

inline int cte_from_margins(double treated, double control) {
  return (sign_of(treated) - sign_of(control)) / 2;
}

inline double cate_from_margins(double treated, double control) {
  return 0.5 * (truncate_margin(treated) - truncate_margin(control));
}

inline double counterfactual_margin(const SvmFit& f, const CausalDesign& d, Index unit, int t) {
  return predict_margin(f, d.counterfactual_z(unit, t), d.v.row(unit).transpose());
}

inline int cte(const SvmFit& f, const CausalDesign& d, Index unit, int t) {
  return cte_from_margins(counterfactual_margin(f, d, unit, t), counterfactual_margin(f, d, unit, 0));
}

inline double cate(const SvmFit& f, const CausalDesign& d, Index unit, int t) {
  return cate_from_margins(counterfactual_margin(f, d, unit, t),
                           counterfactual_margin(f, d, unit, 0));
}

// Per-unit CATE of treatment t for every unit.
inline Vector cate_all(const SvmFit& f, const CausalDesign& d, int t) {
  Vector out(d.units());
  for (Index i = 0; i < d.units(); ++i) out[i] = cate(f, d, i, t);
  return out;
}

// Weighted mean of per-unit CATEs, using the (mean-one) design weights.
inline double ate(const SvmFit& f, const CausalDesign& d, int t) {
  const Vector c = cate_all(f, d, t);
  return c.dot(d.weights) / d.weights.sum();
}

// CATE of treatment t for rows outside the training sample; `v_rows` must be
// on the training standardization (CausalDesign::project).
inline Vector cate_for_rows(const SvmFit& f, const CausalDesign& train, const Matrix& v_rows, int t) {
  Vector out(v_rows.rows());
  for (Index i = 0; i < v_rows.rows(); ++i) {
    const Vector v = v_rows.row(i).transpose();
    out[i] = cate_from_margins(predict_margin(f, train.counterfactual_z_for(v, t), v),
                               predict_margin(f, train.counterfactual_z_for(v, 0), v));
  }
  return out;
}

struct TreatmentEffect {
  std::string label;
  int treatment = 0;  // column index + 1; 0 for cells that are not estimable
  bool estimable = true;
  double ate = std::numeric_limits<double>::quiet_NaN();
};

// ATE per encoded treatment, sorted descending; ties by label. Unobserved
// factorial cells follow, flagged as not estimable.
inline std::vector<TreatmentEffect> rank_treatments(const SvmFit& f, const CausalDesign& d) {
  std::vector<TreatmentEffect> rows;
  for (int t = 1; t <= d.coding.treatment_count(); ++t) {
    rows.push_back({d.coding.labels[static_cast<std::size_t>(t - 1)], t, true, ate(f, d, t)});
  }
  std::sort(rows.begin(), rows.end(), [](const TreatmentEffect& a, const TreatmentEffect& b) {
    if (a.ate != b.ate) return a.ate > b.ate;
    return a.label < b.label;
  });
  std::vector<std::string> missing = d.coding.unobserved;
  std::sort(missing.begin(), missing.end());
  for (auto& label : missing) rows.push_back({label, 0, false});
  return rows;
}

struct UnitEffect {
  Index unit = 0;
  double cate = 0.0;
};

struct GroupExtremes {
  std::vector<UnitEffect> highest;  // largest CATE first
  std::vector<UnitEffect> lowest;   // smallest CATE first
};

// Units ranked by CATE descending, ties by row index; the k highest are the
// head of that ranking and the k lowest its tail.
inline GroupExtremes group_extremes(const Vector& cates, Index k) {
  const Index n = cates.size();
  if (k < 0 || k > n) throw DataError("group size must lie between 0 and the number of units");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return cates[a] > cates[b]; });
  GroupExtremes out;
  for (Index r = 0; r < k; ++r) {
    const Index top = order[static_cast<std::size_t>(r)];
    const Index bottom = order[static_cast<std::size_t>(n - 1 - r)];
    out.highest.push_back({top, cates[top]});
    out.lowest.push_back({bottom, cates[bottom]});
  }
  return out;
}

inline GroupExtremes group_extremes(const SvmFit& f, const CausalDesign& d, Index k, int t = 1) {
  return group_extremes(cate_all(f, d, t), k);
}

inline double to_percentage_points(double effect) { return 100.0 * effect; }

}  // namespace hetsvm
