#pragma once

// Construction of the causal design: outcome recoding, the split of
// regressors into causal-heterogeneity columns (Z) and pre-treatment columns
// (V), covariate standardization and sampling-weight normalization.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hetsvm/errors.hpp"

namespace hetsvm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class ColumnKind {
  kTreatmentIndicator,
  kTreatmentInteraction,
  kMainEffect,
  kDerivedTerm,
  kConstant,
};

inline std::string_view to_string(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::kTreatmentIndicator: return "treatment_indicator";
    case ColumnKind::kTreatmentInteraction: return "treatment_interaction";
    case ColumnKind::kMainEffect: return "main_effect";
    case ColumnKind::kDerivedTerm: return "derived_term";
    case ColumnKind::kConstant: return "constant";
  }
  return "unknown";
}

inline ColumnKind column_kind_from_string(std::string_view s) {
  for (auto k : {ColumnKind::kTreatmentIndicator, ColumnKind::kTreatmentInteraction,
                 ColumnKind::kMainEffect, ColumnKind::kDerivedTerm, ColumnKind::kConstant}) {
    if (to_string(k) == s) return k;
  }
  throw DataError("unknown column kind '" + std::string(s) + "'");
}

// Affine map z = (x - center) / scale. Identity for columns that are not
// standardized.
struct Standardization {
  double center = 0.0;
  double scale = 1.0;

  double apply(double x) const { return (x - center) / scale; }
  double revert(double z) const { return z * scale + center; }
};

struct ColumnMeta {
  std::string name;
  ColumnKind kind = ColumnKind::kMainEffect;
  Standardization transform;
};

// Population (divide-by-N) mean and standard deviation.
inline Standardization fit_standardization(std::span<const double> x) {
  if (x.empty()) throw DataError("cannot standardize an empty column");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

namespace detail {

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// A column is treated as constant when its spread is negligible relative to
// its magnitude.
inline bool is_constant(const Standardization& s) {
  return !(s.scale > 1e-12 * std::max(1.0, std::abs(s.center)));
}

inline bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Derived pre-treatment terms, computed from standardized mains.

struct DerivedTerm {
  enum class Op { kSquare, kInteract };
  Op op = Op::kSquare;
  std::string left;
  std::string right;

  std::string name() const {
    return op == Op::kSquare ? left + "^2" : left + ":" + right;
  }

  // Accepts "square:<col>" and "interact:<col>:<col>".
  static DerivedTerm parse(std::string_view spec) {
    const auto first = spec.find(':');
    if (first == std::string_view::npos) {
      throw ConfigError("malformed derived term '" + std::string(spec) + "'");
    }
    const auto op = spec.substr(0, first);
    const auto rest = spec.substr(first + 1);
    if (op == "square" && !rest.empty() && rest.find(':') == std::string_view::npos) {
      return {Op::kSquare, std::string(rest), std::string(rest)};
    }
    if (op == "interact") {
      const auto second = rest.find(':');
      if (second != std::string_view::npos && second > 0 && second + 1 < rest.size() &&
          rest.find(':', second + 1) == std::string_view::npos) {
        return {Op::kInteract, std::string(rest.substr(0, second)),
                std::string(rest.substr(second + 1))};
      }
    }
    throw ConfigError("malformed derived term '" + std::string(spec) + "'");
  }
};

struct StandardizedBlock {
  Matrix columns;
  std::vector<ColumnMeta> meta;
  std::vector<std::string> diagnostics;
};

// Standardizes main effects to mean 0 / population sd 1, then appends derived
// terms built from the standardized mains (not re-centered). Constant and
// duplicate columns are dropped with a diagnostic.
inline StandardizedBlock standardize(const Matrix& raw, const std::vector<std::string>& names,
                                     std::span<const DerivedTerm> derived = {}) {
  if (static_cast<Index>(names.size()) != raw.cols()) {
    throw DataError("covariate name count does not match column count");
  }
  if (!detail::all_finite(raw)) throw DataError("covariates contain NaN or infinite values");

  StandardizedBlock out;
  const Index n = raw.rows();
  std::vector<Vector> kept;
  std::map<std::string, Index> position;

  auto duplicate_of = [&](const Vector& col) -> std::optional<std::string> {
    for (std::size_t j = 0; j < kept.size(); ++j) {
      if (kept[j] == col) return out.meta[j].name;
    }
    return std::nullopt;
  };

  for (Index c = 0; c < raw.cols(); ++c) {
    const Vector col = raw.col(c);
    const auto tr = fit_standardization(std::span<const double>(col.data(), n));
    if (detail::is_constant(tr)) {
      out.diagnostics.push_back("dropped zero-variance column '" + names[c] + "'");
      continue;
    }
    Vector z = (col.array() - tr.center) / tr.scale;
    if (auto dup = duplicate_of(z)) {
      out.diagnostics.push_back("dropped column '" + names[c] + "' (duplicate of '" + *dup + "')");
      continue;
    }
    position[names[c]] = static_cast<Index>(kept.size());
    kept.push_back(std::move(z));
    out.meta.push_back({names[c], ColumnKind::kMainEffect, tr});
  }

  auto lookup = [&](const std::string& col, const DerivedTerm& term) -> const Vector* {
    if (std::find(names.begin(), names.end(), col) == names.end()) {
      throw ConfigError("derived term '" + term.name() + "' references unknown column '" + col + "'");
    }
    auto it = position.find(col);
    return it == position.end() ? nullptr : &kept[static_cast<std::size_t>(it->second)];
  };

  for (const auto& term : derived) {
    const Vector* a = lookup(term.left, term);
    const Vector* b = lookup(term.right, term);
    if (!a || !b) {
      out.diagnostics.push_back("dropped derived term '" + term.name() +
                                "' (its main effect was dropped)");
      continue;
    }
    Vector col = a->cwiseProduct(*b);
    const auto spread = fit_standardization(std::span<const double>(col.data(), n));
    if (detail::is_constant(spread)) {
      out.diagnostics.push_back("dropped zero-variance derived term '" + term.name() + "'");
      continue;
    }
    if (auto dup = duplicate_of(col)) {
      out.diagnostics.push_back("dropped derived term '" + term.name() + "' (duplicate of '" +
                                *dup + "')");
      continue;
    }
    kept.push_back(std::move(col));
    out.meta.push_back({term.name(), ColumnKind::kDerivedTerm, {}});
  }

  out.columns.resize(n, static_cast<Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j) out.columns.col(static_cast<Index>(j)) = kept[j];
  return out;
}

// Rescales positive weights to mean one: w * N / sum(w).
inline Vector normalize_weights(const Vector& w) {
  if (w.size() == 0) throw DataError("empty weight vector");
  for (Index i = 0; i < w.size(); ++i) {
    if (!std::isfinite(w[i]) || !(w[i] > 0.0)) {
      throw DataError("weight at row " + std::to_string(i + 1) + " is not a positive finite number");
    }
  }
  return w * (static_cast<double>(w.size()) / w.sum());
}

// ---------------------------------------------------------------------------
// Treatment encodings.

struct FactorialEncoding {
  Matrix z;
  std::vector<std::string> labels;                 // one per Z column
  std::vector<std::vector<std::string>> combos;    // level tuple per Z column
  std::vector<int> unit_treatment;                 // 0 = control, k = Z column k-1
  std::vector<std::string> unobserved;             // labels of empty cells
};

namespace detail {

// Numeric levels sort numerically, anything else lexicographically.
inline std::vector<std::string> sorted_levels(const std::vector<std::string>& values) {
  std::vector<std::string> levels(values.begin(), values.end());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  bool numeric = true;
  std::vector<double> parsed(levels.size());
  for (std::size_t i = 0; i < levels.size() && numeric; ++i) {
    numeric = parse_double(levels[i], parsed[i]);
  }
  if (numeric) {
    std::vector<std::size_t> order(levels.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return parsed[a] < parsed[b]; });
    std::vector<std::string> out;
    for (auto i : order) out.push_back(levels[i]);
    return out;
  }
  return levels;
}

inline std::string combo_label(const std::vector<std::string>& names,
                               const std::vector<std::string>& levels) {
  std::vector<std::string> parts;
  for (std::size_t f = 0; f < names.size(); ++f) parts.push_back(names[f] + "=" + levels[f]);
  return join(parts, ";");
}

}  // namespace detail

// One {0,1} column per observed non-baseline combination of the treatment
// factors, ordered by level tuple.
inline FactorialEncoding encode_factorial(const std::vector<std::string>& factor_names,
                                          const std::vector<std::vector<std::string>>& factors,
                                          const std::vector<std::string>& baseline) {
  if (factors.empty()) throw ConfigError("at least one treatment factor is required");
  if (factor_names.size() != factors.size() || baseline.size() != factors.size()) {
    throw ConfigError("treatment factors, names and baseline levels must have equal length");
  }
  const std::size_t n = factors.front().size();
  for (const auto& f : factors) {
    if (f.size() != n) throw DataError("treatment factors have unequal lengths");
  }

  const std::size_t nf = factors.size();
  std::vector<std::vector<std::string>> levels(nf);
  std::vector<std::map<std::string, int>> level_index(nf);
  std::vector<int> base_idx(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    levels[f] = detail::sorted_levels(factors[f]);
    for (std::size_t l = 0; l < levels[f].size(); ++l) level_index[f][levels[f][l]] = static_cast<int>(l);
    auto it = level_index[f].find(baseline[f]);
    if (it == level_index[f].end()) {
      throw ConfigError("baseline level '" + baseline[f] + "' not found in treatment factor '" +
                        factor_names[f] + "'");
    }
    base_idx[f] = it->second;
  }

  std::vector<std::vector<int>> unit_combo(n, std::vector<int>(nf));
  std::map<std::vector<int>, int> observed;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < nf; ++f) unit_combo[i][f] = level_index[f].at(factors[f][i]);
    observed.emplace(unit_combo[i], 0);
  }
  if (!observed.count(base_idx)) {
    throw ConfigError("no unit is in the baseline (control) treatment combination");
  }

  FactorialEncoding out;
  int col = 0;
  for (auto& [combo, idx] : observed) {
    if (combo == base_idx) continue;
    idx = ++col;
    std::vector<std::string> lv(nf);
    for (std::size_t f = 0; f < nf; ++f) lv[f] = levels[f][static_cast<std::size_t>(combo[f])];
    out.labels.push_back(detail::combo_label(factor_names, lv));
    out.combos.push_back(std::move(lv));
  }

  out.z = Matrix::Zero(static_cast<Index>(n), col);
  out.unit_treatment.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int t = unit_combo[i] == base_idx ? 0 : observed.at(unit_combo[i]);
    out.unit_treatment[i] = t;
    if (t > 0) out.z(static_cast<Index>(i), t - 1) = 1.0;
  }

  // Cells of the full level grid that no unit occupies.
  std::vector<int> cursor(nf, 0);
  for (bool done = false; !done;) {
    if (cursor != base_idx && !observed.count(cursor)) {
      std::vector<std::string> lv(nf);
      for (std::size_t f = 0; f < nf; ++f) lv[f] = levels[f][static_cast<std::size_t>(cursor[f])];
      out.unobserved.push_back(detail::combo_label(factor_names, lv));
    }
    done = true;
    for (std::size_t f = nf; f-- > 0;) {
      if (++cursor[f] < static_cast<int>(levels[f].size())) {
        done = false;
        break;
      }
      cursor[f] = 0;
    }
  }
  return out;
}

struct InteractionEncoding {
  Matrix z;
  std::vector<std::string> names;
};

// First column is the raw treatment indicator, then treatment x each
// (already standardized) modifier.
inline InteractionEncoding build_interactions(const Vector& treatment, const Matrix& modifiers,
                                              const std::vector<std::string>& modifier_names,
                                              const std::string& treatment_name = "treat") {
  for (Index i = 0; i < treatment.size(); ++i) {
    if (treatment[i] != 0.0 && treatment[i] != 1.0) {
      throw ConfigError("treatment '" + treatment_name +
                        "' is not binary; use a factorial design instead");
    }
  }
  if (modifiers.rows() != treatment.size() ||
      static_cast<Index>(modifier_names.size()) != modifiers.cols()) {
    throw DataError("modifier matrix does not match treatment length or names");
  }
  InteractionEncoding out;
  out.z.resize(treatment.size(), modifiers.cols() + 1);
  out.z.col(0) = treatment;
  out.names.push_back(treatment_name);
  for (Index j = 0; j < modifiers.cols(); ++j) {
    out.z.col(j + 1) = treatment.cwiseProduct(modifiers.col(j));
    out.names.push_back(treatment_name + ":" + modifier_names[static_cast<std::size_t>(j)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raw input and the assembled design.

enum class DesignKind { kFactorial, kInteraction };

struct RawDataset {
  std::vector<double> outcome;                       // {0,1}
  std::vector<std::string> treatment_names;
  std::vector<std::vector<std::string>> treatments;  // per factor, per unit
  std::vector<std::string> covariate_names;
  Matrix covariates;                                 // units x covariates
  std::optional<std::vector<double>> weights;

  Index rows() const { return static_cast<Index>(outcome.size()); }
};

struct DesignRecipe {
  DesignKind kind = DesignKind::kInteraction;
  std::vector<std::string> baseline;  // factorial only; one level per factor
  std::vector<DerivedTerm> derived;
};

// How to rebuild a unit's Z row under a counterfactual treatment.
struct TreatmentCoding {
  DesignKind kind = DesignKind::kFactorial;
  std::vector<std::string> labels;      // label of treatment t is labels[t-1]
  std::vector<std::string> unobserved;  // factorial cells with no units
  std::vector<int> unit_treatment;      // observed treatment per unit (0 = control)
  std::vector<Index> z_source;          // interaction: -1 main effect, else V column
  int treatment_count() const { return static_cast<int>(labels.size()); }
};

struct CausalDesign {
  Vector y_star;
  Matrix z;
  Matrix v;
  Vector weights;
  std::vector<ColumnMeta> z_meta;
  std::vector<ColumnMeta> v_meta;
  TreatmentCoding coding;
  std::vector<std::string> profile_names;  // raw covariates kept for reporting
  Matrix profiles;
  std::vector<std::string> diagnostics;

  Index units() const { return y_star.size(); }
  Index lz() const { return z.cols(); }
  Index lv() const { return v.cols(); }

  // Z row of `unit` with its treatment replaced by `t` (0 = control).
  Vector counterfactual_z(Index unit, int t) const { return counterfactual_z_for(v.row(unit), t); }

  // Same, for a V row that need not belong to the design (e.g. a new sample
  // already put on this design's standardization).
  template <typename Row>
  Vector counterfactual_z_for(const Row& v_row, int t) const {
    if (t < 0 || t > coding.treatment_count()) {
      throw NotEstimableError("treatment " + std::to_string(t) + " is not encoded in the design");
    }
    Vector row = Vector::Zero(lz());
    if (coding.kind == DesignKind::kFactorial) {
      if (t > 0) row[t - 1] = 1.0;
      return row;
    }
    const double tv = static_cast<double>(t);
    for (Index j = 0; j < lz(); ++j) {
      const Index src = coding.z_source[static_cast<std::size_t>(j)];
      row[j] = src < 0 ? tv : tv * v_row(src);
    }
    return row;
  }

  // Applies this design's standardization to raw covariates of new units.
  // Only main-effect and constant columns can be rebuilt this way.
  Matrix project(const std::vector<std::string>& names, const Matrix& raw) const {
    Matrix out(raw.rows(), lv());
    for (Index j = 0; j < lv(); ++j) {
      const auto& m = v_meta[static_cast<std::size_t>(j)];
      if (m.kind == ColumnKind::kConstant) {
        out.col(j).setOnes();
        continue;
      }
      if (m.kind != ColumnKind::kMainEffect) {
        throw ConfigError("cannot project derived column '" + m.name + "' onto new units");
      }
      const auto it = std::find(names.begin(), names.end(), m.name);
      if (it == names.end()) throw DataError("new units lack covariate '" + m.name + "'");
      const Index c = static_cast<Index>(it - names.begin());
      out.col(j) = (raw.col(c).array() - m.transform.center) / m.transform.scale;
    }
    return out;
  }

  void validate() const {
    const Index n = units();
    if (n == 0) throw DataError("design has no units");
    if (z.rows() != n || v.rows() != n || weights.size() != n) {
      throw DataError("design blocks have inconsistent row counts");
    }
    if (lz() < 1) throw DataError("design has no causal-heterogeneity columns");
    if (static_cast<Index>(z_meta.size()) != lz() || static_cast<Index>(v_meta.size()) != lv()) {
      throw DataError("column metadata does not match design width");
    }
    for (Index i = 0; i < n; ++i) {
      if (y_star[i] != 1.0 && y_star[i] != -1.0) throw DataError("recoded outcome must be +/-1");
    }
    if (!z.allFinite() || !v.allFinite() || !weights.allFinite()) {
      throw DataError("design contains non-finite values");
    }
    if ((weights.array() <= 0.0).any()) throw DataError("weights must be positive");
  }
};

inline Vector recode_outcome(std::span<const double> y) {
  Vector out(static_cast<Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) {
      throw DataError("outcome at row " + std::to_string(i + 1) + " is not 0 or 1");
    }
    out[static_cast<Index>(i)] = 2.0 * y[i] - 1.0;
  }
  return out;
}

inline CausalDesign build_design(const RawDataset& raw, const DesignRecipe& recipe) {
  const Index n = raw.rows();
  if (n == 0) throw DataError("dataset has no rows");
  if (raw.treatments.empty()) throw ConfigError("no treatment column declared");
  for (const auto& t : raw.treatments) {
    if (static_cast<Index>(t.size()) != n) throw DataError("treatment column length mismatch");
  }
  if (raw.covariates.rows() != n && raw.covariates.cols() > 0) {
    throw DataError("covariate matrix row count mismatch");
  }

  CausalDesign d;
  d.y_star = recode_outcome(raw.outcome);
  d.weights = raw.weights ? normalize_weights(Eigen::Map<const Vector>(raw.weights->data(), n))
                          : Vector::Ones(n);

  const Matrix covariates = raw.covariates.cols() > 0 ? raw.covariates : Matrix(n, 0);
  auto block = standardize(covariates, raw.covariate_names, recipe.derived);
  d.v = std::move(block.columns);
  d.v_meta = std::move(block.meta);
  d.diagnostics = std::move(block.diagnostics);
  d.profile_names = raw.covariate_names;
  d.profiles = covariates;

  d.coding.kind = recipe.kind;
  if (recipe.kind == DesignKind::kFactorial) {
    auto enc = encode_factorial(raw.treatment_names, raw.treatments, recipe.baseline);
    d.z = std::move(enc.z);
    for (const auto& label : enc.labels) {
      d.z_meta.push_back({label, ColumnKind::kTreatmentIndicator, {}});
    }
    d.coding.labels = std::move(enc.labels);
    d.coding.unobserved = std::move(enc.unobserved);
    d.coding.unit_treatment = std::move(enc.unit_treatment);
  } else {
    if (raw.treatments.size() != 1) {
      throw ConfigError("interaction designs take exactly one binary treatment column");
    }
    Vector t(n);
    for (Index i = 0; i < n; ++i) {
      double value = 0.0;
      if (!detail::parse_double(raw.treatments[0][static_cast<std::size_t>(i)], value) ||
          (value != 0.0 && value != 1.0)) {
        throw ConfigError("treatment '" + raw.treatment_names[0] + "' is not binary at row " +
                          std::to_string(i + 1) + "; use a factorial design instead");
      }
      t[i] = value;
    }
    std::vector<std::string> vnames;
    for (const auto& m : d.v_meta) vnames.push_back(m.name);
    auto enc = build_interactions(t, d.v, vnames, raw.treatment_names[0]);

    std::vector<Index> keep;
    for (Index j = 0; j < enc.z.cols(); ++j) {
      const Vector col = enc.z.col(j);
      const auto s = fit_standardization(std::span<const double>(col.data(), n));
      if (detail::is_constant(s)) {
        d.diagnostics.push_back("dropped zero-variance column '" + enc.names[static_cast<std::size_t>(j)] + "'");
        continue;
      }
      keep.push_back(j);
    }
    d.z.resize(n, static_cast<Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const Index j = keep[k];
      d.z.col(static_cast<Index>(k)) = enc.z.col(j);
      d.z_meta.push_back({enc.names[static_cast<std::size_t>(j)],
                          j == 0 ? ColumnKind::kTreatmentIndicator : ColumnKind::kTreatmentInteraction,
                          {}});
      d.coding.z_source.push_back(j - 1);
    }
    d.coding.labels = {raw.treatment_names[0] + "=1"};
    d.coding.unit_treatment.resize(static_cast<std::size_t>(n));
    bool any_control = false;
    for (Index i = 0; i < n; ++i) {
      d.coding.unit_treatment[static_cast<std::size_t>(i)] = static_cast<int>(t[i]);
      any_control |= t[i] == 0.0;
    }
    if (!any_control) throw ConfigError("no unit is in the control condition");
  }
  d.validate();
  return d;
}

}  // namespace hetsvm
