#pragma once

// Simulated designs and the Monte Carlo harness.
//
// Scenario 1: 49 treatment arms plus control, 3 covariates plus an intercept
// column; the task is to pick out the few substantive arms (FDR/DR).
// Scenario 2: one binary treatment whose effect varies with 20 covariates;
// the task is to decide whom to treat (payoff against the oracle rule).
//
// Both draw outcomes from the clamped linear probability model
//   Pr(Y = 1) = clamp(a * (eta + b), 0, 1)
// with (a, b) calibrated on a large covariate sample.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "hetsvm/design.hpp"
#include "hetsvm/effects.hpp"
#include "hetsvm/errors.hpp"
#include "hetsvm/svm.hpp"
#include "hetsvm/tuning.hpp"

namespace hetsvm::sim {

enum class ScenarioKind { kOneCorrect, kOneMisspecified, kTwo };

inline std::string_view to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kOneCorrect: return "scenario1";
    case ScenarioKind::kOneMisspecified: return "scenario1-misspecified";
    case ScenarioKind::kTwo: return "scenario2";
  }
  return "unknown";
}

inline ScenarioKind scenario_kind_from_string(std::string_view s) {
  for (auto k : {ScenarioKind::kOneCorrect, ScenarioKind::kOneMisspecified, ScenarioKind::kTwo}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown scenario '" + std::string(s) +
                    "' (expected scenario1, scenario1-misspecified or scenario2)");
}

// ---------------------------------------------------------------------------
// Seeds. Every random stream is a pure function of the master seed and a
// path of integers, so replicates can run in any order on any thread.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(master);
  for (std::uint64_t p : path) h = splitmix64(h ^ splitmix64(p));
  return h;
}

namespace stream {
inline constexpr std::uint64_t kParameters = 1;
inline constexpr std::uint64_t kCalibration = 2;
inline constexpr std::uint64_t kTraining = 3;
inline constexpr std::uint64_t kEvaluation = 4;
}  // namespace stream

inline constexpr int kScenarioOneArms = 49;
inline constexpr int kScenarioOneCovariates = 3;
inline constexpr int kScenarioTwoCovariates = 20;
inline constexpr int kBinaryCovariates = 5;
inline constexpr double kBinaryThreshold = 0.5;
inline constexpr Index kCalibrationDraws = 1'000'000;

// Spread (sd, in coefficient units) of the covariate part of eta. With gamma
// on sd-unit covariates a large share of probabilities leaves [0, 1] once a
// is set by the treatment-effect targets.
inline constexpr double kCovariateSpread = 20.0;

// Unmodeled terms of the misspecified scenario-1 DGP, on sd-unit covariates.
inline constexpr double kMisspecifiedInteraction = 30.0;
inline constexpr double kMisspecifiedSquare = 30.0;

// Share of units helped by the scenario-2 treatment, chosen so that treating
// everyone scores 1 - 2.16 = -116% of the oracle.
inline constexpr double kScenarioTwoHelpedShare = 1.0 / 3.16;

struct CalibrationTargets {
  double leading_effect = 0.0;  // probability scale
  double mean_probability = 0.5;
  double tolerance = 0.005;
};

struct Scenario {
  ScenarioKind kind = ScenarioKind::kOneCorrect;
  std::uint64_t seed = 0;              // master seed the scenario was built from
  std::uint64_t calibration_seed = 0;  // covariate sample used for (a, b)
  Index calibration_draws = 0;

  Matrix u;          // covariance of the raw covariates is u' u
  Vector sd;         // sqrt(diag(u' u))
  int binary = 0;    // trailing covariates dichotomized at kBinaryThreshold sd
  double covariate_scale = 1.0;

  Vector beta;   // scenario 1: per non-control arm; scenario 2: [treatment, interactions]
  Vector gamma;  // per covariate, sd units
  double nonlinear_interaction = 0.0;  // x1 * x2, DGP only
  double nonlinear_square = 0.0;       // x3^2, DGP only

  double a = 0.0;
  double b = 0.0;
  int bisection_steps = 0;

  // Calibration record, probability scale.
  Vector true_effects;                  // scenario 1: per-arm ATE; scenario 2: population ATE
  std::vector<double> profile_effects;  // scenario 2: +1 sd on x3, then x1
  double clamp_fraction = 0.0;
  double treat_everyone_pct = 0.0;      // scenario 2, on the calibration sample

  int covariates() const { return static_cast<int>(u.cols()); }
  bool scenario_one() const { return kind != ScenarioKind::kTwo; }
  std::vector<std::string> covariate_names() const {
    std::vector<std::string> names;
    for (int j = 0; j < covariates(); ++j) names.push_back("x" + std::to_string(j + 1));
    return names;
  }
};

// Raw covariates ~ N(0, u'u); the trailing `binary` columns are replaced by
// indicators of exceeding kBinaryThreshold standard deviations.
inline Matrix draw_covariates(const Scenario& s, Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  const Index p = s.covariates();
  Matrix x(n, p);
  Vector e(p);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) e[j] = normal(rng);
    x.row(i) = (s.u.transpose() * e).transpose();
  }
  for (Index j = p - s.binary; j < p; ++j) {
    for (Index i = 0; i < n; ++i) x(i, j) = x(i, j) / s.sd[j] > kBinaryThreshold ? 1.0 : 0.0;
  }
  return x;
}

// Covariates in the units the DGP coefficients act on: sd units for
// continuous columns, the 0/1 indicator for dichotomized ones.
inline Vector dgp_units(const Scenario& s, const Eigen::Ref<const Vector>& raw) {
  Vector x = raw;
  for (Index j = 0; j < s.covariates() - s.binary; ++j) x[j] /= s.sd[j];
  return x;
}

// Covariate part of eta (before the treatment part and the affine map).
inline double covariate_part(const Scenario& s, const Vector& x) {
  double c = x.dot(s.gamma);
  if (s.kind == ScenarioKind::kOneMisspecified) {
    c += s.nonlinear_interaction * x[0] * x[1] + s.nonlinear_square * x[2] * x[2];
  }
  return s.covariate_scale * c;
}

// Treatment part of eta for scenario 2 (treated units only).
inline double effect_part(const Scenario& s, const Vector& x) {
  return s.beta[0] + x.dot(s.beta.tail(s.beta.size() - 1));
}

inline double probability(const Scenario& s, double eta) {
  return std::clamp(s.a * (eta + s.b), 0.0, 1.0);
}

inline double true_cate(const Scenario& s, const Vector& x) {
  const double c = covariate_part(s, x);
  return probability(s, c + effect_part(s, x)) - probability(s, c);
}

namespace detail {

// Mean of clamp(a * (v + shift), 0, 1) over a sorted sample, in O(log n)
// using prefix sums.
class ClampedMean {
 public:
  explicit ClampedMean(std::vector<double> values) : v_(std::move(values)) {
    std::sort(v_.begin(), v_.end());
    prefix_.resize(v_.size() + 1, 0.0);
    for (std::size_t i = 0; i < v_.size(); ++i) prefix_[i + 1] = prefix_[i] + v_[i];
  }

  double mean(double a, double shift) const {
    const auto [lo, hi] = bounds(a, shift);
    const double mid = static_cast<double>(hi - lo);
    const double sum = prefix_[hi] - prefix_[lo];
    return (a * (sum + mid * shift) + static_cast<double>(v_.size() - hi)) / size();
  }

  // Fraction of the sample whose unclamped probability lies outside [0, 1].
  double clamped(double a, double shift) const {
    const auto [lo, hi] = bounds(a, shift);
    return static_cast<double>(lo + (v_.size() - hi)) / size();
  }

  double min() const { return v_.front(); }
  double max() const { return v_.back(); }

 private:
  std::pair<std::size_t, std::size_t> bounds(double a, double shift) const {
    if (a <= 0.0) return {0, v_.size()};  // every probability is exactly 0
    const auto lo = static_cast<std::size_t>(
        std::upper_bound(v_.begin(), v_.end(), -shift) - v_.begin());
    const auto hi = static_cast<std::size_t>(
        std::lower_bound(v_.begin(), v_.end(), 1.0 / a - shift) - v_.begin());
    return {lo, std::max(lo, hi)};
  }
  double size() const { return static_cast<double>(v_.size()); }

  std::vector<double> v_;
  std::vector<double> prefix_;
};

template <typename F>
double bisect(F f, double lo, double hi, double target, int steps, int& used) {
  double flo = f(lo) - target;
  for (int k = 0; k < steps; ++k) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid) - target;
    ++used;
    if ((fm < 0) == (flo < 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

inline double quantile(std::vector<double> v, double q) {
  const auto k = static_cast<std::size_t>(std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

}  // namespace detail

// One arm of the calibration sample: eta excluding b is `shift` plus a draw
// from `sample`.
struct ArmSample {
  const detail::ClampedMean* sample;
  double shift = 0.0;
};

struct AffineFit {
  double a = 0.0;
  double b = 0.0;
  int steps = 0;
};

// Bisection on a; at every step b is re-solved by bisection so the mean
// clamped probability over the arms (equally weighted) is on target. The
// leading effect must be increasing in a on (0, a_max].
inline AffineFit calibrate_affine(const std::vector<ArmSample>& arms,
                                  const std::function<double(double, double)>& leading_effect,
                                  const CalibrationTargets& targets, double a_max, int max_steps = 60) {
  double span = 1.0;
  for (const auto& arm : arms) {
    span = std::max({span, std::abs(arm.sample->min() + arm.shift), std::abs(arm.sample->max() + arm.shift)});
  }
  AffineFit out;
  auto solve_b = [&](double a) {
    auto mean_prob = [&](double b) {
      double m = 0.0;
      for (const auto& arm : arms) m += arm.sample->mean(a, arm.shift + b);
      return m / static_cast<double>(arms.size());
    };
    return detail::bisect(mean_prob, -span - 1.0 / a, span + 1.0 / a, targets.mean_probability,
                          max_steps, out.steps);
  };
  auto effect_at = [&](double a) { return leading_effect(a, solve_b(a)); };
  if (effect_at(a_max) < targets.leading_effect) {
    throw CalibrationError("leading effect target is out of reach of the affine map");
  }
  out.a = detail::bisect(effect_at, 1e-12, a_max, targets.leading_effect, max_steps, out.steps);
  out.b = solve_b(out.a);
  const double got = leading_effect(out.a, out.b);
  if (std::abs(got - targets.leading_effect) > targets.tolerance) {
    throw CalibrationError("affine calibration did not converge: leading effect " +
                           std::to_string(got) + " vs target " +
                           std::to_string(targets.leading_effect));
  }
  return out;
}

// Draws U and the coefficient vectors, then calibrates (a, b) on
// `calibration_draws` covariate rows. Scenario-1 variants share U, beta and
// gamma; only the DGP's nonlinear terms and the resulting (a, b) differ.
inline Scenario make_scenario(ScenarioKind kind, std::uint64_t master_seed,
                              Index calibration_draws = kCalibrationDraws) {
  Scenario s;
  s.kind = kind;
  s.seed = master_seed;
  const bool one = kind != ScenarioKind::kTwo;
  const std::uint64_t family = one ? 1 : 2;
  std::mt19937_64 rng(derive_seed(master_seed, {stream::kParameters, family}));
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> small(-0.7, 0.7);

  const int p = one ? kScenarioOneCovariates : kScenarioTwoCovariates;
  s.u.resize(p, p);
  for (Index i = 0; i < p; ++i) {
    for (Index j = 0; j < p; ++j) s.u(i, j) = normal(rng);
  }
  s.sd = (s.u.transpose() * s.u).diagonal().cwiseSqrt();
  s.binary = one ? 0 : kBinaryCovariates;

  if (one) {
    s.beta.resize(kScenarioOneArms);
    s.beta.head(3) << 7.5, 3.3, -2.0;
    for (Index j = 3; j < kScenarioOneArms; ++j) s.beta[j] = small(rng);
    s.gamma.resize(p);
    s.gamma << 50.0, -30.0, 30.0;
    if (kind == ScenarioKind::kOneMisspecified) {
      s.nonlinear_interaction = kMisspecifiedInteraction;
      s.nonlinear_square = kMisspecifiedSquare;
    }
  } else {
    s.beta.resize(1 + p);
    s.beta[0] = 0.0;  // set below
    s.beta.segment(1, 4) << -2.7, 2.7, -6.7, -6.7;
    for (Index j = 5; j <= p; ++j) s.beta[j] = small(rng);
    s.gamma.resize(p);
    s.gamma.head(5) << 50.0, -30.0, 30.0, 20.0, -20.0;
    for (Index j = 5; j < p; ++j) s.gamma[j] = small(rng);
  }

  s.calibration_seed = derive_seed(master_seed, {stream::kCalibration, family});
  s.calibration_draws = calibration_draws;
  std::mt19937_64 crng(s.calibration_seed);
  const Matrix raw = draw_covariates(s, calibration_draws, crng);
  std::vector<Vector> x(static_cast<std::size_t>(calibration_draws));
  for (Index i = 0; i < calibration_draws; ++i) x[static_cast<std::size_t>(i)] = dgp_units(s, raw.row(i).transpose());

  // Scale the covariate part to kCovariateSpread.
  {
    s.covariate_scale = 1.0;
    double m = 0.0, ss = 0.0;
    for (const auto& xi : x) m += covariate_part(s, xi);
    m /= static_cast<double>(x.size());
    for (const auto& xi : x) ss += std::pow(covariate_part(s, xi) - m, 2);
    s.covariate_scale = kCovariateSpread / std::sqrt(ss / static_cast<double>(x.size()));
  }
  std::vector<double> c(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) c[i] = covariate_part(s, x[i]);

  if (one) {
    // The leading target only; one affine map cannot place all three leading
    // effects, so the others land where the map puts them.
    const detail::ClampedMean base(c);
    std::vector<ArmSample> arms{{&base, 0.0}};
    for (Index t = 0; t < kScenarioOneArms; ++t) arms.push_back({&base, s.beta[t]});
    CalibrationTargets targets;
    targets.leading_effect = 0.07;
    const AffineFit af = calibrate_affine(
        arms, [&](double a, double b) { return base.mean(a, s.beta[0] + b) - base.mean(a, b); },
        targets, 1.0 / s.beta.cwiseAbs().maxCoeff());
    s.a = af.a;
    s.b = af.b;
    s.bisection_steps = af.steps;
    s.true_effects.resize(kScenarioOneArms);
    double clamped = 0.0;
    for (const auto& arm : arms) clamped += base.clamped(s.a, arm.shift + s.b);
    for (Index t = 0; t < kScenarioOneArms; ++t) {
      s.true_effects[t] = base.mean(s.a, s.beta[t] + s.b) - base.mean(s.a, s.b);
    }
    s.clamp_fraction = clamped / static_cast<double>(arms.size());
    return s;
  }

  // Scenario 2. The treatment main effect sets the helped share; a is set by
  // the x3 profile: moving x3 from its mean to +1 sd, with the prognostic part
  // held at its mean, changes the CATE by 4 points. The two depend on each
  // other through clamping, so they are alternated a few times.
  std::vector<double> h(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) h[i] = x[i].dot(s.beta.tail(p));
  s.beta[0] = -detail::quantile(h, 1.0 - kScenarioTwoHelpedShare);
  const double c_mean = std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(c.size());
  const detail::ClampedMean control_sample(c);

  auto profile = [&](double a, double b, Index j) {
    const double base = c_mean + s.beta[0] + b;
    return std::abs(std::clamp(a * (base + s.beta[1 + j]), 0.0, 1.0) - std::clamp(a * base, 0.0, 1.0));
  };
  auto everyone_pct = [&](double a, double b, double main) {
    double helped = 0.0, harmed = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double tau = std::clamp(a * (c[i] + main + h[i] + b), 0.0, 1.0) -
                         std::clamp(a * (c[i] + b), 0.0, 1.0);
      helped += tau > 0;
      harmed += tau < 0;
    }
    return helped > 0 ? 100.0 * (helped - harmed) / helped : -std::numeric_limits<double>::infinity();
  };
  const double target_everyone = 100.0 * (1.0 - (1.0 - kScenarioTwoHelpedShare) / kScenarioTwoHelpedShare);
  CalibrationTargets targets;
  targets.leading_effect = 0.04;
  for (int round = 0; round < 3; ++round) {
    std::vector<double> treated(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) treated[i] = c[i] + s.beta[0] + h[i];
    const detail::ClampedMean treated_sample(std::move(treated));
    const std::vector<ArmSample> arms{{&control_sample, 0.0}, {&treated_sample, 0.0}};
    const AffineFit af = calibrate_affine(
        arms, [&](double a, double b) { return profile(a, b, 2); }, targets,
        1.0 / s.beta.tail(p).cwiseAbs().maxCoeff());
    s.a = af.a;
    s.b = af.b;
    s.bisection_steps += af.steps;
    s.clamp_fraction = 0.5 * (control_sample.clamped(s.a, s.b) + treated_sample.clamped(s.a, s.b));
    if (round == 2) break;
    const double spread = std::abs(s.beta[0]) + s.beta.tail(p).cwiseAbs().sum() * 4.0;
    s.beta[0] = detail::bisect([&](double m) { return everyone_pct(s.a, s.b, m); }, -spread, spread,
                               target_everyone, 40, s.bisection_steps);
  }
  s.profile_effects = {profile(s.a, s.b, 2), profile(s.a, s.b, 0)};

  double ate = 0.0, helped = 0.0, harmed = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double tau = probability(s, c[i] + s.beta[0] + h[i]) - probability(s, c[i]);
    ate += tau;
    helped += tau > 0;
    harmed += tau < 0;
  }
  s.true_effects = Vector::Constant(1, ate / static_cast<double>(x.size()));
  s.treat_everyone_pct = 100.0 * (helped - harmed) / helped;
  return s;
}

// ---------------------------------------------------------------------------
// Samples.

struct SimulatedSample {
  CausalDesign design;
  Matrix covariates;   // raw
  Vector true_cate;    // scenario 2: tau(1; X_i) per unit
  double clamp_fraction = 0.0;
};

// Scenario-1 arms are assigned round-robin (balanced and orthogonal when n is
// a multiple of 50); scenario 2 alternates treatment and control.
inline SimulatedSample sample_scenario(const Scenario& s, Index n, std::uint64_t seed) {
  const bool one = s.scenario_one();
  if (one && n < kScenarioOneArms + 1) {
    throw ConfigError("scenario 1 needs at least one unit per arm (n >= 50)");
  }
  if (!one && n < 50) throw ConfigError("scenario 2 needs n >= 50");

  std::mt19937_64 rng(seed);
  SimulatedSample out;
  out.covariates = draw_covariates(s, n, rng);
  std::uniform_real_distribution<double> unif;

  RawDataset raw;
  raw.covariate_names = s.covariate_names();
  raw.covariates = out.covariates;
  raw.treatments.resize(1);
  raw.treatment_names = {one ? "arm" : "treat"};
  if (!one) out.true_cate.resize(n);
  Index clamped = 0;
  for (Index i = 0; i < n; ++i) {
    const Vector x = dgp_units(s, out.covariates.row(i).transpose());
    const double c = covariate_part(s, x);
    double eta = c;
    int t = 0;
    if (one) {
      t = static_cast<int>(i % (kScenarioOneArms + 1));
      if (t > 0) eta += s.beta[t - 1];
    } else {
      t = static_cast<int>(i % 2);
      const double e = effect_part(s, x);
      if (t) eta += e;
      out.true_cate[i] = probability(s, c + e) - probability(s, c);
    }
    const double lin = s.a * (eta + s.b);
    clamped += lin < 0.0 || lin > 1.0;
    raw.treatments[0].push_back(std::to_string(t));
    raw.outcome.push_back(unif(rng) < std::clamp(lin, 0.0, 1.0) ? 1.0 : 0.0);
  }
  out.clamp_fraction = static_cast<double>(clamped) / static_cast<double>(n);

  if (one) {
    out.design = build_design(raw, DesignRecipe{DesignKind::kFactorial, {"0"}, {}});
    if (n % (kScenarioOneArms + 1) != 0) {
      out.design.diagnostics.push_back("n = " + std::to_string(n) +
                                       " is not a multiple of 50; arms differ in size by one");
    }
    // Intercept column in V; the solver leaves it at zero after centering.
    CausalDesign& d = out.design;
    d.v.conservativeResize(Eigen::NoChange, d.v.cols() + 1);
    d.v.col(d.v.cols() - 1).setOnes();
    d.v_meta.push_back({"intercept", ColumnKind::kConstant, {}});
  } else {
    out.design = build_design(raw, DesignRecipe{DesignKind::kInteraction, {}, {}});
  }
  return out;
}

inline SimulatedSample gen_scenario_one(Index n, bool misspecified, std::uint64_t seed,
                                        Index calibration_draws = kCalibrationDraws) {
  const auto s = make_scenario(
      misspecified ? ScenarioKind::kOneMisspecified : ScenarioKind::kOneCorrect, seed,
      calibration_draws);
  return sample_scenario(s, n, derive_seed(seed, {stream::kTraining, 0}));
}

inline SimulatedSample gen_scenario_two(Index n, std::uint64_t seed,
                                        Index calibration_draws = kCalibrationDraws) {
  const auto s = make_scenario(ScenarioKind::kTwo, seed, calibration_draws);
  return sample_scenario(s, n, derive_seed(seed, {stream::kTraining, 0}));
}

// Fitted scenario-1 arm coefficients, aligned with Scenario::beta (arm t at
// index t - 1); arms without a column read as zero.
inline Vector arm_estimates(const SvmFit& f, const CausalDesign& d) {
  Vector est = Vector::Zero(kScenarioOneArms);
  for (std::size_t j = 0; j < d.coding.labels.size(); ++j) {
    const std::string& label = d.coding.labels[j];
    const int arm = std::stoi(label.substr(label.find('=') + 1));
    est[arm - 1] = f.beta[static_cast<Index>(j)];
  }
  return est;
}

// ---------------------------------------------------------------------------
// FDR / DR.

enum class DiscoveryMode { kLargest, kTopK };

inline std::string_view to_string(DiscoveryMode m) {
  return m == DiscoveryMode::kLargest ? "largest" : "top3";
}

// Largest: the truly largest effect is the strict maximum of the estimates
// and has the right sign. Top-k: each of the k largest |true| effects is
// estimated nonzero with the right sign.
inline bool discovered(const Vector& estimate, const Vector& truth, DiscoveryMode mode, int k = 3) {
  if (mode == DiscoveryMode::kLargest) {
    Index best = 0;
    truth.maxCoeff(&best);
    const double e = estimate[best];
    if (e == 0.0 || (e > 0) != (truth[best] > 0)) return false;
    for (Index j = 0; j < estimate.size(); ++j) {
      if (j != best && estimate[j] >= e) return false;
    }
    return true;
  }
  std::vector<Index> order(static_cast<std::size_t>(truth.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return std::abs(truth[a]) > std::abs(truth[b]); });
  for (int r = 0; r < k; ++r) {
    const Index j = order[static_cast<std::size_t>(r)];
    if (estimate[j] == 0.0 || (estimate[j] > 0) != (truth[j] > 0)) return false;
  }
  return true;
}

struct DiscoveryRates {
  int replicates = 0;
  int with_nonzero = 0;  // FDR denominator
  int discoveries = 0;
  int false_discoveries = 0;
  double dr = 0.0;
  std::optional<double> fdr;  // undefined when no replicate has a nonzero estimate
};

inline DiscoveryRates fdr_dr(const std::vector<Vector>& estimates, const Vector& truth,
                             DiscoveryMode mode, int k = 3) {
  DiscoveryRates r;
  for (const auto& e : estimates) {
    ++r.replicates;
    const bool any = (e.array() != 0.0).any();
    const bool hit = discovered(e, truth, mode, k);
    r.with_nonzero += any;
    r.discoveries += hit;
    r.false_discoveries += any && !hit;
  }
  if (r.replicates > 0) r.dr = static_cast<double>(r.discoveries) / r.replicates;
  if (r.with_nonzero > 0) r.fdr = static_cast<double>(r.false_discoveries) / r.with_nonzero;
  return r;
}

// ---------------------------------------------------------------------------
// Payoff of treatment rules on an evaluation sample.

inline constexpr int kCurvePoints = 100;

struct BudgetCurve {
  // Fractions of the evaluation sample helped / harmed when up to p% of it
  // may be treated, p = 1..100.
  std::vector<double> benefit, harm, net;
};

// Units with a positive score, best first (ties by row).
inline std::vector<Index> treatment_order(const Vector& score) {
  std::vector<Index> order;
  for (Index i = 0; i < score.size(); ++i) {
    if (score[i] > 0.0) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return score[a] > score[b]; });
  return order;
}

// +0.5 per treated unit that is helped, -0.5 per treated unit that is harmed.
inline double rule_payoff(const std::vector<Index>& treated, const Vector& truth) {
  double p = 0.0;
  for (Index i : treated) p += truth[i] > 0 ? 0.5 : (truth[i] < 0 ? -0.5 : 0.0);
  return p;
}

inline BudgetCurve budget_curve(const Vector& score, const Vector& truth) {
  const auto order = treatment_order(score);
  const double n = static_cast<double>(truth.size());
  BudgetCurve c;
  std::size_t taken = 0;
  double helped = 0.0, harmed = 0.0;
  for (int q = 1; q <= kCurvePoints; ++q) {
    const auto budget = static_cast<std::size_t>(std::llround(n * q / kCurvePoints));
    while (taken < std::min(budget, order.size())) {
      const Index i = order[taken++];
      helped += truth[i] > 0;
      harmed += truth[i] < 0;
    }
    c.benefit.push_back(helped / n);
    c.harm.push_back(harmed / n);
    c.net.push_back((helped - harmed) / n);
  }
  return c;
}

struct PayoffResult {
  double oracle_payoff = 0.0;
  double svm_payoff = 0.0;
  double everyone_payoff = 0.0;
  std::optional<double> svm_pct;  // undefined when the oracle payoff is zero
  std::optional<double> oracle_pct;
  std::optional<double> everyone_pct;
  std::optional<double> nobody_pct;
  BudgetCurve svm_curve;
  BudgetCurve oracle_curve;
};

// Scores each rule against the oracle (treat exactly when the true effect is
// positive). `budget` caps the number treated; unset means no cap.
inline PayoffResult evaluate_rules(const Vector& predicted, const Vector& truth,
                                   std::optional<Index> budget = std::nullopt) {
  if (predicted.size() != truth.size()) throw DataError("prediction and truth lengths differ");
  auto capped = [&](std::vector<Index> order) {
    if (budget && static_cast<Index>(order.size()) > *budget) order.resize(static_cast<std::size_t>(*budget));
    return order;
  };
  PayoffResult r;
  r.oracle_payoff = rule_payoff(capped(treatment_order(truth)), truth);
  r.svm_payoff = rule_payoff(capped(treatment_order(predicted)), truth);
  std::vector<Index> everyone(static_cast<std::size_t>(truth.size()));
  std::iota(everyone.begin(), everyone.end(), Index{0});
  r.everyone_payoff = rule_payoff(capped(everyone), truth);
  if (r.oracle_payoff > 0.0) {
    r.svm_pct = 100.0 * r.svm_payoff / r.oracle_payoff;
    r.oracle_pct = 100.0;
    r.everyone_pct = 100.0 * r.everyone_payoff / r.oracle_payoff;
    r.nobody_pct = 0.0;
  }
  r.svm_curve = budget_curve(predicted, truth);
  r.oracle_curve = budget_curve(truth, truth);
  return r;
}

// Fits are scored on a fresh sample of `eval_n` units from the same DGP.
inline PayoffResult payoff_eval(const SvmFit& f, const CausalDesign& train, const Scenario& s,
                                Index eval_n, std::uint64_t seed,
                                std::optional<Index> budget = std::nullopt) {
  if (s.kind != ScenarioKind::kTwo) throw ConfigError("payoff is defined for scenario 2 only");
  std::mt19937_64 rng(seed);
  const Matrix raw = draw_covariates(s, eval_n, rng);
  Vector truth(eval_n);
  for (Index i = 0; i < eval_n; ++i) truth[i] = true_cate(s, dgp_units(s, raw.row(i).transpose()));
  const Matrix v = train.project(s.covariate_names(), raw);
  return evaluate_rules(cate_for_rows(f, train, v, 1), truth, budget);
}

// ---------------------------------------------------------------------------
// Monte Carlo runner.

struct MonteCarloConfig {
  std::vector<ScenarioKind> scenarios;
  std::vector<Index> sizes;
  int replicates = 100;
  std::uint64_t seed = 1;
  Index eval_n = 2000;
  int jobs = 1;
  Index calibration_draws = kCalibrationDraws;
  SearchOptions search;
};

struct ReplicateResult {
  ScenarioKind kind = ScenarioKind::kOneCorrect;
  Index n = 0;
  int replicate = 0;
  bool ok = false;
  std::string error;
  double log_lambda_z = 0.0;
  double log_lambda_v = 0.0;
  double gcv = 0.0;
  Index nonzero = 0;
  Vector estimates;  // scenario 1 arm coefficients
  std::optional<PayoffResult> payoff;
};

struct FdrRow {
  ScenarioKind kind;
  Index n;
  DiscoveryMode mode;
  DiscoveryRates rates;
};

struct PayoffRow {
  ScenarioKind kind;
  Index n;
  std::string method;
  std::optional<double> pct;  // mean over replicates with a defined percentage
  int used = 0;
};

struct CurveRow {
  Index n;
  std::string method;
  int percentile;
  double benefit, harm, net;
};

struct MonteCarloResult {
  std::vector<Scenario> scenarios;
  std::vector<ReplicateResult> replicates;  // ordered by (scenario, n, replicate)
  std::vector<FdrRow> fdr;
  std::vector<PayoffRow> payoff;
  std::vector<CurveRow> curves;
  int failures = 0;
};

inline ReplicateResult run_replicate(const Scenario& s, Index n, int r, const MonteCarloConfig& cfg) {
  ReplicateResult out;
  out.kind = s.kind;
  out.n = n;
  out.replicate = r;
  try {
    const auto rep = static_cast<std::uint64_t>(r);
    const auto un = static_cast<std::uint64_t>(n);
    // Scenario-1 variants share training seeds, so their fitted designs match.
    const std::uint64_t family = s.scenario_one() ? 1 : 2;
    const auto sample = sample_scenario(s, n, derive_seed(cfg.seed, {stream::kTraining, family, un, rep}));
    const auto res = search(sample.design, cfg.search);
    out.log_lambda_z = res.best.log_lambda_z;
    out.log_lambda_v = res.best.log_lambda_v;
    out.gcv = res.best.gcv;
    out.nonzero = res.best.nonzero;
    if (s.scenario_one()) {
      out.estimates = arm_estimates(res.best.fit, sample.design);
    } else {
      out.payoff = payoff_eval(res.best.fit, sample.design, s, cfg.eval_n,
                               derive_seed(cfg.seed, {stream::kEvaluation, family, un, rep}));
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

inline void summarize(MonteCarloResult& res) {
  for (const auto& s : res.scenarios) {
    std::vector<Index> sizes;
    for (const auto& r : res.replicates) {
      if (r.kind == s.kind && std::find(sizes.begin(), sizes.end(), r.n) == sizes.end()) sizes.push_back(r.n);
    }
    for (Index n : sizes) {
      std::vector<const ReplicateResult*> ok;
      for (const auto& r : res.replicates) {
        if (r.kind == s.kind && r.n == n && r.ok) ok.push_back(&r);
      }
      if (s.scenario_one()) {
        std::vector<Vector> est;
        for (const auto* r : ok) est.push_back(r->estimates);
        for (auto mode : {DiscoveryMode::kLargest, DiscoveryMode::kTopK}) {
          res.fdr.push_back({s.kind, n, mode, fdr_dr(est, s.true_effects, mode)});
        }
        continue;
      }
      auto mean_of = [&](auto member) {
        PayoffRow row{s.kind, n, "", std::nullopt, 0};
        double sum = 0.0;
        for (const auto* r : ok) {
          if (const auto& v = (*r->payoff).*member) {
            sum += *v;
            ++row.used;
          }
        }
        if (row.used > 0) row.pct = sum / row.used;
        return row;
      };
      const std::pair<const char*, std::optional<double> PayoffResult::*> methods[] = {
          {"svm", &PayoffResult::svm_pct},
          {"oracle", &PayoffResult::oracle_pct},
          {"treat_everyone", &PayoffResult::everyone_pct},
          {"treat_nobody", &PayoffResult::nobody_pct}};
      for (const auto& [name, member] : methods) {
        auto row = mean_of(member);
        row.method = name;
        res.payoff.push_back(row);
      }
      for (const auto& [name, curve] :
           {std::pair{"svm", &PayoffResult::svm_curve}, std::pair{"oracle", &PayoffResult::oracle_curve}}) {
        for (int q = 0; q < kCurvePoints; ++q) {
          CurveRow row{n, name, q + 1, 0.0, 0.0, 0.0};
          for (const auto* r : ok) {
            const BudgetCurve& c = (*r->payoff).*curve;
            row.benefit += c.benefit[static_cast<std::size_t>(q)];
            row.harm += c.harm[static_cast<std::size_t>(q)];
            row.net += c.net[static_cast<std::size_t>(q)];
          }
          if (!ok.empty()) {
            const double k = static_cast<double>(ok.size());
            row.benefit /= k;
            row.harm /= k;
            row.net /= k;
          }
          res.curves.push_back(row);
        }
      }
    }
  }
}

// Replicates run on up to `jobs` threads; each writes only its own slot, so
// the result does not depend on the schedule.
inline MonteCarloResult run_monte_carlo(const MonteCarloConfig& cfg,
                                        const std::function<void(const std::string&)>& log = {}) {
  if (cfg.replicates < 1) throw ConfigError("replicates must be at least 1");
  if (cfg.scenarios.empty() || cfg.sizes.empty()) throw ConfigError("no scenarios or sizes given");
  if (cfg.eval_n < 1) throw ConfigError("evaluation sample size must be positive");

  MonteCarloResult res;
  for (auto kind : cfg.scenarios) {
    res.scenarios.push_back(make_scenario(kind, cfg.seed, cfg.calibration_draws));
    if (log) {
      const auto& s = res.scenarios.back();
      log(std::string(to_string(kind)) + ": a=" + std::to_string(s.a) + " b=" + std::to_string(s.b) +
          " clamped=" + std::to_string(s.clamp_fraction));
    }
  }
  struct Job {
    std::size_t scenario;
    Index n;
    int replicate;
  };
  std::vector<Job> jobs;
  for (std::size_t k = 0; k < res.scenarios.size(); ++k) {
    for (Index n : cfg.sizes) {
      for (int r = 0; r < cfg.replicates; ++r) jobs.push_back({k, n, r});
    }
  }
  res.replicates.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      const Job& job = jobs[j];
      res.replicates[j] = run_replicate(res.scenarios[job.scenario], job.n, job.replicate, cfg);
      if (log && !res.replicates[j].ok) {
        std::lock_guard lock(log_mutex);
        log("replicate " + std::to_string(job.replicate) + " at n=" + std::to_string(job.n) +
            " failed: " + res.replicates[j].error);
      }
    }
  };
  const int threads = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(jobs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& r : res.replicates) res.failures += !r.ok;
  summarize(res);
  return res;
}

}  // namespace hetsvm::sim
