#pragma once

// Command-line front end. Subcommands: fit, effects, simulate, payoff.
//
// Settings come from a flat key-value file (--config) and from flags; a flag
// replaces every value the file gave for the same key, and --set key=value
// does the same for keys without a dedicated flag.

#include <openssl/evp.h>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hetsvm/effects.hpp"
#include "hetsvm/io.hpp"
#include "hetsvm/simulation.hpp"
#include "hetsvm/tuning.hpp"
#include "hetsvm/version.hpp"

namespace hetsvm::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kTuningError = 4 };

// Share of failed replicates above which simulate/payoff exit with kTuningError.
inline constexpr double kMaxFailedShare = 0.10;

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

namespace detail {

// Keys that affect where or how fast a run happens but not what it computes.
inline bool affects_results(const std::string& key) { return key != "out" && key != "jobs"; }

inline io::Json config_json(const io::KeyValueConfig& cfg) {
  io::Json j = io::Json::object();
  for (const auto& [key, values] : cfg.entries()) {
    if (affects_results(key)) j[key] = values;
  }
  return j;
}

inline double get_double(const io::KeyValueConfig& cfg, const std::string& key, double fallback) {
  const auto s = cfg.get(key);
  if (s.empty()) return fallback;
  double v = 0.0;
  if (!hetsvm::detail::parse_double(s, v) || !std::isfinite(v)) {
    throw ConfigError("'" + key + "' must be a number, got '" + s + "'");
  }
  return v;
}

inline long long get_int(const io::KeyValueConfig& cfg, const std::string& key, long long fallback,
                         long long min_value) {
  const auto s = cfg.get(key);
  if (s.empty()) return fallback;
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) throw ConfigError("'" + key + "' must be an integer, got '" + s + "'");
  if (v < min_value) throw ConfigError("'" + key + "' must be at least " + std::to_string(min_value));
  return v;
}

// Grid entries are numbers or lo:hi[:step] ranges.
inline std::vector<double> parse_grid(const std::vector<std::string>& items) {
  std::vector<double> out;
  for (const auto& item : items) {
    std::vector<double> parts;
    std::istringstream ss(item);
    std::string p;
    while (std::getline(ss, p, ':')) {
      double v = 0.0;
      if (!hetsvm::detail::parse_double(p, v) || !std::isfinite(v)) {
        throw ConfigError("bad grid entry '" + item + "'");
      }
      parts.push_back(v);
    }
    if (parts.size() == 1) {
      out.push_back(parts[0]);
    } else if (parts.size() == 2 || parts.size() == 3) {
      const double step = parts.size() == 3 ? parts[2] : 1.0;
      if (!(step > 0.0) || parts[1] < parts[0]) throw ConfigError("bad grid range '" + item + "'");
      const auto count = static_cast<long long>(std::floor((parts[1] - parts[0]) / step + 1e-9));
      for (long long k = 0; k <= count; ++k) out.push_back(parts[0] + static_cast<double>(k) * step);
    } else {
      throw ConfigError("bad grid entry '" + item + "'");
    }
  }
  return out;
}

inline SearchOptions search_options(const io::KeyValueConfig& cfg) {
  SearchOptions opt;
  if (cfg.has("grid")) opt.log_grid = parse_grid(cfg.list("grid"));
  opt.precision = get_double(cfg, "precision", opt.precision);
  opt.max_rounds = static_cast<int>(get_int(cfg, "max_rounds", opt.max_rounds, 1));
  return opt;
}

inline std::filesystem::path out_dir(const io::KeyValueConfig& cfg) {
  const auto out = cfg.get("out");
  if (out.empty()) throw ConfigError("no output directory; pass --out or set 'out'");
  return out;
}

struct LoadedData {
  CausalDesign design;
  std::string data_hash;
};

inline LoadedData load_design(const io::KeyValueConfig& cfg) {
  const auto path = cfg.get("data");
  if (path.empty()) throw ConfigError("no data file; pass --data or set 'data'");
  const auto spec = io::DataSpec::from_config(cfg);
  const std::string text = io::read_file(path);
  const auto table = io::parse_csv(text);
  const auto raw = io::to_dataset(table, spec);
  return {build_design(raw, DesignRecipe{spec.design, spec.baseline, spec.derived}), sha256_hex(text)};
}

// Files of one output bundle; written atomically, manifest last.
class Bundle {
 public:
  explicit Bundle(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void add(const std::string& name, std::string content) { files_.emplace_back(name, std::move(content)); }

  void commit(io::Json manifest) {
    io::Json outputs = io::Json::object();
    for (const auto& [name, content] : files_) {
      io::write_atomic(dir_ / name, content);
      outputs[name] = sha256_hex(content);
    }
    manifest["outputs"] = outputs;
    io::write_atomic(dir_ / "manifest.json", manifest.dump(2) + "\n");
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

inline io::Json manifest_head(const std::string& command, const io::KeyValueConfig& cfg) {
  io::Json m;
  m["tool"] = "hetsvm";
  m["version"] = kVersion;
  m["command"] = command;
  const io::Json c = config_json(cfg);
  m["config_hash"] = sha256_hex(c.dump());
  m["config"] = c;
  return m;
}

inline std::string pct_comment() {
  return "effects in percentage points: 100 x (1/2)(clamp(W(t),-1,1) - clamp(W(0),-1,1))";
}

// ---------------------------------------------------------------------------

inline int cmd_fit(const io::KeyValueConfig& cfg, std::ostream& out) {
  const auto dir = out_dir(cfg);
  const auto loaded = load_design(cfg);
  const auto& d = loaded.design;
  SearchOptions opt = search_options(cfg);

  GcvRecord best;
  std::vector<TraceRow> trace;
  if (cfg.has("log_lambda_z") || cfg.has("log_lambda_v")) {
    if (!cfg.has("log_lambda_z") || !cfg.has("log_lambda_v")) {
      throw ConfigError("fixed penalties need both 'log_lambda_z' and 'log_lambda_v'");
    }
    best.log_lambda_z = get_double(cfg, "log_lambda_z", 0.0);
    best.log_lambda_v = get_double(cfg, "log_lambda_v", 0.0);
    best.penalties = PenaltyPair::from_log(best.log_lambda_z, best.log_lambda_v);
    best.fit = fit(d, best.penalties, nullptr, opt.fit);
    best.gcv = gcv(best.fit, d);
    best.nonzero = best.fit.nonzero_count();
    best.active = best.fit.active_size;
  } else {
    auto res = search(d, opt);
    best = std::move(res.best);
    trace = std::move(res.trace);
  }
  const SvmFit& f = best.fit;

  io::CsvWriter coef({"block", "name", "kind", "coef", "coef_rescaled"},
                     {"nonzero coefficients; coef on the standardized design, coef_rescaled = coef x lambda"});
  auto emit = [&](const char* block, const std::vector<ColumnMeta>& meta, const Vector& c, const Vector& t) {
    for (std::size_t k = 0; k < meta.size(); ++k) {
      const auto idx = static_cast<Index>(k);
      if (t[idx] == 0.0) continue;
      coef.row({block, meta[k].name, std::string(to_string(meta[k].kind)), io::fmt(c[idx]), io::fmt(t[idx])});
    }
  };
  emit("Z", d.z_meta, f.beta, f.beta_tilde);
  emit("V", d.v_meta, f.gamma, f.gamma_tilde);

  Bundle bundle(dir);
  bundle.add("fit.json", io::fit_to_json(f, d, &best).dump(2) + "\n");
  bundle.add("coefficients.csv", coef.str());
  if (!trace.empty()) {
    io::CsvWriter t({"round", "log_lambda_z", "log_lambda_v", "nonzero", "active", "gcv"});
    for (const auto& r : trace) {
      t.row({std::to_string(r.round), io::fmt(r.log_lambda_z), io::fmt(r.log_lambda_v),
             std::to_string(r.nonzero), std::to_string(r.active), io::fmt(r.gcv)});
    }
    bundle.add("gcv_trace.csv", t.str());
  }
  auto m = manifest_head("fit", cfg);
  m["data_sha256"] = loaded.data_hash;
  m["selected"] = {{"log_lambda_z", best.log_lambda_z}, {"log_lambda_v", best.log_lambda_v},
                   {"lambda_z", best.penalties.lambda_z}, {"lambda_v", best.penalties.lambda_v},
                   {"nonzero", best.nonzero}, {"active", best.active}, {"gcv", best.gcv}};
  m["diagnostics"] = d.diagnostics;
  bundle.commit(m);

  out << "units " << d.units() << ", L_Z " << d.lz() << ", L_V " << d.lv() << "\n"
      << "selected log lambda_Z " << io::fmt(best.log_lambda_z) << ", log lambda_V "
      << io::fmt(best.log_lambda_v) << ", nonzero " << best.nonzero << ", active " << best.active
      << ", GCV " << io::fmt(best.gcv) << "\n";
  return kOk;
}

inline int cmd_effects(const io::KeyValueConfig& cfg, std::ostream& out) {
  const auto dir = out_dir(cfg);
  const auto fit_path = cfg.get("fit");
  if (fit_path.empty()) throw ConfigError("no fit file; pass --fit or set 'fit'");
  const auto loaded = load_design(cfg);
  const auto& d = loaded.design;
  const std::string fit_text = io::read_file(fit_path);
  io::Json j;
  try {
    j = io::Json::parse(fit_text);
  } catch (const io::Json::exception& e) {
    throw DataError("'" + fit_path + "' is not valid JSON: " + e.what());
  }
  const SvmFit f = io::fit_from_json(j, d);

  const auto ranked = rank_treatments(f, d);
  io::CsvWriter rank_csv({"rank", "treatment", "ate_pp", "estimable"}, {pct_comment()});
  int r = 0;
  for (const auto& row : ranked) {
    rank_csv.row({std::to_string(++r), row.label,
                  row.estimable ? io::fmt(to_percentage_points(row.ate)) : "NA", row.estimable ? "1" : "0"});
  }

  int t = 0;
  const auto want = cfg.get("group_treatment");
  if (want.empty()) {
    t = ranked.empty() || !ranked.front().estimable ? 1 : ranked.front().treatment;
  } else {
    const auto& labels = d.coding.labels;
    const auto it = std::find(labels.begin(), labels.end(), want);
    if (it == labels.end()) throw ConfigError("treatment '" + want + "' has no column in the design");
    t = static_cast<int>(it - labels.begin()) + 1;
  }
  const Index k = std::min<Index>(get_int(cfg, "top", 10, 1), d.units());
  const auto g = group_extremes(f, d, k, t);
  std::vector<std::string> header{"group", "rank", "unit", "cate_pp"};
  for (const auto& name : d.profile_names) header.push_back(name);
  io::CsvWriter group_csv(header, {pct_comment(), "treatment " + d.coding.labels[static_cast<std::size_t>(t - 1)] +
                                                      " against control; unit is the 1-based data row"});
  auto group_rows = [&](const char* name, const std::vector<UnitEffect>& rows) {
    int rank = 0;
    for (const auto& u : rows) {
      std::vector<std::string> fields{name, std::to_string(++rank), std::to_string(u.unit + 1),
                                      io::fmt(to_percentage_points(u.cate))};
      for (Index c = 0; c < d.profiles.cols(); ++c) fields.push_back(io::fmt(d.profiles(u.unit, c)));
      group_csv.row(fields);
    }
  };
  group_rows("highest", g.highest);
  group_rows("lowest", g.lowest);

  std::vector<std::string> unit_header{"unit"};
  for (const auto& label : d.coding.labels) {
    unit_header.push_back("cate_pp:" + label);
    unit_header.push_back("cte:" + label);
  }
  io::CsvWriter unit_csv(unit_header, {pct_comment(), "cte is the classifier-level effect in {-1, 0, 1}"});
  for (Index i = 0; i < d.units(); ++i) {
    std::vector<std::string> fields{std::to_string(i + 1)};
    for (int tt = 1; tt <= d.coding.treatment_count(); ++tt) {
      fields.push_back(io::fmt(to_percentage_points(cate(f, d, i, tt))));
      fields.push_back(std::to_string(cte(f, d, i, tt)));
    }
    unit_csv.row(fields);
  }

  Bundle bundle(dir);
  bundle.add("ranked_treatments.csv", rank_csv.str());
  bundle.add("group_extremes.csv", group_csv.str());
  bundle.add("unit_effects.csv", unit_csv.str());
  auto m = manifest_head("effects", cfg);
  m["data_sha256"] = loaded.data_hash;
  m["fit_sha256"] = sha256_hex(fit_text);
  bundle.commit(m);

  for (std::size_t i = 0; i < ranked.size() && i < 10; ++i) {
    const auto& row = ranked[i];
    out << row.label << "\t" << (row.estimable ? io::fmt(to_percentage_points(row.ate)) : "not estimable") << "\n";
  }
  return kOk;
}

inline bool too_many_failures(int failures, std::size_t replicates) {
  return replicates > 0 && static_cast<double>(failures) > kMaxFailedShare * static_cast<double>(replicates);
}

inline std::vector<Index> parse_sizes(const io::KeyValueConfig& cfg, std::ostream& err) {
  std::vector<Index> sizes;
  for (const auto& s : cfg.list("sizes")) {
    io::KeyValueConfig one;
    one.set("sizes", {s});
    sizes.push_back(static_cast<Index>(get_int(one, "sizes", 0, 50)));
    if (sizes.back() < 250 || sizes.back() > 5000) {
      err << "note: n=" << s << " lies outside 250..5000\n";
    }
  }
  if (sizes.empty()) sizes = {250, 5000};
  return sizes;
}

inline int cmd_simulate(const io::KeyValueConfig& cfg, bool payoff_only, std::ostream& out,
                        std::ostream& err) {
  const auto dir = out_dir(cfg);
  if (!cfg.has("seed")) throw ConfigError("simulation needs an explicit seed; pass --seed or set 'seed'");
  sim::MonteCarloConfig mc;
  const auto seed_text = cfg.get("seed");
  try {
    std::size_t pos = 0;
    mc.seed = std::stoull(seed_text, &pos);
    if (pos != seed_text.size() || seed_text.front() == '-') throw std::invalid_argument("seed");
  } catch (const std::exception&) {
    throw ConfigError("'seed' must be a non-negative integer, got '" + seed_text + "'");
  }
  if (payoff_only) {
    mc.scenarios = {sim::ScenarioKind::kTwo};
  } else {
    for (const auto& s : cfg.list("scenario")) {
      if (s == "all") {
        mc.scenarios = {sim::ScenarioKind::kOneCorrect, sim::ScenarioKind::kOneMisspecified,
                        sim::ScenarioKind::kTwo};
      } else {
        mc.scenarios.push_back(sim::scenario_kind_from_string(s));
      }
    }
    if (mc.scenarios.empty()) throw ConfigError("no scenario; pass --scenario or set 'scenario'");
  }
  mc.sizes = parse_sizes(cfg, err);
  mc.replicates = static_cast<int>(get_int(cfg, "replicates", 100, 1));
  mc.eval_n = static_cast<Index>(get_int(cfg, "eval_n", 2000, 1));
  mc.jobs = static_cast<int>(get_int(cfg, "jobs", 1, 1));
  mc.calibration_draws = static_cast<Index>(get_int(cfg, "calibration_draws", sim::kCalibrationDraws, 1000));
  mc.search = search_options(cfg);

  const auto res = sim::run_monte_carlo(mc, [&](const std::string& line) { err << line << "\n"; });

  Bundle bundle(dir);
  io::CsvWriter scen({"scenario", "a", "b", "covariate_scale", "clamp_fraction", "calibration_seed",
                      "calibration_draws", "effect", "true_pp"},
                     {"true effects in percentage points; scenario 1 lists every arm, scenario 2 the population "
                      "ATE, the two calibrated profiles and the treat-everyone percentage"});
  for (const auto& s : res.scenarios) {
    auto row = [&](const std::string& effect, double v) {
      scen.row({std::string(sim::to_string(s.kind)), io::fmt(s.a), io::fmt(s.b), io::fmt(s.covariate_scale),
                io::fmt(s.clamp_fraction), std::to_string(s.calibration_seed),
                std::to_string(s.calibration_draws), effect, io::fmt(v)});
    };
    if (s.scenario_one()) {
      for (Index t = 0; t < s.true_effects.size(); ++t) {
        row("arm=" + std::to_string(t + 1), to_percentage_points(s.true_effects[t]));
      }
    } else {
      row("ate", to_percentage_points(s.true_effects[0]));
      row("profile:x3", to_percentage_points(s.profile_effects[0]));
      row("profile:x1", to_percentage_points(s.profile_effects[1]));
      row("treat_everyone_pct", s.treat_everyone_pct);
    }
  }
  bundle.add("scenarios.csv", scen.str());

  io::CsvWriter reps({"scenario", "n", "replicate", "ok", "log_lambda_z", "log_lambda_v", "gcv", "nonzero",
                      "svm_pct", "treat_everyone_pct", "error"});
  auto opt = [](const std::optional<double>& v) { return v ? io::fmt(*v) : std::string("NA"); };
  for (const auto& r : res.replicates) {
    const bool p = r.ok && r.payoff.has_value();
    reps.row({std::string(sim::to_string(r.kind)), std::to_string(r.n), std::to_string(r.replicate),
              r.ok ? "1" : "0", r.ok ? io::fmt(r.log_lambda_z) : "NA", r.ok ? io::fmt(r.log_lambda_v) : "NA",
              r.ok ? io::fmt(r.gcv) : "NA", r.ok ? std::to_string(r.nonzero) : "NA",
              p ? opt(r.payoff->svm_pct) : "NA", p ? opt(r.payoff->everyone_pct) : "NA", r.error});
  }
  bundle.add("replicates.csv", reps.str());

  if (!res.fdr.empty()) {
    io::CsvWriter fdr({"scenario", "n", "mode", "replicates", "with_nonzero", "discoveries",
                       "false_discoveries", "dr", "fdr"});
    for (const auto& r : res.fdr) {
      fdr.row({std::string(sim::to_string(r.kind)), std::to_string(r.n), std::string(sim::to_string(r.mode)),
               std::to_string(r.rates.replicates), std::to_string(r.rates.with_nonzero),
               std::to_string(r.rates.discoveries), std::to_string(r.rates.false_discoveries),
               io::fmt(r.rates.dr), opt(r.rates.fdr)});
      out << sim::to_string(r.kind) << " n=" << r.n << " " << sim::to_string(r.mode) << ": DR "
          << io::fmt(r.rates.dr) << ", FDR " << opt(r.rates.fdr) << "\n";
    }
    bundle.add("fdr_dr.csv", fdr.str());
  }
  if (!res.payoff.empty()) {
    io::CsvWriter pay({"scenario", "n", "method", "pct_of_oracle", "replicates_used"},
                      {"payoff as a percentage of the oracle rule's payoff on the evaluation sample"});
    for (const auto& r : res.payoff) {
      pay.row({std::string(sim::to_string(r.kind)), std::to_string(r.n), r.method, opt(r.pct),
               std::to_string(r.used)});
      out << "n=" << r.n << " " << r.method << ": " << opt(r.pct) << "\n";
    }
    bundle.add("payoff.csv", pay.str());
    io::CsvWriter curves({"n", "method", "budget_pct", "benefit", "harm", "net"},
                         {"shares of the evaluation sample helped / harmed when up to budget_pct percent may be treated"});
    for (const auto& c : res.curves) {
      curves.row({std::to_string(c.n), c.method, std::to_string(c.percentile), io::fmt(c.benefit),
                  io::fmt(c.harm), io::fmt(c.net)});
    }
    bundle.add("curves.csv", curves.str());
  }

  auto m = manifest_head(payoff_only ? "payoff" : "simulate", cfg);
  m["seed"] = mc.seed;
  m["failures"] = res.failures;
  bundle.commit(m);

  if (too_many_failures(res.failures, res.replicates.size())) {
    err << "error: " << res.failures << " of " << res.replicates.size() << " replicates failed\n";
    return kTuningError;
  }
  return kOk;
}

}  // namespace detail

// Runs the CLI on `args` (without the program name).
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Sparse squared-hinge SVM estimates of heterogeneous treatment effects", "hetsvm"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::map<std::string, std::vector<std::string>> flags;
  std::string config_path;
  std::vector<std::string> sets;

  auto single = [&](CLI::App* cmd, const std::string& name, const std::string& key, const std::string& help) {
    cmd->add_option(name, flags[key], help)->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  };
  auto repeated = [&](CLI::App* cmd, const std::string& name, const std::string& key, const std::string& help) {
    cmd->add_option(name, flags[key], help)->expected(1, CLI::detail::expected_max_vector_size);
  };
  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value settings file")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "override any key: --set key=value (repeatable)");
    single(cmd, "--out", "out", "output directory");
    single(cmd, "--jobs", "jobs", "worker threads (results do not depend on it)");
    repeated(cmd, "--grid", "grid", "log-lambda grid: values or lo:hi[:step] ranges");
    single(cmd, "--precision", "precision", "final log-lambda step of the GCV search");
  };
  auto data_roles = [&](CLI::App* cmd) {
    single(cmd, "--data", "data", "CSV file with a header row");
    single(cmd, "--outcome", "outcome", "binary outcome column");
    repeated(cmd, "--treatment", "treatment", "treatment column(s)");
    repeated(cmd, "--baseline", "baseline", "control level of each treatment (factorial designs)");
    repeated(cmd, "--covariates", "covariates", "pre-treatment covariate columns");
    single(cmd, "--weights", "weights", "sampling weight column");
    repeated(cmd, "--derived", "derived", "derived term: square:x or product:x:y");
    single(cmd, "--design", "design", "factorial or interaction");
  };
  auto sim_opts = [&](CLI::App* cmd) {
    single(cmd, "--seed", "seed", "master seed (required)");
    repeated(cmd, "--sizes", "sizes", "training sample sizes");
    single(cmd, "--replicates", "replicates", "replicates per (scenario, n)");
    single(cmd, "--eval-n", "eval_n", "evaluation sample size for payoffs");
    single(cmd, "--calibration-draws", "calibration_draws", "covariate draws used to calibrate (a, b)");
  };

  auto* fit_cmd = app.add_subcommand("fit", "select penalties by GCV and fit");
  common(fit_cmd);
  data_roles(fit_cmd);
  single(fit_cmd, "--log-lambda-z", "log_lambda_z", "fixed log lambda_Z (skips the search)");
  single(fit_cmd, "--log-lambda-v", "log_lambda_v", "fixed log lambda_V (skips the search)");

  auto* effects_cmd = app.add_subcommand("effects", "treatment effect tables from a saved fit");
  common(effects_cmd);
  data_roles(effects_cmd);
  single(effects_cmd, "--fit", "fit", "fit.json written by 'fit' on the same data");
  single(effects_cmd, "--top", "top", "units in each group-extremes list");
  single(effects_cmd, "--group-treatment", "group_treatment", "treatment label for group extremes");

  auto* simulate_cmd = app.add_subcommand("simulate", "Monte Carlo study of the simulation scenarios");
  common(simulate_cmd);
  sim_opts(simulate_cmd);
  repeated(simulate_cmd, "--scenario", "scenario", "scenario1, scenario1-misspecified, scenario2 or all");

  auto* payoff_cmd = app.add_subcommand("payoff", "payoff table for scenario 2");
  common(payoff_cmd);
  sim_opts(payoff_cmd);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    io::KeyValueConfig cfg;
    if (!config_path.empty()) {
      cfg = io::KeyValueConfig::load(config_path);
      // Relative paths in a config file are relative to that file.
      const auto base = std::filesystem::path(config_path).parent_path();
      for (const char* key : {"data", "fit", "out"}) {
        if (!cfg.has(key)) continue;
        auto values = cfg.all(key);
        for (auto& v : values) {
          if (!v.empty() && std::filesystem::path(v).is_relative()) v = (base / v).lexically_normal().string();
        }
        cfg.set(key, values);
      }
    }
    for (const auto& [key, values] : flags) {
      if (!values.empty()) cfg.set(key, values);
    }
    std::map<std::string, std::vector<std::string>> set_values;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
      set_values[s.substr(0, eq)].push_back(s.substr(eq + 1));
    }
    for (auto& [key, values] : set_values) cfg.set(key, std::move(values));

    if (fit_cmd->parsed()) return detail::cmd_fit(cfg, out);
    if (effects_cmd->parsed()) return detail::cmd_effects(cfg, out);
    if (simulate_cmd->parsed()) return detail::cmd_simulate(cfg, false, out, err);
    return detail::cmd_simulate(cfg, true, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NotEstimableError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const TuningError& e) {
    err << "tuning error: " << e.what() << "\n";
    return kTuningError;
  } catch (const DegenerateFitError& e) {
    err << "tuning error: " << e.what() << "\n";
    return kTuningError;
  } catch (const CalibrationError& e) {
    err << "calibration error: " << e.what() << "\n";
    return kTuningError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace hetsvm::cli
