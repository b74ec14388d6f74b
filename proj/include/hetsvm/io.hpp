#pragma once

// File formats: CSV tables, the flat key-value run configuration, and the fit
// JSON document. All writers go through write_atomic.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hetsvm/design.hpp"
#include "hetsvm/errors.hpp"
#include "hetsvm/svm.hpp"
#include "hetsvm/tuning.hpp"
#include "json.hpp"

namespace hetsvm::io {

using Json = nlohmann::ordered_json;

// Writes to a sibling temporary file and renames it into place, so readers
// never observe a partial file.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
    out << content;
    out.flush();
    if (!out) throw DataError("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Shortest round-trippable form is not needed; 12 significant digits keeps
// tables readable and deterministic.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "NA";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", x == 0.0 ? 0.0 : x);
  return buf;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  Index column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return static_cast<Index>(j);
    }
    throw ConfigError("column '" + name + "' not found in data header");
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) throw DataError("unterminated quote on line " + std::to_string(line_no));
  out.push_back(std::move(field));
  return out;
}

}  // namespace detail

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line, line_no);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw DataError("line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw DataError("CSV input has no header row");
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header, std::vector<std::string> comments = {}) {
    for (const auto& c : comments) out_ << "# " << c << "\n";
    row(header);
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t j = 0; j < fields.size(); ++j) out_ << (j ? "," : "") << csv_field(fields[j]);
    out_ << "\n";
  }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

// ---------------------------------------------------------------------------
// Key-value configuration: `key = value` lines, '#' comments, repeated keys
// accumulate. Later sources (command-line flags) override earlier ones key
// by key.

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& source = "config") {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key=value");
      }
      const auto key = trim(trimmed.substr(0, eq));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
      cfg.values_[key].push_back(trim(trimmed.substr(eq + 1)));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    return parse(read_file(path), path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::vector<std::string> all(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() ? std::vector<std::string>{} : it->second;
  }

  std::string get(const std::string& key, const std::string& fallback = "") const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second.size() != 1) throw ConfigError("key '" + key + "' is given more than once");
    return it->second.front();
  }

  void set(const std::string& key, std::vector<std::string> values) { values_[key] = std::move(values); }

  // Entries of a comma- or repeat-separated list key.
  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& v : all(key)) {
      std::string item;
      std::istringstream ss(v);
      while (std::getline(ss, item, ',')) {
        if (auto t = trim(item); !t.empty()) out.push_back(t);
      }
    }
    return out;
  }

  const std::map<std::string, std::vector<std::string>>& entries() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::vector<std::string>> values_;
};

// Column roles of a dataset, from the config keys outcome, treatment,
// baseline, covariates, weights, derived and design.
struct DataSpec {
  std::string outcome;
  std::vector<std::string> treatments;
  std::vector<std::string> baseline;
  std::vector<std::string> covariates;
  std::string weights;
  std::vector<DerivedTerm> derived;
  DesignKind design = DesignKind::kInteraction;

  static DataSpec from_config(const KeyValueConfig& cfg) {
    DataSpec s;
    s.outcome = cfg.get("outcome");
    if (s.outcome.empty()) throw ConfigError("config lacks 'outcome'");
    s.treatments = cfg.list("treatment");
    if (s.treatments.empty()) throw ConfigError("config lacks 'treatment'");
    s.baseline = cfg.list("baseline");
    s.covariates = cfg.list("covariates");
    s.weights = cfg.get("weights");
    for (const auto& d : cfg.all("derived")) s.derived.push_back(DerivedTerm::parse(d));
    const auto design = cfg.get("design", s.treatments.size() > 1 ? "factorial" : "interaction");
    if (design == "factorial") {
      s.design = DesignKind::kFactorial;
    } else if (design == "interaction") {
      s.design = DesignKind::kInteraction;
    } else {
      throw ConfigError("design must be 'factorial' or 'interaction', got '" + design + "'");
    }
    if (s.design == DesignKind::kFactorial && s.baseline.empty()) {
      s.baseline.assign(s.treatments.size(), "0");
    }
    return s;
  }
};

inline RawDataset to_dataset(const CsvTable& t, const DataSpec& spec) {
  RawDataset raw;
  const Index y = t.column(spec.outcome);
  std::vector<Index> tcols, xcols;
  for (const auto& name : spec.treatments) tcols.push_back(t.column(name));
  for (const auto& name : spec.covariates) xcols.push_back(t.column(name));
  const Index w = spec.weights.empty() ? -1 : t.column(spec.weights);

  const Index n = static_cast<Index>(t.rows.size());
  raw.treatment_names = spec.treatments;
  raw.treatments.assign(tcols.size(), {});
  raw.covariate_names = spec.covariates;
  raw.covariates.resize(n, static_cast<Index>(xcols.size()));
  if (w >= 0) raw.weights.emplace();

  auto number = [&](Index row, Index col) {
    double v = 0.0;
    const auto& cell = t.rows[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)];
    if (!hetsvm::detail::parse_double(cell, v) || !std::isfinite(v)) {
      throw DataError("column '" + t.header[static_cast<std::size_t>(col)] + "', row " +
                      std::to_string(row + 1) + ": '" + cell + "' is not a finite number");
    }
    return v;
  };
  for (Index i = 0; i < n; ++i) {
    const double yi = number(i, y);
    if (yi != 0.0 && yi != 1.0) {
      throw DataError("column '" + spec.outcome + "', row " + std::to_string(i + 1) + ": outcome must be 0 or 1");
    }
    raw.outcome.push_back(yi);
    for (std::size_t k = 0; k < tcols.size(); ++k) {
      raw.treatments[k].push_back(t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(tcols[k])]);
    }
    for (std::size_t k = 0; k < xcols.size(); ++k) raw.covariates(i, static_cast<Index>(k)) = number(i, xcols[k]);
    if (w >= 0) {
      const double wi = number(i, w);
      if (!(wi > 0.0)) {
        throw DataError("column '" + spec.weights + "', row " + std::to_string(i + 1) + ": weight must be positive");
      }
      raw.weights->push_back(wi);
    }
  }
  return raw;
}

// ---------------------------------------------------------------------------
// Fit JSON. Keys are emitted in a fixed order so documents diff cleanly.

inline Json fit_to_json(const SvmFit& f, const CausalDesign& d, const GcvRecord* tuned = nullptr) {
  Json j;
  j["format"] = "hetsvm-fit/1";
  j["design"] = d.coding.kind == DesignKind::kFactorial ? "factorial" : "interaction";
  j["units"] = d.units();
  j["penalties"] = {{"lambda_z", f.penalties.lambda_z},
                    {"lambda_v", f.penalties.lambda_v},
                    {"log_lambda_z", std::log(f.penalties.lambda_z)},
                    {"log_lambda_v", std::log(f.penalties.lambda_v)}};
  j["mu"] = f.mu;
  auto block = [](const std::vector<ColumnMeta>& meta, const Vector& coef, const Vector& tilde) {
    Json arr = Json::array();
    for (std::size_t k = 0; k < meta.size(); ++k) {
      const auto idx = static_cast<Index>(k);
      arr.push_back({{"name", meta[k].name},
                     {"kind", std::string(to_string(meta[k].kind))},
                     {"coef", coef[idx]},
                     {"coef_rescaled", tilde[idx]},
                     {"center", meta[k].transform.center},
                     {"scale", meta[k].transform.scale}});
    }
    return arr;
  };
  j["beta"] = block(d.z_meta, f.beta, f.beta_tilde);
  j["gamma"] = block(d.v_meta, f.gamma, f.gamma_tilde);
  j["nonzero"] = f.nonzero_count();
  j["active_size"] = f.active_size;
  j["objective"] = f.objective;
  if (tuned) j["gcv"] = tuned->gcv;
  j["converged"] = f.converged;
  j["iterations"] = f.iterations;
  j["stop_reason"] = std::string(to_string(f.stop_reason));
  j["labels"] = d.coding.labels;
  j["unobserved"] = d.coding.unobserved;
  return j;
}

// Restores the coefficients of a fit JSON against a design built from the
// same data and configuration; column names must match exactly.
inline SvmFit fit_from_json(const Json& j, const CausalDesign& d) {
  try {
    if (j.at("format") != "hetsvm-fit/1") throw DataError("unsupported fit format");
    SvmFit f;
    f.penalties = {j.at("penalties").at("lambda_z").get<double>(),
                   j.at("penalties").at("lambda_v").get<double>()};
    f.mu = j.at("mu").get<double>();
    auto restore = [](const Json& arr, const std::vector<ColumnMeta>& meta, Vector& coef,
                      Vector& tilde, const char* what) {
      if (arr.size() != meta.size()) {
        throw DataError(std::string("fit has ") + std::to_string(arr.size()) + " " + what +
                        " columns, data has " + std::to_string(meta.size()));
      }
      coef.resize(static_cast<Index>(meta.size()));
      tilde.resize(coef.size());
      for (std::size_t k = 0; k < meta.size(); ++k) {
        if (arr[k].at("name") != meta[k].name) {
          throw DataError(std::string(what) + " column " + std::to_string(k + 1) + " is '" +
                          arr[k].at("name").get<std::string>() + "' in the fit but '" + meta[k].name +
                          "' in the data");
        }
        coef[static_cast<Index>(k)] = arr[k].at("coef").get<double>();
        tilde[static_cast<Index>(k)] = arr[k].at("coef_rescaled").get<double>();
      }
    };
    restore(j.at("beta"), d.z_meta, f.beta, f.beta_tilde, "Z");
    restore(j.at("gamma"), d.v_meta, f.gamma, f.gamma_tilde, "V");
    f.converged = j.at("converged").get<bool>();
    f.iterations = j.at("iterations").get<int>();
    f.active_size = j.at("active_size").get<Index>();
    f.objective = j.at("objective").get<double>();
    f.margins.resize(d.units());
    for (Index i = 0; i < d.units(); ++i) f.margins[i] = predict_margin(f, d.z.row(i).transpose(), d.v.row(i).transpose());
    return f;
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed fit JSON: ") + e.what());
  }
}

}  // namespace hetsvm::io
