#include "hetsvm/cli.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace hetsvm::cli {
namespace {

const std::filesystem::path kData = HETSVM_TEST_DATA_DIR;

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("hetsvm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string config() const { return (kData / "toy20.cfg").string(); }

  std::filesystem::path dir_;
};

TEST_F(CliTest, FitAndEffectsMatchGoldenFiles) {
  ASSERT_EQ(cli({"fit", "--config", config(), "--out", path("fit"), "--log-lambda-z", "-3", "--log-lambda-v", "-3"}).code, kOk);
  for (const char* f : {"fit.json", "coefficients.csv"}) {
    EXPECT_EQ(io::read_file(path("fit") + "/" + f), io::read_file(kData / "golden" / f)) << f;
  }
  ASSERT_EQ(cli({"effects", "--config", config(), "--out", path("eff"), "--fit", path("fit") + "/fit.json", "--top", "3"}).code, kOk);
  for (const char* f : {"ranked_treatments.csv", "group_extremes.csv", "unit_effects.csv"}) {
    EXPECT_EQ(io::read_file(path("eff") + "/" + f), io::read_file(kData / "golden" / "effects" / f)) << f;
  }
}

// Rebuilds every unit's CATE from the fit JSON and the raw CSV alone.
TEST_F(CliTest, UnitEffectsMatchHandComputation) {
  ASSERT_EQ(cli({"fit", "--config", config(), "--out", path("fit"), "--log-lambda-z", "-3", "--log-lambda-v", "-3"}).code, kOk);
  ASSERT_EQ(cli({"effects", "--config", config(), "--out", path("eff"), "--fit", path("fit") + "/fit.json"}).code, kOk);
  const auto j = io::Json::parse(io::read_file(path("fit") + "/fit.json"));
  const auto data = io::read_csv(kData / "toy20.csv");
  const auto eff = io::parse_csv(io::read_file(path("eff") + "/unit_effects.csv").substr(
      io::read_file(path("eff") + "/unit_effects.csv").find("\nunit") + 1));
  ASSERT_EQ(eff.rows.size(), 20u);
  auto value = [&](std::size_t row, const std::string& col) { return std::stod(data.rows[row][data.column(col)]); };
  double ate_num = 0.0, ate_den = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    double base = j["mu"].get<double>();
    double treat = 0.0;
    std::map<std::string, double> v;
    for (const auto& g : j["gamma"]) {
      const std::string name = g["name"];
      v[name] = (value(i, name) - g["center"].get<double>()) / g["scale"].get<double>();
      base += g["coef"].get<double>() * v[name];
    }
    for (const auto& b : j["beta"]) {
      const std::string name = b["name"];
      const auto colon = name.find(':');
      treat += b["coef"].get<double>() * (colon == std::string::npos ? 1.0 : v[name.substr(colon + 1)]);
    }
    const double w1 = base + treat;
    const double expected = 50.0 * (std::clamp(w1, -1.0, 1.0) - std::clamp(base, -1.0, 1.0));
    EXPECT_NEAR(std::stod(eff.rows[i][1]), expected, 1e-9) << "unit " << i + 1;
    const int cte = ((w1 >= 0 ? 1 : -1) - (base >= 0 ? 1 : -1)) / 2;
    EXPECT_EQ(std::stoi(eff.rows[i][2]), cte);
    ate_num += value(i, "w") * expected;
    ate_den += value(i, "w");
  }
  const auto ranked_text = io::read_file(path("eff") + "/ranked_treatments.csv");
  const auto ranked = io::parse_csv(ranked_text.substr(ranked_text.find('\n') + 1));
  EXPECT_NEAR(std::stod(ranked.rows[0][2]), ate_num / ate_den, 1e-9);
}

TEST_F(CliTest, SearchedFitIsDeterministicAndManifestComplete) {
  ASSERT_EQ(cli({"fit", "--config", config(), "--out", path("a")}).code, kOk);
  ASSERT_EQ(cli({"fit", "--config", config(), "--out", path("b"), "--jobs", "4"}).code, kOk);
  for (const char* f : {"fit.json", "coefficients.csv", "gcv_trace.csv", "manifest.json"}) {
    EXPECT_EQ(io::read_file(path("a") + "/" + f), io::read_file(path("b") + "/" + f)) << f;
  }
  const auto m = io::Json::parse(io::read_file(path("a") + "/manifest.json"));
  EXPECT_EQ(m["version"], kVersion);
  EXPECT_EQ(m["config_hash"], sha256_hex(m["config"].dump()));
  EXPECT_EQ(m["outputs"]["fit.json"], sha256_hex(io::read_file(path("a") + "/fit.json")));
  EXPECT_TRUE(m["selected"].contains("gcv"));
  EXPECT_TRUE(m["selected"].contains("nonzero"));
  EXPECT_TRUE(m["selected"].contains("active"));
}

TEST_F(CliTest, DifferenceInMeansWithoutCovariates) {
  std::string csv = "y,t\n";
  // Treated 7/10, control 4/10.
  for (int i = 0; i < 10; ++i) csv += std::to_string(i < 7 ? 1 : 0) + ",1\n";
  for (int i = 0; i < 10; ++i) csv += std::to_string(i < 4 ? 1 : 0) + ",0\n";
  io::write_atomic(path("dim.csv"), csv);
  ASSERT_EQ(cli({"fit", "--data", path("dim.csv"), "--outcome", "y", "--treatment", "t", "--out", path("fit"),
                 "--log-lambda-z", std::to_string(std::log(1e-8)), "--log-lambda-v", "0"})
                .code,
            kOk);
  ASSERT_EQ(cli({"effects", "--data", path("dim.csv"), "--outcome", "y", "--treatment", "t", "--out", path("eff"),
                 "--fit", path("fit") + "/fit.json"})
                .code,
            kOk);
  const auto text = io::read_file(path("eff") + "/ranked_treatments.csv");
  const auto t = io::parse_csv(text.substr(text.find('\n') + 1));
  EXPECT_NEAR(std::stod(t.rows[0][2]), 30.0, 1e-4);
}

TEST_F(CliTest, FlagsOverrideConfig) {
  io::write_atomic(path("run.cfg"), "data = " + (kData / "toy20.csv").string() +
                                        "\noutcome = y\ntreatment = treat\ncovariates = age\ncovariates = score\n"
                                        "top = 2\nlog_lambda_z = -3\nlog_lambda_v = -3\n");
  ASSERT_EQ(cli({"fit", "--config", path("run.cfg"), "--out", path("fit")}).code, kOk);
  const auto m = io::Json::parse(io::read_file(path("fit") + "/manifest.json"));
  EXPECT_EQ(m["selected"]["log_lambda_z"], -3.0);
  ASSERT_EQ(cli({"fit", "--config", path("run.cfg"), "--out", path("fit2"), "--set", "log_lambda_z=-2"}).code, kOk);
  EXPECT_EQ(io::Json::parse(io::read_file(path("fit2") + "/manifest.json"))["selected"]["log_lambda_z"], -2.0);

  ASSERT_EQ(cli({"effects", "--config", path("run.cfg"), "--out", path("e2"), "--fit", path("fit") + "/fit.json"}).code, kOk);
  ASSERT_EQ(cli({"effects", "--config", path("run.cfg"), "--out", path("e4"), "--fit", path("fit") + "/fit.json",
                 "--top", "4"}).code, kOk);
  auto rows = [&](const std::string& d) {
    const auto text = io::read_file(path(d) + "/group_extremes.csv");
    return std::count(text.begin(), text.end(), '\n') - 3;  // two comments and the header
  };
  EXPECT_EQ(rows("e2"), 4);
  EXPECT_EQ(rows("e4"), 8);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(cli({}).code, kConfigError);
  EXPECT_EQ(cli({"bogus"}).code, kConfigError);
  EXPECT_EQ(cli({"--version"}).code, kOk);
  EXPECT_EQ(cli({"fit", "--config", config()}).code, kConfigError);  // no --out
  EXPECT_EQ(cli({"fit", "--config", config(), "--out", path("x"), "--covariates", "height"}).code, kConfigError);
  const auto bad_outcome = cli({"fit", "--config", config(), "--out", path("x"), "--outcome", "score"});
  EXPECT_EQ(bad_outcome.code, kDataError);
  EXPECT_NE(bad_outcome.err.find("'score', row 1"), std::string::npos) << bad_outcome.err;
  EXPECT_EQ(cli({"fit", "--data", path("none.csv"), "--outcome", "y", "--treatment", "t", "--out", path("x")}).code,
            kDataError);
  EXPECT_EQ(cli({"fit", "--config", config(), "--out", path("x"), "--grid", "1:0"}).code, kConfigError);
  EXPECT_EQ(cli({"simulate", "--out", path("x"), "--scenario", "scenario2"}).code, kConfigError);
  EXPECT_EQ(cli({"simulate", "--out", path("x"), "--seed", "1", "--scenario", "scenario7"}).code, kConfigError);
  EXPECT_EQ(cli({"payoff", "--out", path("x"), "--seed", "-4"}).code, kConfigError);

  ASSERT_EQ(cli({"fit", "--config", config(), "--out", path("fit"), "--log-lambda-z", "-3", "--log-lambda-v", "-3"}).code, kOk);
  const auto mismatch = cli({"effects", "--config", config(), "--out", path("e"), "--fit", path("fit") + "/fit.json",
                             "--covariates", "age"});
  EXPECT_EQ(mismatch.code, kDataError);
  io::write_atomic(path("broken.json"), "{ not json");
  EXPECT_EQ(cli({"effects", "--config", config(), "--out", path("e"), "--fit", path("broken.json")}).code, kDataError);
  EXPECT_FALSE(std::filesystem::exists(path("e")));

  EXPECT_FALSE(detail::too_many_failures(10, 100));
  EXPECT_TRUE(detail::too_many_failures(11, 100));
}

TEST_F(CliTest, SimulateIsIdenticalAcrossJobsAndRepeats) {
  std::vector<std::string> base{"simulate", "--scenario", "all", "--sizes", "250", "--replicates", "2",
                                "--seed", "3", "--eval-n", "300", "--calibration-draws", "50000",
                                "--grid=-6:2:2", "--precision", "0.5"};
  auto with = [&](const std::string& out, const std::string& jobs) {
    auto args = base;
    args.insert(args.end(), {"--out", path(out), "--jobs", jobs});
    return cli(args);
  };
  ASSERT_EQ(with("j1", "1").code, kOk);
  ASSERT_EQ(with("j1b", "1").code, kOk);
  ASSERT_EQ(with("j2", "2").code, kOk);
  for (const char* f : {"scenarios.csv", "replicates.csv", "fdr_dr.csv", "payoff.csv", "curves.csv", "manifest.json"}) {
    const auto a = io::read_file(path("j1") + "/" + f);
    EXPECT_EQ(a, io::read_file(path("j1b") + "/" + f)) << f;
    EXPECT_EQ(a, io::read_file(path("j2") + "/" + f)) << f;
  }
  const auto m = io::Json::parse(io::read_file(path("j1") + "/manifest.json"));
  EXPECT_EQ(m["seed"], 3);

  const auto p = cli({"payoff", "--sizes", "60", "--replicates", "1", "--seed", "3", "--eval-n", "100",
                      "--calibration-draws", "20000", "--grid=-4:0:2", "--out", path("p")});
  EXPECT_EQ(p.code, kOk);
  EXPECT_NE(p.err.find("outside"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(path("p") + "/fdr_dr.csv"));
  EXPECT_TRUE(std::filesystem::exists(path("p") + "/payoff.csv"));
}

}  // namespace
}  // namespace hetsvm::cli
