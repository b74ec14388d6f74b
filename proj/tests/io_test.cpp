#include "hetsvm/io.hpp"

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace hetsvm::io {
namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

TEST(Csv, QuotesBomAndLineEndings) {
  const auto t = parse_csv("\xEF\xBB\xBFname,note\r\n\"a, b\",\"say \"\"hi\"\"\"\r\n\nc,\n");
  ASSERT_EQ(t.header, (std::vector<std::string>{"name", "note"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], "a, b");
  EXPECT_EQ(t.rows[0][1], "say \"hi\"");
  EXPECT_EQ(t.rows[1][1], "");
  EXPECT_EQ(t.column("note"), 1);
  EXPECT_THROW(t.column("missing"), ConfigError);
}

TEST(Csv, RaggedRowsAndBadQuotes) {
  EXPECT_NE(error_of([] { parse_csv("a,b\n1,2\n3\n"); }).find("line 3"), std::string::npos);
  EXPECT_THROW(parse_csv("a,b\n\"1,2\n"), DataError);
  EXPECT_THROW(parse_csv(""), DataError);
}

TEST(Csv, WriterRoundTrips) {
  CsvWriter w({"x", "y"}, {"a comment"});
  w.row({"plain", "with,comma"});
  w.row({"quote\"d", ""});
  const std::string text = w.str();
  EXPECT_EQ(text.rfind("# a comment\n", 0), 0u);
  const auto t = parse_csv(text.substr(text.find('\n') + 1));
  EXPECT_EQ(t.rows[0][1], "with,comma");
  EXPECT_EQ(t.rows[1][0], "quote\"d");
}

TEST(Format, SpecialValues) {
  EXPECT_EQ(fmt(std::nan("")), "NA");
  EXPECT_EQ(fmt(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(fmt(-0.0), "0");
  EXPECT_EQ(fmt(0.1), "0.1");
  EXPECT_EQ(fmt(1.0 / 3.0), "0.333333333333");
}

TEST(KeyValue, CommentsRepeatsAndLists) {
  const auto cfg = KeyValueConfig::parse(
      "# header\noutcome = y   # trailing\ncovariates = a, b\ncovariates = c\n\nempty =\n");
  EXPECT_EQ(cfg.get("outcome"), "y");
  EXPECT_EQ(cfg.list("covariates"), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_THROW(cfg.get("covariates"), ConfigError);
  EXPECT_EQ(cfg.get("empty"), "");
  EXPECT_EQ(cfg.get("absent", "fallback"), "fallback");
  EXPECT_NE(error_of([] { KeyValueConfig::parse("a = 1\nnot a pair\n", "run.cfg"); }).find("run.cfg:2"),
            std::string::npos);
  EXPECT_THROW(KeyValueConfig::parse("= 3\n"), ConfigError);
}

TEST(DataSpec, DefaultsAndValidation) {
  auto spec = DataSpec::from_config(KeyValueConfig::parse("outcome=y\ntreatment=a,b\n"));
  EXPECT_EQ(spec.design, DesignKind::kFactorial);
  EXPECT_EQ(spec.baseline, (std::vector<std::string>{"0", "0"}));
  spec = DataSpec::from_config(KeyValueConfig::parse("outcome=y\ntreatment=t\nderived=square:x\n"));
  EXPECT_EQ(spec.design, DesignKind::kInteraction);
  EXPECT_EQ(spec.derived.size(), 1u);
  EXPECT_THROW(DataSpec::from_config(KeyValueConfig::parse("treatment=t\n")), ConfigError);
  EXPECT_THROW(DataSpec::from_config(KeyValueConfig::parse("outcome=y\ntreatment=t\ndesign=other\n")),
               ConfigError);
}

TEST(ToDataset, ErrorsNameColumnAndRow) {
  const auto spec = DataSpec::from_config(KeyValueConfig::parse("outcome=y\ntreatment=t\ncovariates=x\nweights=w\n"));
  const auto ok = to_dataset(parse_csv("y,t,x,w\n1,1,0.5,2\n0,0,-1,1\n"), spec);
  EXPECT_EQ(ok.rows(), 2);
  EXPECT_EQ(ok.covariates(1, 0), -1.0);
  EXPECT_EQ((*ok.weights)[0], 2.0);

  const auto bad_x = error_of([&] { to_dataset(parse_csv("y,t,x,w\n1,1,0.5,2\n0,0,abc,1\n"), spec); });
  EXPECT_NE(bad_x.find("'x', row 2"), std::string::npos) << bad_x;
  EXPECT_THROW(to_dataset(parse_csv("y,t,x,w\n2,1,0.5,2\n"), spec), DataError);
  EXPECT_THROW(to_dataset(parse_csv("y,t,x,w\n1,1,0.5,0\n"), spec), DataError);
  EXPECT_THROW(to_dataset(parse_csv("y,t,x,w\n1,1,nan,1\n"), spec), DataError);
  EXPECT_THROW(to_dataset(parse_csv("y,t,w\n1,1,1\n"), spec), ConfigError);
}

TEST(FitJson, RoundTripRestoresCoefficientsAndMargins) {
  const auto d = testing::synthetic_factorial(120, 3, 2, 5, 0.3, 0.3);
  const auto f = fit(d, PenaltyPair::from_log(-4, -3));
  ASSERT_GT(f.nonzero_count(), 0);
  const Json j = Json::parse(fit_to_json(f, d).dump());
  const auto g = fit_from_json(j, d);
  EXPECT_EQ(g.mu, f.mu);
  EXPECT_EQ(g.beta, f.beta);
  EXPECT_EQ(g.gamma_tilde, f.gamma_tilde);
  EXPECT_LT((g.margins - f.margins).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(j["beta"][0]["name"], d.z_meta[0].name);

  const auto other = testing::synthetic_factorial(120, 2, 2, 5);
  EXPECT_THROW(fit_from_json(j, other), DataError);
  Json renamed = j;
  renamed["gamma"][0]["name"] = "other";
  EXPECT_THROW(fit_from_json(renamed, d), DataError);
  Json truncated = j;
  truncated.erase("mu");
  EXPECT_THROW(fit_from_json(truncated, d), DataError);
}

TEST(WriteAtomic, ReplacesWithoutLeftovers) {
  const auto dir = std::filesystem::temp_directory_path() / "hetsvm_io_test";
  std::filesystem::remove_all(dir);
  const auto path = dir / "sub" / "out.csv";
  write_atomic(path, "first\n");
  write_atomic(path, "second\n");
  EXPECT_EQ(read_file(path), "second\n");
  int entries = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir / "sub")) ++entries;
  EXPECT_EQ(entries, 1);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(read_file(path), DataError);
}

}  // namespace
}  // namespace hetsvm::io
