#include <cmath>
#include <numbers>
#include <string>

#include <gtest/gtest.h>

#include "nlsob/experiment.hpp"

using namespace nlsob;

namespace {

// Key named by the first ConfigError from parsing the config and building its
// space and field, the checks a run performs before any estimate.
std::string config_error_field(const std::string& text, Experiment which) {
  try {
    const auto c = parse_experiment(KeyValueConfig::parse(text), which);
    build_field(c.field, build_space(c.space));
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

const char* kTentSweep =
    "space.kind = euclidean\n"
    "space.n = 1\n"
    "field.name = tent\n"
    "functional = I\n"
    "p = 2\n"
    "schedule = 0.2, 0.1, 0.05, 0.025\n"
    "method = deterministic\n"
    "seed = 1\n";

}  // namespace

TEST(Config, ParsesCommentsListsAndWhitespace) {
  const auto kv = KeyValueConfig::parse("# header\n  a = 1.5  # trailing\n\nb=1, 2 ,3\n");
  EXPECT_DOUBLE_EQ(kv.num("a", 0.0), 1.5);
  EXPECT_EQ(kv.list("b"), (std::vector<double>{1.0, 2.0, 3.0}));
}

TEST(Config, SyntaxErrors) {
  EXPECT_THROW(KeyValueConfig::parse("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse("just words\n"), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse(" = 3\n"), ConfigError);
}

TEST(Config, ErrorsNameTheOffendingKey) {
  const std::string base = kTentSweep;
  EXPECT_EQ(config_error_field(base + "smaples = 100\n", Experiment::sweep), "smaples");
  EXPECT_EQ(config_error_field(base + "samples = many\n", Experiment::sweep), "samples");
  EXPECT_EQ(config_error_field(base + "batches = 10\n", Experiment::sweep), "batches");
  EXPECT_EQ(config_error_field(base + "field.wdith = 2\n", Experiment::sweep), "field.wdith");
  EXPECT_EQ(config_error_field(base + "p = 1\n", Experiment::sweep).empty(), false);
  EXPECT_EQ(config_error_field(base + "experiment = blowup\n", Experiment::sweep), "experiment");
  std::string bad = kTentSweep;
  bad.replace(bad.find("0.2, 0.1, 0.05, 0.025"), 21, "0.2, 0.05, 0.1");
  EXPECT_EQ(config_error_field(bad, Experiment::sweep), "schedule");
  std::string noseed = kTentSweep;
  noseed.erase(noseed.find("seed = 1\n"));
  EXPECT_EQ(config_error_field(noseed, Experiment::sweep), "seed");
}

TEST(Config, ScheduleInEitherDirection) {
  std::string up = kTentSweep;
  up.replace(up.find("0.2, 0.1, 0.05, 0.025"), 21, "0.025, 0.05, 0.1, 0.2");
  const auto c = parse_experiment(KeyValueConfig::parse(up), Experiment::sweep);
  EXPECT_EQ(c.schedule, (std::vector<double>{0.2, 0.1, 0.05, 0.025}));
  const auto g = parse_experiment(
      KeyValueConfig::parse("space.n = 1\nfield.name = linear\npoint = 0\nseed = 1\nschedule.start = 1\nschedule.count = 3\n"),
      Experiment::blowup);
  EXPECT_EQ(g.schedule, (std::vector<double>{1.0, 0.5, 0.25}));
}

TEST(Csv, HeaderAndShortestNumbers) {
  RunReport rep;
  rep.rows.push_back({0.1, 1.0 / 3.0, 0.0, 42, "deterministic", std::nullopt});
  EXPECT_EQ(to_csv(rep), "delta,value,std_error,n_samples,method\n0.1,0.3333333333333333,0,42,deterministic\n");
  rep.target_column = true;
  rep.rows[0].target = 0.5;
  EXPECT_EQ(to_csv(rep),
            "delta,value,std_error,n_samples,method,target\n0.1,0.3333333333333333,0,42,deterministic,0.5\n");
}

TEST(Run, ConstantsPiPasses) {
  const auto c = parse_experiment(KeyValueConfig::parse("branch = euclidean\nn = 2\np = 2\n"), Experiment::constants);
  const auto rep = run(c);
  ASSERT_TRUE(rep.verdict);
  EXPECT_TRUE(*rep.verdict);
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_NEAR(rep.rows[0].value, std::numbers::pi, 1e-8);
}

TEST(Run, TentSweepReachesOne) {
  const auto rep = run(parse_experiment(KeyValueConfig::parse(std::string(kTentSweep) + "tolerance = 0.05\n"),
                                        Experiment::sweep));
  ASSERT_TRUE(rep.verdict);
  EXPECT_TRUE(*rep.verdict) << rep.summary;
  EXPECT_EQ(rep.rows.size(), 4u);
  const double limit = rep.results["fit"]["intercept"].get<double>();
  EXPECT_NEAR(limit, 1.0, 0.05);
}

TEST(Run, WrongTargetFails) {
  const auto rep = run(parse_experiment(
      KeyValueConfig::parse(std::string(kTentSweep) + "target = 1.5\ntolerance = 0.02\n"), Experiment::sweep));
  ASSERT_TRUE(rep.verdict);
  EXPECT_FALSE(*rep.verdict);
}

TEST(Run, SupProfileOfZeroFieldIsZero) {
  const auto rep = run(parse_experiment(
      KeyValueConfig::parse("space.n = 1\nfield.name = constant\nfield.value = 0\nschedule = 0.5, 0.1\nseed = 1\n"),
      Experiment::sup_profile));
  for (const auto& r : rep.rows) EXPECT_EQ(r.value, 0.0);
}

TEST(Run, MollifiedStepProfileGrowsAsWidthShrinks) {
  // The sup profile is bounded for a fixed Lipschitz field; narrowing the
  // transition raises it, the behavior expected when f leaves W^{1,p}.
  auto profile_max = [](double width) {
    const std::string text = "space.n = 1\nfield.name = mollified-step\nfield.half_length = 1\nfield.width = " +
                             std::to_string(width) + "\nschedule = 0.9, 0.5, 0.1, 0.05\nseed = 1\n";
    const auto rep = run(parse_experiment(KeyValueConfig::parse(text), Experiment::sup_profile));
    double m = 0.0;
    for (const auto& r : rep.rows) m = std::max(m, r.value);
    return m;
  };
  const double a = profile_max(0.4);
  const double b = profile_max(0.1);
  const double c = profile_max(0.025);
  EXPECT_GT(b, a);
  EXPECT_GT(c, b);
}

TEST(Run, PointDimensionMismatchIsConfigError) {
  const auto c = parse_experiment(
      KeyValueConfig::parse("space.n = 2\nfield.name = linear\nfield.slope = 1, 0\npoint = 0\nseed = 1\n"
                            "schedule = 0.1, 0.05\n"),
      Experiment::blowup);
  EXPECT_THROW(run(c), ConfigError);
}
