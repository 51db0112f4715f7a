#include <gtest/gtest.h>

#include "repr_robust/error.hpp"
#include "repr_robust/report.hpp"

using namespace repr_robust;

namespace {

RunMeasures full_run(const std::string& id, double base) {
  RunMeasures r{id, "l2", {}};
  r.values = {{"standard_top1", base},
              {"standard_top5", 1.0},
              {"lowpass_top1", base - 0.1},
              {"lowpass_top5", 0.9},
              {"lowpass_gap", 0.1},
              {"universal_quantile_median@eps=0.05,it=5", 0.02},
              {"universal_quantile_median@eps=0.05,it=10", 0.03},
              {"relative_quantile_median", 0.6},
              {"breakaway_risk", 0.25},
              {"nn_accuracy", 0.75},
              {"overlap_risk", 0.05},
              {"median_margin", 0.4},
              {"average_certified_radius", 0.3},
              {"impersonation_rate@it=5", 0.125}};
  return r;
}

}  // namespace

TEST(Report, FullRunColumnSchema) {
  const Report r = build_report({full_run("moco", 0.9)});
  const std::vector<std::string> expected{"encoder_id",
                                          "standard_top1",
                                          "standard_top5",
                                          "lowpass_top1",
                                          "lowpass_top5",
                                          "lowpass_gap",
                                          "universal_quantile_median@eps=0.05,it=5",
                                          "universal_quantile_median@eps=0.05,it=10",
                                          "relative_quantile_median",
                                          "breakaway_risk",
                                          "nn_accuracy",
                                          "overlap_risk",
                                          "median_margin",
                                          "average_certified_radius",
                                          "impersonation_rate@it=5"};
  EXPECT_EQ(r.columns, expected);
}

TEST(Report, SingleRunPassesThrough) {
  const RunMeasures run = full_run("moco", 0.9);
  const Report r = build_report({run});
  EXPECT_EQ(r.encoders, std::vector<std::string>{"moco"});
  EXPECT_EQ(r.cells.at("moco"), run.values);
  EXPECT_EQ(r.divergence, "l2");
  const std::string lc = long_csv(r);
  EXPECT_EQ(std::count(lc.begin(), lc.end(), '\n'), 1 + long(run.values.size()));
  EXPECT_NE(lc.find("moco,overlap_risk,0.05\n"), std::string::npos);
}

TEST(Report, MergesRunsPerEncoder) {
  RunMeasures probe{"a", std::nullopt, {{"standard_top1", 0.5}}};
  RunMeasures measure{"a", "l2", {{"overlap_risk", 0.25}}};
  RunMeasures other{"b", "l2", {{"overlap_risk", 0.125}}};
  const Report r = build_report({probe, measure, other});
  EXPECT_EQ(r.columns, (std::vector<std::string>{"encoder_id", "standard_top1", "overlap_risk"}));
  EXPECT_EQ(wide_csv(r), "encoder_id,standard_top1,overlap_risk\na,0.5,0.25\nb,,0.125\n");
  EXPECT_EQ(long_csv(r), "encoder_id,measure,value\na,standard_top1,0.5\na,overlap_risk,0.25\nb,overlap_risk,0.125\n");
}

TEST(Report, Errors) {
  EXPECT_THROW(build_report({}), DomainError);
  RunMeasures a{"a", "l2", {{"overlap_risk", 0.1}}};
  RunMeasures b{"b", "linf", {{"overlap_risk", 0.1}}};
  EXPECT_THROW(build_report({a, b}), DomainError);
  RunMeasures c{"a", "l2", {{"overlap_risk", 0.2}}};
  EXPECT_THROW(build_report({a, c}), DomainError);
  RunMeasures d{"a", "l2", {{"accuracy", 0.2}}};
  EXPECT_THROW(build_report({d}), DomainError);
}

TEST(Report, JsonRoundTripAndNumbers) {
  const RunMeasures r = full_run("x,y", 0.1 + 0.2);
  EXPECT_EQ(nlohmann::json(r).get<RunMeasures>(), r);
  EXPECT_EQ(format_number(0.1 + 0.2), "0.30000000000000004");
  EXPECT_EQ(wide_csv(build_report({r})).substr(wide_csv(build_report({r})).find('\n') + 1, 6), "\"x,y\",");
}
