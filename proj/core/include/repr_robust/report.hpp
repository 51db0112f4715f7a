#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace repr_robust {

// Measures of one encoder from one run, keyed by column name. Parametrized
// measures carry their setting after '@', e.g.
// "universal_quantile_median@eps=0.05,it=5" or "impersonation_rate@it=5".
struct RunMeasures {
  std::string encoder_id;
  std::optional<std::string> divergence;  // unset for divergence-free runs (probe)
  std::map<std::string, double> values;

  bool operator==(const RunMeasures&) const = default;
};

void to_json(nlohmann::json& j, const RunMeasures& r);
void from_json(const nlohmann::json& j, RunMeasures& r);

// Column families in table order. A family without '@' settings is a single
// column; the others expand to one column per setting seen, sorted with
// numbers compared by value.
const std::vector<std::string>& report_families();

struct Report {
  std::optional<std::string> divergence;
  std::vector<std::string> columns;  // "encoder_id" first
  std::vector<std::string> encoders;  // first-seen order
  std::map<std::string, std::map<std::string, double>> cells;  // encoder -> column -> value
};

// Merges runs by encoder id. Errors: no runs, mixed divergence kinds, unknown
// measure names, or one measure reported twice with different values.
Report build_report(const std::vector<RunMeasures>& runs);

// One row per encoder, empty cells for missing measures.
std::string wide_csv(const Report& r);
// One row per (encoder, measure) present.
std::string long_csv(const Report& r);

// Shortest round-trip decimal form.
std::string format_number(double v);

}  // namespace repr_robust
