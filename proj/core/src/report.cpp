#include "repr_robust/report.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "repr_robust/error.hpp"

namespace repr_robust {

void to_json(nlohmann::json& j, const RunMeasures& r) {
  j = {{"encoder_id", r.encoder_id}, {"measures", r.values}};
  j["divergence"] = r.divergence ? nlohmann::json(*r.divergence) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, RunMeasures& r) {
  r.encoder_id = j.at("encoder_id").get<std::string>();
  r.divergence.reset();
  if (j.contains("divergence") && !j.at("divergence").is_null()) r.divergence = j.at("divergence").get<std::string>();
  r.values = j.at("measures").get<std::map<std::string, double>>();
}

const std::vector<std::string>& report_families() {
  static const std::vector<std::string> families{
      "standard_top1",  "standard_top5",          "lowpass_top1",           "lowpass_top5",
      "lowpass_gap",    "universal_quantile_median", "relative_quantile_median", "breakaway_risk",
      "nn_accuracy",    "overlap_risk",           "median_margin",          "average_certified_radius",
      "impersonation_rate"};
  return families;
}

namespace {

std::string family_of(const std::string& column) { return column.substr(0, column.find('@')); }

// Orders "eps=0.05,it=5" before "eps=0.05,it=10": numeric runs compare by value.
bool natural_less(const std::string& a, const std::string& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const bool da = std::isdigit(static_cast<unsigned char>(a[i])), db = std::isdigit(static_cast<unsigned char>(b[j]));
    if (da && db) {
      double x = 0, y = 0;
      const auto ra = std::from_chars(a.data() + i, a.data() + a.size(), x);
      const auto rb = std::from_chars(b.data() + j, b.data() + b.size(), y);
      if (x != y) return x < y;
      i = static_cast<std::size_t>(ra.ptr - a.data());
      j = static_cast<std::size_t>(rb.ptr - b.data());
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i, ++j;
    }
  }
  return a.size() - i < b.size() - j;
}

}  // namespace

Report build_report(const std::vector<RunMeasures>& runs) {
  if (runs.empty()) throw DomainError("report: no results to report");
  Report r;
  const auto& families = report_families();
  std::map<std::string, std::vector<std::string>> settings;  // family -> columns
  for (const auto& run : runs) {
    if (run.encoder_id.empty()) throw DomainError("report: run without encoder id");
    if (run.divergence) {
      if (r.divergence && *r.divergence != *run.divergence) {
        throw DomainError("report: mixed divergence kinds (" + *r.divergence + " and " + *run.divergence +
                          ") are not comparable in one table");
      }
      r.divergence = run.divergence;
    }
    if (std::find(r.encoders.begin(), r.encoders.end(), run.encoder_id) == r.encoders.end()) {
      r.encoders.push_back(run.encoder_id);
    }
    auto& row = r.cells[run.encoder_id];
    for (const auto& [name, value] : run.values) {
      const std::string fam = family_of(name);
      if (std::find(families.begin(), families.end(), fam) == families.end()) {
        throw DomainError("report: unknown measure '" + name + "'");
      }
      if (const auto it = row.find(name); it != row.end() && it->second != value) {
        throw DomainError("report: conflicting values for " + name + " of encoder " + run.encoder_id);
      }
      row[name] = value;
      auto& cols = settings[fam];
      if (std::find(cols.begin(), cols.end(), name) == cols.end()) cols.push_back(name);
    }
  }
  r.columns.push_back("encoder_id");
  for (const auto& fam : families) {
    auto it = settings.find(fam);
    if (it == settings.end()) continue;
    std::sort(it->second.begin(), it->second.end(), natural_less);
    r.columns.insert(r.columns.end(), it->second.begin(), it->second.end());
  }
  return r;
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string quoted(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string wide_csv(const Report& r) {
  std::ostringstream os;
  for (std::size_t c = 0; c < r.columns.size(); ++c) os << (c ? "," : "") << quoted(r.columns[c]);
  os << '\n';
  for (const auto& e : r.encoders) {
    os << quoted(e);
    const auto& row = r.cells.at(e);
    for (std::size_t c = 1; c < r.columns.size(); ++c) {
      os << ',';
      if (const auto it = row.find(r.columns[c]); it != row.end()) os << format_number(it->second);
    }
    os << '\n';
  }
  return os.str();
}

std::string long_csv(const Report& r) {
  std::ostringstream os;
  os << "encoder_id,measure,value\n";
  for (const auto& e : r.encoders) {
    const auto& row = r.cells.at(e);
    for (std::size_t c = 1; c < r.columns.size(); ++c) {
      if (const auto it = row.find(r.columns[c]); it != row.end()) {
        os << quoted(e) << ',' << quoted(r.columns[c]) << ',' << format_number(it->second) << '\n';
      }
    }
  }
  return os.str();
}

}  // namespace repr_robust
