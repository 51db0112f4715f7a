#include "repr_robust/certification.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/special_functions/beta.hpp>

#include "repr_robust/attack.hpp"
#include "repr_robust/error.hpp"
#include "repr_robust/parallel.hpp"
#include "repr_robust/random.hpp"

namespace repr_robust {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must lie in (0, 1)");
  if (p > 0.5) return -normal_quantile(1.0 - p);

  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  double x;
  if (p < 0.02425) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  // Halley refinement.
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

double clopper_pearson_lower(std::uint64_t successes, std::uint64_t trials, double alpha) {
  if (trials == 0 || successes > trials) throw DomainError("clopper_pearson_lower: need 0 <= successes <= trials, trials > 0");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("clopper_pearson_lower: alpha must lie in (0, 1)");
  if (successes == 0) return 0.0;
  const double a = static_cast<double>(successes);
  const double b = static_cast<double>(trials - successes) + 1.0;
  // P[X >= successes | p] = I_p(a, b), increasing in p.
  double lo = 0.0, hi = 1.0;
  while (hi - lo > 1e-12) {
    const double mid = lo + (hi - lo) / 2.0;
    if (boost::math::ibeta(a, b, mid) > alpha) hi = mid;
    else lo = mid;
  }
  return lo;
}

void SmoothingConfig::validate() const {
  if (!(sigma > 0.0)) throw DomainError("smoothing config: sigma must be positive");
  if (n0 < 1 || n < 1) throw DomainError("smoothing config: n0 and n must be >= 1");
  for (double a : {alpha, alpha1, alpha2}) {
    if (!(a > 0.0 && a < 0.5)) throw DomainError("smoothing config: error probabilities must lie in (0, 0.5)");
  }
  if (batch < 1) throw DomainError("smoothing config: batch must be >= 1");
}

void to_json(nlohmann::json& j, const SmoothingConfig& c) {
  j = nlohmann::json{{"sigma", c.sigma},   {"n0", c.n0},         {"n", c.n},       {"alpha", c.alpha},
                     {"alpha1", c.alpha1}, {"alpha2", c.alpha2}, {"seed", c.seed}, {"batch", c.batch}};
}

void from_json(const nlohmann::json& j, SmoothingConfig& c) {
  const SmoothingConfig d;
  c.sigma = j.value("sigma", d.sigma);
  c.n0 = j.value("n0", d.n0);
  c.n = j.value("n", d.n);
  c.alpha = j.value("alpha", d.alpha);
  c.alpha1 = j.value("alpha1", d.alpha1);
  c.alpha2 = j.value("alpha2", d.alpha2);
  c.seed = j.value("seed", d.seed);
  c.batch = j.value("batch", d.batch);
}

SmoothingConfig default_classifier_smoothing() { return SmoothingConfig{}; }

SmoothingConfig default_center_smoothing() {
  SmoothingConfig c;
  c.n0 = 10000;
  c.n = 100000;
  return c;
}

void to_json(nlohmann::json& j, const CertificationResult& r) {
  j = nlohmann::json{{"kind", r.kind == CertificationKind::Classifier ? "classifier" : "encoder"},
                     {"abstain", r.abstain},
                     {"p_lower", r.p_lower},
                     {"config", r.config}};
  j["radius"] = r.radius ? nlohmann::json(*r.radius) : nlohmann::json(nullptr);
  if (r.kind == CertificationKind::Classifier) {
    j["prediction"] = r.prediction;
  } else {
    j["center"] = r.center.values();
    j["radius_quantile"] = r.radius_quantile ? nlohmann::json(*r.radius_quantile) : nlohmann::json(nullptr);
  }
}

std::optional<double> smoothing_radius(double p_lower, double sigma) {
  if (p_lower <= 0.5) return std::nullopt;
  if (p_lower >= 1.0) throw DomainError("smoothing_radius: lower bound must be below 1");
  return sigma * normal_quantile(p_lower);
}

Tensor noisy_copies(const Tensor& x, double sigma, std::uint64_t seed, const char* phase, std::size_t first,
                    std::size_t count) {
  const std::size_t d = x.size();
  Tensor out({count, d});
  for (std::size_t r = 0; r < count; ++r) {
    Rng rng(derive_seed(seed, phase, first + r));
    auto row = out.row_span(r);
    for (std::size_t i = 0; i < d; ++i) row[i] = x[i] + sigma * rng.normal();
  }
  return out;
}

namespace {

std::size_t batches(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

// Runs `map` on all n noisy copies of a phase, concatenating the rows.
Tensor map_noisy(const BatchMap& f, const Tensor& x, const SmoothingConfig& cfg, const char* phase, std::size_t n,
                 std::size_t workers) {
  std::vector<Tensor> parts(batches(n, cfg.batch));
  parallel_for(workers, parts.size(), [&](std::size_t b) {
    const std::size_t lo = b * cfg.batch, cnt = std::min(cfg.batch, n - lo);
    parts[b] = f(noisy_copies(x, cfg.sigma, cfg.seed, phase, lo, cnt));
    if (parts[b].rank() != 2 || parts[b].dim(0) != cnt) {
      throw ShapeError("center_smooth: map returned " + to_string(parts[b].shape()) + " for " + std::to_string(cnt) +
                       " inputs");
    }
  });
  const std::size_t k = parts.front().dim(1);
  Tensor out({n, k});
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(at));
    at += p.size();
  }
  return out;
}

double l2_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double s = 0.0;
  auto ra = a.row_span(i), rb = b.row_span(j);
  for (std::size_t t = 0; t < ra.size(); ++t) s += (ra[t] - rb[t]) * (ra[t] - rb[t]);
  return std::sqrt(s);
}

}  // namespace

std::vector<std::uint64_t> smoothed_counts(const BatchClassifier& g, const Tensor& x, double sigma, std::size_t n,
                                           std::uint64_t seed, std::size_t num_classes, std::size_t workers,
                                           const char* phase) {
  constexpr std::size_t kBatch = 256;
  std::vector<std::vector<std::uint64_t>> partial(batches(n, kBatch), std::vector<std::uint64_t>(num_classes));
  parallel_for(workers, partial.size(), [&](std::size_t b) {
    const std::size_t lo = b * kBatch, cnt = std::min(kBatch, n - lo);
    const auto labels = g(noisy_copies(x, sigma, seed, phase, lo, cnt));
    if (labels.size() != cnt) throw ShapeError("smoothing: classifier returned the wrong number of labels");
    for (int c : labels) {
      if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
        throw DomainError("smoothing: classifier returned label " + std::to_string(c) + " outside [0, " +
                          std::to_string(num_classes) + ")");
      }
      ++partial[b][static_cast<std::size_t>(c)];
    }
  });
  std::vector<std::uint64_t> counts(num_classes);
  for (const auto& p : partial) {
    for (std::size_t c = 0; c < num_classes; ++c) counts[c] += p[c];
  }
  return counts;
}

CertificationResult certify_classifier(const BatchClassifier& g, const Tensor& x, const SmoothingConfig& cfg,
                                       std::size_t num_classes, std::size_t workers) {
  cfg.validate();
  if (num_classes < 1) throw DomainError("certify_classifier: need at least one class");
  const auto selection = smoothed_counts(g, x, cfg.sigma, cfg.n0, cfg.seed, num_classes, workers, "selection");
  const auto top = static_cast<std::size_t>(std::max_element(selection.begin(), selection.end()) - selection.begin());
  const auto estimation = smoothed_counts(g, x, cfg.sigma, cfg.n, cfg.seed, num_classes, workers, "estimation");

  CertificationResult r;
  r.kind = CertificationKind::Classifier;
  r.config = cfg;
  r.p_lower = clopper_pearson_lower(estimation[top], cfg.n, cfg.alpha);
  r.radius = smoothing_radius(r.p_lower, cfg.sigma);
  r.abstain = !r.radius.has_value();
  r.prediction = r.abstain ? -1 : static_cast<int>(top);
  return r;
}

CertificationResult center_smooth(const BatchMap& f, const Tensor& x, const SmoothingConfig& cfg,
                                  const DivergenceDistribution* dist, std::size_t workers) {
  cfg.validate();
  if (dist != nullptr && dist->divergence.kind != DivergenceKind::L2) {
    throw DomainError("center_smooth: radii are l2 and need an l2 divergence distribution");
  }
  CertificationResult r;
  r.kind = CertificationKind::Encoder;
  r.config = cfg;

  const Tensor z0 = map_noisy(f, x, cfg, "selection", cfg.n0, workers);
  const std::size_t n0 = cfg.n0;
  const std::size_t half = (n0 + 1) / 2;  // ceil(n0 / 2), counting the point itself
  std::vector<double> enclosing(n0);
  parallel_for(workers, n0, [&](std::size_t i) {
    std::vector<double> dists(n0);
    for (std::size_t j = 0; j < n0; ++j) dists[j] = l2_rows(z0, i, z0, j);
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(half - 1), dists.end());
    enclosing[i] = dists[half - 1];
  });
  const auto best = static_cast<std::size_t>(std::min_element(enclosing.begin(), enclosing.end()) - enclosing.begin());
  r.center = z0.row(best);

  const double target = 0.5 + std::sqrt(std::log(2.0 / cfg.alpha1) / (2.0 * static_cast<double>(n0)));
  const Tensor z = map_noisy(f, x, cfg, "estimation", cfg.n, workers);
  const Tensor center = r.center.reshaped({1, r.center.size()});
  std::vector<double> dists(cfg.n);
  for (std::size_t j = 0; j < cfg.n; ++j) dists[j] = l2_rows(z, j, center, 0);
  std::sort(dists.begin(), dists.end());

  if (target < 1.0 && clopper_pearson_lower(cfg.n, cfg.n, cfg.alpha2) >= target) {
    std::size_t lo = 1, hi = cfg.n;  // smallest k with bound(k) >= target
    while (lo < hi) {
      const std::size_t mid = lo + (hi - lo) / 2;
      if (clopper_pearson_lower(mid, cfg.n, cfg.alpha2) >= target) hi = mid;
      else lo = mid + 1;
    }
    r.p_lower = clopper_pearson_lower(lo, cfg.n, cfg.alpha2);
    r.radius = dists[lo - 1];
    r.abstain = false;
    if (dist != nullptr) r.radius_quantile = dist->quantile(*r.radius);
  }
  return r;
}

BatchMap clipped_encoder_map(const RepresentationModel& f) {
  return [&f](const Tensor& batch) { return f.evaluate(clip(batch)); };
}

double average_certified_radius(std::span<const CertificationResult> results, std::span<const int> labels) {
  if (results.empty()) throw DomainError("average certified radius of an empty evaluation set");
  if (results.size() != labels.size()) throw ShapeError("average certified radius: results and labels differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (!r.abstain && r.radius && r.prediction == labels[i]) total += *r.radius;
  }
  return total / static_cast<double>(results.size());
}

std::vector<CurvePoint> certified_accuracy_curve(std::span<const CertificationResult> results,
                                                 std::span<const int> labels, std::span<const double> radii) {
  if (results.empty()) throw DomainError("certified accuracy curve of an empty evaluation set");
  if (results.size() != labels.size()) throw ShapeError("certified accuracy curve: results and labels differ in length");
  std::vector<CurvePoint> out;
  for (double rad : radii) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      ok += !r.abstain && r.radius && r.prediction == labels[i] && *r.radius >= rad;
    }
    out.push_back({rad, static_cast<double>(ok) / static_cast<double>(results.size())});
  }
  return out;
}

std::vector<CurvePoint> certified_quantile_curve(std::span<const CertificationResult> results,
                                                 std::span<const double> quantiles) {
  if (results.empty()) throw DomainError("certified quantile curve of an empty evaluation set");
  std::vector<CurvePoint> out;
  for (double q : quantiles) {
    std::size_t within = 0;
    for (const auto& r : results) within += !r.abstain && r.radius_quantile && *r.radius_quantile <= q;
    out.push_back({q, static_cast<double>(within) / static_cast<double>(results.size())});
  }
  return out;
}

std::vector<double> linear_grid(double lo, double hi, std::size_t points) {
  if (points < 2) return {lo};
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i) g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  return g;
}

}  // namespace repr_robust
