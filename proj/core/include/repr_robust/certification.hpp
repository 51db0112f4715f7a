#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "repr_robust/measures.hpp"
#include "repr_robust/model.hpp"

namespace repr_robust {

// Standard normal quantile: Acklam's rational approximation refined by one
// Halley step against erfc; absolute error below 1e-9 on (0, 1).
double normal_quantile(double p);

// One-sided Clopper-Pearson lower bound on a binomial proportion after
// `successes` out of `trials`: the p solving P[Bin(trials, p) >= successes] = alpha,
// found by bisection on the regularized incomplete beta function to 1e-12.
// Returns 0 for zero successes.
double clopper_pearson_lower(std::uint64_t successes, std::uint64_t trials, double alpha);

struct SmoothingConfig {
  double sigma = 0.25;
  std::size_t n0 = 100;
  std::size_t n = 100000;
  double alpha = 0.001;   // classifier certification
  double alpha1 = 0.005;  // center smoothing, phase 1
  double alpha2 = 0.005;  // center smoothing, phase 2
  std::uint64_t seed = 0;
  std::size_t batch = 256;

  void validate() const;
};

void to_json(nlohmann::json& j, const SmoothingConfig& c);
void from_json(const nlohmann::json& j, SmoothingConfig& c);

SmoothingConfig default_classifier_smoothing();
SmoothingConfig default_center_smoothing();

enum class CertificationKind { Classifier, Encoder };

struct CertificationResult {
  CertificationKind kind = CertificationKind::Classifier;
  int prediction = -1;   // classifier
  Tensor center;         // encoder
  std::optional<double> radius;  // absent when abstaining
  bool abstain = true;
  double p_lower = 0.0;  // classifier: bound on P[class]; encoder: bound on the ball mass
  std::optional<double> radius_quantile;  // encoder radius as a universal quantile
  SmoothingConfig config;
};

void to_json(nlohmann::json& j, const CertificationResult& r);

// Radius rule of randomized smoothing: abstain (nullopt) when p_lower <= 1/2,
// else sigma * Phi^-1(p_lower).
std::optional<double> smoothing_radius(double p_lower, double sigma);

// Class labels for a batch of (possibly out-of-range) noisy inputs [m, d].
using BatchClassifier = std::function<std::vector<int>(const Tensor& batch)>;
// Representations for a batch of noisy inputs [m, d] -> [m, k].
using BatchMap = std::function<Tensor(const Tensor& batch)>;

// Gaussian noise for sample j of a phase comes from the stream
// derive_seed(seed, phase, j), so results do not depend on batching or workers.
Tensor noisy_copies(const Tensor& x, double sigma, std::uint64_t seed, const char* phase, std::size_t first,
                    std::size_t count);

// Randomized smoothing certificate of g at x [d]: n0 draws select the class,
// n draws bound its probability at level alpha.
CertificationResult certify_classifier(const BatchClassifier& g, const Tensor& x, const SmoothingConfig& cfg,
                                       std::size_t num_classes, std::size_t workers = 1);

// Class counts of g under n Gaussian draws (the smoothed prediction at high n).
std::vector<std::uint64_t> smoothed_counts(const BatchClassifier& g, const Tensor& x, double sigma,
                                           std::size_t n, std::uint64_t seed, std::size_t num_classes,
                                           std::size_t workers = 1, const char* phase = "estimation");

// Center smoothing. Phase 1 draws n0 outputs and takes as center the output
// whose ceil(n0/2)-th nearest output (itself included) is closest. Phase 2
// draws n outputs, sorts their l2 distances to the center and returns the
// smallest order statistic d_(k) whose Clopper-Pearson lower bound at alpha2
// reaches 1/2 + sqrt(ln(2/alpha1) / (2 n0)); abstains if none does.
// With `dist` given, the radius is also reported as a universal quantile.
CertificationResult center_smooth(const BatchMap& f, const Tensor& x, const SmoothingConfig& cfg,
                                  const DivergenceDistribution* dist = nullptr, std::size_t workers = 1);

// Adapters running the encoder (and a classifier head) on clip(noisy input).
BatchMap clipped_encoder_map(const RepresentationModel& f);

// Mean over all samples of the radius of correct, non-abstaining results
// (others count as 0). Throws DomainError for an empty set.
double average_certified_radius(std::span<const CertificationResult> results, std::span<const int> labels);

struct CurvePoint {
  double x = 0.0;
  double fraction = 0.0;
};

// Fraction of samples that are correct, non-abstaining and certified at
// radius >= r, for each r of the grid.
std::vector<CurvePoint> certified_accuracy_curve(std::span<const CertificationResult> results,
                                                 std::span<const int> labels, std::span<const double> radii);

// Fraction of non-abstaining encoder certificates whose radius quantile is <= q.
std::vector<CurvePoint> certified_quantile_curve(std::span<const CertificationResult> results,
                                                 std::span<const double> quantiles);

std::vector<double> linear_grid(double lo, double hi, std::size_t points);

}  // namespace repr_robust
