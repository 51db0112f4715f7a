#include <algorithm>
#include <cmath>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <gtest/gtest.h>

#include "repr_robust/certification.hpp"
#include "repr_robust/error.hpp"
#include "test_support.hpp"

using namespace repr_robust;
using namespace test_support;

namespace {

// Reference values of Phi^-1 computed with 40-digit arithmetic.
const std::pair<double, double> kQuantileTable[] = {
    {1e-12, -7.034483825301131929809515}, {1e-9, -5.99780701500768687156231},
    {1e-6, -4.753424308822898948193988},  {0.0001, -3.719016485455680564393661},
    {0.001, -3.0902323061678135415404},   {0.01, -2.326347874040841100885606},
    {0.02425, -1.972961051311884850269799}, {0.05, -1.644853626951472714863849},
    {0.1, -1.281551565544600466965103},   {0.25, -0.674489750196081743202227},
    {0.4, -0.2533471031357997987981962},  {0.5, 0.0},
    {0.6, 0.2533471031357997987981962},   {0.75, 0.674489750196081743202227},
    {0.9, 1.281551565544600466965103},    {0.975, 1.959963984540054235524594},
    {0.99, 2.326347874040841100885606},   {0.999, 3.0902323061678135415404},
    {0.99993, 3.808168264449019580401917}, {0.999999, 4.753424308822898948193988},
};

// P[Bin(n, p) >= k] by direct summation.
double binomial_tail(std::uint64_t k, std::uint64_t n, double p) {
  double s = 0.0;
  for (std::uint64_t i = k; i <= n; ++i) {
    const double log_term = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) +
                            i * std::log(p) + (n - i) * std::log1p(-p);
    s += std::exp(log_term);
  }
  return s;
}

double brute_force_lower(std::uint64_t k, std::uint64_t n, double alpha) {
  if (k == 0) return 0.0;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double mid = (lo + hi) / 2;
    (binomial_tail(k, n, mid) > alpha ? hi : lo) = mid;
  }
  return lo;
}

CertificationResult classifier_result(std::optional<double> radius, int prediction) {
  CertificationResult r;
  r.radius = radius;
  r.abstain = !radius;
  r.prediction = prediction;
  return r;
}

}  // namespace

TEST(NormalQuantile, MatchesHighPrecisionTable) {
  for (const auto& [p, q] : kQuantileTable) EXPECT_NEAR(normal_quantile(p), q, 1e-9) << p;
}

TEST(NormalQuantile, MatchesBoostAndIsMonotone) {
  const boost::math::normal_distribution<double> n01;
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double p = std::pow(10.0, -12.0 * rng.uniform());
    const double pp = rng.bernoulli(0.5) ? p : 1.0 - p;
    if (pp <= 0.0 || pp >= 1.0) continue;
    EXPECT_NEAR(normal_quantile(pp), boost::math::quantile(n01, pp), 1e-9) << pp;
  }
  double prev = -1e9;
  for (double p = 0.001; p < 1.0; p += 0.001) {
    EXPECT_GT(normal_quantile(p), prev);
    prev = normal_quantile(p);
  }
  EXPECT_THROW(normal_quantile(0.0), DomainError);
  EXPECT_THROW(normal_quantile(1.0), DomainError);
}

TEST(ClopperPearson, MatchesBinomialSummation) {
  for (std::uint64_t n : {1u, 5u, 20u, 60u}) {
    for (std::uint64_t k = 0; k <= n; ++k) {
      for (double alpha : {0.001, 0.05}) {
        const double got = clopper_pearson_lower(k, n, alpha);
        EXPECT_NEAR(got, brute_force_lower(k, n, alpha), 1e-10) << k << "/" << n;
        EXPECT_LE(got, static_cast<double>(k) / n);
      }
    }
  }
}

TEST(ClopperPearson, AllSuccessesGivesAlphaRoot) {
  EXPECT_NEAR(clopper_pearson_lower(100000, 100000, 0.001), std::pow(0.001, 1e-5), 1e-11);
}

TEST(ClopperPearson, NeverAboveEmpiricalFrequency) {
  Rng rng(9);
  for (int i = 0; i < 300; ++i) {
    const std::uint64_t n = 1 + rng.below(100000);
    const std::uint64_t k = rng.below(n + 1);
    EXPECT_LE(clopper_pearson_lower(k, n, 0.001), static_cast<double>(k) / static_cast<double>(n));
  }
}

TEST(SmoothingRadius, RuleAndOracle) {
  EXPECT_FALSE(smoothing_radius(0.5, 0.25).has_value());
  EXPECT_FALSE(smoothing_radius(0.3, 0.25).has_value());
  const boost::math::normal_distribution<double> n01;
  EXPECT_NEAR(*smoothing_radius(0.75, 0.25), 0.25 * boost::math::quantile(n01, 0.75), 1e-9);
  EXPECT_NEAR(*smoothing_radius(0.75, 0.25), 0.16862, 1e-5);
  EXPECT_LT(*smoothing_radius(0.7, 0.25), *smoothing_radius(0.8, 0.25));
}

TEST(CertifyClassifier, ConstantClassifier) {
  BatchClassifier constant = [](const Tensor& b) { return std::vector<int>(b.dim(0), 2); };
  SmoothingConfig cfg;
  cfg.n = 100000;
  cfg.alpha = 0.001;
  const auto r = certify_classifier(constant, Tensor::filled({4}, 0.5), cfg, 3);
  ASSERT_FALSE(r.abstain);
  EXPECT_EQ(r.prediction, 2);
  EXPECT_NEAR(r.p_lower, std::pow(0.001, 1.0 / 100000), 1e-11);
  EXPECT_GT(*r.radius, 2 * cfg.sigma);
}

TEST(CertifyClassifier, CoinFlipAbstains) {
  BatchClassifier sign = [](const Tensor& b) {
    std::vector<int> out(b.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = b.at(i, 0) > 0.5 ? 1 : 0;
    return out;
  };
  SmoothingConfig cfg;
  cfg.n = 2000;
  const auto r = certify_classifier(sign, Tensor::filled({2}, 0.5), cfg, 2);
  EXPECT_TRUE(r.abstain);
  EXPECT_FALSE(r.radius.has_value());
}

TEST(CertifyClassifier, IndependentOfWorkers) {
  BatchClassifier g = [](const Tensor& b) {
    std::vector<int> out(b.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = b.at(i, 0) + b.at(i, 1) > 0.6 ? 1 : 0;
    return out;
  };
  SmoothingConfig cfg;
  cfg.n = 3000;
  const Tensor x = Tensor::vector({0.5, 0.4});
  const auto a = certify_classifier(g, x, cfg, 2, 1);
  const auto b = certify_classifier(g, x, cfg, 2, 3);
  EXPECT_EQ(a.p_lower, b.p_lower);
  EXPECT_EQ(a.prediction, b.prediction);
}

TEST(AverageCertifiedRadius, Examples) {
  std::vector<CertificationResult> all_abstain(3, classifier_result(std::nullopt, -1));
  const std::vector<int> labels{0, 1, 0};
  EXPECT_EQ(average_certified_radius(all_abstain, labels), 0.0);
  const std::vector<CertificationResult> two{classifier_result(0.2, 1), classifier_result(std::nullopt, -1)};
  const std::vector<int> two_labels{1, 0};
  EXPECT_DOUBLE_EQ(average_certified_radius(two, two_labels), 0.1);
  EXPECT_THROW(average_certified_radius({}, {}), DomainError);
}

TEST(AverageCertifiedRadius, PerSampleRecomputation) {
  Rng rng(4);
  std::vector<CertificationResult> rs;
  std::vector<int> labels;
  double oracle = 0.0;
  for (int i = 0; i < 20; ++i) {
    const bool abstain = rng.bernoulli(0.2);
    const int pred = static_cast<int>(rng.below(3));
    const int label = static_cast<int>(rng.below(3));
    const double rad = rng.uniform();
    rs.push_back(classifier_result(abstain ? std::nullopt : std::optional<double>(rad), abstain ? -1 : pred));
    labels.push_back(label);
    if (!abstain && pred == label) oracle += rad;
  }
  EXPECT_DOUBLE_EQ(average_certified_radius(rs, labels), oracle / 20);
  const auto grid = linear_grid(0.0, 1.0, 21);
  const auto curve = certified_accuracy_curve(rs, labels, grid);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_LE(curve[i].fraction, curve[i - 1].fraction);
}

TEST(CenterSmoothing, ConstantEncoderHasZeroRadius) {
  BatchMap constant = [](const Tensor& b) { return Tensor::filled({b.dim(0), 3}, 0.7); };
  SmoothingConfig cfg;
  cfg.n0 = 200;
  cfg.n = 2000;
  const auto r = center_smooth(constant, Tensor::filled({4}, 0.5), cfg);
  ASSERT_FALSE(r.abstain);
  EXPECT_EQ(*r.radius, 0.0);
  EXPECT_EQ(r.center, Tensor::filled({3}, 0.7));
}

TEST(CenterSmoothing, IdentityMatchesChiMedian) {
  constexpr std::size_t k = 4;
  const double sigma = 0.25;
  BatchMap identity = [](const Tensor& b) { return b; };
  SmoothingConfig cfg = default_center_smoothing();
  cfg.sigma = sigma;
  const auto r = center_smooth(identity, Tensor::filled({k}, 0.5), cfg);
  ASSERT_FALSE(r.abstain);

  Rng rng(12345);
  std::vector<double> norms(1000000);
  for (double& v : norms) {
    double s = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const double z = rng.normal();
      s += z * z;
    }
    v = sigma * std::sqrt(s);
  }
  std::nth_element(norms.begin(), norms.begin() + 500000, norms.end());
  const double mc_median = norms[500000];
  const double exact = sigma * std::sqrt(boost::math::median(boost::math::chi_squared_distribution<double>(k)));
  EXPECT_NEAR(mc_median, exact, 0.002);
  EXPECT_NEAR(*r.radius, mc_median, 0.05 * mc_median);
}

TEST(CenterSmoothing, RadiusShrinksWithMoreSamples) {
  const Encoder e = small_mlp(5);
  const BatchMap f = clipped_encoder_map(e);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SmoothingConfig cfg;
    cfg.n0 = 300;
    cfg.seed = seed;
    const Tensor x = random_images(1, 16, seed).reshaped({16});
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t n : {2000u, 10000u, 40000u}) {
      cfg.n = n;
      const auto r = center_smooth(f, x, cfg);
      ASSERT_FALSE(r.abstain);
      EXPECT_LE(*r.radius, prev) << n;
      prev = *r.radius;
    }
  }
}

TEST(CenterSmoothing, TooFewSamplesAbstain) {
  BatchMap identity = [](const Tensor& b) { return b; };
  SmoothingConfig cfg;
  cfg.n0 = 10;
  cfg.n = 10;
  const auto r = center_smooth(identity, Tensor::filled({2}, 0.5), cfg);
  EXPECT_TRUE(r.abstain);
  EXPECT_FALSE(r.radius.has_value());
}

TEST(SmoothingConfig, Validation) {
  SmoothingConfig c;
  c.sigma = 0;
  EXPECT_THROW(c.validate(), DomainError);
  c = SmoothingConfig{};
  c.alpha = 0.5;
  EXPECT_THROW(c.validate(), DomainError);
  nlohmann::json j = default_center_smoothing();
  EXPECT_EQ(j.get<SmoothingConfig>().n0, 10000u);
}
