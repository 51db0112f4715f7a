#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "repr_robust/error.hpp"
#include "repr_robust/measures.hpp"
#include "test_support.hpp"

using namespace repr_robust;
using namespace test_support;

namespace {

double l2(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Four well separated images on the identity encoder.
Tensor separated_images() {
  return Tensor({4, 4}, {0.1, 0.1, 0.1, 0.1, 0.9, 0.9, 0.1, 0.1, 0.1, 0.9, 0.9, 0.9, 0.9, 0.1, 0.9, 0.5});
}

AttackConfig tiny_attack(AttackMode mode) {
  AttackConfig c;
  c.epsilon = 1e-3;
  c.alpha = 1e-4;
  c.iterations = 5;
  c.mode = mode;
  return c;
}

}  // namespace

TEST(Distribution, PairCountsAndZeros) {
  const Encoder e = small_mlp(1);
  const auto d3 = build_divergence_distribution(e, random_images(10, 16, 1), 3, {}, 4);
  EXPECT_EQ(d3.values.size(), 3u);
  EXPECT_TRUE(std::is_sorted(d3.values.begin(), d3.values.end()));
  const Tensor same = Tensor::filled({5, 16}, 0.3);
  for (double v : build_divergence_distribution(e, same, 5, {}, 4).values) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(build_divergence_distribution(e, same, 6, {}, 4), DomainError);
  EXPECT_THROW(build_divergence_distribution(e, same, 1, {}, 4), DomainError);
}

TEST(Distribution, WorkerCountDoesNotMatter) {
  const Encoder e = small_mlp(2);
  const Tensor x = random_images(300, 16, 2);
  const auto a = build_divergence_distribution(e, x, 300, {}, 9, 1);
  const auto b = build_divergence_distribution(e, x, 300, {}, 9, 4);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.dataset_fingerprint, b.dataset_fingerprint);
}

TEST(Quantile, Examples) {
  DivergenceDistribution d;
  d.values = {1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(d.quantile(2.5), 0.5);
  EXPECT_DOUBLE_EQ(d.quantile(0.5), 0.0);
  EXPECT_DOUBLE_EQ(d.quantile(4.0), 1.0);
  EXPECT_DOUBLE_EQ(d.quantile(2.0), 0.5);
  EXPECT_THROW(DivergenceDistribution{}.quantile(1.0), DomainError);
}

TEST(Quantile, MatchesCountingOracleAndIsMonotone) {
  Rng rng(5);
  DivergenceDistribution d;
  for (int i = 0; i < 500; ++i) d.values.push_back(std::floor(rng.uniform() * 50) / 10);
  std::sort(d.values.begin(), d.values.end());
  double prev = 0;
  for (int q = 0; q < 2000; ++q) {
    const double v = -0.5 + 6.0 * q / 2000.0;
    std::size_t count = 0;
    for (double x : d.values) count += x <= v;
    EXPECT_EQ(d.quantile(v), static_cast<double>(count) / 500.0);
    EXPECT_GE(d.quantile(v), prev);
    prev = d.quantile(v);
  }
  EXPECT_EQ(d.quantile(d.values.front() - 1e-12), 0.0);
  EXPECT_EQ(d.quantile(d.values.back() + 1e-12), 1.0);
}

TEST(RelativeQuantile, Examples) {
  const Encoder e = small_mlp(3);
  const Tensor x = random_images(1, 16, 1).reshaped({16}), t = random_images(1, 16, 2).reshaped({16});
  EXPECT_DOUBLE_EQ(relative_quantile(e, x, t, x, {}), 1.0);
  EXPECT_DOUBLE_EQ(relative_quantile(e, x, t, t, {}), 0.0);
  EXPECT_THROW(relative_quantile(e, x, x, t, {}), DomainError);
  const Tensor a = random_images(1, 16, 3).reshaped({16});
  const Tensor fx = e.encode(x), ft = e.encode(t), fa = e.encode(a);
  EXPECT_DOUBLE_EQ(relative_quantile(e, x, t, a, {}), l2(fa.data(), ft.data()) / l2(fx.data(), ft.data()));
}

TEST(Breakaway, SeparatedClustersAndConstantEncoder) {
  const Encoder id = identity_encoder(2);
  const Tensor x = separated_images();
  const std::vector<std::size_t> eval{0, 1, 2, 3};
  const auto r = breakaway_and_nearest_neighbor(id, x, eval, tiny_attack(AttackMode::Untargeted));
  EXPECT_EQ(r.breakaway.estimate, 0.0);
  EXPECT_EQ(r.breakaway.denominator, 12u);
  EXPECT_EQ(r.nearest_neighbor.estimate, 1.0);
  EXPECT_EQ(r.self_similarity.estimate, 1.0);

  std::vector<double> p(4 * 3 + 3, 0.0);
  p[12] = 0.5;
  const Encoder constant = linear_encoder(2, 3, p);
  const auto c = breakaway_and_nearest_neighbor(constant, x, eval, tiny_attack(AttackMode::Untargeted));
  EXPECT_EQ(c.breakaway.estimate, 0.0);
  EXPECT_EQ(c.nearest_neighbor.estimate, 1.0);
}

TEST(Breakaway, MatchesBruteForceEnumeration) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Tensor ref = random_tensor({5, 3}, seed);
    const std::vector<std::size_t> eval{0, 2, 4};
    const Tensor att = random_tensor({3, 3}, seed + 100);
    const auto r = breakaway_from_representations(ref, eval, att, {});
    std::uint64_t count = 0, nn = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      bool self_nearest = true;
      for (std::size_t o = 0; o < 5; ++o) {
        if (o == eval[k]) continue;
        if (l2(att.row_span(k), ref.row_span(o)) < l2(att.row_span(k), ref.row_span(eval[k]))) ++count;
        if (l2(ref.row_span(o), att.row_span(k)) < l2(ref.row_span(eval[k]), att.row_span(k))) self_nearest = false;
      }
      nn += self_nearest;
    }
    EXPECT_EQ(r.breakaway.numerator, count);
    EXPECT_EQ(r.breakaway.denominator, 12u);
    EXPECT_EQ(r.breakaway.estimate, static_cast<double>(count) / 12.0);
    EXPECT_EQ(r.nearest_neighbor.numerator, nn);
  }
}

TEST(NearestNeighbor, PlantedAttackForcesBreakaway) {
  const Tensor ref = random_tensor({4, 3}, 8);
  const std::vector<std::size_t> eval{0, 1};
  Tensor att({2, 3});
  for (std::size_t k = 0; k < 3; ++k) {
    att.at(0, k) = ref.at(3, k);          // sample 0 lands exactly on sample 3
    att.at(1, k) = ref.at(1, k) + 1e-6;  // sample 1 barely moves
  }
  const auto r = breakaway_from_representations(ref, eval, att, {});
  EXPECT_EQ(r.nearest_neighbor.numerator, 1u);
  EXPECT_EQ(r.nearest_neighbor.estimate, 0.5);
}

TEST(Breakaway, RejectsTinyDatasetsAndTargetedConfigs) {
  const Encoder id = identity_encoder(2);
  const std::vector<std::size_t> eval{0};
  EXPECT_THROW(breakaway_risk(id, Tensor::filled({1, 4}, 0.5), eval, tiny_attack(AttackMode::Untargeted)),
               DomainError);
  EXPECT_THROW(breakaway_risk(id, separated_images(), eval, tiny_attack(AttackMode::Targeted)), DomainError);
}

TEST(Overlap, MarginFormulaExample) {
  // Representations in 1-D: d(x_i, x_j) = 2, d(x_i, attacked j->i) = 0.5, d(x_i, attacked i->j) = 1.
  const Tensor ref({2, 2}, {0, 0, 2, 0});
  const Tensor ij({1, 2}, {1, 0}), ji({1, 2}, {0.5, 0});
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 1}};
  const auto r = overlap_from_representations(ref, pairs, ij, ji, {});
  ASSERT_EQ(r.margins.size(), 1u);
  EXPECT_DOUBLE_EQ(r.margins[0].margin, -0.25);
  EXPECT_EQ(r.risk.numerator, 1u);
  EXPECT_EQ(*r.median_margin, -0.25);
}

TEST(Overlap, NullAttackGivesUnitMargins) {
  const Tensor ref = random_tensor({6, 3}, 4);
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 1}, {2, 3}, {4, 5}};
  Tensor ij({3, 3}), ji({3, 3});
  for (std::size_t p = 0; p < 3; ++p) {
    for (std::size_t k = 0; k < 3; ++k) {
      ij.at(p, k) = ref.at(pairs[p].first, k);  // x_i stays put
      ji.at(p, k) = ref.at(pairs[p].second, k);  // x_j stays put
    }
  }
  const auto r = overlap_from_representations(ref, pairs, ij, ji, {});
  for (const auto& m : r.margins) EXPECT_DOUBLE_EQ(m.margin, 1.0);
  EXPECT_EQ(r.risk.estimate, 0.0);
}

TEST(Overlap, RiskIsFractionOfNegativeMarginsAndMatchesEnumeration) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor ref = random_tensor({5, 2}, seed);
    const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 1}, {2, 3}, {4, 0}};
    const Tensor ij = random_tensor({3, 2}, seed + 1000), ji = random_tensor({3, 2}, seed + 2000);
    const auto r = overlap_from_representations(ref, pairs, ij, ji, {});
    std::uint64_t events = 0, negative = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      const auto [i, j] = pairs[p];
      events += l2(ref.row_span(i), ji.row_span(p)) < l2(ref.row_span(i), ij.row_span(p));
    }
    for (const auto& m : r.margins) negative += m.margin < 0;
    EXPECT_EQ(r.risk.numerator, events);
    EXPECT_EQ(r.risk.numerator, negative);
    EXPECT_EQ(r.risk.denominator, 3u);
  }
}

TEST(Overlap, DegeneratePairsExcluded) {
  const Tensor ref({4, 2}, {0, 0, 0, 0, 1, 1, 2, 2});
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 1}, {2, 3}};
  const Tensor att({2, 2}, {0, 0, 1, 1});
  const auto r = overlap_from_representations(ref, pairs, att, att, {});
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_EQ(r.risk.denominator, 1u);
}

TEST(Overlap, EndToEndOnToyEncoder) {
  const Encoder e = small_mlp(7);
  const Tensor x = random_images(40, 16, 3);
  const auto pairs = sample_disjoint_pairs(40, 20, 11);
  const auto r = overlap_risk_and_margins(e, x, pairs, default_overlap_attack(), 2);
  std::size_t negative = 0;
  for (const auto& m : r.margins) negative += m.margin < 0;
  EXPECT_EQ(r.risk.numerator, negative);
  EXPECT_GE(r.risk.estimate, 0.0);
  EXPECT_LE(r.risk.estimate, 1.0);
  EXPECT_THROW(sample_disjoint_pairs(40, 21, 1), DomainError);
}

TEST(Measures, DeterministicAcrossWorkers) {
  const Encoder e = small_cnn(3);
  const Tensor x = random_images(70, 64, 8);
  const auto eval = sample_indices(70, 40, 3);
  AttackConfig c = default_breakaway_attack();
  c.iterations = 5;
  const auto a = breakaway_and_nearest_neighbor(e, x, eval, c, 1);
  const auto b = breakaway_and_nearest_neighbor(e, x, eval, c, 3);
  EXPECT_EQ(a.attack_divergences, b.attack_divergences);
  const auto dist = build_divergence_distribution(e, x, 70, {}, 1, 2);
  EXPECT_EQ(universal_quantiles(e, x, eval, dist, c, 1).values, universal_quantiles(e, x, eval, dist, c, 4).values);
}

TEST(Median, EvenAndOdd) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW(median({}), DomainError);
}
