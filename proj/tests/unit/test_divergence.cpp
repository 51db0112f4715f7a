#include <cmath>

#include <gtest/gtest.h>

#include "repr_robust/divergence.hpp"
#include "repr_robust/error.hpp"
#include "test_support.hpp"

using namespace repr_robust;
using test_support::random_tensor;

namespace {

const Divergence kAll[] = {{DivergenceKind::L2}, {DivergenceKind::Linf}, {DivergenceKind::Cosine},
                           {DivergenceKind::KlSoftmax, 1.0}, {DivergenceKind::KlSoftmax, 0.3}};

Tensor live_gradient(const Divergence& d, const Tensor& r, const Tensor& anchor) {
  Graph g;
  Var x = g.leaf(r.reshaped({1, r.size()}));
  return gradient(sum(divergence_rows(d, x, g.constant(anchor.reshaped({1, anchor.size()})))), x);
}

}  // namespace

TEST(Divergence, Examples) {
  const Divergence l2{DivergenceKind::L2};
  EXPECT_EQ(divergence(l2, Tensor::vector({1, 2}), Tensor::vector({1, 2})), 0.0);
  EXPECT_DOUBLE_EQ(divergence(l2, Tensor::vector({0, 0}), Tensor::vector({3, 4})), 5.0);
  EXPECT_DOUBLE_EQ(divergence({DivergenceKind::Cosine}, Tensor::vector({1, 0}), Tensor::vector({0, 1})), 1.0);
  const Tensor r = random_tensor({8}, 3);
  EXPECT_LT(divergence({DivergenceKind::KlSoftmax}, r, r), 1e-12);
  EXPECT_DOUBLE_EQ(divergence({DivergenceKind::Linf}, Tensor::vector({1, -4}), Tensor::vector({0, 0})), 4.0);
}

TEST(Divergence, Errors) {
  EXPECT_THROW(divergence({DivergenceKind::Cosine}, Tensor::vector({0, 0}), Tensor::vector({1, 0})), DomainError);
  EXPECT_THROW(divergence({}, Tensor::vector({0, 0}), Tensor::vector({1, 0, 2})), ShapeError);
  EXPECT_THROW(parse_divergence_kind("wasserstein"), DomainError);
  for (auto k : {DivergenceKind::L2, DivergenceKind::Linf, DivergenceKind::Cosine, DivergenceKind::KlSoftmax}) {
    EXPECT_EQ(parse_divergence_kind(to_string(k)), k);
  }
}

TEST(Divergence, NonNegativeAndIdentity) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const Tensor a = random_tensor({6}, rng.next_u64());
    const Tensor b = random_tensor({6}, rng.next_u64());
    for (const auto& d : kAll) {
      EXPECT_GE(divergence(d, a, b), 0.0);
      if (i % 10 == 0) EXPECT_EQ(divergence(d, a, a), 0.0) << to_string(d.kind);
    }
  }
}

TEST(Divergence, TriangleInequalityForMetrics) {
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    const Tensor a = random_tensor({5}, rng.next_u64());
    const Tensor b = random_tensor({5}, rng.next_u64());
    const Tensor c = random_tensor({5}, rng.next_u64());
    for (auto k : {DivergenceKind::L2, DivergenceKind::Linf}) {
      const Divergence d{k};
      EXPECT_LE(divergence(d, a, c), divergence(d, a, b) + divergence(d, b, c) + 1e-12);
    }
  }
}

TEST(Divergence, KlIsAsymmetric) {
  const Tensor a = Tensor::vector({3, 0, 0}), b = Tensor::vector({0, 1, 0});
  const Divergence kl{DivergenceKind::KlSoftmax};
  EXPECT_FALSE(kl.symmetric());
  EXPECT_GT(std::abs(divergence(kl, a, b) - divergence(kl, b, a)), 1e-3);
}

TEST(Divergence, GraphMatchesPlainValues) {
  for (const auto& d : kAll) {
    const Tensor a = random_tensor({4, 7}, 10), b = random_tensor({4, 7}, 11);
    Graph g;
    const Tensor rows = divergence_rows(d, g.constant(a), g.constant(b)).value();
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_NEAR(rows[i], divergence(d, a.row_span(i), b.row_span(i)), 1e-12) << to_string(d.kind);
    }
  }
}

TEST(DivergenceGradient, Examples) {
  const Tensor l2 = live_gradient({DivergenceKind::L2}, Tensor::vector({3, 4}), Tensor::vector({0, 0}));
  EXPECT_DOUBLE_EQ(l2[0], 0.6);
  EXPECT_DOUBLE_EQ(l2[1], 0.8);
  const Tensor li = live_gradient({DivergenceKind::Linf}, Tensor::vector({2, 5}), Tensor::vector({0, 0}));
  EXPECT_EQ(li.values(), (std::vector<double>{0, 1}));
}

TEST(DivergenceGradient, FiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor anchor = random_tensor({1, 8}, 500 + seed);
    for (const auto& d : kAll) {
      if (d.kind == DivergenceKind::Linf) continue;  // piecewise linear; checked by example above
      auto fn = [&](Graph& g, const Var& x) { return sum(divergence_rows(d, x, g.constant(anchor))); };
      EXPECT_LT(finite_difference_check(fn, random_tensor({1, 8}, seed), 1e-5), 1e-4) << to_string(d.kind);
    }
  }
}
