#include <cmath>

#include <gtest/gtest.h>

#include "repr_robust/autodiff.hpp"
#include "repr_robust/error.hpp"
#include "test_support.hpp"

using namespace repr_robust;
using test_support::random_tensor;

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
}

TEST(Primitives, MatmulShapes) {
  Graph g;
  Var a = g.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var b = g.constant(Tensor({3, 1}, {1, 0, -1}));
  Var c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.value().values(), (std::vector<double>{-2, -2}));
}

TEST(Primitives, ShapeErrorNamesPrimitiveAndShapes) {
  Graph g;
  Var a = g.constant(Tensor({2, 3}));
  Var b = g.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(a, g.constant(Tensor({3, 2}))), ShapeError);
}

TEST(Primitives, ReluAndSoftmax) {
  Graph g;
  EXPECT_EQ(relu(g.constant(Tensor::vector({-1, 0, 2}))).value().values(), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(softmax(g.constant(Tensor::vector({0, 0}))).value().values(), (std::vector<double>{0.5, 0.5}));
}

TEST(Backward, SumGivesOnes) {
  Graph g;
  Var x = g.leaf(random_tensor({3, 4}, 1));
  g.backward(sum(x));
  const Tensor gx = g.grad(x);
  for (double v : gx.values()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, DotWithSelf) {
  Graph g;
  Var x = g.leaf(Tensor::vector({1, 2}));
  EXPECT_EQ(gradient(dot(x, x), x).values(), (std::vector<double>{2, 4}));
}

TEST(Backward, RejectsNonScalarAndForeignRoots) {
  Graph g, h;
  Var x = g.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(g.backward(x), GraphError);
  Var y = h.leaf(Tensor::scalar(1));
  EXPECT_THROW(g.backward(y), GraphError);
  EXPECT_THROW(gradient(sum(x), y), GraphError);
}

TEST(Backward, VisitsSharedNodesOnce) {
  Graph g;
  Var x = g.leaf(Tensor::vector({3}));
  Var y = x * x;
  Var z = y + y;  // 2x^2
  EXPECT_DOUBLE_EQ(gradient(sum(z), x)[0], 12.0);
}

TEST(FiniteDifference, KnownGradients) {
  auto l2 = [](Graph&, const Var& x) { return sqrt(sum(square(x))); };
  EXPECT_LT(finite_difference_check(l2, Tensor::vector({3, 4}), 1e-5), 1e-6);
  auto constant = [](Graph& g, const Var&) { return g.constant(Tensor::scalar(2.0)); };
  EXPECT_EQ(finite_difference_check(constant, Tensor::vector({1, 2}), 1e-5), 0.0);
}

TEST(FiniteDifference, TwoLayerMlp) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor w1 = random_tensor({5, 7}, seed * 3 + 1);
    const Tensor w2 = random_tensor({7, 1}, seed * 3 + 2);
    auto fn = [&](Graph& g, const Var& x) {
      return sum(matmul(tanh(matmul(x, g.constant(w1))), g.constant(w2)));
    };
    EXPECT_LT(finite_difference_check(fn, random_tensor({2, 5}, seed), 1e-5), 1e-4);
  }
}

// One scalar reduction per primitive so every local derivative is exercised.
TEST(FiniteDifference, EveryPrimitive) {
  const Tensor c = random_tensor({3, 4}, 99);
  std::vector<std::pair<const char*, std::function<Var(Graph&, const Var&)>>> cases = {
      {"add", [&](Graph& g, const Var& x) { return sum(square(x + g.constant(c))); }},
      {"sub", [&](Graph& g, const Var& x) { return sum(square(g.constant(c) - x)); }},
      {"mul", [&](Graph& g, const Var& x) { return sum(x * g.constant(c) * x); }},
      {"scalar-mul", [&](Graph& g, const Var& x) { return sum(square(x * g.constant(Tensor::scalar(1.7)))); }},
      {"matmul", [&](Graph& g, const Var& x) { return sum(square(matmul(x, transpose(g.constant(c))))); }},
      {"tanh", [](Graph&, const Var& x) { return sum(tanh(x)); }},
      {"exp", [](Graph&, const Var& x) { return sum(exp(x)); }},
      {"log", [](Graph&, const Var& x) { return sum(log(add_scalar(square(x), 1.0))); }},
      {"sqrt", [](Graph&, const Var& x) { return sum(sqrt(add_scalar(square(x), 0.5))); }},
      {"mean", [](Graph&, const Var& x) { return mean(square(x)); }},
      {"dot", [&](Graph& g, const Var& x) { return dot(reshape(x, {12}), g.constant(c.reshaped({12}))); }},
      {"softmax", [&](Graph& g, const Var& x) { return sum(softmax(x) * g.constant(c)); }},
      {"log_softmax", [&](Graph& g, const Var& x) { return sum(log_softmax(x) * g.constant(c)); }},
      {"concat0", [&](Graph& g, const Var& x) { return sum(square(concat({x, x * g.constant(c)}, 0))); }},
      {"concat1", [&](Graph& g, const Var& x) { return sum(exp(concat({x, tanh(x)}, 1))); }},
      {"normalize_rows", [&](Graph& g, const Var& x) { return sum(normalize_rows(x) * g.constant(c)); }},
      {"row_dot", [&](Graph& g, const Var& x) { return sum(square(row_dot(x, g.constant(c)))); }},
      {"add_bias", [&](Graph& g, const Var& x) {
         return sum(square(add_bias(g.constant(c), reshape(slice_rows(x, 0, 1), {4}))));
       }},
      {"roll_rows", [&](Graph& g, const Var& x) { return sum(roll_rows(x, 1) * g.constant(c)); }},
      {"pick", [](Graph&, const Var& x) { return sum(exp(pick(x, {0, 3, 2}))); }},
  };
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = random_tensor({3, 4}, 1000 + seed);
    for (const auto& [name, fn] : cases) {
      EXPECT_LT(finite_difference_check(fn, x, 1e-5), 1e-4) << name << " seed " << seed;
    }
  }
}

TEST(FiniteDifference, ConvolutionAndPooling) {
  const Tensor w = random_tensor({2, 2, 3, 3}, 5);
  const Tensor b = random_tensor({2}, 6);
  auto fn = [&](Graph& g, const Var& x) {
    return sum(square(avg_pool2(conv2d(x, g.constant(w), g.constant(b)))));
  };
  EXPECT_LT(finite_difference_check(fn, random_tensor({2, 2, 4, 4}, 7), 1e-5), 1e-4);
  auto wrt_weight = [&](Graph& g, const Var& wv) {
    return sum(square(conv2d(g.constant(random_tensor({1, 2, 4, 4}, 8)), wv, g.constant(b))));
  };
  EXPECT_LT(finite_difference_check(wrt_weight, w, 1e-5), 1e-4);
}

TEST(Primitives, DomainChecks) {
  Graph g;
  EXPECT_THROW(log(g.constant(Tensor::vector({0.0}))), DomainError);
  EXPECT_THROW(sqrt(g.constant(Tensor::vector({-1.0}))), DomainError);
  EXPECT_THROW(normalize_rows(g.constant(Tensor({1, 2}))), DomainError);
}

TEST(Primitives, RowMaxTakesFirstMaximum) {
  Graph g;
  Var x = g.leaf(Tensor({1, 3}, {2, 2, 1}));
  EXPECT_EQ(gradient(sum(row_max(x)), x).values(), (std::vector<double>{1, 0, 0}));
}

TEST(Primitives, DetachBlocksGradient) {
  Graph g;
  Var x = g.leaf(Tensor::vector({1, 2}));
  Var y = sum(square(x - detach(x)));
  EXPECT_EQ(gradient(y, x).values(), (std::vector<double>{0, 0}));
}

TEST(Determinism, SameInputsSameBits) {
  auto run = [] {
    Graph g;
    Var x = g.leaf(random_tensor({4, 6}, 17));
    Var y = sum(tanh(matmul(x, transpose(x))));
    return gradient(y, x);
  };
  EXPECT_EQ(run(), run());
}
