#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "repr_robust/divergence.hpp"
#include "repr_robust/encoder.hpp"
#include "repr_robust/error.hpp"
#include "test_support.hpp"

using namespace repr_robust;
using namespace test_support;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("repr_robust_" + name);
}

}  // namespace

TEST(Encoder, NormalizedOutputHasUnitNorm) {
  const Encoder enc = small_mlp(3, 4, 6, true);
  const Tensor r = enc.encode(random_images(20, 16, 4));
  for (std::size_t i = 0; i < 20; ++i) {
    double s = 0;
    for (double v : r.row_span(i)) s += v * v;
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-9);
  }
}

TEST(Encoder, DeterministicAndSeeded) {
  const Tensor x = random_images(3, 64, 5);
  EXPECT_EQ(small_cnn(1).encode(x), small_cnn(1).encode(x));
  EXPECT_NE(small_cnn(1).encode(x), small_cnn(2).encode(x));
  const Encoder e = small_mlp(9);
  const Tensor y = random_images(2, 16, 6);
  EXPECT_EQ(e.encode(y).row(1), e.encode(y.row(1)));
}

TEST(Encoder, ZeroParametersGiveZeroRepresentation) {
  EncoderSpec s;
  s.input_side = 4;
  s.hidden = {5};
  s.representation_dim = 3;
  const Encoder e(s, std::vector<double>(parameter_count(s), 0.0));
  const Tensor r = e.encode(random_images(2, 16, 1));
  for (double v : r.values()) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, RejectsBadInputs) {
  const Encoder e = small_mlp(1);
  EXPECT_THROW(e.encode(Tensor::filled({16}, 1.1)), DomainError);
  EXPECT_THROW(e.encode(Tensor::filled({15}, 0.5)), ShapeError);
  EncoderSpec bad;
  bad.representation_dim = 1;
  EXPECT_THROW(Encoder{bad}, DomainError);
}

TEST(InputGradient, SelfAnchoredLossIsFlat) {
  const Encoder e = small_mlp(2);
  Graph g;
  Var x = g.leaf(random_images(1, 16, 3));
  Var r = e.forward(g, x);
  EXPECT_EQ(gradient(sum(square(r - detach(r))), x), Tensor({1, 16}));
}

TEST(InputGradient, LinearEncoderGivesWeightRow) {
  const std::size_t d = 4, k = 3;
  std::vector<double> p = random_tensor({d * k + k}, 11).values();
  const Encoder e = linear_encoder(2, k, p);
  Graph g;
  Var x = g.leaf(random_images(1, d, 2));
  Var first = pick(e.forward(g, x), {0});
  const Tensor gr = gradient(sum(first), x);
  for (std::size_t i = 0; i < d; ++i) EXPECT_DOUBLE_EQ(gr[i], p[i * k + 0]);
}

TEST(InputGradient, RequiresLeafOfSameGraph) {
  const Encoder e = small_mlp(2);
  Graph g;
  Var x = g.constant(random_images(1, 16, 3));
  EXPECT_THROW(gradient(sum(e.forward(g, x)), x), GraphError);
}

TEST(InputGradient, CnnFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Encoder e = small_cnn(seed);
    const Tensor target = random_tensor({1, 5}, seed + 50);
    auto fn = [&](Graph& g, const Var& x) {
      return sum(divergence_rows(Divergence{}, e.forward(g, x), g.constant(target)));
    };
    EXPECT_LT(finite_difference_check(fn, random_images(1, 64, seed + 7), 1e-5), 1e-4);
  }
}

TEST(InputGradient, ParameterGradientMatchesFiniteDifferences) {
  const Encoder base = small_mlp(4, 2, 3);
  const Tensor x = random_images(3, 4, 8);
  auto loss_at = [&](const std::vector<double>& p) {
    const Encoder e(base.spec(), p);
    Graph g;
    return sum(square(e.forward(g, g.constant(x)))).value().item();
  };
  Graph g;
  const auto bound = base.bind(g, true);
  g.backward(sum(square(base.forward(g, g.constant(x), bound))));
  const auto grad = base.gather_gradient(g, bound);
  std::vector<double> p(base.parameters().begin(), base.parameters().end());
  for (std::size_t i = 0; i < p.size(); i += 7) {
    auto hi = p, lo = p;
    hi[i] += 1e-6;
    lo[i] -= 1e-6;
    const double numeric = (loss_at(hi) - loss_at(lo)) / 2e-6;
    EXPECT_NEAR(grad[i], numeric, 1e-6 + 1e-5 * std::abs(numeric)) << i;
  }
}

TEST(Encoder, LipschitzSanity) {
  const Encoder e = small_cnn(12);
  const Tensor x = random_images(1, 64, 1).reshaped({64});
  const Tensor fx = e.encode(x);
  for (std::uint64_t s = 0; s < 20; ++s) {
    Tensor y = x;
    const Tensor delta = random_tensor({64}, 300 + s, -1e-6, 1e-6);
    for (std::size_t i = 0; i < 64; ++i) y[i] += delta[i];
    EXPECT_LE(divergence(Divergence{}, fx, e.encode(y)), 1e3 * 1e-6);
  }
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const Encoder e = small_cnn(77);
  auto cp = EncoderCheckpoint::from(e, {{"loss", "info-nce"}});
  cp.sections.push_back({"PRB0", {1, 2, 3}});
  const auto path = temp_file("roundtrip.urre");
  save_checkpoint(path, cp);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.spec, cp.spec);
  EXPECT_EQ(back.parameters, cp.parameters);
  EXPECT_EQ(back.provenance, cp.provenance);
  ASSERT_EQ(back.sections.size(), 1u);
  EXPECT_EQ(back.sections[0].payload, cp.sections[0].payload);
  EXPECT_EQ(back.encoder().fingerprint(), e.fingerprint());
  std::filesystem::remove(path);
}

namespace {

std::vector<char> read_all(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void write_all(const std::filesystem::path& p, const std::vector<char>& b) {
  std::ofstream os(p, std::ios::binary);
  os.write(b.data(), static_cast<std::streamsize>(b.size()));
}

FormatError::Kind load_error(const std::filesystem::path& p) {
  try {
    load_checkpoint(p);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "load succeeded";
  return FormatError::Kind::Io;
}

}  // namespace

TEST(Checkpoint, CorruptionsAreDistinguished) {
  const auto path = temp_file("corrupt.urre");
  const auto cp = EncoderCheckpoint::from(small_mlp(5));
  save_checkpoint(path, cp);
  const auto good = read_all(path);

  auto bytes = good;
  bytes[0] = 'X';
  write_all(path, bytes);
  EXPECT_EQ(load_error(path), FormatError::Kind::BadMagic);

  bytes = good;
  bytes.resize(bytes.size() - 3);
  write_all(path, bytes);
  EXPECT_EQ(load_error(path), FormatError::Kind::Truncated);

  // Drop the last parameter and declare one fewer.
  bytes = good;
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 8, 8);
  const std::size_t count_at = 16 + header_len;
  std::uint64_t count = 0;
  std::memcpy(&count, bytes.data() + count_at, 8);
  --count;
  std::memcpy(bytes.data() + count_at, &count, 8);
  bytes.resize(bytes.size() - 8);
  write_all(path, bytes);
  EXPECT_EQ(load_error(path), FormatError::Kind::CountMismatch);

  EXPECT_EQ(load_error(temp_file("does-not-exist.urre")), FormatError::Kind::Io);
  std::filesystem::remove(path);
}
