#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include <gtest/gtest.h>

#include "repr_robust/dataset.hpp"
#include "repr_robust/error.hpp"
#include "repr_robust/fourier.hpp"
#include "repr_robust/probe.hpp"
#include "test_support.hpp"

using namespace repr_robust;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("repr_robust_" + name);
}

double l2(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Probe on raw pixels (identity encoder), trained on train, scored on eval.
double pixel_probe_accuracy(const Dataset& data, ProbeVariant variant) {
  auto [train, eval] = split(data, 0.75, 11);
  const Encoder id = test_support::identity_encoder(data.side);
  ProbeConfig cfg;
  cfg.lr = 1.0;
  const LinearProbe p = train_probe(id, train, variant, cfg);
  return top_k_accuracy(p, id, eval, 1, variant, cfg);
}

}  // namespace

TEST(Synth, ZeroNoiseGivesPrototypes) {
  SynthSpec s = reference_synth_spec();
  s.noise = 0.0;
  s.samples_per_class = 1;
  const Dataset d = generate(s);
  ASSERT_EQ(d.size(), 4u);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(d.labels[c], c);
    EXPECT_EQ(d.images.row(c), class_prototype(s, c));
  }
}

TEST(Synth, PixelsInRangeAndDeterministic) {
  const SynthSpec s = reference_synth_spec();
  const Dataset a = generate(s, 1), b = generate(s, 4);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.size(), 1024u);
  for (double v : a.images.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  SynthSpec other = s;
  other.seed = 8;
  EXPECT_NE(generate(other).images, a.images);
}

TEST(Synth, PrototypesSeparatedAfterLowpass) {
  // Two Gaussian bumps of width w, amplitude A, centers D apart differ in L2
  // by A * sqrt(2 pi w^2 (1 - exp(-D^2 / (4 w^2)))) in the continuum.
  const SynthSpec s = reference_synth_spec();
  const auto pats = s.resolved_patterns();
  const double side = double(s.side), w = kBlobWidth * side;
  for (std::size_t a = 0; a < s.classes; ++a) {
    for (std::size_t b = a + 1; b < s.classes; ++b) {
      const double dist = std::hypot(pats[a].center_x - pats[b].center_x, pats[a].center_y - pats[b].center_y) * side;
      const double floor =
          kBlobAmplitude * std::sqrt(2 * std::numbers::pi * w * w * (1 - std::exp(-dist * dist / (4 * w * w))));
      const Tensor pa = lowpass(class_prototype(s, a).reshaped({16, 16}), kDefaultLowpassFraction);
      const Tensor pb = lowpass(class_prototype(s, b).reshaped({16, 16}), kDefaultLowpassFraction);
      EXPECT_GT(l2(pa, pb), 0.5 * floor) << a << " vs " << b;
    }
  }
}

TEST(Synth, DisjointBlobsLinearlySeparable) {
  SynthSpec s = reference_synth_spec();
  s.classes = 2;
  s.samples_per_class = 200;
  s.patterns = {{0.25, 0.25, 0.3, 0.35}, {0.75, 0.75, 1.2, 0.42}};
  EXPECT_GT(pixel_probe_accuracy(generate(s), ProbeVariant::Standard), 0.95);
}

TEST(Synth, LowpassKeepsClassIdentity) {
  EXPECT_GT(pixel_probe_accuracy(generate(reference_synth_spec()), ProbeVariant::Lowpass), 0.90);
}

TEST(Synth, RejectsBadSpecs) {
  SynthSpec s;
  s.classes = 1;
  EXPECT_THROW(generate(s), DomainError);
  s = SynthSpec{};
  s.patterns = {ClassPattern{}};
  EXPECT_THROW(generate(s), DomainError);
}

TEST(Split, StratifiedPartition) {
  SynthSpec s = reference_synth_spec();
  s.samples_per_class = 100;
  const Dataset d = generate(s);
  const auto [train, eval] = split(d, 0.8, 5);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(train.positions_of_class(c).size(), 80u);
    EXPECT_EQ(eval.positions_of_class(c).size(), 20u);
  }
  std::set<std::size_t> ids(train.ids.begin(), train.ids.end());
  for (auto i : eval.ids) EXPECT_TRUE(ids.insert(i).second);
  EXPECT_EQ(ids.size(), d.size());
  for (std::size_t k = 0; k < train.size(); ++k) EXPECT_EQ(train.images.row(k), d.images.row(train.ids[k]));

  const auto again = split(d, 0.8, 5);
  EXPECT_EQ(again.first.ids, train.ids);
  EXPECT_NE(split(d, 0.8, 6).first.ids, train.ids);
}

TEST(Split, BalanceWithinOne) {
  SynthSpec s = reference_synth_spec();
  s.samples_per_class = 7;
  const auto [train, eval] = split(generate(s), 0.3, 1);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_LE(std::abs(double(train.positions_of_class(c).size()) - 2.1), 1.0);
}

TEST(Split, RejectsFractionsOutsideOpenInterval) {
  const Dataset d = generate(SynthSpec{.samples_per_class = 4});
  EXPECT_THROW(split(d, 0.0, 1), DomainError);
  EXPECT_THROW(split(d, 1.0, 1), DomainError);
  EXPECT_THROW(split(d, -0.2, 1), DomainError);
}

TEST(DatasetFile, RoundTripAndCorruption) {
  const Dataset d = split(generate(SynthSpec{.samples_per_class = 10}), 0.5, 2).second;
  const auto path = temp_file("data.urds");
  save_dataset(path, d);
  const Dataset back = load_dataset(path);
  EXPECT_EQ(back.images, d.images);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.ids, d.ids);
  EXPECT_EQ(back.classes, 4u);

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  try {
    load_dataset(path);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::Truncated);
  }
  std::ofstream(path, std::ios::binary) << "NOPE";
  try {
    load_dataset(path);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::BadMagic);
  }
  std::filesystem::remove(path);
}

TEST(SynthSpecJson, RoundTrip) {
  SynthSpec s = reference_synth_spec();
  s.patterns = s.resolved_patterns();
  const nlohmann::json j = s;
  EXPECT_EQ(j.get<SynthSpec>(), s);
  EXPECT_EQ(nlohmann::json::object().get<SynthSpec>(), reference_synth_spec());
}
