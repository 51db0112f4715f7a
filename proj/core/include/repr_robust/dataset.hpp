#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "repr_robust/tensor.hpp"

namespace repr_robust {

// Generative parameters of one class. Coordinates are in units of the image
// side; frequency is in cycles per pixel.
struct ClassPattern {
  double center_x = 0.5;
  double center_y = 0.5;
  double orientation = 0.0;  // texture direction in radians
  double frequency = 0.35;

  bool operator==(const ClassPattern&) const = default;
};

// Each class is a Gaussian blob (low frequency, class identifying) plus an
// oriented sinusoidal texture (high frequency). Samples jitter the blob center
// and texture phase in proportion to `noise` and add uniform pixel noise of
// amplitude `noise`.
struct SynthSpec {
  std::size_t side = 16;
  std::size_t channels = 1;
  std::size_t classes = 4;
  std::size_t samples_per_class = 256;
  double noise = 0.05;
  std::uint64_t seed = 7;
  // Empty means derived from the seed.
  std::vector<ClassPattern> patterns;

  std::size_t image_size() const { return side * side * channels; }
  void validate() const;
  // Patterns, derived from the seed when none were given.
  std::vector<ClassPattern> resolved_patterns() const;

  bool operator==(const SynthSpec&) const = default;
};

// side 16, 1 channel, 4 classes, 256 per class, noise 0.05, seed 7.
SynthSpec reference_synth_spec();

void to_json(nlohmann::json& j, const ClassPattern& p);
void from_json(const nlohmann::json& j, ClassPattern& p);
void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

// Blob width as a fraction of the side, and pixel weights of the components.
inline constexpr double kBlobWidth = 0.15;
inline constexpr double kBaseLevel = 0.15;
inline constexpr double kBlobAmplitude = 0.6;
inline constexpr double kTextureAmplitude = 0.15;

struct Dataset {
  Tensor images;                    // [n, channels * side * side], CHW rows
  std::vector<std::size_t> labels;  // in [0, classes)
  std::vector<std::size_t> ids;     // position in the generated dataset
  std::size_t classes = 0;
  std::size_t side = 0;
  std::size_t channels = 1;

  std::size_t size() const { return labels.size(); }
  // Rows with the given ids positions, in order.
  Dataset subset(const std::vector<std::size_t>& positions) const;
  std::vector<std::size_t> positions_of_class(std::size_t c) const;
};

Dataset generate(const SynthSpec& spec, std::size_t workers = 1);

// Class prototype: the sample produced with zero noise.
Tensor class_prototype(const SynthSpec& spec, std::size_t c);

// Stratified split: within each class, a seeded shuffle and the first
// round(train_fraction * count) samples go to train.
std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed);

// "URDS" u32 version u64 header_len header_json
// u64 count u64 dim f64[count*dim] u64 labels[count] u64 ids[count]
inline constexpr std::uint32_t kDatasetVersion = 1;
void save_dataset(const std::filesystem::path& path, const Dataset& data,
                  const nlohmann::json& provenance = nlohmann::json::object());
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace repr_robust
