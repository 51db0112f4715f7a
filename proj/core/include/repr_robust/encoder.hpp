#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repr_robust/autodiff.hpp"
#include "repr_robust/model.hpp"

namespace repr_robust {

enum class Architecture { Mlp, Cnn };

std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& s);

// Architecture description. Images are side x side x channels, flattened in
// channel-major (CHW) order.
//  mlp: flatten -> one ReLU layer per `hidden` width -> linear head
//  cnn: per `hidden` entry a 3x3 conv (that many channels) + ReLU + 2x2
//       average pool, then a linear head
struct EncoderSpec {
  Architecture architecture = Architecture::Mlp;
  std::size_t input_side = 16;
  std::size_t channels = 1;
  std::vector<std::size_t> hidden{128, 128};
  std::size_t representation_dim = 32;
  bool normalize_output = false;
  std::uint64_t seed = 0;

  std::size_t input_size() const { return input_side * input_side * channels; }

  // Throws DomainError for an inconsistent spec.
  void validate() const;

  bool operator==(const EncoderSpec&) const = default;
};

void to_json(nlohmann::json& j, const EncoderSpec& s);
void from_json(const nlohmann::json& j, EncoderSpec& s);

// One parameter tensor inside the flat parameter vector.
struct ParameterBlock {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  bool bias = false;
};

std::vector<ParameterBlock> parameter_layout(const EncoderSpec& spec);
std::size_t parameter_count(const EncoderSpec& spec);

class Encoder : public RepresentationModel {
 public:
  // Seeded initialization: weights uniform in +-sqrt(6 / (fan_in + fan_out)),
  // biases zero.
  explicit Encoder(EncoderSpec spec);
  Encoder(EncoderSpec spec, std::vector<double> parameters);

  const EncoderSpec& spec() const noexcept { return spec_; }
  std::span<const double> parameters() const noexcept { return parameters_; }
  std::span<double> mutable_parameters() noexcept { return parameters_; }
  const std::vector<ParameterBlock>& layout() const noexcept { return layout_; }

  std::size_t input_size() const override { return spec_.input_size(); }
  std::size_t representation_dim() const override { return spec_.representation_dim; }

  // Records the forward pass with constant parameters. Inputs must lie in [0,1].
  Var forward(Graph& g, const Var& x) const override;

  // Parameters as graph variables, one per layout block; trainable ones are
  // differentiable leaves.
  std::vector<Var> bind(Graph& g, bool trainable) const;
  Var forward(Graph& g, const Var& x, std::span<const Var> bound) const;

  // Concatenates per-block gradients from the last backward() in layout order.
  std::vector<double> gather_gradient(const Graph& g, std::span<const Var> bound) const;

  // f(x) for a single image [input_size] or a batch [n, input_size].
  // Throws DomainError for values outside [0,1], ShapeError for wrong sizes.
  Tensor encode(const Tensor& x) const;

  // 64-bit FNV-1a over the spec and parameter bytes.
  std::uint64_t fingerprint() const;

 private:
  void check_input(const Tensor& x) const;

  EncoderSpec spec_;
  std::vector<ParameterBlock> layout_;
  std::vector<double> parameters_;
};

// --- checkpoint container --------------------------------------------------
//
// Little-endian binary layout:
//   "URRE"  u32 version  u64 header_len  header_json[header_len]
//   u64 parameter_count  f64[parameter_count]
//   zero or more sections: tag[4]  u64 len  bytes[len]
// header_json = {"spec": EncoderSpec, "provenance": any}

struct CheckpointSection {
  std::string tag;  // exactly 4 characters
  std::vector<std::uint8_t> payload;
};

struct EncoderCheckpoint {
  EncoderSpec spec;
  std::vector<double> parameters;
  nlohmann::json provenance = nlohmann::json::object();
  std::vector<CheckpointSection> sections;

  static EncoderCheckpoint from(const Encoder& encoder, nlohmann::json provenance = {});
  Encoder encoder() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const EncoderCheckpoint& checkpoint);

// Throws FormatError with kind BadMagic, BadVersion, Truncated, CountMismatch,
// BadHeader or Io.
EncoderCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace repr_robust
