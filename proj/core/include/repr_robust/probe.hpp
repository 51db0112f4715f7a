#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repr_robust/certification.hpp"
#include "repr_robust/dataset.hpp"
#include "repr_robust/encoder.hpp"
#include "repr_robust/fourier.hpp"

namespace repr_robust {

enum class ProbeVariant { Standard, Lowpass, GaussianNoise };

std::string to_string(ProbeVariant v);
ProbeVariant parse_probe_variant(const std::string& s);

// SGD on softmax cross-entropy with momentum and step decay.
struct ProbeConfig {
  std::size_t epochs = 25;
  double lr = 30.0;
  std::vector<std::size_t> lr_drops{15, 20};
  double lr_drop_factor = 0.1;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  double init_scale = 0.01;  // weights ~ N(0, init_scale^2), bias 0
  double noise_sigma = 0.25;
  double lowpass_fraction = kDefaultLowpassFraction;
  std::uint64_t seed = 0;

  double lr_at(std::size_t epoch) const;
  void validate() const;
  bool operator==(const ProbeConfig&) const = default;
};

void to_json(nlohmann::json& j, const ProbeConfig& c);
void from_json(const nlohmann::json& j, ProbeConfig& c);

struct LinearProbe {
  Tensor weight;  // [classes, representation_dim]
  Tensor bias;    // [classes]
  ProbeVariant variant = ProbeVariant::Standard;
  std::uint64_t encoder_fingerprint = 0;

  std::size_t classes() const { return weight.dim(0); }
  std::size_t representation_dim() const { return weight.dim(1); }

  Tensor logits(const Tensor& representations) const;  // [n, k] -> [n, classes]
  std::vector<std::size_t> predict(const Tensor& representations) const;

  bool operator==(const LinearProbe&) const = default;
};

void to_json(nlohmann::json& j, const LinearProbe& p);
void from_json(const nlohmann::json& j, LinearProbe& p);

LinearProbe initial_probe(std::size_t classes, std::size_t representation_dim, const ProbeConfig& cfg);

// Inputs as seen by a probe of the given variant: raw, lowpass filtered, or
// with N(0, sigma^2) noise then clipped to [0,1]. `stream` selects the noise.
Tensor variant_inputs(const Dataset& data, ProbeVariant variant, const ProbeConfig& cfg, std::uint64_t stream);

// Trains on representations provided per epoch (fixed for standard and
// lowpass inputs, resampled noise for the Gaussian variant).
LinearProbe train_probe_on_representations(const std::function<Tensor(std::size_t epoch)>& representations,
                                           std::span<const std::size_t> labels, std::size_t classes,
                                           const ProbeConfig& cfg, ProbeVariant variant = ProbeVariant::Standard,
                                           std::uint64_t encoder_fingerprint = 0);

LinearProbe train_probe(const Encoder& f, const Dataset& data, ProbeVariant variant, const ProbeConfig& cfg,
                        std::size_t workers = 1);

// Fraction of rows whose label ranks among the k largest logits. A class
// ranks ahead of the label when its logit is larger, or equal with a smaller
// class index.
double top_k_accuracy(const Tensor& logits, std::span<const std::size_t> labels, std::size_t k);
double top_k_accuracy(const LinearProbe& probe, const RepresentationModel& f, const Dataset& data, std::size_t k,
                      ProbeVariant variant, const ProbeConfig& cfg, std::size_t workers = 1);

struct ProbeAccuracy {
  double standard_top1 = 0.0;
  double standard_top5 = 0.0;
  double lowpass_top1 = 0.0;
  double lowpass_top5 = 0.0;
  double lowpass_gap = 0.0;  // standard_top1 - lowpass_top1
};

void to_json(nlohmann::json& j, const ProbeAccuracy& a);

// top-5 falls back to top-min(5, classes).
ProbeAccuracy probe_accuracy(const LinearProbe& standard, const LinearProbe& lowpass, const RepresentationModel& f,
                             const Dataset& eval, const ProbeConfig& cfg, std::size_t workers = 1);

// probe(f(clip(batch))) as a classifier for randomized smoothing.
BatchClassifier probe_classifier(const LinearProbe& probe, const RepresentationModel& f);

// Checkpoint sections tagged "PRB0" (standard), "PRB1" (lowpass), "PRB2"
// (Gaussian noise); the payload is the probe JSON.
std::string probe_section_tag(ProbeVariant v);
void attach_probe(EncoderCheckpoint& checkpoint, const LinearProbe& probe);
// Throws DomainError if the checkpoint holds no probe of that variant.
LinearProbe find_probe(const EncoderCheckpoint& checkpoint, ProbeVariant v);

}  // namespace repr_robust
