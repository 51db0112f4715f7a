#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repr_robust/attack.hpp"
#include "repr_robust/dataset.hpp"
#include "repr_robust/encoder.hpp"

namespace repr_robust {

enum class TrainingLoop { MocoV2, MocoV3 };
enum class AdversarialMode { None, Targeted, Untargeted, BatchLoss };

std::string to_string(TrainingLoop l);
std::string to_string(AdversarialMode m);
TrainingLoop parse_training_loop(const std::string& s);
AdversarialMode parse_adversarial_mode(const std::string& s);

// Inner maximization used while training: eps 0.05, alpha 0.01, 5 iterations.
AttackConfig default_training_attack();

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr = 1.0;
  std::vector<double> lr_drops{0.6, 0.8};  // fractions of `epochs`
  double lr_drop_factor = 0.1;
  double momentum = 0.99;  // key / momentum encoder
  double temperature = 0.2;
  std::size_t queue_size = 256;
  TrainingLoop loop = TrainingLoop::MocoV2;
  AdversarialMode adversarial = AdversarialMode::None;
  AttackConfig attack = default_training_attack();
  std::size_t predictor_hidden = 64;
  std::uint64_t seed = 0;

  double lr_at(std::size_t epoch) const;
  // 0 < momentum <= 1, temperature > 0, queue_size >= batch_size for MocoV2.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Random shift by up to 2 pixels with zero fill, horizontal flip with
// probability 1/2 and uniform pixel jitter of +-0.05, clipped to [0,1].
// Row r of a batch uses stream derive_seed(seed, "augment", r).
Tensor augment(const Tensor& images, std::size_t side, std::size_t channels, std::uint64_t seed);

// Fixed-size ring of detached unit-norm keys.
class KeyQueue {
 public:
  KeyQueue() = default;
  // Seeded unit-norm random rows.
  KeyQueue(std::size_t size, std::size_t dim, std::uint64_t seed);
  KeyQueue(Tensor keys, std::size_t head);

  // Overwrites the oldest rows with `keys` [n, dim]; n must not exceed size().
  void push(const Tensor& keys);

  std::size_t size() const { return keys_.empty() ? 0 : keys_.dim(0); }
  std::size_t head() const { return head_; }
  const Tensor& keys() const { return keys_; }

 private:
  Tensor keys_;
  std::size_t head_ = 0;
};

// Two-layer ReLU MLP head mapping representations to the same width.
class Predictor {
 public:
  Predictor() = default;
  Predictor(std::size_t dim, std::size_t hidden, std::uint64_t seed);
  Predictor(std::size_t dim, std::size_t hidden, std::vector<double> parameters);

  std::size_t dim() const { return dim_; }
  std::size_t hidden() const { return hidden_; }
  std::span<const double> parameters() const { return parameters_; }
  std::span<double> mutable_parameters() { return parameters_; }

  std::vector<Var> bind(Graph& g, bool trainable) const;
  Var forward(const Var& x, std::span<const Var> bound) const;

 private:
  std::size_t dim_ = 0, hidden_ = 0;
  std::vector<double> parameters_;
};

// predictor(encoder(x)), the query model of the MocoV3 loop.
class PredictedEncoder : public RepresentationModel {
 public:
  PredictedEncoder(const Encoder& base, const Predictor& head) : base_(base), head_(head) {}
  std::size_t input_size() const override { return base_.input_size(); }
  std::size_t representation_dim() const override { return head_.dim(); }
  Var forward(Graph& g, const Var& x) const override;

 private:
  const Encoder& base_;
  const Predictor& head_;
};

struct TrainState {
  Encoder query;
  std::vector<double> key_parameters;  // key (MocoV2) or momentum (MocoV3) encoder
  KeyQueue queue;                      // MocoV2 only
  Predictor predictor;                 // MocoV3 only
  std::size_t epochs_done = 0;
  std::size_t steps_done = 0;

  Encoder key_encoder() const { return Encoder(query.spec(), key_parameters); }
};

// Fresh state: key encoder copies the query encoder, queue and predictor are
// seeded from cfg.seed.
TrainState initial_state(const Encoder& query, const TrainConfig& cfg);

// Training state travels in checkpoint sections "KENC", "QUEU", "PRED" and
// "STEP"; missing sections are initialized as in initial_state().
EncoderCheckpoint to_checkpoint(const TrainState& state, nlohmann::json provenance);
TrainState state_from_checkpoint(const EncoderCheckpoint& checkpoint, const TrainConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;  // global epoch index
  double lr = 0.0;
  double mean_loss = 0.0;
  std::size_t steps = 0;
};

void to_json(nlohmann::json& j, const EpochLog& e);
std::string loss_log_csv(const std::vector<EpochLog>& log);

// Provenance recorded with trained checkpoints: the full config plus the
// adversarial mode and attack config at top level.
nlohmann::json training_provenance(const TrainConfig& cfg, const std::vector<EpochLog>& log = {});

// Contrastive loss of one batch step on `state`, without updating it; the
// training objective for the configured loop and adversarial mode.
double step_loss(const TrainState& state, const Tensor& batch, std::size_t side, std::size_t channels,
                 const TrainConfig& cfg, std::uint64_t step_seed);

// One optimization step on `batch`; returns its loss.
double train_step(TrainState& state, const Tensor& batch, std::size_t side, std::size_t channels,
                  const TrainConfig& cfg, double lr, std::uint64_t step_seed);

// cfg.epochs epochs over `data` in seeded order, dropping the last partial
// batch. Epoch and step counters continue from the state.
std::vector<EpochLog> train(TrainState& state, const Dataset& data, const TrainConfig& cfg);

}  // namespace repr_robust
