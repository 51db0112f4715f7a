#include "repr_robust/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "repr_robust/error.hpp"
#include "repr_robust/losses.hpp"
#include "repr_robust/random.hpp"

namespace repr_robust {

std::string to_string(TrainingLoop l) { return l == TrainingLoop::MocoV2 ? "moco-v2" : "moco-v3"; }

std::string to_string(AdversarialMode m) {
  switch (m) {
    case AdversarialMode::None: return "none";
    case AdversarialMode::Targeted: return "targeted";
    case AdversarialMode::Untargeted: return "untargeted";
    case AdversarialMode::BatchLoss: return "batch-loss";
  }
  return "none";
}

TrainingLoop parse_training_loop(const std::string& s) {
  if (s == "moco-v2") return TrainingLoop::MocoV2;
  if (s == "moco-v3") return TrainingLoop::MocoV3;
  throw DomainError("unknown training loop '" + s + "' (expected moco-v2 or moco-v3)");
}

AdversarialMode parse_adversarial_mode(const std::string& s) {
  if (s == "none") return AdversarialMode::None;
  if (s == "targeted") return AdversarialMode::Targeted;
  if (s == "untargeted") return AdversarialMode::Untargeted;
  if (s == "batch-loss") return AdversarialMode::BatchLoss;
  throw DomainError("unknown adversarial mode '" + s + "' (expected none, targeted, untargeted or batch-loss)");
}

AttackConfig default_training_attack() {
  AttackConfig c;
  c.epsilon = 0.05;
  c.alpha = 0.01;
  c.iterations = 5;
  return c;
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double out = lr;
  for (double f : lr_drops) {
    if (static_cast<double>(epoch) >= f * static_cast<double>(epochs)) out *= lr_drop_factor;
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw DomainError("train: epochs must be positive");
  if (batch_size < 2) throw DomainError("train: batch_size must be at least 2");
  if (!(lr >= 0.0)) throw DomainError("train: lr must be non-negative");
  if (!(momentum > 0.0 && momentum <= 1.0)) throw DomainError("train: momentum must lie in (0, 1]");
  if (!(temperature > 0.0)) throw DomainError("train: temperature must be positive");
  if (loop == TrainingLoop::MocoV2 && queue_size < batch_size) {
    throw DomainError("train: queue_size " + std::to_string(queue_size) + " is smaller than batch_size " +
                      std::to_string(batch_size));
  }
  if (loop == TrainingLoop::MocoV3 && predictor_hidden == 0) throw DomainError("train: predictor_hidden must be positive");
  if (adversarial != AdversarialMode::None) attack.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"lr_drops", c.lr_drops},
       {"lr_drop_factor", c.lr_drop_factor},
       {"momentum", c.momentum},
       {"temperature", c.temperature},
       {"queue_size", c.queue_size},
       {"loop", to_string(c.loop)},
       {"adversarial", to_string(c.adversarial)},
       {"attack", c.attack},
       {"predictor_hidden", c.predictor_hidden},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.lr_drops = j.value("lr_drops", d.lr_drops);
  c.lr_drop_factor = j.value("lr_drop_factor", d.lr_drop_factor);
  c.momentum = j.value("momentum", d.momentum);
  c.temperature = j.value("temperature", d.temperature);
  c.queue_size = j.value("queue_size", d.queue_size);
  c.loop = parse_training_loop(j.value("loop", to_string(d.loop)));
  c.adversarial = parse_adversarial_mode(j.value("adversarial", to_string(d.adversarial)));
  c.attack = j.contains("attack") ? j.at("attack").get<AttackConfig>() : d.attack;
  c.predictor_hidden = j.value("predictor_hidden", d.predictor_hidden);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

Tensor augment(const Tensor& images, std::size_t side, std::size_t channels, std::uint64_t seed) {
  const bool single = images.rank() == 1;
  const Tensor x = single ? images.reshaped({1, images.size()}) : images;
  if (x.rank() != 2 || x.dim(1) != side * side * channels) {
    throw ShapeError("augment: " + to_string(images.shape()) + " does not hold " + std::to_string(channels) + "x" +
                     std::to_string(side) + "x" + std::to_string(side) + " images");
  }
  Tensor out(x.shape());
  const auto s = static_cast<std::ptrdiff_t>(side);
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    Rng rng(derive_seed(seed, "augment", r));
    const auto dx = static_cast<std::ptrdiff_t>(rng.below(5)) - 2;
    const auto dy = static_cast<std::ptrdiff_t>(rng.below(5)) - 2;
    const bool flip = rng.uniform() < 0.5;
    const auto in = x.row_span(r);
    auto o = out.row_span(r);
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const std::size_t base = ch * side * side;
      for (std::ptrdiff_t i = 0; i < s; ++i) {
        for (std::ptrdiff_t j = 0; j < s; ++j) {
          const std::ptrdiff_t si = i - dy;
          std::ptrdiff_t sj = j - dx;
          if (flip) sj = s - 1 - sj;
          double v = 0.0;
          if (si >= 0 && si < s && sj >= 0 && sj < s) v = in[base + static_cast<std::size_t>(si * s + sj)];
          o[base + static_cast<std::size_t>(i * s + j)] = v;
        }
      }
    }
    for (double& v : o) v = std::clamp(v + rng.uniform(-0.05, 0.05), 0.0, 1.0);
  }
  return single ? out.reshaped({out.size()}) : out;
}

KeyQueue::KeyQueue(std::size_t size, std::size_t dim, std::uint64_t seed) : keys_({size, dim}) {
  Rng rng(derive_seed(seed, "queue"));
  for (std::size_t r = 0; r < size; ++r) {
    auto row = keys_.row_span(r);
    double n = 0.0;
    for (double& v : row) {
      v = rng.normal();
      n += v * v;
    }
    n = std::sqrt(n);
    for (double& v : row) v /= n;
  }
}

KeyQueue::KeyQueue(Tensor keys, std::size_t head) : keys_(std::move(keys)), head_(head) {
  if (keys_.rank() != 2 || head_ >= keys_.dim(0)) throw ShapeError("queue: bad key block or head");
}

void KeyQueue::push(const Tensor& keys) {
  if (keys.rank() != 2 || keys.dim(1) != keys_.dim(1) || keys.dim(0) > size()) {
    throw ShapeError("queue: cannot enqueue " + to_string(keys.shape()) + " into " + to_string(keys_.shape()));
  }
  for (std::size_t r = 0; r < keys.dim(0); ++r) {
    std::copy_n(keys.row_span(r).begin(), keys.dim(1), keys_.row_span(head_).begin());
    head_ = (head_ + 1) % size();
  }
}

Predictor::Predictor(std::size_t dim, std::size_t hidden, std::uint64_t seed)
    : dim_(dim), hidden_(hidden), parameters_(2 * dim * hidden + hidden + dim, 0.0) {
  Rng rng(derive_seed(seed, "predictor"));
  const double bound = std::sqrt(6.0 / static_cast<double>(dim + hidden));
  for (std::size_t i = 0; i < dim * hidden; ++i) parameters_[i] = rng.uniform(-bound, bound);
  const std::size_t w2 = dim * hidden + hidden;
  for (std::size_t i = 0; i < dim * hidden; ++i) parameters_[w2 + i] = rng.uniform(-bound, bound);
}

Predictor::Predictor(std::size_t dim, std::size_t hidden, std::vector<double> parameters)
    : dim_(dim), hidden_(hidden), parameters_(std::move(parameters)) {
  if (parameters_.size() != 2 * dim * hidden + hidden + dim) throw ShapeError("predictor: wrong parameter count");
}

std::vector<Var> Predictor::bind(Graph& g, bool trainable) const {
  const Shape shapes[] = {{dim_, hidden_}, {hidden_}, {hidden_, dim_}, {dim_}};
  std::vector<Var> out;
  std::size_t offset = 0;
  for (const auto& s : shapes) {
    const std::size_t n = shape_size(s);
    Tensor t(s, std::vector<double>(parameters_.begin() + static_cast<std::ptrdiff_t>(offset),
                                    parameters_.begin() + static_cast<std::ptrdiff_t>(offset + n)));
    out.push_back(trainable ? g.leaf(std::move(t)) : g.constant(std::move(t)));
    offset += n;
  }
  return out;
}

Var Predictor::forward(const Var& x, std::span<const Var> bound) const {
  return add_bias(matmul(relu(add_bias(matmul(x, bound[0]), bound[1])), bound[2]), bound[3]);
}

Var PredictedEncoder::forward(Graph& g, const Var& x) const {
  const auto head = head_.bind(g, false);
  return head_.forward(base_.forward(g, x), head);
}

TrainState initial_state(const Encoder& query, const TrainConfig& cfg) {
  cfg.validate();
  TrainState s{query, std::vector<double>(query.parameters().begin(), query.parameters().end()), {}, {}, 0, 0};
  const std::size_t dim = query.representation_dim();
  if (cfg.loop == TrainingLoop::MocoV2) s.queue = KeyQueue(cfg.queue_size, dim, cfg.seed);
  else s.predictor = Predictor(dim, cfg.predictor_hidden, cfg.seed);
  return s;
}

namespace {

std::vector<std::uint8_t> pack_doubles(std::span<const double> v) {
  std::vector<std::uint8_t> out(v.size() * sizeof(double));
  if (!v.empty()) std::memcpy(out.data(), v.data(), out.size());
  return out;
}

std::vector<double> unpack_doubles(const std::vector<std::uint8_t>& b) {
  if (b.size() % sizeof(double)) throw FormatError(FormatError::Kind::BadHeader, "section is not a double array");
  std::vector<double> out(b.size() / sizeof(double));
  if (!out.empty()) std::memcpy(out.data(), b.data(), b.size());
  return out;
}

std::vector<std::uint8_t> pack_json(const nlohmann::json& j) {
  const std::string s = j.dump();
  return {s.begin(), s.end()};
}

const CheckpointSection* find_section(const EncoderCheckpoint& c, const char* tag) {
  for (const auto& s : c.sections) {
    if (s.tag == tag) return &s;
  }
  return nullptr;
}

}  // namespace

EncoderCheckpoint to_checkpoint(const TrainState& state, nlohmann::json provenance) {
  EncoderCheckpoint c = EncoderCheckpoint::from(state.query, std::move(provenance));
  c.sections.push_back({"KENC", pack_doubles(state.key_parameters)});
  if (state.queue.size()) {
    c.sections.push_back({"QUEU", pack_json({{"size", state.queue.size()},
                                             {"dim", state.queue.keys().dim(1)},
                                             {"head", state.queue.head()},
                                             {"keys", state.queue.keys().values()}})});
  }
  if (state.predictor.dim()) {
    c.sections.push_back({"PRED", pack_json({{"dim", state.predictor.dim()},
                                             {"hidden", state.predictor.hidden()},
                                             {"parameters", std::vector<double>(state.predictor.parameters().begin(),
                                                                                state.predictor.parameters().end())}})});
  }
  c.sections.push_back({"STEP", pack_json({{"epochs", state.epochs_done}, {"steps", state.steps_done}})});
  return c;
}

TrainState state_from_checkpoint(const EncoderCheckpoint& checkpoint, const TrainConfig& cfg) {
  TrainState s = initial_state(checkpoint.encoder(), cfg);
  try {
    if (const auto* k = find_section(checkpoint, "KENC")) {
      s.key_parameters = unpack_doubles(k->payload);
      if (s.key_parameters.size() != s.query.parameters().size()) {
        throw FormatError(FormatError::Kind::CountMismatch, "key encoder section has the wrong size");
      }
    }
    if (const auto* q = find_section(checkpoint, "QUEU"); q && cfg.loop == TrainingLoop::MocoV2) {
      const auto j = nlohmann::json::parse(q->payload.begin(), q->payload.end());
      const auto size = j.at("size").get<std::size_t>(), dim = j.at("dim").get<std::size_t>();
      if (size == cfg.queue_size && dim == s.query.representation_dim()) {
        s.queue = KeyQueue(Tensor({size, dim}, j.at("keys").get<std::vector<double>>()), j.at("head").get<std::size_t>());
      }
    }
    if (const auto* p = find_section(checkpoint, "PRED"); p && cfg.loop == TrainingLoop::MocoV3) {
      const auto j = nlohmann::json::parse(p->payload.begin(), p->payload.end());
      s.predictor = Predictor(j.at("dim").get<std::size_t>(), j.at("hidden").get<std::size_t>(),
                              j.at("parameters").get<std::vector<double>>());
    }
    if (const auto* t = find_section(checkpoint, "STEP")) {
      const auto j = nlohmann::json::parse(t->payload.begin(), t->payload.end());
      s.epochs_done = j.at("epochs").get<std::size_t>();
      s.steps_done = j.at("steps").get<std::size_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::BadHeader, std::string("training state: ") + e.what());
  }
  return s;
}

void to_json(nlohmann::json& j, const EpochLog& e) {
  j = {{"epoch", e.epoch}, {"lr", e.lr}, {"mean_loss", e.mean_loss}, {"steps", e.steps}};
}

std::string loss_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,lr,mean_loss,steps\n";
  for (const auto& e : log) os << e.epoch << ',' << e.lr << ',' << e.mean_loss << ',' << e.steps << '\n';
  return os.str();
}

nlohmann::json training_provenance(const TrainConfig& cfg, const std::vector<EpochLog>& log) {
  nlohmann::json j = {{"config", cfg},
                      {"loop", to_string(cfg.loop)},
                      {"adversarial_mode", to_string(cfg.adversarial)},
                      {"attack", cfg.attack}};
  if (!log.empty()) j["loss_log"] = log;
  return j;
}

namespace {

Tensor roll_by_one(const Tensor& t) {
  const std::size_t n = t.dim(0), k = t.dim(1);
  Tensor out(t.shape());
  for (std::size_t i = 0; i < n; ++i) std::copy_n(t.row_span((i + n - 1) % n).begin(), k, out.row_span(i).begin());
  return out;
}

Tensor normalized(const Tensor& t) {
  Graph g;
  return normalize_rows(g.constant(t)).value();
}

// Adversarial counterpart of `clean` for the configured mode; `model` is the
// query model the attack sees.
Tensor adversarial_batch(const RepresentationModel& model, const Tensor& clean, const Tensor& other_view_queries,
                         const std::function<LossPlugin()>& batch_loss, const TrainConfig& cfg,
                         std::uint64_t seed) {
  AttackConfig ac = cfg.attack;
  ac.seed = derive_seed(seed, "train-attack");
  switch (cfg.adversarial) {
    case AdversarialMode::Targeted: {
      ac.mode = AttackMode::Targeted;
      const Tensor targets = roll_by_one(other_view_queries);
      return u_pgd_batch(model, clean, ac, &targets).adversarial;
    }
    case AdversarialMode::Untargeted:
      ac.mode = AttackMode::Untargeted;
      return u_pgd_batch(model, clean, ac).adversarial;
    case AdversarialMode::BatchLoss: return loss_attack_batch(model, clean, batch_loss(), ac).adversarial;
    case AdversarialMode::None: break;
  }
  return {};
}

struct Views {
  Tensor a, b;
};

Views make_views(const Tensor& batch, std::size_t side, std::size_t channels, std::uint64_t seed) {
  return {augment(batch, side, channels, derive_seed(seed, "view-q")),
          augment(batch, side, channels, derive_seed(seed, "view-k"))};
}

// MocoV2: loss on `g` with the query parameters bound as `params`.
Var moco_v2_loss(Graph& g, const TrainState& s, std::span<const Var> params, const Views& v, const TrainConfig& cfg,
                 std::uint64_t seed, Tensor& keys_out) {
  const Encoder key = s.key_encoder();
  keys_out = normalized(key.evaluate(v.b));
  Tensor queries_in = v.a;
  Tensor positives = keys_out;
  if (cfg.adversarial != AdversarialMode::None) {
    const Tensor adv = adversarial_batch(
        s.query, v.a, s.query.evaluate(v.b),
        [&] { return plugins::queue_info_nce(keys_out, s.queue.keys(), cfg.temperature); }, cfg, seed);
    const std::size_t n = v.a.dim(0), d = v.a.dim(1), k = keys_out.dim(1);
    queries_in = Tensor({2 * n, d});
    std::copy(v.a.values().begin(), v.a.values().end(), queries_in.data().begin());
    std::copy(adv.values().begin(), adv.values().end(), queries_in.data().begin() + static_cast<std::ptrdiff_t>(n * d));
    positives = Tensor({2 * n, k});
    std::copy(keys_out.values().begin(), keys_out.values().end(), positives.data().begin());
    std::copy(keys_out.values().begin(), keys_out.values().end(),
              positives.data().begin() + static_cast<std::ptrdiff_t>(n * k));
  }
  const Var q = normalize_rows(s.query.forward(g, g.constant(queries_in), params));
  return info_nce(q, g.constant(positives), g.constant(s.queue.keys()), cfg.temperature);
}

// MocoV3 with the momentum update already applied to `s.key_parameters`.
Var moco_v3_loss(Graph& g, const TrainState& s, std::span<const Var> base, std::span<const Var> head,
                 const Views& v, const TrainConfig& cfg, const Tensor& adv) {
  const Encoder momentum = s.key_encoder();
  const auto q = [&](const Tensor& x) { return s.predictor.forward(s.query.forward(g, g.constant(x), base), head); };
  const auto k = [&](const Tensor& x) { return g.constant(momentum.evaluate(x)); };
  const double t = cfg.temperature;
  const Var q0 = q(v.a), q1 = q(v.b);
  Var loss = pairwise_contrastive(q0, k(v.b), t) + pairwise_contrastive(q1, k(v.a), t);
  if (cfg.adversarial != AdversarialMode::None) {
    loss = loss + pairwise_contrastive(q(adv), k(v.b), t) + pairwise_contrastive(q1, k(adv), t);
  }
  return loss;
}

Tensor moco_v3_adversarial(const TrainState& s, const Views& v, const TrainConfig& cfg, std::uint64_t seed) {
  if (cfg.adversarial == AdversarialMode::None) return {};
  const PredictedEncoder model(s.query, s.predictor);
  const Tensor other = model.evaluate(v.b);
  return adversarial_batch(
      model, v.a, other, [&] { return plugins::batch_info_nce(normalized(other), cfg.temperature); }, cfg, seed);
}

void momentum_update(std::vector<double>& key, std::span<const double> query, double m) {
  for (std::size_t i = 0; i < key.size(); ++i) key[i] = m * key[i] + (1.0 - m) * query[i];
}

void check_batch(const TrainState& s, const Tensor& batch) {
  if (batch.rank() != 2 || batch.dim(1) != s.query.input_size() || batch.dim(0) < 2) {
    throw ShapeError("train: batch " + to_string(batch.shape()) + " does not fit the encoder");
  }
}

}  // namespace

double step_loss(const TrainState& state, const Tensor& batch, std::size_t side, std::size_t channels,
                 const TrainConfig& cfg, std::uint64_t step_seed) {
  check_batch(state, batch);
  const Views v = make_views(batch, side, channels, step_seed);
  Graph g;
  if (cfg.loop == TrainingLoop::MocoV2) {
    Tensor keys;
    return moco_v2_loss(g, state, state.query.bind(g, false), v, cfg, step_seed, keys).value().item();
  }
  const Tensor adv = moco_v3_adversarial(state, v, cfg, step_seed);
  TrainState s = state;
  momentum_update(s.key_parameters, s.query.parameters(), cfg.momentum);
  return moco_v3_loss(g, s, s.query.bind(g, false), s.predictor.bind(g, false), v, cfg, adv).value().item();
}

double train_step(TrainState& state, const Tensor& batch, std::size_t side, std::size_t channels,
                  const TrainConfig& cfg, double lr, std::uint64_t step_seed) {
  check_batch(state, batch);
  const Views v = make_views(batch, side, channels, step_seed);
  Graph g;
  const auto params = state.query.bind(g, true);
  double loss = 0.0;
  if (cfg.loop == TrainingLoop::MocoV2) {
    Tensor keys;
    const Var l = moco_v2_loss(g, state, params, v, cfg, step_seed, keys);
    loss = l.value().item();
    g.backward(l);
    const auto grad = state.query.gather_gradient(g, params);
    auto p = state.query.mutable_parameters();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * grad[i];
    momentum_update(state.key_parameters, state.query.parameters(), cfg.momentum);
    state.queue.push(keys);
  } else {
    const Tensor adv = moco_v3_adversarial(state, v, cfg, step_seed);
    momentum_update(state.key_parameters, state.query.parameters(), cfg.momentum);
    const auto head = state.predictor.bind(g, true);
    const Var l = moco_v3_loss(g, state, params, head, v, cfg, adv);
    loss = l.value().item();
    g.backward(l);
    const auto grad = state.query.gather_gradient(g, params);
    auto p = state.query.mutable_parameters();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * grad[i];
    auto hp = state.predictor.mutable_parameters();
    std::size_t offset = 0;
    for (const auto& h : head) {
      const Tensor gr = g.grad(h);
      for (std::size_t i = 0; i < gr.size(); ++i) hp[offset + i] -= lr * gr[i];
      offset += gr.size();
    }
  }
  ++state.steps_done;
  return loss;
}

std::vector<EpochLog> train(TrainState& state, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() < cfg.batch_size) throw DomainError("train: dataset smaller than one batch");
  if (data.images.dim(1) != state.query.input_size()) throw ShapeError("train: dataset does not fit the encoder");
  std::vector<EpochLog> log;
  std::vector<std::size_t> order(data.size());
  const std::size_t d = data.images.dim(1);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const std::size_t global = state.epochs_done;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, "epoch-order", global));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    EpochLog entry{global, cfg.lr_at(e), 0.0, 0};
    for (std::size_t lo = 0; lo + cfg.batch_size <= order.size(); lo += cfg.batch_size) {
      Tensor batch({cfg.batch_size, d});
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        std::copy_n(data.images.row_span(order[lo + b]).begin(), d, batch.row_span(b).begin());
      }
      entry.mean_loss += train_step(state, batch, data.side, data.channels, cfg, entry.lr,
                                    derive_seed(cfg.seed, "step", state.steps_done));
      ++entry.steps;
    }
    entry.mean_loss /= static_cast<double>(entry.steps);
    log.push_back(entry);
    ++state.epochs_done;
  }
  return log;
}

}  // namespace repr_robust
