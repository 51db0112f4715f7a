#include "repr_robust/probe.hpp"

#include <algorithm>
#include <numeric>

#include "repr_robust/autodiff.hpp"
#include "repr_robust/error.hpp"
#include "repr_robust/random.hpp"

namespace repr_robust {

std::string to_string(ProbeVariant v) {
  switch (v) {
    case ProbeVariant::Standard: return "standard";
    case ProbeVariant::Lowpass: return "lowpass";
    case ProbeVariant::GaussianNoise: return "gaussian-noise";
  }
  return "standard";
}

ProbeVariant parse_probe_variant(const std::string& s) {
  if (s == "standard") return ProbeVariant::Standard;
  if (s == "lowpass") return ProbeVariant::Lowpass;
  if (s == "gaussian-noise") return ProbeVariant::GaussianNoise;
  throw DomainError("unknown probe variant '" + s + "' (expected standard, lowpass or gaussian-noise)");
}

double ProbeConfig::lr_at(std::size_t epoch) const {
  double lr_now = lr;
  for (auto d : lr_drops) {
    if (epoch >= d) lr_now *= lr_drop_factor;
  }
  return lr_now;
}

void ProbeConfig::validate() const {
  if (epochs == 0) throw DomainError("probe: epochs must be positive");
  if (!(lr >= 0.0)) throw DomainError("probe: lr must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("probe: momentum must lie in [0,1)");
  if (batch_size == 0) throw DomainError("probe: batch_size must be positive");
  if (!(init_scale >= 0.0)) throw DomainError("probe: init_scale must be non-negative");
  if (!(noise_sigma >= 0.0)) throw DomainError("probe: noise_sigma must be non-negative");
}

void to_json(nlohmann::json& j, const ProbeConfig& c) {
  j = {{"epochs", c.epochs},
       {"lr", c.lr},
       {"lr_drops", c.lr_drops},
       {"lr_drop_factor", c.lr_drop_factor},
       {"momentum", c.momentum},
       {"batch_size", c.batch_size},
       {"init_scale", c.init_scale},
       {"noise_sigma", c.noise_sigma},
       {"lowpass_fraction", c.lowpass_fraction},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ProbeConfig& c) {
  const ProbeConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.lr = j.value("lr", d.lr);
  c.lr_drops = j.value("lr_drops", d.lr_drops);
  c.lr_drop_factor = j.value("lr_drop_factor", d.lr_drop_factor);
  c.momentum = j.value("momentum", d.momentum);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.init_scale = j.value("init_scale", d.init_scale);
  c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  c.lowpass_fraction = j.value("lowpass_fraction", d.lowpass_fraction);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

Tensor LinearProbe::logits(const Tensor& representations) const {
  const Tensor& r = representations;
  if (r.rank() != 2 || r.dim(1) != representation_dim()) {
    throw ShapeError("probe: representations " + to_string(r.shape()) + " do not have width " +
                     std::to_string(representation_dim()));
  }
  const std::size_t n = r.dim(0), c = classes(), k = representation_dim();
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < c; ++a) {
      double s = bias[a];
      for (std::size_t t = 0; t < k; ++t) s += weight.at(a, t) * r.at(i, t);
      out.at(i, a) = s;
    }
  }
  return out;
}

std::vector<std::size_t> LinearProbe::predict(const Tensor& representations) const {
  const Tensor z = logits(representations);
  std::vector<std::size_t> out(z.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = z.row_span(i);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

namespace {

nlohmann::json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.values()}}; }

Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

}  // namespace

void to_json(nlohmann::json& j, const LinearProbe& p) {
  j = {{"weight", tensor_json(p.weight)},
       {"bias", tensor_json(p.bias)},
       {"variant", to_string(p.variant)},
       {"encoder_fingerprint", p.encoder_fingerprint}};
}

void from_json(const nlohmann::json& j, LinearProbe& p) {
  p.weight = tensor_from_json(j.at("weight"));
  p.bias = tensor_from_json(j.at("bias"));
  p.variant = parse_probe_variant(j.at("variant").get<std::string>());
  p.encoder_fingerprint = j.at("encoder_fingerprint").get<std::uint64_t>();
  if (p.weight.rank() != 2 || p.bias.rank() != 1 || p.bias.dim(0) != p.weight.dim(0)) {
    throw ShapeError("probe: weight and bias shapes disagree");
  }
}

LinearProbe initial_probe(std::size_t classes, std::size_t representation_dim, const ProbeConfig& cfg) {
  if (classes < 2) throw DomainError("probe: need at least 2 classes");
  LinearProbe p;
  p.weight = Tensor({classes, representation_dim});
  p.bias = Tensor({classes});
  Rng rng(derive_seed(cfg.seed, "probe-init"));
  for (double& w : p.weight.data()) w = cfg.init_scale * rng.normal();
  return p;
}

Tensor variant_inputs(const Dataset& data, ProbeVariant variant, const ProbeConfig& cfg, std::uint64_t stream) {
  switch (variant) {
    case ProbeVariant::Standard: return data.images;
    case ProbeVariant::Lowpass: return lowpass_rows(data.images, data.side, data.channels, cfg.lowpass_fraction);
    case ProbeVariant::GaussianNoise: {
      Tensor out = data.images;
      for (std::size_t r = 0; r < out.dim(0); ++r) {
        Rng rng(derive_seed(stream, "probe-noise-row", r));
        for (double& v : out.row_span(r)) v = std::clamp(v + cfg.noise_sigma * rng.normal(), 0.0, 1.0);
      }
      return out;
    }
  }
  return data.images;
}

LinearProbe train_probe_on_representations(const std::function<Tensor(std::size_t epoch)>& representations,
                                           std::span<const std::size_t> labels, std::size_t classes,
                                           const ProbeConfig& cfg, ProbeVariant variant,
                                           std::uint64_t encoder_fingerprint) {
  cfg.validate();
  if (classes < 2) throw DomainError("probe: need at least 2 classes");
  for (auto l : labels) {
    if (l >= classes) throw DomainError("probe: label " + std::to_string(l) + " out of range");
  }
  const std::size_t n = labels.size();
  if (n == 0) throw DomainError("probe: empty training set");

  LinearProbe probe;
  std::vector<double> vel_w, vel_b;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Tensor reps = representations(epoch);
    if (reps.rank() != 2 || reps.dim(0) != n) {
      throw ShapeError("probe: representations " + to_string(reps.shape()) + " do not match " + std::to_string(n) +
                       " labels");
    }
    if (epoch == 0) {
      probe = initial_probe(classes, reps.dim(1), cfg);
      vel_w.assign(probe.weight.size(), 0.0);
      vel_b.assign(probe.bias.size(), 0.0);
    }
    const double lr = cfg.lr_at(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, "probe-shuffle", epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    const std::size_t k = reps.dim(1);
    for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      Tensor batch({hi - lo, k});
      std::vector<std::size_t> y(hi - lo);
      for (std::size_t b = lo; b < hi; ++b) {
        std::copy_n(reps.row_span(order[b]).begin(), k, batch.row_span(b - lo).begin());
        y[b - lo] = labels[order[b]];
      }
      Graph g;
      const Var w = g.leaf(probe.weight);
      const Var bias = g.leaf(probe.bias);
      const Var z = add_bias(matmul(g.constant(batch), transpose(w)), bias);
      const Var loss = -mean(pick(log_softmax(z), y));
      g.backward(loss);
      const Tensor gw = g.grad(w), gb = g.grad(bias);
      for (std::size_t t = 0; t < vel_w.size(); ++t) {
        vel_w[t] = cfg.momentum * vel_w[t] + gw[t];
        probe.weight[t] -= lr * vel_w[t];
      }
      for (std::size_t t = 0; t < vel_b.size(); ++t) {
        vel_b[t] = cfg.momentum * vel_b[t] + gb[t];
        probe.bias[t] -= lr * vel_b[t];
      }
    }
  }
  probe.variant = variant;
  probe.encoder_fingerprint = encoder_fingerprint;
  return probe;
}

LinearProbe train_probe(const Encoder& f, const Dataset& data, ProbeVariant variant, const ProbeConfig& cfg,
                        std::size_t workers) {
  Tensor fixed;
  if (variant != ProbeVariant::GaussianNoise) fixed = f.evaluate_rows(variant_inputs(data, variant, cfg, 0), workers);
  const auto reps = [&](std::size_t epoch) {
    if (variant != ProbeVariant::GaussianNoise) return fixed;
    return f.evaluate_rows(variant_inputs(data, variant, cfg, derive_seed(cfg.seed, "probe-train-noise", epoch)),
                           workers);
  };
  return train_probe_on_representations(reps, data.labels, data.classes, cfg, variant, f.fingerprint());
}

double top_k_accuracy(const Tensor& logits, std::span<const std::size_t> labels, std::size_t k) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("top-k: logits " + to_string(logits.shape()) + " do not match " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t classes = logits.dim(1);
  if (k == 0 || k > classes) {
    throw DomainError("top-k: k = " + std::to_string(k) + " must lie in [1, " + std::to_string(classes) + "]");
  }
  if (labels.empty()) throw DomainError("top-k: no samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t y = labels[i];
    if (y >= classes) throw DomainError("top-k: label out of range");
    const double zy = logits.at(i, y);
    std::size_t ahead = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double zc = logits.at(i, c);
      if (zc > zy || (zc == zy && c < y)) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double top_k_accuracy(const LinearProbe& probe, const RepresentationModel& f, const Dataset& data, std::size_t k,
                      ProbeVariant variant, const ProbeConfig& cfg, std::size_t workers) {
  const Tensor inputs = variant_inputs(data, variant, cfg, derive_seed(cfg.seed, "probe-eval-noise"));
  return top_k_accuracy(probe.logits(f.evaluate_rows(inputs, workers)), data.labels, k);
}

void to_json(nlohmann::json& j, const ProbeAccuracy& a) {
  j = {{"standard_top1", a.standard_top1},
       {"standard_top5", a.standard_top5},
       {"lowpass_top1", a.lowpass_top1},
       {"lowpass_top5", a.lowpass_top5},
       {"lowpass_gap", a.lowpass_gap}};
}

ProbeAccuracy probe_accuracy(const LinearProbe& standard, const LinearProbe& lowpass, const RepresentationModel& f,
                             const Dataset& eval, const ProbeConfig& cfg, std::size_t workers) {
  const std::size_t k5 = std::min<std::size_t>(5, eval.classes);
  const Tensor clean = standard.logits(f.evaluate_rows(eval.images, workers));
  const Tensor low = lowpass.logits(
      f.evaluate_rows(variant_inputs(eval, ProbeVariant::Lowpass, cfg, 0), workers));
  ProbeAccuracy a;
  a.standard_top1 = top_k_accuracy(clean, eval.labels, 1);
  a.standard_top5 = top_k_accuracy(clean, eval.labels, k5);
  a.lowpass_top1 = top_k_accuracy(low, eval.labels, 1);
  a.lowpass_top5 = top_k_accuracy(low, eval.labels, k5);
  a.lowpass_gap = a.standard_top1 - a.lowpass_top1;
  return a;
}

BatchClassifier probe_classifier(const LinearProbe& probe, const RepresentationModel& f) {
  return [&probe, &f](const Tensor& batch) {
    Tensor clipped = batch;
    for (double& v : clipped.data()) v = std::clamp(v, 0.0, 1.0);
    const auto labels = probe.predict(f.evaluate(clipped));
    return std::vector<int>(labels.begin(), labels.end());
  };
}

std::string probe_section_tag(ProbeVariant v) {
  switch (v) {
    case ProbeVariant::Standard: return "PRB0";
    case ProbeVariant::Lowpass: return "PRB1";
    case ProbeVariant::GaussianNoise: return "PRB2";
  }
  return "PRB0";
}

void attach_probe(EncoderCheckpoint& checkpoint, const LinearProbe& probe) {
  const std::string tag = probe_section_tag(probe.variant);
  const std::string bytes = nlohmann::json(probe).dump();
  std::erase_if(checkpoint.sections, [&](const CheckpointSection& s) { return s.tag == tag; });
  checkpoint.sections.push_back({tag, std::vector<std::uint8_t>(bytes.begin(), bytes.end())});
}

LinearProbe find_probe(const EncoderCheckpoint& checkpoint, ProbeVariant v) {
  const std::string tag = probe_section_tag(v);
  for (const auto& s : checkpoint.sections) {
    if (s.tag != tag) continue;
    try {
      return nlohmann::json::parse(s.payload.begin(), s.payload.end()).get<LinearProbe>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(FormatError::Kind::BadHeader, "probe section " + tag + ": " + e.what());
    }
  }
  throw DomainError("checkpoint holds no " + to_string(v) + " probe");
}

}  // namespace repr_robust
