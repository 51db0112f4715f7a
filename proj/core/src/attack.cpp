#include "repr_robust/attack.hpp"

#include <algorithm>
#include <cmath>

#include "repr_robust/error.hpp"
#include "repr_robust/losses.hpp"
#include "repr_robust/random.hpp"

namespace repr_robust {

std::string to_string(AttackMode m) { return m == AttackMode::Untargeted ? "untargeted" : "targeted"; }

std::string to_string(AttackInit i) {
  switch (i) {
    case AttackInit::RandomUniform: return "random-uniform";
    case AttackInit::EtaPerturbation: return "eta-perturbation";
    case AttackInit::None: return "none";
  }
  return "none";
}

AttackMode parse_attack_mode(const std::string& s) {
  if (s == "untargeted") return AttackMode::Untargeted;
  if (s == "targeted") return AttackMode::Targeted;
  throw DomainError("unknown attack mode '" + s + "'");
}

AttackInit parse_attack_init(const std::string& s) {
  if (s == "random-uniform") return AttackInit::RandomUniform;
  if (s == "eta-perturbation") return AttackInit::EtaPerturbation;
  if (s == "none") return AttackInit::None;
  throw DomainError("unknown attack init '" + s + "'");
}

void AttackConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= epsilon && epsilon <= 1.0)) {
    throw DomainError("attack config: need 0 < alpha <= epsilon <= 1 (alpha=" + std::to_string(alpha) +
                      ", epsilon=" + std::to_string(epsilon) + ")");
  }
  if (iterations < 1) throw DomainError("attack config: iterations must be >= 1");
  if (!(eta_scale >= 0.0)) throw DomainError("attack config: eta_scale must be >= 0");
  if (divergence.kind == DivergenceKind::KlSoftmax && !(divergence.temperature > 0.0)) {
    throw DomainError("attack config: kl-softmax temperature must be positive");
  }
}

void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = nlohmann::json{{"epsilon", c.epsilon},
                     {"alpha", c.alpha},
                     {"iterations", c.iterations},
                     {"mode", to_string(c.mode)},
                     {"init", to_string(c.init)},
                     {"eta_scale", c.eta_scale},
                     {"divergence", to_string(c.divergence.kind)},
                     {"temperature", c.divergence.temperature},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, AttackConfig& c) {
  const AttackConfig d;
  c.epsilon = j.value("epsilon", d.epsilon);
  c.alpha = j.value("alpha", d.alpha);
  c.iterations = j.value("iterations", d.iterations);
  c.mode = parse_attack_mode(j.value("mode", to_string(d.mode)));
  c.init = parse_attack_init(j.value("init", to_string(d.init)));
  c.eta_scale = j.value("eta_scale", d.eta_scale);
  c.divergence.kind = parse_divergence_kind(j.value("divergence", to_string(d.divergence.kind)));
  c.divergence.temperature = j.value("temperature", d.divergence.temperature);
  c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const AttackResult& r) {
  j = nlohmann::json{{"adversarial", r.adversarial.values()}, {"trajectory", r.trajectory}, {"config", r.config}};
}

Tensor clip(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Tensor project_linf(const Tensor& x_hat, const Tensor& x, double epsilon) {
  if (x_hat.shape() != x.shape()) {
    throw ShapeError("project_linf: " + to_string(x_hat.shape()) + " vs " + to_string(x.shape()));
  }
  Tensor out = x_hat;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], x[i] - epsilon, x[i] + epsilon);
  return out;
}

namespace {

// [n, d] view of a single image or a batch.
Tensor as_batch(const Tensor& x, std::size_t input_size) {
  if (x.rank() == 1 && x.size() == input_size) return x.reshaped({1, input_size});
  if (x.rank() == 2 && x.dim(1) == input_size) return x;
  throw ShapeError("attack: input " + to_string(x.shape()) + " does not match model input size " +
                   std::to_string(input_size));
}

Tensor anchor_batch(const Tensor* target, std::size_t rows, std::size_t dim, const char* what) {
  if (target == nullptr) throw DomainError(std::string(what) + ": targeted mode requires a target representation");
  if (target->rank() == 1 && rows == 1 && target->size() == dim) return target->reshaped({1, dim});
  if (target->rank() == 2 && target->dim(0) == rows && target->dim(1) == dim) return *target;
  throw ShapeError(std::string(what) + ": target " + to_string(target->shape()) + " for " + std::to_string(rows) +
                   " inputs of representation dim " + std::to_string(dim));
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// x_hat <- clip(project(x_hat + step * sign(grad), x, eps))
void step_project_clip(Tensor& x_hat, const Tensor& grad, const Tensor& x, double step, double epsilon) {
  for (std::size_t i = 0; i < x_hat.size(); ++i) {
    const double moved = x_hat[i] + step * sign(grad[i]);
    x_hat[i] = std::clamp(std::clamp(moved, x[i] - epsilon, x[i] + epsilon), 0.0, 1.0);
  }
}

std::vector<double> row_divergences(const Divergence& d, const Tensor& a, const Tensor& b) {
  std::vector<double> out(a.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = divergence(d, a.row_span(r), b.row_span(r));
  return out;
}

// Gradient of sum_i d(f(x_hat_i), anchor_i) and the per-row divergences.
Tensor divergence_gradient(const RepresentationModel& f, const Tensor& x_hat, const Tensor& anchors,
                           const Divergence& d, std::vector<double>* values) {
  Graph g;
  const Var xv = g.leaf(x_hat);
  const Var dv = divergence_rows(d, f.forward(g, xv), g.constant(anchors));
  if (values != nullptr) *values = dv.value().values();
  return gradient(sum(dv), xv);
}

AttackResult single(BatchAttackResult b) {
  AttackResult r;
  r.adversarial = b.adversarial.reshaped({b.adversarial.size()});
  r.trajectory = std::move(b.trajectories.front());
  r.config = b.config;
  return r;
}

std::vector<std::vector<double>> transpose_series(const std::vector<std::vector<double>>& per_iteration,
                                                  std::size_t rows) {
  std::vector<std::vector<double>> out(rows, std::vector<double>(per_iteration.size()));
  for (std::size_t u = 0; u < per_iteration.size(); ++u) {
    for (std::size_t r = 0; r < rows; ++r) out[r][u] = per_iteration[u][r];
  }
  return out;
}

Var scalar_loss(const LossPlugin& loss, Graph& g, const RepresentationModel& f, const Tensor& clean, const Var& it) {
  Var l = loss(g, f, clean, it);
  if (!l.valid() || !g.owns(l) || l.size() != 1) {
    throw DomainError("loss attack: plugin must return a scalar on the attack graph, got shape " +
                      (l.valid() ? to_string(l.shape()) : std::string("<invalid>")));
  }
  return l;
}

}  // namespace

Tensor sample_eta(const Shape& shape, double scale, std::uint64_t seed) {
  Tensor eta(shape);
  const std::size_t rows = shape.size() == 2 ? shape[0] : 1;
  const std::size_t cols = rows == 0 ? 0 : eta.size() / rows;
  for (std::size_t r = 0; r < rows; ++r) {
    Rng rng(derive_seed(seed, "eta", r));
    for (std::size_t c = 0; c < cols; ++c) eta[r * cols + c] = rng.uniform(-scale, scale);
  }
  return eta;
}

Tensor initial_iterate(const Tensor& x, const AttackConfig& cfg) {
  switch (cfg.init) {
    case AttackInit::None: return x;
    case AttackInit::EtaPerturbation: {
      const Tensor eta = sample_eta(x.shape(), cfg.eta_scale, cfg.seed);
      Tensor out = x;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i] + eta[i], 0.0, 1.0);
      return out;
    }
    case AttackInit::RandomUniform: {
      Tensor out = x;
      const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
      const std::size_t cols = rows == 0 ? 0 : x.size() / rows;
      for (std::size_t r = 0; r < rows; ++r) {
        Rng rng(derive_seed(cfg.seed, "init", r));
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          out[i] = std::clamp(x[i] + rng.uniform(-cfg.epsilon, cfg.epsilon), 0.0, 1.0);
        }
      }
      return out;
    }
  }
  return x;
}

BatchAttackResult u_fgsm_batch(const RepresentationModel& f, const Tensor& x_in, const AttackConfig& cfg,
                               const Tensor* targets) {
  cfg.validate();
  const Tensor x = as_batch(x_in, f.input_size());
  const std::size_t n = x.dim(0);
  Tensor anchors;
  double direction = 1.0;
  if (cfg.mode == AttackMode::Targeted) {
    anchors = anchor_batch(targets, n, f.representation_dim(), "u-fgsm");
    direction = -1.0;
  } else {
    const Tensor eta = sample_eta(x.shape(), cfg.eta_scale, cfg.seed);
    Tensor probe = x;
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = std::clamp(x[i] + eta[i], 0.0, 1.0);
    anchors = f.evaluate(probe);
  }
  Tensor adv = x;
  const Tensor grad = divergence_gradient(f, x, anchors, cfg.divergence, nullptr);
  step_project_clip(adv, grad, x, direction * cfg.alpha, cfg.epsilon);

  BatchAttackResult out;
  const auto final_d = row_divergences(cfg.divergence, f.evaluate(adv), anchors);
  out.trajectories.resize(n);
  for (std::size_t r = 0; r < n; ++r) out.trajectories[r] = {final_d[r]};
  out.adversarial = std::move(adv);
  out.config = cfg;
  return out;
}

AttackResult u_fgsm(const RepresentationModel& f, const Tensor& x, const AttackConfig& cfg, const Tensor* target) {
  if (x.rank() != 1) throw ShapeError("u_fgsm: expected a single image, got " + to_string(x.shape()));
  return single(u_fgsm_batch(f, x, cfg, target));
}

BatchAttackResult u_pgd_batch(const RepresentationModel& f, const Tensor& x_in, const AttackConfig& cfg,
                              const Tensor* targets) {
  cfg.validate();
  const Tensor x = as_batch(x_in, f.input_size());
  const std::size_t n = x.dim(0);
  const bool targeted = cfg.mode == AttackMode::Targeted;
  const Tensor anchors = targeted ? anchor_batch(targets, n, f.representation_dim(), "u-pgd") : f.evaluate(x);
  const double step = targeted ? -cfg.alpha : cfg.alpha;

  Tensor adv = initial_iterate(x, cfg);
  std::vector<std::vector<double>> series;
  std::vector<double> values;
  for (int u = 0; u < cfg.iterations; ++u) {
    const Tensor grad = divergence_gradient(f, adv, anchors, cfg.divergence, &values);
    if (u > 0) series.push_back(values);
    step_project_clip(adv, grad, x, step, cfg.epsilon);
  }
  series.push_back(row_divergences(cfg.divergence, f.evaluate(adv), anchors));

  BatchAttackResult out;
  out.trajectories = transpose_series(series, n);
  out.adversarial = std::move(adv);
  out.config = cfg;
  return out;
}

AttackResult u_pgd(const RepresentationModel& f, const Tensor& x, const AttackConfig& cfg, const Tensor* target) {
  if (x.rank() != 1) throw ShapeError("u_pgd: expected a single image, got " + to_string(x.shape()));
  return single(u_pgd_batch(f, x, cfg, target));
}

BatchAttackResult loss_attack_batch(const RepresentationModel& f, const Tensor& x_in, const LossPlugin& loss,
                                    const AttackConfig& cfg) {
  cfg.validate();
  if (!loss) throw DomainError("loss attack: empty loss plugin");
  const Tensor x = as_batch(x_in, f.input_size());
  Tensor adv = initial_iterate(x, cfg);
  std::vector<double> series;
  for (int u = 0; u < cfg.iterations; ++u) {
    Graph g;
    const Var xv = g.leaf(adv);
    const Var l = scalar_loss(loss, g, f, x, xv);
    if (u > 0) series.push_back(l.value().item());
    const Tensor grad = gradient(l, xv);
    step_project_clip(adv, grad, x, cfg.alpha, cfg.epsilon);
  }
  {
    Graph g;
    series.push_back(scalar_loss(loss, g, f, x, g.constant(adv)).value().item());
  }
  BatchAttackResult out;
  out.trajectories = {std::move(series)};
  out.adversarial = std::move(adv);
  out.config = cfg;
  return out;
}

AttackResult loss_attack_instance(const RepresentationModel& f, const Tensor& x, const LossPlugin& loss,
                                  const AttackConfig& cfg) {
  if (x.rank() != 1) throw ShapeError("loss_attack_instance: expected a single image, got " + to_string(x.shape()));
  return single(loss_attack_batch(f, x, loss, cfg));
}

namespace plugins {

namespace {

Tensor rows_like(const Tensor& t, const Tensor& clean, std::size_t cols, const char* what) {
  const std::size_t n = clean.dim(0);
  if (t.size() != n * cols) {
    throw ShapeError(std::string(what) + ": " + to_string(t.shape()) + " for a batch of " + std::to_string(n));
  }
  return t.reshaped({n, cols});
}

}  // namespace

LossPlugin divergence_to_clean(Divergence d) {
  return [d](Graph& g, const RepresentationModel& f, const Tensor& clean, const Var& it) {
    const Var anchor = g.constant(f.evaluate(clean));
    return sum(divergence_rows(d, f.forward(g, it), anchor));
  };
}

LossPlugin negative_divergence_to_targets(Tensor targets, Divergence d) {
  return [targets = std::move(targets), d](Graph& g, const RepresentationModel& f, const Tensor& clean,
                                           const Var& it) {
    const Var anchor = g.constant(rows_like(targets, clean, f.representation_dim(), "target plugin"));
    return neg(sum(divergence_rows(d, f.forward(g, it), anchor)));
  };
}

LossPlugin divergence_to_eta_anchor(Tensor eta, Divergence d) {
  return [eta = std::move(eta), d](Graph& g, const RepresentationModel& f, const Tensor& clean, const Var& it) {
    const Tensor e = rows_like(eta, clean, clean.dim(1), "eta plugin");
    Tensor probe = clean;
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = std::clamp(clean[i] + e[i], 0.0, 1.0);
    const Var anchor = g.constant(f.evaluate(probe));
    return sum(divergence_rows(d, f.forward(g, it), anchor));
  };
}

LossPlugin batch_info_nce(Tensor keys, double temperature) {
  return [keys = std::move(keys), temperature](Graph& g, const RepresentationModel& f, const Tensor& clean,
                                               const Var& it) {
    const Var k = g.constant(rows_like(keys, clean, f.representation_dim(), "info-nce plugin"));
    return repr_robust::batch_info_nce(normalize_rows(f.forward(g, it)), k, temperature);
  };
}

LossPlugin queue_info_nce(Tensor keys, Tensor queue, double temperature) {
  return [keys = std::move(keys), queue = std::move(queue), temperature](
             Graph& g, const RepresentationModel& f, const Tensor& clean, const Var& it) {
    const Var k = g.constant(rows_like(keys, clean, f.representation_dim(), "queue info-nce plugin"));
    return info_nce(normalize_rows(f.forward(g, it)), k, g.constant(queue), temperature);
  };
}

}  // namespace plugins

}  // namespace repr_robust
