#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repr_robust/divergence.hpp"
#include "repr_robust/model.hpp"

namespace repr_robust {

enum class AttackMode { Untargeted, Targeted };
enum class AttackInit { RandomUniform, EtaPerturbation, None };

std::string to_string(AttackMode m);
std::string to_string(AttackInit i);
AttackMode parse_attack_mode(const std::string& s);
AttackInit parse_attack_init(const std::string& s);

// l_inf-bounded attack parameters, all in pixel units.
//  init = random-uniform: x0 = clip(x + U[-eps, eps])      (U-PGD, L-PGD)
//  init = eta-perturbation: x0 = clip(x + eta)              (U-BIM)
//  init = none: x0 = x                                      (L-BIM)
// eta is drawn uniformly from [-eta_scale, eta_scale] per call.
struct AttackConfig {
  double epsilon = 0.05;
  double alpha = 0.001;
  int iterations = 10;
  AttackMode mode = AttackMode::Untargeted;
  AttackInit init = AttackInit::RandomUniform;
  double eta_scale = 1e-3;
  Divergence divergence;
  std::uint64_t seed = 0;

  // Throws DomainError unless 0 < alpha <= epsilon <= 1 and iterations >= 1.
  void validate() const;

  bool operator==(const AttackConfig&) const = default;
};

void to_json(nlohmann::json& j, const AttackConfig& c);
void from_json(const nlohmann::json& j, AttackConfig& c);

struct AttackResult {
  Tensor adversarial;              // [input_size]
  std::vector<double> trajectory;  // objective after each iteration
  AttackConfig config;
};

struct BatchAttackResult {
  Tensor adversarial;  // [n, input_size]
  // Divergence attacks: one series per row. Loss attacks: one series holding
  // the batch loss after each iteration.
  std::vector<std::vector<double>> trajectories;
  AttackConfig config;
};

void to_json(nlohmann::json& j, const AttackResult& r);

// Elementwise clamp to [0,1].
Tensor clip(const Tensor& x);
// Coordinate-wise clamp of x_hat to [x_i - eps, x_i + eps].
Tensor project_linf(const Tensor& x_hat, const Tensor& x, double epsilon);

// Uniform eta in [-scale, scale]; row r of a [n, d] request uses stream
// derive_seed(seed, "eta", r).
Tensor sample_eta(const Shape& shape, double scale, std::uint64_t seed);

// Starting iterate for a [n, d] batch according to cfg.init.
Tensor initial_iterate(const Tensor& x, const AttackConfig& cfg);

// --- divergence attacks ------------------------------------------------------
// Anchors are constants under differentiation. `targets` holds the target
// representations ([k] for one image, [n, k] for a batch) and is required
// in targeted mode.
//  untargeted: x' = clip(x + alpha sign(grad_x d(f(x), f(clip(x + eta)))))
//  targeted:   x' = clip(x - alpha sign(grad_x d(f(x), t)))

AttackResult u_fgsm(const RepresentationModel& f, const Tensor& x, const AttackConfig& cfg,
                    const Tensor* target = nullptr);
BatchAttackResult u_fgsm_batch(const RepresentationModel& f, const Tensor& x, const AttackConfig& cfg,
                               const Tensor* targets = nullptr);

// Iterates {sign step on d(f(x_u), anchor), project onto B(x, eps), clip}.
// Untargeted ascends with anchor f(x); targeted descends towards the target.
AttackResult u_pgd(const RepresentationModel& f, const Tensor& x, const AttackConfig& cfg,
                   const Tensor* target = nullptr);
BatchAttackResult u_pgd_batch(const RepresentationModel& f, const Tensor& x, const AttackConfig& cfg,
                              const Tensor* targets = nullptr);

// --- loss-based attacks ----------------------------------------------------------

// Scalar objective to ascend, built on `g` from the clean batch [n, d] and the
// current iterate [n, d]. Instance plugins see n = 1.
using LossPlugin = std::function<Var(Graph& g, const RepresentationModel& f, const Tensor& clean,
                                     const Var& iterate)>;

// L-PGD (init random-uniform), L-BIM (init none) and L-FGSM (one iteration,
// init none). cfg.mode and cfg.divergence are ignored.
AttackResult loss_attack_instance(const RepresentationModel& f, const Tensor& x, const LossPlugin& loss,
                                  const AttackConfig& cfg);
// Joint gradient over the batch with per-sample projection and clipping.
BatchAttackResult loss_attack_batch(const RepresentationModel& f, const Tensor& x,
                                    const LossPlugin& loss, const AttackConfig& cfg);

namespace plugins {

// sum_i d(f(x_u,i), f(x_i)): untargeted U-PGD. With kl-softmax this is the
// virtual-adversarial style attack.
LossPlugin divergence_to_clean(Divergence d);
// -sum_i d(f(x_u,i), t_i): targeted U-PGD / U-FGSM.
LossPlugin negative_divergence_to_targets(Tensor targets, Divergence d);
// sum_i d(f(x_u,i), f(clip(x_i + eta_i))): untargeted U-FGSM.
LossPlugin divergence_to_eta_anchor(Tensor eta, Divergence d);
// sum_i -log(exp(q_i.k_i / T) / sum_j exp(q_j.k_i / T)) with q = f(x_u) and
// fixed unit-norm keys k (representations of other views).
LossPlugin batch_info_nce(Tensor keys, double temperature);
// Mean InfoNCE of q = f(x_u) against positives `keys` and a queue of negatives.
LossPlugin queue_info_nce(Tensor keys, Tensor queue, double temperature);

}  // namespace plugins

}  // namespace repr_robust
