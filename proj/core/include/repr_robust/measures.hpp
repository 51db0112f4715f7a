#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "repr_robust/attack.hpp"
#include "repr_robust/divergence.hpp"
#include "repr_robust/model.hpp"

namespace repr_robust {

// Argument order follows the definitions: universal quantiles and breakaway
// use d(f(x_hat), f(.)), nearest-neighbour accuracy d(f(.), f(x_hat)), overlap
// and margins d(f(x_i), f(.)), relative quantiles d(f(x_hat), f(target)).

// FNV-1a over the shape and value bytes.
std::uint64_t fingerprint(const Tensor& t);

// `count` distinct indices of [0, population) in seeded random order.
std::vector<std::size_t> sample_indices(std::size_t population, std::size_t count, std::uint64_t seed);

// `count` disjoint pairs from a seeded shuffle; needs 2 * count <= population.
std::vector<std::pair<std::size_t, std::size_t>> sample_disjoint_pairs(std::size_t population, std::size_t count,
                                                                       std::uint64_t seed);

// Median of the values (mean of the two middle values for an even count).
// Throws DomainError when empty.
double median(std::vector<double> values);

struct DivergenceDistribution {
  std::vector<double> values;  // sorted ascending
  std::size_t sample_count = 0;
  Divergence divergence;
  std::uint64_t dataset_fingerprint = 0;

  // Fraction of stored divergences <= value. Throws DomainError when empty.
  double quantile(double value) const;
};

void to_json(nlohmann::json& j, const DivergenceDistribution& d);

// All unordered pairs among the given representations [n, k].
DivergenceDistribution distribution_from_representations(const Tensor& representations, const Divergence& d,
                                                         std::size_t workers = 1);

// Encodes `sample_count` seeded samples of `images` [N, input] and collects the
// divergences of all their unordered pairs.
DivergenceDistribution build_divergence_distribution(const RepresentationModel& f, const Tensor& images,
                                                     std::size_t sample_count, const Divergence& d,
                                                     std::uint64_t seed, std::size_t workers = 1);

double relative_quantile(const Divergence& d, std::span<const double> clean, std::span<const double> target,
                         std::span<const double> adversarial);
double relative_quantile(const RepresentationModel& f, const Tensor& x, const Tensor& target,
                         const Tensor& adversarial, const Divergence& d);

struct RiskEstimate {
  double estimate = 0.0;
  std::uint64_t numerator = 0;
  std::uint64_t denominator = 0;
  AttackConfig attack;
  std::size_t evaluated = 0;  // |D'| (samples or pairs)
  std::size_t reference = 0;  // |D|

  static RiskEstimate ratio(std::uint64_t numerator, std::uint64_t denominator);
};

void to_json(nlohmann::json& j, const RiskEstimate& r);

// Attacks `images` in fixed chunks; chunk c uses seed derive_seed(cfg.seed,
// "chunk", c), so results do not depend on the worker count.
Tensor attack_in_chunks(const RepresentationModel& f, const Tensor& images, const AttackConfig& cfg,
                        const Tensor* targets, std::size_t workers);

struct BreakawayResult {
  RiskEstimate breakaway;
  RiskEstimate nearest_neighbor;  // numerator: samples whose nearest clean neighbour is themselves
  // Diagnostic: fraction with d(f(x_hat), f(x)) < min_{x' != x} d(f(x), f(x')).
  RiskEstimate self_similarity;
  std::vector<double> attack_divergences;  // d(f(x_hat), f(x)) per evaluated sample
};

void to_json(nlohmann::json& j, const BreakawayResult& r);

// reference: f(D) [N, k]; eval: positions of D' inside D; attacked: f(x_hat)
// for each evaluated sample [|D'|, k].
BreakawayResult breakaway_from_representations(const Tensor& reference, std::span<const std::size_t> eval,
                                               const Tensor& attacked, const Divergence& d);

// Untargeted attack per cfg on D', then the counts above. cfg.mode must be
// untargeted; defaults: epsilon 0.05, alpha 0.001, 25 iterations.
BreakawayResult breakaway_and_nearest_neighbor(const RepresentationModel& f, const Tensor& images,
                                               std::span<const std::size_t> eval, const AttackConfig& cfg,
                                               std::size_t workers = 1);
RiskEstimate breakaway_risk(const RepresentationModel& f, const Tensor& images, std::span<const std::size_t> eval,
                            const AttackConfig& cfg, std::size_t workers = 1);
double nearest_neighbor_accuracy(const RepresentationModel& f, const Tensor& images,
                                 std::span<const std::size_t> eval, const AttackConfig& cfg,
                                 std::size_t workers = 1);

AttackConfig default_breakaway_attack();
AttackConfig default_overlap_attack();

struct MarginRecord {
  std::size_t i = 0;
  std::size_t j = 0;
  double to_other = 0.0;  // d(f(x_i), f(x_hat_{j->i}))
  double to_self = 0.0;   // d(f(x_i), f(x_hat_{i->j}))
  double clean = 0.0;     // d(f(x_i), f(x_j))
  double margin = 0.0;    // (to_other - to_self) / clean
};

struct OverlapResult {
  RiskEstimate risk;  // numerator: pairs with to_other < to_self
  std::vector<MarginRecord> margins;
  std::optional<double> median_margin;
  std::size_t excluded = 0;  // pairs with clean divergence below 1e-9
};

void to_json(nlohmann::json& j, const OverlapResult& r);

inline constexpr double kDegenerateDivergence = 1e-9;

// reference: f(D); attacked_i_to_j[p] = f(x_hat_{i->j}), attacked_j_to_i[p] = f(x_hat_{j->i}).
OverlapResult overlap_from_representations(const Tensor& reference,
                                           std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                           const Tensor& attacked_i_to_j, const Tensor& attacked_j_to_i,
                                           const Divergence& d);

// Targeted attacks in both directions of every pair. cfg.mode must be targeted.
OverlapResult overlap_risk_and_margins(const RepresentationModel& f, const Tensor& images,
                                       std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                       const AttackConfig& cfg, std::size_t workers = 1);

struct QuantileSummary {
  AttackConfig attack;
  std::vector<double> values;  // one per evaluated sample
  double median = 0.0;
};

void to_json(nlohmann::json& j, const QuantileSummary& q);

// Universal quantiles of d(f(x_hat), f(x)) under an untargeted attack.
QuantileSummary universal_quantiles(const RepresentationModel& f, const Tensor& images,
                                    std::span<const std::size_t> eval, const DivergenceDistribution& dist,
                                    const AttackConfig& cfg, std::size_t workers = 1);

// Relative quantiles of targeted attacks; sample eval[i] targets eval[i+1]
// (cyclically). Pairs with a degenerate clean divergence are skipped.
QuantileSummary relative_quantiles(const RepresentationModel& f, const Tensor& images,
                                   std::span<const std::size_t> eval, const AttackConfig& cfg,
                                   std::size_t workers = 1);

}  // namespace repr_robust
