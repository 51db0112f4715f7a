#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "repr_robust/attack.hpp"
#include "repr_robust/model.hpp"

namespace repr_robust {

// Opaque private classifier: images [n, d] -> class per row.
using ScoringFn = std::function<std::vector<std::size_t>(const Tensor& images)>;

// Wraps a scoring callback and counts the rows it was asked to score.
class CountingClassifier {
 public:
  explicit CountingClassifier(ScoringFn fn) : fn_(std::move(fn)) {}

  std::vector<std::size_t> operator()(const Tensor& images) const;
  std::uint64_t queries() const { return queries_.load(); }

 private:
  ScoringFn fn_;
  mutable std::atomic<std::uint64_t> queries_{0};
};

// Targeted U-PGD, eps 0.10, alpha 0.01, 50 iterations.
AttackConfig default_impersonation_attack();

struct ImpersonationPair {
  std::size_t source = 0;  // row in the source class block
  std::size_t target = 0;  // row in the target class block
  bool a_to_b = true;
  bool fooled = false;
  double relative_quantile = 0.0;
};

struct ImpersonationReport {
  std::size_t class_a = 0, class_b = 0;
  std::size_t correct_a = 0, correct_b = 0;  // correctly classified clean samples
  double rate_a_to_b = 0.0;
  double rate_b_to_a = 0.0;
  double average = 0.0;
  AttackConfig attack;
  std::vector<ImpersonationPair> pairs;
  std::uint64_t queries_during_attack = 0;  // always 0: the attack never sees the classifier
  Tensor attacked_a_to_b, attacked_b_to_a;  // optional inspection dump
};

void to_json(nlohmann::json& j, const ImpersonationReport& r);
std::string pairs_csv(const ImpersonationReport& r);

// Keeps the samples of each class that the classifier labels correctly, pairs
// equal-size subsets by a seeded random bijection, attacks each source toward
// its partner's representation through `f` only, and scores the attacked
// images. Throws DomainError naming a class without correctly classified samples.
ImpersonationReport impersonate(const RepresentationModel& f, const CountingClassifier& classifier,
                                const Tensor& class_a, std::size_t label_a, const Tensor& class_b,
                                std::size_t label_b, const AttackConfig& cfg, std::size_t workers = 1);

}  // namespace repr_robust
