#include "repr_robust/measures.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <numeric>

#include "repr_robust/error.hpp"
#include "repr_robust/parallel.hpp"
#include "repr_robust/random.hpp"

namespace repr_robust {

namespace {

constexpr std::size_t kAttackChunk = 32;

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> rows) {
  const std::size_t cols = m.dim(1);
  Tensor out({rows.size(), cols});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= m.dim(0)) {
      throw DomainError("sample index " + std::to_string(rows[r]) + " outside dataset of " +
                        std::to_string(m.dim(0)));
    }
    std::copy_n(m.row_span(rows[r]).begin(), cols, out.row_span(r).begin());
  }
  return out;
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected [n, d], got " + to_string(t.shape()));
}

Tensor encode_all(const RepresentationModel& f, const Tensor& images, std::size_t workers) {
  require_matrix(images, "encode");
  const std::size_t n = images.dim(0);
  const std::size_t chunks = (n + kAttackChunk - 1) / kAttackChunk;
  Tensor out({n, f.representation_dim()});
  parallel_for(workers, chunks, [&](std::size_t c) {
    const std::size_t lo = c * kAttackChunk, hi = std::min(n, lo + kAttackChunk);
    std::vector<std::size_t> rows(hi - lo);
    std::iota(rows.begin(), rows.end(), lo);
    const Tensor r = f.evaluate(gather_rows(images, rows));
    std::copy(r.data().begin(), r.data().end(), out.row_span(lo).begin());
  });
  return out;
}

double d_rows(const Divergence& d, const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  return divergence(d, a.row_span(i), b.row_span(j));
}

}  // namespace

std::uint64_t fingerprint(const Tensor& t) {
  std::uint64_t h = fnv1a64(to_string(t.shape()));
  for (double v : t.data()) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::vector<std::size_t> sample_indices(std::size_t population, std::size_t count, std::uint64_t seed) {
  if (count > population) {
    throw DomainError("cannot sample " + std::to_string(count) + " items from " + std::to_string(population));
  }
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "sample-indices"));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(population - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

std::vector<std::pair<std::size_t, std::size_t>> sample_disjoint_pairs(std::size_t population, std::size_t count,
                                                                       std::uint64_t seed) {
  if (2 * count > population) {
    throw DomainError("cannot draw " + std::to_string(count) + " disjoint pairs from " + std::to_string(population) +
                      " samples");
  }
  const auto idx = sample_indices(population, 2 * count, derive_seed(seed, "pairs"));
  std::vector<std::pair<std::size_t, std::size_t>> pairs(count);
  for (std::size_t p = 0; p < count; ++p) pairs[p] = {idx[2 * p], idx[2 * p + 1]};
  return pairs;
}

double median(std::vector<double> values) {
  if (values.empty()) throw DomainError("median of an empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return lo + (hi - lo) / 2.0;
}

double DivergenceDistribution::quantile(double value) const {
  if (values.empty()) throw DomainError("quantile of an empty divergence distribution");
  const auto it = std::upper_bound(values.begin(), values.end(), value);
  return static_cast<double>(it - values.begin()) / static_cast<double>(values.size());
}

void to_json(nlohmann::json& j, const DivergenceDistribution& d) {
  j = nlohmann::json{{"sample_count", d.sample_count},
                     {"pair_count", d.values.size()},
                     {"divergence", to_string(d.divergence.kind)},
                     {"dataset_fingerprint", d.dataset_fingerprint}};
  if (!d.values.empty()) {
    j["min"] = d.values.front();
    j["median"] = d.values[d.values.size() / 2];
    j["max"] = d.values.back();
  }
}

DivergenceDistribution distribution_from_representations(const Tensor& reps, const Divergence& d,
                                                         std::size_t workers) {
  require_matrix(reps, "divergence distribution");
  const std::size_t n = reps.dim(0);
  if (n < 2) throw DomainError("divergence distribution needs at least 2 samples");
  DivergenceDistribution out;
  out.sample_count = n;
  out.divergence = d;
  out.values.resize(n * (n - 1) / 2);
  parallel_for(workers, n - 1, [&](std::size_t i) {
    std::size_t at = i * n - i * (i + 1) / 2;
    for (std::size_t j = i + 1; j < n; ++j) out.values[at++] = d_rows(d, reps, i, reps, j);
  });
  std::sort(out.values.begin(), out.values.end());
  return out;
}

DivergenceDistribution build_divergence_distribution(const RepresentationModel& f, const Tensor& images,
                                                     std::size_t sample_count, const Divergence& d,
                                                     std::uint64_t seed, std::size_t workers) {
  require_matrix(images, "divergence distribution");
  if (sample_count < 2) throw DomainError("divergence distribution: sample count must be >= 2");
  if (sample_count > images.dim(0)) {
    throw DomainError("divergence distribution: sample count " + std::to_string(sample_count) +
                      " exceeds dataset size " + std::to_string(images.dim(0)));
  }
  auto idx = sample_indices(images.dim(0), sample_count, derive_seed(seed, "distribution"));
  std::sort(idx.begin(), idx.end());
  const Tensor reps = encode_all(f, gather_rows(images, idx), workers);
  auto out = distribution_from_representations(reps, d, workers);
  out.dataset_fingerprint = fingerprint(images);
  return out;
}

double relative_quantile(const Divergence& d, std::span<const double> clean, std::span<const double> target,
                         std::span<const double> adversarial) {
  const double denom = divergence(d, clean, target);
  if (!(denom > kDegenerateDivergence)) {
    throw DomainError("relative quantile: clean and target representations coincide (divergence " +
                      std::to_string(denom) + ")");
  }
  return divergence(d, adversarial, target) / denom;
}

double relative_quantile(const RepresentationModel& f, const Tensor& x, const Tensor& target,
                         const Tensor& adversarial, const Divergence& d) {
  const Tensor fx = f.evaluate(x), ft = f.evaluate(target), fa = f.evaluate(adversarial);
  return relative_quantile(d, fx.data(), ft.data(), fa.data());
}

RiskEstimate RiskEstimate::ratio(std::uint64_t numerator, std::uint64_t denominator) {
  RiskEstimate r;
  r.numerator = numerator;
  r.denominator = denominator;
  r.estimate = denominator == 0 ? 0.0 : static_cast<double>(numerator) / static_cast<double>(denominator);
  return r;
}

void to_json(nlohmann::json& j, const RiskEstimate& r) {
  j = nlohmann::json{{"estimate", r.estimate},   {"numerator", r.numerator}, {"denominator", r.denominator},
                     {"attack", r.attack},       {"evaluated", r.evaluated}, {"reference", r.reference}};
}

Tensor attack_in_chunks(const RepresentationModel& f, const Tensor& images, const AttackConfig& cfg,
                        const Tensor* targets, std::size_t workers) {
  cfg.validate();
  require_matrix(images, "attack");
  const std::size_t n = images.dim(0);
  const std::size_t chunks = (n + kAttackChunk - 1) / kAttackChunk;
  Tensor out(images.shape());
  parallel_for(workers, chunks, [&](std::size_t c) {
    const std::size_t lo = c * kAttackChunk, hi = std::min(n, lo + kAttackChunk);
    std::vector<std::size_t> rows(hi - lo);
    std::iota(rows.begin(), rows.end(), lo);
    AttackConfig local = cfg;
    local.seed = derive_seed(cfg.seed, "chunk", c);
    Tensor chunk_targets;
    if (targets != nullptr) chunk_targets = gather_rows(*targets, rows);
    const auto res = u_pgd_batch(f, gather_rows(images, rows), local, targets ? &chunk_targets : nullptr);
    std::copy(res.adversarial.data().begin(), res.adversarial.data().end(), out.row_span(lo).begin());
  });
  return out;
}

AttackConfig default_breakaway_attack() {
  AttackConfig c;
  c.epsilon = 0.05;
  c.alpha = 0.001;
  c.iterations = 25;
  c.mode = AttackMode::Untargeted;
  return c;
}

AttackConfig default_overlap_attack() {
  AttackConfig c;
  c.epsilon = 0.05;
  c.alpha = 0.001;
  c.iterations = 10;
  c.mode = AttackMode::Targeted;
  return c;
}

void to_json(nlohmann::json& j, const BreakawayResult& r) {
  j = nlohmann::json{{"breakaway", r.breakaway},
                     {"nearest_neighbor", r.nearest_neighbor},
                     {"self_similarity", r.self_similarity}};
}

BreakawayResult breakaway_from_representations(const Tensor& reference, std::span<const std::size_t> eval,
                                               const Tensor& attacked, const Divergence& d) {
  require_matrix(reference, "breakaway");
  require_matrix(attacked, "breakaway");
  const std::size_t n = reference.dim(0);
  if (n < 2) throw DomainError("breakaway: reference set needs at least 2 samples");
  if (attacked.dim(0) != eval.size() || attacked.dim(1) != reference.dim(1)) {
    throw ShapeError("breakaway: attacked representations " + to_string(attacked.shape()) + " for " +
                     std::to_string(eval.size()) + " evaluated samples");
  }
  for (std::size_t x : eval) {
    if (x >= n) throw DomainError("breakaway: evaluated index " + std::to_string(x) + " outside reference set");
  }
  const std::size_t m = eval.size();
  std::vector<std::uint64_t> closer(m);
  std::vector<unsigned char> nn_self(m), self_similar(m);
  std::vector<double> own(m);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t x = eval[k];
    const double self_fwd = d_rows(d, attacked, k, reference, x);  // d(f(x_hat), f(x))
    const double self_rev = d_rows(d, reference, x, attacked, k);  // d(f(x), f(x_hat))
    double nearest_other = std::numeric_limits<double>::infinity();
    bool displaced = false;
    for (std::size_t o = 0; o < n; ++o) {
      if (o == x) continue;
      if (d_rows(d, attacked, k, reference, o) < self_fwd) ++closer[k];
      if (d_rows(d, reference, o, attacked, k) < self_rev) displaced = true;
      nearest_other = std::min(nearest_other, d_rows(d, reference, x, reference, o));
    }
    own[k] = self_fwd;
    nn_self[k] = !displaced;
    self_similar[k] = self_fwd < nearest_other;
  }
  BreakawayResult r;
  r.breakaway = RiskEstimate::ratio(std::accumulate(closer.begin(), closer.end(), std::uint64_t{0}),
                                    static_cast<std::uint64_t>(m) * (n - 1));
  r.nearest_neighbor = RiskEstimate::ratio(std::accumulate(nn_self.begin(), nn_self.end(), std::uint64_t{0}), m);
  r.self_similarity =
      RiskEstimate::ratio(std::accumulate(self_similar.begin(), self_similar.end(), std::uint64_t{0}), m);
  for (RiskEstimate* e : {&r.breakaway, &r.nearest_neighbor, &r.self_similarity}) {
    e->evaluated = m;
    e->reference = n;
  }
  r.attack_divergences = std::move(own);
  return r;
}

BreakawayResult breakaway_and_nearest_neighbor(const RepresentationModel& f, const Tensor& images,
                                               std::span<const std::size_t> eval, const AttackConfig& cfg,
                                               std::size_t workers) {
  if (cfg.mode != AttackMode::Untargeted) throw DomainError("breakaway: attack must be untargeted");
  require_matrix(images, "breakaway");
  if (images.dim(0) < 2) throw DomainError("breakaway: dataset needs at least 2 samples");
  const Tensor reference = encode_all(f, images, workers);
  const Tensor adv = attack_in_chunks(f, gather_rows(images, eval), cfg, nullptr, workers);
  auto r = breakaway_from_representations(reference, eval, encode_all(f, adv, workers), cfg.divergence);
  for (RiskEstimate* e : {&r.breakaway, &r.nearest_neighbor, &r.self_similarity}) e->attack = cfg;
  return r;
}

RiskEstimate breakaway_risk(const RepresentationModel& f, const Tensor& images, std::span<const std::size_t> eval,
                            const AttackConfig& cfg, std::size_t workers) {
  return breakaway_and_nearest_neighbor(f, images, eval, cfg, workers).breakaway;
}

double nearest_neighbor_accuracy(const RepresentationModel& f, const Tensor& images,
                                 std::span<const std::size_t> eval, const AttackConfig& cfg, std::size_t workers) {
  return breakaway_and_nearest_neighbor(f, images, eval, cfg, workers).nearest_neighbor.estimate;
}

void to_json(nlohmann::json& j, const OverlapResult& r) {
  j = nlohmann::json{{"risk", r.risk}, {"excluded", r.excluded}};
  j["median_margin"] = r.median_margin ? nlohmann::json(*r.median_margin) : nlohmann::json(nullptr);
}

OverlapResult overlap_from_representations(const Tensor& reference,
                                           std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                           const Tensor& attacked_i_to_j, const Tensor& attacked_j_to_i,
                                           const Divergence& d) {
  require_matrix(reference, "overlap");
  if (attacked_i_to_j.shape() != attacked_j_to_i.shape() || attacked_i_to_j.rank() != 2 ||
      attacked_i_to_j.dim(0) != pairs.size() || attacked_i_to_j.dim(1) != reference.dim(1)) {
    throw ShapeError("overlap: attacked representations do not match " + std::to_string(pairs.size()) + " pairs");
  }
  OverlapResult r;
  std::uint64_t events = 0;
  std::vector<double> margins;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    if (i >= reference.dim(0) || j >= reference.dim(0)) throw DomainError("overlap: pair index outside dataset");
    MarginRecord m;
    m.i = i;
    m.j = j;
    m.clean = d_rows(d, reference, i, reference, j);
    if (m.clean < kDegenerateDivergence) {
      ++r.excluded;
      continue;
    }
    m.to_other = d_rows(d, reference, i, attacked_j_to_i, p);
    m.to_self = d_rows(d, reference, i, attacked_i_to_j, p);
    m.margin = (m.to_other - m.to_self) / m.clean;
    if (m.to_other < m.to_self) ++events;
    margins.push_back(m.margin);
    r.margins.push_back(m);
  }
  r.risk = RiskEstimate::ratio(events, r.margins.size());
  r.risk.evaluated = pairs.size();
  r.risk.reference = reference.dim(0);
  if (!margins.empty()) r.median_margin = median(std::move(margins));
  return r;
}

OverlapResult overlap_risk_and_margins(const RepresentationModel& f, const Tensor& images,
                                       std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                       const AttackConfig& cfg, std::size_t workers) {
  if (cfg.mode != AttackMode::Targeted) throw DomainError("overlap: attack must be targeted");
  require_matrix(images, "overlap");
  std::vector<std::size_t> first(pairs.size()), second(pairs.size());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    first[p] = pairs[p].first;
    second[p] = pairs[p].second;
  }
  const Tensor xi = gather_rows(images, first), xj = gather_rows(images, second);
  const Tensor fi = encode_all(f, xi, workers), fj = encode_all(f, xj, workers);
  AttackConfig forward = cfg, backward = cfg;
  forward.seed = derive_seed(cfg.seed, "i->j");
  backward.seed = derive_seed(cfg.seed, "j->i");
  const Tensor a_ij = encode_all(f, attack_in_chunks(f, xi, forward, &fj, workers), workers);
  const Tensor a_ji = encode_all(f, attack_in_chunks(f, xj, backward, &fi, workers), workers);
  auto r = overlap_from_representations(encode_all(f, images, workers), pairs, a_ij, a_ji, cfg.divergence);
  r.risk.attack = cfg;
  return r;
}

void to_json(nlohmann::json& j, const QuantileSummary& q) {
  j = nlohmann::json{{"attack", q.attack}, {"median", q.median}, {"count", q.values.size()}};
}

QuantileSummary universal_quantiles(const RepresentationModel& f, const Tensor& images,
                                    std::span<const std::size_t> eval, const DivergenceDistribution& dist,
                                    const AttackConfig& cfg, std::size_t workers) {
  if (cfg.mode != AttackMode::Untargeted) throw DomainError("universal quantiles: attack must be untargeted");
  if (!(cfg.divergence == dist.divergence)) {
    throw DomainError("universal quantiles: attack and distribution use different divergences");
  }
  const Tensor x = gather_rows(images, eval);
  const Tensor fx = encode_all(f, x, workers);
  const Tensor fa = encode_all(f, attack_in_chunks(f, x, cfg, nullptr, workers), workers);
  QuantileSummary q;
  q.attack = cfg;
  for (std::size_t k = 0; k < eval.size(); ++k) q.values.push_back(dist.quantile(d_rows(cfg.divergence, fa, k, fx, k)));
  q.median = median(q.values);
  return q;
}

QuantileSummary relative_quantiles(const RepresentationModel& f, const Tensor& images,
                                   std::span<const std::size_t> eval, const AttackConfig& cfg,
                                   std::size_t workers) {
  if (cfg.mode != AttackMode::Targeted) throw DomainError("relative quantiles: attack must be targeted");
  if (eval.size() < 2) throw DomainError("relative quantiles: need at least 2 samples");
  const std::size_t m = eval.size();
  std::vector<std::size_t> target_idx(m);
  for (std::size_t k = 0; k < m; ++k) target_idx[k] = eval[(k + 1) % m];
  const Tensor x = gather_rows(images, eval);
  const Tensor fx = encode_all(f, x, workers);
  const Tensor ft = encode_all(f, gather_rows(images, target_idx), workers);
  const Tensor fa = encode_all(f, attack_in_chunks(f, x, cfg, &ft, workers), workers);
  QuantileSummary q;
  q.attack = cfg;
  for (std::size_t k = 0; k < m; ++k) {
    if (d_rows(cfg.divergence, fx, k, ft, k) < kDegenerateDivergence) continue;
    q.values.push_back(relative_quantile(cfg.divergence, fx.row_span(k), ft.row_span(k), fa.row_span(k)));
  }
  q.median = median(q.values);
  return q;
}

}  // namespace repr_robust
