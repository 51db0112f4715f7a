#include "repr_robust/impersonation.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "repr_robust/error.hpp"
#include "repr_robust/measures.hpp"
#include "repr_robust/random.hpp"

namespace repr_robust {

std::vector<std::size_t> CountingClassifier::operator()(const Tensor& images) const {
  queries_ += images.rank() == 2 ? images.dim(0) : 1;
  return fn_(images);
}

AttackConfig default_impersonation_attack() {
  AttackConfig c;
  c.epsilon = 0.10;
  c.alpha = 0.01;
  c.iterations = 50;
  c.mode = AttackMode::Targeted;
  return c;
}

void to_json(nlohmann::json& j, const ImpersonationReport& r) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : r.pairs) {
    pairs.push_back({{"source", p.source},
                     {"target", p.target},
                     {"direction", p.a_to_b ? "a->b" : "b->a"},
                     {"fooled", p.fooled},
                     {"relative_quantile", p.relative_quantile}});
  }
  j = {{"class_a", r.class_a},
       {"class_b", r.class_b},
       {"correct_a", r.correct_a},
       {"correct_b", r.correct_b},
       {"rate_a_to_b", r.rate_a_to_b},
       {"rate_b_to_a", r.rate_b_to_a},
       {"average", r.average},
       {"attack", r.attack},
       {"queries_during_attack", r.queries_during_attack},
       {"pairs", pairs}};
}

std::string pairs_csv(const ImpersonationReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "direction,source,target,fooled,relative_quantile\n";
  for (const auto& p : r.pairs) {
    os << (p.a_to_b ? "a->b" : "b->a") << ',' << p.source << ',' << p.target << ',' << (p.fooled ? 1 : 0) << ','
       << p.relative_quantile << '\n';
  }
  return os.str();
}

namespace {

std::vector<std::size_t> correct_rows(const CountingClassifier& g, const Tensor& x, std::size_t label) {
  const auto pred = g(x);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == label) out.push_back(i);
  }
  if (out.empty()) {
    throw DomainError("impersonation: no correctly classified samples in class " + std::to_string(label));
  }
  return out;
}

Tensor rows_of(const Tensor& x, const std::vector<std::size_t>& rows) {
  const std::size_t d = x.dim(1);
  Tensor out({rows.size(), d});
  for (std::size_t k = 0; k < rows.size(); ++k) std::copy_n(x.row_span(rows[k]).begin(), d, out.row_span(k).begin());
  return out;
}

void seeded_shuffle(std::vector<std::size_t>& v, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

ImpersonationReport impersonate(const RepresentationModel& f, const CountingClassifier& classifier,
                                const Tensor& class_a, std::size_t label_a, const Tensor& class_b,
                                std::size_t label_b, const AttackConfig& cfg, std::size_t workers) {
  if (cfg.mode != AttackMode::Targeted) throw DomainError("impersonation: attack must be targeted");
  cfg.validate();
  if (class_a.rank() != 2 || class_b.rank() != 2 || class_a.dim(1) != class_b.dim(1)) {
    throw ShapeError("impersonation: class blocks must be [n, d] with equal d");
  }
  if (label_a == label_b) throw DomainError("impersonation: the two classes must differ");

  ImpersonationReport r;
  r.class_a = label_a;
  r.class_b = label_b;
  r.attack = cfg;
  auto a = correct_rows(classifier, class_a, label_a);
  auto b = correct_rows(classifier, class_b, label_b);
  r.correct_a = a.size();
  r.correct_b = b.size();
  seeded_shuffle(a, derive_seed(cfg.seed, "pair-a"));
  seeded_shuffle(b, derive_seed(cfg.seed, "pair-b"));
  const std::size_t m = std::min(a.size(), b.size());
  a.resize(m);
  b.resize(m);

  const Tensor xa = rows_of(class_a, a), xb = rows_of(class_b, b);
  const Tensor fa = f.evaluate_rows(xa, workers), fb = f.evaluate_rows(xb, workers);

  const std::uint64_t before = classifier.queries();
  AttackConfig to_b = cfg, to_a = cfg;
  to_b.seed = derive_seed(cfg.seed, "a->b");
  to_a.seed = derive_seed(cfg.seed, "b->a");
  r.attacked_a_to_b = attack_in_chunks(f, xa, to_b, &fb, workers);
  r.attacked_b_to_a = attack_in_chunks(f, xb, to_a, &fa, workers);
  r.queries_during_attack = classifier.queries() - before;

  const auto score = [&](const Tensor& attacked, const Tensor& clean_reps, const Tensor& target_reps,
                         const std::vector<std::size_t>& src, const std::vector<std::size_t>& dst,
                         std::size_t target_label, bool a_to_b) {
    const auto pred = classifier(attacked);
    const Tensor adv_reps = f.evaluate_rows(attacked, workers);
    std::size_t fooled = 0;
    for (std::size_t k = 0; k < m; ++k) {
      ImpersonationPair p{src[k], dst[k], a_to_b, pred[k] == target_label, 0.0};
      const double den = divergence(cfg.divergence, clean_reps.row_span(k), target_reps.row_span(k));
      p.relative_quantile =
          den < kDegenerateDivergence ? 0.0 : divergence(cfg.divergence, adv_reps.row_span(k), target_reps.row_span(k)) / den;
      fooled += p.fooled;
      r.pairs.push_back(p);
    }
    return static_cast<double>(fooled) / static_cast<double>(m);
  };
  r.rate_a_to_b = score(r.attacked_a_to_b, fa, fb, a, b, label_b, true);
  r.rate_b_to_a = score(r.attacked_b_to_a, fb, fa, b, a, label_a, false);
  r.average = 0.5 * (r.rate_a_to_b + r.rate_b_to_a);
  return r;
}

}  // namespace repr_robust
