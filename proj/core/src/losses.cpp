#include "repr_robust/losses.hpp"

#include <cmath>
#include <string>

#include "repr_robust/error.hpp"

namespace repr_robust {

void require_unit_rows(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected [n, d], got " + to_string(t.shape()));
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    double s = 0.0;
    for (double v : t.row_span(r)) s += v * v;
    if (std::abs(std::sqrt(s) - 1.0) > 1e-6) {
      throw DomainError(std::string(what) + ": row " + std::to_string(r) + " has norm " +
                        std::to_string(std::sqrt(s)) + ", expected unit-normalized representations");
    }
  }
}

namespace {

void check_temperature(double t) {
  if (!(t > 0.0)) throw DomainError("contrastive loss: temperature must be positive");
}

}  // namespace

Var info_nce(const Var& q, const Var& positives, const Var& negatives, double temperature) {
  check_temperature(temperature);
  require_unit_rows(q.value(), "info_nce queries");
  require_unit_rows(positives.value(), "info_nce positives");
  if (negatives.shape().size() != 2 || (negatives.shape()[0] > 0 && negatives.shape()[1] != q.shape()[1])) {
    throw ShapeError("info_nce: negatives " + to_string(negatives.shape()) + " do not match queries " +
                     to_string(q.shape()));
  }
  const std::size_t n = q.shape()[0];
  const double inv_t = 1.0 / temperature;
  Var pos = reshape(row_dot(q, positives), {n, 1});
  Var logits = pos;
  if (negatives.shape()[0] > 0) {
    require_unit_rows(negatives.value(), "info_nce negatives");
    logits = concat({pos, matmul(q, transpose(negatives))}, 1);
  }
  logits = scale(logits, inv_t);
  const Var lp = pick(log_softmax(logits), std::vector<std::size_t>(n, 0));
  return neg(mean(lp));
}

Var batch_info_nce(const Var& q, const Var& keys, double temperature) {
  check_temperature(temperature);
  require_unit_rows(q.value(), "batch_info_nce queries");
  require_unit_rows(keys.value(), "batch_info_nce keys");
  if (q.shape() != keys.shape()) {
    throw ShapeError("batch_info_nce: queries " + to_string(q.shape()) + " vs keys " + to_string(keys.shape()));
  }
  const std::size_t n = q.shape()[0];
  std::vector<std::size_t> diagonal(n);
  for (std::size_t i = 0; i < n; ++i) diagonal[i] = i;
  const Var logits = scale(matmul(keys, transpose(q)), 1.0 / temperature);
  return neg(sum(pick(log_softmax(logits), std::move(diagonal))));
}

Var pairwise_contrastive(const Var& q, const Var& keys, double temperature) {
  check_temperature(temperature);
  if (q.shape() != keys.shape() || q.shape().size() != 2) {
    throw ShapeError("pairwise_contrastive: queries " + to_string(q.shape()) + " vs keys " + to_string(keys.shape()));
  }
  const std::size_t n = q.shape()[0];
  std::vector<std::size_t> diagonal(n);
  for (std::size_t i = 0; i < n; ++i) diagonal[i] = i;
  const Var logits = scale(matmul(normalize_rows(q), transpose(normalize_rows(keys))), 1.0 / temperature);
  return scale(neg(mean(pick(log_softmax(logits), std::move(diagonal)))), 2.0 * temperature);
}

}  // namespace repr_robust
