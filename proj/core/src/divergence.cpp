#include "repr_robust/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "repr_robust/error.hpp"

namespace repr_robust {

std::string to_string(DivergenceKind kind) {
  switch (kind) {
    case DivergenceKind::L2: return "l2";
    case DivergenceKind::Linf: return "linf";
    case DivergenceKind::Cosine: return "cosine-distance";
    case DivergenceKind::KlSoftmax: return "kl-softmax";
  }
  return "?";
}

DivergenceKind parse_divergence_kind(const std::string& name) {
  if (name == "l2") return DivergenceKind::L2;
  if (name == "linf") return DivergenceKind::Linf;
  if (name == "cosine-distance") return DivergenceKind::Cosine;
  if (name == "kl-softmax") return DivergenceKind::KlSoftmax;
  throw DomainError("unknown divergence '" + name +
                    "' (expected l2, linf, cosine-distance or kl-softmax)");
}

namespace {

void check_temperature(const Divergence& d) {
  if (d.kind == DivergenceKind::KlSoftmax && !(d.temperature > 0.0)) {
    throw DomainError("kl-softmax: temperature must be positive");
  }
}

// log softmax(v / T), numerically stable.
std::vector<double> log_softmax_scaled(std::span<const double> v, double t) {
  std::vector<double> out(v.size());
  double m = -INFINITY;
  for (double x : v) m = std::max(m, x / t);
  double z = 0.0;
  for (double x : v) z += std::exp(x / t - m);
  const double lse = m + std::log(z);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / t - lse;
  return out;
}

}  // namespace

double divergence(const Divergence& d, std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError("divergence: representations of length " + std::to_string(a.size()) +
                     " and " + std::to_string(b.size()));
  }
  check_temperature(d);
  switch (d.kind) {
    case DivergenceKind::L2: {
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
      return std::sqrt(s);
    }
    case DivergenceKind::Linf: {
      double m = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
      return m;
    }
    case DivergenceKind::Cosine: {
      double aa = 0.0, bb = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        aa += a[i] * a[i];
        bb += b[i] * b[i];
      }
      if (aa == 0.0 || bb == 0.0) throw DomainError("cosine-distance: zero representation");
      // 1 - cos as half the squared distance of the unit vectors: d(r, r) is exactly 0.
      const double na = std::sqrt(aa), nb = std::sqrt(bb);
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] / na - b[i] / nb;
        s += diff * diff;
      }
      return 0.5 * s;
    }
    case DivergenceKind::KlSoftmax: {
      const auto lp = log_softmax_scaled(a, d.temperature);
      const auto lq = log_softmax_scaled(b, d.temperature);
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += std::exp(lp[i]) * (lp[i] - lq[i]);
      return std::max(0.0, s);
    }
  }
  return 0.0;
}

double divergence(const Divergence& d, const Tensor& a, const Tensor& b) {
  return divergence(d, a.data(), b.data());
}

Var divergence_rows(const Divergence& d, const Var& a, const Var& b) {
  if (a.shape() != b.shape() || a.value().rank() != 2) {
    throw ShapeError("divergence: incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  check_temperature(d);
  switch (d.kind) {
    case DivergenceKind::L2:
      return sqrt(row_sum(square(a - b)));
    case DivergenceKind::Linf:
      return row_max(abs(a - b));
    case DivergenceKind::Cosine: {
      return scale(row_sum(square(normalize_rows(a) - normalize_rows(b))), 0.5);
    }
    case DivergenceKind::KlSoftmax: {
      const Var sa = scale(a, 1.0 / d.temperature);
      const Var sb = scale(b, 1.0 / d.temperature);
      const Var lp = log_softmax(sa);
      return row_sum(mul(softmax(sa), lp - log_softmax(sb)));
    }
  }
  throw DomainError("divergence: unknown kind");
}

}  // namespace repr_robust
