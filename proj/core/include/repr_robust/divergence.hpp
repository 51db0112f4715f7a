#pragma once

#include <span>
#include <string>

#include "repr_robust/autodiff.hpp"

namespace repr_robust {

// Divergences on the representation space. l2, linf and cosine-distance are
// symmetric; kl-softmax is KL(softmax(r/T) || softmax(r'/T)) and is not.
enum class DivergenceKind { L2, Linf, Cosine, KlSoftmax };

struct Divergence {
  DivergenceKind kind = DivergenceKind::L2;
  double temperature = 1.0;  // kl-softmax only

  bool symmetric() const noexcept { return kind != DivergenceKind::KlSoftmax; }
  bool operator==(const Divergence&) const = default;
};

// Config names: "l2", "linf", "cosine-distance", "kl-softmax".
std::string to_string(DivergenceKind kind);
DivergenceKind parse_divergence_kind(const std::string& name);

// d(a, b) for two representations of equal length.
// Throws ShapeError on length mismatch, DomainError for a zero vector under
// cosine-distance or a non-positive temperature.
double divergence(const Divergence& d, std::span<const double> a, std::span<const double> b);
double divergence(const Divergence& d, const Tensor& a, const Tensor& b);

// Row-wise d(a_i, b_i) recorded on the graph: [n, k] x [n, k] -> [n].
// linf uses the subgradient with unit mass on the first maximizing coordinate.
Var divergence_rows(const Divergence& d, const Var& a, const Var& b);

}  // namespace repr_robust
