#pragma once

#include <cstddef>

#include "repr_robust/autodiff.hpp"

namespace repr_robust {

// White-box differentiable map from flattened images [n, input_size] to
// representations [n, representation_dim]. Implementations are immutable
// during evaluation and safe to share across threads.
class RepresentationModel {
 public:
  virtual ~RepresentationModel() = default;

  virtual std::size_t input_size() const = 0;
  virtual std::size_t representation_dim() const = 0;

  // Records the forward pass on `g` with parameters held constant.
  virtual Var forward(Graph& g, const Var& x) const = 0;

  // Forward pass of a [n, input_size] batch (or a single [input_size] image,
  // giving a [representation_dim] result) without keeping the graph.
  Tensor evaluate(const Tensor& x) const;

  // evaluate() over row blocks of a [n, input_size] batch, in parallel.
  // Rows are independent, so the result does not depend on `workers`.
  Tensor evaluate_rows(const Tensor& x, std::size_t workers) const;
};

}  // namespace repr_robust
