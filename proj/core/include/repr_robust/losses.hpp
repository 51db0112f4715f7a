#pragma once

#include "repr_robust/autodiff.hpp"

namespace repr_robust {

// Mean over rows of the cross-entropy with the positive at index 0 of
//   [q_i.k_i / T, q_i.n_1 / T, ..., q_i.n_m / T].
// q, positives: [n, d]; negatives: [m, d] with m >= 0 (no negatives gives 0).
// Every row must have unit L2 norm (tolerance 1e-6), else DomainError.
Var info_nce(const Var& q, const Var& positives, const Var& negatives, double temperature);

// sum_i -log( exp(q_i.k_i / T) / sum_j exp(q_j.k_i / T) ): each key scores
// every query of the batch and its own query is the positive.
// Rows must have unit norm as for info_nce.
Var batch_info_nce(const Var& q, const Var& keys, double temperature);

// 2T * mean_i -log( exp(q_i.k_i / T) / sum_j exp(q_i.k_j / T) ) after
// L2-normalizing the rows of q and k: the symmetric two-view loss term.
Var pairwise_contrastive(const Var& q, const Var& keys, double temperature);

// Throws DomainError unless every row of the [n, d] tensor has unit norm.
void require_unit_rows(const Tensor& t, const char* what);

}  // namespace repr_robust
