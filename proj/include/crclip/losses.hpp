#pragma once

#include "crclip/tensor.hpp"

namespace crclip {

// Soft relevance scores in [0,1], one row per visual sample, one column
// per text sample.
struct RelevanceMatrix {
  Tensor values;

  RelevanceMatrix() = default;
  explicit RelevanceMatrix(Tensor v);  // validates range
  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
  double at(std::size_t i, std::size_t j) const { return values.at(i, j); }
  RelevanceMatrix transposed() const;
};

struct SmsConfig {
  double tau = 0.05;    // relevance-gap relaxation; triplets with R <= tau drop out
  double gamma = 10.0;  // soft-margin sharpness
  void validate() const;
};

// R = C_ij - C_ik for anchor i and candidate pair (j,k).
double relevance_gap(const RelevanceMatrix& c, std::size_t i, std::size_t j,
                     std::size_t k);

// Symmetric soft-label ranking loss. Per direction, every anchor i and
// ordered candidate pair (j,k) with R = C_ij - C_ik > tau contributes
// R * log1p(exp(gamma * (S_ik - S_ij))); the direction's term is the mean
// over its valid triplets (exactly 0 when none pass the filter). The total
// is the v->t term on (S, C) plus the t->v term on (S^T, C^T).
Tensor sms_loss(const Tensor& sims, const RelevanceMatrix& c, const SmsConfig& cfg);

// Literal three-nested-loop restatement of the definition; no autodiff.
double sms_loss_reference(const Tensor& sims, const RelevanceMatrix& c,
                          const SmsConfig& cfg);

// Max-margin baseline over a paired batch:
// L = (1/B) Σ_i Σ_{j≠i} [max(0, m - S_ii + S_ij) + max(0, m - S_ii + S_ji)].
Tensor mimm_loss(const Tensor& sims, double margin);

// S = V · T^T for unit-norm embedding rows.
Tensor similarity_matrix(const Tensor& visual, const Tensor& text);

}  // namespace crclip
