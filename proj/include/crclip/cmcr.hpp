#pragma once

#include "crclip/nn.hpp"
#include "crclip/tensor.hpp"

namespace crclip {

// Cross-Modal Context Refinement block. Branch A queries with the text
// features against visual keys/values; branch B mirrors it. Each branch is
// residual+LayerNorm around the cross-attention, then residual+LayerNorm
// around a GatedFFN. The residual adds the query-side input, so the
// "refined visual" output lives in the text feature dimension and vice versa.
struct CmcrParams {
  MhaParams text_query;    // Q from F_t, K/V from F_v -> F_{v<-t} [B × D_t]
  MhaParams vision_query;  // Q from F_v, K/V from F_t -> F_{t<-v} [B × D_v]
  LayerNormParams ln1_a, ln2_a;  // branch A (text query), width D_t
  LayerNormParams ln1_b, ln2_b;  // branch B (vision query), width D_v
  GatedFfnParams ffn_a;          // width D_t
  GatedFfnParams ffn_b;          // width D_v

  static CmcrParams init(std::size_t d_v, std::size_t d_t, std::size_t attn_dim,
                         std::size_t heads, double dropout, Rng& rng);
};

struct RefinedPair {
  Tensor visual;  // F_v^r [B × D_t]
  Tensor text;    // F_t^r [B × D_v]
};

RefinedPair refine(const Tensor& f_v, const Tensor& f_t, const CmcrParams& p,
                   bool training, Rng& rng);

}  // namespace crclip
