#include "crclip/cmcr.hpp"

#include <string>

namespace crclip {

CmcrParams CmcrParams::init(std::size_t d_v, std::size_t d_t, std::size_t attn_dim,
                            std::size_t heads, double dropout, Rng& rng) {
  CmcrParams p;
  p.text_query = MhaParams::init(d_t, d_v, attn_dim, d_t, heads, dropout, rng);
  p.vision_query = MhaParams::init(d_v, d_t, attn_dim, d_v, heads, dropout, rng);
  p.ln1_a = LayerNormParams::init(d_t);
  p.ln2_a = LayerNormParams::init(d_t);
  p.ln1_b = LayerNormParams::init(d_v);
  p.ln2_b = LayerNormParams::init(d_v);
  p.ffn_a = GatedFfnParams::init(d_t, 2 * d_t, dropout, rng);
  p.ffn_b = GatedFfnParams::init(d_v, 2 * d_v, dropout, rng);
  return p;
}

namespace {

Tensor refine_branch(const Tensor& query_in, const Tensor& kv_in, const MhaParams& mha,
                     const LayerNormParams& ln1, const GatedFfnParams& ffn,
                     const LayerNormParams& ln2, bool training, Rng& rng) {
  Tensor attended = cross_attention(query_in, kv_in, mha, training, rng);
  // residual over the original query-side input
  Tensor fused = layer_norm(add(query_in, attended), ln1.gain, ln1.bias);
  return layer_norm(add(fused, gated_ffn(fused, ffn, training, rng)), ln2.gain,
                    ln2.bias);
}

}  // namespace

RefinedPair refine(const Tensor& f_v, const Tensor& f_t, const CmcrParams& p,
                   bool training, Rng& rng) {
  if (f_v.rows() != f_t.rows())
    throw InputError("refine: batch mismatch " + std::to_string(f_v.rows()) +
                     " vs " + std::to_string(f_t.rows()));
  RefinedPair out;
  out.visual = refine_branch(f_t, f_v, p.text_query, p.ln1_a, p.ffn_a, p.ln2_a,
                             training, rng);
  out.text = refine_branch(f_v, f_t, p.vision_query, p.ln1_b, p.ffn_b, p.ln2_b,
                           training, rng);
  // Eq-level shape contract: each refined output lives in its query's width
  if (out.visual.cols() != f_t.cols() || out.text.cols() != f_v.cols())
    throw ShapeError("refine: branch output width drifted from the residual input");
  return out;
}

}  // namespace crclip
