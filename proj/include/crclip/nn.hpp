#pragma once

#include <cstdint>
#include <vector>

#include "crclip/frames.hpp"
#include "crclip/tensor.hpp"

namespace crclip {

// Multi-head attention weights. Query-side and key/value-side inputs may
// have different widths; w_o maps the attention width back to the output
// width so residual connections typecheck.
struct MhaParams {
  Tensor w_q;  // [D_q_in × D_a]
  Tensor w_k;  // [D_kv_in × D_a]
  Tensor w_v;  // [D_kv_in × D_a]
  Tensor w_o;  // [D_a × D_out]
  std::size_t heads = 8;
  double dropout_rate = 0.1;

  static MhaParams init(std::size_t d_q_in, std::size_t d_kv_in, std::size_t d_attn,
                        std::size_t d_out, std::size_t heads, double dropout, Rng& rng);
  void validate() const;
};

// GELU-gated linear unit: GELU(x·w_gate) ⊙ (x·w_up) · w_down.
struct GatedFfnParams {
  Tensor w_gate;  // [D × H]
  Tensor w_up;    // [D × H]
  Tensor w_down;  // [H × D]
  double dropout_rate = 0.1;

  static GatedFfnParams init(std::size_t d, std::size_t hidden, double dropout, Rng& rng);
  void validate() const;
};

// Two-layer MLP with GELU between the layers.
struct MlpParams {
  Tensor w1;  // [D_in × D_hidden]
  Tensor b1;  // [D_hidden]
  Tensor w2;  // [D_hidden × D_out]
  Tensor b2;  // [D_out]

  static MlpParams init(std::size_t d_in, std::size_t d_hidden, std::size_t d_out, Rng& rng);
};

// Projection head into the shared embedding space (MLP + L2 normalize).
using ProjectionParams = MlpParams;

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams init(std::size_t d);
};

struct EncoderLayerParams {
  MhaParams attn;
  LayerNormParams ln1;
  MlpParams ffn;
  LayerNormParams ln2;
};

enum class Pooling { MeanTokens, LastToken };

// Tiny transformer encoder: embedding + positional table + L self-attention
// layers. `embed` is the patch projection for the visual side and the token
// table for the text side.
struct EncoderParams {
  Tensor embed;      // [patch_dim × D] (visual) or [vocab × D] (text)
  Tensor pos_embed;  // [slots × D] or [max_tokens × D]
  std::vector<EncoderLayerParams> layers;
  Pooling pooling = Pooling::MeanTokens;
  std::size_t patch = 0;  // visual only
  int bos_id = 0;         // text only
  int eos_id = 1;

  static EncoderParams init_visual(std::size_t patch, std::size_t channels,
                                   std::size_t slots, std::size_t width,
                                   std::size_t layers, std::size_t heads,
                                   double dropout, Rng& rng);
  static EncoderParams init_text(std::size_t vocab, std::size_t max_tokens,
                                 std::size_t width, std::size_t layers,
                                 std::size_t heads, double dropout, Rng& rng);
  std::size_t width() const { return embed.cols(); }
};

// Cross-attention where every batch row is its own length-1 sequence:
// softmax runs over a single key per sample, never across the batch.
Tensor cross_attention(const Tensor& query_in, const Tensor& kv_in,
                       const MhaParams& p, bool training, Rng& rng);

// Self-attention over `seqs` packed sequences of equal length.
Tensor self_attention(const Tensor& x, std::size_t seqs, const MhaParams& p,
                      bool training, Rng& rng);

Tensor gated_ffn(const Tensor& x, const GatedFfnParams& p, bool training, Rng& rng);

Tensor mlp_forward(const Tensor& x, const MlpParams& p);

// MLP projection followed by row L2 normalization.
Tensor project_embed(const Tensor& x, const ProjectionParams& p);

// FrameStack -> [n_patches × patch·patch·C] row-major patch matrix.
Tensor patchify(const FrameStack& frames, std::size_t patch);

Tensor encode_visual(const FrameStack& frames, const EncoderParams& p,
                     bool training, Rng& rng);
Tensor encode_visual_batch(const std::vector<FrameStack>& clips,
                           const EncoderParams& p, bool training, Rng& rng);

Tensor encode_text(const std::vector<int>& tokens, const EncoderParams& p,
                   bool training, Rng& rng);
Tensor encode_text_batch(const std::vector<std::vector<int>>& captions,
                         const EncoderParams& p, bool training, Rng& rng);

}  // namespace crclip
