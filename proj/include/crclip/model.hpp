#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crclip/cmcr.hpp"
#include "crclip/frames.hpp"
#include "crclip/nn.hpp"
#include "crclip/tensor.hpp"

namespace crclip {

struct ModelConfig {
  // clip geometry
  std::size_t frames = 2, height = 16, width = 16, channels = 3, patch = 8;
  // encoders
  std::size_t vis_width = 32, vis_layers = 2, vis_heads = 2;
  std::size_t text_vocab = 64, text_width = 32, text_layers = 2, text_heads = 2;
  std::size_t max_tokens = 16;
  // refinement
  std::size_t attn_dim = 512, attn_heads = 8;
  bool use_cmcr = true;
  bool swap_cmcr_routing = false;
  // projection
  std::size_t proj_hidden = 64, embed_dim = 32;
  double dropout = 0.1;

  std::size_t patch_slots() const {
    return frames * (height / patch) * (width / patch);
  }
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Dual encoders + CMCR + projection heads, wired per config. The refined
// "visual" feature carries the text width and vice versa (residual over the
// query), so the projection head input widths follow the routing.
struct Model {
  ModelConfig cfg;
  EncoderParams visual;
  EncoderParams text;
  CmcrParams cmcr;
  ProjectionParams proj_v;
  ProjectionParams proj_t;

  static Model init(const ModelConfig& cfg, std::uint64_t seed);

  // Fixed construction-order registry (checkpoints, Adam, grad zeroing).
  std::vector<std::pair<std::string, Tensor>> named_params();

  struct Forward {
    Tensor f_v, f_t;          // encoder features
    Tensor refined_v, refined_t;  // post-CMCR (undefined when cmcr off)
    Tensor emb_v, emb_t;      // unit-norm embeddings
    Tensor sims;              // emb_v · emb_tᵀ
  };
  Forward forward(const std::vector<FrameStack>& clips,
                  const std::vector<std::vector<int>>& captions, bool training,
                  Rng& rng);

  // Per-sample eval-mode hooks for test-time augmentation: encode one clip
  // variant, then push it through refinement (paired with the sample's text
  // feature) and the visual projection head.
  Tensor encode_visual_feature(const FrameStack& clip);
  Tensor text_features(const std::vector<std::vector<int>>& captions);
  Tensor visual_embedding(const Tensor& f_v_row, const Tensor& f_t_row);
  Tensor text_embedding(const Tensor& f_v_row, const Tensor& f_t_row);
};

}  // namespace crclip
