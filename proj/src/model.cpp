#include "crclip/model.hpp"

#include <json.hpp>

#include "crclip/losses.hpp"

namespace crclip {

void ModelConfig::validate() const {
  if (patch == 0 || height % patch != 0 || width % patch != 0)
    throw ConfigError("ModelConfig: geometry " + std::to_string(height) + "x" +
                      std::to_string(width) + " not divisible by patch " +
                      std::to_string(patch));
  if (frames == 0 || channels == 0) throw ConfigError("ModelConfig: empty clip geometry");
  if (vis_width == 0 || text_width == 0 || embed_dim == 0 || proj_hidden == 0)
    throw ConfigError("ModelConfig: zero width");
  if (vis_heads == 0 || vis_width % vis_heads != 0)
    throw ConfigError("ModelConfig: vis_width not divisible by vis_heads");
  if (text_heads == 0 || text_width % text_heads != 0)
    throw ConfigError("ModelConfig: text_width not divisible by text_heads");
  if (attn_heads == 0 || attn_dim % attn_heads != 0)
    throw ConfigError("ModelConfig: attn_dim not divisible by attn_heads");
  if (text_vocab < 2) throw ConfigError("ModelConfig: vocabulary too small");
  if (max_tokens < 2) throw ConfigError("ModelConfig: max_tokens too small");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("ModelConfig: dropout outside [0,1)");
  if (swap_cmcr_routing && vis_width != text_width)
    throw ConfigError("ModelConfig: swapped routing needs equal encoder widths");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["frames"] = frames;
  j["height"] = height;
  j["width"] = width;
  j["channels"] = channels;
  j["patch"] = patch;
  j["vis_width"] = vis_width;
  j["vis_layers"] = vis_layers;
  j["vis_heads"] = vis_heads;
  j["text_vocab"] = text_vocab;
  j["text_width"] = text_width;
  j["text_layers"] = text_layers;
  j["text_heads"] = text_heads;
  j["max_tokens"] = max_tokens;
  j["attn_dim"] = attn_dim;
  j["attn_heads"] = attn_heads;
  j["use_cmcr"] = use_cmcr;
  j["swap_cmcr_routing"] = swap_cmcr_routing;
  j["proj_hidden"] = proj_hidden;
  j["embed_dim"] = embed_dim;
  j["dropout"] = dropout;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("model config: invalid JSON: ") + e.what());
  }
  ModelConfig c;
  c.frames = j.value("frames", c.frames);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.channels = j.value("channels", c.channels);
  c.patch = j.value("patch", c.patch);
  c.vis_width = j.value("vis_width", c.vis_width);
  c.vis_layers = j.value("vis_layers", c.vis_layers);
  c.vis_heads = j.value("vis_heads", c.vis_heads);
  c.text_vocab = j.value("text_vocab", c.text_vocab);
  c.text_width = j.value("text_width", c.text_width);
  c.text_layers = j.value("text_layers", c.text_layers);
  c.text_heads = j.value("text_heads", c.text_heads);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.attn_dim = j.value("attn_dim", c.attn_dim);
  c.attn_heads = j.value("attn_heads", c.attn_heads);
  c.use_cmcr = j.value("use_cmcr", c.use_cmcr);
  c.swap_cmcr_routing = j.value("swap_cmcr_routing", c.swap_cmcr_routing);
  c.proj_hidden = j.value("proj_hidden", c.proj_hidden);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.dropout = j.value("dropout", c.dropout);
  c.validate();
  return c;
}

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(seed);
  m.visual = EncoderParams::init_visual(cfg.patch, cfg.channels, cfg.patch_slots(),
                                        cfg.vis_width, cfg.vis_layers, cfg.vis_heads,
                                        cfg.dropout, rng);
  m.text = EncoderParams::init_text(cfg.text_vocab, cfg.max_tokens, cfg.text_width,
                                    cfg.text_layers, cfg.text_heads, cfg.dropout, rng);
  // cmcr weights are drawn even when disabled so checkpoints and later
  // draws stay identical across ablation configs
  m.cmcr = CmcrParams::init(cfg.vis_width, cfg.text_width, cfg.attn_dim,
                            cfg.attn_heads, cfg.dropout, rng);
  const std::size_t vis_head_in =
      cfg.use_cmcr ? (cfg.swap_cmcr_routing ? cfg.vis_width : cfg.text_width)
                   : cfg.vis_width;
  const std::size_t text_head_in =
      cfg.use_cmcr ? (cfg.swap_cmcr_routing ? cfg.text_width : cfg.vis_width)
                   : cfg.text_width;
  m.proj_v = ProjectionParams::init(vis_head_in, cfg.proj_hidden, cfg.embed_dim, rng);
  m.proj_t = ProjectionParams::init(text_head_in, cfg.proj_hidden, cfg.embed_dim, rng);
  return m;
}

namespace {

void add_mha(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
             MhaParams& p) {
  out.emplace_back(prefix + ".w_q", p.w_q);
  out.emplace_back(prefix + ".w_k", p.w_k);
  out.emplace_back(prefix + ".w_v", p.w_v);
  out.emplace_back(prefix + ".w_o", p.w_o);
}

void add_ln(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
            LayerNormParams& p) {
  out.emplace_back(prefix + ".gain", p.gain);
  out.emplace_back(prefix + ".bias", p.bias);
}

void add_mlp(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
             MlpParams& p) {
  out.emplace_back(prefix + ".w1", p.w1);
  out.emplace_back(prefix + ".b1", p.b1);
  out.emplace_back(prefix + ".w2", p.w2);
  out.emplace_back(prefix + ".b2", p.b2);
}

void add_gated_ffn(std::vector<std::pair<std::string, Tensor>>& out,
                   const std::string& prefix, GatedFfnParams& p) {
  out.emplace_back(prefix + ".w_gate", p.w_gate);
  out.emplace_back(prefix + ".w_up", p.w_up);
  out.emplace_back(prefix + ".w_down", p.w_down);
}

void add_encoder(std::vector<std::pair<std::string, Tensor>>& out,
                 const std::string& prefix, EncoderParams& p) {
  out.emplace_back(prefix + ".embed", p.embed);
  out.emplace_back(prefix + ".pos_embed", p.pos_embed);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const std::string lp = prefix + ".layer" + std::to_string(i);
    add_mha(out, lp + ".attn", p.layers[i].attn);
    add_ln(out, lp + ".ln1", p.layers[i].ln1);
    add_mlp(out, lp + ".ffn", p.layers[i].ffn);
    add_ln(out, lp + ".ln2", p.layers[i].ln2);
  }
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> Model::named_params() {
  std::vector<std::pair<std::string, Tensor>> out;
  add_encoder(out, "visual", visual);
  add_encoder(out, "text", text);
  add_mha(out, "cmcr.text_query", cmcr.text_query);
  add_ln(out, "cmcr.ln1_a", cmcr.ln1_a);
  add_gated_ffn(out, "cmcr.ffn_a", cmcr.ffn_a);
  add_ln(out, "cmcr.ln2_a", cmcr.ln2_a);
  add_mha(out, "cmcr.vision_query", cmcr.vision_query);
  add_ln(out, "cmcr.ln1_b", cmcr.ln1_b);
  add_gated_ffn(out, "cmcr.ffn_b", cmcr.ffn_b);
  add_ln(out, "cmcr.ln2_b", cmcr.ln2_b);
  add_mlp(out, "proj_v", proj_v);
  add_mlp(out, "proj_t", proj_t);
  return out;
}

Model::Forward Model::forward(const std::vector<FrameStack>& clips,
                              const std::vector<std::vector<int>>& captions,
                              bool training, Rng& rng) {
  if (clips.size() != captions.size())
    throw InputError("model forward: " + std::to_string(clips.size()) + " clips vs " +
                     std::to_string(captions.size()) + " captions");
  Forward out;
  out.f_v = encode_visual_batch(clips, visual, training, rng);
  out.f_t = encode_text_batch(captions, text, training, rng);
  Tensor vis_in = out.f_v, text_in = out.f_t;
  if (cfg.use_cmcr) {
    RefinedPair rp = refine(out.f_v, out.f_t, cmcr, training, rng);
    out.refined_v = rp.visual;
    out.refined_t = rp.text;
    vis_in = cfg.swap_cmcr_routing ? rp.text : rp.visual;
    text_in = cfg.swap_cmcr_routing ? rp.visual : rp.text;
  }
  out.emb_v = project_embed(vis_in, proj_v);
  out.emb_t = project_embed(text_in, proj_t);
  out.sims = similarity_matrix(out.emb_v, out.emb_t);
  return out;
}

Tensor Model::encode_visual_feature(const FrameStack& clip) {
  NoGradGuard guard;
  Rng unused(0);
  return encode_visual(clip, visual, /*training=*/false, unused);
}

Tensor Model::text_features(const std::vector<std::vector<int>>& captions) {
  NoGradGuard guard;
  Rng unused(0);
  return encode_text_batch(captions, text, /*training=*/false, unused);
}

Tensor Model::visual_embedding(const Tensor& f_v_row, const Tensor& f_t_row) {
  NoGradGuard guard;
  Rng unused(0);
  Tensor vis_in = f_v_row;
  if (cfg.use_cmcr) {
    RefinedPair rp = refine(f_v_row, f_t_row, cmcr, /*training=*/false, unused);
    vis_in = cfg.swap_cmcr_routing ? rp.text : rp.visual;
  }
  return project_embed(vis_in, proj_v);
}

Tensor Model::text_embedding(const Tensor& f_v_row, const Tensor& f_t_row) {
  NoGradGuard guard;
  Rng unused(0);
  Tensor text_in = f_t_row;
  if (cfg.use_cmcr) {
    RefinedPair rp = refine(f_v_row, f_t_row, cmcr, /*training=*/false, unused);
    text_in = cfg.swap_cmcr_routing ? rp.visual : rp.text;
  }
  return project_embed(text_in, proj_t);
}

}  // namespace crclip
