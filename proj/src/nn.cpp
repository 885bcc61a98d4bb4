#include "crclip/nn.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace crclip {

namespace {
constexpr double kInitStd = 0.02;
}

MhaParams MhaParams::init(std::size_t d_q_in, std::size_t d_kv_in, std::size_t d_attn,
                          std::size_t d_out, std::size_t heads, double dropout,
                          Rng& rng) {
  MhaParams p;
  p.w_q = Tensor::randn({d_q_in, d_attn}, rng, kInitStd, true);
  p.w_k = Tensor::randn({d_kv_in, d_attn}, rng, kInitStd, true);
  p.w_v = Tensor::randn({d_kv_in, d_attn}, rng, kInitStd, true);
  p.w_o = Tensor::randn({d_attn, d_out}, rng, kInitStd, true);
  p.heads = heads;
  p.dropout_rate = dropout;
  p.validate();
  return p;
}

void MhaParams::validate() const {
  const std::size_t da = w_q.cols();
  if (heads == 0 || da % heads != 0)
    throw ConfigError("MhaParams: attention dim " + std::to_string(da) +
                      " not divisible by " + std::to_string(heads) + " heads");
  if (w_k.cols() != da || w_v.cols() != da || w_o.rows() != da)
    throw ConfigError("MhaParams: inconsistent attention width");
  if (w_k.rows() != w_v.rows())
    throw ConfigError("MhaParams: w_k and w_v input widths differ");
}

GatedFfnParams GatedFfnParams::init(std::size_t d, std::size_t hidden, double dropout,
                                    Rng& rng) {
  GatedFfnParams p;
  p.w_gate = Tensor::randn({d, hidden}, rng, kInitStd, true);
  p.w_up = Tensor::randn({d, hidden}, rng, kInitStd, true);
  p.w_down = Tensor::randn({hidden, d}, rng, kInitStd, true);
  p.dropout_rate = dropout;
  return p;
}

void GatedFfnParams::validate() const {
  if (w_gate.shape() != w_up.shape() || w_gate.cols() != w_down.rows() ||
      w_gate.rows() != w_down.cols())
    throw ConfigError("GatedFfnParams: inconsistent shapes");
}

MlpParams MlpParams::init(std::size_t d_in, std::size_t d_hidden, std::size_t d_out,
                          Rng& rng) {
  MlpParams p;
  p.w1 = Tensor::randn({d_in, d_hidden}, rng, kInitStd, true);
  p.b1 = Tensor::zeros({d_hidden}, true);
  p.w2 = Tensor::randn({d_hidden, d_out}, rng, kInitStd, true);
  p.b2 = Tensor::zeros({d_out}, true);
  return p;
}

LayerNormParams LayerNormParams::init(std::size_t d) {
  LayerNormParams p;
  p.gain = Tensor::full({d}, 1.0, true);
  p.bias = Tensor::zeros({d}, true);
  return p;
}

EncoderParams EncoderParams::init_visual(std::size_t patch, std::size_t channels,
                                         std::size_t slots, std::size_t width,
                                         std::size_t layers, std::size_t heads,
                                         double dropout, Rng& rng) {
  EncoderParams p;
  p.embed = Tensor::randn({patch * patch * channels, width}, rng, kInitStd, true);
  p.pos_embed = Tensor::randn({slots, width}, rng, kInitStd, true);
  for (std::size_t i = 0; i < layers; ++i) {
    EncoderLayerParams layer;
    layer.attn = MhaParams::init(width, width, width, width, heads, dropout, rng);
    layer.ln1 = LayerNormParams::init(width);
    layer.ffn = MlpParams::init(width, 2 * width, width, rng);
    layer.ln2 = LayerNormParams::init(width);
    p.layers.push_back(std::move(layer));
  }
  p.pooling = Pooling::MeanTokens;
  p.patch = patch;
  return p;
}

EncoderParams EncoderParams::init_text(std::size_t vocab, std::size_t max_tokens,
                                       std::size_t width, std::size_t layers,
                                       std::size_t heads, double dropout, Rng& rng) {
  EncoderParams p;
  p.embed = Tensor::randn({vocab, width}, rng, kInitStd, true);
  p.pos_embed = Tensor::randn({max_tokens, width}, rng, kInitStd, true);
  for (std::size_t i = 0; i < layers; ++i) {
    EncoderLayerParams layer;
    layer.attn = MhaParams::init(width, width, width, width, heads, dropout, rng);
    layer.ln1 = LayerNormParams::init(width);
    layer.ffn = MlpParams::init(width, 2 * width, width, rng);
    layer.ln2 = LayerNormParams::init(width);
    p.layers.push_back(std::move(layer));
  }
  p.pooling = Pooling::LastToken;
  return p;
}

Tensor cross_attention(const Tensor& query_in, const Tensor& kv_in,
                       const MhaParams& p, bool training, Rng& rng) {
  p.validate();
  if (query_in.rows() != kv_in.rows())
    throw InputError("cross_attention: batch mismatch " +
                     std::to_string(query_in.rows()) + " vs " +
                     std::to_string(kv_in.rows()));
  Tensor q = matmul(query_in, p.w_q);
  Tensor k = matmul(kv_in, p.w_k);
  Tensor v = matmul(kv_in, p.w_v);
  // every sample is a length-1 sequence; the single-key softmax is exactly 1
  Tensor attended = attention_core(q, k, v, /*seqs=*/query_in.rows(), p.heads,
                                   p.dropout_rate, training, rng);
  return matmul(attended, p.w_o);
}

Tensor self_attention(const Tensor& x, std::size_t seqs, const MhaParams& p,
                      bool training, Rng& rng) {
  p.validate();
  Tensor q = matmul(x, p.w_q);
  Tensor k = matmul(x, p.w_k);
  Tensor v = matmul(x, p.w_v);
  Tensor attended =
      attention_core(q, k, v, seqs, p.heads, p.dropout_rate, training, rng);
  return matmul(attended, p.w_o);
}

Tensor gated_ffn(const Tensor& x, const GatedFfnParams& p, bool training, Rng& rng) {
  p.validate();
  Tensor hidden = mul(gelu(matmul(x, p.w_gate)), matmul(x, p.w_up));
  hidden = dropout(hidden, p.dropout_rate, training, rng);
  return matmul(hidden, p.w_down);
}

Tensor mlp_forward(const Tensor& x, const MlpParams& p) {
  Tensor h = gelu(add_bias(matmul(x, p.w1), p.b1));
  return add_bias(matmul(h, p.w2), p.b2);
}

Tensor project_embed(const Tensor& x, const ProjectionParams& p) {
  return l2_normalize(mlp_forward(x, p));
}

Tensor patchify(const FrameStack& frames, std::size_t patch) {
  if (patch == 0 || frames.h % patch != 0 || frames.w % patch != 0)
    throw ConfigError("patchify: frame " + std::to_string(frames.h) + "x" +
                      std::to_string(frames.w) + " not divisible by patch " +
                      std::to_string(patch));
  const std::size_t ph = frames.h / patch, pw = frames.w / patch;
  const std::size_t n = frames.t * ph * pw;
  const std::size_t dim = patch * patch * frames.c;
  std::vector<double> rows(n * dim);
  std::size_t r = 0;
  for (std::size_t t = 0; t < frames.t; ++t)
    for (std::size_t py = 0; py < ph; ++py)
      for (std::size_t px = 0; px < pw; ++px, ++r) {
        double* dst = rows.data() + r * dim;
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            for (std::size_t c = 0; c < frames.c; ++c)
              *dst++ = frames.at(t, py * patch + y, px * patch + x, c);
      }
  return Tensor(Shape{n, dim}, std::move(rows));
}

namespace {

Tensor encoder_layer_forward(const Tensor& x, std::size_t seqs,
                             const EncoderLayerParams& layer, bool training,
                             Rng& rng) {
  Tensor h = layer_norm(add(x, self_attention(x, seqs, layer.attn, training, rng)),
                        layer.ln1.gain, layer.ln1.bias);
  return layer_norm(add(h, mlp_forward(h, layer.ffn)), layer.ln2.gain,
                    layer.ln2.bias);
}

}  // namespace

Tensor encode_visual_batch(const std::vector<FrameStack>& clips,
                           const EncoderParams& p, bool training, Rng& rng) {
  if (clips.empty()) throw InputError("encode_visual: empty batch");
  if (p.patch == 0) throw ConfigError("encode_visual: encoder has no patch size");
  for (const FrameStack& f : clips)
    if (!f.same_geometry(clips.front()))
      throw InputError("encode_visual: mixed clip geometry in batch");

  const std::size_t b = clips.size();
  std::vector<Tensor> per_clip;
  per_clip.reserve(b);
  for (const FrameStack& f : clips) per_clip.push_back(patchify(f, p.patch));
  const std::size_t slots = per_clip.front().rows();
  if (slots != p.pos_embed.rows())
    throw ConfigError("encode_visual: clip yields " + std::to_string(slots) +
                      " patch tokens but positional table has " +
                      std::to_string(p.pos_embed.rows()));

  Tensor patches = b == 1 ? per_clip.front() : concat_rows(per_clip);
  Tensor x = add_tiled(matmul(patches, p.embed), p.pos_embed);
  for (const EncoderLayerParams& layer : p.layers)
    x = encoder_layer_forward(x, b, layer, training, rng);
  return mean_pool_rows(x, b);
}

Tensor encode_visual(const FrameStack& frames, const EncoderParams& p,
                     bool training, Rng& rng) {
  return encode_visual_batch({frames}, p, training, rng);
}

namespace {

void validate_tokens(const std::vector<int>& tokens, const EncoderParams& p) {
  if (tokens.size() < 2)
    throw InputError("encode_text: need at least [BOS, EOS], got " +
                     std::to_string(tokens.size()) + " tokens");
  if (tokens.size() > p.pos_embed.rows())
    throw InputError("encode_text: sequence length " +
                     std::to_string(tokens.size()) + " exceeds positional table " +
                     std::to_string(p.pos_embed.rows()));
  const int vocab = static_cast<int>(p.embed.rows());
  for (int id : tokens)
    if (id < 0 || id >= vocab)
      throw InputError("encode_text: token id " + std::to_string(id) +
                       " outside vocabulary of " + std::to_string(vocab));
  if (tokens.front() != p.bos_id || tokens.back() != p.eos_id)
    throw InputError("encode_text: sequence must start with BOS and end with EOS");
}

}  // namespace

Tensor encode_text_batch(const std::vector<std::vector<int>>& captions,
                         const EncoderParams& p, bool training, Rng& rng) {
  if (captions.empty()) throw InputError("encode_text: empty batch");
  const std::size_t len = captions.front().size();
  const bool uniform = std::all_of(captions.begin(), captions.end(),
                                   [len](const auto& c) { return c.size() == len; });
  if (!uniform) {
    std::vector<Tensor> outs;
    outs.reserve(captions.size());
    for (const auto& c : captions) outs.push_back(encode_text(c, p, training, rng));
    return concat_rows(outs);
  }

  for (const auto& c : captions) validate_tokens(c, p);
  const std::size_t b = captions.size();
  std::vector<std::size_t> flat;
  flat.reserve(b * len);
  for (const auto& c : captions)
    for (int id : c) flat.push_back(static_cast<std::size_t>(id));

  std::vector<std::size_t> positions(len);
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = add_tiled(gather_rows(p.embed, flat), gather_rows(p.pos_embed, positions));
  for (const EncoderLayerParams& layer : p.layers)
    x = encoder_layer_forward(x, b, layer, training, rng);

  if (p.pooling == Pooling::MeanTokens) return mean_pool_rows(x, b);
  std::vector<std::size_t> eos_rows(b);
  for (std::size_t i = 0; i < b; ++i) eos_rows[i] = i * len + (len - 1);
  return gather_rows(x, eos_rows);
}

Tensor encode_text(const std::vector<int>& tokens, const EncoderParams& p,
                   bool training, Rng& rng) {
  return encode_text_batch({tokens}, p, training, rng);
}

}  // namespace crclip
