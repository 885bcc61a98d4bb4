#include "crclip/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "crclip/cmcr.hpp"
#include "crclip/losses.hpp"
#include "crclip/nn.hpp"

namespace crclip {

double rel_err(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

double check_gradients(const std::function<Tensor()>& forward,
                       const std::vector<Tensor>& leaves, double fd_step) {
  for (const Tensor& leaf : leaves)
    if (!leaf.requires_grad())
      throw ContractError("check_gradients: leaf does not require grad");

  // analytic pass
  std::vector<std::vector<double>> analytic;
  {
    for (const Tensor& leaf : leaves) const_cast<Tensor&>(leaf).zero_grad();
    Tensor loss = forward();
    backward(loss);
    for (const Tensor& leaf : leaves) analytic.push_back(leaf.grad());
  }

  // numeric probes, forward evaluations only
  double worst = 0.0;
  NoGradGuard guard;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li];
    std::vector<double>& vals = leaf.mutable_data();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + fd_step;
      const double up = forward().item();
      vals[i] = saved - fd_step;
      const double down = forward().item();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * fd_step);
      worst = std::max(worst, rel_err(analytic[li][i], numeric));
    }
  }
  return worst;
}

namespace {

Tensor leaf(Shape shape, Rng& rng, double stddev = 1.0) {
  return Tensor::randn(std::move(shape), rng, stddev, /*requires_grad=*/true);
}

Tensor scalarize(const Tensor& out, const Tensor& weights) {
  return mean(mul(out, weights));
}

using CaseFn = std::function<double(Rng&)>;

GradCheckReport run_cases(const std::string& name, double tolerance, int cases,
                          Rng& rng, const CaseFn& one_case) {
  GradCheckReport rep;
  rep.name = name;
  rep.cases = cases;
  rep.tolerance = tolerance;
  for (int i = 0; i < cases; ++i)
    rep.max_rel_err = std::max(rep.max_rel_err, one_case(rng));
  rep.pass = rep.max_rel_err < tolerance;
  return rep;
}

double case_matmul(Rng& rng) {
  Tensor a = leaf({5, 7}, rng), b = leaf({7, 3}, rng);
  Tensor w = Tensor::randn({5, 3}, rng);
  return check_gradients([&] { return scalarize(matmul(a, b), w); }, {a, b});
}

double case_softmax(Rng& rng) {
  Tensor x = leaf({4, 6}, rng, 2.0);
  Tensor w = Tensor::randn({4, 6}, rng);
  return check_gradients([&] { return scalarize(softmax(x, 1), w); }, {x});
}

double case_layer_norm(Rng& rng) {
  Tensor x = leaf({3, 8}, rng), g = leaf({8}, rng), b = leaf({8}, rng);
  Tensor w = Tensor::randn({3, 8}, rng);
  return check_gradients([&] { return scalarize(layer_norm(x, g, b), w); }, {x, g, b});
}

double case_gelu(Rng& rng) {
  Tensor x = leaf({2, 9}, rng, 2.0);
  Tensor w = Tensor::randn({2, 9}, rng);
  return check_gradients([&] { return scalarize(gelu(x), w); }, {x});
}

double case_l2_normalize(Rng& rng) {
  Tensor x = leaf({4, 6}, rng);
  Tensor w = Tensor::randn({4, 6}, rng);
  return check_gradients([&] { return scalarize(l2_normalize(x), w); }, {x});
}

double case_elementwise(Rng& rng) {
  Tensor x = leaf({3, 5}, rng), y = leaf({3, 5}, rng);
  Tensor w = Tensor::randn({3, 5}, rng);
  auto forward = [&] {
    Tensor t = add(mul(sigmoid(x), exp(scale(y, 0.3))), log1p(exp(sub(x, y))));
    return scalarize(t, w);
  };
  return check_gradients(forward, {x, y});
}

double case_dropout(Rng& rng) {
  Tensor x = leaf({4, 8}, rng);
  Tensor w = Tensor::randn({4, 8}, rng);
  const std::uint64_t mask_seed = rng();
  auto forward = [&, mask_seed] {
    Rng mask_rng(mask_seed);  // same mask on every probe
    return scalarize(dropout(x, 0.25, true, mask_rng), w);
  };
  return check_gradients(forward, {x});
}

double case_structural(Rng& rng) {
  Tensor x = leaf({4, 6}, rng);
  Tensor table = leaf({5, 3}, rng);
  Tensor wa = Tensor::randn({4, 6}, rng);
  Tensor wb = Tensor::randn({4, 3}, rng);
  auto fwd = [&] {
    Tensor t = transpose(reshape(x, {6, 4}));                 // [4×6]
    Tensor parts = concat_rows({t, x});                       // [8×6]
    Tensor pooled = mean_pool_rows(parts, 4);                 // [4×6]
    Tensor a = scalarize(pooled, wa);
    Tensor g = gather_rows(table, {0, 2, 4, 1, 3, 0, 2, 4});  // [8×3]
    Tensor b = scalarize(mean_pool_rows(g, 4), wb);
    return add(a, b);
  };
  return check_gradients(fwd, {x, table});
}

double case_attention_core(Rng& rng) {
  const std::size_t seqs = 2, len = 3, da = 8;
  Tensor q = leaf({seqs * len, da}, rng);
  Tensor k = leaf({seqs * len, da}, rng);
  Tensor v = leaf({seqs * len, da}, rng);
  Tensor w = Tensor::randn({seqs * len, da}, rng);
  Rng unused(0);
  auto forward = [&] {
    return scalarize(attention_core(q, k, v, seqs, 2, 0.0, false, unused), w);
  };
  return check_gradients(forward, {q, k, v});
}

double case_cross_attention(Rng& rng, bool train_dropout) {
  const std::size_t b = 3, dq = 5, dkv = 6, da = 8, dout = 5;
  MhaParams p = MhaParams::init(dq, dkv, da, dout, 2, train_dropout ? 0.2 : 0.0, rng);
  Tensor query = leaf({b, dq}, rng);
  Tensor kv = leaf({b, dkv}, rng);
  Tensor w = Tensor::randn({b, dout}, rng);
  const std::uint64_t mask_seed = rng();
  auto forward = [&, mask_seed] {
    Rng mask_rng(mask_seed);
    return scalarize(cross_attention(query, kv, p, train_dropout, mask_rng), w);
  };
  return check_gradients(forward, {p.w_q, p.w_k, p.w_v, p.w_o, query, kv});
}

double case_gated_ffn(Rng& rng) {
  const std::size_t b = 3, d = 6;
  GatedFfnParams p = GatedFfnParams::init(d, 2 * d, 0.0, rng);
  // unit-scale weights give the gate a real operating range
  for (Tensor* t : {&p.w_gate, &p.w_up, &p.w_down})
    for (double& v : t->mutable_data()) v *= 25.0;
  Tensor x = leaf({b, d}, rng);
  Tensor w = Tensor::randn({b, d}, rng);
  Rng unused(0);
  auto forward = [&] { return scalarize(gated_ffn(x, p, false, unused), w); };
  return check_gradients(forward, {p.w_gate, p.w_up, p.w_down, x});
}

double case_project_embed(Rng& rng) {
  const std::size_t b = 3, d_in = 6, hidden = 7, d = 5;
  ProjectionParams p = ProjectionParams::init(d_in, hidden, d, rng);
  for (Tensor* t : {&p.w1, &p.w2})
    for (double& v : t->mutable_data()) v *= 25.0;
  Tensor x = leaf({b, d_in}, rng);
  Tensor w = Tensor::randn({b, d}, rng);
  auto forward = [&] { return scalarize(project_embed(x, p), w); };
  return check_gradients(forward, {p.w1, p.b1, p.w2, p.b2, x});
}

double case_sms_loss(Rng& rng) {
  const std::size_t bv = 4, bt = 5;
  Tensor s = leaf({bv, bt}, rng, 0.5);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> cv(bv * bt);
  for (double& v : cv) v = uni(rng);
  RelevanceMatrix c(Tensor({bv, bt}, std::move(cv)));
  SmsConfig cfg;
  cfg.tau = 0.05;
  cfg.gamma = 3.0;
  auto forward = [&] { return sms_loss(s, c, cfg); };
  return check_gradients(forward, {s});
}

double case_mimm_loss(Rng& rng) {
  const std::size_t b = 4;
  const double margin = 0.2;
  // resample until no hinge argument sits within 1e-3 of its kink
  for (;;) {
    Tensor s = leaf({b, b}, rng, 0.5);
    bool near_kink = false;
    for (std::size_t i = 0; i < b && !near_kink; ++i)
      for (std::size_t j = 0; j < b && !near_kink; ++j) {
        if (i == j) continue;
        if (std::abs(margin - s.at(i, i) + s.at(i, j)) < 1e-3) near_kink = true;
        if (std::abs(margin - s.at(i, i) + s.at(j, i)) < 1e-3) near_kink = true;
      }
    if (near_kink) continue;
    auto forward = [&] { return mimm_loss(s, margin); };
    return check_gradients(forward, {s});
  }
}

double case_encoder_visual(Rng& rng) {
  EncoderParams p = EncoderParams::init_visual(/*patch=*/2, /*channels=*/1,
                                               /*slots=*/4, /*width=*/8,
                                               /*layers=*/1, /*heads=*/2, 0.0, rng);
  FrameStack clip(1, 4, 4, 1);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (double& v : clip.values) v = uni(rng);
  Tensor w = Tensor::randn({1, 8}, rng);
  Rng unused(0);
  auto forward = [&] { return scalarize(encode_visual(clip, p, false, unused), w); };
  std::vector<Tensor> leaves{p.embed, p.pos_embed};
  for (auto& layer : p.layers) {
    for (Tensor* t : {&layer.attn.w_q, &layer.attn.w_k, &layer.attn.w_v, &layer.attn.w_o,
                      &layer.ln1.gain, &layer.ln1.bias, &layer.ffn.w1, &layer.ffn.b1,
                      &layer.ffn.w2, &layer.ffn.b2, &layer.ln2.gain, &layer.ln2.bias})
      leaves.push_back(*t);
  }
  return check_gradients(forward, leaves);
}

double case_encoder_text(Rng& rng) {
  EncoderParams p = EncoderParams::init_text(/*vocab=*/10, /*max_tokens=*/8,
                                             /*width=*/8, /*layers=*/1,
                                             /*heads=*/2, 0.0, rng);
  std::vector<int> tokens{0, 4, 7, 3, 1};
  Tensor w = Tensor::randn({1, 8}, rng);
  Rng unused(0);
  auto forward = [&] { return scalarize(encode_text(tokens, p, false, unused), w); };
  std::vector<Tensor> leaves{p.embed, p.pos_embed};
  for (auto& layer : p.layers) {
    for (Tensor* t : {&layer.attn.w_q, &layer.attn.w_k, &layer.attn.w_v, &layer.attn.w_o,
                      &layer.ln1.gain, &layer.ln1.bias, &layer.ffn.w1, &layer.ffn.b1,
                      &layer.ffn.w2, &layer.ffn.b2, &layer.ln2.gain, &layer.ln2.bias})
      leaves.push_back(*t);
  }
  return check_gradients(forward, leaves);
}

// The composed CMCR -> projection -> SMS-loss graph at toy dims, every
// parameter and both feature inputs probed.
double case_composed_cmcr_sms(Rng& rng) {
  const std::size_t b = 4, dv = 6, dt = 5, da = 8, heads = 2, hidden = 7, d = 5;
  CmcrParams cm = CmcrParams::init(dv, dt, da, heads, 0.0, rng);
  ProjectionParams pv = ProjectionParams::init(dt, hidden, d, rng);
  ProjectionParams pt = ProjectionParams::init(dv, hidden, d, rng);
  for (Tensor* t : {&pv.w1, &pv.w2, &pt.w1, &pt.w2})
    for (double& v : t->mutable_data()) v *= 25.0;
  Tensor f_v = leaf({b, dv}, rng);
  Tensor f_t = leaf({b, dt}, rng);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> cv(b * b);
  for (double& v : cv) v = uni(rng);
  RelevanceMatrix c(Tensor({b, b}, std::move(cv)));
  SmsConfig cfg;
  cfg.tau = 0.05;
  cfg.gamma = 3.0;
  Rng unused(0);
  auto forward = [&] {
    RefinedPair rp = refine(f_v, f_t, cm, false, unused);
    Tensor emb_v = project_embed(rp.visual, pv);
    Tensor emb_t = project_embed(rp.text, pt);
    return sms_loss(similarity_matrix(emb_v, emb_t), c, cfg);
  };
  std::vector<Tensor> leaves{f_v, f_t};
  for (MhaParams* m : {&cm.text_query, &cm.vision_query})
    for (Tensor* t : {&m->w_q, &m->w_k, &m->w_v, &m->w_o}) leaves.push_back(*t);
  for (LayerNormParams* l : {&cm.ln1_a, &cm.ln2_a, &cm.ln1_b, &cm.ln2_b})
    for (Tensor* t : {&l->gain, &l->bias}) leaves.push_back(*t);
  for (GatedFfnParams* f : {&cm.ffn_a, &cm.ffn_b})
    for (Tensor* t : {&f->w_gate, &f->w_up, &f->w_down}) leaves.push_back(*t);
  for (MlpParams* m : {&pv, &pt})
    for (Tensor* t : {&m->w1, &m->b1, &m->w2, &m->b2}) leaves.push_back(*t);
  return check_gradients(forward, leaves);
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed, int cases) {
  Rng rng(seed);
  std::vector<GradCheckReport> out;
  out.push_back(run_cases("matmul", 1e-5, cases, rng, case_matmul));
  out.push_back(run_cases("softmax", 1e-5, cases, rng, case_softmax));
  out.push_back(run_cases("layer_norm", 1e-5, cases, rng, case_layer_norm));
  out.push_back(run_cases("gelu", 1e-5, cases, rng, case_gelu));
  out.push_back(run_cases("l2_normalize", 1e-5, cases, rng, case_l2_normalize));
  out.push_back(run_cases("elementwise", 1e-5, cases, rng, case_elementwise));
  out.push_back(run_cases("dropout", 1e-5, cases, rng, case_dropout));
  out.push_back(run_cases("structural", 1e-5, cases, rng, case_structural));
  out.push_back(run_cases("attention_core", 1e-4, cases, rng, case_attention_core));
  out.push_back(run_cases("cross_attention", 1e-4, cases, rng,
                          [](Rng& r) { return case_cross_attention(r, false); }));
  out.push_back(run_cases("cross_attention_dropout", 1e-4, cases, rng,
                          [](Rng& r) { return case_cross_attention(r, true); }));
  out.push_back(run_cases("gated_ffn", 1e-4, cases, rng, case_gated_ffn));
  out.push_back(run_cases("project_embed", 1e-4, cases, rng, case_project_embed));
  out.push_back(run_cases("sms_loss", 1e-5, cases, rng, case_sms_loss));
  out.push_back(run_cases("mimm_loss", 1e-5, cases, rng, case_mimm_loss));
  out.push_back(run_cases("encoder_visual", 1e-4, cases, rng, case_encoder_visual));
  out.push_back(run_cases("encoder_text", 1e-4, cases, rng, case_encoder_text));
  out.push_back(run_cases("cmcr_projection_sms", 1e-4, cases, rng,
                          case_composed_cmcr_sms));
  return out;
}

bool all_pass(const std::vector<GradCheckReport>& reports) {
  return std::all_of(reports.begin(), reports.end(),
                     [](const GradCheckReport& r) { return r.pass; });
}

}  // namespace crclip
