// Acceptance suite: runs every acceptance criterion end to end and prints
// one PASS/FAIL line per criterion. Exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "crclip/cmcr.hpp"
#include "crclip/gradcheck.hpp"
#include "crclip/io.hpp"
#include "crclip/metrics.hpp"
#include "crclip/model.hpp"
#include "crclip/synthdata.hpp"
#include "crclip/trainer.hpp"
#include "crclip/tta.hpp"

using namespace crclip;

namespace {

struct Criterion {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Criterion> results;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  results.push_back({id, name, pass, detail});
  std::printf("[%s] %d %-28s %s\n", pass ? "PASS" : "FAIL", id, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RelevanceMatrix random_relevance(std::size_t rows, std::size_t cols, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> c(rows * cols);
  for (double& v : c) v = uni(rng);
  return RelevanceMatrix(Tensor({rows, cols}, std::move(c)));
}

// ---- 1: gradient suite ------------------------------------------------------

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  auto reports = run_gradcheck_suite(/*seed=*/7, /*cases=*/100);
  double worst = 0.0;
  bool pass = true;
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_err);
    pass = pass && r.pass && r.max_rel_err < 1e-4;
  }
  const double secs = seconds_since(t0);
  pass = pass && secs < 60.0;
  std::ostringstream os;
  os << reports.size() << " suites x100 cases, max_rel_err=" << worst << ", "
     << secs << "s";
  report(1, "gradient-suite", pass, os.str());
}

// ---- 2: metric oracle equivalence -------------------------------------------

void criterion_metric_oracles() {
  Rng rng(101);
  bool pass = true;
  double worst = 0.0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t bv = 2 + t % 7, bt = 2 + (t / 7) % 7;  // up to 8
    RelevanceMatrix c = random_relevance(bv, bt, rng);
    Tensor s = Tensor::randn({bv, bt}, rng, 0.5);
    RetrievalReport a = evaluate(s, c);
    RetrievalReport b = evaluate_reference(s, c);
    for (double d : {a.map_v2t - b.map_v2t, a.map_t2v - b.map_t2v,
                     a.ndcg_v2t - b.ndcg_v2t, a.ndcg_t2v - b.ndcg_t2v})
      worst = std::max(worst, std::abs(d));
    // scoring by the ground truth is an ideal ranking: exactly 1.0
    RetrievalReport ideal = evaluate(c.values, c);
    pass = pass && ideal.ndcg_v2t == 1.0 && ideal.ndcg_t2v == 1.0;
  }
  pass = pass && worst <= 1e-12;
  std::ostringstream os;
  os << "500 instances, max |impl-oracle|=" << worst;
  report(2, "metric-oracle-equivalence", pass, os.str());
}

// ---- 3: loss properties ------------------------------------------------------

void criterion_loss_properties() {
  Rng rng(103);
  bool pass = true;
  SmsConfig cfg;

  // tau filter: all gaps <= tau -> exactly zero
  {
    std::vector<double> c(16, 0.5);
    c[3] = 0.52;  // max gap 0.02 <= tau = 0.05
    RelevanceMatrix rel(Tensor({4, 4}, std::move(c)));
    Tensor s = Tensor::randn({4, 4}, rng, 0.4);
    pass = pass && sms_loss(s, rel, cfg).item() == 0.0;
  }

  // transpose symmetry and brute-force equivalence
  double worst_sym = 0.0, worst_oracle = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t bv = 2 + t % 5, bt = 2 + (t / 5) % 5;  // up to 6
    RelevanceMatrix c = random_relevance(bv, bt, rng);
    Tensor s = Tensor::randn({bv, bt}, rng, 0.4);
    const double a = sms_loss(s, c, cfg).item();
    worst_sym = std::max(
        worst_sym, std::abs(a - sms_loss(transpose(s), c.transposed(), cfg).item()));
    worst_oracle = std::max(worst_oracle, std::abs(a - sms_loss_reference(s, c, cfg)));
  }
  pass = pass && worst_sym <= 1e-12 && worst_oracle <= 1e-12;

  // mimm: zero iff every margin satisfied
  const double margin = 0.2;
  for (int t = 0; t < 200; ++t) {
    Tensor s = Tensor::randn({4, 4}, rng, 0.5);
    bool satisfied = true;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        if (i == j) continue;
        if (margin - s.at(i, i) + s.at(i, j) > 0.0) satisfied = false;
        if (margin - s.at(i, i) + s.at(j, i) > 0.0) satisfied = false;
      }
    pass = pass && (mimm_loss(s, margin).item() == 0.0) == satisfied;
  }
  std::ostringstream os;
  os << "max sym diff=" << worst_sym << ", max oracle diff=" << worst_oracle;
  report(3, "loss-properties", pass, os.str());
}

// ---- 4: CMCR structural checks ----------------------------------------------

void criterion_cmcr_structure() {
  Rng rng(107);
  bool pass = true;
  Rng unused(0);

  // zero-weight collapse to the residual skeleton, exact
  {
    CmcrParams p = CmcrParams::init(5, 4, 8, 2, 0.0, rng);
    for (MhaParams* m : {&p.text_query, &p.vision_query})
      for (Tensor* t : {&m->w_q, &m->w_k, &m->w_v, &m->w_o})
        for (double& v : t->mutable_data()) v = 0.0;
    for (GatedFfnParams* f : {&p.ffn_a, &p.ffn_b})
      for (Tensor* t : {&f->w_gate, &f->w_up, &f->w_down})
        for (double& v : t->mutable_data()) v = 0.0;
    Tensor f_v = Tensor::randn({3, 5}, rng);
    Tensor f_t = Tensor::randn({3, 4}, rng);
    RefinedPair rp = refine(f_v, f_t, p, false, unused);
    Tensor ev = layer_norm(layer_norm(f_t, p.ln1_a.gain, p.ln1_a.bias), p.ln2_a.gain,
                           p.ln2_a.bias);
    Tensor et = layer_norm(layer_norm(f_v, p.ln1_b.gain, p.ln1_b.bias), p.ln2_b.gain,
                           p.ln2_b.bias);
    for (std::size_t i = 0; i < ev.size(); ++i)
      pass = pass && rp.visual.at(i) == ev.at(i);
    for (std::size_t i = 0; i < et.size(); ++i)
      pass = pass && rp.text.at(i) == et.at(i);
  }

  // batch-permutation equivariance, exact
  {
    CmcrParams p = CmcrParams::init(6, 4, 8, 2, 0.0, rng);
    Tensor f_v = Tensor::randn({5, 6}, rng);
    Tensor f_t = Tensor::randn({5, 4}, rng);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    auto permute = [&](const Tensor& x) {
      std::vector<double> out(x.size());
      for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j)
          out[i * x.cols() + j] = x.at(perm[i], j);
      return Tensor(x.shape(), std::move(out));
    };
    RefinedPair base = refine(f_v, f_t, p, false, unused);
    RefinedPair shuf = refine(permute(f_v), permute(f_t), p, false, unused);
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (std::size_t j = 0; j < 4; ++j)
        pass = pass && shuf.visual.at(i, j) == base.visual.at(perm[i], j);
  }

  // single-key softmax degeneracy: output equals the value path bitwise
  {
    MhaParams p = MhaParams::init(5, 6, 8, 7, 2, 0.1, rng);
    Tensor q = Tensor::randn({4, 5}, rng);
    Tensor kv = Tensor::randn({4, 6}, rng);
    Tensor out = cross_attention(q, kv, p, false, unused);
    Tensor vpath = matmul(matmul(kv, p.w_v), p.w_o);
    pass = pass && out.data() == vpath.data();
  }

  // routing switch swaps the head inputs exactly
  {
    ModelConfig mc;
    mc.frames = 1;
    mc.height = 8;
    mc.width = 8;
    mc.channels = 1;
    mc.patch = 4;
    mc.vis_width = 8;
    mc.vis_layers = 1;
    mc.vis_heads = 2;
    mc.text_vocab = 24;
    mc.text_width = 8;
    mc.text_layers = 1;
    mc.text_heads = 2;
    mc.max_tokens = 8;
    mc.attn_dim = 16;
    mc.attn_heads = 2;
    mc.proj_hidden = 12;
    mc.embed_dim = 8;
    ModelConfig swapped_cfg = mc;
    swapped_cfg.swap_cmcr_routing = true;
    Model base = Model::init(mc, 5);
    Model swapped = Model::init(swapped_cfg, 5);
    SynthConfig dc;
    dc.samples = 6;
    dc.verbs = 2;
    dc.nouns = 2;
    dc.frames = 1;
    dc.height = 8;
    dc.width = 8;
    dc.channels = 1;
    dc.patch = 4;
    dc.caption_length = 5;
    SynthDataset ds = generate(dc);
    Rng r(0);
    Model::Forward fa = base.forward(ds.clips, ds.captions, false, r);
    Model::Forward fb = swapped.forward(ds.clips, ds.captions, false, r);
    Tensor expect_v = project_embed(fa.refined_t, base.proj_v);
    Tensor expect_t = project_embed(fa.refined_v, base.proj_t);
    pass = pass && fb.emb_v.data() == expect_v.data() &&
           fb.emb_t.data() == expect_t.data();
  }

  report(4, "cmcr-structural-checks", pass, "collapse/equivariance/degeneracy/routing");
}

// ---- 5: TTA checks ------------------------------------------------------------

void criterion_tta() {
  Rng rng(109);
  bool pass = true;

  FrameStack clip(2, 16, 16, 3);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (double& v : clip.values) v = uni(rng);

  pass = pass && hflip(hflip(clip)).values == clip.values;          // involution
  pass = pass && rescale_center_crop(clip, 1.0).values == clip.values;  // identity

  EncoderParams enc = EncoderParams::init_visual(8, 3, 8, 32, 2, 2, 0.0, rng);
  ProjectionParams proj = ProjectionParams::init(32, 16, 8, rng);
  Rng unused(0);
  EncodeFn encode = [&](const FrameStack& f) {
    return encode_visual(f, enc, false, unused);
  };
  ProjectFn project = [&](const Tensor& f) { return project_embed(f, proj); };

  TtaConfig single;
  single.enable_flip = false;
  single.scales = {1.0};
  pass = pass &&
         tta_encode(clip, encode, project, single).data() ==
             project(encode(clip)).data();

  TtaConfig six;
  six.enable_flip = true;
  six.scales = {0.875, 1.0, 1.125};
  Tensor got = tta_encode(clip, encode, project, six);
  std::vector<double> acc(8, 0.0);
  for (double s : six.scales)
    for (int flip = 0; flip < 2; ++flip) {
      Tensor e = project(encode(rescale_center_crop(flip ? hflip(clip) : clip, s)));
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e.at(i);
    }
  for (double& v : acc) v /= 6.0;
  Tensor expect = l2_normalize(Tensor({1, 8}, std::move(acc)));
  double worst = 0.0;
  for (std::size_t i = 0; i < expect.size(); ++i)
    worst = std::max(worst, std::abs(got.at(i) - expect.at(i)));
  pass = pass && worst <= 1e-12;

  std::ostringstream os;
  os << "pooling max diff=" << worst;
  report(5, "tta-checks", pass, os.str());
}

// ---- 6: toy-benchmark ablation ordering ---------------------------------------

void criterion_toy_benchmark() {
  const auto t0 = std::chrono::steady_clock::now();

  SynthConfig data_cfg;
  data_cfg.seed = 7;
  data_cfg.samples = 256;
  data_cfg.verbs = 4;
  data_cfg.nouns = 6;
  SynthDataset full = generate(data_cfg);
  auto [train_set, test_set] = split(full, 0.75, data_cfg.seed + 1);

  ModelConfig with_cmcr;  // defaults: 32-wide encoders, 512/8 refinement
  ModelConfig no_cmcr = with_cmcr;
  no_cmcr.use_cmcr = false;

  TrainConfig tc;
  tc.epochs = 200;
  tc.batch_size = 8;
  tc.lr = 5e-4;
  tc.seed = 7;

  TrainConfig tc_mimm = tc;
  tc_mimm.loss_kind = LossKind::Mimm;

  TrainResult sms_cmcr = train(with_cmcr, tc, train_set);
  TrainResult sms_plain = train(no_cmcr, tc, train_set);
  TrainResult mimm_plain = train(no_cmcr, tc_mimm, train_set);

  const double map_sms_cmcr = evaluate_model(sms_cmcr.model, test_set).map_avg;
  const double map_sms = evaluate_model(sms_plain.model, test_set).map_avg;
  const double map_mimm = evaluate_model(mimm_plain.model, test_set).map_avg;

  TtaConfig flip_only;
  flip_only.enable_flip = true;
  flip_only.scales = {1.0};
  TtaConfig flip_scale;
  flip_scale.enable_flip = true;
  flip_scale.scales = {0.875, 1.0, 1.125};
  const double map_flip =
      tta_evaluate_model(sms_cmcr.model, test_set, flip_only).map_avg;
  const double map_flip_scale =
      tta_evaluate_model(sms_cmcr.model, test_set, flip_scale).map_avg;

  const double first = sms_cmcr.log.epochs.front().mean_loss;
  const double last = sms_cmcr.log.epochs.back().mean_loss;
  const double secs = seconds_since(t0);

  const bool ordering = map_sms_cmcr >= map_sms && map_sms >= map_mimm;
  const bool tta_monotone = map_flip_scale >= map_flip && map_flip >= map_sms_cmcr;
  const bool strong = map_sms_cmcr >= 0.9;
  const bool loss_halved = last <= 0.5 * first;
  const bool fast = secs < 300.0;
  const bool pass = ordering && tta_monotone && strong && loss_halved && fast;

  std::ostringstream os;
  os.precision(6);
  os << "mAP sms+cmcr=" << map_sms_cmcr << " sms=" << map_sms
     << " mimm=" << map_mimm << " | base=" << map_sms_cmcr << " flip=" << map_flip
     << " flip+scale=" << map_flip_scale << " | loss " << first << "->" << last
     << " | " << secs << "s";
  report(6, "toy-benchmark-ablation", pass, os.str());
}

// ---- 7: determinism & IO -------------------------------------------------------

void criterion_determinism_io() {
  namespace fs = std::filesystem;
  bool pass = true;
  const std::string dir = (fs::temp_directory_path() / "crclip_acceptance").string();
  fs::create_directories(dir);

  SynthConfig data_cfg;
  data_cfg.samples = 48;
  data_cfg.seed = 3;
  SynthDataset ds = generate(data_cfg);
  auto [train_set, test_set] = split(ds, 0.75, 4);

  ModelConfig mc;
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 8;
  tc.seed = 21;

  TrainResult r1 = train(mc, tc, train_set);
  TrainResult r2 = train(mc, tc, train_set);
  save_checkpoint(dir + "/a.ckpt", r1.model.named_params());
  save_checkpoint(dir + "/b.ckpt", r2.model.named_params());
  pass = pass && read_text_file(dir + "/a.ckpt") == read_text_file(dir + "/b.ckpt");
  pass = pass && format_report_block(evaluate_model(r1.model, test_set)) ==
                     format_report_block(evaluate_model(r2.model, test_set));

  // bitwise matrix round-trip
  Rng rng(11);
  Tensor m = Tensor::randn({19, 7}, rng);
  write_matrix(dir + "/m.crmx", m);
  pass = pass && read_matrix(dir + "/m.crmx").data() == m.data();

  // checkpoint restore reproduces the report; corruption is caught
  auto loaded = load_checkpoint(dir + "/a.ckpt");
  Model restored = Model::init(mc, 999);
  auto rp = restored.named_params();
  restore_into(rp, loaded);
  pass = pass && format_report_block(evaluate_model(restored, test_set)) ==
                     format_report_block(evaluate_model(r1.model, test_set));

  std::string bytes = read_text_file(dir + "/a.ckpt");
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x40);
  write_text_file(dir + "/bad.ckpt", bytes);
  bool caught = false;
  try {
    load_checkpoint(dir + "/bad.ckpt");
  } catch (const IoError& e) {
    caught = e.kind() == IoErrorKind::ChecksumMismatch;
  }
  pass = pass && caught;

  fs::remove_all(dir);
  report(7, "determinism-and-io", pass, "twin runs, round-trips, corruption");
}

// ---- 8: report formatting -------------------------------------------------------

void criterion_formatting() {
  bool pass = true;
  pass = pass && truncate_pct(0.66789) == "66.78";
  pass = pass && truncate_pct(0.5) == "50.00";
  pass = pass && truncate_pct(1.0) == "100.00";
  pass = pass && truncate_pct(0.999999) == "99.99";
  pass = pass && truncate_pct(0.0) == "0.00";
  pass = pass && truncate_pct(0.12999) == "12.99";
  RetrievalReport rep;
  rep.map_v2t = 0.66789;
  pass = pass && format_report_block(rep).find("map_v2t\t66.78\n") == 0;
  report(8, "report-formatting", pass, "truncation, never rounding");
}

}  // namespace

int main() {
  criterion_gradients();
  criterion_metric_oracles();
  criterion_loss_properties();
  criterion_cmcr_structure();
  criterion_tta();
  criterion_toy_benchmark();
  criterion_determinism_io();
  criterion_formatting();

  int failed = 0;
  for (const Criterion& c : results)
    if (!c.pass) ++failed;
  std::printf("%zu/%zu acceptance criteria passed\n", results.size() - failed,
              results.size());
  return failed == 0 ? 0 : 1;
}
