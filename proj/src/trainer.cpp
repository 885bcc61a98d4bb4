#include "crclip/trainer.hpp"

#include "crclip/tta.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace crclip {

void TrainConfig::validate() const {
  if (batch_size < 2)
    throw ConfigError("TrainConfig: batch_size must be >= 2 for in-batch negatives");
  if (lr <= 0.0) throw ConfigError("TrainConfig: non-positive learning rate");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("TrainConfig: betas must lie in [0,1)");
  if (adam_eps <= 0.0) throw ConfigError("TrainConfig: adam_eps must be positive");
  if (mimm_margin <= 0.0) throw ConfigError("TrainConfig: margin must be positive");
  if (augment && !(augment_lo > 0.0 && augment_lo <= augment_hi))
    throw ConfigError("TrainConfig: bad augmentation scale range");
  sms.validate();
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["seed"] = seed;
  j["loss_kind"] = loss_kind == LossKind::Sms ? "sms" : "mimm";
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["sms_tau"] = sms.tau;
  j["sms_gamma"] = sms.gamma;
  j["mimm_margin"] = mimm_margin;
  j["eval_every"] = eval_every;
  j["rel_threshold"] = rel_threshold;
  j["augment"] = augment;
  j["augment_lo"] = augment_lo;
  j["augment_hi"] = augment_hi;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("train config: invalid JSON: ") + e.what());
  }
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  const std::string kind = j.value("loss_kind", std::string("sms"));
  if (kind == "sms")
    c.loss_kind = LossKind::Sms;
  else if (kind == "mimm")
    c.loss_kind = LossKind::Mimm;
  else
    throw InputError("train config: unknown loss_kind '" + kind + "'");
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.sms.tau = j.value("sms_tau", c.sms.tau);
  c.sms.gamma = j.value("sms_gamma", c.sms.gamma);
  c.mimm_margin = j.value("mimm_margin", c.mimm_margin);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.rel_threshold = j.value("rel_threshold", c.rel_threshold);
  c.augment = j.value("augment", c.augment);
  c.augment_lo = j.value("augment_lo", c.augment_lo);
  c.augment_hi = j.value("augment_hi", c.augment_hi);
  c.validate();
  return c;
}

std::string TrainLog::to_tsv() const {
  std::ostringstream os;
  for (const EpochRecord& r : epochs) {
    os << r.epoch << "\t" << r.mean_loss;
    if (r.eval) os << "\t" << r.eval->map_avg << "\t" << r.eval->ndcg_avg;
    os << "\n";
  }
  return os.str();
}

AdamState AdamState::init(const std::vector<std::pair<std::string, Tensor>>& params) {
  AdamState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& [name, t] : params) {
    s.m.emplace_back(t.size(), 0.0);
    s.v.emplace_back(t.size(), 0.0);
  }
  return s;
}

void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               const TrainConfig& cfg) {
  if (state.m.size() != params.size())
    throw ContractError("adam_step: state tracks " + std::to_string(state.m.size()) +
                        " tensors, got " + std::to_string(params.size()));
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p].second;
    if (state.m[p].size() != t.size())
      throw ContractError("adam_step: moment size mismatch for " + params[p].first);
    const std::vector<double>& g = t.grad();
    std::vector<double>& data = t.mutable_data();
    std::vector<double>& m = state.m[p];
    std::vector<double>& v = state.v[p];
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

namespace {

RelevanceMatrix slice_relevance(const RelevanceMatrix& full,
                                const std::vector<std::size_t>& idx) {
  const std::size_t n = idx.size();
  std::vector<double> c(n * n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) c[a * n + b] = full.at(idx[a], idx[b]);
  return RelevanceMatrix(Tensor(Shape{n, n}, std::move(c)));
}

// Names the first non-finite stage of a forward pass for the abort message.
std::string first_non_finite(const Model::Forward& f) {
  const std::pair<const char*, const Tensor*> stages[] = {
      {"f_v", &f.f_v},           {"f_t", &f.f_t},
      {"refined_v", &f.refined_v}, {"refined_t", &f.refined_t},
      {"emb_v", &f.emb_v},       {"emb_t", &f.emb_t},
      {"sims", &f.sims},
  };
  for (const auto& [name, t] : stages)
    if (t->defined() && !all_finite(*t)) return name;
  return "loss";
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const SynthDataset& train_set, const SynthDataset* eval_set) {
  TrainResult result{Model::init(model_cfg, cfg.seed), TrainLog{}};
  result.log = train_model(result.model, cfg, train_set, eval_set);
  return result;
}

TrainLog train_model(Model& model, const TrainConfig& cfg,
                     const SynthDataset& train_set, const SynthDataset* eval_set) {
  cfg.validate();
  if (train_set.size() == 0) throw InputError("train: empty dataset");

  TrainLog log;
  auto params = model.named_params();
  AdamState adam = AdamState::init(params);
  Rng rng(cfg.seed + 1);  // init consumed its own stream inside Model::init

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + cfg.batch_size <= order.size();
         start += cfg.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + start,
                                         order.begin() + start + cfg.batch_size);
      std::vector<FrameStack> clips;
      std::vector<std::vector<int>> captions;
      clips.reserve(idx.size());
      captions.reserve(idx.size());
      const double scale_set[3] = {cfg.augment_lo, 1.0, cfg.augment_hi};
      std::uniform_int_distribution<int> pick_scale(0, 2);
      std::bernoulli_distribution coin(0.5);
      for (std::size_t i : idx) {
        if (cfg.augment) {
          FrameStack clip =
              rescale_center_crop(train_set.clips[i], scale_set[pick_scale(rng)]);
          if (coin(rng)) clip = hflip(clip);
          clips.push_back(std::move(clip));
        } else {
          clips.push_back(train_set.clips[i]);
        }
        captions.push_back(train_set.captions[i]);
      }
      const RelevanceMatrix rel = slice_relevance(train_set.relevance, idx);

      for (auto& [name, t] : params) t.zero_grad();
      Model::Forward fwd = model.forward(clips, captions, /*training=*/true, rng);
      Tensor loss = cfg.loss_kind == LossKind::Sms
                        ? sms_loss(fwd.sims, rel, cfg.sms)
                        : mimm_loss(fwd.sims, cfg.mimm_margin);
      if (!std::isfinite(loss.item())) {
        Tape::instance().clear();
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           "; first non-finite tensor: " + first_non_finite(fwd));
      }
      loss_sum += loss.item();
      ++batches;
      backward(loss);
      adam_step(params, adam, cfg);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
    if (eval_set && cfg.eval_every > 0 && epoch % cfg.eval_every == 0)
      rec.eval = evaluate_model(model, *eval_set, cfg.rel_threshold);
    log.epochs.push_back(std::move(rec));
  }
  return log;
}

Tensor eval_similarities(Model& model, const SynthDataset& ds) {
  if (ds.size() == 0) throw InputError("eval: empty dataset");
  NoGradGuard guard;
  Rng unused(0);
  Model::Forward fwd = model.forward(ds.clips, ds.captions, /*training=*/false, unused);
  return fwd.sims;
}

RetrievalReport evaluate_model(Model& model, const SynthDataset& ds,
                               double rel_threshold) {
  return evaluate(eval_similarities(model, ds), ds.relevance, rel_threshold);
}

namespace {

Tensor slice_row(const Tensor& m, std::size_t row) {
  std::vector<double> v(m.data().begin() + row * m.cols(),
                        m.data().begin() + (row + 1) * m.cols());
  return Tensor(Shape{1, m.cols()}, std::move(v));
}

}  // namespace

RetrievalReport tta_evaluate_model(Model& model, const SynthDataset& ds,
                                   const TtaConfig& tta, double rel_threshold) {
  if (ds.size() == 0) throw InputError("tta_evaluate_model: empty dataset");
  tta.validate();
  NoGradGuard guard;
  Tensor f_t = model.text_features(ds.captions);
  std::vector<Tensor> visual_rows, text_rows;
  visual_rows.reserve(ds.size());
  text_rows.reserve(ds.size());
  EncodeFn encode = [&](const FrameStack& f) { return model.encode_visual_feature(f); };
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Tensor f_t_row = slice_row(f_t, i);
    const Tensor f_v_row = model.encode_visual_feature(ds.clips[i]);
    ProjectFn project = [&](const Tensor& feat) {
      return model.visual_embedding(feat, f_t_row);
    };
    visual_rows.push_back(tta_encode(ds.clips[i], encode, project, tta));
    text_rows.push_back(model.text_embedding(f_v_row, f_t_row));
  }
  Tensor v = concat_rows(visual_rows);
  Tensor t = concat_rows(text_rows);
  return evaluate(similarity_matrix(v, t), ds.relevance, rel_threshold);
}

}  // namespace crclip
