#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crclip/metrics.hpp"
#include "crclip/model.hpp"
#include "crclip/synthdata.hpp"
#include "crclip/tta.hpp"

namespace crclip {

enum class LossKind { Sms, Mimm };

struct TrainConfig {
  double lr = 3e-4;  // toy-scale default; the reference fine-tune rate 1.8e-5 stays available
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  std::uint64_t seed = 7;
  LossKind loss_kind = LossKind::Sms;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  SmsConfig sms;
  double mimm_margin = 0.2;
  std::size_t eval_every = 0;  // 0 = never
  double rel_threshold = 0.0;
  // seeded input augmentation: random rescale in [augment_lo, augment_hi]
  // plus a fair-coin horizontal flip per clip
  bool augment = true;
  double augment_lo = 0.875, augment_hi = 1.125;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::optional<RetrievalReport> eval;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::string to_tsv() const;  // epoch<TAB>loss[<TAB>map_avg<TAB>ndcg_avg]
};

// Adam with bias correction; moments follow the parameter registry order.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;

  static AdamState init(const std::vector<std::pair<std::string, Tensor>>& params);
};

void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               const TrainConfig& cfg);

struct TrainResult {
  Model model;
  TrainLog log;
};

// Seed-deterministic training over the dataset: encode, optionally refine,
// project, similarity, loss, backward, Adam. A non-finite loss aborts with
// a diagnostic naming the first non-finite pipeline stage.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const SynthDataset& train_set,
                  const SynthDataset* eval_set = nullptr);

// Same loop over an already-initialized model (resume / test hook).
TrainLog train_model(Model& model, const TrainConfig& cfg,
                     const SynthDataset& train_set,
                     const SynthDataset* eval_set = nullptr);

// Eval-mode forward over a whole dataset -> similarity matrix (no tape).
Tensor eval_similarities(Model& model, const SynthDataset& ds);
RetrievalReport evaluate_model(Model& model, const SynthDataset& ds,
                               double rel_threshold = 0.0);

// Evaluation with test-time augmentation on the visual side: each clip's
// variants are embedded (refinement paired with the sample's text feature)
// and average-pooled; text embeddings come from the plain paired path.
RetrievalReport tta_evaluate_model(Model& model, const SynthDataset& ds,
                                   const TtaConfig& tta,
                                   double rel_threshold = 0.0);

}  // namespace crclip
