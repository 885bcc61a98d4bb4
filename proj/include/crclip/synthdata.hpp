#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "crclip/frames.hpp"
#include "crclip/losses.hpp"

namespace crclip {

struct SampleLabel {
  int verb_id = 0;
  int noun_id = 0;
};

struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t samples = 64;
  std::size_t verbs = 4;
  std::size_t nouns = 6;
  std::size_t frames = 2;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::size_t patch = 8;
  std::size_t caption_length = 6;  // [BOS, verb, noun, fillers..., EOS]
  double noise_sigma = 0.05;
};

// Token layout: BOS, EOS, verbs, nouns, then 8 filler tokens.
constexpr int kBosId = 0;
constexpr int kEosId = 1;
constexpr std::size_t kFillerTokens = 8;
int verb_token(int verb_id);
int noun_token(const SynthConfig& cfg, int noun_id);
std::size_t vocab_size(const SynthConfig& cfg);

struct SynthDataset {
  std::vector<FrameStack> clips;
  std::vector<std::vector<int>> captions;
  std::vector<SampleLabel> labels;
  RelevanceMatrix relevance;  // over all (clip, caption) pairs

  std::size_t size() const { return clips.size(); }
};

// C_ij = 0.5·[verb match] + 0.5·[noun match]; values in {0, 0.5, 1}.
RelevanceMatrix build_relevance(const std::vector<SampleLabel>& a,
                                const std::vector<SampleLabel>& b);

// Deterministic generator. Labels are assigned by stratified round-robin
// over the verb×noun grid so per-cell counts stay near-uniform; clips
// render class patterns as width-symmetric cosine bands (verb: horizontal
// frequency, noun: vertical frequency) plus seeded Gaussian noise.
SynthDataset generate(const SynthConfig& cfg);

// Class pattern without noise (test hook for injectivity checks).
FrameStack render_pattern(const SynthConfig& cfg, const SampleLabel& label);

// Seed-deterministic disjoint split; relevance sub-matrices are sliced
// consistently with the index selection.
std::pair<SynthDataset, SynthDataset> split(const SynthDataset& ds,
                                            double train_fraction,
                                            std::uint64_t seed);

// The index sets behind split(): shuffled by seed, round(frac·n) train
// (clamped to keep both sides non-empty), each side sorted ascending.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double train_fraction, std::uint64_t seed);

// Row/column slice of a dataset by sample indices (shared by split and IO).
SynthDataset subset(const SynthDataset& ds, const std::vector<std::size_t>& idx);

// On-disk layout: meta.json plus CRMX matrices (clips, captions, labels,
// relevance, train/test indices). Clips are flattened one row per sample.
struct DatasetBundle {
  SynthDataset full;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  SynthConfig cfg;

  SynthDataset train() const { return subset(full, train_indices); }
  SynthDataset test() const { return subset(full, test_indices); }
};

void save_dataset(const std::string& dir, const SynthDataset& ds,
                  const SynthConfig& cfg,
                  const std::vector<std::size_t>& train_indices,
                  const std::vector<std::size_t>& test_indices);
DatasetBundle load_dataset(const std::string& dir);

}  // namespace crclip
