#include "crclip/synthdata.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <string>

#include "crclip/io.hpp"

namespace crclip {

int verb_token(int verb_id) { return 2 + verb_id; }

int noun_token(const SynthConfig& cfg, int noun_id) {
  return 2 + static_cast<int>(cfg.verbs) + noun_id;
}

std::size_t vocab_size(const SynthConfig& cfg) {
  return 2 + cfg.verbs + cfg.nouns + kFillerTokens;
}

RelevanceMatrix build_relevance(const std::vector<SampleLabel>& a,
                                const std::vector<SampleLabel>& b) {
  if (a.empty() || b.empty())
    throw InputError("build_relevance: empty label list");
  std::vector<double> c(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      double r = 0.0;
      if (a[i].verb_id == b[j].verb_id) r += 0.5;
      if (a[i].noun_id == b[j].noun_id) r += 0.5;
      c[i * b.size() + j] = r;
    }
  return RelevanceMatrix(Tensor(Shape{a.size(), b.size()}, std::move(c)));
}

FrameStack render_pattern(const SynthConfig& cfg, const SampleLabel& label) {
  FrameStack f(cfg.frames, cfg.height, cfg.width, cfg.channels);
  const double two_pi = 2.0 * M_PI;
  const double fv = static_cast<double>(label.verb_id + 1);
  const double fn = static_cast<double>(label.noun_id + 1);
  for (std::size_t t = 0; t < f.t; ++t) {
    const double tmod = 1.0 + 0.15 * static_cast<double>(t) / static_cast<double>(f.t);
    for (std::size_t y = 0; y < f.h; ++y) {
      // integer frequencies over (coord+0.5)/extent keep the bands
      // exactly symmetric under horizontal flips
      const double vert = std::cos(two_pi * fn * (static_cast<double>(y) + 0.5) /
                                   static_cast<double>(f.h));
      for (std::size_t x = 0; x < f.w; ++x) {
        const double horiz = std::cos(two_pi * fv * (static_cast<double>(x) + 0.5) /
                                      static_cast<double>(f.w));
        for (std::size_t c = 0; c < f.c; ++c) {
          const double cmod = 1.0 - 0.1 * static_cast<double>(c) / static_cast<double>(f.c);
          f.at(t, y, x, c) = 0.5 + 0.2 * horiz * tmod + 0.2 * vert * cmod;
        }
      }
    }
  }
  return f;
}

SynthDataset generate(const SynthConfig& cfg) {
  if (cfg.verbs == 0 || cfg.nouns == 0)
    throw ConfigError("generate: need at least one verb and one noun class");
  if (cfg.patch == 0 || cfg.height % cfg.patch != 0 || cfg.width % cfg.patch != 0)
    throw ConfigError("generate: geometry " + std::to_string(cfg.height) + "x" +
                      std::to_string(cfg.width) + " not divisible by patch " +
                      std::to_string(cfg.patch));
  if (cfg.caption_length < 4)
    throw ConfigError("generate: caption_length must fit [BOS, verb, noun, EOS]");
  if (cfg.samples == 0) throw ConfigError("generate: samples must be >= 1");

  Rng rng(cfg.seed);

  // stratified labels: every cell gets floor(n/cells), the remainder goes
  // to a seeded shuffle of the cells, then sample order is shuffled
  const std::size_t cells = cfg.verbs * cfg.nouns;
  std::vector<std::size_t> cell_order(cells);
  std::iota(cell_order.begin(), cell_order.end(), 0);
  std::shuffle(cell_order.begin(), cell_order.end(), rng);
  std::vector<std::size_t> counts(cells, cfg.samples / cells);
  for (std::size_t r = 0; r < cfg.samples % cells; ++r) ++counts[cell_order[r]];

  std::vector<SampleLabel> labels;
  labels.reserve(cfg.samples);
  for (std::size_t cell = 0; cell < cells; ++cell)
    for (std::size_t k = 0; k < counts[cell]; ++k)
      labels.push_back({static_cast<int>(cell / cfg.nouns),
                        static_cast<int>(cell % cfg.nouns)});
  std::shuffle(labels.begin(), labels.end(), rng);

  SynthDataset ds;
  ds.labels = labels;
  ds.clips.reserve(cfg.samples);
  ds.captions.reserve(cfg.samples);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  std::uniform_int_distribution<int> filler(
      2 + static_cast<int>(cfg.verbs + cfg.nouns),
      static_cast<int>(vocab_size(cfg)) - 1);

  for (const SampleLabel& label : labels) {
    FrameStack clip = render_pattern(cfg, label);
    if (cfg.noise_sigma > 0.0)
      for (double& v : clip.values) v = std::clamp(v + noise(rng), 0.0, 1.0);

    std::vector<int> caption;
    caption.reserve(cfg.caption_length);
    caption.push_back(kBosId);
    caption.push_back(verb_token(label.verb_id));
    caption.push_back(noun_token(cfg, label.noun_id));
    for (std::size_t i = 3; i + 1 < cfg.caption_length; ++i)
      caption.push_back(filler(rng));
    caption.push_back(kEosId);

    ds.clips.push_back(std::move(clip));
    ds.captions.push_back(std::move(caption));
  }

  ds.relevance = build_relevance(ds.labels, ds.labels);
  return ds;
}

SynthDataset subset(const SynthDataset& ds, const std::vector<std::size_t>& idx) {
  SynthDataset out;
  for (std::size_t i : idx) {
    if (i >= ds.size())
      throw InputError("subset: index " + std::to_string(i) + " out of range");
    out.clips.push_back(ds.clips[i]);
    out.captions.push_back(ds.captions[i]);
    out.labels.push_back(ds.labels[i]);
  }
  const std::size_t n = idx.size();
  std::vector<double> rel(n * n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      rel[a * n + b] = ds.relevance.at(idx[a], idx[b]);
  out.relevance = RelevanceMatrix(Tensor(Shape{n, n}, std::move(rel)));
  return out;
}

namespace {

Tensor indices_to_matrix(const std::vector<std::size_t>& idx) {
  std::vector<double> v(idx.begin(), idx.end());
  return Tensor(Shape{1, std::max<std::size_t>(idx.size(), 1)},
                idx.empty() ? std::vector<double>{-1.0} : std::move(v));
}

std::vector<std::size_t> matrix_to_indices(const Tensor& m) {
  std::vector<std::size_t> idx;
  for (double v : m.data()) {
    if (v < 0) continue;  // -1 marks an empty index list
    idx.push_back(static_cast<std::size_t>(v));
  }
  return idx;
}

}  // namespace

void save_dataset(const std::string& dir, const SynthDataset& ds,
                  const SynthConfig& cfg,
                  const std::vector<std::size_t>& train_indices,
                  const std::vector<std::size_t>& test_indices) {
  std::filesystem::create_directories(dir);
  const std::size_t n = ds.size();
  if (n == 0) throw InputError("save_dataset: empty dataset");

  const std::size_t clip_dim = ds.clips.front().size();
  std::vector<double> clips(n * clip_dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.clips[i].size() != clip_dim)
      throw InputError("save_dataset: mixed clip geometry");
    std::copy(ds.clips[i].values.begin(), ds.clips[i].values.end(),
              clips.begin() + i * clip_dim);
  }
  write_matrix(dir + "/clips.crmx", Tensor(Shape{n, clip_dim}, std::move(clips)));

  const std::size_t cap_len = ds.captions.front().size();
  std::vector<double> caps(n * cap_len);
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.captions[i].size() != cap_len)
      throw InputError("save_dataset: mixed caption lengths");
    for (std::size_t j = 0; j < cap_len; ++j)
      caps[i * cap_len + j] = static_cast<double>(ds.captions[i][j]);
  }
  write_matrix(dir + "/captions.crmx", Tensor(Shape{n, cap_len}, std::move(caps)));

  std::vector<double> labels(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i * 2] = ds.labels[i].verb_id;
    labels[i * 2 + 1] = ds.labels[i].noun_id;
  }
  write_matrix(dir + "/labels.crmx", Tensor(Shape{n, 2}, std::move(labels)));
  write_matrix(dir + "/relevance.crmx", ds.relevance.values);
  write_matrix(dir + "/train_indices.crmx", indices_to_matrix(train_indices));
  write_matrix(dir + "/test_indices.crmx", indices_to_matrix(test_indices));

  nlohmann::json meta;
  meta["samples"] = n;
  meta["verbs"] = cfg.verbs;
  meta["nouns"] = cfg.nouns;
  meta["frames"] = cfg.frames;
  meta["height"] = cfg.height;
  meta["width"] = cfg.width;
  meta["channels"] = cfg.channels;
  meta["patch"] = cfg.patch;
  meta["caption_length"] = cfg.caption_length;
  meta["noise_sigma"] = cfg.noise_sigma;
  meta["seed"] = cfg.seed;
  meta["vocab_size"] = vocab_size(cfg);
  meta["bos_id"] = kBosId;
  meta["eos_id"] = kEosId;
  write_text_file(dir + "/meta.json", meta.dump(2) + "\n");
}

DatasetBundle load_dataset(const std::string& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(dir + "/meta.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(IoErrorKind::FileAccess,
                  dir + "/meta.json is not valid JSON: " + e.what());
  }
  DatasetBundle b;
  b.cfg.seed = meta.value("seed", 0ULL);
  b.cfg.samples = meta.value("samples", 0ULL);
  b.cfg.verbs = meta.value("verbs", 1ULL);
  b.cfg.nouns = meta.value("nouns", 1ULL);
  b.cfg.frames = meta.value("frames", 2ULL);
  b.cfg.height = meta.value("height", 16ULL);
  b.cfg.width = meta.value("width", 16ULL);
  b.cfg.channels = meta.value("channels", 3ULL);
  b.cfg.patch = meta.value("patch", 8ULL);
  b.cfg.caption_length = meta.value("caption_length", 6ULL);
  b.cfg.noise_sigma = meta.value("noise_sigma", 0.05);

  const Tensor clips = read_matrix(dir + "/clips.crmx");
  const Tensor caps = read_matrix(dir + "/captions.crmx");
  const Tensor labels = read_matrix(dir + "/labels.crmx");
  const Tensor rel = read_matrix(dir + "/relevance.crmx");
  const std::size_t n = clips.rows();
  const std::size_t clip_dim =
      b.cfg.frames * b.cfg.height * b.cfg.width * b.cfg.channels;
  if (clips.cols() != clip_dim)
    throw IoError(IoErrorKind::KeyMismatch,
                  dir + ": clip width disagrees with meta geometry");
  if (caps.rows() != n || labels.rows() != n || rel.rows() != n || rel.cols() != n)
    throw IoError(IoErrorKind::KeyMismatch, dir + ": sample counts disagree");

  for (std::size_t i = 0; i < n; ++i) {
    FrameStack f(b.cfg.frames, b.cfg.height, b.cfg.width, b.cfg.channels);
    std::copy(clips.data().begin() + i * clip_dim,
              clips.data().begin() + (i + 1) * clip_dim, f.values.begin());
    b.full.clips.push_back(std::move(f));
    std::vector<int> caption(caps.cols());
    for (std::size_t j = 0; j < caps.cols(); ++j)
      caption[j] = static_cast<int>(caps.at(i, j));
    b.full.captions.push_back(std::move(caption));
    b.full.labels.push_back({static_cast<int>(labels.at(i, 0)),
                             static_cast<int>(labels.at(i, 1))});
  }
  b.full.relevance = RelevanceMatrix(rel);
  b.train_indices = matrix_to_indices(read_matrix(dir + "/train_indices.crmx"));
  b.test_indices = matrix_to_indices(read_matrix(dir + "/test_indices.crmx"));
  return b;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw InputError("split: train_fraction must lie in (0,1), got " +
                     std::to_string(train_fraction));
  if (n < 2) throw InputError("split: need at least two samples");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);

  std::size_t n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  std::vector<std::size_t> train_idx(idx.begin(), idx.begin() + n_train);
  std::vector<std::size_t> test_idx(idx.begin() + n_train, idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {std::move(train_idx), std::move(test_idx)};
}

std::pair<SynthDataset, SynthDataset> split(const SynthDataset& ds,
                                            double train_fraction,
                                            std::uint64_t seed) {
  auto [train_idx, test_idx] = split_indices(ds.size(), train_fraction, seed);
  return {subset(ds, train_idx), subset(ds, test_idx)};
}

}  // namespace crclip
