#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "crclip/synthdata.hpp"

using namespace crclip;

TEST_CASE("build_relevance follows the verb/noun half-credit rule") {
  std::vector<SampleLabel> a{{0, 0}, {0, 1}, {1, 0}};
  RelevanceMatrix c = build_relevance(a, a);
  CHECK(c.at(0, 0) == 1.0);
  CHECK(c.at(0, 1) == 0.5);  // same verb, different noun
  CHECK(c.at(0, 2) == 0.5);  // same noun, different verb
  CHECK(c.at(1, 2) == 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(c.at(i, j) == c.at(j, i));
      const double v = c.at(i, j);
      CHECK((v == 0.0 || v == 0.5 || v == 1.0));
    }
  for (std::size_t i = 0; i < 3; ++i) CHECK(c.at(i, i) == 1.0);
}

TEST_CASE("generate is deterministic and respects its config") {
  SynthConfig cfg;
  cfg.seed = 7;
  cfg.samples = 24;
  SynthDataset a = generate(cfg);
  SynthDataset b = generate(cfg);
  REQUIRE(a.size() == 24);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.clips[i].values == b.clips[i].values);
    CHECK(a.captions[i] == b.captions[i]);
  }

  for (const FrameStack& f : a.clips) {
    CHECK(f.t == cfg.frames);
    CHECK(f.h == cfg.height);
    for (double v : f.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& cap = a.captions[i];
    REQUIRE(cap.size() == cfg.caption_length);
    CHECK(cap.front() == kBosId);
    CHECK(cap.back() == kEosId);
    CHECK(cap[1] == verb_token(a.labels[i].verb_id));
    CHECK(cap[2] == noun_token(cfg, a.labels[i].noun_id));
    for (int t : cap) CHECK(t < static_cast<int>(vocab_size(cfg)));
  }
}

TEST_CASE("single-class config yields an all-ones relevance") {
  SynthConfig cfg;
  cfg.verbs = 1;
  cfg.nouns = 1;
  cfg.samples = 5;
  SynthDataset ds = generate(cfg);
  for (double v : ds.relevance.values.data()) CHECK(v == 1.0);
}

TEST_CASE("seed 7, 64 samples over 4x6 classes is balanced within 25%") {
  SynthConfig cfg;
  cfg.seed = 7;
  cfg.samples = 64;
  cfg.verbs = 4;
  cfg.nouns = 6;
  SynthDataset ds = generate(cfg);
  std::map<std::pair<int, int>, int> counts;
  for (const SampleLabel& l : ds.labels) counts[{l.verb_id, l.noun_id}]++;
  const double uniform = 64.0 / 24.0;
  CHECK(counts.size() == 24);
  for (const auto& [cell, n] : counts)
    CHECK(std::abs(n - uniform) / uniform <= 0.25 + 1e-12);
}

TEST_CASE("noiseless class patterns are pairwise distinct") {
  SynthConfig cfg;
  cfg.verbs = 3;
  cfg.nouns = 3;
  std::vector<FrameStack> patterns;
  for (int v = 0; v < 3; ++v)
    for (int n = 0; n < 3; ++n) patterns.push_back(render_pattern(cfg, {v, n}));
  for (std::size_t a = 0; a < patterns.size(); ++a)
    for (std::size_t b = a + 1; b < patterns.size(); ++b) {
      double dist = 0.0;
      for (std::size_t i = 0; i < patterns[a].size(); ++i) {
        const double d = patterns[a].values[i] - patterns[b].values[i];
        dist += d * d;
      }
      CHECK(dist > 1e-6);
    }
}

TEST_CASE("class patterns are horizontally near-symmetric (flip robustness)") {
  SynthConfig cfg;
  FrameStack p = render_pattern(cfg, {2, 3});
  for (std::size_t t = 0; t < p.t; ++t)
    for (std::size_t y = 0; y < p.h; ++y)
      for (std::size_t x = 0; x < p.w; ++x)
        for (std::size_t c = 0; c < p.c; ++c)
          CHECK(std::abs(p.at(t, y, x, c) - p.at(t, y, p.w - 1 - x, c)) < 1e-12);
}

TEST_CASE("split: round halves, determinism, exhaustive union") {
  SynthConfig cfg;
  cfg.samples = 10;
  SynthDataset ds = generate(cfg);

  auto [train1, test1] = split(ds, 0.5, 3);
  CHECK(train1.size() == 5);
  CHECK(test1.size() == 5);

  auto [train2, test2] = split(ds, 0.5, 3);
  for (std::size_t i = 0; i < train1.size(); ++i)
    CHECK(train1.captions[i] == train2.captions[i]);

  // disjoint and exhaustive: captions joined back equal the full multiset
  std::vector<std::vector<int>> all;
  for (const auto& c : train1.captions) all.push_back(c);
  for (const auto& c : test1.captions) all.push_back(c);
  std::vector<std::vector<int>> orig = ds.captions;
  std::sort(all.begin(), all.end());
  std::sort(orig.begin(), orig.end());
  CHECK(all == orig);

  CHECK_THROWS_AS(split(ds, 0.0, 1), InputError);
  CHECK_THROWS_AS(split(ds, 1.0, 1), InputError);

  // relevance slices stay consistent with the label rule
  RelevanceMatrix expect = build_relevance(train1.labels, train1.labels);
  for (std::size_t i = 0; i < expect.values.size(); ++i)
    CHECK(train1.relevance.values.at(i) == expect.values.at(i));
}

TEST_CASE("dataset files round-trip through the CRMX formats") {
  SynthConfig cfg;
  cfg.samples = 12;
  cfg.seed = 11;
  SynthDataset ds = generate(cfg);
  auto [train, test] = split(ds, 0.75, cfg.seed);

  const std::string dir =
      (std::filesystem::temp_directory_path() / "crclip_ds_test").string();
  std::filesystem::remove_all(dir);
  std::vector<std::size_t> train_idx{0, 1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<std::size_t> test_idx{9, 10, 11};
  save_dataset(dir, ds, cfg, train_idx, test_idx);
  DatasetBundle loaded = load_dataset(dir);

  REQUIRE(loaded.full.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(loaded.full.clips[i].values == ds.clips[i].values);  // bitwise
    CHECK(loaded.full.captions[i] == ds.captions[i]);
    CHECK(loaded.full.labels[i].verb_id == ds.labels[i].verb_id);
  }
  CHECK(loaded.full.relevance.values.data() == ds.relevance.values.data());
  CHECK(loaded.train_indices == train_idx);
  CHECK(loaded.test_indices == test_idx);
  CHECK(loaded.cfg.verbs == cfg.verbs);
  std::filesystem::remove_all(dir);
}

TEST_CASE("generate rejects bad geometry") {
  SynthConfig cfg;
  cfg.height = 15;  // not divisible by patch 8
  CHECK_THROWS_AS(generate(cfg), ConfigError);
  cfg.height = 16;
  cfg.caption_length = 3;
  CHECK_THROWS_AS(generate(cfg), ConfigError);
}
