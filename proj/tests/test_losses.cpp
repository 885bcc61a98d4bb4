#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crclip/gradcheck.hpp"
#include "crclip/losses.hpp"

using namespace crclip;

namespace {

RelevanceMatrix random_relevance(std::size_t rows, std::size_t cols, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> c(rows * cols);
  for (double& v : c) v = uni(rng);
  return RelevanceMatrix(Tensor({rows, cols}, std::move(c)));
}

}  // namespace

TEST_CASE("relevance_gap: extremes, ties, antisymmetry") {
  RelevanceMatrix c(Tensor({2, 3}, {1.0, 0.0, 0.5, 0.5, 0.3, 0.3}));
  CHECK(relevance_gap(c, 0, 0, 1) == 1.0);
  CHECK(relevance_gap(c, 1, 1, 2) == 0.0);
  CHECK(relevance_gap(c, 1, 0, 1) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(relevance_gap(c, 1, 1, 0) == doctest::Approx(-0.2).epsilon(1e-15));
  CHECK_THROWS_AS(relevance_gap(c, 2, 0, 0), InputError);
  CHECK_THROWS_AS(relevance_gap(c, 0, 3, 0), InputError);

  Rng rng(7);
  RelevanceMatrix r = random_relevance(4, 5, rng);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t k = 0; k < 5; ++k)
        CHECK(relevance_gap(r, i, j, k) == -relevance_gap(r, i, k, j));
}

TEST_CASE("relevance matrix validates its range") {
  CHECK_THROWS_AS(RelevanceMatrix(Tensor({1, 2}, {0.5, 1.5})), InputError);
  CHECK_THROWS_AS(RelevanceMatrix(Tensor({1, 2}, {-0.1, 0.5})), InputError);
}

TEST_CASE("sms_loss: tau filter, hand value, symmetry") {
  SmsConfig cfg;

  SUBCASE("all-equal relevance silences every triplet") {
    RelevanceMatrix c(Tensor({3, 3}, std::vector<double>(9, 0.4)));
    Rng rng(5);
    Tensor s = Tensor::randn({3, 3}, rng, 0.3);
    CHECK(sms_loss(s, c, cfg).item() == 0.0);
  }

  SUBCASE("hard-label B=2 hand evaluation") {
    cfg.tau = 0.0;
    cfg.gamma = 1.0;
    RelevanceMatrix c(Tensor({2, 2}, {1, 0, 0, 1}));
    Tensor s(Shape{2, 2}, {1, -1, -1, 1});
    // per direction: two triplets with R=1, margin -2, mean = log1p(e^-2);
    // both directions sum to 2·log1p(e^-2)
    CHECK(sms_loss(s, c, cfg).item() ==
          doctest::Approx(0.25385602208594525).epsilon(1e-14));
  }

  SUBCASE("transpose symmetry within 1e-12") {
    Rng rng(11);
    for (int t = 0; t < 20; ++t) {
      RelevanceMatrix c = random_relevance(4, 6, rng);
      Tensor s = Tensor::randn({4, 6}, rng, 0.4);
      const double a = sms_loss(s, c, cfg).item();
      const double b = sms_loss(transpose(s), c.transposed(), cfg).item();
      CHECK(std::abs(a - b) <= 1e-12);
    }
  }

  SUBCASE("shape mismatch is an input error") {
    Rng rng(1);
    RelevanceMatrix c = random_relevance(2, 3, rng);
    Tensor s = Tensor::zeros({3, 2});
    CHECK_THROWS_AS(sms_loss(s, c, cfg), InputError);
  }
}

TEST_CASE("sms_loss equals the triple-loop oracle within 1e-12 for B <= 6") {
  Rng rng(13);
  SmsConfig cfg;
  for (int t = 0; t < 100; ++t) {
    const std::size_t bv = 2 + t % 5, bt = 2 + (t / 5) % 5;
    RelevanceMatrix c = random_relevance(bv, bt, rng);
    Tensor s = Tensor::randn({bv, bt}, rng, 0.4);
    const double fast = sms_loss(s, c, cfg).item();
    const double slow = sms_loss_reference(s, c, cfg);
    CHECK(std::abs(fast - slow) <= 1e-12);
    CHECK(fast >= 0.0);
  }
}

TEST_CASE("sms_loss decreases when the top candidate's similarity rises") {
  Rng rng(17);
  SmsConfig cfg;
  for (int t = 0; t < 20; ++t) {
    RelevanceMatrix c = random_relevance(5, 5, rng);
    // make (2,3) the strict top of its row and column so every triplet
    // touching S_23 prefers it
    c.values.mutable_data()[2 * 5 + 3] = 1.0;
    for (std::size_t j = 0; j < 5; ++j)
      if (j != 3) c.values.mutable_data()[2 * 5 + j] *= 0.8;
    for (std::size_t i = 0; i < 5; ++i)
      if (i != 2) c.values.mutable_data()[i * 5 + 3] *= 0.8;
    Tensor s = Tensor::randn({5, 5}, rng, 0.4);
    const double before = sms_loss(s, c, cfg).item();
    s.mutable_data()[2 * 5 + 3] += 0.1;
    const double after = sms_loss(s, c, cfg).item();
    CHECK(after <= before + 1e-15);
  }
}

TEST_CASE("sms_loss gradient w.r.t. similarities matches finite differences") {
  Rng rng(19);
  SmsConfig cfg;
  cfg.gamma = 3.0;
  RelevanceMatrix c = random_relevance(4, 5, rng);
  Tensor s = Tensor::randn({4, 5}, rng, 0.4, true);
  auto forward = [&] { return sms_loss(s, c, cfg); };
  CHECK(check_gradients(forward, {s}) < 1e-5);
}

TEST_CASE("sms config validation") {
  SmsConfig bad;
  bad.tau = 1.0;
  RelevanceMatrix c(Tensor({2, 2}, {1, 0, 0, 1}));
  Tensor s = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(sms_loss(s, c, bad), ConfigError);
  bad.tau = 0.05;
  bad.gamma = 0.0;
  CHECK_THROWS_AS(sms_loss(s, c, bad), ConfigError);
}

TEST_CASE("mimm_loss: satisfied margins, hand value, zero iff satisfied") {
  Tensor ideal(Shape{3, 3}, {1, -1, -1, -1, 1, -1, -1, -1, 1});
  CHECK(mimm_loss(ideal, 0.2).item() == 0.0);

  Tensor flat(Shape{2, 2}, {0.5, 0.5, 0.5, 0.5});
  CHECK(mimm_loss(flat, 0.2).item() == doctest::Approx(0.4).epsilon(1e-14));

  Rng rng(23);
  for (int t = 0; t < 50; ++t) {
    Tensor s = Tensor::randn({4, 4}, rng, 0.5);
    const double loss = mimm_loss(s, 0.2).item();
    bool satisfied = true;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        if (i == j) continue;
        if (0.2 - s.at(i, i) + s.at(i, j) > 0.0) satisfied = false;
        if (0.2 - s.at(i, i) + s.at(j, i) > 0.0) satisfied = false;
      }
    CHECK((loss == 0.0) == satisfied);
    CHECK(loss >= 0.0);
  }

  Tensor rect = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(mimm_loss(rect, 0.2), InputError);
}

TEST_CASE("mimm_loss subgradient matches finite differences away from kinks") {
  Rng rng(29);
  const double margin = 0.2;
  int done = 0;
  while (done < 10) {
    Tensor s = Tensor::randn({4, 4}, rng, 0.5, true);
    bool near_kink = false;
    for (std::size_t i = 0; i < 4 && !near_kink; ++i)
      for (std::size_t j = 0; j < 4 && !near_kink; ++j) {
        if (i == j) continue;
        if (std::abs(margin - s.at(i, i) + s.at(i, j)) < 1e-3) near_kink = true;
        if (std::abs(margin - s.at(i, i) + s.at(j, i)) < 1e-3) near_kink = true;
      }
    if (near_kink) continue;
    auto forward = [&] { return mimm_loss(s, margin); };
    CHECK(check_gradients(forward, {s}) < 1e-5);
    ++done;
  }
}

TEST_CASE("similarity_matrix of unit rows") {
  // orthonormal rows -> identity
  Tensor v(Shape{2, 2}, {1, 0, 0, 1});
  Tensor s = similarity_matrix(v, v);
  CHECK(s.at(0, 0) == 1.0);
  CHECK(s.at(0, 1) == 0.0);
  CHECK(s.at(1, 0) == 0.0);
  CHECK(s.at(1, 1) == 1.0);

  Tensor anti(Shape{1, 2}, {-1, 0});
  Tensor one(Shape{1, 2}, {1, 0});
  CHECK(similarity_matrix(one, anti).item() == -1.0);

  Rng rng(31);
  Tensor a = l2_normalize(Tensor::randn({6, 8}, rng));
  Tensor b = l2_normalize(Tensor::randn({5, 8}, rng));
  Tensor sim = similarity_matrix(a, b);
  for (double x : sim.data()) CHECK(std::abs(x) <= 1.0 + 1e-9);

  Tensor narrow = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(similarity_matrix(a, narrow), InputError);
}
