#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "crclip/cmcr.hpp"
#include "crclip/gradcheck.hpp"
#include "crclip/losses.hpp"

using namespace crclip;

namespace {

void zero_weights(CmcrParams& p) {
  for (MhaParams* m : {&p.text_query, &p.vision_query})
    for (Tensor* t : {&m->w_q, &m->w_k, &m->w_v, &m->w_o})
      for (double& v : t->mutable_data()) v = 0.0;
  for (GatedFfnParams* f : {&p.ffn_a, &p.ffn_b})
    for (Tensor* t : {&f->w_gate, &f->w_up, &f->w_down})
      for (double& v : t->mutable_data()) v = 0.0;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j)
      out[i * x.cols() + j] = x.at(perm[i], j);
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

TEST_CASE("refine shapes follow the residual-over-query structure") {
  Rng rng(81);
  const std::size_t b = 4, dv = 6, dt = 5;
  CmcrParams p = CmcrParams::init(dv, dt, 8, 2, 0.0, rng);
  Tensor f_v = Tensor::randn({b, dv}, rng);
  Tensor f_t = Tensor::randn({b, dt}, rng);
  Rng unused(0);
  RefinedPair rp = refine(f_v, f_t, p, false, unused);
  CHECK(rp.visual.shape() == Shape{b, dt});  // F_v^r carries the text width
  CHECK(rp.text.shape() == Shape{b, dv});

  Tensor short_t = Tensor::randn({b - 1, dt}, rng);
  CHECK_THROWS_AS(refine(f_v, short_t, p, false, unused), InputError);
}

TEST_CASE("zero-weight collapse leaves only the residual skeleton") {
  Rng rng(83);
  const std::size_t b = 3, dv = 5, dt = 4;
  CmcrParams p = CmcrParams::init(dv, dt, 8, 2, 0.0, rng);
  zero_weights(p);
  Tensor f_v = Tensor::randn({b, dv}, rng);
  Tensor f_t = Tensor::randn({b, dt}, rng);
  Rng unused(0);
  RefinedPair rp = refine(f_v, f_t, p, false, unused);

  Tensor expect_v = layer_norm(layer_norm(f_t, p.ln1_a.gain, p.ln1_a.bias),
                               p.ln2_a.gain, p.ln2_a.bias);
  Tensor expect_t = layer_norm(layer_norm(f_v, p.ln1_b.gain, p.ln1_b.bias),
                               p.ln2_b.gain, p.ln2_b.bias);
  for (std::size_t i = 0; i < expect_v.size(); ++i)
    CHECK(rp.visual.at(i) == expect_v.at(i));
  for (std::size_t i = 0; i < expect_t.size(); ++i)
    CHECK(rp.text.at(i) == expect_t.at(i));
}

TEST_CASE("swapping branch parameters and inputs swaps the outputs exactly") {
  Rng rng(89);
  const std::size_t d = 6;  // equal widths so the swap typechecks
  CmcrParams p = CmcrParams::init(d, d, 8, 2, 0.0, rng);
  Tensor f_v = Tensor::randn({1, d}, rng);
  Tensor f_t = Tensor::randn({1, d}, rng);
  Rng unused(0);
  RefinedPair base = refine(f_v, f_t, p, false, unused);

  CmcrParams swapped = p;
  std::swap(swapped.text_query, swapped.vision_query);
  std::swap(swapped.ln1_a, swapped.ln1_b);
  std::swap(swapped.ln2_a, swapped.ln2_b);
  std::swap(swapped.ffn_a, swapped.ffn_b);
  RefinedPair mirrored = refine(f_t, f_v, swapped, false, unused);

  CHECK(mirrored.visual.data() == base.text.data());
  CHECK(mirrored.text.data() == base.visual.data());
}

TEST_CASE("batch permutation equivariance is exact") {
  Rng rng(97);
  const std::size_t b = 5, dv = 6, dt = 4;
  CmcrParams p = CmcrParams::init(dv, dt, 8, 2, 0.0, rng);
  Tensor f_v = Tensor::randn({b, dv}, rng);
  Tensor f_t = Tensor::randn({b, dt}, rng);
  std::vector<std::size_t> perm(b);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  Rng unused(0);
  RefinedPair base = refine(f_v, f_t, p, false, unused);
  RefinedPair permuted =
      refine(permute_rows(f_v, perm), permute_rows(f_t, perm), p, false, unused);

  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < dt; ++j)
      CHECK(permuted.visual.at(i, j) == base.visual.at(perm[i], j));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < dv; ++j)
      CHECK(permuted.text.at(i, j) == base.text.at(perm[i], j));
}

TEST_CASE("eval-mode refine is deterministic") {
  Rng rng(101);
  CmcrParams p = CmcrParams::init(6, 6, 8, 2, 0.1, rng);
  Tensor f_v = Tensor::randn({3, 6}, rng);
  Tensor f_t = Tensor::randn({3, 6}, rng);
  Rng u1(0), u2(99);
  RefinedPair a = refine(f_v, f_t, p, false, u1);
  RefinedPair b = refine(f_v, f_t, p, false, u2);
  CHECK(a.visual.data() == b.visual.data());
  CHECK(a.text.data() == b.text.data());
}

TEST_CASE("gradients of a loss over both refined outputs match finite differences") {
  Rng rng(103);
  const std::size_t b = 4, dv = 5, dt = 4;
  CmcrParams p = CmcrParams::init(dv, dt, 8, 2, 0.0, rng);
  Tensor f_v = Tensor::randn({b, dv}, rng, 1.0, true);
  Tensor f_t = Tensor::randn({b, dt}, rng, 1.0, true);
  Tensor wv = Tensor::randn({b, dt}, rng);
  Tensor wt = Tensor::randn({b, dv}, rng);
  Rng unused(0);
  auto forward = [&] {
    RefinedPair rp = refine(f_v, f_t, p, false, unused);
    return add(mean(mul(rp.visual, wv)), mean(mul(rp.text, wt)));
  };
  std::vector<Tensor> leaves{f_v, f_t};
  for (MhaParams* m : {&p.text_query, &p.vision_query})
    for (Tensor* t : {&m->w_q, &m->w_k, &m->w_v, &m->w_o}) leaves.push_back(*t);
  for (LayerNormParams* l : {&p.ln1_a, &p.ln2_a, &p.ln1_b, &p.ln2_b})
    for (Tensor* t : {&l->gain, &l->bias}) leaves.push_back(*t);
  for (GatedFfnParams* f : {&p.ffn_a, &p.ffn_b})
    for (Tensor* t : {&f->w_gate, &f->w_up, &f->w_down}) leaves.push_back(*t);
  CHECK(check_gradients(forward, leaves) < 1e-4);
}
