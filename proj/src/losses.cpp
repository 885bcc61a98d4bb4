#include "crclip/losses.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace crclip {

RelevanceMatrix::RelevanceMatrix(Tensor v) : values(std::move(v)) {
  if (!values.is_matrix())
    throw InputError("RelevanceMatrix: expected a matrix, got " +
                     shape_str(values.shape()));
  for (double x : values.data())
    if (!(x >= 0.0 && x <= 1.0))
      throw InputError("RelevanceMatrix: entry " + std::to_string(x) +
                       " outside [0,1]");
}

RelevanceMatrix RelevanceMatrix::transposed() const {
  RelevanceMatrix t;
  t.values = transpose(values);
  return t;
}

void SmsConfig::validate() const {
  if (tau < 0.0 || tau >= 1.0)
    throw ConfigError("SmsConfig: tau must lie in [0,1), got " + std::to_string(tau));
  if (gamma <= 0.0)
    throw ConfigError("SmsConfig: gamma must be positive, got " + std::to_string(gamma));
}

double relevance_gap(const RelevanceMatrix& c, std::size_t i, std::size_t j,
                     std::size_t k) {
  if (i >= c.rows() || j >= c.cols() || k >= c.cols())
    throw InputError("relevance_gap: index out of range for " +
                     shape_str(c.values.shape()));
  return c.at(i, j) - c.at(i, k);
}

namespace {

double softplus(double z) {
  // overflow-safe log1p(exp(z))
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

// One retrieval direction: anchors over rows of (s, c). Accumulates
// dL/dS into `grad_s` (same layout as s) scaled by 1/n_valid lazily.
double directional_sms(const std::vector<double>& s, const std::vector<double>& c,
                       std::size_t rows, std::size_t cols, const SmsConfig& cfg,
                       std::vector<double>* grad_s) {
  double total = 0.0;
  std::size_t valid = 0;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      for (std::size_t k = 0; k < cols; ++k) {
        const double r = c[i * cols + j] - c[i * cols + k];
        if (!(r > cfg.tau)) continue;
        ++valid;
        const double z = cfg.gamma * (s[i * cols + k] - s[i * cols + j]);
        total += r * softplus(z);
        if (grad_s) {
          const double w = r * cfg.gamma / (1.0 + std::exp(-z));
          (*grad_s)[i * cols + k] += w;
          (*grad_s)[i * cols + j] -= w;
        }
      }
  if (valid == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(valid);
  if (grad_s)
    for (double& g : *grad_s) g *= inv;
  return total * inv;
}

std::vector<double> transpose_flat(const std::vector<double>& m, std::size_t rows,
                                   std::size_t cols) {
  std::vector<double> t(m.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = m[i * cols + j];
  return t;
}

}  // namespace

Tensor sms_loss(const Tensor& sims, const RelevanceMatrix& c, const SmsConfig& cfg) {
  cfg.validate();
  if (!sims.is_matrix() || sims.shape() != c.values.shape())
    throw InputError("sms_loss: similarity " + shape_str(sims.shape()) +
                     " vs relevance " + shape_str(c.values.shape()));
  const std::size_t rows = sims.rows(), cols = sims.cols();
  const std::vector<double>& s = sims.data();
  const std::vector<double>& cv = c.values.data();

  const bool want_grad = Tape::instance().recording() && sims.requires_grad();
  std::vector<double> grad_v2t, grad_t2v_t;
  if (want_grad) {
    grad_v2t.assign(s.size(), 0.0);
    grad_t2v_t.assign(s.size(), 0.0);
  }

  const double l_v2t =
      directional_sms(s, cv, rows, cols, cfg, want_grad ? &grad_v2t : nullptr);
  const std::vector<double> st = transpose_flat(s, rows, cols);
  const std::vector<double> ct = transpose_flat(cv, rows, cols);
  const double l_t2v =
      directional_sms(st, ct, cols, rows, cfg, want_grad ? &grad_t2v_t : nullptr);

  Tensor loss = Tensor::scalar(l_v2t + l_t2v);
  if (want_grad) {
    // fold the transposed direction's gradient back into S layout
    std::vector<double> grad(s.size());
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        grad[i * cols + j] = grad_v2t[i * cols + j] + grad_t2v_t[j * rows + i];
    auto si = sims.impl();
    auto li = loss.impl();
    loss.set_requires_grad(true);
    Tape::instance().record([si, li, grad = std::move(grad)] {
      if (!si->requires_grad) return;
      si->ensure_grad();
      const double g = li->grad[0];
      for (std::size_t i = 0; i < grad.size(); ++i) si->grad[i] += g * grad[i];
    });
  }
  return loss;
}

double sms_loss_reference(const Tensor& sims, const RelevanceMatrix& c,
                          const SmsConfig& cfg) {
  cfg.validate();
  const std::size_t bv = sims.rows(), bt = sims.cols();

  double l_v2t = 0.0;
  std::size_t n_v2t = 0;
  for (std::size_t i = 0; i < bv; ++i)
    for (std::size_t j = 0; j < bt; ++j)
      for (std::size_t k = 0; k < bt; ++k) {
        const double r = c.at(i, j) - c.at(i, k);
        if (r > cfg.tau) {
          l_v2t += r * std::log1p(std::exp(cfg.gamma * (sims.at(i, k) - sims.at(i, j))));
          ++n_v2t;
        }
      }

  double l_t2v = 0.0;
  std::size_t n_t2v = 0;
  for (std::size_t j = 0; j < bt; ++j)
    for (std::size_t i = 0; i < bv; ++i)
      for (std::size_t k = 0; k < bv; ++k) {
        const double r = c.at(i, j) - c.at(k, j);
        if (r > cfg.tau) {
          l_t2v += r * std::log1p(std::exp(cfg.gamma * (sims.at(k, j) - sims.at(i, j))));
          ++n_t2v;
        }
      }

  double total = 0.0;
  if (n_v2t > 0) total += l_v2t / static_cast<double>(n_v2t);
  if (n_t2v > 0) total += l_t2v / static_cast<double>(n_t2v);
  return total;
}

Tensor mimm_loss(const Tensor& sims, double margin) {
  if (!sims.is_matrix() || sims.rows() != sims.cols())
    throw InputError("mimm_loss: expected a square paired-batch matrix, got " +
                     shape_str(sims.shape()));
  if (margin <= 0.0)
    throw ContractError("mimm_loss: margin must be positive");
  const std::size_t b = sims.rows();
  const std::vector<double>& s = sims.data();

  double total = 0.0;
  const bool want_grad = Tape::instance().recording() && sims.requires_grad();
  std::vector<double> grad;
  if (want_grad) grad.assign(s.size(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      const double h1 = margin - s[i * b + i] + s[i * b + j];
      if (h1 > 0.0) {
        total += h1;
        if (want_grad) {
          grad[i * b + i] -= inv_b;
          grad[i * b + j] += inv_b;
        }
      }
      const double h2 = margin - s[i * b + i] + s[j * b + i];
      if (h2 > 0.0) {
        total += h2;
        if (want_grad) {
          grad[i * b + i] -= inv_b;
          grad[j * b + i] += inv_b;
        }
      }
    }

  Tensor loss = Tensor::scalar(total * inv_b);
  if (want_grad) {
    auto si = sims.impl();
    auto li = loss.impl();
    loss.set_requires_grad(true);
    Tape::instance().record([si, li, grad = std::move(grad)] {
      if (!si->requires_grad) return;
      si->ensure_grad();
      const double g = li->grad[0];
      for (std::size_t i = 0; i < grad.size(); ++i) si->grad[i] += g * grad[i];
    });
  }
  return loss;
}

Tensor similarity_matrix(const Tensor& visual, const Tensor& text) {
  if (!visual.is_matrix() || !text.is_matrix() || visual.cols() != text.cols())
    throw InputError("similarity_matrix: embedding dims differ, " +
                     shape_str(visual.shape()) + " vs " + shape_str(text.shape()));
  return matmul(visual, transpose(text));
}

}  // namespace crclip
