#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "crclip/error.hpp"

namespace crclip {

using Rng = std::mt19937_64;
using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Dense row-major double tensor. Copying a Tensor copies the handle, not
// the buffer; values are written once at construction and never mutated by
// ops (grad accumulation during backward is the only exception).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t rank() const { return impl_->shape.size(); }
  bool is_matrix() const { return rank() == 2; }
  std::size_t rows() const;
  std::size_t cols() const;
  bool is_scalar() const { return size() == 1; }
  double item() const;

  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& mutable_data() { return impl_->data; }
  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad();
  void set_requires_grad(bool enabled);
  void zero_grad();

  double at(std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape: a flat list of backward rules in recording order.
// backward() seeds d(loss)/d(loss) = 1, replays the rules in reverse
// (accumulating grads additively across fan-out) and clears the tape.
class Tape {
 public:
  static Tape& instance();

  bool recording() const { return no_grad_depth_ == 0; }
  void record(std::function<void()> backward_rule);
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> entries_;
  int no_grad_depth_ = 0;
  friend class NoGradGuard;
};

// RAII scope that suspends tape recording (forward-only evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

void backward(const Tensor& loss);

// ---- ops ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_bias(const Tensor& x, const Tensor& bias);    // [B×D] + [D]
Tensor add_tiled(const Tensor& x, const Tensor& tile);   // [(G·S)×D] + [S×D]

Tensor mean(const Tensor& x);  // full reduction -> scalar
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log1p(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact-erf form

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

// Inverted dropout: training mode zeroes entries with probability `rate`
// and scales survivors by 1/(1-rate); eval mode returns x unchanged.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& idx);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor mean_pool_rows(const Tensor& x, std::size_t groups);  // [(G·S)×D] -> [G×D]

// Scaled-dot-product attention over `seqs` independent sequences packed
// row-major: q is [(seqs·len_q)×D], k and v are [(seqs·len_kv)×D]. Softmax
// runs over the kv positions of each sequence per head; dropout (training
// mode) applies to the attention weights.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                      std::size_t seqs, std::size_t heads, double dropout_rate,
                      bool training, Rng& rng);

bool all_finite(const Tensor& x);

}  // namespace crclip
