#include "crclip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace crclip {

const char* to_string(IoErrorKind kind) {
  switch (kind) {
    case IoErrorKind::FileAccess: return "file access error";
    case IoErrorKind::BadMagic: return "bad magic";
    case IoErrorKind::BadVersion: return "unsupported version";
    case IoErrorKind::BadDtype: return "unsupported dtype";
    case IoErrorKind::Truncated: return "truncated file";
    case IoErrorKind::ChecksumMismatch: return "checksum mismatch";
    case IoErrorKind::KeyMismatch: return "key mismatch";
  }
  return "io error";
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

namespace {

void require_defined(const Tensor& t, const char* what) {
  if (!t.defined()) throw ContractError(std::string(what) + ": undefined tensor");
}

void require_matrix(const Tensor& t, const char* what) {
  require_defined(t, what);
  if (!t.is_matrix())
    throw ShapeError(std::string(what) + ": expected a matrix, got " +
                     shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Marks `out` as a recorded graph node and registers its backward rule.
void record(Tensor& out, std::function<void()> rule) {
  out.impl()->requires_grad = true;
  out.impl()->ensure_grad();
  Tape::instance().record(std::move(rule));
}

bool tracked(const Tensor& t) {
  return Tape::instance().recording() && t.requires_grad();
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) throw ShapeError("tensor: empty shape");
  for (std::size_t d : shape)
    if (d == 0) throw ShapeError("tensor: zero dimension in " + shape_str(shape));
  if (shape_numel(shape) != values.size())
    throw ShapeError("tensor: shape " + shape_str(shape) + " expects " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
  if (requires_grad) impl_->ensure_grad();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), 0.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

std::size_t Tensor::rows() const {
  if (!is_matrix()) throw ShapeError("rows: not a matrix: " + shape_str(shape()));
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  if (!is_matrix()) throw ShapeError("cols: not a matrix: " + shape_str(shape()));
  return impl_->shape[1];
}

double Tensor::item() const {
  if (!is_scalar())
    throw ContractError("item: tensor has " + std::to_string(size()) + " elements");
  return impl_->data[0];
}

const std::vector<double>& Tensor::grad() const {
  if (!requires_grad()) throw ContractError("grad: tensor does not require grad");
  return impl_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
  if (!requires_grad()) throw ContractError("grad: tensor does not require grad");
  return impl_->grad;
}

void Tensor::set_requires_grad(bool enabled) {
  impl_->requires_grad = enabled;
  if (enabled) impl_->ensure_grad();
}

void Tensor::zero_grad() {
  if (requires_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return impl_->data[r * cols() + c];
}

// ---- Tape -----------------------------------------------------------------

Tape& Tape::instance() {
  static Tape tape;
  return tape;
}

void Tape::record(std::function<void()> backward_rule) {
  entries_.push_back(std::move(backward_rule));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || !loss.is_scalar())
    throw ContractError("backward: loss must be a scalar tensor");
  if (!loss.requires_grad())
    throw ContractError("backward: loss is not part of a recorded graph");
  loss.impl()->grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
}

NoGradGuard::NoGradGuard() { ++Tape::instance().no_grad_depth_; }
NoGradGuard::~NoGradGuard() { --Tape::instance().no_grad_depth_; }

void backward(const Tensor& loss) { Tape::instance().backward(loss); }

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = pa[i * k + p];
        const double* brow = pb + p * n;
        double* orow = po + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
      }
  }
  Tensor y(Shape{m, n}, std::move(out));
  if (tracked(a) || tracked(b)) {
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    record(y, [ai, bi, yi, m, k, n] {
      const double* g = yi->grad.data();
      if (ai->requires_grad) {
        ai->ensure_grad();
        double* ga = ai->grad.data();
        const double* pb = bi->data.data();
        // ga[i,p] += sum_j g[i,j] * b[p,j]
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = g + i * n;
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + p] += acc;
          }
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        double* gb = bi->grad.data();
        const double* pa = ai->data.data();
        // gb[p,j] += sum_i a[i,p] * g[i,j]
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t i = 0; i < m; ++i) {
            const double aip = pa[i * k + p];
            const double* grow = g + i * n;
            double* gbrow = gb + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
          }
      }
    });
  }
  return y;
}

Tensor transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  const double* px = x.data().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = px[i * c + j];
  Tensor y(Shape{c, r}, std::move(out));
  if (tracked(x)) {
    auto xi = x.impl();
    auto yi = y.impl();
    record(y, [xi, yi, r, c] {
      if (!xi->requires_grad) return;
      xi->ensure_grad();
      const double* g = yi->grad.data();
      double* gx = xi->grad.data();
      for (std::size_t j = 0; j < c; ++j)
        for (std::size_t i = 0; i < r; ++i) gx[i * c + j] += g[j * r + i];
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " +
                     shape_str(shape) + " changes element count");
  Tensor y(std::move(shape), x.data());
  if (tracked(x)) {
    auto xi = x.impl();
    auto yi = y.impl();
    record(y, [xi, yi] {
      if (!xi->requires_grad) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += yi->grad[i];
    });
  }
  return y;
}

namespace {

// Shared skeleton for same-shape binary ops.
template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  require_defined(a, name);
  require_defined(b, name);
  require_same_shape(a, b, name);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.at(i), b.at(i));
  Tensor y(a.shape(), std::move(out));
  if (tracked(a) || tracked(b)) {
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    record(y, [ai, bi, yi, bwd] {
      for (std::size_t i = 0; i < yi->grad.size(); ++i) {
        const double g = yi->grad[i];
        auto [da, db] = bwd(ai->data[i], bi->data[i], g);
        if (ai->requires_grad) {
          ai->ensure_grad();
          ai->grad[i] += da;
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          bi->grad[i] += db;
        }
      }
    });
  }
  return y;
}

template <typename Fwd, typename Dfn>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Dfn dfn) {
  require_defined(x, name);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.at(i));
  Tensor y(x.shape(), std::move(out));
  if (tracked(x)) {
    auto xi = x.impl(), yi = y.impl();
    record(y, [xi, yi, dfn] {
      if (!xi->requires_grad) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < yi->grad.size(); ++i)
        xi->grad[i] += yi->grad[i] * dfn(xi->data[i], yi->data[i]);
    });
  }
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return std::pair<double, double>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return std::pair<double, double>{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g) {
        return std::pair<double, double>{g * y, g * x};
      });
}

Tensor scale(const Tensor& x, double c) {
  return unary_op(
      "scale", x, [c](double v) { return v * c; },
      [c](double, double) { return c; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x,
      [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log1p(const Tensor& x) {
  return unary_op(
      "log1p", x, [](double v) { return std::log1p(v); },
      [](double v, double) { return 1.0 / (1.0 + v); });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary_op(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  require_defined(bias, "add_bias");
  if (bias.rank() != 1 || bias.size() != x.cols())
    throw ShapeError("add_bias: " + shape_str(x.shape()) + " with bias " +
                     shape_str(bias.shape()));
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.data());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias.at(j);
  Tensor y(x.shape(), std::move(out));
  if (tracked(x) || tracked(bias)) {
    auto xi = x.impl(), bi = bias.impl(), yi = y.impl();
    record(y, [xi, bi, yi, r, c] {
      const double* g = yi->grad.data();
      if (xi->requires_grad) {
        xi->ensure_grad();
        for (std::size_t i = 0; i < r * c; ++i) xi->grad[i] += g[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) bi->grad[j] += g[i * c + j];
      }
    });
  }
  return y;
}

Tensor add_tiled(const Tensor& x, const Tensor& tile) {
  require_matrix(x, "add_tiled");
  require_matrix(tile, "add_tiled");
  const std::size_t s = tile.rows(), c = tile.cols();
  if (x.cols() != c || x.rows() % s != 0)
    throw ShapeError("add_tiled: " + shape_str(x.shape()) + " with tile " +
                     shape_str(tile.shape()));
  const std::size_t r = x.rows();
  std::vector<double> out(x.data());
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ti = i % s;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += tile.at(ti, j);
  }
  Tensor y(x.shape(), std::move(out));
  if (tracked(x) || tracked(tile)) {
    auto xi = x.impl(), ti = tile.impl(), yi = y.impl();
    record(y, [xi, ti, yi, r, s, c] {
      const double* g = yi->grad.data();
      if (xi->requires_grad) {
        xi->ensure_grad();
        for (std::size_t i = 0; i < r * c; ++i) xi->grad[i] += g[i];
      }
      if (ti->requires_grad) {
        ti->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
          const std::size_t row = i % s;
          for (std::size_t j = 0; j < c; ++j) ti->grad[row * c + j] += g[i * c + j];
        }
      }
    });
  }
  return y;
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  const std::size_t n = x.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x.at(i);
  Tensor y = Tensor::scalar(acc / static_cast<double>(n));
  if (tracked(x)) {
    auto xi = x.impl(), yi = y.impl();
    record(y, [xi, yi, n] {
      if (!xi->requires_grad) return;
      xi->ensure_grad();
      const double g = yi->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) xi->grad[i] += g;
    });
  }
  return y;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_defined(x, "softmax");
  if (axis >= x.rank())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                     shape_str(x.shape()));
  const Shape& s = x.shape();
  const std::size_t len = s[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];

  std::vector<double> out(x.size());
  const double* px = x.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = px[base];
      for (std::size_t j = 1; j < len; ++j)
        mx = std::max(mx, px[base + j * inner]);
      double denom = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(px[base + j * inner] - mx);
        out[base + j * inner] = e;
        denom += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= denom;
    }
  Tensor y(x.shape(), std::move(out));
  if (tracked(x)) {
    auto xi = x.impl(), yi = y.impl();
    record(y, [xi, yi, outer, len, inner] {
      if (!xi->requires_grad) return;
      xi->ensure_grad();
      const double* sm = yi->data.data();
      const double* g = yi->grad.data();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j)
            dot += g[base + j * inner] * sm[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t k = base + j * inner;
            xi->grad[k] += sm[k] * (g[k] - dot);
          }
        }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_matrix(x, "layer_norm");
  require_defined(gain, "layer_norm");
  require_defined(bias, "layer_norm");
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  const std::size_t b = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm: feature dim " + std::to_string(d) +
                     " vs gain " + shape_str(gain.shape()) + ", bias " +
                     shape_str(bias.shape()));
  std::vector<double> out(x.size());
  std::vector<double> inv_std(b), mu(b);
  const double* px = x.data().data();
  for (std::size_t i = 0; i < b; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += px[i * d + j];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = px[i * d + j] - m;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double istd = 1.0 / std::sqrt(var + eps);
    mu[i] = m;
    inv_std[i] = istd;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (px[i * d + j] - m) * istd;
      out[i * d + j] = gain.at(j) * xh + bias.at(j);
    }
  }
  Tensor y(x.shape(), std::move(out));
  if (tracked(x) || tracked(gain) || tracked(bias)) {
    auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), yi = y.impl();
    record(y, [xi, gi, bi, yi, b, d, mu, inv_std] {
      const double* g = yi->grad.data();
      const double* px = xi->data.data();
      const double* pg = gi->data.data();
      for (std::size_t i = 0; i < b; ++i) {
        const double istd = inv_std[i];
        const double m = mu[i];
        if (gi->requires_grad || bi->requires_grad) {
          if (gi->requires_grad) gi->ensure_grad();
          if (bi->requires_grad) bi->ensure_grad();
          for (std::size_t j = 0; j < d; ++j) {
            const double xh = (px[i * d + j] - m) * istd;
            if (gi->requires_grad) gi->grad[j] += g[i * d + j] * xh;
            if (bi->requires_grad) bi->grad[j] += g[i * d + j];
          }
        }
        if (xi->requires_grad) {
          xi->ensure_grad();
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double xh = (px[i * d + j] - m) * istd;
            const double dxh = g[i * d + j] * pg[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh;
          }
          mean_dxh /= static_cast<double>(d);
          mean_dxh_xh /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double xh = (px[i * d + j] - m) * istd;
            const double dxh = g[i * d + j] * pg[j];
            xi->grad[i * d + j] += istd * (dxh - mean_dxh - xh * mean_dxh_xh);
          }
        }
      }
    });
  }
  return y;
}

Tensor l2_normalize(const Tensor& x, double eps) {
  require_matrix(x, "l2_normalize");
  if (eps <= 0.0) throw ContractError("l2_normalize: eps must be positive");
  const std::size_t b = x.rows(), d = x.cols();
  std::vector<double> out(x.size());
  std::vector<double> norms(b);
  const double* px = x.data().data();
  for (std::size_t i = 0; i < b; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += px[i * d + j] * px[i * d + j];
    const double n = std::sqrt(sq);
    norms[i] = n;
    const double denom = std::max(n, eps);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = px[i * d + j] / denom;
  }
  Tensor y(x.shape(), std::move(out));
  if (tracked(x)) {
    auto xi = x.impl(), yi = y.impl();
    record(y, [xi, yi, b, d, norms, eps] {
      if (!xi->requires_grad) return;
      xi->ensure_grad();
      const double* g = yi->grad.data();
      const double* py = yi->data.data();
      for (std::size_t i = 0; i < b; ++i) {
        if (norms[i] > eps) {
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += g[i * d + j] * py[i * d + j];
          for (std::size_t j = 0; j < d; ++j)
            xi->grad[i * d + j] += (g[i * d + j] - py[i * d + j] * dot) / norms[i];
        } else {
          // below the guard the denominator is the constant eps
          for (std::size_t j = 0; j < d; ++j) xi->grad[i * d + j] += g[i * d + j] / eps;
        }
      }
    });
  }
  return y;
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  require_defined(x, "dropout");
  if (rate < 0.0 || rate >= 1.0)
    throw ContractError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  const double inv_keep = 1.0 / keep;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> mask(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double m = uni(rng) < rate ? 0.0 : inv_keep;
    mask[i] = m;
    out[i] = x.at(i) * m;
  }
  Tensor y(x.shape(), std::move(out));
  if (tracked(x)) {
    auto xi = x.impl(), yi = y.impl();
    record(y, [xi, yi, mask = std::move(mask)] {
      if (!xi->requires_grad) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < yi->grad.size(); ++i)
        xi->grad[i] += yi->grad[i] * mask[i];
    });
  }
  return y;
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& idx) {
  require_matrix(table, "gather_rows");
  if (idx.empty()) throw InputError("gather_rows: empty index list");
  const std::size_t r = table.rows(), c = table.cols();
  for (std::size_t i : idx)
    if (i >= r)
      throw InputError("gather_rows: index " + std::to_string(i) +
                       " out of range for " + shape_str(table.shape()));
  std::vector<double> out(idx.size() * c);
  const double* pt = table.data().data();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(pt + idx[i] * c, pt + (idx[i] + 1) * c, out.begin() + i * c);
  Tensor y(Shape{idx.size(), c}, std::move(out));
  if (tracked(table)) {
    auto ti = table.impl(), yi = y.impl();
    record(y, [ti, yi, idx, c] {
      if (!ti->requires_grad) return;
      ti->ensure_grad();
      const double* g = yi->grad.data();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) ti->grad[idx[i] * c + j] += g[i * c + j];
    });
  }
  return y;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != c)
      throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()));
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor y(Shape{total, c}, std::move(out));
  bool any = false;
  for (const Tensor& p : parts) any = any || tracked(p);
  if (any) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    auto yi = y.impl();
    record(y, [impls = std::move(impls), yi] {
      std::size_t offset = 0;
      for (auto& pi : impls) {
        const std::size_t n = pi->data.size();
        if (pi->requires_grad) {
          pi->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) pi->grad[i] += yi->grad[offset + i];
        }
        offset += n;
      }
    });
  }
  return y;
}

Tensor mean_pool_rows(const Tensor& x, std::size_t groups) {
  require_matrix(x, "mean_pool_rows");
  if (groups == 0 || x.rows() % groups != 0)
    throw ShapeError("mean_pool_rows: " + std::to_string(groups) +
                     " groups over " + shape_str(x.shape()));
  const std::size_t s = x.rows() / groups, c = x.cols();
  std::vector<double> out(groups * c, 0.0);
  const double* px = x.data().data();
  for (std::size_t gI = 0; gI < groups; ++gI)
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < c; ++j)
        out[gI * c + j] += px[(gI * s + i) * c + j];
  for (double& v : out) v /= static_cast<double>(s);
  Tensor y(Shape{groups, c}, std::move(out));
  if (tracked(x)) {
    auto xi = x.impl(), yi = y.impl();
    record(y, [xi, yi, groups, s, c] {
      if (!xi->requires_grad) return;
      xi->ensure_grad();
      const double inv = 1.0 / static_cast<double>(s);
      const double* g = yi->grad.data();
      for (std::size_t gI = 0; gI < groups; ++gI)
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t j = 0; j < c; ++j)
            xi->grad[(gI * s + i) * c + j] += g[gI * c + j] * inv;
    });
  }
  return y;
}

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                      std::size_t seqs, std::size_t heads, double dropout_rate,
                      bool training, Rng& rng) {
  require_matrix(q, "attention_core");
  require_matrix(k, "attention_core");
  require_matrix(v, "attention_core");
  const std::size_t da = q.cols();
  if (k.cols() != da || v.cols() != da)
    throw ShapeError("attention_core: width mismatch q" + shape_str(q.shape()) +
                     " k" + shape_str(k.shape()) + " v" + shape_str(v.shape()));
  if (heads == 0 || da % heads != 0)
    throw ConfigError("attention_core: width " + std::to_string(da) +
                      " not divisible by " + std::to_string(heads) + " heads");
  if (seqs == 0 || q.rows() % seqs != 0 || k.rows() % seqs != 0)
    throw ShapeError("attention_core: rows not divisible into " +
                     std::to_string(seqs) + " sequences");
  if (k.rows() != v.rows())
    throw ShapeError("attention_core: k rows " + std::to_string(k.rows()) +
                     " vs v rows " + std::to_string(v.rows()));
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ContractError("attention_core: dropout rate out of range");

  const std::size_t lq = q.rows() / seqs;
  const std::size_t lkv = k.rows() / seqs;
  const std::size_t dh = da / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool drop = training && dropout_rate > 0.0;
  const double inv_keep = drop ? 1.0 / (1.0 - dropout_rate) : 1.0;

  // weights[s][h] laid out [lq × lkv]; saved for the backward pass
  std::vector<double> weights(seqs * heads * lq * lkv);
  std::vector<double> mask;  // dropout multipliers, same layout
  if (drop) mask.resize(weights.size());
  std::vector<double> out(q.rows() * da, 0.0);

  const double* pq = q.data().data();
  const double* pk = k.data().data();
  const double* pv = v.data().data();
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  for (std::size_t s = 0; s < seqs; ++s)
    for (std::size_t h = 0; h < heads; ++h) {
      double* w = weights.data() + (s * heads + h) * lq * lkv;
      for (std::size_t i = 0; i < lq; ++i) {
        const double* qrow = pq + (s * lq + i) * da + h * dh;
        double* wrow = w + i * lkv;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < lkv; ++j) {
          const double* krow = pk + (s * lkv + j) * da + h * dh;
          double dot = 0.0;
          for (std::size_t dIdx = 0; dIdx < dh; ++dIdx) dot += qrow[dIdx] * krow[dIdx];
          wrow[j] = dot * sc;
          mx = std::max(mx, wrow[j]);
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < lkv; ++j) {
          wrow[j] = std::exp(wrow[j] - mx);
          denom += wrow[j];
        }
        for (std::size_t j = 0; j < lkv; ++j) wrow[j] /= denom;
        const double* arow = wrow;
        double applied[1];  // silence unused warnings in no-drop path
        (void)applied;
        if (drop) {
          double* mrow = mask.data() + (s * heads + h) * lq * lkv + i * lkv;
          for (std::size_t j = 0; j < lkv; ++j)
            mrow[j] = uni(rng) < dropout_rate ? 0.0 : inv_keep;
          for (std::size_t j = 0; j < lkv; ++j) {
            const double a = wrow[j] * mrow[j];
            const double* vrow = pv + (s * lkv + j) * da + h * dh;
            double* orow = out.data() + (s * lq + i) * da + h * dh;
            for (std::size_t dIdx = 0; dIdx < dh; ++dIdx) orow[dIdx] += a * vrow[dIdx];
          }
        } else {
          for (std::size_t j = 0; j < lkv; ++j) {
            const double a = arow[j];
            const double* vrow = pv + (s * lkv + j) * da + h * dh;
            double* orow = out.data() + (s * lq + i) * da + h * dh;
            for (std::size_t dIdx = 0; dIdx < dh; ++dIdx) orow[dIdx] += a * vrow[dIdx];
          }
        }
      }
    }

  Tensor y(Shape{q.rows(), da}, std::move(out));
  if (tracked(q) || tracked(k) || tracked(v)) {
    auto qi = q.impl(), ki = k.impl(), vi = v.impl(), yi = y.impl();
    record(y, [qi, ki, vi, yi, seqs, heads, lq, lkv, dh, da, sc, drop,
               weights = std::move(weights), mask = std::move(mask)] {
      const double* g = yi->grad.data();
      const double* pq = qi->data.data();
      const double* pk = ki->data.data();
      const double* pv = vi->data.data();
      if (qi->requires_grad) qi->ensure_grad();
      if (ki->requires_grad) ki->ensure_grad();
      if (vi->requires_grad) vi->ensure_grad();
      std::vector<double> dw(lq * lkv);
      for (std::size_t s = 0; s < seqs; ++s)
        for (std::size_t h = 0; h < heads; ++h) {
          const double* w = weights.data() + (s * heads + h) * lq * lkv;
          const double* m = drop ? mask.data() + (s * heads + h) * lq * lkv : nullptr;
          // dV and d(applied weights)
          for (std::size_t i = 0; i < lq; ++i) {
            const double* grow = g + (s * lq + i) * da + h * dh;
            for (std::size_t j = 0; j < lkv; ++j) {
              const double* vrow = pv + (s * lkv + j) * da + h * dh;
              double dot = 0.0;
              for (std::size_t dIdx = 0; dIdx < dh; ++dIdx) dot += grow[dIdx] * vrow[dIdx];
              dw[i * lkv + j] = dot;
              if (vi->requires_grad) {
                const double a = drop ? w[i * lkv + j] * m[i * lkv + j] : w[i * lkv + j];
                double* gv = vi->grad.data() + (s * lkv + j) * da + h * dh;
                for (std::size_t dIdx = 0; dIdx < dh; ++dIdx) gv[dIdx] += a * grow[dIdx];
              }
            }
          }
          if (!qi->requires_grad && !ki->requires_grad) continue;
          // through dropout and softmax to the logits
          for (std::size_t i = 0; i < lq; ++i) {
            double* dwrow = dw.data() + i * lkv;
            const double* wrow = w + i * lkv;
            if (drop) {
              const double* mrow = m + i * lkv;
              for (std::size_t j = 0; j < lkv; ++j) dwrow[j] *= mrow[j];
            }
            double dot = 0.0;
            for (std::size_t j = 0; j < lkv; ++j) dot += dwrow[j] * wrow[j];
            for (std::size_t j = 0; j < lkv; ++j)
              dwrow[j] = wrow[j] * (dwrow[j] - dot);  // d logits
            for (std::size_t j = 0; j < lkv; ++j) {
              const double dl = dwrow[j] * sc;
              const double* qrow = pq + (s * lq + i) * da + h * dh;
              const double* krow = pk + (s * lkv + j) * da + h * dh;
              if (qi->requires_grad) {
                double* gq = qi->grad.data() + (s * lq + i) * da + h * dh;
                for (std::size_t dIdx = 0; dIdx < dh; ++dIdx) gq[dIdx] += dl * krow[dIdx];
              }
              if (ki->requires_grad) {
                double* gk = ki->grad.data() + (s * lkv + j) * da + h * dh;
                for (std::size_t dIdx = 0; dIdx < dh; ++dIdx) gk[dIdx] += dl * qrow[dIdx];
              }
            }
          }
        }
    });
  }
  return y;
}

bool all_finite(const Tensor& x) {
  for (double v : x.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace crclip
