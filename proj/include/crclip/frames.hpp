#pragma once

#include <cstddef>
#include <vector>

#include "crclip/error.hpp"

namespace crclip {

// A clip as T×H×W×C frames, values in [0,1], row-major (t, y, x, c).
struct FrameStack {
  std::size_t t = 0, h = 0, w = 0, c = 0;
  std::vector<double> values;

  FrameStack() = default;
  FrameStack(std::size_t t_, std::size_t h_, std::size_t w_, std::size_t c_)
      : t(t_), h(h_), w(w_), c(c_), values(t_ * h_ * w_ * c_, 0.0) {
    if (t_ == 0 || h_ == 0 || w_ == 0 || c_ == 0)
      throw InputError("FrameStack: all dimensions must be >= 1");
  }

  std::size_t size() const { return values.size(); }

  double& at(std::size_t ti, std::size_t y, std::size_t x, std::size_t ci) {
    return values[((ti * h + y) * w + x) * c + ci];
  }
  double at(std::size_t ti, std::size_t y, std::size_t x, std::size_t ci) const {
    return values[((ti * h + y) * w + x) * c + ci];
  }

  bool same_geometry(const FrameStack& o) const {
    return t == o.t && h == o.h && w == o.w && c == o.c;
  }
};

}  // namespace crclip
