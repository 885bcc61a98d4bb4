#include "crclip/tta.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace crclip {

void TtaConfig::validate() const {
  if (scales.empty()) throw ConfigError("TtaConfig: scales must be non-empty");
  for (double s : scales)
    if (!(s > 0.0))
      throw InputError("TtaConfig: non-positive scale " + std::to_string(s));
}

FrameStack hflip(const FrameStack& x) {
  FrameStack out(x.t, x.h, x.w, x.c);
  for (std::size_t t = 0; t < x.t; ++t)
    for (std::size_t y = 0; y < x.h; ++y)
      for (std::size_t xi = 0; xi < x.w; ++xi)
        for (std::size_t c = 0; c < x.c; ++c)
          out.at(t, y, xi, c) = x.at(t, y, x.w - 1 - xi, c);
  return out;
}

namespace {

// Bilinear sample with align-corners-false mapping and edge clamping.
double bilinear_at(const FrameStack& src, std::size_t t, double sy, double sx,
                   std::size_t c) {
  const double fy = std::clamp(sy, 0.0, static_cast<double>(src.h - 1));
  const double fx = std::clamp(sx, 0.0, static_cast<double>(src.w - 1));
  const std::size_t y0 = static_cast<std::size_t>(std::floor(fy));
  const std::size_t x0 = static_cast<std::size_t>(std::floor(fx));
  const std::size_t y1 = std::min(y0 + 1, src.h - 1);
  const std::size_t x1 = std::min(x0 + 1, src.w - 1);
  const double wy = fy - static_cast<double>(y0);
  const double wx = fx - static_cast<double>(x0);
  return (1.0 - wy) * ((1.0 - wx) * src.at(t, y0, x0, c) + wx * src.at(t, y0, x1, c)) +
         wy * ((1.0 - wx) * src.at(t, y1, x0, c) + wx * src.at(t, y1, x1, c));
}

FrameStack bilinear_resize(const FrameStack& src, std::size_t nh, std::size_t nw) {
  FrameStack out(src.t, nh, nw, src.c);
  const double ry = static_cast<double>(src.h) / static_cast<double>(nh);
  const double rx = static_cast<double>(src.w) / static_cast<double>(nw);
  for (std::size_t t = 0; t < src.t; ++t)
    for (std::size_t y = 0; y < nh; ++y) {
      const double sy = (static_cast<double>(y) + 0.5) * ry - 0.5;
      for (std::size_t x = 0; x < nw; ++x) {
        const double sx = (static_cast<double>(x) + 0.5) * rx - 0.5;
        for (std::size_t c = 0; c < src.c; ++c)
          out.at(t, y, x, c) = bilinear_at(src, t, sy, sx, c);
      }
    }
  return out;
}

}  // namespace

FrameStack rescale_center_crop(const FrameStack& x, double scale) {
  if (!(scale > 0.0))
    throw InputError("rescale_center_crop: non-positive scale " +
                     std::to_string(scale));
  const std::size_t nh = static_cast<std::size_t>(
      std::llround(static_cast<double>(x.h) * scale));
  const std::size_t nw = static_cast<std::size_t>(
      std::llround(static_cast<double>(x.w) * scale));
  if (nh == 0 || nw == 0)
    throw InputError("rescale_center_crop: scale collapses the frame");
  if (nh == x.h && nw == x.w) return x;

  const FrameStack resized = bilinear_resize(x, nh, nw);
  FrameStack out(x.t, x.h, x.w, x.c);
  if (nh >= x.h && nw >= x.w) {
    const std::size_t oy = (nh - x.h) / 2, ox = (nw - x.w) / 2;
    for (std::size_t t = 0; t < x.t; ++t)
      for (std::size_t y = 0; y < x.h; ++y)
        for (std::size_t xi = 0; xi < x.w; ++xi)
          for (std::size_t c = 0; c < x.c; ++c)
            out.at(t, y, xi, c) = resized.at(t, y + oy, xi + ox, c);
  } else {
    // smaller than the original: center on a zero canvas
    const std::size_t oy = (x.h - nh) / 2, ox = (x.w - nw) / 2;
    for (std::size_t t = 0; t < x.t; ++t)
      for (std::size_t y = 0; y < nh; ++y)
        for (std::size_t xi = 0; xi < nw; ++xi)
          for (std::size_t c = 0; c < x.c; ++c)
            out.at(t, y + oy, xi + ox, c) = resized.at(t, y, xi, c);
  }
  return out;
}

std::size_t tta_variant_count(const TtaConfig& cfg) {
  return cfg.scales.size() * (cfg.enable_flip ? 2 : 1);
}

Tensor tta_encode(const FrameStack& x, const EncodeFn& encode,
                  const ProjectFn& project, const TtaConfig& cfg) {
  cfg.validate();
  auto embed_variant = [&](const FrameStack& v) { return project(encode(v)); };

  const std::size_t expected = tta_variant_count(cfg);
  if (expected == 1) return embed_variant(rescale_center_crop(x, cfg.scales[0]));

  // scale-major, flip-minor. The flip applies to the input frames before
  // rescaling and each flip pair is summed first, so a width-symmetric
  // input reduces exactly to the scales-only average.
  FrameStack mirrored;
  if (cfg.enable_flip) mirrored = hflip(x);
  std::vector<double> acc;
  std::size_t produced = 0;
  for (double s : cfg.scales) {
    Tensor base = embed_variant(rescale_center_crop(x, s));
    ++produced;
    if (acc.empty()) acc.assign(base.size(), 0.0);
    if (cfg.enable_flip) {
      Tensor flipped = embed_variant(rescale_center_crop(mirrored, s));
      ++produced;
      for (std::size_t i = 0; i < acc.size(); ++i)
        acc[i] += base.at(i) + flipped.at(i);
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += base.at(i);
    }
  }
  if (produced != expected)
    throw ContractError("tta_encode: variant count drifted from |scales|·flip");

  const double inv = 1.0 / static_cast<double>(produced);
  for (double& v : acc) v *= inv;
  const std::size_t dim = acc.size();
  Tensor pooled(Shape{1, dim}, std::move(acc));
  return l2_normalize(pooled);
}

}  // namespace crclip
