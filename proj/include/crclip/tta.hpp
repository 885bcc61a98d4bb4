#pragma once

#include <functional>
#include <vector>

#include "crclip/frames.hpp"
#include "crclip/tensor.hpp"

namespace crclip {

struct TtaConfig {
  bool enable_flip = false;
  std::vector<double> scales{0.875, 1.0, 1.125};
  void validate() const;
};

// Width axis reversed; everything else unchanged.
FrameStack hflip(const FrameStack& x);

// Bilinear resize (align-corners-false) to round(H·s) × round(W·s), then
// center crop back to H×W. Downscales are centered on a zero canvas since
// a smaller frame cannot be cropped up to the original size.
FrameStack rescale_center_crop(const FrameStack& x, double scale);

using EncodeFn = std::function<Tensor(const FrameStack&)>;   // -> [1 × D]
using ProjectFn = std::function<Tensor(const Tensor&)>;      // -> [1 × d] unit row

std::size_t tta_variant_count(const TtaConfig& cfg);

// Encodes every (scale, flip) variant in scale-major, flip-minor order,
// average-pools the projected embeddings and renormalizes. A single-variant
// config returns the plain encode->project output unchanged.
Tensor tta_encode(const FrameStack& x, const EncodeFn& encode,
                  const ProjectFn& project, const TtaConfig& cfg);

}  // namespace crclip
