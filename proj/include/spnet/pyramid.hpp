#pragma once

#include <vector>

#include "spnet/errors.hpp"
#include "spnet/tensor.hpp"

namespace spnet {

/// Nearest-neighbour downsampling keeping the top-left sample of each block.
BinaryMask downsample_nearest(const BinaryMask& m, int factor);

/// Nearest-neighbour upsampling replicating each pixel into a factor-sized block.
BinaryMask upsample_nearest(const BinaryMask& m, int factor);

template <typename S>
Tensor<S> downsample_nearest(const Tensor<S>& t, int factor) {
  if (factor < 1 || t.height() % factor || t.width() % factor)
    throw std::invalid_argument("downsample_nearest: size not divisible by factor");
  Tensor<S> out(t.batch(), t.channels(), t.height() / factor, t.width() / factor);
  for (Index b = 0; b < t.batch(); ++b)
    for (Index c = 0; c < t.channels(); ++c) {
      auto src = t.plane(b, c);
      auto dst = out.plane(b, c);
      for (Index y = 0; y < dst.rows(); ++y)
        for (Index x = 0; x < dst.cols(); ++x) dst(y, x) = src(y * factor, x * factor);
    }
  return out;
}

/// Parameter-free decomposition of a binary label into per-scale residuals.
/// Level k holds the label G_k at scale 1/2^k, the residual mask R_k at the
/// same scale, and the full-resolution residual region A_k.  The regions
/// A_0..A_K are pairwise disjoint and together cover every pixel.
struct ResidualPyramid {
  int levels = 0;                  // K
  std::vector<BinaryMask> label;     // G_k, size K+1
  std::vector<BinaryMask> residual;  // R_k, size K+1
  std::vector<BinaryMask> region;    // A_k at full resolution, size K+1
};

ResidualPyramid build_residual_pyramid(const BinaryMask& g0, int levels);

}  // namespace spnet
