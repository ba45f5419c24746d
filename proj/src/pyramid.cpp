#include "spnet/pyramid.hpp"

namespace spnet {

BinaryMask downsample_nearest(const BinaryMask& m, int factor) {
  if (factor < 1 || m.rows() % factor || m.cols() % factor)
    throw std::invalid_argument("downsample_nearest: size not divisible by factor");
  BinaryMask out(m.rows() / factor, m.cols() / factor);
  for (Index y = 0; y < out.rows(); ++y)
    for (Index x = 0; x < out.cols(); ++x) out(y, x) = m(y * factor, x * factor);
  return out;
}

BinaryMask upsample_nearest(const BinaryMask& m, int factor) {
  if (factor < 1) throw std::invalid_argument("upsample_nearest: bad factor");
  BinaryMask out(m.rows() * factor, m.cols() * factor);
  for (Index y = 0; y < out.rows(); ++y)
    for (Index x = 0; x < out.cols(); ++x) out(y, x) = m(y / factor, x / factor);
  return out;
}

ResidualPyramid build_residual_pyramid(const BinaryMask& g0, int levels) {
  if (levels < 1) throw std::invalid_argument("build_residual_pyramid: levels must be >= 1");
  if (!is_binary(g0)) throw DataError("build_residual_pyramid: non-binary label");
  const Index div = Index(1) << levels;
  if (g0.rows() % div || g0.cols() % div)
    throw std::invalid_argument("build_residual_pyramid: size not divisible by 2^levels");

  ResidualPyramid pyr;
  pyr.levels = levels;
  pyr.label.resize(levels + 1);
  pyr.label[0] = g0;
  for (int k = 1; k <= levels; ++k) pyr.label[k] = downsample_nearest(pyr.label[k - 1], 2);

  // Scaled-up copies of every level, all at full resolution.
  std::vector<BinaryMask> up(levels + 1);
  up[0] = g0;
  for (int k = 1; k <= levels; ++k) up[k] = upsample_nearest(pyr.label[k], 1 << k);

  // Residual regions: the between-scale differences, each masked by the
  // complement of everything claimed by finer levels; the last level takes
  // whatever remains.
  pyr.region.resize(levels + 1);
  BinaryMask claimed = BinaryMask::Zero(g0.rows(), g0.cols());
  for (int k = 0; k < levels; ++k) {
    BinaryMask diff = (up[k] != up[k + 1]).cast<std::uint8_t>();
    pyr.region[k] = k == 0 ? diff : BinaryMask(diff * (std::uint8_t(1) - claimed));
    claimed += pyr.region[k];  // regions are disjoint, so this stays binary
  }
  pyr.region[levels] = std::uint8_t(1) - claimed;

  pyr.residual.resize(levels + 1);
  for (int k = 0; k <= levels; ++k) pyr.residual[k] = downsample_nearest(pyr.region[k], 1 << k);
  return pyr;
}

}  // namespace spnet
