#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "spnet/errors.hpp"
#include "spnet/rng.hpp"
#include "spnet/tensor.hpp"

namespace spnet {

/// Verifies analytic gradients against central finite differences
/// (f(x+eps) - f(x-eps)) / (2 eps), coordinate by coordinate.  Returns the
/// maximum relative error |fd - analytic| / max(|fd|, |analytic|, 1e-8).
///
/// With samples_per_tensor == 0 every coordinate is checked; otherwise a
/// seeded subset of that many coordinates per tensor is checked, which keeps
/// whole-network verification tractable.  Coordinates where the two values
/// already agree within abs_skip are accepted outright: a finite difference
/// cannot resolve an exactly-zero derivative below the rounding noise of the
/// forward pass, so such coordinates are judged on absolute agreement.
/// Non-finite values abort.
template <typename S>
double gradcheck(const std::function<S(const std::vector<Tensor<S>>&)>& f,
                 std::vector<Tensor<S>> inputs, const std::vector<Tensor<S>>& analytic,
                 double eps, Index samples_per_tensor = 0, std::uint64_t seed = 0,
                 double abs_skip = 0.0) {
  if (inputs.size() != analytic.size())
    throw std::invalid_argument("gradcheck: inputs/analytic count mismatch");
  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (inputs[t].size() != analytic[t].size())
      throw std::invalid_argument("gradcheck: gradient shape mismatch");
    std::vector<Index> coords;
    const Index total = inputs[t].size();
    if (samples_per_tensor <= 0 || samples_per_tensor >= total) {
      coords.resize(total);
      for (Index i = 0; i < total; ++i) coords[i] = i;
    } else {
      Rng rng(seed, "gradcheck", t);
      coords.resize(samples_per_tensor);
      for (Index i = 0; i < samples_per_tensor; ++i) coords[i] = rng.below(total);
    }
    for (Index idx : coords) {
      S& v = inputs[t].raw()[idx];
      const S saved = v;
      v = saved + S(eps);
      const S plus = f(inputs);
      v = saved - S(eps);
      const S minus = f(inputs);
      v = saved;
      if (!std::isfinite(double(plus)) || !std::isfinite(double(minus)))
        throw NumericalError("gradcheck: non-finite loss value");
      const double fd = double(plus - minus) / (2.0 * eps);
      const double an = double(analytic[t].raw()[idx]);
      if (!std::isfinite(an)) throw NumericalError("gradcheck: non-finite analytic gradient");
      if (std::abs(fd - an) <= abs_skip) continue;
      const double rel =
          std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace spnet
