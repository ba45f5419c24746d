#pragma once

#include <cmath>
#include <vector>

#include "spnet/ops.hpp"
#include "spnet/pyramid.hpp"
#include "spnet/tensor.hpp"

namespace spnet {

/// Weighting and mode switches for the composite training loss.
struct LossWeights {
  std::vector<double> lambda{1.0, 0.5, 0.25, 0.125};  // per-level weights on the local terms
  double eps = 1.0;                                   // Dice smoothing constant
  double clamp = 1e-7;                                // probability clamp inside the log terms
  bool positive_class_only = false;  // keep only the -g*log(o) half of the local terms
  bool use_global = true;            // Dice term on the full-resolution output
  std::vector<bool> use_local;       // per-level switches; empty means all on

  bool local_on(std::size_t k) const {
    return use_local.empty() || (k < use_local.size() && use_local[k]);
  }
};

template <typename S>
struct LossValueGrad {
  S value = S(0);
  Tensor<S> grad;
};

/// Soft Dice loss 1 - (2*sum(o*g) + eps) / (|o|^2 + |g|^2 + eps) for a single
/// prediction map, with its gradient with respect to o.
template <typename S>
LossValueGrad<S> dice_loss(const Tensor<S>& o, const BinaryMask& g, double eps = 1.0) {
  if (o.batch() != 1 || o.channels() != 1 || o.height() != g.rows() || o.width() != g.cols())
    throw std::invalid_argument("dice_loss: shape mismatch");
  using A = ops::Acc<S>;
  A inter = 0, osq = 0, gsum = 0;
  const auto op = o.plane(0, 0);
  for (Index y = 0; y < g.rows(); ++y)
    for (Index x = 0; x < g.cols(); ++x) {
      const A v = A(op(y, x));
      osq += v * v;
      if (g(y, x)) {
        inter += v;
        gsum += 1;
      }
    }
  const A num = 2 * inter + A(eps);
  const A den = osq + gsum + A(eps);

  LossValueGrad<S> res;
  res.value = S(1 - num / den);
  res.grad = Tensor<S>(1, 1, g.rows(), g.cols());
  auto gp = res.grad.plane(0, 0);
  const A s1 = 2 / den, s2 = 2 * num / (den * den);
  for (Index y = 0; y < g.rows(); ++y)
    for (Index x = 0; x < g.cols(); ++x)
      gp(y, x) = S(s2 * A(op(y, x)) - (g(y, x) ? s1 : A(0)));
  return res;
}

/// Cross-entropy restricted to the pixels selected by the residual mask r,
/// averaged over those pixels; zero (with zero gradient) when the mask is
/// empty.  Predictions are clamped away from {0,1} inside the logs, and the
/// gradient is the exact adjoint of the clamped forward value.  With
/// positive_class_only only the -g*log(o) half is kept.
template <typename S>
LossValueGrad<S> masked_ce_loss(const Tensor<S>& o, const BinaryMask& g, const BinaryMask& r,
                                double clamp = 1e-7, bool positive_class_only = false) {
  if (o.batch() != 1 || o.channels() != 1 || o.height() != g.rows() || o.width() != g.cols() ||
      g.rows() != r.rows() || g.cols() != r.cols())
    throw std::invalid_argument("masked_ce_loss: shape mismatch");
  using A = ops::Acc<S>;

  LossValueGrad<S> res;
  res.grad = Tensor<S>(1, 1, g.rows(), g.cols());
  const std::int64_t count = std::int64_t(r.template cast<std::int64_t>().sum());
  if (count == 0) return res;

  const A lo = A(clamp), hi = A(1) - A(clamp);
  const auto op = o.plane(0, 0);
  auto gp = res.grad.plane(0, 0);
  A total = 0;
  for (Index y = 0; y < g.rows(); ++y)
    for (Index x = 0; x < g.cols(); ++x) {
      if (!r(y, x)) continue;
      const A v = A(op(y, x));
      const A vc = std::min(std::max(v, lo), hi);
      const bool interior = v >= lo && v <= hi;  // clamp derivative
      A term = 0, deriv = 0;
      if (g(y, x)) {
        term -= std::log(vc);
        deriv -= 1 / vc;
      }
      if (!positive_class_only && !g(y, x)) {
        term -= std::log(1 - vc);
        deriv += 1 / (1 - vc);
      }
      total += term;
      gp(y, x) = interior ? S(deriv / A(count)) : S(0);
    }
  res.value = S(total / A(count));
  return res;
}

template <typename S>
struct TotalLossResult {
  S value = S(0);
  std::vector<Tensor<S>> grads;  // one per prediction map O_0..O_K
  S global_term = S(0);
  std::vector<S> local_terms;
};

/// Composite loss: Dice on the full-resolution map plus lambda-weighted
/// masked cross-entropy on every pyramid level, for one sample.
template <typename S>
TotalLossResult<S> total_loss(const std::vector<Tensor<S>>& outputs, const ResidualPyramid& pyr,
                              const LossWeights& w) {
  const std::size_t k1 = std::size_t(pyr.levels) + 1;
  if (outputs.size() != k1) throw std::invalid_argument("total_loss: output count != levels + 1");
  if (w.lambda.size() < k1) throw std::invalid_argument("total_loss: too few lambda weights");

  TotalLossResult<S> res;
  res.local_terms.assign(k1, S(0));
  res.grads.reserve(k1);
  for (std::size_t k = 0; k < k1; ++k)
    res.grads.emplace_back(1, 1, outputs[k].height(), outputs[k].width());

  if (w.use_global) {
    auto d = dice_loss(outputs[0], pyr.label[0], w.eps);
    res.global_term = d.value;
    res.value += d.value;
    res.grads[0].raw() += d.grad.raw();
  }
  for (std::size_t k = 0; k < k1; ++k) {
    if (!w.local_on(k)) continue;
    auto c = masked_ce_loss(outputs[k], pyr.label[k], pyr.residual[k], w.clamp,
                            w.positive_class_only);
    res.local_terms[k] = c.value;
    res.value += S(w.lambda[k]) * c.value;
    res.grads[k].raw() += S(w.lambda[k]) * c.grad.raw();
  }
  return res;
}

}  // namespace spnet
