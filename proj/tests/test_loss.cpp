#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "spnet/gradcheck.hpp"
#include "spnet/loss.hpp"
#include "spnet/rng.hpp"

using namespace spnet;

namespace {

Tensor<double> random_probs(Index h, Index w, Rng& rng, double lo = 0.05, double hi = 0.95) {
  Tensor<double> t(1, 1, h, w);
  for (Index i = 0; i < t.size(); ++i) t.raw()[i] = rng.uniform(lo, hi);
  return t;
}

BinaryMask random_mask(Index h, Index w, Rng& rng, double density = 0.4) {
  BinaryMask m(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) m(y, x) = rng.uniform() < density ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("dice loss vanishes on a perfect binary prediction") {
  Rng rng(1, "dice");
  BinaryMask g = random_mask(8, 8, rng);
  Tensor<double> o(1, 1, 8, 8);
  for (Index y = 0; y < 8; ++y)
    for (Index x = 0; x < 8; ++x) o.at(0, 0, y, x) = double(g(y, x));
  CHECK(dice_loss(o, g).value == doctest::Approx(0.0));
}

TEST_CASE("dice loss on a fully inverted prediction leaves only the smoothing term") {
  BinaryMask g(4, 4);
  g.setZero();
  g.topLeftCorner(2, 2).setOnes();
  Tensor<double> o(1, 1, 4, 4);
  for (Index y = 0; y < 4; ++y)
    for (Index x = 0; x < 4; ++x) o.at(0, 0, y, x) = 1.0 - double(g(y, x));
  // intersection empty: 1 - eps / (12 + 4 + eps)
  CHECK(dice_loss(o, g, 1.0).value == doctest::Approx(1.0 - 1.0 / 17.0));
}

TEST_CASE("dice loss is zero for empty label and empty prediction") {
  BinaryMask g = BinaryMask::Zero(4, 4);
  Tensor<double> o(1, 1, 4, 4);
  CHECK(dice_loss(o, g).value == doctest::Approx(0.0));
}

TEST_CASE("dice gradient against finite differences") {
  Rng rng(2, "dice-fd");
  BinaryMask g = random_mask(6, 5, rng);
  auto o = random_probs(6, 5, rng);
  auto res = dice_loss(o, g);
  auto f = [&](const std::vector<Tensor<double>>& v) { return dice_loss(v[0], g).value; };
  CHECK(gradcheck<double>(f, {o}, {res.grad}, 1e-6) < 1e-8);
}

TEST_CASE("masked cross-entropy hand values") {
  BinaryMask g(1, 1), r(1, 1);
  g(0, 0) = 1;
  r(0, 0) = 1;
  auto o = Tensor<double>::constant(1, 1, 1, 1, 0.5);
  auto res = masked_ce_loss(o, g, r);
  CHECK(res.value == doctest::Approx(0.6931471805599453));  // ln 2
  CHECK(res.grad.raw()[0] == doctest::Approx(-2.0));        // -1/o

  g(0, 0) = 0;
  o.raw()[0] = 0.25;
  CHECK(masked_ce_loss(o, g, r).value == doctest::Approx(-std::log(0.75)));
  CHECK(masked_ce_loss(o, g, r, 1e-7, true).value == doctest::Approx(0.0));  // positive class only
}

TEST_CASE("masked cross-entropy averages over the mask support only") {
  BinaryMask g(2, 2), r(2, 2);
  g << 1, 0, 1, 0;
  r << 1, 1, 0, 0;  // two supported pixels, one of each class
  auto o = Tensor<double>::constant(1, 1, 2, 2, 0.5);
  o.raw()[2] = 0.99;  // unsupported pixel must not matter
  auto res = masked_ce_loss(o, g, r);
  CHECK(res.value == doctest::Approx(std::log(2.0)));  // (ln2 + ln2) / 2
  CHECK(res.grad.raw()[2] == 0.0);
  CHECK(res.grad.raw()[3] == 0.0);
}

TEST_CASE("masked cross-entropy on an empty mask is zero with zero gradient") {
  BinaryMask g(2, 2), r = BinaryMask::Zero(2, 2);
  g.setOnes();
  auto o = Tensor<double>::constant(1, 1, 2, 2, 0.01);
  auto res = masked_ce_loss(o, g, r);
  CHECK(res.value == 0.0);
  CHECK(double(res.grad.raw().abs().maxCoeff()) == 0.0);
}

TEST_CASE("clamped probabilities saturate the value and gate the gradient") {
  BinaryMask g(1, 1), r(1, 1);
  g(0, 0) = 1;
  r(0, 0) = 1;
  auto o = Tensor<double>::constant(1, 1, 1, 1, 1e-9);  // below the clamp
  auto res = masked_ce_loss(o, g, r, 1e-7);
  CHECK(res.value == doctest::Approx(-std::log(1e-7)));
  CHECK(res.grad.raw()[0] == 0.0);  // flat outside the clamp interval

  o.raw()[0] = 1e-7;  // exactly at the clamp boundary: still differentiable
  CHECK(masked_ce_loss(o, g, r, 1e-7).grad.raw()[0] == doctest::Approx(-1e7));
}

TEST_CASE("masked cross-entropy gradient against finite differences") {
  Rng rng(3, "ce-fd");
  BinaryMask g = random_mask(5, 7, rng);
  BinaryMask r = random_mask(5, 7, rng, 0.6);
  auto o = random_probs(5, 7, rng);
  for (bool pos_only : {false, true}) {
    auto res = masked_ce_loss(o, g, r, 1e-7, pos_only);
    auto f = [&](const std::vector<Tensor<double>>& v) {
      return masked_ce_loss(v[0], g, r, 1e-7, pos_only).value;
    };
    CHECK(gradcheck<double>(f, {o}, {res.grad}, 1e-6) < 1e-8);
  }
}

TEST_CASE("total loss composes the dice term and weighted per-level terms") {
  Rng rng(4, "total");
  BinaryMask g = random_mask(16, 16, rng);
  auto pyr = build_residual_pyramid(g, 3);

  std::vector<Tensor<double>> outputs;
  for (int k = 0; k <= 3; ++k) outputs.push_back(random_probs(16 >> k, 16 >> k, rng));

  LossWeights w;
  auto res = total_loss(outputs, pyr, w);

  double expect = dice_loss(outputs[0], g).value;
  CHECK(res.global_term == doctest::Approx(expect));
  for (int k = 0; k <= 3; ++k) {
    const double ck = masked_ce_loss(outputs[k], pyr.label[k], pyr.residual[k]).value;
    CHECK(res.local_terms[k] == doctest::Approx(ck));
    expect += w.lambda[k] * ck;
  }
  CHECK(res.value == doctest::Approx(expect));

  // term switches
  LossWeights dice_only;
  dice_only.use_local.assign(4, false);
  CHECK(total_loss(outputs, pyr, dice_only).value == doctest::Approx(res.global_term));

  LossWeights local_only;
  local_only.use_global = false;
  CHECK(total_loss(outputs, pyr, local_only).value ==
        doctest::Approx(res.value - res.global_term));

  LossWeights heavy = w;
  heavy.lambda[2] *= 2.0;
  CHECK(total_loss(outputs, pyr, heavy).value ==
        doctest::Approx(res.value + w.lambda[2] * res.local_terms[2]));
}

TEST_CASE("total loss gradients against finite differences") {
  Rng rng(5, "total-fd");
  BinaryMask g = random_mask(16, 16, rng);
  auto pyr = build_residual_pyramid(g, 3);
  std::vector<Tensor<double>> outputs;
  for (int k = 0; k <= 3; ++k) outputs.push_back(random_probs(16 >> k, 16 >> k, rng));

  LossWeights w;
  auto res = total_loss(outputs, pyr, w);
  auto f = [&](const std::vector<Tensor<double>>& v) { return total_loss(v, pyr, w).value; };
  // per-pixel gradients are O(1/pixels), so the achievable relative error is
  // bounded by rounding of the O(1) loss across the difference
  CHECK(gradcheck<double>(f, outputs, res.grads, 1e-5) < 1e-6);
}

TEST_CASE("total loss validates its inputs") {
  Rng rng(6, "total-bad");
  BinaryMask g = random_mask(8, 8, rng);
  auto pyr = build_residual_pyramid(g, 2);
  std::vector<Tensor<double>> two;
  two.push_back(random_probs(8, 8, rng));
  two.push_back(random_probs(4, 4, rng));
  CHECK_THROWS_AS(total_loss(two, pyr, LossWeights{}), std::invalid_argument);
}
