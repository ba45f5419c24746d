#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "spnet/data.hpp"
#include "spnet/errors.hpp"
#include "spnet/eval.hpp"
#include "spnet/rng.hpp"

using namespace spnet;

namespace {

BinaryMask random_mask(Rng& r, Index h, Index w, double density) {
  BinaryMask m(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) m(y, x) = r.uniform() < density ? 1 : 0;
  return m;
}

Tensor<float> mask_as_prob(const BinaryMask& m) {
  Tensor<float> t(1, 1, m.rows(), m.cols());
  auto p = t.plane(0, 0);
  for (Index y = 0; y < m.rows(); ++y)
    for (Index x = 0; x < m.cols(); ++x) p(y, x) = float(m(y, x));
  return t;
}

}  // namespace

TEST_CASE("confusion counts and ratios on the 4x4 hand case") {
  BinaryMask gt = BinaryMask::Zero(4, 4), pred = BinaryMask::Zero(4, 4);
  for (Index x = 0; x < 4; ++x) gt(0, x) = gt(1, x) = 1;
  gt(2, 0) = gt(2, 1) = 1;  // 10 vessel pixels
  for (Index x = 0; x < 4; ++x) pred(0, x) = pred(1, x) = 1;  // hits 8 of them
  pred(3, 3) = 1;                                             // one false alarm

  const ConfusionCounts c = confusion(pred, gt);
  CHECK(c.tp == 8);
  CHECK(c.fn == 2);
  CHECK(c.fp == 1);
  CHECK(c.tn == 5);
  const SenSpeAcc r = sen_spe_acc(c);
  CHECK(*r.sen == doctest::Approx(0.8));
  CHECK(*r.spe == doctest::Approx(5.0 / 6.0));
  CHECK(*r.acc == doctest::Approx(13.0 / 16.0));

  const ConfusionCounts perfect = confusion(gt, gt);
  CHECK(perfect.fp == 0);
  CHECK(perfect.fn == 0);

  const BinaryMask none = BinaryMask::Zero(4, 4);
  const ConfusionCounts empty = confusion(pred, gt, &none);
  CHECK(empty.total() == 0);
  const SenSpeAcc u = sen_spe_acc(empty);
  CHECK_FALSE(u.sen.has_value());
  CHECK_FALSE(u.spe.has_value());
  CHECK_FALSE(u.acc.has_value());

  // No vessel pixels at all: sensitivity is undefined, not zero.
  const SenSpeAcc nov = sen_spe_acc(confusion(none, none));
  CHECK_FALSE(nov.sen.has_value());
  CHECK(*nov.spe == 1.0);

  BinaryMask wrong(3, 4);
  CHECK_THROWS_AS(confusion(wrong, gt), std::invalid_argument);
}

TEST_CASE("roc endpoints and degenerate inputs") {
  const RocResult sep = roc_from_scores({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
  CHECK(*sep.auc == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(sep.points.front().fpr == 0.0);
  CHECK(sep.points.front().tpr == 0.0);
  CHECK(sep.points.back().fpr == 1.0);
  CHECK(sep.points.back().tpr == 1.0);

  const RocResult exact = roc_from_scores({1.0, 1.0, 0.0}, {1, 1, 0});
  CHECK(*exact.auc == doctest::Approx(1.0).epsilon(1e-15));

  const RocResult ties = roc_from_scores({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0});
  CHECK(*ties.auc == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_FALSE(roc_from_scores({0.1, 0.2}, {1, 1}).auc.has_value());
  CHECK_FALSE(roc_from_scores({0.1, 0.2}, {0, 0}).auc.has_value());

  for (std::size_t i = 1; i < sep.points.size(); ++i)
    CHECK(sep.points[i].fpr >= sep.points[i - 1].fpr);
}

TEST_CASE("trapezoidal auc equals the tie-aware mann-whitney statistic") {
  Rng r(404, "auc-cases");
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 16 + int(r.below(64));
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
    bool pos = false, neg = false;
    for (int i = 0; i < n; ++i) {
      // Half the sets draw from a coarse grid so ties are common.
      scores[std::size_t(i)] =
          rep % 2 ? double(r.below(9)) / 8.0 : r.uniform();
      labels[std::size_t(i)] = std::uint8_t(r.uniform() < 0.4);
      (labels[std::size_t(i)] ? pos : neg) = true;
    }
    if (!pos) labels[0] = 1;
    if (!neg) labels[1] = 0;

    const RocResult roc = roc_from_scores(scores, labels);
    REQUIRE(roc.auc.has_value());
    CHECK(std::abs(*roc.auc - oracle::mann_whitney_auc(scores, labels)) <= 1e-12);
  }
}

TEST_CASE("pr curve skips empty-selection thresholds") {
  const auto pts = pr_from_scores({0.9, 0.8, 0.4}, {1, 1, 0});
  // Threshold 1.0 selects nothing and is dropped; 0.9, 0.8, 0.4, 0.0 remain.
  REQUIRE(pts.size() == 4);
  CHECK(pts[0].threshold == 0.9);
  CHECK(pts[0].recall == doctest::Approx(0.5));
  CHECK(pts[0].precision == doctest::Approx(1.0));
  CHECK(pts[1].recall == doctest::Approx(1.0));
  CHECK(pts[1].precision == doctest::Approx(1.0));
  CHECK(pts[2].precision == doctest::Approx(2.0 / 3.0));
  CHECK(pts[3].threshold == 0.0);
  CHECK(pr_from_scores({0.3, 0.4}, {0, 0}).empty());
}

TEST_CASE("erosion of a 3x3 square leaves the center") {
  BinaryMask m = BinaryMask::Zero(5, 5);
  for (Index y = 1; y <= 3; ++y)
    for (Index x = 1; x <= 3; ++x) m(y, x) = 1;
  const BinaryMask e = morphology(m, MorphOp::erode, 1);
  CHECK(e.cast<int>().sum() == 1);
  CHECK(e(2, 2) == 1);
  CHECK_THROWS_AS(morphology(m, MorphOp::erode, 0), std::invalid_argument);
}

TEST_CASE("morphology matches the set-definition oracle on random masks") {
  Rng r(77, "morph");
  for (int rep = 0; rep < 100; ++rep) {
    const BinaryMask m = random_mask(r, 32, 32, 0.2 + 0.6 * r.uniform());
    const int radius = 1 + int(r.below(3));
    const BinaryMask er = morphology(m, MorphOp::erode, radius);
    const BinaryMask di = morphology(m, MorphOp::dilate, radius);
    CHECK((er == oracle::erode(m, radius)).all());
    CHECK((di == oracle::dilate(m, radius)).all());
    const BinaryMask op = morphology(m, MorphOp::open, radius);
    const BinaryMask cl = morphology(m, MorphOp::close, radius);
    CHECK((op == oracle::dilate(oracle::erode(m, radius), radius)).all());
    CHECK((cl == oracle::erode(oracle::dilate(m, radius), radius)).all());
    // Opening shrinks everywhere; closing grows except within `radius` of the
    // border, where out-of-bounds counts as background during the erosion.
    CHECK((op <= m).all());
    bool interior_grown = true;
    for (Index y = radius; y < 32 - radius; ++y)
      for (Index x = radius; x < 32 - radius; ++x)
        if (cl(y, x) < m(y, x)) interior_grown = false;
    CHECK(interior_grown);
  }
}

TEST_CASE("connected components at 4- and 8-connectivity") {
  BinaryMask m = BinaryMask::Zero(3, 3);
  m(0, 0) = m(1, 1) = 1;
  CHECK(label_components(m, 4).count == 2);
  CHECK(label_components(m, 8).count == 1);
  CHECK_THROWS_AS(label_components(m, 6), std::invalid_argument);

  Rng r(78, "cc");
  for (int rep = 0; rep < 100; ++rep) {
    const BinaryMask mask = random_mask(r, 32, 32, 0.15 + 0.7 * r.uniform());
    CHECK(label_components(mask, 4).count == oracle::flood_count(mask, 4));
    CHECK(label_components(mask, 8).count == oracle::flood_count(mask, 8));
  }
}

TEST_CASE("remove_small keeps 100 pixels and drops 99") {
  BinaryMask m = BinaryMask::Zero(30, 30);
  for (Index y = 0; y < 10; ++y)
    for (Index x = 0; x < 10; ++x) m(y, x) = 1;  // exactly 100 px
  for (Index y = 15; y < 25; ++y)
    for (Index x = 15; x < 25; ++x) m(y, x) = 1;
  m(15, 15) = 0;  // 99 px
  const BinaryMask kept = remove_small_components(m, 100, 4);
  CHECK(kept.cast<int>().sum() == 100);
  CHECK(kept(0, 0) == 1);
  CHECK(kept(20, 20) == 0);
}

TEST_CASE("cs extraction: thin structures are challenging, cores are not") {
  // A 1-px line erodes away entirely, so all of it is cs.
  BinaryMask line = BinaryMask::Zero(60, 60);
  for (Index x = 5; x < 55; ++x) line(30, x) = 1;
  const CsMasks lm = extract_cs_mask(line);
  CHECK((lm.cs == line).all());
  CHECK(lm.non_cs.cast<int>().sum() == 0);

  // A solid disk keeps its interior; only the 1-px erosion rim is cs.
  BinaryMask disk = BinaryMask::Zero(40, 40);
  for (Index y = 0; y < 40; ++y)
    for (Index x = 0; x < 40; ++x)
      if ((y - 20) * (y - 20) + (x - 20) * (x - 20) <= 144) disk(y, x) = 1;
  REQUIRE(disk.cast<int>().sum() > 100);
  const CsMasks dm = extract_cs_mask(disk);
  const BinaryMask interior = oracle::erode(disk, 1);
  for (Index y = 0; y < 40; ++y)
    for (Index x = 0; x < 40; ++x) {
      CHECK(dm.cs(y, x) == (disk(y, x) && !interior(y, x) ? 1 : 0));
      CHECK(dm.non_cs(y, x) == interior(y, x));
    }

  // Empty input: both masks empty.
  const CsMasks em = extract_cs_mask(BinaryMask::Zero(8, 8));
  CHECK(em.cs.cast<int>().sum() == 0);
  CHECK(em.non_cs.cast<int>().sum() == 0);

  // cs and non_cs partition the vessel class.
  const auto synth = synth_generate(31, 64, 1);
  const CsMasks sm = extract_cs_mask(synth[0].gt);
  for (Index y = 0; y < 64; ++y)
    for (Index x = 0; x < 64; ++x) {
      CHECK((sm.cs(y, x) & sm.non_cs(y, x)) == 0);
      CHECK((sm.cs(y, x) | sm.non_cs(y, x)) == synth[0].gt(y, x));
    }
}

TEST_CASE("skeletonize thins bars and preserves structure") {
  BinaryMask line = BinaryMask::Zero(20, 20);
  for (Index x = 3; x < 17; ++x) line(10, x) = 1;
  CHECK((skeletonize(line) == line).all());

  BinaryMask bar = BinaryMask::Zero(9, 16);
  for (Index y = 3; y < 6; ++y)
    for (Index x = 3; x < 13; ++x) bar(y, x) = 1;  // 3x10 solid bar
  const BinaryMask sk = skeletonize(bar);
  const int n = int(sk.cast<int>().sum());
  CHECK(n >= 8);
  CHECK(n <= 12);
  CHECK((sk <= bar).all());
  CHECK(oracle::flood_count(sk, 8) == 1);

  // A free-standing 2x2 blob must not vanish (it thins to a domino).
  BinaryMask blob = BinaryMask::Zero(6, 6);
  blob(2, 2) = blob(2, 3) = blob(3, 2) = blob(3, 3) = 1;
  const BinaryMask bs = skeletonize(blob);
  CHECK(bs.cast<int>().sum() == 2);
  CHECK((bs <= blob).all());
  CHECK(oracle::flood_count(bs, 8) == 1);

  Rng r(79, "skel");
  for (int rep = 0; rep < 50; ++rep) {
    const BinaryMask m = random_mask(r, 24, 24, 0.2 + 0.5 * r.uniform());
    const BinaryMask s = skeletonize(m);
    CHECK((s <= m).all());
    CHECK(oracle::flood_count(s, 8) == oracle::flood_count(m, 8));
  }
}

TEST_CASE("cal metric on identity, empty, and shifted inputs") {
  const auto synth = synth_generate(32, 64, 1);
  const BinaryMask& gt = synth[0].gt;
  const CalResult same = cal_metric(gt, gt);
  CHECK(same.c == 1.0);
  CHECK(same.a == 1.0);
  CHECK(same.l == 1.0);
  CHECK(same.cal == 1.0);

  const CalResult none = cal_metric(BinaryMask::Zero(64, 64), gt);
  CHECK(none.cal == 0.0);
  CHECK(none.a == 0.0);

  CHECK_THROWS_AS(cal_metric(gt, BinaryMask::Zero(64, 64)), DataError);

  // Thick bar shifted by one pixel: every factor saturates at 1.
  BinaryMask bar = BinaryMask::Zero(32, 32), shifted = BinaryMask::Zero(32, 32);
  for (Index y = 10; y < 16; ++y)
    for (Index x = 5; x < 25; ++x) {
      bar(y, x) = 1;
      shifted(y + 1, x) = 1;
    }
  const CalResult cal = cal_metric(shifted, bar);
  CHECK(cal.c == 1.0);
  CHECK(cal.a == 1.0);
  CHECK(cal.l == 1.0);
  CHECK(cal.cal == 1.0);

  for (double v : {same.c, same.a, same.l, none.c, none.a, none.l}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("evaluate: perfect map, tie map, and region bookkeeping") {
  const auto synth = synth_generate(33, 64, 1);
  const BinaryMask& gt = synth[0].gt;
  const BinaryMask fov = BinaryMask::Constant(64, 64, 1);

  const auto perfect = evaluate(mask_as_prob(gt), gt, &fov, 0.5, {"all", "cs", "non_cs"});
  REQUIRE(perfect.size() == 3);
  for (const auto& rep : perfect) {
    CHECK(*rep.acc == doctest::Approx(1.0));
    CHECK(*rep.auc == doctest::Approx(1.0).epsilon(1e-12));
    REQUIRE(rep.cal.has_value());
    CHECK(rep.cal->cal == doctest::Approx(1.0));
  }

  const Tensor<float> half = Tensor<float>::constant(1, 1, 64, 64, 0.5f);
  const auto tie = evaluate(half, gt, &fov, 0.5, {"all"});
  CHECK(*tie[0].sen == 0.0);  // 0.5 is not > 0.5: everything goes background
  CHECK(*tie[0].spe == 1.0);

  Rng r(80, "evalmap");
  Tensor<float> noisy(1, 1, 64, 64);
  for (Index i = 0; i < noisy.size(); ++i) noisy.raw()[i] = float(r.uniform());
  const auto reg = evaluate(noisy, gt, &fov, 0.5, {"all", "cs", "non_cs"});
  CHECK(reg[1].counts.tp + reg[2].counts.tp == reg[0].counts.tp);
  CHECK(reg[1].counts.fn + reg[2].counts.fn == reg[0].counts.fn);

  CHECK_THROWS_AS(evaluate(noisy, gt, &fov, 0.5, {"bogus"}), std::invalid_argument);
}
