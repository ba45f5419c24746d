#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"
#include "spnet/errors.hpp"
#include "spnet/pyramid.hpp"
#include "spnet/rng.hpp"

using namespace spnet;

namespace {

BinaryMask random_mask(Index h, Index w, Rng& rng, double density = 0.5) {
  BinaryMask m(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) m(y, x) = rng.uniform() < density ? 1 : 0;
  return m;
}

bool masks_equal(const BinaryMask& a, const BinaryMask& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a == b).all();
}

void check_partition(const ResidualPyramid& pyr, Index h, Index w) {
  BinaryMask sum = BinaryMask::Zero(h, w);
  for (const auto& region : pyr.region) {
    REQUIRE(region.rows() == h);
    REQUIRE(region.cols() == w);
    sum += region;
  }
  // disjoint and covering: every pixel claimed exactly once
  CHECK((sum == 1).all());
}

}  // namespace

TEST_CASE("nearest downsampling keeps the top-left sample") {
  BinaryMask m(2, 4);
  m << 1, 0, 0, 1,
       0, 1, 1, 0;
  auto d = downsample_nearest(m, 2);
  CHECK(d.rows() == 1);
  CHECK(d.cols() == 2);
  CHECK(d(0, 0) == 1);
  CHECK(d(0, 1) == 0);
  CHECK_THROWS_AS(downsample_nearest(m, 3), std::invalid_argument);
}

TEST_CASE("nearest upsampling replicates blocks") {
  BinaryMask m(1, 2);
  m << 1, 0;
  auto u = upsample_nearest(m, 2);
  CHECK(u.rows() == 2);
  CHECK(u.cols() == 4);
  CHECK(u(0, 0) == 1);
  CHECK(u(1, 1) == 1);
  CHECK(u(0, 2) == 0);
  CHECK(u(1, 3) == 0);
  CHECK(masks_equal(downsample_nearest(u, 2), m));
}

TEST_CASE("tensor downsampling keeps the top-left sample per plane") {
  Tensor<float> t(1, 1, 2, 2);
  t.raw() << 4.0f, 3.0f, 2.0f, 1.0f;
  auto d = downsample_nearest(t, 2);
  CHECK(d.height() == 1);
  CHECK(d.at(0, 0, 0, 0) == 4.0f);
}

TEST_CASE("single-pixel label decomposes by hand") {
  BinaryMask g = BinaryMask::Zero(4, 4);
  g(0, 0) = 1;
  auto pyr = build_residual_pyramid(g, 2);

  // coarser labels: the lone pixel survives every downsampling
  CHECK(pyr.label[1](0, 0) == 1);
  CHECK(pyr.label[1].sum() == 1);
  CHECK(pyr.label[2](0, 0) == 1);

  // finest region: the rest of the replicated 2x2 block
  BinaryMask a0 = BinaryMask::Zero(4, 4);
  a0(0, 1) = a0(1, 0) = a0(1, 1) = 1;
  CHECK(masks_equal(pyr.region[0], a0));

  // middle region: everything outside that block
  BinaryMask a1 = BinaryMask::Ones(4, 4);
  a1.topLeftCorner(2, 2).setZero();
  CHECK(masks_equal(pyr.region[1], a1));

  // coarsest region: only the original pixel remains unclaimed
  CHECK(pyr.region[2](0, 0) == 1);
  CHECK(pyr.region[2].sum() == 1);

  // per-scale residual masks
  CHECK(masks_equal(pyr.residual[0], a0));
  BinaryMask r1(2, 2);
  r1 << 0, 1, 1, 1;
  CHECK(masks_equal(pyr.residual[1], r1));
  CHECK(pyr.residual[2](0, 0) == 1);
  CHECK(pyr.residual[2].size() == 1);
}

TEST_CASE("all 65536 4x4 labels: partition property and reference agreement") {
  for (unsigned bits = 0; bits < 65536; ++bits) {
    BinaryMask g(4, 4);
    for (int i = 0; i < 16; ++i) g(i / 4, i % 4) = (bits >> i) & 1;
    auto pyr = build_residual_pyramid(g, 2);
    auto ref = oracle::pyramid_reference(g, 2);
    check_partition(pyr, 4, 4);
    for (int k = 0; k <= 2; ++k) {
      if (!masks_equal(pyr.region[k], ref.region[k])) {
        CAPTURE(bits);
        CAPTURE(k);
        REQUIRE(masks_equal(pyr.region[k], ref.region[k]));
      }
      REQUIRE(masks_equal(pyr.residual[k], ref.residual[k]));
      REQUIRE(masks_equal(pyr.label[k], ref.label[k]));
    }
  }
}

TEST_CASE("random 64x64 labels at three levels agree with the reference") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed, "pyramid-test");
    const double density = rng.uniform(0.02, 0.9);
    BinaryMask g = random_mask(64, 64, rng, density);
    auto pyr = build_residual_pyramid(g, 3);
    auto ref = oracle::pyramid_reference(g, 3);
    check_partition(pyr, 64, 64);
    for (int k = 0; k <= 3; ++k) {
      REQUIRE(masks_equal(pyr.region[k], ref.region[k]));
      REQUIRE(masks_equal(pyr.residual[k], ref.residual[k]));
    }
  }
}

TEST_CASE("labels at each level are the downsampled finer level") {
  Rng rng(7, "pyramid-labels");
  BinaryMask g = random_mask(32, 32, rng);
  auto pyr = build_residual_pyramid(g, 3);
  for (int k = 1; k <= 3; ++k)
    CHECK(masks_equal(pyr.label[k], downsample_nearest(pyr.label[k - 1], 2)));
  for (int k = 0; k <= 3; ++k)
    CHECK(masks_equal(pyr.residual[k], downsample_nearest(pyr.region[k], 1 << k)));
}

TEST_CASE("invalid pyramid inputs are rejected") {
  BinaryMask bad(4, 4);
  bad.setConstant(2);
  CHECK_THROWS_AS(build_residual_pyramid(bad, 2), DataError);

  BinaryMask odd = BinaryMask::Zero(6, 6);
  CHECK_THROWS_AS(build_residual_pyramid(odd, 2), std::invalid_argument);

  BinaryMask ok = BinaryMask::Zero(8, 8);
  CHECK_THROWS_AS(build_residual_pyramid(ok, 0), std::invalid_argument);
  CHECK_NOTHROW(build_residual_pyramid(ok, 2));
}
