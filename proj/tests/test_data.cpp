#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "spnet/data.hpp"
#include "spnet/errors.hpp"
#include "spnet/eval.hpp"

using namespace spnet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* tag) {
  fs::path dir = fs::temp_directory_path() / (std::string("spnet_data_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

PnmImage gray_ramp(int w, int h) {
  PnmImage img;
  img.width = w;
  img.height = h;
  img.channels = 1;
  img.maxval = 255;
  img.pixels.resize(std::size_t(w) * h);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = std::uint16_t(i % 256);
  return img;
}

FundusSample flat_sample(Index h, Index w, float value = 1.0f) {
  FundusSample s;
  s.image = Tensor<float>::constant(1, 1, h, w, value);
  s.gt = BinaryMask::Constant(h, w, 1);
  s.id = "flat";
  return s;
}

}  // namespace

TEST_CASE("pnm roundtrip preserves 8- and 16-bit rasters") {
  const fs::path dir = fresh_dir("pnm");
  PnmImage img = gray_ramp(13, 7);
  write_pnm(dir / "a.pgm", img);
  const PnmImage back = read_pnm(dir / "a.pgm");
  CHECK(back.width == 13);
  CHECK(back.height == 7);
  CHECK(back.channels == 1);
  CHECK(back.maxval == 255);
  CHECK(back.pixels == img.pixels);

  img.maxval = 65535;
  for (auto& p : img.pixels) p = std::uint16_t(p * 257);
  write_pnm(dir / "wide.pgm", img);
  const PnmImage wide = read_pnm(dir / "wide.pgm");
  CHECK(wide.maxval == 65535);
  CHECK(wide.pixels == img.pixels);
}

TEST_CASE("pnm reader handles comments and rejects malformed input") {
  const fs::path dir = fresh_dir("pnm_hdr");
  {
    std::ofstream os(dir / "c.pgm", std::ios::binary);
    os << "P5 # format\n# a comment line\n2 1\n255\n";
    os.put(char(7));
    os.put(char(250));
  }
  const PnmImage img = read_pnm(dir / "c.pgm");
  CHECK(img.width == 2);
  CHECK(img.pixels == std::vector<std::uint16_t>{7, 250});

  {
    std::ofstream os(dir / "trunc.pgm", std::ios::binary);
    os << "P5\n4 4\n255\n";
    os.put(char(1));
  }
  CHECK_THROWS_AS(read_pnm(dir / "trunc.pgm"), DataError);
  {
    std::ofstream os(dir / "ascii.pgm", std::ios::binary);
    os << "P2\n1 1\n255\n0\n";
  }
  CHECK_THROWS_AS(read_pnm(dir / "ascii.pgm"), DataError);
  CHECK_THROWS_AS(read_pnm(dir / "missing.pgm"), DataError);
}

TEST_CASE("probability maps serialize as 16-bit big-endian pgm") {
  Tensor<float> prob(1, 1, 1, 3);
  prob.at(0, 0, 0, 0) = 0.0f;
  prob.at(0, 0, 0, 1) = 0.5f;
  prob.at(0, 0, 0, 2) = 1.0f;
  const PnmImage img = prob_to_pgm16(prob);
  CHECK(img.maxval == 65535);
  CHECK(img.pixels == std::vector<std::uint16_t>{0, 32768, 65535});  // round(p * 65535)

  const fs::path dir = fresh_dir("prob");
  write_pnm(dir / "p.pgm", img);
  // Big-endian sample order on disk.
  std::ifstream is(dir / "p.pgm", std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string raster = all.substr(all.size() - 6);
  CHECK(std::uint8_t(raster[2]) == 0x80);
  CHECK(std::uint8_t(raster[3]) == 0x00);
  CHECK(std::uint8_t(raster[4]) == 0xff);
  CHECK(std::uint8_t(raster[5]) == 0xff);

  const Tensor<float> back = pgm16_to_prob(read_pnm(dir / "p.pgm"));
  CHECK(back.at(0, 0, 0, 0) == 0.0f);
  CHECK(back.at(0, 0, 0, 2) == 1.0f);
  CHECK(back.at(0, 0, 0, 1) == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("dataset loader pairs stems and scales to [0,1]") {
  const fs::path root = fresh_dir("ds");
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  fs::create_directories(root / "masks");

  // Color image with distinct channels: green must be the one that survives.
  PnmImage color;
  color.width = 4;
  color.height = 2;
  color.channels = 3;
  color.maxval = 255;
  color.pixels.assign(std::size_t(4 * 2 * 3), 0);
  for (std::size_t i = 0; i < 8; ++i) {
    color.pixels[3 * i + 0] = 10;
    color.pixels[3 * i + 1] = std::uint16_t(20 * (i + 1));
    color.pixels[3 * i + 2] = 200;
  }
  write_pnm(root / "images" / "01.ppm", color);

  PnmImage label;
  label.width = 4;
  label.height = 2;
  label.channels = 1;
  label.maxval = 255;
  label.pixels = {0, 127, 128, 255, 0, 0, 255, 1};
  write_pnm(root / "labels" / "01.pgm", label);
  write_pnm(root / "masks" / "01.pgm", mask_to_pgm(BinaryMask::Constant(2, 4, 1)));

  const auto samples = load_dataset(root);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].id == "01");
  CHECK(samples[0].image.at(0, 0, 0, 0) == doctest::Approx(20.0 / 255));
  CHECK(samples[0].image.at(0, 0, 1, 3) == doctest::Approx(160.0 / 255));
  CHECK(samples[0].gt(0, 0) == 0);  // threshold at 128
  CHECK(samples[0].gt(0, 1) == 0);
  CHECK(samples[0].gt(0, 2) == 1);
  CHECK(samples[0].gt(0, 3) == 1);
  CHECK(samples[0].gt(1, 3) == 0);
  REQUIRE(samples[0].fov.has_value());
  CHECK((samples[0].fov->cast<int>().sum()) == 8);

  const auto luma = load_dataset(root, ChannelMode::luma);
  const double expect = (0.299 * 10 + 0.587 * 20 + 0.114 * 200) / 255.0;
  CHECK(luma[0].image.at(0, 0, 0, 0) == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("dataset loader errors name the offending stem") {
  const fs::path root = fresh_dir("ds_err");
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");

  SUBCASE("empty images directory is a warning, not an error") {
    CHECK(load_dataset(root).empty());
  }

  SUBCASE("missing label") {
    write_pnm(root / "images" / "07.pgm", gray_ramp(4, 4));
    try {
      load_dataset(root);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("07") != std::string::npos);
    }
  }

  SUBCASE("size mismatch") {
    write_pnm(root / "images" / "07.pgm", gray_ramp(4, 4));
    write_pnm(root / "labels" / "07.pgm", gray_ramp(5, 4));
    try {
      load_dataset(root);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("07") != std::string::npos);
    }
  }

  SUBCASE("missing subfolder") {
    fs::remove_all(root / "labels");
    CHECK_THROWS_AS(load_dataset(root), DataError);
  }
}

TEST_CASE("synthetic generator is deterministic and well-conditioned") {
  const auto a = synth_generate(11, 64, 2);
  const auto b = synth_generate(11, 64, 2);
  REQUIRE(a.size() == 2);
  CHECK((a[0].image.raw() == b[0].image.raw()).all());
  CHECK((a[0].gt == b[0].gt).all());
  CHECK(a[0].id == "synth_000");
  CHECK(a[1].id == "synth_001");
  CHECK_FALSE((a[0].gt == a[1].gt).all());

  const auto c = synth_generate(12, 64, 1);
  CHECK_FALSE((a[0].image.raw() == c[0].image.raw()).all());

  REQUIRE(a[0].fov.has_value());
  CHECK(a[0].fov->minCoeff() == 1);
  CHECK_THROWS_AS(synth_generate(0, 20, 1), std::invalid_argument);

  // Strokes are bright on a darker background.
  double vessel_sum = 0, bg_sum = 0;
  std::int64_t nv = 0, nb = 0;
  const auto p = a[0].image.plane(0, 0);
  for (Index y = 0; y < 64; ++y)
    for (Index x = 0; x < 64; ++x) {
      if (a[0].gt(y, x)) {
        vessel_sum += p(y, x);
        ++nv;
      } else {
        bg_sum += p(y, x);
        ++nb;
      }
    }
  REQUIRE(nv > 0);
  REQUIRE(nb > 0);
  CHECK(vessel_sum / double(nv) > bg_sum / double(nb) + 0.3);
}

TEST_CASE("synthetic vessel fraction and component size over 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto v = synth_generate(seed, 256, 1);
    const auto& gt = v[0].gt;
    const double frac = double(gt.cast<std::int64_t>().sum()) / double(gt.size());
    CHECK(frac >= 0.03);
    CHECK(frac <= 0.20);

    const auto comp = label_components(gt, 4);
    std::vector<std::int64_t> sizes(std::size_t(comp.count) + 1, 0);
    for (Index y = 0; y < gt.rows(); ++y)
      for (Index x = 0; x < gt.cols(); ++x)
        if (gt(y, x)) sizes[std::size_t(comp.labels(y, x))]++;
    CHECK(*std::max_element(sizes.begin(), sizes.end()) >= 100);
  }
}

TEST_CASE("patches are 48x48, centered, and zero-padded out of bounds") {
  const auto samples = synth_generate(3, 64, 1);
  const PatchSet set = extract_patches(samples[0], 200, 9);
  REQUIRE(set.items.size() == 200);
  CHECK(set.source_ids == std::vector<std::string>{"synth_000"});

  const auto ip = samples[0].image.plane(0, 0);
  for (const Patch& p : set.items) {
    CHECK(p.image.height() == 48);
    CHECK(p.image.width() == 48);
    CHECK(p.cy >= 0);
    CHECK(p.cy < 64);
    const auto pp = p.image.plane(0, 0);
    for (Index i = 0; i < 48; ++i)
      for (Index j = 0; j < 48; ++j) {
        const Index sy = p.cy + i - 23, sx = p.cx + j - 23;
        if (sy >= 0 && sy < 64 && sx >= 0 && sx < 64) {
          CHECK(pp(i, j) == ip(sy, sx));
          CHECK(p.label(i, j) == samples[0].gt(sy, sx));
        } else {
          CHECK(pp(i, j) == 0.0f);
          CHECK(p.label(i, j) == 0);
        }
      }
  }

  const PatchSet again = extract_patches(samples[0], 200, 9);
  for (std::size_t i = 0; i < set.items.size(); ++i) {
    CHECK(set.items[i].cy == again.items[i].cy);
    CHECK((set.items[i].image.raw() == again.items[i].image.raw()).all());
  }
}

TEST_CASE("corner-centered patch pads exactly 1679 pixels") {
  // 48*48 - 25*25 in-bounds pixels = 23*48 + 48*23 - 23*23.
  CHECK(48 * 48 - 25 * 25 == 1679);

  const FundusSample ones = flat_sample(64, 64);
  const PatchSet set = extract_patches(ones, 20000, 3);
  bool found = false;
  for (const Patch& p : set.items) {
    if (p.cy != 0 || p.cx != 0) continue;
    found = true;
    const std::int64_t zeros = (p.image.raw() == 0.0f).count();
    CHECK(zeros == 1679);
    CHECK((p.label == 0).count() == 1679);
    break;
  }
  REQUIRE(found);  // 20k draws over a 64x64 grid hit the corner for this seed
}

TEST_CASE("block split hits the requested validation share and stays disjoint") {
  PatchSet all;
  const auto samples = synth_generate(21, 128, 6);
  for (std::size_t i = 0; i < samples.size(); ++i)
    append_patches(all, extract_patches(samples[i], 400, 100 + i));
  REQUIRE(all.items.size() == 2400);
  CHECK(all.source_ids.size() == 6);

  const auto [train_set, val_set] = block_split(all, 0.3, 64, 7);
  const std::size_t n = all.items.size();
  CHECK(train_set.items.size() + val_set.items.size() == n);
  const double share = double(val_set.items.size()) / double(n);
  CHECK(share >= 0.3);          // stops only once the target is reached
  CHECK(share <= 0.3 + 0.06);   // overshoot bounded by one block's patches

  std::set<std::tuple<int, Index, Index>> tc, vc;
  for (const Patch& p : train_set.items) tc.insert({p.src, p.cy, p.cx});
  for (const Patch& p : val_set.items) vc.insert({p.src, p.cy, p.cx});
  for (const auto& c : vc) CHECK(tc.count(c) == 0);

  CHECK_THROWS_AS(block_split(all, 1.5, 64, 0), std::invalid_argument);
}

TEST_CASE("overlap-tile inference preserves dims and matches direct patches") {
  SPNetConfig cfg;
  cfg.base_channels = 2;
  const auto params = init_params<float>(cfg, 42);

  const auto samples = synth_generate(5, 96, 1);
  const Tensor<float>& image = samples[0].image;
  const Tensor<float> map = overlap_tile_predict(params, image);
  CHECK(map.height() == 96);
  CHECK(map.width() == 96);
  CHECK((map.raw() > 0.0f).all());
  CHECK((map.raw() < 1.0f).all());

  // Interior tile (1,1): its 48x48 context window lies fully inside the
  // image, so running the network on that window directly must reproduce the
  // stitched core bitwise.
  Tensor<float> win(1, 1, 48, 48);
  const auto ip = image.plane(0, 0);
  auto wp = win.plane(0, 0);
  for (Index i = 0; i < 48; ++i)
    for (Index j = 0; j < 48; ++j) wp(i, j) = ip(24 + i, 24 + j);
  const auto direct = forward(params, win);
  for (Index i = 0; i < 32; ++i)
    for (Index j = 0; j < 32; ++j)
      CHECK(map.at(0, 0, 32 + i, 32 + j) == direct[0].at(0, 0, 8 + i, 8 + j));
}

TEST_CASE("overlap-tile on a constant-zero image is seam-free") {
  // With freshly initialized parameters every bias is zero and the
  // normalization is the identity, so a zero image keeps all activations at
  // exactly zero and the head emits sigmoid(0) = 0.5 at every pixel.  Any
  // stitching seam would break the constancy.
  SPNetConfig cfg;
  cfg.base_channels = 2;
  const auto params = init_params<float>(cfg, 3);
  const Tensor<float> map = overlap_tile_predict(params, Tensor<float>(1, 1, 96, 96));
  CHECK((map.raw() == 0.5f).all());
}

TEST_CASE("overlap-tile output dims for non-multiple-of-32 images") {
  SPNetConfig cfg;
  cfg.base_channels = 1;
  const auto params = init_params<float>(cfg, 1);
  for (const auto [h, w] : {std::pair<Index, Index>{72, 40}, {40, 72}}) {
    Tensor<float> img(1, 1, h, w);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) img.at(0, 0, y, x) = float((y * w + x) % 97) / 97.0f;
    const Tensor<float> map = overlap_tile_predict(params, img);
    CHECK(map.height() == h);
    CHECK(map.width() == w);
  }
}

TEST_CASE("append_patches remaps source indices") {
  const auto samples = synth_generate(2, 64, 2);
  PatchSet all;
  append_patches(all, extract_patches(samples[0], 3, 1));
  append_patches(all, extract_patches(samples[1], 3, 2));
  CHECK(all.source_ids.size() == 2);
  CHECK(all.items[0].src == 0);
  CHECK(all.items[3].src == 1);
  CHECK(all.source_ids[1] == "synth_001");
}
