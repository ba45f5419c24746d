#include "spnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <iostream>

#include "spnet/errors.hpp"
#include "spnet/rng.hpp"

namespace spnet {

namespace fs = std::filesystem;

void append_patches(PatchSet& dst, PatchSet&& more) {
  const int base = int(dst.source_ids.size());
  dst.source_ids.insert(dst.source_ids.end(), more.source_ids.begin(), more.source_ids.end());
  dst.source_dims.insert(dst.source_dims.end(), more.source_dims.begin(),
                         more.source_dims.end());
  for (Patch& p : more.items) {
    p.src += base;
    dst.items.push_back(std::move(p));
  }
}

namespace {

std::optional<fs::path> find_raster(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".pgm", ".ppm"}) {
    fs::path p = dir / (stem + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

}  // namespace

std::vector<FundusSample> load_dataset(const fs::path& root, ChannelMode mode) {
  const fs::path idir = root / "images", ldir = root / "labels", mdir = root / "masks";
  if (!fs::is_directory(idir)) throw DataError(idir.string() + ": not a directory");
  if (!fs::is_directory(ldir)) throw DataError(ldir.string() + ": not a directory");
  const bool have_masks = fs::is_directory(mdir);

  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(idir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") stems.push_back(e.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  stems.erase(std::unique(stems.begin(), stems.end()), stems.end());
  if (stems.empty()) {
    std::cerr << "warning: no PGM/PPM images under " << idir.string() << "\n";
    return {};
  }

  std::vector<FundusSample> out;
  out.reserve(stems.size());
  for (const std::string& stem : stems) {
    FundusSample s;
    s.id = stem;
    s.image = to_gray01(read_pnm(*find_raster(idir, stem)), mode);

    const auto lpath = find_raster(ldir, stem);
    if (!lpath) throw DataError("no label image for stem '" + stem + "'");
    s.gt = threshold_mask(read_pnm(*lpath));
    if (s.gt.rows() != s.image.height() || s.gt.cols() != s.image.width())
      throw DataError("image/label size mismatch for stem '" + stem + "'");

    if (have_masks) {
      const auto mpath = find_raster(mdir, stem);
      if (!mpath) throw DataError("no fov mask for stem '" + stem + "'");
      s.fov = threshold_mask(read_pnm(*mpath));
      if (s.fov->rows() != s.image.height() || s.fov->cols() != s.image.width())
        throw DataError("image/mask size mismatch for stem '" + stem + "'");
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

void paint_disk(BinaryMask& gt, double cy, double cx, int width) {
  const double rad = width * 0.5;
  const Index y0 = Index(std::max(0.0, std::ceil(cy - rad)));
  const Index y1 = Index(std::min(double(gt.rows() - 1), std::floor(cy + rad)));
  const Index x0 = Index(std::max(0.0, std::ceil(cx - rad)));
  const Index x1 = Index(std::min(double(gt.cols() - 1), std::floor(cx + rad)));
  for (Index y = y0; y <= y1; ++y)
    for (Index x = x0; x <= x1; ++x) {
      const double dy = double(y) - cy, dx = double(x) - cx;
      if (dy * dy + dx * dx <= rad * rad) gt(y, x) = 1;
    }
}

struct Walker {
  double y, x, angle;
  int width;
  int steps_left;
};

}  // namespace

std::vector<FundusSample> synth_generate(std::uint64_t seed, int size, int count) {
  if (size < 16 || size % 16 != 0)
    throw std::invalid_argument("synth_generate: size must be a positive multiple of 16");
  if (count < 0) throw std::invalid_argument("synth_generate: negative count");
  constexpr double kPi = 3.14159265358979323846;

  std::vector<FundusSample> out;
  out.reserve(std::size_t(count));
  for (int idx = 0; idx < count; ++idx) {
    Rng r(seed, "synth", std::uint64_t(idx));
    const Index n = size;

    Eigen::ArrayXXf nf(n, n);  // one shared noise field for background and strokes
    for (Index y = 0; y < n; ++y)
      for (Index x = 0; x < n; ++x) nf(y, x) = float(r.uniform());

    BinaryMask gt = BinaryMask::Zero(n, n);
    const int trees = 2 + int(r.below(2));
    const int per_tree = std::max(60, int(0.012 * double(size) * double(size)) / trees);

    std::deque<Walker> queue;
    for (int t = 0; t < trees; ++t) {
      Walker w;
      w.y = double(size) * (0.15 + 0.7 * r.uniform());
      w.x = double(size) * (0.15 + 0.7 * r.uniform());
      w.angle = r.uniform(0.0, 2.0 * kPi);
      w.width = 3 + int(r.below(4));  // main strokes 3..6 px wide
      w.steps_left = per_tree;
      queue.push_back(w);
    }

    int spawned = trees;
    while (!queue.empty()) {
      Walker w = queue.front();
      queue.pop_front();
      while (w.steps_left-- > 0) {
        paint_disk(gt, w.y, w.x, w.width);
        double ny = w.y + std::sin(w.angle);
        double nx = w.x + std::cos(w.angle);
        if (ny < 1.0 || ny > double(size) - 2.0) {  // bounce off the border
          w.angle = -w.angle;
          ny = w.y + std::sin(w.angle);
        }
        if (nx < 1.0 || nx > double(size) - 2.0) {
          w.angle = kPi - w.angle;
          nx = w.x + std::cos(w.angle);
        }
        w.y = std::clamp(ny, 0.0, double(size) - 1.0);
        w.x = std::clamp(nx, 0.0, double(size) - 1.0);
        w.angle += r.normal(0.0, 0.15);
        if (w.width > 1 && spawned < 32 && r.uniform() < 0.012) {
          Walker b = w;
          b.width = w.width - 1;  // branches taper down to 1 px
          b.angle = w.angle + (r.uniform() < 0.5 ? 1.0 : -1.0) * r.uniform(0.5, 1.1);
          b.steps_left = 30 + int(r.below(50));
          queue.push_back(b);
          ++spawned;
        }
      }
    }

    FundusSample s;
    s.image = Tensor<float>(1, 1, n, n);
    auto p = s.image.plane(0, 0);
    for (Index y = 0; y < n; ++y)
      for (Index x = 0; x < n; ++x)
        p(y, x) = gt(y, x) ? 0.70f + 0.20f * nf(y, x) : 0.15f + 0.20f * nf(y, x);
    s.gt = std::move(gt);
    s.fov = BinaryMask::Constant(n, n, 1);
    char buf[32];
    std::snprintf(buf, sizeof buf, "synth_%03d", idx);
    s.id = buf;
    out.push_back(std::move(s));
  }
  return out;
}

PatchSet extract_patches(const FundusSample& sample, int count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("extract_patches: count must be >= 1");
  const Index h = sample.image.height(), w = sample.image.width();

  PatchSet set;
  set.source_ids = {sample.id};
  set.source_dims = {{h, w}};
  set.items.reserve(std::size_t(count));

  Rng r(seed, "patch-centers");
  const auto ip = sample.image.plane(0, 0);
  constexpr Index kCenter = kPatchSize / 2 - 1;  // patch (23,23) sits on the drawn center
  for (int k = 0; k < count; ++k) {
    Patch p;
    p.cy = Index(r.below(std::int64_t(h)));
    p.cx = Index(r.below(std::int64_t(w)));
    p.src = 0;
    p.image = Tensor<float>(1, 1, kPatchSize, kPatchSize);
    p.label = BinaryMask::Zero(kPatchSize, kPatchSize);
    auto pp = p.image.plane(0, 0);
    for (Index i = 0; i < kPatchSize; ++i) {
      const Index sy = p.cy + i - kCenter;
      if (sy < 0 || sy >= h) continue;
      for (Index j = 0; j < kPatchSize; ++j) {
        const Index sx = p.cx + j - kCenter;
        if (sx < 0 || sx >= w) continue;
        pp(i, j) = ip(sy, sx);
        p.label(i, j) = sample.gt(sy, sx);
      }
    }
    set.items.push_back(std::move(p));
  }
  return set;
}

std::pair<PatchSet, PatchSet> block_split(const PatchSet& patches, double val_fraction,
                                          Index block_size, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("block_split: val_fraction must be in (0,1)");
  if (block_size < 1) throw std::invalid_argument("block_split: block_size must be positive");

  PatchSet train, val;
  train.source_ids = val.source_ids = patches.source_ids;
  train.source_dims = val.source_dims = patches.source_dims;
  const std::size_t n = patches.items.size();
  if (n == 0) return {std::move(train), std::move(val)};

  Rng r(seed, "block-split");
  std::vector<char> to_val(n, 0);
  std::size_t val_count = 0;
  const double target = val_fraction * double(n);
  // Blocks that add no new patches keep the loop going; cap the draws so a
  // degenerate request cannot spin forever.
  for (int guard = 0; double(val_count) < target && guard < 200000; ++guard) {
    const int src = int(r.below(std::int64_t(patches.source_ids.size())));
    const auto [h, w] = patches.source_dims[std::size_t(src)];
    const Index y0 = Index(r.below(std::int64_t(std::max<Index>(1, h - block_size + 1))));
    const Index x0 = Index(r.below(std::int64_t(std::max<Index>(1, w - block_size + 1))));
    for (std::size_t i = 0; i < n; ++i) {
      const Patch& p = patches.items[i];
      if (to_val[i] || p.src != src) continue;
      if (p.cy >= y0 && p.cy < y0 + block_size && p.cx >= x0 && p.cx < x0 + block_size) {
        to_val[i] = 1;
        ++val_count;
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i)
    (to_val[i] ? val : train).items.push_back(patches.items[i]);
  return {std::move(train), std::move(val)};
}

namespace {

Index reflect_index(Index i, Index n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

}  // namespace

Tensor<float> overlap_tile_predict(const ParameterStore<float>& params,
                                   const Tensor<float>& image) {
  if (image.batch() != 1 || image.channels() != 1)
    throw std::invalid_argument("overlap_tile_predict: expected a (1,1,h,w) image");
  constexpr Index kCore = 32, kContext = 8, kWindow = kCore + 2 * kContext;
  const Index h = image.height(), w = image.width();
  const Index ty = (h + kCore - 1) / kCore, tx = (w + kCore - 1) / kCore;

  Tensor<float> out(1, 1, h, w);
  const auto ip = image.plane(0, 0);
  Tensor<float> win(1, 1, kWindow, kWindow);
  for (Index by = 0; by < ty; ++by)
    for (Index bx = 0; bx < tx; ++bx) {
      auto wp = win.plane(0, 0);
      for (Index i = 0; i < kWindow; ++i) {
        const Index sy = reflect_index(by * kCore - kContext + i, h);
        for (Index j = 0; j < kWindow; ++j)
          wp(i, j) = ip(sy, reflect_index(bx * kCore - kContext + j, w));
      }
      const auto maps = forward(params, win);
      const auto mp = maps[0].plane(0, 0);
      auto op = out.plane(0, 0);
      for (Index i = 0; i < kCore && by * kCore + i < h; ++i)
        for (Index j = 0; j < kCore && bx * kCore + j < w; ++j)
          op(by * kCore + i, bx * kCore + j) = mp(kContext + i, kContext + j);
    }
  return out;
}

}  // namespace spnet
