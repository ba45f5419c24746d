#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spnet/image_io.hpp"
#include "spnet/model.hpp"
#include "spnet/tensor.hpp"

namespace spnet {

/// One fundus-style sample: grayscale image in [0,1], binary vessel ground
/// truth, optional field-of-view mask, and the file stem it came from.
struct FundusSample {
  Tensor<float> image;  // (1,1,h,w)
  BinaryMask gt;
  std::optional<BinaryMask> fov;
  std::string id;
};

/// Fixed training patch size used throughout.
inline constexpr Index kPatchSize = 48;

struct Patch {
  Tensor<float> image;  // (1,1,48,48)
  BinaryMask label;     // 48x48
  Index cy = 0, cx = 0;  // center in source-image coordinates
  int src = 0;           // index into PatchSet::source_ids
};

struct PatchSet {
  std::vector<Patch> items;
  std::vector<std::string> source_ids;
  std::vector<std::array<Index, 2>> source_dims;  // (h, w) per source
};

/// Moves every patch of `more` into `dst`, remapping source indices.
void append_patches(PatchSet& dst, PatchSet&& more);

/// Loads a DRIVE-style directory: `images/` and `labels/` (and optionally
/// `masks/`) with files matched by stem, binary PGM/PPM.  Images are reduced
/// to one channel and scaled to [0,1]; labels are thresholded at 128.  An
/// empty images directory yields an empty list with a warning on stderr;
/// unpaired stems or per-sample size mismatches are hard errors.
std::vector<FundusSample> load_dataset(const std::filesystem::path& root,
                                       ChannelMode mode = ChannelMode::green);

/// Deterministic procedural vessel-like samples: branching random-walk
/// strokes of width 1..6 px, bright on a darker noisy background; gt is the
/// stroke support and fov is all ones.  `size` must be divisible by 16.
std::vector<FundusSample> synth_generate(std::uint64_t seed, int size, int count);

/// `count` 48x48 patches with centers drawn uniformly over the full image;
/// regions outside the image are zero-padded in both patch and label.
PatchSet extract_patches(const FundusSample& sample, int count, std::uint64_t seed);

/// Block-based split: random block_size^2 squares in random source images are
/// assigned to validation (every patch centered inside goes there) until the
/// validation share reaches val_fraction.
std::pair<PatchSet, PatchSet> block_split(const PatchSet& patches, double val_fraction = 0.3,
                                          Index block_size = 96, std::uint64_t seed = 0);

/// Full-image inference: disjoint 32x32 core tiles, each predicted from its
/// 48x48 context window (8 px of context on every side, reflected past the
/// image border), stitched and cropped back to the input size.
Tensor<float> overlap_tile_predict(const ParameterStore<float>& params,
                                   const Tensor<float>& image);

}  // namespace spnet
