#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "spnet/tensor.hpp"

namespace spnet {

/// Decoded binary PNM raster (P5 grayscale or P6 color).  Samples are widened
/// to 16 bits on read; `maxval` carries the true range.
struct PnmImage {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 for P5, 3 for P6
  int maxval = 255;
  std::vector<std::uint16_t> pixels;  // row-major, channels interleaved
};

/// Reads a binary P5/P6 file.  Header comments are honored; samples above 255
/// are two bytes, most significant first.  Throws DataError on malformed or
/// truncated input.
PnmImage read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const PnmImage& img);

enum class ChannelMode { green, luma };

/// Raster as a (1,1,h,w) tensor scaled to [0,1].  Color input is reduced to a
/// single plane: the green channel by default, or the Rec. 601 luma mix.
Tensor<float> to_gray01(const PnmImage& img, ChannelMode mode = ChannelMode::green);

/// Binary mask from a raster: sample >= thresh maps to 1.  Color input uses
/// the green channel.
BinaryMask threshold_mask(const PnmImage& img, int thresh = 128);

/// Mask as an 8-bit PGM with {0, 255} coding.
PnmImage mask_to_pgm(const BinaryMask& m);

/// Probability map as a 16-bit PGM: maxval 65535, sample = round(p * 65535).
PnmImage prob_to_pgm16(const Tensor<float>& prob);

/// Inverse of prob_to_pgm16 up to quantization: p = sample / maxval.
Tensor<float> pgm16_to_prob(const PnmImage& img);

}  // namespace spnet
