#include "spnet/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "spnet/errors.hpp"

namespace spnet {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& why) {
  throw DataError(path.string() + ": " + why);
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& is) {
  std::string tok;
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (std::isspace(c)) {
      c = is.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c) && c != '#') {
    tok.push_back(char(c));
    c = is.get();
  }
  if (c != EOF) is.unget();  // leave the terminator for the raster-separator check
  return tok;
}

int parse_int(std::istream& is, const std::filesystem::path& path, const char* what) {
  const std::string tok = next_token(is);
  if (tok.empty()) fail(path, std::string("missing ") + what);
  for (char ch : tok)
    if (!std::isdigit(static_cast<unsigned char>(ch)))
      fail(path, std::string("malformed ") + what + " '" + tok + "'");
  return std::stoi(tok);
}

}  // namespace

PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open");

  const std::string magic = next_token(is);
  PnmImage img;
  if (magic == "P5")
    img.channels = 1;
  else if (magic == "P6")
    img.channels = 3;
  else
    fail(path, "unsupported format '" + magic + "' (binary P5/P6 required)");

  img.width = parse_int(is, path, "width");
  img.height = parse_int(is, path, "height");
  img.maxval = parse_int(is, path, "maxval");
  if (img.width < 1 || img.height < 1) fail(path, "non-positive dimensions");
  if (img.maxval < 1 || img.maxval > 65535) fail(path, "maxval out of range");
  // Exactly one whitespace byte separates the header from the raster.
  const int sep = is.get();
  if (sep == EOF || !std::isspace(sep)) fail(path, "missing raster separator");

  const std::size_t count =
      std::size_t(img.width) * std::size_t(img.height) * std::size_t(img.channels);
  const bool wide = img.maxval > 255;
  std::vector<char> bytes(count * (wide ? 2 : 1));
  is.read(bytes.data(), std::streamsize(bytes.size()));
  if (std::size_t(is.gcount()) != bytes.size()) fail(path, "truncated raster");

  img.pixels.resize(count);
  if (wide) {
    for (std::size_t i = 0; i < count; ++i)
      img.pixels[i] = std::uint16_t((std::uint8_t(bytes[2 * i]) << 8) |
                                    std::uint8_t(bytes[2 * i + 1]));
  } else {
    for (std::size_t i = 0; i < count; ++i) img.pixels[i] = std::uint8_t(bytes[i]);
  }
  for (std::uint16_t v : img.pixels)
    if (v > img.maxval) fail(path, "sample exceeds maxval");
  return img;
}

void write_pnm(const std::filesystem::path& path, const PnmImage& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_pnm: channels must be 1 or 3");
  if (img.width < 1 || img.height < 1 || img.maxval < 1 || img.maxval > 65535)
    throw std::invalid_argument("write_pnm: bad geometry or maxval");
  const std::size_t count =
      std::size_t(img.width) * std::size_t(img.height) * std::size_t(img.channels);
  if (img.pixels.size() != count) throw std::invalid_argument("write_pnm: pixel count mismatch");

  std::ofstream os(path, std::ios::binary);
  if (!os) fail(path, "cannot open for writing");
  os << (img.channels == 1 ? "P5" : "P6") << "\n"
     << img.width << " " << img.height << "\n"
     << img.maxval << "\n";
  if (img.maxval > 255) {
    for (std::uint16_t v : img.pixels) {
      const char two[2] = {char(v >> 8), char(v & 0xff)};
      os.write(two, 2);
    }
  } else {
    for (std::uint16_t v : img.pixels) {
      const char one = char(v & 0xff);
      os.write(&one, 1);
    }
  }
  if (!os) fail(path, "write failed");
}

Tensor<float> to_gray01(const PnmImage& img, ChannelMode mode) {
  Tensor<float> out(1, 1, img.height, img.width);
  auto p = out.plane(0, 0);
  const float inv = 1.0f / float(img.maxval);
  for (Index y = 0; y < img.height; ++y)
    for (Index x = 0; x < img.width; ++x) {
      const std::size_t base = (std::size_t(y) * img.width + std::size_t(x)) * img.channels;
      float v;
      if (img.channels == 1) {
        v = float(img.pixels[base]);
      } else if (mode == ChannelMode::green) {
        v = float(img.pixels[base + 1]);
      } else {
        v = 0.299f * float(img.pixels[base]) + 0.587f * float(img.pixels[base + 1]) +
            0.114f * float(img.pixels[base + 2]);
      }
      p(y, x) = v * inv;
    }
  return out;
}

BinaryMask threshold_mask(const PnmImage& img, int thresh) {
  BinaryMask m(img.height, img.width);
  for (Index y = 0; y < img.height; ++y)
    for (Index x = 0; x < img.width; ++x) {
      const std::size_t base = (std::size_t(y) * img.width + std::size_t(x)) * img.channels;
      const std::uint16_t v = img.channels == 3 ? img.pixels[base + 1] : img.pixels[base];
      m(y, x) = v >= thresh ? 1 : 0;
    }
  return m;
}

PnmImage mask_to_pgm(const BinaryMask& m) {
  PnmImage img;
  img.width = int(m.cols());
  img.height = int(m.rows());
  img.channels = 1;
  img.maxval = 255;
  img.pixels.resize(std::size_t(img.width) * img.height);
  for (Index y = 0; y < m.rows(); ++y)
    for (Index x = 0; x < m.cols(); ++x)
      img.pixels[std::size_t(y) * img.width + std::size_t(x)] = m(y, x) ? 255 : 0;
  return img;
}

PnmImage prob_to_pgm16(const Tensor<float>& prob) {
  if (prob.batch() != 1 || prob.channels() != 1)
    throw std::invalid_argument("prob_to_pgm16: expected a (1,1,h,w) map");
  PnmImage img;
  img.width = int(prob.width());
  img.height = int(prob.height());
  img.channels = 1;
  img.maxval = 65535;
  img.pixels.resize(std::size_t(img.width) * img.height);
  const auto p = prob.plane(0, 0);
  for (Index y = 0; y < prob.height(); ++y)
    for (Index x = 0; x < prob.width(); ++x) {
      const float v = p(y, x);
      if (!(v >= 0.0f && v <= 1.0f))
        throw std::invalid_argument("prob_to_pgm16: probability out of [0,1]");
      img.pixels[std::size_t(y) * img.width + std::size_t(x)] =
          std::uint16_t(std::lround(double(v) * 65535.0));
    }
  return img;
}

Tensor<float> pgm16_to_prob(const PnmImage& img) {
  if (img.channels != 1) throw std::invalid_argument("pgm16_to_prob: grayscale input required");
  Tensor<float> out(1, 1, img.height, img.width);
  auto p = out.plane(0, 0);
  const float inv = 1.0f / float(img.maxval);
  for (Index y = 0; y < img.height; ++y)
    for (Index x = 0; x < img.width; ++x)
      p(y, x) = float(img.pixels[std::size_t(y) * img.width + std::size_t(x)]) * inv;
  return out;
}

}  // namespace spnet
