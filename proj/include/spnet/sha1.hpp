#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "spnet/errors.hpp"

namespace spnet {

/// Streaming SHA-1, used for content-addressed run manifests.
class Sha1 {
 public:
  void update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    total_ += len;
    while (len > 0) {
      const std::size_t take = std::min(len, std::size_t(64) - fill_);
      std::memcpy(buf_.data() + fill_, p, take);
      fill_ += take;
      p += take;
      len -= take;
      if (fill_ == 64) {
        block();
        fill_ = 0;
      }
    }
  }

  /// Finalizes and returns the 40-char lowercase hex digest.
  std::string hex_digest() {
    const std::uint64_t bits = total_ * 8;
    const unsigned char one = 0x80, zero = 0;
    update(&one, 1);
    while (fill_ != 56) update(&zero, 1);
    unsigned char len[8];
    for (int i = 0; i < 8; ++i) len[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update(len, 8);

    std::string out(40, '0');
    static const char* hexc = "0123456789abcdef";
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 4; ++j) {
        const unsigned byte = (h_[i] >> (24 - 8 * j)) & 0xff;
        out[std::size_t(8 * i + 2 * j)] = hexc[byte >> 4];
        out[std::size_t(8 * i + 2 * j + 1)] = hexc[byte & 0xf];
      }
    return out;
  }

 private:
  static std::uint32_t rol(std::uint32_t v, int s) { return (v << s) | (v >> (32 - s)); }

  void block() {
    std::uint32_t w[80];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(buf_[std::size_t(4 * i)]) << 24) |
             (std::uint32_t(buf_[std::size_t(4 * i + 1)]) << 16) |
             (std::uint32_t(buf_[std::size_t(4 * i + 2)]) << 8) |
             std::uint32_t(buf_[std::size_t(4 * i + 3)]);
    for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);

    std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
    for (int i = 0; i < 80; ++i) {
      std::uint32_t f, k;
      if (i < 20) {
        f = (b & c) | (~b & d);
        k = 0x5a827999u;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ed9eba1u;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8f1bbcdcu;
      } else {
        f = b ^ c ^ d;
        k = 0xca62c1d6u;
      }
      const std::uint32_t tmp = rol(a, 5) + f + e + k + w[i];
      e = d;
      d = c;
      c = rol(b, 30);
      b = a;
      a = tmp;
    }
    h_[0] += a;
    h_[1] += b;
    h_[2] += c;
    h_[3] += d;
    h_[4] += e;
  }

  std::array<std::uint32_t, 5> h_{0x67452301u, 0xefcdab89u, 0x98badcfeu, 0x10325476u,
                                  0xc3d2e1f0u};
  std::array<unsigned char, 64> buf_{};
  std::size_t fill_ = 0;
  std::uint64_t total_ = 0;
};

inline std::string sha1_hex(std::string_view bytes) {
  Sha1 h;
  h.update(bytes.data(), bytes.size());
  return h.hex_digest();
}

/// Content hash in git's blob format: sha1("blob <len>\0" + content), so the
/// value matches `git hash-object` on the same file.
inline std::string git_blob_sha1(std::string_view content) {
  Sha1 h;
  const std::string header = "blob " + std::to_string(content.size());
  h.update(header.data(), header.size() + 1);  // include the trailing NUL
  h.update(content.data(), content.size());
  return h.hex_digest();
}

inline std::string git_blob_sha1_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open for hashing");
  std::stringstream ss;
  ss << in.rdbuf();
  return git_blob_sha1(ss.str());
}

}  // namespace spnet
