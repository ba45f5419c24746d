#include <cstring>
#include <fstream>
#include <vector>

#include "spnet/errors.hpp"
#include "spnet/model.hpp"

namespace spnet {
namespace {

constexpr char kMagic[4] = {'S', 'P', 'N', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), std::streamsize(n));
}

void put_u8(std::ostream& os, std::uint8_t v) { put_bytes(os, &v, 1); }

void put_u16(std::ostream& os, std::uint16_t v) {
  const std::uint8_t b[2] = {std::uint8_t(v & 0xff), std::uint8_t(v >> 8)};
  put_bytes(os, b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::uint8_t b[4] = {std::uint8_t(v & 0xff), std::uint8_t((v >> 8) & 0xff),
                             std::uint8_t((v >> 16) & 0xff), std::uint8_t(v >> 24)};
  put_bytes(os, b, 4);
}

void get_bytes(std::istream& is, void* data, std::size_t n, const char* what) {
  is.read(static_cast<char*>(data), std::streamsize(n));
  if (std::size_t(is.gcount()) != n)
    throw DataError(std::string("checkpoint: truncated while reading ") + what);
}

std::uint8_t get_u8(std::istream& is, const char* what) {
  std::uint8_t v;
  get_bytes(is, &v, 1, what);
  return v;
}

std::uint16_t get_u16(std::istream& is, const char* what) {
  std::uint8_t b[2];
  get_bytes(is, b, 2, what);
  return std::uint16_t(b[0] | (std::uint16_t(b[1]) << 8));
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  std::uint8_t b[4];
  get_bytes(is, b, 4, what);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterStore<float>& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open " + path.string() + " for writing");
  const SPNetConfig& cfg = store.config();

  put_bytes(os, kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, std::uint32_t(cfg.depth));
  put_u32(os, std::uint32_t(cfg.base_channels));
  put_u32(os, std::uint32_t(cfg.in_channels));
  put_u32(os, std::uint32_t(cfg.pyramid_levels));
  put_u8(os, cfg.share_decoder ? 1 : 0);
  put_u8(os, cfg.side_output == SideOutputMode::conv1x1 ? 1 : 0);
  put_u8(os, cfg.use_batchnorm ? 1 : 0);
  put_u32(os, std::uint32_t(store.size()));

  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& sp = store.spec(i);
    put_u16(os, std::uint16_t(sp.name.size()));
    put_bytes(os, sp.name.data(), sp.name.size());
    put_u8(os, std::uint8_t(sp.file_dims.size()));
    for (auto d : sp.file_dims) put_u32(os, d);
  }
  std::vector<std::uint8_t> buf;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& raw = store.value(i).raw();
    buf.resize(std::size_t(raw.size()) * 4);
    for (Index j = 0; j < raw.size(); ++j) {
      std::uint32_t bits;
      const float f = raw[j];
      std::memcpy(&bits, &f, 4);
      buf[std::size_t(j) * 4 + 0] = std::uint8_t(bits & 0xff);
      buf[std::size_t(j) * 4 + 1] = std::uint8_t((bits >> 8) & 0xff);
      buf[std::size_t(j) * 4 + 2] = std::uint8_t((bits >> 16) & 0xff);
      buf[std::size_t(j) * 4 + 3] = std::uint8_t(bits >> 24);
    }
    put_bytes(os, buf.data(), buf.size());
  }
  if (!os) throw DataError("checkpoint: write to " + path.string() + " failed");
}

ParameterStore<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path.string());

  char magic[4];
  get_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("checkpoint: bad magic in " + path.string());
  const std::uint32_t version = get_u32(is, "version");
  if (version != kVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));

  SPNetConfig cfg;
  cfg.depth = int(get_u32(is, "depth"));
  cfg.base_channels = int(get_u32(is, "base_channels"));
  cfg.in_channels = int(get_u32(is, "in_channels"));
  cfg.pyramid_levels = int(get_u32(is, "pyramid_levels"));
  cfg.share_decoder = get_u8(is, "share flag") != 0;
  const std::uint8_t side = get_u8(is, "side mode");
  if (side > 1) throw DataError("checkpoint: bad side output mode");
  cfg.side_output = side ? SideOutputMode::conv1x1 : SideOutputMode::sdm;
  cfg.use_batchnorm = get_u8(is, "batchnorm flag") != 0;
  try {
    validate_config(cfg);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint: invalid configuration: ") + e.what());
  }

  ParameterStore<float> store(cfg);
  const std::uint32_t count = get_u32(is, "entry count");
  if (count != store.size())
    throw DataError("checkpoint: expected " + std::to_string(store.size()) + " entries, found " +
                    std::to_string(count));

  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& sp = store.spec(i);
    const std::uint16_t name_len = get_u16(is, "entry name length");
    std::string name(name_len, '\0');
    get_bytes(is, name.data(), name_len, "entry name");
    if (name != sp.name)
      throw DataError("checkpoint: entry " + std::to_string(i) + " is '" + name +
                      "', expected '" + sp.name + "'");
    const std::uint8_t ndim = get_u8(is, "entry rank");
    if (ndim != sp.file_dims.size()) throw DataError("checkpoint: wrong rank for " + name);
    for (std::size_t d = 0; d < sp.file_dims.size(); ++d)
      if (get_u32(is, "entry dims") != sp.file_dims[d])
        throw DataError("checkpoint: wrong shape for " + name);
  }
  std::vector<std::uint8_t> buf;
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& raw = store.value(i).raw();
    buf.resize(std::size_t(raw.size()) * 4);
    get_bytes(is, buf.data(), buf.size(), store.spec(i).name.c_str());
    for (Index j = 0; j < raw.size(); ++j) {
      const std::uint32_t bits = std::uint32_t(buf[std::size_t(j) * 4 + 0]) |
                                 (std::uint32_t(buf[std::size_t(j) * 4 + 1]) << 8) |
                                 (std::uint32_t(buf[std::size_t(j) * 4 + 2]) << 16) |
                                 (std::uint32_t(buf[std::size_t(j) * 4 + 3]) << 24);
      float f;
      std::memcpy(&f, &bits, 4);
      raw[j] = f;
    }
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw DataError("checkpoint: trailing bytes in " + path.string());
  return store;
}

}  // namespace spnet
