// SPDX-License-Identifier: Apache-2.0
#include "seaformer/stn_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "seaformer/errors.hpp"

namespace seaformer {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'N', 'S'};
// Guards against absurd headers allocating gigabytes before the size check.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_stn(const Tensor<float>& t) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + 4 * t.numel());
  for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor<float> decode_stn(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw FormatError("truncated magic", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad magic, expected STNS", 0);
  if (bytes.size() < 8) throw FormatError("truncated rank", bytes.size());
  const std::uint32_t rank = get_u32(bytes, 4);
  if (rank == 0) throw FormatError("rank must be >= 1", 4);
  std::size_t at = 8;
  Shape shape;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    if (bytes.size() < at + 4) throw FormatError("truncated dims", bytes.size());
    const std::uint32_t d = get_u32(bytes, at);
    if (d == 0) throw FormatError("dim must be >= 1", at);
    count *= d;
    if (count > kMaxElements) throw FormatError("element count too large", at);
    shape.push_back(d);
    at += 4;
  }
  const std::uint64_t need = at + 4 * count;
  if (bytes.size() < need) {
    // Offset of the first missing whole value.
    const std::uint64_t have = (bytes.size() - at) / 4;
    throw FormatError("truncated data: expected " + std::to_string(count) + " values, found " +
                          std::to_string(have),
                      at + 4 * have);
  }
  if (bytes.size() > need) throw FormatError("trailing bytes after data", need);
  std::vector<float> values(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    values[i] = std::bit_cast<float>(get_u32(bytes, at + 4 * i));
  }
  return Tensor<float>(std::move(shape), std::move(values));
}

void write_stn(const std::filesystem::path& path, const Tensor<float>& t) {
  const auto bytes = encode_stn(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Tensor<float> read_stn(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_stn(bytes);
}

std::uint64_t checksum(const Tensor<float>& t) {
  std::uint64_t h = 1469598103934665603ULL;
  for (float v : t.values()) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xFFu;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace seaformer
