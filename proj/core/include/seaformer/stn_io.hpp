// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "seaformer/tensor.hpp"

// ".stn" tensor files: the 4 bytes "STNS", a little-endian uint32 rank, rank
// little-endian uint32 dims, then little-endian float32 values in row-major
// order. Nothing may follow the values.
namespace seaformer {

std::vector<std::uint8_t> encode_stn(const Tensor<float>& t);

/// Throws FormatError carrying the byte offset where decoding failed.
Tensor<float> decode_stn(const std::vector<std::uint8_t>& bytes);

void write_stn(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_stn(const std::filesystem::path& path);

/// FNV-1a over the float32 encoding of the values; a stable fingerprint for
/// determinism checks.
std::uint64_t checksum(const Tensor<float>& t);

}  // namespace seaformer
