#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rcl/graph.hpp"

namespace rcl {

// Parameter container layout, all integers little-endian:
//
//   "RCLP"            4 bytes magic
//   version           u32 (kParamVersion)
//   entry count       u32
//   entries, each:    u32 name length, name bytes (UTF-8, no terminator),
//                     u8 dtype tag (1 = f64), u32 rank, rank x u64 extents,
//                     u64 byte offset into the payload
//   payload           little-endian f64 values, entries back to back in
//                     table order
//
// Entries are written in name order, so equal maps encode to equal bytes.
inline constexpr std::uint32_t kParamVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 1;

std::vector<std::uint8_t> encode_params(const TensorMap& params);
TensorMap decode_params(const std::vector<std::uint8_t>& bytes);

void save_params(const TensorMap& params, const std::filesystem::path& path);
TensorMap load_params(const std::filesystem::path& path);

}  // namespace rcl
