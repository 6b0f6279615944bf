#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "saldist/grid.hpp"

namespace saldist {

// Binary PGM (P5, one channel) and PPM (P6, RGB), maxval 255 only.
// Decoding maps byte v to v / 255; encoding maps x to round(x * 255) with
// halves rounded away from zero. Values outside [0, 1] are rejected.
Grid decode_netpbm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_netpbm(const Grid& image);

Grid read_image(const std::filesystem::path& path);
void write_image(const Grid& image, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace saldist
