#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace velvet::harness {

/// Writes a rows x cols matrix as an 8-bit grayscale PNG, each value drawn
/// as a cell x cell block. Values are scaled by the matrix maximum.
void write_heatmap_png(const std::filesystem::path& path, const std::vector<double>& values, std::int64_t rows,
                       std::int64_t cols, std::int64_t cell = 8);

}  // namespace velvet::harness
