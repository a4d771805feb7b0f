#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "compbind/numkit/tensor.hpp"

namespace compbind::io {

// 8-bit RGB PNG. `rgb` is row-major HWC with values in [0, 1]; each channel is
// stored as round(255 * clamp(v)).
void write_png(const std::filesystem::path& path, int width, int height,
               const std::vector<float>& rgb);

// Nearest-neighbour upscale by an integer factor (for small previews).
std::vector<float> upscale(const std::vector<float>& rgb, int width, int height, int factor);

// Scalar matrix -> white-to-red heatmap, each cell `cell` pixels square,
// normalised by the matrix maximum (all-zero matrices render white).
void write_heatmap_png(const std::filesystem::path& path, const MatD& values, int cell = 16);

// Minimal raster charts for experiment summaries.
void write_bar_chart_png(const std::filesystem::path& path,
                         const std::vector<std::vector<double>>& series, int width = 320,
                         int height = 200);
void write_line_chart_png(const std::filesystem::path& path,
                          const std::vector<std::vector<double>>& series, int width = 320,
                          int height = 200);

}  // namespace compbind::io
