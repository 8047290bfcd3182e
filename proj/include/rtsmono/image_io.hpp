#pragma once

#include <filesystem>

#include "rtsmono/tensor.hpp"

namespace rtsmono {

/// 8-bit PNG decoded to [3,H,W] floats value/255. Gray, palette, alpha and 16-bit inputs are
/// converted to 8-bit RGB first.
Tensor<float> read_png(const std::filesystem::path& path);
/// Writes [3,H,W] as RGB or [1,H,W] / [H,W] as grayscale; values are clamped to [0,1] and
/// rounded to the nearest 8-bit level.
void write_png(const std::filesystem::path& path, const Tensor<float>& image);

/// Single-channel PFM ("Pf"), little-endian, rows stored bottom to top. Returns [H,W].
Tensor<float> read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const Tensor<float>& map);

}  // namespace rtsmono
