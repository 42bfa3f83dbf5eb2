#pragma once

#include "accentkit/tensor.hpp"

#include <filesystem>

namespace accentkit {

// 8-bit PNG (gray, gray+alpha, RGB, RGBA; alpha dropped) or baseline JPEG.
// Pixel values are scaled to [0,1].
Image read_image(const std::filesystem::path& path);

// 1-channel images are written as grayscale, 3-channel as RGB. Values are
// clamped to [0,1] and rounded to 8 bits.
void write_png(const Image& image, const std::filesystem::path& path);

// Bilinear resize of every channel to height x width.
Image resize_image(const Image& image, int height, int width);

}  // namespace accentkit
