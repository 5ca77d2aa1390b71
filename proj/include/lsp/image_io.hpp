#pragma once

#include <filesystem>

#include "lsp/tensor.hpp"

namespace lsp {

struct ImageSize {
  int width = 0;
  int height = 0;
};

/// Reads an 8-bit PNG or JPEG as a 1 x channels x H x W tensor scaled to [0, 1].
/// channels = 1 converts color input to luma; channels = 3 replicates gray.
Tensor<float> read_image(const std::filesystem::path& path, int channels = 1);

ImageSize read_image_size(const std::filesystem::path& path);

/// Writes a 1- or 3-channel image as 8-bit PNG (values clamped to [0, 1]).
void write_png(const std::filesystem::path& path, const Tensor<float>& image);

/// Bilinear resize with pixel-center alignment and edge clamping.
Tensor<float> resize_bilinear(const Tensor<float>& image, int height, int width);

}  // namespace lsp
