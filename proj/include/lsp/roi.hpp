#pragma once

// Depth-derived square bounding boxes, center jitter augmentation and the
// differentiable crop that feeds the orientation network.

#include <optional>
#include <random>

#include "lsp/geometry.hpp"
#include "lsp/tensor.hpp"

namespace lsp {

using Rng = std::mt19937_64;

struct BoundingBox {
  PixelCoord center;
  double side = 0.0;  // pixels
};

struct RoiConfig {
  double k_object = 700.0;  // pixels * meters
  int crop_size = 224;
  double cda_r = 0.15;
  bool hc_enabled = false;
  int hc_channels = 64;

  void validate() const;
};

/// Square box centered on the predicted center with side K_O / z.
BoundingBox bounding_box(const PixelCoord& center, double z, const RoiConfig& cfg);

/// Center jitter: u, v each shifted by N(0, (side * r)^2); side unchanged.
BoundingBox augment_box(const BoundingBox& box, double r, Rng& rng);

/// Axis-aligned sampling window in the source image's own pixel frame. Square
/// boxes become slightly non-square after an anisotropic resize.
struct CropWindow {
  double cu = 0.0;
  double cv = 0.0;
  double side_u = 1.0;
  double side_v = 1.0;

  static CropWindow from_box(const BoundingBox& b) {
    return {b.center.u, b.center.v, b.side, b.side};
  }
  /// True when the window misses the image [-0.5, w-0.5] x [-0.5, h-0.5] entirely.
  bool outside(int width, int height) const;
};

/// Bilinear crop with zero padding of one sample's channels into a
/// size x size destination (all channels). Pure helpers used by the network.
template <typename Scalar>
void crop_sample(const Scalar* src, int channels, int height, int width, const CropWindow& win,
                 int size, Scalar* dst);

/// Adjoint of crop_sample: scatters grad_dst back into grad_src (accumulates).
template <typename Scalar>
void crop_sample_backward(const Scalar* grad_dst, int channels, int height, int width,
                          const CropWindow& win, int size, Scalar* grad_src);

template <typename Scalar>
struct Crop {
  Tensor<Scalar> image;      // 1 x C x size x size
  bool fully_outside = false;
};

/// Crops a single image (N must be 1) to the box, resampled to crop_size.
template <typename Scalar>
Crop<Scalar> crop_and_rescale(const Tensor<Scalar>& image, const BoundingBox& box, int crop_size);

/// Orientation network input: image (C_I channels), optionally stacked with
/// the H non-normalized heatmaps, cropped once as a whole.
template <typename Scalar>
Crop<Scalar> assemble_orientation_input(const Tensor<Scalar>& image,
                                        const std::optional<Tensor<Scalar>>& heatstack,
                                        const BoundingBox& box, const RoiConfig& cfg);

}  // namespace lsp
