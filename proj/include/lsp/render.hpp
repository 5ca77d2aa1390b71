#pragma once

// Z-buffered triangle rasterizer for the synthetic spacecraft: an
// axis-aligned body with distinctly shaded faces, two unequal solar panels
// and an off-axis antenna mast, so every orientation is identifiable.

#include <array>
#include <vector>

#include "lsp/geometry.hpp"
#include "lsp/roi.hpp"
#include "lsp/tensor.hpp"

namespace lsp {

struct Triangle {
  std::array<Vec3d, 3> v;  // body frame, meters
  double albedo = 0.5;
};

struct SpacecraftModel {
  std::vector<Triangle> triangles;

  /// Largest vertex distance from the body origin.
  double radius() const;
  static SpacecraftModel standard();
};

struct SceneConfig {
  CameraIntrinsics camera{240.0, 240.0, 63.5, 63.5, 128, 128};
  double z_min = 5.0;
  double z_max = 40.0;
  double center_margin = 0.1;  // projected center stays in the central 1 - 2*margin of the frame
  double clutter_probability = 0.3;
  double noise_sigma = 0.01;
  int supersample = 2;
};

/// Uniform rotation: normalized 4-D Gaussian, sign fixed so w >= 0.
Quatd random_unit_quaternion(Rng& rng);

Posed sample_pose(const SceneConfig& cfg, Rng& rng);

/// Renders one grayscale frame (1 x 1 x H x W, values in [0, 1]).
Tensor<float> render_scene(const SpacecraftModel& model, const Posed& pose, const SceneConfig& cfg,
                           bool clutter, Rng& rng);

}  // namespace lsp
