#include "lsp/heatmap.hpp"

namespace lsp {

PixelCoord normalized_to_pixel(const Vec2<double>& xy, int width, int height) {
  return {normalized_to_pixel_axis(xy.x(), width), normalized_to_pixel_axis(xy.y(), height)};
}

Vec2<double> pixel_to_normalized(const PixelCoord& p, int width, int height) {
  return {pixel_to_normalized_axis(p.u, width), pixel_to_normalized_axis(p.v, height)};
}

}  // namespace lsp
