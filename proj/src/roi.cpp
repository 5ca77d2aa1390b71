#include "lsp/roi.hpp"

#include <cmath>
#include <sstream>

namespace lsp {

void RoiConfig::validate() const {
  if (!(k_object > 0)) throw ConfigError("roi: k_object must be positive");
  if (crop_size < 8) throw ConfigError("roi: crop_size must be >= 8");
  if (!(cda_r > 0)) throw ConfigError("roi: cda_r must be positive");
  if (hc_enabled && hc_channels < 1) throw ConfigError("roi: hc_channels must be >= 1");
}

BoundingBox bounding_box(const PixelCoord& center, double z, const RoiConfig& cfg) {
  if (!(z > 0)) {
    std::ostringstream os;
    os << "bounding_box: non-positive depth z=" << z;
    throw DomainError(os.str());
  }
  return {center, cfg.k_object / z};
}

BoundingBox augment_box(const BoundingBox& box, double r, Rng& rng) {
  if (!(r > 0)) throw DomainError("augment_box: r must be positive");
  const double sd = box.side * r;
  // Fresh distributions: no cached second variate survives between calls,
  // so the engine state alone determines the stream.
  const double du = std::normal_distribution<double>(0.0, sd)(rng);
  const double dv = std::normal_distribution<double>(0.0, sd)(rng);
  return {{box.center.u + du, box.center.v + dv}, box.side};
}

bool CropWindow::outside(int width, int height) const {
  const double u0 = cu - side_u / 2, u1 = cu + side_u / 2;
  const double v0 = cv - side_v / 2, v1 = cv + side_v / 2;
  return u1 <= -0.5 || u0 >= width - 0.5 || v1 <= -0.5 || v0 >= height - 0.5;
}

namespace {

struct Tap {
  int i0;
  double f;  // weight of i0 + 1
};

// Source coordinate of destination index k along one axis.
Tap tap(double center, double side, int size, int k) {
  const double s = center - side / 2 + (k + 0.5) * side / size;
  const double fl = std::floor(s);
  return {static_cast<int>(fl), s - fl};
}

}  // namespace

template <typename Scalar>
void crop_sample(const Scalar* src, int channels, int height, int width, const CropWindow& win,
                 int size, Scalar* dst) {
  const Eigen::Index plane = Eigen::Index(height) * width;
  for (int y = 0; y < size; ++y) {
    const Tap ty = tap(win.cv, win.side_v, size, y);
    for (int x = 0; x < size; ++x) {
      const Tap tx = tap(win.cu, win.side_u, size, x);
      const int xs[2] = {tx.i0, tx.i0 + 1};
      const int ys[2] = {ty.i0, ty.i0 + 1};
      const double wx[2] = {1 - tx.f, tx.f};
      const double wy[2] = {1 - ty.f, ty.f};
      for (int c = 0; c < channels; ++c) {
        const Scalar* p = src + c * plane;
        double acc = 0;
        for (int a = 0; a < 2; ++a) {
          if (ys[a] < 0 || ys[a] >= height || wy[a] == 0) continue;
          for (int b = 0; b < 2; ++b) {
            if (xs[b] < 0 || xs[b] >= width || wx[b] == 0) continue;
            acc += wy[a] * wx[b] * static_cast<double>(p[Eigen::Index(ys[a]) * width + xs[b]]);
          }
        }
        dst[(Eigen::Index(c) * size + y) * size + x] = static_cast<Scalar>(acc);
      }
    }
  }
}

template <typename Scalar>
void crop_sample_backward(const Scalar* grad_dst, int channels, int height, int width,
                          const CropWindow& win, int size, Scalar* grad_src) {
  const Eigen::Index plane = Eigen::Index(height) * width;
  for (int y = 0; y < size; ++y) {
    const Tap ty = tap(win.cv, win.side_v, size, y);
    for (int x = 0; x < size; ++x) {
      const Tap tx = tap(win.cu, win.side_u, size, x);
      const int xs[2] = {tx.i0, tx.i0 + 1};
      const int ys[2] = {ty.i0, ty.i0 + 1};
      const double wx[2] = {1 - tx.f, tx.f};
      const double wy[2] = {1 - ty.f, ty.f};
      for (int c = 0; c < channels; ++c) {
        const double g = grad_dst[(Eigen::Index(c) * size + y) * size + x];
        if (g == 0) continue;
        Scalar* p = grad_src + c * plane;
        for (int a = 0; a < 2; ++a) {
          if (ys[a] < 0 || ys[a] >= height || wy[a] == 0) continue;
          for (int b = 0; b < 2; ++b) {
            if (xs[b] < 0 || xs[b] >= width || wx[b] == 0) continue;
            p[Eigen::Index(ys[a]) * width + xs[b]] += static_cast<Scalar>(wy[a] * wx[b] * g);
          }
        }
      }
    }
  }
}

template <typename Scalar>
Crop<Scalar> crop_and_rescale(const Tensor<Scalar>& image, const BoundingBox& box, int crop_size) {
  if (image.empty() || image.n() != 1) {
    throw ContractError("crop_and_rescale: expected a single non-empty image");
  }
  if (crop_size < 1 || !(box.side > 0)) throw ContractError("crop_and_rescale: invalid box/size");
  const CropWindow win = CropWindow::from_box(box);
  Crop<Scalar> out{Tensor<Scalar>(1, image.c(), crop_size, crop_size), false};
  out.fully_outside = win.outside(image.w(), image.h());
  if (!out.fully_outside) {
    crop_sample(image.data(), image.c(), image.h(), image.w(), win, crop_size, out.image.data());
  }
  return out;
}

template <typename Scalar>
Crop<Scalar> assemble_orientation_input(const Tensor<Scalar>& image,
                                        const std::optional<Tensor<Scalar>>& heatstack,
                                        const BoundingBox& box, const RoiConfig& cfg) {
  if (cfg.hc_enabled != heatstack.has_value()) {
    throw ContractError(cfg.hc_enabled
                            ? "assemble_orientation_input: heatmap concatenation enabled but no heatmaps given"
                            : "assemble_orientation_input: heatmaps given with concatenation disabled");
  }
  if (!heatstack) return crop_and_rescale(image, box, cfg.crop_size);
  const Tensor<Scalar>& hs = *heatstack;
  if (hs.n() != image.n() || hs.h() != image.h() || hs.w() != image.w()) {
    throw ContractError("assemble_orientation_input: heatmaps " + hs.shape_string() +
                        " not aligned with image " + image.shape_string());
  }
  if (hs.c() != cfg.hc_channels) {
    throw ContractError("assemble_orientation_input: expected " + std::to_string(cfg.hc_channels) +
                        " heatmaps, got " + std::to_string(hs.c()));
  }
  return crop_and_rescale(concat_channels(image, hs), box, cfg.crop_size);
}

#define LSP_INSTANTIATE(S)                                                                       \
  template void crop_sample<S>(const S*, int, int, int, const CropWindow&, int, S*);             \
  template void crop_sample_backward<S>(const S*, int, int, int, const CropWindow&, int, S*);    \
  template Crop<S> crop_and_rescale<S>(const Tensor<S>&, const BoundingBox&, int);               \
  template Crop<S> assemble_orientation_input<S>(const Tensor<S>&, const std::optional<Tensor<S>>&, \
                                                 const BoundingBox&, const RoiConfig&);
LSP_INSTANTIATE(float)
LSP_INSTANTIATE(double)
#undef LSP_INSTANTIATE

}  // namespace lsp
