#pragma once

// Heatmap normalization, DSNT coordinate regression and the divergence
// regularizer. Grids are row-major (rows = image v, cols = image u) so they
// map directly onto NCHW tensor storage.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "lsp/error.hpp"
#include "lsp/geometry.hpp"

namespace lsp {

template <typename Scalar>
using Grid = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;

template <typename Scalar>
struct Heatmap {
  Grid<Scalar> values;
  bool normalized = false;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

inline constexpr double kHeatmapSumTol = 1e-6;
inline constexpr double kLogFloor = 1e-12;

/// DSNT coordinate grids: x = (2j - (W+1))/W, y = (2i - (H+1))/H, 1-indexed.
template <typename Scalar>
struct CoordGrid {
  Grid<Scalar> x;
  Grid<Scalar> y;

  CoordGrid(Eigen::Index rows, Eigen::Index cols) : x(rows, cols), y(rows, cols) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        x(i, j) = Scalar(2 * (j + 1) - (cols + 1)) / Scalar(cols);
        y(i, j) = Scalar(2 * (i + 1) - (rows + 1)) / Scalar(rows);
      }
    }
  }
};

namespace detail {
template <typename Scalar>
void require_normalized(const Heatmap<Scalar>& h, const char* who) {
  if (!h.normalized) throw ContractError(std::string(who) + ": heatmap is not normalized");
  const double s = static_cast<double>(h.values.sum());
  if (std::abs(s - 1.0) > 1e-4 || h.values.minCoeff() < Scalar(0)) {
    throw ContractError(std::string(who) + ": heatmap does not sum to one");
  }
}
}  // namespace detail

/// Spatial softmax over all pixels.
template <typename Scalar>
Heatmap<Scalar> normalize_heatmap(const Grid<Scalar>& raw) {
  if (!raw.allFinite()) throw NumericError("normalize_heatmap: non-finite input");
  Heatmap<Scalar> h;
  h.values = (raw.array() - raw.maxCoeff()).exp().matrix();
  h.values /= h.values.sum();
  h.normalized = true;
  return h;
}

/// Backward pass of the spatial softmax: dL/draw given dL/dh at output h.
template <typename Scalar>
Grid<Scalar> normalize_heatmap_backward(const Heatmap<Scalar>& h, const Grid<Scalar>& grad_h) {
  const Scalar inner = h.values.cwiseProduct(grad_h).sum();
  return h.values.cwiseProduct((grad_h.array() - inner).matrix());
}

/// Expected (x, y) of the normalized coordinate grids under h.
template <typename Scalar>
Vec2<Scalar> dsnt(const Heatmap<Scalar>& h) {
  detail::require_normalized(h, "dsnt");
  const CoordGrid<Scalar> g(h.rows(), h.cols());
  return {h.values.cwiseProduct(g.x).sum(), h.values.cwiseProduct(g.y).sum()};
}

/// dL/dh for upstream gradient (dL/dx, dL/dy).
template <typename Scalar>
Grid<Scalar> dsnt_backward(Eigen::Index rows, Eigen::Index cols, const Vec2<Scalar>& grad_xy) {
  const CoordGrid<Scalar> g(rows, cols);
  return grad_xy.x() * g.x + grad_xy.y() * g.y;
}

/// Normalized DSNT coordinate -> pixel (0-indexed pixel centers).
template <typename Scalar>
Scalar normalized_to_pixel_axis(Scalar n, int extent) {
  return (n + Scalar(1)) * Scalar(extent) / Scalar(2) - Scalar(0.5);
}

template <typename Scalar>
Scalar pixel_to_normalized_axis(Scalar p, int extent) {
  return (Scalar(2) * (p + Scalar(0.5)) - Scalar(extent)) / Scalar(extent);
}

PixelCoord normalized_to_pixel(const Vec2<double>& xy, int width, int height);
Vec2<double> pixel_to_normalized(const PixelCoord& p, int width, int height);

/// Discretized isotropic Gaussian centered at a normalized coordinate, with
/// variance sigma2 in heatmap-pixel units, renormalized to sum to one.
template <typename Scalar>
Heatmap<Scalar> gaussian_target(const Vec2<Scalar>& center, Scalar sigma2, Eigen::Index rows,
                                Eigen::Index cols) {
  if (!(sigma2 > Scalar(0))) throw DomainError("gaussian_target: sigma2 must be positive");
  const Scalar pu = normalized_to_pixel_axis<Scalar>(center.x(), static_cast<int>(cols));
  const Scalar pv = normalized_to_pixel_axis<Scalar>(center.y(), static_cast<int>(rows));
  Grid<Scalar> e(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const Scalar du = Scalar(j) - pu, dv = Scalar(i) - pv;
      e(i, j) = -(du * du + dv * dv) / (Scalar(2) * sigma2);
    }
  }
  Heatmap<Scalar> h;
  h.values = (e.array() - e.maxCoeff()).exp().matrix();
  h.values /= h.values.sum();
  h.normalized = true;
  return h;
}

/// Vector-Jacobian product of gaussian_target w.r.t. its normalized center.
template <typename Scalar>
Vec2<Scalar> gaussian_target_backward(const Heatmap<Scalar>& g, const Vec2<Scalar>& center,
                                      Scalar sigma2, const Grid<Scalar>& grad_g) {
  const Eigen::Index rows = g.rows(), cols = g.cols();
  const Scalar pu = normalized_to_pixel_axis<Scalar>(center.x(), static_cast<int>(cols));
  const Scalar pv = normalized_to_pixel_axis<Scalar>(center.y(), static_cast<int>(rows));
  // G = g / sum(g); dG/dp = G * (d - E_G[d]) / sigma2 with d = j - pu (resp. i - pv).
  Scalar mean_du = 0, mean_dv = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      mean_du += g.values(i, j) * (Scalar(j) - pu);
      mean_dv += g.values(i, j) * (Scalar(i) - pv);
    }
  }
  Scalar dpu = 0, dpv = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const Scalar w = grad_g(i, j) * g.values(i, j) / sigma2;
      dpu += w * (Scalar(j) - pu - mean_du);
      dpv += w * (Scalar(i) - pv - mean_dv);
    }
  }
  return {dpu * Scalar(cols) / Scalar(2), dpv * Scalar(rows) / Scalar(2)};
}

/// Jensen-Shannon divergence (natural log), in [0, ln 2].
template <typename Scalar>
Scalar js_divergence(const Heatmap<Scalar>& p, const Heatmap<Scalar>& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) {
    throw ContractError("js_divergence: heatmap shapes differ");
  }
  detail::require_normalized(p, "js_divergence");
  detail::require_normalized(q, "js_divergence");
  const Scalar floor(kLogFloor);
  Scalar acc = 0;
  for (Eigen::Index k = 0; k < p.values.size(); ++k) {
    const Scalar a = p.values.data()[k], b = q.values.data()[k];
    const Scalar m = std::max((a + b) / Scalar(2), floor);
    if (a > Scalar(0)) acc += a * std::log(std::max(a, floor) / m);
    if (b > Scalar(0)) acc += b * std::log(std::max(b, floor) / m);
  }
  return std::max(Scalar(0), acc / Scalar(2));
}

/// dJS/dp, treating p as an unconstrained grid: 0.5 log(p / m).
template <typename Scalar>
Grid<Scalar> js_divergence_grad_p(const Heatmap<Scalar>& p, const Heatmap<Scalar>& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) {
    throw ContractError("js_divergence_grad_p: heatmap shapes differ");
  }
  const Scalar floor(kLogFloor);
  Grid<Scalar> g(p.rows(), p.cols());
  for (Eigen::Index k = 0; k < p.values.size(); ++k) {
    const Scalar a = p.values.data()[k], b = q.values.data()[k];
    const Scalar m = std::max((a + b) / Scalar(2), floor);
    g.data()[k] = std::log(std::max(a, floor) / m) / Scalar(2);
  }
  return g;
}

}  // namespace lsp
