#pragma once

// Training objectives. Every loss comes with the gradient w.r.t. its
// prediction arguments; batches are plain vectors of fixed-size Eigen types.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lsp/error.hpp"
#include "lsp/geometry.hpp"
#include "lsp/heatmap.hpp"

namespace lsp {

/// Upper bound on |<q, q_hat>| inside the differentiable rotation loss.
inline constexpr double kAcosClamp = 1.0 - 1e-7;

struct LossBreakdown {
  double position = 0;
  double euc = 0;
  double reg = 0;
  double center = 0;
  double rotation = 0;
  double translation = 0;
  double pose = 0;
};

struct LossParts {
  double position = 0;
  double euc = 0;
  double reg = 0;
  double center = 0;
  double rotation = 0;
};

/// translation = position + center, pose = translation + rotation.
LossBreakdown compose_losses(const LossParts& parts);

namespace detail {
inline void require_batch(std::size_t a, std::size_t b, const char* who) {
  if (a != b || a == 0) {
    throw ContractError(std::string(who) + ": batch sizes " + std::to_string(a) + " and " +
                        std::to_string(b) + " must match and be non-zero");
  }
}
}  // namespace detail

/// Batch mean of the squared Euclidean translation error.
template <typename Scalar>
Scalar position_loss(std::span<const Vec3<Scalar>> t_true, std::span<const Vec3<Scalar>> t_pred) {
  detail::require_batch(t_true.size(), t_pred.size(), "position_loss");
  Scalar acc = 0;
  for (std::size_t i = 0; i < t_true.size(); ++i) acc += (t_true[i] - t_pred[i]).squaredNorm();
  return acc / Scalar(t_true.size());
}

template <typename Scalar>
std::vector<Vec3<Scalar>> position_loss_grad(std::span<const Vec3<Scalar>> t_true,
                                             std::span<const Vec3<Scalar>> t_pred) {
  detail::require_batch(t_true.size(), t_pred.size(), "position_loss_grad");
  std::vector<Vec3<Scalar>> g(t_pred.size());
  const Scalar s = Scalar(2) / Scalar(t_pred.size());
  for (std::size_t i = 0; i < t_pred.size(); ++i) g[i] = s * (t_pred[i] - t_true[i]);
  return g;
}

template <typename Scalar>
struct CenterLoss {
  Scalar euc = 0;     // batch mean of ||c - c_hat||
  Scalar reg = 0;     // batch mean of JS(h_hat, N(c_hat, sigma2))
  Scalar center = 0;  // euc + lambda * reg
  std::vector<Vec2<Scalar>> grad_c_pred;
  std::vector<Grid<Scalar>> grad_h_pred;
};

/// Euclidean center error in normalized coordinates plus the divergence
/// between each predicted heatmap and a Gaussian at its predicted center.
template <typename Scalar>
CenterLoss<Scalar> center_loss(std::span<const Vec2<Scalar>> c_true,
                               std::span<const Vec2<Scalar>> c_pred,
                               std::span<const Heatmap<Scalar>> h_pred, Scalar sigma2,
                               Scalar lambda, bool with_grad = true) {
  detail::require_batch(c_true.size(), c_pred.size(), "center_loss");
  detail::require_batch(c_pred.size(), h_pred.size(), "center_loss");
  const std::size_t n = c_true.size();
  const Scalar inv_n = Scalar(1) / Scalar(n);
  CenterLoss<Scalar> out;
  if (with_grad) {
    out.grad_c_pred.resize(n);
    out.grad_h_pred.resize(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Heatmap<Scalar>& h = h_pred[i];
    if (!h.normalized) throw ContractError("center_loss: predicted heatmap is not normalized");
    const Vec2<Scalar> diff = c_pred[i] - c_true[i];
    const Scalar dist = diff.norm();
    const Heatmap<Scalar> target = gaussian_target<Scalar>(c_pred[i], sigma2, h.rows(), h.cols());
    const Scalar js = js_divergence(h, target);
    out.euc += dist * inv_n;
    out.reg += js * inv_n;
    if (with_grad) {
      Vec2<Scalar> gc = dist > Scalar(0) ? Vec2<Scalar>(diff / dist) : Vec2<Scalar>::Zero();
      // JS is symmetric, so dJS/dtarget has the same form as dJS/dh.
      const Grid<Scalar> g_target = js_divergence_grad_p(target, h);
      gc += lambda * gaussian_target_backward(target, c_pred[i], sigma2, g_target);
      out.grad_c_pred[i] = gc * inv_n;
      out.grad_h_pred[i] = js_divergence_grad_p(h, target) * (lambda * inv_n);
    }
  }
  out.center = out.euc + lambda * out.reg;
  return out;
}

/// Batch mean of 2 acos(min(|<q, q_hat>|, 1 - 1e-7)).
template <typename Scalar>
Scalar rotation_loss(std::span<const Quaternion<Scalar>> q_true,
                     std::span<const Quaternion<Scalar>> q_pred) {
  detail::require_batch(q_true.size(), q_pred.size(), "rotation_loss");
  Scalar acc = 0;
  for (std::size_t i = 0; i < q_true.size(); ++i) {
    if (!is_unit(q_true[i]) || !is_unit(q_pred[i])) {
      throw ContractError("rotation_loss: quaternion " + std::to_string(i) + " is not unit norm");
    }
    const Scalar d = std::min(Scalar(kAcosClamp), std::abs(q_true[i].coeffs().dot(q_pred[i].coeffs())));
    acc += Scalar(2) * std::acos(d);
  }
  return acc / Scalar(q_true.size());
}

/// dL/dq_pred in scalar-first (w, x, y, z) order.
template <typename Scalar>
std::vector<Vec4<Scalar>> rotation_loss_grad(std::span<const Quaternion<Scalar>> q_true,
                                             std::span<const Quaternion<Scalar>> q_pred) {
  detail::require_batch(q_true.size(), q_pred.size(), "rotation_loss_grad");
  std::vector<Vec4<Scalar>> g(q_pred.size());
  const Scalar inv_n = Scalar(1) / Scalar(q_pred.size());
  for (std::size_t i = 0; i < q_pred.size(); ++i) {
    const Scalar d = q_true[i].coeffs().dot(q_pred[i].coeffs());
    const Scalar a = std::abs(d);
    if (a >= Scalar(kAcosClamp)) {
      g[i].setZero();
      continue;
    }
    const Scalar sign = d < 0 ? Scalar(-1) : Scalar(1);
    g[i] = (-Scalar(2) * sign / std::sqrt(Scalar(1) - a * a) * inv_n) * wxyz(q_true[i]);
  }
  return g;
}

}  // namespace lsp
