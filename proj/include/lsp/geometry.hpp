#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <string>

#include "lsp/error.hpp"

namespace lsp {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

template <typename Scalar>
using Vec4 = Eigen::Matrix<Scalar, 4, 1>;

template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

/// Unit quaternion. Eigen stores (x, y, z, w) internally; everything that
/// crosses a file or JSON boundary uses scalar-first (w, x, y, z) order.
template <typename Scalar>
using Quaternion = Eigen::Quaternion<Scalar>;

using Vec3d = Vec3<double>;
using Quatd = Quaternion<double>;

/// Camera-frame pose of the target: t in meters, q rotates body into camera frame.
template <typename Scalar>
struct Pose {
  Vec3<Scalar> t = Vec3<Scalar>::Zero();
  Quaternion<Scalar> q = Quaternion<Scalar>::Identity();
};

using Posed = Pose<double>;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
};

/// Pixel coordinate, origin top-left, pixel centers at integer positions.
struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

/// Scalar-first component vector (w, x, y, z).
template <typename Scalar>
Vec4<Scalar> wxyz(const Quaternion<Scalar>& q) {
  return Vec4<Scalar>(q.w(), q.x(), q.y(), q.z());
}

template <typename Scalar>
Quaternion<Scalar> from_wxyz(const Vec4<Scalar>& c) {
  return Quaternion<Scalar>(c[0], c[1], c[2], c[3]);
}

/// Pinhole projection of the translation vector. The result may fall outside
/// the image; no clamping is applied. `what` names the sample in errors.
PixelCoord project_center(const Vec3d& t, const CameraIntrinsics& k,
                          const std::string& what = "");

inline constexpr double kQuatNormEps = 1e-12;
inline constexpr double kUnitNormTol = 1e-6;

template <typename Scalar>
Quaternion<Scalar> normalize_quaternion(const Vec4<Scalar>& raw_wxyz) {
  const Scalar n = raw_wxyz.norm();
  if (!std::isfinite(static_cast<double>(n)) || n <= Scalar(kQuatNormEps)) {
    throw NumericError("normalize_quaternion: degenerate raw quaternion (norm " +
                       std::to_string(static_cast<double>(n)) + ")");
  }
  return from_wxyz<Scalar>(raw_wxyz / n);
}

template <typename Scalar>
bool is_unit(const Quaternion<Scalar>& q, double tol = kUnitNormTol) {
  return std::abs(static_cast<double>(q.coeffs().squaredNorm()) - 1.0) <= tol;
}

template <typename Scalar>
Mat3<Scalar> quat_to_rotmat(const Quaternion<Scalar>& q) {
  if (!is_unit(q)) throw DomainError("quat_to_rotmat: quaternion is not unit norm");
  const Scalar w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Mat3<Scalar> r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

/// Rotation angle separating two orientations, 2 acos|<qa, qb>|, in [0, pi].
template <typename Scalar>
Scalar geodesic_angle(const Quaternion<Scalar>& qa, const Quaternion<Scalar>& qb) {
  using std::atan2;
  // 2 acos|<qa, qb>| written via the half-angle between the two 4-vectors,
  // which stays accurate when the rotations nearly coincide.
  const auto a = qa.coeffs();
  const auto b = qb.coeffs();
  const Scalar s = a.dot(b) < Scalar(0) ? Scalar(-1) : Scalar(1);
  return Scalar(4) * atan2((a - s * b).norm(), (a + s * b).norm());
}

}  // namespace lsp
