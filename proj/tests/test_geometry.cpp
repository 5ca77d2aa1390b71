#include <doctest.h>

#include <numbers>

#include "lsp/geometry.hpp"
#include "support.hpp"

using namespace lsp;
using lsp_test::Gen;

TEST_CASE("project_center pinhole arithmetic") {
  const CameraIntrinsics k{100, 100, 64, 64, 128, 128};
  PixelCoord p = project_center({0, 0, 10}, k);
  CHECK(p.u == doctest::Approx(64));
  CHECK(p.v == doctest::Approx(64));
  p = project_center({1, 0, 10}, k);
  CHECK(p.u == doctest::Approx(74));
  CHECK(p.v == doctest::Approx(64));
  p = project_center({-2, 1, 5}, CameraIntrinsics{200, 100, 320, 240, 640, 480});
  CHECK(p.u == doctest::Approx(240));
  CHECK(p.v == doctest::Approx(260));
}

TEST_CASE("project_center leaves off-image points unclamped") {
  const PixelCoord p = project_center({10, -10, 5}, CameraIntrinsics{100, 100, 64, 64, 128, 128});
  CHECK(p.u == doctest::Approx(264));
  CHECK(p.v == doctest::Approx(-136));
}

TEST_CASE("project_center rejects targets behind the camera") {
  const CameraIntrinsics k{100, 100, 64, 64, 128, 128};
  CHECK_THROWS_AS(project_center({0, 0, 0}, k, "sample 7"), DomainError);
  try {
    project_center({0, 0, -1}, k, "sample 7");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("sample 7") != std::string::npos);
  }
}

TEST_CASE("doubling fx doubles the horizontal offset") {
  Gen g(1);
  for (int i = 0; i < 100; ++i) {
    const Vec3d t(lsp_test::uniform(g, -3, 3), lsp_test::uniform(g, -3, 3), lsp_test::uniform(g, 1, 40));
    const CameraIntrinsics a{150, 150, 60, 50, 128, 128}, b{300, 150, 60, 50, 128, 128};
    CHECK((project_center(t, b).u - 60) == doctest::Approx(2 * (project_center(t, a).u - 60)).epsilon(1e-12));
  }
}

TEST_CASE("normalize_quaternion examples") {
  CHECK(wxyz(normalize_quaternion<double>({2, 0, 0, 0})).isApprox(Vec4<double>(1, 0, 0, 0)));
  CHECK(wxyz(normalize_quaternion<double>({1, 1, 1, 1})).isApprox(Vec4<double>(0.5, 0.5, 0.5, 0.5)));
  CHECK_THROWS_AS(normalize_quaternion<double>({0, 0, 0, 0}), NumericError);
  CHECK_THROWS_AS(normalize_quaternion<double>({NAN, 0, 0, 0}), NumericError);
}

TEST_CASE("normalize_quaternion is idempotent") {
  Gen g(2);
  std::normal_distribution<double> n;
  for (int i = 0; i < 1000; ++i) {
    const Vec4<double> raw(n(g), n(g), n(g), n(g));
    const Quatd a = normalize_quaternion(raw);
    const Quatd b = normalize_quaternion(wxyz(a));
    CHECK((wxyz(a) - wxyz(b)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(is_unit(a));
  }
}

TEST_CASE("quat_to_rotmat examples and orthogonality") {
  CHECK(quat_to_rotmat(Quatd(1, 0, 0, 0)).isApprox(Mat3<double>::Identity()));
  const Mat3<double> rx = quat_to_rotmat(Quatd(0, 1, 0, 0));
  CHECK(rx.isApprox(Eigen::Vector3d(1, -1, -1).asDiagonal().toDenseMatrix()));
  CHECK_THROWS_AS(quat_to_rotmat(Quatd(2, 0, 0, 0)), DomainError);
  Gen g(3);
  for (int i = 0; i < 1000; ++i) {
    const Quatd q = lsp_test::random_quat(g);
    const Mat3<double> r = quat_to_rotmat(q);
    CHECK((r.transpose() * r - Mat3<double>::Identity()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-6));
    // Double cover and agreement with an independent construction.
    CHECK((quat_to_rotmat(Quatd(-q.w(), -q.x(), -q.y(), -q.z())) - r).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((q.toRotationMatrix() - r).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("geodesic_angle examples") {
  const Quatd a(1, 0, 0, 0);
  CHECK(geodesic_angle(a, a) == doctest::Approx(0));
  CHECK(geodesic_angle(a, Quatd(-1, 0, 0, 0)) == doctest::Approx(0));
  CHECK(geodesic_angle(a, Quatd(0, 1, 0, 0)) == doctest::Approx(std::numbers::pi));
}

TEST_CASE("geodesic_angle symmetry, sign invariance and range over random pairs") {
  Gen g(4);
  for (int i = 0; i < 2000; ++i) {
    const Quatd a = lsp_test::random_quat(g), b = lsp_test::random_quat(g);
    const double ab = geodesic_angle(a, b);
    CHECK(ab == doctest::Approx(geodesic_angle(b, a)).epsilon(1e-14));
    CHECK(geodesic_angle(a, Quatd(-a.w(), -a.x(), -a.y(), -a.z())) == 0.0);
    CHECK(ab >= 0.0);
    CHECK(ab <= std::numbers::pi);
    // Independent oracle: rotation angle of the relative rotation matrix.
    const Eigen::Matrix3d rel = a.toRotationMatrix().transpose() * b.toRotationMatrix();
    const double c = std::clamp((rel.trace() - 1) / 2, -1.0, 1.0);
    CHECK(ab == doctest::Approx(std::acos(c)).epsilon(1e-6));
  }
}
