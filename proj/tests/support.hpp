#pragma once

// Shared helpers for the test suites: seeded generators, finite differences
// and scratch directories. Nothing here calls into the code under test.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace lsp_test {

using Gen = std::mt19937_64;

inline Eigen::Quaterniond random_quat(Gen& g) {
  std::normal_distribution<double> n;
  Eigen::Vector4d v;
  do {
    v = Eigen::Vector4d(n(g), n(g), n(g), n(g));
  } while (v.norm() < 1e-6);
  v.normalize();
  return Eigen::Quaterniond(v[0], v[1], v[2], v[3]);
}

inline double uniform(Gen& g, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(g); }

inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central difference of f along coordinate `k` of the contiguous buffer x.
template <typename F>
double central_diff(F&& f, double* x, long k, double h = 1e-6) {
  const double x0 = x[k];
  x[k] = x0 + h;
  const double fp = f();
  x[k] = x0 - h;
  const double fm = f();
  x[k] = x0;
  return (fp - fm) / (2 * h);
}

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  const std::filesystem::path p = std::filesystem::current_path() / "scratch" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::FILE* f = std::fopen(p.c_str(), "rb");
  if (!f) return {};
  std::string s;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) s.append(buf, n);
  std::fclose(f);
  return s;
}

}  // namespace lsp_test
