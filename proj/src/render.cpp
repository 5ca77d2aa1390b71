#include "lsp/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lsp {

namespace {

void add_box(std::vector<Triangle>& tris, const Vec3d& lo, const Vec3d& hi,
             const std::array<double, 6>& albedo) {
  // Faces ordered +x, -x, +y, -y, +z, -z.
  auto corner = [&](int bx, int by, int bz) {
    return Vec3d(bx ? hi.x() : lo.x(), by ? hi.y() : lo.y(), bz ? hi.z() : lo.z());
  };
  auto quad = [&](const Vec3d& a, const Vec3d& b, const Vec3d& c, const Vec3d& d, double alb) {
    tris.push_back({{a, b, c}, alb});
    tris.push_back({{a, c, d}, alb});
  };
  quad(corner(1, 0, 0), corner(1, 1, 0), corner(1, 1, 1), corner(1, 0, 1), albedo[0]);
  quad(corner(0, 0, 0), corner(0, 0, 1), corner(0, 1, 1), corner(0, 1, 0), albedo[1]);
  quad(corner(0, 1, 0), corner(0, 1, 1), corner(1, 1, 1), corner(1, 1, 0), albedo[2]);
  quad(corner(0, 0, 0), corner(1, 0, 0), corner(1, 0, 1), corner(0, 0, 1), albedo[3]);
  quad(corner(0, 0, 1), corner(1, 0, 1), corner(1, 1, 1), corner(0, 1, 1), albedo[4]);
  quad(corner(0, 0, 0), corner(0, 1, 0), corner(1, 1, 0), corner(1, 0, 0), albedo[5]);
}

double hash_uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

double SpacecraftModel::radius() const {
  double r = 0;
  for (const auto& t : triangles) {
    for (const auto& v : t.v) r = std::max(r, v.norm());
  }
  return r;
}

SpacecraftModel SpacecraftModel::standard() {
  SpacecraftModel m;
  add_box(m.triangles, {-0.5, -0.4, -0.35}, {0.5, 0.4, 0.35}, {0.95, 0.55, 0.8, 0.4, 0.7, 0.3});
  add_box(m.triangles, {-0.3, 0.4, -0.02}, {0.3, 1.8, 0.02}, {0.5, 0.5, 0.5, 0.5, 0.6, 0.35});
  add_box(m.triangles, {-0.25, -1.1, -0.02}, {0.25, -0.4, 0.02}, {0.45, 0.45, 0.45, 0.45, 0.55, 0.3});
  add_box(m.triangles, {0.15, 0.1, 0.35}, {0.22, 0.17, 1.1}, {1.0, 1.0, 1.0, 1.0, 1.0, 1.0});
  add_box(m.triangles, {0.0, -0.05, 1.1}, {0.4, 0.35, 1.15}, {0.9, 0.9, 0.9, 0.9, 0.95, 0.6});
  return m;
}

Quatd random_unit_quaternion(Rng& rng) {
  Vec4<double> g;
  for (int k = 0; k < 4; ++k) g[k] = std::normal_distribution<double>(0.0, 1.0)(rng);
  if (g[0] < 0) g = -g;
  return normalize_quaternion<double>(g);
}

Posed sample_pose(const SceneConfig& cfg, Rng& rng) {
  Posed p;
  p.q = random_unit_quaternion(rng);
  const double z = hash_uniform(rng, cfg.z_min, cfg.z_max);
  const CameraIntrinsics& k = cfg.camera;
  const double m = cfg.center_margin;
  const double u = hash_uniform(rng, m * k.width, (1 - m) * k.width);
  const double v = hash_uniform(rng, m * k.height, (1 - m) * k.height);
  p.t = Vec3d((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
  return p;
}

Tensor<float> render_scene(const SpacecraftModel& model, const Posed& pose, const SceneConfig& cfg,
                           bool clutter, Rng& rng) {
  const CameraIntrinsics& k = cfg.camera;
  const int ss = std::max(1, cfg.supersample);
  const int w = k.width * ss, h = k.height * ss;
  std::vector<double> color(std::size_t(w) * h, 0.0);
  std::vector<double> inv_depth(std::size_t(w) * h, 0.0);

  if (clutter) {
    // Planet-like disc with a terminator gradient plus a faint sky gradient.
    const double gx = hash_uniform(rng, -1, 1), gy = hash_uniform(rng, -1, 1);
    const double base = hash_uniform(rng, 0.0, 0.12);
    const double ex = hash_uniform(rng, -0.5, 1.5) * w, ey = hash_uniform(rng, 0.6, 1.6) * h;
    const double er = hash_uniform(rng, 0.5, 1.2) * std::max(w, h);
    const double lit = hash_uniform(rng, 0.25, 0.55);
    std::vector<std::array<double, 4>> clouds;
    const int n_clouds = static_cast<int>(hash_uniform(rng, 2, 7));
    for (int c = 0; c < n_clouds; ++c) {
      const double ang = hash_uniform(rng, 0, 2 * M_PI), rad = hash_uniform(rng, 0, 0.95) * er;
      clouds.push_back({ex + rad * std::cos(ang), ey + rad * std::sin(ang),
                        hash_uniform(rng, 0.05, 0.2) * er, hash_uniform(rng, 0.1, 0.3)});
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double c = base * (0.5 + 0.5 * (gx * (x / double(w) - 0.5) + gy * (y / double(h) - 0.5)));
        const double dx = x - ex, dy = y - ey;
        if (dx * dx + dy * dy < er * er) {
          c = lit * (0.6 + 0.4 * (dy / er));
          for (const auto& cl : clouds) {
            const double cx = x - cl[0], cy = y - cl[1];
            if (cx * cx + cy * cy < cl[2] * cl[2]) c += cl[3];
          }
        }
        color[std::size_t(y) * w + x] = std::clamp(c, 0.0, 1.0);
      }
    }
  }

  const Mat3<double> r = quat_to_rotmat(pose.q);
  const Vec3d light = Vec3d(-0.4, -0.5, -0.75).normalized();  // toward the light, camera frame
  const double fx = k.fx * ss, fy = k.fy * ss;
  const double cx = (k.cx + 0.5) * ss - 0.5, cy = (k.cy + 0.5) * ss - 0.5;
  for (const Triangle& tri : model.triangles) {
    std::array<Vec3d, 3> pc;
    std::array<double, 3> px, py, iz;
    bool behind = false;
    for (int i = 0; i < 3; ++i) {
      pc[i] = r * tri.v[i] + pose.t;
      if (pc[i].z() < 1e-3) behind = true;
      px[i] = fx * pc[i].x() / pc[i].z() + cx;
      py[i] = fy * pc[i].y() / pc[i].z() + cy;
      iz[i] = 1.0 / pc[i].z();
    }
    if (behind) continue;
    Vec3d n = (pc[1] - pc[0]).cross(pc[2] - pc[0]).normalized();
    if (n.dot(pc[0]) > 0) n = -n;
    const double shade = tri.albedo * (0.3 + 0.7 * std::max(0.0, n.dot(light)));
    const double area = (px[1] - px[0]) * (py[2] - py[0]) - (px[2] - px[0]) * (py[1] - py[0]);
    if (std::abs(area) < 1e-12) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({px[0], px[1], px[2]}))));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max({px[0], px[1], px[2]}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({py[0], py[1], py[2]}))));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max({py[0], py[1], py[2]}))));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double e0 = ((px[2] - px[1]) * (y - py[1]) - (py[2] - py[1]) * (x - px[1])) / area;
        const double e1 = ((px[0] - px[2]) * (y - py[2]) - (py[0] - py[2]) * (x - px[2])) / area;
        const double e2 = 1.0 - e0 - e1;
        if (e0 < 0 || e1 < 0 || e2 < 0) continue;
        const double d = e0 * iz[0] + e1 * iz[1] + e2 * iz[2];
        const std::size_t idx = std::size_t(y) * w + x;
        if (d > inv_depth[idx]) {
          inv_depth[idx] = d;
          color[idx] = shade;
        }
      }
    }
  }

  Tensor<float> img(1, 1, k.height, k.width);
  const double inv = 1.0 / (ss * ss);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      double acc = 0;
      for (int a = 0; a < ss; ++a) {
        for (int b = 0; b < ss; ++b) acc += color[std::size_t(y * ss + a) * w + (x * ss + b)];
      }
      double v = acc * inv;
      if (cfg.noise_sigma > 0) v += std::normal_distribution<double>(0.0, cfg.noise_sigma)(rng);
      img(0, 0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

}  // namespace lsp
