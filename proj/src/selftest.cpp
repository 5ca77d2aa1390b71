#include "lsp/selftest.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "lsp/losses.hpp"
#include "lsp/render.hpp"
#include "lsp/roi.hpp"

namespace lsp {

namespace {

using GridD = Grid<double>;

double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Whole-network checks sum many float-sized terms; tiny entries are judged
// against this magnitude instead of their own.
constexpr double kNetworkFloor = 1e-3;

GridD random_grid(int rows, int cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  GridD g(rows, cols);
  for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = n(rng);
  return g;
}

/// Worst relative error of analytic vs central-difference gradients of f at x.
template <typename F>
double check_grid(const F& f, GridD x, const GridD& analytic, double h = 1e-6) {
  double worst = 0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double x0 = x.data()[k];
    x.data()[k] = x0 + h;
    const double fp = f(x);
    x.data()[k] = x0 - h;
    const double fm = f(x);
    x.data()[k] = x0;
    worst = std::max(worst, rel_err(analytic.data()[k], (fp - fm) / (2 * h)));
  }
  return worst;
}

SelftestResult verdict(const std::string& name, double worst, double tol) {
  std::ostringstream os;
  os << "max relative error " << worst << " (tolerance " << tol << ")";
  return {name, worst < tol, os.str()};
}

SelftestResult dsnt_check(Rng& rng) {
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    const GridD raw = random_grid(5, 7, rng);
    const Vec2<double> w(std::normal_distribution<double>()(rng), std::normal_distribution<double>()(rng));
    auto f = [&](const GridD& r) { return w.dot(dsnt(normalize_heatmap<double>(r))); };
    const Heatmap<double> h = normalize_heatmap<double>(raw);
    const GridD g = normalize_heatmap_backward(h, dsnt_backward<double>(5, 7, w));
    worst = std::max(worst, check_grid(f, raw, g));
  }
  return verdict("dsnt gradient", worst, 1e-4);
}

SelftestResult js_check(Rng& rng) {
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    const GridD raw = random_grid(6, 6, rng);
    const Heatmap<double> q = normalize_heatmap<double>(random_grid(6, 6, rng));
    auto f = [&](const GridD& r) { return js_divergence(normalize_heatmap<double>(r), q); };
    const Heatmap<double> p = normalize_heatmap<double>(raw);
    worst = std::max(worst, check_grid(f, raw, normalize_heatmap_backward(p, js_divergence_grad_p(p, q))));
  }
  return verdict("js_divergence gradient", worst, 1e-4);
}

SelftestResult center_check(Rng& rng) {
  double worst = 0;
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  for (int t = 0; t < 10; ++t) {
    const std::vector<Vec2<double>> ct = {{u(rng), u(rng)}};
    std::vector<Vec2<double>> cp = {{u(rng), u(rng)}};
    const GridD raw = random_grid(8, 8, rng);
    std::vector<Heatmap<double>> hp = {normalize_heatmap<double>(raw)};
    const CenterLoss<double> cl = center_loss<double>(ct, cp, hp, 1.0, 0.7);
    auto f_h = [&](const GridD& r) {
      std::vector<Heatmap<double>> h = {normalize_heatmap<double>(r)};
      return center_loss<double>(ct, cp, h, 1.0, 0.7, false).center;
    };
    worst = std::max(worst, check_grid(f_h, raw, normalize_heatmap_backward(hp[0], cl.grad_h_pred[0])));
    GridD c(1, 2);
    c << cp[0].x(), cp[0].y();
    auto f_c = [&](const GridD& x) {
      std::vector<Vec2<double>> p = {{x(0, 0), x(0, 1)}};
      return center_loss<double>(ct, p, hp, 1.0, 0.7, false).center;
    };
    GridD gc(1, 2);
    gc << cl.grad_c_pred[0].x(), cl.grad_c_pred[0].y();
    worst = std::max(worst, check_grid(f_c, c, gc));
  }
  return verdict("center_loss gradient", worst, 1e-4);
}

SelftestResult rotation_check(Rng& rng) {
  double worst = 0;
  std::normal_distribution<double> n;
  for (int t = 0; t < 20; ++t) {
    const Vec4<double> a(n(rng), n(rng), n(rng), n(rng)), b(n(rng), n(rng), n(rng), n(rng));
    const std::vector<Quatd> qt = {from_wxyz<double>(a.normalized())};
    const std::vector<Quatd> qp = {from_wxyz<double>(b.normalized())};
    if (std::abs(qt[0].coeffs().dot(qp[0].coeffs())) > 0.99) continue;
    const Vec4<double> g = rotation_loss_grad<double>(qt, qp)[0];
    // Unconstrained extension: the loss as a function of raw components.
    GridD x(1, 4), ga(1, 4);
    for (int k = 0; k < 4; ++k) {
      x(0, k) = wxyz(qp[0])[k];
      ga(0, k) = g[k];
    }
    auto f = [&](const GridD& v) {
      const double d = std::abs(wxyz(qt[0]).dot(Vec4<double>(v(0, 0), v(0, 1), v(0, 2), v(0, 3))));
      return 2 * std::acos(d);
    };
    worst = std::max(worst, check_grid(f, x, ga));
  }
  return verdict("rotation_loss gradient", worst, 1e-4);
}

ModelConfig tiny_config(bool hc) {
  ModelConfig c;
  c.input_h = 32;
  c.input_w = 32;
  c.heat_channels = 2;
  c.crop_size = 16;
  c.k_object = 100;
  c.head_hidden = 8;
  c.position_reduce = 2;
  c.hc_enabled = hc;
  return c;
}

Tensor<double> random_images(int n, int c, int h, int w, Rng& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  Tensor<double> x(n, c, h, w);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = u(rng);
  return x;
}

/// Orientation path: parameters and crop input against central differences.
SelftestResult orientation_model_check(Rng& rng) {
  Model<double> m(tiny_config(true), 3);
  m.train();
  const Tensor<double> rois = random_images(2, m.config().orientation_channels(), 16, 16, rng);
  const std::vector<Quatd> qt = {random_unit_quaternion(rng), random_unit_quaternion(rng)};
  auto loss = [&]() {
    const auto q = m.forward_orientation(rois);
    return rotation_loss<double>(qt, q);
  };
  m.zero_grad();
  const auto q = m.forward_orientation(rois);
  const std::vector<Vec4<double>> gq = rotation_loss_grad<double>(qt, q);
  const Tensor<double> grois = m.backward_orientation(gq);
  double worst = 0;
  m.visit_orientation([&](const std::string&, nn::Parameter<double>& p) {
    if (!p.trainable) return;
    for (Eigen::Index k = 0; k < p.value.size(); k += std::max<Eigen::Index>(1, p.value.size() / 3)) {
      const double x0 = p.value.data()[k];
      const double h = 1e-6;
      p.value.data()[k] = x0 + h;
      const double fp = loss();
      p.value.data()[k] = x0 - h;
      const double fm = loss();
      p.value.data()[k] = x0;
      worst = std::max(worst, rel_err(p.grad.data()[k], (fp - fm) / (2 * h), kNetworkFloor));
    }
  });
  Tensor<double> r2 = rois;
  for (Eigen::Index k = 0; k < r2.size(); k += 97) {
    const double x0 = r2.data()[k];
    const double h = 1e-6;
    r2.data()[k] = x0 + h;
    const double fp = rotation_loss<double>(qt, m.forward_orientation(r2));
    r2.data()[k] = x0 - h;
    const double fm = rotation_loss<double>(qt, m.forward_orientation(r2));
    r2.data()[k] = x0;
    worst = std::max(worst, rel_err(grois.data()[k], (fp - fm) / (2 * h), kNetworkFloor));
  }
  return verdict("orientation network gradient", worst, 1e-4);
}

SelftestResult translation_model_check(Rng& rng) {
  Model<double> m(tiny_config(false), 5);
  m.train();
  const Tensor<double> x = random_images(2, 1, 32, 32, rng);
  const std::vector<Vec3<double>> tt = {{0.1, -0.2, 10}, {0.3, 0.1, 12}};
  const std::vector<Vec2<double>> ct = {{0.1, -0.3}, {-0.2, 0.4}};
  auto loss = [&]() {
    const TranslationOutput<double> o = m.forward_translation(x);
    return position_loss<double>(tt, o.t_pred) +
           center_loss<double>(ct, o.center_pred, o.heatmaps, 1.0, 1.0, false).center;
  };
  m.zero_grad();
  const TranslationOutput<double> o = m.forward_translation(x);
  const CenterLoss<double> cl = center_loss<double>(ct, o.center_pred, o.heatmaps, 1.0, 1.0);
  TranslationGrads<double> g;
  g.t = position_loss_grad<double>(tt, o.t_pred);
  g.center = cl.grad_c_pred;
  g.heatmap = cl.grad_h_pred;
  m.backward_translation(g);
  double worst = 0;
  m.visit_translation([&](const std::string&, nn::Parameter<double>& p) {
    if (!p.trainable) return;
    for (Eigen::Index k = 0; k < p.value.size(); k += std::max<Eigen::Index>(1, p.value.size() / 2)) {
      const double x0 = p.value.data()[k];
      const double h = 1e-6;
      p.value.data()[k] = x0 + h;
      const double fp = loss();
      p.value.data()[k] = x0 - h;
      const double fm = loss();
      p.value.data()[k] = x0;
      worst = std::max(worst, rel_err(p.grad.data()[k], (fp - fm) / (2 * h), kNetworkFloor));
    }
  });
  return verdict("translation network gradient", worst, 1e-4);
}

SelftestResult crop_adjoint_check(Rng& rng) {
  const int c = 2, h = 9, w = 11, s = 5;
  std::uniform_real_distribution<double> u(-3, 12);
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    const CropWindow win{u(rng), u(rng), 2 + std::abs(u(rng)), 2 + std::abs(u(rng))};
    const Tensor<double> x = random_images(1, c, h, w, rng);
    const Tensor<double> gy = random_images(1, c, s, s, rng);
    Tensor<double> y(1, c, s, s), gx(1, c, h, w);
    crop_sample(x.data(), c, h, w, win, s, y.data());
    crop_sample_backward(gy.data(), c, h, w, win, s, gx.data());
    worst = std::max(worst, rel_err((y.array() * gy.array()).sum(), (x.array() * gx.array()).sum()));
  }
  return verdict("crop adjoint identity", worst, 1e-10);
}

SelftestResult gradient_flow_check(bool hc, Rng& rng) {
  Model<double> m(tiny_config(hc), 9);
  m.train();
  const Tensor<double> x = random_images(2, 1, 32, 32, rng);
  m.zero_grad();
  const PoseOutput<double> out = m.forward_pose(x, PoseMode::train, std::nullopt, nullptr);
  const std::vector<Quatd> qt = {random_unit_quaternion(rng), random_unit_quaternion(rng)};
  std::vector<Quatd> qp;
  for (const auto& p : out.poses) qp.push_back(p.q);
  m.backward_pose(nullptr, rotation_loss_grad<double>(qt, qp), true);
  double total = 0;
  m.visit_translation([&](const std::string&, nn::Parameter<double>& p) { total += p.grad.array().abs().sum(); });
  const bool ok = hc ? total > 0 : total == 0;
  std::ostringstream os;
  os << "sum |dL_rot/dtheta_translation| = " << total;
  return {std::string("rotation gradient reaches translation module ") + (hc ? "(HC on)" : "(HC off)"), ok,
          os.str()};
}

SelftestResult invariants_check(Rng& rng) {
  double worst = 0;
  std::uniform_real_distribution<double> ko(100, 5000), z(5, 40);
  for (int t = 0; t < 1000; ++t) {
    RoiConfig cfg;
    cfg.k_object = ko(rng);
    const double depth = z(rng);
    worst = std::max(worst, rel_err(bounding_box({0, 0}, depth, cfg).side * depth, cfg.k_object));
    const Quatd a = random_unit_quaternion(rng), b = random_unit_quaternion(rng);
    worst = std::max(worst, std::abs(geodesic_angle(a, b) - geodesic_angle(b, a)));
    const Quatd nb(-b.w(), -b.x(), -b.y(), -b.z());
    worst = std::max(worst, std::abs(geodesic_angle(a, b) - geodesic_angle(a, nb)));
  }
  return verdict("box law and geodesic symmetries", worst, 1e-9);
}

}  // namespace

std::vector<SelftestResult> run_selftest(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SelftestResult> out;
  out.push_back(dsnt_check(rng));
  out.push_back(js_check(rng));
  out.push_back(center_check(rng));
  out.push_back(rotation_check(rng));
  out.push_back(crop_adjoint_check(rng));
  out.push_back(translation_model_check(rng));
  out.push_back(orientation_model_check(rng));
  out.push_back(gradient_flow_check(false, rng));
  out.push_back(gradient_flow_check(true, rng));
  out.push_back(invariants_check(rng));
  return out;
}

std::vector<std::pair<std::string, std::string>> encoder_tensor_names(Backbone backbone, int in_channels) {
  std::mt19937_64 rng(0);
  nn::Encoder<float> enc(in_channels, encoder_spec(backbone), rng);
  std::vector<std::pair<std::string, std::string>> names;
  enc.visit("encoder.", [&](const std::string& prefix, nn::Parameter<float>& p) {
    names.emplace_back(prefix + p.name, p.value.shape_string());
  });
  return names;
}

}  // namespace lsp
