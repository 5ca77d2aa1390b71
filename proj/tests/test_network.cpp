#include <doctest.h>

#include <cstdio>
#include <unistd.h>

#include "lsp/checkpoint.hpp"
#include "lsp/network.hpp"
#include "support.hpp"

using namespace lsp;
using lsp_test::Gen;
using T = Tensor<double>;

namespace {

T random_tensor(int n, int c, int h, int w, Gen& g, double lo = -1, double hi = 1) {
  T t(n, c, h, w);
  for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = lsp_test::uniform(g, lo, hi);
  return t;
}

double dot(const T& a, const T& b) { return (a.array() * b.array()).sum(); }

// Checks a layer's backward pass against central differences of
// L(x) = <forward(x), R> for a fixed random R, on sampled input and parameter entries.
template <typename Layer, typename Visit>
void check_layer(Layer& layer, T x, Gen& g, Visit&& visit_params, double tol = 1e-5) {
  const T y0 = layer.forward(x);
  const T r = random_tensor(y0.n(), y0.c(), y0.h(), y0.w(), g);
  std::vector<nn::Parameter<double>*> params;
  visit_params([&](const std::string&, nn::Parameter<double>& p) {
    p.grad.set_zero();
    if (p.trainable) params.push_back(&p);
  });
  const T gx = layer.backward(r);
  auto loss = [&] { return dot(layer.forward(x), r); };
  const long stride_x = std::max<long>(1, long(x.size()) / 25);
  for (long k = 0; k < x.size(); k += stride_x) {
    CHECK(lsp_test::rel_err(gx.data()[k], lsp_test::central_diff(loss, x.data(), k), 1e-3) < tol);
  }
  for (auto* p : params) {
    const T grad = p->grad;
    const long stride = std::max<long>(1, long(p->value.size()) / 10);
    for (long k = 0; k < p->value.size(); k += stride) {
      INFO(p->name);
      CHECK(lsp_test::rel_err(grad.data()[k], lsp_test::central_diff(loss, p->value.data(), k), 1e-3) < tol);
    }
  }
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_h = 32;
  c.input_w = 40;
  c.crop_size = 16;
  c.heat_channels = 4;
  c.head_hidden = 8;
  c.position_reduce = 2;
  c.k_object = 60;
  return c;
}

// Captures everything written to stderr while f runs.
template <typename F>
std::string capture_stderr(F&& f) {
  std::fflush(stderr);
  const int saved = dup(2);
  std::FILE* tmp = std::tmpfile();
  dup2(fileno(tmp), 2);
  f();
  std::fflush(stderr);
  dup2(saved, 2);
  close(saved);
  std::rewind(tmp);
  std::string out;
  char buf[512];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, tmp)) > 0) out.append(buf, n);
  std::fclose(tmp);
  return out;
}

}  // namespace

TEST_CASE("layer gradients match central differences") {
  Gen g(1);
  std::mt19937_64 init(2);
  SUBCASE("conv with stride and padding") {
    nn::Conv2d<double> conv(3, 4, 3, 2, 1, true, init);
    check_layer(conv, random_tensor(2, 3, 7, 6, g), g, [&](auto f) { conv.visit("", f); });
  }
  SUBCASE("1x1 conv") {
    nn::Conv2d<double> conv(5, 2, 1, 1, 0, false, init);
    check_layer(conv, random_tensor(2, 5, 4, 4, g), g, [&](auto f) { conv.visit("", f); });
  }
  SUBCASE("batch norm in training mode") {
    nn::BatchNorm2d<double> bn(3);
    bn.set_training(true);
    check_layer(bn, random_tensor(4, 3, 3, 3, g), g, [&](auto f) { bn.visit("", f); });
  }
  SUBCASE("linear") {
    nn::Linear<double> fc(6, 3, init);
    check_layer(fc, random_tensor(3, 6, 1, 1, g), g, [&](auto f) { fc.visit("", f); });
  }
  SUBCASE("max pool") {
    nn::MaxPool2d<double> pool;
    check_layer(pool, random_tensor(2, 2, 7, 8, g), g, [](auto) {});
  }
  SUBCASE("residual block with projection") {
    nn::BasicBlock<double> block(3, 5, 2, init);
    block.set_training(true);
    check_layer(block, random_tensor(3, 3, 6, 6, g), g, [&](auto f) { block.visit("", f); }, 1e-4);
  }
}

TEST_CASE("resampling helpers are adjoint to their backward passes") {
  Gen g(3);
  const T x = random_tensor(2, 3, 5, 4, g);
  const T up = nn::upsample_nearest(x, 11, 9);
  const T r = random_tensor(2, 3, 11, 9, g);
  CHECK(dot(up, r) == doctest::Approx(dot(x, nn::upsample_nearest_backward(r, 5, 4))).epsilon(1e-12));
  const T pooled = nn::adaptive_avg_pool(x, 3, 2);
  const T rp = random_tensor(2, 3, 3, 2, g);
  CHECK(dot(pooled, rp) == doctest::Approx(dot(x, nn::adaptive_avg_pool_backward(rp, 5, 4))).epsilon(1e-12));
  const T gap = nn::global_avg_pool(x);
  const T rg = random_tensor(2, 3, 1, 1, g);
  CHECK(dot(gap, rg) == doctest::Approx(dot(x, nn::global_avg_pool_backward(rg, 5, 4))).epsilon(1e-12));
}

TEST_CASE("model outputs have the documented shapes and unit quaternions") {
  Gen g(4);
  for (bool hc : {false, true}) {
    ModelConfig cfg = tiny_config();
    cfg.hc_enabled = hc;
    Model<double> m(cfg, 5);
    m.eval();
    const T images = random_tensor(3, 1, 32, 40, g, 0, 1);
    const PoseOutput<double> out = m.forward_pose(images, PoseMode::eval, std::nullopt, nullptr);
    REQUIRE(out.poses.size() == 3);
    CHECK(out.translation.heatstack.c() == 4);
    CHECK(out.translation.heatstack.h() == 32);
    CHECK(out.translation.heatstack.w() == 40);
    CHECK(out.rois.c() == (hc ? 5 : 1));
    CHECK(out.rois.h() == 16);
    for (const auto& p : out.poses) {
      CHECK(std::abs(p.q.norm() - 1) < 1e-6);
      CHECK(p.t.allFinite());
    }
    for (const auto& h : out.translation.heatmaps) {
      CHECK(h.values.sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(h.values.minCoeff() >= 0);
    }
  }
}

TEST_CASE("orientation network tolerates an all-zero crop") {
  Model<double> m(tiny_config(), 6);
  m.eval();
  const std::vector<Quatd> q = m.forward_orientation(T(2, 1, 16, 16));
  for (const Quatd& x : q) {
    CHECK(x.coeffs().allFinite());
    CHECK(std::abs(x.norm() - 1) < 1e-6);
  }
}

TEST_CASE("eval mode is idempotent and construction is deterministic") {
  Gen g(7);
  const T images = random_tensor(2, 1, 32, 40, g, 0, 1);
  Model<double> a(tiny_config(), 11), b(tiny_config(), 11);
  a.eval();
  b.eval();
  const auto p1 = a.forward_pose(images, PoseMode::eval, std::nullopt, nullptr);
  const auto p2 = a.forward_pose(images, PoseMode::eval, std::nullopt, nullptr);
  const auto p3 = b.forward_pose(images, PoseMode::eval, std::nullopt, nullptr);
  for (int i = 0; i < 2; ++i) {
    CHECK(p1.poses[i].t == p2.poses[i].t);
    CHECK(p1.poses[i].q.coeffs() == p2.poses[i].q.coeffs());
    CHECK(p1.poses[i].t == p3.poses[i].t);
    CHECK(p1.poses[i].q.coeffs() == p3.poses[i].q.coeffs());
  }
  Model<double> c(tiny_config(), 12);
  c.eval();
  CHECK(c.forward_pose(images, PoseMode::eval, std::nullopt, nullptr).poses[0].t != p1.poses[0].t);
}

TEST_CASE("large backbone has more parameters than small") {
  ModelConfig small = tiny_config(), large = tiny_config();
  large.backbone = Backbone::large;
  CHECK(Model<float>(large, 1).parameter_count() > Model<float>(small, 1).parameter_count());
}

TEST_CASE("heatmap gradients reach the translation encoder only with concatenation") {
  Gen g(8);
  const T images = random_tensor(2, 1, 32, 40, g, 0, 1);
  for (bool hc : {false, true}) {
    ModelConfig cfg = tiny_config();
    cfg.hc_enabled = hc;
    Model<double> m(cfg, 9);
    m.train();
    m.zero_grad();
    Rng rng(1);
    const auto out = m.forward_pose(images, PoseMode::train, std::nullopt, &rng);
    const std::vector<Vec4<double>> gq(2, Vec4<double>(0.3, -0.2, 0.5, 0.1));
    m.backward_pose(nullptr, gq, true);
    double norm = 0;
    m.visit_translation([&](const std::string&, nn::Parameter<double>& p) { norm += p.grad.array().abs().sum(); });
    if (hc) {
      CHECK(norm > 0);
    } else {
      CHECK(norm == 0);
    }
  }
}

TEST_CASE("pretrained encoder initialization") {
  const auto dir = lsp_test::scratch("network_pretrained");
  ModelConfig cfg = tiny_config();

  SUBCASE("missing archive is a configuration error") {
    cfg.position_init = InitMode::pretrained;
    cfg.pretrained_path = (dir / "absent.lsp").string();
    CHECK_THROWS_AS(build_model<float>(cfg, 1), ConfigError);
  }

  SUBCASE("three-channel first layer is averaged and extra channels start at zero") {
    // Build a three-channel archive from a 3-channel model's encoder.
    ModelConfig rgb = cfg;
    rgb.image_channels = 3;
    Model<double> donor(rgb, 3);
    const auto path = dir / "rgb.lsp";
    donor.save_encoder(path.string(), false);
    const TensorArchive ar = load_archive(path);
    const T& w3 = ar.tensors.at("encoder.conv1.weight");
    REQUIRE(w3.c() == 3);

    cfg.hc_enabled = true;
    cfg.position_init = InitMode::pretrained;
    cfg.orientation_init = InitMode::pretrained;
    cfg.pretrained_path = path.string();
    std::optional<Model<double>> m;
    const std::string err = capture_stderr([&] { m.emplace(build_model<double>(cfg, 4)); });
    CHECK(err.find("random init is recommended") != std::string::npos);

    const T& wp = m->translation_encoder().stem_conv().weight().value;
    const T& wo = m->orientation_encoder().stem_conv().weight().value;
    REQUIRE(wp.c() == 1);
    REQUIRE(wo.c() == 1 + cfg.heat_channels);
    for (int o = 0; o < w3.n(); ++o) {
      const Eigen::MatrixXd avg = (w3.plane(o, 0) + w3.plane(o, 1) + w3.plane(o, 2)) / double(cfg.image_channels);
      CHECK((wp.plane(o, 0) - avg).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((wo.plane(o, 0) - avg).cwiseAbs().maxCoeff() < 1e-12);
      for (int c = 1; c < wo.c(); ++c) CHECK(wo.plane(o, c).cwiseAbs().maxCoeff() == 0.0);
    }
  }

  SUBCASE("no warning without concatenation") {
    Model<double> donor(cfg, 3);
    const auto path = dir / "gray.lsp";
    donor.save_encoder(path.string(), false);
    cfg.orientation_init = InitMode::pretrained;
    cfg.pretrained_path = path.string();
    const std::string err = capture_stderr([&] { (void)build_model<double>(cfg, 4); });
    CHECK(err.find("recommended") == std::string::npos);
  }
}

TEST_CASE("adaptive pooling uses overlapping bins when sizes do not divide") {
  T x(1, 1, 1, 6);
  for (int k = 0; k < 6; ++k) x(0, 0, 0, k) = k * k;
  const T p = nn::adaptive_avg_pool(x, 1, 4);
  // Bins of 6 columns into 4: [0,2) [1,3) [3,5) [4,6).
  CHECK(p(0, 0, 0, 0) == doctest::Approx(0.5));
  CHECK(p(0, 0, 0, 1) == doctest::Approx(2.5));
  CHECK(p(0, 0, 0, 2) == doctest::Approx(12.5));
  CHECK(p(0, 0, 0, 3) == doctest::Approx(20.5));
  const T same = nn::adaptive_avg_pool(x, 1, 6);
  CHECK(dot(same, same) == doctest::Approx(dot(x, x)));
}

TEST_CASE("orientation head gradients match central differences for every pooling grid") {
  for (int pool : {1, 2, 3}) {
    INFO("orientation_pool " << pool);
    Gen g(50 + pool);
    ModelConfig cfg = tiny_config();
    cfg.crop_size = 48;  // 3 x 3 encoder features
    cfg.orientation_pool = pool;
    Model<double> m(cfg, 9);
    m.train();
    T rois = random_tensor(2, 1, 48, 48, g);
    const T rt = random_tensor(2, 4, 1, 1, g);
    std::vector<Vec4<double>> r(2);
    for (int i = 0; i < 2; ++i) r[i] << rt(i, 0, 0, 0), rt(i, 1, 0, 0), rt(i, 2, 0, 0), rt(i, 3, 0, 0);
    auto loss = [&] {
      const auto q = m.forward_orientation(rois);
      return wxyz(q[0]).dot(r[0]) + wxyz(q[1]).dot(r[1]);
    };
    loss();
    m.zero_grad();
    const T grois = m.backward_orientation(r);
    for (long k = 0; k < rois.size(); k += 397) {
      CHECK(lsp_test::rel_err(grois.data()[k], lsp_test::central_diff(loss, rois.data(), k), 1e-3) < 1e-5);
    }
    m.visit_orientation([&](const std::string& name, nn::Parameter<double>& p) {
      if (name.find("fc1.weight") == std::string::npos) return;
      const T grad = p.grad;
      for (long k = 0; k < p.value.size(); k += p.value.size() / 7) {
        CHECK(lsp_test::rel_err(grad.data()[k], lsp_test::central_diff(loss, p.value.data(), k), 1e-3) < 1e-5);
      }
    });
  }
}
