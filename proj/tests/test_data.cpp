#include <doctest.h>

#include <fstream>
#include <numbers>
#include <set>

#include "lsp/data.hpp"
#include "lsp/image_io.hpp"
#include "support.hpp"

using namespace lsp;
using lsp_test::Gen;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

void write_blank_png(const fs::path& p, int w, int h) {
  Tensor<float> img(1, 1, h, w);
  write_png(p, img);
}

Manifest small_manifest(const fs::path& root, int n) {
  Manifest m;
  m.root = root;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.filename = "img" + std::to_string(i) + ".png";
    s.pose.t = Vec3d(0.1 * i, -0.2, 10 + i);
    s.pose.q = Quatd(1, 0, 0, 0);
    s.intrinsics = {240, 240, 63.5, 63.5, 128, 128};
    s.center_px = project_center(s.pose.t, s.intrinsics);
    m.samples.push_back(s);
  }
  return m;
}

}  // namespace

TEST_CASE("quaternion order conversion") {
  const Quatd a = quat_from_file({0.5, 0.1, 0.2, 0.3}, QuatOrder::wxyz);
  const Quatd b = quat_from_file({0.1, 0.2, 0.3, 0.5}, QuatOrder::xyzw);
  CHECK(a.w() == 0.5);
  CHECK(a.coeffs() == b.coeffs());
  CHECK(parse_quat_order("xyzw") == QuatOrder::xyzw);
  CHECK_THROWS(parse_quat_order("zyxw"));
}

TEST_CASE("manifest round trip") {
  const fs::path dir = lsp_test::scratch("data_manifest");
  Manifest m = generate_synthetic(4, SceneConfig{}, 3, dir);
  const Manifest r = read_manifest(dir / "manifest.jsonl");
  REQUIRE(r.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(r.samples[i].filename == m.samples[i].filename);
    CHECK(r.samples[i].pose.t == m.samples[i].pose.t);
    CHECK(r.samples[i].pose.q.coeffs() == m.samples[i].pose.q.coeffs());
    CHECK(r.samples[i].center_px.u == m.samples[i].center_px.u);
  }
  CHECK(validate_manifest(r).empty());
  write_manifest(dir / "copy.jsonl", r);
  CHECK(lsp_test::read_file(dir / "copy.jsonl") == lsp_test::read_file(dir / "manifest.jsonl"));
}

TEST_CASE("cached centers agree with the projection of each label") {
  const fs::path dir = lsp_test::scratch("data_centers");
  const Manifest m = generate_synthetic(20, SceneConfig{}, 5, dir);
  for (const Sample& s : m.samples) {
    const PixelCoord p = project_center(s.pose.t, s.intrinsics);
    CHECK(std::abs(p.u - s.center_px.u) <= 1e-9);
    CHECK(std::abs(p.v - s.center_px.v) <= 1e-9);
  }
}

TEST_CASE("synthetic generation is byte-identical for a fixed seed") {
  const fs::path a = lsp_test::scratch("data_gen_a"), b = lsp_test::scratch("data_gen_b");
  const Manifest ma = generate_synthetic(8, SceneConfig{}, 7, a);
  const Manifest mb = generate_synthetic(8, SceneConfig{}, 7, b);
  CHECK(lsp_test::read_file(a / "manifest.jsonl") == lsp_test::read_file(b / "manifest.jsonl"));
  for (std::size_t i = 0; i < 8; ++i) {
    const std::string ia = lsp_test::read_file(ma.image_path(ma.samples[i]));
    CHECK(!ia.empty());
    CHECK(ia == lsp_test::read_file(mb.image_path(mb.samples[i])));
  }
  const fs::path c = lsp_test::scratch("data_gen_c");
  generate_synthetic(8, SceneConfig{}, 8, c);
  CHECK(lsp_test::read_file(a / "manifest.jsonl") != lsp_test::read_file(c / "manifest.jsonl"));
}

TEST_CASE("synthetic orientations are uniform on SO(3)") {
  Rng rng(13);
  std::vector<Quatd> q;
  for (int i = 0; i < 1500; ++i) q.push_back(random_unit_quaternion(rng));
  double sum = 0;
  long count = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t j = i + 1; j < q.size(); j += 3) {
      sum += geodesic_angle(q[i], q[j]);
      ++count;
    }
  }
  // Mean rotation angle of a uniform rotation: pi/2 + 2/pi.
  CHECK(sum / count == doctest::Approx(std::numbers::pi / 2 + 2 / std::numbers::pi).epsilon(0.01));
}

TEST_CASE("ingest accepts valid records and rejects bad ones") {
  const fs::path dir = lsp_test::scratch("data_ingest");
  for (int i = 0; i < 4; ++i) write_blank_png(dir / ("img" + std::to_string(i) + ".png"), 24, 16);
  const CameraIntrinsics cam{30, 30, 11.5, 7.5, 24, 16};

  SUBCASE("three valid records") {
    write_text(dir / "labels.json", R"([
      {"filename": "img0.png", "q": [1, 0, 0, 0], "t": [0, 0, 10]},
      {"filename": "img1.png", "q": [0, 1, 0, 0], "t": [0.5, 0.1, 12]},
      {"filename": "img2.png", "q": [0.5, 0.5, 0.5, 0.5], "t": [-0.5, 0, 8]}])");
    const IngestResult r = ingest_speed_format(dir, dir / "labels.json", QuatOrder::wxyz, cam);
    REQUIRE(r.manifest.size() == 3);
    CHECK(r.rejected.empty());
    CHECK(r.manifest.samples[0].center_px.u == doctest::Approx(11.5));
    CHECK(r.manifest.samples[1].pose.q.x() == doctest::Approx(1));
  }
  SUBCASE("a five-element quaternion names the record") {
    write_text(dir / "labels.json", R"([
      {"filename": "img0.png", "q": [1, 0, 0, 0], "t": [0, 0, 10]},
      {"filename": "img1.png", "q": [1, 0, 0, 0, 0], "t": [0, 0, 10]}])");
    try {
      ingest_speed_format(dir, dir / "labels.json", QuatOrder::wxyz, cam);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("img1.png") != std::string::npos);
      CHECK(msg.find("5 elements") != std::string::npos);
    }
  }
  SUBCASE("a target behind the camera is rejected") {
    write_text(dir / "labels.json", R"([
      {"filename": "img0.png", "q": [1, 0, 0, 0], "t": [0, 0, 10]},
      {"filename": "img3.png", "q": [1, 0, 0, 0], "t": [0, 0, -1]}])");
    const IngestResult r = ingest_speed_format(dir, dir / "labels.json", QuatOrder::wxyz, cam);
    CHECK(r.manifest.size() == 1);
    REQUIRE(r.rejected.size() == 1);
    CHECK(r.rejected[0].find("img3.png") != std::string::npos);
  }
  SUBCASE("missing images are reported") {
    write_text(dir / "labels.json", R"([{"filename": "nope.png", "q": [1, 0, 0, 0], "t": [0, 0, 10]}])");
    CHECK_THROWS_AS(ingest_speed_format(dir, dir / "labels.json", QuatOrder::wxyz, cam), DataError);
  }
  SUBCASE("custom key names") {
    write_text(dir / "labels.json", R"([{"image": "img0.png", "q_vbs2tango": [0, 0, 0, 1], "r_Vo2To_vbs_true": [0, 0, 10]}])");
    SpeedKeyMap keys{"image", "q_vbs2tango", "r_Vo2To_vbs_true"};
    const IngestResult r = ingest_speed_format(dir, dir / "labels.json", QuatOrder::xyzw, cam, keys);
    REQUIRE(r.manifest.size() == 1);
    CHECK(r.manifest.samples[0].pose.q.w() == doctest::Approx(1));
  }
}

TEST_CASE("split is seeded, disjoint and bounded") {
  const Manifest m = small_manifest("/tmp", 30);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto [train, val] = split_manifest(m, 20, 10, seed);
    REQUIRE(train.size() == 20);
    REQUIRE(val.size() == 10);
    std::set<std::string> names;
    for (const auto& s : train.samples) names.insert(s.filename);
    for (const auto& s : val.samples) names.insert(s.filename);
    CHECK(names.size() == 30);
    const auto again = split_manifest(m, 20, 10, seed);
    for (std::size_t i = 0; i < 20; ++i) CHECK(again.first.samples[i].filename == train.samples[i].filename);
  }
  const auto s1 = split_manifest(m, 20, 10, 1).first, s2 = split_manifest(m, 20, 10, 2).first;
  bool differs = false;
  for (std::size_t i = 0; i < 20; ++i) differs |= s1.samples[i].filename != s2.samples[i].filename;
  CHECK(differs);
  CHECK_THROWS_AS(split_manifest(m, 25, 10, 0), DataError);
}

TEST_CASE("preprocessing rescales centers but never translations") {
  const fs::path dir = lsp_test::scratch("data_pre");
  write_blank_png(dir / "big.png", 1920, 1200);
  Manifest m;
  m.root = dir;
  Sample s;
  s.filename = "big.png";
  s.pose.t = Vec3d(0, 0, 10);
  s.pose.q = Quatd(1, 0, 0, 0);
  s.intrinsics = {3003.41, 3003.41, 960, 600, 1920, 1200};
  s.center_px = project_center(s.pose.t, s.intrinsics);
  m.samples.push_back(s);
  const Preprocessed p = preprocess(m, s, 256, 409);
  CHECK(p.image.h() == 256);
  CHECK(p.image.w() == 409);
  CHECK(p.t == s.pose.t);
  CHECK(p.original.width == 1920);
  const PixelCoord c = normalized_to_pixel(p.center, 409, 256);
  CHECK(c.u == doctest::Approx(204.5));
  CHECK(c.v == doctest::Approx(128.0));
}

TEST_CASE("manifest validation reports stale centers") {
  const fs::path dir = lsp_test::scratch("data_validate");
  Manifest m = generate_synthetic(3, SceneConfig{}, 1, dir);
  m.samples[1].center_px.u += 3;
  const auto problems = validate_manifest(m);
  REQUIRE(problems.size() == 1);
  fs::remove(m.image_path(m.samples[2]));
  CHECK(validate_manifest(m).size() == 2);
}

TEST_CASE("camera roll keeps image and labels consistent") {
  Gen g(41);
  SceneConfig scene;
  scene.noise_sigma = 0.0;
  scene.clutter_probability = 0.0;
  const SpacecraftModel craft = SpacecraftModel::standard();
  const CameraIntrinsics& k = scene.camera;
  for (int trial = 0; trial < 4; ++trial) {
    Posed pose;
    pose.t = Vec3d(lsp_test::uniform(g, -1, 1), lsp_test::uniform(g, -1, 1), lsp_test::uniform(g, 12, 16));
    pose.q = lsp_test::random_quat(g);
    const double alpha = (trial % 2 ? -1.0 : 1.0) * lsp_test::uniform(g, 0.5, 3.0);
    const Posed rolled = roll_pose(pose, alpha);

    // The rolled center is the original one turned about the principal point.
    const PixelCoord c0 = project_center(pose.t, k), c1 = project_center(rolled.t, k);
    const double du = c0.u - k.cx, dv = c0.v - k.cy;
    CHECK(c1.u - k.cx == doctest::Approx(std::cos(alpha) * du - std::sin(alpha) * dv).epsilon(1e-9));
    CHECK(c1.v - k.cy == doctest::Approx(std::sin(alpha) * du + std::cos(alpha) * dv).epsilon(1e-9));
    const PixelCoord moved = roll_pixel(c0, k, alpha);
    CHECK(moved.u == doctest::Approx(c1.u).epsilon(1e-9));
    CHECK(moved.v == doctest::Approx(c1.v).epsilon(1e-9));
    CHECK(rolled.t.z() == doctest::Approx(pose.t.z()));
    CHECK(rolled.q.norm() == doctest::Approx(1.0));

    // The silhouette of a warped render must match a render of the rolled pose
    // (shading differs since the light is fixed in the camera frame).
    Rng r0(1), r1(1), r2(1);
    const Tensor<float> warped = roll_image(render_scene(craft, pose, scene, false, r0), k, alpha);
    const Tensor<float> direct = render_scene(craft, rolled, scene, false, r1);
    const Tensor<float> unrolled = render_scene(craft, pose, scene, false, r2);
    double diff = 0, base = 0;
    for (int y = 0; y < k.height; ++y) {
      for (int x = 0; x < k.width; ++x) {
        if (std::hypot(x - k.cx, y - k.cy) > 55) continue;
        const bool d = direct(0, 0, y, x) > 0.05f;
        diff += (warped(0, 0, y, x) > 0.05f) != d;
        base += (unrolled(0, 0, y, x) > 0.05f) != d;
      }
    }
    CHECK(diff < 0.1 * base);
  }
}
