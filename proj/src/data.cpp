#include "lsp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lsp/image_io.hpp"
#include "lsp/log.hpp"
#include "lsp/parallel.hpp"

namespace lsp {

using nlohmann::json;
namespace fs = std::filesystem;

QuatOrder parse_quat_order(const std::string& s) {
  if (s == "wxyz") return QuatOrder::wxyz;
  if (s == "xyzw") return QuatOrder::xyzw;
  throw ConfigError("unknown quaternion order '" + s + "' (expected wxyz|xyzw)");
}

std::string to_string(QuatOrder o) { return o == QuatOrder::wxyz ? "wxyz" : "xyzw"; }

std::string to_string(SplitTag s) {
  switch (s) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
    case SplitTag::all: break;
  }
  return "all";
}

std::string to_string(DataSource s) { return s == DataSource::synthetic ? "synthetic" : "speed_format"; }

namespace {

SplitTag parse_split(const std::string& s) {
  if (s == "train") return SplitTag::train;
  if (s == "val") return SplitTag::val;
  if (s == "test") return SplitTag::test;
  return SplitTag::all;
}

DataSource parse_source(const std::string& s) {
  return s == "speed_format" ? DataSource::speed_format : DataSource::synthetic;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

fs::path absolute_normal(const fs::path& p) { return fs::absolute(p).lexically_normal(); }

}  // namespace

Quatd quat_from_file(const std::array<double, 4>& v, QuatOrder order) {
  return order == QuatOrder::wxyz ? Quatd(v[0], v[1], v[2], v[3]) : Quatd(v[3], v[0], v[1], v[2]);
}

fs::path Manifest::image_path(const Sample& s) const {
  const fs::path p(s.filename);
  return p.is_absolute() ? p : root / p;
}

Manifest read_manifest(const fs::path& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty manifest");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  }
  if (header.value("format", "") != kManifestFormat) {
    throw DataError(path.string() + ": unsupported manifest format '" + header.value("format", "") + "'");
  }
  m.quaternion_order = parse_quat_order(header.value("quat_order", "wxyz"));
  m.seed = header.value("seed", std::uint64_t{0});
  m.split = parse_split(header.value("split", "all"));
  m.source = parse_source(header.value("source", "synthetic"));
  CameraIntrinsics k;
  try {
    k.fx = header.at("fx");
    k.fy = header.at("fy");
    k.cx = header.at("cx");
    k.cy = header.at("cy");
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": header lacks intrinsics: " + e.what());
  }
  std::vector<std::string> errors;
  std::set<std::string> seen;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const json j = json::parse(line);
      Sample s;
      s.filename = j.at("filename").get<std::string>();
      const auto q = j.at("q").get<std::vector<double>>();
      const auto t = j.at("t").get<std::vector<double>>();
      if (q.size() != 4 || t.size() != 3) {
        errors.push_back(where + ": q must have 4 and t 3 elements");
        continue;
      }
      s.pose.q = quat_from_file({q[0], q[1], q[2], q[3]}, m.quaternion_order);
      s.pose.t = Vec3d(t[0], t[1], t[2]);
      s.intrinsics = k;
      s.intrinsics.width = j.at("w");
      s.intrinsics.height = j.at("h");
      if (j.contains("clutter")) s.clutter = j.at("clutter").get<bool>();
      s.center_px = project_center(s.pose.t, s.intrinsics, where);
      if (!seen.insert(s.filename).second) errors.push_back(where + ": duplicate filename " + s.filename);
      if (check_files && !fs::exists(m.image_path(s))) {
        errors.push_back(where + ": missing image " + m.image_path(s).string());
      }
      m.samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      errors.push_back(where + ": " + e.what());
    } catch (const DomainError& e) {
      errors.push_back(e.what());
    }
  }
  if (!errors.empty()) {
    std::ostringstream os;
    os << path.string() << ": " << errors.size() << " invalid record(s)";
    for (std::size_t i = 0; i < std::min<std::size_t>(errors.size(), 20); ++i) os << "\n  " << errors[i];
    throw DataError(os.str());
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& m) {
  const fs::path dest_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  fs::create_directories(dest_dir);
  const CameraIntrinsics k = m.samples.empty() ? CameraIntrinsics{} : m.samples.front().intrinsics;
  for (const Sample& s : m.samples) {
    if (s.intrinsics.fx != k.fx || s.intrinsics.fy != k.fy || s.intrinsics.cx != k.cx ||
        s.intrinsics.cy != k.cy) {
      throw DataError("write_manifest: samples with differing intrinsics cannot share a header");
    }
  }
  std::ostringstream os;
  const json header = {{"format", kManifestFormat}, {"quat_order", "wxyz"}, {"fx", k.fx},
                       {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"seed", m.seed},
                       {"source", to_string(m.source)}, {"split", to_string(m.split)}};
  os << header.dump() << '\n';
  const fs::path dest_abs = absolute_normal(dest_dir);
  for (const Sample& s : m.samples) {
    const fs::path rel = absolute_normal(m.image_path(s)).lexically_relative(dest_abs);
    json j = {{"filename", rel.generic_string()},
              {"q", {s.pose.q.w(), s.pose.q.x(), s.pose.q.y(), s.pose.q.z()}},
              {"t", {s.pose.t.x(), s.pose.t.y(), s.pose.t.z()}},
              {"w", s.intrinsics.width},
              {"h", s.intrinsics.height}};
    if (s.clutter) j["clutter"] = *s.clutter;
    os << j.dump() << '\n';
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << os.str();
}

SpeedKeyMap SpeedKeyMap::from_file(const fs::path& path) {
  const json j = read_json_file(path);
  SpeedKeyMap k;
  k.filename_key = j.value("filename_key", k.filename_key);
  k.q_key = j.value("q_key", k.q_key);
  k.t_key = j.value("t_key", k.t_key);
  return k;
}

IngestResult ingest_speed_format(const fs::path& root_dir, const fs::path& label_file, QuatOrder order,
                                 const CameraIntrinsics& camera, const SpeedKeyMap& keys) {
  camera.validate();
  const json labels = read_json_file(label_file);
  if (!labels.is_array()) throw DataError(label_file.string() + ": expected a JSON array of records");
  IngestResult res;
  res.manifest.root = root_dir;
  res.manifest.source = DataSource::speed_format;
  res.manifest.quaternion_order = order;
  std::vector<std::string> errors;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const json& r = labels[i];
    std::string name = "record " + std::to_string(i);
    if (r.is_object() && r.contains(keys.filename_key) && r[keys.filename_key].is_string()) {
      name += " (" + r[keys.filename_key].get<std::string>() + ")";
    } else {
      errors.push_back(name + ": missing string key '" + keys.filename_key + "'");
      continue;
    }
    auto numbers = [&](const std::string& key, std::size_t arity) -> std::optional<std::vector<double>> {
      if (!r.contains(key) || !r[key].is_array()) {
        errors.push_back(name + ": missing array '" + key + "'");
        return std::nullopt;
      }
      if (r[key].size() != arity) {
        errors.push_back(name + ": '" + key + "' has " + std::to_string(r[key].size()) +
                         " elements, expected " + std::to_string(arity));
        return std::nullopt;
      }
      std::vector<double> v;
      for (const auto& e : r[key]) {
        if (!e.is_number()) {
          errors.push_back(name + ": '" + key + "' contains a non-number");
          return std::nullopt;
        }
        v.push_back(e.get<double>());
      }
      return v;
    };
    const auto q = numbers(keys.q_key, 4);
    const auto t = numbers(keys.t_key, 3);
    if (!q || !t) continue;
    Sample s;
    s.filename = r[keys.filename_key].get<std::string>();
    s.pose.t = Vec3d((*t)[0], (*t)[1], (*t)[2]);
    if (!(s.pose.t.z() > 0)) {
      res.rejected.push_back(name + ": non-positive depth z=" + std::to_string(s.pose.t.z()));
      continue;
    }
    const Quatd raw = quat_from_file({(*q)[0], (*q)[1], (*q)[2], (*q)[3]}, order);
    try {
      s.pose.q = normalize_quaternion<double>(wxyz(raw));
    } catch (const NumericError&) {
      errors.push_back(name + ": zero quaternion");
      continue;
    }
    const fs::path img = root_dir / s.filename;
    if (!fs::exists(img)) {
      errors.push_back(name + ": missing image " + img.string());
      continue;
    }
    const ImageSize size = read_image_size(img);
    s.intrinsics = camera;
    s.intrinsics.width = size.width;
    s.intrinsics.height = size.height;
    s.center_px = project_center(s.pose.t, s.intrinsics, name);
    res.manifest.samples.push_back(std::move(s));
  }
  if (!errors.empty()) {
    std::ostringstream os;
    os << label_file.string() << ": " << errors.size() << " invalid record(s)";
    for (const auto& e : errors) os << "\n  " << e;
    throw DataError(os.str());
  }
  for (const auto& r : res.rejected) log_warn("ingest: rejected " + r);
  return res;
}

Manifest generate_synthetic(int n, const SceneConfig& cfg, std::uint64_t seed, const fs::path& out_dir) {
  if (n < 1) throw ConfigError("generate_synthetic: n must be >= 1");
  cfg.camera.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  const SpacecraftModel model = SpacecraftModel::standard();
  Manifest m;
  m.root = out_dir;
  m.seed = seed;
  m.source = DataSource::synthetic;
  m.samples.resize(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    Rng rng(seq);
    Sample s;
    s.pose = sample_pose(cfg, rng);
    const bool clutter = std::uniform_real_distribution<double>(0, 1)(rng) < cfg.clutter_probability;
    s.clutter = clutter;
    s.intrinsics = cfg.camera;
    s.center_px = project_center(s.pose.t, s.intrinsics);
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06zu.png", i);
    s.filename = name;
    write_png(out_dir / s.filename, render_scene(model, s.pose, cfg, clutter, rng));
    m.samples[i] = std::move(s);
  });
  write_manifest(out_dir / "manifest.jsonl", m);
  return m;
}

std::pair<Manifest, Manifest> split_manifest(const Manifest& m, std::size_t n_train, std::size_t n_val,
                                             std::uint64_t seed) {
  if (n_train + n_val > m.size()) {
    throw DataError("split_manifest: requested " + std::to_string(n_train) + " + " +
                    std::to_string(n_val) + " samples from a manifest of " + std::to_string(m.size()));
  }
  std::vector<std::size_t> idx(m.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  Manifest train = m, val = m;
  train.samples.clear();
  val.samples.clear();
  train.split = SplitTag::train;
  val.split = SplitTag::val;
  for (std::size_t k = 0; k < n_train; ++k) train.samples.push_back(m.samples[idx[k]]);
  for (std::size_t k = n_train; k < n_train + n_val; ++k) val.samples.push_back(m.samples[idx[k]]);
  return {std::move(train), std::move(val)};
}

Preprocessed preprocess(const Manifest& m, const Sample& s, int target_h, int target_w, int channels) {
  Preprocessed p;
  const Tensor<float> img = read_image(m.image_path(s), channels);
  p.original = {img.w(), img.h()};
  p.image = resize_bilinear(img, target_h, target_w);
  const double u = s.center_px.u * double(target_w) / img.w();
  const double v = s.center_px.v * double(target_h) / img.h();
  p.center = Vec2<double>(pixel_to_normalized_axis(u, target_w), pixel_to_normalized_axis(v, target_h));
  p.t = s.pose.t;
  p.q = s.pose.q;
  return p;
}

std::vector<std::string> validate_manifest(const Manifest& m) {
  std::vector<std::string> problems;
  for (const Sample& s : m.samples) {
    try {
      const PixelCoord c = project_center(s.pose.t, s.intrinsics, s.filename);
      if (std::abs(c.u - s.center_px.u) > 1e-6 || std::abs(c.v - s.center_px.v) > 1e-6) {
        problems.push_back(s.filename + ": cached center disagrees with projected translation");
      }
    } catch (const DomainError& e) {
      problems.push_back(e.what());
    }
    if (!is_unit(s.pose.q)) problems.push_back(s.filename + ": quaternion is not unit norm");
    if (!fs::exists(m.image_path(s))) problems.push_back(s.filename + ": image file missing");
  }
  return problems;
}

KoCalibration calibrate_k_object(const Manifest& m, double fill, double threshold,
                                 std::size_t max_samples) {
  if (!(fill > 0 && fill <= 1)) throw ConfigError("calibrate_k_object: fill must be in (0, 1]");
  KoCalibration cal;
  std::vector<double> products;
  for (const Sample& s : m.samples) {
    if (products.size() >= max_samples) break;
    if (s.clutter.value_or(false)) {
      ++cal.skipped;
      continue;
    }
    const Tensor<float> img = read_image(m.image_path(s), 1);
    double half = -1;
    for (int y = 0; y < img.h(); ++y) {
      for (int x = 0; x < img.w(); ++x) {
        if (img(0, 0, y, x) > threshold) {
          half = std::max({half, std::abs(x - s.center_px.u), std::abs(y - s.center_px.v)});
        }
      }
    }
    if (half < 0) {
      ++cal.skipped;
      continue;
    }
    products.push_back((2 * half + 1) * s.pose.t.z());
  }
  if (products.empty()) throw DataError("calibrate_k_object: no usable (uncluttered) samples");
  cal.used = products.size();
  std::nth_element(products.begin(), products.begin() + products.size() / 2, products.end());
  cal.k_object = products[products.size() / 2] / fill;
  return cal;
}

Posed roll_pose(const Posed& pose, double alpha) {
  const Quatd roll(Eigen::AngleAxisd(alpha, Vec3d::UnitZ()));
  Posed out;
  out.t = roll * pose.t;
  out.q = (roll * pose.q).normalized();
  return out;
}

PixelCoord roll_pixel(const PixelCoord& p, const CameraIntrinsics& k, double alpha) {
  const double c = std::cos(alpha), s = std::sin(alpha);
  const double rx = (p.u - k.cx) / k.fx, ry = (p.v - k.cy) / k.fy;
  return PixelCoord{k.fx * (c * rx - s * ry) + k.cx, k.fy * (s * rx + c * ry) + k.cy};
}

Tensor<float> roll_image(const Tensor<float>& image, const CameraIntrinsics& k, double alpha) {
  Tensor<float> out = Tensor<float>::like(image);
  const int h = image.h(), w = image.w();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const PixelCoord src = roll_pixel(PixelCoord{double(x), double(y)}, k, -alpha);
      const double sx = src.u, sy = src.v;
      const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int n = 0; n < image.n(); ++n) {
        for (int ch = 0; ch < image.c(); ++ch) {
          auto at = [&](int yy, int xx) -> double {
            return (xx < 0 || yy < 0 || xx >= w || yy >= h) ? 0.0 : image(n, ch, yy, xx);
          };
          out(n, ch, y, x) = float((1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                                   fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1)));
        }
      }
    }
  }
  return out;
}

}  // namespace lsp
