// Command-line entry point: dataset tooling, training, evaluation and inference.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lsp/checkpoint.hpp"
#include "lsp/data.hpp"
#include "lsp/evaluation.hpp"
#include "lsp/image_io.hpp"
#include "lsp/log.hpp"
#include "lsp/selftest.hpp"
#include "lsp/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lsp;

namespace {

// Scene settings for gen-data live under "scene" in the config file.
json scene_json(const SceneConfig& s) {
  return {{"camera",
           {{"fx", s.camera.fx},
            {"fy", s.camera.fy},
            {"cx", s.camera.cx},
            {"cy", s.camera.cy},
            {"width", s.camera.width},
            {"height", s.camera.height}}},
          {"z_min", s.z_min},
          {"z_max", s.z_max},
          {"center_margin", s.center_margin},
          {"clutter_probability", s.clutter_probability},
          {"noise_sigma", s.noise_sigma},
          {"supersample", s.supersample}};
}

SceneConfig scene_from_json(const json& j) {
  SceneConfig s;
  const json& c = j.at("camera");
  s.camera = CameraIntrinsics{c.at("fx").get<double>(), c.at("fy").get<double>(), c.at("cx").get<double>(),
                              c.at("cy").get<double>(), c.at("width").get<int>(), c.at("height").get<int>()};
  s.z_min = j.at("z_min").get<double>();
  s.z_max = j.at("z_max").get<double>();
  s.center_margin = j.at("center_margin").get<double>();
  s.clutter_probability = j.at("clutter_probability").get<double>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.supersample = j.at("supersample").get<int>();
  if (!(s.z_min > 0 && s.z_max >= s.z_min)) throw ConfigError("scene: need 0 < z_min <= z_max");
  return s;
}

json default_config() {
  json j = RunConfig{};
  j["scene"] = scene_json(SceneConfig{});
  return j;
}

void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("config key '" + key + "' names a section, not a value");
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded() || (node->is_string() && !parsed.is_string())) parsed = value;
  *node = parsed;
}

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c, bool out_required = false) {
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  auto* o = app->add_option("--out", c.out, "Output path");
  if (out_required) o->required();
  app->add_option("--set", c.sets, "Config override key.path=value (repeatable)");
}

json resolve_config(const Common& c) {
  json j = default_config();
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    json file = json::parse(in, nullptr, false);
    if (file.is_discarded() || !file.is_object()) throw ConfigError(c.config + ": not a JSON object");
    // Only known keys may appear, same as for overrides.
    for (const auto& [k, v] : file.flatten().items()) {
      std::string dotted = k.substr(1);
      std::replace(dotted.begin(), dotted.end(), '/', '.');
      apply_override(j, dotted + "=" + v.dump());
    }
  }
  for (const auto& s : c.sets) apply_override(j, s);
  return j;
}

RunConfig run_config(const Common& c) {
  const json j = resolve_config(c);
  RunConfig rc = j.get<RunConfig>();
  if (c.seed) rc.train.seed = *c.seed;
  rc.validate();
  return rc;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

Manifest load_manifest_arg(const std::string& path) {
  const fs::path p = fs::is_directory(path) ? fs::path(path) / "manifest.jsonl" : fs::path(path);
  return read_manifest(p);
}

json pose_json(const Prediction& p) {
  const Vec4<double> q = wxyz(p.pose.q);
  return {{"t", {p.pose.t.x(), p.pose.t.y(), p.pose.t.z()}},
          {"q", {q[0], q[1], q[2], q[3]}},
          {"quat_order", "wxyz"},
          {"bbox", {{"u", p.box.center.u}, {"v", p.box.center.v}, {"side", p.box.side}}}};
}

int run(int argc, char** argv) {
  CLI::App app{"Two-stage monocular spacecraft pose estimation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // gen-data
  Common gen_c;
  int gen_n = 0;
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic dataset (images/ + manifest.jsonl)");
  add_common(gen, gen_c, true);
  gen->add_option("--n", gen_n, "Number of samples")->required()->check(CLI::PositiveNumber);

  // ingest
  Common ing_c;
  std::string ing_root, ing_labels, ing_order = "wxyz", ing_keys, ing_camera;
  auto* ing = app.add_subcommand("ingest", "Convert a SPEED-style label file into a manifest");
  add_common(ing, ing_c, true);
  ing->add_option("--root", ing_root, "Image root directory")->required()->check(CLI::ExistingDirectory);
  ing->add_option("--labels", ing_labels, "JSON array of {filename, q, t} records")->required()->check(CLI::ExistingFile);
  ing->add_option("--quat-order", ing_order, "Component order of q in the label file (wxyz|xyzw)")->required();
  ing->add_option("--camera", ing_camera, "JSON {fx, fy, cx, cy, width, height}")->required()->check(CLI::ExistingFile);
  ing->add_option("--keys", ing_keys, "JSON key-mapping table {filename_key, q_key, t_key}")->check(CLI::ExistingFile);

  // split
  Common spl_c;
  std::string spl_manifest;
  std::size_t spl_train = 0, spl_val = 0;
  auto* spl = app.add_subcommand("split", "Seeded disjoint train/val split (train.jsonl, val.jsonl)");
  add_common(spl, spl_c, true);
  spl->add_option("--manifest", spl_manifest, "Input manifest")->required();
  spl->add_option("--n-train", spl_train, "Training samples")->required();
  spl->add_option("--n-val", spl_val, "Validation samples")->required();

  // calibrate-ko
  Common cal_c;
  std::string cal_manifest;
  double cal_fill = 0.8, cal_threshold = 0.06;
  std::size_t cal_max = 256;
  auto* cal = app.add_subcommand("calibrate-ko", "Estimate the object size constant K_O from a manifest");
  add_common(cal, cal_c);
  cal->add_option("--manifest", cal_manifest, "Manifest with labels")->required();
  cal->add_option("--fill", cal_fill, "Fraction of the box the target should span")->capture_default_str();
  cal->add_option("--threshold", cal_threshold, "Foreground intensity threshold")->capture_default_str();
  cal->add_option("--max-samples", cal_max, "Samples to inspect")->capture_default_str();

  // train
  Common tr_c;
  std::string tr_train, tr_val;
  bool tr_resume = false;
  auto* tr = app.add_subcommand("train", "Train a model into a run directory");
  add_common(tr, tr_c, true);
  tr->add_option("--train", tr_train, "Training manifest")->required();
  tr->add_option("--val", tr_val, "Validation manifest")->required();
  tr->add_flag("--resume", tr_resume, "Continue from <out>/last.ckpt");

  // ablate
  Common ab_c;
  std::string ab_train, ab_val;
  auto* ab = app.add_subcommand("ablate", "Run the init x HC x CDA ablation table");
  add_common(ab, ab_c, true);
  ab->add_option("--train", ab_train, "Training manifest")->required();
  ab->add_option("--val", ab_val, "Validation manifest")->required();

  // eval
  Common ev_c;
  std::string ev_ckpt, ev_manifest, ev_style = "table2", ev_label;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  add_common(ev, ev_c);
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--manifest", ev_manifest, "Manifest to evaluate")->required();
  ev->add_option("--style", ev_style, "table2|table4|table5")->capture_default_str();
  ev->add_option("--label", ev_label, "Row label (model name or init column)");

  // predict
  Common pr_c;
  std::string pr_image, pr_ckpt;
  auto* pr = app.add_subcommand("predict", "Predict the pose of one image");
  add_common(pr, pr_c);
  pr->add_option("--image", pr_image, "Input image")->required()->check(CLI::ExistingFile);
  pr->add_option("--ckpt", pr_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);

  // overlay
  Common ov_c;
  std::string ov_image, ov_ckpt;
  std::optional<double> ov_u, ov_v, ov_side;
  auto* ov = app.add_subcommand("overlay", "Draw the bounding box and center on an image");
  add_common(ov, ov_c, true);
  ov->add_option("--image", ov_image, "Input image")->required()->check(CLI::ExistingFile);
  ov->add_option("--ckpt", ov_ckpt, "Checkpoint used to predict the box")->check(CLI::ExistingFile);
  ov->add_option("--u", ov_u, "Box center u (without --ckpt)");
  ov->add_option("--v", ov_v, "Box center v (without --ckpt)");
  ov->add_option("--side", ov_side, "Box side in pixels (without --ckpt)");

  // selftest
  Common st_c;
  bool st_list = false;
  std::string st_backbone = "small";
  int st_channels = 1;
  auto* st = app.add_subcommand("selftest", "Gradient checks and invariants; exit 0 iff all pass");
  add_common(st, st_c);
  st->add_flag("--list-encoder-names", st_list, "Print the tensor names an encoder archive must provide");
  st->add_option("--backbone", st_backbone, "Backbone for --list-encoder-names")->capture_default_str();
  st->add_option("--channels", st_channels, "Input channels for --list-encoder-names")->capture_default_str();

  // export-encoder
  Common ex_c;
  std::string ex_ckpt, ex_which = "translation";
  auto* ex = app.add_subcommand("export-encoder", "Write one encoder of a checkpoint as an encoder archive");
  add_common(ex, ex_c, true);
  ex->add_option("--ckpt", ex_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ex->add_option("--which", ex_which, "translation|orientation")->capture_default_str();

  if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
    std::cerr << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (gen->parsed()) {
    const json j = resolve_config(gen_c);
    const SceneConfig scene = scene_from_json(j.at("scene"));
    const Manifest m = generate_synthetic(gen_n, scene, gen_c.seed.value_or(0), gen_c.out);
    std::cout << "wrote " << m.size() << " samples to " << (fs::path(gen_c.out) / "manifest.jsonl").string() << '\n';
  } else if (ing->parsed()) {
    std::ifstream cin_(ing_camera);
    const json cj = json::parse(cin_, nullptr, false);
    if (cj.is_discarded()) throw DataError(ing_camera + ": malformed JSON");
    const CameraIntrinsics cam{cj.at("fx").get<double>(), cj.at("fy").get<double>(), cj.at("cx").get<double>(),
                               cj.at("cy").get<double>(), cj.at("width").get<int>(), cj.at("height").get<int>()};
    const SpeedKeyMap keys = ing_keys.empty() ? SpeedKeyMap{} : SpeedKeyMap::from_file(ing_keys);
    IngestResult res = ingest_speed_format(ing_root, ing_labels, parse_quat_order(ing_order), cam, keys);
    for (const auto& r : res.rejected) std::cerr << "rejected: " << r << '\n';
    fs::path out = ing_c.out;
    if (fs::is_directory(out) || out.extension().empty()) out /= "manifest.jsonl";
    write_manifest(out, res.manifest);
    std::cout << "wrote " << res.manifest.size() << " samples to " << out.string() << " (" << res.rejected.size()
              << " rejected)\n";
  } else if (spl->parsed()) {
    const Manifest m = load_manifest_arg(spl_manifest);
    auto [a, b] = split_manifest(m, spl_train, spl_val, spl_c.seed.value_or(0));
    fs::create_directories(spl_c.out);
    write_manifest(fs::path(spl_c.out) / "train.jsonl", a);
    write_manifest(fs::path(spl_c.out) / "val.jsonl", b);
    std::cout << "train " << a.size() << ", val " << b.size() << '\n';
  } else if (cal->parsed()) {
    const Manifest m = load_manifest_arg(cal_manifest);
    const KoCalibration k = calibrate_k_object(m, cal_fill, cal_threshold, cal_max);
    const json j = {{"k_object", k.k_object}, {"used", k.used}, {"skipped", k.skipped},
                    {"fill", cal_fill}, {"threshold", cal_threshold}};
    if (!cal_c.out.empty()) write_text(cal_c.out, j.dump(2) + "\n");
    std::cout << j.dump(2) << '\n';
  } else if (tr->parsed()) {
    const RunConfig rc = run_config(tr_c);
    const TrainResult r = train(load_manifest_arg(tr_train), load_manifest_arg(tr_val), rc, tr_c.out, tr_resume);
    std::cout << "trained " << r.epochs << " epochs (" << r.stop_reason << "); best epoch " << r.best_epoch
              << ", val objective " << r.best_objective << '\n';
  } else if (ab->parsed()) {
    const RunConfig rc = run_config(ab_c);
    const auto rows = ablation_suite(load_manifest_arg(ab_train), load_manifest_arg(ab_val), rc, ab_c.out);
    std::cout << format_table(rows);
  } else if (ev->parsed()) {
    const ReportStyle style = parse_report_style(ev_style);
    LoadedModel lm = load_checkpoint(ev_ckpt);
    const Manifest m = load_manifest_arg(ev_manifest);
    const Dataset d = Dataset::load(m, lm.config.model);
    const Evaluation e = evaluate(lm.model, d, lm.config.train);
    if (!e.has_rotation && style != ReportStyle::table2) {
      throw ConfigError("checkpoint has no orientation head trained; only --style table2 applies");
    }
    std::string text;
    json j;
    if (style == ReportStyle::table4) {
      const std::string init = ev_label.empty()
                                   ? (lm.config.model.orientation_init == InitMode::pretrained ? "ImageNet" : "Random")
                                   : ev_label;
      const AblationRow row{init, lm.config.model.hc_enabled, lm.config.train.cda_enabled, e.metrics};
      text = format_table(std::span<const AblationRow>(&row, 1));
      j = table_json(std::span<const AblationRow>(&row, 1));
      j["report"] = to_json(e.metrics);
    } else {
      text = format_report(e.metrics, style, ev_label);
      j = report_json(e.metrics, style, ev_label);
    }
    if (!ev_c.out.empty()) {
      fs::create_directories(ev_c.out);
      write_text(fs::path(ev_c.out) / "report.json", j.dump(2) + "\n");
      write_text(fs::path(ev_c.out) / "report.txt", text);
    }
    std::cout << text;
  } else if (pr->parsed()) {
    LoadedModel lm = load_checkpoint(pr_ckpt);
    const json j = pose_json(predict_image(lm.model, pr_image));
    if (!pr_c.out.empty()) write_text(pr_c.out, j.dump(2) + "\n");
    std::cout << j.dump() << '\n';
  } else if (ov->parsed()) {
    const Tensor<float> img = read_image(ov_image, 1);
    BoundingBox box;
    if (!ov_ckpt.empty()) {
      LoadedModel lm = load_checkpoint(ov_ckpt);
      box = predict_image(lm.model, ov_image).box;
    } else if (ov_u && ov_v && ov_side) {
      box = BoundingBox{{*ov_u, *ov_v}, *ov_side};
    } else {
      throw ConfigError("overlay needs --ckpt or all of --u, --v, --side");
    }
    render_overlay(img, box, box.center, ov_c.out);
    std::cout << "wrote " << ov_c.out << '\n';
  } else if (st->parsed()) {
    if (st_list) {
      const Backbone b = st_backbone == "large" ? Backbone::large : Backbone::small;
      for (const auto& [name, shape] : encoder_tensor_names(b, st_channels)) std::cout << name << ' ' << shape << '\n';
      return 0;
    }
    int failed = 0;
    for (const SelftestResult& r : run_selftest(st_c.seed.value_or(1))) {
      std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
      failed += !r.passed;
    }
    return failed == 0 ? 0 : 3;
  } else if (ex->parsed()) {
    LoadedModel lm = load_checkpoint(ex_ckpt);
    if (ex_which != "translation" && ex_which != "orientation") {
      throw ConfigError("--which must be translation or orientation");
    }
    lm.model.save_encoder(ex_c.out, ex_which == "orientation");
    std::cout << "wrote " << ex_c.out << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
