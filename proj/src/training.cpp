#include "lsp/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "lsp/checkpoint.hpp"
#include "lsp/image_io.hpp"
#include "lsp/log.hpp"
#include "lsp/parallel.hpp"

namespace lsp {

namespace fs = std::filesystem;
using json = nlohmann::json;

Regime parse_regime(const std::string& s) {
  if (s == "translation_only") return Regime::translation_only;
  if (s == "pose_decoupled") return Regime::pose_decoupled;
  if (s == "pose_end_to_end") return Regime::pose_end_to_end;
  throw ConfigError("unknown regime '" + s +
                    "' (expected translation_only|pose_decoupled|pose_end_to_end)");
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::translation_only:
      return "translation_only";
    case Regime::pose_decoupled:
      return "pose_decoupled";
    case Regime::pose_end_to_end:
      return "pose_end_to_end";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(lr > 0)) throw ConfigError("train: lr must be positive");
  if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
  if (!(plateau_factor > 0 && plateau_factor < 1)) throw ConfigError("train: plateau_factor must be in (0, 1)");
  if (plateau_patience < 1) throw ConfigError("train: plateau_patience must be >= 1");
  if (plateau_min_delta < 0) throw ConfigError("train: plateau_min_delta must be >= 0");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (cda_r < 0) throw ConfigError("train: cda_r must be >= 0");
  if (lambda < 0) throw ConfigError("train: lambda must be >= 0");
  if (!(sigma2 > 0)) throw ConfigError("train: sigma2 must be positive");
  if ((freeze_translation || warm_start) && translation_checkpoint.empty()) {
    throw ConfigError("train: freeze_translation/warm_start need train.translation_checkpoint");
  }
  if (freeze_translation && regime == Regime::translation_only) {
    throw ConfigError("train: cannot freeze the translation module in regime translation_only");
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"lr", c.lr},
       {"weight_decay", c.weight_decay},
       {"plateau_factor", c.plateau_factor},
       {"plateau_patience", c.plateau_patience},
       {"plateau_min_delta", c.plateau_min_delta},
       {"max_epochs", c.max_epochs},
       {"seed", c.seed},
       {"regime", to_string(c.regime)},
       {"cda_enabled", c.cda_enabled},
       {"cda_r", c.cda_r},
       {"roll_augment", c.roll_augment},
       {"lambda", c.lambda},
       {"sigma2", c.sigma2},
       {"translation_checkpoint", c.translation_checkpoint},
       {"freeze_translation", c.freeze_translation},
       {"warm_start", c.warm_start},
       {"stop_lr_ratio", c.stop_lr_ratio}};
}

void from_json(const json& j, TrainConfig& c) {
  const TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.plateau_factor = j.value("plateau_factor", d.plateau_factor);
  c.plateau_patience = j.value("plateau_patience", d.plateau_patience);
  c.plateau_min_delta = j.value("plateau_min_delta", d.plateau_min_delta);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.seed = j.value("seed", d.seed);
  c.regime = parse_regime(j.value("regime", to_string(d.regime)));
  c.cda_enabled = j.value("cda_enabled", d.cda_enabled);
  c.cda_r = j.value("cda_r", d.cda_r);
  c.roll_augment = j.value("roll_augment", d.roll_augment);
  c.lambda = j.value("lambda", d.lambda);
  c.sigma2 = j.value("sigma2", d.sigma2);
  c.translation_checkpoint = j.value("translation_checkpoint", d.translation_checkpoint);
  c.freeze_translation = j.value("freeze_translation", d.freeze_translation);
  c.warm_start = j.value("warm_start", d.warm_start);
  c.stop_lr_ratio = j.value("stop_lr_ratio", d.stop_lr_ratio);
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (train.regime == Regime::pose_end_to_end && !model.hc_enabled) {
    throw ConfigError(
        "regime pose_end_to_end requires model.hc_enabled: without heatmap concatenation the "
        "orientation loss cannot reach the translation module");
  }
}

void to_json(json& j, const RunConfig& c) { j = {{"model", c.model}, {"train", c.train}}; }

void from_json(const json& j, RunConfig& c) {
  c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : ModelConfig{};
  c.train = j.contains("train") ? j.at("train").get<TrainConfig>() : TrainConfig{};
}

// ------------------------------------------------------------------ data

Tensor<float> Dataset::batch(std::span<const std::size_t> idx) const {
  const Tensor<float>& first = images.at(idx[0]);
  Tensor<float> out(int(idx.size()), first.c(), first.h(), first.w());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Tensor<float>& img = images.at(idx[k]);
    std::copy_n(img.data(), img.size(), out.sample_data(int(k)));
  }
  return out;
}

ImageFrame Dataset::frame(std::span<const std::size_t> idx) const {
  const ImageFrame f = frames.at(idx[0]);
  for (std::size_t i : idx) {
    if (frames[i].width != f.width || frames[i].height != f.height) {
      throw DataError("a batch mixes original image sizes; all images must share one resolution");
    }
  }
  return f;
}

Dataset Dataset::load(const Manifest& m, const ModelConfig& cfg) {
  if (m.size() == 0) throw DataError("dataset is empty");
  Dataset d;
  const std::size_t n = m.size();
  d.images.resize(n);
  d.poses.resize(n);
  d.centers.resize(n);
  d.frames.resize(n);
  d.cameras.resize(n);
  parallel_for(n, [&](std::size_t i) {
    Preprocessed p = preprocess(m, m.samples[i], cfg.input_h, cfg.input_w, cfg.image_channels);
    d.images[i] = std::move(p.image);
    d.poses[i] = Posed{p.t, p.q};
    d.centers[i] = p.center;
    d.frames[i] = p.original;
    CameraIntrinsics k = m.samples[i].intrinsics;
    const double sx = double(cfg.input_w) / p.original.width, sy = double(cfg.input_h) / p.original.height;
    k.fx *= sx;
    k.cx *= sx;
    k.fy *= sy;
    k.cy *= sy;
    k.width = cfg.input_w;
    k.height = cfg.input_h;
    d.cameras[i] = k;
  });
  return d;
}

// ---------------------------------------------------------- batch losses

namespace {

struct Targets {
  std::vector<Vec3<float>> t;
  std::vector<Vec2<float>> c;
  std::vector<Quaternion<float>> q;
};

Targets targets_of(const Dataset& d, std::span<const std::size_t> idx) {
  Targets tg;
  for (std::size_t i : idx) {
    tg.t.push_back(d.poses[i].t.cast<float>());
    tg.c.push_back(d.centers[i].cast<float>());
    Quaternion<float> q = d.poses[i].q.cast<float>();
    q.normalize();
    tg.q.push_back(q);
  }
  return tg;
}

// Rolls each sample by a random angle whose rolled center stays in the
// frame; after a few misses the sample is left as is. Returns the angles.
// With keep_q the orientation targets stay in the unrolled frame.
std::vector<double> roll_batch(const Dataset& d, std::span<const std::size_t> idx, Tensor<float>& x,
                               Targets& tg, bool keep_q, Rng& rng) {
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::vector<double> alphas(idx.size(), 0.0);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const CameraIntrinsics& cam = d.cameras[idx[k]];
    const Posed& pose = d.poses[idx[k]];
    for (int attempt = 0; attempt < 10; ++attempt) {
      const double alpha = angle(rng);
      const Posed rolled = roll_pose(pose, alpha);
      const PixelCoord c = project_center(rolled.t, cam);
      if (c.u < 0 || c.v < 0 || c.u > cam.width - 1 || c.v > cam.height - 1) continue;
      Tensor<float> one(1, x.c(), x.h(), x.w());
      std::copy_n(x.sample_data(int(k)), one.size(), one.data());
      one = roll_image(one, cam, alpha);
      std::copy_n(one.data(), one.size(), x.sample_data(int(k)));
      tg.t[k] = rolled.t.cast<float>();
      tg.c[k] = pixel_to_normalized(c, cam.width, cam.height).cast<float>();
      if (!keep_q) tg.q[k] = rolled.q.cast<float>().normalized();
      alphas[k] = alpha;
      break;
    }
  }
  return alphas;
}

// Maps predicted centers on rolled images back to the unrolled frames.
void unroll_centers(const Dataset& d, std::span<const std::size_t> idx, std::span<const double> alphas,
                    std::vector<Vec2<float>>& centers) {
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (alphas[k] == 0.0) continue;
    const CameraIntrinsics& cam = d.cameras[idx[k]];
    const PixelCoord p{normalized_to_pixel_axis<double>(centers[k].x(), cam.width),
                       normalized_to_pixel_axis<double>(centers[k].y(), cam.height)};
    centers[k] = pixel_to_normalized(roll_pixel(p, cam, -alphas[k]), cam.width, cam.height).cast<float>();
  }
}

void require_finite(double v, const char* term, const std::string& where) {
  if (!std::isfinite(v)) throw NumericError(where + ": non-finite " + term + " loss");
}

/// Position and center terms; fills grads when requested.
LossParts translation_terms(const TranslationOutput<float>& tr, const Targets& tg, const TrainConfig& cfg,
                            TranslationGrads<float>* grads, const std::string& where) {
  LossParts p;
  p.position = position_loss<float>(tg.t, tr.t_pred);
  require_finite(p.position, "position", where);
  const CenterLoss<float> cl = center_loss<float>(tg.c, tr.center_pred, tr.heatmaps, float(cfg.sigma2),
                                                  float(cfg.lambda), grads != nullptr);
  p.euc = cl.euc;
  p.reg = cl.reg;
  p.center = cl.center;
  require_finite(p.euc, "center (euclidean)", where);
  require_finite(p.reg, "center (divergence)", where);
  if (grads != nullptr) {
    grads->t = position_loss_grad<float>(tg.t, tr.t_pred);
    grads->center = cl.grad_c_pred;
    grads->heatmap = cl.grad_h_pred;
  }
  return p;
}

void accumulate(LossParts& acc, const LossParts& p, double w) {
  acc.position += w * p.position;
  acc.euc += w * p.euc;
  acc.reg += w * p.reg;
  acc.center += w * p.center;
  acc.rotation += w * p.rotation;
}

double objective_of(const LossBreakdown& b, Regime r) {
  return r == Regime::translation_only ? b.translation : b.pose;
}

json breakdown_json(const LossBreakdown& b) {
  return {{"position", b.position}, {"euc", b.euc},   {"reg", b.reg},   {"center", b.center},
          {"rotation", b.rotation}, {"translation", b.translation}, {"pose", b.pose}};
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, int batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < order.size(); s += std::size_t(batch_size)) {
    const std::size_t e = std::min(order.size(), s + std::size_t(batch_size));
    out.emplace_back(order.begin() + long(s), order.begin() + long(e));
  }
  return out;
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void set_rng_state(Rng& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  if (!is) throw DataError("checkpoint: corrupt RNG state");
}

using NamedParams = Adam<float>::NamedParams;

NamedParams collect(Model<float>& m, bool translation, bool orientation) {
  NamedParams out;
  auto add = [&](const std::string& name, nn::Parameter<float>& p) { out.emplace_back(name, &p); };
  if (translation) m.visit_translation(add);
  if (orientation) m.visit_orientation(add);
  return out;
}

void assign_params(Model<float>& m, const TensorArchive& ar, const std::string& path, bool translation_only) {
  auto assign = [&](const std::string& name, nn::Parameter<float>& p) {
    const auto it = ar.tensors.find("param." + name);
    if (it == ar.tensors.end()) throw DataError(path + ": checkpoint lacks parameter " + name);
    if (!it->second.same_shape(p.value.cast<double>())) {
      throw DataError(path + ": parameter " + name + " has shape " + it->second.shape_string() +
                      ", model expects " + p.value.shape_string());
    }
    p.value = it->second.cast<float>();
  };
  if (translation_only) {
    m.visit_translation(assign);
  } else {
    m.visit(assign);
  }
}

struct TrainState {
  int epoch = 0;
  double lr = 0;
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
};

void save_checkpoint(const fs::path& path, Model<float>& m, const Adam<float>& adam,
                     const PlateauScheduler& sched, const Rng& rng, const RunConfig& cfg,
                     const TrainState& st) {
  std::map<std::string, const Tensor<float>*> tensors;
  m.visit([&](const std::string& name, nn::Parameter<float>& p) { tensors["param." + name] = &p.value; });
  for (const auto& [name, t] : adam.state_tensors()) tensors["adam." + name] = t;
  json best = std::isfinite(st.best) ? json(st.best) : json(nullptr);
  const json meta = {{"kind", "lsp-checkpoint"},
                     {"config", cfg},
                     {"epoch", st.epoch},
                     {"lr", st.lr},
                     {"best_objective", best},
                     {"best_epoch", st.best_epoch},
                     {"adam", {{"config", adam.config()}, {"steps", adam.steps()}}},
                     {"scheduler", sched.state()},
                     {"rng", rng_state(rng)}};
  save_archive<float>(path, meta, tensors);
}

Vec3<float> stat_mean(const Dataset& d) {
  Vec3d s = Vec3d::Zero();
  for (const Posed& p : d.poses) s += p.t;
  return (s / double(d.size())).cast<float>();
}

Vec3<float> stat_scale(const Dataset& d, const Vec3<float>& mean) {
  Vec3d ss = Vec3d::Zero();
  for (const Posed& p : d.poses) ss += (p.t - mean.cast<double>()).cwiseAbs2();
  Vec3d sd = (ss / double(d.size())).cwiseSqrt();
  return sd.cwiseMax(1e-3).cast<float>();
}

}  // namespace

// ------------------------------------------------------------ evaluation

Evaluation evaluate(Model<float>& model, const Dataset& data, const TrainConfig& cfg) {
  if (data.size() == 0) throw DataError("evaluate: empty dataset");
  Evaluation ev;
  ev.has_rotation = cfg.regime != Regime::translation_only;
  model.eval();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  LossParts acc;
  const double inv_n = 1.0 / double(data.size());
  for (const auto& idx : make_batches(order, cfg.batch_size)) {
    const Tensor<float> x = data.batch(idx);
    const Targets tg = targets_of(data, idx);
    const std::string where = "evaluation batch starting at sample " + std::to_string(idx[0]);
    LossParts p;
    if (ev.has_rotation) {
      const PoseOutput<float> out = model.forward_pose(x, PoseMode::eval, std::nullopt, nullptr, data.frame(idx));
      p = translation_terms(out.translation, tg, cfg, nullptr, where);
      std::vector<Quaternion<float>> q;
      for (const auto& pose : out.poses) q.push_back(pose.q);
      p.rotation = rotation_loss<float>(tg.q, q);
      require_finite(p.rotation, "rotation", where);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        ev.predictions.push_back(Posed{out.poses[k].t.cast<double>(), out.poses[k].q.cast<double>()});
        ev.boxes.push_back(out.boxes[k]);
      }
    } else {
      const TranslationOutput<float> tr = model.forward_translation(x);
      p = translation_terms(tr, tg, cfg, nullptr, where);
      for (const auto& t : tr.t_pred) ev.predictions.push_back(Posed{t.cast<double>(), Quatd::Identity()});
    }
    accumulate(acc, p, double(idx.size()) * inv_n);
  }
  ev.losses = compose_losses(acc);
  ev.objective = objective_of(ev.losses, cfg.regime);
  if (ev.has_rotation) {
    ev.metrics = compute_metrics(ev.predictions, data.poses);
  } else {
    std::vector<Vec3d> pt, gt;
    for (std::size_t i = 0; i < data.size(); ++i) {
      pt.push_back(ev.predictions[i].t);
      gt.push_back(data.poses[i].t);
    }
    ev.metrics = compute_translation_metrics(pt, gt);
  }
  return ev;
}

// -------------------------------------------------------------- training

TrainResult train(const Manifest& train_set, const Manifest& val_set, const RunConfig& cfg,
                  const fs::path& run_dir, bool resume) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw DataError("train: manifests must be non-empty");
  return train(Dataset::load(train_set, cfg.model), Dataset::load(val_set, cfg.model), cfg, run_dir, resume);
}

TrainResult train(const Dataset& train_set, const Dataset& val_set, const RunConfig& cfg,
                  const fs::path& run_dir, bool resume) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw DataError("train: datasets must be non-empty");
  const TrainConfig& tc = cfg.train;
  fs::create_directories(run_dir);

  Model<float> model = build_model<float>(cfg.model, tc.seed);
  const Vec3<float> mean = stat_mean(train_set);
  model.set_translation_stats(mean, stat_scale(train_set, mean));
  if (!tc.translation_checkpoint.empty()) {
    const TensorArchive ar = load_archive(tc.translation_checkpoint);
    assign_params(model, ar, tc.translation_checkpoint, true);
  }

  const bool train_translation = !tc.freeze_translation;
  const bool train_orientation = tc.regime != Regime::translation_only;
  const bool heat_flow = tc.regime == Regime::pose_end_to_end;
  const NamedParams params = collect(model, train_translation, train_orientation);

  AdamConfig ac;
  ac.lr = tc.lr;
  ac.weight_decay = tc.weight_decay;
  Adam<float> adam(ac);
  PlateauScheduler sched(tc.plateau_factor, tc.plateau_patience, tc.plateau_min_delta);
  std::seed_seq seq{std::uint64_t(tc.seed & 0xffffffffu), std::uint64_t(tc.seed >> 32), std::uint64_t(0x5eed)};
  Rng rng(seq);
  TrainState st;
  st.lr = tc.lr;

  const fs::path last = run_dir / "last.ckpt";
  const fs::path hist_path = run_dir / "history.jsonl";
  std::vector<std::string> history;
  if (resume && fs::exists(last)) {
    const TensorArchive ar = load_archive(last);
    assign_params(model, ar, last.string(), false);
    std::map<std::string, Tensor<float>> moments;
    for (const auto& [name, t] : ar.tensors) {
      if (name.starts_with("adam.")) moments[name.substr(5)] = t.cast<float>();
    }
    adam.load_state(ar.meta.at("adam").at("steps").get<long long>(), moments);
    sched.load_state(ar.meta.at("scheduler"));
    set_rng_state(rng, ar.meta.at("rng").get<std::string>());
    st.epoch = ar.meta.at("epoch").get<int>();
    st.lr = ar.meta.at("lr").get<double>();
    st.best = ar.meta.at("best_objective").is_null() ? std::numeric_limits<double>::infinity()
                                                     : ar.meta.at("best_objective").get<double>();
    st.best_epoch = ar.meta.at("best_epoch").get<int>();
    std::ifstream in(hist_path);
    std::string line;
    while (static_cast<int>(history.size()) < st.epoch && std::getline(in, line)) history.push_back(line);
    if (static_cast<int>(history.size()) != st.epoch) {
      throw DataError(hist_path.string() + ": history is shorter than the checkpoint epoch count");
    }
    log_info("resuming " + run_dir.string() + " at epoch " + std::to_string(st.epoch));
  }
  {
    std::ofstream cfg_out(run_dir / "config.json");
    cfg_out << json(cfg).dump(2) << '\n';
    std::ofstream hist(hist_path, std::ios::trunc);
    for (const auto& l : history) hist << l << '\n';
  }

  TrainResult result;
  result.run_dir = run_dir;
  result.stop_reason = "max_epochs";
  const double stop_lr = tc.lr * tc.stop_lr_ratio;
  if (st.lr < stop_lr) result.stop_reason = "converged";

  std::vector<std::size_t> order(train_set.size());
  while (st.epoch < tc.max_epochs && st.lr >= stop_lr) {
    const auto t_start = std::chrono::steady_clock::now();
    const int epoch = st.epoch + 1;
    adam.set_lr(st.lr);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    model.set_training(train_translation, train_orientation);

    LossParts acc;
    const double inv_n = 1.0 / double(train_set.size());
    int b = 0;
    for (const auto& idx : make_batches(order, tc.batch_size)) {
      const std::string where = "epoch " + std::to_string(epoch) + " batch " + std::to_string(b++);
      const Tensor<float> x0 = train_set.batch(idx);
      Tensor<float> x = x0;
      Targets tg = targets_of(train_set, idx);
      // Without heatmap concatenation the orientation crop is cut from the
      // unrolled image, so only the translation stage sees rolled inputs.
      const bool split_roll = tc.roll_augment && !cfg.model.hc_enabled && tc.regime != Regime::translation_only;
      std::vector<double> alphas;
      if (tc.roll_augment) alphas = roll_batch(train_set, idx, x, tg, split_roll, rng);
      model.zero_grad();
      LossParts p;
      try {
        if (tc.regime == Regime::translation_only) {
          const TranslationOutput<float> tr = model.forward_translation(x);
          TranslationGrads<float> g;
          p = translation_terms(tr, tg, tc, &g, where);
          model.backward_translation(g);
        } else {
          const std::optional<double> cda = tc.cda_enabled ? std::optional<double>(tc.cda_r) : std::nullopt;
          TranslationOutput<float> tr = model.forward_translation(x);
          PoseOutput<float> out;
          if (split_roll) {
            TranslationOutput<float> seen = tr;
            unroll_centers(train_set, idx, alphas, seen.center_pred);
            out = model.forward_pose(x0, std::move(seen), PoseMode::train, cda, &rng, train_set.frame(idx));
          } else {
            out = model.forward_pose(x, tr, PoseMode::train, cda, &rng, train_set.frame(idx));
          }
          TranslationGrads<float> g;
          p = translation_terms(tr, tg, tc, train_translation ? &g : nullptr, where);
          std::vector<Quaternion<float>> q;
          for (const auto& pose : out.poses) q.push_back(pose.q);
          p.rotation = rotation_loss<float>(tg.q, q);
          require_finite(p.rotation, "rotation", where);
          const std::vector<Vec4<float>> gq = rotation_loss_grad<float>(tg.q, q);
          model.backward_pose(train_translation ? &g : nullptr, gq, heat_flow && train_translation);
        }
      } catch (const NumericError& e) {
        const std::string msg = e.what();
        throw NumericError(msg.starts_with("epoch ") ? msg : where + ": " + msg);
      }
      for (const auto& [name, prm] : params) {
        if (prm->trainable && !prm->grad.array().allFinite()) {
          throw NumericError(where + ": non-finite gradient for " + name);
        }
      }
      adam.step(params);
      accumulate(acc, p, double(idx.size()) * inv_n);
    }
    const LossBreakdown train_losses = compose_losses(acc);
    const Evaluation ev = evaluate(model, val_set, tc);

    const double lr_used = st.lr;
    st.epoch = epoch;
    st.lr = sched.step(ev.objective, st.lr);
    const bool improved = ev.objective < st.best;
    if (improved) {
      st.best = ev.objective;
      st.best_epoch = epoch;
    }

    json rec = {{"epoch", epoch},
                {"lr", lr_used},
                {"train", breakdown_json(train_losses)},
                {"val", breakdown_json(ev.losses)},
                {"val_objective", ev.objective},
                {"val_metrics",
                 {{"E_x", ev.metrics.E_x},
                  {"E_y", ev.metrics.E_y},
                  {"E_z", ev.metrics.E_z},
                  {"E_t_mean", ev.metrics.E_t_mean},
                  {"E_t_std", ev.metrics.E_t_std}}},
                {"best", improved}};
    if (ev.has_rotation) {
      rec["val_metrics"]["E_q_mean_deg"] = ev.metrics.E_q_mean;
      rec["val_metrics"]["E_q_std_deg"] = ev.metrics.E_q_std;
    }
    {
      std::ofstream hist(hist_path, std::ios::app);
      hist << rec.dump() << '\n';
    }
    if (improved) save_checkpoint(run_dir / "best.ckpt", model, adam, sched, rng, cfg, st);
    save_checkpoint(last, model, adam, sched, rng, cfg, st);

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    std::ostringstream msg;
    msg << "epoch " << epoch << " lr " << lr_used << " train " << objective_of(train_losses, tc.regime)
        << " val " << ev.objective << " E_t " << ev.metrics.E_t_mean;
    if (ev.has_rotation) msg << " E_q " << ev.metrics.E_q_mean << " deg";
    msg << " (" << secs << " s)";
    log_info(msg.str());
    if (st.lr < stop_lr) result.stop_reason = "converged";
  }
  result.epochs = st.epoch;
  result.best_epoch = st.best_epoch;
  result.best_objective = st.best;
  return result;
}

// -------------------------------------------------------------- loading

LoadedModel load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw DataError(path.string() + ": checkpoint not found");
  const TensorArchive ar = load_archive(path);
  if (ar.meta.value("kind", "") != "lsp-checkpoint") throw DataError(path.string() + ": not an lsp checkpoint");
  RunConfig cfg = ar.meta.at("config").get<RunConfig>();
  // Weights come from the archive, so pretrained sources are not needed again.
  ModelConfig mc = cfg.model;
  mc.position_init = InitMode::random;
  mc.orientation_init = InitMode::random;
  LoadedModel lm{cfg, Model<float>(mc, cfg.train.seed), ar.meta};
  assign_params(lm.model, ar, path.string(), false);
  lm.model.eval();
  return lm;
}

Prediction predict_image(Model<float>& model, const fs::path& image) {
  const ModelConfig& mc = model.config();
  const Tensor<float> img = read_image(image, mc.image_channels);
  const Tensor<float> x = resize_bilinear(img, mc.input_h, mc.input_w);
  model.eval();
  const PoseOutput<float> out = model.forward_pose(x, PoseMode::eval, std::nullopt, nullptr, {img.w(), img.h()});
  Prediction p;
  p.pose = Posed{out.poses[0].t.cast<double>(), out.poses[0].q.cast<double>()};
  p.box = out.boxes[0];
  p.center = out.boxes[0].center;
  return p;
}

// -------------------------------------------------------------- ablation

std::vector<AblationRow> ablation_suite(const Manifest& train_set, const Manifest& val_set,
                                        const RunConfig& base, const fs::path& out_dir) {
  struct Spec {
    InitMode init;
    bool hc;
    bool cda;
  };
  const std::vector<Spec> specs = {{InitMode::random, false, false},     {InitMode::pretrained, false, false},
                                   {InitMode::random, true, false},      {InitMode::pretrained, true, false},
                                   {InitMode::pretrained, false, true},  {InitMode::random, true, true}};
  const bool needs_pretrained = base.model.position_init == InitMode::pretrained ||
                                std::any_of(specs.begin(), specs.end(), [](const Spec& s) { return s.init == InitMode::pretrained; });
  if (needs_pretrained && (base.model.pretrained_path.empty() || !fs::exists(base.model.pretrained_path))) {
    throw ConfigError(
        "ablate: the pretrained-initialization rows need model.pretrained_path to point at an "
        "lsp-encoder archive (see `lsp export-encoder`)");
  }
  fs::create_directories(out_dir);
  const Dataset train_data = Dataset::load(train_set, base.model);
  const Dataset val_data = Dataset::load(val_set, base.model);

  RunConfig tr_cfg = base;
  tr_cfg.model.hc_enabled = false;
  tr_cfg.train.regime = Regime::translation_only;
  tr_cfg.train.cda_enabled = false;
  tr_cfg.train.translation_checkpoint.clear();
  tr_cfg.train.freeze_translation = false;
  tr_cfg.train.warm_start = false;
  log_info("ablate: translation module");
  train(train_data, val_data, tr_cfg, out_dir / "translation");
  const std::string shared = (out_dir / "translation" / "best.ckpt").string();

  std::vector<AblationRow> rows;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const Spec& s = specs[k];
    RunConfig rc = base;
    rc.model.hc_enabled = s.hc;
    rc.model.orientation_init = s.init;
    rc.train.cda_enabled = s.cda;
    rc.train.warm_start = false;
    rc.train.freeze_translation = false;
    rc.train.translation_checkpoint.clear();
    if (s.hc) {
      rc.train.regime = Regime::pose_end_to_end;
      if (base.train.warm_start) {
        rc.train.warm_start = true;
        rc.train.translation_checkpoint = shared;
      }
    } else {
      rc.train.regime = Regime::pose_decoupled;
      rc.train.freeze_translation = true;
      rc.train.translation_checkpoint = shared;
    }
    const fs::path dir = out_dir / ("row" + std::to_string(k + 1));
    log_info("ablate: row " + std::to_string(k + 1) + " init=" + to_string(s.init) +
             " hc=" + (s.hc ? "on" : "off") + " cda=" + (s.cda ? "on" : "off"));
    train(train_data, val_data, rc, dir);
    LoadedModel lm = load_checkpoint(dir / "best.ckpt");
    const Evaluation ev = evaluate(lm.model, val_data, lm.config.train);
    rows.push_back(AblationRow{s.init == InitMode::random ? "Random" : "ImageNet", s.hc, s.cda, ev.metrics});
  }
  {
    std::ofstream js(out_dir / "ablation.json");
    js << table_json(rows).dump(2) << '\n';
    std::ofstream txt(out_dir / "ablation.txt");
    txt << format_table(rows);
  }
  return rows;
}

}  // namespace lsp
