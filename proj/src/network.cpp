#include "lsp/network.hpp"

#include <algorithm>
#include <filesystem>

#include "lsp/checkpoint.hpp"
#include "lsp/log.hpp"

namespace lsp {

std::string to_string(Backbone b) { return b == Backbone::small ? "small" : "large"; }
std::string to_string(InitMode m) { return m == InitMode::random ? "random" : "pretrained"; }

namespace {

Backbone parse_backbone(const std::string& s) {
  if (s == "small") return Backbone::small;
  if (s == "large") return Backbone::large;
  throw ConfigError("unknown backbone '" + s + "' (expected small|large)");
}

InitMode parse_init(const std::string& s) {
  if (s == "random") return InitMode::random;
  if (s == "pretrained" || s == "imagenet") return InitMode::pretrained;
  throw ConfigError("unknown init mode '" + s + "' (expected random|pretrained)");
}

}  // namespace

void ModelConfig::validate() const {
  if (heat_channels < 1) throw ConfigError("model: heat_channels must be >= 1");
  if (input_h < 32 || input_w < 32) throw ConfigError("model: input dimensions must be >= 32");
  if (image_channels < 1) throw ConfigError("model: image_channels must be >= 1");
  if (head_hidden < 1 || position_reduce < 1) throw ConfigError("model: head widths must be >= 1");
  if (position_pool < 0) throw ConfigError("model: position_pool must be >= 0");
  if (orientation_pool < 1) throw ConfigError("model: orientation_pool must be >= 1");
  if (!(min_depth > 0)) throw ConfigError("model: min_depth must be positive");
  roi().validate();
}

RoiConfig ModelConfig::roi(double cda_r) const {
  return RoiConfig{k_object, crop_size, cda_r, hc_enabled, heat_channels};
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"backbone", to_string(c.backbone)},
       {"position_init", to_string(c.position_init)},
       {"orientation_init", to_string(c.orientation_init)},
       {"pretrained_path", c.pretrained_path},
       {"hc_enabled", c.hc_enabled},
       {"heat_channels", c.heat_channels},
       {"input_h", c.input_h},
       {"input_w", c.input_w},
       {"image_channels", c.image_channels},
       {"crop_size", c.crop_size},
       {"k_object", c.k_object},
       {"head_hidden", c.head_hidden},
       {"position_reduce", c.position_reduce},
       {"position_pool", c.position_pool},
       {"orientation_pool", c.orientation_pool},
       {"min_depth", c.min_depth}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.backbone = parse_backbone(j.value("backbone", to_string(d.backbone)));
  c.position_init = parse_init(j.value("position_init", to_string(d.position_init)));
  c.orientation_init = parse_init(j.value("orientation_init", to_string(d.orientation_init)));
  c.pretrained_path = j.value("pretrained_path", d.pretrained_path);
  c.hc_enabled = j.value("hc_enabled", d.hc_enabled);
  c.heat_channels = j.value("heat_channels", d.heat_channels);
  c.input_h = j.value("input_h", d.input_h);
  c.input_w = j.value("input_w", d.input_w);
  c.image_channels = j.value("image_channels", d.image_channels);
  c.crop_size = j.value("crop_size", d.crop_size);
  c.k_object = j.value("k_object", d.k_object);
  c.head_hidden = j.value("head_hidden", d.head_hidden);
  c.position_reduce = j.value("position_reduce", d.position_reduce);
  c.position_pool = j.value("position_pool", d.position_pool);
  c.orientation_pool = j.value("orientation_pool", d.orientation_pool);
  c.min_depth = j.value("min_depth", d.min_depth);
}

nn::EncoderSpec encoder_spec(Backbone b) {
  return b == Backbone::small ? nn::EncoderSpec::small() : nn::EncoderSpec::large();
}

int encoder_output_extent(const nn::EncoderSpec& spec, int extent) {
  const int pad = spec.stem_kernel / 2;
  int e = (extent + 2 * pad - spec.stem_kernel) / 2 + 1;
  if (spec.stem_maxpool) e = (e + 2 - 3) / 2 + 1;
  for (int s = 0; s < 4; ++s) e = (e + 2 - 3) / spec.strides[s] + 1;
  return e;
}

template <typename Scalar>
Model<Scalar>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const nn::EncoderSpec spec = encoder_spec(cfg.backbone);
  const int feat = spec.widths[3];
  pos_encoder_ = nn::Encoder<Scalar>(cfg.image_channels, spec, rng);
  decoder_ = nn::Decoder<Scalar>(spec, cfg.image_channels, cfg.heat_channels, rng);
  combine_ = nn::Conv2d<Scalar>(cfg.heat_channels, 1, 1, 1, 0, false, rng);
  combine_.weight().value.array().setConstant(Scalar(1) / Scalar(cfg.heat_channels));
  feat_h_ = encoder_output_extent(spec, cfg.input_h);
  feat_w_ = encoder_output_extent(spec, cfg.input_w);
  feat_c_ = feat;
  reduce_ = nn::Conv2d<Scalar>(feat, cfg.position_reduce, 1, 1, 0, true, rng);
  pool_h_ = cfg.position_pool > 0 ? std::min(cfg.position_pool, feat_h_) : feat_h_;
  pool_w_ = cfg.position_pool > 0 ? std::min(cfg.position_pool, feat_w_) : feat_w_;
  pos_fc1_ = nn::Linear<Scalar>(cfg.position_reduce * pool_h_ * pool_w_, cfg.head_hidden, rng);
  pos_fc2_ = nn::Linear<Scalar>(cfg.head_hidden, 3, rng, 1.0);
  Tensor<Scalar> ones(1, 3, 1, 1);
  ones.array().setOnes();
  t_mean_ = Param("t_mean", Tensor<Scalar>(1, 3, 1, 1), false);
  t_scale_ = Param("t_scale", ones, false);

  ori_encoder_ = nn::Encoder<Scalar>(cfg.orientation_channels(), spec, rng);
  ori_pool_ = std::min(cfg.orientation_pool, encoder_output_extent(spec, cfg.crop_size));
  ori_fc1_ = nn::Linear<Scalar>(feat * ori_pool_ * ori_pool_, cfg.head_hidden, rng);
  ori_fc2_ = nn::Linear<Scalar>(cfg.head_hidden, 4, rng, 1.0);
  // Identity rotation when the features vanish (e.g. a crop entirely outside the frame).
  ori_fc2_.bias().value.data()[0] = Scalar(1);
}

template <typename Scalar>
void Model<Scalar>::visit_translation(const Visitor& f) {
  auto named = [&](const std::string& prefix, Param& p) { f(prefix + p.name, p); };
  pos_encoder_.visit("translation.encoder.", named);
  decoder_.visit("translation.decoder.", named);
  combine_.visit("translation.combine.", named);
  reduce_.visit("translation.position.reduce.", named);
  pos_fc1_.visit("translation.position.fc1.", named);
  pos_fc2_.visit("translation.position.fc2.", named);
  named("translation.", t_mean_);
  named("translation.", t_scale_);
}

template <typename Scalar>
void Model<Scalar>::visit_orientation(const Visitor& f) {
  auto named = [&](const std::string& prefix, Param& p) { f(prefix + p.name, p); };
  ori_encoder_.visit("orientation.encoder.", named);
  ori_fc1_.visit("orientation.fc1.", named);
  ori_fc2_.visit("orientation.fc2.", named);
}

template <typename Scalar>
void Model<Scalar>::visit(const Visitor& f) {
  visit_translation(f);
  visit_orientation(f);
}

template <typename Scalar>
std::size_t Model<Scalar>::parameter_count() {
  std::size_t n = 0;
  visit([&](const std::string&, Param& p) {
    if (p.trainable) n += static_cast<std::size_t>(p.value.size());
  });
  return n;
}

template <typename Scalar>
void Model<Scalar>::zero_grad() {
  visit([](const std::string&, Param& p) { p.grad.set_zero(); });
}

template <typename Scalar>
void Model<Scalar>::set_training(bool translation, bool orientation) {
  pos_encoder_.set_training(translation);
  decoder_.set_training(translation);
  ori_encoder_.set_training(orientation);
}

template <typename Scalar>
void Model<Scalar>::set_translation_stats(const Vec3<Scalar>& mean, const Vec3<Scalar>& scale) {
  for (int k = 0; k < 3; ++k) {
    t_mean_.value.data()[k] = mean[k];
    t_scale_.value.data()[k] = scale[k];
  }
}

template <typename Scalar>
TranslationOutput<Scalar> Model<Scalar>::forward_translation(const Tensor<Scalar>& images) {
  if (images.c() != cfg_.image_channels || images.h() != cfg_.input_h || images.w() != cfg_.input_w) {
    throw ContractError("forward_translation: expected N x " + std::to_string(cfg_.image_channels) +
                        " x " + std::to_string(cfg_.input_h) + " x " + std::to_string(cfg_.input_w) +
                        " images, got " + images.shape_string());
  }
  image_h_ = images.h();
  image_w_ = images.w();
  const int n = images.n();
  TranslationOutput<Scalar> out;
  const std::vector<Tensor<Scalar>> feats = pos_encoder_.forward(images);

  Tensor<Scalar> r = reduce_relu_.forward(reduce_.forward(feats[3]));
  if (pool_h_ != feat_h_ || pool_w_ != feat_w_) r = nn::adaptive_avg_pool(r, pool_h_, pool_w_);
  const Tensor<Scalar> raw =
      pos_fc2_.forward(pos_relu_.forward(pos_fc1_.forward(nn::reshape(r, int(r.sample_size()), 1, 1))));
  out.t_pred.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      out.t_pred[i][k] = t_mean_.value.data()[k] + t_scale_.value.data()[k] * raw(i, k, 0, 0);
    }
  }

  out.heatstack = decoder_.forward(feats, images);
  const Tensor<Scalar> comb = combine_.forward(out.heatstack);
  out.heatmaps.resize(n);
  out.center_pred.resize(n);
  for (int i = 0; i < n; ++i) {
    out.heatmaps[i] = normalize_heatmap<Scalar>(comb.plane(i, 0));
    out.center_pred[i] = dsnt(out.heatmaps[i]);
  }
  heatmaps_ = out.heatmaps;
  return out;
}

template <typename Scalar>
void Model<Scalar>::backward_translation(const TranslationGrads<Scalar>& grads) {
  const int n = static_cast<int>(heatmaps_.size());
  std::vector<Tensor<Scalar>> feat_grads(4);
  if (!grads.t.empty()) {
    Tensor<Scalar> g(n, 3, 1, 1);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < 3; ++k) g(i, k, 0, 0) = grads.t[i][k] * t_scale_.value.data()[k];
    }
    g = pos_fc1_.backward(pos_relu_.backward(pos_fc2_.backward(g)));
    g = nn::reshape(g, cfg_.position_reduce, pool_h_, pool_w_);
    if (pool_h_ != feat_h_ || pool_w_ != feat_w_) g = nn::adaptive_avg_pool_backward(g, feat_h_, feat_w_);
    feat_grads[3] = reduce_.backward(reduce_relu_.backward(g));
  }
  const bool map_grads = !grads.heatmap.empty() || !grads.center.empty();
  if (map_grads || !grads.heatstack.empty()) {
    Tensor<Scalar> gcomb(n, 1, image_h_, image_w_);
    if (map_grads) {
      for (int i = 0; i < n; ++i) {
        Grid<Scalar> gh = Grid<Scalar>::Zero(image_h_, image_w_);
        if (!grads.heatmap.empty()) gh += grads.heatmap[i];
        if (!grads.center.empty()) gh += dsnt_backward<Scalar>(image_h_, image_w_, grads.center[i]);
        gcomb.plane(i, 0) = normalize_heatmap_backward(heatmaps_[i], gh);
      }
    }
    Tensor<Scalar> gstack = combine_.backward(gcomb);
    if (!grads.heatstack.empty()) gstack.array() += grads.heatstack.array();
    const std::vector<Tensor<Scalar>> dec = decoder_.backward(gstack);
    for (int k = 0; k < 4; ++k) {
      if (dec[k].empty()) continue;
      if (feat_grads[k].empty()) {
        feat_grads[k] = dec[k];
      } else {
        feat_grads[k].array() += dec[k].array();
      }
    }
  }
  pos_encoder_.backward(feat_grads);
}

template <typename Scalar>
std::vector<Quaternion<Scalar>> Model<Scalar>::forward_orientation(const Tensor<Scalar>& rois) {
  if (rois.c() != cfg_.orientation_channels()) {
    throw ContractError("forward_orientation: expected " + std::to_string(cfg_.orientation_channels()) +
                        " channels, got " + rois.shape_string());
  }
  const std::vector<Tensor<Scalar>> feats = ori_encoder_.forward(rois);
  ori_feat_h_ = feats[3].h();
  ori_feat_w_ = feats[3].w();
  Tensor<Scalar> pooled = ori_pool_ == 1 ? nn::global_avg_pool(feats[3])
                                          : nn::adaptive_avg_pool(feats[3], ori_pool_, ori_pool_);
  pooled = nn::reshape(pooled, int(pooled.sample_size()), 1, 1);
  const Tensor<Scalar> raw = ori_fc2_.forward(ori_relu_.forward(ori_fc1_.forward(pooled)));
  const int n = rois.n();
  q_pred_.resize(n);
  raw_q_norm_.resize(n);
  for (int i = 0; i < n; ++i) {
    const Vec4<Scalar> r(raw(i, 0, 0, 0), raw(i, 1, 0, 0), raw(i, 2, 0, 0), raw(i, 3, 0, 0));
    q_pred_[i] = normalize_quaternion<Scalar>(r);
    raw_q_norm_[i] = r.norm();
  }
  return q_pred_;
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::backward_orientation(std::span<const Vec4<Scalar>> grad_q_wxyz) {
  const int n = static_cast<int>(q_pred_.size());
  if (static_cast<int>(grad_q_wxyz.size()) != n) {
    throw ContractError("backward_orientation: gradient batch mismatch");
  }
  Tensor<Scalar> g(n, 4, 1, 1);
  for (int i = 0; i < n; ++i) {
    const Vec4<Scalar> q = wxyz(q_pred_[i]);
    const Vec4<Scalar> gr = (grad_q_wxyz[i] - q * q.dot(grad_q_wxyz[i])) / raw_q_norm_[i];
    for (int k = 0; k < 4; ++k) g(i, k, 0, 0) = gr[k];
  }
  g = ori_fc1_.backward(ori_relu_.backward(ori_fc2_.backward(g)));
  std::vector<Tensor<Scalar>> feat_grads(4);
  g = nn::reshape(g, feat_c_, ori_pool_, ori_pool_);
  feat_grads[3] = ori_pool_ == 1 ? nn::global_avg_pool_backward(g, ori_feat_h_, ori_feat_w_)
                                 : nn::adaptive_avg_pool_backward(g, ori_feat_h_, ori_feat_w_);
  return ori_encoder_.backward(feat_grads);
}

template <typename Scalar>
PoseOutput<Scalar> Model<Scalar>::forward_pose(const Tensor<Scalar>& images, PoseMode mode,
                                               std::optional<double> cda_r, Rng* rng,
                                               ImageFrame original) {
  return forward_pose(images, forward_translation(images), mode, cda_r, rng, original);
}

template <typename Scalar>
PoseOutput<Scalar> Model<Scalar>::forward_pose(const Tensor<Scalar>& images,
                                               TranslationOutput<Scalar> translation, PoseMode mode,
                                               std::optional<double> cda_r, Rng* rng,
                                               ImageFrame original) {
  if (original.width <= 0 || original.height <= 0) original = {cfg_.input_w, cfg_.input_h};
  const bool jitter = mode == PoseMode::train && cda_r.has_value();
  if (jitter && rng == nullptr) throw ContractError("forward_pose: center augmentation needs an rng");
  const double sx = double(cfg_.input_w) / original.width;
  const double sy = double(cfg_.input_h) / original.height;
  const RoiConfig roi = cfg_.roi(cda_r.value_or(0.15));

  PoseOutput<Scalar> out;
  out.translation = std::move(translation);
  const TranslationOutput<Scalar>& tr = out.translation;
  const int n = images.n();
  const Tensor<Scalar> stack = cfg_.hc_enabled ? concat_channels(images, tr.heatstack) : images;
  const int s = cfg_.crop_size;
  out.rois = Tensor<Scalar>(n, stack.c(), s, s);
  out.boxes.resize(n);
  out.fully_outside.resize(n);
  windows_.resize(n);
  for (int i = 0; i < n; ++i) {
    const double u_in = normalized_to_pixel_axis<double>(tr.center_pred[i].x(), cfg_.input_w);
    const double v_in = normalized_to_pixel_axis<double>(tr.center_pred[i].y(), cfg_.input_h);
    const double z = std::max<double>(tr.t_pred[i].z(), cfg_.min_depth);
    BoundingBox box = bounding_box(PixelCoord{u_in / sx, v_in / sy}, z, roi);
    if (jitter) box = augment_box(box, *cda_r, *rng);
    const CropWindow win{box.center.u * sx, box.center.v * sy, box.side * sx, box.side * sy};
    out.boxes[i] = box;
    out.fully_outside[i] = win.outside(stack.w(), stack.h());
    windows_[i] = win;
    crop_sample(stack.sample_data(i), stack.c(), stack.h(), stack.w(), win, s, out.rois.sample_data(i));
  }
  const std::vector<Quaternion<Scalar>> q = forward_orientation(out.rois);
  out.poses.resize(n);
  for (int i = 0; i < n; ++i) out.poses[i] = Pose<Scalar>{tr.t_pred[i], q[i]};
  return out;
}

template <typename Scalar>
void Model<Scalar>::backward_pose(const TranslationGrads<Scalar>* translation,
                                  std::span<const Vec4<Scalar>> grad_q_wxyz, bool heat_flow) {
  const Tensor<Scalar> grois = backward_orientation(grad_q_wxyz);
  TranslationGrads<Scalar> tg;
  if (translation != nullptr) tg = *translation;
  bool touched = translation != nullptr;
  if (cfg_.hc_enabled && heat_flow) {
    const int n = grois.n();
    const int channels = cfg_.orientation_channels();
    Tensor<Scalar> gstack(n, channels, image_h_, image_w_);
    for (int i = 0; i < n; ++i) {
      crop_sample_backward(grois.sample_data(i), channels, image_h_, image_w_, windows_[i],
                           cfg_.crop_size, gstack.sample_data(i));
    }
    Tensor<Scalar> hs = slice_channels(gstack, cfg_.image_channels, cfg_.heat_channels);
    if (tg.heatstack.empty()) {
      tg.heatstack = std::move(hs);
    } else {
      tg.heatstack.array() += hs.array();
    }
    touched = true;
  }
  if (touched) backward_translation(tg);
}

template <typename Scalar>
void Model<Scalar>::save_encoder(const std::string& path, bool orientation) {
  std::map<std::string, const Tensor<Scalar>*> tensors;
  auto collect = [&](const std::string& prefix, Param& p) { tensors[prefix + p.name] = &p.value; };
  nn::Encoder<Scalar>& enc = orientation ? ori_encoder_ : pos_encoder_;
  enc.visit("encoder.", collect);
  const nlohmann::json meta = {{"kind", "lsp-encoder"},
                               {"backbone", to_string(cfg_.backbone)},
                               {"in_channels", enc.in_channels()}};
  save_archive<Scalar>(path, meta, tensors);
}

namespace {

template <typename Scalar>
void load_encoder_from(nn::Encoder<Scalar>& enc, const TensorArchive& ar, int image_channels,
                       const std::string& path) {
  auto assign = [&](const std::string& prefix, nn::Parameter<Scalar>& p) {
    const std::string name = prefix + p.name;
    const auto it = ar.tensors.find(name);
    if (it == ar.tensors.end()) throw ConfigError(path + ": missing encoder tensor " + name);
    const Tensor<double>& src = it->second;
    if (src.same_shape(p.value.template cast<double>())) {
      p.value = src.template cast<Scalar>();
      return;
    }
    // First convolution with a different input-channel count: image channels
    // get the channel-summed kernel spread evenly, extra channels start at zero.
    const bool first = name == "encoder.conv1.weight";
    if (!first || src.n() != p.value.n() || src.h() != p.value.h() || src.w() != p.value.w()) {
      throw ConfigError(path + ": shape mismatch for " + name + " (" + src.shape_string() + " vs " +
                        p.value.shape_string() + ")");
    }
    p.value.set_zero();
    const bool copy = src.c() == image_channels;
    for (int o = 0; o < p.value.n(); ++o) {
      for (int c = 0; c < std::min(image_channels, p.value.c()); ++c) {
        if (copy) {
          p.value.plane(o, c) = src.plane(o, c).template cast<Scalar>();
        } else {
          Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(src.h(), src.w());
          for (int s = 0; s < src.c(); ++s) sum += src.plane(o, s);
          p.value.plane(o, c) = (sum / image_channels).template cast<Scalar>();
        }
      }
    }
  };
  enc.visit("encoder.", assign);
}

}  // namespace

template <typename Scalar>
void Model<Scalar>::load_pretrained_encoder(const std::string& path, bool translation, bool orientation) {
  if (path.empty() || !std::filesystem::exists(path)) {
    throw ConfigError(
        "pretrained initialization requested but no encoder weights were found at '" + path +
        "'. Set model.pretrained_path to an lsp-encoder archive. To use published ImageNet "
        "ResNet weights, download them (e.g. torchvision resnet18 for backbone=large) and export "
        "each tensor under the names listed by `lsp selftest --list-encoder-names` into the "
        "archive format described in the README.");
  }
  const TensorArchive ar = load_archive(path);
  if (ar.meta.value("kind", "") != "lsp-encoder") throw ConfigError(path + ": not an lsp-encoder archive");
  if (ar.meta.value("backbone", "") != to_string(cfg_.backbone)) {
    throw ConfigError(path + ": encoder backbone '" + ar.meta.value("backbone", "") +
                      "' does not match model backbone '" + to_string(cfg_.backbone) + "'");
  }
  if (translation) load_encoder_from(pos_encoder_, ar, cfg_.image_channels, path);
  if (orientation) load_encoder_from(ori_encoder_, ar, cfg_.image_channels, path);
}

template <typename Scalar>
Model<Scalar> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model<Scalar> m(cfg, seed);
  const bool pos = cfg.position_init == InitMode::pretrained;
  const bool ori = cfg.orientation_init == InitMode::pretrained;
  if (cfg.hc_enabled && ori) {
    log_warn(
        "pretrained orientation encoder combined with heatmap concatenation: classification "
        "weights were found to hurt orientation accuracy in this setting; random init is "
        "recommended");
  }
  if (pos || ori) m.load_pretrained_encoder(cfg.pretrained_path, pos, ori);
  return m;
}

template class Model<float>;
template class Model<double>;
template Model<float> build_model<float>(const ModelConfig&, std::uint64_t);
template Model<double> build_model<double>(const ModelConfig&, std::uint64_t);

}  // namespace lsp
