#pragma once

// The three-network pose estimator: a residual encoder shared by a
// fully-connected translation head and an upscaling localization decoder
// (heatmaps -> softmax -> DSNT), plus a separate orientation encoder fed with
// a depth-sized crop around the predicted center.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsp/geometry.hpp"
#include "lsp/heatmap.hpp"
#include "lsp/nn.hpp"
#include "lsp/roi.hpp"

namespace lsp {

enum class Backbone { small, large };
enum class InitMode { random, pretrained };

struct ModelConfig {
  Backbone backbone = Backbone::small;
  InitMode position_init = InitMode::random;
  InitMode orientation_init = InitMode::random;
  std::string pretrained_path;  // encoder archive used by InitMode::pretrained
  bool hc_enabled = false;
  int heat_channels = 64;
  int input_h = 256;
  int input_w = 409;
  int image_channels = 1;
  int crop_size = 224;
  double k_object = 700.0;  // pixels * meters, in original-image pixels
  int head_hidden = 64;     // width of the fully-connected heads
  int position_reduce = 8;  // channels kept before flattening into the translation head
  int position_pool = 0;    // average-pool the reduced map to this grid first (0: keep full size)
  int orientation_pool = 1;  // orientation features are average-pooled to this grid, then flattened
  double min_depth = 0.5;   // predicted z is clamped here before sizing the box

  void validate() const;
  RoiConfig roi(double cda_r = 0.15) const;
  int orientation_channels() const { return image_channels + (hc_enabled ? heat_channels : 0); }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Original (pre-resize) image size used to express boxes in original pixels.
struct ImageFrame {
  int width = 0;
  int height = 0;
};

template <typename Scalar>
struct TranslationOutput {
  std::vector<Vec3<Scalar>> t_pred;
  Tensor<Scalar> heatstack;  // N x H x h x w, non-normalized
  std::vector<Heatmap<Scalar>> heatmaps;
  std::vector<Vec2<Scalar>> center_pred;  // normalized DSNT coordinates
};

/// Upstream gradients for the translation module. Empty members mean "no
/// gradient from that output".
template <typename Scalar>
struct TranslationGrads {
  std::vector<Vec3<Scalar>> t;
  std::vector<Grid<Scalar>> heatmap;
  std::vector<Vec2<Scalar>> center;
  Tensor<Scalar> heatstack;
};

enum class PoseMode { train, eval };

template <typename Scalar>
struct PoseOutput {
  std::vector<Pose<Scalar>> poses;
  TranslationOutput<Scalar> translation;
  std::vector<BoundingBox> boxes;  // original-image pixels, after any augmentation
  std::vector<bool> fully_outside;
  Tensor<Scalar> rois;
};

template <typename Scalar>
class Model {
 public:
  using Param = nn::Parameter<Scalar>;
  using Visitor = std::function<void(const std::string& name, Param&)>;

  /// Random initialization only; see build_model() for pretrained weights.
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  void visit(const Visitor& f);
  void visit_translation(const Visitor& f);
  void visit_orientation(const Visitor& f);
  std::size_t parameter_count();
  void zero_grad();

  void set_training(bool translation, bool orientation);
  void train() { set_training(true, true); }
  void eval() { set_training(false, false); }

  /// Output de-standardization of the translation head: t = mean + scale * raw.
  void set_translation_stats(const Vec3<Scalar>& mean, const Vec3<Scalar>& scale);

  TranslationOutput<Scalar> forward_translation(const Tensor<Scalar>& images);
  void backward_translation(const TranslationGrads<Scalar>& grads);

  std::vector<Quaternion<Scalar>> forward_orientation(const Tensor<Scalar>& rois);
  /// Returns dL/drois.
  Tensor<Scalar> backward_orientation(std::span<const Vec4<Scalar>> grad_q_wxyz);

  /// Translation -> box -> optional center jitter (train mode only) -> crop -> orientation.
  PoseOutput<Scalar> forward_pose(const Tensor<Scalar>& images, PoseMode mode,
                                  std::optional<double> cda_r, Rng* rng, ImageFrame original = {});
  /// The box -> crop -> orientation part of forward_pose for a translation
  /// output computed elsewhere; `images` is the tensor the crop is taken from.
  PoseOutput<Scalar> forward_pose(const Tensor<Scalar>& images, TranslationOutput<Scalar> translation,
                                  PoseMode mode, std::optional<double> cda_r, Rng* rng,
                                  ImageFrame original = {});
  /// Backpropagates orientation gradients; with heatmap concatenation and
  /// heat_flow the crop gradient reaches the translation module. `translation`
  /// may be null when the translation module receives no direct loss.
  void backward_pose(const TranslationGrads<Scalar>* translation,
                     std::span<const Vec4<Scalar>> grad_q_wxyz, bool heat_flow);

  /// Loads encoder weights from an archive written by save_encoder().
  void load_pretrained_encoder(const std::string& path, bool translation, bool orientation);
  void save_encoder(const std::string& path, bool orientation);

  nn::Encoder<Scalar>& translation_encoder() { return pos_encoder_; }
  nn::Encoder<Scalar>& orientation_encoder() { return ori_encoder_; }

 private:
  ModelConfig cfg_;
  nn::Encoder<Scalar> pos_encoder_;
  nn::Decoder<Scalar> decoder_;
  nn::Conv2d<Scalar> combine_;
  nn::Conv2d<Scalar> reduce_;
  nn::ReLU<Scalar> reduce_relu_;
  nn::Linear<Scalar> pos_fc1_, pos_fc2_;
  nn::ReLU<Scalar> pos_relu_;
  Param t_mean_, t_scale_;

  nn::Encoder<Scalar> ori_encoder_;
  nn::Linear<Scalar> ori_fc1_, ori_fc2_;
  nn::ReLU<Scalar> ori_relu_;

  // forward caches
  int feat_h_ = 0, feat_w_ = 0, feat_c_ = 0;
  int pool_h_ = 0, pool_w_ = 0;
  int ori_feat_h_ = 0, ori_feat_w_ = 0;
  int ori_pool_ = 1;
  std::vector<Heatmap<Scalar>> heatmaps_;
  std::vector<Scalar> raw_q_norm_;
  std::vector<Quaternion<Scalar>> q_pred_;
  std::vector<CropWindow> windows_;
  int image_h_ = 0, image_w_ = 0;
};

/// Builds a model and applies the configured initialization. Pretrained
/// initialization without an encoder archive is an error.
template <typename Scalar>
Model<Scalar> build_model(const ModelConfig& cfg, std::uint64_t seed);

/// Spatial size of the encoder's last stage for an input extent.
int encoder_output_extent(const nn::EncoderSpec& spec, int extent);

nn::EncoderSpec encoder_spec(Backbone b);

std::string to_string(Backbone b);
std::string to_string(InitMode m);

/// Scalar-first quaternion order names used in files.
inline constexpr const char* kQuatOrderWxyz = "wxyz";

}  // namespace lsp
