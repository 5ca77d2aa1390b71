#pragma once

// Optimization loop: per-regime objectives, plateau learning-rate decay,
// best/last checkpoints with exact resume, and the ablation driver.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsp/data.hpp"
#include "lsp/evaluation.hpp"
#include "lsp/losses.hpp"
#include "lsp/network.hpp"
#include "lsp/optim.hpp"

namespace lsp {

enum class Regime { translation_only, pose_decoupled, pose_end_to_end };

Regime parse_regime(const std::string& s);
std::string to_string(Regime r);

struct TrainConfig {
  int batch_size = 16;
  double lr = 1e-4;
  double weight_decay = 0.0;
  double plateau_factor = 0.5;
  int plateau_patience = 5;
  double plateau_min_delta = 1e-4;  // relative improvement
  int max_epochs = 30;
  std::uint64_t seed = 0;
  Regime regime = Regime::pose_decoupled;
  bool cda_enabled = false;
  double cda_r = 0.15;
  // Random in-plane camera roll applied to training samples, labels rotated to match.
  bool roll_augment = false;
  double lambda = 1.0;
  double sigma2 = 1.0;
  // Translation weights taken from another run's checkpoint: frozen for
  // orientation-only training, or used as a warm start.
  std::string translation_checkpoint;
  bool freeze_translation = false;
  bool warm_start = false;
  double stop_lr_ratio = 1.0 / 64.0;  // stop once lr < lr * ratio

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  /// Cross-checks model and training settings.
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Preprocessed samples held in memory.
struct Dataset {
  std::vector<Tensor<float>> images;  // each 1 x C x H x W
  std::vector<Posed> poses;
  std::vector<Vec2<double>> centers;  // normalized
  std::vector<ImageFrame> frames;     // original image sizes
  std::vector<CameraIntrinsics> cameras;  // scaled to the network input grid

  std::size_t size() const { return poses.size(); }
  Tensor<float> batch(std::span<const std::size_t> idx) const;
  ImageFrame frame(std::span<const std::size_t> idx) const;

  static Dataset load(const Manifest& m, const ModelConfig& cfg);
};

struct Evaluation {
  LossBreakdown losses;
  double objective = 0;
  MetricsReport metrics;
  bool has_rotation = false;
  std::vector<Posed> predictions;
  std::vector<BoundingBox> boxes;  // original-image pixels; empty without rotation
};

/// Eval-mode pass over a dataset: losses of the regime and metrics.
Evaluation evaluate(Model<float>& model, const Dataset& data, const TrainConfig& cfg);

struct TrainResult {
  std::filesystem::path run_dir;
  int epochs = 0;  // epochs completed in total
  int best_epoch = 0;
  double best_objective = 0;
  std::string stop_reason;
};

/// Trains into run_dir (best.ckpt, last.ckpt, history.jsonl, config.json).
/// With resume, continues from run_dir/last.ckpt when present.
TrainResult train(const Manifest& train_set, const Manifest& val_set, const RunConfig& cfg,
                  const std::filesystem::path& run_dir, bool resume = false);

/// Same as above with already-loaded datasets.
TrainResult train(const Dataset& train_set, const Dataset& val_set, const RunConfig& cfg,
                  const std::filesystem::path& run_dir, bool resume = false);

struct LoadedModel {
  RunConfig config;
  Model<float> model;
  nlohmann::json meta;
};

/// Restores a model (weights and normalization buffers) from a checkpoint.
LoadedModel load_checkpoint(const std::filesystem::path& path);

struct Prediction {
  Posed pose;
  BoundingBox box;  // original-image pixels
  PixelCoord center;
};

Prediction predict_image(Model<float>& model, const std::filesystem::path& image);

/// Runs the six init x HC x CDA configurations. Rows without heatmap
/// concatenation reuse one translation-only run. Writes ablation.json and
/// ablation.txt into out_dir.
std::vector<AblationRow> ablation_suite(const Manifest& train_set, const Manifest& val_set,
                                        const RunConfig& base, const std::filesystem::path& out_dir);

}  // namespace lsp
