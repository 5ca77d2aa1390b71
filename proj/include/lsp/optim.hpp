#pragma once

#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsp/nn.hpp"

namespace lsp {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: w <- w (1 - lr * weight_decay) before the Adam step
};

void to_json(nlohmann::json& j, const AdamConfig& c);
void from_json(const nlohmann::json& j, AdamConfig& c);

/// Adam with bias correction and optional decoupled weight decay. Moment buffers are keyed by parameter name.
template <typename Scalar>
class Adam {
 public:
  using Param = nn::Parameter<Scalar>;
  using NamedParams = std::vector<std::pair<std::string, Param*>>;

  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const NamedParams& params);

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }
  long long steps() const { return t_; }

  /// Moment buffers as "<name>.adam_m" / "<name>.adam_v" tensors.
  std::map<std::string, const Tensor<Scalar>*> state_tensors() const;
  void load_state(long long steps, const std::map<std::string, Tensor<Scalar>>& tensors);

 private:
  AdamConfig cfg_;
  long long t_ = 0;
  std::map<std::string, std::pair<Tensor<Scalar>, Tensor<Scalar>>> moments_;
};

/// Multiplies the learning rate by `factor` once the monitored value has
/// failed to improve on the best value by a relative `min_delta` for
/// `patience` consecutive epochs.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.5, int patience = 5, double min_delta = 1e-4)
      : factor_(factor), patience_(patience), min_delta_(min_delta) {}

  /// Feeds one epoch's value; returns the (possibly decayed) learning rate.
  double step(double value, double lr);

  double best() const { return best_; }
  int bad_epochs() const { return bad_; }

  nlohmann::json state() const;
  void load_state(const nlohmann::json& j);

 private:
  double factor_;
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

}  // namespace lsp
