#include "lsp/optim.hpp"

#include <cmath>
#include <limits>

namespace lsp {

void to_json(nlohmann::json& j, const AdamConfig& c) {
  j = {{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}, {"weight_decay", c.weight_decay}};
}

void from_json(const nlohmann::json& j, AdamConfig& c) {
  const AdamConfig d;
  c.lr = j.value("lr", d.lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
}

template <typename Scalar>
void Adam<Scalar>::step(const NamedParams& params) {
  ++t_;
  const double bc1 = 1 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1 - std::pow(cfg_.beta2, double(t_));
  const Scalar step = static_cast<Scalar>(cfg_.lr / bc1);
  const Scalar b1 = static_cast<Scalar>(cfg_.beta1), b2 = static_cast<Scalar>(cfg_.beta2);
  const Scalar inv_sqrt_bc2 = static_cast<Scalar>(1.0 / std::sqrt(bc2));
  const Scalar eps = static_cast<Scalar>(cfg_.eps);
  const Scalar decay = static_cast<Scalar>(1.0 - cfg_.lr * cfg_.weight_decay);
  for (const auto& [name, p] : params) {
    if (!p->trainable) continue;
    auto it = moments_.find(name);
    if (it == moments_.end()) {
      it = moments_.emplace(name, std::make_pair(Tensor<Scalar>::like(p->value), Tensor<Scalar>::like(p->value))).first;
    }
    auto& m = it->second.first.array();
    auto& v = it->second.second.array();
    const auto& g = p->grad.array();
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.square();
    if (cfg_.weight_decay != 0) p->value.array() *= decay;
    p->value.array() -= step * m / (v.sqrt() * inv_sqrt_bc2 + eps);
  }
}

template <typename Scalar>
std::map<std::string, const Tensor<Scalar>*> Adam<Scalar>::state_tensors() const {
  std::map<std::string, const Tensor<Scalar>*> out;
  for (const auto& [name, mv] : moments_) {
    out[name + ".adam_m"] = &mv.first;
    out[name + ".adam_v"] = &mv.second;
  }
  return out;
}

template <typename Scalar>
void Adam<Scalar>::load_state(long long steps, const std::map<std::string, Tensor<Scalar>>& tensors) {
  t_ = steps;
  moments_.clear();
  for (const auto& [key, t] : tensors) {
    const auto dot = key.rfind(".adam_");
    if (dot == std::string::npos) continue;
    const std::string name = key.substr(0, dot);
    auto& slot = moments_[name];
    if (key.ends_with("_m")) {
      slot.first = t;
    } else {
      slot.second = t;
    }
  }
}

double PlateauScheduler::step(double value, double lr) {
  if (value < best_ * (1 - min_delta_) || !std::isfinite(best_)) {
    best_ = value;
    bad_ = 0;
    return lr;
  }
  if (++bad_ >= patience_) {
    bad_ = 0;
    return lr * factor_;
  }
  return lr;
}

nlohmann::json PlateauScheduler::state() const {
  return {{"factor", factor_}, {"patience", patience_}, {"min_delta", min_delta_},
          {"best", std::isfinite(best_) ? nlohmann::json(best_) : nlohmann::json(nullptr)},
          {"bad_epochs", bad_}};
}

void PlateauScheduler::load_state(const nlohmann::json& j) {
  factor_ = j.value("factor", factor_);
  patience_ = j.value("patience", patience_);
  min_delta_ = j.value("min_delta", min_delta_);
  best_ = j.contains("best") && !j["best"].is_null() ? j["best"].get<double>()
                                                      : std::numeric_limits<double>::infinity();
  bad_ = j.value("bad_epochs", 0);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace lsp
