#pragma once

// Minimal convolutional network layers with hand-written backward passes.
//
// Every layer caches what its backward pass needs during forward(); one
// backward() call must follow each forward() whose gradients are wanted.
// Parameter gradients accumulate until zero_grad().

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lsp/tensor.hpp"

namespace lsp::nn {

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool trainable = true;  // false for running statistics and fixed buffers

  Parameter() = default;
  Parameter(std::string n, Tensor<Scalar> v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<Scalar>::like(value)), trainable(train) {}
};

template <typename Scalar>
using ParamVisitor = std::function<void(const std::string& prefix, Parameter<Scalar>&)>;

/// He-normal initialization with the given fan-in.
template <typename Scalar>
void kaiming_normal(Tensor<Scalar>& t, int fan_in, std::mt19937_64& rng, double gain = 2.0);

template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias,
         std::mt19937_64& rng);

  Tensor<Scalar> forward(const Tensor<Scalar>& x);
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out);
  void visit(const std::string& prefix, const ParamVisitor<Scalar>& f);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  Parameter<Scalar>& weight() { return weight_; }
  int out_size(int extent) const { return (extent + 2 * pad_ - k_) / stride_ + 1; }

 private:
  void im2col(const Scalar* src, int h, int w, Scalar* cols) const;
  void col2im(const Scalar* cols, int h, int w, Scalar* dst) const;

  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  bool has_bias_ = false;
  Parameter<Scalar> weight_;  // out x in x k x k
  Parameter<Scalar> bias_;    // 1 x out x 1 x 1
  Tensor<Scalar> input_;
};

template <typename Scalar>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  Tensor<Scalar> forward(const Tensor<Scalar>& x);
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out);
  void visit(const std::string& prefix, const ParamVisitor<Scalar>& f);
  void set_training(bool t) { training_ = t; }

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

 private:
  int channels_ = 0;
  bool training_ = true;
  bool cached_training_ = true;
  Parameter<Scalar> gamma_, beta_, running_mean_, running_var_;
  Tensor<Scalar> xhat_;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std_;
};

template <typename Scalar>
class ReLU {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x);
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out);

 private:
  Tensor<Scalar> output_;
};

/// 3x3 / stride 2 / pad 1 max pooling.
template <typename Scalar>
class MaxPool2d {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x);
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out);

 private:
  std::array<int, 4> in_shape_{};
  std::vector<Eigen::Index> argmax_;
};

/// Fully connected layer over N x F x 1 x 1 tensors.
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, std::mt19937_64& rng, double gain = 2.0);

  Tensor<Scalar> forward(const Tensor<Scalar>& x);
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out);
  void visit(const std::string& prefix, const ParamVisitor<Scalar>& f);

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }

 private:
  int in_ = 0, out_ = 0;
  Parameter<Scalar> weight_;  // 1 x 1 x out x in
  Parameter<Scalar> bias_;
  Tensor<Scalar> input_;
};

/// Nearest-neighbour resize to an explicit size.
template <typename Scalar>
Tensor<Scalar> upsample_nearest(const Tensor<Scalar>& x, int h, int w);
template <typename Scalar>
Tensor<Scalar> upsample_nearest_backward(const Tensor<Scalar>& grad_out, int h, int w);

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Tensor<Scalar>& grad_out, int h, int w);

/// Average pooling onto an out_h x out_w grid of (possibly overlapping) bins.
template <typename Scalar>
Tensor<Scalar> adaptive_avg_pool(const Tensor<Scalar>& x, int out_h, int out_w);
template <typename Scalar>
Tensor<Scalar> adaptive_avg_pool_backward(const Tensor<Scalar>& grad_out, int h, int w);

/// Reinterpret N x C x H x W as N x (C*H*W) x 1 x 1 (and back).
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, int c, int h, int w);

/// conv3x3 - BN - ReLU - conv3x3 - BN, plus identity or projection shortcut, then ReLU.
template <typename Scalar>
class BasicBlock {
 public:
  BasicBlock() = default;
  BasicBlock(int in_channels, int out_channels, int stride, std::mt19937_64& rng);

  Tensor<Scalar> forward(const Tensor<Scalar>& x);
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out);
  void visit(const std::string& prefix, const ParamVisitor<Scalar>& f);
  void set_training(bool t);

 private:
  Conv2d<Scalar> conv1_, conv2_, down_conv_;
  BatchNorm2d<Scalar> bn1_, bn2_, down_bn_;
  ReLU<Scalar> relu1_, relu_out_;
  bool projection_ = false;
};

struct EncoderSpec {
  int stem_kernel = 3;
  bool stem_maxpool = false;
  std::array<int, 4> widths{16, 32, 64, 128};
  std::array<int, 4> blocks{1, 1, 1, 1};
  std::array<int, 4> strides{1, 2, 2, 2};
  int stem_width = 16;

  static EncoderSpec small();
  static EncoderSpec large();  // ResNet18 topology
};

/// Residual feature extractor exposing the four stage outputs.
template <typename Scalar>
class Encoder {
 public:
  Encoder() = default;
  Encoder(int in_channels, const EncoderSpec& spec, std::mt19937_64& rng);

  std::vector<Tensor<Scalar>> forward(const Tensor<Scalar>& x);
  /// grads[k] may be empty (no gradient reaching stage k).
  Tensor<Scalar> backward(const std::vector<Tensor<Scalar>>& grads);
  void visit(const std::string& prefix, const ParamVisitor<Scalar>& f);
  void set_training(bool t);

  const EncoderSpec& spec() const { return spec_; }
  int in_channels() const { return in_channels_; }
  Conv2d<Scalar>& stem_conv() { return stem_conv_; }

 private:
  int in_channels_ = 0;
  EncoderSpec spec_;
  Conv2d<Scalar> stem_conv_;
  BatchNorm2d<Scalar> stem_bn_;
  ReLU<Scalar> stem_relu_;
  MaxPool2d<Scalar> pool_;
  std::vector<std::vector<BasicBlock<Scalar>>> stages_;
};

/// Upscaling path: resize to the next skip's size, concatenate, conv-BN-ReLU.
/// The last stage resizes to input resolution, concatenates the input image
/// and emits `out_channels` linear maps.
template <typename Scalar>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const EncoderSpec& spec, int image_channels, int out_channels, std::mt19937_64& rng);

  Tensor<Scalar> forward(const std::vector<Tensor<Scalar>>& feats, const Tensor<Scalar>& image);
  /// Returns gradients for each encoder feature; the image gradient is dropped.
  std::vector<Tensor<Scalar>> backward(const Tensor<Scalar>& grad_out);
  void visit(const std::string& prefix, const ParamVisitor<Scalar>& f);
  void set_training(bool t);

 private:
  struct Up {
    Conv2d<Scalar> conv;
    BatchNorm2d<Scalar> bn;
    ReLU<Scalar> relu;
    int in_h = 0, in_w = 0, up_channels = 0;
  };
  std::vector<Up> ups_;  // one per skip, deepest first
  Conv2d<Scalar> final_conv_;
  int final_in_h_ = 0, final_in_w_ = 0, final_up_channels_ = 0;
};

}  // namespace lsp::nn
