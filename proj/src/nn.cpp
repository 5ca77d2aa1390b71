#include "lsp/nn.hpp"

#include <cmath>
#include <limits>

namespace lsp::nn {

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const RowMatrix<Scalar>>;

template <typename Scalar>
void add_into(Tensor<Scalar>& acc, const Tensor<Scalar>& g) {
  if (acc.empty()) {
    acc = g;
  } else {
    acc.array() += g.array();
  }
}

}  // namespace

template <typename Scalar>
void kaiming_normal(Tensor<Scalar>& t, int fan_in, std::mt19937_64& rng, double gain) {
  const double sd = std::sqrt(gain / std::max(1, fan_in));
  std::normal_distribution<double> dist(0.0, sd);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(dist(rng));
}

// ---------------------------------------------------------------- Conv2d

template <typename Scalar>
Conv2d<Scalar>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding,
                       bool bias, std::mt19937_64& rng)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(padding),
      has_bias_(bias) {
  Tensor<Scalar> w(out_channels, in_channels, kernel, kernel);
  kaiming_normal(w, in_channels * kernel * kernel, rng);
  weight_ = Parameter<Scalar>("weight", std::move(w));
  if (has_bias_) bias_ = Parameter<Scalar>("bias", Tensor<Scalar>(1, out_channels, 1, 1));
}

template <typename Scalar>
void Conv2d<Scalar>::visit(const std::string& prefix, const ParamVisitor<Scalar>& f) {
  f(prefix, weight_);
  if (has_bias_) f(prefix, bias_);
}

template <typename Scalar>
void Conv2d<Scalar>::im2col(const Scalar* src, int h, int w, Scalar* cols) const {
  const int ho = out_size(h), wo = out_size(w);
  const Eigen::Index n_out = Eigen::Index(ho) * wo;
  for (int c = 0; c < in_; ++c) {
    const Scalar* plane = src + Eigen::Index(c) * h * w;
    for (int ky = 0; ky < k_; ++ky) {
      for (int kx = 0; kx < k_; ++kx) {
        Scalar* row = cols + ((Eigen::Index(c) * k_ + ky) * k_ + kx) * n_out;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          Scalar* dst = row + Eigen::Index(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill_n(dst, wo, Scalar(0));
            continue;
          }
          const Scalar* line = plane + Eigen::Index(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            dst[ox] = (ix >= 0 && ix < w) ? line[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void Conv2d<Scalar>::col2im(const Scalar* cols, int h, int w, Scalar* dst) const {
  const int ho = out_size(h), wo = out_size(w);
  const Eigen::Index n_out = Eigen::Index(ho) * wo;
  for (int c = 0; c < in_; ++c) {
    Scalar* plane = dst + Eigen::Index(c) * h * w;
    for (int ky = 0; ky < k_; ++ky) {
      for (int kx = 0; kx < k_; ++kx) {
        const Scalar* row = cols + ((Eigen::Index(c) * k_ + ky) * k_ + kx) * n_out;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= h) continue;
          const Scalar* srcrow = row + Eigen::Index(oy) * wo;
          Scalar* line = plane + Eigen::Index(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix >= 0 && ix < w) line[ix] += srcrow[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::forward(const Tensor<Scalar>& x) {
  if (x.c() != in_) {
    throw ContractError("Conv2d: expected " + std::to_string(in_) + " input channels, got " +
                        x.shape_string());
  }
  input_ = x;
  const int ho = out_size(x.h()), wo = out_size(x.w());
  Tensor<Scalar> y(x.n(), out_, ho, wo);
  const Eigen::Index rows = Eigen::Index(in_) * k_ * k_;
  ConstMatMap<Scalar> wmat(weight_.value.data(), out_, rows);
  const bool direct = k_ == 1 && stride_ == 1 && pad_ == 0;
  RowMatrix<Scalar> cols;
  if (!direct) cols.resize(rows, Eigen::Index(ho) * wo);
  for (int i = 0; i < x.n(); ++i) {
    auto out = y.matrix(i);
    if (direct) {
      out.noalias() = wmat * x.matrix(i);
    } else {
      im2col(x.sample_data(i), x.h(), x.w(), cols.data());
      out.noalias() = wmat * cols;
    }
    if (has_bias_) {
      for (int c = 0; c < out_; ++c) out.row(c).array() += bias_.value.data()[c];
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  const Tensor<Scalar>& x = input_;
  const int ho = out_size(x.h()), wo = out_size(x.w());
  if (grad_out.n() != x.n() || grad_out.c() != out_ || grad_out.h() != ho || grad_out.w() != wo) {
    throw ContractError("Conv2d::backward: gradient shape " + grad_out.shape_string());
  }
  Tensor<Scalar> gx = Tensor<Scalar>::like(x);
  const Eigen::Index rows = Eigen::Index(in_) * k_ * k_;
  ConstMatMap<Scalar> wmat(weight_.value.data(), out_, rows);
  MatMap<Scalar> gw(weight_.grad.data(), out_, rows);
  const bool direct = k_ == 1 && stride_ == 1 && pad_ == 0;
  RowMatrix<Scalar> cols, gcols;
  if (!direct) cols.resize(rows, Eigen::Index(ho) * wo);
  for (int i = 0; i < x.n(); ++i) {
    const auto gy = grad_out.matrix(i);
    if (direct) {
      gw.noalias() += gy * x.matrix(i).transpose();
      gx.matrix(i).noalias() = wmat.transpose() * gy;
    } else {
      im2col(x.sample_data(i), x.h(), x.w(), cols.data());
      gw.noalias() += gy * cols.transpose();
      gcols.noalias() = wmat.transpose() * gy;
      col2im(gcols.data(), x.h(), x.w(), gx.sample_data(i));
    }
    if (has_bias_) {
      for (int c = 0; c < out_; ++c) bias_.grad.data()[c] += gy.row(c).sum();
    }
  }
  return gx;
}

// ----------------------------------------------------------- BatchNorm2d

template <typename Scalar>
BatchNorm2d<Scalar>::BatchNorm2d(int channels) : channels_(channels) {
  Tensor<Scalar> ones(1, channels, 1, 1);
  ones.array().setOnes();
  gamma_ = Parameter<Scalar>("gamma", ones);
  beta_ = Parameter<Scalar>("beta", Tensor<Scalar>(1, channels, 1, 1));
  running_mean_ = Parameter<Scalar>("running_mean", Tensor<Scalar>(1, channels, 1, 1), false);
  running_var_ = Parameter<Scalar>("running_var", ones, false);
}

template <typename Scalar>
void BatchNorm2d<Scalar>::visit(const std::string& prefix, const ParamVisitor<Scalar>& f) {
  f(prefix, gamma_);
  f(prefix, beta_);
  f(prefix, running_mean_);
  f(prefix, running_var_);
}

template <typename Scalar>
Tensor<Scalar> BatchNorm2d<Scalar>::forward(const Tensor<Scalar>& x) {
  if (x.c() != channels_) throw ContractError("BatchNorm2d: channel mismatch " + x.shape_string());
  cached_training_ = training_;
  Tensor<Scalar> y = Tensor<Scalar>::like(x);
  xhat_ = Tensor<Scalar>::like(x);
  inv_std_.resize(channels_);
  const Eigen::Index plane = x.plane_size();
  const double count = double(x.n()) * plane;
  for (int c = 0; c < channels_; ++c) {
    double mean, var;
    if (training_) {
      double s = 0;
      for (int i = 0; i < x.n(); ++i) {
        s += x.plane(i, c).template cast<double>().sum();
      }
      mean = s / count;
      double ss = 0;
      for (int i = 0; i < x.n(); ++i) {
        ss += (x.plane(i, c).template cast<double>().array() - mean).square().sum();
      }
      var = ss / count;
      const double unbiased = count > 1 ? ss / (count - 1) : var;
      Scalar& rm = running_mean_.value.data()[c];
      Scalar& rv = running_var_.value.data()[c];
      rm = static_cast<Scalar>((1 - kMomentum) * rm + kMomentum * mean);
      rv = static_cast<Scalar>((1 - kMomentum) * rv + kMomentum * unbiased);
    } else {
      mean = running_mean_.value.data()[c];
      var = running_var_.value.data()[c];
    }
    const Scalar inv = static_cast<Scalar>(1.0 / std::sqrt(var + kEps));
    inv_std_[c] = inv;
    const Scalar g = gamma_.value.data()[c], b = beta_.value.data()[c];
    const Scalar m = static_cast<Scalar>(mean);
    for (int i = 0; i < x.n(); ++i) {
      const Scalar* src = x.channel_data(i, c);
      Scalar* xh = xhat_.channel_data(i, c);
      Scalar* dst = y.channel_data(i, c);
      for (Eigen::Index k = 0; k < plane; ++k) {
        xh[k] = (src[k] - m) * inv;
        dst[k] = g * xh[k] + b;
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> BatchNorm2d<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  if (!grad_out.same_shape(xhat_)) throw ContractError("BatchNorm2d::backward: shape mismatch");
  Tensor<Scalar> gx = Tensor<Scalar>::like(grad_out);
  const Eigen::Index plane = grad_out.plane_size();
  const double count = double(grad_out.n()) * plane;
  for (int c = 0; c < channels_; ++c) {
    double sum_g = 0, sum_gx = 0;
    for (int i = 0; i < grad_out.n(); ++i) {
      const Scalar* g = grad_out.channel_data(i, c);
      const Scalar* xh = xhat_.channel_data(i, c);
      for (Eigen::Index k = 0; k < plane; ++k) {
        sum_g += g[k];
        sum_gx += double(g[k]) * xh[k];
      }
    }
    gamma_.grad.data()[c] += static_cast<Scalar>(sum_gx);
    beta_.grad.data()[c] += static_cast<Scalar>(sum_g);
    const double gamma = gamma_.value.data()[c];
    const double inv = inv_std_[c];
    for (int i = 0; i < grad_out.n(); ++i) {
      const Scalar* g = grad_out.channel_data(i, c);
      const Scalar* xh = xhat_.channel_data(i, c);
      Scalar* dst = gx.channel_data(i, c);
      if (cached_training_) {
        const double scale = gamma * inv / count;
        for (Eigen::Index k = 0; k < plane; ++k) {
          dst[k] = static_cast<Scalar>(scale * (count * g[k] - sum_g - xh[k] * sum_gx));
        }
      } else {
        for (Eigen::Index k = 0; k < plane; ++k) dst[k] = static_cast<Scalar>(gamma * inv * g[k]);
      }
    }
  }
  return gx;
}

// ------------------------------------------------------------ ReLU / pool

template <typename Scalar>
Tensor<Scalar> ReLU<Scalar>::forward(const Tensor<Scalar>& x) {
  output_ = x;
  output_.array() = output_.array().max(Scalar(0));
  return output_;
}

template <typename Scalar>
Tensor<Scalar> ReLU<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> g = grad_out;
  g.array() = (output_.array() > Scalar(0)).select(grad_out.array(), Scalar(0));
  return g;
}

template <typename Scalar>
Tensor<Scalar> MaxPool2d<Scalar>::forward(const Tensor<Scalar>& x) {
  in_shape_ = x.shape();
  const int ho = (x.h() + 2 - 3) / 2 + 1, wo = (x.w() + 2 - 3) / 2 + 1;
  Tensor<Scalar> y(x.n(), x.c(), ho, wo);
  argmax_.assign(y.size(), 0);
  Eigen::Index o = 0;
  for (int i = 0; i < x.n(); ++i) {
    for (int c = 0; c < x.c(); ++c) {
      const Eigen::Index base = (Eigen::Index(i) * x.c() + c) * x.plane_size();
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox, ++o) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          Eigen::Index arg = base;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * 2 - 1 + ky;
            if (iy < 0 || iy >= x.h()) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * 2 - 1 + kx;
              if (ix < 0 || ix >= x.w()) continue;
              const Eigen::Index idx = base + Eigen::Index(iy) * x.w() + ix;
              if (x.data()[idx] > best) {
                best = x.data()[idx];
                arg = idx;
              }
            }
          }
          y.data()[o] = best;
          argmax_[o] = arg;
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> MaxPool2d<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> gx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
  for (Eigen::Index o = 0; o < grad_out.size(); ++o) gx.data()[argmax_[o]] += grad_out.data()[o];
  return gx;
}

// ---------------------------------------------------------------- Linear

template <typename Scalar>
Linear<Scalar>::Linear(int in_features, int out_features, std::mt19937_64& rng, double gain)
    : in_(in_features), out_(out_features) {
  Tensor<Scalar> w(1, 1, out_features, in_features);
  kaiming_normal(w, in_features, rng, gain);
  weight_ = Parameter<Scalar>("weight", std::move(w));
  bias_ = Parameter<Scalar>("bias", Tensor<Scalar>(1, out_features, 1, 1));
}

template <typename Scalar>
void Linear<Scalar>::visit(const std::string& prefix, const ParamVisitor<Scalar>& f) {
  f(prefix, weight_);
  f(prefix, bias_);
}

template <typename Scalar>
Tensor<Scalar> Linear<Scalar>::forward(const Tensor<Scalar>& x) {
  if (x.sample_size() != in_) {
    throw ContractError("Linear: expected " + std::to_string(in_) + " features, got " +
                        x.shape_string());
  }
  input_ = x;
  Tensor<Scalar> y(x.n(), out_, 1, 1);
  ConstMatMap<Scalar> xm(x.data(), x.n(), in_);
  ConstMatMap<Scalar> wm(weight_.value.data(), out_, in_);
  MatMap<Scalar> ym(y.data(), x.n(), out_);
  ym.noalias() = xm * wm.transpose();
  ym.rowwise() += ConstMatMap<Scalar>(bias_.value.data(), 1, out_).row(0);
  return y;
}

template <typename Scalar>
Tensor<Scalar> Linear<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  const int n = input_.n();
  ConstMatMap<Scalar> xm(input_.data(), n, in_);
  ConstMatMap<Scalar> wm(weight_.value.data(), out_, in_);
  ConstMatMap<Scalar> gy(grad_out.data(), n, out_);
  MatMap<Scalar>(weight_.grad.data(), out_, in_).noalias() += gy.transpose() * xm;
  MatMap<Scalar>(bias_.grad.data(), 1, out_) += gy.colwise().sum();
  Tensor<Scalar> gx = Tensor<Scalar>::like(input_);
  MatMap<Scalar>(gx.data(), n, in_).noalias() = gy * wm;
  return gx;
}

// ------------------------------------------------------ shape-only layers

template <typename Scalar>
Tensor<Scalar> upsample_nearest(const Tensor<Scalar>& x, int h, int w) {
  Tensor<Scalar> y(x.n(), x.c(), h, w);
  std::vector<int> sx(w);
  for (int j = 0; j < w; ++j) sx[j] = static_cast<int>((long long)j * x.w() / w);
  for (int i = 0; i < x.n(); ++i) {
    for (int c = 0; c < x.c(); ++c) {
      const Scalar* src = x.channel_data(i, c);
      Scalar* dst = y.channel_data(i, c);
      for (int yy = 0; yy < h; ++yy) {
        const Scalar* line = src + Eigen::Index((long long)yy * x.h() / h) * x.w();
        for (int j = 0; j < w; ++j) dst[Eigen::Index(yy) * w + j] = line[sx[j]];
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest_backward(const Tensor<Scalar>& grad_out, int h, int w) {
  Tensor<Scalar> gx(grad_out.n(), grad_out.c(), h, w);
  const int ho = grad_out.h(), wo = grad_out.w();
  std::vector<int> sx(wo);
  for (int j = 0; j < wo; ++j) sx[j] = static_cast<int>((long long)j * w / wo);
  for (int i = 0; i < grad_out.n(); ++i) {
    for (int c = 0; c < grad_out.c(); ++c) {
      const Scalar* src = grad_out.channel_data(i, c);
      Scalar* dst = gx.channel_data(i, c);
      for (int yy = 0; yy < ho; ++yy) {
        Scalar* line = dst + Eigen::Index((long long)yy * h / ho) * w;
        for (int j = 0; j < wo; ++j) line[sx[j]] += src[Eigen::Index(yy) * wo + j];
      }
    }
  }
  return gx;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.n(), x.c(), 1, 1);
  for (int i = 0; i < x.n(); ++i) {
    y.matrix(i).col(0) = x.matrix(i).rowwise().mean();
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Tensor<Scalar>& grad_out, int h, int w) {
  Tensor<Scalar> gx(grad_out.n(), grad_out.c(), h, w);
  const Scalar inv = Scalar(1) / Scalar(h * w);
  for (int i = 0; i < grad_out.n(); ++i) {
    for (int c = 0; c < grad_out.c(); ++c) {
      gx.plane(i, c).setConstant(grad_out(i, c, 0, 0) * inv);
    }
  }
  return gx;
}

namespace {

// Bin k of an adaptive pooling over `extent` cells into `bins` bins.
std::pair<int, int> pool_bin(int k, int extent, int bins) {
  return {k * extent / bins, ((k + 1) * extent + bins - 1) / bins};
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> adaptive_avg_pool(const Tensor<Scalar>& x, int out_h, int out_w) {
  Tensor<Scalar> y(x.n(), x.c(), out_h, out_w);
  for (int i = 0; i < x.n(); ++i) {
    for (int c = 0; c < x.c(); ++c) {
      const auto src = x.plane(i, c);
      auto dst = y.plane(i, c);
      for (int a = 0; a < out_h; ++a) {
        const auto [r0, r1] = pool_bin(a, x.h(), out_h);
        for (int b = 0; b < out_w; ++b) {
          const auto [c0, c1] = pool_bin(b, x.w(), out_w);
          dst(a, b) = src.block(r0, c0, r1 - r0, c1 - c0).mean();
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> adaptive_avg_pool_backward(const Tensor<Scalar>& grad_out, int h, int w) {
  Tensor<Scalar> gx(grad_out.n(), grad_out.c(), h, w);
  for (int i = 0; i < grad_out.n(); ++i) {
    for (int c = 0; c < grad_out.c(); ++c) {
      const auto g = grad_out.plane(i, c);
      auto dst = gx.plane(i, c);
      for (int a = 0; a < grad_out.h(); ++a) {
        const auto [r0, r1] = pool_bin(a, h, grad_out.h());
        for (int b = 0; b < grad_out.w(); ++b) {
          const auto [c0, c1] = pool_bin(b, w, grad_out.w());
          dst.block(r0, c0, r1 - r0, c1 - c0).array() += g(a, b) / Scalar((r1 - r0) * (c1 - c0));
        }
      }
    }
  }
  return gx;
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, int c, int h, int w) {
  if (Eigen::Index(c) * h * w != x.sample_size()) throw ContractError("reshape: size mismatch");
  Tensor<Scalar> y(x.n(), c, h, w);
  y.array() = x.array();
  return y;
}

// ------------------------------------------------------------ BasicBlock

template <typename Scalar>
BasicBlock<Scalar>::BasicBlock(int in_channels, int out_channels, int stride, std::mt19937_64& rng)
    : conv1_(in_channels, out_channels, 3, stride, 1, false, rng),
      conv2_(out_channels, out_channels, 3, 1, 1, false, rng),
      bn1_(out_channels),
      bn2_(out_channels),
      projection_(stride != 1 || in_channels != out_channels) {
  if (projection_) {
    down_conv_ = Conv2d<Scalar>(in_channels, out_channels, 1, stride, 0, false, rng);
    down_bn_ = BatchNorm2d<Scalar>(out_channels);
  }
}

template <typename Scalar>
void BasicBlock<Scalar>::visit(const std::string& prefix, const ParamVisitor<Scalar>& f) {
  conv1_.visit(prefix + "conv1.", f);
  bn1_.visit(prefix + "bn1.", f);
  conv2_.visit(prefix + "conv2.", f);
  bn2_.visit(prefix + "bn2.", f);
  if (projection_) {
    down_conv_.visit(prefix + "downsample.0.", f);
    down_bn_.visit(prefix + "downsample.1.", f);
  }
}

template <typename Scalar>
void BasicBlock<Scalar>::set_training(bool t) {
  bn1_.set_training(t);
  bn2_.set_training(t);
  down_bn_.set_training(t);
}

template <typename Scalar>
Tensor<Scalar> BasicBlock<Scalar>::forward(const Tensor<Scalar>& x) {
  Tensor<Scalar> y = bn2_.forward(conv2_.forward(relu1_.forward(bn1_.forward(conv1_.forward(x)))));
  if (projection_) {
    y.array() += down_bn_.forward(down_conv_.forward(x)).array();
  } else {
    y.array() += x.array();
  }
  return relu_out_.forward(y);
}

template <typename Scalar>
Tensor<Scalar> BasicBlock<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  const Tensor<Scalar> g = relu_out_.backward(grad_out);
  Tensor<Scalar> gx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
  if (projection_) {
    gx.array() += down_conv_.backward(down_bn_.backward(g)).array();
  } else {
    gx.array() += g.array();
  }
  return gx;
}

// --------------------------------------------------------------- Encoder

EncoderSpec EncoderSpec::small() { return EncoderSpec{}; }

EncoderSpec EncoderSpec::large() {
  EncoderSpec s;
  s.stem_kernel = 7;
  s.stem_maxpool = true;
  s.stem_width = 64;
  s.widths = {64, 128, 256, 512};
  s.blocks = {2, 2, 2, 2};
  s.strides = {1, 2, 2, 2};
  return s;
}

template <typename Scalar>
Encoder<Scalar>::Encoder(int in_channels, const EncoderSpec& spec, std::mt19937_64& rng)
    : in_channels_(in_channels),
      spec_(spec),
      stem_conv_(in_channels, spec.stem_width, spec.stem_kernel, 2, spec.stem_kernel / 2, false, rng),
      stem_bn_(spec.stem_width) {
  int ch = spec.stem_width;
  for (int s = 0; s < 4; ++s) {
    std::vector<BasicBlock<Scalar>> blocks;
    for (int b = 0; b < spec.blocks[s]; ++b) {
      blocks.emplace_back(ch, spec.widths[s], b == 0 ? spec.strides[s] : 1, rng);
      ch = spec.widths[s];
    }
    stages_.push_back(std::move(blocks));
  }
}

template <typename Scalar>
void Encoder<Scalar>::visit(const std::string& prefix, const ParamVisitor<Scalar>& f) {
  stem_conv_.visit(prefix + "conv1.", f);
  stem_bn_.visit(prefix + "bn1.", f);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      stages_[s][b].visit(prefix + "layer" + std::to_string(s + 1) + "." + std::to_string(b) + ".", f);
    }
  }
}

template <typename Scalar>
void Encoder<Scalar>::set_training(bool t) {
  stem_bn_.set_training(t);
  for (auto& stage : stages_) {
    for (auto& b : stage) b.set_training(t);
  }
}

template <typename Scalar>
std::vector<Tensor<Scalar>> Encoder<Scalar>::forward(const Tensor<Scalar>& x) {
  Tensor<Scalar> h = stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(x)));
  if (spec_.stem_maxpool) h = pool_.forward(h);
  std::vector<Tensor<Scalar>> feats;
  for (auto& stage : stages_) {
    for (auto& b : stage) h = b.forward(h);
    feats.push_back(h);
  }
  return feats;
}

template <typename Scalar>
Tensor<Scalar> Encoder<Scalar>::backward(const std::vector<Tensor<Scalar>>& grads) {
  Tensor<Scalar> g;
  for (int s = static_cast<int>(stages_.size()) - 1; s >= 0; --s) {
    if (s < static_cast<int>(grads.size()) && !grads[s].empty()) add_into(g, grads[s]);
    if (g.empty()) continue;
    for (int b = static_cast<int>(stages_[s].size()) - 1; b >= 0; --b) g = stages_[s][b].backward(g);
  }
  if (g.empty()) return {};
  if (spec_.stem_maxpool) g = pool_.backward(g);
  return stem_conv_.backward(stem_bn_.backward(stem_relu_.backward(g)));
}

// --------------------------------------------------------------- Decoder

template <typename Scalar>
Decoder<Scalar>::Decoder(const EncoderSpec& spec, int image_channels, int out_channels,
                         std::mt19937_64& rng) {
  int ch = spec.widths[3];
  for (int s = 2; s >= 0; --s) {
    Up up;
    up.conv = Conv2d<Scalar>(ch + spec.widths[s], spec.widths[s], 3, 1, 1, false, rng);
    up.bn = BatchNorm2d<Scalar>(spec.widths[s]);
    ups_.push_back(std::move(up));
    ch = spec.widths[s];
  }
  final_conv_ = Conv2d<Scalar>(ch + image_channels, out_channels, 3, 1, 1, true, rng);
}

template <typename Scalar>
void Decoder<Scalar>::visit(const std::string& prefix, const ParamVisitor<Scalar>& f) {
  for (std::size_t k = 0; k < ups_.size(); ++k) {
    ups_[k].conv.visit(prefix + "up" + std::to_string(k) + ".conv.", f);
    ups_[k].bn.visit(prefix + "up" + std::to_string(k) + ".bn.", f);
  }
  final_conv_.visit(prefix + "out.", f);
}

template <typename Scalar>
void Decoder<Scalar>::set_training(bool t) {
  for (auto& u : ups_) u.bn.set_training(t);
}

template <typename Scalar>
Tensor<Scalar> Decoder<Scalar>::forward(const std::vector<Tensor<Scalar>>& feats,
                                        const Tensor<Scalar>& image) {
  if (feats.size() != 4) throw ContractError("Decoder: expected four encoder features");
  Tensor<Scalar> h = feats[3];
  for (std::size_t k = 0; k < ups_.size(); ++k) {
    const Tensor<Scalar>& skip = feats[2 - k];
    Up& up = ups_[k];
    up.in_h = h.h();
    up.in_w = h.w();
    up.up_channels = h.c();
    h = up.relu.forward(up.bn.forward(up.conv.forward(concat_channels(upsample_nearest(h, skip.h(), skip.w()), skip))));
  }
  final_in_h_ = h.h();
  final_in_w_ = h.w();
  final_up_channels_ = h.c();
  return final_conv_.forward(concat_channels(upsample_nearest(h, image.h(), image.w()), image));
}

template <typename Scalar>
std::vector<Tensor<Scalar>> Decoder<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  std::vector<Tensor<Scalar>> grads(4);
  Tensor<Scalar> g = final_conv_.backward(grad_out);
  g = upsample_nearest_backward(slice_channels(g, 0, final_up_channels_), final_in_h_, final_in_w_);
  for (int k = static_cast<int>(ups_.size()) - 1; k >= 0; --k) {
    Up& up = ups_[k];
    const Tensor<Scalar> gc = up.conv.backward(up.bn.backward(up.relu.backward(g)));
    grads[2 - k] = slice_channels(gc, up.up_channels, gc.c() - up.up_channels);
    g = upsample_nearest_backward(slice_channels(gc, 0, up.up_channels), up.in_h, up.in_w);
  }
  grads[3] = g;
  return grads;
}

#define LSP_INSTANTIATE(S)                                                               \
  template void kaiming_normal<S>(Tensor<S>&, int, std::mt19937_64&, double);            \
  template class Conv2d<S>;                                                              \
  template class BatchNorm2d<S>;                                                         \
  template class ReLU<S>;                                                                \
  template class MaxPool2d<S>;                                                           \
  template class Linear<S>;                                                              \
  template class BasicBlock<S>;                                                          \
  template class Encoder<S>;                                                             \
  template class Decoder<S>;                                                             \
  template Tensor<S> upsample_nearest<S>(const Tensor<S>&, int, int);                    \
  template Tensor<S> upsample_nearest_backward<S>(const Tensor<S>&, int, int);           \
  template Tensor<S> global_avg_pool<S>(const Tensor<S>&);                               \
  template Tensor<S> global_avg_pool_backward<S>(const Tensor<S>&, int, int);            \
  template Tensor<S> adaptive_avg_pool<S>(const Tensor<S>&, int, int);                   \
  template Tensor<S> adaptive_avg_pool_backward<S>(const Tensor<S>&, int, int);          \
  template Tensor<S> reshape<S>(const Tensor<S>&, int, int, int);
LSP_INSTANTIATE(float)
LSP_INSTANTIATE(double)
#undef LSP_INSTANTIATE

}  // namespace lsp::nn
