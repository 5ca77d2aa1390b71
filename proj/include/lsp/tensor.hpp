#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <string>

#include "lsp/error.hpp"

namespace lsp {

/// Dense NCHW tensor. Each sample is a contiguous C x (H*W) row-major block,
/// so per-sample convolutions reduce to plain Eigen matrix products.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  Tensor(int n, int c, int h, int w)
      : shape_{n, c, h, w}, data_(Array::Zero(Eigen::Index(n) * c * h * w)) {}

  static Tensor like(const Tensor& other) {
    return Tensor(other.n(), other.c(), other.h(), other.w());
  }

  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int h() const { return shape_[2]; }
  int w() const { return shape_[3]; }
  const std::array<int, 4>& shape() const { return shape_; }
  Eigen::Index size() const { return data_.size(); }
  Eigen::Index plane_size() const { return Eigen::Index(h()) * w(); }
  Eigen::Index sample_size() const { return Eigen::Index(c()) * plane_size(); }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Scalar* sample_data(int i) { return data_.data() + i * sample_size(); }
  const Scalar* sample_data(int i) const { return data_.data() + i * sample_size(); }
  Scalar* channel_data(int i, int ch) { return sample_data(i) + ch * plane_size(); }
  const Scalar* channel_data(int i, int ch) const { return sample_data(i) + ch * plane_size(); }

  Scalar& operator()(int i, int ch, int y, int x) {
    return data_[((Eigen::Index(i) * c() + ch) * h() + y) * w() + x];
  }
  Scalar operator()(int i, int ch, int y, int x) const {
    return data_[((Eigen::Index(i) * c() + ch) * h() + y) * w() + x];
  }

  /// Sample i viewed as a C x (H*W) matrix.
  MatrixMap matrix(int i) { return MatrixMap(sample_data(i), c(), plane_size()); }
  ConstMatrixMap matrix(int i) const { return ConstMatrixMap(sample_data(i), c(), plane_size()); }

  /// Channel plane viewed as an H x W matrix.
  MatrixMap plane(int i, int ch) { return MatrixMap(channel_data(i, ch), h(), w()); }
  ConstMatrixMap plane(int i, int ch) const { return ConstMatrixMap(channel_data(i, ch), h(), w()); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void set_zero() { data_.setZero(); }

  std::string shape_string() const {
    return std::to_string(n()) + "x" + std::to_string(c()) + "x" + std::to_string(h()) + "x" +
           std::to_string(w());
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(n(), c(), h(), w());
    out.array() = data_.template cast<Other>();
    return out;
  }

 private:
  std::array<int, 4> shape_{0, 0, 0, 0};
  Array data_;
};

/// Copy sample `i` of `src` into a new 1-sample tensor.
template <typename Scalar>
Tensor<Scalar> take_sample(const Tensor<Scalar>& src, int i) {
  Tensor<Scalar> out(1, src.c(), src.h(), src.w());
  out.array() = src.array().segment(i * src.sample_size(), src.sample_size());
  return out;
}

/// Channel-wise concatenation of two tensors with equal N, H, W.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ContractError("concat_channels: shape mismatch " + a.shape_string() + " vs " +
                        b.shape_string());
  }
  Tensor<Scalar> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int i = 0; i < a.n(); ++i) {
    std::copy_n(a.sample_data(i), a.sample_size(), out.sample_data(i));
    std::copy_n(b.sample_data(i), b.sample_size(), out.sample_data(i) + a.sample_size());
  }
  return out;
}

/// Inverse of concat_channels for gradients: channels [first, first+count).
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& t, int first, int count) {
  if (first < 0 || first + count > t.c()) throw ContractError("slice_channels: out of range");
  Tensor<Scalar> out(t.n(), count, t.h(), t.w());
  for (int i = 0; i < t.n(); ++i) {
    std::copy_n(t.channel_data(i, first), out.sample_size(), out.sample_data(i));
  }
  return out;
}

}  // namespace lsp
