#pragma once

#include <Eigen/Core>

#include <array>
#include <stdexcept>
#include <string>

namespace spnet {

using Index = Eigen::Index;

/// Dense 4-D array in (batch, channel, height, width) order, row-major within
/// each plane.  The scalar type is a template parameter so the same code runs
/// in float32 for training and in extended precision for gradient checks.
template <typename Scalar>
class Tensor {
 public:
  using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  Tensor(Index n, Index c, Index h, Index w) : n_(n), c_(c), h_(h), w_(w) {
    if (n < 0 || c < 0 || h < 0 || w < 0)
      throw std::invalid_argument("Tensor: negative dimension");
    data_ = Storage::Zero(n * c * h * w);
  }

  static Tensor constant(Index n, Index c, Index h, Index w, Scalar v) {
    Tensor t(n, c, h, w);
    t.data_.setConstant(v);
    return t;
  }

  Index batch() const { return n_; }
  Index channels() const { return c_; }
  Index height() const { return h_; }
  Index width() const { return w_; }
  Index size() const { return data_.size(); }
  std::array<Index, 4> dims() const { return {n_, c_, h_, w_}; }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  /// Bounds-checked element access; out-of-range indices are a hard error.
  Scalar at(Index b, Index ch, Index y, Index x) const {
    return data_[checked_offset(b, ch, y, x)];
  }
  Scalar& at(Index b, Index ch, Index y, Index x) {
    return data_[checked_offset(b, ch, y, x)];
  }

  /// One (batch, channel) plane as an h-by-w Eigen view.
  Eigen::Map<Plane> plane(Index b, Index ch) {
    return Eigen::Map<Plane>(data_.data() + plane_offset(b, ch), h_, w_);
  }
  Eigen::Map<const Plane> plane(Index b, Index ch) const {
    return Eigen::Map<const Plane>(data_.data() + plane_offset(b, ch), h_, w_);
  }

  /// All channels of one batch item as a (channels)-by-(h*w) row-major view.
  Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  item(Index b) {
    return {data_.data() + b * c_ * h_ * w_, c_, h_ * w_};
  }
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  item(Index b) const {
    return {data_.data() + b * c_ * h_ * w_, c_, h_ * w_};
  }

  Storage& raw() { return data_; }
  const Storage& raw() const { return data_; }

  void set_zero() { data_.setZero(); }

  template <typename S2>
  Tensor<S2> cast() const {
    Tensor<S2> out(n_, c_, h_, w_);
    out.raw() = data_.template cast<S2>();
    return out;
  }

 private:
  Index plane_offset(Index b, Index ch) const { return (b * c_ + ch) * h_ * w_; }

  Index checked_offset(Index b, Index ch, Index y, Index x) const {
    if (b < 0 || b >= n_ || ch < 0 || ch >= c_ || y < 0 || y >= h_ || x < 0 || x >= w_)
      throw std::out_of_range("Tensor::at(" + std::to_string(b) + "," + std::to_string(ch) +
                              "," + std::to_string(y) + "," + std::to_string(x) + ")");
    return ((b * c_ + ch) * h_ + y) * w_ + x;
  }

  Index n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  Storage data_;
};

/// Binary mask over an image grid; values are restricted to {0, 1}.
using BinaryMask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline bool is_binary(const BinaryMask& m) {
  return ((m == 0) || (m == 1)).all();
}

}  // namespace spnet
