// Copyright 2026  The hvector Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef HVECTOR_TENSOR_HPP_
#define HVECTOR_TENSOR_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hvector/errors.hpp"

namespace hvector {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

/// Dense row-major n-dimensional array.
///
/// Every tensor also has a matrix view: rows() is the product of all leading
/// dimensions and cols() is the last one, so a [T, E] sequence is a T x E
/// matrix, a [w, Cin, Cout] kernel is a (w*Cin) x Cout matrix and a 1-D
/// vector [n] is a 1 x n row.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = Vector::Zero(shape_size(shape_));
  }

  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_size(shape_) != data_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Vector(Eigen::Map<const Vector>(values.begin(),
                                                                 Index(values.size())))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    Tensor t(Shape{m.rows(), m.cols()});
    t.mat() = m;
    return t;
  }

  template <typename Derived>
  static Tensor from_vector(const Eigen::MatrixBase<Derived>& v) {
    Tensor t(Shape{v.size()});
    t.vec() = v.reshaped();
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return Index(shape_.size()); }
  Index dim(Index i) const { return shape_.at(std::size_t(i)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Index cols() const { return shape_.empty() ? 0 : shape_.back(); }
  Index rows() const { return cols() == 0 ? 0 : size() / cols(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  VectorMap vec() { return VectorMap(data_.data(), data_.size()); }
  ConstVectorMap vec() const { return ConstVectorMap(data_.data(), data_.size()); }
  MatrixMap mat() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap mat() const { return ConstMatrixMap(data_.data(), rows(), cols()); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }
  Scalar& operator()(Index r, Index c) { return data_[r * cols() + c]; }
  Scalar operator()(Index r, Index c) const { return data_[r * cols() + c]; }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    for (Index d : shape)
      if (d <= 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
  }

  Shape shape_;
  Vector data_;
};

using TensorD = Tensor<double>;
using TensorF = Tensor<float>;

// Binary tensor record: "HVT1", rank (u64), dims (u64 each), then float64
// values, everything little-endian. Float tensors are widened on write.
namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated tensor stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double x) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(x));
  std::memcpy(&bits, &x, sizeof(x));
  put_u64(os, bits);
}

inline double get_f64(std::istream& is) {
  std::uint64_t bits = get_u64(is);
  double x;
  std::memcpy(&x, &bits, sizeof(x));
  return x;
}

}  // namespace detail

inline constexpr char kTensorMagic[4] = {'H', 'V', 'T', '1'};
inline constexpr std::uint64_t kMaxTensorRank = 16;

template <typename Scalar>
void write_tensor(std::ostream& os, const Tensor<Scalar>& t) {
  os.write(kTensorMagic, 4);
  detail::put_u64(os, std::uint64_t(t.rank()));
  for (Index d : t.shape()) detail::put_u64(os, std::uint64_t(d));
  for (Index i = 0; i < t.size(); ++i) detail::put_f64(os, double(t[i]));
  if (!os) throw IoError("failed writing tensor");
}

template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw IoError("truncated tensor stream");
  if (std::string_view(magic, 4) != std::string_view(kTensorMagic, 4))
    throw FormatError("bad tensor magic");
  const std::uint64_t rank = detail::get_u64(is);
  if (rank == 0 || rank > kMaxTensorRank)
    throw FormatError("unsupported tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    const std::uint64_t v = detail::get_u64(is);
    if (v == 0 || v > (std::uint64_t(1) << 40)) throw FormatError("bad tensor dim");
    d = Index(v);
  }
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = Scalar(detail::get_f64(is));
  return t;
}

}  // namespace hvector

#endif  // HVECTOR_TENSOR_HPP_
