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

#ifndef HVECTOR_OPS_HPP_
#define HVECTOR_OPS_HPP_

// Differentiable operations over Graph values. Every op records one node with
// a hand-written local gradient rule. Sequence ops take a `group` length: the
// rows of the input are consecutive sequences of that many steps, which lets a
// whole batch of fragments go through one node.

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>

#include "hvector/graph.hpp"
#include "hvector/random.hpp"

namespace hvector {

namespace detail {

template <typename S>
void check_same_graph(const Var<S>& a, const Var<S>& b) {
  if (&a.graph() != &b.graph()) throw std::logic_error("operands live on different graphs");
}

template <typename S>
void check_same_shape(const char* op, const Var<S>& a, const Var<S>& b) {
  check_same_graph(a, b);
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename S>
void check_group(const char* op, Index rows, Index group) {
  if (rows == 0 || group <= 0)
    throw DataError(std::string(op) + ": empty sequence");
  if (rows % group != 0)
    throw DimensionError(std::string(op) + ": " + std::to_string(rows) +
                         " rows do not split into sequences of " + std::to_string(group));
}

template <typename S, typename Fwd, typename Bwd>
Var<S> unary(const Var<S>& x, Fwd fwd, Bwd bwd, const char* op) {
  const Tensor<S>& xv = x.value();
  Tensor<S> out(xv.shape());
  out.vec() = xv.vec().unaryExpr(fwd);
  const auto ix = x.id();
  return x.graph().record(
      std::move(out), {ix},
      [ix, bwd](Graph<S>& g, const Tensor<S>& up) {
        const Tensor<S>& xv = g.value(ix);
        Tensor<S> d(xv.shape());
        d.vec() = up.vec().binaryExpr(xv.vec(), bwd);
        g.accumulate(ix, d.mat());
      },
      op);
}

}  // namespace detail

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  detail::check_same_graph(a, b);
  const Tensor<S>& A = a.value();
  const Tensor<S>& B = b.value();
  if (A.cols() != B.rows())
    throw DimensionError("matmul: inner dims differ for " + shape_str(A.shape()) + " and " +
                         shape_str(B.shape()));
  Tensor<S> out(Shape{A.rows(), B.cols()});
  out.mat().noalias() = A.mat() * B.mat();
  const auto ia = a.id(), ib = b.id();
  return a.graph().record(
      std::move(out), {ia, ib},
      [ia, ib](Graph<S>& g, const Tensor<S>& up) {
        if (g.requires_grad(ia)) g.accumulate(ia, up.mat() * g.value(ib).mat().transpose());
        if (g.requires_grad(ib)) g.accumulate(ib, g.value(ia).mat().transpose() * up.mat());
      },
      "matmul");
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::check_same_shape("add", a, b);
  Tensor<S> out(a.shape());
  out.vec() = a.value().vec() + b.value().vec();
  const auto ia = a.id(), ib = b.id();
  return a.graph().record(
      std::move(out), {ia, ib},
      [ia, ib](Graph<S>& g, const Tensor<S>& up) {
        g.accumulate(ia, up.mat());
        g.accumulate(ib, up.mat());
      },
      "add");
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  detail::check_same_shape("sub", a, b);
  Tensor<S> out(a.shape());
  out.vec() = a.value().vec() - b.value().vec();
  const auto ia = a.id(), ib = b.id();
  return a.graph().record(
      std::move(out), {ia, ib},
      [ia, ib](Graph<S>& g, const Tensor<S>& up) {
        g.accumulate(ia, up.mat());
        g.accumulate(ib, -up.mat());
      },
      "sub");
}

/// Elementwise product.
template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  detail::check_same_shape("mul", a, b);
  Tensor<S> out(a.shape());
  out.vec() = a.value().vec().cwiseProduct(b.value().vec());
  const auto ia = a.id(), ib = b.id();
  return a.graph().record(
      std::move(out), {ia, ib},
      [ia, ib](Graph<S>& g, const Tensor<S>& up) {
        g.accumulate(ia, up.mat().cwiseProduct(g.value(ib).mat()));
        g.accumulate(ib, up.mat().cwiseProduct(g.value(ia).mat()));
      },
      "mul");
}

template <typename S>
Var<S> scale(const Var<S>& x, S c) {
  Tensor<S> out(x.shape());
  out.vec() = c * x.value().vec();
  const auto ix = x.id();
  return x.graph().record(
      std::move(out), {ix},
      [ix, c](Graph<S>& g, const Tensor<S>& up) { g.accumulate(ix, c * up.mat()); }, "scale");
}

/// x[R x C] + b[C] broadcast over rows.
template <typename S>
Var<S> add_bias(const Var<S>& x, const Var<S>& b) {
  detail::check_same_graph(x, b);
  if (b.value().size() != x.cols())
    throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " does not match " +
                         shape_str(x.shape()));
  Tensor<S> out(x.shape());
  out.mat() = x.value().mat().rowwise() + b.value().vec().transpose();
  const auto ix = x.id(), ib = b.id();
  return x.graph().record(
      std::move(out), {ix, ib},
      [ix, ib](Graph<S>& g, const Tensor<S>& up) {
        g.accumulate(ix, up.mat());
        if (g.requires_grad(ib))
          g.accumulate(ib, up.mat().colwise().sum().reshaped(g.value(ib).rows(), g.value(ib).cols()));
      },
      "add_bias");
}

template <typename S>
Var<S> relu(const Var<S>& x) {
  return detail::unary(
      x, [](S v) { return v > S(0) ? v : S(0); },
      [](S up, S v) { return v > S(0) ? up : S(0); }, "relu");
}

template <typename S>
S sigmoid_value(S v) {
  return S(1) / (S(1) + std::exp(-v));
}

template <typename S>
Var<S> sigmoid(const Var<S>& x) {
  return detail::unary(
      x, [](S v) { return sigmoid_value(v); },
      [](S up, S v) {
        const S s = sigmoid_value(v);
        return up * s * (S(1) - s);
      },
      "sigmoid");
}

template <typename S>
Var<S> tanh(const Var<S>& x) {
  return detail::unary(
      x, [](S v) { return std::tanh(v); },
      [](S up, S v) {
        const S t = std::tanh(v);
        return up * (S(1) - t * t);
      },
      "tanh");
}

template <typename S>
Var<S> square(const Var<S>& x) {
  return detail::unary(
      x, [](S v) { return v * v; }, [](S up, S v) { return S(2) * v * up; }, "square");
}

template <typename S>
Var<S> sum(const Var<S>& x) {
  Tensor<S> out(Shape{1});
  out[0] = x.value().vec().sum();
  const auto ix = x.id();
  return x.graph().record(
      std::move(out), {ix},
      [ix](Graph<S>& g, const Tensor<S>& up) {
        const Tensor<S>& xv = g.value(ix);
        g.accumulate(ix, Tensor<S>::Matrix::Constant(xv.rows(), xv.cols(), up[0]));
      },
      "sum");
}

template <typename S>
Var<S> mean(const Var<S>& x) {
  return scale(sum(x), S(1) / S(x.value().size()));
}

/// Concatenates along the last dimension; rows must agree.
template <typename S>
Var<S> concat(const Var<S>& a, const Var<S>& b) {
  detail::check_same_graph(a, b);
  const Tensor<S>& A = a.value();
  const Tensor<S>& B = b.value();
  if (A.rows() != B.rows())
    throw DimensionError("concat: row counts differ " + shape_str(A.shape()) + " vs " +
                         shape_str(B.shape()));
  const Index ca = A.cols(), cb = B.cols();
  Shape shape = (A.rank() == 1 && B.rank() == 1) ? Shape{ca + cb} : Shape{A.rows(), ca + cb};
  Tensor<S> out(shape);
  out.mat().leftCols(ca) = A.mat();
  out.mat().rightCols(cb) = B.mat();
  const auto ia = a.id(), ib = b.id();
  return a.graph().record(
      std::move(out), {ia, ib},
      [ia, ib, ca, cb](Graph<S>& g, const Tensor<S>& up) {
        g.accumulate(ia, up.mat().leftCols(ca));
        g.accumulate(ib, up.mat().rightCols(cb));
      },
      "concat");
}

template <typename S>
Var<S> slice_cols(const Var<S>& x, Index start, Index count) {
  const Tensor<S>& X = x.value();
  if (start < 0 || count <= 0 || start + count > X.cols())
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") outside " + shape_str(X.shape()));
  Tensor<S> out(Shape{X.rows(), count});
  out.mat() = X.mat().middleCols(start, count);
  const auto ix = x.id();
  return x.graph().record(
      std::move(out), {ix},
      [ix, start, count](Graph<S>& g, const Tensor<S>& up) {
        const Tensor<S>& X = g.value(ix);
        typename Tensor<S>::Matrix d = Tensor<S>::Matrix::Zero(X.rows(), X.cols());
        d.middleCols(start, count) = up.mat();
        g.accumulate(ix, d);
      },
      "slice_cols");
}

/// Row r of x multiplied by w[r].
template <typename S>
Var<S> row_scale(const Var<S>& x, const Var<S>& w) {
  detail::check_same_graph(x, w);
  if (w.value().size() != x.rows())
    throw DimensionError("row_scale: weights " + shape_str(w.shape()) + " vs " +
                         shape_str(x.shape()));
  Tensor<S> out(x.shape());
  out.mat() = x.value().mat().array().colwise() * w.value().vec().array();
  const auto ix = x.id(), iw = w.id();
  return x.graph().record(
      std::move(out), {ix, iw},
      [ix, iw](Graph<S>& g, const Tensor<S>& up) {
        const Tensor<S>& W = g.value(iw);
        if (g.requires_grad(ix))
          g.accumulate(ix, (up.mat().array().colwise() * W.vec().array()).matrix());
        if (g.requires_grad(iw)) {
          const typename Tensor<S>::Vector d = up.mat().cwiseProduct(g.value(ix).mat()).rowwise().sum();
          g.accumulate(iw, d.reshaped(W.rows(), W.cols()));
        }
      },
      "row_scale");
}

/// Softmax over consecutive groups of `group` entries of the flattened input.
template <typename S>
Var<S> group_softmax(const Var<S>& z, Index group) {
  const Tensor<S>& Z = z.value();
  detail::check_group<S>("softmax", Z.size(), group);
  Tensor<S> out(Z.shape());
  for (Index s = 0; s < Z.size(); s += group) {
    auto in = Z.vec().segment(s, group);
    auto o = out.vec().segment(s, group);
    o = (in.array() - in.maxCoeff()).exp().matrix();
    o /= o.sum();
  }
  const auto iz = z.id();
  return z.graph().record(
      out, {iz},
      [iz, group, alpha = out](Graph<S>& g, const Tensor<S>& up) {
        Tensor<S> d(alpha.shape());
        for (Index s = 0; s < alpha.size(); s += group) {
          auto a = alpha.vec().segment(s, group);
          auto u = up.vec().segment(s, group);
          const S dot = a.dot(u);
          d.vec().segment(s, group) = a.cwiseProduct((u.array() - dot).matrix());
        }
        g.accumulate(iz, d.mat());
      },
      "softmax");
}

template <typename S>
Var<S> softmax(const Var<S>& v) {
  return group_softmax(v, v.value().size());
}

inline constexpr double kStatsPoolVarianceFloor = 1e-12;

/// Statistics pooling over each sequence of `group` rows: [mean, std] with the
/// biased (divide by length) variance floored before the square root.
template <typename S>
Var<S> stats_pool(const Var<S>& x, Index group) {
  const Tensor<S>& X = x.value();
  detail::check_group<S>("stats_pool", X.rows(), group);
  const Index C = X.cols(), n_seq = X.rows() / group;
  Tensor<S> out(Shape{n_seq, 2 * C});
  for (Index s = 0; s < n_seq; ++s) {
    auto blk = X.mat().middleRows(s * group, group);
    const typename Tensor<S>::Matrix mu = blk.colwise().mean();
    const auto var = (blk.rowwise() - mu.row(0)).array().square().colwise().mean();
    out.mat().row(s).head(C) = mu.row(0);
    out.mat().row(s).tail(C) = var.max(S(kStatsPoolVarianceFloor)).sqrt().matrix();
  }
  const auto ix = x.id();
  return x.graph().record(
      out, {ix},
      [ix, group, out](Graph<S>& g, const Tensor<S>& up) {
        const Tensor<S>& X = g.value(ix);
        const Index C = X.cols();
        typename Tensor<S>::Matrix d(X.rows(), C);
        for (Index s = 0; s < X.rows() / group; ++s) {
          auto blk = X.mat().middleRows(s * group, group);
          const auto mu = out.mat().row(s).head(C);
          const auto sd = out.mat().row(s).tail(C);
          // var at the floor is constant, so its gradient is zero
          typename Tensor<S>::Matrix dvar(1, C);
          for (Index c = 0; c < C; ++c) {
            const S var = sd(c) * sd(c);
            dvar(0, c) = var > S(kStatsPoolVarianceFloor) ? up(s, C + c) / (S(2) * sd(c)) : S(0);
          }
          auto dblk = d.middleRows(s * group, group);
          dblk = ((blk.rowwise() - mu).array().rowwise() * (S(2) * dvar.row(0).array() / S(group)))
                     .matrix();
          dblk.rowwise() += up.mat().row(s).head(C) / S(group);
        }
        g.accumulate(ix, d);
      },
      "stats_pool");
}

/// Single-sequence pooling: [T x E] -> [2E].
template <typename S>
Var<S> stats_pool(const Var<S>& x) {
  Var<S> pooled = stats_pool(x, x.rows());
  return x.graph().record(pooled.value().reshaped(Shape{pooled.value().size()}), {pooled.id()},
                          [ip = pooled.id()](Graph<S>& g, const Tensor<S>& up) {
                            g.accumulate(ip, up.mat());
                          },
                          "reshape");
}

/// Attentive statistics pooling: per sequence of `group` rows,
///   mu = sum_t w_t x_t,  sigma = sqrt(max(sum_t w_t (x_t - mu)^2, floor)).
/// With uniform weights 1/group this is plain stats_pool.
template <typename S>
Var<S> weighted_stats_pool(const Var<S>& x, const Var<S>& w, Index group) {
  using Matrix = typename Tensor<S>::Matrix;
  detail::check_same_graph(x, w);
  const Tensor<S>& X = x.value();
  const Tensor<S>& W = w.value();
  detail::check_group<S>("weighted_stats_pool", X.rows(), group);
  if (W.size() != X.rows())
    throw DimensionError("weighted_stats_pool: weights " + shape_str(W.shape()) + " vs " + shape_str(X.shape()));
  const Index C = X.cols(), n_seq = X.rows() / group;
  Tensor<S> out(Shape{n_seq, 2 * C});
  for (Index s = 0; s < n_seq; ++s) {
    auto blk = X.mat().middleRows(s * group, group);
    auto ws = W.vec().segment(s * group, group);
    const Matrix mu = ws.transpose() * blk;
    const Matrix var = ws.transpose() * (blk.rowwise() - mu.row(0)).array().square().matrix();
    out.mat().row(s).head(C) = mu.row(0);
    out.mat().row(s).tail(C) = var.array().max(S(kStatsPoolVarianceFloor)).sqrt().matrix();
  }
  const auto ix = x.id(), iw = w.id();
  return x.graph().record(
      out, {ix, iw},
      [ix, iw, group, out](Graph<S>& g, const Tensor<S>& up) {
        const Tensor<S>& X = g.value(ix);
        const Tensor<S>& W = g.value(iw);
        const Index C = X.cols();
        Matrix dx(X.rows(), C);
        Matrix dw(W.rows(), W.cols());
        auto dwv = dw.reshaped();
        for (Index s = 0; s < X.rows() / group; ++s) {
          auto blk = X.mat().middleRows(s * group, group);
          auto ws = W.vec().segment(s * group, group);
          const auto mu = out.mat().row(s).head(C);
          const auto sd = out.mat().row(s).tail(C);
          Matrix dvar(1, C);
          for (Index c = 0; c < C; ++c)
            dvar(0, c) = sd(c) * sd(c) > S(kStatsPoolVarianceFloor) ? up(s, C + c) / (S(2) * sd(c)) : S(0);
          const Matrix d = blk.rowwise() - mu;
          // var also depends on mu: d var / d mu = -2 sum_t w_t d_t
          const Matrix dmu = up.mat().row(s).head(C) - S(2) * dvar.cwiseProduct(ws.transpose() * d);
          auto dxb = dx.middleRows(s * group, group);
          dxb = ws * dmu;
          dxb += S(2) * (d.array().colwise() * ws.array()).matrix() *
                 Eigen::DiagonalMatrix<S, Eigen::Dynamic>(dvar.row(0).transpose());
          dwv.segment(s * group, group) = blk * dmu.transpose() + d.array().square().matrix() * dvar.transpose();
        }
        if (g.requires_grad(ix)) g.accumulate(ix, dx);
        if (g.requires_grad(iw)) g.accumulate(iw, dw);
      },
      "weighted_stats_pool");
}

namespace detail {

// Rows of x laid out as (row, tap * Cin + channel), zero outside each sequence.
template <typename S>
typename Tensor<S>::Matrix im2col(const Tensor<S>& x, Index width, Index group) {
  const Index R = x.rows(), C = x.cols(), half = width / 2;
  typename Tensor<S>::Matrix col = Tensor<S>::Matrix::Zero(R, width * C);
  for (Index r = 0; r < R; ++r) {
    const Index t = r % group;
    for (Index d = 0; d < width; ++d) {
      const Index src = t + d - half;
      if (src >= 0 && src < group) col.row(r).segment(d * C, C) = x.mat().row(r + d - half);
    }
  }
  return col;
}

}  // namespace detail

/// 1-D convolution with "same" zero padding over each sequence of `group`
/// rows. kernel is [width, Cin, Cout] with odd width, bias is [Cout].
template <typename S>
Var<S> conv1d(const Var<S>& x, const Var<S>& kernel, const Var<S>& bias, Index group) {
  detail::check_same_graph(x, kernel);
  detail::check_same_graph(x, bias);
  const Tensor<S>& X = x.value();
  const Tensor<S>& K = kernel.value();
  if (K.rank() != 3) throw DimensionError("conv1d: kernel must be [width, Cin, Cout], got " + shape_str(K.shape()));
  const Index width = K.dim(0), cin = K.dim(1), cout = K.dim(2);
  if (width % 2 == 0) throw ConfigError("conv1d: kernel width must be odd, got " + std::to_string(width));
  if (X.cols() != cin)
    throw DimensionError("conv1d: input " + shape_str(X.shape()) + " vs kernel " + shape_str(K.shape()));
  if (bias.value().size() != cout)
    throw DimensionError("conv1d: bias " + shape_str(bias.shape()) + " vs kernel " + shape_str(K.shape()));
  detail::check_group<S>("conv1d", X.rows(), group);
  const typename Tensor<S>::Matrix col = detail::im2col(X, width, group);
  Tensor<S> out(Shape{X.rows(), cout});
  out.mat().noalias() = col * K.mat();
  out.mat().rowwise() += bias.value().vec().transpose();
  const auto ix = x.id(), ik = kernel.id(), ib = bias.id();
  return x.graph().record(
      std::move(out), {ix, ik, ib},
      [ix, ik, ib, width, group](Graph<S>& g, const Tensor<S>& up) {
        const Tensor<S>& X = g.value(ix);
        const Tensor<S>& K = g.value(ik);
        if (g.requires_grad(ik)) g.accumulate(ik, detail::im2col(X, width, group).transpose() * up.mat());
        if (g.requires_grad(ib)) g.accumulate(ib, up.mat().colwise().sum());
        if (g.requires_grad(ix)) {
          const typename Tensor<S>::Matrix dcol = up.mat() * K.mat().transpose();
          const Index C = X.cols(), half = width / 2;
          typename Tensor<S>::Matrix dx = Tensor<S>::Matrix::Zero(X.rows(), C);
          for (Index r = 0; r < X.rows(); ++r) {
            const Index t = r % group;
            for (Index d = 0; d < width; ++d) {
              const Index src = t + d - half;
              if (src >= 0 && src < group) dx.row(r + d - half) += dcol.row(r).segment(d * C, C);
            }
          }
          g.accumulate(ix, dx);
        }
      },
      "conv1d");
}

/// GRU parameters with gates packed in (update, reset, candidate) order:
/// W is [D, 3H], U is [H, 3H], b is [3H].
template <typename S>
struct GruVars {
  Var<S> W, U, b;
};

/// One GRU step composed from primitive ops; x is [S x D], h_prev [S x H].
///   z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br)
///   c = tanh(x Wc + (r * h) Uc + bc),  h' = (1 - z) * c + z * h
template <typename S>
Var<S> gru_cell(const Var<S>& x, const Var<S>& h_prev, const GruVars<S>& p) {
  const Index H = p.U.rows();
  if (p.U.cols() != 3 * H || p.W.cols() != 3 * H || p.b.value().size() != 3 * H ||
      h_prev.cols() != H || x.cols() != p.W.rows() || x.rows() != h_prev.rows())
    throw DimensionError("gru_cell: x " + shape_str(x.shape()) + ", h " + shape_str(h_prev.shape()) +
                         ", W " + shape_str(p.W.shape()) + ", U " + shape_str(p.U.shape()));
  const Var<S> xp = add_bias(matmul(x, p.W), p.b);
  const Var<S> hu = matmul(h_prev, slice_cols(p.U, 0, 2 * H));
  const Var<S> z = sigmoid(add(slice_cols(xp, 0, H), slice_cols(hu, 0, H)));
  const Var<S> r = sigmoid(add(slice_cols(xp, H, H), slice_cols(hu, H, H)));
  const Var<S> c = tanh(add(slice_cols(xp, 2 * H, H), matmul(mul(r, h_prev), slice_cols(p.U, 2 * H, H))));
  return add(c, mul(z, sub(h_prev, c)));
}

/// Runs a GRU over every sequence of `group` rows of x (zero initial state),
/// front to back or, with `reverse`, back to front. Output row r is the hidden
/// state after consuming input row r. Fused: one node for the whole batch.
template <typename S>
Var<S> gru_sequence(const Var<S>& x, const GruVars<S>& p, Index group, bool reverse) {
  using Matrix = typename Tensor<S>::Matrix;
  using Stride = Eigen::OuterStride<>;
  using RowsView = Eigen::Map<Matrix, 0, Stride>;
  using ConstRowsView = Eigen::Map<const Matrix, 0, Stride>;

  Graph<S>& graph = x.graph();
  const Index H = p.U.rows();
  const Tensor<S>& X = x.value();
  if (p.U.cols() != 3 * H || p.W.cols() != 3 * H || p.b.value().size() != 3 * H || X.cols() != p.W.rows())
    throw DimensionError("gru_sequence: x " + shape_str(X.shape()) + ", W " + shape_str(p.W.shape()) +
                         ", U " + shape_str(p.U.shape()) + ", b " + shape_str(p.b.shape()));
  detail::check_group<S>("gru_sequence", X.rows(), group);
  const Index n_seq = X.rows() / group;

  struct Saved {
    Matrix z, r, c, h;
  };
  auto saved = std::make_shared<Saved>();
  Matrix xp = X.mat() * p.W.value().mat();
  xp.rowwise() += p.b.value().vec().transpose();
  saved->z.resize(X.rows(), H);
  saved->r.resize(X.rows(), H);
  saved->c.resize(X.rows(), H);
  Tensor<S> out(Shape{X.rows(), H});

  const auto U = p.U.value().mat();
  Matrix h = Matrix::Zero(n_seq, H);
  Matrix hu(n_seq, 2 * H);
  for (Index k = 0; k < group; ++k) {
    const Index t = reverse ? group - 1 - k : k;
    ConstRowsView xt(xp.data() + t * 3 * H, n_seq, 3 * H, Stride(group * 3 * H));
    RowsView zt(saved->z.data() + t * H, n_seq, H, Stride(group * H));
    RowsView rt(saved->r.data() + t * H, n_seq, H, Stride(group * H));
    RowsView ct(saved->c.data() + t * H, n_seq, H, Stride(group * H));
    RowsView ht(out.data() + t * H, n_seq, H, Stride(group * H));
    hu.noalias() = h * U.leftCols(2 * H);
    zt = (xt.leftCols(H) + hu.leftCols(H)).unaryExpr([](S v) { return sigmoid_value(v); });
    rt = (xt.middleCols(H, H) + hu.rightCols(H)).unaryExpr([](S v) { return sigmoid_value(v); });
    const Matrix rh = rt.cwiseProduct(h);
    ct = (xt.rightCols(H) + rh * U.rightCols(H)).array().tanh().matrix();
    h = ct + zt.cwiseProduct(h - ct);
    ht = h;
  }
  saved->h = out.mat();

  const auto ix = x.id(), iw = p.W.id(), iu = p.U.id(), ib = p.b.id();
  return graph.record(
      std::move(out), {ix, iw, iu, ib},
      [=](Graph<S>& g, const Tensor<S>& up) {
        const Tensor<S>& X = g.value(ix);
        const auto U = g.value(iu).mat();
        Matrix dxp(X.rows(), 3 * H);
        Matrix dU = Matrix::Zero(H, 3 * H);
        Matrix dh_next = Matrix::Zero(n_seq, H);
        Matrix h_prev(n_seq, H), dhp(n_seq, H);
        for (Index k = group; k-- > 0;) {
          const Index t = reverse ? group - 1 - k : k;
          const Index t_prev = reverse ? t + 1 : t - 1;
          ConstRowsView zt(saved->z.data() + t * H, n_seq, H, Stride(group * H));
          ConstRowsView rt(saved->r.data() + t * H, n_seq, H, Stride(group * H));
          ConstRowsView ct(saved->c.data() + t * H, n_seq, H, Stride(group * H));
          ConstRowsView upt(up.data() + t * H, n_seq, H, Stride(group * H));
          if (k == 0) {
            h_prev.setZero();
          } else {
            h_prev = ConstRowsView(saved->h.data() + t_prev * H, n_seq, H, Stride(group * H));
          }
          const Matrix dh = upt + dh_next;
          const auto za = zt.array();
          const Matrix dc = dh.cwiseProduct((S(1) - za).matrix());
          const Matrix dz = dh.cwiseProduct(h_prev - ct);
          dhp = dh.cwiseProduct(zt);
          const Matrix dac = dc.cwiseProduct((S(1) - ct.array().square()).matrix());
          const Matrix drh = dac * U.rightCols(H).transpose();
          dU.rightCols(H).noalias() += rt.cwiseProduct(h_prev).transpose() * dac;
          const Matrix dr = drh.cwiseProduct(h_prev);
          dhp += drh.cwiseProduct(rt);
          Matrix dzr(n_seq, 2 * H);
          dzr.leftCols(H) = dz.cwiseProduct((za * (S(1) - za)).matrix());
          dzr.rightCols(H) = dr.cwiseProduct((rt.array() * (S(1) - rt.array())).matrix());
          dU.leftCols(2 * H).noalias() += h_prev.transpose() * dzr;
          dhp.noalias() += dzr * U.leftCols(2 * H).transpose();
          RowsView dxt(dxp.data() + t * 3 * H, n_seq, 3 * H, Stride(group * 3 * H));
          dxt.leftCols(2 * H) = dzr;
          dxt.rightCols(H) = dac;
          dh_next = dhp;
        }
        if (g.requires_grad(iu)) g.accumulate(iu, dU);
        if (g.requires_grad(ib)) g.accumulate(ib, dxp.colwise().sum());
        if (g.requires_grad(iw)) g.accumulate(iw, X.mat().transpose() * dxp);
        if (g.requires_grad(ix)) g.accumulate(ix, dxp * g.value(iw).mat().transpose());
      },
      "gru_sequence");
}

/// Inverted dropout: zeroes entries with probability p and scales survivors by
/// 1/(1-p). Identity when not training or p == 0.
template <typename S>
Var<S> dropout(const Var<S>& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  Tensor<S> mask(x.shape());
  const S keep = S(1.0 / (1.0 - p));
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < p ? S(0) : keep;
  Tensor<S> out(x.shape());
  out.vec() = x.value().vec().cwiseProduct(mask.vec());
  const auto ix = x.id();
  return x.graph().record(
      std::move(out), {ix},
      [ix, mask = std::move(mask)](Graph<S>& g, const Tensor<S>& up) {
        g.accumulate(ix, up.mat().cwiseProduct(mask.mat()));
      },
      "dropout");
}

/// Running statistics of a batch-norm layer (per feature channel).
template <typename S>
struct BatchNormStats {
  Tensor<S> running_mean;
  Tensor<S> running_var;

  static BatchNormStats init(Index channels) {
    return {Tensor<S>::zeros(Shape{channels}), Tensor<S>::constant(Shape{channels}, S(1))};
  }
};

inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kBatchNormEps = 1e-5;

/// Batch normalisation over rows, one statistic per column. Training mode
/// normalises with the batch's biased statistics and folds them into
/// `stats` (running = 0.9 * running + 0.1 * batch, unbiased batch variance);
/// inference mode uses the running statistics.
template <typename S>
Var<S> batchnorm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, BatchNormStats<S>& stats,
                 bool training) {
  using Matrix = typename Tensor<S>::Matrix;
  using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;
  detail::check_same_graph(x, gamma);
  detail::check_same_graph(x, beta);
  const Tensor<S>& X = x.value();
  const Index C = X.cols(), N = X.rows();
  if (gamma.value().size() != C || beta.value().size() != C || stats.running_mean.size() != C ||
      stats.running_var.size() != C)
    throw DimensionError("batchnorm: parameters do not match input " + shape_str(X.shape()));

  RowVec mu, inv_std;
  if (training) {
    mu = X.mat().colwise().mean();
    const RowVec var = (X.mat().rowwise() - mu).array().square().colwise().mean().matrix();
    inv_std = (var.array() + S(kBatchNormEps)).rsqrt().matrix();
    const S m = S(kBatchNormMomentum);
    const S unbias = N > 1 ? S(N) / S(N - 1) : S(1);
    stats.running_mean.vec() = m * stats.running_mean.vec() + (S(1) - m) * mu.transpose();
    stats.running_var.vec() = m * stats.running_var.vec() + (S(1) - m) * unbias * var.transpose();
  } else {
    mu = stats.running_mean.vec().transpose();
    inv_std = (stats.running_var.vec().array() + S(kBatchNormEps)).rsqrt().matrix().transpose();
  }
  Matrix xhat = ((X.mat().rowwise() - mu).array().rowwise() * inv_std.array()).matrix();
  Tensor<S> out(X.shape());
  out.mat() = (xhat.array().rowwise() * gamma.value().vec().transpose().array()).matrix();
  out.mat().rowwise() += beta.value().vec().transpose();

  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph().record(
      std::move(out), {ix, ig, ib},
      [=, xhat = std::move(xhat)](Graph<S>& g, const Tensor<S>& up) {
        const auto dy = up.mat();
        if (g.requires_grad(ig)) g.accumulate(ig, dy.cwiseProduct(xhat).colwise().sum());
        if (g.requires_grad(ib)) g.accumulate(ib, dy.colwise().sum());
        if (!g.requires_grad(ix)) return;
        const Matrix dxhat = (dy.array().rowwise() * g.value(ig).vec().transpose().array()).matrix();
        if (!training) {
          g.accumulate(ix, (dxhat.array().rowwise() * inv_std.array()).matrix());
          return;
        }
        const RowVec sum_d = dxhat.colwise().sum();
        const RowVec sum_dx = dxhat.cwiseProduct(xhat).colwise().sum();
        Matrix dx = (S(N) * dxhat).rowwise() - sum_d;
        dx -= (xhat.array().rowwise() * sum_dx.array()).matrix();
        dx = (dx.array().rowwise() * (inv_std.array() / S(N))).matrix();
        g.accumulate(ix, dx);
      },
      "batchnorm");
}

/// Mean over rows of -log softmax(logits[row])[label[row]].
template <typename S>
Var<S> cross_entropy(const Var<S>& logits, std::span<const int> labels) {
  using Matrix = typename Tensor<S>::Matrix;
  const Tensor<S>& L = logits.value();
  const Index B = L.rows(), K = L.cols();
  if (Index(labels.size()) != B)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(L.shape()));
  Matrix prob(B, K);
  S loss = 0;
  for (Index i = 0; i < B; ++i) {
    const int y = labels[std::size_t(i)];
    if (y < 0 || y >= K)
      throw DataError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
    const auto row = L.mat().row(i);
    const S mx = row.maxCoeff();
    prob.row(i) = (row.array() - mx).exp().matrix();
    const S z = prob.row(i).sum();
    prob.row(i) /= z;
    loss += mx + std::log(z) - row(y);
  }
  Tensor<S> out(Shape{1});
  out[0] = loss / S(B);
  std::vector<int> ys(labels.begin(), labels.end());
  const auto il = logits.id();
  return logits.graph().record(
      std::move(out), {il},
      [il, prob = std::move(prob), ys = std::move(ys)](Graph<S>& g, const Tensor<S>& up) {
        Matrix d = prob;
        for (std::size_t i = 0; i < ys.size(); ++i) d(Index(i), ys[i]) -= S(1);
        g.accumulate(il, d * (up[0] / S(ys.size())));
      },
      "cross_entropy");
}

template <typename S>
Var<S> cross_entropy(const Var<S>& logits, int label) {
  const int labels[1] = {label};
  return cross_entropy(logits, std::span<const int>(labels, 1));
}

}  // namespace hvector

#endif  // HVECTOR_OPS_HPP_
