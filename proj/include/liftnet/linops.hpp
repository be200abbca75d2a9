/*
 * linops.hpp - structured linear operators and block assembly
 *
 *  Copyright (c) 2026 The liftnet Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "liftnet/core.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace liftnet {

enum class LinOpKind {
  dense,
  conv2d,
  conv2d_transpose,
  mask,
  identity,
  zero,
  block,
  scaled,
  sum,
  compose,
  adjoint,
  restrict
};

// select drops coordinates (output dim = kept count); zero_fill keeps the
// dimension and zeroes dropped coordinates.
enum class MaskMode { select, zero_fill };

struct Conv2dShape {
  Index in_channels = 1;
  Index out_channels = 1;
  Index height = 1;
  Index width = 1;
  Index kernel = 1;
  Index stride = 1;
  Index padding = 0;

  Index out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  Index out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  Index input_dim() const { return in_channels * height * width; }
  Index output_dim() const { return out_channels * out_height() * out_width(); }
};

namespace detail {
template <class T>
struct Node;
}

template <class T>
class LinOp {
 public:
  using Scalar = T;

  LinOp() = default;

  static LinOp dense(RowMat<T> a);
  static LinOp dense(const Mat<T>& a) { return dense(RowMat<T>(a)); }
  static LinOp identity(Index n);
  static LinOp zero(Index rows, Index cols);
  static LinOp mask(std::vector<bool> keep, MaskMode mode = MaskMode::select);
  // Cross-correlation with zero padding; kernel laid out [out][in][ky][kx].
  static LinOp conv2d(std::vector<T> kernel, Conv2dShape shape);
  // Exact adjoint of conv2d(kernel, shape).
  static LinOp conv2d_transpose(std::vector<T> kernel, Conv2dShape shape);
  static LinOp scaled(T alpha, LinOp op);
  static LinOp sum(LinOp a, LinOp b);
  static LinOp compose(LinOp outer, LinOp inner);
  static LinOp adjoint_of(LinOp op);
  static LinOp restrict(LinOp op, Index offset, Index length);

  bool valid() const { return node_ != nullptr; }
  Index rows() const;
  Index cols() const;
  LinOpKind kind() const;

  // y += A x and y += A^T x on raw contiguous storage.
  void apply_acc(const T* x, T* y) const;
  void adjoint_acc(const T* x, T* y) const;
  // Column-batched variants with leading dimensions.
  void apply_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const;
  void adjoint_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const;

  Vec<T> apply(const Vec<T>& x) const {
    require(x.size() == cols(), "apply: dimension mismatch");
    Vec<T> y = Vec<T>::Zero(rows());
    apply_acc(x.data(), y.data());
    return y;
  }
  Vec<T> apply_adjoint(const Vec<T>& y) const {
    require(y.size() == rows(), "apply_adjoint: dimension mismatch");
    Vec<T> x = Vec<T>::Zero(cols());
    adjoint_acc(y.data(), x.data());
    return x;
  }
  Mat<T> apply_batch(const Mat<T>& x) const {
    require(x.rows() == cols(), "apply_batch: dimension mismatch");
    Mat<T> y = Mat<T>::Zero(rows(), x.cols());
    apply_batch_acc(x.data(), x.rows(), y.data(), y.rows(), x.cols());
    return y;
  }
  Mat<T> apply_adjoint_batch(const Mat<T>& y) const {
    require(y.rows() == rows(), "apply_adjoint_batch: dimension mismatch");
    Mat<T> x = Mat<T>::Zero(cols(), y.cols());
    adjoint_batch_acc(y.data(), y.rows(), x.data(), x.rows(), y.cols());
    return x;
  }

  // Payload access.
  const RowMat<T>& dense_matrix() const;
  const std::vector<bool>& mask_keep() const;
  const SegmentLayout& block_row_layout() const;
  const SegmentLayout& block_col_layout() const;
  // nullptr for an absent (zero) cell.
  const LinOp* block_cell(std::size_t r, std::size_t c) const;
  // Output of one block row segment: sum of its cells, left to right.
  Vec<T> apply_block_row(std::size_t r, const Vec<T>& x) const;
  // x += (row segment r)^T y_r.
  void adjoint_block_row_acc(std::size_t r, const Vec<T>& yr, Vec<T>& x) const;

  const detail::Node<T>* node() const { return node_.get(); }

 private:
  explicit LinOp(std::shared_ptr<const detail::Node<T>> n) : node_(std::move(n)) {}
  std::shared_ptr<const detail::Node<T>> node_;

  template <class U>
  friend LinOp<U> assemble_block(std::vector<std::vector<std::optional<LinOp<U>>>> grid,
                                 SegmentLayout rows, SegmentLayout cols);
};

namespace detail {

template <class T>
struct Node {
  Index rows = 0;
  Index cols = 0;
  virtual ~Node() = default;
  virtual LinOpKind kind() const = 0;
  virtual void apply_acc(const T* x, T* y) const = 0;
  virtual void adjoint_acc(const T* x, T* y) const = 0;
  virtual void apply_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const {
    for (Index k = 0; k < n; ++k) apply_acc(x + k * ldx, y + k * ldy);
  }
  virtual void adjoint_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const {
    for (Index k = 0; k < n; ++k) adjoint_acc(x + k * ldx, y + k * ldy);
  }
};

template <class T>
using StridedMap = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

template <class T>
struct DenseNode final : Node<T> {
  RowMat<T> a;
  explicit DenseNode(RowMat<T> m) : a(std::move(m)) {
    this->rows = a.rows();
    this->cols = a.cols();
  }
  LinOpKind kind() const override { return LinOpKind::dense; }
  // Fixed accumulation order: each output is a left-to-right dot product
  // started from zero, then added once to y.
  void apply_acc(const T* x, T* y) const override {
    const Index m = a.rows(), n = a.cols();
    const T* p = a.data();
    for (Index i = 0; i < m; ++i) {
      T s = T(0);
      const T* row = p + i * n;
      for (Index j = 0; j < n; ++j) s += row[j] * x[j];
      y[i] += s;
    }
  }
  void adjoint_acc(const T* x, T* y) const override {
    const Index m = a.rows(), n = a.cols();
    const T* p = a.data();
    for (Index i = 0; i < m; ++i) {
      const T xi = x[i];
      const T* row = p + i * n;
      for (Index j = 0; j < n; ++j) y[j] += row[j] * xi;
    }
  }
  void apply_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const override {
    ConstStridedMap<T> xm(x, a.cols(), n, Eigen::OuterStride<>(ldx));
    StridedMap<T> ym(y, a.rows(), n, Eigen::OuterStride<>(ldy));
    ym.noalias() += a * xm;
  }
  void adjoint_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const override {
    ConstStridedMap<T> xm(x, a.rows(), n, Eigen::OuterStride<>(ldx));
    StridedMap<T> ym(y, a.cols(), n, Eigen::OuterStride<>(ldy));
    ym.noalias() += a.transpose() * xm;
  }
};

template <class T>
struct IdentityNode final : Node<T> {
  explicit IdentityNode(Index n) {
    this->rows = n;
    this->cols = n;
  }
  LinOpKind kind() const override { return LinOpKind::identity; }
  void apply_acc(const T* x, T* y) const override {
    for (Index i = 0; i < this->rows; ++i) y[i] += x[i];
  }
  void adjoint_acc(const T* x, T* y) const override { apply_acc(x, y); }
};

template <class T>
struct ZeroNode final : Node<T> {
  ZeroNode(Index r, Index c) {
    this->rows = r;
    this->cols = c;
  }
  LinOpKind kind() const override { return LinOpKind::zero; }
  void apply_acc(const T*, T*) const override {}
  void adjoint_acc(const T*, T*) const override {}
  void apply_batch_acc(const T*, Index, T*, Index, Index) const override {}
  void adjoint_batch_acc(const T*, Index, T*, Index, Index) const override {}
};

template <class T>
struct MaskNode final : Node<T> {
  std::vector<bool> keep;
  std::vector<Index> kept;
  MaskMode mode;
  MaskNode(std::vector<bool> k, MaskMode m) : keep(std::move(k)), mode(m) {
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (keep[i]) kept.push_back(static_cast<Index>(i));
    this->cols = static_cast<Index>(keep.size());
    this->rows = mode == MaskMode::select ? static_cast<Index>(kept.size()) : this->cols;
  }
  LinOpKind kind() const override { return LinOpKind::mask; }
  void apply_acc(const T* x, T* y) const override {
    if (mode == MaskMode::select) {
      for (std::size_t k = 0; k < kept.size(); ++k) y[k] += x[kept[k]];
    } else {
      for (Index i : kept) y[i] += x[i];
    }
  }
  void adjoint_acc(const T* x, T* y) const override {
    if (mode == MaskMode::select) {
      for (std::size_t k = 0; k < kept.size(); ++k) y[kept[k]] += x[k];
    } else {
      for (Index i : kept) y[i] += x[i];
    }
  }
};

template <class T>
struct ConvNode final : Node<T> {
  std::vector<T> kernel;
  Conv2dShape s;
  ConvNode(std::vector<T> k, Conv2dShape shape) : kernel(std::move(k)), s(shape) {
    this->rows = s.output_dim();
    this->cols = s.input_dim();
  }
  LinOpKind kind() const override { return LinOpKind::conv2d; }

  T weight(Index co, Index ci, Index ky, Index kx) const {
    return kernel[((co * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx];
  }

  void apply_acc(const T* x, T* y) const override {
    const Index ho = s.out_height(), wo = s.out_width();
    for (Index co = 0; co < s.out_channels; ++co)
      for (Index oy = 0; oy < ho; ++oy)
        for (Index ox = 0; ox < wo; ++ox) {
          T acc = T(0);
          for (Index ci = 0; ci < s.in_channels; ++ci)
            for (Index ky = 0; ky < s.kernel; ++ky) {
              const Index iy = oy * s.stride - s.padding + ky;
              if (iy < 0 || iy >= s.height) continue;
              for (Index kx = 0; kx < s.kernel; ++kx) {
                const Index ix = ox * s.stride - s.padding + kx;
                if (ix < 0 || ix >= s.width) continue;
                acc += weight(co, ci, ky, kx) * x[(ci * s.height + iy) * s.width + ix];
              }
            }
          y[(co * ho + oy) * wo + ox] += acc;
        }
  }

  void adjoint_acc(const T* x, T* y) const override {
    const Index ho = s.out_height(), wo = s.out_width();
    for (Index co = 0; co < s.out_channels; ++co)
      for (Index oy = 0; oy < ho; ++oy)
        for (Index ox = 0; ox < wo; ++ox) {
          const T g = x[(co * ho + oy) * wo + ox];
          for (Index ci = 0; ci < s.in_channels; ++ci)
            for (Index ky = 0; ky < s.kernel; ++ky) {
              const Index iy = oy * s.stride - s.padding + ky;
              if (iy < 0 || iy >= s.height) continue;
              for (Index kx = 0; kx < s.kernel; ++kx) {
                const Index ix = ox * s.stride - s.padding + kx;
                if (ix < 0 || ix >= s.width) continue;
                y[(ci * s.height + iy) * s.width + ix] += weight(co, ci, ky, kx) * g;
              }
            }
        }
  }
};

template <class T>
struct AdjointNode final : Node<T> {
  LinOp<T> inner;
  LinOpKind reported;
  AdjointNode(LinOp<T> op, LinOpKind k) : inner(std::move(op)), reported(k) {
    this->rows = inner.cols();
    this->cols = inner.rows();
  }
  LinOpKind kind() const override { return reported; }
  void apply_acc(const T* x, T* y) const override { inner.adjoint_acc(x, y); }
  void adjoint_acc(const T* x, T* y) const override { inner.apply_acc(x, y); }
  void apply_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const override {
    inner.adjoint_batch_acc(x, ldx, y, ldy, n);
  }
  void adjoint_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const override {
    inner.apply_batch_acc(x, ldx, y, ldy, n);
  }
};

template <class T>
struct ScaledNode final : Node<T> {
  T alpha;
  LinOp<T> op;
  ScaledNode(T a, LinOp<T> o) : alpha(a), op(std::move(o)) {
    this->rows = op.rows();
    this->cols = op.cols();
  }
  LinOpKind kind() const override { return LinOpKind::scaled; }
  void apply_acc(const T* x, T* y) const override {
    Vec<T> tmp = Vec<T>::Zero(this->rows);
    op.apply_acc(x, tmp.data());
    for (Index i = 0; i < this->rows; ++i) y[i] += alpha * tmp[i];
  }
  void adjoint_acc(const T* x, T* y) const override {
    Vec<T> tmp = Vec<T>::Zero(this->cols);
    op.adjoint_acc(x, tmp.data());
    for (Index i = 0; i < this->cols; ++i) y[i] += alpha * tmp[i];
  }
  void apply_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const override {
    Mat<T> tmp = Mat<T>::Zero(this->rows, n);
    op.apply_batch_acc(x, ldx, tmp.data(), tmp.rows(), n);
    StridedMap<T>(y, this->rows, n, Eigen::OuterStride<>(ldy)) += alpha * tmp;
  }
  void adjoint_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const override {
    Mat<T> tmp = Mat<T>::Zero(this->cols, n);
    op.adjoint_batch_acc(x, ldx, tmp.data(), tmp.rows(), n);
    StridedMap<T>(y, this->cols, n, Eigen::OuterStride<>(ldy)) += alpha * tmp;
  }
};

template <class T>
struct SumNode final : Node<T> {
  LinOp<T> a, b;
  SumNode(LinOp<T> x, LinOp<T> y) : a(std::move(x)), b(std::move(y)) {
    this->rows = a.rows();
    this->cols = a.cols();
  }
  LinOpKind kind() const override { return LinOpKind::sum; }
  void apply_acc(const T* x, T* y) const override {
    a.apply_acc(x, y);
    b.apply_acc(x, y);
  }
  void adjoint_acc(const T* x, T* y) const override {
    a.adjoint_acc(x, y);
    b.adjoint_acc(x, y);
  }
  void apply_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const override {
    a.apply_batch_acc(x, ldx, y, ldy, n);
    b.apply_batch_acc(x, ldx, y, ldy, n);
  }
  void adjoint_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const override {
    a.adjoint_batch_acc(x, ldx, y, ldy, n);
    b.adjoint_batch_acc(x, ldx, y, ldy, n);
  }
};

template <class T>
struct ComposeNode final : Node<T> {
  LinOp<T> outer, inner;
  ComposeNode(LinOp<T> o, LinOp<T> i) : outer(std::move(o)), inner(std::move(i)) {
    this->rows = outer.rows();
    this->cols = inner.cols();
  }
  LinOpKind kind() const override { return LinOpKind::compose; }
  void apply_acc(const T* x, T* y) const override {
    Vec<T> tmp = Vec<T>::Zero(inner.rows());
    inner.apply_acc(x, tmp.data());
    outer.apply_acc(tmp.data(), y);
  }
  void adjoint_acc(const T* x, T* y) const override {
    Vec<T> tmp = Vec<T>::Zero(outer.cols());
    outer.adjoint_acc(x, tmp.data());
    inner.adjoint_acc(tmp.data(), y);
  }
  void apply_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const override {
    Mat<T> tmp = Mat<T>::Zero(inner.rows(), n);
    inner.apply_batch_acc(x, ldx, tmp.data(), tmp.rows(), n);
    outer.apply_batch_acc(tmp.data(), tmp.rows(), y, ldy, n);
  }
  void adjoint_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const override {
    Mat<T> tmp = Mat<T>::Zero(outer.cols(), n);
    outer.adjoint_batch_acc(x, ldx, tmp.data(), tmp.rows(), n);
    inner.adjoint_batch_acc(tmp.data(), tmp.rows(), y, ldy, n);
  }
};

template <class T>
struct RestrictNode final : Node<T> {
  LinOp<T> op;
  Index offset, length;
  RestrictNode(LinOp<T> o, Index off, Index len) : op(std::move(o)), offset(off), length(len) {
    this->rows = op.rows();
    this->cols = len;
  }
  LinOpKind kind() const override { return LinOpKind::restrict; }
  void apply_acc(const T* x, T* y) const override {
    Vec<T> full = Vec<T>::Zero(op.cols());
    for (Index i = 0; i < length; ++i) full[offset + i] = x[i];
    op.apply_acc(full.data(), y);
  }
  void adjoint_acc(const T* x, T* y) const override {
    Vec<T> full = Vec<T>::Zero(op.cols());
    op.adjoint_acc(x, full.data());
    for (Index i = 0; i < length; ++i) y[i] += full[offset + i];
  }
};

template <class T>
struct BlockNode final : Node<T> {
  SegmentLayout row_layout, col_layout;
  std::vector<std::optional<LinOp<T>>> cells;  // row-major

  const std::optional<LinOp<T>>& cell(std::size_t r, std::size_t c) const {
    return cells[r * col_layout.count() + c];
  }
  LinOpKind kind() const override { return LinOpKind::block; }

  // Row-major, left-to-right accumulation into each row segment.
  void apply_acc(const T* x, T* y) const override {
    for (std::size_t r = 0; r < row_layout.count(); ++r)
      for (std::size_t c = 0; c < col_layout.count(); ++c) {
        const auto& op = cell(r, c);
        if (op) op->apply_acc(x + col_layout.offset(c), y + row_layout.offset(r));
      }
  }
  void adjoint_acc(const T* x, T* y) const override {
    for (std::size_t c = 0; c < col_layout.count(); ++c)
      for (std::size_t r = 0; r < row_layout.count(); ++r) {
        const auto& op = cell(r, c);
        if (op) op->adjoint_acc(x + row_layout.offset(r), y + col_layout.offset(c));
      }
  }
  void apply_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const override {
    for (std::size_t r = 0; r < row_layout.count(); ++r)
      for (std::size_t c = 0; c < col_layout.count(); ++c) {
        const auto& op = cell(r, c);
        if (op)
          op->apply_batch_acc(x + col_layout.offset(c), ldx, y + row_layout.offset(r), ldy, n);
      }
  }
  void adjoint_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const override {
    for (std::size_t c = 0; c < col_layout.count(); ++c)
      for (std::size_t r = 0; r < row_layout.count(); ++r) {
        const auto& op = cell(r, c);
        if (op)
          op->adjoint_batch_acc(x + row_layout.offset(r), ldx, y + col_layout.offset(c), ldy, n);
      }
  }
};

}  // namespace detail

template <class T>
Index LinOp<T>::rows() const {
  require(valid(), "empty LinOp");
  return node_->rows;
}
template <class T>
Index LinOp<T>::cols() const {
  require(valid(), "empty LinOp");
  return node_->cols;
}
template <class T>
LinOpKind LinOp<T>::kind() const {
  require(valid(), "empty LinOp");
  return node_->kind();
}
template <class T>
void LinOp<T>::apply_acc(const T* x, T* y) const {
  node_->apply_acc(x, y);
}
template <class T>
void LinOp<T>::adjoint_acc(const T* x, T* y) const {
  node_->adjoint_acc(x, y);
}
template <class T>
void LinOp<T>::apply_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const {
  node_->apply_batch_acc(x, ldx, y, ldy, n);
}
template <class T>
void LinOp<T>::adjoint_batch_acc(const T* x, Index ldx, T* y, Index ldy, Index n) const {
  node_->adjoint_batch_acc(x, ldx, y, ldy, n);
}

template <class T>
LinOp<T> LinOp<T>::dense(RowMat<T> a) {
  require(a.rows() > 0 && a.cols() > 0, "dense: empty matrix");
  return LinOp(std::make_shared<detail::DenseNode<T>>(std::move(a)));
}
template <class T>
LinOp<T> LinOp<T>::identity(Index n) {
  require(n > 0, "identity: n must be positive");
  return LinOp(std::make_shared<detail::IdentityNode<T>>(n));
}
template <class T>
LinOp<T> LinOp<T>::zero(Index r, Index c) {
  require(r > 0 && c > 0, "zero: dims must be positive");
  return LinOp(std::make_shared<detail::ZeroNode<T>>(r, c));
}
template <class T>
LinOp<T> LinOp<T>::mask(std::vector<bool> keep, MaskMode mode) {
  require(!keep.empty(), "mask: empty keep vector");
  auto n = std::make_shared<detail::MaskNode<T>>(std::move(keep), mode);
  require(n->rows > 0, "mask: selection keeps nothing");
  return LinOp(std::move(n));
}
template <class T>
LinOp<T> LinOp<T>::conv2d(std::vector<T> kernel, Conv2dShape s) {
  require(s.in_channels > 0 && s.out_channels > 0 && s.kernel > 0 && s.stride > 0 &&
              s.padding >= 0,
          "conv2d: invalid shape");
  require(s.height + 2 * s.padding >= s.kernel && s.width + 2 * s.padding >= s.kernel,
          "conv2d: kernel larger than padded input");
  require(static_cast<Index>(kernel.size()) ==
              s.out_channels * s.in_channels * s.kernel * s.kernel,
          "conv2d: kernel size mismatch");
  return LinOp(std::make_shared<detail::ConvNode<T>>(std::move(kernel), s));
}
template <class T>
LinOp<T> LinOp<T>::conv2d_transpose(std::vector<T> kernel, Conv2dShape s) {
  LinOp fwd = conv2d(std::move(kernel), s);
  return LinOp(std::make_shared<detail::AdjointNode<T>>(fwd, LinOpKind::conv2d_transpose));
}
template <class T>
LinOp<T> LinOp<T>::scaled(T alpha, LinOp op) {
  require(op.valid(), "scaled: empty operand");
  return LinOp(std::make_shared<detail::ScaledNode<T>>(alpha, std::move(op)));
}
template <class T>
LinOp<T> LinOp<T>::sum(LinOp a, LinOp b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sum: shape mismatch");
  return LinOp(std::make_shared<detail::SumNode<T>>(std::move(a), std::move(b)));
}
template <class T>
LinOp<T> LinOp<T>::compose(LinOp outer, LinOp inner) {
  require(outer.cols() == inner.rows(), "compose: inner output must match outer input");
  return LinOp(std::make_shared<detail::ComposeNode<T>>(std::move(outer), std::move(inner)));
}
template <class T>
LinOp<T> LinOp<T>::adjoint_of(LinOp op) {
  require(op.valid(), "adjoint_of: empty operand");
  return LinOp(std::make_shared<detail::AdjointNode<T>>(std::move(op), LinOpKind::adjoint));
}
template <class T>
LinOp<T> LinOp<T>::restrict(LinOp op, Index offset, Index length) {
  require(offset >= 0 && length > 0 && offset + length <= op.cols(), "restrict: invalid range");
  return LinOp(std::make_shared<detail::RestrictNode<T>>(std::move(op), offset, length));
}

template <class T>
const RowMat<T>& LinOp<T>::dense_matrix() const {
  auto* n = dynamic_cast<const detail::DenseNode<T>*>(node_.get());
  require(n != nullptr, "dense_matrix: operator is not dense");
  return n->a;
}
template <class T>
const std::vector<bool>& LinOp<T>::mask_keep() const {
  auto* n = dynamic_cast<const detail::MaskNode<T>*>(node_.get());
  require(n != nullptr, "mask_keep: operator is not a mask");
  return n->keep;
}
template <class T>
const SegmentLayout& LinOp<T>::block_row_layout() const {
  auto* n = dynamic_cast<const detail::BlockNode<T>*>(node_.get());
  require(n != nullptr, "block_row_layout: operator is not a block");
  return n->row_layout;
}
template <class T>
const SegmentLayout& LinOp<T>::block_col_layout() const {
  auto* n = dynamic_cast<const detail::BlockNode<T>*>(node_.get());
  require(n != nullptr, "block_col_layout: operator is not a block");
  return n->col_layout;
}
template <class T>
const LinOp<T>* LinOp<T>::block_cell(std::size_t r, std::size_t c) const {
  auto* n = dynamic_cast<const detail::BlockNode<T>*>(node_.get());
  require(n != nullptr, "block_cell: operator is not a block");
  require(r < n->row_layout.count() && c < n->col_layout.count(), "block_cell: out of range");
  const auto& cell = n->cell(r, c);
  return cell ? &*cell : nullptr;
}
template <class T>
Vec<T> LinOp<T>::apply_block_row(std::size_t r, const Vec<T>& x) const {
  auto* n = dynamic_cast<const detail::BlockNode<T>*>(node_.get());
  require(n != nullptr, "apply_block_row: operator is not a block");
  require(x.size() == n->col_layout.total(), "apply_block_row: dimension mismatch");
  Vec<T> y = Vec<T>::Zero(n->row_layout.size(r));
  for (std::size_t c = 0; c < n->col_layout.count(); ++c) {
    const auto& op = n->cell(r, c);
    if (op) op->apply_acc(x.data() + n->col_layout.offset(c), y.data());
  }
  return y;
}
template <class T>
void LinOp<T>::adjoint_block_row_acc(std::size_t r, const Vec<T>& yr, Vec<T>& x) const {
  auto* n = dynamic_cast<const detail::BlockNode<T>*>(node_.get());
  require(n != nullptr, "adjoint_block_row_acc: operator is not a block");
  require(yr.size() == n->row_layout.size(r) && x.size() == n->col_layout.total(),
          "adjoint_block_row_acc: dimension mismatch");
  for (std::size_t c = 0; c < n->col_layout.count(); ++c) {
    const auto& op = n->cell(r, c);
    if (op) op->adjoint_acc(yr.data(), x.data() + n->col_layout.offset(c));
  }
}

template <class T>
using BlockGrid = std::vector<std::vector<std::optional<LinOp<T>>>>;

template <class T>
LinOp<T> assemble_block(BlockGrid<T> grid, SegmentLayout rows, SegmentLayout cols) {
  require(rows.count() > 0 && cols.count() > 0, "assemble_block: empty layout");
  require(grid.size() == rows.count(), "assemble_block: grid row count mismatch");
  auto node = std::make_shared<detail::BlockNode<T>>();
  node->cells.reserve(rows.count() * cols.count());
  for (std::size_t r = 0; r < rows.count(); ++r) {
    require(grid[r].size() == cols.count(), "assemble_block: grid column count mismatch");
    for (std::size_t c = 0; c < cols.count(); ++c) {
      auto& cell = grid[r][c];
      if (cell) {
        require(cell->rows() == rows.size(r) && cell->cols() == cols.size(c),
                "assemble_block: inconsistent cell dims at (" + std::to_string(r) + "," +
                    std::to_string(c) + ")");
        if (cell->kind() == LinOpKind::zero) cell.reset();
      }
      node->cells.push_back(std::move(cell));
    }
  }
  node->rows = rows.total();
  node->cols = cols.total();
  node->row_layout = std::move(rows);
  node->col_layout = std::move(cols);
  return LinOp<T>(std::move(node));
}

// Restriction of op to column segments [first, last] of layout.
template <class T>
LinOp<T> restrict_columns(const LinOp<T>& op, const SegmentLayout& layout, std::size_t first,
                          std::size_t last) {
  require(layout.total() == op.cols(), "restrict_columns: layout does not match operator");
  require(first <= last && last < layout.count(), "restrict_columns: invalid segment range");
  const Index off = layout.offset(first);
  const Index len = layout.offset(last) + layout.size(last) - off;
  return LinOp<T>::restrict(op, off, len);
}

// Dense materialisation, column by column.
template <class T>
RowMat<T> materialize(const LinOp<T>& op) {
  RowMat<T> a(op.rows(), op.cols());
  Vec<T> e = Vec<T>::Zero(op.cols());
  for (Index j = 0; j < op.cols(); ++j) {
    e[j] = T(1);
    a.col(j) = op.apply(e);
    e[j] = T(0);
  }
  return a;
}

template <class T>
struct NormEstimate {
  T value = T(0);
  bool converged = false;
  int iterations = 0;
};

// Power iteration on op^T op from a fixed-seed start vector; stops when
// successive Rayleigh estimates differ by less than tol (relative).
template <class T>
NormEstimate<T> operator_norm(const LinOp<T>& op, T tol = T(1e-10), int max_iter = 5000,
                              std::uint64_t seed = 0x9e3779b97f4a7c15ULL) {
  require(tol > T(0), "operator_norm: tol must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec<T> v(op.cols());
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<T>(nd(rng));
  v /= v.norm();
  NormEstimate<T> out;
  T prev = T(0);
  for (int it = 1; it <= max_iter; ++it) {
    Vec<T> w = op.apply_adjoint(op.apply(v));
    const T lambda = v.dot(w);
    const T nrm = w.norm();
    out.iterations = it;
    out.value = std::sqrt(std::max(lambda, T(0)));
    if (nrm == T(0)) {
      out.converged = true;
      return out;
    }
    v = w / nrm;
    if (it > 1 && std::abs(lambda - prev) <= tol * std::abs(lambda)) {
      out.converged = true;
      return out;
    }
    prev = lambda;
  }
  return out;
}

}  // namespace liftnet
