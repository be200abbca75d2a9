/*
 * network.hpp - block networks, builders, forward passes and backprop
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

#include "liftnet/activations.hpp"
#include "liftnet/linops.hpp"

#include <algorithm>
#include <map>
#include <string>
#include <tuple>
#include <vector>

namespace liftnet {

struct ParamKey {
  enum class Block { K, W, b, d };
  Block block = Block::W;
  std::size_t row = 0;
  std::size_t col = 0;

  std::string name() const {
    switch (block) {
      case Block::K: return "K." + std::to_string(col);
      case Block::W: return "W." + std::to_string(row) + "." + std::to_string(col);
      case Block::b: return "b." + std::to_string(row);
      case Block::d: return "d";
    }
    return "";
  }
  bool operator==(const ParamKey& o) const {
    return block == o.block && row == o.row && col == o.col;
  }
  bool operator<(const ParamKey& o) const {
    return std::tie(block, row, col) < std::tie(o.block, o.row, o.col);
  }
};

// Learnable parameter blocks; vectors are stored as one-column matrices.
template <class T>
struct ParamSet {
  std::vector<ParamKey> keys;
  std::vector<Mat<T>> values;

  std::size_t size() const { return keys.size(); }
  const Mat<T>& at(const ParamKey& k) const {
    for (std::size_t i = 0; i < keys.size(); ++i)
      if (keys[i] == k) return values[i];
    throw ContractViolation("ParamSet: missing block " + k.name());
  }
};

// N(y) = K u + d subject to M u = V z, z = sigma(W u + b).
// u segment 0 is the input; W rows and V columns follow aux_layout; M and
// V rows follow constraint_layout. Constraint row r defines u segment
// pivot[r] by forward substitution.
template <class T>
struct BlockNetwork {
  std::string builder;
  SegmentLayout layout;
  SegmentLayout aux_layout;
  SegmentLayout constraint_layout;
  SegmentLayout output_layout;
  LinOp<T> K, M, V, W;
  Vec<T> b, d;
  std::vector<ProxActivation<T>> activations;
  std::vector<ParamKey> learnable;

  std::vector<std::size_t> pivot;
  std::vector<std::vector<std::size_t>> waves;
  // M = [0 I] and V = I, so z coincides with the aux part of u.
  bool aux_selector = false;
  std::vector<std::string> warnings;

  Index input_dim() const { return layout.size(0); }
  Index output_dim() const { return K.rows(); }
  Index aux_dim() const { return layout.total() - layout.size(0); }
  std::size_t depth() const { return aux_layout.count(); }
};

template <class T>
struct ForwardTrace {
  Vec<T> u;
  Vec<T> z;
  Vec<T> a;  // pre-activations W u + b
  Vec<T> output;
};

template <class T>
struct BatchTrace {
  Mat<T> u;
  Mat<T> z;
  Mat<T> a;
  Mat<T> output;
};

enum class EvalOrder { sequential, block };

namespace detail {

template <class T>
LinOp<T> dense_op(const Mat<T>& m) {
  return LinOp<T>::dense(RowMat<T>(m));
}

// y += op x for a batch; one-column batches use the fixed-order kernel.
template <class T, class XD, class YD>
void acc_apply(const LinOp<T>& op, const Eigen::MatrixBase<XD>& x, Eigen::MatrixBase<YD>& y) {
  if (x.cols() == 1) {
    op.apply_acc(x.derived().data(), y.derived().data());
  } else {
    op.apply_batch_acc(x.derived().data(), x.derived().outerStride(), y.derived().data(),
                       y.derived().outerStride(), x.cols());
  }
}

template <class T, class XD, class YD>
void acc_adjoint(const LinOp<T>& op, const Eigen::MatrixBase<XD>& x, Eigen::MatrixBase<YD>& y) {
  if (x.cols() == 1) {
    op.adjoint_acc(x.derived().data(), y.derived().data());
  } else {
    op.adjoint_batch_acc(x.derived().data(), x.derived().outerStride(), y.derived().data(),
                         y.derived().outerStride(), x.cols());
  }
}

enum class AccMode { assign, add, subtract };

// Column segments of op^T y restricted to the given block rows; y is laid
// out over the full row layout and only the listed segments are read.
// Columns without a cell in these rows are left untouched.
template <class T>
void rows_adjoint(const LinOp<T>& op, const std::vector<std::size_t>& rows, const SegmentLayout& rl,
                  const SegmentLayout& cl, const Mat<T>& y, Mat<T>& out, AccMode mode) {
  const Index n = y.cols();
  for (std::size_t c = 0; c < cl.count(); ++c) {
    bool touched = false;
    for (std::size_t r : rows) touched = touched || op.block_cell(r, c) != nullptr;
    if (!touched) continue;
    Mat<T> tmp = Mat<T>::Zero(cl.size(c), n);
    for (std::size_t r : rows)
      if (const LinOp<T>* cell = op.block_cell(r, c)) {
        const Mat<T> yr = y.middleRows(rl.offset(r), rl.size(r));
        acc_adjoint(*cell, yr, tmp);
      }
    auto dst = out.middleRows(cl.offset(c), cl.size(c));
    switch (mode) {
      case AccMode::assign: dst = tmp; break;
      case AccMode::add: dst += tmp; break;
      case AccMode::subtract: dst -= tmp; break;
    }
  }
}

template <class T>
BlockGrid<T> empty_grid(std::size_t r, std::size_t c) {
  return BlockGrid<T>(r, std::vector<std::optional<LinOp<T>>>(c));
}

template <class T>
BlockGrid<T> grid_of(const LinOp<T>& block) {
  const auto& rl = block.block_row_layout();
  const auto& cl = block.block_col_layout();
  BlockGrid<T> g = empty_grid<T>(rl.count(), cl.count());
  for (std::size_t r = 0; r < rl.count(); ++r)
    for (std::size_t c = 0; c < cl.count(); ++c)
      if (const LinOp<T>* op = block.block_cell(r, c)) g[r][c] = *op;
  return g;
}

}  // namespace detail

// Validates the block structure, derives pivots, dependency waves and the
// default learnable set (dense cells of K and W, all of b and d).
template <class T>
void finalize_network(BlockNetwork<T>& net) {
  const std::size_t nz = net.aux_layout.count();
  const std::size_t nu = net.layout.count();
  require(net.constraint_layout.count() == nz, "network: one constraint row per aux segment");
  require(nu >= 1, "network: empty layout");
  require(net.W.rows() == net.aux_layout.total() && net.W.cols() == net.layout.total(),
          "network: W shape mismatch");
  require(net.M.rows() == net.constraint_layout.total() && net.M.cols() == net.layout.total(),
          "network: M shape mismatch");
  require(net.V.rows() == net.constraint_layout.total() && net.V.cols() == net.aux_layout.total(),
          "network: V shape mismatch");
  require(net.K.cols() == net.layout.total(), "network: K shape mismatch");
  require(net.b.size() == net.aux_layout.total(), "network: b size mismatch");
  require(net.d.size() == net.K.rows(), "network: d size mismatch");
  require(net.activations.size() == nz, "network: one activation per aux segment");

  net.pivot.assign(nz, 0);
  std::vector<int> defined_by(nu, -1);
  std::vector<std::size_t> level(nz, 0);
  bool selector = nu == nz + 1;
  for (std::size_t r = 0; r < nz; ++r) {
    for (std::size_t k = 0; k < nz; ++k)
      if (net.V.block_cell(r, k) && k != r)
        throw ContractViolation("network: V must be block diagonal");
    std::size_t p = 0;
    for (std::size_t c = 1; c < nu; ++c)
      if (net.M.block_cell(r, c)) p = c;
    const LinOp<T>* piv = net.M.block_cell(r, p);
    require(p > 0 && piv && piv->kind() == LinOpKind::identity,
            "network: constraint row needs an identity pivot on its last column");
    require(defined_by[p] < 0, "network: u segment defined twice");
    net.pivot[r] = p;
    const LinOp<T>* vcell = net.V.block_cell(r, r);
    if (!(vcell && vcell->kind() == LinOpKind::identity && p == r + 1)) selector = false;

    std::size_t lev = 0;
    auto dep = [&](std::size_t c) {
      if (c == 0) return;
      require(defined_by[c] >= 0, "network: dependency on an undefined segment (not triangular)");
      lev = std::max(lev, level[static_cast<std::size_t>(defined_by[c])] + 1);
    };
    for (std::size_t c = 0; c < nu; ++c) {
      if (net.W.block_cell(r, c)) dep(c);
      if (c != p && net.M.block_cell(r, c)) {
        selector = false;
        dep(c);
      }
    }
    level[r] = lev;
    defined_by[p] = static_cast<int>(r);
  }
  for (std::size_t c = 1; c < nu; ++c)
    require(defined_by[c] >= 0, "network: aux segment " + std::to_string(c) + " never defined");
  for (std::size_t r = 0; selector && r < nz; ++r)
    if (net.layout.size(r + 1) != net.aux_layout.size(r)) selector = false;
  net.aux_selector = selector;

  net.waves.clear();
  for (std::size_t r = 0; r < nz; ++r) {
    if (level[r] >= net.waves.size()) net.waves.resize(level[r] + 1);
    net.waves[level[r]].push_back(r);
  }

  net.learnable.clear();
  for (std::size_t c = 0; c < nu; ++c)
    if (const LinOp<T>* k = net.K.block_cell(0, c); k && k->kind() == LinOpKind::dense)
      net.learnable.push_back({ParamKey::Block::K, 0, c});
  for (std::size_t r = 0; r < nz; ++r)
    for (std::size_t c = 0; c < nu; ++c)
      if (const LinOp<T>* w = net.W.block_cell(r, c); w && w->kind() == LinOpKind::dense)
        net.learnable.push_back({ParamKey::Block::W, r, c});
  for (std::size_t r = 0; r < nz; ++r) net.learnable.push_back({ParamKey::Block::b, r, 0});
  net.learnable.push_back({ParamKey::Block::d, 0, 0});
}

// ---------------------------------------------------------------- builders

template <class T>
BlockNetwork<T> build_mlp(const std::vector<Index>& dims, const Mat<T>& K, const Vec<T>& d,
                          const std::vector<Mat<T>>& weights, const std::vector<Vec<T>>& biases,
                          const std::vector<ProxActivation<T>>& acts) {
  require(dims.size() >= 2, "build_mlp: need input and at least one layer");
  const std::size_t J = dims.size() - 1;
  require(weights.size() == J && biases.size() == J && acts.size() == J,
          "build_mlp: one weight, bias and activation per layer");
  for (std::size_t j = 0; j < J; ++j) {
    require(weights[j].rows() == dims[j + 1] && weights[j].cols() == dims[j],
            "build_mlp: weight " + std::to_string(j + 1) + " shape mismatch");
    require(biases[j].size() == dims[j + 1], "build_mlp: bias shape mismatch");
  }
  require(K.cols() == dims[J] && K.rows() == d.size(), "build_mlp: K/d shape mismatch");

  BlockNetwork<T> net;
  net.builder = "mlp";
  net.layout = SegmentLayout(dims);
  net.aux_layout = SegmentLayout(std::vector<Index>(dims.begin() + 1, dims.end()));
  net.constraint_layout = net.aux_layout;
  net.output_layout = SegmentLayout({K.rows()});
  auto W = detail::empty_grid<T>(J, J + 1);
  auto M = detail::empty_grid<T>(J, J + 1);
  auto V = detail::empty_grid<T>(J, J);
  auto Kg = detail::empty_grid<T>(1, J + 1);
  net.b.resize(net.aux_layout.total());
  for (std::size_t j = 0; j < J; ++j) {
    W[j][j] = detail::dense_op<T>(weights[j]);
    M[j][j + 1] = LinOp<T>::identity(dims[j + 1]);
    V[j][j] = LinOp<T>::identity(dims[j + 1]);
    net.b.segment(net.aux_layout.offset(j), dims[j + 1]) = biases[j];
  }
  Kg[0][J] = detail::dense_op<T>(K);
  net.W = assemble_block(W, net.aux_layout, net.layout);
  net.M = assemble_block(M, net.constraint_layout, net.layout);
  net.V = assemble_block(V, net.constraint_layout, net.aux_layout);
  net.K = assemble_block(Kg, net.output_layout, net.layout);
  net.d = d;
  net.activations = acts;
  finalize_network(net);
  return net;
}

// Single layer with K = M = [0 I], V = I.
template <class T>
BlockNetwork<T> build_perceptron(const Mat<T>& W, const Vec<T>& b, const ProxActivation<T>& act) {
  require(W.rows() == b.size(), "build_perceptron: shape mismatch");
  const Index n = W.rows();
  BlockNetwork<T> net = build_mlp<T>({W.cols(), n}, Mat<T>::Identity(n, n), Vec<T>::Zero(n), {W},
                                     {b}, {act});
  net.builder = "perceptron";
  auto Kg = detail::empty_grid<T>(1, 2);
  Kg[0][1] = LinOp<T>::identity(n);
  net.K = assemble_block(Kg, net.output_layout, net.layout);
  finalize_network(net);
  return net;
}

// N(y) = sum_j c_j sigma_j(w_j y + b_j) with scalar input.
template <class T>
BlockNetwork<T> build_shallow(const Vec<T>& c, const Vec<T>& w, const Vec<T>& b,
                              const std::vector<ProxActivation<T>>& acts) {
  const auto J = static_cast<std::size_t>(c.size());
  require(J >= 1 && w.size() == c.size() && b.size() == c.size() && acts.size() == J,
          "build_shallow: length mismatch");
  BlockNetwork<T> net;
  net.builder = "shallow";
  net.layout = SegmentLayout(std::vector<Index>(J + 1, 1));
  net.aux_layout = SegmentLayout(std::vector<Index>(J, 1));
  net.constraint_layout = net.aux_layout;
  net.output_layout = SegmentLayout({1});
  auto W = detail::empty_grid<T>(J, J + 1);
  auto M = detail::empty_grid<T>(J, J + 1);
  auto V = detail::empty_grid<T>(J, J);
  auto Kg = detail::empty_grid<T>(1, J + 1);
  for (std::size_t j = 0; j < J; ++j) {
    W[j][0] = detail::dense_op<T>(Mat<T>::Constant(1, 1, w[j]));
    M[j][j + 1] = LinOp<T>::identity(1);
    V[j][j] = LinOp<T>::identity(1);
    Kg[0][j + 1] = detail::dense_op<T>(Mat<T>::Constant(1, 1, c[j]));
  }
  net.W = assemble_block(W, net.aux_layout, net.layout);
  net.M = assemble_block(M, net.constraint_layout, net.layout);
  net.V = assemble_block(V, net.constraint_layout, net.aux_layout);
  net.K = assemble_block(Kg, net.output_layout, net.layout);
  net.b = b;
  net.d = Vec<T>::Zero(1);
  net.activations = acts;
  finalize_network(net);
  return net;
}

// u_j = u_{j-1} + h_j V_j sigma_j(W_j u_{j-1} + b_j), N(y) = K u_J + d.
template <class T>
BlockNetwork<T> build_resnet(Index m, std::size_t J, const std::vector<Mat<T>>& weights,
                             const std::vector<Mat<T>>& vmaps, const std::vector<T>& h,
                             const std::vector<Vec<T>>& biases,
                             const std::vector<ProxActivation<T>>& acts, const Mat<T>& K,
                             const Vec<T>& d) {
  require(J >= 1, "build_resnet: J must be positive");
  require(weights.size() == J && vmaps.size() == J && h.size() == J && biases.size() == J &&
              acts.size() == J,
          "build_resnet: one entry per block");
  std::vector<Index> nj;
  for (std::size_t j = 0; j < J; ++j) {
    require(weights[j].cols() == m && vmaps[j].rows() == m && vmaps[j].cols() == weights[j].rows(),
            "build_resnet: W_j must map M -> N_j and V_j N_j -> M");
    require(biases[j].size() == weights[j].rows(), "build_resnet: bias shape mismatch");
    nj.push_back(weights[j].rows());
  }
  require(K.cols() == m && K.rows() == d.size(), "build_resnet: K/d shape mismatch");
  BlockNetwork<T> net;
  net.builder = "resnet";
  net.layout = SegmentLayout(std::vector<Index>(J + 1, m));
  net.aux_layout = SegmentLayout(nj);
  net.constraint_layout = SegmentLayout(std::vector<Index>(J, m));
  net.output_layout = SegmentLayout({K.rows()});
  auto W = detail::empty_grid<T>(J, J + 1);
  auto M = detail::empty_grid<T>(J, J + 1);
  auto V = detail::empty_grid<T>(J, J);
  auto Kg = detail::empty_grid<T>(1, J + 1);
  net.b.resize(net.aux_layout.total());
  for (std::size_t j = 0; j < J; ++j) {
    W[j][j] = detail::dense_op<T>(weights[j]);
    M[j][j] = LinOp<T>::scaled(T(-1), LinOp<T>::identity(m));
    M[j][j + 1] = LinOp<T>::identity(m);
    V[j][j] = LinOp<T>::scaled(h[j], detail::dense_op<T>(vmaps[j]));
    net.b.segment(net.aux_layout.offset(j), nj[j]) = biases[j];
  }
  Kg[0][J] = detail::dense_op<T>(K);
  net.W = assemble_block(W, net.aux_layout, net.layout);
  net.M = assemble_block(M, net.constraint_layout, net.layout);
  net.V = assemble_block(V, net.constraint_layout, net.aux_layout);
  net.K = assemble_block(Kg, net.output_layout, net.layout);
  net.d = d;
  net.activations = acts;
  finalize_network(net);
  return net;
}

struct ListaOptions {
  // First layer soft_{gamma lambda}(gamma L1* H* y), i.e. the first ISTA
  // iterate from zero, instead of the linear L1* H* y.
  bool init_ista_exact = false;
};

// Unrolled ISTA with J >= 2: u_1 from the input, J - 2 shrinkage layers,
// output L_J u_{J-1}. The data term gamma L_j* H* y enters through the
// input column of W, so b = 0.
template <class T>
BlockNetwork<T> build_lista(const LinOp<T>& H, const std::vector<LinOp<T>>& L, T gamma, T lambda,
                            std::size_t J, ListaOptions opt = {}) {
  require(J >= 2, "build_lista: J must be at least 2");
  require(L.size() == J, "build_lista: need one L_j per layer");
  require(gamma > T(0), "build_lista: gamma must be positive");
  const Index m = H.rows(), s = L[0].cols();
  for (const auto& l : L)
    require(l.rows() == H.cols() && l.cols() == s, "build_lista: L_j must map S -> N");

  BlockNetwork<T> net;
  net.builder = "lista";
  std::vector<Index> sizes{m};
  sizes.insert(sizes.end(), J - 1, s);
  net.layout = SegmentLayout(sizes);
  net.aux_layout = SegmentLayout(std::vector<Index>(J - 1, s));
  net.constraint_layout = net.aux_layout;
  net.output_layout = SegmentLayout({H.cols()});
  auto W = detail::empty_grid<T>(J - 1, J);
  auto M = detail::empty_grid<T>(J - 1, J);
  auto V = detail::empty_grid<T>(J - 1, J - 1);
  auto Kg = detail::empty_grid<T>(1, J);
  const auto shrink = ProxActivation<T>::soft_shrink(gamma * lambda);
  for (std::size_t r = 0; r + 1 < J; ++r) {
    const std::size_t j = r + 1;
    LinOp<T> HL = LinOp<T>::compose(H, L[j - 1]);
    LinOp<T> HLt = LinOp<T>::adjoint_of(HL);
    if (j == 1) {
      W[r][0] = opt.init_ista_exact ? LinOp<T>::scaled(gamma, HLt) : HLt;
      net.activations.push_back(opt.init_ista_exact ? shrink : ProxActivation<T>::identity());
    } else {
      W[r][0] = LinOp<T>::scaled(gamma, HLt);
      W[r][r] = LinOp<T>::sum(LinOp<T>::identity(s),
                              LinOp<T>::scaled(-gamma, LinOp<T>::compose(HLt, HL)));
      net.activations.push_back(shrink);
    }
    M[r][r + 1] = LinOp<T>::identity(s);
    V[r][r] = LinOp<T>::identity(s);
  }
  Kg[0][J - 1] = L[J - 1];
  net.W = assemble_block(W, net.aux_layout, net.layout);
  net.M = assemble_block(M, net.constraint_layout, net.layout);
  net.V = assemble_block(V, net.constraint_layout, net.aux_layout);
  net.K = assemble_block(Kg, net.output_layout, net.layout);
  net.b = Vec<T>::Zero(net.aux_layout.total());
  net.d = Vec<T>::Zero(H.cols());
  finalize_network(net);
  for (std::size_t j = 0; j < J; ++j) {
    const T n = operator_norm(LinOp<T>::compose(H, L[j])).value;
    if (gamma * n * n >= T(1))
      net.warnings.push_back("build_lista: gamma >= 1/|H L_" + std::to_string(j + 1) + "|^2");
  }
  return net;
}

// Unrolled primal-dual iteration with x_0 = H* y, u_0 = 0:
//   u_j = proj_[-lambda,lambda](u_{j-1} + gamma_j L_j x_{j-1})
//   x_j = proj_C((I - tau_j H*H) x_{j-1} - tau_j L_j*(2 u_j - u_{j-1}) + tau_j H* y)
// Stacked u = (y, x_0, u_1, x_1, ..., u_J, x_J); output x_J.
template <class T>
BlockNetwork<T> build_unrolled_pd(const LinOp<T>& H, const std::vector<LinOp<T>>& L,
                                  const std::vector<T>& gamma, const std::vector<T>& tau, T lambda,
                                  const ProxActivation<T>& C, std::size_t J) {
  require(L.size() == J && gamma.size() == J && tau.size() == J,
          "build_unrolled_pd: step lists must have length J");
  for (std::size_t j = 0; j < J; ++j) {
    require(gamma[j] > T(0) && tau[j] > T(0), "build_unrolled_pd: steps must be positive");
    require(L[j].cols() == H.cols(), "build_unrolled_pd: L_j must act on the image space");
  }
  const Index m = H.rows(), n = H.cols();
  const Index s = J > 0 ? L[0].rows() : 1;
  for (const auto& l : L) require(l.rows() == s, "build_unrolled_pd: L_j output dims differ");

  BlockNetwork<T> net;
  net.builder = "unrolled_pd";
  std::vector<Index> sizes{m, n}, aux{n};
  for (std::size_t j = 0; j < J; ++j) {
    sizes.insert(sizes.end(), {s, n});
    aux.insert(aux.end(), {s, n});
  }
  net.layout = SegmentLayout(sizes);
  net.aux_layout = SegmentLayout(aux);
  net.constraint_layout = net.aux_layout;
  net.output_layout = SegmentLayout({n});
  const std::size_t nz = aux.size();
  auto W = detail::empty_grid<T>(nz, nz + 1);
  auto M = detail::empty_grid<T>(nz, nz + 1);
  auto V = detail::empty_grid<T>(nz, nz);
  auto Kg = detail::empty_grid<T>(1, nz + 1);
  const LinOp<T> Ht = LinOp<T>::adjoint_of(H);
  const LinOp<T> HtH = LinOp<T>::compose(Ht, H);

  W[0][0] = Ht;
  net.activations.push_back(ProxActivation<T>::identity());
  for (std::size_t j = 1; j <= J; ++j) {
    const std::size_t ru = 2 * j - 1, rx = 2 * j;  // rows of u_j, x_j
    const std::size_t cu_prev = 2 * j - 2, cx_prev = 2 * j - 1, cu = 2 * j;
    const LinOp<T>& Lj = L[j - 1];
    const LinOp<T> Ljt = LinOp<T>::adjoint_of(Lj);
    const T g = gamma[j - 1], t = tau[j - 1];
    if (j >= 2) W[ru][cu_prev] = LinOp<T>::identity(s);
    W[ru][cx_prev] = LinOp<T>::scaled(g, Lj);
    net.activations.push_back(ProxActivation<T>::interval_proj(lambda));

    W[rx][0] = LinOp<T>::scaled(t, Ht);
    if (j >= 2) W[rx][cu_prev] = LinOp<T>::scaled(t, Ljt);
    W[rx][cx_prev] = LinOp<T>::sum(LinOp<T>::identity(n), LinOp<T>::scaled(-t, HtH));
    W[rx][cu] = LinOp<T>::scaled(T(-2) * t, Ljt);
    net.activations.push_back(C);
  }
  for (std::size_t r = 0; r < nz; ++r) {
    M[r][r + 1] = LinOp<T>::identity(aux[r]);
    V[r][r] = LinOp<T>::identity(aux[r]);
  }
  Kg[0][nz] = LinOp<T>::identity(n);
  net.W = assemble_block(W, net.aux_layout, net.layout);
  net.M = assemble_block(M, net.constraint_layout, net.layout);
  net.V = assemble_block(V, net.constraint_layout, net.aux_layout);
  net.K = assemble_block(Kg, net.output_layout, net.layout);
  net.b = Vec<T>::Zero(net.aux_layout.total());
  net.d = Vec<T>::Zero(n);
  finalize_network(net);
  return net;
}

// ------------------------------------------------------------ parameters

template <class T>
ParamSet<T> get_params(const BlockNetwork<T>& net, const std::vector<ParamKey>& keys) {
  ParamSet<T> p;
  for (const auto& k : keys) {
    p.keys.push_back(k);
    switch (k.block) {
      case ParamKey::Block::K: {
        const LinOp<T>* op = net.K.block_cell(0, k.col);
        require(op && op->kind() == LinOpKind::dense, "get_params: K cell is not dense");
        p.values.push_back(Mat<T>(op->dense_matrix()));
        break;
      }
      case ParamKey::Block::W: {
        const LinOp<T>* op = net.W.block_cell(k.row, k.col);
        require(op && op->kind() == LinOpKind::dense, "get_params: W cell is not dense");
        p.values.push_back(Mat<T>(op->dense_matrix()));
        break;
      }
      case ParamKey::Block::b:
        p.values.push_back(
            net.b.segment(net.aux_layout.offset(k.row), net.aux_layout.size(k.row)));
        break;
      case ParamKey::Block::d:
        p.values.push_back(net.d);
        break;
    }
  }
  return p;
}

template <class T>
ParamSet<T> get_params(const BlockNetwork<T>& net) {
  return get_params(net, net.learnable);
}

template <class T>
BlockNetwork<T> with_params(const BlockNetwork<T>& net, const ParamSet<T>& p) {
  BlockNetwork<T> out = net;
  bool touch_k = false, touch_w = false;
  for (const auto& k : p.keys) {
    touch_k |= k.block == ParamKey::Block::K;
    touch_w |= k.block == ParamKey::Block::W;
  }
  BlockGrid<T> kg, wg;
  if (touch_k) kg = detail::grid_of(net.K);
  if (touch_w) wg = detail::grid_of(net.W);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const ParamKey& k = p.keys[i];
    const Mat<T>& v = p.values[i];
    switch (k.block) {
      case ParamKey::Block::K:
        require(kg[0][k.col] && kg[0][k.col]->rows() == v.rows() && kg[0][k.col]->cols() == v.cols(),
                "with_params: K block shape mismatch");
        kg[0][k.col] = detail::dense_op<T>(v);
        break;
      case ParamKey::Block::W:
        require(wg[k.row][k.col] && wg[k.row][k.col]->rows() == v.rows() &&
                    wg[k.row][k.col]->cols() == v.cols(),
                "with_params: W block shape mismatch");
        wg[k.row][k.col] = detail::dense_op<T>(v);
        break;
      case ParamKey::Block::b:
        require(v.size() == net.aux_layout.size(k.row), "with_params: b block shape mismatch");
        out.b.segment(net.aux_layout.offset(k.row), v.size()) = v.col(0);
        break;
      case ParamKey::Block::d:
        require(v.size() == net.d.size(), "with_params: d shape mismatch");
        out.d = v.col(0);
        break;
    }
  }
  if (touch_k) out.K = assemble_block(kg, net.output_layout, net.layout);
  if (touch_w) out.W = assemble_block(wg, net.aux_layout, net.layout);
  return out;
}

// ---------------------------------------------------------- forward passes

// Per-layer evaluation in constraint-row order using the individual cells.
template <class T>
BatchTrace<T> forward_sequential_batch(const BlockNetwork<T>& net, const Mat<T>& y) {
  require(y.rows() == net.input_dim(), "forward: input dimension mismatch");
  const Index n = y.cols();
  BatchTrace<T> tr;
  tr.u = Mat<T>::Zero(net.layout.total(), n);
  tr.z = Mat<T>::Zero(net.aux_layout.total(), n);
  tr.a = Mat<T>::Zero(net.aux_layout.total(), n);
  tr.u.topRows(net.input_dim()) = y;
  const auto& L = net.layout;
  const auto& A = net.aux_layout;
  const auto& C = net.constraint_layout;
  for (std::size_t r = 0; r < net.depth(); ++r) {
    Mat<T> a = Mat<T>::Zero(A.size(r), n);
    for (std::size_t c = 0; c < L.count(); ++c)
      if (const LinOp<T>* w = net.W.block_cell(r, c)) {
        Mat<T> uc = tr.u.middleRows(L.offset(c), L.size(c));
        detail::acc_apply(*w, uc, a);
      }
    a.colwise() += net.b.segment(A.offset(r), A.size(r));
    const Mat<T> z = net.activations[r].prox(a);
    tr.a.middleRows(A.offset(r), A.size(r)) = a;
    tr.z.middleRows(A.offset(r), A.size(r)) = z;

    const std::size_t p = net.pivot[r];
    Mat<T> vz = Mat<T>::Zero(C.size(r), n);
    detail::acc_apply(*net.V.block_cell(r, r), z, vz);
    Mat<T> rest = Mat<T>::Zero(C.size(r), n);
    for (std::size_t c = 0; c < L.count(); ++c)
      if (const LinOp<T>* m = net.M.block_cell(r, c); m && c != p) {
        Mat<T> uc = tr.u.middleRows(L.offset(c), L.size(c));
        detail::acc_apply(*m, uc, rest);
      }
    tr.u.middleRows(L.offset(p), L.size(p)) = vz - rest;
  }
  tr.output = Mat<T>::Zero(net.output_dim(), n);
  for (std::size_t c = 0; c < L.count(); ++c)
    if (const LinOp<T>* k = net.K.block_cell(0, c)) {
      Mat<T> uc = tr.u.middleRows(L.offset(c), L.size(c));
      detail::acc_apply(*k, uc, tr.output);
    }
  tr.output.colwise() += net.d;
  return tr;
}

template <class T>
ForwardTrace<T> forward_sequential(const BlockNetwork<T>& net, const Vec<T>& y) {
  BatchTrace<T> b = forward_sequential_batch(net, Mat<T>(y));
  return {b.u.col(0), b.z.col(0), b.a.col(0), b.output.col(0)};
}

// Wave-by-wave evaluation through the assembled block operators: per wave,
// the stacked rows of W u + b, the stacked activation, then V z - M u for
// the pivots (still zero in u, so they drop out of M u).
template <class T>
ForwardTrace<T> forward_block(const BlockNetwork<T>& net, const Vec<T>& y) {
  require(y.size() == net.input_dim(), "forward: input dimension mismatch");
  ForwardTrace<T> tr;
  tr.u = Vec<T>::Zero(net.layout.total());
  tr.z = Vec<T>::Zero(net.aux_layout.total());
  tr.a = Vec<T>::Zero(net.aux_layout.total());
  tr.u.head(net.input_dim()) = y;
  const auto& A = net.aux_layout;
  const auto& L = net.layout;
  for (const auto& wave : net.waves) {
    for (std::size_t r : wave) {
      Vec<T> a = net.W.apply_block_row(r, tr.u) + net.b.segment(A.offset(r), A.size(r));
      tr.a.segment(A.offset(r), A.size(r)) = a;
      tr.z.segment(A.offset(r), A.size(r)) = net.activations[r].prox(a);
    }
    for (std::size_t r : wave) {
      const std::size_t p = net.pivot[r];
      Vec<T> upd = net.V.apply_block_row(r, tr.z) - net.M.apply_block_row(r, tr.u);
      tr.u.segment(L.offset(p), L.size(p)) = upd;
    }
  }
  tr.output = net.K.apply(tr.u) + net.d;
  return tr;
}

template <class T>
std::pair<Vec<T>, Vec<T>> constraint_residuals(const BlockNetwork<T>& net, const Vec<T>& u,
                                               const Vec<T>& z) {
  require(u.size() == net.layout.total() && z.size() == net.aux_layout.total(),
          "constraint_residuals: trace dimension mismatch");
  Vec<T> r1 = net.M.apply(u) - net.V.apply(z);
  Vec<T> a = net.W.apply(u) + net.b;
  Vec<T> r2(z.size());
  const auto& A = net.aux_layout;
  for (std::size_t r = 0; r < net.depth(); ++r)
    r2.segment(A.offset(r), A.size(r)) =
        z.segment(A.offset(r), A.size(r)) -
        net.activations[r].prox(a.segment(A.offset(r), A.size(r)).eval());
  return {r1, r2};
}

template <class T>
std::pair<Vec<T>, Vec<T>> constraint_residuals(const BlockNetwork<T>& net,
                                               const ForwardTrace<T>& tr) {
  return constraint_residuals(net, tr.u, tr.z);
}

// ---------------------------------------------------------------- backprop

// Gradients of sum_i 1/2|N(y_i) - x_i|^2 with respect to net.learnable.
template <class T>
ParamSet<T> backprop_grad_batch(const BlockNetwork<T>& net, const Mat<T>& y, const Mat<T>& x,
                                EvalOrder order = EvalOrder::sequential, T* loss = nullptr) {
  require(x.rows() == net.output_dim() && x.cols() == y.cols(), "backprop: target mismatch");
  const BatchTrace<T> tr = forward_sequential_batch(net, y);
  const Index n = y.cols();
  const auto& L = net.layout;
  const auto& A = net.aux_layout;
  const auto& C = net.constraint_layout;
  const Mat<T> obar = tr.output - x;
  if (loss) *loss = T(0.5) * obar.squaredNorm();

  std::map<ParamKey, Mat<T>> grads;
  std::map<ParamKey, bool> wanted;
  for (const auto& k : net.learnable) wanted[k] = true;
  auto want = [&](const ParamKey& k) { return wanted.count(k) > 0; };

  Mat<T> ubar = Mat<T>::Zero(L.total(), n);
  for (std::size_t c = 0; c < L.count(); ++c)
    if (const LinOp<T>* k = net.K.block_cell(0, c)) {
      ParamKey key{ParamKey::Block::K, 0, c};
      if (want(key)) grads[key] = obar * tr.u.middleRows(L.offset(c), L.size(c)).transpose();
    }
  if (order == EvalOrder::sequential) {
    for (std::size_t c = 0; c < L.count(); ++c)
      if (const LinOp<T>* k = net.K.block_cell(0, c)) {
        auto dst = ubar.middleRows(L.offset(c), L.size(c));
        Mat<T> tmp = Mat<T>::Zero(L.size(c), n);
        detail::acc_adjoint(*k, obar, tmp);
        dst += tmp;
      }
  } else {
    ubar += net.K.apply_adjoint_batch(obar);
  }
  if (want({ParamKey::Block::d, 0, 0})) grads[{ParamKey::Block::d, 0, 0}] = obar.rowwise().sum();

  auto layer_param_grads = [&](std::size_t r, const Mat<T>& abar) {
    for (std::size_t c = 0; c < L.count(); ++c)
      if (net.W.block_cell(r, c)) {
        ParamKey key{ParamKey::Block::W, r, c};
        if (want(key)) grads[key] = abar * tr.u.middleRows(L.offset(c), L.size(c)).transpose();
      }
    ParamKey bk{ParamKey::Block::b, r, 0};
    if (want(bk)) grads[bk] = abar.rowwise().sum();
  };

  if (order == EvalOrder::sequential) {
    for (std::size_t rr = net.depth(); rr-- > 0;) {
      const std::size_t p = net.pivot[rr];
      const Mat<T> lam = ubar.middleRows(L.offset(p), L.size(p));
      Mat<T> zbar = Mat<T>::Zero(A.size(rr), n);
      detail::acc_adjoint(*net.V.block_cell(rr, rr), lam, zbar);
      for (std::size_t c = 0; c < L.count(); ++c)
        if (const LinOp<T>* m = net.M.block_cell(rr, c); m && c != p) {
          Mat<T> tmp = Mat<T>::Zero(L.size(c), n);
          detail::acc_adjoint(*m, lam, tmp);
          ubar.middleRows(L.offset(c), L.size(c)) -= tmp;
        }
      const Mat<T> a = tr.a.middleRows(A.offset(rr), A.size(rr));
      const Mat<T> abar = (zbar.array() * net.activations[rr].derivative(a).array()).matrix();
      layer_param_grads(rr, abar);
      for (std::size_t c = 0; c < L.count(); ++c)
        if (const LinOp<T>* w = net.W.block_cell(rr, c)) {
          Mat<T> tmp = Mat<T>::Zero(L.size(c), n);
          detail::acc_adjoint(*w, abar, tmp);
          ubar.middleRows(L.offset(c), L.size(c)) += tmp;
        }
    }
  } else {
    // Wave-restricted block products; buffers persist across waves since
    // only the current wave's segments are read.
    Mat<T> lam = Mat<T>::Zero(C.total(), n);
    Mat<T> zbar = Mat<T>::Zero(A.total(), n);
    Mat<T> abar = Mat<T>::Zero(A.total(), n);
    for (std::size_t wv = net.waves.size(); wv-- > 0;) {
      const auto& wave = net.waves[wv];
      for (std::size_t r : wave) {
        const std::size_t p = net.pivot[r];
        lam.middleRows(C.offset(r), C.size(r)) = ubar.middleRows(L.offset(p), L.size(p));
        zbar.middleRows(A.offset(r), A.size(r)).setZero();
      }
      detail::rows_adjoint(net.V, wave, C, A, lam, zbar, detail::AccMode::assign);
      detail::rows_adjoint(net.M, wave, C, L, lam, ubar, detail::AccMode::subtract);
      for (std::size_t r : wave) {
        const Mat<T> a = tr.a.middleRows(A.offset(r), A.size(r));
        abar.middleRows(A.offset(r), A.size(r)) =
            (zbar.middleRows(A.offset(r), A.size(r)).array() *
             net.activations[r].derivative(a).array())
                .matrix();
        layer_param_grads(r, abar.middleRows(A.offset(r), A.size(r)));
      }
      detail::rows_adjoint(net.W, wave, A, L, abar, ubar, detail::AccMode::add);
    }
  }

  ParamSet<T> out;
  for (const auto& k : net.learnable) {
    out.keys.push_back(k);
    auto it = grads.find(k);
    require(it != grads.end(), "backprop: gradient missing for " + k.name());
    out.values.push_back(it->second);
  }
  return out;
}

template <class T>
ParamSet<T> backprop_grad(const BlockNetwork<T>& net, const Vec<T>& y, const Vec<T>& target,
                          EvalOrder order = EvalOrder::sequential) {
  return backprop_grad_batch(net, Mat<T>(y), Mat<T>(target), order);
}

// Chain view of an MLP-family network: layer j has a single dense cell on
// u_{j-1}.
template <class T>
bool is_dense_chain(const BlockNetwork<T>& net) {
  if (!net.aux_selector) return false;
  for (std::size_t r = 0; r < net.depth(); ++r)
    for (std::size_t c = 0; c < net.layout.count(); ++c) {
      const LinOp<T>* w = net.W.block_cell(r, c);
      if ((c == r) != (w != nullptr)) return false;
      if (w && w->kind() != LinOpKind::dense) return false;
    }
  return true;
}

}  // namespace liftnet
