/*
 * objectives.hpp - lifted training objectives and their gradients
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

#include "liftnet/network.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace liftnet {

enum class Strategy { conventional, mac_qp, classical_lifted, fenchel, bregman, contrastive };

template <class T>
struct PenaltyStrategy {
  Strategy kind = Strategy::conventional;
  std::vector<T> mu;  // one entry broadcasts to all layers

  static PenaltyStrategy conventional() { return {Strategy::conventional, {}}; }
  static PenaltyStrategy mac_qp(T mu) { return make(Strategy::mac_qp, {mu}); }
  static PenaltyStrategy classical_lifted(T mu) { return make(Strategy::classical_lifted, {mu}); }
  static PenaltyStrategy fenchel(T mu) { return make(Strategy::fenchel, {mu}); }
  static PenaltyStrategy bregman(std::vector<T> mu) { return make(Strategy::bregman, std::move(mu)); }
  static PenaltyStrategy contrastive(std::vector<T> mu) {
    return make(Strategy::contrastive, std::move(mu));
  }

  T mu_at(std::size_t j) const {
    require(!mu.empty(), "strategy has no penalty weight");
    if (mu.size() == 1) return mu[0];
    require(j < mu.size(), "strategy: no weight for layer " + std::to_string(j + 1));
    return mu[j];
  }

  std::string name() const {
    switch (kind) {
      case Strategy::conventional: return "conventional";
      case Strategy::mac_qp: return "mac_qp";
      case Strategy::classical_lifted: return "classical_lifted";
      case Strategy::fenchel: return "fenchel";
      case Strategy::bregman: return "bregman";
      case Strategy::contrastive: return "contrastive";
    }
    return "";
  }

 private:
  static PenaltyStrategy make(Strategy k, std::vector<T> mu) {
    require(!mu.empty(), "strategy needs at least one penalty weight");
    for (T m : mu) require(m > T(0), "penalty weights must be strictly positive");
    return {k, std::move(mu)};
  }
};

// Per-sample aux stacks as columns of z; z_i matches net.aux_layout.
template <class T>
struct LiftedState {
  Mat<T> z;
};

template <class T>
void require_lifted(const BlockNetwork<T>& net) {
  if (!net.aux_selector)
    throw UnsupportedComposition(
        "lifted objectives need M = [0 I] and V = I (aux segments selected directly); use the "
        "splitting solvers for this architecture");
}

template <class T>
Mat<T> stack_u(const BlockNetwork<T>& net, const Mat<T>& y, const Mat<T>& z) {
  require(y.rows() == net.input_dim() && z.rows() == net.aux_layout.total() && y.cols() == z.cols(),
          "lifted state does not match the network");
  Mat<T> u(net.layout.total(), y.cols());
  u.topRows(y.rows()) = y;
  u.bottomRows(z.rows()) = z;
  return u;
}

// Forward-trace aux stacks, i.e. the feasible point for the given batch.
template <class T>
Mat<T> feasible_aux(const BlockNetwork<T>& net, const Mat<T>& y) {
  require_lifted(net);
  return forward_sequential_batch(net, y).u.bottomRows(net.aux_dim());
}

template <class T>
struct ObjectiveParts {
  T loss = T(0);
  T penalty = T(0);    // smooth part of the penalty
  T nonsmooth = T(0);  // part handled by prox_aux (Psi terms)
  T total = T(0);
  Mat<T> u;
  Mat<T> resid;  // K u + d - x
  Mat<T> g1;     // partial of D in its first argument (aux rows), smooth part
  Mat<T> g2;     // partial of D in its second argument
};

// Value and partial gradients of sum_i L(K u_i + d) + D(M u_i, W u_i + b).
template <class T>
ObjectiveParts<T> evaluate_parts(const PenaltyStrategy<T>& s, const BlockNetwork<T>& net,
                                 const Mat<T>& y, const Mat<T>& x, const Mat<T>& z,
                                 bool want_grads = true) {
  require(s.kind != Strategy::conventional && s.kind != Strategy::contrastive,
          "evaluate_parts: strategy has no lifted penalty");
  require_lifted(net);
  require(x.rows() == net.output_dim() && x.cols() == y.cols(), "objective: target mismatch");
  ObjectiveParts<T> p;
  p.u = stack_u(net, y, z);
  const Index n = y.cols();
  p.resid = net.K.apply_batch(p.u);
  p.resid.colwise() += net.d;
  p.resid -= x;
  p.loss = T(0.5) * p.resid.squaredNorm();
  Mat<T> v = net.W.apply_batch(p.u);
  v.colwise() += net.b;
  if (want_grads) {
    p.g1 = Mat<T>::Zero(z.rows(), n);
    p.g2 = Mat<T>::Zero(z.rows(), n);
  }
  T exact = T(0);
  const auto& A = net.aux_layout;
  for (std::size_t j = 0; j < net.depth(); ++j) {
    const auto& act = net.activations[j];
    const T mu = s.mu_at(j);
    const Mat<T> zj = z.middleRows(A.offset(j), A.size(j));
    const Mat<T> vj = v.middleRows(A.offset(j), A.size(j));
    switch (s.kind) {
      case Strategy::mac_qp: {
        auto q = quadratic_penalty(act, zj, vj, want_grads);
        p.penalty += mu * q.value;
        exact += mu * q.value;
        if (want_grads) {
          p.g1.middleRows(A.offset(j), A.size(j)) = mu * q.grad_u;
          p.g2.middleRows(A.offset(j), A.size(j)) = mu * q.grad_v;
        }
        break;
      }
      case Strategy::classical_lifted: {
        const Mat<T> r = zj - vj;
        p.penalty += mu * T(0.5) * r.squaredNorm();
        const T psi = act.psi(zj);
        p.nonsmooth += psi;
        exact += is_infinite(psi) ? psi : mu * T(0.5) * r.squaredNorm() + psi;
        if (want_grads) {
          p.g1.middleRows(A.offset(j), A.size(j)) = mu * r;
          p.g2.middleRows(A.offset(j), A.size(j)) = -mu * r;
        }
        break;
      }
      case Strategy::fenchel:
      case Strategy::bregman: {
        // B = [1/2|z|^2 - <v, z> + Phi^*(v)] + Psi(z).
        T smooth = T(0.5) * zj.squaredNorm() - (vj.array() * zj.array()).sum();
        for (Index k = 0; k < n; ++k) smooth += conjugate_value(act, vj.col(k));
        p.penalty += mu * smooth;
        const T psi = act.psi(zj);
        p.nonsmooth += mu * psi;
        T b = T(0);
        for (Index k = 0; k < n; ++k)
          b += (s.kind == Strategy::fenchel && act.kind() == ActKind::relu)
                   ? fenchel_penalty_relu(zj.col(k), vj.col(k))
                   : bregman_penalty(act, zj.col(k), vj.col(k));
        exact += is_infinite(b) ? b : mu * b;
        if (want_grads) {
          p.g1.middleRows(A.offset(j), A.size(j)) = mu * bregman_smooth_grad_u(act, zj, vj);
          p.g2.middleRows(A.offset(j), A.size(j)) = mu * bregman_grad_v(act, zj, vj);
        }
        break;
      }
      default:
        break;
    }
  }
  p.total = is_infinite(exact) ? exact : p.loss + exact;
  return p;
}

template <class T>
T conventional_loss(const BlockNetwork<T>& net, const Mat<T>& y, const Mat<T>& x) {
  return T(0.5) * (forward_sequential_batch(net, y).output - x).squaredNorm();
}

// Batch sum (no 1/s factor); +inf when an indicator is violated.
template <class T>
T batch_objective(const PenaltyStrategy<T>& s, const BlockNetwork<T>& net, const Mat<T>& y,
                  const Mat<T>& x, const Mat<T>& z);

// Loss plus the differentiable part of the penalty (Psi terms excluded).
template <class T>
T smooth_objective(const PenaltyStrategy<T>& s, const BlockNetwork<T>& net, const Mat<T>& y,
                   const Mat<T>& x, const Mat<T>& z) {
  if (s.kind == Strategy::conventional) return conventional_loss(net, y, x);
  auto p = evaluate_parts(s, net, y, x, z, false);
  return p.loss + p.penalty;
}

// Gradient of the smooth objective in the aux stacks:
// K_aux^T grad L + M_aux^T grad_1 D + W_aux^T grad_2 D.
template <class T>
Mat<T> grad_aux(const PenaltyStrategy<T>& s, const BlockNetwork<T>& net, const Mat<T>& y,
                const Mat<T>& x, const Mat<T>& z) {
  require(s.kind != Strategy::conventional, "grad_aux: conventional training has no aux variables");
  require(s.kind != Strategy::contrastive, "grad_aux: contrastive aux live in the inner solver");
  auto p = evaluate_parts(s, net, y, x, z, true);
  const std::size_t last = net.layout.count() - 1;
  const LinOp<T> k_aux = restrict_columns(net.K, net.layout, 1, last);
  const LinOp<T> m_aux = restrict_columns(net.M, net.layout, 1, last);
  const LinOp<T> w_aux = restrict_columns(net.W, net.layout, 1, last);
  Mat<T> g = k_aux.apply_adjoint_batch(p.resid);
  g += m_aux.apply_adjoint_batch(p.g1);
  g += w_aux.apply_adjoint_batch(p.g2);
  return g;
}

// Parameter gradients of the smooth objective, summed over the batch.
template <class T>
ParamSet<T> grad_params(const PenaltyStrategy<T>& s, const BlockNetwork<T>& net, const Mat<T>& y,
                        const Mat<T>& x, const Mat<T>& z,
                        const std::vector<ParamKey>* keys = nullptr) {
  const std::vector<ParamKey>& ks = keys ? *keys : net.learnable;
  if (s.kind == Strategy::conventional) {
    ParamSet<T> full = backprop_grad_batch(net, y, x);
    ParamSet<T> out;
    for (const auto& k : ks) {
      out.keys.push_back(k);
      out.values.push_back(full.at(k));
    }
    return out;
  }
  require(s.kind != Strategy::contrastive, "grad_params: use contrastive_grad_params");
  auto p = evaluate_parts(s, net, y, x, z, true);
  const auto& L = net.layout;
  const auto& A = net.aux_layout;
  ParamSet<T> out;
  for (const auto& k : ks) {
    out.keys.push_back(k);
    switch (k.block) {
      case ParamKey::Block::K:
        out.values.push_back(p.resid * p.u.middleRows(L.offset(k.col), L.size(k.col)).transpose());
        break;
      case ParamKey::Block::d:
        out.values.push_back(p.resid.rowwise().sum());
        break;
      case ParamKey::Block::W:
        out.values.push_back(p.g2.middleRows(A.offset(k.row), A.size(k.row)) *
                             p.u.middleRows(L.offset(k.col), L.size(k.col)).transpose());
        break;
      case ParamKey::Block::b:
        out.values.push_back(p.g2.middleRows(A.offset(k.row), A.size(k.row)).rowwise().sum());
        break;
    }
  }
  return out;
}

// Segment-wise prox of step * (nonsmooth part) on the aux stacks.
template <class T>
Mat<T> prox_aux(const PenaltyStrategy<T>& s, const BlockNetwork<T>& net, const Mat<T>& z, T step) {
  require(s.kind == Strategy::bregman || s.kind == Strategy::fenchel ||
              s.kind == Strategy::classical_lifted,
          "prox_aux: strategy has no nonsmooth aux term");
  require_lifted(net);
  require(step >= T(0), "prox_aux: negative step");
  require(z.rows() == net.aux_layout.total(), "prox_aux: aux dimension mismatch");
  Mat<T> out(z.rows(), z.cols());
  const auto& A = net.aux_layout;
  for (std::size_t j = 0; j < net.depth(); ++j) {
    const T t = s.kind == Strategy::classical_lifted ? step : step * s.mu_at(j);
    out.middleRows(A.offset(j), A.size(j)) =
        net.activations[j].prox(z.middleRows(A.offset(j), A.size(j)), t);
  }
  return out;
}

// --------------------------------------------------------------- contrastive

template <class T>
struct InnerSolverOptions {
  T tol = T(1e-10);  // on the norm of the projected-gradient map
  int max_iter = 100000;
};

template <class T>
struct InnerResult {
  std::vector<Mat<T>> u;  // u_1 .. u_J (clamped: u_J = x)
  T value = T(0);
  bool converged = false;
  int iterations = 0;
};

template <class T>
struct ContrastiveResult {
  T value = T(0);
  InnerResult<T> clamped;
  InnerResult<T> free;
  bool converged() const { return clamped.converged && free.converged; }
};

namespace detail {

template <class T>
void require_contrastive(const BlockNetwork<T>& net, const Mat<T>& y, const Mat<T>* x) {
  if (!is_dense_chain(net))
    throw UnsupportedComposition("contrastive training is defined for dense MLP chains only");
  for (const auto& a : net.activations)
    if (!a.is_indicator() && a.kind() != ActKind::identity)
      throw UnsupportedComposition("contrastive training needs projection activations");
  const std::size_t J = net.depth();
  const LinOp<T>* k = net.K.block_cell(0, J);
  const bool k_identity = k && k->rows() == k->cols() &&
                          (materialize(*k) - RowMat<T>::Identity(k->rows(), k->cols()))
                                  .cwiseAbs()
                                  .maxCoeff() == T(0);
  if (!k_identity || net.d.cwiseAbs().maxCoeff() != T(0))
    throw UnsupportedComposition("contrastive training needs K = [0 .. 0 I] and d = 0");
  require(y.rows() == net.input_dim(), "contrastive: input mismatch");
  if (x) require(x->rows() == net.output_dim() && x->cols() == y.cols(), "contrastive: target mismatch");
}

template <class T>
const RowMat<T>& chain_weight(const BlockNetwork<T>& net, std::size_t j) {
  return net.W.block_cell(j, j)->dense_matrix();
}

// Energy sum_j mu_j/2 |u_j - W_j u_{j-1} - b_j|^2 with u_0 = y.
template <class T>
T chain_energy(const BlockNetwork<T>& net, const PenaltyStrategy<T>& s, const Mat<T>& y,
               const std::vector<Mat<T>>& u, bool with_bias = true) {
  T e = T(0);
  const auto& A = net.aux_layout;
  for (std::size_t j = 0; j < u.size(); ++j) {
    const Mat<T>& prev = j == 0 ? y : u[j - 1];
    Mat<T> r = u[j] - chain_weight(net, j) * prev;
    if (with_bias) r.colwise() -= net.b.segment(A.offset(j), A.size(j));
    e += s.mu_at(j) * T(0.5) * r.squaredNorm();
  }
  return e;
}

// Gradients w.r.t. u_1 .. u_nfree.
template <class T>
std::vector<Mat<T>> chain_energy_grad(const BlockNetwork<T>& net, const PenaltyStrategy<T>& s,
                                      const Mat<T>& y, const std::vector<Mat<T>>& u,
                                      std::size_t nfree, bool with_bias = true) {
  const auto& A = net.aux_layout;
  std::vector<Mat<T>> r(u.size());
  for (std::size_t j = 0; j < u.size(); ++j) {
    const Mat<T>& prev = j == 0 ? y : u[j - 1];
    r[j] = s.mu_at(j) * (u[j] - chain_weight(net, j) * prev);
    if (with_bias) r[j].colwise() -= s.mu_at(j) * net.b.segment(A.offset(j), A.size(j));
  }
  std::vector<Mat<T>> g(nfree);
  for (std::size_t j = 0; j < nfree; ++j) {
    g[j] = r[j];
    if (j + 1 < u.size()) g[j] -= chain_weight(net, j + 1).transpose() * r[j + 1];
  }
  return g;
}

// Projected FISTA with gradient-based restart on the convex chain energy.
template <class T>
InnerResult<T> solve_chain(const BlockNetwork<T>& net, const PenaltyStrategy<T>& s,
                           const Mat<T>& y, const Mat<T>* clamp, const InnerSolverOptions<T>& opt) {
  const std::size_t J = net.depth();
  const std::size_t nfree = clamp ? J - 1 : J;
  const Index n = y.cols();
  InnerResult<T> res;
  // Warm start from the forward pass.
  BatchTrace<T> tr = forward_sequential_batch(net, y);
  std::vector<Mat<T>> u(J);
  for (std::size_t j = 0; j < J; ++j)
    u[j] = tr.z.middleRows(net.aux_layout.offset(j), net.aux_layout.size(j));
  if (clamp) u[J - 1] = *clamp;

  // Lipschitz constant of the homogeneous gradient by power iteration.
  T lip = T(0);
  if (nfree > 0) {
    std::vector<Mat<T>> w(J);
    for (std::size_t j = 0; j < J; ++j)
      w[j] = Mat<T>::Ones(net.aux_layout.size(j), 1) / std::sqrt(T(net.aux_layout.size(j)));
    if (clamp) w[J - 1].setZero();
    const Mat<T> y0 = Mat<T>::Zero(y.rows(), 1);
    for (int it = 0; it < 200; ++it) {
      auto g = chain_energy_grad(net, s, y0, w, nfree, false);
      T nrm = T(0);
      for (const auto& m : g) nrm += m.squaredNorm();
      nrm = std::sqrt(nrm);
      if (nrm == T(0)) break;
      lip = nrm;
      for (std::size_t j = 0; j < nfree; ++j) w[j] = g[j] / nrm;
    }
    lip *= T(1.05);
  }
  if (nfree == 0 || lip == T(0)) {
    res.u = u;
    res.value = chain_energy(net, s, y, u);
    res.converged = true;
    return res;
  }
  const T step = T(1) / lip;
  auto project = [&](std::vector<Mat<T>>& v) {
    for (std::size_t j = 0; j < nfree; ++j) v[j] = net.activations[j].prox(v[j]);
  };
  project(u);
  std::vector<Mat<T>> x = u, ext = u;
  T t = T(1);
  for (int it = 0; it < opt.max_iter; ++it) {
    auto g = chain_energy_grad(net, s, y, ext, nfree);
    std::vector<Mat<T>> xn = ext;
    for (std::size_t j = 0; j < nfree; ++j) xn[j] = ext[j] - step * g[j];
    project(xn);
    T gm = T(0), dot = T(0);
    for (std::size_t j = 0; j < nfree; ++j) {
      gm += (ext[j] - xn[j]).squaredNorm();
      dot += ((ext[j] - xn[j]).array() * (xn[j] - x[j]).array()).sum();
    }
    gm = std::sqrt(gm) * lip;
    res.iterations = it + 1;
    const bool restart = dot > T(0);
    const T tn = restart ? T(1) : (T(1) + std::sqrt(T(1) + T(4) * t * t)) / T(2);
    for (std::size_t j = 0; j < nfree; ++j)
      ext[j] = restart ? xn[j] : Mat<T>(xn[j] + ((t - T(1)) / tn) * (xn[j] - x[j]));
    x.swap(xn);
    t = tn;
    if (gm <= opt.tol * std::max<T>(T(1), std::sqrt(T(n)))) {
      res.converged = true;
      break;
    }
  }
  res.u = x;
  res.value = chain_energy(net, s, y, x);
  return res;
}

}  // namespace detail

// Clamped minimum minus free minimum, summed over the batch. Both energies
// use weights mu_j/2 on every layer residual.
template <class T>
ContrastiveResult<T> contrastive_objective(const PenaltyStrategy<T>& s, const BlockNetwork<T>& net,
                                           const Mat<T>& y, const Mat<T>& x,
                                           const InnerSolverOptions<T>& opt = {}) {
  require(s.kind == Strategy::contrastive, "contrastive_objective: wrong strategy");
  detail::require_contrastive(net, y, &x);
  ContrastiveResult<T> r;
  r.clamped = detail::solve_chain(net, s, y, &x, opt);
  r.free = detail::solve_chain<T>(net, s, y, nullptr, opt);
  r.value = r.clamped.value - r.free.value;
  return r;
}

// Envelope-theorem gradient: grad_theta of the clamped energy at the
// clamped minimiser minus that of the free energy at the free minimiser.
template <class T>
ParamSet<T> contrastive_grad_params(const PenaltyStrategy<T>& s, const BlockNetwork<T>& net,
                                    const Mat<T>& y, const Mat<T>& x,
                                    const InnerSolverOptions<T>& opt = {},
                                    ContrastiveResult<T>* info = nullptr) {
  ContrastiveResult<T> r = contrastive_objective(s, net, y, x, opt);
  if (info) *info = r;
  const std::size_t J = net.depth();
  const auto& A = net.aux_layout;
  auto energy_grads = [&](const std::vector<Mat<T>>& u, std::vector<Mat<T>>& gw,
                          std::vector<Vec<T>>& gb) {
    gw.resize(J);
    gb.resize(J);
    for (std::size_t j = 0; j < J; ++j) {
      const Mat<T>& prev = j == 0 ? y : u[j - 1];
      Mat<T> res = u[j] - detail::chain_weight(net, j) * prev;
      res.colwise() -= net.b.segment(A.offset(j), A.size(j));
      gw[j] = -s.mu_at(j) * res * prev.transpose();
      gb[j] = -s.mu_at(j) * res.rowwise().sum();
    }
  };
  std::vector<Mat<T>> gwc, gwf;
  std::vector<Vec<T>> gbc, gbf;
  energy_grads(r.clamped.u, gwc, gbc);
  energy_grads(r.free.u, gwf, gbf);
  ParamSet<T> out;
  for (const auto& k : net.learnable) {
    out.keys.push_back(k);
    switch (k.block) {
      case ParamKey::Block::W: out.values.push_back(gwc[k.row] - gwf[k.row]); break;
      case ParamKey::Block::b: out.values.push_back(gbc[k.row] - gbf[k.row]); break;
      case ParamKey::Block::K: out.values.push_back(Mat<T>::Zero(net.output_dim(), net.output_dim())); break;
      case ParamKey::Block::d: out.values.push_back(Mat<T>::Zero(net.output_dim(), 1)); break;
    }
  }
  return out;
}

template <class T>
T batch_objective(const PenaltyStrategy<T>& s, const BlockNetwork<T>& net, const Mat<T>& y,
                  const Mat<T>& x, const Mat<T>& z) {
  switch (s.kind) {
    case Strategy::conventional: return conventional_loss(net, y, x);
    case Strategy::contrastive: return contrastive_objective(s, net, y, x).value;
    default: return evaluate_parts(s, net, y, x, z, false).total;
  }
}

}  // namespace liftnet
