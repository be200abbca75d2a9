/*
 * inversion.hpp - lifted network inversion with TV regularisation
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

#include <cmath>
#include <string>
#include <vector>

namespace liftnet {

// ------------------------------------------------------------ TV operators
//
// Fields hold channel 1 (vertical differences) in the first H*W entries and
// channel 2 (horizontal differences) in the second. Images are row-major.

template <class T>
Vec<T> grad_forward_diff(const Vec<T>& x, Index h, Index w) {
  require(x.size() == h * w, "grad_forward_diff: image size does not match shape");
  Vec<T> g = Vec<T>::Zero(2 * h * w);
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j) {
      const Index p = i * w + j;
      if (i + 1 < h) g[p] = x[p + w] - x[p];
      if (j + 1 < w) g[h * w + p] = x[p + 1] - x[p];
    }
  return g;
}

// Exact adjoint of grad_forward_diff (negative divergence).
template <class T>
Vec<T> div_adjoint(const Vec<T>& g, Index h, Index w) {
  require(g.size() == 2 * h * w, "div_adjoint: field size does not match shape");
  Vec<T> x = Vec<T>::Zero(h * w);
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j) {
      const Index p = i * w + j;
      if (i + 1 < h) {
        x[p + w] += g[p];
        x[p] -= g[p];
      }
      if (j + 1 < w) {
        x[p + 1] += g[h * w + p];
        x[p] -= g[h * w + p];
      }
    }
  return x;
}

// Per-pixel projection of (z1, z2) onto the unit l2 ball.
template <class T>
Vec<T> prox_tv_dual(const Vec<T>& z, Index h, Index w) {
  require(z.size() == 2 * h * w, "prox_tv_dual: field size does not match shape");
  Vec<T> out = z;
  const Index n = h * w;
  for (Index p = 0; p < n; ++p) {
    const T nrm = std::hypot(z[p], z[n + p]);
    if (nrm > T(1)) {
      out[p] = z[p] / nrm;
      out[n + p] = z[n + p] / nrm;
    }
  }
  return out;
}

// |grad x|_{2,1}.
template <class T>
T tv_norm(const Vec<T>& x, Index h, Index w) {
  const Vec<T> g = grad_forward_diff(x, h, w);
  const Index n = h * w;
  T s = T(0);
  for (Index p = 0; p < n; ++p) s += std::hypot(g[p], g[n + p]);
  return s;
}

// ---------------------------------------------------------------- problem

template <class T>
struct EncoderLayer {
  LinOp<T> W;
  Vec<T> b;
  ProxActivation<T> act;

  Vec<T> affine(const Vec<T>& u) const { return W.apply(u) + b; }
};

// Zero step sizes resolve to the defaults: tau_x = 1.99/|W_1|^2,
// tau_z = 1/(8 alpha), tau_u[j] = 1.99/|W_{j+1}|^2.
template <class T>
struct InversionConfig {
  T alpha = T(7e-2);
  T tau_x = T(0);
  T tau_z = T(0);
  std::vector<T> tau_u;
  int pdhg_max_iter = 1000;
  T pdhg_tol = T(1e-5);
  int outer_iters = 500;
  T divergence = T(1e8);

  static InversionConfig reference_defaults() { return InversionConfig{}; }
};

template <class T>
struct InversionProblem {
  std::vector<EncoderLayer<T>> layers;
  Vec<T> y;
  Index height = 0;
  Index width = 0;
  InversionConfig<T> config;

  std::size_t depth() const { return layers.size(); }
};

template <class T>
struct InversionState {
  Vec<T> x;
  Vec<T> z;               // TV dual field
  std::vector<Vec<T>> u;  // u_1 .. u_{J-1}
};

template <class T>
struct ResolvedSteps {
  T tau_x = T(0);
  T tau_z = T(0);
  std::vector<T> tau_u;
  std::vector<std::string> warnings;
};

template <class T>
void validate(const InversionProblem<T>& p) {
  require(!p.layers.empty(), "inversion: encoder has no layers");
  require(p.config.alpha > T(0), "inversion: alpha must be positive");
  require(p.layers.front().W.cols() == p.height * p.width,
          "inversion: first layer input does not match image shape");
  for (std::size_t j = 0; j < p.layers.size(); ++j) {
    const auto& L = p.layers[j];
    require(L.b.size() == L.W.rows(), "inversion: bias size does not match layer output");
    if (j + 1 < p.layers.size())
      require(p.layers[j + 1].W.cols() == L.W.rows(), "inversion: layer chain shape mismatch");
  }
  require(p.y.size() == p.layers.back().W.rows(), "inversion: observation size mismatch");
  require(p.config.tau_x >= T(0) && p.config.tau_z >= T(0), "inversion: negative step size");
  for (T t : p.config.tau_u) require(t >= T(0), "inversion: negative step size");
}

template <class T>
ResolvedSteps<T> resolve_steps(const InversionProblem<T>& p) {
  validate(p);
  const auto& c = p.config;
  ResolvedSteps<T> r;
  const T n1 = operator_norm(p.layers[0].W).value;
  const T limit = T(1.99) / (n1 * n1);
  r.tau_x = c.tau_x > T(0) ? c.tau_x : limit;
  if (r.tau_x > limit * (T(1) + T(1e-9)))
    r.warnings.push_back("tau_x exceeds 1.99/|W_1|^2");
  r.tau_z = c.tau_z > T(0) ? c.tau_z : T(1) / (T(8) * c.alpha);
  for (std::size_t j = 1; j < p.depth(); ++j) {
    const T given = j - 1 < c.tau_u.size() ? c.tau_u[j - 1] : T(0);
    if (given > T(0)) {
      r.tau_u.push_back(given);
    } else {
      const T nj = operator_norm(p.layers[j].W).value;
      r.tau_u.push_back(T(1.99) / (nj * nj));
    }
  }
  return r;
}

template <class T>
InversionState<T> initial_state(const InversionProblem<T>& p) {
  InversionState<T> s;
  s.x = Vec<T>::Zero(p.height * p.width);
  s.z = Vec<T>::Zero(2 * p.height * p.width);
  for (std::size_t j = 0; j + 1 < p.depth(); ++j) s.u.push_back(Vec<T>::Zero(p.layers[j].W.rows()));
  return s;
}

// Target of layer j (0-based): u_{j+1}, or y for the last layer.
template <class T>
const Vec<T>& layer_target(const InversionProblem<T>& p, const InversionState<T>& s, std::size_t j) {
  return j + 1 < p.depth() ? s.u[j] : p.y;
}

template <class T>
const Vec<T>& layer_input(const InversionState<T>& s, std::size_t j) {
  return j == 0 ? s.x : s.u[j - 1];
}

// sum_j B_j(u_j, W_j u_{j-1} + b_j) + B_J(y, W_J u_{J-1} + b_J) + alpha TV(x).
template <class T>
T inversion_objective(const InversionProblem<T>& p, const InversionState<T>& s) {
  T f = p.config.alpha * tv_norm(s.x, p.height, p.width);
  for (std::size_t j = 0; j < p.depth(); ++j) {
    const auto& L = p.layers[j];
    const T b = bregman_penalty(L.act, layer_target(p, s, j), L.affine(layer_input(s, j)));
    if (is_infinite(b)) return b;
    f += b;
  }
  return f;
}

// PDHG on x with the first coupling term:
//   x+ = x - tau_x (W_1^T(sigma(W_1 x + b_1) - u_1) + alpha grad^T z)
//   z+ = proj(z + tau_z alpha grad(2 x+ - x))
// Stops when both updates are below tol in norm. Returns iterations used.
template <class T>
int pdhg_x_block(const InversionProblem<T>& p, InversionState<T>& s, const ResolvedSteps<T>& st,
                 int max_iter, T tol) {
  const auto& L = p.layers[0];
  const Vec<T>& target = layer_target(p, s, 0);
  const T a = p.config.alpha;
  const Index h = p.height, w = p.width;
  for (int it = 1; it <= max_iter; ++it) {
    const Vec<T> r = L.act.prox(L.affine(s.x)) - target;
    const Vec<T> xn = s.x - st.tau_x * (L.W.apply_adjoint(r) + a * div_adjoint(s.z, h, w));
    const Vec<T> zn =
        prox_tv_dual<T>(s.z + st.tau_z * a * grad_forward_diff<T>(T(2) * xn - s.x, h, w), h, w);
    const T dx = (xn - s.x).norm(), dz = (zn - s.z).norm();
    s.x = xn;
    s.z = zn;
    if (!(s.x.norm() <= p.config.divergence))
      throw NumericalAbort("pdhg_x_block: iterate norm exceeded divergence threshold at iteration " +
                           std::to_string(it));
    if (dx < tol && dz < tol) return it;
  }
  return max_iter;
}

// Proximal-gradient update of u_j (1-based, 1 <= j <= J-1) from snapshot s:
//   u+ = prox_{kappa Psi_j}((u - tau (W_{j+1}^T(sigma(W_{j+1} u + b_{j+1}) - u_{j+1})
//                                     - (W_j u_{j-1} + b_j))) / (1 + tau)),
// kappa = tau / (1 + tau).
template <class T>
Vec<T> prox_grad_u_block(const InversionProblem<T>& p, const InversionState<T>& s,
                         const ResolvedSteps<T>& st, std::size_t j) {
  require(j >= 1 && j < p.depth(), "prox_grad_u_block: layer index out of range");
  const auto& cur = p.layers[j - 1];
  const auto& next = p.layers[j];
  const Vec<T>& u = s.u[j - 1];
  const T tau = st.tau_u[j - 1];
  const Vec<T> g = next.W.apply_adjoint(next.act.prox(next.affine(u)) - layer_target(p, s, j));
  const Vec<T> v = (u - tau * (g - cur.affine(layer_input(s, j - 1)))) / (T(1) + tau);
  return cur.act.prox(v, tau / (T(1) + tau));
}

template <class T>
struct InversionResult {
  Vec<T> x;
  InversionState<T> state;
  std::vector<T> objective;  // index 0 = initial state
  std::vector<int> pdhg_iterations;
  ResolvedSteps<T> steps;
};

// Coordinate descent: the x block by PDHG to its stopping rule, then every
// u_j simultaneously from the post-x snapshot.
template <class T>
InversionResult<T> invert(const InversionProblem<T>& p) {
  InversionResult<T> r;
  r.steps = resolve_steps(p);
  r.state = initial_state(p);
  r.objective.push_back(inversion_objective(p, r.state));
  const int outer = p.depth() == 1 ? 1 : p.config.outer_iters;
  for (int k = 0; k < outer; ++k) {
    r.pdhg_iterations.push_back(
        pdhg_x_block(p, r.state, r.steps, p.config.pdhg_max_iter, p.config.pdhg_tol));
    if (p.depth() > 1) {
      std::vector<Vec<T>> next(p.depth() - 1);
      for (std::size_t j = 1; j < p.depth(); ++j) next[j - 1] = prox_grad_u_block(p, r.state, r.steps, j);
      r.state.u = std::move(next);
    }
    r.objective.push_back(inversion_objective(p, r.state));
  }
  r.x = r.state.x;
  return r;
}

// min_x B_Psi(y, W x + b) + alpha TV(x).
template <class T>
InversionResult<T> single_layer_invert(const LinOp<T>& W, const Vec<T>& b,
                                       const ProxActivation<T>& act, const Vec<T>& y,
                                       Index height, Index width, InversionConfig<T> cfg) {
  InversionProblem<T> p;
  p.layers.push_back({W, b, act});
  p.y = y;
  p.height = height;
  p.width = width;
  p.config = std::move(cfg);
  return invert(p);
}

}  // namespace liftnet
