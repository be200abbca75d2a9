/*
 * optimizers.hpp - first-order solvers, block-coordinate descent and ISGM
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

#include "liftnet/objectives.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace liftnet {

template <class T>
using BlockVector = std::vector<Mat<T>>;

namespace bv {

template <class T>
BlockVector<T> zeros_like(const BlockVector<T>& x) {
  BlockVector<T> z;
  z.reserve(x.size());
  for (const auto& m : x) z.push_back(Mat<T>::Zero(m.rows(), m.cols()));
  return z;
}

template <class T>
T dot(const BlockVector<T>& a, const BlockVector<T>& b) {
  T s = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i].array() * b[i].array()).sum();
  return s;
}

template <class T>
T sq_norm(const BlockVector<T>& a) {
  return dot(a, a);
}

template <class T>
void require_same_shape(const BlockVector<T>& a, const BlockVector<T>& b, const char* what) {
  require(a.size() == b.size(), std::string(what) + ": block count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i)
    require(a[i].rows() == b[i].rows() && a[i].cols() == b[i].cols(),
            std::string(what) + ": block shape mismatch");
}

}  // namespace bv

// ------------------------------------------------------------- step policy

template <class T>
struct StepPolicy {
  enum class Kind { constant, lipschitz, diminishing, backtracking };
  Kind kind = Kind::constant;
  T alpha = T(1e-3);
  T coef = T(1);
  T op_norm = T(1);
  T c = T(1);
  T exponent = T(0.5);
  T shrink = T(0.5);
  T sufficient = T(1e-4);
  int max_trials = 50;

  static StepPolicy constant(T a) {
    require(a >= T(0), "step size must be nonnegative");
    StepPolicy p;
    p.alpha = a;
    return p;
  }
  // coef / |op|^2 with the norm estimated once.
  static StepPolicy lipschitz(T coef, const LinOp<T>& op) {
    StepPolicy p;
    p.kind = Kind::lipschitz;
    p.coef = coef;
    p.op_norm = operator_norm(op).value;
    require(p.op_norm > T(0), "lipschitz step: operator norm is zero");
    return p;
  }
  static StepPolicy diminishing(T c, T exponent) {
    StepPolicy p;
    p.kind = Kind::diminishing;
    p.c = c;
    p.exponent = exponent;
    return p;
  }
  static StepPolicy backtracking(T initial, T shrink = T(0.5), T sufficient = T(1e-4),
                                 int max_trials = 50) {
    StepPolicy p;
    p.kind = Kind::backtracking;
    p.alpha = initial;
    p.shrink = shrink;
    p.sufficient = sufficient;
    p.max_trials = max_trials;
    return p;
  }

  // Step for iteration t (0-based). Backtracking returns its initial trial.
  T step(long t) const {
    switch (kind) {
      case Kind::constant: return alpha;
      case Kind::lipschitz: return coef / (op_norm * op_norm);
      case Kind::diminishing: return c / std::pow(T(t + 1), exponent);
      case Kind::backtracking: return alpha;
    }
    return alpha;
  }
};

// Armijo backtracking along -grad: largest alpha * shrink^k with
// f(x - a g) <= f(x) - sufficient * a |g|^2.
template <class T>
T backtracking_step(const std::function<T(const BlockVector<T>&)>& f, const BlockVector<T>& x,
                    const BlockVector<T>& grad, const StepPolicy<T>& p) {
  const T fx = f(x);
  const T g2 = bv::sq_norm(grad);
  T a = p.alpha;
  for (int k = 0; k < p.max_trials; ++k, a *= p.shrink) {
    BlockVector<T> y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= a * grad[i];
    if (f(y) <= fx - p.sufficient * a * g2) return a;
  }
  return a;
}

// ---------------------------------------------------------- optimizer state

template <class T>
struct OptimizerState {
  BlockVector<T> x;
  BlockVector<T> m;  // first moment, heavyball velocity or previous iterate
  BlockVector<T> q;  // second moment
  long t = 0;
  T p1 = T(0.9);
  T p2 = T(0.999);
  T eps = T(1e-8);

  OptimizerState() = default;
  explicit OptimizerState(BlockVector<T> x0) : x(std::move(x0)) {
    m = bv::zeros_like(x);
    q = bv::zeros_like(x);
  }
};

template <class T>
void gd_step(OptimizerState<T>& s, const BlockVector<T>& grad, const StepPolicy<T>& p) {
  bv::require_same_shape(s.x, grad, "gd_step");
  const T a = p.step(s.t);
  for (std::size_t i = 0; i < s.x.size(); ++i) s.x[i] -= a * grad[i];
  ++s.t;
}

// v <- beta v - alpha g, x <- x + v.
template <class T>
void heavyball_step(OptimizerState<T>& s, const BlockVector<T>& grad, const StepPolicy<T>& p,
                    T beta) {
  require(beta >= T(0) && beta < T(1), "heavyball: momentum must lie in [0, 1)");
  bv::require_same_shape(s.x, grad, "heavyball_step");
  const T a = p.step(s.t);
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    s.m[i] = beta * s.m[i] - a * grad[i];
    s.x[i] += s.m[i];
  }
  ++s.t;
}

// Extrapolated point y = x + beta (x - x_prev); x_prev lives in s.m and is
// initialised to x on the first call.
template <class T>
BlockVector<T> nesterov_extrapolate(const OptimizerState<T>& s, T beta) {
  require(beta >= T(0) && beta < T(1), "nesterov: momentum must lie in [0, 1)");
  BlockVector<T> y = s.x;
  if (s.t == 0) return y;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += beta * (s.x[i] - s.m[i]);
  return y;
}

// x_prev <- x, x <- y - alpha grad f(y).
template <class T>
void nesterov_step(OptimizerState<T>& s, const BlockVector<T>& grad_at_y, const StepPolicy<T>& p,
                   T beta) {
  bv::require_same_shape(s.x, grad_at_y, "nesterov_step");
  BlockVector<T> y = nesterov_extrapolate(s, beta);
  const T a = p.step(s.t);
  s.m = s.x;
  for (std::size_t i = 0; i < s.x.size(); ++i) s.x[i] = y[i] - a * grad_at_y[i];
  ++s.t;
}

// Bias-corrected Adam direction m_hat / (sqrt(q_hat) + eps); advances the
// moment buffers and t.
template <class T>
BlockVector<T> adam_direction(OptimizerState<T>& s, const BlockVector<T>& grad) {
  require(s.p1 > T(0) && s.p1 < T(1) && s.p2 > T(0) && s.p2 < T(1),
          "adam: decay parameters must lie in (0, 1)");
  bv::require_same_shape(s.x, grad, "adam_step");
  const T c1 = T(1) - std::pow(s.p1, T(s.t + 1));
  const T c2 = T(1) - std::pow(s.p2, T(s.t + 1));
  BlockVector<T> dir(s.x.size());
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    s.m[i] = s.p1 * s.m[i] + (T(1) - s.p1) * grad[i];
    s.q[i] = s.p2 * s.q[i] + (T(1) - s.p2) * grad[i].cwiseProduct(grad[i]);
    const Mat<T> mh = s.m[i] / c1;
    const Mat<T> qh = s.q[i] / c2;
    dir[i] = (mh.array() / (qh.array().sqrt() + s.eps)).matrix();
  }
  ++s.t;
  return dir;
}

template <class T>
void adam_step(OptimizerState<T>& s, const BlockVector<T>& grad, const StepPolicy<T>& p) {
  const T a = p.step(s.t);
  BlockVector<T> dir = adam_direction(s, grad);
  for (std::size_t i = 0; i < s.x.size(); ++i) s.x[i] -= a * dir[i];
}

template <class T>
using ProxFn = std::function<BlockVector<T>(const BlockVector<T>&, T)>;

// x <- prox_{alpha h}(x - alpha m_hat / (sqrt(q_hat) + eps)).
template <class T>
void prox_adam_step(OptimizerState<T>& s, const BlockVector<T>& grad, const ProxFn<T>& prox,
                    const StepPolicy<T>& p) {
  const T a = p.step(s.t);
  BlockVector<T> dir = adam_direction(s, grad);
  for (std::size_t i = 0; i < s.x.size(); ++i) s.x[i] -= a * dir[i];
  if (prox) s.x = prox(s.x, a);
}

// ------------------------------------------------------- ISGM inner problem

// Inner ISGM objective: smooth + nonsmooth batch objective plus the anchor
// term |theta - theta_k|^2 / (2 tau) over the selected blocks.
template <class T>
T isgm_objective(const PenaltyStrategy<T>& s, const BlockNetwork<T>& net, const Mat<T>& y,
                 const Mat<T>& x, const Mat<T>& z, const ParamSet<T>& anchor, T tau) {
  auto parts = evaluate_parts(s, net, y, x, z, false);
  T f = parts.loss + parts.penalty + parts.nonsmooth;
  if (!is_infinite(tau) && tau > T(0)) {
    const ParamSet<T> cur = get_params(net, anchor.keys);
    T d = T(0);
    for (std::size_t i = 0; i < cur.size(); ++i)
      d += (cur.values[i] - anchor.values[i]).squaredNorm();
    f += d / (T(2) * tau);
  }
  return f;
}

template <class T>
struct BlockSolveOptions {
  int max_iter = 500;
  T tol = T(1e-8);  // on the gradient-mapping norm
  T initial_step = T(1);
};

template <class T>
struct BcdOptions {
  int sweeps = 20;
  BlockSolveOptions<T> theta;
  BlockSolveOptions<T> aux;
};

template <class T>
struct BcdResult {
  BlockNetwork<T> net;
  Mat<T> z;
  std::vector<T> objective;  // after each sweep, index 0 = start
  bool converged = true;
};

namespace detail {

// Monotone proximal gradient with backtracking on f + h. prox(v, a) is the
// prox of a*h at v. A trial step a is accepted when both the descent-lemma
// bound and the gradient Lipschitz bound |g(xn) - g(x)| <= |xn - x| / a hold;
// the latter stays accurate once function differences reach rounding level.
template <class T, class Point, class F, class H, class G, class P, class Step>
Point prox_grad_solve(Point x, F f, H h, G grad, P prox, Step combine,
                      T norm2_fn(const Point&, const Point&), const BlockSolveOptions<T>& opt,
                      bool& converged) {
  const T round = T(1e3) * std::numeric_limits<T>::epsilon();
  T a = opt.initial_step;
  T fx = f(x);
  T Fx = fx + h(x);
  Point g = grad(x);
  converged = false;
  for (int it = 0; it < opt.max_iter; ++it) {
    bool accepted = false;
    Point xn = x, gn = g;
    T fn = fx, d2 = T(0);
    for (int bt = 0; bt < 60; ++bt) {
      xn = prox(combine(x, g, a), a);
      fn = f(xn);
      d2 = norm2_fn(xn, x);
      const T bound = fx + combine.inner(g, xn, x) + d2 / (T(2) * a);
      if (std::isfinite(fn) && fn <= bound + round * std::abs(fx)) {
        gn = grad(xn);
        if (a * a * norm2_fn(gn, g) <= d2 * (T(1) + round)) {
          accepted = true;
          break;
        }
      }
      a *= T(0.5);
    }
    if (!accepted) break;
    const T gm = std::sqrt(d2) / a;
    const T Fn = fn + h(xn);
    if (!(Fn <= Fx + round * std::abs(Fx))) {
      converged = gm <= opt.tol;
      break;
    }
    x = xn;
    g = gn;
    fx = fn;
    Fx = Fn;
    if (gm <= opt.tol) {
      converged = true;
      break;
    }
    a *= T(2);
  }
  return x;
}

template <class T>
T params_dist2(const ParamSet<T>& a, const ParamSet<T>& b) {
  T s = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.values[i] - b.values[i]).squaredNorm();
  return s;
}

template <class T>
T mat_dist2(const Mat<T>& a, const Mat<T>& b) {
  return (a - b).squaredNorm();
}

template <class T>
struct ParamCombine {
  T tau;
  const ParamSet<T>* anchor;
  // Gradient step on the smooth part; the anchor term is handled by prox.
  ParamSet<T> operator()(const ParamSet<T>& x, const ParamSet<T>& g, T a) const {
    ParamSet<T> y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y.values[i] -= a * g.values[i];
    return y;
  }
  T inner(const ParamSet<T>& g, const ParamSet<T>& xn, const ParamSet<T>& x) const {
    T s = T(0);
    for (std::size_t i = 0; i < g.size(); ++i)
      s += (g.values[i].array() * (xn.values[i] - x.values[i]).array()).sum();
    return s;
  }
};

template <class T>
struct MatCombine {
  Mat<T> operator()(const Mat<T>& x, const Mat<T>& g, T a) const { return x - a * g; }
  T inner(const Mat<T>& g, const Mat<T>& xn, const Mat<T>& x) const {
    return (g.array() * (xn - x).array()).sum();
  }
};

// prox of a/(2 tau)|. - anchor|^2.
template <class T>
ParamSet<T> anchor_prox(const ParamSet<T>& v, T a, T tau, const ParamSet<T>& anchor) {
  if (is_infinite(tau)) return v;
  ParamSet<T> out = v;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.values[i] = (tau * v.values[i] + a * anchor.values[i]) / (tau + a);
  return out;
}

template <class T>
bool has_nonsmooth(const PenaltyStrategy<T>& s) {
  return s.kind == Strategy::bregman || s.kind == Strategy::fenchel ||
         s.kind == Strategy::classical_lifted;
}

}  // namespace detail

// theta-block: argmin over the anchor keys of the batch objective plus
// |theta - theta_k|^2 / (2 tau). tau = 0 keeps theta; tau = inf drops the term.
template <class T>
BlockNetwork<T> solve_theta_block(const PenaltyStrategy<T>& s, const BlockNetwork<T>& net,
                                  const Mat<T>& y, const Mat<T>& x, const Mat<T>& z,
                                  const ParamSet<T>& anchor, T tau,
                                  const BlockSolveOptions<T>& opt, bool* converged = nullptr) {
  if (tau == T(0)) {
    if (converged) *converged = true;
    return net;
  }
  auto f = [&](const ParamSet<T>& p) { return smooth_objective(s, with_params(net, p), y, x, z); };
  auto grad = [&](const ParamSet<T>& p) {
    return grad_params(s, with_params(net, p), y, x, z, &anchor.keys);
  };
  auto prox = [&](const ParamSet<T>& v, T a) { return detail::anchor_prox(v, a, tau, anchor); };
  auto h = [&](const ParamSet<T>& p) {
    return is_infinite(tau) ? T(0) : detail::params_dist2(p, anchor) / (T(2) * tau);
  };
  bool conv = false;
  ParamSet<T> p = detail::prox_grad_solve<T>(get_params(net, anchor.keys), f, h, grad, prox,
                                             detail::ParamCombine<T>{tau, &anchor},
                                             &detail::params_dist2<T>, opt, conv);
  if (converged) *converged = conv;
  return with_params(net, p);
}

// aux-block: argmin over z of the batch objective for fixed theta.
template <class T>
Mat<T> solve_aux_block(const PenaltyStrategy<T>& s, const BlockNetwork<T>& net, const Mat<T>& y,
                       const Mat<T>& x, const Mat<T>& z0, const BlockSolveOptions<T>& opt,
                       bool* converged = nullptr) {
  auto f = [&](const Mat<T>& z) { return smooth_objective(s, net, y, x, z); };
  auto grad = [&](const Mat<T>& z) { return grad_aux(s, net, y, x, z); };
  const bool ns = detail::has_nonsmooth(s);
  auto prox = [&](const Mat<T>& v, T a) { return ns ? prox_aux(s, net, v, a) : v; };
  auto h = [&](const Mat<T>& z) {
    return ns ? evaluate_parts(s, net, y, x, z, false).nonsmooth : T(0);
  };
  bool conv = false;
  Mat<T> start = ns ? prox_aux(s, net, z0, T(0)) : z0;
  Mat<T> z = detail::prox_grad_solve<T>(start, f, h, grad, prox, detail::MatCombine<T>{},
                                        &detail::mat_dist2<T>, opt, conv);
  if (converged) *converged = conv;
  return z;
}

// Alternating exact block minimisation of the inner ISGM problem.
template <class T>
BcdResult<T> bcd_solve(const PenaltyStrategy<T>& s, const BlockNetwork<T>& net, const Mat<T>& y,
                       const Mat<T>& x, const Mat<T>& z0, const ParamSet<T>& anchor, T tau,
                       const BcdOptions<T>& opt = {}) {
  require(s.kind != Strategy::conventional && s.kind != Strategy::contrastive,
          "bcd_solve: needs a lifted penalty strategy");
  require(tau >= T(0), "bcd_solve: tau must be nonnegative");
  BcdResult<T> r{net, z0, {}, true};
  r.objective.push_back(isgm_objective(s, r.net, y, x, r.z, anchor, tau));
  for (int sweep = 0; sweep < opt.sweeps; ++sweep) {
    bool c1 = true, c2 = true;
    r.net = solve_theta_block(s, r.net, y, x, r.z, anchor, tau, opt.theta, &c1);
    r.z = solve_aux_block(s, r.net, y, x, r.z, opt.aux, &c2);
    r.converged = r.converged && c1 && c2;
    r.objective.push_back(isgm_objective(s, r.net, y, x, r.z, anchor, tau));
  }
  return r;
}

// One linearised BCD step: theta gradient step including (theta - theta_k)/tau,
// then an aux gradient (or proximal-gradient) step at the new theta.
template <class T>
std::pair<BlockNetwork<T>, Mat<T>> linearized_bcd_step(const PenaltyStrategy<T>& s,
                                                       const BlockNetwork<T>& net,
                                                       const Mat<T>& y, const Mat<T>& x,
                                                       const Mat<T>& z, const ParamSet<T>& anchor,
                                                       T tau, T alpha, T beta) {
  require(tau > T(0), "linearized_bcd_step: tau must be positive");
  require(alpha >= T(0) && beta >= T(0), "linearized_bcd_step: negative step");
  BlockNetwork<T> n1 = net;
  if (alpha > T(0)) {
    ParamSet<T> g = grad_params(s, net, y, x, z, &anchor.keys);
    ParamSet<T> p = get_params(net, anchor.keys);
    for (std::size_t i = 0; i < p.size(); ++i) {
      Mat<T> step = g.values[i];
      if (!is_infinite(tau)) step += (p.values[i] - anchor.values[i]) / tau;
      p.values[i] -= alpha * step;
    }
    n1 = with_params(net, p);
  }
  Mat<T> z1 = z;
  if (beta > T(0)) {
    z1 = z - beta * grad_aux(s, n1, y, x, z);
    if (detail::has_nonsmooth(s)) z1 = prox_aux(s, n1, z1, beta);
  }
  return {n1, z1};
}

// --------------------------------------------------------------- aux init

enum class AuxInit { replicate, forward, gaussian, zeros };

// replicate: every aux segment holds the input tiled cyclically,
// u_j[k] = y[k mod dim(y)].
template <class T>
Mat<T> init_aux(const BlockNetwork<T>& net, const Mat<T>& y, AuxInit how, std::uint64_t seed = 0) {
  require_lifted(net);
  const Index n = y.cols(), m = y.rows();
  Mat<T> z(net.aux_layout.total(), n);
  switch (how) {
    case AuxInit::forward:
      return feasible_aux(net, y);
    case AuxInit::zeros:
      z.setZero();
      return z;
    case AuxInit::gaussian: {
      std::mt19937_64 g(seed);
      std::normal_distribution<double> nd(0.0, 1.0);
      for (Index k = 0; k < n; ++k)
        for (Index i = 0; i < z.rows(); ++i) z(i, k) = static_cast<T>(nd(g));
      return z;
    }
    case AuxInit::replicate:
      for (std::size_t j = 0; j < net.depth(); ++j) {
        const Index off = net.aux_layout.offset(j);
        for (Index i = 0; i < net.aux_layout.size(j); ++i) z.row(off + i) = y.row(i % m);
      }
      return z;
  }
  return z;
}

// -------------------------------------------------------------------- ISGM

enum class InnerSolver { bcd, linearized };

template <class T>
struct IsgmOptions {
  T tau0 = T(1);
  bool tau_inv_sqrt = false;  // tau_k = tau0 / sqrt(k + 1)
  InnerSolver solver = InnerSolver::bcd;
  BcdOptions<T> bcd;
  int linearized_iters = 100;
  T alpha = T(1e-2);
  T beta = T(1e-2);
  int epochs = 1;
  AuxInit aux_init = AuxInit::forward;
  std::uint64_t seed = 0;
  std::vector<ParamKey> keys;  // empty: all learnable blocks
};

struct IsgmRecord {
  long step = 0;
  std::size_t batch = 0;
  double tau = 0;
  double objective_before = 0;
  double objective_after = 0;
  bool converged = true;
};

template <class T>
struct IsgmResult {
  BlockNetwork<T> net;
  std::vector<IsgmRecord> records;
};

template <class T>
Mat<T> select_columns(const Mat<T>& m, const std::vector<Index>& idx) {
  Mat<T> out(m.rows(), static_cast<Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Index>(k)) = m.col(idx[k]);
  return out;
}

// theta_{k+1} = argmin E^p(theta, z) + |theta - theta_k|^2 / (2 tau_k) per
// batch; aux stacks exist only for the active batch.
template <class T>
IsgmResult<T> isgm_run(const PenaltyStrategy<T>& s, const BlockNetwork<T>& net, const Mat<T>& y,
                       const Mat<T>& x, const std::vector<std::vector<Index>>& batches,
                       const IsgmOptions<T>& opt) {
  std::vector<int> seen(static_cast<std::size_t>(y.cols()), 0);
  for (const auto& b : batches)
    for (Index i : b) {
      require(i >= 0 && i < y.cols(), "isgm_run: batch index out of range");
      ++seen[static_cast<std::size_t>(i)];
    }
  for (int c : seen) require(c == 1, "isgm_run: batches must partition the sample set");

  IsgmResult<T> r{net, {}};
  const std::vector<ParamKey> keys = opt.keys.empty() ? net.learnable : opt.keys;
  long k = 0;
  for (int e = 0; e < opt.epochs; ++e)
    for (std::size_t p = 0; p < batches.size(); ++p, ++k) {
      const T tau = opt.tau_inv_sqrt ? opt.tau0 / std::sqrt(T(k + 1)) : opt.tau0;
      const Mat<T> yb = select_columns(y, batches[p]);
      const Mat<T> xb = select_columns(x, batches[p]);
      Mat<T> z = init_aux(r.net, yb, opt.aux_init, opt.seed + static_cast<std::uint64_t>(k));
      const ParamSet<T> anchor = get_params(r.net, keys);
      IsgmRecord rec;
      rec.step = k;
      rec.batch = p;
      rec.tau = static_cast<double>(tau);
      rec.objective_before = static_cast<double>(isgm_objective(s, r.net, yb, xb, z, anchor, tau));
      if (opt.solver == InnerSolver::bcd) {
        BcdResult<T> b = bcd_solve(s, r.net, yb, xb, z, anchor, tau, opt.bcd);
        r.net = b.net;
        z = b.z;
        rec.converged = b.converged;
      } else if (tau > T(0)) {
        for (int it = 0; it < opt.linearized_iters; ++it) {
          auto [n1, z1] = linearized_bcd_step(s, r.net, yb, xb, z, anchor, tau, opt.alpha, opt.beta);
          r.net = n1;
          z = z1;
        }
      }
      rec.objective_after = static_cast<double>(isgm_objective(s, r.net, yb, xb, z, anchor, tau));
      r.records.push_back(rec);
    }
  return r;
}

// ---------------------------------------------------------------- training

enum class StepVariant { plain, heavyball, nesterov, adam };

struct MetricRecord {
  long step = 0;
  double objective = 0;  // per-sample mean
  double penalty = 0;
  double loss = 0;
  double mse = 0;
  double psnr = 0;
  double wall_ms = 0;
};

template <class T>
struct TrainConfig {
  std::vector<T> mu{T(5e-3)};
  int steps = 1000;
  StepVariant variant = StepVariant::adam;
  T lr_theta = T(1e-3);
  T lr_z = T(1e-3);
  T momentum = T(0.9);
  T p1 = T(0.9), p2 = T(0.999), eps = T(1e-8);
  AuxInit aux_init = AuxInit::replicate;
  std::uint64_t seed = 0;
  int log_every = 100;
  std::vector<ParamKey> keys;
  // Fills mse and psnr; defaults to forward-pass error on the training set.
  std::function<void(const BlockNetwork<T>&, MetricRecord&)> evaluate;
};

template <class T>
struct TrainResult {
  BlockNetwork<T> net;
  Mat<T> z;
  std::vector<MetricRecord> metrics;
};

namespace detail {

template <class T>
void default_eval(const BlockNetwork<T>& net, const Mat<T>& y, const Mat<T>& x, MetricRecord& m) {
  const Mat<T> out = forward_sequential_batch(net, y).output;
  m.mse = static_cast<double>((out - x).squaredNorm() / T(x.size()));
  m.psnr = m.mse > 0 ? std::min(99.0, 10.0 * std::log10(1.0 / m.mse)) : 99.0;
}

template <class T>
void step_block(StepVariant v, OptimizerState<T>& st, const BlockVector<T>& g, T lr, T momentum,
                const ProxFn<T>& prox) {
  const StepPolicy<T> p = StepPolicy<T>::constant(lr);
  switch (v) {
    case StepVariant::plain:
      gd_step(st, g, p);
      if (prox) st.x = prox(st.x, lr);
      break;
    case StepVariant::heavyball:
      heavyball_step(st, g, p, momentum);
      if (prox) st.x = prox(st.x, lr);
      break;
    case StepVariant::nesterov:
      nesterov_step(st, g, p, momentum);
      if (prox) st.x = prox(st.x, lr);
      break;
    case StepVariant::adam:
      prox_adam_step(st, g, prox, p);
      break;
  }
}

}  // namespace detail

// Deterministic full-batch alternation: a theta step on the smooth part G,
// then a proximal step on z with the Psi terms. No activation derivative
// is evaluated on this path.
template <class T>
TrainResult<T> train_lifted_bregman(const BlockNetwork<T>& net, const Mat<T>& y, const Mat<T>& x,
                                    const TrainConfig<T>& cfg) {
  require_lifted(net);
  const auto s = PenaltyStrategy<T>::bregman(cfg.mu);
  const std::vector<ParamKey> keys = cfg.keys.empty() ? net.learnable : cfg.keys;
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult<T> r{net, init_aux(net, y, cfg.aux_init, cfg.seed), {}};

  ParamSet<T> params = get_params(net, keys);
  OptimizerState<T> th(params.values);
  OptimizerState<T> zs(BlockVector<T>{r.z});
  for (auto* st : {&th, &zs}) {
    st->p1 = cfg.p1;
    st->p2 = cfg.p2;
    st->eps = cfg.eps;
  }
  const ProxFn<T> zprox = [&](const BlockVector<T>& v, T a) {
    return BlockVector<T>{prox_aux(s, r.net, v[0], a)};
  };

  auto record = [&](long step) {
    auto parts = evaluate_parts(s, r.net, y, x, r.z, false);
    MetricRecord m;
    m.step = step;
    const double n = static_cast<double>(y.cols());
    m.loss = static_cast<double>(parts.loss) / n;
    m.objective = static_cast<double>(parts.total) / n;
    m.penalty = m.objective - m.loss;
    if (cfg.evaluate)
      cfg.evaluate(r.net, m);
    else
      detail::default_eval(r.net, y, x, m);
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    r.metrics.push_back(m);
  };

  record(0);
  for (int step = 1; step <= cfg.steps; ++step) {
    // theta step; Nesterov evaluates the gradient at the extrapolated point.
    BlockVector<T> at = cfg.variant == StepVariant::nesterov ? nesterov_extrapolate(th, cfg.momentum)
                                                             : th.x;
    params.values = at;
    ParamSet<T> g = grad_params(s, with_params(r.net, params), y, x, r.z, &keys);
    detail::step_block<T>(cfg.variant, th, g.values, cfg.lr_theta, cfg.momentum, nullptr);
    params.values = th.x;
    r.net = with_params(r.net, params);

    BlockVector<T> zat = cfg.variant == StepVariant::nesterov ? nesterov_extrapolate(zs, cfg.momentum)
                                                              : zs.x;
    BlockVector<T> gz{grad_aux(s, r.net, y, x, zat[0])};
    detail::step_block<T>(cfg.variant, zs, gz, cfg.lr_z, cfg.momentum, zprox);
    r.z = zs.x[0];
    if (!r.z.allFinite() || !th.x[0].allFinite())
      throw NumericalAbort("train_lifted_bregman: non-finite iterate at step " + std::to_string(step));
    if (step % cfg.log_every == 0 || step == cfg.steps) record(step);
  }
  return r;
}

// Back-propagation baseline minimising the summed squared error.
template <class T>
TrainResult<T> train_conventional(const BlockNetwork<T>& net, const Mat<T>& y, const Mat<T>& x,
                                  const TrainConfig<T>& cfg) {
  const std::vector<ParamKey> keys = cfg.keys.empty() ? net.learnable : cfg.keys;
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult<T> r{net, Mat<T>(), {}};
  ParamSet<T> params = get_params(net, keys);
  OptimizerState<T> th(params.values);
  th.p1 = cfg.p1;
  th.p2 = cfg.p2;
  th.eps = cfg.eps;
  const auto s = PenaltyStrategy<T>::conventional();
  auto record = [&](long step) {
    MetricRecord m;
    m.step = step;
    m.loss = static_cast<double>(conventional_loss(r.net, y, x)) / static_cast<double>(y.cols());
    m.objective = m.loss;
    if (cfg.evaluate)
      cfg.evaluate(r.net, m);
    else
      detail::default_eval(r.net, y, x, m);
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    r.metrics.push_back(m);
  };
  record(0);
  for (int step = 1; step <= cfg.steps; ++step) {
    BlockVector<T> at = cfg.variant == StepVariant::nesterov ? nesterov_extrapolate(th, cfg.momentum)
                                                             : th.x;
    params.values = at;
    ParamSet<T> g = grad_params(s, with_params(r.net, params), y, x, Mat<T>(), &keys);
    detail::step_block<T>(cfg.variant, th, g.values, cfg.lr_theta, cfg.momentum, nullptr);
    params.values = th.x;
    r.net = with_params(r.net, params);
    if (!th.x[0].allFinite())
      throw NumericalAbort("train_conventional: non-finite iterate at step " + std::to_string(step));
    if (step % cfg.log_every == 0 || step == cfg.steps) record(step);
  }
  return r;
}

}  // namespace liftnet
