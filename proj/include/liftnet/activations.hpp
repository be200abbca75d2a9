/*
 * activations.hpp - proximal activations, potentials and penalties
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

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

namespace liftnet {

enum class ActKind { relu, soft_shrink, box_proj, interval_proj, identity, tanh };

// Thrown by an instrumented activation whose derivative must never be used.
class PoisonedDerivative : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Elementwise activation sigma = prox_Psi. All entry points accept vectors
// or column batches; row i is coordinate i.
template <class T>
class ProxActivation {
 public:
  ProxActivation() = default;

  static ProxActivation relu() { return ProxActivation(ActKind::relu); }
  static ProxActivation identity() { return ProxActivation(ActKind::identity); }
  static ProxActivation tanh() { return ProxActivation(ActKind::tanh); }
  static ProxActivation soft_shrink(T lambda) {
    require(lambda >= T(0), "soft_shrink: lambda must be nonnegative");
    ProxActivation a(ActKind::soft_shrink);
    a.lambda_ = lambda;
    return a;
  }
  static ProxActivation interval_proj(T lambda) {
    require(lambda >= T(0), "interval_proj: lambda must be nonnegative");
    ProxActivation a(ActKind::interval_proj);
    a.lambda_ = lambda;
    return a;
  }
  // Box [lo, hi]; length-1 bounds broadcast over all coordinates.
  static ProxActivation box_proj(Vec<T> lo, Vec<T> hi) {
    require(lo.size() == hi.size() && lo.size() > 0, "box_proj: bound size mismatch");
    require((lo.array() <= hi.array()).all(), "box_proj: lo must not exceed hi");
    ProxActivation a(ActKind::box_proj);
    a.lo_ = std::move(lo);
    a.hi_ = std::move(hi);
    return a;
  }
  static ProxActivation box_proj(T lo, T hi) {
    return box_proj(Vec<T>::Constant(1, lo), Vec<T>::Constant(1, hi));
  }
  // Same map, but derivative() faults.
  static ProxActivation poisoned(ProxActivation inner) {
    inner.poisoned_ = true;
    return inner;
  }

  ActKind kind() const { return kind_; }
  T lambda() const { return lambda_; }
  bool is_poisoned() const { return poisoned_; }
  bool is_indicator() const {
    return kind_ == ActKind::relu || kind_ == ActKind::box_proj ||
           kind_ == ActKind::interval_proj;
  }

  T lo(Index i) const { return lo_.size() == 1 ? lo_[0] : lo_[i]; }
  T hi(Index i) const { return hi_.size() == 1 ? hi_[0] : hi_[i]; }

  // prox of t*Psi at a scalar v for coordinate i; t = 0 is the identity.
  T prox1(T v, Index i, T t = T(1)) const {
    if (t == T(0)) return v;
    switch (kind_) {
      case ActKind::relu:
        return v > T(0) ? v : T(0);
      case ActKind::soft_shrink: {
        const T thr = t * lambda_;
        if (v > thr) return v - thr;
        if (v < -thr) return v + thr;
        return T(0);
      }
      case ActKind::interval_proj:
        return std::clamp(v, -lambda_, lambda_);
      case ActKind::box_proj:
        return std::clamp(v, lo(i), hi(i));
      case ActKind::identity:
        return v;
      case ActKind::tanh:
        return tanh_prox(v, t);
    }
    return v;
  }

  T psi1(T u, Index i) const {
    switch (kind_) {
      case ActKind::relu:
        return u >= T(0) ? T(0) : infinity<T>();
      case ActKind::soft_shrink:
        return lambda_ * std::abs(u);
      case ActKind::interval_proj:
        return (u >= -lambda_ && u <= lambda_) ? T(0) : infinity<T>();
      case ActKind::box_proj:
        return (u >= lo(i) && u <= hi(i)) ? T(0) : infinity<T>();
      case ActKind::identity:
        return T(0);
      case ActKind::tanh: {
        if (u < T(-1) || u > T(1)) return infinity<T>();
        return xlogx_half(T(1) + u) + xlogx_half(T(1) - u) - T(0.5) * u * u;
      }
    }
    return T(0);
  }

  // Almost-everywhere derivative; zero at kinks.
  T derivative1(T v, Index i) const {
    if (poisoned_) throw PoisonedDerivative("activation derivative evaluated on a poisoned activation");
    switch (kind_) {
      case ActKind::relu:
        return v > T(0) ? T(1) : T(0);
      case ActKind::soft_shrink:
        return std::abs(v) > lambda_ ? T(1) : T(0);
      case ActKind::interval_proj:
        return std::abs(v) < lambda_ ? T(1) : T(0);
      case ActKind::box_proj:
        return (v > lo(i) && v < hi(i)) ? T(1) : T(0);
      case ActKind::identity:
        return T(1);
      case ActKind::tanh: {
        const T th = std::tanh(v);
        return T(1) - th * th;
      }
    }
    return T(1);
  }

  template <class D>
  typename D::PlainObject prox(const Eigen::MatrixBase<D>& v, T t = T(1)) const {
    typename D::PlainObject out(v.rows(), v.cols());
    for (Index k = 0; k < v.cols(); ++k)
      for (Index i = 0; i < v.rows(); ++i) out(i, k) = prox1(v(i, k), i, t);
    return out;
  }

  template <class D>
  typename D::PlainObject derivative(const Eigen::MatrixBase<D>& v) const {
    typename D::PlainObject out(v.rows(), v.cols());
    for (Index k = 0; k < v.cols(); ++k)
      for (Index i = 0; i < v.rows(); ++i) out(i, k) = derivative1(v(i, k), i);
    return out;
  }

  // Sum of Psi over all entries; +inf outside the domain.
  template <class D>
  T psi(const Eigen::MatrixBase<D>& u) const {
    T s = T(0);
    for (Index k = 0; k < u.cols(); ++k)
      for (Index i = 0; i < u.rows(); ++i) {
        const T p = psi1(u(i, k), i);
        if (is_infinite(p)) return infinity<T>();
        s += p;
      }
    return s;
  }

  // Text form used by checkpoints: relu, identity, tanh, soft_shrink:L,
  // interval_proj:L, box_proj:LO:HI (scalar bounds only).
  std::string spec() const {
    std::ostringstream os;
    os.precision(17);
    switch (kind_) {
      case ActKind::relu: os << "relu"; break;
      case ActKind::identity: os << "identity"; break;
      case ActKind::tanh: os << "tanh"; break;
      case ActKind::soft_shrink: os << "soft_shrink:" << static_cast<double>(lambda_); break;
      case ActKind::interval_proj: os << "interval_proj:" << static_cast<double>(lambda_); break;
      case ActKind::box_proj:
        require(lo_.size() == 1, "spec: per-coordinate boxes have no text form");
        os << "box_proj:" << static_cast<double>(lo_[0]) << ":" << static_cast<double>(hi_[0]);
        break;
    }
    return os.str();
  }

  static ProxActivation parse(const std::string& s) {
    auto colon = s.find(':');
    const std::string name = s.substr(0, colon);
    auto num = [&](std::size_t from) {
      require(from != std::string::npos, "activation spec '" + s + "' needs a parameter");
      return static_cast<T>(std::stod(s.substr(from + 1)));
    };
    if (name == "relu") return relu();
    if (name == "identity") return identity();
    if (name == "tanh") return tanh();
    if (name == "soft_shrink") return soft_shrink(num(colon));
    if (name == "interval_proj") return interval_proj(num(colon));
    if (name == "box_proj") {
      auto second = s.find(':', colon + 1);
      require(second != std::string::npos, "box_proj spec needs lo:hi");
      const T lo = static_cast<T>(std::stod(s.substr(colon + 1, second - colon - 1)));
      const T hi = static_cast<T>(std::stod(s.substr(second + 1)));
      return box_proj(lo, hi);
    }
    throw ContractViolation("unknown activation '" + s + "'");
  }

 private:
  explicit ProxActivation(ActKind k) : kind_(k) {}

  static T xlogx_half(T x) { return x > T(0) ? T(0.5) * x * std::log(x) : T(0); }

  // Solves (1 - t) u + t atanh(u) = v on (-1, 1) by bisection.
  static T tanh_prox(T v, T t) {
    if (t == T(1)) return std::tanh(v);
    if (t == T(0)) return v;
    T lo = T(-1), hi = T(1);
    for (int it = 0; it < 200; ++it) {
      const T mid = T(0.5) * (lo + hi);
      if (mid == lo || mid == hi) break;
      const T f = (T(1) - t) * mid + t * std::atanh(mid) - v;
      if (f > T(0))
        hi = mid;
      else
        lo = mid;
    }
    return T(0.5) * (lo + hi);
  }

  ActKind kind_ = ActKind::identity;
  T lambda_ = T(0);
  Vec<T> lo_, hi_;
  bool poisoned_ = false;
};

template <class T, class D>
typename D::PlainObject prox_eval(const ProxActivation<T>& act, const Eigen::MatrixBase<D>& v) {
  return act.prox(v);
}

template <class T, class D>
T psi_eval(const ProxActivation<T>& act, const Eigen::MatrixBase<D>& u) {
  return act.psi(u);
}

// Phi^*(v) = <sigma(v), v> - Phi(sigma(v)), Phi = 1/2|.|^2 + Psi.
template <class T, class D>
T conjugate_value(const ProxActivation<T>& act, const Eigen::MatrixBase<D>& v) {
  const auto s = act.prox(v);
  return (s.array() * v.array()).sum() - T(0.5) * s.squaredNorm() - act.psi(s);
}

// B(u, v) = 1/2|u - s|^2 + Psi(u) - Psi(s) - <v - s, u - s>, s = sigma(v).
template <class T, class D1, class D2>
T bregman_penalty(const ProxActivation<T>& act, const Eigen::MatrixBase<D1>& u,
                  const Eigen::MatrixBase<D2>& v) {
  require(u.rows() == v.rows() && u.cols() == v.cols(), "bregman_penalty: dimension mismatch");
  const T pu = act.psi(u);
  if (is_infinite(pu)) return infinity<T>();
  const auto s = act.prox(v);
  const auto r = (u - s).eval();
  const T val = T(0.5) * r.squaredNorm() + pu - act.psi(s) - ((v - s).array() * r.array()).sum();
  return std::max(val, T(0));
}

template <class T, class D1, class D2>
typename D1::PlainObject bregman_grad_v(const ProxActivation<T>& act,
                                        const Eigen::MatrixBase<D1>& u,
                                        const Eigen::MatrixBase<D2>& v) {
  require(u.rows() == v.rows() && u.cols() == v.cols(), "bregman_grad_v: dimension mismatch");
  return act.prox(v) - u;
}

template <class T, class D1, class D2>
typename D1::PlainObject bregman_smooth_grad_u(const ProxActivation<T>&,
                                               const Eigen::MatrixBase<D1>& u,
                                               const Eigen::MatrixBase<D2>& v) {
  require(u.rows() == v.rows() && u.cols() == v.cols(),
          "bregman_smooth_grad_u: dimension mismatch");
  return u - v;
}

template <class D1, class D2>
typename D1::Scalar fenchel_penalty_relu(const Eigen::MatrixBase<D1>& u,
                                         const Eigen::MatrixBase<D2>& v) {
  using T = typename D1::Scalar;
  require(u.rows() == v.rows() && u.cols() == v.cols(), "fenchel_penalty_relu: dimension mismatch");
  if ((u.array() < T(0)).any()) return infinity<T>();
  return T(0.5) * u.squaredNorm() + T(0.5) * v.cwiseMax(T(0)).squaredNorm() -
         (v.array() * u.array()).sum();
}

template <class T>
struct QuadraticPenalty {
  T value;
  Mat<T> grad_u;
  Mat<T> grad_v;
};

// 1/2|u - sigma(v)|^2 with partial gradients; the v-gradient uses sigma'.
template <class T, class D1, class D2>
QuadraticPenalty<T> quadratic_penalty(const ProxActivation<T>& act, const Eigen::MatrixBase<D1>& u,
                                      const Eigen::MatrixBase<D2>& v, bool want_grad_v = true) {
  require(u.rows() == v.rows() && u.cols() == v.cols(), "quadratic_penalty: dimension mismatch");
  QuadraticPenalty<T> out;
  out.grad_u = u - act.prox(v);
  out.value = T(0.5) * out.grad_u.squaredNorm();
  if (want_grad_v) out.grad_v = -(out.grad_u.array() * act.derivative(v).array()).matrix();
  return out;
}

}  // namespace liftnet
