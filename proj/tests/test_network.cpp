/*
 * test_network.cpp - block network tests
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

#include "liftnet/network.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace liftnet {
namespace {

using testing::randn;
using Act = ProxActivation<double>;
using Net = BlockNetwork<double>;
using Op = LinOp<double>;

Net random_mlp(const std::vector<Index>& dims, const Act& act, double scale = 0.5) {
  std::vector<Mat<double>> w;
  std::vector<Vec<double>> b;
  std::vector<Act> acts;
  for (std::size_t j = 1; j < dims.size(); ++j) {
    w.push_back(scale * randn(dims[j], dims[j - 1]) / std::sqrt(double(dims[j - 1])));
    b.push_back(0.1 * randn(dims[j]));
    acts.push_back(act);
  }
  const Index out = 3;
  return build_mlp<double>(dims, randn(out, dims.back()), randn(out), w, b, acts);
}

double max_abs(const Vec<double>& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

Vec<double> soft(const Vec<double>& v, double t) {
  Vec<double> r(v.size());
  for (Index i = 0; i < v.size(); ++i)
    r[i] = v[i] > t ? v[i] - t : (v[i] < -t ? v[i] + t : 0.0);
  return r;
}

// ------------------------------------------------------------- perceptron

TEST(Perceptron, IdentityActivationIsAffine) {
  Mat<double> w = randn(1, 4);
  Vec<double> b = randn(1);
  auto net = build_perceptron<double>(w, b, Act::identity());
  Vec<double> y = randn(4);
  EXPECT_NEAR(forward_sequential(net, y).output[0], (w * y + b)[0], 1e-14);
}

TEST(Perceptron, ReluExample) {
  auto net = build_perceptron<double>(Mat<double>::Identity(2, 2), Vec<double>::Zero(2), Act::relu());
  Vec<double> y(2);
  y << -1, 2;
  Vec<double> out = forward_block(net, y).output;
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 2.0);
}

TEST(Perceptron, BlockForwardMatchesFormula) {
  for (int t = 0; t < 5; ++t) {
    Mat<double> w = randn(5, 3);
    Vec<double> b = randn(5);
    auto net = build_perceptron<double>(w, b, Act::relu());
    Vec<double> y = randn(3);
    Vec<double> direct = (w * y + b).cwiseMax(0.0);
    EXPECT_LE(max_abs(forward_block(net, y).output - direct), 1e-13);
  }
}

TEST(Perceptron, ShapeMismatchThrows) {
  EXPECT_THROW(build_perceptron<double>(randn(3, 2), randn(2), Act::relu()), ContractViolation);
}

// ---------------------------------------------------------------- shallow

TEST(Shallow, SingleIdentityUnit) {
  Vec<double> one = Vec<double>::Ones(1), zero = Vec<double>::Zero(1);
  auto net = build_shallow<double>(one, one, zero, {Act::identity()});
  Vec<double> y(1);
  y << -3.25;
  EXPECT_EQ(forward_sequential(net, y).output[0], -3.25);
}

TEST(Shallow, SymmetricPairCancels) {
  Vec<double> c(2), w(2);
  c << 1, -1;
  w << 1, 1;
  auto net = build_shallow<double>(c, w, Vec<double>::Zero(2), {Act::relu(), Act::relu()});
  for (double v : {-2.0, 0.0, 0.5, 7.0}) {
    Vec<double> y = Vec<double>::Constant(1, v);
    EXPECT_EQ(forward_sequential(net, y).output[0], 0.0);
  }
}

TEST(Shallow, MatchesDirectSum) {
  const Index J = 6;
  Vec<double> c = randn(J), w = randn(J), b = randn(J);
  std::vector<Act> acts;
  for (Index j = 0; j < J; ++j) acts.push_back(j % 2 ? Act::relu() : Act::tanh());
  auto net = build_shallow<double>(c, w, b, acts);
  EXPECT_EQ(net.waves.size(), 1u);
  for (double v : {-1.3, 0.2, 0.9}) {
    double direct = 0;
    for (Index j = 0; j < J; ++j) {
      const double a = w[j] * v + b[j];
      direct += c[j] * (j % 2 ? std::max(a, 0.0) : std::tanh(a));
    }
    Vec<double> y = Vec<double>::Constant(1, v);
    EXPECT_NEAR(forward_block(net, y).output[0], direct, 1e-12);
  }
}

TEST(Shallow, LengthMismatchThrows) {
  EXPECT_THROW(build_shallow<double>(randn(2), randn(3), randn(2), {Act::relu(), Act::relu()}),
               ContractViolation);
}

// -------------------------------------------------------------------- mlp

TEST(Mlp, BlockShapes) {
  auto net = random_mlp({4, 3, 2}, Act::relu());
  EXPECT_EQ(net.W.rows(), 5);
  EXPECT_EQ(net.W.cols(), 9);
  EXPECT_EQ(net.M.rows(), 5);
  EXPECT_EQ(net.M.cols(), 9);
  EXPECT_EQ(net.K.rows(), 3);
  EXPECT_EQ(net.K.cols(), 9);
  EXPECT_TRUE(net.aux_selector);
  EXPECT_TRUE(is_dense_chain(net));
  RowMat<double> m = materialize(net.M);
  RowMat<double> expected = RowMat<double>::Zero(5, 9);
  expected.rightCols(5).setIdentity();
  EXPECT_EQ(m, expected);
}

TEST(Mlp, OneLayerReducesToPerceptron) {
  Mat<double> w = randn(3, 4);
  Vec<double> b = randn(3);
  auto mlp = build_mlp<double>({4, 3}, Mat<double>::Identity(3, 3), Vec<double>::Zero(3), {w}, {b},
                               {Act::relu()});
  auto per = build_perceptron<double>(w, b, Act::relu());
  Vec<double> y = randn(4);
  EXPECT_EQ(forward_sequential(mlp, y).output, forward_sequential(per, y).output);
}

TEST(Mlp, BlockEqualsSequential) {
  auto net = random_mlp({6, 5, 4, 5, 3}, Act::relu());
  for (int t = 0; t < 4; ++t) {
    Vec<double> y = randn(6);
    auto s = forward_sequential(net, y);
    auto b = forward_block(net, y);
    EXPECT_LE(max_abs(s.u - b.u), 1e-12);
    EXPECT_LE(max_abs(s.output - b.output), 1e-12);
  }
}

TEST(Mlp, ShapeMismatchThrows) {
  EXPECT_THROW(build_mlp<double>({4, 3}, randn(2, 3), randn(2), {randn(3, 5)}, {randn(3)},
                                 {Act::relu()}),
               ContractViolation);
}

TEST(Forward, ReluIdentityExample) {
  auto net = build_mlp<double>({2, 2}, Mat<double>::Identity(2, 2), Vec<double>::Zero(2),
                               {Mat<double>::Identity(2, 2)}, {Vec<double>::Zero(2)}, {Act::relu()});
  Vec<double> y(2);
  y << -1, 2;
  Vec<double> out = forward_sequential(net, y).output;
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 2.0);
}

TEST(Forward, IdentityChainMatchesMatrixProduct) {
  std::vector<Index> dims{5, 4, 6, 3};
  std::vector<Mat<double>> w;
  std::vector<Vec<double>> b;
  for (std::size_t j = 1; j < dims.size(); ++j) {
    w.push_back(randn(dims[j], dims[j - 1]));
    b.push_back(randn(dims[j]));
  }
  Mat<double> K = randn(2, 3);
  Vec<double> d = randn(2);
  auto net = build_mlp<double>(dims, K, d, w, b, {Act::identity(), Act::identity(), Act::identity()});
  Vec<double> y = randn(5);
  Vec<double> oracle = K * (w[2] * (w[1] * (w[0] * y + b[0]) + b[1]) + b[2]) + d;
  EXPECT_LE(max_abs(forward_sequential(net, y).output - oracle), 1e-12);
}

TEST(Forward, Float32BlockIsBitIdenticalForSixteenLayers) {
  std::vector<Index> dims(17, 24);
  std::vector<Mat<float>> w;
  std::vector<Vec<float>> b;
  std::vector<ProxActivation<float>> acts;
  for (int j = 0; j < 16; ++j) {
    w.push_back(randn<float>(24, 24) * 0.25f);
    b.push_back(randn<float>(24) * 0.1f);
    acts.push_back(ProxActivation<float>::relu());
  }
  auto net = build_mlp<float>(dims, randn<float>(10, 24), randn<float>(10), w, b, acts);
  for (int t = 0; t < 8; ++t) {
    Vec<float> y = randn<float>(24);
    auto s = forward_sequential(net, y);
    auto k = forward_block(net, y);
    EXPECT_EQ((s.u - k.u).cwiseAbs().maxCoeff(), 0.0f);
    EXPECT_EQ((s.output - k.output).cwiseAbs().maxCoeff(), 0.0f);
  }
}

// ----------------------------------------------------------------- resnet

struct ResnetParts {
  std::vector<Mat<double>> w, v;
  std::vector<double> h;
  std::vector<Vec<double>> b;
  std::vector<Act> acts;
  Mat<double> K;
  Vec<double> d;
};

ResnetParts resnet_parts(Index m, std::size_t J) {
  ResnetParts p;
  for (std::size_t j = 0; j < J; ++j) {
    const Index n = 3 + Index(j % 3);
    p.w.push_back(randn(n, m));
    p.v.push_back(randn(m, n));
    p.h.push_back(0.1 + 0.05 * double(j));
    p.b.push_back(randn(n));
    p.acts.push_back(j % 2 ? Act::tanh() : Act::relu());
  }
  p.K = randn(2, m);
  p.d = randn(2);
  return p;
}

Net make_resnet(Index m, std::size_t J, const ResnetParts& p) {
  return build_resnet<double>(m, J, p.w, p.v, p.h, p.b, p.acts, p.K, p.d);
}

TEST(Resnet, ConstraintShape) {
  auto p = resnet_parts(3, 2);
  auto net = make_resnet(3, 2, p);
  EXPECT_EQ(net.M.rows(), 6);
  EXPECT_EQ(net.M.cols(), 9);
  EXPECT_FALSE(net.aux_selector);
  RowMat<double> m = materialize(net.M);
  for (Index i = 0; i < 6; ++i) {
    EXPECT_EQ(m(i, i), -1.0);
    EXPECT_EQ(m(i, i + 3), 1.0);
  }
}

TEST(Resnet, ZeroResidualMapsGiveSkipOnly) {
  auto p = resnet_parts(4, 3);
  for (auto& v : p.v) v.setZero();
  auto net = make_resnet(4, 3, p);
  Vec<double> y = randn(4);
  EXPECT_LE(max_abs(forward_sequential(net, y).output - (p.K * y + p.d)), 1e-14);
}

TEST(Resnet, ZeroStepMatchesZeroMaps) {
  auto p = resnet_parts(4, 3);
  for (auto& h : p.h) h = 0.0;
  auto net = make_resnet(4, 3, p);
  Vec<double> y = randn(4);
  EXPECT_LE(max_abs(forward_block(net, y).output - (p.K * y + p.d)), 1e-14);
}

TEST(Resnet, MatchesDirectLoop) {
  auto p = resnet_parts(4, 3);
  auto net = make_resnet(4, 3, p);
  Vec<double> y = randn(4);
  Vec<double> u = y;
  for (std::size_t j = 0; j < 3; ++j) {
    Vec<double> a = p.w[j] * u + p.b[j];
    Vec<double> s = j % 2 ? Vec<double>(a.array().tanh()) : Vec<double>(a.cwiseMax(0.0));
    u = u + p.h[j] * p.v[j] * s;
  }
  EXPECT_LE(max_abs(forward_sequential(net, y).output - (p.K * u + p.d)), 1e-12);
}

TEST(Resnet, BlockEqualsSequentialEightBlocks) {
  auto p = resnet_parts(5, 8);
  auto net = make_resnet(5, 8, p);
  Vec<double> y = randn(5);
  auto s = forward_sequential(net, y);
  auto b = forward_block(net, y);
  EXPECT_LE(max_abs(s.u - b.u), 1e-12);
  EXPECT_LE(max_abs(s.output - b.output), 1e-12);
}

// ------------------------------------------------------------------ lista

TEST(Lista, IdentityTwoLayerReturnsInput) {
  auto I = Op::identity(5);
  auto net = build_lista<double>(I, {I, I}, 0.5, 0.1, 2);
  Vec<double> y = randn(5);
  EXPECT_LE(max_abs(forward_sequential(net, y).output - y), 1e-15);
}

TEST(Lista, RejectsShallowDepth) {
  auto I = Op::identity(3);
  EXPECT_THROW(build_lista<double>(I, {I}, 0.5, 0.1, 1), ContractViolation);
}

TEST(Lista, WarnsOnLargeStep) {
  auto I = Op::identity(3);
  auto net = build_lista<double>(I, {I, I, I}, 2.0, 0.1, 3);
  EXPECT_FALSE(net.warnings.empty());
  auto ok = build_lista<double>(I, {I, I, I}, 0.5, 0.1, 3);
  EXPECT_TRUE(ok.warnings.empty());
}

struct IstaProblem {
  Op H, L;
  Mat<double> HL;
  double gamma, lambda;
};

IstaProblem ista_problem() {
  Mat<double> h = randn(6, 8), l = randn(8, 10) / 3.0;
  IstaProblem p{Op::dense(h), Op::dense(l), h * l, 0.0, 0.2};
  const double n = operator_norm(Op::dense(p.HL), 1e-13, 100000).value;
  p.gamma = 0.9 / (n * n);
  return p;
}

TEST(Lista, ExactInitMatchesIstaIterates) {
  auto p = ista_problem();
  const std::size_t J = 8;
  auto net = build_lista<double>(p.H, std::vector<Op>(J, p.L), p.gamma, p.lambda, J,
                                 ListaOptions{true});
  Vec<double> y = randn(6);
  auto tr = forward_sequential(net, y);
  Vec<double> u = Vec<double>::Zero(10);
  for (std::size_t j = 1; j < J; ++j) {
    u = soft(u - p.gamma * p.HL.transpose() * (p.HL * u - y), p.gamma * p.lambda);
    const Index off = net.layout.offset(j);
    EXPECT_LE(max_abs(tr.u.segment(off, 10) - u), 1e-12) << "depth " << j;
  }
}

TEST(Lista, ObjectiveNonIncreasingWithDepth) {
  auto p = ista_problem();
  const std::size_t J = 12;
  auto net = build_lista<double>(p.H, std::vector<Op>(J, p.L), p.gamma, p.lambda, J,
                                 ListaOptions{true});
  Vec<double> y = randn(6);
  auto tr = forward_block(net, y);
  double prev = 0.5 * y.squaredNorm();
  for (std::size_t j = 1; j < J; ++j) {
    Vec<double> u = tr.u.segment(net.layout.offset(j), 10);
    const double f = 0.5 * (p.HL * u - y).squaredNorm() + p.lambda * u.lpNorm<1>();
    EXPECT_LE(f, prev + 1e-12);
    prev = f;
  }
}

TEST(Lista, ZeroThresholdIsAffine) {
  auto p = ista_problem();
  auto net = build_lista<double>(p.H, std::vector<Op>(5, p.L), p.gamma, 0.0, 5);
  Vec<double> y1 = randn(6), y2 = randn(6);
  const double a = 0.3, b = -1.7;
  Vec<double> lhs = forward_sequential(net, Vec<double>(a * y1 + b * y2)).output;
  Vec<double> rhs = a * forward_sequential(net, y1).output + b * forward_sequential(net, y2).output;
  EXPECT_LE(max_abs(lhs - rhs), 1e-11);
}

TEST(Lista, TraceIsSoftShrinkOfPreactivations) {
  auto p = ista_problem();
  auto net = build_lista<double>(p.H, std::vector<Op>(4, p.L), p.gamma, p.lambda, 4);
  auto tr = forward_sequential(net, randn(6));
  for (std::size_t r = 1; r < net.depth(); ++r) {
    const Index off = net.aux_layout.offset(r), n = net.aux_layout.size(r);
    EXPECT_EQ(tr.z.segment(off, n), soft(tr.a.segment(off, n), p.gamma * p.lambda));
  }
}

// ------------------------------------------------------------ unrolled pd

TEST(UnrolledPd, ZeroDepthIsAdjoint) {
  Mat<double> h = randn(4, 6);
  auto net = build_unrolled_pd<double>(Op::dense(h), {}, {}, {}, 0.1, Act::relu(), 0);
  Vec<double> y = randn(4);
  EXPECT_LE(max_abs(forward_sequential(net, y).output - h.transpose() * y), 1e-14);
}

TEST(UnrolledPd, MatchesDirectIteration) {
  const std::size_t J = 20;
  Mat<double> h = randn(5, 7) / 3.0;
  std::vector<Mat<double>> ls;
  std::vector<Op> L;
  std::vector<double> g, t;
  for (std::size_t j = 0; j < J; ++j) {
    ls.push_back(randn(6, 7) / 4.0);
    L.push_back(Op::dense(ls.back()));
    g.push_back(0.4 + 0.01 * double(j));
    t.push_back(0.3 - 0.005 * double(j));
  }
  const double lambda = 0.15;
  auto C = Act::interval_proj(1.0);
  auto net = build_unrolled_pd<double>(Op::dense(h), L, g, t, lambda, C, J);
  EXPECT_EQ(net.waves.size(), 2 * J + 1);
  Vec<double> y = randn(5);
  Vec<double> x = h.transpose() * y, u = Vec<double>::Zero(6);
  for (std::size_t j = 0; j < J; ++j) {
    Vec<double> un = (u + g[j] * ls[j] * x).cwiseMax(-lambda).cwiseMin(lambda);
    x = (x - t[j] * h.transpose() * (h * x) - t[j] * ls[j].transpose() * (2 * un - u) +
         t[j] * h.transpose() * y)
            .cwiseMax(-1.0)
            .cwiseMin(1.0);
    u = un;
  }
  auto s = forward_sequential(net, y);
  auto b = forward_block(net, y);
  EXPECT_LE(max_abs(s.output - x), 1e-12);
  EXPECT_LE(max_abs(b.output - x), 1e-12);
}

// -------------------------------------------------------------- residuals

TEST(Residuals, VanishOnForwardTracesOfEveryBuilder) {
  std::vector<Net> nets;
  nets.push_back(random_mlp({4, 5, 3}, Act::tanh()));
  auto rp = resnet_parts(3, 4);
  nets.push_back(make_resnet(3, 4, rp));
  nets.push_back(build_shallow<double>(randn(3), randn(3), randn(3),
                                       {Act::relu(), Act::tanh(), Act::identity()}));
  auto p = ista_problem();
  nets.push_back(build_lista<double>(p.H, std::vector<Op>(4, p.L), p.gamma, p.lambda, 4));
  Mat<double> h = randn(4, 5);
  nets.push_back(build_unrolled_pd<double>(Op::dense(h), {Op::dense(randn(3, 5)), Op::dense(randn(3, 5))},
                                           {0.3, 0.3}, {0.2, 0.2}, 0.1, Act::relu(), 2));
  for (const auto& net : nets) {
    Vec<double> y = randn(net.input_dim());
    for (auto tr : {forward_sequential(net, y), forward_block(net, y)}) {
      auto [r1, r2] = constraint_residuals(net, tr);
      EXPECT_LE(max_abs(r1), 1e-12) << net.builder;
      EXPECT_LE(max_abs(r2), 1e-12) << net.builder;
    }
  }
}

TEST(Residuals, PerturbationIsDetected) {
  auto net = random_mlp({4, 5, 3}, Act::tanh());
  auto tr = forward_sequential(net, randn(4));
  tr.u[6] += 1e-3;
  auto [r1, r2] = constraint_residuals(net, tr);
  EXPECT_GT(r1.norm() + r2.norm(), 0.0);
}

TEST(Residuals, HandBuiltInfeasibleTrace) {
  Mat<double> w(2, 2);
  w << 1, 2, -1, 0.5;
  Vec<double> b(2);
  b << 0.5, -0.25;
  auto net = build_perceptron<double>(w, b, Act::relu());
  Vec<double> u(4), z(2);
  u << 1, 1, 3, 4;
  z << 3, 4;
  auto [r1, r2] = constraint_residuals(net, u, z);
  EXPECT_EQ(max_abs(r1), 0.0);
  // W y + b = (3.5, -0.75), relu -> (3.5, 0).
  EXPECT_EQ(r2[0], 3 - 3.5);
  EXPECT_EQ(r2[1], 4.0);
}

// ---------------------------------------------------------------- backprop

TEST(Backprop, LinearLeastSquaresKGradient) {
  std::vector<Index> dims{3, 4};
  Mat<double> w = randn(4, 3), K = randn(2, 4);
  Vec<double> b = randn(4), d = randn(2);
  auto net = build_mlp<double>(dims, K, d, {w}, {b}, {Act::identity()});
  Vec<double> y = randn(3), x = randn(2);
  auto g = backprop_grad(net, y, x);
  Vec<double> last = w * y + b;
  Mat<double> expected = (K * last + d - x) * last.transpose();
  EXPECT_LE((g.at({ParamKey::Block::K, 0, 1}) - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((g.at({ParamKey::Block::d, 0, 0}).col(0) - (K * last + d - x)).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(Backprop, MatchesFiniteDifferences) {
  auto net = random_mlp({4, 5, 3, 4}, Act::tanh(), 1.0);
  Mat<double> Y = randn(4, 3), X = randn(3, 3);
  auto g = backprop_grad_batch(net, Y, X);
  auto loss = [&](const Net& n) {
    return 0.5 * (forward_sequential_batch(n, Y).output - X).squaredNorm();
  };
  auto params = get_params(net);
  const double h = 1e-6;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat<double>& v = params.values[i];
    for (Index e = 0; e < v.size(); e += 3) {
      const double orig = v.data()[e];
      v.data()[e] = orig + h;
      const double fp = loss(with_params(net, params));
      v.data()[e] = orig - h;
      const double fm = loss(with_params(net, params));
      v.data()[e] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double an = g.values[i].data()[e];
      EXPECT_LE(std::abs(fd - an), 1e-6 * std::max(1.0, std::abs(fd))) << params.keys[i].name();
    }
  }
}

TEST(Backprop, ZeroResidualGivesZeroGradient) {
  auto net = random_mlp({4, 5, 3}, Act::relu());
  Vec<double> y = randn(4);
  Vec<double> x = forward_sequential(net, y).output;
  auto g = backprop_grad(net, y, x);
  for (const auto& v : g.values) EXPECT_EQ(v.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backprop, SequentialEqualsBlockOrder) {
  std::vector<Net> nets;
  nets.push_back(random_mlp({6, 5, 4, 5}, Act::relu()));
  auto rp = resnet_parts(4, 5);
  nets.push_back(make_resnet(4, 5, rp));
  Mat<double> h = randn(4, 5);
  nets.push_back(build_unrolled_pd<double>(Op::dense(h), {Op::dense(randn(3, 5)), Op::dense(randn(3, 5))},
                                           {0.3, 0.3}, {0.2, 0.2}, 0.1, Act::relu(), 2));
  for (const auto& net : nets) {
    Mat<double> Y = randn(net.input_dim(), 4), X = randn(net.output_dim(), 4);
    auto gs = backprop_grad_batch(net, Y, X, EvalOrder::sequential);
    auto gb = backprop_grad_batch(net, Y, X, EvalOrder::block);
    ASSERT_EQ(gs.size(), gb.size());
    for (std::size_t i = 0; i < gs.size(); ++i)
      EXPECT_LE((gs.values[i] - gb.values[i]).cwiseAbs().maxCoeff(), 1e-10)
          << net.builder << " " << gs.keys[i].name();
  }
}

TEST(Params, RoundTripThroughWithParams) {
  auto net = random_mlp({4, 5, 3}, Act::relu());
  auto p = get_params(net);
  EXPECT_EQ(p.size(), 6u);  // K, W1, W2, b1, b2, d
  for (auto& v : p.values) v *= 2.0;
  auto net2 = with_params(net, p);
  auto p2 = get_params(net2);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p.values[i], p2.values[i]);
  EXPECT_TRUE(is_dense_chain(net2));
}

}  // namespace
}  // namespace liftnet
