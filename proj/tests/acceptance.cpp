/*
 * acceptance.cpp - acceptance criteria runner
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

#include "liftnet/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>

#include "test_util.hpp"

namespace liftnet {
namespace {

using testing::randn;
using testing::uniform;
using Act = ProxActivation<double>;
using Net = BlockNetwork<double>;
using Op = LinOp<double>;

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  // Summary shown on success only.
  void note(const std::string& s) {
    if (pass) measured(s);
  }
  void measured(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double max_abs(const Mat<double>& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("liftnet_accept_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

Vec<double> soft(const Vec<double>& v, double t) {
  Vec<double> r(v.size());
  for (Index i = 0; i < v.size(); ++i) r[i] = v[i] > t ? v[i] - t : (v[i] < -t ? v[i] + t : 0.0);
  return r;
}

template <class T>
BlockNetwork<T> random_mlp(std::size_t J, Index width, std::mt19937_64& g) {
  std::vector<Index> dims(J + 1, width);
  std::vector<Mat<T>> w;
  std::vector<Vec<T>> b;
  for (std::size_t j = 0; j < J; ++j) {
    w.push_back((randn(width, width, g) / std::sqrt(double(width))).cast<T>());
    b.push_back((0.1 * randn(width, g)).cast<T>());
  }
  return build_mlp<T>(dims, randn(4, width, g).cast<T>(), randn(4, g).cast<T>(), w, b,
                      std::vector<ProxActivation<T>>(J, ProxActivation<T>::relu()));
}

// ------------------------------------------------------------ criteria

Outcome block_sequential_equivalence() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 g(101);
  double worst64 = 0;
  for (std::size_t J : {1, 2, 4, 8, 16, 32}) {
    auto nf = random_mlp<float>(J, 24, g);
    auto nd = random_mlp<double>(J, 24, g);
    for (int t = 0; t < 4; ++t) {
      Vec<float> yf = randn(24, g).cast<float>();
      auto s = forward_sequential(nf, yf), b = forward_block(nf, yf);
      const bool eq = s.output == b.output && s.u == b.u && s.z == b.z && s.a == b.a;
      o.check(eq, "f32 mismatch at J=" + std::to_string(J));
      Vec<double> yd = randn(24, g);
      auto sd = forward_sequential(nd, yd), bd = forward_block(nd, yd);
      worst64 = std::max({worst64, max_abs(sd.output - bd.output), max_abs(sd.u - bd.u), max_abs(sd.z - bd.z)});
    }
  }
  const double secs = seconds_since(t0);
  o.check(worst64 <= 1e-12, "f64 mismatch " + num(worst64));
  o.check(secs < 5, "runtime " + num(secs) + " s");
  o.note("f32 exact, f64 max diff " + num(worst64) + ", " + num(secs) + " s");
  return o;
}

Vec<double> fd_grad_v(const Act& act, const Vec<double>& u, const Vec<double>& v, double h) {
  Vec<double> g(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    Vec<double> vp = v, vm = v;
    vp[i] += h;
    vm[i] -= h;
    g[i] = (bregman_penalty(act, u, vp) - bregman_penalty(act, u, vm)) / (2 * h);
  }
  return g;
}

Outcome bregman_gradient_identity() {
  Outcome o;
  std::mt19937_64 g(202);
  double worst = 0;
  for (const Act& act : {Act::relu(), Act::soft_shrink(1.0)}) {
    const bool relu = act.kind() == ActKind::relu;
    const double kink = relu ? 0.0 : 1.0;
    for (int t = 0; t < 1000; ++t) {
      Vec<double> v = uniform(8, -2, 2, g);
      Vec<double> u = uniform(8, relu ? 0.0 : -2.0, 2, g);
      if (t % 4 == 0) v[t % 8] = (t % 8 < 4) ? kink : -kink;
      const Vec<double> identity = act.prox(v) - u;
      worst = std::max(worst, max_abs(identity - fd_grad_v(act, u, v, 1e-6)));
    }
  }
  o.check(worst <= 1e-5, "max deviation " + num(worst));
  o.measured("max deviation " + num(worst));
  return o;
}

Outcome fenchel_bregman_relu() {
  Outcome o;
  std::mt19937_64 g(303);
  auto act = Act::relu();
  double worst = 0;
  int disagree = 0;
  for (int t = 0; t < 10000; ++t) {
    Vec<double> u = uniform(6, 0, 2, g), v = uniform(6, -2, 2, g);
    if (t % 3 == 0) u[t % 6] = 0.0;
    const double f = fenchel_penalty_relu(u, v), b = bregman_penalty(act, u, v);
    if (is_infinite(f) || is_infinite(b))
      ++disagree;
    else
      worst = std::max(worst, std::abs(f - b));
  }
  for (int t = 0; t < 1000; ++t) {
    Vec<double> u = uniform(6, 0, 2, g), v = uniform(6, -2, 2, g);
    u[t % 6] = -uniform(1, 1e-12, 1, g)[0];
    if (is_infinite(fenchel_penalty_relu(u, v)) != is_infinite(bregman_penalty(act, u, v)) ||
        !is_infinite(bregman_penalty(act, u, v)))
      ++disagree;
  }
  o.check(worst <= 1e-10, "max gap " + num(worst));
  o.check(disagree == 0, std::to_string(disagree) + " domain disagreements");
  o.measured("max gap " + num(worst));
  return o;
}

Outcome ista_lista_oracle() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 g(404);
  const Mat<double> h = randn(6, 8, g), l = randn(8, 8, g) / 3.0, hl = h * l;
  const double n = operator_norm(Op::dense(hl), 1e-13, 100000).value;
  const double gamma = 0.9 / (n * n), lambda = 0.2;
  const std::size_t J = 31;
  auto net = build_lista<double>(Op::dense(h), std::vector<Op>(J, Op::dense(l)), gamma, lambda, J,
                                 ListaOptions{true});
  const Vec<double> y = randn(6, g);
  const auto tr = forward_sequential(net, y);
  Vec<double> u = Vec<double>::Zero(8);
  double worst = 0;
  for (std::size_t j = 1; j < J; ++j) {
    u = soft(u - gamma * hl.transpose() * (hl * u - y), gamma * lambda);
    worst = std::max(worst, max_abs(tr.u.segment(net.layout.offset(j), 8) - u));
  }
  o.check(worst <= 1e-12, "LISTA vs ISTA " + num(worst));

  const std::size_t depth = 201;
  auto I = Op::identity(1);
  auto fixed = build_lista<double>(I, std::vector<Op>(depth, I), 0.5, 0.5, depth, ListaOptions{true});
  const double x = forward_sequential(fixed, Vec<double>(Vec<double>::Constant(1, 2.0))).output[0];
  o.check(std::abs(x - 1.5) <= 1e-8, "fixed point " + num(x));
  const double secs = seconds_since(t0);
  o.check(secs < 5, "runtime " + num(secs) + " s");
  o.measured("iterate diff " + num(worst) + ", fixed point error " + num(std::abs(x - 1.5)));
  return o;
}

// One primal-dual step for min 1/2|Hx - y|^2 + lambda|Lx|_1 over |x| <= 1.
void condat_vu_step(const Mat<double>& h, const Mat<double>& l, const Vec<double>& y, double gj, double tj,
                    double lambda, Vec<double>& x, Vec<double>& u) {
  Vec<double> un = (u + gj * l * x).cwiseMax(-lambda).cwiseMin(lambda);
  x = (x - tj * h.transpose() * (h * x) - tj * l.transpose() * (2 * un - u) + tj * h.transpose() * y)
          .cwiseMax(-1.0)
          .cwiseMin(1.0);
  u = un;
}

Outcome condat_vu_oracle() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 g(505);
  const std::size_t J = 20;
  const Mat<double> h = randn(5, 7, g) / 3.0;
  std::vector<Mat<double>> ls;
  std::vector<Op> L;
  std::vector<double> gs, ts;
  for (std::size_t j = 0; j < J; ++j) {
    ls.push_back(randn(6, 7, g) / 4.0);
    L.push_back(Op::dense(ls.back()));
    gs.push_back(0.4 + 0.01 * double(j));
    ts.push_back(0.3 - 0.005 * double(j));
  }
  const double lambda = 0.15;
  auto net = build_unrolled_pd<double>(Op::dense(h), L, gs, ts, lambda, Act::interval_proj(1.0), J);
  const Vec<double> y = randn(5, g);
  Vec<double> x = h.transpose() * y, u = Vec<double>::Zero(6);
  for (std::size_t j = 0; j < J; ++j) condat_vu_step(h, ls[j], y, gs[j], ts[j], lambda, x, u);
  const double d1 = max_abs(forward_sequential(net, y).output - x);
  const double d2 = max_abs(forward_block(net, y).output - x);
  o.check(std::max(d1, d2) <= 1e-12, "unrolled vs direct " + num(std::max(d1, d2)));

  // Fixed operator and steps satisfying 1/t - g|L|^2 >= |H|^2/2.
  const Mat<double>& l = ls[0];
  const double nh = operator_norm(Op::dense(h), 1e-13, 100000).value;
  const double nl = operator_norm(Op::dense(l), 1e-13, 100000).value;
  const double gc = 0.5, tc = 0.9 / (0.5 * nh * nh + gc * nl * nl);
  auto objective = [&](const Vec<double>& v) {
    return 0.5 * (h * v - y).squaredNorm() + lambda * (l * v).lpNorm<1>();
  };
  x = h.transpose() * y;
  u = Vec<double>::Zero(6);
  double at_1e4 = 0, best = infinity<double>();
  for (int k = 1; k <= 100000; ++k) {
    condat_vu_step(h, l, y, gc, tc, lambda, x, u);
    const double f = objective(x);
    best = std::min(best, f);
    if (k == 10000) at_1e4 = f;
  }
  o.check(at_1e4 - best <= 1e-6, "objective gap " + num(at_1e4 - best));
  const double secs = seconds_since(t0);
  o.check(secs < 30, "runtime " + num(secs) + " s");
  o.measured("unrolled diff " + num(std::max(d1, d2)) + ", gap at 1e4 " + num(at_1e4 - best));
  return o;
}

Net smooth_mlp(std::mt19937_64& g, const std::vector<Act>& acts) {
  const std::vector<Index> dims{4, 6, 5, 3};
  std::vector<Mat<double>> w;
  std::vector<Vec<double>> b;
  for (std::size_t j = 1; j < dims.size(); ++j) {
    w.push_back(randn(dims[j], dims[j - 1], g) / std::sqrt(double(dims[j - 1])));
    b.push_back(0.2 * randn(dims[j], g));
  }
  return build_mlp<double>(dims, randn(3, 3, g) / std::sqrt(3.0), 0.1 * randn(3, g), w, b, acts);
}

Outcome bcd_monotonicity() {
  Outcome o;
  std::mt19937_64 g(606);
  auto net = smooth_mlp(g, std::vector<Act>(3, Act::tanh()));
  const Mat<double> y = randn(4, 8, g), x = randn(3, 8, g);
  const Mat<double> z = init_aux(net, y, AuxInit::gaussian, 3);
  BcdOptions<double> opt;
  opt.sweeps = 20;
  auto r = bcd_solve(PenaltyStrategy<double>::mac_qp(0.5), net, y, x, z, get_params(net), 2.0, opt);
  o.check(r.objective.size() == 21u, "expected 21 objective values");
  int increases = 0;
  for (std::size_t k = 1; k < r.objective.size(); ++k)
    if (r.objective[k] > r.objective[k - 1] * (1 + 1e-12)) ++increases;
  o.check(increases == 0, std::to_string(increases) + " increasing sweeps");
  o.measured(num(r.objective.front()) + " -> " + num(r.objective.back()) + " over 20 sweeps");
  return o;
}

Outcome derivative_freeness() {
  Outcome o;
  std::mt19937_64 g(707);
  auto net = smooth_mlp(g, std::vector<Act>(3, Act::poisoned(Act::relu())));
  const Mat<double> y = randn(4, 10, g), x = randn(3, 10, g).cwiseAbs();
  TrainConfig<double> cfg;
  cfg.mu = {0.5};
  cfg.steps = 200;
  cfg.lr_theta = 1e-2;
  cfg.lr_z = 1e-2;
  cfg.log_every = 50;
  bool bregman_clean = true;
  try {
    train_lifted_bregman(net, y, x, cfg);
  } catch (const PoisonedDerivative&) {
    bregman_clean = false;
  }
  o.check(bregman_clean, "derivative invoked during lifted Bregman training");
  bool macqp_faults = false;
  try {
    const Mat<double> z = init_aux(net, y, AuxInit::forward);
    linearized_bcd_step(PenaltyStrategy<double>::mac_qp(1.0), net, y, x, z, get_params(net), 1.0, 0.1, 0.1);
  } catch (const PoisonedDerivative&) {
    macqp_faults = true;
  }
  o.check(macqp_faults, "MAC-QP linearised step did not touch the derivative");
  o.note("Bregman path clean, MAC-QP faults");
  return o;
}

Outcome desk_scale_denoising() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const std::string setting =
      "task = train\ndata.source = synth\ndata.train = 200\ndata.val = 50\ndata.size = 16\n"
      "task.degradation = denoise\ntask.noise_sigma = 0.15\narch.layers = 3\narch.hidden = 64\n"
      "arch.activation = soft_shrink\narch.lambda = 0.2\ntrain.mu = 5e-3\ntrain.optimizer = adam\n"
      "train.lr = 1e-3\ntrain.lr_z = 1e-3\ntrain.steps = 2000\ntrain.log_every = 100\n";
  cli::RunConfig lifted = cli::RunConfig::parse(setting + "train.strategy = bregman\n");
  cli::RunConfig conv = cli::RunConfig::parse(setting + "train.strategy = conventional\n");
  lifted.resolve();
  conv.resolve();
  const auto a = cli::run_training<double>(lifted);
  const auto b = cli::run_training<double>(conv);
  const double f0 = a.result.metrics.front().objective, f1 = a.result.metrics.back().objective;
  o.check(f1 <= 0.5 * f0, "objective " + num(f0) + " -> " + num(f1));
  o.check(a.final_psnr > a.observed_psnr,
          "lifted PSNR " + num(a.final_psnr) + " dB not above noisy " + num(a.observed_psnr) + " dB");
  o.check(b.final_psnr < a.final_psnr,
          "conventional PSNR " + num(b.final_psnr) + " dB not below lifted " + num(a.final_psnr) + " dB");
  const double secs = seconds_since(t0);
  o.check(secs < 600, "runtime " + num(secs) + " s");
  o.measured("objective " + num(f0) + " -> " + num(f1) + ", PSNR noisy " + num(a.observed_psnr) + " lifted " +
         num(a.final_psnr) + " conventional " + num(b.final_psnr));
  return o;
}

// Chambolle-Pock for min 1/2|x - y|^2 + alpha|grad x|_{2,1}.
Vec<double> tv_denoise_reference(const Vec<double>& y, double alpha, Index h, Index w, int iters) {
  const Index n = h * w;
  const double tau = 0.25, sigma = 0.45;
  Vec<double> x = y, xbar = y, p = Vec<double>::Zero(2 * n);
  for (int k = 0; k < iters; ++k) {
    Vec<double> q = p + sigma * grad_forward_diff(xbar, h, w);
    for (Index i = 0; i < n; ++i) {
      const double r = std::hypot(q[i], q[n + i]) / alpha;
      if (r > 1) {
        q[i] /= r;
        q[n + i] /= r;
      }
    }
    p = q;
    Vec<double> xn = (x - tau * div_adjoint(p, h, w) + tau * y) / (1 + tau);
    xbar = 2 * xn - x;
    x = xn;
  }
  return x;
}

Vec<double> blocky_image(Index h, Index w) {
  Vec<double> x = Vec<double>::Zero(h * w);
  for (Index i = h / 4; i < 3 * h / 4; ++i)
    for (Index j = w / 4; j < 3 * w / 4; ++j) x[i * w + j] = 1.0;
  return x;
}

Outcome inversion_machinery() {
  Outcome o;
  std::mt19937_64 g(909);
  double adj = 0;
  for (int t = 0; t < 20; ++t) {
    const Index h = 2 + t % 6, w = 3 + t % 5;
    const Vec<double> x = randn(h * w, g), z = randn(2 * h * w, g);
    adj = std::max(adj, std::abs(grad_forward_diff(x, h, w).dot(z) - x.dot(div_adjoint(z, h, w))));
  }
  o.check(adj <= 1e-10, "adjointness " + num(adj));

  const Index h = 8, w = 8, n = h * w;
  const Vec<double> y = blocky_image(h, w) + 0.2 * randn(n, g);
  InversionProblem<double> p;
  p.layers.push_back({Op::identity(n), Vec<double>::Zero(n), Act::identity()});
  p.y = y;
  p.height = h;
  p.width = w;
  p.config.alpha = 0.15;
  p.config.tau_x = 1.0;
  auto st = resolve_steps(p);
  auto s = initial_state(p);
  double worst_norm = 0;
  for (int k = 0; k < 500; ++k) {
    pdhg_x_block(p, s, st, 1, 0.0);
    for (Index i = 0; i < n; ++i) worst_norm = std::max(worst_norm, std::hypot(s.z[i], s.z[n + i]));
  }
  o.check(worst_norm <= 1 + 1e-15, "dual norm " + num(worst_norm));

  InversionConfig<double> cfg;
  cfg.alpha = 0.15;
  cfg.tau_x = 1.0;
  cfg.pdhg_max_iter = 200000;
  cfg.pdhg_tol = 1e-13;
  const auto r = single_layer_invert<double>(Op::identity(n), Vec<double>::Zero(n), Act::identity(), y, h, w, cfg);
  const double tv_err = max_abs(r.x - tv_denoise_reference(y, 0.15, h, w, 100000));
  o.check(tv_err <= 1e-6, "TV denoiser mismatch " + num(tv_err));

  // Two layers with identity maps and tau_u = 1: the u update reduces to
  // soft((x + y) / 2, lambda kappa) and kappa must be 1/2.
  InversionProblem<double> q;
  const double lambda = 0.5;
  q.layers.push_back({Op::identity(4), Vec<double>::Zero(4), Act::soft_shrink(lambda)});
  q.layers.push_back({Op::identity(4), Vec<double>::Zero(4), Act::identity()});
  q.y = Vec<double>(4);
  q.y << 1.0, -0.5, 0.25, 2.0;
  q.height = 2;
  q.width = 2;
  q.config.tau_u = {1.0};
  auto qs = resolve_steps(q);
  auto qt = initial_state(q);
  qt.x << 0.5, 0.25, -1.0, 0.75;
  qt.u[0] << 0.125, -0.25, 0.5, 1.0;
  const Vec<double> got = prox_grad_u_block(q, qt, qs, 1);
  const Vec<double> want = soft((qt.x + q.y) / 2, lambda * 0.5);
  o.check(qs.tau_u[0] == 1.0 && got == want, "kappa(1) is not 1/2");
  o.measured("adjoint " + num(adj) + ", dual norm " + num(worst_norm) + ", TV diff " + num(tv_err));
  return o;
}

Outcome noise_decay() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const Index h = 8, w = 8, n = h * w, m = 32;
  std::mt19937_64 g(1010);
  const Mat<double> W = randn(m, n, g) / std::sqrt(double(n));
  const Vec<double> b = Vec<double>::Constant(m, 0.3);
  const auto act = Act::relu();
  const Vec<double> xt = blocky_image(h, w);
  const Vec<double> clean = act.prox(Vec<double>(W * xt + b));
  std::vector<double> medians;
  for (double delta : {0.1, 0.02, 0.004}) {
    std::vector<double> err;
    for (int seed = 0; seed < 20; ++seed) {
      std::mt19937_64 ng(5000 + seed);
      const Vec<double> y = (clean + delta * randn(m, ng)).cwiseMax(0.0);
      InversionConfig<double> cfg;
      cfg.alpha = 0.5 * delta;
      cfg.pdhg_max_iter = 20000;
      cfg.pdhg_tol = 1e-9;
      const auto r = single_layer_invert<double>(Op::dense(W), b, act, y, h, w, cfg);
      err.push_back((r.x - xt).norm());
    }
    std::nth_element(err.begin(), err.begin() + 10, err.end());
    medians.push_back(err[10]);
  }
  o.check(medians[0] >= medians[1] && medians[1] >= medians[2],
          "medians " + num(medians[0]) + ", " + num(medians[1]) + ", " + num(medians[2]));
  const double secs = seconds_since(t0);
  o.check(secs < 300, "runtime " + num(secs) + " s");
  o.measured("median errors " + num(medians[0]) + ", " + num(medians[1]) + ", " + num(medians[2]));
  return o;
}

Outcome optimizer_transcription() {
  Outcome o;
  OptimizerState<double> s(BlockVector<double>{Mat<double>::Constant(1, 1, 0.0)});
  adam_step(s, BlockVector<double>{Mat<double>::Constant(1, 1, 1.0)}, StepPolicy<double>::constant(0.1));
  const double err = std::abs(s.x[0](0, 0) - (-0.1 / (1.0 + 1e-8)));
  o.check(err <= 1e-15, "Adam first step off by " + num(err));

  std::mt19937_64 g(1111);
  auto net = smooth_mlp(g, std::vector<Act>(3, Act::tanh()));
  const Mat<double> y = randn(4, 6, g), x = randn(3, 6, g);
  IsgmOptions<double> opt;
  opt.tau0 = 0.0;
  opt.epochs = 2;
  auto frozen = isgm_run(PenaltyStrategy<double>::mac_qp(1.0), net, y, x, {{0, 1, 2}, {3, 4, 5}}, opt);
  const auto before = get_params(net), after = get_params(frozen.net);
  double moved = 0;
  for (std::size_t i = 0; i < before.size(); ++i) moved = std::max(moved, max_abs(after.values[i] - before.values[i]));
  o.check(moved == 0.0, "ISGM moved parameters by " + num(moved));
  o.note("Adam error " + num(err) + ", ISGM frozen");
  return o;
}

Outcome persistence_determinism() {
  Outcome o;
  const std::string dir = fresh_dir("persist");
  std::mt19937_64 g(1212);
  auto net = random_mlp<double>(3, 10, g);
  cli::save_checkpoint(dir + "/m.ckpt", net);
  const auto back = cli::load_checkpoint<double>(dir + "/m.ckpt");
  const Mat<double> y = randn(10, 7, g);
  o.check(forward_sequential_batch(net, y).output == forward_sequential_batch(back, y).output,
          "checkpoint forward differs");
  auto netf = random_mlp<float>(2, 6, g);
  cli::save_checkpoint(dir + "/f.ckpt", netf);
  const Mat<float> yf = randn(6, 3, g).cast<float>();
  o.check(forward_sequential_batch(netf, yf).output ==
              forward_sequential_batch(cli::load_checkpoint<float>(dir + "/f.ckpt"), yf).output,
          "f32 checkpoint forward differs");

  std::string metrics[2];
  for (int k = 0; k < 2; ++k) {
    const std::string out = dir + "/run" + std::to_string(k);
    cli::RunConfig c = cli::RunConfig::parse(
        "task = train\nout = " + out +
        "\nseed = 5\ndata.train = 16\ndata.val = 4\ndata.size = 8\narch.hidden = 16\narch.layers = 2\n"
        "train.steps = 50\ntrain.log_every = 10\n");
    c.resolve();
    o.check(cli::run(c) == exit_ok, "train run failed");
    metrics[k] = cli::read_file(out + "/metrics.csv");
  }
  o.check(!metrics[0].empty() && metrics[0] == metrics[1], "metrics.csv differs between identical runs");
  o.note("checkpoint bit-identical, metrics.csv byte-identical");
  return o;
}

Outcome bench_harness() {
  Outcome o;
  const std::string dir = fresh_dir("bench");
  cli::RunConfig c = cli::RunConfig::parse("task = bench\nout = " + dir + "\nbench.repeat = 1\n");
  c.resolve();
  const auto want = c.int_list("bench.layers");
  o.check(cli::run(c) == exit_ok, "bench failed or equality gate tripped");
  for (const char* f : {"bench_forward.csv", "bench_backprop.csv"}) {
    std::istringstream in(cli::read_file(dir + "/" + f));
    std::string line;
    std::getline(in, line);
    o.check(line == "layers,vectorised_ms,non_vectorised_ms,speedup", std::string(f) + " header");
    std::vector<long> layers;
    while (std::getline(in, line)) {
      layers.push_back(std::stol(line.substr(0, line.find(','))));
      const double speedup = std::stod(line.substr(line.rfind(',') + 1));
      o.check(speedup > 0, std::string(f) + " speedup missing");
    }
    o.check(layers == want, std::string(f) + " rows do not match layer counts");
  }
  o.note(std::to_string(want.size()) + " layer counts up to " + std::to_string(want.back()) + ", gate passed");
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace liftnet

int main(int argc, char** argv) {
  using namespace liftnet;
  CLI::App app{"liftnet acceptance checks"};
  std::vector<int> only, allow_fail;
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--allow-fail", allow_fail, "criteria whose failure does not fail the run");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "block/sequential equivalence", block_sequential_equivalence},
      {2, "Bregman gradient identity", bregman_gradient_identity},
      {3, "Fenchel-Bregman equality for ReLU", fenchel_bregman_relu},
      {4, "ISTA/LISTA oracle", ista_lista_oracle},
      {5, "primal-dual unrolling oracle", condat_vu_oracle},
      {6, "BCD monotonicity", bcd_monotonicity},
      {7, "derivative-free Bregman path", derivative_freeness},
      {8, "desk-scale denoising", desk_scale_denoising},
      {9, "inversion machinery", inversion_machinery},
      {10, "noise-decay property", noise_decay},
      {11, "optimizer transcription", optimizer_transcription},
      {12, "persistence and determinism", persistence_determinism},
      {13, "bench harness", bench_harness},
  };
  const std::set<int> sel(only.begin(), only.end()), tolerated(allow_fail.begin(), allow_fail.end());
  int hard_failures = 0;
  for (const auto& c : all) {
    if (!sel.empty() && !sel.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = seconds_since(t0);
    std::printf("criterion %2d %s  %s (%s) [%.1f s]\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                secs);
    std::fflush(stdout);
    if (!o.pass && !tolerated.count(c.id)) ++hard_failures;
  }
  return hard_failures == 0 ? 0 : 1;
}
