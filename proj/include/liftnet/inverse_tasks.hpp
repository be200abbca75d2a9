/*
 * inverse_tasks.hpp - degradation operators, datasets and image metrics
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

#include "liftnet/linops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace liftnet {

enum class Split { train, val };

// One flattened row-major image per column, pixels in [0, 1].
template <class T>
struct ImageDataset {
  Index height = 0;
  Index width = 0;
  Mat<T> images;
  std::vector<int> labels;  // empty when unlabeled
  std::vector<Split> split;

  Index size() const { return images.cols(); }
  Index pixels() const { return height * width; }

  ImageDataset subset(const std::vector<Index>& idx) const {
    ImageDataset out;
    out.height = height;
    out.width = width;
    out.images.resize(images.rows(), static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.images.col(static_cast<Index>(k)) = images.col(idx[k]);
      if (!labels.empty()) out.labels.push_back(labels[static_cast<std::size_t>(idx[k])]);
      out.split.push_back(split[static_cast<std::size_t>(idx[k])]);
    }
    return out;
  }

  // First n_train samples become train, the rest val.
  void tag_split(Index n_train) {
    split.assign(static_cast<std::size_t>(size()), Split::val);
    for (Index i = 0; i < std::min(n_train, size()); ++i) split[static_cast<std::size_t>(i)] = Split::train;
  }

  std::vector<Index> indices(Split s) const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == s) out.push_back(static_cast<Index>(i));
    return out;
  }
};

// Independent stream per (seed, index).
inline std::mt19937_64 image_stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

// ------------------------------------------------------------ operators

template <class T>
Mat<T> gaussian_kernel(Index size, T sigma) {
  require(size > 0 && size % 2 == 1, "gaussian_kernel: size must be odd and positive");
  require(sigma > T(0), "gaussian_kernel: sigma must be positive");
  const Index c = size / 2;
  Mat<T> k(size, size);
  for (Index i = 0; i < size; ++i)
    for (Index j = 0; j < size; ++j) {
      const T r2 = T((i - c) * (i - c) + (j - c) * (j - c));
      k(i, j) = std::exp(-r2 / (T(2) * sigma * sigma));
    }
  return k / k.sum();
}

// Zero-padded "same" convolution with a square kernel.
template <class T>
LinOp<T> blur_operator(const Mat<T>& kernel, Index height, Index width) {
  require(kernel.rows() == kernel.cols() && kernel.rows() % 2 == 1,
          "blur_operator: kernel must be square with odd size");
  Conv2dShape s;
  s.height = height;
  s.width = width;
  s.kernel = kernel.rows();
  s.padding = kernel.rows() / 2;
  std::vector<T> w(static_cast<std::size_t>(kernel.size()));
  for (Index i = 0; i < kernel.rows(); ++i)
    for (Index j = 0; j < kernel.cols(); ++j) w[static_cast<std::size_t>(i * kernel.cols() + j)] = kernel(i, j);
  return LinOp<T>::conv2d(std::move(w), s);
}

// Drops exactly round(fraction * n) positions chosen by a partial shuffle.
inline std::vector<bool> inpaint_keep(Index n, double fraction, std::mt19937_64& rng) {
  require(fraction > 0.0 && fraction < 1.0, "inpaint: drop fraction must lie in (0, 1)");
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index(0));
  const auto drop = static_cast<std::size_t>(std::llround(fraction * double(n)));
  for (std::size_t i = 0; i < drop; ++i) {
    std::uniform_int_distribution<std::size_t> u(i, idx.size() - 1);
    std::swap(idx[i], idx[u(rng)]);
  }
  std::vector<bool> keep(static_cast<std::size_t>(n), true);
  for (std::size_t i = 0; i < drop; ++i) keep[static_cast<std::size_t>(idx[i])] = false;
  return keep;
}

template <class T>
struct DegradationSpec {
  enum class Kind { blur, noise, inpaint };
  Kind kind = Kind::noise;
  Index kernel_size = 5;
  T kernel_sigma = T(1);
  T noise_sigma = T(0);
  double drop_fraction = 0.3;

  static DegradationSpec blur(Index size, T kernel_sigma, T noise_sigma) {
    require(noise_sigma >= T(0), "blur: noise sigma must be nonnegative");
    DegradationSpec s;
    s.kind = Kind::blur;
    s.kernel_size = size;
    s.kernel_sigma = kernel_sigma;
    s.noise_sigma = noise_sigma;
    return s;
  }
  static DegradationSpec noise(T sigma) {
    require(sigma >= T(0), "noise: sigma must be nonnegative");
    DegradationSpec s;
    s.kind = Kind::noise;
    s.noise_sigma = sigma;
    return s;
  }
  static DegradationSpec inpaint(double fraction) {
    require(fraction > 0.0 && fraction < 1.0, "inpaint: drop fraction must lie in (0, 1)");
    DegradationSpec s;
    s.kind = Kind::inpaint;
    s.drop_fraction = fraction;
    return s;
  }

  std::string name() const {
    switch (kind) {
      case Kind::blur: return "deblur";
      case Kind::noise: return "denoise";
      case Kind::inpaint: return "inpaint";
    }
    return "";
  }
};

// Forward operator H. Inpainting draws its mask from rng.
template <class T>
LinOp<T> forward_operator(const DegradationSpec<T>& spec, Index height, Index width,
                          std::mt19937_64& rng) {
  using K = typename DegradationSpec<T>::Kind;
  switch (spec.kind) {
    case K::blur:
      return blur_operator(gaussian_kernel(spec.kernel_size, spec.kernel_sigma), height, width);
    case K::noise:
      return LinOp<T>::identity(height * width);
    case K::inpaint:
      return LinOp<T>::mask(inpaint_keep(height * width, spec.drop_fraction, rng), MaskMode::zero_fill);
  }
  return LinOp<T>::identity(height * width);
}

// y = H x + sigma * n; observations are not clipped.
template <class T>
Vec<T> degrade(const DegradationSpec<T>& spec, const Vec<T>& image, Index height, Index width,
               std::mt19937_64& rng) {
  require(image.size() == height * width, "degrade: image size does not match shape");
  const LinOp<T> H = forward_operator(spec, height, width, rng);
  Vec<T> y = H.apply(image);
  if (spec.noise_sigma > T(0)) {
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Index i = 0; i < y.size(); ++i) y[i] += spec.noise_sigma * static_cast<T>(nd(rng));
  }
  return y;
}

// Degrades every image with its own stream image_stream(seed, index).
template <class T>
Mat<T> degrade_dataset(const DegradationSpec<T>& spec, const ImageDataset<T>& ds, std::uint64_t seed) {
  Mat<T> out(ds.pixels(), ds.size());
  for (Index k = 0; k < ds.size(); ++k) {
    auto rng = image_stream(seed, static_cast<std::uint64_t>(k));
    out.col(k) = degrade(spec, Vec<T>(ds.images.col(k)), ds.height, ds.width, rng);
  }
  return out;
}

// ---------------------------------------------------------------- metrics

template <class A, class B>
double mse(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& ref) {
  require(x.rows() == ref.rows() && x.cols() == ref.cols(), "mse: shape mismatch");
  return static_cast<double>((x - ref).squaredNorm()) / static_cast<double>(x.size());
}

// 10 log10(peak^2 / MSE), capped at 99 dB.
template <class A, class B>
double psnr(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& ref, double peak = 1.0) {
  require(peak > 0.0, "psnr: peak must be positive");
  const double m = mse(x, ref);
  if (m <= 1e-12) return 99.0;
  return std::min(99.0, 10.0 * std::log10(peak * peak / m));
}

// Median of per-column PSNR.
template <class T>
double median_psnr(const Mat<T>& x, const Mat<T>& ref, double peak = 1.0) {
  require(x.cols() == ref.cols() && x.cols() > 0, "median_psnr: shape mismatch");
  std::vector<double> v(static_cast<std::size_t>(x.cols()));
  for (Index k = 0; k < x.cols(); ++k) v[static_cast<std::size_t>(k)] = psnr(x.col(k), ref.col(k), peak);
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ------------------------------------------------------------------- data

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path, 0);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  if (off + 4 > b.size()) throw ParseError("truncated IDX header", off);
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace detail

// IDX image file (magic 0x00000803), optional label file (0x00000801).
// count < 0 keeps everything; otherwise count samples chosen by a seeded
// shuffle, in shuffled order.
template <class T>
ImageDataset<T> load_mnist_idx(const std::string& images_path, const std::string& labels_path = "",
                               long count = -1, std::uint64_t seed = 0) {
  const auto b = detail::read_file(images_path);
  const std::uint32_t magic = detail::be32(b, 0);
  if (magic != 0x00000803u) throw ParseError("bad IDX image magic", 0);
  const std::uint32_t n = detail::be32(b, 4), h = detail::be32(b, 8), w = detail::be32(b, 12);
  const std::size_t px = std::size_t(h) * w;
  if (b.size() < 16 + px * n) throw ParseError("truncated IDX image data", b.size());
  if (b.size() > 16 + px * n) throw ParseError("trailing bytes after IDX image data", 16 + px * n);

  std::vector<int> labels;
  if (!labels_path.empty()) {
    const auto lb = detail::read_file(labels_path);
    if (detail::be32(lb, 0) != 0x00000801u) throw ParseError("bad IDX label magic", 0);
    const std::uint32_t nl = detail::be32(lb, 4);
    if (nl != n) throw ParseError("label count does not match image count", 4);
    if (lb.size() != 8 + std::size_t(n)) throw ParseError("truncated IDX label data", lb.size());
    labels.assign(lb.begin() + 8, lb.end());
  }

  std::vector<Index> pick(n);
  std::iota(pick.begin(), pick.end(), Index(0));
  if (count >= 0 && static_cast<std::size_t>(count) < pick.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(pick.begin(), pick.end(), rng);
    pick.resize(static_cast<std::size_t>(count));
  }

  ImageDataset<T> ds;
  ds.height = h;
  ds.width = w;
  ds.images.resize(static_cast<Index>(px), static_cast<Index>(pick.size()));
  for (std::size_t k = 0; k < pick.size(); ++k) {
    const std::size_t base = 16 + static_cast<std::size_t>(pick[k]) * px;
    for (std::size_t i = 0; i < px; ++i)
      ds.images(static_cast<Index>(i), static_cast<Index>(k)) = T(b[base + i]) / T(255);
    if (!labels.empty()) ds.labels.push_back(labels[static_cast<std::size_t>(pick[k])]);
  }
  ds.split.assign(pick.size(), Split::train);
  return ds;
}

// Writes images as an IDX file with pixels rounded to bytes.
template <class T>
void save_idx_images(const std::string& path, const ImageDataset<T>& ds) {
  std::vector<unsigned char> b;
  auto put = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>((v >> s) & 0xffu));
  };
  put(0x00000803u);
  put(static_cast<std::uint32_t>(ds.size()));
  put(static_cast<std::uint32_t>(ds.height));
  put(static_cast<std::uint32_t>(ds.width));
  for (Index k = 0; k < ds.size(); ++k)
    for (Index i = 0; i < ds.pixels(); ++i) {
      const double v = std::clamp(static_cast<double>(ds.images(i, k)), 0.0, 1.0);
      b.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "save_idx_images: cannot open " + path);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Sparse-blob images: 1 to max_blobs Gaussian bumps with amplitude in
// [0.5, 1] and width in [0.06, 0.15] * size, summed and clipped to 1.
template <class T>
ImageDataset<T> synth_dataset(Index n, Index size, std::uint64_t seed, int max_blobs = 3) {
  require(n >= 0 && size > 0 && max_blobs > 0, "synth_dataset: invalid arguments");
  ImageDataset<T> ds;
  ds.height = size;
  ds.width = size;
  ds.images.setZero(size * size, n);
  for (Index k = 0; k < n; ++k) {
    auto rng = image_stream(seed, static_cast<std::uint64_t>(k));
    std::uniform_int_distribution<int> nb(1, max_blobs);
    std::uniform_real_distribution<double> pos(0.0, double(size - 1));
    std::uniform_real_distribution<double> amp(0.5, 1.0);
    std::uniform_real_distribution<double> wid(0.06 * double(size), 0.15 * double(size));
    const int blobs = nb(rng);
    for (int j = 0; j < blobs; ++j) {
      const double cy = pos(rng), cx = pos(rng), a = amp(rng), s = wid(rng);
      for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x) {
          const double r2 = (double(y) - cy) * (double(y) - cy) + (double(x) - cx) * (double(x) - cx);
          ds.images(y * size + x, k) += static_cast<T>(a * std::exp(-r2 / (2 * s * s)));
        }
    }
  }
  ds.images = ds.images.cwiseMin(T(1));
  ds.split.assign(static_cast<std::size_t>(n), Split::train);
  return ds;
}

}  // namespace liftnet
