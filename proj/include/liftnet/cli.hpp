/*
 * cli.hpp - configuration, persistence and experiment commands
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

#include "liftnet/inverse_tasks.hpp"
#include "liftnet/inversion.hpp"
#include "liftnet/optimizers.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace liftnet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { exit_ok = 0, exit_config = 1, exit_io = 2, exit_numerical = 3 };

namespace cli {

// Shortest text that parses back to the same double.
inline std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// ------------------------------------------------------------------ config

enum class KeyType { integer, real, text, choice, int_list };
enum class Range { any, nonneg, positive, fraction };

struct KeySpec {
  std::string key;
  KeyType type;
  std::string def;
  Range range = Range::any;
  std::vector<std::string> choices;
};

inline const std::vector<KeySpec>& config_schema() {
  using K = KeyType;
  using R = Range;
  static const std::vector<KeySpec> s = {
      {"task", K::choice, "train", R::any, {"train", "invert", "bench", "data"}},
      {"seed", K::integer, "0", R::nonneg, {}},
      {"precision", K::choice, "64", R::any, {"32", "64"}},
      {"out", K::text, "out", R::any, {}},
      {"paper_scale", K::choice, "0", R::any, {"0", "1"}},

      {"data.source", K::choice, "synth", R::any, {"synth", "idx"}},
      {"data.images", K::text, "", R::any, {}},
      {"data.labels", K::text, "", R::any, {}},
      {"data.train", K::integer, "200", R::positive, {}},
      {"data.val", K::integer, "50", R::positive, {}},
      {"data.size", K::integer, "16", R::positive, {}},
      {"data.count", K::integer, "10", R::nonneg, {}},

      {"task.degradation", K::choice, "denoise", R::any, {"denoise", "deblur", "inpaint"}},
      {"task.noise_sigma", K::real, "0.15", R::nonneg, {}},
      {"task.blur_size", K::integer, "5", R::positive, {}},
      {"task.blur_sigma", K::real, "1", R::positive, {}},
      {"task.drop_fraction", K::real, "0.3", R::fraction, {}},

      {"arch.layers", K::integer, "3", R::positive, {}},
      {"arch.hidden", K::integer, "64", R::positive, {}},
      {"arch.activation", K::choice, "soft_shrink", R::any,
       {"soft_shrink", "relu", "identity", "tanh", "interval_proj"}},
      {"arch.lambda", K::real, "0.2", R::nonneg, {}},
      {"arch.init_scale", K::real, "1", R::nonneg, {}},

      {"train.strategy", K::choice, "bregman", R::any, {"bregman", "conventional"}},
      {"train.mu", K::real, "0.005", R::positive, {}},
      {"train.optimizer", K::choice, "adam", R::any, {"adam", "plain", "heavyball", "nesterov"}},
      {"train.lr", K::real, "0.001", R::positive, {}},
      {"train.lr_z", K::real, "0.001", R::positive, {}},
      {"train.momentum", K::real, "0.9", R::fraction, {}},
      {"train.p1", K::real, "0.9", R::fraction, {}},
      {"train.p2", K::real, "0.999", R::fraction, {}},
      {"train.eps", K::real, "1e-08", R::positive, {}},
      {"train.steps", K::integer, "2000", R::nonneg, {}},
      {"train.log_every", K::integer, "100", R::positive, {}},
      {"train.image_every", K::integer, "500", R::nonneg, {}},
      {"train.aux_init", K::choice, "replicate", R::any, {"replicate", "forward", "gaussian", "zeros"}},

      {"invert.checkpoint", K::text, "", R::any, {}},
      {"invert.count", K::integer, "4", R::positive, {}},
      {"invert.noise", K::real, "0.1", R::nonneg, {}},
      {"invert.alpha", K::real, "0.07", R::positive, {}},
      {"invert.pdhg_iters", K::integer, "1000", R::positive, {}},
      {"invert.pdhg_tol", K::real, "1e-05", R::nonneg, {}},
      {"invert.outer", K::integer, "100", R::positive, {}},
      {"invert.tau_x", K::real, "0", R::nonneg, {}},
      {"invert.tau_z", K::real, "0", R::nonneg, {}},

      {"bench.layers", K::int_list, "1,2,4,8,16,32,64,128", R::positive, {}},
      {"bench.repeat", K::integer, "5", R::positive, {}},
      {"bench.width", K::integer, "64", R::positive, {}},
      {"bench.batch", K::integer, "16", R::positive, {}},
  };
  return s;
}

inline const KeySpec& key_spec(const std::string& key) {
  for (const auto& k : config_schema())
    if (k.key == key) return k;
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Validates a value and returns its canonical text.
inline std::string canonical(const KeySpec& k, const std::string& raw) {
  const std::string v = trim(raw);
  auto bad = [&](const std::string& why) {
    return ConfigError("config key '" + k.key + "': " + why + " (got '" + v + "')");
  };
  auto check_range = [&](double x) {
    switch (k.range) {
      case Range::any: break;
      case Range::nonneg:
        if (!(x >= 0)) throw bad("must be nonnegative");
        break;
      case Range::positive:
        if (!(x > 0)) throw bad("must be positive");
        break;
      case Range::fraction:
        if (!(x >= 0 && x < 1)) throw bad("must lie in [0, 1)");
        break;
    }
  };
  auto parse_int = [&](const std::string& t) {
    long x = 0;
    auto r = std::from_chars(t.data(), t.data() + t.size(), x);
    if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) throw bad("expected an integer");
    check_range(static_cast<double>(x));
    return x;
  };
  switch (k.type) {
    case KeyType::integer:
      return std::to_string(parse_int(v));
    case KeyType::real: {
      double x = 0;
      auto r = std::from_chars(v.data(), v.data() + v.size(), x);
      if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(x))
        throw bad("expected a finite number");
      check_range(x);
      return fmt(x);
    }
    case KeyType::text:
      if (v.find('\n') != std::string::npos) throw bad("newline in value");
      return v;
    case KeyType::choice:
      if (std::find(k.choices.begin(), k.choices.end(), v) == k.choices.end()) throw bad("not an allowed choice");
      return v;
    case KeyType::int_list: {
      std::string out;
      std::stringstream ss(v);
      std::string item;
      int n = 0;
      while (std::getline(ss, item, ',')) {
        out += (n++ ? "," : "") + std::to_string(parse_int(trim(item)));
      }
      if (n == 0) throw bad("empty list");
      return out;
    }
  }
  return v;
}

// Flat typed key = value configuration; every key in config_schema() is
// always present.
class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_schema()) values_[k.key] = k.def;
  }

  void set(const std::string& key, const std::string& value, bool is_explicit = true) {
    values_[key] = canonical(key_spec(key), value);
    if (is_explicit) explicit_.insert(key);
  }
  bool is_explicit(const std::string& key) const { return explicit_.count(key) > 0; }

  const std::string& text(const std::string& key) const {
    key_spec(key);
    return values_.at(key);
  }
  long integer(const std::string& key) const { return std::stol(text(key)); }
  double real(const std::string& key) const { return std::stod(text(key)); }
  std::vector<long> int_list(const std::string& key) const {
    std::vector<long> out;
    std::stringstream ss(text(key));
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stol(item));
    return out;
  }

  // Lines of "key = value"; '#' starts a comment.
  static RunConfig parse(const std::string& src, RunConfig base = RunConfig()) {
    std::stringstream ss(src);
    std::string line;
    int no = 0;
    std::set<std::string> seen;
    while (std::getline(ss, line)) {
      ++no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(no) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      if (!seen.insert(key).second)
        throw ConfigError("config line " + std::to_string(no) + ": duplicate key '" + key + "'");
      try {
        base.set(key, line.substr(eq + 1));
      } catch (const ConfigError& e) {
        throw ConfigError("config line " + std::to_string(no) + ": " + e.what());
      }
    }
    return base;
  }

  static RunConfig load(const std::string& path, RunConfig base = RunConfig()) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), std::move(base));
  }

  std::string serialize() const {
    std::string out;
    for (const auto& k : config_schema()) out += k.key + " = " + values_.at(k.key) + "\n";
    return out;
  }

  // Published experiment constants; explicit settings still win.
  void apply_paper_scale() {
    auto def = [&](const std::string& k, const std::string& v) {
      if (!is_explicit(k)) set(k, v, false);
    };
    set("paper_scale", "1", false);
    def("data.train", "5000");
    def("data.val", "500");
    def("data.size", "28");
    def("arch.layers", "7");
    def("arch.hidden", "784");
    def("train.steps", "50000");
    def("train.lr", "0.0008");
    def("train.lr_z", "0.0008");
    def("invert.outer", "500");
  }

  // Task-dependent defaults and cross-field checks.
  void resolve() {
    const std::string deg = text("task.degradation");
    if (!is_explicit("task.noise_sigma"))
      set("task.noise_sigma", deg == "denoise" ? "0.15" : deg == "deblur" ? "0.03" : "0", false);
    if (text("paper_scale") == "1" && deg == "inpaint") {
      if (!is_explicit("train.lr")) set("train.lr", "0.0001", false);
      if (!is_explicit("train.lr_z")) set("train.lr_z", "0.0001", false);
    }
    if (integer("task.blur_size") % 2 == 0) throw ConfigError("task.blur_size must be odd");
    if (deg == "inpaint" && !(real("task.drop_fraction") > 0))
      throw ConfigError("task.drop_fraction must be positive for inpainting");
    if (text("data.source") == "idx" && text("data.images").empty())
      throw ConfigError("data.source = idx requires data.images");
    if (text("task") == "invert" && text("invert.checkpoint").empty())
      throw ConfigError("invert requires invert.checkpoint");
  }

  bool operator==(const RunConfig& o) const { return values_ == o.values_; }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

// ------------------------------------------------------------------ files

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

// 8-bit binary PGM; values clipped to [0, 1].
template <class D>
std::string pgm_bytes(const Eigen::MatrixBase<D>& img, Index h, Index w) {
  require(img.size() == h * w, "pgm: image size does not match shape");
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (Index i = 0; i < h * w; ++i) {
    const double v = std::clamp(static_cast<double>(img(i)), 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  return out;
}

// Tiles the columns of imgs row-major, per_row tiles per row, 1 px gaps.
template <class T>
Vec<T> tile_images(const Mat<T>& imgs, Index h, Index w, Index per_row, Index* th, Index* tw) {
  const Index n = imgs.cols();
  const Index cols = std::max<Index>(1, std::min(per_row, n));
  const Index rows = std::max<Index>(1, (n + cols - 1) / cols);
  *th = rows * (h + 1) - 1;
  *tw = cols * (w + 1) - 1;
  Vec<T> out = Vec<T>::Zero(*th * *tw);
  for (Index k = 0; k < n; ++k) {
    const Index r0 = (k / cols) * (h + 1), c0 = (k % cols) * (w + 1);
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) out[(r0 + i) * *tw + c0 + j] = imgs(i * w + j, k);
  }
  return out;
}

template <class T>
void write_pgm_grid(const std::string& path, const Mat<T>& imgs, Index h, Index w, Index per_row = 8) {
  Index th = 0, tw = 0;
  const Vec<T> t = tile_images(imgs, h, w, per_row, &th, &tw);
  write_file(path, pgm_bytes(t, th, tw));
}

inline std::string csv_row(std::initializer_list<std::string> cells) {
  std::string out;
  bool first = true;
  for (const auto& c : cells) {
    out += (first ? "" : ",") + c;
    first = false;
  }
  return out + "\n";
}

// -------------------------------------------------------------- container

// Layout: ASCII manifest
//   liftnet-container 1
//   endian little
//   <meta key> <value...>
//   block <name> <rows> <cols> <offset> <bytes> <crc32 hex>
//   end
// followed by the blobs; each blob is rows*cols little-endian IEEE-754
// binary64 values in column-major order, offsets relative to the first
// byte after "end\n".
inline constexpr int container_version = 1;

struct BlobEntry {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  std::uint64_t offset = 0;
  std::uint64_t bytes = 0;
  std::uint32_t crc = 0;
};

struct Container {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<BlobEntry> entries;
  std::vector<Mat<double>> blobs;

  const std::string& get(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    throw IntegrityError("container: missing manifest field '" + key + "'");
  }
  const Mat<double>& blob(const std::string& name) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return blobs[i];
    throw IntegrityError("container: missing block '" + name + "'");
  }
  void add(const std::string& name, Mat<double> m) {
    entries.push_back({name, m.rows(), m.cols(), 0, 0, 0});
    blobs.push_back(std::move(m));
  }
};

inline std::uint32_t crc32_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

inline std::string encode_le(const Mat<double>& m) {
  std::string out(static_cast<std::size_t>(m.size()) * 8, '\0');
  for (Index i = 0; i < m.size(); ++i) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(m.data()[i]);
    for (int b = 0; b < 8; ++b)
      out[static_cast<std::size_t>(i) * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  return out;
}

inline Mat<double> decode_le(const std::string& bytes, std::size_t off, Index rows, Index cols) {
  Mat<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= std::uint64_t(static_cast<unsigned char>(bytes[off + static_cast<std::size_t>(i) * 8 + b])) << (8 * b);
    m.data()[i] = std::bit_cast<double>(bits);
  }
  return m;
}

inline std::string container_bytes(Container c) {
  std::string data;
  std::ostringstream head;
  head << "liftnet-container " << container_version << "\nendian little\n";
  for (const auto& [k, v] : c.meta) head << k << " " << v << "\n";
  for (std::size_t i = 0; i < c.entries.size(); ++i) {
    const std::string b = encode_le(c.blobs[i]);
    auto& e = c.entries[i];
    e.offset = data.size();
    e.bytes = b.size();
    e.crc = crc32_of(b);
    char crc[9];
    std::snprintf(crc, sizeof crc, "%08x", e.crc);
    head << "block " << e.name << " " << e.rows << " " << e.cols << " " << e.offset << " " << e.bytes
         << " " << crc << "\n";
    data += b;
  }
  head << "end\n";
  return head.str() + data;
}

inline void write_container(const std::string& path, const Container& c) { write_file(path, container_bytes(c)); }

// Parses the manifest only; blob_start receives the first blob byte.
inline Container parse_manifest(const std::string& bytes, std::size_t* blob_start) {
  Container c;
  std::size_t pos = 0;
  int line_no = 0;
  bool done = false;
  while (!done) {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw IntegrityError("container: manifest truncated before 'end'");
    const std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (line_no == 1) {
      int version = 0;
      if (tag != "liftnet-container" || !(ls >> version)) throw IntegrityError("container: bad magic line");
      if (version != container_version)
        throw IntegrityError("container: unsupported format version " + std::to_string(version));
      continue;
    }
    if (tag == "end") {
      done = true;
    } else if (tag == "endian") {
      std::string e;
      ls >> e;
      if (e != "little") throw IntegrityError("container: unsupported endianness '" + e + "'");
    } else if (tag == "block") {
      BlobEntry e;
      std::string crc;
      if (!(ls >> e.name >> e.rows >> e.cols >> e.offset >> e.bytes >> crc) || e.rows < 0 || e.cols < 0)
        throw IntegrityError("container: malformed block line " + std::to_string(line_no));
      e.crc = static_cast<std::uint32_t>(std::stoul(crc, nullptr, 16));
      c.entries.push_back(e);
    } else {
      std::string rest;
      std::getline(ls >> std::ws, rest);
      c.meta.emplace_back(tag, rest);
    }
  }
  *blob_start = pos;
  return c;
}

inline Container read_container(const std::string& path) {
  const std::string bytes = read_file(path);
  std::size_t start = 0;
  Container c = parse_manifest(bytes, &start);
  std::uint64_t expect = 0;
  for (const auto& e : c.entries) {
    if (e.bytes != std::uint64_t(e.rows) * std::uint64_t(e.cols) * 8)
      throw IntegrityError("container: block " + e.name + " declares " + std::to_string(e.bytes) +
                           " bytes for a " + std::to_string(e.rows) + "x" + std::to_string(e.cols) + " matrix");
    if (e.offset != expect) throw IntegrityError("container: block " + e.name + " has a non-contiguous offset");
    expect += e.bytes;
  }
  const std::uint64_t have = bytes.size() - start;
  if (have < expect)
    throw IntegrityError("container: truncated, " + std::to_string(have) + " of " + std::to_string(expect) +
                         " blob bytes present");
  if (have > expect) throw IntegrityError("container: trailing bytes after last block");
  for (const auto& e : c.entries) {
    const std::string b = bytes.substr(start + e.offset, e.bytes);
    if (crc32_of(b) != e.crc) throw IntegrityError("container: checksum mismatch in block " + e.name);
    c.blobs.push_back(decode_le(bytes, start + e.offset, e.rows, e.cols));
  }
  return c;
}

// ------------------------------------------------------------- checkpoint

template <class T>
Mat<double> to_f64(const Mat<T>& m) {
  return m.template cast<double>();
}

// MLP checkpoints: builder, precision, dims, output dim, activation specs
// and one block per learnable parameter (K.J, W.j.j, b.j, d).
template <class T>
Container checkpoint_container(const BlockNetwork<T>& net) {
  if (net.builder != "mlp") throw UnsupportedComposition("checkpoint: only mlp networks are serialisable");
  Container c;
  std::string dims, acts;
  for (std::size_t i = 0; i < net.layout.count(); ++i) dims += (i ? " " : "") + std::to_string(net.layout.size(i));
  for (std::size_t j = 0; j < net.activations.size(); ++j) acts += (j ? " " : "") + net.activations[j].spec();
  c.meta = {{"kind", "checkpoint"},
            {"builder", net.builder},
            {"precision", sizeof(T) == 4 ? "32" : "64"},
            {"dims", dims},
            {"output", std::to_string(net.output_dim())},
            {"activations", acts}};
  const ParamSet<T> p = get_params(net);
  for (std::size_t i = 0; i < p.size(); ++i) c.add(p.keys[i].name(), to_f64(p.values[i]));
  return c;
}

template <class T>
void save_checkpoint(const std::string& path, const BlockNetwork<T>& net) {
  write_container(path, checkpoint_container(net));
}

template <class T>
BlockNetwork<T> network_from_container(const Container& c) {
  if (c.get("kind") != "checkpoint") throw IntegrityError("checkpoint: container is not a checkpoint");
  if (c.get("builder") != "mlp") throw IntegrityError("checkpoint: unsupported builder " + c.get("builder"));
  std::vector<Index> dims;
  {
    std::istringstream ds(c.get("dims"));
    Index v;
    while (ds >> v) dims.push_back(v);
  }
  const Index out = std::stol(c.get("output"));
  std::vector<ProxActivation<T>> acts;
  {
    std::istringstream as(c.get("activations"));
    std::string s;
    while (as >> s) acts.push_back(ProxActivation<T>::parse(s));
  }
  if (dims.size() < 2 || acts.size() + 1 != dims.size())
    throw IntegrityError("checkpoint: dims and activations disagree");
  const std::size_t J = dims.size() - 1;
  std::vector<Mat<T>> W;
  std::vector<Vec<T>> b;
  for (std::size_t j = 0; j < J; ++j) {
    W.push_back(Mat<T>::Zero(dims[j + 1], dims[j]));
    b.push_back(Vec<T>::Zero(dims[j + 1]));
  }
  BlockNetwork<T> net = build_mlp<T>(dims, Mat<T>::Zero(out, dims[J]), Vec<T>::Zero(out), W, b, acts);
  ParamSet<T> p = get_params(net);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Mat<double>& m = c.blob(p.keys[i].name());
    if (m.rows() != p.values[i].rows() || m.cols() != p.values[i].cols())
      throw IntegrityError("checkpoint: block " + p.keys[i].name() + " has the wrong shape");
    p.values[i] = m.cast<T>();
  }
  if (c.entries.size() != p.size()) throw IntegrityError("checkpoint: unexpected extra blocks");
  return with_params(net, p);
}

template <class T>
BlockNetwork<T> load_checkpoint(const std::string& path) {
  return network_from_container<T>(read_container(path));
}

// ------------------------------------------------------------- components

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return image_stream(seed, stream)();
}

enum Stream : std::uint64_t { stream_data = 1, stream_degrade = 2, stream_init = 3, stream_aux = 4,
                              stream_invert = 5, stream_bench = 6 };

template <class T>
ProxActivation<T> activation_from(const RunConfig& c) {
  const std::string a = c.text("arch.activation");
  const T lam = static_cast<T>(c.real("arch.lambda"));
  if (a == "soft_shrink") return ProxActivation<T>::soft_shrink(lam);
  if (a == "interval_proj") return ProxActivation<T>::interval_proj(lam);
  if (a == "relu") return ProxActivation<T>::relu();
  if (a == "tanh") return ProxActivation<T>::tanh();
  return ProxActivation<T>::identity();
}

// Gaussian weights with variance scale^2 / fan_in, zero biases.
template <class T>
BlockNetwork<T> init_mlp(const std::vector<Index>& dims, Index out, const ProxActivation<T>& act, T scale,
                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  auto draw = [&](Index r, Index c) {
    Mat<T> m(r, c);
    const double s = static_cast<double>(scale) / std::sqrt(static_cast<double>(c));
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) m(i, j) = static_cast<T>(s * g(rng));
    return m;
  };
  const std::size_t J = dims.size() - 1;
  std::vector<Mat<T>> W;
  std::vector<Vec<T>> b;
  for (std::size_t j = 0; j < J; ++j) {
    W.push_back(draw(dims[j + 1], dims[j]));
    b.push_back(Vec<T>::Zero(dims[j + 1]));
  }
  Mat<T> K = draw(out, dims[J]);
  return build_mlp<T>(dims, K, Vec<T>::Zero(out), W, b, std::vector<ProxActivation<T>>(J, act));
}

template <class T>
BlockNetwork<T> model_from(const RunConfig& c, Index pixels) {
  std::vector<Index> dims{pixels};
  for (long j = 0; j < c.integer("arch.layers"); ++j) dims.push_back(c.integer("arch.hidden"));
  return init_mlp<T>(dims, pixels, activation_from<T>(c), static_cast<T>(c.real("arch.init_scale")),
                     derive_seed(static_cast<std::uint64_t>(c.integer("seed")), stream_init));
}

template <class T>
DegradationSpec<T> degradation_from(const RunConfig& c) {
  const std::string d = c.text("task.degradation");
  if (d == "deblur")
    return DegradationSpec<T>::blur(c.integer("task.blur_size"), static_cast<T>(c.real("task.blur_sigma")),
                                    static_cast<T>(c.real("task.noise_sigma")));
  if (d == "inpaint") return DegradationSpec<T>::inpaint(c.real("task.drop_fraction"));
  return DegradationSpec<T>::noise(static_cast<T>(c.real("task.noise_sigma")));
}

// count images from the configured source; seed selects the stream.
template <class T>
ImageDataset<T> dataset_from(const RunConfig& c, Index count, std::uint64_t seed) {
  if (c.text("data.source") == "synth") return synth_dataset<T>(count, c.integer("data.size"), seed);
  ImageDataset<T> ds = load_mnist_idx<T>(c.text("data.images"), c.text("data.labels"), count, seed);
  if (ds.size() < count)
    throw IoError("requested " + std::to_string(count) + " images but " + c.text("data.images") + " holds only " +
                  std::to_string(ds.size()));
  return ds;
}

inline AuxInit aux_init_from(const std::string& s) {
  if (s == "forward") return AuxInit::forward;
  if (s == "gaussian") return AuxInit::gaussian;
  if (s == "zeros") return AuxInit::zeros;
  return AuxInit::replicate;
}

inline StepVariant variant_from(const std::string& s) {
  if (s == "plain") return StepVariant::plain;
  if (s == "heavyball") return StepVariant::heavyball;
  if (s == "nesterov") return StepVariant::nesterov;
  return StepVariant::adam;
}

// ------------------------------------------------------------------ train

template <class T>
struct TrainingRun {
  ImageDataset<T> data;  // clean images, train then val
  Mat<T> observed;       // degraded observations, same columns
  BlockNetwork<T> initial;
  TrainResult<T> result;
  double observed_psnr = 0;  // median over val
  double final_psnr = 0;     // median over val reconstructions
};

template <class T>
Mat<T> columns(const Mat<T>& m, const std::vector<Index>& idx) {
  return select_columns(m, idx);
}

// Dataset, observations and initial network for a training run.
template <class T>
TrainingRun<T> prepare_training(const RunConfig& c) {
  const auto seed = static_cast<std::uint64_t>(c.integer("seed"));
  const Index n_train = c.integer("data.train"), n_val = c.integer("data.val");
  TrainingRun<T> run;
  run.data = dataset_from<T>(c, n_train + n_val, derive_seed(seed, stream_data));
  run.data.tag_split(n_train);
  run.observed = degrade_dataset(degradation_from<T>(c), run.data, derive_seed(seed, stream_degrade));
  run.initial = model_from<T>(c, run.data.pixels());
  return run;
}

template <class T>
TrainConfig<T> train_config_from(const RunConfig& c) {
  TrainConfig<T> tc;
  tc.mu = {static_cast<T>(c.real("train.mu"))};
  tc.steps = static_cast<int>(c.integer("train.steps"));
  tc.variant = variant_from(c.text("train.optimizer"));
  tc.lr_theta = static_cast<T>(c.real("train.lr"));
  tc.lr_z = static_cast<T>(c.real("train.lr_z"));
  tc.momentum = static_cast<T>(c.real("train.momentum"));
  tc.p1 = static_cast<T>(c.real("train.p1"));
  tc.p2 = static_cast<T>(c.real("train.p2"));
  tc.eps = static_cast<T>(c.real("train.eps"));
  tc.aux_init = aux_init_from(c.text("train.aux_init"));
  tc.seed = derive_seed(static_cast<std::uint64_t>(c.integer("seed")), stream_aux);
  tc.log_every = static_cast<int>(c.integer("train.log_every"));
  return tc;
}

// Trains on the train split and reports validation metrics; on_record is
// called with the current network after each metrics record.
template <class T>
void train_prepared(const RunConfig& c, TrainingRun<T>& run,
                    const std::function<void(const BlockNetwork<T>&, const MetricRecord&)>& on_record = {}) {
  const auto tr = run.data.indices(Split::train), va = run.data.indices(Split::val);
  const Mat<T> y = columns(run.observed, tr), x = columns(run.data.images, tr);
  const Mat<T> yv = columns(run.observed, va), xv = columns(run.data.images, va);
  run.observed_psnr = median_psnr(yv, xv);
  TrainConfig<T> tc = train_config_from<T>(c);
  tc.evaluate = [&](const BlockNetwork<T>& net, MetricRecord& m) {
    const Mat<T> out = forward_sequential_batch(net, yv).output;
    m.mse = mse(out, xv);
    m.psnr = median_psnr(out, xv);
    if (on_record) on_record(net, m);
  };
  run.result = c.text("train.strategy") == "conventional" ? train_conventional(run.initial, y, x, tc)
                                                          : train_lifted_bregman(run.initial, y, x, tc);
  run.final_psnr = median_psnr(Mat<T>(forward_sequential_batch(run.result.net, yv).output), xv);
}

template <class T>
TrainingRun<T> run_training(const RunConfig& c) {
  TrainingRun<T> run = prepare_training<T>(c);
  train_prepared(c, run);
  return run;
}

inline void write_manifest(const RunConfig& c) {
  ensure_dir(c.text("out"));
  write_file(join(c.text("out"), "config.resolved"), c.serialize());
}

template <class T>
int cmd_train(const RunConfig& c) {
  const std::string out = c.text("out");
  write_manifest(c);
  const long steps = c.integer("train.steps"), every = c.integer("train.image_every");
  TrainingRun<T> run = prepare_training<T>(c);
  const Index h = run.data.height, w = run.data.width;
  auto va = run.data.indices(Split::val);
  va.resize(std::min<std::size_t>(va.size(), 8));
  const Mat<T> yshow = columns(run.observed, va);
  write_pgm_grid(join(out, "clean.pgm"), columns(run.data.images, va), h, w);
  write_pgm_grid(join(out, "observed.pgm"), yshow, h, w);
  train_prepared<T>(c, run, [&](const BlockNetwork<T>& net, const MetricRecord& m) {
    if (every <= 0 || (m.step % every != 0 && m.step != steps)) return;
    char name[64];
    std::snprintf(name, sizeof name, "recon_%06ld.pgm", m.step);
    write_pgm_grid(join(out, name), Mat<T>(forward_sequential_batch(net, yshow).output), h, w);
  });
  std::string metrics = "step,objective,penalty,loss,mse,psnr\n";
  std::string timing = "step,wall_ms\n";
  if (steps > 0)
    for (const auto& m : run.result.metrics) {
      metrics += csv_row({std::to_string(m.step), fmt(m.objective), fmt(m.penalty), fmt(m.loss), fmt(m.mse),
                          fmt(m.psnr)});
      timing += csv_row({std::to_string(m.step), fmt(m.wall_ms)});
    }
  write_file(join(out, "metrics.csv"), metrics);
  write_file(join(out, "timing.csv"), timing);
  save_checkpoint(join(out, "model.ckpt"), run.result.net);
  return exit_ok;
}

// ----------------------------------------------------------------- invert

// Encoder layers of a checkpointed MLP; K, d become a final identity
// layer unless K is the identity and d vanishes.
template <class T>
std::vector<EncoderLayer<T>> encoder_from(const BlockNetwork<T>& net) {
  const ParamSet<T> p = get_params(net);
  const std::size_t J = net.depth();
  std::vector<EncoderLayer<T>> layers;
  for (std::size_t j = 0; j < J; ++j)
    layers.push_back({LinOp<T>::dense(p.at({ParamKey::Block::W, j, j})),
                      Vec<T>(p.at({ParamKey::Block::b, j, 0}).col(0)), net.activations[j]});
  const Mat<T>& K = p.at({ParamKey::Block::K, 0, J});
  const Vec<T> d = p.at({ParamKey::Block::d, 0, 0}).col(0);
  const bool trivial = K.rows() == K.cols() && K == Mat<T>::Identity(K.rows(), K.cols()) && d.isZero(0);
  if (!trivial) layers.push_back({LinOp<T>::dense(K), d, ProxActivation<T>::identity()});
  return layers;
}

template <class T>
int cmd_invert(const RunConfig& c) {
  const std::string out = c.text("out");
  write_manifest(c);
  const BlockNetwork<T> net = load_checkpoint<T>(c.text("invert.checkpoint"));
  const Index n = net.input_dim();
  const Index side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) throw ConfigError("invert: encoder input dimension is not a square image");
  const auto seed = static_cast<std::uint64_t>(c.integer("seed"));
  const Index count = c.integer("invert.count");
  RunConfig dc = c;
  if (c.text("data.source") == "synth") dc.set("data.size", std::to_string(side), false);
  const ImageDataset<T> ds = dataset_from<T>(dc, count, derive_seed(seed, stream_invert));
  if (ds.height != side || ds.width != side) throw ConfigError("invert: dataset image size does not match encoder");

  InversionProblem<T> p;
  p.layers = encoder_from(net);
  p.height = side;
  p.width = side;
  p.config.alpha = static_cast<T>(c.real("invert.alpha"));
  p.config.tau_x = static_cast<T>(c.real("invert.tau_x"));
  p.config.tau_z = static_cast<T>(c.real("invert.tau_z"));
  p.config.pdhg_max_iter = static_cast<int>(c.integer("invert.pdhg_iters"));
  p.config.pdhg_tol = static_cast<T>(c.real("invert.pdhg_tol"));
  p.config.outer_iters = static_cast<int>(c.integer("invert.outer"));
  const double sigma = c.real("invert.noise");

  Mat<T> recon(n, count), observed(net.output_dim(), count);
  std::string trace = "image,iteration,objective\n";
  std::string summary = "image,outer_iterations,pdhg_iterations,final_objective,psnr\n";
  for (Index k = 0; k < count; ++k) {
    std::mt19937_64 rng = image_stream(derive_seed(seed, stream_invert + 100), static_cast<std::uint64_t>(k));
    std::normal_distribution<double> g(0.0, sigma);
    Vec<T> y = forward_sequential(net, Vec<T>(ds.images.col(k))).output;
    if (sigma > 0)
      for (Index i = 0; i < y.size(); ++i) y[i] += static_cast<T>(g(rng));
    observed.col(k) = y;
    p.y = y;
    const InversionResult<T> r = invert(p);
    recon.col(k) = r.x;
    for (std::size_t i = 0; i < r.objective.size(); ++i)
      trace += csv_row({std::to_string(k), std::to_string(i), fmt(static_cast<double>(r.objective[i]))});
    long pd = 0;
    for (int it : r.pdhg_iterations) pd += it;
    summary += csv_row({std::to_string(k), std::to_string(r.objective.size() - 1), std::to_string(pd),
                        fmt(static_cast<double>(r.objective.back())), fmt(psnr(r.x, ds.images.col(k)))});
  }
  write_file(join(out, "invert_objective.csv"), trace);
  write_file(join(out, "invert_summary.csv"), summary);
  write_pgm_grid(join(out, "clean.pgm"), ds.images, side, side);
  write_pgm_grid(join(out, "recon.pgm"), recon, side, side);
  Container raw;
  raw.meta = {{"kind", "reconstructions"}, {"height", std::to_string(side)}, {"width", std::to_string(side)}};
  raw.add("clean", to_f64(ds.images));
  raw.add("observed", to_f64(observed));
  raw.add("recon", to_f64(recon));
  write_container(join(out, "reconstructions.lnc"), raw);
  return exit_ok;
}

// ------------------------------------------------------------------ bench

struct BenchRow {
  long layers = 0;
  double vectorised_ms = 0;
  double non_vectorised_ms = 0;
  double speedup = 0;
};

struct BenchReport {
  std::vector<BenchRow> forward;
  std::vector<BenchRow> backprop;
};

template <class F>
double median_ms(F&& f, long repeat, long inner) {
  std::vector<double> t;
  for (long r = 0; r < repeat; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (long i = 0; i < inner; ++i) f();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() /
                static_cast<double>(inner));
  }
  std::sort(t.begin(), t.end());
  const std::size_t m = t.size() / 2;
  return t.size() % 2 ? t[m] : 0.5 * (t[m - 1] + t[m]);
}

template <class T>
bool same(const Mat<T>& a, const Mat<T>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

// Sequential versus block evaluation of ReLU MLPs of equal width; outputs,
// aux states and gradients of both paths must agree exactly before timing.
template <class T>
BenchReport run_bench(const std::vector<long>& layer_counts, long repeat, Index width, Index batch,
                      std::uint64_t seed) {
  BenchReport rep;
  for (long L : layer_counts) {
    require(L >= 1, "bench: layer counts must be positive");
    const std::vector<Index> dims(static_cast<std::size_t>(L) + 1, width);
    const BlockNetwork<T> net = init_mlp<T>(dims, width, ProxActivation<T>::relu(), T(1),
                                            derive_seed(seed, static_cast<std::uint64_t>(L)));
    std::mt19937_64 rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(L)));
    std::normal_distribution<double> g(0.0, 1.0);
    Mat<T> Y(width, batch), X(width, batch);
    for (Index i = 0; i < Y.size(); ++i) Y.data()[i] = static_cast<T>(g(rng));
    for (Index i = 0; i < X.size(); ++i) X.data()[i] = static_cast<T>(g(rng));
    const Vec<T> y = Y.col(0);

    const ForwardTrace<T> s = forward_sequential(net, y), b = forward_block(net, y);
    if (!same<T>(s.output, b.output) || !same<T>(s.u, b.u) || !same<T>(s.z, b.z))
      throw NumericalAbort("bench: forward paths disagree at " + std::to_string(L) + " layers");
    const ParamSet<T> gs = backprop_grad_batch(net, Y, X, EvalOrder::sequential);
    const ParamSet<T> gb = backprop_grad_batch(net, Y, X, EvalOrder::block);
    for (std::size_t i = 0; i < gs.size(); ++i)
      if (!same<T>(gs.values[i], gb.values[i]))
        throw NumericalAbort("bench: backprop paths disagree at " + std::to_string(L) + " layers");

    const long inner = std::max<long>(1, 64 / L);
    volatile T sink = T(0);
    BenchRow f{L, 0, 0, 0}, bp{L, 0, 0, 0};
    f.vectorised_ms = median_ms([&] { sink = sink + forward_block(net, y).output[0]; }, repeat, inner);
    f.non_vectorised_ms = median_ms([&] { sink = sink + forward_sequential(net, y).output[0]; }, repeat, inner);
    bp.vectorised_ms = median_ms(
        [&] { sink = sink + backprop_grad_batch(net, Y, X, EvalOrder::block).values[0](0, 0); }, repeat, inner);
    bp.non_vectorised_ms = median_ms(
        [&] { sink = sink + backprop_grad_batch(net, Y, X, EvalOrder::sequential).values[0](0, 0); }, repeat,
        inner);
    for (auto* r : {&f, &bp}) r->speedup = r->vectorised_ms > 0 ? r->non_vectorised_ms / r->vectorised_ms : 0.0;
    rep.forward.push_back(f);
    rep.backprop.push_back(bp);
  }
  return rep;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "layers,vectorised_ms,non_vectorised_ms,speedup\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.6f,%.6f,%.3f\n", r.layers, r.vectorised_ms, r.non_vectorised_ms,
                  r.speedup);
    out += buf;
  }
  return out;
}

template <class T>
int cmd_bench(const RunConfig& c) {
  write_manifest(c);
  const BenchReport rep = run_bench<T>(c.int_list("bench.layers"), c.integer("bench.repeat"),
                                       c.integer("bench.width"), c.integer("bench.batch"),
                                       derive_seed(static_cast<std::uint64_t>(c.integer("seed")), stream_bench));
  write_file(join(c.text("out"), "bench_forward.csv"), bench_csv(rep.forward));
  write_file(join(c.text("out"), "bench_backprop.csv"), bench_csv(rep.backprop));
  return exit_ok;
}

// ------------------------------------------------------------------- data

template <class T>
Container dataset_container(const ImageDataset<T>& ds) {
  Container c;
  c.meta = {{"kind", "dataset"},
            {"height", std::to_string(ds.height)},
            {"width", std::to_string(ds.width)},
            {"count", std::to_string(ds.size())}};
  c.add("images", to_f64(ds.images));
  Mat<double> labels(1, static_cast<Index>(ds.labels.size()));
  for (std::size_t i = 0; i < ds.labels.size(); ++i) labels(0, static_cast<Index>(i)) = ds.labels[i];
  c.add("labels", labels);
  return c;
}

template <class T>
ImageDataset<T> dataset_from_container(const Container& c) {
  if (c.get("kind") != "dataset") throw IntegrityError("dataset cache: container is not a dataset");
  ImageDataset<T> ds;
  ds.height = std::stol(c.get("height"));
  ds.width = std::stol(c.get("width"));
  ds.images = c.blob("images").cast<T>();
  if (ds.images.rows() != ds.height * ds.width) throw IntegrityError("dataset cache: image size mismatch");
  const Mat<double>& l = c.blob("labels");
  for (Index i = 0; i < l.cols(); ++i) ds.labels.push_back(static_cast<int>(l(0, i)));
  ds.split.assign(static_cast<std::size_t>(ds.size()), Split::train);
  return ds;
}

template <class T>
int cmd_data(const RunConfig& c) {
  write_manifest(c);
  const Index count = c.integer("data.count");
  const ImageDataset<T> ds =
      dataset_from<T>(c, count, derive_seed(static_cast<std::uint64_t>(c.integer("seed")), stream_data));
  write_container(join(c.text("out"), "dataset.lnc"), dataset_container(ds));
  write_pgm_grid(join(c.text("out"), "dataset.pgm"), Mat<T>(ds.images.leftCols(std::min<Index>(count, 64))),
                 ds.height, ds.width);
  return exit_ok;
}

// ------------------------------------------------------------------ entry

template <class T>
int dispatch(const RunConfig& c) {
  const std::string& t = c.text("task");
  if (t == "train") return cmd_train<T>(c);
  if (t == "invert") return cmd_invert<T>(c);
  if (t == "bench") return cmd_bench<T>(c);
  return cmd_data<T>(c);
}

// Runs a resolved config and maps failures onto exit codes.
inline int run(const RunConfig& c, std::ostream& err = std::cerr) {
  try {
    return c.text("precision") == "32" ? dispatch<float>(c) : dispatch<double>(c);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const ContractViolation& e) {
    err << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const UnsupportedComposition& e) {
    err << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const NumericalAbort& e) {
    err << "numerical abort: " << e.what() << "\n";
    return exit_numerical;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return exit_io;
  } catch (const ParseError& e) {
    err << "io error: " << e.what() << "\n";
    return exit_io;
  } catch (const IntegrityError& e) {
    err << "io error: " << e.what() << "\n";
    return exit_io;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
    return exit_io;
  }
}

struct Overrides {
  std::string config_path;
  std::optional<long> seed;
  std::optional<std::string> out;
  std::optional<int> precision;
  bool paper_scale = false;
};

// Defaults, then --paper-scale, then the config file, then flags.
inline RunConfig resolve_config(const std::string& task, const Overrides& o) {
  RunConfig c;
  c.set("task", task);
  if (o.paper_scale) c.apply_paper_scale();
  if (!o.config_path.empty()) {
    c = RunConfig::load(o.config_path, c);
    if (c.text("task") != task) throw ConfigError("config file task '" + c.text("task") + "' does not match '" + task + "'");
  }
  if (o.seed) c.set("seed", std::to_string(*o.seed));
  if (o.out) c.set("out", *o.out);
  if (o.precision) c.set("precision", std::to_string(*o.precision));
  c.resolve();
  return c;
}

inline int run_task(const std::string& task, const Overrides& o, std::ostream& err = std::cerr) {
  RunConfig c;
  try {
    c = resolve_config(task, o);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return exit_io;
  }
  return run(c, err);
}

}  // namespace cli
}  // namespace liftnet
