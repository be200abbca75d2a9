/*
 * core.hpp - shared types, errors and extended-real helpers
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

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace liftnet {

using Index = Eigen::Index;

template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Batches store one sample per column.
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsupportedComposition : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericalAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ContractViolation(msg);
}
// Literal messages avoid a string construction on the success path.
inline void require(bool ok, const char* msg) {
  if (!ok) throw ContractViolation(msg);
}

template <class T>
constexpr T infinity() {
  return std::numeric_limits<T>::infinity();
}

template <class T>
bool is_infinite(T v) {
  return v == infinity<T>();
}

// Segment sizes of a stacked variable with derived offsets.
class SegmentLayout {
 public:
  SegmentLayout() = default;
  explicit SegmentLayout(std::vector<Index> sizes) : sizes_(std::move(sizes)) {
    offsets_.reserve(sizes_.size());
    Index off = 0;
    for (Index s : sizes_) {
      require(s > 0, "segment sizes must be positive");
      offsets_.push_back(off);
      off += s;
    }
    total_ = off;
  }

  std::size_t count() const { return sizes_.size(); }
  Index size(std::size_t i) const { return sizes_.at(i); }
  Index offset(std::size_t i) const { return offsets_.at(i); }
  Index total() const { return total_; }
  const std::vector<Index>& sizes() const { return sizes_; }

  bool operator==(const SegmentLayout& o) const { return sizes_ == o.sizes_; }

 private:
  std::vector<Index> sizes_;
  std::vector<Index> offsets_;
  Index total_ = 0;
};

}  // namespace liftnet
