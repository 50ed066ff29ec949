// Copyright 2026 The dualpath Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace dualpath {

// Boolean rows x cols matrix; entry (i, j) true means query i may attend to key j.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t rows, std::size_t cols, bool fill)
      : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

  static AttentionMask all(std::size_t rows, std::size_t cols) { return {rows, cols, true}; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  bool allowed(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { bits_[r * cols_ + c] = v ? 1 : 0; }

  bool row_has_key(std::size_t r) const {
    for (std::size_t c = 0; c < cols_; ++c) {
      if (allowed(r, c)) return true;
    }
    return false;
  }

  bool well_formed() const {
    for (std::size_t r = 0; r < rows_; ++r) {
      if (!row_has_key(r)) return false;
    }
    return true;
  }

  bool operator==(const AttentionMask&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

}  // namespace dualpath
