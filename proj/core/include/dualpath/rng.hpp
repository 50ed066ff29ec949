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

#include <array>
#include <cstdint>
#include <string_view>

namespace dualpath {

// Philox4x32-10 (Salmon et al., Random123) used in counter mode.
//
// Stream layout, version 1: the 64-bit seed is the Philox key (low word
// first); each 128-bit counter block is {index_lo, index_hi, stream_lo,
// stream_hi}, where `index` increments once per block and `stream` separates
// independent uses of the same seed. Each block yields four 32-bit words,
// consumed in order. Every random quantity in the library is derived from
// this generator, so outputs are reproducible across platforms.
class Philox {
 public:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr std::uint32_t kVersion = 1;

  Philox(std::uint64_t seed, std::uint64_t stream = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)}, stream_(stream) {}

  // The raw bijection: 10 rounds over `counter` under `key`.
  static Block block(Block counter, Key key);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n), unbiased (rejection). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller on two uniforms.
  double normal();

 private:
  Key key_;
  std::uint64_t stream_;
  std::uint64_t index_ = 0;
  Block buffer_{};
  unsigned used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finalizer; a bijective 64-bit mixer.
std::uint64_t mix64(std::uint64_t x);

// FNV-1a over the bytes of `text`.
std::uint64_t fnv1a64(std::string_view text);

// Child seeds. derive_seed(master, "doc_0001") is how per-item seeds are
// formed (hash(master_seed, doc_id)); derive_seed(master, step) is used for
// per-step batch seeds.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace dualpath
