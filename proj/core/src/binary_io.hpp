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

// Little-endian record helpers shared by the binary file formats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "dualpath/error.hpp"

namespace dualpath::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f32(float v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw DataError(what_ + ": truncated file");
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  float f32() {
    float v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str(std::size_t max_len = 1 << 20) {
    const std::uint32_t n = u32();
    if (n > max_len) throw DataError(what_ + ": implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  void expect_magic(const char (&magic)[5]) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, magic, 4) != 0) throw DataError(what_ + ": bad magic");
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw DataError(what_ + ": trailing bytes");
  }

 private:
  std::istream& in_;
  std::string what_;
};

}  // namespace dualpath::detail
