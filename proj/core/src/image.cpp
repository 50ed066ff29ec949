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

#include "dualpath/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>

#include "dualpath/error.hpp"

namespace dualpath {
namespace {

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string token;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  return token;
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path) {
  const std::string token = header_token(in);
  if (token.empty() || !std::all_of(token.begin(), token.end(), ::isdigit)) {
    throw DataError("malformed PPM header in " + path.string());
  }
  return std::stoul(token);
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  if (header_token(in) != "P6") throw DataError("not a binary PPM (P6): " + path.string());
  const std::size_t width = header_number(in, path);
  const std::size_t height = header_number(in, path);
  const std::size_t maxval = header_number(in, path);
  if (maxval != 255) throw DataError("unsupported PPM maxval in " + path.string());
  Image image(height, width, 3);
  std::vector<char> raw(image.pixels.size());
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw DataError("truncated PPM " + path.string());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    image.pixels[i] = static_cast<float>(static_cast<std::uint8_t>(raw[i])) / 255.0f;
  }
  return image;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3) throw DataError("PPM output needs 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<char> raw(image.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<char>(to_byte(image.pixels[i]));
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("short write to " + path.string());
}

Image quantize_8bit(const Image& image) {
  Image out = image;
  for (auto& v : out.pixels) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

}  // namespace dualpath
