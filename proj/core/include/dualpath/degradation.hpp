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
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "dualpath/image.hpp"

namespace dualpath {

enum class DegradationFamily {
  kGaussianBlur,
  kMotionBlur,
  kDefocusBlur,
  kGaussianNoise,
  kShotNoise,
  kImpulseNoise,
  kBrightnessUp,
  kLowLight,
  kContrastReduction,
  kSaturationShift,
  kPixelate,
  kShadow,
};

inline constexpr std::size_t kNumFamilies = 12;
inline constexpr int kNumSeverities = 5;

const std::array<DegradationFamily, kNumFamilies>& all_families();
std::string_view to_string(DegradationFamily family);
DegradationFamily parse_family(std::string_view name);  // throws UsageError

// Clean images carry no spec at all; severities run 1..5.
struct DegradationSpec {
  DegradationFamily family = DegradationFamily::kGaussianBlur;
  int severity = 1;
  std::uint64_t seed = 0;
  bool operator==(const DegradationSpec&) const = default;
};

// Per-family parameter ramps, one value per severity, keyed "family.param".
// Each ramp is strictly monotone in the direction that strengthens the
// distortion (e.g. blur sigma rises, photon count falls).
class SeverityTable {
 public:
  static constexpr int kVersion = 1;

  static const SeverityTable& builtin();
  static SeverityTable load(const std::filesystem::path& path);  // throws DataError
  void save(const std::filesystem::path& path) const;

  // Throws DataError for a missing key, wrong direction or non-finite entry.
  void validate() const;
  double value(std::string_view key, int severity) const;
  void set(const std::string& key, const std::array<double, kNumSeverities>& ramp) { ramps_[key] = ramp; }
  const std::map<std::string, std::array<double, kNumSeverities>>& ramps() const { return ramps_; }
  bool operator==(const SeverityTable&) const = default;

 private:
  std::map<std::string, std::array<double, kNumSeverities>> ramps_;
};

// Parameters of one family at one strength. `amount` is the family's main
// knob; `aux` is the second knob for the two-parameter families (low-light
// gamma, contrast quantization levels) and ignored elsewhere.
struct FamilyParams {
  double amount = 0.0;
  double aux = 0.0;
};
FamilyParams family_params(DegradationFamily family, int severity, const SeverityTable& table);

// Applies one family at explicit parameters. Output has the input's
// dimensions and is clamped to [0, 1].
Image apply_family(const Image& image, DegradationFamily family, FamilyParams params, std::uint64_t seed);

// Pure function of (image, spec, table).
Image degrade(const Image& image, const DegradationSpec& spec, const SeverityTable& table = SeverityTable::builtin());

// Seeded colour chart with content at several spatial scales (smooth
// gradients, blocks of assorted sizes, fine dashes). Used to calibrate and
// check the severity ramps.
Image reference_image(std::size_t height = 32, std::size_t width = 32, std::uint64_t seed = 2024);

// 10 log10(1 / MSE) in dB; +infinity for identical images.
double psnr(const Image& a, const Image& b);

}  // namespace dualpath
