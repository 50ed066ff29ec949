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

#include "dualpath/degradation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <vector>

#include "dualpath/error.hpp"
#include "dualpath/rng.hpp"

namespace dualpath {
namespace {

struct FamilyInfo {
  DegradationFamily family;
  std::string_view name;
  std::string_view amount_key;
  std::string_view aux_key;  // empty for one-knob families
};

constexpr std::array<FamilyInfo, kNumFamilies> kFamilies{{
    {DegradationFamily::kGaussianBlur, "gaussian_blur", "gaussian_blur.sigma", ""},
    {DegradationFamily::kMotionBlur, "motion_blur", "motion_blur.length", ""},
    {DegradationFamily::kDefocusBlur, "defocus_blur", "defocus_blur.radius", ""},
    {DegradationFamily::kGaussianNoise, "gaussian_noise", "gaussian_noise.std", ""},
    {DegradationFamily::kShotNoise, "shot_noise", "shot_noise.photons", ""},
    {DegradationFamily::kImpulseNoise, "impulse_noise", "impulse_noise.fraction", ""},
    {DegradationFamily::kBrightnessUp, "brightness_up", "brightness_up.factor", ""},
    {DegradationFamily::kLowLight, "low_light", "low_light.gain", "low_light.gamma"},
    {DegradationFamily::kContrastReduction, "contrast_reduction", "contrast_reduction.factor",
     "contrast_reduction.levels"},
    {DegradationFamily::kSaturationShift, "saturation_shift", "saturation_shift.factor", ""},
    {DegradationFamily::kPixelate, "pixelate", "pixelate.block", ""},
    {DegradationFamily::kShadow, "shadow", "shadow.opacity", ""},
}};

// +1: larger value means stronger distortion; -1: smaller value does.
struct RampSpec {
  std::string_view key;
  int direction;
  std::array<double, kNumSeverities> values;
};

constexpr std::array<RampSpec, 14> kBuiltinRamps{{
    {"gaussian_blur.sigma", +1, {0.5, 0.8, 1.1, 1.5, 2.0}},
    {"motion_blur.length", +1, {3, 5, 7, 9, 11}},
    {"defocus_blur.radius", +1, {1.0, 1.5, 2.0, 2.5, 3.0}},
    {"gaussian_noise.std", +1, {0.04, 0.08, 0.12, 0.16, 0.22}},
    {"shot_noise.photons", -1, {60, 25, 12, 5, 3}},
    {"impulse_noise.fraction", +1, {0.01, 0.03, 0.05, 0.08, 0.12}},
    {"brightness_up.factor", +1, {1.3, 1.6, 1.9, 2.3, 2.8}},
    {"low_light.gain", -1, {0.8, 0.65, 0.5, 0.38, 0.28}},
    {"low_light.gamma", +1, {1.2, 1.4, 1.6, 1.8, 2.0}},
    {"contrast_reduction.factor", -1, {0.75, 0.6, 0.45, 0.3, 0.2}},
    {"contrast_reduction.levels", -1, {64, 32, 16, 12, 8}},
    {"saturation_shift.factor", +1, {1.5, 2.0, 3.0, 4.0, 6.0}},
    {"pixelate.block", +1, {2, 3, 4, 6, 8}},
    {"shadow.opacity", +1, {0.2, 0.35, 0.5, 0.65, 0.8}},
}};

const FamilyInfo& info(DegradationFamily family) {
  for (const auto& f : kFamilies) {
    if (f.family == family) return f;
  }
  throw UsageError("unknown degradation family");
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

Image from_doubles(const Image& like, const std::vector<double>& values) {
  Image out(like.height, like.width, like.channels);
  for (std::size_t i = 0; i < values.size(); ++i) out.pixels[i] = static_cast<float>(clamp01(values[i]));
  return out;
}

std::vector<double> to_doubles(const Image& image) { return {image.pixels.begin(), image.pixels.end()}; }

// Odd square kernel, replicated borders.
struct Kernel {
  std::size_t radius = 0;
  std::vector<double> weights;  // (2r+1)^2, row-major, sums to 1
  double& at(std::size_t y, std::size_t x) { return weights[y * (2 * radius + 1) + x]; }
  double at(std::size_t y, std::size_t x) const { return weights[y * (2 * radius + 1) + x]; }
};

Kernel make_kernel(std::size_t radius) {
  Kernel k;
  k.radius = radius;
  k.weights.assign((2 * radius + 1) * (2 * radius + 1), 0.0);
  return k;
}

void normalize(Kernel& k) {
  double total = 0.0;
  for (double w : k.weights) total += w;
  for (double& w : k.weights) w /= total;
}

Image convolve(const Image& image, const Kernel& k) {
  const auto h = static_cast<std::ptrdiff_t>(image.height);
  const auto w = static_cast<std::ptrdiff_t>(image.width);
  const auto r = static_cast<std::ptrdiff_t>(k.radius);
  std::vector<double> out(image.pixels.size(), 0.0);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
          const auto sy = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y + dy, 0, h - 1));
          for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
            const double wgt = k.at(static_cast<std::size_t>(dy + r), static_cast<std::size_t>(dx + r));
            if (wgt == 0.0) continue;
            const auto sx = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x + dx, 0, w - 1));
            acc += wgt * image.at(sy, sx, c);
          }
        }
        out[(static_cast<std::size_t>(y) * image.width + static_cast<std::size_t>(x)) * image.channels + c] = acc;
      }
    }
  }
  return from_doubles(image, out);
}

Kernel gaussian_kernel(double sigma) {
  Kernel k = make_kernel(static_cast<std::size_t>(std::ceil(3.0 * sigma)));
  const auto r = static_cast<double>(k.radius);
  for (std::size_t y = 0; y < 2 * k.radius + 1; ++y) {
    for (std::size_t x = 0; x < 2 * k.radius + 1; ++x) {
      const double dy = static_cast<double>(y) - r;
      const double dx = static_cast<double>(x) - r;
      k.at(y, x) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  }
  normalize(k);
  return k;
}

// A line of the given length through the centre, rasterised with bilinear
// splatting of densely spaced samples.
Kernel motion_kernel(double length, double angle) {
  Kernel k = make_kernel(static_cast<std::size_t>(std::ceil((length - 1.0) / 2.0)));
  const auto r = static_cast<double>(k.radius);
  const int samples = static_cast<int>(8.0 * length);
  for (int i = 0; i < samples; ++i) {
    const double t = (length - 1.0) * (static_cast<double>(i) / (samples - 1) - 0.5);
    const double px = r + t * std::cos(angle);
    const double py = r + t * std::sin(angle);
    const double fx = std::floor(px), fy = std::floor(py);
    const double ax = px - fx, ay = py - fy;
    const auto splat = [&](double yy, double xx, double wgt) {
      if (yy < 0 || xx < 0 || yy > 2 * r || xx > 2 * r) return;
      k.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) += wgt;
    };
    splat(fy, fx, (1 - ay) * (1 - ax));
    splat(fy, fx + 1, (1 - ay) * ax);
    splat(fy + 1, fx, ay * (1 - ax));
    splat(fy + 1, fx + 1, ay * ax);
  }
  normalize(k);
  return k;
}

// Disk of the given radius; each cell weighted by its covered fraction.
Kernel disk_kernel(double radius) {
  Kernel k = make_kernel(static_cast<std::size_t>(std::ceil(radius)));
  const auto r = static_cast<double>(k.radius);
  constexpr int kSub = 8;
  for (std::size_t y = 0; y < 2 * k.radius + 1; ++y) {
    for (std::size_t x = 0; x < 2 * k.radius + 1; ++x) {
      int inside = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double dy = static_cast<double>(y) - r + (sy + 0.5) / kSub - 0.5;
          const double dx = static_cast<double>(x) - r + (sx + 0.5) / kSub - 0.5;
          if (dx * dx + dy * dy <= radius * radius) ++inside;
        }
      }
      k.at(y, x) = static_cast<double>(inside) / (kSub * kSub);
    }
  }
  normalize(k);
  return k;
}

// Inverse-CDF Poisson draw; one uniform per sample keeps draws coupled
// across rates for a fixed seed.
int poisson_inverse(double mean, double u) {
  double p = std::exp(-mean);
  double cdf = p;
  int k = 0;
  while (u > cdf && k < 100000) {
    ++k;
    p *= mean / k;
    cdf += p;
    if (p == 0.0 && k > mean) break;
  }
  return k;
}

double smoothstep(double t) {
  t = clamp01(t);
  return t * t * (3.0 - 2.0 * t);
}

Image pixelate(const Image& image, std::size_t block) {
  Image out(image.height, image.width, image.channels);
  for (std::size_t by = 0; by < image.height; by += block) {
    for (std::size_t bx = 0; bx < image.width; bx += block) {
      const std::size_t ey = std::min(by + block, image.height);
      const std::size_t ex = std::min(bx + block, image.width);
      for (std::size_t c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (std::size_t y = by; y < ey; ++y) {
          for (std::size_t x = bx; x < ex; ++x) acc += image.at(y, x, c);
        }
        const auto mean = static_cast<float>(acc / static_cast<double>((ey - by) * (ex - bx)));
        for (std::size_t y = by; y < ey; ++y) {
          for (std::size_t x = bx; x < ex; ++x) out.at(y, x, c) = std::clamp(mean, 0.0f, 1.0f);
        }
      }
    }
  }
  return out;
}

std::uint64_t stream_of(DegradationFamily family) { return 0x646567ULL + static_cast<std::uint64_t>(family); }

}  // namespace

const std::array<DegradationFamily, kNumFamilies>& all_families() {
  static const auto families = [] {
    std::array<DegradationFamily, kNumFamilies> out{};
    for (std::size_t i = 0; i < kNumFamilies; ++i) out[i] = kFamilies[i].family;
    return out;
  }();
  return families;
}

std::string_view to_string(DegradationFamily family) { return info(family).name; }

DegradationFamily parse_family(std::string_view name) {
  for (const auto& f : kFamilies) {
    if (f.name == name) return f.family;
  }
  throw UsageError("unknown degradation family '" + std::string(name) + "'");
}

const SeverityTable& SeverityTable::builtin() {
  static const SeverityTable table = [] {
    SeverityTable t;
    for (const auto& ramp : kBuiltinRamps) t.set(std::string(ramp.key), ramp.values);
    t.validate();
    return t;
  }();
  return table;
}

void SeverityTable::validate() const {
  for (const auto& spec : kBuiltinRamps) {
    const auto it = ramps_.find(std::string(spec.key));
    if (it == ramps_.end()) throw DataError("severity table lacks '" + std::string(spec.key) + "'");
    const auto& r = it->second;
    for (int s = 0; s < kNumSeverities; ++s) {
      if (!std::isfinite(r[s])) throw DataError("non-finite entry in '" + std::string(spec.key) + "'");
      if (s > 0 && !(spec.direction * (r[s] - r[s - 1]) > 0.0)) {
        throw DataError("ramp '" + std::string(spec.key) + "' is not strictly monotone in distortion strength");
      }
    }
  }
  for (const auto& [key, ramp] : ramps_) {
    (void)ramp;
    const bool known = std::any_of(kBuiltinRamps.begin(), kBuiltinRamps.end(),
                                   [&](const RampSpec& s) { return s.key == key; });
    if (!known) throw DataError("severity table has unknown key '" + key + "'");
  }
}

double SeverityTable::value(std::string_view key, int severity) const {
  if (severity < 1 || severity > kNumSeverities) {
    throw UsageError("severity " + std::to_string(severity) + " outside 1.." + std::to_string(kNumSeverities));
  }
  const auto it = ramps_.find(std::string(key));
  if (it == ramps_.end()) throw DataError("severity table lacks '" + std::string(key) + "'");
  return it->second[static_cast<std::size_t>(severity - 1)];
}

SeverityTable SeverityTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open severity table " + path.string());
  SeverityTable table;
  std::string line;
  bool saw_version = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string key;
    if (!(fields >> key)) continue;
    if (key == "version") {
      int version = 0;
      if (!(fields >> version) || version != kVersion) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": unsupported version");
      }
      saw_version = true;
      continue;
    }
    std::array<double, kNumSeverities> ramp{};
    for (auto& v : ramp) {
      if (!(fields >> v)) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(kNumSeverities) + " values for '" + key + "'");
      }
    }
    std::string extra;
    if (fields >> extra) throw DataError(path.string() + ":" + std::to_string(line_no) + ": trailing data");
    table.set(key, ramp);
  }
  if (!saw_version) throw DataError(path.string() + ": missing version line");
  table.validate();
  return table;
}

void SeverityTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write severity table " + path.string());
  out << "# Degradation parameter per severity level 1..5.\n";
  out << "version " << kVersion << "\n";
  for (const auto& [key, ramp] : ramps_) {
    out << key;
    for (double v : ramp) {
      char buf[32];
      const auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

FamilyParams family_params(DegradationFamily family, int severity, const SeverityTable& table) {
  const FamilyInfo& f = info(family);
  FamilyParams p;
  p.amount = table.value(f.amount_key, severity);
  if (!f.aux_key.empty()) p.aux = table.value(f.aux_key, severity);
  return p;
}

Image apply_family(const Image& image, DegradationFamily family, FamilyParams params, std::uint64_t seed) {
  Philox rng(seed, stream_of(family));
  std::vector<double> v = to_doubles(image);
  switch (family) {
    case DegradationFamily::kGaussianBlur:
      return convolve(image, gaussian_kernel(params.amount));
    case DegradationFamily::kMotionBlur:
      return convolve(image, motion_kernel(params.amount, std::numbers::pi * rng.uniform()));
    case DegradationFamily::kDefocusBlur:
      return convolve(image, disk_kernel(params.amount));
    case DegradationFamily::kGaussianNoise:
      for (double& x : v) x += params.amount * rng.normal();
      break;
    case DegradationFamily::kShotNoise:
      for (double& x : v) x = poisson_inverse(params.amount * x, rng.uniform()) / params.amount;
      break;
    case DegradationFamily::kImpulseNoise:
      for (std::size_t p = 0; p < image.height * image.width; ++p) {
        const double hit = rng.uniform();
        const double salt = rng.uniform() < 0.5 ? 0.0 : 1.0;
        if (hit < params.amount) {
          for (std::size_t c = 0; c < image.channels; ++c) v[p * image.channels + c] = salt;
        }
      }
      break;
    case DegradationFamily::kBrightnessUp:
      for (double& x : v) x = std::pow(x, 1.0 / params.amount);
      break;
    case DegradationFamily::kLowLight:
      for (double& x : v) x = params.amount * std::pow(x, params.aux);
      break;
    case DegradationFamily::kContrastReduction: {
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(std::max<std::size_t>(v.size(), 1));
      const double steps = std::max(1.0, params.aux - 1.0);
      for (double& x : v) x = std::round(clamp01(mean + params.amount * (x - mean)) * steps) / steps;
      break;
    }
    case DegradationFamily::kSaturationShift:
      if (image.channels == 3) {
        for (std::size_t p = 0; p < image.height * image.width; ++p) {
          double* px = &v[p * 3];
          const double luma = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
          for (int c = 0; c < 3; ++c) px[c] = luma + params.amount * (px[c] - luma);
        }
      }
      break;
    case DegradationFamily::kPixelate:
      return pixelate(image, static_cast<std::size_t>(std::max(1.0, std::round(params.amount))));
    case DegradationFamily::kShadow: {
      const bool radial = rng.uniform() < 0.5;
      const double angle = 2.0 * std::numbers::pi * rng.uniform();
      const double cy = rng.uniform(), cx = rng.uniform();
      const double reach = 0.4 + 0.6 * rng.uniform();
      for (std::size_t y = 0; y < image.height; ++y) {
        for (std::size_t x = 0; x < image.width; ++x) {
          const double ny = (static_cast<double>(y) + 0.5) / static_cast<double>(image.height);
          const double nx = (static_cast<double>(x) + 0.5) / static_cast<double>(image.width);
          double mask;
          if (radial) {
            mask = 1.0 - smoothstep(std::hypot(ny - cy, nx - cx) / reach);
          } else {
            const double t = (nx - 0.5) * std::cos(angle) + (ny - 0.5) * std::sin(angle);
            mask = smoothstep(0.5 + t / reach);
          }
          for (std::size_t c = 0; c < image.channels; ++c) {
            v[(y * image.width + x) * image.channels + c] *= 1.0 - params.amount * mask;
          }
        }
      }
      break;
    }
  }
  return from_doubles(image, v);
}

Image degrade(const Image& image, const DegradationSpec& spec, const SeverityTable& table) {
  for (float p : image.pixels) {
    if (!(p >= 0.0f && p <= 1.0f)) throw DataError("degrade: input pixels must lie in [0, 1]");
  }
  return apply_family(image, spec.family, family_params(spec.family, spec.severity, table), spec.seed);
}

Image reference_image(std::size_t height, std::size_t width, std::uint64_t seed) {
  Philox rng(seed, 0x726566ULL);
  Image img(height, width, 3);
  const auto h = static_cast<double>(height), w = static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double ny = static_cast<double>(y) / h, nx = static_cast<double>(x) / w;
      img.at(y, x, 0) = static_cast<float>(0.25 + 0.5 * nx);
      img.at(y, x, 1) = static_cast<float>(0.25 + 0.5 * ny);
      img.at(y, x, 2) = static_cast<float>(0.5 + 0.25 * std::sin(6.0 * (nx + ny)));
    }
  }
  for (int i = 0; i < 24; ++i) {
    const std::size_t side = 1 + rng.below(std::max<std::size_t>(2, std::min(height, width) / 3));
    const std::size_t y0 = rng.below(height), x0 = rng.below(width);
    float colour[3];
    for (float& c : colour) c = static_cast<float>(0.05 + 0.9 * rng.uniform());
    for (std::size_t y = y0; y < std::min(height, y0 + side); ++y) {
      for (std::size_t x = x0; x < std::min(width, x0 + side + rng.below(3)); ++x) {
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = colour[c];
      }
    }
  }
  for (auto& v : img.pixels) v = std::clamp(v + static_cast<float>(0.03 * rng.normal()), 0.0f, 1.0f);
  return img;
}

double psnr(const Image& a, const Image& b) {
  if (!a.same_dims(b)) throw ShapeError("psnr: image dimensions differ");
  if (a.pixels.empty()) throw ShapeError("psnr: empty images");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.pixels.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace dualpath
