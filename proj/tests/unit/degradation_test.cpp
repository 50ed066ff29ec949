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

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dualpath/degradation.hpp"
#include "dualpath/error.hpp"
#include "scratch_dir.hpp"

namespace dualpath {
namespace {

Image gradient_image(std::size_t h, std::size_t w, std::size_t c) {
  Image img(h, w, c);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < c; ++k) {
        img.at(y, x, k) = static_cast<float>((y * w + x + 7 * k) % (h * w)) / static_cast<float>(h * w);
      }
    }
  }
  return img;
}

TEST(Families, NamesRoundTrip) {
  ASSERT_EQ(all_families().size(), 12u);
  for (auto f : all_families()) EXPECT_EQ(parse_family(to_string(f)), f);
  EXPECT_THROW(parse_family("jpeg"), UsageError);
}

TEST(Degrade, RepeatedCallsAreBitIdentical) {
  const Image ref = reference_image();
  for (auto f : all_families()) {
    for (int sev = 1; sev <= 5; ++sev) {
      const DegradationSpec spec{f, sev, 1234};
      EXPECT_EQ(degrade(ref, spec), degrade(ref, spec)) << to_string(f) << " " << sev;
    }
  }
}

TEST(Degrade, NoiseDependsOnSeed) {
  const Image ref = reference_image();
  EXPECT_NE(degrade(ref, {DegradationFamily::kGaussianNoise, 3, 1}),
            degrade(ref, {DegradationFamily::kGaussianNoise, 3, 2}));
}

TEST(Degrade, OutputsStayInRangeWithSameDims) {
  const Image ref = reference_image(24, 40, 5);
  for (auto f : all_families()) {
    for (int sev = 1; sev <= 5; ++sev) {
      const Image out = degrade(ref, {f, sev, static_cast<std::uint64_t>(sev) * 31});
      ASSERT_TRUE(out.same_dims(ref));
      for (float v : out.pixels) {
        ASSERT_TRUE(v >= 0.0f && v <= 1.0f) << to_string(f) << " " << sev << " " << v;
      }
    }
  }
}

TEST(Degrade, PsnrStrictlyDecreasesWithSeverityOnReferenceImage) {
  const Image ref = reference_image();
  for (auto f : all_families()) {
    double previous = std::numeric_limits<double>::infinity();
    for (int sev = 1; sev <= 5; ++sev) {
      const double p = psnr(ref, degrade(ref, {f, sev, 99}));
      EXPECT_LT(p, previous) << to_string(f) << " severity " << sev;
      previous = p;
    }
  }
}

TEST(Degrade, RejectsBadSeverityAndInput) {
  const Image ref = reference_image();
  EXPECT_THROW(degrade(ref, {DegradationFamily::kShadow, 0, 1}), UsageError);
  EXPECT_THROW(degrade(ref, {DegradationFamily::kShadow, 6, 1}), UsageError);
  Image bad = ref;
  bad.pixels[3] = 1.5f;
  EXPECT_THROW(degrade(bad, {DegradationFamily::kShadow, 2, 1}), DataError);
}

TEST(Degrade, BrightnessAtUnitFactorIsIdentity) {
  const Image ref = reference_image();
  EXPECT_EQ(apply_family(ref, DegradationFamily::kBrightnessUp, {1.0, 0.0}, 5), ref);
  // The shipped ramp starts strictly above the identity point.
  EXPECT_GT(SeverityTable::builtin().value("brightness_up.factor", 1), 1.0);
}

TEST(Degrade, PixelateSeverityThreeMatchesBlockMeans) {
  const Image img = gradient_image(8, 8, 3);
  const Image out = degrade(img, {DegradationFamily::kPixelate, 3, 0});
  const auto block = static_cast<std::size_t>(SeverityTable::builtin().value("pixelate.block", 3));
  ASSERT_EQ(block, 4u);
  for (std::size_t by = 0; by < 2; ++by) {
    for (std::size_t bx = 0; bx < 2; ++bx) {
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t y = 0; y < 4; ++y) {
          for (std::size_t x = 0; x < 4; ++x) acc += img.at(4 * by + y, 4 * bx + x, c);
        }
        const auto expected = static_cast<float>(acc / 16.0);
        for (std::size_t y = 0; y < 4; ++y) {
          for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(out.at(4 * by + y, 4 * bx + x, c), expected);
        }
      }
    }
  }
}

TEST(Degrade, BlursPreserveConstantImages) {
  const Image flat(16, 16, 3, 0.4f);
  for (auto f : {DegradationFamily::kGaussianBlur, DegradationFamily::kMotionBlur, DegradationFamily::kDefocusBlur,
                 DegradationFamily::kPixelate}) {
    const Image out = degrade(flat, {f, 5, 8});
    for (float v : out.pixels) EXPECT_NEAR(v, 0.4f, 1e-6f) << to_string(f);
  }
}

TEST(Psnr, IdenticalImagesGiveInfinity) {
  const Image ref = reference_image();
  EXPECT_EQ(psnr(ref, ref), std::numeric_limits<double>::infinity());
}

TEST(Psnr, UniformZeroVersusHalf) {
  const Image a(4, 4, 3, 0.0f), b(4, 4, 3, 0.5f);
  EXPECT_NEAR(psnr(a, b), 10.0 * std::log10(4.0), 1e-12);
  EXPECT_NEAR(psnr(a, b), 6.0206, 1e-4);
}

TEST(Psnr, SymmetricAndChecksDims) {
  const Image a = reference_image(), b = degrade(a, {DegradationFamily::kGaussianNoise, 2, 3});
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  EXPECT_THROW(psnr(a, Image(4, 4, 3)), ShapeError);
}

TEST(SeverityTable, ShippedFileMatchesBuiltin) {
  const auto shipped = SeverityTable::load(std::filesystem::path(DUALPATH_DATA_DIR) / "severity_table_v1.txt");
  EXPECT_EQ(shipped, SeverityTable::builtin());
}

TEST(SeverityTable, SaveLoadRoundTrip) {
  testing::ScratchDir dir;
  SeverityTable table = SeverityTable::builtin();
  table.set("gaussian_noise.std", {0.01, 0.1 / 3.0, 0.07, 0.1, 0.3});
  table.save(dir / "t.txt");
  EXPECT_EQ(SeverityTable::load(dir / "t.txt"), table);
}

TEST(SeverityTable, RejectsBrokenTables) {
  SeverityTable table = SeverityTable::builtin();
  table.set("gaussian_blur.sigma", {0.5, 0.4, 1.1, 1.5, 2.0});
  EXPECT_THROW(table.validate(), DataError);
  table = SeverityTable::builtin();
  table.set("shot_noise.photons", {3, 5, 12, 25, 60});  // wrong direction
  EXPECT_THROW(table.validate(), DataError);
  table = SeverityTable::builtin();
  table.set("jpeg.quality", {1, 2, 3, 4, 5});
  EXPECT_THROW(table.validate(), DataError);

  testing::ScratchDir dir;
  std::ofstream(dir / "v2.txt") << "version 2\n";
  EXPECT_THROW(SeverityTable::load(dir / "v2.txt"), DataError);
  std::ofstream(dir / "short.txt") << "version 1\ngaussian_blur.sigma 1 2 3\n";
  EXPECT_THROW(SeverityTable::load(dir / "short.txt"), DataError);
  std::ofstream(dir / "missing.txt") << "version 1\n";
  EXPECT_THROW(SeverityTable::load(dir / "missing.txt"), DataError);
  EXPECT_THROW(SeverityTable::load(dir / "absent.txt"), DataError);
}

TEST(SeverityTable, CustomTableChangesOutput) {
  SeverityTable table = SeverityTable::builtin();
  table.set("gaussian_noise.std", {0.01, 0.02, 0.03, 0.04, 0.5});
  const Image ref = reference_image();
  const DegradationSpec spec{DegradationFamily::kGaussianNoise, 5, 4};
  EXPECT_LT(psnr(ref, degrade(ref, spec, table)), psnr(ref, degrade(ref, spec)));
}

}  // namespace
}  // namespace dualpath
