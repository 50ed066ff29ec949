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

#include "dualpath/encoder.hpp"
#include "dualpath/grad_check.hpp"
#include "dualpath/rng.hpp"

namespace dualpath {
namespace {

Image random_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  Philox rng(seed);
  Image img(h, w, c);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

EncoderConfig small_config(Philox& rng) {
  EncoderConfig cfg;
  cfg.patch = 2 + rng.below(2) * 2;  // 2 or 4
  cfg.image_height = cfg.patch * (1 + rng.below(3));
  cfg.image_width = cfg.patch * (1 + rng.below(3));
  cfg.channels = 1 + rng.below(3);
  cfg.heads = 1 + rng.below(2);
  cfg.dim = cfg.heads * (2 + rng.below(3));
  cfg.layers = 1 + rng.below(2);
  cfg.mlp_hidden = 3 + rng.below(4);
  cfg.aggregation = rng.below(2) == 0 ? Aggregation::kMean : Aggregation::kCls;
  return cfg;
}

TEST(Patchify, TwoByTwoLayout) {
  EncoderConfig cfg;
  cfg.image_height = cfg.image_width = 4;
  cfg.channels = 1;
  cfg.patch = 2;
  cfg.dim = 2;
  cfg.heads = 1;
  Image img(4, 4, 1);
  for (std::size_t i = 0; i < 16; ++i) img.pixels[i] = static_cast<float>(i) / 16.0f;
  const auto p = patchify<double>(img, cfg);
  ASSERT_EQ(p.rows(), 4u);
  ASSERT_EQ(p.cols(), 4u);
  // Token 0 is the top-left 2x2 block: pixels (0,0) (0,1) (1,0) (1,1).
  EXPECT_EQ(p(0, 0), 0.0 / 16);
  EXPECT_EQ(p(0, 1), 1.0 / 16);
  EXPECT_EQ(p(0, 2), 4.0 / 16);
  EXPECT_EQ(p(0, 3), 5.0 / 16);
  // Token 1 is the top-right block.
  EXPECT_EQ(p(1, 0), 2.0 / 16);
}

TEST(Patchify, ConstantImage) {
  EncoderConfig cfg;
  Image img(32, 32, 3, 0.25f);
  const auto p = patchify<float>(img, cfg);
  for (float v : p.span()) EXPECT_EQ(v, 0.25f);
}

TEST(Patchify, MatchesSlowReindexOracle) {
  EncoderConfig cfg;
  cfg.image_height = cfg.image_width = 8;
  cfg.patch = 4;
  const Image img = random_image(8, 8, 3, 17);
  const auto p = patchify<double>(img, cfg);
  for (std::size_t t = 0; t < 4; ++t) {
    const std::size_t gy = t / 2, gx = t % 2;
    for (std::size_t k = 0; k < 48; ++k) {
      const std::size_t y = k / 12, x = (k / 3) % 4, c = k % 3;
      EXPECT_EQ(p(t, k), static_cast<double>(img.at(gy * 4 + y, gx * 4 + x, c)));
    }
  }
}

TEST(Patchify, DimensionMismatchThrows) {
  EncoderConfig cfg;
  EXPECT_THROW(patchify<float>(Image(16, 32, 3), cfg), ShapeError);
}

TEST(BuildMasks, UnidirectionalTwoTokens) {
  const auto m = build_masks(2, false);
  EXPECT_EQ(m.causal, AttentionMask::all(2, 2));
  EXPECT_EQ(m.noncausal, AttentionMask::all(1, 2));
  EXPECT_FALSE(m.joint);
}

TEST(BuildMasks, BidirectionalIsOneJointMask) {
  const auto m = build_masks(2, true);
  EXPECT_EQ(m.causal, AttentionMask::all(3, 3));
  EXPECT_TRUE(m.joint);
}

TEST(BuildMasks, SingleToken) {
  const auto m = build_masks(1, false);
  EXPECT_EQ(m.causal, AttentionMask::all(1, 1));
  EXPECT_EQ(m.noncausal, AttentionMask::all(1, 1));
}

TEST(BuildMasks, ZeroTokensRejected) { EXPECT_THROW(build_masks(0, false), UsageError); }

TEST(BuildMasks, ClsTokenIsNotReadByNonCausalToken) {
  const auto m = build_masks(3, false, true);
  EXPECT_EQ(m.causal, AttentionMask::all(4, 4));
  EXPECT_FALSE(m.noncausal.allowed(0, 0));
  EXPECT_TRUE(m.noncausal.allowed(0, 3));
}

TEST(EncoderConfig, RejectsBadGeometry) {
  EncoderConfig cfg;
  cfg.patch = 5;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = {};
  cfg.heads = 3;
  EXPECT_THROW(cfg.validate(), UsageError);
}

TEST(Aggregate, MeanOfTwoTokens) {
  const auto z = aggregate(Tensor<double>::from_rows({{1, 3}, {3, 1}}), Aggregation::kMean);
  EXPECT_EQ(z, Tensor<double>::from_rows({{2, 2}}));
}

TEST(Aggregate, SingleTokenMean) {
  const auto z = aggregate(Tensor<double>::from_rows({{0.5, -1.5, 2}}), Aggregation::kMean);
  EXPECT_EQ(z, Tensor<double>::from_rows({{0.5, -1.5, 2}}));
}

TEST(Aggregate, MeanMatchesSummationOracle) {
  Philox rng(8);
  Tensor<double> tokens = Tensor<double>::matrix(5, 4);
  for (auto& v : tokens.span()) v = rng.normal();
  const auto z = aggregate(tokens, Aggregation::kMean);
  for (std::size_t j = 0; j < 4; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < 5; ++i) s += tokens(i, j);
    EXPECT_NEAR(z[j], s / 5.0, 1e-15);
  }
}

TEST(Aggregate, ClsPicksDesignatedToken) {
  const auto z = aggregate(Tensor<double>::from_rows({{7, 8}, {1, 2}}), Aggregation::kCls);
  EXPECT_EQ(z, Tensor<double>::from_rows({{7, 8}}));
}

EncoderWeights<double> zero_projection_weights(const EncoderConfig& cfg, std::uint64_t seed) {
  auto w = init_encoder(cfg, seed).cast<double>();
  for (auto& L : w.layers) {
    for (auto* t : {&L.wq, &L.wk, &L.wv, &L.wo, &L.w1, &L.b1, &L.w2, &L.b2}) {
      for (auto& v : t->span()) v = 0.0;
    }
  }
  return w;
}

TEST(ForwardDual, ZeroProjectionsPassEmbeddingsThrough) {
  EncoderConfig cfg;
  const auto w = zero_projection_weights(cfg, 3);
  const Image img = random_image(32, 32, 3, 4);
  const auto out = forward_dual(img, w, cfg);

  Tape<double> tape;
  auto emb = add(add_row(matmul(tape.constant(patchify<double>(img, cfg)), tape.constant(w.patch_proj)),
                         tape.constant(w.patch_bias)),
                 tape.constant(w.pos_embed));
  EXPECT_EQ(out.sem_tokens, emb.value());
  ASSERT_TRUE(out.z_deg.has_value());
  EXPECT_EQ(*out.z_deg, w.nc_init);
  // And z_sem is the mean of the embedded patches.
  EXPECT_EQ(forward_inference(img, w, cfg), aggregate(emb.value(), Aggregation::kMean));
}

TEST(ForwardDual, NonCausalInitDoesNotReachSemantics) {
  EncoderConfig cfg;
  auto w = init_encoder(cfg, 5);
  const Image img = random_image(32, 32, 3, 6);
  const auto a = forward_dual(img, w, cfg);
  for (auto& v : w.nc_init.span()) v = v * -3.0f + 0.7f;
  const auto b = forward_dual(img, w, cfg);
  EXPECT_EQ(a.sem_tokens, b.sem_tokens);
  EXPECT_EQ(a.z_sem, b.z_sem);
  EXPECT_NE(*a.z_deg, *b.z_deg);
}

// Straight-line evaluation of a T=2, d=2, one-head, one-layer encoder on a
// 2x4 single-channel image (two 2x2 patches). Written without the tape or
// the encoder's helpers.
struct UnrolledOutput {
  double x[2][2];
  double z[2];
};

UnrolledOutput unrolled_forward(const Image& img, const EncoderWeights<double>& w) {
  const double p0[4] = {img.at(0, 0, 0), img.at(0, 1, 0), img.at(1, 0, 0), img.at(1, 1, 0)};
  const double p1[4] = {img.at(0, 2, 0), img.at(0, 3, 0), img.at(1, 2, 0), img.at(1, 3, 0)};
  const auto& W = w.patch_proj;
  double x[2][2];
  x[0][0] = p0[0] * W(0, 0) + p0[1] * W(1, 0) + p0[2] * W(2, 0) + p0[3] * W(3, 0) + w.patch_bias[0] + w.pos_embed(0, 0);
  x[0][1] = p0[0] * W(0, 1) + p0[1] * W(1, 1) + p0[2] * W(2, 1) + p0[3] * W(3, 1) + w.patch_bias[1] + w.pos_embed(0, 1);
  x[1][0] = p1[0] * W(0, 0) + p1[1] * W(1, 0) + p1[2] * W(2, 0) + p1[3] * W(3, 0) + w.patch_bias[0] + w.pos_embed(1, 0);
  x[1][1] = p1[0] * W(0, 1) + p1[1] * W(1, 1) + p1[2] * W(2, 1) + p1[3] * W(3, 1) + w.patch_bias[1] + w.pos_embed(1, 1);
  double z[2] = {w.nc_init[0], w.nc_init[1]};
  const auto& L = w.layers[0];
  const double eps = 1e-5;

  // Layer norm of a 2-vector: mean m, var ((a-m)^2 + (b-m)^2) / 2.
  auto ln = [eps](const double v[2], const Tensor<double>& g, const Tensor<double>& b, double out[2]) {
    const double m = (v[0] + v[1]) / 2.0;
    const double var = ((v[0] - m) * (v[0] - m) + (v[1] - m) * (v[1] - m)) / 2.0;
    const double is = 1.0 / std::sqrt(var + eps);
    out[0] = (v[0] - m) * is * g[0] + b[0];
    out[1] = (v[1] - m) * is * g[1] + b[1];
  };
  auto proj = [](const double h[2], const Tensor<double>& M, double out[2]) {
    out[0] = h[0] * M(0, 0) + h[1] * M(1, 0);
    out[1] = h[0] * M(0, 1) + h[1] * M(1, 1);
  };

  double h0[2], h1[2], hz[2];
  ln(x[0], L.ln1_gamma, L.ln1_beta, h0);
  ln(x[1], L.ln1_gamma, L.ln1_beta, h1);
  ln(z, L.ln1_gamma, L.ln1_beta, hz);
  double q0[2], q1[2], qz[2], k0[2], k1[2], v0[2], v1[2];
  proj(h0, L.wq, q0);
  proj(h1, L.wq, q1);
  proj(hz, L.wq, qz);
  proj(h0, L.wk, k0);
  proj(h1, L.wk, k1);
  proj(h0, L.wv, v0);
  proj(h1, L.wv, v1);
  const double s = 1.0 / std::sqrt(2.0);
  // Two-key softmax weight on key 0: 1 / (1 + exp(s1 - s0)).
  const double a00 = 1.0 / (1.0 + std::exp((q0[0] * k1[0] + q0[1] * k1[1] - q0[0] * k0[0] - q0[1] * k0[1]) * s));
  const double a10 = 1.0 / (1.0 + std::exp((q1[0] * k1[0] + q1[1] * k1[1] - q1[0] * k0[0] - q1[1] * k0[1]) * s));
  const double az0 = 1.0 / (1.0 + std::exp((qz[0] * k1[0] + qz[1] * k1[1] - qz[0] * k0[0] - qz[1] * k0[1]) * s));
  const double c0[2] = {a00 * v0[0] + (1 - a00) * v1[0], a00 * v0[1] + (1 - a00) * v1[1]};
  const double c1[2] = {a10 * v0[0] + (1 - a10) * v1[0], a10 * v0[1] + (1 - a10) * v1[1]};
  const double cz[2] = {az0 * v0[0] + (1 - az0) * v1[0], az0 * v0[1] + (1 - az0) * v1[1]};
  double o0[2], o1[2], oz[2];
  proj(c0, L.wo, o0);
  proj(c1, L.wo, o1);
  proj(cz, L.wo, oz);
  double y0[2] = {x[0][0] + o0[0], x[0][1] + o0[1]};
  double y1[2] = {x[1][0] + o1[0], x[1][1] + o1[1]};
  double yz[2] = {z[0] + oz[0], z[1] + oz[1]};

  auto gelu = [](double v) {
    return 0.5 * v * (1.0 + std::tanh(0.7978845608028654 * (v + 0.044715 * v * v * v)));
  };
  // MLP with hidden width 2.
  auto mlp = [&](double v[2]) {
    double n[2];
    ln(v, L.ln2_gamma, L.ln2_beta, n);
    const double g0 = gelu(n[0] * L.w1(0, 0) + n[1] * L.w1(1, 0) + L.b1[0]);
    const double g1 = gelu(n[0] * L.w1(0, 1) + n[1] * L.w1(1, 1) + L.b1[1]);
    v[0] += g0 * L.w2(0, 0) + g1 * L.w2(1, 0) + L.b2[0];
    v[1] += g0 * L.w2(0, 1) + g1 * L.w2(1, 1) + L.b2[1];
  };
  mlp(y0);
  mlp(y1);
  mlp(yz);
  return UnrolledOutput{{{y0[0], y0[1]}, {y1[0], y1[1]}}, {yz[0], yz[1]}};
}

TEST(ForwardDual, MatchesUnrolledOracle) {
  EncoderConfig cfg;
  cfg.image_height = 2;
  cfg.image_width = 4;
  cfg.channels = 1;
  cfg.patch = 2;
  cfg.dim = 2;
  cfg.heads = 1;
  cfg.layers = 1;
  cfg.mlp_hidden = 2;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto w = init_encoder(cfg, seed).cast<double>();
    // Non-trivial layer-norm affine and biases.
    Philox rng(seed + 100);
    for (auto* t : {&w.layers[0].ln1_gamma, &w.layers[0].ln1_beta, &w.layers[0].ln2_gamma, &w.layers[0].ln2_beta,
                    &w.layers[0].b1, &w.layers[0].b2, &w.patch_bias}) {
      for (auto& v : t->span()) v += 0.3 * rng.normal();
    }
    const Image img = random_image(2, 4, 1, seed + 7);
    const auto out = forward_dual(img, w, cfg);
    const auto ref = unrolled_forward(img, w);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(out.sem_tokens(i, j), ref.x[i][j], 1e-12);
    }
    EXPECT_NEAR((*out.z_deg)[0], ref.z[0], 1e-12);
    EXPECT_NEAR((*out.z_deg)[1], ref.z[1], 1e-12);
    EXPECT_NEAR(out.z_sem[0], (ref.x[0][0] + ref.x[1][0]) / 2, 1e-12);
  }
}

TEST(ForwardInference, BitIdenticalToDualPathOverRandomConfigs) {
  Philox rng(2024);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const EncoderConfig cfg = small_config(rng);
    const auto w = init_encoder(cfg, seed);
    const Image img = random_image(cfg.image_height, cfg.image_width, cfg.channels, seed + 50);
    EXPECT_EQ(forward_inference(img, w, cfg), forward_dual(img, w, cfg).z_sem) << "seed " << seed;
  }
}

TEST(ForwardInference, DefaultConfigParityFloat) {
  EncoderConfig cfg;
  const auto w = init_encoder(cfg, 77);
  const Image img = random_image(32, 32, 3, 78);
  EXPECT_EQ(forward_inference(img, w, cfg), forward_dual(img, w, cfg).z_sem);
}

TEST(ForwardInference, RefusesBidirectionalConfig) {
  EncoderConfig cfg;
  cfg.nc_bidirectional = true;
  const auto w = init_encoder(cfg, 1);
  EXPECT_THROW(forward_inference(Image(32, 32, 3, 0.5f), w, cfg), UsageError);
}

TEST(ForwardDual, BidirectionalTokenChangesSemantics) {
  EncoderConfig cfg;
  cfg.nc_bidirectional = true;
  const auto w = init_encoder(cfg, 9).cast<double>();
  const Image img = random_image(32, 32, 3, 10);
  const auto joint = forward_dual(img, w, cfg).z_sem;
  EncoderConfig plain = cfg;
  plain.nc_bidirectional = false;
  const auto alone = forward_inference(img, w, plain);
  double max_diff = 0;
  for (std::size_t j = 0; j < joint.size(); ++j) max_diff = std::max(max_diff, std::abs(joint[j] - alone[j]));
  EXPECT_GT(max_diff, 1e-6);
}

TEST(ForwardDual, PlainEncoderHasNoDegradationOutput) {
  EncoderConfig cfg;
  cfg.nc_token = false;
  const auto w = init_encoder(cfg, 9);
  EXPECT_TRUE(w.nc_init.empty());
  const auto out = forward_dual(Image(32, 32, 3, 0.3f), w, cfg);
  EXPECT_FALSE(out.z_deg.has_value());
}

TEST(InitEncoder, OptionalPartsDoNotShiftOtherTensors) {
  EncoderConfig with_nc;
  EncoderConfig without_nc = with_nc;
  without_nc.nc_token = false;
  auto a = init_encoder(with_nc, 31);
  const auto b = init_encoder(without_nc, 31);
  a.nc_init = Tensor<float>();
  EXPECT_EQ(a, b);
}

TEST(ValidateWeights, CatchesShapeAndNonFinite) {
  EncoderConfig cfg;
  auto w = init_encoder(cfg, 1);
  EXPECT_NO_THROW(validate_weights(w, cfg));
  auto bad = w;
  bad.layers[1].wq = Tensor<float>::matrix(3, 3);
  EXPECT_THROW(validate_weights(bad, cfg), ShapeError);
  bad = w;
  bad.pos_embed[4] = std::nanf("");
  EXPECT_THROW(validate_weights(bad, cfg), NumericError);
}

// Gradient isolation: d z_sem / d z_nc^(0) and d sem_tokens / d z_nc^(0) are exactly zero.
TEST(NonCausalIsolation, GradientOfSemanticsWrtNonCausalInitIsExactlyZero) {
  Philox rng(404);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const EncoderConfig cfg = small_config(rng);
    const auto w = init_encoder(cfg, seed).cast<double>();
    Tape<double> tape;
    const auto params = bind(tape, w, true);
    const Image img = random_image(cfg.image_height, cfg.image_width, cfg.channels, seed);
    const auto out = forward_dual(params, tape.constant(patchify<double>(img, cfg)), cfg);
    Tensor<double> probe = Tensor<double>::matrix(out.sem_tokens.rows(), out.sem_tokens.cols());
    for (auto& v : probe.span()) v = rng.normal();
    auto loss = add(sum(mul(out.sem_tokens, tape.constant(probe))), sum(mul(out.z_sem, out.z_sem)));
    const auto g = tape.backward(loss).of(params.nc_init);
    for (double v : g.span()) EXPECT_EQ(v, 0.0);
  }
}

TEST(NonCausalIsolation, DegradationOutputReadsThePixels) {
  EncoderConfig cfg;
  const auto w = init_encoder(cfg, 12).cast<double>();
  Tape<double> tape;
  const auto params = bind(tape, w, false);
  auto pixels = tape.leaf(patchify<double>(random_image(32, 32, 3, 13), cfg));
  const auto out = forward_dual(params, pixels, cfg);
  const auto g = tape.backward(sum(*out.z_deg)).of(pixels);
  double norm = 0;
  for (double v : g.span()) norm += v * v;
  EXPECT_GT(norm, 1e-12);
}

TEST(EncoderGradients, FullForwardMatchesFiniteDifferences) {
  EncoderConfig cfg;
  cfg.image_height = cfg.image_width = 4;
  cfg.channels = 2;
  cfg.patch = 2;
  cfg.dim = 4;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.mlp_hidden = 3;
  const auto w = init_encoder(cfg, 21).cast<double>();
  const Image img = random_image(4, 4, 2, 22);
  // Gradient with respect to the patch embedding through the whole stack.
  ScalarFn f = [&](Tape<double>& tape, Var<double> proj) {
    auto params = bind(tape, w, false);
    params.patch_proj = proj;
    const auto out = forward_dual(params, tape.constant(patchify<double>(img, cfg)), cfg);
    return add(sum(mul(out.z_sem, out.z_sem)), sum(mul(*out.z_deg, out.sem_tokens.tape().constant(w.nc_init))));
  };
  EXPECT_LE(grad_check(f, w.patch_proj, 1e-6), 1e-6);
}

}  // namespace
}  // namespace dualpath
