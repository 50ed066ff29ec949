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
#include "dualpath/error.hpp"
#include "dualpath/grad_check.hpp"
#include "dualpath/objectives.hpp"
#include "dualpath/ops.hpp"
#include "dualpath/rng.hpp"

namespace dualpath {
namespace {

using M = Tensor<double>;

Var<double> c(Tape<double>& tape, std::initializer_list<std::initializer_list<double>> rows) {
  return tape.constant(M::from_rows(rows));
}

M random_matrix(Philox& rng, std::size_t r, std::size_t cols) {
  M t = M::matrix(r, cols);
  for (auto& v : t.span()) v = rng.normal();
  return t;
}

TEST(LossConfig, DefaultsAndValidation) {
  LossConfig cfg;
  EXPECT_EQ(cfg.margin, 1.0);
  EXPECT_EQ(cfg.temperature, 0.05);
  EXPECT_EQ(cfg.lambda_fsal, 1.0);
  EXPECT_EQ(cfg.lambda1, 1.0);
  EXPECT_EQ(cfg.lambda2, 0.5);
  EXPECT_EQ(cfg.lambda3, 0.5);
  EXPECT_TRUE(cfg.stop_grad_clean);
  EXPECT_FALSE(cfg.stop_grad_zdeg_in_sil);
  EXPECT_NO_THROW(cfg.validate());
  cfg.temperature = 0.0;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = LossConfig{};
  cfg.lambda2 = -0.1;
  EXPECT_THROW(cfg.validate(), UsageError);
}

TEST(Ncdm, MarginSatisfiedGivesZero) {
  Tape<double> tape;
  const auto a = c(tape, {{1, 0}});
  const auto n = c(tape, {{0, 1}});  // squared distance 2
  EXPECT_EQ(ncdm_loss(a, a, n, 1.0).value().item(), 0.0);
}

TEST(Ncdm, CollapsedTripletYieldsMargin) {
  Tape<double> tape;
  const auto a = c(tape, {{0.3, -0.2, 0.7}});
  EXPECT_DOUBLE_EQ(ncdm_loss(a, a, a, 1.0).value().item(), 1.0);
}

TEST(Ncdm, ScalarEvaluation) {
  Tape<double> tape;
  const auto loss = ncdm_loss(c(tape, {{1, 0}}), c(tape, {{0, 1}}), c(tape, {{1, 0}}), 0.5);
  EXPECT_DOUBLE_EQ(loss.value().item(), 2.5);
}

TEST(Ncdm, BoundedAndNonNegativeOnRandomTriplets) {
  Philox rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Tape<double> tape;
    const auto a = tape.constant(random_matrix(rng, 1, 5));
    const auto p = tape.constant(random_matrix(rng, 1, 5));
    const auto n = tape.constant(random_matrix(rng, 1, 5));
    const double margin = 2.0 * rng.uniform();
    const double loss = ncdm_loss(a, p, n, margin).value().item();
    double dap = 0.0;
    for (std::size_t j = 0; j < 5; ++j) dap += std::pow(a.value()[j] - p.value()[j], 2);
    EXPECT_GE(loss, 0.0);
    EXPECT_LE(loss, dap + margin + 1e-12);
  }
}

TEST(Ncdm, ShapeMismatchThrows) {
  Tape<double> tape;
  EXPECT_THROW(ncdm_loss(c(tape, {{1, 0}}), c(tape, {{1, 0, 0}}), c(tape, {{1, 0}}), 1.0), ShapeError);
}

TEST(Ncdm, ZeroGradientAtHinge) {
  Tape<double> tape;
  // d_ap - d_an + margin == 0 exactly: d_ap = 1, d_an = 2, margin = 1.
  const auto a = tape.leaf(M::from_rows({{0, 0}}));
  const auto loss = ncdm_loss(a, c(tape, {{1, 0}}), c(tape, {{1, 1}}), 1.0);
  EXPECT_EQ(loss.value().item(), 0.0);
  const auto grads = tape.backward(loss);
  for (double g : grads.of(a).span()) EXPECT_EQ(g, 0.0);
}

TEST(Sil, AlignedAndIndependentIsZero) {
  Tape<double> tape;
  const auto sem = c(tape, {{1, 0, 0}, {0, 2, 0}});
  const TokenPair<double> pair{sem, sem, c(tape, {{0, 0, 1}}), "d"};
  EXPECT_NEAR(sil_loss(pair, LossConfig{}).value().item(), 0.0, 1e-15);
}

TEST(Sil, ScalarEvaluation) {
  Tape<double> tape;
  const TokenPair<double> pair{c(tape, {{0, 1}}), c(tape, {{1, 0}}), c(tape, {{1, 0}}), "d"};
  EXPECT_NEAR(sil_loss(pair, LossConfig{}).value().item(), 2.0, 1e-15);
}

TEST(Sil, InvariantToPositiveTokenRescaling) {
  Philox rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> tape;
    const M clean = random_matrix(rng, 4, 6);
    M deg = random_matrix(rng, 4, 6);
    const M zdeg = random_matrix(rng, 1, 6);
    const TokenPair<double> base{tape.constant(clean), tape.constant(deg), tape.constant(zdeg), "d"};
    const double before = sil_loss(base, LossConfig{}).value().item();
    for (std::size_t i = 0; i < 4; ++i) {
      const double factor = 0.01 + 10.0 * rng.uniform();
      for (std::size_t j = 0; j < 6; ++j) deg(i, j) *= factor;
    }
    const TokenPair<double> scaled{tape.constant(clean), tape.constant(deg), tape.constant(zdeg), "d"};
    EXPECT_NEAR(sil_loss(scaled, LossConfig{}).value().item(), before, 1e-12);
    EXPECT_GE(before, 0.0);
  }
}

TEST(Sil, ZeroNormTokenThrows) {
  Tape<double> tape;
  const TokenPair<double> pair{c(tape, {{1, 0}, {0, 1}}), c(tape, {{1, 0}, {0, 0}}), c(tape, {{1, 1}}), "d"};
  EXPECT_THROW(sil_loss(pair, LossConfig{}), NumericError);
}

TEST(Fsal, IdenticalTokensGiveZero) {
  Tape<double> tape;
  const auto sem = c(tape, {{1, 2}, {3, 4}});
  const TokenPair<double> pair{sem, sem, c(tape, {{1, 0}}), "d"};
  EXPECT_EQ(fsal_loss(pair, LossConfig{}).value().item(), 0.0);
}

TEST(Fsal, ScalarEvaluationAndHomogeneity) {
  Tape<double> tape;
  const TokenPair<double> pair{c(tape, {{0, 0}, {0, 0}}), c(tape, {{1, 0}, {0, 2}}), c(tape, {{1, 0}}), "d"};
  EXPECT_DOUBLE_EQ(fsal_loss(pair, LossConfig{}).value().item(), 2.5);
  const TokenPair<double> doubled{c(tape, {{0, 0}, {0, 0}}), c(tape, {{2, 0}, {0, 4}}), c(tape, {{1, 0}}), "d"};
  EXPECT_DOUBLE_EQ(fsal_loss(doubled, LossConfig{}).value().item(), 4.0 * 2.5);
}

TEST(Fsal, ShapeMismatchThrows) {
  Tape<double> tape;
  const TokenPair<double> pair{c(tape, {{0, 0}}), c(tape, {{1, 0}, {0, 2}}), c(tape, {{1, 0}}), "d"};
  EXPECT_THROW(fsal_loss(pair, LossConfig{}), ShapeError);
}

TEST(Csa, ZeroFsalWeightEqualsSil) {
  Tape<double> tape;
  const TokenPair<double> pair{c(tape, {{0, 1}, {1, 1}}), c(tape, {{1, 0}, {0.5, 2}}), c(tape, {{1, 0.2}}), "d"};
  LossConfig cfg;
  cfg.lambda_fsal = 0.0;
  EXPECT_EQ(csa_loss(pair, cfg).value().item(), sil_loss(pair, cfg).value().item());
}

TEST(Csa, AlignedIndependentPairIsZero) {
  Tape<double> tape;
  const auto sem = c(tape, {{1, 0, 0}, {0, 1, 0}});
  const TokenPair<double> pair{sem, sem, c(tape, {{0, 0, 3}}), "d"};
  EXPECT_NEAR(csa_loss(pair, LossConfig{}).value().item(), 0.0, 1e-15);
}

TEST(Csa, SumOfTheTwoOraclesOnOneArtificialPair) {
  // Degraded tokens lie on z_deg and are orthogonal to their clean partners,
  // so sil = 2; squared diffs are 2 and 3, so fsal = 2.5.
  Tape<double> tape;
  const TokenPair<double> pair{c(tape, {{0, 1}, {0, std::sqrt(2.0)}}), c(tape, {{1, 0}, {1, 0}}), c(tape, {{1, 0}}),
                               "d"};
  EXPECT_NEAR(sil_loss(pair, LossConfig{}).value().item(), 2.0, 1e-15);
  EXPECT_NEAR(fsal_loss(pair, LossConfig{}).value().item(), 2.5, 1e-15);
  EXPECT_NEAR(csa_loss(pair, LossConfig{}).value().item(), 4.5, 1e-15);
}

TEST(InfoNce, NoNegativesIsZero) {
  Tape<double> tape;
  const auto loss = retrieval_infonce<double>(c(tape, {{1, 2}}), c(tape, {{-1, 0.5}}), {}, 0.05);
  EXPECT_EQ(loss.value().item(), 0.0);
}

TEST(InfoNce, TiedNegativeGivesLog2) {
  Tape<double> tape;
  const std::vector<Var<double>> negs{c(tape, {{0, 3}})};
  const auto loss = retrieval_infonce<double>(c(tape, {{1, 1}}), c(tape, {{2, 0}}), negs, 0.05);
  EXPECT_NEAR(loss.value().item(), std::log(2.0), 1e-12);
}

TEST(InfoNce, SaturatesForLargeGap) {
  // s+ = 1, s- = 0, tau = 1/20: gap of 20 tau.
  Tape<double> tape;
  const std::vector<Var<double>> negs{c(tape, {{0, 1}})};
  const auto loss = retrieval_infonce<double>(c(tape, {{1, 0}}), c(tape, {{1, 0}}), negs, 0.05);
  EXPECT_LT(loss.value().item(), 1e-8);
  EXPECT_GE(loss.value().item(), 0.0);
}

TEST(InfoNce, DecreasesAsPositiveSimilarityGrows) {
  const std::vector<double> angles{2.5, 2.0, 1.5, 1.0, 0.5, 0.0};
  double previous = INFINITY;
  for (double angle : angles) {
    Tape<double> tape;
    const std::vector<Var<double>> negs{c(tape, {{0.2, 1}}), c(tape, {{-1, -0.3}})};
    const auto pos = c(tape, {{std::cos(angle), std::sin(angle)}});
    const double loss = retrieval_infonce<double>(c(tape, {{1, 0}}), pos, negs, 0.5).value().item();
    EXPECT_LT(loss, previous);
    previous = loss;
  }
}

TEST(InfoNce, EmptyEmbeddingThrows) {
  Tape<double> tape;
  const auto empty = tape.constant(M::matrix(1, 0));
  EXPECT_THROW(retrieval_infonce<double>(empty, empty, {}, 0.05), ShapeError);
  EXPECT_THROW(retrieval_infonce<double>(c(tape, {{1}}), c(tape, {{1}}), {}, 0.0), UsageError);
}

TEST(InfoNce, BatchedFormMatchesSingleQueryForm) {
  Philox rng(12);
  Tape<double> tape;
  const auto q = tape.constant(random_matrix(rng, 3, 4));
  const auto d = tape.constant(random_matrix(rng, 3, 4));
  AttentionMask candidates(3, 3, true);
  candidates.set(0, 2, false);
  const std::vector<std::size_t> targets{0, 1, 2};
  const auto batched = inbatch_infonce(q, d, candidates, targets, 0.1).value();
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<Var<double>> negs;
    for (std::size_t j = 0; j < 3; ++j) {
      if (j != i && candidates.allowed(i, j)) negs.push_back(slice_rows(d, j, 1));
    }
    const double single = retrieval_infonce<double>(slice_rows(q, i, 1), slice_rows(d, i, 1), negs, 0.1).value().item();
    EXPECT_NEAR(batched[i], single, 1e-12);
  }
}

// Builds a loss batch whose component means are known in closed form:
// retrieval mean a, csa mean b (lambda_fsal = 1), ncdm mean c.
LossBatch<double> known_batch(Tape<double>& tape, double& a, double& b, double& cc) {
  LossBatch<double> batch;
  batch.retrieval.push_back(c(tape, {{0.5}, {1.5}}));
  batch.retrieval.push_back(c(tape, {{2.5}}));
  a = 1.5;
  batch.pairs.push_back({c(tape, {{0, 1}, {0, std::sqrt(2.0)}}), c(tape, {{1, 0}, {1, 0}}), c(tape, {{1, 0}}), "x"});
  batch.pairs.push_back({c(tape, {{1, 0}}), c(tape, {{1, 0}}), c(tape, {{0, 1}}), "y"});
  b = (4.5 + 0.0) / 2.0;
  batch.triplets.push_back({c(tape, {{1, 0}}), c(tape, {{0, 1}}), c(tape, {{1, 0}})});
  batch.triplets.push_back({c(tape, {{0, 0}}), c(tape, {{0, 0}}), c(tape, {{0, 0}})});
  cc = (2.0 + 1.0 + 1.0) / 2.0;  // margin 1: 2+1 for the first, 1 for the collapsed one
  return batch;
}

TEST(TotalRetrievalLoss, KnownComponents) {
  Tape<double> tape;
  double a = 0, b = 0, cc = 0;
  const auto batch = known_batch(tape, a, b, cc);
  LossConfig cfg;
  cfg.lambda1 = 1.0;
  cfg.lambda2 = 0.5;
  const auto terms = total_retrieval_loss(batch, cfg);
  EXPECT_NEAR(terms.retrieval->value().item(), a, 1e-14);
  EXPECT_NEAR(terms.csa->value().item(), b, 1e-14);
  EXPECT_NEAR(terms.ncdm->value().item(), cc, 1e-14);
  EXPECT_NEAR(terms.total.value().item(), a + b + 0.5 * cc, 1e-14);
}

TEST(TotalRetrievalLoss, ZeroWeightsEqualRetrievalAndSkipMissingParts) {
  Tape<double> tape;
  LossBatch<double> batch;
  batch.retrieval.push_back(c(tape, {{0.25}, {0.75}}));
  LossConfig cfg;
  cfg.lambda1 = 0.0;
  cfg.lambda2 = 0.0;
  EXPECT_EQ(total_retrieval_loss(batch, cfg).total.value().item(), 0.5);
  cfg.lambda1 = 1.0;
  EXPECT_THROW(total_retrieval_loss(batch, cfg), UsageError);
  cfg.lambda1 = 0.0;
  cfg.lambda2 = 0.5;
  EXPECT_THROW(total_retrieval_loss(batch, cfg), UsageError);
  EXPECT_THROW(total_retrieval_loss(LossBatch<double>{}, LossConfig{}), UsageError);
}

TEST(TotalRetrievalLoss, AllZeroComponentsGiveZero) {
  Tape<double> tape;
  LossBatch<double> batch;
  batch.retrieval.push_back(c(tape, {{0.0}}));
  const auto sem = c(tape, {{1, 0}});
  batch.pairs.push_back({sem, sem, c(tape, {{0, 1}}), "z"});
  batch.triplets.push_back({c(tape, {{0, 0}}), c(tape, {{0, 0}}), c(tape, {{5, 0}})});
  EXPECT_NEAR(total_retrieval_loss(batch, LossConfig{}).total.value().item(), 0.0, 1e-15);
}

TEST(TotalGenerationLoss, KnownComponents) {
  Tape<double> tape;
  double a = 0, b = 0, cc = 0;
  const auto batch = known_batch(tape, a, b, cc);
  LossConfig cfg;
  EXPECT_NEAR(total_generation_loss(batch, cfg).total.value().item(), b + 0.5 * cc, 1e-14);
  cfg.lambda3 = 0.0;
  EXPECT_NEAR(total_generation_loss(batch, cfg).total.value().item(), b, 1e-14);
}

TEST(TotalGenerationLoss, AlignedBatchIsZeroAndMissingPartsThrow) {
  Tape<double> tape;
  LossBatch<double> batch;
  const auto sem = c(tape, {{0, 2}});
  batch.pairs.push_back({sem, sem, c(tape, {{3, 0}}), "z"});
  LossConfig cfg;
  EXPECT_THROW(total_generation_loss(batch, cfg), UsageError);  // no triplets but lambda3 > 0
  batch.triplets.push_back({c(tape, {{0, 0}}), c(tape, {{0, 0}}), c(tape, {{1, 1}})});
  EXPECT_NEAR(total_generation_loss(batch, cfg).total.value().item(), 0.0, 1e-15);
  EXPECT_THROW(total_generation_loss(LossBatch<double>{}, cfg), UsageError);
}

TEST(StopGradient, CleanBranchReceivesExactlyZeroGradient) {
  Philox rng(5);
  Tape<double> tape;
  const auto clean = tape.leaf(random_matrix(rng, 3, 4));
  const auto deg = tape.leaf(random_matrix(rng, 3, 4));
  const auto zdeg = tape.leaf(random_matrix(rng, 1, 4));
  const TokenPair<double> pair{clean, deg, zdeg, "d"};
  LossConfig cfg;
  const auto grads = tape.backward(csa_loss(pair, cfg));
  for (double g : grads.of(clean).span()) EXPECT_EQ(g, 0.0);
  double deg_norm = 0.0;
  for (double g : grads.of(deg).span()) deg_norm += g * g;
  EXPECT_GT(deg_norm, 0.0);

  Tape<double> online;
  const auto clean2 = online.leaf(clean.value());
  cfg.stop_grad_clean = false;
  const TokenPair<double> pair2{clean2, online.leaf(deg.value()), online.leaf(zdeg.value()), "d"};
  double clean_norm = 0.0;
  const auto online_grads = online.backward(csa_loss(pair2, cfg));
  for (double g : online_grads.of(clean2).span()) clean_norm += g * g;
  EXPECT_GT(clean_norm, 0.0);
}

TEST(StopGradient, ZdegSwitchInSil) {
  Philox rng(6);
  for (bool stop : {false, true}) {
    Tape<double> tape;
    const auto zdeg = tape.leaf(random_matrix(rng, 1, 4));
    const TokenPair<double> pair{tape.constant(random_matrix(rng, 2, 4)), tape.constant(random_matrix(rng, 2, 4)),
                                 zdeg, "d"};
    LossConfig cfg;
    cfg.stop_grad_zdeg_in_sil = stop;
    double norm = 0.0;
    const auto grads = tape.backward(sil_loss(pair, cfg));
    for (double g : grads.of(zdeg).span()) norm += g * g;
    if (stop) {
      EXPECT_EQ(norm, 0.0);
    } else {
      EXPECT_GT(norm, 0.0);
    }
  }
}

TEST(ObjectiveGradients, EachLossMatchesFiniteDifferences) {
  Philox rng(77);
  const M other = random_matrix(rng, 3, 4);
  const M zvec = random_matrix(rng, 1, 4);
  LossConfig cfg;
  cfg.stop_grad_clean = false;
  const std::vector<std::pair<const char*, ScalarFn>> cases{
      {"sil", [&](Tape<double>& t, Var<double> x) {
         return sil_loss(TokenPair<double>{t.constant(other), x, t.constant(zvec), "d"}, cfg);
       }},
      {"sil_clean", [&](Tape<double>& t, Var<double> x) {
         return sil_loss(TokenPair<double>{x, t.constant(other), t.constant(zvec), "d"}, cfg);
       }},
      {"fsal", [&](Tape<double>& t, Var<double> x) {
         return fsal_loss(TokenPair<double>{t.constant(other), x, t.constant(zvec), "d"}, cfg);
       }},
      {"ncdm", [&](Tape<double>& t, Var<double> x) {
         return ncdm_loss(slice_rows(x, 0, 1), slice_rows(x, 1, 1), slice_rows(x, 2, 1), 3.0);
       }},
      {"infonce", [&](Tape<double>& t, Var<double> x) {
         AttentionMask cand(3, 3, true);
         cand.set(1, 2, false);
         const std::vector<std::size_t> targets{0, 1, 2};
         return mean(inbatch_infonce(x, t.constant(other), cand, targets, 0.2));
       }},
  };
  for (const auto& [name, fn] : cases) {
    for (int trial = 0; trial < 3; ++trial) {
      const M point = random_matrix(rng, 3, 4);
      EXPECT_LE(grad_check(fn, point, 1e-6), 1e-4) << name;
    }
  }
}

TEST(ObjectiveGradients, CompositeLossThroughEncoderMatchesFiniteDifferences) {
  EncoderConfig cfg;
  cfg.image_height = cfg.image_width = 4;
  cfg.channels = 2;
  cfg.patch = 2;
  cfg.dim = 4;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.mlp_hidden = 3;
  const auto w = init_encoder(cfg, 31).cast<double>();
  Philox rng(32);
  auto image = [&] {
    Image img(4, 4, 2);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    return img;
  };
  const Image clean = image(), degraded = image(), other = image();
  LossConfig lc;
  lc.temperature = 0.5;
  lc.margin = 4.0;  // keep the hinge active
  lc.stop_grad_clean = false;  // finite differences see both branches
  for (const char* target : {"wq", "w1", "nc_init"}) {
    ScalarFn f = [&](Tape<double>& tape, Var<double> x) {
      auto params = bind(tape, w, false);
      if (std::string(target) == "wq") params.layers[0].wq = x;
      if (std::string(target) == "w1") params.layers[0].w1 = x;
      if (std::string(target) == "nc_init") params.nc_init = x;
      const auto oc = forward_dual(params, tape.constant(patchify<double>(clean, cfg)), cfg);
      const auto od = forward_dual(params, tape.constant(patchify<double>(degraded, cfg)), cfg);
      const auto oo = forward_dual(params, tape.constant(patchify<double>(other, cfg)), cfg);
      LossBatch<double> batch;
      const std::vector<Var<double>> rows{od.z_sem, oo.z_sem};
      const std::vector<Var<double>> docs{oc.z_sem, oo.z_sem};
      const std::vector<std::size_t> targets{0, 1};
      batch.retrieval.push_back(inbatch_infonce(concat_rows<double>(rows), concat_rows<double>(docs),
                                                AttentionMask(2, 2, true), targets, 0.5));
      batch.pairs.push_back(TokenPair<double>::from_outputs(oc, od, "a"));
      batch.triplets.push_back({*od.z_deg, *od.z_deg, *oc.z_deg});
      return total_retrieval_loss(batch, lc).total;
    };
    const M& point = std::string(target) == "wq" ? w.layers[0].wq
                     : std::string(target) == "w1" ? w.layers[0].w1
                                                   : w.nc_init;
    EXPECT_LE(grad_check(f, point, 1e-6), 1e-4) << target;
  }
}

}  // namespace
}  // namespace dualpath
