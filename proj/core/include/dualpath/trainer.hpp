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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dualpath/config.hpp"
#include "dualpath/corpus.hpp"
#include "dualpath/encoder.hpp"
#include "dualpath/objectives.hpp"

namespace dualpath {

enum class Objective { kRetrieval, kGeneration };
enum class OptimizerKind { kAdam, kSgd };

struct TrainConfig {
  EncoderConfig encoder;
  LossConfig loss;
  Objective objective = Objective::kRetrieval;
  std::size_t steps = 2000;
  std::size_t batch_size = 16;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool disable_ncdm = false;
  bool disable_csa = false;
  // Clean-branch targets for CSA: 0 keeps the initial snapshot forever,
  // k > 0 re-snapshots the encoder every k steps (1 = current weights).
  std::size_t reference_refresh = 0;
  // Triplet sampling: positives also match severity; clean is a category.
  bool ncdm_same_severity = false;
  // Negatives drawn per anchor; 0 pairs each anchor with every valid negative.
  std::size_t ncdm_negatives = 1;
  bool clean_is_category = true;
  std::size_t eval_every = 200;
  std::size_t eval_k = 10;

  // Throws UsageError for inconsistent settings.
  void validate() const;
  // Weights actually used once the ablation switches are applied.
  LossConfig effective_loss() const;
  bool operator==(const TrainConfig&) const = default;
};

ConfigMap to_config_map(const TrainConfig& config);
// Starts from defaults; unknown keys are rejected.
TrainConfig train_config_from_map(const ConfigMap& map);

// The six ablation variants: baseline, w/o U, w/o NCDM, w/o CSA, w/o both, full.
std::vector<std::string> variant_names();
TrainConfig apply_variant(TrainConfig config, const std::string& variant);

// Manifest plus decoded images, with the clean/degraded train pairs indexed.
struct TrainData {
  CorpusManifest manifest;
  std::vector<Image> images;  // aligned with manifest.docs
  struct Pair {
    std::size_t clean = 0;     // index into manifest.docs
    std::size_t degraded = 0;  // index into manifest.docs
    std::size_t class_id = 0;
    DegradationFamily family{};
    int severity = 0;
  };
  std::vector<Pair> train_pairs;
  std::size_t num_classes = 0;

  static TrainData load(const CorpusManifest& manifest, const std::filesystem::path& root);
  static TrainData from_images(const CorpusManifest& manifest, std::vector<Image> images);
};

// A view is one side of a pair; its category is the degradation family, or
// "clean" (category kNumFamilies) for clean views.
struct ViewRef {
  std::size_t item = 0;
  bool clean = false;
  bool operator==(const ViewRef&) const = default;
};

struct TripletRef {
  ViewRef anchor, positive, negative;
  bool operator==(const TripletRef&) const = default;
};

struct TrainBatch {
  std::vector<std::size_t> pairs;  // indices into TrainData::train_pairs
  std::vector<TripletRef> triplets;
  bool operator==(const TrainBatch&) const = default;
};

// Category of a view (family index, or kNumFamilies for clean).
std::size_t view_category(const TrainData& data, const TrainBatch& batch, ViewRef view);

// Batches are built from same-family pairs of train docs (classes distinct
// where possible), so every degraded anchor has a positive in the batch.
TrainBatch sample_batch(const TrainData& data, const TrainConfig& config, std::uint64_t step);

struct OptimizerState {
  std::uint64_t t = 0;
  std::vector<Tensor<float>> m, v;
};

struct TrainState {
  EncoderWeights<float> weights;
  EncoderWeights<float> reference;
  Tensor<float> query_table;  // classes x dim
  OptimizerState optimizer;
  std::uint64_t step = 0;
};

TrainState init_state(const TrainConfig& config, std::size_t num_classes);

// Loss components of one step; absent terms are NaN.
struct StepLosses {
  double total = 0.0;
  double ret = 0.0;
  double sil = 0.0;
  double fsal = 0.0;
  double ncdm = 0.0;
};

struct StepGradients {
  std::vector<Tensor<float>> params;  // visit order, then the query table in retrieval mode
};

// Builds the loss on a tape and returns components plus gradients without
// touching the state.
StepLosses compute_gradients(const TrainState& state, const TrainBatch& batch, const TrainData& data,
                             const TrainConfig& config, StepGradients& grads);

// One optimizer update; throws NumericError on a non-finite loss.
StepLosses train_step(TrainState& state, const TrainBatch& batch, const TrainData& data, const TrainConfig& config);

struct EvalMetrics {
  double mrr_clean = 0.0;
  double mrr_degraded = 0.0;
  double silhouette_zdeg = 0.0;  // NaN without a non-causal token
};

// Test-split retrieval with the learned query table, plus Z_deg silhouette of
// the degraded test docs grouped by family.
EvalMetrics evaluate(const EncoderWeights<float>& weights, const Tensor<float>& query_table, const TrainData& data,
                     const TrainConfig& config);

struct MetricsRow {
  std::uint64_t step = 0;
  StepLosses losses;  // averaged since the previous row
  EvalMetrics eval;
};

inline constexpr const char* kMetricsHeader =
    "step,L_ret,L_sil,L_fsal,L_ncdm,mrr10_clean,mrr10_deg,silhouette_zdeg";
std::string format_metrics_row(const MetricsRow& row);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

struct Checkpoint {
  EncoderWeights<float> weights;
  Tensor<float> query_table;
  EncoderWeights<float> reference;
  TrainConfig config;
  std::uint64_t step = 0;
  bool operator==(const Checkpoint&) const = default;
};

// Binary: "RVRG", version, step, config text, then a named tensor table of
// float32 values. A `.meta` text sidecar is written next to it.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> metrics;
};

// Runs config.steps updates, evaluating every eval_every steps and at the
// end. When `metrics_csv` is set each row is appended as it is produced.
TrainResult train(const TrainConfig& config, const TrainData& data,
                  const std::optional<std::filesystem::path>& metrics_csv = std::nullopt,
                  const std::function<void(const MetricsRow&)>& on_eval = {});

}  // namespace dualpath
