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
#include <optional>
#include <string>
#include <vector>

#include "dualpath/attention_mask.hpp"
#include "dualpath/image.hpp"
#include "dualpath/ops.hpp"

namespace dualpath {

enum class Aggregation { kMean, kCls };

std::string to_string(Aggregation mode);
Aggregation parse_aggregation(const std::string& text);

struct EncoderConfig {
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t channels = 3;
  std::size_t patch = 8;
  std::size_t dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t mlp_hidden = 64;
  Aggregation aggregation = Aggregation::kMean;
  // Ablation: the non-causal token joins one bidirectional attention with the
  // patch tokens instead of the one-way read.
  bool nc_bidirectional = false;
  // Ablation: no non-causal token at all (plain encoder). z_deg is absent.
  bool nc_token = true;

  std::size_t grid_rows() const { return image_height / patch; }
  std::size_t grid_cols() const { return image_width / patch; }
  std::size_t tokens() const { return grid_rows() * grid_cols(); }
  std::size_t patch_dim() const { return patch * patch * channels; }
  std::size_t head_dim() const { return dim / heads; }

  // Throws UsageError when the patch size does not tile the image or the
  // width does not split evenly across heads.
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

template <typename T>
struct LayerWeights {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> wq, wk, wv, wo;
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> w1, b1, w2, b2;

  bool operator==(const LayerWeights&) const = default;
};

template <typename T>
struct EncoderWeights {
  Tensor<T> patch_proj;  // patch_dim x dim
  Tensor<T> patch_bias;  // 1 x dim
  Tensor<T> pos_embed;   // tokens x dim
  Tensor<T> nc_init;     // 1 x dim, empty when the config has no non-causal token
  Tensor<T> cls;         // 1 x dim, empty unless aggregation is kCls
  std::vector<LayerWeights<T>> layers;

  // Visits every tensor in a fixed order with a stable name. Empty tensors
  // (unused optional parts) are skipped.
  template <typename F>
  void visit(F&& f);
  template <typename F>
  void visit(F&& f) const;

  template <typename U>
  EncoderWeights<U> cast() const;

  bool operator==(const EncoderWeights&) const = default;
};

// Seeded initialization. Each tensor draws from its own Philox stream keyed by
// its name, so toggling optional parts (cls, non-causal token) leaves every
// other tensor bit-identical. z_nc^(0) ~ N(0, 1/d).
EncoderWeights<float> init_encoder(const EncoderConfig& config, std::uint64_t seed);

// Checks tensor shapes against the config and that all values are finite.
template <typename T>
void validate_weights(const EncoderWeights<T>& weights, const EncoderConfig& config);

// Row-major patch tokens, top-left patch first; inside a patch values run
// over (row, column, channel). Result is tokens x patch_dim.
template <typename T>
Tensor<T> patchify(const Image& image, const EncoderConfig& config);

struct EncoderMasks {
  // Unidirectional: tokens x tokens over the patch set (plus cls if present).
  // Bidirectional: one (n+1) x (n+1) joint mask, non-causal token last.
  AttentionMask causal;
  // Unidirectional only: 1 x tokens, the non-causal query over patch keys
  // (its own key excluded). Empty in bidirectional mode.
  AttentionMask noncausal;
  bool joint = false;
};

EncoderMasks build_masks(std::size_t tokens, bool nc_bidirectional, bool with_cls = false);

// Mean over rows, or row 0 (the cls token) in kCls mode.
template <typename T>
Var<T> aggregate(Var<T> tokens, Aggregation mode);
template <typename T>
Tensor<T> aggregate(const Tensor<T>& tokens, Aggregation mode);

// Weights bound onto a tape, either as trainable leaves or as constants.
template <typename T>
struct EncoderParams {
  Var<T> patch_proj, patch_bias, pos_embed, nc_init, cls;
  struct Layer {
    Var<T> ln1_gamma, ln1_beta, wq, wk, wv, wo, ln2_gamma, ln2_beta, w1, b1, w2, b2;
  };
  std::vector<Layer> layers;

  // Leaves in EncoderWeights::visit order, for reading gradients back.
  std::vector<Var<T>> all() const;
};

template <typename T>
EncoderParams<T> bind(Tape<T>& tape, const EncoderWeights<T>& weights, bool trainable);

template <typename T>
struct EncoderOutputVars {
  Var<T> sem_tokens;  // tokens x dim, final-layer patch tokens
  Var<T> z_sem;       // 1 x dim
  std::optional<Var<T>> z_deg;  // 1 x dim, final non-causal token
};

template <typename T>
struct EncoderOutput {
  Tensor<T> sem_tokens;
  Tensor<T> z_sem;
  std::optional<Tensor<T>> z_deg;
};

// Dual-path forward over patch tokens (see patchify). Returned values are not
// normalized.
template <typename T>
EncoderOutputVars<T> forward_dual(const EncoderParams<T>& params, Var<T> patches, const EncoderConfig& config);

// Causal branch only, with the non-causal token absent. Returns z_sem.
// Refuses bidirectional configs, where dropping the token changes z_sem.
template <typename T>
Var<T> forward_inference(const EncoderParams<T>& params, Var<T> patches, const EncoderConfig& config);

// Untraced conveniences over an image.
template <typename T>
EncoderOutput<T> forward_dual(const Image& image, const EncoderWeights<T>& weights, const EncoderConfig& config);
template <typename T>
Tensor<T> forward_inference(const Image& image, const EncoderWeights<T>& weights, const EncoderConfig& config);

// ---------------------------------------------------------------------------

template <typename T>
template <typename F>
void EncoderWeights<T>::visit(F&& f) {
  f("patch_proj", patch_proj);
  f("patch_bias", patch_bias);
  f("pos_embed", pos_embed);
  if (!nc_init.empty()) f("nc_init", nc_init);
  if (!cls.empty()) f("cls", cls);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    auto& L = layers[l];
    f(p + "ln1_gamma", L.ln1_gamma);
    f(p + "ln1_beta", L.ln1_beta);
    f(p + "wq", L.wq);
    f(p + "wk", L.wk);
    f(p + "wv", L.wv);
    f(p + "wo", L.wo);
    f(p + "ln2_gamma", L.ln2_gamma);
    f(p + "ln2_beta", L.ln2_beta);
    f(p + "w1", L.w1);
    f(p + "b1", L.b1);
    f(p + "w2", L.w2);
    f(p + "b2", L.b2);
  }
}

template <typename T>
template <typename F>
void EncoderWeights<T>::visit(F&& f) const {
  const_cast<EncoderWeights<T>*>(this)->visit(
      [&f](const std::string& name, Tensor<T>& t) { f(name, static_cast<const Tensor<T>&>(t)); });
}

template <typename T>
template <typename U>
EncoderWeights<U> EncoderWeights<T>::cast() const {
  EncoderWeights<U> out;
  out.patch_proj = patch_proj.template cast<U>();
  out.patch_bias = patch_bias.template cast<U>();
  out.pos_embed = pos_embed.template cast<U>();
  out.nc_init = nc_init.template cast<U>();
  out.cls = cls.template cast<U>();
  for (const auto& L : layers) {
    out.layers.push_back({L.ln1_gamma.template cast<U>(), L.ln1_beta.template cast<U>(), L.wq.template cast<U>(),
                          L.wk.template cast<U>(), L.wv.template cast<U>(), L.wo.template cast<U>(),
                          L.ln2_gamma.template cast<U>(), L.ln2_beta.template cast<U>(), L.w1.template cast<U>(),
                          L.b1.template cast<U>(), L.w2.template cast<U>(), L.b2.template cast<U>()});
  }
  return out;
}

}  // namespace dualpath
