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

#include "dualpath/encoder.hpp"

#include <cmath>

#include "dualpath/rng.hpp"

namespace dualpath {

std::string to_string(Aggregation mode) { return mode == Aggregation::kMean ? "mean" : "cls"; }

Aggregation parse_aggregation(const std::string& text) {
  if (text == "mean") return Aggregation::kMean;
  if (text == "cls") return Aggregation::kCls;
  throw UsageError("unknown aggregation mode '" + text + "' (expected mean or cls)");
}

void EncoderConfig::validate() const {
  if (patch == 0 || image_height % patch != 0 || image_width % patch != 0) {
    throw UsageError("patch size " + std::to_string(patch) + " does not tile a " + std::to_string(image_height) +
                     "x" + std::to_string(image_width) + " image");
  }
  if (image_height == 0 || image_width == 0 || channels == 0) throw UsageError("empty image geometry");
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw UsageError("embed dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (mlp_hidden == 0) throw UsageError("mlp_hidden must be positive");
  if (nc_bidirectional && !nc_token) throw UsageError("nc_bidirectional requires the non-causal token");
}

namespace {

Tensor<float> normal_tensor(std::uint64_t seed, const std::string& name, std::size_t r, std::size_t c, double stddev) {
  Philox rng(seed, fnv1a64(name));
  Tensor<float> t = Tensor<float>::matrix(r, c);
  for (auto& v : t.span()) v = static_cast<float>(stddev * rng.normal());
  return t;
}

}  // namespace

EncoderWeights<float> init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.dim;
  const std::size_t h = config.mlp_hidden;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  EncoderWeights<float> w;
  w.patch_proj = normal_tensor(seed, "patch_proj", config.patch_dim(), d,
                               1.0 / std::sqrt(static_cast<double>(config.patch_dim())));
  w.patch_bias = Tensor<float>::matrix(1, d);
  w.pos_embed = normal_tensor(seed, "pos_embed", config.tokens(), d, 0.1);
  if (config.nc_token) w.nc_init = normal_tensor(seed, "nc_init", 1, d, inv_sqrt_d);
  if (config.aggregation == Aggregation::kCls) w.cls = normal_tensor(seed, "cls", 1, d, inv_sqrt_d);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerWeights<float> L;
    L.ln1_gamma = Tensor<float>::matrix(1, d, 1.0f);
    L.ln1_beta = Tensor<float>::matrix(1, d);
    L.wq = normal_tensor(seed, p + "wq", d, d, inv_sqrt_d);
    L.wk = normal_tensor(seed, p + "wk", d, d, inv_sqrt_d);
    L.wv = normal_tensor(seed, p + "wv", d, d, inv_sqrt_d);
    L.wo = normal_tensor(seed, p + "wo", d, d, 0.5 * inv_sqrt_d);
    L.ln2_gamma = Tensor<float>::matrix(1, d, 1.0f);
    L.ln2_beta = Tensor<float>::matrix(1, d);
    L.w1 = normal_tensor(seed, p + "w1", d, h, inv_sqrt_d);
    L.b1 = Tensor<float>::matrix(1, h);
    L.w2 = normal_tensor(seed, p + "w2", h, d, 0.5 / std::sqrt(static_cast<double>(h)));
    L.b2 = Tensor<float>::matrix(1, d);
    w.layers.push_back(std::move(L));
  }
  return w;
}

template <typename T>
void validate_weights(const EncoderWeights<T>& weights, const EncoderConfig& config) {
  config.validate();
  const std::size_t d = config.dim;
  const std::size_t h = config.mlp_hidden;
  auto expect = [](const Tensor<T>& t, std::size_t r, std::size_t c, const std::string& name) {
    if (t.rows() != r || t.cols() != c || t.size() != r * c) {
      throw ShapeError("encoder weight " + name + " has shape " + shape_string(t.shape()) + ", expected [" +
                       std::to_string(r) + " x " + std::to_string(c) + "]");
    }
    if (!t.all_finite()) throw NumericError("encoder weight " + name + " is not finite");
  };
  expect(weights.patch_proj, config.patch_dim(), d, "patch_proj");
  expect(weights.patch_bias, 1, d, "patch_bias");
  expect(weights.pos_embed, config.tokens(), d, "pos_embed");
  if (config.nc_token) {
    expect(weights.nc_init, 1, d, "nc_init");
  } else if (!weights.nc_init.empty()) {
    throw ShapeError("encoder weights carry a non-causal token the config does not use");
  }
  if (config.aggregation == Aggregation::kCls) expect(weights.cls, 1, d, "cls");
  if (weights.layers.size() != config.layers) throw ShapeError("layer count differs from config");
  for (std::size_t l = 0; l < config.layers; ++l) {
    const auto& L = weights.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    expect(L.ln1_gamma, 1, d, p + "ln1_gamma");
    expect(L.ln1_beta, 1, d, p + "ln1_beta");
    expect(L.wq, d, d, p + "wq");
    expect(L.wk, d, d, p + "wk");
    expect(L.wv, d, d, p + "wv");
    expect(L.wo, d, d, p + "wo");
    expect(L.ln2_gamma, 1, d, p + "ln2_gamma");
    expect(L.ln2_beta, 1, d, p + "ln2_beta");
    expect(L.w1, d, h, p + "w1");
    expect(L.b1, 1, h, p + "b1");
    expect(L.w2, h, d, p + "w2");
    expect(L.b2, 1, d, p + "b2");
  }
}

template <typename T>
Tensor<T> patchify(const Image& image, const EncoderConfig& config) {
  config.validate();
  if (image.height != config.image_height || image.width != config.image_width ||
      image.channels != config.channels) {
    throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) + "x" +
                     std::to_string(image.channels) + " does not match encoder input " +
                     std::to_string(config.image_height) + "x" + std::to_string(config.image_width) + "x" +
                     std::to_string(config.channels));
  }
  const std::size_t P = config.patch;
  const std::size_t C = config.channels;
  Tensor<T> out = Tensor<T>::matrix(config.tokens(), config.patch_dim());
  std::size_t token = 0;
  for (std::size_t gy = 0; gy < config.grid_rows(); ++gy) {
    for (std::size_t gx = 0; gx < config.grid_cols(); ++gx, ++token) {
      T* dst = out.data() + token * config.patch_dim();
      for (std::size_t y = 0; y < P; ++y) {
        const float* src = image.pixels.data() + ((gy * P + y) * image.width + gx * P) * C;
        for (std::size_t i = 0; i < P * C; ++i) *dst++ = static_cast<T>(src[i]);
      }
    }
  }
  return out;
}

EncoderMasks build_masks(std::size_t tokens, bool nc_bidirectional, bool with_cls) {
  if (tokens == 0) throw UsageError("build_masks: need at least one patch token");
  const std::size_t n = tokens + (with_cls ? 1 : 0);
  EncoderMasks masks;
  if (nc_bidirectional) {
    masks.causal = AttentionMask::all(n + 1, n + 1);
    masks.joint = true;
  } else {
    masks.causal = AttentionMask::all(n, n);
    masks.noncausal = AttentionMask(1, n, true);
    // The cls token is not a patch; the non-causal token reads patches only.
    if (with_cls) masks.noncausal.set(0, 0, false);
  }
  if (!masks.causal.well_formed() || (!masks.joint && !masks.noncausal.well_formed())) {
    throw UsageError("build_masks produced a row with no admissible key");
  }
  return masks;
}

template <typename T>
Var<T> aggregate(Var<T> tokens, Aggregation mode) {
  if (tokens.rows() == 0) throw ShapeError("aggregate over zero tokens");
  switch (mode) {
    case Aggregation::kMean:
      return mean_rows(tokens);
    case Aggregation::kCls:
      return slice_rows(tokens, 0, 1);
  }
  throw UsageError("unknown aggregation mode");
}

template <typename T>
Tensor<T> aggregate(const Tensor<T>& tokens, Aggregation mode) {
  Tape<T> tape;
  return aggregate(tape.constant(tokens), mode).value();
}

template <typename T>
std::vector<Var<T>> EncoderParams<T>::all() const {
  std::vector<Var<T>> out{patch_proj, patch_bias, pos_embed};
  if (nc_init.valid()) out.push_back(nc_init);
  if (cls.valid()) out.push_back(cls);
  for (const auto& L : layers) {
    out.insert(out.end(), {L.ln1_gamma, L.ln1_beta, L.wq, L.wk, L.wv, L.wo, L.ln2_gamma, L.ln2_beta, L.w1, L.b1,
                           L.w2, L.b2});
  }
  return out;
}

template <typename T>
EncoderParams<T> bind(Tape<T>& tape, const EncoderWeights<T>& weights, bool trainable) {
  auto put = [&](const Tensor<T>& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
  EncoderParams<T> p;
  p.patch_proj = put(weights.patch_proj);
  p.patch_bias = put(weights.patch_bias);
  p.pos_embed = put(weights.pos_embed);
  if (!weights.nc_init.empty()) p.nc_init = put(weights.nc_init);
  if (!weights.cls.empty()) p.cls = put(weights.cls);
  for (const auto& L : weights.layers) {
    p.layers.push_back({put(L.ln1_gamma), put(L.ln1_beta), put(L.wq), put(L.wk), put(L.wv), put(L.wo),
                        put(L.ln2_gamma), put(L.ln2_beta), put(L.w1), put(L.b1), put(L.w2), put(L.b2)});
  }
  return p;
}

namespace {

template <typename T>
struct Projected {
  Var<T> q, k, v;
};

// Multi-head attention of `queries` over (keys, values), then the output projection.
template <typename T>
Var<T> attend(Var<T> q, Var<T> k, Var<T> v, const AttentionMask& mask, const typename EncoderParams<T>::Layer& L,
              const EncoderConfig& config) {
  const std::size_t dh = config.head_dim();
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Var<T>> heads;
  heads.reserve(config.heads);
  for (std::size_t h = 0; h < config.heads; ++h) {
    auto qh = config.heads == 1 ? q : slice_cols(q, h * dh, dh);
    auto kh = config.heads == 1 ? k : slice_cols(k, h * dh, dh);
    auto vh = config.heads == 1 ? v : slice_cols(v, h * dh, dh);
    auto weights = masked_softmax(scale(matmul_nt(qh, kh), inv_sqrt), mask);
    heads.push_back(matmul(weights, vh));
  }
  auto merged = config.heads == 1 ? heads[0] : concat_cols<T>(heads);
  return matmul(merged, L.wo);
}

template <typename T>
Var<T> mlp(Var<T> x, const typename EncoderParams<T>::Layer& L) {
  auto h = layer_norm(x, L.ln2_gamma, L.ln2_beta);
  auto hidden = gelu(add_row(matmul(h, L.w1), L.b1));
  return add(x, add_row(matmul(hidden, L.w2), L.b2));
}

// One pre-norm block over a token set that attends only within itself.
template <typename T>
Var<T> self_block(Var<T> x, const AttentionMask& mask, const typename EncoderParams<T>::Layer& L,
                  const EncoderConfig& config) {
  auto h = layer_norm(x, L.ln1_gamma, L.ln1_beta);
  auto out = add(x, attend(matmul(h, L.wq), matmul(h, L.wk), matmul(h, L.wv), mask, L, config));
  return mlp(out, L);
}

template <typename T>
Var<T> embed(const EncoderParams<T>& params, Var<T> patches, const EncoderConfig& config) {
  if (patches.rows() != config.tokens() || patches.cols() != config.patch_dim()) {
    throw ShapeError("patch tensor " + shape_string(patches.shape()) + " does not match encoder config");
  }
  auto x = add(add_row(matmul(patches, params.patch_proj), params.patch_bias), params.pos_embed);
  if (config.aggregation == Aggregation::kCls) {
    std::vector<Var<T>> parts{params.cls, x};
    x = concat_rows<T>(parts);
  }
  return x;
}

template <typename T>
std::size_t first_patch_row(const EncoderConfig& config) {
  return config.aggregation == Aggregation::kCls ? 1 : 0;
}

}  // namespace

template <typename T>
EncoderOutputVars<T> forward_dual(const EncoderParams<T>& params, Var<T> patches, const EncoderConfig& config) {
  config.validate();
  if (params.layers.size() != config.layers) throw ShapeError("bound weights have the wrong layer count");
  const bool with_cls = config.aggregation == Aggregation::kCls;
  const std::size_t n = config.tokens() + (with_cls ? 1 : 0);
  auto x = embed(params, patches, config);

  std::optional<Var<T>> z;
  if (config.nc_token) {
    if (!params.nc_init.valid()) throw ShapeError("config expects a non-causal token but weights have none");
    z = params.nc_init;
  }
  const EncoderMasks masks = build_masks(config.tokens(), config.nc_bidirectional, with_cls);

  for (const auto& L : params.layers) {
    if (!z) {
      x = self_block(x, masks.causal, L, config);
    } else if (masks.joint) {
      std::vector<Var<T>> parts{x, *z};
      auto joint = self_block(concat_rows<T>(parts), masks.causal, L, config);
      x = slice_rows(joint, 0, n);
      z = slice_rows(joint, n, 1);
    } else {
      // Causal branch: keys and values come from the patch set only.
      auto h = layer_norm(x, L.ln1_gamma, L.ln1_beta);
      auto k = matmul(h, L.wk);
      auto v = matmul(h, L.wv);
      auto x_attn = add(x, attend(matmul(h, L.wq), k, v, masks.causal, L, config));
      // Non-causal branch: z reads the patch keys/values; nothing reads z.
      auto hz = layer_norm(*z, L.ln1_gamma, L.ln1_beta);
      auto z_attn = add(*z, attend(matmul(hz, L.wq), k, v, masks.noncausal, L, config));
      x = mlp(x_attn, L);
      z = mlp(z_attn, L);
    }
  }

  EncoderOutputVars<T> out;
  const std::size_t first = first_patch_row<T>(config);
  out.sem_tokens = first == 0 ? x : slice_rows(x, first, config.tokens());
  out.z_sem = aggregate(x, config.aggregation);
  out.z_deg = z;
  return out;
}

template <typename T>
Var<T> forward_inference(const EncoderParams<T>& params, Var<T> patches, const EncoderConfig& config) {
  config.validate();
  if (config.nc_bidirectional) {
    throw UsageError("forward_inference: the non-causal branch cannot be dropped from a bidirectional encoder");
  }
  if (params.layers.size() != config.layers) throw ShapeError("bound weights have the wrong layer count");
  const bool with_cls = config.aggregation == Aggregation::kCls;
  auto x = embed(params, patches, config);
  const EncoderMasks masks = build_masks(config.tokens(), false, with_cls);
  for (const auto& L : params.layers) {
    auto h = layer_norm(x, L.ln1_gamma, L.ln1_beta);
    auto k = matmul(h, L.wk);
    auto v = matmul(h, L.wv);
    x = mlp(add(x, attend(matmul(h, L.wq), k, v, masks.causal, L, config)), L);
  }
  return aggregate(x, config.aggregation);
}

template <typename T>
EncoderOutput<T> forward_dual(const Image& image, const EncoderWeights<T>& weights, const EncoderConfig& config) {
  Tape<T> tape;
  const auto params = bind(tape, weights, false);
  const auto out = forward_dual(params, tape.constant(patchify<T>(image, config)), config);
  EncoderOutput<T> result{out.sem_tokens.value(), out.z_sem.value(), std::nullopt};
  if (out.z_deg) result.z_deg = out.z_deg->value();
  return result;
}

template <typename T>
Tensor<T> forward_inference(const Image& image, const EncoderWeights<T>& weights, const EncoderConfig& config) {
  Tape<T> tape;
  const auto params = bind(tape, weights, false);
  return forward_inference(params, tape.constant(patchify<T>(image, config)), config).value();
}

#define DUALPATH_INSTANTIATE_ENCODER(T)                                                                   \
  template void validate_weights(const EncoderWeights<T>&, const EncoderConfig&);                        \
  template Tensor<T> patchify(const Image&, const EncoderConfig&);                                        \
  template Var<T> aggregate(Var<T>, Aggregation);                                                         \
  template Tensor<T> aggregate(const Tensor<T>&, Aggregation);                                            \
  template struct EncoderParams<T>;                                                                       \
  template EncoderParams<T> bind(Tape<T>&, const EncoderWeights<T>&, bool);                               \
  template EncoderOutputVars<T> forward_dual(const EncoderParams<T>&, Var<T>, const EncoderConfig&);      \
  template Var<T> forward_inference(const EncoderParams<T>&, Var<T>, const EncoderConfig&);               \
  template EncoderOutput<T> forward_dual(const Image&, const EncoderWeights<T>&, const EncoderConfig&);   \
  template Tensor<T> forward_inference(const Image&, const EncoderWeights<T>&, const EncoderConfig&);

DUALPATH_INSTANTIATE_ENCODER(float)
DUALPATH_INSTANTIATE_ENCODER(double)

#undef DUALPATH_INSTANTIATE_ENCODER

}  // namespace dualpath
