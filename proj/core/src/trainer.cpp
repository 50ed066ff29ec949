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

#include "dualpath/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "dualpath/error.hpp"
#include "dualpath/ops.hpp"
#include "dualpath/retrieval.hpp"
#include "dualpath/rng.hpp"

namespace dualpath {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr char kCheckpointMagic[5] = "RVRG";

std::string_view to_string(Objective o) { return o == Objective::kRetrieval ? "retrieval" : "generation"; }
std::string_view to_string(OptimizerKind o) { return o == OptimizerKind::kAdam ? "adam" : "sgd"; }

Objective parse_objective(const std::string& s) {
  if (s == "retrieval") return Objective::kRetrieval;
  if (s == "generation") return Objective::kGeneration;
  throw UsageError("unknown objective '" + s + "' (expected retrieval or generation)");
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw UsageError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

// Pointers to every trainable tensor in a fixed order: encoder tensors in
// visit order, then the query table when it is trained.
std::vector<Tensor<float>*> trainable(TrainState& state, const TrainConfig& config) {
  std::vector<Tensor<float>*> out;
  state.weights.visit([&](const std::string&, Tensor<float>& t) { out.push_back(&t); });
  if (config.objective == Objective::kRetrieval) out.push_back(&state.query_table);
  return out;
}

std::size_t family_index(DegradationFamily f) { return static_cast<std::size_t>(f); }

double value_or_nan(const std::optional<Var<float>>& v) {
  return v ? static_cast<double>(v->value().item()) : kNaN;
}

}  // namespace

void TrainConfig::validate() const {
  encoder.validate();
  loss.validate();
  if (batch_size < 2 || batch_size % 2 != 0) throw UsageError("batch_size must be even and >= 2");
  if (eval_every == 0) throw UsageError("eval_every must be >= 1");
  if (eval_k == 0) throw UsageError("eval_k must be >= 1");
  if (!(lr >= 0.0)) throw UsageError("lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw UsageError("adam_eps must be > 0");
  if (!encoder.nc_token && (!disable_ncdm || !disable_csa)) {
    throw UsageError("NCDM and CSA need the non-causal token; set disable_ncdm and disable_csa or nc_token: true");
  }
  if (objective == Objective::kGeneration && disable_csa) {
    throw UsageError("the generation objective is CSA plus NCDM; it cannot run with disable_csa");
  }
}

LossConfig TrainConfig::effective_loss() const {
  LossConfig l = loss;
  if (disable_csa) l.lambda1 = 0.0;
  if (disable_ncdm) {
    l.lambda2 = 0.0;
    l.lambda3 = 0.0;
  }
  return l;
}

ConfigMap to_config_map(const TrainConfig& c) {
  ConfigMap m;
  m["image_height"] = std::to_string(c.encoder.image_height);
  m["image_width"] = std::to_string(c.encoder.image_width);
  m["channels"] = std::to_string(c.encoder.channels);
  m["patch"] = std::to_string(c.encoder.patch);
  m["dim"] = std::to_string(c.encoder.dim);
  m["layers"] = std::to_string(c.encoder.layers);
  m["heads"] = std::to_string(c.encoder.heads);
  m["mlp_hidden"] = std::to_string(c.encoder.mlp_hidden);
  m["aggregation"] = to_string(c.encoder.aggregation);
  m["nc_bidirectional"] = bool_text(c.encoder.nc_bidirectional);
  m["nc_token"] = bool_text(c.encoder.nc_token);
  m["margin"] = format_double(c.loss.margin);
  m["temperature"] = format_double(c.loss.temperature);
  m["lambda_fsal"] = format_double(c.loss.lambda_fsal);
  m["lambda1"] = format_double(c.loss.lambda1);
  m["lambda2"] = format_double(c.loss.lambda2);
  m["lambda3"] = format_double(c.loss.lambda3);
  m["stop_grad_clean"] = bool_text(c.loss.stop_grad_clean);
  m["stop_grad_zdeg_in_sil"] = bool_text(c.loss.stop_grad_zdeg_in_sil);
  m["objective"] = std::string(to_string(c.objective));
  m["steps"] = std::to_string(c.steps);
  m["batch_size"] = std::to_string(c.batch_size);
  m["optimizer"] = std::string(to_string(c.optimizer));
  m["lr"] = format_double(c.lr);
  m["beta1"] = format_double(c.beta1);
  m["beta2"] = format_double(c.beta2);
  m["adam_eps"] = format_double(c.adam_eps);
  m["seed"] = std::to_string(c.seed);
  m["disable_ncdm"] = bool_text(c.disable_ncdm);
  m["disable_csa"] = bool_text(c.disable_csa);
  m["reference_refresh"] = std::to_string(c.reference_refresh);
  m["ncdm_same_severity"] = bool_text(c.ncdm_same_severity);
  m["ncdm_negatives"] = std::to_string(c.ncdm_negatives);
  m["clean_is_category"] = bool_text(c.clean_is_category);
  m["eval_every"] = std::to_string(c.eval_every);
  m["eval_k"] = std::to_string(c.eval_k);
  return m;
}

TrainConfig train_config_from_map(const ConfigMap& map) {
  TrainConfig c;
  ConfigReader r(map);
  r.read("image_height", c.encoder.image_height);
  r.read("image_width", c.encoder.image_width);
  r.read("channels", c.encoder.channels);
  r.read("patch", c.encoder.patch);
  r.read("dim", c.encoder.dim);
  r.read("layers", c.encoder.layers);
  r.read("heads", c.encoder.heads);
  r.read("mlp_hidden", c.encoder.mlp_hidden);
  std::string aggregation = to_string(c.encoder.aggregation);
  r.read("aggregation", aggregation);
  c.encoder.aggregation = parse_aggregation(aggregation);
  r.read("nc_bidirectional", c.encoder.nc_bidirectional);
  r.read("nc_token", c.encoder.nc_token);
  r.read("margin", c.loss.margin);
  r.read("temperature", c.loss.temperature);
  r.read("lambda_fsal", c.loss.lambda_fsal);
  r.read("lambda1", c.loss.lambda1);
  r.read("lambda2", c.loss.lambda2);
  r.read("lambda3", c.loss.lambda3);
  r.read("stop_grad_clean", c.loss.stop_grad_clean);
  r.read("stop_grad_zdeg_in_sil", c.loss.stop_grad_zdeg_in_sil);
  std::string objective(to_string(c.objective));
  r.read("objective", objective);
  c.objective = parse_objective(objective);
  r.read("steps", c.steps);
  r.read("batch_size", c.batch_size);
  std::string optimizer(to_string(c.optimizer));
  r.read("optimizer", optimizer);
  c.optimizer = parse_optimizer(optimizer);
  r.read("lr", c.lr);
  r.read("beta1", c.beta1);
  r.read("beta2", c.beta2);
  r.read("adam_eps", c.adam_eps);
  r.read("seed", c.seed);
  r.read("disable_ncdm", c.disable_ncdm);
  r.read("disable_csa", c.disable_csa);
  r.read("reference_refresh", c.reference_refresh);
  r.read("ncdm_same_severity", c.ncdm_same_severity);
  r.read("ncdm_negatives", c.ncdm_negatives);
  r.read("clean_is_category", c.clean_is_category);
  r.read("eval_every", c.eval_every);
  r.read("eval_k", c.eval_k);
  r.reject_unknown();
  return c;
}

std::vector<std::string> variant_names() { return {"baseline", "wo_u", "wo_ncdm", "wo_csa", "wo_both", "full"}; }

TrainConfig apply_variant(TrainConfig c, const std::string& variant) {
  c.encoder.nc_token = true;
  c.encoder.nc_bidirectional = false;
  c.disable_ncdm = false;
  c.disable_csa = false;
  if (variant == "baseline") {
    c.encoder.nc_token = false;
    c.disable_ncdm = c.disable_csa = true;
  } else if (variant == "wo_u") {
    c.encoder.nc_bidirectional = true;
  } else if (variant == "wo_ncdm") {
    c.disable_ncdm = true;
  } else if (variant == "wo_csa") {
    c.disable_csa = true;
  } else if (variant == "wo_both") {
    c.disable_ncdm = c.disable_csa = true;
  } else if (variant != "full") {
    throw UsageError("unknown variant '" + variant + "'");
  }
  return c;
}

TrainData TrainData::from_images(const CorpusManifest& manifest, std::vector<Image> images) {
  manifest.validate();
  if (images.size() != manifest.docs.size()) throw DataError("one image per manifest doc required");
  TrainData data;
  data.manifest = manifest;
  data.images = std::move(images);
  data.num_classes = manifest.num_classes();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < manifest.docs.size(); ++i) index[manifest.docs[i].doc_id] = i;
  for (std::size_t i = 0; i < manifest.docs.size(); ++i) {
    const DocRecord& d = manifest.docs[i];
    if (!d.degraded() || d.split != Split::kTrain) continue;
    if (!d.family || !d.severity) throw DataError("degraded doc '" + d.doc_id + "' lacks family or severity");
    data.train_pairs.push_back({index.at(*d.source_doc_id), i, d.class_id, *d.family, *d.severity});
  }
  return data;
}

TrainData TrainData::load(const CorpusManifest& manifest, const std::filesystem::path& root) {
  std::vector<Image> images;
  images.reserve(manifest.docs.size());
  for (const auto& d : manifest.docs) {
    const auto file = root / d.file;
    if (!std::filesystem::exists(file)) throw DataError("missing image " + file.string());
    images.push_back(read_ppm(file));
  }
  return from_images(manifest, std::move(images));
}

std::size_t view_category(const TrainData& data, const TrainBatch& batch, ViewRef view) {
  if (view.clean) return kNumFamilies;
  return family_index(data.train_pairs[batch.pairs[view.item]].family);
}

TrainBatch sample_batch(const TrainData& data, const TrainConfig& config, std::uint64_t step) {
  if (data.train_pairs.empty()) throw DataError("no clean/degraded train pairs in the manifest");
  std::map<std::pair<std::size_t, int>, std::vector<std::size_t>> groups;
  std::vector<bool> family_seen(kNumFamilies, false);
  for (std::size_t i = 0; i < data.train_pairs.size(); ++i) {
    const auto& p = data.train_pairs[i];
    family_seen[family_index(p.family)] = true;
    groups[{family_index(p.family), config.ncdm_same_severity ? p.severity : 0}].push_back(i);
  }
  const auto families = static_cast<std::size_t>(std::count(family_seen.begin(), family_seen.end(), true));
  const bool ncdm = !config.disable_ncdm && config.encoder.nc_token;
  if (ncdm && families < 2) throw DataError("NCDM needs at least two degradation families in the train split");
  std::vector<const std::vector<std::size_t>*> eligible;
  for (const auto& [key, members] : groups) {
    if (members.size() >= 2) eligible.push_back(&members);
  }
  if (eligible.empty()) throw DataError("no degradation category has two train docs to pair");

  Philox rng(derive_seed(config.seed, step), fnv1a64("sample_batch"));
  const std::size_t half = config.batch_size / 2;
  for (int attempt = 0; attempt < 64; ++attempt) {
    TrainBatch batch;
    std::vector<bool> used_item(data.train_pairs.size(), false);
    std::vector<bool> used_class(data.num_classes, false);
    const auto unused = [&](const std::vector<std::size_t>& group) {
      std::vector<std::size_t> out;
      for (std::size_t m : group) {
        if (!used_item[m]) out.push_back(m);
      }
      return out;
    };
    // Prefers a member whose class is not yet in the batch.
    const auto take = [&](const std::vector<std::size_t>& group) {
      std::vector<std::size_t> free = unused(group), fresh;
      for (std::size_t m : free) {
        if (!used_class[data.train_pairs[m].class_id]) fresh.push_back(m);
      }
      const auto& pool = fresh.empty() ? free : fresh;
      const std::size_t c = pool[rng.below(pool.size())];
      used_item[c] = true;
      used_class[data.train_pairs[c].class_id] = true;
      batch.pairs.push_back(c);
    };
    for (std::size_t p = 0; p < half; ++p) {
      std::vector<const std::vector<std::size_t>*> open;
      for (const auto* g : eligible) {
        if (unused(*g).size() >= 2) open.push_back(g);
      }
      if (open.empty()) throw DataError("train split too small for batch_size " + std::to_string(config.batch_size));
      const auto& group = *open[rng.below(open.size())];
      take(group);
      take(group);
    }
    const std::size_t b = batch.pairs.size();
    // Triplets over every view whose category has a partner in the batch.
    std::vector<ViewRef> views;
    for (std::size_t i = 0; i < b; ++i) views.push_back({i, false});
    if (config.clean_is_category) {
      for (std::size_t i = 0; i < b; ++i) views.push_back({i, true});
    }
    bool complete = true;
    for (const ViewRef& anchor : views) {
      const std::size_t cat = view_category(data, batch, anchor);
      std::vector<ViewRef> pos, neg;
      for (const ViewRef& v : views) {
        if (v == anchor) continue;
        (view_category(data, batch, v) == cat ? pos : neg).push_back(v);
      }
      if (pos.empty() || neg.empty()) {
        complete = false;
        break;
      }
      const ViewRef positive = pos[rng.below(pos.size())];
      const std::size_t count =
          config.ncdm_negatives == 0 ? neg.size() : std::min(config.ncdm_negatives, neg.size());
      // Partial Fisher-Yates: the first `count` entries become a uniform draw.
      for (std::size_t k = 0; k < count; ++k) {
        std::swap(neg[k], neg[k + rng.below(neg.size() - k)]);
        batch.triplets.push_back({anchor, positive, neg[k]});
      }
    }
    if (complete || !ncdm) {
      if (!complete) batch.triplets.clear();
      return batch;
    }
  }
  throw DataError("could not sample a batch with valid triplets");
}

TrainState init_state(const TrainConfig& config, std::size_t num_classes) {
  config.validate();
  if (num_classes == 0) throw DataError("corpus has no classes");
  TrainState s;
  s.weights = init_encoder(config.encoder, derive_seed(config.seed, "encoder"));
  s.reference = s.weights;
  s.query_table = Tensor<float>::matrix(num_classes, config.encoder.dim);
  Philox rng(derive_seed(config.seed, "query_table"));
  const double std = 1.0 / std::sqrt(static_cast<double>(config.encoder.dim));
  for (auto& v : s.query_table.span()) v = static_cast<float>(std * rng.normal());
  for (Tensor<float>* t : trainable(s, config)) {
    s.optimizer.m.emplace_back(t->shape(), 0.0f);
    s.optimizer.v.emplace_back(t->shape(), 0.0f);
  }
  return s;
}

StepLosses compute_gradients(const TrainState& state, const TrainBatch& batch, const TrainData& data,
                             const TrainConfig& config, StepGradients& grads) {
  const EncoderConfig& enc = config.encoder;
  const LossConfig loss_cfg = config.effective_loss();
  const bool retrieval = config.objective == Objective::kRetrieval;
  const std::size_t b = batch.pairs.size();

  Tape<float> tape;
  const EncoderParams<float> params = bind(tape, state.weights, true);
  const Var<float> table = retrieval ? tape.leaf(state.query_table) : tape.constant(state.query_table);

  std::vector<EncoderOutputVars<float>> clean, degraded;
  for (std::size_t i = 0; i < b; ++i) {
    const auto& pair = data.train_pairs[batch.pairs[i]];
    clean.push_back(forward_dual(params, tape.constant(patchify<float>(data.images[pair.clean], enc)), enc));
    degraded.push_back(forward_dual(params, tape.constant(patchify<float>(data.images[pair.degraded], enc)), enc));
  }

  LossBatch<float> lb;
  if (retrieval) {
    std::vector<Var<float>> docs, queries;
    std::vector<std::size_t> classes;
    for (int side = 0; side < 2; ++side) {
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t cls = data.train_pairs[batch.pairs[i]].class_id;
        docs.push_back(side == 0 ? clean[i].z_sem : degraded[i].z_sem);
        queries.push_back(slice_rows(table, cls, 1));
        classes.push_back(cls);
      }
    }
    // Candidates: the positive plus every document of another class.
    AttentionMask candidates(2 * b, 2 * b, false);
    std::vector<std::size_t> targets(2 * b);
    for (std::size_t r = 0; r < 2 * b; ++r) {
      targets[r] = r;
      for (std::size_t j = 0; j < 2 * b; ++j) candidates.set(r, j, j == r || classes[j] != classes[r]);
    }
    lb.retrieval.push_back(inbatch_infonce(concat_rows<float>(queries), concat_rows<float>(docs), candidates,
                                           std::span<const std::size_t>(targets),
                                           static_cast<float>(loss_cfg.temperature)));
  }

  if (enc.nc_token) {
    const bool online = !loss_cfg.stop_grad_clean || config.reference_refresh == 1;
    for (std::size_t i = 0; i < b; ++i) {
      const auto& pair = data.train_pairs[batch.pairs[i]];
      Var<float> target = clean[i].sem_tokens;
      if (!online) {
        target = tape.constant(forward_dual(data.images[pair.clean], state.reference, enc).sem_tokens);
      }
      lb.pairs.push_back(TokenPair<float>{target, degraded[i].sem_tokens, *degraded[i].z_deg,
                                          data.manifest.docs[pair.clean].doc_id});
    }
    const auto zdeg = [&](ViewRef v) { return v.clean ? *clean[v.item].z_deg : *degraded[v.item].z_deg; };
    for (const auto& t : batch.triplets) lb.triplets.push_back({zdeg(t.anchor), zdeg(t.positive), zdeg(t.negative)});
  }

  const LossTerms<float> terms =
      retrieval ? total_retrieval_loss(lb, loss_cfg) : total_generation_loss(lb, loss_cfg);
  StepLosses out;
  out.total = terms.total.value().item();
  out.ret = value_or_nan(terms.retrieval);
  out.sil = value_or_nan(terms.sil);
  out.fsal = value_or_nan(terms.fsal);
  out.ncdm = value_or_nan(terms.ncdm);
  if (!std::isfinite(out.total)) throw NumericError("non-finite training loss");

  const Gradients<float> g = tape.backward(terms.total);
  grads.params.clear();
  for (const Var<float>& leaf : params.all()) grads.params.push_back(g.of(leaf));
  if (retrieval) grads.params.push_back(g.of(table));
  return out;
}

StepLosses train_step(TrainState& state, const TrainBatch& batch, const TrainData& data, const TrainConfig& config) {
  if (config.reference_refresh > 0 && state.step % config.reference_refresh == 0) state.reference = state.weights;
  StepGradients grads;
  StepLosses losses;
  try {
    losses = compute_gradients(state, batch, data, config, grads);
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(state.step) + ": " + e.what());
  }
  std::vector<Tensor<float>*> params = trainable(state, config);
  if (params.size() != grads.params.size()) throw UsageError("parameter/gradient count mismatch");
  OptimizerState& opt = state.optimizer;
  ++opt.t;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(opt.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<float>& w = *params[p];
    const Tensor<float>& g = grads.params[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      if (config.optimizer == OptimizerKind::kSgd) {
        w[i] = static_cast<float>(w[i] - config.lr * gi);
        continue;
      }
      const double m = config.beta1 * opt.m[p][i] + (1.0 - config.beta1) * gi;
      const double v = config.beta2 * opt.v[p][i] + (1.0 - config.beta2) * gi * gi;
      opt.m[p][i] = static_cast<float>(m);
      opt.v[p][i] = static_cast<float>(v);
      w[i] = static_cast<float>(w[i] - config.lr * (m / bc1) / (std::sqrt(v / bc2) + config.adam_eps));
    }
  }
  ++state.step;
  return losses;
}

EvalMetrics evaluate(const EncoderWeights<float>& weights, const Tensor<float>& query_table, const TrainData& data,
                     const TrainConfig& config) {
  EvalMetrics out;
  const EncoderConfig& enc = config.encoder;
  const auto mrr_for = [&](CorpusView view) {
    std::vector<std::string> ids;
    std::vector<Image> images;
    for (std::size_t i = 0; i < data.manifest.docs.size(); ++i) {
      const DocRecord& d = data.manifest.docs[i];
      if (d.split != Split::kTest || d.degraded() != (view == CorpusView::kDegraded)) continue;
      ids.push_back(d.doc_id);
      images.push_back(data.images[i]);
    }
    if (ids.empty()) return kNaN;
    const EmbeddingIndex index = build_index(ids, embed_images(images, weights, enc));
    const auto queries = queries_for_view(data.manifest, view, Split::kTest);
    std::vector<RankedList> lists;
    for (const auto& q : queries) {
      lists.push_back(retrieve_topk(index, query_table.row(q.class_id), config.eval_k, q.query_id));
    }
    return mrr_at_k(lists, queries, config.eval_k);
  };
  out.mrr_clean = mrr_for(CorpusView::kClean);
  out.mrr_degraded = mrr_for(CorpusView::kDegraded);

  out.silhouette_zdeg = kNaN;
  if (enc.nc_token) {
    std::map<std::size_t, std::vector<std::size_t>> by_family;
    for (std::size_t i = 0; i < data.manifest.docs.size(); ++i) {
      const DocRecord& d = data.manifest.docs[i];
      if (d.split == Split::kTest && d.degraded() && d.family) by_family[family_index(*d.family)].push_back(i);
    }
    std::vector<std::size_t> members, labels;
    for (const auto& [family, docs] : by_family) {
      if (docs.size() < 2) continue;  // a lone member has no silhouette
      for (std::size_t i : docs) {
        members.push_back(i);
        labels.push_back(family);
      }
    }
    const std::size_t distinct = std::count_if(by_family.begin(), by_family.end(),
                                               [](const auto& kv) { return kv.second.size() >= 2; });
    if (distinct >= 2) {
      Tensor<double> points = Tensor<double>::matrix(members.size(), enc.dim);
      for (std::size_t r = 0; r < members.size(); ++r) {
        const auto z = forward_dual(data.images[members[r]], weights, enc).z_deg;
        for (std::size_t j = 0; j < enc.dim; ++j) points(r, j) = (*z)[j];
      }
      out.silhouette_zdeg = silhouette(points, labels);
    }
  }
  return out;
}

std::string format_metrics_row(const MetricsRow& r) {
  std::string s = std::to_string(r.step);
  for (double v : {r.losses.ret, r.losses.sil, r.losses.fsal, r.losses.ncdm, r.eval.mrr_clean, r.eval.mrr_degraded,
                   r.eval.silhouette_zdeg}) {
    s += ',';
    s += format_double(v);
  }
  return s;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metrics " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw DataError(path.string() + ": unexpected header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw DataError(path.string() + ": expected 8 columns in '" + line + "'");
    MetricsRow r;
    r.step = std::stoull(cells[0]);
    double* fields[] = {&r.losses.ret, &r.losses.sil, &r.losses.fsal, &r.losses.ncdm,
                        &r.eval.mrr_clean, &r.eval.mrr_degraded, &r.eval.silhouette_zdeg};
    for (std::size_t i = 0; i < 7; ++i) {
      const std::string& c = cells[i + 1];
      if (c == "nan" || c == "-nan") {
        *fields[i] = kNaN;
        continue;
      }
      const auto res = std::from_chars(c.data(), c.data() + c.size(), *fields[i]);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size()) {
        throw DataError(path.string() + ": bad number '" + c + "'");
      }
    }
    rows.push_back(r);
  }
  return rows;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
  ck.weights.visit([&](const std::string& name, const Tensor<float>& t) { tensors.emplace_back("encoder/" + name, &t); });
  tensors.emplace_back("query_table", &ck.query_table);
  ck.reference.visit(
      [&](const std::string& name, const Tensor<float>& t) { tensors.emplace_back("reference/" + name, &t); });

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  detail::BinaryWriter w(out);
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u64(ck.step);
  const std::string config_text = format_config(to_config_map(ck.config));
  w.str(config_text);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  std::size_t parameters = 0;
  for (const auto& [name, t] : tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t->shape().size()));
    for (std::size_t d : t->shape()) w.u64(d);
    w.bytes(t->data(), t->size() * sizeof(float));
    parameters += t->size();
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());

  std::ofstream meta(path.string() + ".meta");
  meta << "# checkpoint sidecar\n"
       << "checkpoint_version: " << kCheckpointVersion << "\n"
       << "step: " << ck.step << "\n"
       << "tensors: " << tensors.size() << "\n"
       << "values: " << parameters << "\n"
       << config_text;
  if (!meta) throw DataError("failed writing " + path.string() + ".meta");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  detail::BinaryReader r(in, path.string());
  r.expect_magic(kCheckpointMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw DataError(path.string() + ": unsupported checkpoint version");
  Checkpoint ck;
  ck.step = r.u64();
  try {
    ck.config = train_config_from_map(parse_config_text(r.str(), path.string()));
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  std::map<std::string, Tensor<float>> stored;
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 4) throw DataError(path.string() + ": implausible rank for '" + name + "'");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d > (1u << 24)) throw DataError(path.string() + ": implausible dimension for '" + name + "'");
      n *= d;
    }
    Tensor<float> t(shape, 0.0f);
    r.bytes(t.data(), n * sizeof(float));
    if (!stored.emplace(name, std::move(t)).second) throw DataError(path.string() + ": duplicate tensor '" + name + "'");
  }
  r.expect_end();

  std::size_t used = 0;
  const auto fill = [&](const std::string& prefix, EncoderWeights<float>& w) {
    w = init_encoder(ck.config.encoder, 0);
    w.visit([&](const std::string& name, Tensor<float>& t) {
      const auto it = stored.find(prefix + name);
      if (it == stored.end()) throw DataError(path.string() + ": missing tensor '" + prefix + name + "'");
      if (it->second.shape() != t.shape()) throw DataError(path.string() + ": shape mismatch for '" + prefix + name + "'");
      t = it->second;
      ++used;
    });
  };
  fill("encoder/", ck.weights);
  fill("reference/", ck.reference);
  const auto table = stored.find("query_table");
  if (table == stored.end()) throw DataError(path.string() + ": missing query_table");
  ck.query_table = table->second;
  ++used;
  if (used != stored.size()) throw DataError(path.string() + ": unexpected extra tensors");
  validate_weights(ck.weights, ck.config.encoder);
  return ck;
}

TrainResult train(const TrainConfig& config, const TrainData& data,
                  const std::optional<std::filesystem::path>& metrics_csv,
                  const std::function<void(const MetricsRow&)>& on_eval) {
  TrainState state = init_state(config, data.num_classes);
  std::ofstream csv;
  if (metrics_csv) {
    csv.open(*metrics_csv, std::ios::binary | std::ios::trunc);
    if (!csv) throw DataError("cannot write metrics " + metrics_csv->string());
    csv << kMetricsHeader << '\n';
  }
  TrainResult result;
  const auto emit = [&](const StepLosses& losses) {
    MetricsRow row{state.step, losses, evaluate(state.weights, state.query_table, data, config)};
    result.metrics.push_back(row);
    if (csv.is_open()) {
      csv << format_metrics_row(row) << '\n';
      csv.flush();
    }
    if (on_eval) on_eval(row);
  };

  emit(StepLosses{kNaN, kNaN, kNaN, kNaN, kNaN});
  StepLosses acc{};
  std::size_t since = 0;
  for (std::size_t s = 0; s < config.steps; ++s) {
    const TrainBatch batch = sample_batch(data, config, s);
    const StepLosses l = train_step(state, batch, data, config);
    acc.total += l.total;
    acc.ret += l.ret;
    acc.sil += l.sil;
    acc.fsal += l.fsal;
    acc.ncdm += l.ncdm;
    ++since;
    if (state.step % config.eval_every == 0 || state.step == config.steps) {
      const double n = static_cast<double>(since);
      emit(StepLosses{acc.total / n, acc.ret / n, acc.sil / n, acc.fsal / n, acc.ncdm / n});
      acc = StepLosses{};
      since = 0;
    }
  }
  if (csv.is_open() && !csv) throw DataError("failed writing metrics " + metrics_csv->string());
  result.checkpoint = Checkpoint{state.weights, state.query_table, state.reference, config, state.step};
  return result;
}

}  // namespace dualpath
