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

#include "dualpath/objectives.hpp"

#include <cmath>
#include <string>

#include "dualpath/error.hpp"
#include "dualpath/ops.hpp"

namespace dualpath {

void LossConfig::validate() const {
  auto finite_nonneg = [](double v, const char* name) {
    if (!std::isfinite(v) || v < 0.0) throw UsageError(std::string(name) + " must be finite and >= 0");
  };
  finite_nonneg(margin, "margin");
  finite_nonneg(lambda_fsal, "lambda_fsal");
  finite_nonneg(lambda1, "lambda1");
  finite_nonneg(lambda2, "lambda2");
  finite_nonneg(lambda3, "lambda3");
  if (!std::isfinite(temperature) || temperature <= 0.0) throw UsageError("temperature must be > 0");
}

template <typename T>
TokenPair<T> TokenPair<T>::from_outputs(const EncoderOutputVars<T>& clean, const EncoderOutputVars<T>& degraded,
                                        std::string doc_id) {
  if (!degraded.z_deg) throw UsageError("degraded encoding has no non-causal token");
  return TokenPair{clean.sem_tokens, degraded.sem_tokens, *degraded.z_deg, std::move(doc_id)};
}

namespace {

template <typename T>
void require_same(Var<T> a, Var<T> b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
void require_vector(Var<T> v, const char* op) {
  if (v.rows() != 1 || v.cols() == 0) {
    throw ShapeError(std::string(op) + ": expected a non-empty 1 x d embedding, got " + shape_string(v.shape()));
  }
}

template <typename T>
Var<T> squared_distance(Var<T> a, Var<T> b) {
  const Var<T> diff = sub(a, b);
  return sum(mul(diff, diff));
}

template <typename T>
Var<T> clean_side(const TokenPair<T>& pair, const LossConfig& config) {
  return config.stop_grad_clean ? stop_gradient(pair.clean_sem) : pair.clean_sem;
}

template <typename T>
void check_pair(const TokenPair<T>& pair, const char* op) {
  require_same(pair.clean_sem, pair.degraded_sem, op);
  if (pair.degraded_sem.rows() == 0 || pair.degraded_sem.cols() == 0) throw ShapeError(std::string(op) + ": empty tokens");
}

template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& parts) {
  return mean(concat_rows<T>(std::span<const Var<T>>(parts)));
}

}  // namespace

template <typename T>
Var<T> ncdm_loss(Var<T> anchor, Var<T> positive, Var<T> negative, T margin) {
  require_same(anchor, positive, "ncdm_loss");
  require_same(anchor, negative, "ncdm_loss");
  const Var<T> gap = sub(squared_distance(anchor, positive), squared_distance(anchor, negative));
  return relu(add_scalar(gap, margin));
}

template <typename T>
Var<T> sil_loss(const TokenPair<T>& pair, const LossConfig& config) {
  check_pair(pair, "sil_loss");
  if (pair.degraded_zdeg.rows() != 1 || pair.degraded_zdeg.cols() != pair.degraded_sem.cols()) {
    throw ShapeError("sil_loss: z_deg must be 1 x " + std::to_string(pair.degraded_sem.cols()));
  }
  const Var<T> zdeg = config.stop_grad_zdeg_in_sil ? stop_gradient(pair.degraded_zdeg) : pair.degraded_zdeg;
  const Var<T> alignment = mean(cosine_rows(pair.degraded_sem, clean_side(pair, config)));
  const Var<T> leakage = mean(abs(cosine_rows(pair.degraded_sem, zdeg)));
  return add_scalar(sub(leakage, alignment), T(1));
}

template <typename T>
Var<T> fsal_loss(const TokenPair<T>& pair, const LossConfig& config) {
  check_pair(pair, "fsal_loss");
  const Var<T> diff = sub(pair.degraded_sem, clean_side(pair, config));
  return scale(sum(mul(diff, diff)), T(1) / static_cast<T>(pair.degraded_sem.rows()));
}

template <typename T>
Var<T> csa_loss(const TokenPair<T>& pair, const LossConfig& config) {
  const Var<T> sil = sil_loss(pair, config);
  if (config.lambda_fsal == 0.0) return sil;
  return add(sil, scale(fsal_loss(pair, config), static_cast<T>(config.lambda_fsal)));
}

template <typename T>
Var<T> retrieval_infonce(Var<T> query, Var<T> positive, std::span<const Var<T>> negatives, T temperature) {
  if (!(temperature > T(0))) throw UsageError("retrieval_infonce: temperature must be > 0");
  require_vector(query, "retrieval_infonce");
  require_same(query, positive, "retrieval_infonce");
  std::vector<Var<T>> sims{cosine_rows(positive, query)};
  for (const Var<T>& neg : negatives) {
    require_same(query, neg, "retrieval_infonce");
    sims.push_back(cosine_rows(neg, query));
  }
  const Var<T> logits = scale(concat_cols<T>(std::span<const Var<T>>(sims)), T(1) / temperature);
  const AttentionMask all(1, sims.size(), true);
  const std::size_t target = 0;
  return masked_cross_entropy(logits, all, std::span<const std::size_t>(&target, 1));
}

template <typename T>
Var<T> inbatch_infonce(Var<T> queries, Var<T> documents, const AttentionMask& candidates,
                       std::span<const std::size_t> targets, T temperature) {
  if (!(temperature > T(0))) throw UsageError("inbatch_infonce: temperature must be > 0");
  if (queries.cols() == 0 || queries.cols() != documents.cols()) {
    throw ShapeError("inbatch_infonce: embedding dims " + shape_string(queries.shape()) + " vs " +
                     shape_string(documents.shape()));
  }
  const Var<T> sims = matmul_nt(normalize_rows(queries), normalize_rows(documents));
  return masked_cross_entropy(scale(sims, T(1) / temperature), candidates, targets);
}

namespace {

template <typename T>
void fill_components(const LossBatch<T>& batch, const LossConfig& config, LossTerms<T>& terms) {
  if (!batch.pairs.empty()) {
    std::vector<Var<T>> sils, fsals;
    for (const auto& pair : batch.pairs) {
      sils.push_back(sil_loss(pair, config));
      fsals.push_back(fsal_loss(pair, config));
    }
    terms.sil = mean_of(sils);
    terms.fsal = mean_of(fsals);
    terms.csa = config.lambda_fsal == 0.0
                    ? *terms.sil
                    : add(*terms.sil, scale(*terms.fsal, static_cast<T>(config.lambda_fsal)));
  }
  if (!batch.triplets.empty()) {
    std::vector<Var<T>> parts;
    for (const auto& t : batch.triplets) {
      parts.push_back(ncdm_loss(t.anchor, t.positive, t.negative, static_cast<T>(config.margin)));
    }
    terms.ncdm = mean_of(parts);
  }
}

template <typename T>
Var<T> weighted(Var<T> acc, const std::optional<Var<T>>& term, double weight, const char* what) {
  if (weight == 0.0) return acc;
  if (!term) throw UsageError(std::string("loss batch has no ") + what + " but its weight is positive");
  return add(acc, scale(*term, static_cast<T>(weight)));
}

}  // namespace

template <typename T>
LossTerms<T> total_retrieval_loss( const LossBatch<T>& batch, const LossConfig& config) {
  config.validate();
  if (batch.retrieval.empty()) throw UsageError("loss batch has no retrieval terms");
  LossTerms<T> terms{mean_of(batch.retrieval), {}, {}, {}, {}, {}};
  terms.retrieval = terms.total;
  fill_components(batch, config, terms);
  terms.total = weighted(terms.total, terms.csa, config.lambda1, "clean/degraded pairs");
  terms.total = weighted(terms.total, terms.ncdm, config.lambda2, "triplets");
  return terms;
}

template <typename T>
LossTerms<T> total_generation_loss( const LossBatch<T>& batch, const LossConfig& config) {
  config.validate();
  if (batch.pairs.empty()) throw UsageError("loss batch has no clean/degraded pairs");
  LossTerms<T> terms{Var<T>{}, {}, {}, {}, {}, {}};
  fill_components(batch, config, terms);
  terms.total = weighted(*terms.csa, terms.ncdm, config.lambda3, "triplets");
  return terms;
}

#define DUALPATH_INSTANTIATE_OBJECTIVES(T)                                                           \
  template struct TokenPair<T>;                                                                    \
  template Var<T> ncdm_loss(Var<T>, Var<T>, Var<T>, T);                                            \
  template Var<T> sil_loss(const TokenPair<T>&, const LossConfig&);                                \
  template Var<T> fsal_loss(const TokenPair<T>&, const LossConfig&);                               \
  template Var<T> csa_loss(const TokenPair<T>&, const LossConfig&);                                \
  template Var<T> retrieval_infonce(Var<T>, Var<T>, std::span<const Var<T>>, T);                   \
  template Var<T> inbatch_infonce(Var<T>, Var<T>, const AttentionMask&, std::span<const std::size_t>, \
                                  T);                                                              \
  template LossTerms<T> total_retrieval_loss(const LossBatch<T>&, const LossConfig&);    \
  template LossTerms<T> total_generation_loss(const LossBatch<T>&, const LossConfig&);

DUALPATH_INSTANTIATE_OBJECTIVES(float)
DUALPATH_INSTANTIATE_OBJECTIVES(double)

}  // namespace dualpath
