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

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualpath/attention_mask.hpp"
#include "dualpath/encoder.hpp"
#include "dualpath/tape.hpp"

namespace dualpath {

struct LossConfig {
  double margin = 1.0;        // triplet margin
  double temperature = 0.05;  // InfoNCE temperature
  double lambda_fsal = 1.0;   // weight of the token-wise squared term inside CSA
  double lambda1 = 1.0;       // CSA weight in the retrieval objective
  double lambda2 = 0.5;       // NCDM weight in the retrieval objective
  double lambda3 = 0.5;       // NCDM weight in the generation objective
  bool stop_grad_clean = true;
  bool stop_grad_zdeg_in_sil = false;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

// Clean and degraded encodings of one document.
template <typename T>
struct TokenPair {
  Var<T> clean_sem;     // tokens x dim
  Var<T> degraded_sem;  // tokens x dim
  Var<T> degraded_zdeg; // 1 x dim
  std::string doc_id;

  static TokenPair from_outputs(const EncoderOutputVars<T>& clean, const EncoderOutputVars<T>& degraded,
                                std::string doc_id);
};

template <typename T>
struct Triplet {
  Var<T> anchor, positive, negative;  // 1 x dim each
};

template <typename T>
Var<T> ncdm_loss(Var<T> anchor, Var<T> positive, Var<T> negative, T margin);

template <typename T> Var<T> sil_loss(const TokenPair<T>& pair, const LossConfig& config);
template <typename T> Var<T> fsal_loss(const TokenPair<T>& pair, const LossConfig& config);
template <typename T> Var<T> csa_loss(const TokenPair<T>& pair, const LossConfig& config);

// Single-query InfoNCE with cosine similarity; every argument is 1 x dim.
template <typename T>
Var<T> retrieval_infonce(Var<T> query, Var<T> positive, std::span<const Var<T>> negatives, T temperature);

// Batched InfoNCE over a query-document cosine matrix. Row i scores query i
// against every document allowed by `candidates`; targets[i] is its positive.
// Returns the per-query losses as [queries x 1].
template <typename T>
Var<T> inbatch_infonce(Var<T> queries, Var<T> documents, const AttentionMask& candidates,
                       std::span<const std::size_t> targets, T temperature);

template <typename T>
struct LossBatch {
  std::vector<Var<T>> retrieval;  // per-query loss columns, averaged over all entries
  std::vector<TokenPair<T>> pairs;
  std::vector<Triplet<T>> triplets;
};

template <typename T>
struct LossTerms {
  Var<T> total;
  std::optional<Var<T>> retrieval, sil, fsal, csa, ncdm;
};

// L_Ret + lambda1 * L_CSA + lambda2 * L_NCDM. Terms with a zero weight are
// skipped, so the batch only needs pairs/triplets when their weight is positive.
template <typename T>
LossTerms<T> total_retrieval_loss(const LossBatch<T>& batch, const LossConfig& config);

// L_CSA + lambda3 * L_NCDM.
template <typename T>
LossTerms<T> total_generation_loss(const LossBatch<T>& batch, const LossConfig& config);

}  // namespace dualpath
