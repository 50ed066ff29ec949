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

#include <span>

#include "dualpath/attention_mask.hpp"
#include "dualpath/tape.hpp"

// Differentiable primitives over rank-2 tensors. Every op checks its output
// for NaN/Inf and throws NumericError rather than propagating a bad value.
namespace dualpath {

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
// a[m x n] + row[1 x n], broadcast over rows.
template <typename T> Var<T> add_row(Var<T> a, Var<T> row);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> add_scalar(Var<T> a, T s);

// a[m x k] * b[k x n]
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
// a[m x k] * b[n x k]^T
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);

// Row-wise softmax restricted to keys the mask allows. Masked entries are
// exactly zero; a row with no allowed key is a NumericError.
template <typename T> Var<T> masked_softmax(Var<T> scores, const AttentionMask& mask);

// Row-wise layer normalization with affine gamma/beta of shape [1 x n].
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

// tanh-approximated GELU.
template <typename T> Var<T> gelu(Var<T> x);
// max(0, x); derivative taken as 0 at x == 0.
template <typename T> Var<T> relu(Var<T> x);
// |x|; derivative taken as 0 at x == 0.
template <typename T> Var<T> abs(Var<T> x);

template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
// Column-wise mean over rows: [m x n] -> [1 x n].
template <typename T> Var<T> mean_rows(Var<T> x);
// Squared L2 norm of each row: [m x n] -> [m x 1].
template <typename T> Var<T> row_sq_norms(Var<T> x);
// Each row divided by its L2 norm. Rows with norm below `min_norm` throw.
template <typename T> Var<T> normalize_rows(Var<T> x, T min_norm = T(1e-12));
// Cosine similarity per row: [m x n] with [m x n] or [1 x n] -> [m x 1].
template <typename T> Var<T> cosine_rows(Var<T> a, Var<T> b, T min_norm = T(1e-12));
// log(sum(exp(x))) over all entries, max-stabilized -> [1 x 1].
template <typename T> Var<T> logsumexp(Var<T> x);

// Per-row softmax cross-entropy restricted to mask-allowed columns:
// out[i] = logsumexp_{j allowed}(logits[i, j]) - logits[i, targets[i]] -> [n x 1].
// Each target must be an allowed column.
template <typename T>
Var<T> masked_cross_entropy(Var<T> logits, const AttentionMask& mask, std::span<const std::size_t> targets);

template <typename T> Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count);
template <typename T> Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count);
template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);

// Same value, recorded as a constant: nothing upstream receives gradient through it.
template <typename T> Var<T> stop_gradient(Var<T> x);

}  // namespace dualpath
