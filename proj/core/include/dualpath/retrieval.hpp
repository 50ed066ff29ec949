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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualpath/corpus.hpp"
#include "dualpath/encoder.hpp"
#include "dualpath/tensor.hpp"

namespace dualpath {

// Exact dense index over unit-norm document embeddings.
struct EmbeddingIndex {
  std::vector<std::string> doc_ids;
  Tensor<float> embeddings;  // N x d, rows unit-norm
  std::string checkpoint_id;
  std::string manifest_id;

  std::size_t size() const { return doc_ids.size(); }
  std::size_t dim() const { return embeddings.cols(); }
  // Throws DataError unless ids match rows and every row has norm 1 +- 1e-6.
  void validate() const;
  bool operator==(const EmbeddingIndex&) const = default;
};

// Normalizes each raw row; throws NumericError for a zero row.
EmbeddingIndex build_index(std::vector<std::string> doc_ids, const Tensor<float>& raw);

// Header "RVIX", version, N, d (little-endian), provenance strings, float32
// rows, then the doc-id table.
inline constexpr std::uint32_t kIndexVersion = 1;
void save_index(const std::filesystem::path& path, const EmbeddingIndex& index);
EmbeddingIndex load_index(const std::filesystem::path& path);

enum class CorpusView { kClean, kDegraded };
std::string_view to_string(CorpusView view);
CorpusView parse_view(std::string_view name);

// Semantic embedding of each image: forward_inference, or the dual forward's
// z_sem when the non-causal token is bidirectional. Raw, not normalized.
Tensor<float> embed_images(std::span<const Image> images, const EncoderWeights<float>& weights,
                           const EncoderConfig& config);

// Embeds the docs of one view (clean originals or degraded variants),
// optionally restricted to a split. Images are read relative to `root`.
EmbeddingIndex embed_corpus(const EncoderWeights<float>& weights, const EncoderConfig& config,
                            const CorpusManifest& manifest, const std::filesystem::path& root, CorpusView view,
                            std::optional<Split> split = std::nullopt);

struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;
  bool operator==(const ScoredDoc&) const = default;
};

struct RankedList {
  std::string query_id;
  std::vector<ScoredDoc> hits;  // scores non-increasing, ties by ascending doc_id
};

// Cosine scores of `query` (1 x d or d values) against every row; top k.
RankedList retrieve_topk(const EmbeddingIndex& index, std::span<const float> query, std::size_t k,
                         std::string query_id = {});

// Rewrites positives to the docs of `view`: clean ids stay, degraded view
// maps each positive to the variants whose source it is.
std::vector<QueryRecord> queries_for_view(const CorpusManifest& manifest, CorpusView view, Split split);

// Lists are matched to queries by query_id. Throws DataError for a query
// without positives or without a ranked list.
double mrr_at_k(std::span<const RankedList> lists, std::span<const QueryRecord> queries, std::size_t k = 10);
double recall_at_k(std::span<const RankedList> lists, std::span<const QueryRecord> queries, std::size_t k);

// Mean silhouette with Euclidean distance. Needs at least two labels, each
// with at least two members (UsageError otherwise).
double silhouette(const Tensor<double>& points, std::span<const std::size_t> labels);

// Cosine between `query` and each final-layer patch token, laid out as
// grid_rows x grid_cols.
Tensor<double> similarity_map(const EncoderWeights<float>& weights, const EncoderConfig& config, const Image& image,
                              std::span<const float> query);
void write_grid_csv(const std::filesystem::path& path, const Tensor<double>& grid);

}  // namespace dualpath
