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

#include "dualpath/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "binary_io.hpp"
#include "dualpath/error.hpp"

namespace dualpath {
namespace {

constexpr char kIndexMagic[5] = "RVIX";

double row_norm(const float* row, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(row[j]) * row[j];
  return std::sqrt(s);
}

bool include_doc(const DocRecord& d, CorpusView view, std::optional<Split> split) {
  if (split && d.split != *split) return false;
  return view == CorpusView::kClean ? !d.degraded() : d.degraded();
}

const RankedList& find_list(std::span<const RankedList> lists, const std::string& query_id) {
  for (const auto& l : lists) {
    if (l.query_id == query_id) return l;
  }
  throw DataError("no ranked list for query '" + query_id + "'");
}

// 1-based rank of the first positive within k, or 0.
std::size_t first_positive_rank(const RankedList& list, const QueryRecord& query, std::size_t k) {
  if (query.positives.empty()) throw DataError("query '" + query.query_id + "' has no positives");
  const std::unordered_set<std::string> positives(query.positives.begin(), query.positives.end());
  const std::size_t n = std::min(k, list.hits.size());
  for (std::size_t r = 0; r < n; ++r) {
    if (positives.count(list.hits[r].doc_id)) return r + 1;
  }
  return 0;
}

}  // namespace

void EmbeddingIndex::validate() const {
  if (doc_ids.size() != embeddings.rows() && !(doc_ids.empty() && embeddings.size() == 0)) {
    throw DataError("index has " + std::to_string(doc_ids.size()) + " ids for " +
                    std::to_string(embeddings.rows()) + " rows");
  }
  for (std::size_t i = 0; i < doc_ids.size(); ++i) {
    const double n = row_norm(embeddings.data() + i * dim(), dim());
    if (!(std::fabs(n - 1.0) <= 1e-6)) throw DataError("index row " + std::to_string(i) + " is not unit-norm");
  }
}

EmbeddingIndex build_index(std::vector<std::string> doc_ids, const Tensor<float>& raw) {
  EmbeddingIndex index;
  if (doc_ids.empty()) return index;
  if (raw.rows() != doc_ids.size()) throw ShapeError("build_index: ids and rows differ");
  const std::size_t d = raw.cols();
  index.embeddings = Tensor<float>::matrix(raw.rows(), d);
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    const double n = row_norm(raw.data() + i * d, d);
    if (!(n > 1e-12) || !std::isfinite(n)) throw NumericError("cannot normalize embedding of '" + doc_ids[i] + "'");
    for (std::size_t j = 0; j < d; ++j) index.embeddings(i, j) = static_cast<float>(raw(i, j) / n);
  }
  index.doc_ids = std::move(doc_ids);
  return index;
}

void save_index(const std::filesystem::path& path, const EmbeddingIndex& index) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write index " + path.string());
  detail::BinaryWriter w(out);
  w.bytes(kIndexMagic, 4);
  w.u32(kIndexVersion);
  w.u64(index.size());
  w.u64(index.size() == 0 ? 0 : index.dim());
  w.str(index.checkpoint_id);
  w.str(index.manifest_id);
  if (index.size() > 0) w.bytes(index.embeddings.data(), index.embeddings.size() * sizeof(float));
  for (const auto& id : index.doc_ids) w.str(id);
  if (!out) throw DataError("failed writing index " + path.string());
}

EmbeddingIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open index " + path.string());
  detail::BinaryReader r(in, path.string());
  r.expect_magic(kIndexMagic);
  if (r.u32() != kIndexVersion) throw DataError(path.string() + ": unsupported index version");
  const std::uint64_t n = r.u64();
  const std::uint64_t d = r.u64();
  if (n > (1u << 24) || d > (1u << 16)) throw DataError(path.string() + ": implausible index shape");
  EmbeddingIndex index;
  index.checkpoint_id = r.str();
  index.manifest_id = r.str();
  if (n > 0) {
    index.embeddings = Tensor<float>::matrix(n, d);
    r.bytes(index.embeddings.data(), n * d * sizeof(float));
  }
  for (std::uint64_t i = 0; i < n; ++i) index.doc_ids.push_back(r.str());
  r.expect_end();
  index.validate();
  return index;
}

std::string_view to_string(CorpusView view) { return view == CorpusView::kClean ? "clean" : "degraded"; }

CorpusView parse_view(std::string_view name) {
  if (name == "clean") return CorpusView::kClean;
  if (name == "degraded") return CorpusView::kDegraded;
  throw UsageError("unknown corpus view '" + std::string(name) + "' (expected clean or degraded)");
}

Tensor<float> embed_images(std::span<const Image> images, const EncoderWeights<float>& weights,
                           const EncoderConfig& config) {
  Tensor<float> out = Tensor<float>::matrix(images.size(), config.dim);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor<float> z = config.nc_bidirectional ? forward_dual(images[i], weights, config).z_sem
                                                    : forward_inference(images[i], weights, config);
    for (std::size_t j = 0; j < config.dim; ++j) out(i, j) = z[j];
  }
  return out;
}

EmbeddingIndex embed_corpus(const EncoderWeights<float>& weights, const EncoderConfig& config,
                            const CorpusManifest& manifest, const std::filesystem::path& root, CorpusView view,
                            std::optional<Split> split) {
  std::vector<std::string> ids;
  std::vector<Image> images;
  for (const auto& d : manifest.docs) {
    if (!include_doc(d, view, split)) continue;
    const auto file = root / d.file;
    if (!std::filesystem::exists(file)) throw DataError("missing image " + file.string());
    ids.push_back(d.doc_id);
    images.push_back(read_ppm(file));
  }
  return build_index(std::move(ids), embed_images(images, weights, config));
}

RankedList retrieve_topk(const EmbeddingIndex& index, std::span<const float> query, std::size_t k,
                         std::string query_id) {
  if (k == 0) throw UsageError("retrieve_topk: k must be >= 1");
  if (index.size() == 0) throw DataError("retrieve_topk: empty index");
  const std::size_t d = index.dim();
  if (query.size() != d) {
    throw ShapeError("retrieve_topk: query has " + std::to_string(query.size()) + " dims, index has " +
                     std::to_string(d));
  }
  const double qn = row_norm(query.data(), d);
  if (!(qn > 1e-12) || !std::isfinite(qn)) throw NumericError("retrieve_topk: query cannot be normalized");

  std::vector<std::pair<double, std::size_t>> scored(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const float* row = index.embeddings.data() + i * d;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(query[j]) * row[j];
    scored[i] = {s / qn, i};
  }
  const auto before = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return index.doc_ids[a.second] < index.doc_ids[b.second];
  };
  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), before);
  RankedList list;
  list.query_id = std::move(query_id);
  for (std::size_t r = 0; r < n; ++r) list.hits.push_back({index.doc_ids[scored[r].second], scored[r].first});
  return list;
}

std::vector<QueryRecord> queries_for_view(const CorpusManifest& manifest, CorpusView view, Split split) {
  std::unordered_map<std::string, std::vector<std::string>> variants;
  if (view == CorpusView::kDegraded) {
    for (const auto& d : manifest.docs) {
      if (d.degraded()) variants[*d.source_doc_id].push_back(d.doc_id);
    }
  }
  std::vector<QueryRecord> out;
  for (const auto& q : manifest.queries) {
    if (q.split != split) continue;
    QueryRecord r = q;
    if (view == CorpusView::kDegraded) {
      r.positives.clear();
      for (const auto& p : q.positives) {
        const auto it = variants.find(p);
        if (it != variants.end()) r.positives.insert(r.positives.end(), it->second.begin(), it->second.end());
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

double mrr_at_k(std::span<const RankedList> lists, std::span<const QueryRecord> queries, std::size_t k) {
  if (queries.empty()) throw DataError("mrr_at_k: no queries");
  double total = 0.0;
  for (const auto& q : queries) {
    const std::size_t rank = first_positive_rank(find_list(lists, q.query_id), q, k);
    if (rank > 0) total += 1.0 / static_cast<double>(rank);
  }
  return total / static_cast<double>(queries.size());
}

double recall_at_k(std::span<const RankedList> lists, std::span<const QueryRecord> queries, std::size_t k) {
  if (queries.empty()) throw DataError("recall_at_k: no queries");
  std::size_t hits = 0;
  for (const auto& q : queries) hits += first_positive_rank(find_list(lists, q.query_id), q, k) > 0 ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

double silhouette(const Tensor<double>& points, std::span<const std::size_t> labels) {
  const std::size_t n = labels.size();
  if (points.rows() != n) throw ShapeError("silhouette: one label per point required");
  std::map<std::size_t, std::size_t> sizes;
  for (std::size_t l : labels) sizes[l]++;
  if (sizes.size() < 2) throw UsageError("silhouette needs at least two labels");
  for (const auto& [label, count] : sizes) {
    if (count < 2) throw UsageError("silhouette: label " + std::to_string(label) + " has a single member");
  }
  const std::size_t d = points.cols();
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = points(i, c) - points(j, c);
        s += diff * diff;
      }
      dist[i * n + j] = dist[j * n + i] = std::sqrt(s);
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<std::size_t, double> sums;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sums[labels[j]] += dist[i * n + j];
    }
    const double a = sums[labels[i]] / static_cast<double>(sizes[labels[i]] - 1);
    double b = INFINITY;
    for (const auto& [label, s] : sums) {
      if (label != labels[i]) b = std::min(b, s / static_cast<double>(sizes[label]));
    }
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

Tensor<double> similarity_map(const EncoderWeights<float>& weights, const EncoderConfig& config, const Image& image,
                              std::span<const float> query) {
  if (query.size() != config.dim) throw ShapeError("similarity_map: query dimension differs from the encoder");
  const auto out = forward_dual(image, weights, config);
  const double qn = row_norm(query.data(), query.size());
  if (!(qn > 1e-12)) throw NumericError("similarity_map: zero query");
  Tensor<double> grid = Tensor<double>::matrix(config.grid_rows(), config.grid_cols());
  for (std::size_t t = 0; t < config.tokens(); ++t) {
    const float* tok = out.sem_tokens.data() + t * config.dim;
    const double tn = row_norm(tok, config.dim);
    if (!(tn > 1e-12)) throw NumericError("similarity_map: zero patch token");
    double s = 0.0;
    for (std::size_t j = 0; j < config.dim; ++j) s += static_cast<double>(tok[j]) * query[j];
    grid[t] = s / (tn * qn);
  }
  return grid;
}

void write_grid_csv(const std::filesystem::path& path, const Tensor<double>& grid) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(9);
  for (std::size_t r = 0; r < grid.rows(); ++r) {
    for (std::size_t c = 0; c < grid.cols(); ++c) out << (c ? "," : "") << grid(r, c);
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace dualpath
