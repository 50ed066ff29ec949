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
#include <string>
#include <vector>

#include "dualpath/degradation.hpp"
#include "dualpath/image.hpp"

namespace dualpath {

enum class Split { kTrain, kTest };
std::string_view to_string(Split split);
Split parse_split(std::string_view name);  // throws DataError

struct DocumentStyle {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::size_t classes = 16;
  // Amplitude of the faint off-class pattern laid over the whole page.
  double distractor = 0.12;
  // Motif ink coverage is drawn uniformly from [contrast_min, 1].
  double contrast_min = 0.55;
  // Standard deviation of the per-pixel sensor grain.
  double grain = 0.02;
  bool operator==(const DocumentStyle&) const = default;
};

// Binary motif of a class on the full page (1 = ink), zero outside the
// central motif box. Row-major, height x width.
std::vector<std::uint8_t> motif_mask(std::size_t class_id, const DocumentStyle& style);

// Renders one page: the class motif in the central box plus seeded paper
// tint, ink colour, text-line clutter, a faint distractor motif and grain.
Image gen_document(std::size_t class_id, std::uint64_t seed, const DocumentStyle& style = {});

// Brute-force template matcher: the class whose motif correlates best with
// the page darkness inside the motif box.
std::size_t nearest_template_class(const Image& image, const DocumentStyle& style);

struct DocRecord {
  std::string doc_id;
  std::size_t class_id = 0;
  Split split = Split::kTrain;
  std::string file;  // relative to the manifest directory
  std::uint64_t seed = 0;
  std::optional<DegradationFamily> family;
  std::optional<int> severity;
  std::optional<std::string> source_doc_id;

  bool degraded() const { return source_doc_id.has_value(); }
  bool operator==(const DocRecord&) const = default;
};

struct QueryRecord {
  std::string query_id;
  std::size_t class_id = 0;
  Split split = Split::kTrain;
  std::vector<std::string> positives;  // clean doc ids of the same class and split
  bool operator==(const QueryRecord&) const = default;
};

struct CorpusManifest {
  std::vector<DocRecord> docs;
  std::vector<QueryRecord> queries;
  bool operator==(const CorpusManifest&) const = default;

  // Throws DataError on duplicate doc ids, dangling source ids, positives
  // that do not resolve, or degraded docs whose split differs from the source.
  void validate() const;
  const DocRecord& doc(const std::string& doc_id) const;
  std::size_t num_classes() const;
};

// One JSON object per line, keys sorted; "type" is "doc" or "query".
void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);
CorpusManifest read_manifest(const std::filesystem::path& path);

struct CorpusConfig {
  std::size_t classes = 16;
  std::size_t docs_per_class = 64;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  DocumentStyle style;
};

// Test docs per class: round(N * test_fraction) clamped to [1, N - 1].
std::size_t test_count(const CorpusConfig& config);

// Writes images/<doc_id>.ppm and manifest.jsonl under `out_dir`.
CorpusManifest gen_corpus(const CorpusConfig& config, const std::filesystem::path& out_dir);

// Adds one degraded variant per clean doc. Family and severity come from a
// per-item seed derive_seed(master_seed, doc_id); variants inherit class and
// split and link back through source_doc_id. Images are read from and
// written under `root` (the manifest directory).
CorpusManifest degrade_corpus(const CorpusManifest& manifest, const std::filesystem::path& root,
                              std::uint64_t master_seed, const SeverityTable& table = SeverityTable::builtin());

// The spec degrade_corpus assigns to one clean doc.
DegradationSpec corpus_degradation(std::uint64_t master_seed, const std::string& doc_id);

}  // namespace dualpath
