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

#include "dualpath/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "dualpath/error.hpp"
#include "dualpath/rng.hpp"

namespace dualpath {
namespace {

constexpr std::array<std::size_t, 4> kPeriods{2, 3, 5, 8};

struct Box {
  std::size_t y0, y1, x0, x1;
};

Box motif_box(const DocumentStyle& style) {
  return {style.height / 4, style.height - style.height / 4, style.width / 4, style.width - style.width / 4};
}

std::uint64_t stream_tag(const char* tag) { return fnv1a64(tag); }

}  // namespace

std::string_view to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + std::string(name) + "'");
}

std::vector<std::uint8_t> motif_mask(std::size_t class_id, const DocumentStyle& style) {
  if (class_id >= style.classes) {
    throw UsageError("class " + std::to_string(class_id) + " outside 0.." + std::to_string(style.classes - 1));
  }
  const std::size_t pattern = class_id % 4;
  const std::size_t period = kPeriods[(class_id / 4) % 4];
  const std::size_t phase = class_id / 16;  // only for more than 16 classes
  const std::size_t on = (period + 1) / 2;
  const Box box = motif_box(style);
  std::vector<std::uint8_t> mask(style.height * style.width, 0);
  for (std::size_t y = box.y0; y < box.y1; ++y) {
    for (std::size_t x = box.x0; x < box.x1; ++x) {
      const std::size_t ry = y - box.y0 + (pattern == 0 ? phase : 0);
      const std::size_t rx = x - box.x0 + (pattern == 0 ? 0 : phase);
      bool ink = false;
      switch (pattern) {
        case 0: ink = ry % period < on; break;
        case 1: ink = rx % period < on; break;
        case 2: ink = (ry / period + rx / period) % 2 == 0; break;
        default: ink = (rx + ry) % period < on; break;
      }
      mask[y * style.width + x] = ink ? 1 : 0;
    }
  }
  return mask;
}

Image gen_document(std::size_t class_id, std::uint64_t seed, const DocumentStyle& style) {
  const auto motif = motif_mask(class_id, style);
  Philox rng(seed, stream_tag("document"));
  const std::size_t ch = style.channels;
  std::vector<double> paper(ch), ink(ch);
  for (auto& p : paper) p = 0.82 + 0.13 * rng.uniform();
  for (auto& k : ink) k = 0.05 + 0.25 * rng.uniform();
  const double contrast = style.contrast_min + (1.0 - style.contrast_min) * rng.uniform();

  std::vector<double> coverage(style.height * style.width, 0.0);
  // Text-line clutter above and below the motif box.
  const Box box = motif_box(style);
  const std::size_t offset = rng.below(3);
  for (std::size_t y = 1 + offset; y + 1 < style.height; y += 3) {
    if (y + 1 >= box.y0 && y <= box.y1) continue;
    std::size_t x = 1 + rng.below(3);
    while (x + 1 < style.width) {
      const std::size_t len = 2 + rng.below(5);
      for (std::size_t i = x; i < std::min(x + len, style.width - 1); ++i) coverage[y * style.width + i] = 0.6;
      x += len + 1 + rng.below(3);
    }
  }
  for (std::size_t i = 0; i < motif.size(); ++i) {
    if (motif[i]) coverage[i] = contrast;
  }
  if (style.classes > 1 && style.distractor > 0.0) {
    const std::size_t other = (class_id + 1 + rng.below(style.classes - 1)) % style.classes;
    const auto faint = motif_mask(other, style);
    for (std::size_t i = 0; i < faint.size(); ++i) {
      if (faint[i]) coverage[i] = std::min(1.0, coverage[i] + style.distractor);
    }
  }

  Image img(style.height, style.width, ch);
  for (std::size_t p = 0; p < style.height * style.width; ++p) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double v = paper[c] + coverage[p] * (ink[c] - paper[c]) + style.grain * rng.normal();
      img.pixels[p * ch + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

std::size_t nearest_template_class(const Image& image, const DocumentStyle& style) {
  if (image.height != style.height || image.width != style.width || image.channels != style.channels) {
    throw ShapeError("nearest_template_class: image does not match the document style");
  }
  const Box box = motif_box(style);
  std::vector<double> dark;
  for (std::size_t y = box.y0; y < box.y1; ++y) {
    for (std::size_t x = box.x0; x < box.x1; ++x) {
      double v = 0.0;
      for (std::size_t c = 0; c < image.channels; ++c) v += image.at(y, x, c);
      dark.push_back(1.0 - v / static_cast<double>(image.channels));
    }
  }
  double mean = 0.0;
  for (double d : dark) mean += d;
  mean /= static_cast<double>(dark.size());

  std::size_t best = 0;
  double best_score = -INFINITY;
  for (std::size_t k = 0; k < style.classes; ++k) {
    const auto mask = motif_mask(k, style);
    std::vector<double> m;
    for (std::size_t y = box.y0; y < box.y1; ++y) {
      for (std::size_t x = box.x0; x < box.x1; ++x) m.push_back(mask[y * style.width + x]);
    }
    double mm = 0.0;
    for (double v : m) mm += v;
    mm /= static_cast<double>(m.size());
    double dot = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      dot += (m[i] - mm) * (dark[i] - mean);
      norm += (m[i] - mm) * (m[i] - mm);
    }
    const double score = norm > 0.0 ? dot / std::sqrt(norm) : -INFINITY;
    if (score > best_score) {
      best_score = score;
      best = k;
    }
  }
  return best;
}

void CorpusManifest::validate() const {
  std::unordered_map<std::string, const DocRecord*> by_id;
  for (const auto& d : docs) {
    if (!by_id.emplace(d.doc_id, &d).second) throw DataError("duplicate doc id '" + d.doc_id + "'");
  }
  for (const auto& d : docs) {
    if (!d.source_doc_id) continue;
    const auto it = by_id.find(*d.source_doc_id);
    if (it == by_id.end()) throw DataError("doc '" + d.doc_id + "' links to unknown source '" + *d.source_doc_id + "'");
    if (it->second->split != d.split) throw DataError("doc '" + d.doc_id + "' does not inherit its source split");
    if (it->second->class_id != d.class_id) throw DataError("doc '" + d.doc_id + "' does not inherit its source class");
  }
  std::set<std::string> query_ids;
  for (const auto& q : queries) {
    if (!query_ids.insert(q.query_id).second) throw DataError("duplicate query id '" + q.query_id + "'");
    if (q.positives.empty()) throw DataError("query '" + q.query_id + "' has no positives");
    for (const auto& p : q.positives) {
      const auto it = by_id.find(p);
      if (it == by_id.end()) throw DataError("query '" + q.query_id + "' names unknown doc '" + p + "'");
      if (it->second->split != q.split) throw DataError("query '" + q.query_id + "' crosses splits");
    }
  }
}

const DocRecord& CorpusManifest::doc(const std::string& doc_id) const {
  for (const auto& d : docs) {
    if (d.doc_id == doc_id) return d;
  }
  throw DataError("unknown doc id '" + doc_id + "'");
}

std::size_t CorpusManifest::num_classes() const {
  std::size_t n = 0;
  for (const auto& d : docs) n = std::max(n, d.class_id + 1);
  for (const auto& q : queries) n = std::max(n, q.class_id + 1);
  return n;
}

void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& d : manifest.docs) {
    nlohmann::json j{{"type", "doc"},   {"doc_id", d.doc_id}, {"class_id", d.class_id},
                     {"split", std::string(to_string(d.split))}, {"file", d.file},     {"seed", d.seed}};
    if (d.family) j["degradation_family"] = std::string(to_string(*d.family));
    if (d.severity) j["severity"] = *d.severity;
    if (d.source_doc_id) j["source_doc_id"] = *d.source_doc_id;
    out << j.dump() << '\n';
  }
  for (const auto& q : manifest.queries) {
    nlohmann::json j{{"type", "query"},
                     {"query_id", q.query_id},
                     {"class_id", q.class_id},
                     {"split", std::string(to_string(q.split))},
                     {"positives", q.positives}};
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("failed writing manifest " + path.string());
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + path.string());
  CorpusManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "doc") {
        DocRecord d;
        d.doc_id = j.at("doc_id").get<std::string>();
        d.class_id = j.at("class_id").get<std::size_t>();
        d.split = parse_split(j.at("split").get<std::string>());
        d.file = j.at("file").get<std::string>();
        d.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("degradation_family")) {
          d.family = parse_family(j["degradation_family"].get<std::string>());
        }
        if (j.contains("severity")) d.severity = j["severity"].get<int>();
        if (j.contains("source_doc_id")) d.source_doc_id = j["source_doc_id"].get<std::string>();
        manifest.docs.push_back(std::move(d));
      } else if (type == "query") {
        QueryRecord q;
        q.query_id = j.at("query_id").get<std::string>();
        q.class_id = j.at("class_id").get<std::size_t>();
        q.split = parse_split(j.at("split").get<std::string>());
        q.positives = j.at("positives").get<std::vector<std::string>>();
        manifest.queries.push_back(std::move(q));
      } else {
        throw DataError("unknown record type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + e.what());
    } catch (const Error& e) {
      throw DataError(where + e.what());
    }
  }
  manifest.validate();
  return manifest;
}

std::size_t test_count(const CorpusConfig& config) {
  const auto n = static_cast<double>(config.docs_per_class);
  const auto k = static_cast<std::size_t>(std::llround(n * config.test_fraction));
  return std::clamp<std::size_t>(k, 1, config.docs_per_class - 1);
}

CorpusManifest gen_corpus(const CorpusConfig& config, const std::filesystem::path& out_dir) {
  if (config.classes < 2 || config.docs_per_class < 2) throw UsageError("gen_corpus needs C >= 2 and N >= 2");
  if (!(config.test_fraction > 0.0 && config.test_fraction < 1.0)) {
    throw UsageError("test_fraction must lie in (0, 1)");
  }
  DocumentStyle style = config.style;
  style.classes = config.classes;
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw DataError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  const std::size_t n_test = test_count(config);
  CorpusManifest manifest;
  for (std::size_t c = 0; c < config.classes; ++c) {
    // Seeded choice of which docs of this class go to the test split.
    std::vector<std::size_t> order(config.docs_per_class);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Philox rng(derive_seed(config.seed, std::uint64_t{c}), stream_tag("split"));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<bool> is_test(config.docs_per_class, false);
    for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

    for (std::size_t i = 0; i < config.docs_per_class; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "doc_%03zu_%04zu", c, i);
      DocRecord d;
      d.doc_id = id;
      d.class_id = c;
      d.split = is_test[i] ? Split::kTest : Split::kTrain;
      d.file = "images/" + d.doc_id + ".ppm";
      d.seed = derive_seed(config.seed, d.doc_id);
      write_ppm(out_dir / d.file, gen_document(c, d.seed, style));
      manifest.docs.push_back(std::move(d));
    }
  }
  for (Split split : {Split::kTrain, Split::kTest}) {
    for (std::size_t c = 0; c < config.classes; ++c) {
      QueryRecord q;
      char id[32];
      std::snprintf(id, sizeof id, "q_%s_%03zu", split == Split::kTrain ? "train" : "test", c);
      q.query_id = id;
      q.class_id = c;
      q.split = split;
      for (const auto& d : manifest.docs) {
        if (d.class_id == c && d.split == split) q.positives.push_back(d.doc_id);
      }
      manifest.queries.push_back(std::move(q));
    }
  }
  manifest.validate();
  write_manifest(out_dir / "manifest.jsonl", manifest);
  return manifest;
}

DegradationSpec corpus_degradation(std::uint64_t master_seed, const std::string& doc_id) {
  Philox rng(derive_seed(master_seed, doc_id), stream_tag("degrade_corpus"));
  DegradationSpec spec;
  spec.family = all_families()[rng.below(kNumFamilies)];
  spec.severity = 1 + static_cast<int>(rng.below(kNumSeverities));
  spec.seed = rng.next_u64();
  return spec;
}

CorpusManifest degrade_corpus(const CorpusManifest& manifest, const std::filesystem::path& root,
                              std::uint64_t master_seed, const SeverityTable& table) {
  manifest.validate();
  CorpusManifest out = manifest;
  std::set<std::string> ids;
  for (const auto& d : manifest.docs) ids.insert(d.doc_id);
  for (const auto& d : manifest.docs) {
    if (d.degraded()) continue;
    const std::filesystem::path src = root / d.file;
    if (!std::filesystem::exists(src)) throw DataError("missing image " + src.string());
    DocRecord v;
    v.doc_id = d.doc_id + "_deg";
    if (!ids.insert(v.doc_id).second) throw DataError("duplicate doc id '" + v.doc_id + "'");
    const DegradationSpec spec = corpus_degradation(master_seed, d.doc_id);
    v.class_id = d.class_id;
    v.split = d.split;
    v.file = "images/" + v.doc_id + ".ppm";
    v.seed = spec.seed;
    v.family = spec.family;
    v.severity = spec.severity;
    v.source_doc_id = d.doc_id;
    const std::filesystem::path dst = root / v.file;
    std::error_code ec;
    std::filesystem::create_directories(dst.parent_path(), ec);
    write_ppm(dst, degrade(read_ppm(src), spec, table));
    out.docs.push_back(std::move(v));
  }
  out.validate();
  return out;
}

}  // namespace dualpath
