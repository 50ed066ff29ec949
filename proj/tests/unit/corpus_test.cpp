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

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "dualpath/corpus.hpp"
#include "dualpath/error.hpp"
#include "scratch_dir.hpp"

namespace dualpath {
namespace {

using testing::ScratchDir;
using testing::read_bytes;

double differing_fraction(const Image& a, const Image& b, float threshold) {
  std::size_t differ = 0;
  for (std::size_t p = 0; p < a.height * a.width; ++p) {
    for (std::size_t c = 0; c < a.channels; ++c) {
      if (std::fabs(a.pixels[p * a.channels + c] - b.pixels[p * b.channels + c]) > threshold) {
        ++differ;
        break;
      }
    }
  }
  return static_cast<double>(differ) / static_cast<double>(a.height * a.width);
}

TEST(GenDocument, Deterministic) {
  EXPECT_EQ(gen_document(3, 77), gen_document(3, 77));
}

TEST(GenDocument, ClassesDifferInMoreThanTenPercentOfPixels) {
  const DocumentStyle style;
  for (std::size_t a = 0; a < style.classes; ++a) {
    for (std::size_t b = a + 1; b < style.classes; ++b) {
      EXPECT_GT(differing_fraction(gen_document(a, 5), gen_document(b, 5), 0.05f), 0.10) << a << " vs " << b;
    }
  }
}

TEST(GenDocument, SameClassOtherSeedKeepsMotif) {
  const DocumentStyle style;
  for (std::size_t c = 0; c < style.classes; ++c) {
    const Image a = gen_document(c, 1), b = gen_document(c, 2);
    EXPECT_NE(a, b);
    EXPECT_EQ(nearest_template_class(a, style), c);
    EXPECT_EQ(nearest_template_class(b, style), c);
  }
}

TEST(GenDocument, TemplateClassifierAboveNinetyFivePercent) {
  const DocumentStyle style;
  std::size_t correct = 0, total = 0;
  for (std::size_t c = 0; c < style.classes; ++c) {
    for (std::uint64_t s = 0; s < 64; ++s) {
      correct += nearest_template_class(gen_document(c, 1000 + 97 * s + c, style), style) == c ? 1 : 0;
      ++total;
    }
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(total), 0.95);
}

TEST(GenDocument, MotifsAreDistinctAndRejectBadClass) {
  DocumentStyle style;
  style.classes = 32;
  for (std::size_t a = 0; a < style.classes; ++a) {
    for (std::size_t b = a + 1; b < style.classes; ++b) EXPECT_NE(motif_mask(a, style), motif_mask(b, style));
  }
  EXPECT_THROW(gen_document(32, 1, style), UsageError);
}

TEST(GenCorpus, TinyCorpusCounts) {
  ScratchDir dir;
  CorpusConfig cfg;
  cfg.classes = 2;
  cfg.docs_per_class = 2;
  cfg.seed = 7;
  const auto m = gen_corpus(cfg, dir.path());
  EXPECT_EQ(m.docs.size(), 4u);
  std::size_t train_q = 0, test_q = 0;
  for (const auto& q : m.queries) (q.split == Split::kTrain ? train_q : test_q)++;
  EXPECT_EQ(train_q, 2u);
  EXPECT_EQ(test_q, 2u);
  for (const auto& d : m.docs) EXPECT_TRUE(std::filesystem::exists(dir / d.file));
  EXPECT_EQ(read_manifest(dir / "manifest.jsonl"), m);
}

TEST(GenCorpus, DefaultScaleHasExactPerSplitBalance) {
  ScratchDir dir;
  CorpusConfig cfg;
  cfg.seed = 11;
  const auto m = gen_corpus(cfg, dir.path());
  ASSERT_EQ(m.docs.size(), 1024u);
  std::map<std::pair<std::size_t, Split>, std::size_t> counts;
  for (const auto& d : m.docs) counts[{d.class_id, d.split}]++;
  EXPECT_EQ(test_count(cfg), 13u);
  for (std::size_t c = 0; c < 16; ++c) {
    EXPECT_EQ((counts[{c, Split::kTrain}]), 51u);
    EXPECT_EQ((counts[{c, Split::kTest}]), 13u);
  }
  EXPECT_EQ(m.queries.size(), 32u);
  for (const auto& q : m.queries) EXPECT_EQ(q.positives.size(), q.split == Split::kTrain ? 51u : 13u);
}

TEST(GenCorpus, RerunIsByteIdentical) {
  ScratchDir a, b;
  CorpusConfig cfg;
  cfg.classes = 4;
  cfg.docs_per_class = 5;
  cfg.seed = 3;
  gen_corpus(cfg, a.path());
  gen_corpus(cfg, b.path());
  EXPECT_EQ(read_bytes(a / "manifest.jsonl"), read_bytes(b / "manifest.jsonl"));
  EXPECT_EQ(read_bytes(a / "images/doc_002_0003.ppm"), read_bytes(b / "images/doc_002_0003.ppm"));
}

TEST(GenCorpus, RejectsTooSmall) {
  ScratchDir dir;
  CorpusConfig cfg;
  cfg.classes = 1;
  EXPECT_THROW(gen_corpus(cfg, dir.path()), UsageError);
  cfg.classes = 2;
  cfg.docs_per_class = 1;
  EXPECT_THROW(gen_corpus(cfg, dir.path()), UsageError);
}

TEST(Manifest, ValidationCatchesBrokenLinks) {
  CorpusManifest m;
  m.docs.push_back({"a", 0, Split::kTrain, "a.ppm", 1, {}, {}, {}});
  m.docs.push_back({"a", 0, Split::kTrain, "b.ppm", 1, {}, {}, {}});
  EXPECT_THROW(m.validate(), DataError);
  m.docs[1].doc_id = "b";
  m.docs[1].source_doc_id = "zzz";
  EXPECT_THROW(m.validate(), DataError);
  m.docs[1].source_doc_id = "a";
  m.docs[1].split = Split::kTest;
  EXPECT_THROW(m.validate(), DataError);
  m.docs[1].split = Split::kTrain;
  EXPECT_NO_THROW(m.validate());
  m.queries.push_back({"q", 0, Split::kTrain, {"nope"}});
  EXPECT_THROW(m.validate(), DataError);
}

TEST(Manifest, RoundTripWithDegradedRecords) {
  ScratchDir dir;
  CorpusManifest m;
  m.docs.push_back({"a", 1, Split::kTest, "images/a.ppm", 18446744073709551615ULL, {}, {}, {}});
  m.docs.push_back({"a_deg", 1, Split::kTest, "images/a_deg.ppm", 5, DegradationFamily::kShadow, 4, "a"});
  m.queries.push_back({"q", 1, Split::kTest, {"a"}});
  write_manifest(dir / "m.jsonl", m);
  EXPECT_EQ(read_manifest(dir / "m.jsonl"), m);
  std::ofstream(dir / "bad.jsonl") << "{\"type\": \"doc\"}\n";
  EXPECT_THROW(read_manifest(dir / "bad.jsonl"), DataError);
  std::ofstream(dir / "junk.jsonl") << "not json\n";
  EXPECT_THROW(read_manifest(dir / "junk.jsonl"), DataError);
}

TEST(DegradeCorpus, EmptyManifestGivesEmptyOutput) {
  ScratchDir dir;
  EXPECT_EQ(degrade_corpus(CorpusManifest{}, dir.path(), 1), CorpusManifest{});
}

TEST(DegradeCorpus, DeterministicAndLinked) {
  ScratchDir a, b;
  CorpusConfig cfg;
  cfg.classes = 3;
  cfg.docs_per_class = 4;
  cfg.seed = 9;
  const auto ma = degrade_corpus(gen_corpus(cfg, a.path()), a.path(), 42);
  const auto mb = degrade_corpus(gen_corpus(cfg, b.path()), b.path(), 42);
  EXPECT_EQ(ma, mb);
  ASSERT_EQ(ma.docs.size(), 24u);
  std::size_t degraded = 0;
  for (const auto& d : ma.docs) {
    if (!d.degraded()) continue;
    ++degraded;
    const auto& src = ma.doc(*d.source_doc_id);
    EXPECT_EQ(d.split, src.split);
    EXPECT_EQ(d.class_id, src.class_id);
    ASSERT_TRUE(d.family && d.severity);
    EXPECT_EQ((DegradationSpec{*d.family, *d.severity, d.seed}), corpus_degradation(42, src.doc_id));
    EXPECT_EQ(read_bytes(a / d.file), read_bytes(b / d.file));
  }
  EXPECT_EQ(degraded, 12u);
  EXPECT_EQ(ma.queries, gen_corpus(cfg, a.path()).queries);
}

TEST(DegradeCorpus, FamilyHistogramNearUniform) {
  std::map<DegradationFamily, int> hist;
  std::map<int, int> severities;
  for (int i = 0; i < 1000; ++i) {
    const auto spec = corpus_degradation(2024, "doc_" + std::to_string(i));
    hist[spec.family]++;
    severities[spec.severity]++;
  }
  ASSERT_EQ(hist.size(), 12u);
  for (const auto& [family, n] : hist) {
    EXPECT_GT(n, 1000.0 / 12 * 0.6) << to_string(family);
    EXPECT_LT(n, 1000.0 / 12 * 1.4) << to_string(family);
  }
  for (const auto& [sev, n] : severities) {
    EXPECT_GT(n, 200 * 0.6);
    EXPECT_LT(n, 200 * 1.4);
  }
}

TEST(DegradeCorpus, MissingImageAndDuplicateIdsAreErrors) {
  ScratchDir dir;
  CorpusManifest m;
  m.docs.push_back({"a", 0, Split::kTrain, "images/a.ppm", 1, {}, {}, {}});
  EXPECT_THROW(degrade_corpus(m, dir.path(), 1), DataError);

  CorpusConfig cfg;
  cfg.classes = 2;
  cfg.docs_per_class = 2;
  const auto clean = gen_corpus(cfg, dir.path());
  const auto once = degrade_corpus(clean, dir.path(), 1);
  EXPECT_THROW(degrade_corpus(once, dir.path(), 1), DataError);  // "<id>_deg" already present
}

}  // namespace
}  // namespace dualpath
