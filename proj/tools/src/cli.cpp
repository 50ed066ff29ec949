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

#include "dualpath_cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>

#include "dualpath/config.hpp"
#include "dualpath/corpus.hpp"
#include "dualpath/degradation.hpp"
#include "dualpath/error.hpp"
#include "dualpath/retrieval.hpp"
#include "dualpath/trainer.hpp"

namespace dualpath::cli {
namespace {

namespace fs = std::filesystem;

constexpr const char* kSeedEnv = "RVRAG_SEED";
constexpr const char* kManifestName = "manifest.jsonl";
constexpr const char* kCheckpointName = "checkpoint.rvrg";
constexpr const char* kMetricsName = "metrics.csv";

// One subcommand: its own option keys with default text, whether it also
// accepts trainer keys, and the action.
struct Command;
using Action = std::function<void(const Command&, const ConfigMap&, const ConfigMap&, std::ostream&)>;

struct Command {
  std::string name;
  std::string help;
  ConfigMap defaults;
  std::map<std::string, std::string> option_help;
  bool train_keys = false;
  Action action;
  fs::path out;
};

std::string flag_of(const std::string& key) {
  std::string f = "--" + key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

fs::path under(const fs::path& out, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : out / path;
}

std::string csv_number(double v) { return format_double(v); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw DataError("cannot write " + path.string());
}

// Resolved-config echo: the subcommand name plus every resolved key.
void write_echo(const Command& cmd, const ConfigMap& opts, const ConfigMap& train, const fs::path& dir) {
  ConfigMap all = opts;
  for (const auto& [k, v] : train) all[k] = v;
  all["command"] = cmd.name;
  write_text(dir / (cmd.name + ".resolved.txt"), "# replay: dualpath " + cmd.name +
                                                     " --out <dir> --config <this file>\n" + format_config(all));
}

struct Typed {
  explicit Typed(const ConfigMap& m) : reader(m) {}
  template <typename V>
  V get(const std::string& key, V v) {
    reader.read(key, v);
    return v;
  }
  ConfigReader reader;
};

CorpusManifest load_corpus(const fs::path& dir) {
  const fs::path m = dir / kManifestName;
  if (!fs::exists(m)) throw DataError("no corpus manifest at " + m.string());
  return read_manifest(m);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  for (char c : text + ",") {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else if (c != ' ') {
      item += c;
    }
  }
  return out;
}

std::string metrics_line(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "step %6llu  L_ret %.4f  L_sil %.4f  L_fsal %.4f  L_ncdm %.4f  mrr10 clean %.4f deg %.4f  silhouette %.4f",
                static_cast<unsigned long long>(r.step), r.losses.ret, r.losses.sil, r.losses.fsal, r.losses.ncdm,
                r.eval.mrr_clean, r.eval.mrr_degraded, r.eval.silhouette_zdeg);
  return buf;
}

// Trains one run into `dir`: checkpoint, metrics and the train echo.
TrainResult train_into(const Command& cmd, const ConfigMap& opts, const TrainConfig& config, const TrainData& data,
                       const fs::path& dir, std::ostream& log) {
  fs::create_directories(dir);
  write_echo(cmd, opts, to_config_map(config), dir);
  TrainResult r = train(config, data, dir / kMetricsName, [&](const MetricsRow& row) { log << metrics_line(row) << '\n'; });
  save_checkpoint(dir / kCheckpointName, r.checkpoint);
  return r;
}

// ---- subcommands ----

void cmd_gen_corpus(const Command& cmd, const ConfigMap& opts, const ConfigMap&, std::ostream& log) {
  Typed t(opts);
  CorpusConfig cc;
  cc.classes = t.get<std::size_t>("classes", cc.classes);
  cc.docs_per_class = t.get<std::size_t>("per_class", cc.docs_per_class);
  cc.test_fraction = t.get<double>("test_fraction", cc.test_fraction);
  cc.seed = t.get<std::uint64_t>("seed", 0);
  cc.style.height = t.get<std::size_t>("height", cc.style.height);
  cc.style.width = t.get<std::size_t>("width", cc.style.width);
  cc.style.distractor = t.get<double>("distractor", cc.style.distractor);
  cc.style.contrast_min = t.get<double>("contrast_min", cc.style.contrast_min);
  cc.style.grain = t.get<double>("grain", cc.style.grain);
  cc.style.classes = cc.classes;
  const fs::path dir = under(cmd.out, t.get<std::string>("corpus", ""));
  t.reader.reject_unknown();
  if (cc.classes < 2 || cc.docs_per_class < 2) throw UsageError("gen-corpus needs --classes >= 2 and --per-class >= 2");
  fs::create_directories(dir);
  const CorpusManifest m = gen_corpus(cc, dir);
  write_echo(cmd, opts, {}, dir);
  log << "wrote " << m.docs.size() << " docs and " << m.queries.size() << " queries to " << (dir / kManifestName).string()
      << '\n';
}

void cmd_degrade(const Command& cmd, const ConfigMap& opts, const ConfigMap&, std::ostream& log) {
  Typed t(opts);
  const fs::path dir = under(cmd.out, t.get<std::string>("corpus", ""));
  const auto seed = t.get<std::uint64_t>("seed", 0);
  const std::string table_path = t.get<std::string>("severity_table", "");
  t.reader.reject_unknown();
  const SeverityTable table = table_path.empty() ? SeverityTable::builtin() : SeverityTable::load(under(cmd.out, table_path));
  const CorpusManifest before = load_corpus(dir);
  const CorpusManifest after = degrade_corpus(before, dir, seed, table);
  write_manifest(dir / kManifestName, after);
  write_echo(cmd, opts, {}, dir);
  log << "added " << after.docs.size() - before.docs.size() << " degraded variants to " << (dir / kManifestName).string()
      << '\n';
}

void cmd_train(const Command& cmd, const ConfigMap& opts, const ConfigMap& train_map, std::ostream& log) {
  Typed t(opts);
  const fs::path corpus = under(cmd.out, t.get<std::string>("corpus", ""));
  const fs::path dir = under(cmd.out, t.get<std::string>("run", ""));
  t.reader.reject_unknown();
  const TrainConfig config = train_config_from_map(train_map);
  config.validate();
  const TrainData data = TrainData::load(load_corpus(corpus), corpus);
  const TrainResult r = train_into(cmd, opts, config, data, dir, log);
  log << "checkpoint " << (dir / kCheckpointName).string() << " after " << r.checkpoint.step << " steps\n";
}

void cmd_eval(const Command& cmd, const ConfigMap& opts, const ConfigMap& train_map, std::ostream& log) {
  Typed t(opts);
  const fs::path corpus = under(cmd.out, t.get<std::string>("corpus", ""));
  const std::string checkpoint = t.get<std::string>("checkpoint", "");
  const fs::path dir = under(cmd.out, t.get<std::string>("dir", ""));
  const auto k = t.get<std::size_t>("k", 10);
  const Split split = parse_split(t.get<std::string>("split", "test"));
  t.reader.reject_unknown();
  if (k == 0) throw UsageError("--k must be >= 1");

  EncoderWeights<float> weights;
  Tensor<float> table;
  TrainConfig config;
  std::string checkpoint_id = "untrained";
  if (checkpoint.empty()) {
    config = train_config_from_map(train_map);
    const CorpusManifest m = load_corpus(corpus);
    TrainState init = init_state(config, m.num_classes());
    weights = std::move(init.weights);
    table = std::move(init.query_table);
  } else {
    Checkpoint ck = load_checkpoint(under(cmd.out, checkpoint));
    config = ck.config;
    weights = std::move(ck.weights);
    table = std::move(ck.query_table);
    checkpoint_id = checkpoint;
  }
  const CorpusManifest manifest = load_corpus(corpus);
  if (manifest.num_classes() != table.rows()) throw DataError("checkpoint query table does not match the corpus classes");
  fs::create_directories(dir);
  write_echo(cmd, opts, checkpoint.empty() ? to_config_map(config) : ConfigMap{}, dir);

  std::string csv = "view,split,k,mrr,recall,silhouette_zdeg\n";
  for (CorpusView view : {CorpusView::kClean, CorpusView::kDegraded}) {
    const auto queries = queries_for_view(manifest, view, split);
    bool any = false;
    for (const auto& d : manifest.docs) any = any || (d.degraded() == (view == CorpusView::kDegraded) && d.split == split);
    if (!any) {
      log << to_string(view) << ": no documents in split " << to_string(split) << ", skipped\n";
      continue;
    }
    EmbeddingIndex index = embed_corpus(weights, config.encoder, manifest, corpus, view, split);
    index.checkpoint_id = checkpoint_id;
    index.manifest_id = (corpus / kManifestName).string();
    save_index(dir / ("index_" + std::string(to_string(view)) + ".rvix"), index);
    std::vector<RankedList> lists;
    for (const auto& q : queries) lists.push_back(retrieve_topk(index, table.row(q.class_id), k, q.query_id));
    const double mrr = mrr_at_k(lists, queries, k);
    const double recall = recall_at_k(lists, queries, k);

    double sil = std::nan("");
    if (view == CorpusView::kDegraded && config.encoder.nc_token) {
      std::vector<std::size_t> members, labels;
      std::map<std::size_t, std::size_t> counts;
      for (std::size_t i = 0; i < manifest.docs.size(); ++i) {
        const DocRecord& d = manifest.docs[i];
        if (d.degraded() && d.split == split && d.family) ++counts[static_cast<std::size_t>(*d.family)];
      }
      for (std::size_t i = 0; i < manifest.docs.size(); ++i) {
        const DocRecord& d = manifest.docs[i];
        if (d.degraded() && d.split == split && d.family && counts[static_cast<std::size_t>(*d.family)] >= 2) {
          members.push_back(i);
          labels.push_back(static_cast<std::size_t>(*d.family));
        }
      }
      if (std::set<std::size_t>(labels.begin(), labels.end()).size() >= 2) {
        Tensor<double> points = Tensor<double>::matrix(members.size(), config.encoder.dim);
        for (std::size_t r = 0; r < members.size(); ++r) {
          const Image img = read_ppm(corpus / manifest.docs[members[r]].file);
          const auto z = forward_dual(img, weights, config.encoder).z_deg;
          for (std::size_t j = 0; j < config.encoder.dim; ++j) points(r, j) = (*z)[j];
        }
        sil = silhouette(points, labels);
      }
    }
    csv += std::string(to_string(view)) + "," + std::string(to_string(split)) + "," + std::to_string(k) + "," +
           csv_number(mrr) + "," + csv_number(recall) + "," + csv_number(sil) + "\n";
    log << to_string(view) << ": mrr@" << k << " " << mrr << "  recall@" << k << " " << recall;
    if (!std::isnan(sil)) log << "  silhouette " << sil;
    log << '\n';
  }
  write_text(dir / "eval.csv", csv);
}

void cmd_ablate(const Command& cmd, const ConfigMap& opts, const ConfigMap& train_map, std::ostream& log) {
  Typed t(opts);
  const fs::path corpus = under(cmd.out, t.get<std::string>("corpus", ""));
  const fs::path dir = under(cmd.out, t.get<std::string>("dir", ""));
  const auto seeds = t.get<std::size_t>("seeds", 3);
  const std::string variants_text = t.get<std::string>("variants", "all");
  t.reader.reject_unknown();
  if (seeds == 0) throw UsageError("--seeds must be >= 1");
  std::vector<std::string> variants = variants_text == "all" ? variant_names() : split_list(variants_text);
  const TrainConfig base = train_config_from_map(train_map);
  for (const auto& v : variants) apply_variant(base, v).validate();

  const TrainData data = TrainData::load(load_corpus(corpus), corpus);
  fs::create_directories(dir);
  write_echo(cmd, opts, train_map, dir);
  Command train_cmd = cmd;
  train_cmd.name = "train";

  std::string runs = "variant,seed,mrr10_clean,mrr10_deg,silhouette_zdeg\n";
  std::string table = "variant,mrr10_clean,mrr10_deg\n";
  for (const auto& v : variants) {
    double clean = 0.0, deg = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
      TrainConfig c = apply_variant(base, v);
      c.seed = base.seed + s;
      const fs::path run_dir = dir / v / ("seed" + std::to_string(c.seed));
      log << "== " << v << " seed " << c.seed << '\n';
      ConfigMap run_opts{{"corpus", opts.at("corpus")},
                         {"run", (fs::path(opts.at("dir")) / v / ("seed" + std::to_string(c.seed))).string()}};
      const TrainResult r = train_into(train_cmd, run_opts, c, data, run_dir, log);
      const EvalMetrics& e = r.metrics.back().eval;
      clean += e.mrr_clean;
      deg += e.mrr_degraded;
      runs += v + "," + std::to_string(c.seed) + "," + csv_number(e.mrr_clean) + "," + csv_number(e.mrr_degraded) + "," +
              csv_number(e.silhouette_zdeg) + "\n";
    }
    const double n = static_cast<double>(seeds);
    table += v + "," + csv_number(clean / n) + "," + csv_number(deg / n) + "\n";
  }
  write_text(dir / "ablation_runs.csv", runs);
  write_text(dir / "ablation.csv", table);
  log << "\n" << table;
}

void cmd_simmap(const Command& cmd, const ConfigMap& opts, const ConfigMap&, std::ostream& log) {
  Typed t(opts);
  const fs::path corpus = under(cmd.out, t.get<std::string>("corpus", ""));
  const std::string checkpoint = t.get<std::string>("checkpoint", "");
  const std::string doc = t.get<std::string>("doc", "");
  const std::string query_class = t.get<std::string>("query_class", "");
  const fs::path dir = under(cmd.out, t.get<std::string>("dir", ""));
  t.reader.reject_unknown();
  if (checkpoint.empty() || doc.empty()) throw UsageError("simmap needs --checkpoint and --doc");
  const Checkpoint ck = load_checkpoint(under(cmd.out, checkpoint));
  const CorpusManifest manifest = load_corpus(corpus);
  const DocRecord& d = manifest.doc(doc);
  std::size_t cls = d.class_id;
  if (!query_class.empty()) {
    ConfigMap one{{"query_class", query_class}};
    ConfigReader(one).read("query_class", cls);
  }
  if (cls >= ck.query_table.rows()) throw UsageError("--query-class outside the query table");
  const Tensor<double> grid =
      similarity_map(ck.weights, ck.config.encoder, read_ppm(corpus / d.file), ck.query_table.row(cls));
  fs::create_directories(dir);
  write_echo(cmd, opts, {}, dir);
  const fs::path file = dir / ("simmap_" + doc + "_q" + std::to_string(cls) + ".csv");
  write_grid_csv(file, grid);
  log << "wrote " << grid.rows() << "x" << grid.cols() << " grid to " << file.string() << '\n';
}

// Final-row metrics of one train run, grouped by variant for seed dirs.
struct RunSummary {
  std::string group;
  MetricsRow last;
};

void cmd_report(const Command& cmd, const ConfigMap& opts, const ConfigMap&, std::ostream& log) {
  Typed t(opts);
  const std::string inputs = t.get<std::string>("inputs", "");
  std::string baseline = t.get<std::string>("baseline", "");
  const fs::path dir = under(cmd.out, t.get<std::string>("dir", ""));
  t.reader.reject_unknown();
  std::vector<fs::path> files;
  for (const auto& in : split_list(inputs)) {
    const fs::path p = under(cmd.out, in);
    if (fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file() && e.path().filename() == kMetricsName) files.push_back(e.path());
      }
    } else if (fs::exists(p)) {
      files.push_back(p);
    } else {
      throw DataError("report input " + p.string() + " does not exist");
    }
  }
  if (files.empty()) throw UsageError("report needs --inputs with at least one metrics CSV or run directory");
  std::sort(files.begin(), files.end());

  std::map<std::string, std::vector<MetricsRow>> groups;
  std::vector<std::string> order;
  for (const auto& f : files) {
    const auto rows = read_metrics_csv(f);
    if (rows.empty()) throw DataError(f.string() + " has no rows");
    fs::path parent = f.parent_path();
    if (parent.filename().string().rfind("seed", 0) == 0) parent = parent.parent_path();
    const std::string group = parent.lexically_relative(cmd.out).string();
    if (!groups.count(group)) order.push_back(group);
    groups[group].push_back(rows.back());
  }
  if (baseline.empty()) {
    for (const auto& g : order) {
      if (fs::path(g).filename() == "baseline") baseline = g;
    }
    if (baseline.empty()) baseline = order.front();
  }
  if (!groups.count(baseline)) throw UsageError("baseline '" + baseline + "' is not among the report inputs");

  struct Mean {
    double clean = 0, deg = 0, sil = 0;
    std::size_t n = 0;
  };
  const auto mean_of = [](const std::vector<MetricsRow>& rows) {
    Mean m;
    for (const auto& r : rows) {
      m.clean += r.eval.mrr_clean;
      m.deg += r.eval.mrr_degraded;
      m.sil += r.eval.silhouette_zdeg;
    }
    m.n = rows.size();
    m.clean /= static_cast<double>(m.n);
    m.deg /= static_cast<double>(m.n);
    m.sil /= static_cast<double>(m.n);
    return m;
  };
  const Mean base = mean_of(groups[baseline]);
  std::string csv =
      "run,runs,mrr10_clean,mrr10_deg,silhouette_zdeg,delta_clean_pts,delta_deg_pts,rel_clean_pct,rel_deg_pct\n";
  for (const auto& g : order) {
    const Mean m = mean_of(groups[g]);
    const double dc = 100.0 * (m.clean - base.clean), dd = 100.0 * (m.deg - base.deg);
    const double rc = base.clean > 0 ? 100.0 * (m.clean / base.clean - 1.0) : std::nan("");
    const double rd = base.deg > 0 ? 100.0 * (m.deg / base.deg - 1.0) : std::nan("");
    csv += g + "," + std::to_string(m.n) + "," + csv_number(m.clean) + "," + csv_number(m.deg) + "," + csv_number(m.sil) +
           "," + csv_number(dc) + "," + csv_number(dd) + "," + csv_number(rc) + "," + csv_number(rd) + "\n";
  }
  fs::create_directories(dir);
  write_echo(cmd, opts, {}, dir);
  write_text(dir / "report.csv", csv);
  log << csv;
}

std::vector<Command> commands() {
  const DocumentStyle style;
  const CorpusConfig cc;
  std::vector<Command> out;
  out.push_back({"gen-corpus",
                 "Generate a procedural document corpus",
                 {{"corpus", "corpus"},
                  {"classes", std::to_string(cc.classes)},
                  {"per_class", std::to_string(cc.docs_per_class)},
                  {"test_fraction", format_double(cc.test_fraction)},
                  {"seed", "0"},
                  {"height", std::to_string(style.height)},
                  {"width", std::to_string(style.width)},
                  {"distractor", format_double(style.distractor)},
                  {"contrast_min", format_double(style.contrast_min)},
                  {"grain", format_double(style.grain)}},
                 {{"corpus", "corpus directory"},
                  {"classes", "number of classes C"},
                  {"per_class", "documents per class N"},
                  {"test_fraction", "fraction of each class held out for test"},
                  {"seed", "master seed (falls back to RVRAG_SEED)"}},
                 false,
                 cmd_gen_corpus,
                 {}});
  out.push_back({"degrade",
                 "Add one degraded variant per clean document",
                 {{"corpus", "corpus"}, {"seed", "0"}, {"severity_table", ""}},
                 {{"severity_table", "severity table file (built-in table when empty)"}},
                 false,
                 cmd_degrade,
                 {}});
  out.push_back({"train", "Train an encoder", {{"corpus", "corpus"}, {"run", "run"}}, {{"run", "run directory"}}, true,
                 cmd_train, {}});
  out.push_back({"eval",
                 "Evaluate a checkpoint (or an untrained encoder) on the clean and degraded corpora",
                 {{"corpus", "corpus"}, {"checkpoint", ""}, {"dir", "eval"}, {"k", "10"}, {"split", "test"}},
                 {{"checkpoint", "checkpoint file; empty evaluates a freshly initialized encoder"}},
                 true,
                 cmd_eval,
                 {}});
  out.push_back({"ablate",
                 "Train the ablation grid over several seeds",
                 {{"corpus", "corpus"}, {"dir", "ablate"}, {"seeds", "3"}, {"variants", "all"}},
                 {{"variants", "comma-separated variants or 'all'"}, {"seeds", "number of consecutive seeds"}},
                 true,
                 cmd_ablate,
                 {}});
  out.push_back({"simmap",
                 "Export a query-to-patch similarity grid",
                 {{"corpus", "corpus"}, {"checkpoint", ""}, {"doc", ""}, {"query_class", ""}, {"dir", "simmap"}},
                 {{"query_class", "query class (defaults to the document's class)"}},
                 false,
                 cmd_simmap,
                 {}});
  out.push_back({"report",
                 "Summarize metric CSVs into a comparison table",
                 {{"inputs", ""}, {"baseline", ""}, {"dir", "report"}},
                 {{"inputs", "comma-separated metrics CSVs or run directories"},
                  {"baseline", "run group the deltas are measured against"}},
                 false,
                 cmd_report,
                 {}});
  return out;
}

std::optional<std::string> env_seed() {
  const char* v = std::getenv(kSeedEnv);
  if (v == nullptr || *v == '\0') return std::nullopt;
  ConfigMap m{{"seed", v}};
  std::uint64_t seed = 0;
  ConfigReader(m).read("seed", seed);  // validates the text
  return std::to_string(seed);
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Degradation-robust visual document retrieval at desk scale", "dualpath"};
  app.require_subcommand(1);
  std::string out_dir = ".";
  app.add_option("--out", out_dir, "output directory; every other path is relative to it");

  std::vector<Command> cmds = commands();
  struct Bound {
    CLI::App* app = nullptr;
    std::map<std::string, std::string> given;
    std::map<std::string, CLI::Option*> flags;
    std::string config;
    std::vector<std::string> sets;
    std::string seed;
  };
  std::vector<std::unique_ptr<Bound>> bound;
  for (const Command& c : cmds) {
    auto b = std::make_unique<Bound>();
    b->app = app.add_subcommand(c.name, c.help);
    b->app->add_option("--config", b->config, "key: value file (a resolved-config echo replays a run)");
    for (const auto& [key, def] : c.defaults) {
      const auto h = c.option_help.find(key);
      b->flags[key] = b->app->add_option(flag_of(key), b->given[key], h == c.option_help.end() ? key : h->second);
      b->flags[key]->default_str(def);
    }
    if (c.train_keys) {
      b->app->add_option("--set", b->sets, "trainer override key=value (repeatable)");
      b->flags["seed"] = b->app->add_option("--seed", b->seed, "master seed (falls back to RVRAG_SEED)");
    }
    bound.push_back(std::move(b));
  }

  std::vector<std::string> argv_text{"dualpath"};
  argv_text.insert(argv_text.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_text) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (std::size_t i = 0; i < cmds.size(); ++i) {
    Bound& b = *bound[i];
    if (!b.app->parsed()) continue;
    Command& cmd = cmds[i];
    cmd.out = out_dir;
    ConfigMap opts = cmd.defaults;
    ConfigMap train = cmd.train_keys ? to_config_map(TrainConfig{}) : ConfigMap{};
    bool seed_set = false;
    if (!b.config.empty()) {
      for (const auto& [k, v] : read_config_file(under(cmd.out, b.config))) {
        if (k == "command") {
          if (v != cmd.name) throw UsageError("config file is for '" + v + "', not '" + cmd.name + "'");
        } else if (opts.count(k)) {
          opts[k] = v;
        } else if (cmd.train_keys) {
          train[k] = v;
        } else {
          throw UsageError("unknown key '" + k + "' for " + cmd.name);
        }
        seed_set = seed_set || k == "seed";
      }
    }
    for (const auto& [key, flag] : b.flags) {
      if (flag->count() == 0) continue;
      if (key == "seed" && cmd.train_keys) {
        train["seed"] = b.seed;
      } else {
        opts[key] = b.given[key];
      }
      seed_set = seed_set || key == "seed";
    }
    if (!seed_set) {
      if (const auto s = env_seed()) (cmd.train_keys ? train : opts)["seed"] = *s;
    }
    apply_overrides(train, b.sets);
    cmd.action(cmd, opts, train, out);
    return kExitOk;
  }
  throw UsageError("no subcommand given");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace dualpath::cli
