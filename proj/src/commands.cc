// Copyright 2026 The divemb Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "divemb/commands.h"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <random>

#include "divemb/binary_io.h"
#include "divemb/error.h"
#include "divemb/model.h"
#include "divemb/trainer.h"

namespace divemb {
namespace fs = std::filesystem;

namespace {

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void EnsureParentExists(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw IoError("output directory '" + parent.string() + "' does not exist (for '" + path +
                  "')");
  }
}

void EnsureDirectory(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) {
    throw IoError("cannot create output directory '" + dir + "'" +
                  (ec ? ": " + ec.message() : std::string()));
  }
}

std::string Pretty(const Json& j) { return j.dump(2) + "\n"; }

Json ReportJson(const RetrievalReport& r, const std::string& config_json) {
  Json j = r.ToJson();
  j["config"] = Json::parse(config_json);
  return j;
}

void WriteReport(const RetrievalReport& r, const std::string& config_json,
                 const std::string& prefix) {
  WriteText(prefix + ".json", Pretty(ReportJson(r, config_json)));
  WriteText(prefix + ".csv", r.ToCsv());
  if (!r.ablation.empty()) WriteText(prefix + "_ablation.csv", r.AblationCsv());
}

std::string Fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

void PrintReport(const RetrievalReport& r, std::ostream& log) {
  log << "similarity " << r.similarity << ": " << r.images << " images, " << r.captions
      << " captions\n"
      << "  image->text R@1/5/10 " << Fixed(r.i2t.r1) << " " << Fixed(r.i2t.r5) << " "
      << Fixed(r.i2t.r10) << "\n"
      << "  text->image R@1/5/10 " << Fixed(r.t2i.r1) << " " << Fixed(r.t2i.r5) << " "
      << Fixed(r.t2i.r10) << "\n"
      << "  RSUM " << Fixed(r.rsum) << "  circular variance visual " << Fixed(r.cv_visual, 4)
      << " text " << Fixed(r.cv_text, 4) << "\n";
  for (const SlotAblationRow& row : r.ablation) {
    log << "  " << row.label << " RSUM " << Fixed(row.rsum) << " (" << Fixed(row.delta) << ")\n";
  }
}

RetrievalReport EvaluateModel(const Model& model, const Corpus& corpus, const RunConfig& cfg,
                              size_t workers) {
  const EvalData data = EmbedSplit(model, corpus, cfg.eval.split, workers);
  const SimilarityConfig sim = ModelSimilarity(model, cfg.loss.sim);
  RetrievalReport r = SlotAblationEval(data, cfg.eval.visual_keep, cfg.eval.text_keep, sim, workers);
  if (cfg.eval.slot_ablation && cfg.eval.visual_keep.empty() && cfg.eval.text_keep.empty()) {
    r.ablation = SingleSlotAblation(data, sim, r.rsum, workers);
  }
  r.config_hash = cfg.Hash();
  return r;
}

}  // namespace

Corpus LoadOrGenerateCorpus(const std::string& path, const SynthConfig& cfg) {
  return path.empty() ? GenerateCorpus(cfg) : ReadCorpus(path);
}

void CmdDatagen(const RunConfig& cfg, const std::string& out_path, std::ostream& log) {
  cfg.Validate();
  EnsureParentExists(out_path);
  const Corpus corpus = GenerateCorpus(cfg.data);
  WriteCorpus(out_path, corpus);
  log << "wrote " << out_path << "\n"
      << "  concepts C=" << cfg.data.concepts << ", max concepts per image " << cfg.data.max_concepts
      << "\n"
      << "  images: " << corpus.ImagesIn(Split::kTrain).size() << " train, "
      << corpus.ImagesIn(Split::kVal).size() << " val, " << corpus.ImagesIn(Split::kTest).size()
      << " test; " << corpus.captions.size() << " captions\n"
      << "  config hash " << binary::Fnv1aHex(ToJson(cfg.data).dump()) << "\n";
}

RetrievalReport CmdTrain(const RunConfig& cfg_in, const TrainCommandOptions& options,
                         std::ostream& log) {
  cfg_in.Validate();
  RunConfig cfg = cfg_in;
  const Corpus corpus = LoadOrGenerateCorpus(options.corpus_path, cfg.data);
  cfg.data = corpus.config;
  cfg.Validate();
  EnsureDirectory(options.out_dir);
  const fs::path dir(options.out_dir);
  WriteText(dir / "config.json", Pretty(cfg.ToJson()));

  TrainOptions topt;
  topt.out_dir = options.out_dir;
  topt.config_json = cfg.Canonical();
  topt.config_hash = cfg.Hash();
  topt.workers = options.workers;
  topt.progress = &log;
  const TrainResult result = Train(corpus, cfg.predictor, cfg.loss, cfg.train, topt);
  log << "best validation RSUM " << Fixed(result.best_val_rsum) << " at epoch "
      << result.best_epoch << "\n";

  const RetrievalReport report = EvaluateModel(result.best, corpus, cfg, options.workers);
  WriteReport(report, cfg.Canonical(), (dir / "report").string());
  PrintReport(report, log);
  return report;
}

RetrievalReport CmdEval(const EvalCommandOptions& options, std::ostream& log) {
  if (options.checkpoints.empty() || options.checkpoints.size() > 2) {
    throw ConfigError("eval: expected one checkpoint, or two with --ensemble");
  }
  std::vector<LoadedCheckpoint> cks;
  for (const std::string& path : options.checkpoints) cks.push_back(ReadCheckpoint(path));
  RunConfig cfg = ParseRunConfigText(cks.front().config_json);
  if (options.split) cfg.eval.split = *options.split;
  if (options.visual_keep) cfg.eval.visual_keep = *options.visual_keep;
  if (options.text_keep) cfg.eval.text_keep = *options.text_keep;
  cfg.Validate();
  const Corpus corpus = LoadOrGenerateCorpus(options.corpus_path, cfg.data);
  if (corpus.config.raw_dim != cfg.data.raw_dim) {
    throw ConfigError("eval: corpus feature dimension does not match the checkpoint");
  }

  RetrievalReport report;
  if (cks.size() == 1) {
    report = EvaluateModel(cks.front().model, corpus, cfg, options.workers);
  } else {
    const RunConfig cfg_b = ParseRunConfigText(cks[1].config_json);
    Matrix scores[2];
    EvalData first;
    for (size_t m = 0; m < 2; ++m) {
      const RunConfig& c = m == 0 ? cfg : cfg_b;
      EvalData data = EmbedSplit(cks[m].model, corpus, cfg.eval.split, options.workers);
      if (!cfg.eval.visual_keep.empty()) data.images = MaskIndex(data.images, cfg.eval.visual_keep);
      if (!cfg.eval.text_keep.empty()) data.captions = MaskIndex(data.captions, cfg.eval.text_keep);
      scores[m] = ScoreIndex(data.images, data.captions, ModelSimilarity(cks[m].model, c.loss.sim),
                             options.workers);
      if (m == 0) first = std::move(data);
    }
    report = ReportFromScores(EnsembleScores(scores[0], scores[1]), first);
    report.similarity = "ensemble(" + std::string(ToString(cfg.loss.sim.kind)) + "+" +
                        std::string(ToString(cfg_b.loss.sim.kind)) + ")";
    report.config_hash = cfg.Hash();
  }
  EnsureParentExists(options.out_prefix);
  WriteReport(report, cfg.Canonical(), options.out_prefix);
  PrintReport(report, log);
  return report;
}

bool CmdGradcheck(const GradcheckOptions& options, std::ostream& log) {
  const std::vector<GradcheckRow> rows = RunGradcheck(options);
  bool ok = true;
  for (const GradcheckRow& row : rows) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-4s %-58s cases %5zu  max rel-err %.3e  (< %.0e)\n",
                  row.pass() ? "PASS" : "FAIL", row.name.c_str(), row.cases, row.max_rel_err,
                  row.threshold);
    log << buf;
    ok = ok && row.pass();
  }
  return ok;
}

std::vector<BenchRow> CmdBench(const BenchOptions& options, std::ostream& log) {
  if (options.k < 1 || options.dim < 1 || options.queries < 1 || options.index < 1) {
    throw ConfigError("bench: k, dim, queries and index must be >= 1");
  }
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto make_sets = [&](size_t count) {
    std::vector<EmbeddingSet> sets(count);
    for (EmbeddingSet& s : sets) {
      s.elems = Matrix(options.k, options.dim);
      for (double& v : s.elems.values()) v = n(rng);
    }
    return sets;
  };
  const std::vector<EmbeddingSet> queries = make_sets(options.queries);
  const std::vector<EmbeddingSet> index = make_sets(options.index);
  const double pairs = static_cast<double>(options.queries) * options.index;

  std::vector<BenchRow> rows;
  log << "K=" << options.k << " D=" << options.dim << ", " << options.queries << " queries x "
      << options.index << " sets; 1 multiply-add = 1 op\n";
  for (SimilarityKind kind : {SimilarityKind::kSmoothChamfer, SimilarityKind::kChamfer,
                              SimilarityKind::kMil, SimilarityKind::kMp}) {
    SimilarityConfig cfg;
    cfg.kind = kind;
    const auto start = std::chrono::steady_clock::now();
    const Matrix scores = ScoreTable(queries, index, cfg, options.workers);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    BenchRow row{kind, OpCount(kind, options.k, options.k, options.dim),
                 secs > 0.0 ? pairs / secs : 0.0};
    char buf[200];
    std::snprintf(buf, sizeof(buf), "  %-15s ops/pair %10llu  pairs/s %12.0f  checksum %.6f\n",
                  std::string(ToString(kind)).c_str(),
                  static_cast<unsigned long long>(row.ops_per_pair), row.pairs_per_second,
                  scores.values().empty() ? 0.0 : scores[0]);
    log << buf;
    rows.push_back(row);
  }
  log << "  reference: 16.4K FLOPs per smooth-Chamfer score at K=4, D=1024 (" +
             std::to_string(OpCount(SimilarityKind::kSmoothChamfer, 4, 4, 1024)) +
             " by the count above)\n";
  return rows;
}

RunConfig WithSweepValue(RunConfig cfg, const std::string& sweep, const std::string& value) {
  try {
    if (sweep == "similarity") {
      cfg.loss.sim.kind = ParseSimilarityKind(value);
    } else if (sweep == "k") {
      cfg.predictor.num_slots = std::stoul(value);
    } else if (sweep == "t") {
      cfg.predictor.iterations = std::stoul(value);
    } else if (sweep == "alpha") {
      cfg.loss.sim.alpha = std::stod(value);
    } else {
      throw ConfigError("ablate: unknown sweep '" + sweep + "' (similarity, k, t, alpha)");
    }
  } catch (const std::logic_error&) {
    throw ConfigError("ablate: bad value '" + value + "' for sweep " + sweep);
  }
  cfg.eval.visual_keep.clear();
  cfg.eval.text_keep.clear();
  cfg.Validate();
  return cfg;
}

void CmdAblate(const RunConfig& cfg_in, const AblateOptions& options, std::ostream& log) {
  std::vector<std::string> values = options.values;
  if (values.empty()) {
    if (options.sweep == "similarity") values = {"sc", "chamfer", "mil", "mp"};
    if (options.sweep == "k" || options.sweep == "t") values = {"1", "2", "3", "4", "5", "6"};
    if (options.sweep == "alpha") values = {"1", "2", "4", "8", "16", "32", "64"};
  }
  // Validates the sweep name even when values are given.
  WithSweepValue(cfg_in, options.sweep, values.empty() ? "1" : values.front());
  RunConfig base = cfg_in;
  const Corpus corpus = LoadOrGenerateCorpus(options.corpus_path, base.data);
  base.data = corpus.config;
  EnsureDirectory(options.out_dir);

  std::string csv =
      "sweep,value,rsum,i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,cv_visual,cv_text,"
      "best_val_rsum,config_hash\n";
  for (const std::string& value : values) {
    const RunConfig cfg = WithSweepValue(base, options.sweep, value);
    TrainOptions topt;
    topt.config_json = cfg.Canonical();
    topt.config_hash = cfg.Hash();
    topt.workers = options.workers;
    const TrainResult result = Train(corpus, cfg.predictor, cfg.loss, cfg.train, topt);
    RunConfig eval_cfg = cfg;
    eval_cfg.eval.slot_ablation = false;
    const RetrievalReport r = EvaluateModel(result.best, corpus, eval_cfg, options.workers);
    csv += options.sweep + "," + value + "," + Fixed(r.rsum, 6) + "," + Fixed(r.i2t.r1, 6) + "," +
           Fixed(r.i2t.r5, 6) + "," + Fixed(r.i2t.r10, 6) + "," + Fixed(r.t2i.r1, 6) + "," +
           Fixed(r.t2i.r5, 6) + "," + Fixed(r.t2i.r10, 6) + "," + Fixed(r.cv_visual, 6) + "," +
           Fixed(r.cv_text, 6) + "," + Fixed(result.best_val_rsum, 6) + "," + cfg.Hash() + "\n";
    log << options.sweep << "=" << value << ": RSUM " << Fixed(r.rsum) << "\n";
    log.flush();
  }
  WriteText(fs::path(options.out_dir) / ("ablate_" + options.sweep + ".csv"), csv);
}

}  // namespace divemb
