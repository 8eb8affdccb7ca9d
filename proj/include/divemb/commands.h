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

#ifndef DIVEMB_COMMANDS_H_
#define DIVEMB_COMMANDS_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "divemb/config.h"
#include "divemb/gradcheck.h"
#include "divemb/retrieval.h"

namespace divemb {

// Generates the corpus described by cfg.data and writes it to `out_path`.
void CmdDatagen(const RunConfig& cfg, const std::string& out_path, std::ostream& log);

struct TrainCommandOptions {
  std::string corpus_path;  // empty: generate from cfg.data in memory
  std::string out_dir;      // created when missing
  size_t workers = 0;
};

// Trains, then evaluates the best checkpoint on cfg.eval.split. Writes
// config.json, metrics_step.csv, metrics_epoch.csv, best.divp, last.divp,
// report.json, report.csv and report_ablation.csv into out_dir.
RetrievalReport CmdTrain(const RunConfig& cfg, const TrainCommandOptions& options,
                         std::ostream& log);

struct EvalCommandOptions {
  std::vector<std::string> checkpoints;  // two entries average the scores
  std::string corpus_path;               // empty: regenerate from the checkpoint config
  std::optional<Split> split;
  std::optional<std::vector<int>> visual_keep;
  std::optional<std::vector<int>> text_keep;
  std::string out_prefix = "report";  // writes <prefix>.json and <prefix>.csv
  size_t workers = 0;
};

RetrievalReport CmdEval(const EvalCommandOptions& options, std::ostream& log);

// Prints the gradcheck table; returns true when every row passes.
bool CmdGradcheck(const GradcheckOptions& options, std::ostream& log);

struct BenchOptions {
  size_t k = 4;
  size_t dim = 1024;
  size_t queries = 32;
  size_t index = 256;
  uint64_t seed = 3;
  size_t workers = 0;
};

struct BenchRow {
  SimilarityKind kind;
  uint64_t ops_per_pair = 0;
  double pairs_per_second = 0.0;
};

// Times blocked scoring for every similarity kind and reports the
// closed-form per-pair operation counts.
std::vector<BenchRow> CmdBench(const BenchOptions& options, std::ostream& log);

struct AblateOptions {
  std::string sweep;                // similarity, k, t or alpha
  std::vector<std::string> values;  // empty: the default grid of the sweep
  std::string corpus_path;
  std::string out_dir;
  size_t workers = 0;
};

// Trains and evaluates one model per grid value; writes ablate_<sweep>.csv.
void CmdAblate(const RunConfig& cfg, const AblateOptions& options, std::ostream& log);

// Shared helpers.
Corpus LoadOrGenerateCorpus(const std::string& path, const SynthConfig& cfg);
// Sets one swept value on a copy of cfg.
RunConfig WithSweepValue(RunConfig cfg, const std::string& sweep, const std::string& value);

}  // namespace divemb

#endif  // DIVEMB_COMMANDS_H_
