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

// Command-line entry point: datagen, train, eval, gradcheck, bench, ablate.

#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "divemb/commands.h"
#include "divemb/config.h"
#include "divemb/error.h"

namespace {

using divemb::RunConfig;

std::vector<int> ParseMask(const std::string& text) {
  std::vector<int> mask;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item != "0" && item != "1") {
      throw divemb::ConfigError("slot mask '" + text + "': expected comma-separated 0/1 values");
    }
    mask.push_back(item == "1");
  }
  return mask;
}

struct Overrides {
  std::string similarity;
  std::optional<size_t> k;
  std::optional<size_t> t;
  std::optional<double> alpha;
  std::optional<size_t> epochs;
  std::optional<uint64_t> seed;
  std::optional<uint64_t> data_seed;
  std::optional<size_t> max_concepts;

  void Register(CLI::App* app) {
    app->add_option("--similarity", similarity, "sc, chamfer, mil or mp");
    app->add_option("--k", k, "embedding set size K");
    app->add_option("--t", t, "aggregation iterations T");
    app->add_option("--alpha", alpha, "smooth-Chamfer scale");
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--seed", seed, "training seed");
    app->add_option("--data-seed", data_seed, "corpus generation seed");
    app->add_option("--max-concepts", max_concepts, "concepts per image upper bound");
  }

  void Apply(RunConfig& cfg) const {
    if (!similarity.empty()) cfg.loss.sim.kind = divemb::ParseSimilarityKind(similarity);
    if (k) cfg.predictor.num_slots = *k;
    if (t) cfg.predictor.iterations = *t;
    if (alpha) cfg.loss.sim.alpha = *alpha;
    if (epochs) cfg.train.epochs = *epochs;
    if (seed) cfg.train.seed = *seed;
    if (data_seed) cfg.data.seed = *data_seed;
    if (max_concepts) cfg.data.max_concepts = *max_concepts;
    cfg.Validate();
  }
};

RunConfig LoadConfig(const std::string& path, const Overrides* overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : divemb::LoadRunConfig(path);
  if (overrides) overrides->Apply(cfg);
  cfg.Validate();
  return cfg;
}

int Run(int argc, char** argv) {
  CLI::App app{"divemb: set-based cross-modal embedding on a synthetic ambiguous corpus"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  std::string config_path;
  size_t workers = 0;
  app.add_option("--config", config_path, "run config JSON (defaults for missing fields)");
  app.add_option("--workers", workers, "worker threads (0 = available cores)");

  Overrides overrides;

  auto* datagen = app.add_subcommand("datagen", "generate a synthetic corpus");
  std::string corpus_out = "corpus.divc";
  datagen->add_option("--out", corpus_out, "corpus file to write");
  datagen->add_option("--data-seed", overrides.data_seed, "corpus generation seed");
  datagen->add_option("--max-concepts", overrides.max_concepts, "concepts per image upper bound");

  auto* train = app.add_subcommand("train", "train a model and evaluate its best checkpoint");
  divemb::TrainCommandOptions train_opt;
  train_opt.out_dir = "run";
  train->add_option("--corpus", train_opt.corpus_path, "corpus file (default: generate)");
  train->add_option("--out", train_opt.out_dir, "output directory");
  overrides.Register(train);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  divemb::EvalCommandOptions eval_opt;
  std::string checkpoint, split, visual_mask, text_mask;
  std::vector<std::string> ensemble;
  eval->add_option("--checkpoint", checkpoint, "checkpoint (.divp)");
  eval->add_option("--ensemble", ensemble, "two checkpoints whose scores are averaged")
      ->expected(2);
  eval->add_option("--corpus", eval_opt.corpus_path, "corpus file (default: regenerate)");
  eval->add_option("--split", split, "train, val or test");
  eval->add_option("--slot-mask", visual_mask, "visual slots to keep, e.g. 1,0,1,1");
  eval->add_option("--text-slot-mask", text_mask, "text slots to keep");
  eval->add_option("--out", eval_opt.out_prefix, "output prefix for .json and .csv");

  auto* gradcheck = app.add_subcommand("gradcheck", "verify gradients against finite differences");
  divemb::GradcheckOptions grad_opt;
  gradcheck->add_option("--seed", grad_opt.seed, "random seed");
  gradcheck->add_option("--only", grad_opt.only,
                        "smooth-chamfer, chamfer, mil, mp or end-to-end");

  auto* bench = app.add_subcommand("bench", "scoring throughput and per-pair op counts");
  divemb::BenchOptions bench_opt;
  bench->add_option("--k", bench_opt.k, "set size");
  bench->add_option("--dim", bench_opt.dim, "element dimension");
  bench->add_option("--queries", bench_opt.queries, "query sets");
  bench->add_option("--index", bench_opt.index, "index sets");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate over a hyperparameter grid");
  divemb::AblateOptions ablate_opt;
  ablate_opt.out_dir = "ablate";
  ablate->add_option("--sweep", ablate_opt.sweep, "similarity, k, t or alpha")->required();
  ablate->add_option("--values", ablate_opt.values, "grid values (default: full grid)");
  ablate->add_option("--corpus", ablate_opt.corpus_path, "corpus file (default: generate)");
  ablate->add_option("--out", ablate_opt.out_dir, "output directory");
  ablate->add_option("--epochs", overrides.epochs, "training epochs");
  ablate->add_option("--seed", overrides.seed, "training seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*datagen) {
    divemb::CmdDatagen(LoadConfig(config_path, &overrides), corpus_out, std::cout);
  } else if (*train) {
    train_opt.workers = workers;
    divemb::CmdTrain(LoadConfig(config_path, &overrides), train_opt, std::cout);
  } else if (*eval) {
    if (!ensemble.empty() && !checkpoint.empty()) {
      throw divemb::ConfigError("eval: pass either --checkpoint or --ensemble");
    }
    eval_opt.checkpoints = ensemble.empty() ? std::vector<std::string>{checkpoint} : ensemble;
    if (eval_opt.checkpoints.front().empty()) throw divemb::ConfigError("eval: --checkpoint is required");
    if (!split.empty()) eval_opt.split = divemb::ParseSplit(split);
    if (!visual_mask.empty()) eval_opt.visual_keep = ParseMask(visual_mask);
    if (!text_mask.empty()) eval_opt.text_keep = ParseMask(text_mask);
    eval_opt.workers = workers;
    divemb::CmdEval(eval_opt, std::cout);
  } else if (*gradcheck) {
    return divemb::CmdGradcheck(grad_opt, std::cout) ? 0 : 2;
  } else if (*bench) {
    bench_opt.workers = workers;
    divemb::CmdBench(bench_opt, std::cout);
  } else if (*ablate) {
    ablate_opt.workers = workers;
    divemb::CmdAblate(LoadConfig(config_path, &overrides), ablate_opt, std::cout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return Run(argc, argv);
  } catch (const divemb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
