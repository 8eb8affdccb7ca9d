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


#include "divemb/trainer.h"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "divemb/config.h"
#include "divemb/error.h"
#include "divemb/model.h"
#include "test_util.h"

namespace divemb {
namespace {

using testing::RandomMatrix;

SynthConfig TinyData(uint64_t seed = 1) {
  SynthConfig cfg;
  cfg.concepts = 8;
  cfg.images = 20;
  cfg.test_images = 4;
  cfg.captions_per_image = 2;
  cfg.raw_dim = 12;
  cfg.regions = 5;
  cfg.tokens = 4;
  cfg.seed = seed;
  return cfg;
}

SetPredictorConfig TinyPredictor(size_t k = 3) {
  SetPredictorConfig p;
  p.num_slots = k;
  p.iterations = 2;
  p.dim = 8;
  p.attn_dim = 8;
  p.mlp_hidden = 8;
  return p;
}

TrainConfig TinyTrain(size_t epochs = 2) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_images = 6;
  return t;
}

std::vector<Matrix> Params(const Model& m) {
  std::vector<Matrix> out;
  m.ForEachParam([&](const std::string&, const Matrix& p) { out.push_back(p); });
  return out;
}

bool SameBits(const Model& a, const Model& b) {
  const std::vector<Matrix> pa = Params(a), pb = Params(b);
  if (pa.size() != pb.size()) return false;
  for (size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].rows() != pb[i].rows() || pa[i].cols() != pb[i].cols()) return false;
    for (size_t k = 0; k < pa[i].size(); ++k)
      if (pa[i][k] != pb[i][k]) return false;
  }
  return true;
}

std::string TempDir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("divemb_trainer_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string Slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

TEST(AdamWTest, ZeroGradientZeroDecayIsNoop) {
  std::mt19937_64 rng(1);
  Matrix p = RandomMatrix(rng, 3, 4);
  const Matrix before = p;
  Matrix* params[] = {&p};
  const Matrix grads[] = {Matrix(3, 4)};
  OptimState state;
  for (int i = 0; i < 5; ++i) AdamWStep(params, grads, state, 0.1, 0.0);
  EXPECT_EQ(MaxAbsDiff(p, before), 0.0);
}

TEST(AdamWTest, FirstStepIsSignStep) {
  std::mt19937_64 rng(2);
  Matrix p = RandomMatrix(rng, 2, 5);
  const Matrix before = p;
  const Matrix g = RandomMatrix(rng, 2, 5);
  Matrix* params[] = {&p};
  const Matrix grads[] = {g};
  OptimState state;
  const AdamHyper hyper;
  AdamWStep(params, grads, state, 0.01, 0.0, hyper);
  for (size_t k = 0; k < p.size(); ++k) {
    EXPECT_NEAR(p[k], before[k] - 0.01 * g[k] / (std::abs(g[k]) + hyper.eps), 1e-15);
  }
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamWTest, DecayOnlyShrinksByFactor) {
  std::mt19937_64 rng(3);
  Matrix p = RandomMatrix(rng, 4, 4);
  const double norm = FrobeniusNorm(p);
  Matrix* params[] = {&p};
  const Matrix grads[] = {Matrix(4, 4)};
  OptimState state;
  AdamWStep(params, grads, state, 0.1, 0.5);
  EXPECT_NEAR(FrobeniusNorm(p), norm * (1.0 - 0.1 * 0.5), 1e-12);
}

TEST(AdamWTest, PerParameterScale) {
  Matrix a(1, 1), b(1, 1);
  Matrix* params[] = {&a, &b};
  Matrix g(1, 1);
  g(0, 0) = 1.0;
  const Matrix grads[] = {g, g};
  const double scale[] = {1.0, 0.1};
  OptimState state;
  AdamWStep(params, grads, state, 0.01, 0.0, AdamHyper{}, scale);
  EXPECT_NEAR(b(0, 0), 0.1 * a(0, 0), 1e-15);
  const double bad_scale[] = {1.0};
  EXPECT_THROW(AdamWStep(params, grads, state, 0.01, 0.0, AdamHyper{}, bad_scale), ShapeError);
}

TEST(ScheduleTest, Cosine) {
  EXPECT_DOUBLE_EQ(CosineLr(0, 100, 0.5), 0.5);
  EXPECT_NEAR(CosineLr(100, 100, 0.5), 0.0, 1e-15);
  EXPECT_NEAR(CosineLr(50, 100, 0.5), 0.25, 1e-15);
  for (size_t s = 1; s <= 100; ++s) EXPECT_LE(CosineLr(s, 100, 1.0), CosineLr(s - 1, 100, 1.0));
}

TEST(ScheduleTest, Step) {
  TrainConfig cfg;
  cfg.lr = 1.0;
  cfg.lr_schedule = LrSchedule::kStep;
  cfg.step_epochs = 2;
  cfg.step_gamma = 0.1;
  EXPECT_DOUBLE_EQ(ScheduledLr(cfg, 0, 100, 10), 1.0);
  EXPECT_DOUBLE_EQ(ScheduledLr(cfg, 19, 100, 10), 1.0);
  EXPECT_NEAR(ScheduledLr(cfg, 20, 100, 10), 0.1, 1e-15);
  EXPECT_NEAR(ScheduledLr(cfg, 45, 100, 10), 0.01, 1e-15);
  EXPECT_EQ(ParseLrSchedule("step"), LrSchedule::kStep);
  EXPECT_THROW(ParseLrSchedule("linear"), ConfigError);
}

TEST(BatchTest, CoversEveryImageOnce) {
  std::vector<uint32_t> ids(23);
  for (uint32_t i = 0; i < 23; ++i) ids[i] = 100 + i;
  const auto batches = MakeBatches(ids, 11, 4, 0);
  // 11 + 11 + 1: the lone trailing image joins the previous batch.
  ASSERT_EQ(batches.size(), 2u);
  EXPECT_EQ(batches[1].size(), 12u);
  std::multiset<uint32_t> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen, std::multiset<uint32_t>(ids.begin(), ids.end()));
  EXPECT_EQ(MakeBatches(ids, 11, 4, 0), batches);
  EXPECT_NE(MakeBatches(ids, 11, 4, 1), batches);
}

TEST(BatchGradientsTest, IndependentOfWorkerCount) {
  const Corpus corpus = GenerateCorpus(TinyData());
  for (SlotInit init : {SlotInit::kLearnable, SlotInit::kRandom}) {
    SetPredictorConfig pred = TinyPredictor();
    pred.init_slots = init;
    const Model model = InitModel(pred, corpus.config.raw_dim, SimilarityConfig{}, 3);
    const std::vector<uint32_t> ids = {0, 3, 5, 8, 9};
    const BatchGradients one = ComputeBatchGradients(model, corpus, ids, LossConfig{}, 1, 1);
    const BatchGradients three = ComputeBatchGradients(model, corpus, ids, LossConfig{}, 1, 3);
    EXPECT_EQ(one.terms.total, three.terms.total);
    EXPECT_TRUE(SameBits(one.grads, three.grads));
    EXPECT_EQ(one.slot_grad_sq, three.slot_grad_sq);
    EXPECT_EQ(one.slot_grad_sq.size(), (ids.size() * 3) * pred.num_slots);
    EXPECT_NEAR(BatchLoss(model, corpus, ids, LossConfig{}, 1), one.terms.total, 1e-12);
  }
}

TEST(BatchGradientsTest, MatchesFiniteDifferences) {
  const Corpus corpus = GenerateCorpus(TinyData());
  Model model = InitModel(TinyPredictor(), corpus.config.raw_dim, SimilarityConfig{}, 5);
  // Push the zero-initialized parameters off zero so every path carries signal.
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 0.1);
  model.ForEachParam([&](const std::string& name, Matrix& p) {
    if (name != "mp_ab")
      for (double& v : p.values()) v += n(rng);
  });
  LossConfig loss;
  loss.margin = 1.0;
  loss.reg_weight = 0.1;
  const std::vector<uint32_t> ids = {1, 2, 4, 7};
  const BatchGradients bg = ComputeBatchGradients(model, corpus, ids, loss);
  const std::vector<Matrix> grads = Params(bg.grads);
  std::vector<Matrix*> params;
  model.ForEachParam([&](const std::string&, Matrix& p) { params.push_back(&p); });
  std::uniform_int_distribution<size_t> pick_param(0, params.size() - 2);  // mp_ab unused by SC
  double err_num = 0, err_den = 0;
  for (int probe = 0; probe < 20; ++probe) {
    const size_t pi = pick_param(rng);
    std::uniform_int_distribution<size_t> pick_elem(0, params[pi]->size() - 1);
    const size_t k = pick_elem(rng);
    const double orig = (*params[pi])[k], h = 1e-6;
    (*params[pi])[k] = orig + h;
    const double up = BatchLoss(model, corpus, ids, loss);
    (*params[pi])[k] = orig - h;
    const double down = BatchLoss(model, corpus, ids, loss);
    (*params[pi])[k] = orig;
    const double fd = (up - down) / (2 * h);
    err_num += (fd - grads[pi][k]) * (fd - grads[pi][k]);
    err_den += fd * fd;
  }
  EXPECT_LT(std::sqrt(err_num / err_den), 1e-4);
}

TEST(TrainTest, ZeroLearningRateKeepsParameters) {
  const Corpus corpus = GenerateCorpus(TinyData());
  TrainConfig train = TinyTrain(2);
  train.lr = 0.0;
  const TrainResult r = Train(corpus, TinyPredictor(), LossConfig{}, train, TrainOptions{});
  Model init = InitModel(TinyPredictor(), corpus.config.raw_dim, LossConfig{}.sim, train.seed);
  RoundToFloat(init);
  EXPECT_TRUE(SameBits(r.best, init));
  ASSERT_EQ(r.epochs.size(), 2u);
  EXPECT_GT(r.epochs[0].loss.total, 0.0);
}

TEST(TrainTest, SingleStepIsReproducible) {
  const Corpus corpus = GenerateCorpus(TinyData());
  auto step = [&](size_t workers) {
    Model model = InitModel(TinyPredictor(), corpus.config.raw_dim, SimilarityConfig{}, 9);
    const std::vector<uint32_t> ids = {0, 1, 2, 3, 4, 5};
    const BatchGradients bg = ComputeBatchGradients(model, corpus, ids, LossConfig{}, 1, workers);
    std::vector<Matrix*> params;
    model.ForEachParam([&](const std::string&, Matrix& p) { params.push_back(&p); });
    const std::vector<Matrix> grads = Params(bg.grads);
    OptimState state;
    AdamWStep(params, grads, state, 1e-3, 1e-4);
    return model;
  };
  EXPECT_TRUE(SameBits(step(1), step(1)));
  EXPECT_TRUE(SameBits(step(1), step(2)));
}

TEST(TrainTest, FrozenBatchLossDecreases) {
  const Corpus corpus = GenerateCorpus(TinyData());
  int monotone_seeds = 0;
  for (uint64_t seed : {1, 2, 3}) {
    Model model = InitModel(TinyPredictor(), corpus.config.raw_dim, SimilarityConfig{}, seed);
    std::vector<Matrix*> params;
    model.ForEachParam([&](const std::string&, Matrix& p) { params.push_back(&p); });
    const std::vector<uint32_t> ids = {0, 2, 4, 6, 8, 10};
    LossConfig loss;
    loss.margin = 0.5;
    OptimState state;
    double prev = BatchLoss(model, corpus, ids, loss);
    const double first = prev;
    bool monotone = true;
    for (int s = 0; s < 20; ++s) {
      const BatchGradients bg = ComputeBatchGradients(model, corpus, ids, loss);
      AdamWStep(params, Params(bg.grads), state, 1e-3, 0.0);
      const double now = BatchLoss(model, corpus, ids, loss);
      monotone = monotone && now <= prev;
      prev = now;
    }
    EXPECT_LT(prev, first);
    monotone_seeds += monotone;
  }
  EXPECT_GE(monotone_seeds, 2);
}

TEST(TrainTest, WritesMetricsAndCheckpoints) {
  const Corpus corpus = GenerateCorpus(TinyData());
  const std::string dir = TempDir("metrics");
  TrainOptions opts;
  opts.out_dir = dir;
  const TrainResult r = Train(corpus, TinyPredictor(), LossConfig{}, TinyTrain(3), opts);
  ASSERT_EQ(r.epochs.size(), 3u);
  EXPECT_GE(r.best_epoch, 1u);
  EXPECT_LE(r.best_epoch, 3u);
  const std::string epoch_csv = Slurp(std::filesystem::path(dir) / "metrics_epoch.csv");
  EXPECT_EQ(epoch_csv.substr(0, epoch_csv.find('\n')),
            "epoch,lr,l_tri,l_div,l_mmd,l_total,cv_visual,cv_text,untrained_fraction,val_rsum,"
            "config_hash");
  EXPECT_EQ(std::count(epoch_csv.begin(), epoch_csv.end(), '\n'), 4);
  const std::string step_csv = Slurp(std::filesystem::path(dir) / "metrics_step.csv");
  EXPECT_EQ(step_csv.rfind("step,epoch,lr,l_tri", 0), 0u);
  for (const EpochMetrics& e : r.epochs) {
    EXPECT_GE(e.untrained_fraction, 0.0);
    EXPECT_LE(e.untrained_fraction, 1.0);
    EXPECT_GE(e.cv_visual, 0.0);
    EXPECT_LE(e.cv_visual, 1.0);
  }
  const LoadedCheckpoint best = ReadCheckpoint((std::filesystem::path(dir) / "best.divp").string());
  EXPECT_TRUE(SameBits(best.model, r.best));
  const LoadedCheckpoint last = ReadCheckpoint((std::filesystem::path(dir) / "last.divp").string());
  bool has_step = false;
  for (const NamedTensor& t : last.extra) has_step = has_step || t.name == "optim.step";
  EXPECT_TRUE(has_step);
  std::filesystem::remove_all(dir);
}

TEST(TrainTest, MissingOutputDirectoryIsAnIoError) {
  const Corpus corpus = GenerateCorpus(TinyData());
  TrainOptions opts;
  opts.out_dir = "/nonexistent/divemb/out";
  EXPECT_THROW(Train(corpus, TinyPredictor(), LossConfig{}, TinyTrain(1), opts), IoError);
}

TEST(TrainTest, NonFiniteInputAbortsAndKeepsLastCheckpoint) {
  Corpus corpus = GenerateCorpus(TinyData());
  const std::string dir = TempDir("nan");
  TrainOptions opts;
  opts.out_dir = dir;
  Train(corpus, TinyPredictor(), LossConfig{}, TinyTrain(1), opts);
  const std::string last = (std::filesystem::path(dir) / "last.divp").string();
  const std::string good = Slurp(last);
  for (SynthImage& img : corpus.images) img.local(0, 0) = std::nan("");
  EXPECT_THROW(Train(corpus, TinyPredictor(), LossConfig{}, TinyTrain(1), opts), NumericError);
  EXPECT_EQ(Slurp(last), good);
  std::filesystem::remove_all(dir);
}

TEST(TrainConfigTest, Validation) {
  TrainConfig cfg;
  cfg.batch_images = 1;
  EXPECT_THROW(cfg.Validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr = -1.0;
  EXPECT_THROW(cfg.Validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.Validate(), ConfigError);
}

TEST(CheckpointTest, RoundTripStoresFloats) {
  std::mt19937_64 rng(4);
  Model m = InitModel(TinyPredictor(), 12, SimilarityConfig{}, 4);
  m.ForEachParam([&](const std::string&, Matrix& p) {
    for (double& v : p.values()) v = std::normal_distribution<double>(0, 1)(rng);
  });
  const std::string path = (std::filesystem::temp_directory_path() / "divemb_ckpt.divp").string();
  const std::vector<NamedTensor> extra = {{"optim.step", Matrix(1, 1)}};
  RunConfig cfg;
  cfg.predictor = TinyPredictor();
  cfg.data.raw_dim = 12;
  WriteCheckpoint(path, cfg.Canonical(), m, extra);
  const LoadedCheckpoint back = ReadCheckpoint(path);
  std::filesystem::remove(path);
  Model rounded = m;
  RoundToFloat(rounded);
  EXPECT_TRUE(SameBits(back.model, rounded));
  EXPECT_EQ(back.config_json, cfg.Canonical());
  ASSERT_EQ(back.extra.size(), 1u);
  EXPECT_EQ(back.extra[0].name, "optim.step");
}

TEST(CheckpointTest, BadFilesRaiseIoError) {
  EXPECT_THROW(ReadCheckpoint("/nonexistent/x.divp"), IoError);
  const std::string path = (std::filesystem::temp_directory_path() / "divemb_bad.divp").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "DIVPgarbage";
  }
  EXPECT_THROW(ReadCheckpoint(path), IoError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace divemb
