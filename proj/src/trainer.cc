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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "divemb/config.h"
#include "divemb/error.h"
#include "divemb/parallel.h"
#include "divemb/tape.h"

namespace divemb {

std::string_view ToString(LrSchedule s) { return s == LrSchedule::kCosine ? "cosine" : "step"; }

LrSchedule ParseLrSchedule(std::string_view name) {
  if (name == "cosine") return LrSchedule::kCosine;
  if (name == "step") return LrSchedule::kStep;
  throw ConfigError("train.lr_schedule: expected 'cosine' or 'step', got '" + std::string(name) +
                    "'");
}

void TrainConfig::Validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_images < 2) throw ConfigError("train: batch_images must be >= 2");
  if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
  if (!(predictor_lr_mult >= 0.0)) throw ConfigError("train: predictor_lr_mult must be >= 0");
  if (step_epochs < 1 || !(step_gamma > 0.0)) {
    throw ConfigError("train: step schedule needs step_epochs >= 1 and step_gamma > 0");
  }
}

void AdamWStep(std::span<Matrix* const> params, std::span<const Matrix> grads, OptimState& state,
               double lr, double weight_decay, const AdamHyper& hyper,
               std::span<const double> lr_scale) {
  if (params.size() != grads.size() || (!lr_scale.empty() && lr_scale.size() != params.size())) {
    throw ShapeError("adamw: parameter, gradient and scale lists differ in length");
  }
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adamw: optimizer state size mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = grads[i];
    CheckSameShape(p, g, "adamw");
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    const double step_lr = lr * (lr_scale.empty() ? 1.0 : lr_scale[i]);
    for (size_t k = 0; k < p.size(); ++k) {
      m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
      v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p[k] -= step_lr * (m_hat / (std::sqrt(v_hat) + hyper.eps) + weight_decay * p[k]);
    }
  }
}

double CosineLr(size_t step, size_t total_steps, double lr0) {
  if (total_steps == 0) return lr0;
  const double x = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(M_PI * x));
}

double ScheduledLr(const TrainConfig& cfg, size_t step, size_t total_steps,
                   size_t steps_per_epoch) {
  if (cfg.lr_schedule == LrSchedule::kCosine) return CosineLr(step, total_steps, cfg.lr);
  const size_t epoch = steps_per_epoch ? step / steps_per_epoch : 0;
  return cfg.lr * std::pow(cfg.step_gamma, static_cast<double>(epoch / cfg.step_epochs));
}

std::vector<std::vector<uint32_t>> MakeBatches(std::span<const uint32_t> image_ids,
                                               size_t batch_images, uint64_t seed, size_t epoch) {
  std::vector<uint32_t> order(image_ids.begin(), image_ids.end());
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + epoch + 1);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<uint32_t>> batches;
  for (size_t i = 0; i < order.size(); i += batch_images) {
    const size_t end = std::min(order.size(), i + batch_images);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

namespace {

struct BatchLayout {
  std::vector<uint32_t> images;
  std::vector<uint32_t> captions;
  std::vector<size_t> caption_image;  // batch-local image index
};

BatchLayout Layout(const Corpus& corpus, std::span<const uint32_t> image_ids) {
  BatchLayout b;
  b.images.assign(image_ids.begin(), image_ids.end());
  for (size_t i = 0; i < b.images.size(); ++i) {
    for (uint32_t c : corpus.images.at(b.images[i]).captions) {
      b.captions.push_back(c);
      b.caption_image.push_back(i);
    }
  }
  return b;
}

// One sample's recording: encoder then set predictor, on a private tape.
struct SampleRun {
  Tape tape;
  EncoderVars enc;
  SetPredictorVars pred;
  PredictorTrace trace;
};

std::unique_ptr<SampleRun> RecordSample(const Model& m, Modality modality, const Matrix& local,
                                        const Matrix& global_feat, uint64_t key) {
  auto run = std::make_unique<SampleRun>();
  const bool visual = modality == Modality::kVisual;
  run->enc = BindParams(run->tape, visual ? m.visual_encoder : m.text_encoder);
  run->pred = BindParams(run->tape, visual ? m.visual : m.text);
  const EncodedVars f =
      RecordEncode(run->tape.ConstRef(local), run->tape.ConstRef(global_feat), run->enc);
  run->trace = RecordPredictor(run->tape, run->pred, f.local, f.global_feat, m.predictor, key);
  return run;
}

// Parameter gradients of one sample, in EncoderParams then
// SetPredictorParams field order.
std::vector<Matrix> CollectGrads(const SampleRun& run) {
  std::vector<Matrix> g;
  for (const auto& [name, member] : EncoderVars::Fields()) g.push_back(run.tape.Grad(run.enc.*member));
  for (const auto& [name, member] : SetPredictorVars::Fields()) {
    g.push_back(run.tape.Grad(run.pred.*member));
  }
  return g;
}

void AddGrads(EncoderParams& enc, SetPredictorParams& pred, const std::vector<Matrix>& g) {
  size_t i = 0;
  enc.ForEach([&](const char*, Matrix& m) { m += g[i++]; });
  pred.ForEach([&](const char*, Matrix& m) { m += g[i++]; });
}

LossConfig EffectiveLoss(const Model& model, LossConfig loss) {
  loss.sim = ModelSimilarity(model, loss.sim);
  return loss;
}

}  // namespace

BatchGradients ComputeBatchGradients(const Model& model, const Corpus& corpus,
                                     std::span<const uint32_t> image_ids, const LossConfig& loss_in,
                                     uint64_t salt, size_t workers) {
  const LossConfig loss = EffectiveLoss(model, loss_in);
  const BatchLayout layout = Layout(corpus, image_ids);
  const size_t n_img = layout.images.size();
  const size_t n = n_img + layout.captions.size();

  std::vector<std::unique_ptr<SampleRun>> runs(n);
  ParallelFor(n, workers, [&](size_t s) {
    if (s < n_img) {
      const SynthImage& img = corpus.images.at(layout.images[s]);
      runs[s] = RecordSample(model, Modality::kVisual, img.local, img.global_feat,
                             SampleKey(Modality::kVisual, img.id, salt));
    } else {
      const SynthCaption& cap = corpus.captions.at(layout.captions[s - n_img]);
      runs[s] = RecordSample(model, Modality::kText, cap.local, cap.global_feat,
                             SampleKey(Modality::kText, cap.id, salt));
    }
  });

  LossBatch batch;
  std::vector<Matrix> image_slots, caption_slots;
  for (size_t s = 0; s < n; ++s) {
    const EmbeddingSet set{runs[s]->trace.set.value()};
    if (s < n_img) {
      batch.images.push_back(set);
      image_slots.push_back(runs[s]->trace.slots.value());
    } else {
      batch.captions.push_back(set);
      caption_slots.push_back(runs[s]->trace.slots.value());
    }
  }
  batch.caption_image = layout.caption_image;
  auto [terms, lg] = TotalLoss(batch, image_slots, caption_slots, loss);

  BatchGradients out;
  out.terms = terms;
  for (const EmbeddingSet& s : batch.images) out.cv_visual += CircularVariance(s) / n_img;
  for (const EmbeddingSet& s : batch.captions) {
    out.cv_text += CircularVariance(s) / static_cast<double>(batch.captions.size());
  }
  for (size_t s = 0; s < n; ++s) {
    const Matrix& d = s < n_img ? lg.d_images_triplet[s] : lg.d_captions_triplet[s - n_img];
    for (size_t k = 0; k < d.rows(); ++k) {
      double sq = 0.0;
      for (double v : d.row(k)) sq += v * v;
      out.slot_grad_sq.push_back(sq);
    }
  }

  std::vector<std::vector<Matrix>> per_sample(n);
  ParallelFor(n, workers, [&](size_t s) {
    SampleRun& run = *runs[s];
    const bool img = s < n_img;
    std::vector<std::pair<Var, Matrix>> seeds;
    seeds.emplace_back(run.trace.set, img ? lg.d_images[s] : lg.d_captions[s - n_img]);
    seeds.emplace_back(run.trace.slots, img ? lg.d_image_slots[s] : lg.d_caption_slots[s - n_img]);
    run.tape.Backward(seeds);
    per_sample[s] = CollectGrads(run);
    runs[s].reset();
  });

  out.grads = ZerosLike(model);
  for (size_t s = 0; s < n; ++s) {
    if (s < n_img) {
      AddGrads(out.grads.visual_encoder, out.grads.visual, per_sample[s]);
    } else {
      AddGrads(out.grads.text_encoder, out.grads.text, per_sample[s]);
    }
  }
  if (loss.sim.kind == SimilarityKind::kMp) {
    out.grads.mp_ab = Matrix{{lg.d_mp_a, lg.d_mp_b}};
  }
  return out;
}

double BatchLoss(const Model& model, const Corpus& corpus, std::span<const uint32_t> image_ids,
                 const LossConfig& loss_in, uint64_t salt) {
  const LossConfig loss = EffectiveLoss(model, loss_in);
  const BatchLayout layout = Layout(corpus, image_ids);
  LossBatch batch;
  std::vector<Matrix> image_slots, caption_slots;
  for (uint32_t id : layout.images) {
    const SynthImage& img = corpus.images.at(id);
    SetPrediction p = EmbedSample(model, Modality::kVisual, img.local, img.global_feat,
                                  SampleKey(Modality::kVisual, id, salt));
    batch.images.push_back(std::move(p.set));
    image_slots.push_back(std::move(p.slots));
  }
  for (uint32_t id : layout.captions) {
    const SynthCaption& cap = corpus.captions.at(id);
    SetPrediction p = EmbedSample(model, Modality::kText, cap.local, cap.global_feat,
                                  SampleKey(Modality::kText, id, salt));
    batch.captions.push_back(std::move(p.set));
    caption_slots.push_back(std::move(p.slots));
  }
  batch.caption_image = layout.caption_image;
  return TotalLoss(batch, image_slots, caption_slots, loss).first.total;
}

namespace {

constexpr double kUntrainedNorm = 1e-9;

std::string Fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::vector<NamedTensor> OptimTensors(const Model& model, const OptimState& state) {
  std::vector<NamedTensor> out;
  size_t i = 0;
  model.ForEachParam([&](const std::string& name, const Matrix&) {
    if (i < state.m.size()) {
      out.push_back({"optim.m." + name, state.m[i]});
      out.push_back({"optim.v." + name, state.v[i]});
    }
    ++i;
  });
  out.push_back({"optim.step", Matrix(1, 1, static_cast<double>(state.step))});
  return out;
}

class CsvFile {
 public:
  CsvFile(const std::string& path, const std::string& header) : out_(path) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
    out_ << header << '\n';
  }
  void Row(const std::string& row) {
    out_ << row << '\n';
    out_.flush();
    if (!out_) throw IoError("metrics write failed");
  }

 private:
  std::ofstream out_;
};

}  // namespace

TrainResult Train(const Corpus& corpus, const SetPredictorConfig& predictor, const LossConfig& loss,
                  const TrainConfig& train, const TrainOptions& options) {
  predictor.Validate();
  loss.Validate();
  train.Validate();
  Model model = InitModel(predictor, corpus.config.raw_dim, loss.sim, train.seed);

  std::string config_json = options.config_json;
  std::string config_hash = options.config_hash;
  if (config_json.empty()) {
    RunConfig rc;
    rc.data = corpus.config;
    rc.predictor = predictor;
    rc.loss = loss;
    rc.train = train;
    config_json = rc.Canonical();
    config_hash = rc.Hash();
  }

  const bool write = !options.out_dir.empty();
  std::unique_ptr<CsvFile> step_csv, epoch_csv;
  std::string last_path, best_path;
  if (write) {
    if (!std::filesystem::is_directory(options.out_dir)) {
      throw IoError("output directory '" + options.out_dir + "' does not exist");
    }
    const std::filesystem::path dir(options.out_dir);
    step_csv = std::make_unique<CsvFile>(
        (dir / "metrics_step.csv").string(),
        "step,epoch,lr,l_tri,l_div,l_mmd,l_total,cv_visual,cv_text,untrained_fraction,config_hash");
    epoch_csv = std::make_unique<CsvFile>(
        (dir / "metrics_epoch.csv").string(),
        "epoch,lr,l_tri,l_div,l_mmd,l_total,cv_visual,cv_text,untrained_fraction,val_rsum,"
        "config_hash");
    last_path = (dir / "last.divp").string();
    best_path = (dir / "best.divp").string();
  }

  std::vector<Matrix*> params;
  std::vector<double> lr_scale;
  model.ForEachParam([&](const std::string& name, Matrix& p) {
    params.push_back(&p);
    const bool in_predictor = name.rfind("visual.", 0) == 0 || name.rfind("text.", 0) == 0;
    lr_scale.push_back(in_predictor ? train.predictor_lr_mult : 1.0);
  });
  OptimState optim;
  const AdamHyper hyper{train.beta1, train.beta2, train.adam_eps};

  const std::vector<uint32_t> train_ids = corpus.ImagesIn(Split::kTrain);
  if (train_ids.size() < 2) throw ConfigError("train: fewer than 2 training images");
  const bool has_val = !corpus.ImagesIn(Split::kVal).empty();
  const size_t steps_per_epoch = MakeBatches(train_ids, train.batch_images, train.seed, 0).size();
  const size_t total_steps = steps_per_epoch * train.epochs;

  TrainResult result;
  bool have_best = false;
  size_t step = 0;
  for (size_t epoch = 0; epoch < train.epochs; ++epoch) {
    LossConfig epoch_loss = loss;
    if (epoch < train.no_mining_epochs) epoch_loss.hardest_mining = false;
    EpochMetrics em;
    em.epoch = epoch + 1;
    em.lr = ScheduledLr(train, step, total_steps, steps_per_epoch);
    size_t slot_count = 0, untrained = 0;
    const auto batches = MakeBatches(train_ids, train.batch_images, train.seed, epoch);
    for (const std::vector<uint32_t>& ids : batches) {
      const double lr = ScheduledLr(train, step, total_steps, steps_per_epoch);
      BatchGradients bg = ComputeBatchGradients(model, corpus, ids, epoch_loss, epoch + 1,
                                                options.workers);
      if (!std::isfinite(bg.terms.total)) {
        throw NumericError("non-finite loss at step " + std::to_string(step) + " (epoch " +
                           std::to_string(epoch + 1) + ")" +
                           (write ? "; last good checkpoint kept at " + last_path : ""));
      }
      std::vector<Matrix> grads;
      bool finite = true;
      bg.grads.ForEachParam([&](const std::string&, const Matrix& g) {
        finite = finite && g.all_finite();
        grads.push_back(g);
      });
      if (!finite) {
        throw NumericError("non-finite gradient at step " + std::to_string(step));
      }
      AdamWStep(params, grads, optim, lr, train.weight_decay, hyper, lr_scale);

      size_t step_untrained = 0;
      for (double sq : bg.slot_grad_sq) step_untrained += std::sqrt(sq) < kUntrainedNorm ? 1 : 0;
      slot_count += bg.slot_grad_sq.size();
      untrained += step_untrained;
      const double frac = static_cast<double>(step_untrained) / bg.slot_grad_sq.size();
      const double w = 1.0 / static_cast<double>(batches.size());
      em.loss.triplet += w * bg.terms.triplet;
      em.loss.diversity += w * bg.terms.diversity;
      em.loss.mmd += w * bg.terms.mmd;
      em.loss.total += w * bg.terms.total;
      em.cv_visual += w * bg.cv_visual;
      em.cv_text += w * bg.cv_text;
      if (step_csv) {
        step_csv->Row(std::to_string(step) + "," + std::to_string(epoch + 1) + "," + Fmt(lr) +
                      "," + Fmt(bg.terms.triplet) + "," + Fmt(bg.terms.diversity) + "," +
                      Fmt(bg.terms.mmd) + "," + Fmt(bg.terms.total) + "," + Fmt(bg.cv_visual) +
                      "," + Fmt(bg.cv_text) + "," + Fmt(frac) + "," + config_hash);
      }
      ++step;
    }
    em.untrained_fraction = slot_count ? static_cast<double>(untrained) / slot_count : 0.0;

    Model stored = model;
    RoundToFloat(stored);
    if (has_val) {
      const EvalData val = EmbedSplit(stored, corpus, Split::kVal, options.workers);
      em.val_rsum = Evaluate(val, ModelSimilarity(stored, loss.sim), options.workers).rsum;
    }
    if (write) WriteCheckpoint(last_path, config_json, model, OptimTensors(model, optim));
    if (!have_best || (has_val && em.val_rsum > result.best_val_rsum) || !has_val) {
      have_best = true;
      result.best = stored;
      result.best_epoch = em.epoch;
      result.best_val_rsum = em.val_rsum;
      if (write) WriteCheckpoint(best_path, config_json, model, OptimTensors(model, optim));
    }
    if (epoch_csv) {
      epoch_csv->Row(std::to_string(em.epoch) + "," + Fmt(em.lr) + "," + Fmt(em.loss.triplet) +
                     "," + Fmt(em.loss.diversity) + "," + Fmt(em.loss.mmd) + "," +
                     Fmt(em.loss.total) + "," + Fmt(em.cv_visual) + "," + Fmt(em.cv_text) + "," +
                     Fmt(em.untrained_fraction) + "," + Fmt(em.val_rsum) + "," + config_hash);
    }
    if (options.progress) {
      *options.progress << "epoch " << em.epoch << "/" << train.epochs << " loss "
                        << Fmt(em.loss.total) << " tri " << Fmt(em.loss.triplet) << " cv_v "
                        << Fmt(em.cv_visual) << " untrained " << Fmt(em.untrained_fraction)
                        << " val_rsum " << Fmt(em.val_rsum) << "\n";
      options.progress->flush();
    }
    result.epochs.push_back(em);
  }
  return result;
}

}  // namespace divemb
