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

#ifndef DIVEMB_TRAINER_H_
#define DIVEMB_TRAINER_H_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "divemb/model.h"
#include "divemb/objective.h"
#include "divemb/retrieval.h"
#include "divemb/synth_data.h"

namespace divemb {

enum class LrSchedule { kCosine, kStep };
std::string_view ToString(LrSchedule s);
LrSchedule ParseLrSchedule(std::string_view name);

struct TrainConfig {
  size_t epochs = 30;
  size_t batch_images = 32;
  double lr = 1e-3;
  LrSchedule lr_schedule = LrSchedule::kCosine;
  size_t step_epochs = 10;  // step schedule: decay every this many epochs
  double step_gamma = 0.1;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Scale on the set-predictor learning rate relative to the encoders.
  double predictor_lr_mult = 1.0;
  // Epochs at the start that sum over all negatives instead of the hardest.
  size_t no_mining_epochs = 0;
  uint64_t seed = 1;

  void Validate() const;
};

struct OptimState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  uint64_t step = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam moments plus decoupled decay:
//   p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
// `lr_scale`, when non-empty, multiplies lr per parameter.
void AdamWStep(std::span<Matrix* const> params, std::span<const Matrix> grads, OptimState& state,
               double lr, double weight_decay, const AdamHyper& hyper = {},
               std::span<const double> lr_scale = {});

double CosineLr(size_t step, size_t total_steps, double lr0);
// Learning rate at `step` (of `total_steps`, `steps_per_epoch` per epoch).
double ScheduledLr(const TrainConfig& cfg, size_t step, size_t total_steps,
                   size_t steps_per_epoch);

// Training batches for one epoch: shuffled training images, `batch_images`
// per batch; a trailing batch with a single image is merged into the
// previous one.
std::vector<std::vector<uint32_t>> MakeBatches(std::span<const uint32_t> image_ids,
                                               size_t batch_images, uint64_t seed, size_t epoch);

struct BatchGradients {
  LossTerms terms;
  Model grads;
  double cv_visual = 0.0;
  double cv_text = 0.0;
  // Squared norm of the triplet gradient reaching each set element, per
  // sample (images then captions of the batch), K entries each.
  std::vector<double> slot_grad_sq;
};

// Loss and parameter gradients for the images in `image_ids` and all of
// their captions. Per-sample passes may run on `workers` threads; the
// reduction order is fixed, so results do not depend on the worker count.
BatchGradients ComputeBatchGradients(const Model& model, const Corpus& corpus,
                                     std::span<const uint32_t> image_ids, const LossConfig& loss,
                                     uint64_t salt = 0, size_t workers = 1);
// Value only, same definition.
double BatchLoss(const Model& model, const Corpus& corpus, std::span<const uint32_t> image_ids,
                 const LossConfig& loss, uint64_t salt = 0);

struct EpochMetrics {
  size_t epoch = 0;
  double lr = 0.0;
  LossTerms loss;  // mean over the epoch's steps
  double cv_visual = 0.0;
  double cv_text = 0.0;
  double untrained_fraction = 0.0;
  double val_rsum = 0.0;
};

struct TrainOptions {
  // When non-empty: metrics_step.csv, metrics_epoch.csv, last.divp, best.divp.
  std::string out_dir;
  std::string config_json;
  std::string config_hash;
  size_t workers = 1;
  std::ostream* progress = nullptr;
};

struct TrainResult {
  Model best;  // highest validation RSUM, rounded as stored
  std::vector<EpochMetrics> epochs;
  size_t best_epoch = 0;
  double best_val_rsum = 0.0;
};

// Throws NumericError on a non-finite loss; checkpoints already written stay.
TrainResult Train(const Corpus& corpus, const SetPredictorConfig& predictor, const LossConfig& loss,
                  const TrainConfig& train, const TrainOptions& options);

}  // namespace divemb

#endif  // DIVEMB_TRAINER_H_
