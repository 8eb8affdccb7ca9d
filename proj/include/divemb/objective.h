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

#ifndef DIVEMB_OBJECTIVE_H_
#define DIVEMB_OBJECTIVE_H_

#include <span>
#include <utility>
#include <vector>

#include "divemb/matrix.h"
#include "divemb/similarity.h"

namespace divemb {

struct LossConfig {
  double margin = 0.1;      // triplet margin
  double reg_weight = 0.01;  // weight of both regularizers
  bool hardest_mining = true;
  double mmd_gamma = 0.5;    // k(x, y) = exp(-gamma |x - y|^2)
  // Bandwidth from the pooled pairwise distances; held constant in the gradient.
  bool mmd_median_heuristic = false;
  SimilarityConfig sim;

  void Validate() const;
};

// In-batch sets with the caption -> image pairing table.
struct LossBatch {
  std::vector<EmbeddingSet> images;
  std::vector<EmbeddingSet> captions;
  std::vector<size_t> caption_image;

  void Validate() const;
};

// Images x captions similarity table.
Matrix BatchScores(const LossBatch& batch, const SimilarityConfig& sim);

struct TripletResult {
  double loss = 0.0;
  std::vector<Matrix> d_images;
  std::vector<Matrix> d_captions;
  double d_mp_a = 0.0;
  double d_mp_b = 0.0;
  size_t active_hinges = 0;
};

// Summed over matched (image, caption) pairs: an image-anchored hinge against
// captions of other images and a caption-anchored hinge against other images.
// With hardest mining only the highest-scoring negative (first index on ties)
// enters each hinge; otherwise every negative does.
TripletResult TripletLoss(const LossBatch& batch, const LossConfig& cfg);

// Sum over ordered slot pairs x != x' of exp(-2 |x - x'|^2), averaged over
// the samples. `grads` receives per-sample gradients when non-null.
double DiversityReg(std::span<const Matrix> slots, std::vector<Matrix>* grads = nullptr);

// Unbiased Gaussian-kernel MMD^2 between the rows of x and y, clamped at 0.
// Gradients are zero when the clamp is active.
double MmdUnbiased(const Matrix& x, const Matrix& y, double gamma, Matrix* dx = nullptr,
                   Matrix* dy = nullptr);

// Median of pairwise squared distances over the pooled rows, inverted.
double MedianHeuristicGamma(const Matrix& x, const Matrix& y);

// MMD between the pooled, unit-normalized elements of the two modalities.
double MmdReg(std::span<const EmbeddingSet> images, std::span<const EmbeddingSet> captions,
              const LossConfig& cfg, std::vector<Matrix>* d_images = nullptr,
              std::vector<Matrix>* d_captions = nullptr);

struct LossTerms {
  double triplet = 0.0;
  double diversity = 0.0;
  double mmd = 0.0;
  double total = 0.0;
};

struct LossGradients {
  std::vector<Matrix> d_images;    // w.r.t. S of each image
  std::vector<Matrix> d_captions;  // w.r.t. S of each caption
  std::vector<Matrix> d_image_slots;
  std::vector<Matrix> d_caption_slots;
  // Triplet-only parts of d_images / d_captions.
  std::vector<Matrix> d_images_triplet;
  std::vector<Matrix> d_captions_triplet;
  double d_mp_a = 0.0;
  double d_mp_b = 0.0;
};

// L_tri + w * (L_div(image slots) + L_div(caption slots)) + w * L_mmd.
std::pair<LossTerms, LossGradients> TotalLoss(const LossBatch& batch,
                                              std::span<const Matrix> image_slots,
                                              std::span<const Matrix> caption_slots,
                                              const LossConfig& cfg);

}  // namespace divemb

#endif  // DIVEMB_OBJECTIVE_H_
