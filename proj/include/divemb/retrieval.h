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

#ifndef DIVEMB_RETRIEVAL_H_
#define DIVEMB_RETRIEVAL_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "divemb/json.h"
#include "divemb/matrix.h"
#include "divemb/model.h"
#include "divemb/similarity.h"
#include "divemb/synth_data.h"

namespace divemb {

// Precomputed embedding sets of one modality, stored contiguously. Rows
// offsets[i] .. offsets[i+1] of `elems` belong to ids[i].
struct SetIndex {
  Modality modality = Modality::kVisual;
  std::vector<uint32_t> ids;
  Matrix elems;
  std::vector<size_t> offsets{0};

  static SetIndex Build(Modality modality, std::vector<uint32_t> ids,
                        std::span<const EmbeddingSet> sets);
  size_t size() const { return ids.size(); }
  EmbeddingSet Set(size_t i) const;
  std::vector<EmbeddingSet> Sets() const;
};

// Queries x index scores.
Matrix ScoreIndex(const SetIndex& queries, const SetIndex& index, const SimilarityConfig& cfg,
                  size_t workers = 1);

// Ids by descending score, ties broken by ascending id.
std::vector<uint32_t> RankScores(std::span<const double> scores, std::span<const uint32_t> ids);
std::vector<uint32_t> Rank(const EmbeddingSet& query, const SetIndex& index,
                           const SimilarityConfig& cfg);

// Percentage of queries with at least one match among the first k ids.
double RecallAtK(const std::vector<std::vector<uint32_t>>& ranked,
                 const std::vector<std::vector<uint32_t>>& matches, size_t k);

// 1 - |mean of unit-normalized elements|. Zero elements are skipped.
double CircularVariance(const EmbeddingSet& s);
double MeanCircularVariance(const SetIndex& index);

struct Recalls {
  double r1 = 0.0, r5 = 0.0, r10 = 0.0;
  double sum() const { return r1 + r5 + r10; }
};

struct SlotAblationRow {
  std::string label;
  std::vector<int> visual_keep;
  std::vector<int> text_keep;
  double rsum = 0.0;
  double delta = 0.0;  // rsum - full rsum
};

struct RetrievalReport {
  std::string similarity;
  size_t images = 0;
  size_t captions = 0;
  Recalls i2t;
  Recalls t2i;
  double rsum = 0.0;
  double cv_visual = 0.0;
  double cv_text = 0.0;
  std::vector<SlotAblationRow> ablation;
  std::string config_hash;

  Json ToJson() const;
  // Header line plus one metric row.
  std::string ToCsv() const;
  // Header line plus one row per ablation entry.
  std::string AblationCsv() const;
};

double Rsum(const RetrievalReport& r);

// Ground truth: caption j belongs to image caption_image[j] (an image id).
struct EvalData {
  SetIndex images;
  SetIndex captions;
  std::vector<uint32_t> caption_image;
};

EvalData EmbedSplit(const Model& m, const Corpus& corpus, Split split, size_t workers = 1);

// Recalls in both directions from an images x captions score table.
RetrievalReport ReportFromScores(const Matrix& scores, const EvalData& data);
RetrievalReport Evaluate(const EvalData& data, const SimilarityConfig& cfg, size_t workers = 1);

// Keeps only the rows flagged in `keep` (length K) of every set.
SetIndex MaskIndex(const SetIndex& index, const std::vector<int>& keep);
RetrievalReport SlotAblationEval(const EvalData& data, const std::vector<int>& visual_keep,
                                 const std::vector<int>& text_keep, const SimilarityConfig& cfg,
                                 size_t workers = 1);
// One row per visual slot evaluated alone, relative to `full`.
std::vector<SlotAblationRow> SingleSlotAblation(const EvalData& data, const SimilarityConfig& cfg,
                                                double full_rsum, size_t workers = 1);

Matrix EnsembleScores(const Matrix& a, const Matrix& b);

// Floating-point operations per scored pair, counting a multiply-add as one
// operation and exp, log, sigmoid and comparisons as one each.
uint64_t OpCount(SimilarityKind kind, size_t k1, size_t k2, size_t dim);

}  // namespace divemb

#endif  // DIVEMB_RETRIEVAL_H_
