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

#include "divemb/retrieval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "divemb/error.h"
#include "divemb/log.h"
#include "divemb/parallel.h"

namespace divemb {

SetIndex SetIndex::Build(Modality modality, std::vector<uint32_t> ids,
                         std::span<const EmbeddingSet> sets) {
  if (ids.size() != sets.size()) throw ShapeError("set index: ids and sets differ in length");
  std::vector<uint32_t> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("set index: ids must be unique");
  }
  SetIndex index;
  index.modality = modality;
  index.ids = std::move(ids);
  std::vector<Matrix> parts;
  for (const EmbeddingSet& s : sets) {
    if (!parts.empty() && s.dim() != parts.front().cols()) {
      throw ShapeError("set index: mixed element dimensions");
    }
    parts.push_back(s.elems);
    index.offsets.push_back(index.offsets.back() + s.size());
  }
  index.elems = ConcatRows(parts);
  return index;
}

EmbeddingSet SetIndex::Set(size_t i) const {
  return EmbeddingSet{SliceRows(elems, offsets.at(i), offsets.at(i + 1))};
}

std::vector<EmbeddingSet> SetIndex::Sets() const {
  std::vector<EmbeddingSet> out;
  out.reserve(size());
  for (size_t i = 0; i < size(); ++i) out.push_back(Set(i));
  return out;
}

Matrix ScoreIndex(const SetIndex& queries, const SetIndex& index, const SimilarityConfig& cfg,
                  size_t workers) {
  if (queries.size() && index.size() && queries.elems.cols() != index.elems.cols()) {
    throw ShapeError("score: query dimension " + std::to_string(queries.elems.cols()) +
                     " vs index dimension " + std::to_string(index.elems.cols()));
  }
  const std::vector<EmbeddingSet> q = queries.Sets();
  const std::vector<EmbeddingSet> x = index.Sets();
  return ScoreTable(q, x, cfg, workers);
}

std::vector<uint32_t> RankScores(std::span<const double> scores, std::span<const uint32_t> ids) {
  if (scores.size() != ids.size()) throw ShapeError("rank: scores and ids differ in length");
  std::vector<size_t> order(ids.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  std::vector<uint32_t> out;
  out.reserve(order.size());
  for (size_t i : order) out.push_back(ids[i]);
  return out;
}

std::vector<uint32_t> Rank(const EmbeddingSet& query, const SetIndex& index,
                           const SimilarityConfig& cfg) {
  if (index.size() == 0) return {};
  const std::vector<EmbeddingSet> q{query};
  const std::vector<EmbeddingSet> x = index.Sets();
  const Matrix scores = ScoreTable(q, x, cfg);
  return RankScores(scores.row(0), index.ids);
}

double RecallAtK(const std::vector<std::vector<uint32_t>>& ranked,
                 const std::vector<std::vector<uint32_t>>& matches, size_t k) {
  if (ranked.size() != matches.size()) throw ShapeError("recall: ranked lists and matches differ");
  if (ranked.empty()) return 0.0;
  size_t hits = 0;
  for (size_t q = 0; q < ranked.size(); ++q) {
    if (matches[q].empty()) throw ConfigError("recall: query without a match");
    const size_t top = std::min(k, ranked[q].size());
    const bool hit = std::any_of(ranked[q].begin(), ranked[q].begin() + top, [&](uint32_t id) {
      return std::find(matches[q].begin(), matches[q].end(), id) != matches[q].end();
    });
    hits += hit ? 1 : 0;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranked.size());
}

double CircularVariance(const EmbeddingSet& s) {
  if (s.size() == 0) throw ShapeError("circular variance: empty set");
  Matrix mean(1, s.dim());
  size_t used = 0;
  for (size_t k = 0; k < s.size(); ++k) {
    const double n = Norm(s.elems.row(k));
    if (n <= kNormEps) continue;
    for (size_t j = 0; j < s.dim(); ++j) mean(0, j) += s.elems(k, j) / n;
    ++used;
  }
  if (used < s.size()) LogWarning("circular variance: zero element excluded");
  if (used == 0) return 0.0;
  mean *= 1.0 / static_cast<double>(used);
  return std::clamp(1.0 - Norm(mean.row(0)), 0.0, 1.0);
}

double MeanCircularVariance(const SetIndex& index) {
  if (index.size() == 0) return 0.0;
  double total = 0.0;
  for (size_t i = 0; i < index.size(); ++i) total += CircularVariance(index.Set(i));
  return total / static_cast<double>(index.size());
}

double Rsum(const RetrievalReport& r) { return r.i2t.sum() + r.t2i.sum(); }

namespace {

Json FiniteOrNull(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

std::string Fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string MaskString(const std::vector<int>& keep) {
  std::string s;
  for (size_t i = 0; i < keep.size(); ++i) s += (i ? " " : "") + std::to_string(keep[i]);
  return s;
}

}  // namespace

Json RetrievalReport::ToJson() const {
  Json ablation_rows = Json::array();
  for (const SlotAblationRow& row : ablation) {
    ablation_rows.push_back({{"label", row.label},
                             {"visual_keep", row.visual_keep},
                             {"text_keep", row.text_keep},
                             {"rsum", row.rsum},
                             {"delta", row.delta}});
  }
  return Json{{"similarity", similarity},
              {"images", images},
              {"captions", captions},
              {"i2t", {{"r1", i2t.r1}, {"r5", i2t.r5}, {"r10", i2t.r10}}},
              {"t2i", {{"r1", t2i.r1}, {"r5", t2i.r5}, {"r10", t2i.r10}}},
              {"rsum", rsum},
              {"cv_visual", cv_visual},
              {"cv_text", cv_text},
              {"log_cv_visual", FiniteOrNull(std::log(cv_visual))},
              {"log_cv_text", FiniteOrNull(std::log(cv_text))},
              {"slot_ablation", std::move(ablation_rows)},
              {"config_hash", config_hash}};
}

std::string RetrievalReport::ToCsv() const {
  std::ostringstream out;
  out << "similarity,images,captions,i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,rsum,"
         "cv_visual,cv_text,config_hash\n";
  out << similarity << ',' << images << ',' << captions << ',' << Fmt(i2t.r1) << ','
      << Fmt(i2t.r5) << ',' << Fmt(i2t.r10) << ',' << Fmt(t2i.r1) << ',' << Fmt(t2i.r5) << ','
      << Fmt(t2i.r10) << ',' << Fmt(rsum) << ',' << Fmt(cv_visual) << ',' << Fmt(cv_text) << ','
      << config_hash << '\n';
  return out.str();
}

std::string RetrievalReport::AblationCsv() const {
  std::ostringstream out;
  out << "label,visual_keep,text_keep,rsum,delta,config_hash\n";
  for (const SlotAblationRow& row : ablation) {
    out << row.label << ',' << MaskString(row.visual_keep) << ',' << MaskString(row.text_keep)
        << ',' << Fmt(row.rsum) << ',' << Fmt(row.delta) << ',' << config_hash << '\n';
  }
  return out.str();
}

EvalData EmbedSplit(const Model& m, const Corpus& corpus, Split split, size_t workers) {
  EvalData data;
  const std::vector<uint32_t> image_ids = corpus.ImagesIn(split);
  std::vector<uint32_t> caption_ids;
  for (uint32_t i : image_ids) {
    for (uint32_t c : corpus.images[i].captions) {
      caption_ids.push_back(c);
      data.caption_image.push_back(i);
    }
  }
  data.images = SetIndex::Build(Modality::kVisual, image_ids,
                                EmbedImages(m, corpus, image_ids, workers));
  data.captions = SetIndex::Build(Modality::kText, caption_ids,
                                  EmbedCaptions(m, corpus, caption_ids, workers));
  return data;
}

RetrievalReport ReportFromScores(const Matrix& scores, const EvalData& data) {
  const size_t n_img = data.images.size(), n_cap = data.captions.size();
  if (scores.rows() != n_img || scores.cols() != n_cap || data.caption_image.size() != n_cap) {
    throw ShapeError("report: score table " + ShapeString(scores) + " does not match the data");
  }
  std::vector<std::vector<uint32_t>> ranked(n_img), matches(n_img);
  for (size_t i = 0; i < n_img; ++i) {
    ranked[i] = RankScores(scores.row(i), data.captions.ids);
    for (size_t c = 0; c < n_cap; ++c) {
      if (data.caption_image[c] == data.images.ids[i]) matches[i].push_back(data.captions.ids[c]);
    }
  }
  RetrievalReport r;
  r.images = n_img;
  r.captions = n_cap;
  r.i2t = {RecallAtK(ranked, matches, 1), RecallAtK(ranked, matches, 5),
           RecallAtK(ranked, matches, 10)};
  std::vector<std::vector<uint32_t>> ranked_t(n_cap), matches_t(n_cap);
  std::vector<double> column(n_img);
  for (size_t c = 0; c < n_cap; ++c) {
    for (size_t i = 0; i < n_img; ++i) column[i] = scores(i, c);
    ranked_t[c] = RankScores(column, data.images.ids);
    matches_t[c] = {data.caption_image[c]};
  }
  r.t2i = {RecallAtK(ranked_t, matches_t, 1), RecallAtK(ranked_t, matches_t, 5),
           RecallAtK(ranked_t, matches_t, 10)};
  r.rsum = Rsum(r);
  r.cv_visual = MeanCircularVariance(data.images);
  r.cv_text = MeanCircularVariance(data.captions);
  return r;
}

RetrievalReport Evaluate(const EvalData& data, const SimilarityConfig& cfg, size_t workers) {
  RetrievalReport r = ReportFromScores(ScoreIndex(data.images, data.captions, cfg, workers), data);
  r.similarity = std::string(ToString(cfg.kind));
  return r;
}

SetIndex MaskIndex(const SetIndex& index, const std::vector<int>& keep) {
  if (std::none_of(keep.begin(), keep.end(), [](int v) { return v != 0; })) {
    throw ConfigError("slot mask keeps no element");
  }
  SetIndex out;
  out.modality = index.modality;
  out.ids = index.ids;
  std::vector<EmbeddingSet> sets;
  for (size_t i = 0; i < index.size(); ++i) {
    const size_t k = index.offsets[i + 1] - index.offsets[i];
    if (keep.size() != k) {
      throw ShapeError("slot mask has " + std::to_string(keep.size()) + " entries for sets of " +
                       std::to_string(k));
    }
    std::vector<size_t> rows;
    for (size_t r = 0; r < k; ++r)
      if (keep[r]) rows.push_back(index.offsets[i] + r);
    sets.push_back(EmbeddingSet{SelectRows(index.elems, rows)});
  }
  return SetIndex::Build(index.modality, index.ids, sets);
}

RetrievalReport SlotAblationEval(const EvalData& data, const std::vector<int>& visual_keep,
                                 const std::vector<int>& text_keep, const SimilarityConfig& cfg,
                                 size_t workers) {
  EvalData masked;
  masked.images = visual_keep.empty() ? data.images : MaskIndex(data.images, visual_keep);
  masked.captions = text_keep.empty() ? data.captions : MaskIndex(data.captions, text_keep);
  masked.caption_image = data.caption_image;
  return Evaluate(masked, cfg, workers);
}

std::vector<SlotAblationRow> SingleSlotAblation(const EvalData& data, const SimilarityConfig& cfg,
                                                double full_rsum, size_t workers) {
  std::vector<SlotAblationRow> rows;
  if (data.images.size() == 0) return rows;
  const size_t k = data.images.offsets[1] - data.images.offsets[0];
  for (size_t slot = 0; slot < k; ++slot) {
    SlotAblationRow row;
    row.label = "visual_slot_" + std::to_string(slot);
    row.visual_keep.assign(k, 0);
    row.visual_keep[slot] = 1;
    row.rsum = SlotAblationEval(data, row.visual_keep, {}, cfg, workers).rsum;
    row.delta = row.rsum - full_rsum;
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix EnsembleScores(const Matrix& a, const Matrix& b) {
  CheckSameShape(a, b, "ensemble");
  Matrix out = a + b;
  out *= 0.5;
  return out;
}

uint64_t OpCount(SimilarityKind kind, size_t k1, size_t k2, size_t dim) {
  const uint64_t pairs = static_cast<uint64_t>(k1) * k2;
  const uint64_t cosine = pairs * dim;
  switch (kind) {
    case SimilarityKind::kSmoothChamfer:
      // exp and accumulate in both directions, one log per row and column,
      // two final scalings.
      return cosine + 4 * pairs + k1 + k2 + 2;
    case SimilarityKind::kChamfer:
      // max in both directions, then the two averages.
      return cosine + 2 * pairs + k1 + k2 + 2;
    case SimilarityKind::kMil:
      return cosine + pairs;
    case SimilarityKind::kMp:
      // affine, sigmoid and accumulate per pair.
      return cosine + 3 * pairs;
  }
  return cosine;
}

}  // namespace divemb
