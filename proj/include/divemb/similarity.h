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

#ifndef DIVEMB_SIMILARITY_H_
#define DIVEMB_SIMILARITY_H_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "divemb/matrix.h"
#include "divemb/tape.h"

namespace divemb {

// Guard below which a row norm is treated as zero.
inline constexpr double kNormEps = 1e-12;

// K x D embedding set. Elements are stored unnormalized; scoring normalizes.
struct EmbeddingSet {
  Matrix elems;

  size_t size() const { return elems.rows(); }
  size_t dim() const { return elems.cols(); }
};

enum class SimilarityKind { kSmoothChamfer, kChamfer, kMil, kMp };

std::string_view ToString(SimilarityKind kind);
// Accepts "sc"/"smooth-chamfer", "chamfer", "mil", "mp"; ConfigError otherwise.
SimilarityKind ParseSimilarityKind(std::string_view name);

struct SimilarityConfig {
  SimilarityKind kind = SimilarityKind::kSmoothChamfer;
  // Log-sum-exp temperature of smooth-Chamfer.
  double alpha = 16.0;
  // Match-probability affine map sigma(mp_a * c + mp_b).
  double mp_a = 1.0;
  double mp_b = 0.0;
  // Divide the match-probability sum by K1*K2. Off by default.
  bool mp_mean = false;

  void Validate() const;
};

// Gradient of a scalar set similarity with respect to the raw elements.
struct PairGrad {
  Matrix d_first;
  Matrix d_second;
  // Only populated for match probability.
  double d_mp_a = 0.0;
  double d_mp_b = 0.0;
};

struct CosineDiagnostics {
  size_t zero_rows_first = 0;
  size_t zero_rows_second = 0;
};

// Entry (i, j) is the cosine between row i of a and row j of b. Zero rows
// give cosine 0 and are counted in `diag` when provided.
Matrix CosineMatrix(const Matrix& a, const Matrix& b,
                    CosineDiagnostics* diag = nullptr);

double SmoothChamfer(const EmbeddingSet& s1, const EmbeddingSet& s2,
                     const SimilarityConfig& cfg);
double Chamfer(const EmbeddingSet& s1, const EmbeddingSet& s2);
double Mil(const EmbeddingSet& s1, const EmbeddingSet& s2);
double Mp(const EmbeddingSet& s1, const EmbeddingSet& s2, const SimilarityConfig& cfg);
double Similarity(const EmbeddingSet& s1, const EmbeddingSet& s2,
                  const SimilarityConfig& cfg);

std::pair<double, PairGrad> SmoothChamferGrad(const EmbeddingSet& s1,
                                              const EmbeddingSet& s2,
                                              const SimilarityConfig& cfg);
// Closed-form value and gradient for any kind.
std::pair<double, PairGrad> SimilarityGrad(const EmbeddingSet& s1,
                                           const EmbeddingSet& s2,
                                           const SimilarityConfig& cfg);

// Scoring on a precomputed K1 x K2 cosine matrix.
double ScoreFromCosine(const Matrix& cos, const SimilarityConfig& cfg);
// d score / d cos. For MP, also writes d score / d mp_a and d mp_b.
Matrix ScoreGradFromCosine(const Matrix& cos, const SimilarityConfig& cfg,
                           double* d_mp_a = nullptr, double* d_mp_b = nullptr);

// Scores every (a[i], b[j]) pair. Elements are normalized once and the cosine
// blocks come from one product per query set against all of b's elements.
Matrix ScoreTable(std::span<const EmbeddingSet> a, std::span<const EmbeddingSet> b,
                  const SimilarityConfig& cfg, size_t workers = 1);

// Pulls an adjoint on L2-normalized rows back to the raw rows.
Matrix NormalizeRowsBackward(const Matrix& raw, const Matrix& normalized,
                             const Matrix& d_normalized);

// Recording variant for end-to-end differentiation. For MP, `mp_ab` is an
// optional 1x2 [a, b] var; when invalid the config's constants are used.
Var SimilarityOnTape(Var s1, Var s2, const SimilarityConfig& cfg, Var mp_ab = {});

// "DIVS" dump: magic, u32 K, u32 D, f32 payload.
void WriteEmbeddingSet(std::ostream& out, const EmbeddingSet& s);
EmbeddingSet ReadEmbeddingSet(std::istream& in);

// Set corpus: u32 count, `count` DIVS blocks, then `count` u32 ids.
void WriteSetCorpus(std::ostream& out, std::span<const EmbeddingSet> sets,
                    std::span<const uint32_t> ids);
std::pair<std::vector<EmbeddingSet>, std::vector<uint32_t>> ReadSetCorpus(
    std::istream& in);

}  // namespace divemb

#endif  // DIVEMB_SIMILARITY_H_
