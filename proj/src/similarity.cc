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

#include "divemb/similarity.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "divemb/binary_io.h"
#include "divemb/error.h"
#include "divemb/parallel.h"

namespace divemb {

std::string_view ToString(SimilarityKind kind) {
  switch (kind) {
    case SimilarityKind::kSmoothChamfer: return "sc";
    case SimilarityKind::kChamfer: return "chamfer";
    case SimilarityKind::kMil: return "mil";
    case SimilarityKind::kMp: return "mp";
  }
  throw ConfigError("unknown similarity kind");
}

SimilarityKind ParseSimilarityKind(std::string_view name) {
  if (name == "sc" || name == "smooth-chamfer" || name == "smooth_chamfer")
    return SimilarityKind::kSmoothChamfer;
  if (name == "chamfer") return SimilarityKind::kChamfer;
  if (name == "mil") return SimilarityKind::kMil;
  if (name == "mp") return SimilarityKind::kMp;
  throw ConfigError("unknown similarity kind '" + std::string(name) + "'");
}

void SimilarityConfig::Validate() const {
  ToString(kind);
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw ConfigError("similarity alpha must be > 0");
  }
  if (!std::isfinite(mp_a) || !std::isfinite(mp_b)) {
    throw ConfigError("mp_a/mp_b must be finite");
  }
}

namespace {

void CheckDims(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("similarity: dimension mismatch " + ShapeString(a) + " vs " +
                     ShapeString(b));
  }
  if (a.rows() == 0 || b.rows() == 0) throw ShapeError("similarity: empty set");
}

size_t ZeroRows(const Matrix& m) {
  size_t n = 0;
  for (size_t i = 0; i < m.rows(); ++i)
    if (Norm(m.row(i)) <= kNormEps) ++n;
  return n;
}

void RequireKind(const SimilarityConfig& cfg, SimilarityKind kind) {
  if (cfg.kind != kind) {
    throw ConfigError("similarity config kind '" + std::string(ToString(cfg.kind)) +
                      "' used for '" + std::string(ToString(kind)) + "'");
  }
}

double Sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Matrix CosineMatrix(const Matrix& a, const Matrix& b, CosineDiagnostics* diag) {
  CheckDims(a, b);
  if (diag) {
    diag->zero_rows_first = ZeroRows(a);
    diag->zero_rows_second = ZeroRows(b);
  }
  return MatMulNT(L2NormalizeRowsValue(a, kNormEps), L2NormalizeRowsValue(b, kNormEps));
}

double ScoreFromCosine(const Matrix& c, const SimilarityConfig& cfg) {
  const size_t k1 = c.rows(), k2 = c.cols();
  switch (cfg.kind) {
    case SimilarityKind::kSmoothChamfer: {
      Matrix scaled = c * cfg.alpha;
      const Matrix row_lse = LseValue(scaled, Axis::kCols);
      const Matrix col_lse = LseValue(scaled, Axis::kRows);
      double rows = 0.0, cols = 0.0;
      for (double v : row_lse.values()) rows += v;
      for (double v : col_lse.values()) cols += v;
      return rows / (2.0 * cfg.alpha * k1) + cols / (2.0 * cfg.alpha * k2);
    }
    case SimilarityKind::kChamfer: {
      double rows = 0.0, cols = 0.0;
      for (size_t i = 0; i < k1; ++i) {
        double m = c(i, 0);
        for (size_t j = 1; j < k2; ++j) m = std::max(m, c(i, j));
        rows += m;
      }
      for (size_t j = 0; j < k2; ++j) {
        double m = c(0, j);
        for (size_t i = 1; i < k1; ++i) m = std::max(m, c(i, j));
        cols += m;
      }
      return rows / (2.0 * k1) + cols / (2.0 * k2);
    }
    case SimilarityKind::kMil:
      return *std::max_element(c.values().begin(), c.values().end());
    case SimilarityKind::kMp: {
      double s = 0.0;
      for (double v : c.values()) s += Sigmoid(cfg.mp_a * v + cfg.mp_b);
      return cfg.mp_mean ? s / static_cast<double>(k1 * k2) : s;
    }
  }
  throw ConfigError("unknown similarity kind");
}

Matrix ScoreGradFromCosine(const Matrix& c, const SimilarityConfig& cfg,
                           double* d_mp_a, double* d_mp_b) {
  const size_t k1 = c.rows(), k2 = c.cols();
  Matrix g(k1, k2);
  switch (cfg.kind) {
    case SimilarityKind::kSmoothChamfer: {
      // Sum of the row-wise and column-wise relative proximities.
      Matrix scaled = c * cfg.alpha;
      Matrix row_sm = SoftmaxValue(scaled, Axis::kCols);
      Matrix col_sm = SoftmaxValue(scaled, Axis::kRows);
      for (size_t i = 0; i < k1; ++i)
        for (size_t j = 0; j < k2; ++j)
          g(i, j) = row_sm(i, j) / (2.0 * k1) + col_sm(i, j) / (2.0 * k2);
      break;
    }
    case SimilarityKind::kChamfer: {
      for (size_t i = 0; i < k1; ++i) {
        size_t best = 0;
        for (size_t j = 1; j < k2; ++j)
          if (c(i, j) > c(i, best)) best = j;
        g(i, best) += 1.0 / (2.0 * k1);
      }
      for (size_t j = 0; j < k2; ++j) {
        size_t best = 0;
        for (size_t i = 1; i < k1; ++i)
          if (c(i, j) > c(best, j)) best = i;
        g(best, j) += 1.0 / (2.0 * k2);
      }
      break;
    }
    case SimilarityKind::kMil: {
      size_t best = 0;
      for (size_t i = 1; i < c.size(); ++i)
        if (c[i] > c[best]) best = i;
      g[best] = 1.0;
      break;
    }
    case SimilarityKind::kMp: {
      const double norm = cfg.mp_mean ? 1.0 / static_cast<double>(k1 * k2) : 1.0;
      double da = 0.0, db = 0.0;
      for (size_t i = 0; i < c.size(); ++i) {
        const double s = Sigmoid(cfg.mp_a * c[i] + cfg.mp_b);
        const double ds = s * (1.0 - s) * norm;
        g[i] = ds * cfg.mp_a;
        da += ds * c[i];
        db += ds;
      }
      if (d_mp_a) *d_mp_a = da;
      if (d_mp_b) *d_mp_b = db;
      break;
    }
  }
  return g;
}

Matrix ScoreTable(std::span<const EmbeddingSet> a, std::span<const EmbeddingSet> b,
                  const SimilarityConfig& cfg, size_t workers) {
  cfg.Validate();
  Matrix out(a.size(), b.size());
  if (a.empty() || b.empty()) return out;
  std::vector<size_t> offsets(b.size() + 1, 0);
  std::vector<Matrix> parts;
  for (size_t j = 0; j < b.size(); ++j) {
    offsets[j + 1] = offsets[j] + b[j].size();
    parts.push_back(L2NormalizeRowsValue(b[j].elems, kNormEps));
  }
  const Matrix index = ConcatRows(parts);
  ParallelFor(a.size(), workers, [&](size_t i) {
    if (a[i].dim() != index.cols()) {
      throw ShapeError("score table: dimension mismatch " + ShapeString(a[i].elems) + " vs " +
                       ShapeString(index));
    }
    const Matrix cos = MatMulNT(L2NormalizeRowsValue(a[i].elems, kNormEps), index);
    const size_t k1 = cos.rows();
    for (size_t j = 0; j < b.size(); ++j) {
      const size_t k2 = offsets[j + 1] - offsets[j];
      Matrix block(k1, k2);
      for (size_t r = 0; r < k1; ++r)
        for (size_t c = 0; c < k2; ++c) block(r, c) = cos(r, offsets[j] + c);
      out(i, j) = ScoreFromCosine(block, cfg);
    }
  });
  return out;
}

Matrix NormalizeRowsBackward(const Matrix& raw, const Matrix& normalized,
                             const Matrix& d_normalized) {
  Matrix dx(raw.rows(), raw.cols());
  for (size_t i = 0; i < raw.rows(); ++i) {
    const double n = Norm(raw.row(i));
    if (n > kNormEps) {
      const double gy = Dot(d_normalized.row(i), normalized.row(i));
      for (size_t j = 0; j < raw.cols(); ++j)
        dx(i, j) = (d_normalized(i, j) - gy * normalized(i, j)) / n;
    } else {
      for (size_t j = 0; j < raw.cols(); ++j) dx(i, j) = d_normalized(i, j) / kNormEps;
    }
  }
  return dx;
}

double SmoothChamfer(const EmbeddingSet& s1, const EmbeddingSet& s2,
                     const SimilarityConfig& cfg) {
  RequireKind(cfg, SimilarityKind::kSmoothChamfer);
  cfg.Validate();
  return ScoreFromCosine(CosineMatrix(s1.elems, s2.elems), cfg);
}

double Chamfer(const EmbeddingSet& s1, const EmbeddingSet& s2) {
  SimilarityConfig cfg;
  cfg.kind = SimilarityKind::kChamfer;
  return ScoreFromCosine(CosineMatrix(s1.elems, s2.elems), cfg);
}

double Mil(const EmbeddingSet& s1, const EmbeddingSet& s2) {
  SimilarityConfig cfg;
  cfg.kind = SimilarityKind::kMil;
  return ScoreFromCosine(CosineMatrix(s1.elems, s2.elems), cfg);
}

double Mp(const EmbeddingSet& s1, const EmbeddingSet& s2, const SimilarityConfig& cfg) {
  RequireKind(cfg, SimilarityKind::kMp);
  cfg.Validate();
  return ScoreFromCosine(CosineMatrix(s1.elems, s2.elems), cfg);
}

double Similarity(const EmbeddingSet& s1, const EmbeddingSet& s2,
                  const SimilarityConfig& cfg) {
  cfg.Validate();
  return ScoreFromCosine(CosineMatrix(s1.elems, s2.elems), cfg);
}

std::pair<double, PairGrad> SimilarityGrad(const EmbeddingSet& s1,
                                           const EmbeddingSet& s2,
                                           const SimilarityConfig& cfg) {
  cfg.Validate();
  CheckDims(s1.elems, s2.elems);
  const Matrix n1 = L2NormalizeRowsValue(s1.elems, kNormEps);
  const Matrix n2 = L2NormalizeRowsValue(s2.elems, kNormEps);
  const Matrix c = MatMulNT(n1, n2);
  PairGrad grad;
  const Matrix g = ScoreGradFromCosine(c, cfg, &grad.d_mp_a, &grad.d_mp_b);
  grad.d_first = NormalizeRowsBackward(s1.elems, n1, MatMul(g, n2));
  grad.d_second = NormalizeRowsBackward(s2.elems, n2, MatMulTN(g, n1));
  return {ScoreFromCosine(c, cfg), std::move(grad)};
}

std::pair<double, PairGrad> SmoothChamferGrad(const EmbeddingSet& s1,
                                              const EmbeddingSet& s2,
                                              const SimilarityConfig& cfg) {
  RequireKind(cfg, SimilarityKind::kSmoothChamfer);
  return SimilarityGrad(s1, s2, cfg);
}

Var SimilarityOnTape(Var s1, Var s2, const SimilarityConfig& cfg, Var mp_ab) {
  cfg.Validate();
  CheckDims(s1.value(), s2.value());
  Tape& tape = *s1.tape();
  Var c = MatMulNT(L2NormalizeRows(s1, kNormEps), L2NormalizeRows(s2, kNormEps));
  const double k1 = static_cast<double>(s1.rows());
  const double k2 = static_cast<double>(s2.rows());
  switch (cfg.kind) {
    case SimilarityKind::kSmoothChamfer: {
      Var scaled = Scale(c, cfg.alpha);
      Var rows = Scale(Sum(Lse(scaled, Axis::kCols)), 1.0 / (2.0 * cfg.alpha * k1));
      Var cols = Scale(Sum(Lse(scaled, Axis::kRows)), 1.0 / (2.0 * cfg.alpha * k2));
      return Add(rows, cols);
    }
    case SimilarityKind::kChamfer: {
      Var rows = Scale(Sum(Max(c, Axis::kCols)), 1.0 / (2.0 * k1));
      Var cols = Scale(Sum(Max(c, Axis::kRows)), 1.0 / (2.0 * k2));
      return Add(rows, cols);
    }
    case SimilarityKind::kMil:
      return Max(Max(c, Axis::kCols), Axis::kRows);
    case SimilarityKind::kMp: {
      Var logits;
      if (mp_ab.valid()) {
        // Broadcast the scalar parameters to the cosine shape.
        Var col_ones = tape.Constant(Matrix(c.rows(), 1, 1.0));
        Var row_ones = tape.Constant(Matrix(1, c.cols(), 1.0));
        Var a_full = MatMul(MatMul(col_ones, Element(mp_ab, 0, 0)), row_ones);
        Var b_full = MatMul(MatMul(col_ones, Element(mp_ab, 0, 1)), row_ones);
        logits = Add(Mul(c, a_full), b_full);
      } else {
        logits = AddScalar(Scale(c, cfg.mp_a), cfg.mp_b);
      }
      Var s = Sum(Sigmoid(logits));
      return cfg.mp_mean ? Scale(s, 1.0 / (k1 * k2)) : s;
    }
  }
  throw ConfigError("unknown similarity kind");
}

void WriteEmbeddingSet(std::ostream& out, const EmbeddingSet& s) {
  binary::WriteMagic(out, "DIVS");
  binary::WriteU32(out, binary::CheckedU32(s.elems.rows()));
  binary::WriteU32(out, binary::CheckedU32(s.elems.cols()));
  for (double v : s.elems.values()) binary::WriteF32(out, static_cast<float>(v));
  if (!out) throw IoError("failed writing embedding set");
}

EmbeddingSet ReadEmbeddingSet(std::istream& in) {
  binary::ExpectMagic(in, "DIVS");
  const uint32_t k = binary::ReadU32(in);
  const uint32_t d = binary::ReadU32(in);
  EmbeddingSet s{Matrix(k, d)};
  for (double& v : s.elems.values()) v = binary::ReadF32(in);
  return s;
}

void WriteSetCorpus(std::ostream& out, std::span<const EmbeddingSet> sets,
                    std::span<const uint32_t> ids) {
  if (sets.size() != ids.size()) throw ShapeError("set corpus: ids/sets length mismatch");
  binary::WriteU32(out, binary::CheckedU32(sets.size()));
  for (const auto& s : sets) WriteEmbeddingSet(out, s);
  for (uint32_t id : ids) binary::WriteU32(out, id);
  if (!out) throw IoError("failed writing set corpus");
}

std::pair<std::vector<EmbeddingSet>, std::vector<uint32_t>> ReadSetCorpus(
    std::istream& in) {
  const uint32_t n = binary::ReadU32(in);
  std::vector<EmbeddingSet> sets;
  sets.reserve(n);
  for (uint32_t i = 0; i < n; ++i) sets.push_back(ReadEmbeddingSet(in));
  std::vector<uint32_t> ids(n);
  for (auto& id : ids) id = binary::ReadU32(in);
  return {std::move(sets), std::move(ids)};
}

}  // namespace divemb
