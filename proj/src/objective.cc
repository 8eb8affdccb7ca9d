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

#include "divemb/objective.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "divemb/error.h"
#include "divemb/log.h"
#include "divemb/tape.h"

namespace divemb {

void LossConfig::Validate() const {
  if (!(margin >= 0.0)) throw ConfigError("loss: margin must be >= 0");
  if (!(reg_weight >= 0.0)) throw ConfigError("loss: reg_weight must be >= 0");
  if (!(mmd_gamma > 0.0)) throw ConfigError("loss: mmd_gamma must be > 0");
  sim.Validate();
}

void LossBatch::Validate() const {
  if (caption_image.size() != captions.size()) {
    throw ShapeError("loss batch: pairing table has " + std::to_string(caption_image.size()) +
                     " entries for " + std::to_string(captions.size()) + " captions");
  }
  std::vector<size_t> count(images.size(), 0);
  for (size_t img : caption_image) {
    if (img >= images.size()) throw ShapeError("loss batch: caption paired with unknown image");
    ++count[img];
  }
  for (size_t i = 0; i < images.size(); ++i) {
    if (count[i] == 0) {
      throw ShapeError("loss batch: image " + std::to_string(i) + " has no caption");
    }
  }
}

Matrix BatchScores(const LossBatch& batch, const SimilarityConfig& sim) {
  return ScoreTable(batch.images, batch.captions, sim);
}

TripletResult TripletLoss(const LossBatch& batch, const LossConfig& cfg) {
  batch.Validate();
  cfg.Validate();
  const size_t n_img = batch.images.size();
  const size_t n_cap = batch.captions.size();
  TripletResult out;
  for (const EmbeddingSet& s : batch.images) out.d_images.emplace_back(s.size(), s.dim());
  for (const EmbeddingSet& s : batch.captions) out.d_captions.emplace_back(s.size(), s.dim());
  if (n_img < 2) {
    LogWarning("triplet loss: batch has a single image, no negatives");
    return out;
  }
  const Matrix scores = BatchScores(batch, cfg.sim);
  // weight(i, c) collects dL/ds(i, c).
  Matrix weight(n_img, n_cap);
  const double delta = cfg.margin;

  // Hardest caption per image and hardest image per caption; negatives
  // exclude every caption of the anchor image.
  std::vector<size_t> hard_cap(n_img, n_cap);
  for (size_t i = 0; i < n_img; ++i) {
    for (size_t c = 0; c < n_cap; ++c) {
      if (batch.caption_image[c] == i) continue;
      if (hard_cap[i] == n_cap || scores(i, c) > scores(i, hard_cap[i])) hard_cap[i] = c;
    }
  }
  std::vector<size_t> hard_img(n_cap, n_img);
  for (size_t c = 0; c < n_cap; ++c) {
    for (size_t i = 0; i < n_img; ++i) {
      if (batch.caption_image[c] == i) continue;
      if (hard_img[c] == n_img || scores(i, c) > scores(hard_img[c], c)) hard_img[c] = i;
    }
  }

  const auto hinge = [&](size_t pos_i, size_t pos_c, size_t neg_i, size_t neg_c) {
    const double h = delta + scores(neg_i, neg_c) - scores(pos_i, pos_c);
    if (h <= 0.0) return;
    out.loss += h;
    ++out.active_hinges;
    weight(neg_i, neg_c) += 1.0;
    weight(pos_i, pos_c) -= 1.0;
  };

  for (size_t c = 0; c < n_cap; ++c) {
    const size_t i = batch.caption_image[c];
    if (cfg.hardest_mining) {
      if (hard_cap[i] < n_cap) hinge(i, c, i, hard_cap[i]);
      if (hard_img[c] < n_img) hinge(i, c, hard_img[c], c);
      continue;
    }
    for (size_t c2 = 0; c2 < n_cap; ++c2) {
      if (batch.caption_image[c2] != i) hinge(i, c, i, c2);
    }
    for (size_t i2 = 0; i2 < n_img; ++i2) {
      if (i2 != i) hinge(i, c, i2, c);
    }
  }

  for (size_t i = 0; i < n_img; ++i) {
    for (size_t c = 0; c < n_cap; ++c) {
      const double w = weight(i, c);
      if (w == 0.0) continue;
      const auto [value, g] = SimilarityGrad(batch.images[i], batch.captions[c], cfg.sim);
      (void)value;
      out.d_images[i] += g.d_first * w;
      out.d_captions[c] += g.d_second * w;
      out.d_mp_a += w * g.d_mp_a;
      out.d_mp_b += w * g.d_mp_b;
    }
  }
  return out;
}

double DiversityReg(std::span<const Matrix> slots, std::vector<Matrix>* grads) {
  if (grads) grads->clear();
  if (slots.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(slots.size());
  double total = 0.0;
  for (const Matrix& x : slots) {
    Matrix g(x.rows(), x.cols());
    for (size_t a = 0; a < x.rows(); ++a) {
      for (size_t b = a + 1; b < x.rows(); ++b) {
        double d2 = 0.0;
        for (size_t j = 0; j < x.cols(); ++j) {
          const double d = x(a, j) - x(b, j);
          d2 += d * d;
        }
        const double e = std::exp(-2.0 * d2);
        // Ordered pairs (a, b) and (b, a).
        total += 2.0 * e * inv_n;
        if (grads) {
          for (size_t j = 0; j < x.cols(); ++j) {
            const double step = -8.0 * e * (x(a, j) - x(b, j)) * inv_n;
            g(a, j) += step;
            g(b, j) -= step;
          }
        }
      }
    }
    if (grads) grads->push_back(std::move(g));
  }
  return total;
}

namespace {

double SqDist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

// Kernel matrix exp(-gamma |a_i - b_j|^2) from the Gram matrix.
Matrix KernelMatrix(const Matrix& a, const Matrix& b, double gamma) {
  Matrix k = MatMulNT(a, b);
  std::vector<double> na(a.rows()), nb(b.rows());
  for (size_t i = 0; i < a.rows(); ++i) na[i] = Dot(a.row(i), a.row(i));
  for (size_t j = 0; j < b.rows(); ++j) nb[j] = Dot(b.row(j), b.row(j));
  for (size_t i = 0; i < a.rows(); ++i) {
    for (size_t j = 0; j < b.rows(); ++j) {
      k(i, j) = std::exp(-gamma * std::max(0.0, na[i] + nb[j] - 2.0 * k(i, j)));
    }
  }
  return k;
}

// Adds the gradient of sum_ij w_ij k(a_i, b_j) with respect to a:
// -2 gamma * (rowsum(w) a_i - w b).
void AddKernelGrad(const Matrix& w, const Matrix& a, const Matrix& b, double gamma, Matrix& ga) {
  const Matrix wb = MatMul(w, b);
  for (size_t i = 0; i < a.rows(); ++i) {
    double row = 0.0;
    for (double v : w.row(i)) row += v;
    for (size_t j = 0; j < a.cols(); ++j) ga(i, j) += -2.0 * gamma * (row * a(i, j) - wb(i, j));
  }
}

}  // namespace

double MmdUnbiased(const Matrix& x, const Matrix& y, double gamma, Matrix* dx, Matrix* dy) {
  if (x.cols() != y.cols()) {
    throw ShapeError("mmd: dimension mismatch " + ShapeString(x) + " vs " + ShapeString(y));
  }
  if (dx) *dx = Matrix(x.rows(), x.cols());
  if (dy) *dy = Matrix(y.rows(), y.cols());
  const size_t m = x.rows(), n = y.rows();
  if (m < 2 || n < 2) return 0.0;
  const double cxx = 1.0 / (static_cast<double>(m) * (m - 1));
  const double cyy = 1.0 / (static_cast<double>(n) * (n - 1));
  const double cxy = 2.0 / (static_cast<double>(m) * n);
  Matrix kxx = KernelMatrix(x, x, gamma);
  Matrix kyy = KernelMatrix(y, y, gamma);
  Matrix kxy = KernelMatrix(x, y, gamma);
  for (size_t i = 0; i < m; ++i) kxx(i, i) = 0.0;
  for (size_t i = 0; i < n; ++i) kyy(i, i) = 0.0;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (double v : kxx.values()) sxx += v;
  for (double v : kyy.values()) syy += v;
  for (double v : kxy.values()) sxy += v;
  const double value = cxx * sxx + cyy * syy - cxy * sxy;
  if (value <= 0.0) return 0.0;
  if (dx || dy) {
    // Symmetric within-modality terms count each pair twice.
    kxx *= 2.0 * cxx;
    kyy *= 2.0 * cyy;
    kxy *= -cxy;
    Matrix gx(m, x.cols()), gy(n, y.cols());
    AddKernelGrad(kxx, x, x, gamma, gx);
    AddKernelGrad(kxy, x, y, gamma, gx);
    AddKernelGrad(kyy, y, y, gamma, gy);
    AddKernelGrad(Transpose(kxy), y, x, gamma, gy);
    if (dx) *dx = std::move(gx);
    if (dy) *dy = std::move(gy);
  }
  return value;
}

double MedianHeuristicGamma(const Matrix& x, const Matrix& y) {
  const Matrix pooled = ConcatRows(std::vector<Matrix>{x, y});
  std::vector<double> d2;
  for (size_t a = 0; a < pooled.rows(); ++a)
    for (size_t b = a + 1; b < pooled.rows(); ++b) d2.push_back(SqDist(pooled.row(a), pooled.row(b)));
  if (d2.empty()) return 1.0;
  const auto mid = d2.begin() + static_cast<std::ptrdiff_t>(d2.size() / 2);
  std::nth_element(d2.begin(), mid, d2.end());
  return *mid > 0.0 ? 1.0 / *mid : 1.0;
}

namespace {

struct Pooled {
  Matrix normalized;
  std::vector<size_t> offsets;
};

Pooled Pool(std::span<const EmbeddingSet> sets) {
  Pooled p;
  std::vector<Matrix> parts;
  p.offsets.push_back(0);
  for (const EmbeddingSet& s : sets) {
    parts.push_back(L2NormalizeRowsValue(s.elems, kNormEps));
    p.offsets.push_back(p.offsets.back() + s.size());
  }
  p.normalized = ConcatRows(parts);
  return p;
}

std::vector<Matrix> Unpool(std::span<const EmbeddingSet> sets, const Pooled& p,
                           const Matrix& d_pooled) {
  std::vector<Matrix> out;
  for (size_t i = 0; i < sets.size(); ++i) {
    out.push_back(NormalizeRowsBackward(sets[i].elems,
                                        SliceRows(p.normalized, p.offsets[i], p.offsets[i + 1]),
                                        SliceRows(d_pooled, p.offsets[i], p.offsets[i + 1])));
  }
  return out;
}

}  // namespace

double MmdReg(std::span<const EmbeddingSet> images, std::span<const EmbeddingSet> captions,
              const LossConfig& cfg, std::vector<Matrix>* d_images,
              std::vector<Matrix>* d_captions) {
  if (images.empty() || captions.empty()) {
    throw ShapeError("mmd: both modalities must be non-empty");
  }
  const Pooled x = Pool(images);
  const Pooled y = Pool(captions);
  const double gamma =
      cfg.mmd_median_heuristic ? MedianHeuristicGamma(x.normalized, y.normalized) : cfg.mmd_gamma;
  Matrix dx, dy;
  const double value = MmdUnbiased(x.normalized, y.normalized, gamma, &dx, &dy);
  if (d_images) *d_images = Unpool(images, x, dx);
  if (d_captions) *d_captions = Unpool(captions, y, dy);
  return value;
}

std::pair<LossTerms, LossGradients> TotalLoss(const LossBatch& batch,
                                              std::span<const Matrix> image_slots,
                                              std::span<const Matrix> caption_slots,
                                              const LossConfig& cfg) {
  if (image_slots.size() != batch.images.size() ||
      caption_slots.size() != batch.captions.size()) {
    throw ShapeError("total loss: slot lists do not match the batch");
  }
  TripletResult tri = TripletLoss(batch, cfg);
  LossTerms terms;
  LossGradients g;
  terms.triplet = tri.loss;
  g.d_images_triplet = tri.d_images;
  g.d_captions_triplet = tri.d_captions;
  g.d_images = std::move(tri.d_images);
  g.d_captions = std::move(tri.d_captions);
  g.d_mp_a = tri.d_mp_a;
  g.d_mp_b = tri.d_mp_b;

  const double w = cfg.reg_weight;
  std::vector<Matrix> div_img, div_cap;
  terms.diversity = DiversityReg(image_slots, &div_img) + DiversityReg(caption_slots, &div_cap);
  for (Matrix& m : div_img) m *= w;
  for (Matrix& m : div_cap) m *= w;
  g.d_image_slots = std::move(div_img);
  g.d_caption_slots = std::move(div_cap);

  std::vector<Matrix> mmd_img, mmd_cap;
  terms.mmd = MmdReg(batch.images, batch.captions, cfg, &mmd_img, &mmd_cap);
  for (size_t i = 0; i < mmd_img.size(); ++i) g.d_images[i] += mmd_img[i] * w;
  for (size_t i = 0; i < mmd_cap.size(); ++i) g.d_captions[i] += mmd_cap[i] * w;

  terms.total = terms.triplet + w * terms.diversity + w * terms.mmd;
  return {terms, std::move(g)};
}

}  // namespace divemb
