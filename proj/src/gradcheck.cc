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

#include "divemb/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "divemb/error.h"
#include "divemb/model.h"
#include "divemb/objective.h"
#include "divemb/similarity.h"
#include "divemb/trainer.h"

namespace divemb {
namespace {

double RelErr(const Matrix& a, const Matrix& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

Matrix Gaussian(std::mt19937_64& rng, size_t rows, size_t cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = n(rng);
  return m;
}

template <class F>
Matrix CentralDifference(F&& f, Matrix x, double h) {
  Matrix g(x.rows(), x.cols());
  for (size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

void SimilarityRows(SimilarityKind kind, const GradcheckOptions& opt,
                    std::vector<GradcheckRow>& rows) {
  std::mt19937_64 rng(opt.seed + static_cast<uint64_t>(kind));
  std::uniform_int_distribution<size_t> pick_k(1, 4);
  const double alphas[] = {1.0, 16.0, 64.0};
  const std::string name(ToString(kind));
  GradcheckRow tape_row{name + " closed-form vs tape", 0, 0.0, 1e-6};
  GradcheckRow fd_row{name + " closed-form vs finite differences", 0, 0.0, 1e-6};
  for (size_t t = 0; t < opt.pairs; ++t) {
    SimilarityConfig cfg;
    cfg.kind = kind;
    cfg.alpha = alphas[t % 3];
    cfg.mp_a = 2.0;
    cfg.mp_b = -0.5;
    const EmbeddingSet a{Gaussian(rng, pick_k(rng), 8)};
    const EmbeddingSet b{Gaussian(rng, pick_k(rng), 8)};
    const auto [value, grad] = SimilarityGrad(a, b, cfg);
    (void)value;

    Tape tape;
    Var va = tape.Leaf(a.elems), vb = tape.Leaf(b.elems);
    tape.Backward(SimilarityOnTape(va, vb, cfg));
    tape_row.max_rel_err = std::max({tape_row.max_rel_err, RelErr(grad.d_first, tape.Grad(va)),
                                     RelErr(grad.d_second, tape.Grad(vb))});
    ++tape_row.cases;

    // The step shrinks with alpha to keep the truncation error of the
    // central difference below the tolerance.
    const double h = 1e-5 / std::sqrt(cfg.alpha);
    const Matrix fa = CentralDifference(
        [&](const Matrix& x) { return Similarity(EmbeddingSet{x}, b, cfg); }, a.elems, h);
    const Matrix fb = CentralDifference(
        [&](const Matrix& y) { return Similarity(a, EmbeddingSet{y}, cfg); }, b.elems, h);
    fd_row.max_rel_err = std::max(
        {fd_row.max_rel_err, RelErr(grad.d_first, fa), RelErr(grad.d_second, fb)});
    ++fd_row.cases;
  }
  rows.push_back(tape_row);
  rows.push_back(fd_row);
}

// A tiny corpus and a perturbed model so every parameter carries signal.
GradcheckRow EndToEndRow(const GradcheckOptions& opt) {
  SynthConfig data;
  data.concepts = 6;
  data.images = 4;
  data.test_images = 0;
  data.captions_per_image = 2;
  data.max_concepts = 2;
  data.regions = 3;
  data.tokens = 2;
  data.raw_dim = 6;
  data.val_fraction = 0.0;
  data.concept_cos_cap = 0.9;
  data.seed = opt.seed;
  const Corpus corpus = GenerateCorpus(data);

  SetPredictorConfig pred;
  pred.num_slots = 3;
  pred.iterations = 2;
  pred.dim = 6;
  pred.attn_dim = 5;
  pred.mlp_hidden = 7;
  pred.use_positional_encoding = true;
  LossConfig loss;
  loss.margin = 0.5;
  loss.reg_weight = 0.5;

  GradcheckRow row{"end-to-end predictor + loss vs finite differences", 0, 0.0, 1e-4};
  std::mt19937_64 rng(opt.seed);
  for (SimilarityKind kind : {SimilarityKind::kSmoothChamfer, SimilarityKind::kMp}) {
    loss.sim.kind = kind;
    Model model = InitModel(pred, data.raw_dim, loss.sim, opt.seed);
    std::normal_distribution<double> n(0.0, 0.3);
    model.ForEachParam([&](const std::string&, Matrix& p) {
      for (double& v : p.values()) v += n(rng);
    });
    const std::vector<uint32_t> ids = corpus.ImagesIn(Split::kTrain);
    const BatchGradients bg = ComputeBatchGradients(model, corpus, ids, loss);

    std::vector<Matrix*> params;
    std::vector<const Matrix*> grads;
    model.ForEachParam([&](const std::string&, Matrix& p) { params.push_back(&p); });
    bg.grads.ForEachParam([&](const std::string&, const Matrix& g) { grads.push_back(&g); });
    std::uniform_int_distribution<size_t> pick_param(0, params.size() - 1);
    Matrix analytic(1, opt.probes), numeric(1, opt.probes);
    for (size_t p = 0; p < opt.probes; ++p) {
      const size_t which = pick_param(rng);
      std::uniform_int_distribution<size_t> pick_entry(0, params[which]->size() - 1);
      const size_t e = pick_entry(rng);
      double& x = (*params[which])[e];
      const double orig = x;
      const double h = 1e-6;
      x = orig + h;
      const double up = BatchLoss(model, corpus, ids, loss);
      x = orig - h;
      const double down = BatchLoss(model, corpus, ids, loss);
      x = orig;
      numeric[p] = (up - down) / (2.0 * h);
      analytic[p] = (*grads[which])[e];
    }
    row.max_rel_err = std::max(row.max_rel_err, RelErr(analytic, numeric));
    row.cases += opt.probes;
  }
  return row;
}

}  // namespace

std::vector<GradcheckRow> RunGradcheck(const GradcheckOptions& options) {
  std::vector<SimilarityKind> kinds;
  bool end_to_end = options.only.empty();
  if (options.only.empty()) {
    kinds = {SimilarityKind::kSmoothChamfer, SimilarityKind::kChamfer, SimilarityKind::kMil,
             SimilarityKind::kMp};
  } else if (options.only == "end-to-end") {
    end_to_end = true;
  } else {
    kinds = {ParseSimilarityKind(options.only)};
  }
  std::vector<GradcheckRow> rows;
  for (SimilarityKind kind : kinds) SimilarityRows(kind, options, rows);
  if (end_to_end) rows.push_back(EndToEndRow(options));
  return rows;
}

}  // namespace divemb
