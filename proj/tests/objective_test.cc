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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "divemb/log.h"
#include "test_util.h"

namespace divemb {
namespace {

using testing::CentralDifference;
using testing::RandomMatrix;
using testing::RelErr;

Matrix Unit2(double angle) {
  Matrix m(1, 2);
  m(0, 0) = std::cos(angle);
  m(0, 1) = std::sin(angle);
  return m;
}

// Singletons on the unit circle: s(i0,c0)=s(i1,c1)=0.5 and
// s(i0,c1)=s(i1,c0)=0.6.
LossBatch HandBatch() {
  const double g1 = -std::acos(0.6);
  const double beta = g1 + std::acos(0.5);
  LossBatch b;
  b.images = {{Unit2(0.0)}, {Unit2(beta)}};
  b.captions = {{Unit2(std::acos(0.5))}, {Unit2(g1)}};
  b.caption_image = {0, 1};
  return b;
}

LossBatch RandomBatch(std::mt19937_64& rng, size_t images, size_t caps_per_image, size_t k,
                      size_t dim) {
  LossBatch b;
  for (size_t i = 0; i < images; ++i) {
    b.images.push_back({RandomMatrix(rng, k, dim)});
    for (size_t c = 0; c < caps_per_image; ++c) {
      b.captions.push_back({RandomMatrix(rng, k, dim)});
      b.caption_image.push_back(i);
    }
  }
  return b;
}

LossConfig Config(SimilarityKind kind, double margin = 0.1) {
  LossConfig cfg;
  cfg.margin = margin;
  cfg.sim.kind = kind;
  return cfg;
}

TEST(TripletLossTest, HandExample) {
  const LossBatch b = HandBatch();
  const Matrix s = BatchScores(b, Config(SimilarityKind::kSmoothChamfer).sim);
  EXPECT_NEAR(s(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(s(1, 1), 0.5, 1e-12);
  EXPECT_NEAR(s(0, 1), 0.6, 1e-12);
  EXPECT_NEAR(s(1, 0), 0.6, 1e-12);
  const TripletResult r = TripletLoss(b, Config(SimilarityKind::kSmoothChamfer));
  EXPECT_NEAR(r.loss, 0.8, 1e-12);
  EXPECT_EQ(r.active_hinges, 4u);
}

TEST(TripletLossTest, InactiveHingeGivesZero) {
  LossBatch b = HandBatch();
  std::swap(b.captions[0], b.captions[1]);  // positives now score 0.6, negatives 0.5
  const TripletResult r = TripletLoss(b, Config(SimilarityKind::kSmoothChamfer, 0.05));
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.active_hinges, 0u);
  for (const Matrix& g : r.d_images) EXPECT_EQ(FrobeniusNorm(g), 0.0);
  for (const Matrix& g : r.d_captions) EXPECT_EQ(FrobeniusNorm(g), 0.0);
}

TEST(TripletLossTest, SingleImageWarnsAndReturnsZero) {
  std::mt19937_64 rng(3);
  SetWarningsEnabled(false);
  const TripletResult r = TripletLoss(RandomBatch(rng, 1, 3, 2, 4), Config(SimilarityKind::kChamfer));
  SetWarningsEnabled(true);
  EXPECT_EQ(r.loss, 0.0);
}

TEST(TripletLossTest, ShuffleInvariant) {
  std::mt19937_64 rng(5);
  for (SimilarityKind kind : {SimilarityKind::kSmoothChamfer, SimilarityKind::kChamfer,
                              SimilarityKind::kMil, SimilarityKind::kMp}) {
    const LossBatch b = RandomBatch(rng, 5, 2, 3, 6);
    const LossConfig cfg = Config(kind, 0.5);
    std::vector<size_t> img_perm(5), cap_perm(10);
    std::iota(img_perm.begin(), img_perm.end(), 0);
    std::iota(cap_perm.begin(), cap_perm.end(), 0);
    std::shuffle(img_perm.begin(), img_perm.end(), rng);
    std::shuffle(cap_perm.begin(), cap_perm.end(), rng);
    std::vector<size_t> new_pos(5);
    for (size_t i = 0; i < 5; ++i) new_pos[img_perm[i]] = i;
    LossBatch p;
    for (size_t i : img_perm) p.images.push_back(b.images[i]);
    for (size_t c : cap_perm) {
      p.captions.push_back(b.captions[c]);
      p.caption_image.push_back(new_pos[b.caption_image[c]]);
    }
    EXPECT_NEAR(TripletLoss(b, cfg).loss, TripletLoss(p, cfg).loss, 1e-12);
  }
}

TEST(TripletLossTest, SameImageCaptionsAreNeverNegatives) {
  // Image 0 has two captions; caption 1 scores 1.0 against image 0 but is a
  // positive, so it must not count as a negative for caption 0's anchor.
  LossBatch b;
  b.images = {{Unit2(0.0)}, {Unit2(M_PI)}};
  b.captions = {{Unit2(0.3)}, {Unit2(0.0)}, {Unit2(M_PI)}};
  b.caption_image = {0, 0, 1};
  const TripletResult r = TripletLoss(b, Config(SimilarityKind::kMil, 0.1));
  EXPECT_EQ(r.loss, 0.0);
}

TEST(TripletLossTest, TiesPickFirstNegative) {
  // Two equally hard negatives for image 0: the gradient lands on the first.
  LossBatch b;
  b.images = {{Unit2(0.0)}, {Unit2(2.0)}, {Unit2(-2.0)}};
  b.captions = {{Unit2(1.0)}, {Unit2(0.5)}, {Unit2(-0.5)}};
  b.caption_image = {0, 1, 2};
  LossConfig cfg = Config(SimilarityKind::kMil, 1.0);
  const TripletResult r = TripletLoss(b, cfg);
  const TripletResult again = TripletLoss(b, cfg);
  EXPECT_EQ(r.loss, again.loss);
  EXPECT_GT(FrobeniusNorm(r.d_captions[1]), FrobeniusNorm(r.d_captions[2]));
}

TEST(TripletLossTest, MiningAgreesWithSumForTwoImages) {
  std::mt19937_64 rng(8);
  const LossBatch b = RandomBatch(rng, 2, 1, 3, 5);
  LossConfig hard = Config(SimilarityKind::kSmoothChamfer, 2.0);
  LossConfig all = hard;
  all.hardest_mining = false;
  EXPECT_NEAR(TripletLoss(b, hard).loss, TripletLoss(b, all).loss, 1e-12);
}

// Rebuild the batch with one set's elements replaced.
double LossWith(const LossBatch& b, const LossConfig& cfg, bool image, size_t idx,
                const Matrix& x) {
  LossBatch p = b;
  (image ? p.images[idx] : p.captions[idx]).elems = x;
  return TripletLoss(p, cfg).loss;
}

TEST(TripletLossTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (SimilarityKind kind : {SimilarityKind::kSmoothChamfer, SimilarityKind::kMp}) {
    for (bool mining : {true, false}) {
      const LossBatch b = RandomBatch(rng, 3, 2, 3, 4);
      LossConfig cfg = Config(kind, 5.0);  // every hinge active
      cfg.hardest_mining = mining;
      cfg.sim.alpha = 4.0;
      cfg.sim.mp_a = 1.3;
      cfg.sim.mp_b = -0.2;
      const TripletResult r = TripletLoss(b, cfg);
      for (size_t i = 0; i < b.images.size(); ++i) {
        const Matrix fd = CentralDifference(
            [&](const Matrix& x) { return LossWith(b, cfg, true, i, x); }, b.images[i].elems, 1e-6);
        EXPECT_LT(RelErr(r.d_images[i], fd), 1e-6);
      }
      for (size_t c = 0; c < b.captions.size(); ++c) {
        const Matrix fd = CentralDifference(
            [&](const Matrix& x) { return LossWith(b, cfg, false, c, x); }, b.captions[c].elems,
            1e-6);
        EXPECT_LT(RelErr(r.d_captions[c], fd), 1e-6);
      }
      if (kind == SimilarityKind::kMp) {
        const double h = 1e-6;
        LossConfig up = cfg, down = cfg;
        up.sim.mp_a += h;
        down.sim.mp_a -= h;
        EXPECT_LT(RelErr(r.d_mp_a, (TripletLoss(b, up).loss - TripletLoss(b, down).loss) / (2 * h)),
                  1e-6);
        up = cfg;
        down = cfg;
        up.sim.mp_b += h;
        down.sim.mp_b -= h;
        EXPECT_LT(RelErr(r.d_mp_b, (TripletLoss(b, up).loss - TripletLoss(b, down).loss) / (2 * h)),
                  1e-6);
      }
    }
  }
}

size_t NonzeroRows(const Matrix& g) {
  size_t n = 0;
  for (size_t r = 0; r < g.rows(); ++r) {
    double s = 0;
    for (size_t c = 0; c < g.cols(); ++c) s += g(r, c) * g(r, c);
    n += s > 0.0;
  }
  return n;
}

TEST(TripletLossTest, MilSupervisionIsSparse) {
  std::mt19937_64 rng(13);
  const LossBatch b = RandomBatch(rng, 2, 1, 4, 6);
  // With two images every sample takes part in exactly two active pair
  // evaluations, so MIL reaches at most two of its four elements.
  const TripletResult mil = TripletLoss(b, Config(SimilarityKind::kMil, 10.0));
  const TripletResult sc = TripletLoss(b, Config(SimilarityKind::kSmoothChamfer, 10.0));
  for (size_t i = 0; i < 2; ++i) {
    EXPECT_LE(NonzeroRows(mil.d_images[i]), 2u);
    EXPECT_LE(NonzeroRows(mil.d_captions[i]), 2u);
    EXPECT_EQ(NonzeroRows(sc.d_images[i]), 4u);
    EXPECT_EQ(NonzeroRows(sc.d_captions[i]), 4u);
  }
  // One evaluation touches exactly one element of each set.
  SimilarityConfig cfg;
  cfg.kind = SimilarityKind::kMil;
  const auto [s, g] = SimilarityGrad(b.images[0], b.captions[1], cfg);
  EXPECT_EQ(NonzeroRows(g.d_first), 1u);
  EXPECT_EQ(NonzeroRows(g.d_second), 1u);
}

TEST(DiversityTest, Examples) {
  Matrix same(2, 3);
  same.fill(0.4);
  EXPECT_DOUBLE_EQ(DiversityReg(std::vector<Matrix>{same}), 2.0);

  Matrix far(2, 1);
  far(0, 0) = 0.0;
  far(1, 0) = std::sqrt(10.0);
  EXPECT_NEAR(DiversityReg(std::vector<Matrix>{far}), 2.0 * std::exp(-20.0), 1e-20);
  EXPECT_NEAR(DiversityReg(std::vector<Matrix>{far}), 4.1e-9, 1e-10);

  std::mt19937_64 rng(1);
  EXPECT_EQ(DiversityReg(std::vector<Matrix>{RandomMatrix(rng, 1, 5)}), 0.0);
  // Averaged over samples.
  EXPECT_DOUBLE_EQ(DiversityReg(std::vector<Matrix>{same, far}), 1.0 + std::exp(-20.0));
}

TEST(DiversityTest, DecreasesAsSlotsSeparate) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix x = RandomMatrix(rng, 4, 3, 0.3);
    const double before = DiversityReg(std::vector<Matrix>{x});
    // Push slot 0 away from every other slot along the direction from their mean.
    Matrix y = x;
    for (size_t c = 0; c < 3; ++c) {
      double mean = 0;
      for (size_t r = 1; r < 4; ++r) mean += x(r, c) / 3.0;
      y(0, c) += 0.5 * (x(0, c) - mean);
    }
    bool farther = true;
    for (size_t r = 1; r < 4; ++r) {
      double dx = 0, dy = 0;
      for (size_t c = 0; c < 3; ++c) {
        dx += (x(0, c) - x(r, c)) * (x(0, c) - x(r, c));
        dy += (y(0, c) - y(r, c)) * (y(0, c) - y(r, c));
      }
      farther = farther && dy > dx;
    }
    if (!farther) continue;
    EXPECT_LT(DiversityReg(std::vector<Matrix>{y}), before);
  }
}

TEST(DiversityTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  std::vector<Matrix> slots = {RandomMatrix(rng, 3, 4, 0.4), RandomMatrix(rng, 4, 4, 0.4)};
  std::vector<Matrix> grads;
  DiversityReg(slots, &grads);
  for (size_t s = 0; s < slots.size(); ++s) {
    const Matrix fd = CentralDifference(
        [&](const Matrix& x) {
          std::vector<Matrix> p = slots;
          p[s] = x;
          return DiversityReg(p);
        },
        slots[s], 1e-6);
    EXPECT_LT(RelErr(grads[s], fd), 1e-6);
  }
}

TEST(MmdTest, OppositePoles) {
  Matrix x(3, 2), y(4, 2);
  for (size_t r = 0; r < 3; ++r) x(r, 0) = 1.0;
  for (size_t r = 0; r < 4; ++r) y(r, 0) = -1.0;
  EXPECT_NEAR(MmdUnbiased(x, y, 0.5), 2.0 - 2.0 * std::exp(-2.0), 1e-12);
  EXPECT_NEAR(MmdUnbiased(x, y, 0.5), 1.729, 1e-3);
}

TEST(MmdTest, IdenticalMultisetsGiveZero) {
  std::mt19937_64 rng(6);
  const Matrix x = RandomMatrix(rng, 5, 3);
  Matrix dx, dy;
  EXPECT_EQ(MmdUnbiased(x, x, 0.5, &dx, &dy), 0.0);
  EXPECT_EQ(FrobeniusNorm(dx), 0.0);
  EXPECT_EQ(FrobeniusNorm(dy), 0.0);

  std::vector<EmbeddingSet> sets = {{RandomMatrix(rng, 2, 3)}, {RandomMatrix(rng, 2, 3)}};
  EXPECT_EQ(MmdReg(sets, sets, LossConfig{}), 0.0);
}

TEST(MmdTest, NonNegativeAndPermutationInvariant) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<EmbeddingSet> a, b;
    for (int i = 0; i < 4; ++i) {
      a.push_back({RandomMatrix(rng, 3, 4)});
      b.push_back({RandomMatrix(rng, 3, 4)});
    }
    LossConfig cfg;
    const double v = MmdReg(a, b, cfg);
    EXPECT_GE(v, 0.0);
    std::vector<size_t> perm = {2, 0, 3, 1};
    std::vector<EmbeddingSet> pa, pb;
    for (size_t p : perm) {
      pa.push_back(a[p]);
      pb.push_back(b[p]);
    }
    EXPECT_NEAR(MmdReg(pa, pb, cfg), v, 1e-12);
  }
}

TEST(MmdTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  // Two clusters far enough apart that the estimate stays positive.
  Matrix x = RandomMatrix(rng, 4, 3, 0.3), y = RandomMatrix(rng, 5, 3, 0.3);
  for (size_t r = 0; r < y.rows(); ++r) y(r, 0) += 1.5;
  for (double gamma : {0.5, 2.0}) {
    Matrix dx, dy;
    ASSERT_GT(MmdUnbiased(x, y, gamma, &dx, &dy), 0.0);
    EXPECT_LT(RelErr(dx, CentralDifference([&](const Matrix& p) { return MmdUnbiased(p, y, gamma); },
                                           x, 1e-6)),
              1e-6);
    EXPECT_LT(RelErr(dy, CentralDifference([&](const Matrix& p) { return MmdUnbiased(x, p, gamma); },
                                           y, 1e-6)),
              1e-6);
  }

  std::vector<EmbeddingSet> a = {{RandomMatrix(rng, 3, 4)}, {RandomMatrix(rng, 3, 4)}};
  std::vector<EmbeddingSet> b = a;
  for (EmbeddingSet& s : b)
    for (size_t r = 0; r < s.elems.rows(); ++r) s.elems(r, 0) += 3.0;
  {
    LossConfig cfg;
    std::vector<Matrix> da, db;
    ASSERT_GT(MmdReg(a, b, cfg, &da, &db), 0.0);
    for (size_t i = 0; i < a.size(); ++i) {
      const Matrix fd = CentralDifference(
          [&](const Matrix& p) {
            std::vector<EmbeddingSet> q = a;
            q[i].elems = p;
            return MmdReg(q, b, cfg);
          },
          a[i].elems, 1e-6);
      EXPECT_LT(RelErr(da[i], fd), 1e-6);
    }
  }
}

TEST(MmdTest, MedianHeuristicUsesPooledUnitElements) {
  std::mt19937_64 rng(14);
  std::vector<EmbeddingSet> a = {{RandomMatrix(rng, 3, 4)}, {RandomMatrix(rng, 2, 4)}};
  std::vector<EmbeddingSet> b = {{RandomMatrix(rng, 4, 4)}};
  auto pool = [](const std::vector<EmbeddingSet>& sets) {
    std::vector<Matrix> parts;
    for (const EmbeddingSet& s : sets) parts.push_back(s.elems);
    Matrix m = ConcatRows(parts);
    for (size_t r = 0; r < m.rows(); ++r) {
      double n = 0;
      for (size_t c = 0; c < m.cols(); ++c) n += m(r, c) * m(r, c);
      for (size_t c = 0; c < m.cols(); ++c) m(r, c) /= std::sqrt(n);
    }
    return m;
  };
  const Matrix x = pool(a), y = pool(b);
  LossConfig cfg;
  cfg.mmd_median_heuristic = true;
  const double expect = std::max(0.0, MmdUnbiased(x, y, MedianHeuristicGamma(x, y)));
  EXPECT_NEAR(MmdReg(a, b, cfg), expect, 1e-12);
  cfg.mmd_median_heuristic = false;
  EXPECT_NEAR(MmdReg(a, b, cfg), std::max(0.0, MmdUnbiased(x, y, 0.5)), 1e-12);
}

TEST(TotalLossTest, ZeroWeightEqualsTriplet) {
  std::mt19937_64 rng(10);
  const LossBatch b = RandomBatch(rng, 4, 2, 3, 5);
  std::vector<Matrix> islots, cslots;
  for (size_t i = 0; i < b.images.size(); ++i) islots.push_back(RandomMatrix(rng, 3, 5));
  for (size_t c = 0; c < b.captions.size(); ++c) cslots.push_back(RandomMatrix(rng, 3, 5));
  LossConfig cfg = Config(SimilarityKind::kSmoothChamfer, 0.5);
  cfg.reg_weight = 0.0;
  const auto [terms, grads] = TotalLoss(b, islots, cslots, cfg);
  const TripletResult tri = TripletLoss(b, cfg);
  EXPECT_EQ(terms.total, tri.loss);
  for (size_t i = 0; i < b.images.size(); ++i) EXPECT_EQ(MaxAbsDiff(grads.d_images[i], tri.d_images[i]), 0.0);
}

TEST(TotalLossTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  LossBatch b = RandomBatch(rng, 3, 2, 3, 4);
  std::vector<Matrix> islots, cslots;
  for (size_t i = 0; i < b.images.size(); ++i) islots.push_back(RandomMatrix(rng, 3, 4, 0.3));
  for (size_t c = 0; c < b.captions.size(); ++c) cslots.push_back(RandomMatrix(rng, 3, 4, 0.3));
  for (EmbeddingSet& s : b.captions)
    for (size_t r = 0; r < s.elems.rows(); ++r) s.elems(r, 0) += 2.0;
  LossConfig cfg = Config(SimilarityKind::kSmoothChamfer, 3.0);
  cfg.reg_weight = 0.5;  // large enough that the regularizers matter
  const auto [terms, grads] = TotalLoss(b, islots, cslots, cfg);
  ASSERT_TRUE(std::isfinite(terms.total));
  ASSERT_GT(terms.mmd, 0.0);
  EXPECT_NEAR(terms.total, terms.triplet + 0.5 * (terms.diversity + terms.mmd), 1e-12);

  auto total = [&](const LossBatch& bb, const std::vector<Matrix>& is, const std::vector<Matrix>& cs) {
    return TotalLoss(bb, is, cs, cfg).first.total;
  };
  for (size_t i = 0; i < b.images.size(); ++i) {
    const Matrix fd = CentralDifference(
        [&](const Matrix& x) {
          LossBatch p = b;
          p.images[i].elems = x;
          return total(p, islots, cslots);
        },
        b.images[i].elems, 1e-6);
    EXPECT_LT(RelErr(grads.d_images[i], fd), 1e-4);
    const Matrix fs = CentralDifference(
        [&](const Matrix& x) {
          std::vector<Matrix> p = islots;
          p[i] = x;
          return total(b, p, cslots);
        },
        islots[i], 1e-6);
    EXPECT_LT(RelErr(grads.d_image_slots[i], fs), 1e-4);
  }
  for (size_t c = 0; c < b.captions.size(); ++c) {
    const Matrix fd = CentralDifference(
        [&](const Matrix& x) {
          LossBatch p = b;
          p.captions[c].elems = x;
          return total(p, islots, cslots);
        },
        b.captions[c].elems, 1e-6);
    EXPECT_LT(RelErr(grads.d_captions[c], fd), 1e-4);
  }
}

TEST(LossConfigTest, RejectsNegativeValues) {
  LossConfig cfg;
  cfg.margin = -0.1;
  EXPECT_ANY_THROW(cfg.Validate());
  cfg = LossConfig{};
  cfg.reg_weight = -1.0;
  EXPECT_ANY_THROW(cfg.Validate());
}

}  // namespace
}  // namespace divemb
