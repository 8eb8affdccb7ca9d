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

#include "divemb/tape.h"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <vector>

#include "divemb/error.h"
#include "test_util.h"

namespace divemb {
namespace {

using testing::CentralDifference;
using testing::RandomMatrix;
using testing::RelErr;

// Probes a unary primitive with a random weighting of its output and compares
// the recorded adjoint against central differences of the same forward map.
double UnaryGradRelErr(const std::function<Var(Var)>& op, const Matrix& x,
                       std::mt19937_64& rng, double h = 1e-6, double floor = 1e-12) {
  Matrix weights;
  {
    Tape probe;
    Matrix y = op(probe.Leaf(x)).value();
    weights = RandomMatrix(rng, y.rows(), y.cols());
  }
  auto f = [&](const Matrix& in) {
    Tape t;
    const Matrix& y = op(t.Leaf(in)).value();
    return Dot(y.values(), weights.values());
  };
  Tape t;
  Var in = t.Leaf(x);
  t.Backward(op(in), weights);
  return RelErr(t.Grad(in), CentralDifference(f, x, h), floor);
}

// Relative error is only meaningful where the adjoint is not vanishing; the
// floor bounds the absolute error at 1e-10 for near-zero adjoints.
constexpr double kPropertyFloor = 1e-4;

TEST(MatMulTest, IdentityLeavesMatrixUnchanged) {
  Tape t;
  Matrix m{{1.5, -2.0}, {0.25, 4.0}};
  EXPECT_EQ(MatMul(t.Leaf(Matrix::Identity(2)), t.Leaf(m)).value(), m);
}

TEST(MatMulTest, HandExpandedProduct) {
  Tape t;
  Var out = MatMul(t.Leaf(Matrix{{1, 2}, {3, 4}}), t.Leaf(Matrix{{0}, {1}}));
  EXPECT_EQ(out.value(), (Matrix{{2}, {4}}));
}

TEST(MatMulTest, DimensionMismatchIsShapeError) {
  Tape t;
  EXPECT_THROW(MatMul(t.Leaf(Matrix(2, 3)), t.Leaf(Matrix(2, 3))), ShapeError);
}

TEST(MatMulTest, AdjointMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const Matrix a = RandomMatrix(rng, 5, 3);
  const Matrix b = RandomMatrix(rng, 3, 4);
  const Matrix w = RandomMatrix(rng, 5, 4);
  Tape t;
  Var va = t.Leaf(a), vb = t.Leaf(b);
  t.Backward(MatMul(va, vb), w);
  auto fa = [&](const Matrix& x) { return Dot(MatMul(x, b).values(), w.values()); };
  auto fb = [&](const Matrix& x) { return Dot(MatMul(a, x).values(), w.values()); };
  EXPECT_LT(RelErr(t.Grad(va), CentralDifference(fa, a, 1e-6)), 1e-8);
  EXPECT_LT(RelErr(t.Grad(vb), CentralDifference(fb, b, 1e-6)), 1e-8);
}

TEST(SoftmaxTest, UniformRow) {
  Tape t;
  EXPECT_EQ(Softmax(t.Leaf(Matrix{{0, 0}}), Axis::kCols).value(), (Matrix{{0.5, 0.5}}));
}

TEST(SoftmaxTest, LargeLogitsDoNotOverflow) {
  Tape t;
  EXPECT_EQ(Softmax(t.Leaf(Matrix{{1000, 1000}}), Axis::kCols).value(),
            (Matrix{{0.5, 0.5}}));
}

TEST(SoftmaxTest, SlicesSumToOne) {
  Tape t;
  const Matrix y = Softmax(t.Leaf(Matrix{{1, 2}, {3, 0}}), Axis::kCols).value();
  for (size_t i = 0; i < 2; ++i) EXPECT_NEAR(y(i, 0) + y(i, 1), 1.0, 1e-12);
  EXPECT_NEAR(y(0, 1), std::exp(2.0) / (std::exp(1.0) + std::exp(2.0)), 1e-15);
}

TEST(SoftmaxTest, RandomSlicesAreDistributions) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix m = RandomMatrix(rng, 1 + trial % 5, 1 + trial % 7, 10.0);
    for (Axis axis : {Axis::kRows, Axis::kCols}) {
      const Matrix y = SoftmaxValue(m, axis);
      const size_t slices = axis == Axis::kCols ? y.rows() : y.cols();
      for (size_t s = 0; s < slices; ++s) {
        double sum = 0.0;
        const size_t len = axis == Axis::kCols ? y.cols() : y.rows();
        for (size_t k = 0; k < len; ++k) {
          const double v = axis == Axis::kCols ? y(s, k) : y(k, s);
          EXPECT_GE(v, 0.0);
          EXPECT_LE(v, 1.0);
          sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
    }
  }
}

TEST(LayerNormTest, ConstantRowMapsToZero) {
  Tape t;
  Var y = LayerNorm(t.Leaf(Matrix{{3, 3, 3, 3}}), t.Leaf(Matrix(1, 4, 1.0)),
                    t.Leaf(Matrix(1, 4, 0.0)), 1e-5);
  for (double v : y.value().values()) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_EQ(v, 0.0);
  }
}

TEST(LayerNormTest, NormalizedRowIsFixedPoint) {
  Tape t;
  Var y = LayerNorm(t.Leaf(Matrix{{1, -1}}), t.Leaf(Matrix(1, 2, 1.0)),
                    t.Leaf(Matrix(1, 2, 0.0)), 1e-15);
  EXPECT_NEAR(y.value()(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(y.value()(0, 1), -1.0, 1e-12);
}

TEST(LayerNormTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  const Matrix x = RandomMatrix(rng, 3, 8);
  const Matrix gain = RandomMatrix(rng, 1, 8);
  const Matrix bias = RandomMatrix(rng, 1, 8);
  EXPECT_LT(UnaryGradRelErr(
                [&](Var v) {
                  Tape& t = *v.tape();
                  return LayerNorm(v, t.Constant(gain), t.Constant(bias), 1e-5);
                },
                x, rng),
            1e-7);
  const Matrix w = RandomMatrix(rng, 3, 8);
  Tape t;
  Var vg = t.Leaf(gain), vb = t.Leaf(bias);
  t.Backward(LayerNorm(t.Constant(x), vg, vb, 1e-5), w);
  auto fg = [&](const Matrix& g) {
    return Dot(LayerNormValue(x, g, bias, 1e-5).values(), w.values());
  };
  auto fb = [&](const Matrix& b) {
    return Dot(LayerNormValue(x, gain, b, 1e-5).values(), w.values());
  };
  EXPECT_LT(RelErr(t.Grad(vg), CentralDifference(fg, gain, 1e-6)), 1e-7);
  EXPECT_LT(RelErr(t.Grad(vb), CentralDifference(fb, bias, 1e-6)), 1e-7);
}

// Standard normal CDF from the Maclaurin series of erf in long double.
long double PhiSeries(long double x) {
  const long double z = x / std::sqrt(2.0L);
  long double term = z, sum = z;
  for (int n = 1; n < 60; ++n) {
    term *= -z * z / n;
    sum += term / (2 * n + 1);
  }
  const long double erf = 2.0L / std::sqrt(3.14159265358979323846264338327950288L) * sum;
  return 0.5L * (1.0L + erf);
}

TEST(GeluTest, ZeroAndAsymptotes) {
  for (GeluForm form : {GeluForm::kErf, GeluForm::kTanh}) {
    EXPECT_EQ(GeluScalar(0.0, form), 0.0);
    EXPECT_NEAR(GeluScalar(20.0, form), 20.0, 1e-9);
    EXPECT_NEAR(GeluScalar(-20.0, form), 0.0, 1e-9);
  }
}

TEST(GeluTest, ExactFormAtOneMatchesSeriesOracle) {
  const double oracle = static_cast<double>(PhiSeries(1.0L));
  EXPECT_NEAR(GeluScalar(1.0, GeluForm::kErf), oracle, 1e-15);
  EXPECT_NEAR(GeluScalar(1.0, GeluForm::kErf), 0.8412, 1e-3);
  EXPECT_NEAR(GeluScalar(1.0, GeluForm::kTanh), 0.8412, 1e-3);
}

TEST(LseTest, KnownValues) {
  Tape t;
  EXPECT_NEAR(Lse(t.Leaf(Matrix{{0, 0}}), Axis::kCols).value()(0, 0), std::log(2.0), 1e-15);
  EXPECT_EQ(Lse(t.Leaf(Matrix{{-3.25}}), Axis::kCols).value()(0, 0), -3.25);
  const double big = Lse(t.Leaf(Matrix{{1000, 999}}), Axis::kCols).value()(0, 0);
  EXPECT_TRUE(std::isfinite(big));
  EXPECT_NEAR(big, 1000.0 + std::log1p(std::exp(-1.0)), 1e-12);
}

TEST(LseTest, BoundedByMaxAndMaxPlusLogLength) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const size_t n = 1 + trial % 9;
    const Matrix v = RandomMatrix(rng, 1, n, 5.0);
    const double lse = LseValue(v, Axis::kCols)(0, 0);
    const double mx = *std::max_element(v.values().begin(), v.values().end());
    EXPECT_GE(lse, mx);
    EXPECT_LE(lse, mx + std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST(L2NormalizeTest, KnownValues) {
  Tape t;
  const Matrix y = L2NormalizeRows(t.Leaf(Matrix{{3, 4}, {0, 0}}), 1e-12).value();
  EXPECT_NEAR(y(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(y(0, 1), 0.8, 1e-15);
  EXPECT_EQ(y(1, 0), 0.0);
  EXPECT_EQ(y(1, 1), 0.0);
}

TEST(L2NormalizeTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  EXPECT_LT(UnaryGradRelErr([](Var v) { return L2NormalizeRows(v, 1e-12); },
                            RandomMatrix(rng, 4, 6), rng),
            1e-7);
}

// Every differentiable primitive against central differences on 100 random
// shapes.
TEST(PrimitiveProperty, AdjointsMatchFiniteDifferences) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 6);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t r = dim(rng), c = dim(rng), k = dim(rng);
    const Matrix x = RandomMatrix(rng, r, c);
    const Matrix other = RandomMatrix(rng, c, k);
    const Matrix same = RandomMatrix(rng, r, c);
    const Matrix row = RandomMatrix(rng, 1, c);
    const Matrix left = RandomMatrix(rng, k, r);
    const Matrix positive = [&] {
      Matrix p = x;
      for (double& v : p.values()) v = 0.1 + std::abs(v);
      return p;
    }();
    std::vector<std::pair<const char*, std::function<Var(Var)>>> ops = {
        {"matmul", [&](Var v) { return MatMul(v, v.tape()->Constant(other)); }},
        {"matmul_left", [&](Var v) { return MatMul(v.tape()->Constant(left), v); }},
        {"matmul_nt", [&](Var v) { return MatMulNT(v, v.tape()->Constant(same)); }},
        {"transpose", [](Var v) { return Transpose(v); }},
        {"add", [&](Var v) { return Add(v, v.tape()->Constant(same)); }},
        {"sub", [&](Var v) { return Sub(v.tape()->Constant(same), v); }},
        {"mul", [&](Var v) { return Mul(v, v.tape()->Constant(same)); }},
        {"mul_self", [](Var v) { return Mul(v, v); }},
        {"scale", [](Var v) { return Scale(v, -1.7); }},
        {"add_row", [&](Var v) { return AddRowBroadcast(v, v.tape()->Constant(row)); }},
        {"softmax_cols", [](Var v) { return Softmax(v, Axis::kCols); }},
        {"softmax_rows", [](Var v) { return Softmax(v, Axis::kRows); }},
        {"layer_norm",
         [&](Var v) {
           // Two-column layer norm is constant up to O(eps); skip.
           if (c < 3) return Sum(v);
           return LayerNorm(v, v.tape()->Constant(row), v.tape()->Constant(row), 1e-5);
         }},
        {"gelu_erf", [](Var v) { return Gelu(v, GeluForm::kErf); }},
        {"gelu_tanh", [](Var v) { return Gelu(v, GeluForm::kTanh); }},
        {"lse_cols", [](Var v) { return Lse(v, Axis::kCols); }},
        {"lse_rows", [](Var v) { return Lse(v, Axis::kRows); }},
        {"max_cols", [](Var v) { return Max(v, Axis::kCols); }},
        {"l2_normalize", [](Var v) { return L2NormalizeRows(v, 1e-12); }},
        {"sigmoid", [](Var v) { return Sigmoid(v); }},
        {"exp", [](Var v) { return Exp(v); }},
        {"sum", [](Var v) { return Sum(v); }},
        {"mean", [](Var v) { return Mean(v); }},
        {"element", [&](Var v) { return Element(v, r - 1, 0); }},
        {"slice", [&](Var v) { return SliceRows(v, 0, (r + 1) / 2); }},
        {"concat",
         [&](Var v) {
           std::vector<Var> parts{v, v.tape()->Constant(same), v};
           return ConcatRows(parts);
         }},
        {"pairwise_sq_dist", [&](Var v) { return PairwiseSqDist(v, v.tape()->Constant(same)); }},
        {"pairwise_self", [](Var v) { return PairwiseSqDist(v, v); }},
        {"repeat_rows", [&](Var v) { return RepeatRows(SliceRows(v, 0, 1), 3); }},
    };
    for (const auto& [name, op] : ops) {
      EXPECT_LT(UnaryGradRelErr(op, x, rng, 1e-6, kPropertyFloor), 1e-6) << name << " trial " << trial;
    }
    // A single-row column normalization is constant up to O(eps).
    if (r > 1)
      EXPECT_LT(UnaryGradRelErr([](Var v) { return NormalizeColumns(v, 1e-8); }, positive,
                              rng, 1e-6, kPropertyFloor),
              1e-6)
        << "normalize_columns trial " << trial;
    EXPECT_LT(UnaryGradRelErr([](Var v) { return Relu(v); }, x, rng, 1e-6, kPropertyFloor), 1e-6)
        << "relu trial " << trial;
  }
}

TEST(TapeTest, EmptyTapeBackwardIsNoOp) {
  Tape t;
  EXPECT_NO_THROW(t.Backward(std::span<const std::pair<Var, Matrix>>{}));
  EXPECT_TRUE(t.last_backward_order().empty());
}

TEST(TapeTest, IdentityGraphPassesSeedThrough) {
  Tape t;
  Var x = t.Leaf(Matrix{{1, 2, 3}});
  const Matrix seed{{0.5, -1.0, 2.0}};
  t.Backward(x, seed);
  EXPECT_EQ(t.Grad(x), seed);
}

TEST(TapeTest, UnusedValuesHaveZeroAdjoint) {
  Tape t;
  Var x = t.Leaf(Matrix{{1, 2}});
  Var unused = t.Leaf(Matrix{{3, 4}});
  Var y = Sum(Scale(x, 2.0));
  Var dead = Exp(unused);
  t.Backward(y);
  EXPECT_EQ(t.Grad(unused), Matrix(1, 2));
  EXPECT_EQ(t.Grad(dead), Matrix(1, 2));
  EXPECT_EQ(t.Grad(x), (Matrix{{2, 2}}));
}

TEST(TapeTest, BackwardVisitsInReverseRecordingOrder) {
  Tape t;
  Var x = t.Leaf(Matrix{{0.3, -0.2}});
  Var a = Exp(x);
  Var b = Mul(a, x);
  Var c = Sum(Add(a, b));
  t.Backward(c);
  const auto& order = t.last_backward_order();
  ASSERT_FALSE(order.empty());
  EXPECT_EQ(order.front(), c.id());
  for (size_t i = 1; i < order.size(); ++i) EXPECT_LT(order[i], order[i - 1]);
  EXPECT_TRUE(std::is_sorted(order.rbegin(), order.rend()));
}

TEST(TapeTest, ConstantsReceiveNoAdjoint) {
  Tape t;
  Var k = t.Constant(Matrix{{2.0}});
  Var x = t.Leaf(Matrix{{3.0}});
  t.Backward(Mul(k, x));
  EXPECT_EQ(t.Grad(k)(0, 0), 0.0);
  EXPECT_EQ(t.Grad(x)(0, 0), 2.0);
}

TEST(MatrixDumpTest, RoundTripsThroughFloatStorage) {
  std::mt19937_64 rng(1);
  Matrix m = RandomMatrix(rng, 3, 5);
  std::stringstream buf;
  WriteMatrix(buf, m);
  EXPECT_EQ(buf.str().substr(0, 4), "DIVM");
  EXPECT_EQ(buf.str().size(), 12u + 4u * 15u);
  Matrix back = ReadMatrix(buf);
  m.round_to_float();
  EXPECT_EQ(back, m);
}

TEST(MatrixDumpTest, BadMagicIsIoError) {
  std::stringstream buf("XXXX\0\0\0\0");
  EXPECT_THROW(ReadMatrix(buf), IoError);
}

}  // namespace
}  // namespace divemb
