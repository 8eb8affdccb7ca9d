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

#ifndef DIVEMB_TAPE_H_
#define DIVEMB_TAPE_H_

#include <cstddef>
#include <functional>
#include <deque>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "divemb/matrix.h"

namespace divemb {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  size_t rows() const { return value().rows(); }
  size_t cols() const { return value().cols(); }
  size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  size_t id_ = 0;
};

// Reverse-mode differentiation record. Values are appended in forward order
// and Backward() visits them in exact reverse order. A tape has a single
// owner and must not be shared across threads while recording.
class Tape {
 public:
  // Receives the node's forward value and its adjoint; accumulates into the
  // adjoints of the node's inputs via Tape::AccumulateGrad.
  using BackwardFn =
      std::function<void(Tape& tape, const Matrix& value, const Matrix& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Differentiable input owned by the tape.
  Var Leaf(Matrix value);
  // Differentiable input that aliases `value`; the matrix must outlive the
  // tape and must not change while the tape is in use.
  Var Ref(const Matrix& value);
  // Non-differentiable input.
  Var Constant(Matrix value);
  // Non-differentiable alias of `value`; same lifetime rules as Ref().
  Var ConstRef(const Matrix& value);

  Var Record(Matrix value, std::vector<size_t> inputs, BackwardFn backward);

  const Matrix& value(size_t id) const;
  bool requires_grad(size_t id) const { return nodes_[id].requires_grad; }

  // Adds `delta` into the adjoint of node `id` (no-op for constants).
  void AccumulateGrad(size_t id, const Matrix& delta);
  // Mutable adjoint buffer, zero-initialised on first access.
  Matrix& MutableGrad(size_t id);
  // Adjoint of `v` after Backward(); zeros if nothing reached it.
  Matrix Grad(Var v) const;

  // Seeds the adjoints of the given outputs and propagates backwards.
  void Backward(std::span<const std::pair<Var, Matrix>> seeds);
  void Backward(Var out, const Matrix& seed);
  // Seeds a 1x1 output with 1.
  void Backward(Var scalar_out);

  size_t size() const { return nodes_.size(); }
  // Node ids visited by the most recent Backward(), in visit order.
  const std::vector<size_t>& last_backward_order() const { return visit_order_; }

 private:
  struct Node {
    Matrix owned;
    const Matrix* external = nullptr;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    const Matrix& value() const { return external ? *external : owned; }
  };
  std::deque<Node> nodes_;
  std::vector<size_t> visit_order_;
};

// Axis reduced (or normalized) over. kCols runs across the columns of each
// row, so every row is one slice; kRows runs down each column.
enum class Axis { kRows, kCols };

enum class GeluForm { kErf, kTanh };

// Differentiable primitives.
Var MatMul(Var a, Var b);
Var MatMulNT(Var a, Var b);  // a * b^T
Var Transpose(Var a);
Var Add(Var a, Var b);
Var Sub(Var a, Var b);
Var Mul(Var a, Var b);  // elementwise
Var Scale(Var a, double s);
Var AddScalar(Var a, double s);
Var AddRowBroadcast(Var m, Var row);
Var RepeatRows(Var row, size_t n);
Var Softmax(Var m, Axis axis);
// Column renormalization (x + eps/rows) / (column sum + eps). Columns sum to
// one exactly and an all-zero column maps to the uniform column.
Var NormalizeColumns(Var m, double eps);
Var LayerNorm(Var m, Var gain, Var bias, double eps);
Var Gelu(Var m, GeluForm form = GeluForm::kErf);
// Log-sum-exp per slice: rows x 1 for kCols, 1 x cols for kRows.
Var Lse(Var m, Axis axis);
// Max per slice with first-index tie-break; same output shape as Lse.
Var Max(Var m, Axis axis);
Var L2NormalizeRows(Var m, double eps);
Var Sigmoid(Var m);
Var Exp(Var m);
Var Relu(Var m);
Var Sum(Var m);   // 1 x 1
Var Mean(Var m);  // 1 x 1
Var Element(Var m, size_t r, size_t c);
Var ConcatRows(std::span<const Var> parts);
Var SliceRows(Var m, size_t begin, size_t end);
// Squared euclidean distances between rows of a and rows of b.
Var PairwiseSqDist(Var a, Var b);

// Plain-value counterparts used by the non-recording fast paths.
Matrix SoftmaxValue(const Matrix& m, Axis axis);
Matrix LseValue(const Matrix& m, Axis axis);
Matrix LayerNormValue(const Matrix& m, const Matrix& gain, const Matrix& bias,
                      double eps);
Matrix GeluValue(const Matrix& m, GeluForm form);
Matrix L2NormalizeRowsValue(const Matrix& m, double eps);
double GeluScalar(double x, GeluForm form);
double GeluDerivative(double x, GeluForm form);

}  // namespace divemb

#endif  // DIVEMB_TAPE_H_
