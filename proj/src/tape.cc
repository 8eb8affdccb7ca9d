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

#include <algorithm>
#include <cmath>
#include <numbers>

#include "divemb/error.h"

namespace divemb {

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::Leaf(Matrix value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::Ref(const Matrix& value) {
  Node n;
  n.external = &value;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::Constant(Matrix value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::ConstRef(const Matrix& value) {
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::Record(Matrix value, std::vector<size_t> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  for (size_t id : inputs) {
    if (id >= nodes_.size()) throw InternalError("tape: input recorded after output");
    n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Matrix& Tape::value(size_t id) const {
  if (id >= nodes_.size()) throw InternalError("tape: unknown node");
  return nodes_[id].value();
}

Matrix& Tape::MutableGrad(size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Matrix(n.value().rows(), n.value().cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::AccumulateGrad(size_t id, const Matrix& delta) {
  if (!nodes_[id].requires_grad) return;
  Matrix& g = MutableGrad(id);
  if (!g.same_shape(delta)) {
    throw InternalError("tape: adjoint shape " + ShapeString(delta) +
                        " does not match value " + ShapeString(g));
  }
  g += delta;
}

Matrix Tape::Grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (!n.has_grad) return Matrix(n.value().rows(), n.value().cols());
  return n.grad;
}

void Tape::Backward(std::span<const std::pair<Var, Matrix>> seeds) {
  for (const auto& [var, seed] : seeds) {
    if (var.tape() != this) throw InternalError("tape: seed from another tape");
    AccumulateGrad(var.id(), seed);
  }
  visit_order_.clear();
  for (size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    visit_order_.push_back(i);
    n.backward(*this, n.value(), n.grad);
  }
}

void Tape::Backward(Var out, const Matrix& seed) {
  std::pair<Var, Matrix> s{out, seed};
  Backward(std::span<const std::pair<Var, Matrix>>(&s, 1));
}

void Tape::Backward(Var scalar_out) {
  if (scalar_out.rows() != 1 || scalar_out.cols() != 1) {
    throw ShapeError("backward: implicit seed needs a 1x1 output");
  }
  Backward(scalar_out, Matrix(1, 1, 1.0));
}

namespace {

void CheckSameTape(Var a, Var b) {
  if (a.tape() != b.tape()) throw InternalError("vars recorded on different tapes");
}

Matrix ColumnSums(const Matrix& m) {
  Matrix s(1, m.cols());
  for (size_t i = 0; i < m.rows(); ++i)
    for (size_t j = 0; j < m.cols(); ++j) s(0, j) += m(i, j);
  return s;
}

}  // namespace

Var MatMul(Var a, Var b) {
  CheckSameTape(a, b);
  const size_t ia = a.id(), ib = b.id();
  return a.tape()->Record(
      MatMul(a.value(), b.value()), {ia, ib},
      [ia, ib](Tape& t, const Matrix&, const Matrix& g) {
        if (t.requires_grad(ia)) t.AccumulateGrad(ia, MatMulNT(g, t.value(ib)));
        if (t.requires_grad(ib)) AddMatMulTN(t.value(ia), g, t.MutableGrad(ib));
      });
}

Var MatMulNT(Var a, Var b) {
  CheckSameTape(a, b);
  const size_t ia = a.id(), ib = b.id();
  return a.tape()->Record(
      MatMulNT(a.value(), b.value()), {ia, ib},
      [ia, ib](Tape& t, const Matrix&, const Matrix& g) {
        if (t.requires_grad(ia)) t.AccumulateGrad(ia, MatMul(g, t.value(ib)));
        if (t.requires_grad(ib)) AddMatMulTN(g, t.value(ia), t.MutableGrad(ib));
      });
}

Var Transpose(Var a) {
  const size_t ia = a.id();
  return a.tape()->Record(Transpose(a.value()), {ia},
                          [ia](Tape& t, const Matrix&, const Matrix& g) {
                            t.AccumulateGrad(ia, Transpose(g));
                          });
}

Var Add(Var a, Var b) {
  CheckSameTape(a, b);
  CheckSameShape(a.value(), b.value(), "add");
  const size_t ia = a.id(), ib = b.id();
  return a.tape()->Record(a.value() + b.value(), {ia, ib},
                          [ia, ib](Tape& t, const Matrix&, const Matrix& g) {
                            t.AccumulateGrad(ia, g);
                            t.AccumulateGrad(ib, g);
                          });
}

Var Sub(Var a, Var b) {
  CheckSameTape(a, b);
  CheckSameShape(a.value(), b.value(), "sub");
  const size_t ia = a.id(), ib = b.id();
  return a.tape()->Record(a.value() - b.value(), {ia, ib},
                          [ia, ib](Tape& t, const Matrix&, const Matrix& g) {
                            t.AccumulateGrad(ia, g);
                            t.AccumulateGrad(ib, g * -1.0);
                          });
}

Var Mul(Var a, Var b) {
  CheckSameTape(a, b);
  CheckSameShape(a.value(), b.value(), "mul");
  Matrix out = a.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const size_t ia = a.id(), ib = b.id();
  return a.tape()->Record(std::move(out), {ia, ib},
                          [ia, ib](Tape& t, const Matrix&, const Matrix& g) {
                            const Matrix& av = t.value(ia);
                            const Matrix& bv = t.value(ib);
                            if (t.requires_grad(ia)) {
                              Matrix& ga = t.MutableGrad(ia);
                              for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                            }
                            if (t.requires_grad(ib)) {
                              Matrix& gb = t.MutableGrad(ib);
                              for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                            }
                          });
}

Var Scale(Var a, double s) {
  const size_t ia = a.id();
  return a.tape()->Record(a.value() * s, {ia},
                          [ia, s](Tape& t, const Matrix&, const Matrix& g) {
                            t.AccumulateGrad(ia, g * s);
                          });
}

Var AddScalar(Var a, double s) {
  Matrix out = a.value();
  for (double& v : out.values()) v += s;
  const size_t ia = a.id();
  return a.tape()->Record(std::move(out), {ia},
                          [ia](Tape& t, const Matrix&, const Matrix& g) {
                            t.AccumulateGrad(ia, g);
                          });
}

Var AddRowBroadcast(Var m, Var row) {
  CheckSameTape(m, row);
  if (row.rows() != 1 || row.cols() != m.cols()) {
    throw ShapeError("add_row_broadcast: " + ShapeString(m.value()) + " + " +
                     ShapeString(row.value()));
  }
  Matrix out = m.value();
  for (size_t i = 0; i < out.rows(); ++i)
    for (size_t j = 0; j < out.cols(); ++j) out(i, j) += row.value()(0, j);
  const size_t im = m.id(), ir = row.id();
  return m.tape()->Record(std::move(out), {im, ir},
                          [im, ir](Tape& t, const Matrix&, const Matrix& g) {
                            t.AccumulateGrad(im, g);
                            if (t.requires_grad(ir)) t.AccumulateGrad(ir, ColumnSums(g));
                          });
}

Var RepeatRows(Var row, size_t n) {
  if (row.rows() != 1) throw ShapeError("repeat_rows: expects a row vector");
  Matrix out(n, row.cols());
  for (size_t i = 0; i < n; ++i)
    std::copy(row.value().row(0).begin(), row.value().row(0).end(), out.row(i).begin());
  const size_t ir = row.id();
  return row.tape()->Record(std::move(out), {ir},
                            [ir](Tape& t, const Matrix&, const Matrix& g) {
                              t.AccumulateGrad(ir, ColumnSums(g));
                            });
}

Matrix SoftmaxValue(const Matrix& m, Axis axis) {
  Matrix out(m.rows(), m.cols());
  if (axis == Axis::kCols) {
    for (size_t i = 0; i < m.rows(); ++i) {
      auto r = m.row(i);
      const double mx = *std::max_element(r.begin(), r.end());
      double s = 0.0;
      for (size_t j = 0; j < m.cols(); ++j) s += (out(i, j) = std::exp(r[j] - mx));
      for (size_t j = 0; j < m.cols(); ++j) out(i, j) /= s;
    }
  } else {
    for (size_t j = 0; j < m.cols(); ++j) {
      double mx = m(0, j);
      for (size_t i = 1; i < m.rows(); ++i) mx = std::max(mx, m(i, j));
      double s = 0.0;
      for (size_t i = 0; i < m.rows(); ++i) s += (out(i, j) = std::exp(m(i, j) - mx));
      for (size_t i = 0; i < m.rows(); ++i) out(i, j) /= s;
    }
  }
  return out;
}

Var Softmax(Var m, Axis axis) {
  const size_t im = m.id();
  return m.tape()->Record(
      SoftmaxValue(m.value(), axis), {im},
      [im, axis](Tape& t, const Matrix& y, const Matrix& g) {
        Matrix dx(y.rows(), y.cols());
        if (axis == Axis::kCols) {
          for (size_t i = 0; i < y.rows(); ++i) {
            const double s = Dot(g.row(i), y.row(i));
            for (size_t j = 0; j < y.cols(); ++j) dx(i, j) = y(i, j) * (g(i, j) - s);
          }
        } else {
          for (size_t j = 0; j < y.cols(); ++j) {
            double s = 0.0;
            for (size_t i = 0; i < y.rows(); ++i) s += g(i, j) * y(i, j);
            for (size_t i = 0; i < y.rows(); ++i) dx(i, j) = y(i, j) * (g(i, j) - s);
          }
        }
        t.AccumulateGrad(im, dx);
      });
}

Var NormalizeColumns(Var m, double eps) {
  const Matrix& x = m.value();
  Matrix denom = ColumnSums(x);
  for (double& v : denom.values()) v += eps;
  const double smooth = x.rows() == 0 ? 0.0 : eps / static_cast<double>(x.rows());
  Matrix out(x.rows(), x.cols());
  for (size_t i = 0; i < x.rows(); ++i)
    for (size_t j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) + smooth) / denom(0, j);
  const size_t im = m.id();
  return m.tape()->Record(
      std::move(out), {im},
      [im, denom](Tape& t, const Matrix& y, const Matrix& g) {
        Matrix dx(y.rows(), y.cols());
        for (size_t j = 0; j < y.cols(); ++j) {
          double s = 0.0;
          for (size_t i = 0; i < y.rows(); ++i) s += g(i, j) * y(i, j);
          for (size_t i = 0; i < y.rows(); ++i) dx(i, j) = (g(i, j) - s) / denom(0, j);
        }
        t.AccumulateGrad(im, dx);
      });
}

namespace {

struct LayerNormStats {
  Matrix normalized;  // x-hat
  std::vector<double> inv_std;
};

LayerNormStats Normalize(const Matrix& x, double eps) {
  LayerNormStats st{Matrix(x.rows(), x.cols()), std::vector<double>(x.rows())};
  const double n = static_cast<double>(x.cols());
  for (size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    st.inv_std[i] = inv;
    for (size_t j = 0; j < x.cols(); ++j) st.normalized(i, j) = (r[j] - mean) * inv;
  }
  return st;
}

void CheckAffine(const Matrix& m, const Matrix& gain, const Matrix& bias) {
  if (gain.rows() != 1 || bias.rows() != 1 || gain.cols() != m.cols() ||
      bias.cols() != m.cols()) {
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(m.cols()));
  }
}

}  // namespace

Matrix LayerNormValue(const Matrix& m, const Matrix& gain, const Matrix& bias,
                      double eps) {
  CheckAffine(m, gain, bias);
  Matrix y = Normalize(m, eps).normalized;
  for (size_t i = 0; i < y.rows(); ++i)
    for (size_t j = 0; j < y.cols(); ++j) y(i, j) = y(i, j) * gain(0, j) + bias(0, j);
  return y;
}

Var LayerNorm(Var m, Var gain, Var bias, double eps) {
  CheckSameTape(m, gain);
  CheckSameTape(m, bias);
  CheckAffine(m.value(), gain.value(), bias.value());
  LayerNormStats st = Normalize(m.value(), eps);
  Matrix y = st.normalized;
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  for (size_t i = 0; i < y.rows(); ++i)
    for (size_t j = 0; j < y.cols(); ++j) y(i, j) = y(i, j) * gv(0, j) + bv(0, j);
  const size_t im = m.id(), ig = gain.id(), ib = bias.id();
  return m.tape()->Record(
      std::move(y), {im, ig, ib},
      [im, ig, ib, st = std::move(st)](Tape& t, const Matrix&, const Matrix& g) {
        const Matrix& xh = st.normalized;
        const size_t rows = g.rows(), cols = g.cols();
        if (t.requires_grad(ig) || t.requires_grad(ib)) {
          Matrix dg(1, cols), db(1, cols);
          for (size_t i = 0; i < rows; ++i)
            for (size_t j = 0; j < cols; ++j) {
              dg(0, j) += g(i, j) * xh(i, j);
              db(0, j) += g(i, j);
            }
          t.AccumulateGrad(ig, dg);
          t.AccumulateGrad(ib, db);
        }
        if (!t.requires_grad(im)) return;
        const Matrix& gain_v = t.value(ig);
        Matrix& dx = t.MutableGrad(im);
        const double n = static_cast<double>(cols);
        for (size_t i = 0; i < rows; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (size_t j = 0; j < cols; ++j) {
            const double dxh = g(i, j) * gain_v(0, j);
            m1 += dxh;
            m2 += dxh * xh(i, j);
          }
          m1 /= n;
          m2 /= n;
          for (size_t j = 0; j < cols; ++j) {
            const double dxh = g(i, j) * gain_v(0, j);
            dx(i, j) += st.inv_std[i] * (dxh - m1 - xh(i, j) * m2);
          }
        }
      });
}

double GeluScalar(double x, GeluForm form) {
  if (form == GeluForm::kErf) return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double GeluDerivative(double x, GeluForm form) {
  if (form == GeluForm::kErf) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
  }
  const double c = std::sqrt(2.0 / std::numbers::pi);
  const double th = std::tanh(c * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + th) +
         0.5 * x * (1.0 - th * th) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

Matrix GeluValue(const Matrix& m, GeluForm form) {
  Matrix y = m;
  for (double& v : y.values()) v = GeluScalar(v, form);
  return y;
}

Var Gelu(Var m, GeluForm form) {
  const size_t im = m.id();
  return m.tape()->Record(GeluValue(m.value(), form), {im},
                          [im, form](Tape& t, const Matrix&, const Matrix& g) {
                            const Matrix& x = t.value(im);
                            Matrix& dx = t.MutableGrad(im);
                            for (size_t i = 0; i < x.size(); ++i)
                              dx[i] += g[i] * GeluDerivative(x[i], form);
                          });
}

Matrix LseValue(const Matrix& m, Axis axis) {
  if (axis == Axis::kCols) {
    Matrix out(m.rows(), 1);
    for (size_t i = 0; i < m.rows(); ++i) {
      auto r = m.row(i);
      const double mx = *std::max_element(r.begin(), r.end());
      double s = 0.0;
      for (double v : r) s += std::exp(v - mx);
      out(i, 0) = mx + std::log(s);
    }
    return out;
  }
  Matrix out(1, m.cols());
  for (size_t j = 0; j < m.cols(); ++j) {
    double mx = m(0, j);
    for (size_t i = 1; i < m.rows(); ++i) mx = std::max(mx, m(i, j));
    double s = 0.0;
    for (size_t i = 0; i < m.rows(); ++i) s += std::exp(m(i, j) - mx);
    out(0, j) = mx + std::log(s);
  }
  return out;
}

Var Lse(Var m, Axis axis) {
  const size_t im = m.id();
  return m.tape()->Record(
      LseValue(m.value(), axis), {im},
      [im, axis](Tape& t, const Matrix&, const Matrix& g) {
        Matrix p = SoftmaxValue(t.value(im), axis);
        for (size_t i = 0; i < p.rows(); ++i)
          for (size_t j = 0; j < p.cols(); ++j)
            p(i, j) *= axis == Axis::kCols ? g(i, 0) : g(0, j);
        t.AccumulateGrad(im, p);
      });
}

Var Max(Var m, Axis axis) {
  const Matrix& x = m.value();
  const bool by_row = axis == Axis::kCols;
  const size_t slices = by_row ? x.rows() : x.cols();
  const size_t len = by_row ? x.cols() : x.rows();
  Matrix out = by_row ? Matrix(slices, 1) : Matrix(1, slices);
  std::vector<size_t> arg(slices);
  for (size_t s = 0; s < slices; ++s) {
    size_t best = 0;
    for (size_t k = 1; k < len; ++k) {
      const double v = by_row ? x(s, k) : x(k, s);
      const double b = by_row ? x(s, best) : x(best, s);
      if (v > b) best = k;
    }
    arg[s] = best;
    out[s] = by_row ? x(s, best) : x(best, s);
  }
  const size_t im = m.id();
  return m.tape()->Record(
      std::move(out), {im},
      [im, arg = std::move(arg), by_row](Tape& t, const Matrix&, const Matrix& g) {
        Matrix& dx = t.MutableGrad(im);
        for (size_t s = 0; s < arg.size(); ++s) {
          if (by_row) dx(s, arg[s]) += g[s];
          else dx(arg[s], s) += g[s];
        }
      });
}

Matrix L2NormalizeRowsValue(const Matrix& m, double eps) {
  Matrix y = m;
  for (size_t i = 0; i < y.rows(); ++i) {
    const double n = std::max(Norm(m.row(i)), eps);
    for (double& v : y.row(i)) v /= n;
  }
  return y;
}

Var L2NormalizeRows(Var m, double eps) {
  const size_t im = m.id();
  return m.tape()->Record(
      L2NormalizeRowsValue(m.value(), eps), {im},
      [im, eps](Tape& t, const Matrix& y, const Matrix& g) {
        const Matrix& x = t.value(im);
        Matrix& dx = t.MutableGrad(im);
        for (size_t i = 0; i < x.rows(); ++i) {
          const double n = Norm(x.row(i));
          if (n > eps) {
            const double gy = Dot(g.row(i), y.row(i));
            for (size_t j = 0; j < x.cols(); ++j)
              dx(i, j) += (g(i, j) - gy * y(i, j)) / n;
          } else {
            for (size_t j = 0; j < x.cols(); ++j) dx(i, j) += g(i, j) / eps;
          }
        }
      });
}

Var Sigmoid(Var m) {
  Matrix y = m.value();
  for (double& v : y.values()) v = 1.0 / (1.0 + std::exp(-v));
  const size_t im = m.id();
  return m.tape()->Record(std::move(y), {im},
                          [im](Tape& t, const Matrix& y, const Matrix& g) {
                            Matrix& dx = t.MutableGrad(im);
                            for (size_t i = 0; i < y.size(); ++i)
                              dx[i] += g[i] * y[i] * (1.0 - y[i]);
                          });
}

Var Exp(Var m) {
  Matrix y = m.value();
  for (double& v : y.values()) v = std::exp(v);
  const size_t im = m.id();
  return m.tape()->Record(std::move(y), {im},
                          [im](Tape& t, const Matrix& y, const Matrix& g) {
                            Matrix& dx = t.MutableGrad(im);
                            for (size_t i = 0; i < y.size(); ++i) dx[i] += g[i] * y[i];
                          });
}

Var Relu(Var m) {
  Matrix y = m.value();
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  const size_t im = m.id();
  return m.tape()->Record(std::move(y), {im},
                          [im](Tape& t, const Matrix&, const Matrix& g) {
                            const Matrix& x = t.value(im);
                            Matrix& dx = t.MutableGrad(im);
                            for (size_t i = 0; i < x.size(); ++i)
                              if (x[i] > 0.0) dx[i] += g[i];
                          });
}

Var Sum(Var m) {
  double s = 0.0;
  for (double v : m.value().values()) s += v;
  const size_t im = m.id();
  return m.tape()->Record(Matrix(1, 1, s), {im},
                          [im](Tape& t, const Matrix&, const Matrix& g) {
                            Matrix& dx = t.MutableGrad(im);
                            for (double& v : dx.values()) v += g[0];
                          });
}

Var Mean(Var m) {
  const double n = static_cast<double>(m.value().size());
  return Scale(Sum(m), 1.0 / n);
}

Var Element(Var m, size_t r, size_t c) {
  if (r >= m.rows() || c >= m.cols()) throw ShapeError("element: index out of range");
  const size_t im = m.id();
  return m.tape()->Record(Matrix(1, 1, m.value()(r, c)), {im},
                          [im, r, c](Tape& t, const Matrix&, const Matrix& g) {
                            t.MutableGrad(im)(r, c) += g[0];
                          });
}

Var ConcatRows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  std::vector<Matrix> values;
  std::vector<size_t> ids;
  for (Var p : parts) {
    CheckSameTape(parts.front(), p);
    values.push_back(p.value());
    ids.push_back(p.id());
  }
  Matrix out = ConcatRows(values);
  return parts.front().tape()->Record(
      std::move(out), ids, [ids](Tape& t, const Matrix&, const Matrix& g) {
        size_t offset = 0;
        for (size_t id : ids) {
          const size_t n = t.value(id).rows();
          if (t.requires_grad(id)) t.AccumulateGrad(id, SliceRows(g, offset, offset + n));
          offset += n;
        }
      });
}

Var SliceRows(Var m, size_t begin, size_t end) {
  const size_t im = m.id();
  return m.tape()->Record(SliceRows(m.value(), begin, end), {im},
                          [im, begin](Tape& t, const Matrix&, const Matrix& g) {
                            Matrix& dx = t.MutableGrad(im);
                            for (size_t i = 0; i < g.rows(); ++i)
                              for (size_t j = 0; j < g.cols(); ++j)
                                dx(begin + i, j) += g(i, j);
                          });
}

Var PairwiseSqDist(Var a, Var b) {
  CheckSameTape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) throw ShapeError("pairwise_sq_dist: dim mismatch");
  Matrix d(av.rows(), bv.rows());
  for (size_t i = 0; i < av.rows(); ++i)
    for (size_t j = 0; j < bv.rows(); ++j) {
      double s = 0.0;
      for (size_t k = 0; k < av.cols(); ++k) {
        const double diff = av(i, k) - bv(j, k);
        s += diff * diff;
      }
      d(i, j) = s;
    }
  const size_t ia = a.id(), ib = b.id();
  return a.tape()->Record(
      std::move(d), {ia, ib}, [ia, ib](Tape& t, const Matrix&, const Matrix& g) {
        const Matrix& x = t.value(ia);
        const Matrix& y = t.value(ib);
        Matrix dx(x.rows(), x.cols()), dy(y.rows(), y.cols());
        for (size_t i = 0; i < x.rows(); ++i)
          for (size_t j = 0; j < y.rows(); ++j) {
            const double w = 2.0 * g(i, j);
            if (w == 0.0) continue;
            for (size_t k = 0; k < x.cols(); ++k) {
              const double diff = x(i, k) - y(j, k);
              dx(i, k) += w * diff;
              dy(j, k) -= w * diff;
            }
          }
        t.AccumulateGrad(ia, dx);
        t.AccumulateGrad(ib, dy);
      });
}

}  // namespace divemb
