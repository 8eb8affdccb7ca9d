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

#include "divemb/matrix.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "divemb/binary_io.h"
#include "divemb/error.h"

namespace divemb {

Matrix::Matrix(size_t rows, size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix data length does not match rows x cols");
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::Identity(size_t n) {
  Matrix m(n, n);
  for (size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::RowVector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Matrix& Matrix::operator+=(const Matrix& o) {
  CheckSameShape(*this, o, "add");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
  CheckSameShape(*this, o, "sub");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void Matrix::round_to_float() {
  for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

namespace {

// Four independent partial sums so the loop vectorizes; the summation order
// is fixed, so results are still reproducible.
double DotKernel(const double* a, const double* b, size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += a[k] * b[k];
    s1 += a[k + 1] * b[k + 1];
    s2 += a[k + 2] * b[k + 2];
    s3 += a[k + 3] * b[k + 3];
  }
  for (; k < n; ++k) s0 += a[k] * b[k];
  return (s0 + s2) + (s1 + s3);
}

}  // namespace

Matrix MatMul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + ShapeString(a) + " x " + ShapeString(b));
  }
  Matrix out(a.rows(), b.cols());
  const size_t n = a.cols(), m = b.cols();
  for (size_t i = 0; i < a.rows(); ++i) {
    double* o = out.data() + i * m;
    const double* ar = a.data() + i * n;
    for (size_t k = 0; k < n; ++k) {
      const double av = ar[k];
      if (av == 0.0) continue;
      const double* br = b.data() + k * m;
      for (size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

Matrix MatMulNT(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + ShapeString(a) + " x " + ShapeString(b) + "^T");
  }
  Matrix out(a.rows(), b.rows());
  const size_t n = a.cols();
  for (size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.data() + i * n;
    for (size_t j = 0; j < b.rows(); ++j) {
      const double* br = b.data() + j * n;
      out(i, j) = DotKernel(ar, br, n);
    }
  }
  return out;
}

void AddMatMulTN(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    throw ShapeError("matmul_tn: " + ShapeString(a) + "^T x " + ShapeString(b));
  }
  const size_t m = b.cols();
  for (size_t r = 0; r < a.rows(); ++r) {
    const double* ar = a.data() + r * a.cols();
    const double* br = b.data() + r * m;
    for (size_t i = 0; i < a.cols(); ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* o = out.data() + i * m;
      for (size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

Matrix MatMulTN(const Matrix& a, const Matrix& b) {
  Matrix out(a.cols(), b.cols());
  AddMatMulTN(a, b, out);
  return out;
}

Matrix Transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (size_t i = 0; i < m.rows(); ++i)
    for (size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

double FrobeniusNorm(const Matrix& m) { return Norm(m.values()); }

double Dot(std::span<const double> a, std::span<const double> b) {
  return DotKernel(a.data(), b.data(), a.size());
}

double Norm(std::span<const double> a) { return std::sqrt(Dot(a, a)); }

double MaxAbsDiff(const Matrix& a, const Matrix& b) {
  CheckSameShape(a, b, "max_abs_diff");
  double d = 0.0;
  for (size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

Matrix ConcatRows(std::span<const Matrix> parts) {
  size_t rows = 0;
  const size_t cols = parts.empty() ? 0 : parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
  return Matrix(rows, cols, std::move(data));
}

Matrix SliceRows(const Matrix& m, size_t begin, size_t end) {
  if (begin > end || end > m.rows()) throw ShapeError("slice_rows: out of range");
  return Matrix(end - begin, m.cols(),
                std::vector<double>(m.data() + begin * m.cols(), m.data() + end * m.cols()));
}

Matrix SelectRows(const Matrix& m, std::span<const size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows()) throw ShapeError("select_rows: out of range");
    std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

std::string ShapeString(const Matrix& m) {
  std::ostringstream s;
  s << m.rows() << "x" << m.cols();
  return s.str();
}

void CheckSameShape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + ShapeString(a) + " vs " +
                     ShapeString(b));
  }
}

void WriteMatrix(std::ostream& out, const Matrix& m) {
  binary::WriteMagic(out, "DIVM");
  binary::WriteU32(out, binary::CheckedU32(m.rows()));
  binary::WriteU32(out, binary::CheckedU32(m.cols()));
  for (double v : m.values()) binary::WriteF32(out, static_cast<float>(v));
  if (!out) throw IoError("failed writing matrix");
}

Matrix ReadMatrix(std::istream& in) {
  binary::ExpectMagic(in, "DIVM");
  const uint32_t rows = binary::ReadU32(in);
  const uint32_t cols = binary::ReadU32(in);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = binary::ReadF32(in);
  return m;
}

}  // namespace divemb
