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

#ifndef DIVEMB_MATRIX_H_
#define DIVEMB_MATRIX_H_

#include <cstddef>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace divemb {

// Dense row-major matrix of doubles. Vectors are 1 x n matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(size_t rows, size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(size_t rows, size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix Identity(size_t n);
  static Matrix RowVector(std::span<const double> values);

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  double& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
  double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  std::span<double> row(size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v);
  bool all_finite() const;

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

  // Rounds every entry through 32-bit storage.
  void round_to_float();

  bool operator==(const Matrix& o) const = default;

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

// Plain (non-recording) kernels.
Matrix MatMul(const Matrix& a, const Matrix& b);
// a * b^T
Matrix MatMulNT(const Matrix& a, const Matrix& b);
// a^T * b
Matrix MatMulTN(const Matrix& a, const Matrix& b);
Matrix Transpose(const Matrix& m);
// Accumulates a^T * b into out (out must be a.cols x b.cols).
void AddMatMulTN(const Matrix& a, const Matrix& b, Matrix& out);

double FrobeniusNorm(const Matrix& m);
double Dot(std::span<const double> a, std::span<const double> b);
double Norm(std::span<const double> a);
double MaxAbsDiff(const Matrix& a, const Matrix& b);

// Stacks matrices with equal column counts on top of each other.
Matrix ConcatRows(std::span<const Matrix> parts);
Matrix SliceRows(const Matrix& m, size_t begin, size_t end);
Matrix SelectRows(const Matrix& m, std::span<const size_t> rows);

std::string ShapeString(const Matrix& m);
void CheckSameShape(const Matrix& a, const Matrix& b, const char* op);

// "DIVM" dump: magic, u32 rows, u32 cols, f32 payload, little-endian.
void WriteMatrix(std::ostream& out, const Matrix& m);
Matrix ReadMatrix(std::istream& in);

}  // namespace divemb

#endif  // DIVEMB_MATRIX_H_
