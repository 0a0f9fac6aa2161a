// Copyright 2026 The gpad Authors
//
// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gpad {

class WorkerPool;

struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const { return rows * cols; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Dense row-major matrix of doubles. Scalars are 1x1, column vectors n x 1.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix scalar(double v) { return Matrix(1, 1, v); }
    static Matrix column(std::span<const double> v);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    Shape shape() const { return {rows_, cols_}; }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    double& operator[](std::size_t k) { return data_[k]; }
    double operator[](std::size_t k) const { return data_[k]; }

    /// Value of a 1x1 matrix.
    double item() const;

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    bool all_finite() const;
    bool operator==(const Matrix&) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

namespace linalg {

Matrix transpose(const Matrix& a);
Matrix matmul(const Matrix& a, const Matrix& b, WorkerPool* pool = nullptr);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& a, double s);
Matrix lower(const Matrix& a);
Matrix diag_part(const Matrix& a);
double trace(const Matrix& a);
double frobenius(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

/// Cholesky factor of the symmetric part (A + A^T)/2. Returns nothing when a
/// pivot is not positive and finite.
std::optional<Matrix> try_cholesky(const Matrix& a);

enum class Triangle { lower, upper };

/// Solves op(T) X = B where T is read only on the given triangle and
/// op(T) = T or T^T.
Matrix triangular_solve(const Matrix& t, const Matrix& b, Triangle tri, bool transpose,
                        WorkerPool* pool = nullptr);

} // namespace linalg

} // namespace gpad
