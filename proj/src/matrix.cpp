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

#include "gpad/matrix.hpp"

#include "gpad/error.hpp"
#include "gpad/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace gpad {

std::string Shape::str() const
{
    return std::to_string(rows) + "x" + std::to_string(cols);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill)
{
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data))
{
    if (data_.size() != rows * cols) {
        throw ShapeError("matrix data length " + std::to_string(data_.size())
                         + " does not match shape " + Shape{rows, cols}.str());
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size())
{
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw ShapeError("ragged matrix literal");
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n)
{
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::column(std::span<const double> v)
{
    return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

double Matrix::item() const
{
    if (rows_ != 1 || cols_ != 1) {
        throw ShapeError("item() on a " + shape().str() + " matrix");
    }
    return data_[0];
}

bool Matrix::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

namespace linalg {

Matrix transpose(const Matrix& a)
{
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            t(j, i) = a(i, j);
        }
    }
    return t;
}

Matrix matmul(const Matrix& a, const Matrix& b, WorkerPool* pool)
{
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul of " + a.shape().str() + " and " + b.shape().str());
    }
    Matrix c(a.rows(), b.cols());
    const std::size_t inner = a.cols();
    const std::size_t n = b.cols();
    parallel_for(pool, a.rows(), inner * n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double* crow = c.row(i).data();
            for (std::size_t k = 0; k < inner; ++k) {
                const double aik = a(i, k);
                if (aik == 0.0) {
                    continue;
                }
                const double* brow = b.row(k).data();
                for (std::size_t j = 0; j < n; ++j) {
                    crow[j] += aik * brow[j];
                }
            }
        }
    });
    return c;
}

namespace {

void require_same(const Matrix& a, const Matrix& b, const char* what)
{
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + " of " + a.shape().str() + " and " + b.shape().str());
    }
}

} // namespace

Matrix add(const Matrix& a, const Matrix& b)
{
    require_same(a, b, "add");
    Matrix c = a;
    for (std::size_t k = 0; k < c.size(); ++k) {
        c[k] += b[k];
    }
    return c;
}

Matrix subtract(const Matrix& a, const Matrix& b)
{
    require_same(a, b, "subtract");
    Matrix c = a;
    for (std::size_t k = 0; k < c.size(); ++k) {
        c[k] -= b[k];
    }
    return c;
}

Matrix scaled(const Matrix& a, double s)
{
    Matrix c = a;
    for (auto& x : c.values()) {
        x *= s;
    }
    return c;
}

Matrix lower(const Matrix& a)
{
    Matrix c = a;
    for (std::size_t i = 0; i < c.rows(); ++i) {
        for (std::size_t j = i + 1; j < c.cols(); ++j) {
            c(i, j) = 0.0;
        }
    }
    return c;
}

Matrix diag_part(const Matrix& a)
{
    const std::size_t n = std::min(a.rows(), a.cols());
    Matrix d(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = a(i, i);
    }
    return d;
}

double trace(const Matrix& a)
{
    double t = 0.0;
    for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) {
        t += a(i, i);
    }
    return t;
}

double frobenius(const Matrix& a)
{
    double s = 0.0;
    for (double x : a.values()) {
        s += x * x;
    }
    return std::sqrt(s);
}

double max_abs_diff(const Matrix& a, const Matrix& b)
{
    require_same(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        m = std::max(m, std::abs(a[k] - b[k]));
    }
    return m;
}

std::optional<Matrix> try_cholesky(const Matrix& a)
{
    if (a.rows() != a.cols()) {
        throw ShapeError("cholesky of non-square " + a.shape().str());
    }
    const std::size_t n = a.rows();
    Matrix l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = 0.5 * (a(i, j) + a(j, i));
            const double* li = &l(i, 0);
            const double* lj = &l(j, 0);
            for (std::size_t k = 0; k < j; ++k) {
                s -= li[k] * lj[k];
            }
            if (i == j) {
                if (!(s > 0.0) || !std::isfinite(s)) {
                    return std::nullopt;
                }
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

Matrix triangular_solve(const Matrix& t, const Matrix& b, Triangle tri, bool transpose,
                        WorkerPool* pool)
{
    if (t.rows() != t.cols() || t.rows() != b.rows()) {
        throw ShapeError("triangular solve of " + t.shape().str() + " against " + b.shape().str());
    }
    const std::size_t n = t.rows();
    const std::size_t m = b.cols();
    // op(T) is lower triangular when (lower, no transpose) or (upper, transpose).
    const bool forward = (tri == Triangle::lower) != transpose;
    auto coef = [&](std::size_t i, std::size_t k) { return transpose ? t(k, i) : t(i, k); };

    Matrix x = b;
    parallel_for(pool, m, n * n / 2 + 1, [&](std::size_t c0, std::size_t c1) {
        const std::size_t w = c1 - c0;
        for (std::size_t step = 0; step < n; ++step) {
            const std::size_t i = forward ? step : n - 1 - step;
            double* xi = &x(i, c0);
            if (forward) {
                for (std::size_t k = 0; k < i; ++k) {
                    const double c = coef(i, k);
                    if (c == 0.0) {
                        continue;
                    }
                    const double* xk = &x(k, c0);
                    for (std::size_t j = 0; j < w; ++j) {
                        xi[j] -= c * xk[j];
                    }
                }
            } else {
                for (std::size_t k = i + 1; k < n; ++k) {
                    const double c = coef(i, k);
                    if (c == 0.0) {
                        continue;
                    }
                    const double* xk = &x(k, c0);
                    for (std::size_t j = 0; j < w; ++j) {
                        xi[j] -= c * xk[j];
                    }
                }
            }
            const double d = t(i, i);
            for (std::size_t j = 0; j < w; ++j) {
                xi[j] /= d;
            }
        }
    });
    return x;
}

} // namespace linalg

} // namespace gpad
