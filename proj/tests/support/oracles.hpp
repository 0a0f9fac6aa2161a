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

// Test-only reference computations. Nothing here calls into the library's
// differentiation or factorization code paths.

#pragma once

#include "gpad/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <vector>

namespace gpad::testing {

using Rng = std::mt19937_64;

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0)
{
    std::normal_distribution<double> normal;
    Matrix m(r, c);
    for (auto& x : m.values()) {
        x = scale * normal(rng);
    }
    return m;
}

inline Matrix random_uniform(Rng& rng, std::size_t r, std::size_t c, double lo, double hi)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (auto& x : m.values()) {
        x = u(rng);
    }
    return m;
}

/// Plain triple loop, independent of linalg::matmul.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b)
{
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                s += a(i, k) * b(k, j);
            }
            c(i, j) = s;
        }
    }
    return c;
}

inline Matrix naive_transpose(const Matrix& a)
{
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            t(j, i) = a(i, j);
        }
    }
    return t;
}

/// Well-conditioned SPD matrix: B B^T / n + shift I.
inline Matrix random_spd(Rng& rng, std::size_t n, double shift = 1.0)
{
    Matrix b = random_matrix(rng, n, n);
    Matrix a = naive_matmul(b, naive_transpose(b));
    for (auto& x : a.values()) {
        x /= static_cast<double>(n);
    }
    for (std::size_t i = 0; i < n; ++i) {
        a(i, i) += shift;
    }
    return a;
}

/// Lower-triangular matrix with diagonal in [1.5, 2.5].
inline Matrix random_lower(Rng& rng, std::size_t n)
{
    Matrix l = random_matrix(rng, n, n, 0.3);
    std::uniform_real_distribution<double> u(1.5, 2.5);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            l(i, j) = 0.0;
        }
        l(i, i) = u(rng);
    }
    return l;
}

/// Central finite differences of a scalar function of a matrix argument.
inline Matrix finite_differences(const std::function<double(const Matrix&)>& f, const Matrix& x,
                                 double h = 1e-6)
{
    Matrix g(x.rows(), x.cols());
    Matrix xp = x;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double step = h * std::max(1.0, std::abs(x[k]));
        xp[k] = x[k] + step;
        const double fp = f(xp);
        xp[k] = x[k] - step;
        const double fm = f(xp);
        xp[k] = x[k];
        g[k] = (fp - fm) / (2.0 * step);
    }
    return g;
}

inline std::vector<double> finite_differences(
    const std::function<double(const std::vector<double>&)>& f, const std::vector<double>& x,
    double h = 1e-6)
{
    std::vector<double> g(x.size());
    std::vector<double> xp = x;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double step = h * std::max(1.0, std::abs(x[k]));
        xp[k] = x[k] + step;
        const double fp = f(xp);
        xp[k] = x[k] - step;
        const double fm = f(xp);
        xp[k] = x[k];
        g[k] = (fp - fm) / (2.0 * step);
    }
    return g;
}

/// Worst violation ratio of |a-b| <= max(rel * max(|a|,|b|), floor); <= 1 passes.
inline double gradient_mismatch(std::span<const double> a, std::span<const double> b, double rel,
                                double floor)
{
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double err = std::abs(a[k] - b[k]);
        const double tol = std::max(rel * std::max(std::abs(a[k]), std::abs(b[k])), floor);
        worst = std::max(worst, err / tol);
    }
    return worst;
}

/// Inverse and log|det| by Gauss-Jordan elimination with partial pivoting.
struct DenseInverse {
    Matrix inverse;
    double log_abs_det = 0.0;
};

inline DenseInverse gauss_jordan(const Matrix& a)
{
    const std::size_t n = a.rows();
    Matrix w = a;
    Matrix inv = Matrix::identity(n);
    double logdet = 0.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(w(r, col)) > std::abs(w(piv, col))) {
                piv = r;
            }
        }
        if (piv != col) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(w(col, j), w(piv, j));
                std::swap(inv(col, j), inv(piv, j));
            }
        }
        const double p = w(col, col);
        logdet += std::log(std::abs(p));
        for (std::size_t j = 0; j < n; ++j) {
            w(col, j) /= p;
            inv(col, j) /= p;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) {
                continue;
            }
            const double f = w(r, col);
            if (f == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < n; ++j) {
                w(r, j) -= f * w(col, j);
                inv(r, j) -= f * inv(col, j);
            }
        }
    }
    return {inv, logdet};
}

/// log N(y | 0, C) via explicit inverse and elimination determinant.
inline double dense_mvn_logpdf(const Matrix& y, const Matrix& cov)
{
    const DenseInverse di = gauss_jordan(cov);
    double quad = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        for (std::size_t j = 0; j < y.size(); ++j) {
            quad += y[i] * di.inverse(i, j) * y[j];
        }
    }
    const double n = static_cast<double>(y.size());
    return -0.5 * quad - 0.5 * di.log_abs_det - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

} // namespace gpad::testing
