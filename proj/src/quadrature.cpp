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

#include "gpad/quadrature.hpp"

#include "gpad/error.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <tuple>

namespace gpad {

namespace {

// Orthonormal Hermite polynomials (weight e^{-x^2}) at x: returns p_h(x),
// p_{h-1}(x) and sum_{k<h} p_k(x)^2.
std::tuple<double, double, double> orthonormal_hermite(std::size_t h, double x)
{
    double prev = 0.0;
    double cur = std::pow(std::numbers::pi, -0.25);
    double sumsq = 0.0;
    for (std::size_t k = 0; k < h; ++k) {
        sumsq += cur * cur;
        const double kd = static_cast<double>(k);
        const double next = std::sqrt(2.0 / (kd + 1.0)) * x * cur - std::sqrt(kd / (kd + 1.0)) * prev;
        prev = cur;
        cur = next;
    }
    return {cur, prev, sumsq};
}

} // namespace

double QuadratureRule::expectation(double mean, double variance,
                                   const std::function<double(double)>& g) const
{
    if (variance < 0.0) {
        throw ValueError("negative variance in Gauss-Hermite expectation");
    }
    const double s = std::sqrt(2.0 * variance);
    double acc = 0.0;
    for (std::size_t h = 0; h < nodes.size(); ++h) {
        acc += weights[h] * g(mean + s * nodes[h]);
    }
    return acc / std::sqrt(std::numbers::pi);
}

QuadratureRule hermite_rule(std::size_t h)
{
    if (h < 1 || h > 100) {
        throw ValueError("Gauss-Hermite rule size must be in [1, 100], got " + std::to_string(h));
    }
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(h),
                                                   static_cast<Eigen::Index>(h));
    for (std::size_t i = 1; i < h; ++i) {
        const double b = std::sqrt(static_cast<double>(i) / 2.0);
        const auto k = static_cast<Eigen::Index>(i);
        jacobi(k, k - 1) = b;
        jacobi(k - 1, k) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    if (eig.info() != Eigen::Success) {
        throw NumericalError(0, "Gauss-Hermite eigen-decomposition failed");
    }
    QuadratureRule rule;
    rule.nodes.resize(h);
    rule.weights.resize(h);
    for (std::size_t i = 0; i < h; ++i) {
        double x = eig.eigenvalues()(static_cast<Eigen::Index>(i));
        // Newton polish on the orthonormal Hermite polynomial, then take the
        // Christoffel number 1 / sum_k p_k(x)^2 as the weight. Eigenvector
        // components lose relative accuracy for the tiny outer weights.
        for (int it = 0; it < 3; ++it) {
            const auto [ph, ph1, sumsq] = orthonormal_hermite(h, x);
            (void)sumsq;
            x -= ph / (std::sqrt(2.0 * static_cast<double>(h)) * ph1);
        }
        rule.nodes[i] = x;
        rule.weights[i] = 1.0 / std::get<2>(orthonormal_hermite(h, x));
    }
    // Enforce exact symmetry about zero.
    for (std::size_t i = 0; i < h / 2; ++i) {
        const std::size_t j = h - 1 - i;
        const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -x;
        rule.nodes[j] = x;
        rule.weights[i] = w;
        rule.weights[j] = w;
    }
    if (h % 2 == 1) {
        rule.nodes[h / 2] = 0.0;
    }
    return rule;
}

const QuadratureRule& cached_hermite_rule(std::size_t h)
{
    static std::array<std::unique_ptr<QuadratureRule>, 101> cache;
    static std::mutex mutex;
    if (h < 1 || h > 100) {
        throw ValueError("Gauss-Hermite rule size must be in [1, 100], got " + std::to_string(h));
    }
    std::lock_guard lock(mutex);
    if (!cache[h]) {
        cache[h] = std::make_unique<QuadratureRule>(hermite_rule(h));
    }
    return *cache[h];
}

} // namespace gpad
