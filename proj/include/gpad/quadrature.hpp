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
#include <functional>
#include <vector>

namespace gpad {

/// Gauss-Hermite rule, physicists' weight: int e^{-x^2} g(x) dx ~ sum w_h g(x_h).
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;

    std::size_t size() const { return nodes.size(); }

    /// E[g(f)] for f ~ N(mean, variance).
    double expectation(double mean, double variance, const std::function<double(double)>& g) const;
};

inline constexpr std::size_t default_quadrature_points = 20;

/// Golub-Welsch construction, 1 <= h <= 100. Nodes are ascending.
QuadratureRule hermite_rule(std::size_t h);

/// Cached rule, built once per size.
const QuadratureRule& cached_hermite_rule(std::size_t h = default_quadrature_points);

} // namespace gpad
