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

// Model fixtures shared by the unit and acceptance suites.

#pragma once

#include "gpad/models.hpp"
#include "support/oracles.hpp"

#include <cmath>
#include <memory>

namespace gpad::testing {

/// y = sin(3 x0) + 0.5 cos(2 x1) + noise on uniform inputs in [-1.5, 1.5].
inline Dataset smooth_regression(Rng& rng, std::size_t n, std::size_t d = 1, double noise = 0.1)
{
    Dataset data{random_uniform(rng, n, d, -1.5, 1.5), Matrix(n, 1)};
    std::normal_distribution<double> normal;
    for (std::size_t i = 0; i < n; ++i) {
        double f = std::sin(3.0 * data.x(i, 0));
        if (d > 1) {
            f += 0.5 * std::cos(2.0 * data.x(i, 1));
        }
        data.y[i] = f + noise * normal(rng);
    }
    return data;
}

/// Labels for every likelihood kind, from the same smooth latent function.
inline Dataset labelled(Rng& rng, std::size_t n, std::size_t d, const Likelihood& lik)
{
    Dataset data = smooth_regression(rng, n, d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double f = data.y[i];
        switch (lik.kind()) {
        case Likelihood::Kind::gaussian: data.y[i] = f + 0.1 * std::normal_distribution<double>()(rng); break;
        case Likelihood::Kind::bernoulli: data.y[i] = f > 0.0 ? 1.0 : 0.0; break;
        case Likelihood::Kind::poisson: data.y[i] = std::floor(std::exp(f)); break;
        case Likelihood::Kind::multiclass: {
            const double c = static_cast<double>(lik.num_classes());
            data.y[i] = std::min(c - 1.0, std::floor((f + 1.0) / 2.0 * c));
            data.y[i] = std::max(data.y[i], 0.0);
            break;
        }
        }
    }
    return data;
}

/// Moves every free param away from its default so gradients are generic.
inline void perturb(Model& model, Rng& rng, double scale = 0.3)
{
    std::normal_distribution<double> normal(0.0, scale);
    for (Param* p : model.params()) {
        if (p->fixed()) {
            continue;
        }
        Matrix u = p->unconstrained();
        for (double& x : u.values()) {
            x += normal(rng);
        }
        p->set_unconstrained(u);
    }
}

/// Worst ratio of |analytic - central FD| to max(rel * scale, floor) over the
/// free state; <= 1 passes.
inline double model_gradient_mismatch(Model& model, double rel = 1e-4, double floor = 1e-7,
                                      const std::vector<std::size_t>* batch = nullptr)
{
    const ParamRefs params = model.params();
    const std::vector<double> x0 = free_state(params);
    const Evaluation e = model.evaluate(batch, true);
    const std::vector<double> fd = finite_differences(
        [&](const std::vector<double>& x) {
            set_free_state(params, x);
            return model.evaluate(batch, false).value;
        },
        x0);
    set_free_state(params, x0);
    return gradient_mismatch(e.gradient, fd, rel, floor);
}

} // namespace gpad::testing
