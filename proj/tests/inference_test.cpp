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

#include "gpad/error.hpp"
#include "gpad/inference.hpp"
#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace gpad;
using namespace gpad::testing;

namespace {

// log N(x | 0, diag(scales^2)) up to a constant.
ScalarFn gaussian_target(std::vector<double> scales)
{
    return [scales](std::span<const double> x) {
        Evaluation e;
        e.gradient.resize(x.size());
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double s2 = scales[k] * scales[k];
            e.value -= 0.5 * x[k] * x[k] / s2;
            e.gradient[k] = -x[k] / s2;
        }
        return e;
    };
}

LeapfrogState start_at(const ScalarFn& f, std::vector<double> x, std::vector<double> p)
{
    Evaluation e = f(x);
    return {std::move(x), std::move(p), e.value, std::move(e.gradient), false};
}

double hamiltonian(const LeapfrogState& s)
{
    double k = 0.0;
    for (double p : s.momentum) {
        k += 0.5 * p * p;
    }
    return k - s.log_target;
}

double reversal_error(const ScalarFn& f, const std::vector<double>& x, const std::vector<double>& p,
                      double step, std::size_t steps)
{
    const LeapfrogState a = f ? start_at(f, x, p) : LeapfrogState{};
    LeapfrogState b = leapfrog(a, step, steps, f);
    EXPECT_FALSE(b.divergent);
    for (double& m : b.momentum) {
        m = -m;
    }
    const LeapfrogState c = leapfrog(b, step, steps, f);
    double worst = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        worst = std::max(worst, std::abs(c.position[k] - x[k]));
        worst = std::max(worst, std::abs(c.momentum[k] + p[k]));
    }
    return worst;
}

// Standard error of the mean from non-overlapping batch means.
double batch_mean_se(const std::vector<double>& xs, std::size_t batches = 50)
{
    const std::size_t len = xs.size() / batches;
    std::vector<double> means(batches, 0.0);
    double grand = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
        for (std::size_t i = 0; i < len; ++i) {
            means[b] += xs[b * len + i];
        }
        means[b] /= static_cast<double>(len);
        grand += means[b];
    }
    grand /= static_cast<double>(batches);
    double var = 0.0;
    for (double m : means) {
        var += (m - grand) * (m - grand);
    }
    var /= static_cast<double>(batches - 1);
    return std::sqrt(var / static_cast<double>(batches));
}

} // namespace

TEST(Adam, FirstStepIsSignedRate)
{
    Adam adam(3, {.rate = 0.05});
    const std::vector<double> g = {2.5, -1e-3, 40.0};
    const std::vector<double> d = adam.step(g);
    EXPECT_NEAR(d[0], -0.05, 1e-8);
    EXPECT_NEAR(d[1], 0.05, 1e-6);
    EXPECT_NEAR(d[2], -0.05, 1e-8);
    EXPECT_EQ(adam.iterations(), 1u);
    EXPECT_THROW(adam.step(std::vector<double>(2)), ShapeError);
    EXPECT_THROW(Adam(1, {.rate = 0.0}), ValueError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged)
{
    Adam adam(2);
    for (int i = 0; i < 100; ++i) {
        for (double d : adam.step(std::vector<double>{0.0, 0.0})) {
            EXPECT_EQ(d, 0.0);
        }
    }
}

TEST(Adam, MinimizesQuadratic)
{
    std::vector<double> x = {5.0};
    const ScalarFn f = [](std::span<const double> v) {
        return Evaluation{v[0] * v[0], {2.0 * v[0]}};
    };
    const Trace trace = minimize(f, x, 1000, {.rate = 0.1});
    EXPECT_LT(std::abs(x[0]), 1e-2);
    EXPECT_EQ(trace.size(), 1000u);
    EXPECT_EQ(trace.front().objective, 25.0);
}

TEST(Minimize, NonFiniteObjectiveNamesIteration)
{
    std::vector<double> x = {1.0};
    int calls = 0;
    const ScalarFn f = [&](std::span<const double>) {
        return Evaluation{++calls == 4 ? NAN : 1.0, {1.0}};
    };
    try {
        minimize(f, x, 10);
        FAIL() << "expected an OptimizationError";
    } catch (const OptimizationError& e) {
        EXPECT_NE(std::string(e.what()).find("iteration 3"), std::string::npos) << e.what();
    }
}

TEST(Minimize, GprImprovesAndIsDeterministic)
{
    Rng rng(1);
    const Dataset data = smooth_regression(rng, 20, 1);
    auto fit = [&] {
        GPR m(data, Kernel(Kernel::Kind::rbf, 1), Likelihood::gaussian());
        const double before = m.evaluate(nullptr, false).value;
        const Trace t = minimize(m, {.iterations = 200, .adam = {.rate = 0.05}});
        EXPECT_GT(m.evaluate(nullptr, false).value, before);
        return t;
    };
    const Trace a = fit();
    const Trace b = fit();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].objective, b[i].objective);
    }
    EXPECT_LT(a.back().objective, a.front().objective);
}

TEST(Minimize, FullSizeBatchesMatchFullBatchMode)
{
    Rng rng(2);
    const Likelihood lik = Likelihood::bernoulli();
    const Dataset data = labelled(rng, 24, 2, lik);
    auto run = [&](std::size_t batch) {
        SVGP m(data, Kernel(Kernel::Kind::rbf, 2), lik, {.inducing = 5});
        return minimize(m, {.iterations = 30, .batch_size = batch, .seed = 9});
    };
    const Trace full = run(0);
    const Trace same = run(24);
    for (std::size_t i = 0; i < full.size(); ++i) {
        EXPECT_EQ(full[i].objective, same[i].objective);
    }
    const Trace s1 = run(8);
    const Trace s2 = run(8);
    for (std::size_t i = 0; i < s1.size(); ++i) {
        EXPECT_EQ(s1[i].objective, s2[i].objective);
    }

    GPR g(smooth_regression(rng, 5, 1), Kernel(Kernel::Kind::rbf, 1), Likelihood::gaussian());
    EXPECT_THROW(minimize(g, {.iterations = 1, .batch_size = 2}), ValueError);
}

TEST(BatchSampler, EpochsCoverRowsOnceAndDropRemainder)
{
    BatchSampler s(10, 3, 42);
    std::set<std::size_t> seen;
    for (int b = 0; b < 3; ++b) {
        const auto& batch = s.next();
        ASSERT_EQ(batch.size(), 3u);
        EXPECT_TRUE(std::is_sorted(batch.begin(), batch.end()));
        seen.insert(batch.begin(), batch.end());
    }
    EXPECT_EQ(seen.size(), 9u);
    BatchSampler a(50, 7, 1);
    BatchSampler b(50, 7, 1);
    BatchSampler c(50, 7, 2);
    bool differs = false;
    for (int i = 0; i < 20; ++i) {
        const auto x = a.next();
        EXPECT_EQ(x, b.next());
        differs = differs || x != c.next();
    }
    EXPECT_TRUE(differs);
    EXPECT_THROW(BatchSampler(0, 1, 0), ValueError);
}

TEST(Leapfrog, ReversibleOnQuadratic)
{
    Rng rng(3);
    const ScalarFn f = gaussian_target({1.0, 0.5, 2.0});
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix x = random_matrix(rng, 3, 1);
        const Matrix p = random_matrix(rng, 3, 1);
        EXPECT_LE(reversal_error(f, {x.values().begin(), x.values().end()},
                                 {p.values().begin(), p.values().end()}, 0.1, 15),
                  1e-10);
    }
    EXPECT_THROW(leapfrog(start_at(f, {0, 0, 0}, {0, 0, 0}), 0.1, 0, f), ValueError);
}

TEST(Leapfrog, SecondOrderEnergyError)
{
    const ScalarFn f = gaussian_target({1.0, 0.7});
    const LeapfrogState s = start_at(f, {0.8, -0.4}, {0.3, 1.1});
    const double h0 = hamiltonian(s);
    double prev = 0.0;
    for (double eps : {0.1, 0.05, 0.025}) {
        // Fixed trajectory length 1.
        const std::size_t steps = static_cast<std::size_t>(std::lround(1.0 / eps));
        const double err = std::abs(hamiltonian(leapfrog(s, eps, steps, f)) - h0);
        if (prev > 0.0) {
            EXPECT_GE(prev / err, 3.9) << "eps=" << eps;
        }
        prev = err;
    }
}

TEST(Leapfrog, ReversibleOnModelTargets)
{
    Rng rng(4);
    for (ModelKind kind : {ModelKind::gpmc, ModelKind::sgpmc}) {
        const Likelihood lik = Likelihood::poisson();
        auto m = make_model(kind, labelled(rng, 10, 1, lik), Kernel(Kernel::Kind::rbf, 1), lik,
                            {.inducing = 4});
        for (Param* p : m->params()) {
            if (p->name() != "v") {
                p->set_prior(Prior::gamma(2.0, 2.0));
            }
        }
        const ParamRefs params = m->params();
        const ScalarFn target = [&](std::span<const double> x) {
            set_free_state(params, x);
            return m->evaluate();
        };
        std::vector<double> x = free_state(params);
        std::normal_distribution<double> normal(0.0, 0.3);
        for (double& v : x) {
            v += normal(rng);
        }
        std::vector<double> p(x.size());
        for (double& v : p) {
            v = normal(rng);
        }
        EXPECT_LE(reversal_error(target, x, p, 0.01, 10), 1e-10) << model_kind_name(kind);
    }
}

TEST(Hmc, StandardNormalMoments)
{
    const Chain chain = hmc_sample(gaussian_target({1.0}), {0.0},
                                   {.step = 0.2, .leapfrog = 10, .samples = 11000, .burn = 1000, .seed = 7});
    ASSERT_EQ(chain.samples.size(), 10000u);
    double mean = 0.0;
    for (const auto& s : chain.samples) {
        mean += s[0];
    }
    mean /= 10000.0;
    double var = 0.0;
    for (const auto& s : chain.samples) {
        var += (s[0] - mean) * (s[0] - mean);
    }
    var /= 9999.0;
    EXPECT_NEAR(mean, 0.0, 0.05);
    EXPECT_NEAR(var, 1.0, 0.1);
}

TEST(Hmc, AcceptanceAndDeterminism)
{
    const ScalarFn f = gaussian_target({1.0, 1.0, 1.0, 1.0});
    const HmcOptions opts{.step = 0.1, .leapfrog = 10, .samples = 600, .burn = 100, .seed = 3};
    const Chain a = hmc_sample(f, {0.5, 0.5, 0.5, 0.5}, opts);
    const Chain b = hmc_sample(f, {0.5, 0.5, 0.5, 0.5}, opts);
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_EQ(a.samples.size(), 500u);
    EXPECT_GT(a.acceptance_rate(), 0.6);

    // Flat target: Delta H = 0, every proposal is accepted.
    const ScalarFn flat = [](std::span<const double> x) {
        return Evaluation{0.0, std::vector<double>(x.size(), 0.0)};
    };
    const Chain c = hmc_sample(flat, {0.0}, {.samples = 50, .burn = 0});
    EXPECT_DOUBLE_EQ(c.acceptance_rate(), 1.0);
}

TEST(Hmc, DivergentStartAborts)
{
    const ScalarFn bad = [](std::span<const double> x) {
        if (x[0] != 0.0) {
            throw ValueError("outside support");
        }
        return Evaluation{0.0, {1.0}};
    };
    EXPECT_THROW(hmc_sample(bad, {0.0}, {.samples = 200, .burn = 0}), OptimizationError);
    const ScalarFn nan = [](std::span<const double>) { return Evaluation{NAN, {0.0}}; };
    EXPECT_THROW(hmc_sample(nan, {0.0}, {}), OptimizationError);
    EXPECT_THROW(hmc_sample(gaussian_target({1.0}), {0.0}, {.samples = 5, .burn = 6}), ValueError);
}

TEST(Hmc, ConjugateGpmcPosteriorMean)
{
    // One datum: f ~ N(0, k), y | f ~ N(f, s2), so E[f | y] = k y / (k + s2).
    const double y = 1.3;
    GPMC m(Dataset{Matrix{{0.2}}, Matrix{{y}}}, Kernel(Kernel::Kind::rbf, 1, {.variance = 2.0}),
           Likelihood::gaussian(0.5));
    for (Param* p : m.params()) {
        if (p->name() != "v") {
            p->set_fixed(true);
        }
    }
    const double k = m.kernel().variance().value().item();
    const double s2 = m.likelihood().variance().value().item();
    const Chain chain = hmc_sample(m, {.step = 0.3, .leapfrog = 8, .samples = 6000, .burn = 1000, .seed = 11});
    std::vector<double> f;
    for (const auto& s : chain.samples) {
        f.push_back(std::sqrt(k) * s[0]);
    }
    double mean = 0.0;
    for (double v : f) {
        mean += v;
    }
    mean /= static_cast<double>(f.size());
    EXPECT_NEAR(mean, k * y / (k + s2), 3.0 * batch_mean_se(f));
    EXPECT_EQ(m.v().value()(0, 0), chain.last[0]);
}
