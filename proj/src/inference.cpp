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

#include "gpad/inference.hpp"

#include "gpad/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

namespace gpad {

namespace {

bool finite(std::span<const double> v)
{
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double seconds_since(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// splitmix64: a small, fully specified generator for the shuffle, so batch
// schedules do not depend on the standard library's distributions.
std::uint64_t splitmix(std::uint64_t& s)
{
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace

Adam::Adam(std::size_t size, AdamOptions opts) : opts_(opts), m_(size, 0.0), v_(size, 0.0)
{
    if (!(opts_.rate > 0.0)) {
        throw ValueError("Adam rate must be positive");
    }
}

std::vector<double> Adam::step(std::span<const double> gradient)
{
    if (gradient.size() != m_.size()) {
        throw ShapeError("Adam expects a gradient of length " + std::to_string(m_.size()) +
                         ", got " + std::to_string(gradient.size()));
    }
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    std::vector<double> delta(m_.size());
    for (std::size_t k = 0; k < m_.size(); ++k) {
        const double g = gradient[k];
        m_[k] = opts_.beta1 * m_[k] + (1.0 - opts_.beta1) * g;
        v_[k] = opts_.beta2 * v_[k] + (1.0 - opts_.beta2) * g * g;
        delta[k] = -opts_.rate * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + opts_.epsilon);
    }
    return delta;
}

Trace minimize(const ScalarFn& f, std::vector<double>& x, std::size_t iterations, AdamOptions opts)
{
    Adam adam(x.size(), opts);
    Trace trace;
    trace.reserve(iterations);
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t it = 0; it < iterations; ++it) {
        Evaluation e;
        try {
            e = f(x);
        } catch (const Error& err) {
            throw OptimizationError("objective evaluation failed at iteration " +
                                    std::to_string(it) + ": " + err.what());
        }
        if (!std::isfinite(e.value) || !finite(e.gradient)) {
            throw OptimizationError("non-finite objective or gradient at iteration " +
                                    std::to_string(it));
        }
        const std::vector<double> delta = adam.step(e.gradient);
        for (std::size_t k = 0; k < x.size(); ++k) {
            x[k] += delta[k];
        }
        trace.push_back({it, e.value, seconds_since(start)});
    }
    return trace;
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_(std::min(batch_size, n)), state_(seed), order_(n), cursor_(n)
{
    if (n == 0 || batch_size == 0) {
        throw ValueError("batch sampler needs n >= 1 and batch size >= 1");
    }
}

const std::vector<std::size_t>& BatchSampler::next()
{
    if (cursor_ + batch_ > n_) {
        // New epoch: Fisher-Yates over the row indices; the tail that does not
        // fill a batch is dropped.
        for (std::size_t i = 0; i < n_; ++i) {
            order_[i] = i;
        }
        for (std::size_t i = n_; i-- > 1;) {
            const std::size_t j = splitmix(state_) % (i + 1);
            std::swap(order_[i], order_[j]);
        }
        cursor_ = 0;
    }
    current_.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                    order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
    std::sort(current_.begin(), current_.end());
    cursor_ += batch_;
    return current_;
}

Trace minimize(Model& model, const MinimizeOptions& opts)
{
    const ParamRefs params = model.params();
    std::vector<double> x = free_state(params);
    std::optional<BatchSampler> sampler;
    if (opts.batch_size > 0) {
        if (!model.supports_batches()) {
            throw ValueError(std::string(model_kind_name(model.kind())) +
                             " does not support minibatches");
        }
        sampler.emplace(model.data().size(), opts.batch_size, opts.seed);
    }
    const ScalarFn loss = [&](std::span<const double> state) {
        set_free_state(params, state);
        const std::vector<std::size_t>* batch = sampler ? &sampler->next() : nullptr;
        Evaluation e = model.evaluate(batch, true);
        e.value = -e.value;
        for (double& g : e.gradient) {
            g = -g;
        }
        return e;
    };
    Trace trace = minimize(loss, x, opts.iterations, opts.adam);
    set_free_state(params, x);
    return trace;
}

LeapfrogState leapfrog(const LeapfrogState& start, double step, std::size_t steps,
                       const ScalarFn& log_target)
{
    if (steps == 0) {
        throw ValueError("leapfrog needs at least one step");
    }
    if (!(step > 0.0)) {
        throw ValueError("leapfrog step size must be positive");
    }
    LeapfrogState s = start;
    const std::size_t n = s.position.size();
    auto diverge = [&] {
        s.divergent = true;
        return s;
    };
    for (std::size_t k = 0; k < n; ++k) {
        s.momentum[k] += 0.5 * step * s.gradient[k];
    }
    for (std::size_t i = 0; i < steps; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            s.position[k] += step * s.momentum[k];
        }
        Evaluation e;
        try {
            e = log_target(s.position);
        } catch (const Error&) {
            return diverge();
        }
        if (!std::isfinite(e.value) || !finite(e.gradient)) {
            return diverge();
        }
        s.log_target = e.value;
        s.gradient = std::move(e.gradient);
        const double kick = i + 1 == steps ? 0.5 * step : step;
        for (std::size_t k = 0; k < n; ++k) {
            s.momentum[k] += kick * s.gradient[k];
        }
    }
    if (!finite(s.momentum)) {
        return diverge();
    }
    return s;
}

double Chain::acceptance_rate() const
{
    if (accepted.empty()) {
        return 0.0;
    }
    return static_cast<double>(std::count(accepted.begin(), accepted.end(), true)) /
           static_cast<double>(accepted.size());
}

Chain hmc_sample(const ScalarFn& log_target, std::vector<double> initial, const HmcOptions& opts)
{
    if (opts.leapfrog == 0 || !(opts.step > 0.0)) {
        throw ValueError("HMC needs a positive step size and at least one leapfrog step");
    }
    if (opts.burn > opts.samples) {
        throw ValueError("burn-in exceeds the number of samples");
    }
    LeapfrogState current{std::move(initial), {}, 0.0, {}, false};
    {
        Evaluation e;
        try {
            e = log_target(current.position);
        } catch (const Error& err) {
            throw OptimizationError(std::string("log target fails at the initial state: ") +
                                    err.what());
        }
        if (!std::isfinite(e.value) || !finite(e.gradient)) {
            throw OptimizationError("log target is not finite at the initial state");
        }
        current.log_target = e.value;
        current.gradient = std::move(e.gradient);
    }
    const std::size_t n = current.position.size();
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform;

    Chain chain;
    std::size_t divergent = 0;
    constexpr std::size_t divergence_window = 100;
    for (std::size_t it = 0; it < opts.samples; ++it) {
        current.momentum.resize(n);
        double kinetic0 = 0.0;
        for (double& p : current.momentum) {
            p = normal(rng);
            kinetic0 += 0.5 * p * p;
        }
        const double u = uniform(rng);
        const LeapfrogState proposal = leapfrog(current, opts.step, opts.leapfrog, log_target);
        bool accept = false;
        if (proposal.divergent) {
            ++divergent;
        } else {
            double kinetic1 = 0.0;
            for (double p : proposal.momentum) {
                kinetic1 += 0.5 * p * p;
            }
            const double delta_h = (kinetic1 - proposal.log_target) - (kinetic0 - current.log_target);
            accept = std::log(u) < -delta_h;
        }
        if (it + 1 == divergence_window && divergent == divergence_window) {
            throw OptimizationError("the first 100 HMC proposals all diverged; reduce the step size");
        }
        if (accept) {
            current.position = proposal.position;
            current.log_target = proposal.log_target;
            current.gradient = proposal.gradient;
        }
        if (it >= opts.burn) {
            chain.samples.push_back(current.position);
            chain.accepted.push_back(accept);
            chain.log_target.push_back(current.log_target);
        }
    }
    chain.last = std::move(current.position);
    return chain;
}

Chain hmc_sample(Model& model, const HmcOptions& opts)
{
    const ParamRefs params = model.params();
    const ScalarFn target = [&](std::span<const double> state) {
        set_free_state(params, state);
        return model.evaluate(nullptr, true);
    };
    Chain chain = hmc_sample(target, free_state(params), opts);
    set_free_state(params, chain.last);
    return chain;
}

} // namespace gpad
