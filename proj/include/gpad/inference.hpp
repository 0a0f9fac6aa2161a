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

// Adam over model free states and Hamiltonian Monte Carlo over MCMC targets.

#pragma once

#include "gpad/models.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace gpad {

struct AdamOptions {
    double rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
  public:
    Adam(std::size_t size, AdamOptions opts = {});

    /// Bias-corrected update for a loss gradient; returns the parameter delta.
    std::vector<double> step(std::span<const double> gradient);

    std::size_t iterations() const { return t_; }
    const AdamOptions& options() const { return opts_; }

  private:
    AdamOptions opts_;
    std::size_t t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

/// Value and gradient of a scalar function of a flat vector.
using ScalarFn = std::function<Evaluation(std::span<const double>)>;

struct TraceRow {
    std::size_t iteration = 0;
    double objective = 0.0; // loss being minimized (negated model objective)
    double seconds = 0.0;   // wall time since the loop started
};

using Trace = std::vector<TraceRow>;

/// Minimizes f from x in place; throws OptimizationError on a non-finite value.
Trace minimize(const ScalarFn& f, std::vector<double>& x, std::size_t iterations,
               AdamOptions opts = {});

struct MinimizeOptions {
    std::size_t iterations = 1000;
    AdamOptions adam;
    /// 0 selects full-batch mode. Otherwise each epoch shuffles the rows with
    /// the seeded generator and walks through floor(n / batch) sorted batches.
    std::size_t batch_size = 0;
    std::uint64_t seed = 0;
};

/// Maximizes the model objective by minimizing its negation. Leaves the model
/// at the final state.
Trace minimize(Model& model, const MinimizeOptions& opts);

/// Minibatch schedule used by the stochastic mode, exposed for tests.
class BatchSampler {
  public:
    BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);
    const std::vector<std::size_t>& next();

  private:
    std::size_t n_;
    std::size_t batch_;
    std::uint64_t state_;
    std::vector<std::size_t> order_;
    std::size_t cursor_;
    std::vector<std::size_t> current_;
};

struct LeapfrogState {
    std::vector<double> position;
    std::vector<double> momentum;
    double log_target = 0.0;
    std::vector<double> gradient; // of the log target at position
    bool divergent = false;
};

/// L half-kick/drift/half-kick steps for H = -log target + |p|^2 / 2.
/// `start` must carry log_target and gradient at its position. Non-finite
/// values or evaluation errors mark the result divergent.
LeapfrogState leapfrog(const LeapfrogState& start, double step, std::size_t steps,
                       const ScalarFn& log_target);

struct HmcOptions {
    double step = 0.05;
    std::size_t leapfrog = 20;
    std::size_t samples = 1000; // total iterations, burn-in included
    std::size_t burn = 100;
    std::uint64_t seed = 0;
};

struct Chain {
    std::vector<std::vector<double>> samples;
    std::vector<bool> accepted;
    std::vector<double> log_target;
    std::vector<double> last; // final state, whether or not it was retained
    double acceptance_rate() const;
};

/// Retains samples - burn states. Throws OptimizationError when the target
/// is not finite at the start or the first 100 proposals all diverge.
Chain hmc_sample(const ScalarFn& log_target, std::vector<double> initial, const HmcOptions& opts);

/// Samples the free state of an MCMC model; leaves the model at the last state.
Chain hmc_sample(Model& model, const HmcOptions& opts);

} // namespace gpad
