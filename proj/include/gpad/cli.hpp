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

// The fit / predict / sample / bench commands behind tools/gpad. They live in
// the library so tests drive them without spawning processes.

#pragma once

#include "gpad/inference.hpp"
#include "gpad/io.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

namespace gpad::cli {

struct CommonOptions {
    std::optional<std::uint64_t> seed;  // overrides the config `seed` key
    std::optional<std::size_t> threads; // worker threads; bench sweeps up to it
    std::filesystem::path out = ".";
    /// Write wall-clock seconds into trace files. Off by default so that
    /// output files are byte-identical across runs.
    bool timing = false;
};

/// Training data named by the config: `data` (CSV, with `data.label` and
/// `data.header`) or `data.images` + `data.labels` (IDX, optional
/// `data.limit`).
Dataset load_data(const Config& config);

/// Model kind, kernel, likelihood, inducing count, jitter policy and param
/// settings (`fix = a,b`, `prior.<param> = gamma(2,1)`) from the config.
std::unique_ptr<Model> build_model(const Config& config, Dataset data);

/// Seeded Gaussian clusters with integer labels in [0, classes).
Dataset synthetic_classes(std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed);

/// Writes model.json and trace.csv under `out`. With `init`, training
/// resumes from a saved artifact instead of building a fresh model.
void fit(const Config& config, const CommonOptions& opts,
         const std::optional<std::filesystem::path>& init, std::ostream& log);

/// Writes predictions.csv: mean,variance per row, or p0..p{C-1} for
/// multiclass likelihoods.
void predict(const std::filesystem::path& artifact, const std::filesystem::path& input,
             bool header, const CommonOptions& opts, std::ostream& log);

/// Writes chain.csv (log_target, free state, constrained hyperparameters)
/// and model.json at the last state.
void sample(const Config& config, const CommonOptions& opts, std::ostream& log);

struct BenchRow {
    std::size_t config = 0;
    std::size_t threads = 0;
    std::size_t minibatch = 0;
    std::size_t inducing = 0;
    std::size_t repeats = 0;
    std::size_t iterations = 0;
    double rate_mean = 0.0; // iterations per second
    double rate_std = 0.0;
    double final_objective = 0.0;
};

/// SVGP multiclass throughput over thread counts x minibatch sizes; writes
/// bench.csv. Defaults: 50 iterations, 5 repeats, threads 1..6, minibatch
/// 200, m = 100, rate 0.001, synthetic 10-class data with n = 1000, d = 64.
std::vector<BenchRow> bench(const Config& config, const CommonOptions& opts, std::ostream& log);

} // namespace gpad::cli
