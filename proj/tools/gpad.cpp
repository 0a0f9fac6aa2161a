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

// gpad: fit, predict, sample and bench from the command line.

#include "gpad/cli.hpp"
#include "gpad/error.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Flags {
    std::string config;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::string out = ".";
    bool timing = false;
};

void add_common(CLI::App* cmd, Flags& f, bool config_required)
{
    auto* c = cmd->add_option("--config", f.config, "Run configuration (key = value with [sections])");
    if (config_required) {
        c->required();
    }
    cmd->add_option("--seed", f.seed, "Seed for every random draw (overrides the config)");
    cmd->add_option("--threads", f.threads, "Worker threads (bench: upper bound of the sweep)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--out", f.out, "Output directory")->capture_default_str();
    cmd->add_flag("--timing", f.timing, "Record wall-clock seconds in trace files");
}

gpad::cli::CommonOptions common(const CLI::App* cmd, const Flags& f)
{
    gpad::cli::CommonOptions o;
    if (cmd->count("--seed")) {
        o.seed = f.seed;
    }
    if (cmd->count("--threads")) {
        o.threads = f.threads;
    }
    o.out = f.out;
    o.timing = f.timing;
    return o;
}

gpad::Config config_of(const Flags& f)
{
    return f.config.empty() ? gpad::Config{} : gpad::Config::load(f.config);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Gaussian process models with automatic differentiation"};
    app.require_subcommand(1);

    Flags fit_flags;
    std::string init;
    auto* fit = app.add_subcommand("fit", "Optimize a gpr, sgpr, vgp or svgp model");
    add_common(fit, fit_flags, true);
    fit->add_option("--init", init, "Resume from a saved model.json");

    Flags predict_flags;
    std::string artifact;
    std::string input;
    bool no_header = false;
    auto* predict = app.add_subcommand("predict", "Predict at the rows of a CSV file");
    add_common(predict, predict_flags, false);
    predict->add_option("--model", artifact, "model.json written by fit or sample")->required();
    predict->add_option("--input", input, "CSV of input features")->required();
    predict->add_flag("--no-header", no_header, "The input CSV has no header row");

    Flags sample_flags;
    auto* sample = app.add_subcommand("sample", "Run HMC on a gpmc or sgpmc model");
    add_common(sample, sample_flags, true);

    Flags bench_flags;
    auto* bench = app.add_subcommand("bench", "SVGP multiclass training throughput");
    add_common(bench, bench_flags, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (fit->parsed()) {
            gpad::cli::fit(config_of(fit_flags), common(fit, fit_flags),
                           init.empty() ? std::nullopt : std::optional<std::filesystem::path>(init), std::cout);
        } else if (predict->parsed()) {
            gpad::cli::predict(artifact, input, !no_header, common(predict, predict_flags), std::cout);
        } else if (sample->parsed()) {
            gpad::cli::sample(config_of(sample_flags), common(sample, sample_flags), std::cout);
        } else if (bench->parsed()) {
            gpad::cli::bench(config_of(bench_flags), common(bench, bench_flags), std::cout);
        }
    } catch (const gpad::Error& e) {
        std::cerr << "gpad: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
