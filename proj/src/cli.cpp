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

#include "gpad/cli.hpp"

#include "gpad/error.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

namespace gpad::cli {

namespace {

std::uint64_t seed_of(const Config& config, const CommonOptions& opts)
{
    return opts.seed.value_or(config.get_size("seed", 0));
}

std::size_t thread_count(std::size_t n)
{
    if (n == 0) {
        throw ConfigError("thread count must be at least 1");
    }
    return n;
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto a = item.find_first_not_of(" \t");
        const auto b = item.find_last_not_of(" \t");
        if (a != std::string::npos) {
            out.push_back(item.substr(a, b - a + 1));
        }
    }
    return out;
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) {
        throw IoError("cannot write " + path.string());
    }
}

void write_artifact(Model& model, const std::filesystem::path& path)
{
    write_text(path, model.to_json().dump(1) + "\n");
}

std::unique_ptr<Model> read_artifact(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

void prepare_out(const std::filesystem::path& out)
{
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec) {
        throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
    }
}

void write_trace(const Trace& trace, const std::filesystem::path& path, bool timing)
{
    Matrix rows(trace.size(), 3);
    for (std::size_t i = 0; i < trace.size(); ++i) {
        rows(i, 0) = static_cast<double>(trace[i].iteration);
        rows(i, 1) = trace[i].objective;
        rows(i, 2) = timing ? trace[i].seconds : 0.0;
    }
    write_csv(path, {"iteration", "objective", "seconds"}, rows);
}

} // namespace

Dataset load_data(const Config& config)
{
    if (const auto images = config.get("data.images")) {
        const auto labels = config.get("data.labels");
        if (!labels) {
            throw ConfigError("data.images needs a matching data.labels file");
        }
        return load_idx(config.resolve(*images), config.resolve(*labels), config.get_size("data.limit", 0));
    }
    const auto path = config.get("data");
    if (!path) {
        throw ConfigError("no training data: set `data = file.csv` or data.images/data.labels");
    }
    const double label = config.get_double("data.label", -1.0);
    return load_csv(config.resolve(*path), static_cast<int>(label), config.get_bool("data.header", true));
}

std::unique_ptr<Model> build_model(const Config& config, Dataset data)
{
    const ModelKind kind = parse_model_kind(config.get("model", "gpr"));
    Kernel kernel = parse_kernel(config.get("kernel", "rbf()"), data.input_dim());
    Likelihood lik = parse_likelihood(config.get("likelihood", "gaussian"));
    ModelOptions mo;
    mo.inducing = config.get_size("inducing", std::min<std::size_t>(10, data.size()));
    mo.whiten = config.get_bool("whiten", true);
    mo.train_z = config.get_bool("train_z", false);
    std::unique_ptr<Model> model = make_model(kind, std::move(data), std::move(kernel), std::move(lik), mo);
    if (const auto jitter = config.get("jitter")) {
        model->set_jitter(parse_jitter(*jitter));
    }
    const ParamRefs params = model->params();
    for (const std::string& name : split_list(config.get("fix", ""))) {
        find_param(params, name).set_fixed(true);
    }
    for (const auto& [name, text] : config.with_prefix("prior.")) {
        find_param(params, name).set_prior(Prior::parse(text));
    }
    return model;
}

Dataset synthetic_classes(std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed)
{
    if (n == 0 || d == 0 || classes < 2) {
        throw ConfigError("synthetic data needs n >= 1, d >= 1 and at least 2 classes");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit;
    std::normal_distribution<double> noise(0.0, 0.15);
    Matrix centers(classes, d);
    for (double& c : centers.values()) {
        c = unit(rng);
    }
    Dataset data{Matrix(n, d), Matrix(n, 1)};
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes;
        data.y[i] = static_cast<double>(c);
        for (std::size_t j = 0; j < d; ++j) {
            data.x(i, j) = centers(c, j) + noise(rng);
        }
    }
    return data;
}

void fit(const Config& config, const CommonOptions& opts,
         const std::optional<std::filesystem::path>& init, std::ostream& log)
{
    std::unique_ptr<Model> model = init ? read_artifact(*init) : build_model(config, load_data(config));
    if (is_mcmc(model->kind())) {
        throw ConfigError(std::string(model_kind_name(model->kind())) +
                          " is an MCMC model; use the sample command");
    }
    model->set_threads(thread_count(opts.threads.value_or(1)));
    MinimizeOptions mo;
    mo.iterations = config.get_size("iters", 1000);
    mo.adam.rate = config.get_double("rate", 0.01);
    mo.batch_size = config.get_size("minibatch", 0);
    mo.seed = seed_of(config, opts);
    prepare_out(opts.out);
    const Trace trace = minimize(*model, mo);
    write_artifact(*model, opts.out / "model.json");
    write_trace(trace, opts.out / "trace.csv", opts.timing);
    log << model_kind_name(model->kind()) << ": " << trace.size() << " iterations";
    if (!trace.empty()) {
        log << ", loss " << format_double(trace.front().objective) << " -> "
            << format_double(trace.back().objective);
    }
    log << "\n";
}

void predict(const std::filesystem::path& artifact, const std::filesystem::path& input,
             bool header, const CommonOptions& opts, std::ostream& log)
{
    std::unique_ptr<Model> model = read_artifact(artifact);
    model->set_threads(thread_count(opts.threads.value_or(1)));
    const Table table = read_csv(input, header);
    if (table.values.cols() != model->data().input_dim()) {
        throw ShapeError(input.string() + " has " + std::to_string(table.values.cols()) +
                         " columns but the model was trained on " +
                         std::to_string(model->data().input_dim()) + " features");
    }
    const Predictive p = model->predict_y(table.values);
    std::vector<std::string> names;
    Matrix rows;
    if (model->likelihood().kind() == Likelihood::Kind::multiclass) {
        rows = p.mean;
        for (std::size_t c = 0; c < p.mean.cols(); ++c) {
            names.push_back("p" + std::to_string(c));
        }
    } else {
        rows = Matrix(p.mean.rows(), 2);
        for (std::size_t i = 0; i < rows.rows(); ++i) {
            rows(i, 0) = p.mean[i];
            rows(i, 1) = p.variance[i];
        }
        names = {"mean", "variance"};
    }
    prepare_out(opts.out);
    write_csv(opts.out / "predictions.csv", names, rows);
    log << "predicted " << rows.rows() << " rows\n";
}

void sample(const Config& config, const CommonOptions& opts, std::ostream& log)
{
    std::unique_ptr<Model> model = build_model(config, load_data(config));
    if (!is_mcmc(model->kind())) {
        throw ConfigError("sample needs model = gpmc or sgpmc; " +
                          std::string(model_kind_name(model->kind())) + " is fitted with the fit command");
    }
    model->set_threads(thread_count(opts.threads.value_or(1)));
    const ParamRefs params = model->params();
    for (const Param* p : params) {
        if (p->name() != "v" && !p->fixed() && !p->prior()) {
            throw ConfigError("missing prior for sampled parameter '" + p->name() + "'; add `prior." +
                              p->name() + " = gamma(2,1)` or list it under `fix`");
        }
    }
    HmcOptions ho;
    ho.step = config.get_double("hmc.step", ho.step);
    ho.leapfrog = config.get_size("hmc.leapfrog", ho.leapfrog);
    ho.samples = config.get_size("hmc.samples", ho.samples);
    ho.burn = config.get_size("hmc.burn", ho.burn);
    ho.seed = seed_of(config, opts);
    const Chain chain = hmc_sample(*model, ho);

    std::vector<std::string> names = {"log_target"};
    std::vector<const Param*> hyper;
    for (const Param* p : params) {
        if (p->fixed()) {
            continue;
        }
        for (std::size_t k = 0; k < p->size(); ++k) {
            names.push_back("free." + p->name() + "." + std::to_string(k));
        }
        if (p->name().rfind("kernel.", 0) == 0 || p->name().rfind("likelihood.", 0) == 0) {
            hyper.push_back(p);
        }
    }
    for (const Param* p : hyper) {
        for (std::size_t k = 0; k < p->size(); ++k) {
            names.push_back(p->name() + "." + std::to_string(k));
        }
    }
    Matrix rows(chain.samples.size(), names.size());
    for (std::size_t i = 0; i < chain.samples.size(); ++i) {
        std::size_t col = 0;
        rows(i, col++) = chain.log_target[i];
        for (double x : chain.samples[i]) {
            rows(i, col++) = x;
        }
        set_free_state(params, chain.samples[i]);
        for (const Param* p : hyper) {
            const Matrix value = p->value();
            for (double x : value.values()) {
                rows(i, col++) = x;
            }
        }
    }
    set_free_state(params, chain.last);
    prepare_out(opts.out);
    write_csv(opts.out / "chain.csv", names, rows);
    write_artifact(*model, opts.out / "model.json");
    log << model_kind_name(model->kind()) << ": " << chain.samples.size()
        << " samples, acceptance " << format_double(chain.acceptance_rate()) << "\n";
}

std::vector<BenchRow> bench(const Config& config, const CommonOptions& opts, std::ostream& log)
{
    const std::uint64_t seed = seed_of(config, opts);
    Dataset data = config.has("data") || config.has("data.images")
                       ? load_data(config)
                       : synthetic_classes(config.get_size("bench.n", 1000), config.get_size("bench.d", 64),
                                           config.get_size("bench.classes", 10), seed);
    std::vector<std::size_t> threads = config.get_sizes("threads", {1, 2, 3, 4, 5, 6});
    if (opts.threads) {
        const std::size_t cap = thread_count(*opts.threads);
        std::erase_if(threads, [cap](std::size_t t) { return t > cap; });
    }
    for (std::size_t t : threads) {
        thread_count(t);
    }
    if (threads.empty()) {
        throw ConfigError("no thread counts left to benchmark");
    }
    const std::vector<std::size_t> batches = config.get_sizes("minibatch", {200});
    const std::size_t repeats = config.get_size("repeats", 5);
    const std::size_t iterations = config.get_size("iters", 50);
    if (repeats == 0 || iterations == 0) {
        throw ConfigError("bench needs at least one repeat and one iteration");
    }
    Config model_config = config;
    model_config.set("model", "svgp");
    if (!config.has("likelihood")) {
        std::size_t classes = 0;
        for (double y : data.y.values()) {
            classes = std::max(classes, static_cast<std::size_t>(y) + 1);
        }
        model_config.set("likelihood", "multiclass:" + std::to_string(std::max<std::size_t>(classes, 2)));
    }
    if (!config.has("inducing")) {
        model_config.set("inducing", std::to_string(std::min<std::size_t>(100, data.size())));
    }
    MinimizeOptions mo;
    mo.iterations = iterations;
    mo.adam.rate = config.get_double("rate", 0.001);

    std::vector<BenchRow> rows;
    for (std::size_t t : threads) {
        for (std::size_t b : batches) {
            BenchRow row{rows.size(), t, b, 0, repeats, iterations, 0.0, 0.0, 0.0};
            std::vector<double> rates;
            for (std::size_t r = 0; r < repeats; ++r) {
                // Data loading and model construction stay outside the timed loop.
                std::unique_ptr<Model> model = build_model(model_config, data);
                model->set_threads(t);
                row.inducing = model_config.get_size("inducing", 0);
                mo.batch_size = b;
                mo.seed = seed + r;
                const Trace trace = minimize(*model, mo);
                rates.push_back(static_cast<double>(iterations) / trace.back().seconds);
                row.final_objective = trace.back().objective;
            }
            for (double x : rates) {
                row.rate_mean += x / static_cast<double>(repeats);
            }
            for (double x : rates) {
                row.rate_std += (x - row.rate_mean) * (x - row.rate_mean);
            }
            row.rate_std = repeats > 1 ? std::sqrt(row.rate_std / static_cast<double>(repeats - 1)) : 0.0;
            log << "threads=" << t << " minibatch=" << b << ": " << format_double(row.rate_mean)
                << " +- " << format_double(row.rate_std) << " it/s\n";
            rows.push_back(row);
        }
    }

    Matrix table(rows.size(), 9);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const BenchRow& r = rows[i];
        const double v[] = {static_cast<double>(r.config), static_cast<double>(r.threads),
                            static_cast<double>(r.minibatch), static_cast<double>(r.inducing),
                            static_cast<double>(r.repeats), static_cast<double>(r.iterations),
                            r.rate_mean, r.rate_std, r.final_objective};
        for (std::size_t j = 0; j < 9; ++j) {
            table(i, j) = v[j];
        }
    }
    prepare_out(opts.out);
    write_csv(opts.out / "bench.csv",
              {"config", "threads", "minibatch", "inducing", "repeats", "iterations", "iters_per_sec_mean",
               "iters_per_sec_std", "final_objective"},
              table);
    return rows;
}

} // namespace gpad::cli
