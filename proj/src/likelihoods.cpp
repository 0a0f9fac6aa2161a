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

#include "gpad/likelihoods.hpp"

#include "gpad/error.hpp"
#include "gpad/parallel.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <numbers>
#include <vector>

namespace gpad {

namespace {

constexpr double log_2pi = 1.8378770664093454836;
const double inv_sqrt_pi = 1.0 / std::sqrt(std::numbers::pi);

// 1 - 1/z^2 + 3/z^4 - 15/z^6 + 105/z^8, the tail series of Phi(z) z / -phi(z).
double tail_series(double z)
{
    const double r = 1.0 / (z * z);
    return 1.0 - r * (1.0 - r * (3.0 - r * (15.0 - r * 105.0)));
}

constexpr double tail_cut = -30.0;

} // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_pdf(double z) { return std::exp(-0.5 * z * z - 0.5 * log_2pi); }

double log_normal_cdf(double z)
{
    if (z > tail_cut) {
        return std::log(normal_cdf(z));
    }
    return -0.5 * z * z - 0.5 * log_2pi - std::log(-z) + std::log(tail_series(z));
}

double inverse_mills(double z)
{
    if (z > tail_cut) {
        return normal_pdf(z) / normal_cdf(z);
    }
    return -z / tail_series(z);
}

namespace {

using Kind = Likelihood::Kind;

// Per-datum evaluation shared by the numeric API and the tape op. theta is
// the gaussian noise variance or the robust-max epsilon.
struct Core {
    Kind kind;
    std::size_t classes;
    const QuadratureRule* rule;

    // Scalar log densities with first and second derivatives in f.
    double scalar(double f, double y, double* d1, double* d2) const
    {
        if (kind == Kind::bernoulli) {
            const double s = 2.0 * y - 1.0;
            const double z = s * f;
            const double m = inverse_mills(z);
            if (d1 != nullptr) {
                *d1 = s * m;
            }
            if (d2 != nullptr) {
                *d2 = -m * (z + m);
            }
            return log_normal_cdf(z);
        }
        // poisson
        const double e = std::exp(f);
        if (d1 != nullptr) {
            *d1 = y - e;
        }
        if (d2 != nullptr) {
            *d2 = -e;
        }
        return y * f - e - std::lgamma(y + 1.0);
    }

    double log_prob(const double* f, double y, double theta, double* df, double* dtheta) const
    {
        switch (kind) {
        case Kind::gaussian: {
            const double r = y - f[0];
            if (df != nullptr) {
                df[0] = r / theta;
                *dtheta = -0.5 / theta + 0.5 * r * r / (theta * theta);
            }
            return -0.5 * (log_2pi + std::log(theta)) - 0.5 * r * r / theta;
        }
        case Kind::bernoulli:
        case Kind::poisson:
            return scalar(f[0], y, df, nullptr);
        case Kind::multiclass: {
            const std::size_t label = static_cast<std::size_t>(y);
            std::size_t best = 0;
            for (std::size_t c = 1; c < classes; ++c) {
                if (f[c] > f[best]) {
                    best = c;
                }
            }
            const double other = theta / static_cast<double>(classes - 1);
            if (df != nullptr) {
                for (std::size_t c = 0; c < classes; ++c) {
                    df[c] = 0.0;
                }
                *dtheta = best == label ? -1.0 / (1.0 - theta) : 1.0 / theta;
            }
            return best == label ? std::log1p(-theta) : std::log(other);
        }
        }
        return 0.0;
    }

    // P(argmax = y) under independent N(mu_c, v_c) and its partial derivatives.
    double argmax_prob(const double* mu, const double* v, std::size_t y, double* dmu,
                       double* dv) const
    {
        const std::size_t c_n = classes;
        const bool grads = dmu != nullptr;
        if (grads) {
            for (std::size_t c = 0; c < c_n; ++c) {
                dmu[c] = 0.0;
                dv[c] = 0.0;
            }
        }
        std::vector<double> a(c_n), cdf(c_n), pdf(c_n), prefix(c_n + 1), suffix(c_n + 1);
        const double sy = std::sqrt(2.0 * v[y]);
        double p = 0.0;
        for (std::size_t h = 0; h < rule->size(); ++h) {
            const double x = rule->nodes[h];
            const double w = rule->weights[h] * inv_sqrt_pi;
            const double fy = mu[y] + sy * x;
            for (std::size_t j = 0; j < c_n; ++j) {
                if (j == y) {
                    cdf[j] = 1.0;
                    pdf[j] = 0.0;
                    continue;
                }
                const double diff = fy - mu[j];
                if (v[j] > 0.0) {
                    a[j] = diff / std::sqrt(v[j]);
                    cdf[j] = normal_cdf(a[j]);
                    pdf[j] = normal_pdf(a[j]);
                } else {
                    a[j] = 0.0;
                    cdf[j] = diff > 0.0 ? 1.0 : (diff < 0.0 ? 0.0 : 0.5);
                    pdf[j] = 0.0;
                }
            }
            prefix[0] = 1.0;
            for (std::size_t j = 0; j < c_n; ++j) {
                prefix[j + 1] = prefix[j] * cdf[j];
            }
            suffix[c_n] = 1.0;
            for (std::size_t j = c_n; j-- > 0;) {
                suffix[j] = suffix[j + 1] * cdf[j];
            }
            p += w * prefix[c_n];
            if (!grads) {
                continue;
            }
            for (std::size_t j = 0; j < c_n; ++j) {
                if (j == y || pdf[j] == 0.0) {
                    continue;
                }
                // dP/da_j, with a_j = (mu_y + sy x - mu_j) / sqrt(v_j).
                const double g = w * pdf[j] * prefix[j] * suffix[j + 1];
                const double inv_sj = 1.0 / std::sqrt(v[j]);
                dmu[y] += g * inv_sj;
                dmu[j] -= g * inv_sj;
                dv[j] -= g * a[j] / (2.0 * v[j]);
                if (v[y] > 0.0) {
                    dv[y] += g * inv_sj * x / sy;
                }
            }
        }
        if (grads && !(v[y] > 0.0)) {
            // d/dv_y E[P(f_y)] = E[P''(f_y)] / 2, evaluated at f_y = mu_y.
            dv[y] = 0.5 * second_derivative(mu, v, y);
        }
        return p;
    }

    // d^2/df^2 of prod_{j != y} Phi((f - mu_j)/sqrt(v_j)) at f = mu_y.
    double second_derivative(const double* mu, const double* v, std::size_t y) const
    {
        const std::size_t c_n = classes;
        std::vector<double> cdf(c_n, 1.0), pdf(c_n, 0.0), dpdf(c_n, 0.0), scale(c_n, 0.0);
        for (std::size_t j = 0; j < c_n; ++j) {
            if (j == y) {
                continue;
            }
            const double diff = mu[y] - mu[j];
            if (v[j] > 0.0) {
                scale[j] = 1.0 / std::sqrt(v[j]);
                const double a = diff * scale[j];
                cdf[j] = normal_cdf(a);
                pdf[j] = normal_pdf(a);
                dpdf[j] = -a * pdf[j];
            } else {
                cdf[j] = diff > 0.0 ? 1.0 : (diff < 0.0 ? 0.0 : 0.5);
            }
        }
        auto others = [&](std::size_t skip1, std::size_t skip2) {
            double prod = 1.0;
            for (std::size_t l = 0; l < c_n; ++l) {
                if (l != skip1 && l != skip2) {
                    prod *= cdf[l];
                }
            }
            return prod;
        };
        double total = 0.0;
        for (std::size_t j = 0; j < c_n; ++j) {
            if (j == y || scale[j] == 0.0) {
                continue;
            }
            total += scale[j] * scale[j] * dpdf[j] * others(j, j);
            for (std::size_t k = 0; k < c_n; ++k) {
                if (k == y || k == j || scale[k] == 0.0) {
                    continue;
                }
                total += scale[j] * scale[k] * pdf[j] * pdf[k] * others(j, k);
            }
        }
        return total;
    }

    double variational_expectation(const double* mu, const double* v, double y, double theta,
                                   double* dmu, double* dv, double* dtheta) const
    {
        switch (kind) {
        case Kind::gaussian: {
            const double r = y - mu[0];
            const double q = r * r + v[0];
            if (dmu != nullptr) {
                dmu[0] = r / theta;
                dv[0] = -0.5 / theta;
                *dtheta = -0.5 / theta + 0.5 * q / (theta * theta);
            }
            return -0.5 * (log_2pi + std::log(theta)) - 0.5 * q / theta;
        }
        case Kind::bernoulli:
        case Kind::poisson: {
            const double s = std::sqrt(2.0 * v[0]);
            double acc = 0.0;
            double gm = 0.0;
            double gv = 0.0;
            const bool grads = dmu != nullptr;
            for (std::size_t h = 0; h < rule->size(); ++h) {
                const double x = rule->nodes[h];
                const double w = rule->weights[h];
                double d1 = 0.0;
                double d2 = 0.0;
                acc += w * scalar(mu[0] + s * x, y, grads ? &d1 : nullptr,
                                  grads && s == 0.0 ? &d2 : nullptr);
                gm += w * d1;
                gv += s > 0.0 ? w * d1 * x / s : 0.5 * w * d2;
            }
            if (grads) {
                dmu[0] = gm * inv_sqrt_pi;
                dv[0] = gv * inv_sqrt_pi;
                *dtheta = 0.0;
            }
            return acc * inv_sqrt_pi;
        }
        case Kind::multiclass: {
            const std::size_t label = static_cast<std::size_t>(y);
            const double p = argmax_prob(mu, v, label, dmu, dv);
            const double hit = std::log1p(-theta);
            const double miss = std::log(theta / static_cast<double>(classes - 1));
            if (dmu != nullptr) {
                for (std::size_t c = 0; c < classes; ++c) {
                    dmu[c] *= hit - miss;
                    dv[c] *= hit - miss;
                }
                *dtheta = -p / (1.0 - theta) + (1.0 - p) / theta;
            }
            return p * hit + (1.0 - p) * miss;
        }
        }
        return 0.0;
    }
};

class LikelihoodOp final : public FusedOp {
  public:
    LikelihoodOp(Core core, bool expectation, Matrix y)
        : core_(core), expectation_(expectation), y_(std::move(y))
    {
    }

    std::string name() const override
    {
        return expectation_ ? "variational_expectations" : "log_prob";
    }

    Shape output_shape(std::span<const Shape> in) const override
    {
        const std::size_t latent = core_.kind == Kind::multiclass ? core_.classes : 1;
        const std::size_t want = expectation_ ? 3 : 2;
        if (in.size() != want) {
            throw ShapeError(name() + " expects " + std::to_string(want) + " inputs");
        }
        const Shape f = in[0];
        if (f.cols != latent || f.rows != y_.rows() || (expectation_ && in[1] != f) ||
            in.back() != Shape{1, 1}) {
            throw ShapeError(name() + ": latent " + f.str() + " does not match " +
                             std::to_string(y_.rows()) + " observations x " + std::to_string(latent));
        }
        return {f.rows, 1};
    }

    Matrix forward(std::span<const Matrix* const> in, WorkerPool* pool) const override
    {
        const Matrix& f = *in[0];
        const double theta = in.back()->item();
        Matrix out(f.rows(), 1);
        parallel_for(pool, f.rows(), work(), [&](std::size_t begin, std::size_t end) {
            std::vector<double> v(f.cols());
            for (std::size_t i = begin; i < end; ++i) {
                if (expectation_) {
                    clamp_row(*in[1], i, v);
                    out[i] = core_.variational_expectation(f.row(i).data(), v.data(), y_[i], theta,
                                                           nullptr, nullptr, nullptr);
                } else {
                    out[i] = core_.log_prob(f.row(i).data(), y_[i], theta, nullptr, nullptr);
                }
            }
        });
        return out;
    }

    void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& adj,
                  std::span<Matrix> grads, WorkerPool* pool) const override
    {
        const Matrix& f = *in[0];
        const std::size_t n = f.rows();
        const std::size_t l = f.cols();
        const double theta = in.back()->item();
        Matrix dmu(n, l);
        Matrix dv(n, l);
        std::vector<double> dtheta(n);
        parallel_for(pool, n, work(), [&](std::size_t begin, std::size_t end) {
            std::vector<double> v(l);
            for (std::size_t i = begin; i < end; ++i) {
                if (expectation_) {
                    clamp_row(*in[1], i, v);
                    core_.variational_expectation(f.row(i).data(), v.data(), y_[i], theta,
                                                  dmu.row(i).data(), dv.row(i).data(), &dtheta[i]);
                } else {
                    core_.log_prob(f.row(i).data(), y_[i], theta, dmu.row(i).data(), &dtheta[i]);
                }
            }
        });
        double gt = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            gt += adj[i] * dtheta[i];
            for (std::size_t c = 0; c < l; ++c) {
                if (!grads[0].empty()) {
                    grads[0](i, c) += adj[i] * dmu(i, c);
                }
                if (expectation_ && !grads[1].empty()) {
                    grads[1](i, c) += adj[i] * dv(i, c);
                }
            }
        }
        if (!grads.back().empty()) {
            grads.back()[0] += gt;
        }
    }

  private:
    std::size_t work() const
    {
        const std::size_t q = core_.kind == Kind::gaussian ? 1 : core_.rule->size();
        return q * core_.classes * 20;
    }

    static void clamp_row(const Matrix& v, std::size_t i, std::vector<double>& out)
    {
        for (std::size_t c = 0; c < v.cols(); ++c) {
            out[c] = std::max(v(i, c), 0.0);
        }
    }

    Core core_;
    bool expectation_;
    Matrix y_;
};

} // namespace

Likelihood::Likelihood(Kind kind, std::size_t classes)
    : kind_(kind), classes_(classes), rule_(&cached_hermite_rule())
{
}

Likelihood Likelihood::gaussian(double variance)
{
    Likelihood l(Kind::gaussian, 1);
    l.param_.emplace("likelihood.variance", Matrix::scalar(variance), Transform::positive);
    return l;
}

Likelihood Likelihood::bernoulli() { return {Kind::bernoulli, 1}; }

Likelihood Likelihood::poisson() { return {Kind::poisson, 1}; }

Likelihood Likelihood::multiclass(std::size_t classes, double epsilon)
{
    if (classes < 2) {
        throw ValueError("multiclass likelihood needs at least two classes");
    }
    if (!(epsilon > 0.0 && epsilon < 1.0)) {
        throw ValueError("robust-max epsilon must lie in (0, 1)");
    }
    Likelihood l(Kind::multiclass, classes);
    l.param_.emplace("likelihood.epsilon", Matrix::scalar(epsilon), Transform::positive);
    l.param_->set_fixed(true);
    return l;
}

ParamRefs Likelihood::params()
{
    if (param_) {
        return {&*param_};
    }
    return {};
}

Param& Likelihood::variance()
{
    if (kind_ != Kind::gaussian) {
        throw ValueError("only the gaussian likelihood has a noise variance");
    }
    return *param_;
}

Param& Likelihood::epsilon()
{
    if (kind_ != Kind::multiclass) {
        throw ValueError("only the multiclass likelihood has an epsilon");
    }
    return *param_;
}

void Likelihood::set_quadrature_points(std::size_t h) { rule_ = &cached_hermite_rule(h); }

double Likelihood::param_value() const { return param_ ? param_->value().item() : 0.0; }

void Likelihood::validate(const Matrix& y) const
{
    if (y.cols() != 1) {
        throw ShapeError("observations must be an n x 1 column, got " + y.shape().str());
    }
    for (std::size_t i = 0; i < y.rows(); ++i) {
        const double v = y[i];
        bool ok = std::isfinite(v);
        switch (kind_) {
        case Kind::gaussian: break;
        case Kind::bernoulli: ok = ok && (v == 0.0 || v == 1.0); break;
        case Kind::poisson: ok = ok && v >= 0.0 && v == std::floor(v); break;
        case Kind::multiclass:
            ok = ok && v >= 0.0 && v == std::floor(v) && v < static_cast<double>(classes_);
            break;
        }
        if (!ok) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "observation %zu = %.17g is invalid for the %s likelihood", i,
                          v, spec().c_str());
            throw ValueError(buf);
        }
    }
}

double Likelihood::log_prob(std::span<const double> f, double y) const
{
    if (f.size() != num_latent()) {
        throw ShapeError("log_prob expects " + std::to_string(num_latent()) + " latent values");
    }
    validate(Matrix::scalar(y));
    return Core{kind_, classes_, rule_}.log_prob(f.data(), y, param_value(), nullptr, nullptr);
}

double Likelihood::variational_expectation(std::span<const double> mu, std::span<const double> v,
                                           double y) const
{
    if (mu.size() != num_latent() || v.size() != num_latent()) {
        throw ShapeError("variational_expectation expects " + std::to_string(num_latent()) +
                         " means and variances");
    }
    for (double x : v) {
        if (x < 0.0) {
            throw ValueError("negative variance in variational expectation");
        }
    }
    validate(Matrix::scalar(y));
    return Core{kind_, classes_, rule_}.variational_expectation(mu.data(), v.data(), y, param_value(),
                                                                 nullptr, nullptr, nullptr);
}

Predictive Likelihood::predict(const Matrix& mu, const Matrix& v) const
{
    if (mu.shape() != v.shape() || mu.cols() != num_latent()) {
        throw ShapeError("predict expects matching n x " + std::to_string(num_latent()) +
                         " means and variances");
    }
    for (double x : v.values()) {
        if (x < 0.0) {
            throw ValueError("negative variance in predict");
        }
    }
    const std::size_t n = mu.rows();
    Predictive out{Matrix(n, num_latent()), Matrix(n, num_latent())};
    const Core core{kind_, classes_, rule_};
    for (std::size_t i = 0; i < n; ++i) {
        switch (kind_) {
        case Kind::gaussian:
            out.mean[i] = mu[i];
            out.variance[i] = v[i] + param_value();
            break;
        case Kind::bernoulli: {
            const double p = normal_cdf(mu[i] / std::sqrt(1.0 + v[i]));
            out.mean[i] = p;
            out.variance[i] = p * (1.0 - p);
            break;
        }
        case Kind::poisson: {
            const double m = std::exp(mu[i] + 0.5 * v[i]);
            out.mean[i] = m;
            out.variance[i] = m + std::expm1(v[i]) * std::exp(2.0 * mu[i] + v[i]);
            break;
        }
        case Kind::multiclass: {
            const double eps = param_value();
            std::vector<double> p(classes_);
            double total = 0.0;
            for (std::size_t c = 0; c < classes_; ++c) {
                p[c] = core.argmax_prob(mu.row(i).data(), v.row(i).data(), c, nullptr, nullptr);
                total += p[c];
            }
            for (std::size_t c = 0; c < classes_; ++c) {
                const double pc = p[c] / total;
                const double prob = (1.0 - eps) * pc + eps / static_cast<double>(classes_ - 1) * (1.0 - pc);
                out.mean(i, c) = prob;
                out.variance(i, c) = prob * (1.0 - prob);
            }
            break;
        }
        }
    }
    return out;
}

Var Likelihood::log_prob(const Binding& b, Var f, const Matrix& y) const
{
    validate(y);
    auto op = std::make_shared<LikelihoodOp>(Core{kind_, classes_, rule_}, false, y);
    Var theta = param_ ? b[*param_] : ad::constant(f.tape(), 0.0);
    return ad::fused(op, {f, theta});
}

Var Likelihood::variational_expectations(const Binding& b, Var mu, Var v, const Matrix& y) const
{
    validate(y);
    auto op = std::make_shared<LikelihoodOp>(Core{kind_, classes_, rule_}, true, y);
    Var theta = param_ ? b[*param_] : ad::constant(mu.tape(), 0.0);
    return ad::fused(op, {mu, v, theta});
}

std::string Likelihood::spec() const
{
    switch (kind_) {
    case Kind::gaussian: return "gaussian";
    case Kind::bernoulli: return "bernoulli";
    case Kind::poisson: return "poisson";
    case Kind::multiclass: return "multiclass:" + std::to_string(classes_);
    }
    return "";
}

Likelihood parse_likelihood(std::string_view spec)
{
    if (spec == "gaussian") {
        return Likelihood::gaussian();
    }
    if (spec == "bernoulli") {
        return Likelihood::bernoulli();
    }
    if (spec == "poisson") {
        return Likelihood::poisson();
    }
    constexpr std::string_view prefix = "multiclass:";
    if (spec.substr(0, prefix.size()) == prefix) {
        const std::string digits(spec.substr(prefix.size()));
        char* end = nullptr;
        const long c = std::strtol(digits.c_str(), &end, 10);
        if (!digits.empty() && end == digits.c_str() + digits.size() && c >= 2) {
            return Likelihood::multiclass(static_cast<std::size_t>(c));
        }
    }
    throw ConfigError("unknown likelihood '" + std::string(spec) +
                      "' (expected gaussian, bernoulli, poisson or multiclass:C)");
}

} // namespace gpad
