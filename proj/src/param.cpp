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

#include "gpad/param.hpp"

#include "gpad/error.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace gpad {

std::string_view transform_name(Transform t)
{
    return t == Transform::identity ? "identity" : "positive";
}

Transform parse_transform(std::string_view name)
{
    if (name == "identity") {
        return Transform::identity;
    }
    if (name == "positive") {
        return Transform::positive;
    }
    throw ValueError("unknown transform '" + std::string(name) + "'");
}

double softplus(double x)
{
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double transform_forward(Transform t, double x)
{
    return t == Transform::identity ? x : softplus(x) + positive_shift;
}

double transform_backward(Transform t, double y)
{
    if (t == Transform::identity) {
        return y;
    }
    const double s = y - positive_shift;
    if (!(s > 0.0) || !std::isfinite(s)) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "value %.17g is outside the positive transform's image", y);
        throw ValueError(buf);
    }
    // log(exp(s) - 1) = s + log(1 - exp(-s))
    return s + std::log(-std::expm1(-s));
}

Matrix transform_forward(Transform t, const Matrix& x)
{
    Matrix y = x;
    for (auto& v : y.values()) {
        v = transform_forward(t, v);
    }
    return y;
}

Matrix transform_backward(Transform t, const Matrix& y)
{
    Matrix x = y;
    for (auto& v : x.values()) {
        v = transform_backward(t, v);
    }
    return x;
}

double log_jacobian(Transform t, const Matrix& x)
{
    if (t == Transform::identity) {
        return 0.0;
    }
    double s = 0.0;
    for (double v : x.values()) {
        s -= softplus(-v); // log sigmoid(v)
    }
    return s;
}

Prior Prior::gaussian(double mean, double variance)
{
    if (!(variance > 0.0) || !std::isfinite(mean)) {
        throw ValueError("gaussian prior needs a finite mean and positive variance");
    }
    return {Kind::gaussian, mean, variance};
}

Prior Prior::gamma(double shape, double rate)
{
    if (!(shape > 0.0) || !(rate > 0.0)) {
        throw ValueError("gamma prior needs positive shape and rate");
    }
    return {Kind::gamma, shape, rate};
}

Prior Prior::uniform(double low, double high)
{
    if (!(low < high) || !std::isfinite(low) || !std::isfinite(high)) {
        throw ValueError("uniform prior needs finite low < high");
    }
    return {Kind::uniform, low, high};
}

double Prior::log_density(double theta) const
{
    switch (kind) {
    case Kind::gaussian: {
        const double d = theta - a;
        return -0.5 * std::log(2.0 * std::numbers::pi * b) - 0.5 * d * d / b;
    }
    case Kind::gamma:
        if (!(theta > 0.0)) {
            throw ValueError("gamma prior evaluated at a non-positive value");
        }
        return a * std::log(b) - std::lgamma(a) + (a - 1.0) * std::log(theta) - b * theta;
    case Kind::uniform:
        if (theta < a || theta > b) {
            throw ValueError("value outside the uniform prior's support");
        }
        return -std::log(b - a);
    }
    return 0.0;
}

double Prior::log_density(const Matrix& theta) const
{
    double s = 0.0;
    for (double v : theta.values()) {
        s += log_density(v);
    }
    return s;
}

std::string Prior::str() const
{
    const char* names[] = {"gaussian", "gamma", "uniform"};
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s(%.17g,%.17g)", names[static_cast<int>(kind)], a, b);
    return buf;
}

Prior Prior::parse(std::string_view text)
{
    const auto open = text.find('(');
    const auto comma = text.find(',');
    const auto close = text.rfind(')');
    if (open == std::string_view::npos || comma == std::string_view::npos ||
        close != text.size() - 1 || !(open < comma && comma < close)) {
        throw ValueError("cannot parse prior '" + std::string(text) + "'");
    }
    auto number = [&](std::string_view s) {
        const std::string str(s);
        char* end = nullptr;
        const double v = std::strtod(str.c_str(), &end);
        if (str.empty() || end != str.c_str() + str.size()) {
            throw ValueError("cannot parse prior '" + std::string(text) + "'");
        }
        return v;
    };
    const std::string_view kind = text.substr(0, open);
    const double a = number(text.substr(open + 1, comma - open - 1));
    const double b = number(text.substr(comma + 1, close - comma - 1));
    if (kind == "gaussian" || kind == "normal") {
        return gaussian(a, b);
    }
    if (kind == "gamma") {
        return gamma(a, b);
    }
    if (kind == "uniform") {
        return uniform(a, b);
    }
    throw ValueError("unknown prior kind '" + std::string(kind) + "'");
}

Param::Param(std::string name, const Matrix& value, Transform transform)
    : name_(std::move(name)), unconstrained_(transform_backward(transform, value)),
      transform_(transform)
{
}

void Param::set_unconstrained(const Matrix& x)
{
    if (x.shape() != unconstrained_.shape()) {
        throw ShapeError("param " + name_ + " has shape " + shape().str() + ", got " +
                         x.shape().str());
    }
    unconstrained_ = x;
}

void Param::set_value(const Matrix& constrained)
{
    set_unconstrained(transform_backward(transform_, constrained));
}

std::size_t free_size(const ParamRefs& params)
{
    std::size_t n = 0;
    for (const Param* p : params) {
        if (!p->fixed()) {
            n += p->size();
        }
    }
    return n;
}

std::vector<double> free_state(const ParamRefs& params)
{
    std::vector<double> state;
    state.reserve(free_size(params));
    for (const Param* p : params) {
        if (!p->fixed()) {
            const auto v = p->unconstrained().values();
            state.insert(state.end(), v.begin(), v.end());
        }
    }
    return state;
}

void set_free_state(const ParamRefs& params, std::span<const double> state)
{
    if (state.size() != free_size(params)) {
        throw ShapeError("free state has " + std::to_string(state.size()) + " entries, expected " +
                         std::to_string(free_size(params)));
    }
    std::size_t offset = 0;
    for (Param* p : params) {
        if (p->fixed()) {
            continue;
        }
        const Shape s = p->shape();
        p->set_unconstrained(
            Matrix(s.rows, s.cols, {state.begin() + offset, state.begin() + offset + s.size()}));
        offset += s.size();
    }
}

Param& find_param(const ParamRefs& params, std::string_view name)
{
    for (Param* p : params) {
        if (p->name() == name) {
            return *p;
        }
    }
    throw ValueError("no parameter named '" + std::string(name) + "'");
}

nlohmann::json to_json(const Param& p)
{
    nlohmann::json j;
    j["name"] = p.name();
    j["transform"] = transform_name(p.transform());
    j["fixed"] = p.fixed();
    j["shape"] = {p.shape().rows, p.shape().cols};
    const auto v = p.unconstrained().values();
    j["unconstrained"] = std::vector<double>(v.begin(), v.end());
    if (p.prior()) {
        j["prior"] = p.prior()->str();
    } else {
        j["prior"] = nullptr;
    }
    return j;
}

void load_json(Param& p, const nlohmann::json& j)
{
    try {
        if (j.at("name").get<std::string>() != p.name()) {
            throw ValueError("snapshot entry '" + j.at("name").get<std::string>() +
                             "' does not match param '" + p.name() + "'");
        }
        if (parse_transform(j.at("transform").get<std::string>()) != p.transform()) {
            throw ValueError("transform mismatch for param '" + p.name() + "'");
        }
        const auto shape = j.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2) {
            throw ValueError("bad shape for param '" + p.name() + "'");
        }
        p.set_unconstrained(Matrix(shape[0], shape[1], j.at("unconstrained").get<std::vector<double>>()));
        p.set_fixed(j.at("fixed").get<bool>());
        if (j.at("prior").is_null()) {
            p.set_prior(std::nullopt);
        } else {
            p.set_prior(Prior::parse(j.at("prior").get<std::string>()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValueError("malformed param snapshot: " + std::string(e.what()));
    }
}

nlohmann::json snapshot(const ParamRefs& params)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const Param* p : params) {
        arr.push_back(to_json(*p));
    }
    return arr;
}

void restore(const ParamRefs& params, const nlohmann::json& j)
{
    if (!j.is_array() || j.size() != params.size()) {
        throw ValueError("param snapshot does not match the model's parameter list");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        load_json(*params[i], j[i]);
    }
}

namespace ad {

Var constrain(Transform t, Var x)
{
    if (t == Transform::identity) {
        return x;
    }
    return add_scalar(softplus(x), positive_shift);
}

Var log_jacobian(Transform t, Var x)
{
    if (t == Transform::identity) {
        return constant(x.tape(), 0.0);
    }
    return scale(sum(softplus(scale(x, -1.0))), -1.0);
}

Var log_prior(const Prior& p, Var theta)
{
    const double n = static_cast<double>(theta.shape().size());
    switch (p.kind) {
    case Prior::Kind::gaussian: {
        Var quad = scale(sum(square(add_scalar(theta, -p.a))), -0.5 / p.b);
        return add_scalar(quad, -0.5 * n * std::log(2.0 * std::numbers::pi * p.b));
    }
    case Prior::Kind::gamma: {
        Var s = sub(scale(sum(log(theta)), p.a - 1.0), scale(sum(theta), p.b));
        return add_scalar(s, n * (p.a * std::log(p.b) - std::lgamma(p.a)));
    }
    case Prior::Kind::uniform:
        // Checks the support on the current value; the density is flat inside.
        return constant(theta.tape(), p.log_density(theta.value()));
    }
    return constant(theta.tape(), 0.0);
}

} // namespace ad

} // namespace gpad
