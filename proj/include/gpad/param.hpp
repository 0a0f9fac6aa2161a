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

// Constrained parameters. A Param stores its unconstrained value; optimizers
// and samplers move that value while models read the constrained one.

#pragma once

#include "gpad/adgraph.hpp"
#include "gpad/matrix.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gpad {

enum class Transform { identity, positive };

/// Floor added after softplus so positive values never reach zero.
inline constexpr double positive_shift = 1e-6;

std::string_view transform_name(Transform t);
Transform parse_transform(std::string_view name);

double softplus(double x);
double transform_forward(Transform t, double x);
/// Throws ValueError when y lies outside the image of the forward map.
double transform_backward(Transform t, double y);
Matrix transform_forward(Transform t, const Matrix& x);
Matrix transform_backward(Transform t, const Matrix& y);
/// Sum over entries of log |d forward / dx|.
double log_jacobian(Transform t, const Matrix& x);

struct Prior {
    enum class Kind { gaussian, gamma, uniform };

    Kind kind = Kind::gaussian;
    double a = 0.0; // mean | shape | low
    double b = 1.0; // variance | rate | high

    static Prior gaussian(double mean, double variance);
    static Prior gamma(double shape, double rate);
    static Prior uniform(double low, double high);

    /// Log density at a constrained value. Uniform priors throw ValueError
    /// outside their support.
    double log_density(double theta) const;
    double log_density(const Matrix& theta) const;

    /// `gaussian(0,1)`, `gamma(2,1)`, `uniform(0,5)`.
    std::string str() const;
    static Prior parse(std::string_view text);
};

class Param {
  public:
    Param() = default;
    /// Initializes from a constrained value.
    Param(std::string name, const Matrix& value, Transform transform = Transform::identity);

    const std::string& name() const { return name_; }
    void rename(std::string name) { name_ = std::move(name); }
    Transform transform() const { return transform_; }
    Shape shape() const { return unconstrained_.shape(); }
    std::size_t size() const { return unconstrained_.size(); }

    const Matrix& unconstrained() const { return unconstrained_; }
    void set_unconstrained(const Matrix& x);
    Matrix value() const { return transform_forward(transform_, unconstrained_); }
    void set_value(const Matrix& constrained);

    bool fixed() const { return fixed_; }
    void set_fixed(bool f) { fixed_ = f; }

    const std::optional<Prior>& prior() const { return prior_; }
    void set_prior(std::optional<Prior> p) { prior_ = p; }

  private:
    std::string name_;
    Matrix unconstrained_;
    Transform transform_ = Transform::identity;
    bool fixed_ = false;
    std::optional<Prior> prior_;
};

using ParamRefs = std::vector<Param*>;

/// Concatenated unconstrained values of the non-fixed params, in list order.
std::vector<double> free_state(const ParamRefs& params);
void set_free_state(const ParamRefs& params, std::span<const double> state);
std::size_t free_size(const ParamRefs& params);

/// Looks a param up by name; throws ValueError when absent.
Param& find_param(const ParamRefs& params, std::string_view name);

nlohmann::json to_json(const Param& p);
/// Restores unconstrained values, fixed flag and prior into an existing param
/// after checking name, transform and shape.
void load_json(Param& p, const nlohmann::json& j);
nlohmann::json snapshot(const ParamRefs& params);
void restore(const ParamRefs& params, const nlohmann::json& j);

namespace ad {

Var constrain(Transform t, Var x);
Var log_jacobian(Transform t, Var x);
/// Summed log prior density over the entries of a constrained value.
Var log_prior(const Prior& p, Var theta);

} // namespace ad

} // namespace gpad
