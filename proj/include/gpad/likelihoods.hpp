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

// Observation models. Latent values arrive as n x L matrices (L = 1 except
// for multiclass, where L = C); observations as an n x 1 column, holding
// integer class labels for multiclass.

#pragma once

#include "gpad/binding.hpp"
#include "gpad/param.hpp"
#include "gpad/quadrature.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace gpad {

/// Standard normal cdf via erfc.
double normal_cdf(double z);
double normal_pdf(double z);
/// log Phi(z), accurate in the far left tail.
double log_normal_cdf(double z);
/// phi(z) / Phi(z).
double inverse_mills(double z);

struct Predictive {
    Matrix mean;     // n x L (multiclass: n x C class probabilities)
    Matrix variance; // same shape
};

class Likelihood {
  public:
    enum class Kind { gaussian, bernoulli, poisson, multiclass };

    static Likelihood gaussian(double variance = 1.0);
    static Likelihood bernoulli();
    static Likelihood poisson();
    static Likelihood multiclass(std::size_t classes, double epsilon = 1e-3);

    Kind kind() const { return kind_; }
    std::size_t num_latent() const { return kind_ == Kind::multiclass ? classes_ : 1; }
    std::size_t num_classes() const { return classes_; }

    /// Gaussian: likelihood.variance. Multiclass: likelihood.epsilon (fixed by default).
    ParamRefs params();
    Param& variance();
    Param& epsilon();

    void set_quadrature_points(std::size_t h);
    std::size_t quadrature_points() const { return rule_->size(); }

    /// Throws ValueError for observations outside the likelihood's domain.
    void validate(const Matrix& y) const;

    // Per-datum numeric forms; f, mu, v hold num_latent() entries.
    double log_prob(std::span<const double> f, double y) const;
    double variational_expectation(std::span<const double> mu, std::span<const double> v,
                                   double y) const;
    Predictive predict(const Matrix& mu, const Matrix& v) const;

    /// n x 1 log densities on the tape.
    Var log_prob(const Binding& b, Var f, const Matrix& y) const;
    /// n x 1 expectations of log p(y|f) under independent N(mu, v) marginals.
    /// Tiny negative v from rounding is treated as 0.
    Var variational_expectations(const Binding& b, Var mu, Var v, const Matrix& y) const;

    /// `gaussian`, `bernoulli`, `poisson`, `multiclass:C`.
    std::string spec() const;

  private:
    Likelihood(Kind kind, std::size_t classes);
    double param_value() const;

    Kind kind_;
    std::size_t classes_ = 1;
    std::optional<Param> param_;
    const QuadratureRule* rule_;
};

Likelihood parse_likelihood(std::string_view spec);

} // namespace gpad
