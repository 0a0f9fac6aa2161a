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

// Covariance functions. A Kernel is a tree of leaves (rbf, matern32, linear,
// white, constant) joined by sum/product nodes; evaluation records tape ops so
// gradients reach the variance and lengthscale params.

#pragma once

#include "gpad/binding.hpp"
#include "gpad/param.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gpad {

class Kernel {
  public:
    enum class Kind { rbf, matern32, linear, white, constant, sum, product };

    struct Options {
        double variance = 1.0;
        double lengthscale = 1.0;
        bool ard = false;
        /// Input columns the kernel sees; empty means all of them.
        std::vector<std::size_t> active_dims;
    };

    /// Leaf kernel on inputs with `input_dim` columns.
    Kernel(Kind kind, std::size_t input_dim, Options opts);
    Kernel(Kind kind, std::size_t input_dim) : Kernel(kind, input_dim, Options{}) {}
    /// Composite (sum or product) over two or more children.
    static Kernel combine(Kind kind, std::vector<Kernel> children);

    Kind kind() const { return kind_; }
    std::size_t input_dim() const { return input_dim_; }
    const std::vector<Kernel>& children() const { return children_; }
    std::vector<Kernel>& children() { return children_; }
    bool ard() const { return ard_; }
    const std::vector<std::size_t>& active_dims() const { return active_dims_; }
    bool has_lengthscales() const { return kind_ == Kind::rbf || kind_ == Kind::matern32; }

    Param& variance();
    Param& lengthscales();

    /// Depth-first declaration order, names prefixed with `prefix`:
    /// `kernel.variance` for a leaf, `kernel.0.variance` under a composite.
    ParamRefs params();
    void set_prefix(const std::string& prefix);

    /// n x n covariance of x with itself.
    Var K(const Binding& b, Var x) const;
    /// n x m cross-covariance. White noise contributes zero here.
    Var K(const Binding& b, Var x1, Var x2) const;
    /// n x 1 diagonal of K(x), without forming the matrix.
    Var Kdiag(const Binding& b, Var x) const;

    /// Numeric evaluation at the current param values.
    Matrix kmatrix(const Matrix& x1, const Matrix* x2 = nullptr);
    Matrix kdiag(const Matrix& x);

    /// Structural expression, e.g. `sum(rbf(ard=true),white())`. Hyperparameter
    /// values are not part of it.
    std::string expression() const;

  private:
    Kernel() = default;
    void check_input(Var x) const;
    Var select(Var x) const;
    Var scaled(const Binding& b, Var x) const;
    Var leaf_cross(const Binding& b, Var x1, Var x2, bool same) const;

    Kind kind_ = Kind::rbf;
    std::size_t input_dim_ = 0;
    bool ard_ = false;
    std::vector<std::size_t> active_dims_;
    std::optional<Param> variance_;
    std::optional<Param> lengthscales_;
    std::vector<Kernel> children_;
};

std::string_view kernel_kind_name(Kernel::Kind k);

/// Parses `rbf()`, `matern32(ard=true, dims=[0,2])`, `sum(rbf(), white(variance=0.1))`,
/// `product(linear(), constant())`. Leaf keys: ard, variance, lengthscale, dims.
Kernel parse_kernel(std::string_view expr, std::size_t input_dim);

/// Squared Euclidean distances between rows, expanded form.
Var squared_distance(Var a, Var b);

} // namespace gpad
