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

#include "gpad/kernels.hpp"

#include "gpad/error.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <memory>

namespace gpad {

namespace {

const double sqrt3 = std::sqrt(3.0);

// (1 + sqrt3 r) exp(-sqrt3 r) as a function of r^2, with negative r^2 from
// cancellation clamped to zero.
class Matern32Profile final : public FusedOp {
  public:
    std::string name() const override { return "matern32"; }

    Shape output_shape(std::span<const Shape> in) const override
    {
        if (in.size() != 1) {
            throw ShapeError("matern32 profile takes one input");
        }
        return in[0];
    }

    Matrix forward(std::span<const Matrix* const> in, WorkerPool*) const override
    {
        Matrix out = *in[0];
        for (double& v : out.values()) {
            const double r = std::sqrt(std::max(v, 0.0));
            v = (1.0 + sqrt3 * r) * std::exp(-sqrt3 * r);
        }
        return out;
    }

    void backward(std::span<const Matrix* const> in, const Matrix&, const Matrix& adj,
                  std::span<Matrix> grads, WorkerPool*) const override
    {
        if (grads[0].empty()) {
            return;
        }
        const Matrix& r2 = *in[0];
        for (std::size_t k = 0; k < r2.size(); ++k) {
            const double r = std::sqrt(std::max(r2[k], 0.0));
            grads[0][k] += adj[k] * -1.5 * std::exp(-sqrt3 * r);
        }
    }
};

Var ones(Tape& t, std::size_t r, std::size_t c) { return ad::constant(t, Matrix(r, c, 1.0)); }

} // namespace

std::string_view kernel_kind_name(Kernel::Kind k)
{
    switch (k) {
    case Kernel::Kind::rbf: return "rbf";
    case Kernel::Kind::matern32: return "matern32";
    case Kernel::Kind::linear: return "linear";
    case Kernel::Kind::white: return "white";
    case Kernel::Kind::constant: return "constant";
    case Kernel::Kind::sum: return "sum";
    case Kernel::Kind::product: return "product";
    }
    return "?";
}

Var squared_distance(Var a, Var b)
{
    Var an = ad::row_sums(ad::square(a));
    Var cross = ad::scale(ad::matmul(a, ad::transpose(b)), -2.0);
    if (a.id() == b.id()) {
        return ad::add_row(ad::add_col(cross, an), ad::transpose(an));
    }
    Var bn = ad::transpose(ad::row_sums(ad::square(b)));
    return ad::add_row(ad::add_col(cross, an), bn);
}

Kernel::Kernel(Kind kind, std::size_t input_dim, Options opts)
    : kind_(kind), input_dim_(input_dim), ard_(opts.ard), active_dims_(std::move(opts.active_dims))
{
    if (kind == Kind::sum || kind == Kind::product) {
        throw ValueError("use Kernel::combine for composite kernels");
    }
    if (input_dim == 0) {
        throw ValueError("kernel input dimension must be positive");
    }
    for (std::size_t d : active_dims_) {
        if (d >= input_dim) {
            throw ShapeError("active dimension " + std::to_string(d) + " out of range for " +
                             std::to_string(input_dim) + " input columns");
        }
    }
    if (ard_ && !has_lengthscales()) {
        throw ValueError(std::string(kernel_kind_name(kind)) + " kernel has no lengthscales");
    }
    variance_.emplace("variance", Matrix::scalar(opts.variance), Transform::positive);
    if (has_lengthscales()) {
        const std::size_t d = active_dims_.empty() ? input_dim : active_dims_.size();
        lengthscales_.emplace("lengthscales", Matrix(ard_ ? d : 1, 1, opts.lengthscale),
                              Transform::positive);
    }
    set_prefix("kernel");
}

Kernel Kernel::combine(Kind kind, std::vector<Kernel> children)
{
    if (kind != Kind::sum && kind != Kind::product) {
        throw ValueError("combine needs sum or product");
    }
    if (children.size() < 2) {
        throw ValueError(std::string(kernel_kind_name(kind)) + " kernel needs at least two children");
    }
    for (const Kernel& c : children) {
        if (c.input_dim() != children[0].input_dim()) {
            throw ShapeError("children of a composite kernel disagree on input dimension");
        }
    }
    Kernel k;
    k.kind_ = kind;
    k.input_dim_ = children[0].input_dim();
    k.children_ = std::move(children);
    k.set_prefix("kernel");
    return k;
}

Param& Kernel::variance()
{
    if (!variance_) {
        throw ValueError("composite kernels have no variance of their own");
    }
    return *variance_;
}

Param& Kernel::lengthscales()
{
    if (!lengthscales_) {
        throw ValueError(std::string(kernel_kind_name(kind_)) + " kernel has no lengthscales");
    }
    return *lengthscales_;
}

void Kernel::set_prefix(const std::string& prefix)
{
    if (variance_) {
        variance_->rename(prefix + ".variance");
    }
    if (lengthscales_) {
        lengthscales_->rename(prefix + ".lengthscales");
    }
    for (std::size_t i = 0; i < children_.size(); ++i) {
        children_[i].set_prefix(prefix + "." + std::to_string(i));
    }
}

ParamRefs Kernel::params()
{
    ParamRefs out;
    if (variance_) {
        out.push_back(&*variance_);
    }
    if (lengthscales_) {
        out.push_back(&*lengthscales_);
    }
    for (Kernel& c : children_) {
        const ParamRefs sub = c.params();
        out.insert(out.end(), sub.begin(), sub.end());
    }
    return out;
}

void Kernel::check_input(Var x) const
{
    if (x.shape().cols != input_dim_) {
        throw ShapeError("kernel expects " + std::to_string(input_dim_) + " input columns, got " +
                         x.shape().str());
    }
}

Var Kernel::select(Var x) const
{
    if (active_dims_.empty()) {
        return x;
    }
    Matrix s(input_dim_, active_dims_.size());
    for (std::size_t j = 0; j < active_dims_.size(); ++j) {
        s(active_dims_[j], j) = 1.0;
    }
    return ad::matmul(x, ad::constant(x.tape(), std::move(s)));
}

Var Kernel::scaled(const Binding& b, Var x) const
{
    Var inv = ad::exp(ad::scale(ad::log(b[*lengthscales_]), -1.0));
    if (ard_) {
        return ad::matmul(x, ad::make_diag(inv));
    }
    return ad::scale(inv, x);
}

Var Kernel::leaf_cross(const Binding& b, Var x1, Var x2, bool same) const
{
    Tape& t = x1.tape();
    const std::size_t n = x1.shape().rows;
    const std::size_t m = x2.shape().rows;
    Var var = b[*variance_];
    switch (kind_) {
    case Kind::rbf:
    case Kind::matern32: {
        Var a = scaled(b, select(x1));
        Var r2 = same ? squared_distance(a, a) : squared_distance(a, scaled(b, select(x2)));
        if (kind_ == Kind::rbf) {
            return ad::scale(var, ad::exp(ad::scale(ad::relu(r2), -0.5)));
        }
        static const auto profile = std::make_shared<Matern32Profile>();
        return ad::scale(var, ad::fused(profile, {r2}));
    }
    case Kind::linear: {
        Var a = select(x1);
        Var c = same ? a : select(x2);
        return ad::scale(var, ad::matmul(a, ad::transpose(c)));
    }
    case Kind::white:
        if (same) {
            return ad::scale(var, ad::constant(t, Matrix::identity(n)));
        }
        return ad::scale(var, ad::constant(t, Matrix(n, m)));
    case Kind::constant:
        return ad::scale(var, ones(t, n, m));
    default:
        break;
    }
    throw ValueError("not a leaf kernel");
}

Var Kernel::K(const Binding& b, Var x) const
{
    check_input(x);
    if (children_.empty()) {
        return leaf_cross(b, x, x, true);
    }
    Var acc = children_[0].K(b, x);
    for (std::size_t i = 1; i < children_.size(); ++i) {
        Var next = children_[i].K(b, x);
        acc = kind_ == Kind::sum ? ad::add(acc, next) : ad::mul(acc, next);
    }
    return acc;
}

Var Kernel::K(const Binding& b, Var x1, Var x2) const
{
    check_input(x1);
    check_input(x2);
    if (children_.empty()) {
        return leaf_cross(b, x1, x2, false);
    }
    Var acc = children_[0].K(b, x1, x2);
    for (std::size_t i = 1; i < children_.size(); ++i) {
        Var next = children_[i].K(b, x1, x2);
        acc = kind_ == Kind::sum ? ad::add(acc, next) : ad::mul(acc, next);
    }
    return acc;
}

Var Kernel::Kdiag(const Binding& b, Var x) const
{
    check_input(x);
    Tape& t = x.tape();
    const std::size_t n = x.shape().rows;
    if (!children_.empty()) {
        Var acc = children_[0].Kdiag(b, x);
        for (std::size_t i = 1; i < children_.size(); ++i) {
            Var next = children_[i].Kdiag(b, x);
            acc = kind_ == Kind::sum ? ad::add(acc, next) : ad::mul(acc, next);
        }
        return acc;
    }
    Var var = b[*variance_];
    if (kind_ == Kind::linear) {
        return ad::scale(var, ad::row_sums(ad::square(select(x))));
    }
    return ad::scale(var, ones(t, n, 1));
}

Matrix Kernel::kmatrix(const Matrix& x1, const Matrix* x2)
{
    Tape t;
    Binding b(t, params(), false);
    Var a = ad::constant(t, x1);
    if (x2 == nullptr) {
        return K(b, a).value();
    }
    return K(b, a, ad::constant(t, *x2)).value();
}

Matrix Kernel::kdiag(const Matrix& x)
{
    Tape t;
    Binding b(t, params(), false);
    return Kdiag(b, ad::constant(t, x)).value();
}

std::string Kernel::expression() const
{
    std::string out(kernel_kind_name(kind_));
    out += "(";
    if (!children_.empty()) {
        for (std::size_t i = 0; i < children_.size(); ++i) {
            out += (i ? "," : "") + children_[i].expression();
        }
    } else {
        std::string sep;
        if (ard_) {
            out += "ard=true";
            sep = ",";
        }
        if (!active_dims_.empty()) {
            out += sep + "dims=[";
            for (std::size_t i = 0; i < active_dims_.size(); ++i) {
                out += (i ? "," : "") + std::to_string(active_dims_[i]);
            }
            out += "]";
        }
    }
    return out + ")";
}

namespace {

class ExprParser {
  public:
    ExprParser(std::string_view text, std::size_t input_dim) : s_(text), dim_(input_dim) {}

    Kernel parse()
    {
        Kernel k = kernel();
        skip();
        if (pos_ != s_.size()) {
            fail("unexpected trailing input");
        }
        return k;
    }

  private:
    [[noreturn]] void fail(const std::string& why) const
    {
        throw ConfigError("kernel expression '" + std::string(s_) + "': " + why + " at offset " +
                          std::to_string(pos_));
    }

    void skip()
    {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) {
            ++pos_;
        }
    }

    bool accept(char c)
    {
        skip();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c)
    {
        if (!accept(c)) {
            fail(std::string("expected '") + c + "'");
        }
    }

    std::string word()
    {
        skip();
        const std::size_t start = pos_;
        while (pos_ < s_.size() &&
               (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' ||
                s_[pos_] == '.' || s_[pos_] == '-' || s_[pos_] == '+')) {
            ++pos_;
        }
        if (start == pos_) {
            fail("expected a name or value");
        }
        return std::string(s_.substr(start, pos_ - start));
    }

    double number()
    {
        const std::string w = word();
        char* end = nullptr;
        const double v = std::strtod(w.c_str(), &end);
        if (end != w.c_str() + w.size() || !std::isfinite(v)) {
            fail("bad number '" + w + "'");
        }
        return v;
    }

    Kernel kernel()
    {
        const std::string name = word();
        expect('(');
        if (name == "sum" || name == "product") {
            std::vector<Kernel> children;
            do {
                children.push_back(kernel());
            } while (accept(','));
            expect(')');
            try {
                return Kernel::combine(name == "sum" ? Kernel::Kind::sum : Kernel::Kind::product,
                                       std::move(children));
            } catch (const Error& e) {
                fail(e.what());
            }
        }
        Kernel::Kind kind;
        if (name == "rbf") {
            kind = Kernel::Kind::rbf;
        } else if (name == "matern32") {
            kind = Kernel::Kind::matern32;
        } else if (name == "linear") {
            kind = Kernel::Kind::linear;
        } else if (name == "white") {
            kind = Kernel::Kind::white;
        } else if (name == "constant") {
            kind = Kernel::Kind::constant;
        } else {
            fail("unknown kernel '" + name + "'");
        }
        Kernel::Options opts;
        if (!accept(')')) {
            do {
                const std::string key = word();
                expect('=');
                if (key == "ard") {
                    const std::string v = word();
                    if (v != "true" && v != "false") {
                        fail("ard must be true or false");
                    }
                    opts.ard = v == "true";
                } else if (key == "variance") {
                    opts.variance = number();
                } else if (key == "lengthscale" || key == "lengthscales") {
                    opts.lengthscale = number();
                } else if (key == "dims") {
                    expect('[');
                    do {
                        const double d = number();
                        if (d < 0 || d != std::floor(d)) {
                            fail("dims entries must be non-negative integers");
                        }
                        opts.active_dims.push_back(static_cast<std::size_t>(d));
                    } while (accept(','));
                    expect(']');
                } else {
                    fail("unknown kernel option '" + key + "'");
                }
            } while (accept(','));
            expect(')');
        }
        try {
            return Kernel(kind, dim_, opts);
        } catch (const Error& e) {
            fail(e.what());
        }
    }

    std::string_view s_;
    std::size_t dim_;
    std::size_t pos_ = 0;
};

} // namespace

Kernel parse_kernel(std::string_view expr, std::size_t input_dim)
{
    return ExprParser(expr, input_dim).parse();
}

} // namespace gpad
