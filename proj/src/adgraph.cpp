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

#include "gpad/adgraph.hpp"

#include "gpad/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gpad {

using linalg::Triangle;

std::string_view op_name(OpKind op)
{
    switch (op) {
    case OpKind::constant: return "constant";
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::subtract: return "subtract";
    case OpKind::multiply: return "multiply";
    case OpKind::scalar_multiply: return "scalar_multiply";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::square: return "square";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::softplus: return "softplus";
    case OpKind::relu: return "relu";
    case OpKind::reduce_sum: return "reduce_sum";
    case OpKind::diag_part: return "diag_part";
    case OpKind::make_diag: return "make_diag";
    case OpKind::cholesky: return "cholesky";
    case OpKind::triangular_solve: return "triangular_solve";
    case OpKind::add_row: return "add_row";
    case OpKind::add_col: return "add_col";
    case OpKind::fused: return "fused";
    }
    return "unknown";
}

namespace {

std::size_t arity(OpKind op)
{
    switch (op) {
    case OpKind::constant:
    case OpKind::leaf:
        return 0;
    case OpKind::transpose:
    case OpKind::square:
    case OpKind::log:
    case OpKind::exp:
    case OpKind::softplus:
    case OpKind::relu:
    case OpKind::reduce_sum:
    case OpKind::diag_part:
    case OpKind::make_diag:
    case OpKind::cholesky:
        return 1;
    case OpKind::fused:
        return static_cast<std::size_t>(-1);
    default:
        return 2;
    }
}

double softplus(double x)
{
    // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double logistic(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Matrix map(const Matrix& a, double (*f)(double))
{
    Matrix out = a;
    for (auto& x : out.values()) {
        x = f(x);
    }
    return out;
}

void accumulate(Matrix& dst, const Matrix& src)
{
    if (dst.empty() && src.size() != 0) {
        dst = src;
        return;
    }
    for (std::size_t k = 0; k < dst.size(); ++k) {
        dst[k] += src[k];
    }
}

Matrix& slot(std::vector<Matrix>& adjoints, const Node& input)
{
    Matrix& m = adjoints[input.id];
    if (m.empty() && input.shape.size() != 0) {
        m = Matrix(input.shape.rows, input.shape.cols);
    }
    return m;
}

Matrix block(const Matrix& m, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1)
{
    Matrix b(r1 - r0, c1 - c0);
    for (std::size_t i = r0; i < r1; ++i) {
        for (std::size_t j = c0; j < c1; ++j) {
            b(i - r0, j - c0) = m(i, j);
        }
    }
    return b;
}

void store_block(Matrix& m, std::size_t r0, std::size_t c0, const Matrix& b)
{
    for (std::size_t i = 0; i < b.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            m(r0 + i, c0 + j) = b(i, j);
        }
    }
}

void subtract_block(Matrix& m, std::size_t r0, std::size_t c0, const Matrix& b)
{
    for (std::size_t i = 0; i < b.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            m(r0 + i, c0 + j) -= b(i, j);
        }
    }
}

void check_cholesky_factor(const Matrix& l, const Matrix& l_adj)
{
    if (l.rows() != l.cols() || l.shape() != l_adj.shape()) {
        throw ShapeError("cholesky adjoint: factor " + l.shape().str() + ", adjoint "
                         + l_adj.shape().str());
    }
    for (std::size_t i = 0; i < l.rows(); ++i) {
        if (!(l(i, i) > 0.0)) {
            throw ValueError("cholesky adjoint: non-positive diagonal entry " + std::to_string(i));
        }
    }
}

} // namespace

NodeId Tape::constant(Matrix value)
{
    Node n;
    n.id = nodes_.size();
    n.op = OpKind::constant;
    n.shape = value.shape();
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
}

NodeId Tape::leaf(Matrix value)
{
    Node n;
    n.id = nodes_.size();
    n.op = OpKind::leaf;
    n.shape = value.shape();
    if (!value.all_finite()) {
        throw NumericalError(n.id, "leaf " + std::to_string(n.id) + " has non-finite entries");
    }
    n.value = std::move(value);
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
}

NodeId Tape::leaf(Shape shape)
{
    Node n;
    n.id = nodes_.size();
    n.op = OpKind::leaf;
    n.shape = shape;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
}

const Matrix& Tape::value(NodeId id) const
{
    const Node& n = nodes_.at(id);
    if (!n.value) {
        throw ValueError("node " + std::to_string(id) + " (" + std::string(op_name(n.op))
                         + ") has not been evaluated");
    }
    return *n.value;
}

Shape Tape::infer_shape(const Node& n) const
{
    std::vector<Shape> in;
    for (NodeId i : n.inputs) {
        in.push_back(nodes_[i].shape);
    }
    auto fail = [&](const std::string& why) -> ShapeError {
        std::string shapes;
        for (std::size_t k = 0; k < in.size(); ++k) {
            shapes += (k ? ", " : "") + in[k].str();
        }
        return ShapeError("node " + std::to_string(n.id) + " (" + std::string(op_name(n.op))
                          + "): " + why + " [" + shapes + "]");
    };

    switch (n.op) {
    case OpKind::add:
    case OpKind::subtract:
    case OpKind::multiply:
        if (in[0] != in[1]) {
            throw fail("operand shapes differ");
        }
        return in[0];
    case OpKind::scalar_multiply:
        if (in[0] != Shape{1, 1}) {
            throw fail("first operand must be 1x1");
        }
        return in[1];
    case OpKind::matmul:
        if (in[0].cols != in[1].rows) {
            throw fail("inner dimensions differ");
        }
        return {in[0].rows, in[1].cols};
    case OpKind::transpose:
        return {in[0].cols, in[0].rows};
    case OpKind::square:
    case OpKind::log:
    case OpKind::exp:
    case OpKind::softplus:
    case OpKind::relu:
        return in[0];
    case OpKind::reduce_sum:
        return {1, 1};
    case OpKind::diag_part:
        if (in[0].rows != in[0].cols) {
            throw fail("input must be square");
        }
        return {in[0].rows, 1};
    case OpKind::make_diag:
        if (in[0].cols != 1 && in[0].rows != 1) {
            throw fail("input must be a vector");
        }
        return {in[0].size(), in[0].size()};
    case OpKind::cholesky:
        if (in[0].rows != in[0].cols) {
            throw fail("input must be square");
        }
        return in[0];
    case OpKind::triangular_solve:
        if (in[0].rows != in[0].cols || in[0].rows != in[1].rows) {
            throw fail("needs square triangle and matching right-hand side");
        }
        return in[1];
    case OpKind::add_row:
        if (in[1].rows != 1 || in[1].cols != in[0].cols) {
            throw fail("row operand must be 1 x cols");
        }
        return in[0];
    case OpKind::add_col:
        if (in[1].cols != 1 || in[1].rows != in[0].rows) {
            throw fail("column operand must be rows x 1");
        }
        return in[0];
    case OpKind::fused:
        try {
            return n.attrs.fused->output_shape(in);
        } catch (const ShapeError& e) {
            throw fail(e.what());
        }
    case OpKind::constant:
    case OpKind::leaf:
        break;
    }
    throw fail("cannot record this op kind");
}

Matrix Tape::compute(const Node& n) const
{
    auto in = [&](std::size_t k) -> const Matrix& { return *nodes_[n.inputs[k]].value; };
    switch (n.op) {
    case OpKind::add: return linalg::add(in(0), in(1));
    case OpKind::subtract: return linalg::subtract(in(0), in(1));
    case OpKind::multiply: {
        Matrix out = in(0);
        for (std::size_t k = 0; k < out.size(); ++k) {
            out[k] *= in(1)[k];
        }
        return out;
    }
    case OpKind::scalar_multiply: return linalg::scaled(in(1), in(0)[0]);
    case OpKind::matmul: return linalg::matmul(in(0), in(1), pool_);
    case OpKind::transpose: return linalg::transpose(in(0));
    case OpKind::square: return map(in(0), [](double x) { return x * x; });
    case OpKind::log: return map(in(0), [](double x) { return std::log(x); });
    case OpKind::exp: return map(in(0), [](double x) { return std::exp(x); });
    case OpKind::softplus: return map(in(0), softplus);
    case OpKind::relu: return map(in(0), [](double x) { return x > 0.0 ? x : 0.0; });
    case OpKind::reduce_sum: {
        double s = 0.0;
        for (double x : in(0).values()) {
            s += x;
        }
        return Matrix::scalar(s);
    }
    case OpKind::diag_part: return linalg::diag_part(in(0));
    case OpKind::make_diag: {
        const Matrix& v = in(0);
        Matrix out(v.size(), v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            out(i, i) = v[i];
        }
        return out;
    }
    case OpKind::cholesky: {
        auto l = linalg::try_cholesky(in(0));
        if (!l) {
            throw CholeskyError(n.id, "node " + std::to_string(n.id)
                                          + " (cholesky): input is not positive definite");
        }
        return std::move(*l);
    }
    case OpKind::triangular_solve:
        return linalg::triangular_solve(in(0), in(1), n.attrs.triangle, n.attrs.transpose, pool_);
    case OpKind::add_row: {
        Matrix out = in(0);
        for (std::size_t i = 0; i < out.rows(); ++i) {
            for (std::size_t j = 0; j < out.cols(); ++j) {
                out(i, j) += in(1)[j];
            }
        }
        return out;
    }
    case OpKind::add_col: {
        Matrix out = in(0);
        for (std::size_t i = 0; i < out.rows(); ++i) {
            for (std::size_t j = 0; j < out.cols(); ++j) {
                out(i, j) += in(1)[i];
            }
        }
        return out;
    }
    case OpKind::fused: {
        std::vector<const Matrix*> args;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            args.push_back(&in(k));
        }
        return n.attrs.fused->forward(args, pool_);
    }
    case OpKind::constant:
    case OpKind::leaf:
        break;
    }
    return *n.value;
}

NodeId Tape::record(OpKind op, std::vector<NodeId> inputs, OpAttrs attrs)
{
    Node n;
    n.id = nodes_.size();
    n.op = op;
    n.inputs = std::move(inputs);
    n.attrs = std::move(attrs);
    if (op == OpKind::constant || op == OpKind::leaf) {
        throw ValueError("use Tape::constant / Tape::leaf to create inputs");
    }
    if (op == OpKind::fused && !n.attrs.fused) {
        throw ValueError("fused node without an operation");
    }
    const std::size_t want = arity(op);
    if (want != static_cast<std::size_t>(-1) && n.inputs.size() != want) {
        throw ShapeError("node " + std::to_string(n.id) + " (" + std::string(op_name(op))
                         + "): expected " + std::to_string(want) + " inputs, got "
                         + std::to_string(n.inputs.size()));
    }
    bool ready = true;
    for (NodeId i : n.inputs) {
        if (i >= n.id) {
            throw ValueError("node " + std::to_string(n.id) + " references unknown input "
                             + std::to_string(i));
        }
        n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
        ready = ready && nodes_[i].value.has_value();
    }
    n.shape = infer_shape(n);
    if (ready) {
        Matrix v = compute(n);
        if (!v.all_finite()) {
            throw NumericalError(n.id, "node " + std::to_string(n.id) + " ("
                                           + std::string(op_name(op))
                                           + ") produced a non-finite value");
        }
        n.value = std::move(v);
    }
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
}

const Matrix& Tape::eval(NodeId root, const std::map<NodeId, Matrix>& bindings)
{
    if (root >= nodes_.size()) {
        throw ValueError("eval: unknown root " + std::to_string(root));
    }
    for (const auto& [id, v] : bindings) {
        if (id >= nodes_.size() || nodes_[id].op != OpKind::leaf) {
            throw ValueError("eval: binding for node " + std::to_string(id) + " which is not a leaf");
        }
        if (v.shape() != nodes_[id].shape) {
            throw ShapeError("eval: binding for leaf " + std::to_string(id) + " has shape "
                             + v.shape().str() + ", expected " + nodes_[id].shape.str());
        }
    }
    for (NodeId id = 0; id <= root; ++id) {
        Node& n = nodes_[id];
        if (n.op == OpKind::constant) {
            continue;
        }
        if (n.op == OpKind::leaf) {
            if (auto it = bindings.find(id); it != bindings.end()) {
                n.value = it->second;
            }
            if (!n.value) {
                throw ValueError("eval: leaf " + std::to_string(id) + " is unbound");
            }
            continue;
        }
        Matrix v = compute(n);
        if (!v.all_finite()) {
            throw NumericalError(id, "node " + std::to_string(id) + " (" + std::string(op_name(n.op))
                                         + ") produced a non-finite value");
        }
        n.value = std::move(v);
    }
    return *nodes_[root].value;
}

void Tape::backprop(const Node& n, const Matrix& adj, std::vector<Matrix>& adjoints) const
{
    auto input = [&](std::size_t k) -> const Node& { return nodes_[n.inputs[k]]; };
    auto val = [&](std::size_t k) -> const Matrix& { return *input(k).value; };
    auto wants = [&](std::size_t k) { return input(k).needs_grad; };
    auto target = [&](std::size_t k) -> Matrix& { return slot(adjoints, input(k)); };
    const Matrix& out = *n.value;

    switch (n.op) {
    case OpKind::add:
        if (wants(0)) accumulate(target(0), adj);
        if (wants(1)) accumulate(target(1), adj);
        break;
    case OpKind::subtract:
        if (wants(0)) accumulate(target(0), adj);
        if (wants(1)) accumulate(target(1), linalg::scaled(adj, -1.0));
        break;
    case OpKind::multiply:
        for (std::size_t k = 0; k < 2; ++k) {
            if (!wants(k)) continue;
            Matrix& t = target(k);
            const Matrix& other = val(1 - k);
            for (std::size_t e = 0; e < t.size(); ++e) {
                t[e] += adj[e] * other[e];
            }
        }
        break;
    case OpKind::scalar_multiply:
        if (wants(0)) {
            double s = 0.0;
            for (std::size_t e = 0; e < adj.size(); ++e) {
                s += adj[e] * val(1)[e];
            }
            target(0)[0] += s;
        }
        if (wants(1)) accumulate(target(1), linalg::scaled(adj, val(0)[0]));
        break;
    case OpKind::matmul:
        if (wants(0)) accumulate(target(0), linalg::matmul(adj, linalg::transpose(val(1)), pool_));
        if (wants(1)) accumulate(target(1), linalg::matmul(linalg::transpose(val(0)), adj, pool_));
        break;
    case OpKind::transpose:
        if (wants(0)) accumulate(target(0), linalg::transpose(adj));
        break;
    case OpKind::square:
    case OpKind::log:
    case OpKind::exp:
    case OpKind::softplus:
    case OpKind::relu: {
        if (!wants(0)) break;
        Matrix& t = target(0);
        const Matrix& x = val(0);
        for (std::size_t e = 0; e < t.size(); ++e) {
            double d = 0.0;
            switch (n.op) {
            case OpKind::square: d = 2.0 * x[e]; break;
            case OpKind::log: d = 1.0 / x[e]; break;
            case OpKind::exp: d = out[e]; break;
            case OpKind::softplus: d = logistic(x[e]); break;
            default: d = x[e] > 0.0 ? 1.0 : 0.0; break;
            }
            t[e] += adj[e] * d;
        }
        break;
    }
    case OpKind::reduce_sum:
        if (wants(0)) {
            for (auto& x : target(0).values()) {
                x += adj[0];
            }
        }
        break;
    case OpKind::diag_part:
        if (wants(0)) {
            Matrix& t = target(0);
            for (std::size_t i = 0; i < adj.size(); ++i) {
                t(i, i) += adj[i];
            }
        }
        break;
    case OpKind::make_diag:
        if (wants(0)) {
            Matrix& t = target(0);
            for (std::size_t i = 0; i < t.size(); ++i) {
                t[i] += adj(i, i);
            }
        }
        break;
    case OpKind::cholesky:
        if (wants(0)) accumulate(target(0), chol_rev_blocked(out, adj, chol_block_));
        break;
    case OpKind::triangular_solve: {
        const Matrix& t = val(0);
        const Triangle tri = n.attrs.triangle;
        const bool tr = n.attrs.transpose;
        // X = op(T)^{-1} B  =>  Bbar = op(T)^{-T} Xbar,  op(T)bar = -Bbar X^T.
        Matrix b_adj = linalg::triangular_solve(t, adj, tri, !tr, pool_);
        if (wants(0)) {
            Matrix m_adj = linalg::matmul(b_adj, linalg::transpose(out), pool_);
            Matrix& dst = target(0);
            for (std::size_t i = 0; i < dst.rows(); ++i) {
                for (std::size_t j = 0; j < dst.cols(); ++j) {
                    const bool in_tri = tri == Triangle::lower ? j <= i : j >= i;
                    if (in_tri) {
                        dst(i, j) -= tr ? m_adj(j, i) : m_adj(i, j);
                    }
                }
            }
        }
        if (wants(1)) accumulate(target(1), b_adj);
        break;
    }
    case OpKind::add_row:
        if (wants(0)) accumulate(target(0), adj);
        if (wants(1)) {
            Matrix& t = target(1);
            for (std::size_t i = 0; i < adj.rows(); ++i) {
                for (std::size_t j = 0; j < adj.cols(); ++j) {
                    t[j] += adj(i, j);
                }
            }
        }
        break;
    case OpKind::add_col:
        if (wants(0)) accumulate(target(0), adj);
        if (wants(1)) {
            Matrix& t = target(1);
            for (std::size_t i = 0; i < adj.rows(); ++i) {
                for (std::size_t j = 0; j < adj.cols(); ++j) {
                    t[i] += adj(i, j);
                }
            }
        }
        break;
    case OpKind::fused: {
        std::vector<const Matrix*> args;
        std::vector<Matrix> grads(n.inputs.size());
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            args.push_back(&val(k));
            if (wants(k)) {
                grads[k] = Matrix(input(k).shape.rows, input(k).shape.cols);
            }
        }
        n.attrs.fused->backward(args, out, adj, grads, pool_);
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            if (wants(k)) accumulate(target(k), grads[k]);
        }
        break;
    }
    case OpKind::constant:
    case OpKind::leaf:
        break;
    }
}

std::map<NodeId, Matrix> Tape::grad(NodeId root, std::span<const NodeId> wrt) const
{
    if (root >= nodes_.size()) {
        throw ValueError("grad: unknown root " + std::to_string(root));
    }
    const Node& r = nodes_[root];
    if (r.shape != Shape{1, 1}) {
        throw ShapeError("grad: root node " + std::to_string(root) + " has shape " + r.shape.str()
                         + ", expected 1x1");
    }
    if (!r.value) {
        throw ValueError("grad: root node " + std::to_string(root) + " has not been evaluated");
    }
    std::vector<Matrix> adjoints(root + 1);
    adjoints[root] = Matrix::scalar(1.0);
    for (NodeId id = root + 1; id-- > 0;) {
        const Node& n = nodes_[id];
        if (adjoints[id].empty() || !n.needs_grad || n.op == OpKind::leaf) {
            continue;
        }
        backprop(n, adjoints[id], adjoints);
        adjoints[id] = Matrix(); // intermediate adjoints are not returned
    }
    std::map<NodeId, Matrix> out;
    for (NodeId id : wrt) {
        const Node& n = nodes_.at(id);
        if (n.op != OpKind::leaf) {
            throw ValueError("grad: node " + std::to_string(id) + " is not a leaf");
        }
        if (id <= root && !adjoints[id].empty()) {
            out[id] = adjoints[id];
        } else {
            out[id] = Matrix(n.shape.rows, n.shape.cols);
        }
    }
    return out;
}

std::string Tape::dump() const
{
    std::ostringstream os;
    for (const Node& n : nodes_) {
        os << n.id << ' ' << op_name(n.op);
        if (n.op == OpKind::triangular_solve) {
            os << ':' << (n.attrs.triangle == Triangle::lower ? "lower" : "upper")
               << (n.attrs.transpose ? ":t" : ":n");
        } else if (n.op == OpKind::fused) {
            os << ':' << n.attrs.fused->name();
        }
        os << ' ' << n.shape.str() << ' ';
        if (n.inputs.empty()) {
            os << '-';
        }
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            os << (k ? "," : "") << n.inputs[k];
        }
        os << '\n';
    }
    return os.str();
}

Matrix chol_rev(const Matrix& l, const Matrix& l_adj)
{
    check_cholesky_factor(l, l_adj);
    const std::size_t n = l.rows();
    // P = Phi(L^T Lbar): lower triangle, diagonal halved. Only the lower
    // triangle of Lbar contributes.
    Matrix p(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (std::size_t k = i; k < n; ++k) {
                s += l(k, i) * l_adj(k, j);
            }
            p(i, j) = i == j ? 0.5 * s : s;
        }
    }
    // S = L^{-T} P L^{-1}
    Matrix x = linalg::triangular_solve(l, p, Triangle::lower, true);
    Matrix st = linalg::triangular_solve(l, linalg::transpose(x), Triangle::lower, true);
    Matrix g(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            g(i, j) = 0.5 * (st(j, i) + st(i, j));
        }
    }
    return g;
}

Matrix chol_rev_blocked(const Matrix& l, const Matrix& l_adj, std::size_t block_size)
{
    check_cholesky_factor(l, l_adj);
    const std::size_t n = l.rows();
    if (block_size == 0) {
        throw ValueError("cholesky adjoint block size must be positive");
    }
    if (n <= block_size) {
        return chol_rev(l, l_adj);
    }

    // Reverse sweep of the left-looking blocked factorization. For the block
    // of rows/cols [j, k):
    //   R = L[j:k, :j]  D = L[j:k, j:k]  B = L[k:, j:k]  C = L[k:, :j]
    // forward:  D = chol(A_D - R R^T),  B = (A_B - C R^T) D^{-T}.
    // `work` holds the running adjoint of L (lower triangle). Off-diagonal
    // blocks of A receive the raw lower-triangle adjoint; diagonal blocks the
    // symmetric one.
    Matrix work = linalg::lower(l_adj);
    Matrix raw(n, n);
    std::size_t k = n;
    while (k > 0) {
        const std::size_t j = k > block_size ? k - block_size : 0;
        const Matrix d = block(l, j, k, j, k);
        const Matrix r = block(l, j, k, 0, j);
        const Matrix b = block(l, k, n, j, k);
        const Matrix c = block(l, k, n, 0, j);

        // Tbar = Bbar D^{-1}
        Matrix t_adj = linalg::transpose(linalg::triangular_solve(
            d, linalg::transpose(block(work, k, n, j, k)), Triangle::lower, true));
        Matrix d_adj = block(work, j, k, j, k);
        if (k < n) {
            Matrix tb = linalg::matmul(linalg::transpose(t_adj), b);
            for (std::size_t a = 0; a < d_adj.rows(); ++a) {
                for (std::size_t e = 0; e <= a; ++e) {
                    d_adj(a, e) -= tb(a, e);
                }
            }
        }
        const Matrix g_d = chol_rev(d, d_adj);
        if (j > 0) {
            Matrix r_adj = linalg::scaled(linalg::matmul(g_d, r), 2.0);
            if (k < n) {
                r_adj = linalg::add(r_adj, linalg::matmul(linalg::transpose(t_adj), c));
                subtract_block(work, k, 0, linalg::matmul(t_adj, r));
            }
            subtract_block(work, j, 0, r_adj);
        }
        store_block(raw, j, j, g_d);
        if (k < n) {
            store_block(raw, k, j, t_adj);
        }
        k = j;
    }

    Matrix g(n, n);
    // Diagonal blocks were stored symmetric; strictly-below-block entries are
    // raw lower adjoints and split evenly across the symmetric pair.
    std::size_t start = n;
    std::vector<std::size_t> block_of(n);
    while (start > 0) {
        const std::size_t j = start > block_size ? start - block_size : 0;
        for (std::size_t a = j; a < start; ++a) {
            block_of[a] = j;
        }
        start = j;
    }
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t e = 0; e < n; ++e) {
            if (block_of[a] == block_of[e]) {
                g(a, e) = raw(a, e);
            } else if (a > e) {
                g(a, e) = 0.5 * raw(a, e);
            } else {
                g(a, e) = 0.5 * raw(e, a);
            }
        }
    }
    return g;
}

TrisolveAdjoint trisolve_rev(const Matrix& l, const Matrix& b, const Matrix& x, const Matrix& x_adj)
{
    if (l.rows() != l.cols() || b.rows() != l.rows() || x.shape() != b.shape()
        || x_adj.shape() != b.shape()) {
        throw ShapeError("triangular solve adjoint: L " + l.shape().str() + ", B " + b.shape().str()
                         + ", X " + x.shape().str() + ", Xbar " + x_adj.shape().str());
    }
    TrisolveAdjoint out;
    out.b_adj = linalg::triangular_solve(l, x_adj, Triangle::lower, true);
    out.l_adj = linalg::lower(linalg::scaled(linalg::matmul(out.b_adj, linalg::transpose(x)), -1.0));
    return out;
}

namespace ad {

namespace {

Tape& same_tape(Var a, Var b)
{
    if (&a.tape() != &b.tape()) {
        throw ValueError("operands live on different tapes");
    }
    return a.tape();
}

Var unary(OpKind op, Var a)
{
    return Var(a.tape(), a.tape().record(op, {a.id()}));
}

Var binary(OpKind op, Var a, Var b)
{
    Tape& t = same_tape(a, b);
    return Var(t, t.record(op, {a.id(), b.id()}));
}

} // namespace

Var constant(Tape& t, Matrix v) { return Var(t, t.constant(std::move(v))); }
Var constant(Tape& t, double v) { return Var(t, t.constant(Matrix::scalar(v))); }
Var leaf(Tape& t, Matrix v) { return Var(t, t.leaf(std::move(v))); }

Var add(Var a, Var b) { return binary(OpKind::add, a, b); }
Var sub(Var a, Var b) { return binary(OpKind::subtract, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::multiply, a, b); }
Var scale(Var s, Var a) { return binary(OpKind::scalar_multiply, s, a); }
Var scale(Var a, double s) { return scale(constant(a.tape(), s), a); }
Var matmul(Var a, Var b) { return binary(OpKind::matmul, a, b); }
Var transpose(Var a) { return unary(OpKind::transpose, a); }
Var square(Var a) { return unary(OpKind::square, a); }
Var log(Var a) { return unary(OpKind::log, a); }
Var exp(Var a) { return unary(OpKind::exp, a); }
Var softplus(Var a) { return unary(OpKind::softplus, a); }
Var relu(Var a) { return unary(OpKind::relu, a); }
Var sum(Var a) { return unary(OpKind::reduce_sum, a); }
Var diag_part(Var a) { return unary(OpKind::diag_part, a); }
Var make_diag(Var a) { return unary(OpKind::make_diag, a); }
Var cholesky(Var a) { return unary(OpKind::cholesky, a); }

Var trisolve(Var t, Var b, Triangle tri, bool transpose)
{
    Tape& tape = same_tape(t, b);
    OpAttrs attrs;
    attrs.triangle = tri;
    attrs.transpose = transpose;
    return Var(tape, tape.record(OpKind::triangular_solve, {t.id(), b.id()}, attrs));
}

Var add_row(Var a, Var row) { return binary(OpKind::add_row, a, row); }
Var add_col(Var a, Var col) { return binary(OpKind::add_col, a, col); }

Var fused(std::shared_ptr<const FusedOp> op, std::vector<Var> inputs)
{
    if (inputs.empty()) {
        throw ValueError("fused op needs at least one input");
    }
    Tape& tape = inputs.front().tape();
    std::vector<NodeId> ids;
    for (const Var& v : inputs) {
        same_tape(inputs.front(), v);
        ids.push_back(v.id());
    }
    OpAttrs attrs;
    attrs.fused = std::move(op);
    return Var(tape, tape.record(OpKind::fused, std::move(ids), attrs));
}

Var add_scalar(Var a, double c)
{
    const Shape s = a.shape();
    return add(a, constant(a.tape(), Matrix(s.rows, s.cols, c)));
}

Var col_sums(Var a)
{
    return matmul(constant(a.tape(), Matrix(1, a.shape().rows, 1.0)), a);
}

Var row_sums(Var a)
{
    return matmul(a, constant(a.tape(), Matrix(a.shape().cols, 1, 1.0)));
}

} // namespace ad

} // namespace gpad
