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

// Reverse-mode automatic differentiation over dense matrix operations.
//
// A Tape is an append-only list of nodes. Nodes are evaluated eagerly when all
// of their inputs carry values, which lets model code inspect intermediate
// results (e.g. to choose a Cholesky jitter level) while the graph is built.
// Leaves may also be created unbound and supplied later through eval().

#pragma once

#include "gpad/matrix.hpp"

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gpad {

using NodeId = std::size_t;

enum class OpKind {
    constant,
    leaf,
    add,
    subtract,
    multiply,        // elementwise
    scalar_multiply, // 1x1 node times matrix
    matmul,
    transpose,
    square,
    log,
    exp,
    softplus,
    relu,
    reduce_sum,
    diag_part,
    make_diag,
    cholesky,
    triangular_solve,
    add_row, // m x n plus a 1 x n row broadcast down the rows
    add_col, // m x n plus an m x 1 column broadcast across the columns
    fused,
};

std::string_view op_name(OpKind op);

class WorkerPool;

/// Operation with a hand-written adjoint, supplied by higher layers
/// (likelihood terms, kernel profiles).
class FusedOp {
  public:
    virtual ~FusedOp() = default;

    virtual std::string name() const = 0;
    /// Throws ShapeError for unsupported input shapes.
    virtual Shape output_shape(std::span<const Shape> inputs) const = 0;
    virtual Matrix forward(std::span<const Matrix* const> inputs, WorkerPool* pool) const = 0;
    /// Adds the adjoint contribution of each input into grads[k]. grads[k] is
    /// empty (size 0) when input k does not need a gradient.
    virtual void backward(std::span<const Matrix* const> inputs, const Matrix& output,
                          const Matrix& output_adjoint, std::span<Matrix> grads,
                          WorkerPool* pool) const = 0;
};

struct OpAttrs {
    linalg::Triangle triangle = linalg::Triangle::lower;
    bool transpose = false;
    std::shared_ptr<const FusedOp> fused;
};

struct Node {
    NodeId id = 0;
    OpKind op = OpKind::constant;
    std::vector<NodeId> inputs;
    Shape shape;
    OpAttrs attrs;
    std::optional<Matrix> value;
    bool needs_grad = false;
};

class Tape {
  public:
    Tape() = default;

    NodeId constant(Matrix value);
    /// Differentiable input with an initial value.
    NodeId leaf(Matrix value);
    /// Differentiable input bound later through eval().
    NodeId leaf(Shape shape);

    /// Appends an operation node. Validates shapes and, when every input has a
    /// value, evaluates it immediately.
    NodeId record(OpKind op, std::vector<NodeId> inputs, OpAttrs attrs = {});

    const Node& node(NodeId id) const { return nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }
    const Matrix& value(NodeId id) const;

    /// Forward pass in id order over nodes 0..root, rebinding the given leaves.
    const Matrix& eval(NodeId root, const std::map<NodeId, Matrix>& bindings = {});

    /// Single reverse sweep from a 1x1 root. Returns the adjoint of each
    /// requested leaf, shaped like the leaf.
    std::map<NodeId, Matrix> grad(NodeId root, std::span<const NodeId> wrt) const;

    /// One line per node: `id op shape inputs`.
    std::string dump() const;

    void set_pool(WorkerPool* pool) { pool_ = pool; }
    WorkerPool* pool() const { return pool_; }

    void set_cholesky_block_size(std::size_t nb) { chol_block_ = nb; }
    std::size_t cholesky_block_size() const { return chol_block_; }

  private:
    Shape infer_shape(const Node& n) const;
    Matrix compute(const Node& n) const;
    void backprop(const Node& n, const Matrix& adj, std::vector<Matrix>& adjoints) const;

    std::vector<Node> nodes_;
    WorkerPool* pool_ = nullptr;
    std::size_t chol_block_ = 32;
};

/// Adjoint of A = L L^T given the adjoint of L, reported as a full symmetric
/// matrix. Reference (unblocked) algorithm.
Matrix chol_rev(const Matrix& l, const Matrix& l_adj);

/// Blocked reverse sweep; matches chol_rev. Sizes up to one block fall through
/// to the reference algorithm.
Matrix chol_rev_blocked(const Matrix& l, const Matrix& l_adj, std::size_t block_size = 32);

struct TrisolveAdjoint {
    Matrix l_adj;
    Matrix b_adj;
};

/// Adjoint of X = L^{-1} B (lower, non-transposed).
TrisolveAdjoint trisolve_rev(const Matrix& l, const Matrix& b, const Matrix& x,
                             const Matrix& x_adj);

/// Handle to a node on a tape; the building block of model code.
class Var {
  public:
    Var() = default;
    Var(Tape& tape, NodeId id) : tape_(&tape), id_(id) {}

    NodeId id() const { return id_; }
    Tape& tape() const { return *tape_; }
    const Matrix& value() const { return tape_->value(id_); }
    Shape shape() const { return tape_->node(id_).shape; }
    bool valid() const { return tape_ != nullptr; }

  private:
    Tape* tape_ = nullptr;
    NodeId id_ = 0;
};

namespace ad {

Var constant(Tape& t, Matrix v);
Var constant(Tape& t, double v);
Var leaf(Tape& t, Matrix v);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var s, Var a);
Var scale(Var a, double s);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var square(Var a);
Var log(Var a);
Var exp(Var a);
Var softplus(Var a);
Var relu(Var a);
Var sum(Var a);
Var diag_part(Var a);
Var make_diag(Var a);
Var cholesky(Var a);
Var trisolve(Var t, Var b, linalg::Triangle tri = linalg::Triangle::lower, bool transpose = false);
Var add_row(Var a, Var row);
Var add_col(Var a, Var col);
Var fused(std::shared_ptr<const FusedOp> op, std::vector<Var> inputs);

/// Adds a constant to every entry.
Var add_scalar(Var a, double c);
/// 1 x n row of column sums.
Var col_sums(Var a);
/// m x 1 column of row sums.
Var row_sums(Var a);

} // namespace ad

inline Var operator+(Var a, Var b) { return ad::add(a, b); }
inline Var operator-(Var a, Var b) { return ad::sub(a, b); }
inline Var operator-(Var a) { return ad::scale(a, -1.0); }
inline Var operator*(double s, Var a) { return ad::scale(a, s); }

} // namespace gpad
