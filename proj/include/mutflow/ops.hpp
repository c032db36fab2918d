#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mutflow/graph.hpp"

// Differentiable operators. Binary elementwise operators broadcast with numpy
// rules (shapes aligned from the right, size-1 axes stretch). Matrix operators
// take rank-2 operands. Axis reductions accept any rank.

namespace mutflow::ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);
Var neg(Var x);
Var square(Var x);

// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
// [m,k] x [n,k]^T -> [m,n]
Var matmul_nt(Var a, Var b);
Var transpose(Var x);
Var reshape(Var x, Shape shape);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
// Rows of x (indexing axis 0) in the given order; trailing axes are kept.
Var gather_rows(Var x, std::span<const std::size_t> rows);
// x: [m,k]; out[r] = x[r, cols[r]], shape [m,1].
Var pick_columns(Var x, std::span<const std::size_t> cols);

Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var softplus(Var x);
Var exp(Var x);
Var log(Var x);
Var sqrt(Var x);
Var sin(Var x);
Var cos(Var x);

// Over the last axis.
Var softmax(Var x);
Var log_softmax(Var x);
// Zero mean, unit variance over the last axis (no affine part).
Var layer_norm(Var x, double eps = 1e-5);

// Max-pool along one axis; ties route the gradient to the first maximum.
Var max_axis(Var x, std::size_t axis, bool keepdim = false);
Var sum(Var x);
Var sum_axis(Var x, std::size_t axis, bool keepdim = false);
Var mean(Var x);
// Mean of squared differences; operands must share a shape.
Var squared_error(Var a, Var b);

// Maps per-residue local points to global coordinates: local is [n, 3p]
// holding p points per row, rotations [n,9] row-major, translations [n,3].
// The frames are constants.
Var apply_frames(Var local, const Tensor& rotations, const Tensor& translations);

}  // namespace mutflow::ops
