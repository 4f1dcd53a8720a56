#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "fluvinv/tape.hpp"

/// Differentiable primitives recorded on a Tape. Shape mismatches throw
/// ShapeError naming the primitive and both shapes.
namespace fluvinv::ops {

// Elementwise, operands of identical shape.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var div(Tape& t, Var a, Var b);

/// a * x + b with scalar coefficients.
Var affine(Tape& t, Var x, double a, double b = 0.0);
/// x * c elementwise with a constant tensor of the same shape.
Var mul_const(Tape& t, Var x, const Tensor& c);
/// x + c elementwise with a constant tensor of the same shape.
Var add_const(Tape& t, Var x, const Tensor& c);

Var leaky_relu(Tape& t, Var x, double slope);
Var tanh(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
Var exp(Tape& t, Var x);
Var square(Tape& t, Var x);
Var abs(Tape& t, Var x);

/// Elementwise map given value and derivative of a scalar function.
using ScalarFn = std::function<std::pair<double, double>(double)>;
Var map(Tape& t, Var x, std::string_view name, const ScalarFn& fn);

// Reductions (64-bit, sequential accumulation). Output shape {1}.
Var sum(Tape& t, Var x);
Var mean(Tape& t, Var x);

/// W [out, in] times x [in] plus optional b [out].
Var dense(Tape& t, Var w, Var x, Var b = {});

/// 3D convolution, stride 1, "same" zero padding, odd kernel extents.
/// x [Cin, Z, Y, X], w [Cout, Cin, kz, ky, kx], optional b [Cout].
Var conv3d(Tape& t, Var x, Var w, Var b = {});

/// Stride-2 transposed convolution doubling every spatial extent.
/// x [Cin, Z, Y, X], w [Cin, Cout, kz, ky, kx], optional b [Cout].
Var conv_transpose3d(Tape& t, Var x, Var w, Var b = {});

/// Nearest-neighbour upsampling x2 along z, y and x of [C, Z, Y, X].
Var upsample2(Tape& t, Var x);

Var reshape(Tape& t, Var x, Shape shape);
Var slice(Tape& t, Var x, std::size_t axis, std::int64_t begin, std::int64_t end);
Var pad(Tape& t, Var x, std::size_t axis, std::int64_t before, std::int64_t after, double value);
Var concat(Tape& t, std::span<const Var> parts, std::size_t axis);

/// Picks flat indices out of x into a rank-1 result.
Var gather(Tape& t, Var x, std::vector<std::int64_t> indices);

}  // namespace fluvinv::ops
