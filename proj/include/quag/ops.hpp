#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "quag/tensor.hpp"

// Differentiable tensor operations. Every op returns a fresh tensor and
// records its backward rule when any input requires grad.
//
// "Row" ops view a tensor as (numel / last) rows of the last extent, so a
// rank-1 tensor of length D behaves as a single 1xD row.
namespace quag {

// One byte per element, nonzero = masked.
using Mask = std::vector<std::uint8_t>;

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// x[..., N] + bias[N], bias broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);

// Softmax over the last axis with max-subtraction. Masked entries get exactly
// zero probability; a row with every entry masked is an error.
Tensor softmax(const Tensor& x, std::span<const std::uint8_t> mask = {});
Tensor log_softmax(const Tensor& x);

// log(max(x, floor)); the gradient is zero where the clamp is active.
Tensor log_clamped(const Tensor& x, double floor);

Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor concat_last(const Tensor& a, const Tensor& b);
// Stacks row views of each input along a new leading axis: inputs of shape
// [n_i x D] (or [D], counted as one row) give [sum n_i x D].
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_last(const Tensor& x, std::size_t start, std::size_t count);
Tensor reshape(const Tensor& x, Shape shape);

// Repeats a length-D vector into a [rows x D] matrix.
Tensor tile_rows(const Tensor& v, std::size_t rows);
// col (M values) times row (N values) -> [M x N].
Tensor outer(const Tensor& col, const Tensor& row);
// Rows of table[V x D] selected by ids -> [ids.size() x D].
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
// Single element as a [1] tensor.
Tensor select(const Tensor& x, std::size_t flat_index);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

}  // namespace quag
