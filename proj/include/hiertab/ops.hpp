#pragma once

// Differentiable operations on Tensor. Shape violations throw hiertab::Error
// naming both operand shapes. No broadcasting except the explicit row-bias
// and segment helpers below.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hiertab/tensor.hpp"

namespace hiertab::ops {

/// Reduction axis: kRows reduces over rows (per column), kCols over columns
/// (per row).
enum class Axis { kRows = 0, kCols = 1 };

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// x[m x n] + bias[1 x n] on every row.
Tensor add_row(const Tensor& x, const Tensor& bias);
/// x @ w + bias
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
/// Sum of equally-shaped tensors.
Tensor add_n(std::span<const Tensor> xs);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// log(1 + exp(x)), computed stably.
Tensor softplus(const Tensor& x);
/// Throws on negative input; log(0) = -inf and NaN passes through.
Tensor log(const Tensor& x);

Tensor softmax(const Tensor& x, Axis axis = Axis::kCols);
Tensor log_softmax(const Tensor& x, Axis axis = Axis::kCols);
/// Row-wise softmax restricted to entries whose mask byte is non-zero; masked
/// entries are exactly 0 and receive no gradient. Every row needs at least
/// one unmasked entry.
Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> mask);
/// x is 1 x N; offsets (size S+1, offsets[0] == 0, offsets[S] == N) delimit
/// S segments, each normalised independently.
Tensor segment_softmax(const Tensor& x, std::span<const std::size_t> offsets);
/// y[k] = x[k] * w[segment(k)]; x is 1 x N, w is 1 x S.
Tensor segment_scale(const Tensor& x, const Tensor& w,
                     std::span<const std::size_t> offsets);

/// Per-row normalisation followed by gain/bias (both 1 x n).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-6);

/// Inverted dropout: kept entries are scaled by 1 / (1 - rate). Identity when
/// !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

/// Rows of table[V x d] selected by ids. Throws on out-of-range ids.
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids);

Tensor concat(std::span<const Tensor> xs, Axis axis);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

/// Mean over the given axis: kRows gives 1 x cols, kCols gives rows x 1.
Tensor mean_pool(const Tensor& x, Axis axis);
Tensor sum(const Tensor& x);
Tensor pick(const Tensor& x, std::size_t row, std::size_t col);

/// Fused LSTM pointwise stage, row by row. gates is n x 4d in (input, forget,
/// cell, output) order, c_prev is n x d. Returns n x 2d = [h; c].
Tensor lstm_cell(const Tensor& gates, const Tensor& c_prev);

}  // namespace hiertab::ops
