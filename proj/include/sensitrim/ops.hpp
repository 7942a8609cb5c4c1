#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sensitrim/tensor.hpp"

namespace sensitrim {

// Every operation below records a backward node when a tape is active and at
// least one input requires a gradient. Shape violations throw ShapeError.

/// [M×K]·[K×P] → [M×P].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise sum of two same-shape tensors.
Tensor add(const Tensor& a, const Tensor& b);

/// t[..., j] + v[j] for every leading index.
Tensor add_bias(const Tensor& t, const Tensor& v);

/// t[..., j] · v[j]. Gradients flow to both operands.
Tensor broadcast_mul(const Tensor& t, const Tensor& v);

Tensor scale(const Tensor& t, float factor);

/// Sum of all entries as a scalar.
Tensor sum(const Tensor& t);

/// Softmax along the trailing axis, max-subtracted.
Tensor softmax_rows(const Tensor& t);

Tensor layer_norm(const Tensor& t, const Tensor& gain, const Tensor& bias, float eps);

/// Exact (erf) GELU.
Tensor gelu(const Tensor& t);

/// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels);

/// Σ|t|.
Tensor l1_norm(const Tensor& t);

/// Rows of a [R×D] table selected by index → [n×D]. Indices must be < R.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);

/// Token lookup into a [vocab×D] table; ids outside [0, vocab) throw InputError.
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);

/// Layout of a flattened [batch·seq × width] activation for attention.
struct AttentionLayout {
    std::size_t batch = 0;
    std::size_t seq = 0;
    /// Per-head column widths; they partition the width of q/k/v. A width of
    /// zero is a head with no surviving dimensions.
    std::vector<std::size_t> head_widths;
    float scale = 1.0f;
    /// Number of valid key positions per sequence; empty means all of `seq`.
    std::vector<std::size_t> lengths;
};

/// Multi-head scaled dot-product attention: per sequence and head,
/// softmax(scale · Q Kᵀ) V, with keys past the sequence length excluded.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout);

}  // namespace sensitrim
