#pragma once

#include <span>
#include <vector>

#include "hyperadapt/tensor.hpp"

namespace hyperadapt {

inline constexpr int kIgnoreIndex = -100;

// Linear algebra. All matrix ops take rank-2 operands.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// Elementwise, identical shapes only.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

// The single broadcasting op: x[m,n] + bias[n] on every row.
Tensor add_row(const Tensor& x, const Tensor& bias);

Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = 1e-6);
Tensor softmax_rows(const Tensor& x);

/// Mean negative log-likelihood over rows whose target is not
/// `ignore_index`. Throws when every row is ignored.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets,
                             int ignore_index = kIgnoreIndex);

// Structural ops.
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
// Contiguous window [offset, offset + numel(shape)) of a flat buffer.
Tensor view(const Tensor& x, std::size_t offset, Shape shape);
Tensor stack(const std::vector<Tensor>& parts);
Tensor mean_rows(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

/// Multi-head causal self-attention without biases:
/// softmax(mask(Q_h K_h^T / sqrt(d_h))) V_h per head, heads concatenated,
/// then projected by wo.
Tensor causal_self_attention(const Tensor& x, const Tensor& wq, const Tensor& wk,
                             const Tensor& wv, const Tensor& wo, std::size_t n_heads);

}  // namespace hyperadapt
