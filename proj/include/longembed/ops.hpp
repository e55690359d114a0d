#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "longembed/random.hpp"
#include "longembed/tensor.hpp"

namespace longembed {

// Penalty standing in for -inf on masked attention scores.
inline constexpr double kMaskPenalty = -1e9;

namespace ops {

// 2-D matrix product with optional transposition of either operand.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);
// Batched product over the leading axis: [G,m,k] x [G,k,n] -> [G,m,n].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// Adds a vector along the last axis.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x [N,in] * w [in,out] + b [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Exact form x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-12);

// Inverted dropout: survivors are scaled by 1/(1-rate).
Tensor dropout(const Tensor& x, double rate, Rng& rng);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor transpose2d(const Tensor& x);
// Stacks 2-D tensors with equal column counts.
Tensor concat_rows(std::span<const Tensor> parts);

// Row lookup: table [V,H], ids -> [ids.size(), H].
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

// Mean negative log-likelihood of targets under softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets);

// [B*L, heads*hd] <-> [B*heads, L, hd].
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads);
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads);

// scores [B*heads, L, L] + bias [heads, L, L] + penalty at key positions
// where key_mask [B, L] is zero. Bias and mask are constants.
Tensor add_attention_bias(const Tensor& scores, const Tensor& bias,
                          std::span<const std::uint8_t> key_mask, std::size_t batch);

// hidden [B, L, H], mask [B, L] -> [B, H] averaged over mask == 1.
Tensor masked_mean_pool(const Tensor& hidden, std::span<const std::uint8_t> mask);

Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

}  // namespace ops
}  // namespace longembed
