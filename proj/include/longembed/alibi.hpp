#pragma once

#include <cstddef>
#include <vector>

#include "longembed/tensor.hpp"

namespace longembed {

enum class AlibiVariant { encoder, causal };

// Per-head distance penalties for n heads. Head i (1-based) gets
//   m_i = b^(2i)          for i <  a
//   m_i = b^(1 + 2(i-a))  for i >= a
// with a = 2^floor(log2 n) and b = 2^(-8 / 2^ceil(log2 n)).
struct AlibiSlopes {
    std::size_t n = 0;
    double a = 0.0;
    double b = 0.0;
    std::vector<double> m;
};

AlibiSlopes compute_slopes(std::size_t heads);

// Geometric 2^(-8i/n) sequence of the original causal ALiBi, with the
// interleaved completion for non-power-of-two head counts.
AlibiSlopes canonical_slopes(std::size_t heads);

struct AttentionBias {
    AlibiVariant variant = AlibiVariant::encoder;
    std::size_t heads = 0;
    std::size_t seq_len = 0;
    Tensor values;  // [heads, seq_len, seq_len]

    double at(std::size_t head, std::size_t i, std::size_t j) const {
        return values.at((head * seq_len + i) * seq_len + j);
    }
};

// Encoder: bias[i][j] = -m |i - j|. Causal: -m (i - j) for j <= i and the
// mask penalty for j > i.
AttentionBias build_bias(const AlibiSlopes& slopes, std::size_t seq_len,
                         AlibiVariant variant = AlibiVariant::encoder,
                         DType dtype = default_dtype());

}  // namespace longembed
