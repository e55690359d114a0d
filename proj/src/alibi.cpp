#include "longembed/alibi.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

#include "longembed/ops.hpp"

namespace longembed {

AlibiSlopes compute_slopes(std::size_t heads) {
    if (heads == 0) throw std::invalid_argument("compute_slopes: head count must be at least 1");
    AlibiSlopes s;
    s.n = heads;
    const int floor_log2 = std::bit_width(heads) - 1;
    const int ceil_log2 = std::bit_width(heads - 1);
    s.a = std::ldexp(1.0, floor_log2);
    const double log2_b = -8.0 / std::ldexp(1.0, ceil_log2);
    s.b = std::exp2(log2_b);
    s.m.reserve(heads);
    for (std::size_t i = 1; i <= heads; ++i) {
        const double id = static_cast<double>(i);
        const double exponent = id < s.a ? 2.0 * id : 1.0 + 2.0 * (id - s.a);
        s.m.push_back(std::exp2(log2_b * exponent));
    }
    return s;
}

namespace {

std::vector<double> geometric_slopes(std::size_t n) {
    const double start = std::exp2(-8.0 / static_cast<double>(n));
    std::vector<double> out;
    out.reserve(n);
    double v = start;
    for (std::size_t i = 0; i < n; ++i, v *= start) out.push_back(v);
    return out;
}

}  // namespace

AlibiSlopes canonical_slopes(std::size_t heads) {
    if (heads == 0) throw std::invalid_argument("canonical_slopes: head count must be at least 1");
    AlibiSlopes s = compute_slopes(heads);
    const auto closest = static_cast<std::size_t>(s.a);
    s.m = geometric_slopes(closest);
    if (closest < heads) {
        const auto extra = geometric_slopes(2 * closest);
        for (std::size_t i = 0; s.m.size() < heads; i += 2) s.m.push_back(extra[i]);
    }
    return s;
}

AttentionBias build_bias(const AlibiSlopes& slopes, std::size_t seq_len, AlibiVariant variant, DType dtype) {
    if (seq_len == 0) throw std::invalid_argument("build_bias: seq_len must be at least 1");
    if (slopes.m.size() != slopes.n || slopes.n == 0) throw std::invalid_argument("build_bias: malformed slopes");
    AttentionBias bias;
    bias.variant = variant;
    bias.heads = slopes.n;
    bias.seq_len = seq_len;
    bias.values = Tensor::zeros({slopes.n, seq_len, seq_len}, dtype);
    dispatch(dtype, [&]<typename T>() {
        auto v = bias.values.data<T>();
        for (std::size_t h = 0; h < slopes.n; ++h) {
            const double m = slopes.m[h];
            T* head = v.data() + h * seq_len * seq_len;
            for (std::size_t i = 0; i < seq_len; ++i) {
                for (std::size_t j = 0; j < seq_len; ++j) {
                    const double dist = i >= j ? static_cast<double>(i - j) : static_cast<double>(j - i);
                    double value = -m * dist;
                    if (variant == AlibiVariant::causal && j > i) value = kMaskPenalty;
                    head[i * seq_len + j] = static_cast<T>(value);
                }
            }
        }
    });
    return bias;
}

}  // namespace longembed
