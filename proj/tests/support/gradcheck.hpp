#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "longembed/ops.hpp"
#include "longembed/random.hpp"
#include "longembed/tensor.hpp"

namespace longembed::testing {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;  // "input 2 [17]: analytic .. numeric .."
    std::size_t checked = 0;
};

// Differences below this magnitude are treated as absolute, not relative.
inline constexpr double kGradFloor = 1e-5;

inline double rel_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
    return std::abs(analytic - numeric) / denom;
}

// Contracts a tensor output with fixed random weights so every output
// element contributes to the scalar being differentiated.
inline Tensor contract(const Tensor& out, std::uint64_t seed = 99) {
    if (out.numel() == 1) return ops::sum(out);
    Rng rng(seed);
    std::vector<double> w(out.numel());
    for (auto& v : w) v = standard_normal(rng);
    return ops::sum(ops::mul(out, Tensor::from_values(out.shape(), w, out.dtype())));
}

// Central differences on every element of every input against backward().
// `fn` must be deterministic.
inline GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                 std::vector<Tensor> inputs, double h = 1e-5) {
    for (auto& t : inputs) t.set_requires_grad(true);
    Tensor loss = contract(fn(inputs));
    backward(loss);
    GradCheckResult res;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto analytic = inputs[i].grad_vector();
        for (std::size_t k = 0; k < inputs[i].numel(); ++k) {
            const double orig = inputs[i].at(k);
            double up, down;
            {
                NoGradGuard ng;
                inputs[i].set(k, orig + h);
                up = contract(fn(inputs)).item();
                inputs[i].set(k, orig - h);
                down = contract(fn(inputs)).item();
                inputs[i].set(k, orig);
            }
            const double numeric = (up - down) / (2 * h);
            const double err = rel_error(analytic[k], numeric);
            ++res.checked;
            if (err > res.max_rel_error) {
                res.max_rel_error = err;
                res.worst = "input " + std::to_string(i) + " [" + std::to_string(k) + "]: analytic " +
                            std::to_string(analytic[k]) + " numeric " + std::to_string(numeric);
            }
        }
    }
    return res;
}

inline Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0, DType dtype = DType::f64) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * standard_normal(rng);
    return Tensor::from_values(shape, v, dtype);
}

}  // namespace longembed::testing
