#pragma once

#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "longembed/encoder.hpp"

// Gradient-check batteries shared by the unit tests and the acceptance run.
namespace longembed::testing {

struct NamedCheck {
    std::string name;
    GradCheckResult result;
};

// Every differentiable op on small random f64 inputs.
std::vector<NamedCheck> op_gradchecks();

// 2 layers, hidden 8, 2 heads; no dropout, wide init so gradients are not tiny.
ModelConfig gradcheck_model_config();

PaddedBatch make_padded_batch(const std::vector<std::vector<TokenId>>& rows, std::size_t seq_len);

// All parameters of a 2-layer encoder through each of the three losses.
std::vector<NamedCheck> model_gradchecks();

}  // namespace longembed::testing
