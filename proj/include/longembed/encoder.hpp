#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "longembed/alibi.hpp"
#include "longembed/ops.hpp"
#include "longembed/tensor.hpp"
#include "longembed/tokenizer.hpp"

namespace longembed {

enum class GluVariant { geglu, reglu };

// How position enters the model. `learned` adds an absolute position table
// and drops the attention bias; it exists as the extrapolation baseline.
enum class PositionMode { alibi, learned };

struct ModelConfig {
    std::size_t layers = 2;
    std::size_t hidden = 128;
    std::size_t heads = 2;
    std::size_t head_dim = 64;
    std::size_t ffn_inner = 512;
    GluVariant glu_variant = GluVariant::geglu;
    std::size_t vocab_size = 30522;
    double dropout = 0.1;
    double attention_dropout = 0.1;
    AlibiVariant alibi_variant = AlibiVariant::encoder;
    bool canonical_alibi_slopes = false;
    bool tie_mlm_head = true;
    PositionMode position_mode = PositionMode::alibi;
    std::size_t max_positions = 512;
    double layer_norm_eps = 1e-12;
    double init_std = 0.02;

    static ModelConfig small();
    static ModelConfig base();
    static ModelConfig large();
    // 2 layers, hidden 128, 2 heads.
    static ModelConfig desk();
    static ModelConfig preset(const std::string& name);

    // Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct EncoderLayer {
    Tensor q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
    Tensor attn_ln_gain, attn_ln_bias;
    Tensor gate_w, gate_b, value_w, value_b, out_w, out_b;
    Tensor ffn_ln_gain, ffn_ln_bias;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct EncoderState {
    ModelConfig config;
    Tensor token_embedding;     // [vocab, hidden]
    Tensor position_embedding;  // [max_positions, hidden], learned mode only
    Tensor emb_ln_gain, emb_ln_bias;
    std::vector<EncoderLayer> layers;
    Tensor head_w, head_b, head_ln_gain, head_ln_bias;
    Tensor decoder_bias;        // [vocab]
    Tensor decoder_w;           // [hidden, vocab], untied head only

    // Stable order; names are the checkpoint keys.
    std::vector<NamedTensor> named_parameters() const;
    // Copying an EncoderState shares parameter storage; clone() does not.
    EncoderState clone() const;
    std::size_t parameter_count() const;
    AlibiSlopes slopes() const;
};

std::size_t parameter_count(const ModelConfig& config);

EncoderState init_model(const ModelConfig& config, std::uint64_t seed);

struct ForwardContext {
    bool training = false;
    Rng* rng = nullptr;  // dropout source; required when training
};

struct AttentionOutput {
    Tensor output;         // [B*L, hidden]
    Tensor probabilities;  // [B*heads, L, L]
};

// Multi-head self-attention with additive bias, residual add, post-LN.
AttentionOutput attention_block(const EncoderLayer& layer, const ModelConfig& config, const Tensor& x,
                                const AttentionBias& bias, std::span<const std::uint8_t> mask,
                                std::size_t batch, const ForwardContext& ctx = {});

// out = W_out(act(W_gate x) * (W_value x)), residual add, post-LN.
Tensor glu_feedforward(const EncoderLayer& layer, const ModelConfig& config, const Tensor& x,
                       const ForwardContext& ctx = {});

// Bias used by every layer for a padded length of seq_len.
AttentionBias attention_bias_for(const EncoderState& state, std::size_t seq_len);

// Returns hidden states [B, L, hidden].
Tensor forward(const EncoderState& state, const PaddedBatch& batch, const ForwardContext& ctx = {});

// MLM decoder over selected hidden rows [n, hidden] -> logits [n, vocab].
Tensor mlm_logits(const EncoderState& state, const Tensor& hidden_rows);

}  // namespace longembed
