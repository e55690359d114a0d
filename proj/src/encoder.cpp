#include "longembed/encoder.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace longembed {

NLOHMANN_JSON_SERIALIZE_ENUM(GluVariant, {{GluVariant::geglu, "geglu"}, {GluVariant::reglu, "reglu"}})
NLOHMANN_JSON_SERIALIZE_ENUM(PositionMode, {{PositionMode::alibi, "alibi"}, {PositionMode::learned, "learned"}})
NLOHMANN_JSON_SERIALIZE_ENUM(AlibiVariant, {{AlibiVariant::encoder, "encoder"}, {AlibiVariant::causal, "causal"}})

ModelConfig ModelConfig::small() {
    ModelConfig c;
    c.layers = 4;
    c.hidden = 512;
    c.heads = 8;
    c.ffn_inner = 4 * c.hidden;
    return c;
}

ModelConfig ModelConfig::base() {
    ModelConfig c;
    c.layers = 12;
    c.hidden = 768;
    c.heads = 12;
    c.ffn_inner = 4 * c.hidden;
    return c;
}

ModelConfig ModelConfig::large() {
    ModelConfig c;
    c.layers = 24;
    c.hidden = 1024;
    c.heads = 16;
    c.ffn_inner = 4 * c.hidden;
    c.glu_variant = GluVariant::reglu;
    return c;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::preset(const std::string& name) {
    if (name == "small") return small();
    if (name == "base") return base();
    if (name == "large") return large();
    if (name == "desk") return desk();
    throw std::invalid_argument("unknown model preset '" + name + "'");
}

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw std::invalid_argument(std::string("model config: ") + name + " must be >= 1");
    };
    positive(layers, "layers");
    positive(hidden, "hidden");
    positive(heads, "heads");
    positive(head_dim, "head_dim");
    positive(ffn_inner, "ffn_inner");
    positive(vocab_size, "vocab_size");
    if (heads * head_dim != hidden) {
        throw std::invalid_argument("model config: heads x head_dim = " + std::to_string(heads * head_dim) +
                                    " differs from hidden = " + std::to_string(hidden));
    }
    for (auto [rate, name] : {std::pair{dropout, "dropout"}, std::pair{attention_dropout, "attention_dropout"}}) {
        if (!(rate >= 0.0 && rate < 1.0)) {
            throw std::invalid_argument(std::string("model config: ") + name + " must lie in [0,1)");
        }
    }
    if (position_mode == PositionMode::learned) positive(max_positions, "max_positions");
    if (!(layer_norm_eps > 0.0)) throw std::invalid_argument("model config: layer_norm_eps must be > 0");
    if (!(init_std > 0.0)) throw std::invalid_argument("model config: init_std must be > 0");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"layers", c.layers},
                       {"hidden", c.hidden},
                       {"heads", c.heads},
                       {"head_dim", c.head_dim},
                       {"ffn_inner", c.ffn_inner},
                       {"glu_variant", c.glu_variant},
                       {"vocab_size", c.vocab_size},
                       {"dropout", c.dropout},
                       {"attention_dropout", c.attention_dropout},
                       {"alibi_variant", c.alibi_variant},
                       {"canonical_alibi_slopes", c.canonical_alibi_slopes},
                       {"tie_mlm_head", c.tie_mlm_head},
                       {"position_mode", c.position_mode},
                       {"max_positions", c.max_positions},
                       {"layer_norm_eps", c.layer_norm_eps},
                       {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
    ModelConfig out = c;
    if (j.contains("preset")) out = ModelConfig::preset(j.at("preset").get<std::string>());
    static const std::set<std::string> known = {
        "preset", "layers", "hidden", "heads", "head_dim", "ffn_inner", "glu_variant", "vocab_size",
        "dropout", "attention_dropout", "alibi_variant", "canonical_alibi_slopes", "tie_mlm_head",
        "position_mode", "max_positions", "layer_norm_eps", "init_std"};
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw std::invalid_argument("unknown model config key '" + key + "'");
    }
    auto read = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    read("layers", out.layers);
    read("hidden", out.hidden);
    read("heads", out.heads);
    read("head_dim", out.head_dim);
    if (j.contains("hidden") && !j.contains("ffn_inner")) out.ffn_inner = 4 * out.hidden;
    read("ffn_inner", out.ffn_inner);
    read("glu_variant", out.glu_variant);
    read("vocab_size", out.vocab_size);
    read("dropout", out.dropout);
    read("attention_dropout", out.attention_dropout);
    read("alibi_variant", out.alibi_variant);
    read("canonical_alibi_slopes", out.canonical_alibi_slopes);
    read("tie_mlm_head", out.tie_mlm_head);
    read("position_mode", out.position_mode);
    read("max_positions", out.max_positions);
    read("layer_norm_eps", out.layer_norm_eps);
    read("init_std", out.init_std);
    c = out;
}

std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t h = c.hidden, f = c.ffn_inner, v = c.vocab_size;
    std::size_t total = v * h + 2 * h;
    if (c.position_mode == PositionMode::learned) total += c.max_positions * h;
    const std::size_t per_layer = 4 * (h * h + h)   // q, k, v, o
                                  + 2 * (h * f + f) // gate, value
                                  + f * h + h       // out
                                  + 4 * h;          // two layer norms
    total += c.layers * per_layer;
    total += h * h + h + 2 * h + v;  // head transform, head norm, decoder bias
    if (!c.tie_mlm_head) total += h * v;
    return total;
}

std::vector<NamedTensor> EncoderState::named_parameters() const {
    std::vector<NamedTensor> out;
    out.push_back({"embeddings.token", token_embedding});
    if (position_embedding.defined()) out.push_back({"embeddings.position", position_embedding});
    out.push_back({"embeddings.ln.gain", emb_ln_gain});
    out.push_back({"embeddings.ln.bias", emb_ln_bias});
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string p = "layers." + std::to_string(i) + ".";
        out.push_back({p + "attn.q.weight", l.q_w});
        out.push_back({p + "attn.q.bias", l.q_b});
        out.push_back({p + "attn.k.weight", l.k_w});
        out.push_back({p + "attn.k.bias", l.k_b});
        out.push_back({p + "attn.v.weight", l.v_w});
        out.push_back({p + "attn.v.bias", l.v_b});
        out.push_back({p + "attn.out.weight", l.o_w});
        out.push_back({p + "attn.out.bias", l.o_b});
        out.push_back({p + "attn.ln.gain", l.attn_ln_gain});
        out.push_back({p + "attn.ln.bias", l.attn_ln_bias});
        out.push_back({p + "ffn.gate.weight", l.gate_w});
        out.push_back({p + "ffn.gate.bias", l.gate_b});
        out.push_back({p + "ffn.value.weight", l.value_w});
        out.push_back({p + "ffn.value.bias", l.value_b});
        out.push_back({p + "ffn.out.weight", l.out_w});
        out.push_back({p + "ffn.out.bias", l.out_b});
        out.push_back({p + "ffn.ln.gain", l.ffn_ln_gain});
        out.push_back({p + "ffn.ln.bias", l.ffn_ln_bias});
    }
    out.push_back({"mlm.transform.weight", head_w});
    out.push_back({"mlm.transform.bias", head_b});
    out.push_back({"mlm.ln.gain", head_ln_gain});
    out.push_back({"mlm.ln.bias", head_ln_bias});
    out.push_back({"mlm.decoder.bias", decoder_bias});
    if (decoder_w.defined()) out.push_back({"mlm.decoder.weight", decoder_w});
    return out;
}

EncoderState EncoderState::clone() const {
    EncoderState c = *this;
    auto deep = [](Tensor& t) {
        if (t.defined()) t = t.clone();
    };
    deep(c.token_embedding);
    deep(c.position_embedding);
    deep(c.emb_ln_gain);
    deep(c.emb_ln_bias);
    for (auto& l : c.layers) {
        for (Tensor* t : {&l.q_w, &l.q_b, &l.k_w, &l.k_b, &l.v_w, &l.v_b, &l.o_w, &l.o_b, &l.attn_ln_gain,
                          &l.attn_ln_bias, &l.gate_w, &l.gate_b, &l.value_w, &l.value_b, &l.out_w, &l.out_b,
                          &l.ffn_ln_gain, &l.ffn_ln_bias}) {
            deep(*t);
        }
    }
    for (Tensor* t : {&c.head_w, &c.head_b, &c.head_ln_gain, &c.head_ln_bias, &c.decoder_bias, &c.decoder_w}) deep(*t);
    return c;
}

std::size_t EncoderState::parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : named_parameters()) total += p.tensor.numel();
    return total;
}

AlibiSlopes EncoderState::slopes() const {
    return config.canonical_alibi_slopes ? canonical_slopes(config.heads) : compute_slopes(config.heads);
}

EncoderState init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    const DType dt = default_dtype();
    auto normal = [&](const Shape& shape) {
        Tensor t = Tensor::zeros(shape, dt);
        dispatch(dt, [&]<typename T>() {
            for (T& v : t.data<T>()) v = static_cast<T>(truncated_normal(rng, config.init_std));
        });
        return t.set_requires_grad(true);
    };
    auto zeros = [&](std::size_t n) { return Tensor::zeros({n}, dt).set_requires_grad(true); };
    auto ones = [&](std::size_t n) { return Tensor::full({n}, 1.0, dt).set_requires_grad(true); };

    const std::size_t h = config.hidden, f = config.ffn_inner, v = config.vocab_size;
    EncoderState s;
    s.config = config;
    s.token_embedding = normal({v, h});
    if (config.position_mode == PositionMode::learned) s.position_embedding = normal({config.max_positions, h});
    s.emb_ln_gain = ones(h);
    s.emb_ln_bias = zeros(h);
    s.layers.resize(config.layers);
    for (auto& l : s.layers) {
        l.q_w = normal({h, h});
        l.q_b = zeros(h);
        l.k_w = normal({h, h});
        l.k_b = zeros(h);
        l.v_w = normal({h, h});
        l.v_b = zeros(h);
        l.o_w = normal({h, h});
        l.o_b = zeros(h);
        l.attn_ln_gain = ones(h);
        l.attn_ln_bias = zeros(h);
        l.gate_w = normal({h, f});
        l.gate_b = zeros(f);
        l.value_w = normal({h, f});
        l.value_b = zeros(f);
        l.out_w = normal({f, h});
        l.out_b = zeros(h);
        l.ffn_ln_gain = ones(h);
        l.ffn_ln_bias = zeros(h);
    }
    s.head_w = normal({h, h});
    s.head_b = zeros(h);
    s.head_ln_gain = ones(h);
    s.head_ln_bias = zeros(h);
    s.decoder_bias = zeros(v);
    if (!config.tie_mlm_head) s.decoder_w = normal({h, v});
    return s;
}

namespace {

Tensor maybe_dropout(const Tensor& x, double rate, const ForwardContext& ctx) {
    if (!ctx.training || rate == 0.0) return x;
    if (ctx.rng == nullptr) throw std::invalid_argument("training forward pass requires a random generator");
    return ops::dropout(x, rate, *ctx.rng);
}

}  // namespace

AttentionOutput attention_block(const EncoderLayer& layer, const ModelConfig& config, const Tensor& x,
                                const AttentionBias& bias, std::span<const std::uint8_t> mask,
                                std::size_t batch, const ForwardContext& ctx) {
    const std::size_t heads = config.heads;
    Tensor q = ops::split_heads(ops::linear(x, layer.q_w, layer.q_b), batch, heads);
    Tensor k = ops::split_heads(ops::linear(x, layer.k_w, layer.k_b), batch, heads);
    Tensor v = ops::split_heads(ops::linear(x, layer.v_w, layer.v_b), batch, heads);
    Tensor scores = ops::scale(ops::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(config.head_dim)));
    scores = ops::add_attention_bias(scores, bias.values, mask, batch);
    Tensor probs = ops::softmax_lastdim(scores);
    Tensor mixed = ops::bmm(maybe_dropout(probs, config.attention_dropout, ctx), v);
    Tensor projected = ops::linear(ops::merge_heads(mixed, batch, heads), layer.o_w, layer.o_b);
    projected = maybe_dropout(projected, config.dropout, ctx);
    Tensor out = ops::layer_norm(ops::add(x, projected), layer.attn_ln_gain, layer.attn_ln_bias,
                                 config.layer_norm_eps);
    return {out, probs};
}

Tensor glu_feedforward(const EncoderLayer& layer, const ModelConfig& config, const Tensor& x,
                       const ForwardContext& ctx) {
    Tensor gate = ops::linear(x, layer.gate_w, layer.gate_b);
    Tensor value = ops::linear(x, layer.value_w, layer.value_b);
    Tensor activated = config.glu_variant == GluVariant::geglu ? ops::gelu(gate) : ops::relu(gate);
    Tensor ff = ops::linear(ops::mul(activated, value), layer.out_w, layer.out_b);
    ff = maybe_dropout(ff, config.dropout, ctx);
    return ops::layer_norm(ops::add(x, ff), layer.ffn_ln_gain, layer.ffn_ln_bias, config.layer_norm_eps);
}

AttentionBias attention_bias_for(const EncoderState& state, std::size_t seq_len) {
    const auto& c = state.config;
    const DType dt = state.token_embedding.dtype();
    if (c.position_mode == PositionMode::learned) {
        AlibiSlopes flat = compute_slopes(c.heads);
        std::ranges::fill(flat.m, 0.0);
        return build_bias(flat, seq_len, c.alibi_variant, dt);
    }
    return build_bias(state.slopes(), seq_len, c.alibi_variant, dt);
}

Tensor forward(const EncoderState& state, const PaddedBatch& batch, const ForwardContext& ctx) {
    const auto& c = state.config;
    const std::size_t b = batch.batch, len = batch.seq_len;
    if (b == 0 || len == 0) throw std::invalid_argument("forward: empty batch");
    if (batch.token_ids.size() != b * len || batch.attention_mask.size() != b * len) {
        throw ShapeError("forward: padded batch buffers do not match batch x seq_len");
    }
    Tensor x = ops::embedding(state.token_embedding, batch.token_ids);
    if (c.position_mode == PositionMode::learned) {
        if (len > c.max_positions) {
            throw std::out_of_range("forward: sequence length " + std::to_string(len) +
                                    " exceeds the learned position table of " + std::to_string(c.max_positions));
        }
        std::vector<std::int64_t> positions(b * len);
        for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int64_t>(i % len);
        x = ops::add(x, ops::embedding(state.position_embedding, positions));
    }
    x = ops::layer_norm(x, state.emb_ln_gain, state.emb_ln_bias, c.layer_norm_eps);
    x = maybe_dropout(x, c.dropout, ctx);

    const AttentionBias bias = attention_bias_for(state, len);
    for (const auto& layer : state.layers) {
        x = attention_block(layer, c, x, bias, batch.attention_mask, b, ctx).output;
        x = glu_feedforward(layer, c, x, ctx);
    }
    return ops::reshape(x, {b, len, c.hidden});
}

Tensor mlm_logits(const EncoderState& state, const Tensor& hidden_rows) {
    const auto& c = state.config;
    Tensor t = ops::gelu(ops::linear(hidden_rows, state.head_w, state.head_b));
    t = ops::layer_norm(t, state.head_ln_gain, state.head_ln_bias, c.layer_norm_eps);
    if (c.tie_mlm_head) return ops::add_bias(ops::matmul(t, state.token_embedding, false, true), state.decoder_bias);
    return ops::linear(t, state.decoder_w, state.decoder_bias);
}

}  // namespace longembed
