#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "suites.hpp"
#include "longembed/contrastive.hpp"
#include "longembed/encoder.hpp"
#include "longembed/mlm.hpp"

using namespace longembed;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.layers = 2;
    c.hidden = 8;
    c.heads = 2;
    c.head_dim = 4;
    c.ffn_inner = 12;
    c.vocab_size = 20;
    c.dropout = 0.0;
    c.attention_dropout = 0.0;
    c.init_std = 0.3;
    c.layer_norm_eps = 1e-6;
    return c;
}

PaddedBatch make_batch(const std::vector<std::vector<TokenId>>& rows, std::size_t seq_len) {
    PaddedBatch b;
    b.batch = rows.size();
    b.seq_len = seq_len;
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < seq_len; ++i) {
            const bool real = i < r.size();
            b.token_ids.push_back(real ? r[i] : 0);
            b.word_ids.push_back(real ? static_cast<std::int64_t>(i) : kSpecialWord);
            b.attention_mask.push_back(real ? 1 : 0);
        }
    }
    return b;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

std::vector<double> row_slice(const Tensor& t, std::size_t row, std::size_t begin, std::size_t count,
                              std::size_t len, std::size_t h) {
    std::vector<double> out;
    for (std::size_t i = begin; i < begin + count; ++i) {
        for (std::size_t j = 0; j < h; ++j) out.push_back(t.at((row * len + i) * h + j));
    }
    return out;
}

std::vector<Tensor> parameter_handles(const EncoderState& s) {
    std::vector<Tensor> out;
    for (const auto& p : s.named_parameters()) out.push_back(p.tensor);
    return out;
}

}  // namespace

TEST_CASE("presets reproduce the reference model sizes") {
    const auto base = parameter_count(ModelConfig::base());
    const auto small = parameter_count(ModelConfig::small());
    const auto large = parameter_count(ModelConfig::large());
    MESSAGE("base " << base << " small " << small << " large " << large);
    CHECK(std::abs(static_cast<double>(base) / 137e6 - 1) <= 0.03);
    CHECK(std::abs(static_cast<double>(small) / 33e6 - 1) <= 0.05);
    CHECK(std::abs(static_cast<double>(large) / 455e6 - 1) <= 0.07);
}

TEST_CASE("parameter count is the sum of the tensors") {
    for (auto c : {tiny_config(), ModelConfig::desk()}) {
        c.vocab_size = 50;
        const auto state = init_model(c, 3);
        std::size_t total = 0;
        for (const auto& p : state.named_parameters()) total += p.tensor.numel();
        CHECK(total == parameter_count(c));
        CHECK(state.parameter_count() == total);
    }
    // Each GLU block holds three hidden x ffn_inner matrices.
    auto c = tiny_config();
    const auto s = init_model(c, 1);
    CHECK(s.layers[0].gate_w.numel() + s.layers[0].value_w.numel() + s.layers[0].out_w.numel() ==
          3 * c.hidden * c.ffn_inner);
}

TEST_CASE("clone owns its parameters") {
    const auto a = init_model(tiny_config(), 4);
    const auto b = a.clone();
    const auto pa = a.named_parameters(), pb = b.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].tensor.to_vector() == pb[i].tensor.to_vector());
        CHECK(pa[i].tensor.impl_ptr() != pb[i].tensor.impl_ptr());
    }
    Tensor w = b.layers[0].q_w;
    w.set(0, w.at(0) + 1.0);
    CHECK(a.layers[0].q_w.at(0) != b.layers[0].q_w.at(0));
}

TEST_CASE("config validation and JSON round trip") {
    auto c = tiny_config();
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK_THROWS_AS(init_model(c, 0), std::invalid_argument);
    c = tiny_config();
    c.dropout = 1.0;
    CHECK_THROWS(c.validate());

    const auto base = ModelConfig::base();
    nlohmann::json j = base;
    const auto back = j.get<ModelConfig>();
    CHECK(parameter_count(back) == parameter_count(base));
    CHECK_THROWS(nlohmann::json({{"hiddden", 3}}).get<ModelConfig>());
}

TEST_CASE("init is deterministic per seed") {
    const auto a = init_model(tiny_config(), 42), b = init_model(tiny_config(), 42), c = init_model(tiny_config(), 43);
    CHECK(a.token_embedding.to_vector() == b.token_embedding.to_vector());
    CHECK(a.layers[1].out_w.to_vector() == b.layers[1].out_w.to_vector());
    CHECK(a.token_embedding.to_vector() != c.token_embedding.to_vector());
    CHECK(a.layers[0].attn_ln_gain.to_vector() == std::vector<double>(8, 1.0));
    CHECK(a.layers[0].q_b.to_vector() == std::vector<double>(8, 0.0));
}

TEST_CASE("attention rows normalize and ignore padding") {
    PrecisionGuard g(DType::f64);
    const auto state = init_model(tiny_config(), 5);
    const auto batch = make_batch({{3, 4, 5, 6, 7}, {8, 9}}, 5);
    Tensor x = ops::reshape(ops::embedding(state.token_embedding, batch.token_ids), {10, 8});
    const auto bias = attention_bias_for(state, 5);
    const auto out = attention_block(state.layers[0], state.config, x, bias, batch.attention_mask, 2);
    const auto p = out.probabilities;  // [B*heads, L, L]
    for (std::size_t g2 = 0; g2 < 4; ++g2) {
        const std::size_t b = g2 / 2;
        for (std::size_t i = 0; i < 5; ++i) {
            double sum = 0;
            for (std::size_t j = 0; j < 5; ++j) {
                const double w = p.at((g2 * 5 + i) * 5 + j);
                sum += w;
                if (!batch.attention_mask[b * 5 + j]) CHECK(w < 1e-300);
            }
            CHECK(std::abs(sum - 1) < 1e-12);
        }
    }
}

TEST_CASE("zero slopes and uniform queries and keys give uniform attention") {
    PrecisionGuard g(DType::f64);
    auto state = init_model(tiny_config(), 6);
    for (auto* t : {&state.layers[0].q_w, &state.layers[0].k_w}) *t = Tensor::zeros(t->shape());
    const auto batch = make_batch({{3, 4, 5, 6}}, 6);
    Tensor x = ops::embedding(state.token_embedding, batch.token_ids);
    AlibiSlopes zero = compute_slopes(2);
    zero.m = {0.0, 0.0};
    const auto bias = build_bias(zero, 6, AlibiVariant::encoder, DType::f64);
    const auto p = attention_block(state.layers[0], state.config, x, bias, batch.attention_mask, 1).probabilities;
    for (std::size_t i = 0; i < 2 * 6 * 6; ++i) {
        const std::size_t j = i % 6;
        CHECK(p.at(i) == doctest::Approx(j < 4 ? 0.25 : 0.0));
    }
}

TEST_CASE("reglu with negative gates passes the residual through") {
    PrecisionGuard g(DType::f64);
    auto c = tiny_config();
    c.glu_variant = GluVariant::reglu;
    auto state = init_model(c, 7);
    auto& layer = state.layers[0];
    layer.gate_w = Tensor::zeros(layer.gate_w.shape());
    layer.gate_b = Tensor::full(layer.gate_b.shape(), -1.0);
    Rng rng(1);
    Tensor x = testing::random_tensor({3, 8}, rng);
    const auto out = glu_feedforward(layer, c, x);
    const auto ref = ops::layer_norm(x, layer.ffn_ln_gain, layer.ffn_ln_bias, c.layer_norm_eps);
    CHECK(max_abs_diff(out.to_vector(), ref.to_vector()) < 1e-12);
}

TEST_CASE("forward shape, single token and id range") {
    const auto state = init_model(tiny_config(), 8);
    const auto out = forward(state, make_batch({{7}}, 1));
    CHECK(out.shape() == Shape{1, 1, 8});
    for (double v : out.to_vector()) CHECK(std::isfinite(v));
    CHECK_THROWS_AS(forward(state, make_batch({{20}}, 1)), std::out_of_range);
}

TEST_CASE("padding invariance and translation covariance") {
    PrecisionGuard g(DType::f64);
    const auto state = init_model(tiny_config(), 9);
    const std::vector<TokenId> seq = {2, 5, 6, 7, 8, 3};
    const auto plain = forward(state, make_batch({seq}, 6));
    const auto padded = forward(state, make_batch({seq}, 11));
    CHECK(max_abs_diff(row_slice(plain, 0, 0, 6, 6, 8), row_slice(padded, 0, 0, 6, 11, 8)) < 1e-5);

    // Left padding: the same tokens shifted right by 4, pads masked out.
    PaddedBatch left;
    left.batch = 1;
    left.seq_len = 10;
    for (std::size_t i = 0; i < 4; ++i) {
        left.token_ids.push_back(0);
        left.word_ids.push_back(kSpecialWord);
        left.attention_mask.push_back(0);
    }
    for (std::size_t i = 0; i < 6; ++i) {
        left.token_ids.push_back(seq[i]);
        left.word_ids.push_back(static_cast<std::int64_t>(i));
        left.attention_mask.push_back(1);
    }
    const auto shifted = forward(state, left);
    CHECK(max_abs_diff(row_slice(plain, 0, 0, 6, 6, 8), row_slice(shifted, 0, 4, 6, 10, 8)) < 1e-5);
}

TEST_CASE("learned-position baseline cannot exceed its table") {
    auto c = tiny_config();
    c.position_mode = PositionMode::learned;
    c.max_positions = 8;
    const auto state = init_model(c, 1);
    CHECK(state.position_embedding.shape() == Shape{8, 8});
    CHECK_NOTHROW(forward(state, make_batch({{1, 2, 3}}, 8)));
    CHECK_THROWS_AS(forward(state, make_batch({{1, 2, 3}}, 9)), std::out_of_range);
}

TEST_CASE("ALiBi forward is length agnostic") {
    const auto state = init_model(tiny_config(), 2);
    std::vector<TokenId> ids(1500);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<TokenId>(5 + i % 15);
    const auto out = forward(state, make_batch({ids}, ids.size()));
    bool finite = true;
    for (float v : out.data<float>()) finite = finite && std::isfinite(v);
    CHECK(finite);
}

TEST_CASE("full encoder gradients match finite differences") {
    for (const auto& c : testing::model_gradchecks()) {
        INFO(c.name << ": " << c.result.worst);
        CHECK(c.result.checked > 0);
        CHECK(c.result.max_rel_error < 1e-4);
    }
}
