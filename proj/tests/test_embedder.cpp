#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "longembed/embedder.hpp"
#include "longembed/io.hpp"
#include "synthetic.hpp"

using namespace longembed;

namespace {

ModelConfig model_for(std::size_t vocab) {
    ModelConfig c;
    c.layers = 2;
    c.hidden = 16;
    c.heads = 2;
    c.head_dim = 8;
    c.ffn_inner = 32;
    c.vocab_size = vocab;
    return c;
}

}  // namespace

TEST_CASE("mean pool examples") {
    Tensor h = Tensor::from_values({3, 2}, {1, 2, 5, 6, 9, 9}, DType::f64);
    CHECK(mean_pool(h, std::vector<std::uint8_t>{0, 1, 0}).values == std::vector<double>{5, 6});
    CHECK(mean_pool(h, std::vector<std::uint8_t>{1, 1, 0}).values == std::vector<double>{3, 4});
    Tensor h2 = Tensor::from_values({2, 2}, {1, 2, 5, 6}, DType::f64);
    CHECK(mean_pool(h2, std::vector<std::uint8_t>{1, 1}).values == mean_pool(h, std::vector<std::uint8_t>{1, 1, 0}).values);
    CHECK_THROWS(mean_pool(h, std::vector<std::uint8_t>{0, 0, 0}));
}

TEST_CASE("mean pool commutes with permutation of positions") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(5 * 3);
        for (auto& x : v) x = standard_normal(rng);
        std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0};
        const auto base = mean_pool(Tensor::from_values({5, 3}, v, DType::f64), mask).values;
        // Reverse the rows and the mask together.
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < 5; ++i) {
            for (std::size_t j = 0; j < 3; ++j) r[(4 - i) * 3 + j] = v[i * 3 + j];
        }
        std::vector<std::uint8_t> rm(mask.rbegin(), mask.rend());
        const auto perm = mean_pool(Tensor::from_values({5, 3}, r, DType::f64), rm).values;
        for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(perm[j] - base[j]) < 1e-12);
    }
}

TEST_CASE("cosine similarity") {
    const std::vector<double> u = {1, 0}, v = {1, 1}, w = {0, 3}, z = {0, 0};
    CHECK(cosine_similarity(u, u) == doctest::Approx(1.0));
    CHECK(cosine_similarity(u, w) == 0.0);
    CHECK(cosine_similarity(u, v) == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-12));
    CHECK(cosine_similarity(v, u) == cosine_similarity(u, v));
    CHECK_THROWS(cosine_similarity(u, z));
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
        std::vector<double> a(4), b(4);
        for (auto& x : a) x = standard_normal(rng);
        for (auto& x : b) x = standard_normal(rng);
        CHECK(std::abs(cosine_similarity(a, b)) <= 1.0);
    }
}

TEST_CASE("encode is deterministic, ordered and batch-size invariant") {
    const auto words = testing::numbered_words("w", 30);
    const auto v = testing::make_vocab(words);
    const auto state = init_model(model_for(v.size()), 7);
    const std::vector<std::string> texts = {"w1 w2 w3", "w4", "w5 w6 w7 w8 w9 w10 w11", "w1 w2 w3", ""};
    EncodeOptions one;
    one.batch_size = 1;
    EncodeOptions all;
    all.batch_size = 5;
    all.threads = 2;
    const auto a = encode(state, v, texts, 32, one);
    const auto b = encode(state, v, texts, 32, all);
    REQUIRE(a.size() == texts.size());
    CHECK(a[0].values == a[3].values);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        CHECK(a[i].size() == 16);
        for (std::size_t j = 0; j < 16; ++j) {
            CHECK(std::isfinite(a[i].values[j]));
            CHECK(std::abs(a[i].values[j] - b[i].values[j]) < 1e-5);
        }
    }
    const auto again = encode(state, v, texts, 32, one);
    CHECK(again[2].values == a[2].values);
    CHECK_THROWS(encode(state, testing::make_vocab({"x"}), texts, 32));
}

TEST_CASE("pooling mask can exclude special tokens") {
    const auto v = testing::make_vocab({"a", "b"});
    const std::vector<TokenizedSequence> seqs = {tokenize("a b", v, 8), tokenize("", v, 8)};
    const auto batch = pad_batch(seqs, v.pad_id());
    PoolingOptions no_special;
    no_special.include_special = false;
    CHECK(pooling_mask(batch) == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 1, 0, 0});
    CHECK(pooling_mask(batch, no_special) == std::vector<std::uint8_t>{0, 1, 1, 0, 1, 1, 0, 0});
}

TEST_CASE("embedding files round trip") {
    std::vector<EmbeddingVector> e = {{{1.5, -2.0, 0.25}, "doc-1"}, {{0.0, 1.0, 3.0}, ""}};
    const auto dir = std::filesystem::temp_directory_path();
    write_embeddings_bin(dir / "le_emb.bin", e);
    const auto back = read_embeddings_bin(dir / "le_emb.bin");
    REQUIRE(back.size() == 2);
    CHECK(back[0].source_id == "doc-1");
    CHECK(back[0].values == e[0].values);
    write_embeddings_jsonl(dir / "le_emb.jsonl", e);
    const auto back2 = read_embeddings_jsonl(dir / "le_emb.jsonl");
    CHECK(back2[1].values == e[1].values);
    // Truncated binary file.
    const auto bytes = read_file(dir / "le_emb.bin");
    write_file_atomic(dir / "le_emb_cut.bin", [&](std::ostream& os) { os << bytes.substr(0, bytes.size() - 3); });
    CHECK_THROWS_AS(read_embeddings_bin(dir / "le_emb_cut.bin"), DataError);
}
