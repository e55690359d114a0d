#include "longembed/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "longembed/io.hpp"
#include "longembed/parallel.hpp"

namespace longembed {

EmbeddingVector mean_pool(const Tensor& hidden, std::span<const std::uint8_t> mask) {
    if (hidden.rank() != 2) throw ShapeError("mean_pool: expected [L, H], got " + shape_str(hidden.shape()));
    const std::size_t len = hidden.dim(0), h = hidden.dim(1);
    if (mask.size() != len) throw ShapeError("mean_pool: mask length differs from sequence length");
    EmbeddingVector out;
    out.values.assign(h, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < len; ++i) {
        if (!mask[i]) continue;
        ++count;
        for (std::size_t j = 0; j < h; ++j) out.values[j] += hidden.at(i * h + j);
    }
    if (count == 0) throw std::invalid_argument("mean_pool: every position is masked");
    for (auto& v : out.values) v /= static_cast<double>(count);
    return out;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw ShapeError("cosine_similarity: dimension mismatch");
    double dot = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    if (uu == 0.0 || vv == 0.0) throw std::invalid_argument("cosine_similarity: zero vector");
    return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

double cosine_similarity(const EmbeddingVector& u, const EmbeddingVector& v) {
    return cosine_similarity(u.values, v.values);
}

std::vector<std::uint8_t> pooling_mask(const PaddedBatch& batch, const PoolingOptions& options) {
    std::vector<std::uint8_t> mask = batch.attention_mask;
    if (options.include_special) return mask;
    for (std::size_t b = 0; b < batch.batch; ++b) {
        const std::size_t base = b * batch.seq_len;
        bool any = false;
        for (std::size_t l = 0; l < batch.seq_len; ++l) {
            if (batch.word_ids[base + l] < 0) mask[base + l] = 0;
            any = any || mask[base + l];
        }
        // Empty text: fall back to the special tokens.
        if (!any) std::copy_n(batch.attention_mask.begin() + static_cast<std::ptrdiff_t>(base), batch.seq_len,
                              mask.begin() + static_cast<std::ptrdiff_t>(base));
    }
    return mask;
}

Tensor embed_batch(const EncoderState& state, const PaddedBatch& batch, const ForwardContext& ctx,
                   const PoolingOptions& options) {
    return ops::masked_mean_pool(forward(state, batch, ctx), pooling_mask(batch, options));
}

PaddedBatch tokenize_batch(std::span<const std::string> texts, const Vocabulary& vocab, std::size_t max_len) {
    std::vector<TokenizedSequence> seqs;
    seqs.reserve(texts.size());
    for (const auto& t : texts) seqs.push_back(tokenize(t, vocab, max_len));
    return pad_batch(seqs, vocab.pad_id());
}

std::vector<EmbeddingVector> encode(const EncoderState& state, const Vocabulary& vocab,
                                    std::span<const std::string> texts, std::size_t max_len,
                                    const EncodeOptions& options) {
    if (vocab.size() != state.config.vocab_size) {
        throw std::invalid_argument("encode: vocabulary has " + std::to_string(vocab.size()) +
                                    " tokens but the model expects " + std::to_string(state.config.vocab_size));
    }
    std::vector<EmbeddingVector> out(texts.size());
    if (texts.empty()) return out;
    const std::size_t bs = std::max<std::size_t>(1, options.batch_size);
    const std::size_t chunks = (texts.size() + bs - 1) / bs;
    parallel_for(chunks, options.threads, [&](std::size_t c) {
        NoGradGuard no_grad;
        const std::size_t begin = c * bs;
        const std::size_t end = std::min(texts.size(), begin + bs);
        const PaddedBatch batch = tokenize_batch(texts.subspan(begin, end - begin), vocab, max_len);
        const Tensor pooled = embed_batch(state, batch, {}, options.pooling);
        const std::size_t h = pooled.dim(1);
        for (std::size_t i = begin; i < end; ++i) {
            auto& e = out[i];
            e.values.resize(h);
            for (std::size_t j = 0; j < h; ++j) e.values[j] = pooled.at((i - begin) * h + j);
        }
    });
    return out;
}

namespace {
constexpr char kEmbeddingMagic[4] = {'J', 'E', 'V', '2'};
}

void write_embeddings_bin(const std::filesystem::path& path, std::span<const EmbeddingVector> embeddings) {
    const std::size_t dim = embeddings.empty() ? 0 : embeddings.front().size();
    for (const auto& e : embeddings) {
        if (e.size() != dim) throw std::invalid_argument("write_embeddings_bin: ragged embedding dimensions");
        if (e.source_id.size() > 0xFFFF) throw std::invalid_argument("write_embeddings_bin: id longer than 65535 bytes");
    }
    write_file_atomic(path, [&](std::ostream& os) {
        le::put_bytes(os, kEmbeddingMagic, 4);
        le::put_u32(os, kEmbeddingFileVersion);
        le::put_u64(os, embeddings.size());
        le::put_u32(os, static_cast<std::uint32_t>(dim));
        for (const auto& e : embeddings) {
            le::put_u16(os, static_cast<std::uint16_t>(e.source_id.size()));
            le::put_bytes(os, e.source_id.data(), e.source_id.size());
            for (double v : e.values) le::put_f32(os, static_cast<float>(v));
        }
    });
}

std::vector<EmbeddingVector> read_embeddings_bin(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    if (le::get_string(in, 4) != std::string(kEmbeddingMagic, 4)) throw DataError(path.string() + ": bad magic");
    const auto version = le::get_u32(in);
    if (version != kEmbeddingFileVersion) {
        throw DataError(path.string() + ": unsupported embedding file version " + std::to_string(version));
    }
    const auto count = le::get_u64(in);
    const auto dim = le::get_u32(in);
    std::vector<EmbeddingVector> out;
    for (std::uint64_t i = 0; i < count; ++i) {
        EmbeddingVector e;
        e.source_id = le::get_string(in, le::get_u16(in));
        e.values.resize(dim);
        for (auto& v : e.values) v = le::get_f32(in);
        out.push_back(std::move(e));
    }
    return out;
}

void write_embeddings_jsonl(const std::filesystem::path& path, std::span<const EmbeddingVector> embeddings) {
    write_file_atomic(path, [&](std::ostream& os) {
        for (const auto& e : embeddings) {
            std::vector<float> v(e.values.begin(), e.values.end());
            os << nlohmann::json{{"id", e.source_id}, {"vector", v}}.dump() << '\n';
        }
    });
}

std::vector<EmbeddingVector> read_embeddings_jsonl(const std::filesystem::path& path) {
    std::vector<EmbeddingVector> out;
    for (const auto& row : read_jsonl(path)) {
        EmbeddingVector e;
        e.source_id = row.value("id", std::string{});
        if (!row.contains("vector") || !row.at("vector").is_array()) {
            const auto line = row.at("__line").get<std::size_t>();
            throw DataError(path.string() + ": line " + std::to_string(line) + " lacks a 'vector' array", line);
        }
        e.values = row.at("vector").get<std::vector<double>>();
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace longembed
