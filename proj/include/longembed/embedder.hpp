#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "longembed/encoder.hpp"
#include "longembed/tokenizer.hpp"

namespace longembed {

struct EmbeddingVector {
    std::vector<double> values;
    std::string source_id;

    std::size_t size() const { return values.size(); }
};

// Average of hidden [L, H] rows where mask is 1. No parameters.
EmbeddingVector mean_pool(const Tensor& hidden, std::span<const std::uint8_t> mask);

// u.v / (|u||v|), clamped to [-1, 1]. Zero vectors are rejected.
double cosine_similarity(std::span<const double> u, std::span<const double> v);
double cosine_similarity(const EmbeddingVector& u, const EmbeddingVector& v);

struct PoolingOptions {
    // [CLS] and [SEP] carry attention mask 1 and are averaged in by default.
    bool include_special = true;
};

// Positions averaged for each row of a padded batch.
std::vector<std::uint8_t> pooling_mask(const PaddedBatch& batch, const PoolingOptions& options = {});

// Differentiable pooled embeddings [B, hidden]; used by contrastive training.
Tensor embed_batch(const EncoderState& state, const PaddedBatch& batch, const ForwardContext& ctx = {},
                   const PoolingOptions& options = {});

// Tokenizes texts for training/inference and pads them together.
PaddedBatch tokenize_batch(std::span<const std::string> texts, const Vocabulary& vocab, std::size_t max_len);

struct EncodeOptions {
    std::size_t batch_size = 32;
    std::size_t threads = 1;
    PoolingOptions pooling;
};

// Inference path: tokenize, forward without dropout, mean pool. Output order
// matches input order.
std::vector<EmbeddingVector> encode(const EncoderState& state, const Vocabulary& vocab,
                                    std::span<const std::string> texts, std::size_t max_len,
                                    const EncodeOptions& options = {});

// Binary layout, little-endian:
//   "JEV2" | u32 version | u64 count | u32 dim |
//   count x (u16 id_len | id bytes | dim x f32)
inline constexpr std::uint32_t kEmbeddingFileVersion = 1;

void write_embeddings_bin(const std::filesystem::path& path, std::span<const EmbeddingVector> embeddings);
std::vector<EmbeddingVector> read_embeddings_bin(const std::filesystem::path& path);
// One {"id": ..., "vector": [...]} object per line.
void write_embeddings_jsonl(const std::filesystem::path& path, std::span<const EmbeddingVector> embeddings);
std::vector<EmbeddingVector> read_embeddings_jsonl(const std::filesystem::path& path);

}  // namespace longembed
