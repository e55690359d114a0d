#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "longembed/encoder.hpp"
#include "longembed/random.hpp"
#include "longembed/tokenizer.hpp"

namespace longembed {

inline constexpr TokenId kIgnoreLabel = -100;
inline constexpr std::uint64_t kDefaultEvalSeed = 0x5eed'e7a1ULL;

struct MaskingOptions {
    double rate = 0.30;
    double mask_prob = 0.8;
    double random_prob = 0.1;
};

struct MaskedBatch {
    std::vector<TokenId> input_ids;
    std::vector<TokenId> labels;  // original id at masked positions, kIgnoreLabel elsewhere
    std::vector<std::size_t> mask_positions;
    std::vector<std::int64_t> word_ids;
    std::vector<std::uint8_t> attention_mask;

    bool empty() const { return mask_positions.empty(); }
    // Input with labels written back.
    std::vector<TokenId> restored() const;
};

// Shuffles the maskable words and selects whole words until at least
// ceil(rate * maskable tokens) tokens are covered; then each selected token
// becomes [MASK], a random non-special token, or stays, with probabilities
// mask_prob, random_prob and the remainder.
MaskedBatch apply_whole_word_masking(const TokenizedSequence& seq, const Vocabulary& vocab, Rng& rng,
                                     const MaskingOptions& options = {});
MaskedBatch apply_whole_word_masking(const TokenizedSequence& seq, const Vocabulary& vocab, std::uint64_t seed,
                                     const MaskingOptions& options = {});

// The masking mlm_accuracy applies to document `doc_index`.
MaskedBatch evaluation_mask(const TokenizedSequence& seq, const Vocabulary& vocab, std::uint64_t eval_seed,
                            std::size_t doc_index, const MaskingOptions& options = {});

// Mean negative log-likelihood over every masked position in the batch.
Tensor mlm_loss(const EncoderState& state, std::span<const MaskedBatch> batch, const ForwardContext& ctx = {});

struct MlmAccuracy {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
};

MlmAccuracy masked_accuracy(const EncoderState& state, std::span<const MaskedBatch> batch);

// Tokenizes each document truncated to seq_len, applies evaluation_mask and
// counts argmax hits over all masked positions.
MlmAccuracy mlm_accuracy(const EncoderState& state, const Vocabulary& vocab, std::span<const std::string> corpus,
                         std::size_t seq_len, std::uint64_t eval_seed = kDefaultEvalSeed,
                         std::size_t batch_size = 8, std::size_t threads = 1);

}  // namespace longembed
