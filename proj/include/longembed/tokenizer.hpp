#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace longembed {

using TokenId = std::int64_t;

// Word id carried by [CLS], [SEP] and [PAD].
inline constexpr std::int64_t kSpecialWord = -1;

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kContinuationPrefix = "##";

class VocabError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Vocabulary {
public:
    Vocabulary() = default;
    // Ids are positions in `tokens`. [PAD] must be at id 0.
    explicit Vocabulary(std::vector<std::string> tokens);

    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::string& token(TokenId id) const;
    // Returns -1 when absent.
    TokenId find(std::string_view token) const;
    bool contains(std::string_view token) const { return find(token) >= 0; }

    TokenId pad_id() const { return pad_; }
    TokenId unk_id() const { return unk_; }
    TokenId cls_id() const { return cls_; }
    TokenId sep_id() const { return sep_; }
    TokenId mask_id() const { return mask_; }
    bool is_special(TokenId id) const;

    // FNV-1a over the token list; identifies a vocabulary in checkpoints.
    std::uint64_t fingerprint() const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    TokenId pad_ = 0, unk_ = -1, cls_ = -1, sep_ = -1, mask_ = -1;
};

struct TokenizedSequence {
    std::vector<TokenId> token_ids;
    std::vector<std::int64_t> word_ids;
    std::vector<std::uint8_t> attention_mask;

    std::size_t size() const { return token_ids.size(); }
};

struct TokenizerOptions {
    bool lowercase = true;
    std::size_t max_chars_per_word = 100;
};

// Lowercase, split on whitespace and punctuation, then greedy longest-match
// WordPiece per piece. Word ids index whitespace-delimited words, so a
// punctuation piece shares the id of the word it was attached to.
TokenizedSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len,
                           const TokenizerOptions& options = {});

// Joins tokens back into text, gluing "##" pieces and same-word pieces.
std::string detokenize(const TokenizedSequence& seq, const Vocabulary& vocab);

struct PaddedBatch {
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::vector<TokenId> token_ids;           // [batch * seq_len]
    std::vector<std::int64_t> word_ids;       // [batch * seq_len]
    std::vector<std::uint8_t> attention_mask; // [batch * seq_len]
};

PaddedBatch pad_batch(std::span<const TokenizedSequence> seqs, TokenId pad_id = 0);

}  // namespace longembed
