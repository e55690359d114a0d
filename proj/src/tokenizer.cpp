#include "longembed/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace longembed {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
            throw VocabError("duplicate token '" + tokens_[i] + "' at line " + std::to_string(i));
        }
    }
    auto require = [&](std::string_view name) {
        const TokenId id = find(name);
        if (id < 0) throw VocabError("missing special token " + std::string(name));
        return id;
    };
    pad_ = require(kPadToken);
    if (pad_ != 0) throw VocabError("special token [PAD] must have id 0, found at " + std::to_string(pad_));
    unk_ = require(kUnkToken);
    cls_ = require(kClsToken);
    sep_ = require(kSepToken);
    mask_ = require(kMaskToken);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw VocabError("cannot open vocabulary file " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            if (in.peek() == std::char_traits<char>::eof()) break;
            throw VocabError("empty token at line " + std::to_string(line_no) + " of " + path.string());
        }
        tokens.push_back(line);
        ++line_no;
    }
    return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw VocabError("cannot write vocabulary file " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
}

const std::string& Vocabulary::token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? -1 : it->second;
}

bool Vocabulary::is_special(TokenId id) const {
    return id == pad_ || id == unk_ || id == cls_ || id == sep_ || id == mask_;
}

std::uint64_t Vocabulary::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tokens_) {
        for (unsigned char c : t) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        h ^= 0x0a;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

// Byte offsets of UTF-8 code point starts, plus the end offset.
std::vector<std::size_t> codepoint_bounds(std::string_view s) {
    std::vector<std::size_t> bounds;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) bounds.push_back(i);
    }
    bounds.push_back(s.size());
    return bounds;
}

void wordpiece(std::string_view piece, const Vocabulary& vocab, const TokenizerOptions& options,
               std::vector<TokenId>& out) {
    const auto bounds = codepoint_bounds(piece);
    const std::size_t n_chars = bounds.size() - 1;
    if (n_chars > options.max_chars_per_word) {
        out.push_back(vocab.unk_id());
        return;
    }
    std::vector<TokenId> pieces;
    std::size_t start = 0;
    std::string candidate;
    while (start < n_chars) {
        std::size_t end = n_chars;
        TokenId match = -1;
        while (start < end) {
            candidate.clear();
            if (start > 0) candidate.append(kContinuationPrefix);
            candidate.append(piece.substr(bounds[start], bounds[end] - bounds[start]));
            match = vocab.find(candidate);
            if (match >= 0) break;
            --end;
        }
        if (match < 0) {
            out.push_back(vocab.unk_id());
            return;
        }
        pieces.push_back(match);
        start = end;
    }
    out.insert(out.end(), pieces.begin(), pieces.end());
}

}  // namespace

TokenizedSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len,
                           const TokenizerOptions& options) {
    if (max_len < 2) throw std::invalid_argument("tokenize: max_len must be at least 2");
    const std::size_t budget = max_len - 2;

    TokenizedSequence seq;
    seq.token_ids.push_back(vocab.cls_id());
    seq.word_ids.push_back(kSpecialWord);

    std::int64_t word = -1;
    std::size_t i = 0;
    std::vector<TokenId> ids;
    std::string piece;
    auto flush = [&] {
        if (piece.empty()) return;
        ids.clear();
        wordpiece(piece, vocab, options, ids);
        for (TokenId id : ids) {
            seq.token_ids.push_back(id);
            seq.word_ids.push_back(word);
        }
        piece.clear();
    };
    while (i < text.size() && seq.token_ids.size() - 1 < budget) {
        while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
        if (i == text.size()) break;
        ++word;
        while (i < text.size() && !is_space(static_cast<unsigned char>(text[i]))) {
            const auto c = static_cast<unsigned char>(text[i]);
            if (is_punct(c)) {
                flush();
                piece.push_back(static_cast<char>(c));
                flush();
            } else {
                piece.push_back(options.lowercase && c < 0x80 ? static_cast<char>(std::tolower(c))
                                                               : static_cast<char>(c));
            }
            ++i;
        }
        flush();
    }
    if (seq.token_ids.size() - 1 > budget) {
        seq.token_ids.resize(budget + 1);
        seq.word_ids.resize(budget + 1);
    }
    seq.token_ids.push_back(vocab.sep_id());
    seq.word_ids.push_back(kSpecialWord);
    seq.attention_mask.assign(seq.token_ids.size(), 1);
    return seq;
}

std::string detokenize(const TokenizedSequence& seq, const Vocabulary& vocab) {
    std::string out;
    std::int64_t prev_word = kSpecialWord;
    for (std::size_t i = 0; i < seq.token_ids.size(); ++i) {
        const TokenId id = seq.token_ids[i];
        if (id == vocab.cls_id() || id == vocab.sep_id() || id == vocab.pad_id()) continue;
        const std::string& tok = vocab.token(id);
        const bool continuation = tok.starts_with(kContinuationPrefix);
        if (continuation) {
            out.append(tok.substr(kContinuationPrefix.size()));
        } else {
            if (!out.empty() && seq.word_ids[i] != prev_word) out.push_back(' ');
            out.append(tok);
        }
        prev_word = seq.word_ids[i];
    }
    return out;
}

PaddedBatch pad_batch(std::span<const TokenizedSequence> seqs, TokenId pad_id) {
    if (seqs.empty()) throw std::invalid_argument("pad_batch: empty batch");
    PaddedBatch batch;
    batch.batch = seqs.size();
    for (const auto& s : seqs) batch.seq_len = std::max(batch.seq_len, s.size());
    const std::size_t total = batch.batch * batch.seq_len;
    batch.token_ids.assign(total, pad_id);
    batch.word_ids.assign(total, kSpecialWord);
    batch.attention_mask.assign(total, 0);
    for (std::size_t b = 0; b < seqs.size(); ++b) {
        const auto& s = seqs[b];
        const std::size_t base = b * batch.seq_len;
        std::ranges::copy(s.token_ids, batch.token_ids.begin() + static_cast<std::ptrdiff_t>(base));
        std::ranges::copy(s.word_ids, batch.word_ids.begin() + static_cast<std::ptrdiff_t>(base));
        std::ranges::copy(s.attention_mask, batch.attention_mask.begin() + static_cast<std::ptrdiff_t>(base));
    }
    return batch;
}

}  // namespace longembed
