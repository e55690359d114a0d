#include "longembed/mlm.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "longembed/parallel.hpp"

namespace longembed {

std::vector<TokenId> MaskedBatch::restored() const {
    std::vector<TokenId> out = input_ids;
    for (std::size_t p : mask_positions) out[p] = labels[p];
    return out;
}

MaskedBatch apply_whole_word_masking(const TokenizedSequence& seq, const Vocabulary& vocab, Rng& rng,
                                     const MaskingOptions& options) {
    if (!(options.rate > 0.0 && options.rate <= 1.0)) throw std::invalid_argument("masking rate must be in (0,1]");
    MaskedBatch out;
    out.input_ids = seq.token_ids;
    out.labels.assign(seq.size(), kIgnoreLabel);
    out.word_ids = seq.word_ids;
    out.attention_mask = seq.attention_mask;

    // Positions per word, in order of first appearance.
    std::vector<std::vector<std::size_t>> words;
    std::map<std::int64_t, std::size_t> slot;
    std::size_t maskable = 0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const std::int64_t w = seq.word_ids[i];
        if (w < 0 || (!seq.attention_mask.empty() && seq.attention_mask[i] == 0)) continue;
        auto [it, inserted] = slot.emplace(w, words.size());
        if (inserted) words.emplace_back();
        words[it->second].push_back(i);
        ++maskable;
    }
    if (maskable == 0) return out;

    const auto target = static_cast<std::size_t>(std::ceil(options.rate * static_cast<double>(maskable) - 1e-9));
    std::vector<std::size_t> order(words.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_range(order.begin(), order.end(), rng);

    std::size_t covered = 0;
    for (std::size_t w : order) {
        if (covered >= target) break;
        for (std::size_t p : words[w]) out.mask_positions.push_back(p);
        covered += words[w].size();
    }
    std::ranges::sort(out.mask_positions);

    std::vector<TokenId> replacements;
    for (std::size_t id = 0; id < vocab.size(); ++id) {
        if (!vocab.is_special(static_cast<TokenId>(id))) replacements.push_back(static_cast<TokenId>(id));
    }
    for (std::size_t p : out.mask_positions) {
        out.labels[p] = seq.token_ids[p];
        const double u = uniform01(rng);
        if (u < options.mask_prob) {
            out.input_ids[p] = vocab.mask_id();
        } else if (u < options.mask_prob + options.random_prob) {
            const std::uint64_t pick = uniform_index(rng, replacements.empty() ? vocab.size() : replacements.size());
            out.input_ids[p] = replacements.empty() ? static_cast<TokenId>(pick) : replacements[pick];
        }
    }
    return out;
}

MaskedBatch apply_whole_word_masking(const TokenizedSequence& seq, const Vocabulary& vocab, std::uint64_t seed,
                                     const MaskingOptions& options) {
    Rng rng(seed);
    return apply_whole_word_masking(seq, vocab, rng, options);
}

MaskedBatch evaluation_mask(const TokenizedSequence& seq, const Vocabulary& vocab, std::uint64_t eval_seed,
                            std::size_t doc_index, const MaskingOptions& options) {
    return apply_whole_word_masking(seq, vocab, mix_seed(eval_seed, doc_index), options);
}

namespace {

struct MaskedRows {
    PaddedBatch padded;
    std::vector<std::size_t> rows;
    std::vector<TokenId> targets;
};

MaskedRows collate(std::span<const MaskedBatch> batch, TokenId pad_id) {
    MaskedRows out;
    std::vector<TokenizedSequence> seqs;
    seqs.reserve(batch.size());
    for (const auto& m : batch) {
        TokenizedSequence s;
        s.token_ids = m.input_ids;
        s.word_ids = m.word_ids;
        s.attention_mask = m.attention_mask.empty() ? std::vector<std::uint8_t>(m.input_ids.size(), 1) : m.attention_mask;
        seqs.push_back(std::move(s));
    }
    out.padded = pad_batch(seqs, pad_id);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        for (std::size_t p : batch[b].mask_positions) {
            out.rows.push_back(b * out.padded.seq_len + p);
            out.targets.push_back(batch[b].labels[p]);
        }
    }
    return out;
}

}  // namespace

Tensor mlm_loss(const EncoderState& state, std::span<const MaskedBatch> batch, const ForwardContext& ctx) {
    if (batch.empty()) throw std::invalid_argument("mlm_loss: empty batch");
    MaskedRows m = collate(batch, 0);
    if (m.rows.empty()) throw std::invalid_argument("mlm_loss: batch has no masked positions");
    Tensor hidden = forward(state, m.padded, ctx);
    Tensor flat = ops::reshape(hidden, {m.padded.batch * m.padded.seq_len, state.config.hidden});
    Tensor logits = mlm_logits(state, ops::gather_rows(flat, m.rows));
    return ops::cross_entropy(logits, m.targets);
}

MlmAccuracy masked_accuracy(const EncoderState& state, std::span<const MaskedBatch> batch) {
    MlmAccuracy acc;
    MaskedRows m = collate(batch, 0);
    if (m.rows.empty()) return acc;
    NoGradGuard no_grad;
    Tensor hidden = forward(state, m.padded);
    Tensor flat = ops::reshape(hidden, {m.padded.batch * m.padded.seq_len, state.config.hidden});
    Tensor logits = mlm_logits(state, ops::gather_rows(flat, m.rows));
    const std::size_t v = logits.dim(1);
    dispatch(logits.dtype(), [&]<typename T>() {
        auto z = logits.data<T>();
        for (std::size_t r = 0; r < m.rows.size(); ++r) {
            const T* row = z.data() + r * v;
            const auto best = static_cast<TokenId>(std::max_element(row, row + v) - row);
            acc.correct += best == m.targets[r] ? 1 : 0;
        }
    });
    acc.total = m.rows.size();
    acc.accuracy = static_cast<double>(acc.correct) / static_cast<double>(acc.total);
    return acc;
}

MlmAccuracy mlm_accuracy(const EncoderState& state, const Vocabulary& vocab, std::span<const std::string> corpus,
                         std::size_t seq_len, std::uint64_t eval_seed, std::size_t batch_size, std::size_t threads) {
    if (corpus.empty()) throw std::invalid_argument("mlm_accuracy: empty corpus");
    if (batch_size == 0) batch_size = 1;
    std::vector<MaskedBatch> masked;
    masked.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        MaskedBatch m = evaluation_mask(tokenize(corpus[i], vocab, seq_len), vocab, eval_seed, i);
        if (!m.empty()) masked.push_back(std::move(m));
    }
    MlmAccuracy total;
    if (masked.empty()) return total;
    const std::size_t n_chunks = (masked.size() + batch_size - 1) / batch_size;
    std::vector<MlmAccuracy> parts(n_chunks);
    parallel_for(n_chunks, threads, [&](std::size_t c) {
        const std::size_t begin = c * batch_size;
        const std::size_t end = std::min(masked.size(), begin + batch_size);
        parts[c] = masked_accuracy(state, std::span<const MaskedBatch>(masked).subspan(begin, end - begin));
    });
    for (const auto& p : parts) {
        total.correct += p.correct;
        total.total += p.total;
    }
    total.accuracy = total.total ? static_cast<double>(total.correct) / static_cast<double>(total.total) : 0.0;
    return total;
}

}  // namespace longembed
