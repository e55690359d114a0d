#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "longembed/eval.hpp"
#include "longembed/io.hpp"
#include "longembed/tokenizer.hpp"

// Toy corpora with known structure for training and evaluation tests.
namespace longembed::testing {

// "[PAD] [UNK] [CLS] [SEP] [MASK]" followed by `words`.
Vocabulary make_vocab(const std::vector<std::string>& words);

// prefix0, prefix1, ...
std::vector<std::string> numbered_words(const std::string& prefix, std::size_t n);

// Documents made of runs: a word drawn uniformly from `words`, repeated
// min_run..max_run times. Every token's nearest neighbours usually share its
// word, so masked tokens are recoverable from local context alone.
std::vector<std::string> runs_corpus(const std::vector<std::string>& words, std::size_t docs,
                                     std::size_t words_per_doc, std::size_t min_run, std::size_t max_run,
                                     std::uint64_t seed);

// Query words a_i map one-to-one onto target words b_i. Queries hold
// `content` distinct a-words; targets hold the mapped b-words in shuffled
// order mixed with filler words.
struct PairWorld {
    std::vector<std::string> a_words, b_words, filler;
    std::size_t content = 4;
    std::size_t min_filler = 2, max_filler = 6;

    PairWorld(std::size_t concepts, std::size_t filler_words, std::size_t content_words);

    std::vector<std::string> all_words() const;

    struct Example {
        std::vector<std::size_t> concepts;
        std::string query, target;
    };
    Example sample(Rng& rng) const;
    std::string target_for(const std::vector<std::size_t>& concepts, Rng& rng) const;

    std::vector<PairRecord> pairs(std::size_t n, std::uint64_t seed, const std::string& source = "toy") const;

    // Negatives are the positive's concepts with `swap` of them replaced.
    std::vector<TripletRecord> triplets(std::size_t n, std::uint64_t seed, std::size_t swap = 1) const;

    // Documents open with `lead` filler tokens; the answer span (the mapped
    // b-words) follows. Each query has exactly one relevant document.
    RetrievalTask long_docs(std::size_t queries, std::size_t lead, std::uint64_t seed) const;
};

}  // namespace longembed::testing
