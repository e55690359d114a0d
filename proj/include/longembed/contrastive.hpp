#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "longembed/io.hpp"
#include "longembed/random.hpp"
#include "longembed/tensor.hpp"

namespace longembed {

inline constexpr std::size_t kHardNegatives = 15;
inline constexpr double kDefaultTemperature = 0.05;

// Bidirectional InfoNCE from a similarity matrix scores[i][j] = s(q_i, p_j):
// mean_i -ln softmax(scores[i] / tau)[i] plus the same over columns.
Tensor pair_info_nce_scores(const Tensor& scores, double tau = kDefaultTemperature);

// Cosine similarities between query and target embeddings [k, H], then the
// score-level loss. Requires k >= 2.
Tensor pair_info_nce(const Tensor& queries, const Tensor& targets, double tau = kDefaultTemperature);

// query_positive[r][i] = s(q_r, p_i); query_negative[r][c] = s(q_r, n_c) over
// the k * 15 negatives of the whole batch. The query-side denominator spans
// every positive and every negative in the batch; the reversed term contrasts
// each positive against the batch queries only.
Tensor hard_negative_loss_scores(const Tensor& query_positive, const Tensor& query_negative,
                                 double tau = kDefaultTemperature);

// negatives [k * 15, H], rows 15r .. 15r+14 belong to record r.
Tensor hard_negative_loss(const Tensor& queries, const Tensor& positives, const Tensor& negatives,
                          double tau = kDefaultTemperature);

// Cosine similarity matrix between the rows of a and b.
Tensor cosine_matrix(const Tensor& a, const Tensor& b);

struct PairBatch {
    std::vector<std::string> queries;
    std::vector<std::string> targets;
    std::string source;
};

struct TripletBatch {
    std::vector<TripletRecord> records;
};

// Weighted choice of a source per batch, then consecutive records from that
// source's shuffled order. Each source walks epochs of fresh permutations
// derived from (seed, source, epoch), so the cursor state is small.
class SamplingPlan {
public:
    SamplingPlan() = default;
    SamplingPlan(std::vector<std::string> names, std::vector<std::size_t> sizes, std::vector<double> weights,
                 std::uint64_t seed);

    struct Draw {
        std::size_t source = 0;
        std::vector<std::size_t> indices;
    };

    Draw next(std::size_t k, Rng& rng);

    std::size_t source_count() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    const std::vector<double>& weights() const { return weights_; }

    nlohmann::json state() const;
    void restore(const nlohmann::json& state);

private:
    struct Cursor {
        std::uint64_t epoch = 0;
        std::size_t position = 0;
        std::vector<std::size_t> order;
    };
    void reshuffle(std::size_t source);

    std::vector<std::string> names_;
    std::vector<std::size_t> sizes_;
    std::vector<double> weights_;  // normalized
    std::uint64_t seed_ = 0;
    std::vector<Cursor> cursors_;
};

struct PairCorpus {
    std::vector<std::string> sources;
    std::vector<std::vector<PairRecord>> records;  // per source

    static PairCorpus group(const std::vector<PairRecord>& pairs);
};

// Sampling weights default to source sizes when `weights` is empty.
SamplingPlan make_pair_plan(const PairCorpus& corpus, const std::map<std::string, double>& weights,
                            std::uint64_t seed);

PairBatch next_pair_batch(SamplingPlan& plan, const PairCorpus& corpus, std::size_t k, Rng& rng);
TripletBatch next_triplet_batch(SamplingPlan& plan, const std::vector<TripletRecord>& records, std::size_t k,
                                Rng& rng);

}  // namespace longembed
