#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "longembed/embedder.hpp"
#include "longembed/encoder.hpp"
#include "longembed/mlm.hpp"
#include "longembed/tokenizer.hpp"

namespace longembed {

// Binary relevance: query id -> relevant doc ids.
struct QrelSet {
    std::map<std::string, std::set<std::string>> relevant;

    void add(const std::string& query_id, const std::string& doc_id) { relevant[query_id].insert(doc_id); }

    // Tab-separated `query_id doc_id relevance`; rows with relevance <= 0 are
    // dropped. A non-numeric relevance on the first line marks a header.
    static QrelSet load_tsv(const std::filesystem::path& path);
    void save_tsv(const std::filesystem::path& path) const;
};

struct RankedDoc {
    std::string doc_id;
    double score = 0.0;
};

// Per query, documents in rank order with nonincreasing scores.
struct RetrievalRun {
    std::map<std::string, std::vector<RankedDoc>> rankings;

    // Throws if scores increase or a doc id repeats within a query.
    void validate() const;

    // Tab-separated `query_id doc_id rank score`.
    static RetrievalRun load_tsv(const std::filesystem::path& path);
    void save_tsv(const std::filesystem::path& path) const;
};

// Averages run over queries that have at least one relevant document; such a
// query missing from the run scores 0. Empty qrels throw.
double ndcg_at_k(const RetrievalRun& run, const QrelSet& qrels, std::size_t k = 10);
double mrr_at_k(const RetrievalRun& run, const QrelSet& qrels, std::size_t k);
// Average precision truncated at k, normalized by min(|relevant|, k).
double map_at_k(const RetrievalRun& run, const QrelSet& qrels, std::size_t k);
double precision_at_k(const RetrievalRun& run, const QrelSet& qrels, std::size_t k);
double recall_at_k(const RetrievalRun& run, const QrelSet& qrels, std::size_t k);

struct MetricValue {
    std::string metric;  // e.g. "ndcg@10"
    double value = 0.0;
};

// ndcg, mrr, map, precision and recall at every k.
std::vector<MetricValue> retrieval_suite(const RetrievalRun& run, const QrelSet& qrels,
                                         std::span<const std::size_t> ks);

// Ranks every document for every query by cosine similarity; ties break by
// document order.
RetrievalRun retrieve(std::span<const EmbeddingVector> queries, std::span<const EmbeddingVector> docs,
                      std::size_t top_k);

struct KMeansOptions {
    std::size_t batch_size = 32;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
};

struct KMeansResult {
    std::vector<std::size_t> labels;
    std::vector<std::vector<double>> centroids;
    double inertia = 0.0;
};

// k-means++ seeding, then mini-batch updates where each centroid moves toward
// an assigned point with rate 1 / (points it has absorbed so far).
KMeansResult minibatch_kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                              const KMeansOptions& options = {});

struct VMeasure {
    double homogeneity = 0.0;
    double completeness = 0.0;
    double v_measure = 0.0;
};

VMeasure v_measure_scores(std::span<const std::int64_t> predicted, std::span<const std::int64_t> truth);
double v_measure(std::span<const std::int64_t> predicted, std::span<const std::int64_t> truth);

// Fractional ranks, 1-based; ties receive the mean of their positions.
std::vector<double> average_ranks(std::span<const double> x);
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

struct SweepRow {
    std::size_t length = 0;
    std::string metric;
    double value = 0.0;
};

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

// MLM accuracy at each length with the identical evaluation masking scheme.
std::vector<SweepRow> mlm_length_sweep(const EncoderState& state, const Vocabulary& vocab,
                                       std::span<const std::string> corpus, std::span<const std::size_t> lengths,
                                       std::uint64_t eval_seed = kDefaultEvalSeed, std::size_t threads = 1);

struct RetrievalTask {
    std::vector<std::string> query_ids, query_texts;
    std::vector<std::string> doc_ids, doc_texts;
    QrelSet qrels;
};

// Documents are truncated to each length; queries always use query_max_len.
std::vector<SweepRow> retrieval_length_sweep(const EncoderState& state, const Vocabulary& vocab,
                                             const RetrievalTask& task, std::span<const std::size_t> lengths,
                                             std::size_t query_max_len, std::span<const std::size_t> ks,
                                             const EncodeOptions& options = {});

RetrievalRun run_retrieval(const EncoderState& state, const Vocabulary& vocab, const RetrievalTask& task,
                           std::size_t doc_max_len, std::size_t query_max_len, std::size_t top_k,
                           const EncodeOptions& options = {});

struct ClusteringTask {
    std::vector<std::string> texts;
    std::vector<std::int64_t> labels;
};

// k = number of distinct labels; reports V-measure per length.
std::vector<SweepRow> clustering_length_sweep(const EncoderState& state, const Vocabulary& vocab,
                                              const ClusteringTask& task, std::span<const std::size_t> lengths,
                                              const KMeansOptions& kmeans = {}, const EncodeOptions& options = {});

}  // namespace longembed
