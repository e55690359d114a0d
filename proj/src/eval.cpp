#include "longembed/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "longembed/io.hpp"
#include "longembed/random.hpp"

namespace longembed {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, '\t')) out.push_back(field);
    return out;
}

bool parse_double(const std::string& s, double& out) {
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

template <typename PerQuery>
double average_over_queries(const RetrievalRun& run, const QrelSet& qrels, std::size_t k, PerQuery&& per_query) {
    if (k == 0) throw std::invalid_argument("cutoff k must be at least 1");
    if (qrels.relevant.empty()) throw std::invalid_argument("qrels are empty");
    static const std::vector<RankedDoc> kNoRanking;
    double total = 0.0;
    std::size_t queries = 0;
    for (const auto& [qid, relevant] : qrels.relevant) {
        if (relevant.empty()) continue;
        auto it = run.rankings.find(qid);
        const auto& ranking = it == run.rankings.end() ? kNoRanking : it->second;
        total += per_query(ranking, relevant);
        ++queries;
    }
    if (queries == 0) throw std::invalid_argument("no query has a relevant document");
    return total / static_cast<double>(queries);
}

double entropy(const std::map<std::int64_t, double>& counts, double n) {
    double h = 0.0;
    for (const auto& [_, c] : counts) {
        if (c > 0) h -= (c / n) * std::log(c / n);
    }
    return h;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

std::size_t nearest(const std::vector<std::vector<double>>& centroids, std::span<const double> x, double* dist) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = squared_distance(centroids[c], x);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    if (dist) *dist = best_d;
    return best;
}

}  // namespace

QrelSet QrelSet::load_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open qrels " + path.string());
    QrelSet q;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_tabs(line);
        double rel = 0.0;
        if (f.size() != 3 || !parse_double(f[2], rel)) {
            if (n == 1 && f.size() == 3) continue;  // header
            throw DataError(path.string() + ": line " + std::to_string(n) +
                                ": expected `query_id<TAB>doc_id<TAB>relevance`",
                            n);
        }
        if (rel > 0) q.add(f[0], f[1]);
        else q.relevant.try_emplace(f[0]);
    }
    return q;
}

void QrelSet::save_tsv(const std::filesystem::path& path) const {
    write_file_atomic(path, [&](std::ostream& os) {
        for (const auto& [qid, docs] : relevant) {
            for (const auto& d : docs) os << qid << '\t' << d << "\t1\n";
        }
    });
}

void RetrievalRun::validate() const {
    for (const auto& [qid, ranking] : rankings) {
        std::set<std::string> seen;
        for (std::size_t r = 0; r < ranking.size(); ++r) {
            if (!seen.insert(ranking[r].doc_id).second) {
                throw std::invalid_argument("run for query " + qid + " repeats document " + ranking[r].doc_id);
            }
            if (r > 0 && ranking[r].score > ranking[r - 1].score) {
                throw std::invalid_argument("run for query " + qid + " has increasing scores at rank " +
                                            std::to_string(r + 1));
            }
        }
    }
}

RetrievalRun RetrievalRun::load_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open run " + path.string());
    std::map<std::string, std::vector<std::pair<double, RankedDoc>>> rows;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_tabs(line);
        double rank = 0.0, score = 0.0;
        if (f.size() != 4 || !parse_double(f[2], rank) || !parse_double(f[3], score)) {
            throw DataError(path.string() + ": line " + std::to_string(n) +
                                ": expected `query_id<TAB>doc_id<TAB>rank<TAB>score`",
                            n);
        }
        rows[f[0]].push_back({rank, {f[1], score}});
    }
    RetrievalRun run;
    for (auto& [qid, docs] : rows) {
        std::stable_sort(docs.begin(), docs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        auto& ranking = run.rankings[qid];
        for (auto& [_, d] : docs) ranking.push_back(std::move(d));
    }
    run.validate();
    return run;
}

void RetrievalRun::save_tsv(const std::filesystem::path& path) const {
    write_file_atomic(path, [&](std::ostream& os) {
        os.precision(17);
        for (const auto& [qid, ranking] : rankings) {
            for (std::size_t r = 0; r < ranking.size(); ++r) {
                os << qid << '\t' << ranking[r].doc_id << '\t' << r + 1 << '\t' << ranking[r].score << '\n';
            }
        }
    });
}

double ndcg_at_k(const RetrievalRun& run, const QrelSet& qrels, std::size_t k) {
    return average_over_queries(run, qrels, k, [k](const auto& ranking, const auto& relevant) {
        double dcg = 0.0;
        for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
            if (relevant.count(ranking[r].doc_id)) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
        }
        double ideal = 0.0;
        for (std::size_t r = 0; r < std::min(k, relevant.size()); ++r) {
            ideal += 1.0 / std::log2(static_cast<double>(r) + 2.0);
        }
        return dcg / ideal;
    });
}

double mrr_at_k(const RetrievalRun& run, const QrelSet& qrels, std::size_t k) {
    return average_over_queries(run, qrels, k, [k](const auto& ranking, const auto& relevant) {
        for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
            if (relevant.count(ranking[r].doc_id)) return 1.0 / static_cast<double>(r + 1);
        }
        return 0.0;
    });
}

double map_at_k(const RetrievalRun& run, const QrelSet& qrels, std::size_t k) {
    return average_over_queries(run, qrels, k, [k](const auto& ranking, const auto& relevant) {
        double sum = 0.0;
        std::size_t hits = 0;
        for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
            if (relevant.count(ranking[r].doc_id)) {
                ++hits;
                sum += static_cast<double>(hits) / static_cast<double>(r + 1);
            }
        }
        return sum / static_cast<double>(std::min(k, relevant.size()));
    });
}

double precision_at_k(const RetrievalRun& run, const QrelSet& qrels, std::size_t k) {
    return average_over_queries(run, qrels, k, [k](const auto& ranking, const auto& relevant) {
        std::size_t hits = 0;
        for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) hits += relevant.count(ranking[r].doc_id);
        return static_cast<double>(hits) / static_cast<double>(k);
    });
}

double recall_at_k(const RetrievalRun& run, const QrelSet& qrels, std::size_t k) {
    return average_over_queries(run, qrels, k, [k](const auto& ranking, const auto& relevant) {
        std::size_t hits = 0;
        for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) hits += relevant.count(ranking[r].doc_id);
        return static_cast<double>(hits) / static_cast<double>(relevant.size());
    });
}

std::vector<MetricValue> retrieval_suite(const RetrievalRun& run, const QrelSet& qrels,
                                         std::span<const std::size_t> ks) {
    std::vector<MetricValue> out;
    for (std::size_t k : ks) {
        const std::string at = "@" + std::to_string(k);
        out.push_back({"ndcg" + at, ndcg_at_k(run, qrels, k)});
        out.push_back({"mrr" + at, mrr_at_k(run, qrels, k)});
        out.push_back({"map" + at, map_at_k(run, qrels, k)});
        out.push_back({"precision" + at, precision_at_k(run, qrels, k)});
        out.push_back({"recall" + at, recall_at_k(run, qrels, k)});
    }
    return out;
}

RetrievalRun retrieve(std::span<const EmbeddingVector> queries, std::span<const EmbeddingVector> docs,
                      std::size_t top_k) {
    RetrievalRun run;
    for (const auto& q : queries) {
        std::vector<std::pair<double, std::size_t>> scored;
        scored.reserve(docs.size());
        for (std::size_t d = 0; d < docs.size(); ++d) scored.push_back({cosine_similarity(q, docs[d]), d});
        std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        auto& ranking = run.rankings[q.source_id];
        if (!ranking.empty()) throw std::invalid_argument("duplicate query id " + q.source_id);
        for (std::size_t r = 0; r < std::min(top_k, scored.size()); ++r) {
            ranking.push_back({docs[scored[r].second].source_id, scored[r].first});
        }
    }
    return run;
}

KMeansResult minibatch_kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                              const KMeansOptions& options) {
    const std::size_t n = points.size();
    if (k == 0) throw std::invalid_argument("k-means: k must be at least 1");
    if (k > n) {
        throw std::invalid_argument("k-means: k = " + std::to_string(k) + " exceeds the " + std::to_string(n) +
                                    " items");
    }
    if (options.batch_size == 0) throw std::invalid_argument("k-means: batch size must be positive");
    const std::size_t dim = points.front().size();
    for (const auto& p : points) {
        if (p.size() != dim) throw std::invalid_argument("k-means: ragged input dimensions");
    }
    Rng rng(options.seed);

    // k-means++ seeding.
    KMeansResult res;
    std::vector<bool> chosen(n, false);
    std::size_t first = uniform_index(rng, n);
    res.centroids.push_back(points[first]);
    chosen[first] = true;
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points[i], res.centroids[0]);
    while (res.centroids.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : d2[i];
        std::size_t pick = n;
        if (total > 0.0) {
            double u = uniform01(rng) * total;
            for (std::size_t i = 0; i < n; ++i) {
                if (chosen[i] || d2[i] == 0.0) continue;
                pick = i;
                u -= d2[i];
                if (u < 0.0) break;
            }
        }
        if (pick == n) {
            // Every remaining point coincides with a centroid.
            std::vector<std::size_t> rest;
            for (std::size_t i = 0; i < n; ++i) {
                if (!chosen[i]) rest.push_back(i);
            }
            pick = rest[uniform_index(rng, rest.size())];
        }
        chosen[pick] = true;
        res.centroids.push_back(points[pick]);
        for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(points[i], points[pick]));
    }

    std::vector<std::size_t> counts(k, 0);
    std::vector<std::size_t> order(n);
    std::vector<std::size_t> assigned;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_range(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += options.batch_size) {
            const std::size_t end = std::min(n, start + options.batch_size);
            assigned.clear();
            for (std::size_t i = start; i < end; ++i) assigned.push_back(nearest(res.centroids, points[order[i]], nullptr));
            for (std::size_t i = start; i < end; ++i) {
                auto& c = res.centroids[assigned[i - start]];
                const double eta = 1.0 / static_cast<double>(++counts[assigned[i - start]]);
                const auto& x = points[order[i]];
                for (std::size_t j = 0; j < dim; ++j) c[j] += eta * (x[j] - c[j]);
            }
        }
    }

    res.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        res.labels[i] = nearest(res.centroids, points[i], &d);
        res.inertia += d;
    }
    return res;
}

VMeasure v_measure_scores(std::span<const std::int64_t> predicted, std::span<const std::int64_t> truth) {
    if (predicted.size() != truth.size()) throw std::invalid_argument("v_measure: label lists differ in length");
    if (predicted.empty()) throw std::invalid_argument("v_measure: empty input");
    const double n = static_cast<double>(predicted.size());
    std::map<std::int64_t, double> classes, clusters;
    std::map<std::pair<std::int64_t, std::int64_t>, double> joint;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        classes[truth[i]] += 1;
        clusters[predicted[i]] += 1;
        joint[{truth[i], predicted[i]}] += 1;
    }
    const double h_c = entropy(classes, n);
    const double h_k = entropy(clusters, n);
    double h_c_given_k = 0.0, h_k_given_c = 0.0;
    for (const auto& [key, count] : joint) {
        h_c_given_k -= (count / n) * std::log(count / clusters[key.second]);
        h_k_given_c -= (count / n) * std::log(count / classes[key.first]);
    }
    VMeasure v;
    v.homogeneity = h_c == 0.0 ? 1.0 : 1.0 - h_c_given_k / h_c;
    v.completeness = h_k == 0.0 ? 1.0 : 1.0 - h_k_given_c / h_k;
    const double s = v.homogeneity + v.completeness;
    v.v_measure = s == 0.0 ? 0.0 : 2.0 * v.homogeneity * v.completeness / s;
    return v;
}

double v_measure(std::span<const std::int64_t> predicted, std::span<const std::int64_t> truth) {
    return v_measure_scores(predicted, truth).v_measure;
}

std::vector<double> average_ranks(std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
        i = j + 1;
    }
    return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("correlation: inputs differ in length");
    if (x.size() < 2) throw std::invalid_argument("correlation: needs at least 2 points");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("correlation: constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("spearman: inputs differ in length");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    return pearson(rx, ry);
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
    write_file_atomic(path, [&](std::ostream& os) {
        os.precision(10);
        os << "length,metric,value\n";
        for (const auto& r : rows) os << r.length << ',' << r.metric << ',' << r.value << '\n';
    });
}

std::vector<SweepRow> mlm_length_sweep(const EncoderState& state, const Vocabulary& vocab,
                                       std::span<const std::string> corpus, std::span<const std::size_t> lengths,
                                       std::uint64_t eval_seed, std::size_t threads) {
    std::vector<SweepRow> rows;
    for (std::size_t len : lengths) {
        const auto acc = mlm_accuracy(state, vocab, corpus, len, eval_seed, 8, threads);
        rows.push_back({len, "mlm_accuracy", acc.accuracy});
    }
    return rows;
}

RetrievalRun run_retrieval(const EncoderState& state, const Vocabulary& vocab, const RetrievalTask& task,
                           std::size_t doc_max_len, std::size_t query_max_len, std::size_t top_k,
                           const EncodeOptions& options) {
    if (task.query_ids.size() != task.query_texts.size() || task.doc_ids.size() != task.doc_texts.size()) {
        throw std::invalid_argument("retrieval task: ids and texts differ in count");
    }
    for (const auto& [qid, _] : task.qrels.relevant) {
        if (std::find(task.query_ids.begin(), task.query_ids.end(), qid) == task.query_ids.end()) {
            throw DataError("qrels reference unknown query " + qid);
        }
    }
    auto queries = encode(state, vocab, task.query_texts, query_max_len, options);
    auto docs = encode(state, vocab, task.doc_texts, doc_max_len, options);
    for (std::size_t i = 0; i < queries.size(); ++i) queries[i].source_id = task.query_ids[i];
    for (std::size_t i = 0; i < docs.size(); ++i) docs[i].source_id = task.doc_ids[i];
    return retrieve(queries, docs, top_k);
}

std::vector<SweepRow> retrieval_length_sweep(const EncoderState& state, const Vocabulary& vocab,
                                             const RetrievalTask& task, std::span<const std::size_t> lengths,
                                             std::size_t query_max_len, std::span<const std::size_t> ks,
                                             const EncodeOptions& options) {
    const std::size_t top_k = ks.empty() ? 10 : *std::max_element(ks.begin(), ks.end());
    std::vector<SweepRow> rows;
    for (std::size_t len : lengths) {
        const auto run = run_retrieval(state, vocab, task, len, query_max_len, top_k, options);
        for (const auto& m : retrieval_suite(run, task.qrels, ks)) rows.push_back({len, m.metric, m.value});
    }
    return rows;
}

std::vector<SweepRow> clustering_length_sweep(const EncoderState& state, const Vocabulary& vocab,
                                              const ClusteringTask& task, std::span<const std::size_t> lengths,
                                              const KMeansOptions& kmeans, const EncodeOptions& options) {
    if (task.texts.size() != task.labels.size()) {
        throw std::invalid_argument("clustering task: texts and labels differ in count");
    }
    const std::size_t k = std::set<std::int64_t>(task.labels.begin(), task.labels.end()).size();
    std::vector<SweepRow> rows;
    for (std::size_t len : lengths) {
        const auto emb = encode(state, vocab, task.texts, len, options);
        std::vector<std::vector<double>> points;
        points.reserve(emb.size());
        for (const auto& e : emb) points.push_back(e.values);
        const auto result = minibatch_kmeans(points, k, kmeans);
        std::vector<std::int64_t> predicted(result.labels.begin(), result.labels.end());
        rows.push_back({len, "v_measure", v_measure(predicted, task.labels)});
    }
    return rows;
}

}  // namespace longembed
