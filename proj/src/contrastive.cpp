#include "longembed/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "longembed/ops.hpp"

namespace longembed {

namespace {

std::vector<std::int64_t> diagonal_targets(std::size_t k) {
    std::vector<std::int64_t> t(k);
    std::iota(t.begin(), t.end(), 0);
    return t;
}

void require_tau(double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
}

}  // namespace

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
    return ops::matmul(ops::l2_normalize_rows(a), ops::l2_normalize_rows(b), false, true);
}

Tensor pair_info_nce_scores(const Tensor& scores, double tau) {
    require_tau(tau);
    if (scores.rank() != 2 || scores.dim(0) != scores.dim(1)) {
        throw ShapeError("pair_info_nce: score matrix must be square, got " + shape_str(scores.shape()));
    }
    const std::size_t k = scores.dim(0);
    if (k < 2) throw std::invalid_argument("pair_info_nce: needs at least 2 pairs for in-batch negatives");
    const auto targets = diagonal_targets(k);
    Tensor logits = ops::scale(scores, 1.0 / tau);
    return ops::add(ops::cross_entropy(logits, targets), ops::cross_entropy(ops::transpose2d(logits), targets));
}

Tensor pair_info_nce(const Tensor& queries, const Tensor& targets, double tau) {
    if (queries.shape() != targets.shape()) {
        throw ShapeError("pair_info_nce: query bank " + shape_str(queries.shape()) + " vs target bank " +
                         shape_str(targets.shape()));
    }
    return pair_info_nce_scores(cosine_matrix(queries, targets), tau);
}

Tensor hard_negative_loss_scores(const Tensor& query_positive, const Tensor& query_negative, double tau) {
    require_tau(tau);
    if (query_positive.rank() != 2 || query_positive.dim(0) != query_positive.dim(1)) {
        throw ShapeError("hard_negative_loss: positive scores must be square, got " +
                         shape_str(query_positive.shape()));
    }
    const std::size_t k = query_positive.dim(0);
    if (query_negative.rank() != 2 || query_negative.dim(0) != k || query_negative.dim(1) != k * kHardNegatives) {
        throw std::invalid_argument("hard_negative_loss: expected " + std::to_string(kHardNegatives) +
                                    " negatives per record, negative scores have shape " +
                                    shape_str(query_negative.shape()));
    }
    const auto targets = diagonal_targets(k);
    Tensor pos = ops::scale(query_positive, 1.0 / tau);
    Tensor neg = ops::scale(query_negative, 1.0 / tau);
    // Row r: [s(q_r, p_1..p_k) | s(q_r, n_*)]; the target is column r.
    const Tensor parts[] = {ops::transpose2d(pos), ops::transpose2d(neg)};
    Tensor forward_logits = ops::transpose2d(ops::concat_rows(parts));
    Tensor forward_term = ops::cross_entropy(forward_logits, targets);
    Tensor reverse_term = ops::cross_entropy(ops::transpose2d(pos), targets);
    return ops::add(forward_term, reverse_term);
}

Tensor hard_negative_loss(const Tensor& queries, const Tensor& positives, const Tensor& negatives, double tau) {
    if (queries.shape() != positives.shape()) {
        throw ShapeError("hard_negative_loss: query bank " + shape_str(queries.shape()) + " vs positive bank " +
                         shape_str(positives.shape()));
    }
    if (negatives.rank() != 2 || negatives.dim(0) != queries.dim(0) * kHardNegatives) {
        throw std::invalid_argument("hard_negative_loss: expected " +
                                    std::to_string(queries.dim(0) * kHardNegatives) + " negative rows, got " +
                                    shape_str(negatives.shape()));
    }
    return hard_negative_loss_scores(cosine_matrix(queries, positives), cosine_matrix(queries, negatives), tau);
}

SamplingPlan::SamplingPlan(std::vector<std::string> names, std::vector<std::size_t> sizes,
                           std::vector<double> weights, std::uint64_t seed)
    : names_(std::move(names)), sizes_(std::move(sizes)), weights_(std::move(weights)), seed_(seed) {
    if (names_.empty()) throw std::invalid_argument("sampling plan has no sources");
    if (names_.size() != sizes_.size() || names_.size() != weights_.size()) {
        throw std::invalid_argument("sampling plan: names, sizes and weights differ in length");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        if (!(weights_[i] >= 0.0) || !std::isfinite(weights_[i])) {
            throw std::invalid_argument("sampling plan: weight of '" + names_[i] + "' must be nonnegative");
        }
        if (sizes_[i] == 0 && weights_[i] > 0.0) {
            throw std::invalid_argument("sampling plan: source '" + names_[i] + "' is empty");
        }
        total += weights_[i];
    }
    if (!(total > 0.0)) throw std::invalid_argument("sampling plan: weights sum to zero");
    for (auto& w : weights_) w /= total;
    cursors_.resize(names_.size());
    for (std::size_t s = 0; s < names_.size(); ++s) reshuffle(s);
}

void SamplingPlan::reshuffle(std::size_t source) {
    auto& c = cursors_[source];
    c.order.resize(sizes_[source]);
    std::iota(c.order.begin(), c.order.end(), std::size_t{0});
    Rng rng(mix_seed(mix_seed(seed_, source), c.epoch));
    shuffle_range(c.order.begin(), c.order.end(), rng);
    c.position = 0;
}

SamplingPlan::Draw SamplingPlan::next(std::size_t k, Rng& rng) {
    if (names_.empty()) throw std::invalid_argument("sampling plan has no sources");
    if (k == 0) throw std::invalid_argument("sampling plan: batch size must be positive");
    Draw d;
    const double u = uniform01(rng);
    double acc = 0.0;
    d.source = names_.size() - 1;
    for (std::size_t s = 0; s < weights_.size(); ++s) {
        acc += weights_[s];
        if (u < acc && weights_[s] > 0.0) {
            d.source = s;
            break;
        }
    }
    while (weights_[d.source] == 0.0) --d.source;
    auto& c = cursors_[d.source];
    d.indices.reserve(k);
    while (d.indices.size() < k) {
        if (c.position == c.order.size()) {
            ++c.epoch;
            reshuffle(d.source);
        }
        d.indices.push_back(c.order[c.position++]);
    }
    return d;
}

nlohmann::json SamplingPlan::state() const {
    nlohmann::json cursors = nlohmann::json::array();
    for (const auto& c : cursors_) cursors.push_back({{"epoch", c.epoch}, {"position", c.position}});
    return {{"seed", seed_}, {"sources", names_}, {"cursors", cursors}};
}

void SamplingPlan::restore(const nlohmann::json& state) {
    if (state.at("sources").get<std::vector<std::string>>() != names_) {
        throw std::invalid_argument("sampling plan state refers to different sources");
    }
    seed_ = state.at("seed").get<std::uint64_t>();
    const auto& cursors = state.at("cursors");
    for (std::size_t s = 0; s < cursors_.size(); ++s) {
        cursors_[s].epoch = cursors.at(s).at("epoch").get<std::uint64_t>();
        reshuffle(s);
        cursors_[s].position = cursors.at(s).at("position").get<std::size_t>();
    }
}

PairCorpus PairCorpus::group(const std::vector<PairRecord>& pairs) {
    PairCorpus corpus;
    std::map<std::string, std::size_t> slot;
    for (const auto& p : pairs) {
        auto [it, inserted] = slot.emplace(p.source, corpus.sources.size());
        if (inserted) {
            corpus.sources.push_back(p.source);
            corpus.records.emplace_back();
        }
        corpus.records[it->second].push_back(p);
    }
    return corpus;
}

SamplingPlan make_pair_plan(const PairCorpus& corpus, const std::map<std::string, double>& weights,
                            std::uint64_t seed) {
    std::vector<std::size_t> sizes;
    std::vector<double> w;
    for (std::size_t s = 0; s < corpus.sources.size(); ++s) {
        sizes.push_back(corpus.records[s].size());
        if (weights.empty()) {
            w.push_back(static_cast<double>(corpus.records[s].size()));
        } else {
            auto it = weights.find(corpus.sources[s]);
            w.push_back(it == weights.end() ? 0.0 : it->second);
        }
    }
    for (const auto& [name, _] : weights) {
        if (std::find(corpus.sources.begin(), corpus.sources.end(), name) == corpus.sources.end()) {
            throw std::invalid_argument("sampling weight names unknown source '" + name + "'");
        }
    }
    return SamplingPlan(corpus.sources, sizes, w, seed);
}

PairBatch next_pair_batch(SamplingPlan& plan, const PairCorpus& corpus, std::size_t k, Rng& rng) {
    if (plan.source_count() != corpus.sources.size()) {
        throw std::invalid_argument("sampling plan does not match the pair corpus");
    }
    const auto draw = plan.next(k, rng);
    PairBatch batch;
    batch.source = corpus.sources[draw.source];
    for (std::size_t i : draw.indices) {
        const auto& rec = corpus.records[draw.source][i];
        batch.queries.push_back(rec.query);
        batch.targets.push_back(rec.target);
    }
    return batch;
}

TripletBatch next_triplet_batch(SamplingPlan& plan, const std::vector<TripletRecord>& records, std::size_t k,
                                Rng& rng) {
    const auto draw = plan.next(k, rng);
    TripletBatch batch;
    for (std::size_t i : draw.indices) {
        if (records[i].negatives.size() != kHardNegatives) {
            throw std::invalid_argument("triplet record " + std::to_string(i) + " has " +
                                        std::to_string(records[i].negatives.size()) + " negatives");
        }
        batch.records.push_back(records[i]);
    }
    return batch;
}

}  // namespace longembed
