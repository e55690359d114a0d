#include <doctest.h>

#include <cmath>
#include <map>

#include "gradcheck.hpp"
#include "longembed/contrastive.hpp"

using namespace longembed;

namespace {

Tensor scores_from(std::size_t rows, std::size_t cols, double diag, double off) {
    std::vector<double> v(rows * cols, off);
    for (std::size_t i = 0; i < std::min(rows, cols); ++i) v[i * cols + i] = diag;
    return Tensor::from_values({rows, cols}, v, DType::f64);
}

// Direct transcription of the two denominators, written with loops.
double reference_hard_negative(const std::vector<std::vector<double>>& qp, const std::vector<std::vector<double>>& qn,
                               double tau) {
    const std::size_t k = qp.size();
    double first = 0, second = 0;
    for (std::size_t r = 0; r < k; ++r) {
        double denom = 0;
        for (std::size_t i = 0; i < k; ++i) denom += std::exp(qp[r][i] / tau);
        for (double s : qn[r]) denom += std::exp(s / tau);
        first -= std::log(std::exp(qp[r][r] / tau) / denom);
        double rev = 0;
        for (std::size_t i = 0; i < k; ++i) rev += std::exp(qp[i][r] / tau);
        second -= std::log(std::exp(qp[r][r] / tau) / rev);
    }
    return (first + second) / static_cast<double>(k);
}

}  // namespace

TEST_CASE("pair InfoNCE closed forms") {
    PrecisionGuard g(DType::f64);
    for (std::size_t k : {2u, 4u, 8u}) {
        CHECK(pair_info_nce_scores(scores_from(k, k, 0.3, 0.3)).item() ==
              doctest::Approx(2 * std::log(double(k))).epsilon(1e-9));
    }
    const double sep = pair_info_nce_scores(scores_from(4, 4, 1.0, 0.0), 0.05).item();
    CHECK(sep == doctest::Approx(2 * std::log1p(3 * std::exp(-20.0))).epsilon(1e-6));
    CHECK(sep < 1.3e-8);
    CHECK_THROWS(pair_info_nce_scores(scores_from(1, 1, 1, 1)));
    CHECK_THROWS(pair_info_nce_scores(scores_from(2, 2, 1, 1), 0.0));
}

TEST_CASE("hard-negative loss closed forms") {
    PrecisionGuard g(DType::f64);
    const double tied = hard_negative_loss_scores(scores_from(1, 1, 0.2, 0.2), scores_from(1, 15, 0.2, 0.2)).item();
    CHECK(tied == doctest::Approx(std::log(16.0)).epsilon(1e-9));
    const double sep = hard_negative_loss_scores(scores_from(1, 1, 1.0, 0.0), scores_from(1, 15, 0.0, 0.0)).item();
    CHECK(sep == doctest::Approx(std::log1p(15 * std::exp(-20.0))).epsilon(1e-6));
    CHECK_THROWS(hard_negative_loss_scores(scores_from(2, 2, 1, 0), scores_from(2, 14, 0, 0)));
}

TEST_CASE("hard-negative loss matches a loop transcription") {
    PrecisionGuard g(DType::f64);
    Rng rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t k = 1 + uniform_index(rng, 4);
        std::vector<std::vector<double>> qp(k, std::vector<double>(k)), qn(k, std::vector<double>(15 * k));
        std::vector<double> fp, fn;
        for (auto& row : qp) {
            for (auto& x : row) fp.push_back(x = 2 * uniform01(rng) - 1);
        }
        for (auto& row : qn) {
            for (auto& x : row) fn.push_back(x = 2 * uniform01(rng) - 1);
        }
        const double got = hard_negative_loss_scores(Tensor::from_values({k, k}, fp), Tensor::from_values({k, 15 * k}, fn),
                                                     0.1).item();
        CHECK(std::abs(got - reference_hard_negative(qp, qn, 0.1)) < 1e-9);
    }
}

TEST_CASE("raising a negative's similarity raises the loss") {
    PrecisionGuard g(DType::f64);
    Rng rng(5);
    Tensor qp = testing::random_tensor({2, 2}, rng, 0.3);
    Tensor qn = testing::random_tensor({2, 30}, rng, 0.3);
    double prev = hard_negative_loss_scores(qp, qn).item();
    for (int step = 0; step < 10; ++step) {
        qn.set(7, qn.at(7) + 0.05);
        const double now = hard_negative_loss_scores(qp, qn).item();
        CHECK(now > prev);
        prev = now;
    }
}

TEST_CASE("pair loss symmetries") {
    PrecisionGuard g(DType::f64);
    Rng rng(6);
    Tensor q = testing::random_tensor({5, 8}, rng), p = testing::random_tensor({5, 8}, rng);
    const double base = pair_info_nce(q, p).item();
    CHECK(pair_info_nce(p, q).item() == doctest::Approx(base).epsilon(1e-12));
    CHECK(std::abs(pair_info_nce(ops::scale(q, 3.5), ops::scale(p, 0.2)).item() - base) < 1e-6);
    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    CHECK(pair_info_nce(ops::gather_rows(q, perm), ops::gather_rows(p, perm)).item() ==
          doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("lower temperature concentrates the gradient on the hardest negative") {
    PrecisionGuard g(DType::f64);
    Tensor qp = scores_from(1, 1, 0.9, 0.9);
    std::vector<double> negs(15, 0.1);
    negs[0] = 0.85;
    // d loss / d s_n is proportional to exp(s_n / tau), so the hardest
    // negative's share relative to an easy one is exp((0.85 - 0.1) / tau).
    const auto ratio = [&](double tau) {
        Tensor qn = Tensor::from_values({1, 15}, negs).set_requires_grad();
        backward(hard_negative_loss_scores(qp, qn, tau));
        const auto gr = qn.grad_vector();
        return gr[0] / gr[1];
    };
    for (double tau : {0.5, 0.1, 0.05}) CHECK(ratio(tau) == doctest::Approx(std::exp(0.75 / tau)).epsilon(1e-9));
    CHECK(ratio(0.05) > ratio(0.5));
}

TEST_CASE("loss gradients match finite differences") {
    PrecisionGuard g(DType::f64);
    Rng rng(7);
    using V = std::vector<Tensor>;
    auto r1 = testing::gradcheck([](const V& in) { return pair_info_nce(in[0], in[1], 0.5); },
                                 {testing::random_tensor({3, 4}, rng), testing::random_tensor({3, 4}, rng)});
    INFO(r1.worst);
    CHECK(r1.max_rel_error < 1e-4);
    auto r2 = testing::gradcheck([](const V& in) { return hard_negative_loss(in[0], in[1], in[2], 0.5); },
                                 {testing::random_tensor({2, 4}, rng), testing::random_tensor({2, 4}, rng),
                                  testing::random_tensor({30, 4}, rng)});
    INFO(r2.worst);
    CHECK(r2.max_rel_error < 1e-4);
}

TEST_CASE("sampling plan: single source, weights and purity") {
    std::vector<PairRecord> pairs;
    for (int i = 0; i < 50; ++i) pairs.push_back({"q" + std::to_string(i), "p" + std::to_string(i), "alpha"});
    for (int i = 0; i < 30; ++i) pairs.push_back({"x" + std::to_string(i), "y" + std::to_string(i), "beta"});
    const auto corpus = PairCorpus::group(pairs);
    REQUIRE(corpus.sources.size() == 2);

    auto plan = make_pair_plan(corpus, {{"alpha", 0.9}, {"beta", 0.1}}, 3);
    Rng rng(4);
    std::size_t alpha = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto b = next_pair_batch(plan, corpus, 4, rng);
        const char lead = b.source == "alpha" ? 'q' : 'x';
        for (const auto& q : b.queries) CHECK(q[0] == lead);
        alpha += b.source == "alpha";
    }
    CHECK(std::abs(alpha / 10000.0 - 0.9) < 0.02);

    auto only = make_pair_plan(corpus, {{"beta", 1.0}}, 3);
    for (int i = 0; i < 20; ++i) CHECK(next_pair_batch(only, corpus, 7, rng).source == "beta");
    CHECK_THROWS(make_pair_plan(corpus, {{"gamma", 1.0}}, 3));
    CHECK_THROWS(SamplingPlan({}, {}, {}, 1));
}

TEST_CASE("sampling plan visits every record once per epoch and restores state") {
    SamplingPlan plan({"a"}, {10}, {1.0}, 9);
    Rng rng(1);
    std::map<std::size_t, int> seen;
    for (int i = 0; i < 5; ++i) {
        for (auto idx : plan.next(2, rng).indices) ++seen[idx];
    }
    CHECK(seen.size() == 10);
    const auto state = plan.state();
    const auto rng_copy = rng;
    const auto a = plan.next(7, rng).indices;
    SamplingPlan other({"a"}, {10}, {1.0}, 9);
    other.restore(state);
    Rng rng2 = rng_copy;
    CHECK(other.next(7, rng2).indices == a);
}
