// Runs acceptance criteria 1-10 and prints one PASS/FAIL line per criterion.
// Arguments select a subset by number, e.g. `acceptance 3 8`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "longembed/alibi.hpp"
#include "longembed/checkpoint.hpp"
#include "longembed/contrastive.hpp"
#include "longembed/eval.hpp"
#include "longembed/mlm.hpp"
#include "longembed/trainer.hpp"
#include "oracles.hpp"
#include "suites.hpp"
#include "synthetic.hpp"

using namespace longembed;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << "[failed: " << what << "] ";
        }
    }
};

std::string pct(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100 * x);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. Parameter counts of the three presets.
void parameter_counts(Outcome& o) {
    struct Row {
        const char* name;
        double target, tolerance;
    };
    for (const Row& r : {Row{"small", 33e6, 0.05}, Row{"base", 137e6, 0.03}, Row{"large", 455e6, 0.07}}) {
        const auto cfg = ModelConfig::preset(r.name);
        const double count = static_cast<double>(parameter_count(cfg));
        const double dev = (count - r.target) / r.target;
        o.detail << r.name << " " << static_cast<std::size_t>(count) << " (" << pct(dev) << ") ";
        o.require(std::abs(dev) <= r.tolerance, std::string(r.name) + " outside tolerance");
        o.require(cfg.vocab_size == 30522 && cfg.head_dim == 64 && cfg.ffn_inner == 4 * cfg.hidden &&
                      cfg.glu_variant == (r.name == std::string("large") ? GluVariant::reglu : GluVariant::geglu) &&
                      cfg.tie_mlm_head,
                  std::string(r.name) + " preset shape");
        o.require(init_model(ModelConfig::small(), 0).parameter_count() == parameter_count(ModelConfig::small()),
                  "closed-form count disagrees with instantiated tensors");
    }
}

// Slope i (1-based) evaluated in long double straight from its definition.
long double reference_slope(std::size_t n, std::size_t i) {
    const long double a = std::exp2l(std::floor(std::log2l(static_cast<long double>(n))));
    const long double b = std::exp2l(-8.0L / std::exp2l(std::ceil(std::log2l(static_cast<long double>(n)))));
    const long double e = static_cast<long double>(i) < a ? 2.0L * i : 1.0L + 2.0L * (i - a);
    return std::pow(b, e);
}

// 2. Slopes against the high-precision reference; symmetric bias matrices.
void alibi_slopes(Outcome& o) {
    double worst = 0;
    for (std::size_t n = 1; n <= 16; ++n) {
        const auto s = compute_slopes(n);
        o.require(s.m.size() == n, "slope count for n=" + std::to_string(n));
        for (std::size_t i = 1; i <= n && i <= s.m.size(); ++i) {
            const long double ref = reference_slope(n, i);
            const double rel = static_cast<double>(std::abs((s.m[i - 1] - ref) / ref));
            worst = std::max(worst, rel);
        }
    }
    o.detail << "max slope rel error " << worst << "; ";
    o.require(worst < 1e-12, "slope relative error");

    std::size_t matrices = 0;
    bool symmetric = true;
    std::vector<std::size_t> lengths;
    for (std::size_t l = 1; l <= 64; ++l) lengths.push_back(l);
    for (std::size_t l : {100, 127, 128, 129, 255, 256, 500, 511, 512, 777, 1000, 1023, 1024}) lengths.push_back(l);
    for (std::size_t heads : {1, 2, 3, 8, 12, 16}) {
        const auto slopes = compute_slopes(heads);
        for (std::size_t l : lengths) {
            const auto bias = build_bias(slopes, l, AlibiVariant::encoder, DType::f64);
            const auto v = bias.values.data<double>();
            for (std::size_t h = 0; h < heads && symmetric; ++h) {
                const double* m = v.data() + h * l * l;
                for (std::size_t i = 0; i < l && symmetric; ++i) {
                    for (std::size_t j = i + 1; j < l; ++j) {
                        if (m[i * l + j] != m[j * l + i]) {
                            symmetric = false;
                            break;
                        }
                    }
                }
            }
            ++matrices;
        }
    }
    o.detail << matrices << " bias matrices up to length 1024 exactly symmetric";
    o.require(symmetric, "bias symmetry");
}

// 3. MLM accuracy at 512 after training at 64, versus learned positions.
void length_extrapolation(Outcome& o) {
    const auto words = testing::numbered_words("w", 200);
    const auto vocab = testing::make_vocab(words);
    const auto train = testing::runs_corpus(words, 400, 80, 6, 14, 1);
    const auto eval = testing::runs_corpus(words, 24, 600, 6, 14, 2);
    const std::size_t steps = 1200;

    auto train_model = [&](PositionMode mode) {
        ModelConfig mc = ModelConfig::desk();
        mc.vocab_size = vocab.size();
        mc.position_mode = mode;
        mc.max_positions = 512;
        TrainConfig cfg;
        cfg.batch_size = 16;
        cfg.train_seq_len = 64;
        cfg.seed = 3;
        cfg.optimizer.peak_lr = 1e-3;
        cfg.optimizer.warmup_steps = 100;
        cfg.optimizer.total_steps = steps;
        return run_stage(PretrainData{train}, init_model(mc, 1), vocab, cfg).model;
    };

    const auto alibi = train_model(PositionMode::alibi);
    const double a64 = mlm_accuracy(alibi, vocab, eval, 64).accuracy;
    const double a512 = mlm_accuracy(alibi, vocab, eval, 512).accuracy;
    const double alibi_drop = 1 - a512 / a64;
    o.detail << "ALiBi acc@64 " << a64 << " acc@512 " << a512 << " (ratio " << a512 / a64 << "); ";
    o.require(a512 >= 0.8 * a64, "ALiBi accuracy at 512 below 0.8x accuracy at 64");

    // Forward at 4096 tokens.
    {
        const auto long_doc = testing::runs_corpus(words, 1, 4200, 6, 14, 5);
        const auto seq = tokenize(long_doc[0], vocab, 4096);
        const std::vector<TokenizedSequence> one = {seq};
        NoGradGuard ng;
        const Tensor h = forward(alibi, pad_batch(one));
        bool finite = true;
        dispatch(h.dtype(), [&]<typename T>() {
            for (T v : h.data<T>()) finite = finite && std::isfinite(v);
        });
        o.detail << "forward at " << seq.size() << " tokens " << (finite ? "finite" : "NOT finite") << "; ";
        o.require(seq.size() == 4096 && finite, "forward at 4096");
    }

    const auto learned = train_model(PositionMode::learned);
    const double l64 = mlm_accuracy(learned, vocab, eval, 64).accuracy;
    double l512 = 0;
    try {
        l512 = mlm_accuracy(learned, vocab, eval, 512).accuracy;
    } catch (const std::out_of_range&) {
        l512 = 0;  // cannot run at all
    }
    const double learned_drop = 1 - l512 / l64;
    o.detail << "learned acc@64 " << l64 << " acc@512 " << l512 << "; relative drop learned " << pct(learned_drop)
             << " vs ALiBi " << pct(alibi_drop);
    o.require(learned_drop >= 2 * std::max(alibi_drop, 0.0) && learned_drop > 0.05,
              "learned positions did not degrade at least twice as much");
}

// 4. Finite-difference gradients of every op and of the encoder under each loss.
void gradients(Outcome& o) {
    double worst_op = 0, worst_model = 0;
    std::string worst_name;
    std::size_t count = 0;
    for (const auto& c : testing::op_gradchecks()) {
        ++count;
        o.require(c.result.checked > 0, c.name + " checked nothing");
        if (c.result.max_rel_error > worst_op) {
            worst_op = c.result.max_rel_error;
            worst_name = c.name;
        }
        o.require(c.result.max_rel_error < 1e-4, c.name + " " + c.result.worst);
    }
    o.detail << count << " ops, worst rel error " << worst_op << " (" << worst_name << "); ";
    for (const auto& c : testing::model_gradchecks()) {
        worst_model = std::max(worst_model, c.result.max_rel_error);
        o.detail << c.name << " " << c.result.max_rel_error << " over " << c.result.checked << " params; ";
        o.require(c.result.max_rel_error < 1e-4, c.name + " " + c.result.worst);
    }
}

Tensor score_matrix(std::size_t rows, std::size_t cols, double diag, double off) {
    std::vector<double> v(rows * cols, off);
    for (std::size_t i = 0; i < std::min(rows, cols); ++i) v[i * cols + i] = diag;
    return Tensor::from_values({rows, cols}, v, DType::f64);
}

// 5. Closed-form loss values.
void closed_forms(Outcome& o) {
    PrecisionGuard g(DType::f64);
    for (std::size_t k : {2, 4, 8}) {
        const double got = pair_info_nce_scores(score_matrix(k, k, 0.4, 0.4)).item();
        o.detail << "tied k=" << k << " " << got << " vs " << 2 * std::log(double(k)) << "; ";
        o.require(std::abs(got - 2 * std::log(double(k))) < 1e-6, "pair tied k=" + std::to_string(k));
    }
    const double tied = hard_negative_loss_scores(score_matrix(1, 1, 0.3, 0.3), score_matrix(1, 15, 0.3, 0.3)).item();
    o.detail << "hard-negative tied " << tied << " vs ln16 " << std::log(16.0) << "; ";
    o.require(std::abs(tied - std::log(16.0)) < 1e-6, "hard-negative tied");

    const double sep_pair = pair_info_nce_scores(score_matrix(4, 4, 1.0, 0.0), 0.05).item();
    const double want_pair = 2 * std::log1p(3 * std::exp(-20.0));
    o.detail << "separable pair " << sep_pair << " vs " << want_pair << "; ";
    o.require(std::abs(sep_pair - want_pair) < 1e-12, "separable pair");
    const double sep_hard =
        hard_negative_loss_scores(score_matrix(1, 1, 1.0, 1.0), score_matrix(1, 15, 0.0, 0.0), 0.05).item();
    const double want_hard = std::log1p(15 * std::exp(-20.0));
    o.detail << "separable hard-negative " << sep_hard << " vs " << want_hard;
    o.require(std::abs(sep_hard - want_hard) < 1e-12, "separable hard-negative");
}

// Shared between criteria 6 and 8: the toy world and the stage II/III models.
struct ToyModels {
    testing::PairWorld world{60, 30, 3};
    Vocabulary vocab;
    EncoderState stage2, stage3;
    bool trained = false;
};

ToyModels& toy_models() {
    static ToyModels t;
    if (t.trained) return t;
    t.vocab = testing::make_vocab(t.world.all_words());
    ModelConfig mc = ModelConfig::desk();
    mc.vocab_size = t.vocab.size();

    TrainConfig pairs;
    pairs.stage = Stage::pairs;
    pairs.batch_size = 32;
    pairs.train_seq_len = 32;
    pairs.seed = 21;
    pairs.optimizer.peak_lr = 5e-4;
    pairs.optimizer.warmup_steps = 50;
    pairs.optimizer.total_steps = 500;
    t.stage2 = run_stage(PairData{PairCorpus::group(t.world.pairs(2000, 1))}, init_model(mc, 7), t.vocab, pairs).model;

    TrainConfig triplets = pairs;
    triplets.stage = Stage::triplets;
    triplets.batch_size = 4;
    triplets.optimizer.peak_lr = 2e-4;
    triplets.optimizer.warmup_steps = 30;
    triplets.optimizer.total_steps = 300;
    t.stage3 = run_stage(TripletData{t.world.triplets(1200, 3)}, t.stage2, t.vocab, triplets).model;
    t.trained = true;
    return t;
}

double triplet_accuracy(const EncoderState& m, const Vocabulary& v, const std::vector<TripletRecord>& records) {
    std::size_t good = 0;
    for (const auto& t : records) {
        std::vector<std::string> texts = {t.query, t.positive};
        texts.insert(texts.end(), t.negatives.begin(), t.negatives.end());
        const auto e = encode(m, v, texts, 32);
        double best_negative = -2;
        for (std::size_t j = 2; j < e.size(); ++j) best_negative = std::max(best_negative, cosine_similarity(e[0], e[j]));
        good += cosine_similarity(e[0], e[1]) > best_negative;
    }
    return double(good) / records.size();
}

// 6. Stage II separates true from shuffled pairs; stage III ranks triplets.
void contrastive_sanity(Outcome& o) {
    auto& t = toy_models();
    const auto held = t.world.pairs(300, 1234);
    std::vector<std::string> qs, ps;
    for (const auto& p : held) {
        qs.push_back(p.query);
        ps.push_back(p.target);
    }
    const auto eq = encode(t.stage2, t.vocab, qs, 32);
    const auto ep = encode(t.stage2, t.vocab, ps, 32);
    double true_mean = 0, shuffled_mean = 0;
    const std::size_t n = held.size();
    for (std::size_t i = 0; i < n; ++i) {
        true_mean += cosine_similarity(eq[i], ep[i]) / n;
        shuffled_mean += cosine_similarity(eq[i], ep[(i + 1 + i % 7) % n]) / n;  // never i itself
    }
    o.detail << "stage II mean cosine true " << true_mean << " shuffled " << shuffled_mean << " gap "
             << true_mean - shuffled_mean << "; ";
    o.require(true_mean - shuffled_mean >= 0.2, "stage II cosine gap below 0.2");

    const auto records = t.world.triplets(300, 4321);
    const double acc2 = triplet_accuracy(t.stage2, t.vocab, records);
    const double acc3 = triplet_accuracy(t.stage3, t.vocab, records);
    o.detail << "held-out triplet ranking accuracy after stage II " << pct(acc2) << ", after stage III " << pct(acc3);
    o.require(acc3 >= 0.9, "stage III ranking accuracy below 90%");
}

// Random ranked runs with random binary judgements; metric values must match
// the brute-force oracles.
void metric_oracles(Outcome& o) {
    Rng rng(2024);
    double worst = 0;
    const std::vector<std::size_t> ks = {1, 3, 5, 10, 20};
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t n_docs = 1 + uniform_index(rng, 40);
        const std::size_t n_queries = 1 + uniform_index(rng, 6);
        QrelSet qrels;
        RetrievalRun run;
        std::map<std::string, std::pair<std::vector<bool>, std::size_t>> truth;
        for (std::size_t qi = 0; qi < n_queries; ++qi) {
            const std::string q = "q" + std::to_string(qi);
            std::vector<std::size_t> order(n_docs);
            std::iota(order.begin(), order.end(), 0);
            shuffle_range(order.begin(), order.end(), rng);
            const std::size_t shown = uniform_index(rng, n_docs + 1);
            std::set<std::size_t> rel;
            const std::size_t n_rel = 1 + uniform_index(rng, std::min<std::size_t>(n_docs, 8));
            while (rel.size() < n_rel) rel.insert(uniform_index(rng, n_docs));
            for (auto d : rel) qrels.add(q, "d" + std::to_string(d));
            std::vector<bool> flags;
            for (std::size_t i = 0; i < shown; ++i) {
                run.rankings[q].push_back({"d" + std::to_string(order[i]), double(n_docs - i)});
                flags.push_back(rel.count(order[i]) > 0);
            }
            truth[q] = {flags, n_rel};
        }
        for (auto k : ks) {
            double n = 0, m = 0, a = 0, p = 0, r = 0;
            for (const auto& [q, t] : truth) {
                n += testing::Oracle::ndcg(t.first, t.second, k);
                m += testing::Oracle::mrr(t.first, k);
                a += testing::Oracle::ap(t.first, t.second, k);
                p += testing::Oracle::precision(t.first, k);
                r += testing::Oracle::recall(t.first, t.second, k);
            }
            const double c = static_cast<double>(truth.size());
            for (double gap : {ndcg_at_k(run, qrels, k) - n / c, mrr_at_k(run, qrels, k) - m / c,
                               map_at_k(run, qrels, k) - a / c, precision_at_k(run, qrels, k) - p / c,
                               recall_at_k(run, qrels, k) - r / c}) {
                worst = std::max(worst, std::abs(gap));
            }
        }
    }
    o.detail << "retrieval metrics max gap " << worst << "; ";
    o.require(worst < 1e-9, "retrieval metric oracle");

    double v_worst = 0, perm_worst = 0;
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t n = 2 + uniform_index(rng, 80);
        std::vector<std::int64_t> pred(n), truth(n);
        const auto kp = 1 + uniform_index(rng, 7), kt = 1 + uniform_index(rng, 7);
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = static_cast<std::int64_t>(uniform_index(rng, kp));
            truth[i] = static_cast<std::int64_t>(uniform_index(rng, kt));
        }
        const auto got = v_measure_scores(pred, truth);
        const auto want = testing::v_oracle(pred, truth);
        v_worst = std::max({v_worst, std::abs(got.homogeneity - want.homogeneity),
                            std::abs(got.completeness - want.completeness), std::abs(got.v_measure - want.v_measure)});
        std::vector<std::int64_t> perm(8);
        std::iota(perm.begin(), perm.end(), 0);
        shuffle_range(perm.begin(), perm.end(), rng);
        std::vector<std::int64_t> relabelled(n);
        for (std::size_t i = 0; i < n; ++i) relabelled[i] = 100 + perm[pred[i]];
        perm_worst = std::max(perm_worst, std::abs(v_measure(relabelled, truth) - got.v_measure));
    }
    o.detail << "V-measure max gap " << v_worst << ", relabelling max change " << perm_worst << "; ";
    o.require(v_worst < 1e-9, "V-measure oracle");
    o.require(perm_worst < 1e-9, "V-measure permutation invariance");

    double s_worst = 0;
    std::size_t constant_cases = 0;
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t n = 3 + uniform_index(rng, 30);
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = static_cast<double>(uniform_index(rng, 6));
            b[i] = inst % 2 ? standard_normal(rng) : static_cast<double>(uniform_index(rng, 6));
        }
        const auto want = testing::spearman_oracle(a, b);
        if (!want) {
            ++constant_cases;
            bool threw = false;
            try {
                (void)spearman(a, b);
            } catch (const std::invalid_argument&) {
                threw = true;
            }
            o.require(threw, "spearman on constant input must throw");
            continue;
        }
        s_worst = std::max(s_worst, std::abs(spearman(a, b) - *want));
    }
    o.detail << "Spearman max gap " << s_worst;
    o.require(s_worst < 1e-12, "Spearman oracle");
}

// 8. Answers placed after 80 filler tokens are visible at 256 but not at 32.
void long_context(Outcome& o) {
    auto& t = toy_models();
    const auto task = t.world.long_docs(200, 80, 77);
    const std::vector<std::size_t> ks = {10};
    std::map<std::size_t, double> ndcg;
    for (std::size_t len : {32, 64, 128, 256}) {
        const auto run = run_retrieval(t.stage3, t.vocab, task, len, 32, 10);
        ndcg[len] = ndcg_at_k(run, task.qrels, 10);
    }
    for (const auto& [len, v] : ndcg) o.detail << "nDCG@10 at " << len << " = " << v << "; ";
    o.require(ndcg[256] > ndcg[32], "nDCG@10 at 256 does not exceed 32");
}

// 9. Bit-identical reruns, exact checkpoint round trips, exact resume.
void determinism(Outcome& o) {
    PrecisionGuard g(DType::f64);
    const fs::path dir = fs::temp_directory_path() / "longembed_acceptance";
    fs::create_directories(dir);
    const auto words = testing::numbered_words("w", 40);
    const auto vocab = testing::make_vocab(words);
    const auto docs = testing::runs_corpus(words, 30, 40, 1, 4, 6);
    ModelConfig mc;
    mc.layers = 2;
    mc.hidden = 32;
    mc.heads = 2;
    mc.head_dim = 16;
    mc.ffn_inner = 64;
    mc.vocab_size = vocab.size();
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.train_seq_len = 32;
    cfg.seed = 99;
    cfg.optimizer.warmup_steps = 5;
    cfg.optimizer.total_steps = 30;

    auto full_run = [&](const fs::path& path) {
        Trainer t(init_model(mc, 5), vocab, cfg, PretrainData{docs});
        t.run(1000);
        save_checkpoint(path, t.checkpoint());
    };
    full_run(dir / "a.ckpt");
    full_run(dir / "b.ckpt");
    const bool identical = read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt");
    o.detail << "same-seed checkpoints " << (identical ? "identical" : "DIFFER") << "; ";
    o.require(identical, "same-seed runs differ");

    const auto loaded = load_checkpoint(dir / "a.ckpt");
    save_checkpoint(dir / "a2.ckpt", loaded);
    bool tensors_equal = true;
    const auto original = load_checkpoint(dir / "a.ckpt");
    const auto model = model_from_checkpoint(loaded);
    for (const auto& p : model.named_parameters()) {
        tensors_equal = tensors_equal && original.find(p.name)->data<double>().size() == p.tensor.numel();
        const auto a = original.find(p.name)->data<double>();
        const auto b = p.tensor.data<double>();
        tensors_equal = tensors_equal && std::equal(a.begin(), a.end(), b.begin(), b.end());
    }
    const bool round_trip = read_file(dir / "a.ckpt") == read_file(dir / "a2.ckpt") && tensors_equal;
    o.detail << "save/load round trip " << (round_trip ? "bit-exact" : "NOT exact") << "; ";
    o.require(round_trip, "checkpoint round trip");

    {
        Trainer first(init_model(mc, 5), vocab, cfg, PretrainData{docs});
        first.run(13);
        save_checkpoint(dir / "partial.ckpt", first.checkpoint());
    }
    Trainer second(load_checkpoint(dir / "partial.ckpt"), cfg, PretrainData{docs}, true);
    second.run(1000);
    save_checkpoint(dir / "resumed.ckpt", second.checkpoint());
    const bool resumed = read_file(dir / "a.ckpt") == read_file(dir / "resumed.ckpt");
    o.detail << "pretrain resume " << (resumed ? "identical" : "DIFFERS") << "; ";
    o.require(resumed, "resumed pretraining differs");

    // The pair stage also carries sampler state across the interruption.
    const testing::PairWorld world(12, 6, 2);
    const auto pv = testing::make_vocab(world.all_words());
    mc.vocab_size = pv.size();
    TrainConfig pc = cfg;
    pc.stage = Stage::pairs;
    pc.batch_size = 6;
    auto pairs = world.pairs(40, 3, "s1");
    const auto more = world.pairs(25, 4, "s2");
    pairs.insert(pairs.end(), more.begin(), more.end());
    const PairData pd{PairCorpus::group(pairs)};
    Trainer straight(init_model(mc, 8), pv, pc, pd);
    straight.run(1000);
    save_checkpoint(dir / "pairs_straight.ckpt", straight.checkpoint());
    {
        Trainer part(init_model(mc, 8), pv, pc, pd);
        part.run(17);
        save_checkpoint(dir / "pairs_partial.ckpt", part.checkpoint());
    }
    Trainer rest(load_checkpoint(dir / "pairs_partial.ckpt"), pc, pd, true);
    rest.run(1000);
    save_checkpoint(dir / "pairs_resumed.ckpt", rest.checkpoint());
    const bool pairs_resumed = read_file(dir / "pairs_straight.ckpt") == read_file(dir / "pairs_resumed.ckpt");
    o.detail << "pair-stage resume " << (pairs_resumed ? "identical" : "DIFFERS");
    o.require(pairs_resumed, "resumed pair training differs");
    fs::remove_all(dir);
}

// 10. Masking statistics over 10,000 seeded trials.
void masking_statistics(Outcome& o) {
    // Every word splits into a stem and a continuation piece, so co-selection
    // of subtokens is exercised on every word.
    std::vector<std::string> tokens;
    for (int i = 0; i < 300; ++i) tokens.push_back("s" + std::to_string(i));
    for (int i = 0; i < 5; ++i) tokens.push_back("##x" + std::to_string(i));
    const auto vocab = testing::make_vocab(tokens);
    Rng text_rng(17);
    std::size_t masked = 0, as_mask = 0, as_random = 0, kept = 0, split_words = 0, trials_below = 0;
    for (std::size_t trial = 0; trial < 10000; ++trial) {
        std::string text;
        const std::size_t n_words = 3 + uniform_index(text_rng, 20);
        for (std::size_t w = 0; w < n_words; ++w) {
            text += "s" + std::to_string(uniform_index(text_rng, 300));
            if (uniform_index(text_rng, 2)) text += "x" + std::to_string(uniform_index(text_rng, 5));
            text += ' ';
        }
        const auto seq = tokenize(text, vocab, 128);
        const auto mb = apply_whole_word_masking(seq, vocab, mix_seed(555, trial));
        std::size_t maskable = 0;
        for (auto w : seq.word_ids) maskable += w != kSpecialWord;
        if (mb.mask_positions.size() < 0.3 * maskable - 1e-9) ++trials_below;
        std::set<std::int64_t> selected_words;
        for (auto p : mb.mask_positions) {
            selected_words.insert(seq.word_ids[p]);
            ++masked;
            if (mb.input_ids[p] == vocab.mask_id()) ++as_mask;
            else if (mb.input_ids[p] == seq.token_ids[p]) ++kept;
            else ++as_random;
        }
        for (std::size_t p = 0; p < seq.size(); ++p) {
            const bool selected = std::find(mb.mask_positions.begin(), mb.mask_positions.end(), p) !=
                                  mb.mask_positions.end();
            if (seq.word_ids[p] != kSpecialWord && selected_words.count(seq.word_ids[p]) && !selected) ++split_words;
        }
    }
    const double fm = double(as_mask) / masked, fr = double(as_random) / masked, fk = double(kept) / masked;
    o.detail << "over " << masked << " selected tokens: [MASK] " << fm << ", random " << fr << ", kept " << fk
             << "; trials under 30% coverage " << trials_below << "; partially selected words " << split_words;
    o.require(std::abs(fm - 0.8) <= 0.02 && std::abs(fr - 0.1) <= 0.02 && std::abs(fk - 0.1) <= 0.02,
              "replacement fractions");
    o.require(trials_below == 0, "coverage");
    o.require(split_words == 0, "whole-word co-selection");
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<int, std::function<void(Outcome&)>>> criteria = {
        {1, parameter_counts}, {2, alibi_slopes},     {3, length_extrapolation}, {4, gradients},
        {5, closed_forms},     {6, contrastive_sanity}, {7, metric_oracles},     {8, long_context},
        {9, determinism},      {10, masking_statistics}};
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& [id, run] : criteria) {
        if (!selected.empty() && !selected.count(id)) continue;
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            run(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "[exception: " << e.what() << "]";
        }
        failures += !o.pass;
        std::printf("%s criterion %d: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, o.detail.str().c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
