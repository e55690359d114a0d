#include "longembed/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "longembed/io.hpp"
#include "longembed/ops.hpp"

namespace longembed {

namespace {

void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& what) {
    if (!j.is_object()) throw std::invalid_argument(what + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw std::invalid_argument("unknown " + what + " key '" + key + "'");
    }
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

OptimizerConfig OptimizerConfig::for_model_size(const std::string& model_size) {
    OptimizerConfig c;
    c.warmup_steps = 10'000;
    c.total_steps = 100'000;
    if (model_size == "small") c.peak_lr = 1e-3;
    else if (model_size == "base") c.peak_lr = 6e-4;
    else if (model_size == "large") c.peak_lr = 4e-4;
    else throw std::invalid_argument("no optimizer preset for model size '" + model_size + "'");
    return c;
}

void OptimizerConfig::validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must lie in (0, 1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must lie in (0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be nonnegative");
    if (!(peak_lr >= 0.0) || !std::isfinite(peak_lr)) throw std::invalid_argument("peak_lr must be nonnegative");
    if (total_steps == 0) throw std::invalid_argument("total_steps must be positive");
    if (warmup_steps > total_steps) throw std::invalid_argument("warmup_steps exceeds total_steps");
    if (!std::isfinite(clip_norm)) throw std::invalid_argument("clip_norm must be finite");
}

void to_json(nlohmann::json& j, const OptimizerConfig& c) {
    j = {{"beta1", c.beta1},           {"beta2", c.beta2},
         {"eps", c.eps},               {"weight_decay", c.weight_decay},
         {"peak_lr", c.peak_lr},       {"warmup_steps", c.warmup_steps},
         {"total_steps", c.total_steps}, {"clip_norm", c.clip_norm}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& c) {
    reject_unknown_keys(j,
                        {"preset", "beta1", "beta2", "eps", "weight_decay", "peak_lr", "warmup_steps",
                         "total_steps", "clip_norm"},
                        "optimizer");
    c = j.contains("preset") ? OptimizerConfig::for_model_size(j.at("preset").get<std::string>()) : OptimizerConfig{};
    read_key(j, "beta1", c.beta1);
    read_key(j, "beta2", c.beta2);
    read_key(j, "eps", c.eps);
    read_key(j, "weight_decay", c.weight_decay);
    read_key(j, "peak_lr", c.peak_lr);
    read_key(j, "warmup_steps", c.warmup_steps);
    read_key(j, "total_steps", c.total_steps);
    read_key(j, "clip_norm", c.clip_norm);
}

double lr_at(std::size_t step, const OptimizerConfig& cfg) {
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(cfg.warmup_steps);
    const double t = static_cast<double>(cfg.total_steps);
    if (step <= cfg.warmup_steps) return cfg.warmup_steps == 0 ? cfg.peak_lr : cfg.peak_lr * s / w;
    if (step >= cfg.total_steps) return 0.0;
    return cfg.peak_lr * (t - s) / (t - w);
}

AdamW::AdamW(OptimizerConfig cfg, std::vector<NamedTensor> params) : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
        v_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
    }
}

void AdamW::step(std::size_t step) { step_with_lr(step, lr_at(step, cfg_)); }

void AdamW::step_with_lr(std::size_t step, double lr) {
    if (step == 0) throw std::invalid_argument("AdamW: update numbers start at 1");
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    const double decay = 1.0 - lr * cfg_.weight_decay;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor p = params_[i].tensor;
        if (!p.has_grad()) continue;
        dispatch(p.dtype(), [&]<typename T>() {
            auto w = p.data<T>();
            auto g = p.grad_data<T>();
            auto m = m_[i].data<T>();
            auto v = v_[i].data<T>();
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double gk = g[k];
                const double mk = b1 * m[k] + (1.0 - b1) * gk;
                const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
                m[k] = static_cast<T>(mk);
                v[k] = static_cast<T>(vk);
                const double update = (mk / c1) / (std::sqrt(vk / c2) + cfg_.eps);
                w[k] = static_cast<T>(static_cast<double>(w[k]) * decay - lr * update);
            }
        });
    }
}

std::vector<NamedTensor> AdamW::state() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < params_.size(); ++i) out.push_back({"adam.m/" + params_[i].name, m_[i].detach()});
    for (std::size_t i = 0; i < params_.size(); ++i) out.push_back({"adam.v/" + params_[i].name, v_[i].detach()});
    return out;
}

void AdamW::load_state(const Checkpoint& ckpt) {
    auto copy_into = [&](const std::string& name, Tensor& dst) {
        const Tensor* src = ckpt.find(name);
        if (src == nullptr) throw DataError("checkpoint lacks optimizer tensor " + name);
        if (src->shape() != dst.shape() || src->dtype() != dst.dtype()) {
            throw DataError("optimizer tensor " + name + " does not match its parameter");
        }
        dst.impl().data = src->impl().data;
    };
    for (std::size_t i = 0; i < params_.size(); ++i) {
        copy_into("adam.m/" + params_[i].name, m_[i]);
        copy_into("adam.v/" + params_[i].name, v_[i]);
    }
}

void check_gradients(const std::vector<NamedTensor>& params) {
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        Tensor t = p.tensor;
        dispatch(t.dtype(), [&]<typename T>() {
            const auto g = t.grad_data<T>();
            for (std::size_t k = 0; k < g.size(); ++k) {
                if (!std::isfinite(g[k])) {
                    throw NumericError("non-finite gradient in " + p.name + " at index " + std::to_string(k));
                }
            }
        });
    }
}

double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        Tensor t = p.tensor;
        dispatch(t.dtype(), [&]<typename T>() {
            for (T g : t.grad_data<T>()) sq += static_cast<double>(g) * g;
        });
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double factor = max_norm / (norm + 1e-6);
        for (const auto& p : params) {
            if (!p.tensor.has_grad()) continue;
            Tensor t = p.tensor;
            dispatch(t.dtype(), [&]<typename T>() {
                for (T& g : t.grad_data<T>()) g = static_cast<T>(g * factor);
            });
        }
    }
    return norm;
}

void zero_grads(const std::vector<NamedTensor>& params) {
    for (const auto& p : params) {
        Tensor t = p.tensor;
        t.zero_grad();
    }
}

std::string stage_name(Stage stage) {
    switch (stage) {
        case Stage::pretrain: return "pretrain";
        case Stage::pairs: return "pairs";
        case Stage::triplets: return "triplets";
    }
    return "?";
}

Stage parse_stage(const std::string& name) {
    if (name == "pretrain") return Stage::pretrain;
    if (name == "pairs") return Stage::pairs;
    if (name == "triplets") return Stage::triplets;
    throw std::invalid_argument("unknown stage '" + name + "' (expected pretrain, pairs or triplets)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"stage", stage_name(c.stage)},
         {"optimizer", c.optimizer},
         {"batch_size", c.batch_size},
         {"train_seq_len", c.train_seq_len},
         {"masking", {{"rate", c.masking.rate}, {"mask_prob", c.masking.mask_prob}, {"random_prob", c.masking.random_prob}}},
         {"temperature", c.temperature},
         {"seed", c.seed},
         {"source_weights", c.source_weights},
         {"eval_every", c.eval_every},
         {"pooling", {{"include_special", c.pooling.include_special}}}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    reject_unknown_keys(j,
                        {"stage", "optimizer", "batch_size", "train_seq_len", "masking", "temperature", "seed",
                         "source_weights", "eval_every", "pooling"},
                        "training config");
    c = TrainConfig{};
    if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
    read_key(j, "optimizer", c.optimizer);
    read_key(j, "batch_size", c.batch_size);
    read_key(j, "train_seq_len", c.train_seq_len);
    if (j.contains("masking")) {
        const auto& m = j.at("masking");
        reject_unknown_keys(m, {"rate", "mask_prob", "random_prob"}, "masking");
        read_key(m, "rate", c.masking.rate);
        read_key(m, "mask_prob", c.masking.mask_prob);
        read_key(m, "random_prob", c.masking.random_prob);
    }
    read_key(j, "temperature", c.temperature);
    read_key(j, "seed", c.seed);
    read_key(j, "source_weights", c.source_weights);
    read_key(j, "eval_every", c.eval_every);
    if (j.contains("pooling")) {
        reject_unknown_keys(j.at("pooling"), {"include_special"}, "pooling");
        read_key(j.at("pooling"), "include_special", c.pooling.include_special);
    }
}

Stage stage_of(const StageData& data) {
    switch (data.index()) {
        case 0: return Stage::pretrain;
        case 1: return Stage::pairs;
        default: return Stage::triplets;
    }
}

Trainer::Trainer(EncoderState model, Vocabulary vocab, TrainConfig config, StageData data)
    : model_(model.clone()), vocab_(std::move(vocab)), config_(std::move(config)), data_(std::move(data)) {
    prepare();
}

Trainer::Trainer(const Checkpoint& ckpt, TrainConfig config, StageData data, bool resume)
    : model_(model_from_checkpoint(ckpt)), config_(std::move(config)), data_(std::move(data)) {
    if (ckpt.vocab.empty()) throw DataError("checkpoint carries no vocabulary");
    vocab_ = Vocabulary(ckpt.vocab);
    prepare();
    if (!resume) return;
    if (!ckpt.extra.contains("stage") || ckpt.extra.at("stage") != stage_name(config_.stage)) {
        throw std::invalid_argument("cannot resume: checkpoint was not written by a " + stage_name(config_.stage) +
                                    " run");
    }
    step_ = ckpt.step;
    rng_ = rng_from_state(ckpt.rng_state);
    plan_.restore(ckpt.extra.at("sampler"));
    optimizer_.load_state(ckpt);
}

void Trainer::prepare() {
    config_.optimizer.validate();
    model_.config.validate();
    if (stage_of(data_) != config_.stage) {
        throw std::invalid_argument("stage '" + stage_name(config_.stage) + "' cannot train on " +
                                    stage_name(stage_of(data_)) + " data");
    }
    if (vocab_.size() != model_.config.vocab_size) {
        throw std::invalid_argument("vocabulary has " + std::to_string(vocab_.size()) +
                                    " tokens but the model expects " + std::to_string(model_.config.vocab_size));
    }
    if (config_.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (config_.train_seq_len < 2) throw std::invalid_argument("train_seq_len must be at least 2");

    const auto stage_index = static_cast<std::uint64_t>(config_.stage);
    rng_ = Rng(mix_seed(config_.seed, stage_index));
    const std::uint64_t plan_seed = mix_seed(config_.seed, 0x100 + stage_index);
    params_ = model_.named_parameters();
    optimizer_ = AdamW(config_.optimizer, params_);

    if (auto* d = std::get_if<PretrainData>(&data_)) {
        if (d->documents.empty()) throw DataError("pretraining corpus is empty");
        tokenized_.clear();
        for (const auto& doc : d->documents) tokenized_.push_back(tokenize(doc, vocab_, config_.train_seq_len));
        plan_ = SamplingPlan({"documents"}, {tokenized_.size()}, {1.0}, plan_seed);
    } else if (auto* p = std::get_if<PairData>(&data_)) {
        if (p->corpus.sources.empty()) throw DataError("pair corpus is empty");
        if (config_.batch_size < 2) throw std::invalid_argument("pair training needs batch_size >= 2");
        plan_ = make_pair_plan(p->corpus, config_.source_weights, plan_seed);
    } else {
        const auto& t = std::get<TripletData>(data_);
        if (t.records.empty()) throw DataError("triplet corpus is empty");
        for (std::size_t i = 0; i < t.records.size(); ++i) {
            if (t.records[i].negatives.size() != kHardNegatives) {
                throw DataError("triplet record " + std::to_string(i + 1) + " has " +
                                std::to_string(t.records[i].negatives.size()) + " negatives, expected " +
                                std::to_string(kHardNegatives));
            }
        }
        plan_ = SamplingPlan({"triplets"}, {t.records.size()}, {1.0}, plan_seed);
    }
}

Tensor Trainer::pretrain_loss(const ForwardContext& ctx) {
    const auto draw = plan_.next(config_.batch_size, rng_);
    std::vector<MaskedBatch> batch;
    for (std::size_t i : draw.indices) {
        auto masked = apply_whole_word_masking(tokenized_[i], vocab_, rng_, config_.masking);
        if (!masked.empty()) batch.push_back(std::move(masked));
    }
    if (batch.empty()) {
        throw DataError("no maskable tokens in the batch for step " + std::to_string(step_ + 1));
    }
    return mlm_loss(model_, batch, ctx);
}

Tensor Trainer::pairs_loss(const ForwardContext& ctx) {
    const auto& corpus = std::get<PairData>(data_).corpus;
    const auto batch = next_pair_batch(plan_, corpus, config_.batch_size, rng_);
    const std::size_t k = batch.queries.size();
    std::vector<std::string> texts = batch.queries;
    texts.insert(texts.end(), batch.targets.begin(), batch.targets.end());
    const Tensor emb =
        embed_batch(model_, tokenize_batch(texts, vocab_, config_.train_seq_len), ctx, config_.pooling);
    std::vector<std::size_t> q(k), p(k);
    for (std::size_t i = 0; i < k; ++i) {
        q[i] = i;
        p[i] = k + i;
    }
    return pair_info_nce(ops::gather_rows(emb, q), ops::gather_rows(emb, p), config_.temperature);
}

Tensor Trainer::triplets_loss(const ForwardContext& ctx) {
    const auto& records = std::get<TripletData>(data_).records;
    const auto batch = next_triplet_batch(plan_, records, config_.batch_size, rng_);
    const std::size_t k = batch.records.size();
    std::vector<std::string> texts;
    for (const auto& r : batch.records) texts.push_back(r.query);
    for (const auto& r : batch.records) texts.push_back(r.positive);
    for (const auto& r : batch.records) texts.insert(texts.end(), r.negatives.begin(), r.negatives.end());
    const Tensor emb =
        embed_batch(model_, tokenize_batch(texts, vocab_, config_.train_seq_len), ctx, config_.pooling);
    std::vector<std::size_t> q(k), p(k), n(k * kHardNegatives);
    for (std::size_t i = 0; i < k; ++i) {
        q[i] = i;
        p[i] = k + i;
    }
    for (std::size_t i = 0; i < n.size(); ++i) n[i] = 2 * k + i;
    return hard_negative_loss(ops::gather_rows(emb, q), ops::gather_rows(emb, p), ops::gather_rows(emb, n),
                              config_.temperature);
}

StepRecord Trainer::step() {
    if (finished()) throw std::logic_error("training already reached total_steps");
    const ForwardContext ctx{true, &rng_};
    Tensor loss;
    switch (config_.stage) {
        case Stage::pretrain: loss = pretrain_loss(ctx); break;
        case Stage::pairs: loss = pairs_loss(ctx); break;
        case Stage::triplets: loss = triplets_loss(ctx); break;
    }
    StepRecord rec;
    rec.step = step_ + 1;
    rec.loss = loss.item();
    if (!std::isfinite(rec.loss)) {
        throw NumericError("non-finite loss at step " + std::to_string(rec.step));
    }
    zero_grads(params_);
    backward(loss);
    check_gradients(params_);
    rec.grad_norm = clip_grad_norm(params_, config_.optimizer.clip_norm);
    ++step_;
    rec.lr = lr_at(step_, config_.optimizer);
    optimizer_.step_with_lr(step_, rec.lr);
    zero_grads(params_);
    return rec;
}

TrainingLog Trainer::run(std::size_t steps, const EvalHook& hook) {
    TrainingLog log;
    for (std::size_t i = 0; i < steps && !finished(); ++i) {
        log.steps.push_back(step());
        if (hook && config_.eval_every > 0 && step_ % config_.eval_every == 0) {
            for (auto& r : hook(step_, model_)) log.evals.push_back(std::move(r));
        }
    }
    return log;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint ckpt = checkpoint_from_model(model_, vocab_.tokens());
    ckpt.step = step_;
    ckpt.seed = config_.seed;
    ckpt.rng_state = rng_state(rng_);
    ckpt.extra = {{"stage", stage_name(config_.stage)}, {"train", config_}, {"sampler", plan_.state()}};
    for (auto& t : optimizer_.state()) ckpt.tensors.push_back(std::move(t));
    return ckpt;
}

StageResult run_stage(const StageData& data, EncoderState model, const Vocabulary& vocab, const TrainConfig& cfg,
                      const EvalHook& hook) {
    Trainer trainer(std::move(model), vocab, cfg, data);
    TrainingLog log = trainer.run(cfg.optimizer.total_steps, hook);
    return {trainer.model(), std::move(log)};
}

}  // namespace longembed
