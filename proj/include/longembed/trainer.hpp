#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "longembed/checkpoint.hpp"
#include "longembed/contrastive.hpp"
#include "longembed/embedder.hpp"
#include "longembed/encoder.hpp"
#include "longembed/mlm.hpp"
#include "longembed/random.hpp"
#include "longembed/tokenizer.hpp"

namespace longembed {

struct OptimizerConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-6;
    double weight_decay = 0.01;
    double peak_lr = 1e-3;
    std::size_t warmup_steps = 100;
    std::size_t total_steps = 2000;
    double clip_norm = 1.0;  // <= 0 disables clipping

    // Large-scale schedule: 10k warmup, 100k steps, per-size peak rate.
    static OptimizerConfig for_model_size(const std::string& model_size);

    void validate() const;
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

// Linear 0 -> peak over warmup, then linear peak -> 0 at total_steps.
double lr_at(std::size_t step, const OptimizerConfig& cfg);

// Decoupled weight decay Adam. Moments have the dtype of their parameter.
class AdamW {
public:
    AdamW() = default;
    AdamW(OptimizerConfig cfg, std::vector<NamedTensor> params);

    // Update number `step` (1-based) with rate lr_at(step). Parameters without
    // a gradient are left alone.
    void step(std::size_t step);
    void step_with_lr(std::size_t step, double lr);

    const OptimizerConfig& config() const { return cfg_; }
    const std::vector<NamedTensor>& params() const { return params_; }

    // "adam.m/<name>" and "adam.v/<name>" for every parameter.
    std::vector<NamedTensor> state() const;
    void load_state(const Checkpoint& ckpt);

private:
    OptimizerConfig cfg_;
    std::vector<NamedTensor> params_;
    std::vector<Tensor> m_, v_;
};

// Throws NumericError naming the first tensor with a non-finite gradient.
void check_gradients(const std::vector<NamedTensor>& params);

// Scales every gradient so the global L2 norm is at most max_norm. Returns
// the norm before scaling.
double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm);

void zero_grads(const std::vector<NamedTensor>& params);

enum class Stage { pretrain, pairs, triplets };

std::string stage_name(Stage stage);
Stage parse_stage(const std::string& name);

struct TrainConfig {
    Stage stage = Stage::pretrain;
    OptimizerConfig optimizer;
    std::size_t batch_size = 32;
    std::size_t train_seq_len = 512;
    MaskingOptions masking;
    double temperature = kDefaultTemperature;
    std::uint64_t seed = 0;
    std::map<std::string, double> source_weights;  // pairs stage; empty = by size
    std::size_t eval_every = 0;                    // 0 disables periodic evaluation
    PoolingOptions pooling;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct PretrainData {
    std::vector<std::string> documents;
};

struct PairData {
    PairCorpus corpus;
};

struct TripletData {
    std::vector<TripletRecord> records;
};

using StageData = std::variant<PretrainData, PairData, TripletData>;

Stage stage_of(const StageData& data);

struct StepRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
};

struct EvalRecord {
    std::size_t step = 0;
    std::string metric;
    double value = 0.0;
};

struct TrainingLog {
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> evals;
};

using EvalHook = std::function<std::vector<EvalRecord>(std::size_t step, const EncoderState& model)>;

class Trainer {
public:
    // Trains a private copy of `model`. Fresh optimizer state; the step
    // counter starts at 0.
    Trainer(EncoderState model, Vocabulary vocab, TrainConfig config, StageData data);

    // Starts from the weights and vocabulary in `ckpt`. With `resume`, also
    // restores moments, step, generator and sampler state so the run
    // continues exactly where the checkpoint left it.
    Trainer(const Checkpoint& ckpt, TrainConfig config, StageData data, bool resume);

    // One optimization step. Throws NumericError on a non-finite loss or
    // gradient.
    StepRecord step();

    // Steps until `steps` more updates ran or total_steps is reached.
    TrainingLog run(std::size_t steps, const EvalHook& hook = {});

    Checkpoint checkpoint() const;

    const EncoderState& model() const { return model_; }
    const Vocabulary& vocab() const { return vocab_; }
    const TrainConfig& config() const { return config_; }
    std::size_t current_step() const { return step_; }
    bool finished() const { return step_ >= config_.optimizer.total_steps; }

private:
    void prepare();
    Tensor pretrain_loss(const ForwardContext& ctx);
    Tensor pairs_loss(const ForwardContext& ctx);
    Tensor triplets_loss(const ForwardContext& ctx);

    EncoderState model_;
    Vocabulary vocab_;
    TrainConfig config_;
    StageData data_;
    std::vector<TokenizedSequence> tokenized_;  // pretrain stage
    std::vector<NamedTensor> params_;
    AdamW optimizer_;
    SamplingPlan plan_;
    Rng rng_;
    std::size_t step_ = 0;
};

struct StageResult {
    EncoderState model;
    TrainingLog log;
};

// Runs a whole stage from step 0 to total_steps.
StageResult run_stage(const StageData& data, EncoderState model, const Vocabulary& vocab, const TrainConfig& cfg,
                      const EvalHook& hook = {});

}  // namespace longembed
