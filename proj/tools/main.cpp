#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "longembed/checkpoint.hpp"
#include "longembed/eval.hpp"
#include "longembed/io.hpp"
#include "longembed/parallel.hpp"
#include "longembed/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace longembed;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Records everything needed to rerun a command: the argument vector, the
// resolved configuration and digests of every input file.
class Manifest {
public:
    Manifest(std::string command, const std::vector<std::string>& argv)
        : doc_{{"command", std::move(command)}, {"argv", argv}, {"started_at", utc_now()}} {}

    void set(const std::string& key, json value) { doc_[key] = std::move(value); }

    void input(const std::string& role, const fs::path& path) {
        doc_["inputs"][role] = {{"path", path.string()}, {"fnv1a", fnv1a_hex(read_file(path))}};
    }

    void output(const fs::path& path) { doc_["outputs"].push_back(path.string()); }

    void write(const fs::path& path) {
        doc_["finished_at"] = utc_now();
        write_file_atomic(path, [&](std::ostream& os) { os << doc_.dump(2) << '\n'; });
    }

private:
    json doc_;
};

// One JSON document per run: {"model": {...}, "train": {...},
// "precision": "f32"|"f64", "checkpoint_every": n}.
struct RunConfig {
    json model = json::object();
    TrainConfig train;
    std::string precision = "f32";
    std::size_t checkpoint_every = 0;
};

RunConfig load_run_config(const std::string& path) {
    RunConfig rc;
    if (path.empty()) {
        rc.model = {{"preset", "desk"}};
        return rc;
    }
    const json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DataError(path + ": not a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (key != "model" && key != "train" && key != "precision" && key != "checkpoint_every") {
            throw UsageError(path + ": unknown config key '" + key + "'");
        }
    }
    rc.model = j.value("model", json{{"preset", "desk"}});
    if (j.contains("train")) rc.train = j.at("train").get<TrainConfig>();
    rc.precision = j.value("precision", rc.precision);
    rc.checkpoint_every = j.value("checkpoint_every", rc.checkpoint_every);
    return rc;
}

DType parse_precision(const std::string& name) {
    if (name == "f32") return DType::f32;
    if (name == "f64") return DType::f64;
    throw UsageError("precision must be f32 or f64, got '" + name + "'");
}

struct TrainFlags {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> steps, warmup, batch_size, seq_len, checkpoint_every;
    std::size_t stop_after = 0;
    std::optional<double> lr, temperature;
    std::optional<std::string> precision;
    std::string init_checkpoint, resume;

    void add_to(CLI::App& cmd) {
        cmd.add_option("--config", config, "run configuration JSON")->check(CLI::ExistingFile);
        cmd.add_option("--out", out, "output directory")->required();
        cmd.add_option("--seed", seed, "random seed (overrides config)");
        cmd.add_option("--steps", steps, "total optimizer steps");
        cmd.add_option("--warmup", warmup, "warmup steps");
        cmd.add_option("--lr", lr, "peak learning rate");
        cmd.add_option("--batch-size", batch_size, "records per batch");
        cmd.add_option("--seq-len", seq_len, "training sequence length");
        cmd.add_option("--temperature", temperature, "contrastive temperature");
        cmd.add_option("--precision", precision, "f32 or f64");
        cmd.add_option("--checkpoint-every", checkpoint_every, "write a checkpoint every n steps");
        cmd.add_option("--stop-after", stop_after, "end this invocation after n steps; resume later with --resume");
        cmd.add_option("--resume", resume, "continue an interrupted run from this checkpoint")
            ->check(CLI::ExistingFile);
    }

    void apply(RunConfig& rc) const {
        auto& t = rc.train;
        if (seed) t.seed = *seed;
        if (steps) t.optimizer.total_steps = *steps;
        if (warmup) t.optimizer.warmup_steps = *warmup;
        if (lr) t.optimizer.peak_lr = *lr;
        if (batch_size) t.batch_size = *batch_size;
        if (seq_len) t.train_seq_len = *seq_len;
        if (temperature) t.temperature = *temperature;
        if (precision) rc.precision = *precision;
        if (checkpoint_every) rc.checkpoint_every = *checkpoint_every;
        if (t.optimizer.warmup_steps > t.optimizer.total_steps) t.optimizer.warmup_steps = t.optimizer.total_steps;
    }
};

std::vector<StepRecord> read_loss_log(const fs::path& path, std::size_t up_to) {
    std::vector<StepRecord> rows;
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        StepRecord r;
        char c1, c2, c3;
        std::istringstream ss(line);
        if (!(ss >> r.step >> c1 >> r.loss >> c2 >> r.lr >> c3 >> r.grad_norm)) continue;
        if (r.step <= up_to) rows.push_back(r);
    }
    return rows;
}

void write_loss_log(const fs::path& path, const std::vector<StepRecord>& rows) {
    write_file_atomic(path, [&](std::ostream& os) {
        os << "step,loss,lr,grad_norm\n";
        for (const auto& r : rows) os << r.step << ',' << fmt(r.loss) << ',' << fmt(r.lr) << ',' << fmt(r.grad_norm) << '\n';
    });
}

// Shared by pretrain and finetune: runs the trainer to completion, writing
// the loss log and periodic checkpoints into the output directory.
void train_to_completion(Trainer& trainer, const RunConfig& rc, std::size_t stop_after, const fs::path& out,
                         Manifest& manifest) {
    const fs::path ckpt_path = out / "model.ckpt";
    const fs::path log_path = out / "loss.csv";
    auto rows = read_loss_log(log_path, trainer.current_step());
    const std::size_t chunk = rc.checkpoint_every > 0 ? rc.checkpoint_every : rc.train.optimizer.total_steps;
    std::size_t budget = stop_after > 0 ? stop_after : rc.train.optimizer.total_steps;
    while (!trainer.finished() && budget > 0) {
        const auto log = trainer.run(std::min(std::max<std::size_t>(chunk, 1), budget));
        budget -= log.steps.size();
        rows.insert(rows.end(), log.steps.begin(), log.steps.end());
        write_loss_log(log_path, rows);
        save_checkpoint(ckpt_path, trainer.checkpoint());
        if (!rows.empty()) {
            std::cerr << "step " << rows.back().step << "/" << rc.train.optimizer.total_steps << " loss "
                      << rows.back().loss << '\n';
        }
    }
    if (trainer.current_step() == 0) save_checkpoint(ckpt_path, trainer.checkpoint());
    manifest.output(ckpt_path);
    manifest.output(log_path);
    manifest.set("final_step", trainer.current_step());
    manifest.set("checkpoint_fnv1a", fnv1a_hex(read_file(ckpt_path)));
}

void describe_run(Manifest& manifest, const RunConfig& rc, const TrainFlags& flags) {
    manifest.set("config_path", flags.config);
    manifest.set("config", {{"model", rc.model},
                            {"train", rc.train},
                            {"precision", rc.precision},
                            {"checkpoint_every", rc.checkpoint_every}});
    manifest.set("seed", rc.train.seed);
    manifest.set("output_dir", flags.out);
    manifest.set("threads", configured_threads());
    if (!flags.config.empty()) manifest.input("config", flags.config);
}

int cmd_pretrain(const TrainFlags& flags, const std::string& corpus_path, const std::string& vocab_path,
                 const std::vector<std::string>& argv) {
    RunConfig rc = load_run_config(flags.config);
    flags.apply(rc);
    rc.train.stage = Stage::pretrain;
    rc.train.optimizer.validate();
    PrecisionGuard guard(parse_precision(rc.precision));

    Manifest manifest("pretrain", argv);
    const auto docs = read_corpus(corpus_path);
    std::vector<std::string> texts;
    texts.reserve(docs.size());
    for (const auto& d : docs) texts.push_back(d.text);
    manifest.input("corpus", corpus_path);

    fs::create_directories(flags.out);
    std::optional<Trainer> trainer;
    if (!flags.resume.empty()) {
        manifest.input("resume", flags.resume);
        trainer.emplace(load_checkpoint(flags.resume), rc.train, PretrainData{texts}, true);
    } else {
        if (vocab_path.empty()) throw UsageError("pretrain needs --vocab");
        const auto vocab = Vocabulary::load(vocab_path);
        manifest.input("vocab", vocab_path);
        if (!flags.init_checkpoint.empty()) {
            manifest.input("init_checkpoint", flags.init_checkpoint);
            const auto ckpt = load_checkpoint(flags.init_checkpoint);
            if (Vocabulary(ckpt.vocab).fingerprint() != vocab.fingerprint()) {
                throw DataError("vocabulary " + vocab_path + " differs from the one in " + flags.init_checkpoint);
            }
            trainer.emplace(ckpt, rc.train, PretrainData{texts}, false);
        } else {
            ModelConfig mc = rc.model.get<ModelConfig>();
            mc.vocab_size = vocab.size();
            rc.model = mc;
            trainer.emplace(init_model(mc, mix_seed(rc.train.seed, 0xC0DE)), vocab, rc.train, PretrainData{texts});
        }
    }
    describe_run(manifest, rc, flags);
    train_to_completion(*trainer, rc, flags.stop_after, flags.out, manifest);
    manifest.write(fs::path(flags.out) / "manifest.json");
    return kExitOk;
}

int cmd_finetune(const TrainFlags& flags, const std::string& stage_name_arg, const std::string& data_path,
                 const std::vector<std::string>& argv) {
    RunConfig rc = load_run_config(flags.config);
    flags.apply(rc);
    Stage stage;
    try {
        stage = parse_stage(stage_name_arg);
    } catch (const std::exception&) {
        throw UsageError("--stage must be pairs or triplets");
    }
    if (stage == Stage::pretrain) throw UsageError("--stage must be pairs or triplets");
    rc.train.stage = stage;
    rc.train.optimizer.validate();

    const std::string& ckpt_path = flags.resume.empty() ? flags.init_checkpoint : flags.resume;
    if (ckpt_path.empty()) throw UsageError("finetune needs --init-checkpoint or --resume");
    const auto ckpt = load_checkpoint(ckpt_path);
    DType dtype = ckpt.tensors.empty() ? DType::f32 : ckpt.tensors.front().tensor.dtype();
    if (flags.precision) dtype = parse_precision(*flags.precision);
    rc.precision = dtype == DType::f64 ? "f64" : "f32";
    PrecisionGuard guard(dtype);

    Manifest manifest("finetune", argv);
    manifest.input(flags.resume.empty() ? "init_checkpoint" : "resume", ckpt_path);
    manifest.input("data", data_path);
    StageData data;
    if (stage == Stage::pairs) data = PairData{PairCorpus::group(read_pairs(data_path))};
    else data = TripletData{read_triplets(data_path, kHardNegatives)};
    rc.model = ckpt.model_config;

    fs::create_directories(flags.out);
    Trainer trainer(ckpt, rc.train, std::move(data), !flags.resume.empty());
    describe_run(manifest, rc, flags);
    manifest.set("stage", stage_name(stage));
    train_to_completion(trainer, rc, flags.stop_after, flags.out, manifest);
    manifest.write(fs::path(flags.out) / "manifest.json");
    return kExitOk;
}

struct Loaded {
    EncoderState model;
    Vocabulary vocab;
};

Loaded load_model(const std::string& ckpt_path, const std::string& vocab_path) {
    const auto ckpt = load_checkpoint(ckpt_path);
    if (ckpt.vocab.empty()) throw DataError(ckpt_path + ": checkpoint carries no vocabulary");
    Vocabulary vocab(ckpt.vocab);
    if (!vocab_path.empty()) {
        const auto given = Vocabulary::load(vocab_path);
        if (given.fingerprint() != vocab.fingerprint()) {
            throw DataError("vocabulary mismatch: " + vocab_path + " (" + std::to_string(given.size()) +
                            " tokens) differs from the vocabulary in " + ckpt_path + " (" +
                            std::to_string(vocab.size()) + " tokens)");
        }
    }
    if (vocab.size() != ckpt.model_config.vocab_size) {
        throw DataError(ckpt_path + ": vocabulary has " + std::to_string(vocab.size()) + " tokens, model expects " +
                        std::to_string(ckpt.model_config.vocab_size));
    }
    return {model_from_checkpoint(ckpt), std::move(vocab)};
}

int cmd_embed(const std::string& ckpt_path, const std::string& vocab_path, const std::string& input,
              const std::string& output, std::size_t max_len, const std::string& format, std::size_t batch_size,
              const std::vector<std::string>& argv) {
    if (format != "bin" && format != "jsonl") throw UsageError("--format must be bin or jsonl");
    const auto [model, vocab] = load_model(ckpt_path, vocab_path);
    const auto docs = read_corpus(input);
    std::vector<std::string> texts;
    for (const auto& d : docs) texts.push_back(d.text);
    EncodeOptions opts;
    opts.batch_size = batch_size;
    opts.threads = configured_threads();
    auto embeddings = encode(model, vocab, texts, max_len, opts);
    for (std::size_t i = 0; i < docs.size(); ++i) embeddings[i].source_id = docs[i].id;
    if (format == "bin") write_embeddings_bin(output, embeddings);
    else write_embeddings_jsonl(output, embeddings);

    Manifest manifest("embed", argv);
    manifest.input("checkpoint", ckpt_path);
    manifest.input("input", input);
    manifest.set("max_len", max_len);
    manifest.set("format", format);
    manifest.set("threads", opts.threads);
    manifest.output(output);
    manifest.write(output + ".manifest.json");
    std::cout << "wrote " << embeddings.size() << " embeddings to " << output << '\n';
    return kExitOk;
}

struct EvalFlags {
    std::string task, checkpoint, vocab, out;
    std::vector<std::size_t> lengths = {128, 256, 512};
    std::string corpus, queries, docs, qrels, input;
    std::size_t query_max_len = 512;
    std::vector<std::size_t> ks = {10};
    std::uint64_t eval_seed = kDefaultEvalSeed;
    std::uint64_t kmeans_seed = 0;
    std::size_t batch_size = 32;
};

std::vector<std::string> texts_of(const std::vector<Document>& docs) {
    std::vector<std::string> out;
    for (const auto& d : docs) out.push_back(d.text);
    return out;
}

std::vector<SweepRow> sts_length_sweep(const Loaded& m, const fs::path& path, std::span<const std::size_t> lengths,
                                       const EncodeOptions& opts) {
    std::vector<std::string> a, b;
    std::vector<double> gold;
    for (const auto& row : read_jsonl(path)) {
        const auto line = row.at("__line").get<std::size_t>();
        if (!row.contains("text1") || !row.contains("text2") || !row.contains("score") ||
            !row.at("text1").is_string() || !row.at("text2").is_string() || !row.at("score").is_number()) {
            throw DataError(path.string() + ": line " + std::to_string(line) +
                                " needs string fields text1, text2 and numeric score",
                            line);
        }
        a.push_back(row.at("text1").get<std::string>());
        b.push_back(row.at("text2").get<std::string>());
        gold.push_back(row.at("score").get<double>());
    }
    std::vector<SweepRow> rows;
    for (auto len : lengths) {
        const auto ea = encode(m.model, m.vocab, a, len, opts);
        const auto eb = encode(m.model, m.vocab, b, len, opts);
        std::vector<double> predicted;
        for (std::size_t i = 0; i < ea.size(); ++i) predicted.push_back(cosine_similarity(ea[i], eb[i]));
        rows.push_back({len, "spearman", spearman(predicted, gold)});
    }
    return rows;
}

ClusteringTask read_clustering(const fs::path& path) {
    ClusteringTask task;
    std::map<std::string, std::int64_t> ids;
    for (const auto& row : read_jsonl(path)) {
        const auto line = row.at("__line").get<std::size_t>();
        if (!row.contains("text") || !row.at("text").is_string() || !row.contains("label")) {
            throw DataError(path.string() + ": line " + std::to_string(line) + " needs fields text and label", line);
        }
        const auto& l = row.at("label");
        const std::string key = l.is_string() ? l.get<std::string>() : l.dump();
        task.texts.push_back(row.at("text").get<std::string>());
        task.labels.push_back(ids.try_emplace(key, std::int64_t(ids.size())).first->second);
    }
    return task;
}

int cmd_eval(const EvalFlags& f, const std::vector<std::string>& argv) {
    auto require = [&](const std::string& value, const char* flag) {
        if (value.empty()) throw UsageError("--task " + f.task + " needs " + flag);
    };
    const auto m = load_model(f.checkpoint, f.vocab);
    EncodeOptions opts;
    opts.batch_size = f.batch_size;
    opts.threads = configured_threads();
    Manifest manifest("eval", argv);
    manifest.input("checkpoint", f.checkpoint);
    manifest.set("task", f.task);
    manifest.set("lengths", f.lengths);

    std::vector<SweepRow> rows;
    if (f.task == "mlm-sweep") {
        require(f.corpus, "--corpus");
        manifest.input("corpus", f.corpus);
        const auto texts = texts_of(read_corpus(f.corpus));
        rows = mlm_length_sweep(m.model, m.vocab, texts, f.lengths, f.eval_seed, opts.threads);
    } else if (f.task == "retrieval") {
        require(f.queries, "--queries");
        require(f.docs, "--docs");
        require(f.qrels, "--qrels");
        manifest.input("queries", f.queries);
        manifest.input("docs", f.docs);
        manifest.input("qrels", f.qrels);
        RetrievalTask task;
        for (const auto& q : read_corpus(f.queries)) {
            task.query_ids.push_back(q.id);
            task.query_texts.push_back(q.text);
        }
        for (const auto& d : read_corpus(f.docs)) {
            task.doc_ids.push_back(d.id);
            task.doc_texts.push_back(d.text);
        }
        task.qrels = QrelSet::load_tsv(f.qrels);
        rows = retrieval_length_sweep(m.model, m.vocab, task, f.lengths, f.query_max_len, f.ks, opts);
    } else if (f.task == "cluster") {
        require(f.input, "--input");
        manifest.input("input", f.input);
        KMeansOptions km;
        km.seed = f.kmeans_seed;
        rows = clustering_length_sweep(m.model, m.vocab, read_clustering(f.input), f.lengths, km, opts);
    } else if (f.task == "sts") {
        require(f.input, "--input");
        manifest.input("input", f.input);
        rows = sts_length_sweep(m, f.input, f.lengths, opts);
    } else {
        throw UsageError("--task must be mlm-sweep, retrieval, cluster or sts");
    }

    std::cout << std::left << std::setw(8) << "length" << std::setw(16) << "metric" << "value\n";
    for (const auto& r : rows) {
        std::cout << std::setw(8) << r.length << std::setw(16) << r.metric << std::fixed << std::setprecision(4)
                  << r.value << '\n';
        std::cout.unsetf(std::ios::floatfield);
    }
    if (!f.out.empty()) {
        write_sweep_csv(f.out, rows);
        manifest.output(f.out);
        manifest.write(f.out + ".manifest.json");
    }
    return kExitOk;
}

// Words as the tokenizer splits them, most frequent first.
int cmd_build_vocab(const std::vector<std::string>& inputs, const std::string& out, std::size_t min_count,
                    std::size_t max_size) {
    std::map<std::string, std::size_t> counts;
    auto add_text = [&](const std::string& text) {
        std::string piece;
        auto flush = [&] {
            if (!piece.empty()) ++counts[piece];
            piece.clear();
        };
        for (unsigned char c : text) {
            if (std::isspace(c)) {
                flush();
            } else if (c < 0x80 && std::ispunct(c)) {
                flush();
                piece.push_back(char(c));
                flush();
            } else {
                piece.push_back(c < 0x80 ? char(std::tolower(c)) : char(c));
            }
        }
        flush();
    };
    for (const auto& path : inputs) {
        for (const auto& row : read_jsonl(path)) {
            for (const char* key : {"text", "query", "target", "positive"}) {
                if (row.contains(key) && row.at(key).is_string()) add_text(row.at(key).get<std::string>());
            }
            if (row.contains("negatives") && row.at("negatives").is_array()) {
                for (const auto& n : row.at("negatives"))
                    if (n.is_string()) add_text(n.get<std::string>());
            }
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens = {std::string(kPadToken), std::string(kUnkToken), std::string(kClsToken),
                                       std::string(kSepToken), std::string(kMaskToken)};
    for (const auto& [word, count] : ranked) {
        if (count < min_count || (max_size > 0 && tokens.size() >= max_size)) break;
        if (std::find(tokens.begin(), tokens.end(), word) == tokens.end()) tokens.push_back(word);
    }
    Vocabulary(tokens).save(out);
    std::cout << "wrote " << tokens.size() << " tokens to " << out << '\n';
    return kExitOk;
}

int run(std::vector<std::string> args);

int cmd_replay(const std::string& manifest_path, const std::string& out_override) {
    const json m = json::parse(read_file(manifest_path), nullptr, false);
    if (m.is_discarded() || !m.contains("argv")) throw DataError(manifest_path + ": not a run manifest");
    auto args = m.at("argv").get<std::vector<std::string>>();
    if (!out_override.empty()) {
        bool replaced = false;
        for (std::size_t i = 0; i + 1 < args.size(); ++i) {
            if (args[i] == "--out" || args[i] == "--output") {
                args[i + 1] = out_override;
                replaced = true;
            }
        }
        if (!replaced) throw UsageError("manifest command has no output flag to redirect");
    }
    return run(std::move(args));
}

int run(std::vector<std::string> args) {
    const std::vector<std::string> argv_copy = args;
    CLI::App app{"Long-context text embedding: pretraining, fine-tuning, encoding and evaluation"};
    app.require_subcommand(1);

    TrainFlags pre_flags;
    std::string corpus, vocab;
    auto* pre = app.add_subcommand("pretrain", "masked-language-model pretraining");
    pre_flags.add_to(*pre);
    pre->add_option("--corpus", corpus, "JSON-lines corpus with id and text")->required();
    pre->add_option("--vocab", vocab, "vocabulary file, one token per line");
    pre->add_option("--init-checkpoint", pre_flags.init_checkpoint, "start from these weights")
        ->check(CLI::ExistingFile);

    TrainFlags ft_flags;
    std::string stage, data;
    auto* ft = app.add_subcommand("finetune", "contrastive fine-tuning on pairs or hard-negative triplets");
    ft_flags.add_to(*ft);
    ft->add_option("--stage", stage, "pairs or triplets")->required();
    ft->add_option("--data", data, "JSON-lines pairs or triplets")->required();
    ft->add_option("--init-checkpoint", ft_flags.init_checkpoint, "checkpoint to fine-tune")
        ->check(CLI::ExistingFile);

    std::string e_ckpt, e_vocab, e_input, e_output, e_format = "bin";
    std::size_t e_max_len = 512, e_batch = 32;
    auto* emb = app.add_subcommand("embed", "encode documents");
    emb->add_option("--checkpoint", e_ckpt)->required();
    emb->add_option("--vocab", e_vocab, "tokenizer vocabulary; must match the checkpoint");
    emb->add_option("--input", e_input, "JSON-lines documents with id and text")->required();
    emb->add_option("--output", e_output)->required();
    emb->add_option("--max-len", e_max_len);
    emb->add_option("--format", e_format, "bin or jsonl");
    emb->add_option("--batch-size", e_batch);

    EvalFlags ev_flags;
    auto* ev = app.add_subcommand("eval", "length-sweep evaluation");
    ev->add_option("--task", ev_flags.task, "mlm-sweep, retrieval, cluster or sts")->required();
    ev->add_option("--checkpoint", ev_flags.checkpoint)->required();
    ev->add_option("--vocab", ev_flags.vocab, "tokenizer vocabulary; must match the checkpoint");
    ev->add_option("--lengths", ev_flags.lengths, "comma-separated maximum lengths")->delimiter(',');
    ev->add_option("--out", ev_flags.out, "CSV report");
    ev->add_option("--corpus", ev_flags.corpus, "mlm-sweep: JSON-lines corpus");
    ev->add_option("--queries", ev_flags.queries, "retrieval: JSON-lines queries");
    ev->add_option("--docs", ev_flags.docs, "retrieval: JSON-lines documents");
    ev->add_option("--qrels", ev_flags.qrels, "retrieval: TSV relevance judgements");
    ev->add_option("--input", ev_flags.input, "cluster: text+label rows; sts: text1+text2+score rows");
    ev->add_option("--query-max-len", ev_flags.query_max_len);
    ev->add_option("--k", ev_flags.ks, "retrieval cutoffs")->delimiter(',');
    ev->add_option("--eval-seed", ev_flags.eval_seed);
    ev->add_option("--kmeans-seed", ev_flags.kmeans_seed);
    ev->add_option("--batch-size", ev_flags.batch_size);

    std::vector<std::string> bv_inputs;
    std::string bv_out;
    std::size_t bv_min = 1, bv_max = 0;
    auto* bv = app.add_subcommand("build-vocab", "collect a word-level vocabulary from JSON-lines files");
    bv->add_option("--input", bv_inputs)->required();
    bv->add_option("--out", bv_out)->required();
    bv->add_option("--min-count", bv_min);
    bv->add_option("--max-size", bv_max, "0 = unlimited");

    std::string rp_manifest, rp_out;
    auto* rp = app.add_subcommand("replay", "rerun the command recorded in a manifest");
    rp->add_option("--manifest", rp_manifest)->required()->check(CLI::ExistingFile);
    rp->add_option("--out", rp_out, "redirect the recorded output path");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    if (*pre) return cmd_pretrain(pre_flags, corpus, vocab, argv_copy);
    if (*ft) return cmd_finetune(ft_flags, stage, data, argv_copy);
    if (*emb) return cmd_embed(e_ckpt, e_vocab, e_input, e_output, e_max_len, e_format, e_batch, argv_copy);
    if (*ev) {
        ev_flags.batch_size = std::max<std::size_t>(ev_flags.batch_size, 1);
        return cmd_eval(ev_flags, argv_copy);
    }
    if (*bv) return cmd_build_vocab(bv_inputs, bv_out, bv_min, bv_max);
    return cmd_replay(rp_manifest, rp_out);
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        return run(std::move(args));
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid configuration: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const json::exception& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    }
}
