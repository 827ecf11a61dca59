#include "pess/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "pess/errors.hpp"
#include "pess/metrics.hpp"
#include "pess/rng.hpp"
#include "pess/text.hpp"

namespace pess {

namespace fs = std::filesystem;
using nlohmann::json;

const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_complete: return "no_complete";
        case Ablation::no_consist: return "no_consist";
        case Ablation::nll_only: return "nll_only";
    }
    return "full";
}

Ablation ablation_from_name(const std::string& name) {
    if (name == "full") return Ablation::full;
    if (name == "no_complete") return Ablation::no_complete;
    if (name == "no_consist") return Ablation::no_consist;
    if (name == "nll_only") return Ablation::nll_only;
    throw ArgumentError("unknown ablation '" + name +
                        "' (expected full|no_complete|no_consist|nll_only)");
}

void TrainConfig::validate() const {
    if (epochs_total < 1) throw ArgumentError("epochs_total must be >= 1");
    if (epochs_nll_only < 0 || epochs_nll_only > epochs_total)
        throw ArgumentError("epochs_nll_only must be in [0, epochs_total]");
    if (learning_rate <= 0.0) throw ArgumentError("learning_rate must be positive");
    if (weight_decay < 0.0) throw ArgumentError("weight_decay must be nonnegative");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (!(tau > 0.0) || tau > 1.0) throw ArgumentError("tau must be in (0, 1]");
    if (loss_weights.w_complete < 0.0 || loss_weights.w_consist < 0.0)
        throw ArgumentError("loss weights must be nonnegative");
    if (decode_max_new < 1) throw ArgumentError("decode_max_new must be >= 1");
}

namespace {

json train_config_json(const TrainConfig& c) {
    return json{{"epochs_total", c.epochs_total},
                {"epochs_nll_only", c.epochs_nll_only},
                {"learning_rate", c.learning_rate},
                {"weight_decay", c.weight_decay},
                {"batch_size", c.batch_size},
                {"tau", c.tau},
                {"w_complete", c.loss_weights.w_complete},
                {"w_consist", c.loss_weights.w_consist},
                {"ablation", ablation_name(c.ablation)},
                {"seed", c.seed},
                {"decode_max_new", c.decode_max_new},
                {"freeze_extractor", c.freeze_extractor}};
}

json model_config_json(const ModelConfig& c) {
    return json{{"d_model", c.d_model},   {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
                {"ffn_dim", c.ffn_dim},   {"max_len", c.max_len},   {"dropout", c.dropout},
                {"seed", c.seed}};
}

json epochs_json(const std::vector<EpochRecord>& epochs, bool with_wall_clock) {
    json out = json::array();
    for (const auto& e : epochs) {
        json je{{"epoch", e.epoch}, {"train_loss", e.train_loss}};
        je["val_metrics"] = e.val_metrics;
        if (with_wall_clock) je["wall_seconds"] = e.wall_seconds;
        out.push_back(std::move(je));
    }
    return out;
}

}  // namespace

std::string RunRecord::to_json() const {
    json j;
    j["config"] = json::parse(config_json);
    j["epochs"] = epochs_json(epochs, /*with_wall_clock=*/true);
    j["best_epoch"] = best_epoch;
    j["best_checkpoint"] = best_checkpoint;
    j["final_checkpoint"] = final_checkpoint;
    j["training_log"] = training_log_path;
    return j.dump(2);
}

std::string RunRecord::metrics_fingerprint() const {
    json j;
    j["config"] = json::parse(config_json);
    j["epochs"] = epochs_json(epochs, /*with_wall_clock=*/false);
    j["best_epoch"] = best_epoch;
    return j.dump();
}

AdamW::AdamW(std::vector<NamedTensor> params, double lr, double weight_decay, double beta1,
             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.value->rows, p.value->cols);
        v_.emplace_back(p.value->rows, p.value->cols);
    }
}

void AdamW::step(double grad_scale) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        ad::Mat& p = *params_[i].value;
        ad::Mat& g = *params_[i].grad;
        ad::Mat& m = m_[i];
        ad::Mat& v = v_[i];
        for (size_t j = 0; j < p.size(); ++j) {
            const double grad = g.a[j] * grad_scale;
            m.a[j] = beta1_ * m.a[j] + (1.0 - beta1_) * grad;
            v.a[j] = beta2_ * v.a[j] + (1.0 - beta2_) * grad * grad;
            const double mhat = m.a[j] / bc1;
            const double vhat = v.a[j] / bc2;
            p.a[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p.a[j]);
        }
        g.fill(0.0);
    }
}

// ---------------------------------------------------------------------------
// Extractor training

namespace {

struct PhaseOptions {
    bool with_complete = false;
    bool with_consist = false;
};

PhaseOptions phase_options(const TrainConfig& config, int epoch_1based) {
    if (epoch_1based <= config.epochs_nll_only) return {false, false};
    switch (config.ablation) {
        case Ablation::full: return {true, true};
        case Ablation::no_complete: return {false, true};
        case Ablation::no_consist: return {true, false};
        case Ablation::nll_only: return {false, false};
    }
    return {false, false};
}

std::vector<std::string> training_texts(const std::vector<Dialogue>& dialogues) {
    std::vector<std::string> texts;
    for (const auto& d : dialogues) {
        for (const auto& u : d.utterances) texts.push_back(normalize_text(u.text));
        for (const auto* p : {&d.persona_a, &d.persona_b})
            if (*p)
                for (const auto& s : (*p)->sentences) texts.push_back(normalize_text(s));
    }
    return texts;
}

std::string join_sentences(const std::vector<std::string>& sentences) {
    std::string out;
    for (size_t i = 0; i < sentences.size(); ++i) {
        if (i) out.push_back(' ');
        out += sentences[i];
    }
    return out;
}

class StepLogger {
public:
    explicit StepLogger(const std::string& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw IoError("cannot write training log: " + path);
    }
    void write_line(const std::string& line) { out_ << line << "\n"; }
    const std::string& path() const { return path_; }

private:
    std::ofstream out_;
    std::string path_;
};

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

RunRecord train_extractor(const Splits& splits, const ModelConfig& model_config,
                          const TrainConfig& config, const Embedder& embedder,
                          const std::string& run_dir) {
    config.validate();
    if (splits.train.empty()) throw ArgumentError("train_extractor: training split is empty");
    for (const auto& d : splits.train)
        if ((!d.persona_a || d.persona_a->empty()) && (!d.persona_b || d.persona_b->empty()))
            throw SchemaError("train_extractor: dialogue '" + d.id +
                              "' lacks a ground-truth persona");

    const std::vector<ExtractionExample> train_examples = extraction_examples(splits.train);
    const std::vector<ExtractionExample> valid_examples = extraction_examples(splits.valid);
    if (train_examples.empty())
        throw SchemaError("train_extractor: no usable training examples");

    ModelConfig mc = model_config;
    mc.seed = config.seed;
    Vocab vocab = Vocab::build(training_texts(splits.train));
    Seq2SeqModel model(mc, vocab);

    fs::create_directories(fs::path(run_dir) / "checkpoints");
    StepLogger logger((fs::path(run_dir) / "training_log.jsonl").string());

    RunRecord record;
    {
        json cfg;
        cfg["model"] = model_config_json(mc);
        cfg["train"] = train_config_json(config);
        cfg["kind"] = "extractor";
        cfg["n_train_examples"] = train_examples.size();
        cfg["n_valid_examples"] = valid_examples.size();
        cfg["vocab_size"] = vocab.size();
        record.config_json = cfg.dump();
    }
    record.training_log_path = (fs::path(run_dir) / "training_log.jsonl").string();

    AdamW optimizer(model.parameters(), config.learning_rate, config.weight_decay);
    Rng shuffle_rng(config.seed ^ 0xd1b54a32d192ed03ull);

    double best_rouge = -1.0;
    Seq2SeqModel best_model = model;

    long step = 0;
    for (int epoch = 1; epoch <= config.epochs_total; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        const PhaseOptions phase = phase_options(config, epoch);

        std::vector<size_t> order(train_examples.size());
        std::iota(order.begin(), order.end(), 0);
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.index(i)]);

        double epoch_loss = 0.0;
        size_t in_batch = 0;
        LossReport batch_report;
        auto flush_batch = [&]() {
            if (in_batch == 0) return;
            optimizer.step(1.0 / static_cast<double>(in_batch));
            ++step;
            LossReport mean = batch_report;
            mean.l_nll /= static_cast<double>(in_batch);
            mean.l_complete /= static_cast<double>(in_batch);
            mean.l_consist /= static_cast<double>(in_batch);
            mean.l_total /= static_cast<double>(in_batch);
            logger.write_line(mean.to_json_line(step));
            batch_report = LossReport{};
            in_batch = 0;
        };

        for (size_t idx : order) {
            const ExtractionExample& example = train_examples[idx];
            ExtractorLossOptions options;
            options.tau = config.tau;
            options.weights = config.loss_weights;
            options.with_complete = phase.with_complete;
            options.with_consist = phase.with_consist;
            options.decode_max_new = config.decode_max_new;

            ad::Graph g;
            ExtractorLossResult result =
                total_extractor_loss(g, model, example, embedder, options);
            g.backward(result.total);

            epoch_loss += result.report.l_total;
            batch_report.l_nll += result.report.l_nll;
            batch_report.l_complete += result.report.l_complete;
            batch_report.l_consist += result.report.l_consist;
            batch_report.l_total += result.report.l_total;
            batch_report.counts.m += result.report.counts.m;
            batch_report.counts.k += result.report.counts.k;
            batch_report.counts.p_con += result.report.counts.p_con;
            batch_report.counts.p_miss += result.report.counts.p_miss;
            if (++in_batch == static_cast<size_t>(config.batch_size)) flush_batch();
        }
        flush_batch();

        EpochRecord er;
        er.epoch = epoch;
        er.train_loss = epoch_loss / static_cast<double>(train_examples.size());

        if (!valid_examples.empty()) {
            std::vector<std::string> candidates, references;
            for (const auto& ex : valid_examples) {
                const auto source = encode_source(vocab, ex.source_utterances, mc.max_len);
                auto [sentences, unused] =
                    decode_persona(model, source, DecodeMode::greedy, config.decode_max_new);
                candidates.push_back(join_sentences(sentences));
                references.push_back(join_sentences(ex.target_persona.sentences));
            }
            er.val_metrics["rouge_l"] = rouge_l(candidates, references);
            er.val_metrics["embed_score"] = embed_score(candidates, references, embedder);
            if (er.val_metrics["rouge_l"] > best_rouge) {
                best_rouge = er.val_metrics["rouge_l"];
                best_model = model;
                record.best_epoch = epoch;
            }
        } else {
            best_model = model;
            record.best_epoch = epoch;
        }

        er.wall_seconds = elapsed_seconds(epoch_start);
        record.epochs.push_back(std::move(er));
    }

    record.best_checkpoint = (fs::path(run_dir) / "checkpoints" / "best").string();
    record.final_checkpoint = (fs::path(run_dir) / "checkpoints" / "final").string();
    save_checkpoint(best_model, record.best_checkpoint);
    save_checkpoint(model, record.final_checkpoint);

    std::ofstream run_json(fs::path(run_dir) / "run.json", std::ios::binary);
    if (!run_json) throw IoError("cannot write run.json in " + run_dir);
    run_json << record.to_json() << "\n";
    return record;
}

std::vector<std::string> extract_persona(const Seq2SeqModel& extractor, const Dialogue& dialogue,
                                         Speaker speaker, int max_new) {
    std::vector<std::string> utterances;
    for (const auto& text : dialogue.utterance_texts(speaker)) {
        std::string norm = normalize_text(text);
        if (!norm.empty()) utterances.push_back(std::move(norm));
    }
    if (utterances.empty())
        throw ArgumentError("extract_persona: dialogue '" + dialogue.id +
                            "' has no utterances by speaker " + speaker_name(speaker));
    const auto source = encode_source(extractor.vocab(), utterances, extractor.config().max_len);
    auto [sentences, unused] = decode_persona(extractor, source, DecodeMode::greedy, max_new);
    return sentences;
}

// ---------------------------------------------------------------------------
// Generator training

std::vector<int> build_generator_source(const Vocab& vocab,
                                        const std::vector<std::string>& persona_sentences,
                                        const std::vector<std::string>& history_texts,
                                        int max_len) {
    if (history_texts.empty()) throw ArgumentError("build_generator_source: empty history");
    std::vector<int> ids{Vocab::bos_id};
    for (const auto& p : persona_sentences) {
        for (int id : vocab.encode_words(p)) ids.push_back(id);
        ids.push_back(Vocab::persona_sep_id);
    }
    for (size_t i = 0; i < history_texts.size(); ++i) {
        if (i) ids.push_back(Vocab::sep_id);
        for (int id : vocab.encode_words(history_texts[i])) ids.push_back(id);
    }
    ids.push_back(Vocab::eos_id);
    if (static_cast<int>(ids.size()) > max_len) {
        std::vector<int> kept{Vocab::bos_id};
        kept.insert(kept.end(), ids.end() - (max_len - 1), ids.end());
        ids = std::move(kept);
    }
    return ids;
}

RunRecord train_generator(const Splits& splits, const std::string& extractor_checkpoint,
                          const ModelConfig& model_config, const TrainConfig& config,
                          const std::string& run_dir) {
    config.validate();
    if (!config.freeze_extractor)
        throw ConfigError("train_generator: the extractor must stay frozen "
                          "(freeze_extractor=false is not supported)");
    if (splits.train.empty()) throw ArgumentError("train_generator: training split is empty");

    const Seq2SeqModel extractor = load_checkpoint(extractor_checkpoint);

    // Personas are fixed under a frozen extractor, so infer them once per
    // dialogue up front.
    auto examples_for = [&](const std::vector<Dialogue>& dialogues) {
        std::vector<GenerationExample> examples = generation_examples(dialogues);
        std::unordered_map<std::string, const Dialogue*> by_id;
        for (const auto& d : dialogues) by_id[d.id] = &d;
        for (auto& ex : examples) {
            const Dialogue* d = by_id.at(ex.dialogue_id);
            bool has_a = false;
            for (const auto& u : ex.history)
                if (u.speaker == Speaker::A) has_a = true;
            if (!has_a) continue;
            Dialogue history_only;
            history_only.id = d->id;
            history_only.utterances = ex.history;
            ex.inferred_persona =
                extract_persona(extractor, history_only, Speaker::A, config.decode_max_new);
        }
        return examples;
    };

    const std::vector<GenerationExample> train_examples = examples_for(splits.train);
    const std::vector<GenerationExample> valid_examples = examples_for(splits.valid);
    if (train_examples.empty())
        throw SchemaError("train_generator: no usable training examples");

    ModelConfig mc = model_config;
    mc.seed = config.seed;
    std::vector<std::string> texts = training_texts(splits.train);
    for (const auto& ex : train_examples)
        if (ex.inferred_persona)
            for (const auto& s : *ex.inferred_persona) texts.push_back(s);
    Vocab vocab = Vocab::build(texts);
    Seq2SeqModel model(mc, vocab);

    auto encode_example = [&](const GenerationExample& ex) {
        std::vector<std::string> history_norm;
        for (const auto& u : ex.history) history_norm.push_back(normalize_text(u.text));
        std::vector<int> source = build_generator_source(
            vocab, ex.inferred_persona.value_or(std::vector<std::string>{}), history_norm,
            mc.max_len);
        std::vector<int> target = vocab.encode_words(normalize_text(ex.target_response));
        target.push_back(Vocab::eos_id);
        return std::make_pair(std::move(source), std::move(target));
    };

    fs::create_directories(fs::path(run_dir) / "checkpoints");
    StepLogger logger((fs::path(run_dir) / "training_log.jsonl").string());

    RunRecord record;
    {
        json cfg;
        cfg["model"] = model_config_json(mc);
        cfg["train"] = train_config_json(config);
        cfg["kind"] = "generator";
        cfg["extractor_checkpoint"] = extractor_checkpoint;
        cfg["n_train_examples"] = train_examples.size();
        cfg["n_valid_examples"] = valid_examples.size();
        cfg["vocab_size"] = vocab.size();
        record.config_json = cfg.dump();
    }
    record.training_log_path = (fs::path(run_dir) / "training_log.jsonl").string();

    std::vector<ScoredSequence> valid_scored;
    for (const auto& ex : valid_examples) {
        auto [source, target] = encode_example(ex);
        valid_scored.push_back({std::move(source), std::move(target)});
    }

    AdamW optimizer(model.parameters(), config.learning_rate, config.weight_decay);
    Rng shuffle_rng(config.seed ^ 0xd1b54a32d192ed03ull);

    double best_ppl = std::numeric_limits<double>::infinity();
    Seq2SeqModel best_model = model;

    long step = 0;
    for (int epoch = 1; epoch <= config.epochs_total; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();

        std::vector<size_t> order(train_examples.size());
        std::iota(order.begin(), order.end(), 0);
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.index(i)]);

        double epoch_loss = 0.0;
        size_t in_batch = 0;
        double batch_loss = 0.0;
        auto flush_batch = [&]() {
            if (in_batch == 0) return;
            optimizer.step(1.0 / static_cast<double>(in_batch));
            ++step;
            json line{{"step", step}, {"l_gen", batch_loss / static_cast<double>(in_batch)}};
            logger.write_line(line.dump());
            batch_loss = 0.0;
            in_batch = 0;
        };

        for (size_t idx : order) {
            auto [source, target] = encode_example(train_examples[idx]);
            ad::Graph g;
            ad::NodeId loss = generator_loss_node(g, model, source, target, /*with_grad=*/true);
            g.backward(loss);
            const double value = g.value(loss).a[0];
            epoch_loss += value;
            batch_loss += value;
            if (++in_batch == static_cast<size_t>(config.batch_size)) flush_batch();
        }
        flush_batch();

        EpochRecord er;
        er.epoch = epoch;
        er.train_loss = epoch_loss / static_cast<double>(train_examples.size());
        if (!valid_scored.empty()) {
            er.val_metrics["ppl"] = perplexity(model, valid_scored);
            if (er.val_metrics["ppl"] < best_ppl) {
                best_ppl = er.val_metrics["ppl"];
                best_model = model;
                record.best_epoch = epoch;
            }
        } else {
            best_model = model;
            record.best_epoch = epoch;
        }
        er.wall_seconds = elapsed_seconds(epoch_start);
        record.epochs.push_back(std::move(er));
    }

    record.best_checkpoint = (fs::path(run_dir) / "checkpoints" / "best").string();
    record.final_checkpoint = (fs::path(run_dir) / "checkpoints" / "final").string();
    save_checkpoint(best_model, record.best_checkpoint);
    save_checkpoint(model, record.final_checkpoint);

    std::ofstream run_json(fs::path(run_dir) / "run.json", std::ios::binary);
    if (!run_json) throw IoError("cannot write run.json in " + run_dir);
    run_json << record.to_json() << "\n";
    return record;
}

std::string respond(const Seq2SeqModel& generator, const Seq2SeqModel& extractor,
                    const std::vector<Utterance>& history, int max_new) {
    if (history.empty()) throw ArgumentError("respond: history is empty");
    if (history.back().speaker != Speaker::A)
        throw ArgumentError("respond: the last history turn must be spoken by A");

    Dialogue scratch;
    scratch.id = "history";
    scratch.utterances = history;
    const std::vector<std::string> persona =
        extract_persona(extractor, scratch, Speaker::A, max_new);

    std::vector<std::string> history_norm;
    for (const auto& u : history) history_norm.push_back(normalize_text(u.text));
    const std::vector<int> source =
        build_generator_source(generator.vocab(), persona, history_norm,
                               generator.config().max_len);

    DecodeOutput out = generator.decode(source, DecodeMode::greedy, max_new);
    std::vector<int> words;
    for (int id : out.token_ids)
        if (!Vocab::is_special(id)) words.push_back(id);
    return generator.vocab().decode_tokens(words);
}

}  // namespace pess
