// pess: persona extraction and persona-conditioned response generation.
//
// Subcommands: make-corpus, train-extractor, train-generator, extract,
// respond, evaluate, match-debug. Machine-readable JSON goes to stdout,
// progress and errors to stderr. Exit codes: 0 success, 1 runtime failure,
// 2 usage or config error.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pess/config.hpp"
#include "pess/corpus.hpp"
#include "pess/embedder.hpp"
#include "pess/errors.hpp"
#include "pess/matcher.hpp"
#include "pess/metrics.hpp"
#include "pess/pipeline.hpp"
#include "pess/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string train_path, valid_path, test_path;
    std::string data_format;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs_total, epochs_nll_only, batch_size, decode_max_new;
    std::optional<double> learning_rate, tau;
    std::optional<std::string> ablation;
    std::optional<int> d_model, n_layers, n_heads, ffn_dim, max_len;
    std::optional<std::string> embedder_name;
    std::optional<int> embedder_dimension;
    std::optional<std::string> embedder_model_path;
};

void add_config_and_embedder_options(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "INI config file");
    cmd->add_option("--embedder", flags.embedder_name, "embedder provider name");
    cmd->add_option("--embedder-dim", flags.embedder_dimension, "hashed-ngram dimension");
    cmd->add_option("--embedder-model-path", flags.embedder_model_path,
                    "tsv-file provider table path");
}

void add_common_options(CLI::App* cmd, CommonFlags& flags, bool with_data) {
    add_config_and_embedder_options(cmd, flags);
    if (with_data) {
        cmd->add_option("--train", flags.train_path, "training JSONL");
        cmd->add_option("--valid", flags.valid_path, "validation JSONL");
        cmd->add_option("--test", flags.test_path, "test JSONL");
        cmd->add_option("--format", flags.data_format, "persona-chat or esconv");
    }
    cmd->add_option("--seed", flags.seed, "run seed");
    cmd->add_option("--epochs", flags.epochs_total, "total training epochs");
    cmd->add_option("--epochs-nll", flags.epochs_nll_only, "NLL-only warmup epochs");
    cmd->add_option("--lr", flags.learning_rate, "learning rate");
    cmd->add_option("--batch", flags.batch_size, "batch size");
    cmd->add_option("--tau", flags.tau, "similarity threshold");
    cmd->add_option("--ablation", flags.ablation, "full|no_complete|no_consist|nll_only");
    cmd->add_option("--decode-max-new", flags.decode_max_new, "decode budget");
    cmd->add_option("--d-model", flags.d_model, "model width");
    cmd->add_option("--layers", flags.n_layers, "encoder/decoder layers");
    cmd->add_option("--heads", flags.n_heads, "attention heads");
    cmd->add_option("--ffn", flags.ffn_dim, "feed-forward width");
    cmd->add_option("--max-len", flags.max_len, "maximum sequence length");
}

// Config file first, flags override.
pess::AppConfig resolve_config(const CommonFlags& flags) {
    pess::AppConfig config;
    if (!flags.config_path.empty()) config = pess::load_app_config(flags.config_path);
    if (!flags.train_path.empty()) config.train_path = flags.train_path;
    if (!flags.valid_path.empty()) config.valid_path = flags.valid_path;
    if (!flags.test_path.empty()) config.test_path = flags.test_path;
    if (!flags.data_format.empty()) config.data_format = flags.data_format;
    if (flags.seed) config.train.seed = *flags.seed;
    if (flags.epochs_total) config.train.epochs_total = *flags.epochs_total;
    if (flags.epochs_nll_only) config.train.epochs_nll_only = *flags.epochs_nll_only;
    if (flags.learning_rate) config.train.learning_rate = *flags.learning_rate;
    if (flags.batch_size) config.train.batch_size = *flags.batch_size;
    if (flags.tau) config.train.tau = *flags.tau;
    if (flags.ablation) config.train.ablation = pess::ablation_from_name(*flags.ablation);
    if (flags.decode_max_new) config.train.decode_max_new = *flags.decode_max_new;
    if (flags.d_model) config.model.d_model = *flags.d_model;
    if (flags.n_layers) config.model.n_layers = *flags.n_layers;
    if (flags.n_heads) config.model.n_heads = *flags.n_heads;
    if (flags.ffn_dim) config.model.ffn_dim = *flags.ffn_dim;
    if (flags.max_len) config.model.max_len = *flags.max_len;
    if (flags.embedder_name) config.embedder_name = *flags.embedder_name;
    if (flags.embedder_dimension)
        config.embedder_options["dimension"] = std::to_string(*flags.embedder_dimension);
    if (flags.embedder_model_path)
        config.embedder_options["model-path"] = *flags.embedder_model_path;
    config.validate();
    return config;
}

std::string default_run_dir(std::uint64_t seed) {
    const char* home = std::getenv("PESS_HOME");
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", std::localtime(&t));
    fs::path root = home ? fs::path(home) : fs::path(".");
    return (root / "runs" / (std::string(stamp) + "-seed" + std::to_string(seed))).string();
}

std::vector<pess::Dialogue> load_dialogues(const std::string& path, const std::string& format) {
    return format == "esconv" ? pess::load_esconv(path) : pess::load_persona_chat(path);
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw pess::IoError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        std::string norm = pess::normalize_text(line);
        if (!norm.empty()) lines.push_back(std::move(norm));
    }
    return lines;
}

const pess::Dialogue& find_dialogue(const std::vector<pess::Dialogue>& dialogues,
                                    const std::string& id) {
    for (const auto& d : dialogues)
        if (d.id == id) return d;
    throw pess::ArgumentError("dialogue id '" + id + "' not found");
}

std::string join_with_space(const std::vector<std::string>& parts) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out.push_back(' ');
        out += parts[i];
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_make_corpus(int dialogues, int traits, std::uint64_t seed, const std::string& out_dir,
                    const std::string& format, std::uint64_t split_seed) {
    pess::ToyCorpus corpus = pess::make_toy_corpus(dialogues, traits, seed);
    pess::Splits splits = pess::split_examples(corpus.dialogues, {}, split_seed);

    fs::create_directories(out_dir);
    auto save = format == "esconv" ? pess::save_esconv : pess::save_persona_chat;
    save(splits.train, (fs::path(out_dir) / "train.jsonl").string());
    save(splits.valid, (fs::path(out_dir) / "valid.jsonl").string());
    save(splits.test, (fs::path(out_dir) / "test.jsonl").string());
    {
        std::ofstream g(fs::path(out_dir) / "grammar.json", std::ios::binary);
        if (!g) throw pess::IoError("cannot write grammar.json in " + out_dir);
        g << corpus.grammar.to_json() << "\n";
    }

    json summary{{"dialogues", dialogues},
                 {"traits", traits},
                 {"seed", seed},
                 {"format", format},
                 {"train", splits.train.size()},
                 {"valid", splits.valid.size()},
                 {"test", splits.test.size()},
                 {"out", out_dir}};
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_train_extractor(const CommonFlags& flags) {
    pess::AppConfig config = resolve_config(flags);
    if (config.train_path.empty() || config.valid_path.empty())
        throw pess::ConfigError("train-extractor needs data.train and data.valid paths");

    pess::Splits splits;
    splits.train = load_dialogues(config.train_path, config.data_format);
    splits.valid = load_dialogues(config.valid_path, config.data_format);
    if (!config.test_path.empty())
        splits.test = load_dialogues(config.test_path, config.data_format);

    auto embedder = pess::make_embedder(config.embedder_name, config.embedder_options);
    const std::string run_dir =
        flags.out_dir.empty() ? default_run_dir(config.train.seed) : flags.out_dir;
    std::cerr << "training extractor -> " << run_dir << "\n";
    pess::RunRecord record =
        pess::train_extractor(splits, config.model, config.train, *embedder, run_dir);
    std::cerr << "best epoch " << record.best_epoch << ", checkpoint " << record.best_checkpoint
              << "\n";
    std::cout << record.to_json() << "\n";
    return 0;
}

int cmd_train_generator(const CommonFlags& flags, const std::string& extractor_dir) {
    pess::AppConfig config = resolve_config(flags);
    if (config.train_path.empty() || config.valid_path.empty())
        throw pess::ConfigError("train-generator needs data.train and data.valid paths");

    pess::Splits splits;
    splits.train = load_dialogues(config.train_path, config.data_format);
    splits.valid = load_dialogues(config.valid_path, config.data_format);

    const std::string run_dir =
        flags.out_dir.empty() ? default_run_dir(config.train.seed) : flags.out_dir;
    std::cerr << "training generator -> " << run_dir << "\n";
    pess::RunRecord record =
        pess::train_generator(splits, extractor_dir, config.model, config.train, run_dir);
    std::cerr << "best epoch " << record.best_epoch << ", checkpoint " << record.best_checkpoint
              << "\n";
    std::cout << record.to_json() << "\n";
    return 0;
}

int cmd_extract(const std::string& checkpoint, const std::string& data_path,
                const std::string& format, const std::string& dialogue_id,
                const std::string& speaker, int max_new) {
    pess::Seq2SeqModel model = pess::load_checkpoint(checkpoint);
    const auto dialogues = load_dialogues(data_path, format);
    const pess::Dialogue& dialogue = find_dialogue(dialogues, dialogue_id);
    pess::Speaker s;
    if (speaker == "A") s = pess::Speaker::A;
    else if (speaker == "B") s = pess::Speaker::B;
    else throw pess::ArgumentError("speaker must be A or B");
    const auto persona = pess::extract_persona(model, dialogue, s, max_new);
    std::cout << json{{"persona", persona}}.dump() << "\n";
    return 0;
}

int cmd_respond(const std::string& generator_dir, const std::string& extractor_dir,
                const std::string& data_path, const std::string& format,
                const std::string& dialogue_id, int max_new) {
    pess::Seq2SeqModel generator = pess::load_checkpoint(generator_dir);
    pess::Seq2SeqModel extractor = pess::load_checkpoint(extractor_dir);
    const auto dialogues = load_dialogues(data_path, format);
    const pess::Dialogue& dialogue = find_dialogue(dialogues, dialogue_id);

    // History = prefix up to the last A turn.
    int last_a = -1;
    for (int i = 0; i < static_cast<int>(dialogue.utterances.size()); ++i)
        if (dialogue.utterances[static_cast<size_t>(i)].speaker == pess::Speaker::A) last_a = i;
    if (last_a < 0) throw pess::ArgumentError("dialogue has no A turn to respond to");
    std::vector<pess::Utterance> history(dialogue.utterances.begin(),
                                         dialogue.utterances.begin() + last_a + 1);

    const std::string response = pess::respond(generator, extractor, history, max_new);
    std::cout << json{{"dialogue_id", dialogue_id}, {"response", response}}.dump() << "\n";
    return 0;
}

int cmd_evaluate(const CommonFlags& flags, const std::string& kind,
                 const std::string& checkpoint, const std::string& extractor_dir,
                 const std::string& data_path, const std::string& out_path, int max_new) {
    pess::AppConfig config = resolve_config(flags);
    const std::string format = config.data_format;
    const auto dialogues = load_dialogues(data_path, format);
    auto embedder = pess::make_embedder(config.embedder_name, config.embedder_options);

    std::vector<std::string> candidates, references;
    std::vector<pess::ScoredSequence> scored;
    pess::Seq2SeqModel model = pess::load_checkpoint(checkpoint);

    if (kind == "extractor") {
        const auto examples = pess::extraction_examples(dialogues);
        if (examples.empty())
            throw pess::ArgumentError("no extraction examples in " + data_path);
        for (const auto& ex : examples) {
            const auto source =
                pess::encode_source(model.vocab(), ex.source_utterances, model.config().max_len);
            auto [sentences, unused] =
                pess::decode_persona(model, source, pess::DecodeMode::greedy, max_new);
            candidates.push_back(join_with_space(sentences));
            references.push_back(join_with_space(ex.target_persona.sentences));
            scored.push_back(
                {source, pess::serialize_persona(model.vocab(), ex.target_persona.sentences)});
        }
    } else if (kind == "generator") {
        if (extractor_dir.empty())
            throw pess::ConfigError("evaluate --kind generator needs --extractor");
        pess::Seq2SeqModel extractor = pess::load_checkpoint(extractor_dir);
        const auto examples = pess::generation_examples(dialogues);
        if (examples.empty())
            throw pess::ArgumentError("no generation examples in " + data_path);
        for (const auto& ex : examples) {
            const std::string response =
                pess::respond(model, extractor, ex.history, max_new);
            candidates.push_back(response);
            references.push_back(pess::normalize_text(ex.target_response));

            pess::Dialogue scratch;
            scratch.id = ex.dialogue_id;
            scratch.utterances = ex.history;
            const auto persona =
                pess::extract_persona(extractor, scratch, pess::Speaker::A, max_new);
            std::vector<std::string> history_norm;
            for (const auto& u : ex.history)
                history_norm.push_back(pess::normalize_text(u.text));
            auto source = pess::build_generator_source(model.vocab(), persona, history_norm,
                                                       model.config().max_len);
            auto target = model.vocab().encode_words(pess::normalize_text(ex.target_response));
            target.push_back(pess::Vocab::eos_id);
            scored.push_back({std::move(source), std::move(target)});
        }
    } else {
        throw pess::ArgumentError("evaluate --kind must be extractor or generator");
    }

    pess::MetricReport report = pess::evaluate_text_metrics(candidates, references, *embedder);
    report.values["ppl"] = pess::perplexity(model, scored);

    const std::string payload = report.to_json();
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw pess::IoError("cannot write " + out_path);
        out << payload << "\n";
        std::cerr << "wrote " << out_path << "\n";
    }
    std::cout << payload << "\n";
    return 0;
}

int cmd_match_debug(const CommonFlags& flags, const std::string& gt_path,
                    const std::string& gen_path, std::optional<double> tau_flag) {
    pess::AppConfig config = resolve_config(flags);
    auto embedder = pess::make_embedder(config.embedder_name, config.embedder_options);
    const auto gt = read_lines(gt_path);
    const auto gen = read_lines(gen_path);
    const double tau = tau_flag.value_or(pess::default_tau());
    const auto sim = pess::build_similarity_matrix(gt, gen, *embedder);
    const auto result = pess::match(sim, tau);
    std::cout << result.to_json() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"persona extraction through semantic similarity"};
    app.require_subcommand(1);

    // make-corpus
    auto* make_corpus = app.add_subcommand("make-corpus", "synthesize a toy corpus");
    int mc_dialogues = 500, mc_traits = 8;
    std::uint64_t mc_seed = 0, mc_split_seed = 0;
    std::string mc_out, mc_format = "persona-chat";
    make_corpus->add_option("--dialogues", mc_dialogues, "number of dialogues");
    make_corpus->add_option("--traits", mc_traits, "number of traits to draw from");
    make_corpus->add_option("--seed", mc_seed, "corpus seed");
    make_corpus->add_option("--split-seed", mc_split_seed, "train/valid/test split seed");
    make_corpus->add_option("--out", mc_out, "output directory")->required();
    make_corpus->add_option("--format", mc_format, "persona-chat or esconv");

    // train-extractor
    auto* train_ex = app.add_subcommand("train-extractor", "train the persona extractor");
    CommonFlags tef;
    add_common_options(train_ex, tef, /*with_data=*/true);
    train_ex->add_option("--out", tef.out_dir, "run directory");

    // train-generator
    auto* train_gen = app.add_subcommand("train-generator", "train the response generator");
    CommonFlags tgf;
    std::string tg_extractor;
    add_common_options(train_gen, tgf, /*with_data=*/true);
    train_gen->add_option("--out", tgf.out_dir, "run directory");
    train_gen->add_option("--extractor", tg_extractor, "frozen extractor checkpoint")->required();

    // extract
    auto* extract = app.add_subcommand("extract", "infer a speaker's persona from a dialogue");
    std::string ex_ckpt, ex_data, ex_format = "persona-chat", ex_id, ex_speaker = "A";
    int ex_max_new = 64;
    extract->add_option("--checkpoint", ex_ckpt, "extractor checkpoint")->required();
    extract->add_option("--data", ex_data, "dialogue JSONL")->required();
    extract->add_option("--format", ex_format, "persona-chat or esconv");
    extract->add_option("--dialogue-id", ex_id, "dialogue id")->required();
    extract->add_option("--speaker", ex_speaker, "A or B");
    extract->add_option("--max-new", ex_max_new, "decode budget");

    // respond
    auto* respond_cmd = app.add_subcommand("respond", "generate the next B response");
    std::string re_gen, re_ext, re_data, re_format = "esconv", re_id;
    int re_max_new = 48;
    respond_cmd->add_option("--generator", re_gen, "generator checkpoint")->required();
    respond_cmd->add_option("--extractor", re_ext, "extractor checkpoint")->required();
    respond_cmd->add_option("--data", re_data, "dialogue JSONL")->required();
    respond_cmd->add_option("--format", re_format, "persona-chat or esconv");
    respond_cmd->add_option("--dialogue-id", re_id, "dialogue id")->required();
    respond_cmd->add_option("--max-new", re_max_new, "decode budget");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "run the automatic metric suite");
    CommonFlags evf;
    std::string ev_kind = "extractor", ev_ckpt, ev_extractor, ev_data, ev_out;
    int ev_max_new = 64;
    add_common_options(evaluate, evf, /*with_data=*/true);
    evaluate->add_option("--kind", ev_kind, "extractor or generator");
    evaluate->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
    evaluate->add_option("--extractor", ev_extractor, "extractor checkpoint (generator mode)");
    evaluate->add_option("--data", ev_data, "evaluation JSONL")->required();
    evaluate->add_option("--out", ev_out, "metrics.json path");
    evaluate->add_option("--max-new", ev_max_new, "decode budget");

    // match-debug
    auto* match_debug = app.add_subcommand("match-debug", "dump a MatchResult as JSON");
    CommonFlags mdf;
    std::string md_gt, md_gen;
    std::optional<double> md_tau;
    add_config_and_embedder_options(match_debug, mdf);
    match_debug->add_option("--gt", md_gt, "ground-truth sentences, one per line")->required();
    match_debug->add_option("--gen", md_gen, "generated sentences, one per line")->required();
    match_debug->add_option("--tau", md_tau, "similarity threshold");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (make_corpus->parsed())
            return cmd_make_corpus(mc_dialogues, mc_traits, mc_seed, mc_out, mc_format,
                                   mc_split_seed);
        if (train_ex->parsed()) return cmd_train_extractor(tef);
        if (train_gen->parsed()) return cmd_train_generator(tgf, tg_extractor);
        if (extract->parsed())
            return cmd_extract(ex_ckpt, ex_data, ex_format, ex_id, ex_speaker, ex_max_new);
        if (respond_cmd->parsed())
            return cmd_respond(re_gen, re_ext, re_data, re_format, re_id, re_max_new);
        if (evaluate->parsed())
            return cmd_evaluate(evf, ev_kind, ev_ckpt, ev_extractor, ev_data, ev_out, ev_max_new);
        if (match_debug->parsed()) return cmd_match_debug(mdf, md_gt, md_gen, md_tau);
    } catch (const pess::ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const pess::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
