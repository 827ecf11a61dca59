#pragma once

#include <map>
#include <string>
#include <vector>

#include "pess/corpus.hpp"
#include "pess/embedder.hpp"
#include "pess/losses.hpp"
#include "pess/seq2seq.hpp"

namespace pess {

enum class Ablation { full, no_complete, no_consist, nll_only };

const char* ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& name);

struct TrainConfig {
    int epochs_total = 8;
    int epochs_nll_only = 4;  // NLL-only warmup phase
    double learning_rate = 3e-4;
    double weight_decay = 0.01;
    int batch_size = 8;
    double tau = 0.9;
    LossWeights loss_weights;
    Ablation ablation = Ablation::full;
    std::uint64_t seed = 0;
    int decode_max_new = 64;
    bool freeze_extractor = true;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    std::map<std::string, double> val_metrics;
    double wall_seconds = 0.0;
};

struct RunRecord {
    std::string config_json;
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    std::string best_checkpoint;
    std::string final_checkpoint;
    std::string training_log_path;

    std::string to_json() const;
    // Serialization of everything except wall-clock timings; byte-equal
    // across reruns of the same (config, seed).
    std::string metrics_fingerprint() const;
};

// Decoupled-weight-decay Adam over a model's named tensors.
class AdamW {
public:
    AdamW(std::vector<NamedTensor> params, double lr, double weight_decay,
          double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    // Applies one update from the accumulated gradients scaled by
    // `grad_scale` (1/batch for mean-of-example losses), then clears them.
    void step(double grad_scale = 1.0);

private:
    std::vector<NamedTensor> params_;
    std::vector<ad::Mat> m_;
    std::vector<ad::Mat> v_;
    double lr_, wd_, beta1_, beta2_, eps_;
    long t_ = 0;
};

// Two-phase extractor training: NLL-only for the first epochs_nll_only
// epochs, then the configured ablation of the full objective. Keeps the
// best checkpoint by validation ROUGE-L. Writes run.json,
// training_log.jsonl and checkpoints/{best,final} under run_dir.
RunRecord train_extractor(const Splits& splits, const ModelConfig& model_config,
                          const TrainConfig& config, const Embedder& embedder,
                          const std::string& run_dir);

// Greedy persona inference for one speaker of a dialogue.
std::vector<std::string> extract_persona(const Seq2SeqModel& extractor, const Dialogue& dialogue,
                                         Speaker speaker, int max_new = 64);

// Response-generator training with personas precomputed by a frozen
// extractor checkpoint. Model selection by validation perplexity.
RunRecord train_generator(const Splits& splits, const std::string& extractor_checkpoint,
                          const ModelConfig& model_config, const TrainConfig& config,
                          const std::string& run_dir);

// persona [PSEP] ... [PSEP] turn [SEP] turn ... [EOS]
std::vector<int> build_generator_source(const Vocab& vocab,
                                        const std::vector<std::string>& persona_sentences,
                                        const std::vector<std::string>& history_texts,
                                        int max_len);

// Greedy response for a history that ends with an A turn.
std::string respond(const Seq2SeqModel& generator, const Seq2SeqModel& extractor,
                    const std::vector<Utterance>& history, int max_new = 48);

}  // namespace pess
