#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "pess/autograd.hpp"
#include "pess/rng.hpp"

namespace pess {

// Word-level vocabulary. Ids 0-4 are the fixed special tokens, 5 is the
// unknown-word token, regular words follow in sorted order.
class Vocab {
public:
    static constexpr int pad_id = 0;
    static constexpr int bos_id = 1;
    static constexpr int eos_id = 2;
    static constexpr int sep_id = 3;
    static constexpr int persona_sep_id = 4;
    static constexpr int unk_id = 5;
    static constexpr int num_special = 6;

    Vocab();

    // Builds from normalized training text only.
    static Vocab build(const std::vector<std::string>& normalized_texts);

    int size() const { return static_cast<int>(tokens_.size()); }
    int id_of(const std::string& token) const;
    const std::string& token_of(int id) const;
    static bool is_special(int id) { return id < num_special; }

    std::vector<int> encode_words(const std::string& normalized_text) const;
    std::string decode_tokens(const std::vector<int>& ids) const;  // literal, specials included

    void save(const std::string& path) const;  // one token per line
    static Vocab load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;

    void index_tokens();
};

struct ModelConfig {
    int d_model = 128;
    int n_layers = 2;
    int n_heads = 4;
    int ffn_dim = 256;
    int max_len = 256;
    double dropout = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct NamedTensor {
    std::string name;
    ad::Mat* value;
    ad::Mat* grad;
};

// [BOS] u1 [SEP] u2 ... [EOS]; over-long sources drop oldest tokens first.
std::vector<int> encode_source(const Vocab& vocab, const std::vector<std::string>& utterances,
                               int max_len);

// w w w [PSEP] w w [PSEP] ... [EOS]
std::vector<int> serialize_persona(const Vocab& vocab, const std::vector<std::string>& sentences);

struct SentenceSpan {
    int begin = 0;  // token index into the target sequence, inclusive
    int end = 0;    // exclusive
};

// Spans of the word tokens of each persona sentence inside a serialized
// target; separator and EOS positions belong to no span.
std::vector<SentenceSpan> persona_sentence_spans(const std::vector<int>& target_tokens);

struct DecodeOutput {
    std::vector<int> token_ids;                     // emitted tokens, final EOS excluded
    std::string text;                               // literal detokenization
    std::vector<double> per_token_logprob;
    std::vector<std::vector<double>> decoder_reps;  // last decoder layer, one per token
};

enum class DecodeMode { greedy, sampled };

// Pre-LN transformer encoder-decoder over a shared token embedding.
class Seq2SeqModel {
public:
    enum class Init { random, zeros };

    Seq2SeqModel(ModelConfig config, Vocab vocab, Init init = Init::random);

    const ModelConfig& config() const { return config_; }
    const Vocab& vocab() const { return vocab_; }

    std::vector<NamedTensor> parameters();
    std::vector<NamedTensor> parameters() const;  // values usable, grads writable
    void zero_grads();
    size_t parameter_count() const;

    struct Pass {
        ad::NodeId logits;  // L x V, row t predicts target[t]
        ad::NodeId reps;    // L x d_model, row t is the state that predicts target[t]
    };

    // Teacher-forced pass. with_grad selects parameter leaves (gradients
    // accumulate on backward) vs constant leaves. Dropout applies only when
    // with_grad is true and config.dropout > 0.
    Pass teacher_forced(ad::Graph& g, const std::vector<int>& source,
                        const std::vector<int>& target, bool with_grad) const;

    DecodeOutput decode(const std::vector<int>& source, DecodeMode mode, int max_new,
                        std::uint64_t sample_seed = 0, double temperature = 1.0) const;

private:
    ModelConfig config_;
    Vocab vocab_;
    struct Tensor {
        std::string name;
        ad::Mat value;
        ad::Mat grad;
    };
    std::vector<Tensor> tensors_;
    std::unordered_map<std::string, size_t> tensor_index_;
    mutable Rng dropout_rng_;

    ad::Mat& tensor(const std::string& name);
    const ad::Mat& tensor(const std::string& name) const;
    void add_tensor(const std::string& name, int rows, int cols);
    void init_params(Init init);

    struct ParamLeaves;  // per-graph cache of parameter node ids
    ad::NodeId leaf(ad::Graph& g, ParamLeaves& leaves, const std::string& name,
                    bool with_grad) const;
    ad::NodeId encode_stack(ad::Graph& g, ParamLeaves& leaves, const std::vector<int>& source,
                            bool with_grad) const;
    ad::NodeId decode_stack(ad::Graph& g, ParamLeaves& leaves, ad::NodeId enc_out,
                            const std::vector<int>& decoder_input, bool with_grad) const;
    ad::NodeId attention(ad::Graph& g, ParamLeaves& leaves, const std::string& prefix,
                         ad::NodeId queries_in, ad::NodeId keys_in, bool causal,
                         bool with_grad) const;
    ad::NodeId maybe_dropout(ad::Graph& g, ad::NodeId x, bool with_grad) const;

    friend void save_checkpoint(const Seq2SeqModel& model, const std::string& dir);
};

// Per-token mean by default; Reduction::sum gives the paper-style summed form.
double nll(const Seq2SeqModel& model, const std::vector<int>& source,
           const std::vector<int>& target,
           ad::Graph::Reduction reduction = ad::Graph::Reduction::mean);

// Splits decoded output into persona sentences on the persona separator.
std::pair<std::vector<std::string>, DecodeOutput> decode_persona(const Seq2SeqModel& model,
                                                                 const std::vector<int>& source,
                                                                 DecodeMode mode, int max_new);

struct SentenceRep {
    std::vector<double> vector;
    SentenceSpan sentence_span;
};

// Arithmetic mean of the token vectors in each span. Spans must be
// non-empty, in range and pairwise disjoint.
std::vector<SentenceRep> sentence_reps(const std::vector<std::vector<double>>& token_reps,
                                       const std::vector<SentenceSpan>& spans);

// Graph-side variant used by the differentiable losses.
std::vector<ad::NodeId> sentence_rep_nodes(ad::Graph& g, ad::NodeId reps,
                                           const std::vector<SentenceSpan>& spans);

// ---------------------------------------------------------------------------
// Checkpoints: directory with VERSION, config.json, vocab.txt, manifest.json
// and params.bin (raw doubles in manifest order).

void save_checkpoint(const Seq2SeqModel& model, const std::string& dir);
Seq2SeqModel load_checkpoint(const std::string& dir);
std::uint64_t checkpoint_fingerprint(const std::string& dir);

}  // namespace pess
