#include "pess/seq2seq.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pess/errors.hpp"
#include "pess/text.hpp"

namespace pess {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Vocab

namespace {
const std::vector<std::string>& special_surface_forms() {
    static const std::vector<std::string> forms = {"<pad>", "<bos>", "<eos>",
                                                   "<sep>", "<psep>", "<unk>"};
    return forms;
}

bool looks_special(const std::string& token) {
    return token.size() >= 2 && token.front() == '<' && token.back() == '>';
}
}  // namespace

Vocab::Vocab() : tokens_(special_surface_forms()) { index_tokens(); }

void Vocab::index_tokens() {
    ids_.clear();
    for (size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = static_cast<int>(i);
}

Vocab Vocab::build(const std::vector<std::string>& normalized_texts) {
    std::set<std::string> words;
    for (const auto& text : normalized_texts)
        for (auto& w : split_tokens(text))
            if (!looks_special(w)) words.insert(std::move(w));
    Vocab v;
    v.tokens_.insert(v.tokens_.end(), words.begin(), words.end());
    v.index_tokens();
    return v;
}

int Vocab::id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? unk_id : it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || id >= size()) throw ArgumentError("token id out of range");
    return tokens_[static_cast<size_t>(id)];
}

std::vector<int> Vocab::encode_words(const std::string& normalized_text) const {
    std::vector<int> out;
    for (const auto& w : split_tokens(normalized_text)) out.push_back(id_of(w));
    return out;
}

std::string Vocab::decode_tokens(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out.push_back(' ');
        out += token_of(ids[i]);
    }
    return out;
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocab file: " + path);
    for (const auto& t : tokens_) out << t << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocab file: " + path);
    Vocab v;
    v.tokens_.clear();
    std::string line;
    while (std::getline(in, line)) v.tokens_.push_back(line);
    if (v.tokens_.size() < num_special)
        throw SchemaError("vocab file too short: " + path);
    for (int i = 0; i < num_special; ++i)
        if (v.tokens_[static_cast<size_t>(i)] != special_surface_forms()[static_cast<size_t>(i)])
            throw SchemaError("vocab file has wrong special token at line " + std::to_string(i));
    v.index_tokens();
    return v;
}

// ---------------------------------------------------------------------------
// Sequence construction

void ModelConfig::validate() const {
    if (d_model < 2 || n_layers < 1 || n_heads < 1 || ffn_dim < 1 || max_len < 4)
        throw ArgumentError("model config values out of range");
    if (d_model % n_heads != 0) throw ArgumentError("d_model must be divisible by n_heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ArgumentError("dropout must be in [0, 1)");
}

std::vector<int> encode_source(const Vocab& vocab, const std::vector<std::string>& utterances,
                               int max_len) {
    if (utterances.empty()) throw ArgumentError("encode_source: no utterances");
    std::vector<int> ids{Vocab::bos_id};
    for (size_t i = 0; i < utterances.size(); ++i) {
        if (i) ids.push_back(Vocab::sep_id);
        for (int id : vocab.encode_words(utterances[i])) ids.push_back(id);
    }
    ids.push_back(Vocab::eos_id);
    if (static_cast<int>(ids.size()) > max_len) {
        // keep the newest tokens
        std::vector<int> kept{Vocab::bos_id};
        kept.insert(kept.end(), ids.end() - (max_len - 1), ids.end());
        ids = std::move(kept);
    }
    return ids;
}

std::vector<int> serialize_persona(const Vocab& vocab, const std::vector<std::string>& sentences) {
    if (sentences.empty()) throw ArgumentError("serialize_persona: no sentences");
    std::vector<int> ids;
    for (size_t i = 0; i < sentences.size(); ++i) {
        if (i) ids.push_back(Vocab::persona_sep_id);
        for (int id : vocab.encode_words(sentences[i])) ids.push_back(id);
    }
    ids.push_back(Vocab::eos_id);
    return ids;
}

std::vector<SentenceSpan> persona_sentence_spans(const std::vector<int>& target_tokens) {
    std::vector<SentenceSpan> spans;
    int begin = -1;
    for (int i = 0; i < static_cast<int>(target_tokens.size()); ++i) {
        if (Vocab::is_special(target_tokens[static_cast<size_t>(i)])) {
            if (begin >= 0) spans.push_back({begin, i});
            begin = -1;
        } else if (begin < 0) {
            begin = i;
        }
    }
    if (begin >= 0) spans.push_back({begin, static_cast<int>(target_tokens.size())});
    return spans;
}

// ---------------------------------------------------------------------------
// Model

struct Seq2SeqModel::ParamLeaves {
    std::unordered_map<std::string, ad::NodeId> ids;
};

Seq2SeqModel::Seq2SeqModel(ModelConfig config, Vocab vocab, Init init)
    : config_(config), vocab_(std::move(vocab)), dropout_rng_(config.seed ^ 0x9e3779b97f4a7c15ull) {
    config_.validate();
    const int d = config_.d_model;
    const int v = vocab_.size();

    add_tensor("emb.tok", v, d);
    add_tensor("emb.pos", config_.max_len, d);
    for (int l = 0; l < config_.n_layers; ++l) {
        const std::string p = "enc." + std::to_string(l) + ".";
        add_tensor(p + "ln1.g", 1, d);
        add_tensor(p + "ln1.b", 1, d);
        for (const char* w : {"att.wq", "att.wk", "att.wv", "att.wo"}) add_tensor(p + w, d, d);
        for (const char* b : {"att.bq", "att.bk", "att.bv", "att.bo"}) add_tensor(p + b, 1, d);
        add_tensor(p + "ln2.g", 1, d);
        add_tensor(p + "ln2.b", 1, d);
        add_tensor(p + "ffn.w1", d, config_.ffn_dim);
        add_tensor(p + "ffn.b1", 1, config_.ffn_dim);
        add_tensor(p + "ffn.w2", config_.ffn_dim, d);
        add_tensor(p + "ffn.b2", 1, d);
    }
    for (int l = 0; l < config_.n_layers; ++l) {
        const std::string p = "dec." + std::to_string(l) + ".";
        add_tensor(p + "ln1.g", 1, d);
        add_tensor(p + "ln1.b", 1, d);
        for (const char* w : {"self.wq", "self.wk", "self.wv", "self.wo"}) add_tensor(p + w, d, d);
        for (const char* b : {"self.bq", "self.bk", "self.bv", "self.bo"}) add_tensor(p + b, 1, d);
        add_tensor(p + "ln2.g", 1, d);
        add_tensor(p + "ln2.b", 1, d);
        for (const char* w : {"cross.wq", "cross.wk", "cross.wv", "cross.wo"})
            add_tensor(p + w, d, d);
        for (const char* b : {"cross.bq", "cross.bk", "cross.bv", "cross.bo"})
            add_tensor(p + b, 1, d);
        add_tensor(p + "ln3.g", 1, d);
        add_tensor(p + "ln3.b", 1, d);
        add_tensor(p + "ffn.w1", d, config_.ffn_dim);
        add_tensor(p + "ffn.b1", 1, config_.ffn_dim);
        add_tensor(p + "ffn.w2", config_.ffn_dim, d);
        add_tensor(p + "ffn.b2", 1, d);
    }
    add_tensor("final.enc_ln.g", 1, d);
    add_tensor("final.enc_ln.b", 1, d);
    add_tensor("final.dec_ln.g", 1, d);
    add_tensor("final.dec_ln.b", 1, d);
    add_tensor("out.w", d, v);
    add_tensor("out.b", 1, v);

    init_params(init);
}

void Seq2SeqModel::add_tensor(const std::string& name, int rows, int cols) {
    tensor_index_[name] = tensors_.size();
    tensors_.push_back({name, ad::Mat(rows, cols), ad::Mat(rows, cols)});
}

void Seq2SeqModel::init_params(Init init) {
    if (init == Init::zeros) return;
    Rng rng(config_.seed);
    const double std_dev = 0.08;
    for (auto& t : tensors_) {
        if (t.name.ends_with(".g")) {
            t.value.fill(1.0);  // layer-norm gains
        } else if (t.name.ends_with(".b") || t.name.ends_with("bq") || t.name.ends_with("bk") ||
                   t.name.ends_with("bv") || t.name.ends_with("bo") || t.name.ends_with("b1") ||
                   t.name.ends_with("b2")) {
            t.value.fill(0.0);
        } else {
            for (double& x : t.value.a) x = rng.normal(0.0, std_dev);
        }
    }
}

ad::Mat& Seq2SeqModel::tensor(const std::string& name) {
    return tensors_[tensor_index_.at(name)].value;
}

const ad::Mat& Seq2SeqModel::tensor(const std::string& name) const {
    return tensors_[tensor_index_.at(name)].value;
}

std::vector<NamedTensor> Seq2SeqModel::parameters() {
    std::vector<NamedTensor> out;
    out.reserve(tensors_.size());
    for (auto& t : tensors_) out.push_back({t.name, &t.value, &t.grad});
    return out;
}

std::vector<NamedTensor> Seq2SeqModel::parameters() const {
    std::vector<NamedTensor> out;
    out.reserve(tensors_.size());
    for (const auto& t : tensors_)
        out.push_back({t.name, const_cast<ad::Mat*>(&t.value), const_cast<ad::Mat*>(&t.grad)});
    return out;
}

void Seq2SeqModel::zero_grads() {
    for (auto& t : tensors_) t.grad.fill(0.0);
}

size_t Seq2SeqModel::parameter_count() const {
    size_t n = 0;
    for (const auto& t : tensors_) n += t.value.size();
    return n;
}

ad::NodeId Seq2SeqModel::leaf(ad::Graph& g, ParamLeaves& leaves, const std::string& name,
                              bool with_grad) const {
    auto it = leaves.ids.find(name);
    if (it != leaves.ids.end()) return it->second;
    const size_t idx = tensor_index_.at(name);
    const Tensor& t = tensors_[idx];
    ad::NodeId id = with_grad ? g.param(&t.value, const_cast<ad::Mat*>(&t.grad))
                              : g.input_ref(&t.value);
    leaves.ids[name] = id;
    return id;
}

ad::NodeId Seq2SeqModel::maybe_dropout(ad::Graph& g, ad::NodeId x, bool with_grad) const {
    if (!with_grad || config_.dropout <= 0.0) return x;
    const ad::Mat& xv = g.value(x);
    ad::Mat mask(xv.rows, xv.cols);
    const double keep = 1.0 - config_.dropout;
    for (double& m : mask.a) m = (dropout_rng_.uniform01() < keep) ? 1.0 / keep : 0.0;
    return g.elementwise_mul(x, g.input(std::move(mask)));
}

ad::NodeId Seq2SeqModel::attention(ad::Graph& g, ParamLeaves& leaves, const std::string& prefix,
                                   ad::NodeId queries_in, ad::NodeId keys_in, bool causal,
                                   bool with_grad) const {
    const int d = config_.d_model;
    const int heads = config_.n_heads;
    const int dh = d / heads;

    ad::NodeId q = g.add_rowvec(g.matmul(queries_in, leaf(g, leaves, prefix + "wq", with_grad)),
                                leaf(g, leaves, prefix + "bq", with_grad));
    ad::NodeId k = g.add_rowvec(g.matmul(keys_in, leaf(g, leaves, prefix + "wk", with_grad)),
                                leaf(g, leaves, prefix + "bk", with_grad));
    ad::NodeId v = g.add_rowvec(g.matmul(keys_in, leaf(g, leaves, prefix + "wv", with_grad)),
                                leaf(g, leaves, prefix + "bv", with_grad));

    const int lq = g.value(q).rows;
    const int lk = g.value(k).rows;

    ad::NodeId mask = -1;
    if (causal) {
        ad::Mat m(lq, lk);
        for (int i = 0; i < lq; ++i)
            for (int j = 0; j < lk; ++j)
                if (j > i) m.at(i, j) = -1e30;
        mask = g.input(std::move(m));
    }

    std::vector<ad::NodeId> head_outputs;
    head_outputs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        ad::NodeId qh = g.slice_cols(q, h * dh, (h + 1) * dh);
        ad::NodeId kh = g.slice_cols(k, h * dh, (h + 1) * dh);
        ad::NodeId vh = g.slice_cols(v, h * dh, (h + 1) * dh);
        ad::NodeId scores = g.scale(g.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (causal) scores = g.add(scores, mask);
        ad::NodeId weights = g.softmax_rows(scores);
        head_outputs.push_back(g.matmul(weights, vh));
    }
    ad::NodeId merged = heads == 1 ? head_outputs[0] : g.concat_cols(head_outputs);
    ad::NodeId out = g.add_rowvec(g.matmul(merged, leaf(g, leaves, prefix + "wo", with_grad)),
                                  leaf(g, leaves, prefix + "bo", with_grad));
    return maybe_dropout(g, out, with_grad);
}

ad::NodeId Seq2SeqModel::encode_stack(ad::Graph& g, ParamLeaves& leaves,
                                      const std::vector<int>& source, bool with_grad) const {
    if (source.empty()) throw ArgumentError("encode_stack: empty source");
    if (static_cast<int>(source.size()) > config_.max_len)
        throw ArgumentError("encode_stack: source exceeds max_len");

    std::vector<int> positions(source.size());
    for (size_t i = 0; i < source.size(); ++i) positions[i] = static_cast<int>(i);

    ad::NodeId x = g.add(g.embedding_rows(leaf(g, leaves, "emb.tok", with_grad), source),
                         g.embedding_rows(leaf(g, leaves, "emb.pos", with_grad), positions));
    x = maybe_dropout(g, x, with_grad);

    for (int l = 0; l < config_.n_layers; ++l) {
        const std::string p = "enc." + std::to_string(l) + ".";
        ad::NodeId h = g.layer_norm_rows(x, leaf(g, leaves, p + "ln1.g", with_grad),
                                         leaf(g, leaves, p + "ln1.b", with_grad));
        x = g.add(x, attention(g, leaves, p + "att.", h, h, /*causal=*/false, with_grad));
        ad::NodeId h2 = g.layer_norm_rows(x, leaf(g, leaves, p + "ln2.g", with_grad),
                                          leaf(g, leaves, p + "ln2.b", with_grad));
        ad::NodeId f = g.add_rowvec(
            g.matmul(g.relu(g.add_rowvec(g.matmul(h2, leaf(g, leaves, p + "ffn.w1", with_grad)),
                                         leaf(g, leaves, p + "ffn.b1", with_grad))),
                     leaf(g, leaves, p + "ffn.w2", with_grad)),
            leaf(g, leaves, p + "ffn.b2", with_grad));
        x = g.add(x, maybe_dropout(g, f, with_grad));
    }
    return g.layer_norm_rows(x, leaf(g, leaves, "final.enc_ln.g", with_grad),
                             leaf(g, leaves, "final.enc_ln.b", with_grad));
}

ad::NodeId Seq2SeqModel::decode_stack(ad::Graph& g, ParamLeaves& leaves, ad::NodeId enc_out,
                                      const std::vector<int>& decoder_input,
                                      bool with_grad) const {
    if (decoder_input.empty()) throw ArgumentError("decode_stack: empty input");
    if (static_cast<int>(decoder_input.size()) > config_.max_len)
        throw ArgumentError("decode_stack: target exceeds max_len");

    std::vector<int> positions(decoder_input.size());
    for (size_t i = 0; i < decoder_input.size(); ++i) positions[i] = static_cast<int>(i);

    ad::NodeId x = g.add(g.embedding_rows(leaf(g, leaves, "emb.tok", with_grad), decoder_input),
                         g.embedding_rows(leaf(g, leaves, "emb.pos", with_grad), positions));
    x = maybe_dropout(g, x, with_grad);

    for (int l = 0; l < config_.n_layers; ++l) {
        const std::string p = "dec." + std::to_string(l) + ".";
        ad::NodeId h = g.layer_norm_rows(x, leaf(g, leaves, p + "ln1.g", with_grad),
                                         leaf(g, leaves, p + "ln1.b", with_grad));
        x = g.add(x, attention(g, leaves, p + "self.", h, h, /*causal=*/true, with_grad));
        ad::NodeId h2 = g.layer_norm_rows(x, leaf(g, leaves, p + "ln2.g", with_grad),
                                          leaf(g, leaves, p + "ln2.b", with_grad));
        x = g.add(x, attention(g, leaves, p + "cross.", h2, enc_out, /*causal=*/false, with_grad));
        ad::NodeId h3 = g.layer_norm_rows(x, leaf(g, leaves, p + "ln3.g", with_grad),
                                          leaf(g, leaves, p + "ln3.b", with_grad));
        ad::NodeId f = g.add_rowvec(
            g.matmul(g.relu(g.add_rowvec(g.matmul(h3, leaf(g, leaves, p + "ffn.w1", with_grad)),
                                         leaf(g, leaves, p + "ffn.b1", with_grad))),
                     leaf(g, leaves, p + "ffn.w2", with_grad)),
            leaf(g, leaves, p + "ffn.b2", with_grad));
        x = g.add(x, maybe_dropout(g, f, with_grad));
    }
    return g.layer_norm_rows(x, leaf(g, leaves, "final.dec_ln.g", with_grad),
                             leaf(g, leaves, "final.dec_ln.b", with_grad));
}

Seq2SeqModel::Pass Seq2SeqModel::teacher_forced(ad::Graph& g, const std::vector<int>& source,
                                                const std::vector<int>& target,
                                                bool with_grad) const {
    if (target.empty()) throw ArgumentError("teacher_forced: empty target");
    ParamLeaves leaves;
    ad::NodeId enc = encode_stack(g, leaves, source, with_grad);

    std::vector<int> decoder_input;
    decoder_input.reserve(target.size());
    decoder_input.push_back(Vocab::bos_id);
    decoder_input.insert(decoder_input.end(), target.begin(), target.end() - 1);

    ad::NodeId reps = decode_stack(g, leaves, enc, decoder_input, with_grad);
    ad::NodeId logits = g.add_rowvec(g.matmul(reps, leaf(g, leaves, "out.w", with_grad)),
                                     leaf(g, leaves, "out.b", with_grad));
    return {logits, reps};
}

DecodeOutput Seq2SeqModel::decode(const std::vector<int>& source, DecodeMode mode, int max_new,
                                  std::uint64_t sample_seed, double temperature) const {
    if (max_new < 1) throw ArgumentError("decode: max_new must be >= 1");
    if (temperature <= 0.0) throw ArgumentError("decode: temperature must be positive");

    // Encoder output is fixed for the whole decode; compute it once.
    ad::Mat enc_value;
    {
        ad::Graph g;
        ParamLeaves leaves;
        ad::NodeId enc = encode_stack(g, leaves, source, /*with_grad=*/false);
        enc_value = g.value(enc);
    }

    Rng sampler(sample_seed);
    DecodeOutput out;
    const int budget = std::min(max_new, config_.max_len - 1);
    std::vector<int> decoder_input{Vocab::bos_id};

    for (int step = 0; step < budget; ++step) {
        ad::Graph g;
        ParamLeaves leaves;
        ad::NodeId enc = g.input_ref(&enc_value);
        ad::NodeId reps = decode_stack(g, leaves, enc, decoder_input, /*with_grad=*/false);
        ad::NodeId logits = g.add_rowvec(g.matmul(reps, leaf(g, leaves, "out.w", false)),
                                         leaf(g, leaves, "out.b", false));

        const ad::Mat& lv = g.value(logits);
        const int last = lv.rows - 1;
        const double* row = lv.row_ptr(last);
        const int v = lv.cols;

        // stable log-softmax of the last row
        double mx = row[0];
        for (int c = 1; c < v; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (int c = 0; c < v; ++c) z += std::exp(row[c] - mx);
        const double log_z = std::log(z) + mx;

        int chosen = 0;
        if (mode == DecodeMode::greedy) {
            for (int c = 1; c < v; ++c)
                if (row[c] > row[chosen]) chosen = c;
        } else {
            double tmx = row[0] / temperature;
            for (int c = 1; c < v; ++c) tmx = std::max(tmx, row[c] / temperature);
            double tz = 0.0;
            std::vector<double> p(static_cast<size_t>(v));
            for (int c = 0; c < v; ++c) {
                p[static_cast<size_t>(c)] = std::exp(row[c] / temperature - tmx);
                tz += p[static_cast<size_t>(c)];
            }
            double r = sampler.uniform01() * tz;
            double acc = 0.0;
            chosen = v - 1;
            for (int c = 0; c < v; ++c) {
                acc += p[static_cast<size_t>(c)];
                if (r < acc) {
                    chosen = c;
                    break;
                }
            }
        }

        if (chosen == Vocab::eos_id) break;

        out.token_ids.push_back(chosen);
        out.per_token_logprob.push_back(row[chosen] - log_z);
        const ad::Mat& rv = g.value(reps);
        out.decoder_reps.emplace_back(rv.row_ptr(last), rv.row_ptr(last) + rv.cols);
        decoder_input.push_back(chosen);
    }

    out.text = vocab_.decode_tokens(out.token_ids);
    return out;
}

// ---------------------------------------------------------------------------
// Free functions

double nll(const Seq2SeqModel& model, const std::vector<int>& source,
           const std::vector<int>& target, ad::Graph::Reduction reduction) {
    ad::Graph g;
    auto pass = model.teacher_forced(g, source, target, /*with_grad=*/false);
    ad::NodeId loss = g.cross_entropy(pass.logits, target, Vocab::pad_id, reduction);
    return g.value(loss).a[0];
}

std::pair<std::vector<std::string>, DecodeOutput> decode_persona(const Seq2SeqModel& model,
                                                                 const std::vector<int>& source,
                                                                 DecodeMode mode, int max_new) {
    DecodeOutput out = model.decode(source, mode, max_new);
    std::vector<std::string> sentences;
    std::vector<int> current;
    auto flush = [&]() {
        if (!current.empty()) {
            sentences.push_back(model.vocab().decode_tokens(current));
            current.clear();
        }
    };
    for (int id : out.token_ids) {
        if (Vocab::is_special(id))
            flush();
        else
            current.push_back(id);
    }
    flush();
    return {std::move(sentences), std::move(out)};
}

namespace {
void validate_spans(const std::vector<SentenceSpan>& spans, int n_rows) {
    std::vector<bool> used(static_cast<size_t>(n_rows), false);
    for (const auto& s : spans) {
        if (s.begin >= s.end) throw ArgumentError("sentence span is empty");
        if (s.begin < 0 || s.end > n_rows) throw ArgumentError("sentence span out of range");
        for (int i = s.begin; i < s.end; ++i) {
            if (used[static_cast<size_t>(i)]) throw ArgumentError("sentence spans overlap");
            used[static_cast<size_t>(i)] = true;
        }
    }
}
}  // namespace

std::vector<SentenceRep> sentence_reps(const std::vector<std::vector<double>>& token_reps,
                                       const std::vector<SentenceSpan>& spans) {
    validate_spans(spans, static_cast<int>(token_reps.size()));
    std::vector<SentenceRep> out;
    out.reserve(spans.size());
    for (const auto& s : spans) {
        const size_t d = token_reps[static_cast<size_t>(s.begin)].size();
        SentenceRep rep;
        rep.sentence_span = s;
        rep.vector.assign(d, 0.0);
        for (int i = s.begin; i < s.end; ++i)
            for (size_t c = 0; c < d; ++c) rep.vector[c] += token_reps[static_cast<size_t>(i)][c];
        for (double& x : rep.vector) x /= (s.end - s.begin);
        out.push_back(std::move(rep));
    }
    return out;
}

std::vector<ad::NodeId> sentence_rep_nodes(ad::Graph& g, ad::NodeId reps,
                                           const std::vector<SentenceSpan>& spans) {
    validate_spans(spans, g.value(reps).rows);
    std::vector<ad::NodeId> out;
    out.reserve(spans.size());
    for (const auto& s : spans) out.push_back(g.mean_rows(reps, s.begin, s.end));
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr const char* kCheckpointVersion = "pess-ckpt-1";
}

void save_checkpoint(const Seq2SeqModel& model, const std::string& dir) {
    fs::create_directories(dir);

    {
        std::ofstream v(fs::path(dir) / "VERSION", std::ios::binary);
        if (!v) throw IoError("cannot write VERSION in " + dir);
        v << kCheckpointVersion << "\n";
    }
    {
        const ModelConfig& c = model.config();
        json j = {{"d_model", c.d_model},   {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
                  {"ffn_dim", c.ffn_dim},   {"max_len", c.max_len},   {"dropout", c.dropout},
                  {"seed", c.seed}};
        std::ofstream out(fs::path(dir) / "config.json", std::ios::binary);
        if (!out) throw IoError("cannot write config.json in " + dir);
        out << j.dump(2) << "\n";
    }
    model.vocab().save((fs::path(dir) / "vocab.txt").string());

    json manifest;
    manifest["version"] = kCheckpointVersion;
    manifest["tensors"] = json::array();
    std::ofstream blob(fs::path(dir) / "params.bin", std::ios::binary);
    if (!blob) throw IoError("cannot write params.bin in " + dir);
    size_t offset = 0;
    for (const auto& t : model.tensors_) {
        manifest["tensors"].push_back({{"name", t.name},
                                       {"rows", t.value.rows},
                                       {"cols", t.value.cols},
                                       {"offset", offset}});
        blob.write(reinterpret_cast<const char*>(t.value.a.data()),
                   static_cast<std::streamsize>(t.value.size() * sizeof(double)));
        offset += t.value.size();
    }
    std::ofstream mout(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!mout) throw IoError("cannot write manifest.json in " + dir);
    mout << manifest.dump(2) << "\n";
}

Seq2SeqModel load_checkpoint(const std::string& dir) {
    {
        std::ifstream v(fs::path(dir) / "VERSION");
        if (!v) throw IoError("missing VERSION file in " + dir);
        std::string version;
        std::getline(v, version);
        if (version != kCheckpointVersion)
            throw SchemaError("unsupported checkpoint version '" + version + "' in " + dir);
    }

    json cfg;
    {
        std::ifstream in(fs::path(dir) / "config.json");
        if (!in) throw IoError("missing config.json in " + dir);
        in >> cfg;
    }
    ModelConfig config;
    config.d_model = cfg.at("d_model").get<int>();
    config.n_layers = cfg.at("n_layers").get<int>();
    config.n_heads = cfg.at("n_heads").get<int>();
    config.ffn_dim = cfg.at("ffn_dim").get<int>();
    config.max_len = cfg.at("max_len").get<int>();
    config.dropout = cfg.at("dropout").get<double>();
    config.seed = cfg.at("seed").get<std::uint64_t>();

    Vocab vocab = Vocab::load((fs::path(dir) / "vocab.txt").string());
    Seq2SeqModel model(config, std::move(vocab), Seq2SeqModel::Init::zeros);

    json manifest;
    {
        std::ifstream in(fs::path(dir) / "manifest.json");
        if (!in) throw IoError("missing manifest.json in " + dir);
        in >> manifest;
    }
    std::ifstream blob(fs::path(dir) / "params.bin", std::ios::binary);
    if (!blob) throw IoError("missing params.bin in " + dir);

    auto params = model.parameters();
    std::unordered_map<std::string, ad::Mat*> by_name;
    for (auto& p : params) by_name[p.name] = p.value;

    for (const auto& t : manifest.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw SchemaError("checkpoint tensor '" + name + "' not present in model");
        ad::Mat& m = *it->second;
        if (t.at("rows").get<int>() != m.rows || t.at("cols").get<int>() != m.cols)
            throw SchemaError("checkpoint tensor '" + name + "' has mismatched shape");
        blob.seekg(static_cast<std::streamoff>(t.at("offset").get<size_t>() * sizeof(double)));
        blob.read(reinterpret_cast<char*>(m.a.data()),
                  static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!blob) throw IoError("params.bin truncated for tensor '" + name + "'");
    }
    return model;
}

std::uint64_t checkpoint_fingerprint(const std::string& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& f : files) {
        h = fnv1a64(f.filename().string(), h);
        std::ifstream in(f, std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        h = fnv1a64(buf.str(), h);
    }
    return h;
}

}  // namespace pess
