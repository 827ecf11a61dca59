#include "pess/losses.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "pess/errors.hpp"

namespace pess {

std::string LossReport::to_json_line(long step) const {
    nlohmann::json j;
    j["step"] = step;
    j["l_nll"] = l_nll;
    j["l_complete"] = l_complete;
    j["l_consist"] = l_consist;
    j["l_total"] = l_total;
    j["counts"] = {{"m", counts.m}, {"k", counts.k}, {"p_con", counts.p_con},
                   {"p_miss", counts.p_miss}};
    return j.dump();
}

double completeness_loss(const Seq2SeqModel& model, const std::vector<int>& source,
                         const std::vector<std::string>& p_new,
                         ad::Graph::Reduction reduction) {
    if (p_new.empty()) throw ArgumentError("completeness_loss: P^new must be non-empty");
    return nll(model, source, serialize_persona(model.vocab(), p_new), reduction);
}

namespace {

void validate_consistent_indices(const std::vector<int>& consistent_indices, int k) {
    for (int i : consistent_indices)
        if (i < 0 || i >= k)
            throw ArgumentError("consistency_loss: consistent index " + std::to_string(i) +
                                " out of range for k=" + std::to_string(k));
}

}  // namespace

double consistency_loss(const std::vector<SentenceRep>& h_gen, const SentenceRep& h_gt,
                        const std::vector<int>& consistent_indices) {
    const int k = static_cast<int>(h_gen.size());
    validate_consistent_indices(consistent_indices, k);
    if (consistent_indices.empty()) return 0.0;

    std::vector<double> sims;
    sims.reserve(h_gen.size());
    for (const auto& h : h_gen) sims.push_back(cosine(h.vector, h_gt.vector));

    double mx = *std::max_element(sims.begin(), sims.end());
    double z = 0.0;
    for (double s : sims) z += std::exp(s - mx);
    const double lse = std::log(z) + mx;

    double loss = 0.0;
    for (int i : consistent_indices) loss += lse - sims[static_cast<size_t>(i)];
    return loss;
}

ad::NodeId consistency_loss_node(ad::Graph& g, const std::vector<ad::NodeId>& h_gen,
                                 ad::NodeId h_gt, const std::vector<int>& consistent_indices) {
    const int k = static_cast<int>(h_gen.size());
    validate_consistent_indices(consistent_indices, k);
    if (consistent_indices.empty()) return g.input(ad::Mat::scalar(0.0));

    std::vector<ad::NodeId> sims;
    sims.reserve(h_gen.size());
    double mx = -2.0;
    for (ad::NodeId h : h_gen) {
        ad::NodeId s = g.cosine_vec(h, h_gt);
        mx = std::max(mx, g.value(s).a[0]);
        sims.push_back(s);
    }

    // log-sum-exp with a constant shift; the shift drops out of gradients
    ad::NodeId sum = -1;
    for (ad::NodeId s : sims) {
        ad::NodeId term = g.exp(g.add_const(s, -mx));
        sum = (sum < 0) ? term : g.add(sum, term);
    }
    ad::NodeId lse = g.add_const(g.log(sum), mx);

    ad::NodeId loss = -1;
    for (int i : consistent_indices) {
        ad::NodeId term = g.sub(lse, sims[static_cast<size_t>(i)]);
        loss = (loss < 0) ? term : g.add(loss, term);
    }
    return loss;
}

ExtractorLossNodes extractor_loss_from_targets(ad::Graph& g, const Seq2SeqModel& model,
                                               const MatchedTargets& targets,
                                               const ExtractorLossOptions& options,
                                               bool with_grad) {
    ExtractorLossNodes nodes;

    // Pass 1: ground-truth persona -> L_nll and h_P.
    auto gt_pass = model.teacher_forced(g, targets.source, targets.gt_target, with_grad);
    nodes.l_nll =
        g.cross_entropy(gt_pass.logits, targets.gt_target, Vocab::pad_id, options.reduction);
    nodes.total = nodes.l_nll;

    // Pass 2: new target persona -> L_complete.
    if (options.with_complete) {
        auto new_pass = model.teacher_forced(g, targets.source, targets.new_target, with_grad);
        nodes.l_complete = g.cross_entropy(new_pass.logits, targets.new_target, Vocab::pad_id,
                                           options.reduction);
        nodes.total = g.add(nodes.total, g.scale(nodes.l_complete, options.weights.w_complete));
    }

    // Pass 3: teacher-force the generated persona to read off differentiable
    // sentence representations for the contrastive term.
    if (options.with_consist && !targets.consistent_indices.empty()) {
        auto gen_pass = model.teacher_forced(g, targets.source, targets.gen_target, with_grad);
        const std::vector<SentenceSpan> spans = persona_sentence_spans(targets.gen_target);
        std::vector<ad::NodeId> h_gen = sentence_rep_nodes(g, gen_pass.reps, spans);
        ad::NodeId h_gt = g.mean_rows(gt_pass.reps, 0, g.value(gt_pass.reps).rows);
        nodes.l_consist =
            consistency_loss_node(g, h_gen, h_gt, targets.consistent_indices);
        nodes.total = g.add(nodes.total, g.scale(nodes.l_consist, options.weights.w_consist));
    }
    return nodes;
}

ExtractorLossResult total_extractor_loss(ad::Graph& g, const Seq2SeqModel& model,
                                         const ExtractionExample& example,
                                         const Embedder& embedder,
                                         const ExtractorLossOptions& options,
                                         bool with_grad) {
    if (example.source_utterances.empty())
        throw ArgumentError("total_extractor_loss: example has no source utterances");
    if (example.target_persona.empty())
        throw ArgumentError("total_extractor_loss: example has no target persona");

    const Vocab& vocab = model.vocab();
    ExtractorLossResult result;
    result.targets.source = encode_source(vocab, example.source_utterances, model.config().max_len);
    result.targets.gt_target = serialize_persona(vocab, example.target_persona.sentences);

    // P^g via greedy decode (deterministic); no gradients flow through the
    // discrete decode itself.
    auto [generated, decode_out] =
        decode_persona(model, result.targets.source, DecodeMode::greedy, options.decode_max_new);
    result.generated = generated;

    SimilarityMatrix sim =
        build_similarity_matrix(example.target_persona.sentences, generated, embedder);
    result.match = match(sim, options.tau);

    result.report.counts.m = static_cast<int>(example.target_persona.sentences.size());
    result.report.counts.k = static_cast<int>(generated.size());
    result.report.counts.p_miss = static_cast<int>(result.match.missing_set.size());

    std::set<int> consistent_gen;
    for (const auto& v : result.match.verdicts)
        if (v.consistent) consistent_gen.insert(*v.best_gen_index);
    result.report.counts.p_con = static_cast<int>(consistent_gen.size());

    result.targets.new_target = serialize_persona(vocab, result.match.new_target);
    if (!generated.empty()) {
        result.targets.gen_target = serialize_persona(vocab, generated);
        if (persona_sentence_spans(result.targets.gen_target).size() != generated.size())
            throw ArgumentError("total_extractor_loss: span/sentence count mismatch");
    }
    result.targets.consistent_indices.assign(consistent_gen.begin(), consistent_gen.end());

    ExtractorLossNodes nodes = extractor_loss_from_targets(g, model, result.targets, options,
                                                           with_grad);
    result.total = nodes.total;
    result.report.l_nll = g.value(nodes.l_nll).a[0];
    if (nodes.l_complete >= 0) result.report.l_complete = g.value(nodes.l_complete).a[0];
    if (nodes.l_consist >= 0) result.report.l_consist = g.value(nodes.l_consist).a[0];
    result.report.l_total = g.value(nodes.total).a[0];
    return result;
}

ad::NodeId generator_loss_node(ad::Graph& g, const Seq2SeqModel& model,
                               const std::vector<int>& source, const std::vector<int>& response,
                               bool with_grad) {
    if (response.empty()) throw ArgumentError("generator_loss: empty response");
    auto pass = model.teacher_forced(g, source, response, with_grad);
    return g.cross_entropy(pass.logits, response, Vocab::pad_id, ad::Graph::Reduction::mean);
}

double generator_loss(const Seq2SeqModel& model, const std::vector<int>& source,
                      const std::vector<int>& response) {
    ad::Graph g;
    return g.value(generator_loss_node(g, model, source, response, /*with_grad=*/false)).a[0];
}

}  // namespace pess
