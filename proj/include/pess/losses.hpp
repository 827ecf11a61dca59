#pragma once

#include <string>
#include <vector>

#include "pess/autograd.hpp"
#include "pess/corpus.hpp"
#include "pess/embedder.hpp"
#include "pess/matcher.hpp"
#include "pess/seq2seq.hpp"

namespace pess {

struct LossWeights {
    double w_complete = 1.0;
    double w_consist = 1.0;
};

struct LossCounts {
    int m = 0;       // ground-truth persona sentences
    int k = 0;       // generated persona sentences
    int p_con = 0;   // |P^con|
    int p_miss = 0;  // |P^miss|
};

struct LossReport {
    double l_nll = 0.0;
    double l_complete = 0.0;
    double l_consist = 0.0;
    double l_total = 0.0;
    LossCounts counts;

    std::string to_json_line(long step) const;
};

// NLL of the new target persona given the source utterances: identical in
// form to the plain persona NLL, just aimed at the matcher's rebuilt target.
double completeness_loss(const Seq2SeqModel& model, const std::vector<int>& source,
                         const std::vector<std::string>& p_new,
                         ad::Graph::Reduction reduction = ad::Graph::Reduction::mean);

// Contrastive loss over sentence representations: pulls consistent
// generated sentences toward the ground-truth persona representation,
// pushes the rest away. sim is cosine; softmax runs over all k generated
// sentences. Returns 0 for an empty consistent set.
double consistency_loss(const std::vector<SentenceRep>& h_gen, const SentenceRep& h_gt,
                        const std::vector<int>& consistent_indices);

// Graph variant; h_gen/h_gt are 1 x d nodes. Returns a scalar node.
ad::NodeId consistency_loss_node(ad::Graph& g, const std::vector<ad::NodeId>& h_gen,
                                 ad::NodeId h_gt, const std::vector<int>& consistent_indices);

struct ExtractorLossOptions {
    double tau = 0.9;
    LossWeights weights;
    bool with_complete = true;
    bool with_consist = true;
    int decode_max_new = 64;
    ad::Graph::Reduction reduction = ad::Graph::Reduction::mean;
};

// The decode-and-match stage of the objective, frozen into token ids.
// Gradients flow through teacher-forced passes over these fixed targets,
// never through the discrete decode.
struct MatchedTargets {
    std::vector<int> source;
    std::vector<int> gt_target;            // serialized P
    std::vector<int> new_target;           // serialized P^new
    std::vector<int> gen_target;           // serialized P^g; empty when k = 0
    std::vector<int> consistent_indices;   // indices into the generated sentences
};

struct ExtractorLossNodes {
    ad::NodeId l_nll = -1;
    ad::NodeId l_complete = -1;  // -1 when disabled
    ad::NodeId l_consist = -1;   // -1 when disabled or no consistent sentences
    ad::NodeId total = -1;
};

// Assembles nll + completeness + consistency over pre-matched targets.
ExtractorLossNodes extractor_loss_from_targets(ad::Graph& g, const Seq2SeqModel& model,
                                               const MatchedTargets& targets,
                                               const ExtractorLossOptions& options,
                                               bool with_grad);

struct ExtractorLossResult {
    LossReport report;
    ad::NodeId total = -1;  // scalar node inside the caller's graph
    std::vector<std::string> generated;
    MatchResult match;
    MatchedTargets targets;
};

// The full training objective for one example: greedy-decode the persona,
// match it against the ground truth, then assemble nll + completeness +
// consistency in one graph so a single backward covers all three.
ExtractorLossResult total_extractor_loss(ad::Graph& g, const Seq2SeqModel& model,
                                         const ExtractionExample& example,
                                         const Embedder& embedder,
                                         const ExtractorLossOptions& options,
                                         bool with_grad = true);

// Mean NLL of the response tokens given history + inferred persona.
double generator_loss(const Seq2SeqModel& model, const std::vector<int>& source,
                      const std::vector<int>& response);

ad::NodeId generator_loss_node(ad::Graph& g, const Seq2SeqModel& model,
                               const std::vector<int>& source, const std::vector<int>& response,
                               bool with_grad);

}  // namespace pess
