#pragma once

#include <map>
#include <string>
#include <vector>

#include "pess/embedder.hpp"
#include "pess/seq2seq.hpp"

namespace pess {

// Corpus-level BLEU-n: clipped n-gram precision aggregated over the corpus,
// geometric mean of orders 1..n, brevity penalty, add-epsilon smoothing on
// zero match counts. Single reference per candidate.
double bleu_n(const std::vector<std::string>& candidates,
              const std::vector<std::string>& references, int n);

// Mean per-pair LCS F-measure (beta = 1).
double rouge_l(const std::vector<std::string>& candidates,
               const std::vector<std::string>& references);

// Mean per-pair n-gram F-measure; pairs whose reference has no n-grams are
// skipped.
double rouge_n(const std::vector<std::string>& candidates,
               const std::vector<std::string>& references, int n);

// Unique n-grams across all candidates over total n-grams.
double distinct_n(const std::vector<std::string>& candidates, int n);

struct ScoredSequence {
    std::vector<int> source;
    std::vector<int> target;
};

// exp(token-weighted mean NLL) over the set.
double perplexity(const Seq2SeqModel& model, const std::vector<ScoredSequence>& examples);

// Mean sentence-level embedder cosine mapped to [0, 1]. A lightweight
// semantic-overlap score, reported as "embed_score".
double embed_score(const std::vector<std::string>& candidates,
                   const std::vector<std::string>& references, const Embedder& embedder);

struct MetricReport {
    std::map<std::string, double> values;
    int n_examples = 0;

    std::string to_json() const;
};

// The standard text-metric bundle (no perplexity; that needs a model).
MetricReport evaluate_text_metrics(const std::vector<std::string>& candidates,
                                   const std::vector<std::string>& references,
                                   const Embedder& embedder);

}  // namespace pess
