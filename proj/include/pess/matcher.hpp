#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pess/embedder.hpp"

namespace pess {

// m x k cosine scores between ground-truth and generated persona sentences.
struct SimilarityMatrix {
    std::vector<std::vector<double>> scores;  // scores[i][j], shape m x k
    std::vector<std::string> ground_truth;    // m sentences
    std::vector<std::string> generated;       // k sentences

    size_t m() const { return ground_truth.size(); }
    size_t k() const { return generated.size(); }
};

// Per-ground-truth-sentence verdict: which generated sentence matched best
// and whether that best score clears the threshold.
struct MatchVerdict {
    int gt_index = 0;
    std::optional<int> best_gen_index;
    std::optional<double> best_score;
    bool consistent = false;
};

struct MatchResult {
    std::vector<MatchVerdict> verdicts;
    std::vector<std::string> consistent_set;  // generated sentences, generated-index order
    std::vector<std::string> missing_set;     // ground-truth sentences, gt-index order
    std::vector<std::string> new_target;      // consistent_set then missing_set, deduplicated
    double tau = 0.0;

    std::string to_json() const;
};

SimilarityMatrix build_similarity_matrix(const std::vector<std::string>& ground_truth,
                                         const std::vector<std::string>& generated,
                                         const Embedder& embedder);

// Row-wise argmax matching at threshold tau. Ties break toward the smallest
// generated index; a generated sentence matching several ground-truth rows
// appears once in the consistent set.
MatchResult match(const SimilarityMatrix& similarity, double tau);

double default_tau();

}  // namespace pess
