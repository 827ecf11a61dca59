#include "pess/matcher.hpp"

#include <set>

#include <json.hpp>

#include "pess/errors.hpp"

namespace pess {

SimilarityMatrix build_similarity_matrix(const std::vector<std::string>& ground_truth,
                                         const std::vector<std::string>& generated,
                                         const Embedder& embedder) {
    if (ground_truth.empty())
        throw ArgumentError("build_similarity_matrix: ground truth must be non-empty");

    std::vector<SentenceEmbedding> gt_emb, gen_emb;
    gt_emb.reserve(ground_truth.size());
    gen_emb.reserve(generated.size());
    for (const auto& s : ground_truth) gt_emb.push_back(embedder.embed(s));
    for (const auto& s : generated) gen_emb.push_back(embedder.embed(s));

    SimilarityMatrix sim;
    sim.ground_truth = ground_truth;
    sim.generated = generated;
    sim.scores.assign(ground_truth.size(), std::vector<double>(generated.size(), 0.0));
    for (size_t i = 0; i < gt_emb.size(); ++i)
        for (size_t j = 0; j < gen_emb.size(); ++j)
            sim.scores[i][j] = cosine(gt_emb[i], gen_emb[j]);
    return sim;
}

MatchResult match(const SimilarityMatrix& similarity, double tau) {
    if (!(tau > 0.0) || tau > 1.0)
        throw ArgumentError("tau must be in (0, 1], got " + std::to_string(tau));
    if (similarity.m() == 0)
        throw ArgumentError("match: similarity matrix has no ground-truth rows");

    const size_t m = similarity.m();
    const size_t k = similarity.k();

    MatchResult result;
    result.tau = tau;
    result.verdicts.reserve(m);

    std::vector<bool> gen_in_consistent(k, false);
    for (size_t i = 0; i < m; ++i) {
        MatchVerdict v;
        v.gt_index = static_cast<int>(i);
        if (k > 0) {
            size_t best = 0;
            for (size_t j = 1; j < k; ++j)
                if (similarity.scores[i][j] > similarity.scores[i][best]) best = j;
            v.best_gen_index = static_cast<int>(best);
            v.best_score = similarity.scores[i][best];
            v.consistent = (*v.best_score >= tau);
            if (v.consistent) gen_in_consistent[best] = true;
        }
        if (!v.consistent) result.missing_set.push_back(similarity.ground_truth[i]);
        result.verdicts.push_back(v);
    }
    for (size_t j = 0; j < k; ++j)
        if (gen_in_consistent[j]) result.consistent_set.push_back(similarity.generated[j]);

    std::set<std::string> seen;
    for (const auto& s : result.consistent_set)
        if (seen.insert(s).second) result.new_target.push_back(s);
    for (const auto& s : result.missing_set)
        if (seen.insert(s).second) result.new_target.push_back(s);

    return result;
}

double default_tau() { return 0.9; }

std::string MatchResult::to_json() const {
    nlohmann::json j;
    j["verdicts"] = nlohmann::json::array();
    for (const auto& v : verdicts) {
        nlohmann::json jv;
        jv["gt_index"] = v.gt_index;
        if (v.best_gen_index)
            jv["best_gen_index"] = *v.best_gen_index;
        else
            jv["best_gen_index"] = nullptr;
        if (v.best_score)
            jv["best_score"] = *v.best_score;
        else
            jv["best_score"] = nullptr;
        jv["consistent"] = v.consistent;
        j["verdicts"].push_back(std::move(jv));
    }
    j["p_con"] = consistent_set;
    j["p_miss"] = missing_set;
    j["p_new"] = new_target;
    j["tau"] = tau;
    return j.dump();
}

}  // namespace pess
