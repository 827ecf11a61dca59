#include "pess/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "pess/autograd.hpp"
#include "pess/errors.hpp"
#include "pess/text.hpp"

namespace pess {

namespace {

constexpr double kBleuEpsilon = 1e-9;

std::vector<std::string> tokens_of(const std::string& text) {
    return split_tokens(normalize_text(text));
}

std::map<std::string, int> ngram_counts(const std::vector<std::string>& tokens, int n) {
    std::map<std::string, int> counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (int j = 1; j < n; ++j) {
            key.push_back('\x1f');
            key += tokens[i + static_cast<size_t>(j)];
        }
        ++counts[key];
    }
    return counts;
}

void check_pairs(const std::vector<std::string>& candidates,
                 const std::vector<std::string>& references) {
    if (candidates.empty()) throw ArgumentError("metric needs at least one candidate");
    if (candidates.size() != references.size())
        throw ArgumentError("candidate and reference lists must have equal length");
}

}  // namespace

double bleu_n(const std::vector<std::string>& candidates,
              const std::vector<std::string>& references, int n) {
    check_pairs(candidates, references);
    if (n < 1 || n > 4) throw ArgumentError("bleu_n: n must be in 1..4");

    std::vector<long> matches(static_cast<size_t>(n), 0);
    std::vector<long> totals(static_cast<size_t>(n), 0);
    long cand_len = 0, ref_len = 0;

    for (size_t i = 0; i < candidates.size(); ++i) {
        const auto cand = tokens_of(candidates[i]);
        const auto ref = tokens_of(references[i]);
        cand_len += static_cast<long>(cand.size());
        ref_len += static_cast<long>(ref.size());
        for (int order = 1; order <= n; ++order) {
            const auto cand_counts = ngram_counts(cand, order);
            const auto ref_counts = ngram_counts(ref, order);
            for (const auto& [gram, count] : cand_counts) {
                totals[static_cast<size_t>(order - 1)] += count;
                auto it = ref_counts.find(gram);
                if (it != ref_counts.end())
                    matches[static_cast<size_t>(order - 1)] += std::min(count, it->second);
            }
        }
    }

    if (cand_len == 0) return 0.0;

    double log_sum = 0.0;
    for (int order = 0; order < n; ++order) {
        const double total = static_cast<double>(totals[static_cast<size_t>(order)]);
        double p;
        if (total <= 0.0)
            p = kBleuEpsilon;
        else
            p = std::max(static_cast<double>(matches[static_cast<size_t>(order)]), kBleuEpsilon) /
                total;
        log_sum += std::log(p);
    }
    const double geo_mean = std::exp(log_sum / n);

    const double bp = cand_len >= ref_len
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(ref_len) / cand_len);
    return bp * geo_mean;
}

namespace {

double lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const size_t na = a.size(), nb = b.size();
    std::vector<int> prev(nb + 1, 0), cur(nb + 1, 0);
    for (size_t i = 1; i <= na; ++i) {
        for (size_t j = 1; j <= nb; ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[nb]);
}

double f_measure(double precision, double recall) {
    if (precision + recall <= 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double rouge_l(const std::vector<std::string>& candidates,
               const std::vector<std::string>& references) {
    check_pairs(candidates, references);
    double sum = 0.0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        const auto cand = tokens_of(candidates[i]);
        const auto ref = tokens_of(references[i]);
        if (cand.empty() || ref.empty()) continue;
        const double lcs = lcs_length(cand, ref);
        sum += f_measure(lcs / static_cast<double>(cand.size()),
                         lcs / static_cast<double>(ref.size()));
    }
    return sum / static_cast<double>(candidates.size());
}

double rouge_n(const std::vector<std::string>& candidates,
               const std::vector<std::string>& references, int n) {
    check_pairs(candidates, references);
    if (n < 1 || n > 2) throw ArgumentError("rouge_n: n must be in 1..2");
    double sum = 0.0;
    int counted = 0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        const auto ref_counts = ngram_counts(tokens_of(references[i]), n);
        if (ref_counts.empty()) continue;  // recall undefined
        ++counted;
        const auto cand_counts = ngram_counts(tokens_of(candidates[i]), n);
        long overlap = 0, cand_total = 0, ref_total = 0;
        for (const auto& [gram, count] : ref_counts) ref_total += count;
        for (const auto& [gram, count] : cand_counts) {
            cand_total += count;
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) overlap += std::min(count, it->second);
        }
        if (cand_total == 0) continue;  // F = 0 contributes nothing
        sum += f_measure(static_cast<double>(overlap) / cand_total,
                         static_cast<double>(overlap) / ref_total);
    }
    if (counted == 0) throw ArgumentError("rouge_n: no reference has " + std::to_string(n) +
                                          "-grams");
    return sum / counted;
}

double distinct_n(const std::vector<std::string>& candidates, int n) {
    if (candidates.empty()) throw ArgumentError("distinct_n: needs at least one candidate");
    if (n < 1 || n > 2) throw ArgumentError("distinct_n: n must be in 1..2");
    std::set<std::string> unique;
    long total = 0;
    for (const auto& c : candidates) {
        for (const auto& [gram, count] : ngram_counts(tokens_of(c), n)) {
            unique.insert(gram);
            total += count;
        }
    }
    if (total == 0)
        throw ArgumentError("distinct_n: every candidate is shorter than n=" + std::to_string(n));
    return static_cast<double>(unique.size()) / static_cast<double>(total);
}

double perplexity(const Seq2SeqModel& model, const std::vector<ScoredSequence>& examples) {
    if (examples.empty()) throw ArgumentError("perplexity: needs at least one example");
    double total_nll = 0.0;
    long total_tokens = 0;
    for (const auto& ex : examples) {
        total_nll += nll(model, ex.source, ex.target, ad::Graph::Reduction::sum);
        for (int t : ex.target)
            if (t != Vocab::pad_id) ++total_tokens;
    }
    return std::exp(total_nll / static_cast<double>(total_tokens));
}

double embed_score(const std::vector<std::string>& candidates,
                   const std::vector<std::string>& references, const Embedder& embedder) {
    check_pairs(candidates, references);
    double sum = 0.0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        const double c = cosine(embedder.embed(normalize_text(candidates[i])),
                                embedder.embed(normalize_text(references[i])));
        sum += (c + 1.0) / 2.0;
    }
    return sum / static_cast<double>(candidates.size());
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    for (const auto& [name, value] : values) j[name] = value;
    j["n_examples"] = n_examples;
    j["config"] = {{"bleu_smoothing", "add-epsilon"},
                   {"bleu_epsilon", kBleuEpsilon},
                   {"bleu_orders", {1, 2, 3, 4}},
                   {"rouge_orders", {1, 2}},
                   {"distinct_orders", {1, 2}}};
    return j.dump(2);
}

MetricReport evaluate_text_metrics(const std::vector<std::string>& candidates,
                                   const std::vector<std::string>& references,
                                   const Embedder& embedder) {
    MetricReport report;
    report.n_examples = static_cast<int>(candidates.size());
    for (int n = 1; n <= 4; ++n)
        report.values["bleu_" + std::to_string(n)] = bleu_n(candidates, references, n);
    for (int n = 1; n <= 2; ++n)
        report.values["rouge_" + std::to_string(n)] = rouge_n(candidates, references, n);
    report.values["rouge_l"] = rouge_l(candidates, references);
    for (int n = 1; n <= 2; ++n)
        report.values["distinct_" + std::to_string(n)] = distinct_n(candidates, n);
    report.values["embed_score"] = embed_score(candidates, references, embedder);
    return report;
}

}  // namespace pess
