#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pess/corpus.hpp"
#include "pess/embedder.hpp"
#include "pess/errors.hpp"
#include "pess/matcher.hpp"
#include "pess/metrics.hpp"
#include "pess/text.hpp"

namespace py = pybind11;

namespace {

pess::HashedNgramEmbedder default_embedder(int dimension) {
    return pess::HashedNgramEmbedder(dimension);
}

py::dict match_result_to_dict(const pess::MatchResult& result) {
    py::dict out;
    py::list verdicts;
    for (const auto& v : result.verdicts) {
        py::dict jv;
        jv["gt_index"] = v.gt_index;
        jv["best_gen_index"] = v.best_gen_index ? py::cast(*v.best_gen_index) : py::none();
        jv["best_score"] = v.best_score ? py::cast(*v.best_score) : py::none();
        jv["consistent"] = v.consistent;
        verdicts.append(jv);
    }
    out["verdicts"] = verdicts;
    out["p_con"] = result.consistent_set;
    out["p_miss"] = result.missing_set;
    out["p_new"] = result.new_target;
    out["tau"] = result.tau;
    return out;
}

py::list dialogues_to_list(const std::vector<pess::Dialogue>& dialogues) {
    py::list out;
    for (const auto& d : dialogues) {
        py::dict jd;
        jd["id"] = d.id;
        if (d.persona_a) jd["persona_a"] = d.persona_a->sentences;
        if (d.persona_b) jd["persona_b"] = d.persona_b->sentences;
        py::list turns;
        for (const auto& u : d.utterances) {
            py::dict t;
            t["speaker"] = pess::speaker_name(u.speaker);
            t["text"] = u.text;
            turns.append(t);
        }
        jd["turns"] = turns;
        out.append(jd);
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_pess, m) {
    m.doc() = "persona extraction through semantic similarity: core operations";

    m.def("normalize_text", [](const std::string& s) { return pess::normalize_text(s); },
          py::arg("text"));

    m.def(
        "embed",
        [](const std::string& text, int dimension) {
            return default_embedder(dimension).embed(pess::normalize_text(text)).vector;
        },
        py::arg("text"), py::arg("dimension") = 256,
        "Unit-norm hashed n-gram sentence embedding.");

    m.def(
        "cosine",
        [](const std::vector<double>& a, const std::vector<double>& b) {
            return pess::cosine(a, b);
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "similarity_matrix",
        [](const std::vector<std::string>& ground_truth, const std::vector<std::string>& generated,
           int dimension) {
            std::vector<std::string> gt, gen;
            for (const auto& s : ground_truth) gt.push_back(pess::normalize_text(s));
            for (const auto& s : generated) gen.push_back(pess::normalize_text(s));
            return pess::build_similarity_matrix(gt, gen, default_embedder(dimension)).scores;
        },
        py::arg("ground_truth"), py::arg("generated"), py::arg("dimension") = 256);

    m.def(
        "match_personas",
        [](const std::vector<std::string>& ground_truth, const std::vector<std::string>& generated,
           double tau, int dimension) {
            std::vector<std::string> gt, gen;
            for (const auto& s : ground_truth) gt.push_back(pess::normalize_text(s));
            for (const auto& s : generated) gen.push_back(pess::normalize_text(s));
            const auto sim = pess::build_similarity_matrix(gt, gen, default_embedder(dimension));
            return match_result_to_dict(pess::match(sim, tau));
        },
        py::arg("ground_truth"), py::arg("generated"), py::arg("tau") = 0.9,
        py::arg("dimension") = 256,
        "Embed both sentence lists, build the similarity matrix and match at tau.");

    m.def(
        "match_scores",
        [](const std::vector<std::vector<double>>& scores,
           const std::vector<std::string>& ground_truth, const std::vector<std::string>& generated,
           double tau) {
            pess::SimilarityMatrix sim;
            sim.scores = scores;
            sim.ground_truth = ground_truth;
            sim.generated = generated;
            return match_result_to_dict(pess::match(sim, tau));
        },
        py::arg("scores"), py::arg("ground_truth"), py::arg("generated"), py::arg("tau") = 0.9,
        "Match a pre-computed score matrix at tau.");

    m.def("default_tau", &pess::default_tau);

    m.def(
        "bleu_n",
        [](const std::vector<std::string>& c, const std::vector<std::string>& r, int n) {
            return pess::bleu_n(c, r, n);
        },
        py::arg("candidates"), py::arg("references"), py::arg("n"));
    m.def(
        "rouge_n",
        [](const std::vector<std::string>& c, const std::vector<std::string>& r, int n) {
            return pess::rouge_n(c, r, n);
        },
        py::arg("candidates"), py::arg("references"), py::arg("n"));
    m.def(
        "rouge_l",
        [](const std::vector<std::string>& c, const std::vector<std::string>& r) {
            return pess::rouge_l(c, r);
        },
        py::arg("candidates"), py::arg("references"));
    m.def(
        "distinct_n",
        [](const std::vector<std::string>& c, int n) { return pess::distinct_n(c, n); },
        py::arg("candidates"), py::arg("n"));
    m.def(
        "embed_score",
        [](const std::vector<std::string>& c, const std::vector<std::string>& r, int dimension) {
            return pess::embed_score(c, r, default_embedder(dimension));
        },
        py::arg("candidates"), py::arg("references"), py::arg("dimension") = 256);

    m.def(
        "make_toy_corpus",
        [](int num_dialogues, int num_traits, std::uint64_t seed) {
            return dialogues_to_list(
                pess::make_toy_corpus(num_dialogues, num_traits, seed).dialogues);
        },
        py::arg("num_dialogues"), py::arg("num_traits"), py::arg("seed") = 0,
        "Deterministic synthetic dialogues with known persona/utterance pairing.");

    m.def("toy_trait_inventory_size", &pess::toy_trait_inventory_size);

    py::register_exception<pess::ArgumentError>(m, "ArgumentError", PyExc_ValueError);

    m.attr("__version__") = "0.1.0";
}
