#include "pess/embedder.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "pess/errors.hpp"
#include "pess/text.hpp"

namespace pess {

namespace {

void l2_normalize(std::vector<double>& v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    if (n2 <= 0.0) return;
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
}

void require_nonempty(const std::string& text) {
    if (text.empty())
        throw ArgumentError("cannot embed empty text");
}

}  // namespace

HashedNgramEmbedder::HashedNgramEmbedder(int dimension) {
    if (dimension < 8) throw ArgumentError("embedder dimension must be >= 8");
    spec_ = {"hashed-ngram", dimension, true};
}

SentenceEmbedding HashedNgramEmbedder::embed(const std::string& normalized_text) const {
    require_nonempty(normalized_text);
    const auto d = static_cast<std::uint64_t>(spec_.dimension);
    std::vector<double> v(static_cast<size_t>(spec_.dimension), 0.0);

    auto bump = [&](std::string_view feature, double weight) {
        const std::uint64_t h = fnv1a64(feature);
        const double sign = (h >> 63) ? -1.0 : 1.0;
        v[static_cast<size_t>(h % d)] += sign * weight;
    };

    // Character 3-grams over the padded sentence.
    const std::string padded = " " + normalized_text + " ";
    for (size_t i = 0; i + 3 <= padded.size(); ++i)
        bump(std::string("c3:") + padded.substr(i, 3), 1.0);

    // Word unigrams weighted by word length, so content words count for
    // more than function words.
    for (const auto& w : split_tokens(normalized_text))
        bump("w1:" + w, static_cast<double>(w.size()));

    l2_normalize(v);
    return {std::move(v), normalized_text};
}

TsvFileEmbedder::TsvFileEmbedder(const std::string& model_path) {
    std::ifstream in(model_path);
    if (!in)
        throw ProviderError(ProviderError::Kind::config,
                            "tsv-file embedder: cannot open model-path: " + model_path);
    std::string line;
    int dim = 0;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw ProviderError(ProviderError::Kind::config,
                                "tsv-file embedder: line " + std::to_string(line_no) +
                                    " has no tab separator");
        std::string key = normalize_text(line.substr(0, tab));
        std::vector<double> vec;
        std::istringstream nums(line.substr(tab + 1));
        double x;
        while (nums >> x) vec.push_back(x);
        if (vec.empty())
            throw ProviderError(ProviderError::Kind::config,
                                "tsv-file embedder: line " + std::to_string(line_no) +
                                    " has no vector values");
        if (dim == 0) dim = static_cast<int>(vec.size());
        if (static_cast<int>(vec.size()) != dim)
            throw ProviderError(ProviderError::Kind::config,
                                "tsv-file embedder: inconsistent dimension at line " +
                                    std::to_string(line_no));
        l2_normalize(vec);
        table_[std::move(key)] = std::move(vec);
    }
    if (table_.empty())
        throw ProviderError(ProviderError::Kind::config,
                            "tsv-file embedder: table is empty: " + model_path);
    if (dim < 8)
        throw ProviderError(ProviderError::Kind::config,
                            "tsv-file embedder: dimension must be >= 8, got " +
                                std::to_string(dim));
    spec_ = {"tsv-file", dim, true};
}

SentenceEmbedding TsvFileEmbedder::embed(const std::string& normalized_text) const {
    require_nonempty(normalized_text);
    auto it = table_.find(normalized_text);
    if (it == table_.end())
        throw ProviderError(ProviderError::Kind::runtime,
                            "tsv-file embedder: no embedding for \"" + normalized_text + "\"");
    return {it->second, normalized_text};
}

std::unique_ptr<Embedder> make_embedder(const std::string& name,
                                        const std::map<std::string, std::string>& options) {
    if (name == "hashed-ngram") {
        int dim = 256;
        if (auto it = options.find("dimension"); it != options.end()) dim = std::stoi(it->second);
        return std::make_unique<HashedNgramEmbedder>(dim);
    }
    if (name == "tsv-file") {
        auto it = options.find("model-path");
        if (it == options.end())
            throw ProviderError(ProviderError::Kind::config,
                                "tsv-file embedder requires the 'model-path' option");
        return std::make_unique<TsvFileEmbedder>(it->second);
    }
    throw ProviderError(ProviderError::Kind::config, "unknown embedder provider: " + name);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw ArgumentError("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) throw ArgumentError("cosine: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

double cosine(const SentenceEmbedding& a, const SentenceEmbedding& b) {
    return cosine(a.vector, b.vector);
}

}  // namespace pess
