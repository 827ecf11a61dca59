#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace pess {

struct EmbedderSpec {
    std::string name;
    int dimension = 0;
    bool deterministic = false;
};

struct SentenceEmbedding {
    std::vector<double> vector;
    std::string source_text;

    int dimension() const { return static_cast<int>(vector.size()); }
};

// Sentence-embedding provider. Implementations take pre-normalized text
// (see normalize_text) and must return unit-L2-norm vectors.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual const EmbedderSpec& spec() const = 0;
    virtual SentenceEmbedding embed(const std::string& normalized_text) const = 0;
};

// Built-in provider: character 3-gram + word unigram features, signed
// feature hashing into a fixed dimension, L2-normalized. Deterministic and
// dependency-free.
class HashedNgramEmbedder : public Embedder {
public:
    explicit HashedNgramEmbedder(int dimension = 256);
    const EmbedderSpec& spec() const override { return spec_; }
    SentenceEmbedding embed(const std::string& normalized_text) const override;

private:
    EmbedderSpec spec_;
};

// External provider backed by a lookup table loaded from a TSV file
// (text<TAB>v1 v2 ...). Stands in for any service or model configured via
// the [embedder] config section; asking for a sentence that is not in the
// table is a runtime provider failure.
class TsvFileEmbedder : public Embedder {
public:
    explicit TsvFileEmbedder(const std::string& model_path);
    const EmbedderSpec& spec() const override { return spec_; }
    SentenceEmbedding embed(const std::string& normalized_text) const override;

private:
    EmbedderSpec spec_;
    std::map<std::string, std::vector<double>> table_;
};

// Provider selection by name. Known names: "hashed-ngram" (options:
// "dimension"), "tsv-file" (options: "model-path"). Unknown names or
// missing required options are config failures.
std::unique_ptr<Embedder> make_embedder(const std::string& name,
                                        const std::map<std::string, std::string>& options = {});

double cosine(const SentenceEmbedding& a, const SentenceEmbedding& b);
double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace pess
