#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pess/corpus.hpp"
#include "pess/embedder.hpp"
#include "pess/errors.hpp"
#include "pess/rng.hpp"
#include "pess/text.hpp"
#include "test_util.hpp"

using namespace pess;

TEST_CASE("embed is deterministic and unit norm") {
    HashedNgramEmbedder emb(256);
    auto a = emb.embed(normalize_text("My favorite food is sushi."));
    auto b = emb.embed(normalize_text("my  favorite   food is sushi."));
    CHECK(a.vector == b.vector);  // identical normalized text, identical vector

    double norm2 = 0.0;
    for (double x : a.vector) norm2 += x * x;
    CHECK(std::fabs(std::sqrt(norm2) - 1.0) <= 1e-9);
    CHECK(a.dimension() == 256);
    CHECK(emb.spec().deterministic);
}

TEST_CASE("embed rejects empty text and tiny dimensions") {
    HashedNgramEmbedder emb(256);
    CHECK_THROWS_AS(emb.embed(""), ArgumentError);
    CHECK_THROWS_AS(HashedNgramEmbedder(4), ArgumentError);
}

TEST_CASE("pinned regression: paraphrase cosine under the built-in embedder") {
    // Frozen from the reference hashing implementation; guards against
    // accidental feature or hashing changes.
    HashedNgramEmbedder emb(256);
    const double c = cosine(emb.embed(normalize_text("likes sushi")),
                            emb.embed(normalize_text("My favorite food is sushi.")));
    CHECK(c == doctest::Approx(0.11577023369288149).epsilon(1e-12));
}

TEST_CASE("cosine identity, orthogonal and antipodal cases") {
    SentenceEmbedding a{{1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0}, "a"};
    SentenceEmbedding b{{0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0}, "b"};
    SentenceEmbedding na{{-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0}, "-a"};
    CHECK(cosine(a, a) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(cosine(a, b) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cosine(a, na) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("cosine rejects mismatched dimensions and zero vectors") {
    SentenceEmbedding a{{1.0, 0.0}, "a"};
    SentenceEmbedding b{{1.0, 0.0, 0.0}, "b"};
    SentenceEmbedding z{{0.0, 0.0}, "z"};
    CHECK_THROWS_AS(cosine(a, b), ArgumentError);
    CHECK_THROWS_AS(cosine(a, z), ArgumentError);
}

TEST_CASE("property: |cosine| <= 1 and symmetry over random vectors") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const int d = 8 + static_cast<int>(rng.index(20));
        std::vector<double> a(static_cast<size_t>(d)), b(static_cast<size_t>(d));
        for (auto& x : a) x = rng.normal();
        for (auto& x : b) x = rng.normal();
        const double ab = cosine(a, b);
        const double ba = cosine(b, a);
        CHECK(std::fabs(ab) <= 1.0 + 1e-12);
        CHECK(std::fabs(ab - ba) <= 1e-12);
    }
}

TEST_CASE("within-trait paraphrases beat cross-trait pairs on >=95% of comparisons") {
    HashedNgramEmbedder emb(256);
    const ToyGrammar& g = builtin_toy_grammar();

    long wins = 0, total = 0;
    for (size_t a = 0; a < g.traits.size(); ++a) {
        std::vector<double> within;
        const auto& ta = g.traits[a];
        for (size_t i = 0; i < ta.utterances.size(); ++i)
            for (size_t j = i + 1; j < ta.utterances.size(); ++j)
                within.push_back(cosine(emb.embed(normalize_text(ta.utterances[i])),
                                        emb.embed(normalize_text(ta.utterances[j]))));
        for (size_t b = 0; b < g.traits.size(); ++b) {
            if (a == b) continue;
            for (const auto& ua : ta.utterances)
                for (const auto& ub : g.traits[b].utterances) {
                    const double cross = cosine(emb.embed(normalize_text(ua)),
                                                emb.embed(normalize_text(ub)));
                    for (double w : within) {
                        ++total;
                        if (w > cross) ++wins;
                    }
                }
        }
    }
    CHECK(static_cast<double>(wins) / static_cast<double>(total) >= 0.95);
}

TEST_CASE("provider factory: selection by name, config vs runtime failures") {
    CHECK_NOTHROW(make_embedder("hashed-ngram"));
    CHECK_NOTHROW(make_embedder("hashed-ngram", {{"dimension", "64"}}));

    try {
        make_embedder("no-such-provider");
        FAIL("expected ProviderError");
    } catch (const ProviderError& e) {
        CHECK(e.kind() == ProviderError::Kind::config);
    }

    // tsv-file without a model path is a config failure
    try {
        make_embedder("tsv-file");
        FAIL("expected ProviderError");
    } catch (const ProviderError& e) {
        CHECK(e.kind() == ProviderError::Kind::config);
    }
    // ... and so is a missing table file
    try {
        make_embedder("tsv-file", {{"model-path", "/nonexistent/table.tsv"}});
        FAIL("expected ProviderError");
    } catch (const ProviderError& e) {
        CHECK(e.kind() == ProviderError::Kind::config);
    }
}

TEST_CASE("tsv-file provider: lookups work, unknown sentences are runtime failures") {
    testutil::TempDir dir("embed");
    testutil::write_file(dir / "table.tsv",
                         "hello there\t1 0 0 0 0 0 0 0\n"
                         "good morning\t0 1 0 0 0 0 0 0\n");
    auto provider = make_embedder("tsv-file", {{"model-path", (dir / "table.tsv").string()}});
    CHECK(provider->spec().name == "tsv-file");
    CHECK(provider->spec().dimension == 8);
    auto e = provider->embed("hello there");
    CHECK(e.vector[0] == doctest::Approx(1.0));

    try {
        provider->embed("unknown sentence");
        FAIL("expected ProviderError");
    } catch (const ProviderError& e2) {
        CHECK(e2.kind() == ProviderError::Kind::runtime);
    }
}
