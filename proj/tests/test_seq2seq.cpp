#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pess/errors.hpp"
#include "pess/pipeline.hpp"
#include "pess/seq2seq.hpp"
#include "test_util.hpp"

using namespace pess;

namespace {

// Overfits a tiny model on one (source, target) pair.
Seq2SeqModel overfit_single(const Vocab& vocab, const std::vector<int>& source,
                            const std::vector<int>& target, int steps = 200,
                            double lr = 1e-2) {
    Seq2SeqModel model(testutil::tiny_config(), vocab);
    AdamW opt(model.parameters(), lr, /*weight_decay=*/0.0);
    for (int s = 0; s < steps; ++s) {
        ad::Graph g;
        auto pass = model.teacher_forced(g, source, target, /*with_grad=*/true);
        ad::NodeId loss = g.cross_entropy(pass.logits, target, Vocab::pad_id,
                                          ad::Graph::Reduction::mean);
        g.backward(loss);
        opt.step();
    }
    return model;
}

}  // namespace

TEST_CASE("vocab: special ids fixed, words sorted, unknowns map to UNK") {
    Vocab v = Vocab::build({"bravo alpha", "charlie alpha"});
    CHECK(Vocab::pad_id == 0);
    CHECK(Vocab::bos_id == 1);
    CHECK(Vocab::eos_id == 2);
    CHECK(Vocab::sep_id == 3);
    CHECK(Vocab::persona_sep_id == 4);
    CHECK(Vocab::unk_id == 5);
    CHECK(v.size() == Vocab::num_special + 3);
    CHECK(v.id_of("alpha") == Vocab::num_special);  // sorted order
    CHECK(v.id_of("zulu") == Vocab::unk_id);
    CHECK(v.token_of(Vocab::persona_sep_id) == "<psep>");
}

TEST_CASE("vocab round-trips through its one-token-per-line file") {
    testutil::TempDir dir("vocab");
    Vocab v = testutil::tiny_vocab();
    v.save((dir / "vocab.txt").string());
    Vocab loaded = Vocab::load((dir / "vocab.txt").string());
    CHECK(loaded.size() == v.size());
    CHECK(loaded.id_of("alpha") == v.id_of("alpha"));
}

TEST_CASE("encode_source layout: BOS, SEP-joined utterances, EOS") {
    Vocab v = testutil::tiny_vocab();
    auto one = encode_source(v, {"alpha"}, 32);
    CHECK(one == std::vector<int>{Vocab::bos_id, v.id_of("alpha"), Vocab::eos_id});

    auto two = encode_source(v, {"alpha", "bravo"}, 32);
    int seps = 0;
    for (int id : two) seps += (id == Vocab::sep_id);
    CHECK(seps == 1);
    CHECK(two.front() == Vocab::bos_id);
    CHECK(two.back() == Vocab::eos_id);
}

TEST_CASE("encode_source truncation drops the oldest tokens first") {
    Vocab v = testutil::tiny_vocab();
    auto ids = encode_source(v, {"alpha bravo charlie", "delta echo"}, 6);
    CHECK(ids.size() == 6);
    CHECK(ids.front() == Vocab::bos_id);
    CHECK(ids.back() == Vocab::eos_id);
    // newest words retained
    CHECK(ids[3] == v.id_of("delta"));
    CHECK(ids[4] == v.id_of("echo"));
}

TEST_CASE("serialize_persona joins with PSEP, ends with EOS; spans skip specials") {
    Vocab v = testutil::tiny_vocab();
    auto ids = serialize_persona(v, {"alpha bravo", "charlie"});
    REQUIRE(ids.size() == 5);
    CHECK(ids[2] == Vocab::persona_sep_id);
    CHECK(ids.back() == Vocab::eos_id);

    auto spans = persona_sentence_spans(ids);
    REQUIRE(spans.size() == 2);
    CHECK(spans[0].begin == 0);
    CHECK(spans[0].end == 2);
    CHECK(spans[1].begin == 3);
    CHECK(spans[1].end == 4);
}

TEST_CASE("uniform-logit model scores ln V on any target") {
    Vocab v = testutil::tiny_vocab();
    Seq2SeqModel model(testutil::tiny_config(), v, Seq2SeqModel::Init::zeros);
    auto source = encode_source(v, {"alpha bravo"}, 32);
    auto target = serialize_persona(v, {"charlie delta"});
    const double value = nll(model, source, target);
    CHECK(value == doctest::Approx(std::log(v.size())).epsilon(1e-6));
}

TEST_CASE("nll is bit-reproducible with dropout disabled") {
    Vocab v = testutil::tiny_vocab();
    Seq2SeqModel model(testutil::tiny_config(16, 3), v);
    auto source = encode_source(v, {"alpha bravo charlie"}, 32);
    auto target = serialize_persona(v, {"delta echo"});
    const double a = nll(model, source, target);
    const double b = nll(model, source, target);
    CHECK(a == b);  // exactly
}

TEST_CASE("teacher-forced per-step probabilities sum to one") {
    Vocab v = testutil::tiny_vocab();
    Seq2SeqModel model(testutil::tiny_config(16, 5), v);
    auto source = encode_source(v, {"alpha bravo"}, 32);
    auto target = serialize_persona(v, {"charlie delta echo"});
    ad::Graph g;
    auto pass = model.teacher_forced(g, source, target, /*with_grad=*/false);
    ad::NodeId probs = g.softmax_rows(pass.logits);
    const ad::Mat& pv = g.value(probs);
    for (int r = 0; r < pv.rows; ++r) {
        double sum = 0.0;
        for (int c = 0; c < pv.cols; ++c) sum += pv.at(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("decode respects the budget and terminates") {
    Vocab v = testutil::tiny_vocab();
    Seq2SeqModel model(testutil::tiny_config(16, 11), v);
    auto source = encode_source(v, {"alpha"}, 32);
    auto out = model.decode(source, DecodeMode::greedy, 1);
    CHECK(out.token_ids.size() <= 1);
    CHECK(out.per_token_logprob.size() == out.token_ids.size());
    CHECK(out.decoder_reps.size() == out.token_ids.size());

    auto [sentences, decode_out] = decode_persona(model, source, DecodeMode::greedy, 1);
    CHECK(sentences.size() <= 1);
}

TEST_CASE("greedy decode is deterministic; text matches token ids") {
    Vocab v = testutil::tiny_vocab();
    Seq2SeqModel model(testutil::tiny_config(16, 13), v);
    auto source = encode_source(v, {"alpha bravo charlie"}, 32);
    auto a = model.decode(source, DecodeMode::greedy, 12);
    auto b = model.decode(source, DecodeMode::greedy, 12);
    CHECK(a.token_ids == b.token_ids);
    CHECK(a.text == b.text);
    CHECK(a.text == model.vocab().decode_tokens(a.token_ids));
}

TEST_CASE("sampled decode is reproducible given the same sample seed") {
    Vocab v = testutil::tiny_vocab();
    Seq2SeqModel model(testutil::tiny_config(16, 13), v);
    auto source = encode_source(v, {"alpha bravo"}, 32);
    auto a = model.decode(source, DecodeMode::sampled, 12, /*sample_seed=*/5, 1.0);
    auto b = model.decode(source, DecodeMode::sampled, 12, /*sample_seed=*/5, 1.0);
    CHECK(a.token_ids == b.token_ids);
}

TEST_CASE("overfit oracle: memorized persona decodes verbatim with tiny nll") {
    Vocab v = testutil::tiny_vocab();
    auto source = encode_source(v, {"alpha bravo charlie", "delta echo"}, 32);
    auto target = serialize_persona(v, {"foxtrot golf", "hotel india"});
    Seq2SeqModel model = overfit_single(v, source, target);

    CHECK(nll(model, source, target) < 0.1);

    auto [sentences, out] = decode_persona(model, source, DecodeMode::greedy, 16);
    REQUIRE(sentences.size() == 2);
    CHECK(sentences[0] == "foxtrot golf");
    CHECK(sentences[1] == "hotel india");
}

TEST_CASE("sentence_reps: single-token, identical-token and hand-computed means") {
    std::vector<std::vector<double>> reps = {
        {1.0, 2.0}, {3.0, 4.0}, {3.0, 4.0}, {0.0, 6.0}, {9.0, 0.0}};

    auto single = sentence_reps(reps, {{0, 1}});
    CHECK(single[0].vector == reps[0]);

    auto same = sentence_reps(reps, {{1, 3}});
    CHECK(same[0].vector == reps[1]);

    auto mean3 = sentence_reps(reps, {{2, 5}});
    CHECK(mean3[0].vector[0] == doctest::Approx((3.0 + 0.0 + 9.0) / 3).epsilon(1e-9));
    CHECK(mean3[0].vector[1] == doctest::Approx((4.0 + 6.0 + 0.0) / 3).epsilon(1e-9));

    CHECK_THROWS_AS(sentence_reps(reps, {{2, 2}}), ArgumentError);   // empty span
    CHECK_THROWS_AS(sentence_reps(reps, {{4, 6}}), ArgumentError);   // out of range
    CHECK_THROWS_AS(sentence_reps(reps, {{0, 2}, {1, 3}}), ArgumentError);  // overlap
}

TEST_CASE("checkpoint round-trip preserves behavior and fingerprints") {
    testutil::TempDir dir("ckpt");
    Vocab v = testutil::tiny_vocab();
    Seq2SeqModel model(testutil::tiny_config(16, 99), v);
    auto source = encode_source(v, {"alpha bravo charlie"}, 32);

    save_checkpoint(model, (dir / "ck").string());
    Seq2SeqModel loaded = load_checkpoint((dir / "ck").string());
    CHECK(loaded.decode(source, DecodeMode::greedy, 8).token_ids ==
          model.decode(source, DecodeMode::greedy, 8).token_ids);
    CHECK(nll(loaded, source, serialize_persona(v, {"delta"})) ==
          nll(model, source, serialize_persona(v, {"delta"})));

    const auto fp1 = checkpoint_fingerprint((dir / "ck").string());
    save_checkpoint(model, (dir / "ck2").string());
    CHECK(fp1 == checkpoint_fingerprint((dir / "ck2").string()));

    // version guard
    testutil::write_file(dir / "ck" / "VERSION", "other-version\n");
    CHECK_THROWS_AS(load_checkpoint((dir / "ck").string()), SchemaError);
}

TEST_CASE("model config validation") {
    ModelConfig bad = testutil::tiny_config();
    bad.n_heads = 3;  // 16 % 3 != 0
    CHECK_THROWS_AS(bad.validate(), ArgumentError);
    ModelConfig ok = testutil::tiny_config();
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("nll gradient matches finite differences on a d=16 model") {
    Vocab v = testutil::tiny_vocab();
    Seq2SeqModel model(testutil::tiny_config(16, 31), v);
    auto source = encode_source(v, {"alpha bravo", "charlie"}, 32);
    auto target = serialize_persona(v, {"delta echo", "foxtrot"});

    auto loss_value = [&]() { return nll(model, source, target); };
    auto accumulate = [&]() {
        ad::Graph g;
        auto pass = model.teacher_forced(g, source, target, /*with_grad=*/true);
        g.backward(g.cross_entropy(pass.logits, target, Vocab::pad_id,
                                   ad::Graph::Reduction::mean));
    };
    CHECK(testutil::max_grad_rel_error(model, loss_value, accumulate, 3, 17) <= 1e-4);
}
