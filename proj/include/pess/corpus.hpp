#pragma once

#include <optional>
#include <string>
#include <vector>

namespace pess {

enum class Speaker { A, B };

const char* speaker_name(Speaker s);

struct Utterance {
    Speaker speaker = Speaker::A;
    std::string text;
    int index = 0;  // 1-based turn ordinal within the dialogue
};

struct PersonaProfile {
    std::vector<std::string> sentences;

    bool empty() const { return sentences.empty(); }
};

struct Dialogue {
    std::string id;
    std::vector<Utterance> utterances;
    std::optional<PersonaProfile> persona_a;
    std::optional<PersonaProfile> persona_b;

    std::vector<std::string> utterance_texts(Speaker s) const;
};

// Source utterances of one speaker paired with that speaker's ground-truth
// persona; the unit the extractor trains on.
struct ExtractionExample {
    std::string dialogue_id;
    std::vector<std::string> source_utterances;
    PersonaProfile target_persona;
};

// Dialogue history (ending with an A turn) paired with B's next response.
struct GenerationExample {
    std::string dialogue_id;
    std::vector<Utterance> history;
    std::string target_response;
    std::optional<std::vector<std::string>> inferred_persona;
};

// ---------------------------------------------------------------------------
// Loading / saving

std::vector<Dialogue> load_persona_chat(const std::string& path);
std::vector<Dialogue> load_esconv(const std::string& path);

void save_persona_chat(const std::vector<Dialogue>& dialogues, const std::string& path);
void save_esconv(const std::vector<Dialogue>& dialogues, const std::string& path);

// ---------------------------------------------------------------------------
// Synthetic toy corpus

struct ToyTrait {
    std::string slug;
    std::string persona;                   // canonical persona sentence
    std::vector<std::string> utterances;   // paraphrases an A speaker may say
    std::vector<std::string> reactions;    // trait-aware B responses
};

// The generator grammar: a fixed trait inventory plus small-talk filler.
// `trait_of_utterance` is the inverse map from a normalized utterance back
// to the trait it paraphrases (empty optional for distractors).
struct ToyGrammar {
    std::vector<ToyTrait> traits;
    std::vector<std::string> distractors;
    std::vector<std::string> generic_reactions;

    std::optional<std::string> trait_of_utterance(const std::string& normalized_text) const;
    const ToyTrait* trait_by_slug(const std::string& slug) const;
    std::string to_json() const;
};

const ToyGrammar& builtin_toy_grammar();
int toy_trait_inventory_size();

struct ToyCorpus {
    std::vector<Dialogue> dialogues;
    ToyGrammar grammar;  // restricted to the traits actually in use
};

ToyCorpus make_toy_corpus(int num_dialogues, int num_traits, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Splits and example construction

struct SplitRatios {
    double train = 0.7;
    double valid = 0.2;
    double test = 0.1;
};

struct Splits {
    std::vector<Dialogue> train;
    std::vector<Dialogue> valid;
    std::vector<Dialogue> test;
};

Splits split_examples(const std::vector<Dialogue>& dialogues, SplitRatios ratios,
                      std::uint64_t seed);

// One example per (dialogue, speaker) pair that has a ground-truth persona.
std::vector<ExtractionExample> extraction_examples(const std::vector<Dialogue>& dialogues);

// One example per dialogue: history up to the last B turn preceded by an A
// turn, that B turn as the target. Dialogues without such a turn are skipped.
std::vector<GenerationExample> generation_examples(const std::vector<Dialogue>& dialogues);

}  // namespace pess
