#include "pess/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pess/errors.hpp"
#include "pess/text.hpp"

namespace pess {

using nlohmann::json;

const char* speaker_name(Speaker s) { return s == Speaker::A ? "A" : "B"; }

std::vector<std::string> Dialogue::utterance_texts(Speaker s) const {
    std::vector<std::string> out;
    for (const auto& u : utterances)
        if (u.speaker == s) out.push_back(u.text);
    return out;
}

namespace {

void validate_persona(const std::vector<std::string>& sentences, const std::string& field,
                      int line_no) {
    std::set<std::string> seen;
    for (const auto& s : sentences) {
        std::string norm = normalize_text(s);
        if (norm.empty())
            throw SchemaError("line " + std::to_string(line_no) + ": field '" + field +
                              "' contains an empty persona sentence");
        if (!seen.insert(norm).second)
            throw SchemaError("line " + std::to_string(line_no) + ": field '" + field +
                              "' contains duplicate persona sentence \"" + norm + "\"");
    }
}

json parse_line(const std::string& line, int line_no) {
    try {
        return json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
}

const json& require_field(const json& record, const char* field, int line_no) {
    auto it = record.find(field);
    if (it == record.end())
        throw SchemaError("line " + std::to_string(line_no) + ": missing required field '" +
                          field + "'");
    return *it;
}

std::optional<PersonaProfile> read_persona(const json& record, const char* field, int line_no) {
    auto it = record.find(field);
    if (it == record.end() || it->is_null()) return std::nullopt;
    if (!it->is_array())
        throw SchemaError("line " + std::to_string(line_no) + ": field '" + std::string(field) +
                          "' must be an array of strings");
    PersonaProfile profile;
    for (const auto& s : *it) {
        if (!s.is_string())
            throw SchemaError("line " + std::to_string(line_no) + ": field '" +
                              std::string(field) + "' must contain only strings");
        profile.sentences.push_back(s.get<std::string>());
    }
    if (profile.sentences.empty()) return std::nullopt;
    validate_persona(profile.sentences, field, line_no);
    return profile;
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open file: " + path);
    return in;
}

template <typename TurnFn>
std::vector<Dialogue> load_jsonl(const std::string& path, TurnFn&& read_turn,
                                 bool with_personas) {
    auto in = open_input(path);
    std::vector<Dialogue> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json record = parse_line(line, line_no);

        Dialogue d;
        d.id = require_field(record, "id", line_no).get<std::string>();
        const json& turns = require_field(record, "turns", line_no);
        if (!turns.is_array() || turns.empty())
            throw SchemaError("line " + std::to_string(line_no) +
                              ": field 'turns' must be a non-empty array");
        int index = 0;
        for (const auto& t : turns) {
            Utterance u = read_turn(t, line_no);
            if (normalize_text(u.text).empty())
                throw SchemaError("line " + std::to_string(line_no) +
                                  ": field 'text' is empty after trimming");
            u.index = ++index;
            d.utterances.push_back(std::move(u));
        }
        if (with_personas) {
            d.persona_a = read_persona(record, "persona_a", line_no);
            d.persona_b = read_persona(record, "persona_b", line_no);
        }
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace

std::vector<Dialogue> load_persona_chat(const std::string& path) {
    return load_jsonl(
        path,
        [](const json& t, int line_no) {
            Utterance u;
            std::string speaker = require_field(t, "speaker", line_no).get<std::string>();
            if (speaker == "A")
                u.speaker = Speaker::A;
            else if (speaker == "B")
                u.speaker = Speaker::B;
            else
                throw SchemaError("line " + std::to_string(line_no) +
                                  ": field 'speaker' has unknown value \"" + speaker + "\"");
            u.text = require_field(t, "text", line_no).get<std::string>();
            return u;
        },
        /*with_personas=*/true);
}

std::vector<Dialogue> load_esconv(const std::string& path) {
    return load_jsonl(
        path,
        [](const json& t, int line_no) {
            Utterance u;
            std::string role = require_field(t, "role", line_no).get<std::string>();
            if (role == "seeker")
                u.speaker = Speaker::A;
            else if (role == "supporter")
                u.speaker = Speaker::B;
            else
                throw SchemaError("line " + std::to_string(line_no) +
                                  ": field 'role' has unknown value \"" + role + "\"");
            u.text = require_field(t, "text", line_no).get<std::string>();
            return u;
        },
        /*with_personas=*/false);
}

namespace {

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);  // LF line endings everywhere
    if (!out) throw IoError("cannot write file: " + path);
    return out;
}

}  // namespace

void save_persona_chat(const std::vector<Dialogue>& dialogues, const std::string& path) {
    auto out = open_output(path);
    for (const auto& d : dialogues) {
        json record;
        record["id"] = d.id;
        if (d.persona_a) record["persona_a"] = d.persona_a->sentences;
        if (d.persona_b) record["persona_b"] = d.persona_b->sentences;
        json turns = json::array();
        for (const auto& u : d.utterances)
            turns.push_back({{"speaker", speaker_name(u.speaker)}, {"text", u.text}});
        record["turns"] = std::move(turns);
        out << record.dump() << "\n";
    }
}

void save_esconv(const std::vector<Dialogue>& dialogues, const std::string& path) {
    auto out = open_output(path);
    for (const auto& d : dialogues) {
        json record;
        record["id"] = d.id;
        json turns = json::array();
        for (const auto& u : d.utterances)
            turns.push_back(
                {{"role", u.speaker == Speaker::A ? "seeker" : "supporter"}, {"text", u.text}});
        record["turns"] = std::move(turns);
        out << record.dump() << "\n";
    }
}

// ---------------------------------------------------------------------------
// Toy grammar

namespace {

ToyGrammar build_builtin_grammar() {
    ToyGrammar g;
    // Each trait anchors its paraphrases on a keyword in fixed surface form
    // plus a shared secondary word, so same-trait utterances stay closer in
    // the hashed n-gram space than cross-trait ones.
    g.traits = {
        {"sushi",
         "my favorite food is sushi .",
         {"one of the foods i like is tasty sushi .",
          "eating tasty sushi rolls makes my whole evening .",
          "i always order tasty sushi rolls when we go out ."},
         {"tasty sushi is such a nice treat .", "i hope you get some good sushi soon ."}},
        {"rap",
         "i listen to rap music .",
         {"i love hearing the rap hip hop music .",
          "rap music and hip hop beats keep me moving .",
          "my playlist is mostly rap music with some hip hop ."},
         {"rap music has so much energy .", "a good rap track can lift the whole day ."}},
        {"marathon",
         "i run a marathon every year .",
         {"my marathon training starts before sunrise .",
          "marathon training takes over my weekend mornings .",
          "i finished another marathon race on sunday ."},
         {"marathon training takes real dedication .", "running a marathon sounds exhausting ."}},
        {"guitar",
         "i play the guitar .",
         {"i practice guitar chords late at night .",
          "strumming chords on my guitar helps me relax .",
          "playing chords on my old guitar is pure joy ."},
         {"guitar chords are so soothing .", "i would love to hear you play guitar ."}},
        {"garden",
         "i grow vegetables in my garden .",
         {"my garden gave me a basket of vegetables .",
          "i spent the morning weeding vegetables in the garden .",
          "the garden vegetables came in early this spring ."},
         {"garden vegetables taste the best .", "your garden must look lovely ."}},
        {"mystery",
         "i read mystery novels .",
         {"i stayed up reading another mystery story .",
          "a good mystery story keeps me guessing all night .",
          "my shelf is full of mystery and detective stories ."},
         {"a good mystery is hard to put down .", "detective stories keep you guessing ."}},
        {"chess",
         "i play chess at the local club .",
         {"i won two chess games at the club last night .",
          "our chess club meets every thursday evening .",
          "studying chess openings for the club is my quiet hobby ."},
         {"chess takes so much patience .", "you must be sharp to win at chess ."}},
        {"bread",
         "i bake bread every morning .",
         {"the smell of bread from the oven fills my kitchen .",
          "i pulled two loaves of bread from the oven today .",
          "kneading bread dough for the oven calms me down ."},
         {"bread from the oven smells amazing .", "baking bread every day takes discipline ."}},
        {"telescope",
         "i watch the stars with my telescope .",
         {"my telescope showed the rings of saturn last night .",
          "watching the stars through my telescope never gets old .",
          "i drove out of town to see the stars with my telescope ."},
         {"the stars are full of wonders .", "a telescope opens up the whole sky ."}},
        {"bicycle",
         "i ride my bicycle to work .",
         {"my bicycle commute is the best part of the day .",
          "i fixed a flat on my bicycle before the commute .",
          "the bicycle commute to work clears my head ."},
         {"a bicycle commute keeps you fit .", "riding a bicycle to work sounds refreshing ."}},
        {"watercolors",
         "i paint landscapes with watercolors .",
         {"my watercolors bring the landscapes to life .",
          "i spent the afternoon painting landscapes in watercolors .",
          "watercolors and landscape sketches cover my desk ."},
         {"watercolor landscapes are beautiful .", "painting sounds like a peaceful hobby ."}},
        {"camping",
         "i go camping in the mountains .",
         {"camping in the mountains is my favorite escape .",
          "we took our camping gear up to the mountains .",
          "i pitched my camping tent high in the mountains ."},
         {"camping in the mountains sounds great .", "camping trips make the best memories ."}},
        {"spanish",
         "i am learning to speak spanish .",
         {"my spanish lessons are going really well .",
          "i practiced spanish verbs on the bus to my lessons .",
          "speaking spanish in my lessons gets easier every week ."},
         {"learning spanish is a big project .", "spanish is a beautiful language ."}},
        {"dogs",
         "i have two rescue dogs .",
         {"my rescue dogs chased squirrels all morning .",
          "walking my two rescue dogs is my daily routine .",
          "the rescue dogs greet me at the door every evening ."},
         {"rescue dogs are the sweetest .", "two dogs must keep you on your toes ."}},
        {"coffee",
         "i roast my own coffee beans .",
         {"i roast a fresh batch of coffee beans each week .",
          "the coffee beans i roast at home smell amazing .",
          "my morning starts with coffee from beans i roast myself ."},
         {"home roasted coffee must smell great .", "roasting your own coffee beans is impressive ."}},
        {"swimming",
         "i swim laps before sunrise .",
         {"the pool is empty when i swim my laps at dawn .",
          "i swam forty laps in the pool this morning .",
          "swimming laps at the pool clears my head ."},
         {"swimming laps that early takes willpower .", "a quiet pool at dawn sounds peaceful ."}},
    };
    g.distractors = {
        "the weather has been strange lately .",
        "i did not sleep much last night .",
        "work kept me busy all week .",
        "the traffic this morning was terrible .",
        "i finally cleaned out the closet .",
        "my neighbor stopped by to say hello .",
        "the weekend went by far too fast .",
        "i keep forgetting where i put my keys .",
    };
    g.generic_reactions = {
        "that sounds really interesting .",
        "tell me more about that .",
        "i know exactly what you mean .",
        "that must keep you busy .",
        "how long have you been doing that ?",
        "that is wonderful to hear .",
        "i see what you mean .",
        "sounds like quite a week .",
    };
    return g;
}

}  // namespace

const ToyGrammar& builtin_toy_grammar() {
    static const ToyGrammar grammar = build_builtin_grammar();
    return grammar;
}

int toy_trait_inventory_size() {
    return static_cast<int>(builtin_toy_grammar().traits.size());
}

std::optional<std::string> ToyGrammar::trait_of_utterance(const std::string& normalized_text) const {
    for (const auto& t : traits)
        for (const auto& u : t.utterances)
            if (normalize_text(u) == normalized_text) return t.slug;
    return std::nullopt;
}

const ToyTrait* ToyGrammar::trait_by_slug(const std::string& slug) const {
    for (const auto& t : traits)
        if (t.slug == slug) return &t;
    return nullptr;
}

std::string ToyGrammar::to_json() const {
    json j;
    j["traits"] = json::array();
    for (const auto& t : traits)
        j["traits"].push_back({{"slug", t.slug},
                               {"persona", t.persona},
                               {"utterances", t.utterances},
                               {"reactions", t.reactions}});
    j["distractors"] = distractors;
    j["generic_reactions"] = generic_reactions;
    return j.dump(2);
}

ToyCorpus make_toy_corpus(int num_dialogues, int num_traits, std::uint64_t seed) {
    if (num_dialogues < 1) throw ArgumentError("num_dialogues must be positive");
    const ToyGrammar& full = builtin_toy_grammar();
    const int inventory = static_cast<int>(full.traits.size());
    if (num_traits < 1 || num_traits > inventory)
        throw ArgumentError("num_traits must be in [1, " + std::to_string(inventory) +
                            "], the built-in trait inventory size");

    ToyCorpus corpus;
    corpus.grammar.traits.assign(full.traits.begin(), full.traits.begin() + num_traits);
    corpus.grammar.distractors = full.distractors;
    corpus.grammar.generic_reactions = full.generic_reactions;

    std::mt19937_64 rng(seed);
    auto pick = [&rng](size_t n) { return static_cast<size_t>(rng() % n); };

    for (int di = 0; di < num_dialogues; ++di) {
        Dialogue d;
        {
            std::ostringstream id;
            id << "toy-";
            id.fill('0');
            id.width(4);
            id << di;
            d.id = id.str();
        }

        // Pick 2-3 distinct traits (capped by availability).
        int want = 2 + static_cast<int>(pick(2));
        want = std::min(want, num_traits);
        want = std::max(want, 1);
        std::vector<int> order(num_traits);
        std::iota(order.begin(), order.end(), 0);
        for (int i = num_traits - 1; i > 0; --i)
            std::swap(order[i], order[pick(static_cast<size_t>(i + 1))]);
        std::vector<int> chosen(order.begin(), order.begin() + want);

        PersonaProfile persona;
        for (int ti : chosen) persona.sentences.push_back(corpus.grammar.traits[ti].persona);
        d.persona_a = persona;

        // One (A, B) pair per trait, with occasional distractor pairs mixed in.
        struct Pair {
            std::string a, b;
        };
        std::vector<Pair> pairs;
        for (int ti : chosen) {
            const ToyTrait& t = corpus.grammar.traits[ti];
            Pair p;
            p.a = t.utterances[pick(t.utterances.size())];
            if (pick(2) == 0)
                p.b = t.reactions[pick(t.reactions.size())];
            else
                p.b = corpus.grammar.generic_reactions[pick(corpus.grammar.generic_reactions.size())];
            pairs.push_back(std::move(p));
        }
        int n_distract = static_cast<int>(pick(2));  // 0 or 1
        for (int k = 0; k < n_distract; ++k) {
            Pair p;
            p.a = corpus.grammar.distractors[pick(corpus.grammar.distractors.size())];
            p.b = corpus.grammar.generic_reactions[pick(corpus.grammar.generic_reactions.size())];
            pairs.insert(pairs.begin() + static_cast<long>(pick(pairs.size() + 1)), std::move(p));
        }
        // End on a trait-aware reaction so the final response depends on the
        // speaker's persona.
        {
            const ToyTrait& t = corpus.grammar.traits[chosen.back()];
            Pair p;
            p.a = t.utterances[pick(t.utterances.size())];
            p.b = t.reactions[pick(t.reactions.size())];
            pairs.push_back(std::move(p));
        }

        int index = 0;
        for (const auto& p : pairs) {
            d.utterances.push_back({Speaker::A, p.a, ++index});
            d.utterances.push_back({Speaker::B, p.b, ++index});
        }
        corpus.dialogues.push_back(std::move(d));
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Splits and example construction

Splits split_examples(const std::vector<Dialogue>& dialogues, SplitRatios ratios,
                      std::uint64_t seed) {
    const double sum = ratios.train + ratios.valid + ratios.test;
    if (std::abs(sum - 1.0) > 1e-9)
        throw ArgumentError("split ratios must sum to 1, got " + std::to_string(sum));
    if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0)
        throw ArgumentError("split ratios must be nonnegative");

    std::vector<size_t> order(dialogues.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng() % i]);

    const double n = static_cast<double>(dialogues.size());
    // Largest-remainder apportionment keeps every size within 1 of exact.
    double exact[3] = {ratios.train * n, ratios.valid * n, ratios.test * n};
    size_t sizes[3];
    double rem[3];
    size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        sizes[i] = static_cast<size_t>(std::floor(exact[i]));
        rem[i] = exact[i] - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    while (assigned < dialogues.size()) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (rem[i] > rem[best]) best = i;
        ++sizes[best];
        rem[best] = -1.0;
        ++assigned;
    }

    Splits out;
    size_t pos = 0;
    auto take = [&](std::vector<Dialogue>& dst, size_t count) {
        for (size_t i = 0; i < count; ++i) dst.push_back(dialogues[order[pos++]]);
    };
    take(out.train, sizes[0]);
    take(out.valid, sizes[1]);
    take(out.test, sizes[2]);
    return out;
}

std::vector<ExtractionExample> extraction_examples(const std::vector<Dialogue>& dialogues) {
    std::vector<ExtractionExample> out;
    auto add = [&out](const Dialogue& d, Speaker s, const std::optional<PersonaProfile>& persona) {
        if (!persona || persona->empty()) return;
        ExtractionExample ex;
        ex.dialogue_id = d.id;
        for (const auto& text : d.utterance_texts(s)) {
            std::string norm = normalize_text(text);
            if (!norm.empty()) ex.source_utterances.push_back(std::move(norm));
        }
        if (ex.source_utterances.empty()) return;
        for (const auto& p : persona->sentences)
            ex.target_persona.sentences.push_back(normalize_text(p));
        out.push_back(std::move(ex));
    };
    for (const auto& d : dialogues) {
        add(d, Speaker::A, d.persona_a);
        add(d, Speaker::B, d.persona_b);
    }
    return out;
}

std::vector<GenerationExample> generation_examples(const std::vector<Dialogue>& dialogues) {
    std::vector<GenerationExample> out;
    for (const auto& d : dialogues) {
        int target = -1;
        for (int i = static_cast<int>(d.utterances.size()) - 1; i >= 1; --i) {
            if (d.utterances[i].speaker == Speaker::B &&
                d.utterances[i - 1].speaker == Speaker::A) {
                target = i;
                break;
            }
        }
        if (target < 0) continue;
        GenerationExample ex;
        ex.dialogue_id = d.id;
        ex.history.assign(d.utterances.begin(), d.utterances.begin() + target);
        ex.target_response = d.utterances[static_cast<size_t>(target)].text;
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace pess
