#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "xrag/bridge.hpp"
#include "xrag/common.hpp"
#include "xrag/datastore.hpp"
#include "xrag/tokenizer.hpp"

namespace xrag {

// Synthetic fact world: entities carry one value per attribute; one document
// per entity renders the facts in a fixed sentence order. Entity names are
// two-token compounds drawn from shared part lists, so held-out entities are
// novel combinations of trained name parts. Each attribute has a disjoint
// value vocabulary: an answer token identifies its attribute by surface form
// alone, which keeps the guessing floor at 1/|values| for unseen entities.
struct WorldSpec {
    int n_entities = 5000;
    int values_per_attribute = 14;
    double frac_lm = 0.6;
    double frac_instruction = 0.3;
    double frac_eval = 0.1;
    int target_doc_len = 41;
    uint64_t seed = 0;

    void validate() const {
        if (n_entities < 10) throw config_error("world: n_entities must be >= 10");
        if (values_per_attribute < 2) throw config_error("world: need >= 2 values per attribute");
        if (values_per_attribute > 80) throw config_error("world: at most 80 values per attribute");
        if (std::fabs(frac_lm + frac_instruction + frac_eval - 1.0) > 1e-6)
            throw config_error("world: split fractions must sum to 1");
        if (frac_lm <= 0 || frac_instruction <= 0 || frac_eval <= 0)
            throw config_error("world: all split fractions must be positive");
    }
};

inline constexpr int kNumAttributes = 8;

enum class Split { lm_pretrain = 0, instruction = 1, eval_heldout = 2 };

struct Entity {
    int id = 0;
    std::string first, second;                 // two-token name
    std::array<int, kNumAttributes> value_idx{};  // index into each attribute's vocabulary

    std::string name() const { return first + " " + second; }
};

struct FactWorld {
    WorldSpec spec;
    std::vector<std::string> attr_names;                 // [kNumAttributes]
    std::vector<std::vector<std::string>> attr_values;   // per attribute, disjoint surface forms
    std::vector<Entity> entities;
    std::vector<int> split;  // per entity, values of Split

    using Values = std::array<int, kNumAttributes>;

    const std::string& value_of(int entity, int attr) const {
        return attr_values[static_cast<size_t>(attr)]
                          [static_cast<size_t>(entities[static_cast<size_t>(entity)]
                                                   .value_idx[static_cast<size_t>(attr)])];
    }

    const Values& values_of(int e) const { return entities[static_cast<size_t>(e)].value_idx; }

    const std::string& value_str(int attr, int vi) const {
        return attr_values[static_cast<size_t>(attr)][static_cast<size_t>(vi)];
    }

    // "e1 e2 is a <kind> . the <attr> is <value> . ..." — attribute order is
    // canonical, so free-running reconstruction only has to fill the values.
    std::string doc_text_values(int e, const Values& v) const {
        const Entity& en = entities[static_cast<size_t>(e)];
        std::string s = en.name() + " is a " + value_str(0, v[0]) + " .";
        for (int a = 1; a < kNumAttributes; ++a)
            s += " the " + attr_names[static_cast<size_t>(a)] + " is " +
                 value_str(a, v[static_cast<size_t>(a)]) + " .";
        return s;
    }

    std::string doc_text(int e) const { return doc_text_values(e, values_of(e)); }

    std::string question_text(int e, int attr) const {
        return "what is the " + attr_names[static_cast<size_t>(attr)] + " of " +
               entities[static_cast<size_t>(e)].name() + " ?";
    }

    std::string answer_text(int e, int attr) const { return value_of(e, attr); }

    // Compressed rendering: name parts + all values in canonical order.
    std::string fact_list_text_values(int e, const Values& v) const {
        std::string s = entities[static_cast<size_t>(e)].name();
        for (int a = 0; a < kNumAttributes; ++a) s += " " + value_str(a, v[static_cast<size_t>(a)]);
        return s;
    }

    std::string fact_list_text(int e) const { return fact_list_text_values(e, values_of(e)); }

    std::string summary_question_text(int e) const {
        return "give a one sentence summary of " + entities[static_cast<size_t>(e)].name();
    }
    std::string summary_answer_text_values(int e, const Values& v) const {
        return entities[static_cast<size_t>(e)].name() + " is a " + value_str(0, v[0]) + " .";
    }
    std::string summary_answer_text(int e) const {
        return entities[static_cast<size_t>(e)].name() + " is a " + value_of(e, 0) + " .";
    }

    std::vector<int> entities_in(Split s) const {
        std::vector<int> out;
        for (size_t i = 0; i < split.size(); ++i)
            if (split[i] == static_cast<int>(s)) out.push_back(static_cast<int>(i));
        return out;
    }

    std::vector<int> non_heldout_entities() const {
        std::vector<int> out;
        for (size_t i = 0; i < split.size(); ++i)
            if (split[i] != static_cast<int>(Split::eval_heldout)) out.push_back(static_cast<int>(i));
        return out;
    }
};

namespace detail {

inline const std::array<char, 16>& world_consonants() {
    static const std::array<char, 16> c = {'b', 'd', 'f', 'g', 'j', 'k', 'l', 'm',
                                           'n', 'p', 'r', 's', 't', 'v', 'w', 'z'};
    return c;
}
inline const std::array<char, 5>& world_vowels() {
    static const std::array<char, 5> v = {'a', 'e', 'i', 'o', 'u'};
    return v;
}

// 80 distinct three-or-four-letter forms per suffix class; suffixes keep the
// name-part and per-attribute vocabularies mutually disjoint.
inline std::vector<std::string> syllable_forms(const std::string& suffix) {
    std::vector<std::string> out;
    for (char v : world_vowels())
        for (char c : world_consonants()) out.push_back(std::string{c, v} + suffix);
    return out;
}

}  // namespace detail

inline FactWorld generate_world(const WorldSpec& spec) {
    spec.validate();
    FactWorld w;
    w.spec = spec;
    w.attr_names = {"kind", "color", "size", "origin", "material", "shape", "role", "status"};
    static const std::array<const char*, kNumAttributes> suffixes = {"th", "sk", "mp", "ld",
                                                                     "nt", "rk", "st", "sh"};
    for (int a = 0; a < kNumAttributes; ++a) {
        auto forms = detail::syllable_forms(suffixes[static_cast<size_t>(a)]);
        forms.resize(static_cast<size_t>(spec.values_per_attribute));
        w.attr_values.push_back(std::move(forms));
    }

    const auto firsts = detail::syllable_forms("r");
    const auto seconds = detail::syllable_forms("n");
    std::vector<std::pair<int, int>> name_pairs;
    for (size_t i = 0; i < firsts.size(); ++i)
        for (size_t j = 0; j < seconds.size(); ++j)
            name_pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
    if (spec.n_entities > static_cast<int>(name_pairs.size()))
        throw config_error("world: n_entities exceeds distinct name combinations (" +
                           std::to_string(name_pairs.size()) + ")");
    auto rng = make_rng(spec.seed, "world-names");
    std::shuffle(name_pairs.begin(), name_pairs.end(), rng);

    auto vrng = make_rng(spec.seed, "world-values");
    for (int e = 0; e < spec.n_entities; ++e) {
        Entity en;
        en.id = e;
        en.first = firsts[static_cast<size_t>(name_pairs[static_cast<size_t>(e)].first)];
        en.second = seconds[static_cast<size_t>(name_pairs[static_cast<size_t>(e)].second)];
        std::uniform_int_distribution<int> dv(0, spec.values_per_attribute - 1);
        for (int a = 0; a < kNumAttributes; ++a) en.value_idx[static_cast<size_t>(a)] = dv(vrng);
        w.entities.push_back(std::move(en));
    }

    std::vector<int> order(static_cast<size_t>(spec.n_entities));
    for (int i = 0; i < spec.n_entities; ++i) order[static_cast<size_t>(i)] = i;
    auto srng = make_rng(spec.seed, "world-splits");
    std::shuffle(order.begin(), order.end(), srng);
    const int n_lm = static_cast<int>(std::lround(spec.frac_lm * spec.n_entities));
    const int n_instr = static_cast<int>(std::lround(spec.frac_instruction * spec.n_entities));
    require(n_lm >= 1 && n_instr >= 1 && n_lm + n_instr < spec.n_entities,
            "world: split fractions leave an empty split");
    w.split.assign(static_cast<size_t>(spec.n_entities), static_cast<int>(Split::eval_heldout));
    for (int i = 0; i < n_lm; ++i)
        w.split[static_cast<size_t>(order[static_cast<size_t>(i)])] = static_cast<int>(Split::lm_pretrain);
    for (int i = n_lm; i < n_lm + n_instr; ++i)
        w.split[static_cast<size_t>(order[static_cast<size_t>(i)])] = static_cast<int>(Split::instruction);
    return w;
}

// Retrieval corpus: one record per entity, doc_id = entity id.
inline std::vector<DocumentRecord> make_documents(const FactWorld& w, const Tokenizer& tk) {
    std::vector<DocumentRecord> docs;
    for (int e = 0; e < w.spec.n_entities; ++e) {
        DocumentRecord d;
        d.doc_id = e;
        d.text = w.doc_text(e);
        d.tokens = tk.encode(d.text);
        for (int t : d.tokens) require(t != Tokenizer::kUnk, "corpus: document word missing from vocab");
        docs.push_back(std::move(d));
    }
    return docs;
}

// Everything the tokenizer must cover: documents, questions, answers,
// template words, and the fact-list renderings. The full value vocabulary is
// listed explicitly — counterfactual redraws can emit values no entity holds.
inline std::vector<std::string> tokenizer_training_texts(const FactWorld& w) {
    std::vector<std::string> texts;
    for (int e = 0; e < w.spec.n_entities; ++e) {
        texts.push_back(w.doc_text(e));
        texts.push_back(w.fact_list_text(e));
        texts.push_back(w.summary_question_text(e));
    }
    for (int a = 0; a < kNumAttributes; ++a) {
        texts.push_back(w.question_text(0, a));
        for (int v = 0; v < w.spec.values_per_attribute; ++v) texts.push_back(w.value_str(a, v));
    }
    for (const auto& word : all_template_words()) texts.push_back(word);
    return texts;
}

// ---- base-LM pretraining streams ----

struct StreamOptions {
    int rag_qa_per_entity = 2;   // full-document context QA
    int list_qa_per_entity = 1;  // fact-list context QA
    int noctx_qa_per_entity = 1; // answer-from-memory QA (format floor)
    // Strides dilute the two answer styles that compete with context reading:
    // only every k-th entity emits noctx / summarize streams. 1 = every entity.
    int noctx_every = 1;
    int summarize_every = 1;
    double val_fraction = 0.05;
};

struct StreamSet {
    std::vector<std::vector<int>> train;
    std::vector<std::vector<int>> val;
};

namespace detail {

inline std::vector<int> stream_of(const Tokenizer& tk, const std::string& text) {
    std::vector<int> ids;
    ids.push_back(Tokenizer::kBos);
    for (int id : tk.encode(text)) ids.push_back(id);
    ids.push_back(Tokenizer::kEos);
    return ids;
}

// Paraphrase template rendered as plain text: [X] -> ctx, [D] -> target.
inline std::string render_template_text(const PromptTemplate& tpl, const std::string& ctx,
                                        const std::string& target) {
    std::string out;
    for (const auto& p : tpl.pieces) {
        std::string piece;
        switch (p.kind) {
            case PromptTemplate::Kind::Word: piece = p.word; break;
            case PromptTemplate::Kind::Context: piece = ctx; break;
            case PromptTemplate::Kind::Target: piece = target; break;
            case PromptTemplate::Kind::Query: throw config_error("render: unexpected [Q]");
        }
        if (!piece.empty()) out += (out.empty() ? "" : " ") + piece;
    }
    return out;
}

inline std::string task_text(const FactWorld& w, const std::string& ctx, const std::string& q,
                             const std::string& a) {
    (void)w;
    std::string s = "context:";
    if (!ctx.empty()) s += " " + ctx;
    s += " question: " + q + " answer: " + a;
    return s;
}

}  // namespace detail

// Streams seen by the base LM: documents, template-framed copy and expansion
// examples, and QA in the three context formats. Held-out entities never
// appear (checked by the leakage scan in tests).
//
// Context-conditioned streams carry counterfactual values redrawn per stream:
// with the corpus this small the model would otherwise memorize entity->value
// and never build the context-reading circuit that held-out entities need.
// Only the bare document and the no-context QA keep the true values (the
// memory floor).
inline StreamSet build_lm_pretrain_streams(const FactWorld& w, const Tokenizer& tk,
                                           const StreamOptions& opt, uint64_t seed) {
    const auto lm_entities = w.entities_in(Split::lm_pretrain);
    require(!lm_entities.empty(), "streams: empty lm-pretrain split");
    require(opt.noctx_every >= 1 && opt.summarize_every >= 1, "streams: strides must be >= 1");
    const auto& pool = paraphrase_pool();
    auto trng = make_rng(seed, "stream-templates");
    std::uniform_int_distribution<int> dt(0, static_cast<int>(pool.size()) - 1);
    auto vrng = make_rng(seed, "stream-counterfactual");
    std::uniform_int_distribution<int> dv(0, w.spec.values_per_attribute - 1);
    auto redraw = [&] {
        FactWorld::Values v;
        for (int a = 0; a < kNumAttributes; ++a) v[static_cast<size_t>(a)] = dv(vrng);
        return v;
    };

    std::vector<std::vector<int>> streams;
    for (size_t idx = 0; idx < lm_entities.size(); ++idx) {
        const int e = lm_entities[idx];
        streams.push_back(detail::stream_of(tk, w.doc_text(e)));
        {
            const std::string cf = w.doc_text_values(e, redraw());
            streams.push_back(
                detail::stream_of(tk, detail::render_template_text(pool[static_cast<size_t>(dt(trng))], cf, cf)));
        }
        {
            const auto v = redraw();
            streams.push_back(detail::stream_of(
                tk, detail::render_template_text(pool[static_cast<size_t>(dt(trng))],
                                                 w.fact_list_text_values(e, v), w.doc_text_values(e, v))));
        }
        for (int k = 0; k < opt.rag_qa_per_entity; ++k) {
            const int a = static_cast<int>((idx + static_cast<size_t>(3 * k)) % kNumAttributes);
            const auto v = redraw();
            streams.push_back(detail::stream_of(
                tk, detail::task_text(w, w.doc_text_values(e, v), w.question_text(e, a),
                                      w.value_str(a, v[static_cast<size_t>(a)]))));
        }
        for (int k = 0; k < opt.list_qa_per_entity; ++k) {
            const int a = static_cast<int>((idx + 5 + static_cast<size_t>(k)) % kNumAttributes);
            const auto v = redraw();
            streams.push_back(detail::stream_of(
                tk, detail::task_text(w, w.fact_list_text_values(e, v), w.question_text(e, a),
                                      w.value_str(a, v[static_cast<size_t>(a)]))));
        }
        for (int k = 0; k < opt.noctx_qa_per_entity; ++k) {
            const int a = static_cast<int>((idx + 1 + static_cast<size_t>(k)) % kNumAttributes);
            streams.push_back(detail::stream_of(
                tk, detail::task_text(w, "", w.question_text(e, a), w.answer_text(e, a))));
        }
        {
            const auto v = redraw();
            streams.push_back(detail::stream_of(
                tk, detail::task_text(w, w.doc_text_values(e, v), w.summary_question_text(e),
                                      w.summary_answer_text_values(e, v))));
        }
    }
    auto srng = make_rng(seed, "stream-shuffle");
    std::shuffle(streams.begin(), streams.end(), srng);
    StreamSet out;
    const size_t n_val = std::max<size_t>(1, static_cast<size_t>(opt.val_fraction * streams.size()));
    out.val.assign(streams.begin(), streams.begin() + static_cast<int64_t>(n_val));
    out.train.assign(streams.begin() + static_cast<int64_t>(n_val), streams.end());
    return out;
}

// ---- stage-1 paraphrase pairs ----

struct ParaphrasePair {
    int entity_id;
    int template_idx;
};

// Non-held-out documents cycled in shuffled order; template drawn uniformly
// per pair.
inline std::vector<ParaphrasePair> build_pretrain_pairs(const FactWorld& w, int n_pairs,
                                                        uint64_t seed) {
    require(n_pairs >= 1, "pretrain pairs: need n >= 1");
    const auto& pool = paraphrase_pool();
    require(!pool.empty(), "pretrain pairs: empty template pool");
    auto ents = w.non_heldout_entities();
    require(!ents.empty(), "pretrain pairs: no candidate documents");
    auto erng = make_rng(seed, "pairs-entities");
    auto trng = make_rng(seed, "pairs-templates");
    std::uniform_int_distribution<int> dt(0, static_cast<int>(pool.size()) - 1);
    std::vector<ParaphrasePair> out;
    out.reserve(static_cast<size_t>(n_pairs));
    size_t cursor = ents.size();
    for (int i = 0; i < n_pairs; ++i) {
        if (cursor >= ents.size()) {
            std::shuffle(ents.begin(), ents.end(), erng);
            cursor = 0;
        }
        out.push_back({ents[cursor++], dt(trng)});
    }
    return out;
}

// ---- stage-2 instruction set ----

struct InstructionExample {
    std::string context;  // empty for open-domain QA until retrieval resolves it
    std::string question;
    std::string answer;
    std::string category;  // reading_comprehension | open_domain_qa | summarization
    int entity_id = -1;
    int attr = -1;
};

struct BlendWeights {
    double rc = 0.511;
    double qa = 0.403;
    double summ = 0.086;

    void validate() const {
        if (std::fabs(rc + qa + summ - 1.0) > 1e-6)
            throw config_error("blend: weights must sum to 1");
        if (rc < 0 || qa < 0 || summ < 0) throw config_error("blend: negative weight");
    }
};

inline std::vector<InstructionExample> build_instruction_set(const FactWorld& w,
                                                             const BlendWeights& blend, int n_items,
                                                             uint64_t seed) {
    blend.validate();
    require(n_items >= 1, "instruction set: need n >= 1");
    const auto ents = w.entities_in(Split::instruction);
    require(!ents.empty(), "instruction set: empty instruction split");
    auto rng = make_rng(seed, "instruction-set");
    std::uniform_real_distribution<double> du(0.0, 1.0);
    std::uniform_int_distribution<int> de(0, static_cast<int>(ents.size()) - 1);
    std::uniform_int_distribution<int> da(0, kNumAttributes - 1);
    std::vector<InstructionExample> out;
    out.reserve(static_cast<size_t>(n_items));
    for (int i = 0; i < n_items; ++i) {
        const double u = du(rng);
        const int e = ents[static_cast<size_t>(de(rng))];
        InstructionExample ex;
        ex.entity_id = e;
        if (u < blend.rc) {
            const int a = da(rng);
            ex.category = "reading_comprehension";
            ex.context = w.doc_text(e);
            ex.question = w.question_text(e, a);
            ex.answer = w.answer_text(e, a);
            ex.attr = a;
        } else if (u < blend.rc + blend.qa) {
            const int a = da(rng);
            ex.category = "open_domain_qa";
            ex.question = w.question_text(e, a);
            ex.answer = w.answer_text(e, a);
            ex.attr = a;
        } else {
            ex.category = "summarization";
            ex.context = w.doc_text(e);
            ex.question = w.summary_question_text(e);
            ex.answer = w.summary_answer_text(e);
        }
        out.push_back(std::move(ex));
    }
    return out;
}

// ---- held-out evaluation items ----

struct EvalItem {
    int item_id;
    int entity_id;
    int attr;
    std::string question;
    std::vector<std::string> golds;
};

inline std::vector<EvalItem> build_eval_items(const FactWorld& w, int n_items, uint64_t seed) {
    require(n_items >= 1, "eval items: need n >= 1");
    const auto ents = w.entities_in(Split::eval_heldout);
    require(!ents.empty(), "eval items: empty held-out split");
    std::vector<std::pair<int, int>> keys;
    for (int e : ents)
        for (int a = 0; a < kNumAttributes; ++a) keys.emplace_back(e, a);
    require(n_items <= static_cast<int>(keys.size()),
            "eval items: n exceeds held-out (entity, attribute) pairs");
    auto rng = make_rng(seed, "eval-items");
    std::shuffle(keys.begin(), keys.end(), rng);
    std::vector<EvalItem> out;
    for (int i = 0; i < n_items; ++i) {
        const auto [e, a] = keys[static_cast<size_t>(i)];
        out.push_back({i, e, a, w.question_text(e, a), {w.answer_text(e, a)}});
    }
    return out;
}

// ---- contrastive pairs for the embedder ----

inline std::vector<std::pair<std::vector<int>, std::vector<int>>> build_contrastive_pairs(
    const FactWorld& w, const Tokenizer& tk, int per_entity, uint64_t seed) {
    require(per_entity >= 1, "contrastive pairs: per_entity >= 1");
    auto ents = w.non_heldout_entities();
    auto rng = make_rng(seed, "contrastive-pairs");
    std::shuffle(ents.begin(), ents.end(), rng);
    std::vector<std::pair<std::vector<int>, std::vector<int>>> out;
    for (size_t idx = 0; idx < ents.size(); ++idx) {
        const int e = ents[idx];
        const auto doc = tk.encode(w.doc_text(e));
        for (int k = 0; k < per_entity; ++k) {
            const int a = static_cast<int>((idx + static_cast<size_t>(3 * k)) % kNumAttributes);
            out.emplace_back(tk.encode(w.question_text(e, a)), doc);
        }
        // Bare-name query: queries are dominated by the entity mention, so
        // give that signal its own positive.
        out.emplace_back(tk.encode(w.entities[static_cast<size_t>(e)].name()), doc);
    }
    return out;
}

// ---- world (de)serialization ----

inline nlohmann::json world_to_json(const FactWorld& w) {
    nlohmann::json j;
    j["spec"] = {{"n_entities", w.spec.n_entities},
                 {"values_per_attribute", w.spec.values_per_attribute},
                 {"frac_lm", w.spec.frac_lm},
                 {"frac_instruction", w.spec.frac_instruction},
                 {"frac_eval", w.spec.frac_eval},
                 {"target_doc_len", w.spec.target_doc_len},
                 {"seed", w.spec.seed}};
    j["attr_names"] = w.attr_names;
    j["attr_values"] = w.attr_values;
    nlohmann::json ents = nlohmann::json::array();
    for (const auto& e : w.entities)
        ents.push_back({{"id", e.id},
                        {"first", e.first},
                        {"second", e.second},
                        {"values", std::vector<int>(e.value_idx.begin(), e.value_idx.end())}});
    j["entities"] = ents;
    j["split"] = w.split;
    return j;
}

inline FactWorld world_from_json(const nlohmann::json& j) {
    FactWorld w;
    const auto& s = j.at("spec");
    w.spec.n_entities = s.at("n_entities").get<int>();
    w.spec.values_per_attribute = s.at("values_per_attribute").get<int>();
    w.spec.frac_lm = s.at("frac_lm").get<double>();
    w.spec.frac_instruction = s.at("frac_instruction").get<double>();
    w.spec.frac_eval = s.at("frac_eval").get<double>();
    w.spec.target_doc_len = s.at("target_doc_len").get<int>();
    w.spec.seed = s.at("seed").get<uint64_t>();
    w.attr_names = j.at("attr_names").get<std::vector<std::string>>();
    w.attr_values = j.at("attr_values").get<std::vector<std::vector<std::string>>>();
    for (const auto& ej : j.at("entities")) {
        Entity e;
        e.id = ej.at("id").get<int>();
        e.first = ej.at("first").get<std::string>();
        e.second = ej.at("second").get<std::string>();
        auto vals = ej.at("values").get<std::vector<int>>();
        require(vals.size() == kNumAttributes, "world json: bad value count");
        std::copy(vals.begin(), vals.end(), e.value_idx.begin());
        w.entities.push_back(std::move(e));
    }
    w.split = j.at("split").get<std::vector<int>>();
    require(w.split.size() == w.entities.size(), "world json: split/entity mismatch");
    return w;
}

}  // namespace xrag
