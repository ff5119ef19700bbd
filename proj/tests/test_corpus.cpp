#include <catch2/catch_amalgamated.hpp>

#include "xrag/corpus.hpp"

#include <map>
#include <set>

using namespace xrag;

namespace {

FactWorld small_world(int n_entities = 60, uint64_t seed = 404) {
    WorldSpec spec;
    spec.seed = seed;
    spec.n_entities = n_entities;
    return generate_world(spec);
}

}  // namespace

TEST_CASE("world generation basics", "[corpus]") {
    FactWorld w = small_world();
    REQUIRE(w.entities.size() == 60);
    REQUIRE(w.attr_names.size() == kNumAttributes);
    REQUIRE(w.attr_values.size() == kNumAttributes);

    for (const auto& e : w.entities)
        for (int a = 0; a < kNumAttributes; ++a) {
            REQUIRE(e.value_idx[static_cast<size_t>(a)] >= 0);
            REQUIRE(e.value_idx[static_cast<size_t>(a)] < w.spec.values_per_attribute);
        }

    std::set<std::string> names;
    for (const auto& e : w.entities) names.insert(e.name());
    REQUIRE(names.size() == w.entities.size());  // no duplicate entities
}

TEST_CASE("documents have fixed shape and carry all facts", "[corpus]") {
    FactWorld w = small_world();
    Tokenizer tk = Tokenizer::build(tokenizer_training_texts(w));
    for (int e = 0; e < 5; ++e) {
        const std::string doc = w.doc_text(e);
        const auto words = Tokenizer::split_words(doc);
        REQUIRE(words.size() == static_cast<size_t>(w.spec.target_doc_len));
        for (const auto& word : words) REQUIRE(tk.has(word));
        REQUIRE(doc.rfind(w.entities[static_cast<size_t>(e)].name() + " is a ", 0) == 0);
        for (int a = 0; a < kNumAttributes; ++a)
            REQUIRE(doc.find(" " + w.value_of(e, a) + " ") != std::string::npos);
    }
}

TEST_CASE("attribute value vocabularies are disjoint", "[corpus]") {
    FactWorld w = small_world();
    std::map<std::string, int> owner;
    for (int a = 0; a < kNumAttributes; ++a) {
        REQUIRE(w.attr_values[static_cast<size_t>(a)].size() ==
                static_cast<size_t>(w.spec.values_per_attribute));
        for (const auto& s : w.attr_values[static_cast<size_t>(a)]) {
            auto it = owner.find(s);
            INFO("value '" << s << "' owned by attributes " << a << " and "
                           << (it == owner.end() ? -1 : it->second));
            REQUIRE(it == owner.end());
            owner[s] = a;
        }
    }
}

TEST_CASE("splits partition entities at the configured fractions", "[corpus]") {
    FactWorld w = small_world(100);
    const auto lm = w.entities_in(Split::lm_pretrain);
    const auto inst = w.entities_in(Split::instruction);
    const auto heldout = w.entities_in(Split::eval_heldout);
    REQUIRE(lm.size() + inst.size() + heldout.size() == 100);
    std::set<int> seen;
    for (int e : lm) REQUIRE(seen.insert(e).second);
    for (int e : inst) REQUIRE(seen.insert(e).second);
    for (int e : heldout) REQUIRE(seen.insert(e).second);
    CHECK(lm.size() == 60);
    CHECK(inst.size() == 30);
    CHECK(heldout.size() == 10);
}

TEST_CASE("same seed reproduces the world; different seed changes it", "[corpus]") {
    FactWorld a = small_world(40, 7);
    FactWorld b = small_world(40, 7);
    FactWorld c = small_world(40, 8);
    REQUIRE(world_to_json(a) == world_to_json(b));
    REQUIRE(world_to_json(a) != world_to_json(c));
}

TEST_CASE("world JSON round trip", "[corpus]") {
    FactWorld w = small_world(30, 11);
    FactWorld back = world_from_json(world_to_json(w));
    REQUIRE(world_to_json(back) == world_to_json(w));
    REQUIRE(back.doc_text(3) == w.doc_text(3));
    REQUIRE(back.question_text(2, 5) == w.question_text(2, 5));
}

TEST_CASE("paraphrase pair templates are sampled uniformly (chi-square)", "[corpus]") {
    FactWorld w = small_world(80, 21);
    const auto pairs = build_pretrain_pairs(w, 10000, 99);
    REQUIRE(pairs.size() == 10000);

    const size_t n_templates = paraphrase_pool().size();
    REQUIRE(n_templates == 13);
    std::vector<int> counts(n_templates, 0);
    for (const auto& pr : pairs) {
        REQUIRE(pr.template_idx >= 0);
        REQUIRE(pr.template_idx < static_cast<int>(n_templates));
        counts[static_cast<size_t>(pr.template_idx)]++;
    }
    const double expected = 10000.0 / static_cast<double>(n_templates);
    double chi2 = 0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // df = 12, p = 0.01 critical value
    CHECK(chi2 < 26.217);
}

TEST_CASE("pretrain pairs only cover non-held-out entities", "[corpus]") {
    FactWorld w = small_world(50, 31);
    std::set<int> heldout;
    for (int e : w.entities_in(Split::eval_heldout)) heldout.insert(e);
    for (const auto& pr : build_pretrain_pairs(w, 2000, 5))
        REQUIRE(heldout.count(pr.entity_id) == 0);
}

TEST_CASE("instruction blend matches requested weights within two points", "[corpus]") {
    FactWorld w = small_world(80, 41);
    BlendWeights bw;  // defaults
    REQUIRE(bw.rc == Catch::Approx(0.511));
    REQUIRE(bw.qa == Catch::Approx(0.403));
    REQUIRE(bw.summ == Catch::Approx(0.086));

    const auto items = build_instruction_set(w, bw, 10000, 17);
    REQUIRE(items.size() == 10000);
    std::map<std::string, int> hist;
    for (const auto& it : items) hist[it.category]++;
    CHECK(std::abs(hist["reading_comprehension"] / 10000.0 - 0.511) < 0.02);
    CHECK(std::abs(hist["open_domain_qa"] / 10000.0 - 0.403) < 0.02);
    CHECK(std::abs(hist["summarization"] / 10000.0 - 0.086) < 0.02);
}

TEST_CASE("blend weights must sum to one", "[corpus]") {
    FactWorld w = small_world(20, 43);
    BlendWeights bad;
    bad.rc = 0.9;
    bad.qa = 0.9;
    bad.summ = 0.1;
    CHECK_THROWS(build_instruction_set(w, bad, 100, 1));
}

TEST_CASE("reading-comprehension answers are substrings of their context", "[corpus]") {
    FactWorld w = small_world(60, 51);
    const auto items = build_instruction_set(w, BlendWeights{}, 3000, 3);
    int rc = 0;
    for (const auto& it : items) {
        if (it.category != "reading_comprehension") continue;
        ++rc;
        REQUIRE(it.context.find(it.answer) != std::string::npos);
    }
    REQUIRE(rc > 0);
}

TEST_CASE("open-domain items carry no context; none touch held-out entities", "[corpus]") {
    FactWorld w = small_world(60, 61);
    std::set<int> heldout;
    for (int e : w.entities_in(Split::eval_heldout)) heldout.insert(e);
    const auto items = build_instruction_set(w, BlendWeights{}, 2000, 9);
    for (const auto& it : items) {
        REQUIRE(heldout.count(it.entity_id) == 0);
        if (it.category == "open_domain_qa") REQUIRE(it.context.empty());
    }
}

TEST_CASE("eval items are held-out only, with unique ids and true golds", "[corpus]") {
    FactWorld w = small_world(80, 71);
    const auto items = build_eval_items(w, 40, 5);
    REQUIRE(items.size() == 40);
    std::set<int> heldout;
    for (int e : w.entities_in(Split::eval_heldout)) heldout.insert(e);
    std::set<int> ids;
    for (const auto& it : items) {
        REQUIRE(heldout.count(it.entity_id) == 1);
        REQUIRE(ids.insert(it.item_id).second);
        REQUIRE_FALSE(it.golds.empty());
        REQUIRE(it.golds[0] == w.answer_text(it.entity_id, it.attr));
    }
    const auto again = build_eval_items(w, 40, 5);
    for (size_t i = 0; i < items.size(); ++i) {
        REQUIRE(again[i].item_id == items[i].item_id);
        REQUIRE(again[i].question == items[i].question);
    }
    // asking for more items than held-out (entity, attr) pairs is an error
    CHECK_THROWS(build_eval_items(w, 8 * 8 + 1, 5));
}

TEST_CASE("held-out leakage scan over every training artifact", "[corpus]") {
    // The strongest corpus guarantee: held-out entity names never occur in LM
    // streams, paraphrase pairs, instruction examples, or contrastive pairs.
    FactWorld w = small_world(60, 81);
    Tokenizer tk = Tokenizer::build(tokenizer_training_texts(w));

    std::set<std::string> heldout_names;
    for (int e : w.entities_in(Split::eval_heldout))
        heldout_names.insert(w.entities[static_cast<size_t>(e)].name());
    auto contains_heldout = [&](const std::string& text) {
        for (const auto& nm : heldout_names)
            if (text.find(nm) != std::string::npos) return true;
        return false;
    };
    auto ids_contain_heldout = [&](const std::vector<int>& ids) {
        return contains_heldout(" " + tk.decode(ids) + " ");
    };

    StreamOptions opt;
    const StreamSet streams = build_lm_pretrain_streams(w, tk, opt, 3);
    for (const auto& s : streams.train) REQUIRE_FALSE(ids_contain_heldout(s));
    for (const auto& s : streams.val) REQUIRE_FALSE(ids_contain_heldout(s));

    for (const auto& pr : build_pretrain_pairs(w, 1000, 4))
        REQUIRE_FALSE(contains_heldout(w.doc_text(pr.entity_id)));

    for (const auto& it : build_instruction_set(w, BlendWeights{}, 1000, 5)) {
        REQUIRE_FALSE(contains_heldout(it.context));
        REQUIRE_FALSE(contains_heldout(it.question));
        REQUIRE_FALSE(contains_heldout(it.answer));
    }

    for (const auto& pr : build_contrastive_pairs(w, tk, 2, 6)) {
        REQUIRE_FALSE(ids_contain_heldout(pr.first));
        REQUIRE_FALSE(ids_contain_heldout(pr.second));
    }
}

TEST_CASE("lm streams are bos/eos framed and reproducible", "[corpus]") {
    FactWorld w = small_world(40, 91);
    Tokenizer tk = Tokenizer::build(tokenizer_training_texts(w));
    StreamOptions opt;
    const StreamSet a = build_lm_pretrain_streams(w, tk, opt, 7);
    REQUIRE_FALSE(a.train.empty());
    REQUIRE_FALSE(a.val.empty());
    for (const auto& s : a.train) {
        REQUIRE(s.size() >= 3);
        REQUIRE(s.front() == Tokenizer::kBos);
        REQUIRE(s.back() == Tokenizer::kEos);
        for (int id : s) REQUIRE(id != Tokenizer::kUnk);
    }
    const StreamSet b = build_lm_pretrain_streams(w, tk, opt, 7);
    REQUIRE(a.train == b.train);
    REQUIRE(a.val == b.val);
}

TEST_CASE("contrastive pairs pair questions and names with the matching document", "[corpus]") {
    FactWorld w = small_world(40, 95);
    Tokenizer tk = Tokenizer::build(tokenizer_training_texts(w));
    const auto pairs = build_contrastive_pairs(w, tk, 2, 6);
    // per non-held-out entity: per_entity question pairs + 1 bare-name pair
    REQUIRE(pairs.size() == w.non_heldout_entities().size() * 3);
    for (const auto& pr : pairs) {
        REQUIRE_FALSE(pr.first.empty());
        REQUIRE(pr.second.size() == 41);
    }
}
