#include <catch2/catch_amalgamated.hpp>

#include "xrag/bridge.hpp"
#include "xrag/corpus.hpp"

#include <cmath>
#include <map>
#include <set>

using namespace xrag;

namespace {

Tokenizer toy_tokenizer() {
    std::vector<std::string> texts = {"per lin is a kind . the size is samp . big cat",
                                      "question: answer: context:"};
    for (const auto& w : all_template_words()) texts.push_back(w);
    return Tokenizer::build(texts);
}

}  // namespace

TEST_CASE("template parsing splits words and placeholders", "[bridge]") {
    const PromptTemplate t = PromptTemplate::parse("Background: [X] means [D]", "pretrain-pool");
    REQUIRE(t.count(PromptTemplate::Kind::Context) == 1);
    REQUIRE(t.count(PromptTemplate::Kind::Target) == 1);
    REQUIRE(t.count(PromptTemplate::Kind::Query) == 0);
    const auto words = t.fixed_words();
    REQUIRE(words == std::vector<std::string>({"Background:", "means"}));
}

TEST_CASE("placeholders glued to punctuation still parse", "[bridge]") {
    // the pool contains "(1) [X] (2) [D]" and "[X], which" style fusions
    const PromptTemplate t = PromptTemplate::parse("essence:(1) [X] (2) [D]", "pretrain-pool");
    REQUIRE(t.count(PromptTemplate::Kind::Context) == 1);
    REQUIRE(t.count(PromptTemplate::Kind::Target) == 1);

    const PromptTemplate u = PromptTemplate::parse("Background: [X], which also means: [D]", "x");
    REQUIRE(u.count(PromptTemplate::Kind::Context) == 1);
    // "[X]," splits into the placeholder and a trailing comma word
    bool comma_word = false;
    for (const auto& p : u.pieces)
        comma_word |= (p.kind == PromptTemplate::Kind::Word && p.word == ",");
    REQUIRE(comma_word);
}

TEST_CASE("paraphrase pool has 13 templates of the required shape", "[bridge]") {
    const auto& pool = paraphrase_pool();
    REQUIRE(pool.size() == 13);
    for (const auto& t : pool) {
        REQUIRE(t.count(PromptTemplate::Kind::Context) == 1);
        REQUIRE(t.count(PromptTemplate::Kind::Target) == 1);
        REQUIRE(t.count(PromptTemplate::Kind::Query) == 0);
        REQUIRE(t.pieces.back().kind == PromptTemplate::Kind::Target);
        REQUIRE(t.source == "pretrain-pool");
    }
    // the task frame: one [X], one [Q], no [D], ends with the answer cue
    const auto& task = task_template();
    REQUIRE(task.count(PromptTemplate::Kind::Context) == 1);
    REQUIRE(task.count(PromptTemplate::Kind::Query) == 1);
    REQUIRE(task.count(PromptTemplate::Kind::Target) == 0);
    REQUIRE(task.fixed_words().back() == "answer:");
}

TEST_CASE("projector: plain and tape paths agree; init is reproducible", "[bridge]") {
    ProjectorParams<float> W = ProjectorParams<float>::init(8, 12, 33);
    ProjectorParams<float> W2 = ProjectorParams<float>::init(8, 12, 33);
    REQUIRE(W.set.checksum() == W2.set.checksum());

    auto rng = make_rng(4, "emb");
    std::vector<float> e(8);
    for (auto& v : e) v = static_cast<float>(std::normal_distribution<double>(0, 1)(rng));

    const std::vector<float> plain = project(W, e);
    REQUIRE(plain.size() == 12);

    Tape<float> tape;
    auto bound = bind_projector(tape, W);
    Tensor<float> ein({1, 8});
    ein.data.assign(e.begin(), e.end());
    auto out_id = project_tape(tape, bound, tape.constant(std::move(ein)));
    const Tensor<float>& via_tape = tape.value(out_id);
    REQUIRE(via_tape.numel() == 12);
    for (int64_t i = 0; i < 12; ++i)
        REQUIRE(via_tape.data[static_cast<size_t>(i)] == plain[static_cast<size_t>(i)]);
}

TEST_CASE("projector rejects wrong input width", "[bridge]") {
    ProjectorParams<float> W = ProjectorParams<float>::init(8, 12, 1);
    std::vector<float> wrong(5, 0.1f);
    CHECK_THROWS(project(W, wrong));
}

TEST_CASE("tf-idf: hand-computed top token and tie-break", "[bridge]") {
    // corpus: d0 = [5 5 6], d1 = [5 7], d2 = [6 7]
    // df: 5->2, 6->2, 7->2 over N=3 docs, idf = ln(1.5) for all
    // d0 scores: tf(5)=2/3, tf(6)=1/3 -> top = 5
    std::vector<DocumentRecord> docs(3);
    docs[0].tokens = {5, 5, 6};
    docs[1].tokens = {5, 7};
    docs[2].tokens = {6, 7};
    const TfidfStats stats = TfidfStats::build(docs, 10);
    REQUIRE(stats.n_docs == 3);
    REQUIRE(stats.df[5] == 2);
    REQUIRE(stats.df[6] == 2);
    REQUIRE(stats.df[7] == 2);
    CHECK(top_tfidf_token(docs[0].tokens, stats) == 5);
    // d1: equal tf and equal idf -> tie -> lower id
    CHECK(top_tfidf_token(docs[1].tokens, stats) == 5);
}

TEST_CASE("tf-idf favors rare tokens over common ones", "[bridge]") {
    // token 9 appears in one doc only; token 5 in all docs (idf 0)
    std::vector<DocumentRecord> docs(4);
    docs[0].tokens = {5, 9};
    docs[1].tokens = {5, 6};
    docs[2].tokens = {5, 6};
    docs[3].tokens = {5, 7};
    const TfidfStats stats = TfidfStats::build(docs, 12);
    CHECK(top_tfidf_token(docs[0].tokens, stats) == 9);
}

TEST_CASE("tf-idf on real fact-world docs picks an entity-specific token", "[bridge]") {
    WorldSpec spec;
    spec.seed = 9;
    spec.n_entities = 60;
    FactWorld w = generate_world(spec);
    Tokenizer tk = Tokenizer::build(tokenizer_training_texts(w));
    std::vector<DocumentRecord> docs;
    for (int e = 0; e < 60; ++e) {
        DocumentRecord r;
        r.doc_id = e;
        r.text = w.doc_text(e);
        r.tokens = tk.encode(r.text);
        docs.push_back(r);
    }
    const TfidfStats stats = TfidfStats::build(docs, tk.vocab_size());
    // scaffold words ("the", "is", ".") appear in every doc -> idf 0; the
    // winner must be a name part or a value, never scaffold
    std::set<std::string> scaffold = {"the", "is", "a", "."};
    for (int e = 0; e < 10; ++e) {
        const int top = top_tfidf_token(docs[static_cast<size_t>(e)].tokens, stats);
        INFO("doc " << e << " top '" << tk.word_of(top) << "'");
        REQUIRE(scaffold.count(tk.word_of(top)) == 0);
    }
}

TEST_CASE("assembly: slot layout and counts per mode", "[bridge]") {
    Tokenizer tk = toy_tokenizer();
    const auto& task = task_template();
    const std::vector<int> q = tk.encode("what is the size of per lin ?");
    const std::vector<int> doc = tk.encode("per lin is a kind . the size is samp .");

    const auto no_ret = assemble_no_retrieval<float>(task, tk, q);
    const auto rag = assemble_rag<float>(task, tk, doc, q, 128);

    std::vector<float> proj(16, 0.5f);
    const auto xrag = assemble_xrag<float>(task, tk, proj, q);

    std::vector<DocumentRecord> docs(2);
    docs[0].tokens = doc;
    docs[1].tokens = tk.encode("big cat");
    const TfidfStats stats = TfidfStats::build(docs, tk.vocab_size());
    const auto tfidf = assemble_tfidf_baseline<float>(task, tk, doc, q, stats);

    // every prompt: bos first, answer cue last
    for (const auto* p : {&no_ret, &rag, &xrag, &tfidf}) {
        REQUIRE((*p)[0].is_vector() == false);
        REQUIRE((*p)[0].token == Tokenizer::kBos);
        REQUIRE(p->back().token == tk.id_of("answer:"));
    }

    // footprint identities: rag adds |doc| slots, xrag and tfidf exactly one
    REQUIRE(rag.size() == no_ret.size() + doc.size());
    REQUIRE(xrag.size() == no_ret.size() + 1);
    REQUIRE(tfidf.size() == no_ret.size() + 1);
    REQUIRE(static_cast<int64_t>(xrag.size()) ==
            xrag_prompt_length(task, static_cast<int64_t>(q.size())));

    // the injected slot is the only vector slot, in the context position
    int vector_slots = 0;
    for (const auto& s : xrag) vector_slots += s.is_vector() ? 1 : 0;
    REQUIRE(vector_slots == 1);
    REQUIRE(xrag[2].is_vector());  // bos, "context:", then [X]
    for (const auto& s : rag) REQUIRE_FALSE(s.is_vector());
}

TEST_CASE("assembly: overlong rag prompt is rejected", "[bridge]") {
    Tokenizer tk = toy_tokenizer();
    const std::vector<int> q = tk.encode("what is the size of per lin ?");
    const std::vector<int> doc(100, tk.id_of("cat"));
    CHECK_THROWS(assemble_rag<float>(task_template(), tk, doc, q, 64));
}

TEST_CASE("assembly: unknown template word is rejected", "[bridge]") {
    Tokenizer tk = Tokenizer::build({"tiny vocab only"});
    const PromptTemplate t = PromptTemplate::parse("context: [X] question: [Q] answer:", "task");
    CHECK_THROWS(assemble_no_retrieval<float>(t, tk, {5}));
}

TEST_CASE("render_slots shows tokens and a sentinel for the vector", "[bridge]") {
    Tokenizer tk = toy_tokenizer();
    const std::vector<int> q = tk.encode("big cat");
    std::vector<float> proj(4, 0.1f);
    const auto fused = assemble_xrag<float>(task_template(), tk, proj, q);
    const std::string rendered = render_slots(fused, tk);
    REQUIRE(rendered.find("[X]") != std::string::npos);
    REQUIRE(rendered.find("big cat") != std::string::npos);
    REQUIRE(rendered.find("context:") != std::string::npos);
}

TEST_CASE("mode names round trip", "[bridge]") {
    for (Mode m : {Mode::no_retrieval, Mode::rag, Mode::xrag, Mode::tfidf_1token})
        REQUIRE(mode_from_name(mode_name(m)) == m);
    CHECK_THROWS(mode_from_name("bogus"));
}

TEST_CASE("cast_embedding checks finiteness", "[bridge]") {
    std::vector<float> ok = {0.5f, -0.25f};
    const auto cast = cast_embedding<double>(ok.data(), 2);
    REQUIRE(cast.size() == 2);
    REQUIRE(cast[0] == 0.5);
    std::vector<float> bad = {0.5f, std::nanf("")};
    CHECK_THROWS(cast_embedding<double>(bad.data(), 2));
}
