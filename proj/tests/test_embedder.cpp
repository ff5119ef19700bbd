#include <catch2/catch_amalgamated.hpp>

#include "xrag/corpus.hpp"
#include "xrag/embedder.hpp"

#include <cmath>

using namespace xrag;

namespace {

EmbedderConfig tiny_cfg(int vocab = 40) {
    EmbedderConfig cfg;
    cfg.n_layers = 1;
    cfg.d_emb = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.vocab_size = vocab;
    return cfg;
}

double dot(const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

}  // namespace

TEST_CASE("embeddings are unit-norm and deterministic", "[embedder]") {
    EmbedderParams<float> p = EmbedderParams<float>::init(tiny_cfg(), 3);
    const std::vector<int> ids = {5, 9, 12, 7};
    const auto e1 = embed(p, ids);
    const auto e2 = embed(p, ids);
    REQUIRE(e1.size() == 16);
    REQUIRE(e1 == e2);
    REQUIRE(std::abs(dot(e1, e1) - 1.0) < 1e-5);
}

TEST_CASE("no positional signal: permuting tokens leaves the embedding unchanged", "[embedder]") {
    // a deliberate property of the set encoder: mean pooling + no positions
    EmbedderParams<float> p = EmbedderParams<float>::init(tiny_cfg(), 5);
    const auto a = embed(p, {5, 9, 12, 7});
    const auto b = embed(p, {7, 12, 9, 5});
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == Catch::Approx(b[i]).margin(1e-6));
}

TEST_CASE("different token sets give different embeddings", "[embedder]") {
    EmbedderParams<float> p = EmbedderParams<float>::init(tiny_cfg(), 7);
    const auto a = embed(p, {5, 9, 12});
    const auto b = embed(p, {6, 10, 13});
    double diff = 0;
    for (size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
    REQUIRE(diff > 1e-3);
}

TEST_CASE("empty input is rejected", "[embedder]") {
    EmbedderParams<float> p = EmbedderParams<float>::init(tiny_cfg(), 9);
    CHECK_THROWS(embed(p, {}));
}

TEST_CASE("freeze tags provenance and flips every entry", "[embedder]") {
    EmbedderParams<float> p = EmbedderParams<float>::init(tiny_cfg(), 11);
    REQUIRE_FALSE(p.frozen());
    REQUIRE(p.provenance == "random-frozen");
    p.freeze("contrastive-then-frozen");
    REQUIRE(p.frozen());
    REQUIRE(p.provenance == "contrastive-then-frozen");
    for (const auto& e : p.set.entries) REQUIRE(e.frozen);
}

TEST_CASE("contrastive training separates matched from mismatched pairs", "[embedder][slow]") {
    // real fact-world pairs at small scale; after training, a document should
    // score higher against its own question than against random questions
    WorldSpec spec;
    spec.seed = 17;
    spec.n_entities = 40;
    FactWorld w = generate_world(spec);
    Tokenizer tk = Tokenizer::build(tokenizer_training_texts(w));

    EmbedderConfig cfg;
    cfg.n_layers = 1;
    cfg.d_emb = 32;
    cfg.n_heads = 2;
    cfg.d_ff = 64;
    cfg.vocab_size = tk.vocab_size();
    EmbedderParams<float> p = EmbedderParams<float>::init(cfg, 21);

    const auto pairs = build_contrastive_pairs(w, tk, 2, 23);
    ContrastiveHyper hy;
    hy.epochs = 30;
    hy.batch_size = 16;
    hy.seed = 25;
    hy.verbose = false;
    const auto rep = contrastive_pretrain(p, pairs, hy);
    REQUIRE(rep.final_loss < rep.initial_loss);
    REQUIRE(p.frozen());

    // matched-vs-random margin on the training entities, >= 95% required
    const auto ents = w.non_heldout_entities();
    auto rng = make_rng(31, "neg");
    std::uniform_int_distribution<size_t> de(0, ents.size() - 1);
    std::uniform_int_distribution<int> da(0, kNumAttributes - 1);
    int wins = 0, n = 0;
    for (int e : ents) {
        const auto doc = embed(p, tk.encode(w.doc_text(e)));
        const auto q = embed(p, tk.encode(w.question_text(e, da(rng))));
        int other = e;
        while (other == e) other = ents[de(rng)];
        const auto neg = embed(p, tk.encode(w.question_text(other, da(rng))));
        wins += dot(doc, q) > dot(doc, neg) ? 1 : 0;
        ++n;
    }
    INFO("margin wins " << wins << "/" << n);
    REQUIRE(static_cast<double>(wins) / static_cast<double>(n) >= 0.95);
}

TEST_CASE("contrastive training rejects degenerate batches", "[embedder]") {
    EmbedderParams<float> p = EmbedderParams<float>::init(tiny_cfg(), 41);
    ContrastiveHyper hy;
    hy.batch_size = 1;  // in-batch negatives need >= 2
    std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs = {{{5}, {6}}, {{7}, {8}}};
    CHECK_THROWS(contrastive_pretrain(p, pairs, hy));

    ContrastiveHyper hy2;
    hy2.batch_size = 8;  // more than available pairs -> zero full batches
    CHECK_THROWS(contrastive_pretrain(p, pairs, hy2));
}
