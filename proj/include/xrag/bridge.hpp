#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "xrag/datastore.hpp"
#include "xrag/lm.hpp"
#include "xrag/optim.hpp"
#include "xrag/tape.hpp"
#include "xrag/tokenizer.hpp"

namespace xrag {

// ---- modality projector ----

// Two-layer MLP from embedding space to the LM's hidden space; the only
// trainable component during both xRAG stages. d_hidden = d_model.
template <typename T>
struct ProjectorParams {
    int d_emb = 0, d_hidden = 0, d_model = 0;
    ParameterSet<T> set;
    std::shared_ptr<Tensor<T>> w1, b1, w2, b2;

    static ProjectorParams init(int d_emb, int d_model, uint64_t seed) {
        require(d_emb >= 1 && d_model >= 1, "projector: bad dims");
        ProjectorParams p;
        p.d_emb = d_emb;
        p.d_hidden = d_model;
        p.d_model = d_model;
        auto rng = make_rng(seed, "projector-init");
        // Fan-in scaled, like the LM: puts the initial output near the
        // token-embedding scale instead of starting from a near-zero vector.
        const T sd1 = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_emb)));
        const T sd2 = static_cast<T>(1.0 / std::sqrt(static_cast<double>(p.d_hidden)));
        p.w1 = p.set.add("proj.w1", Tensor<T>::randn({d_emb, p.d_hidden}, rng, sd1));
        p.b1 = p.set.add("proj.b1", Tensor<T>::zeros({p.d_hidden}));
        p.w2 = p.set.add("proj.w2", Tensor<T>::randn({p.d_hidden, d_model}, rng, sd2));
        p.b2 = p.set.add("proj.b2", Tensor<T>::zeros({d_model}));
        return p;
    }
};

template <typename T>
std::vector<T> project(const ProjectorParams<T>& p, const std::vector<T>& e) {
    require(static_cast<int>(e.size()) == p.d_emb, "project: embedding width mismatch");
    std::vector<T> h(static_cast<size_t>(p.d_hidden));
    detail::matvec(*p.w1, e.data(), p.b1->data.data(), h.data());
    for (auto& v : h) v = detail::gelu_scalar(v);
    std::vector<T> out(static_cast<size_t>(p.d_model));
    detail::matvec(*p.w2, h.data(), p.b2->data.data(), out.data());
    return out;
}

template <typename T>
std::vector<T> cast_embedding(const float* e, int d_emb) {
    std::vector<T> v(static_cast<size_t>(d_emb));
    for (int j = 0; j < d_emb; ++j) {
        if (!std::isfinite(e[j])) throw numeric_error("non-finite retrieval embedding");
        v[static_cast<size_t>(j)] = static_cast<T>(e[j]);
    }
    return v;
}

template <typename T>
struct ProjectorTapeBinding {
    using Id = typename Tape<T>::Id;
    Id w1, b1, w2, b2;
    std::vector<Id> by_entry;
};

template <typename T>
ProjectorTapeBinding<T> bind_projector(Tape<T>& tape, const ProjectorParams<T>& p) {
    ProjectorTapeBinding<T> b;
    auto bindp = [&](const std::shared_ptr<Tensor<T>>& t) {
        auto id = tape.leaf(*t, t->requires_grad);
        b.by_entry.push_back(id);
        return id;
    };
    b.w1 = bindp(p.w1);
    b.b1 = bindp(p.b1);
    b.w2 = bindp(p.w2);
    b.b2 = bindp(p.b2);
    return b;
}

// e: a [1 x d_emb] node; returns a [1 x d_model] node.
template <typename T>
typename Tape<T>::Id project_tape(Tape<T>& tape, const ProjectorTapeBinding<T>& b,
                                  typename Tape<T>::Id e) {
    auto h = tape.gelu(tape.add_bias(tape.matmul(e, b.w1), b.b1));
    return tape.add_bias(tape.matmul(h, b.w2), b.b2);
}

// ---- prompt templates ----

// A template is a word sequence with placeholder pieces: [X] context (vector
// slot, document text, or nothing depending on mode), [Q] question splice,
// [D] paraphrase target. A word may carry punctuation fused to a placeholder
// ("[X],"), which parses into separate pieces.
struct PromptTemplate {
    enum class Kind { Word, Context, Query, Target };
    struct Piece {
        Kind kind;
        std::string word;  // set for Kind::Word
    };

    std::vector<Piece> pieces;
    std::string source;  // "pretrain-pool" | "task"
    std::string text;

    static PromptTemplate parse(const std::string& text, const std::string& source) {
        PromptTemplate t;
        t.source = source;
        t.text = text;
        for (const auto& w : Tokenizer::split_words(text)) {
            std::string rest = w;
            while (!rest.empty()) {
                size_t px = rest.find("[X]");
                size_t pq = rest.find("[Q]");
                size_t pd = rest.find("[D]");
                size_t p = std::min({px, pq, pd});
                if (p == std::string::npos) {
                    t.pieces.push_back({Kind::Word, rest});
                    break;
                }
                if (p > 0) t.pieces.push_back({Kind::Word, rest.substr(0, p)});
                Kind k = p == px ? Kind::Context : (p == pq ? Kind::Query : Kind::Target);
                t.pieces.push_back({k, {}});
                rest = rest.substr(p + 3);
            }
        }
        return t;
    }

    int count(Kind k) const {
        int n = 0;
        for (const auto& p : pieces) n += p.kind == k ? 1 : 0;
        return n;
    }

    // Fixed (non-placeholder) words, in order.
    std::vector<std::string> fixed_words() const {
        std::vector<std::string> w;
        for (const auto& p : pieces)
            if (p.kind == Kind::Word) w.push_back(p.word);
        return w;
    }
};

// Paraphrase-instruction pool; every entry conditions on [X] and asks for the
// document [D]. Thirteen fixed phrasings, sampled uniformly during stage 1.
inline const std::vector<std::string>& paraphrase_pool_texts() {
    static const std::vector<std::string> pool = {
        "Background: [X] means the same as [D]",
        "Background: [X] Can you put the above sentences in your own terms? [D]",
        "[X] Please provide a reinterpretation of the preceding background text. [D]",
        "These two expressions are equivalent in essence:(1) [X] (2) [D]",
        "Background: [X] is a paraphrase of what? [D]",
        "[X] Could you give me a different version of the background sentences above? [D]",
        "In other words, background: [X] is just another way of saying: [D]",
        "You're getting across the same point whether you say background: [X] or [D]",
        "[X] After uppacking the ideas in the background information above, we got: [D]",
        "[X] Please offer a restatement of the background sentences I've just read. [D]",
        "Background: [X], which also means: [D]",
        "Strip away the mystery, and you'll find [X] is simply another rendition of: [D]",
        "The essence of background: [X] is captured again in the following statement: [D]",
    };
    return pool;
}

inline const std::vector<PromptTemplate>& paraphrase_pool() {
    static const std::vector<PromptTemplate> pool = [] {
        std::vector<PromptTemplate> out;
        for (const auto& s : paraphrase_pool_texts()) {
            PromptTemplate t = PromptTemplate::parse(s, "pretrain-pool");
            require(t.count(PromptTemplate::Kind::Context) == 1 &&
                        t.count(PromptTemplate::Kind::Target) == 1 &&
                        t.pieces.back().kind == PromptTemplate::Kind::Target,
                    "paraphrase template must end with a single [D] and contain one [X]");
            out.push_back(std::move(t));
        }
        return out;
    }();
    return pool;
}

// The QA task frame shared by all four augmentation modes; the modes differ
// only in what fills [X].
inline const PromptTemplate& task_template() {
    static const PromptTemplate t = [] {
        PromptTemplate t2 = PromptTemplate::parse("context: [X] question: [Q] answer:", "task");
        require(t2.count(PromptTemplate::Kind::Context) == 1 &&
                    t2.count(PromptTemplate::Kind::Query) == 1,
                "task template must contain one [X] and one [Q]");
        return t2;
    }();
    return t;
}

// All template words a tokenizer must know (placeholders excluded).
inline std::vector<std::string> all_template_words() {
    std::vector<std::string> out;
    for (const auto& t : paraphrase_pool())
        for (const auto& w : t.fixed_words()) out.push_back(w);
    for (const auto& w : task_template().fixed_words()) out.push_back(w);
    return out;
}

// ---- TF-IDF single-token compression baseline ----

struct TfidfStats {
    int64_t n_docs = 0;
    std::vector<int64_t> df;  // per token id

    static TfidfStats build(const std::vector<DocumentRecord>& docs, int vocab_size) {
        require(!docs.empty(), "tfidf: empty corpus");
        TfidfStats s;
        s.n_docs = static_cast<int64_t>(docs.size());
        s.df.assign(static_cast<size_t>(vocab_size), 0);
        std::vector<bool> seen(static_cast<size_t>(vocab_size));
        for (const auto& d : docs) {
            std::fill(seen.begin(), seen.end(), false);
            for (int t : d.tokens) {
                require(t >= 0 && t < vocab_size, "tfidf: token id out of range");
                if (!seen[static_cast<size_t>(t)]) {
                    seen[static_cast<size_t>(t)] = true;
                    ++s.df[static_cast<size_t>(t)];
                }
            }
        }
        return s;
    }
};

// Highest tf·idf token of a document, tf = count/len, idf = ln(N/df);
// ties go to the lower token id.
inline int top_tfidf_token(const std::vector<int>& doc, const TfidfStats& stats) {
    require(!doc.empty(), "tfidf: empty document");
    std::vector<int> uniq = doc;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    int best = -1;
    double best_score = 0.0;
    for (int t : uniq) {
        const int64_t df = stats.df[static_cast<size_t>(t)];
        require(df > 0, "tfidf: document token missing from corpus stats");
        const double tf =
            static_cast<double>(std::count(doc.begin(), doc.end(), t)) / static_cast<double>(doc.size());
        const double idf = std::log(static_cast<double>(stats.n_docs) / static_cast<double>(df));
        const double score = tf * idf;
        if (best < 0 || score > best_score) {
            best = t;
            best_score = score;
        }
    }
    return best;
}

// ---- prompt assembly ----

enum class Mode { no_retrieval, rag, xrag, tfidf_1token };

inline std::string mode_name(Mode m) {
    switch (m) {
        case Mode::no_retrieval: return "no_retrieval";
        case Mode::rag: return "rag";
        case Mode::xrag: return "xrag";
        case Mode::tfidf_1token: return "tfidf_1token";
    }
    return "?";
}

inline Mode mode_from_name(const std::string& s) {
    for (Mode m : {Mode::no_retrieval, Mode::rag, Mode::xrag, Mode::tfidf_1token})
        if (mode_name(m) == s) return m;
    throw config_error("unknown mode: " + s);
}

namespace detail {

// Expands the task frame around a caller-supplied context filler. Every
// prompt starts with [bos]; the answer cue is the final slot.
template <typename T, typename CtxFn>
FusedInput<T> assemble_task(const PromptTemplate& tpl, const Tokenizer& tk,
                            const std::vector<int>& question, CtxFn&& fill_context) {
    FusedInput<T> out;
    out.push_back(Slot<T>::tok(Tokenizer::kBos));
    for (const auto& p : tpl.pieces) {
        switch (p.kind) {
            case PromptTemplate::Kind::Word: {
                require(tk.has(p.word), "assemble: template word missing from vocabulary: " + p.word);
                out.push_back(Slot<T>::tok(tk.id_of(p.word)));
                break;
            }
            case PromptTemplate::Kind::Context:
                fill_context(out);
                break;
            case PromptTemplate::Kind::Query:
                for (int id : question) out.push_back(Slot<T>::tok(id));
                break;
            case PromptTemplate::Kind::Target:
                throw config_error("assemble: task template cannot contain [D]");
        }
    }
    return out;
}

}  // namespace detail

template <typename T>
FusedInput<T> assemble_no_retrieval(const PromptTemplate& tpl, const Tokenizer& tk,
                                    const std::vector<int>& question) {
    return detail::assemble_task<T>(tpl, tk, question, [](FusedInput<T>&) {});
}

template <typename T>
FusedInput<T> assemble_rag(const PromptTemplate& tpl, const Tokenizer& tk,
                           const std::vector<int>& doc, const std::vector<int>& question,
                           int max_seq_len) {
    auto out = detail::assemble_task<T>(tpl, tk, question, [&](FusedInput<T>& o) {
        for (int id : doc) o.push_back(Slot<T>::tok(id));
    });
    require(static_cast<int>(out.size()) <= max_seq_len, "assemble_rag: prompt exceeds max_seq_len");
    return out;
}

template <typename T>
FusedInput<T> assemble_xrag(const PromptTemplate& tpl, const Tokenizer& tk,
                            const std::vector<T>& projected, const std::vector<int>& question) {
    return detail::assemble_task<T>(tpl, tk, question, [&](FusedInput<T>& o) {
        o.push_back(Slot<T>::vector(projected));
    });
}

template <typename T>
FusedInput<T> assemble_tfidf_baseline(const PromptTemplate& tpl, const Tokenizer& tk,
                                      const std::vector<int>& doc, const std::vector<int>& question,
                                      const TfidfStats& stats) {
    const int top = top_tfidf_token(doc, stats);
    return detail::assemble_task<T>(tpl, tk, question, [&](FusedInput<T>& o) {
        o.push_back(Slot<T>::tok(top));
    });
}

// Debug rendering: tokens decode to words, vector slots to a sentinel.
template <typename T>
std::string render_slots(const FusedInput<T>& in, const Tokenizer& tk) {
    std::string out;
    for (const auto& s : in) {
        if (!out.empty()) out += ' ';
        out += s.is_vector() ? "[X]" : tk.word_of(s.token);
    }
    return out;
}

// Slot positions for the xRAG prompt-length identity: 1 vector slot +
// bos + fixed words + question.
inline int64_t xrag_prompt_length(const PromptTemplate& tpl, int64_t question_len) {
    return 1 + 1 + static_cast<int64_t>(tpl.fixed_words().size()) + question_len;
}

}  // namespace xrag
