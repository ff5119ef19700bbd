#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "xrag/optim.hpp"
#include "xrag/tape.hpp"
#include "xrag/tensor.hpp"

namespace xrag {

struct EmbedderConfig {
    int n_layers = 1;
    int d_emb = 64;
    int n_heads = 4;
    int d_ff = 256;
    int vocab_size = 0;

    void validate() const {
        require(n_layers >= 1 && d_emb >= 1 && n_heads >= 1 && d_ff >= 1, "embedder config: bad sizes");
        require(d_emb % n_heads == 0, "embedder config: d_emb must be divisible by n_heads");
        require(vocab_size >= 1, "embedder config: vocab unset");
    }
    int head_dim() const { return d_emb / n_heads; }
};

// Bidirectional pre-LN encoder over token embeddings with no positional
// signal (a set encoder), mean-pooled then L2-normalized. Width d_emb
// throughout, so the pooled state is the embedding.
template <typename T>
struct EmbedderParams {
    struct Layer {
        std::shared_ptr<Tensor<T>> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        std::shared_ptr<Tensor<T>> ln2_g, ln2_b, w1, b1, w2, b2;
    };

    EmbedderConfig cfg;
    ParameterSet<T> set;
    std::shared_ptr<Tensor<T>> tok_emb, lnf_g, lnf_b;
    std::vector<Layer> layers;
    std::string provenance = "random-frozen";

    static EmbedderParams init(const EmbedderConfig& cfg, uint64_t seed) {
        cfg.validate();
        EmbedderParams p;
        p.cfg = cfg;
        auto rng = make_rng(seed, "embedder-init");
        // Fan-in scaled init, as in the LM: fixed small stddevs starve the
        // attention gradient path at these widths.
        const T sd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.d_emb)));
        const int64_t d = cfg.d_emb, V = cfg.vocab_size, F = cfg.d_ff;
        p.tok_emb = p.set.add("emb.tok", Tensor<T>::randn({V, d}, rng, static_cast<T>(0.1)));
        for (int l = 0; l < cfg.n_layers; ++l) {
            const std::string pre = "emb.l" + std::to_string(l) + ".";
            Layer L;
            L.ln1_g = p.set.add(pre + "ln1.g", Tensor<T>::full({d}, T{1}));
            L.ln1_b = p.set.add(pre + "ln1.b", Tensor<T>::zeros({d}));
            L.wq = p.set.add(pre + "attn.wq", Tensor<T>::randn({d, d}, rng, sd));
            L.bq = p.set.add(pre + "attn.bq", Tensor<T>::zeros({d}));
            L.wk = p.set.add(pre + "attn.wk", Tensor<T>::randn({d, d}, rng, sd));
            L.bk = p.set.add(pre + "attn.bk", Tensor<T>::zeros({d}));
            L.wv = p.set.add(pre + "attn.wv", Tensor<T>::randn({d, d}, rng, sd));
            L.bv = p.set.add(pre + "attn.bv", Tensor<T>::zeros({d}));
            L.wo = p.set.add(pre + "attn.wo", Tensor<T>::randn({d, d}, rng, sd));
            L.bo = p.set.add(pre + "attn.bo", Tensor<T>::zeros({d}));
            L.ln2_g = p.set.add(pre + "ln2.g", Tensor<T>::full({d}, T{1}));
            L.ln2_b = p.set.add(pre + "ln2.b", Tensor<T>::zeros({d}));
            L.w1 = p.set.add(pre + "ffn.w1", Tensor<T>::randn({d, F}, rng, sd));
            L.b1 = p.set.add(pre + "ffn.b1", Tensor<T>::zeros({F}));
            L.w2 = p.set.add(pre + "ffn.w2",
                             Tensor<T>::randn({F, d}, rng,
                                              static_cast<T>(1.0 / std::sqrt(static_cast<double>(F)))));
            L.b2 = p.set.add(pre + "ffn.b2", Tensor<T>::zeros({d}));
            p.layers.push_back(std::move(L));
        }
        p.lnf_g = p.set.add("emb.ln_f.g", Tensor<T>::full({d}, T{1}));
        p.lnf_b = p.set.add("emb.ln_f.b", Tensor<T>::zeros({d}));
        return p;
    }

    void freeze(const std::string& tag) {
        for (auto& e : set.entries) {
            e.frozen = true;
            e.tensor->requires_grad = false;
        }
        provenance = tag;
    }
    bool frozen() const {
        for (const auto& e : set.entries)
            if (!e.frozen) return false;
        return !set.entries.empty();
    }
};

template <typename T>
struct EmbedderTapeBinding {
    using Id = typename Tape<T>::Id;
    struct Layer {
        Id ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    };
    Id tok_emb, lnf_g, lnf_b;
    std::vector<Layer> layers;
    std::vector<Id> by_entry;
};

template <typename T>
EmbedderTapeBinding<T> bind_embedder(Tape<T>& tape, const EmbedderParams<T>& p) {
    EmbedderTapeBinding<T> b;
    auto bindp = [&](const std::shared_ptr<Tensor<T>>& t) {
        auto id = tape.leaf(*t, t->requires_grad);
        b.by_entry.push_back(id);
        return id;
    };
    size_t e = 0;
    auto next = [&]() { return p.set.entries[e++].tensor; };
    b.tok_emb = bindp(next());
    for (int l = 0; l < p.cfg.n_layers; ++l) {
        typename EmbedderTapeBinding<T>::Layer L;
        L.ln1_g = bindp(next());
        L.ln1_b = bindp(next());
        L.wq = bindp(next());
        L.bq = bindp(next());
        L.wk = bindp(next());
        L.bk = bindp(next());
        L.wv = bindp(next());
        L.bv = bindp(next());
        L.wo = bindp(next());
        L.bo = bindp(next());
        L.ln2_g = bindp(next());
        L.ln2_b = bindp(next());
        L.w1 = bindp(next());
        L.b1 = bindp(next());
        L.w2 = bindp(next());
        L.b2 = bindp(next());
        b.layers.push_back(L);
    }
    b.lnf_g = bindp(next());
    b.lnf_b = bindp(next());
    return b;
}

// Returns a [1 x d_emb] unit-norm embedding node.
template <typename T>
typename Tape<T>::Id embed_tape(Tape<T>& tape, const EmbedderTapeBinding<T>& b,
                                const EmbedderConfig& cfg, const std::vector<int>& ids) {
    require(!ids.empty(), "embed: empty token sequence");
    auto x = tape.embedding(b.tok_emb, ids);
    const T inv_sqrt_dh = T{1} / std::sqrt(static_cast<T>(cfg.head_dim()));
    for (const auto& ly : b.layers) {
        auto h = tape.layer_norm(x, ly.ln1_g, ly.ln1_b);
        auto q = tape.add_bias(tape.matmul(h, ly.wq), ly.bq);
        auto k = tape.add_bias(tape.matmul(h, ly.wk), ly.bk);
        auto v = tape.add_bias(tape.matmul(h, ly.wv), ly.bv);
        std::vector<typename Tape<T>::Id> heads;
        for (int hd = 0; hd < cfg.n_heads; ++hd) {
            const int64_t c0 = static_cast<int64_t>(hd) * cfg.head_dim(), c1 = c0 + cfg.head_dim();
            auto qh = tape.slice_cols(q, c0, c1);
            auto kh = tape.slice_cols(k, c0, c1);
            auto vh = tape.slice_cols(v, c0, c1);
            auto attn = tape.softmax_rows(tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_dh));
            heads.push_back(tape.matmul(attn, vh));
        }
        auto ctx = tape.concat_cols(heads);
        x = tape.add(x, tape.add_bias(tape.matmul(ctx, ly.wo), ly.bo));
        auto h2 = tape.layer_norm(x, ly.ln2_g, ly.ln2_b);
        auto f = tape.gelu(tape.add_bias(tape.matmul(h2, ly.w1), ly.b1));
        x = tape.add(x, tape.add_bias(tape.matmul(f, ly.w2), ly.b2));
    }
    auto xf = tape.layer_norm(x, b.lnf_g, b.lnf_b);
    return tape.l2_normalize_rows(tape.mean_rows(xf));
}

// Deployment path: same forward without a tape. Unit-norm d_emb vector.
template <typename T>
std::vector<T> embed(const EmbedderParams<T>& p, const std::vector<int>& ids) {
    require(!ids.empty(), "embed: empty token sequence");
    const EmbedderConfig& cfg = p.cfg;
    const int64_t L = static_cast<int64_t>(ids.size()), d = cfg.d_emb;
    Tensor<T> x({L, d});
    for (int64_t i = 0; i < L; ++i) {
        const int id = ids[static_cast<size_t>(i)];
        require(id >= 0 && id < cfg.vocab_size, "embed: token id out of range");
        std::copy(p.tok_emb->row_ptr(id), p.tok_emb->row_ptr(id) + d, x.row_ptr(i));
    }
    auto layer_norm_all = [&](const Tensor<T>& in, const Tensor<T>& g, const Tensor<T>& bb) {
        Tensor<T> out({L, d});
        for (int64_t i = 0; i < L; ++i) {
            const T* r = in.row_ptr(i);
            T mu{};
            for (int64_t j = 0; j < d; ++j) mu += r[j];
            mu /= static_cast<T>(d);
            T var{};
            for (int64_t j = 0; j < d; ++j) var += (r[j] - mu) * (r[j] - mu);
            var /= static_cast<T>(d);
            const T is = T{1} / std::sqrt(var + static_cast<T>(1e-5));
            for (int64_t j = 0; j < d; ++j)
                out.at(i, j) = (r[j] - mu) * is * g.data[static_cast<size_t>(j)] + bb.data[static_cast<size_t>(j)];
        }
        return out;
    };
    auto linear = [&](const Tensor<T>& in, const Tensor<T>& W, const Tensor<T>& bb) {
        Tensor<T> out({L, W.cols()});
        for (int64_t i = 0; i < L; ++i)
            for (int64_t j = 0; j < W.cols(); ++j) out.at(i, j) = bb.data[static_cast<size_t>(j)];
        gemm_nn(in.data.data(), W.data.data(), out.data.data(), L, W.rows(), W.cols());
        return out;
    };
    const T inv_sqrt_dh = T{1} / std::sqrt(static_cast<T>(cfg.head_dim()));
    for (const auto& ly : p.layers) {
        Tensor<T> h = layer_norm_all(x, *ly.ln1_g, *ly.ln1_b);
        Tensor<T> q = linear(h, *ly.wq, *ly.bq);
        Tensor<T> k = linear(h, *ly.wk, *ly.bk);
        Tensor<T> v = linear(h, *ly.wv, *ly.bv);
        Tensor<T> ctx({L, d});
        const int64_t dh = cfg.head_dim();
        std::vector<T> scores(static_cast<size_t>(L));
        for (int hd = 0; hd < cfg.n_heads; ++hd) {
            const int64_t c0 = static_cast<int64_t>(hd) * dh;
            for (int64_t i = 0; i < L; ++i) {
                T mx{};
                for (int64_t j = 0; j < L; ++j) {
                    T s{};
                    for (int64_t t = 0; t < dh; ++t) s += q.at(i, c0 + t) * k.at(j, c0 + t);
                    s *= inv_sqrt_dh;
                    scores[static_cast<size_t>(j)] = s;
                    mx = j == 0 ? s : std::max(mx, s);
                }
                T denom{};
                for (int64_t j = 0; j < L; ++j) {
                    scores[static_cast<size_t>(j)] = std::exp(scores[static_cast<size_t>(j)] - mx);
                    denom += scores[static_cast<size_t>(j)];
                }
                for (int64_t j = 0; j < L; ++j) {
                    const T a = scores[static_cast<size_t>(j)] / denom;
                    for (int64_t t = 0; t < dh; ++t) ctx.at(i, c0 + t) += a * v.at(j, c0 + t);
                }
            }
        }
        Tensor<T> ao = linear(ctx, *ly.wo, *ly.bo);
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += ao.data[i];
        Tensor<T> h2 = layer_norm_all(x, *ly.ln2_g, *ly.ln2_b);
        Tensor<T> f = linear(h2, *ly.w1, *ly.b1);
        for (auto& vv : f.data) {
            double xd = static_cast<double>(vv);
            vv = static_cast<T>(0.5 * xd * (1.0 + std::erf(xd * M_SQRT1_2)));
        }
        Tensor<T> fo = linear(f, *ly.w2, *ly.b2);
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += fo.data[i];
    }
    Tensor<T> xf = layer_norm_all(x, *p.lnf_g, *p.lnf_b);
    std::vector<T> e(static_cast<size_t>(d));
    for (int64_t i = 0; i < L; ++i)
        for (int64_t j = 0; j < d; ++j) e[static_cast<size_t>(j)] += xf.at(i, j);
    T sq{};
    for (auto& v : e) {
        v /= static_cast<T>(L);
        sq += v * v;
    }
    const T inv = T{1} / std::sqrt(sq + static_cast<T>(1e-12));
    for (auto& v : e) v *= inv;
    return e;
}

struct ContrastiveHyper {
    double lr = 1e-3;
    double temperature = 0.05;
    double warmup_ratio = 0.03;
    int batch_size = 32;
    int epochs = 1;
    uint64_t seed = 0;
    int log_every = 20;
    bool verbose = true;
};

struct ContrastiveReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    int64_t steps = 0;
};

// Symmetric in-batch-negatives objective: rows of the cosine-similarity
// matrix softmax to the matching document, columns to the matching question;
// the two cross-entropies are averaged. Freezes params on return.
template <typename T>
ContrastiveReport contrastive_pretrain(
    EmbedderParams<T>& p, const std::vector<std::pair<std::vector<int>, std::vector<int>>>& pairs,
    const ContrastiveHyper& hy) {
    require(hy.batch_size >= 2, "contrastive: batch size must be >= 2 for in-batch negatives");
    require(static_cast<int>(pairs.size()) >= 2, "contrastive: need at least 2 pairs");
    ContrastiveReport rep;

    typename AdamW<T>::Config oc;
    oc.lr = static_cast<T>(hy.lr);
    AdamW<T> opt(p.set, oc);
    GradBuffer<T> gbuf(p.set);

    const int64_t n = static_cast<int64_t>(pairs.size());
    const int64_t steps_per_epoch = n / hy.batch_size;  // drop ragged tail: negatives need full batches
    require(steps_per_epoch >= 1, "contrastive: fewer pairs than one batch");
    const int64_t total_steps = steps_per_epoch * hy.epochs;
    auto rng = make_rng(hy.seed, "embedder-shuffle");
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    int64_t step = 0;
    for (int epoch = 0; epoch < hy.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int64_t s0 = 0; s0 + hy.batch_size <= n; s0 += hy.batch_size) {
            Tape<T> tape;
            auto bind = bind_embedder(tape, p);
            std::vector<typename Tape<T>::Id> qs, ds;
            for (int64_t bi = s0; bi < s0 + hy.batch_size; ++bi) {
                const auto& pr = pairs[static_cast<size_t>(order[static_cast<size_t>(bi)])];
                qs.push_back(embed_tape(tape, bind, p.cfg, pr.first));
                ds.push_back(embed_tape(tape, bind, p.cfg, pr.second));
            }
            auto Q = tape.concat_rows(qs);
            auto D = tape.concat_rows(ds);
            auto S = tape.scale(tape.matmul(Q, tape.transpose(D)), T{1} / static_cast<T>(hy.temperature));
            std::vector<int> targets(static_cast<size_t>(hy.batch_size));
            for (int i = 0; i < hy.batch_size; ++i) targets[static_cast<size_t>(i)] = i;
            std::vector<bool> mask(targets.size(), true);
            auto l_qd = tape.cross_entropy(S, targets, mask);
            auto l_dq = tape.cross_entropy(tape.transpose(S), targets, mask);
            auto loss = tape.scale(tape.add(l_qd, l_dq), static_cast<T>(0.5));
            const double lv = static_cast<double>(tape.value(loss).data[0]);
            if (step == 0) rep.initial_loss = lv;
            rep.final_loss = lv;
            tape.backward(loss);
            gbuf.zero();
            gbuf.accumulate_from_tape(tape, bind.by_entry, T{1});
            ++step;
            opt.step(gbuf.pointers(), lr_at_step(step, total_steps, static_cast<T>(hy.lr), hy.warmup_ratio));
            if (hy.verbose && (step % hy.log_every == 0 || step == total_steps))
                std::fprintf(stderr, "embedder step %lld/%lld loss %.4f\n", static_cast<long long>(step),
                             static_cast<long long>(total_steps), lv);
        }
    }
    rep.steps = step;
    p.freeze("contrastive-then-frozen");
    return rep;
}

}  // namespace xrag
