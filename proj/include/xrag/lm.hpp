#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "xrag/optim.hpp"
#include "xrag/tape.hpp"
#include "xrag/tensor.hpp"
#include "xrag/tokenizer.hpp"

namespace xrag {

struct LMConfig {
    int n_layers = 4;
    int d_model = 128;
    int n_heads = 4;
    int d_ff = 512;
    int vocab_size = 0;
    int max_seq_len = 512;

    void validate() const {
        require(n_layers >= 1 && d_model >= 1 && n_heads >= 1 && d_ff >= 1, "lm config: bad sizes");
        require(d_model % n_heads == 0, "lm config: d_model must be divisible by n_heads");
        require(vocab_size >= 1 && max_seq_len >= 1, "lm config: vocab/max_seq unset");
    }
    int head_dim() const { return d_model / n_heads; }
};

// One input slot: either a vocabulary token or a raw d_model vector that
// bypasses the embedding table.
template <typename T>
struct Slot {
    int token = -1;
    std::vector<T> vec;

    static Slot tok(int id) {
        Slot s;
        s.token = id;
        return s;
    }
    static Slot vector(std::vector<T> v) {
        Slot s;
        s.vec = std::move(v);
        return s;
    }
    bool is_vector() const { return token < 0; }
};

template <typename T>
using FusedInput = std::vector<Slot<T>>;

template <typename T>
FusedInput<T> tokens_to_slots(const std::vector<int>& ids) {
    FusedInput<T> in;
    in.reserve(ids.size());
    for (int id : ids) in.push_back(Slot<T>::tok(id));
    return in;
}

// Pre-LN decoder: x += attn(ln1(x)); x += ffn(ln2(x)); logits = ln_f(x)·W_head.
// Learned absolute positions; untied, bias-free head.
template <typename T>
struct LMParams {
    struct Layer {
        std::shared_ptr<Tensor<T>> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        std::shared_ptr<Tensor<T>> ln2_g, ln2_b, w1, b1, w2, b2;
    };

    LMConfig cfg;
    ParameterSet<T> set;
    std::shared_ptr<Tensor<T>> tok_emb, pos_emb, lnf_g, lnf_b, head;
    std::vector<Layer> layers;

    static LMParams init(const LMConfig& cfg, uint64_t seed) {
        cfg.validate();
        LMParams p;
        p.cfg = cfg;
        auto rng = make_rng(seed, "lm-init");
        const int64_t d = cfg.d_model, V = cfg.vocab_size, F = cfg.d_ff;
        // Fan-in scaled init. The fixed 0.02 used by large GPTs starves the
        // query-key gradient path at these widths and attention never sharpens.
        const T sd_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
        const T sd_f = static_cast<T>(1.0 / std::sqrt(static_cast<double>(F)));
        const T sd_e = static_cast<T>(0.1);
        p.tok_emb = p.set.add("tok_emb", Tensor<T>::randn({V, d}, rng, sd_e));
        p.pos_emb = p.set.add("pos_emb", Tensor<T>::randn({cfg.max_seq_len, d}, rng, sd_e));
        for (int l = 0; l < cfg.n_layers; ++l) {
            const std::string pre = "l" + std::to_string(l) + ".";
            Layer L;
            L.ln1_g = p.set.add(pre + "ln1.g", Tensor<T>::full({d}, T{1}));
            L.ln1_b = p.set.add(pre + "ln1.b", Tensor<T>::zeros({d}));
            L.wq = p.set.add(pre + "attn.wq", Tensor<T>::randn({d, d}, rng, sd_d));
            L.bq = p.set.add(pre + "attn.bq", Tensor<T>::zeros({d}));
            L.wk = p.set.add(pre + "attn.wk", Tensor<T>::randn({d, d}, rng, sd_d));
            L.bk = p.set.add(pre + "attn.bk", Tensor<T>::zeros({d}));
            L.wv = p.set.add(pre + "attn.wv", Tensor<T>::randn({d, d}, rng, sd_d));
            L.bv = p.set.add(pre + "attn.bv", Tensor<T>::zeros({d}));
            L.wo = p.set.add(pre + "attn.wo", Tensor<T>::randn({d, d}, rng, sd_d));
            L.bo = p.set.add(pre + "attn.bo", Tensor<T>::zeros({d}));
            L.ln2_g = p.set.add(pre + "ln2.g", Tensor<T>::full({d}, T{1}));
            L.ln2_b = p.set.add(pre + "ln2.b", Tensor<T>::zeros({d}));
            L.w1 = p.set.add(pre + "ffn.w1", Tensor<T>::randn({d, F}, rng, sd_d));
            L.b1 = p.set.add(pre + "ffn.b1", Tensor<T>::zeros({F}));
            L.w2 = p.set.add(pre + "ffn.w2", Tensor<T>::randn({F, d}, rng, sd_f));
            L.b2 = p.set.add(pre + "ffn.b2", Tensor<T>::zeros({d}));
            p.layers.push_back(std::move(L));
        }
        p.lnf_g = p.set.add("ln_f.g", Tensor<T>::full({d}, T{1}));
        p.lnf_b = p.set.add("ln_f.b", Tensor<T>::zeros({d}));
        p.head = p.set.add("head.w", Tensor<T>::randn({d, V}, rng, sd_d));
        return p;
    }

    void freeze() {
        for (auto& e : set.entries) {
            e.frozen = true;
            e.tensor->requires_grad = false;
        }
    }
    bool frozen() const {
        for (const auto& e : set.entries)
            if (!e.frozen) return false;
        return !set.entries.empty();
    }
};

// ---- tape forward (training path) ----

template <typename T>
struct LMTapeBinding {
    using Id = typename Tape<T>::Id;
    struct Layer {
        Id ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    };
    Id tok_emb, pos_emb, lnf_g, lnf_b, head;
    std::vector<Layer> layers;
    std::vector<Id> by_entry;  // aligned with LMParams::set.entries
};

template <typename T>
LMTapeBinding<T> bind_lm(Tape<T>& tape, const LMParams<T>& p) {
    LMTapeBinding<T> b;
    auto bindp = [&](const std::shared_ptr<Tensor<T>>& t, const std::string& name) {
        auto id = tape.leaf(*t, t->requires_grad, name);
        b.by_entry.push_back(id);
        return id;
    };
    size_t e = 0;
    auto next = [&]() { return p.set.entries[e++]; };
    b.tok_emb = bindp(next().tensor, "tok_emb");
    b.pos_emb = bindp(next().tensor, "pos_emb");
    for (int l = 0; l < p.cfg.n_layers; ++l) {
        typename LMTapeBinding<T>::Layer L;
        L.ln1_g = bindp(next().tensor, "ln1.g");
        L.ln1_b = bindp(next().tensor, "ln1.b");
        L.wq = bindp(next().tensor, "wq");
        L.bq = bindp(next().tensor, "bq");
        L.wk = bindp(next().tensor, "wk");
        L.bk = bindp(next().tensor, "bk");
        L.wv = bindp(next().tensor, "wv");
        L.bv = bindp(next().tensor, "bv");
        L.wo = bindp(next().tensor, "wo");
        L.bo = bindp(next().tensor, "bo");
        L.ln2_g = bindp(next().tensor, "ln2.g");
        L.ln2_b = bindp(next().tensor, "ln2.b");
        L.w1 = bindp(next().tensor, "w1");
        L.b1 = bindp(next().tensor, "b1");
        L.w2 = bindp(next().tensor, "w2");
        L.b2 = bindp(next().tensor, "b2");
        b.layers.push_back(L);
    }
    b.lnf_g = bindp(next().tensor, "ln_f.g");
    b.lnf_b = bindp(next().tensor, "ln_f.b");
    b.head = bindp(next().tensor, "head.w");
    return b;
}

// Forward over token ids with optional vector injections: vec_slots[k] =
// (row, tape node of a [1 x d] vector) replaces the embedding row before
// positions are added. Rows listed in vec_slots must carry a pad id in `ids`.
template <typename T>
typename Tape<T>::Id lm_forward_tape(
    Tape<T>& tape, const LMTapeBinding<T>& b, const LMConfig& cfg, const std::vector<int>& ids,
    const std::vector<std::pair<int64_t, typename Tape<T>::Id>>& vec_slots = {}) {
    const int64_t L = static_cast<int64_t>(ids.size());
    require(L >= 1, "lm forward: empty input");
    require(L <= cfg.max_seq_len, "lm forward: input longer than max_seq_len");
    auto x = tape.embedding(b.tok_emb, ids);
    for (const auto& [row, vid] : vec_slots) {
        require(tape.value(vid).numel() == cfg.d_model, "lm forward: vector width mismatch");
        x = tape.set_row(x, row, vid);
    }
    x = tape.add(x, tape.slice_rows(b.pos_emb, 0, L));
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
            auto scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_dh);
            auto attn = tape.causal_softmax(scores);
            heads.push_back(tape.matmul(attn, vh));
        }
        auto ctx = tape.concat_cols(heads);
        x = tape.add(x, tape.add_bias(tape.matmul(ctx, ly.wo), ly.bo));
        auto h2 = tape.layer_norm(x, ly.ln2_g, ly.ln2_b);
        auto f = tape.gelu(tape.add_bias(tape.matmul(h2, ly.w1), ly.b1));
        x = tape.add(x, tape.add_bias(tape.matmul(f, ly.w2), ly.b2));
    }
    auto xf = tape.layer_norm(x, b.lnf_g, b.lnf_b);
    return tape.matmul(xf, b.head);
}

// ---- plain engine (inference path, incremental by construction) ----

template <typename T>
struct KVCache {
    std::vector<Tensor<T>> k, v;  // per layer, [max_seq x d_model]
    int64_t len = 0;

    static KVCache make(const LMConfig& cfg) {
        KVCache c;
        for (int l = 0; l < cfg.n_layers; ++l) {
            c.k.push_back(Tensor<T>::zeros({cfg.max_seq_len, cfg.d_model}));
            c.v.push_back(Tensor<T>::zeros({cfg.max_seq_len, cfg.d_model}));
        }
        return c;
    }
};

namespace detail {

// y[j] = b[j] + sum_k x[k]·W[k,j], k ascending — the same accumulation order
// for every call site, so replaying a prefix reproduces bit-identical state.
template <typename T>
void matvec(const Tensor<T>& W, const T* x, const T* bias, T* y) {
    const int64_t in = W.rows(), out = W.cols();
    for (int64_t j = 0; j < out; ++j) y[j] = bias ? bias[j] : T{};
    for (int64_t k = 0; k < in; ++k) {
        const T xk = x[k];
        const T* wrow = W.row_ptr(k);
        for (int64_t j = 0; j < out; ++j) y[j] += xk * wrow[j];
    }
}

template <typename T>
void layer_norm_row(const T* x, const Tensor<T>& g, const Tensor<T>& b, int64_t n, T* y) {
    T mu{};
    for (int64_t j = 0; j < n; ++j) mu += x[j];
    mu /= static_cast<T>(n);
    T var{};
    for (int64_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<T>(n);
    const T is = T{1} / std::sqrt(var + static_cast<T>(1e-5));
    for (int64_t j = 0; j < n; ++j) y[j] = (x[j] - mu) * is * g.data[static_cast<size_t>(j)] + b.data[static_cast<size_t>(j)];
}

template <typename T>
T gelu_scalar(T x) {
    const double xd = static_cast<double>(x);
    return static_cast<T>(0.5 * xd * (1.0 + std::erf(xd * M_SQRT1_2)));
}

}  // namespace detail

// Appends one slot; returns the logits row for the new position.
template <typename T>
std::vector<T> lm_step(const LMParams<T>& p, KVCache<T>& cache, const Slot<T>& slot) {
    const LMConfig& cfg = p.cfg;
    const int64_t d = cfg.d_model, pos = cache.len;
    require(pos < cfg.max_seq_len, "lm step: sequence exceeds max_seq_len");
    std::vector<T> x(static_cast<size_t>(d));
    if (slot.is_vector()) {
        require(static_cast<int64_t>(slot.vec.size()) == d, "lm step: vector width mismatch");
        for (int64_t j = 0; j < d; ++j) {
            require(std::isfinite(static_cast<double>(slot.vec[static_cast<size_t>(j)])),
                    "lm step: non-finite injected vector");
            x[static_cast<size_t>(j)] = slot.vec[static_cast<size_t>(j)];
        }
    } else {
        require(slot.token >= 0 && slot.token < cfg.vocab_size, "lm step: token id out of range");
        const T* e = p.tok_emb->row_ptr(slot.token);
        std::copy(e, e + d, x.begin());
    }
    const T* pe = p.pos_emb->row_ptr(pos);
    for (int64_t j = 0; j < d; ++j) x[static_cast<size_t>(j)] += pe[j];

    const int64_t dh = cfg.head_dim();
    const T inv_sqrt_dh = T{1} / std::sqrt(static_cast<T>(dh));
    std::vector<T> h(static_cast<size_t>(d)), q(static_cast<size_t>(d)), ctx(static_cast<size_t>(d));
    std::vector<T> f(static_cast<size_t>(cfg.d_ff)), tmp(static_cast<size_t>(d));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& ly = p.layers[static_cast<size_t>(l)];
        detail::layer_norm_row(x.data(), *ly.ln1_g, *ly.ln1_b, d, h.data());
        detail::matvec(*ly.wq, h.data(), ly.bq->data.data(), q.data());
        detail::matvec(*ly.wk, h.data(), ly.bk->data.data(), cache.k[static_cast<size_t>(l)].row_ptr(pos));
        detail::matvec(*ly.wv, h.data(), ly.bv->data.data(), cache.v[static_cast<size_t>(l)].row_ptr(pos));
        const Tensor<T>& K = cache.k[static_cast<size_t>(l)];
        const Tensor<T>& V = cache.v[static_cast<size_t>(l)];
        std::vector<T> scores(static_cast<size_t>(pos + 1));
        for (int hd = 0; hd < cfg.n_heads; ++hd) {
            const int64_t c0 = static_cast<int64_t>(hd) * dh;
            T mx{};
            for (int64_t j = 0; j <= pos; ++j) {
                T s{};
                const T* kr = K.row_ptr(j) + c0;
                for (int64_t t = 0; t < dh; ++t) s += q[static_cast<size_t>(c0 + t)] * kr[t];
                s *= inv_sqrt_dh;
                scores[static_cast<size_t>(j)] = s;
                mx = j == 0 ? s : std::max(mx, s);
            }
            T denom{};
            for (int64_t j = 0; j <= pos; ++j) {
                scores[static_cast<size_t>(j)] = std::exp(scores[static_cast<size_t>(j)] - mx);
                denom += scores[static_cast<size_t>(j)];
            }
            for (int64_t t = 0; t < dh; ++t) ctx[static_cast<size_t>(c0 + t)] = T{};
            for (int64_t j = 0; j <= pos; ++j) {
                const T a = scores[static_cast<size_t>(j)] / denom;
                const T* vr = V.row_ptr(j) + c0;
                for (int64_t t = 0; t < dh; ++t) ctx[static_cast<size_t>(c0 + t)] += a * vr[t];
            }
        }
        detail::matvec(*ly.wo, ctx.data(), ly.bo->data.data(), tmp.data());
        for (int64_t j = 0; j < d; ++j) x[static_cast<size_t>(j)] += tmp[static_cast<size_t>(j)];
        detail::layer_norm_row(x.data(), *ly.ln2_g, *ly.ln2_b, d, h.data());
        detail::matvec(*ly.w1, h.data(), ly.b1->data.data(), f.data());
        for (auto& v2 : f) v2 = detail::gelu_scalar(v2);
        detail::matvec(*ly.w2, f.data(), ly.b2->data.data(), tmp.data());
        for (int64_t j = 0; j < d; ++j) x[static_cast<size_t>(j)] += tmp[static_cast<size_t>(j)];
    }
    detail::layer_norm_row(x.data(), *p.lnf_g, *p.lnf_b, d, h.data());
    std::vector<T> logits(static_cast<size_t>(cfg.vocab_size));
    detail::matvec(*p.head, h.data(), static_cast<const T*>(nullptr), logits.data());
    ++cache.len;
    return logits;
}

// Full forward = the incremental engine replayed from an empty cache, so the
// two are identical by construction; returns logits for every position.
template <typename T>
Tensor<T> lm_forward(const LMParams<T>& p, const FusedInput<T>& input) {
    require(!input.empty(), "lm forward: empty input");
    require(static_cast<int64_t>(input.size()) <= p.cfg.max_seq_len,
            "lm forward: input longer than max_seq_len");
    KVCache<T> cache = KVCache<T>::make(p.cfg);
    Tensor<T> logits({static_cast<int64_t>(input.size()), p.cfg.vocab_size});
    for (size_t i = 0; i < input.size(); ++i) {
        std::vector<T> row = lm_step(p, cache, input[i]);
        std::copy(row.begin(), row.end(), logits.row_ptr(static_cast<int64_t>(i)));
    }
    return logits;
}

struct GenerationConfig {
    int max_new_tokens = 16;
    std::vector<int> stop_ids = {Tokenizer::kEos};
};

template <typename T>
int argmax_lowest_tie(const std::vector<T>& v) {
    int best = 0;
    for (int j = 1; j < static_cast<int>(v.size()); ++j)
        if (v[static_cast<size_t>(j)] > v[static_cast<size_t>(best)]) best = j;
    return best;
}

// Greedy continuation; ties break to the lowest token id; stop ids are not
// included in the returned sequence.
template <typename T>
std::vector<int> generate(const LMParams<T>& p, const FusedInput<T>& prompt,
                          const GenerationConfig& gen) {
    require(gen.max_new_tokens >= 1, "generate: max_new_tokens must be >= 1");
    require(!prompt.empty(), "generate: empty prompt");
    KVCache<T> cache = KVCache<T>::make(p.cfg);
    std::vector<T> logits;
    for (const auto& s : prompt) logits = lm_step(p, cache, s);
    std::vector<int> out;
    for (int n = 0; n < gen.max_new_tokens; ++n) {
        const int next = argmax_lowest_tie(logits);
        if (std::find(gen.stop_ids.begin(), gen.stop_ids.end(), next) != gen.stop_ids.end()) break;
        out.push_back(next);
        if (cache.len >= p.cfg.max_seq_len) break;
        logits = lm_step(p, cache, Slot<T>::tok(next));
    }
    return out;
}

// log p(target_i | prefix, target_<i); log-softmax evaluated in double.
template <typename T>
std::vector<double> sequence_log_prob(const LMParams<T>& p, const FusedInput<T>& prefix,
                                      const std::vector<int>& target) {
    require(!prefix.empty() && !target.empty(), "sequence_log_prob: empty input");
    require(static_cast<int64_t>(prefix.size() + target.size()) <= p.cfg.max_seq_len,
            "sequence_log_prob: prefix+target exceed max_seq_len");
    KVCache<T> cache = KVCache<T>::make(p.cfg);
    std::vector<T> logits;
    for (const auto& s : prefix) logits = lm_step(p, cache, s);
    std::vector<double> out;
    for (size_t i = 0; i < target.size(); ++i) {
        const int t = target[i];
        require(t >= 0 && t < p.cfg.vocab_size, "sequence_log_prob: target id out of range");
        double mx = static_cast<double>(logits[0]);
        for (T v : logits) mx = std::max(mx, static_cast<double>(v));
        double denom = 0.0;
        for (T v : logits) denom += std::exp(static_cast<double>(v) - mx);
        out.push_back(static_cast<double>(logits[static_cast<size_t>(t)]) - mx - std::log(denom));
        if (i + 1 < target.size()) logits = lm_step(p, cache, Slot<T>::tok(t));
    }
    return out;
}

// Token-weighted mean next-token cross-entropy over streams.
template <typename T>
double validation_ce(const LMParams<T>& p, const std::vector<std::vector<int>>& streams) {
    double total = 0.0;
    int64_t count = 0;
    for (const auto& s : streams) {
        if (s.size() < 2) continue;
        std::vector<int> prefix = {s[0]};
        std::vector<int> target(s.begin() + 1, s.end());
        auto lp = sequence_log_prob(p, tokens_to_slots<T>(prefix), target);
        for (double v : lp) total -= v;
        count += static_cast<int64_t>(lp.size());
    }
    require(count > 0, "validation_ce: no scoreable tokens");
    return total / static_cast<double>(count);
}

struct PretrainHyper {
    double lr = 3e-3;
    double weight_decay = 0.0;
    double warmup_ratio = 0.03;
    int batch_size = 8;
    int epochs = 1;
    uint64_t seed = 0;
    int log_every = 50;
    bool verbose = true;
};

struct PretrainReport {
    double initial_val_ce = 0.0;
    double final_val_ce = 0.0;
    int64_t steps = 0;
};

// Next-token language modelling over token streams; returns frozen params.
// Divergence to non-finite loss aborts with numeric_error.
template <typename T>
PretrainReport pretrain_base_lm(LMParams<T>& p, const std::vector<std::vector<int>>& train_streams,
                                const std::vector<std::vector<int>>& val_streams,
                                const PretrainHyper& hy) {
    require(!train_streams.empty() && !val_streams.empty(), "pretrain: empty stream set");
    for (const auto& s : train_streams) require(s.size() >= 2, "pretrain: stream too short");
    PretrainReport rep;
    rep.initial_val_ce = validation_ce(p, val_streams);

    typename AdamW<T>::Config oc;
    oc.lr = static_cast<T>(hy.lr);
    oc.weight_decay = static_cast<T>(hy.weight_decay);
    AdamW<T> opt(p.set, oc);
    GradBuffer<T> gbuf(p.set);

    const int64_t n = static_cast<int64_t>(train_streams.size());
    const int64_t steps_per_epoch = (n + hy.batch_size - 1) / hy.batch_size;
    const int64_t total_steps = steps_per_epoch * hy.epochs;
    auto rng = make_rng(hy.seed, "lm-pretrain-shuffle");

    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    int64_t step = 0;
    double running = 0.0;
    int64_t running_n = 0;
    for (int epoch = 0; epoch < hy.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int64_t b0 = 0; b0 < n; b0 += hy.batch_size) {
            const int64_t b1 = std::min(n, b0 + hy.batch_size);
            gbuf.zero();
            double batch_loss = 0.0;
            for (int64_t bi = b0; bi < b1; ++bi) {
                const auto& s = train_streams[static_cast<size_t>(order[static_cast<size_t>(bi)])];
                Tape<T> tape;
                auto bind = bind_lm(tape, p);
                auto logits = lm_forward_tape(tape, bind, p.cfg,
                                              std::vector<int>(s.begin(), s.end() - 1));
                std::vector<int> targets(s.begin() + 1, s.end());
                std::vector<bool> mask(targets.size(), true);
                auto loss = tape.cross_entropy(logits, targets, mask);
                batch_loss += static_cast<double>(tape.value(loss).data[0]);
                tape.backward(loss);
                gbuf.accumulate_from_tape(tape, bind.by_entry, T{1} / static_cast<T>(b1 - b0));
            }
            ++step;
            const T lr = lr_at_step(step, total_steps, static_cast<T>(hy.lr), hy.warmup_ratio);
            opt.step(gbuf.pointers(), lr);
            running += batch_loss / static_cast<double>(b1 - b0);
            ++running_n;
            if (hy.verbose && (step % hy.log_every == 0 || step == total_steps)) {
                std::fprintf(stderr, "lm-pretrain step %lld/%lld loss %.4f\n",
                             static_cast<long long>(step), static_cast<long long>(total_steps),
                             running / static_cast<double>(running_n));
                running = 0.0;
                running_n = 0;
            }
        }
    }
    rep.steps = step;
    rep.final_val_ce = validation_ce(p, val_streams);
    p.freeze();
    return rep;
}

}  // namespace xrag
