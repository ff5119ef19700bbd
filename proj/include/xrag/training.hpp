#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "xrag/bridge.hpp"
#include "xrag/corpus.hpp"
#include "xrag/datastore.hpp"
#include "xrag/embedder.hpp"
#include "xrag/lm.hpp"
#include "xrag/optim.hpp"

namespace xrag {

// ---- example assembly ----

// Stage-1 layout: [bos] template-prefix-with-[X]-slot ... then the document.
// Row i's target is input[i+1] (eos past the end); the mask covers exactly
// the rows predicting document tokens and the closing eos.
struct ParaphraseAssembly {
    std::vector<int> input_ids;  // pad id at vec_row
    int64_t vec_row = 0;
    int64_t doc_start = 0;  // index of the first document token
    std::vector<int> targets;
    std::vector<bool> mask;
};

inline ParaphraseAssembly assemble_paraphrase_example(const PromptTemplate& tpl, const Tokenizer& tk,
                                                      const std::vector<int>& doc_tokens) {
    require(tpl.count(PromptTemplate::Kind::Context) == 1 &&
                tpl.count(PromptTemplate::Kind::Target) == 1,
            "paraphrase assembly: template needs one [X] and one [D]");
    require(!doc_tokens.empty(), "paraphrase assembly: empty document");
    ParaphraseAssembly out;
    out.input_ids.push_back(Tokenizer::kBos);
    for (const auto& p : tpl.pieces) {
        switch (p.kind) {
            case PromptTemplate::Kind::Word:
                require(tk.has(p.word), "paraphrase assembly: template word not in vocab: " + p.word);
                out.input_ids.push_back(tk.id_of(p.word));
                break;
            case PromptTemplate::Kind::Context:
                out.vec_row = static_cast<int64_t>(out.input_ids.size());
                out.input_ids.push_back(Tokenizer::kPad);
                break;
            case PromptTemplate::Kind::Target:
                out.doc_start = static_cast<int64_t>(out.input_ids.size());
                for (int t : doc_tokens) out.input_ids.push_back(t);
                break;
            case PromptTemplate::Kind::Query:
                throw config_error("paraphrase assembly: unexpected [Q]");
        }
    }
    const int64_t n = static_cast<int64_t>(out.input_ids.size());
    out.targets.resize(static_cast<size_t>(n));
    out.mask.assign(static_cast<size_t>(n), false);
    for (int64_t i = 0; i + 1 < n; ++i) out.targets[static_cast<size_t>(i)] = out.input_ids[static_cast<size_t>(i + 1)];
    out.targets[static_cast<size_t>(n - 1)] = Tokenizer::kEos;
    for (int64_t i = out.doc_start - 1; i < n; ++i) out.mask[static_cast<size_t>(i)] = true;
    return out;
}

// Stage-2 layout: teacher prompt carries the document as text, student
// carries one vector slot; question and answer tokens are identical, so
// answer rows align by index offset from each prompt's end.
struct DistillAssembly {
    std::vector<int> teacher_ids;  // all tokens: prompt + answer
    std::vector<int> student_ids;  // pad at vec_row: prompt + answer
    int64_t vec_row = 0;
    int64_t teacher_prompt_len = 0;
    int64_t student_prompt_len = 0;
    std::vector<int> answer_plus_eos;  // CE/KL targets, one per answer row
};

inline DistillAssembly assemble_distill_example(const PromptTemplate& tpl, const Tokenizer& tk,
                                                const std::vector<int>& doc_tokens,
                                                const std::vector<int>& question_ids,
                                                const std::vector<int>& answer_ids, int max_seq_len) {
    require(!answer_ids.empty(), "distill assembly: empty answer");
    DistillAssembly out;
    auto emit = [&](std::vector<int>& ids, bool textual_context) {
        ids.push_back(Tokenizer::kBos);
        for (const auto& p : tpl.pieces) {
            switch (p.kind) {
                case PromptTemplate::Kind::Word:
                    require(tk.has(p.word), "distill assembly: template word not in vocab: " + p.word);
                    ids.push_back(tk.id_of(p.word));
                    break;
                case PromptTemplate::Kind::Context:
                    if (textual_context) {
                        for (int t : doc_tokens) ids.push_back(t);
                    } else {
                        out.vec_row = static_cast<int64_t>(ids.size());
                        ids.push_back(Tokenizer::kPad);
                    }
                    break;
                case PromptTemplate::Kind::Query:
                    for (int t : question_ids) ids.push_back(t);
                    break;
                case PromptTemplate::Kind::Target:
                    throw config_error("distill assembly: unexpected [D] in task template");
            }
        }
    };
    emit(out.teacher_ids, true);
    out.teacher_prompt_len = static_cast<int64_t>(out.teacher_ids.size());
    emit(out.student_ids, false);
    out.student_prompt_len = static_cast<int64_t>(out.student_ids.size());
    for (int t : answer_ids) {
        out.teacher_ids.push_back(t);
        out.student_ids.push_back(t);
    }
    out.answer_plus_eos = answer_ids;
    out.answer_plus_eos.push_back(Tokenizer::kEos);
    require(static_cast<int>(out.teacher_ids.size()) <= max_seq_len,
            "distill assembly: teacher prompt exceeds max_seq_len");
    return out;
}

// ---- shared reporting ----

struct StageReport {
    std::vector<double> loss_curve;  // per optimizer step, batch-mean total
    std::vector<double> nll_curve, kl_curve;
    double initial_loss = 0.0;
    double final_loss_smoothed = 0.0;
    int64_t steps = 0;
    uint64_t lm_checksum_before = 0, lm_checksum_after = 0;
    uint64_t emb_checksum_before = 0, emb_checksum_after = 0;
    uint64_t w_checksum_before = 0, w_checksum_after = 0;
    double projector_grad_norm_first = 0.0;
    double frozen_grad_norm_max = 0.0;  // structural zero, verified per step
};

inline double smoothed_tail(const std::vector<double>& curve, size_t window) {
    require(!curve.empty(), "smoothed_tail: empty curve");
    const size_t w = std::min(window, curve.size());
    double s = 0.0;
    for (size_t i = curve.size() - w; i < curve.size(); ++i) s += curve[i];
    return s / static_cast<double>(w);
}

namespace detail {

// The spine of both stages: only the projector may carry gradients.
template <typename T>
void check_frozen_world(const LMParams<T>& lm, const EmbedderParams<T>& emb) {
    if (!lm.frozen()) throw prereq_error("training: LM must be frozen before projector training");
    if (!emb.frozen()) throw prereq_error("training: embedder must be frozen before projector training");
}

template <typename T>
double grad_norm(const Tape<T>& tape, const std::vector<typename Tape<T>::Id>& ids) {
    double sq = 0.0;
    for (auto id : ids) {
        if (!tape.tracks_grad(id)) continue;
        for (T v : tape.grad(id).data) sq += static_cast<double>(v) * static_cast<double>(v);
    }
    return std::sqrt(sq);
}

}  // namespace detail

// ---- stage 1: paraphrase pretraining ----

struct Stage1Config {
    double lr = 3e-3;
    double warmup_ratio = 0.03;
    int epochs = 1;
    int batch_size = 8;
    int max_samples = 0;  // 0 = use all pairs
    uint64_t seed = 0;
    int log_every = 50;
    bool verbose = true;
};

template <typename T>
StageReport run_stage1(const LMParams<T>& lm, const EmbedderParams<T>& emb, ProjectorParams<T>& W,
                       const Datastore& ds, const Tokenizer& tk,
                       const std::vector<ParaphrasePair>& pairs_in, const Stage1Config& cfg) {
    detail::check_frozen_world(lm, emb);
    require(!pairs_in.empty(), "stage1: no pairs");
    require(W.d_emb == ds.d_emb, "stage1: projector d_emb mismatch with datastore");
    std::vector<ParaphrasePair> pairs = pairs_in;
    if (cfg.max_samples > 0 && static_cast<int>(pairs.size()) > cfg.max_samples)
        pairs.resize(static_cast<size_t>(cfg.max_samples));

    StageReport rep;
    rep.lm_checksum_before = lm.set.checksum();
    rep.emb_checksum_before = emb.set.checksum();
    rep.w_checksum_before = W.set.checksum();

    const bool trainable = [&] {
        for (const auto& e : W.set.entries)
            if (!e.frozen) return true;
        return false;
    }();

    typename AdamW<T>::Config oc;
    oc.lr = static_cast<T>(cfg.lr);
    AdamW<T> opt(W.set, oc);
    GradBuffer<T> gbuf(W.set);

    const int64_t n = static_cast<int64_t>(pairs.size());
    const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    auto rng = make_rng(cfg.seed, "stage1-shuffle");
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    const auto& pool = paraphrase_pool();
    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int64_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
            const int64_t b1 = std::min(n, b0 + cfg.batch_size);
            gbuf.zero();
            double batch_loss = 0.0;
            for (int64_t bi = b0; bi < b1; ++bi) {
                const auto& pr = pairs[static_cast<size_t>(order[static_cast<size_t>(bi)])];
                const auto& doc = ds.docs[static_cast<size_t>(pr.entity_id)];
                auto asm_ = assemble_paraphrase_example(pool[static_cast<size_t>(pr.template_idx)], tk,
                                                        doc.tokens);
                Tape<T> tape;
                auto lm_bind = bind_lm(tape, lm);
                auto w_bind = bind_projector(tape, W);
                auto e_leaf = tape.constant(
                    Tensor<T>({1, ds.d_emb}, cast_embedding<T>(ds.row(pr.entity_id), ds.d_emb)));
                auto vec = project_tape(tape, w_bind, e_leaf);
                auto logits = lm_forward_tape(tape, lm_bind, lm.cfg, asm_.input_ids,
                                              {{asm_.vec_row, vec}});
                auto loss = tape.cross_entropy(logits, asm_.targets, asm_.mask);
                batch_loss += static_cast<double>(tape.value(loss).data[0]);
                if (trainable) {
                    tape.backward(loss);
                    if (step == 0 && bi == b0) {
                        rep.projector_grad_norm_first = detail::grad_norm(tape, w_bind.by_entry);
                        rep.frozen_grad_norm_max =
                            std::max(rep.frozen_grad_norm_max, detail::grad_norm(tape, lm_bind.by_entry));
                    }
                    gbuf.accumulate_from_tape(tape, w_bind.by_entry, T{1} / static_cast<T>(b1 - b0));
                }
            }
            ++step;
            if (trainable)
                opt.step(gbuf.pointers(), lr_at_step(step, total_steps, static_cast<T>(cfg.lr),
                                                     cfg.warmup_ratio));
            const double mean_loss = batch_loss / static_cast<double>(b1 - b0);
            rep.loss_curve.push_back(mean_loss);
            if (step == 1) rep.initial_loss = mean_loss;
            if (cfg.verbose && (step % cfg.log_every == 0 || step == total_steps))
                std::fprintf(stderr, "stage1 step %lld/%lld loss %.4f\n", static_cast<long long>(step),
                             static_cast<long long>(total_steps), mean_loss);
        }
    }
    rep.steps = step;
    rep.final_loss_smoothed = smoothed_tail(rep.loss_curve, 100);
    rep.lm_checksum_after = lm.set.checksum();
    rep.emb_checksum_after = emb.set.checksum();
    rep.w_checksum_after = W.set.checksum();
    require(rep.lm_checksum_after == rep.lm_checksum_before, "stage1: frozen LM moved");
    require(rep.emb_checksum_after == rep.emb_checksum_before, "stage1: frozen embedder moved");
    return rep;
}

// ---- stage 2: context-aware instruction tuning with self-distillation ----

struct ResolvedExample {
    int context_doc_id = -1;
    std::vector<int> question_ids;
    std::vector<int> answer_ids;
    std::string category;
};

// Open-domain QA items get their context by one offline top-1 retrieval over
// the datastore; RC and summarization items keep their gold document.
template <typename T>
std::vector<ResolvedExample> resolve_instruction_contexts(
    const std::vector<InstructionExample>& examples, const Datastore& ds,
    const EmbedderParams<T>& emb, const Tokenizer& tk) {
    std::vector<ResolvedExample> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) {
        ResolvedExample r;
        r.category = ex.category;
        r.question_ids = tk.encode(ex.question);
        r.answer_ids = tk.encode(ex.answer);
        if (ex.category == "open_domain_qa") {
            auto q = embed(emb, r.question_ids);
            std::vector<float> qf(q.size());
            for (size_t i = 0; i < q.size(); ++i) qf[i] = static_cast<float>(q[i]);
            r.context_doc_id = static_cast<int>(search_top_k(ds, qf, 1)[0].doc_id);
        } else {
            require(ex.entity_id >= 0 && ex.entity_id < ds.size(), "resolve: bad entity id");
            r.context_doc_id = ex.entity_id;
        }
        out.push_back(std::move(r));
    }
    return out;
}

struct Stage2Config {
    double lr = 1e-4;
    double warmup_ratio = 0.03;
    double alpha = 2.0;
    double kl_temperature = 1.0;
    double nll_weight = 1.0;  // 0 for the kl-only ablation
    int epochs = 1;
    int batch_size = 8;
    uint64_t seed = 0;
    int log_every = 50;
    bool verbose = true;
};

template <typename T>
StageReport run_stage2(const LMParams<T>& lm, const EmbedderParams<T>& emb, ProjectorParams<T>& W,
                       const Datastore& ds, const Tokenizer& tk,
                       const std::vector<ResolvedExample>& examples, const Stage2Config& cfg) {
    detail::check_frozen_world(lm, emb);
    require(!examples.empty(), "stage2: no examples");
    require(cfg.alpha >= 0.0, "stage2: alpha must be >= 0");
    require(cfg.kl_temperature > 0.0, "stage2: temperature must be positive");

    StageReport rep;
    rep.lm_checksum_before = lm.set.checksum();
    rep.emb_checksum_before = emb.set.checksum();
    rep.w_checksum_before = W.set.checksum();

    const bool trainable = [&] {
        for (const auto& e : W.set.entries)
            if (!e.frozen) return true;
        return false;
    }();

    typename AdamW<T>::Config oc;
    oc.lr = static_cast<T>(cfg.lr);
    AdamW<T> opt(W.set, oc);
    GradBuffer<T> gbuf(W.set);

    const int64_t n = static_cast<int64_t>(examples.size());
    const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    auto rng = make_rng(cfg.seed, "stage2-shuffle");
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    const auto& tpl = task_template();
    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int64_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
            const int64_t b1 = std::min(n, b0 + cfg.batch_size);
            gbuf.zero();
            double batch_nll = 0.0, batch_kl = 0.0, batch_total = 0.0;
            for (int64_t bi = b0; bi < b1; ++bi) {
                const auto& ex = examples[static_cast<size_t>(order[static_cast<size_t>(bi)])];
                const auto& doc = ds.docs[static_cast<size_t>(ex.context_doc_id)];
                auto asm_ = assemble_distill_example(tpl, tk, doc.tokens, ex.question_ids,
                                                     ex.answer_ids, lm.cfg.max_seq_len);
                const int64_t n_ans = static_cast<int64_t>(asm_.answer_plus_eos.size());

                // Teacher: plain no-gradient forward over the textual prompt.
                Tensor<T> t_logits = lm_forward(lm, tokens_to_slots<T>(asm_.teacher_ids));
                Tensor<T> t_ans({n_ans, lm.cfg.vocab_size});
                for (int64_t r = 0; r < n_ans; ++r)
                    std::copy(t_logits.row_ptr(asm_.teacher_prompt_len - 1 + r),
                              t_logits.row_ptr(asm_.teacher_prompt_len - 1 + r) + lm.cfg.vocab_size,
                              t_ans.row_ptr(r));

                Tape<T> tape;
                auto lm_bind = bind_lm(tape, lm);
                auto w_bind = bind_projector(tape, W);
                auto e_leaf = tape.constant(
                    Tensor<T>({1, ds.d_emb}, cast_embedding<T>(ds.row(ex.context_doc_id), ds.d_emb)));
                auto vec = project_tape(tape, w_bind, e_leaf);
                auto s_logits = lm_forward_tape(tape, lm_bind, lm.cfg, asm_.student_ids,
                                                {{asm_.vec_row, vec}});
                auto s_ans = tape.slice_rows(s_logits, asm_.student_prompt_len - 1,
                                             asm_.student_prompt_len - 1 + n_ans);
                std::vector<bool> all_rows(static_cast<size_t>(n_ans), true);
                auto nll = tape.cross_entropy(s_ans, asm_.answer_plus_eos, all_rows);
                auto teacher_leaf = tape.constant(std::move(t_ans));
                auto kl = tape.kl_divergence(teacher_leaf, s_ans, all_rows,
                                             static_cast<T>(cfg.kl_temperature));
                const double nll_d = static_cast<double>(tape.value(nll).data[0]);
                const double kl_d = static_cast<double>(tape.value(kl).data[0]);
                const double total_d = cfg.nll_weight * nll_d + cfg.alpha * kl_d;
                batch_nll += nll_d;
                batch_kl += kl_d;
                batch_total += total_d;

                if (trainable) {
                    typename Tape<T>::Id loss;
                    if (cfg.nll_weight > 0.0 && cfg.alpha > 0.0)
                        loss = tape.add(tape.scale(nll, static_cast<T>(cfg.nll_weight)),
                                        tape.scale(kl, static_cast<T>(cfg.alpha)));
                    else if (cfg.nll_weight > 0.0)
                        loss = tape.scale(nll, static_cast<T>(cfg.nll_weight));
                    else if (cfg.alpha > 0.0)
                        loss = tape.scale(kl, static_cast<T>(cfg.alpha));
                    else
                        throw config_error("stage2: nll_weight and alpha are both zero");
                    tape.backward(loss);
                    if (step == 0 && bi == b0) {
                        rep.projector_grad_norm_first = detail::grad_norm(tape, w_bind.by_entry);
                        rep.frozen_grad_norm_max =
                            std::max(rep.frozen_grad_norm_max, detail::grad_norm(tape, lm_bind.by_entry));
                    }
                    gbuf.accumulate_from_tape(tape, w_bind.by_entry, T{1} / static_cast<T>(b1 - b0));
                }
            }
            ++step;
            if (trainable)
                opt.step(gbuf.pointers(), lr_at_step(step, total_steps, static_cast<T>(cfg.lr),
                                                     cfg.warmup_ratio));
            const double inv = 1.0 / static_cast<double>(b1 - b0);
            rep.loss_curve.push_back(batch_total * inv);
            rep.nll_curve.push_back(batch_nll * inv);
            rep.kl_curve.push_back(batch_kl * inv);
            if (step == 1) rep.initial_loss = batch_total * inv;
            if (cfg.verbose && (step % cfg.log_every == 0 || step == total_steps))
                std::fprintf(stderr, "stage2 step %lld/%lld total %.4f nll %.4f kl %.4f\n",
                             static_cast<long long>(step), static_cast<long long>(total_steps),
                             batch_total * inv, batch_nll * inv, batch_kl * inv);
        }
    }
    rep.steps = step;
    rep.final_loss_smoothed = smoothed_tail(rep.loss_curve, 100);
    rep.lm_checksum_after = lm.set.checksum();
    rep.emb_checksum_after = emb.set.checksum();
    rep.w_checksum_after = W.set.checksum();
    require(rep.lm_checksum_after == rep.lm_checksum_before, "stage2: frozen LM moved");
    require(rep.emb_checksum_after == rep.emb_checksum_before, "stage2: frozen embedder moved");
    return rep;
}

// ---- reconstruction scoring (stage-1 quality) ----

// Greedy document reconstruction through a fixed pool template; token
// accuracy is position-wise against the gold document.
template <typename T>
double reconstruction_accuracy(const LMParams<T>& lm, const ProjectorParams<T>& W,
                               const Datastore& ds, const Tokenizer& tk,
                               const std::vector<int64_t>& doc_ids, int template_idx = 0) {
    require(!doc_ids.empty(), "reconstruction: no docs");
    const auto& tpl = paraphrase_pool()[static_cast<size_t>(template_idx)];
    int64_t correct = 0, total = 0;
    for (int64_t id : doc_ids) {
        const auto& doc = ds.docs[static_cast<size_t>(id)];
        auto vec = project(W, cast_embedding<T>(ds.row(id), ds.d_emb));
        FusedInput<T> prompt;
        prompt.push_back(Slot<T>::tok(Tokenizer::kBos));
        for (const auto& p : tpl.pieces) {
            if (p.kind == PromptTemplate::Kind::Word)
                prompt.push_back(Slot<T>::tok(tk.id_of(p.word)));
            else if (p.kind == PromptTemplate::Kind::Context)
                prompt.push_back(Slot<T>::vector(vec));
            // [D] marks where generation begins
        }
        GenerationConfig gen;
        gen.max_new_tokens = static_cast<int>(doc.tokens.size()) + 5;
        auto out = generate(lm, prompt, gen);
        for (size_t i = 0; i < doc.tokens.size(); ++i) {
            total += 1;
            if (i < out.size() && out[i] == doc.tokens[i]) correct += 1;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

// Baseline for the same docs: emit the corpus-wide most frequent token at
// every position (ties to the lower id).
inline double unigram_copy_accuracy(const Datastore& ds, const std::vector<int64_t>& doc_ids,
                                    int vocab_size) {
    std::vector<int64_t> counts(static_cast<size_t>(vocab_size), 0);
    for (const auto& d : ds.docs)
        for (int t : d.tokens) ++counts[static_cast<size_t>(t)];
    int top = 0;
    for (int t = 1; t < vocab_size; ++t)
        if (counts[static_cast<size_t>(t)] > counts[static_cast<size_t>(top)]) top = t;
    int64_t correct = 0, total = 0;
    for (int64_t id : doc_ids) {
        for (int t : ds.docs[static_cast<size_t>(id)].tokens) {
            total += 1;
            if (t == top) correct += 1;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace xrag
