#pragma once

#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "xrag/corpus.hpp"
#include "xrag/embedder.hpp"
#include "xrag/lm.hpp"
#include "xrag/training.hpp"

namespace xrag {

using json = nlohmann::json;

// Full pipeline configuration. Parsing is strict: unknown keys anywhere in
// the document are rejected so that typos cannot silently fall back to
// defaults.
struct RunConfig {
    uint64_t seed = 1234;
    WorldSpec world;
    LMConfig lm;
    EmbedderConfig embedder;
    StreamOptions streams;
    PretrainHyper lm_pretrain;
    ContrastiveHyper embedder_train;
    int contrastive_pairs_per_entity = 2;
    Stage1Config stage1;
    Stage2Config stage2;
    int stage1_pairs = 4000;
    int stage2_examples = 3000;
    BlendWeights blend;
    int eval_items = 500;
    int eval_max_new_tokens = 8;

    void validate() const {
        world.validate();
        // vocab_size is derived from the tokenizer later; validate the rest.
        LMConfig lc = lm;
        lc.vocab_size = 1;
        lc.validate();
        blend.validate();
        require(embedder.d_emb >= 1, "config: embedder.d_emb must be >= 1");
        require(stage1_pairs >= 1, "config: stage1_pairs must be >= 1");
        require(stage2_examples >= 1, "config: stage2_examples must be >= 1");
        require(eval_items >= 1, "config: eval_items must be >= 1");
        require(eval_max_new_tokens >= 1, "config: eval_max_new_tokens must be >= 1");
    }
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& known,
                           const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw config_error("config: unknown key \"" + it.key() + "\" in " + where);
}

template <typename T>
void take(const json& j, const char* key, T& dst) {
    if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_run_config(const json& j) {
    RunConfig c;
    detail::reject_unknown(j, {"seed", "world", "lm", "embedder", "streams", "lm_pretrain",
                               "embedder_train", "stage1", "stage2", "blend", "eval"},
                           "top level");
    detail::take(j, "seed", c.seed);
    if (j.contains("world")) {
        const auto& w = j.at("world");
        detail::reject_unknown(w,
                               {"n_entities", "values_per_attribute", "frac_lm", "frac_instruction",
                                "frac_eval", "target_doc_len"},
                               "world");
        detail::take(w, "n_entities", c.world.n_entities);
        detail::take(w, "values_per_attribute", c.world.values_per_attribute);
        detail::take(w, "frac_lm", c.world.frac_lm);
        detail::take(w, "frac_instruction", c.world.frac_instruction);
        detail::take(w, "frac_eval", c.world.frac_eval);
        detail::take(w, "target_doc_len", c.world.target_doc_len);
    }
    if (j.contains("lm")) {
        const auto& l = j.at("lm");
        detail::reject_unknown(l, {"n_layers", "d_model", "n_heads", "d_ff", "max_seq_len"}, "lm");
        detail::take(l, "n_layers", c.lm.n_layers);
        detail::take(l, "d_model", c.lm.d_model);
        detail::take(l, "n_heads", c.lm.n_heads);
        detail::take(l, "d_ff", c.lm.d_ff);
        detail::take(l, "max_seq_len", c.lm.max_seq_len);
    }
    if (j.contains("embedder")) {
        const auto& e = j.at("embedder");
        detail::reject_unknown(e, {"n_layers", "d_emb", "n_heads", "d_ff"}, "embedder");
        detail::take(e, "n_layers", c.embedder.n_layers);
        detail::take(e, "d_emb", c.embedder.d_emb);
        detail::take(e, "n_heads", c.embedder.n_heads);
        detail::take(e, "d_ff", c.embedder.d_ff);
    }
    if (j.contains("streams")) {
        const auto& s = j.at("streams");
        detail::reject_unknown(
            s, {"rag_qa_per_entity", "list_qa_per_entity", "noctx_qa_per_entity", "val_fraction"},
            "streams");
        detail::take(s, "rag_qa_per_entity", c.streams.rag_qa_per_entity);
        detail::take(s, "list_qa_per_entity", c.streams.list_qa_per_entity);
        detail::take(s, "noctx_qa_per_entity", c.streams.noctx_qa_per_entity);
        detail::take(s, "val_fraction", c.streams.val_fraction);
    }
    if (j.contains("lm_pretrain")) {
        const auto& p = j.at("lm_pretrain");
        detail::reject_unknown(
            p, {"lr", "weight_decay", "warmup_ratio", "batch_size", "epochs", "log_every"},
            "lm_pretrain");
        detail::take(p, "lr", c.lm_pretrain.lr);
        detail::take(p, "weight_decay", c.lm_pretrain.weight_decay);
        detail::take(p, "warmup_ratio", c.lm_pretrain.warmup_ratio);
        detail::take(p, "batch_size", c.lm_pretrain.batch_size);
        detail::take(p, "epochs", c.lm_pretrain.epochs);
        detail::take(p, "log_every", c.lm_pretrain.log_every);
    }
    if (j.contains("embedder_train")) {
        const auto& p = j.at("embedder_train");
        detail::reject_unknown(
            p, {"lr", "temperature", "warmup_ratio", "batch_size", "epochs", "pairs_per_entity"},
            "embedder_train");
        detail::take(p, "lr", c.embedder_train.lr);
        detail::take(p, "temperature", c.embedder_train.temperature);
        detail::take(p, "warmup_ratio", c.embedder_train.warmup_ratio);
        detail::take(p, "batch_size", c.embedder_train.batch_size);
        detail::take(p, "epochs", c.embedder_train.epochs);
        detail::take(p, "pairs_per_entity", c.contrastive_pairs_per_entity);
    }
    if (j.contains("stage1")) {
        const auto& p = j.at("stage1");
        detail::reject_unknown(
            p, {"lr", "warmup_ratio", "epochs", "batch_size", "n_pairs", "log_every"}, "stage1");
        detail::take(p, "lr", c.stage1.lr);
        detail::take(p, "warmup_ratio", c.stage1.warmup_ratio);
        detail::take(p, "epochs", c.stage1.epochs);
        detail::take(p, "batch_size", c.stage1.batch_size);
        detail::take(p, "n_pairs", c.stage1_pairs);
        detail::take(p, "log_every", c.stage1.log_every);
    }
    if (j.contains("stage2")) {
        const auto& p = j.at("stage2");
        detail::reject_unknown(p,
                               {"lr", "warmup_ratio", "alpha", "kl_temperature", "epochs",
                                "batch_size", "n_examples", "log_every"},
                               "stage2");
        detail::take(p, "lr", c.stage2.lr);
        detail::take(p, "warmup_ratio", c.stage2.warmup_ratio);
        detail::take(p, "alpha", c.stage2.alpha);
        detail::take(p, "kl_temperature", c.stage2.kl_temperature);
        detail::take(p, "epochs", c.stage2.epochs);
        detail::take(p, "batch_size", c.stage2.batch_size);
        detail::take(p, "n_examples", c.stage2_examples);
        detail::take(p, "log_every", c.stage2.log_every);
    }
    if (j.contains("blend")) {
        const auto& b = j.at("blend");
        detail::reject_unknown(b, {"rc", "qa", "summ"}, "blend");
        detail::take(b, "rc", c.blend.rc);
        detail::take(b, "qa", c.blend.qa);
        detail::take(b, "summ", c.blend.summ);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        detail::reject_unknown(e, {"n_items", "max_new_tokens"}, "eval");
        detail::take(e, "n_items", c.eval_items);
        detail::take(e, "max_new_tokens", c.eval_max_new_tokens);
    }
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw prereq_error("config: cannot open " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw config_error("config: invalid JSON in " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

}  // namespace xrag
