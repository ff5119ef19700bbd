#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xrag/common.hpp"
#include "xrag/lm.hpp"

namespace xrag {

// Open-domain QA answer normalization: lowercase, strip punctuation chars,
// drop the articles a/an/the as whole words, collapse whitespace.
inline std::string normalize_answer(const std::string& text) {
    std::string lowered;
    lowered.reserve(text.size());
    for (char c : text) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (std::ispunct(u)) continue;
        lowered.push_back(static_cast<char>(std::tolower(u)));
    }
    std::string out;
    for (const auto& w : Tokenizer::split_words(lowered)) {
        if (w == "a" || w == "an" || w == "the") continue;
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

inline int exact_match(const std::string& prediction, const std::vector<std::string>& golds) {
    require(!golds.empty(), "exact_match: empty gold set");
    const std::string p = normalize_answer(prediction);
    for (const auto& g : golds)
        if (p == normalize_answer(g)) return 1;
    return 0;
}

// Max over golds of multiset token-overlap F1 on normalized text.
inline double token_f1(const std::string& prediction, const std::vector<std::string>& golds) {
    require(!golds.empty(), "token_f1: empty gold set");
    const auto ptoks = Tokenizer::split_words(normalize_answer(prediction));
    double best = 0.0;
    for (const auto& g : golds) {
        const auto gtoks = Tokenizer::split_words(normalize_answer(g));
        if (ptoks.empty() || gtoks.empty()) {
            best = std::max(best, (ptoks.empty() && gtoks.empty()) ? 1.0 : 0.0);
            continue;
        }
        std::map<std::string, int> counts;
        for (const auto& t : gtoks) ++counts[t];
        int overlap = 0;
        for (const auto& t : ptoks) {
            auto it = counts.find(t);
            if (it != counts.end() && it->second > 0) {
                --it->second;
                ++overlap;
            }
        }
        if (overlap == 0) continue;
        const double precision = static_cast<double>(overlap) / static_cast<double>(ptoks.size());
        const double recall = static_cast<double>(overlap) / static_cast<double>(gtoks.size());
        best = std::max(best, 2.0 * precision * recall / (precision + recall));
    }
    return best;
}

struct EvalRecord {
    int item_id = 0;
    std::string mode;
    std::string prediction;
    std::vector<std::string> golds;
    int em = 0;
    double f1 = 0.0;
    int64_t prompt_slot_count = 0;
    int64_t generated_token_count = 0;
};

struct ResilienceBoost {
    std::optional<double> resilience;  // unset when no base-correct items
    std::optional<double> boost;       // unset when no base-incorrect items
    int64_t n_base_correct = 0;
    int64_t n_base_incorrect = 0;
    int64_t n_both_correct = 0;
    int64_t n_fixed = 0;
};

// base = no-retrieval records, aug = same items under an augmentation mode.
// Zero denominators yield undefined rates rather than 0.
inline ResilienceBoost resilience_boost(const std::vector<EvalRecord>& base,
                                        const std::vector<EvalRecord>& aug) {
    require(base.size() == aug.size(), "resilience_boost: record count mismatch");
    ResilienceBoost rb;
    for (size_t i = 0; i < base.size(); ++i) {
        require(base[i].item_id == aug[i].item_id, "resilience_boost: item id mismatch");
        if (base[i].em == 1) {
            ++rb.n_base_correct;
            rb.n_both_correct += aug[i].em;
        } else {
            ++rb.n_base_incorrect;
            rb.n_fixed += aug[i].em;
        }
    }
    if (rb.n_base_correct > 0)
        rb.resilience = static_cast<double>(rb.n_both_correct) / static_cast<double>(rb.n_base_correct);
    if (rb.n_base_incorrect > 0)
        rb.boost = static_cast<double>(rb.n_fixed) / static_cast<double>(rb.n_base_incorrect);
    return rb;
}

// ---- analytic FLOPs model ----

// Matmul-dominated accounting, one multiply-add = 2 FLOPs. Per layer at
// sequence length n: QKV 6nd^2, scores 2n^2 d, attention-times-values 2n^2 d,
// output projection 2nd^2, feed-forward 4ndf; plus the LM head 2ndV. A decode
// step at context length c replaces the n^2 terms with n*c (n=1). Layer
// norms, activations, and softmax are excluded.
struct FlopsModel {
    int n_layers = 0;
    int64_t d_model = 0;
    int64_t d_ff = 0;
    int64_t vocab = 0;

    static FlopsModel from(const LMConfig& cfg) {
        return {cfg.n_layers, cfg.d_model, cfg.d_ff, cfg.vocab_size};
    }

    double prefill(int64_t n) const {
        require(n >= 1, "flops: n >= 1");
        const double nd = static_cast<double>(n), d = static_cast<double>(d_model),
                     f = static_cast<double>(d_ff), V = static_cast<double>(vocab);
        const double per_layer = 6.0 * nd * d * d + 2.0 * nd * nd * d + 2.0 * nd * nd * d +
                                 2.0 * nd * d * d + 4.0 * nd * d * f;
        return static_cast<double>(n_layers) * per_layer + 2.0 * nd * d * V;
    }

    double decode_step(int64_t context) const {
        require(context >= 1, "flops: context >= 1");
        const double c = static_cast<double>(context), d = static_cast<double>(d_model),
                     f = static_cast<double>(d_ff), V = static_cast<double>(vocab);
        const double per_layer = 6.0 * d * d + 2.0 * c * d + 2.0 * c * d + 2.0 * d * d + 4.0 * d * f;
        return static_cast<double>(n_layers) * per_layer + 2.0 * d * V;
    }
};

struct FlopsResult {
    double total = 0.0;
    double per_generated_token = 0.0;
};

// Prefill at prompt_len, then one decode step per generated token with the
// context grown by each appended token.
inline FlopsResult flops_forward(const FlopsModel& m, int64_t prompt_len, int64_t gen_len) {
    require(prompt_len >= 1 && gen_len >= 1, "flops_forward: lengths must be >= 1");
    double total = m.prefill(prompt_len);
    for (int64_t i = 1; i <= gen_len; ++i) total += m.decode_step(prompt_len + i);
    return {total, total / static_cast<double>(gen_len)};
}

}  // namespace xrag
