#include <catch2/catch_amalgamated.hpp>

#include "xrag/eval.hpp"

using namespace xrag;

namespace {

// Step-by-step simulated counter: walks the forward pass shape by shape and
// adds 2*m*k*n per matmul, nothing shared with the closed form in eval.hpp.
double sim_prefill(const FlopsModel& m, int64_t n) {
    double fl = 0;
    const double N = static_cast<double>(n), d = static_cast<double>(m.d_model),
                 f = static_cast<double>(m.d_ff), V = static_cast<double>(m.vocab);
    for (int l = 0; l < m.n_layers; ++l) {
        fl += 2.0 * N * d * d * 3.0;  // q, k, v projections
        fl += 2.0 * N * N * d;        // scores: (n x d) x (d x n) across heads
        fl += 2.0 * N * N * d;        // scores x values
        fl += 2.0 * N * d * d;        // output projection
        fl += 2.0 * N * d * f;        // ffn in
        fl += 2.0 * N * f * d;        // ffn out
    }
    fl += 2.0 * N * d * V;  // lm head
    return fl;
}

double sim_decode_step(const FlopsModel& m, int64_t context) {
    // one new row attending over `context` keys
    double fl = 0;
    const double C = static_cast<double>(context), d = static_cast<double>(m.d_model),
                 f = static_cast<double>(m.d_ff), V = static_cast<double>(m.vocab);
    for (int l = 0; l < m.n_layers; ++l) {
        fl += 2.0 * d * d * 3.0;
        fl += 2.0 * C * d;
        fl += 2.0 * C * d;
        fl += 2.0 * d * d;
        fl += 2.0 * d * f;
        fl += 2.0 * f * d;
    }
    fl += 2.0 * d * V;
    return fl;
}

double sim_forward_total(const FlopsModel& m, int64_t prompt, int64_t gen) {
    double total = sim_prefill(m, prompt);
    for (int64_t i = 1; i <= gen; ++i) total += sim_decode_step(m, prompt + i);
    return total;
}

}  // namespace

TEST_CASE("minimal config hand count: 18 FLOPs", "[flops]") {
    // 1 layer, d=f=V=1, n=1: qkv 6 + scores 2 + attn-v 2 + out 2 + ffn 4 + head 2
    FlopsModel m{1, 1, 1, 1};
    CHECK(m.prefill(1) == Catch::Approx(18.0));
}

TEST_CASE("analytic counter equals the simulated counter on random configs", "[flops]") {
    auto rng = make_rng(23, "flops");
    std::uniform_int_distribution<int> dl(1, 6);
    std::uniform_int_distribution<int64_t> dd(1, 96), df(1, 256), dv(1, 500);
    std::uniform_int_distribution<int64_t> dp(1, 60), dg(1, 20);
    for (int i = 0; i < 20; ++i) {
        FlopsModel m{dl(rng), dd(rng), df(rng), dv(rng)};
        const int64_t prompt = dp(rng), gen = dg(rng);
        INFO("config " << i << ": L=" << m.n_layers << " d=" << m.d_model << " f=" << m.d_ff
                       << " V=" << m.vocab << " prompt=" << prompt << " gen=" << gen);
        CHECK(m.prefill(prompt) == Catch::Approx(sim_prefill(m, prompt)).epsilon(1e-12));
        CHECK(m.decode_step(prompt + 1) ==
              Catch::Approx(sim_decode_step(m, prompt + 1)).epsilon(1e-12));
        const FlopsResult r = flops_forward(m, prompt, gen);
        CHECK(r.total == Catch::Approx(sim_forward_total(m, prompt, gen)).epsilon(1e-12));
        CHECK(r.per_generated_token == Catch::Approx(r.total / static_cast<double>(gen)).epsilon(1e-12));
    }
}

TEST_CASE("flops are monotone in every dimension", "[flops]") {
    const FlopsModel base{2, 32, 64, 100};
    const double t0 = flops_forward(base, 20, 5).total;
    CHECK(flops_forward(FlopsModel{3, 32, 64, 100}, 20, 5).total > t0);
    CHECK(flops_forward(FlopsModel{2, 48, 64, 100}, 20, 5).total > t0);
    CHECK(flops_forward(FlopsModel{2, 32, 96, 100}, 20, 5).total > t0);
    CHECK(flops_forward(FlopsModel{2, 32, 64, 150}, 20, 5).total > t0);
    CHECK(flops_forward(base, 30, 5).total > t0);
    CHECK(flops_forward(base, 20, 6).total > t0);
}

TEST_CASE("doubling gen_len more than doubles total cost", "[flops]") {
    const FlopsModel m{2, 32, 64, 100};
    const double once = flops_forward(m, 40, 8).total;
    const double twice = flops_forward(m, 40, 16).total;
    CHECK(twice > 2.0 * once - m.prefill(40));  // decode sum grows superlinearly
    CHECK(twice > once);
}

TEST_CASE("longer prompts cost more per generated token", "[flops]") {
    // the ratio behind the headline comparison: shrinking the prompt shrinks
    // per-token cost even at equal generation length
    const FlopsModel m{4, 128, 512, 1000};
    const FlopsResult long_prompt = flops_forward(m, 210, 16);
    const FlopsResult short_prompt = flops_forward(m, 36, 16);
    CHECK(long_prompt.per_generated_token > short_prompt.per_generated_token);
    CHECK(long_prompt.per_generated_token / short_prompt.per_generated_token > 2.0);
}

TEST_CASE("invalid lengths are rejected", "[flops]") {
    FlopsModel m{1, 8, 16, 50};
    CHECK_THROWS(m.prefill(0));
    CHECK_THROWS(flops_forward(m, 0, 4));
    CHECK_THROWS(flops_forward(m, 4, 0));
}
