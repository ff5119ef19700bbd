// Command-line front end: one subcommand per pipeline stage, JSON config in,
// artifacts out. Exit codes: 0 ok, 2 config, 3 missing prerequisite,
// 4 numeric failure, 1 anything else.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xrag/pipeline.hpp"

namespace {

using namespace xrag;

std::vector<Mode> parse_modes(const std::string& csv) {
    std::vector<Mode> modes;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) modes.push_back(mode_from_name(cur));
        cur.clear();
    };
    for (char c : csv) {
        if (c == ',')
            flush();
        else
            cur += c;
    }
    flush();
    require(!modes.empty(), "no modes given");
    return modes;
}

template <typename T>
void dispatch(const std::string& cmd, const RunConfig& cfg, const ArtifactPaths& paths,
              const std::string& modes_csv, const std::string& switch_name) {
    if (cmd == "gen-data") {
        auto s = run_gen_data(cfg, paths);
        std::fprintf(stderr, "gen-data: %d entities, vocab %d, corpus %s\n", s.n_entities,
                     s.vocab_size, s.corpus_hash.c_str());
    } else if (cmd == "train-lm") {
        run_train_lm<T>(cfg, paths);
    } else if (cmd == "train-embedder") {
        run_train_embedder<T>(cfg, paths);
    } else if (cmd == "build-index") {
        run_build_index<T>(cfg, paths);
    } else if (cmd == "pretrain") {
        run_pretrain<T>(cfg, paths);
    } else if (cmd == "finetune") {
        run_finetune<T>(cfg, paths, paths.final_dir(), paths.stage2_report());
    } else if (cmd == "eval") {
        auto rep = run_eval<T>(cfg, paths, parse_modes(modes_csv), paths.final_dir(),
                               paths.comparison_json(), true);
        std::fputs(comparison_table(rep).c_str(), stdout);
    } else if (cmd == "profile") {
        auto j = run_profile(cfg, paths);
        std::fputs((j.dump(2) + "\n").c_str(), stdout);
    } else if (cmd == "ablate") {
        auto row = run_ablate<T>(cfg, paths, ablation_from_name(switch_name));
        std::fputs((row.dump(2) + "\n").c_str(), stdout);
    } else if (cmd == "all") {
        run_gen_data(cfg, paths);
        run_train_lm<T>(cfg, paths);
        run_train_embedder<T>(cfg, paths);
        run_build_index<T>(cfg, paths);
        run_pretrain<T>(cfg, paths);
        run_finetune<T>(cfg, paths, paths.final_dir(), paths.stage2_report());
        auto rep = run_eval<T>(cfg, paths, parse_modes(modes_csv), paths.final_dir(),
                               paths.comparison_json(), true);
        std::fputs(comparison_table(rep).c_str(), stdout);
    } else {
        throw config_error("unknown command: " + cmd);
    }
}

int error_exit(const char* kind, int code, const std::string& msg) {
    nlohmann::json j{{"error", kind}, {"message", msg}};
    std::fprintf(stderr, "%s\n", j.dump().c_str());
    std::fprintf(stderr, "error (%s): %s\n", kind, msg.c_str());
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"retrieval context compression lab"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir = "out";
    std::string modes_csv = "no_retrieval,rag,xrag,tfidf_1token";
    std::string switch_name;
    uint64_t seed_override = 0;
    bool have_seed = false, f64 = false;

    app.add_option("--config", config_path, "run config JSON")->required();
    app.add_option("--out", out_dir, "artifact directory");
    app.add_option("--seed", seed_override, "override config seed")->each([&](const std::string&) {
        have_seed = true;
    });
    app.add_flag("--f64", f64, "64-bit verification precision");
    app.add_option("--modes", modes_csv, "comma-separated eval modes");
    app.add_option("--switch", switch_name, "ablation switch");

    for (const char* name : {"gen-data", "train-lm", "train-embedder", "build-index", "pretrain",
                             "finetune", "eval", "profile", "ablate", "all"})
        app.add_subcommand(name);

    CLI11_PARSE(app, argc, argv);
    const std::string cmd = app.get_subcommands().front()->get_name();

    try {
        RunConfig cfg = xrag::load_run_config(config_path);
        if (have_seed) cfg.seed = seed_override;
        if (cmd == "ablate" && switch_name.empty())
            throw xrag::config_error("ablate requires --switch");
        xrag::ArtifactPaths paths{out_dir};
        if (f64)
            dispatch<double>(cmd, cfg, paths, modes_csv, switch_name);
        else
            dispatch<float>(cmd, cfg, paths, modes_csv, switch_name);
    } catch (const xrag::config_error& e) {
        return error_exit("config_error", 2, e.what());
    } catch (const xrag::prereq_error& e) {
        return error_exit("prereq_error", 3, e.what());
    } catch (const xrag::numeric_error& e) {
        return error_exit("numeric_error", 4, e.what());
    } catch (const std::exception& e) {
        return error_exit("error", 1, e.what());
    }
    return 0;
}
