#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "xrag/checkpoint.hpp"
#include "xrag/config.hpp"
#include "xrag/report.hpp"
#include "xrag/training.hpp"

namespace xrag {

namespace fs = std::filesystem;

// ---- artifact layout ----

// Append-only directory: every stage writes its own files and never touches
// an earlier stage's outputs.
struct ArtifactPaths {
    fs::path root;

    explicit ArtifactPaths(fs::path r) : root(std::move(r)) {}

    fs::path world_json() const { return root / "world.json"; }
    fs::path tokenizer_json() const { return root / "tokenizer.json"; }
    fs::path gen_report() const { return root / "gen_report.json"; }
    fs::path lm_dir() const { return root / "lm"; }
    fs::path lm_report() const { return root / "lm_report.json"; }
    fs::path embedder_dir() const { return root / "embedder"; }
    fs::path embedder_report() const { return root / "embedder_report.json"; }
    fs::path datastore_file() const { return root / "datastore.bin"; }
    fs::path stage1_dir() const { return root / "projector_stage1"; }
    fs::path stage1_report() const { return root / "stage1_report.json"; }
    fs::path stage1_curve_svg() const { return root / "stage1_loss.svg"; }
    fs::path final_dir() const { return root / "projector_final"; }
    fs::path stage2_report() const { return root / "stage2_report.json"; }
    fs::path stage2_curve_svg() const { return root / "stage2_loss.svg"; }
    fs::path comparison_json() const { return root / "comparison.json"; }
    fs::path comparison_table() const { return root / "comparison.txt"; }
    fs::path records_csv_file() const { return root / "records.csv"; }
    fs::path bars_svg() const { return root / "resilience_boost.svg"; }
    fs::path profile_json() const { return root / "profile.json"; }
    fs::path ablation_json() const { return root / "ablation.json"; }
    fs::path ablation_dir(const std::string& sw) const { return root / ("ablation_" + sw); }
    fs::path wall_sidecar(const std::string& step) const { return root / (step + ".wall.json"); }
};

namespace detail {

struct WallTimer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

inline void write_text(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw io_error("cannot write " + p.string());
    f << s;
}

inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

inline json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw prereq_error("missing artifact: " + p.string());
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw io_error("corrupt JSON at " + p.string() + ": " + e.what());
    }
    return j;
}

// Wall time lives in a sidecar so the main artifacts stay byte-identical
// across reruns; training reports carry the same number for completeness.
inline void write_wall(const ArtifactPaths& paths, const std::string& step, double seconds) {
    write_json(paths.wall_sidecar(step), json{{"step", step}, {"wall_seconds", seconds}});
}

}  // namespace detail

// ---- stage: data generation ----

struct GenSummary {
    std::string corpus_hash;
    int n_entities = 0;
    int vocab_size = 0;
    double mean_doc_length = 0.0;
};

inline GenSummary run_gen_data(const RunConfig& cfg, const ArtifactPaths& paths) {
    detail::WallTimer wt;
    WorldSpec spec = cfg.world;
    spec.seed = derive_seed(cfg.seed, "world");
    FactWorld world = generate_world(spec);

    Tokenizer tk = Tokenizer::build(tokenizer_training_texts(world));
    auto docs = make_documents(world, tk);

    double mean_len = 0.0;
    for (const auto& d : docs) mean_len += static_cast<double>(d.token_length());
    mean_len /= static_cast<double>(docs.size());
    const double lo = 0.8 * cfg.world.target_doc_len, hi = 1.2 * cfg.world.target_doc_len;
    require(mean_len >= lo && mean_len <= hi, "gen_data: mean doc length outside +/-20% of target");

    GenSummary s;
    s.corpus_hash = corpus_hash_of(docs);
    s.n_entities = spec.n_entities;
    s.vocab_size = tk.vocab_size();
    s.mean_doc_length = mean_len;

    fs::create_directories(paths.root);
    detail::write_json(paths.world_json(), world_to_json(world));
    tk.save(paths.tokenizer_json().string());
    int n_lm = static_cast<int>(world.entities_in(Split::lm_pretrain).size());
    int n_ins = static_cast<int>(world.entities_in(Split::instruction).size());
    int n_ev = static_cast<int>(world.entities_in(Split::eval_heldout).size());
    detail::write_json(paths.gen_report(),
                       json{{"schema_version", kReportSchemaVersion},
                            {"report_type", "gen_data"},
                            {"n_entities", s.n_entities},
                            {"splits", {{"lm_pretrain", n_lm}, {"instruction", n_ins}, {"eval_heldout", n_ev}}},
                            {"vocab_size", s.vocab_size},
                            {"corpus_hash", s.corpus_hash},
                            {"mean_doc_length", s.mean_doc_length}});
    detail::write_wall(paths, "gen_data", wt.seconds());
    return s;
}

inline FactWorld load_world(const ArtifactPaths& paths) {
    return world_from_json(detail::read_json(paths.world_json()));
}

inline Tokenizer load_tokenizer(const ArtifactPaths& paths) {
    return Tokenizer::load(paths.tokenizer_json());
}

// ---- stage: base LM training ----

template <typename T>
void run_train_lm(const RunConfig& cfg, const ArtifactPaths& paths) {
    detail::WallTimer wt;
    FactWorld world = load_world(paths);
    Tokenizer tk = load_tokenizer(paths);
    StreamSet streams = build_lm_pretrain_streams(world, tk, cfg.streams, derive_seed(cfg.seed, "streams"));

    LMConfig lc = cfg.lm;
    lc.vocab_size = tk.vocab_size();
    LMParams<T> lm = LMParams<T>::init(lc, derive_seed(cfg.seed, "lm-init"));
    PretrainHyper hy = cfg.lm_pretrain;
    hy.seed = derive_seed(cfg.seed, "lm-pretrain");
    auto rep = pretrain_base_lm(lm, streams.train, streams.val, hy);

    save_checkpoint(paths.lm_dir(), lm.set, json{{"n_layers", lc.n_layers},
                                                 {"d_model", lc.d_model},
                                                 {"n_heads", lc.n_heads},
                                                 {"d_ff", lc.d_ff},
                                                 {"vocab_size", lc.vocab_size},
                                                 {"max_seq_len", lc.max_seq_len}});
    detail::write_json(paths.lm_report(), json{{"schema_version", kReportSchemaVersion},
                                               {"report_type", "lm_pretrain"},
                                               {"initial_val_ce", rep.initial_val_ce},
                                               {"final_val_ce", rep.final_val_ce},
                                               {"steps", rep.steps},
                                               {"n_train_streams", streams.train.size()},
                                               {"n_val_streams", streams.val.size()}});
    detail::write_wall(paths, "train_lm", wt.seconds());
}

template <typename T>
LMParams<T> load_lm(const ArtifactPaths& paths, const RunConfig& cfg, const Tokenizer& tk) {
    if (!checkpoint_exists(paths.lm_dir()))
        throw prereq_error("missing artifact: LM checkpoint at " + paths.lm_dir().string());
    LMConfig lc = cfg.lm;
    lc.vocab_size = tk.vocab_size();
    LMParams<T> lm = LMParams<T>::init(lc, 0);
    lm.freeze();  // checkpoints are written post-training with frozen flags set
    json extra = load_checkpoint(paths.lm_dir(), lm.set);
    require(extra.at("vocab_size").get<int>() == lc.vocab_size,
            "LM checkpoint vocab size mismatch with tokenizer");
    return lm;
}

// ---- stage: embedder training ----

template <typename T>
void run_train_embedder(const RunConfig& cfg, const ArtifactPaths& paths) {
    detail::WallTimer wt;
    FactWorld world = load_world(paths);
    Tokenizer tk = load_tokenizer(paths);

    EmbedderConfig ec = cfg.embedder;
    ec.vocab_size = tk.vocab_size();
    EmbedderParams<T> emb = EmbedderParams<T>::init(ec, derive_seed(cfg.seed, "emb-init"));
    auto pairs = build_contrastive_pairs(world, tk, cfg.contrastive_pairs_per_entity,
                                         derive_seed(cfg.seed, "contrastive-pairs"));
    ContrastiveHyper hy = cfg.embedder_train;
    hy.seed = derive_seed(cfg.seed, "emb-train");
    auto rep = contrastive_pretrain(emb, pairs, hy);

    save_checkpoint(paths.embedder_dir(), emb.set,
                    json{{"n_layers", ec.n_layers},
                         {"d_emb", ec.d_emb},
                         {"n_heads", ec.n_heads},
                         {"d_ff", ec.d_ff},
                         {"vocab_size", ec.vocab_size},
                         {"provenance", emb.provenance}});
    detail::write_json(paths.embedder_report(), json{{"schema_version", kReportSchemaVersion},
                                                     {"report_type", "embedder_train"},
                                                     {"initial_loss", rep.initial_loss},
                                                     {"final_loss", rep.final_loss},
                                                     {"steps", rep.steps},
                                                     {"n_pairs", pairs.size()}});
    detail::write_wall(paths, "train_embedder", wt.seconds());
}

template <typename T>
EmbedderParams<T> load_embedder(const ArtifactPaths& paths, const RunConfig& cfg, const Tokenizer& tk) {
    if (!checkpoint_exists(paths.embedder_dir()))
        throw prereq_error("missing artifact: embedder checkpoint at " + paths.embedder_dir().string());
    EmbedderConfig ec = cfg.embedder;
    ec.vocab_size = tk.vocab_size();
    EmbedderParams<T> emb = EmbedderParams<T>::init(ec, 0);
    emb.freeze("random-frozen");  // checkpoints carry frozen flags; tag refined below
    json extra = load_checkpoint(paths.embedder_dir(), emb.set);
    require(extra.at("vocab_size").get<int>() == ec.vocab_size,
            "embedder checkpoint vocab size mismatch with tokenizer");
    emb.provenance = extra.at("provenance").get<std::string>();
    return emb;
}

// ---- stage: datastore build ----

template <typename T>
void run_build_index(const RunConfig& cfg, const ArtifactPaths& paths) {
    detail::WallTimer wt;
    FactWorld world = load_world(paths);
    Tokenizer tk = load_tokenizer(paths);
    EmbedderParams<T> emb = load_embedder<T>(paths, cfg, tk);
    auto docs = make_documents(world, tk);
    Datastore ds = build_datastore(docs, emb);
    save_datastore(ds, paths.datastore_file().string());
    detail::write_wall(paths, "build_index", wt.seconds());
}

inline Datastore load_index(const ArtifactPaths& paths) {
    if (!fs::exists(paths.datastore_file()))
        throw prereq_error("missing artifact: datastore at " + paths.datastore_file().string());
    return load_datastore(paths.datastore_file().string());
}

// ---- stage: projector training ----

template <typename T>
StageReport run_pretrain(const RunConfig& cfg, const ArtifactPaths& paths) {
    detail::WallTimer wt;
    FactWorld world = load_world(paths);
    Tokenizer tk = load_tokenizer(paths);
    LMParams<T> lm = load_lm<T>(paths, cfg, tk);
    EmbedderParams<T> emb = load_embedder<T>(paths, cfg, tk);
    Datastore ds = load_index(paths);

    ProjectorParams<T> W = ProjectorParams<T>::init(ds.d_emb, cfg.lm.d_model,
                                                    derive_seed(cfg.seed, "proj-init"));
    auto pairs = build_pretrain_pairs(world, cfg.stage1_pairs, derive_seed(cfg.seed, "stage1-pairs"));
    Stage1Config sc = cfg.stage1;
    sc.seed = derive_seed(cfg.seed, "stage1");
    StageReport rep = run_stage1(lm, emb, W, ds, tk, pairs, sc);

    const double wall = wt.seconds();
    save_checkpoint(paths.stage1_dir(), W.set,
                    json{{"d_emb", W.d_emb}, {"d_model", W.d_model}, {"stage", "paraphrase_pretrain"}});
    json rj = to_json(rep, "paraphrase_pretrain", wall);
    validate_training_json(rj);
    detail::write_json(paths.stage1_report(), rj);
    detail::write_text(paths.stage1_curve_svg(),
                       loss_curve_svg("stage 1 paraphrase loss", {{"loss", rep.loss_curve}}));
    detail::write_wall(paths, "pretrain", wall);
    return rep;
}

template <typename T>
ProjectorParams<T> load_projector(const ArtifactPaths& paths, const fs::path& dir, const RunConfig& cfg,
                                  const Datastore& ds) {
    if (!checkpoint_exists(dir))
        throw prereq_error("missing artifact: projector checkpoint at " + dir.string());
    ProjectorParams<T> W = ProjectorParams<T>::init(ds.d_emb, cfg.lm.d_model, 0);
    load_checkpoint(dir, W.set);
    (void)paths;
    return W;
}

enum class AblationSwitch { none, no_pretrain, no_finetune, no_nll, no_selfkd, rc_only, qa_only, summ_only };

inline std::string ablation_name(AblationSwitch s) {
    switch (s) {
        case AblationSwitch::none: return "none";
        case AblationSwitch::no_pretrain: return "no_pretrain";
        case AblationSwitch::no_finetune: return "no_finetune";
        case AblationSwitch::no_nll: return "no_nll";
        case AblationSwitch::no_selfkd: return "no_selfkd";
        case AblationSwitch::rc_only: return "rc_only";
        case AblationSwitch::qa_only: return "qa_only";
        case AblationSwitch::summ_only: return "summ_only";
    }
    return "?";
}

inline AblationSwitch ablation_from_name(const std::string& s) {
    for (AblationSwitch a :
         {AblationSwitch::none, AblationSwitch::no_pretrain, AblationSwitch::no_finetune,
          AblationSwitch::no_nll, AblationSwitch::no_selfkd, AblationSwitch::rc_only,
          AblationSwitch::qa_only, AblationSwitch::summ_only})
        if (ablation_name(a) == s) return a;
    throw config_error("unknown ablation switch: " + s);
}

// Stage 2. `out_dir` receives the tuned projector; ablation switches adjust
// the starting point, the blend, or the loss weights.
template <typename T>
StageReport run_finetune(const RunConfig& cfg, const ArtifactPaths& paths, const fs::path& out_dir,
                         const fs::path& report_path, AblationSwitch sw = AblationSwitch::none) {
    require(sw != AblationSwitch::no_finetune, "run_finetune: no_finetune skips this stage");
    detail::WallTimer wt;
    FactWorld world = load_world(paths);
    Tokenizer tk = load_tokenizer(paths);
    LMParams<T> lm = load_lm<T>(paths, cfg, tk);
    EmbedderParams<T> emb = load_embedder<T>(paths, cfg, tk);
    Datastore ds = load_index(paths);

    ProjectorParams<T> W =
        sw == AblationSwitch::no_pretrain
            ? ProjectorParams<T>::init(ds.d_emb, cfg.lm.d_model, derive_seed(cfg.seed, "proj-init"))
            : load_projector<T>(paths, paths.stage1_dir(), cfg, ds);

    BlendWeights blend = cfg.blend;
    if (sw == AblationSwitch::rc_only) blend = {1.0, 0.0, 0.0};
    if (sw == AblationSwitch::qa_only) blend = {0.0, 1.0, 0.0};
    if (sw == AblationSwitch::summ_only) blend = {0.0, 0.0, 1.0};
    auto examples = build_instruction_set(world, blend, cfg.stage2_examples,
                                          derive_seed(cfg.seed, "instruction-set"));
    auto resolved = resolve_instruction_contexts(examples, ds, emb, tk);

    Stage2Config sc = cfg.stage2;
    sc.seed = derive_seed(cfg.seed, "stage2");
    if (sw == AblationSwitch::no_nll) sc.nll_weight = 0.0;
    if (sw == AblationSwitch::no_selfkd) sc.alpha = 0.0;
    StageReport rep = run_stage2(lm, emb, W, ds, tk, resolved, sc);

    const double wall = wt.seconds();
    save_checkpoint(out_dir, W.set,
                    json{{"d_emb", W.d_emb},
                         {"d_model", W.d_model},
                         {"stage", "instruction_tune"},
                         {"ablation", ablation_name(sw)}});
    json rj = to_json(rep, "instruction_tune", wall);
    validate_training_json(rj);
    detail::write_json(report_path, rj);
    if (sw == AblationSwitch::none) {
        detail::write_text(paths.stage2_curve_svg(),
                           loss_curve_svg("stage 2 instruction-tuning loss",
                                          {{"total", rep.loss_curve},
                                           {"nll", rep.nll_curve},
                                           {"kl", rep.kl_curve}}));
    }
    detail::write_wall(paths, "finetune_" + ablation_name(sw), wall);
    return rep;
}

// ---- evaluation ----

struct EvalOptions {
    std::vector<Mode> modes{Mode::no_retrieval, Mode::rag, Mode::xrag, Mode::tfidf_1token};
    int max_new_tokens = 8;
};

// For each item, one shared top-1 retrieval feeds every augmented mode, so
// compression methods are compared on identical retrieved documents.
template <typename T>
ComparisonReport run_comparison(const LMParams<T>& lm, const EmbedderParams<T>& emb,
                                const ProjectorParams<T>& W, const Datastore& ds, const Tokenizer& tk,
                                const std::vector<EvalItem>& items, const EvalOptions& opt,
                                uint64_t seed) {
    require(!items.empty(), "run_comparison: empty eval set");
    require(!opt.modes.empty(), "run_comparison: no modes");
    require(lm.frozen(), "run_comparison: LM must be frozen");
    const auto& tpl = task_template();
    TfidfStats tfidf = TfidfStats::build(ds.docs, tk.vocab_size());

    // Shared per-item retrieval.
    std::vector<int64_t> top1(items.size());
    std::vector<std::vector<int>> questions(items.size());
    parallel_for(static_cast<int64_t>(items.size()), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            questions[static_cast<size_t>(i)] = tk.encode(items[static_cast<size_t>(i)].question);
            auto q = embed(emb, questions[static_cast<size_t>(i)]);
            std::vector<float> qf(q.size());
            for (size_t j = 0; j < q.size(); ++j) qf[j] = static_cast<float>(q[j]);
            top1[static_cast<size_t>(i)] = search_top_k(ds, qf, 1)[0].doc_id;
        }
    });

    ComparisonReport rep;
    rep.seed = seed;
    rep.corpus_hash = ds.corpus_hash;
    rep.n_items = static_cast<int>(items.size());
    rep.mean_doc_length = ds.mean_doc_length();

    FlopsModel fm = FlopsModel::from(lm.cfg);
    std::map<std::string, std::vector<EvalRecord>> by_mode;
    for (Mode mode : opt.modes) {
        std::vector<EvalRecord> recs(items.size());
        parallel_for(static_cast<int64_t>(items.size()), [&](int64_t lo, int64_t hi) {
            for (int64_t ii = lo; ii < hi; ++ii) {
                const size_t i = static_cast<size_t>(ii);
                const auto& item = items[i];
                const auto& doc = ds.docs[static_cast<size_t>(top1[i])];
                FusedInput<T> prompt;
                switch (mode) {
                    case Mode::no_retrieval:
                        prompt = assemble_no_retrieval<T>(tpl, tk, questions[i]);
                        break;
                    case Mode::rag:
                        prompt = assemble_rag<T>(tpl, tk, doc.tokens, questions[i], lm.cfg.max_seq_len);
                        break;
                    case Mode::xrag: {
                        auto vec = project(W, cast_embedding<T>(ds.row(top1[i]), ds.d_emb));
                        prompt = assemble_xrag<T>(tpl, tk, vec, questions[i]);
                        break;
                    }
                    case Mode::tfidf_1token:
                        prompt = assemble_tfidf_baseline<T>(tpl, tk, doc.tokens, questions[i], tfidf);
                        break;
                }
                GenerationConfig gc;
                gc.max_new_tokens = opt.max_new_tokens;
                auto out = generate(lm, prompt, gc);
                EvalRecord r;
                r.item_id = item.item_id;
                r.mode = mode_name(mode);
                r.prediction = tk.decode(out);
                r.golds = item.golds;
                r.em = exact_match(r.prediction, r.golds);
                r.f1 = token_f1(r.prediction, r.golds);
                r.prompt_slot_count = static_cast<int>(prompt.size());
                r.generated_token_count = static_cast<int>(out.size());
                recs[i] = std::move(r);
            }
        });
        by_mode[mode_name(mode)] = std::move(recs);
    }

    const bool has_base = by_mode.count(mode_name(Mode::no_retrieval)) > 0;
    for (Mode mode : opt.modes) {
        const auto& recs = by_mode[mode_name(mode)];
        ModeResult m;
        m.mode = mode_name(mode);
        m.n_items = static_cast<int>(recs.size());
        double doclen = 0.0;
        for (size_t i = 0; i < recs.size(); ++i) {
            m.em += recs[i].em;
            m.f1 += recs[i].f1;
            m.mean_prompt_slots += recs[i].prompt_slot_count;
            const int g = std::max(1, static_cast<int>(recs[i].generated_token_count));
            auto fr = flops_forward(fm, recs[i].prompt_slot_count, g);
            m.flops_total_mean += fr.total;
            m.flops_per_token_mean += fr.per_generated_token;
            doclen += static_cast<double>(ds.docs[static_cast<size_t>(top1[i])].token_length());
        }
        const double inv = 1.0 / static_cast<double>(recs.size());
        m.em *= inv;
        m.f1 *= inv;
        m.mean_prompt_slots *= inv;
        m.flops_total_mean *= inv;
        m.flops_per_token_mean *= inv;
        doclen *= inv;
        if (mode == Mode::xrag || mode == Mode::tfidf_1token)
            m.compression_ratio = doclen / 1.0;
        else if (mode == Mode::rag)
            m.compression_ratio = 1.0;
        if (has_base && mode != Mode::no_retrieval) {
            auto rb = resilience_boost(by_mode[mode_name(Mode::no_retrieval)], recs);
            m.resilience = rb.resilience;
            m.boost = rb.boost;
        }
        rep.modes.push_back(std::move(m));
    }
    for (Mode mode : opt.modes)
        for (auto& r : by_mode[mode_name(mode)]) rep.records.push_back(std::move(r));
    return rep;
}

template <typename T>
ComparisonReport run_eval(const RunConfig& cfg, const ArtifactPaths& paths,
                          const std::vector<Mode>& modes, const fs::path& projector_dir,
                          const fs::path& out_json, bool write_aux) {
    detail::WallTimer wt;
    FactWorld world = load_world(paths);
    Tokenizer tk = load_tokenizer(paths);
    LMParams<T> lm = load_lm<T>(paths, cfg, tk);
    EmbedderParams<T> emb = load_embedder<T>(paths, cfg, tk);
    Datastore ds = load_index(paths);
    ProjectorParams<T> W = load_projector<T>(paths, projector_dir, cfg, ds);
    auto items = build_eval_items(world, cfg.eval_items, derive_seed(cfg.seed, "eval-items"));

    EvalOptions opt;
    opt.modes = modes;
    opt.max_new_tokens = cfg.eval_max_new_tokens;
    ComparisonReport rep = run_comparison(lm, emb, W, ds, tk, items, opt, cfg.seed);

    json rj = to_json(rep);
    validate_comparison_json(rj);
    detail::write_json(out_json, rj);
    if (write_aux) {
        detail::write_text(paths.comparison_table(), comparison_table(rep));
        detail::write_text(paths.records_csv_file(), records_csv(rep.records));
        std::vector<BarGroup> groups;
        for (const auto& m : rep.modes) {
            if (m.mode == mode_name(Mode::no_retrieval)) continue;
            groups.push_back({m.mode, m.resilience, m.boost});
        }
        if (!groups.empty())
            detail::write_text(paths.bars_svg(), resilience_boost_svg("resilience and boost by mode", groups));
    }
    detail::write_wall(paths, "eval", wt.seconds());
    return rep;
}

// ---- profile (analytic FLOPs table) ----

inline json run_profile(const RunConfig& cfg, const ArtifactPaths& paths) {
    // Toy dims use a placeholder vocab when the tokenizer is absent.
    int vocab = 4096;
    if (fs::exists(paths.tokenizer_json())) vocab = load_tokenizer(paths).vocab_size();
    FlopsModel toy{cfg.lm.n_layers, cfg.lm.d_model, cfg.lm.d_ff, vocab};
    FlopsModel large{32, 4096, 14336, 32000};
    const int gen = 16;
    auto row = [&](const FlopsModel& m, const char* name, int prompt) {
        auto f = flops_forward(m, prompt, gen);
        return json{{"model", name},
                    {"prompt_slots", prompt},
                    {"gen_tokens", gen},
                    {"flops_total", f.total},
                    {"flops_per_generated_token", f.per_generated_token}};
    };
    json rows = json::array();
    rows.push_back(row(large, "large_rag", 210));
    rows.push_back(row(large, "large_xrag", 36));
    rows.push_back(row(toy, "toy_rag", 56));
    rows.push_back(row(toy, "toy_xrag", 16));
    const double ratio = rows[0].at("flops_per_generated_token").get<double>() /
                         rows[1].at("flops_per_generated_token").get<double>();
    json j{{"schema_version", kReportSchemaVersion},
           {"report_type", "profile"},
           {"note", "analytic matmul-dominated FLOPs; norms/activations/softmax excluded"},
           {"rows", rows},
           {"large_per_token_ratio", ratio}};
    detail::write_json(paths.profile_json(), j);
    return j;
}

// ---- ablation driver ----

// Runs the reduced pipeline for one switch and upserts its row in the
// consolidated ablation table. Shared artifacts (world, LM, embedder, index,
// stage-1 projector) must already exist.
template <typename T>
json run_ablate(const RunConfig& cfg, const ArtifactPaths& paths, AblationSwitch sw) {
    require(sw != AblationSwitch::none, "ablate: pass a reduction switch");
    const std::string name = ablation_name(sw);
    const fs::path dir = paths.ablation_dir(name);
    fs::create_directories(dir);

    fs::path proj_dir;
    if (sw == AblationSwitch::no_finetune) {
        proj_dir = paths.stage1_dir();
        if (!checkpoint_exists(proj_dir))
            throw prereq_error("ablate no_finetune: stage-1 checkpoint missing");
    } else {
        proj_dir = dir / "projector";
        run_finetune<T>(cfg, paths, proj_dir, dir / "stage2_report.json", sw);
    }
    ComparisonReport rep = run_eval<T>(cfg, paths, {Mode::no_retrieval, Mode::xrag}, proj_dir,
                                       dir / "comparison.json", false);

    const ModeResult* xr = nullptr;
    for (const auto& m : rep.modes)
        if (m.mode == mode_name(Mode::xrag)) xr = &m;
    require(xr != nullptr, "ablate: xrag row missing");
    json row{{"switch", name},
             {"em", xr->em},
             {"f1", xr->f1},
             {"resilience", xr->resilience ? json(*xr->resilience) : json(nullptr)},
             {"boost", xr->boost ? json(*xr->boost) : json(nullptr)}};

    json table;
    if (fs::exists(paths.ablation_json())) {
        table = detail::read_json(paths.ablation_json());
    } else {
        table = json{{"schema_version", kReportSchemaVersion}, {"report_type", "ablation"}, {"rows", json::array()}};
    }
    json rows = json::array();
    for (const auto& r : table.at("rows"))
        if (r.at("switch").get<std::string>() != name) rows.push_back(r);
    rows.push_back(row);
    table["rows"] = rows;
    validate_ablation_json(table);
    detail::write_json(paths.ablation_json(), table);
    return row;
}

}  // namespace xrag
