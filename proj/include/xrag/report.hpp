#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xrag/common.hpp"
#include "xrag/eval.hpp"
#include "xrag/training.hpp"

namespace xrag {

using json = nlohmann::json;

inline constexpr int kReportSchemaVersion = 1;

// ---- aggregated results ----

struct ModeResult {
    std::string mode;
    int n_items = 0;
    double em = 0.0;
    double f1 = 0.0;
    double mean_prompt_slots = 0.0;
    std::optional<double> compression_ratio;  // mean |D| / footprint; absent for modes without context
    double flops_total_mean = 0.0;
    double flops_per_token_mean = 0.0;
    std::optional<double> resilience;
    std::optional<double> boost;
};

struct ComparisonReport {
    int schema_version = kReportSchemaVersion;
    uint64_t seed = 0;
    std::string corpus_hash;
    int n_items = 0;
    double mean_doc_length = 0.0;
    std::vector<ModeResult> modes;
    std::vector<EvalRecord> records;  // every item under every mode
    // FLOPs accounting is matmul-dominated: layer norms, activations and
    // softmax are excluded.
    std::string flops_note = "analytic matmul-dominated FLOPs; norms/activations/softmax excluded";
};

inline json to_json(const ModeResult& m) {
    json j{{"mode", m.mode},
           {"n_items", m.n_items},
           {"em", m.em},
           {"f1", m.f1},
           {"mean_prompt_slots", m.mean_prompt_slots},
           {"flops_total_mean", m.flops_total_mean},
           {"flops_per_token_mean", m.flops_per_token_mean}};
    j["compression_ratio"] = m.compression_ratio ? json(*m.compression_ratio) : json(nullptr);
    j["resilience"] = m.resilience ? json(*m.resilience) : json(nullptr);
    j["boost"] = m.boost ? json(*m.boost) : json(nullptr);
    return j;
}

inline json to_json(const EvalRecord& r) {
    return json{{"item_id", r.item_id},     {"mode", r.mode},
                {"prediction", r.prediction}, {"golds", r.golds},
                {"em", r.em},               {"f1", r.f1},
                {"prompt_slot_count", r.prompt_slot_count},
                {"generated_token_count", r.generated_token_count}};
}

inline json to_json(const ComparisonReport& rep) {
    json modes = json::array();
    for (const auto& m : rep.modes) modes.push_back(to_json(m));
    json records = json::array();
    for (const auto& r : rep.records) records.push_back(to_json(r));
    return json{{"schema_version", rep.schema_version},
                {"report_type", "comparison"},
                {"seed", rep.seed},
                {"corpus_hash", rep.corpus_hash},
                {"n_items", rep.n_items},
                {"mean_doc_length", rep.mean_doc_length},
                {"flops_note", rep.flops_note},
                {"modes", modes},
                {"records", records}};
}

inline json to_json(const StageReport& r, const std::string& stage, double wall_seconds) {
    return json{{"schema_version", kReportSchemaVersion},
                {"report_type", "training"},
                {"stage", stage},
                {"steps", r.steps},
                {"initial_loss", r.initial_loss},
                {"final_loss_smoothed", r.final_loss_smoothed},
                {"loss_curve", r.loss_curve},
                {"nll_curve", r.nll_curve},
                {"kl_curve", r.kl_curve},
                {"checksums",
                 {{"lm_before", hex64(r.lm_checksum_before)},
                  {"lm_after", hex64(r.lm_checksum_after)},
                  {"embedder_before", hex64(r.emb_checksum_before)},
                  {"embedder_after", hex64(r.emb_checksum_after)},
                  {"projector_before", hex64(r.w_checksum_before)},
                  {"projector_after", hex64(r.w_checksum_after)}}},
                {"projector_grad_norm_first", r.projector_grad_norm_first},
                {"frozen_grad_norm_max", r.frozen_grad_norm_max},
                {"wall_seconds", wall_seconds}};
}

// ---- minimal published schemas + structural validator ----

// Schema dialect: {"type": ...} with optional "required"/"properties" for
// objects and "items" for arrays. "number" accepts integers; null is allowed
// when "nullable" is true.
inline json comparison_schema() {
    json mode_schema{
        {"type", "object"},
        {"required", {"mode", "n_items", "em", "f1", "mean_prompt_slots", "compression_ratio",
                      "flops_total_mean", "flops_per_token_mean", "resilience", "boost"}},
        {"properties",
         {{"mode", {{"type", "string"}}},
          {"n_items", {{"type", "number"}}},
          {"em", {{"type", "number"}}},
          {"f1", {{"type", "number"}}},
          {"mean_prompt_slots", {{"type", "number"}}},
          {"compression_ratio", {{"type", "number"}, {"nullable", true}}},
          {"flops_total_mean", {{"type", "number"}}},
          {"flops_per_token_mean", {{"type", "number"}}},
          {"resilience", {{"type", "number"}, {"nullable", true}}},
          {"boost", {{"type", "number"}, {"nullable", true}}}}}};
    json record_schema{{"type", "object"},
                       {"required", {"item_id", "mode", "prediction", "golds", "em", "f1",
                                     "prompt_slot_count", "generated_token_count"}},
                       {"properties",
                        {{"item_id", {{"type", "number"}}},
                         {"mode", {{"type", "string"}}},
                         {"prediction", {{"type", "string"}}},
                         {"golds", {{"type", "array"}, {"items", {{"type", "string"}}}}},
                         {"em", {{"type", "number"}}},
                         {"f1", {{"type", "number"}}},
                         {"prompt_slot_count", {{"type", "number"}}},
                         {"generated_token_count", {{"type", "number"}}}}}};
    return json{{"type", "object"},
                {"required", {"schema_version", "report_type", "seed", "corpus_hash", "n_items",
                              "mean_doc_length", "flops_note", "modes", "records"}},
                {"properties",
                 {{"schema_version", {{"type", "number"}}},
                  {"report_type", {{"type", "string"}}},
                  {"seed", {{"type", "number"}}},
                  {"corpus_hash", {{"type", "string"}}},
                  {"n_items", {{"type", "number"}}},
                  {"mean_doc_length", {{"type", "number"}}},
                  {"flops_note", {{"type", "string"}}},
                  {"modes", {{"type", "array"}, {"items", mode_schema}}},
                  {"records", {{"type", "array"}, {"items", record_schema}}}}}};
}

inline json training_schema() {
    json curve{{"type", "array"}, {"items", {{"type", "number"}}}};
    return json{{"type", "object"},
                {"required", {"schema_version", "report_type", "stage", "steps", "initial_loss",
                              "final_loss_smoothed", "loss_curve", "checksums", "wall_seconds"}},
                {"properties",
                 {{"schema_version", {{"type", "number"}}},
                  {"report_type", {{"type", "string"}}},
                  {"stage", {{"type", "string"}}},
                  {"steps", {{"type", "number"}}},
                  {"initial_loss", {{"type", "number"}}},
                  {"final_loss_smoothed", {{"type", "number"}}},
                  {"loss_curve", curve},
                  {"nll_curve", curve},
                  {"kl_curve", curve},
                  {"checksums", {{"type", "object"}}},
                  {"wall_seconds", {{"type", "number"}}}}}};
}

inline json ablation_schema() {
    return json{{"type", "object"},
                {"required", {"schema_version", "report_type", "rows"}},
                {"properties",
                 {{"schema_version", {{"type", "number"}}},
                  {"report_type", {{"type", "string"}}},
                  {"rows",
                   {{"type", "array"},
                    {"items",
                     {{"type", "object"},
                      {"required", {"switch", "em", "f1", "resilience", "boost"}},
                      {"properties",
                       {{"switch", {{"type", "string"}}},
                        {"em", {{"type", "number"}}},
                        {"f1", {{"type", "number"}}},
                        {"resilience", {{"type", "number"}, {"nullable", true}}},
                        {"boost", {{"type", "number"}, {"nullable", true}}}}}}}}}}}};
}

inline void validate_against_schema(const json& value, const json& schema, const std::string& path) {
    const std::string type = schema.at("type").get<std::string>();
    if (value.is_null()) {
        if (schema.value("nullable", false)) return;
        throw config_error("schema violation at " + path + ": unexpected null");
    }
    auto fail = [&](const std::string& want) {
        throw config_error("schema violation at " + path + ": expected " + want);
    };
    if (type == "object") {
        if (!value.is_object()) fail("object");
        if (schema.contains("required"))
            for (const auto& k : schema.at("required")) {
                if (!value.contains(k.get<std::string>()))
                    throw config_error("schema violation at " + path + ": missing key " +
                                       k.get<std::string>());
            }
        if (schema.contains("properties"))
            for (auto it = schema.at("properties").begin(); it != schema.at("properties").end(); ++it)
                if (value.contains(it.key()))
                    validate_against_schema(value.at(it.key()), it.value(), path + "." + it.key());
    } else if (type == "array") {
        if (!value.is_array()) fail("array");
        if (schema.contains("items")) {
            int64_t i = 0;
            for (const auto& el : value)
                validate_against_schema(el, schema.at("items"), path + "[" + std::to_string(i++) + "]");
        }
    } else if (type == "number") {
        if (!value.is_number()) fail("number");
    } else if (type == "string") {
        if (!value.is_string()) fail("string");
    } else if (type == "boolean") {
        if (!value.is_boolean()) fail("boolean");
    } else {
        throw config_error("schema violation at " + path + ": unknown schema type " + type);
    }
}

inline void validate_comparison_json(const json& j) { validate_against_schema(j, comparison_schema(), "$"); }
inline void validate_training_json(const json& j) { validate_against_schema(j, training_schema(), "$"); }
inline void validate_ablation_json(const json& j) { validate_against_schema(j, ablation_schema(), "$"); }

// ---- text table ----

namespace detail {

inline std::string fmt_num(double v, const char* spec = "%.3f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

inline std::string fmt_opt(const std::optional<double>& v, const char* spec = "%.3f") {
    return v ? fmt_num(*v, spec) : std::string("-");
}

inline std::string pad(const std::string& s, size_t w) {
    return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

}  // namespace detail

inline std::string comparison_table(const ComparisonReport& rep) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"mode", "EM", "F1", "slots", "ratio", "MFLOPs/tok", "resilience", "boost"});
    for (const auto& m : rep.modes) {
        rows.push_back({m.mode, detail::fmt_num(m.em), detail::fmt_num(m.f1),
                        detail::fmt_num(m.mean_prompt_slots, "%.1f"),
                        detail::fmt_opt(m.compression_ratio, "%.1f"),
                        detail::fmt_num(m.flops_per_token_mean / 1e6, "%.3f"),
                        detail::fmt_opt(m.resilience), detail::fmt_opt(m.boost)});
    }
    std::vector<size_t> widths(rows[0].size(), 0);
    for (const auto& r : rows)
        for (size_t c = 0; c < r.size(); ++c) widths[c] = std::max(widths[c], r[c].size());
    std::string out;
    out += "items: " + std::to_string(rep.n_items) +
           "  mean doc length: " + detail::fmt_num(rep.mean_doc_length, "%.1f") + "\n";
    out += "note: " + rep.flops_note + "\n";
    for (size_t ri = 0; ri < rows.size(); ++ri) {
        std::string line;
        for (size_t c = 0; c < rows[ri].size(); ++c) {
            line += detail::pad(rows[ri][c], widths[c]);
            if (c + 1 < rows[ri].size()) line += "  ";
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
        if (ri == 0) {
            std::string rule;
            for (size_t c = 0; c < widths.size(); ++c) {
                rule += std::string(widths[c], '-');
                if (c + 1 < widths.size()) rule += "  ";
            }
            out += rule + "\n";
        }
    }
    return out;
}

// ---- deterministic SVG rendering ----

namespace detail {

inline std::string svg_header(int w, int h, const std::string& title) {
    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
         std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " + std::to_string(h) +
         "\">\n";
    s += "<rect width=\"" + std::to_string(w) + "\" height=\"" + std::to_string(h) +
         "\" fill=\"white\"/>\n";
    s += "<text x=\"" + std::to_string(w / 2) +
         "\" y=\"24\" font-family=\"monospace\" font-size=\"16\" text-anchor=\"middle\">" + title +
         "</text>\n";
    return s;
}

inline const char* series_color(size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf"};
    return palette[i % (sizeof(palette) / sizeof(palette[0]))];
}

inline std::string coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace detail

struct NamedCurve {
    std::string name;
    std::vector<double> values;
};

// Fixed-canvas line chart; byte-stable for identical input.
inline std::string loss_curve_svg(const std::string& title, const std::vector<NamedCurve>& curves) {
    require(!curves.empty(), "loss_curve_svg: no curves");
    const int W = 720, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
    double lo = 1e300, hi = -1e300;
    size_t max_n = 0;
    for (const auto& c : curves) {
        require(!c.values.empty(), "loss_curve_svg: empty curve " + c.name);
        max_n = std::max(max_n, c.values.size());
        for (double v : c.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (hi - lo < 1e-12) {
        hi = lo + 1.0;
    }
    const double px = static_cast<double>(W - ml - mr);
    const double py = static_cast<double>(H - mt - mb);
    auto xmap = [&](size_t i, size_t n) {
        return ml + (n <= 1 ? 0.0 : px * static_cast<double>(i) / static_cast<double>(n - 1));
    };
    auto ymap = [&](double v) { return mt + py * (1.0 - (v - lo) / (hi - lo)); };

    std::string s = detail::svg_header(W, H, title);
    s += "<rect x=\"" + std::to_string(ml) + "\" y=\"" + std::to_string(mt) + "\" width=\"" +
         detail::coord(px) + "\" height=\"" + detail::coord(py) +
         "\" fill=\"none\" stroke=\"#888888\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = lo + (hi - lo) * t / 4.0;
        const double y = ymap(v);
        s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + detail::coord(y) + "\" x2=\"" +
             std::to_string(W - mr) + "\" y2=\"" + detail::coord(y) +
             "\" stroke=\"#dddddd\"/>\n";
        s += "<text x=\"" + std::to_string(ml - 6) + "\" y=\"" + detail::coord(y + 4) +
             "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">" +
             detail::fmt_num(v, "%.4g") + "</text>\n";
    }
    s += "<text x=\"" + std::to_string(ml + (W - ml - mr) / 2) + "\" y=\"" + std::to_string(H - 14) +
         "\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">step</text>\n";
    for (size_t ci = 0; ci < curves.size(); ++ci) {
        const auto& c = curves[ci];
        std::string pts;
        for (size_t i = 0; i < c.values.size(); ++i) {
            if (!pts.empty()) pts += " ";
            pts += detail::coord(xmap(i, c.values.size())) + "," + detail::coord(ymap(c.values[i]));
        }
        s += "<polyline fill=\"none\" stroke=\"";
        s += detail::series_color(ci);
        s += "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
        const int lx = ml + 10, ly = mt + 16 + static_cast<int>(ci) * 16;
        s += "<line x1=\"" + std::to_string(lx) + "\" y1=\"" + std::to_string(ly - 4) + "\" x2=\"" +
             std::to_string(lx + 18) + "\" y2=\"" + std::to_string(ly - 4) + "\" stroke=\"";
        s += detail::series_color(ci);
        s += "\" stroke-width=\"2\"/>\n";
        s += "<text x=\"" + std::to_string(lx + 24) + "\" y=\"" + std::to_string(ly) +
             "\" font-family=\"monospace\" font-size=\"12\">" + c.name + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

struct BarGroup {
    std::string label;  // mode name
    std::optional<double> resilience;
    std::optional<double> boost;
};

// Grouped bars, two series per mode; undefined rates render as "n/a".
inline std::string resilience_boost_svg(const std::string& title, const std::vector<BarGroup>& groups) {
    require(!groups.empty(), "resilience_boost_svg: no groups");
    const int W = 720, H = 420, ml = 70, mr = 20, mt = 40, mb = 60;
    const double px = static_cast<double>(W - ml - mr);
    const double py = static_cast<double>(H - mt - mb);
    auto ymap = [&](double v) { return mt + py * (1.0 - v); };

    std::string s = detail::svg_header(W, H, title);
    for (int t = 0; t <= 5; ++t) {
        const double v = t / 5.0;
        const double y = ymap(v);
        s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + detail::coord(y) + "\" x2=\"" +
             std::to_string(W - mr) + "\" y2=\"" + detail::coord(y) + "\" stroke=\"#dddddd\"/>\n";
        s += "<text x=\"" + std::to_string(ml - 6) + "\" y=\"" + detail::coord(y + 4) +
             "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">" +
             detail::fmt_num(v, "%.1f") + "</text>\n";
    }
    const double gw = px / static_cast<double>(groups.size());
    const double bw = gw / 3.0;
    const char* cres = "#1f77b4";
    const char* cboo = "#ff7f0e";
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        const double gx = ml + gw * static_cast<double>(gi);
        auto bar = [&](std::optional<double> v, double x, const char* color) {
            if (v) {
                const double y = ymap(*v);
                s += "<rect x=\"" + detail::coord(x) + "\" y=\"" + detail::coord(y) + "\" width=\"" +
                     detail::coord(bw) + "\" height=\"" + detail::coord(ymap(0.0) - y) +
                     "\" fill=\"";
                s += color;
                s += "\"/>\n";
                s += "<text x=\"" + detail::coord(x + bw / 2) + "\" y=\"" + detail::coord(y - 4) +
                     "\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">" +
                     detail::fmt_num(*v, "%.2f") + "</text>\n";
            } else {
                s += "<text x=\"" + detail::coord(x + bw / 2) + "\" y=\"" +
                     detail::coord(ymap(0.0) - 6) +
                     "\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">n/a</text>\n";
            }
        };
        bar(groups[gi].resilience, gx + gw / 2 - bw, cres);
        bar(groups[gi].boost, gx + gw / 2, cboo);
        s += "<text x=\"" + detail::coord(gx + gw / 2) + "\" y=\"" + std::to_string(H - mb + 18) +
             "\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">" +
             groups[gi].label + "</text>\n";
    }
    s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + detail::coord(ymap(0.0)) + "\" x2=\"" +
         std::to_string(W - mr) + "\" y2=\"" + detail::coord(ymap(0.0)) + "\" stroke=\"#444444\"/>\n";
    const int lx = ml + 10;
    s += "<rect x=\"" + std::to_string(lx) + "\" y=\"" + std::to_string(mt + 6) +
         "\" width=\"12\" height=\"12\" fill=\"";
    s += cres;
    s += "\"/>\n<text x=\"" + std::to_string(lx + 18) + "\" y=\"" + std::to_string(mt + 16) +
         "\" font-family=\"monospace\" font-size=\"12\">resilience</text>\n";
    s += "<rect x=\"" + std::to_string(lx) + "\" y=\"" + std::to_string(mt + 24) +
         "\" width=\"12\" height=\"12\" fill=\"";
    s += cboo;
    s += "\"/>\n<text x=\"" + std::to_string(lx + 18) + "\" y=\"" + std::to_string(mt + 34) +
         "\" font-family=\"monospace\" font-size=\"12\">boost</text>\n";
    s += "</svg>\n";
    return s;
}

// Optional per-item CSV.
inline std::string records_csv(const std::vector<EvalRecord>& records) {
    std::string out = "item_id,mode,em,f1,prompt_slot_count,generated_token_count,prediction\n";
    for (const auto& r : records) {
        std::string pred = r.prediction;
        for (auto& ch : pred)
            if (ch == ',' || ch == '\n') ch = ' ';
        out += std::to_string(r.item_id) + "," + r.mode + "," + std::to_string(r.em) + "," +
               detail::fmt_num(r.f1, "%.6f") + "," + std::to_string(r.prompt_slot_count) + "," +
               std::to_string(r.generated_token_count) + "," + pred + "\n";
    }
    return out;
}

}  // namespace xrag
