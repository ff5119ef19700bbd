#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xrag/common.hpp"
#include "xrag/embedder.hpp"

namespace xrag {

struct DocumentRecord {
    int64_t doc_id = 0;
    std::string text;
    std::vector<int> tokens;

    int64_t token_length() const { return static_cast<int64_t>(tokens.size()); }
};

// On-disk layout, bit-exact across save/load:
//   "XRAGDS1\n"
//   one JSON header line: {"n":N,"d_emb":d,"embedder":tag,"corpus_hash":hex}
//   N x d_emb little-endian float32 rows
//   N JSON lines: {"doc_id":i,"text":...,"tokens":[...]}
struct Datastore {
    static constexpr const char* kMagic = "XRAGDS1";

    std::vector<DocumentRecord> docs;
    std::vector<float> matrix;  // row-major [n x d_emb], unit-norm rows
    int d_emb = 0;
    std::string embedder_tag;
    std::string corpus_hash;

    int64_t size() const { return static_cast<int64_t>(docs.size()); }
    const float* row(int64_t i) const { return matrix.data() + i * d_emb; }

    double mean_doc_length() const {
        require(!docs.empty(), "datastore: empty");
        int64_t total = 0;
        for (const auto& d : docs) total += d.token_length();
        return static_cast<double>(total) / static_cast<double>(docs.size());
    }
};

inline std::string corpus_hash_of(const std::vector<DocumentRecord>& docs) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& d : docs) {
        h = fnv1a(d.text.data(), d.text.size(), h);
        const char nl = '\n';
        h = fnv1a(&nl, 1, h);
    }
    return hex64(h);
}

// Embeds every document once; doc ids must already be dense [0, N).
template <typename T>
Datastore build_datastore(const std::vector<DocumentRecord>& docs, const EmbedderParams<T>& emb) {
    require(!docs.empty(), "datastore build: empty corpus");
    require(emb.frozen(), "datastore build: embedder must be frozen");
    for (size_t i = 0; i < docs.size(); ++i)
        require(docs[i].doc_id == static_cast<int64_t>(i), "datastore build: doc ids must be dense [0,N)");
    Datastore ds;
    ds.docs = docs;
    ds.d_emb = emb.cfg.d_emb;
    ds.embedder_tag = emb.provenance;
    ds.corpus_hash = corpus_hash_of(docs);
    ds.matrix.assign(docs.size() * static_cast<size_t>(ds.d_emb), 0.0f);
    parallel_for(static_cast<int64_t>(docs.size()), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            auto e = embed(emb, docs[static_cast<size_t>(i)].tokens);
            float* dst = ds.matrix.data() + i * ds.d_emb;
            for (int j = 0; j < ds.d_emb; ++j) dst[j] = static_cast<float>(e[static_cast<size_t>(j)]);
        }
    });
    return ds;
}

struct SearchHit {
    int64_t doc_id;
    float score;
};

// Exact top-k by inner product; ties go to the lower doc_id. Scores are
// scanned in fixed blocks and merged, which the naive-loop oracle must match
// exactly.
inline std::vector<SearchHit> search_top_k(const Datastore& ds, const float* query, int d_emb, int k) {
    require(d_emb == ds.d_emb, "search: query width mismatch");
    require(k >= 1, "search: k must be >= 1");
    require(static_cast<int64_t>(k) <= ds.size(), "search: k exceeds corpus size");
    {
        float sq = 0.0f;
        for (int j = 0; j < d_emb; ++j) sq += query[j] * query[j];
        require(std::fabs(sq - 1.0f) < 1e-3f, "search: query must be unit-norm");
    }
    auto better = [](const SearchHit& a, const SearchHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    };
    const int64_t n = ds.size();
    const int64_t block = 1024;
    std::vector<SearchHit> best;
    best.reserve(static_cast<size_t>(k) + block);
    for (int64_t b0 = 0; b0 < n; b0 += block) {
        const int64_t b1 = std::min(n, b0 + block);
        for (int64_t i = b0; i < b1; ++i) {
            const float* r = ds.row(i);
            float s = 0.0f;
            for (int j = 0; j < d_emb; ++j) s += query[j] * r[j];
            best.push_back({i, s});
        }
        std::sort(best.begin(), best.end(), better);
        if (static_cast<int>(best.size()) > k) best.resize(static_cast<size_t>(k));
    }
    return best;
}

inline std::vector<SearchHit> search_top_k(const Datastore& ds, const std::vector<float>& query, int k) {
    return search_top_k(ds, query.data(), static_cast<int>(query.size()), k);
}

inline void save_datastore(const Datastore& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "datastore save: cannot open " + path.string());
    out << Datastore::kMagic << "\n";
    nlohmann::json header;
    header["n"] = ds.size();
    header["d_emb"] = ds.d_emb;
    header["embedder"] = ds.embedder_tag;
    header["corpus_hash"] = ds.corpus_hash;
    out << header.dump() << "\n";
    out.write(reinterpret_cast<const char*>(ds.matrix.data()),
              static_cast<std::streamsize>(ds.matrix.size() * sizeof(float)));
    for (const auto& d : ds.docs) {
        nlohmann::json j;
        j["doc_id"] = d.doc_id;
        j["text"] = d.text;
        j["tokens"] = d.tokens;
        out << j.dump() << "\n";
    }
    require(out.good(), "datastore save: write failed");
}

inline Datastore load_datastore(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw prereq_error("datastore not found: " + path.string());
    std::string magic;
    std::getline(in, magic);
    if (magic != Datastore::kMagic)
        throw io_error("datastore load: bad magic (expected " + std::string(Datastore::kMagic) + ")");
    std::string header_line;
    std::getline(in, header_line);
    nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
    if (header.is_discarded()) throw io_error("datastore load: corrupt header");
    Datastore ds;
    const int64_t n = header.at("n").get<int64_t>();
    ds.d_emb = header.at("d_emb").get<int>();
    ds.embedder_tag = header.at("embedder").get<std::string>();
    ds.corpus_hash = header.at("corpus_hash").get<std::string>();
    require(n >= 1 && ds.d_emb >= 1, "datastore load: bad header sizes");
    ds.matrix.assign(static_cast<size_t>(n) * static_cast<size_t>(ds.d_emb), 0.0f);
    in.read(reinterpret_cast<char*>(ds.matrix.data()),
            static_cast<std::streamsize>(ds.matrix.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(ds.matrix.size() * sizeof(float)))
        throw io_error("datastore load: truncated embedding block");
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw io_error("datastore load: corrupt document line");
        DocumentRecord d;
        d.doc_id = j.at("doc_id").get<int64_t>();
        d.text = j.at("text").get<std::string>();
        d.tokens = j.at("tokens").get<std::vector<int>>();
        ds.docs.push_back(std::move(d));
    }
    if (static_cast<int64_t>(ds.docs.size()) != n)
        throw io_error("datastore load: document count mismatch (" + std::to_string(ds.docs.size()) +
                       " vs header " + std::to_string(n) + ")");
    for (size_t i = 0; i < ds.docs.size(); ++i)
        if (ds.docs[i].doc_id != static_cast<int64_t>(i))
            throw io_error("datastore load: doc ids not dense");
    return ds;
}

}  // namespace xrag
