#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xrag/optim.hpp"
#include "xrag/tensor.hpp"

namespace xrag {

// Checkpoint layout: <dir>/manifest.json listing every tensor (name, shape,
// frozen flag, dtype) plus one little-endian f32 .bin per tensor. Weights are
// stored as f32 regardless of the in-memory scalar type, so f32 and f64 runs
// read each other's checkpoints.
inline constexpr int kCheckpointFormatVersion = 1;

inline std::string tensor_file_name(const std::string& name) {
    std::string s = name;
    for (char& c : s)
        if (c == '/' || c == '.') c = '_';
    return s + ".bin";
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const ParameterSet<T>& params,
                     const nlohmann::json& extra = nlohmann::json::object()) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["dtype"] = "f32";
    manifest["extra"] = extra;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& e : params.entries) {
        nlohmann::json t;
        t["name"] = e.name;
        t["shape"] = e.tensor->shape;
        t["frozen"] = e.frozen;
        t["file"] = tensor_file_name(e.name);
        tensors.push_back(t);

        std::ofstream out(dir / tensor_file_name(e.name), std::ios::binary);
        require(out.good(), "checkpoint: cannot open " + (dir / tensor_file_name(e.name)).string());
        std::vector<float> buf(e.tensor->data.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(e.tensor->data[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
        require(out.good(), "checkpoint: write failed for " + e.name);
    }
    manifest["tensors"] = tensors;
    std::ofstream mf(dir / "manifest.json");
    require(mf.good(), "checkpoint: cannot open manifest.json for writing");
    mf << manifest.dump(2) << "\n";
}

// Loads into an already-constructed ParameterSet; names, shapes, and frozen
// flags must match the manifest exactly.
template <typename T>
nlohmann::json load_checkpoint(const std::filesystem::path& dir, ParameterSet<T>& params) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf.good()) throw prereq_error("checkpoint not found: " + (dir / "manifest.json").string());
    nlohmann::json manifest = nlohmann::json::parse(mf);
    require(manifest.at("format_version").get<int>() == kCheckpointFormatVersion,
            "checkpoint: unsupported format version");
    const auto& tensors = manifest.at("tensors");
    require(tensors.size() == params.entries.size(),
            "checkpoint: tensor count mismatch (have " + std::to_string(params.entries.size()) +
                ", manifest has " + std::to_string(tensors.size()) + ")");
    for (size_t i = 0; i < params.entries.size(); ++i) {
        auto& e = params.entries[i];
        const auto& t = tensors[i];
        require(t.at("name").get<std::string>() == e.name,
                "checkpoint: tensor order/name mismatch at index " + std::to_string(i));
        std::vector<int64_t> shape = t.at("shape").get<std::vector<int64_t>>();
        require(shape == e.tensor->shape, "checkpoint: shape mismatch for " + e.name);
        require(t.at("frozen").get<bool>() == e.frozen, "checkpoint: frozen flag mismatch for " + e.name);

        std::ifstream in(dir / t.at("file").get<std::string>(), std::ios::binary);
        require(in.good(), "checkpoint: missing tensor file for " + e.name);
        std::vector<float> buf(e.tensor->data.size());
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        require(in.gcount() == static_cast<std::streamsize>(buf.size() * sizeof(float)),
                "checkpoint: short read for " + e.name);
        for (size_t k = 0; k < buf.size(); ++k) e.tensor->data[k] = static_cast<T>(buf[k]);
    }
    return manifest.value("extra", nlohmann::json::object());
}

inline bool checkpoint_exists(const std::filesystem::path& dir) {
    return std::filesystem::exists(dir / "manifest.json");
}

}  // namespace xrag
