#include <catch2/catch_amalgamated.hpp>

#include "xrag/checkpoint.hpp"

#include <filesystem>
#include <fstream>

using namespace xrag;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("xrag_ckpt_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<uintptr_t>(this)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

ParameterSet<float> sample_params() {
    ParameterSet<float> ps;
    auto rng = make_rng(5, "ckpt");
    ps.add("enc.w", Tensor<float>::randn({3, 4}, rng, 1.0), true);
    ps.add("proj.w", Tensor<float>::randn({4, 2}, rng, 1.0));
    ps.add("proj.b", Tensor<float>::zeros({2}));
    return ps;
}

}  // namespace

TEST_CASE("checkpoint round trip restores values, order, frozen flags, extra", "[checkpoint]") {
    TempDir td;
    ParameterSet<float> src = sample_params();
    nlohmann::json extra = {{"note", "hello"}, {"k", 7}};
    save_checkpoint(td.path, src, extra);
    REQUIRE(checkpoint_exists(td.path));

    ParameterSet<float> dst = sample_params();
    for (auto& e : dst.entries)
        for (auto& v : e.tensor->data) v = -1.0f;
    nlohmann::json back = load_checkpoint(td.path, dst);
    REQUIRE(back.at("note") == "hello");
    REQUIRE(back.at("k") == 7);
    for (size_t i = 0; i < src.entries.size(); ++i)
        REQUIRE(src.entries[i].tensor->data == dst.entries[i].tensor->data);
    REQUIRE(src.checksum() == dst.checksum());
}

TEST_CASE("f64 runs read f32 checkpoints", "[checkpoint]") {
    TempDir td;
    ParameterSet<float> src = sample_params();
    save_checkpoint(td.path, src);

    ParameterSet<double> dst;
    auto rng = make_rng(5, "ckpt");  // same seed -> same shapes
    dst.add("enc.w", Tensor<double>::randn({3, 4}, rng, 1.0), true);
    dst.add("proj.w", Tensor<double>::randn({4, 2}, rng, 1.0));
    dst.add("proj.b", Tensor<double>::zeros({2}));
    load_checkpoint(td.path, dst);
    for (size_t i = 0; i < src.entries.size(); ++i)
        for (size_t k = 0; k < src.entries[i].tensor->data.size(); ++k)
            REQUIRE(static_cast<double>(src.entries[i].tensor->data[k]) ==
                    dst.entries[i].tensor->data[k]);
}

TEST_CASE("mismatched structure is rejected", "[checkpoint]") {
    TempDir td;
    ParameterSet<float> src = sample_params();
    save_checkpoint(td.path, src);

    SECTION("wrong name") {
        ParameterSet<float> bad;
        auto rng = make_rng(1, "x");
        bad.add("enc.w", Tensor<float>::randn({3, 4}, rng, 1.0), true);
        bad.add("other.w", Tensor<float>::randn({4, 2}, rng, 1.0));
        bad.add("proj.b", Tensor<float>::zeros({2}));
        CHECK_THROWS(load_checkpoint(td.path, bad));
    }
    SECTION("wrong shape") {
        ParameterSet<float> bad;
        auto rng = make_rng(1, "x");
        bad.add("enc.w", Tensor<float>::randn({3, 5}, rng, 1.0), true);
        bad.add("proj.w", Tensor<float>::randn({4, 2}, rng, 1.0));
        bad.add("proj.b", Tensor<float>::zeros({2}));
        CHECK_THROWS(load_checkpoint(td.path, bad));
    }
    SECTION("wrong frozen flag") {
        ParameterSet<float> bad;
        auto rng = make_rng(1, "x");
        bad.add("enc.w", Tensor<float>::randn({3, 4}, rng, 1.0), false);
        bad.add("proj.w", Tensor<float>::randn({4, 2}, rng, 1.0));
        bad.add("proj.b", Tensor<float>::zeros({2}));
        CHECK_THROWS(load_checkpoint(td.path, bad));
    }
    SECTION("missing entry") {
        ParameterSet<float> bad;
        auto rng = make_rng(1, "x");
        bad.add("enc.w", Tensor<float>::randn({3, 4}, rng, 1.0), true);
        CHECK_THROWS(load_checkpoint(td.path, bad));
    }
}

TEST_CASE("corrupt manifest and truncated tensor files fail loudly", "[checkpoint]") {
    TempDir td;
    ParameterSet<float> src = sample_params();
    save_checkpoint(td.path, src);

    SECTION("manifest garbage") {
        std::ofstream(td.path / "manifest.json") << "{not json";
        ParameterSet<float> dst = sample_params();
        CHECK_THROWS(load_checkpoint(td.path, dst));
    }
    SECTION("short tensor file") {
        std::ofstream(td.path / tensor_file_name("proj.w"), std::ios::binary) << "xx";
        ParameterSet<float> dst = sample_params();
        CHECK_THROWS(load_checkpoint(td.path, dst));
    }
    SECTION("missing checkpoint dir") {
        ParameterSet<float> dst = sample_params();
        CHECK_THROWS(load_checkpoint(td.path / "nope", dst));
        REQUIRE_FALSE(checkpoint_exists(td.path / "nope"));
    }
}

TEST_CASE("saving twice is byte-stable", "[checkpoint]") {
    TempDir td;
    ParameterSet<float> src = sample_params();
    save_checkpoint(td.path / "a", src);
    save_checkpoint(td.path / "b", src);
    for (const auto& e : src.entries) {
        std::ifstream fa(td.path / "a" / tensor_file_name(e.name), std::ios::binary);
        std::ifstream fb(td.path / "b" / tensor_file_name(e.name), std::ios::binary);
        std::string da((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
        std::string db((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
        REQUIRE(da == db);
    }
    std::ifstream ma(td.path / "a" / "manifest.json"), mb(td.path / "b" / "manifest.json");
    std::string sa((std::istreambuf_iterator<char>(ma)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(mb)), std::istreambuf_iterator<char>());
    REQUIRE(sa == sb);
}
