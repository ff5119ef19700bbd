#include <catch2/catch_amalgamated.hpp>

#include "xrag/tokenizer.hpp"

#include <cctype>
#include <filesystem>

using namespace xrag;

TEST_CASE("reserved ids come first and survive save/load", "[tokenizer]") {
    Tokenizer tk = Tokenizer::build({"red green blue", "green blue"});
    REQUIRE(tk.id_of("[pad]") == Tokenizer::kPad);
    REQUIRE(tk.id_of("[bos]") == Tokenizer::kBos);
    REQUIRE(tk.id_of("[eos]") == Tokenizer::kEos);
    REQUIRE(tk.id_of("[unk]") == Tokenizer::kUnk);
    REQUIRE(tk.id_of("[X]") == Tokenizer::kPlaceholder);
    REQUIRE(tk.vocab_size() == 5 + 3);

    const auto dir = std::filesystem::temp_directory_path() / "xrag_tok_test";
    std::filesystem::create_directories(dir);
    tk.save(dir / "tok.json");
    Tokenizer back = Tokenizer::load(dir / "tok.json");
    REQUIRE(back.vocab_size() == tk.vocab_size());
    for (const char* w : {"red", "green", "blue"}) REQUIRE(back.id_of(w) == tk.id_of(w));
    std::filesystem::remove_all(dir);
}

TEST_CASE("round trip up to whitespace normalization", "[tokenizer]") {
    Tokenizer tk = Tokenizer::build({"the size of it is large ."});
    const std::string text = "  the size   is large .  ";
    REQUIRE(tk.decode(tk.encode(text)) == "the size is large .");
}

TEST_CASE("lowercasing folds case at build and encode time", "[tokenizer]") {
    Tokenizer tk = Tokenizer::build({"Apple Banana"});
    REQUIRE(tk.has("apple"));
    REQUIRE(tk.has("Apple"));  // queries fold like encode does
    REQUIRE(tk.encode("APPLE banana") == tk.encode("apple Banana"));
    // the stored vocabulary itself is folded
    for (int i = Tokenizer::kPlaceholder + 1; i < tk.vocab_size(); ++i)
        for (char c : tk.word_of(i)) REQUIRE_FALSE(static_cast<bool>(std::isupper(static_cast<unsigned char>(c))));
}

TEST_CASE("unknown words map to unk and ids stay dense", "[tokenizer]") {
    Tokenizer tk = Tokenizer::build({"alpha beta"});
    const auto ids = tk.encode("alpha gamma beta");
    REQUIRE(ids.size() == 3);
    REQUIRE(ids[1] == Tokenizer::kUnk);
    for (int id : ids) REQUIRE(id < tk.vocab_size());
}

TEST_CASE("decode skips pad/bos/eos but keeps placeholder visible", "[tokenizer]") {
    Tokenizer tk = Tokenizer::build({"x y"});
    std::vector<int> ids = {Tokenizer::kBos, tk.id_of("x"), Tokenizer::kPad,
                            Tokenizer::kPlaceholder, tk.id_of("y"), Tokenizer::kEos};
    REQUIRE(tk.decode(ids) == "x [X] y");
}

TEST_CASE("deterministic id assignment across rebuilds", "[tokenizer]") {
    const std::vector<std::string> texts = {"m n o p", "p o q"};
    Tokenizer a = Tokenizer::build(texts);
    Tokenizer b = Tokenizer::build(texts);
    REQUIRE(a.vocab_size() == b.vocab_size());
    for (int i = 0; i < a.vocab_size(); ++i) REQUIRE(a.word_of(i) == b.word_of(i));
}

TEST_CASE("split_words treats any whitespace run as one separator", "[tokenizer]") {
    const auto words = Tokenizer::split_words(" a\t b\n\nc ");
    REQUIRE(words == std::vector<std::string>({"a", "b", "c"}));
}
