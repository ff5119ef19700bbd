#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xrag/common.hpp"

namespace xrag {

// Word-level whitespace tokenizer. Reserved ids are fixed at the front of the
// vocabulary; [X] is the placeholder slot used only inside prompt templates
// and must never occur in corpus text.
class Tokenizer {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kPlaceholder = 4;  // [X]

    Tokenizer() = default;

    // Builds a vocabulary from whitespace-split words of `texts`, sorted by
    // (count desc, word asc) for a deterministic id assignment.
    static Tokenizer build(const std::vector<std::string>& texts, bool lowercase = true,
                           int max_vocab = 4096) {
        Tokenizer tk;
        tk.lowercase_ = lowercase;
        for (const char* w : {"[pad]", "[bos]", "[eos]", "[unk]", "[X]"}) {
            tk.word_to_id_[w] = static_cast<int>(tk.id_to_word_.size());
            tk.id_to_word_.push_back(w);
        }
        std::map<std::string, int64_t> counts;
        for (const auto& t : texts)
            for (const auto& w : split_words(tk.normalize(t))) ++counts[w];
        std::vector<std::pair<std::string, int64_t>> sorted(counts.begin(), counts.end());
        std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        for (const auto& [w, c] : sorted) {
            if (static_cast<int>(tk.id_to_word_.size()) >= max_vocab) break;
            require(w != "[pad]" && w != "[bos]" && w != "[eos]" && w != "[unk]" && w != "[X]",
                    "tokenizer: reserved token appears in corpus text: " + w);
            tk.word_to_id_[w] = static_cast<int>(tk.id_to_word_.size());
            tk.id_to_word_.push_back(w);
        }
        return tk;
    }

    int vocab_size() const { return static_cast<int>(id_to_word_.size()); }
    bool lowercase() const { return lowercase_; }

    // Raw lookup first so case-carrying reserved words ("[X]") resolve even
    // under lowercase folding; the stored vocabulary itself is folded.
    int id_of(const std::string& word) const {
        auto it = word_to_id_.find(word);
        if (it == word_to_id_.end() && lowercase_) it = word_to_id_.find(lower(word));
        return it == word_to_id_.end() ? kUnk : it->second;
    }

    bool has(const std::string& word) const {
        if (word_to_id_.count(word) > 0) return true;
        return lowercase_ && word_to_id_.count(lower(word)) > 0;
    }

    const std::string& word_of(int id) const {
        require(id >= 0 && id < vocab_size(), "tokenizer: id out of range");
        return id_to_word_[static_cast<size_t>(id)];
    }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        for (const auto& w : split_words(normalize(text))) ids.push_back(id_of(w));
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (id == kPad || id == kBos || id == kEos) continue;
            if (!out.empty()) out += ' ';
            out += word_of(id);
        }
        return out;
    }

    void save(const std::filesystem::path& path) const {
        nlohmann::json j;
        j["lowercase"] = lowercase_;
        nlohmann::json vocab = nlohmann::json::object();
        for (size_t i = 0; i < id_to_word_.size(); ++i) vocab[id_to_word_[i]] = i;
        j["vocab"] = vocab;
        std::ofstream out(path);
        require(out.good(), "tokenizer: cannot write " + path.string());
        out << j.dump(2) << "\n";
    }

    static Tokenizer load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in.good()) throw prereq_error("tokenizer vocabulary not found: " + path.string());
        nlohmann::json j = nlohmann::json::parse(in);
        Tokenizer tk;
        tk.lowercase_ = j.at("lowercase").get<bool>();
        const auto& vocab = j.at("vocab");
        tk.id_to_word_.resize(vocab.size());
        for (auto it = vocab.begin(); it != vocab.end(); ++it) {
            int id = it.value().get<int>();
            require(id >= 0 && id < static_cast<int>(vocab.size()), "tokenizer: corrupt vocab ids");
            tk.id_to_word_[static_cast<size_t>(id)] = it.key();
            tk.word_to_id_[it.key()] = id;
        }
        for (const auto& w : tk.id_to_word_) require(!w.empty(), "tokenizer: non-dense vocab ids");
        require(tk.id_to_word_.size() > kPlaceholder && tk.id_to_word_[kPad] == "[pad]" &&
                    tk.id_to_word_[kBos] == "[bos]" && tk.id_to_word_[kEos] == "[eos]" &&
                    tk.id_to_word_[kUnk] == "[unk]" && tk.id_to_word_[kPlaceholder] == "[X]",
                "tokenizer: reserved ids corrupted");
        return tk;
    }

    static std::vector<std::string> split_words(const std::string& text) {
        std::vector<std::string> words;
        std::istringstream ss(text);
        std::string w;
        while (ss >> w) words.push_back(w);
        return words;
    }

  private:
    std::string normalize(const std::string& s) const { return lowercase_ ? lower(s) : s; }

    static std::string lower(const std::string& s) {
        std::string out = s;
        for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return out;
    }

    std::map<std::string, int> word_to_id_;
    std::vector<std::string> id_to_word_;
    bool lowercase_ = true;
};

}  // namespace xrag
