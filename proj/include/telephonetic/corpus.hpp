#pragma once

// Sentence-per-line corpus ingestion plus word- and character-level
// vocabularies. Text is whitespace-tokenized UTF-8; PTB conventions
// (lowercase, literal "<unk>", "N" for numbers) pass through untouched.

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "telephonetic/error.hpp"
#include "telephonetic/util.hpp"

namespace telephonetic {

struct Sentence {
    std::vector<std::string> tokens;
    std::size_t id = 0;
};

inline std::vector<Sentence> load_sentences(const std::string& path) {
    std::string text = read_text_file(path);
    std::vector<Sentence> out;
    std::size_t line_no = 0;
    std::vector<char32_t> cps;
    for (std::string_view line : split_lines(text)) {
        ++line_no;
        cps.clear();
        std::size_t bad_at = 0;
        if (!utf8_decode(line, cps, &bad_at))
            throw format_error(path + ":" + std::to_string(line_no) + ": invalid UTF-8 at byte " +
                               std::to_string(bad_at));
        auto tokens = split_ws(line);
        if (tokens.empty()) continue;
        Sentence s;
        s.tokens = std::move(tokens);
        s.id = out.size();
        out.push_back(std::move(s));
    }
    return out;
}

class WordVocab {
public:
    static constexpr int UNK = 0;
    static constexpr int MASK = 1;
    static constexpr const char* UNK_TOKEN = "<unk>";
    static constexpr const char* MASK_TOKEN = "<mask>";

    WordVocab() {
        words_ = {UNK_TOKEN, MASK_TOKEN};
        to_id_ = {{UNK_TOKEN, UNK}, {MASK_TOKEN, MASK}};
    }

    // Retain words with frequency >= min_count, ids by descending frequency
    // then lexicographic order. The literal "<unk>" (PTB's own placeholder)
    // folds onto the reserved UNK id instead of getting a fresh one.
    static WordVocab build(const std::vector<Sentence>& sentences, int min_count) {
        if (min_count < 1) throw config_error("word vocab min_count must be >= 1");
        std::unordered_map<std::string, std::int64_t> freq;
        for (const auto& s : sentences)
            for (const auto& t : s.tokens) ++freq[t];
        std::vector<std::pair<std::string, std::int64_t>> kept;
        kept.reserve(freq.size());
        for (auto& [w, n] : freq) {
            if (w == UNK_TOKEN || w == MASK_TOKEN) continue;
            if (n >= min_count) kept.emplace_back(w, n);
        }
        std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        WordVocab v;
        for (auto& [w, n] : kept) {
            (void)n;
            v.to_id_.emplace(w, static_cast<int>(v.words_.size()));
            v.words_.push_back(w);
        }
        return v;
    }

    int id(const std::string& w) const {
        auto it = to_id_.find(w);
        return it == to_id_.end() ? UNK : it->second;
    }
    bool contains(const std::string& w) const { return to_id_.count(w) != 0; }
    const std::string& word(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
            throw contract_error("word id " + std::to_string(id) + " out of range");
        return words_[static_cast<std::size_t>(id)];
    }
    std::size_t size() const { return words_.size(); }

    void save(const std::string& path) const {
        std::string out = "telephonetic-vocab v1\n";
        for (std::size_t i = 0; i < words_.size(); ++i)
            out += words_[i] + "\t" + std::to_string(i) + "\n";
        write_text_file(path, out);
    }

    static WordVocab load(const std::string& path) {
        std::string text = read_text_file(path);
        auto lines = split_lines(text);
        if (lines.empty() || lines[0] != "telephonetic-vocab v1")
            throw format_error(path + ": missing 'telephonetic-vocab v1' header");
        WordVocab v;
        v.words_.clear();
        v.to_id_.clear();
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (lines[i].empty()) continue;
            auto parts = split(lines[i], '\t');
            if (parts.size() != 2)
                throw format_error(path + ":" + std::to_string(i + 1) + ": expected token<TAB>id");
            int id = static_cast<int>(parse_int(parts[1], path + ":" + std::to_string(i + 1)));
            if (id != static_cast<int>(v.words_.size()))
                throw format_error(path + ":" + std::to_string(i + 1) + ": ids must be contiguous from 0");
            if (!v.to_id_.emplace(parts[0], id).second)
                throw format_error(path + ":" + std::to_string(i + 1) + ": duplicate token " + parts[0]);
            v.words_.push_back(parts[0]);
        }
        if (v.words_.size() < 2 || v.words_[0] != UNK_TOKEN || v.words_[1] != MASK_TOKEN)
            throw format_error(path + ": reserved ids 0/1 must be " + std::string(UNK_TOKEN) + "/" +
                               MASK_TOKEN);
        return v;
    }

    bool operator==(const WordVocab& o) const { return words_ == o.words_; }

private:
    std::unordered_map<std::string, int> to_id_;
    std::vector<std::string> words_;
};

class CharVocab {
public:
    static constexpr int PAD = 0;
    static constexpr int UNKCHAR = 1;
    static constexpr int BOW = 2;
    static constexpr int EOW = 3;
    static constexpr int MASKCHAR = 4;
    static constexpr std::size_t N_RESERVED = 5;

    // Distinct code points of the training split, sorted ascending, ids from 5.
    static CharVocab build(const std::vector<Sentence>& sentences) {
        std::vector<char32_t> cps;
        for (const auto& s : sentences)
            for (const auto& t : s.tokens) {
                auto decoded = decode_or_throw(t);
                cps.insert(cps.end(), decoded.begin(), decoded.end());
            }
        std::sort(cps.begin(), cps.end());
        cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
        CharVocab v;
        for (char32_t cp : cps) {
            v.to_id_.emplace(cp, static_cast<int>(N_RESERVED + v.chars_.size()));
            v.chars_.push_back(cp);
        }
        return v;
    }

    int id(char32_t cp) const {
        auto it = to_id_.find(cp);
        return it == to_id_.end() ? UNKCHAR : it->second;
    }
    std::size_t size() const { return N_RESERVED + chars_.size(); }

    // begin, chars, end, padding; right truncation keeps the end marker.
    // The word-level MASK token encodes as begin, mask-char, end.
    std::vector<int> encode_chars(const std::string& word, std::size_t max_len) const {
        if (max_len < 3) throw config_error("encode_chars: max_len must be >= 3");
        std::vector<int> seq;
        seq.reserve(max_len);
        seq.push_back(BOW);
        if (word == WordVocab::MASK_TOKEN) {
            seq.push_back(MASKCHAR);
        } else {
            for (char32_t cp : decode_or_throw(word)) {
                if (seq.size() == max_len - 1) break;
                seq.push_back(id(cp));
            }
        }
        seq.push_back(EOW);
        seq.resize(max_len, PAD);
        return seq;
    }

    // Strips markers/padding and maps char ids back to text. Unknown chars
    // cannot be recovered; callers only use this on in-vocabulary words.
    std::string decode_chars(const std::vector<int>& seq) const {
        std::string out;
        for (int id : seq) {
            if (id < static_cast<int>(N_RESERVED)) continue;
            std::size_t idx = static_cast<std::size_t>(id) - N_RESERVED;
            if (idx >= chars_.size())
                throw contract_error("char id " + std::to_string(id) + " out of range");
            utf8_append(out, chars_[idx]);
        }
        return out;
    }

    void save(const std::string& path) const {
        std::string out = "telephonetic-vocab v1\n";
        const char* reserved[] = {"<pad>", "<unkc>", "<bow>", "<eow>", "<maskc>"};
        for (std::size_t i = 0; i < N_RESERVED; ++i)
            out += std::string(reserved[i]) + "\t" + std::to_string(i) + "\n";
        for (std::size_t i = 0; i < chars_.size(); ++i) {
            std::string ch;
            utf8_append(ch, chars_[i]);
            out += ch + "\t" + std::to_string(N_RESERVED + i) + "\n";
        }
        write_text_file(path, out);
    }

    static CharVocab load(const std::string& path) {
        std::string text = read_text_file(path);
        auto lines = split_lines(text);
        if (lines.empty() || lines[0] != "telephonetic-vocab v1")
            throw format_error(path + ": missing 'telephonetic-vocab v1' header");
        const char* reserved[] = {"<pad>", "<unkc>", "<bow>", "<eow>", "<maskc>"};
        CharVocab v;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (lines[i].empty()) continue;
            auto parts = split(lines[i], '\t');
            if (parts.size() != 2)
                throw format_error(path + ":" + std::to_string(i + 1) + ": expected char<TAB>id");
            int id = static_cast<int>(parse_int(parts[1], path + ":" + std::to_string(i + 1)));
            if (id != static_cast<int>(i - 1))
                throw format_error(path + ":" + std::to_string(i + 1) + ": ids must be contiguous from 0");
            if (id < static_cast<int>(N_RESERVED)) {
                if (parts[0] != reserved[id])
                    throw format_error(path + ":" + std::to_string(i + 1) + ": reserved id " +
                                       std::to_string(id) + " must be " + reserved[id]);
                continue;
            }
            auto cps = decode_or_throw(parts[0]);
            if (cps.size() != 1)
                throw format_error(path + ":" + std::to_string(i + 1) +
                                   ": entry must be a single character");
            v.to_id_.emplace(cps[0], id);
            v.chars_.push_back(cps[0]);
        }
        return v;
    }

    bool operator==(const CharVocab& o) const { return chars_ == o.chars_; }

private:
    static std::vector<char32_t> decode_or_throw(const std::string& s) {
        std::vector<char32_t> cps;
        std::size_t bad_at = 0;
        if (!utf8_decode(s, cps, &bad_at))
            throw format_error("invalid UTF-8 in token at byte " + std::to_string(bad_at));
        return cps;
    }

    std::unordered_map<char32_t, int> to_id_;
    std::vector<char32_t> chars_;
};

}  // namespace telephonetic
