#pragma once

// Phoneme inventory (ARPAbet-style, stress digits stripped), a phonetic
// feature system driving a confusion matrix, a pronunciation lexicon, and a
// deterministic grapheme-to-phoneme front end.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "telephonetic/error.hpp"
#include "telephonetic/util.hpp"

namespace telephonetic {

using PhonemeSeq = std::vector<int>;  // indices into the inventory

namespace detail {

// Consonants: place (bilabial..glottal), manner (stop..glide), voicing.
// Vowels: height (high..low), backness (front..back), tenseness, diphthong.
struct PhonemeFeatures {
    const char* symbol;
    bool vowel;
    int f1;  // place | height
    int f2;  // manner | backness
    int f3;  // voiced | tense
    int f4;  // unused | diphthong
};

inline const std::array<PhonemeFeatures, 39>& phoneme_table() {
    static const std::array<PhonemeFeatures, 39> table = {{
        {"AA", true, 2, 2, 1, 0},  {"AE", true, 2, 0, 0, 0},  {"AH", true, 1, 1, 0, 0},
        {"AO", true, 1, 2, 1, 0},  {"AW", true, 2, 2, 1, 1},  {"AY", true, 2, 0, 1, 1},
        {"B", false, 0, 0, 1, 0},  {"CH", false, 4, 1, 0, 0}, {"D", false, 3, 0, 1, 0},
        {"DH", false, 2, 2, 1, 0}, {"EH", true, 1, 0, 0, 0},  {"ER", true, 1, 1, 1, 0},
        {"EY", true, 1, 0, 1, 1},  {"F", false, 1, 2, 0, 0},  {"G", false, 6, 0, 1, 0},
        {"HH", false, 7, 2, 0, 0}, {"IH", true, 0, 0, 0, 0},  {"IY", true, 0, 0, 1, 0},
        {"JH", false, 4, 1, 1, 0}, {"K", false, 6, 0, 0, 0},  {"L", false, 3, 4, 1, 0},
        {"M", false, 0, 3, 1, 0},  {"N", false, 3, 3, 1, 0},  {"NG", false, 6, 3, 1, 0},
        {"OW", true, 1, 2, 1, 1},  {"OY", true, 1, 1, 1, 1},  {"P", false, 0, 0, 0, 0},
        {"R", false, 4, 4, 1, 0},  {"S", false, 3, 2, 0, 0},  {"SH", false, 4, 2, 0, 0},
        {"T", false, 3, 0, 0, 0},  {"TH", false, 2, 2, 0, 0}, {"UH", true, 0, 2, 0, 0},
        {"UW", true, 0, 2, 1, 0},  {"V", false, 1, 2, 1, 0},  {"W", false, 6, 5, 1, 0},
        {"Y", false, 5, 5, 1, 0},  {"Z", false, 3, 2, 1, 0},  {"ZH", false, 4, 2, 1, 0},
    }};
    return table;
}

}  // namespace detail

inline std::size_t phoneme_count() { return detail::phoneme_table().size(); }

inline std::string_view phoneme_symbol(int id) {
    if (id < 0 || static_cast<std::size_t>(id) >= phoneme_count())
        throw contract_error("phoneme id " + std::to_string(id) + " out of range");
    return detail::phoneme_table()[static_cast<std::size_t>(id)].symbol;
}

inline bool phoneme_is_vowel(int id) {
    phoneme_symbol(id);  // bounds check
    return detail::phoneme_table()[static_cast<std::size_t>(id)].vowel;
}

// Parses a symbol, stripping a trailing stress digit (AH0 -> AH).
inline int parse_phoneme(std::string_view symbol) {
    std::string s(symbol);
    while (!s.empty() && std::isdigit(static_cast<unsigned char>(s.back()))) s.pop_back();
    const auto& table = detail::phoneme_table();
    for (std::size_t i = 0; i < table.size(); ++i)
        if (s == table[i].symbol) return static_cast<int>(i);
    throw format_error("unknown phoneme symbol '" + std::string(symbol) + "'");
}

inline std::string phonemes_to_string(const PhonemeSeq& seq) {
    std::string out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i) out += " ";
        out += phoneme_symbol(seq[i]);
    }
    return out;
}

inline PhonemeSeq parse_phoneme_string(std::string_view text) {
    PhonemeSeq seq;
    for (const auto& tok : split_ws(text)) seq.push_back(parse_phoneme(tok));
    return seq;
}

// Articulatory distance: consonants weigh place/manner/voicing, vowels weigh
// height/backness/tenseness/diphthong; crossing the vowel-consonant divide
// costs a flat 6.
inline double phoneme_distance(int a, int b) {
    const auto& pa = detail::phoneme_table()[static_cast<std::size_t>(a)];
    const auto& pb = detail::phoneme_table()[static_cast<std::size_t>(b)];
    if (pa.vowel != pb.vowel) return 6.0;
    if (pa.vowel)
        return std::abs(pa.f1 - pb.f1) + std::abs(pa.f2 - pb.f2) + 0.5 * std::abs(pa.f3 - pb.f3) +
               0.5 * std::abs(pa.f4 - pb.f4);
    return 0.5 * std::abs(pa.f1 - pb.f1) + std::abs(pa.f2 - pb.f2) + 0.5 * std::abs(pa.f3 - pb.f3);
}

// Noisy-channel parameters. The substitution matrix is stored as a
// per-row off-diagonal *shape* (shares summing to 1); severity and the
// speaker multiplier scale how much mass leaves the diagonal, with the
// diagonal renormalized and total off-diagonal mass capped.
struct ConfusionModel {
    static constexpr double kMassCap = 0.95;

    std::size_t n_phonemes = 0;
    std::vector<double> shape;  // P×P, zero diagonal, rows sum to 1
    double base_sub_rate = 0.15;
    double p_ins = 0.02;
    double p_del = 0.03;
    double severity = 1.0;

    double shape_at(std::size_t i, std::size_t j) const { return shape[i * n_phonemes + j]; }

    static double scaled(double base, double scale) { return std::min(base * scale, kMassCap); }

    double effective_sub_rate(double scale) const { return scaled(base_sub_rate, scale); }
    // Insert/delete are plain per-event probabilities; scaling saturates at 1.
    double effective_p_ins(double scale) const { return std::min(p_ins * scale, 1.0); }
    double effective_p_del(double scale) const { return std::min(p_del * scale, 1.0); }

    // Full substitution distribution for phoneme i at a given scale.
    std::vector<double> effective_row(std::size_t i, double scale) const {
        double off = effective_sub_rate(scale);
        std::vector<double> row(n_phonemes);
        for (std::size_t j = 0; j < n_phonemes; ++j) row[j] = off * shape_at(i, j);
        row[i] = 1.0 - off;
        return row;
    }

    void validate() const {
        if (n_phonemes == 0 || shape.size() != n_phonemes * n_phonemes)
            throw config_error("confusion model shape matrix has wrong size");
        if (base_sub_rate < 0.0 || base_sub_rate >= 1.0)
            throw config_error("base substitution rate must lie in [0,1)");
        if (p_ins < 0.0 || p_ins > 1.0) throw config_error("insertion probability must lie in [0,1]");
        if (p_del < 0.0 || p_del > 1.0) throw config_error("deletion probability must lie in [0,1]");
        if (severity < 0.0) throw config_error("severity must be >= 0");
        for (std::size_t i = 0; i < n_phonemes; ++i) {
            if (shape_at(i, i) != 0.0)
                throw config_error("confusion shape row " + std::to_string(i) + " has nonzero diagonal");
            double sum = 0.0;
            for (std::size_t j = 0; j < n_phonemes; ++j) sum += shape_at(i, j);
            if (std::abs(sum - 1.0) > 1e-9)
                throw config_error("confusion shape row " + std::to_string(i) + " sums to " +
                                   fmt_double(sum));
        }
    }

    void save(const std::string& path) const {
        std::string out = "telephonetic-confusion v1\n";
        for (std::size_t i = 0; i < n_phonemes; ++i) {
            if (i) out += " ";
            out += phoneme_symbol(static_cast<int>(i));
        }
        out += "\n";
        out += fmt_double(base_sub_rate) + " " + fmt_double(p_ins) + " " + fmt_double(p_del) + " " +
               fmt_double(severity) + "\n";
        for (std::size_t i = 0; i < n_phonemes; ++i) {
            for (std::size_t j = 0; j < n_phonemes; ++j) {
                if (j) out += " ";
                out += fmt_double(shape_at(i, j));
            }
            out += "\n";
        }
        write_text_file(path, out);
    }

    static ConfusionModel load(const std::string& path) {
        std::string text = read_text_file(path);
        auto lines = split_lines(text);
        if (lines.size() < 3 || lines[0] != "telephonetic-confusion v1")
            throw format_error(path + ": missing 'telephonetic-confusion v1' header");
        auto symbols = split_ws(lines[1]);
        ConfusionModel m;
        m.n_phonemes = symbols.size();
        for (std::size_t i = 0; i < symbols.size(); ++i)
            if (parse_phoneme(symbols[i]) != static_cast<int>(i))
                throw format_error(path + ": inventory order mismatch at symbol " + symbols[i]);
        auto rates = split_ws(lines[2]);
        if (rates.size() != 4) throw format_error(path + ": expected 4 rate fields on line 3");
        m.base_sub_rate = parse_double(rates[0], path + ":3");
        m.p_ins = parse_double(rates[1], path + ":3");
        m.p_del = parse_double(rates[2], path + ":3");
        m.severity = parse_double(rates[3], path + ":3");
        if (lines.size() != 3 + m.n_phonemes)
            throw format_error(path + ": expected " + std::to_string(m.n_phonemes) + " matrix rows");
        m.shape.resize(m.n_phonemes * m.n_phonemes);
        for (std::size_t i = 0; i < m.n_phonemes; ++i) {
            auto vals = split_ws(lines[3 + i]);
            if (vals.size() != m.n_phonemes)
                throw format_error(path + ":" + std::to_string(4 + i) + ": expected " +
                                   std::to_string(m.n_phonemes) + " values");
            for (std::size_t j = 0; j < m.n_phonemes; ++j)
                m.shape[i * m.n_phonemes + j] = parse_double(vals[j], path + ":" + std::to_string(4 + i));
        }
        m.validate();
        return m;
    }
};

// Default channel: confusion shares proportional to exp(-articulatory
// distance), so bilabial stops confuse with each other far more often than
// with distant fricatives, and vowels drift to neighboring vowels.
inline ConfusionModel make_confusion_model(double base_sub_rate = 0.15, double p_ins = 0.02,
                                           double p_del = 0.03, double severity = 1.0) {
    ConfusionModel m;
    m.n_phonemes = phoneme_count();
    m.base_sub_rate = base_sub_rate;
    m.p_ins = p_ins;
    m.p_del = p_del;
    m.severity = severity;
    m.shape.assign(m.n_phonemes * m.n_phonemes, 0.0);
    for (std::size_t i = 0; i < m.n_phonemes; ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < m.n_phonemes; ++j) {
            if (j == i) continue;
            norm += std::exp(-phoneme_distance(static_cast<int>(i), static_cast<int>(j)));
        }
        for (std::size_t j = 0; j < m.n_phonemes; ++j) {
            if (j == i) continue;
            m.shape[i * m.n_phonemes + j] =
                std::exp(-phoneme_distance(static_cast<int>(i), static_cast<int>(j))) / norm;
        }
    }
    m.validate();
    return m;
}

// Word → pronunciations (+ unigram log-frequency). Dictionary rows are
// `WORD PH1 PH2 …`; `;;;` comments ignored; `WORD(2)` marks an alternate
// pronunciation; stress digits are stripped; words are lowercased.
class Lexicon {
public:
    void add_pronunciation(const std::string& word, PhonemeSeq pron) {
        if (word.empty()) throw contract_error("lexicon word must be non-empty");
        if (pron.empty()) throw contract_error("pronunciation for '" + word + "' must be non-empty");
        auto it = index_.find(word);
        if (it == index_.end()) {
            index_.emplace(word, words_.size());
            words_.push_back(word);
            prons_.emplace_back();
            log_freq_.push_back(0.0);
            it = index_.find(word);
        }
        prons_[it->second].push_back(std::move(pron));
    }

    void set_log_frequency(const std::string& word, double lf) {
        if (!std::isfinite(lf)) throw config_error("log-frequency for '" + word + "' must be finite");
        auto it = index_.find(word);
        if (it == index_.end()) throw contract_error("word not in lexicon: " + word);
        log_freq_[it->second] = lf;
    }

    bool contains(const std::string& word) const { return index_.count(word) != 0; }
    std::size_t size() const { return words_.size(); }
    const std::vector<std::string>& words() const { return words_; }

    const std::vector<PhonemeSeq>& pronunciations(const std::string& word) const {
        auto it = index_.find(word);
        if (it == index_.end()) throw contract_error("word not in lexicon: " + word);
        return prons_[it->second];
    }
    const std::vector<PhonemeSeq>& pronunciations_at(std::size_t i) const { return prons_[i]; }
    double log_frequency_at(std::size_t i) const { return log_freq_[i]; }
    double log_frequency(const std::string& word) const {
        auto it = index_.find(word);
        if (it == index_.end()) throw contract_error("word not in lexicon: " + word);
        return log_freq_[it->second];
    }

    static Lexicon load_dict(const std::string& path) {
        std::string text = read_text_file(path);
        Lexicon lex;
        std::size_t line_no = 0;
        for (std::string_view line : split_lines(text)) {
            ++line_no;
            if (line.rfind(";;;", 0) == 0) continue;
            auto fields = split_ws(line);
            if (fields.empty()) continue;
            if (fields.size() < 2)
                throw format_error(path + ":" + std::to_string(line_no) +
                                   ": dictionary row needs a word and phonemes");
            std::string word = fields[0];
            // Alternate pronunciations carry a (n) suffix on the word.
            auto paren = word.find('(');
            if (paren != std::string::npos && word.back() == ')') word = word.substr(0, paren);
            std::transform(word.begin(), word.end(), word.begin(),
                           [](unsigned char c) { return std::tolower(c); });
            PhonemeSeq pron;
            for (std::size_t i = 1; i < fields.size(); ++i) {
                try {
                    pron.push_back(parse_phoneme(fields[i]));
                } catch (const format_error& e) {
                    throw format_error(path + ":" + std::to_string(line_no) + ": " + e.what());
                }
            }
            lex.add_pronunciation(word, std::move(pron));
        }
        return lex;
    }

private:
    std::vector<std::string> words_;
    std::vector<std::vector<PhonemeSeq>> prons_;
    std::vector<double> log_freq_;
    std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

struct LtsRule {
    const char* graph;
    const char* phones;
};

// Ordered longest-match-first letter-to-sound rules for dictionary misses.
inline const std::vector<LtsRule>& lts_rules() {
    static const std::vector<LtsRule> rules = {
        {"igh", "AY"}, {"tch", "CH"}, {"ch", "CH"}, {"sh", "SH"},  {"th", "TH"}, {"ph", "F"},
        {"wh", "W"},   {"ck", "K"},   {"ng", "NG"}, {"qu", "K W"}, {"oo", "UW"}, {"ee", "IY"},
        {"ea", "IY"},  {"ai", "EY"},  {"ay", "EY"}, {"oa", "OW"},  {"ou", "AW"}, {"ow", "OW"},
        {"oi", "OY"},  {"oy", "OY"},  {"au", "AO"}, {"aw", "AO"},  {"ar", "AA R"}, {"er", "ER"},
        {"ir", "ER"},  {"or", "AO R"}, {"ur", "ER"}, {"a", "AH"},  {"b", "B"},   {"c", "K"},
        {"d", "D"},    {"e", "EH"},   {"f", "F"},   {"g", "G"},    {"h", "HH"},  {"i", "IH"},
        {"j", "JH"},   {"k", "K"},    {"l", "L"},   {"m", "M"},    {"n", "N"},   {"o", "AA"},
        {"p", "P"},    {"q", "K"},    {"r", "R"},   {"s", "S"},    {"t", "T"},   {"u", "AH"},
        {"v", "V"},    {"w", "W"},    {"x", "K S"}, {"y", "Y"},    {"z", "Z"},
    };
    return rules;
}

}  // namespace detail

// Deterministic letter-to-sound fallback: lowercase, drop a final silent 'e',
// collapse doubled consonants, then apply the rule table longest-match-first.
// Word-final 'y' vocalizes to IY. Non-alphabetic characters are skipped.
inline PhonemeSeq letter_to_sound(const std::string& word) {
    std::string w;
    for (char c : word)
        if (std::isalpha(static_cast<unsigned char>(c)))
            w += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (w.size() >= 3 && w.back() == 'e' && std::string("aeiou").find(w[w.size() - 2]) == std::string::npos)
        w.pop_back();
    PhonemeSeq out;
    std::size_t i = 0;
    while (i < w.size()) {
        if (i > 0 && w[i] == w[i - 1] && std::string("aeiou").find(w[i]) == std::string::npos) {
            ++i;  // doubled consonant
            continue;
        }
        if (w[i] == 'y' && i + 1 == w.size() && i > 0) {
            out.push_back(parse_phoneme("IY"));
            ++i;
            continue;
        }
        bool matched = false;
        for (const auto& rule : detail::lts_rules()) {
            std::string_view g(rule.graph);
            if (w.compare(i, g.size(), g) == 0) {
                for (int ph : parse_phoneme_string(rule.phones)) out.push_back(ph);
                i += g.size();
                matched = true;
                break;
            }
        }
        if (!matched) ++i;  // unmapped character (should not happen for a-z)
    }
    return out;
}

// Dictionary lookup (first pronunciation) with letter-to-sound fallback.
inline PhonemeSeq g2p(const std::string& word, const Lexicon& lexicon) {
    if (lexicon.contains(word)) return lexicon.pronunciations(word).front();
    return letter_to_sound(word);
}

}  // namespace telephonetic
