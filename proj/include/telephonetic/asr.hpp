#pragma once

// Simulated TTS→STT round trip at the phoneme level: grapheme-to-phoneme,
// noisy-channel corruption, and lexicon-constrained segmentation decoding.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "telephonetic/corpus.hpp"
#include "telephonetic/error.hpp"
#include "telephonetic/grammar.hpp"
#include "telephonetic/phonetics.hpp"
#include "telephonetic/rng.hpp"

namespace telephonetic {

struct SpeakerProfile {
    std::string name;
    std::uint64_t seed_offset = 0;
    double severity_multiplier = 1.0;
    // Optional per-class bias: extra scaling applied when corrupting vowels.
    double vowel_bias = 1.0;

    void validate() const {
        if (severity_multiplier <= 0.0)
            throw config_error("speaker '" + name + "': severity multiplier must be > 0");
        if (vowel_bias <= 0.0) throw config_error("speaker '" + name + "': vowel bias must be > 0");
    }
};

// Seven stock voices with mildly diverse channel behavior (five male, two
// female by the usual reading of these corpus codes).
inline const std::vector<SpeakerProfile>& default_speakers() {
    static const std::vector<SpeakerProfile> speakers = {
        {"awb", 1, 1.15, 1.10}, {"bdl", 2, 0.90, 1.00}, {"clb", 3, 0.80, 0.95},
        {"jmk", 4, 1.00, 1.00}, {"ksp", 5, 1.25, 1.15}, {"rms", 6, 1.05, 0.90},
        {"slt", 7, 0.85, 1.05},
    };
    return speakers;
}

// One pass of the noisy channel. Per phoneme: delete with the scaled deletion
// probability, otherwise sample the phoneme's substitution row; per gap
// (including both ends), insert an inventory-uniform phoneme with the scaled
// insertion probability. severity × speaker multiplier (× vowel bias for
// vowel rows) sets the scale.
inline PhonemeSeq corrupt(const PhonemeSeq& p, const ConfusionModel& model,
                          const SpeakerProfile& speaker, Rng& rng) {
    speaker.validate();
    double scale = model.severity * speaker.severity_multiplier;
    PhonemeSeq out;
    out.reserve(p.size() + 2);
    auto maybe_insert = [&] {
        if (rng.bernoulli(model.effective_p_ins(scale)))
            out.push_back(static_cast<int>(rng.uniform_int(phoneme_count())));
    };
    for (int ph : p) {
        maybe_insert();
        double row_scale = scale * (phoneme_is_vowel(ph) ? speaker.vowel_bias : 1.0);
        if (rng.bernoulli(model.effective_p_del(row_scale))) continue;
        auto row = model.effective_row(static_cast<std::size_t>(ph), row_scale);
        out.push_back(static_cast<int>(rng.categorical(row)));
    }
    maybe_insert();
    return out;
}

// Exact segmentation decoder. Minimizes
//   Σ_segments [ edit(segment, best pronunciation of wordᵢ) − λ·logfreq(wordᵢ) ]
// over all splits of p into non-empty segments, each mapped to one lexicon
// word. Unit edit costs. Ties break by fewer words, then lexicographically
// on the word sequence. Runs the per-(start, pronunciation) edit rows
// incrementally, so the full sweep is O(n² · Σ|pron|).
inline std::vector<std::string> decode(const PhonemeSeq& p, const Lexicon& lexicon, double lambda) {
    if (lambda < 0.0) throw config_error("decode: lambda must be >= 0");
    if (p.empty()) return {};
    if (lexicon.size() == 0) throw config_error("decode: empty lexicon");

    struct State {
        double cost = std::numeric_limits<double>::infinity();
        std::vector<std::string> words;
        bool reachable = false;
    };
    const std::size_t n = p.size();
    std::vector<State> best(n + 1);
    best[0].cost = 0.0;
    best[0].reachable = true;

    auto improves = [](double cost, const std::vector<std::string>& words, const State& cur) {
        if (!cur.reachable) return true;
        if (cost != cur.cost) return cost < cur.cost;
        if (words.size() != cur.words.size()) return words.size() < cur.words.size();
        return words < cur.words;
    };

    for (std::size_t j = 0; j < n; ++j) {
        if (!best[j].reachable) continue;
        for (std::size_t wi = 0; wi < lexicon.size(); ++wi) {
            const std::string& word = lexicon.words()[wi];
            double word_term = -lambda * lexicon.log_frequency_at(wi);
            for (const auto& pron : lexicon.pronunciations_at(wi)) {
                const std::size_t m = pron.size();
                // row[t] = edit(p[j..i), pron[0..t)), advanced one i at a time.
                std::vector<std::size_t> row(m + 1), next(m + 1);
                for (std::size_t t = 0; t <= m; ++t) row[t] = t;
                for (std::size_t i = j + 1; i <= n; ++i) {
                    next[0] = i - j;
                    for (std::size_t t = 1; t <= m; ++t) {
                        std::size_t sub = row[t - 1] + (p[i - 1] == pron[t - 1] ? 0 : 1);
                        std::size_t del = row[t] + 1;   // drop p[i-1]
                        std::size_t ins = next[t - 1] + 1;  // emit pron[t-1] unmatched
                        next[t] = std::min({sub, del, ins});
                    }
                    std::swap(row, next);
                    double cand = best[j].cost + static_cast<double>(row[m]) + word_term;
                    if (cand <= best[i].cost + 1e-12 || !best[i].reachable) {
                        std::vector<std::string> words = best[j].words;
                        words.push_back(word);
                        if (improves(cand, words, best[i])) {
                            best[i].cost = cand;
                            best[i].words = std::move(words);
                            best[i].reachable = true;
                        }
                    }
                }
            }
        }
    }
    return best[n].words;
}

// Levenshtein distance over token sequences.
inline std::size_t token_edit_distance(const std::vector<std::string>& a,
                                       const std::vector<std::string>& b) {
    std::vector<std::size_t> row(b.size() + 1), next(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        next[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            next[j] = std::min({row[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1), row[j] + 1, next[j - 1] + 1});
        std::swap(row, next);
    }
    return row[b.size()];
}

// Corpus-level word error rate: summed edit distance over summed reference
// length (the usual micro average).
struct WerCounts {
    std::size_t edits = 0;
    std::size_t ref_tokens = 0;

    void add(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
        edits += token_edit_distance(ref, hyp);
        ref_tokens += ref.size();
    }
    double rate() const {
        return ref_tokens == 0 ? 0.0 : static_cast<double>(edits) / static_cast<double>(ref_tokens);
    }
};

inline double word_error_rate(const std::vector<std::string>& ref,
                              const std::vector<std::string>& hyp) {
    WerCounts c;
    c.add(ref, hyp);
    return c.rate();
}

struct AsrChannel {
    ConfusionModel model;
    const Lexicon* lexicon = nullptr;
    double lambda = 0.5;
    std::vector<SpeakerProfile> speakers = default_speakers();

    void validate() const {
        model.validate();
        if (lexicon == nullptr) throw config_error("ASR channel needs a lexicon");
        if (speakers.empty()) throw config_error("ASR channel needs at least one speaker");
        for (const auto& s : speakers) s.validate();
    }
};

// Sends each span's text through g2p → corrupt → decode and splices the
// decoded words back in (span length may change). The first draw picks the
// speaker for the sentence. At zero severity the channel is skipped outright:
// it is the identity by definition, which spares in-lexicon homophones from
// frequency-biased re-spelling.
inline Sentence asr_roundtrip(const Sentence& sentence, const std::vector<TargetSpan>& spans,
                              const AsrChannel& channel, Rng& rng) {
    if (channel.lexicon == nullptr) throw config_error("ASR channel needs a lexicon");

    std::vector<TargetSpan> sorted = spans;
    std::sort(sorted.begin(), sorted.end(),
              [](const TargetSpan& a, const TargetSpan& b) { return a.start < b.start; });
    std::size_t last_end = 0;
    for (const auto& s : sorted) {
        if (s.start < 1 || s.end < s.start || s.end > sentence.tokens.size())
            throw contract_error("span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                                 "] out of bounds for a " + std::to_string(sentence.tokens.size()) +
                                 "-token sentence");
        if (last_end >= s.start) throw contract_error("overlapping spans at token " + std::to_string(s.start));
        last_end = s.end;
    }

    if (channel.model.severity == 0.0) return sentence;

    const auto& speaker =
        channel.speakers[static_cast<std::size_t>(rng.uniform_int(channel.speakers.size()))];

    Sentence out;
    out.id = sentence.id;
    std::size_t pos = 1;
    for (const auto& s : sorted) {
        for (; pos < s.start; ++pos) out.tokens.push_back(sentence.tokens[pos - 1]);
        PhonemeSeq phonemes;
        for (std::size_t t = s.start; t <= s.end; ++t) {
            auto pr = g2p(sentence.tokens[t - 1], *channel.lexicon);
            phonemes.insert(phonemes.end(), pr.begin(), pr.end());
        }
        auto heard = corrupt(phonemes, channel.model, speaker, rng);
        auto words = decode(heard, *channel.lexicon, channel.lambda);
        out.tokens.insert(out.tokens.end(), words.begin(), words.end());
        pos = s.end + 1;
    }
    for (; pos <= sentence.tokens.size(); ++pos) out.tokens.push_back(sentence.tokens[pos - 1]);
    return out;
}

}  // namespace telephonetic
