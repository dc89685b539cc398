#pragma once

// Static word-embedding lexicon, exact k-nearest-neighbor table construction,
// and neighbor-sampling word replacement. Embeddings are consumed from a text
// export; nothing here computes them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "telephonetic/corpus.hpp"
#include "telephonetic/error.hpp"
#include "telephonetic/grammar.hpp"
#include "telephonetic/parallel.hpp"
#include "telephonetic/rng.hpp"
#include "telephonetic/util.hpp"

namespace telephonetic {

struct EmbeddingTable {
    std::vector<std::string> words;
    std::vector<double> vectors;  // row-major N×d
    std::size_t d = 0;
    std::size_t duplicate_count = 0;  // rows overwritten by a later duplicate

    std::size_t size() const { return words.size(); }
    const double* row(std::size_t i) const { return vectors.data() + i * d; }

    std::size_t index_of(const std::string& w) const {
        auto it = index_.find(w);
        if (it == index_.end()) throw contract_error("word not in embedding table: " + w);
        return it->second;
    }
    bool contains(const std::string& w) const { return index_.count(w) != 0; }

    void finish_index() {
        index_.clear();
        for (std::size_t i = 0; i < words.size(); ++i) index_.emplace(words[i], i);
    }

private:
    std::unordered_map<std::string, std::size_t> index_;
};

// Text format: optional `N d` header, then `word v1 … vd` per line.
// Duplicate words keep their original row but take the last values seen.
inline EmbeddingTable load_embeddings(const std::string& path) {
    std::string text = read_text_file(path);
    auto lines = split_lines(text);
    EmbeddingTable table;
    std::unordered_map<std::string, std::size_t> seen;
    bool have_header = false;
    std::size_t header_n = 0, header_d = 0;

    std::size_t start = 0;
    if (!lines.empty()) {
        auto first = split_ws(lines[0]);
        if (first.size() == 2) {
            try {
                header_n = static_cast<std::size_t>(parse_int(first[0], "header"));
                header_d = static_cast<std::size_t>(parse_int(first[1], "header"));
                have_header = true;
                start = 1;
            } catch (const format_error&) {
                have_header = false;
            }
        }
    }

    for (std::size_t li = start; li < lines.size(); ++li) {
        const std::string ctx = path + ":" + std::to_string(li + 1);
        auto fields = split_ws(lines[li]);
        if (fields.empty()) continue;
        if (table.d == 0 && fields.size() < 2)
            throw format_error(ctx + ": embedding row needs a word and at least one value");
        if (table.d == 0) table.d = fields.size() - 1;
        if (fields.size() != table.d + 1)
            throw format_error(ctx + ": expected " + std::to_string(table.d + 1) + " fields, got " +
                               std::to_string(fields.size()));
        std::vector<double> vals(table.d);
        for (std::size_t j = 0; j < table.d; ++j) {
            vals[j] = parse_double(fields[j + 1], ctx);
            if (!std::isfinite(vals[j]))
                throw format_error(ctx + ": non-finite embedding value " + fields[j + 1]);
        }
        auto it = seen.find(fields[0]);
        if (it != seen.end()) {
            std::copy(vals.begin(), vals.end(),
                      table.vectors.begin() + static_cast<std::ptrdiff_t>(it->second * table.d));
            ++table.duplicate_count;
            continue;
        }
        seen.emplace(fields[0], table.words.size());
        table.words.push_back(fields[0]);
        table.vectors.insert(table.vectors.end(), vals.begin(), vals.end());
    }

    if (have_header) {
        if (table.size() != header_n)
            throw format_error(path + ": header promises " + std::to_string(header_n) + " rows, found " +
                               std::to_string(table.size()));
        if (table.d != header_d)
            throw format_error(path + ": header promises dimension " + std::to_string(header_d) +
                               ", found " + std::to_string(table.d));
    }
    table.finish_index();
    return table;
}

enum class Similarity { centered_dot, cosine };

inline Similarity similarity_from_string(const std::string& s) {
    if (s == "centered_dot") return Similarity::centered_dot;
    if (s == "cosine") return Similarity::cosine;
    throw config_error("unknown similarity '" + s + "' (expected centered_dot or cosine)");
}

struct KnnEntry {
    std::string word;
    double score = 0.0;
    bool operator==(const KnnEntry& o) const { return word == o.word && score == o.score; }
};

class KnnTable {
public:
    KnnTable() = default;
    explicit KnnTable(std::size_t k) : k_(k) {}

    std::size_t k() const { return k_; }
    std::size_t size() const { return words_.size(); }
    const std::vector<std::string>& words() const { return words_; }

    const std::vector<KnnEntry>* neighbors(const std::string& w) const {
        auto it = index_.find(w);
        return it == index_.end() ? nullptr : &lists_[it->second];
    }

    void add_row(std::string word, std::vector<KnnEntry> entries) {
        if (entries.size() != k_)
            throw contract_error("neighbor list for " + word + " has " + std::to_string(entries.size()) +
                                 " entries, expected " + std::to_string(k_));
        if (!index_.emplace(word, words_.size()).second)
            throw contract_error("duplicate neighbor row for " + word);
        words_.push_back(std::move(word));
        lists_.push_back(std::move(entries));
    }

    void save(const std::string& path) const {
        std::string out = "telephonetic-knn v1 k=" + std::to_string(k_) + "\n";
        for (std::size_t i = 0; i < words_.size(); ++i) {
            out += words_[i];
            for (const auto& e : lists_[i]) out += "\t" + e.word + ":" + fmt_double(e.score);
            out += "\n";
        }
        write_text_file(path, out);
    }

    static KnnTable load(const std::string& path) {
        std::string text = read_text_file(path);
        auto lines = split_lines(text);
        if (lines.empty() || lines[0].rfind("telephonetic-knn v1 k=", 0) != 0)
            throw format_error(path + ": missing 'telephonetic-knn v1 k=<k>' header");
        std::size_t k = static_cast<std::size_t>(
            parse_int(lines[0].substr(std::string_view("telephonetic-knn v1 k=").size()), path + " header"));
        KnnTable t(k);
        for (std::size_t li = 1; li < lines.size(); ++li) {
            if (lines[li].empty()) continue;
            const std::string ctx = path + ":" + std::to_string(li + 1);
            auto cols = split(lines[li], '\t');
            if (cols.size() != k + 1)
                throw format_error(ctx + ": expected word + " + std::to_string(k) + " neighbors");
            std::vector<KnnEntry> entries;
            entries.reserve(k);
            for (std::size_t j = 1; j < cols.size(); ++j) {
                auto colon = cols[j].rfind(':');
                if (colon == std::string::npos)
                    throw format_error(ctx + ": neighbor field '" + cols[j] + "' lacks ':score'");
                entries.push_back(
                    {cols[j].substr(0, colon), parse_double(cols[j].substr(colon + 1), ctx)});
            }
            t.add_row(cols[0], std::move(entries));
        }
        return t;
    }

    bool operator==(const KnnTable& o) const {
        return k_ == o.k_ && words_ == o.words_ && lists_ == o.lists_;
    }

private:
    std::size_t k_ = 0;
    std::vector<std::string> words_;
    std::vector<std::vector<KnnEntry>> lists_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct KnnBuildOptions {
    Similarity similarity = Similarity::centered_dot;
    int jobs = 1;
    std::string checkpoint_path;          // empty disables partial saves
    std::size_t checkpoint_every = 1000;  // rows between partial saves
};

namespace detail {

// Pairwise similarity without materializing centered vectors:
// (vi−m)·(vj−m) = vi·vj − m·vi − m·vj + m·m.
struct SimilarityContext {
    const EmbeddingTable& emb;
    Similarity kind;
    std::vector<double> mean_dot;  // m·vi per row (centered_dot)
    double mean_sq = 0.0;          // m·m
    std::vector<double> norm;      // |vi| per row (cosine)

    explicit SimilarityContext(const EmbeddingTable& e, Similarity s) : emb(e), kind(s) {
        std::size_t n = emb.size(), d = emb.d;
        if (kind == Similarity::centered_dot) {
            std::vector<double> mean(d, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double* r = emb.row(i);
                for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
            }
            for (double& v : mean) v /= static_cast<double>(n);
            mean_dot.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double* r = emb.row(i);
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) acc += mean[j] * r[j];
                mean_dot[i] = acc;
            }
            for (std::size_t j = 0; j < d; ++j) mean_sq += mean[j] * mean[j];
        } else {
            norm.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double* r = emb.row(i);
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) acc += r[j] * r[j];
                norm[i] = std::sqrt(acc);
            }
        }
    }

    double operator()(std::size_t i, std::size_t j) const {
        const double* a = emb.row(i);
        const double* b = emb.row(j);
        double dot = 0.0;
        for (std::size_t t = 0; t < emb.d; ++t) dot += a[t] * b[t];
        if (kind == Similarity::centered_dot) return dot - mean_dot[i] - mean_dot[j] + mean_sq;
        double denom = norm[i] * norm[j];
        return denom == 0.0 ? 0.0 : dot / denom;
    }
};

inline std::vector<KnnEntry> knn_row(const EmbeddingTable& emb, const SimilarityContext& sim,
                                     std::size_t i, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(emb.size() - 1);
    for (std::size_t j = 0; j < emb.size(); ++j) {
        if (j == i) continue;  // a word is never its own neighbor
        scored.emplace_back(sim(i, j), j);
    }
    auto better = [&](const std::pair<double, std::size_t>& a, const std::pair<double, std::size_t>& b) {
        if (a.first != b.first) return a.first > b.first;
        return emb.words[a.second] < emb.words[b.second];
    };
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                      better);
    std::vector<KnnEntry> out;
    out.reserve(k);
    for (std::size_t t = 0; t < k; ++t) out.push_back({emb.words[scored[t].second], scored[t].first});
    return out;
}

}  // namespace detail

// Exact O(N²) construction. With a checkpoint path, partial output is saved
// every checkpoint_every rows and a matching partial file is resumed from
// instead of recomputed.
inline KnnTable build_knn_table(const EmbeddingTable& emb, std::size_t k,
                                const KnnBuildOptions& opts = {}) {
    if (k < 1) throw config_error("neighbor count k must be >= 1");
    if (k >= emb.size())
        throw config_error("neighbor count k=" + std::to_string(k) + " must be < lexicon size " +
                           std::to_string(emb.size()));

    KnnTable table(k);
    std::size_t done = 0;
    if (!opts.checkpoint_path.empty() && std::filesystem::exists(opts.checkpoint_path)) {
        KnnTable partial = KnnTable::load(opts.checkpoint_path);
        if (partial.k() != k)
            throw format_error(opts.checkpoint_path + ": checkpoint built with k=" +
                               std::to_string(partial.k()) + ", requested k=" + std::to_string(k));
        if (partial.size() > emb.size())
            throw format_error(opts.checkpoint_path + ": checkpoint has more rows than the lexicon");
        for (std::size_t i = 0; i < partial.size(); ++i) {
            if (partial.words()[i] != emb.words[i])
                throw format_error(opts.checkpoint_path + ": checkpoint row " + std::to_string(i + 1) +
                                   " is '" + partial.words()[i] + "' but the lexicon has '" +
                                   emb.words[i] + "'; delete the stale checkpoint");
            table.add_row(partial.words()[i], std::vector<KnnEntry>(*partial.neighbors(partial.words()[i])));
        }
        done = partial.size();
    }

    detail::SimilarityContext sim(emb, opts.similarity);
    std::size_t remaining = emb.size() - done;
    std::size_t since_checkpoint = 0;
    parallel_chunks<std::vector<std::vector<KnnEntry>>>(
        remaining, 64, opts.jobs,
        [&](std::size_t begin, std::size_t end) {
            std::vector<std::vector<KnnEntry>> rows;
            rows.reserve(end - begin);
            for (std::size_t r = begin; r < end; ++r)
                rows.push_back(detail::knn_row(emb, sim, done + r, k));
            return rows;
        },
        [&](std::size_t /*chunk_index*/, std::vector<std::vector<KnnEntry>>&& rows) {
            for (auto& r : rows) {
                std::size_t next_row = table.size();
                table.add_row(emb.words[next_row], std::move(r));
            }
            since_checkpoint += rows.size();
            if (!opts.checkpoint_path.empty() && since_checkpoint >= opts.checkpoint_every &&
                table.size() < emb.size()) {
                table.save(opts.checkpoint_path);
                since_checkpoint = 0;
            }
        });

    if (!opts.checkpoint_path.empty()) {
        // The finished table replaces any partial file.
        table.save(opts.checkpoint_path);
    }
    return table;
}

// Uniform draw among a word's k neighbors; out-of-lexicon words pass through.
inline std::string replace_word(const std::string& word, const KnnTable& table, Rng& rng) {
    const auto* list = table.neighbors(word);
    if (list == nullptr || list->empty()) return word;
    return (*list)[static_cast<std::size_t>(rng.uniform_int(list->size()))].word;
}

// Token-wise neighbor replacement over disjoint spans; sentence length is
// preserved. Spans are processed left to right, tokens within a span left to
// right, so a seeded generator reproduces the same output.
inline Sentence augment_spans(const Sentence& sentence, const std::vector<TargetSpan>& spans,
                              const KnnTable& table, Rng& rng) {
    std::vector<TargetSpan> sorted = spans;
    std::sort(sorted.begin(), sorted.end(), [](const TargetSpan& a, const TargetSpan& b) {
        return a.start < b.start;
    });
    std::size_t last_end = 0;
    for (const auto& s : sorted) {
        if (s.start < 1 || s.end < s.start || s.end > sentence.tokens.size())
            throw contract_error("span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                                 "] out of bounds for a " + std::to_string(sentence.tokens.size()) +
                                 "-token sentence");
        if (last_end >= s.start)
            throw contract_error("overlapping spans at token " + std::to_string(s.start));
        last_end = s.end;
    }
    Sentence out = sentence;
    for (const auto& s : sorted)
        for (std::size_t pos = s.start; pos <= s.end; ++pos)
            out.tokens[pos - 1] = replace_word(out.tokens[pos - 1], table, rng);
    return out;
}

}  // namespace telephonetic
