#pragma once

// Robustness analysis over noise conditions: builds corrupted corpora that
// share span sampling so conditions differ only in applied noise, evaluates a
// grid of pseudo-perplexities (checkpoint x test corpus), and measures mean
// euclidean distance between clean and corrupted sentence embeddings, both in
// the full embedding space and in a 2-D PCA projection. Includes a small SVG
// emitter for scatter and bar figures.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "telephonetic/asr.hpp"
#include "telephonetic/char_lm.hpp"
#include "telephonetic/corpus.hpp"
#include "telephonetic/embedding.hpp"
#include "telephonetic/engine.hpp"
#include "telephonetic/error.hpp"
#include "telephonetic/grammar.hpp"
#include "telephonetic/parallel.hpp"
#include "telephonetic/rng.hpp"
#include "telephonetic/util.hpp"

namespace telephonetic {

// --- noise conditions ---------------------------------------------------------

// A named combination of the two noise sources. "baseline" applies neither.
struct Condition {
    std::string name;
    bool apply_semantic = false;
    bool apply_asr = false;

    bool operator==(const Condition& o) const = default;
};

// Canonical condition order used by reports (baseline row first).
inline const std::vector<std::string>& condition_names() {
    static const std::vector<std::string> names = {"baseline", "asr", "semantic", "asr+semantic"};
    return names;
}

inline Condition make_condition(const std::string& name) {
    if (name == "baseline") return {name, false, false};
    if (name == "asr") return {name, false, true};
    if (name == "semantic") return {name, true, false};
    if (name == "asr+semantic") return {name, true, true};
    throw config_error("unknown condition '" + name +
                       "' (expected baseline, asr, semantic, or asr+semantic)");
}

// Everything the noise sources need. Pointers may stay null when no requested
// condition uses them.
struct NoiseResources {
    const std::vector<DepGraph>* parses = nullptr;  // aligned with the corpus, one per sentence
    const KnnTable* knn = nullptr;                  // semantic replacement source
    const AsrChannel* asr = nullptr;                // phonetic round-trip channel
    SamplingPolicy policy;
};

struct ConditionCorpus {
    Condition condition;
    std::vector<Sentence> sentences;
};

// Applies each condition's noise to the base corpus. Spans are sampled once
// per sentence from a stream that depends only on (seed, sentence id), so all
// conditions corrupt the same positions; semantic replacement runs before the
// phonetic round trip, which may change sentence length.
// Per-sentence corruption targets, sampled once and shared by every noisy
// condition so a given sentence is hit in the same places under all of them.
// Each sentence's stream depends only on (seed, sentence id), never on which
// conditions were requested.
inline std::vector<std::vector<TargetSpan>> sample_condition_spans(
    const std::vector<Sentence>& corpus, const std::vector<DepGraph>& parses,
    const SamplingPolicy& policy, std::uint64_t seed) {
    policy.validate();
    if (parses.size() != corpus.size())
        throw contract_error("parses cover " + std::to_string(parses.size()) +
                             " sentences but the corpus has " + std::to_string(corpus.size()));
    std::vector<std::vector<TargetSpan>> out(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (parses[i].nodes.size() != corpus[i].tokens.size())
            throw contract_error("sentence " + std::to_string(corpus[i].id) + ": parse has " +
                                 std::to_string(parses[i].nodes.size()) +
                                 " nodes but the sentence has " +
                                 std::to_string(corpus[i].tokens.size()) + " tokens");
        Rng span_rng = Rng::derived(seed, "noise-spans", {corpus[i].id});
        out[i] = sample_targets(parses[i], policy, span_rng);
    }
    return out;
}

inline std::vector<ConditionCorpus> build_condition_corpora(const std::vector<Sentence>& corpus,
                                                            const std::vector<Condition>& conditions,
                                                            const NoiseResources& res,
                                                            std::uint64_t seed) {
    std::set<std::string> seen;
    bool needs_spans = false;
    for (const auto& c : conditions) {
        if (!seen.insert(c.name).second)
            throw config_error("condition '" + c.name + "' requested twice");
        if (c.apply_semantic && res.knn == nullptr)
            throw config_error("condition '" + c.name + "' needs a nearest-neighbor table");
        if (c.apply_asr && res.asr == nullptr)
            throw config_error("condition '" + c.name + "' needs an ASR channel");
        if ((c.apply_semantic || c.apply_asr) && res.parses == nullptr)
            throw config_error("condition '" + c.name + "' needs dependency parses");
        needs_spans = needs_spans || c.apply_semantic || c.apply_asr;
    }
    std::vector<std::vector<TargetSpan>> spans;
    if (needs_spans) spans = sample_condition_spans(corpus, *res.parses, res.policy, seed);

    std::vector<ConditionCorpus> out;
    out.reserve(conditions.size());
    for (const auto& c : conditions) out.push_back({c, {}});

    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Sentence& base = corpus[i];
        for (auto& cc : out) {
            Sentence s = base;
            if (cc.condition.apply_semantic) {
                Rng sem_rng = Rng::derived(seed, "semantic-noise", {base.id});
                s = augment_spans(s, spans[i], *res.knn, sem_rng);
            }
            if (cc.condition.apply_asr) {
                Rng asr_rng = Rng::derived(seed, "asr-noise", {base.id});
                s = asr_roundtrip(s, spans[i], *res.asr, asr_rng);
            }
            cc.sentences.push_back(std::move(s));
        }
    }
    return out;
}

// Replaces each sampled span's text with an external engine's transcript. The
// whole corpus goes through one engine invocation: spans are serialized one
// per line (sentences in order, spans left to right within a sentence), and
// each transcript line is spliced back over its span, so span lengths may
// change. An empty transcript line deletes the span.
inline std::vector<Sentence> engine_roundtrip_corpus(
    const std::vector<Sentence>& corpus, const std::vector<std::vector<TargetSpan>>& spans,
    const std::string& command, int timeout_ms = 120000) {
    if (spans.size() != corpus.size())
        throw contract_error("span lists cover " + std::to_string(spans.size()) +
                             " sentences but the corpus has " + std::to_string(corpus.size()));

    // Validate everything and build the batch before the engine ever starts.
    std::vector<std::vector<TargetSpan>> sorted(corpus.size());
    std::vector<std::string> batch;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Sentence& sent = corpus[i];
        sorted[i] = spans[i];
        std::sort(sorted[i].begin(), sorted[i].end(),
                  [](const TargetSpan& a, const TargetSpan& b) { return a.start < b.start; });
        std::size_t last_end = 0;
        for (const auto& s : sorted[i]) {
            if (s.start < 1 || s.end < s.start || s.end > sent.tokens.size())
                throw contract_error("span [" + std::to_string(s.start) + "," +
                                     std::to_string(s.end) + "] out of bounds for a " +
                                     std::to_string(sent.tokens.size()) + "-token sentence");
            if (last_end >= s.start)
                throw contract_error("overlapping spans at token " + std::to_string(s.start));
            last_end = s.end;
            std::string line;
            for (std::size_t t = s.start; t <= s.end; ++t) {
                if (t > s.start) line += ' ';
                line += sent.tokens[t - 1];
            }
            batch.push_back(std::move(line));
        }
    }

    std::vector<std::string> transcripts = external_roundtrip(batch, command, timeout_ms);

    std::vector<Sentence> out;
    out.reserve(corpus.size());
    std::size_t next = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Sentence& sent = corpus[i];
        Sentence rebuilt;
        rebuilt.id = sent.id;
        std::size_t pos = 1;
        for (const auto& s : sorted[i]) {
            for (; pos < s.start; ++pos) rebuilt.tokens.push_back(sent.tokens[pos - 1]);
            for (auto& word : split_ws(transcripts[next++]))
                rebuilt.tokens.push_back(std::move(word));
            pos = s.end + 1;
        }
        for (; pos <= sent.tokens.size(); ++pos) rebuilt.tokens.push_back(sent.tokens[pos - 1]);
        out.push_back(std::move(rebuilt));
    }
    return out;
}

// --- perplexity grid ------------------------------------------------------------

struct PplCell {
    bool present = false;
    double valid_ppl = 0.0;
    double test_ppl = 0.0;
};

struct PplGrid {
    std::vector<std::string> finetune_conditions;  // row labels, report order
    std::vector<std::string> test_conditions;      // column labels, report order
    std::vector<std::vector<PplCell>> cells;       // [row][column]
};

// One grid row: the condition a checkpoint was fine-tuned on, and where the
// checkpoint lives. A missing file yields an absent row instead of an error.
struct GridRow {
    std::string name;
    std::string checkpoint_path;
};

// One grid column: the condition the valid/test corpora were corrupted with.
struct GridColumn {
    std::string name;
    const std::vector<Sentence>* valid = nullptr;
    const std::vector<Sentence>* test = nullptr;
};

inline PplGrid run_grid(const std::vector<GridRow>& rows, const std::vector<GridColumn>& columns,
                        const WordVocab& words, const CharVocab& chars, std::size_t jobs = 1) {
    for (const auto& col : columns)
        if (col.valid == nullptr || col.test == nullptr)
            throw config_error("grid column '" + col.name + "' needs both valid and test corpora");

    PplGrid grid;
    for (const auto& r : rows) grid.finetune_conditions.push_back(r.name);
    for (const auto& c : columns) grid.test_conditions.push_back(c.name);
    grid.cells.assign(rows.size(), std::vector<PplCell>(columns.size()));

    for (std::size_t r = 0; r < rows.size(); ++r) {
        ModelParams params;
        try {
            params = load_checkpoint(rows[r].checkpoint_path);
        } catch (const io_error&) {
            continue;  // absent checkpoint: leave the whole row absent
        }
        if (params.config.n_words != words.size() || params.config.n_chars != chars.size())
            throw config_error("checkpoint " + rows[r].checkpoint_path + " was trained with " +
                               std::to_string(params.config.n_words) + " words / " +
                               std::to_string(params.config.n_chars) +
                               " chars but the current vocabularies have " +
                               std::to_string(words.size()) + " / " + std::to_string(chars.size()));
        for (std::size_t c = 0; c < columns.size(); ++c) {
            PplCell& cell = grid.cells[r][c];
            cell.valid_ppl = pseudo_perplexity(params, *columns[c].valid, words, chars, jobs);
            cell.test_ppl = pseudo_perplexity(params, *columns[c].test, words, chars, jobs);
            cell.present = true;
        }
    }
    return grid;
}

namespace detail {

inline std::string fmt_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

}  // namespace detail

// Tab-separated table: one row per fine-tune condition, one column per test
// condition, each cell "valid / test" pseudo-perplexity ("-" when the row's
// checkpoint was absent). Config hashes go into a leading comment line.
inline std::string format_grid_report(const PplGrid& grid,
                                      const std::vector<std::string>& config_hashes = {}) {
    for (const auto& row : grid.cells)
        for (const auto& cell : row)
            if (cell.present && (cell.valid_ppl < 1.0 || cell.test_ppl < 1.0))
                throw contract_error("perplexity below 1 in grid report");

    std::string out;
    if (!config_hashes.empty()) {
        out += "# config-hash";
        for (const auto& h : config_hashes) out += "\t" + h;
        out += "\n";
    }
    out += "fine-tuned on";
    for (const auto& c : grid.test_conditions) out += "\t" + c;
    out += "\n";
    for (std::size_t r = 0; r < grid.finetune_conditions.size(); ++r) {
        out += grid.finetune_conditions[r];
        for (std::size_t c = 0; c < grid.test_conditions.size(); ++c) {
            const PplCell& cell = grid.cells[r][c];
            out += "\t";
            out += cell.present ? detail::fmt_fixed(cell.valid_ppl, 4) + " / " +
                                      detail::fmt_fixed(cell.test_ppl, 4)
                                : "-";
        }
        out += "\n";
    }
    return out;
}

// --- principal component projection ---------------------------------------------

// Mean-centered projection onto the top n_components principal axes. Axes are
// found by power iteration with deflation (tolerance 1e-10 on the iterate,
// at most 10^4 iterations per axis); each axis is normalized with its first
// non-negligible loading positive. Axes whose variance is negligible relative
// to the leading one project to exactly zero, so rank-deficient clouds give
// zero trailing components and identical points give an all-zero projection.
inline std::vector<std::vector<double>> pca_project(const std::vector<std::vector<double>>& points,
                                                    std::size_t n_components = 2) {
    constexpr double kTol = 1e-10;
    constexpr std::size_t kMaxIters = 10000;
    constexpr double kRankEps = 1e-9;  // relative variance below this counts as rank-deficient

    const std::size_t n = points.size();
    if (n < 2) throw contract_error("PCA needs at least 2 points, got " + std::to_string(n));
    const std::size_t d = points[0].size();
    if (d == 0) throw contract_error("PCA points must have dimension >= 1");
    for (const auto& p : points)
        if (p.size() != d)
            throw contract_error("PCA points mix dimensions " + std::to_string(d) + " and " +
                                 std::to_string(p.size()));

    std::vector<double> mean(d, 0.0);
    for (const auto& p : points)
        for (std::size_t j = 0; j < d; ++j) mean[j] += p[j];
    for (double& v : mean) v /= static_cast<double>(n);

    std::vector<std::vector<double>> centered(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) centered[i][j] = points[i][j] - mean[j];

    // Covariance-vector product without materializing the d x d matrix:
    // C v = X^T (X v) / (n - 1).
    auto cov_times = [&](const std::vector<double>& v) {
        std::vector<double> xv(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) xv[i] += centered[i][j] * v[j];
        std::vector<double> out(d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) out[j] += centered[i][j] * xv[i];
        for (double& x : out) x /= static_cast<double>(n - 1);
        return out;
    };
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
        return s;
    };
    auto norm = [&](const std::vector<double>& a) { return std::sqrt(dot(a, a)); };

    std::vector<std::vector<double>> axes;
    std::vector<double> variances;
    // Fixed-seed start vectors keep the whole routine a pure function of its
    // input while avoiding a start that is orthogonal to the leading axis.
    Rng start_rng(0x70ca0001u);

    for (std::size_t comp = 0; comp < n_components; ++comp) {
        std::vector<double> v(d);
        for (double& x : v) x = start_rng.uniform(-1.0, 1.0);
        double vn = norm(v);
        for (double& x : v) x /= vn;

        for (std::size_t iter = 0; iter < kMaxIters; ++iter) {
            std::vector<double> w = cov_times(v);
            // Deflate and re-orthogonalize against the axes already found, so
            // each new axis converges inside their orthogonal complement.
            for (std::size_t a = 0; a < axes.size(); ++a) {
                double proj = dot(axes[a], w);
                for (std::size_t j = 0; j < d; ++j) w[j] -= proj * axes[a][j];
            }
            double wn = norm(w);
            if (wn == 0.0 || !std::isfinite(wn)) {
                v.assign(d, 0.0);
                break;
            }
            for (double& x : w) x /= wn;
            double diff_minus = 0.0, diff_plus = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                diff_minus += (w[j] - v[j]) * (w[j] - v[j]);
                diff_plus += (w[j] + v[j]) * (w[j] + v[j]);
            }
            v = std::move(w);
            if (std::sqrt(std::min(diff_minus, diff_plus)) < kTol) break;
        }

        double variance = norm(v) == 0.0 ? 0.0 : dot(v, cov_times(v));
        bool negligible = variances.empty() ? variance <= 0.0
                                            : variance <= variances.front() * kRankEps;
        if (negligible) {
            v.assign(d, 0.0);
            variance = 0.0;
        } else {
            for (std::size_t j = 0; j < d; ++j) {
                if (std::abs(v[j]) <= 1e-12) continue;
                if (v[j] < 0.0)
                    for (double& x : v) x = -x;
                break;
            }
        }
        axes.push_back(std::move(v));
        variances.push_back(variance);
    }

    std::vector<std::vector<double>> projected(n, std::vector<double>(n_components, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < n_components; ++c) projected[i][c] = dot(centered[i], axes[c]);
    return projected;
}

// --- embedding distances ---------------------------------------------------------

inline double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw contract_error("distance between vectors of dimension " + std::to_string(a.size()) +
                             " and " + std::to_string(b.size()));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc);
}

// One report row. Two placements (full embedding space vs 2-D projection) and
// two aggregations (mean over aligned pairs vs distance between centroids) are
// all reported because either reading of "mean distance" is defensible.
struct DistanceRow {
    std::string condition;
    std::size_t pairs = 0;
    double mean_full = 0.0;
    double mean_projected = 0.0;
    double centroid_full = 0.0;
    double centroid_projected = 0.0;
};

struct DistanceReport {
    std::vector<DistanceRow> rows;
};

namespace detail {

// Distance statistics over two aligned embedding lists. The 2-D projection is
// fit on the union (clean points first) so both sides share one basis.
inline DistanceRow distance_stats(const std::vector<std::vector<double>>& clean,
                                  const std::vector<std::vector<double>>& corrupt) {
    if (clean.size() != corrupt.size())
        throw contract_error("clean corpus embeds " + std::to_string(clean.size()) +
                             " sentences but corrupted embeds " + std::to_string(corrupt.size()));
    if (clean.empty()) throw contract_error("distance report needs at least one aligned pair");
    const std::size_t n = clean.size();

    std::vector<std::vector<double>> all;
    all.reserve(2 * n);
    for (const auto& e : clean) all.push_back(e);
    for (const auto& e : corrupt) all.push_back(e);
    auto projected = pca_project(all, 2);

    DistanceRow row;
    row.pairs = n;
    std::vector<double> centroid_clean(clean[0].size(), 0.0), centroid_corrupt(clean[0].size(), 0.0);
    std::vector<double> centroid_clean_2d(2, 0.0), centroid_corrupt_2d(2, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        row.mean_full += euclidean_distance(clean[i], corrupt[i]);
        row.mean_projected += euclidean_distance(projected[i], projected[n + i]);
        for (std::size_t j = 0; j < clean[i].size(); ++j) {
            centroid_clean[j] += clean[i][j];
            centroid_corrupt[j] += corrupt[i][j];
        }
        for (std::size_t j = 0; j < 2; ++j) {
            centroid_clean_2d[j] += projected[i][j];
            centroid_corrupt_2d[j] += projected[n + i][j];
        }
    }
    row.mean_full /= static_cast<double>(n);
    row.mean_projected /= static_cast<double>(n);
    for (auto* c : {&centroid_clean, &centroid_corrupt, &centroid_clean_2d, &centroid_corrupt_2d})
        for (double& v : *c) v /= static_cast<double>(n);
    row.centroid_full = euclidean_distance(centroid_clean, centroid_corrupt);
    row.centroid_projected = euclidean_distance(centroid_clean_2d, centroid_corrupt_2d);
    return row;
}

// Embeds every sentence with a read-only model; chunk results are concatenated
// in chunk order, so the output is independent of the job count.
inline std::vector<std::vector<double>> embed_corpus(const ModelParams& params,
                                                     const std::vector<Sentence>& sentences,
                                                     const CharVocab& chars, std::size_t jobs) {
    std::vector<std::vector<double>> out;
    out.reserve(sentences.size());
    parallel_chunks<std::vector<std::vector<double>>>(
        sentences.size(), 4, static_cast<int>(jobs),
        [&](std::size_t begin, std::size_t end) {
            std::vector<std::vector<double>> chunk;
            chunk.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i)
                chunk.push_back(sentence_embedding(params, sentences[i], chars));
            return chunk;
        },
        [&](std::size_t, std::vector<std::vector<double>>&& chunk) {
            for (auto& e : chunk) out.push_back(std::move(e));
        });
    return out;
}

}  // namespace detail

// Mean distance between clean and corrupted embeddings of sentence-aligned
// corpora, under one checkpoint. The caller labels the row with its condition.
inline DistanceRow mean_embedding_distance(const ModelParams& params,
                                           const std::vector<Sentence>& clean,
                                           const std::vector<Sentence>& corrupted,
                                           const CharVocab& chars, std::size_t jobs = 1) {
    if (clean.size() != corrupted.size())
        throw contract_error("clean corpus has " + std::to_string(clean.size()) +
                             " sentences but corrupted has " + std::to_string(corrupted.size()));
    auto clean_emb = detail::embed_corpus(params, clean, chars, jobs);
    auto corrupt_emb = detail::embed_corpus(params, corrupted, chars, jobs);
    return detail::distance_stats(clean_emb, corrupt_emb);
}

// Tab-separated distance table; columns are labeled by placement (full space
// vs 2-D projection) and aggregation (aligned-pair mean vs centroid gap).
inline std::string format_distance_report(const DistanceReport& report,
                                          const std::vector<std::string>& config_hashes = {}) {
    for (const auto& r : report.rows)
        if (r.mean_full < 0.0 || r.mean_projected < 0.0 || r.centroid_full < 0.0 ||
            r.centroid_projected < 0.0)
            throw contract_error("negative distance in report");
    std::string out;
    if (!config_hashes.empty()) {
        out += "# config-hash";
        for (const auto& h : config_hashes) out += "\t" + h;
        out += "\n";
    }
    out += "condition\tpairs\tmean-pairwise-full\tmean-pairwise-2d\tcentroid-full\tcentroid-2d\n";
    for (const auto& r : report.rows) {
        out += r.condition + "\t" + std::to_string(r.pairs);
        for (double v : {r.mean_full, r.mean_projected, r.centroid_full, r.centroid_projected})
            out += "\t" + detail::fmt_fixed(v, 6);
        out += "\n";
    }
    return out;
}

// Writes the 2-D clouds behind a distance row: one line per point,
// "condition<TAB>side<TAB>x<TAB>y", clean side first.
inline std::string format_projection_points(const std::string& condition,
                                            const std::vector<std::vector<double>>& projected,
                                            std::size_t n_clean) {
    if (n_clean > projected.size())
        throw contract_error("projection has fewer points than the declared clean count");
    std::string out;
    for (std::size_t i = 0; i < projected.size(); ++i) {
        out += condition;
        out += i < n_clean ? "\tclean" : "\tcorrupt";
        for (double v : projected[i]) out += "\t" + detail::fmt_fixed(v, 6);
        out += "\n";
    }
    return out;
}

// --- plot emitters ----------------------------------------------------------------

namespace detail {

inline const char* plot_color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    return palette[i % (sizeof(palette) / sizeof(palette[0]))];
}

}  // namespace detail

struct ScatterGroup {
    std::string label;
    std::vector<std::array<double, 2>> points;
};

// Minimal self-contained scatter plot; output is deterministic for fixed input.
inline std::string render_scatter_svg(const std::vector<ScatterGroup>& groups,
                                      const std::string& title) {
    constexpr double W = 640.0, H = 480.0, M = 48.0;
    double lo_x = 0.0, hi_x = 1.0, lo_y = 0.0, hi_y = 1.0;
    bool first = true;
    for (const auto& g : groups)
        for (const auto& p : g.points) {
            if (first) {
                lo_x = hi_x = p[0];
                lo_y = hi_y = p[1];
                first = false;
            } else {
                lo_x = std::min(lo_x, p[0]);
                hi_x = std::max(hi_x, p[0]);
                lo_y = std::min(lo_y, p[1]);
                hi_y = std::max(hi_y, p[1]);
            }
        }
    if (hi_x == lo_x) hi_x = lo_x + 1.0;
    if (hi_y == lo_y) hi_y = lo_y + 1.0;
    auto sx = [&](double x) { return M + (x - lo_x) / (hi_x - lo_x) * (W - 2 * M); };
    auto sy = [&](double y) { return H - M - (y - lo_y) / (hi_y - lo_y) * (H - 2 * M); };

    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\">\n";
    out += "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
    out += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + title + "</text>\n";
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const char* color = detail::plot_color(g);
        for (const auto& p : groups[g].points)
            out += "<circle cx=\"" + detail::fmt_fixed(sx(p[0]), 2) + "\" cy=\"" +
                   detail::fmt_fixed(sy(p[1]), 2) + "\" r=\"3\" fill=\"" + color +
                   "\" fill-opacity=\"0.7\"/>\n";
        double ly = 40.0 + 18.0 * static_cast<double>(g);
        out += "<circle cx=\"" + detail::fmt_fixed(W - M - 110.0, 2) + "\" cy=\"" +
               detail::fmt_fixed(ly, 2) + "\" r=\"4\" fill=\"" + color + "\"/>\n";
        out += "<text x=\"" + detail::fmt_fixed(W - M - 100.0, 2) + "\" y=\"" +
               detail::fmt_fixed(ly + 4.0, 2) + "\" font-size=\"12\">" + groups[g].label +
               "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

// Minimal self-contained bar chart over labeled non-negative values.
inline std::string render_bar_svg(const std::vector<std::pair<std::string, double>>& bars,
                                  const std::string& title) {
    constexpr double W = 640.0, H = 480.0, M = 56.0;
    double hi = 0.0;
    for (const auto& [label, v] : bars) {
        if (v < 0.0) throw contract_error("bar chart values must be non-negative");
        hi = std::max(hi, v);
    }
    if (hi == 0.0) hi = 1.0;

    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\">\n";
    out += "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
    out += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + title + "</text>\n";
    const double span = W - 2 * M;
    const double slot = bars.empty() ? span : span / static_cast<double>(bars.size());
    for (std::size_t i = 0; i < bars.size(); ++i) {
        double bh = bars[i].second / hi * (H - 2 * M);
        double x = M + slot * static_cast<double>(i) + slot * 0.15;
        double y = H - M - bh;
        out += "<rect x=\"" + detail::fmt_fixed(x, 2) + "\" y=\"" + detail::fmt_fixed(y, 2) +
               "\" width=\"" + detail::fmt_fixed(slot * 0.7, 2) + "\" height=\"" +
               detail::fmt_fixed(bh, 2) + "\" fill=\"" + detail::plot_color(i) + "\"/>\n";
        out += "<text x=\"" + detail::fmt_fixed(x + slot * 0.35, 2) + "\" y=\"" +
               detail::fmt_fixed(H - M + 16.0, 2) + "\" text-anchor=\"middle\" font-size=\"12\">" +
               bars[i].first + "</text>\n";
        out += "<text x=\"" + detail::fmt_fixed(x + slot * 0.35, 2) + "\" y=\"" +
               detail::fmt_fixed(y - 6.0, 2) + "\" text-anchor=\"middle\" font-size=\"11\">" +
               detail::fmt_fixed(bars[i].second, 4) + "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

}  // namespace telephonetic
