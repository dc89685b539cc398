#pragma once

// Stage orchestration over a single artifact tree. Every command reads its
// prerequisites from paths.output_dir, writes its products back there, and
// stamps each product with a sidecar recording the config hash that made it.
// Reading an artifact stamped by a different config raises a warning;
// resumable intermediates (partial neighbor tables, training state) from a
// different config are deleted and rebuilt instead, since continuing them
// would mix two runs.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "telephonetic/analysis.hpp"
#include "telephonetic/asr.hpp"
#include "telephonetic/char_lm.hpp"
#include "telephonetic/config.hpp"
#include "telephonetic/corpus.hpp"
#include "telephonetic/embedding.hpp"
#include "telephonetic/error.hpp"
#include "telephonetic/grammar.hpp"
#include "telephonetic/phonetics.hpp"
#include "telephonetic/rng.hpp"
#include "telephonetic/util.hpp"

namespace telephonetic {

// --- artifact layout ---------------------------------------------------------

struct ArtifactPaths {
    std::string root;
    explicit ArtifactPaths(std::string output_dir) : root(std::move(output_dir)) {}

    std::string resolved_config() const { return root + "/config.resolved"; }
    std::string word_vocab() const { return root + "/word_vocab.tsv"; }
    std::string char_vocab() const { return root + "/char_vocab.tsv"; }
    std::string knn() const { return root + "/knn.tsv"; }
    std::string corpus_file(const std::string& condition, const std::string& split) const {
        return root + "/corpus/" + condition + "." + split + ".txt";
    }
    std::string checkpoint(const std::string& name) const {
        return root + "/checkpoints/" + name + ".ckpt";
    }
    std::string train_state(const std::string& name) const {
        return root + "/checkpoints/" + name + ".resume";
    }
    std::string metrics(const std::string& name) const { return root + "/metrics/" + name + ".log"; }
    std::string ppl_grid() const { return root + "/reports/ppl_grid.tsv"; }
    std::string distance_report() const { return root + "/reports/distance.tsv"; }
    std::string projection(const std::string& condition) const {
        return root + "/reports/projection_" + condition + ".tsv";
    }
    std::string scatter_plot(const std::string& condition) const {
        return root + "/plots/projection_" + condition + ".svg";
    }
    std::string distance_plot() const { return root + "/plots/distance.svg"; }
};

// --- config-hash sidecars ------------------------------------------------------

inline std::string meta_path(const std::string& artifact) { return artifact + ".meta"; }

inline void write_meta(const std::string& artifact, const RunConfig& cfg, const std::string& stage) {
    write_text_file(meta_path(artifact), "config " + cfg.hash() + "\nstage " + stage + "\n");
}

inline std::optional<std::string> read_meta_hash(const std::string& artifact) {
    std::string mp = meta_path(artifact);
    if (!std::filesystem::exists(mp)) return std::nullopt;
    std::string text = read_text_file(mp);
    for (std::string_view line : split_lines(text))
        if (line.rfind("config ", 0) == 0) return std::string(line.substr(7));
    return std::nullopt;
}

// True when the artifact exists but carries no stamp or a different config's
// stamp. Missing artifacts are not stale, they are absent.
inline bool is_stale(const std::string& artifact, const RunConfig& cfg) {
    if (!std::filesystem::exists(artifact)) return false;
    auto h = read_meta_hash(artifact);
    return !h.has_value() || *h != cfg.hash();
}

inline void warn_if_stale(const std::string& artifact, const RunConfig& cfg,
                          std::vector<std::string>& warnings) {
    if (!std::filesystem::exists(artifact)) return;
    auto h = read_meta_hash(artifact);
    if (!h.has_value())
        warnings.push_back(artifact + " has no config stamp; it may come from an older run");
    else if (*h != cfg.hash())
        warnings.push_back(artifact + " was produced under config " + *h +
                           " but the current config is " + cfg.hash() +
                           "; rerun the stage that produces it");
}

// Missing prerequisites are a usage problem, not an I/O accident: the message
// names the command that produces the artifact.
inline void require_artifact(const std::string& path, const std::string& what,
                             const std::string& producer) {
    if (!std::filesystem::exists(path))
        throw config_error(what + " not found at " + path + "; run `" + producer + "` first");
}

inline ArtifactPaths prepare_output_dir(const RunConfig& cfg) {
    if (cfg.output_dir.empty()) throw config_error("paths.output_dir is required but not configured");
    ArtifactPaths paths(cfg.output_dir);
    for (const char* sub : {"", "/corpus", "/checkpoints", "/metrics", "/reports", "/plots"})
        std::filesystem::create_directories(paths.root + sub);
    write_text_file(paths.resolved_config(), cfg.serialize());
    write_meta(paths.resolved_config(), cfg, "config");
    return paths;
}

// --- shared stage plumbing ------------------------------------------------------

inline std::vector<Condition> configured_conditions(const RunConfig& cfg) {
    std::vector<Condition> out;
    out.reserve(cfg.conditions.size());
    for (const auto& name : cfg.conditions) out.push_back(make_condition(name));
    return out;
}

namespace detail {

inline std::vector<Sentence> load_required_corpus(const std::string& path, const std::string& what) {
    auto sentences = load_sentences(path);
    if (sentences.empty()) throw config_error(what + " is empty: " + path);
    return sentences;
}

inline void save_corpus_file(const std::vector<Sentence>& sentences, const std::string& path) {
    std::string out;
    for (const auto& s : sentences) {
        out += join(s.tokens, " ");
        out += '\n';
    }
    write_text_file(path, out);
}

inline std::vector<Sentence> load_condition_split(const ArtifactPaths& paths, const RunConfig& cfg,
                                                  const std::string& condition,
                                                  const std::string& split,
                                                  std::vector<std::string>& warnings) {
    std::string path = paths.corpus_file(condition, split);
    require_artifact(path, "the '" + condition + "' " + split + " corpus", "augment");
    warn_if_stale(path, cfg, warnings);
    return load_required_corpus(path, "the '" + condition + "' " + split + " corpus");
}

inline std::vector<SpeakerProfile> selected_speakers(const RunConfig& cfg) {
    if (cfg.speakers.empty()) return default_speakers();
    std::vector<SpeakerProfile> out;
    for (const auto& name : cfg.speakers) {
        bool found = false;
        for (const auto& sp : default_speakers())
            if (sp.name == name) {
                out.push_back(sp);
                found = true;
                break;
            }
        if (!found) throw config_error("augment.speakers: unknown speaker '" + name + "'");
    }
    return out;
}

inline SamplingPolicy sampling_policy(const RunConfig& cfg) {
    SamplingPolicy policy;
    policy.allowed_pos = cfg.allowed_pos;
    policy.p_select = cfg.p_select;
    policy.subtree_prob = cfg.subtree_prob;
    policy.max_targets = cfg.max_targets;
    return policy;
}

// Gold parses when a path is configured, heuristic flat parses otherwise.
inline std::vector<DepGraph> parses_for(const std::vector<Sentence>& corpus,
                                        const std::string& parse_path) {
    if (parse_path.empty()) {
        std::vector<DepGraph> out;
        out.reserve(corpus.size());
        for (const auto& s : corpus) out.push_back(fallback_parse(s));
        return out;
    }
    auto parses = parse_conllu_file(read_text_file(parse_path));
    if (parses.size() != corpus.size())
        throw config_error(parse_path + " holds " + std::to_string(parses.size()) +
                           " parses but the corpus has " + std::to_string(corpus.size()) +
                           " sentences");
    return parses;
}

// Lexicon word frequencies from the training split, add-one smoothed so every
// dictionary word keeps a finite log frequency.
inline void set_train_frequencies(Lexicon& lex, const std::vector<Sentence>& train) {
    std::map<std::string, std::size_t> counts;
    std::size_t total = 0;
    for (const auto& s : train)
        for (const auto& t : s.tokens) {
            ++counts[t];
            ++total;
        }
    const double denom = static_cast<double>(total + lex.size());
    for (const auto& word : lex.words()) {
        auto it = counts.find(word);
        const double c = it == counts.end() ? 0.0 : static_cast<double>(it->second);
        lex.set_log_frequency(word, std::log((c + 1.0) / denom));
    }
}

inline ModelConfig resolved_model_config(const RunConfig& cfg, const WordVocab& words,
                                         const CharVocab& chars) {
    ModelConfig m = cfg.model;
    m.n_words = words.size();
    m.n_chars = chars.size();
    return m;
}

inline WordVocab load_word_vocab(const ArtifactPaths& paths, const RunConfig& cfg,
                                 std::vector<std::string>& warnings) {
    require_artifact(paths.word_vocab(), "the word vocabulary", "ingest");
    warn_if_stale(paths.word_vocab(), cfg, warnings);
    return WordVocab::load(paths.word_vocab());
}

inline CharVocab load_char_vocab(const ArtifactPaths& paths, const RunConfig& cfg,
                                 std::vector<std::string>& warnings) {
    require_artifact(paths.char_vocab(), "the character vocabulary", "ingest");
    warn_if_stale(paths.char_vocab(), cfg, warnings);
    return CharVocab::load(paths.char_vocab());
}

}  // namespace detail

// --- ingest -------------------------------------------------------------------

struct IngestResult {
    std::size_t train_sentences = 0;
    std::size_t valid_sentences = 0;
    std::size_t test_sentences = 0;
    std::size_t word_vocab_size = 0;
    std::size_t char_vocab_size = 0;
};

// Reads the three raw splits, builds both vocabularies from the training
// split, and caches them in the artifact tree.
inline IngestResult run_ingest(const RunConfig& cfg, std::vector<std::string>& warnings) {
    (void)warnings;
    ArtifactPaths paths = prepare_output_dir(cfg);
    auto train = detail::load_required_corpus(cfg.train_corpus, "the training corpus");
    auto valid = detail::load_required_corpus(cfg.valid_corpus, "the validation corpus");
    auto test = detail::load_required_corpus(cfg.test_corpus, "the test corpus");

    WordVocab words = WordVocab::build(train, static_cast<int>(cfg.min_count));
    CharVocab chars = CharVocab::build(train);
    words.save(paths.word_vocab());
    write_meta(paths.word_vocab(), cfg, "ingest");
    chars.save(paths.char_vocab());
    write_meta(paths.char_vocab(), cfg, "ingest");

    return {train.size(), valid.size(), test.size(), words.size(), chars.size()};
}

// --- build-knn ------------------------------------------------------------------

struct KnnResult {
    std::size_t rows = 0;
    std::size_t k = 0;
};

// Builds the nearest-neighbor table from the configured embeddings. The final
// table path doubles as the partial checkpoint, so an interrupted build under
// the same config resumes where it stopped; a table from a different config is
// deleted and rebuilt.
inline KnnResult run_build_knn(const RunConfig& cfg, std::vector<std::string>& warnings) {
    ArtifactPaths paths = prepare_output_dir(cfg);
    if (cfg.embeddings.empty())
        throw config_error("paths.embeddings is required to build a neighbor table");

    if (is_stale(paths.knn(), cfg)) {
        warnings.push_back(paths.knn() + " comes from a different config; rebuilding it");
        std::filesystem::remove(paths.knn());
        std::filesystem::remove(meta_path(paths.knn()));
    }

    EmbeddingTable emb = load_embeddings(cfg.embeddings);
    KnnBuildOptions opts;
    opts.similarity = similarity_from_string(cfg.similarity);
    opts.jobs = static_cast<int>(cfg.jobs);
    opts.checkpoint_path = paths.knn();
    KnnTable table = build_knn_table(emb, cfg.knn_k, opts);
    table.save(paths.knn());
    write_meta(paths.knn(), cfg, "build-knn");
    return {table.size(), table.k()};
}

// --- augment --------------------------------------------------------------------

struct AugmentResult {
    std::vector<std::string> written;       // corpus files in write order
    std::size_t emptied_sentences = 0;      // channel output emptied, placeholder written
    bool engine_fell_back = false;
};

// Produces corpus/<condition>.<split>.txt for every configured condition and
// split. Span sampling and both noise streams are keyed on (per-split seed,
// sentence id), so any subset of conditions reproduces the same corruption.
// With an external engine configured, ASR spans go through it one line per
// span; on engine failure the simulated channel takes over only when
// engine_fallback is set and a pronunciation dictionary is configured.
inline AugmentResult run_augment(const RunConfig& cfg, std::vector<std::string>& warnings) {
    ArtifactPaths paths = prepare_output_dir(cfg);
    auto conditions = configured_conditions(cfg);
    bool any_semantic = false, any_asr = false;
    for (const auto& c : conditions) {
        any_semantic = any_semantic || c.apply_semantic;
        any_asr = any_asr || c.apply_asr;
    }
    const bool use_engine = !cfg.engine_command.empty();

    std::optional<KnnTable> knn;
    if (any_semantic) {
        require_artifact(paths.knn(), "the neighbor table", "build-knn");
        warn_if_stale(paths.knn(), cfg, warnings);
        knn = KnnTable::load(paths.knn());
    }

    auto train = detail::load_required_corpus(cfg.train_corpus, "the training corpus");
    std::optional<Lexicon> lexicon;
    AsrChannel channel;
    const bool want_channel = any_asr && (!use_engine || cfg.engine_fallback);
    if (want_channel) {
        if (cfg.pron_dict.empty())
            throw config_error("paths.pron_dict is required for the simulated ASR channel");
        lexicon = Lexicon::load_dict(cfg.pron_dict);
        detail::set_train_frequencies(*lexicon, train);
        channel.model = make_confusion_model(cfg.base_sub_rate, cfg.p_ins, cfg.p_del, cfg.severity);
        channel.lexicon = &*lexicon;
        channel.lambda = cfg.lambda;
        channel.speakers = detail::selected_speakers(cfg);
    }

    const SamplingPolicy policy = detail::sampling_policy(cfg);
    const bool needs_spans = any_semantic || any_asr;

    struct Split {
        const char* name;
        const std::string* corpus;
        const std::string* parses;
    };
    const Split splits[3] = {{"train", &cfg.train_corpus, &cfg.train_parses},
                             {"valid", &cfg.valid_corpus, &cfg.valid_parses},
                             {"test", &cfg.test_corpus, &cfg.test_parses}};

    AugmentResult result;
    for (std::size_t si = 0; si < 3; ++si) {
        auto corpus = si == 0 ? train
                              : detail::load_required_corpus(*splits[si].corpus,
                                                             std::string("the ") + splits[si].name +
                                                                 " corpus");
        const std::uint64_t split_seed = Rng::derive(cfg.seed, "augment", {si});
        std::vector<std::vector<TargetSpan>> spans;
        if (needs_spans) {
            auto parses = detail::parses_for(corpus, *splits[si].parses);
            spans = sample_condition_spans(corpus, parses, policy, split_seed);
        }

        for (const auto& cond : conditions) {
            std::vector<Sentence> out = corpus;
            if (cond.apply_semantic) {
                for (std::size_t i = 0; i < out.size(); ++i) {
                    Rng sem_rng = Rng::derived(split_seed, "semantic-noise", {out[i].id});
                    out[i] = augment_spans(out[i], spans[i], *knn, sem_rng);
                }
            }
            if (cond.apply_asr) {
                auto simulated = [&](std::vector<Sentence>& sents) {
                    for (std::size_t i = 0; i < sents.size(); ++i) {
                        Rng asr_rng = Rng::derived(split_seed, "asr-noise", {sents[i].id});
                        sents[i] = asr_roundtrip(sents[i], spans[i], channel, asr_rng);
                    }
                };
                if (use_engine) {
                    try {
                        out = engine_roundtrip_corpus(out, spans, cfg.engine_command);
                    } catch (const engine_error& e) {
                        if (!cfg.engine_fallback || !want_channel) throw;
                        warnings.push_back(std::string("external engine failed (") + e.what() +
                                           "); falling back to the simulated channel");
                        result.engine_fell_back = true;
                        simulated(out);
                    }
                } else {
                    simulated(out);
                }
            }
            // The channel can erase a short sentence outright; keep the line
            // (and 1:1 sentence alignment across conditions) with an <unk>.
            for (auto& s : out)
                if (s.tokens.empty()) {
                    s.tokens.push_back(WordVocab::UNK_TOKEN);
                    ++result.emptied_sentences;
                }
            std::string path = paths.corpus_file(cond.name, splits[si].name);
            detail::save_corpus_file(out, path);
            write_meta(path, cfg, "augment");
            result.written.push_back(std::move(path));
        }
    }
    if (result.emptied_sentences > 0)
        warnings.push_back(std::to_string(result.emptied_sentences) +
                           " sentence(s) came back empty from the channel; wrote '" +
                           WordVocab::UNK_TOKEN + "' placeholders");
    return result;
}

// --- train / finetune --------------------------------------------------------------

namespace detail {

// One training run with resumable state. Interrupted runs continue from the
// last completed epoch as long as the config hash still matches; state from a
// different config is deleted so streams never mix.
inline TrainResult train_stage(const RunConfig& cfg, const ArtifactPaths& paths,
                               const std::string& name, const std::vector<Sentence>& train_sents,
                               const std::vector<Sentence>& valid_sents, const WordVocab& words,
                               const CharVocab& chars, std::size_t epochs, double lr,
                               std::uint64_t seed, ModelParams* warm_start,
                               std::vector<std::string>& warnings) {
    TrainConfig tcfg;
    tcfg.batch_size = cfg.batch_size;
    tcfg.lr = lr;
    tcfg.momentum = cfg.momentum;
    tcfg.anneal_threshold = cfg.anneal_threshold;
    tcfg.p_m = cfg.p_m;
    tcfg.epochs = epochs;
    tcfg.seed = seed;
    tcfg.jobs = cfg.jobs;

    const std::string state_path = paths.train_state(name);
    if (is_stale(state_path, cfg)) {
        warnings.push_back(state_path + " comes from a different config; restarting '" + name +
                           "' from scratch");
        std::filesystem::remove(state_path);
        std::filesystem::remove(meta_path(state_path));
    }
    // Stamp before training so state saved mid-run is already attributed.
    write_meta(state_path, cfg, "train");

    ModelConfig mcfg = resolved_model_config(cfg, words, chars);
    TrainResult res = train(train_sents, valid_sents, words, chars, mcfg, tcfg, warm_start,
                            state_path);
    if (res.diverged)
        warnings.push_back("training '" + name +
                           "' diverged; keeping the best checkpoint seen before divergence");

    save_checkpoint(res.best, paths.checkpoint(name));
    write_meta(paths.checkpoint(name), cfg, "train");
    write_text_file(paths.metrics(name), format_metrics(res.metrics));
    write_meta(paths.metrics(name), cfg, "train");
    return res;
}

}  // namespace detail

// Trains the baseline model on the clean training split.
inline TrainResult run_train(const RunConfig& cfg, std::vector<std::string>& warnings) {
    ArtifactPaths paths = prepare_output_dir(cfg);
    WordVocab words = detail::load_word_vocab(paths, cfg, warnings);
    CharVocab chars = detail::load_char_vocab(paths, cfg, warnings);
    auto train_sents = detail::load_condition_split(paths, cfg, "baseline", "train", warnings);
    auto valid_sents = detail::load_condition_split(paths, cfg, "baseline", "valid", warnings);
    return detail::train_stage(cfg, paths, "baseline", train_sents, valid_sents, words, chars,
                               cfg.epochs, cfg.lr, Rng::derive(cfg.seed, "train-baseline", {}),
                               nullptr, warnings);
}

// Fine-tunes one model per noisy condition, warm-started from the baseline
// checkpoint at a reduced learning rate.
inline std::map<std::string, TrainResult> run_finetune(const RunConfig& cfg,
                                                       std::vector<std::string>& warnings) {
    ArtifactPaths paths = prepare_output_dir(cfg);
    WordVocab words = detail::load_word_vocab(paths, cfg, warnings);
    CharVocab chars = detail::load_char_vocab(paths, cfg, warnings);
    require_artifact(paths.checkpoint("baseline"), "the baseline checkpoint", "train");
    warn_if_stale(paths.checkpoint("baseline"), cfg, warnings);
    ModelParams base = load_checkpoint(paths.checkpoint("baseline"));

    std::map<std::string, TrainResult> out;
    for (const auto& cond : configured_conditions(cfg)) {
        if (cond.name == "baseline") continue;
        auto train_sents = detail::load_condition_split(paths, cfg, cond.name, "train", warnings);
        auto valid_sents = detail::load_condition_split(paths, cfg, cond.name, "valid", warnings);
        out.emplace(cond.name,
                    detail::train_stage(cfg, paths, cond.name, train_sents, valid_sents, words,
                                        chars, cfg.finetune_epochs, cfg.lr * cfg.finetune_lr_scale,
                                        Rng::derive(cfg.seed, "finetune:" + cond.name, {}), &base,
                                        warnings));
    }
    return out;
}

// --- evaluate --------------------------------------------------------------------

// Pseudo-perplexity grid: one row per checkpoint (baseline plus each
// fine-tuned condition), one column per test condition. Rows whose checkpoint
// is missing stay absent so a partial pipeline still evaluates.
inline PplGrid run_evaluate(const RunConfig& cfg, std::vector<std::string>& warnings) {
    ArtifactPaths paths = prepare_output_dir(cfg);
    WordVocab words = detail::load_word_vocab(paths, cfg, warnings);
    CharVocab chars = detail::load_char_vocab(paths, cfg, warnings);
    auto conditions = configured_conditions(cfg);

    std::vector<std::vector<Sentence>> storage;
    storage.reserve(conditions.size() * 2);
    std::vector<GridColumn> columns;
    for (const auto& cond : conditions) {
        storage.push_back(detail::load_condition_split(paths, cfg, cond.name, "valid", warnings));
        storage.push_back(detail::load_condition_split(paths, cfg, cond.name, "test", warnings));
        GridColumn col;
        col.name = cond.name;
        col.valid = &storage[storage.size() - 2];
        col.test = &storage[storage.size() - 1];
        columns.push_back(col);
    }

    std::vector<GridRow> rows;
    rows.push_back({"baseline", paths.checkpoint("baseline")});
    for (const auto& cond : conditions) {
        if (cond.name == "baseline") continue;
        rows.push_back({cond.name, paths.checkpoint(cond.name)});
    }
    for (const auto& row : rows) {
        if (!std::filesystem::exists(row.checkpoint_path))
            warnings.push_back("checkpoint for '" + row.name +
                               "' not found; its grid row will be absent");
        else
            warn_if_stale(row.checkpoint_path, cfg, warnings);
    }

    PplGrid grid = run_grid(rows, columns, words, chars, cfg.jobs);
    write_text_file(paths.ppl_grid(), format_grid_report(grid, {cfg.hash()}));
    write_meta(paths.ppl_grid(), cfg, "evaluate");
    return grid;
}

// --- analyze ---------------------------------------------------------------------

struct AnalyzeResult {
    DistanceReport report;
    std::vector<std::string> written;  // report and plot files in write order
};

// Clean-versus-corrupted embedding distances on the test split, under the
// baseline checkpoint and each condition's fine-tuned checkpoint, plus 2-D
// projections and figures.
inline AnalyzeResult run_analyze(const RunConfig& cfg, std::vector<std::string>& warnings) {
    ArtifactPaths paths = prepare_output_dir(cfg);
    CharVocab chars = detail::load_char_vocab(paths, cfg, warnings);
    auto conditions = configured_conditions(cfg);

    require_artifact(paths.checkpoint("baseline"), "the baseline checkpoint", "train");
    warn_if_stale(paths.checkpoint("baseline"), cfg, warnings);
    ModelParams base = load_checkpoint(paths.checkpoint("baseline"));
    auto clean = detail::load_condition_split(paths, cfg, "baseline", "test", warnings);

    AnalyzeResult result;
    std::vector<std::pair<std::string, double>> bars;
    for (const auto& cond : conditions) {
        if (!cond.apply_semantic && !cond.apply_asr) continue;
        auto corrupted = detail::load_condition_split(paths, cfg, cond.name, "test", warnings);

        DistanceRow base_row = mean_embedding_distance(base, clean, corrupted, chars, cfg.jobs);
        base_row.condition = cond.name + "/baseline";
        bars.emplace_back(base_row.condition, base_row.mean_full);
        result.report.rows.push_back(base_row);

        if (!std::filesystem::exists(paths.checkpoint(cond.name))) {
            warnings.push_back("checkpoint for '" + cond.name +
                               "' not found; skipping its fine-tuned distances");
            continue;
        }
        warn_if_stale(paths.checkpoint(cond.name), cfg, warnings);
        ModelParams tuned = load_checkpoint(paths.checkpoint(cond.name));
        DistanceRow tuned_row = mean_embedding_distance(tuned, clean, corrupted, chars, cfg.jobs);
        tuned_row.condition = cond.name + "/finetuned";
        bars.emplace_back(tuned_row.condition, tuned_row.mean_full);
        result.report.rows.push_back(tuned_row);

        // Project the fine-tuned model's clean and corrupted embeddings into a
        // shared 2-D view for the scatter figure.
        auto points = detail::embed_corpus(tuned, clean, chars, cfg.jobs);
        auto corrupt_points = detail::embed_corpus(tuned, corrupted, chars, cfg.jobs);
        const std::size_t n_clean = points.size();
        points.insert(points.end(), corrupt_points.begin(), corrupt_points.end());
        auto projected = pca_project(points, 2);

        write_text_file(paths.projection(cond.name),
                        format_projection_points(cond.name, projected, n_clean));
        write_meta(paths.projection(cond.name), cfg, "analyze");
        result.written.push_back(paths.projection(cond.name));

        ScatterGroup clean_group{"clean", {}}, corrupt_group{cond.name, {}};
        for (std::size_t i = 0; i < projected.size(); ++i) {
            std::array<double, 2> pt = {projected[i][0], projected[i][1]};
            (i < n_clean ? clean_group : corrupt_group).points.push_back(pt);
        }
        write_text_file(paths.scatter_plot(cond.name),
                        render_scatter_svg({clean_group, corrupt_group},
                                           "sentence embeddings: clean vs " + cond.name));
        write_meta(paths.scatter_plot(cond.name), cfg, "analyze");
        result.written.push_back(paths.scatter_plot(cond.name));
    }

    write_text_file(paths.distance_report(), format_distance_report(result.report, {cfg.hash()}));
    write_meta(paths.distance_report(), cfg, "analyze");
    result.written.insert(result.written.begin(), paths.distance_report());

    if (!bars.empty()) {
        write_text_file(paths.distance_plot(),
                        render_bar_svg(bars, "mean clean-corrupted embedding distance"));
        write_meta(paths.distance_plot(), cfg, "analyze");
        result.written.push_back(paths.distance_plot());
    }
    return result;
}

// --- reproduce -------------------------------------------------------------------

struct ReproduceResult {
    IngestResult ingest;
    PplGrid grid;
    DistanceReport distances;
};

// The whole pipeline in order. Every stage is deterministic given (config,
// seed) and resumable stages skip completed work, so a rerun reproduces every
// report byte for byte.
inline ReproduceResult run_reproduce(const RunConfig& cfg, std::vector<std::string>& warnings) {
    ReproduceResult out;
    out.ingest = run_ingest(cfg, warnings);
    bool any_semantic = false;
    for (const auto& cond : configured_conditions(cfg))
        any_semantic = any_semantic || cond.apply_semantic;
    if (any_semantic) run_build_knn(cfg, warnings);
    run_augment(cfg, warnings);
    run_train(cfg, warnings);
    run_finetune(cfg, warnings);
    out.grid = run_evaluate(cfg, warnings);
    out.distances = run_analyze(cfg, warnings).report;
    return out;
}

}  // namespace telephonetic
