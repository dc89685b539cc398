#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "telephonetic/analysis.hpp"
#include "telephonetic/char_lm.hpp"
#include "telephonetic/rng.hpp"

using namespace telephonetic;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string tmp_path(const std::string& name) {
    std::filesystem::create_directories(TEST_TMP_DIR);
    return std::string(TEST_TMP_DIR) + "/" + name;
}

std::string data_path(const std::string& name) { return std::string(TEST_DATA_DIR) + "/" + name; }

using Matrix = std::vector<std::vector<double>>;

// Sample covariance by definition: C[j][k] = sum_i (x_ij - m_j)(x_ik - m_k) / (n-1).
Matrix sample_covariance(const Matrix& pts) {
    const std::size_t n = pts.size(), d = pts[0].size();
    std::vector<double> mean(d, 0.0);
    for (const auto& p : pts)
        for (std::size_t j = 0; j < d; ++j) mean[j] += p[j];
    for (double& v : mean) v /= static_cast<double>(n);
    Matrix c(d, std::vector<double>(d, 0.0));
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) {
            for (std::size_t i = 0; i < n; ++i) c[j][k] += (pts[i][j] - mean[j]) * (pts[i][k] - mean[k]);
            c[j][k] /= static_cast<double>(n - 1);
        }
    return c;
}

// Cyclic Jacobi rotations on a symmetric matrix; returns eigenvalues sorted
// descending. Independent of the projection code under test.
std::vector<double> jacobi_eigenvalues(Matrix a) {
    const std::size_t n = a.size();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-28) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a[p][q] == 0.0) continue;
                double tau = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    double aip = a[i][p], aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for (std::size_t j = 0; j < n; ++j) {
                    double apj = a[p][j], aqj = a[q][j];
                    a[p][j] = c * apj - s * aqj;
                    a[q][j] = s * apj + c * aqj;
                }
            }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a[i][i];
    std::sort(eig.begin(), eig.end(), std::greater<>());
    return eig;
}

double column_variance(const Matrix& pts, std::size_t col) {
    double mean = 0.0;
    for (const auto& p : pts) mean += p[col];
    mean /= static_cast<double>(pts.size());
    double var = 0.0;
    for (const auto& p : pts) var += (p[col] - mean) * (p[col] - mean);
    return var / static_cast<double>(pts.size() - 1);
}

Matrix random_cloud(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng = Rng::derived(seed, "pca-cloud", {n, d});
    Matrix pts(n, std::vector<double>(d));
    for (auto& p : pts)
        for (std::size_t j = 0; j < d; ++j)
            p[j] = rng.uniform(-1.0, 1.0) * static_cast<double>(j + 1);
    return pts;
}

// --- fixtures for condition corpora ------------------------------------------

std::vector<Sentence> toy_corpus() {
    std::vector<std::vector<std::string>> rows = {
        {"the", "cat", "runs", "fast"},
        {"a", "dog", "is", "big"},
        {"the", "fox", "jumped", "over", "it"},
    };
    std::vector<Sentence> out;
    for (std::size_t i = 0; i < rows.size(); ++i) out.push_back({rows[i], i});
    return out;
}

// Gold parses matching toy_corpus(): every sentence has exactly one NOUN, at
// position 2 (1-based).
std::vector<DepGraph> toy_parses() {
    const char* text =
        "1\tthe\t_\tDET\t_\t_\t2\tdet\n"
        "2\tcat\t_\tNOUN\t_\t_\t3\tnsubj\n"
        "3\truns\t_\tVERB\t_\t_\t0\troot\n"
        "4\tfast\t_\tADV\t_\t_\t3\tadvmod\n"
        "\n"
        "1\ta\t_\tDET\t_\t_\t2\tdet\n"
        "2\tdog\t_\tNOUN\t_\t_\t3\tnsubj\n"
        "3\tis\t_\tVERB\t_\t_\t0\troot\n"
        "4\tbig\t_\tADJ\t_\t_\t3\txcomp\n"
        "\n"
        "1\tthe\t_\tDET\t_\t_\t2\tdet\n"
        "2\tfox\t_\tNOUN\t_\t_\t3\tnsubj\n"
        "3\tjumped\t_\tVERB\t_\t_\t0\troot\n"
        "4\tover\t_\tADP\t_\t_\t5\tcase\n"
        "5\tit\t_\tPRON\t_\t_\t3\tobl\n";
    return parse_conllu_file(text);
}

KnnTable toy_knn() {
    KnnTable t(2);
    t.add_row("cat", {{"dog", 0.9}, {"fox", 0.8}});
    t.add_row("dog", {{"cat", 0.9}, {"bear", 0.7}});
    t.add_row("fox", {{"cat", 0.8}, {"dog", 0.6}});
    return t;
}

bool same_tokens(const Sentence& a, const Sentence& b) { return a.tokens == b.tokens; }

}  // namespace

TEST_CASE("euclidean distance: hand values and metric properties", "[analysis]") {
    REQUIRE(euclidean_distance({0.0, 0.0}, {3.0, 4.0}) == 5.0);
    REQUIRE(euclidean_distance({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == 0.0);
    REQUIRE_THROWS_AS(euclidean_distance({1.0}, {1.0, 2.0}), contract_error);

    Rng rng = Rng::derived(42, "dist-prop");
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(8), b(8);
        for (double& v : a) v = rng.uniform(-5.0, 5.0);
        for (double& v : b) v = rng.uniform(-5.0, 5.0);
        REQUIRE(euclidean_distance(a, b) == euclidean_distance(b, a));
        REQUIRE(euclidean_distance(a, b) >= 0.0);
        REQUIRE(euclidean_distance(a, a) == 0.0);
        std::vector<double> c = a;
        c[3] += 0.001;
        REQUIRE(euclidean_distance(a, c) > 0.0);
    }
}

TEST_CASE("pca: collinear cloud lands on one signed axis", "[analysis]") {
    const std::vector<double> dir = {1.0, 2.0, 3.0};
    const std::vector<double> base = {4.0, -1.0, 2.0};
    const std::vector<double> ts = {-2.0, -1.0, 0.0, 0.5, 3.0};
    Matrix pts;
    for (double t : ts) {
        std::vector<double> p(3);
        for (std::size_t j = 0; j < 3; ++j) p[j] = base[j] + t * dir[j];
        pts.push_back(p);
    }
    auto proj = pca_project(pts, 2);
    REQUIRE(proj.size() == pts.size());

    const double step = std::sqrt(1.0 + 4.0 + 9.0);  // |dir|
    for (std::size_t i = 0; i < proj.size(); ++i) {
        REQUIRE(std::abs(proj[i][1]) <= 1e-8);
        for (std::size_t j = 0; j < i; ++j) {
            double want = std::abs(ts[i] - ts[j]) * step;
            REQUIRE(std::abs(std::abs(proj[i][0] - proj[j][0]) - want) <= 1e-8);
        }
    }
    // First loading positive means the axis points along +dir, so the
    // coordinate grows with t.
    for (std::size_t i = 1; i < proj.size(); ++i) REQUIRE(proj[i][0] > proj[i - 1][0]);
}

TEST_CASE("pca: full-rank 2-D data maps to an isometry of itself, idempotently", "[analysis]") {
    Rng rng = Rng::derived(7, "pca-2d");
    Matrix pts(30, std::vector<double>(2));
    for (auto& p : pts) {
        p[0] = 3.0 * rng.uniform(-1.0, 1.0) + 0.5;
        p[1] = rng.uniform(-1.0, 1.0) - 2.0;
    }
    auto proj = pca_project(pts, 2);
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            REQUIRE(std::abs(euclidean_distance(pts[i], pts[j]) -
                             euclidean_distance(proj[i], proj[j])) <= 1e-8);

    auto again = pca_project(proj, 2);
    for (std::size_t i = 0; i < proj.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            REQUIRE(std::abs(euclidean_distance(proj[i], proj[j]) -
                             euclidean_distance(again[i], again[j])) <= 1e-8);
}

TEST_CASE("pca: projection variance matches a dense eigensolver", "[analysis]") {
    for (std::uint64_t seed : {7u, 21u, 99u}) {
        Matrix pts = random_cloud(20, 5, seed);
        auto eig = jacobi_eigenvalues(sample_covariance(pts));
        REQUIRE(eig.size() == 5);
        REQUIRE(eig[0] >= eig[1]);

        auto proj = pca_project(pts, 2);
        double var0 = column_variance(proj, 0);
        double var1 = column_variance(proj, 1);
        REQUIRE(std::abs(var0 - eig[0]) <= 1e-6);
        REQUIRE(std::abs(var1 - eig[1]) <= 1e-6);
        REQUIRE(var0 >= var1);
    }
}

TEST_CASE("pca: degenerate inputs", "[analysis]") {
    Matrix same(5, std::vector<double>{2.0, -3.0, 1.0});
    auto proj = pca_project(same, 2);
    for (const auto& p : proj) {
        REQUIRE(p[0] == 0.0);
        REQUIRE(p[1] == 0.0);
    }

    REQUIRE_THROWS_AS(pca_project({{1.0, 2.0}}, 2), contract_error);
    REQUIRE_THROWS_AS(pca_project({{1.0, 2.0}, {1.0}}, 2), contract_error);
    REQUIRE_THROWS_AS(pca_project({{}, {}}, 2), contract_error);

    // One-dimensional data: first component is the centered value, second is zero.
    Matrix line = {{1.0}, {2.0}, {4.0}};
    auto lp = pca_project(line, 2);
    for (std::size_t i = 0; i < line.size(); ++i) {
        REQUIRE(std::abs(lp[i][0] - (line[i][0] - 7.0 / 3.0)) <= 1e-10);
        REQUIRE(lp[i][1] == 0.0);
    }
}

TEST_CASE("distance stats: 3-4-5 pair, identical lists, symmetry", "[analysis]") {
    auto row = detail::distance_stats({{0.0, 0.0}}, {{3.0, 4.0}});
    REQUIRE(row.pairs == 1);
    REQUIRE(row.mean_full == 5.0);
    REQUIRE(row.centroid_full == 5.0);
    REQUIRE(std::abs(row.mean_projected - 5.0) <= 1e-8);
    REQUIRE(std::abs(row.centroid_projected - 5.0) <= 1e-8);

    Rng rng = Rng::derived(3, "dist-stats");
    Matrix embs(3, std::vector<double>(4));
    for (auto& e : embs)
        for (double& v : e) v = rng.uniform(-1.0, 1.0);
    auto zero = detail::distance_stats(embs, embs);
    REQUIRE(zero.mean_full == 0.0);
    REQUIRE(zero.mean_projected == 0.0);
    REQUIRE(zero.centroid_full == 0.0);
    REQUIRE(zero.centroid_projected == 0.0);

    Matrix other(3, std::vector<double>(4));
    for (auto& e : other)
        for (double& v : e) v = rng.uniform(-1.0, 1.0);
    auto ab = detail::distance_stats(embs, other);
    auto ba = detail::distance_stats(other, embs);
    REQUIRE(ab.mean_full == ba.mean_full);
    REQUIRE(ab.centroid_full == ba.centroid_full);
    REQUIRE(std::abs(ab.mean_projected - ba.mean_projected) <= 1e-9);
    REQUIRE(std::abs(ab.centroid_projected - ba.centroid_projected) <= 1e-9);
    REQUIRE(ab.mean_full > 0.0);

    REQUIRE_THROWS_AS(detail::distance_stats(embs, {{1.0, 2.0, 3.0, 4.0}}), contract_error);
    REQUIRE_THROWS_AS(detail::distance_stats({}, {}), contract_error);
}

TEST_CASE("mean embedding distance: identity, corruption, and job-count invariance", "[analysis]") {
    auto corpus = toy_corpus();
    WordVocab words = WordVocab::build(corpus, 1);
    CharVocab chars = CharVocab::build(corpus);
    ModelConfig config;
    config.d_char = 3;
    config.filters = {{1, 2}, {2, 3}};
    config.n_highway = 1;
    config.n_bilstm = 1;
    config.d_hidden = 3;
    config.max_word_len = 8;
    config.n_chars = chars.size();
    config.n_words = words.size();
    Rng rng = Rng::derived(11, "dist-model");
    ModelParams params = init_params(config, rng);

    auto same = mean_embedding_distance(params, corpus, corpus, chars);
    REQUIRE(same.pairs == corpus.size());
    REQUIRE(same.mean_full == 0.0);
    REQUIRE(same.mean_projected == 0.0);
    REQUIRE(same.centroid_full == 0.0);
    REQUIRE(same.centroid_projected == 0.0);

    auto corrupted = corpus;
    corrupted[0].tokens[1] = "dog";
    corrupted[2].tokens[1] = "cat";
    auto row = mean_embedding_distance(params, corpus, corrupted, chars);
    REQUIRE(row.mean_full > 0.0);
    REQUIRE(row.mean_projected >= 0.0);

    auto parallel = mean_embedding_distance(params, corpus, corrupted, chars, 4);
    REQUIRE(parallel.mean_full == row.mean_full);
    REQUIRE(parallel.mean_projected == row.mean_projected);
    REQUIRE(parallel.centroid_full == row.centroid_full);
    REQUIRE(parallel.centroid_projected == row.centroid_projected);

    auto shorter = corpus;
    shorter.pop_back();
    REQUIRE_THROWS_AS(mean_embedding_distance(params, corpus, shorter, chars), contract_error);
}

TEST_CASE("condition corpora: baseline and degenerate settings leave the corpus unchanged",
          "[analysis]") {
    auto corpus = toy_corpus();
    auto parses = toy_parses();
    auto knn = toy_knn();
    Lexicon lex = Lexicon::load_dict(data_path("pron_en.dict"));
    AsrChannel channel;
    channel.lexicon = &lex;
    channel.model = make_confusion_model();

    NoiseResources res;
    res.parses = &parses;
    res.knn = &knn;
    res.asr = &channel;

    std::vector<Condition> all;
    for (const auto& name : condition_names()) all.push_back(make_condition(name));

    SECTION("baseline stays untouched under aggressive noise settings") {
        channel.model.severity = 2.0;
        res.policy.p_select = 1.0;
        auto out = build_condition_corpora(corpus, all, res, 99);
        REQUIRE(out.size() == 4);
        REQUIRE(out[0].condition.name == "baseline");
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            REQUIRE(same_tokens(out[0].sentences[i], corpus[i]));
            REQUIRE(out[0].sentences[i].id == corpus[i].id);
        }
    }

    SECTION("severity 0 and p_select 0 make every condition the identity") {
        channel.model.severity = 0.0;
        res.policy.p_select = 0.0;
        auto out = build_condition_corpora(corpus, all, res, 99);
        for (const auto& cc : out) {
            REQUIRE(cc.sentences.size() == corpus.size());
            for (std::size_t i = 0; i < corpus.size(); ++i)
                REQUIRE(same_tokens(cc.sentences[i], corpus[i]));
        }
    }
}

TEST_CASE("condition corpora: semantic noise changes exactly the sampled span tokens",
          "[analysis]") {
    auto corpus = toy_corpus();
    auto parses = toy_parses();
    auto knn = toy_knn();

    NoiseResources res;
    res.parses = &parses;
    res.knn = &knn;
    res.policy.allowed_pos = {"NOUN"};
    res.policy.subtree_prob = 0.0;
    res.policy.max_targets = 10;

    SECTION("p_select 1 with self-free neighbors replaces every noun and nothing else") {
        res.policy.p_select = 1.0;
        auto out = build_condition_corpora(corpus, {make_condition("semantic")}, res, 5);
        const auto& sem = out[0].sentences;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            REQUIRE(sem[i].tokens.size() == corpus[i].tokens.size());
            for (std::size_t p = 0; p < corpus[i].tokens.size(); ++p) {
                if (parses[i].nodes[p].pos == "NOUN") {
                    REQUIRE(sem[i].tokens[p] != corpus[i].tokens[p]);
                    const auto* nb = knn.neighbors(corpus[i].tokens[p]);
                    REQUIRE(nb != nullptr);
                    bool from_neighbors = false;
                    for (const auto& e : *nb) from_neighbors = from_neighbors || e.word == sem[i].tokens[p];
                    REQUIRE(from_neighbors);
                } else {
                    REQUIRE(sem[i].tokens[p] == corpus[i].tokens[p]);
                }
            }
        }
    }

    SECTION("partial selection still only touches noun positions") {
        res.policy.p_select = 0.5;
        for (std::uint64_t seed : {1u, 2u, 3u}) {
            auto out = build_condition_corpora(corpus, {make_condition("semantic")}, res, seed);
            const auto& sem = out[0].sentences;
            for (std::size_t i = 0; i < corpus.size(); ++i)
                for (std::size_t p = 0; p < corpus[i].tokens.size(); ++p)
                    if (sem[i].tokens[p] != corpus[i].tokens[p])
                        REQUIRE(parses[i].nodes[p].pos == "NOUN");
        }
    }

    SECTION("a condition's corpus does not depend on which other conditions run") {
        res.policy.p_select = 0.5;
        Lexicon lex = Lexicon::load_dict(data_path("pron_en.dict"));
        AsrChannel channel;
        channel.lexicon = &lex;
        channel.model = make_confusion_model();
        channel.model.severity = 1.5;
        res.asr = &channel;

        auto solo = build_condition_corpora(corpus, {make_condition("semantic")}, res, 77);
        std::vector<Condition> all;
        for (const auto& name : condition_names()) all.push_back(make_condition(name));
        auto joint = build_condition_corpora(corpus, all, res, 77);
        REQUIRE(joint[2].condition.name == "semantic");
        for (std::size_t i = 0; i < corpus.size(); ++i)
            REQUIRE(same_tokens(solo[0].sentences[i], joint[2].sentences[i]));
    }
}

TEST_CASE("condition corpora: phonetic round trip stays inside the sampled spans", "[analysis]") {
    auto corpus = toy_corpus();
    auto parses = toy_parses();
    Lexicon lex = Lexicon::load_dict(data_path("pron_en.dict"));
    AsrChannel channel;
    channel.lexicon = &lex;
    channel.model = make_confusion_model();
    channel.model.severity = 2.0;

    NoiseResources res;
    res.parses = &parses;
    res.asr = &channel;
    res.policy.allowed_pos = {"NOUN"};
    res.policy.p_select = 1.0;
    res.policy.subtree_prob = 0.0;

    // Every toy sentence has its single noun at position 2 (1-based), so the
    // first token and everything after position 2 must survive verbatim.
    bool any_change = false;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto out = build_condition_corpora(corpus, {make_condition("asr")}, res, seed);
        const auto& asr = out[0].sentences;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            const auto& base = corpus[i].tokens;
            const auto& got = asr[i].tokens;
            REQUIRE(asr[i].id == corpus[i].id);
            REQUIRE(got.size() >= base.size() - 1);  // span may decode to nothing
            REQUIRE(got.front() == base.front());
            const std::size_t tail = base.size() - 2;
            for (std::size_t t = 0; t < tail; ++t)
                REQUIRE(got[got.size() - tail + t] == base[base.size() - tail + t]);
            any_change = any_change || got != base;
        }
    }
    REQUIRE(any_change);
}

TEST_CASE("condition corpora: missing resources and bad inputs are reported", "[analysis]") {
    auto corpus = toy_corpus();
    auto parses = toy_parses();
    auto knn = toy_knn();
    Lexicon lex = Lexicon::load_dict(data_path("pron_en.dict"));
    AsrChannel channel;
    channel.lexicon = &lex;
    channel.model = make_confusion_model();

    SECTION("unknown and duplicate condition names") {
        REQUIRE_THROWS_AS(make_condition("quiet"), config_error);
        NoiseResources res;
        res.parses = &parses;
        res.knn = &knn;
        REQUIRE_THROWS_WITH(
            build_condition_corpora(corpus, {make_condition("semantic"), make_condition("semantic")},
                                    res, 1),
            ContainsSubstring("twice"));
    }

    SECTION("each missing resource is named") {
        NoiseResources res;
        res.parses = &parses;
        REQUIRE_THROWS_WITH(build_condition_corpora(corpus, {make_condition("semantic")}, res, 1),
                            ContainsSubstring("nearest-neighbor"));
        REQUIRE_THROWS_WITH(build_condition_corpora(corpus, {make_condition("asr")}, res, 1),
                            ContainsSubstring("ASR channel"));
        res.parses = nullptr;
        res.knn = &knn;
        REQUIRE_THROWS_WITH(build_condition_corpora(corpus, {make_condition("semantic")}, res, 1),
                            ContainsSubstring("dependency parses"));
    }

    SECTION("baseline-only runs need no resources at all") {
        NoiseResources res;
        auto out = build_condition_corpora(corpus, {make_condition("baseline")}, res, 1);
        REQUIRE(out.size() == 1);
        for (std::size_t i = 0; i < corpus.size(); ++i)
            REQUIRE(same_tokens(out[0].sentences[i], corpus[i]));
    }

    SECTION("misaligned parses are rejected") {
        NoiseResources res;
        res.knn = &knn;
        std::vector<DepGraph> fewer(parses.begin(), parses.end() - 1);
        res.parses = &fewer;
        REQUIRE_THROWS_AS(build_condition_corpora(corpus, {make_condition("semantic")}, res, 1),
                          contract_error);

        auto swapped = parses;
        std::swap(swapped[0], swapped[2]);  // 4-node parse against 5-token sentence
        res.parses = &swapped;
        REQUIRE_THROWS_AS(build_condition_corpora(corpus, {make_condition("semantic")}, res, 1),
                          contract_error);
    }
}

TEST_CASE("perplexity grid: uniform checkpoints, absent rows, purity", "[analysis]") {
    auto corpus = toy_corpus();
    WordVocab words = WordVocab::build(corpus, 1);
    CharVocab chars = CharVocab::build(corpus);
    ModelConfig config;
    config.d_char = 3;
    config.filters = {{1, 2}, {2, 3}};
    config.n_highway = 1;
    config.n_bilstm = 1;
    config.d_hidden = 3;
    config.max_word_len = 8;
    config.n_chars = chars.size();
    config.n_words = words.size();

    const std::string ckpt = tmp_path("grid_zero.ckpt");
    save_checkpoint(zero_params(config), ckpt);

    std::vector<Sentence> valid(corpus.begin(), corpus.begin() + 2);
    std::vector<Sentence> test(corpus.begin() + 2, corpus.end());
    std::vector<GridRow> rows = {{"baseline", ckpt}, {"asr", tmp_path("grid_missing.ckpt")}};
    std::vector<GridColumn> cols = {{"baseline", &valid, &test}};

    auto grid = run_grid(rows, cols, words, chars);
    REQUIRE(grid.finetune_conditions == std::vector<std::string>{"baseline", "asr"});
    REQUIRE(grid.test_conditions == std::vector<std::string>{"baseline"});
    REQUIRE(grid.cells[0][0].present);
    // Zero parameters give a uniform predictive distribution, so the
    // pseudo-perplexity equals the output vocabulary size.
    REQUIRE(grid.cells[0][0].valid_ppl ==
            Catch::Approx(static_cast<double>(words.size())).epsilon(1e-9));
    REQUIRE(grid.cells[0][0].test_ppl ==
            Catch::Approx(static_cast<double>(words.size())).epsilon(1e-9));
    REQUIRE_FALSE(grid.cells[1][0].present);

    auto report = format_grid_report(grid, {"cfg:abc123"});
    REQUIRE_THAT(report, ContainsSubstring("# config-hash\tcfg:abc123"));
    REQUIRE_THAT(report, ContainsSubstring("fine-tuned on\tbaseline"));
    REQUIRE_THAT(report, ContainsSubstring("asr\t-"));
    REQUIRE_THAT(report, ContainsSubstring(" / "));

    auto grid2 = run_grid(rows, cols, words, chars, 3);
    REQUIRE(grid2.cells[0][0].valid_ppl == grid.cells[0][0].valid_ppl);
    REQUIRE(grid2.cells[0][0].test_ppl == grid.cells[0][0].test_ppl);
    REQUIRE(format_grid_report(grid2, {"cfg:abc123"}) == report);

    SECTION("vocabulary mismatch is rejected") {
        auto bigger = corpus;
        bigger.push_back({{"zebra", "sings", "loud"}, 3});
        WordVocab other_words = WordVocab::build(bigger, 1);
        CharVocab other_chars = CharVocab::build(bigger);
        REQUIRE_THROWS_AS(run_grid(rows, cols, other_words, other_chars), config_error);
    }

    SECTION("columns without corpora are rejected") {
        std::vector<GridColumn> bad = {{"baseline", &valid, nullptr}};
        REQUIRE_THROWS_AS(run_grid(rows, bad, words, chars), config_error);
    }

    SECTION("sub-1 perplexity cells are rejected at report time") {
        PplGrid broken;
        broken.finetune_conditions = {"baseline"};
        broken.test_conditions = {"baseline"};
        broken.cells = {{{true, 0.5, 2.0}}};
        REQUIRE_THROWS_AS(format_grid_report(broken), contract_error);
    }
}

TEST_CASE("distance report and projection dumps are labeled and deterministic", "[analysis]") {
    DistanceReport report;
    report.rows.push_back({"asr", 250, 1.25, 0.75, 1.0, 0.5});
    report.rows.push_back({"semantic", 250, 2.5, 1.5, 2.0, 1.0});
    auto text = format_distance_report(report, {"cfg:42"});
    REQUIRE_THAT(text, ContainsSubstring("# config-hash\tcfg:42"));
    REQUIRE_THAT(text, ContainsSubstring(
                           "condition\tpairs\tmean-pairwise-full\tmean-pairwise-2d\tcentroid-full\tcentroid-2d"));
    REQUIRE_THAT(text, ContainsSubstring("asr\t250\t1.250000\t0.750000\t1.000000\t0.500000"));
    REQUIRE(text == format_distance_report(report, {"cfg:42"}));

    DistanceReport negative;
    negative.rows.push_back({"asr", 1, -0.5, 0.0, 0.0, 0.0});
    REQUIRE_THROWS_AS(format_distance_report(negative), contract_error);

    auto pts = format_projection_points("asr", {{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}}, 2);
    REQUIRE_THAT(pts, ContainsSubstring("asr\tclean\t1.000000\t2.000000"));
    REQUIRE_THAT(pts, ContainsSubstring("asr\tcorrupt\t5.000000\t6.000000"));
    REQUIRE_THROWS_AS(format_projection_points("asr", {{1.0, 2.0}}, 5), contract_error);
}

TEST_CASE("plot emitters: well-formed deterministic SVG", "[analysis]") {
    std::vector<ScatterGroup> groups = {
        {"clean", {{0.0, 0.0}, {1.0, 1.0}, {2.0, 0.5}}},
        {"corrupt", {{0.5, 0.25}, {1.5, 0.75}}},
    };
    auto svg = render_scatter_svg(groups, "embedding projection");
    REQUIRE(svg.rfind("<svg", 0) == 0);
    REQUIRE_THAT(svg, ContainsSubstring("</svg>"));
    REQUIRE_THAT(svg, ContainsSubstring("embedding projection"));
    REQUIRE_THAT(svg, ContainsSubstring(">clean</text>"));
    REQUIRE_THAT(svg, ContainsSubstring(">corrupt</text>"));
    std::size_t circles = 0;
    for (std::size_t at = svg.find("<circle"); at != std::string::npos;
         at = svg.find("<circle", at + 1))
        ++circles;
    REQUIRE(circles == 3 + 2 + 2);  // points plus one legend dot per group
    REQUIRE(render_scatter_svg(groups, "embedding projection") == svg);

    std::vector<std::pair<std::string, double>> bars = {
        {"asr", 1.5}, {"semantic", 2.25}, {"asr+semantic", 3.0}};
    auto bar = render_bar_svg(bars, "mean distance");
    REQUIRE(bar.rfind("<svg", 0) == 0);
    REQUIRE_THAT(bar, ContainsSubstring("mean distance"));
    std::size_t rects = 0;
    for (std::size_t at = bar.find("<rect"); at != std::string::npos; at = bar.find("<rect", at + 1))
        ++rects;
    REQUIRE(rects == 3 + 1);  // bars plus the background
    REQUIRE_THAT(bar, ContainsSubstring(">asr+semantic</text>"));
    REQUIRE_THAT(bar, ContainsSubstring(">2.2500</text>"));
    REQUIRE(render_bar_svg(bars, "mean distance") == bar);

    REQUIRE_THROWS_AS(render_bar_svg({{"bad", -1.0}}, "x"), contract_error);
}

TEST_CASE("analysis: span sampling is a pure function of seed and sentence id", "[analysis]") {
    auto corpus = toy_corpus();
    auto parses = toy_parses();
    SamplingPolicy policy;
    policy.allowed_pos = {"NOUN"};
    policy.p_select = 1.0;
    policy.subtree_prob = 0.0;
    policy.max_targets = 10;

    // With certain selection and no subtree expansion, the spans are exactly
    // the NOUN positions regardless of the seed.
    auto spans = sample_condition_spans(corpus, parses, policy, 5);
    REQUIRE(spans.size() == corpus.size());
    for (const auto& per_sentence : spans) {
        REQUIRE(per_sentence.size() == 1);
        CHECK(per_sentence[0].start == 2);
        CHECK(per_sentence[0].end == 2);
    }

    // Same seed, same spans; permuting sentence order permutes span lists with
    // them because the stream keys on the sentence id, not the position.
    SamplingPolicy coin = policy;
    coin.p_select = 0.5;
    auto first = sample_condition_spans(corpus, parses, coin, 99);
    auto again = sample_condition_spans(corpus, parses, coin, 99);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        REQUIRE(first[i].size() == again[i].size());
        for (std::size_t j = 0; j < first[i].size(); ++j) {
            CHECK(first[i][j].start == again[i][j].start);
            CHECK(first[i][j].end == again[i][j].end);
        }
    }
    std::vector<Sentence> reversed(corpus.rbegin(), corpus.rend());
    std::vector<DepGraph> reversed_parses(parses.rbegin(), parses.rend());
    auto swapped = sample_condition_spans(reversed, reversed_parses, coin, 99);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& expect = first[corpus.size() - 1 - i];
        REQUIRE(swapped[i].size() == expect.size());
        for (std::size_t j = 0; j < expect.size(); ++j) {
            CHECK(swapped[i][j].start == expect[j].start);
            CHECK(swapped[i][j].end == expect[j].end);
        }
    }

    // Misaligned parses are rejected up front.
    std::vector<DepGraph> short_parses(parses.begin(), parses.end() - 1);
    CHECK_THROWS_AS(sample_condition_spans(corpus, short_parses, policy, 5), contract_error);
    std::vector<DepGraph> swapped_parses = {parses[2], parses[1], parses[0]};
    CHECK_THROWS_AS(sample_condition_spans(corpus, swapped_parses, policy, 5), contract_error);
}

TEST_CASE("analysis: external engine round trip splices transcripts over spans", "[analysis]") {
    auto corpus = toy_corpus();
    auto parses = toy_parses();
    SamplingPolicy policy;
    policy.allowed_pos = {"NOUN"};
    policy.p_select = 1.0;
    policy.subtree_prob = 0.0;
    policy.max_targets = 10;
    auto spans = sample_condition_spans(corpus, parses, policy, 5);

    // The identity engine returns the corpus unchanged, ids included.
    auto same = engine_roundtrip_corpus(corpus, spans, "cat");
    REQUIRE(same.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        CHECK(same[i].tokens == corpus[i].tokens);
        CHECK(same[i].id == corpus[i].id);
    }

    // An uppercasing engine touches exactly the span tokens.
    auto loud = engine_roundtrip_corpus(corpus, spans, "tr a-z A-Z");
    CHECK(loud[0].tokens == std::vector<std::string>{"the", "CAT", "runs", "fast"});
    CHECK(loud[1].tokens == std::vector<std::string>{"a", "DOG", "is", "big"});
    CHECK(loud[2].tokens == std::vector<std::string>{"the", "FOX", "jumped", "over", "it"});

    // Transcripts may change the token count under a span.
    auto widened = engine_roundtrip_corpus(corpus, spans, "sed 's/$/ indeed/'");
    CHECK(widened[0].tokens == std::vector<std::string>{"the", "cat", "indeed", "runs", "fast"});
    CHECK(widened[2].tokens ==
          std::vector<std::string>{"the", "fox", "indeed", "jumped", "over", "it"});
    auto emptied = engine_roundtrip_corpus(corpus, spans, "sed 's/.*//'");
    CHECK(emptied[0].tokens == std::vector<std::string>{"the", "runs", "fast"});
    CHECK(emptied[0].id == corpus[0].id);

    // Sentences with no spans pass through without engine contact.
    std::vector<std::vector<TargetSpan>> none(corpus.size());
    auto untouched = engine_roundtrip_corpus(corpus, none, "false");
    for (std::size_t i = 0; i < corpus.size(); ++i) CHECK(untouched[i].tokens == corpus[i].tokens);

    // Bad inputs are rejected before the engine runs; engine failures surface
    // as engine errors.
    std::vector<std::vector<TargetSpan>> misaligned(corpus.size() - 1);
    CHECK_THROWS_AS(engine_roundtrip_corpus(corpus, misaligned, "cat"), contract_error);
    auto oob = spans;
    oob[0][0].end = 9;
    CHECK_THROWS_AS(engine_roundtrip_corpus(corpus, oob, "cat"), contract_error);
    auto overlapping = spans;
    overlapping[0].push_back({2, 3});
    CHECK_THROWS_AS(engine_roundtrip_corpus(corpus, overlapping, "cat"), contract_error);
    CHECK_THROWS_AS(engine_roundtrip_corpus(corpus, spans, "false"), engine_error);
}
