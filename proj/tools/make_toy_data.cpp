// Generates the bundled toy dataset: template sentences over the words of
// data/pron_en.dict with gold dependency parses, plus cluster-structured
// embeddings whose nearest neighbors stay inside their semantic cluster.
// Deterministic for a given seed, so the checked-in files can be regenerated
// and diffed.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "telephonetic/rng.hpp"
#include "telephonetic/util.hpp"

using namespace telephonetic;

namespace {

// Word classes drawn from the pronunciation dictionary. "gold" serves as a
// color adjective; "jumped" only appears in its own fixed template so every
// generated verb agrees with its singular subject.
const std::vector<std::string> kDets = {"a", "the", "this", "that"};
const std::vector<std::string> kPreps = {"at",   "behind", "beside", "by",   "in",
                                         "near", "on",     "over",   "under", "with"};
const std::vector<std::string> kAdverbs = {"calmly", "loudly", "quickly", "slowly", "softly"};
const std::vector<std::string> kTransVerbs = {"brings", "buys",  "carries", "cooks", "drops",
                                              "eats",   "finds", "holds",   "keeps", "lifts",
                                              "makes",  "pulls", "pushes",  "sees",  "sells",
                                              "takes"};
const std::vector<std::string> kMotionVerbs = {"jumps", "moves", "runs", "walks"};

const std::vector<std::vector<std::string>> kNounClusters = {
    {"bat", "bear", "cat", "deer", "dog", "fish", "fox", "hare", "mole", "owl", "wolf"},
    {"boy", "child", "friend", "girl", "guest", "man", "rider", "singer", "walker", "woman"},
    {"apple", "bread", "cake", "cheese", "corn", "grape", "meat", "rice", "soup"},
    {"box", "brush", "chair", "clock", "cup", "knife", "lamp", "plate", "spoon", "table"},
    {"barn", "bridge", "cabin", "field", "garden", "hill", "house", "market", "river", "tower"},
};
const std::vector<std::vector<std::string>> kAdjClusters = {
    {"black", "blue", "brown", "gold", "gray", "green", "pink", "red", "white"},
    {"big", "broad", "huge", "long", "short", "small", "tall", "thin", "tiny", "wide"},
    {"busy", "calm", "cold", "dark", "dry", "lazy", "loud", "quick", "slow", "soft", "warm"},
};

std::vector<std::string> flatten(const std::vector<std::vector<std::string>>& clusters) {
    std::vector<std::string> out;
    for (const auto& c : clusters) out.insert(out.end(), c.begin(), c.end());
    return out;
}

const std::string& pick(const std::vector<std::string>& list, Rng& rng) {
    return list[static_cast<std::size_t>(rng.uniform_int(list.size()))];
}

struct Token {
    std::string form;
    std::string pos;
    std::size_t head;  // 1-based; 0 for the root
    std::string rel;
};

// One generated sentence with its gold parse.
std::vector<Token> make_sentence(Rng& rng, const std::vector<std::string>& nouns,
                                 const std::vector<std::string>& adjs) {
    const auto shape = static_cast<int>(rng.uniform_int(7));
    std::vector<Token> t;
    auto det = [&](std::size_t head) { t.push_back({pick(kDets, rng), "DET", head, "det"}); };
    auto adj = [&](std::size_t head) { t.push_back({pick(adjs, rng), "ADJ", head, "amod"}); };
    auto noun = [&](std::size_t head, const char* rel) {
        t.push_back({pick(nouns, rng), "NOUN", head, rel});
    };
    auto verb = [&](const std::vector<std::string>& list) {
        t.push_back({pick(list, rng), "VERB", 0, "root"});
    };
    auto prep = [&](std::size_t head) { t.push_back({pick(kPreps, rng), "ADP", head, "case"}); };
    auto adv = [&](std::size_t head) { t.push_back({pick(kAdverbs, rng), "ADV", head, "advmod"}); };

    switch (shape) {
        case 0:  // the big cat sees a mole
            det(3), adj(3), noun(4, "nsubj"), verb(kTransVerbs), det(6), noun(4, "obj");
            break;
        case 1:  // a fox jumps over the wide river
            det(2), noun(3, "nsubj"), verb(kMotionVerbs), prep(7), det(7), adj(7),
                noun(3, "obl");
            break;
        case 2:  // the quick brown fox finds the cheese quickly
            det(4), adj(4), adj(4), noun(5, "nsubj"), verb(kTransVerbs), det(7), noun(5, "obj"),
                adv(5);
            break;
        case 3:  // the girl near the barn buys a warm cake
            det(2), noun(6, "nsubj"), prep(5), det(5), noun(2, "nmod"), verb(kTransVerbs), det(9),
                adj(9), noun(6, "obj");
            break;
        case 4:  // the man sells the bread at the market
            det(2), noun(3, "nsubj"), verb(kTransVerbs), det(5), noun(3, "obj"), prep(8), det(8),
                noun(3, "obl");
            break;
        case 5:  // the lazy dog walks slowly
            det(3), adj(3), noun(4, "nsubj"), verb(kMotionVerbs), adv(4);
            break;
        default:  // the fox jumped over the river
            det(2), noun(3, "nsubj");
            t.push_back({"jumped", "VERB", 0, "root"});
            prep(6), det(6), noun(3, "obl");
            break;
    }
    return t;
}

void write_split(const std::string& dir, const std::string& split, std::size_t n, Rng& rng,
                 const std::vector<std::string>& nouns, const std::vector<std::string>& adjs) {
    std::string text, conllu;
    for (std::size_t i = 0; i < n; ++i) {
        auto tokens = make_sentence(rng, nouns, adjs);
        for (std::size_t j = 0; j < tokens.size(); ++j) {
            if (j) text += ' ';
            text += tokens[j].form;
            conllu += std::to_string(j + 1) + "\t" + tokens[j].form + "\t_\t" + tokens[j].pos +
                      "\t_\t_\t" + std::to_string(tokens[j].head) + "\t" + tokens[j].rel + "\n";
        }
        text += '\n';
        conllu += '\n';
    }
    write_text_file(dir + "/" + split + ".txt", text);
    write_text_file(dir + "/" + split + ".conllu", conllu);
    std::printf("%s: %zu sentences\n", split.c_str(), n);
}

// Embeddings: one well-separated Gaussian center per cluster, small per-word
// noise, so each word's nearest neighbors stay inside its own cluster.
void write_embeddings(const std::string& path, Rng& rng, std::size_t dim) {
    std::vector<std::vector<std::string>> clusters;
    for (const auto& c : kNounClusters) clusters.push_back(c);
    for (const auto& c : kAdjClusters) clusters.push_back(c);
    std::vector<std::string> verbs_and_adverbs = kTransVerbs;
    verbs_and_adverbs.insert(verbs_and_adverbs.end(), kMotionVerbs.begin(), kMotionVerbs.end());
    verbs_and_adverbs.push_back("jumped");
    verbs_and_adverbs.insert(verbs_and_adverbs.end(), kAdverbs.begin(), kAdverbs.end());
    clusters.push_back(verbs_and_adverbs);
    std::vector<std::string> function_words = kDets;
    function_words.insert(function_words.end(), kPreps.begin(), kPreps.end());
    clusters.push_back(function_words);

    std::size_t n_words = 0;
    for (const auto& c : clusters) n_words += c.size();

    std::string out = std::to_string(n_words) + " " + std::to_string(dim) + "\n";
    for (const auto& cluster : clusters) {
        std::vector<double> center(dim);
        for (double& v : center) v = 6.0 * rng.normal();
        for (const auto& word : cluster) {
            out += word;
            for (std::size_t j = 0; j < dim; ++j)
                out += " " + fmt_double(center[j] + 0.5 * rng.normal());
            out += "\n";
        }
    }
    write_text_file(path, out);
    std::printf("embeddings: %zu words, %zu dims\n", n_words, dim);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"generate the bundled toy corpus, parses, and embeddings"};
    std::string out_dir;
    std::size_t n_train = 4500, n_valid = 250, n_test = 250, dim = 16;
    std::uint64_t seed = 20260815;
    app.add_option("out_dir", out_dir, "output directory")->required();
    app.add_option("--train", n_train, "training sentences");
    app.add_option("--valid", n_valid, "validation sentences");
    app.add_option("--test", n_test, "test sentences");
    app.add_option("--dim", dim, "embedding dimensions");
    app.add_option("--seed", seed, "generator seed");
    CLI11_PARSE(app, argc, argv);

    std::filesystem::create_directories(out_dir);
    const auto nouns = flatten(kNounClusters);
    const auto adjs = flatten(kAdjClusters);

    Rng corpus_rng = Rng::derived(seed, "toy-corpus", {});
    write_split(out_dir, "train", n_train, corpus_rng, nouns, adjs);
    write_split(out_dir, "valid", n_valid, corpus_rng, nouns, adjs);
    write_split(out_dir, "test", n_test, corpus_rng, nouns, adjs);

    Rng emb_rng = Rng::derived(seed, "toy-embeddings", {});
    write_embeddings(out_dir + "/embeddings.txt", emb_rng, dim);
    return 0;
}
