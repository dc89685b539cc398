#pragma once

// Dependency-graph representation of sentences plus target-span sampling.
// Parses are ingested from CoNLL-U text; a small heuristic tagger provides
// flat parses when no external parse is available.

#include <algorithm>
#include <cstddef>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "telephonetic/corpus.hpp"
#include "telephonetic/error.hpp"
#include "telephonetic/rng.hpp"
#include "telephonetic/util.hpp"

namespace telephonetic {

struct DepNode {
    std::size_t index = 0;  // 1-based token position
    std::string word;
    std::string pos;        // coarse UPOS tag
    std::size_t head = 0;   // parent position; 0 means root
    std::string relation;
};

struct DepGraph {
    std::vector<DepNode> nodes;
    std::size_t sentence_id = 0;

    std::size_t size() const { return nodes.size(); }
    const DepNode& node(std::size_t index_1based) const {
        if (index_1based < 1 || index_1based > nodes.size())
            throw contract_error("node index " + std::to_string(index_1based) + " out of range");
        return nodes[index_1based - 1];
    }

    std::vector<std::vector<std::size_t>> children() const {
        std::vector<std::vector<std::size_t>> ch(nodes.size() + 1);
        for (const auto& n : nodes) ch[n.head].push_back(n.index);
        return ch;
    }

    // Exactly one root, heads in range, no self-loops, no cycles.
    void validate() const {
        std::size_t n = nodes.size();
        std::size_t roots = 0;
        for (const auto& nd : nodes) {
            if (nd.head > n)
                throw parse_error("sentence " + std::to_string(sentence_id) + ": head " +
                                  std::to_string(nd.head) + " of token " + std::to_string(nd.index) +
                                  " out of range");
            if (nd.head == nd.index)
                throw parse_error("sentence " + std::to_string(sentence_id) + ": token " +
                                  std::to_string(nd.index) + " is its own head");
            if (nd.head == 0) ++roots;
        }
        if (roots != 1)
            throw parse_error("sentence " + std::to_string(sentence_id) + ": expected exactly one root, found " +
                              std::to_string(roots));
        // Single parent per node + one root means acyclicity is equivalent to
        // every node reaching the root within n steps.
        for (const auto& nd : nodes) {
            std::size_t cur = nd.index, steps = 0;
            while (cur != 0) {
                cur = nodes[cur - 1].head;
                if (++steps > n)
                    throw parse_error("sentence " + std::to_string(sentence_id) +
                                      ": cycle involving token " + std::to_string(nd.index));
            }
        }
    }
};

struct TargetSpan {
    std::size_t start = 0;  // 1-based, inclusive
    std::size_t end = 0;    // 1-based, inclusive
    enum class Kind { node, subtree } kind = Kind::node;

    bool operator==(const TargetSpan& o) const {
        return start == o.start && end == o.end && kind == o.kind;
    }
};

struct SamplingPolicy {
    std::set<std::string> allowed_pos = {"ADJ", "NOUN"};
    double p_select = 0.3;
    double subtree_prob = 0.1;
    std::size_t max_targets = 3;

    void validate() const {
        if (p_select < 0.0 || p_select > 1.0)
            throw config_error("p_select must lie in [0,1], got " + fmt_double(p_select));
        if (subtree_prob < 0.0 || subtree_prob > 1.0)
            throw config_error("subtree_prob must lie in [0,1], got " + fmt_double(subtree_prob));
    }
};

// Parses one blank-line-free CoNLL-U block. Consumes columns ID, FORM, UPOS,
// HEAD, DEPREL; comment lines and multiword/empty-node ids are skipped.
inline DepGraph parse_conllu(const std::vector<std::string_view>& block_lines,
                             std::size_t sentence_id) {
    DepGraph g;
    g.sentence_id = sentence_id;
    for (std::string_view line : block_lines) {
        if (line.empty() || line[0] == '#') continue;
        auto cols = split(line, '\t');
        if (cols.size() < 8)
            throw format_error("sentence " + std::to_string(sentence_id) +
                               ": CoNLL-U row has " + std::to_string(cols.size()) +
                               " columns, need at least 8 (ID FORM ... HEAD DEPREL)");
        const std::string& id_col = cols[0];
        if (id_col.find('-') != std::string::npos || id_col.find('.') != std::string::npos)
            continue;  // multiword range or empty node
        DepNode n;
        n.index = static_cast<std::size_t>(
            parse_int(id_col, "sentence " + std::to_string(sentence_id) + " ID column"));
        n.word = cols[1];
        n.pos = cols[3];
        n.head = static_cast<std::size_t>(
            parse_int(cols[6], "sentence " + std::to_string(sentence_id) + " HEAD column"));
        n.relation = cols[7];
        if (n.index != g.nodes.size() + 1)
            throw format_error("sentence " + std::to_string(sentence_id) + ": token ids must run 1..n, got " +
                               id_col);
        g.nodes.push_back(std::move(n));
    }
    if (g.nodes.empty())
        throw format_error("sentence " + std::to_string(sentence_id) + ": empty CoNLL-U block");
    g.validate();
    return g;
}

inline DepGraph parse_conllu(std::string_view block_text, std::size_t sentence_id) {
    return parse_conllu(split_lines(block_text), sentence_id);
}

// Splits a CoNLL-U document into blank-line-separated blocks; graph ids are
// assigned in file order starting at 0.
inline std::vector<DepGraph> parse_conllu_file(std::string_view text) {
    std::vector<DepGraph> graphs;
    std::vector<std::string_view> block;
    auto flush = [&] {
        bool has_row = std::any_of(block.begin(), block.end(), [](std::string_view l) {
            return !l.empty() && l[0] != '#';
        });
        if (has_row) graphs.push_back(parse_conllu(block, graphs.size()));
        block.clear();
    };
    for (std::string_view line : split_lines(text)) {
        if (trim(line).empty()) {
            flush();
        } else {
            block.push_back(line);
        }
    }
    flush();
    return graphs;
}

// Minimal contiguous token range covering the node and all its descendants
// (covering range even when the parse is non-projective).
inline TargetSpan subtree_span(const DepGraph& g, std::size_t node_index) {
    g.node(node_index);  // bounds check
    auto ch = g.children();
    std::size_t lo = node_index, hi = node_index;
    std::vector<std::size_t> stack = {node_index};
    while (!stack.empty()) {
        std::size_t cur = stack.back();
        stack.pop_back();
        lo = std::min(lo, cur);
        hi = std::max(hi, cur);
        for (std::size_t c : ch[cur]) stack.push_back(c);
    }
    return {lo, hi, TargetSpan::Kind::subtree};
}

// Independent per-eligible-node selection, optional subtree expansion,
// earlier-start overlap resolution, then truncation to max_targets.
// Draw order is fixed (nodes in index order; expansion drawn only for
// selected nodes) so a seeded generator yields reproducible spans.
inline std::vector<TargetSpan> sample_targets(const DepGraph& g, const SamplingPolicy& policy,
                                              Rng& rng) {
    policy.validate();
    std::vector<TargetSpan> candidates;
    for (const auto& n : g.nodes) {
        if (policy.allowed_pos.count(n.pos) == 0) continue;
        if (!rng.bernoulli(policy.p_select)) continue;
        if (rng.bernoulli(policy.subtree_prob)) {
            candidates.push_back(subtree_span(g, n.index));
        } else {
            candidates.push_back({n.index, n.index, TargetSpan::Kind::node});
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const TargetSpan& a, const TargetSpan& b) {
        if (a.start != b.start) return a.start < b.start;
        return a.end < b.end;
    });
    std::vector<TargetSpan> kept;
    std::size_t last_end = 0;
    for (const auto& s : candidates) {
        if (!kept.empty() && s.start <= last_end) continue;
        kept.push_back(s);
        last_end = s.end;
    }
    if (kept.size() > policy.max_targets) kept.resize(policy.max_targets);
    return kept;
}

namespace detail {

inline const std::unordered_set<std::string>& closed_class_words() {
    static const std::unordered_set<std::string> words = {
        // determiners & pronouns
        "the", "a", "an", "this", "that", "these", "those", "some", "any", "each", "every",
        "no", "it", "its", "he", "she", "they", "them", "his", "her", "their", "we", "you",
        "i", "me", "my", "your", "our", "us", "him", "who", "which", "what",
        // prepositions & particles
        "of", "in", "on", "at", "by", "with", "from", "to", "for", "over", "under", "into",
        "onto", "through", "between", "against", "about", "after", "before", "during",
        "above", "below", "near", "off", "up", "down", "out",
        // conjunctions & misc function words
        "and", "or", "but", "nor", "so", "yet", "if", "then", "than", "as", "because",
        "while", "when", "where", "not", "n't", "there", "here",
    };
    return words;
}

inline const std::unordered_set<std::string>& verb_lexicon() {
    static const std::unordered_set<std::string> words = {
        "is",  "am",   "are",  "was",  "were", "be",   "been", "being", "has",  "have",
        "had", "do",   "does", "did",  "will", "would", "can", "could", "may",  "might",
        "must", "shall", "should", "go", "goes", "went", "gone", "ran", "run", "runs",
        "made", "make", "makes", "said", "say", "says", "saw", "see", "sees", "took",
        "take", "takes", "got", "get", "gets", "came", "come", "comes", "knew", "know",
        "knows", "ate", "eat", "eats", "sat", "sit", "sits", "stood", "stand", "stands",
    };
    return words;
}

inline bool ends_with(const std::string& w, std::string_view suffix) {
    return w.size() > suffix.size() && w.compare(w.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

// Coarse heuristic POS tag: closed-class lexicon first, then a verb lexicon,
// then suffix rules; everything else defaults to NOUN.
inline std::string fallback_pos_tag(const std::string& word) {
    using detail::ends_with;
    if (detail::closed_class_words().count(word)) return "OTHER";
    if (detail::verb_lexicon().count(word)) return "VERB";
    if (ends_with(word, "ly")) return "OTHER";
    if (ends_with(word, "ed") || ends_with(word, "ing")) return "VERB";
    for (const char* suf : {"ous", "ful", "ive", "able", "ible", "less", "ish", "est", "ic", "al"})
        if (ends_with(word, suf)) return "ADJ";
    return "NOUN";
}

// Flat fallback parse: every token hangs off a single root (the first
// VERB-tagged token, else the first token). Keeps the pipeline runnable
// without external parses; spans degenerate to single tokens or the whole
// sentence.
inline DepGraph fallback_parse(const Sentence& s) {
    if (s.tokens.empty()) throw contract_error("cannot parse an empty sentence");
    DepGraph g;
    g.sentence_id = s.id;
    std::vector<std::string> tags;
    tags.reserve(s.tokens.size());
    for (const auto& t : s.tokens) tags.push_back(fallback_pos_tag(t));
    std::size_t root = 0;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        if (tags[i] == "VERB") {
            root = i;
            break;
        }
    }
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
        DepNode n;
        n.index = i + 1;
        n.word = s.tokens[i];
        n.pos = tags[i];
        n.head = (i == root) ? 0 : root + 1;
        n.relation = (i == root) ? "root" : "dep";
        g.nodes.push_back(std::move(n));
    }
    g.validate();
    return g;
}

}  // namespace telephonetic
