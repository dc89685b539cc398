#pragma once

// Run configuration: one plain-text file with [section] headers and key=value
// lines drives every command. Parsing collects every violation instead of
// stopping at the first, command-line overrides reuse the same setters, and a
// canonical serialization feeds the config hash stamped into artifacts.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "telephonetic/analysis.hpp"
#include "telephonetic/asr.hpp"
#include "telephonetic/char_lm.hpp"
#include "telephonetic/error.hpp"
#include "telephonetic/rng.hpp"
#include "telephonetic/util.hpp"

namespace telephonetic {

struct RunConfig {
    // [paths] — relative entries resolve against the config file's directory.
    std::string train_corpus;
    std::string valid_corpus;
    std::string test_corpus;
    std::string train_parses;  // optional; empty uses the heuristic fallback parser
    std::string valid_parses;
    std::string test_parses;
    std::string embeddings;  // required only when a semantic condition is requested
    std::string pron_dict;   // required only when an asr condition uses the simulated channel
    std::string output_dir;
    std::string engine_command;    // optional external round-trip engine
    bool engine_fallback = false;  // fall back to the simulated channel on engine failure

    // [augment]
    std::vector<std::string> conditions = {"baseline", "asr", "semantic", "asr+semantic"};
    std::set<std::string> allowed_pos = {"ADJ", "NOUN"};
    double p_select = 0.3;
    double subtree_prob = 0.1;
    std::size_t max_targets = 3;
    std::size_t knn_k = 5;
    std::string similarity = "centered_dot";
    double severity = 1.0;
    double lambda = 0.5;
    double base_sub_rate = 0.15;
    double p_ins = 0.02;
    double p_del = 0.03;
    std::vector<std::string> speakers;  // names from the built-in profiles; empty selects all

    // [model] — vocabulary sizes are filled from data at training time.
    ModelConfig model;

    // [train]
    std::size_t min_count = 1;
    std::size_t batch_size = 512;
    double lr = 0.25;
    double momentum = 0.9;
    double anneal_threshold = 0.1;
    double p_m = 0.85;
    std::size_t epochs = 3;
    std::size_t finetune_epochs = 2;
    double finetune_lr_scale = 0.1;

    // [run] — jobs is an execution detail and stays out of the hash.
    std::uint64_t seed = 0;
    std::size_t jobs = 1;

    std::string serialize() const;
    std::string hash() const { return to_hex16(fnv1a64(serialize())); }
};

namespace detail {

inline std::string join_list(const std::vector<std::string>& parts) { return join(parts, ", "); }

inline std::vector<std::string> parse_list(std::string_view value) {
    std::vector<std::string> out;
    for (const auto& part : split(value, ',')) {
        std::string t = trim(part);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

inline bool parse_bool(std::string_view value, const std::string& key) {
    if (value == "true" || value == "yes" || value == "1") return true;
    if (value == "false" || value == "no" || value == "0") return false;
    throw config_error(key + " must be true or false, got '" + std::string(value) + "'");
}

inline std::uint64_t parse_u64(std::string_view value, const std::string& key) {
    if (value.empty() || value.find_first_not_of("0123456789") != std::string_view::npos)
        throw config_error(key + " must be a non-negative integer, got '" + std::string(value) + "'");
    try {
        return std::stoull(std::string(value));
    } catch (const std::exception&) {
        throw config_error(key + " does not fit in 64 bits: '" + std::string(value) + "'");
    }
}

inline std::size_t parse_size(std::string_view value, const std::string& key) {
    return static_cast<std::size_t>(parse_u64(value, key));
}

inline double parse_num(std::string_view value, const std::string& key) {
    try {
        return parse_double(value, key);
    } catch (const format_error& e) {
        throw config_error(e.what());
    }
}

// "width:count, width:count, …"
inline std::vector<std::pair<std::size_t, std::size_t>> parse_filters(std::string_view value,
                                                                      const std::string& key) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& part : parse_list(value)) {
        auto colon = part.find(':');
        if (colon == std::string::npos)
            throw config_error(key + " entries must look like width:count, got '" + part + "'");
        out.emplace_back(parse_size(trim(part.substr(0, colon)), key),
                         parse_size(trim(part.substr(colon + 1)), key));
    }
    if (out.empty()) throw config_error(key + " must name at least one filter bank");
    return out;
}

inline std::string format_filters(const std::vector<std::pair<std::size_t, std::size_t>>& filters) {
    std::string out;
    for (std::size_t i = 0; i < filters.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(filters[i].first) + ":" + std::to_string(filters[i].second);
    }
    return out;
}

}  // namespace detail

// Applies one "section.key = value" assignment; both the file parser and
// command-line overrides go through here. Unknown keys throw config_error.
inline void set_config_value(RunConfig& cfg, const std::string& section, const std::string& key,
                             const std::string& value, const std::string& base_dir = {}) {
    const std::string full = section + "." + key;
    auto as_path = [&](const std::string& v) {
        if (v.empty() || base_dir.empty()) return v;
        std::filesystem::path p(v);
        return p.is_absolute() ? v : (std::filesystem::path(base_dir) / p).lexically_normal().string();
    };

    if (section == "paths") {
        if (key == "train_corpus") cfg.train_corpus = as_path(value);
        else if (key == "valid_corpus") cfg.valid_corpus = as_path(value);
        else if (key == "test_corpus") cfg.test_corpus = as_path(value);
        else if (key == "train_parses") cfg.train_parses = as_path(value);
        else if (key == "valid_parses") cfg.valid_parses = as_path(value);
        else if (key == "test_parses") cfg.test_parses = as_path(value);
        else if (key == "embeddings") cfg.embeddings = as_path(value);
        else if (key == "pron_dict") cfg.pron_dict = as_path(value);
        else if (key == "output_dir") cfg.output_dir = as_path(value);
        else if (key == "engine_command") cfg.engine_command = value;
        else if (key == "engine_fallback") cfg.engine_fallback = detail::parse_bool(value, full);
        else throw config_error("unknown key '" + full + "'");
        return;
    }
    if (section == "augment") {
        if (key == "conditions") cfg.conditions = detail::parse_list(value);
        else if (key == "allowed_pos") {
            auto list = detail::parse_list(value);
            cfg.allowed_pos = std::set<std::string>(list.begin(), list.end());
        } else if (key == "p_select") cfg.p_select = detail::parse_num(value, full);
        else if (key == "subtree_prob") cfg.subtree_prob = detail::parse_num(value, full);
        else if (key == "max_targets") cfg.max_targets = detail::parse_size(value, full);
        else if (key == "knn_k") cfg.knn_k = detail::parse_size(value, full);
        else if (key == "similarity") cfg.similarity = value;
        else if (key == "severity") cfg.severity = detail::parse_num(value, full);
        else if (key == "lambda") cfg.lambda = detail::parse_num(value, full);
        else if (key == "base_sub_rate") cfg.base_sub_rate = detail::parse_num(value, full);
        else if (key == "p_ins") cfg.p_ins = detail::parse_num(value, full);
        else if (key == "p_del") cfg.p_del = detail::parse_num(value, full);
        else if (key == "speakers") cfg.speakers = detail::parse_list(value);
        else throw config_error("unknown key '" + full + "'");
        return;
    }
    if (section == "model") {
        if (key == "d_char") cfg.model.d_char = detail::parse_size(value, full);
        else if (key == "filters") cfg.model.filters = detail::parse_filters(value, full);
        else if (key == "n_highway") cfg.model.n_highway = detail::parse_size(value, full);
        else if (key == "n_bilstm") cfg.model.n_bilstm = detail::parse_size(value, full);
        else if (key == "d_hidden") cfg.model.d_hidden = detail::parse_size(value, full);
        else if (key == "max_word_len") cfg.model.max_word_len = detail::parse_size(value, full);
        else throw config_error("unknown key '" + full + "'");
        return;
    }
    if (section == "train") {
        if (key == "min_count") cfg.min_count = detail::parse_size(value, full);
        else if (key == "batch_size") cfg.batch_size = detail::parse_size(value, full);
        else if (key == "lr") cfg.lr = detail::parse_num(value, full);
        else if (key == "momentum") cfg.momentum = detail::parse_num(value, full);
        else if (key == "anneal_threshold") cfg.anneal_threshold = detail::parse_num(value, full);
        else if (key == "p_m") cfg.p_m = detail::parse_num(value, full);
        else if (key == "epochs") cfg.epochs = detail::parse_size(value, full);
        else if (key == "finetune_epochs") cfg.finetune_epochs = detail::parse_size(value, full);
        else if (key == "finetune_lr_scale") cfg.finetune_lr_scale = detail::parse_num(value, full);
        else throw config_error("unknown key '" + full + "'");
        return;
    }
    if (section == "run") {
        if (key == "seed") cfg.seed = detail::parse_u64(value, full);
        else if (key == "jobs") cfg.jobs = detail::parse_size(value, full);
        else throw config_error("unknown key '" + full + "'");
        return;
    }
    throw config_error("unknown section '[" + section + "]'");
}

// Parses config text, collecting one message per malformed line or unknown
// key instead of stopping early. `context` names the source in messages and
// `base_dir` anchors relative paths.
inline RunConfig parse_run_config(std::string_view text, const std::string& context,
                                  const std::string& base_dir, std::vector<std::string>& errors) {
    RunConfig cfg;
    std::string section;
    std::size_t line_no = 0;
    for (std::string_view raw : split_lines(text)) {
        ++line_no;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        const std::string where = context + ":" + std::to_string(line_no);
        if (line.front() == '[') {
            if (line.back() != ']') {
                errors.push_back(where + ": unterminated section header '" + line + "'");
                continue;
            }
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            errors.push_back(where + ": expected key = value, got '" + line + "'");
            continue;
        }
        std::string key = trim(std::string_view(line).substr(0, eq));
        std::string value = trim(std::string_view(line).substr(eq + 1));
        if (section.empty()) {
            errors.push_back(where + ": '" + key + "' appears before any [section] header");
            continue;
        }
        try {
            set_config_value(cfg, section, key, value, base_dir);
        } catch (const config_error& e) {
            errors.push_back(where + ": " + e.what());
        }
    }
    return cfg;
}

inline RunConfig load_run_config(const std::string& path, std::vector<std::string>& errors) {
    std::string text = read_text_file(path);
    std::string base = std::filesystem::path(path).parent_path().string();
    return parse_run_config(text, path, base, errors);
}

// Canonical form: every key in a fixed order, doubles printed exactly. This is
// the byte stream behind RunConfig::hash(), and it parses back losslessly.
inline std::string RunConfig::serialize() const {
    std::string out;
    out += "[paths]\n";
    out += "train_corpus = " + train_corpus + "\n";
    out += "valid_corpus = " + valid_corpus + "\n";
    out += "test_corpus = " + test_corpus + "\n";
    out += "train_parses = " + train_parses + "\n";
    out += "valid_parses = " + valid_parses + "\n";
    out += "test_parses = " + test_parses + "\n";
    out += "embeddings = " + embeddings + "\n";
    out += "pron_dict = " + pron_dict + "\n";
    out += "output_dir = " + output_dir + "\n";
    out += "engine_command = " + engine_command + "\n";
    out += std::string("engine_fallback = ") + (engine_fallback ? "true" : "false") + "\n";
    out += "[augment]\n";
    out += "conditions = " + detail::join_list(conditions) + "\n";
    out += "allowed_pos = " +
           detail::join_list(std::vector<std::string>(allowed_pos.begin(), allowed_pos.end())) + "\n";
    out += "p_select = " + fmt_double(p_select) + "\n";
    out += "subtree_prob = " + fmt_double(subtree_prob) + "\n";
    out += "max_targets = " + std::to_string(max_targets) + "\n";
    out += "knn_k = " + std::to_string(knn_k) + "\n";
    out += "similarity = " + similarity + "\n";
    out += "severity = " + fmt_double(severity) + "\n";
    out += "lambda = " + fmt_double(lambda) + "\n";
    out += "base_sub_rate = " + fmt_double(base_sub_rate) + "\n";
    out += "p_ins = " + fmt_double(p_ins) + "\n";
    out += "p_del = " + fmt_double(p_del) + "\n";
    out += "speakers = " + detail::join_list(speakers) + "\n";
    out += "[model]\n";
    out += "d_char = " + std::to_string(model.d_char) + "\n";
    out += "filters = " + detail::format_filters(model.filters) + "\n";
    out += "n_highway = " + std::to_string(model.n_highway) + "\n";
    out += "n_bilstm = " + std::to_string(model.n_bilstm) + "\n";
    out += "d_hidden = " + std::to_string(model.d_hidden) + "\n";
    out += "max_word_len = " + std::to_string(model.max_word_len) + "\n";
    out += "[train]\n";
    out += "min_count = " + std::to_string(min_count) + "\n";
    out += "batch_size = " + std::to_string(batch_size) + "\n";
    out += "lr = " + fmt_double(lr) + "\n";
    out += "momentum = " + fmt_double(momentum) + "\n";
    out += "anneal_threshold = " + fmt_double(anneal_threshold) + "\n";
    out += "p_m = " + fmt_double(p_m) + "\n";
    out += "epochs = " + std::to_string(epochs) + "\n";
    out += "finetune_epochs = " + std::to_string(finetune_epochs) + "\n";
    out += "finetune_lr_scale = " + fmt_double(finetune_lr_scale) + "\n";
    out += "[run]\n";
    out += "seed = " + std::to_string(seed) + "\n";
    return out;
}

// Every semantic violation in one pass; an empty result means the config is
// runnable. Referenced input paths must exist at validation time.
inline std::vector<std::string> validate_run_config(const RunConfig& cfg) {
    std::vector<std::string> out;
    auto need_file = [&](const std::string& path, const std::string& what, bool required) {
        if (path.empty()) {
            if (required) out.push_back(what + " is required but not configured");
            return;
        }
        if (!std::filesystem::exists(path)) out.push_back(what + " does not exist: " + path);
    };

    bool any_semantic = false, any_asr = false, baseline = false;
    std::set<std::string> seen;
    for (const auto& name : cfg.conditions) {
        try {
            Condition c = make_condition(name);
            any_semantic = any_semantic || c.apply_semantic;
            any_asr = any_asr || c.apply_asr;
            baseline = baseline || name == "baseline";
        } catch (const config_error& e) {
            out.emplace_back(e.what());
        }
        if (!seen.insert(name).second) out.push_back("condition '" + name + "' listed twice");
    }
    if (cfg.conditions.empty()) out.push_back("at least one condition is required");
    if (!cfg.conditions.empty() && !baseline)
        out.push_back("the condition list must include 'baseline'");

    need_file(cfg.train_corpus, "paths.train_corpus", true);
    need_file(cfg.valid_corpus, "paths.valid_corpus", true);
    need_file(cfg.test_corpus, "paths.test_corpus", true);
    need_file(cfg.train_parses, "paths.train_parses", false);
    need_file(cfg.valid_parses, "paths.valid_parses", false);
    need_file(cfg.test_parses, "paths.test_parses", false);
    need_file(cfg.embeddings, "paths.embeddings", any_semantic);
    need_file(cfg.pron_dict, "paths.pron_dict", any_asr && cfg.engine_command.empty());
    if (cfg.output_dir.empty()) out.push_back("paths.output_dir is required but not configured");

    auto in_unit = [&](double v, const std::string& key) {
        if (v < 0.0 || v > 1.0) out.push_back(key + " must lie in [0,1], got " + fmt_double(v));
    };
    in_unit(cfg.p_select, "augment.p_select");
    in_unit(cfg.subtree_prob, "augment.subtree_prob");
    in_unit(cfg.p_ins, "augment.p_ins");
    in_unit(cfg.p_del, "augment.p_del");
    in_unit(cfg.p_m, "train.p_m");
    if (cfg.base_sub_rate < 0.0 || cfg.base_sub_rate >= 1.0)
        out.push_back("augment.base_sub_rate must lie in [0,1), got " + fmt_double(cfg.base_sub_rate));
    if (cfg.severity < 0.0) out.push_back("augment.severity must be >= 0");
    if (cfg.lambda < 0.0) out.push_back("augment.lambda must be >= 0");
    if (cfg.knn_k < 1) out.push_back("augment.knn_k must be >= 1");
    if (cfg.similarity != "centered_dot" && cfg.similarity != "cosine")
        out.push_back("augment.similarity must be centered_dot or cosine, got '" + cfg.similarity +
                      "'");
    if (cfg.allowed_pos.empty()) out.push_back("augment.allowed_pos must name at least one tag");

    std::set<std::string> known_speakers;
    for (const auto& sp : default_speakers()) known_speakers.insert(sp.name);
    for (const auto& name : cfg.speakers)
        if (known_speakers.count(name) == 0)
            out.push_back("augment.speakers: unknown speaker '" + name + "'");

    if (cfg.model.d_char == 0 || cfg.model.d_hidden == 0 || cfg.model.n_highway == 0 ||
        cfg.model.n_bilstm == 0)
        out.push_back("model dimensions must be positive");
    if (cfg.model.max_word_len < 3) out.push_back("model.max_word_len must be >= 3");
    for (const auto& [w, c] : cfg.model.filters) {
        if (w == 0 || c == 0) out.push_back("model.filters widths and counts must be positive");
        else if (w > cfg.model.max_word_len)
            out.push_back("model.filters width " + std::to_string(w) + " exceeds max_word_len " +
                          std::to_string(cfg.model.max_word_len));
    }

    if (cfg.min_count < 1) out.push_back("train.min_count must be >= 1");
    if (cfg.batch_size < 1) out.push_back("train.batch_size must be >= 1");
    if (!(cfg.lr > 0.0)) out.push_back("train.lr must be > 0");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) out.push_back("train.momentum must lie in [0,1)");
    if (cfg.epochs < 1) out.push_back("train.epochs must be >= 1");
    if (cfg.finetune_epochs < 1) out.push_back("train.finetune_epochs must be >= 1");
    if (!(cfg.finetune_lr_scale > 0.0)) out.push_back("train.finetune_lr_scale must be > 0");
    return out;
}

}  // namespace telephonetic
