// Command-line driver: eight subcommands over one config file. Every command
// loads the config, applies flag overrides, validates (reporting every
// violation at once), runs its pipeline stage, and prints staleness or
// fallback warnings to stderr. Exit codes: 0 success, 1 invalid configuration
// or usage, 2 runtime failure, 3 external engine failure.

#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "telephonetic/pipeline.hpp"

using namespace telephonetic;

namespace {

struct CliArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t jobs = 0;
    bool jobs_set = false;
    std::vector<std::string> overrides;
};

// "section.key=value" from --set.
void apply_override(RunConfig& cfg, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw config_error("--set expects section.key=value, got '" + assignment + "'");
    std::string key_path = trim(std::string_view(assignment).substr(0, eq));
    std::string value = trim(std::string_view(assignment).substr(eq + 1));
    auto dot = key_path.find('.');
    if (dot == std::string::npos)
        throw config_error("--set expects section.key=value, got '" + assignment + "'");
    set_config_value(cfg, key_path.substr(0, dot), key_path.substr(dot + 1), value);
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

std::string fmt4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

void print_train_summary(const std::string& name, const TrainResult& res) {
    std::printf("%s: valid PPL %s -> %s over %zu epoch(s)%s\n", name.c_str(),
                fmt4(res.initial_valid_ppl).c_str(), fmt4(res.best_valid_ppl).c_str(),
                res.metrics.size(), res.diverged ? " (diverged, kept best)" : "");
}

int dispatch(const std::string& command, const RunConfig& cfg) {
    std::vector<std::string> warnings;
    ArtifactPaths paths(cfg.output_dir);

    if (command == "ingest") {
        IngestResult res = run_ingest(cfg, warnings);
        print_warnings(warnings);
        std::printf("ingested %zu train / %zu valid / %zu test sentences\n", res.train_sentences,
                    res.valid_sentences, res.test_sentences);
        std::printf("word vocabulary: %zu entries -> %s\n", res.word_vocab_size,
                    paths.word_vocab().c_str());
        std::printf("char vocabulary: %zu entries -> %s\n", res.char_vocab_size,
                    paths.char_vocab().c_str());
    } else if (command == "build-knn") {
        KnnResult res = run_build_knn(cfg, warnings);
        print_warnings(warnings);
        std::printf("neighbor table: %zu rows, k=%zu -> %s\n", res.rows, res.k,
                    paths.knn().c_str());
    } else if (command == "augment") {
        AugmentResult res = run_augment(cfg, warnings);
        print_warnings(warnings);
        std::printf("wrote %zu corpus files under %s/corpus\n", res.written.size(),
                    paths.root.c_str());
    } else if (command == "train") {
        TrainResult res = run_train(cfg, warnings);
        print_warnings(warnings);
        print_train_summary("baseline", res);
        std::printf("checkpoint -> %s\n", paths.checkpoint("baseline").c_str());
    } else if (command == "finetune") {
        auto results = run_finetune(cfg, warnings);
        print_warnings(warnings);
        for (const auto& [name, res] : results) print_train_summary(name, res);
    } else if (command == "evaluate") {
        run_evaluate(cfg, warnings);
        print_warnings(warnings);
        std::fputs(read_text_file(paths.ppl_grid()).c_str(), stdout);
        std::printf("grid -> %s\n", paths.ppl_grid().c_str());
    } else if (command == "analyze") {
        run_analyze(cfg, warnings);
        print_warnings(warnings);
        std::fputs(read_text_file(paths.distance_report()).c_str(), stdout);
        std::printf("report -> %s\n", paths.distance_report().c_str());
    } else if (command == "reproduce") {
        run_reproduce(cfg, warnings);
        print_warnings(warnings);
        std::fputs(read_text_file(paths.ppl_grid()).c_str(), stdout);
        std::fputs(read_text_file(paths.distance_report()).c_str(), stdout);
        std::printf("artifacts -> %s\n", paths.root.c_str());
    } else {
        throw contract_error("unhandled command: " + command);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"character-aware language model robustness pipeline"};
    app.require_subcommand(1);

    const std::vector<std::pair<const char*, const char*>> commands = {
        {"ingest", "read the raw splits and build vocabularies"},
        {"build-knn", "build the embedding nearest-neighbor table (resumable)"},
        {"augment", "write corrupted corpora for every condition and split"},
        {"train", "train the baseline model on the clean split (resumable)"},
        {"finetune", "fine-tune one model per noisy condition (resumable)"},
        {"evaluate", "pseudo-perplexity grid across checkpoints and conditions"},
        {"analyze", "clean-vs-corrupted embedding distances and projections"},
        {"reproduce", "run the whole pipeline end to end"},
    };

    CliArgs args;
    std::vector<CLI::App*> subs;
    for (const auto& [name, desc] : commands) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("-c,--config", args.config_path, "run configuration file")
            ->required();
        sub->add_option_function<std::uint64_t>(
               "--seed",
               [&args](const std::uint64_t& v) {
                   args.seed = v;
                   args.seed_set = true;
               },
               "override [run] seed");
        sub->add_option_function<std::size_t>(
               "--jobs",
               [&args](const std::size_t& v) {
                   args.jobs = v;
                   args.jobs_set = true;
               },
               "override [run] jobs (does not change results)");
        sub->add_option("--set", args.overrides,
                        "override any key as section.key=value (repeatable)");
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    std::string command;
    for (std::size_t i = 0; i < subs.size(); ++i)
        if (subs[i]->parsed()) command = commands[i].first;

    std::vector<std::string> problems;
    RunConfig cfg;
    try {
        cfg = load_run_config(args.config_path, problems);
    } catch (const error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    for (const auto& assignment : args.overrides) {
        try {
            apply_override(cfg, assignment);
        } catch (const config_error& e) {
            problems.emplace_back(e.what());
        }
    }
    if (args.seed_set) cfg.seed = args.seed;
    if (args.jobs_set) cfg.jobs = args.jobs;

    for (const auto& v : validate_run_config(cfg)) problems.push_back(v);
    if (!problems.empty()) {
        std::fprintf(stderr, "configuration is invalid (%zu problem%s):\n", problems.size(),
                     problems.size() == 1 ? "" : "s");
        for (const auto& p : problems) std::fprintf(stderr, "  - %s\n", p.c_str());
        return 1;
    }

    try {
        return dispatch(command, cfg);
    } catch (const engine_error& e) {
        std::fprintf(stderr, "engine error: %s\n", e.what());
        return 3;
    } catch (const config_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
