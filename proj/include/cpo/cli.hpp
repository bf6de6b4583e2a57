#pragma once

// Command-line surface: search, synthesize, stats, grad-demo, validate.
//
// Exit codes: 0 success, 1 runtime or partial failure, 2 usage error.
// Logs go to stderr as JSON lines; data goes to files, and to stdout only
// when a single artifact is requested.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpo/backend.hpp"
#include "cpo/core.hpp"
#include "cpo/grad_demo.hpp"
#include "cpo/http_backend.hpp"
#include "cpo/json_io.hpp"
#include "cpo/search.hpp"
#include "cpo/synthesis.hpp"

namespace cpo::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// A usage problem detected after argument parsing (missing file, bad value).
class UsageError : public Error {
public:
    using Error::Error;
};

struct Io {
    std::ostream& out;
    std::ostream& err;

    void log(std::string_view level, std::string_view msg, Json fields = Json::object()) const {
        fields["level"] = level;
        fields["msg"] = msg;
        err << fields.dump() << '\n';
    }
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Contents of --config: SearchConfig keys plus backend and run settings.
struct RunConfig {
    SearchConfig search;
    HttpBackendConfig http;
    int parallel = 1;
    TaskClass task_class = TaskClass::General;
};

inline RunConfig load_run_config(const std::string& path) {
    RunConfig rc;
    if (path.empty()) return rc;
    if (!fs::exists(path)) throw UsageError("config file '" + path + "' not found");
    const auto j = parse_json(read_file(path), "config");
    detail::check_fields(j, "config", {},
                         {"k", "n", "eval_samples", "gen_temperature", "eval_temperature", "max_depth", "seed",
                          "endpoint", "model", "api_key", "completions_path", "parallel", "task_class"});
    if (j.contains("task_class")) {
        const auto tc = detail::get_as<std::string>(j, "task_class", "config");
        if (tc == "arithmetic")
            rc.task_class = TaskClass::Arithmetic;
        else if (tc != "general")
            throw FormatError("config.task_class must be 'general' or 'arithmetic'");
    }
    Json search = Json::object();
    for (auto key : {"k", "n", "eval_samples", "gen_temperature", "eval_temperature", "max_depth", "seed"})
        if (j.contains(key)) search[key] = j[key];
    rc.search = config_from_json(search, default_config(rc.task_class));
    if (j.contains("endpoint")) rc.http.endpoint = detail::get_as<std::string>(j, "endpoint", "config");
    if (j.contains("model")) rc.http.model = detail::get_as<std::string>(j, "model", "config");
    if (j.contains("api_key")) rc.http.api_key = detail::get_as<std::string>(j, "api_key", "config");
    if (j.contains("completions_path"))
        rc.http.completions_path = detail::get_as<std::string>(j, "completions_path", "config");
    if (j.contains("parallel")) rc.parallel = detail::get_as<int>(j, "parallel", "config");
    return rc;
}

inline void require_readable(const std::string& path, std::string_view what) {
    if (path.empty()) throw UsageError(std::string(what) + " is required");
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) throw UsageError(std::string(what) + " '" + path + "' not found");
}

inline bool safe_instance_id(std::string_view id) {
    if (id.empty() || id == "." || id == "..") return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    });
}

inline constexpr std::string_view kTreeSuffix = ".tree.jsonl";

inline std::vector<fs::path> tree_files(const fs::path& dir_or_file) {
    std::vector<fs::path> out;
    if (fs::is_regular_file(dir_or_file)) return {dir_or_file};
    if (!fs::is_directory(dir_or_file)) return out;
    for (const auto& e : fs::directory_iterator(dir_or_file)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name.ends_with(kTreeSuffix)) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

struct SearchArgs {
    std::string questions;
    std::string pack;
    std::string config;
    std::string backend = "scripted";
    std::string script;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> parallel;
    std::optional<std::string> task_class;
};

inline int cmd_search(const SearchArgs& a, const Io& io) {
    std::vector<QuestionRecord> questions;
    PromptPack pack;
    RunConfig rc;
    std::unique_ptr<Backend> backend;
    try {
        require_readable(a.questions, "--questions");
        require_readable(a.pack, "--pack");
        if (a.out.empty()) throw UsageError("--out is required");
        rc = load_run_config(a.config);
        if (a.task_class) {
            // Re-derive temperature defaults unless the file pinned them.
            const auto tc = *a.task_class == "arithmetic" ? TaskClass::Arithmetic : TaskClass::General;
            auto file = a.config.empty() ? Json::object() : parse_json(read_file(a.config), "config");
            if (!file.contains("gen_temperature")) rc.search.gen_temperature = default_config(tc).gen_temperature;
            rc.task_class = tc;
        }
        if (a.seed) rc.search.seed = *a.seed;
        if (a.parallel) rc.parallel = *a.parallel;
        if (rc.parallel < 1) throw UsageError("--parallel must be >= 1");
        questions = decode_questions(read_file(a.questions));
        pack = pack_from_json(parse_json(read_file(a.pack), "pack"));

        if (a.backend == "scripted") {
            require_readable(a.script, "--script");
            backend = std::make_unique<ScriptedBackend>(decode_script(read_file(a.script)));
        } else if (a.backend == "http") {
            rc.http.apply_environment();
            backend = std::make_unique<HttpBackend>(rc.http);
        } else {
            throw UsageError("--backend must be 'http' or 'scripted'");
        }
    } catch (const UsageError& e) {
        io.log("error", e.what());
        return kExitUsage;
    } catch (const FormatError& e) {
        io.log("error", e.what());
        return kExitUsage;
    } catch (const InvalidArgument& e) {
        io.log("error", e.what());
        return kExitUsage;
    }

    // Resolve ids up front so collisions are a usage error, not a half-written run.
    std::vector<std::string> ids;
    std::set<std::string> seen;
    for (const auto& q : questions) {
        auto id = make_instance_id(q.instance_id, render_input(pack, q.text));
        if (!safe_instance_id(id) || !seen.insert(id).second) {
            io.log("error", "invalid or duplicate instance_id", {{"instance_id", id}});
            return kExitUsage;
        }
        ids.push_back(std::move(id));
    }

    fs::create_directories(a.out);
    const auto stamp = std::chrono::system_clock::now().time_since_epoch().count();
    Json manifest{{"run_id", "run-" + hex64(mix_seed(static_cast<std::uint64_t>(stamp), fnv1a64(a.out)))},
                  {"config", to_json(rc.search)},
                  {"pack_hash", pack_hash(pack)},
                  {"backend_descriptor", backend->descriptor()},
                  {"per_instance", Json::array()}};
    bool failed = false;
    for (std::size_t i = 0; i < questions.size(); ++i) {
        Json entry{{"instance_id", ids[i]}};
        try {
            const auto tree =
                run_search(questions[i].text, pack, rc.search, *backend, SearchOptions{ids[i], rc.parallel});
            write_file(fs::path(a.out) / (ids[i] + std::string(kTreeSuffix)),
                       encode_tree(tree, TreeEncodeOptions{.include_timing = false}));
            entry["latency_seconds"] = tree.wall_clock_seconds;
            entry["node_count"] = tree.nodes.size();
            entry["selected_leaf_count"] = tree.selected_leaves.size();
            entry["status"] = std::string(to_string(tree.status));
            if (auto leaf = best_leaf(tree)) entry["answer"] = extract_answer(tree.node(*leaf), tree.terminal_phrase);
            if (tree.status == TreeStatus::Incomplete) failed = true;
            io.log(tree.status == TreeStatus::Incomplete ? "error" : "info", "instance searched", entry);
        } catch (const std::exception& e) {
            failed = true;
            entry["latency_seconds"] = 0.0;
            entry["node_count"] = 0;
            entry["selected_leaf_count"] = 0;
            entry["status"] = "error";
            io.log("error", e.what(), {{"instance_id", ids[i]}});
        }
        manifest["per_instance"].push_back(entry);
    }
    write_file(fs::path(a.out) / "manifest.json", manifest.dump(2) + "\n");
    return failed ? kExitFailure : kExitOk;
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

struct SynthesizeArgs {
    std::string trees;
    std::string strategy = "all";
    std::string out;
};

/// "pairs.jsonl" -> "pairs.sft.jsonl" / "pairs.stats.json".
inline fs::path sibling_output(const fs::path& out, std::string_view suffix) {
    auto name = out.filename().string();
    if (name.ends_with(".jsonl")) name.resize(name.size() - 6);
    return out.parent_path() / (name + std::string(suffix));
}

inline int cmd_synthesize(const SynthesizeArgs& a, const Io& io) {
    const auto strategy = parse_strategy(a.strategy);
    if (!strategy) {
        io.log("error", "invalid strategy; expected all, lower or lowest", {{"strategy", a.strategy}});
        return kExitUsage;
    }
    if (a.out.empty() || a.trees.empty()) {
        io.log("error", "--trees and --out are required");
        return kExitUsage;
    }
    const auto files = tree_files(a.trees);
    if (files.empty()) {
        io.log("error", "no trees", {{"trees", a.trees}});
        return kExitFailure;
    }

    std::vector<PreferencePair> pairs;
    std::vector<SftPath> paths;
    std::size_t used = 0, skipped = 0, unpaired = 0;
    for (const auto& f : files) {
        SearchTree tree;
        try {
            tree = decode_tree(read_file(f));
        } catch (const Error& e) {
            io.log("error", e.what(), {{"file", f.string()}});
            return kExitFailure;
        }
        if (tree.selected_leaves.empty()) {
            ++skipped;
            io.log("warn", "tree has no selected path; skipped", {{"file", f.string()}});
            continue;
        }
        ++used;
        auto p = extract_pairs(tree, *strategy);
        pairs.insert(pairs.end(), p.begin(), p.end());
        auto s = extract_sft_paths(tree);
        paths.insert(paths.end(), s.begin(), s.end());
        unpaired += count_unpaired_preferred(tree, *strategy);
    }
    if (used == 0) {
        io.log("error", "no trees with a selected path");
        return kExitFailure;
    }

    auto stats = to_json(dataset_stats(pairs));
    stats["strategy"] = std::string(to_string(*strategy));
    stats["trees_used"] = used;
    stats["trees_skipped"] = skipped;
    stats["preferred_without_pairs"] = unpaired;
    stats["sft_path_count"] = paths.size();
    try {
        const fs::path out(a.out);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        write_file(out, encode_pairs(pairs));
        write_file(sibling_output(out, ".sft.jsonl"), encode_sft_paths(paths));
        write_file(sibling_output(out, ".stats.json"), stats.dump(2) + "\n");
    } catch (const std::exception& e) {
        io.log("error", e.what());
        return kExitFailure;
    }
    io.out << pairs.size() << '\n';
    io.log("info", "synthesized", {{"pairs", pairs.size()}, {"sft_paths", paths.size()}});
    return kExitOk;
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

struct StatsArgs {
    std::string pairs;
    std::string out;
};

inline int cmd_stats(const StatsArgs& a, const Io& io) {
    std::vector<PreferencePair> pairs;
    try {
        require_readable(a.pairs, "--pairs");
        pairs = decode_pairs(read_file(a.pairs));
    } catch (const UsageError& e) {
        io.log("error", e.what());
        return kExitUsage;
    } catch (const Error& e) {
        io.log("error", e.what());
        return kExitFailure;
    }
    const auto text = to_json(dataset_stats(pairs)).dump(2) + "\n";
    if (a.out.empty()) {
        io.out << text;
    } else {
        write_file(a.out, text);
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// grad-demo
// ---------------------------------------------------------------------------

struct GradDemoArgs {
    std::string pairs;  // empty: the built-in arithmetic chain
    std::string loss = "cpo";
    double beta = kDefaultBeta;
    int steps = 200;
    double lr = 0.1;
    int order = 2;
    std::uint64_t seed = 0;
    std::string out;
};

inline int cmd_grad_demo(const GradDemoArgs& a, const Io& io) {
    GradDemoOptions opt;
    if (a.loss == "cpo")
        opt.train_kind = LossKind::Cpo;
    else if (a.loss == "fpo")
        opt.train_kind = LossKind::Fpo;
    else {
        io.log("error", "--loss must be cpo or fpo");
        return kExitUsage;
    }
    if (!(a.beta > 0.0) || a.steps < 0 || a.lr < 0.0 || a.order < 0 || a.order > 2) {
        io.log("error", "need beta > 0, steps >= 0, lr >= 0, order in {0,1,2}");
        return kExitUsage;
    }
    opt.beta = a.beta;
    opt.steps = a.steps;
    opt.learning_rate = a.lr;
    opt.order = a.order;
    opt.seed = a.seed;

    std::vector<PreferencePair> pairs;
    try {
        if (a.pairs.empty()) {
            pairs = arithmetic_example_pairs();
        } else {
            require_readable(a.pairs, "--pairs");
            pairs = decode_pairs(read_file(a.pairs));
        }
    } catch (const UsageError& e) {
        io.log("error", e.what());
        return kExitUsage;
    } catch (const Error& e) {
        io.log("error", e.what());
        return kExitFailure;
    }

    GradDemoReport rep;
    try {
        rep = run_grad_demo(pairs, opt);
    } catch (const Error& e) {
        io.log("error", e.what());
        return kExitFailure;
    }

    auto& o = io.out;
    o << "pairs: " << rep.chain_pairs << " per-step, " << rep.full_path_pairs << " full-path; vocab "
      << rep.vocab_size << ", " << rep.parameter_count << " parameters\n";
    o << "shared-prefix-only rows: " << rep.shared_rows.size() << "\n";
    o << "  FPO max |grad| on them: " << rep.fpo_shared_max_abs << "\n";
    o << "  CPO max |grad| on them: " << rep.cpo_shared_max_abs << "\n";
    o << "finite differences (" << rep.fd_parameters_checked << " parameters): CPO rel err "
      << rep.cpo_fd_relative_error << ", FPO rel err " << rep.fpo_fd_relative_error << "\n";
    if (a.steps > 0) {
        const auto& first = rep.trace.front();
        const auto& last = rep.trace.back();
        o << "training (" << a.loss << ", " << a.steps << " steps, lr " << a.lr << "): loss " << first.loss << " -> "
          << last.loss << ", mean margin " << first.mean_margin << " -> " << last.mean_margin << "\n";
    }
    if (!a.out.empty()) {
        try {
            auto j = to_json(rep);
            j["options"] = {{"loss", a.loss}, {"beta", a.beta}, {"steps", a.steps}, {"lr", a.lr},
                            {"order", a.order}, {"seed", a.seed}};
            write_file(a.out, j.dump(2) + "\n");
        } catch (const Error& e) {
            io.log("error", e.what());
            return kExitFailure;
        }
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

struct ValidateArgs {
    std::string trees;
    std::string config;
};

inline int cmd_validate(const ValidateArgs& a, const Io& io) {
    RunConfig rc;
    try {
        rc = load_run_config(a.config);
    } catch (const Error& e) {
        io.log("error", e.what());
        return kExitUsage;
    }
    const auto files = tree_files(a.trees);
    if (files.empty()) {
        io.log("error", "no trees", {{"trees", a.trees}});
        return kExitFailure;
    }
    std::size_t bad = 0;
    for (const auto& f : files) {
        std::vector<std::string> violations;
        try {
            violations = validate_tree(decode_tree(read_file(f)), rc.search);
        } catch (const Error& e) {
            violations.push_back(e.what());
        }
        if (!violations.empty()) ++bad;
        for (const auto& v : violations) io.out << f.filename().string() << ": " << v << '\n';
    }
    io.log(bad ? "error" : "info", "validated", {{"trees", files.size()}, {"invalid", bad}});
    return bad ? kExitFailure : kExitOk;
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    const Io io{out, err};
    CLI::App app{"Tree-search preference data synthesis and preference-loss diagnostics", "cpo"};
    app.require_subcommand(1);

    SearchArgs sa;
    std::uint64_t seed = 0;
    int parallel = 1;
    std::string task_class;
    auto* search = app.add_subcommand("search", "Run tree search over a questions file");
    search->add_option("--questions", sa.questions, "Questions JSONL ({question, instance_id?})")->required();
    search->add_option("--pack", sa.pack, "Prompt pack JSON")->required();
    search->add_option("--config", sa.config, "Config JSON");
    search->add_option("--backend", sa.backend, "http or scripted")->check(CLI::IsMember({"http", "scripted"}));
    search->add_option("--script", sa.script, "Script JSONL for the scripted backend");
    search->add_option("--out", sa.out, "Output directory")->required();
    auto* seed_opt = search->add_option("--seed", seed, "Search seed");
    auto* par_opt = search->add_option("--parallel", parallel, "Concurrent backend requests")->check(CLI::PositiveNumber);
    auto* tc_opt = search->add_option("--task-class", task_class, "general (T=0.4) or arithmetic (T=0.9)")
                       ->check(CLI::IsMember({"general", "arithmetic"}));

    SynthesizeArgs ya;
    auto* synth = app.add_subcommand("synthesize", "Emit preference pairs, SFT paths and stats from trees");
    synth->add_option("--trees", ya.trees, "Directory of *.tree.jsonl files")->required();
    synth->add_option("--strategy", ya.strategy, "all, lower or lowest");
    synth->add_option("--out", ya.out, "Pair file (JSONL)")->required();

    StatsArgs ta;
    auto* stats = app.add_subcommand("stats", "Dataset statistics for a pair file");
    stats->add_option("--pairs", ta.pairs, "Pair file (JSONL)")->required();
    stats->add_option("--out", ta.out, "Write JSON here instead of stdout");

    GradDemoArgs ga;
    auto* grad = app.add_subcommand("grad-demo", "Loss/gradient diagnostics on a toy model");
    grad->add_option("--pairs", ga.pairs, "Pair file (default: built-in arithmetic chain)");
    grad->add_option("--loss", ga.loss, "Training objective: cpo or fpo");
    grad->add_option("--beta", ga.beta, "Preference strength");
    grad->add_option("--steps", ga.steps, "Gradient-descent steps (0: report only)");
    grad->add_option("--lr", ga.lr, "Learning rate");
    grad->add_option("--order", ga.order, "Toy model context length (0-2)");
    grad->add_option("--seed", ga.seed, "Seed for the reference model");
    grad->add_option("--out", ga.out, "JSON report path");

    ValidateArgs va;
    auto* validate = app.add_subcommand("validate", "Check tree invariants");
    validate->add_option("--trees", va.trees, "Tree file or directory")->required();
    validate->add_option("--config", va.config, "Config JSON the trees were built with");

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        io.log("error", e.what());
        return kExitUsage;
    }

    try {
        if (*search) {
            if (*seed_opt) sa.seed = seed;
            if (*par_opt) sa.parallel = parallel;
            if (*tc_opt) sa.task_class = task_class;
            return cmd_search(sa, io);
        }
        if (*synth) return cmd_synthesize(ya, io);
        if (*stats) return cmd_stats(ta, io);
        if (*grad) return cmd_grad_demo(ga, io);
        if (*validate) return cmd_validate(va, io);
    } catch (const std::exception& e) {
        io.log("error", e.what());
        return kExitFailure;
    }
    return kExitUsage;
}

inline int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(std::move(args));
}

}  // namespace cpo::cli
