#pragma once

// Breadth-first tree-of-thought search with level-wide pruning.
//
// Each kept state is expanded into k sampled thoughts (stop sequence
// "Step {i+1},"), every child is scored by repeated self-evaluation with
// shuffled demonstrations (likely = 10, impossible = 1, averaged), and the n
// best children across the whole level survive. Children containing the
// terminal phrase are frozen; the search ends when no non-terminal state
// survives or max_depth is reached.

#include <chrono>
#include <cctype>
#include <optional>
#include <string>
#include <vector>

#include "cpo/backend.hpp"
#include "cpo/core.hpp"
#include "cpo/json_io.hpp"

namespace cpo {

inline constexpr std::string_view kDefaultTerminalPhrase = "so the final answer is:";
inline constexpr std::string_view kDefaultEvalGuideline =
    "Evaluate whether the thought helps in partially or directly answering the original question "
    "(likely/impossible).";

inline constexpr int kThoughtMaxTokens = 256;
inline constexpr int kEvaluationMaxTokens = 128;

class ExpansionFailed : public Error {
public:
    using Error::Error;
};

class MissingPhrase : public Error {
public:
    using Error::Error;
};

struct PromptPack {
    std::string task_id;
    std::string cot_demonstrations;
    std::string eval_guideline = std::string(kDefaultEvalGuideline);
    std::vector<std::string> eval_demonstrations;
    std::string terminal_phrase = std::string(kDefaultTerminalPhrase);

    void validate() const {
        if (terminal_phrase.empty()) throw InvalidArgument("prompt pack: terminal_phrase is empty");
        if (trim(eval_guideline).empty()) throw InvalidArgument("prompt pack: eval_guideline is empty");
    }
};

inline Json to_json(const PromptPack& p) {
    return Json{{"task_id", p.task_id},
                {"cot_demonstrations", p.cot_demonstrations},
                {"eval_guideline", p.eval_guideline},
                {"eval_demonstrations", p.eval_demonstrations},
                {"terminal_phrase", p.terminal_phrase}};
}

inline PromptPack pack_from_json(const Json& j) {
    constexpr std::string_view what = "PromptPack";
    detail::check_fields(j, what, {"task_id", "cot_demonstrations", "eval_demonstrations"},
                         {"eval_guideline", "terminal_phrase"});
    PromptPack p;
    p.task_id = detail::get_as<std::string>(j, "task_id", what);
    p.cot_demonstrations = detail::get_as<std::string>(j, "cot_demonstrations", what);
    p.eval_demonstrations = detail::get_as<std::vector<std::string>>(j, "eval_demonstrations", what);
    if (j.contains("eval_guideline")) p.eval_guideline = detail::get_as<std::string>(j, "eval_guideline", what);
    if (j.contains("terminal_phrase")) p.terminal_phrase = detail::get_as<std::string>(j, "terminal_phrase", what);
    try {
        p.validate();
    } catch (const InvalidArgument& e) {
        throw FormatError(e.what());
    }
    return p;
}

inline std::string pack_hash(const PromptPack& p) { return hex64(fnv1a64(to_json(p).dump())); }

/// One line of a questions file: {"question": ..., "instance_id": optional}.
struct QuestionRecord {
    std::string instance_id;
    std::string text;
};

inline std::string encode_questions(const std::vector<QuestionRecord>& qs) {
    std::string out;
    for (const auto& q : qs) {
        Json j{{"question", q.text}};
        if (!q.instance_id.empty()) j["instance_id"] = q.instance_id;
        out += j.dump() + "\n";
    }
    return out;
}

inline std::vector<QuestionRecord> decode_questions(std::string_view text) {
    std::vector<QuestionRecord> out;
    for (const auto& line : split_lines(text)) {
        const auto j = parse_json(line, "Question");
        detail::check_fields(j, "Question", {"question"}, {"instance_id"});
        QuestionRecord q;
        q.text = detail::get_as<std::string>(j, "question", "Question");
        if (j.contains("instance_id")) q.instance_id = detail::get_as<std::string>(j, "instance_id", "Question");
        out.push_back(std::move(q));
    }
    return out;
}

struct Judgment {
    std::string justification;
    Verdict verdict = Verdict::Impossible;
};

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

inline std::string step_marker(int step) { return "Step " + std::to_string(step) + ","; }

/// The input x: generation demonstrations followed by the question.
inline std::string render_input(const PromptPack& pack, std::string_view question) {
    std::string out = trim(pack.cot_demonstrations);
    if (!out.empty()) out += "\n\n";
    out += "Question: ";
    out += trim(question);
    out += "\nAnswer:";
    return out;
}

inline ReasoningState initial_state(const PromptPack& pack, std::string_view question) {
    return ReasoningState{trim(question), render_input(pack, question), {}};
}

/// x, the prior thoughts, then the "Step {next_step}," prefix. The pack's
/// demonstrations are already part of x.
inline std::string build_generation_prompt(const PromptPack& /*pack*/, const ReasoningState& state, int next_step) {
    if (next_step != state.depth() + 1)
        throw InvalidArgument("next_step must be one past the last thought");
    return render_state(state.input, state.thoughts) + " " + step_marker(next_step);
}

inline std::string build_evaluation_prompt(const PromptPack& pack, const ReasoningState& state,
                                           const std::vector<std::string>& demonstrations) {
    std::string out = trim(pack.eval_guideline);
    for (const auto& d : demonstrations) {
        out += "\n\n";
        out += trim(d);
    }
    out += "\n\nQuestion: ";
    out += state.question;
    out += "\nThoughts:";
    for (const auto& t : state.thoughts) {
        out.push_back(' ');
        out += t.text;
    }
    out += "\nEvaluation:";
    return out;
}

// ---------------------------------------------------------------------------
// Thought generation
// ---------------------------------------------------------------------------

/// Completion -> thought text. Prepends the step marker unless the model
/// already echoed it. Empty completions yield nothing.
inline std::optional<std::string> parse_thought_text(std::string_view completion, int step) {
    auto text = trim(completion);
    if (text.empty()) return std::nullopt;
    const auto marker = step_marker(step);
    if (text.rfind(marker, 0) == 0) return text;
    return marker + " " + text;
}

inline std::vector<GenerationRequest> generation_requests(const PromptPack& pack, const ReasoningState& state,
                                                          const SearchConfig& config) {
    const int next = state.depth() + 1;
    const auto prompt = build_generation_prompt(pack, state, next);
    std::vector<GenerationRequest> out;
    out.reserve(static_cast<std::size_t>(config.k));
    for (int j = 0; j < config.k; ++j) {
        GenerationRequest r;
        r.prompt = prompt;
        r.temperature = config.gen_temperature;
        r.stop_sequences = {step_marker(next + 1)};
        r.max_new_tokens = kThoughtMaxTokens;
        r.sample_seed = static_cast<std::uint64_t>(j);
        out.push_back(std::move(r));
    }
    return out;
}

struct Expansion {
    std::vector<Thought> thoughts;
    std::vector<std::string> errors;  // one per failed sample
};

/// Turns k generation slots into deduplicated thoughts. Throws
/// ExpansionFailed when no sample produced a thought.
inline Expansion collect_thoughts(const ReasoningState& state, const std::vector<BatchSlot>& slots) {
    const int step = state.depth() + 1;
    Expansion out;
    std::vector<std::string> seen;
    for (std::size_t j = 0; j < slots.size(); ++j) {
        const auto& slot = slots[j];
        if (!slot.ok()) {
            out.errors.push_back("sample " + std::to_string(j) + ": " + slot.error);
            continue;
        }
        auto text = parse_thought_text(slot.response->text, step);
        if (!text) {
            out.errors.push_back("sample " + std::to_string(j) + ": empty completion");
            continue;
        }
        auto key = normalize_whitespace(*text);
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
        seen.push_back(std::move(key));
        out.thoughts.push_back(Thought{std::move(*text), step, static_cast<int>(j)});
    }
    if (out.thoughts.empty()) {
        std::string msg = "no usable sample at step " + std::to_string(step);
        if (!out.errors.empty()) msg += " (" + out.errors.front() + ")";
        throw ExpansionFailed(msg);
    }
    return out;
}

inline Expansion expand_state(const ReasoningState& state, const PromptPack& pack, const SearchConfig& config,
                              Backend& backend, int parallelism = 1) {
    if (state.depth() >= config.max_depth) throw InvalidArgument("state already at max_depth");
    auto batch = generate_batch(backend, generation_requests(pack, state, config), parallelism);
    return collect_thoughts(state, batch.slots);
}

// ---------------------------------------------------------------------------
// State evaluation
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

inline std::string lowercase(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

/// Position of the last whole-word occurrence of `word` in `text`.
inline std::optional<std::size_t> last_word(const std::string& text, std::string_view word) {
    auto pos = text.rfind(word);
    while (pos != std::string::npos) {
        const bool left = pos == 0 || !is_word_char(text[pos - 1]);
        const auto end = pos + word.size();
        const bool right = end >= text.size() || !is_word_char(text[end]);
        if (left && right) return pos;
        if (pos == 0) break;
        pos = text.rfind(word, pos - 1);
    }
    return std::nullopt;
}

}  // namespace detail

/// The verdict is the last class word in the completion (case-insensitive,
/// whole word); everything before it is the justification.
inline std::optional<Judgment> parse_judgment(std::string_view completion) {
    const auto lower = detail::lowercase(completion);
    const auto likely = detail::last_word(lower, "likely");
    const auto impossible = detail::last_word(lower, "impossible");
    if (!likely && !impossible) return std::nullopt;
    Judgment j;
    std::size_t at = 0;
    if (likely && (!impossible || *likely > *impossible)) {
        j.verdict = Verdict::Likely;
        at = *likely;
    } else {
        j.verdict = Verdict::Impossible;
        at = *impossible;
    }
    j.justification = trim(completion.substr(0, at));
    return j;
}

/// Seed for a node's evaluation stream: (config seed, instance, path of
/// sample indices from the root).
inline std::uint64_t evaluation_seed(std::uint64_t config_seed, std::string_view instance_id,
                                     const std::vector<Thought>& path) {
    auto s = mix_seed(config_seed, fnv1a64(instance_id));
    for (const auto& t : path) s = mix_seed(s, static_cast<std::uint64_t>(t.sample_index) + 1);
    return s;
}

inline std::vector<GenerationRequest> evaluation_requests(const PromptPack& pack, const ReasoningState& state,
                                                          const SearchConfig& config, std::uint64_t stream_seed) {
    if (state.thoughts.empty()) throw InvalidArgument("cannot evaluate a state without thoughts");
    SeededStream rng(stream_seed);
    std::vector<GenerationRequest> out;
    for (int r = 0; r < config.eval_samples; ++r) {
        auto demos = pack.eval_demonstrations;
        rng.shuffle(demos);
        GenerationRequest req;
        req.prompt = build_evaluation_prompt(pack, state, demos);
        req.temperature = config.eval_temperature;
        req.stop_sequences = {"\n\n"};
        req.max_new_tokens = kEvaluationMaxTokens;
        req.sample_seed = static_cast<std::uint64_t>(r);
        out.push_back(std::move(req));
    }
    return out;
}

struct Evaluation {
    Rational score = Rational::integer(kImpossibleScore);
    std::vector<Judgment> judgments;
    int unparseable = 0;
    std::vector<std::string> warnings;

    std::vector<Verdict> verdicts() const {
        std::vector<Verdict> v;
        for (const auto& j : judgments) v.push_back(j.verdict);
        return v;
    }
};

/// Unparseable or failed samples are excluded from the mean. With none left
/// the state scores as Impossible.
inline Evaluation score_evaluations(const std::vector<BatchSlot>& slots) {
    Evaluation ev;
    for (std::size_t r = 0; r < slots.size(); ++r) {
        const auto& slot = slots[r];
        if (!slot.ok()) {
            ++ev.unparseable;
            ev.warnings.push_back("evaluation " + std::to_string(r) + " failed: " + slot.error);
            continue;
        }
        auto j = parse_judgment(slot.response->text);
        if (!j) {
            ++ev.unparseable;
            ev.warnings.push_back("evaluation " + std::to_string(r) + " unparseable");
            continue;
        }
        ev.judgments.push_back(std::move(*j));
    }
    if (ev.judgments.empty()) ev.warnings.push_back("no parseable evaluation; scored as impossible");
    ev.score = mean_score(ev.verdicts());
    return ev;
}

inline Evaluation evaluate_state(const ReasoningState& state, const PromptPack& pack, const SearchConfig& config,
                                 Backend& backend, std::uint64_t stream_seed, int parallelism = 1) {
    auto batch = generate_batch(backend, evaluation_requests(pack, state, config, stream_seed), parallelism);
    return score_evaluations(batch.slots);
}

// ---------------------------------------------------------------------------
// BFS with pruning
// ---------------------------------------------------------------------------

struct SearchOptions {
    std::string instance_id;  // empty: content hash of x
    int parallelism = 1;
};

namespace detail {

inline void mark_selected_paths(SearchTree& tree) {
    tree.selected_leaves.clear();
    for (const auto& n : tree.nodes)
        if (n.terminal && !n.pruned) tree.selected_leaves.push_back(n.id);
    for (auto leaf : tree.selected_leaves) {
        std::optional<NodeId> cur = leaf;
        while (cur) {
            auto& n = tree.nodes[*cur];
            n.on_selected_path = true;
            cur = n.parent;
        }
    }
}

}  // namespace detail

/// Kept order at a level: higher score first, then earlier node id (which is
/// parent order, then sample_index).
inline bool ranks_before(const SearchNode& a, const SearchNode& b) {
    if (*a.score != *b.score) return *a.score > *b.score;
    return a.id < b.id;
}

inline SearchTree run_search(std::string_view question, const PromptPack& pack, const SearchConfig& config,
                             Backend& backend, const SearchOptions& options = {}) {
    if (trim(question).empty()) throw InvalidArgument("question is empty");
    pack.validate();
    config.validate();
    const auto start = std::chrono::steady_clock::now();

    const auto root_state = initial_state(pack, question);
    SearchTree tree;
    tree.question = root_state.question;
    tree.root_input = root_state.input;
    tree.instance_id = make_instance_id(options.instance_id, tree.root_input);
    tree.terminal_phrase = pack.terminal_phrase;
    tree.nodes.push_back(SearchNode{});

    auto state_of = [&](NodeId id) {
        ReasoningState s = root_state;
        s.thoughts = tree.path_thoughts(id);
        return s;
    };

    std::vector<NodeId> frontier{0};
    for (int depth = 1; depth <= config.max_depth && !frontier.empty(); ++depth) {
        // Expansion: all k samples of all kept states in one batch.
        std::vector<GenerationRequest> gen;
        std::vector<ReasoningState> states;
        for (auto id : frontier) {
            states.push_back(state_of(id));
            auto reqs = generation_requests(pack, states.back(), config);
            gen.insert(gen.end(), std::make_move_iterator(reqs.begin()), std::make_move_iterator(reqs.end()));
        }
        auto gen_batch = generate_batch(backend, gen, options.parallelism);

        std::vector<std::pair<NodeId, Expansion>> expansions;
        try {
            for (std::size_t p = 0; p < frontier.size(); ++p) {
                const auto first = gen_batch.slots.begin() + static_cast<std::ptrdiff_t>(p * config.k);
                std::vector<BatchSlot> slots(first, first + config.k);
                expansions.emplace_back(frontier[p], collect_thoughts(states[p], slots));
            }
        } catch (const ExpansionFailed& e) {
            tree.status = TreeStatus::Incomplete;
            tree.warnings.push_back("expansion failed at depth " + std::to_string(depth) + ": " + e.what());
            break;
        }

        std::vector<NodeId> level;
        for (auto& [parent, expansion] : expansions) {
            for (const auto& err : expansion.errors)
                tree.warnings.push_back("node " + std::to_string(parent) + " " + err);
            for (auto& thought : expansion.thoughts) {
                SearchNode child;
                child.id = tree.nodes.size();
                child.parent = parent;
                child.terminal = thought.text.find(pack.terminal_phrase) != std::string::npos;
                child.thought = std::move(thought);
                tree.nodes[parent].children.push_back(child.id);
                level.push_back(child.id);
                tree.nodes.push_back(std::move(child));
            }
        }

        // Evaluation: m samples per child, one batch for the level.
        std::vector<GenerationRequest> evals;
        for (auto id : level) {
            const auto state = state_of(id);
            auto reqs = evaluation_requests(pack, state, config,
                                            evaluation_seed(config.seed, tree.instance_id, state.thoughts));
            evals.insert(evals.end(), std::make_move_iterator(reqs.begin()), std::make_move_iterator(reqs.end()));
        }
        auto eval_batch = generate_batch(backend, evals, options.parallelism);
        for (std::size_t c = 0; c < level.size(); ++c) {
            const auto first = eval_batch.slots.begin() + static_cast<std::ptrdiff_t>(c * config.eval_samples);
            std::vector<BatchSlot> slots(first, first + config.eval_samples);
            auto ev = score_evaluations(slots);
            auto& node = tree.nodes[level[c]];
            node.score = ev.score;
            node.raw_judgments = ev.verdicts();
            node.unparseable_judgments = ev.unparseable;
            for (const auto& w : ev.warnings) tree.warnings.push_back("node " + std::to_string(node.id) + " " + w);
        }

        // Pruning across the whole level.
        auto ranked = level;
        std::sort(ranked.begin(), ranked.end(),
                  [&](NodeId a, NodeId b) { return ranks_before(tree.nodes[a], tree.nodes[b]); });
        frontier.clear();
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            auto& node = tree.nodes[ranked[r]];
            if (r >= static_cast<std::size_t>(config.n)) {
                node.pruned = true;
            } else if (!node.terminal) {
                frontier.push_back(node.id);
            }
        }
        std::sort(frontier.begin(), frontier.end());
    }

    detail::mark_selected_paths(tree);
    if (tree.selected_leaves.empty() && tree.status == TreeStatus::Complete) {
        tree.status = TreeStatus::DepthExceeded;
        tree.warnings.push_back("no terminal thought within max_depth " + std::to_string(config.max_depth));
    }
    tree.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return tree;
}

// ---------------------------------------------------------------------------
// Answers
// ---------------------------------------------------------------------------

/// Text after the first terminal phrase, trimmed, trailing period dropped.
inline std::string extract_answer(const SearchNode& leaf, std::string_view terminal_phrase) {
    if (!leaf.terminal || !leaf.thought) throw MissingPhrase("node is not terminal");
    const auto& text = leaf.thought->text;
    const auto pos = text.find(terminal_phrase);
    if (terminal_phrase.empty() || pos == std::string::npos)
        throw MissingPhrase("terminal node lacks the terminal phrase");
    auto answer = trim(std::string_view(text).substr(pos + terminal_phrase.size()));
    if (!answer.empty() && answer.back() == '.') answer.pop_back();
    return trim(answer);
}

/// The highest-scoring selected leaf (lowest id on ties), if any.
inline std::optional<NodeId> best_leaf(const SearchTree& tree) {
    std::optional<NodeId> best;
    for (auto id : tree.selected_leaves) {
        const auto& n = tree.nodes[id];
        if (!best || *n.score > *tree.nodes[*best].score) best = id;
    }
    return best;
}

}  // namespace cpo
