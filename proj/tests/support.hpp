#pragma once

// Shared test helpers: a randomized responder that scripts whole search
// trees, and brute-force oracles written against the plain rules rather than
// against the library's internals.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "cpo/backend.hpp"
#include "cpo/search.hpp"
#include "cpo/synthesis.hpp"

namespace cpo::testing {

inline std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(CPO_TEST_DIR) / "fixtures" / name;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("cpo-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline PromptPack small_pack() {
    PromptPack p;
    p.task_id = "toy";
    p.cot_demonstrations = "Question: demo?\nAnswer: Step 1, think. Step 2, so the final answer is: yes.";
    p.eval_demonstrations = {"Question: a?\nThoughts: Step 1, x.\nEvaluation: fine, likely",
                             "Question: b?\nThoughts: Step 1, y.\nEvaluation: wrong, impossible",
                             "Question: c?\nThoughts: Step 1, z.\nEvaluation: plausible, likely"};
    return p;
}

/// Thoughts portion of an evaluation prompt.
inline std::string eval_thoughts(std::string_view prompt) {
    const auto t = prompt.rfind("\nThoughts:");
    const auto e = prompt.rfind("\nEvaluation:");
    if (t == std::string_view::npos || e == std::string_view::npos || e < t) return {};
    return std::string(prompt.substr(t + 10, e - t - 10));
}

struct RandomScriptParams {
    std::uint64_t trial = 0;
    int pool = 3;                  // distinct texts a state can produce (small -> duplicates)
    double terminal_rate = 0.35;   // chance a generated thought ends the path
    double likely_rate = 0.5;
    double unparseable_rate = 0.05;
};

/// Deterministic responder that builds a random tree. Generation depends on
/// the prompt and sample seed; evaluation depends only on the thoughts and
/// the repetition index, so oracles need not reproduce the shuffle.
inline FunctionBackend::Responder random_responder(RandomScriptParams p) {
    return [p](std::string_view prompt, std::uint64_t seed) -> std::optional<std::string> {
        if (prompt.ends_with("\nEvaluation:")) {
            SeededStream rng(mix_seed(mix_seed(p.trial, fnv1a64(eval_thoughts(prompt))), seed + 101));
            const double u = rng.uniform01();
            if (u < p.unparseable_rate) return " no verdict here";
            return u < p.unparseable_rate + p.likely_rate ? " seems fine, likely\n\nextra" : " Impossible.";
        }
        SeededStream rng(mix_seed(mix_seed(p.trial, prompt_fingerprint(prompt)), seed));
        const auto choice = rng.below(static_cast<std::uint64_t>(p.pool));
        SeededStream pick(mix_seed(mix_seed(p.trial, prompt_fingerprint(prompt)), 1000 + choice));
        const std::string tag = hex64(pick.next()).substr(0, 6);
        std::string body = pick.uniform01() < p.terminal_rate ? " so the final answer is: " + tag + "."
                                                              : " consider " + tag + ".";
        // Trailing continuation that the stop sequence must cut.
        return body + " Step 99, junk";
    };
}

// ---------------------------------------------------------------------------
// Search oracle: a separate BFS over the same responder.
// ---------------------------------------------------------------------------

struct OracleNode {
    std::string text;
    int sample_index = 0;
    int depth = 0;
    int parent = -1;  // index into the oracle vector
    long long score_num = 0;
    long long score_den = 1;
    bool terminal = false;
    bool pruned = false;
    bool selected = false;
};

inline std::string oracle_marker(int step) { return "Step " + std::to_string(step) + ","; }

inline std::string oracle_trim(std::string s) {
    const auto ws = " \t\n\r\f\v";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

inline std::vector<OracleNode> oracle_search(const std::string& question, const PromptPack& pack,
                                             const SearchConfig& cfg, const FunctionBackend::Responder& respond) {
    const std::string x = oracle_trim(pack.cot_demonstrations) + "\n\nQuestion: " + oracle_trim(question) +
                          "\nAnswer:";
    std::vector<OracleNode> nodes(1);
    auto texts_to = [&](int id) {
        std::vector<std::string> out;
        for (int cur = id; cur > 0; cur = nodes[static_cast<std::size_t>(cur)].parent)
            out.push_back(nodes[static_cast<std::size_t>(cur)].text);
        std::reverse(out.begin(), out.end());
        return out;
    };
    std::vector<int> frontier{0};
    for (int d = 1; d <= cfg.max_depth && !frontier.empty(); ++d) {
        std::vector<int> level;
        for (int parent : frontier) {
            std::string prompt = x;
            for (const auto& t : texts_to(parent)) prompt += " " + t;
            prompt += " " + oracle_marker(d);
            std::vector<std::string> seen;
            for (int j = 0; j < cfg.k; ++j) {
                auto raw = respond(prompt, static_cast<std::uint64_t>(j));
                if (!raw) continue;
                const auto stop = raw->find(oracle_marker(d + 1));
                std::string text = oracle_trim(stop == std::string::npos ? *raw : raw->substr(0, stop));
                if (text.empty()) continue;
                if (text.rfind(oracle_marker(d), 0) != 0) text = oracle_marker(d) + " " + text;
                if (std::find(seen.begin(), seen.end(), normalize_whitespace(text)) != seen.end()) continue;
                seen.push_back(normalize_whitespace(text));
                OracleNode n;
                n.text = text;
                n.sample_index = j;
                n.depth = d;
                n.parent = parent;
                n.terminal = text.find(pack.terminal_phrase) != std::string::npos;
                nodes.push_back(n);
                level.push_back(static_cast<int>(nodes.size()) - 1);
            }
        }
        for (int id : level) {
            std::string thoughts;
            for (const auto& t : texts_to(id)) thoughts += " " + t;
            long long sum = 0, count = 0;
            for (int r = 0; r < cfg.eval_samples; ++r) {
                // Only the part before the "\n\n" stop counts.
                auto raw = respond("G\nThoughts:" + thoughts + "\nEvaluation:", static_cast<std::uint64_t>(r));
                std::string text = raw ? raw->substr(0, raw->find("\n\n")) : "";
                std::string lower;
                for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
                const bool has_l = lower.find("likely") != std::string::npos;
                const bool has_i = lower.find("impossible") != std::string::npos;
                if (!has_l && !has_i) continue;
                sum += has_l ? 10 : 1;
                ++count;
            }
            auto& n = nodes[static_cast<std::size_t>(id)];
            if (count == 0) {
                n.score_num = 1;
                n.score_den = 1;
            } else {
                n.score_num = sum;
                n.score_den = count;
            }
        }
        // Rank by counting how many level members beat each node.
        auto beats = [&](int a, int b) {
            const auto& A = nodes[static_cast<std::size_t>(a)];
            const auto& B = nodes[static_cast<std::size_t>(b)];
            const long long lhs = A.score_num * B.score_den, rhs = B.score_num * A.score_den;
            if (lhs != rhs) return lhs > rhs;
            if (A.parent != B.parent) return A.parent < B.parent;
            return A.sample_index < B.sample_index;
        };
        std::vector<int> next;
        for (int id : level) {
            int better = 0;
            for (int other : level)
                if (other != id && beats(other, id)) ++better;
            auto& n = nodes[static_cast<std::size_t>(id)];
            if (better >= cfg.n)
                n.pruned = true;
            else if (!n.terminal)
                next.push_back(id);
        }
        std::sort(next.begin(), next.end());
        frontier = next;
    }
    for (std::size_t i = 1; i < nodes.size(); ++i) {
        if (!nodes[i].terminal || nodes[i].pruned) continue;
        for (int cur = static_cast<int>(i); cur >= 0; cur = nodes[static_cast<std::size_t>(cur)].parent) {
            nodes[static_cast<std::size_t>(cur)].selected = true;
            if (cur == 0) break;
        }
    }
    nodes[0].selected = std::any_of(nodes.begin() + 1, nodes.end(), [](const auto& n) { return n.selected; });
    return nodes;
}

/// Number of disagreements between a tree and the oracle (matched by the
/// path of texts from the root).
inline int compare_with_oracle(const SearchTree& tree, const std::vector<OracleNode>& oracle) {
    auto key_of_tree = [&](NodeId id) {
        std::string key;
        for (const auto& t : tree.path_thoughts(id)) key += t.text + "\x1f";
        return key;
    };
    std::map<std::string, const OracleNode*> by_key;
    for (std::size_t i = 0; i < oracle.size(); ++i) {
        std::vector<std::string> path;
        for (int cur = static_cast<int>(i); cur > 0; cur = oracle[static_cast<std::size_t>(cur)].parent)
            path.push_back(oracle[static_cast<std::size_t>(cur)].text);
        std::reverse(path.begin(), path.end());
        std::string key;
        for (const auto& t : path) key += t + "\x1f";
        by_key[key] = &oracle[i];
    }
    int mismatches = static_cast<int>(tree.nodes.size() > oracle.size() ? tree.nodes.size() - oracle.size()
                                                                         : oracle.size() - tree.nodes.size());
    for (const auto& n : tree.nodes) {
        const auto it = by_key.find(key_of_tree(n.id));
        if (it == by_key.end()) {
            ++mismatches;
            continue;
        }
        const auto& o = *it->second;
        if (n.pruned != o.pruned || n.terminal != o.terminal || n.on_selected_path != o.selected) ++mismatches;
        if (n.thought && (n.thought->sample_index != o.sample_index ||
                          *n.score != Rational(o.score_num, o.score_den)))
            ++mismatches;
    }
    return mismatches;
}

// ---------------------------------------------------------------------------
// Pair oracle: enumerate every (selected node, sibling) and filter.
// ---------------------------------------------------------------------------

using PairKey = std::tuple<std::string, std::string, std::string>;

inline std::vector<PairKey> oracle_pairs(const SearchTree& tree, DispreferredStrategy strategy) {
    auto context_of = [&](NodeId parent) {
        std::vector<std::string> texts;
        for (std::optional<NodeId> cur = parent; cur; cur = tree.nodes[*cur].parent)
            if (tree.nodes[*cur].thought) texts.push_back(tree.nodes[*cur].thought->text);
        std::string ctx = tree.root_input;
        for (auto it = texts.rbegin(); it != texts.rend(); ++it) ctx += " " + *it;
        return ctx;
    };
    std::vector<PairKey> out;
    for (const auto& w : tree.nodes) {
        if (!w.parent || !w.on_selected_path) continue;
        std::vector<const SearchNode*> lower;
        std::vector<const SearchNode*> eligible;
        for (const auto& s : tree.nodes) {
            if (s.parent != w.parent || s.id == w.id || s.on_selected_path) continue;
            eligible.push_back(&s);
            if (*s.score < *w.score) lower.push_back(&s);
        }
        std::vector<const SearchNode*> chosen;
        if (strategy == DispreferredStrategy::All) chosen = eligible;
        if (strategy == DispreferredStrategy::Lower) chosen = lower;
        if (strategy == DispreferredStrategy::Lowest) {
            for (const auto* s : lower) {
                bool minimal = true;
                for (const auto* t : lower) {
                    if (t == s) continue;
                    if (*t->score < *s->score ||
                        (*t->score == *s->score && t->thought->sample_index < s->thought->sample_index))
                        minimal = false;
                }
                if (minimal) chosen.push_back(s);
            }
        }
        for (const auto* s : chosen) {
            if (s->thought->text == w.thought->text) continue;
            PairKey k{context_of(*w.parent), w.thought->text, s->thought->text};
            if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<PairKey> pair_keys(const std::vector<PreferencePair>& pairs) {
    std::vector<PairKey> out;
    for (const auto& p : pairs) out.emplace_back(p.context, p.chosen, p.rejected);
    std::sort(out.begin(), out.end());
    return out;
}

inline bool is_sub_multiset(std::vector<PairKey> a, std::vector<PairKey> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

// ---------------------------------------------------------------------------
// Random tree scenarios
// ---------------------------------------------------------------------------

struct Scenario {
    std::string question;
    SearchConfig config;
    RandomScriptParams params;
};

inline Scenario random_scenario(std::uint64_t trial) {
    SeededStream rng(mix_seed(0x5eed, trial));
    Scenario s;
    s.question = "question number " + std::to_string(trial) + "?";
    s.config.k = 1 + static_cast<int>(rng.below(4));
    s.config.n = 1 + static_cast<int>(rng.below(4));
    s.config.eval_samples = 1 + static_cast<int>(rng.below(3));
    s.config.max_depth = 1 + static_cast<int>(rng.below(4));
    s.config.seed = rng.next();
    s.params.trial = trial;
    s.params.pool = 1 + static_cast<int>(rng.below(4));
    s.params.terminal_rate = 0.15 + 0.4 * rng.uniform01();
    return s;
}

/// Runs a scenario through a recording backend, then replays it from the
/// recorded script so the tree comes from the scripted backend.
inline SearchTree scripted_tree(const Scenario& s, std::vector<ScriptEntry>* script_out = nullptr) {
    const auto pack = small_pack();
    RecordingBackend rec(random_responder(s.params));
    (void)run_search(s.question, pack, s.config, rec, SearchOptions{"t" + std::to_string(s.params.trial), 1});
    ScriptedBackend scripted(rec.recorded().entries());
    if (script_out) *script_out = rec.recorded().entries();
    return run_search(s.question, pack, s.config, scripted, SearchOptions{"t" + std::to_string(s.params.trial), 1});
}

}  // namespace cpo::testing
