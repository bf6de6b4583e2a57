#pragma once

// Shared domain types for tree search, preference synthesis and losses.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cpo {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// String helpers
// ---------------------------------------------------------------------------

inline bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

/// Collapses every run of whitespace to one space and trims both ends.
inline std::string normalize_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending = false;
    for (char c : s) {
        if (is_space(c)) {
            pending = true;
            continue;
        }
        if (pending && !out.empty()) out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    return out;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) ++i;
        std::size_t j = i;
        while (j < s.size() && !is_space(s[j])) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hashing and seeded streams
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

/// Portable deterministic RNG. The standard distributions are
/// implementation-defined, so everything that feeds persisted output draws
/// from this instead.
class SeededStream {
public:
    explicit SeededStream(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform integer in [0, bound) by rejection.
    std::uint64_t below(std::uint64_t bound) {
        if (bound <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
        std::uint64_t r = next();
        while (r >= limit) r = next();
        return r % bound;
    }

    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Score
// ---------------------------------------------------------------------------

/// Exact non-negative rational, always stored reduced.
class Rational {
public:
    constexpr Rational() = default;
    Rational(std::int64_t num, std::int64_t den) : num_(num), den_(den) {
        if (den == 0) throw InvalidArgument("rational with zero denominator");
        if (den_ < 0) {
            num_ = -num_;
            den_ = -den_;
        }
        const auto g = std::gcd(num_ < 0 ? -num_ : num_, den_);
        if (g > 1) {
            num_ /= g;
            den_ /= g;
        }
    }
    static Rational integer(std::int64_t v) { return Rational(v, 1); }

    std::int64_t num() const { return num_; }
    std::int64_t den() const { return den_; }
    double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

    friend bool operator==(const Rational& a, const Rational& b) {
        return a.num_ == b.num_ && a.den_ == b.den_;
    }
    friend bool operator<(const Rational& a, const Rational& b) {
        return static_cast<__int128>(a.num_) * b.den_ < static_cast<__int128>(b.num_) * a.den_;
    }
    friend bool operator>(const Rational& a, const Rational& b) { return b < a; }
    friend bool operator<=(const Rational& a, const Rational& b) { return !(b < a); }
    friend bool operator>=(const Rational& a, const Rational& b) { return !(a < b); }

    std::string to_string() const {
        if (den_ == 1) return std::to_string(num_);
        return std::to_string(num_) + "/" + std::to_string(den_);
    }

    static Rational parse(std::string_view s) {
        const auto slash = s.find('/');
        try {
            if (slash == std::string_view::npos) return integer(std::stoll(std::string(s)));
            std::size_t used_n = 0, used_d = 0;
            const std::string ns(s.substr(0, slash));
            const std::string ds(s.substr(slash + 1));
            const auto n = std::stoll(ns, &used_n);
            const auto d = std::stoll(ds, &used_d);
            if (used_n != ns.size() || used_d != ds.size()) throw InvalidArgument("bad rational");
            return Rational(n, d);
        } catch (const std::logic_error&) {
            throw InvalidArgument("malformed rational '" + std::string(s) + "'");
        }
    }

private:
    std::int64_t num_ = 0;
    std::int64_t den_ = 1;
};

enum class Verdict { Likely, Impossible };

inline constexpr std::int64_t kLikelyScore = 10;
inline constexpr std::int64_t kImpossibleScore = 1;

inline std::int64_t verdict_value(Verdict v) {
    return v == Verdict::Likely ? kLikelyScore : kImpossibleScore;
}

/// Mean of mapped verdicts; an empty list scores as Impossible.
inline Rational mean_score(const std::vector<Verdict>& verdicts) {
    if (verdicts.empty()) return Rational::integer(kImpossibleScore);
    std::int64_t sum = 0;
    for (auto v : verdicts) sum += verdict_value(v);
    return Rational(sum, static_cast<std::int64_t>(verdicts.size()));
}

// ---------------------------------------------------------------------------
// Reasoning steps
// ---------------------------------------------------------------------------

struct Thought {
    std::string text;
    int step_index = 1;
    int sample_index = 0;

    friend bool operator==(const Thought&, const Thought&) = default;
};

/// The prompt x plus the thoughts so far. `question` is the bare question,
/// `input` the rendered x (demonstrations + question).
struct ReasoningState {
    std::string question;
    std::string input;
    std::vector<Thought> thoughts;

    int depth() const { return static_cast<int>(thoughts.size()); }

    bool well_formed() const {
        for (std::size_t i = 0; i < thoughts.size(); ++i)
            if (thoughts[i].step_index != static_cast<int>(i) + 1) return false;
        return true;
    }
};

/// x followed by each thought, joined by single spaces. Pair contexts and
/// generation prompts both use this so training sees the search strings.
inline std::string render_state(std::string_view input, const std::vector<Thought>& thoughts) {
    std::string out(input);
    for (const auto& t : thoughts) {
        out.push_back(' ');
        out += t.text;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Search tree
// ---------------------------------------------------------------------------

using NodeId = std::size_t;

struct SearchNode {
    NodeId id = 0;
    std::optional<Thought> thought;  // absent only at the root
    std::optional<Rational> score;   // absent only at the root
    std::vector<Verdict> raw_judgments;
    int unparseable_judgments = 0;
    bool pruned = false;
    bool on_selected_path = false;
    bool terminal = false;
    std::optional<NodeId> parent;
    std::vector<NodeId> children;

    bool is_root() const { return !parent.has_value(); }
    int depth() const { return thought ? thought->step_index : 0; }

    friend bool operator==(const SearchNode&, const SearchNode&) = default;
};

enum class TreeStatus { Complete, Incomplete, DepthExceeded };

inline std::string_view to_string(TreeStatus s) {
    switch (s) {
        case TreeStatus::Complete: return "complete";
        case TreeStatus::Incomplete: return "incomplete";
        case TreeStatus::DepthExceeded: return "depth_exceeded";
    }
    return "?";
}

struct SearchTree {
    std::string instance_id;
    std::string question;
    std::string root_input;
    std::string terminal_phrase;
    std::vector<SearchNode> nodes;  // nodes[0] is the root; ids equal positions
    std::vector<NodeId> selected_leaves;
    double wall_clock_seconds = 0.0;
    TreeStatus status = TreeStatus::Complete;
    std::vector<std::string> warnings;

    const SearchNode& root() const { return nodes.front(); }
    const SearchNode& node(NodeId id) const { return nodes.at(id); }

    /// Thoughts from the root down to (and including) `id`.
    std::vector<Thought> path_thoughts(NodeId id) const {
        std::vector<Thought> out;
        std::optional<NodeId> cur = id;
        while (cur) {
            const auto& n = nodes.at(*cur);
            if (n.thought) out.push_back(*n.thought);
            cur = n.parent;
        }
        std::reverse(out.begin(), out.end());
        return out;
    }

    int max_depth() const {
        int d = 0;
        for (const auto& n : nodes) d = std::max(d, n.depth());
        return d;
    }

    friend bool operator==(const SearchTree&, const SearchTree&) = default;
};

struct PreferencePair {
    std::string instance_id;
    int step_index = 1;
    std::string context;
    std::string chosen;
    std::string rejected;
    Rational chosen_score;
    Rational rejected_score;

    friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

enum class TaskClass { General, Arithmetic };

struct SearchConfig {
    int k = 10;
    int n = 5;
    int eval_samples = 3;
    double gen_temperature = 0.4;
    double eval_temperature = 0.4;
    int max_depth = 12;
    std::uint64_t seed = 0;

    void validate() const {
        if (k < 1) throw InvalidArgument("k must be >= 1");
        if (n < 1) throw InvalidArgument("n must be >= 1");
        if (eval_samples < 1) throw InvalidArgument("eval_samples must be >= 1");
        if (max_depth < 1) throw InvalidArgument("max_depth must be >= 1");
        if (!(gen_temperature >= 0.0)) throw InvalidArgument("gen_temperature must be >= 0");
        if (!(eval_temperature >= 0.0)) throw InvalidArgument("eval_temperature must be >= 0");
    }

    friend bool operator==(const SearchConfig&, const SearchConfig&) = default;
};

/// Arithmetic-style tasks sample hotter (0.9) than the rest (0.4).
inline SearchConfig default_config(TaskClass task = TaskClass::General) {
    SearchConfig c;
    c.gen_temperature = task == TaskClass::Arithmetic ? 0.9 : 0.4;
    return c;
}

inline constexpr double kDefaultBeta = 0.1;

/// Caller-supplied id, else a content hash of x.
inline std::string make_instance_id(std::string_view supplied, std::string_view x) {
    if (!supplied.empty()) return std::string(supplied);
    return hex64(fnv1a64(x));
}

// ---------------------------------------------------------------------------
// Tree validation
// ---------------------------------------------------------------------------

inline std::vector<std::string> validate_tree(const SearchTree& tree, const SearchConfig& config) {
    std::vector<std::string> out;
    auto report = [&](NodeId id, const std::string& what) {
        out.push_back("node " + std::to_string(id) + ": " + what);
    };

    if (tree.nodes.empty()) {
        out.emplace_back("tree has no root node");
        return out;
    }
    const auto count = tree.nodes.size();
    for (NodeId id = 0; id < count; ++id) {
        const auto& nd = tree.nodes[id];
        if (nd.id != id) report(id, "id does not match position");
        if (id == 0) {
            if (nd.parent) report(id, "root has a parent");
            if (nd.thought || nd.score) report(id, "root carries a thought or score");
            if (nd.pruned) report(id, "root is pruned");
        } else {
            if (!nd.parent || *nd.parent >= count) {
                report(id, "missing or dangling parent");
                continue;
            }
            if (!nd.thought) {
                report(id, "non-root node without thought");
                continue;
            }
            const auto& parent = tree.nodes[*nd.parent];
            if (std::find(parent.children.begin(), parent.children.end(), id) == parent.children.end())
                report(id, "not listed among its parent's children");
            if (trim(nd.thought->text).empty()) report(id, "empty thought text");
            if (nd.thought->step_index != parent.depth() + 1) report(id, "step_index not parent + 1");
            if (nd.thought->sample_index < 0 || nd.thought->sample_index >= config.k)
                report(id, "sample_index outside [0, k)");
            if (!nd.score) {
                report(id, "missing score");
            } else {
                if (*nd.score != mean_score(nd.raw_judgments))
                    report(id, "score is not the mean of its judgments");
                if (*nd.score < Rational::integer(1) || *nd.score > Rational::integer(10))
                    report(id, "score outside [1, 10]");
            }
            if (nd.on_selected_path && !parent.on_selected_path)
                report(id, "selected node whose parent is not selected");
            if (nd.terminal && nd.thought->text.find(tree.terminal_phrase) == std::string::npos)
                report(id, "terminal without terminal phrase");
        }
        if (nd.on_selected_path && nd.pruned) report(id, "selected node is pruned");
        if (nd.children.size() > static_cast<std::size_t>(config.k))
            report(id, "more than k children");
        for (auto c : nd.children)
            if (c >= count || tree.nodes[c].parent != id) report(id, "child link inconsistent");
    }

    std::vector<int> kept_per_depth(static_cast<std::size_t>(tree.max_depth()) + 1, 0);
    for (const auto& nd : tree.nodes)
        if (!nd.is_root() && !nd.pruned) ++kept_per_depth[static_cast<std::size_t>(nd.depth())];
    for (std::size_t d = 1; d < kept_per_depth.size(); ++d)
        if (kept_per_depth[d] > config.n)
            out.push_back("depth " + std::to_string(d) + ": more than n kept nodes");

    for (auto leaf : tree.selected_leaves) {
        if (leaf >= count) {
            out.push_back("selected leaf " + std::to_string(leaf) + " out of range");
            continue;
        }
        if (!tree.nodes[leaf].terminal) report(leaf, "selected leaf is not terminal");
        std::optional<NodeId> cur = leaf;
        std::size_t guard = 0;
        while (cur && guard++ <= count) {
            const auto& nd = tree.nodes[*cur];
            if (!nd.on_selected_path) report(*cur, "ancestor of selected leaf not on selected path");
            cur = nd.parent;
        }
    }
    return out;
}

}  // namespace cpo
