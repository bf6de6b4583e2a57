#pragma once

// Chain-of-preference datasets from finished search trees.
//
// Every thought on a selected path is preferred. Its dispreferred partners
// are siblings under the same parent state that lie on no selected path,
// filtered by the chosen strategy. Path membership, not score, decides
// preference, so a dispreferred sibling may outscore the chosen thought
// under `All`.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "cpo/core.hpp"
#include "cpo/json_io.hpp"

namespace cpo {

enum class DispreferredStrategy { All, Lower, Lowest };

inline std::string_view to_string(DispreferredStrategy s) {
    switch (s) {
        case DispreferredStrategy::All: return "all";
        case DispreferredStrategy::Lower: return "lower";
        case DispreferredStrategy::Lowest: return "lowest";
    }
    return "?";
}

inline std::optional<DispreferredStrategy> parse_strategy(std::string_view s) {
    if (s == "all") return DispreferredStrategy::All;
    if (s == "lower") return DispreferredStrategy::Lower;
    if (s == "lowest") return DispreferredStrategy::Lowest;
    return std::nullopt;
}

struct SftPath {
    std::string instance_id;
    std::string prompt;
    std::string completion;

    friend bool operator==(const SftPath&, const SftPath&) = default;
};

inline Json to_json(const SftPath& p) {
    return Json{{"instance_id", p.instance_id}, {"prompt", p.prompt}, {"completion", p.completion}};
}

inline SftPath sft_path_from_json(const Json& j) {
    detail::check_fields(j, "SftPath", {"instance_id", "prompt", "completion"});
    return SftPath{detail::get_as<std::string>(j, "instance_id", "SftPath"),
                   detail::get_as<std::string>(j, "prompt", "SftPath"),
                   detail::get_as<std::string>(j, "completion", "SftPath")};
}

inline std::string encode_sft_paths(const std::vector<SftPath>& paths) {
    std::string out;
    for (const auto& p : paths) {
        out += to_json(p).dump();
        out.push_back('\n');
    }
    return out;
}

/// Siblings of `node` that may serve as its dispreferred partners.
inline std::vector<NodeId> dispreferred_siblings(const SearchTree& tree, NodeId node,
                                                 DispreferredStrategy strategy) {
    const auto& chosen = tree.node(node);
    if (!chosen.parent) return {};
    std::vector<NodeId> eligible;
    for (auto sib : tree.node(*chosen.parent).children) {
        if (sib == node || tree.node(sib).on_selected_path) continue;
        eligible.push_back(sib);
    }
    if (strategy == DispreferredStrategy::All) return eligible;

    std::vector<NodeId> lower;
    for (auto sib : eligible)
        if (*tree.node(sib).score < *chosen.score) lower.push_back(sib);
    if (strategy == DispreferredStrategy::Lower || lower.empty()) return lower;

    // Lowest: the minimum among the strictly-lower siblings, ties to the
    // lowest sample_index. Keeps Lowest inside Lower.
    auto best = lower.front();
    for (auto sib : lower) {
        const auto& a = tree.node(sib);
        const auto& b = tree.node(best);
        if (*a.score < *b.score || (*a.score == *b.score && a.thought->sample_index < b.thought->sample_index))
            best = sib;
    }
    return {best};
}

/// Pairs in chosen-node id order, then sibling order. Exact duplicates of
/// (context, chosen, rejected) are emitted once.
inline std::vector<PreferencePair> extract_pairs(const SearchTree& tree,
                                                 DispreferredStrategy strategy = DispreferredStrategy::All) {
    std::vector<PreferencePair> out;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    for (const auto& n : tree.nodes) {
        if (n.is_root() || !n.on_selected_path) continue;
        const auto prefix = tree.path_thoughts(*n.parent);
        const auto context = render_state(tree.root_input, prefix);
        for (auto sib : dispreferred_siblings(tree, n.id, strategy)) {
            const auto& rej = tree.node(sib);
            if (rej.thought->text == n.thought->text) continue;
            if (!seen.emplace(context, n.thought->text, rej.thought->text).second) continue;
            out.push_back(PreferencePair{tree.instance_id, n.thought->step_index, context, n.thought->text,
                                         rej.thought->text, *n.score, *rej.score});
        }
    }
    return out;
}

/// Preferred (selected, non-root) nodes that got no dispreferred partner.
inline std::size_t count_unpaired_preferred(const SearchTree& tree, DispreferredStrategy strategy) {
    std::size_t count = 0;
    for (const auto& n : tree.nodes)
        if (!n.is_root() && n.on_selected_path && dispreferred_siblings(tree, n.id, strategy).empty()) ++count;
    return count;
}

inline std::vector<SftPath> extract_sft_paths(const SearchTree& tree) {
    std::vector<SftPath> out;
    for (auto leaf : tree.selected_leaves) {
        std::string completion;
        for (const auto& t : tree.path_thoughts(leaf)) {
            if (!completion.empty()) completion.push_back(' ');
            completion += t.text;
        }
        out.push_back(SftPath{tree.instance_id, tree.root_input, std::move(completion)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

inline std::size_t common_prefix_length(std::string_view a, std::string_view b) {
    const auto n = std::min(a.size(), b.size());
    std::size_t i = 0;
    while (i < n && a[i] == b[i]) ++i;
    return i;
}

/// Character-level LCP length over the mean of the two lengths.
inline double lcp_fraction(std::string_view a, std::string_view b) {
    const double mean_len = (static_cast<double>(a.size()) + static_cast<double>(b.size())) / 2.0;
    if (mean_len == 0.0) return 0.0;
    return static_cast<double>(common_prefix_length(a, b)) / mean_len;
}

struct DatasetStats {
    std::size_t pair_count = 0;
    std::map<int, std::size_t> pairs_per_step;
    double mean_score_gap = 0.0;  // chosen - rejected
    double mean_lcp_fraction = 0.0;
    std::size_t instance_count = 0;
};

inline DatasetStats dataset_stats(const std::vector<PreferencePair>& pairs) {
    DatasetStats s;
    if (pairs.empty()) return s;
    std::set<std::string> instances;
    double gap = 0.0;
    double lcp = 0.0;
    for (const auto& p : pairs) {
        ++s.pairs_per_step[p.step_index];
        instances.insert(p.instance_id);
        gap += p.chosen_score.to_double() - p.rejected_score.to_double();
        lcp += lcp_fraction(p.chosen, p.rejected);
    }
    s.pair_count = pairs.size();
    s.instance_count = instances.size();
    s.mean_score_gap = gap / static_cast<double>(pairs.size());
    s.mean_lcp_fraction = lcp / static_cast<double>(pairs.size());
    return s;
}

inline Json to_json(const DatasetStats& s) {
    Json hist = Json::object();
    for (const auto& [step, count] : s.pairs_per_step) hist[std::to_string(step)] = count;
    return Json{{"pair_count", s.pair_count},
                {"instance_count", s.instance_count},
                {"pairs_per_step", hist},
                {"mean_score_gap", s.mean_score_gap},
                {"mean_lcp_fraction", s.mean_lcp_fraction}};
}

}  // namespace cpo
