#pragma once

// Line-delimited JSON persistence for the core types. Encoding is canonical
// (keys sorted, compact), so encode(decode(bytes)) == bytes for anything this
// module wrote. Unknown fields are rejected on decode.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cpo/core.hpp"

namespace cpo {

using Json = nlohmann::json;

class FormatError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void expect_object(const Json& j, std::string_view what) {
    if (!j.is_object()) throw FormatError(std::string(what) + ": expected a JSON object");
}

/// Every key must be in required or optional; every required key must exist.
inline void check_fields(const Json& j, std::string_view what,
                         std::initializer_list<std::string_view> required,
                         std::initializer_list<std::string_view> optional = {}) {
    expect_object(j, what);
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& key = it.key();
        const bool known = std::find(required.begin(), required.end(), key) != required.end() ||
                           std::find(optional.begin(), optional.end(), key) != optional.end();
        if (!known) throw FormatError(std::string(what) + ": unknown field '" + key + "'");
    }
    for (auto key : required)
        if (!j.contains(key))
            throw FormatError(std::string(what) + ": missing field '" + std::string(key) + "'");
}

template <typename T>
T get_as(const Json& j, std::string_view key, std::string_view what) {
    try {
        return j.at(std::string(key)).get<T>();
    } catch (const Json::exception& e) {
        throw FormatError(std::string(what) + "." + std::string(key) + ": " + e.what());
    }
}

inline Rational get_rational(const Json& j, std::string_view key, std::string_view what) {
    const auto s = get_as<std::string>(j, key, what);
    try {
        return Rational::parse(s);
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string(what) + "." + std::string(key) + ": " + e.what());
    }
}

}  // namespace detail

inline Json parse_json(std::string_view text, std::string_view what = "json") {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw FormatError(std::string(what) + ": " + e.what());
    }
}

// --- Thought ---------------------------------------------------------------

inline Json to_json(const Thought& t) {
    return Json{{"text", t.text}, {"step_index", t.step_index}, {"sample_index", t.sample_index}};
}

inline Thought thought_from_json(const Json& j) {
    detail::check_fields(j, "Thought", {"text", "step_index", "sample_index"});
    Thought t;
    t.text = detail::get_as<std::string>(j, "text", "Thought");
    t.step_index = detail::get_as<int>(j, "step_index", "Thought");
    t.sample_index = detail::get_as<int>(j, "sample_index", "Thought");
    return t;
}

// --- Verdict ---------------------------------------------------------------

inline std::string_view to_string(Verdict v) { return v == Verdict::Likely ? "Likely" : "Impossible"; }

inline Verdict verdict_from_string(std::string_view s) {
    if (s == "Likely") return Verdict::Likely;
    if (s == "Impossible") return Verdict::Impossible;
    throw FormatError("unknown verdict '" + std::string(s) + "'");
}

// --- SearchNode ------------------------------------------------------------

inline Json to_json(const SearchNode& n) {
    Json judgments = Json::array();
    for (auto v : n.raw_judgments) judgments.push_back(std::string(to_string(v)));
    return Json{
        {"id", n.id},
        {"thought", n.thought ? to_json(*n.thought) : Json(nullptr)},
        {"score", n.score ? Json(n.score->to_string()) : Json(nullptr)},
        {"raw_judgments", judgments},
        {"unparseable_judgments", n.unparseable_judgments},
        {"pruned", n.pruned},
        {"on_selected_path", n.on_selected_path},
        {"terminal", n.terminal},
        {"parent", n.parent ? Json(*n.parent) : Json(nullptr)},
        {"children", n.children},
    };
}

inline SearchNode node_from_json(const Json& j) {
    constexpr std::string_view what = "SearchNode";
    detail::check_fields(j, what,
                         {"id", "thought", "score", "raw_judgments", "unparseable_judgments",
                          "pruned", "on_selected_path", "terminal", "parent", "children"});
    SearchNode n;
    n.id = detail::get_as<NodeId>(j, "id", what);
    if (!j.at("thought").is_null()) n.thought = thought_from_json(j.at("thought"));
    if (!j.at("score").is_null()) n.score = detail::get_rational(j, "score", what);
    for (const auto& v : detail::get_as<std::vector<std::string>>(j, "raw_judgments", what))
        n.raw_judgments.push_back(verdict_from_string(v));
    n.unparseable_judgments = detail::get_as<int>(j, "unparseable_judgments", what);
    n.pruned = detail::get_as<bool>(j, "pruned", what);
    n.on_selected_path = detail::get_as<bool>(j, "on_selected_path", what);
    n.terminal = detail::get_as<bool>(j, "terminal", what);
    if (!j.at("parent").is_null()) n.parent = detail::get_as<NodeId>(j, "parent", what);
    n.children = detail::get_as<std::vector<NodeId>>(j, "children", what);
    return n;
}

// --- SearchTree ------------------------------------------------------------

inline TreeStatus tree_status_from_string(std::string_view s) {
    if (s == "complete") return TreeStatus::Complete;
    if (s == "incomplete") return TreeStatus::Incomplete;
    if (s == "depth_exceeded") return TreeStatus::DepthExceeded;
    throw FormatError("unknown tree status '" + std::string(s) + "'");
}

struct TreeEncodeOptions {
    bool include_timing = true;
};

/// Header record on the first line, then one node per line.
inline std::string encode_tree(const SearchTree& tree, TreeEncodeOptions opts = {}) {
    Json header{
        {"instance_id", tree.instance_id},
        {"question", tree.question},
        {"root_input", tree.root_input},
        {"terminal_phrase", tree.terminal_phrase},
        {"selected_leaves", tree.selected_leaves},
        {"status", std::string(to_string(tree.status))},
        {"warnings", tree.warnings},
        {"node_count", tree.nodes.size()},
    };
    if (opts.include_timing) header["wall_clock_seconds"] = tree.wall_clock_seconds;
    std::string out = header.dump();
    out.push_back('\n');
    for (const auto& n : tree.nodes) {
        out += to_json(n).dump();
        out.push_back('\n');
    }
    return out;
}

inline std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!trim(line).empty()) lines.emplace_back(line);
        start = end + 1;
    }
    return lines;
}

inline SearchTree decode_tree(std::string_view text) {
    constexpr std::string_view what = "SearchTree";
    const auto lines = split_lines(text);
    if (lines.empty()) throw FormatError("SearchTree: empty input");
    const auto header = parse_json(lines.front(), what);
    detail::check_fields(header, what,
                         {"instance_id", "question", "root_input", "terminal_phrase",
                          "selected_leaves", "status", "warnings", "node_count"},
                         {"wall_clock_seconds"});
    SearchTree tree;
    tree.instance_id = detail::get_as<std::string>(header, "instance_id", what);
    tree.question = detail::get_as<std::string>(header, "question", what);
    tree.root_input = detail::get_as<std::string>(header, "root_input", what);
    tree.terminal_phrase = detail::get_as<std::string>(header, "terminal_phrase", what);
    tree.selected_leaves = detail::get_as<std::vector<NodeId>>(header, "selected_leaves", what);
    tree.status = tree_status_from_string(detail::get_as<std::string>(header, "status", what));
    tree.warnings = detail::get_as<std::vector<std::string>>(header, "warnings", what);
    if (header.contains("wall_clock_seconds"))
        tree.wall_clock_seconds = detail::get_as<double>(header, "wall_clock_seconds", what);
    const auto count = detail::get_as<std::size_t>(header, "node_count", what);
    if (count != lines.size() - 1)
        throw FormatError("SearchTree: node_count " + std::to_string(count) + " but " +
                          std::to_string(lines.size() - 1) + " node lines");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto node = node_from_json(parse_json(lines[i], "SearchNode"));
        if (node.id != i - 1) throw FormatError("SearchTree: node ids must be dense and ordered");
        tree.nodes.push_back(std::move(node));
    }
    if (tree.nodes.empty()) throw FormatError("SearchTree: no root node");
    return tree;
}

// --- PreferencePair --------------------------------------------------------

inline Json to_json(const PreferencePair& p) {
    return Json{{"instance_id", p.instance_id},
                {"step_index", p.step_index},
                {"context", p.context},
                {"chosen", p.chosen},
                {"rejected", p.rejected},
                {"chosen_score", p.chosen_score.to_string()},
                {"rejected_score", p.rejected_score.to_string()}};
}

inline PreferencePair pair_from_json(const Json& j) {
    constexpr std::string_view what = "PreferencePair";
    detail::check_fields(j, what,
                         {"instance_id", "step_index", "context", "chosen", "rejected",
                          "chosen_score", "rejected_score"});
    PreferencePair p;
    p.instance_id = detail::get_as<std::string>(j, "instance_id", what);
    p.step_index = detail::get_as<int>(j, "step_index", what);
    p.context = detail::get_as<std::string>(j, "context", what);
    p.chosen = detail::get_as<std::string>(j, "chosen", what);
    p.rejected = detail::get_as<std::string>(j, "rejected", what);
    p.chosen_score = detail::get_rational(j, "chosen_score", what);
    p.rejected_score = detail::get_rational(j, "rejected_score", what);
    if (p.step_index < 1) throw FormatError("PreferencePair: step_index must be >= 1");
    return p;
}

inline std::string encode_pairs(const std::vector<PreferencePair>& pairs) {
    std::string out;
    for (const auto& p : pairs) {
        out += to_json(p).dump();
        out.push_back('\n');
    }
    return out;
}

inline std::vector<PreferencePair> decode_pairs(std::string_view text) {
    std::vector<PreferencePair> out;
    for (const auto& line : split_lines(text)) out.push_back(pair_from_json(parse_json(line, "PreferencePair")));
    return out;
}

// --- SearchConfig ----------------------------------------------------------

inline Json to_json(const SearchConfig& c) {
    return Json{{"k", c.k},
                {"n", c.n},
                {"eval_samples", c.eval_samples},
                {"gen_temperature", c.gen_temperature},
                {"eval_temperature", c.eval_temperature},
                {"max_depth", c.max_depth},
                {"seed", c.seed}};
}

/// Missing fields keep their values from `base`.
inline SearchConfig config_from_json(const Json& j, SearchConfig base = {}) {
    constexpr std::string_view what = "SearchConfig";
    detail::check_fields(j, what, {},
                         {"k", "n", "eval_samples", "gen_temperature", "eval_temperature", "max_depth",
                          "seed"});
    if (j.contains("k")) base.k = detail::get_as<int>(j, "k", what);
    if (j.contains("n")) base.n = detail::get_as<int>(j, "n", what);
    if (j.contains("eval_samples")) base.eval_samples = detail::get_as<int>(j, "eval_samples", what);
    if (j.contains("gen_temperature")) base.gen_temperature = detail::get_as<double>(j, "gen_temperature", what);
    if (j.contains("eval_temperature"))
        base.eval_temperature = detail::get_as<double>(j, "eval_temperature", what);
    if (j.contains("max_depth")) base.max_depth = detail::get_as<int>(j, "max_depth", what);
    if (j.contains("seed")) base.seed = detail::get_as<std::uint64_t>(j, "seed", what);
    try {
        base.validate();
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("SearchConfig: ") + e.what());
    }
    return base;
}

inline std::string encode_config(const SearchConfig& c) { return to_json(c).dump() + "\n"; }

inline SearchConfig decode_config(std::string_view text) {
    const auto lines = split_lines(text);
    if (lines.size() != 1) throw FormatError("SearchConfig: expected exactly one record");
    const auto j = parse_json(lines.front(), "SearchConfig");
    detail::check_fields(j, "SearchConfig",
                         {"k", "n", "eval_samples", "gen_temperature", "eval_temperature", "max_depth",
                          "seed"});
    return config_from_json(j);
}

// --- files -----------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "' for reading");
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("failed writing '" + path.string() + "'");
}

}  // namespace cpo
