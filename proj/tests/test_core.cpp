#include <gtest/gtest.h>

#include "cpo/core.hpp"
#include "cpo/json_io.hpp"
#include "support.hpp"

using namespace cpo;

namespace {

SearchNode child(NodeId id, NodeId parent, std::string text, int step, std::vector<Verdict> v) {
    SearchNode n;
    n.id = id;
    n.parent = parent;
    n.thought = Thought{std::move(text), step, static_cast<int>(id % 4)};
    n.raw_judgments = std::move(v);
    n.score = mean_score(n.raw_judgments);
    return n;
}

SearchTree minimal_tree() {
    SearchTree t;
    t.instance_id = "q1";
    t.question = "q?";
    t.root_input = "Question: q?\nAnswer:";
    t.terminal_phrase = "so the final answer is:";
    t.nodes.push_back(SearchNode{});
    t.nodes[0].children = {1};
    t.nodes[0].on_selected_path = true;
    auto leaf = child(1, 0, "Step 1, so the final answer is: 3.", 1, {Verdict::Likely});
    leaf.terminal = true;
    leaf.on_selected_path = true;
    t.nodes.push_back(leaf);
    t.selected_leaves = {1};
    return t;
}

// Independent validator: every invariant re-checked by walking the tree.
bool brute_force_valid(const SearchTree& t, const SearchConfig& c) {
    if (t.nodes.empty() || t.nodes[0].parent || t.nodes[0].thought) return false;
    std::map<int, int> kept;
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
        const auto& n = t.nodes[i];
        if (n.id != i) return false;
        if (n.children.size() > static_cast<std::size_t>(c.k)) return false;
        for (auto ch : n.children)
            if (ch >= t.nodes.size() || t.nodes[ch].parent != i) return false;
        if (n.on_selected_path && n.pruned) return false;
        if (i == 0) {
            if (n.pruned || n.score) return false;
            continue;
        }
        if (!n.parent || *n.parent >= t.nodes.size() || !n.thought || !n.score) return false;
        const auto& p = t.nodes[*n.parent];
        if (std::count(p.children.begin(), p.children.end(), i) != 1) return false;
        if (n.thought->text.find_first_not_of(" \t\n\r") == std::string::npos) return false;
        const int pdepth = p.thought ? p.thought->step_index : 0;
        if (n.thought->step_index != pdepth + 1) return false;
        if (n.thought->sample_index < 0 || n.thought->sample_index >= c.k) return false;
        long long sum = 0;
        for (auto v : n.raw_judgments) sum += v == Verdict::Likely ? 10 : 1;
        const Rational expect = n.raw_judgments.empty()
                                    ? Rational::integer(1)
                                    : Rational(sum, static_cast<long long>(n.raw_judgments.size()));
        if (!(*n.score == expect)) return false;
        if (n.on_selected_path && !p.on_selected_path) return false;
        if (n.terminal && n.thought->text.find(t.terminal_phrase) == std::string::npos) return false;
        if (!n.pruned) ++kept[n.thought->step_index];
    }
    for (auto [d, count] : kept)
        if (count > c.n) return false;
    for (auto leaf : t.selected_leaves) {
        if (leaf >= t.nodes.size() || !t.nodes[leaf].terminal) return false;
        for (std::optional<NodeId> cur = leaf; cur; cur = t.nodes[*cur].parent)
            if (!t.nodes[*cur].on_selected_path) return false;
    }
    return true;
}

void mutate(SearchTree& t, SeededStream& rng) {
    if (t.nodes.size() < 2) return;
    const auto id = 1 + rng.below(t.nodes.size() - 1);
    auto& n = t.nodes[id];
    switch (rng.below(8)) {
        case 0: n.pruned = !n.pruned; break;
        case 1: n.on_selected_path = !n.on_selected_path; break;
        case 2: n.terminal = !n.terminal; break;
        case 3: n.score = Rational::integer(static_cast<std::int64_t>(rng.below(12))); break;
        case 4: n.thought->step_index += 1; break;
        case 5: n.thought->sample_index = 7; break;
        case 6: n.raw_judgments.push_back(Verdict::Likely); break;
        case 7: t.selected_leaves.push_back(id); break;
    }
}

}  // namespace

TEST(ValidateTree, MinimalTreeIsValid) { EXPECT_TRUE(validate_tree(minimal_tree(), SearchConfig{}).empty()); }

TEST(ValidateTree, SelectedLeafWithPrunedAncestorGivesOneViolation) {
    auto t = minimal_tree();
    auto mid = child(1, 0, "Step 1, half way.", 1, {Verdict::Likely});
    mid.children = {2};
    mid.on_selected_path = true;
    mid.pruned = true;
    auto leaf = child(2, 1, "Step 2, so the final answer is: 3.", 2, {Verdict::Likely});
    leaf.terminal = true;
    leaf.on_selected_path = true;
    t.nodes = {t.nodes[0], mid, leaf};
    t.selected_leaves = {2};
    const auto v = validate_tree(t, SearchConfig{});
    ASSERT_EQ(v.size(), 1u);
    EXPECT_NE(v[0].find("node 1"), std::string::npos);
}

TEST(ValidateTree, DetectsEachBrokenInvariant) {
    const SearchConfig cfg{.k = 1, .n = 1};
    auto t = minimal_tree();
    t.nodes[1].score = Rational::integer(5);
    EXPECT_FALSE(validate_tree(t, cfg).empty());

    t = minimal_tree();
    t.nodes[1].thought->text = "Step 1, no phrase";
    EXPECT_FALSE(validate_tree(t, cfg).empty());

    t = minimal_tree();
    t.nodes[0].on_selected_path = false;
    EXPECT_FALSE(validate_tree(t, cfg).empty());

    t = minimal_tree();
    t.nodes[0].children.push_back(2);
    t.nodes.push_back(child(2, 0, "Step 1, other", 1, {Verdict::Impossible}));
    EXPECT_FALSE(validate_tree(t, cfg).empty());  // two children with k = 1, two kept with n = 1
}

TEST(ValidateTree, AgreesWithBruteForceOnRandomTrees) {
    int invalid_seen = 0;
    for (std::uint64_t trial = 0; trial < 150; ++trial) {
        const auto s = cpo::testing::random_scenario(trial);
        auto tree = cpo::testing::scripted_tree(s);
        EXPECT_TRUE(validate_tree(tree, s.config).empty()) << "trial " << trial;
        EXPECT_TRUE(brute_force_valid(tree, s.config)) << "trial " << trial;
        SeededStream rng(trial);
        for (int m = 0; m < 4; ++m) {
            auto broken = tree;
            mutate(broken, rng);
            const bool bf = brute_force_valid(broken, s.config);
            invalid_seen += !bf;
            EXPECT_EQ(validate_tree(broken, s.config).empty(), bf) << "trial " << trial << " mutation " << m;
        }
    }
    EXPECT_GT(invalid_seen, 100);
}

TEST(Score, MeanMapping) {
    using V = Verdict;
    EXPECT_EQ(mean_score({V::Likely, V::Likely, V::Impossible, V::Likely}), Rational(31, 4));
    EXPECT_EQ(mean_score({}), Rational::integer(1));
}

TEST(Score, BoundsForAllMixes) {
    for (int m = 1; m <= 10; ++m) {
        for (int likely = 0; likely <= m; ++likely) {
            std::vector<Verdict> v(static_cast<std::size_t>(m), Verdict::Impossible);
            std::fill_n(v.begin(), likely, Verdict::Likely);
            const auto s = mean_score(v);
            EXPECT_GE(s, Rational::integer(1));
            EXPECT_LE(s, Rational::integer(10));
            EXPECT_EQ(s == Rational::integer(10), likely == m);
            EXPECT_EQ(s == Rational::integer(1), likely == 0);
        }
    }
}

TEST(Rational, ParseAndPrint) {
    EXPECT_EQ(Rational(62, 8).to_string(), "31/4");
    EXPECT_EQ(Rational::parse("31/4"), Rational(31, 4));
    EXPECT_EQ(Rational::parse("10"), Rational::integer(10));
    EXPECT_THROW(Rational::parse("1/x"), InvalidArgument);
    EXPECT_THROW(Rational(1, 0), InvalidArgument);
    EXPECT_LT(Rational(7, 3), Rational(5, 2));
}

TEST(Config, DefaultsAndValidation) {
    const auto g = default_config(TaskClass::General);
    EXPECT_EQ(g.k, 10);
    EXPECT_EQ(g.n, 5);
    EXPECT_EQ(g.eval_samples, 3);
    EXPECT_EQ(g.max_depth, 12);
    EXPECT_DOUBLE_EQ(g.gen_temperature, 0.4);
    EXPECT_DOUBLE_EQ(default_config(TaskClass::Arithmetic).gen_temperature, 0.9);
    EXPECT_DOUBLE_EQ(kDefaultBeta, 0.1);
    SearchConfig bad;
    bad.n = 0;
    EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(InstanceId, SuppliedOrHashed) {
    EXPECT_EQ(make_instance_id("abc", "x"), "abc");
    EXPECT_EQ(make_instance_id("", "x"), make_instance_id("", "x"));
    EXPECT_NE(make_instance_id("", "x"), make_instance_id("", "y"));
    EXPECT_EQ(make_instance_id("", "x").size(), 16u);
}

TEST(Serialization, TreeRoundTripIsByteExact) {
    for (std::uint64_t trial = 0; trial < 60; ++trial) {
        auto tree = cpo::testing::scripted_tree(cpo::testing::random_scenario(trial));
        for (bool timing : {false, true}) {
            const auto bytes = encode_tree(tree, {.include_timing = timing});
            const auto decoded = decode_tree(bytes);
            EXPECT_EQ(encode_tree(decoded, {.include_timing = timing}), bytes);
            if (!timing) {
                auto expect = tree;
                expect.wall_clock_seconds = 0.0;
                EXPECT_EQ(decoded, expect);
            }
        }
    }
}

TEST(Serialization, PairAndConfigRoundTrip) {
    std::vector<PreferencePair> pairs{
        {"i", 2, "ctx \"quoted\"\n", "w", "l", Rational(31, 4), Rational::integer(1)},
        {"j", 1, "c", "ünïcødé", "other", Rational::integer(10), Rational(11, 2)},
    };
    const auto bytes = encode_pairs(pairs);
    EXPECT_EQ(decode_pairs(bytes), pairs);
    EXPECT_EQ(encode_pairs(decode_pairs(bytes)), bytes);

    SearchConfig c;
    c.k = 3;
    c.seed = 0xffffffffffffffffULL;
    c.gen_temperature = 0.9;
    const auto cb = encode_config(c);
    EXPECT_EQ(decode_config(cb), c);
    EXPECT_EQ(encode_config(decode_config(cb)), cb);
}

TEST(Serialization, RejectsUnknownAndMissingFields) {
    EXPECT_THROW(decode_pairs(R"({"instance_id":"i","step_index":1,"context":"c","chosen":"w","rejected":"l",)"
                              R"("chosen_score":"10","rejected_score":"1","extra":1})"),
                 FormatError);
    EXPECT_THROW(decode_pairs(R"({"instance_id":"i"})"), FormatError);
    EXPECT_THROW(decode_config(R"({"k":1})"), FormatError);
    EXPECT_THROW(decode_tree("not json"), FormatError);
}

TEST(Strings, Helpers) {
    EXPECT_EQ(trim("  a b \n"), "a b");
    EXPECT_EQ(normalize_whitespace(" a \t\n b  "), "a b");
    EXPECT_EQ(split_whitespace(" 5 +  4 "), (std::vector<std::string>{"5", "+", "4"}));
    EXPECT_EQ(render_state("x", {{"Step 1, a", 1, 0}, {"Step 2, b", 2, 0}}), "x Step 1, a Step 2, b");
}

TEST(SeededStream, ShuffleIsPermutationAndDeterministic) {
    std::vector<int> v(20);
    std::iota(v.begin(), v.end(), 0);
    auto a = v, b = v;
    SeededStream r1(42), r2(42);
    r1.shuffle(a);
    r2.shuffle(b);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, v);
    std::sort(a.begin(), a.end());
    EXPECT_EQ(a, v);
}
