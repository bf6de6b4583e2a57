#include <gtest/gtest.h>

#include "cpo/toy_model.hpp"

using namespace cpo;

namespace {

Vocabulary letters(std::size_t n) {
    std::vector<std::string> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(std::string(1, static_cast<char>('a' + i)));
    return Vocabulary(v);
}

}  // namespace

TEST(Vocabulary, IdsAndErrors) {
    const Vocabulary v({"x", "y", "z"});
    EXPECT_EQ(v.size(), 3u);
    EXPECT_EQ(v.id("y"), 1);
    EXPECT_EQ(v.symbol(2), "z");
    EXPECT_EQ(v.encode({"z", "x"}), (Symbols{2, 0}));
    EXPECT_THROW(v.id("w"), UnknownSymbol);
    EXPECT_THROW(Vocabulary(std::vector<std::string>{"a", "a"}), InvalidArgument);
    EXPECT_THROW(letters(0), InvalidArgument);
    std::vector<std::string> big;
    for (int i = 0; i < 65; ++i) big.push_back("t" + std::to_string(i));
    EXPECT_THROW(Vocabulary{big}, InvalidArgument);
}

TEST(ToyModel, ShapeAndRows) {
    const ToyModel m(letters(3), 2);
    EXPECT_EQ(m.row_count(), 1u + 3u + 9u);
    EXPECT_EQ(m.parameter_count(), 13u * 3u);
    const Symbols h{2, 0, 1};
    EXPECT_EQ(m.row_at(h, 0), m.row_of(Symbols{}));
    EXPECT_EQ(m.row_at(h, 1), m.row_of(Symbols{2}));
    EXPECT_EQ(m.row_at(h, 3), m.row_of(Symbols{0, 1}));
    EXPECT_EQ(m.row_label(m.row_of(Symbols{0, 1})), "(a b)");
    EXPECT_EQ(m.row_label(m.row_of(Symbols{})), "()");
    EXPECT_THROW(ToyModel(letters(2), 3), InvalidArgument);
    EXPECT_THROW(m.row_of(Symbols{0, 0, 0}), InvalidArgument);
}

TEST(ToyModel, DistinctRowsForDistinctContexts) {
    const ToyModel m(letters(4), 2);
    std::set<std::size_t> rows{m.row_of(Symbols{})};
    for (Symbol a = 0; a < 4; ++a) {
        rows.insert(m.row_of(Symbols{a}));
        for (Symbol b = 0; b < 4; ++b) rows.insert(m.row_of(Symbols{a, b}));
    }
    EXPECT_EQ(rows.size(), m.row_count());
}

TEST(ToyModel, ProbabilitiesSumToOne) {
    for (int order = 0; order <= 2; ++order) {
        ToyModel m(letters(7), order);
        SeededStream rng(static_cast<std::uint64_t>(order));
        m.randomize(rng, 30.0);
        for (std::size_t r = 0; r < m.row_count(); ++r) {
            const auto p = m.probabilities(r);
            double s = 0.0;
            for (double x : p) s += x;
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(ToyModel, SymbolRangeChecked) {
    const ToyModel m(letters(3), 1);
    EXPECT_THROW(m.check_symbols(Symbols{0, 3}), UnknownSymbol);
    EXPECT_THROW(m.check_symbols(Symbols{-1}), UnknownSymbol);
    EXPECT_NO_THROW(m.check_symbols(Symbols{0, 2}));
}

TEST(Symbolizer, FrequencyOrderAndUnknown) {
    const auto s = Symbolizer::fit({"b a b", "c b a", "d"}, 4);
    // <unk>, then b (3), a (2), then c/d tie broken lexicographically.
    EXPECT_EQ(s.vocab().symbol(0), "<unk>");
    EXPECT_EQ(s.vocab().symbol(1), "b");
    EXPECT_EQ(s.vocab().symbol(2), "a");
    EXPECT_EQ(s.vocab().symbol(3), "c");
    EXPECT_EQ(s.encode(" a  d b "), (Symbols{2, 0, 1}));
    EXPECT_THROW(Symbolizer::fit({"a"}, 65), InvalidArgument);
}
