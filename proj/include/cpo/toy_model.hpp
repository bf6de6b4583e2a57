#pragma once

// Tabular autoregressive model: next-symbol logits indexed by the trailing
// `order` symbols of the history. Every parameter is one logit, so
// likelihoods and their gradients are available in closed form.

#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cpo/core.hpp"

namespace cpo {

class UnknownSymbol : public Error {
public:
    using Error::Error;
};

using Symbol = int;
using Symbols = std::vector<Symbol>;

inline constexpr std::size_t kMaxVocab = 64;

class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
        if (symbols_.empty() || symbols_.size() > kMaxVocab)
            throw InvalidArgument("vocabulary size must be in [1, 64]");
        for (std::size_t i = 0; i < symbols_.size(); ++i) {
            if (!index_.emplace(symbols_[i], static_cast<Symbol>(i)).second)
                throw InvalidArgument("duplicate vocabulary symbol '" + symbols_[i] + "'");
        }
    }

    std::size_t size() const { return symbols_.size(); }
    const std::vector<std::string>& symbols() const { return symbols_; }
    const std::string& symbol(Symbol s) const { return symbols_.at(static_cast<std::size_t>(s)); }

    bool contains(std::string_view s) const { return index_.count(std::string(s)) != 0; }

    Symbol id(std::string_view s) const {
        const auto it = index_.find(std::string(s));
        if (it == index_.end()) throw UnknownSymbol("unknown symbol '" + std::string(s) + "'");
        return it->second;
    }

    Symbols encode(const std::vector<std::string>& tokens) const {
        Symbols out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) out.push_back(id(t));
        return out;
    }

private:
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, Symbol> index_;
};

class ToyModel {
public:
    ToyModel(Vocabulary vocab, int order) : vocab_(std::move(vocab)), order_(order) {
        if (order < 0 || order > 2) throw InvalidArgument("order must be 0, 1 or 2");
        const auto v = vocab_.size();
        std::size_t rows = 0;
        std::size_t width = 1;
        for (int len = 0; len <= order_; ++len) {
            offsets_.push_back(rows);
            rows += width;
            width *= v;
        }
        rows_ = rows;
        logits_.assign(rows_ * v, 0.0);
    }

    const Vocabulary& vocab() const { return vocab_; }
    std::size_t vocab_size() const { return vocab_.size(); }
    int order() const { return order_; }
    std::size_t row_count() const { return rows_; }
    std::size_t parameter_count() const { return logits_.size(); }

    std::vector<double>& parameters() { return logits_; }
    const std::vector<double>& parameters() const { return logits_; }

    std::size_t parameter_index(std::size_t row, Symbol next) const {
        return row * vocab_size() + static_cast<std::size_t>(next);
    }

    /// Row for a context of up to `order` symbols (shorter only at the start
    /// of a sequence).
    std::size_t row_of(std::span<const Symbol> context) const {
        if (context.size() > static_cast<std::size_t>(order_)) throw InvalidArgument("context longer than order");
        std::size_t idx = 0;
        for (auto s : context) idx = idx * vocab_size() + static_cast<std::size_t>(s);
        return offsets_[context.size()] + idx;
    }

    /// Row used to predict the symbol at `position` of `history`.
    std::size_t row_at(std::span<const Symbol> history, std::size_t position) const {
        const auto take = std::min<std::size_t>(static_cast<std::size_t>(order_), position);
        return row_of(history.subspan(position - take, take));
    }

    /// Human-readable context for a row, e.g. "(4 =)".
    std::string row_label(std::size_t row) const {
        std::size_t len = 0;
        while (len + 1 < offsets_.size() && row >= offsets_[len + 1]) ++len;
        auto idx = row - offsets_[len];
        std::vector<std::string> parts(len);
        for (std::size_t i = len; i > 0; --i) {
            parts[i - 1] = vocab_.symbol(static_cast<Symbol>(idx % vocab_size()));
            idx /= vocab_size();
        }
        std::string out = "(";
        for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? " " : "") + parts[i];
        return out + ")";
    }

    std::span<const double> row_logits(std::size_t row) const {
        return std::span<const double>(logits_).subspan(row * vocab_size(), vocab_size());
    }

    double log_normalizer(std::size_t row) const {
        const auto l = row_logits(row);
        double m = -std::numeric_limits<double>::infinity();
        for (double x : l) m = std::max(m, x);
        double s = 0.0;
        for (double x : l) s += std::exp(x - m);
        return m + std::log(s);
    }

    std::vector<double> probabilities(std::size_t row) const {
        const auto l = row_logits(row);
        const double z = log_normalizer(row);
        std::vector<double> p(l.size());
        for (std::size_t i = 0; i < l.size(); ++i) p[i] = std::exp(l[i] - z);
        return p;
    }

    void check_symbols(std::span<const Symbol> seq) const {
        for (auto s : seq)
            if (s < 0 || static_cast<std::size_t>(s) >= vocab_size())
                throw UnknownSymbol("symbol id " + std::to_string(s) + " outside vocabulary");
    }

    /// Logits drawn uniformly from [-scale, scale].
    void randomize(SeededStream& rng, double scale) {
        for (auto& x : logits_) x = (2.0 * rng.uniform01() - 1.0) * scale;
    }

private:
    Vocabulary vocab_;
    int order_;
    std::vector<std::size_t> offsets_;
    std::size_t rows_ = 0;
    std::vector<double> logits_;
};

/// Whitespace tokenizer onto a bounded vocabulary. Id 0 is the reserved
/// out-of-vocabulary symbol.
class Symbolizer {
public:
    static constexpr std::string_view kUnknown = "<unk>";

    /// Keeps the (max_size - 1) most frequent tokens, ties broken
    /// lexicographically.
    static Symbolizer fit(const std::vector<std::string>& texts, std::size_t max_size = kMaxVocab) {
        if (max_size < 2 || max_size > kMaxVocab) throw InvalidArgument("max_size must be in [2, 64]");
        std::map<std::string, std::size_t> counts;
        for (const auto& t : texts)
            for (auto& tok : split_whitespace(t))
                if (tok != kUnknown) ++counts[tok];
        std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        std::vector<std::string> symbols{std::string(kUnknown)};
        for (const auto& [tok, _] : ranked) {
            if (symbols.size() >= max_size) break;
            symbols.push_back(tok);
        }
        return Symbolizer(Vocabulary(std::move(symbols)));
    }

    explicit Symbolizer(Vocabulary vocab) : vocab_(std::move(vocab)) {}

    const Vocabulary& vocab() const { return vocab_; }

    Symbols encode(std::string_view text) const {
        Symbols out;
        for (const auto& tok : split_whitespace(text)) out.push_back(vocab_.contains(tok) ? vocab_.id(tok) : 0);
        return out;
    }

private:
    Vocabulary vocab_;
};

}  // namespace cpo
