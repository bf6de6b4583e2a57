#pragma once

// Turns an emitted pair file into toy-model training data and reports how
// the chain (per-step) and full-path objectives treat shared-prefix tokens.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cpo/core.hpp"
#include "cpo/json_io.hpp"
#include "cpo/losses.hpp"
#include "cpo/toy_model.hpp"

namespace cpo {

/// The arithmetic chain used throughout the docs: step 1 prefers "5 + 4 = 9"
/// over "5 + 4 = 8", step 2 prefers "... = 11" over "... = 15". Its last step
/// is the full-path pair whose shared prefix is "5 + 4 = 9 and 9 + 2 =".
inline std::vector<PreferencePair> arithmetic_example_pairs() {
    return {
        PreferencePair{"arith", 1, "Q:", "5 + 4 = 9", "5 + 4 = 8", Rational::integer(10), Rational::integer(1)},
        PreferencePair{"arith", 2, "Q: 5 + 4 = 9", "and 9 + 2 = 11", "and 9 + 2 = 15", Rational::integer(10),
                       Rational::integer(1)},
    };
}

struct GradDemoData {
    Symbolizer symbolizer;
    std::vector<StepLossInput> chain;      // one per pair
    std::vector<StepLossInput> full_path;  // context x, whole paths
};

/// Per-step inputs come straight from the pairs. Full-path inputs are built
/// from each instance's deepest step: x is the context of that instance's
/// shallowest pair and the path is (context minus x) followed by the step.
inline GradDemoData build_grad_demo_data(const std::vector<PreferencePair>& pairs, double beta,
                                         std::size_t max_vocab = kMaxVocab) {
    if (pairs.empty()) throw EmptyDataset("no preference pairs");
    std::vector<std::string> texts;
    for (const auto& p : pairs) {
        texts.push_back(p.context);
        texts.push_back(p.chosen);
        texts.push_back(p.rejected);
    }
    GradDemoData d{Symbolizer::fit(texts, max_vocab), {}, {}};
    for (const auto& p : pairs)
        d.chain.push_back({d.symbolizer.encode(p.context), d.symbolizer.encode(p.chosen),
                           d.symbolizer.encode(p.rejected), beta});

    std::map<std::string, std::pair<int, int>> depth_range;  // instance -> (min step, max step)
    std::map<std::string, std::string> x_of;
    for (const auto& p : pairs) {
        auto [it, fresh] = depth_range.try_emplace(p.instance_id, p.step_index, p.step_index);
        if (fresh || p.step_index < it->second.first) x_of[p.instance_id] = p.context;
        it->second.first = std::min(it->second.first, p.step_index);
        it->second.second = std::max(it->second.second, p.step_index);
    }
    for (const auto& p : pairs) {
        if (p.step_index != depth_range[p.instance_id].second) continue;
        const auto x = d.symbolizer.encode(x_of[p.instance_id]);
        const auto ctx = d.symbolizer.encode(p.context);
        Symbols prefix;
        Symbols context = ctx;
        if (ctx.size() >= x.size() && std::equal(x.begin(), x.end(), ctx.begin())) {
            prefix.assign(ctx.begin() + static_cast<std::ptrdiff_t>(x.size()), ctx.end());
            context = x;
        }
        Symbols w = prefix, l = prefix;
        const auto cw = d.symbolizer.encode(p.chosen);
        const auto cl = d.symbolizer.encode(p.rejected);
        w.insert(w.end(), cw.begin(), cw.end());
        l.insert(l.end(), cl.begin(), cl.end());
        d.full_path.push_back({context, w, l, beta});
    }
    return d;
}

/// Rows reached at some position inside the longest common prefix of a
/// full-path pair and never at or after the divergence point of any pair.
/// Their logits affect only shared-prefix token probabilities.
inline std::vector<std::size_t> shared_prefix_only_rows(const ToyModel& model,
                                                        const std::vector<StepLossInput>& full_paths) {
    std::set<std::size_t> shared, divergent;
    for (const auto& in : full_paths) {
        std::size_t lcp = 0;
        while (lcp < in.chosen.size() && lcp < in.rejected.size() && in.chosen[lcp] == in.rejected[lcp]) ++lcp;
        for (const auto* seq : {&in.chosen, &in.rejected}) {
            Symbols history = in.context;
            history.insert(history.end(), seq->begin(), seq->end());
            for (std::size_t t = 0; t < seq->size(); ++t) {
                const auto row = model.row_at(history, in.context.size() + t);
                (t < lcp ? shared : divergent).insert(row);
            }
        }
    }
    std::vector<std::size_t> out;
    std::set_difference(shared.begin(), shared.end(), divergent.begin(), divergent.end(), std::back_inserter(out));
    return out;
}

inline double max_abs_over_rows(const ToyModel& model, const std::vector<double>& grad,
                                const std::vector<std::size_t>& rows) {
    double m = 0.0;
    for (auto row : rows)
        for (std::size_t v = 0; v < model.vocab_size(); ++v)
            m = std::max(m, std::abs(grad[model.parameter_index(row, static_cast<Symbol>(v))]));
    return m;
}

struct GradDemoOptions {
    double beta = kDefaultBeta;
    int order = 2;
    int steps = 200;
    double learning_rate = 0.1;
    LossKind train_kind = LossKind::Cpo;
    std::uint64_t seed = 0;
    double reference_scale = 0.5;
    std::size_t fd_parameter_budget = 512;
};

struct GradDemoReport {
    std::size_t vocab_size = 0;
    std::size_t parameter_count = 0;
    std::size_t chain_pairs = 0;
    std::size_t full_path_pairs = 0;
    std::vector<std::string> shared_rows;
    double fpo_shared_max_abs = 0.0;
    double cpo_shared_max_abs = 0.0;
    double cpo_fd_relative_error = 0.0;
    double fpo_fd_relative_error = 0.0;
    std::size_t fd_parameters_checked = 0;
    std::vector<TracePoint> trace;
};

/// Parameters for the finite-difference check: every entry of every row the
/// data touches, thinned deterministically to the budget.
inline std::vector<std::size_t> fd_indices(const ToyModel& model, const GradDemoData& data, std::size_t budget,
                                           std::uint64_t seed) {
    std::set<std::size_t> rows;
    auto touch = [&](const StepLossInput& in) {
        for (const auto* seq : {&in.chosen, &in.rejected}) {
            Symbols history = in.context;
            history.insert(history.end(), seq->begin(), seq->end());
            for (std::size_t t = 0; t < seq->size(); ++t) rows.insert(model.row_at(history, in.context.size() + t));
        }
    };
    for (const auto& in : data.chain) touch(in);
    for (const auto& in : data.full_path) touch(in);
    std::vector<std::size_t> idx;
    for (auto row : rows)
        for (std::size_t v = 0; v < model.vocab_size(); ++v) idx.push_back(model.parameter_index(row, static_cast<Symbol>(v)));
    if (idx.size() > budget) {
        SeededStream rng(mix_seed(seed, 0xfd));
        rng.shuffle(idx);
        idx.resize(budget);
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

inline GradDemoReport run_grad_demo(const std::vector<PreferencePair>& pairs, const GradDemoOptions& opt) {
    const auto data = build_grad_demo_data(pairs, opt.beta);
    ToyModel reference(data.symbolizer.vocab(), opt.order);
    SeededStream rng(mix_seed(opt.seed, 0x7e7));
    reference.randomize(rng, opt.reference_scale);

    GradDemoReport rep;
    rep.vocab_size = reference.vocab_size();
    rep.parameter_count = reference.parameter_count();
    rep.chain_pairs = data.chain.size();
    rep.full_path_pairs = data.full_path.size();

    // Gradients at the starting point of training, policy = reference.
    const auto& policy = reference;
    const auto rows = shared_prefix_only_rows(policy, data.full_path);
    for (auto r : rows) rep.shared_rows.push_back(policy.row_label(r));
    const auto g_cpo = analytic_gradient(LossKind::Cpo, policy, reference, data.chain);
    const auto g_fpo = analytic_gradient(LossKind::Fpo, policy, reference, data.full_path);
    rep.fpo_shared_max_abs = max_abs_over_rows(policy, g_fpo, rows);
    rep.cpo_shared_max_abs = max_abs_over_rows(policy, g_cpo, rows);

    const auto idx = fd_indices(policy, data, opt.fd_parameter_budget, opt.seed);
    rep.fd_parameters_checked = idx.size();
    auto restricted = [&](const std::vector<double>& g) {
        std::vector<double> out;
        for (auto i : idx) out.push_back(g[i]);
        return out;
    };
    const auto fd_cpo = finite_difference_gradient(LossKind::Cpo, policy, reference, data.chain, 1e-5, idx);
    const auto fd_fpo = finite_difference_gradient(LossKind::Fpo, policy, reference, data.full_path, 1e-5, idx);
    rep.cpo_fd_relative_error = relative_error(restricted(g_cpo), restricted(fd_cpo));
    rep.fpo_fd_relative_error = relative_error(restricted(g_fpo), restricted(fd_fpo));

    const auto& train_data = opt.train_kind == LossKind::Fpo ? data.full_path : data.chain;
    rep.trace = train_demo(reference, train_data, opt.learning_rate, opt.steps, opt.train_kind).trace;
    return rep;
}

inline Json to_json(const GradDemoReport& r) {
    Json trace = Json::array();
    for (std::size_t s = 0; s < r.trace.size(); ++s)
        trace.push_back({{"step", s}, {"loss", r.trace[s].loss}, {"mean_margin", r.trace[s].mean_margin}});
    return Json{
        {"vocab_size", r.vocab_size},
        {"parameter_count", r.parameter_count},
        {"chain_pairs", r.chain_pairs},
        {"full_path_pairs", r.full_path_pairs},
        {"cancellation",
         {{"shared_prefix_rows", r.shared_rows},
          {"fpo_max_abs_gradient", r.fpo_shared_max_abs},
          {"cpo_max_abs_gradient", r.cpo_shared_max_abs}}},
        {"finite_difference",
         {{"parameters_checked", r.fd_parameters_checked},
          {"cpo_relative_error", r.cpo_fd_relative_error},
          {"fpo_relative_error", r.fpo_fd_relative_error}}},
        {"trace", trace},
    };
}

}  // namespace cpo
