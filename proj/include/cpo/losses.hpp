#pragma once

// Preference losses over ToyModel with closed-form gradients.
//
//   step loss  L_i   = -log sigmoid(beta * [(log pi(w|c) - log ref(w|c)) - (log pi(l|c) - log ref(l|c))])
//   chain loss L_CPO = mean of L_i over the per-step pairs
//   path loss  L_FPO = the same expression over whole paths conditioned on x
//
// d(log pi(y|c)) / d logit[row][v] = sum over positions of y predicted from
// `row` of (1[v = y_t] - p(v | row)). Chosen and rejected gradients are built
// in separate sparse buffers and subtracted, so a row reached only through a
// shared prefix yields an exact zero.

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "cpo/core.hpp"
#include "cpo/toy_model.hpp"

namespace cpo {

class EmptyDataset : public Error {
public:
    using Error::Error;
};

class DivergenceDetected : public Error {
public:
    using Error::Error;
};

struct StepLossInput {
    Symbols context;
    Symbols chosen;
    Symbols rejected;
    double beta = kDefaultBeta;

    void validate() const {
        if (chosen.empty() || rejected.empty()) throw InvalidArgument("chosen and rejected must be non-empty");
        if (!(beta > 0.0)) throw InvalidArgument("beta must be > 0");
    }
};

enum class LossKind { DpoStep, Cpo, Fpo };

// --- scalar helpers --------------------------------------------------------

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// -log sigmoid(z), evaluated without overflow.
inline double neg_log_sigmoid(double z) {
    if (z >= 0) return std::log1p(std::exp(-z));
    return -z + std::log1p(std::exp(z));
}

/// Fixed-order pairwise summation; the result depends only on the values
/// and their order.
inline double pairwise_sum(std::span<const double> v) {
    if (v.empty()) return 0.0;
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const auto half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

// --- likelihood ------------------------------------------------------------

inline double seq_logprob(const ToyModel& model, std::span<const Symbol> context, std::span<const Symbol> continuation) {
    model.check_symbols(context);
    model.check_symbols(continuation);
    Symbols history(context.begin(), context.end());
    history.insert(history.end(), continuation.begin(), continuation.end());
    double lp = 0.0;
    for (std::size_t t = 0; t < continuation.size(); ++t) {
        const auto pos = context.size() + t;
        const auto row = model.row_at(history, pos);
        lp += model.row_logits(row)[static_cast<std::size_t>(continuation[t])] - model.log_normalizer(row);
    }
    return lp;
}

/// Sparse gradient: row -> d/d logits of that row.
using RowGradient = std::map<std::size_t, std::vector<double>>;

inline RowGradient seq_logprob_gradient(const ToyModel& model, std::span<const Symbol> context,
                                        std::span<const Symbol> continuation) {
    model.check_symbols(context);
    model.check_symbols(continuation);
    Symbols history(context.begin(), context.end());
    history.insert(history.end(), continuation.begin(), continuation.end());
    RowGradient g;
    const auto v = model.vocab_size();
    for (std::size_t t = 0; t < continuation.size(); ++t) {
        const auto row = model.row_at(history, context.size() + t);
        const auto p = model.probabilities(row);
        auto& acc = g[row];
        if (acc.empty()) acc.assign(v, 0.0);
        for (std::size_t i = 0; i < v; ++i) acc[i] -= p[i];
        acc[static_cast<std::size_t>(continuation[t])] += 1.0;
    }
    return g;
}

// --- losses ----------------------------------------------------------------

/// beta * (chosen log-ratio - rejected log-ratio).
inline double preference_margin(const ToyModel& policy, const ToyModel& reference, const StepLossInput& in) {
    in.validate();
    const double dw = seq_logprob(policy, in.context, in.chosen) - seq_logprob(reference, in.context, in.chosen);
    const double dl = seq_logprob(policy, in.context, in.rejected) - seq_logprob(reference, in.context, in.rejected);
    return in.beta * (dw - dl);
}

inline double dpo_step_loss(const ToyModel& policy, const ToyModel& reference, const StepLossInput& in) {
    return neg_log_sigmoid(preference_margin(policy, reference, in));
}

inline double cpo_loss(const ToyModel& policy, const ToyModel& reference, std::span<const StepLossInput> pairs) {
    if (pairs.empty()) throw EmptyDataset("no preference pairs");
    std::vector<double> losses;
    losses.reserve(pairs.size());
    for (const auto& p : pairs) losses.push_back(dpo_step_loss(policy, reference, p));
    return pairwise_sum(losses) / static_cast<double>(pairs.size());
}

inline double fpo_loss(const ToyModel& policy, const ToyModel& reference, const Symbols& context,
                       const Symbols& full_chosen, const Symbols& full_rejected, double beta) {
    return dpo_step_loss(policy, reference, StepLossInput{context, full_chosen, full_rejected, beta});
}

/// Mean FPO loss over full-path pairs (each input's chosen/rejected are
/// whole paths and its context is x alone).
inline double fpo_dataset_loss(const ToyModel& policy, const ToyModel& reference,
                               std::span<const StepLossInput> paths) {
    if (paths.empty()) throw EmptyDataset("no full-path pairs");
    return cpo_loss(policy, reference, paths);
}

inline double loss_value(LossKind kind, const ToyModel& policy, const ToyModel& reference,
                         std::span<const StepLossInput> inputs) {
    switch (kind) {
        case LossKind::DpoStep:
            if (inputs.size() != 1) throw InvalidArgument("DPO step loss takes exactly one pair");
            return dpo_step_loss(policy, reference, inputs.front());
        case LossKind::Cpo: return cpo_loss(policy, reference, inputs);
        case LossKind::Fpo: return fpo_dataset_loss(policy, reference, inputs);
    }
    return 0.0;
}

// --- gradients -------------------------------------------------------------

/// d(margin)/d(policy logits) / beta, as a sparse row map.
inline RowGradient log_ratio_difference_gradient(const ToyModel& policy, const StepLossInput& in) {
    auto gw = seq_logprob_gradient(policy, in.context, in.chosen);
    const auto gl = seq_logprob_gradient(policy, in.context, in.rejected);
    const auto v = policy.vocab_size();
    for (const auto& [row, vals] : gl) {
        auto& acc = gw[row];
        if (acc.empty()) acc.assign(v, 0.0);
        for (std::size_t i = 0; i < v; ++i) acc[i] -= vals[i];
    }
    return gw;
}

/// Adds scale * dL_i/dtheta into `grad` (dense, policy-shaped).
inline void accumulate_step_gradient(const ToyModel& policy, const ToyModel& reference, const StepLossInput& in,
                                     double scale, std::vector<double>& grad) {
    const double margin = preference_margin(policy, reference, in);
    // dL/dmargin = -sigmoid(-margin)
    const double coef = -sigmoid(-margin) * in.beta * scale;
    const auto diff = log_ratio_difference_gradient(policy, in);
    const auto v = policy.vocab_size();
    for (const auto& [row, vals] : diff)
        for (std::size_t i = 0; i < v; ++i) grad[row * v + i] += coef * vals[i];
}

/// Closed-form gradient w.r.t. every policy logit. Reference logits are
/// constants of the loss and get no gradient.
inline std::vector<double> analytic_gradient(LossKind kind, const ToyModel& policy, const ToyModel& reference,
                                             std::span<const StepLossInput> inputs) {
    if (kind == LossKind::DpoStep && inputs.size() != 1)
        throw InvalidArgument("DPO step gradient takes exactly one pair");
    if (inputs.empty()) throw EmptyDataset("no preference pairs");
    std::vector<double> grad(policy.parameter_count(), 0.0);
    const double scale = 1.0 / static_cast<double>(inputs.size());
    for (const auto& in : inputs) accumulate_step_gradient(policy, reference, in, scale, grad);
    return grad;
}

/// Central differences on the selected parameters (all when `indices` is
/// empty). Entries outside `indices` are left at zero.
inline std::vector<double> finite_difference_gradient(LossKind kind, const ToyModel& policy,
                                                      const ToyModel& reference,
                                                      std::span<const StepLossInput> inputs, double step = 1e-5,
                                                      std::span<const std::size_t> indices = {}) {
    ToyModel probe = policy;
    auto& theta = probe.parameters();
    std::vector<double> grad(theta.size(), 0.0);
    auto one = [&](std::size_t i) {
        const double saved = theta[i];
        theta[i] = saved + step;
        const double up = loss_value(kind, probe, reference, inputs);
        theta[i] = saved - step;
        const double down = loss_value(kind, probe, reference, inputs);
        theta[i] = saved;
        grad[i] = (up - down) / (2.0 * step);
    };
    if (indices.empty())
        for (std::size_t i = 0; i < theta.size(); ++i) one(i);
    else
        for (auto i : indices) one(i);
    return grad;
}

/// ||a - b||_inf / max(||a||_inf, ||b||_inf); 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        na = std::max(na, std::abs(a[i]));
        nb = std::max(nb, std::abs(b[i]));
    }
    const double denom = std::max(na, nb);
    return denom == 0.0 ? 0.0 : diff / denom;
}

// --- training demonstration -------------------------------------------------

struct TracePoint {
    double loss = 0.0;
    double mean_margin = 0.0;
};

inline double mean_margin(const ToyModel& policy, const ToyModel& reference, std::span<const StepLossInput> pairs) {
    std::vector<double> m;
    m.reserve(pairs.size());
    for (const auto& p : pairs) m.push_back(preference_margin(policy, reference, p));
    return pairwise_sum(m) / static_cast<double>(pairs.size());
}

struct TrainResult {
    ToyModel policy;
    std::vector<TracePoint> trace;  // steps + 1 points, the first before any update
};

/// Plain gradient descent starting from policy = reference.
inline TrainResult train_demo(const ToyModel& reference, std::span<const StepLossInput> pairs, double learning_rate,
                              int steps, LossKind kind = LossKind::Cpo) {
    if (steps < 0) throw InvalidArgument("steps must be >= 0");
    if (learning_rate < 0.0) throw InvalidArgument("learning rate must be >= 0");
    if (pairs.empty()) throw EmptyDataset("no preference pairs");
    TrainResult r{reference, {}};
    auto record = [&] {
        r.trace.push_back({loss_value(kind, r.policy, reference, pairs), mean_margin(r.policy, reference, pairs)});
    };
    record();
    const double initial = r.trace.front().loss;
    for (int s = 0; s < steps; ++s) {
        const auto g = analytic_gradient(kind, r.policy, reference, pairs);
        auto& theta = r.policy.parameters();
        for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= learning_rate * g[i];
        record();
        if (!std::isfinite(r.trace.back().loss) || r.trace.back().loss > 10.0 * initial)
            throw DivergenceDetected("loss " + std::to_string(r.trace.back().loss) + " at step " +
                                     std::to_string(s + 1) + " exceeds 10x its initial value");
    }
    return r;
}

}  // namespace cpo
