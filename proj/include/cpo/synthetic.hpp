#pragma once

// A small arithmetic task with a rule-based stand-in for the model: it
// proposes running sums (sometimes wrong) as thoughts and judges a state
// "likely" when every sum in it checks out. Used to produce the demo script
// and as a deterministic backend in tests.

#include <regex>
#include <string>
#include <vector>

#include "cpo/backend.hpp"
#include "cpo/search.hpp"

namespace cpo::synthetic {

inline std::string question_text(const std::vector<int>& terms) {
    std::string out = "Add ";
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (i > 0) out += i + 1 == terms.size() ? " and " : ", ";
        out += std::to_string(terms[i]);
    }
    return out + ".";
}

inline std::vector<QuestionRecord> make_questions(std::size_t count, std::uint64_t seed) {
    SeededStream rng(seed);
    std::vector<QuestionRecord> out;
    for (std::size_t q = 0; q < count; ++q) {
        const auto n = 2 + static_cast<int>(rng.below(3));
        std::vector<int> terms;
        for (int i = 0; i < n; ++i) terms.push_back(1 + static_cast<int>(rng.below(20)));
        out.push_back({"add-" + std::to_string(q), question_text(terms)});
    }
    return out;
}

inline PromptPack make_pack() {
    PromptPack p;
    p.task_id = "synthetic-addition";
    p.cot_demonstrations =
        "Question: Add 3, 5 and 1.\n"
        "Answer: Step 1, 3 + 5 = 8. Step 2, 8 + 1 = 9. Step 3, so the final answer is: 9.";
    p.eval_demonstrations = {
        "Question: Add 2 and 7.\nThoughts: Step 1, 2 + 7 = 9.\nEvaluation: 2 + 7 is 9, the step is correct, so "
        "the state is likely",
        "Question: Add 4, 4 and 3.\nThoughts: Step 1, 4 + 4 = 9.\nEvaluation: 4 + 4 is 8, not 9, so the state is "
        "impossible",
        "Question: Add 6 and 1.\nThoughts: Step 1, 6 + 1 = 7. Step 2, so the final answer is: 7.\nEvaluation: the "
        "sum and the answer agree, so the state is likely",
    };
    return p;
}

namespace detail {

inline std::vector<int> parse_terms(std::string_view question) {
    std::vector<int> out;
    static const std::regex number(R"(-?\d+)");
    const std::string q(question);
    for (auto it = std::sregex_iterator(q.begin(), q.end(), number); it != std::sregex_iterator(); ++it)
        out.push_back(std::stoi(it->str()));
    return out;
}

struct Equation {
    long long a, b, c;
};

inline std::vector<Equation> parse_equations(std::string_view text) {
    std::vector<Equation> out;
    static const std::regex eq(R"((-?\d+) \+ (-?\d+) = (-?\d+))");
    const std::string s(text);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), eq); it != std::sregex_iterator(); ++it)
        out.push_back({std::stoll((*it)[1]), std::stoll((*it)[2]), std::stoll((*it)[3])});
    return out;
}

inline std::optional<long long> stated_answer(std::string_view text) {
    const auto pos = text.rfind(kDefaultTerminalPhrase);
    if (pos == std::string_view::npos) return std::nullopt;
    const auto nums = parse_terms(text.substr(pos));
    if (nums.empty()) return std::nullopt;
    return nums.front();
}

/// Question and thoughts of the last "Question: ..." block in a prompt.
inline std::pair<std::string, std::string> last_block(std::string_view prompt, std::string_view thoughts_label) {
    const auto q = prompt.rfind("Question: ");
    if (q == std::string_view::npos) return {};
    const auto line_end = prompt.find('\n', q);
    const auto question = prompt.substr(q + 10, line_end == std::string_view::npos ? 0 : line_end - q - 10);
    const auto t = prompt.find(thoughts_label, q);
    std::string_view thoughts;
    if (t != std::string_view::npos) {
        thoughts = prompt.substr(t + thoughts_label.size());
        const auto stop = thoughts.find("\nEvaluation:");
        if (stop != std::string_view::npos) thoughts = thoughts.substr(0, stop);
    }
    return {std::string(question), std::string(thoughts)};
}

}  // namespace detail

/// Completion for a generation or evaluation prompt of this task.
/// `accuracy` is the chance a proposed sum is correct.
inline std::optional<std::string> respond(std::string_view prompt, std::uint64_t seed, double accuracy = 0.6) {
    SeededStream rng(mix_seed(prompt_fingerprint(prompt), seed));
    if (prompt.ends_with("\nEvaluation:")) {
        const auto [question, thoughts] = detail::last_block(prompt, "\nThoughts:");
        const auto terms = detail::parse_terms(question);
        const auto eqs = detail::parse_equations(thoughts);
        bool ok = !eqs.empty() || thoughts.find(kDefaultTerminalPhrase) != std::string::npos;
        long long running = terms.empty() ? 0 : terms.front();
        for (std::size_t i = 0; i < eqs.size() && ok; ++i) {
            const auto next = i + 1 < terms.size() ? terms[i + 1] : 0;
            ok = eqs[i].a == running && eqs[i].b == next && eqs[i].a + eqs[i].b == eqs[i].c;
            running = eqs[i].c;
        }
        if (ok) {
            if (auto ans = detail::stated_answer(thoughts)) {
                long long total = 0;
                for (auto t : terms) total += t;
                ok = *ans == total && eqs.size() + 1 == terms.size();
            }
        }
        // Occasional misjudgment, so repeated evaluation matters.
        if (rng.uniform01() < 0.1) ok = !ok;
        return ok ? " the sums check out, so the state is likely"
                  : " a sum does not match the question, so the state is impossible";
    }

    const auto [question, thoughts] = detail::last_block(prompt, "\nAnswer:");
    const auto terms = detail::parse_terms(question);
    if (terms.size() < 2) return std::nullopt;
    const auto eqs = detail::parse_equations(thoughts);
    const auto step = eqs.size() + 1;
    std::string body;
    if (eqs.size() + 1 >= terms.size()) {
        const long long last = eqs.empty() ? terms.front() : eqs.back().c;
        const long long answer = rng.uniform01() < accuracy ? last : last + 1 + static_cast<long long>(rng.below(3));
        body = " so the final answer is: " + std::to_string(answer) + ".";
    } else {
        const long long a = eqs.empty() ? terms.front() : eqs.back().c;
        const long long b = terms[eqs.size() + 1];
        long long c = a + b;
        if (rng.uniform01() >= accuracy) c += (rng.below(2) ? 1 : -1) * (1 + static_cast<long long>(rng.below(3)));
        body = " " + std::to_string(a) + " + " + std::to_string(b) + " = " + std::to_string(c) + ".";
    }
    // The model keeps going; the stop sequence cuts it at the next marker.
    return body + " " + step_marker(static_cast<int>(step) + 1) + " ...";
}

inline FunctionBackend make_backend(double accuracy = 0.6) {
    return FunctionBackend([accuracy](std::string_view p, std::uint64_t s) { return respond(p, s, accuracy); },
                           "synthetic-addition");
}

}  // namespace cpo::synthetic
