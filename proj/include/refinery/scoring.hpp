#pragma once
// Verifier protocols: binary question-answer scoring and continuous 1-100
// scoring, plus benchmark aggregation (full solve rate, category means).

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "refinery/backends.hpp"
#include "refinery/core.hpp"
#include "refinery/prompts.hpp"

namespace refinery {

namespace scoring_detail {

// One verdict line: "<index>: <0|1>", leniently ("Q3: 1", "3) 0", "3 - 1").
inline std::optional<std::pair<int, int>> parse_verdict_line(const std::string& line) {
    std::size_t i = 0;
    while (i < line.size() && !std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i == line.size()) return std::nullopt;
    std::size_t end = i;
    while (end < line.size() && std::isdigit(static_cast<unsigned char>(line[end]))) ++end;
    int index = std::stoi(line.substr(i, end - i));
    std::size_t j = end;
    while (j < line.size() &&
           (std::isspace(static_cast<unsigned char>(line[j])) || line[j] == ':' ||
            line[j] == '.' || line[j] == ')' || line[j] == '-'))
        ++j;
    if (j >= line.size()) return std::nullopt;
    if (line[j] != '0' && line[j] != '1') return std::nullopt;
    // A multi-digit token here is not a verdict.
    if (j + 1 < line.size() && std::isdigit(static_cast<unsigned char>(line[j + 1])))
        return std::nullopt;
    return std::make_pair(index, line[j] - '0');
}

inline std::optional<long long> first_integer(const std::string& text) {
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(text[i]))) continue;
        std::size_t end = i;
        while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
        return std::stoll(text.substr(i, end - i));
    }
    return std::nullopt;
}

}  // namespace scoring_detail

inline std::string render_binary_verifier_prompt(const PromptLibrary& lib,
                                                 const TaskPrompt& task) {
    std::ostringstream questions;
    for (std::size_t i = 0; i < task.questions.size(); ++i)
        questions << (i ? "\n" : "") << (i + 1) << ". " << task.questions[i];
    std::string text = detail::replace_all(lib.verifier_binary, "{{questions}}", questions.str());
    return detail::finish_render(std::move(text));
}

// Binary QA protocol: one batched prompt listing every question; answers are
// parsed per line. An unparsed question triggers one retry; anything still
// missing scores 0 and flags the report degraded.
inline VerifierReport score_binary(const ImageRef& image, const TaskPrompt& task,
                                   const ChatFn& chat,
                                   const PromptLibrary& lib = PromptLibrary::defaults()) {
    if (task.questions.empty())
        throw ConfigError("score_binary requires at least one question (task '" + task.id + "')");
    const std::string prompt = render_binary_verifier_prompt(lib, task);
    const int n = static_cast<int>(task.questions.size());

    std::map<int, int> verdicts;
    for (int attempt = 0; attempt < 2 && static_cast<int>(verdicts.size()) < n; ++attempt) {
        const std::string response = chat("", prompt, {image});
        for (const std::string& line : detail::split_lines(response)) {
            auto parsed = scoring_detail::parse_verdict_line(line);
            if (!parsed) continue;
            auto [index, verdict] = *parsed;
            if (index >= 1 && index <= n) verdicts.emplace(index, verdict);
        }
    }

    VerifierReport report;
    report.mode = ScoreMode::Binary;
    long long yes = 0;
    for (int i = 1; i <= n; ++i) {
        auto it = verdicts.find(i);
        int verdict = 0;
        if (it == verdicts.end())
            report.degraded = true;
        else
            verdict = it->second;
        yes += verdict;
        report.answers.push_back({task.questions[i - 1], verdict});
    }
    report.score = Score::binary(yes, n);
    return report;
}

// Continuous protocol: single integer in [1,100], normalized to [0,1].
// Out-of-range values clamp (degraded); unparseable output retries once.
inline VerifierReport score_continuous(const ImageRef& image, const TaskPrompt& task,
                                       const ChatFn& chat,
                                       const PromptLibrary& lib = PromptLibrary::defaults()) {
    if (task.continuous_rubric.empty())
        throw ConfigError("score_continuous requires a rubric (task '" + task.id + "')");
    std::string text = detail::replace_all(lib.verifier_continuous, "{{prompt}}", task.text);
    text = detail::replace_all(text, "{{rubric}}", task.continuous_rubric);
    const std::string prompt = detail::finish_render(std::move(text));

    std::optional<long long> raw;
    for (int attempt = 0; attempt < 2 && !raw; ++attempt)
        raw = scoring_detail::first_integer(chat("", prompt, {image}));
    if (!raw)
        throw ProtocolError("continuous verifier returned no integer (task '" + task.id + "')");

    VerifierReport report;
    report.mode = ScoreMode::Continuous;
    long long value = *raw;
    if (value < 1 || value > 100) {
        value = std::clamp<long long>(value, 1, 100);
        report.degraded = true;
    }
    report.score = Score::continuous(value);
    return report;
}

// Chat-model verifier: binary when the task carries questions, continuous
// when it carries a rubric instead.
class ChatVerifier final : public VerifierIface {
public:
    explicit ChatVerifier(ChatFn chat, PromptLibrary lib = PromptLibrary::defaults())
        : chat_(std::move(chat)), lib_(std::move(lib)) {}

    VerifierReport verify(const ImageRef& image, const TaskPrompt& task) override {
        if (!task.questions.empty()) return score_binary(image, task, chat_, lib_);
        return score_continuous(image, task, chat_, lib_);
    }

private:
    ChatFn chat_;
    PromptLibrary lib_;
};

// Fraction of final reports that solved every question (score exactly 1).
inline Score full_solve_rate(const std::vector<VerifierReport>& reports) {
    if (reports.empty()) throw ConfigError("full_solve_rate over an empty report list");
    long long solved = 0;
    for (const auto& r : reports)
        if (r.score.perfect()) ++solved;
    return Score::fraction(solved, static_cast<long long>(reports.size()));
}

struct CategoryMean {
    std::string category;
    double mean = 0.0;
    int count = 0;
};

// Mean score per category label, rows sorted by label. Categories absent
// from the input simply produce no row (missing is not zero).
inline std::vector<CategoryMean> category_means(
    const std::vector<std::pair<std::string, double>>& scored) {
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& [category, score] : scored) {
        auto& slot = acc[category];
        slot.first += score;
        slot.second += 1;
    }
    std::vector<CategoryMean> rows;
    for (const auto& [category, slot] : acc)
        rows.push_back({category, slot.first / slot.second, slot.second});
    return rows;
}

}  // namespace refinery
