#pragma once
// Critic/verifier prompt templates and the critic output grammar.
//
// Templates are plain text with {{placeholder}} substitution. They can be
// overridden per deployment by dropping edited copies into a prompt
// directory; the embedded defaults below are pinned by golden-file tests.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "refinery/backends.hpp"
#include "refinery/core.hpp"

namespace refinery {

namespace detail {

inline std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string cur;
    for (char c : text) {
        if (c == '\n') {
            if (!cur.empty() && cur.back() == '\r') cur.pop_back();
            lines.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    lines.push_back(cur);
    return lines;
}

// Case-insensitive search for "<label>:" at a word boundary; returns the
// offset just past the colon, or npos.
inline std::size_t find_labeled(const std::string& line, const std::string& label) {
    std::string lower(line);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::size_t pos = 0;
    const std::string needle = label + ":";
    while ((pos = lower.find(needle, pos)) != std::string::npos) {
        if (pos == 0 || !std::isalpha(static_cast<unsigned char>(lower[pos - 1])))
            return pos + needle.size();
        pos += 1;
    }
    return std::string::npos;
}

// Uppercases, maps runs of non-alphanumerics to single underscores, and
// strips them at the ends: "[fresh start]" -> "FRESH_START".
inline std::string normalize_action_token(const std::string& raw) {
    std::string out;
    for (char ch : raw) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            out.push_back(static_cast<char>(std::toupper(c)));
        } else if (!out.empty() && out.back() != '_') {
            out.push_back('_');
        }
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out;
}

}  // namespace detail

// Truncated (not rounded) to three decimals, so 6/7 renders as 0.857.
inline std::string format_score_3dp(const Score& s) {
    long long scaled = (s.num * 1000) / s.den;
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%lld.%03lld", scaled / 1000, scaled % 1000);
    return buf;
}

// ---------------------------------------------------------------------------
// Default templates
// ---------------------------------------------------------------------------

inline const char* kCriticSystemDefault =
    R"(You are a helpful assistant that given a complex image generation prompt and previously generated image along with verifier scores, generates the best next step prompt for an image editing model.

The idea is to generate the image over multiple editing and refinement steps, so the next step prompt should either edit the previous image to improve it or add new elements to the image. Some suggested guidelines are:
- Check if previous step worked correctly
- Identify any important missing element from full prompt
- Check if there is space for new elements to be added in the current frame. If not, then prompt model to zoom out and make space first.
- In case of errors, prompt model to fix them or delete the incorrect element.

You have to choose from the following actions:
{{action_list}}

You will be provided following inputs:
- The full complex prompt
- Your previously proposed step prompts
- The most recently generated image (which is attached for your reference) along with verifier scores (sometimes verifier can be wrong for attribute counts questions)

You have to output two things:
1. The action to be taken
2. The next step prompt that will be given to the image editor or generator

The maximum number of editing steps is {{max_rounds}}. This is step {{round}} of image editing and you will have {{steps_left}} {{step_word}} left to complete the task. Decide the next step prompt accordingly.

Output your response in the following format:
Action: [action to be taken]
Prompt: [next step prompt]
)";

inline const char* kCriticUserDefault =
    R"(Full complex prompt:
{{full_prompt}}

Your previous step prompts were:
{{step_prompts}}

The most recently generated image had the following verifier scores:
{{verifier_scores}}

The maximum number of editing steps is {{max_rounds}}.
This is step {{round}} of image editing and you will have {{steps_left}} {{step_word}} left to complete the task.
Decide the next step prompt accordingly.
)";

inline const char* kVerifierBinaryDefault =
    R"(You will be shown a generated image and a list of yes/no questions about it. Judge every question strictly from the image content.

Questions:
{{questions}}

Answer with exactly one line per question, in order, formatted as:
<question number>: <1 for yes, 0 for no>

Do not output anything else.
)";

inline const char* kVerifierContinuousDefault =
    R"(You will be shown a generated image and the description it was meant to depict. Rate how faithfully the image matches the description on a scale from 1 to 100, where 100 is a perfect match.

Description:
{{prompt}}

Scoring guidance:
{{rubric}}

Respond with a single integer between 1 and 100.
)";

inline const char* kDecompProposerDefault =
    R"(You are decomposing a scene by removing objects one at a time. A removal is physically plausible only if nothing in the scene still rests on or hangs from the object being removed.

The current scene image is attached.
{{feedback_block}}
Propose the single next object to remove and the removal phrase to give an image editing model.

Output your response in the following format:
Object: [object to remove]
Phrase: [removal instruction for the editor]
)";

inline const char* kDecompCriticDefault =
    R"(You will be shown two images: the scene before an edit and the scene after it. The edit was meant to perform exactly this removal:
{{phrase}}

Check that (1) the specified object was removed correctly, and (2) no other violations occurred (hallucinations, artifacts, identity drift, or physically implausible changes).

Output your response in the following format:
Removed: [yes or no]
Violations: [comma-separated subset of not_removed, wrong_object_removed, artifact, identity_drift, implausible_change, or none]
Feedback: [one sentence telling the next attempt what to fix]
Score: [fraction of checks passed, 0 to 1]
)";

// ---------------------------------------------------------------------------
// Template library
// ---------------------------------------------------------------------------

class PromptLibrary {
public:
    std::string critic_system = kCriticSystemDefault;
    std::string critic_user = kCriticUserDefault;
    std::string verifier_binary = kVerifierBinaryDefault;
    std::string verifier_continuous = kVerifierContinuousDefault;
    std::string decomp_proposer = kDecompProposerDefault;
    std::string decomp_critic = kDecompCriticDefault;

    static PromptLibrary defaults() { return PromptLibrary{}; }

    // Missing files keep their embedded default.
    static PromptLibrary load_dir(const std::filesystem::path& dir) {
        PromptLibrary lib;
        auto read = [&](const char* name, std::string& slot) {
            std::ifstream in(dir / name);
            if (!in) return;
            std::ostringstream ss;
            ss << in.rdbuf();
            slot = ss.str();
        };
        read("critic_system.txt", lib.critic_system);
        read("critic_user.txt", lib.critic_user);
        read("verifier_binary.txt", lib.verifier_binary);
        read("verifier_continuous.txt", lib.verifier_continuous);
        read("decomp_proposer.txt", lib.decomp_proposer);
        read("decomp_critic.txt", lib.decomp_critic);
        return lib;
    }

    void write_dir(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        auto write = [&](const char* name, const std::string& text) {
            std::ofstream out(dir / name);
            out << text;
        };
        write("critic_system.txt", critic_system);
        write("critic_user.txt", critic_user);
        write("verifier_binary.txt", verifier_binary);
        write("verifier_continuous.txt", verifier_continuous);
        write("decomp_proposer.txt", decomp_proposer);
        write("decomp_critic.txt", decomp_critic);
    }
};

namespace detail {

inline std::string finish_render(std::string text) {
    if (text.find("{{") != std::string::npos)
        throw Error("rendered template still contains a placeholder: " + text);
    return text;
}

inline void substitute_step_counters(std::string& text, int max_rounds, int round) {
    int steps_left = max_rounds - round;
    text = replace_all(text, "{{max_rounds}}", std::to_string(max_rounds));
    text = replace_all(text, "{{round}}", std::to_string(round));
    text = replace_all(text, "{{steps_left}}", std::to_string(steps_left));
    text = replace_all(text, "{{step_word}}", steps_left == 1 ? "step" : "steps");
}

}  // namespace detail

// Everything the user-prompt template needs for one critic turn.
struct CriticPromptContext {
    std::string full_prompt;
    std::vector<std::string> step_prompts;  // prompt used at each prior step; [0] is the full prompt
    VerifierReport report;
    int round = 1;
    int max_rounds = 1;
};

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline std::string render_action_list(const std::set<Action>& allowed) {
    struct Item {
        Action action;
        const char* text;
    };
    // Presentation order shown to the model; RESTART surfaces as FRESH_START.
    static const Item items[] = {
        {Action::Continue,
         "CONTINUE: Continue editing the most recently generated image to improve it with your "
         "proposed prompt."},
        {Action::Backtrack,
         "BACKTRACK: Backtrack to image before the most recently generated image, and edit that "
         "image with your proposed prompt."},
        {Action::Restart,
         "FRESH_START: Start entirely from scratch with your proposed prompt due to major "
         "unfixable errors over steps."},
        {Action::Stop, "STOP: Stop the editing process due to completion of the task"},
    };
    std::ostringstream out;
    int n = 0;
    for (const auto& item : items) {
        if (!allowed.count(item.action)) continue;
        ++n;
        out << (n > 1 ? "\n" : "") << n << ". " << item.text;
    }
    return out.str();
}

inline std::string render_system_prompt(const PromptLibrary& lib, int max_rounds, int round,
                                        const std::set<Action>& allowed = all_actions()) {
    if (round < 1 || round > max_rounds)
        throw ConfigError("critic round " + std::to_string(round) + " outside [1, " +
                          std::to_string(max_rounds) + "]");
    std::string text = lib.critic_system;
    text = detail::replace_all(text, "{{action_list}}", render_action_list(allowed));
    detail::substitute_step_counters(text, max_rounds, round);
    return detail::finish_render(std::move(text));
}

inline std::string render_system_prompt(int max_rounds, int round,
                                        const std::set<Action>& allowed = all_actions()) {
    return render_system_prompt(PromptLibrary::defaults(), max_rounds, round, allowed);
}

inline std::string render_verifier_scores_block(const VerifierReport& report) {
    std::ostringstream out;
    if (report.mode == ScoreMode::Binary) {
        for (const auto& a : report.answers) out << a.question << ": " << a.verdict << "\n";
        out << "Cumulative mean binary score: " << format_score_3dp(report.score);
    } else {
        out << "Verifier score (1 to 100): " << (report.score.num * 100) / report.score.den;
    }
    return out.str();
}

inline std::string render_user_prompt(const PromptLibrary& lib, const CriticPromptContext& ctx) {
    if (ctx.round < 1 || ctx.round > ctx.max_rounds)
        throw ConfigError("critic round " + std::to_string(ctx.round) + " outside [1, " +
                          std::to_string(ctx.max_rounds) + "]");
    std::ostringstream steps;
    if (ctx.step_prompts.empty()) {
        steps << "Step 1: " << ctx.full_prompt;
    } else {
        for (std::size_t i = 0; i < ctx.step_prompts.size(); ++i)
            steps << (i ? "\n" : "") << "Step " << (i + 1) << ": " << ctx.step_prompts[i];
    }
    std::string text = lib.critic_user;
    text = detail::replace_all(text, "{{full_prompt}}", ctx.full_prompt);
    text = detail::replace_all(text, "{{step_prompts}}", steps.str());
    text = detail::replace_all(text, "{{verifier_scores}}",
                               render_verifier_scores_block(ctx.report));
    detail::substitute_step_counters(text, ctx.max_rounds, ctx.round);
    return detail::finish_render(std::move(text));
}

inline std::string render_user_prompt(const CriticPromptContext& ctx) {
    return render_user_prompt(PromptLibrary::defaults(), ctx);
}

// ---------------------------------------------------------------------------
// Critic output grammar: first "Action:" line, then the first following
// "Prompt:" line; the sub-prompt runs to the next blank line.
// ---------------------------------------------------------------------------

inline CriticDecision parse_critic_output(const std::string& text) {
    auto lines = detail::split_lines(text);

    std::size_t action_line = lines.size();
    std::string token;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::size_t off = detail::find_labeled(lines[i], "action");
        if (off == std::string::npos) continue;
        token = detail::normalize_action_token(lines[i].substr(off));
        action_line = i;
        break;
    }
    if (action_line == lines.size()) throw CriticParseError("no Action line in critic output");

    auto action = action_from_token(token);
    if (!action) {
        // Tolerate trailing chatter after the token ("CONTINUE, because...").
        static const char* known[] = {"FRESH_START", "BACKTRACK", "CONTINUE", "RESTART", "STOP"};
        for (const char* k : known) {
            std::string prefix = std::string(k) + "_";
            if (token.rfind(prefix, 0) == 0) {
                action = action_from_token(k);
                break;
            }
        }
    }
    if (!action) throw CriticParseError("unknown action token: \"" + token + "\"");

    std::string sub_prompt;
    bool found_prompt = false;
    for (std::size_t i = action_line + 1; i < lines.size(); ++i) {
        std::size_t off = detail::find_labeled(lines[i], "prompt");
        if (off == std::string::npos) continue;
        found_prompt = true;
        std::ostringstream body;
        body << detail::trim(lines[i].substr(off));
        for (std::size_t j = i + 1; j < lines.size(); ++j) {
            if (detail::trim(lines[j]).empty()) break;
            body << "\n" << lines[j];
        }
        sub_prompt = detail::trim(body.str());
        break;
    }

    if (*action != Action::Stop && (!found_prompt || sub_prompt.empty()))
        throw CriticParseError("critic output has no sub-prompt for action " +
                               std::string(to_string(*action)));

    return CriticDecision{*action, sub_prompt, text};
}

// Chat-model critic: renders the system/user templates, sends the latest
// image, and parses the Action/Prompt grammar. Unparseable output is retried
// up to 2 more times, then degrades to CONTINUE with the raw text as the
// sub-prompt (flagged so the journal shows it).
class ChatCritic final : public CriticIface {
public:
    explicit ChatCritic(ChatFn chat, PromptLibrary lib = PromptLibrary::defaults())
        : chat_(std::move(chat)), lib_(std::move(lib)) {}

    CriticDecision critique(const CriticContext& ctx) override {
        const std::string system =
            render_system_prompt(lib_, ctx.max_rounds, ctx.round, ctx.allowed_actions);
        CriticPromptContext pc;
        pc.full_prompt = ctx.task ? ctx.task->text : "";
        pc.step_prompts = ctx.step_prompts;
        pc.report = ctx.report;
        pc.round = ctx.round;
        pc.max_rounds = ctx.max_rounds;
        const std::string user = render_user_prompt(lib_, pc);

        std::string last;
        for (int attempt = 0; attempt < 3; ++attempt) {
            last = chat_(system, user, {ctx.image});
            try {
                return parse_critic_output(last);
            } catch (const CriticParseError&) {
            }
        }
        CriticDecision fallback;
        fallback.action = Action::Continue;
        fallback.sub_prompt = detail::trim(last).empty() ? pc.full_prompt : last;
        fallback.raw_response = last;
        fallback.parse_fallback = true;
        return fallback;
    }

private:
    ChatFn chat_;
    PromptLibrary lib_;
};

}  // namespace refinery
