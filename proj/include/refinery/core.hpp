#pragma once
// Core domain types shared by every module: budgets, actions, candidates,
// stream state, verifier reports, and the exact rational score type.

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace refinery {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error { using Error::Error; };          // bad budget/config, exit code 2
struct StorageError : Error { using Error::Error; };         // journal write failure
struct BackendUnavailable : Error { using Error::Error; };   // retries exhausted
struct BackendRejected : Error { using Error::Error; };      // non-retryable 4xx / local validation
struct ProtocolError : Error { using Error::Error; };        // malformed backend response
struct ReplayMiss : Error { using Error::Error; };           // request absent from transcript
struct CriticParseError : Error { using Error::Error; };     // critic output grammar violation
struct SelectionImpossible : Error { using Error::Error; };  // no verified candidate to select
struct OracleUnsupported : Error { using Error::Error; };    // k too large or noisy verifier
struct RunFailed : Error { using Error::Error; };            // every stream failed

// ---------------------------------------------------------------------------
// Score: exact rational in [0,1]
//
// Binary verifier scores are verdict-sum / question-count and selection
// tie-breaks must be exact, so scores are kept as integer rationals and only
// converted to double for display. Denominators stay small (question count
// or 100), so cross-multiplied comparison in 64-bit never overflows.
// ---------------------------------------------------------------------------

struct Score {
    long long num = 0;
    long long den = 1;

    static Score fraction(long long num, long long den) {
        if (den <= 0) throw ConfigError("score denominator must be positive");
        return Score{num, den};
    }
    // Mean of binary verdicts: yes / total.
    static Score binary(long long yes, long long total) { return fraction(yes, total); }
    // Raw 1..100 rating normalized to [0,1].
    static Score continuous(long long raw) { return fraction(raw, 100); }

    double value() const { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }
    bool perfect() const { return num == den; }
    bool zero() const { return num == 0; }

    friend bool operator==(const Score& a, const Score& b) { return a.num * b.den == b.num * a.den; }
    friend bool operator!=(const Score& a, const Score& b) { return !(a == b); }
    friend bool operator<(const Score& a, const Score& b) { return a.num * b.den < b.num * a.den; }
    friend bool operator>(const Score& a, const Score& b) { return b < a; }
    friend bool operator<=(const Score& a, const Score& b) { return !(b < a); }
    friend bool operator>=(const Score& a, const Score& b) { return !(a < b); }
};

// ---------------------------------------------------------------------------
// Task prompt
// ---------------------------------------------------------------------------

struct TaskPrompt {
    std::string id;
    std::string text;                         // the full complex prompt
    std::vector<std::string> questions;       // one yes/no question per concept/attribute/relation
    std::string category;                     // e.g. "3DSpat", "k=5"
    std::string continuous_rubric;            // nonempty switches the final scorer to 1-100 mode

    void validate() const {
        if (text.empty()) throw ConfigError("task '" + id + "': prompt text is empty");
        std::set<std::string> seen;
        for (const auto& q : questions) {
            if (q.empty()) throw ConfigError("task '" + id + "': empty question");
            if (!seen.insert(q).second)
                throw ConfigError("task '" + id + "': duplicate question \"" + q + "\"");
        }
    }
};

// ---------------------------------------------------------------------------
// Budget: B total units factored as T rounds x M streams
// ---------------------------------------------------------------------------

struct Budget {
    long long total_units = 1;  // B
    int rounds = 1;             // T (iterative depth)
    int streams = 1;            // M (parallel breadth)
};

// One unit is one generator or editor call; nothing else consumes budget.
inline Budget validate_budget(long long total, int rounds, int streams) {
    if (total <= 0 || rounds <= 0 || streams <= 0)
        throw ConfigError("budget must be positive: total=" + std::to_string(total) +
                          " rounds=" + std::to_string(rounds) +
                          " streams=" + std::to_string(streams));
    if (total != static_cast<long long>(rounds) * streams)
        throw ConfigError("budget mismatch: total=" + std::to_string(total) +
                          " != rounds=" + std::to_string(rounds) +
                          " x streams=" + std::to_string(streams));
    return Budget{total, rounds, streams};
}

// ---------------------------------------------------------------------------
// Critic action space
// ---------------------------------------------------------------------------

enum class Action { Stop, Backtrack, Restart, Continue };

inline const char* to_string(Action a) {
    switch (a) {
        case Action::Stop: return "STOP";
        case Action::Backtrack: return "BACKTRACK";
        case Action::Restart: return "RESTART";
        case Action::Continue: return "CONTINUE";
    }
    return "CONTINUE";
}

// Accepts the canonical names plus FRESH_START (alias of RESTART). The token
// is expected pre-normalized: uppercase, no surrounding brackets.
inline std::optional<Action> action_from_token(const std::string& token) {
    if (token == "STOP") return Action::Stop;
    if (token == "BACKTRACK") return Action::Backtrack;
    if (token == "RESTART" || token == "FRESH_START") return Action::Restart;
    if (token == "CONTINUE") return Action::Continue;
    return std::nullopt;
}

inline const std::set<Action>& all_actions() {
    static const std::set<Action> acts{Action::Stop, Action::Backtrack, Action::Restart,
                                       Action::Continue};
    return acts;
}

// ---------------------------------------------------------------------------
// Images and candidates
// ---------------------------------------------------------------------------

// Opaque image handle: either a file path or inline bytes. The engine never
// inspects pixels; backends interpret content as they see fit.
struct ImageRef {
    std::string path;
    std::string media_type;
    std::string bytes;

    bool is_inline() const { return !bytes.empty(); }
    bool empty() const { return path.empty() && bytes.empty(); }
};

struct CriticDecision {
    Action action = Action::Continue;
    std::string sub_prompt;      // p_t; empty only for Stop
    std::string raw_response;    // verbatim model output, kept for the journal
    bool parse_fallback = false; // decision came from the unparseable-output fallback
};

enum class Provenance { Generate, Edit, EditAfterBacktrack, Restart };

inline const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::Generate: return "generate";
        case Provenance::Edit: return "edit";
        case Provenance::EditAfterBacktrack: return "edit_after_backtrack";
        case Provenance::Restart: return "restart";
    }
    return "generate";
}

enum class ScoreMode { Binary, Continuous };

struct VerifierAnswer {
    std::string question;
    int verdict = 0;  // 0 or 1
};

struct VerifierReport {
    ScoreMode mode = ScoreMode::Binary;
    std::vector<VerifierAnswer> answers;  // Binary mode: order matches TaskPrompt.questions
    Score score;                          // Binary: exact mean of verdicts; Continuous: raw/100
    bool degraded = false;                // some verdict came from a parse fallback
};

struct Candidate {
    ImageRef image;
    Provenance produced_by = Provenance::Generate;
    std::optional<std::size_t> source_index;  // within the source stream; absent for fresh generations
    std::optional<int> source_stream;         // set only when edited from another stream's candidate
    std::optional<VerifierReport> report;
};

// One refinement trajectory. Confined to a single worker while the run is
// active; every candidate in history consumed exactly one budget unit.
struct StreamState {
    int stream_id = 0;
    std::vector<Candidate> history;
    bool stopped = false;
    bool failed = false;
    long long units_consumed = 0;
};

}  // namespace refinery
