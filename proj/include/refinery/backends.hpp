#pragma once
// Abstract backend roles: generator G, editor E, verifier V, critic C.
// Concrete adapters (HTTP, synthetic, record/replay) implement these.

#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "refinery/core.hpp"

namespace refinery {

// Text-to-image generator. A deterministic backend must return the same
// image content for the same (prompt, sub_prompt, seed).
struct GeneratorIface {
    virtual ~GeneratorIface() = default;
    virtual ImageRef generate(const std::string& prompt_text, const std::string& sub_prompt,
                              std::uint64_t seed) = 0;
};

// Image-to-image editor. Returns a new image; the base is never mutated.
struct EditorIface {
    virtual ~EditorIface() = default;
    virtual ImageRef edit(const ImageRef& base, const std::string& instruction,
                          std::uint64_t seed) = 0;
};

// Verifier V: scores prompt-image alignment. Binary mode answers every task
// question exactly once, in task order.
struct VerifierIface {
    virtual ~VerifierIface() = default;
    virtual VerifierReport verify(const ImageRef& image, const TaskPrompt& task) = 0;
};

// Everything the critic sees for one decision. step_prompts holds the prompt
// used at each prior step starting with the full task prompt, so its length
// is round-1. prev_score is the score verified one round earlier; critics
// that detect regressions need it.
struct CriticContext {
    ImageRef image;
    const TaskPrompt* task = nullptr;
    std::vector<std::string> step_prompts;
    VerifierReport report;
    std::optional<Score> prev_score;
    int round = 1;
    int max_rounds = 1;
    std::set<Action> allowed_actions = all_actions();
};

struct CriticIface {
    virtual ~CriticIface() = default;
    virtual CriticDecision critique(const CriticContext& ctx) = 0;
};

// All four roles bundled; the engine and harness pass these around together.
struct BackendSet {
    std::shared_ptr<GeneratorIface> generator;
    std::shared_ptr<EditorIface> editor;
    std::shared_ptr<VerifierIface> verifier;
    std::shared_ptr<CriticIface> critic;
};

// One remote endpoint. The auth token is looked up from the named env var at
// call time; config files never hold secrets.
struct EndpointConfig {
    std::string base_url;
    std::string auth_env;           // name of env var holding the bearer token
    std::string model;
    std::string chat_path = "/v1/chat/completions";
    std::string image_path = "/v1/images";
    double timeout_s = 60.0;
    int max_retries = 3;
    double backoff_initial_ms = 250.0;
    double backoff_multiplier = 2.0;
    int requests_per_minute = 0;    // 0 = uncapped

    void validate() const {
        if (timeout_s <= 0) throw ConfigError("endpoint timeout must be > 0");
        if (max_retries < 0) throw ConfigError("endpoint max_retries must be >= 0");
        if (backoff_multiplier <= 0) throw ConfigError("endpoint backoff multiplier must be > 0");
    }
};

// Chat-style call: (system text, user text, attached images) -> completion
// text. The verifier and critic adapters are both built on one of these.
using ChatFn = std::function<std::string(const std::string& system_text,
                                         const std::string& user_text,
                                         const std::vector<ImageRef>& images)>;

}  // namespace refinery
