#pragma once
// Scene decomposition loop: a proposer picks the next object and removal
// phrase, an editor applies it, and a two-image critic verifies the step;
// violations feed back into the proposer and the step is retried until it
// verifies or the per-step budget runs out (highest-scoring candidate then
// wins). A budget-matched parallel baseline edits per_step_budget candidates
// from one phrase and keeps the critic's argmax, with no feedback loop.
//
// The synthetic variant models scenes as support DAGs: an object is
// removable only while nothing it supports remains. Editor flaws
// (shadow residual, wrong object, background drift) fire per removal step
// with a correlated component, so unguided retries tend to repeat the same
// mistake while feedback that names a flaw class suppresses it.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "refinery/backends.hpp"
#include "refinery/core.hpp"
#include "refinery/prompts.hpp"
#include "refinery/simenv.hpp"

namespace refinery {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct DecompositionTask {
    ImageRef initial_scene;
    int max_steps = 16;
    int per_step_budget = 4;  // editor-call units per removal step

    void validate() const {
        if (per_step_budget < 1) throw ConfigError("per_step_budget must be >= 1");
        if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
    }
};

struct RemovalVerdict {
    bool removed_ok = false;
    std::vector<std::string> violations;
    std::string feedback;
    Score score{0, 1};
};

struct RemovalProposal {
    std::string object;
    std::string phrase;
    bool done = false;  // scene is empty, nothing left to remove
    std::string raw;
};

struct RemovalAttempt {
    RemovalProposal proposal;
    ImageRef candidate;
    RemovalVerdict verdict;
};

struct ProposerIface {
    virtual ~ProposerIface() = default;
    virtual RemovalProposal propose(const ImageRef& scene,
                                    const std::vector<RemovalAttempt>& history,
                                    const std::optional<std::string>& prior_feedback,
                                    std::uint64_t seed) = 0;
};

struct RemovalCriticIface {
    virtual ~RemovalCriticIface() = default;
    virtual RemovalVerdict verify_removal(const ImageRef& prev, const ImageRef& next,
                                          const std::string& phrase) = 0;
};

struct DecompositionBackends {
    std::shared_ptr<ProposerIface> proposer;
    std::shared_ptr<EditorIface> editor;
    std::shared_ptr<RemovalCriticIface> critic;
};

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

struct FlawParams {
    double shadow_residual = 0.2;
    double wrong_object = 0.05;
    double background_drift = 0.05;
    // Fraction of flaw randomness shared across attempts within one step:
    // at 1.0 every unguided attempt repeats the same mistake, at 0.0 attempts
    // are independent re-rolls.
    double correlation = 0.7;
};

struct SimScene {
    std::vector<std::string> objects;  // remaining, in insertion order
    std::vector<std::pair<std::string, std::string>> supports;  // supporter -> supported
    std::vector<std::string> flaws;    // persistent flaw tags visible in the image
    std::uint64_t scene_seed = 0;
    int step = 0;  // removal-step ordinal, drives flaw draws
    FlawParams flaw_params;

    bool contains(const std::string& name) const {
        return std::find(objects.begin(), objects.end(), name) != objects.end();
    }

    // Physically removable: the object supports nothing still present.
    bool removable(const std::string& name) const {
        for (const auto& [supporter, supported] : supports)
            if (supporter == name && contains(supported)) return false;
        return true;
    }

    std::vector<std::string> removable_objects() const {
        std::vector<std::string> out;
        for (const auto& name : objects)
            if (removable(name)) out.push_back(name);
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json edges = nlohmann::json::array();
        for (const auto& [a, b] : supports) edges.push_back({a, b});
        return nlohmann::json{{"objects", objects},
                              {"edges", edges},
                              {"flaws", flaws},
                              {"scene_seed", scene_seed},
                              {"step", step},
                              {"flaw_params",
                               {{"shadow_residual", flaw_params.shadow_residual},
                                {"wrong_object", flaw_params.wrong_object},
                                {"background_drift", flaw_params.background_drift},
                                {"correlation", flaw_params.correlation}}}};
    }

    static SimScene from_json(const nlohmann::json& j) {
        SimScene s;
        s.objects = j.value("objects", std::vector<std::string>{});
        for (const auto& e : j.value("edges", nlohmann::json::array()))
            s.supports.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
        s.flaws = j.value("flaws", std::vector<std::string>{});
        s.scene_seed = j.value("scene_seed", std::uint64_t{0});
        s.step = j.value("step", 0);
        if (j.contains("flaw_params")) {
            const auto& f = j["flaw_params"];
            s.flaw_params.shadow_residual = f.value("shadow_residual", 0.2);
            s.flaw_params.wrong_object = f.value("wrong_object", 0.05);
            s.flaw_params.background_drift = f.value("background_drift", 0.05);
            s.flaw_params.correlation = f.value("correlation", 0.7);
        }
        return s;
    }

    ImageRef to_ref() const {
        ImageRef ref;
        ref.media_type = "application/x-simscene";
        ref.bytes = to_json().dump();
        return ref;
    }

    static SimScene from_ref(const ImageRef& ref) {
        if (ref.media_type != "application/x-simscene")
            throw ProtocolError("not a sim scene image");
        return from_json(nlohmann::json::parse(ref.bytes));
    }
};

// Seeded random support DAG: edges only run from earlier to later objects.
inline SimScene random_scene(std::uint64_t seed, int min_objects = 4, int max_objects = 8,
                             double edge_prob = 0.35, FlawParams flaws = {}) {
    static const char* nouns[] = {"mug",  "book", "ladder", "plate", "lamp",
                                  "box",  "vase", "cup",    "bowl",  "clock"};
    auto u01 = [](std::uint64_t h) { return (h >> 11) * (1.0 / 9007199254740992.0); };
    SimScene scene;
    scene.scene_seed = seed;
    scene.flaw_params = flaws;
    const int span = std::max(1, max_objects - min_objects + 1);
    const int n = min_objects + static_cast<int>(mix64(seed, 0x6f626a) % span);
    for (int i = 0; i < n; ++i) {
        std::string name = nouns[i % std::size(nouns)];
        if (i >= static_cast<int>(std::size(nouns))) name += std::to_string(i);
        scene.objects.push_back(name);
    }
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (u01(mix64(seed, 0x656467, i, j)) < edge_prob)
                scene.supports.emplace_back(scene.objects[i], scene.objects[j]);
    return scene;
}

// ---------------------------------------------------------------------------
// Phrase conventions shared by the synthetic proposer, editor and critic
// ---------------------------------------------------------------------------

namespace decomp_detail {

constexpr const char* kShadowMarker = "and the shadow it casts";
constexpr const char* kPrecisionMarker = "not any other object";
constexpr const char* kBackgroundMarker = "keeping the background unchanged";

inline double u01(std::uint64_t h) { return (h >> 11) * (1.0 / 9007199254740992.0); }

// "remove the <object> ..." -> the object, validated against the candidates.
inline std::string parse_removal_target(const std::string& phrase,
                                        const std::vector<std::string>& candidates) {
    std::size_t pos = phrase.find("remove the ");
    if (pos != std::string::npos) {
        std::size_t begin = pos + 11;
        std::size_t end = begin;
        while (end < phrase.size() &&
               (std::isalnum(static_cast<unsigned char>(phrase[end])) || phrase[end] == '_'))
            ++end;
        const std::string token = phrase.substr(begin, end - begin);
        for (const auto& c : candidates)
            if (c == token) return c;
    }
    for (const auto& c : candidates)  // fall back to any mentioned object
        if (phrase.find(c) != std::string::npos) return c;
    return "";
}

struct AddressedFlaws {
    bool shadow = false;
    bool wrong_object = false;
    bool drift = false;
};

inline AddressedFlaws addressed_in_phrase(const std::string& phrase) {
    AddressedFlaws a;
    a.shadow = phrase.find(kShadowMarker) != std::string::npos;
    a.wrong_object = phrase.find(kPrecisionMarker) != std::string::npos;
    a.drift = phrase.find(kBackgroundMarker) != std::string::npos;
    return a;
}

inline AddressedFlaws addressed_in_feedback(const std::string& feedback) {
    AddressedFlaws a;
    a.shadow = feedback.find("shadow") != std::string::npos;
    a.wrong_object = feedback.find("wrong object") != std::string::npos ||
                     feedback.find("other object") != std::string::npos;
    a.drift = feedback.find("background") != std::string::npos;
    return a;
}

// Correlated per-step flaw draw: with probability `correlation` the attempt
// reuses the step-level draw, otherwise it rolls independently.
inline bool flaw_fires(const SimScene& scene, int class_id, double p,
                       std::uint64_t attempt_seed) {
    if (p <= 0.0) return false;
    const bool shared = u01(mix64(scene.scene_seed, scene.step, class_id, 0xA11)) < p;
    const bool use_shared = u01(mix64(scene.scene_seed, scene.step, class_id, attempt_seed,
                                      0xB22)) < scene.flaw_params.correlation;
    const bool indep =
        u01(mix64(scene.scene_seed, scene.step, class_id, attempt_seed, 0xC33)) < p;
    return use_shared ? shared : indep;
}

}  // namespace decomp_detail

// ---------------------------------------------------------------------------
// Synthetic backends
// ---------------------------------------------------------------------------

class SimSceneEditor final : public EditorIface {
public:
    ImageRef edit(const ImageRef& base, const std::string& phrase,
                  std::uint64_t seed) override {
        using namespace decomp_detail;
        SimScene scene = SimScene::from_ref(base);
        const std::string target = parse_removal_target(phrase, scene.objects);
        if (target.empty()) return scene.to_ref();  // nothing identified: no-op edit

        const AddressedFlaws addressed = addressed_in_phrase(phrase);
        SimScene next = scene;

        std::string removed = target;
        if (!addressed.wrong_object && scene.objects.size() >= 2 &&
            flaw_fires(scene, 2, scene.flaw_params.wrong_object, seed)) {
            // Misidentified target: a deterministic other object goes instead.
            std::vector<std::string> others;
            for (const auto& o : scene.objects)
                if (o != target) others.push_back(o);
            removed = others[mix64(scene.scene_seed, scene.step, seed, 0xD44) % others.size()];
        }
        next.objects.erase(std::find(next.objects.begin(), next.objects.end(), removed));

        if (!addressed.shadow && flaw_fires(scene, 1, scene.flaw_params.shadow_residual, seed))
            next.flaws.push_back("shadow_residual:" + removed);
        if (!addressed.drift && flaw_fires(scene, 3, scene.flaw_params.background_drift, seed))
            next.flaws.push_back("background_drift:step" + std::to_string(scene.step));
        return next.to_ref();
    }
};

class SimSceneProposer final : public ProposerIface {
public:
    RemovalProposal propose(const ImageRef& scene_ref,
                            const std::vector<RemovalAttempt>& history,
                            const std::optional<std::string>& prior_feedback,
                            std::uint64_t) override {
        using namespace decomp_detail;
        SimScene scene = SimScene::from_ref(scene_ref);
        RemovalProposal proposal;
        if (scene.objects.empty()) {
            proposal.done = true;
            return proposal;
        }
        auto removable = scene.removable_objects();
        proposal.object = removable.empty() ? scene.objects.front() : removable.front();

        AddressedFlaws addressed;
        auto fold = [&](const std::string& feedback) {
            AddressedFlaws a = addressed_in_feedback(feedback);
            addressed.shadow |= a.shadow;
            addressed.wrong_object |= a.wrong_object;
            addressed.drift |= a.drift;
        };
        for (const auto& attempt : history) fold(attempt.verdict.feedback);
        if (prior_feedback) fold(*prior_feedback);

        proposal.phrase = "remove the " + proposal.object;
        if (addressed.shadow) proposal.phrase += " " + std::string(kShadowMarker);
        if (addressed.wrong_object)
            proposal.phrase += ", exactly the " + proposal.object + " and " + kPrecisionMarker;
        if (addressed.drift) proposal.phrase += ", " + std::string(kBackgroundMarker);
        return proposal;
    }
};

// Noiseless two-image check of the synthetic scene states; five checks make
// up the verdict score: target removed, nothing else removed, no new
// artifact, no new drift, physically plausible.
class SimRemovalCritic final : public RemovalCriticIface {
public:
    RemovalVerdict verify_removal(const ImageRef& prev_ref, const ImageRef& next_ref,
                                  const std::string& phrase) override {
        using namespace decomp_detail;
        SimScene prev = SimScene::from_ref(prev_ref);
        SimScene next = SimScene::from_ref(next_ref);
        const std::string target = parse_removal_target(phrase, prev.objects);

        std::vector<std::string> removed;
        for (const auto& o : prev.objects)
            if (!next.contains(o)) removed.push_back(o);
        std::vector<std::string> new_flaws;
        for (const auto& f : next.flaws)
            if (std::find(prev.flaws.begin(), prev.flaws.end(), f) == prev.flaws.end())
                new_flaws.push_back(f);

        RemovalVerdict verdict;
        std::string feedback;
        int passed = 5;
        auto fail = [&](const char* violation, const std::string& note) {
            verdict.violations.push_back(violation);
            if (!feedback.empty()) feedback += "; ";
            feedback += note;
            --passed;
        };

        const bool target_removed =
            !target.empty() && prev.contains(target) && !next.contains(target);
        if (!target_removed)
            fail("not_removed", "the " + (target.empty() ? std::string("target") : target) +
                                    " is still present; remove exactly the " +
                                    (target.empty() ? std::string("requested object") : target));

        for (const auto& o : removed)
            if (o != target) {
                fail("wrong_object_removed", "the wrong object (" + o +
                                                 ") was removed; remove exactly the " + target +
                                                 ", " + kPrecisionMarker);
                break;
            }

        for (const auto& f : new_flaws)
            if (f.rfind("shadow_residual:", 0) == 0) {
                const std::string obj = f.substr(16);
                fail("artifact", "a shadow residual of the " + obj +
                                     " remains; remove the " + obj + " " + kShadowMarker);
                break;
            }

        for (const auto& f : new_flaws)
            if (f.rfind("background_drift:", 0) == 0) {
                fail("identity_drift",
                     "the background drifted; redo the removal while " + std::string(kBackgroundMarker));
                break;
            }

        for (const auto& o : removed) {
            bool supports_remaining = false;
            for (const auto& [supporter, supported] : prev.supports)
                if (supporter == o && next.contains(supported)) supports_remaining = true;
            if (supports_remaining) {
                fail("implausible_change",
                     "the " + o + " still supported other objects; remove those first");
                break;
            }
        }

        verdict.removed_ok = verdict.violations.empty();
        verdict.feedback = verdict.removed_ok ? "" : feedback;
        verdict.score = Score::fraction(passed, 5);
        return verdict;
    }
};

inline DecompositionBackends make_sim_decomposition_backends() {
    return DecompositionBackends{std::make_shared<SimSceneProposer>(),
                                 std::make_shared<SimSceneEditor>(),
                                 std::make_shared<SimRemovalCritic>()};
}

// ---------------------------------------------------------------------------
// Chat-model backends
// ---------------------------------------------------------------------------

class ChatProposer final : public ProposerIface {
public:
    explicit ChatProposer(ChatFn chat, PromptLibrary lib = PromptLibrary::defaults())
        : chat_(std::move(chat)), lib_(std::move(lib)) {}

    RemovalProposal propose(const ImageRef& scene, const std::vector<RemovalAttempt>&,
                            const std::optional<std::string>& prior_feedback,
                            std::uint64_t) override {
        std::string feedback_block;
        if (prior_feedback && !prior_feedback->empty())
            feedback_block = "Your previous attempt was rejected with this feedback:\n" +
                             *prior_feedback + "\nThe new removal phrase must address it.\n";
        std::string prompt =
            detail::replace_all(lib_.decomp_proposer, "{{feedback_block}}", feedback_block);
        prompt = detail::finish_render(std::move(prompt));

        for (int attempt = 0; attempt < 2; ++attempt) {
            const std::string response = chat_("", prompt, {scene});
            RemovalProposal proposal;
            proposal.raw = response;
            for (const std::string& line : detail::split_lines(response)) {
                std::size_t obj = detail::find_labeled(line, "object");
                if (obj != std::string::npos && proposal.object.empty())
                    proposal.object = detail::trim(line.substr(obj));
                std::size_t phr = detail::find_labeled(line, "phrase");
                if (phr != std::string::npos && proposal.phrase.empty())
                    proposal.phrase = detail::trim(line.substr(phr));
            }
            if (!proposal.object.empty() && proposal.object != "none" &&
                !proposal.phrase.empty())
                return proposal;
            if (proposal.object == "none" || response.find("SCENE_EMPTY") != std::string::npos) {
                proposal.done = true;
                return proposal;
            }
        }
        throw ProtocolError("proposer returned no parseable Object/Phrase lines");
    }

private:
    ChatFn chat_;
    PromptLibrary lib_;
};

class ChatRemovalCritic final : public RemovalCriticIface {
public:
    explicit ChatRemovalCritic(ChatFn chat, PromptLibrary lib = PromptLibrary::defaults())
        : chat_(std::move(chat)), lib_(std::move(lib)) {}

    RemovalVerdict verify_removal(const ImageRef& prev, const ImageRef& next,
                                  const std::string& phrase) override {
        static const std::set<std::string> known{"not_removed", "wrong_object_removed",
                                                 "artifact", "identity_drift",
                                                 "implausible_change"};
        std::string prompt = detail::replace_all(lib_.decomp_critic, "{{phrase}}", phrase);
        prompt = detail::finish_render(std::move(prompt));

        std::string last;
        for (int attempt = 0; attempt < 2; ++attempt) {
            last = chat_("", prompt, {prev, next});
            std::optional<bool> removed;
            RemovalVerdict verdict;
            for (const std::string& line : detail::split_lines(last)) {
                std::size_t r = detail::find_labeled(line, "removed");
                if (r != std::string::npos && !removed) {
                    std::string token = detail::normalize_action_token(line.substr(r));
                    if (token == "YES") removed = true;
                    if (token == "NO") removed = false;
                }
                std::size_t v = detail::find_labeled(line, "violations");
                if (v != std::string::npos && verdict.violations.empty()) {
                    std::istringstream ss(line.substr(v));
                    std::string item;
                    while (std::getline(ss, item, ',')) {
                        item = detail::trim(item);
                        if (known.count(item)) verdict.violations.push_back(item);
                    }
                }
                std::size_t f = detail::find_labeled(line, "feedback");
                if (f != std::string::npos && verdict.feedback.empty())
                    verdict.feedback = detail::trim(line.substr(f));
                std::size_t s = detail::find_labeled(line, "score");
                if (s != std::string::npos && verdict.score.den == 1 && verdict.score.num == 0) {
                    try {
                        double value = std::stod(detail::trim(line.substr(s)));
                        value = std::clamp(value, 0.0, 1.0);
                        verdict.score = Score::fraction(
                            static_cast<long long>(std::lround(value * 100)), 100);
                    } catch (const std::exception&) {
                    }
                }
            }
            if (removed) {
                verdict.removed_ok = *removed && verdict.violations.empty();
                if (*removed && !verdict.violations.empty()) verdict.removed_ok = false;
                if (verdict.removed_ok) verdict.score = Score{1, 1};
                return verdict;
            }
        }
        RemovalVerdict unverifiable;
        unverifiable.removed_ok = false;
        unverifiable.violations = {"unverifiable"};
        unverifiable.feedback = last;
        unverifiable.score = Score{0, 1};
        return unverifiable;
    }

private:
    ChatFn chat_;
    PromptLibrary lib_;
};

// ---------------------------------------------------------------------------
// Decomposition runners
// ---------------------------------------------------------------------------

struct StepRecord {
    int step = 0;
    std::vector<RemovalAttempt> attempts;
    int accepted = -1;
    bool accepted_ok = false;
};

struct DecompositionResult {
    std::vector<StepRecord> steps;
    bool solved = false;  // scene fully emptied with every step verified
    long long editor_calls = 0;
    long long verifier_calls = 0;
    ImageRef final_scene;
};

namespace decomp_detail {

inline std::uint64_t attempt_seed(std::uint64_t base, int step, int attempt) {
    return mix64(base, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(attempt),
                 0x5eedull);
}

// Synthetic scenes carry a step ordinal for flaw keying; bump it when a
// candidate is accepted as the new scene.
inline ImageRef advance_scene(const ImageRef& accepted) {
    if (accepted.media_type != "application/x-simscene") return accepted;
    SimScene scene = SimScene::from_ref(accepted);
    scene.step += 1;
    return scene.to_ref();
}

inline int pick_argmax(const std::vector<RemovalAttempt>& attempts) {
    int best = 0;
    for (std::size_t i = 1; i < attempts.size(); ++i)
        if (attempts[i].verdict.score > attempts[best].verdict.score)
            best = static_cast<int>(i);
    return best;
}

}  // namespace decomp_detail

// Feedback-guided iterative policy: retry with the critic's feedback until
// the step verifies or the budget is exhausted (argmax score then wins).
inline DecompositionResult run_decomposition(const DecompositionTask& task,
                                             const DecompositionBackends& backends,
                                             std::uint64_t seed) {
    task.validate();
    DecompositionResult result;
    ImageRef scene = task.initial_scene;
    bool scene_empty = false;

    for (int step = 0; step < task.max_steps; ++step) {
        RemovalProposal proposal;
        try {
            proposal = backends.proposer->propose(scene, {}, std::nullopt,
                                                  decomp_detail::attempt_seed(seed, step, 0));
        } catch (const Error&) {
            break;  // proposer unusable; sequence ends unsolved
        }
        if (proposal.done) {
            scene_empty = true;
            break;
        }

        StepRecord record;
        record.step = step;
        std::optional<std::string> feedback;
        for (int attempt = 0; attempt < task.per_step_budget; ++attempt) {
            try {
                if (attempt > 0)
                    proposal = backends.proposer->propose(
                        scene, record.attempts, feedback,
                        decomp_detail::attempt_seed(seed, step, attempt));
                ImageRef candidate = backends.editor->edit(
                    scene, proposal.phrase, decomp_detail::attempt_seed(seed, step, attempt));
                result.editor_calls++;
                RemovalVerdict verdict =
                    backends.critic->verify_removal(scene, candidate, proposal.phrase);
                result.verifier_calls++;
                record.attempts.push_back({proposal, std::move(candidate), verdict});
                if (verdict.removed_ok) {
                    record.accepted = attempt;
                    record.accepted_ok = true;
                    break;
                }
                feedback = verdict.feedback;
            } catch (const Error& err) {
                RemovalAttempt failed;
                failed.proposal = proposal;
                failed.verdict.violations = {"unverifiable"};
                failed.verdict.feedback = err.what();
                record.attempts.push_back(std::move(failed));
            }
        }
        if (record.attempts.empty()) break;
        if (record.accepted < 0) {
            record.accepted = decomp_detail::pick_argmax(record.attempts);
            record.accepted_ok = record.attempts[record.accepted].verdict.removed_ok;
        }
        const ImageRef& chosen = record.attempts[record.accepted].candidate;
        if (!chosen.empty()) scene = decomp_detail::advance_scene(chosen);
        result.steps.push_back(std::move(record));
    }

    if (!scene_empty) {
        // One more probe in case the final step emptied the scene exactly at
        // the step limit.
        try {
            scene_empty = backends.proposer
                              ->propose(scene, {}, std::nullopt,
                                        decomp_detail::attempt_seed(seed, task.max_steps, 0))
                              .done;
        } catch (const Error&) {
        }
    }
    result.final_scene = scene;
    result.solved = scene_empty && !result.steps.empty() &&
                    std::all_of(result.steps.begin(), result.steps.end(),
                                [](const StepRecord& s) { return s.accepted_ok; });
    if (scene_empty && result.steps.empty()) result.solved = false;  // empty input scene
    return result;
}

// Budget-matched parallel baseline: per step, per_step_budget independent
// edits from one phrase; the critic's argmax is kept; no feedback loop.
inline DecompositionResult parallel_removal_baseline(const DecompositionTask& task,
                                                     const DecompositionBackends& backends,
                                                     std::uint64_t seed) {
    task.validate();
    DecompositionResult result;
    ImageRef scene = task.initial_scene;
    bool scene_empty = false;

    for (int step = 0; step < task.max_steps; ++step) {
        RemovalProposal proposal;
        try {
            proposal = backends.proposer->propose(scene, {}, std::nullopt,
                                                  decomp_detail::attempt_seed(seed, step, 0));
        } catch (const Error&) {
            break;
        }
        if (proposal.done) {
            scene_empty = true;
            break;
        }

        StepRecord record;
        record.step = step;
        for (int attempt = 0; attempt < task.per_step_budget; ++attempt) {
            try {
                ImageRef candidate = backends.editor->edit(
                    scene, proposal.phrase, decomp_detail::attempt_seed(seed, step, attempt));
                result.editor_calls++;
                RemovalVerdict verdict =
                    backends.critic->verify_removal(scene, candidate, proposal.phrase);
                result.verifier_calls++;
                record.attempts.push_back({proposal, std::move(candidate), verdict});
            } catch (const Error& err) {
                RemovalAttempt failed;
                failed.proposal = proposal;
                failed.verdict.violations = {"unverifiable"};
                failed.verdict.feedback = err.what();
                record.attempts.push_back(std::move(failed));
            }
        }
        if (record.attempts.empty()) break;
        record.accepted = decomp_detail::pick_argmax(record.attempts);
        record.accepted_ok = record.attempts[record.accepted].verdict.removed_ok;
        const ImageRef& chosen = record.attempts[record.accepted].candidate;
        if (!chosen.empty()) scene = decomp_detail::advance_scene(chosen);
        result.steps.push_back(std::move(record));
    }

    if (!scene_empty) {
        try {
            scene_empty = backends.proposer
                              ->propose(scene, {}, std::nullopt,
                                        decomp_detail::attempt_seed(seed, task.max_steps, 0))
                              .done;
        } catch (const Error&) {
        }
    }
    result.final_scene = scene;
    result.solved = scene_empty && !result.steps.empty() &&
                    std::all_of(result.steps.begin(), result.steps.end(),
                                [](const StepRecord& s) { return s.accepted_ok; });
    if (scene_empty && result.steps.empty()) result.solved = false;
    return result;
}

}  // namespace refinery
