#pragma once
// Iterative refinement over parallel streams with critic feedback.
//
// Each of M streams spends one unit on its initial generation (round 1) and
// up to T-1 further units on critic-guided steps. Rounds run in lockstep:
// stream work within a round may execute on worker threads, but journal
// events are appended in stream order so runs with equal seeds produce the
// same event sequence regardless of scheduling. The final candidate is the
// cross-stream argmax of verifier scores with (stream, index) tie-break.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include "refinery/backends.hpp"
#include "refinery/core.hpp"
#include "refinery/journal.hpp"
#include "refinery/simenv.hpp"  // mix64 / hash_str

namespace refinery {

struct EngineConfig {
    Budget budget;
    std::set<Action> allowed_actions = all_actions();
    bool stop_on_perfect_score = true;  // skip the critic once a candidate scores 1.0
    std::uint64_t seed = 0;
    Action disallowed_action_fallback = Action::Continue;
    // By default CONTINUE edits the stream's own latest image; this switches
    // CONTINUE to editing the cross-stream best candidate instead.
    bool continue_from_global_best = false;
    int workers = 0;  // max threads per round; 0 = one per stream, 1 = inline
    // When set, inline image bytes are persisted as
    // <run_dir>/images/<stream>_<round>.<ext> (synthetic images stay inline).
    std::filesystem::path run_dir;

    void validate() const {
        validate_budget(budget.total_units, budget.rounds, budget.streams);
        if (!allowed_actions.count(Action::Continue) || !allowed_actions.count(Action::Stop))
            throw ConfigError("allowed_actions must contain CONTINUE and STOP");
        if (!allowed_actions.count(disallowed_action_fallback))
            throw ConfigError("disallowed_action_fallback must itself be an allowed action");
    }
};

struct RefinementResult {
    Candidate best;
    int best_stream = 0;
    std::size_t best_index = 0;
    std::vector<StreamState> streams;
    std::vector<Score> per_round_best_scores;
    const RunJournal* journal = nullptr;
};

// Deterministic per-unit seed: same (run seed, task, stream, round) always
// hits a backend with the same seed.
inline std::uint64_t unit_seed(std::uint64_t run_seed, const std::string& task_id, int stream,
                               int round, std::uint64_t salt) {
    return mix64(run_seed, hash_str(task_id), static_cast<std::uint64_t>(stream),
                 static_cast<std::uint64_t>(round), salt);
}

// Cross-stream argmax over every verified candidate; ties break to the lower
// stream id, then the lower candidate index.
inline std::pair<int, std::size_t> select_best(const std::vector<StreamState>& streams) {
    std::optional<std::pair<int, std::size_t>> best;
    std::optional<Score> best_score;
    for (const auto& stream : streams) {
        for (std::size_t i = 0; i < stream.history.size(); ++i) {
            const auto& cand = stream.history[i];
            if (!cand.report) continue;
            if (!best_score || cand.report->score > *best_score) {
                best_score = cand.report->score;
                best = {stream.stream_id, i};
            }
        }
    }
    if (!best) throw SelectionImpossible("no verified candidate to select");
    return *best;
}

namespace engine_detail {

inline nlohmann::json image_payload(const ImageRef& ref) {
    nlohmann::json j;
    if (!ref.path.empty()) j["path"] = ref.path;
    if (ref.is_inline() && ref.media_type == "application/x-simg") j["inline"] = ref.bytes;
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(hash_str(ref.path + ref.bytes)));
    j["content_hash"] = hex;
    return j;
}

inline nlohmann::json score_payload(const Score& s) {
    return nlohmann::json{{"num", s.num}, {"den", s.den}};
}

inline const char* extension_for(const std::string& media_type) {
    if (media_type == "image/png") return ".png";
    if (media_type == "image/jpeg") return ".jpg";
    if (media_type == "image/webp") return ".webp";
    if (media_type == "text/plain") return ".txt";
    return ".bin";
}

inline void persist_candidate_image(const std::filesystem::path& run_dir, int stream, int round,
                                    ImageRef& ref) {
    if (run_dir.empty() || !ref.is_inline() || ref.media_type == "application/x-simg" ||
        ref.media_type == "application/x-simscene")
        return;
    const std::filesystem::path dir = run_dir / "images";
    std::filesystem::create_directories(dir);
    const std::filesystem::path file =
        dir / (std::to_string(stream) + "_" + std::to_string(round) +
               extension_for(ref.media_type));
    std::ofstream out(file, std::ios::binary);
    out.write(ref.bytes.data(), static_cast<std::streamsize>(ref.bytes.size()));
    if (!out) throw StorageError("cannot persist image: " + file.string());
    ref.path = file.string();
}

inline nlohmann::json report_payload(const VerifierReport& r) {
    nlohmann::json j{{"mode", r.mode == ScoreMode::Binary ? "binary" : "continuous"},
                     {"score", score_payload(r.score)}};
    if (r.degraded) j["degraded"] = true;
    nlohmann::json verdicts = nlohmann::json::array();
    for (const auto& a : r.answers) verdicts.push_back(a.verdict);
    j["verdicts"] = std::move(verdicts);
    return j;
}

// Retry a failed backend call once before giving up on the stream.
template <typename Fn>
auto retry_once(Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const Error&) {
        return fn();
    }
}

}  // namespace engine_detail

// Applies one (already masked) critic decision to a stream. Non-Stop actions
// consume exactly one unit and append one candidate; Stop consumes nothing.
// Backtrack on a single-candidate history degrades to Continue. Events for
// the journal are written to `events` in order.
inline void apply_action(StreamState& stream, const CriticDecision& decision,
                         const TaskPrompt& task, GeneratorIface& generator, EditorIface& editor,
                         std::uint64_t seed, int round, std::vector<Event>& events,
                         const Candidate* foreign_base = nullptr, int foreign_stream = -1,
                         std::size_t foreign_index = 0,
                         const std::filesystem::path& run_dir = {}) {
    if (stream.stopped) throw Error("apply_action on a stopped stream");
    using engine_detail::image_payload;

    auto push = [&](EventKind kind, nlohmann::json data) {
        events.push_back(Event{0, 0, stream.stream_id, round, kind, std::move(data)});
    };

    switch (decision.action) {
        case Action::Stop: {
            stream.stopped = true;
            push(EventKind::Stopped, {{"reason", "critic_stop"}});
            return;
        }
        case Action::Restart: {
            ImageRef img = engine_detail::retry_once(
                [&] { return generator.generate(task.text, decision.sub_prompt, seed); });
            engine_detail::persist_candidate_image(run_dir, stream.stream_id, round, img);
            Candidate cand;
            cand.image = std::move(img);
            cand.produced_by = Provenance::Restart;
            stream.history.push_back(std::move(cand));
            stream.units_consumed++;
            push(EventKind::Restarted, {{"candidate", stream.history.size() - 1},
                                        {"sub_prompt", decision.sub_prompt},
                                        {"image", image_payload(stream.history.back().image)}});
            return;
        }
        case Action::Backtrack:
        case Action::Continue: {
            bool after_backtrack = decision.action == Action::Backtrack;
            std::string fallback_reason;
            const Candidate* base = nullptr;
            std::size_t base_index = 0;
            int base_stream = stream.stream_id;

            if (after_backtrack && stream.history.size() < 2) {
                after_backtrack = false;  // nothing before the latest to revert to
                fallback_reason = "history_too_short";
            }
            if (after_backtrack) {
                base_index = stream.history.size() - 2;
                base = &stream.history[base_index];
                push(EventKind::Backtracked,
                     {{"from", stream.history.size() - 1}, {"to", base_index}});
            } else if (foreign_base) {
                base = foreign_base;
                base_stream = foreign_stream;
                base_index = foreign_index;
            } else {
                base_index = stream.history.size() - 1;
                base = &stream.history[base_index];
            }

            ImageRef img = engine_detail::retry_once(
                [&] { return editor.edit(base->image, decision.sub_prompt, seed); });
            engine_detail::persist_candidate_image(run_dir, stream.stream_id, round, img);
            Candidate cand;
            cand.image = std::move(img);
            cand.produced_by =
                after_backtrack ? Provenance::EditAfterBacktrack : Provenance::Edit;
            cand.source_index = base_index;
            if (base_stream != stream.stream_id) cand.source_stream = base_stream;
            stream.history.push_back(std::move(cand));
            stream.units_consumed++;

            nlohmann::json data{{"candidate", stream.history.size() - 1},
                                {"source", base_index},
                                {"after_backtrack", after_backtrack},
                                {"sub_prompt", decision.sub_prompt},
                                {"image", image_payload(stream.history.back().image)}};
            if (base_stream != stream.stream_id) data["source_stream"] = base_stream;
            if (!fallback_reason.empty()) data["fallback_reason"] = fallback_reason;
            push(EventKind::Edited, std::move(data));
            return;
        }
    }
}

inline RefinementResult run_refinement(const TaskPrompt& task, const EngineConfig& cfg,
                                       const BackendSet& backends, RunJournal& journal) {
    task.validate();
    cfg.validate();
    if (!backends.generator || !backends.editor || !backends.verifier || !backends.critic)
        throw ConfigError("run_refinement requires all four backends");

    const int rounds = cfg.budget.rounds;
    const int n_streams = cfg.budget.streams;

    std::vector<StreamState> streams(n_streams);
    std::vector<std::vector<std::string>> step_prompts(n_streams);
    for (int m = 0; m < n_streams; ++m) {
        streams[m].stream_id = m;
        step_prompts[m].push_back(task.text);
    }

    std::vector<Score> per_round_best;

    auto fail_stream = [&](StreamState& s, std::vector<Event>& events, int round,
                           const std::string& what) {
        s.failed = true;
        s.stopped = true;
        events.push_back(Event{0, 0, s.stream_id, round, EventKind::Stopped,
                               {{"reason", "backend_failure"}, {"error", what}}});
    };

    auto verify_latest = [&](StreamState& s, std::vector<Event>& events, int round) {
        Candidate& cand = s.history.back();
        VerifierReport report = engine_detail::retry_once(
            [&] { return backends.verifier->verify(cand.image, task); });
        cand.report = std::move(report);
        events.push_back(Event{0, 0, s.stream_id, round, EventKind::Verified,
                               {{"candidate", s.history.size() - 1},
                                {"report", engine_detail::report_payload(*cand.report)}}});
    };

    // Runs `work(stream_index)` for the given streams, then flushes each
    // stream's buffered events to the journal in stream order.
    auto run_round = [&](const std::vector<int>& active,
                         const std::function<void(int, std::vector<Event>&)>& work) {
        std::vector<std::vector<Event>> buffers(streams.size());
        const int max_workers = cfg.workers <= 0 ? static_cast<int>(active.size()) : cfg.workers;
        if (max_workers <= 1 || active.size() <= 1) {
            for (int m : active) work(m, buffers[m]);
        } else {
            std::vector<std::thread> pool;
            std::atomic<std::size_t> next{0};
            const int n = std::min<int>(max_workers, static_cast<int>(active.size()));
            for (int t = 0; t < n; ++t)
                pool.emplace_back([&] {
                    for (std::size_t i = next.fetch_add(1); i < active.size();
                         i = next.fetch_add(1))
                        work(active[i], buffers[active[i]]);
                });
            for (auto& th : pool) th.join();
        }
        std::optional<Score> round_best;
        for (auto& buf : buffers)
            for (auto& e : buf) {
                if (e.kind == EventKind::Verified) {
                    Score s{e.data["report"]["score"]["num"].get<long long>(),
                            e.data["report"]["score"]["den"].get<long long>()};
                    if (!round_best || s > *round_best) round_best = s;
                }
                journal.append(std::move(e));
            }
        if (round_best) per_round_best.push_back(*round_best);
    };

    auto active_streams = [&] {
        std::vector<int> active;
        for (const auto& s : streams)
            if (!s.stopped) active.push_back(s.stream_id);
        return active;
    };

    // Round 1: every stream generates its initial candidate (one unit each).
    run_round(active_streams(), [&](int m, std::vector<Event>& events) {
        StreamState& s = streams[m];
        try {
            ImageRef img = engine_detail::retry_once([&] {
                return backends.generator->generate(task.text, "",
                                                    unit_seed(cfg.seed, task.id, m, 1, 1));
            });
            engine_detail::persist_candidate_image(cfg.run_dir, m, 1, img);
            Candidate cand;
            cand.image = std::move(img);
            cand.produced_by = Provenance::Generate;
            s.history.push_back(std::move(cand));
            s.units_consumed++;
            events.push_back(Event{0, 0, m, 1, EventKind::Generated,
                                   {{"candidate", 0},
                                    {"prompt", task.text},
                                    {"image", engine_detail::image_payload(s.history.back().image)}}});
            verify_latest(s, events, 1);
        } catch (const Error& err) {
            fail_stream(s, events, 1, err.what());
        }
    });

    // Rounds 2..T: verify -> critique -> act, until every stream stops.
    for (int round = 2; round <= rounds; ++round) {
        auto active = active_streams();
        if (active.empty()) break;

        // Snapshot of the cross-stream best candidate for the optional
        // global-best CONTINUE semantics. Copied by value: stream workers may
        // grow their own history this round, which can reallocate it.
        Candidate global_best_copy;
        const Candidate* global_best = nullptr;
        int global_best_stream = -1;
        std::size_t global_best_index = 0;
        if (cfg.continue_from_global_best) {
            try {
                auto [bs, bi] = select_best(streams);
                global_best_copy = streams[bs].history[bi];
                global_best = &global_best_copy;
                global_best_stream = bs;
                global_best_index = bi;
            } catch (const SelectionImpossible&) {
            }
        }

        run_round(active, [&](int m, std::vector<Event>& events) {
            StreamState& s = streams[m];
            const Candidate& latest = s.history.back();
            if (!latest.report) {
                fail_stream(s, events, round, "latest candidate unverified");
                return;
            }
            if (cfg.stop_on_perfect_score && latest.report->score.perfect()) {
                s.stopped = true;
                events.push_back(Event{0, 0, m, round, EventKind::Stopped,
                                       {{"reason", "perfect_score"}}});
                return;
            }
            try {
                CriticContext ctx;
                ctx.image = latest.image;
                ctx.task = &task;
                ctx.step_prompts = step_prompts[m];
                ctx.report = *latest.report;
                if (s.history.size() >= 2) {
                    const auto& prev = s.history[s.history.size() - 2];
                    if (prev.report) ctx.prev_score = prev.report->score;
                }
                ctx.round = round;
                ctx.max_rounds = rounds;
                ctx.allowed_actions = cfg.allowed_actions;

                CriticDecision decision = engine_detail::retry_once(
                    [&] { return backends.critic->critique(ctx); });

                CriticDecision applied = decision;
                nlohmann::json critiqued{{"requested_action", to_string(decision.action)},
                                         {"sub_prompt", decision.sub_prompt},
                                         {"raw", decision.raw_response}};
                if (decision.parse_fallback) critiqued["parse_fallback"] = true;
                if (!cfg.allowed_actions.count(decision.action)) {
                    applied.action = cfg.disallowed_action_fallback;
                    critiqued["mask_fallback"] = true;
                }
                critiqued["applied_action"] = to_string(applied.action);
                events.push_back(
                    Event{0, 0, m, round, EventKind::Critiqued, std::move(critiqued)});

                const std::uint64_t seed = unit_seed(cfg.seed, task.id, m, round, 2);
                const bool use_global = cfg.continue_from_global_best &&
                                        applied.action == Action::Continue &&
                                        global_best != nullptr;
                apply_action(s, applied, task, *backends.generator, *backends.editor, seed,
                             round, events, use_global ? global_best : nullptr,
                             global_best_stream, global_best_index, cfg.run_dir);
                if (applied.action != Action::Stop) {
                    step_prompts[m].push_back(applied.sub_prompt);
                    verify_latest(s, events, round);
                }
            } catch (const Error& err) {
                fail_stream(s, events, round, err.what());
            }
        });
    }

    for (auto& s : streams) {
        if (!s.stopped) {
            journal.append(Event{0, 0, s.stream_id, rounds, EventKind::BudgetExhausted, {}});
            s.stopped = true;
        }
    }

    if (std::all_of(streams.begin(), streams.end(),
                    [](const StreamState& s) { return s.failed; }))
        throw RunFailed("all " + std::to_string(n_streams) + " streams failed");

    auto [best_stream, best_index] = select_best(streams);
    const Candidate& best = streams[best_stream].history[best_index];
    journal.append(Event{0, 0, -1, rounds, EventKind::Selected,
                         {{"stream", best_stream},
                          {"candidate", best_index},
                          {"score", engine_detail::score_payload(best.report->score)}}});

    RefinementResult result;
    result.best = best;
    result.best_stream = best_stream;
    result.best_index = best_index;
    result.streams = std::move(streams);
    result.per_round_best_scores = std::move(per_round_best);
    result.journal = &journal;
    return result;
}

}  // namespace refinery
