#pragma once
// Record/replay wrappers around the four backend roles. Recording captures
// every request/response pair to a JSONL transcript keyed by a canonical
// request serialization; the replay backends serve recorded responses by
// key (FIFO for repeats), enabling offline deterministic reruns of any run.

#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>

#include <json.hpp>

#include "refinery/backends.hpp"
#include "refinery/core.hpp"
#include "refinery/http_backend.hpp"  // base64, image_content

namespace refinery {

namespace transcript_detail {

inline nlohmann::json image_to_json(const ImageRef& ref) {
    nlohmann::json j{{"media_type", ref.media_type}};
    j["b64"] = base64_encode(image_content(ref));
    if (!ref.path.empty()) j["path_hint"] = ref.path;
    return j;
}

inline ImageRef image_from_json(const nlohmann::json& j) {
    ImageRef ref;
    ref.media_type = j.value("media_type", "");
    ref.bytes = base64_decode(j.value("b64", ""));
    return ref;
}

inline nlohmann::json report_to_json(const VerifierReport& r) {
    nlohmann::json answers = nlohmann::json::array();
    for (const auto& a : r.answers) answers.push_back({{"q", a.question}, {"v", a.verdict}});
    return nlohmann::json{{"mode", r.mode == ScoreMode::Binary ? "binary" : "continuous"},
                          {"answers", answers},
                          {"num", r.score.num},
                          {"den", r.score.den},
                          {"degraded", r.degraded}};
}

inline VerifierReport report_from_json(const nlohmann::json& j) {
    VerifierReport r;
    r.mode = j.value("mode", "binary") == "binary" ? ScoreMode::Binary : ScoreMode::Continuous;
    for (const auto& a : j.value("answers", nlohmann::json::array()))
        r.answers.push_back({a.value("q", ""), a.value("v", 0)});
    r.score = Score{j.value("num", 0ll), j.value("den", 1ll)};
    r.degraded = j.value("degraded", false);
    return r;
}

inline nlohmann::json decision_to_json(const CriticDecision& d) {
    return nlohmann::json{{"action", to_string(d.action)},
                          {"sub_prompt", d.sub_prompt},
                          {"raw", d.raw_response},
                          {"parse_fallback", d.parse_fallback}};
}

inline CriticDecision decision_from_json(const nlohmann::json& j) {
    CriticDecision d;
    auto action = action_from_token(j.value("action", "CONTINUE"));
    d.action = action ? *action : Action::Continue;
    d.sub_prompt = j.value("sub_prompt", "");
    d.raw_response = j.value("raw", "");
    d.parse_fallback = j.value("parse_fallback", false);
    return d;
}

inline std::string content_key(const ImageRef& ref) {
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(hash_str(image_content(ref))));
    return hex;
}

inline std::string generate_key(const std::string& prompt, const std::string& sub,
                                std::uint64_t seed) {
    return nlohmann::json{{"op", "generate"}, {"prompt", prompt}, {"sub", sub}, {"seed", seed}}
        .dump();
}

inline std::string edit_key(const ImageRef& base, const std::string& instruction,
                            std::uint64_t seed) {
    return nlohmann::json{
        {"op", "edit"}, {"base", content_key(base)}, {"instruction", instruction}, {"seed", seed}}
        .dump();
}

inline std::string verify_key(const ImageRef& image, const TaskPrompt& task) {
    return nlohmann::json{{"op", "verify"},
                          {"image", content_key(image)},
                          {"task", task.id},
                          {"questions", task.questions}}
        .dump();
}

inline std::string critique_key(const CriticContext& ctx) {
    nlohmann::json verdicts = nlohmann::json::array();
    for (const auto& a : ctx.report.answers) verdicts.push_back(a.verdict);
    return nlohmann::json{{"op", "critique"},
                          {"image", content_key(ctx.image)},
                          {"task", ctx.task ? ctx.task->id : ""},
                          {"round", ctx.round},
                          {"max_rounds", ctx.max_rounds},
                          {"step_prompts", ctx.step_prompts},
                          {"verdicts", verdicts}}
        .dump();
}

}  // namespace transcript_detail

class TranscriptWriter {
public:
    explicit TranscriptWriter(const std::filesystem::path& file) {
        if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
        out_.open(file, std::ios::out | std::ios::app);
        if (!out_) throw StorageError("cannot open transcript: " + file.string());
    }

    void record(const std::string& kind, const std::string& key,
                const nlohmann::json& response) {
        std::lock_guard<std::mutex> lock(mu_);
        out_ << nlohmann::json{{"kind", kind}, {"key", key}, {"response", response}}.dump()
             << '\n';
        out_.flush();
        if (!out_) throw StorageError("transcript write failed");
    }

private:
    std::mutex mu_;
    std::ofstream out_;
};

class TranscriptStore {
public:
    static std::shared_ptr<TranscriptStore> load(const std::filesystem::path& file) {
        std::ifstream in(file);
        if (!in) throw StorageError("cannot read transcript: " + file.string());
        auto store = std::make_shared<TranscriptStore>();
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line);
            store->entries_[j.value("kind", "") + "\x1f" + j.value("key", "")].push_back(
                j["response"]);
        }
        return store;
    }

    // FIFO per key; repeated identical requests replay in recording order and
    // stick at the last response once drained.
    nlohmann::json take(const std::string& kind, const std::string& key) {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = entries_.find(kind + "\x1f" + key);
        if (it == entries_.end() || it->second.empty())
            throw ReplayMiss("no recorded response for " + kind + " request " + key);
        nlohmann::json response = it->second.front();
        if (it->second.size() > 1) it->second.pop_front();
        return response;
    }

    std::size_t count_kind(const std::string& kind) const {
        std::lock_guard<std::mutex> lock(mu_);
        std::size_t n = 0;
        const std::string prefix = kind + "\x1f";
        for (const auto& [key, queue] : entries_)
            if (key.rfind(prefix, 0) == 0) n += queue.size();
        return n;
    }

private:
    mutable std::mutex mu_;
    std::map<std::string, std::deque<nlohmann::json>> entries_;
};

// ---------------------------------------------------------------------------
// Recording wrappers
// ---------------------------------------------------------------------------

class RecordingGenerator final : public GeneratorIface {
public:
    RecordingGenerator(std::shared_ptr<GeneratorIface> inner,
                       std::shared_ptr<TranscriptWriter> writer)
        : inner_(std::move(inner)), writer_(std::move(writer)) {}
    ImageRef generate(const std::string& prompt, const std::string& sub,
                      std::uint64_t seed) override {
        ImageRef ref = inner_->generate(prompt, sub, seed);
        writer_->record("generate", transcript_detail::generate_key(prompt, sub, seed),
                        transcript_detail::image_to_json(ref));
        return ref;
    }

private:
    std::shared_ptr<GeneratorIface> inner_;
    std::shared_ptr<TranscriptWriter> writer_;
};

class RecordingEditor final : public EditorIface {
public:
    RecordingEditor(std::shared_ptr<EditorIface> inner, std::shared_ptr<TranscriptWriter> writer)
        : inner_(std::move(inner)), writer_(std::move(writer)) {}
    ImageRef edit(const ImageRef& base, const std::string& instruction,
                  std::uint64_t seed) override {
        ImageRef ref = inner_->edit(base, instruction, seed);
        writer_->record("edit", transcript_detail::edit_key(base, instruction, seed),
                        transcript_detail::image_to_json(ref));
        return ref;
    }

private:
    std::shared_ptr<EditorIface> inner_;
    std::shared_ptr<TranscriptWriter> writer_;
};

class RecordingVerifier final : public VerifierIface {
public:
    RecordingVerifier(std::shared_ptr<VerifierIface> inner,
                      std::shared_ptr<TranscriptWriter> writer)
        : inner_(std::move(inner)), writer_(std::move(writer)) {}
    VerifierReport verify(const ImageRef& image, const TaskPrompt& task) override {
        VerifierReport report = inner_->verify(image, task);
        writer_->record("verify", transcript_detail::verify_key(image, task),
                        transcript_detail::report_to_json(report));
        return report;
    }

private:
    std::shared_ptr<VerifierIface> inner_;
    std::shared_ptr<TranscriptWriter> writer_;
};

class RecordingCritic final : public CriticIface {
public:
    RecordingCritic(std::shared_ptr<CriticIface> inner, std::shared_ptr<TranscriptWriter> writer)
        : inner_(std::move(inner)), writer_(std::move(writer)) {}
    CriticDecision critique(const CriticContext& ctx) override {
        CriticDecision decision = inner_->critique(ctx);
        writer_->record("critique", transcript_detail::critique_key(ctx),
                        transcript_detail::decision_to_json(decision));
        return decision;
    }

private:
    std::shared_ptr<CriticIface> inner_;
    std::shared_ptr<TranscriptWriter> writer_;
};

inline BackendSet make_recording_backends(const BackendSet& inner,
                                          std::shared_ptr<TranscriptWriter> writer) {
    return BackendSet{std::make_shared<RecordingGenerator>(inner.generator, writer),
                      std::make_shared<RecordingEditor>(inner.editor, writer),
                      std::make_shared<RecordingVerifier>(inner.verifier, writer),
                      std::make_shared<RecordingCritic>(inner.critic, writer)};
}

// ---------------------------------------------------------------------------
// Replay backends
// ---------------------------------------------------------------------------

class ReplayGenerator final : public GeneratorIface {
public:
    explicit ReplayGenerator(std::shared_ptr<TranscriptStore> store) : store_(std::move(store)) {}
    ImageRef generate(const std::string& prompt, const std::string& sub,
                      std::uint64_t seed) override {
        return transcript_detail::image_from_json(
            store_->take("generate", transcript_detail::generate_key(prompt, sub, seed)));
    }

private:
    std::shared_ptr<TranscriptStore> store_;
};

class ReplayEditor final : public EditorIface {
public:
    explicit ReplayEditor(std::shared_ptr<TranscriptStore> store) : store_(std::move(store)) {}
    ImageRef edit(const ImageRef& base, const std::string& instruction,
                  std::uint64_t seed) override {
        return transcript_detail::image_from_json(
            store_->take("edit", transcript_detail::edit_key(base, instruction, seed)));
    }

private:
    std::shared_ptr<TranscriptStore> store_;
};

class ReplayVerifier final : public VerifierIface {
public:
    explicit ReplayVerifier(std::shared_ptr<TranscriptStore> store) : store_(std::move(store)) {}
    VerifierReport verify(const ImageRef& image, const TaskPrompt& task) override {
        return transcript_detail::report_from_json(
            store_->take("verify", transcript_detail::verify_key(image, task)));
    }

private:
    std::shared_ptr<TranscriptStore> store_;
};

class ReplayCritic final : public CriticIface {
public:
    explicit ReplayCritic(std::shared_ptr<TranscriptStore> store) : store_(std::move(store)) {}
    CriticDecision critique(const CriticContext& ctx) override {
        return transcript_detail::decision_from_json(
            store_->take("critique", transcript_detail::critique_key(ctx)));
    }

private:
    std::shared_ptr<TranscriptStore> store_;
};

inline BackendSet make_replay_backends(std::shared_ptr<TranscriptStore> store) {
    return BackendSet{std::make_shared<ReplayGenerator>(store),
                      std::make_shared<ReplayEditor>(store),
                      std::make_shared<ReplayVerifier>(store),
                      std::make_shared<ReplayCritic>(store)};
}

}  // namespace refinery
