#pragma once
// Append-only run journal. Every generation/verification/critique/edit in a
// run is persisted as one JSON object per line (write-ahead) so a run can be
// audited and replayed after the fact.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "refinery/core.hpp"

namespace refinery {

enum class EventKind {
    Generated,
    Verified,
    Critiqued,
    Edited,
    Backtracked,   // zero-unit marker: edit base reverted to the predecessor
    Restarted,
    Stopped,
    BudgetExhausted,
    Selected
};

inline const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::Generated: return "Generated";
        case EventKind::Verified: return "Verified";
        case EventKind::Critiqued: return "Critiqued";
        case EventKind::Edited: return "Edited";
        case EventKind::Backtracked: return "Backtracked";
        case EventKind::Restarted: return "Restarted";
        case EventKind::Stopped: return "Stopped";
        case EventKind::BudgetExhausted: return "BudgetExhausted";
        case EventKind::Selected: return "Selected";
    }
    return "Generated";
}

inline std::optional<EventKind> event_kind_from_string(const std::string& s) {
    static const std::pair<const char*, EventKind> table[] = {
        {"Generated", EventKind::Generated},   {"Verified", EventKind::Verified},
        {"Critiqued", EventKind::Critiqued},   {"Edited", EventKind::Edited},
        {"Backtracked", EventKind::Backtracked}, {"Restarted", EventKind::Restarted},
        {"Stopped", EventKind::Stopped},       {"BudgetExhausted", EventKind::BudgetExhausted},
        {"Selected", EventKind::Selected},
    };
    for (const auto& [name, kind] : table)
        if (s == name) return kind;
    return std::nullopt;
}

// Unit-consuming events. Backtrack edits are recorded as Edited (with an
// after_backtrack payload flag) so this set always counts generator+editor
// calls exactly; the Backtracked marker itself costs nothing.
inline bool consumes_unit(EventKind k) {
    return k == EventKind::Generated || k == EventKind::Edited || k == EventKind::Restarted;
}

struct Event {
    std::uint64_t seq = 0;
    std::int64_t ts_ms = 0;
    int stream = -1;  // -1 for run-level events (Selected)
    int round = 0;
    EventKind kind = EventKind::Generated;
    nlohmann::json data;

    nlohmann::json to_json() const {
        return nlohmann::json{{"seq", seq},     {"ts_ms", ts_ms}, {"stream", stream},
                              {"round", round}, {"kind", to_string(kind)}, {"data", data}};
    }

    static Event from_json(const nlohmann::json& j) {
        Event e;
        e.seq = j.value("seq", std::uint64_t{0});
        e.ts_ms = j.value("ts_ms", std::int64_t{0});
        e.stream = j.value("stream", -1);
        e.round = j.value("round", 0);
        auto kind = event_kind_from_string(j.value("kind", ""));
        if (!kind) throw StorageError("journal line with unknown event kind");
        e.kind = *kind;
        e.data = j.value("data", nlohmann::json::object());
        return e;
    }
};

class RunJournal {
public:
    explicit RunJournal(std::string run_id) : run_id_(std::move(run_id)) {}

    RunJournal(const RunJournal&) = delete;
    RunJournal& operator=(const RunJournal&) = delete;

    const std::string& run_id() const { return run_id_; }

    void set_config_snapshot(nlohmann::json snapshot) { config_snapshot_ = std::move(snapshot); }
    const nlohmann::json& config_snapshot() const { return config_snapshot_; }

    // Directs appends to <dir>/journal.jsonl. Each append is flushed before
    // returning so the on-disk log never lags the in-memory one.
    void open_sink(const std::filesystem::path& dir) {
        std::lock_guard<std::mutex> lock(mu_);
        std::filesystem::create_directories(dir);
        sink_path_ = dir / "journal.jsonl";
        sink_.open(sink_path_, std::ios::out | std::ios::app);
        if (!sink_) throw StorageError("cannot open journal sink: " + sink_path_.string());
    }

    // Serialized internally; safe to call from stream workers.
    void append(Event e) {
        std::lock_guard<std::mutex> lock(mu_);
        if (finalized_) throw StorageError("journal '" + run_id_ + "' is finalized");
        e.seq = next_seq_++;
        if (e.ts_ms == 0)
            e.ts_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::system_clock::now().time_since_epoch())
                          .count();
        if (sink_.is_open()) {
            sink_ << e.to_json().dump() << '\n';
            sink_.flush();
            if (!sink_) throw StorageError("journal write failed: " + sink_path_.string());
        }
        if (e.kind == EventKind::Selected) {
            finalized_ = true;
            final_stream_ = e.data.value("stream", -1);
            final_candidate_ = e.data.value("candidate", -1);
        }
        events_.push_back(std::move(e));
    }

    bool finalized() const {
        std::lock_guard<std::mutex> lock(mu_);
        return finalized_;
    }

    // (stream_id, candidate_index) from the Selected event; (-1,-1) before it.
    std::pair<int, int> final_selection() const {
        std::lock_guard<std::mutex> lock(mu_);
        return {final_stream_, final_candidate_};
    }

    // Snapshot accessors: intended for inspection after the run completes.
    std::vector<Event> events() const {
        std::lock_guard<std::mutex> lock(mu_);
        return events_;
    }

    std::size_t count_kind(EventKind kind) const {
        std::lock_guard<std::mutex> lock(mu_);
        std::size_t n = 0;
        for (const auto& e : events_)
            if (e.kind == kind) ++n;
        return n;
    }

    std::size_t unit_event_count() const {
        std::lock_guard<std::mutex> lock(mu_);
        std::size_t n = 0;
        for (const auto& e : events_)
            if (consumes_unit(e.kind)) ++n;
        return n;
    }

    static std::unique_ptr<RunJournal> load(const std::filesystem::path& journal_file,
                                            const std::string& run_id) {
        std::ifstream in(journal_file);
        if (!in) throw StorageError("cannot read journal: " + journal_file.string());
        auto j = std::make_unique<RunJournal>(run_id);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            Event e = Event::from_json(nlohmann::json::parse(line));
            if (e.kind == EventKind::Selected) {
                j->finalized_ = true;
                j->final_stream_ = e.data.value("stream", -1);
                j->final_candidate_ = e.data.value("candidate", -1);
            }
            j->next_seq_ = e.seq + 1;
            j->events_.push_back(std::move(e));
        }
        return j;
    }

    // A journal on disk counts as a completed run only once it is finalized.
    static bool file_is_finalized(const std::filesystem::path& journal_file) {
        std::ifstream in(journal_file);
        if (!in) return false;
        std::string line;
        bool selected = false;
        while (std::getline(in, line)) {
            if (line.find("\"Selected\"") != std::string::npos) selected = true;
        }
        return selected;
    }

private:
    std::string run_id_;
    nlohmann::json config_snapshot_;
    mutable std::mutex mu_;
    std::vector<Event> events_;
    std::uint64_t next_seq_ = 0;
    bool finalized_ = false;
    int final_stream_ = -1;
    int final_candidate_ = -1;
    std::filesystem::path sink_path_;
    std::ofstream sink_;
};

}  // namespace refinery
