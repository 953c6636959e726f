#pragma once
// Harness configuration file (single JSON document) and JSONL task loading.
// Env vars are used only for secrets (endpoint auth tokens by name).

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "refinery/backends.hpp"
#include "refinery/core.hpp"
#include "refinery/decomposition.hpp"
#include "refinery/engine.hpp"
#include "refinery/simenv.hpp"

namespace refinery {

enum class BackendMode { Sim, Http, Replay };

inline BackendMode backend_mode_from_string(const std::string& s) {
    if (s == "sim") return BackendMode::Sim;
    if (s == "http") return BackendMode::Http;
    if (s == "replay") return BackendMode::Replay;
    throw ConfigError("unknown backend mode '" + s + "' (expected sim|http|replay)");
}

inline const char* to_string(BackendMode m) {
    switch (m) {
        case BackendMode::Sim: return "sim";
        case BackendMode::Http: return "http";
        case BackendMode::Replay: return "replay";
    }
    return "sim";
}

struct SweepConfig {
    std::vector<long long> budgets{1, 2, 4, 8, 16};
    std::string mode = "oracle";  // oracle | mc
    int trials = 5000;
    std::vector<std::string> masks{"full"};  // full | no_backtrack | no_fresh_start | no_both
    std::vector<int> ks;                     // oracle CSV rows; empty = sim.k only
};

struct JengaConfig {
    int scenes = 200;
    int objects_min = 4;
    int objects_max = 8;
    double edge_prob = 0.35;
    int per_step_budget = 4;
    int max_steps = 0;  // 0 = objects_max + 2
    FlawParams flaws;
};

struct HarnessConfig {
    std::uint64_t seed = 0;
    int workers = 1;
    BackendMode backend = BackendMode::Sim;
    Budget budget{16, 8, 2};
    std::set<Action> allowed_actions = all_actions();
    Action fallback_action = Action::Continue;
    bool stop_on_perfect_score = true;
    bool continue_from_global_best = false;
    std::map<std::string, EndpointConfig> endpoints;  // generator, editor, loop_verifier,
                                                      // critic, final_evaluator
    SimParams sim;
    SweepConfig sweep;
    JengaConfig jenga;
    std::string tasks_path;
    std::string out_path = "runs";
    std::string prompts_path;     // empty = embedded defaults
    std::string transcript_path;  // set: http records here, replay reads from here
    bool resume = false;

    EngineConfig engine_config() const {
        EngineConfig cfg;
        cfg.budget = budget;
        cfg.allowed_actions = allowed_actions;
        cfg.stop_on_perfect_score = stop_on_perfect_score;
        cfg.seed = seed;
        cfg.disallowed_action_fallback = fallback_action;
        cfg.continue_from_global_best = continue_from_global_best;
        cfg.validate();
        return cfg;
    }

    const EndpointConfig& endpoint(const std::string& role) const {
        auto it = endpoints.find(role);
        if (it == endpoints.end())
            throw ConfigError("backend mode 'http' requires a backends." + role + " block");
        return it->second;
    }

    static std::set<Action> parse_actions(const nlohmann::json& list) {
        std::set<Action> out;
        for (const auto& name : list) {
            auto action = action_from_token(name.get<std::string>());
            if (!action) throw ConfigError("unknown action '" + name.get<std::string>() + "'");
            out.insert(*action);
        }
        return out;
    }

    static EndpointConfig parse_endpoint(const nlohmann::json& j) {
        EndpointConfig e;
        e.base_url = j.value("base_url", "");
        e.auth_env = j.value("auth_env", "");
        e.model = j.value("model", "");
        e.chat_path = j.value("chat_path", e.chat_path);
        e.image_path = j.value("image_path", e.image_path);
        e.timeout_s = j.value("timeout_s", e.timeout_s);
        e.max_retries = j.value("max_retries", e.max_retries);
        e.backoff_initial_ms = j.value("backoff_initial_ms", e.backoff_initial_ms);
        e.backoff_multiplier = j.value("backoff_multiplier", e.backoff_multiplier);
        e.requests_per_minute = j.value("requests_per_minute", e.requests_per_minute);
        e.validate();
        return e;
    }

    static HarnessConfig from_json(const nlohmann::json& j) {
        HarnessConfig c;
        c.seed = j.value("seed", std::uint64_t{0});
        c.workers = j.value("workers", 1);
        c.backend = backend_mode_from_string(j.value("backend", "sim"));

        if (j.contains("budget")) {
            const auto& b = j["budget"];
            c.budget = validate_budget(b.value("total", 16ll), b.value("rounds", 8),
                                       b.value("streams", 2));
        }
        if (j.contains("actions")) {
            const auto& a = j["actions"];
            if (a.contains("allowed")) c.allowed_actions = parse_actions(a["allowed"]);
            if (a.contains("fallback")) {
                auto f = action_from_token(a["fallback"].get<std::string>());
                if (!f) throw ConfigError("unknown fallback action");
                c.fallback_action = *f;
            }
            c.stop_on_perfect_score = a.value("stop_on_perfect_score", true);
            c.continue_from_global_best = a.value("continue_from_global_best", false);
        }
        if (j.contains("backends"))
            for (const auto& [role, block] : j["backends"].items())
                c.endpoints[role] = parse_endpoint(block);
        if (j.contains("sim")) {
            const auto& s = j["sim"];
            c.sim.k = s.value("k", c.sim.k);
            c.sim.p0 = s.value("p0", c.sim.p0);
            c.sim.c = s.value("c", c.sim.c);
            c.sim.alpha = s.value("alpha", c.sim.alpha);
            c.sim.q = s.value("q", c.sim.q);
            c.sim.r = s.value("r", c.sim.r);
            c.sim.fn = s.value("fn", c.sim.fn);
            c.sim.fp = s.value("fp", c.sim.fp);
            c.sim.restart_threshold = s.value("restart_threshold", c.sim.restart_threshold);
            c.sim.seed = s.value("seed", c.seed);
            c.sim.validate();
        } else {
            c.sim.seed = c.seed;
        }
        if (j.contains("sweep")) {
            const auto& s = j["sweep"];
            if (s.contains("budgets")) c.sweep.budgets = s["budgets"].get<std::vector<long long>>();
            c.sweep.mode = s.value("mode", c.sweep.mode);
            c.sweep.trials = s.value("trials", c.sweep.trials);
            if (s.contains("masks")) c.sweep.masks = s["masks"].get<std::vector<std::string>>();
            if (s.contains("ks")) c.sweep.ks = s["ks"].get<std::vector<int>>();
        }
        if (j.contains("jenga")) {
            const auto& g = j["jenga"];
            c.jenga.scenes = g.value("scenes", c.jenga.scenes);
            c.jenga.objects_min = g.value("objects_min", c.jenga.objects_min);
            c.jenga.objects_max = g.value("objects_max", c.jenga.objects_max);
            c.jenga.edge_prob = g.value("edge_prob", c.jenga.edge_prob);
            c.jenga.per_step_budget = g.value("per_step_budget", c.jenga.per_step_budget);
            c.jenga.max_steps = g.value("max_steps", c.jenga.max_steps);
            if (g.contains("flaws")) {
                const auto& f = g["flaws"];
                c.jenga.flaws.shadow_residual = f.value("shadow_residual", 0.2);
                c.jenga.flaws.wrong_object = f.value("wrong_object", 0.05);
                c.jenga.flaws.background_drift = f.value("background_drift", 0.05);
                c.jenga.flaws.correlation = f.value("correlation", 0.7);
            }
        }
        if (j.contains("paths")) {
            const auto& p = j["paths"];
            c.tasks_path = p.value("tasks", "");
            c.out_path = p.value("out", c.out_path);
            c.prompts_path = p.value("prompts", "");
            c.transcript_path = p.value("transcript", "");
        }
        return c;
    }

    static HarnessConfig from_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read config file: " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
        }
        return from_json(j);
    }

    // Snapshot for journals; excludes nothing secret (tokens live in env).
    nlohmann::json to_json() const {
        nlohmann::json actions = nlohmann::json::array();
        for (Action a : allowed_actions) actions.push_back(to_string(a));
        return nlohmann::json{
            {"seed", seed},
            {"workers", workers},
            {"backend", to_string(backend)},
            {"budget",
             {{"total", budget.total_units}, {"rounds", budget.rounds}, {"streams", budget.streams}}},
            {"actions",
             {{"allowed", actions},
              {"fallback", to_string(fallback_action)},
              {"stop_on_perfect_score", stop_on_perfect_score},
              {"continue_from_global_best", continue_from_global_best}}},
            {"sim",
             {{"k", sim.k},
              {"p0", sim.p0},
              {"c", sim.c},
              {"alpha", sim.alpha},
              {"q", sim.q},
              {"r", sim.r},
              {"fn", sim.fn},
              {"fp", sim.fp},
              {"restart_threshold", sim.restart_threshold},
              {"seed", sim.seed}}}};
    }
};

// ---------------------------------------------------------------------------
// Task ingestion: JSONL with {id, prompt, questions[], category}
// ---------------------------------------------------------------------------

struct TaskLoadResult {
    std::vector<TaskPrompt> tasks;
    int malformed = 0;
    int total = 0;
};

inline TaskLoadResult load_tasks_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read task file: " + path.string());
    TaskLoadResult result;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++result.total;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            TaskPrompt task;
            task.id = j.at("id").get<std::string>();
            task.text = j.at("prompt").get<std::string>();
            if (j.contains("questions"))
                task.questions = j["questions"].get<std::vector<std::string>>();
            task.category = j.value("category", "");
            task.continuous_rubric = j.value("continuous_rubric", "");
            task.validate();
            result.tasks.push_back(std::move(task));
        } catch (const std::exception& e) {
            ++result.malformed;
            std::fprintf(stderr, "warning: skipping malformed task line %d: %s\n", line_no,
                         e.what());
        }
    }
    return result;
}

}  // namespace refinery
