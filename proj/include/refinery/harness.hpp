#pragma once
// Benchmark harness behind the CLI: task runs with journals and aggregate
// reports, (I,P) budget sweeps against the oracle or engine Monte Carlo,
// run-to-run comparison with sign tests, and the paired scene-decomposition
// benchmark. Reports never embed timestamps, so sim/replay outputs are
// byte-identical across reruns with the same seed.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>
#include <vector>

#include "refinery/config.hpp"
#include "refinery/decomposition.hpp"
#include "refinery/engine.hpp"
#include "refinery/http_backend.hpp"
#include "refinery/oracle.hpp"
#include "refinery/recording.hpp"
#include "refinery/scoring.hpp"

namespace refinery {

namespace harness_detail {

inline std::string fmt6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    return out + "\"";
}

}  // namespace harness_detail

// One-sided exact sign test: probability of at least `wins` successes out of
// `discordant` fair coin flips.
inline double sign_test_one_sided(int wins, int discordant) {
    if (discordant <= 0) return 1.0;
    double p = 0.0;
    for (int i = wins; i <= discordant; ++i) {
        const double log_term = std::lgamma(discordant + 1.0) - std::lgamma(i + 1.0) -
                                std::lgamma(discordant - i + 1.0) -
                                discordant * std::log(2.0);
        p += std::exp(log_term);
    }
    return std::min(p, 1.0);
}

inline std::set<Action> action_mask_for(const std::string& name) {
    if (name == "full") return all_actions();
    if (name == "no_backtrack") return {Action::Continue, Action::Restart, Action::Stop};
    if (name == "no_fresh_start") return {Action::Continue, Action::Backtrack, Action::Stop};
    if (name == "no_both") return {Action::Continue, Action::Stop};
    throw ConfigError("unknown action mask '" + name +
                      "' (expected full|no_backtrack|no_fresh_start|no_both)");
}

// ---------------------------------------------------------------------------
// Backend construction per configured mode. Sim and replay modes never touch
// the network by construction.
// ---------------------------------------------------------------------------

struct HarnessBackends {
    BackendSet set;
    std::shared_ptr<VerifierIface> final_evaluator;
    std::shared_ptr<TranscriptWriter> transcript;  // alive for the run when recording
};

inline HarnessBackends build_backends(const HarnessConfig& cfg) {
    const PromptLibrary lib = cfg.prompts_path.empty()
                                  ? PromptLibrary::defaults()
                                  : PromptLibrary::load_dir(cfg.prompts_path);
    HarnessBackends out;
    switch (cfg.backend) {
        case BackendMode::Sim: {
            out.set = make_sim_backends(cfg.sim);
            SimParams exact = cfg.sim;  // the final evaluator judges without noise
            exact.fn = 0.0;
            exact.fp = 0.0;
            out.final_evaluator = std::make_shared<SimVerifier>(exact);
            break;
        }
        case BackendMode::Http: {
            auto limiter_for = [](const EndpointConfig& e) {
                return e.requests_per_minute > 0
                           ? std::make_shared<RateLimiter>(e.requests_per_minute)
                           : nullptr;
            };
            const auto& gen = cfg.endpoint("generator");
            const auto& edit = cfg.endpoint("editor");
            const auto& loop = cfg.endpoint("loop_verifier");
            const auto& critic = cfg.endpoint("critic");
            out.set.generator = std::make_shared<HttpGenerator>(gen, limiter_for(gen));
            out.set.editor = std::make_shared<HttpEditor>(edit, limiter_for(edit));
            out.set.verifier =
                std::make_shared<ChatVerifier>(make_chat_fn(loop, limiter_for(loop)), lib);
            out.set.critic =
                std::make_shared<ChatCritic>(make_chat_fn(critic, limiter_for(critic)), lib);
            if (cfg.endpoints.count("final_evaluator")) {
                const auto& fin = cfg.endpoint("final_evaluator");
                out.final_evaluator =
                    std::make_shared<ChatVerifier>(make_chat_fn(fin, limiter_for(fin)), lib);
            } else {
                out.final_evaluator = out.set.verifier;
            }
            if (!cfg.transcript_path.empty()) {
                out.transcript = std::make_shared<TranscriptWriter>(cfg.transcript_path);
                out.set = make_recording_backends(out.set, out.transcript);
                out.final_evaluator =
                    std::make_shared<RecordingVerifier>(out.final_evaluator, out.transcript);
            }
            break;
        }
        case BackendMode::Replay: {
            if (cfg.transcript_path.empty())
                throw ConfigError("backend mode 'replay' requires paths.transcript");
            auto store = TranscriptStore::load(cfg.transcript_path);
            out.set = make_replay_backends(store);
            out.final_evaluator = std::make_shared<ReplayVerifier>(store);
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Engine Monte Carlo over the synthetic environment
// ---------------------------------------------------------------------------

struct McStats {
    double solve_rate = 0.0;
    double mean_best_score = 0.0;
    int trials = 0;
};

inline McStats mc_solve_rate(const SimParams& params, const Budget& budget,
                             const std::set<Action>& allowed, int trials, std::uint64_t seed,
                             Action fallback = Action::Continue) {
    McStats stats;
    stats.trials = trials;
    long long solved = 0;
    double score_sum = 0.0;
    for (int t = 0; t < trials; ++t) {
        SimParams trial_params = params;
        trial_params.seed = mix64(seed, static_cast<std::uint64_t>(t), 0xabcdull);
        BackendSet backends = make_sim_backends(trial_params);

        EngineConfig cfg;
        cfg.budget = budget;
        cfg.allowed_actions = allowed;
        cfg.disallowed_action_fallback = fallback;
        cfg.seed = mix64(seed, static_cast<std::uint64_t>(t), 0x1234ull);
        cfg.workers = 1;
        RunJournal journal("mc");
        auto result = run_refinement(make_sim_task(trial_params), cfg, backends, journal);
        if (result.best.report->score.perfect()) ++solved;
        score_sum += result.best.report->score.value();
    }
    stats.solve_rate = static_cast<double>(solved) / trials;
    stats.mean_best_score = score_sum / trials;
    return stats;
}

// ---------------------------------------------------------------------------
// cmd_run: execute the task set, one run directory per task + aggregate CSV
// ---------------------------------------------------------------------------

struct TaskRunRow {
    std::string task_id;
    std::string category;
    int questions = 0;
    Score score{0, 1};
    bool solved = false;
    long long units = 0;
    bool failed = false;
    bool skipped = false;
};

namespace harness_detail {

inline nlohmann::ordered_json score_json(const Score& s) {
    return nlohmann::ordered_json{{"num", s.num}, {"den", s.den}, {"value", s.value()}};
}

inline void write_result_json(const std::filesystem::path& run_dir, const TaskPrompt& task,
                              const RefinementResult& result, const VerifierReport& final_report,
                              long long units) {
    nlohmann::ordered_json j;
    j["task_id"] = task.id;
    j["category"] = task.category;
    j["selection"] = {{"stream", result.best_stream}, {"candidate", result.best_index}};
    j["loop_score"] = score_json(result.best.report->score);
    j["final_score"] = score_json(final_report.score);
    j["solved"] = final_report.score.perfect();
    j["units"] = units;
    j["degraded_final_report"] = final_report.degraded;
    nlohmann::ordered_json per_round = nlohmann::ordered_json::array();
    for (const auto& s : result.per_round_best_scores) per_round.push_back(score_json(s));
    j["per_round_best_scores"] = per_round;
    std::ofstream out(run_dir / "result.json");
    out << j.dump(2) << '\n';
    if (!out) throw StorageError("cannot write result.json under " + run_dir.string());
}

inline TaskRunRow row_from_result_json(const std::filesystem::path& file,
                                       const TaskPrompt& task) {
    std::ifstream in(file);
    nlohmann::json j;
    in >> j;
    TaskRunRow row;
    row.task_id = task.id;
    row.category = task.category;
    row.questions = static_cast<int>(task.questions.size());
    row.score = Score{j["final_score"].value("num", 0ll), j["final_score"].value("den", 1ll)};
    row.solved = j.value("solved", false);
    row.units = j.value("units", 0ll);
    row.skipped = true;
    return row;
}

inline void write_aggregate_csv(const std::filesystem::path& out_dir,
                                std::vector<TaskRunRow> rows) {
    std::sort(rows.begin(), rows.end(),
              [](const TaskRunRow& a, const TaskRunRow& b) { return a.task_id < b.task_id; });
    std::ofstream out(out_dir / "aggregate.csv");
    out << "task_id,category,questions,score,score_num,score_den,solved,units\n";
    for (const auto& r : rows) {
        out << csv_field(r.task_id) << ',' << csv_field(r.category) << ',' << r.questions << ','
            << fmt6(r.score.value()) << ',' << r.score.num << ',' << r.score.den << ','
            << (r.solved ? 1 : 0) << ',' << r.units << '\n';
    }
    if (!out) throw StorageError("cannot write aggregate.csv under " + out_dir.string());
}

}  // namespace harness_detail

inline int cmd_run(const HarnessConfig& cfg, std::ostream& log = std::cout) {
    if (cfg.tasks_path.empty()) throw ConfigError("run requires paths.tasks");
    TaskLoadResult loaded = load_tasks_jsonl(cfg.tasks_path);
    if (loaded.tasks.empty()) throw ConfigError("task file has no usable tasks");

    const std::filesystem::path out_dir(cfg.out_path);
    std::filesystem::create_directories(out_dir);
    HarnessBackends backends = build_backends(cfg);
    const EngineConfig base_engine_cfg = cfg.engine_config();

    std::vector<TaskRunRow> rows(loaded.tasks.size());
    std::atomic<int> failures{0};
    std::atomic<std::size_t> next{0};

    auto run_one = [&](std::size_t index) {
        const TaskPrompt& task = loaded.tasks[index];
        const std::filesystem::path run_dir = out_dir / task.id;
        TaskRunRow row;
        row.task_id = task.id;
        row.category = task.category;
        row.questions = static_cast<int>(task.questions.size());

        if (cfg.resume && RunJournal::file_is_finalized(run_dir / "journal.jsonl") &&
            std::filesystem::exists(run_dir / "result.json")) {
            rows[index] = harness_detail::row_from_result_json(run_dir / "result.json", task);
            return;
        }

        try {
            std::filesystem::create_directories(run_dir);
            RunJournal journal(task.id);
            journal.set_config_snapshot(cfg.to_json());
            journal.open_sink(run_dir);

            EngineConfig engine_cfg = base_engine_cfg;
            engine_cfg.run_dir = run_dir;
            engine_cfg.workers = cfg.workers > 1 ? 1 : 0;
            auto result = run_refinement(task, engine_cfg, backends.set, journal);

            VerifierReport final_report;
            try {
                final_report = backends.final_evaluator->verify(result.best.image, task);
            } catch (const Error&) {
                final_report = *result.best.report;  // fall back to the in-loop score
                final_report.degraded = true;
            }

            long long units = 0;
            for (const auto& s : result.streams) units += s.units_consumed;
            harness_detail::write_result_json(run_dir, task, result, final_report, units);

            row.score = final_report.score;
            row.solved = final_report.score.perfect();
            row.units = units;
        } catch (const Error& e) {
            row.failed = true;
            failures.fetch_add(1);
            std::fprintf(stderr, "task %s failed: %s\n", task.id.c_str(), e.what());
        }
        rows[index] = row;
    };

    const int pool = std::max(1, cfg.workers);
    if (pool == 1 || loaded.tasks.size() == 1) {
        for (std::size_t i = 0; i < loaded.tasks.size(); ++i) run_one(i);
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < std::min<int>(pool, static_cast<int>(loaded.tasks.size())); ++t)
            threads.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < loaded.tasks.size();
                     i = next.fetch_add(1))
                    run_one(i);
            });
        for (auto& th : threads) th.join();
    }

    harness_detail::write_aggregate_csv(out_dir, rows);

    std::vector<VerifierReport> final_reports;
    std::vector<std::pair<std::string, double>> by_category;
    for (const auto& r : rows) {
        if (r.failed) continue;
        VerifierReport rep;
        rep.score = r.score;
        final_reports.push_back(rep);
        if (!r.category.empty()) by_category.emplace_back(r.category, r.score.value());
    }
    log << "tasks: " << rows.size() << "  failed: " << failures.load() << "\n";
    if (!final_reports.empty()) {
        Score rate = full_solve_rate(final_reports);
        log << "full solve rate: " << rate.num << "/" << rate.den << " = "
            << harness_detail::fmt6(rate.value()) << "\n";
        for (const auto& c : category_means(by_category))
            log << "  " << c.category << ": mean " << harness_detail::fmt6(c.mean) << " (n="
                << c.count << ")\n";
    }

    const bool too_many_malformed = loaded.total > 0 && loaded.malformed * 10 > loaded.total;
    if (too_many_malformed)
        std::fprintf(stderr, "error: %d of %d task lines were malformed (>10%%)\n",
                     loaded.malformed, loaded.total);
    return (failures.load() > 0 || too_many_malformed) ? 1 : 0;
}

// ---------------------------------------------------------------------------
// cmd_sweep: (I,P) allocation table per action mask
// ---------------------------------------------------------------------------

struct SweepRow {
    int iterative = 0;  // I = rounds
    int parallel = 0;   // P = streams
    long long budget = 0;
    double solve_rate = 0.0;
    double mean_score = -1.0;  // <0 renders as an empty cell (oracle mode)
};

inline std::vector<SweepRow> sweep_rows(const HarnessConfig& cfg, const std::string& mask_name) {
    const std::set<Action> mask = action_mask_for(mask_name);
    std::vector<long long> budgets = cfg.sweep.budgets;
    std::sort(budgets.begin(), budgets.end());

    std::vector<SweepRow> rows;
    for (long long budget : budgets) {
        for (int rounds = 1; rounds <= budget; ++rounds) {
            if (budget % rounds) continue;
            const int streams = static_cast<int>(budget / rounds);
            SweepRow row;
            row.iterative = rounds;
            row.parallel = streams;
            row.budget = budget;
            if (cfg.sweep.mode == "oracle") {
                OraclePolicy policy;
                policy.allowed_actions = mask;
                policy.disallowed_action_fallback = cfg.fallback_action;
                row.solve_rate =
                    oracle_solve_rate(cfg.sim, Budget{budget, rounds, streams}, policy);
            } else if (cfg.sweep.mode == "mc") {
                McStats stats = mc_solve_rate(cfg.sim, Budget{budget, rounds, streams}, mask,
                                              cfg.sweep.trials, cfg.seed, cfg.fallback_action);
                row.solve_rate = stats.solve_rate;
                row.mean_score = stats.mean_best_score;
            } else {
                throw ConfigError("unknown sweep mode '" + cfg.sweep.mode +
                                  "' (expected oracle|mc)");
            }
            rows.push_back(row);
        }
    }
    return rows;
}

inline void write_sweep_csv(const std::filesystem::path& file, const std::vector<SweepRow>& rows) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file);
    out << "I,P,B,solve_rate,mean_score\n";
    for (const auto& r : rows) {
        out << r.iterative << ',' << r.parallel << ',' << r.budget << ','
            << harness_detail::fmt6(r.solve_rate) << ','
            << (r.mean_score < 0 ? std::string() : harness_detail::fmt6(r.mean_score)) << '\n';
    }
    if (!out) throw StorageError("cannot write sweep CSV: " + file.string());
}

inline int cmd_sweep(const HarnessConfig& cfg, std::ostream& log = std::cout) {
    const std::filesystem::path out_dir(cfg.out_path);
    std::filesystem::create_directories(out_dir);
    for (const std::string& mask : cfg.sweep.masks) {
        auto rows = sweep_rows(cfg, mask);
        write_sweep_csv(out_dir / ("sweep_" + mask + ".csv"), rows);
        log << "mask " << mask << " (k=" << cfg.sim.k << ", mode=" << cfg.sweep.mode << ")\n";
        log << "   I    P    B  solve_rate  mean_score\n";
        for (const auto& r : rows) {
            char line[128];
            std::snprintf(line, sizeof(line), "%4d %4d %4lld    %8.4f  %s", r.iterative,
                          r.parallel, static_cast<long long>(r.budget), r.solve_rate,
                          r.mean_score < 0 ? "-" : harness_detail::fmt6(r.mean_score).c_str());
            log << line << "\n";
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------
// cmd_oracle: exact solve rates as CSV (k, T, M, B, policy, solve_rate)
// ---------------------------------------------------------------------------

inline int cmd_oracle(const HarnessConfig& cfg, std::ostream& log = std::cout) {
    const std::filesystem::path out_dir(cfg.out_path);
    std::filesystem::create_directories(out_dir);
    std::vector<int> ks = cfg.sweep.ks.empty() ? std::vector<int>{cfg.sim.k} : cfg.sweep.ks;
    std::vector<long long> budgets = cfg.sweep.budgets;
    std::sort(budgets.begin(), budgets.end());

    std::ofstream out(out_dir / "oracle.csv");
    out << "k,T,M,B,policy,solve_rate\n";
    for (int k : ks) {
        SimParams params = cfg.sim;
        params.k = k;
        for (const std::string& mask : cfg.sweep.masks) {
            OraclePolicy policy;
            policy.allowed_actions = action_mask_for(mask);
            policy.disallowed_action_fallback = cfg.fallback_action;
            for (long long budget : budgets) {
                for (int rounds = 1; rounds <= budget; ++rounds) {
                    if (budget % rounds) continue;
                    const int streams = static_cast<int>(budget / rounds);
                    const double rate =
                        oracle_solve_rate(params, Budget{budget, rounds, streams}, policy);
                    out << k << ',' << rounds << ',' << streams << ',' << budget << ',' << mask
                        << ',' << harness_detail::fmt6(rate) << '\n';
                }
            }
        }
    }
    if (!out) throw StorageError("cannot write oracle.csv");
    log << "oracle table written to " << (out_dir / "oracle.csv").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// cmd_compare: per-category and per-k deltas between two run directories
// ---------------------------------------------------------------------------

struct AggregateRow {
    std::string task_id;
    std::string category;
    int questions = 0;
    double score = 0.0;
    bool solved = false;
};

inline std::vector<AggregateRow> load_aggregate_csv(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read aggregate CSV: " + file.string());
    std::vector<AggregateRow> rows;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string field;
        bool quoted = false;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || (line[i] == ',' && !quoted)) {
                fields.push_back(field);
                field.clear();
            } else if (line[i] == '"') {
                quoted = !quoted;
            } else {
                field.push_back(line[i]);
            }
        }
        if (fields.size() < 8) continue;
        AggregateRow row;
        row.task_id = fields[0];
        row.category = fields[1];
        row.questions = std::stoi(fields[2]);
        row.score = std::stod(fields[3]);
        row.solved = fields[6] == "1";
        rows.push_back(std::move(row));
    }
    return rows;
}

struct CompareCell {
    std::string label;
    int paired = 0;
    double mean_a = 0.0, mean_b = 0.0;
    bool has_a = false, has_b = false;
    double p_value = 1.0;
};

inline std::vector<CompareCell> compare_tables(const std::vector<AggregateRow>& a,
                                               const std::vector<AggregateRow>& b,
                                               bool by_question_count) {
    auto label_of = [&](const AggregateRow& r) {
        return by_question_count ? "k=" + std::to_string(r.questions) : r.category;
    };
    std::map<std::string, const AggregateRow*> index_b;
    for (const auto& r : b) index_b[r.task_id] = &r;

    struct Acc {
        double sum_a = 0, sum_b = 0;
        int n_a = 0, n_b = 0, paired = 0, wins_b = 0, discordant = 0;
    };
    std::map<std::string, Acc> acc;
    for (const auto& r : a) {
        Acc& slot = acc[label_of(r)];
        slot.sum_a += r.score;
        slot.n_a++;
        auto it = index_b.find(r.task_id);
        if (it != index_b.end()) {
            slot.paired++;
            if (it->second->score > r.score) {
                slot.wins_b++;
                slot.discordant++;
            } else if (it->second->score < r.score) {
                slot.discordant++;
            }
        }
    }
    for (const auto& r : b) {
        Acc& slot = acc[label_of(r)];
        slot.sum_b += r.score;
        slot.n_b++;
    }

    std::vector<CompareCell> cells;
    for (const auto& [label, slot] : acc) {
        CompareCell cell;
        cell.label = label;
        cell.paired = slot.paired;
        cell.has_a = slot.n_a > 0;
        cell.has_b = slot.n_b > 0;
        if (slot.n_a) cell.mean_a = slot.sum_a / slot.n_a;
        if (slot.n_b) cell.mean_b = slot.sum_b / slot.n_b;
        cell.p_value = sign_test_one_sided(slot.wins_b, slot.discordant);
        cells.push_back(cell);
    }
    return cells;
}

inline int cmd_compare(const std::filesystem::path& run_a, const std::filesystem::path& run_b,
                       const std::filesystem::path& out_path, std::ostream& log = std::cout) {
    auto a = load_aggregate_csv(run_a / "aggregate.csv");
    auto b = load_aggregate_csv(run_b / "aggregate.csv");

    std::ofstream out(out_path);
    out << "table,label,n_pairs,mean_a,mean_b,delta,p_sign_b_gt_a\n";
    auto emit = [&](const char* table, const std::vector<CompareCell>& cells) {
        log << table << ":\n";
        for (const auto& c : cells) {
            const bool both = c.has_a && c.has_b;
            out << table << ',' << harness_detail::csv_field(c.label) << ',' << c.paired << ','
                << (c.has_a ? harness_detail::fmt6(c.mean_a) : std::string()) << ','
                << (c.has_b ? harness_detail::fmt6(c.mean_b) : std::string()) << ','
                << (both ? harness_detail::fmt6(c.mean_b - c.mean_a) : std::string()) << ','
                << (both ? harness_detail::fmt6(c.p_value) : std::string()) << '\n';
            log << "  " << c.label << ": ";
            if (both)
                log << "mean " << harness_detail::fmt6(c.mean_a) << " -> "
                    << harness_detail::fmt6(c.mean_b) << "  delta "
                    << harness_detail::fmt6(c.mean_b - c.mean_a) << "  p="
                    << harness_detail::fmt6(c.p_value) << " (n=" << c.paired << ")";
            else
                log << "absent from run " << (c.has_a ? "B" : "A");
            log << "\n";
        }
    };
    emit("category", compare_tables(a, b, false));
    emit("k", compare_tables(a, b, true));

    // Overall paired delta across every common task.
    std::map<std::string, double> scores_b;
    for (const auto& r : b) scores_b[r.task_id] = r.score;
    int wins_b = 0, discordant = 0, paired = 0;
    double delta_sum = 0.0;
    for (const auto& r : a) {
        auto it = scores_b.find(r.task_id);
        if (it == scores_b.end()) continue;
        paired++;
        delta_sum += it->second - r.score;
        if (it->second > r.score) {
            wins_b++;
            discordant++;
        } else if (it->second < r.score) {
            discordant++;
        }
    }
    const double p = sign_test_one_sided(wins_b, discordant);
    out << "overall,all," << paired << ",,,"
        << (paired ? harness_detail::fmt6(delta_sum / paired) : std::string()) << ','
        << harness_detail::fmt6(p) << '\n';
    if (!out) throw StorageError("cannot write compare CSV: " + out_path.string());
    log << "overall: paired " << paired << "  mean delta "
        << (paired ? harness_detail::fmt6(delta_sum / paired) : "-") << "  p="
        << harness_detail::fmt6(p) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// cmd_jenga: paired iterative vs parallel decomposition over random scenes
// ---------------------------------------------------------------------------

struct JengaStats {
    int scenes = 0;
    int solved_iterative = 0;
    int solved_parallel = 0;
    int wins_iterative = 0;  // discordant pairs won by the iterative policy
    int discordant = 0;
    double p_value = 1.0;
};

inline JengaStats run_jenga_benchmark(const HarnessConfig& cfg) {
    if (cfg.jenga.scenes <= 0) throw ConfigError("jenga requires a nonempty scene set");
    DecompositionBackends backends = make_sim_decomposition_backends();
    JengaStats stats;
    stats.scenes = cfg.jenga.scenes;
    const int max_steps =
        cfg.jenga.max_steps > 0 ? cfg.jenga.max_steps : cfg.jenga.objects_max + 2;

    for (int i = 0; i < cfg.jenga.scenes; ++i) {
        const std::uint64_t scene_seed = mix64(cfg.seed, static_cast<std::uint64_t>(i), 0x5ce9e);
        SimScene scene = random_scene(scene_seed, cfg.jenga.objects_min, cfg.jenga.objects_max,
                                      cfg.jenga.edge_prob, cfg.jenga.flaws);
        DecompositionTask task;
        task.initial_scene = scene.to_ref();
        task.max_steps = max_steps;
        task.per_step_budget = cfg.jenga.per_step_budget;

        const bool iter = run_decomposition(task, backends, scene_seed).solved;
        const bool par = parallel_removal_baseline(task, backends, scene_seed).solved;
        if (iter) stats.solved_iterative++;
        if (par) stats.solved_parallel++;
        if (iter != par) {
            stats.discordant++;
            if (iter) stats.wins_iterative++;
        }
    }
    stats.p_value = sign_test_one_sided(stats.wins_iterative, stats.discordant);
    return stats;
}

inline int cmd_jenga(const HarnessConfig& cfg, std::ostream& log = std::cout) {
    JengaStats stats = run_jenga_benchmark(cfg);
    const std::filesystem::path out_dir(cfg.out_path);
    std::filesystem::create_directories(out_dir);
    std::ofstream out(out_dir / "jenga.csv");
    out << "policy,scenes,solved,solve_rate\n";
    out << "iterative," << stats.scenes << ',' << stats.solved_iterative << ','
        << harness_detail::fmt6(static_cast<double>(stats.solved_iterative) / stats.scenes)
        << '\n';
    out << "parallel," << stats.scenes << ',' << stats.solved_parallel << ','
        << harness_detail::fmt6(static_cast<double>(stats.solved_parallel) / stats.scenes)
        << '\n';
    if (!out) throw StorageError("cannot write jenga.csv");

    log << "scenes: " << stats.scenes << "\n";
    log << "iterative full solve rate: "
        << harness_detail::fmt6(static_cast<double>(stats.solved_iterative) / stats.scenes)
        << "\n";
    log << "parallel-" << cfg.jenga.per_step_budget << " full solve rate: "
        << harness_detail::fmt6(static_cast<double>(stats.solved_parallel) / stats.scenes)
        << "\n";
    log << "paired sign test (iterative > parallel): p="
        << harness_detail::fmt6(stats.p_value) << " (wins " << stats.wins_iterative << "/"
        << stats.discordant << " discordant)\n";
    return 0;
}

}  // namespace refinery
