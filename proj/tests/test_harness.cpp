#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "refinery/harness.hpp"

using namespace refinery;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_tasks(const fs::path& file, int count, int questions = 3) {
    std::ofstream out(file);
    for (int i = 0; i < count; ++i) {
        nlohmann::json q = nlohmann::json::array();
        for (int j = 0; j < questions; ++j)
            q.push_back("Is binding " + std::to_string(j) + " rendered correctly?");
        out << nlohmann::json{{"id", "task" + std::to_string(i)},
                              {"prompt", "synthetic prompt " + std::to_string(i)},
                              {"questions", q},
                              {"category", i % 2 ? "odd" : "even"}}
                   .dump()
            << "\n";
    }
}

HarnessConfig sim_config(const fs::path& dir, int tasks = 3) {
    write_tasks(dir / "tasks.jsonl", tasks);
    HarnessConfig cfg;
    cfg.seed = 2024;
    cfg.backend = BackendMode::Sim;
    cfg.budget = validate_budget(8, 4, 2);
    cfg.sim.k = 3;
    cfg.sim.seed = 2024;
    cfg.tasks_path = (dir / "tasks.jsonl").string();
    cfg.out_path = (dir / "out").string();
    return cfg;
}

}  // namespace

TEST_CASE("sign test sanity") {
    CHECK(sign_test_one_sided(0, 0) == 1.0);
    CHECK(sign_test_one_sided(8, 8) == Catch::Approx(1.0 / 256.0));
    CHECK(sign_test_one_sided(0, 5) == Catch::Approx(1.0));
    CHECK(sign_test_one_sided(5, 10) == Catch::Approx(0.623046875));
    CHECK(sign_test_one_sided(10, 10) == Catch::Approx(1.0 / 1024.0));
}

TEST_CASE("action masks") {
    CHECK(action_mask_for("full") == all_actions());
    CHECK(action_mask_for("no_backtrack") ==
          std::set<Action>{Action::Continue, Action::Restart, Action::Stop});
    CHECK(action_mask_for("no_fresh_start") ==
          std::set<Action>{Action::Continue, Action::Backtrack, Action::Stop});
    CHECK(action_mask_for("no_both") == std::set<Action>{Action::Continue, Action::Stop});
    CHECK_THROWS_AS(action_mask_for("no_everything"), ConfigError);
}

TEST_CASE("harness config parses the documented shape") {
    nlohmann::json j = nlohmann::json::parse(R"({
        "seed": 7, "workers": 2, "backend": "sim",
        "budget": {"total": 16, "rounds": 8, "streams": 2},
        "actions": {"allowed": ["CONTINUE", "STOP"], "fallback": "CONTINUE",
                    "stop_on_perfect_score": false},
        "sim": {"k": 6, "p0": 0.8, "r": 0.1},
        "sweep": {"budgets": [1, 2, 4], "mode": "mc", "trials": 100,
                  "masks": ["full", "no_both"]},
        "jenga": {"scenes": 10, "per_step_budget": 2},
        "paths": {"tasks": "t.jsonl", "out": "o", "transcript": "tr.jsonl"}
    })");
    HarnessConfig cfg = HarnessConfig::from_json(j);
    CHECK(cfg.seed == 7);
    CHECK(cfg.budget.rounds == 8);
    CHECK(cfg.allowed_actions == std::set<Action>{Action::Continue, Action::Stop});
    CHECK_FALSE(cfg.stop_on_perfect_score);
    CHECK(cfg.sim.k == 6);
    CHECK(cfg.sim.p0 == 0.8);
    CHECK(cfg.sweep.mode == "mc");
    CHECK(cfg.sweep.masks.size() == 2);
    CHECK(cfg.jenga.scenes == 10);
    CHECK(cfg.tasks_path == "t.jsonl");
    CHECK(cfg.transcript_path == "tr.jsonl");

    CHECK_THROWS_AS(HarnessConfig::from_json({{"backend", "quantum"}}), ConfigError);
    CHECK_THROWS_AS(
        HarnessConfig::from_json({{"budget", {{"total", 9}, {"rounds", 2}, {"streams", 2}}}}),
        ConfigError);
}

TEST_CASE("task loading skips malformed lines with a count") {
    fs::path dir = fresh_dir("refinery_tasks_test");
    {
        std::ofstream out(dir / "tasks.jsonl");
        out << R"({"id": "a", "prompt": "p1", "questions": ["q?"]})" << "\n";
        out << "this is not json\n";
        out << R"({"id": "b", "prompt": ""})" << "\n";
        out << "\n";
        out << R"({"id": "c", "prompt": "p3"})" << "\n";
    }
    TaskLoadResult r = load_tasks_jsonl(dir / "tasks.jsonl");
    CHECK(r.total == 4);
    CHECK(r.malformed == 2);
    REQUIRE(r.tasks.size() == 2);
    CHECK(r.tasks[0].id == "a");
    CHECK(r.tasks[1].id == "c");
    fs::remove_all(dir);
}

TEST_CASE("cmd_run produces per-task run directories and an aggregate") {
    fs::path dir = fresh_dir("refinery_run_test");
    HarnessConfig cfg = sim_config(dir);
    std::ostringstream log;
    int rc = cmd_run(cfg, log);
    CHECK(rc == 0);

    for (int i = 0; i < 3; ++i) {
        fs::path run_dir = fs::path(cfg.out_path) / ("task" + std::to_string(i));
        CHECK(fs::exists(run_dir / "journal.jsonl"));
        CHECK(fs::exists(run_dir / "result.json"));
        CHECK(RunJournal::file_is_finalized(run_dir / "journal.jsonl"));
    }
    CHECK(fs::exists(fs::path(cfg.out_path) / "aggregate.csv"));
    std::string csv = slurp(fs::path(cfg.out_path) / "aggregate.csv");
    CHECK(csv.find("task_id,category") == 0);
    CHECK(csv.find("task0") != std::string::npos);
    CHECK(log.str().find("full solve rate") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("sim runs are byte-identical across reruns") {
    fs::path dir = fresh_dir("refinery_determinism_test");
    HarnessConfig cfg = sim_config(dir);

    cfg.out_path = (dir / "out1").string();
    std::ostringstream log1;
    REQUIRE(cmd_run(cfg, log1) == 0);
    cfg.out_path = (dir / "out2").string();
    std::ostringstream log2;
    REQUIRE(cmd_run(cfg, log2) == 0);

    CHECK(slurp(dir / "out1" / "aggregate.csv") == slurp(dir / "out2" / "aggregate.csv"));
    for (int i = 0; i < 3; ++i) {
        fs::path rel = fs::path("task" + std::to_string(i)) / "result.json";
        CHECK(slurp(dir / "out1" / rel) == slurp(dir / "out2" / rel));
    }
    fs::remove_all(dir);
}

TEST_CASE("resume skips tasks with finalized journals") {
    fs::path dir = fresh_dir("refinery_resume_test");
    HarnessConfig cfg = sim_config(dir);
    std::ostringstream log;
    REQUIRE(cmd_run(cfg, log) == 0);
    std::string first = slurp(fs::path(cfg.out_path) / "aggregate.csv");

    // Remove one task's outputs to simulate a partial run.
    fs::remove_all(fs::path(cfg.out_path) / "task1");
    std::vector<fs::path> before, after;

    cfg.resume = true;
    auto t0 = fs::last_write_time(fs::path(cfg.out_path) / "task0" / "result.json");
    std::ostringstream log2;
    REQUIRE(cmd_run(cfg, log2) == 0);
    CHECK(slurp(fs::path(cfg.out_path) / "aggregate.csv") == first);
    // task0 was not re-run
    CHECK(fs::last_write_time(fs::path(cfg.out_path) / "task0" / "result.json") == t0);
    CHECK(fs::exists(fs::path(cfg.out_path) / "task1" / "result.json"));
    fs::remove_all(dir);
}

TEST_CASE("malformed-heavy task files run but exit nonzero") {
    fs::path dir = fresh_dir("refinery_malformed_test");
    {
        std::ofstream out(dir / "tasks.jsonl");
        out << R"({"id": "good", "prompt": "p", "questions": ["q?"]})" << "\n";
        out << "garbage line\n";
    }
    HarnessConfig cfg;
    cfg.backend = BackendMode::Sim;
    cfg.budget = validate_budget(2, 2, 1);
    cfg.sim.k = 1;
    cfg.tasks_path = (dir / "tasks.jsonl").string();
    cfg.out_path = (dir / "out").string();
    std::ostringstream log;
    CHECK(cmd_run(cfg, log) == 1);  // 50% malformed > 10%
    CHECK(fs::exists(fs::path(cfg.out_path) / "good" / "result.json"));
    fs::remove_all(dir);
}

TEST_CASE("sim backend makes no network connections") {
    fs::path dir = fresh_dir("refinery_offline_test");
    HarnessConfig cfg = sim_config(dir, 2);
    // Endpoints point at a dead port; sim mode must never touch them.
    EndpointConfig dead;
    dead.base_url = "http://127.0.0.1:9";
    dead.model = "nope";
    cfg.endpoints["generator"] = dead;
    cfg.endpoints["editor"] = dead;
    cfg.endpoints["loop_verifier"] = dead;
    cfg.endpoints["critic"] = dead;
    std::ostringstream log;
    CHECK(cmd_run(cfg, log) == 0);
    fs::remove_all(dir);
}

TEST_CASE("oracle sweep emits all 15 divisor allocations in order") {
    fs::path dir = fresh_dir("refinery_sweep_test");
    HarnessConfig cfg;
    cfg.seed = 5;
    cfg.sim.k = 5;
    cfg.sim.seed = 5;
    cfg.out_path = (dir / "out").string();
    cfg.sweep.budgets = {16, 1, 4, 2, 8};  // intentionally unsorted
    cfg.sweep.mode = "oracle";
    cfg.sweep.masks = {"full"};

    std::ostringstream log;
    REQUIRE(cmd_sweep(cfg, log) == 0);
    auto rows = sweep_rows(cfg, "full");
    REQUIRE(rows.size() == 15);
    // Sorted by B then I ascending; budget conservation within each row.
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].budget >= rows[i - 1].budget);
        if (rows[i].budget == rows[i - 1].budget)
            CHECK(rows[i].iterative > rows[i - 1].iterative);
    }
    for (const auto& r : rows) CHECK(r.iterative * r.parallel == r.budget);

    std::string csv = slurp(dir / "out" / "sweep_full.csv");
    CHECK(csv.find("I,P,B,solve_rate,mean_score") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 16);  // header + 15 rows
    fs::remove_all(dir);
}

TEST_CASE("sweep writes one CSV per action mask") {
    fs::path dir = fresh_dir("refinery_sweep_masks_test");
    HarnessConfig cfg;
    cfg.sim.k = 4;
    cfg.out_path = (dir / "out").string();
    cfg.sweep.budgets = {4};
    cfg.sweep.mode = "oracle";
    cfg.sweep.masks = {"full", "no_backtrack", "no_fresh_start", "no_both"};
    std::ostringstream log;
    REQUIRE(cmd_sweep(cfg, log) == 0);
    for (const char* mask : {"full", "no_backtrack", "no_fresh_start", "no_both"})
        CHECK(fs::exists(dir / "out" / (std::string("sweep_") + mask + ".csv")));
    fs::remove_all(dir);
}

TEST_CASE("mc sweep agrees with the oracle direction") {
    HarnessConfig cfg;
    cfg.seed = 99;
    cfg.sim.k = 4;
    cfg.sim.seed = 99;
    cfg.sweep.budgets = {8};
    cfg.sweep.mode = "mc";
    cfg.sweep.trials = 400;
    auto rows = sweep_rows(cfg, "full");
    REQUIRE(rows.size() == 4);  // T in {1,2,4,8}
    CHECK(rows.front().iterative == 1);
    CHECK(rows.back().iterative == 8);
    CHECK(rows.back().solve_rate > rows.front().solve_rate);
    CHECK(rows.back().mean_score >= rows.front().mean_score);
}

TEST_CASE("oracle command writes the k/T/M/B/policy table") {
    fs::path dir = fresh_dir("refinery_oracle_cmd_test");
    HarnessConfig cfg;
    cfg.out_path = (dir / "out").string();
    cfg.sweep.budgets = {4};
    cfg.sweep.ks = {3, 5};
    cfg.sweep.masks = {"full", "no_both"};
    std::ostringstream log;
    REQUIRE(cmd_oracle(cfg, log) == 0);
    std::string csv = slurp(dir / "out" / "oracle.csv");
    CHECK(csv.find("k,T,M,B,policy,solve_rate") == 0);
    // 2 ks x 2 masks x 3 divisor rows for B=4
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 2 * 3);
    fs::remove_all(dir);
}

TEST_CASE("compare reports zero deltas for identical runs and absent categories") {
    fs::path dir = fresh_dir("refinery_compare_test");
    fs::create_directories(dir / "a");
    fs::create_directories(dir / "b");
    auto write_aggregate = [&](const fs::path& p, bool with_extra_category) {
        std::ofstream out(p);
        out << "task_id,category,questions,score,score_num,score_den,solved,units\n";
        out << "t1,even,3,1.000000,3,3,1,8\n";
        out << "t2,odd,3,0.666667,2,3,0,8\n";
        if (with_extra_category) out << "t3,rare,5,0.400000,2,5,0,8\n";
    };
    write_aggregate(dir / "a" / "aggregate.csv", false);
    write_aggregate(dir / "b" / "aggregate.csv", true);

    std::ostringstream log;
    REQUIRE(cmd_compare(dir / "a", dir / "b", dir / "compare.csv", log) == 0);
    std::string csv = slurp(dir / "compare.csv");
    CHECK(csv.find("category,even,1,1.000000,1.000000,0.000000") != std::string::npos);
    CHECK(csv.find("category,odd,1,0.666667,0.666667,0.000000") != std::string::npos);
    // Category absent from run A: empty mean_a and delta cells.
    CHECK(csv.find("category,rare,0,,0.400000,,") != std::string::npos);
    CHECK(log.str().find("absent from run A") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("jenga benchmark reports both policies with a paired sign test") {
    fs::path dir = fresh_dir("refinery_jenga_cmd_test");
    HarnessConfig cfg;
    cfg.seed = 77;
    cfg.out_path = (dir / "out").string();
    cfg.jenga.scenes = 40;
    cfg.jenga.per_step_budget = 4;

    std::ostringstream log;
    REQUIRE(cmd_jenga(cfg, log) == 0);
    std::string csv = slurp(dir / "out" / "jenga.csv");
    CHECK(csv.find("policy,scenes,solved,solve_rate") == 0);
    CHECK(csv.find("iterative,40,") != std::string::npos);
    CHECK(csv.find("parallel,40,") != std::string::npos);

    JengaStats stats = run_jenga_benchmark(cfg);
    CHECK(stats.solved_iterative > stats.solved_parallel);

    HarnessConfig empty = cfg;
    empty.jenga.scenes = 0;
    CHECK_THROWS_AS(run_jenga_benchmark(empty), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("jenga reports are deterministic for a fixed seed") {
    HarnessConfig cfg;
    cfg.seed = 31337;
    cfg.jenga.scenes = 25;
    JengaStats a = run_jenga_benchmark(cfg);
    JengaStats b = run_jenga_benchmark(cfg);
    CHECK(a.solved_iterative == b.solved_iterative);
    CHECK(a.solved_parallel == b.solved_parallel);
    CHECK(a.p_value == b.p_value);
}
