// Command-line harness: budget-constrained critic-guided image refinement
// over parallel streams, with sim / http / replay backends.
//
//   refinery run     --config cfg.json [--seed N] [--out DIR] [--resume] [--backend MODE]
//   refinery sweep   --config cfg.json            (I,P) allocation table per action mask
//   refinery compare --run-a DIR --run-b DIR      per-category/per-k deltas, sign-tested
//   refinery jenga   --config cfg.json            paired scene-decomposition benchmark
//   refinery oracle  --config cfg.json            exact DP solve rates as CSV
//
// Exit codes: 0 ok, 1 run failure, 2 configuration error.

#include <CLI11.hpp>

#include <iostream>

#include "refinery/harness.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string backend;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool resume = false;
};

refinery::HarnessConfig load_config(const CommonFlags& flags, bool config_required) {
    refinery::HarnessConfig cfg;
    if (!flags.config_path.empty())
        cfg = refinery::HarnessConfig::from_file(flags.config_path);
    else if (config_required)
        throw refinery::ConfigError("--config is required for this command");
    if (flags.seed_set) {
        cfg.seed = flags.seed;
        cfg.sim.seed = flags.seed;
    }
    if (!flags.out_dir.empty()) cfg.out_path = flags.out_dir;
    if (!flags.backend.empty()) cfg.backend = refinery::backend_mode_from_string(flags.backend);
    cfg.resume = flags.resume;
    return cfg;
}

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_backend = true) {
    cmd->add_option("--config", flags.config_path, "harness config file (JSON)");
    cmd->add_option("--out", flags.out_dir, "output directory (overrides paths.out)");
    cmd->add_option("--seed", flags.seed, "seed override")
        ->each([&](const std::string&) { flags.seed_set = true; });
    if (with_backend)
        cmd->add_option("--backend", flags.backend, "backend mode: http|sim|replay")
            ->check(CLI::IsMember({"http", "sim", "replay"}));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"budget-constrained critic-guided iterative image refinement"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string run_a, run_b, compare_out = "compare.csv";

    CLI::App* run = app.add_subcommand("run", "execute the task set under the configured budget");
    add_common(run, flags);
    run->add_flag("--resume", flags.resume, "skip tasks whose journal is already finalized");

    CLI::App* sweep = app.add_subcommand("sweep", "(I,P) budget allocation sweep");
    add_common(sweep, flags);

    CLI::App* compare = app.add_subcommand("compare", "delta report between two run directories");
    compare->add_option("--run-a", run_a, "first run directory")->required();
    compare->add_option("--run-b", run_b, "second run directory")->required();
    compare->add_option("--out", compare_out, "compare CSV path");

    CLI::App* jenga = app.add_subcommand("jenga", "paired scene-decomposition benchmark");
    add_common(jenga, flags, false);

    CLI::App* oracle = app.add_subcommand("oracle", "exact DP solve-rate table");
    add_common(oracle, flags, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return refinery::cmd_run(load_config(flags, true));
        if (sweep->parsed()) return refinery::cmd_sweep(load_config(flags, true));
        if (compare->parsed()) return refinery::cmd_compare(run_a, run_b, compare_out);
        if (jenga->parsed()) return refinery::cmd_jenga(load_config(flags, false));
        if (oracle->parsed()) return refinery::cmd_oracle(load_config(flags, false));
    } catch (const refinery::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const refinery::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
